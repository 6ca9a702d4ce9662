use std::sync::Arc;

use proptest::prelude::*;

use brickwall::analysis::window_operator;
use brickwall::numerics::inverse_spd;
use brickwall::sampler::StepLayout;
use brickwall::{
    build_linear_schedule, build_plan, cholesky_factor, ddim_ladder, gp_covariance,
    offset_for_step, solve_spd, BrickConfig, Condition, Denoiser, FrameSequence, GpOracle,
    GpOracleParams, Matrix, NoiseSchedule, SeededRng,
};

fn spd(n: usize, seed: u64) -> Matrix {
    let mut rng = SeededRng::new(seed);
    let b = Matrix::new(n, n, rng.sample_standard_normal(n * n)).unwrap();
    let g = b.matmul(&b.transpose());
    Matrix::from_fn(n, n, |i, j| g[(i, j)] + if i == j { n as f64 } else { 0.0 })
}

fn oracle(rho: f64, window: usize, channels: usize) -> GpOracle {
    GpOracle::new(
        GpOracleParams::new(rho, window, channels).unwrap(),
        Arc::new(NoiseSchedule::default()),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cholesky_reconstructs_spd(n in 1usize..24, seed in any::<u64>()) {
        let a = spd(n, seed);
        let l = cholesky_factor(&a).unwrap();
        for i in 0..n {
            for j in i + 1..n {
                prop_assert_eq!(l[(i, j)], 0.0);
            }
        }
        let diff = l.matmul(&l.transpose()).max_abs_diff(&a);
        prop_assert!(diff <= 1e-10 * a.max_abs(), "diff {}", diff);
    }

    #[test]
    fn solve_agrees_with_inverse(n in 1usize..16, seed in any::<u64>()) {
        let a = spd(n, seed);
        let b = Matrix::new(n, 2, SeededRng::new(seed ^ 1).sample_standard_normal(2 * n)).unwrap();
        let x = solve_spd(&a, &b).unwrap();
        prop_assert!(a.matmul(&x).max_abs_diff(&b) <= 1e-9);
        prop_assert!(inverse_spd(&a).unwrap().matmul(&b).max_abs_diff(&x) <= 1e-9);
    }

    #[test]
    fn linear_schedule_is_decreasing(t in 1usize..2000, lo in 1e-5f64..1e-2, span in 0.0f64..0.05) {
        let s = build_linear_schedule(t, lo, lo + span).unwrap();
        let ab = s.alpha_bars();
        prop_assert_eq!(ab.len(), t + 1);
        prop_assert_eq!(ab[0], 1.0);
        prop_assert!(ab.windows(2).all(|w| w[1] < w[0] && w[1] > 0.0));
    }

    #[test]
    fn ladder_endpoints_and_monotonicity(t in 1usize..10_000, frac in 0.0f64..1.0) {
        let s = 1 + ((t - 1) as f64 * frac) as usize;
        let ladder = ddim_ladder(t, s).unwrap();
        let ts = ladder.timesteps();
        prop_assert_eq!(ts.len(), s + 1);
        prop_assert_eq!(ts[0], t);
        prop_assert_eq!(ts[s], 0);
        prop_assert!(ts.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn offset_recurrence(f in 1usize..128, s_frac in 0.0f64..1.0, k in 0usize..1_000_000) {
        let stride = (s_frac * f as f64) as usize % f;
        let off = offset_for_step(stride, f, k).unwrap();
        prop_assert!(off < f);
        prop_assert_eq!(offset_for_step(stride, f, k + 1).unwrap(), (off + stride) % f);
    }

    #[test]
    fn plans_partition_the_latent(f in 1usize..40, s_frac in 0.0f64..1.0, len in 1usize..300, k in 0usize..500) {
        let stride = (s_frac * f as f64) as usize % f;
        let plan = build_plan(&BrickConfig::new(f, stride, len).unwrap(), k);
        let mut covered = vec![0u8; len];
        for seg in &plan.segments {
            prop_assert!(!seg.is_empty() && seg.len() <= f);
            for i in seg.clone() {
                covered[i] += 1;
            }
        }
        prop_assert!(covered.iter().all(|&c| c == 1));
        prop_assert!(plan.segments.windows(2).all(|w| w[0].end == w[1].start));
    }

    #[test]
    fn zero_stride_plans_never_move(f in 1usize..40, len in 1usize..300, k in 0usize..500) {
        let cfg = BrickConfig::new(f, 0, len).unwrap();
        prop_assert_eq!(build_plan(&cfg, k).segments, build_plan(&cfg, 0).segments);
    }

    #[test]
    fn latent_within_one_window_is_a_single_brick(f in 1usize..40, s_frac in 0.0f64..1.0, k in 0usize..500) {
        let stride = (s_frac * f as f64) as usize % f;
        let len = 1 + k % f;
        let plan = build_plan(&BrickConfig::new(f, stride, len).unwrap(), k);
        prop_assert_eq!(plan.segments.len(), 1);
        prop_assert_eq!(&plan.segments[0], &(0..len));
        let layout = StepLayout::from_plan(&plan, f).unwrap();
        prop_assert_eq!(layout.windows.len(), 1);
        prop_assert_eq!(&layout.windows[0].input, &(0..len));
        prop_assert_eq!(&layout.windows[0].keep, &(0..len));
    }

    #[test]
    fn oracle_is_linear(n in 1usize..16, rho in 0.0f64..0.99, t in 1usize..=1000, a in -3.0f64..3.0, seed in any::<u64>()) {
        let den = oracle(rho, 16, 1);
        let cond = Condition::default();
        let mut rng = SeededRng::new(seed);
        let x = FrameSequence::new(n, 1, rng.sample_standard_normal(n)).unwrap();
        let y = FrameSequence::new(n, 1, rng.sample_standard_normal(n)).unwrap();
        let combo: Vec<f64> = x.values().iter().zip(y.values()).map(|(u, v)| a * u + v).collect();
        let lhs = den.predict(&FrameSequence::new(n, 1, combo).unwrap(), t, &cond).unwrap();
        let px = den.predict(&x, t, &cond).unwrap();
        let py = den.predict(&y, t, &cond).unwrap();
        for i in 0..n {
            let rhs = a * px.values()[i] + py.values()[i];
            prop_assert!((lhs.values()[i] - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
        }
        let t_prev = t - 1;
        let schedule = NoiseSchedule::default();
        prop_assert!(window_operator(n, &den, &cond, t, t_prev, &schedule).is_ok());
    }

    #[test]
    fn channels_are_denoised_independently(n in 1usize..16, d in 1usize..6, rho in 0.0f64..0.99, t in 1usize..=1000, seed in any::<u64>()) {
        let den = oracle(rho, 16, d);
        let cond = Condition::default();
        let z = FrameSequence::new(n, d, SeededRng::new(seed).sample_standard_normal(n * d)).unwrap();
        let joint = den.predict(&z, t, &cond).unwrap();
        for c in 0..d {
            let alone = den.predict(&FrameSequence::new(n, 1, z.channel(c)).unwrap(), t, &cond).unwrap();
            prop_assert_eq!(joint.channel(c), alone.into_values());
        }
    }

    #[test]
    fn prior_marginals_are_nested(n in 1usize..40, m_frac in 0.0f64..1.0, rho in 0.0f64..0.999) {
        let m = 1 + ((n - 1) as f64 * m_frac) as usize;
        let big = gp_covariance(n, rho).unwrap();
        let small = gp_covariance(m, rho).unwrap();
        for start in 0..=n - m {
            prop_assert_eq!(big.block(start..start + m, start..start + m), small.clone());
        }
    }
}
