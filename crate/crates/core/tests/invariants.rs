//! Structural invariants on random instances.

use msro_core::adversarial::{AdversarialConfig, Adversary, CutKind};
use msro_core::bundle::{self, evaluate_f, BundleConfig, Evaluation, StepKind};
use msro_core::lowerbound::optimality_gap;
use msro_core::model::{load_instance, save_instance};
use msro_core::oracle::{random_instance, RandomShape};
use msro_core::transform::{build_two_stage, solve_adr};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn shape(seed: u64) -> RandomShape {
    RandomShape { horizon: 1 + (seed % 3) as usize, max_dim: 2, max_n_u: 3, hard_rows: seed % 3 == 2, compact: seed % 2 == 1 }
}

fn evaluate(adv: &Adversary, x: &[f64]) -> Evaluation {
    evaluate_f(adv, x, &[]).expect("evaluation")
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn instance_json_roundtrip(seed in 0u64..10_000) {
        let inst = random_instance(seed, &shape(seed));
        let text = save_instance(&inst);
        let back = load_instance(&text).expect("reload");
        prop_assert_eq!(&back, &inst);
        prop_assert_eq!(save_instance(&back), text);
    }

    /// Optimality cuts never overestimate F; feasibility cuts are positive
    /// wherever F is undefined.
    #[test]
    fn cuts_are_valid(seed in 0u64..10_000) {
        let inst = random_instance(seed, &shape(seed));
        let Ok(adr) = solve_adr(&inst) else { return Ok(()) };
        let ts = build_two_stage(&inst);
        let adv = Adversary::new(&ts, AdversarialConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = adr.xhat;
        let cuts = match evaluate(&adv, &base) {
            Evaluation::Feasible { cut, .. } => vec![cut],
            Evaluation::Infeasible { .. } => unreachable!("ADR solution outside dom F"),
        };
        let mut pool = cuts;
        let mut points = Vec::new();
        for _ in 0..4 {
            let x: Vec<f64> = base.iter().map(|v| v + rng.gen_range(-0.5..0.5)).collect();
            match evaluate(&adv, &x) {
                Evaluation::Feasible { value, cut } => {
                    points.push((x, Some(value)));
                    pool.push(cut);
                }
                Evaluation::Infeasible { violation, cuts } => {
                    prop_assert!(violation > 0.0);
                    for c in &cuts {
                        prop_assert_eq!(c.kind, CutKind::Feasibility);
                    }
                    prop_assert!(cuts.iter().any(|c| c.eval(&x) > 0.0));
                    points.push((x, None));
                }
            }
        }
        for (x, value) in &points {
            if let Some(f) = value {
                for c in pool.iter().filter(|c| c.kind == CutKind::Optimality) {
                    prop_assert!(c.eval(x) <= f + 1e-6 * (1.0 + f.abs()), "cut {} above F {}", c.eval(x), f);
                }
            }
        }
    }

    /// F is convex on dom F.
    #[test]
    fn midpoint_convexity(seed in 0u64..10_000, lambda in 0.1f64..0.9) {
        let inst = random_instance(seed, &shape(seed));
        let Ok(adr) = solve_adr(&inst) else { return Ok(()) };
        let ts = build_two_stage(&inst);
        let adv = Adversary::new(&ts, AdversarialConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let a = adr.xhat;
        let b: Vec<f64> = a.iter().map(|v| v + rng.gen_range(-0.4..0.4)).collect();
        let (Evaluation::Feasible { value: fa, .. }, Evaluation::Feasible { value: fb, .. }) = (evaluate(&adv, &a), evaluate(&adv, &b)) else {
            return Ok(());
        };
        let m: Vec<f64> = a.iter().zip(&b).map(|(x, y)| lambda * x + (1.0 - lambda) * y).collect();
        let Evaluation::Feasible { value: fm, .. } = evaluate(&adv, &m) else {
            // dom F is convex
            return Err(TestCaseError::fail("midpoint of feasible points left dom F"));
        };
        let chord = lambda * fa + (1.0 - lambda) * fb;
        prop_assert!(fm <= chord + 1e-6 * (1.0 + chord.abs()), "{fm} above chord {chord}");
    }

    #[test]
    fn gap_is_scale_free_and_zero_on_agreement(ub in 0.1f64..1e4, lb in 0.1f64..1e4, k in 0.01f64..100.0) {
        prop_assert_eq!(optimality_gap(ub, ub).unwrap(), 0.0);
        let g = optimality_gap(ub, lb).unwrap();
        prop_assert!((optimality_gap(k * ub, k * lb).unwrap() - g).abs() <= 1e-12 * (1.0 + g.abs()));
        prop_assert!((optimality_gap(lb, ub).unwrap() + g).abs() <= 1e-12);
        prop_assert!(g.abs() < 2.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, ..ProptestConfig::default() })]

    /// t never increases and never drops below t_min; the center value
    /// only moves down; the returned UB is the last center value.
    #[test]
    fn bundle_log_is_monotone(seed in 0u64..10_000) {
        let inst = random_instance(seed, &shape(seed));
        if solve_adr(&inst).is_err() {
            return Ok(());
        }
        let ts = build_two_stage(&inst);
        let cfg = BundleConfig::default();
        let sol = bundle::run(&ts, &cfg).expect("bundle");
        let feasible: Vec<_> = sol.log.iter().filter(|r| r.step != StepKind::Feasibility).collect();
        for w in feasible.windows(2) {
            prop_assert!(w[1].t <= w[0].t + 1e-15);
            prop_assert!(w[1].f_center <= w[0].f_center + 1e-9 * (1.0 + w[0].f_center.abs()));
        }
        for r in &sol.log {
            prop_assert!(r.t >= cfg.t_min * (1.0 - 1e-12));
        }
        prop_assert!(sol.ub <= sol.f_z0 + 1e-9 * (1.0 + sol.f_z0.abs()));
        prop_assert!(sol.serious_delta_sum() >= 0.0);
    }
}
