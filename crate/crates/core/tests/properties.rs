use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ala_core::controller::{apply_action, Action, ControllerObservation, Episode, ReplayMemory};
use ala_core::losses::{self, ClassCorrelation, LossMode, LossParameterization, FOCAL_MAX, FOCAL_MIN};
use ala_core::metrics;
use ala_core::tensor::Matrix;

fn action() -> impl Strategy<Value = f64> {
    prop_oneof![Just(-0.1), Just(0.0), Just(0.1)]
}

proptest! {
    #[test]
    fn phi_stays_symmetric_bounded_unit_diagonal(
        classes in 2usize..9,
        moves in prop::collection::vec((any::<prop::sample::Index>(), action()), 0..300),
    ) {
        let mut phi = LossParameterization::initial(LossMode::ClassCorrelation, classes);
        let n = phi.param_count();
        for (id, a) in moves {
            apply_action(&mut phi, id.index(n), a).unwrap();
        }
        prop_assert!(phi.check().is_ok());
        let m = phi.class_correlation().unwrap();
        for i in 0..classes {
            prop_assert_eq!(m.get(i, i), 1.0);
            for j in 0..classes {
                prop_assert_eq!(m.get(i, j), m.get(j, i));
                prop_assert!((-1.0..=1.0).contains(&m.get(i, j)));
            }
        }
    }

    #[test]
    fn mixture_and_focal_stay_in_bounds(
        moves in prop::collection::vec((0usize..10, action()), 0..300),
    ) {
        let mut mix = LossParameterization::initial(LossMode::DistanceMixture, 4);
        let mut focal = LossParameterization::initial(LossMode::FocalWeighting, 4);
        for (id, a) in moves {
            apply_action(&mut mix, id, a).unwrap();
            apply_action(&mut focal, id % 2, 20.0 * a).unwrap();
        }
        prop_assert!(mix.check().is_ok());
        prop_assert!(focal.check().is_ok());
        for id in 0..2 {
            let s = focal.value(id).unwrap();
            prop_assert!((FOCAL_MIN..=FOCAL_MAX).contains(&s));
        }
    }

    #[test]
    fn identity_loss_is_negative_p_over_one_plus_p(
        logits in prop::collection::vec(-8.0f64..8.0, 2..10),
        label in any::<prop::sample::Index>(),
    ) {
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
        let s: f64 = e.iter().sum();
        let p: Vec<f64> = e.iter().map(|v| v / s).collect();
        let y = label.index(p.len());
        let mut onehot = vec![0.0; p.len()];
        onehot[y] = 1.0;
        let phi = ClassCorrelation::identity(p.len());
        let got = losses::ala_classification_loss(&p, &onehot, &phi).unwrap();
        let q = losses::clamp_prob(p[y]);
        prop_assert!((got + q / (1.0 + q)).abs() < 1e-12);
    }

    #[test]
    fn aucpr_is_a_probability_and_order_invariant(
        items in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 1..40),
    ) {
        let scores: Vec<f64> = items.iter().map(|i| i.0).collect();
        let labels: Vec<bool> = items.iter().map(|i| i.1).collect();
        match metrics::aucpr(&scores, &labels) {
            Ok(ap) => {
                prop_assert!((0.0..=1.0).contains(&ap));
                let shifted: Vec<f64> = scores.iter().map(|s| s * 4.0).collect();
                prop_assert_eq!(metrics::aucpr(&shifted, &labels).unwrap(), ap);
            }
            Err(_) => prop_assert!(labels.iter().all(|&l| !l)),
        }
    }

    #[test]
    fn recall_grows_with_k(
        points in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, 0usize..3), 3..25),
    ) {
        let rows: Vec<Vec<f64>> = points.iter().map(|p| vec![p.0, p.1]).collect();
        let labels: Vec<usize> = points.iter().map(|p| p.2).collect();
        let emb = Matrix::from_rows(&rows).unwrap();
        let mut last = 0.0;
        for k in 1..points.len() {
            let r = metrics::recall_at_k(&emb, &labels, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert!(r >= last);
            last = r;
        }
    }

    #[test]
    fn reward_is_an_antisymmetric_sign(a in -10.0f64..10.0, b in -10.0f64..10.0) {
        let r = metrics::reward(a, b);
        prop_assert!([-1.0, 0.0, 1.0].contains(&r));
        prop_assert_eq!(r, -metrics::reward(b, a));
        prop_assert_eq!(r > 0.0, b < a);
    }

    #[test]
    fn discounted_constant_series_is_geometric(c in 0.0f64..1.0, n in 1usize..30, gamma in 0.0f64..1.0) {
        let got = metrics::discounted_metric(&vec![c; n], gamma).unwrap();
        let want: f64 = (0..n).map(|i| c * gamma.powi(i as i32)).sum();
        prop_assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()));
    }

    #[test]
    fn replay_keeps_the_newest_capacity_episodes(cap in 1usize..20, pushes in 0usize..60, n in 0usize..30) {
        let mut mem = ReplayMemory::new(cap);
        for step in 0..pushes {
            let obs = ControllerObservation(vec![step as f64]);
            let e = Episode::new(obs.clone(), Action::KEEP, 0.0, obs, 0, 0, step).unwrap();
            mem.push(e).unwrap();
        }
        prop_assert_eq!(mem.len(), pushes.min(cap));
        let kept: Vec<usize> = mem.iter().map(|e| e.step).collect();
        prop_assert_eq!(kept, (pushes.saturating_sub(cap)..pushes).collect::<Vec<_>>());
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let sample = mem.sample(n, &mut rng);
        prop_assert_eq!(sample.len(), n.min(mem.len()));
        let mut again = ChaCha8Rng::seed_from_u64(n as u64);
        let steps = |v: &[Episode]| v.iter().map(|e| e.step).collect::<Vec<_>>();
        prop_assert_eq!(steps(&mem.sample(n, &mut again)), steps(&sample));
    }
}
