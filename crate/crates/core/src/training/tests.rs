use super::*;
use crate::data::{GridCell, ManeuverClass, Neighbor};
use rand::Rng;

fn samples(cfg: &ModelConfig, n: usize, seed: u64) -> Vec<TrajectorySample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let v = rng.random_range(0.8..1.6);
            let lat = rng.random_range(-0.1..0.1);
            let line = |k: f64| Point::new(lat * k, v * k);
            let neighbors = if i % 2 == 0 {
                vec![Neighbor {
                    cell: GridCell { row: 8, col: 0 },
                    vehicle_id: 100 + i as i64,
                    history: (0..=cfg.t_h)
                        .map(|k| Point::new(-3.6, 9.2 + v * (k as f64 - cfg.t_h as f64)))
                        .collect(),
                }]
            } else {
                vec![]
            };
            TrajectorySample {
                sample_id: i,
                vehicle_id: i as i64,
                frame: 0,
                target_history: (0..=cfg.t_h).map(|k| line(k as f64 - cfg.t_h as f64)).collect(),
                neighbors,
                future_truth: (1..=cfg.t_f).map(|k| line(k as f64)).collect(),
                true_maneuver: ManeuverClass::ALL[i % 6],
            }
        })
        .collect()
}

#[test]
fn standard_normal_at_mean_is_log_two_pi() {
    let step = GaussianStep {
        m_x: 0.0,
        m_y: 0.0,
        s_x: 1.0,
        s_y: 1.0,
        r: 0.0,
    };
    let v = bivariate_nll(&step, Point::new(0.0, 0.0)).unwrap();
    assert!((v - (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
    for bad in [
        GaussianStep { s_x: 0.0, ..step },
        GaussianStep { s_y: -1.0, ..step },
        GaussianStep { r: 1.0, ..step },
        GaussianStep { r: -1.5, ..step },
    ] {
        assert!(matches!(
            bivariate_nll(&bad, Point::new(0.0, 0.0)),
            Err(TrainError::Domain(_))
        ));
    }
}

#[test]
fn graph_loss_equals_sample_loss() {
    let cfg = ModelConfig::tiny();
    let data = samples(&cfg, 7, 1);
    for variant in [Variant::WithManeuvers, Variant::WithoutManeuvers] {
        let l = BaseLearner::init(1, variant, cfg.clone(), 2).unwrap();
        let refs: Vec<&TrajectorySample> = data.iter().collect();
        let graph = mean_loss(&l, &refs).unwrap();
        let direct: f64 = data
            .iter()
            .map(|s| sample_loss(&l.forward(s).unwrap(), s).unwrap())
            .sum::<f64>()
            / data.len() as f64;
        assert!(
            (graph - direct).abs() < 1e-9 * direct.abs().max(1.0),
            "{graph} vs {direct}"
        );
    }
}

#[test]
fn maneuver_term_uses_floored_log() {
    let cfg = ModelConfig::tiny();
    let data = samples(&cfg, 1, 3);
    let l = BaseLearner::init(1, Variant::WithManeuvers, cfg, 2).unwrap();
    let mut pred = l.forward(&data[0]).unwrap();
    let base = sample_loss(&pred, &data[0]).unwrap() + pred.maneuver_probs.prob(data[0].true_maneuver).ln();
    pred.maneuver_probs.p = [0.0; 6];
    pred.maneuver_probs.p[(data[0].true_maneuver.slot() + 1) % 6] = 1.0;
    let floored = sample_loss(&pred, &data[0]).unwrap();
    assert!((floored - base - 1e-12f64.ln().abs()).abs() < 1e-6);
}

#[test]
fn full_model_gradient_matches_finite_differences() {
    let cfg = ModelConfig::tiny();
    let data = samples(&cfg, 3, 4);
    let refs: Vec<&TrajectorySample> = data.iter().collect();
    let mut l = BaseLearner::init(1, Variant::WithManeuvers, cfg, 5).unwrap();
    let (_, grads) = loss_and_gradients(&l, &refs).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = 1e-6;
    for _ in 0..40 {
        let ti = rng.random_range(0..grads.len());
        let k = rng.random_range(0..grads[ti].len());
        let orig = l.weights.tensors()[ti].data()[k];
        l.weights.tensors_mut()[ti].data_mut()[k] = orig + h;
        let up = mean_loss(&l, &refs).unwrap();
        l.weights.tensors_mut()[ti].data_mut()[k] = orig - h;
        let down = mean_loss(&l, &refs).unwrap();
        l.weights.tensors_mut()[ti].data_mut()[k] = orig;
        let numeric = (up - down) / (2.0 * h);
        let analytic = grads[ti][k];
        let err = (numeric - analytic).abs() / (numeric.abs() + analytic.abs()).max(1e-8);
        assert!(
            err < 1e-4 || (numeric - analytic).abs() < 1e-8,
            "tensor {ti}[{k}]: {analytic} vs {numeric}"
        );
    }
}

#[test]
fn training_lowers_loss_and_is_deterministic() {
    let cfg = ModelConfig::tiny();
    let data = samples(&cfg, 48, 7);
    let refs: Vec<&TrajectorySample> = data.iter().collect();
    let tc = TrainConfig {
        learning_rate: 0.01,
        epochs: 15,
        batch_size: 16,
        grad_clip: Some(10.0),
    };
    let (a, ra) = train_base_learner(3, Variant::WithManeuvers, &cfg, &tc, &refs, 99).unwrap();
    let (b, rb) = train_base_learner(3, Variant::WithManeuvers, &cfg, &tc, &refs, 99).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra.epoch_losses, rb.epoch_losses);
    assert_eq!(ra.checksum, a.checksum());
    assert_eq!(ra.optimizer_steps, 15 * 3);
    assert!(
        ra.epoch_losses.last().unwrap() < &(0.8 * ra.epoch_losses[0]),
        "{:?}",
        ra.epoch_losses
    );
    let init = BaseLearner::init(3, Variant::WithManeuvers, cfg, derive_seed(99, 0)).unwrap();
    assert!(mean_loss(&a, &refs).unwrap() < mean_loss(&init, &refs).unwrap());
}

#[test]
fn non_finite_batch_aborts_with_location() {
    let cfg = ModelConfig::tiny();
    let mut data = samples(&cfg, 8, 8);
    for s in &mut data {
        s.future_truth[0].x = f64::NAN;
    }
    let refs: Vec<&TrajectorySample> = data.iter().collect();
    let tc = TrainConfig {
        batch_size: 4,
        ..TrainConfig::default()
    };
    let err = train_base_learner(2, Variant::WithManeuvers, &cfg, &tc, &refs, 1).unwrap_err();
    assert!(
        matches!(
            err,
            TrainError::NonFinite {
                index: 2,
                epoch: 0,
                batch: 0,
                ..
            }
        ),
        "{err}"
    );
}

#[test]
fn empty_set_is_rejected() {
    let cfg = ModelConfig::tiny();
    let err = train_base_learner(1, Variant::WithManeuvers, &cfg, &TrainConfig::default(), &[], 1);
    assert!(matches!(err, Err(TrainError::Precondition(_))));
}

#[test]
fn fleet_reports_partial_failures() {
    let cfg = ModelConfig::tiny();
    let data = samples(&cfg, 12, 9);
    let tc = TrainConfig {
        epochs: 1,
        batch_size: 6,
        ..TrainConfig::default()
    };
    let sets = vec![
        BootstrapSet {
            index: 1,
            sample_ids: vec![0, 1, 2, 2],
            rng_seed: 0,
        },
        BootstrapSet {
            index: 2,
            sample_ids: vec![3, 999],
            rng_seed: 0,
        },
        BootstrapSet {
            index: 3,
            sample_ids: vec![4, 5],
            rng_seed: 0,
        },
    ];
    let done = std::sync::Mutex::new(Vec::new());
    let err = train_fleet(&sets, &data, Variant::WithManeuvers, &cfg, &tc, 5, 2, &|l, _| {
        done.lock().unwrap().push(l.index)
    })
    .unwrap_err();
    match err {
        TrainError::Partial { completed, failed } => {
            assert_eq!(completed, vec![1, 3]);
            assert_eq!(failed.len(), 1);
            assert_eq!(failed[0].0, 2);
        }
        other => panic!("{other}"),
    }
    let mut done = done.into_inner().unwrap();
    done.sort_unstable();
    assert_eq!(done, vec![1, 3]);

    // Same seed gives the same learners regardless of worker count.
    let ok = &sets[..1];
    let a = train_fleet(ok, &data, Variant::WithManeuvers, &cfg, &tc, 5, 1, &|_, _| {}).unwrap();
    let b = train_fleet(ok, &data, Variant::WithManeuvers, &cfg, &tc, 5, 3, &|_, _| {}).unwrap();
    assert_eq!(a[0].0, b[0].0);
}
