//! Criteria 5–11: seeded desk-scale experiments.

use std::cell::RefCell;
use std::time::Duration;

use ala_core::cli::analyze_surface;
use ala_core::controller::PolicyNetwork;
use ala_core::data::{DatasetKind, DatasetSpec};
use ala_core::harness::{GridConfig, SurfaceGrid};
use ala_core::losses::LossMode;
use ala_core::metrics::{MetricKind, RewardSource};
use ala_core::network::Network;
use ala_core::orchestrator::{
    load_dataset, run_baseline, run_training, run_with_driver, BaselineMode, Driver, FixedLoss, RunOutcome, Task,
    TrainRunConfig,
};

pub type Check<'a> = Box<dyn FnOnce() -> (bool, String) + 'a>;

const SEEDS: u64 = 10;

/// Runs shared between criteria: 8 reuses the policies of 5, 10 its models,
/// 11 every invariant log.
#[derive(Default)]
struct Shared {
    policies: Vec<PolicyNetwork>,
    ala_models: Vec<Vec<Network>>,
    fixed_models: Vec<Vec<Network>>,
    /// (run label, clean, detail).
    checks: Vec<(String, bool, String)>,
    /// (experiment, rerun identical).
    reruns: Vec<(String, bool)>,
}

fn classification(seed: u64) -> TrainRunConfig {
    TrainRunConfig {
        seed,
        ..TrainRunConfig::default()
    }
}

fn twelve_class(seed: u64) -> TrainRunConfig {
    let mut c = classification(seed);
    c.data = DatasetSpec {
        classes: 12,
        n_train: 1200,
        n_val: 600,
        n_test: 1200,
        ..DatasetSpec::default()
    };
    c
}

fn imbalanced(seed: u64) -> TrainRunConfig {
    TrainRunConfig {
        seed,
        data: DatasetSpec {
            kind: DatasetKind::ImbalancedBinary,
            classes: 2,
            imbalance_ratio: 9.0,
            spread: 3.0,
            overlap: 0.0,
            ..DatasetSpec::default()
        },
        metric: MetricKind::Aucpr,
        ..TrainRunConfig::default()
    }
}

fn embedding(seed: u64) -> TrainRunConfig {
    TrainRunConfig {
        seed,
        task: Task::MetricLearning,
        loss_mode: LossMode::DistanceMixture,
        data: DatasetSpec {
            kind: DatasetKind::EmbeddingClusters,
            n_train: 400,
            n_val: 200,
            n_test: 400,
            spread: 3.0,
            overlap: 0.0,
            ..DatasetSpec::default()
        },
        metric: MetricKind::RecallAtK { k: 1 },
        embedding_dim: 8,
        ..TrainRunConfig::default()
    }
}

fn with_fixed(mut c: TrainRunConfig, f: FixedLoss) -> TrainRunConfig {
    c.fixed_loss = f;
    c
}

fn parameter_count(c: &TrainRunConfig) -> usize {
    match c.loss_mode {
        LossMode::ClassCorrelation => c.data.classes * (c.data.classes - 1) / 2,
        LossMode::DistanceMixture => 10,
        LossMode::FocalWeighting => 2,
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation over `sqrt(n)`.
fn std_error(v: &[f64]) -> f64 {
    let m = mean(v);
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (var / v.len() as f64).sqrt()
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn record(shared: &RefCell<Shared>, label: String, cfg: &TrainRunConfig, o: &RunOutcome) {
    let c = &o.report.checks;
    let expected = cfg.children * parameter_count(cfg);
    let clean = c.is_clean() && c.expected_episodes == expected && c.episode_counts.len() == cfg.steps;
    let detail = format!(
        "{} violations, episodes {:?} vs {expected}",
        c.violations.len(),
        c.episode_counts.first()
    );
    shared.borrow_mut().checks.push((label, clean, detail));
}

fn identical(a: &RunOutcome, b: &RunOutcome) -> bool {
    a.report == b.report && a.policy == b.policy && a.children == b.children
}

fn fmt(v: &[f64]) -> String {
    format!("{:.4} ± {:.4}", mean(v), std_error(v))
}

fn criterion_5(shared: &RefCell<Shared>) -> (bool, String) {
    let (mut ala, mut ce, mut rnd, mut id) = (vec![], vec![], vec![], vec![]);
    for seed in 0..SEEDS {
        let cfg = classification(seed);
        let a = run_training(&cfg).unwrap();
        let ce_cfg = with_fixed(cfg.clone(), FixedLoss::Reference);
        let f = run_baseline(&ce_cfg, BaselineMode::Fixed).unwrap();
        let r = run_baseline(&cfg, BaselineMode::RandomPhi).unwrap();
        let i = run_baseline(&cfg, BaselineMode::Fixed).unwrap();
        record(shared, format!("c5 ala seed {seed}"), &cfg, &a);
        record(shared, format!("c5 cross-entropy seed {seed}"), &ce_cfg, &f);
        record(shared, format!("c5 random-phi seed {seed}"), &cfg, &r);
        record(shared, format!("c5 identity-phi seed {seed}"), &cfg, &i);
        if seed == 0 {
            let again = run_training(&cfg).unwrap();
            shared.borrow_mut().reruns.push(("c5 ala".into(), identical(&a, &again)));
        }
        ala.push(a.report.final_test_metric().0);
        ce.push(f.report.final_test_metric().0);
        rnd.push(r.report.final_test_metric().0);
        id.push(i.report.final_test_metric().0);
        let mut s = shared.borrow_mut();
        s.policies.push(a.policy.unwrap());
        s.ala_models.push(a.children);
        s.fixed_models.push(f.children);
    }
    let gap: Vec<f64> = ce.iter().zip(&ala).map(|(c, a)| c - a).collect();
    let (margin, se) = (mean(&gap), std_error(&gap));
    let pass = mean(&ala) <= mean(&ce) && mean(&ce) <= mean(&rnd) && margin > se;
    let detail = format!(
        "test error ALA {}, cross-entropy {}, random-Φ {}, Φ=I {}; margin {margin:.4} vs paired SE {se:.4}",
        fmt(&ala),
        fmt(&ce),
        fmt(&rnd),
        fmt(&id)
    );
    (pass, detail)
}

fn criterion_6(shared: &RefCell<Shared>) -> (bool, String) {
    let (mut ala, mut ce) = (vec![], vec![]);
    for seed in 0..SEEDS {
        let cfg = imbalanced(seed);
        let a = run_training(&cfg).unwrap();
        let ce_cfg = with_fixed(cfg.clone(), FixedLoss::Reference);
        let f = run_baseline(&ce_cfg, BaselineMode::Fixed).unwrap();
        record(shared, format!("c6 ala seed {seed}"), &cfg, &a);
        record(shared, format!("c6 cross-entropy seed {seed}"), &ce_cfg, &f);
        if seed == 0 {
            let again = run_training(&cfg).unwrap();
            shared.borrow_mut().reruns.push(("c6 ala".into(), identical(&a, &again)));
        }
        ala.push(a.report.final_test_metric().0);
        ce.push(f.report.final_test_metric().0);
    }
    let pass = mean(&ala) >= mean(&ce);
    (pass, format!("test AUCPR ALA {}, cross-entropy {}", fmt(&ala), fmt(&ce)))
}

fn criterion_7(shared: &RefCell<Shared>) -> (bool, String) {
    let (mut ala, mut tri) = (vec![], vec![]);
    let mut bit_exact = false;
    for seed in 0..SEEDS {
        let cfg = embedding(seed);
        let a = run_training(&cfg).unwrap();
        let tri_cfg = with_fixed(cfg.clone(), FixedLoss::Reference);
        let f = run_baseline(&tri_cfg, BaselineMode::Fixed).unwrap();
        record(shared, format!("c7 ala seed {seed}"), &cfg, &a);
        record(shared, format!("c7 triplet seed {seed}"), &tri_cfg, &f);
        if seed == 0 {
            let again = run_training(&cfg).unwrap();
            shared.borrow_mut().reruns.push(("c7 ala".into(), identical(&a, &again)));
            let frozen = run_baseline(&cfg, BaselineMode::Fixed).unwrap();
            let plain_cfg = with_fixed(cfg.clone(), FixedLoss::DefaultDistance);
            let plain = run_baseline(&plain_cfg, BaselineMode::Fixed).unwrap();
            record(shared, "c7 frozen mixture".into(), &cfg, &frozen);
            bit_exact = frozen.children == plain.children && frozen.report.records == plain.report.records;
        }
        ala.push(a.report.final_test_metric().0);
        tri.push(f.report.final_test_metric().0);
    }
    let pass = mean(&ala) >= mean(&tri) && bit_exact;
    let detail = format!(
        "test recall@1 ALA {}, triplet {}; frozen mixture bit-exact with default distance: {bit_exact}",
        fmt(&ala),
        fmt(&tri)
    );
    (pass, detail)
}

fn criterion_8(shared: &RefCell<Shared>) -> (bool, String) {
    let (mut ala, mut fixed) = (vec![], vec![]);
    for seed in 0..SEEDS {
        let source = match shared.borrow().policies.get(seed as usize) {
            Some(p) => p.clone(),
            None => run_training(&classification(seed)).unwrap().policy.unwrap(),
        };
        let cfg = twelve_class(seed);
        let data = load_dataset(&cfg).unwrap();
        let frozen = |p: &PolicyNetwork| {
            run_with_driver(
                &cfg,
                &data,
                Driver::Policy {
                    policy: Box::new(p.clone()),
                    learn: false,
                },
            )
            .unwrap()
        };
        let a = frozen(&source);
        let f = run_with_driver(&cfg, &data, Driver::Baseline(BaselineMode::Fixed)).unwrap();
        record(shared, format!("c8 transfer seed {seed}"), &cfg, &a);
        record(shared, format!("c8 fixed seed {seed}"), &cfg, &f);
        if seed == 0 {
            let again = frozen(&source);
            shared.borrow_mut().reruns.push(("c8 transfer".into(), identical(&a, &again)));
        }
        ala.push(a.report.final_test_metric().0);
        fixed.push(f.report.final_test_metric().0);
    }
    let pass = mean(&ala) <= mean(&fixed);
    (pass, format!("12-class test error frozen 8-class policy {}, fixed {}", fmt(&ala), fmt(&fixed)))
}

fn criterion_9(shared: &RefCell<Shared>) -> (bool, String) {
    let (mut val, mut train) = (vec![], vec![]);
    for seed in 0..SEEDS {
        let mut cfg = classification(seed);
        cfg.data.label_noise = 0.1;
        let v = run_training(&cfg).unwrap();
        let mut train_cfg = cfg.clone();
        train_cfg.reward = RewardSource::TrainMetric;
        let t = run_training(&train_cfg).unwrap();
        record(shared, format!("c9 val-metric seed {seed}"), &cfg, &v);
        record(shared, format!("c9 train-metric seed {seed}"), &train_cfg, &t);
        if seed == 0 {
            let again = run_training(&train_cfg).unwrap();
            shared.borrow_mut().reruns.push(("c9 train-metric".into(), identical(&t, &again)));
        }
        val.push(v.report.final_test_metric().0);
        train.push(t.report.final_test_metric().0);
    }
    let pass = mean(&val) <= mean(&train);
    (pass, format!("noisy-label test error val-metric reward {}, train-metric reward {}", fmt(&val), fmt(&train)))
}

fn criterion_10(shared: &RefCell<Shared>) -> (bool, String) {
    let g = GridConfig::default();
    let quad = SurfaceGrid::from_fn(g, |x, y| Ok(x * x + y * y)).unwrap();
    let n = g.resolution;
    let mut expected = 0.0;
    for iy in 1..n - 1 {
        for ix in 1..n - 1 {
            let (x, y) = (g.coord(ix), g.coord(iy));
            expected += 4.0 / (1.0 + 4.0 * x * x + 4.0 * y * y).powi(2);
        }
    }
    expected /= ((n - 2) * (n - 2)) as f64;
    let quad_err = (quad.mean_curvature - expected).abs() / expected;
    let plane = SurfaceGrid::from_fn(g, |x, y| Ok(0.7 * x - 1.3 * y + 2.0)).unwrap();
    let flat = plane.curvature.iter().all(|&k| k == 0.0);

    let s = shared.borrow();
    let per_seed = |models: &[Vec<Network>]| -> Vec<f64> {
        models
            .iter()
            .enumerate()
            .map(|(seed, children)| {
                let cfg = classification(seed as u64);
                let k: Vec<f64> = children
                    .iter()
                    .map(|net| analyze_surface(&cfg, net, g).unwrap().mean_curvature)
                    .collect();
                mean(&k)
            })
            .collect()
    };
    let (ala, fixed) = (per_seed(&s.ala_models), per_seed(&s.fixed_models));
    if ala.is_empty() {
        return (false, "no trained models from criterion 5".into());
    }
    let (ma, mf) = (median(&ala), median(&fixed));
    let pass = quad_err < 0.05 && flat && ma <= mf;
    let detail = format!(
        "quadratic relative error {quad_err:.2e}, affine exactly flat: {flat}; median curvature ALA {ma:.4e}, cross-entropy {mf:.4e}"
    );
    (pass, detail)
}

fn criterion_11(shared: &RefCell<Shared>) -> (bool, String) {
    let s = shared.borrow();
    let dirty: Vec<String> = s
        .checks
        .iter()
        .filter(|(_, clean, _)| !clean)
        .map(|(l, _, d)| format!("{l} ({d})"))
        .collect();
    let differ: Vec<&str> = s.reruns.iter().filter(|(_, same)| !same).map(|(l, _)| l.as_str()).collect();
    let pass = !s.checks.is_empty() && s.reruns.len() == 5 && dirty.is_empty() && differ.is_empty();
    let mut detail = format!(
        "{} runs checked, {} dirty; {} reruns, {} differ",
        s.checks.len(),
        dirty.len(),
        s.reruns.len(),
        differ.len()
    );
    if !dirty.is_empty() || !differ.is_empty() {
        detail.push_str(&format!(": {:?} {:?}", dirty, differ));
    }
    (pass, detail)
}

pub fn run_all(mut report: impl FnMut(usize, &str, Option<Duration>, Check) -> bool) -> Vec<bool> {
    let shared = RefCell::new(Shared::default());
    let sh = &shared;
    let minutes = |m: u64| Some(Duration::from_secs(60 * m));
    vec![
        report(5, "classification direction", minutes(10), Box::new(move || criterion_5(sh))),
        report(6, "AUCPR reward direction", minutes(5), Box::new(move || criterion_6(sh))),
        report(7, "metric learning direction", minutes(10), Box::new(move || criterion_7(sh))),
        report(8, "8 to 12 class transfer", minutes(10), Box::new(move || criterion_8(sh))),
        report(9, "reward source ablation", None, Box::new(move || criterion_9(sh))),
        report(10, "loss surface curvature", None, Box::new(move || criterion_10(sh))),
        report(11, "invariant sweep", None, Box::new(move || criterion_11(sh))),
    ]
}
