use ala_core::harness::{export_curves, summarize, GridConfig, SurfaceGrid};
use ala_core::losses::pairs_for;
use ala_core::orchestrator::{read_csv, InvariantLog, PhiRecord, RunReport, StepRecord, TrainRunConfig};
use ala_core::AlaError;

fn synthetic(seed: u64, steps: usize, children: usize) -> RunReport {
    let mut records = Vec::new();
    let mut phi = Vec::new();
    for step in 0..steps {
        for child in 0..children {
            let x = (seed as f64 + 1.0) * 0.1 + step as f64 * 0.01 + child as f64 * 0.001;
            records.push(StepRecord {
                seed,
                step,
                child,
                train_loss: 1.0 / (1.0 + x),
                val_loss: 1.1 / (1.0 + x),
                val_metric: x.fract(),
                test_metric: (0.3 * x).fract(),
                reward: (step > 0).then(|| [-1.0, 0.0, 1.0][(step + child) % 3]),
            });
            for (id, _) in pairs_for(8).into_iter().enumerate() {
                phi.push(PhiRecord {
                    seed,
                    child,
                    step,
                    parameter_id: id,
                    value: if step == 0 { 0.0 } else { 0.1 * ((id + step) % 3) as f64 - 0.1 },
                });
            }
        }
    }
    RunReport {
        mode: "ala".into(),
        config: TrainRunConfig {
            seed,
            ..TrainRunConfig::default()
        },
        records,
        phi,
        checks: InvariantLog::default(),
        reinit_events: 0,
    }
}

#[test]
fn report_round_trips_through_csv() {
    let dir = tempfile::tempdir().unwrap();
    let r = synthetic(3, 6, 2);
    r.write(dir.path()).unwrap();
    assert_eq!(RunReport::read(dir.path()).unwrap(), r);
}

#[test]
fn ten_seeds_fifty_steps_give_500_and_50_rows() {
    let reports: Vec<RunReport> = (0..10).map(|s| synthetic(s, 50, 2)).collect();
    let dir = tempfile::tempdir().unwrap();
    let e = export_curves(&reports, dir.path()).unwrap();
    assert_eq!(e.detail.len(), 500);
    assert_eq!(e.summary.len(), 50);
    assert!(e.summary.iter().all(|r| r.runs == 10));
    let curves = std::fs::read_to_string(dir.path().join("curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 500);
    assert!(curves.starts_with("step,seed,train_loss,val_loss,val_metric,test_metric,reward"));
    let summary: Vec<ala_core::harness::SummaryRow> = read_csv(&dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary, e.summary);
}

#[test]
fn single_report_has_zero_spread() {
    let e = summarize(&[synthetic(0, 5, 3)]).unwrap();
    for r in &e.summary {
        assert_eq!(
            [r.train_loss_std, r.val_loss_std, r.val_metric_std, r.test_metric_std],
            [0.0; 4]
        );
        assert!(r.reward_std.map_or(true, |s| s == 0.0));
    }
    assert_eq!(e.summary[0].reward_mean, None);
}

#[test]
fn eight_class_phi_export_has_28_ids_per_step() {
    let e = summarize(&[synthetic(0, 4, 1)]).unwrap();
    for step in 0..4 {
        let mut ids: Vec<usize> = e.phi.iter().filter(|p| p.step == step).map(|p| p.parameter_id).collect();
        ids.dedup();
        assert_eq!(ids, (0..28).collect::<Vec<_>>());
    }
}

#[test]
fn empty_export_is_a_usage_error() {
    assert!(matches!(summarize(&[]), Err(AlaError::Usage(_))));
}

#[test]
fn unwritable_export_path_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let err = export_curves(&[synthetic(0, 2, 1)], &blocker.join("sub")).unwrap_err();
    assert!(matches!(err, AlaError::Io { .. }), "{err:?}");
}

/// Largest interior deviation from the analytic curvature of `f`.
fn max_curvature_error(
    resolution: usize,
    f: fn(f64, f64) -> f64,
    exact: fn(f64, f64) -> f64,
) -> f64 {
    let g = GridConfig {
        resolution,
        extent: 1.0,
    };
    let s = SurfaceGrid::from_fn(g, |x, y| Ok(f(x, y))).unwrap();
    let n = resolution;
    let mut worst: f64 = 0.0;
    let mut idx = 0;
    for iy in 1..n - 1 {
        for ix in 1..n - 1 {
            worst = worst.max((s.curvature[idx] - exact(g.coord(ix), g.coord(iy))).abs());
            idx += 1;
        }
    }
    worst
}

fn quadratic_curvature(x: f64, y: f64) -> f64 {
    4.0 / (1.0 + 4.0 * x * x + 4.0 * y * y).powi(2)
}

/// Curvature of `sin x · cos y`.
fn wave_curvature(x: f64, y: f64) -> f64 {
    let (lx, ly) = (x.cos() * y.cos(), -x.sin() * y.sin());
    let (lxx, lyy, lxy) = (-x.sin() * y.cos(), -x.sin() * y.cos(), -x.cos() * y.sin());
    (lxx * lyy - lxy * lxy) / (1.0 + lx * lx + ly * ly).powi(2)
}

#[test]
fn quadratic_curvature_is_exact_up_to_rounding() {
    for n in [21, 41] {
        assert!(max_curvature_error(n, |x, y| x * x + y * y, quadratic_curvature) < 1e-12);
    }
}

#[test]
fn grid_refinement_halves_curvature_error() {
    let wave = |x: f64, y: f64| x.sin() * y.cos();
    let coarse = max_curvature_error(21, wave, wave_curvature);
    let fine = max_curvature_error(41, wave, wave_curvature);
    assert!(coarse > 1e-6, "{coarse:.3e}");
    assert!(fine <= 0.5 * coarse, "21: {coarse:.3e}, 41: {fine:.3e}");
}

#[test]
fn affine_surfaces_are_exactly_flat() {
    for (a, b, c) in [(3.0, 2.0, 0.0), (-0.7, 1.9, 5.5), (1e3, -2e-3, 0.1)] {
        let s = SurfaceGrid::from_fn(GridConfig::default(), |x, y| Ok(a * x + b * y + c)).unwrap();
        assert!(s.curvature.iter().all(|&k| k == 0.0), "{a} {b} {c}");
    }
}
