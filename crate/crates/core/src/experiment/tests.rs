use super::config::preset;
use super::*;

fn quick(name: &str, epochs: usize) -> Experiment {
    let mut e = preset(name).unwrap();
    e.training.max_epochs = epochs;
    e
}

#[test]
fn grid_covers_the_box_corners() {
    let p = Problem::by_name("burgers").unwrap();
    let g = evaluation_grid(&p, 5);
    assert_eq!(g.len(), 25 * 2);
    assert_eq!(&g[..2], &[-1.0, 0.0]);
    assert_eq!(&g[2..4], &[-1.0, 0.25]);
    assert_eq!(&g[48..], &[1.0, 1.0]);
}

#[test]
fn every_preset_builds_a_model() {
    for (name, _) in config::PRESETS {
        let e = preset(name).unwrap();
        let m = build_model(&e).unwrap();
        assert_eq!(
            m.is_composed(),
            e.architecture == Architecture::PiArch,
            "{name}"
        );
    }
}

#[test]
fn references_come_from_closed_forms_or_the_oracle() {
    let p = Problem::by_name("poisson2").unwrap();
    let pts = evaluation_grid(&p, 7);
    let (names, vals) = reference_values(&p, &[], &pts).unwrap().unwrap();
    assert_eq!(names, vec!["w"]);
    for (x, v) in pts.chunks(2).zip(&vals) {
        assert!((v - x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1])).abs() < 1e-16);
    }
    let b = Problem::by_name("burgers").unwrap();
    assert!(reference_values(&b, &[], &evaluation_grid(&b, 3))
        .unwrap()
        .is_none());
    let o = Problem::by_name("ocp_poisson").unwrap();
    let (names, _) = reference_values(&o, &[1.0, 1.0], &evaluation_grid(&o, 3))
        .unwrap()
        .unwrap();
    assert_eq!(names, vec!["y", "u", "z"]);
}

#[test]
fn run_writes_reproducible_artifacts() {
    let e = quick("poisson1_feature", 30);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let out = run(&e, RunOptions::default()).unwrap();
        assert!(!out.diverged());
        write_run(d.path(), &out).unwrap();
    }
    for f in [
        CONFIG_FILE,
        LOSS_FILE,
        PARAMS_FILE,
        PREDICTION_FILE,
        ERROR_FILE,
    ] {
        let a = fs::read(dirs[0].path().join(f)).unwrap();
        let b = fs::read(dirs[1].path().join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let pred = fs::read_to_string(dirs[0].path().join(PREDICTION_FILE)).unwrap();
    assert!(pred.starts_with("x0,x1,w\n0,0,"));
    assert_eq!(pred.lines().count(), 50 * 50 + 1);

    let (exp, model) = load_model(dirs[0].path()).unwrap();
    assert_eq!(exp, e);
    let out = run(&e, RunOptions::default()).unwrap();
    assert_eq!(model.params(), out.model.params());
}

#[test]
fn full_run_needs_full_epochs() {
    let e = quick("poisson1", 1);
    let opts = RunOptions {
        full: true,
        ..RunOptions::default()
    };
    assert!(matches!(run(&e, opts), Err(ExperimentError::NoFullRun)));
}

#[test]
fn report_tabulates_runs_of_one_problem() {
    let base = tempfile::tempdir().unwrap();
    let mut dirs = Vec::new();
    for name in ["poisson1", "poisson1_feature"] {
        let d = base.path().join(name);
        write_run(&d, &run(&quick(name, 20), RunOptions::default()).unwrap()).unwrap();
        dirs.push(d);
    }
    let r = report::report(&dirs, Some(1e-30)).unwrap();
    assert_eq!(r.rows.len(), 2);
    assert!(r
        .rows
        .iter()
        .all(|row| row.epochs_to_tol.is_none() && row.max_error.is_some()));
    assert!(r.rows[0].relation_violation.is_none());
    assert!(r.to_text().contains("not reached"));
    let csv_path = base.path().join("report.csv");
    r.write_csv(&csv_path).unwrap();
    assert_eq!(fs::read_to_string(&csv_path).unwrap().lines().count(), 3);

    let single = report::report(&dirs[..1], Some(10.0)).unwrap();
    assert_eq!(single.rows.len(), 1);
    assert_eq!(single.rows[0].epochs_to_tol, Some(1));

    let other = base.path().join("burgers");
    write_run(
        &other,
        &run(&quick("burgers", 1), RunOptions::default()).unwrap(),
    )
    .unwrap();
    dirs.push(other);
    assert!(matches!(
        report::report(&dirs, None),
        Err(ExperimentError::Report(_))
    ));
}

#[test]
fn ocp_report_compares_relation_and_origin_values() {
    let base = tempfile::tempdir().unwrap();
    let mut dirs = Vec::new();
    for name in ["ocp_poisson", "ocp_poisson_flat"] {
        let mut e = quick(name, 2);
        e.network.hidden = vec![6];
        e.evaluation.grid = 5;
        let d = base.path().join(name);
        write_run(&d, &run(&e, RunOptions::default()).unwrap()).unwrap();
        dirs.push(d);
    }
    let r = report::report(&dirs, None).unwrap();
    assert_eq!(r.rows[0].relation_violation, Some(0.0));
    assert!(r.rows[1].relation_violation.unwrap() > 0.0);
    assert_eq!(r.origin.len(), 18);
    let csv_path = base.path().join("t.csv");
    r.write_csv(&csv_path).unwrap();
    assert!(base.path().join("t_origin.csv").exists());
}
