use apcr::panel::{
    export_panel, fit_and_estimate, gen_panel, ingest_panel, meta_path, reformulation_gap, Assignment, PanelConfig,
};
use apcr::{BoundConfig, Error};

fn cfg() -> PanelConfig {
    PanelConfig { n_units: 40, ..PanelConfig::default() }
}

#[test]
fn export_and_ingest_round_trip_exactly() {
    let ds = gen_panel(&cfg(), 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("panel.csv");
    export_panel(&ds, &path).unwrap();
    let back = ingest_panel(&path).unwrap();
    assert_eq!(back.units, ds.units);
    assert_eq!((back.t_total, back.t_pre, back.num_interventions, back.rank), (ds.t_total, ds.t_pre, ds.num_interventions, ds.rank));

    let again = dir.path().join("again.csv");
    export_panel(&back, &again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    assert_eq!(std::fs::read(meta_path(&path)).unwrap(), std::fs::read(meta_path(&again)).unwrap());
}

#[test]
fn missing_cell_is_malformed() {
    let ds = gen_panel(&cfg(), 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("panel.csv");
    export_panel(&ds, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let trimmed: Vec<&str> = text.lines().enumerate().filter(|(i, _)| *i != 5).map(|(_, l)| l).collect();
    std::fs::write(&path, trimmed.join("\n") + "\n").unwrap();
    assert!(matches!(ingest_panel(&path), Err(Error::Malformed(_))));
}

#[test]
fn ingested_panel_estimates_without_truth() {
    let ds = gen_panel(&cfg(), 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("panel.csv");
    export_panel(&ds, &path).unwrap();
    let back = ingest_panel(&path).unwrap();
    let a = fit_and_estimate(&ds, 39, 0, &BoundConfig::default()).unwrap();
    let b = fit_and_estimate(&back, 39, 0, &BoundConfig::default()).unwrap();
    assert_eq!(a.estimate, b.estimate);
    assert!(b.truth.is_none());
}

#[test]
fn noiseless_panels_are_recovered_exactly() {
    let panel = PanelConfig { sigma: 0.0, ..cfg() };
    let base = BoundConfig {
        rho: 1e-12,
        slope_bound: panel.slope_bound,
        ..BoundConfig::default().with_gaussian_noise(0.0, 0.0)
    };
    for seed in 0..10 {
        let ds = gen_panel(&panel, seed).unwrap();
        assert!(reformulation_gap(&ds).unwrap() <= 1e-8);
        for a in 0..ds.num_interventions {
            let est = fit_and_estimate(&ds, ds.units.len() - 1, a, &base).unwrap();
            assert!((est.estimate - est.truth.unwrap()).abs() <= 1e-6);
        }
    }
}

#[test]
fn adaptive_assignment_covers_every_intervention() {
    let ds = gen_panel(&PanelConfig { assignment: Assignment::AdaptiveGreedy, ..cfg() }, 6).unwrap();
    for a in 0..ds.num_interventions {
        let count = ds.units.iter().filter(|u| u.intervention == a).count();
        assert!(count >= ds.rank, "intervention {a} has {count} units");
    }
    assert!(reformulation_gap(&ds).unwrap() <= 1e-8);
}
