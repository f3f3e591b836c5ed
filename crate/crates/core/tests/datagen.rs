use steerank_core::config::{DataConfig, RunConfig};
use steerank_core::data::{read_jsonl, write_jsonl, Item};
use steerank_core::datagen::{generate_catalog, generate_dataset, generate_logs, ClickModel, World};

fn small() -> DataConfig {
    DataConfig {
        n_items: 2_000,
        n_users: 300,
        m: 12,
        n: 5,
        ..DataConfig::default()
    }
}

#[test]
fn no_cold_items_at_zero_fraction() {
    let cfg = DataConfig {
        cold_fraction: 0.0,
        ..small()
    };
    assert!(generate_catalog(&cfg, 1).unwrap().iter().all(|i| !i.cold));
}

#[test]
fn cold_share_of_a_large_catalog_is_near_the_setting() {
    let cfg = DataConfig {
        n_items: 10_000,
        cold_fraction: 0.2,
        ..small()
    };
    for seed in [1, 2, 3] {
        let cold = generate_catalog(&cfg, seed).unwrap().iter().filter(|i| i.cold).count();
        eprintln!("seed {seed}: {cold} cold items");
        assert!((1900..=2100).contains(&cold), "seed {seed}: {cold}");
    }
}

#[test]
fn catalog_and_logs_are_seed_deterministic() {
    let cfg = small();
    let a = generate_catalog(&cfg, 7).unwrap();
    assert_eq!(a, generate_catalog(&cfg, 7).unwrap());
    assert_ne!(a, generate_catalog(&cfg, 8).unwrap());
    let world = World::generate(&cfg, 7).unwrap();
    let model = ClickModel::from(&cfg.click);
    let long = generate_logs(&world, &model, &cfg, 40, 7, 3).unwrap();
    assert_eq!(long, generate_logs(&world, &model, &cfg, 40, 7, 3).unwrap());
    // sample k does not depend on how many follow it
    assert_eq!(&long[..10], &generate_logs(&world, &model, &cfg, 10, 7, 3).unwrap()[..]);
    assert_ne!(long, generate_logs(&world, &model, &cfg, 40, 7, 4).unwrap());
}

#[test]
fn logged_samples_are_well_formed() {
    let cfg = small();
    let world = World::generate(&cfg, 2).unwrap();
    let model = ClickModel::from(&cfg.click);
    let logs = generate_logs(&world, &model, &cfg, 500, 2, 3).unwrap();
    for s in &logs {
        s.validate().unwrap();
        assert_eq!(s.candidates.len(), cfg.m);
        assert_eq!(s.exposure.len(), cfg.n);
        assert!(s.engagement.iter().all(|e| e[0] == 1 && e[1] <= 1));
        assert!(s.candidates.windows(2).all(|w| w[0].id < w[1].id));
    }
    let clicks: usize = logs.iter().flat_map(|s| &s.engagement).map(|e| e[1] as usize).sum();
    assert!(clicks > 0);
}

#[test]
fn empty_and_invalid_sizes() {
    let cfg = small();
    let world = World::generate(&cfg, 1).unwrap();
    let model = ClickModel::from(&cfg.click);
    assert!(generate_logs(&world, &model, &cfg, 0, 1, 3).unwrap().is_empty());
    for (m, n) in [(12, 13), (12, 0), (2_001, 5)] {
        let bad = DataConfig { m, n, ..small() };
        assert!(generate_logs(&world, &model, &bad, 5, 1, 3).is_err(), "M={m} N={n}");
    }
    let bad = DataConfig {
        cold_fraction: 1.5,
        ..small()
    };
    assert!(generate_catalog(&bad, 1).is_err());
}

#[test]
fn zero_position_bias_means_no_clicks() {
    let mut cfg = small();
    cfg.click.position_bias = vec![0.0; 5];
    let world = World::generate(&cfg, 4).unwrap();
    let model = ClickModel::from(&cfg.click);
    let logs = generate_logs(&world, &model, &cfg, 300, 4, 3).unwrap();
    assert!(logs.iter().flat_map(|s| &s.engagement).all(|e| e[1] == 0));
}

#[test]
fn first_position_click_rate_matches_the_click_model() {
    let cfg = small();
    let world = World::generate(&cfg, 11).unwrap();
    let model = ClickModel::from(&cfg.click);
    let logs = generate_logs(&world, &model, &cfg, 100_000, 11, 3).unwrap();
    let mut implied = 0.0;
    let mut observed = 0usize;
    for s in &logs {
        let first: &Item = s.candidates.iter().find(|c| c.id == s.exposure[0]).unwrap();
        implied += model.click_probability(&s.user, &[], first, 1);
        observed += s.engagement[0][1] as usize;
    }
    let implied = implied / logs.len() as f64;
    let observed = observed as f64 / logs.len() as f64;
    eprintln!("position 1: implied {implied:.4}, observed {observed:.4}");
    assert!((implied - observed).abs() <= 0.01);
}

#[test]
fn datasets_round_trip_through_jsonl() {
    let mut cfg = RunConfig::default();
    cfg.data = small();
    cfg.data.n_train = 30;
    cfg.data.n_test = 10;
    let data = generate_dataset(&cfg).unwrap();
    assert_eq!((data.train.len(), data.test.len()), (30, 10));
    assert_ne!(data.train[..10], data.test[..]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.jsonl");
    write_jsonl(&path, &data.train).unwrap();
    assert_eq!(read_jsonl(&path).unwrap(), data.train);
    std::fs::write(&path, "{\"user\": 3}\n").unwrap();
    assert!(read_jsonl(&path).is_err());
}
