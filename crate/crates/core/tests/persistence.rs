mod common;

use probplan::checkpoint::{checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint};
use probplan::config::RunConfig;
use probplan::dataset::{collect, load_dataset, save_dataset, CollectConfig, DemoDataset, Split};
use probplan::persist::write_atomic;
use probplan::planner::{train, ConflictChecker, TrainFrame};
use probplan::scene::Ablation;
use probplan::sim::SimConfig;
use probplan::{Error, PlannerModel, TrainConfig};

use common::{corridor_snapshot, grid_vocab, scenario, small_model_config, stationary_agent, straight};

fn small_dataset() -> DemoDataset {
    let specs = vec![(*scenario("straight")).clone(), (*scenario("lead_vehicle")).clone()];
    let cc = CollectConfig {
        seeds: vec![0],
        val_seeds: vec![1],
        ..CollectConfig::default()
    };
    collect(&specs, &cc, &SimConfig::default()).unwrap()
}

#[test]
fn dataset_round_trips_and_splits() {
    let d = small_dataset();
    assert!(d.split(Split::Train).count() > 0);
    assert!(d.split(Split::Val).count() > 0);
    assert!(d
        .frames
        .iter()
        .all(|f| f.expert.horizon() == 6 && f.snapshot.horizon == 6));
    assert!(d.split(Split::Val).all(|f| f.seed == 1));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("demos.json");
    save_dataset(&d, &path).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), d);
    assert_eq!(
        std::fs::read_dir(dir.path()).unwrap().count(),
        1,
        "temp file left behind"
    );
}

#[test]
fn collection_is_deterministic() {
    assert_eq!(small_dataset().to_json(), small_dataset().to_json());
}

#[test]
fn dataset_errors() {
    let d = small_dataset();
    let mut bad = d.clone();
    bad.frames[0].expert.points.pop();
    assert!(matches!(
        DemoDataset::from_json(&bad.to_json()),
        Err(Error::HorizonMismatch { .. })
    ));

    let mut bad = d.clone();
    bad.version = 7;
    assert!(matches!(
        DemoDataset::from_json(&bad.to_json()),
        Err(Error::Validation(_))
    ));

    let text = d.to_json().replacen("\"dropped\"", "\"extra\":1,\"dropped\"", 1);
    assert!(matches!(DemoDataset::from_json(&text), Err(Error::Parse(_))));

    let cc = CollectConfig {
        seeds: vec![0, 1],
        val_seeds: vec![1],
        ..CollectConfig::default()
    };
    let specs = vec![(*scenario("straight")).clone()];
    assert!(matches!(
        collect(&specs, &cc, &SimConfig::default()),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        collect(&[], &cc, &SimConfig::default()),
        Err(Error::NoScenarios(_))
    ));
}

fn trained_model() -> PlannerModel<f32> {
    let vocab = grid_vocab();
    let mut m = PlannerModel::<f32>::new(small_model_config(), 11)
        .unwrap()
        .with_ablation(Ablation {
            no_traffic: true,
            ..Ablation::default()
        });
    m.fit_input_normalizer(&vocab).unwrap();
    let prepared = m.prepare(&vocab).unwrap();
    let checker = ConflictChecker::new(&vocab, Default::default());
    let s = corridor_snapshot(5.0, vec![stationary_agent(0, 12.0, 0.0)]);
    let frame = TrainFrame::new("a".into(), &s, &straight(2.0, 0.0), &vocab, &checker, 0.5).unwrap();
    let cfg = TrainConfig {
        steps: 3,
        lr: 1e-3,
        ..TrainConfig::default()
    };
    train(&mut m, &prepared, &[frame], &cfg, |_, _| Ok(true)).unwrap();
    m
}

#[test]
fn checkpoint_round_trips_bit_exactly() {
    let m = trained_model();
    let bytes = checkpoint_bytes(&m, 36);
    let c = checkpoint_from_bytes::<f32>(&bytes).unwrap();
    assert_eq!(c.vocab_len, 36);
    assert_eq!(c.model.config, m.config);
    assert_eq!(c.model.ablation, m.ablation);
    assert_eq!(c.model.store.step, 3);
    for (a, b) in m.store.entries().iter().zip(c.model.store.entries()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.value, b.value, "{}", a.name);
        assert_eq!(a.m, b.m, "{}", a.name);
        assert_eq!(a.v, b.v, "{}", a.name);
    }
    assert_eq!(checkpoint_bytes(&c.model, 36), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&m, 36, &path).unwrap();
    let wide = load_checkpoint::<f64>(&path).unwrap();
    let back: PlannerModel<f32> = wide.model.cast();
    for (a, b) in m.store.entries().iter().zip(back.store.entries()) {
        assert_eq!(a.value, b.value, "{}", a.name);
    }
}

#[test]
fn checkpoint_errors_carry_offsets() {
    let bytes = checkpoint_bytes(&trained_model(), 36);
    let offset = |b: &[u8]| match checkpoint_from_bytes::<f32>(b) {
        Err(Error::Format { offset, .. }) => offset,
        other => panic!("expected a format error, got {:?}", other.map(|_| ())),
    };

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert_eq!(offset(&bad), 0);

    let mut bad = bytes.clone();
    bad[4] = 9;
    assert_eq!(offset(&bad), 4);

    let mut bad = bytes.clone();
    bad.push(0);
    assert_eq!(offset(&bad), bytes.len() as u64);

    assert!(matches!(
        checkpoint_from_bytes::<f32>(&bytes[..bytes.len() - 3]),
        Err(Error::Format { .. })
    ));
    assert!(matches!(
        checkpoint_from_bytes::<f32>(&bytes[..20]),
        Err(Error::Format { .. })
    ));
    let err = load_checkpoint::<f32>(std::path::Path::new("/nonexistent/model.ckpt")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }), "{err:?}");
}

fn desk_config_path() -> std::path::PathBuf {
    std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.json")
}

#[test]
fn bundled_config_loads_and_round_trips() {
    let path = desk_config_path();
    let c = RunConfig::load(&path).unwrap();
    c.validate().unwrap();
    assert_eq!(c.model.dim, 32);
    assert_eq!(c.train.steps, 1500);
    assert!(c.paths.scenarios.starts_with(path.parent().unwrap()));
    assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
}

#[test]
fn config_errors() {
    let text = std::fs::read_to_string(desk_config_path()).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["train"]["momentum"] = 0.9.into();
    match RunConfig::from_json(&v.to_string()) {
        Err(Error::Config(m)) => assert!(m.contains("momentum"), "{m}"),
        other => panic!("{other:?}"),
    }

    let check = |edit: &dyn Fn(&mut serde_json::Value)| {
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        edit(&mut v);
        let c = RunConfig::from_json(&v.to_string()).unwrap();
        let e = c.validate().unwrap_err();
        assert!(e.is_validation(), "{e}");
    };
    check(&|v| v["version"] = 2.into());
    check(&|v| v["model"]["horizon"] = 8.into());
    check(&|v| v["model"]["heads"] = 5.into());
    check(&|v| v["train"]["tau"] = 0.0.into());
    check(&|v| v["eval"]["k"] = 0.into());
    check(&|v| v["eval"]["penalties"] = serde_json::json!({"red_light": 1.5}));
}

#[test]
fn atomic_writes_replace_whole_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/out.bin");
    write_atomic(&path, b"first").unwrap();
    write_atomic(&path, b"second").unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), b"second");
    assert_eq!(std::fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
}
