use std::path::Path;

use probplan::checkpoint::{load_checkpoint, save_checkpoint};
use probplan::config::RunConfig;
use probplan::dataset::{collect as collect_frames, load_dataset, save_dataset, DemoFrame, Split};
use probplan::eval::{closed_loop_eval, open_loop_metrics, HORIZONS};
use probplan::geometry::ConflictParams;
use probplan::persist::{read_file, write_atomic};
use probplan::planner::{train as train_model, ConflictChecker, LossReport, TrainFrame};
use probplan::scenario::load_scenarios;
use probplan::sim::{ExpertPolicy, LearnedPolicy, Policy, SelectionMode};
use probplan::vocabulary::{build_vocabulary, coverage, load_vocabulary_for, save_vocabulary, PlanningVocabulary};
use probplan::{Error, PlannerModel, Result};
use serde_json::json;

use crate::{AblationFlags, Common, PolicyKind, SplitArg};

const LOSS_LOG: &str = "losses.jsonl";

fn load_config(common: &Common) -> Result<RunConfig> {
    require(&common.config, "config")?;
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.train.seed = cfg.seed;
    cfg.validate()?;
    Ok(cfg)
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Validation(format!("{what} not found: {}", path.display())))
    }
}

fn ensure_output_dir(cfg: &RunConfig) -> Result<()> {
    let dir = &cfg.paths.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("report serializes"));
}

pub fn collect(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let scenarios = load_scenarios(&cfg.paths.scenarios)?;
    let ds = collect_frames(&scenarios, &cfg.collect, &cfg.sim)?;
    ensure_output_dir(&cfg)?;
    let path = cfg.dataset_path();
    save_dataset(&ds, &path)?;
    if ds.dropped > 0 {
        eprintln!("warning: dropped {} frames near expert infractions", ds.dropped);
    }
    print_json(&json!({
        "command": "collect",
        "dataset": path,
        "frames": ds.frames.len(),
        "train_frames": ds.split(Split::Train).count(),
        "val_frames": ds.split(Split::Val).count(),
        "dropped": ds.dropped,
    }));
    Ok(())
}

pub fn build_vocab(common: &Common, n: Option<usize>) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(n) = n {
        cfg.vocabulary.n = n;
    }
    let dataset_path = cfg.dataset_path();
    require(&dataset_path, "dataset")?;
    let ds = load_dataset(&dataset_path)?;
    if ds.horizon != cfg.vocabulary.horizon {
        return Err(Error::HorizonMismatch {
            expected: cfg.vocabulary.horizon,
            found: ds.horizon,
        });
    }
    let demos: Vec<_> = ds.split(Split::Train).map(|f| f.expert.clone()).collect();
    let v = &cfg.vocabulary;
    let vocab = build_vocabulary(&demos, v.n, v.dt_wp, v.bands)?;
    let cov = coverage(&vocab, &demos);
    ensure_output_dir(&cfg)?;
    let path = cfg.vocab_path();
    save_vocabulary(&vocab, &path)?;
    print_json(&json!({
        "command": "build-vocab",
        "vocab": path,
        "n": vocab.len(),
        "demos": demos.len(),
        "coverage_max_min_ade": cov,
        "stop_index": vocab.stop_index(),
    }));
    Ok(())
}

fn load_vocab(cfg: &RunConfig) -> Result<PlanningVocabulary> {
    let path = cfg.vocab_path();
    require(&path, "vocabulary")?;
    let vocab = load_vocabulary_for(&path, cfg.vocabulary.horizon)?;
    if vocab.bands() != cfg.vocabulary.bands {
        return Err(Error::Validation(format!(
            "vocabulary has L={} but the config asks for L={}",
            vocab.bands(),
            cfg.vocabulary.bands
        )));
    }
    Ok(vocab)
}

fn train_frames(frames: &[&DemoFrame], vocab: &PlanningVocabulary, tau: f64) -> Result<Vec<TrainFrame>> {
    let checker = ConflictChecker::new(vocab, ConflictParams::default());
    frames
        .iter()
        .map(|f| TrainFrame::new(f.id.clone(), &f.snapshot, &f.expert, vocab, &checker, tau))
        .collect()
}

pub struct TrainOverrides {
    pub steps: Option<u64>,
    pub lambda_conflict: Option<f64>,
    pub no_dist_loss: bool,
    pub resume: bool,
    pub ablation: AblationFlags,
}

pub fn train(common: &Common, o: TrainOverrides) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(s) = o.steps {
        cfg.train.steps = s;
    }
    if let Some(l) = o.lambda_conflict {
        cfg.train.lambda_conflict = l;
    }
    if o.no_dist_loss {
        cfg.train.use_dist_loss = false;
    }
    cfg.validate()?;
    let dataset_path = cfg.dataset_path();
    require(&dataset_path, "dataset")?;
    let vocab = load_vocab(&cfg)?;
    let ckpt_path = cfg.checkpoint_path();
    let log_path = cfg.paths.output_dir.join(LOSS_LOG);
    let ablation = o.ablation.merge(cfg.eval.ablation);

    let (mut model, mut log) = if o.resume {
        require(&ckpt_path, "checkpoint")?;
        let ck = load_checkpoint::<f32>(&ckpt_path)?;
        if ck.model.config != cfg.model || ck.vocab_len != vocab.len() {
            return Err(Error::Validation(
                "checkpoint was trained with a different model or vocabulary".into(),
            ));
        }
        let step = ck.model.store.step;
        let log = previous_log(&log_path, step)?;
        (ck.model, log)
    } else {
        let mut m = PlannerModel::<f32>::new(cfg.model, cfg.seed)?.with_ablation(ablation);
        m.fit_input_normalizer(&vocab)?;
        (m, String::new())
    };

    let ds = load_dataset(&dataset_path)?;
    let frames: Vec<&DemoFrame> = ds.split(Split::Train).collect();
    let frames = train_frames(&frames, &vocab, cfg.train.tau)?;
    let prepared = model.prepare(&vocab)?;
    let start_step = model.store.step;
    let mut first: Option<LossReport> = None;
    let mut last: Option<LossReport> = None;
    train_model(&mut model, &prepared, &frames, &cfg.train, |r, _| {
        log.push_str(&serde_json::to_string(r).expect("loss report serializes"));
        log.push('\n');
        first.get_or_insert(*r);
        last = Some(*r);
        Ok(true)
    })?;

    ensure_output_dir(&cfg)?;
    save_checkpoint(&model, vocab.len(), &ckpt_path)?;
    write_atomic(&log_path, log.as_bytes())?;
    print_json(&json!({
        "command": "train",
        "checkpoint": ckpt_path,
        "loss_log": log_path,
        "start_step": start_step,
        "final_step": model.store.step,
        "first_loss": first.map(|r| r.loss_total),
        "final_loss": last.map(|r| r.loss_total),
    }));
    Ok(())
}

/// Loss log lines up to and including `step`.
fn previous_log(path: &Path, step: u64) -> Result<String> {
    if !path.exists() {
        return Ok(String::new());
    }
    let bytes = read_file(path)?;
    let text = String::from_utf8_lossy(&bytes);
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        let r: LossReport =
            serde_json::from_str(line).map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if r.step <= step {
            out.push_str(line);
            out.push('\n');
        }
    }
    Ok(out)
}

fn load_model(cfg: &RunConfig, vocab: &PlanningVocabulary, ablation: AblationFlags) -> Result<PlannerModel<f32>> {
    let path = cfg.checkpoint_path();
    require(&path, "checkpoint")?;
    let ck = load_checkpoint::<f32>(&path)?;
    if ck.vocab_len != vocab.len() {
        return Err(Error::Validation(format!(
            "checkpoint expects N={} but the vocabulary has {}",
            ck.vocab_len,
            vocab.len()
        )));
    }
    ck.model.check_vocab(vocab)?;
    let merged = ablation.merge(ck.model.ablation);
    Ok(ck.model.with_ablation(merged))
}

fn horizon_map(values: [f64; 3]) -> serde_json::Value {
    let mut m = serde_json::Map::new();
    for (h, v) in HORIZONS.iter().zip(values) {
        m.insert(format!("{h}s"), json!(v));
    }
    serde_json::Value::Object(m)
}

pub fn eval_open(common: &Common, split: SplitArg, ablation: AblationFlags) -> Result<()> {
    let cfg = load_config(common)?;
    let dataset_path = cfg.dataset_path();
    require(&dataset_path, "dataset")?;
    let vocab = load_vocab(&cfg)?;
    let model = load_model(&cfg, &vocab, ablation)?;
    let ds = load_dataset(&dataset_path)?;
    let split = match split {
        SplitArg::Train => Split::Train,
        SplitArg::Val => Split::Val,
    };
    let prepared = model.prepare(&vocab)?;
    let m = open_loop_metrics(
        &model,
        &prepared,
        &vocab,
        ds.split(split).map(|f| (&f.snapshot, &f.expert)),
    )?;
    let report = json!({
        "mode": "open",
        "split": if split == Split::Train { "train" } else { "val" },
        "frames": m.frames,
        "l2_m": horizon_map(m.l2),
        "collision_pct": horizon_map(m.collision),
    });
    ensure_output_dir(&cfg)?;
    write_atomic(
        &cfg.paths.output_dir.join("eval_open.json"),
        serde_json::to_string_pretty(&report)
            .expect("report serializes")
            .as_bytes(),
    )?;
    print_json(&report);
    Ok(())
}

pub fn eval_closed(common: &Common, policy: PolicyKind, k: Option<usize>, ablation: AblationFlags) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(k) = k {
        cfg.eval.k = k;
    }
    cfg.validate()?;
    let scenarios = load_scenarios(&cfg.paths.scenarios)?;
    let learned = if policy == PolicyKind::Expert {
        None
    } else {
        let vocab = load_vocab(&cfg)?;
        let model = load_model(&cfg, &vocab, ablation)?;
        Some((vocab, model))
    };
    let prepared = match &learned {
        Some((vocab, model)) => Some(model.prepare(vocab)?),
        None => None,
    };
    let expert_params = cfg.collect.expert;
    let k = cfg.eval.k;
    let (report, episodes) = closed_loop_eval(
        &scenarios,
        &cfg.eval.seeds,
        &cfg.sim,
        &cfg.eval.penalties,
        |spec| -> Box<dyn Policy + '_> {
            match (&learned, &prepared) {
                (Some((vocab, model)), Some(prepared)) => {
                    let mode = if policy == PolicyKind::Argmax {
                        SelectionMode::Argmax
                    } else {
                        SelectionMode::TopK { k }
                    };
                    Box::new(LearnedPolicy::new(model, prepared, vocab, mode))
                }
                _ => Box::new(ExpertPolicy::new(spec.variants()[0].clone(), expert_params)),
            }
        },
    )?;
    ensure_output_dir(&cfg)?;
    let replay_dir = cfg.paths.output_dir.join("replays");
    std::fs::create_dir_all(&replay_dir).map_err(|e| Error::io(&replay_dir, e))?;
    for ep in &episodes {
        let name = format!("{}_{}_s{}.jsonl", ep.scenario, ep.policy.replace(':', "-"), ep.seed);
        write_atomic(&replay_dir.join(name), ep.to_jsonl().as_bytes())?;
    }
    let value = serde_json::to_value(&report).expect("report serializes");
    let report = json!({ "mode": "closed", "report": value });
    write_atomic(
        &cfg.paths.output_dir.join("eval_closed.json"),
        serde_json::to_string_pretty(&report)
            .expect("report serializes")
            .as_bytes(),
    )?;
    print_json(&report);
    Ok(())
}
