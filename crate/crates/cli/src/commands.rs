use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use log::info;
use serde::Serialize;

use edgeprompt::container::write_atomic;
use edgeprompt::gnn::{GnnModel, ModelKind, Readout};
use edgeprompt::graph::{csbm_generate, kshot_sample, load_dataset, save_dataset, CsbmParams, LabeledDataset, Task};
use edgeprompt::pretrain::{load_checkpoint, load_checkpoint_as, pretrain, save_checkpoint, PretrainConfig, Strategy};
use edgeprompt::prompt::{evaluate_accuracy, load_prompt_file, save_prompt_file, tune, Method, PromptFile, TuneConfig};
use edgeprompt::seed::rng_for;
use edgeprompt::theory::{theorem1_construct_witness, theorem1_verify, theorem2_trials, Theorem2Params};
use edgeprompt::{Error, Result};

use crate::report::{AnchorGroup, ConfigEcho, RunReport, SeedRun};
use crate::{
    Command, EvalArgs, GenCsbmArgs, PretrainArgs, Theorem1Args, Theorem2Args, TuneArgs, VerifyCommand, OUT_DIR_ENV,
};

const INIT: u64 = 0x1417;

pub fn run(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Pretrain(a) => cmd_pretrain(a).map(|_| ExitCode::SUCCESS),
        Command::Tune(a) => cmd_tune(a).map(|_| ExitCode::SUCCESS),
        Command::Eval(a) => cmd_eval(a).map(|_| ExitCode::SUCCESS),
        Command::Verify(VerifyCommand::Theorem1(a)) => verify_theorem1(a),
        Command::Verify(VerifyCommand::Theorem2(a)) => verify_theorem2(a),
        Command::GenCsbm(a) => cmd_gen_csbm(a).map(|_| ExitCode::SUCCESS),
    }
}

/// Relative output paths are placed under `$EDGEPROMPT_OUT_DIR` when set.
fn output_path(p: &Path) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(root) if p.is_relative() && !root.is_empty() => PathBuf::from(root).join(p),
        _ => p.to_path_buf(),
    }
}

fn ensure_parent(p: &Path) -> Result<()> {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn existing(p: &Path, what: &str) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} {} does not exist", p.display())))
    }
}

fn write_json<S: Serialize>(value: &S, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    ensure_parent(path)?;
    write_atomic(path, text.as_bytes())
}

fn to_json<S: Serialize>(value: &S) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))
}

fn cmd_pretrain(a: PretrainArgs) -> Result<()> {
    existing(&a.dataset, "dataset")?;
    let kind: ModelKind = a.backbone.parse()?;
    let strategy: Strategy = a.strategy.parse()?;
    let readout: Readout = a.readout.parse()?;
    let layers = a.layers.unwrap_or(match kind {
        ModelKind::Gcn => 2,
        ModelKind::Gin => 5,
    });
    if layers == 0 || a.hidden == 0 || a.epochs == 0 {
        return Err(Error::Config("layers, hidden and epochs must be positive".into()));
    }
    let cfg = PretrainConfig {
        strategy,
        epochs: a.epochs,
        learning_rate: a.lr,
        batch_size: a.batch_size,
        view_pairs: a.view_pairs,
        drop_ratio: a.drop_ratio,
        temperature: a.temperature,
        noise_scale: a.noise_scale,
        mask_ratio: a.mask_ratio,
        readout,
        seed: a.seed,
    };
    cfg.validate()?;
    let ds = load_dataset(&a.dataset)?;
    let mut dims = vec![ds.feature_dim()];
    dims.extend(std::iter::repeat(a.hidden).take(layers));
    let model = GnnModel::new(kind, &dims, &mut rng_for(a.seed, &[INIT]))?;
    info!("pre-training {kind} {dims:?} with {strategy} for {} epochs", a.epochs);
    let run = pretrain(model, &ds, &cfg)?;

    let out = output_path(&a.out);
    ensure_parent(&out)?;
    save_checkpoint(&run.checkpoint, &out)?;
    let mut log = String::from("epoch,loss\n");
    for (e, l) in run.losses.iter().enumerate() {
        log.push_str(&format!("{},{l}\n", e + 1));
    }
    let log_path = PathBuf::from(format!("{}.losses.csv", out.display()));
    write_atomic(&log_path, log.as_bytes())?;
    let final_loss = run.losses.last().copied().unwrap_or(f64::NAN);
    println!(
        "pretrained {kind} {dims:?} strategy={strategy} epochs={} final_loss={final_loss} digest={} checkpoint={}",
        a.epochs,
        run.checkpoint.digest(),
        out.display()
    );
    Ok(())
}

fn file_slug(method: Method) -> String {
    method.as_str().replace('+', "-plus")
}

fn cmd_tune(a: TuneArgs) -> Result<()> {
    let started = Instant::now();
    existing(&a.dataset, "dataset")?;
    existing(&a.checkpoint, "checkpoint")?;
    let method: Method = a.method.parse()?;
    let task: Task = a.task.parse()?;
    let readout: Readout = a.readout.parse()?;
    if a.seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let anchors = if a.anchors.is_empty() { vec![TuneConfig::for_task(task).anchors] } else { a.anchors.clone() };
    let config_for = |m: usize, seed: u64| TuneConfig {
        epochs: a.epochs,
        learning_rate: a.lr,
        batch_size: a.batch_size,
        anchors: m,
        readout,
        slope: a.slope,
        seed,
    };
    for &m in &anchors {
        config_for(m, 0).validate()?;
    }

    let ckpt = match &a.backbone {
        Some(b) => load_checkpoint_as(&a.checkpoint, b.parse()?)?,
        None => load_checkpoint(&a.checkpoint)?,
    };
    let model = &ckpt.model;
    let ds = load_dataset(&a.dataset)?;
    if ds.task() != task {
        return Err(Error::Config(format!("--task {} but the dataset is a {:?}-level task", a.task, ds.task())));
    }
    if ds.feature_dim() != model.dims()[0] {
        return Err(Error::Compatibility(format!(
            "dataset has {}-dimensional features but the checkpoint expects {}",
            ds.feature_dim(),
            model.dims()[0]
        )));
    }
    let digest = model.digest();
    let out_dir = output_path(&a.out_dir);
    fs::create_dir_all(&out_dir)?;

    let mut groups = Vec::with_capacity(anchors.len());
    for &m in &anchors {
        let mut runs = Vec::with_capacity(a.seeds.len());
        for &seed in &a.seeds {
            let split = kshot_sample(&ds, a.shots, seed)?;
            let tuned = tune(model, &ds, &split, method, &config_for(m, seed))?;
            let train_acc = evaluate_accuracy(model, &tuned.classifier, &ds, &split.train_ids)?;
            let test_acc = evaluate_accuracy(model, &tuned.classifier, &ds, &split.test_ids)?;
            info!("{method} anchors={m} seed={seed}: train {train_acc:.4} test {test_acc:.4}");
            let prompt_file = if method == Method::ClassifierOnly {
                None
            } else {
                let name = format!("prompts/{}-a{m}-s{seed}.prompt", file_slug(method));
                let path = out_dir.join(&name);
                ensure_parent(&path)?;
                save_prompt_file(&PromptFile::new(model, tuned.classifier, task, a.shots, seed, seed), &path)?;
                Some(name)
            };
            runs.push(SeedRun { seed, train_acc, test_acc, prompt_file, history: tuned.history });
        }
        let group = AnchorGroup::new(m, runs);
        println!(
            "{method} anchors={m} mean_test_acc={:.4} std_test_acc={:.4} seeds={}",
            group.mean_test_acc,
            group.std_test_acc,
            a.seeds.len()
        );
        groups.push(group);
    }
    if model.digest() != digest {
        return Err(Error::Numeric("backbone weights changed during tuning".into()));
    }

    let report = RunReport {
        method: method.as_str().into(),
        strategy: ckpt.meta.strategy.as_str().into(),
        task: a.task.clone(),
        shots: a.shots,
        backbone: edgeprompt::pretrain::ModelSpec { kind: model.kind(), dims: model.dims() },
        checkpoint_digest: digest,
        config: ConfigEcho {
            dataset: a.dataset.display().to_string(),
            checkpoint: a.checkpoint.display().to_string(),
            epochs: a.epochs,
            learning_rate: a.lr,
            batch_size: a.batch_size,
            readout: a.readout.clone(),
            slope: a.slope,
            anchors,
            seeds: a.seeds.clone(),
        },
        groups,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    write_json(&report, &out_dir.join("report.json"))?;
    write_atomic(out_dir.join("report.csv"), report.to_csv().as_bytes())?;
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    method: String,
    backbone_digest: String,
    shots: usize,
    split_seed: u64,
    num_test: usize,
    test_acc: f64,
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    existing(&a.dataset, "dataset")?;
    existing(&a.checkpoint, "checkpoint")?;
    existing(&a.prompt, "prompt file")?;
    let pf = load_prompt_file(&a.prompt)?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    pf.check_backbone(&ckpt.model)?;
    let ds: LabeledDataset = load_dataset(&a.dataset)?;
    if ds.task() != pf.task {
        return Err(Error::Compatibility(format!("prompt file was tuned for a {:?}-level task", pf.task)));
    }
    let split = kshot_sample(&ds, pf.shots, pf.split_seed)?;
    let test_acc = evaluate_accuracy(&ckpt.model, &pf.classifier, &ds, &split.test_ids)?;
    println!("test_acc={test_acc} num_test={}", split.test_ids.len());
    if let Some(out) = &a.out {
        let report = EvalReport {
            method: pf.classifier.method.as_str().into(),
            backbone_digest: pf.backbone_digest.clone(),
            shots: pf.shots,
            split_seed: pf.split_seed,
            num_test: split.test_ids.len(),
            test_acc,
        };
        write_json(&report, &output_path(out))?;
    }
    Ok(())
}

fn verdict(pass: bool) -> ExitCode {
    if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn verify_theorem1(a: Theorem1Args) -> Result<ExitCode> {
    let params = CsbmParams::symmetric(a.dim, a.gap, a.p, a.q, a.nodes);
    let witness = theorem1_construct_witness(&params, a.target)?;
    let report = theorem1_verify(&params, &witness, a.nodes, a.trials, a.seed)?;
    println!("{}", to_json(&report)?);
    if let Some(out) = &a.out {
        write_json(&report, &output_path(out))?;
    }
    Ok(verdict(report.pass))
}

fn verify_theorem2(a: Theorem2Args) -> Result<ExitCode> {
    let params = Theorem2Params { max_nodes: a.nodes, trials: a.trials, feature_dim: a.dim, seed: a.seed };
    let report = theorem2_trials(&params)?;
    println!("{}", to_json(&report)?);
    if let Some(out) = &a.out {
        write_json(&report, &output_path(out))?;
    }
    Ok(verdict(report.pass))
}

fn cmd_gen_csbm(a: GenCsbmArgs) -> Result<()> {
    if a.dim == 0 || a.n_per_class == 0 {
        return Err(Error::Config("dim and n-per-class must be positive".into()));
    }
    let params = CsbmParams::symmetric(a.dim, a.gap, a.p, a.q, a.n_per_class);
    let (g, labels) = csbm_generate::<f64>(&params, a.seed)?;
    let edges = g.num_edges();
    let ds = LabeledDataset::node_task(vec![g], vec![labels], 2)?;
    let out = output_path(&a.out);
    ensure_parent(&out)?;
    save_dataset(&ds, &out)?;
    println!("wrote {} nodes, {edges} edges to {}", 2 * a.n_per_class, out.display());
    Ok(())
}
