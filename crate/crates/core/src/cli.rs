//! Command-line front end. `run` returns the process exit code: 0 on
//! success, 1 on usage errors, 2 on data or numeric errors.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::alignment::LossForm;
use crate::basis::BlockLayout;
use crate::compensation::{apply_compensation, build_rotation, CompensationParams};
use crate::diff::Tensor;
use crate::oracle::{
    bundled_corpus, embed_3d, gen_dataset, Dataset, EmbedConfig, GenConfig, Split, SplitConfig, SplitMode,
};
use crate::physics::{jacobi_eigh, solve_gev, toy_overlap};
use crate::screening::{bench_pipelines, classify_by_gap, default_thresholds, write_rows_csv, ScreenReport};
use crate::smiles::Parsed;
use crate::training::{
    finetune, load_checkpoint, predict_dataset, pretrain, save_checkpoint, summarize, write_trace, Checkpoint,
    Model, ModelConfig, Stage, TrainConfig,
};

pub const VERSION: &str = env!("MOLHAM_VERSION");

#[derive(Parser, Debug)]
#[command(name = "molham", version = VERSION, about = "Hamiltonian prediction from SMILES strings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Label the bundled corpus with the toy oracle and split it.
    GenData(GenDataArgs),
    /// Pre-train encoders, compensation and alignment on train records.
    Pretrain(TrainArgs),
    /// Fine-tune the Hamiltonian head on SMILES input.
    Finetune(TrainArgs),
    /// Predict the Hamiltonian and gap of one SMILES string.
    Predict(PredictArgs),
    /// Metrics of a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Gap-threshold screening report.
    Screen(ScreenArgs),
    /// Wall-clock comparison of the prediction pipelines.
    Bench(BenchArgs),
    /// Run the built-in invariant checks.
    Selftest(SelftestArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// SMILES file, one per line; defaults to the bundled corpus.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value = "random-id")]
    pub split: SplitMode,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    #[arg(long, default_value_t = 0)]
    pub embed_seed: u64,
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub max_heavy_atoms: Option<usize>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub train_max_atoms: Option<usize>,
    #[arg(long)]
    pub test_min_atoms: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Directory holding dataset.jsonl.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint to start from; a fresh model otherwise.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// JSON training config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub keep_prob: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub loss_form: Option<LossForm>,
    #[arg(long)]
    pub fusion: Option<bool>,
    #[arg(long)]
    pub compensation: Option<bool>,
    /// Embedding width of a fresh model.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Attention blocks of a fresh model.
    #[arg(long)]
    pub layers: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub smiles: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Seed of the 3D embedding used for the overlap matrix.
    #[arg(long, default_value_t = 0)]
    pub embed_seed: u64,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: SplitArg,
    #[arg(long, default_value_t = false)]
    pub fusion: bool,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Args, Debug)]
pub struct ScreenArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated thresholds in eV.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    #[arg(long, default_value = "test")]
    pub split: SplitArg,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub repeat: usize,
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SelftestArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

/// Anything that should end the process with exit code 2.
#[derive(Debug)]
struct Failure(String);

impl<E: std::error::Error> From<E> for Failure {
    fn from(e: E) -> Self {
        let mut msg = e.to_string();
        let mut src = e.source();
        while let Some(s) = src {
            let t = s.to_string();
            if !msg.contains(&t) {
                msg.push_str(": ");
                msg.push_str(&t);
            }
            src = s.source();
        }
        Failure(msg)
    }
}

type Outcome = Result<(), Failure>;

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::GenData(a) => gen_data(&a),
        Command::Pretrain(a) => train(&a, Stage::Pretrain),
        Command::Finetune(a) => train(&a, Stage::Finetune),
        Command::Predict(a) => predict(&a),
        Command::Eval(a) => eval(&a),
        Command::Screen(a) => screen(&a),
        Command::Bench(a) => bench(&a),
        Command::Selftest(a) => selftest_cmd(&a),
    };
    match result {
        Ok(()) => 0,
        Err(Failure(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    }
}

fn sha256_file(path: &Path) -> Result<String, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Writes `run-manifest.json` into `out`.
fn write_run_manifest(out: &Path, command: &str, config: Value, inputs: &[PathBuf]) -> Outcome {
    fs::create_dir_all(out)?;
    let mut hashes = serde_json::Map::new();
    for p in inputs {
        hashes.insert(p.display().to_string(), Value::String(sha256_file(p)?));
    }
    let manifest = json!({
        "command": command,
        "version": VERSION,
        "config": config,
        "inputs": hashes,
    });
    write_json(&out.join("run-manifest.json"), &manifest)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn load_dataset(dir: &Path, split: SplitArg) -> Result<(Dataset, PathBuf), Failure> {
    let path = dir.join("dataset.jsonl");
    let ds = Dataset::load(&path).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
    let ds = match split {
        SplitArg::Train => ds.split(Split::Train),
        SplitArg::Test => ds.split(Split::Test),
        SplitArg::All => ds,
    };
    Ok((ds, path))
}

fn checkpoint_inputs(dir: &Path) -> Vec<PathBuf> {
    vec![dir.join("manifest.json"), dir.join("params.bin")]
}

fn gen_data(a: &GenDataArgs) -> Outcome {
    let corpus = match &a.corpus {
        None => bundled_corpus(),
        Some(p) => fs::read_to_string(p)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect(),
    };
    let d = SplitConfig::default();
    let cfg = GenConfig {
        split: SplitConfig {
            mode: a.split,
            test_fraction: a.test_fraction.unwrap_or(d.test_fraction),
            train_max_atoms: a.train_max_atoms.unwrap_or(d.train_max_atoms),
            test_min_atoms: a.test_min_atoms.unwrap_or(d.test_min_atoms),
            seed: a.split_seed,
        },
        embed_seed: a.embed_seed,
        limit: a.limit,
        max_heavy_atoms: a.max_heavy_atoms,
        jobs: a.jobs.max(1),
    };
    let (_, manifest) = gen_dataset(&corpus, &cfg, &a.out)?;
    for s in &manifest.skipped {
        eprintln!("skipped record {} ({}): {}", s.index, s.smiles, s.error);
    }
    eprintln!("train {} / test {} / dropped {}", manifest.n_train, manifest.n_test, manifest.n_dropped);
    let inputs = a.corpus.iter().cloned().collect::<Vec<_>>();
    write_run_manifest(&a.out, "gen-data", serde_json::to_value(&cfg)?, &inputs)
}

fn resolve_train_config(a: &TrainArgs, stage: Stage) -> Result<TrainConfig, Failure> {
    let mut c: TrainConfig = match &a.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
        None => TrainConfig::default(),
    };
    c.stage = stage;
    macro_rules! over {
        ($($f:ident),*) => { $( if let Some(v) = a.$f.clone() { c.$f = v; } )* };
    }
    over!(epochs, batch_size, lr, lambda1, lambda2, keep_prob, seed, loss_form, fusion, compensation);
    c.validate()?;
    Ok(c)
}

fn train(a: &TrainArgs, stage: Stage) -> Outcome {
    let cfg = resolve_train_config(a, stage)?;
    let (ds, data_path) = load_dataset(&a.data, SplitArg::Train)?;
    let mut inputs = vec![data_path];
    let mut model = match &a.init {
        Some(dir) => {
            inputs.extend(checkpoint_inputs(dir));
            if a.dim.is_some() || a.layers.is_some() {
                return Err(Failure("--dim/--layers only apply to a fresh model".into()));
            }
            load_checkpoint(dir)?.model
        }
        None => {
            let mut mc = ModelConfig::default();
            if let Some(d) = a.dim {
                mc.encoder.d = d;
            }
            if let Some(l) = a.layers {
                mc.encoder.layers = l;
            }
            Model::new(&mc, cfg.seed)
        }
    };
    fs::create_dir_all(&a.out)?;
    let rng = match stage {
        Stage::Pretrain => {
            let o = pretrain(&mut model, &ds, &cfg)?;
            write_trace(&a.out.join("trace.csv"), &o.trace)?;
            o.rng
        }
        Stage::Finetune => {
            let o = finetune(&mut model, &ds, &cfg)?;
            write_trace(&a.out.join("trace.csv"), &o.trace)?;
            o.rng
        }
    };
    let ck = Checkpoint {
        model,
        train: Some(cfg.clone()),
        rng: Some(rng),
    };
    save_checkpoint(&a.out.join("checkpoint"), &ck)?;
    let config = json!({ "train": cfg, "model": ck.model.cfg, "init": a.init });
    let name = if stage == Stage::Pretrain { "pretrain" } else { "finetune" };
    write_run_manifest(&a.out, name, config, &inputs)
}

fn predict(a: &PredictArgs) -> Outcome {
    let ck = load_checkpoint(&a.checkpoint)?;
    let p = Parsed::new(&a.smiles)?;
    let h = ck.model.predict_h(&p, None)?;
    let coords = embed_3d(&p.molecule, a.embed_seed, &EmbedConfig::default())?;
    let s = toy_overlap(&p.molecule.elements, &coords)?;
    let spec = solve_gev(&h, &s, p.molecule.electrons)?;
    fs::create_dir_all(&a.out)?;
    crate::hamiltonian::write_matrix(&a.out.join("hamiltonian.bin"), &h, &p.molecule.elements)?;
    let report = json!({
        "smiles": a.smiles,
        "n_atoms": p.molecule.len(),
        "n_orb": h.rows(),
        "electrons": p.molecule.electrons,
        "homo_hartree": spec.homo_energy,
        "lumo_hartree": spec.lumo_energy,
        "gap_ev": spec.gap_ev,
    });
    write_json(&a.out.join("prediction.json"), &report)?;
    write_run_manifest(
        &a.out,
        "predict",
        json!({ "smiles": a.smiles, "embed_seed": a.embed_seed, "checkpoint": a.checkpoint }),
        &checkpoint_inputs(&a.checkpoint),
    )
}

fn eval(a: &EvalArgs) -> Outcome {
    let ck = load_checkpoint(&a.checkpoint)?;
    let (ds, data_path) = load_dataset(&a.data, a.split)?;
    let preds = predict_dataset(&ck.model, &ds, a.fusion, a.jobs.max(1))?;
    let report = summarize(&preds, a.fusion);
    fs::create_dir_all(&a.out)?;
    write_json(&a.out.join("metrics.json"), &report)?;
    let mut w = csv::Writer::from_path(a.out.join("predictions.csv"))?;
    for p in &preds {
        w.serialize(p)?;
    }
    w.flush()?;
    let mut inputs = vec![data_path];
    inputs.extend(checkpoint_inputs(&a.checkpoint));
    write_run_manifest(
        &a.out,
        "eval",
        json!({ "split": format!("{:?}", a.split).to_lowercase(), "fusion": a.fusion }),
        &inputs,
    )
}

fn screen(a: &ScreenArgs) -> Outcome {
    let thresholds = a.thresholds.clone().unwrap_or_else(default_thresholds);
    let ck = load_checkpoint(&a.checkpoint)?;
    let (ds, data_path) = load_dataset(&a.data, a.split)?;
    let preds = predict_dataset(&ck.model, &ds, false, a.jobs.max(1))?;
    let pred: Vec<f64> = preds.iter().map(|p| p.gap_pred_ev).collect();
    let truth: Vec<f64> = preds.iter().map(|p| p.gap_true_ev).collect();
    let rows = classify_by_gap(&pred, &truth, &thresholds)?;
    fs::create_dir_all(&a.out)?;
    write_rows_csv(&a.out.join("screen.csv"), &rows)?;
    let report = ScreenReport {
        thresholds: thresholds.clone(),
        molecules: pred.len(),
        rows,
    };
    write_json(&a.out.join("screen.json"), &report)?;
    let mut inputs = vec![data_path];
    inputs.extend(checkpoint_inputs(&a.checkpoint));
    write_run_manifest(&a.out, "screen", json!({ "thresholds": thresholds }), &inputs)
}

fn bench(a: &BenchArgs) -> Outcome {
    let ck = load_checkpoint(&a.checkpoint)?;
    let (ds, data_path) = load_dataset(&a.data, SplitArg::Test)?;
    let ds = match a.limit {
        Some(n) => Dataset::new(ds.records.into_iter().take(n).collect()),
        None => ds,
    };
    let timing = bench_pipelines(&ck.model, &ds, a.repeat.max(1))?;
    fs::create_dir_all(&a.out)?;
    write_json(&a.out.join("timing.json"), &timing)?;
    let mut inputs = vec![data_path];
    inputs.extend(checkpoint_inputs(&a.checkpoint));
    write_run_manifest(&a.out, "bench", json!({ "repeat": a.repeat, "limit": a.limit }), &inputs)
}

/// One named invariant check.
#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Quick invariant suite over the numerical core and the model.
pub fn selftest() -> Vec<CheckResult> {
    let mut out = Vec::new();
    let mut check = |name: &'static str, f: &dyn Fn() -> Result<String, String>| {
        let (passed, detail) = match f() {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        out.push(CheckResult { name, passed, detail });
    };
    check("jacobi residual", &|| {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut worst: f64 = 0.0;
        for n in 1..=20 {
            let mut a = Tensor::zeros(n, n);
            for i in 0..n {
                for j in 0..=i {
                    let x = rng.gen_range(-1.0..1.0);
                    a.set(i, j, x);
                    a.set(j, i, x);
                }
            }
            let (w, v) = jacobi_eigh(&a).map_err(|e| e.to_string())?;
            let av = a.matmul(&v).map_err(|e| e.to_string())?;
            for i in 0..n {
                for j in 0..n {
                    worst = worst.max((av.get(i, j) - v.get(i, j) * w[j]).abs() / a.norm_inf().max(1e-300));
                }
            }
        }
        if worst < 1e-10 {
            Ok(format!("max relative residual {worst:.2e}"))
        } else {
            Err(format!("max relative residual {worst:.2e}"))
        }
    });
    check("rotation orthogonality", &|| {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let angles: Vec<f64> = (0..31).map(|_| rng.gen_range(-3.2..3.2)).collect();
        let r = build_rotation(&angles);
        let rtr = r.transpose().matmul(&r).map_err(|e| e.to_string())?;
        let err = rtr.sub(&Tensor::identity(32)).max_abs();
        if err < 1e-10 {
            Ok(format!("{err:.2e}"))
        } else {
            Err(format!("{err:.2e}"))
        }
    });
    check("neutral compensation", &|| {
        let t = Tensor::from_fn(3, 8, |i, j| (i * 8 + j) as f64 * 0.1 - 1.0);
        let out = apply_compensation(&t, &CompensationParams::neutral(8, 4));
        if out == t {
            Ok("identity".into())
        } else {
            Err(format!("max change {:.2e}", out.sub(&t).max_abs()))
        }
    });
    check("predicted H symmetry", &|| {
        let model = Model::new(&ModelConfig::default(), 3);
        let p = Parsed::new("CC(=O)Nc1ccc(O)cc1").map_err(|e| e.to_string())?;
        let h = model.predict_h(&p, None).map_err(|e| e.to_string())?;
        let n = BlockLayout::new(&p.molecule.elements).n_orb;
        if h.rows() == n && h.max_asymmetry() == 0.0 {
            Ok(format!("{n} orbitals"))
        } else {
            Err(format!("asymmetry {:.2e}", h.max_asymmetry()))
        }
    });
    check("screening fixture", &|| {
        let rows = classify_by_gap(&[1.0, 0.2, 0.5], &[1.0, 0.5, 0.2], &[0.3]).map_err(|e| e.to_string())?;
        let r = &rows[0];
        if (r.tp, r.fp, r.tn, r.fn_) == (1, 1, 0, 1) {
            Ok("counts match".into())
        } else {
            Err(format!("{r:?}"))
        }
    });
    check("default thresholds", &|| {
        let t = default_thresholds();
        if t == [0.26, 0.28, 0.30, 0.32, 0.34, 0.36] {
            Ok("0.26..0.36".into())
        } else {
            Err(format!("{t:?}"))
        }
    });
    out
}

fn selftest_cmd(a: &SelftestArgs) -> Outcome {
    let results = selftest();
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    if let Some(out) = &a.out {
        fs::create_dir_all(out)?;
        write_json(&out.join("selftest.json"), &results)?;
        write_run_manifest(out, "selftest", json!({}), &[])?;
    }
    if results.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(Failure("selftest failed".into()))
    }
}
