//! `mdrum` subcommands: forge, train, eval, reason, report.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use mdrum_core::data::{Dataset, Split};
use mdrum_core::eval::{
    aggregate_ratings, evaluate_detection, run_fewshot_eval, FewShotSetup, MetricsReport, Prf, RatingSummary,
    DEFAULT_SHOTS,
};
use mdrum_core::forge::{forge_dataset, split_dataset, Lexicon};
use mdrum_core::model::{Ablation, Model};
use mdrum_core::train::{train_stage, trainable_names, Stage, StagePlan};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::ckpt::{load_model, save_model};
use crate::config::{Settings, TrainSettings};
use crate::dataset::{load_dataset, render_meta, render_records, save_dataset, stats};
use crate::error::{AppError, AppResult};
use crate::fsio::{atomic_write, read, read_to_string, RunDir, MANIFEST};
use crate::kv;
use crate::tables::{loss_header, loss_rows, read_ratings, write_csv};

pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoint";

#[derive(Debug, Parser)]
#[command(name = "mdrum", version, about = "Multimodal fake-news detection and manipulation reasoning")]
pub struct Cli {
    /// Flat key=value config file (forge.*, model.*, train.*, eval.*).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Root seed; every random stream is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory of this run.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Override a config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic benchmark and split it.
    Forge(ForgeArgs),
    /// Run the training stages and write checkpoints.
    Train(TrainArgs),
    /// Detection metrics, few-shot sweep and ablation sweep.
    Eval(EvalArgs),
    /// Decode the reasoning for one sample.
    Reason(ReasonArgs),
    /// Aggregate human ratings into the evaluation table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ForgeArgs {
    /// Number of samples.
    #[arg(long)]
    pub n: Option<usize>,
    /// Lexicon file (`key<TAB>value` lines, then `[NAMES]`).
    #[arg(long, value_name = "FILE")]
    pub lexicon: Option<PathBuf>,
    /// Fraction of samples placed in the test split.
    #[arg(long)]
    pub test_fraction: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    /// Detection then reasoning.
    All,
    Pretrain,
    Detection,
    Reasoning,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Forge output directory or a dataset file.
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = StageArg::All)]
    pub stage: StageArg,
    /// Start from this checkpoint instead of a fresh initialization.
    #[arg(long, value_name = "DIR")]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Modalities replaced by zeros, e.g. `face` or `image,text`.
    #[arg(long, value_name = "LIST")]
    pub ablate: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Train run directory or checkpoint directory.
    #[arg(long, value_name = "DIR")]
    pub ckpt: PathBuf,
    /// Forge output directory or a test dataset file.
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    /// Few-shot sweep, e.g. `0,1,2,4`.
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    pub fewshot: Vec<usize>,
    /// Include summary and clue steps in the few-shot exemplars.
    #[arg(long)]
    pub cot: bool,
    /// Evaluate with these modalities zeroed.
    #[arg(long, value_name = "LIST")]
    pub ablate: Option<String>,
    /// Also evaluate w.o I, w.o T and w.o F.
    #[arg(long)]
    pub ablation_sweep: bool,
}

#[derive(Debug, Args)]
pub struct ReasonArgs {
    #[arg(long, value_name = "DIR")]
    pub ckpt: PathBuf,
    /// Forge output directory or a dataset file.
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    /// Sample id.
    pub id: String,
    /// Print a JSON object with p, bbox and reasoning.
    #[arg(long)]
    pub json: bool,
    /// Cap on generated bytes.
    #[arg(long)]
    pub max_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// `METHOD=FILE` ratings CSV; repeatable, rows keep this order.
    #[arg(long = "ratings", value_name = "METHOD=FILE", required = true)]
    pub ratings: Vec<String>,
}

/// Parse `args`, run, and return the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(stdout, "{text}")
            } else {
                write!(stderr, "{text}")
            };
            return code;
        }
    };
    match execute(&cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli, stdout: &mut dyn Write) -> AppResult<()> {
    let settings = Settings::load(cli.config.as_deref(), &cli.set)?;
    match &cli.command {
        Command::Forge(a) => cmd_forge(cli, settings, a, stdout),
        Command::Train(a) => cmd_train(cli, settings, a, stdout),
        Command::Eval(a) => cmd_eval(cli, settings, a, stdout),
        Command::Reason(a) => cmd_reason(settings, a, stdout),
        Command::Report(a) => cmd_report(cli, a, stdout),
    }
}

fn out_dir(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(default))
}

fn say(stdout: &mut dyn Write, line: &str) -> AppResult<()> {
    writeln!(stdout, "{line}").map_err(|e| AppError::io(Path::new("<stdout>"), e))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the record file and its images, so a manifest pins the exact data.
fn dataset_hash(ds: &Dataset) -> AppResult<String> {
    let mut h = Sha256::new();
    h.update(render_meta(ds).as_bytes());
    h.update(render_records(ds)?.as_bytes());
    for s in &ds.samples {
        h.update(&s.image.data);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn write_manifest(dir: &Path, pairs: &[(String, String)]) -> AppResult<()> {
    atomic_write(&dir.join(MANIFEST), kv::render(pairs).as_bytes())
}

fn settings_pairs(settings: &Settings) -> Vec<(String, String)> {
    settings.pairs().map(|(k, v)| (format!("set.{k}"), v.clone())).collect()
}

fn cmd_forge(cli: &Cli, mut settings: Settings, a: &ForgeArgs, stdout: &mut dyn Write) -> AppResult<()> {
    if let Some(n) = a.n {
        settings.set("forge.n_samples", n);
    }
    if let Some(f) = a.test_fraction {
        settings.set("forge.test_fraction", f);
    }
    let cfg = settings.forge_config(cli.seed)?;
    let test_fraction = settings.test_fraction()?;
    let lex = match &a.lexicon {
        Some(p) => Lexicon::parse(&read_to_string(p)?).map_err(|e| AppError::from(e).context(&p.display().to_string()))?,
        None => Lexicon::default(),
    };
    let full = forge_dataset(&cfg, &lex)?;
    let (train, test) = split_dataset(&full, test_fraction, cli.seed)?;

    let run = RunDir::create(&out_dir(cli, "forge"))?;
    let dir = run.path();
    save_dataset(&train, &dir.join(TRAIN_FILE))?;
    save_dataset(&test, &dir.join(TEST_FILE))?;
    let summary = stats(&full);
    atomic_write(&dir.join("stats.txt"), kv::render(&summary).as_bytes())?;
    atomic_write(&dir.join("lexicon.txt"), lex.render().as_bytes())?;

    let mut m: Vec<(String, String)> = vec![
        ("command".into(), "forge".into()),
        ("seed".into(), cli.seed.to_string()),
        ("n_samples".into(), cfg.n_samples.to_string()),
        ("manip_rate".into(), cfg.manip_rate.to_string()),
        ("multimodal_rate".into(), cfg.multimodal_rate.to_string()),
        (
            "domain_mix".into(),
            cfg.domain_mix.map(|v| v.to_string()).join(","),
        ),
        ("consistency_threshold".into(), cfg.consistency_threshold.to_string()),
        ("image_size".into(), cfg.image_size.to_string()),
        ("test_fraction".into(), test_fraction.to_string()),
        ("lexicon_sha256".into(), sha256_hex(lex.render().as_bytes())),
        ("train".into(), TRAIN_FILE.into()),
        ("train_sha256".into(), dataset_hash(&train)?),
        ("test".into(), TEST_FILE.into()),
        ("test_sha256".into(), dataset_hash(&test)?),
    ];
    m.extend(settings_pairs(&settings));
    write_manifest(dir, &m)?;
    let out = run.commit()?;
    for (k, v) in &summary {
        say(stdout, &format!("{k}={v}"))?;
    }
    say(stdout, &format!("wrote {}", out.display()))
}

/// `path` may be a forge directory or a dataset file.
fn dataset_file(path: &Path, split: Split) -> PathBuf {
    if path.is_dir() {
        path.join(match split {
            Split::Train => TRAIN_FILE,
            Split::Test => TEST_FILE,
        })
    } else {
        path.to_path_buf()
    }
}

fn load_split(path: &Path, split: Split) -> AppResult<(PathBuf, Dataset)> {
    let file = dataset_file(path, split);
    if !file.is_file() {
        return Err(AppError::Data(format!("missing dataset {}", file.display())));
    }
    let ds = load_dataset(&file)?;
    Ok((file, ds))
}

/// `path` may be a train run directory or the checkpoint directory itself.
fn checkpoint_dir(path: &Path) -> PathBuf {
    let nested = path.join(CHECKPOINT_DIR);
    if nested.is_dir() {
        nested
    } else {
        path.to_path_buf()
    }
}

fn parse_ablation(s: Option<&str>) -> AppResult<Ablation> {
    Ok(match s {
        Some(s) => Ablation::parse(s)?,
        None => Ablation::NONE,
    })
}

fn cmd_train(cli: &Cli, mut settings: Settings, a: &TrainArgs, stdout: &mut dyn Write) -> AppResult<()> {
    if let Some(v) = a.epochs {
        settings.set("train.epochs", v);
    }
    if let Some(v) = a.lr {
        settings.set("train.lr", v);
    }
    if let Some(v) = a.batch_size {
        settings.set("train.batch_size", v);
    }
    let ts: TrainSettings = settings.train_settings()?;
    let ablation = parse_ablation(a.ablate.as_deref())?;
    let stages: Vec<Stage> = match a.stage {
        StageArg::All => vec![Stage::Detection, Stage::Reasoning],
        StageArg::Pretrain => vec![Stage::Pretrain],
        StageArg::Detection => vec![Stage::Detection],
        StageArg::Reasoning => vec![Stage::Reasoning],
    };
    let plans: Vec<StagePlan> = stages
        .iter()
        .map(|&stage| {
            let mut p = StagePlan::new(stage, ts.epochs);
            p.lr = ts.lr;
            p.batch_size = ts.batch_size;
            p.weights = ts.weights;
            p.max_steps = ts.max_steps;
            p.ablation = ablation;
            p.validate().map(|_| p)
        })
        .collect::<Result<_, _>>()?;

    let (data_file, ds) = load_split(&a.data, Split::Train)?;
    let mut model = match &a.init {
        Some(dir) => load_model(&checkpoint_dir(dir))?,
        None => Model::new(settings.model_config()?, cli.seed)?,
    };

    let run = RunDir::create(&out_dir(cli, "train"))?;
    let dir = run.path();
    let mut m: Vec<(String, String)> = vec![
        ("command".into(), "train".into()),
        ("seed".into(), cli.seed.to_string()),
        ("optimizer".into(), "sgd".into()),
        ("lr".into(), ts.lr.to_string()),
        ("batch_size".into(), ts.batch_size.to_string()),
        ("epochs".into(), ts.epochs.to_string()),
        ("weights.alpha".into(), ts.weights.ce.to_string()),
        ("weights.beta".into(), ts.weights.llm.to_string()),
        ("weights.gamma".into(), ts.weights.bbox.to_string()),
        ("weights.delta".into(), ts.weights.giou.to_string()),
        ("ablation".into(), ablation.label()),
        ("dataset".into(), data_file.display().to_string()),
        ("dataset_sha256".into(), dataset_hash(&ds)?),
        (
            "init".into(),
            a.init.as_ref().map_or("fresh".into(), |p| p.display().to_string()),
        ),
    ];
    for plan in &plans {
        let curve = train_stage(&mut model, plan, &ds, cli.seed)?;
        let name = plan.stage.as_str();
        let csv_name = format!("loss_{name}.csv");
        write_csv(&dir.join(&csv_name), &loss_header(), &loss_rows(&curve))?;
        m.push((format!("stage.{name}.trainable"), trainable_names(&plan.trainable)));
        m.push((format!("stage.{name}.steps"), curve.rows.len().to_string()));
        m.push((format!("stage.{name}.loss_csv"), csv_name));
        if let (Some(first), Some(last)) = (curve.first(), curve.last()) {
            say(
                stdout,
                &format!(
                    "{name}: {} steps, L_total {:.6} -> {:.6}",
                    curve.rows.len(),
                    first.total,
                    last.total
                ),
            )?;
        }
    }
    save_model(&dir.join(CHECKPOINT_DIR), &model)?;
    m.push(("checkpoint".into(), CHECKPOINT_DIR.into()));
    m.extend(settings_pairs(&settings));
    write_manifest(dir, &m)?;
    let out = run.commit()?;
    say(stdout, &format!("wrote {}", out.display()))
}

fn prf_json(p: &Prf) -> Value {
    json!({
        "precision": p.precision,
        "recall": p.recall,
        "f1": p.f1,
        "undefined": p.undefined,
    })
}

fn report_json(r: &MetricsReport) -> Value {
    let per_domain: serde_json::Map<String, Value> = r
        .per_domain
        .iter()
        .map(|(d, c, p)| {
            let mut v = prf_json(p);
            v["counts"] = json!({"tp": c.tp, "fp": c.fp, "tn": c.tn, "fn": c.fn_});
            (d.as_str().to_string(), v)
        })
        .collect();
    json!({
        "accuracy": r.accuracy,
        "overall": prf_json(&r.overall),
        "counts": {"tp": r.counts.tp, "fp": r.counts.fp, "tn": r.counts.tn, "fn": r.counts.fn_},
        "per_domain": per_domain,
    })
}

fn json_bytes(v: &Value) -> AppResult<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(v).map_err(|e| AppError::Data(e.to_string()))?;
    b.push(b'\n');
    Ok(b)
}

fn ablation_row(label: &str, r: &MetricsReport) -> Vec<String> {
    r.fewshot_row(label)
}

fn cmd_eval(cli: &Cli, _settings: Settings, a: &EvalArgs, stdout: &mut dyn Write) -> AppResult<()> {
    let ckpt = checkpoint_dir(&a.ckpt);
    let model = load_model(&ckpt)?;
    let (test_file, test) = load_split(&a.data, Split::Test)?;
    if test.is_empty() {
        return Err(AppError::Data(format!("{} has no samples", test_file.display())));
    }
    let ablation = parse_ablation(a.ablate.as_deref())?;
    for &k in &a.fewshot {
        FewShotSetup { k, seed: cli.seed, cot: a.cot }.validate(&DEFAULT_SHOTS)?;
    }

    let run = RunDir::create(&out_dir(cli, "eval"))?;
    let dir = run.path();
    let main = evaluate_detection(&model, &test.samples, ablation)?;
    let label = ablation.label();
    write_csv(
        &dir.join("metrics.csv"),
        &MetricsReport::domain_header(),
        &[main.domain_row(&label)],
    )?;
    let mut report = json!({ "method": label, "detection": report_json(&main) });
    say(stdout, &format!("{label}: accuracy {:.3}", main.accuracy))?;

    if !a.fewshot.is_empty() {
        let (_, pool) = load_split(&a.data, Split::Train)?;
        let mut rows = Vec::new();
        let mut prompts = String::new();
        let mut sweep = serde_json::Map::new();
        for &k in &a.fewshot {
            let setup = FewShotSetup { k, seed: cli.seed, cot: a.cot };
            let res = run_fewshot_eval(&model, &setup, &pool.samples, &test.samples, ablation)?;
            rows.push(res.report.fewshot_row(&setup.label()));
            sweep.insert(setup.label(), report_json(&res.report));
            for (s, p) in test.samples.iter().zip(&res.prompts) {
                let line = json!({"setup": setup.label(), "sample": s.id, "prompt": p.text});
                prompts.push_str(&line.to_string());
                prompts.push('\n');
            }
        }
        write_csv(&dir.join("fewshot.csv"), &MetricsReport::fewshot_header(), &rows)?;
        atomic_write(&dir.join("prompts.jsonl"), prompts.as_bytes())?;
        report["fewshot"] = Value::Object(sweep);
        say(stdout, &format!("few-shot sweep: {} rows", rows.len()))?;
    }

    if a.ablation_sweep {
        let variants = ["", "image", "text", "face"];
        let mut rows = Vec::new();
        let mut sweep = serde_json::Map::new();
        for v in variants {
            let ab = Ablation::parse(v)?;
            let r = evaluate_detection(&model, &test.samples, ab)?;
            rows.push(ablation_row(&ab.label(), &r));
            sweep.insert(ab.label(), report_json(&r));
        }
        write_csv(&dir.join("ablation.csv"), &MetricsReport::ablation_header(), &rows)?;
        report["ablation"] = Value::Object(sweep);
        say(stdout, "ablation sweep: 4 rows")?;
    }
    atomic_write(&dir.join("report.json"), &json_bytes(&report)?)?;

    let manifest = vec![
        ("command".to_string(), "eval".to_string()),
        ("seed".into(), cli.seed.to_string()),
        ("checkpoint".into(), ckpt.display().to_string()),
        ("checkpoint_sha256".into(), checkpoint_hash(&ckpt)?),
        ("dataset".into(), test_file.display().to_string()),
        ("dataset_sha256".into(), dataset_hash(&test)?),
        ("ablation".into(), label),
        (
            "fewshot".into(),
            a.fewshot.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(","),
        ),
        ("cot".into(), a.cot.to_string()),
        ("ablation_sweep".into(), a.ablation_sweep.to_string()),
    ];
    write_manifest(dir, &manifest)?;
    let out = run.commit()?;
    say(stdout, &format!("wrote {}", out.display()))
}

fn checkpoint_hash(dir: &Path) -> AppResult<String> {
    let mut h = Sha256::new();
    h.update(read(&dir.join(crate::ckpt::MODEL_CFG))?);
    for c in mdrum_core::model::Component::ALL {
        h.update(read(&crate::ckpt::component_path(dir, c))?);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn find_sample(data: &Path, id: &str) -> AppResult<mdrum_core::data::NewsSample> {
    let files: Vec<PathBuf> = if data.is_dir() {
        vec![data.join(TEST_FILE), data.join(TRAIN_FILE)]
    } else {
        vec![data.to_path_buf()]
    };
    for f in files.iter().filter(|f| f.is_file()) {
        if let Some(s) = load_dataset(f)?.samples.into_iter().find(|s| s.id == id) {
            return Ok(s);
        }
    }
    Err(AppError::Data(format!("unknown sample id `{id}`")))
}

fn cmd_reason(settings: Settings, a: &ReasonArgs, stdout: &mut dyn Write) -> AppResult<()> {
    let model = load_model(&checkpoint_dir(&a.ckpt))?;
    let sample = find_sample(&a.data, &a.id)?;
    let max_len = match a.max_len {
        Some(v) => v,
        None => settings.max_len()?,
    };
    let (head, out) = model.reason(&sample.image, &sample.text, max_len, Ablation::NONE)?;
    if a.json {
        let v = json!({
            "p": head.p,
            "bbox": head.b_pred.to_array(),
            "reasoning": out.text,
        });
        say(stdout, &v.to_string())
    } else {
        say(stdout, &format!("p={:.6}", head.p))?;
        let b = head.b_pred.to_array();
        say(stdout, &format!("bbox={:.4},{:.4},{:.4},{:.4}", b[0], b[1], b[2], b[3]))?;
        say(stdout, &out.text)
    }
}

fn cmd_report(cli: &Cli, a: &ReportArgs, stdout: &mut dyn Write) -> AppResult<()> {
    let mut rows = Vec::new();
    let mut summaries: Vec<(String, RatingSummary)> = Vec::new();
    for spec in &a.ratings {
        let (method, file) = kv::parse_pair(spec)?;
        let ratings = read_ratings(Path::new(&file))?;
        let s = aggregate_ratings(&ratings).map_err(|e| AppError::from(e).context(&file))?;
        rows.push(s.rating_row(&method));
        summaries.push((method, s));
    }
    let run = RunDir::create(&out_dir(cli, "report"))?;
    let dir = run.path();
    write_csv(&dir.join("table3.csv"), &RatingSummary::rating_header(), &rows)?;
    let mut pairs = vec![("command".to_string(), "report".to_string())];
    for spec in &a.ratings {
        let (method, file) = kv::parse_pair(spec)?;
        pairs.push((format!("ratings.{method}"), file.clone()));
        pairs.push((format!("ratings.{method}.sha256"), sha256_hex(&read(Path::new(&file))?)));
    }
    write_manifest(dir, &pairs)?;
    run.commit()?;
    say(stdout, &RatingSummary::rating_header().join("\t"))?;
    for r in &rows {
        say(stdout, &r.join("\t"))?;
    }
    Ok(())
}
