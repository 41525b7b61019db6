//! Settings resolution and execution of each subcommand.
//!
//! Every command first merges flags over the config file and validates the
//! result, reporting all problems at once, before touching the filesystem.
//! Written reports embed the resolved settings (seed included, worker count
//! and output locations excluded) so a rerun reproduces them byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use antiforensics::analysis::{
    collect_sign_samples, covariance_csv, estimate_sign_covariance, perturbation_histogram, transfer_matrix,
};
use antiforensics::attack::{attack_batch, write_jsonl, AttackBudget, AttackConfig, AttackMethod, EnsembleSource,
    GradientSource, RunRecord};
use antiforensics::color::{ColorTransform, GradientTransport};
use antiforensics::data::{
    generate_synthetic, load_image, save_image, verify_digest, DatasetManifest, Label, LabeledImages, Split,
};
use antiforensics::detector::{
    evaluate, load_model, save_model, train, train_ndl, write_history_csv, ArchId, Detector, DetectorArch,
    DetectorModel, NdlConfig, Optimizer, TrainConfig, TrainedDetector,
};
use antiforensics::image::{ColorDomain, Image};
use antiforensics::quality::{summarize, QualityReport};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{load_file, ConfigError, FileConfig, Problems};
use crate::{AttackOpts, Cli, Command, DataArgs};

const DEFAULT_SAMPLES: usize = 10_000;
const DEFAULT_SCALAR_SWEEP: [f32; 4] = [2.0, 4.0, 6.0, 8.0];

pub fn run(cli: Cli) -> Result<String> {
    let file = match &cli.config {
        Some(p) => load_file(p)?,
        None => FileConfig::default(),
    };
    let workers = cli.workers.or(file.workers);
    if workers == Some(0) {
        return Err(ConfigError(vec!["workers must be at least 1".into()]).into());
    }
    let seed = cli.seed.or(file.seed);
    let ctx = Ctx { file, seed };
    let go = move || -> Result<Value> {
        match cli.command {
            Command::GenData(a) => gen_data(&ctx, a),
            Command::Train(a) => train_cmd(&ctx, a),
            Command::Eval(a) => eval_cmd(&ctx, a),
            Command::Attack(a) => attack_cmd(&ctx, a),
            Command::Transfer(a) => transfer_cmd(&ctx, a),
            Command::AnalyzeCov(a) => cov_cmd(&ctx, a),
            Command::Histogram(a) => histogram_cmd(&ctx, a),
            Command::Sweep(a) => sweep_cmd(&ctx, a),
        }
    };
    let summary = match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("building worker pool")?
            .install(go)?,
        None => go()?,
    };
    Ok(serde_json::to_string(&summary)?)
}

struct Ctx {
    file: FileConfig,
    seed: Option<u64>,
}

impl Ctx {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

// ---------------------------------------------------------------------------
// Resolution helpers

/// Parses a lowercase enum name through its serde representation.
fn parse_name<T: DeserializeOwned>(p: &mut Problems, what: &str, s: &str, expected: &str) -> Option<T> {
    match serde_json::from_value(Value::String(s.to_ascii_lowercase())) {
        Ok(v) => Some(v),
        Err(_) => {
            p.push(format!("{what}: unknown value {s:?} (expected {expected})"));
            None
        }
    }
}

/// Manifest path from a dataset directory or manifest file, canonicalized.
fn resolve_data(p: &mut Problems, flag: Option<PathBuf>, file: &FileConfig) -> Option<PathBuf> {
    let path = p.require("data", flag.or_else(|| file.data.clone()))?;
    let manifest = if path.is_dir() { DatasetManifest::manifest_path(&path) } else { path };
    if !manifest.is_file() {
        p.push(format!("data: no dataset manifest at {}", manifest.display()));
        return None;
    }
    Some(manifest.canonicalize().unwrap_or(manifest))
}

fn resolve_split(p: &mut Problems, flag: Option<String>, file: &FileConfig) -> Split {
    match flag {
        Some(s) => parse_name(p, "split", &s, "train, val or test").unwrap_or(Split::Test),
        None => file.split.unwrap_or(Split::Test),
    }
}

fn resolve_label(p: &mut Problems, flag: Option<String>, file: &FileConfig) -> Label {
    match flag {
        Some(s) => parse_name(p, "label", &s, "fake or real").unwrap_or(Label::Fake),
        None => file.label.unwrap_or(Label::Fake),
    }
}

fn default_budget(method: AttackMethod) -> AttackBudget {
    match method {
        AttackMethod::Fgsm => AttackBudget::Scalar(5.5),
        AttackMethod::Mim => AttackBudget::Scalar(6.0),
        AttackMethod::Ycc => AttackBudget::PerChannel([2.5, 6.0, 6.0]),
    }
}

/// Attack settings without validation of the budget, which `sweep` replaces.
fn resolve_attack_base(p: &mut Problems, opts: &AttackOpts, file: &FileConfig) -> AttackConfig {
    let section = file.attack.clone().unwrap_or_default();
    let method = match &opts.method {
        Some(m) => m.parse::<AttackMethod>().map_err(|e| p.push(format!("method: {e}"))).ok(),
        None => section.method,
    }
    .unwrap_or(AttackMethod::Ycc);
    let budget = match &opts.eps {
        Some(s) => AttackBudget::parse(s).map_err(|e| p.push(format!("eps: {e}"))).ok(),
        None => section.budget,
    }
    .unwrap_or_else(|| default_budget(method));
    let transport = match &opts.transport {
        Some(t) => parse_name::<GradientTransport>(p, "transport", t, "exact or reciprocal"),
        None => section.transport,
    }
    .unwrap_or_default();
    let mut cfg = AttackConfig::new(method, budget);
    cfg.iterations = opts.iterations.or(section.iterations).unwrap_or(cfg.iterations);
    cfg.momentum = opts.momentum.or(section.momentum).unwrap_or(cfg.momentum);
    cfg.transport = transport;
    cfg
}

fn resolve_attack(p: &mut Problems, opts: &AttackOpts, file: &FileConfig) -> AttackConfig {
    let cfg = resolve_attack_base(p, opts, file);
    p.extend("attack: ", cfg.problems());
    cfg
}

fn list_or_file(flags: Vec<PathBuf>, file: &Option<Vec<PathBuf>>) -> Vec<PathBuf> {
    if flags.is_empty() {
        file.clone().unwrap_or_default()
    } else {
        flags
    }
}

fn require_nonempty(p: &mut Problems, name: &str, v: &[PathBuf]) {
    if v.is_empty() {
        p.push(format!("at least one `{name}` model is required"));
    }
}

// ---------------------------------------------------------------------------
// Execution helpers

fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let m = DatasetManifest::load(path)?;
    verify_digest(&m)?;
    Ok(m)
}

fn load_split(manifest: &Path, split: Split) -> Result<LabeledImages> {
    Ok(load_manifest(manifest)?.load_split(split)?)
}

fn load_detector(path: &Path) -> Result<TrainedDetector> {
    load_model(path).with_context(|| format!("loading model {}", path.display()))
}

fn load_cnn(path: &Path) -> Result<DetectorModel> {
    load_detector(path)?
        .into_cnn()
        .with_context(|| format!("source model {}", path.display()))
}

/// One model, or an equal-weight ensemble of several.
enum Source {
    Single(DetectorModel),
    Ensemble(EnsembleSource),
}

impl Source {
    fn load(paths: &[PathBuf]) -> Result<Self> {
        let mut models = paths.iter().map(|p| load_cnn(p)).collect::<Result<Vec<_>>>()?;
        if models.len() == 1 {
            Ok(Source::Single(models.remove(0)))
        } else {
            Ok(Source::Ensemble(EnsembleSource::new(models)?))
        }
    }

    fn gradient(&self) -> &dyn GradientSource {
        match self {
            Source::Single(m) => m,
            Source::Ensemble(e) => e,
        }
    }

    fn detector(&self) -> &dyn Detector {
        match self {
            Source::Single(m) => m,
            Source::Ensemble(e) => e,
        }
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_text(path, &s)
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn budget_label(b: &AttackBudget) -> String {
    b.values().iter().map(|v| v.to_string()).collect::<Vec<_>>().join("/")
}

// ---------------------------------------------------------------------------
// gen-data

fn gen_data(ctx: &Ctx, a: crate::GenDataArgs) -> Result<Value> {
    let mut p = Problems::default();
    let out = p.require("out", a.out.or_else(|| ctx.file.out.clone()));
    let mut cfg = ctx.file.synthetic.clone().unwrap_or_default();
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    cfg.resolution = a.resolution.unwrap_or(cfg.resolution);
    cfg.train_per_class = a.train_per_class.unwrap_or(cfg.train_per_class);
    cfg.val_per_class = a.val_per_class.unwrap_or(cfg.val_per_class);
    cfg.test_per_class = a.test_per_class.unwrap_or(cfg.test_per_class);
    p.extend("synthetic: ", cfg.problems());
    p.finish()?;
    let out = out.expect("checked");

    let manifest = generate_synthetic(&cfg, &out)?;
    Ok(json!({
        "command": "gen-data",
        "manifest": path_str(&DatasetManifest::manifest_path(&out)),
        "records": manifest.records.len(),
        "digest": manifest.digest,
    }))
}

// ---------------------------------------------------------------------------
// train

#[derive(Serialize)]
struct TrainSettings {
    seed: u64,
    arch: String,
    data: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    train: Option<TrainConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ndl: Option<NdlConfig>,
}

fn train_cmd(ctx: &Ctx, a: crate::TrainArgs) -> Result<Value> {
    let mut p = Problems::default();
    let f = &ctx.file;
    let arch = p.require("arch", a.arch.or_else(|| f.arch.clone()));
    let arch = arch.and_then(|s| {
        if s.eq_ignore_ascii_case("ndl") {
            Some(None)
        } else {
            s.parse::<ArchId>().map(Some).map_err(|e| p.push(format!("arch: {e}"))).ok()
        }
    });
    let data = resolve_data(&mut p, a.data, f);
    let out = p.require("out", a.out.or_else(|| f.out.clone()));
    let history = a.history.or_else(|| f.history.clone());

    let (mut train_cfg, mut ndl_cfg) = (None, None);
    match arch {
        Some(Some(_)) => {
            let mut c = f.train.clone().unwrap_or_default();
            c.max_epochs = a.epochs.unwrap_or(c.max_epochs);
            c.learning_rate = a.learning_rate.unwrap_or(c.learning_rate);
            c.batch_size = a.batch_size.unwrap_or(c.batch_size);
            c.weight_decay = a.weight_decay.unwrap_or(c.weight_decay);
            c.patience = a.patience.unwrap_or(c.patience);
            if let Some(o) = &a.optimizer {
                c.optimizer = parse_name::<Optimizer>(&mut p, "optimizer", o, "sgd or adam").unwrap_or(c.optimizer);
            }
            p.extend("train: ", c.problems());
            train_cfg = Some(c);
        }
        Some(None) => {
            let c = f.ndl.clone().unwrap_or_default();
            p.extend("ndl: ", c.problems());
            ndl_cfg = Some(c);
        }
        None => {}
    }
    p.finish()?;
    let (arch, data, out) = (arch.expect("checked"), data.expect("checked"), out.expect("checked"));
    let settings = TrainSettings {
        seed: ctx.seed(),
        arch: arch.map_or_else(|| "ndl".to_string(), |id| id.to_string()),
        data: data.clone(),
        train: train_cfg.clone(),
        ndl: ndl_cfg.clone(),
    };

    let manifest = load_manifest(&data)?;
    let train_set = manifest.load_split(Split::Train)?;
    let val_set = manifest.load_split(Split::Val)?;
    let (detector, history_rows) = match (arch, train_cfg, ndl_cfg) {
        (Some(id), Some(cfg), _) => {
            let arch = DetectorArch::new(id, manifest.resolution)?;
            let (model, rows) = train(arch, &train_set, &val_set, &cfg, ctx.seed())?;
            (TrainedDetector::Cnn(model), Some(rows))
        }
        (None, _, Some(cfg)) => (TrainedDetector::Ndl(train_ndl(&train_set, &cfg)?), None),
        _ => unreachable!("settings resolved above"),
    };
    ensure_parent(&out)?;
    save_model(&detector, &out)?;
    let val_report = evaluate(&detector, &val_set)?;
    let mut written = vec![path_str(&out)];
    if let Some(rows) = &history_rows {
        let h = history.unwrap_or_else(|| out.with_extension("history.csv"));
        ensure_parent(&h)?;
        write_history_csv(&h, rows)?;
        written.push(path_str(&h));
    }
    let sidecar = sidecar_path(&out);
    write_json(
        &sidecar,
        &json!({
            "command": "train",
            "config": settings,
            "history": history_rows,
            "validation": val_report.to_json(),
        }),
    )?;
    written.push(path_str(&sidecar));
    Ok(json!({
        "command": "train",
        "arch": settings.arch,
        "validation": val_report.to_json(),
        "outputs": written,
    }))
}

/// `model.afdm` -> `model.afdm.json`.
fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

// ---------------------------------------------------------------------------
// eval

#[derive(Serialize)]
struct EvalSettings {
    model: PathBuf,
    data: PathBuf,
    split: Split,
}

fn eval_cmd(ctx: &Ctx, a: crate::EvalArgs) -> Result<Value> {
    let mut p = Problems::default();
    let f = &ctx.file;
    let model = p.require("model", a.model.or_else(|| f.model.clone()));
    let DataArgs { data, split } = a.data;
    let data = resolve_data(&mut p, data, f);
    let split = resolve_split(&mut p, split, f);
    let out = a.out.or_else(|| f.out.clone());
    p.finish()?;
    let settings = EvalSettings {
        model: model.expect("checked"),
        data: data.expect("checked"),
        split,
    };

    let detector = load_detector(&settings.model)?;
    let images = load_split(&settings.data, split)?;
    let report = evaluate(&detector, &images)?;
    let body = json!({
        "command": "eval",
        "config": settings,
        "detector": detector.name(),
        "report": report.to_json(),
    });
    if let Some(out) = out {
        write_json(&out, &body)?;
    }
    Ok(body)
}

// ---------------------------------------------------------------------------
// attack

#[derive(Serialize, Deserialize)]
struct AttackSettings {
    seed: u64,
    data: PathBuf,
    split: Split,
    label: Label,
    sources: Vec<PathBuf>,
    targets: Vec<PathBuf>,
    attack: AttackConfig,
    save_images: bool,
}

fn attack_cmd(ctx: &Ctx, a: crate::AttackArgs) -> Result<Value> {
    let mut p = Problems::default();
    let f = &ctx.file;
    let data = resolve_data(&mut p, a.data.data, f);
    let split = resolve_split(&mut p, a.data.split, f);
    let label = resolve_label(&mut p, a.attack.label.clone(), f);
    let attack = resolve_attack(&mut p, &a.attack, f);
    let sources = list_or_file(a.sources, &f.sources);
    require_nonempty(&mut p, "source", &sources);
    let mut targets = list_or_file(a.targets, &f.targets);
    if targets.is_empty() {
        targets = sources.clone();
    }
    let out = p.require("out", a.out.or_else(|| f.out.clone()));
    let save_images = !a.no_images && f.save_images.unwrap_or(true);
    p.finish()?;
    let out = out.expect("checked");
    let settings = AttackSettings {
        seed: ctx.seed(),
        data: data.expect("checked"),
        split,
        label,
        sources,
        targets,
        attack,
        save_images,
    };

    let source = Source::load(&settings.sources)?;
    let target_models = settings
        .targets
        .iter()
        .map(|t| load_detector(t))
        .collect::<Result<Vec<_>>>()?;
    let target_refs: Vec<&dyn Detector> = target_models.iter().map(|t| t as &dyn Detector).collect();
    let images = load_split(&settings.data, split)?;
    let outcome = attack_batch(&settings.attack, source.gradient(), &images, label, &target_refs)?;

    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut records: Vec<RunRecord> = outcome.records.clone();
    let mut quality = Vec::new();
    let mut csv = format!("index,clean_path,{}\n", QualityReport::CSV_HEADER);
    for (i, r) in outcome.results.iter().enumerate() {
        let Some(res) = r else { continue };
        if save_images {
            let rel = Path::new("adversarial").join(label.as_str()).join(format!("{i}.png"));
            save_image(&outcome.adversarial_quantized[i], &out.join(&rel))?;
            records[i].adversarial_path = Some(rel);
        }
        let q = QualityReport::compute(&outcome.clean.images[i], &res.adversarial)?;
        csv.push_str(&format!("{i},{},{}\n", outcome.clean.paths[i].display(), q.csv_row()));
        quality.push(q);
    }
    write_jsonl(&out.join("run.jsonl"), &records)?;
    write_text(&out.join("quality.csv"), &csv)?;
    let failures: Vec<_> = outcome.failures().map(|r| json!({"index": r.index, "error": r.error})).collect();
    let asr: Vec<_> = outcome
        .targets
        .iter()
        .map(|t| json!({"target": t.target, "asr": t.asr.asr, "asr_quantized": t.asr_quantized.asr}))
        .collect();
    write_json(
        &out.join("summary.json"),
        &json!({
            "command": "attack",
            "config": settings,
            "source": outcome.source,
            "selected": outcome.selected,
            "attacked": outcome.attacked_count(),
            "failures": failures,
            "targets": outcome.targets,
            "quality": summarize(&quality),
        }),
    )?;
    Ok(json!({
        "command": "attack",
        "out": path_str(&out),
        "selected": outcome.selected,
        "attacked": outcome.attacked_count(),
        "failures": failures.len(),
        "asr": asr,
    }))
}

// ---------------------------------------------------------------------------
// transfer

#[derive(Serialize)]
struct TransferSettings {
    data: PathBuf,
    split: Split,
    label: Label,
    sources: Vec<PathBuf>,
    targets: Vec<PathBuf>,
    attack: AttackConfig,
}

/// `x.csv` -> `x.json`.
fn json_beside(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

fn transfer_cmd(ctx: &Ctx, a: crate::TransferArgs) -> Result<Value> {
    let mut p = Problems::default();
    let f = &ctx.file;
    let data = resolve_data(&mut p, a.data.data, f);
    let split = resolve_split(&mut p, a.data.split, f);
    let label = resolve_label(&mut p, a.attack.label.clone(), f);
    let attack = resolve_attack(&mut p, &a.attack, f);
    let sources = list_or_file(a.sources, &f.sources);
    require_nonempty(&mut p, "source", &sources);
    let mut targets = list_or_file(a.targets, &f.targets);
    if targets.is_empty() {
        targets = sources.clone();
    }
    let out = p.require("out", a.out.or_else(|| f.out.clone()));
    p.finish()?;
    let out = out.expect("checked");
    let settings = TransferSettings {
        data: data.expect("checked"),
        split,
        label,
        sources,
        targets,
        attack,
    };

    let srcs = settings.sources.iter().map(|s| load_cnn(s)).collect::<Result<Vec<_>>>()?;
    let tgts = settings.targets.iter().map(|t| load_detector(t)).collect::<Result<Vec<_>>>()?;
    let images = load_split(&settings.data, split)?;
    let src_refs: Vec<&dyn GradientSource> = srcs.iter().map(|s| s as &dyn GradientSource).collect();
    let tgt_refs: Vec<&dyn Detector> = tgts.iter().map(|t| t as &dyn Detector).collect();
    let matrix = transfer_matrix(&src_refs, &tgt_refs, &settings.attack, &images, label);
    for e in &matrix.errors {
        log::warn!("transfer: {e}");
    }
    write_text(&out, &matrix.to_csv())?;
    let js = json_beside(&out);
    write_json(&js, &json!({"command": "transfer", "config": settings, "matrix": matrix}))?;
    Ok(json!({
        "command": "transfer",
        "outputs": [path_str(&out), path_str(&js)],
        "errors": matrix.errors,
    }))
}

// ---------------------------------------------------------------------------
// analyze-cov

#[derive(Serialize)]
struct CovSettings {
    seed: u64,
    model: PathBuf,
    data: PathBuf,
    split: Split,
    label: Label,
    samples: usize,
}

fn cov_cmd(ctx: &Ctx, a: crate::CovArgs) -> Result<Value> {
    let mut p = Problems::default();
    let f = &ctx.file;
    let model = p.require("model", a.model.or_else(|| f.model.clone()));
    let data = resolve_data(&mut p, a.data.data, f);
    let split = resolve_split(&mut p, a.data.split, f);
    let label = resolve_label(&mut p, a.label, f);
    let samples = a.samples.or(f.samples).unwrap_or(DEFAULT_SAMPLES);
    if samples < 2 {
        p.push("samples must be at least 2");
    }
    let out = p.require("out", a.out.or_else(|| f.out.clone()));
    p.finish()?;
    let out = out.expect("checked");
    let settings = CovSettings {
        seed: ctx.seed(),
        model: model.expect("checked"),
        data: data.expect("checked"),
        split,
        label,
        samples,
    };

    let model = load_cnn(&settings.model)?;
    let images = load_split(&settings.data, split)?.of_class(label);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let signs = collect_sign_samples(&model, &images.refs(), label, samples, &mut rng)?;
    let report = estimate_sign_covariance(&signs)?;
    write_text(&out, &covariance_csv(&report))?;
    let js = json_beside(&out);
    write_json(&js, &json!({"command": "analyze-cov", "config": settings, "report": report}))?;
    Ok(json!({
        "command": "analyze-cov",
        "outputs": [path_str(&out), path_str(&js)],
        "var_ratio_y_cb": report.var_ratio_y_cb,
        "var_ratio_y_cr": report.var_ratio_y_cr,
    }))
}

// ---------------------------------------------------------------------------
// histogram

#[derive(Serialize)]
struct HistogramSettings {
    domain: String,
    attack: AttackConfig,
    label: Label,
}

fn histogram_cmd(ctx: &Ctx, a: crate::HistogramArgs) -> Result<Value> {
    let mut p = Problems::default();
    let f = &ctx.file;
    let run = p.require("run", a.run.or_else(|| f.run.clone()));
    if let Some(r) = &run {
        p.existing_file("run", &r.join("summary.json"));
        p.existing_file("run", &r.join("run.jsonl"));
    }
    let domain = match a.domain.or_else(|| f.domain.clone()) {
        None => Some(ColorDomain::Ycc),
        Some(d) => match d.to_ascii_lowercase().as_str() {
            "rgb" => Some(ColorDomain::Rgb),
            "ycc" | "ycbcr" => Some(ColorDomain::Ycc),
            _ => {
                p.push(format!("domain: unknown value {d:?} (expected rgb or ycc)"));
                None
            }
        },
    };
    p.finish()?;
    let (run, domain) = (run.expect("checked"), domain.expect("checked"));
    let out = a.out.or_else(|| f.out.clone()).unwrap_or_else(|| run.clone());

    let summary: Value = serde_json::from_str(
        &fs::read_to_string(run.join("summary.json")).context("reading summary.json")?,
    )
    .context("parsing summary.json")?;
    let run_cfg: AttackSettings = serde_json::from_value(summary["config"].clone())
        .context("summary.json has no attack configuration")?;
    let data_root = run_cfg
        .data
        .parent()
        .ok_or_else(|| anyhow!("dataset manifest path has no directory"))?
        .to_path_buf();
    let lines = fs::read_to_string(run.join("run.jsonl")).context("reading run.jsonl")?;
    let transform = ColorTransform::ycbcr();
    let mut deltas: Vec<Image<antiforensics::image::Rgb>> = Vec::new();
    let mut zetas: Vec<Image<antiforensics::image::Ycc>> = Vec::new();
    for (n, line) in lines.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: RunRecord = serde_json::from_str(line).with_context(|| format!("run.jsonl line {}", n + 1))?;
        let Some(adv_path) = rec.adversarial_path else { continue };
        let clean = load_image(&data_root.join(&rec.clean_path))?;
        let adv = load_image(&run.join(adv_path))?;
        match domain {
            ColorDomain::Rgb => deltas.push(adv.sub(&clean)?),
            ColorDomain::Ycc => zetas.push(transform.ycc_difference(&clean, &adv)?),
        }
    }
    if deltas.is_empty() && zetas.is_empty() {
        return Err(anyhow!("the run has no saved adversarial images (was it run with --no-images?)"));
    }
    let extent = |data: &[f32]| data.iter().fold(0.0f64, |m, &v| m.max((v as f64).abs()));
    let hists = match domain {
        ColorDomain::Rgb => {
            let eps = deltas.iter().map(|d| extent(d.data())).fold(0.0, f64::max);
            perturbation_histogram(&deltas.iter().collect::<Vec<_>>(), domain, eps.ceil())?
        }
        ColorDomain::Ycc => {
            let eps = zetas.iter().map(|d| extent(d.data())).fold(0.0, f64::max);
            perturbation_histogram(&zetas.iter().collect::<Vec<_>>(), domain, eps.ceil())?
        }
    };
    let mut written = Vec::new();
    let mut channels = Vec::new();
    for h in &hists {
        let path = out.join(format!("hist_{}.csv", h.channel.to_ascii_lowercase()));
        write_text(&path, &h.to_csv())?;
        written.push(path_str(&path));
        let (pos, neg) = h.signed_modes();
        channels.push(json!({
            "channel": h.channel,
            "total": h.total(),
            "outermost_mass": h.outermost_mass(),
            "mode_magnitude": h.mode_magnitude(),
            "positive_mode": pos,
            "negative_mode": neg,
        }));
    }
    let settings = HistogramSettings {
        domain: domain.channel_names().join("/"),
        attack: run_cfg.attack,
        label: run_cfg.label,
    };
    let js = out.join("histogram.json");
    write_json(&js, &json!({"command": "histogram", "config": settings, "channels": channels}))?;
    written.push(path_str(&js));
    Ok(json!({"command": "histogram", "outputs": written, "channels": channels}))
}

// ---------------------------------------------------------------------------
// sweep

#[derive(Serialize)]
struct SweepSettings {
    data: PathBuf,
    split: Split,
    label: Label,
    sources: Vec<PathBuf>,
    attack: AttackConfig,
    budgets: Vec<AttackBudget>,
}

fn sweep_cmd(ctx: &Ctx, a: crate::SweepArgs) -> Result<Value> {
    let mut p = Problems::default();
    let f = &ctx.file;
    let data = resolve_data(&mut p, a.data.data, f);
    let split = resolve_split(&mut p, a.data.split, f);
    let label = resolve_label(&mut p, a.attack.label.clone(), f);
    let base = resolve_attack_base(&mut p, &a.attack, f);
    let sources = list_or_file(a.sources, &f.sources);
    require_nonempty(&mut p, "source", &sources);
    let budgets: Vec<AttackBudget> = if !a.budgets.is_empty() {
        a.budgets
            .iter()
            .filter_map(|s| AttackBudget::parse(s).map_err(|e| p.push(format!("budgets: {e}"))).ok())
            .collect()
    } else if let Some(b) = &f.budgets {
        b.clone()
    } else if base.method == AttackMethod::Ycc {
        vec![default_budget(AttackMethod::Ycc)]
    } else {
        DEFAULT_SCALAR_SWEEP.iter().map(|&e| AttackBudget::Scalar(e)).collect()
    };
    if budgets.is_empty() && a.budgets.is_empty() {
        p.push("budgets: at least one budget is required");
    }
    for b in &budgets {
        let cfg = AttackConfig { budget: *b, ..base.clone() };
        p.extend(&format!("budget {}: ", budget_label(b)), cfg.problems());
    }
    let out = p.require("out", a.out.or_else(|| f.out.clone()));
    p.finish()?;
    let out = out.expect("checked");
    let settings = SweepSettings {
        data: data.expect("checked"),
        split,
        label,
        sources,
        attack: base,
        budgets,
    };

    let source = Source::load(&settings.sources)?;
    let images = load_split(&settings.data, split)?;
    let mut csv = String::from(
        "method,budget,asr,asr_quantized,attacked,failures,mean_psnr,mean_ssim,\
         mean_linf_r,mean_linf_g,mean_linf_b,mean_linf_y,mean_linf_cb,mean_linf_cr\n",
    );
    let mut rows = Vec::new();
    for b in &settings.budgets {
        let cfg = AttackConfig { budget: *b, ..settings.attack.clone() };
        let outcome = attack_batch(&cfg, source.gradient(), &images, label, &[source.detector()])?;
        let t = &outcome.targets[0];
        let reports = outcome
            .results
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.as_ref().map(|r| QualityReport::compute(&outcome.clean.images[i], &r.adversarial)))
            .collect::<antiforensics::Result<Vec<_>>>()?;
        let q = summarize(&reports);
        let failures = outcome.failures().count();
        csv.push_str(&format!(
            "{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            cfg.method,
            budget_label(b),
            t.asr.asr,
            t.asr_quantized.asr,
            outcome.attacked_count(),
            failures,
            q.mean_psnr,
            q.mean_ssim,
            q.mean_linf_rgb[0],
            q.mean_linf_rgb[1],
            q.mean_linf_rgb[2],
            q.mean_linf_ycc[0],
            q.mean_linf_ycc[1],
            q.mean_linf_ycc[2],
        ));
        rows.push(json!({
            "budget": b,
            "asr": t.asr,
            "asr_quantized": t.asr_quantized,
            "attacked": outcome.attacked_count(),
            "failures": failures,
            "quality": q,
        }));
    }
    write_text(&out, &csv)?;
    let js = json_beside(&out);
    write_json(&js, &json!({"command": "sweep", "config": settings, "rows": rows}))?;
    Ok(json!({
        "command": "sweep",
        "outputs": [path_str(&out), path_str(&js)],
        "asr": rows.iter().map(|r| r["asr"]["asr"].clone()).collect::<Vec<_>>(),
    }))
}
