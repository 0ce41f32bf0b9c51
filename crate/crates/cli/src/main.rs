use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use loadsafe_core::arch::{
    receptive_field, ArchitectureSpec, LogisticNetConfig, DEFAULT_RESOLUTION, HIGH_RESOLUTION_CAP,
    INCEPTION_V3_MAX_RECEPTIVE_FIELD, RESNET101_MAX_RECEPTIVE_FIELD,
};
use loadsafe_core::dataset::{
    class_report, generate_synthetic, load_manifest, relabel_for_stage, split_stratified, ClassCounts, Stage,
    SyntheticConfig, DEFAULT_VAL_FRACTION,
};
use loadsafe_core::imaging::{read_ppm, AugmentationConfig};
use loadsafe_core::pipeline::{
    compute_metrics, evaluate, train, Checkpoint, LabeledSet, TrainConfig, TwoStageClassifier,
    DEFAULT_REVIEW_THRESHOLD,
};
use loadsafe_core::Exec;
use loadsafe_service::{Platform, ReviewStore, ServiceConfig, SystemClock, DEFAULT_LEASE_SECONDS};

#[derive(Parser)]
#[command(name = "loadsafe", version, about = "Two-stage cargo load-safety classification and review platform")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic SAFE/UNSAFE/UNUSABLE dataset with a manifest.
    GenData(GenData),
    /// Train one stage on a manifest and write the best-epoch checkpoint.
    Train(Train),
    /// Confusion matrix and metrics of a checkpoint on a manifest.
    Eval(Eval),
    /// Receptive-field table of LogisticNet or a JSON architecture spec.
    Rf(Rf),
    /// Run the two-stage decision tree on PPM images.
    Classify(Classify),
    /// Serve the intake and review HTTP API.
    Serve(Serve),
    /// Export operator-labeled submissions from a data directory.
    Export(Export),
}

#[derive(Args)]
struct GenData {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Images per class.
    #[arg(long, default_value_t = 30, conflicts_with_all = ["counts", "reference_total"])]
    per_class: usize,
    /// Explicit SAFE,UNSAFE,UNUSABLE counts.
    #[arg(long, value_parser = parse_counts)]
    counts: Option<[usize; 3]>,
    /// Total image count split in the reference corpus proportions.
    #[arg(long)]
    reference_total: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Side length in pixels.
    #[arg(long, default_value_t = 64)]
    size: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Arch {
    /// Width-reduced LogisticNet for CPU training.
    Compact,
    /// LogisticNet with AlexNet widths.
    Alexnet,
}

impl Arch {
    fn build(self, resolution: usize) -> Result<ArchitectureSpec> {
        let cfg = match self {
            Arch::Compact => LogisticNetConfig::compact(2),
            Arch::Alexnet => LogisticNetConfig::alexnet(2),
        };
        Ok(cfg.build(resolution)?)
    }
}

fn parse_counts(s: &str) -> Result<[usize; 3], String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| format!("`{p}` is not a count")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|v: Vec<usize>| format!("expected SAFE,UNSAFE,UNUSABLE, got {} values", v.len()))
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    let n: u8 = s.parse().map_err(|_| format!("stage must be 1 or 2, got `{s}`"))?;
    Stage::try_from(n).map_err(|e| e.to_string())
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    manifest: PathBuf,
    /// 1 = usable vs unusable, 2 = safe vs unsafe.
    #[arg(long, value_parser = parse_stage)]
    stage: Stage,
    /// Checkpoint path to write.
    #[arg(long)]
    out: PathBuf,
    /// History CSV path (defaults to the checkpoint path with a .csv extension).
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    resolution: usize,
    #[arg(long, value_enum, default_value_t = Arch::Compact)]
    arch: Arch,
    #[arg(long, default_value_t = DEFAULT_VAL_FRACTION)]
    val_fraction: f64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    learning_rate: f64,
    #[arg(long, default_value_t = 5)]
    patience: usize,
    /// Train on raw images only.
    #[arg(long)]
    no_augment: bool,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Defaults to the stage stored in the checkpoint.
    #[arg(long, value_parser = parse_stage)]
    stage: Option<Stage>,
    /// Positive class index (1 = UNUSABLE or UNSAFE).
    #[arg(long, default_value_t = 1)]
    positive: usize,
}

#[derive(Args)]
struct Rf {
    /// Architecture spec JSON; LogisticNet when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    resolution: usize,
    #[arg(long, value_enum, default_value_t = Arch::Alexnet)]
    arch: Arch,
}

#[derive(Args)]
struct Classify {
    #[arg(long)]
    stage1: PathBuf,
    #[arg(long)]
    stage2: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_REVIEW_THRESHOLD)]
    review_threshold: f64,
    /// PPM images.
    #[arg(required = true)]
    images: Vec<PathBuf>,
}

#[derive(Args)]
struct Serve {
    #[arg(long, env = "LOADSAFE_LISTEN", default_value = "127.0.0.1:8080")]
    listen: SocketAddr,
    #[arg(long, env = "LOADSAFE_DATA_DIR")]
    data_dir: PathBuf,
    #[arg(long, env = "LOADSAFE_STAGE1")]
    stage1: PathBuf,
    #[arg(long, env = "LOADSAFE_STAGE2")]
    stage2: Option<PathBuf>,
    #[arg(long, env = "LOADSAFE_REVIEW_THRESHOLD", default_value_t = DEFAULT_REVIEW_THRESHOLD)]
    review_threshold: f64,
    #[arg(long, env = "LOADSAFE_LEASE_SECONDS", default_value_t = DEFAULT_LEASE_SECONDS)]
    lease_seconds: i64,
}

#[derive(Args)]
struct Export {
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn gen_data(a: GenData) -> Result<()> {
    let cfg = match (a.counts, a.reference_total) {
        (Some(c), _) => SyntheticConfig { counts: ClassCounts(c), seed: a.seed, size: a.size },
        (None, Some(total)) => SyntheticConfig::reference_ratio(total, a.seed, a.size),
        (None, None) => SyntheticConfig::balanced(a.per_class, a.seed, a.size),
    };
    let m = generate_synthetic(&a.out, &cfg)?;
    let report = class_report(&m);
    println!(
        "wrote {} images to {} (SAFE {}, UNSAFE {}, UNUSABLE {})",
        m.records.len(),
        a.out.display(),
        report.counts.0[0],
        report.counts.0[1],
        report.counts.0[2]
    );
    if let Some(w) = report.warning {
        println!("warning: {w}");
    }
    Ok(())
}

fn load_set(manifest: &loadsafe_core::dataset::DatasetManifest, stage: Stage, resolution: usize) -> Result<LabeledSet> {
    let view = relabel_for_stage(manifest, stage);
    for w in &view.warnings {
        eprintln!("warning: {w}");
    }
    Ok(LabeledSet::load(&view, resolution, Exec::default())?)
}

fn train_cmd(a: Train) -> Result<()> {
    let m = load_manifest(&a.manifest).with_context(|| format!("loading {}", a.manifest.display()))?;
    let (train_m, val_m) = split_stratified(&m, a.val_fraction, a.seed)?;
    let train_set = load_set(&train_m, a.stage, a.resolution)?;
    let val_set = load_set(&val_m, a.stage, a.resolution)?;
    println!("stage {}: {} training and {} validation images", a.stage.number(), train_set.len(), val_set.len());
    let spec = a.arch.build(a.resolution)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        seed: a.seed,
        augmentation: (!a.no_augment).then(|| AugmentationConfig { seed: a.seed, ..Default::default() }),
        patience: a.patience,
        resolution: a.resolution,
        ..TrainConfig::default()
    };
    let (ckpt, history) = train(&spec, &train_set, &val_set, &cfg)?;
    for r in &history.rows {
        println!("epoch {:3}  loss {:.4}  valloss {:.4}  valacc {:.4}", r.epoch, r.loss, r.valloss, r.valacc);
    }
    ckpt.save(&a.out)?;
    let history_path = a.history.unwrap_or_else(|| a.out.with_extension("csv"));
    history.write_csv(&history_path)?;
    let best = &history.rows[ckpt.epoch];
    println!(
        "best epoch {} (valloss {:.4}, valacc {:.4}); checkpoint {}; history {}",
        ckpt.epoch,
        best.valloss,
        best.valacc,
        a.out.display(),
        history_path.display()
    );
    Ok(())
}

fn eval_cmd(a: Eval) -> Result<()> {
    if a.positive > 1 {
        bail!("--positive must be 0 or 1");
    }
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let stage = a.stage.or(ckpt.stage).context("the checkpoint records no stage; pass --stage")?;
    let m = load_manifest(&a.manifest)?;
    let set = load_set(&m, stage, ckpt.resolution().0)?;
    let cm = evaluate(&ckpt, &set, a.positive, Exec::default())?;
    print_json(&serde_json::json!({
        "stage": stage.number(),
        "positive": stage.labels()[a.positive],
        "confusion": cm,
        "metrics": compute_metrics(&cm)?,
    }))
}

fn rf_cmd(a: Rf) -> Result<()> {
    let spec = match &a.spec {
        Some(p) => ArchitectureSpec::from_json(&std::fs::read_to_string(p).with_context(|| p.display().to_string())?)?,
        None => a.arch.build(a.resolution)?,
    };
    spec.validate()?;
    println!("{:>5}  {:<10} {:>6} {:>6} {:>6}", "layer", "kind", "rf", "jump", "start");
    let rows = receptive_field(&spec);
    for r in &rows {
        println!("{:>5}  {:<10} {:>6} {:>6} {:>6}", r.layer, r.kind, r.rf, r.jump, r.start);
    }
    let max = rows.iter().map(|r| r.rf).max().unwrap_or(1);
    println!("max receptive field of `{}` at {} px: {max}", spec.name, spec.input_shape.height);
    println!(
        "reference: ResNet101 {RESNET101_MAX_RECEPTIVE_FIELD}, InceptionV3 {INCEPTION_V3_MAX_RECEPTIVE_FIELD}, resolution cap {HIGH_RESOLUTION_CAP}"
    );
    Ok(())
}

fn classify_cmd(a: Classify) -> Result<()> {
    let s1 = Checkpoint::load(&a.stage1)?;
    let s2 = a.stage2.as_ref().map(Checkpoint::load).transpose()?;
    let clf = TwoStageClassifier::new(s1, s2, a.review_threshold)?;
    for path in &a.images {
        let v = clf.classify(&read_ppm(path)?)?;
        println!("{}", serde_json::json!({ "image": path, "verdict": v }));
    }
    Ok(())
}

fn serve_cmd(a: Serve) -> Result<()> {
    let cfg = ServiceConfig {
        data_dir: a.data_dir,
        stage1: a.stage1,
        stage2: a.stage2,
        review_threshold: a.review_threshold,
        lease_seconds: a.lease_seconds,
    };
    let platform = Arc::new(Platform::open(&cfg).context("refusing to start")?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(a.listen).await?;
        println!("listening on {}", listener.local_addr()?);
        loadsafe_service::http::serve(listener, platform).await?;
        Ok(())
    })
}

fn export_cmd(a: Export) -> Result<()> {
    let store = ReviewStore::open(&a.data_dir, Arc::new(SystemClock), DEFAULT_LEASE_SECONDS)?;
    let m = store.export(&a.out)?;
    println!("exported {} reviewed records to {}", m.records.len(), a.out.join("manifest.jsonl").display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Rf(a) => rf_cmd(a),
        Command::Classify(a) => classify_cmd(a),
        Command::Serve(a) => serve_cmd(a),
        Command::Export(a) => export_cmd(a),
    }
}
