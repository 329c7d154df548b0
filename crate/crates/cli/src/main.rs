//! `catpose`: dataset synthesis, training, evaluation, ablations and curves.

mod config;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use catpose_core::eval::{evaluate, write_curves, write_report, CurveGrids, Metric};
use catpose_core::learn::{
    evaluate_model, history_csv, read_checkpoint, train, write_checkpoint, CheckpointFormat, ModelConfig, TrainConfig,
    Trainer, Variant,
};
use catpose_core::synth::{
    generate_dataset, read_dataset, read_predictions, standard_categories, write_dataset, write_predictions, Dataset,
    SynthConfig,
};
use catpose_core::{Detection, Error, EvalReport};

use config::ConfigFile;

const DATA_DIR_ENV: &str = "CATPOSE_DATA_DIR";

const EXIT_VALIDATION: u8 = 3;
const EXIT_IO: u8 = 4;
const EXIT_DIVERGENCE: u8 = 5;

#[derive(Parser, Debug)]
#[command(name = "catpose", version, about = "Category-level pose estimation toolkit")]
struct Cli {
    /// key=value file supplying defaults for any long option; flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Upper bound on worker threads. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Directory for default input and output paths.
    #[arg(long, global = true, env = DATA_DIR_ENV)]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Train the reconstruction network.
    Train(TrainArgs),
    /// Evaluate predictions or a checkpoint against a dataset.
    Eval(EvalArgs),
    /// Train every ablation variant with a shared seed and tabulate mAP.
    Ablate(AblateArgs),
    /// Write AP-versus-threshold curves for a prediction file.
    Curves(CurvesArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n_per_category: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated subset of the standard categories.
    #[arg(long)]
    categories: Option<String>,
    /// Observed pixels per instance.
    #[arg(long)]
    n_p: Option<usize>,
    /// Prior and model points.
    #[arg(long)]
    n_m: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct TrainOpts {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_main: Option<f64>,
    #[arg(long)]
    lr_disc: Option<f64>,
    #[arg(long)]
    decay_epoch: Option<usize>,
    #[arg(long)]
    decay_factor: Option<f64>,
    #[arg(long)]
    c: Option<usize>,
    #[arg(long)]
    c_g: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    ngph_to_nocs: bool,
    /// Train on all but every k-th instance per category (0 uses everything).
    #[arg(long)]
    holdout_every: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct AblationFlags {
    #[arg(long)]
    no_ngph: bool,
    #[arg(long)]
    no_decouple: bool,
    #[arg(long)]
    no_adversarial: bool,
    #[arg(long)]
    direct_regression: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Loss history CSV (default: checkpoint path with `.loss.csv`).
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    /// Checkpoint encoding: text or binary.
    #[arg(long)]
    format: Option<String>,
    #[command(flatten)]
    opts: TrainOpts,
    #[command(flatten)]
    flags: AblationFlags,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, conflicts_with = "checkpoint")]
    predictions: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Report path (JSONL).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Curve CSV prefix (default: report path without extension).
    #[arg(long)]
    curves: Option<PathBuf>,
    /// Write the checkpoint's predictions here.
    #[arg(long, requires = "checkpoint")]
    predictions_out: Option<PathBuf>,
    /// Evaluate only every k-th instance per category (0 uses everything).
    #[arg(long)]
    holdout_every: Option<usize>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Comparison table (CSV).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated variants (default: all).
    #[arg(long)]
    variants: Option<String>,
    #[command(flatten)]
    opts: TrainOpts,
}

#[derive(Args, Debug)]
struct CurvesArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    predictions: PathBuf,
    /// Output prefix; files are `<prefix>_{iou,rotation,translation}.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Resolved options shared by commands.
struct Ctx {
    file: ConfigFile,
    data_dir: PathBuf,
}

impl Ctx {
    fn path(&self, flag: &Option<PathBuf>, key: &str, default_name: &str) -> Result<PathBuf, Error> {
        if let Some(p) = flag {
            return Ok(p.clone());
        }
        if let Some(p) = self.file.get::<PathBuf>(key)? {
            return Ok(p);
        }
        Ok(self.data_dir.join(default_name))
    }

    fn value<T: std::str::FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, Error> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.file.get(key),
        }
    }

    fn flag(&self, set: bool, key: &str) -> Result<bool, Error> {
        Ok(set || self.file.get::<bool>(key)?.unwrap_or(false))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => EXIT_IO,
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        Error::InvalidInput(_) | Error::Degenerate(_) | Error::Parse { .. } | Error::Validation(_) => EXIT_VALIDATION,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    if cli.threads == 0 {
        return Err(Error::InvalidInput("--threads must be at least 1".into()));
    }
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let ctx = Ctx { file, data_dir: cli.data_dir.clone().unwrap_or_else(|| PathBuf::from(".")) };
    match cli.command {
        Command::Synth(a) => cmd_synth(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Ablate(a) => cmd_ablate(&ctx, a),
        Command::Curves(a) => cmd_curves(&ctx, a),
    }
}

fn ensure_parent(path: &Path) -> Result<(), Error> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            if dir.is_dir() {
                Ok(())
            } else {
                Err(Error::Io {
                    path: dir.to_path_buf(),
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist"),
                })
            }
        }
        _ => Ok(()),
    }
}

fn ensure_file(path: &Path) -> Result<(), Error> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found"),
        })
    }
}

fn cmd_synth(ctx: &Ctx, a: SynthArgs) -> Result<(), Error> {
    let out = ctx.path(&a.out, "out", "dataset.jsonl")?;
    ensure_parent(&out)?;
    let n = ctx.value(a.n_per_category, "n_per_category")?.unwrap_or(100);
    let seed = ctx.value(a.seed, "seed")?.unwrap_or(0);
    let mut cfg = SynthConfig::default();
    if let Some(v) = ctx.value(a.n_p, "n_p")? {
        cfg.n_p = v;
    }
    if let Some(v) = ctx.value(a.n_m, "n_m")? {
        cfg.n_m = v;
    }
    let mut specs = standard_categories();
    if let Some(list) = ctx.value(a.categories, "categories")? {
        let wanted: Vec<&str> = list.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        if let Some(bad) = wanted.iter().find(|w| !specs.iter().any(|s| s.name == **w)) {
            return Err(Error::Validation(format!("unknown category {bad}")));
        }
        specs.retain(|s| wanted.contains(&s.name.as_str()));
    }
    let ds = generate_dataset(&specs, n, seed, &cfg)?;
    write_dataset(&out, &ds)?;
    println!(
        "synth: {} instances ({} categories, seed {seed}) -> {}",
        ds.instances.len(),
        ds.categories.len(),
        out.display()
    );
    Ok(())
}

fn configs(ctx: &Ctx, o: &TrainOpts) -> Result<(ModelConfig, TrainConfig), Error> {
    let mut tc = TrainConfig::default();
    let mut mc = ModelConfig::default();
    if let Some(v) = ctx.value(o.seed, "seed")? {
        tc.seed = v;
    }
    if let Some(v) = ctx.value(o.epochs, "epochs")? {
        tc.epochs = v;
    }
    if let Some(v) = ctx.value(o.batch_size, "batch_size")? {
        tc.batch_size = v;
    }
    if let Some(v) = ctx.value(o.lr_main, "lr_main")? {
        tc.lr_main = v;
    }
    if let Some(v) = ctx.value(o.lr_disc, "lr_disc")? {
        tc.lr_disc = v;
    }
    if let Some(v) = ctx.value(o.decay_epoch, "decay_epoch")? {
        tc.decay_epoch = v;
    }
    if let Some(v) = ctx.value(o.decay_factor, "decay_factor")? {
        tc.decay_factor = v;
    }
    if let Some(v) = ctx.value(o.c, "c")? {
        mc.c = v;
    }
    if let Some(v) = ctx.value(o.c_g, "c_g")? {
        mc.c_g = v;
    }
    if let Some(v) = ctx.value(o.hidden, "hidden")? {
        mc.hidden = v;
    }
    mc.ngph_to_nocs = ctx.flag(o.ngph_to_nocs, "ngph_to_nocs")?;
    tc.validate()?;
    mc.validate()?;
    Ok((mc, tc))
}

fn load_split(ctx: &Ctx, dataset: &Option<PathBuf>, holdout: Option<usize>) -> Result<(Dataset, Option<Dataset>), Error> {
    let path = ctx.path(dataset, "dataset", "dataset.jsonl")?;
    ensure_file(&path)?;
    let ds = read_dataset(&path)?;
    let k = ctx.value(holdout, "holdout_every")?.unwrap_or(0);
    if k == 0 {
        return Ok((ds, None));
    }
    let (train, test) = ds.split_every(k);
    Ok((train, Some(test)))
}

fn cmd_train(ctx: &Ctx, a: TrainArgs) -> Result<(), Error> {
    let out = ctx.path(&a.out, "checkpoint", "model.ckpt")?;
    ensure_parent(&out)?;
    let csv = match &a.loss_csv {
        Some(p) => p.clone(),
        None => match ctx.file.get::<PathBuf>("loss_csv")? {
            Some(p) => p,
            None => out.with_extension("loss.csv"),
        },
    };
    ensure_parent(&csv)?;
    let fmt_name = ctx.value(a.format.clone(), "format")?.unwrap_or_else(|| "text".into());
    let fmt = CheckpointFormat::from_name(&fmt_name)
        .ok_or_else(|| Error::Validation(format!("unknown checkpoint format {fmt_name}")))?;
    let (mut mc, mut tc) = configs(ctx, &a.opts)?;
    let f = &a.flags;
    mc.no_ngph = ctx.flag(f.no_ngph, "no_ngph")?;
    mc.no_decouple = ctx.flag(f.no_decouple, "no_decouple")?;
    mc.direct_regression = ctx.flag(f.direct_regression, "direct_regression")?;
    tc.adversarial = !ctx.flag(f.no_adversarial, "no_adversarial")?;
    let (train_ds, _) = load_split(ctx, &a.dataset, a.opts.holdout_every)?;
    mc.n_m = train_ds.config.n_m;

    let mut trainer = Trainer::new(&train_ds, mc, tc)?;
    for _ in 0..trainer.config.epochs {
        trainer.run_epoch()?;
    }
    let steps = trainer.history.len();
    let last = trainer.history.last().map_or(f64::NAN, |r| r.total);
    let result = trainer.into_output();
    write_checkpoint(&out, &result.model, &result.disc, fmt)?;
    std::fs::write(&csv, history_csv(&result.history)).map_err(|e| Error::Io { path: csv.clone(), source: e })?;
    println!(
        "train: {} instances, {steps} steps, final loss {last:.6} -> {} (history {})",
        train_ds.instances.len(),
        out.display(),
        csv.display()
    );
    Ok(())
}

fn summary(report: &EvalReport) -> String {
    Metric::ALL
        .iter()
        .map(|m| match report.mean_ap(*m) {
            Some(v) => format!("{}={v:.3}", m.name()),
            None => format!("{}=-", m.name()),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn cmd_eval(ctx: &Ctx, a: EvalArgs) -> Result<(), Error> {
    let out = ctx.path(&a.out, "report", "report.jsonl")?;
    ensure_parent(&out)?;
    let (full, held_out) = load_split(ctx, &a.dataset, a.holdout_every)?;
    let ds = held_out.unwrap_or(full);
    let gts = ds.ground_truths()?;
    let report = if let Some(ckpt) = &a.checkpoint {
        ensure_file(ckpt)?;
        let (model, _) = read_checkpoint(ckpt)?;
        let ev = evaluate_model(&model, &ds)?;
        if let Some(p) = &a.predictions_out {
            ensure_parent(p)?;
            write_predictions(p, &ev.predictions)?;
        }
        println!("eval: depth L1 {:.4} m, {} alignment failures", ev.depth_l1, ev.failures.len());
        ev.report
    } else {
        let pred_path = ctx.path(&a.predictions, "predictions", "predictions.jsonl")?;
        ensure_file(&pred_path)?;
        let dets = detections_for(&ds, &pred_path)?;
        evaluate(&dets, &gts, &CurveGrids::default())
    };
    write_report(&out, &report)?;
    let prefix = a.curves.clone().unwrap_or_else(|| out.with_extension(""));
    write_curves(&prefix, &report.curves)?;
    println!("eval: {} ground truths, {} -> {}", gts.len(), summary(&report), out.display());
    Ok(())
}

/// Reads predictions and checks that every id and category refers to a
/// dataset instance.
fn detections_for(ds: &Dataset, path: &Path) -> Result<Vec<Detection>, Error> {
    let preds = read_predictions(path)?;
    let mut unknown = BTreeSet::new();
    let mut wrong_category = BTreeSet::new();
    for p in &preds {
        match ds.instances.iter().find(|i| i.id == p.id) {
            None => {
                unknown.insert(p.id);
            }
            Some(i) if i.category != p.category => {
                wrong_category.insert(p.id);
            }
            Some(_) => {}
        }
    }
    if !unknown.is_empty() || !wrong_category.is_empty() {
        let list = |s: &BTreeSet<u64>| s.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
        return Err(Error::Validation(format!(
            "predictions do not match the dataset: ids missing from dataset [{}], ids with a different category [{}]",
            list(&unknown),
            list(&wrong_category)
        )));
    }
    preds.iter().map(|p| p.detection()).collect()
}

fn cmd_ablate(ctx: &Ctx, a: AblateArgs) -> Result<(), Error> {
    let out = ctx.path(&a.out, "ablation", "ablation.csv")?;
    ensure_parent(&out)?;
    let variants = match ctx.value(a.variants.clone(), "variants")? {
        Some(list) => list
            .split(',')
            .map(|s| Variant::from_name(s.trim()).ok_or_else(|| Error::Validation(format!("unknown variant {s}"))))
            .collect::<Result<Vec<_>, _>>()?,
        None => Variant::ALL.to_vec(),
    };
    let (mut mc, tc) = configs(ctx, &a.opts)?;
    let holdout = Some(ctx.value(a.opts.holdout_every, "holdout_every")?.unwrap_or(5));
    let (train_ds, test_ds) = load_split(ctx, &a.dataset, holdout)?;
    let test_ds = test_ds.unwrap_or_else(|| train_ds.clone());
    mc.n_m = train_ds.config.n_m;

    let mut table = String::from("variant");
    for m in Metric::ALL {
        table.push(',');
        table.push_str(m.name());
    }
    table.push_str(",depth_l1\n");
    for v in variants {
        let (mut m, mut t) = (mc.clone(), tc.clone());
        v.apply(&mut m, &mut t);
        let trained = train(&train_ds, m, t)?;
        let ev = evaluate_model(&trained.model, &test_ds)?;
        table.push_str(v.name());
        for metric in Metric::ALL {
            table.push(',');
            if let Some(ap) = ev.report.mean_ap(metric) {
                table.push_str(&ap.to_string());
            }
        }
        table.push_str(&format!(",{}\n", ev.depth_l1));
        println!("ablate[{}]: {} depth_l1={:.4}", v.name(), summary(&ev.report), ev.depth_l1);
    }
    std::fs::write(&out, table).map_err(|e| Error::Io { path: out.clone(), source: e })?;
    println!("ablate: table -> {}", out.display());
    Ok(())
}

fn cmd_curves(ctx: &Ctx, a: CurvesArgs) -> Result<(), Error> {
    let path = ctx.path(&a.dataset, "dataset", "dataset.jsonl")?;
    ensure_file(&path)?;
    ensure_file(&a.predictions)?;
    let prefix = ctx.path(&a.out, "curves", "curves")?;
    ensure_parent(&prefix)?;
    let ds = read_dataset(&path)?;
    let dets = detections_for(&ds, &a.predictions)?;
    let report = evaluate(&dets, &ds.ground_truths()?, &CurveGrids::default());
    let files = write_curves(&prefix, &report.curves)?;
    println!("curves: {} files with prefix {}", files.len(), prefix.display());
    Ok(())
}
