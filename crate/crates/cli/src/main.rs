use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use daal_core::formats::read_labeled_volume;
use daal_core::harness::{
    fold_records, hr_table, mean_table, read_results, run_cv, std_table, stratified_split,
    synth_generate, write_report, Cohort, CvOptions, ModelDims, SynthConfig,
};
use daal_core::metrics::{c_index, hazard_ratio, median, split_at, Group};
use daal_core::optim::{
    gradcheck_all, train, write_curve_csv, TrainConfig, Validation, GRADCHECK_TOLERANCE,
};
use daal_core::survival::{load_checkpoint, save_checkpoint, MethodKind, MultiplePlaneTraining};
use daal_core::volume::{export_slices, WindowConfig};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "daal",
    version,
    about = "Anchor-attention survival models on slice feature bags"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pick anchor slices from a tumor mask and export resized tumor tiles.
    SelectSlices(SelectSlicesArgs),
    /// Write a planted-signal synthetic cohort (manifest + FVEC files).
    Synth(SynthArgs),
    /// Train one model on a manifest and save a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a manifest.
    Eval(EvalArgs),
    /// Cross-validated sweep over methods and slice counts.
    Cv(CvArgs),
    /// Finite-difference check of every method's analytic gradient.
    Gradcheck(GradcheckArgs),
    /// Render result tables from a `cv` output directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct SelectSlicesArgs {
    #[arg(long)]
    intensities: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long, default_value_t = 0)]
    kx1: usize,
    #[arg(long, default_value_t = 0)]
    kx2: usize,
    #[arg(long, default_value_t = 0)]
    ky1: usize,
    #[arg(long, default_value_t = 0)]
    ky2: usize,
    #[arg(long, default_value_t = 0)]
    kz1: usize,
    #[arg(long, default_value_t = 0)]
    kz2: usize,
    /// Output tile edge length in pixels.
    #[arg(long, default_value_t = 224)]
    size: usize,
    #[arg(long, default_value = "patient")]
    patient: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 300)]
    patients: usize,
    #[arg(long, default_value_t = 9)]
    slices: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 0.3)]
    censor: f64,
    #[arg(long, default_value_t = 0)]
    signal_dim: usize,
    #[arg(long, default_value_t = 1.0)]
    anchor_boost: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value_t = 64)]
    query_dim: usize,
    #[arg(long, default_value_t = 64)]
    info_dim: usize,
    #[arg(long, default_value_t = 64)]
    attn_dim: usize,
    #[arg(long, default_value_t = 32)]
    hidden_dim: usize,
}

impl ModelArgs {
    fn dims(&self) -> ModelDims {
        ModelDims {
            query_dim: self.query_dim,
            info_dim: self.info_dim,
            attn_dim: self.attn_dim,
            hidden_dim: self.hidden_dim,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "daal-single")]
    method: MethodKind,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction held out (stratified by event) for snapshot selection; 0 trains on all.
    #[arg(long, default_value_t = 0.0)]
    validation_fraction: f64,
    /// Train daal-multiple with a separate Cox loss per plane instead of through the max.
    #[arg(long)]
    per_plane: bool,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CvArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0.15)]
    test_fraction: f64,
    /// Comma-separated method names, or `all`.
    #[arg(long, default_value = "all")]
    methods: String,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "8,16,24,32,40,48,64,72,80,96"
    )]
    k_values: Vec<usize>,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    null_permutations: usize,
    /// Run cells one at a time (results are identical to the parallel run).
    #[arg(long)]
    serial: bool,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = GRADCHECK_TOLERANCE)]
    tolerance: f64,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    results: PathBuf,
    /// Mean C-index table; `_std` and `_hr` siblings are written next to it.
    #[arg(long)]
    out: PathBuf,
}

/// Failure that maps to exit code 2.
#[derive(Debug)]
struct NumericalFailure(String);

impl std::fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericalFailure {}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))
}

fn parse_methods(spec: &str) -> Result<Vec<MethodKind>> {
    if spec.trim() == "all" {
        return Ok(MethodKind::ALL.to_vec());
    }
    spec.split(',')
        .map(|s| s.trim().parse::<MethodKind>().map_err(anyhow::Error::from))
        .collect()
}

fn select_slices(a: SelectSlicesArgs) -> Result<()> {
    let volume = read_labeled_volume(&a.intensities, &a.mask)?;
    let window = WindowConfig {
        k_x1: a.kx1,
        k_x2: a.kx2,
        k_y1: a.ky1,
        k_y2: a.ky2,
        k_z1: a.kz1,
        k_z2: a.kz2,
    };
    let sel = export_slices(&volume, &a.patient, &window, a.size, &a.out)?;
    let tiles = sel.slices.iter().filter(|s| s.tile.is_some()).count();
    println!(
        "anchors x={} y={} z={}; {} slices, {} tiles, coverage {:.4}",
        sel.anchors.anchor_x,
        sel.anchors.anchor_y,
        sel.anchors.anchor_z,
        sel.slice_count,
        tiles,
        sel.coverage_ratio
    );
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_patients: a.patients,
        k: a.slices,
        f: a.dim,
        signal_dim: a.signal_dim,
        censor_target: a.censor,
        anchor_boost: a.anchor_boost,
        seed: a.seed,
    };
    let synth = synth_generate(&cfg)?;
    let manifest = synth.cohort.save(&a.out)?;
    let events = synth.cohort.events().iter().filter(|&&e| e).count();
    println!(
        "wrote {} ({} patients, {} events)",
        manifest.display(),
        synth.cohort.len(),
        events
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cohort = Cohort::load(&a.manifest)?;
    let mut config = a.model.dims().config(a.method, cohort.feature_dim()?);
    if a.per_plane {
        config.multiple_training = MultiplePlaneTraining::PerPlane;
    }
    let cfg = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        seed: a.seed,
    };
    let (train_idx, val_idx): (Vec<usize>, Vec<usize>) = if a.validation_fraction > 0.0 {
        let plan = stratified_split(
            &cohort.ids(),
            &cohort.events(),
            a.validation_fraction,
            2,
            a.seed,
        )?;
        let val: std::collections::HashSet<&String> = plan.test_ids.iter().collect();
        (0..cohort.len()).partition(|&i| !val.contains(&cohort.bags[i].patient_id().to_string()))
    } else {
        ((0..cohort.len()).collect(), Vec::new())
    };
    let pick = |idx: &[usize]| {
        (
            idx.iter()
                .map(|&i| cohort.bags[i].clone())
                .collect::<Vec<_>>(),
            idx.iter().map(|&i| cohort.labels[i]).collect::<Vec<_>>(),
        )
    };
    let (train_bags, train_labels) = pick(&train_idx);
    let (val_bags, val_labels) = pick(&val_idx);
    let validation = (!val_idx.is_empty()).then_some(Validation {
        bags: &val_bags,
        labels: &val_labels,
    });
    let outcome = train(config, &train_bags, &train_labels, &cfg, validation)?;
    let threshold = median(&outcome.model.risks(&train_bags)?);
    save_checkpoint(&outcome.model, a.seed, threshold, &a.out)?;
    let curve = fs::File::create(a.out.join("loss_curve.csv"))?;
    write_curve_csv(&outcome.curve, curve)?;
    let first = outcome.curve.first().map_or(f64::NAN, |p| p.train_loss);
    let last = outcome.curve.last().map_or(f64::NAN, |p| p.train_loss);
    println!(
        "{}: loss {first:.6} -> {last:.6}, selected epoch {}",
        a.method, outcome.selected_epoch
    );
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let (model, manifest) = load_checkpoint(&a.model)?;
    let cohort = Cohort::load(&a.manifest)?;
    let risks = model.risks(&cohort.bags)?;
    let c = c_index(&risks, &cohort.labels)?;
    let threshold = match manifest.train_median_risk {
        Some(t) => t,
        None => median(&risks).context("empty cohort")?,
    };
    let groups = split_at(threshold, &risks);
    let fit = hazard_ratio(&groups, &cohort.labels).ok();
    let value = json!({
        "method": model.kind(),
        "n_patients": cohort.len(),
        "c_index": c,
        "threshold": threshold,
        "n_high": groups.count(Group::High),
        "n_low": groups.count(Group::Low),
        "hr": fit.as_ref().filter(|f| f.converged).map(|f| f.hr),
        "beta": fit.as_ref().filter(|f| f.converged).map(|f| f.beta),
        "hr_converged": fit.as_ref().is_some_and(|f| f.converged),
        "risks": cohort.ids().into_iter().zip(&risks).map(|(id, r)| json!({"patient_id": id, "risk": r})).collect::<Vec<_>>(),
    });
    write_json(&a.out, &value)?;
    println!(
        "{}: C-index {c:.4} on {} patients",
        model.kind(),
        cohort.len()
    );
    Ok(())
}

fn cv_cmd(a: CvArgs) -> Result<()> {
    let cohort = Cohort::load(&a.manifest)?;
    let methods = parse_methods(&a.methods)?;
    let plan = stratified_split(
        &cohort.ids(),
        &cohort.events(),
        a.test_fraction,
        a.folds,
        a.seed,
    )?;
    let opts = CvOptions {
        train: TrainConfig {
            epochs: a.epochs,
            lr: a.lr,
            seed: a.seed,
        },
        dims: a.model.dims(),
        parallel: !a.serial,
        null_permutations: a.null_permutations,
    };
    let results = run_cv(&cohort, &plan, &methods, &a.k_values, &opts)?;
    write_report(&results, &a.out)?;
    let failed = results.cells.iter().filter(|c| c.error.is_some()).count();
    println!(
        "{} cells ({} failed), results in {}",
        results.cells.len(),
        failed,
        a.out.display()
    );
    Ok(())
}

fn gradcheck_cmd(a: GradcheckArgs) -> Result<()> {
    let reports = gradcheck_all(a.seed, a.tolerance)?;
    let mut failed = Vec::new();
    for (kind, report) in &reports {
        println!(
            "{:<14} {} max rel. error {:.3e}",
            kind.name(),
            if report.passed { "pass" } else { "FAIL" },
            report.max_error()
        );
        for block in &report.blocks {
            log::debug!("  {} {:.3e}", block.name, block.max_rel_error);
        }
        if !report.passed {
            failed.push(kind.name());
        }
    }
    if !failed.is_empty() {
        return Err(
            NumericalFailure(format!("gradient check failed for {}", failed.join(", "))).into(),
        );
    }
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let ext = path
        .extension()
        .map(|e| format!(".{}", e.to_string_lossy()))
        .unwrap_or_default();
    path.with_file_name(format!("{stem}_{suffix}{ext}"))
}

fn report_cmd(a: ReportArgs) -> Result<()> {
    let results = read_results(&a.results)?;
    if results.cells.is_empty() {
        bail!("no cells in {}", a.results.display());
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(&a.out, mean_table(&results))?;
    fs::write(sibling(&a.out, "std"), std_table(&results))?;
    fs::write(sibling(&a.out, "hr"), hr_table(&results))?;
    fs::write(
        sibling(&a.out, "folds").with_extension("json"),
        serde_json::to_string_pretty(&fold_records(&results))?,
    )?;
    print!("{}", mean_table(&results));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SelectSlices(a) => select_slices(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Cv(a) => cv_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::Report(a) => report_cmd(a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err.downcast_ref::<NumericalFailure>().is_some()
        || err
            .downcast_ref::<daal_core::Error>()
            .is_some_and(daal_core::Error::is_numerical);
    if numerical {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
