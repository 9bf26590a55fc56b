use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use sparse_repair::allocate::{prune, Allocation};
use sparse_repair::eval::{to_csv, DEFAULT_CLIP_BOUNDS};
use sparse_repair::graph::LayerKind;
use sparse_repair::repair::BnUpdate;
use sparse_repair::stats::paired_stats;
use sparse_repair::{io, CalibrationSet, Experiment, Model, RepairConfig, RepairVariant, SweepSpec};

/// Prune convolutional networks and repair them without labels.
#[derive(Parser)]
#[command(name = "sparse-repair", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Allocate a sparsity budget and magnitude-prune a model.
    Prune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_parser = parse_alloc)]
        alloc: Allocation,
        /// Target global sparsity as a fraction in (0, 1).
        #[arg(long, value_parser = parse_sparsity)]
        sparsity: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repair a pruned model against its dense reference.
    Repair {
        #[arg(long, value_parser = parse_variant)]
        variant: RepairVariant,
        #[arg(long)]
        dense: PathBuf,
        #[arg(long)]
        pruned: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write the per-channel scale factors here.
        #[arg(long)]
        plan_out: Option<PathBuf>,
        #[command(flatten)]
        repair: RepairArgs,
    },
    /// Top-1 accuracy of a model on a labeled test set.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 100)]
        batch_size: usize,
    },
    /// Allocation x sparsity x repair-variant grid, as CSV.
    Grid {
        #[command(flatten)]
        data: ExperimentArgs,
        #[arg(long, value_delimiter = ',', default_value = "0.9,0.925,0.95", value_parser = parse_sparsity)]
        sparsity: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "erk,lamp", value_parser = parse_alloc)]
        alloc: Vec<Allocation>,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "none,bn_only,bias_bn,affine_bn,asr_q50,asr_clip",
            value_parser = parse_variant
        )]
        variants: Vec<RepairVariant>,
        #[command(flatten)]
        repair: RepairArgs,
    },
    /// Clipped repair under several clip-bound configurations, as CSV.
    SweepClip {
        #[command(flatten)]
        data: ExperimentArgs,
        #[arg(long, value_delimiter = ',', default_value = "0.9,0.925,0.95", value_parser = parse_sparsity)]
        sparsity: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "erk,lamp", value_parser = parse_alloc)]
        alloc: Vec<Allocation>,
        /// Bounds as `lo:hi` pairs; defaults to the four standard settings.
        #[arg(long, value_delimiter = ',', value_parser = parse_bounds)]
        bounds: Vec<(f64, f64)>,
        #[command(flatten)]
        repair: RepairArgs,
    },
    /// Dump paired dense/pruned per-channel activation statistics.
    Stats {
        #[arg(long)]
        dense: PathBuf,
        #[arg(long)]
        pruned: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        #[arg(long, default_value_t = 128)]
        calib_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a model container.
    Inspect {
        #[arg(long)]
        model: PathBuf,
    },
}

#[derive(Args, Clone)]
struct RepairArgs {
    #[arg(long, default_value_t = 128)]
    calib_size: usize,
    #[arg(long, default_value_t = 20)]
    bn_batches: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-8)]
    eps: f64,
    #[arg(long, default_value_t = 0.5)]
    clip_lo: f64,
    #[arg(long, default_value_t = 2.0)]
    clip_hi: f64,
    /// Re-measure pruned statistics after each conv layer is repaired.
    #[arg(long)]
    sequential: bool,
    /// Use a moving-average BN update with this momentum instead of exact aggregates.
    #[arg(long)]
    bn_momentum: Option<f64>,
    /// Seed for calibration sampling and ordering.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl RepairArgs {
    fn config(&self, variant: RepairVariant) -> RepairConfig {
        RepairConfig {
            variant,
            eps: self.eps,
            clip_lo: self.clip_lo,
            clip_hi: self.clip_hi,
            bn_recal_batches: self.bn_batches,
            batch_size: self.batch_size,
            sequential: self.sequential,
            bn_update: self.bn_momentum.map_or(BnUpdate::Exact, BnUpdate::Momentum),
        }
    }
}

#[derive(Args)]
struct ExperimentArgs {
    /// Dense model.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    calib: PathBuf,
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value = "fixture")]
    dataset: String,
    #[arg(long, default_value_t = 250)]
    eval_batch: usize,
    /// Record per-cell wall time (makes output non-reproducible).
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_sparsity(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|e| format!("`{s}`: {e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("sparsity must be a fraction in (0, 1), got {v}"))
    }
}

fn parse_alloc(s: &str) -> std::result::Result<Allocation, String> {
    s.trim().parse().map_err(|e: sparse_repair::Error| e.to_string())
}

fn parse_variant(s: &str) -> std::result::Result<RepairVariant, String> {
    s.trim().parse().map_err(|e: sparse_repair::Error| e.to_string())
}

fn parse_bounds(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| format!("bounds `{s}` must look like lo:hi"))?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("`{lo}`: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("`{hi}`: {e}"))?;
    sparse_repair::repair::check_clip_bounds(lo, hi).map_err(|e| e.to_string())?;
    Ok((lo, hi))
}

fn require(paths: &[&Path]) -> Result<()> {
    for p in paths {
        if !p.is_file() {
            bail!("input file `{}` does not exist", p.display());
        }
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<Model> {
    io::load_model(path).with_context(|| format!("loading model `{}`", path.display()))
}

fn load_calib(path: &Path, size: usize, seed: u64) -> Result<CalibrationSet> {
    let pool = io::load_images(path).with_context(|| format!("loading calibration set `{}`", path.display()))?;
    Ok(CalibrationSet::sample(&pool, size, seed)?)
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing `{}`", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn experiment(data: &ExperimentArgs, repair: &RepairArgs) -> Result<Experiment> {
    require(&[&data.model, &data.calib, &data.images, &data.labels])?;
    let dense = load_model(&data.model)?;
    let calib = load_calib(&data.calib, repair.calib_size, repair.seed)?;
    let test_images = io::load_images(&data.images)?;
    let test_labels = io::load_labels(&data.labels)?;
    io::check_pairing(&test_images, &test_labels)?;
    Ok(Experiment {
        dense,
        calib,
        test_images,
        test_labels,
        dataset: data.dataset.clone(),
        seed: repair.seed,
        eval_batch: data.eval_batch,
        repair: repair.config(RepairVariant::AsrQ50),
        timing: data.timing,
    })
}

fn inspect(model: &Model) -> String {
    let mut out = format!(
        "arch {}  classes {}  input {:?}  params {}\n",
        model.graph.arch,
        model.graph.num_classes,
        model.graph.input_dims,
        model.weights.iter().filter(|(k, _)| !k.ends_with(".mask")).map(|(_, t)| t.numel()).sum::<usize>()
    );
    for node in &model.graph.nodes {
        out.push_str(&format!("{:<16} {:<14} <- {}", node.name, node.kind.tag(), node.inputs.join(", ")));
        if let LayerKind::Conv2d { weight, .. } | LayerKind::Linear { weight, .. } = &node.kind {
            let t = &model.weights[weight];
            let zeros = t.data().iter().filter(|&&v| v == 0.0).count();
            out.push_str(&format!(
                "  {:?} sparsity {:.4}",
                t.dims(),
                zeros as f64 / t.numel() as f64
            ));
        }
        out.push('\n');
    }
    out.push_str(&format!("global sparsity {:.6}\n", model.global_sparsity()));
    out
}

/// Returns whether every grid cell succeeded.
fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Prune { model, alloc, sparsity, out } => {
            require(&[&model])?;
            let dense = load_model(&model)?;
            let (pruned, _) = prune(&dense, alloc, sparsity)?;
            io::save_model(&pruned, &out)?;
            eprintln!("pruned to global sparsity {:.6}", pruned.global_sparsity());
        }
        Command::Repair { variant, dense, pruned, calib, out, plan_out, repair } => {
            require(&[&dense, &pruned, &calib])?;
            let d = load_model(&dense)?;
            let p = load_model(&pruned)?;
            let c = load_calib(&calib, repair.calib_size, repair.seed)?;
            let outcome = sparse_repair::repair(&d, &p, &c, &repair.config(variant))?;
            io::save_model(&outcome.model, &out)?;
            if let (Some(path), Some(plan)) = (plan_out, outcome.plan) {
                emit(&plan.to_text(), Some(&path))?;
            }
        }
        Command::Eval { model, images, labels, batch_size } => {
            require(&[&model, &images, &labels])?;
            let m = load_model(&model)?;
            let x = io::load_images(&images)?;
            let y = io::load_labels(&labels)?;
            println!("{:.2}", sparse_repair::evaluate(&m, &x, &y, batch_size)?);
        }
        Command::Grid { data, sparsity, alloc, variants, repair } => {
            let exp = experiment(&data, &repair)?;
            let spec = SweepSpec { sparsities: sparsity, allocations: alloc, variants, ..SweepSpec::default() };
            let rows = exp.run_grid(&spec)?;
            emit(&to_csv(&rows), data.out.as_deref())?;
            return Ok(rows.iter().all(|r| r.accuracy.is_ok()));
        }
        Command::SweepClip { data, sparsity, alloc, bounds, repair } => {
            let exp = experiment(&data, &repair)?;
            let bounds = if bounds.is_empty() { DEFAULT_CLIP_BOUNDS.to_vec() } else { bounds };
            let rows = exp.clip_sensitivity(&alloc, &sparsity, &bounds)?;
            emit(&to_csv(&rows), data.out.as_deref())?;
            return Ok(rows.iter().all(|r| r.accuracy.is_ok()));
        }
        Command::Stats { dense, pruned, calib, calib_size, seed, batch_size, out } => {
            require(&[&dense, &pruned, &calib])?;
            let d = load_model(&dense)?;
            let p = load_model(&pruned)?;
            let c = load_calib(&calib, calib_size, seed)?;
            let stats = paired_stats(&d, &p, &c, batch_size, None)?;
            emit(&stats.to_text(), out.as_deref())?;
        }
        Command::Inspect { model } => {
            require(&[&model])?;
            print!("{}", inspect(&load_model(&model)?));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: one or more grid cells failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
