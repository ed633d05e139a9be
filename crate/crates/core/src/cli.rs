//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or parameter error, 2 I/O or format error,
//! 3 solver convergence failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::apps::{abstract_hierarchy, retinex_enhance};
use crate::config::{load_config, RunConfig};
use crate::error::{HipeError, Result};
use crate::guider::{edge_confidence, GuidanceMap};
use crate::hierarchy::{peel, peel_with_external_guidance, PeelHierarchy};
use crate::image::{gradient, load_image, save_image, write_atomic};
use crate::metrics::{gcc, hierarchy_report};
use crate::oracle::oracle_check;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_CONVERGENCE: i32 = 3;

pub const MANIFEST_NAME: &str = "run.json";

#[derive(Debug, Parser)]
#[command(name = "hipe", version, about = "Hierarchical image peeling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Peel an image into T structure layers, detail layers and guidance maps.
    Peel(PeelArgs),
    /// Multi-scale edge confidence map.
    Edges(IoArgs),
    /// Gradient correlation between a detail and a structure image.
    Gcc(GccArgs),
    /// Quantized abstraction of one structure layer.
    Abstract(AbstractArgs),
    /// Retinex low-light enhancement with peeled illumination layers.
    Enhance(EnhanceArgs),
    /// Compare the solver against dense and descent reference minimizers.
    OracleCheck(OracleArgs),
}

#[derive(Debug, Args, Default)]
struct Tunables {
    /// Configuration file of `key = value` lines [default: none]
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preservation weight [default: 0.4]
    #[arg(long)]
    lambda_pre: Option<f64>,
    /// Consistency (smoothing) weight [default: 4]
    #[arg(long)]
    lambda_con: Option<f64>,
    /// Guidance balance; edges where magnitude > 1/(1+beta_g) [default: 1.5]
    #[arg(long)]
    beta_g: Option<f64>,
    /// Division guard of the consistency weight [default: 0.005]
    #[arg(long)]
    epsilon: Option<f64>,
    /// Relative residual tolerance of the solver [default: 1e-6]
    #[arg(long)]
    cg_tol: Option<f64>,
    /// Solver iteration cap [default: 10*sqrt(pixels)]
    #[arg(long)]
    cg_max_iters: Option<usize>,
    /// Linear solver name (cg-amg, cg-jacobi, cg) [default: cg-amg]
    #[arg(long)]
    solver: Option<String>,
    /// Data-term anchor: previous or first [default: previous]
    #[arg(long)]
    anchor: Option<String>,
    /// Peeling strength at the first scale [default: 0.3]
    #[arg(long)]
    alpha1: Option<f64>,
    /// Geometric growth of the peeling strength [default: 1.5]
    #[arg(long)]
    eta: Option<f64>,
    /// Number of scales [default: 4]
    #[arg(long = "T")]
    scales: Option<usize>,
    /// Seed for randomized corpora [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; falls back to HIPE_THREADS [default: available cores]
    #[arg(long)]
    threads: Option<usize>,
}

impl Tunables {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut push = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k, v));
            }
        };
        push("lambda_pre", self.lambda_pre.map(|v| v.to_string()));
        push("lambda_con", self.lambda_con.map(|v| v.to_string()));
        push("beta_g", self.beta_g.map(|v| v.to_string()));
        push("epsilon", self.epsilon.map(|v| v.to_string()));
        push("cg_tol", self.cg_tol.map(|v| v.to_string()));
        push("cg_max_iters", self.cg_max_iters.map(|v| v.to_string()));
        push("solver", self.solver.clone());
        push("anchor", self.anchor.clone());
        push("alpha1", self.alpha1.map(|v| v.to_string()));
        push("eta", self.eta.map(|v| v.to_string()));
        push("T", self.scales.map(|v| v.to_string()));
        push("seed", self.seed.map(|v| v.to_string()));
        push("threads", self.threads.map(|v| v.to_string()));
        out
    }
}

#[derive(Debug, Args)]
struct IoArgs {
    /// Input image (PNG, PPM or PGM) [required]
    #[arg(long)]
    input: PathBuf,
    /// Output directory [default: .]
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[command(flatten)]
    tunables: Tunables,
}

#[derive(Debug, Args)]
struct PeelArgs {
    #[command(flatten)]
    io: IoArgs,
    /// Edge annotation image; self-guidance when absent [default: none]
    #[arg(long)]
    ggr: Option<PathBuf>,
    /// External guidance map, one per scale in order; replaces the guider [default: none]
    #[arg(long)]
    guide: Vec<PathBuf>,
    /// Also write `<stem>_gcc.json` [default: false]
    #[arg(long)]
    report: bool,
}

#[derive(Debug, Args)]
struct GccArgs {
    /// Detail (peeled) image [required]
    #[arg(long)]
    detail: PathBuf,
    /// Structure image [required]
    #[arg(long)]
    structure: PathBuf,
}

#[derive(Debug, Args)]
struct AbstractArgs {
    #[command(flatten)]
    io: IoArgs,
    /// 1-based scale to abstract [default: 1]
    #[arg(long)]
    scale_index: Option<usize>,
    /// Quantization levels per channel [default: 8]
    #[arg(long)]
    quant_levels: Option<usize>,
    /// Paint guidance edges [default: false]
    #[arg(long)]
    edge_overlay: bool,
    /// Edge color as r,g,b in [0,1] [default: 0,0,0]
    #[arg(long)]
    edge_color: Option<String>,
}

#[derive(Debug, Args)]
struct EnhanceArgs {
    #[command(flatten)]
    io: IoArgs,
    /// Comma-separated 1-based scales [default: all]
    #[arg(long)]
    retinex_scales: Option<String>,
    /// Comma-separated weights summing to 1 [default: uniform]
    #[arg(long)]
    retinex_weights: Option<String>,
    /// Output gain [default: 1]
    #[arg(long)]
    gain: Option<f64>,
    /// Output offset [default: 0]
    #[arg(long)]
    offset: Option<f64>,
}

#[derive(Debug, Args)]
struct OracleArgs {
    /// Side length of the random test images [default: 8]
    #[arg(long, default_value_t = 8)]
    size: usize,
    #[command(flatten)]
    tunables: Tunables,
}

fn exit_code(err: &HipeError) -> i32 {
    match err {
        HipeError::Io { .. } | HipeError::Format(_) => EXIT_IO,
        HipeError::ConvergenceFailure { .. } => EXIT_CONVERGENCE,
        HipeError::ShapeMismatch(_)
        | HipeError::InvalidParameter(_)
        | HipeError::EmptySequence(_)
        | HipeError::Parse { .. } => EXIT_USAGE,
    }
}

/// Parse `argv` (including the program name) and run the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("hipe: {e}");
            exit_code(&e)
        }
    }
}

fn resolve_config(t: &Tunables, extra: &[(&'static str, String)]) -> Result<RunConfig> {
    let mut cfg = match &t.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    for (key, value) in t.overrides().iter().chain(extra) {
        cfg.set(key, value).map_err(|m| {
            HipeError::InvalidParameter(format!("--{}: {m}", key.replace('_', "-")))
        })?;
    }
    if cfg.threads.is_none() {
        if let Ok(v) = std::env::var("HIPE_THREADS") {
            cfg.set("threads", &v)
                .map_err(|m| HipeError::InvalidParameter(format!("HIPE_THREADS: {m}")))?;
        }
    }
    if let Some(n) = cfg.threads {
        // the global pool can only be configured once per process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok(cfg)
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HipeError::io(dir, e))
}

fn file_names(paths: &[PathBuf]) -> Vec<String> {
    paths
        .iter()
        .map(|p| {
            p.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default()
        })
        .collect()
}

/// Write `run.json`. Everything outside the `timing` object is a pure
/// function of the command line and the inputs.
fn write_manifest(
    dir: &Path,
    command: &str,
    inputs: &[&Path],
    cfg: &RunConfig,
    outputs: &[PathBuf],
    hierarchy: Option<&PeelHierarchy>,
    started: Instant,
) -> Result<PathBuf> {
    let scales = hierarchy.map(|h| {
        h.scales
            .iter()
            .map(|l| json!({"t": l.t, "iterations": l.stats.iterations, "residual": l.stats.residual}))
            .collect::<Vec<_>>()
    });
    let per_scale_seconds = hierarchy.map(|h| {
        h.scales
            .iter()
            .map(|l| json!({"t": l.t, "seconds": l.stats.seconds}))
            .collect::<Vec<_>>()
    });
    let gcc_report = hierarchy.map(hierarchy_report);
    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "inputs": inputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "config": cfg,
        "external_guidance": hierarchy.map(|h| h.schedule.is_none()),
        "outputs": file_names(outputs),
        "detail_encoding": "C files store (C + 1) / 2",
        "scales": scales,
        "gcc": gcc_report,
        "timing": {
            "timestamp_unix": timestamp,
            "total_seconds": started.elapsed().as_secs_f64(),
            "per_scale": per_scale_seconds,
        },
    });
    let path = dir.join(MANIFEST_NAME);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

fn build_hierarchy(
    input_path: &Path,
    cfg: &RunConfig,
    ggr: Option<&Path>,
    guides: &[PathBuf],
) -> Result<PeelHierarchy> {
    let input = load_image(input_path)?;
    if !guides.is_empty() {
        let maps = guides
            .iter()
            .map(|p| GuidanceMap::from_image(&load_image(p)?))
            .collect::<Result<Vec<_>>>()?;
        return peel_with_external_guidance(&input, &maps, &cfg.peel);
    }
    let ggr = ggr
        .map(|p| Ok::<_, HipeError>(GuidanceMap::from_image(&load_image(p)?)?.binarized()))
        .transpose()?;
    peel(&input, &cfg.schedule, &cfg.peel, ggr.as_ref())
}

fn execute(command: Command) -> Result<i32> {
    let started = Instant::now();
    match command {
        Command::Peel(args) => {
            let cfg = resolve_config(&args.io.tunables, &[])?;
            ensure_dir(&args.io.out)?;
            let h = build_hierarchy(&args.io.input, &cfg, args.ggr.as_deref(), &args.guide)?;
            let stem = stem_of(&args.io.input);
            let mut outputs = h.save(&args.io.out, &stem)?;
            if args.report {
                let path = args.io.out.join(format!("{stem}_gcc.json"));
                write_atomic(&path, hierarchy_report(&h).to_json().as_bytes())?;
                outputs.push(path);
            }
            let mut inputs = vec![args.io.input.as_path()];
            inputs.extend(args.ggr.as_deref());
            inputs.extend(args.guide.iter().map(PathBuf::as_path));
            write_manifest(
                &args.io.out,
                "peel",
                &inputs,
                &cfg,
                &outputs,
                Some(&h),
                started,
            )?;
            Ok(EXIT_OK)
        }
        Command::Edges(args) => {
            let cfg = resolve_config(&args.tunables, &[])?;
            ensure_dir(&args.out)?;
            let h = build_hierarchy(&args.input, &cfg, None, &[])?;
            let maps: Vec<GuidanceMap> = h.scales.iter().map(|l| l.guidance.clone()).collect();
            let grads: Vec<_> = h.scales.iter().map(|l| gradient(&l.structure)).collect();
            let confidence = edge_confidence(&maps, &grads)?;
            let path = args.out.join(format!("{}_edges.png", stem_of(&args.input)));
            save_image(&confidence.to_image(), &path)?;
            write_manifest(
                &args.out,
                "edges",
                &[&args.input],
                &cfg,
                &[path],
                Some(&h),
                started,
            )?;
            Ok(EXIT_OK)
        }
        Command::Gcc(args) => {
            let detail = load_image(&args.detail)?;
            let structure = load_image(&args.structure)?;
            println!("{}", gcc(&detail, &structure)?);
            Ok(EXIT_OK)
        }
        Command::Abstract(args) => {
            let mut extra = Vec::new();
            if let Some(v) = args.scale_index {
                extra.push(("scale_index", v.to_string()));
            }
            if let Some(v) = args.quant_levels {
                extra.push(("quant_levels", v.to_string()));
            }
            if args.edge_overlay {
                extra.push(("edge_overlay", "true".to_string()));
            }
            if let Some(v) = &args.edge_color {
                extra.push(("edge_color", v.clone()));
            }
            let cfg = resolve_config(&args.io.tunables, &extra)?;
            ensure_dir(&args.io.out)?;
            let h = build_hierarchy(&args.io.input, &cfg, None, &[])?;
            let out = abstract_hierarchy(&h, &cfg.abstraction)?;
            let path = args
                .io
                .out
                .join(format!("{}_abstract.png", stem_of(&args.io.input)));
            save_image(&out, &path)?;
            write_manifest(
                &args.io.out,
                "abstract",
                &[&args.io.input],
                &cfg,
                &[path],
                Some(&h),
                started,
            )?;
            Ok(EXIT_OK)
        }
        Command::Enhance(args) => {
            let mut extra = Vec::new();
            if let Some(v) = &args.retinex_scales {
                extra.push(("retinex_scales", v.clone()));
            }
            if let Some(v) = &args.retinex_weights {
                extra.push(("retinex_weights", v.clone()));
            }
            if let Some(v) = args.gain {
                extra.push(("gain", v.to_string()));
            }
            if let Some(v) = args.offset {
                extra.push(("offset", v.to_string()));
            }
            let cfg = resolve_config(&args.io.tunables, &extra)?;
            ensure_dir(&args.io.out)?;
            let h = build_hierarchy(&args.io.input, &cfg, None, &[])?;
            let out = retinex_enhance(&h.input, &h, &cfg.retinex)?;
            let stem = stem_of(&args.io.input);
            let enhanced = args.io.out.join(format!("{stem}_enhanced.png"));
            let illumination = args.io.out.join(format!("{stem}_illumination.png"));
            save_image(&out.enhanced, &enhanced)?;
            save_image(&out.illumination, &illumination)?;
            write_manifest(
                &args.io.out,
                "enhance",
                &[&args.io.input],
                &cfg,
                &[enhanced, illumination],
                Some(&h),
                started,
            )?;
            Ok(EXIT_OK)
        }
        Command::OracleCheck(args) => {
            let cfg = resolve_config(&args.tunables, &[])?;
            if args.size == 0 || args.size > 16 {
                return Err(HipeError::InvalidParameter(
                    "--size must lie in 1..=16 for dense oracles".into(),
                ));
            }
            let report = oracle_check(args.size, cfg.seed, &cfg.peel)?;
            println!(
                "dense max deviation     {:.3e} (tolerance {:.0e})",
                report.dense_max_deviation, report.dense_tolerance
            );
            println!(
                "objective relative gap  {:.3e} (tolerance {:.0e})",
                report.objective_max_gap, report.objective_tolerance
            );
            println!(
                "descent max deviation   {:.3e} (tolerance {:.0e})",
                report.descent_max_deviation, report.descent_tolerance
            );
            if report.passed() {
                println!("oracle-check: pass");
                Ok(EXIT_OK)
            } else {
                println!("oracle-check: FAIL");
                Ok(EXIT_USAGE)
            }
        }
    }
}
