//! Command-line front end. Thin argument handling over the library
//! modules; every subcommand resolves its configuration (preset → file →
//! flags), writes a manifest of the result, then does the work.
//!
//! Exit codes: 0 success, 2 invalid configuration or arguments,
//! 3 numeric failure, 4 sweep finished with failed cells.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use maskaae::net::Variant;
use maskaae::synthetic::{load_dataset, make_dataset};
use maskaae::{MaaeError, Result};
use maskaae_cli::config::{self, ResolvedConfig};
use maskaae_cli::{export, nac, runner, sweep, theorycheck};

#[derive(Parser)]
#[command(
    name = "maskaae",
    version,
    about = "Adversarial autoencoder with a trainable latent mask: datasets, training, sweeps, analysis"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset file
    MakeData(MakeDataArgs),
    /// Train one model on a dataset
    Train(TrainArgs),
    /// Run a (variant × m × repeat) grid of training runs
    Sweep(SweepArgs),
    /// Run the numerical check battery and print a JSON report
    TheoryCheck(TheoryCheckArgs),
    /// Export plot-ready tables from finished runs
    #[command(subcommand)]
    Export(ExportCmd),
    /// Tabulate final NAC scores across runs
    NacTable(NacTableArgs),
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    match s {
        "maskaae" => Ok(Variant::Maskaae),
        "wae_baseline" | "wae-baseline" => Ok(Variant::WaeBaseline),
        other => Err(format!("unknown variant '{other}' (maskaae, wae_baseline)")),
    }
}

/// Preset/file/flag layering shared by train and sweep.
#[derive(Args)]
struct ConfigArgs {
    /// Preset name (synthetic8-desk, synthetic8-paper)
    #[arg(long, default_value = config::DESK)]
    preset: String,
    /// TOML file overriding preset values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Hidden width of all three networks
    #[arg(long)]
    width: Option<usize>,
    /// Hidden depth of all three networks
    #[arg(long)]
    depth: Option<usize>,
    /// Total outer training steps
    #[arg(long)]
    steps: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<(ResolvedConfig, config::FileConfig)> {
        let mut file = config::FileConfig::default();
        if let Some(path) = &self.config {
            file = config::load_file(path)?;
        }
        let preset_name = file.preset.clone().unwrap_or_else(|| self.preset.clone());
        let mut rc = config::preset(&preset_name)?;
        config::apply_file(&mut rc, &file);
        if let Some(w) = self.width {
            rc.net.width = w;
        }
        if let Some(d) = self.depth {
            rc.net.depth = d;
        }
        if let Some(s) = self.steps {
            rc.train.training_steps = s;
        }
        Ok((rc, file))
    }
}

#[derive(Args)]
struct MakeDataArgs {
    /// Where to write the dataset container
    #[arg(long)]
    out: PathBuf,
    /// TOML file with a [dataset] section
    #[arg(long)]
    config: Option<PathBuf>,
    /// True latent dimension of the generator
    #[arg(long)]
    n: Option<usize>,
    /// Data (output) dimension
    #[arg(long)]
    d: Option<usize>,
    /// Number of rows
    #[arg(long)]
    count: Option<usize>,
    /// Generator seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    shared: ConfigArgs,
    /// Dataset file from make-data
    #[arg(long)]
    data: PathBuf,
    /// Latent (bottleneck) width
    #[arg(long)]
    m: Option<usize>,
    /// Model variant
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    /// Run seed (parameters, batches, priors)
    #[arg(long)]
    seed: Option<u64>,
    /// Directory name under the runs root
    #[arg(long)]
    run_name: Option<String>,
    /// Runs root (overrides MAAE_RUNS_DIR)
    #[arg(long)]
    runs_dir: Option<PathBuf>,
    /// Continue from the newest checkpoint when one exists
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    shared: ConfigArgs,
    /// Dataset file from make-data
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated variants
    #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
    variants: Vec<Variant>,
    /// Comma-separated latent widths
    #[arg(long, value_delimiter = ',')]
    m_values: Vec<usize>,
    /// Independent repeats per (variant, m)
    #[arg(long)]
    repeats: Option<usize>,
    /// Base seed; each cell derives its own from it
    #[arg(long)]
    seed: Option<u64>,
    /// Sweep output directory (default: <runs root>/sweep)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Runs root (overrides MAAE_RUNS_DIR)
    #[arg(long)]
    runs_dir: Option<PathBuf>,
    /// Worker threads for independent cells
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct TheoryCheckArgs {
    /// Also write the JSON report to this path
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ExportCmd {
    /// Median final Fréchet distance per (variant, m) from a sweep summary
    Ucurve {
        /// sweep_summary.csv produced by `sweep`
        #[arg(long)]
        summary: PathBuf,
        /// Output CSV path
        #[arg(long)]
        out: PathBuf,
        /// Optional SVG chart (best effort)
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Copy a run's mask gate trajectory table
    MaskTrace {
        /// Run directory containing mask_trace.csv
        #[arg(long)]
        run: PathBuf,
        /// Output CSV path
        #[arg(long)]
        out: PathBuf,
        /// Optional SVG chart (best effort)
        #[arg(long)]
        svg: Option<PathBuf>,
    },
}

#[derive(Args)]
struct NacTableArgs {
    /// Run directories to tabulate (may be empty)
    runs: Vec<PathBuf>,
    /// Output CSV path (default: stdout)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write_manifest(path: &Path, value: &serde_json::Value) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Sidecar manifest path for a file-producing command: `x.csv` →
/// `x.csv.manifest.json`.
fn sidecar(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn cmd_make_data(args: &MakeDataArgs) -> Result<()> {
    let mut overrides = config::DatasetOverrides::default();
    if let Some(path) = &args.config {
        overrides = config::load_file(path)?.dataset;
    }
    if args.n.is_some() {
        overrides.n = args.n;
    }
    if args.d.is_some() {
        overrides.d = args.d;
    }
    if args.seed.is_some() {
        overrides.seed = args.seed;
    }
    let count = args.count.or(overrides.count).unwrap_or(2000);
    let spec = config::dataset_spec(&overrides)?;
    write_manifest(
        &sidecar(&args.out),
        &serde_json::json!({
            "tool_version": env!("CARGO_PKG_VERSION"),
            "command": "make-data",
            "spec": spec,
            "count": count,
            "out": args.out,
        }),
    )?;
    let ds = make_dataset(&spec, count, &args.out)?;
    println!(
        "wrote {} rows of dimension {} to {} (fingerprint {})",
        ds.count,
        ds.samples.ncols(),
        args.out.display(),
        ds.spec_fingerprint
    );
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let (rc, file) = args.shared.resolve()?;
    let m = args
        .m
        .or(file.train.m)
        .ok_or_else(|| MaaeError::invalid("latent width required: pass --m or set [train] m"))?;
    let variant = args.variant.or(file.train.variant).unwrap_or(Variant::Maskaae);
    let seed = args.seed.or(file.train.seed).unwrap_or(0);
    let run_name = args.run_name.clone().unwrap_or_else(|| {
        format!("{}_m{m:02}_s{seed}", sweep::variant_name(variant))
    });
    let run_dir = config::runs_dir(args.runs_dir.as_deref()).join(run_name);
    let (dataset, _) = load_dataset(&args.data)?;
    let plan = runner::RunPlan::from_resolved(&rc, m, variant, seed, run_dir, args.data.clone());
    let summary = runner::execute(&plan, &dataset, args.resume)?;
    println!(
        "{}: step {} frechet {:.4} nac {:.4} m_A {}{}",
        summary.run_dir.display(),
        summary.final_record.step,
        summary.final_record.frechet,
        summary.final_record.nac,
        summary.final_record.m_a,
        if summary.reused { " (already complete)" } else { "" }
    );
    Ok(())
}

/// Ok(true) when every cell succeeded, Ok(false) on partial failure.
fn cmd_sweep(args: &SweepArgs) -> Result<bool> {
    let (rc, file) = args.shared.resolve()?;
    let variants = if !args.variants.is_empty() {
        args.variants.clone()
    } else {
        file.sweep
            .variants
            .clone()
            .unwrap_or_else(|| vec![Variant::WaeBaseline, Variant::Maskaae])
    };
    let m_values = if !args.m_values.is_empty() {
        args.m_values.clone()
    } else {
        file.sweep.m_values.clone().unwrap_or_else(|| vec![2, 4, 8, 16, 32])
    };
    let repeats = args.repeats.or(file.sweep.repeats).unwrap_or(3);
    let out_dir = args
        .out
        .clone()
        .unwrap_or_else(|| config::runs_dir(args.runs_dir.as_deref()).join("sweep"));
    let spec = sweep::SweepSpec {
        variants,
        m_values,
        repeats,
        base: rc,
        base_seed: args.seed.unwrap_or(7),
        data_path: args.data.clone(),
        out_dir,
        jobs: args.jobs,
    };
    spec.validate()?;
    let (dataset, _) = load_dataset(&args.data)?;
    write_manifest(
        &spec.out_dir.join("sweep_manifest.json"),
        &serde_json::json!({
            "tool_version": env!("CARGO_PKG_VERSION"),
            "command": "sweep",
            "variants": spec.variants.iter().map(|&v| sweep::variant_name(v)).collect::<Vec<_>>(),
            "m_values": spec.m_values,
            "repeats": spec.repeats,
            "base_seed": spec.base_seed,
            "jobs": spec.jobs,
            "data": { "path": spec.data_path, "fingerprint": dataset.spec_fingerprint },
            "config": spec.base,
        }),
    )?;
    let (rows, any_failed) = sweep::run_sweep(&spec, &dataset)?;
    let failed = rows.iter().filter(|r| !r.ok).count();
    println!(
        "{} cells, {} failed; summary at {}",
        rows.len(),
        failed,
        spec.out_dir.join("sweep_summary.csv").display()
    );
    Ok(!any_failed)
}

fn cmd_theory_check(args: &TheoryCheckArgs) -> Result<bool> {
    if let Some(json) = &args.json {
        write_manifest(
            &sidecar(json),
            &serde_json::json!({
                "tool_version": env!("CARGO_PKG_VERSION"),
                "command": "theory-check",
                "out": json,
            }),
        )?;
    }
    let report = theorycheck::run_battery();
    let text = theorycheck::render(&report);
    print!("{text}");
    if let Some(json) = &args.json {
        std::fs::write(json, &text)?;
    }
    Ok(report.all_pass)
}

fn cmd_export(cmd: &ExportCmd) -> Result<()> {
    match cmd {
        ExportCmd::Ucurve { summary, out, svg } => {
            write_manifest(
                &sidecar(out),
                &serde_json::json!({
                    "tool_version": env!("CARGO_PKG_VERSION"),
                    "command": "export ucurve",
                    "summary": summary,
                    "out": out,
                    "svg": svg,
                }),
            )?;
            let points = export::export_ucurve(summary, out, svg.as_deref())?;
            let missing: Vec<String> = points
                .iter()
                .filter(|p| p.failed > 0 || !p.median_frechet.is_finite())
                .map(|p| format!("{} m={} ({}/{} failed)", p.variant, p.m, p.failed, p.runs))
                .collect();
            println!("{} points to {}", points.len(), out.display());
            if !missing.is_empty() {
                println!("incomplete cells: {}", missing.join(", "));
            }
        }
        ExportCmd::MaskTrace { run, out, svg } => {
            write_manifest(
                &sidecar(out),
                &serde_json::json!({
                    "tool_version": env!("CARGO_PKG_VERSION"),
                    "command": "export mask-trace",
                    "run": run,
                    "out": out,
                    "svg": svg,
                }),
            )?;
            export::export_mask_trace(run, out, svg.as_deref())?;
            println!("trace copied to {}", out.display());
        }
    }
    Ok(())
}

fn cmd_nac_table(args: &NacTableArgs) -> Result<()> {
    if let Some(out) = &args.out {
        write_manifest(
            &sidecar(out),
            &serde_json::json!({
                "tool_version": env!("CARGO_PKG_VERSION"),
                "command": "nac-table",
                "runs": args.runs,
                "out": out,
            }),
        )?;
    }
    let table = nac::collect(&args.runs)?;
    let csv = nac::render_csv(&table);
    match &args.out {
        Some(out) => {
            std::fs::write(out, &csv)?;
            println!("{} rows to {}", table.rows.len(), out.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn exit_for(e: &MaaeError) -> u8 {
    match e {
        MaaeError::InvalidArgument(_) | MaaeError::Format(_) => 2,
        MaaeError::Numeric { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .format_target(false)
        .init();
    let cli = Cli::parse();
    let outcome: Result<u8> = match &cli.cmd {
        Cmd::MakeData(args) => cmd_make_data(args).map(|()| 0),
        Cmd::Train(args) => cmd_train(args).map(|()| 0),
        Cmd::Sweep(args) => cmd_sweep(args).map(|clean| if clean { 0 } else { 4 }),
        Cmd::TheoryCheck(args) => cmd_theory_check(args).map(|pass| if pass { 0 } else { 3 }),
        Cmd::Export(cmd) => cmd_export(cmd).map(|()| 0),
        Cmd::NacTable(args) => cmd_nac_table(args).map(|()| 0),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}
