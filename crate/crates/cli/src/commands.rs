//! Command-line interface.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fr_design::sequential::{write_trace_csv, Session, SessionConfig};
use fr_design::static_design::{run_static_design, StaticDesign, StaticDesignConfig};
use fr_design::study::{
    read_checkpoint, run_study, write_outputs, write_records_csv, StudyManifest, StudyRecord,
    Truth, MANIFEST_FILE, RECORDS_FILE,
};

use crate::assist::{assist_loop, AssistExit};

#[derive(Debug, Parser)]
#[command(
    name = "frdesign",
    version,
    about = "Bayesian design of functional response experiments"
)]
pub struct Cli {
    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output location (a directory, or a file for `assist` and `export`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a sequential design against a known truth.
    Simulate(SimulateArgs),
    /// Interactive session: propose densities, read observed counts.
    Assist(AssistArgs),
    /// Run a simulation study from a manifest.
    Study(StudyArgs),
    /// Search for a static (all-at-once) design.
    StaticDesign,
    /// Start the HTTP session service.
    Serve(ServeArgs),
    /// Convert a session file or study directory to CSV.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// True model id; defaults to the worked-example truth.
    #[arg(long)]
    pub truth_model: Option<u8>,
    #[arg(long, requires = "truth_model")]
    pub a: Option<f64>,
    #[arg(long, requires = "truth_model")]
    pub th: Option<f64>,
    #[arg(long, requires = "truth_model")]
    pub lambda: Option<f64>,
    /// Store the full particle sets in the session file.
    #[arg(long)]
    pub full_state: bool,
}

#[derive(Debug, Args)]
pub struct AssistArgs {
    /// Continue a saved session instead of starting from the configuration.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    /// Worker threads (0 = all cores).
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    #[arg(long, env = "DATA_DIR", default_value = "data")]
    pub data_dir: PathBuf,
    /// Directory of web assets served outside `/api`.
    #[arg(long, env = "STATIC_DIR")]
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// A session file or a study output directory.
    pub input: PathBuf,
    /// Also write each experiment's utility surface as `surface_<i>.csv`
    /// into the `--out` directory (sessions only).
    #[arg(long, requires = "out")]
    pub surfaces: bool,
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(&cli, a),
        Command::Assist(a) => assist(&cli, a),
        Command::Study(a) => study(&cli, a),
        Command::StaticDesign => static_design(&cli),
        Command::Serve(a) => serve(a),
        Command::Export(a) => export(&cli, a),
    }
}

fn session_config(cli: &Cli) -> Result<SessionConfig> {
    let mut cfg = match &cli.config {
        Some(p) => SessionConfig::from_toml_file(p)?,
        None => SessionConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn print_final(session: &Session<f64>) {
    let ids = session.model_ids();
    for ((id, p), s) in ids
        .iter()
        .zip(session.model_probs())
        .zip(session.snapshots())
    {
        println!(
            "model {id}: probability {p:.4}, log precision {:.4}",
            s.log_precision
        );
    }
}

fn simulate(cli: &Cli, args: &SimulateArgs) -> Result<()> {
    let cfg = session_config(cli)?;
    let truth = match args.truth_model {
        Some(model) => Truth {
            model,
            a: args.a.context("--a is required with --truth-model")?,
            th: args.th.context("--th is required with --truth-model")?,
            lambda: args.lambda,
            label: None,
        },
        None => Truth::illustration(),
    };
    let theta = truth.params()?;
    let session = fr_design::sequential::run_simulation::<f64>(cfg, truth.model, &theta)?;
    let dir = out_dir(cli)?;
    session.save(&dir.join("session.json"), args.full_state)?;
    let trace = dir.join("trace.csv");
    write_trace_csv(session.records(), std::fs::File::create(&trace)?)?;
    println!(
        "truth {}; {} experiments",
        truth.name(),
        session.records().len()
    );
    let designs: Vec<String> = session
        .records()
        .iter()
        .map(|r| format!("{}:{}", r.d, r.n))
        .collect();
    println!("designs (d:n): {}", designs.join(" "));
    print_final(&session);
    println!("wrote {}", trace.display());
    Ok(())
}

fn assist(cli: &Cli, args: &AssistArgs) -> Result<()> {
    let (mut session, path) = match &args.resume {
        Some(p) => {
            if cli.config.is_some() || cli.seed.is_some() {
                bail!("--config and --seed cannot be combined with --resume");
            }
            (
                Session::<f64>::load(p)?,
                cli.out.clone().unwrap_or_else(|| p.clone()),
            )
        }
        None => (
            Session::new(session_config(cli)?)?,
            cli.out
                .clone()
                .unwrap_or_else(|| PathBuf::from("session.json")),
        ),
    };
    session.save(&path, true)?;
    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout();
    let exit = assist_loop(&mut session, stdin.lock(), &mut stdout, Some(&path))?;
    session.save(&path, true)?;
    if exit == AssistExit::Paused {
        println!(
            "paused; continue with `frdesign assist --resume {}`",
            path.display()
        );
    }
    Ok(())
}

fn study(cli: &Cli, args: &StudyArgs) -> Result<()> {
    let path = cli
        .config
        .as_ref()
        .context("study needs a manifest: --config <FILE>")?;
    let mut manifest = StudyManifest::from_toml_file(path)?;
    if let Some(s) = cli.seed {
        manifest.seed = s;
    }
    if let Some(w) = args.workers {
        manifest.workers = w;
    }
    let dir = cli
        .out
        .clone()
        .context("study needs an output directory: --out <DIR>")?;
    let records = run_study(&manifest, Some(&dir))?;
    let summary = write_outputs(&dir, &records, manifest.design_grid.points())?;
    let failed = records.iter().filter(|r| !r.succeeded()).count();
    println!(
        "{} runs ({failed} failed); outputs in {}",
        records.len(),
        dir.display()
    );
    println!(
        "{:<40} {:>10} {:>22} {:>22}",
        "truth", "strategy", "median log precision", "median P(true model)"
    );
    for c in &summary.cells {
        let fmt = |q: Option<fr_design::study::Quantiles>| {
            q.map_or("-".to_string(), |q| format!("{:.4}", q.median))
        };
        println!(
            "{:<40} {:>10} {:>22} {:>22}",
            c.truth_label,
            c.strategy.to_string(),
            fmt(c.final_log_precision),
            fmt(c.final_true_model_prob)
        );
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct StaticOutput<'a> {
    config: &'a StaticDesignConfig,
    design: &'a StaticDesign,
}

fn static_design(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => StaticDesignConfig::from_toml_file(p)?,
        None => StaticDesignConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let design = run_static_design(&cfg)?;
    let text = serde_json::to_string_pretty(&StaticOutput {
        config: &cfg,
        design: &design,
    })?;
    if let Some(dir) = &cli.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("static_design.json"), &text)?;
    }
    println!("{text}");
    Ok(())
}

fn serve(args: &ServeArgs) -> Result<()> {
    let addr = std::net::SocketAddr::new(args.host, args.port);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(crate::server::serve(
        addr,
        &args.data_dir,
        args.static_dir.clone(),
    ))
}

/// Study records in the order the study writes them, one per cell.
fn study_records(dir: &Path) -> Result<Vec<StudyRecord>> {
    let mut records = read_checkpoint(&dir.join(RECORDS_FILE))?;
    records.sort_by_key(StudyRecord::key);
    records.dedup_by_key(|r| r.key());
    Ok(records)
}

fn export(cli: &Cli, args: &ExportArgs) -> Result<()> {
    let mut buf = Vec::new();
    if args.input.is_dir() {
        if !args.input.join(MANIFEST_FILE).exists() {
            bail!("{} is not a study output directory", args.input.display());
        }
        if args.surfaces {
            bail!("--surfaces applies to session files only");
        }
        write_records_csv(&study_records(&args.input)?, &mut buf)?;
    } else {
        let session = Session::<f64>::load(&args.input)?;
        write_trace_csv(session.records(), &mut buf)?;
        if args.surfaces {
            let dir = cli.out.as_ref().context("--surfaces needs --out <DIR>")?;
            std::fs::create_dir_all(dir)?;
            for r in session.records() {
                if let Some(s) = &r.surface {
                    s.write_csv(std::fs::File::create(
                        dir.join(format!("surface_{}.csv", r.index)),
                    )?)?;
                }
            }
            std::fs::write(dir.join("trace.csv"), &buf)?;
            return Ok(());
        }
    }
    match &cli.out {
        Some(p) => std::fs::write(p, &buf).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().write_all(&buf)?,
    }
    Ok(())
}
