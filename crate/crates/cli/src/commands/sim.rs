//! `sim run|scale|attack|plot-data`.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Subcommand};
use sd_dane::discovery::Variant;
use sd_dane::simnet::{
    run_scalability, simulate, AdversaryScript, ScenarioConfig, Sim, MEASURED_PREFIX,
};

use crate::support::{fail, read_text, write_out, CliResult, Stage};
use crate::GlobalOptions;

#[derive(Debug, Subcommand)]
pub enum SimCommand {
    /// Run a scenario and write metrics.csv.
    Run(RunArgs),
    /// Setup time against subscriber count; writes scale.csv.
    Scale(ScaleArgs),
    /// Run the attack scripts; exit 1 if any outcome differs from the expected one.
    Attack(AttackArgs),
    /// Every sample of every variant as long-format plot.csv.
    PlotData(PlotArgs),
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Scenario file; falls back to --config.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Overrides the scenario's variant.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Overrides the scenario's run count.
    #[arg(long)]
    pub runs: Option<u32>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Also write wall-clock timing rows, which differ between runs.
    #[arg(long)]
    pub with_measured: bool,
}

#[derive(Debug, Args)]
pub struct ScaleArgs {
    /// Largest subscriber count.
    #[arg(long, default_value_t = 50)]
    pub max: usize,
    /// Runs per subscriber count.
    #[arg(long, default_value_t = 1)]
    pub runs: u32,
    /// Only this variant; all three by default.
    #[arg(long)]
    pub variant: Option<Variant>,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Attack script; all six attacks against the first subscriber by default.
    #[arg(long)]
    pub script: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
}

pub fn run(cmd: SimCommand, global: &GlobalOptions) -> CliResult<ExitCode> {
    match cmd {
        SimCommand::Run(args) => run_scenario(args, global),
        SimCommand::Scale(args) => scale(args, global),
        SimCommand::Attack(args) => attack(args, global),
        SimCommand::PlotData(args) => plot_data(args, global),
    }
}

fn load(args: &ScenarioArgs, global: &GlobalOptions) -> CliResult<ScenarioConfig> {
    let Some(path) = args.scenario.as_ref().or(global.config.as_ref()) else {
        return fail("scenario", "no --scenario or --config given");
    };
    let mut cfg = ScenarioConfig::parse(&read_text(path)?).stage("scenario")?;
    if let Some(variant) = args.variant {
        cfg.variant = variant;
    }
    if let Some(runs) = args.runs {
        cfg.runs = runs;
    }
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run_scenario(args: RunArgs, global: &GlobalOptions) -> CliResult<ExitCode> {
    let cfg = load(&args.scenario, global)?;
    if global.verbose > 0 {
        eprintln!("running {} x{} seed {}", cfg.variant, cfg.runs, cfg.seed);
    }
    let metrics = simulate(cfg).stage("simulate")?;
    let csv = metrics.to_csv(args.with_measured);
    let path = write_out(global, "metrics.csv", &csv)?;
    print!("{csv}");
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn scale(args: ScaleArgs, global: &GlobalOptions) -> CliResult<ExitCode> {
    let seed = global.seed.unwrap_or(1);
    let variants = match args.variant {
        Some(v) => vec![v],
        None => Variant::ALL.to_vec(),
    };
    let mut csv = String::from("subscribers,variant,mean_setup_ms,max_setup_ms,established\n");
    for variant in variants {
        if global.verbose > 0 {
            eprintln!("scaling {variant} to {} subscribers", args.max);
        }
        for p in run_scalability(args.max, variant, seed, args.runs).stage("simulate")? {
            let _ = writeln!(
                csv,
                "{},{},{:.4},{:.4},{}",
                p.subscribers, p.variant, p.mean_setup_ms, p.max_setup_ms, p.established
            );
        }
    }
    let path = write_out(global, "scale.csv", &csv)?;
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn attack(args: AttackArgs, global: &GlobalOptions) -> CliResult<ExitCode> {
    let cfg = load(&args.scenario, global)?;
    let script = match &args.script {
        Some(path) => AdversaryScript::parse(&read_text(path)?).stage("script")?,
        None => AdversaryScript::default(),
    };
    let variant = cfg.variant;
    let mut sim = Sim::new(cfg).stage("simulate")?;
    let report = script.run(&mut sim).stage("attack")?;
    let text = format!("variant {variant}\n{}", report.to_text());
    write_out(global, "attack.txt", &text)?;
    print!("{text}");
    Ok(if report.all_passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn plot_data(args: PlotArgs, global: &GlobalOptions) -> CliResult<ExitCode> {
    let base = load(&args.scenario, global)?;
    let variants = match args.scenario.variant {
        Some(v) => vec![v],
        None => Variant::ALL.to_vec(),
    };
    let mut csv = String::from("variant,metric,value\n");
    for variant in variants {
        let mut cfg = base.clone();
        cfg.variant = variant;
        let metrics = simulate(cfg).stage("simulate")?;
        for (name, samples) in metrics.rows() {
            if name.starts_with(MEASURED_PREFIX) {
                continue;
            }
            for v in samples.values() {
                let _ = writeln!(csv, "{variant},{name},{v:.4}");
            }
        }
    }
    let path = write_out(global, "plot.csv", &csv)?;
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}
