use std::collections::HashSet;
use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;

use mmlab::marketdata::CurveKind;
use mmlab::sim::{run_simulation, SimConfig};

use super::{file_stem, require_oracle_flag, Globals};
use crate::config::{int, Layered};
use crate::error::CliError;
use crate::manifest::Run;

#[derive(Args, Clone, Debug)]
pub struct SimulateArgs {
    /// Simulation config files. Several configs run in parallel, each
    /// writing into `<out>/<config stem>/`.
    #[arg(required = true)]
    pub configs: Vec<PathBuf>,
    /// Override the number of steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Keep every fill in the report.
    #[arg(long)]
    pub record_fills: bool,
}

pub fn run(args: &SimulateArgs, g: &Globals) -> Result<(), CliError> {
    if let [config] = args.configs.as_slice() {
        return run_one(config, &g.out, args, g);
    }
    let mut seen = HashSet::new();
    for c in &args.configs {
        if !seen.insert(file_stem(c)) {
            return Err(CliError::usage(format!(
                "two configs share the stem `{}`",
                file_stem(c)
            )));
        }
    }
    let results: Vec<Result<(), CliError>> = args
        .configs
        .par_iter()
        .map(|c| run_one(c, &g.out.join(file_stem(c)), args, g).map_err(|e| e.context(c.display())))
        .collect();
    results.into_iter().collect()
}

fn run_one(path: &Path, out: &Path, args: &SimulateArgs, g: &Globals) -> Result<(), CliError> {
    let mut run = Run::new("simulate", out);
    run.read_input(path)?;
    let mut layered = Layered::load(Some(path))?;
    layered.rebase("curve.path");
    layered.set_opt("steps", args.steps.map(int));
    let mut cfg: SimConfig = layered.decode(&path.display().to_string())?;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    cfg.allow_oracle = g.allow_oracle;
    cfg.record_fills |= args.record_fills;
    require_oracle_flag(&cfg.agents, cfg.allow_oracle)?;
    cfg.validate()?;
    if let CurveKind::FromFile { path, .. } = &cfg.curve.kind {
        run.read_input(path)?;
    }
    run.set_config(&cfg, cfg.seed);

    let report = run_simulation(&cfg)?;
    let c = &report.conservation;
    log::info!(
        "{} steps, {} trades, residue base={} quote={}",
        report.steps,
        report.total_trades,
        c.residue_base,
        c.residue_quote
    );
    run.write_report("report.json", &report)?;
    run.write_text("agents.csv", &report.agents_csv())?;
    println!("{}", out.join("report.json").display());
    Ok(())
}
