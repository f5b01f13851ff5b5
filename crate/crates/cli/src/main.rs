use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use tidal_drmpc::config::{Method, ScenarioConfig};
use tidal_drmpc::mpc::Controller;
use tidal_drmpc::report::{self, PlotTrace};
use tidal_drmpc::sim::{monte_carlo, simulate, BatchResult, PreparedScenario, RunOutcome};
use tidal_drmpc::tide_field::write_timelines_csv;
use tidal_drmpc::{verify, Error};

/// Tide-island avoidance with distributionally robust MPC.
#[derive(Parser, Debug)]
#[command(name = "tidal-drmpc", version)]
struct Cli {
    /// Scenario config (key = value lines); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "TIDAL_DRMPC_OUT", default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Detect islands and write their radius timelines for one repetition.
    GenField {
        #[arg(long, default_value_t = 0)]
        rep: usize,
    },
    /// Closed-loop run of DR, SAA and CC on one repetition.
    Run {
        #[arg(long, default_value_t = 0)]
        rep: usize,
    },
    /// DR over a list of radii, plus SAA and CC, at the configured N.
    SweepTheta {
        /// Comma-separated radii; defaults to `theta_grid`.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        thetas: Option<Vec<f64>>,
    },
    /// DR, SAA and CC over a list of sample counts.
    SweepN {
        /// Comma-separated sample counts; defaults to `n_grid`.
        #[arg(long, value_delimiter = ',')]
        ns: Option<Vec<usize>>,
        /// DR radius; defaults to `theta`.
        #[arg(long, allow_negative_numbers = true)]
        theta: Option<f64>,
    },
    /// Runs the self-check suite; exits 0 iff every check passes.
    Verify,
}

/// Bad configuration or arguments; exit code 2.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(e: impl std::fmt::Display) -> anyhow::Error {
    ConfigError(e.to_string()).into()
}

fn load_config(cli: &Cli) -> Result<ScenarioConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
            ScenarioConfig::parse(&text).map_err(config_err)?
        }
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(config_err)?;
    Ok(cfg)
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let probe = dir.join(".write-probe");
    File::create(&probe).with_context(|| format!("output directory {} is not writable", dir.display()))?;
    fs::remove_file(&probe)?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot write {}", path.display()))?,
    ))
}

fn color(method: Method) -> &'static str {
    match method {
        Method::Dr => "#1f77b4",
        Method::Saa => "#d62728",
        Method::Cc => "#2ca02c",
        Method::Free => "#7f7f7f",
    }
}

fn method_of(c: &Controller) -> Method {
    match c {
        Controller::Dr(_) => Method::Dr,
        Controller::Saa(_) => Method::Saa,
        Controller::Cc { .. } => Method::Cc,
        Controller::Free => Method::Free,
    }
}

fn run_file_stem(c: &Controller, n: usize, rep: usize) -> String {
    let label = method_of(c).as_str();
    match c.theta() {
        Some(t) if matches!(c, Controller::Dr(_)) => format!("{label}_theta{t}_n{n}_rep{rep}"),
        _ => format!("{label}_n{n}_rep{rep}"),
    }
}

fn write_run(dir: &Path, stem: &str, run: &RunOutcome, ts_h: f64) -> Result<()> {
    report::write_trajectory_csv(create(&dir.join(format!("{stem}.csv")))?, run, ts_h)?;
    report::write_audit_jsonl(create(&dir.join(format!("{stem}.audit.jsonl")))?, &run.log.audit)?;
    Ok(())
}

fn write_svg(path: &Path, cfg: &ScenarioConfig, runs: &[(String, Method, &RunOutcome)]) -> Result<()> {
    let Some((_, _, first)) = runs.first() else {
        return Ok(());
    };
    let traces: Vec<PlotTrace> = runs
        .iter()
        .map(|(label, m, r)| PlotTrace { label, color: color(*m), states: &r.log.states })
        .collect();
    let svg = report::time_space_svg(&first.timelines, &first.log.reference, &traces, cfg.ts_h, cfg.extent_km);
    fs::write(path, svg).with_context(|| format!("cannot write {}", path.display()))
}

fn write_results(dir: &Path, rows: &[BatchResult]) -> Result<()> {
    report::write_results_csv(create(&dir.join("results.csv"))?, rows)?;
    report::write_batch_json(create(&dir.join("batches.json"))?, rows)?;
    Ok(())
}

fn gen_field(cfg: &ScenarioConfig, out: &Path, rep: usize) -> Result<()> {
    let prep = PreparedScenario::new(cfg)?;
    fs::write(out.join("config.txt"), cfg.serialize())?;
    let mut islands = String::from("id,center_km,zone_lo_km,zone_hi_km,window_lo_km,window_hi_km\n");
    for i in &prep.islands {
        islands.push_str(&format!(
            "{},{},{},{},{},{}\n",
            i.id, i.center_km, i.zone_km.0, i.zone_km.1, i.window_km.0, i.window_km.1
        ));
    }
    fs::write(out.join("islands.csv"), islands)?;
    let timelines = tidal_drmpc::sim::realize_timelines(&prep, cfg.n_samples, rep)?;
    write_timelines_csv(create(&out.join("timelines.csv"))?, &timelines)?;
    let reference = cfg.reference_path()?;
    let ref_pts: Vec<f64> = (0..=cfg.steps()).map(|t| reference.at(t as f64 * cfg.ts_h)).collect();
    let svg = report::time_space_svg(&timelines, &ref_pts, &[], cfg.ts_h, cfg.extent_km);
    fs::write(out.join("field.svg"), svg)?;
    println!("{} islands detected; wrote {}", prep.islands.len(), out.display());
    Ok(())
}

fn run(cfg: &ScenarioConfig, out: &Path, rep: usize) -> Result<()> {
    let prep = PreparedScenario::new(cfg)?;
    let controllers = [
        cfg.controller_for(Method::Dr, cfg.theta).map_err(config_err)?,
        cfg.controller_for(Method::Saa, 0.0)?,
        cfg.controller_for(Method::Cc, 0.0)?,
    ];
    let mut runs = Vec::new();
    for c in &controllers {
        let r = simulate(&prep, c, cfg.n_samples, rep)?;
        write_run(out, &run_file_stem(c, cfg.n_samples, rep), &r, cfg.ts_h)?;
        println!(
            "{:8} cost {:12.4} margin {:8.4} km{}",
            c.name(),
            r.metrics.total_cost,
            r.metrics.safety_margin,
            if r.metrics.collision { "  COLLISION" } else { "" }
        );
        if let Some(e) = &r.log.error {
            anyhow::bail!("{} aborted: {e}", c.name());
        }
        runs.push((c.name().to_string(), method_of(c), r));
    }
    write_timelines_csv(create(&out.join("timelines.csv"))?, &runs[0].2.timelines)?;
    let refs: Vec<_> = runs.iter().map(|(l, m, r)| (l.clone(), *m, r)).collect();
    write_svg(&out.join("time_space.svg"), cfg, &refs)
}

/// Runs each batch in turn, rewriting the results after every batch so a
/// failure leaves the completed rows behind.
fn sweep(cfg: &ScenarioConfig, out: &Path, batches: &[(Controller, usize)]) -> Result<()> {
    let prep = PreparedScenario::new(cfg)?;
    let traj_dir = out.join("trajectories");
    fs::create_dir_all(&traj_dir)?;
    let mut rows = Vec::new();
    let mut plotted: Vec<(String, Method, RunOutcome)> = Vec::new();
    for (c, n) in batches {
        let batch = monte_carlo(&prep, c, *n)?;
        println!(
            "{:8} theta {:>8} N {:3}  cost {:12.4} ± {:10.4}  collisions {:6.2}%",
            c.name(),
            batch.theta.map(|t| t.to_string()).unwrap_or_else(|| "-".into()),
            n,
            batch.cost_mean,
            batch.cost_std,
            batch.collision_rate
        );
        rows.push(batch);
        write_results(out, &rows)?;
        let first = simulate(&prep, c, *n, 0)?;
        write_run(&traj_dir, &run_file_stem(c, *n, 0), &first, cfg.ts_h)?;
        let label = match c {
            Controller::Dr(r) => format!("DR-MPC θ={} N={n}", r.theta),
            _ => format!("{} N={n}", c.name()),
        };
        // the plot keeps the last batch of each method
        plotted.retain(|(_, m, _)| *m != method_of(c));
        plotted.push((label, method_of(c), first));
    }
    let refs: Vec<_> = plotted.iter().map(|(l, m, r)| (l.clone(), *m, r)).collect();
    write_svg(&out.join("time_space.svg"), cfg, &refs)
}

fn sweep_theta(cfg: &ScenarioConfig, out: &Path, thetas: &[f64]) -> Result<()> {
    if thetas.is_empty() {
        return Err(config_err("theta list is empty"));
    }
    let mut batches = thetas
        .iter()
        .map(|&t| cfg.controller_for(Method::Dr, t).map(|c| (c, cfg.n_samples)))
        .collect::<tidal_drmpc::error::Result<Vec<_>>>()
        .map_err(config_err)?;
    batches.push((cfg.controller_for(Method::Saa, 0.0)?, cfg.n_samples));
    batches.push((cfg.controller_for(Method::Cc, 0.0)?, cfg.n_samples));
    sweep(cfg, out, &batches)
}

fn sweep_n(cfg: &ScenarioConfig, out: &Path, ns: &[usize], theta: f64) -> Result<()> {
    if ns.is_empty() {
        return Err(config_err("N list is empty"));
    }
    if let Some(bad) = ns.iter().find(|&&n| n == 0 || n >= cfg.pool_size) {
        return Err(config_err(format!("N = {bad} must lie in 1..{}", cfg.pool_size)));
    }
    let controllers = [
        cfg.controller_for(Method::Dr, theta).map_err(config_err)?,
        cfg.controller_for(Method::Saa, 0.0)?,
        cfg.controller_for(Method::Cc, 0.0)?,
    ];
    let batches: Vec<_> = ns
        .iter()
        .flat_map(|&n| controllers.iter().map(move |c| (*c, n)))
        .collect();
    sweep(cfg, out, &batches)
}

fn verify_all(seed: u64) -> Result<bool> {
    let checks = verify::run_all(seed);
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(checks.iter().all(|c| c.passed))
}

fn execute(cli: &Cli) -> Result<bool> {
    let cfg = load_config(cli)?;
    if let Command::Verify = cli.command {
        return verify_all(cfg.seed);
    }
    prepare_out(&cli.out)?;
    match &cli.command {
        Command::GenField { rep } => gen_field(&cfg, &cli.out, *rep)?,
        Command::Run { rep } => run(&cfg, &cli.out, *rep)?,
        Command::SweepTheta { thetas } => sweep_theta(&cfg, &cli.out, thetas.as_deref().unwrap_or(&cfg.theta_grid))?,
        Command::SweepN { ns, theta } => {
            sweep_n(&cfg, &cli.out, ns.as_deref().unwrap_or(&cfg.n_grid), theta.unwrap_or(cfg.theta))?
        }
        Command::Verify => unreachable!(),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            let is_config = e.downcast_ref::<ConfigError>().is_some()
                || matches!(e.downcast_ref::<Error>(), Some(Error::Config { .. }));
            ExitCode::from(if is_config { 2 } else { 1 })
        }
    }
}
