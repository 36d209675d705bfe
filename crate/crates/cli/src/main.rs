mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rfidloc_core::coverage::{coverage_map, coverage_percentage, Mode};
use rfidloc_core::estimation::crlb;
use rfidloc_core::experiments::{
    self, build_scenario, calibrated_overrides, median, run_accuracy, run_accuracy_sweep, run_coverage_sweep,
    AccuracyResult, Calibration, CellAccuracy, Cdf, ExperimentError, Overrides, SweepResult,
};
use rfidloc_core::io::{self, Manifest, ManifestFile, ManifestScenario};
use rfidloc_core::scenario::Scenario;

use config::Config;

#[derive(Parser, Debug)]
#[command(name = "rfidloc", version, about = "Coverage, CRLB and MLE experiments for passive UHF RFID localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Localization coverage map of one deployment.
    Coverage(Common),
    /// Per-cell Cramér-Rao bound on the coverage grid.
    CrlbMap(Common),
    /// Monte Carlo MLE accuracy on the accuracy sub-grid.
    MleSim(Common),
    /// Coverage (and optionally accuracy) over the configured sweep axes.
    Sweep(Common),
    /// Fit the backscatter product to the anchor coverage.
    Calibrate(Common),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 or unset uses all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Coverage grid step in meters.
    #[arg(long)]
    grid_step: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    mode: Option<Mode>,
    /// 1 cm coverage grid, 10 cm accuracy grid, 1000 trials per cell.
    #[arg(long)]
    full_scale: bool,
    /// Progress on stderr; repeat for more.
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(msg) => Failure::Config(msg),
            ExperimentError::Propagation(p) => Failure::Config(p.to_string()),
            ExperimentError::Coverage(c) => Failure::Config(c.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<io::IoError> for Failure {
    fn from(e: io::IoError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<rfidloc_core::estimation::EstimationError> for Failure {
    fn from(e: rfidloc_core::estimation::EstimationError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<rfidloc_core::coverage::CoverageError> for Failure {
    fn from(e: rfidloc_core::coverage::CoverageError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

struct Run {
    cfg: Config,
    overrides: Overrides,
    calibration: Option<Calibration>,
    out_dir: PathBuf,
    verbose: u8,
    mode: Option<Mode>,
}

impl Run {
    fn log(&self, level: u8, msg: impl AsRef<str>) {
        if self.verbose >= level {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn scenario(&self) -> Result<Scenario, Failure> {
        let mode = self.mode.unwrap_or_else(|| self.cfg.mode());
        Ok(build_scenario(self.cfg.placement(), self.cfg.theta(), self.cfg.power_mw(), mode, &self.overrides)?)
    }

    fn manifest(&self, command: &str, scenarios: Vec<ManifestScenario>, files: Vec<ManifestFile>) -> Result<(), Failure> {
        let m = Manifest { command: command.into(), scenarios, calibration: self.calibration, files };
        io::write_manifest(&self.out_dir, &m)?;
        Ok(())
    }
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<(), io::IoError>) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn prepare(common: &Common) -> Result<Run, Failure> {
    let cfg = config::load(&common.config).map_err(Failure::Config)?;
    let mut overrides = cfg.overrides();
    if common.full_scale {
        overrides.coverage_step = Some(experiments::FULL_SCALE_STEP_M);
        overrides.accuracy_step = Some(0.1);
        overrides.trials_per_cell = Some(1000);
    }
    if let Some(s) = common.grid_step {
        overrides.coverage_step = Some(s);
    }
    if let Some(t) = common.trials {
        overrides.trials_per_cell = Some(t);
    }
    if let Some(s) = common.seed {
        overrides.seed = Some(s);
    }
    let threads = common.threads.or(cfg.run.threads).unwrap_or(0);
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    let out_dir = common
        .output_dir
        .clone()
        .or_else(|| cfg.run.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let mut run = Run { cfg, overrides, calibration: None, out_dir, verbose: common.verbose, mode: common.mode };
    if run.cfg.calibrate() {
        run.log(1, format!("calibrating to {:.1}% anchor coverage", run.cfg.target_pct()));
        let (o, cal) = calibrated_overrides(&run.overrides, run.cfg.target_pct())?;
        println!("calibrated backscatter product: {:.6e} ({:.2}% coverage)", cal.product, cal.achieved_pct);
        run.overrides = o;
        run.calibration = Some(cal);
    }
    Ok(run)
}

fn cmd_coverage(run: &Run) -> Result<(), Failure> {
    let s = run.scenario()?;
    let map = coverage_map(&s)?;
    let pct = coverage_percentage(&map)?;
    let name = format!("{}.csv", io::scenario_stem(&s));
    let file = io::write_file(&run.out_dir, &name, &csv_bytes(|b| io::write_coverage_csv(&map, b))?)?;
    run.manifest("coverage", vec![ManifestScenario::new(&s, Some(pct))], vec![file])?;
    println!("coverage: {pct:.1}%");
    Ok(())
}

fn cmd_crlb_map(run: &Run) -> Result<(), Failure> {
    let s = run.scenario()?;
    let map = coverage_map(&s)?;
    let cells = (0..s.room.len())
        .map(|cell| {
            let tag = s.room.cell_center(cell);
            let b = crlb(&s, &tag)?;
            Ok(CellAccuracy {
                cell,
                x: tag.x,
                y: tag.y,
                m: b.measurements,
                crlb_rmse_m: b.rmse_lower_bound,
                mle_rmse_m: f64::NAN,
            })
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    let bounds: Vec<f64> = cells.iter().filter(|c| c.localizable()).map(|c| c.crlb_rmse_m).collect();
    let pct = coverage_percentage(&map)?;
    let result = AccuracyResult {
        coverage_pct: pct,
        median_crlb_m: median(&bounds),
        median_mle_m: None,
        crlb_cdf: Cdf::from_samples(&bounds),
        mle_cdf: Cdf::default(),
        localizable_fraction: bounds.len() as f64 / cells.len().max(1) as f64,
        cells,
    };
    let name = format!("{}_crlb.csv", io::scenario_stem(&s));
    let file = io::write_file(&run.out_dir, &name, &csv_bytes(|b| io::write_accuracy_csv(&result, b))?)?;
    run.manifest("crlb-map", vec![ManifestScenario::new(&s, Some(pct))], vec![file])?;
    println!("coverage: {pct:.1}%");
    match result.median_crlb_m {
        Some(m) => println!("median CRLB RMSE: {m:.3} m"),
        None => println!("median CRLB RMSE: n/a (no localizable cells)"),
    }
    Ok(())
}

fn fmt_median(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |m| format!("{m:.3} m"))
}

fn cmd_mle_sim(run: &Run) -> Result<(), Failure> {
    let s = run.scenario()?;
    run.log(1, format!("{} accuracy cells x {} trials", s.accuracy_grid().len(), s.trials_per_cell));
    let r = run_accuracy(&s)?;
    let stem = io::scenario_stem(&s);
    let acc = io::write_file(&run.out_dir, &format!("{stem}_accuracy.csv"), &csv_bytes(|b| io::write_accuracy_csv(&r, b))?)?;
    let cdf = io::write_file(
        &run.out_dir,
        &format!("{stem}_cdf.csv"),
        &csv_bytes(|b| io::write_cdf_csv(&[("mle", &r.mle_cdf), ("crlb", &r.crlb_cdf)], b))?,
    )?;
    run.manifest("mle-sim", vec![ManifestScenario::new(&s, Some(r.coverage_pct))], vec![acc, cdf])?;
    println!("coverage: {:.1}%", r.coverage_pct);
    println!("median CRLB RMSE: {}", fmt_median(r.median_crlb_m));
    println!("median MLE RMSE:  {}", fmt_median(r.median_mle_m));
    println!("P(MLE RMSE <= 1 m): {:.3}", r.mle_cdf.at(1.0));
    println!("P(CRLB <= 1 m):     {:.3}", r.crlb_cdf.at(1.0));
    Ok(())
}

fn print_sweep(sweep: &SweepResult) {
    println!("{:<8} {:>7} {:>8} {:<11} {:>9} {:>11} {:>11}", "place", "theta", "power", "mode", "coverage", "med CRLB", "med MLE");
    for p in &sweep.points {
        println!(
            "{:<8} {:>7.2} {:>8.0} {:<11} {:>8.1}% {:>11} {:>11}",
            p.placement.as_str(),
            p.theta.to_degrees(),
            p.power_mw,
            p.mode.as_str(),
            p.coverage_pct,
            fmt_median(p.median_crlb_m),
            fmt_median(p.median_mle_m)
        );
    }
}

fn cmd_sweep(run: &Run) -> Result<(), Failure> {
    let mut axes = run.cfg.sweep_axes();
    if let Some(m) = run.mode {
        axes.modes = vec![m];
    }
    let combos = axes.combinations();
    run.log(1, format!("{} sweep points", combos.len()));
    let mut files = Vec::new();
    let mut scenarios = Vec::new();
    let sweep = if run.cfg.wants_sweep_accuracy() {
        let (sweep, details) = run_accuracy_sweep(&axes, &run.overrides)?;
        for ((p, t, w, m), r) in combos.iter().zip(&details) {
            let s = build_scenario(*p, *t, *w, *m, &run.overrides)?;
            let stem = io::scenario_stem(&s);
            files.push(io::write_file(&run.out_dir, &format!("{stem}_accuracy.csv"), &csv_bytes(|b| io::write_accuracy_csv(r, b))?)?);
            scenarios.push(ManifestScenario::new(&s, Some(r.coverage_pct)));
        }
        sweep
    } else {
        run_coverage_sweep(&axes, &run.overrides)?
    };
    for (p, t, w, m) in &combos {
        let s = build_scenario(*p, *t, *w, *m, &run.overrides)?;
        run.log(2, format!("map {}", io::scenario_stem(&s)));
        let map = coverage_map(&s)?;
        let stem = io::scenario_stem(&s);
        files.push(io::write_file(&run.out_dir, &format!("{stem}.csv"), &csv_bytes(|b| io::write_coverage_csv(&map, b))?)?);
        if !run.cfg.wants_sweep_accuracy() {
            scenarios.push(ManifestScenario::new(&s, Some(coverage_percentage(&map)?)));
        }
    }
    files.push(io::write_file(&run.out_dir, "sweep.csv", &csv_bytes(|b| io::write_sweep_csv(&sweep, b))?)?);
    run.manifest("sweep", scenarios, files)?;
    print_sweep(&sweep);
    Ok(())
}

fn cmd_calibrate(run: &Run) -> Result<(), Failure> {
    let cal = match run.calibration {
        Some(c) => c,
        None => calibrated_overrides(&run.overrides, run.cfg.target_pct())?.1,
    };
    let json = serde_json::to_vec_pretty(&cal).map_err(|e| Failure::Runtime(e.to_string()))?;
    let file = io::write_file(&run.out_dir, "calibration.json", &json)?;
    let anchor = experiments::anchor_scenario(&run.overrides)?;
    let m = Manifest {
        command: "calibrate".into(),
        scenarios: vec![ManifestScenario::new(&anchor, None)],
        calibration: Some(cal),
        files: vec![file],
    };
    io::write_manifest(&run.out_dir, &m)?;
    println!("backscatter product: {:.9e}", cal.product);
    println!("coverage: {:.1}% (target {:.1}%)", cal.achieved_pct, cal.target_pct);
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let (common, f): (&Common, fn(&Run) -> Result<(), Failure>) = match &cli.command {
        Command::Coverage(c) => (c, cmd_coverage),
        Command::CrlbMap(c) => (c, cmd_crlb_map),
        Command::MleSim(c) => (c, cmd_mle_sim),
        Command::Sweep(c) => (c, cmd_sweep),
        Command::Calibrate(c) => (c, cmd_calibrate),
    };
    let run = prepare(common)?;
    f(&run)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
