use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use plfilter_core::experiments::{
    emit_approx, emit_localization, run_approx_example, run_localization, selftest, FilterKind, Format, Scenario, ScenarioConfig,
};
use plfilter_core::Error;

#[derive(Parser)]
#[command(name = "plfilter", version, about = "Moment-based non-Gaussian filtering experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit DPBM and DPPM surrogates to one of the approximation examples.
    Approx {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        example: u8,
        #[command(flatten)]
        common: Common,
    },
    /// Monte-Carlo robot localization study.
    Localize {
        #[command(flatten)]
        common: Common,
    },
    /// Run the fast property checks.
    Selftest,
}

#[derive(Args)]
struct Common {
    /// TOML or JSON scenario file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// scenario id; must agree with the subcommand
    #[arg(long)]
    scenario: Option<String>,
    /// moment order 2n
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// comma-separated subset of kf,pf,dpbm,dppm,oracle
    #[arg(long, value_delimiter = ',')]
    filters: Option<Vec<String>>,
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    xmin: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    xmax: Option<f64>,
    #[arg(long)]
    nodes: Option<usize>,
    /// output directory
    #[arg(long, env = "PLFILTER_OUT_DIR", default_value = "out")]
    out: PathBuf,
    /// csv, json or all
    #[arg(long, default_value = "all")]
    format: String,
}

impl Common {
    fn resolve(&self, scenario: Scenario) -> Result<ScenarioConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => ScenarioConfig::load(path)?,
            None => ScenarioConfig::default_for(scenario),
        };
        if let Some(s) = &self.scenario {
            let s: Scenario = s.parse()?;
            if s != scenario {
                return Err(Error::Config(format!("--scenario {} conflicts with the subcommand", s.name())));
            }
        }
        if cfg.scenario != scenario {
            return Err(Error::Config(format!("config is for {}, not {}", cfg.scenario.name(), scenario.name())));
        }
        macro_rules! set {
            ($($field:ident).+ = $flag:expr) => {
                if let Some(v) = $flag {
                    cfg.$($field).+ = v;
                }
            };
        }
        set!(order = self.order);
        set!(runs = self.runs);
        set!(steps = self.steps);
        set!(seed = self.seed);
        set!(particles = self.particles);
        set!(grid.xmin = self.xmin);
        set!(grid.xmax = self.xmax);
        set!(grid.nodes = self.nodes);
        if let Some(f) = &self.filters {
            cfg.filters = f.iter().map(|s| s.parse::<FilterKind>()).collect::<Result<_, _>>()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn format(&self) -> Result<Format, Error> {
        self.format.parse()
    }
}

fn print_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn approx(example: u8, common: &Common) -> Result<(), Error> {
    let cfg = common.resolve(Scenario::example(example)?)?;
    let (report, _) = run_approx_example(&cfg)?;
    println!(
        "{}: L1 dpbm {:.4} ({:?}, residual {:.2e}), dppm {:.4} ({:?}, residual {:.2e})",
        cfg.scenario.name(),
        report.l1_dpbm,
        report.dpbm.termination,
        report.dpbm.residual,
        report.l1_dppm,
        report.dppm.termination,
        report.dppm.residual,
    );
    println!("modes: true {:?}, dpbm {:?}, dppm {:?}", report.modes_true, report.modes_dpbm, report.modes_dppm);
    print_written(&emit_approx(&report, common.format()?, &common.out)?);
    Ok(())
}

fn localize(common: &Common) -> Result<(), Error> {
    let cfg = common.resolve(Scenario::Localization)?;
    let report = run_localization(&cfg)?;
    for col in &report.rmse {
        println!(
            "{:>6}: final RMSE {:.4} over {} runs",
            col.filter.name(),
            col.rmse.last().copied().unwrap_or(f64::NAN),
            col.completed_runs
        );
    }
    print_written(&emit_localization(&report, common.format()?, &common.out)?);
    Ok(())
}

fn run_selftest() -> Result<bool, Error> {
    let checks = selftest::run();
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(checks.iter().all(|c| c.passed))
}

fn exit_code(category: &str) -> u8 {
    match category {
        "config" => 2,
        "io" => 3,
        "feasibility" => 4,
        "convergence" => 5,
        "degenerate" => 6,
        "domain" => 7,
        "capability" => 8,
        _ => 9,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Approx { example, common } => approx(*example, common).map(|_| true),
        Command::Localize { common } => localize(common).map(|_| true),
        Command::Selftest => run_selftest(),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error[selftest]: property checks failed");
            ExitCode::from(10)
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(exit_code(e.category()))
        }
    }
}
