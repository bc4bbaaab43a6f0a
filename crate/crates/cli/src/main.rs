use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use auglag::harness::{format_table, run_problem, run_suite, RunOptions, SuiteResult};
use auglag::lagrangian::HessianMode;
use auglag::profile::{performance_profile, profile_csv};
use auglag::registry::{registry, RegistryEntry};
use clap::{ArgGroup, Parser, ValueEnum};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Auto,
    Direct,
    Augmented,
}

/// Safeguarded augmented Lagrangian solver on built-in test problems.
#[derive(Debug, Parser)]
#[command(name = "auglag", version)]
#[command(group(ArgGroup::new("target").required(true).args(["problem", "suite", "list"])))]
struct Cli {
    /// Solve one registry problem.
    #[arg(long)]
    problem: Option<String>,
    /// Comma-separated problem names, or `all`.
    #[arg(long)]
    suite: Option<String>,
    /// Print the registry and exit.
    #[arg(long)]
    list: bool,
    #[arg(long, value_enum, default_value = "on")]
    scale: Switch,
    #[arg(long)]
    eps_feas: Option<f64>,
    #[arg(long)]
    eps_opt: Option<f64>,
    #[arg(long)]
    eps_compl: Option<f64>,
    #[arg(long)]
    rho_big: Option<f64>,
    #[arg(long)]
    max_outer: Option<u64>,
    /// Run the KKT Newton acceleration after each outer iteration.
    #[arg(long, conflicts_with = "no_accel")]
    accel: bool,
    /// Disable the acceleration (the default).
    #[arg(long)]
    no_accel: bool,
    #[arg(long, value_enum, default_value = "auto")]
    hessian: Mode,
    /// Attach the complexity audit to each run.
    #[arg(long)]
    audit: bool,
    /// Write the JSON report here.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Seed for the random QP instances and the audit sampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Suite only: write a performance profile (inner iterations, with and
    /// without acceleration) as CSV.
    #[arg(long, requires = "suite")]
    profile_csv: Option<PathBuf>,
}

impl Cli {
    fn run_options(&self) -> RunOptions {
        let mut o = RunOptions {
            audit: self.audit,
            seed: self.seed,
            ..RunOptions::default()
        };
        let s = &mut o.solver;
        s.scale = matches!(self.scale, Switch::On);
        s.eps_feas = self.eps_feas.unwrap_or(s.eps_feas);
        s.eps_opt = self.eps_opt.unwrap_or(s.eps_opt);
        s.eps_compl = self.eps_compl.unwrap_or(s.eps_compl);
        s.rho_big = self.rho_big.unwrap_or(s.rho_big);
        s.max_outer_iterations = self.max_outer.unwrap_or(s.max_outer_iterations);
        s.accel_enabled = self.accel && !self.no_accel;
        s.hessian_mode = match self.hessian {
            Mode::Auto => HessianMode::Auto,
            Mode::Direct => HessianMode::Direct,
            Mode::Augmented => HessianMode::Augmented,
        };
        o
    }
}

fn usage(msg: &str) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(2)
}

fn write(path: &PathBuf, body: &str) -> Result<(), ExitCode> {
    fs::write(path, body).map_err(|e| {
        eprintln!("error: cannot write {}: {e}", path.display());
        ExitCode::from(1)
    })
}

fn select(names: &str, seed: u64) -> Result<Vec<RegistryEntry>, String> {
    let reg = registry(seed);
    if names.trim() == "all" {
        return Ok(reg);
    }
    names
        .split(',')
        .map(str::trim)
        .filter(|n| !n.is_empty())
        .map(|n| reg.iter().find(|e| e.name == n).cloned().ok_or_else(|| format!("unknown problem `{n}`")))
        .collect()
}

fn inner_work(s: &SuiteResult, names: &[String]) -> Vec<f64> {
    names
        .iter()
        .map(|n| match s.records.iter().find(|r| &r.problem == n) {
            Some(r) if r.status.is_success() => r.counters.inner_iterations.max(1) as f64,
            _ => f64::INFINITY,
        })
        .collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let opts = cli.run_options();
    if cli.list {
        for e in registry(cli.seed) {
            let cat = serde_json::to_value(e.category).unwrap_or_default();
            println!("{:<20} {:<14} n={}", e.name, cat.as_str().unwrap_or(""), e.x0.len());
        }
        return ExitCode::SUCCESS;
    }
    if let Some(name) = &cli.problem {
        let Some(entry) = registry(cli.seed).into_iter().find(|e| &e.name == name) else {
            return usage(&format!("unknown problem `{name}`"));
        };
        let doc = match run_problem(&entry, &opts) {
            Ok(d) => d,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
        };
        print!("{}", format_table(std::slice::from_ref(&doc.record)));
        if let Some(path) = &cli.json {
            if let Err(code) = write(path, &doc.to_json()) {
                return code;
            }
        }
        return if doc.record.status.is_success() {
            ExitCode::SUCCESS
        } else {
            ExitCode::from(1)
        };
    }
    let names = cli.suite.as_deref().unwrap_or_default();
    let entries = match select(names, cli.seed) {
        Ok(e) => e,
        Err(msg) => return usage(&msg),
    };
    let suite = run_suite(&entries, &opts);
    print!("{}", format_table(&suite.records));
    for (k, v) in &suite.status_counts {
        println!("{k}: {v}");
    }
    for (name, err) in &suite.errors {
        eprintln!("{name}: {err}");
    }
    if let Some(path) = &cli.json {
        let body = serde_json::to_string_pretty(&suite).expect("suite is serializable");
        if let Err(code) = write(path, &body) {
            return code;
        }
    }
    if let Some(path) = &cli.profile_csv {
        let mut other = opts.clone();
        other.solver.accel_enabled = !opts.solver.accel_enabled;
        let second = run_suite(&entries, &other);
        let names: Vec<String> = entries.iter().map(|e| e.name.clone()).collect();
        let (plain, accel) = if opts.solver.accel_enabled { (&second, &suite) } else { (&suite, &second) };
        let times = vec![inner_work(plain, &names), inner_work(accel, &names)];
        let taus: Vec<f64> = (0..=40).map(|k| 1.0 + 0.25 * k as f64).collect();
        let curves = performance_profile(&times, &taus);
        if let Err(code) = write(path, &profile_csv(&["auglag", "auglag_accel"], &taus, &curves)) {
            return code;
        }
    }
    if suite.errors.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
