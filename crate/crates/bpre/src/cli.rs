//! Command-line front end: flat INI configuration with flag overrides,
//! subcommand orchestration, and JSON/CSV report emission.
//!
//! Exit codes: 0 ok, 1 configuration error, 2 acceptance failure,
//! 3 runtime error.

use crate::asymptotics::{
    const_d, const_k, const_k1, default_delta, empirical_gamma_mean, tau_statistics,
    theoretical_survival, un_yaglom_law,
};
use crate::env_models::{EnvironmentModel, Family};
use crate::montecarlo::{
    conditional_un_given_survival, conditional_un_given_tau, estimate_survival_bigjump,
    estimate_survival_naive, flt_suite, BigJumpConfig,
};
use crate::numeric::mix_seed;
use crate::process_core::{simulate_path, walk_functionals, SimOpts};
use crate::validate;
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelSection {
    pub family: String,
    pub beta: f64,
    pub x_m: f64,
    pub shift_c: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            family: "pareto_geometric".into(),
            beta: 3.0,
            x_m: 1.0,
            shift_c: 2.0,
            gamma_min: 0.0,
            gamma_max: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunSection {
    /// generation horizons, e.g. "40,60,80"
    pub n: Vec<usize>,
    pub samples: usize,
    pub min_survivors: usize,
    pub j_max: usize,
    /// number of grid intervals on [0,1] for the functional statistics
    pub grid: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            n: vec![40, 60, 80],
            samples: 1_000_000,
            min_survivors: 2000,
            j_max: 40,
            grid: 20,
            seed: 1,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OutputSection {
    pub directory: String,
    pub formats: Vec<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: "out".into(),
            formats: vec!["json".into(), "csv".into()],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub run: RunSection,
    pub output: OutputSection,
    /// Command-line `--out` override; kept outside the config echo so
    /// reports are byte-identical regardless of where they are written.
    #[serde(skip)]
    pub out_override: Option<String>,
}

impl ExperimentConfig {
    fn out_dir(&self) -> &str {
        self.out_override.as_deref().unwrap_or(&self.output.directory)
    }
}

impl ExperimentConfig {
    /// Parse the flat INI format; unknown sections or keys are rejected.
    pub fn parse_ini(text: &str) -> Result<Self, CliError> {
        let mut cfg = ExperimentConfig::default();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                if !matches!(section.as_str(), "model" | "run" | "output") {
                    return Err(CliError::Config(format!(
                        "line {}: unknown section [{section}]",
                        lineno + 1
                    )));
                }
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config(format!(
                    "line {}: expected key = value",
                    lineno + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| {
                CliError::Config(format!("line {}: invalid {what}: {value}", lineno + 1))
            };
            match (section.as_str(), key) {
                ("model", "family") => cfg.model.family = value.to_string(),
                ("model", "beta") => cfg.model.beta = value.parse().map_err(|_| bad("beta"))?,
                ("model", "x_m") => cfg.model.x_m = value.parse().map_err(|_| bad("x_m"))?,
                ("model", "shift_c") => {
                    cfg.model.shift_c = value.parse().map_err(|_| bad("shift_c"))?
                }
                ("model", "gamma_min") => {
                    cfg.model.gamma_min = value.parse().map_err(|_| bad("gamma_min"))?
                }
                ("model", "gamma_max") => {
                    cfg.model.gamma_max = value.parse().map_err(|_| bad("gamma_max"))?
                }
                ("run", "n") => {
                    cfg.run.n = value
                        .split(',')
                        .map(|v| v.trim().parse::<usize>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| bad("n list"))?;
                }
                ("run", "samples") => {
                    cfg.run.samples = value.parse().map_err(|_| bad("samples"))?
                }
                ("run", "min_survivors") => {
                    cfg.run.min_survivors = value.parse().map_err(|_| bad("min_survivors"))?
                }
                ("run", "j_max") => cfg.run.j_max = value.parse().map_err(|_| bad("j_max"))?,
                ("run", "grid") => cfg.run.grid = value.parse().map_err(|_| bad("grid"))?,
                ("run", "seed") => cfg.run.seed = value.parse().map_err(|_| bad("seed"))?,
                ("run", "workers") => {
                    cfg.run.workers = value.parse().map_err(|_| bad("workers"))?
                }
                ("output", "directory") => cfg.output.directory = value.to_string(),
                ("output", "formats") => {
                    cfg.output.formats =
                        value.split(',').map(|v| v.trim().to_string()).collect();
                }
                _ => {
                    return Err(CliError::Config(format!(
                        "line {}: unknown key '{key}' in section [{section}]",
                        lineno + 1
                    )));
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model_family()?;
        self.build_model()?;
        if self.run.n.is_empty() {
            return Err(CliError::Config("run.n must be non-empty".into()));
        }
        if self.run.grid == 0 {
            return Err(CliError::Config("run.grid must be positive".into()));
        }
        if self.run.workers == 0 {
            return Err(CliError::Config("run.workers must be positive".into()));
        }
        for f in &self.output.formats {
            if f != "json" && f != "csv" {
                return Err(CliError::Config(format!("unknown output format '{f}'")));
            }
        }
        Ok(())
    }

    fn model_family(&self) -> Result<Family, CliError> {
        self.model
            .family
            .parse::<Family>()
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn build_model(&self) -> Result<EnvironmentModel, CliError> {
        let family = self.model_family()?;
        let gamma = match family {
            Family::ParetoFractionalAtom => Some((self.model.gamma_min, self.model.gamma_max)),
            _ => None,
        };
        EnvironmentModel::new(
            family,
            self.model.beta,
            self.model.x_m,
            self.model.shift_c,
            gamma,
        )
        .map_err(|e| CliError::Config(e.to_string()))
    }

    fn wants(&self, format: &str) -> bool {
        self.output.formats.iter().any(|f| f == format)
    }
}

/// Envelope every JSON report is wrapped in; together with the seed and
/// worker count it is sufficient to reproduce the file byte-for-byte.
#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    version: &'static str,
    command: &'a str,
    seed: u64,
    workers: usize,
    config: &'a ExperimentConfig,
    body: T,
}

fn write_report<T: Serialize>(
    cfg: &ExperimentConfig,
    command: &str,
    body: T,
) -> Result<(), CliError> {
    if !cfg.wants("json") {
        return Ok(());
    }
    let report = Report {
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed: cfg.run.seed,
        workers: cfg.run.workers,
        config: cfg,
        body,
    };
    let dir = Path::new(cfg.out_dir());
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{command}.json"));
    let mut text = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    std::fs::write(&path, text)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn write_csv(cfg: &ExperimentConfig, name: &str, content: &str) -> Result<(), CliError> {
    if !cfg.wants("csv") {
        return Ok(());
    }
    let dir = Path::new(cfg.out_dir());
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, content)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

#[derive(Parser)]
#[command(name = "bpre", version, about = "Simulation and numerical verification for subcritical branching processes in heavy-tailed random environments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// INI configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// root seed (overrides config)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// worker threads (overrides config)
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// output directory (overrides config)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// restrict output formats: csv or json (overrides config)
    #[arg(long, global = true)]
    format: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate process paths and emit per-path summaries and full paths
    Simulate,
    /// Estimate the limit constants D, K, K1, E[tau] and the jump moment
    Constants,
    /// Survival probability: naive and importance-sampled vs the limit law
    Survival,
    /// Conditional law of the first big-jump position
    Unlaw,
    /// Functional limit statistics over conditioned survivors
    Flt,
    /// Run the acceptance criteria and exit nonzero on failure
    Validate,
}

/// Binary entry point; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // --help/--version are successful outcomes
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let mut cfg = match &cli.config {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(text) => match ExperimentConfig::parse_ini(&text) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("{e}");
                    return 1;
                }
            },
            Err(e) => {
                eprintln!("configuration error: cannot read {}: {e}", path.display());
                return 1;
            }
        },
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(workers) = cli.workers {
        cfg.run.workers = workers;
    }
    if let Some(out) = &cli.out {
        cfg.out_override = Some(out.display().to_string());
    }
    if let Some(fmt) = &cli.format {
        cfg.output.formats = vec![fmt.clone()];
    }
    if let Err(e) = cfg.validate() {
        eprintln!("{e}");
        return 1;
    }

    let t0 = Instant::now();
    let outcome = match cli.command {
        Command::Simulate => cmd_simulate(&cfg),
        Command::Constants => cmd_constants(&cfg),
        Command::Survival => cmd_survival(&cfg),
        Command::Unlaw => cmd_unlaw(&cfg),
        Command::Flt => cmd_flt(&cfg),
        Command::Validate => return run_validate(&cfg, t0),
    };
    eprintln!("wall time: {:.3}s", t0.elapsed().as_secs_f64());
    match outcome {
        Ok(()) => 0,
        Err(e @ CliError::Config(_)) => {
            eprintln!("{e}");
            1
        }
        Err(e @ CliError::Runtime(_)) => {
            eprintln!("{e}");
            3
        }
    }
}

fn fmt_opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn cmd_simulate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let model = cfg.build_model()?;
    let mut summary = String::from("run_id,n,survived,U_n,tau_n,L_n,M_n,N_Un,capped\n");
    let mut paths = String::from("run_id,k,Z_k,S_k\n");
    let mut run_id = 0usize;
    let mut emitted = 0usize;
    for &n in &cfg.run.n {
        let opts = || SimOpts {
            z0: 1,
            jump_threshold: Some(n as f64 * model.a),
        };
        for i in 0..cfg.run.samples {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(
                mix_seed(cfg.run.seed, 0x7369_6d75),
                (n as u64) << 32 | i as u64,
            ));
            let rec = simulate_path(&model, n, opts(), &mut rng);
            let w = walk_functionals(&rec.s, model.a);
            writeln!(
                summary,
                "{run_id},{n},{},{},{},{},{},{},{}",
                u8::from(rec.survived()),
                fmt_opt(rec.u_n),
                w.tau_n,
                w.l_n,
                w.m_n,
                fmt_opt(rec.n_big_jump_offspring),
                u8::from(rec.ever_capped()),
            )
            .unwrap();
            for (k, (&z, &s)) in rec.z.iter().zip(&rec.s).enumerate() {
                writeln!(paths, "{run_id},{k},{z},{s}").unwrap();
            }
            run_id += 1;
            emitted += 1;
        }
    }
    write_csv(cfg, "summary.csv", &summary)?;
    write_csv(cfg, "paths.csv", &paths)?;
    write_report(cfg, "simulate", serde_json::json!({ "paths_emitted": emitted }))?;
    Ok(())
}

fn op_rng(cfg: &ExperimentConfig, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(cfg.run.seed, salt))
}

fn cmd_constants(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let model = cfg.build_model()?;
    let s = cfg.run.samples;
    let d = const_d(&model, 400, s, &mut op_rng(cfg, 1));
    let k1 = const_k1(&model, 60, s, &mut op_rng(cfg, 2));
    let k = const_k(&model, cfg.run.j_max.max(40), s, &mut op_rng(cfg, 3));
    let tau = tau_statistics(&model, 12, s, &mut op_rng(cfg, 4));
    let gamma = empirical_gamma_mean(&model, 25.0, s, default_delta, &mut op_rng(cfg, 5));
    write_report(
        cfg,
        "constants",
        serde_json::json!({
            "d": d, "k1": k1, "k": k, "tau": tau, "gamma_mean": gamma,
        }),
    )
}

fn cmd_survival(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let model = cfg.build_model()?;
    let s = cfg.run.samples;
    let k = const_k(
        &model,
        cfg.run.j_max.max(40),
        (s / 5).max(20_000),
        &mut op_rng(cfg, 6),
    );
    let bj = BigJumpConfig {
        j_max: cfg.run.j_max,
        ..BigJumpConfig::default()
    };
    bj.validate_grid(&cfg.run.n)
        .map_err(CliError::Config)?;
    let mut rows = Vec::new();
    let mut csv = String::from("n,naive,naive_se,is,is_se,theory,ratio\n");
    for &n in &cfg.run.n {
        let naive = estimate_survival_naive(&model, n, 1, s, cfg.run.seed, cfg.run.workers);
        let is = estimate_survival_bigjump(
            &model,
            n,
            1,
            &bj,
            (s / 100).max(1_000),
            s,
            cfg.run.seed,
            cfg.run.workers,
        );
        let theory = theoretical_survival(&model, k.value, n);
        let ratio = is.total.point / theory;
        writeln!(
            csv,
            "{n},{},{},{},{},{theory},{ratio}",
            naive.point, naive.stderr, is.total.point, is.total.stderr
        )
        .unwrap();
        rows.push(serde_json::json!({
            "n": n, "naive": naive, "is": is, "theory": theory, "ratio": ratio,
        }));
    }
    write_csv(cfg, "survival.csv", &csv)?;
    write_report(cfg, "survival", serde_json::json!({ "k": k, "rows": rows }))
}

fn cmd_unlaw(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let model = cfg.build_model()?;
    let s = cfg.run.samples;
    let n = *cfg.run.n.iter().max().unwrap();
    let k = const_k(
        &model,
        cfg.run.j_max.max(40),
        (s / 5).max(20_000),
        &mut op_rng(cfg, 7),
    );
    let bj = BigJumpConfig {
        j_max: cfg.run.j_max,
        ..BigJumpConfig::default()
    };
    let surv = conditional_un_given_survival(
        &model,
        n,
        1,
        &bj,
        (s / 100).max(1_000),
        s,
        cfg.run.seed,
        cfg.run.workers,
    );
    let tau_rep = tau_statistics(&model, 12, (s / 5).max(20_000), &mut op_rng(cfg, 8));
    let tau = conditional_un_given_tau(&model, n, s * 10, 10, cfg.run.seed, cfg.run.workers);
    let theory_surv: Vec<f64> = (1..=10).map(|j| un_yaglom_law(&k, j)).collect();
    let theory_tau: Vec<f64> = (1..=10)
        .map(|j| tau_rep.tail[j - 1] / tau_rep.e_tau)
        .collect();
    let tv_surv = validate::renormalized_tv(&surv.masses[..10], &theory_surv);
    let tv_tau = validate::renormalized_tv(&tau.masses[..10], &theory_tau);
    let mut csv = String::from("j,surv_mass,surv_theory,tau_mass,tau_theory\n");
    for j in 1..=10usize {
        writeln!(
            csv,
            "{j},{},{},{},{}",
            surv.masses[j - 1],
            theory_surv[j - 1],
            tau.masses[j - 1],
            theory_tau[j - 1]
        )
        .unwrap();
    }
    write_csv(cfg, "unlaw.csv", &csv)?;
    write_report(
        cfg,
        "unlaw",
        serde_json::json!({
            "n": n, "survival_conditioned": surv, "tau_conditioned": tau,
            "theory_survival": theory_surv, "theory_tau": theory_tau,
            "tv_survival": tv_surv, "tv_tau": tv_tau, "k": k,
        }),
    )
}

fn cmd_flt(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let model = cfg.build_model()?;
    let n = *cfg.run.n.iter().max().unwrap();
    let bj = BigJumpConfig {
        j_max: cfg.run.j_max,
        ..BigJumpConfig::default()
    };
    let rep = flt_suite(
        &model,
        n,
        1,
        cfg.run.min_survivors,
        cfg.run.grid,
        &bj,
        cfg.run.seed,
        cfg.run.workers,
    );
    let mut csv = String::from("t,mean_r,stderr_r,capped\n");
    for (i, &t) in rep.grid.iter().enumerate() {
        writeln!(csv, "{t},{},{},{}", rep.mean_r[i], rep.stderr_r[i], rep.capped_at_grid[i])
            .unwrap();
    }
    write_csv(cfg, "flt.csv", &csv)?;
    write_report(cfg, "flt", &rep)
}

fn run_validate(cfg: &ExperimentConfig, t0: Instant) -> i32 {
    let results = validate::run_all(cfg.run.seed, cfg.run.workers);
    let mut all = true;
    for r in &results {
        println!(
            "criterion {:2}: {} — {} ({:.1}s) {}",
            r.index,
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.seconds,
            r.detail
        );
        all &= r.passed;
    }
    if let Err(e) = write_report(cfg, "validate", &results) {
        eprintln!("{e}");
        return 3;
    }
    eprintln!("wall time: {:.3}s", t0.elapsed().as_secs_f64());
    if all {
        0
    } else {
        2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config() {
        let text = "
# comment
[model]
family = pareto_fractional_atom
beta = 3.5
x_m = 1.0
shift_c = 2.5
gamma_min = 0.1
gamma_max = 0.4

[run]
n = 10, 20
samples = 500
seed = 42
workers = 2

[output]
directory = /tmp/x
formats = json
";
        let cfg = ExperimentConfig::parse_ini(text).unwrap();
        assert_eq!(cfg.model.family, "pareto_fractional_atom");
        assert_eq!(cfg.run.n, vec![10, 20]);
        assert_eq!(cfg.run.samples, 500);
        assert_eq!(cfg.run.seed, 42);
        assert_eq!(cfg.output.formats, vec!["json"]);
        // unset keys keep defaults
        assert_eq!(cfg.run.grid, 20);
        cfg.build_model().unwrap();
    }

    #[test]
    fn rejects_unknown_keys_and_sections() {
        assert!(matches!(
            ExperimentConfig::parse_ini("[model]\nfoo = 1\n"),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::parse_ini("[extra]\n"),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::parse_ini("[model]\nbeta = x\n"),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::parse_ini("[model]\nno equals sign\n"),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn rejects_invalid_model() {
        // beta <= 2 is not a valid heavy-tail index here
        let text = "[model]\nbeta = 1.5\n";
        assert!(matches!(
            ExperimentConfig::parse_ini(text),
            Err(CliError::Config(_))
        ));
        // supercritical shift
        let text = "[model]\nshift_c = 1.0\n";
        assert!(matches!(
            ExperimentConfig::parse_ini(text),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn default_config_is_valid() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.run.n, vec![40, 60, 80]);
    }
}
