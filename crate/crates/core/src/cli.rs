//! Subcommand dispatch. Exit codes: 0 success, 1 verdict failure (hypotheses
//! unmet, run halted or went negative), 2 usage, parse or I/O error.

use std::ffi::OsString;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::checker::{certify, CheckerConfig, StructureReport};
use crate::config::{builtin_config, emit, parse_config, ConfigDocument, EnergySettings, ThetaSetting};
use crate::energy::{fmt17, total_energy, MassWitness};
use crate::model::BuiltinParams;
use crate::output::{read_states, write_file, write_trajectory, RunManifest};
use crate::solver::{epsilon_study, DiagnosticsPlan, Simulator};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERDICT: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const OUTDIR_ENV: &str = "RD_OUTDIR";
pub const DEFAULT_OUTDIR: &str = "rd-out";

#[derive(Debug, Parser)]
#[command(name = "overlap-rd", version, about = "Reaction-diffusion systems on overlapping habitats")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a model and write snapshots, ledger and manifest.
    Run {
        /// Config file, or `-` for stdin.
        config: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Certify the structural conditions and print the report as JSON.
    Check {
        config: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute L_p from the snapshots of a finished run.
    Energy {
        run_dir: PathBuf,
        /// Energy orders (default: the config's, else 2,4).
        #[arg(long, value_delimiter = ',')]
        p: Vec<u32>,
    },
    /// Final-state L² distances between runs at decreasing ε.
    SweepEpsilon {
        config: String,
        #[arg(long, value_delimiter = ',', default_value = "1e-2,1e-3,1e-4")]
        eps: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the config text of a built-in example (ex1, ex2, ex3).
    Builtin {
        name: String,
        /// Parameter override, e.g. `--set k1=2`.
        #[arg(long = "set", value_parser = parse_assignment)]
        set: Vec<(String, f64)>,
    },
}

fn parse_assignment(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    let v: f64 = v.parse().map_err(|_| format!("bad number `{v}`"))?;
    Ok((k.to_string(), v))
}

/// Explicit `--out`, then `RD_OUTDIR`, then the default.
pub fn resolve_outdir(flag: Option<&Path>, env: Option<OsString>) -> PathBuf {
    match (flag, env) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(e)) if !e.is_empty() => PathBuf::from(e),
        _ => PathBuf::from(DEFAULT_OUTDIR),
    }
}

fn outdir(flag: Option<&Path>) -> PathBuf {
    resolve_outdir(flag, std::env::var_os(OUTDIR_ENV))
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl ToString) -> Self {
        Self { code: EXIT_USAGE, message: message.to_string() }
    }
}

fn read_config(arg: &str, stdin: &mut dyn Read) -> Result<ConfigDocument, Failure> {
    let text = if arg == "-" {
        let mut s = String::new();
        stdin.read_to_string(&mut s).map_err(|e| Failure::usage(format!("stdin: {e}")))?;
        s
    } else {
        std::fs::read_to_string(arg).map_err(|e| Failure::usage(format!("{arg}: {e}")))?
    };
    let name = if arg == "-" { "<stdin>" } else { arg };
    parse_config(&text).map_err(|e| Failure::usage(format!("{name}: {e}")))
}

/// Runs the CLI with explicit streams; returns the exit code.
pub fn run_cli<I, T>(args: I, stdin: &mut dyn Read, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(stderr, "{text}") } else { write!(stdout, "{text}") };
            return code;
        }
    };
    match dispatch(cli.command, stdin, stdout) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(command: Command, stdin: &mut dyn Read, stdout: &mut dyn Write) -> Result<i32, Failure> {
    match command {
        Command::Builtin { name, set } => {
            let mut params = BuiltinParams::new();
            for (k, v) in &set {
                params.insert(k, *v);
            }
            let text = builtin_config(&name, &params).map_err(Failure::usage)?;
            write!(stdout, "{text}").map_err(Failure::usage)?;
            Ok(EXIT_OK)
        }
        Command::Check { config, out } => {
            let doc = read_config(&config, stdin)?;
            let report = certify(&doc.model, &doc.checker_or_default()).map_err(Failure::usage)?;
            let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
            let dir = outdir(out.as_deref());
            write_file(&dir.join("report.json"), &text).map_err(Failure::usage)?;
            write!(stdout, "{text}").map_err(Failure::usage)?;
            Ok(if report.hypotheses_met { EXIT_OK } else { EXIT_VERDICT })
        }
        Command::Run { config, out } => {
            let doc = read_config(&config, stdin)?;
            run_command(&doc, &outdir(out.as_deref()), stdout)
        }
        Command::Energy { run_dir, p } => energy_command(&run_dir, &p, stdout),
        Command::SweepEpsilon { config, eps, out } => {
            let doc = read_config(&config, stdin)?;
            let study = epsilon_study(&doc.model, &doc.solver_or_default(), &eps).map_err(Failure::usage)?;
            let csv = study.to_csv();
            let dir = outdir(out.as_deref());
            write_file(&dir.join("epsilon.csv"), &csv).map_err(Failure::usage)?;
            write!(stdout, "{csv}").map_err(Failure::usage)?;
            let monotone = (0..study.distances.first().map_or(0, Vec::len))
                .all(|k| study.distances.windows(2).all(|w| w[1][k] < w[0][k]));
            Ok(if monotone { EXIT_OK } else { EXIT_VERDICT })
        }
    }
}

/// Witness for the weighted-mass ledger: the config's `mass` line, else the
/// checker's fit when it certifies (bal), else plain mass.
pub fn mass_witness(doc: &ConfigDocument) -> (MassWitness, &'static str, Option<StructureReport>) {
    if let Some(w) = &doc.mass {
        return (w.clone(), "config", None);
    }
    let cfg = doc.checker.clone().unwrap_or(CheckerConfig { samples: 100, ..CheckerConfig::default() });
    match certify(&doc.model, &cfg) {
        Ok(report) if report.bal.feasible => (report.bal.witness(), "checker", Some(report)),
        _ => (MassWitness::unweighted(doc.model.m()), "unweighted", None),
    }
}

fn energy_settings(doc: &ConfigDocument) -> EnergySettings {
    doc.energy.clone().unwrap_or(EnergySettings { orders: vec![2, 4], theta: ThetaSetting::Auto })
}

fn run_command(doc: &ConfigDocument, dir: &Path, stdout: &mut dyn Write) -> Result<i32, Failure> {
    let start = Instant::now();
    let solver = doc.solver_or_default();
    let sim = Simulator::new(&doc.model, &solver).map_err(Failure::usage)?;
    let (witness, source, _) = mass_witness(doc);
    let energies = energy_settings(doc).configs(&doc.model).map_err(Failure::usage)?;
    let plan = DiagnosticsPlan { witness: witness.clone(), energies };
    let traj = sim.run(&plan).map_err(Failure::usage)?;
    let echo = ConfigDocument { solver: Some(solver.clone()), ..doc.clone() };
    let mut manifest = write_trajectory(dir, &sim, &traj, emit(&echo)).map_err(Failure::usage)?;
    let min_value = traj.min_value();
    let m0 = traj.ledger.m0;
    let drift = traj
        .ledger
        .rows
        .iter()
        .map(|r| (r.weighted_mass - m0).abs() / m0.abs().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    let below_envelope = traj.ledger.rows.iter().all(|r| r.weighted_mass <= r.envelope + 1e-6 * (1.0 + m0));
    let nonnegative = min_value >= -solver.nonneg_floor;
    let ok = traj.halted.is_none() && nonnegative;
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    manifest.verdict = json!({
        "ok": ok,
        "halted": traj.halted,
        "warnings": traj.warnings,
        "min_value": min_value,
        "nonnegative": nonnegative,
        "mass_witness": witness,
        "mass_witness_source": source,
        "initial_weighted_mass": m0,
        "max_relative_mass_drift": drift,
        "below_envelope": below_envelope,
        "steps": traj.ledger.rows.len().saturating_sub(1),
    });
    manifest.write(dir).map_err(Failure::usage)?;
    let _ = writeln!(
        stdout,
        "{} snapshots, {} ledger rows, min {}, mass drift {:.3e} -> {}",
        traj.snapshots.len(),
        traj.ledger.rows.len(),
        fmt17(min_value),
        drift,
        dir.display()
    );
    Ok(if ok { EXIT_OK } else { EXIT_VERDICT })
}

fn energy_command(run_dir: &Path, orders: &[u32], stdout: &mut dyn Write) -> Result<i32, Failure> {
    let manifest = RunManifest::read(run_dir).map_err(Failure::usage)?;
    let doc = parse_config(&manifest.config).map_err(|e| Failure::usage(format!("manifest config: {e}")))?;
    let sim = Simulator::new(&doc.model, &doc.solver_or_default()).map_err(Failure::usage)?;
    let mut settings = energy_settings(&doc);
    if !orders.is_empty() {
        settings.orders = orders.to_vec();
    }
    let configs = settings.configs(&doc.model).map_err(Failure::usage)?;
    let states = read_states(run_dir, &manifest, &sim).map_err(Failure::usage)?;
    let mut csv = String::from("t");
    for c in &configs {
        csv.push_str(&format!(",L_{}", c.p));
    }
    csv.push('\n');
    for state in &states {
        csv.push_str(&fmt17(state.t));
        for c in &configs {
            let v = total_energy(state, &doc.model, sim.meshes(), c).map_err(Failure::usage)?;
            csv.push(',');
            csv.push_str(&fmt17(v));
        }
        csv.push('\n');
    }
    write_file(&run_dir.join("energy.csv"), &csv).map_err(Failure::usage)?;
    write!(stdout, "{csv}").map_err(Failure::usage)?;
    Ok(EXIT_OK)
}
