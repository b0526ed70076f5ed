//! `kgz`: command-line front end.
//!
//! Exit codes: 0 when every check passes, 1 when a check fails, 2 on errors.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use kgz_core::harness::{
    self, diagnostics_csv, identities_csv, modfit_run, parse_frequency, run_instability_experiment, scan_csv,
    stability_scan, suite_identities, suite_spectra, to_json_document, virial_run, write_atomic, ExperimentConfig,
    ModfitRecord,
};
use kgz_core::{assemble_hessian, identity_report, make_grid, spectrum, SolitonFamily};

#[derive(Parser)]
#[command(name = "kgz", version, about = "Klein-Gordon-Zakharov standing-wave laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Profile φ_ω and its tangents as CSV.
    Soliton(SolitonArgs),
    /// Closed-form identity defects as CSV.
    Identities(IdentitiesArgs),
    /// Lowest eigenvalues of the Hessian as JSON.
    Spectrum(SpectrumArgs),
    /// Evolve (1+a)Φ_ω and write the diagnostics CSV.
    Evolve(RunArgs),
    /// Compare the finite-difference dĨ/dt with the virial right side.
    VirialCheck(VirialArgs),
    /// Modulation parameters along a run, as JSON.
    Modfit(RunArgs),
    /// Instability experiment over every (ω, a) pair.
    Scan(ScanArgs),
    /// Identity and spectrum suites with pass/fail verdicts.
    Suite(SuiteArgs),
}

fn frequency(s: &str) -> Result<f64, String> {
    parse_frequency(s).map_err(|e| e.to_string())
}

#[derive(Args)]
struct Output {
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Output {
    fn emit(&self, text: &str) -> Result<()> {
        match &self.out {
            Some(p) => write_atomic(p, text.as_bytes()).with_context(|| format!("writing {}", p.display())),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}

#[derive(Args)]
struct SolitonArgs {
    #[arg(long, value_parser = frequency, allow_hyphen_values = true)]
    omega: f64,
    #[arg(long = "L", default_value_t = 60.0)]
    length: f64,
    #[arg(long = "N", default_value_t = 1024)]
    points: usize,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct IdentitiesArgs {
    /// Comma-separated; `1/sqrt2` is accepted.
    #[arg(long, value_parser = frequency, value_delimiter = ',', allow_hyphen_values = true,
          default_value = "0,0.3,-0.3,1/sqrt2,-1/sqrt2,0.9,-0.9")]
    omega: Vec<f64>,
    #[arg(long = "L", default_value_t = 60.0)]
    length: f64,
    #[arg(long = "N", default_value_t = 1024)]
    points: usize,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct SpectrumArgs {
    #[arg(long, value_parser = frequency, allow_hyphen_values = true)]
    omega: f64,
    #[arg(long, default_value_t = harness::SPECTRUM_COUNT)]
    count: usize,
    #[arg(long = "L", default_value_t = 40.0)]
    length: f64,
    #[arg(long = "N", default_value_t = 256)]
    points: usize,
    #[arg(long, default_value_t = 1.0)]
    c0: f64,
    #[command(flatten)]
    output: Output,
}

/// Settings for a single (ω, a) run; unset values fall back to the config
/// file, then to the defaults.
#[derive(Args)]
struct RunArgs {
    #[arg(long, value_parser = frequency, allow_hyphen_values = true)]
    omega: f64,
    #[arg(long, default_value_t = 0.01, allow_negative_numbers = true)]
    a: f64,
    #[arg(long = "T")]
    t_final: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long = "L")]
    length: Option<f64>,
    #[arg(long = "N")]
    points: Option<usize>,
    #[arg(long)]
    c0: Option<f64>,
    #[arg(long = "R")]
    radius: Option<f64>,
    #[arg(long)]
    record_every: Option<usize>,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct ConfigArgs {
    /// Key-value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` override, applied after the file; repeatable.
    #[arg(long = "set")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p).with_context(|| format!("reading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        for o in &self.overrides {
            cfg.set(o)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = self.config.load()?;
        if let Some(v) = self.t_final {
            cfg.t_final = v;
        }
        if let Some(v) = self.dt {
            cfg.dt = v;
        }
        if let Some(v) = self.length {
            cfg.length = v;
        }
        if let Some(v) = self.points {
            cfg.points = v;
        }
        if let Some(v) = self.c0 {
            cfg.c0 = v;
        }
        if let Some(v) = self.radius {
            cfg.radius = v;
        }
        if let Some(v) = self.record_every {
            cfg.record_every = v;
        }
        cfg.omegas = vec![self.omega];
        cfg.amplitudes = vec![self.a];
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct VirialArgs {
    #[arg(long, value_parser = frequency, allow_hyphen_values = true)]
    omega: f64,
    #[arg(long, default_value_t = 0.01, allow_negative_numbers = true)]
    a: f64,
    /// Length of the checked window.
    #[arg(long, default_value_t = 2.0)]
    window: f64,
    #[arg(long, default_value_t = 5e-3)]
    dt: f64,
    /// Steps between samples.
    #[arg(long, default_value_t = 2)]
    sample_every: usize,
    #[arg(long = "L", default_value_t = 60.0)]
    length: f64,
    #[arg(long = "N", default_value_t = 1024)]
    points: usize,
    #[arg(long, default_value_t = 1.0)]
    c0: f64,
    #[arg(long = "R", default_value_t = 10.0)]
    radius: f64,
    /// Largest accepted residual.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct ScanArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Directory for `scan.csv` and the per-run CSVs.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SuiteArgs {
    #[arg(long, value_parser = frequency, value_delimiter = ',', allow_hyphen_values = true,
          default_value = "0,0.3,-0.3,1/sqrt2,-1/sqrt2,0.9,-0.9")]
    omega: Vec<f64>,
    #[arg(long, default_value_t = 60.0)]
    identities_length: f64,
    #[arg(long, default_value_t = 1024)]
    identities_points: usize,
    #[arg(long, default_value_t = 40.0)]
    spectra_length: f64,
    #[arg(long, default_value_t = 256)]
    spectra_points: usize,
    #[arg(long, default_value_t = 1.0)]
    c0: f64,
    /// Directory for `identities.json` and `spectra.json`; summary only when omitted.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn verdict(pass: bool) -> ExitCode {
    if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Soliton(a) => {
            let grid = make_grid(a.length, a.points)?;
            let fam = SolitonFamily::new(&grid, a.omega)?;
            let mut buf = format!("# schema: {}\n", harness::SOLITON_SCHEMA).into_bytes();
            fam.write_csv(&mut buf)?;
            a.output.emit(&String::from_utf8(buf)?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Identities(a) => {
            let grid = make_grid(a.length, a.points)?;
            let reports = a.omega.iter().map(|&w| identity_report(&grid, w)).collect::<Result<Vec<_>, _>>()?;
            a.output.emit(&identities_csv(&reports)?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Spectrum(a) => {
            let grid = make_grid(a.length, a.points)?;
            let op = assemble_hessian(&grid, a.omega, a.c0)?;
            let report = spectrum(&op, a.count)?;
            a.output.emit(&to_json_document(harness::SPECTRA_SCHEMA, &report)?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Evolve(a) => {
            let cfg = a.config()?;
            let out = run_instability_experiment(&cfg, a.omega, a.a, None)?;
            a.output.emit(&diagnostics_csv(&out.records)?)?;
            eprintln!("{}", serde_json::to_string(&out.verdict)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::VirialCheck(a) => {
            let cfg = ExperimentConfig {
                length: a.length,
                points: a.points,
                c0: a.c0,
                dt: a.dt,
                radius: a.radius,
                ..ExperimentConfig::default()
            };
            let r = virial_run(&cfg, a.omega, a.a, a.window, a.sample_every)?;
            let pass = r.check.max_residual < a.tol;
            a.output.emit(&to_json_document(harness::VIRIAL_SCHEMA, &r)?)?;
            eprintln!("max residual {:.3e} (tol {:.1e})", r.check.max_residual, a.tol);
            Ok(verdict(pass))
        }
        Command::Modfit(a) => {
            #[derive(Serialize)]
            struct Doc {
                omega: f64,
                a: f64,
                records: Vec<ModfitRecord>,
                failure: Option<String>,
            }
            let cfg = a.config()?;
            let (records, failure) = modfit_run(&cfg, a.omega, a.a)?;
            let pass = failure.is_none();
            let doc = Doc { omega: a.omega, a: a.a, records, failure };
            a.output.emit(&to_json_document(harness::MODFIT_SCHEMA, &doc)?)?;
            Ok(verdict(pass))
        }
        Command::Scan(a) => {
            let cfg = a.config.load()?;
            let entries = stability_scan(&cfg, a.out_dir.as_deref())?;
            if a.out_dir.is_none() {
                print!("{}", scan_csv(&entries));
            }
            for e in entries.iter().filter(|e| e.error.is_some()) {
                eprintln!("omega {} a {}: {}", e.omega, e.a, e.error.as_deref().unwrap_or(""));
            }
            Ok(verdict(entries.iter().all(|e| e.error.is_none())))
        }
        Command::Suite(a) => {
            let ids = suite_identities(&a.omega, a.identities_length, a.identities_points)?;
            let spec = suite_spectra(&a.omega, a.spectra_length, a.spectra_points, a.c0)?;
            if let Some(d) = &a.out_dir {
                write_atomic(&d.join("identities.json"), to_json_document(harness::IDENTITIES_SCHEMA, &ids)?.as_bytes())?;
                write_atomic(&d.join("spectra.json"), to_json_document(harness::SPECTRA_SCHEMA, &spec)?.as_bytes())?;
            }
            report_suite(&ids, &spec);
            Ok(verdict(ids.all_pass && spec.all_pass))
        }
    }
}

fn report_suite(ids: &harness::IdentitySuite, spec: &harness::SpectrumSuite) {
    for e in &ids.entries {
        let tag = if e.pass { "PASS" } else { "FAIL" };
        println!("identities omega={:+.6} {tag} {}", e.report.omega, e.failures.join("; "));
    }
    for e in &spec.entries {
        let tag = if e.pass { "PASS" } else { "FAIL" };
        let mut msg = e.failures.clone();
        msg.extend(e.notes.iter().cloned());
        println!("spectrum   omega={:+.6} {tag} {}", e.report.omega, msg.join("; "));
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
