//! Experiment drivers: the `(1+a)Φ_ω` instability run, the `(ω, a)` scan,
//! batch identity and spectrum suites, and virial / modulation traces.
//!
//! Every file written here starts with a schema line (CSV) or carries a
//! `schema` field (JSON), and is written to a temporary sibling first and
//! renamed into place.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt::Write as _;
use std::io::Write as _;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    centered_derivative, cutoff, modulation_fit, orbit_distance, virial_rhs_check, virial_terms, CutoffProfile,
    VirialCheck, VirialPoint,
};
use crate::error::{KgzError, Result};
use crate::evolve::{evolve, sample, EvolveConfig, Observer};
use crate::functionals::{identity_report, IdentityReport};
use crate::grid::{l2_norm, make_grid, x_norm, Grid};
use crate::linops::{assemble_hessian, spectrum, SpectrumReport};
use crate::soliton::{ground_state, SolitonFamily};
use crate::state::KgzState;

pub const DIAGNOSTICS_SCHEMA: &str = "kgz-diagnostics/1";
pub const SCAN_SCHEMA: &str = "kgz-scan/1";
pub const IDENTITIES_SCHEMA: &str = "kgz-identities/1";
pub const SPECTRA_SCHEMA: &str = "kgz-spectra/1";
pub const VIRIAL_SCHEMA: &str = "kgz-virial/1";
pub const MODFIT_SCHEMA: &str = "kgz-modfit/1";
pub const SOLITON_SCHEMA: &str = "kgz-soliton/1";

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// JSON document `{"schema": ..., "data": ...}`.
pub fn to_json_document<T: Serialize>(schema: &str, data: &T) -> Result<String> {
    #[derive(Serialize)]
    struct Doc<'a, T> {
        schema: &'a str,
        data: &'a T,
    }
    Ok(serde_json::to_string_pretty(&Doc { schema, data })? + "\n")
}

/// Parses a frequency, accepting `1/sqrt2` and `-1/sqrt2` for `±1/√2`.
pub fn parse_frequency(s: &str) -> Result<f64> {
    let t = s.trim();
    match t {
        "1/sqrt2" | "+1/sqrt2" => Ok(FRAC_1_SQRT_2),
        "-1/sqrt2" => Ok(-FRAC_1_SQRT_2),
        _ => t.parse().map_err(|_| KgzError::InvalidConfig(format!("not a number: {t:?}"))),
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(parse_frequency).collect()
}

/// Settings shared by every run of an experiment batch.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ExperimentConfig {
    pub omegas: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub length: f64,
    pub points: usize,
    pub c0: f64,
    pub dt: f64,
    pub t_final: f64,
    pub record_every: usize,
    /// Cutoff radius of the virial weight.
    pub radius: f64,
    /// Exit when the orbit distance exceeds this fraction of `‖Φ_ω‖_X`.
    pub exit_fraction: f64,
    /// Fraction of `‖Φ_ω‖_X` a run must stay within to count as stable.
    pub stay_fraction: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            omegas: vec![0.2, 0.4, 0.6, FRAC_1_SQRT_2, 0.75, 0.9],
            amplitudes: vec![0.01],
            length: 60.0,
            points: 1024,
            c0: 1.0,
            dt: 0.01,
            t_final: 200.0,
            record_every: 10,
            radius: 10.0,
            exit_fraction: 0.3,
            stay_fraction: 0.1,
        }
    }
}

impl ExperimentConfig {
    /// Reads `key = value` lines; `#` starts a comment. Unknown keys are errors.
    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if !line.is_empty() {
                cfg.set(line)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_key_values(&std::fs::read_to_string(path)?)
    }

    /// Applies one `key=value` assignment.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| KgzError::InvalidConfig(format!("expected key=value, got {assignment:?}")))?;
        let value = value.trim();
        let num = |v: &str| parse_frequency(v);
        let int = |v: &str| v.parse::<usize>().map_err(|_| KgzError::InvalidConfig(format!("not an integer: {v:?}")));
        match key.trim() {
            "omega" | "omegas" => self.omegas = parse_list(value)?,
            "a" | "amplitudes" => self.amplitudes = parse_list(value)?,
            "L" | "length" => self.length = num(value)?,
            "N" | "points" => self.points = int(value)?,
            "c0" => self.c0 = num(value)?,
            "dt" => self.dt = num(value)?,
            "T" | "t_final" => self.t_final = num(value)?,
            "record_every" => self.record_every = int(value)?,
            "R" | "radius" => self.radius = num(value)?,
            "exit_fraction" => self.exit_fraction = num(value)?,
            "stay_fraction" => self.stay_fraction = num(value)?,
            other => return Err(KgzError::InvalidConfig(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(KgzError::InvalidConfig(m));
        if let Some(w) = self.omegas.iter().find(|w| !(w.abs() < 1.0)) {
            return bad(format!("frequency {w} outside (-1, 1)"));
        }
        if let Some(a) = self.amplitudes.iter().find(|a| !(a.is_finite() && **a > -1.0)) {
            return bad(format!("amplitude {a} must be finite and above -1"));
        }
        for (name, v) in [
            ("L", self.length),
            ("c0", self.c0),
            ("dt", self.dt),
            ("T", self.t_final),
            ("R", self.radius),
            ("exit_fraction", self.exit_fraction),
            ("stay_fraction", self.stay_fraction),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.record_every == 0 {
            return bad("record_every must be at least 1".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Arc<Grid>> {
        make_grid(self.length, self.points)
    }

    pub fn evolve_config(&self) -> EvolveConfig {
        EvolveConfig {
            c0: self.c0,
            dt: self.dt,
            t_final: self.t_final,
            record_every: self.record_every,
            dealias: true,
        }
    }
}

/// One row of the per-run diagnostics CSV.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    #[serde(rename = "E")]
    pub energy: f64,
    #[serde(rename = "Q")]
    pub charge: f64,
    #[serde(rename = "P")]
    pub momentum: f64,
    #[serde(rename = "dE_rel")]
    pub de_rel: f64,
    pub orbit_distance: f64,
    pub theta: f64,
    pub y: f64,
    pub lambda: f64,
    #[serde(rename = "I_virial")]
    pub i_virial: f64,
    #[serde(rename = "I_tilde")]
    pub i_tilde: f64,
    pub xnorm_xi: f64,
    pub moment0: f64,
    pub moment1: f64,
}

pub const DIAGNOSTICS_COLUMNS: [&str; 14] = [
    "t",
    "E",
    "Q",
    "P",
    "dE_rel",
    "orbit_distance",
    "theta",
    "y",
    "lambda",
    "I_virial",
    "I_tilde",
    "xnorm_xi",
    "moment0",
    "moment1",
];

fn fmt_f(x: f64) -> String {
    format!("{x:.17e}")
}

/// Serializes records as CSV with the schema line first.
pub fn diagnostics_csv(records: &[DiagnosticsRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(DIAGNOSTICS_COLUMNS)?;
    for r in records {
        let row = [
            r.t,
            r.energy,
            r.charge,
            r.momentum,
            r.de_rel,
            r.orbit_distance,
            r.theta,
            r.y,
            r.lambda,
            r.i_virial,
            r.i_tilde,
            r.xnorm_xi,
            r.moment0,
            r.moment1,
        ];
        w.write_record(row.iter().map(|x| fmt_f(*x)))?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| KgzError::Io(e.into_error()))?)
        .expect("csv output is ASCII");
    Ok(format!("# schema: {DIAGNOSTICS_SCHEMA}\n{body}"))
}

/// Reads back a diagnostics CSV written by [`diagnostics_csv`].
pub fn read_diagnostics_csv(text: &str) -> Result<Vec<DiagnosticsRecord>> {
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut r = csv::Reader::from_reader(body.as_bytes());
    r.deserialize().map(|row| row.map_err(KgzError::from)).collect()
}

/// Tracks orbit distance, modulation parameters and the virial quantities.
struct Tracker<'a> {
    grid: &'a Arc<Grid>,
    fam: &'a SolitonFamily,
    cut: &'a CutoffProfile,
    omega: f64,
    c0: f64,
    exit_level: f64,
    e0: Option<f64>,
    guess: Option<(f64, f64, f64)>,
    records: Vec<DiagnosticsRecord>,
    t_exit: Option<f64>,
}

impl Tracker<'_> {
    fn record(&mut self, t: f64, s: &KgzState) -> Result<DiagnosticsRecord> {
        let smp = sample(self.grid, t, s, self.c0)?;
        let e0 = *self.e0.get_or_insert(smp.energy);
        let q = s.to_quad(self.grid)?;
        let od = orbit_distance(self.grid, &q, self.fam)?;
        let fit = modulation_fit(self.grid, &q, self.omega, self.guess).ok();
        self.guess = fit.as_ref().map(|f| (f.theta, f.y, f.lambda));
        let y = fit.as_ref().map_or(od.y, |f| f.y);
        let vt = virial_terms(self.grid, s, y, self.cut, self.omega, self.c0)?;
        Ok(DiagnosticsRecord {
            t,
            energy: smp.energy,
            charge: smp.charge,
            momentum: smp.momentum,
            de_rel: (smp.energy - e0) / e0.abs().max(f64::MIN_POSITIVE),
            orbit_distance: od.distance,
            theta: fit.as_ref().map_or(f64::NAN, |f| f.theta),
            y: fit.as_ref().map_or(f64::NAN, |f| f.y),
            lambda: fit.as_ref().map_or(f64::NAN, |f| f.lambda),
            i_virial: vt.i_virial,
            i_tilde: vt.i_tilde,
            xnorm_xi: fit.as_ref().map_or(f64::NAN, |f| f.xi_norm),
            moment0: smp.moment0,
            moment1: smp.moment1,
        })
    }
}

impl Observer for Tracker<'_> {
    fn observe(&mut self, t: f64, s: &KgzState) -> Result<ControlFlow<()>> {
        let rec = self.record(t, s)?;
        let out = rec.orbit_distance > self.exit_level;
        self.records.push(rec);
        if out {
            self.t_exit = Some(t);
            return Ok(ControlFlow::Break(()));
        }
        Ok(ControlFlow::Continue(()))
    }
}

/// Outcome of one `(1+a)Φ_ω` run.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct StabilityVerdict {
    pub omega: f64,
    pub a: f64,
    pub exited: bool,
    pub t_exit: Option<f64>,
    /// The run ended with `BlowUp`; `t_exit` is the blow-up time.
    pub blew_up: bool,
    pub max_distance: f64,
    /// `max_distance / ‖Φ_ω‖_X`.
    pub max_distance_rel: f64,
    pub exit_threshold: f64,
    /// Minimum five-point `dĨ/dt` over the recorded window.
    pub min_i_tilde_slope: f64,
    /// Least-squares slope of `Ĩ(t)` while the orbit distance stays below a
    /// quarter of the exit threshold.
    pub i_tilde_slope: f64,
    pub horizon: f64,
    /// `"exited"` or `"no exit before T"`; a finite horizon cannot certify stability.
    pub note: String,
    pub records: Option<String>,
}

fn least_squares_slope(t: &[f64], f: &[f64]) -> f64 {
    let n = t.len() as f64;
    if t.len() < 2 {
        return f64::NAN;
    }
    let tm = t.iter().sum::<f64>() / n;
    let fm = f.iter().sum::<f64>() / n;
    let num: f64 = t.iter().zip(f).map(|(a, b)| (a - tm) * (b - fm)).sum();
    let den: f64 = t.iter().map(|a| (a - tm) * (a - tm)).sum();
    num / den
}

/// Per-run result: verdict plus the full record table.
pub struct InstabilityRun {
    pub verdict: StabilityVerdict,
    pub records: Vec<DiagnosticsRecord>,
}

/// Evolves `(1+a)Φ_ω` with `ν₀ = 0`, tracking the orbit until the distance
/// exceeds `exit_fraction · ‖Φ_ω‖_X` or `T` is reached. When `out` is given,
/// the records are written there as CSV.
pub fn run_instability_experiment(cfg: &ExperimentConfig, omega: f64, a: f64, out: Option<&Path>) -> Result<InstabilityRun> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let fam = SolitonFamily::new(&grid, omega)?;
    let cut = cutoff(&grid, cfg.radius)?;
    let phi_norm = x_norm(&grid, fam.standing_wave())?;
    let exit_level = cfg.exit_fraction * phi_norm;
    let s0 = KgzState::from_quad(&grid, &fam.scaled_standing_wave(a))?;
    let mut tracker = Tracker {
        grid: &grid,
        fam: &fam,
        cut: &cut,
        omega,
        c0: cfg.c0,
        exit_level,
        e0: None,
        guess: None,
        records: Vec::new(),
        t_exit: None,
    };
    let ecfg = cfg.evolve_config();
    let mut blew_up = false;
    match evolve(&grid, &s0, &ecfg, &mut [&mut tracker]) {
        Ok(_) => {}
        Err(KgzError::BlowUp { t, .. }) => {
            blew_up = true;
            tracker.t_exit = Some(t);
        }
        Err(e) => return Err(e),
    }
    let records = tracker.records;
    let t_exit = tracker.t_exit;
    let max_distance = records.iter().map(|r| r.orbit_distance).fold(0.0, f64::max);
    let ts: Vec<f64> = records.iter().map(|r| r.t).collect();
    let its: Vec<f64> = records.iter().map(|r| r.i_tilde).collect();
    let dt_rec = ecfg.dt * ecfg.record_every as f64;
    let min_i_tilde_slope = centered_derivative(&its, dt_rec).into_iter().fold(f64::NAN, f64::min);
    let near = records.iter().take_while(|r| r.orbit_distance < 0.25 * exit_level).count();
    let i_tilde_slope = least_squares_slope(&ts[..near], &its[..near]);
    let exited = t_exit.is_some();
    let path = match out {
        Some(p) => {
            write_atomic(p, diagnostics_csv(&records)?.as_bytes())?;
            Some(p.display().to_string())
        }
        None => None,
    };
    Ok(InstabilityRun {
        verdict: StabilityVerdict {
            omega,
            a,
            exited,
            t_exit,
            blew_up,
            max_distance,
            max_distance_rel: max_distance / phi_norm,
            exit_threshold: exit_level,
            min_i_tilde_slope,
            i_tilde_slope,
            horizon: cfg.t_final,
            note: if exited { "exited".into() } else { "no exit before T".into() },
            records: path,
        },
        records,
    })
}

/// One scan entry; failures are kept rather than aborting the scan.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ScanEntry {
    pub omega: f64,
    pub a: f64,
    pub verdict: Option<StabilityVerdict>,
    pub error: Option<String>,
}

fn run_file_name(omega: f64, a: f64) -> String {
    format!("run_omega{omega:+.6}_a{a:+.6}.csv")
}

/// Runs every `(ω, a)` pair in parallel, in a fixed output order. With
/// `out_dir`, writes per-run CSVs and `scan.csv`.
pub fn stability_scan(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<Vec<ScanEntry>> {
    cfg.validate()?;
    let pairs: Vec<(f64, f64)> = cfg.omegas.iter().flat_map(|&w| cfg.amplitudes.iter().map(move |&a| (w, a))).collect();
    let entries: Vec<ScanEntry> = pairs
        .par_iter()
        .map(|&(omega, a)| {
            let path: Option<PathBuf> = out_dir.map(|d| d.join(run_file_name(omega, a)));
            match run_instability_experiment(cfg, omega, a, path.as_deref()) {
                Ok(run) => ScanEntry { omega, a, verdict: Some(run.verdict), error: None },
                Err(e) => ScanEntry { omega, a, verdict: None, error: Some(e.to_string()) },
            }
        })
        .collect();
    if let Some(d) = out_dir {
        write_atomic(&d.join("scan.csv"), scan_csv(&entries).as_bytes())?;
    }
    Ok(entries)
}

pub fn scan_csv(entries: &[ScanEntry]) -> String {
    let mut s = format!(
        "# schema: {SCAN_SCHEMA}\nomega,a,exited,t_exit,max_distance,max_distance_rel,min_I_tilde_slope,I_tilde_slope,note,error\n"
    );
    for e in entries {
        match &e.verdict {
            Some(v) => {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{},",
                    fmt_f(e.omega),
                    fmt_f(e.a),
                    v.exited,
                    v.t_exit.map(fmt_f).unwrap_or_default(),
                    fmt_f(v.max_distance),
                    fmt_f(v.max_distance_rel),
                    fmt_f(v.min_i_tilde_slope),
                    fmt_f(v.i_tilde_slope),
                    v.note
                );
            }
            None => {
                let msg = e.error.clone().unwrap_or_default().replace(['"', ','], ";");
                let _ = writeln!(s, "{},{},,,,,,,,{msg}", fmt_f(e.omega), fmt_f(e.a));
            }
        }
    }
    s
}

/// Identity reports as CSV rows, schema line first.
pub fn identities_csv(reports: &[IdentityReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        w.serialize(r)?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| KgzError::Io(e.into_error()))?)
        .expect("csv output is ASCII");
    Ok(format!("# schema: {IDENTITIES_SCHEMA}\n{body}"))
}

/// Thresholds shared by the suites and the acceptance checks.
pub mod thresholds {
    pub const IDENTITY: f64 = 1e-7;
    pub const DQ_DOMEGA: f64 = 1e-5;
    pub const DQ_AT_DEGENERATE: f64 = 1e-6;
    pub const KERNEL_RESIDUAL: f64 = 1e-7;
    pub const NEGATIVE_DIRECTION: f64 = 1e-7;
    pub const QUADRATIC_FORM: f64 = 1e-6;
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct IdentityEntry {
    pub report: IdentityReport,
    pub pass: bool,
    pub failures: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct IdentitySuite {
    pub length: f64,
    pub points: usize,
    pub entries: Vec<IdentityEntry>,
    pub all_pass: bool,
}

/// Identity report at every frequency, judged against the fixed thresholds.
pub fn suite_identities(omegas: &[f64], length: f64, points: usize) -> Result<IdentitySuite> {
    let grid = make_grid(length, points)?;
    let entries = omegas
        .iter()
        .map(|&w| {
            let r = identity_report(&grid, w)?;
            let mut failures = Vec::new();
            for (name, v) in [
                ("Q", r.q_defect),
                ("3E-4wQ", r.three_e_defect),
                ("pohozaev_grad", r.pohozaev_grad_defect),
                ("pohozaev_l4", r.pohozaev_l4_defect),
            ] {
                if !(v < thresholds::IDENTITY) {
                    failures.push(format!("{name} defect {v:e}"));
                }
            }
            if !(r.dq_domega_defect < thresholds::DQ_DOMEGA) {
                failures.push(format!("dQ/domega defect {:e}", r.dq_domega_defect));
            }
            if (w.abs() - FRAC_1_SQRT_2).abs() < 1e-12 && !(r.dq_domega_fd.abs() < thresholds::DQ_AT_DEGENERATE) {
                failures.push(format!("dQ/domega at the degenerate frequency {:e}", r.dq_domega_fd));
            }
            Ok(IdentityEntry { pass: failures.is_empty(), report: r, failures })
        })
        .collect::<Result<Vec<_>>>()?;
    let all_pass = entries.iter().all(|e| e.pass);
    Ok(IdentitySuite { length, points, entries, all_pass })
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SpectrumEntry {
    pub report: SpectrumReport,
    /// `‖S″Υ‖/‖Υ‖`, `‖S″∂ₓΦ‖/‖∂ₓΦ‖`.
    pub kernel_residuals: [f64; 2],
    /// `‖S″F - Ψ‖/‖Ψ‖`.
    pub negative_direction_residual: f64,
    pub quadratic_form: f64,
    /// `-ω²/√(1-ω²) ‖φ₀‖²`.
    pub quadratic_form_expected: f64,
    pub pass: bool,
    pub failures: Vec<String>,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SpectrumSuite {
    pub length: f64,
    pub points: usize,
    pub c0: f64,
    pub entries: Vec<SpectrumEntry>,
    pub all_pass: bool,
}

/// Number of lowest eigenvalues reported per frequency.
pub const SPECTRUM_COUNT: usize = 12;

pub fn suite_spectra(omegas: &[f64], length: f64, points: usize, c0: f64) -> Result<SpectrumSuite> {
    let grid = make_grid(length, points)?;
    let phi0 = ground_state(&grid)?;
    let mass0 = grid.inner_r(&phi0, &phi0);
    let entries = omegas
        .iter()
        .map(|&w| spectrum_entry(&grid, w, c0, mass0))
        .collect::<Result<Vec<_>>>()?;
    let all_pass = entries.iter().all(|e| e.pass);
    Ok(SpectrumSuite { length, points, c0, entries, all_pass })
}

fn spectrum_entry(grid: &Arc<Grid>, w: f64, c0: f64, mass0: f64) -> Result<SpectrumEntry> {
    let op = assemble_hessian(grid, w, c0)?;
    let report = spectrum(&op, SPECTRUM_COUNT)?;
    let p = op.profile();
    let rel = |v: &crate::grid::Quad| -> Result<f64> { Ok(l2_norm(grid, &op.apply(v)?) / l2_norm(grid, v)) };
    let kernel_residuals = [rel(&p.upsilon())?, rel(&p.dx_standing_wave())?];
    let fdir = p.negative_direction();
    let psi = p.psi();
    let mut failures = Vec::new();
    let mut notes = Vec::new();
    let (negative_direction_residual, quadratic_form) = if w == 0.0 {
        notes.push("negative direction vanishes at omega = 0; F checks skipped".into());
        (0.0, 0.0)
    } else {
        let sf = op.apply(&fdir)?;
        (l2_norm(grid, &sf.sub(&psi)) / l2_norm(grid, &psi), crate::grid::inner(grid, &sf, &fdir))
    };
    let quadratic_form_expected = -w * w / (1.0 - w * w).sqrt() * mass0;
    if report.n_negative != 1 {
        failures.push(format!("{} negative eigenvalues", report.n_negative));
    }
    if report.kernel_dimension != 2 {
        failures.push(format!("kernel dimension {}", report.kernel_dimension));
    }
    for (name, r) in ["upsilon", "dx_phi"].iter().zip(kernel_residuals) {
        if !(r < thresholds::KERNEL_RESIDUAL) {
            failures.push(format!("S''{name} residual {r:e}"));
        }
    }
    if w != 0.0 {
        if !(negative_direction_residual < thresholds::NEGATIVE_DIRECTION) {
            failures.push(format!("S''F - Psi residual {negative_direction_residual:e}"));
        }
        let qd = (quadratic_form - quadratic_form_expected).abs() / quadratic_form_expected.abs();
        if !(qd < thresholds::QUADRATIC_FORM) {
            failures.push(format!("<S''F, F> defect {qd:e}"));
        }
    }
    match report.coercivity_min {
        Some(c) if !(c > 0.0) => failures.push(format!("coercivity constant {c:e}")),
        Some(_) => {}
        None => notes.push("coercivity skipped: requires omega != 0".into()),
    }
    Ok(SpectrumEntry {
        report,
        kernel_residuals,
        negative_direction_residual,
        quadratic_form,
        quadratic_form_expected,
        pass: failures.is_empty(),
        failures,
        notes,
    })
}

/// Virial identity check along a `(1+a)Φ_ω` run of length `window`,
/// sampling every `sample_every` steps.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct VirialRun {
    pub omega: f64,
    pub a: f64,
    pub samples: Vec<VirialPoint>,
    pub check: VirialCheck,
}

pub fn virial_run(cfg: &ExperimentConfig, omega: f64, a: f64, window: f64, sample_every: usize) -> Result<VirialRun> {
    struct Collect<'a> {
        grid: &'a Arc<Grid>,
        cut: &'a CutoffProfile,
        omega: f64,
        c0: f64,
        guess: Option<(f64, f64, f64)>,
        points: Vec<VirialPoint>,
    }
    impl Observer for Collect<'_> {
        fn observe(&mut self, t: f64, s: &KgzState) -> Result<ControlFlow<()>> {
            let fit = modulation_fit(self.grid, &s.to_quad(self.grid)?, self.omega, self.guess)?;
            self.guess = Some((fit.theta, fit.y, fit.lambda));
            let terms = virial_terms(self.grid, s, fit.y, self.cut, self.omega, self.c0)?;
            self.points.push(VirialPoint { t, y: fit.y, terms });
            Ok(ControlFlow::Continue(()))
        }
    }
    cfg.validate()?;
    let grid = cfg.grid()?;
    let fam = SolitonFamily::new(&grid, omega)?;
    let cut = cutoff(&grid, cfg.radius)?;
    let s0 = KgzState::from_quad(&grid, &fam.scaled_standing_wave(a))?;
    let ecfg = EvolveConfig { t_final: window, record_every: sample_every, ..cfg.evolve_config() };
    let mut col = Collect { grid: &grid, cut: &cut, omega, c0: cfg.c0, guess: None, points: Vec::new() };
    evolve(&grid, &s0, &ecfg, &mut [&mut col])?;
    let check = virial_rhs_check(&col.points, grid.length())?;
    Ok(VirialRun { omega, a, samples: col.points, check })
}

/// Modulation parameters at one time.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ModfitRecord {
    pub t: f64,
    pub theta: f64,
    pub y: f64,
    pub lambda: f64,
    pub xnorm_xi: f64,
    pub ortho_defects: [f64; 3],
    pub mod_bound: f64,
    pub iterations: usize,
}

/// Modulation fit at every record of a `(1+a)Φ_ω` run; stops at the first
/// failed fit and reports it.
pub fn modfit_run(cfg: &ExperimentConfig, omega: f64, a: f64) -> Result<(Vec<ModfitRecord>, Option<String>)> {
    struct Fits<'a> {
        grid: &'a Arc<Grid>,
        omega: f64,
        guess: Option<(f64, f64, f64)>,
        records: Vec<ModfitRecord>,
        failure: Option<String>,
    }
    impl Observer for Fits<'_> {
        fn observe(&mut self, t: f64, s: &KgzState) -> Result<ControlFlow<()>> {
            match modulation_fit(self.grid, &s.to_quad(self.grid)?, self.omega, self.guess) {
                Ok(f) => {
                    self.guess = Some((f.theta, f.y, f.lambda));
                    self.records.push(ModfitRecord {
                        t,
                        theta: f.theta,
                        y: f.y,
                        lambda: f.lambda,
                        xnorm_xi: f.xi_norm,
                        ortho_defects: f.ortho_defects,
                        mod_bound: f.mod_bound,
                        iterations: f.iterations,
                    });
                    Ok(ControlFlow::Continue(()))
                }
                Err(e) => {
                    self.failure = Some(format!("t = {t}: {e}"));
                    Ok(ControlFlow::Break(()))
                }
            }
        }
    }
    cfg.validate()?;
    let grid = cfg.grid()?;
    let fam = SolitonFamily::new(&grid, omega)?;
    let s0 = KgzState::from_quad(&grid, &fam.scaled_standing_wave(a))?;
    let mut fits = Fits { grid: &grid, omega, guess: None, records: Vec::new(), failure: None };
    evolve(&grid, &s0, &cfg.evolve_config(), &mut [&mut fits])?;
    Ok((fits.records, fits.failure))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            omegas: vec![0.9],
            amplitudes: vec![0.0],
            length: 40.0,
            points: 256,
            t_final: 1.0,
            dt: 0.01,
            radius: 8.0,
            ..Default::default()
        }
    }

    #[test]
    fn key_value_config() {
        let cfg = ExperimentConfig::from_key_values(
            "# scan\nomega = 0.2, 1/sqrt2, -0.9\na = 0.01,0.02\nL = 40\nN = 512 # grid\nT=50\n",
        )
        .unwrap();
        assert_eq!(cfg.omegas, vec![0.2, FRAC_1_SQRT_2, -0.9]);
        assert_eq!(cfg.amplitudes, vec![0.01, 0.02]);
        assert_eq!((cfg.length, cfg.points, cfg.t_final), (40.0, 512, 50.0));
        assert!(ExperimentConfig::from_key_values("bogus = 1").is_err());
        assert!(ExperimentConfig::from_key_values("omega = 1.2").is_err());
        assert!(ExperimentConfig::from_key_values("dt = -1").is_err());
        let mut c = ExperimentConfig::default();
        c.set("N=128").unwrap();
        assert_eq!(c.points, 128);
    }

    #[test]
    fn empty_scan() {
        let cfg = ExperimentConfig { omegas: vec![], ..small() };
        assert!(stability_scan(&cfg, None).unwrap().is_empty());
    }

    #[test]
    fn unperturbed_run_stays_on_orbit() {
        let run = run_instability_experiment(&small(), 0.9, 0.0, None).unwrap();
        assert!(!run.verdict.exited);
        assert!(run.verdict.max_distance < 1e-8);
        assert_eq!(run.records.len(), 11);
        assert!(run.records.iter().all(|r| r.i_tilde.abs() < 1e-10));
    }

    #[test]
    fn csv_round_trip_and_schema() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.csv");
        let run = run_instability_experiment(&small(), 0.9, 0.01, Some(&path)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# schema: kgz-diagnostics/1\nt,E,Q,P,dE_rel,orbit_distance,theta,y,lambda,I_virial,I_tilde,xnorm_xi,moment0,moment1\n"));
        let back = read_diagnostics_csv(&text).unwrap();
        assert_eq!(back, run.records);
    }

    #[test]
    fn scan_is_deterministic_and_keeps_errors() {
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig { omegas: vec![0.9, 0.5], amplitudes: vec![0.01], ..small() };
        stability_scan(&cfg, Some(dir1.path())).unwrap();
        stability_scan(&cfg, Some(dir2.path())).unwrap();
        for name in ["scan.csv", &run_file_name(0.9, 0.01), &run_file_name(0.5, 0.01)] {
            let a = std::fs::read(dir1.path().join(name)).unwrap();
            let b = std::fs::read(dir2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name}");
        }
        // a cutoff too wide for the box fails every run without aborting the scan
        let bad = ExperimentConfig { radius: 15.0, ..cfg };
        let entries = stability_scan(&bad, None).unwrap();
        assert_eq!(entries.len(), 2);
        assert!(entries.iter().all(|e| e.verdict.is_none() && e.error.is_some()));
    }

    #[test]
    fn spectra_suite_notes_zero_frequency() {
        let suite = suite_spectra(&[0.0], 40.0, 64, 1.0).unwrap();
        let e = &suite.entries[0];
        assert!(e.report.coercivity_min.is_none());
        assert!(e.notes.iter().any(|n| n.contains("coercivity skipped")));
    }

    #[test]
    fn json_document_carries_schema() {
        let doc = to_json_document(IDENTITIES_SCHEMA, &vec![1.0, 2.0]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&doc).unwrap();
        assert_eq!(v["schema"], "kgz-identities/1");
        assert_eq!(v["data"][1], 2.0);
    }
}
