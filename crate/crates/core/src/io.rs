//! Configuration files, field files and deviation series on disk.
//!
//! All numbers are written as decimal text with 17 significant digits,
//! which round-trips every `f64` exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::dynamics::ControlField;
use crate::error::{Error, Result};
use crate::governor::{DeviationSeries, DipoleChoice, GovernorConfig, ScenarioKind, TargetByte, GENERAL_TARGET_BN};
use crate::krotov::{KrotovSettings, OptimizationRecord};
use crate::units::{au_to_ps, ps_to_au, rate_from_lifetime_ps};

/// Uncontrolled maximum deviation the ground-state noise is calibrated to.
pub const GROUND_CALIBRATION_R_MAX: f64 = 2e-4;
/// Uncontrolled maximum deviation the general-target noise is calibrated to.
pub const GENERAL_CALIBRATION_R_MAX: f64 = 5.9e-5;

/// Keys every config file must set.
pub const REQUIRED_KEYS: [&str; 6] =
    ["delta_hartree", "omega1_hartree", "omega2_hartree", "tau_trans_ps", "tau_free_ps", "gamma_inv_ps"];

/// Optional keys with their defaults, as shown to users.
pub const OPTIONAL_KEYS: [(&str, &str); 18] = [
    ("cycles", "20"),
    ("dt_au", "5"),
    ("samples_per_segment", "64"),
    ("target_byte", "ground (or general)"),
    ("b_n", "0.23113851357429"),
    ("gate", "standard (or scrambled)"),
    ("noise_amplitude_au", "calibrated when absent"),
    ("calibration_r_max", "2e-4 for ground, 5.9e-5 for general"),
    ("seed_count", "8 (seeds 1..=seed_count)"),
    ("lambda", "2e-5"),
    ("envelope_sigma_ps", "tau_trans_ps / 6"),
    ("guess_amplitude_au", "1e-4"),
    ("max_iterations", "5000"),
    ("target_log_infidelity", "-10"),
    ("decay_during_synthesis", "false"),
    ("dipole", "gate_adapted (or block)"),
    ("scenario", "none (the run command takes --scenario)"),
    ("seed", "none (the run command takes --seed)"),
];

/// How the noise amplitude is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseSetting {
    Amplitude(f64),
    /// Match the seed-averaged uncontrolled maximum deviation; `None` picks
    /// the default for the target byte.
    Calibrate { r_max: Option<f64> },
}

/// Default calibration target for a target byte.
pub fn default_calibration_r_max(target: TargetByte) -> f64 {
    match target {
        TargetByte::Ground => GROUND_CALIBRATION_R_MAX,
        TargetByte::General { .. } => GENERAL_CALIBRATION_R_MAX,
    }
}

/// Everything a command needs, in atomic units.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub governor: GovernorConfig,
    pub target: TargetByte,
    pub scrambled_gate: bool,
    pub noise: NoiseSetting,
    pub seeds: Vec<u64>,
    pub lambda: f64,
    pub envelope_sigma: f64,
    pub guess_amplitude: f64,
    pub max_iterations: usize,
    pub target_log_infidelity: f64,
    pub scenario: Option<ScenarioKind>,
    pub seed: Option<u64>,
}

impl RunConfig {
    /// Optimizer settings on the pulse grid of the protocol.
    pub fn krotov_settings(&self) -> KrotovSettings {
        let (n, dt) = self.governor.pulse_grid();
        let mut s = KrotovSettings::new(n as f64 * dt, dt);
        s.lambda = self.lambda;
        s.sigma = self.envelope_sigma;
        s.guess_amplitude = self.guess_amplitude;
        s.max_iterations = self.max_iterations;
        s.target_log_infidelity = self.target_log_infidelity;
        s
    }

    /// Scenario whose gate `optimize` synthesizes.
    pub fn design_scenario(&self) -> ScenarioKind {
        if self.scrambled_gate {
            ScenarioKind::ScrambledGate
        } else {
            ScenarioKind::FullEqualRates
        }
    }
}

struct Entry {
    line: usize,
    value: String,
}

fn config_error(line: usize, message: impl std::fmt::Display) -> Error {
    Error::Config(format!("line {line}: {message}"))
}

fn number(key: &str, e: &Entry) -> Result<f64> {
    let v: f64 = e
        .value
        .parse()
        .map_err(|_| config_error(e.line, format!("{key}: '{}' is not a number", e.value)))?;
    if !v.is_finite() {
        return Err(config_error(e.line, format!("{key}: value must be finite")));
    }
    Ok(v)
}

fn positive(key: &str, e: &Entry) -> Result<f64> {
    let v = number(key, e)?;
    if v <= 0.0 {
        return Err(config_error(e.line, format!("{key}: must be positive, got {v}")));
    }
    Ok(v)
}

fn integer(key: &str, e: &Entry) -> Result<u64> {
    e.value
        .parse()
        .map_err(|_| config_error(e.line, format!("{key}: '{}' is not a non-negative integer", e.value)))
}

fn boolean(key: &str, e: &Entry) -> Result<bool> {
    match e.value.as_str() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(config_error(e.line, format!("{key}: expected true or false, got '{other}'"))),
    }
}

/// Parse `key=value` lines. `#` starts a comment; blank lines are skipped.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let known: Vec<&str> = REQUIRED_KEYS.iter().copied().chain(OPTIONAL_KEYS.iter().map(|(k, _)| *k)).collect();
    let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
    let mut unknown = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| config_error(line, format!("expected key=value, got '{content}'")))?;
        let (key, value) = (key.trim(), value.trim());
        if !known.contains(&key) {
            unknown.push(format!("{key} (line {line})"));
            continue;
        }
        if let Some(prev) = entries.get(key) {
            return Err(config_error(line, format!("{key} already set on line {}", prev.line)));
        }
        entries.insert(key.to_string(), Entry { line, value: value.to_string() });
    }
    if !unknown.is_empty() {
        return Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))));
    }
    let missing: Vec<&str> = REQUIRED_KEYS.iter().copied().filter(|k| !entries.contains_key(*k)).collect();
    if !missing.is_empty() {
        return Err(Error::Config(format!("missing required keys: {}", missing.join(", "))));
    }

    let req = |k: &str| positive(k, &entries[k]);
    let mut governor = GovernorConfig::table1();
    governor.delta = req("delta_hartree")?;
    governor.omega1 = req("omega1_hartree")?;
    governor.omega2 = req("omega2_hartree")?;
    governor.tau_trans = ps_to_au(req("tau_trans_ps")?);
    governor.tau_free = ps_to_au(req("tau_free_ps")?);
    governor.gamma = rate_from_lifetime_ps(req("gamma_inv_ps")?);

    let get = |k: &str| entries.get(k);
    if let Some(e) = get("cycles") {
        governor.cycles = integer("cycles", e)? as usize;
    }
    if let Some(e) = get("dt_au") {
        governor.dt = positive("dt_au", e)?;
    }
    if let Some(e) = get("samples_per_segment") {
        governor.samples_per_segment = integer("samples_per_segment", e)? as usize;
    }
    if let Some(e) = get("decay_during_synthesis") {
        governor.decay_during_synthesis = boolean("decay_during_synthesis", e)?;
    }
    if let Some(e) = get("dipole") {
        governor.dipole = e.value.parse::<DipoleChoice>().map_err(|err| config_error(e.line, err))?;
    }

    let b_n = match get("b_n") {
        Some(e) => number("b_n", e)?,
        None => GENERAL_TARGET_BN,
    };
    let target = match get("target_byte") {
        None => TargetByte::Ground,
        Some(e) => match e.value.as_str() {
            "ground" => TargetByte::Ground,
            "general" => TargetByte::General { b_n },
            other => return Err(config_error(e.line, format!("target_byte: expected ground or general, got '{other}'"))),
        },
    };
    if !(-1.0..=1.0).contains(&b_n) {
        return Err(config_error(get("b_n").map_or(0, |e| e.line), format!("b_n must lie in [-1, 1], got {b_n}")));
    }
    let scrambled_gate = match get("gate") {
        None => false,
        Some(e) => match e.value.as_str() {
            "standard" => false,
            "scrambled" => true,
            other => return Err(config_error(e.line, format!("gate: expected standard or scrambled, got '{other}'"))),
        },
    };

    let noise = match (get("noise_amplitude_au"), get("calibration_r_max")) {
        (Some(e), _) => {
            let n = number("noise_amplitude_au", e)?;
            if n < 0.0 {
                return Err(config_error(e.line, "noise_amplitude_au must be non-negative"));
            }
            NoiseSetting::Amplitude(n)
        }
        (None, Some(e)) => NoiseSetting::Calibrate { r_max: Some(positive("calibration_r_max", e)?) },
        (None, None) => NoiseSetting::Calibrate { r_max: None },
    };
    if let NoiseSetting::Amplitude(n) = noise {
        governor.noise_amplitude = n;
    }
    let seed_count = match get("seed_count") {
        Some(e) => {
            let n = integer("seed_count", e)?;
            if n == 0 {
                return Err(config_error(e.line, "seed_count must be at least 1"));
            }
            n
        }
        None => 8,
    };

    let defaults = KrotovSettings::new(governor.tau_trans, governor.dt);
    let lambda = match get("lambda") {
        Some(e) => positive("lambda", e)?,
        None => defaults.lambda,
    };
    let envelope_sigma = match get("envelope_sigma_ps") {
        Some(e) => ps_to_au(positive("envelope_sigma_ps", e)?),
        None => defaults.sigma,
    };
    let guess_amplitude = match get("guess_amplitude_au") {
        Some(e) => number("guess_amplitude_au", e)?,
        None => defaults.guess_amplitude,
    };
    let max_iterations = match get("max_iterations") {
        Some(e) => integer("max_iterations", e)? as usize,
        None => defaults.max_iterations,
    };
    let target_log_infidelity = match get("target_log_infidelity") {
        Some(e) => number("target_log_infidelity", e)?,
        None => -10.0,
    };
    let scenario = match get("scenario") {
        Some(e) => Some(e.value.parse::<ScenarioKind>().map_err(|err| config_error(e.line, err))?),
        None => None,
    };
    let seed = match get("seed") {
        Some(e) => Some(integer("seed", e)?),
        None => None,
    };

    governor.validate().map_err(|e| Error::Config(e.to_string()))?;
    let config = RunConfig {
        governor,
        target,
        scrambled_gate,
        noise,
        seeds: (1..=seed_count).collect(),
        lambda,
        envelope_sigma,
        guess_amplitude,
        max_iterations,
        target_log_infidelity,
        scenario,
        seed,
    };
    config.krotov_settings().validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(config)
}

pub fn read_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Shortest exact decimal form is not needed; fixed 17 digits keeps the
/// files uniform.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// A control field with the metadata stored alongside it.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldFile {
    pub field: ControlField,
    pub tau_trans: f64,
    pub gate: String,
    pub log_infidelity: Option<f64>,
}

impl FieldFile {
    pub fn from_record(record: &OptimizationRecord, gate: &str) -> Self {
        Self {
            field: record.field.clone(),
            tau_trans: record.field.duration(),
            gate: gate.to_string(),
            log_infidelity: Some(record.log_infidelity()),
        }
    }

    /// Reject a field whose grid differs from the one a run expects.
    pub fn check_grid(&self, steps: usize, dt: f64) -> Result<()> {
        if self.field.dt.to_bits() != dt.to_bits() {
            return Err(Error::Config(format!(
                "field time step {} a.u. does not match the configured pulse step {} a.u.",
                self.field.dt, dt
            )));
        }
        if self.field.len() != steps {
            return Err(Error::Config(format!(
                "field has {} samples but the configured pulse needs {steps}",
                self.field.len()
            )));
        }
        Ok(())
    }
}

pub fn write_field(path: &Path, file: &FieldFile) -> Result<()> {
    let mut text = String::new();
    let _ = writeln!(text, "# dt_au={}", fmt_f64(file.field.dt));
    let _ = writeln!(text, "# tau_trans_au={}", fmt_f64(file.tau_trans));
    let _ = writeln!(text, "# gate={}", file.gate);
    if let Some(l) = file.log_infidelity {
        let _ = writeln!(text, "# log_infidelity={}", fmt_f64(l));
    }
    text.push_str("t_au,epsilon_au\n");
    for (k, v) in file.field.samples.iter().enumerate() {
        let _ = writeln!(text, "{},{}", fmt_f64(file.field.time(k)), fmt_f64(*v));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_field(path: &Path) -> Result<FieldFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |row: usize, message: String| Error::Format { path: path.to_path_buf(), row, message };
    let mut meta: BTreeMap<String, (usize, String)> = BTreeMap::new();
    let mut samples = Vec::new();
    let mut header_seen = false;
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.trim().split_once('=') {
                meta.insert(k.trim().to_string(), (row, v.trim().to_string()));
            }
            continue;
        }
        if !header_seen {
            if line.trim() != "t_au,epsilon_au" {
                return Err(bad(row, format!("expected header 't_au,epsilon_au', got '{line}'")));
            }
            header_seen = true;
            continue;
        }
        let mut cols = line.split(',');
        let (Some(_t), Some(eps), None) = (cols.next(), cols.next(), cols.next()) else {
            return Err(bad(row, format!("expected two columns, got '{line}'")));
        };
        let eps: f64 = eps.trim().parse().map_err(|_| bad(row, format!("bad number '{eps}'")))?;
        samples.push(eps);
    }
    if !header_seen {
        return Err(bad(0, "missing header row".into()));
    }
    if samples.is_empty() {
        return Err(bad(0, "field has no samples".into()));
    }
    let number = |key: &str| -> Result<Option<f64>> {
        match meta.get(key) {
            None => Ok(None),
            Some((row, v)) => v.parse().map(Some).map_err(|_| bad(*row, format!("bad {key} '{v}'"))),
        }
    };
    let dt = number("dt_au")?.ok_or_else(|| bad(0, "missing '# dt_au=' header".into()))?;
    let field = ControlField::new(samples, dt).map_err(|e| bad(0, e.to_string()))?;
    Ok(FieldFile {
        tau_trans: number("tau_trans_au")?.unwrap_or(field.duration()),
        gate: meta.get("gate").map(|(_, v)| v.clone()).unwrap_or_default(),
        log_infidelity: number("log_infidelity")?,
        field,
    })
}

/// Header of a series file; the sink column appears for five-level runs.
pub fn series_header(with_sink: bool) -> String {
    let mut h = String::from("t_au,t_ps,R,Rn,purity,pop_1g,pop_2g,pop_1e,pop_2e");
    if with_sink {
        h.push_str(",pop_sink");
    }
    h
}

pub fn series_to_csv(series: &DeviationSeries) -> String {
    let with_sink = series.populations.first().is_some_and(|p| p.len() > 4);
    let mut text = series_header(with_sink);
    text.push('\n');
    for i in 0..series.len() {
        let t = series.times[i];
        let mut cols = vec![fmt_f64(t), fmt_f64(au_to_ps(t)), fmt_f64(series.r[i]), fmt_f64(series.rn[i])];
        cols.push(fmt_f64(series.purity[i]));
        cols.extend(series.populations[i].iter().map(|p| fmt_f64(*p)));
        text.push_str(&cols.join(","));
        text.push('\n');
    }
    text
}

pub fn write_series(path: &Path, series: &DeviationSeries) -> Result<()> {
    fs::write(path, series_to_csv(series)).map_err(|e| Error::io(path, e))
}

/// Columns of a series file, checked for shape and time ordering.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn read_series(path: &Path) -> Result<SeriesTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |row: usize, message: String| Error::Format { path: path.to_path_buf(), row, message };
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().ok_or_else(|| bad(1, "empty file".into()))?.split(',').map(String::from).collect();
    if header.join(",") != series_header(false) && header.join(",") != series_header(true) {
        return Err(bad(1, format!("unexpected header '{}'", header.join(","))));
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = i + 2;
        let values = line
            .split(',')
            .map(|c| c.parse::<f64>().map_err(|_| bad(row, format!("bad number '{c}'"))))
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != header.len() {
            return Err(bad(row, format!("{} columns, header has {}", values.len(), header.len())));
        }
        if let Some(prev) = rows.last() {
            if values[0] <= prev[0] {
                return Err(bad(row, "times must be strictly increasing".into()));
            }
        }
        rows.push(values);
    }
    Ok(SeriesTable { header, rows })
}

/// One-sided amplitude spectrum `(omega, |FFT|)` of a field, with angular
/// frequency in Hartree.
pub fn field_spectrum(field: &ControlField) -> Vec<(f64, f64)> {
    let n = field.len();
    if n == 0 {
        return Vec::new();
    }
    let mut buf: Vec<Complex<f64>> = field.samples.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let d_omega = 2.0 * std::f64::consts::PI / (n as f64 * field.dt);
    buf.iter().take(n / 2 + 1).enumerate().map(|(k, c)| (k as f64 * d_omega, c.norm() * field.dt)).collect()
}

/// Sibling of `path` with its extension replaced by `suffix`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
