//! The `optimize`, `run` and `reproduce` commands.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::dynamics::ControlField;
use crate::error::{Error, Result};
use crate::governor::{
    build_scenario, calibrate_noise, summarize, synthesize_field, GateVariant, Protocol, Scenario, ScenarioKind,
    ScenarioSummary, TargetByte,
};
use crate::io::{
    default_calibration_r_max, field_spectrum, fmt_f64, read_config, read_field, sibling, write_field, write_series, write_text, FieldFile,
    NoiseSetting, RunConfig,
};
use crate::krotov::log_infidelity;
use crate::report::{checks, format_table, run_rows, table_csv, Table};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

/// Exit status for an error that ends a command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidInput(_) | Error::Config(_) | Error::Format { .. } | Error::Io { .. } => EXIT_USAGE,
        Error::DimensionMismatch { .. } | Error::Numerical(_) | Error::NonMonotone { .. } => EXIT_NUMERICAL,
    }
}

/// Size the worker pool from `QGOV_THREADS` when it is set.
pub fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("QGOV_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("QGOV_THREADS must be a positive integer, got '{value}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size the worker pool: {e}")))
}

/// Noise amplitude for `target`, calibrating against uncontrolled runs when
/// the config does not fix it.
pub fn resolve_noise(config: &RunConfig, target: TargetByte) -> Result<f64> {
    match config.noise {
        NoiseSetting::Amplitude(n) => Ok(n),
        NoiseSetting::Calibrate { r_max } => {
            let r_max = r_max.unwrap_or_else(|| default_calibration_r_max(target));
            eprintln!("calibrating noise to uncontrolled R_max = {r_max:e} over {} seeds", config.seeds.len());
            let c = calibrate_noise(target, &config.governor, r_max, &config.seeds)?;
            eprintln!("noise amplitude {:e} a.u. (seed-averaged R_max {:e})", c.amplitude, c.mean_r_max);
            Ok(c.amplitude)
        }
    }
}

fn design_kind(variant: GateVariant) -> ScenarioKind {
    match variant {
        GateVariant::Scrambled => ScenarioKind::ScrambledGate,
        GateVariant::Swap | GateVariant::Distiller => ScenarioKind::FullEqualRates,
    }
}

fn gate_label(config: &RunConfig, kind: ScenarioKind, target: TargetByte) -> Result<String> {
    let setup = build_scenario(Scenario::new(kind, target), &config.governor)?;
    Ok(setup.gate.map(|g| g.label.to_string()).unwrap_or_default())
}

/// Optimize the configured gate and write the field, its history, its
/// spectrum and a plot script next to `out`.
pub fn cmd_optimize(config_path: &Path, out: &Path) -> Result<i32> {
    let config = read_config(config_path)?;
    let setup = build_scenario(Scenario::new(config.design_scenario(), config.target), &config.governor)?;
    let label = setup.gate.as_ref().map(|g| g.label.to_string()).unwrap_or_default();
    let settings = config.krotov_settings();
    let record = synthesize_field(&setup, &config.governor, &settings, |i, f| {
        if i % 10 == 0 {
            eprintln!("iteration {i}: F = {f:.15}, log10 infidelity = {:.3}", log_infidelity(f));
        }
    })?;
    write_field(out, &FieldFile::from_record(&record, &label))?;

    let mut history = String::from("iteration,F,log_infidelity\n");
    for (i, f) in record.f_history.iter().enumerate() {
        let _ = writeln!(history, "{i},{},{}", fmt_f64(*f), fmt_f64(log_infidelity(*f)));
    }
    let history_path = sibling(out, "history.csv");
    write_text(&history_path, &history)?;

    let mut spectrum = String::from("omega_hartree,amplitude\n");
    for (w, a) in field_spectrum(&record.field) {
        let _ = writeln!(spectrum, "{},{}", fmt_f64(w), fmt_f64(a));
    }
    let spectrum_path = sibling(out, "spectrum.csv");
    write_text(&spectrum_path, &spectrum)?;
    write_text(&sibling(out, "plot.py"), &optimize_plot_script(out, &history_path, &spectrum_path))?;

    println!(
        "{} after {} iterations: F = {:.15}, log10 infidelity = {:.3}",
        if record.converged { "converged" } else { "not converged" },
        record.iterations_used,
        record.fidelity(),
        record.log_infidelity()
    );
    Ok(if record.converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn optimize_plot_script(field: &Path, history: &Path, spectrum: &Path) -> String {
    format!(
        r##"# Renders the optimization history, the field and its spectrum.
import csv
import os

import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))


def columns(name):
    with open(os.path.join(here, name)) as f:
        rows = [r for r in f if not r.startswith("#")]
    data = list(csv.reader(rows))
    return [list(map(float, c)) for c in zip(*data[1:])]


it, _, log_inf = columns("{history}")
t, eps = columns("{field}")
w, amp = columns("{spectrum}")

fig, ax = plt.subplots(3, 1, figsize=(7, 9))
ax[0].plot(it, log_inf)
ax[0].set_xlabel("iteration")
ax[0].set_ylabel("log10(1 - F/4)")
ax[1].plot([x / 41341.374 for x in t], eps)
ax[1].set_xlabel("t (ps)")
ax[1].set_ylabel("field (a.u.)")
ax[2].plot(w, amp)
ax[2].set_xlabel("angular frequency (Hartree)")
ax[2].set_ylabel("|FFT|")
fig.tight_layout()
fig.savefig(os.path.join(here, "{png}"))
"##,
        history = file_name(history),
        field = file_name(field),
        spectrum = file_name(spectrum),
        png = file_name(&sibling(field, "png")),
    )
}

fn series_plot_script(series: &Path) -> String {
    format!(
        r#"# Renders R and R_n against time.
import csv
import os

import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
with open(os.path.join(here, "{series}")) as f:
    data = list(csv.DictReader(f))
t = [float(r["t_ps"]) for r in data]
fig, ax = plt.subplots()
ax.plot(t, [float(r["R"]) for r in data], label="R")
ax.plot(t, [float(r["Rn"]) for r in data], label="R_n")
ax.set_xlabel("t (ps)")
ax.set_ylabel("deviation")
ax.legend()
fig.savefig(os.path.join(here, "{png}"))
"#,
        series = file_name(series),
        png = file_name(&sibling(series, "png")),
    )
}

fn summary_text(kind: ScenarioKind, target: TargetByte, seed: u64, noise: f64, s: &ScenarioSummary) -> String {
    format!(
        "scenario={kind}\ntarget={}\nseed={seed}\nnoise_amplitude_au={}\nR_max={}\nRn_max={}\nmean_R={}\nmean_Rn={}\n",
        target.name(),
        fmt_f64(noise),
        fmt_f64(s.r_max),
        fmt_f64(s.rn_max),
        fmt_f64(s.mean_r),
        fmt_f64(s.mean_rn),
    )
}

/// Run one scenario for one seed and write its series and summary.
pub fn cmd_run(
    config_path: &Path,
    field_path: Option<&Path>,
    scenario: Option<ScenarioKind>,
    seed: Option<u64>,
    out: &Path,
) -> Result<i32> {
    let mut config = read_config(config_path)?;
    let kind = scenario
        .or(config.scenario)
        .ok_or_else(|| Error::Config("no scenario given (use --scenario or the scenario key)".into()))?;
    let seed = seed.or(config.seed).ok_or_else(|| Error::Config("no seed given (use --seed or the seed key)".into()))?;
    let target = config.target;
    let setup = build_scenario(Scenario::new(kind, target), &config.governor)?;
    let field = match (&setup.gate, field_path) {
        (None, _) => None,
        (Some(_), None) => {
            return Err(Error::Config(format!("scenario {kind} needs a field file (use --field)")));
        }
        (Some(gate), Some(path)) => {
            let file = read_field(path)?;
            let (steps, dt) = config.governor.pulse_grid();
            file.check_grid(steps, dt).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let label = gate.label.to_string();
            if !file.gate.is_empty() && file.gate != label {
                return Err(Error::Config(format!(
                    "{}: field was optimized for gate '{}' but scenario {kind} needs '{label}'",
                    path.display(),
                    file.gate
                )));
            }
            Some(file.field)
        }
    };
    let noise = resolve_noise(&config, target)?;
    config.governor.noise_amplitude = noise;
    let protocol = Protocol::from_setup(setup, &config.governor, field.as_ref())?;
    let series = protocol.run(seed)?;
    let summary = summarize(&series)?;
    write_series(out, &series)?;
    let text = summary_text(kind, target, seed, noise, &summary);
    write_text(&sibling(out, "summary.txt"), &text)?;
    write_text(&sibling(out, "plot.py"), &series_plot_script(out))?;
    print!("{text}");
    Ok(EXIT_OK)
}

/// Load a field from `path` when present, else optimize and save it.
/// Returns the field and whether it met the target infidelity.
fn field_for(config: &RunConfig, variant: GateVariant, target: TargetByte, path: &Path) -> Result<(ControlField, bool)> {
    let kind = design_kind(variant);
    let label = gate_label(config, kind, target)?;
    let (steps, dt) = config.governor.pulse_grid();
    if path.exists() {
        let file = read_field(path)?;
        file.check_grid(steps, dt).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if file.gate != label {
            return Err(Error::Config(format!(
                "{}: holds a field for '{}', expected '{label}'",
                path.display(),
                file.gate
            )));
        }
        let converged = file.log_infidelity.is_some_and(|l| l <= config.target_log_infidelity);
        eprintln!("using {}", path.display());
        return Ok((file.field, converged));
    }
    eprintln!("optimizing the {} gate", variant.name());
    let setup = build_scenario(Scenario::new(kind, target), &config.governor)?;
    let record = synthesize_field(&setup, &config.governor, &config.krotov_settings(), |_, _| {})?;
    eprintln!(
        "{} iterations, log10 infidelity {:.3}{}",
        record.iterations_used,
        record.log_infidelity(),
        if record.converged { "" } else { " (not converged)" }
    );
    write_field(path, &FieldFile::from_record(&record, &label))?;
    Ok((record.field, record.converged))
}

/// Run every row of a scenario table over the config's seeds.
pub fn cmd_reproduce(table: u32, config_path: &Path, outdir: &Path) -> Result<i32> {
    let table = Table::from_number(table)?;
    let mut config = read_config(config_path)?;
    let b_n = match config.target {
        TargetByte::General { b_n } => b_n,
        TargetByte::Ground => crate::governor::GENERAL_TARGET_BN,
    };
    let target = TargetByte::General { b_n };
    fs::create_dir_all(outdir).map_err(|e| Error::io(outdir, e))?;

    let mut fields = HashMap::new();
    let mut all_converged = true;
    for &variant in table.variants() {
        let path = outdir.join(format!("field_{}.csv", variant.name()));
        let (field, converged) = field_for(&config, variant, target, &path)?;
        all_converged &= converged;
        fields.insert(variant, field);
    }
    config.governor.noise_amplitude = resolve_noise(&config, target)?;

    let rows = run_rows(table.rows(), target, &config.governor, &fields, &config.seeds);
    let found = checks(table, &rows);
    let header = format!(
        "general target b_n = {b_n}, medians over seeds {}..={}, noise amplitude {} a.u.",
        config.seeds.first().copied().unwrap_or(0),
        config.seeds.last().copied().unwrap_or(0),
        fmt_f64(config.governor.noise_amplitude)
    );
    let text = format_table(table, &rows, &header, &found);
    let n = table.number();
    write_text(&outdir.join(format!("table{n}.txt")), &text)?;
    write_text(&outdir.join(format!("table{n}.csv")), &table_csv(&rows, &config.seeds))?;
    for (i, row) in rows.iter().enumerate() {
        if let Ok(runs) = &row.result {
            let path = outdir.join(format!("table{n}_case{}_{}.csv", i + 1, row.kind.name()));
            write_series(&path, &runs.first_series)?;
        }
    }
    print!("{text}");
    Ok(if rows.iter().any(|r| r.result.is_err()) {
        EXIT_NUMERICAL
    } else if !all_converged {
        EXIT_NOT_CONVERGED
    } else {
        EXIT_OK
    })
}
