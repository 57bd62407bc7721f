//! Subcommand implementations. Each returns a serializable report with a
//! plain-text rendering.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use permeameter_core::cavity::{self, ModeSpec};
use permeameter_core::perturbation::{
    conventional_factor, geometry_factor_derived, geometry_factor_printed, geometry_factor_quadrature,
    InteractionChoice,
};
use permeameter_core::synth::{forward_load, synth_campaign, Campaign, SynthConfig, SynthError};
use permeameter_core::traceio::{parse_touchstone, to_csv, write_touchstone, DataFormat, FrequencyTrace};
use serde::Serialize;

use crate::analysis::{self, Extraction, Inversion};
use crate::config::{MaterialTable, Resolved};
use crate::error::CliError;

fn read_trace(path: &Path) -> Result<FrequencyTrace, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    parse_touchstone(&bytes)
        .map(|t| t.with_source(path.display().to_string()))
        .map_err(|e| CliError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

fn refuse_overwrite(out: &Path, inputs: &[&Path]) -> Result<(), CliError> {
    match inputs.iter().find(|i| same_file(out, i)) {
        Some(i) => Err(CliError::Config(format!(
            "output {} would overwrite input {}",
            out.display(),
            i.display()
        ))),
        None => Ok(()),
    }
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}")).unwrap_or_default()
}

// ---------------------------------------------------------------- modes

#[derive(Debug, Clone, Serialize)]
pub struct ModeRow {
    pub n: u32,
    pub f_hz: f64,
    pub lambda_g_m: f64,
    pub even: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModesReport {
    pub modes: Vec<ModeRow>,
}

pub fn modes(cfg: &Resolved, count: u32) -> ModesReport {
    let modes = (1..=count)
        .map(|n| {
            let m = ModeSpec::new(n).expect("n >= 1");
            ModeRow {
                n,
                f_hz: cavity::resonant_frequency(&cfg.cavity, m),
                lambda_g_m: cavity::guided_wavelength(&cfg.cavity, m),
                even: m.is_even(),
            }
        })
        .collect();
    ModesReport { modes }
}

impl ModesReport {
    pub fn render(&self) -> String {
        let mut s = String::from("   n       f (GHz)   lambda_g (mm)  even\n");
        for r in &self.modes {
            let _ = writeln!(
                s,
                "{:>4}  {:>12.6}  {:>14.4}  {}",
                r.n,
                r.f_hz / 1e9,
                r.lambda_g_m * 1e3,
                if r.even { "*" } else { "" }
            );
        }
        s
    }
}

// -------------------------------------------------------------- extract

#[derive(Debug, Clone, Serialize)]
pub struct ExtractReport {
    pub empty: String,
    pub loaded: String,
    #[serde(flatten)]
    pub extraction: Extraction,
}

pub fn extract(cfg: &Resolved, empty: &Path, loaded: &Path) -> Result<ExtractReport, CliError> {
    let e = read_trace(empty)?;
    let l = read_trace(loaded)?;
    let extraction = analysis::extract(cfg, &e, &l).map_err(|e| CliError::Config(e.to_string()))?;
    if extraction.pairings.is_empty() {
        return Err(CliError::NoResonance(format!(
            "{} resonance(s) in {}, {} in {}, none within {:.0}% of each other",
            extraction.empty_resonances,
            empty.display(),
            extraction.loaded_resonances,
            loaded.display(),
            analysis::PAIRING_GUARD * 100.0
        )));
    }
    Ok(ExtractReport {
        empty: empty.display().to_string(),
        loaded: loaded.display().to_string(),
        extraction,
    })
}

fn render_inversion(s: &mut String, label: &str, inv: &Inversion) {
    let _ = write!(s, "  {label:<13} g = {:.6e} [{}]", inv.g, inv.provenance);
    match (&inv.result, &inv.error) {
        (Some(m), _) => {
            let _ = writeln!(
                s,
                "  mu' = {:.6}  mu'' = {:.6}  tan_dm = {:.6}",
                m.mu_re, m.mu_im, m.tan_dm
            );
        }
        (None, Some(e)) => {
            let _ = writeln!(s, "  failed: {e}");
        }
        (None, None) => s.push('\n'),
    }
}

impl ExtractReport {
    pub fn exit_code(&self) -> i32 {
        if self.extraction.any_unphysical() {
            4
        } else {
            0
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for w in &self.extraction.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        for p in &self.extraction.pairings {
            let _ = writeln!(s, "mode n = {} ({})", p.mode_n, p.q_method);
            let _ = writeln!(
                s,
                "  empty         f0  = {:.9e} Hz  Q0 = {:.3}  QL = {:.3}  IL = {:.4}",
                p.f0_hz, p.q0, p.q_loaded_empty, p.il_empty
            );
            let _ = writeln!(
                s,
                "  loaded        f_s = {:.9e} Hz  Q_s = {:.3}  QL = {:.3}  IL = {:.4}",
                p.f_s_hz, p.q_s, p.q_loaded_sample, p.il_sample
            );
            let _ = writeln!(s, "  shift         re = {:.6e}  im = {:.6e}", p.shift_re, p.shift_im);
            render_inversion(&mut s, "modified", &p.modified);
            render_inversion(&mut s, "conventional", &p.conventional);
            for w in &p.warnings {
                let _ = writeln!(s, "  warning: {w}");
            }
        }
        s
    }
}

// ---------------------------------------------------------------- synth

fn synth_error(e: SynthError) -> CliError {
    match e {
        SynthError::Io { path, source } => CliError::Io(format!("cannot write {}: {source}", path.display())),
        other => CliError::Config(other.to_string()),
    }
}

/// Forward-model and render the whole roster in memory.
pub fn build_campaign(cfg: &Resolved, table: &MaterialTable) -> Result<Campaign, CliError> {
    let empty = cfg.empty_resonance()?;
    let materials = table.permeabilities()?;
    let model = cfg.forward_model();
    let (f_start, f_stop) = match (cfg.synth.f_start_hz, cfg.synth.f_stop_hz) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            let mut all = vec![empty];
            for (_, mu) in &materials {
                all.push(forward_load(&cfg.cavity, &cfg.sample, cfg.mode, *mu, &empty, &model).map_err(synth_error)?);
            }
            SynthConfig::span_covering(&all, cfg.synth.span_bandwidths).expect("at least the empty resonance")
        }
    };
    let synth = SynthConfig {
        f_start,
        f_stop,
        n_points: cfg.synth.n_points,
        noise_floor_db: cfg.synth.noise_floor_db,
        seed: cfg.synth.seed,
        il_linear: cfg.synth.il_linear,
    };
    synth_campaign(
        &table.campaign,
        &cfg.cavity,
        &cfg.sample,
        cfg.mode,
        &materials,
        &empty,
        &synth,
        &model,
    )
    .map_err(synth_error)
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthFile {
    pub label: String,
    pub path: String,
    pub f0_hz: f64,
    pub q_loaded: f64,
    pub q0: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthReport {
    pub campaign: String,
    pub format: &'static str,
    pub files: Vec<SynthFile>,
}

pub fn synth(
    cfg: &Resolved,
    materials: &Path,
    out_dir: &Path,
    format: DataFormat,
    with_csv: bool,
    inputs: &[&Path],
) -> Result<SynthReport, CliError> {
    let table = MaterialTable::load(materials)?;
    let campaign = build_campaign(cfg, &table)?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", out_dir.display())))?;
    for entry in &campaign.entries {
        refuse_overwrite(&out_dir.join(&entry.file_name), inputs)?;
    }
    let paths = campaign.write(out_dir, format).map_err(synth_error)?;
    if with_csv {
        for (entry, path) in campaign.entries.iter().zip(&paths) {
            let csv = path.with_extension("csv");
            refuse_overwrite(&csv, inputs)?;
            fs::write(&csv, to_csv(&entry.trace))
                .map_err(|e| CliError::Io(format!("cannot write {}: {e}", csv.display())))?;
        }
    }
    let files = campaign
        .entries
        .iter()
        .zip(paths)
        .map(|(e, p)| SynthFile {
            label: e.label.clone(),
            path: p.display().to_string(),
            f0_hz: e.resonance.f0,
            q_loaded: e.resonance.q_loaded,
            q0: e.resonance.q_unloaded,
        })
        .collect();
    Ok(SynthReport {
        campaign: campaign.name,
        format: format.as_str(),
        files,
    })
}

impl SynthReport {
    pub fn render(&self) -> String {
        let mut s = format!("campaign {} ({})\n", self.campaign, self.format);
        for f in &self.files {
            let _ = writeln!(
                s,
                "  {:<10} f0 = {:.9e} Hz  Q0 = {:>10.3}  {}",
                f.label, f.f0_hz, f.q0, f.path
            );
        }
        s
    }
}

// -------------------------------------------------------------- compare

pub const COMPARE_HEADER: &str =
    "material,mu_re_actual,mu_re_conventional,mu_re_modified,tan_dm_actual,tan_dm_conventional,tan_dm_modified,note";
pub const EXCLUDED_NOTE: &str = "loss tangent excluded from the summary";

#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub material: String,
    pub mu_re_actual: f64,
    pub tan_dm_actual: f64,
    pub mu_re_conventional: Option<f64>,
    pub tan_dm_conventional: Option<f64>,
    pub mu_re_modified: Option<f64>,
    pub tan_dm_modified: Option<f64>,
    pub exclude_tan_dm: bool,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub unphysical: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub campaign: String,
    pub rows: Vec<CompareRow>,
    pub mean_abs_mu_re_error_modified: Option<f64>,
    pub mean_abs_mu_re_error_conventional: Option<f64>,
}

fn mean_abs_error(rows: &[CompareRow], pick: impl Fn(&CompareRow) -> Option<f64>) -> Option<f64> {
    let errs: Vec<f64> = rows
        .iter()
        .filter_map(|r| pick(r).map(|v| (v - r.mu_re_actual).abs()))
        .collect();
    if errs.is_empty() || errs.len() != rows.len() {
        None
    } else {
        Some(errs.iter().sum::<f64>() / errs.len() as f64)
    }
}

/// Synthesize the roster, push every trace through Touchstone bytes and
/// extract it again.
pub fn compare_table(cfg: &Resolved, table: &MaterialTable) -> Result<CompareReport, CliError> {
    let campaign = build_campaign(cfg, table)?;
    let format = cfg.synth.format;
    let reparse = |t: &FrequencyTrace| {
        parse_touchstone(&write_touchstone(t, format)).map_err(|e| CliError::Parse {
            path: "<in-memory>".into(),
            message: e.to_string(),
        })
    };
    let (empty_entry, loaded_entries) = campaign.entries.split_first().expect("empty entry first");
    let empty = reparse(&empty_entry.trace)?;
    let mut rows = Vec::new();
    for (entry, material) in loaded_entries.iter().zip(&table.materials) {
        let loaded = reparse(&entry.trace)?;
        let x = analysis::extract(cfg, &empty, &loaded).map_err(|e| CliError::Config(e.to_string()))?;
        let p = x
            .pairings
            .iter()
            .find(|p| p.mode_n == cfg.mode.n)
            .or(x.pairings.first())
            .ok_or_else(|| CliError::NoResonance(format!("material {}", material.name)))?;
        let mut warnings = x.warnings.clone();
        warnings.extend(p.warnings.iter().cloned());
        rows.push(CompareRow {
            material: material.name.clone(),
            mu_re_actual: material.mu_re,
            tan_dm_actual: material.tan_dm,
            mu_re_conventional: p.conventional.result.as_ref().map(|m| m.mu_re),
            tan_dm_conventional: p.conventional.result.as_ref().map(|m| m.tan_dm),
            mu_re_modified: p.modified.result.as_ref().map(|m| m.mu_re),
            tan_dm_modified: p.modified.result.as_ref().map(|m| m.tan_dm),
            exclude_tan_dm: material.exclude_tan_dm,
            warnings,
            unphysical: p.modified.unphysical,
        });
    }
    Ok(CompareReport {
        campaign: campaign.name,
        mean_abs_mu_re_error_modified: mean_abs_error(&rows, |r| r.mu_re_modified),
        mean_abs_mu_re_error_conventional: mean_abs_error(&rows, |r| r.mu_re_conventional),
        rows,
    })
}

pub fn compare(cfg: &Resolved, materials: &Path, out: &Path, inputs: &[&Path]) -> Result<CompareReport, CliError> {
    let table = MaterialTable::load(materials)?;
    refuse_overwrite(out, inputs)?;
    let report = compare_table(cfg, &table)?;
    fs::write(out, report.to_csv()).map_err(|e| CliError::Io(format!("cannot write {}: {e}", out.display())))?;
    Ok(report)
}

impl CompareReport {
    pub fn exit_code(&self) -> i32 {
        if self.rows.iter().any(|r| r.unphysical) {
            4
        } else {
            0
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{COMPARE_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:.6},{},{},{:.6},{},{},{}",
                r.material,
                r.mu_re_actual,
                fmt_opt(r.mu_re_conventional, 6),
                fmt_opt(r.mu_re_modified, 6),
                r.tan_dm_actual,
                fmt_opt(r.tan_dm_conventional, 6),
                fmt_opt(r.tan_dm_modified, 6),
                if r.exclude_tan_dm { "*" } else { "" }
            );
        }
        s
    }

    pub fn render(&self) -> String {
        let mut s = String::from("material   mu'_act   mu'_conv    mu'_mod   tand_act  tand_conv   tand_mod\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<8} {:>9.4} {:>10} {:>10} {:>10.4} {:>10} {:>10}{}",
                r.material,
                r.mu_re_actual,
                fmt_opt(r.mu_re_conventional, 4),
                fmt_opt(r.mu_re_modified, 4),
                r.tan_dm_actual,
                fmt_opt(r.tan_dm_conventional, 4),
                fmt_opt(r.tan_dm_modified, 4),
                if r.exclude_tan_dm { " *" } else { "" }
            );
        }
        if let (Some(m), Some(c)) = (
            self.mean_abs_mu_re_error_modified,
            self.mean_abs_mu_re_error_conventional,
        ) {
            let _ = writeln!(s, "mean |mu' error|: modified {m:.6}, conventional {c:.6}");
        }
        if self.rows.iter().any(|r| r.exclude_tan_dm) {
            let _ = writeln!(s, "* {EXCLUDED_NOTE}");
        }
        s
    }
}

// ------------------------------------------------------------ quadcheck

#[derive(Debug, Clone, Serialize)]
pub struct QuadcheckRow {
    pub interaction: &'static str,
    pub derived: Option<f64>,
    pub quadrature: f64,
    pub quadrature_vs_derived: Option<f64>,
    pub printed_vs_derived: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct QuadcheckReport {
    pub mode_n: u32,
    pub cells: usize,
    pub printed: Option<f64>,
    pub conventional: f64,
    pub rows: Vec<QuadcheckRow>,
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b) / b
}

pub fn quadcheck(cfg: &Resolved) -> Result<QuadcheckReport, CliError> {
    let (c, s, m) = (&cfg.cavity, &cfg.sample, cfg.mode);
    let cells = cfg.extraction.quadrature_cells;
    let err = |e: permeameter_core::perturbation::PerturbationError| CliError::Config(e.to_string());
    let printed = m
        .is_even()
        .then(|| geometry_factor_printed(c, s, m))
        .transpose()
        .map_err(err)?;
    let mut rows = Vec::new();
    for choice in InteractionChoice::ALL {
        let derived = m
            .is_even()
            .then(|| geometry_factor_derived(c, s, m, choice))
            .transpose()
            .map_err(err)?
            .map(|g| g.value);
        let quadrature = geometry_factor_quadrature(c, s, m, choice, cells).map_err(err)?.value;
        rows.push(QuadcheckRow {
            interaction: choice.as_str(),
            derived,
            quadrature,
            quadrature_vs_derived: derived.map(|d| rel(quadrature, d)),
            printed_vs_derived: derived.zip(printed).map(|(d, p)| rel(p.value, d)),
        });
    }
    Ok(QuadcheckReport {
        mode_n: m.n,
        cells,
        printed: printed.map(|p| p.value),
        conventional: conventional_factor(c, s, m).map_err(err)?.value,
        rows,
    })
}

impl QuadcheckReport {
    pub fn render(&self) -> String {
        let mut s = format!("mode n = {}, {} cells per axis\n", self.mode_n, self.cells);
        match self.printed {
            Some(p) => {
                let _ = writeln!(s, "printed closed form   g = {p:.6e}");
            }
            None => s.push_str("printed closed form   n/a (odd mode)\n"),
        }
        let _ = writeln!(s, "conventional          g = {:.6e}", self.conventional);
        s.push_str("interaction            derived        quadrature     quad-derived   printed-derived\n");
        let dash = || "-".to_string();
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<18} {:>14} {:>14.6e} {:>14} {:>17}",
                r.interaction,
                r.derived.map(|d| format!("{d:.6e}")).unwrap_or_else(dash),
                r.quadrature,
                r.quadrature_vs_derived
                    .map(|d| format!("{d:+.2e}"))
                    .unwrap_or_else(dash),
                r.printed_vs_derived
                    .map(|d| format!("{:+.2}%", d * 100.0))
                    .unwrap_or_else(dash),
            );
        }
        s
    }
}

/// Every path a command reads, used to refuse overwriting inputs.
pub fn input_paths<'a>(config: Option<&'a PathBuf>, others: &[&'a Path]) -> Vec<&'a Path> {
    config
        .map(PathBuf::as_path)
        .into_iter()
        .chain(others.iter().copied())
        .collect()
}
