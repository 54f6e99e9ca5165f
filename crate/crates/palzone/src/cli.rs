//! Command-line orchestration: load + override + validate a config,
//! reproduce one experiment, and write CSV tables with SVG plots
//! alongside. Exit codes: 0 success, 2 configuration error, 3 numerical
//! failure, with a machine-readable JSON error object on stderr.

use crate::cache;
use crate::field::{
    assemble_edl_vector, assemble_pal_tensor, render_field_with_table, ultrasound_field,
    ArrayKind, RenderGrid, TransferTensor,
};
use crate::model::{validate_config, EvaluateOn, ExperimentConfig, FrequencyPlan, Model};
use crate::optimizer::{acc_edl, acc_pal_multi, acoustic_contrast, ContrastResult};
use crate::plot::{Heatmap, LinePlot, RectAnnotation, Series};
use crate::robustness::{perturb_tensor, run_robustness_sweep, PerturbationSpec, SweepCell};
use clap::{Args, Parser, Subcommand};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    Fields,
    Convergence,
    ContrastTable,
    Robustness,
}

/// Everything one invocation needs: experiment kind, config path, output
/// directory, seed, and key=value overrides.
#[derive(Clone, Debug)]
pub struct ExperimentManifest {
    pub kind: ExperimentKind,
    pub config_path: PathBuf,
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub force: bool,
    pub cache_dir: Option<PathBuf>,
    pub overrides: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Numerical(_) => "numerical",
            CliError::Io(_) => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 2,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": { "kind": self.kind(), "message": self.to_string() } })
            .to_string()
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<crate::field::FieldError> for CliError {
    fn from(e: crate::field::FieldError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<crate::optimizer::SolverError> for CliError {
    fn from(e: crate::optimizer::SolverError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

// ---------------------------------------------------------------------------
// Argument parsing
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(name = "palzone", version, about = "Sound zone control with PAL arrays")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Optimized audio SPL maps for the PAL and EDL arrays
    Fields(RunArgs),
    /// Acoustic contrast versus iteration count
    Convergence(RunArgs),
    /// PAL and EDL contrast per audio frequency
    ContrastTable(RunArgs),
    /// Monte-Carlo robustness sweeps over SNR and phase-range grids
    Robustness(RunArgs),
}

#[derive(Args)]
pub struct RunArgs {
    /// TOML experiment configuration file
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (must be empty unless --force is given)
    #[arg(long)]
    pub out: PathBuf,
    /// Override both the optimizer and perturbation seeds
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write into a non-empty output directory
    #[arg(long)]
    pub force: bool,
    /// Directory for cached transfer tensors and field tables
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Config override as key=value with a TOML literal value,
    /// e.g. --set quadrature.dx=0.01 (arrays and strings are TOML too)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl Cli {
    pub fn into_manifest(self) -> ExperimentManifest {
        let (kind, args) = match self.command {
            Command::Fields(a) => (ExperimentKind::Fields, a),
            Command::Convergence(a) => (ExperimentKind::Convergence, a),
            Command::ContrastTable(a) => (ExperimentKind::ContrastTable, a),
            Command::Robustness(a) => (ExperimentKind::Robustness, a),
        };
        ExperimentManifest {
            kind,
            config_path: args.config,
            out_dir: args.out,
            seed: args.seed,
            force: args.force,
            cache_dir: args.cache_dir,
            overrides: args.set,
        }
    }
}

// ---------------------------------------------------------------------------
// Config loading and overrides
// ---------------------------------------------------------------------------

/// Apply a `path.to.key=value` override onto a parsed TOML document.
/// The value is parsed as a TOML literal; intermediate tables are
/// created as needed.
fn apply_override(doc: &mut toml::Value, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override '{spec}' is not key=value")))?;
    let parsed: toml::Value = toml::from_str(&format!("v = {raw}"))
        .map(|t: toml::Table| t["v"].clone())
        .or_else(|_| toml::from_str::<toml::Table>(&format!("v = \"{raw}\"")).map(|t| t["v"].clone()))
        .map_err(|e| CliError::Config(format!("override '{spec}': {e}")))?;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("override '{spec}' has an empty path segment")));
    }
    let mut cursor = doc;
    for key in &keys[..keys.len() - 1] {
        let table = cursor
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override '{spec}': '{key}' is not a table")))?;
        cursor = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = cursor
        .as_table_mut()
        .ok_or_else(|| CliError::Config(format!("override '{spec}': parent is not a table")))?;
    table.insert(keys[keys.len() - 1].to_string(), parsed);
    Ok(())
}

/// Read + override + deserialize + validate.
pub fn load_model(manifest: &ExperimentManifest) -> Result<Model, CliError> {
    let text = fs::read_to_string(&manifest.config_path).map_err(|e| {
        CliError::Io(format!("cannot read {}: {e}", manifest.config_path.display()))
    })?;
    let mut doc: toml::Value =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("config parse error: {e}")))?;
    for spec in &manifest.overrides {
        apply_override(&mut doc, spec)?;
    }
    if let Some(seed) = manifest.seed {
        apply_override(&mut doc, &format!("optimizer.seed={seed}"))?;
        apply_override(&mut doc, &format!("perturbation.seed={seed}"))?;
    }
    let config: ExperimentConfig = doc
        .try_into()
        .map_err(|e| CliError::Config(format!("config schema error: {e}")))?;
    validate_config(&config).map_err(|e| CliError::Config(e.to_string()))
}

/// Create the output directory; refuse to reuse a non-empty one without
/// --force so existing results are never silently overwritten.
fn prepare_out_dir(dir: &Path, force: bool) -> Result<(), CliError> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(CliError::Config(format!("{} exists and is not a directory", dir.display())));
        }
        let non_empty = fs::read_dir(dir)?.next().is_some();
        if non_empty && !force {
            return Err(CliError::Config(format!(
                "output directory {} is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
    } else {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

pub fn run(manifest: &ExperimentManifest) -> Result<(), CliError> {
    let model = load_model(manifest)?;
    prepare_out_dir(&manifest.out_dir, manifest.force)?;
    match manifest.kind {
        ExperimentKind::Convergence => cmd_convergence(&model, manifest),
        ExperimentKind::ContrastTable => cmd_contrast_table(&model, manifest),
        ExperimentKind::Fields => cmd_fields(&model, manifest),
        ExperimentKind::Robustness => cmd_robustness(&model, manifest),
    }
}

// ---------------------------------------------------------------------------
// Shared machinery
// ---------------------------------------------------------------------------

fn write_text(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn hz_tag(f: f64) -> String {
    if f.fract() == 0.0 {
        format!("{:.0}", f)
    } else {
        format!("{f}").replace('.', "p")
    }
}

/// Clean PAL + EDL tensors for one frequency, going through the cache
/// directory when one is configured.
pub fn tensors_for(
    model: &Model,
    plan: &FrequencyPlan,
    cache_dir: Option<&Path>,
) -> Result<(TransferTensor, TransferTensor), CliError> {
    let (points, bright_count) = model.control_points();
    let pal_key = cache::pal_tensor_key(
        &model.geometry,
        &model.medium,
        plan,
        &model.quadrature,
        model.v0,
        &points,
        bright_count,
    );
    let edl_key = cache::edl_tensor_key(
        &model.geometry,
        &model.medium,
        plan,
        model.v0,
        &points,
        bright_count,
    );
    let pal = match cache_dir.and_then(|d| cache::load_tensor(d, &pal_key, true).ok().flatten()) {
        Some(t) => t,
        None => {
            let t = assemble_pal_tensor(
                &model.geometry,
                &model.medium,
                plan,
                &model.quadrature,
                model.v0,
                points.clone(),
                bright_count,
            )?;
            if let Some(d) = cache_dir {
                cache::store_tensor(d, &pal_key, &t)?;
            }
            t
        }
    };
    let edl = match cache_dir.and_then(|d| cache::load_tensor(d, &edl_key, false).ok().flatten()) {
        Some(t) => t,
        None => {
            let t = assemble_edl_vector(
                &model.geometry,
                &model.medium,
                plan,
                model.v0,
                points,
                bright_count,
            )?;
            if let Some(d) = cache_dir {
                cache::store_tensor(d, &edl_key, &t)?;
            }
            t
        }
    };
    Ok((pal, edl))
}

fn perturbation_spec(model: &Model) -> PerturbationSpec {
    PerturbationSpec {
        snr_db: model.perturbation.snr_db,
        phase_range_deg: model.perturbation.phase_range_deg,
        seed: model.perturbation.seed,
        n_trials: model.perturbation.n_trials,
    }
}

/// Optimize on the perturbed tensor (trial 0 of the configured noise
/// stream), evaluating per the configured mode. Returns the result and
/// the perturbed tensor used.
fn optimize_pair(
    model: &Model,
    pal_clean: &TransferTensor,
    edl_clean: &TransferTensor,
) -> Result<(ContrastResult, ContrastResult), CliError> {
    let spec = perturbation_spec(model);
    let pal_pert =
        perturb_tensor(pal_clean, &spec, 0).map_err(|e| CliError::Numerical(e.to_string()))?;
    let edl_pert =
        perturb_tensor(edl_clean, &spec, 0).map_err(|e| CliError::Numerical(e.to_string()))?;
    let opt = &model.optimizer;
    let mut pal_res =
        acc_pal_multi(&pal_pert, opt.n_iterations, opt.seed, opt.ridge_scale, opt.n_starts)?;
    let mut edl_res = acc_edl(&edl_pert, opt.ridge_scale)?;
    if model.perturbation.evaluate_on == EvaluateOn::Clean {
        pal_res.contrast_db = acoustic_contrast(pal_clean, &pal_res.drives)?;
        edl_res.contrast_db = acoustic_contrast(edl_clean, &edl_res.drives)?;
    }
    Ok((pal_res, edl_res))
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn cmd_convergence(model: &Model, manifest: &ExperimentManifest) -> Result<(), CliError> {
    let cache_dir = manifest.cache_dir.as_deref();
    let mut csv = String::from("frequency_hz,iteration,contrast_db\n");
    for plan in &model.plans {
        let (pal, _edl) = tensors_for(model, plan, cache_dir)?;
        let spec = perturbation_spec(model);
        let perturbed =
            perturb_tensor(&pal, &spec, 0).map_err(|e| CliError::Numerical(e.to_string()))?;
        let opt = &model.optimizer;
        let res =
            acc_pal_multi(&perturbed, opt.n_iterations, opt.seed, opt.ridge_scale, opt.n_starts)?;
        for (it, c) in res.history.iter().enumerate() {
            let _ = writeln!(csv, "{},{},{}", plan.f_audio(), it + 1, c);
        }
        let plot = LinePlot {
            title: format!("ACC convergence, {} Hz audio", plan.f_audio()),
            x_label: "iteration".into(),
            y_label: "acoustic contrast (dB)".into(),
            series: vec![Series {
                label: format!("{} Hz", plan.f_audio()),
                points: res
                    .history
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| ((i + 1) as f64, c))
                    .collect(),
                stddev: None,
            }],
        };
        write_text(
            &manifest.out_dir.join(format!("convergence_{}hz.svg", hz_tag(plan.f_audio()))),
            &plot.to_svg(),
        )?;
    }
    write_text(&manifest.out_dir.join("convergence.csv"), &csv)
}

fn cmd_contrast_table(model: &Model, manifest: &ExperimentManifest) -> Result<(), CliError> {
    let cache_dir = manifest.cache_dir.as_deref();
    let mut csv = String::from("frequency_hz,array_kind,contrast_db\n");
    for plan in &model.plans {
        let (pal, edl) = tensors_for(model, plan, cache_dir)?;
        let (pal_res, edl_res) = optimize_pair(model, &pal, &edl)?;
        let _ = writeln!(csv, "{},pal,{}", plan.f_audio(), pal_res.contrast_db);
        let _ = writeln!(csv, "{},edl,{}", plan.f_audio(), edl_res.contrast_db);
    }
    write_text(&manifest.out_dir.join("contrast_table.csv"), &csv)
}

fn cmd_fields(model: &Model, manifest: &ExperimentManifest) -> Result<(), CliError> {
    let cache_dir = manifest.cache_dir.as_deref();
    let grid = RenderGrid::from_bounds(
        model.render.x_min,
        model.render.x_max,
        model.render.z_min,
        model.render.z_max,
        model.render.step,
    );
    let mut summary = String::from(
        "frequency_hz,array_kind,contrast_db,bright_mean_spl_db,dark_mean_spl_db,dark_rel_db\n",
    );
    for plan in &model.plans {
        let (pal, edl) = tensors_for(model, plan, cache_dir)?;
        let (pal_res, edl_res) = optimize_pair(model, &pal, &edl)?;

        // the PAL render integrates virtual sources from a (cacheable) table
        let cells = model.quadrature.cell_centers();
        let table_key = cache::field_table_key(
            &model.geometry,
            &model.medium,
            plan,
            model.v0,
            &cells,
        );
        let table = match cache_dir
            .and_then(|d| cache::load_field_table(d, &table_key).ok().flatten())
        {
            Some(t) => t,
            None => {
                let t = ultrasound_field(&model.geometry, &model.medium, plan, model.v0, &cells)?;
                if let Some(d) = cache_dir {
                    cache::store_field_table(d, &table_key, &t)?;
                }
                t
            }
        };

        for (kind, res) in [(ArrayKind::Pal, &pal_res), (ArrayKind::Edl, &edl_res)] {
            let map = render_field_with_table(
                &model.geometry,
                &model.medium,
                plan,
                &model.quadrature,
                model.v0,
                Some(&table),
                &res.drives,
                &grid,
            )?;
            let tag = format!("{}_{}hz", kind.label(), hz_tag(plan.f_audio()));
            let mut csv = format!(
                "# nx={} nz={} x_min={} x_max={} z_min={} z_max={} step={}\n",
                map.xs.len(),
                map.zs.len(),
                model.render.x_min,
                model.render.x_max,
                model.render.z_min,
                model.render.z_max,
                model.render.step
            );
            csv.push_str("x_m,z_m,spl_db\n");
            for (iz, &z) in map.zs.iter().enumerate() {
                for (ix, &x) in map.xs.iter().enumerate() {
                    let _ = writeln!(csv, "{},{},{}", x, z, map.spl_db[iz * map.xs.len() + ix]);
                }
            }
            write_text(&manifest.out_dir.join(format!("fields_{tag}.csv")), &csv)?;

            let heat = Heatmap {
                title: format!(
                    "{} array, {} Hz audio (contrast {:.1} dB)",
                    kind.label().to_uppercase(),
                    plan.f_audio(),
                    res.contrast_db
                ),
                x_label: "x (m)".into(),
                y_label: "z (m)".into(),
                colorbar_label: "SPL (dB)".into(),
                xs: &map.xs,
                zs: &map.zs,
                values: &map.spl_db,
                v_range: None,
                rects: vec![
                    RectAnnotation::for_zone(&model.bright, "white", "bright"),
                    RectAnnotation::for_zone(&model.dark, "black", "dark"),
                ],
            };
            write_text(&manifest.out_dir.join(format!("fields_{tag}.svg")), &heat.to_svg())?;

            let bright_mean = map.zone_mean(&model.bright);
            let dark_mean = map.zone_mean(&model.dark);
            let _ = writeln!(
                summary,
                "{},{},{},{},{},{}",
                plan.f_audio(),
                kind.label(),
                res.contrast_db,
                bright_mean,
                dark_mean,
                dark_mean - bright_mean
            );
        }
    }
    write_text(&manifest.out_dir.join("fields_summary.csv"), &summary)
}

/// The sweep cells: the SNR grid at the configured phase range, then the
/// phase grid at the configured SNR (deduplicated).
fn sweep_cells(model: &Model) -> Vec<(f64, f64)> {
    let mut cells: Vec<(f64, f64)> = Vec::new();
    for &snr in &model.robustness.snr_grid_db {
        cells.push((snr, model.perturbation.phase_range_deg));
    }
    for &r in &model.robustness.phase_grid_deg {
        let cell = (model.perturbation.snr_db, r);
        if !cells.contains(&cell) {
            cells.push(cell);
        }
    }
    cells
}

fn cmd_robustness(model: &Model, manifest: &ExperimentManifest) -> Result<(), CliError> {
    let cache_dir = manifest.cache_dir.as_deref();
    let cells = sweep_cells(model);
    let mut all_cells: Vec<SweepCell> = Vec::new();
    for plan in &model.plans {
        let (pal, edl) = tensors_for(model, plan, cache_dir)?;
        all_cells.extend(run_robustness_sweep(model, plan.f_audio(), &pal, &edl, &cells));
    }

    let mut trials = String::from("frequency_hz,snr_db,phase_range_deg,trial,array_kind,contrast_db\n");
    let mut summary = String::from(
        "frequency_hz,snr_db,phase_range_deg,array_kind,mean_db,std_db,min_db,max_db,n_trials,n_failed\n",
    );
    for cell in &all_cells {
        for (kind, s) in [("pal", &cell.pal), ("edl", &cell.edl)] {
            for (trial, outcome) in s.trials.iter().enumerate() {
                let value = match outcome {
                    Ok(c) => format!("{c}"),
                    Err(_) => String::new(),
                };
                let _ = writeln!(
                    trials,
                    "{},{},{},{},{},{}",
                    cell.frequency_hz, cell.snr_db, cell.phase_range_deg, trial, kind, value
                );
            }
            let n_failed = s.trials.iter().filter(|t| t.is_err()).count();
            let _ = writeln!(
                summary,
                "{},{},{},{},{},{},{},{},{},{}",
                cell.frequency_hz,
                cell.snr_db,
                cell.phase_range_deg,
                kind,
                s.mean_db,
                s.std_db,
                s.min_db,
                s.max_db,
                s.trials.len(),
                n_failed
            );
        }
    }
    write_text(&manifest.out_dir.join("robustness_trials.csv"), &trials)?;
    write_text(&manifest.out_dir.join("robustness_summary.csv"), &summary)?;

    // one plot per frequency per sweep axis, PAL vs EDL with error bars
    for plan in &model.plans {
        let f = plan.f_audio();
        let snr_cells: Vec<&SweepCell> = all_cells
            .iter()
            .filter(|c| {
                c.frequency_hz == f && c.phase_range_deg == model.perturbation.phase_range_deg
            })
            .collect();
        if snr_cells.len() > 1 {
            let series = |pick: fn(&SweepCell) -> &crate::robustness::RobustnessSummary,
                          label: &str| Series {
                label: label.into(),
                points: snr_cells.iter().map(|c| (c.snr_db, pick(c).mean_db)).collect(),
                stddev: Some(snr_cells.iter().map(|c| pick(c).std_db).collect()),
            };
            let plot = LinePlot {
                title: format!(
                    "Contrast vs amplitude SNR, {} Hz (R = {} deg)",
                    f, model.perturbation.phase_range_deg
                ),
                x_label: "SNR (dB)".into(),
                y_label: "acoustic contrast (dB)".into(),
                series: vec![series(|c| &c.pal, "PAL"), series(|c| &c.edl, "EDL")],
            };
            write_text(
                &manifest.out_dir.join(format!("robustness_vs_snr_{}hz.svg", hz_tag(f))),
                &plot.to_svg(),
            )?;
        }
        let phase_cells: Vec<&SweepCell> = all_cells
            .iter()
            .filter(|c| c.frequency_hz == f && c.snr_db == model.perturbation.snr_db)
            .collect();
        if phase_cells.len() > 1 {
            let series = |pick: fn(&SweepCell) -> &crate::robustness::RobustnessSummary,
                          label: &str| Series {
                label: label.into(),
                points: phase_cells
                    .iter()
                    .map(|c| (c.phase_range_deg, pick(c).mean_db))
                    .collect(),
                stddev: Some(phase_cells.iter().map(|c| pick(c).std_db).collect()),
            };
            let plot = LinePlot {
                title: format!(
                    "Contrast vs phase range, {} Hz (SNR = {} dB)",
                    f, model.perturbation.snr_db
                ),
                x_label: "phase range (deg)".into(),
                y_label: "acoustic contrast (dB)".into(),
                series: vec![series(|c| &c.pal, "PAL"), series(|c| &c.edl, "EDL")],
            };
            write_text(
                &manifest.out_dir.join(format!("robustness_vs_phase_{}hz.svg", hz_tag(f))),
                &plot.to_svg(),
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_parses_toml_literals() {
        let mut doc: toml::Value = toml::from_str("[quadrature]\ndx = 0.005\n").unwrap();
        apply_override(&mut doc, "quadrature.dx=0.01").unwrap();
        apply_override(&mut doc, "frequencies.f_audio=[1000.0, 8000.0]").unwrap();
        apply_override(&mut doc, "perturbation.evaluate_on=\"clean\"").unwrap();
        let q = &doc["quadrature"]["dx"];
        assert_eq!(q.as_float(), Some(0.01));
        assert_eq!(doc["frequencies"]["f_audio"].as_array().unwrap().len(), 2);
        assert_eq!(doc["perturbation"]["evaluate_on"].as_str(), Some("clean"));
        assert!(apply_override(&mut doc, "no-equals-sign").is_err());
    }

    #[test]
    fn bare_words_fall_back_to_strings() {
        let mut doc: toml::Value = toml::from_str("").unwrap();
        apply_override(&mut doc, "perturbation.evaluate_on=clean").unwrap();
        assert_eq!(doc["perturbation"]["evaluate_on"].as_str(), Some("clean"));
    }

    #[test]
    fn sweep_cells_dedup_center_point() {
        let model = validate_config(&ExperimentConfig::default()).unwrap();
        let cells = sweep_cells(&model);
        // (30 dB, 15 deg) appears in both grids but must be listed once
        let n_center = cells.iter().filter(|c| **c == (30.0, 15.0)).count();
        assert_eq!(n_center, 1);
        assert_eq!(cells.len(), 7 + 9 - 1);
    }

    #[test]
    fn hz_tags() {
        assert_eq!(hz_tag(1000.0), "1000");
        assert_eq!(hz_tag(2500.5), "2500p5");
    }
}
