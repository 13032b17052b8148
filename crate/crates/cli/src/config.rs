//! Run configuration: one TOML file, every section optional, unknown keys rejected.
//!
//! Environment variables `UBEM_GP__<SECTION>__<KEY>=<value>` override file values;
//! the value is parsed as a TOML literal and falls back to a plain string.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use ubem_gp_core::calibration::{Range, RangeFactors};
use ubem_gp_core::cleaning::CleaningConfig;
use ubem_gp_core::features::GaInterpretation;
use ubem_gp_core::gp::{FitOptions, HyperBounds, KernelParams};
use ubem_gp_core::grid::{GridConfig, PinMode};
use ubem_gp_core::model::ModelConfig;
use ubem_gp_core::select::{ExclusionScope, SelectionConfig};
use ubem_gp_core::series::HeatingSeason;
use ubem_gp_core::synth::{ClimateConfig, DistrictConfig};
use ubem_gp_core::transform::TransformPolicy;
use ubem_gp_core::ve::BuildOptions;

use crate::error::{CliError, CliResult};

pub const ENV_PREFIX: &str = "UBEM_GP__";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    pub seed: u64,
    pub substations: usize,
    pub days: u32,
    pub start_date: NaiveDate,
    pub noise_multiplicative: f64,
    pub noise_additive_kw: f64,
    pub spikes_per_30d: f64,
    pub stuck_per_30d: f64,
    pub dropouts_per_30d: f64,
    pub structural_error: bool,
    pub bill_months: usize,
    pub bill_noise: f64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        let d = DistrictConfig::default();
        Self {
            seed: 42,
            substations: d.substations,
            days: d.days,
            start_date: d.climate.start_date,
            noise_multiplicative: d.noise_multiplicative,
            noise_additive_kw: d.noise_additive_kw,
            spikes_per_30d: d.spikes_per_30d,
            stuck_per_30d: d.stuck_per_30d,
            dropouts_per_30d: d.dropouts_per_30d,
            structural_error: d.structural_error,
            bill_months: 6,
            bill_noise: d.bill_noise,
        }
    }
}

impl ScenarioSection {
    pub fn district(&self) -> DistrictConfig {
        DistrictConfig {
            substations: self.substations,
            days: self.days,
            climate: ClimateConfig { start_date: self.start_date, ..ClimateConfig::default() },
            noise_multiplicative: self.noise_multiplicative,
            noise_additive_kw: self.noise_additive_kw,
            spikes_per_30d: self.spikes_per_30d,
            stuck_per_30d: self.stuck_per_30d,
            dropouts_per_30d: self.dropouts_per_30d,
            structural_error: self.structural_error,
            bill_noise: self.bill_noise,
            ..DistrictConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSection {
    pub n: usize,
    pub seed: u64,
    pub ranges: RangeFactors,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        Self { n: ubem_gp_core::calibration::DEFAULT_CANDIDATES, seed: 7, ranges: RangeFactors::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeasonSpec {
    pub label: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VeSection {
    /// Empty means Oct 1 – May 31 seasons around the data span.
    pub seasons: Vec<SeasonSpec>,
    pub max_missing_slots: usize,
}

impl Default for VeSection {
    fn default() -> Self {
        Self { seasons: Vec::new(), max_missing_slots: ubem_gp_core::calibration::MAX_MISSING_SLOTS }
    }
}

impl VeSection {
    pub fn seasons_for(&self, first: NaiveDate, last: NaiveDate) -> CliResult<Vec<HeatingSeason>> {
        if self.seasons.is_empty() {
            return Ok(HeatingSeason::default_seasons(first, last));
        }
        let seasons = self
            .seasons
            .iter()
            .map(|s| HeatingSeason::new(s.label.clone(), s.start, s.end))
            .collect::<Result<Vec<_>, _>>()?;
        ubem_gp_core::series::validate_seasons(&seasons)?;
        Ok(seasons)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturesSection {
    pub hdd_base: f64,
    pub ga: GaInterpretation,
}

impl Default for FeaturesSection {
    fn default() -> Self {
        Self { hdd_base: 18.0, ga: GaInterpretation::DayMatched }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectSection {
    pub per_group: usize,
    pub redundancy_threshold: f64,
    pub scope: ExclusionScope,
    /// Features the trained model uses: the first k of the incremental ordering.
    pub model_features: usize,
    pub skew_threshold: f64,
    pub boxcox_target: bool,
}

impl Default for SelectSection {
    fn default() -> Self {
        let s = SelectionConfig::default();
        let t = TransformPolicy::default();
        Self {
            per_group: s.per_group,
            redundancy_threshold: s.redundancy_threshold,
            scope: s.scope,
            model_features: 5,
            skew_threshold: t.skew_threshold,
            boxcox_target: t.boxcox_target,
        }
    }
}

impl SelectSection {
    pub fn selection(&self) -> SelectionConfig {
        SelectionConfig { per_group: self.per_group, redundancy_threshold: self.redundancy_threshold, scope: self.scope }
    }

    pub fn policy(&self) -> TransformPolicy {
        TransformPolicy { skew_threshold: self.skew_threshold, boxcox_target: self.boxcox_target }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthscaleMode {
    Isotropic,
    Ard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpSection {
    pub restarts: usize,
    pub lengthscale_mode: LengthscaleMode,
    pub base_alpha: f64,
    pub hyperopt_max_n: usize,
    pub max_iter: usize,
    pub signal_variance_bounds: (f64, f64),
    pub lengthscale_bounds: (f64, f64),
    pub noise_variance_bounds: (f64, f64),
}

impl Default for GpSection {
    fn default() -> Self {
        let f = FitOptions::default();
        Self {
            restarts: f.restarts,
            lengthscale_mode: LengthscaleMode::Isotropic,
            base_alpha: ModelConfig::default().base_alpha,
            hyperopt_max_n: f.hyperopt_max_n,
            max_iter: f.max_iter,
            signal_variance_bounds: f.bounds.signal_variance,
            lengthscale_bounds: f.bounds.lengthscale,
            noise_variance_bounds: f.bounds.noise_variance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Training-set size for `train`, `eval` and the feature sweep.
    pub n_train: usize,
    /// Seed of the single train / eval split.
    pub seed: u64,
    pub sizes: Vec<usize>,
    /// Fixed feature count of the size sweep.
    pub size_features: usize,
    pub k_max: usize,
    pub seeds: Vec<u64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            n_train: 1500,
            seed: 1,
            sizes: ubem_gp_core::evaluation::DEFAULT_SIZES.to_vec(),
            size_features: 3,
            k_max: 9,
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub resolution: usize,
    pub extend_fraction: f64,
    pub pin: PinMode,
    pub band_sigmas: f64,
    pub curve_feature: String,
    /// Raw-unit pins overriding `pin` for the named features.
    pub custom_pins: BTreeMap<String, f64>,
}

impl Default for GridSection {
    fn default() -> Self {
        let g = GridConfig::default();
        Self {
            resolution: g.resolution,
            extend_fraction: g.extend_fraction,
            pin: g.pin,
            band_sigmas: g.band_sigmas,
            curve_feature: "power_variation".into(),
            custom_pins: BTreeMap::new(),
        }
    }
}

impl GridSection {
    pub fn grid(&self) -> GridConfig {
        GridConfig {
            resolution: self.resolution,
            extend_fraction: self.extend_fraction,
            pin: self.pin,
            band_sigmas: self.band_sigmas,
            custom_pins: self.custom_pins.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scenario: ScenarioSection,
    pub cleaning: CleaningConfig,
    pub calibration: CalibrationSection,
    pub ve: VeSection,
    pub features: FeaturesSection,
    pub select: SelectSection,
    pub gp: GpSection,
    pub eval: EvalSection,
    pub grid: GridSection,
}

fn check(ok: bool, msg: &str) -> CliResult<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(msg.to_string()))
    }
}

fn check_range(r: &Range, name: &str) -> CliResult<()> {
    check(r.low.is_finite() && r.high.is_finite() && r.low <= r.high, &format!("calibration.ranges.{name}: need low <= high"))
}

fn check_bounds(b: (f64, f64), name: &str) -> CliResult<()> {
    check(b.0 > 0.0 && b.0 <= b.1 && b.1.is_finite(), &format!("gp.{name}: need 0 < low <= high"))
}

impl RunConfig {
    /// Loads a file (or defaults when `path` is `None`), applies environment overrides and validates.
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?,
            None => String::new(),
        };
        let env: Vec<(String, String)> = std::env::vars().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        Self::from_toml_with_overrides(&text, &env)
    }

    pub fn from_toml_with_overrides(text: &str, overrides: &[(String, String)]) -> CliResult<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        for (key, value) in overrides {
            apply_override(&mut table, key, value)?;
        }
        let config: RunConfig =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        let s = &self.scenario;
        check(s.substations >= 2, "scenario.substations must be at least 2 (extrapolation needs two)")?;
        check(s.days >= 14, "scenario.days must be at least 14")?;
        check(s.bill_months >= 1, "scenario.bill_months must be at least 1")?;
        check(s.bill_noise >= 0.0 && s.bill_noise.is_finite(), "scenario.bill_noise must be non-negative")?;
        s.district().validate().map_err(|e| CliError::Config(format!("scenario: {e}")))?;
        self.cleaning.validate().map_err(|e| CliError::Config(format!("cleaning: {e}")))?;

        let c = &self.calibration;
        check(c.n >= 1, "calibration.n must be at least 1")?;
        let r = &c.ranges;
        for (range, name) in [
            (&r.ua_per_m2, "ua_per_m2"),
            (&r.capacitance_per_m2, "capacitance_per_m2"),
            (&r.setpoint_day, "setpoint_day"),
            (&r.setpoint_night, "setpoint_night"),
            (&r.solar_aperture_per_m2, "solar_aperture_per_m2"),
            (&r.dhw_daily_kwh_per_m2, "dhw_daily_kwh_per_m2"),
        ] {
            check_range(range, name)?;
        }
        r.ranges(1000.0).validate().map_err(|e| CliError::Config(format!("calibration.ranges: {e}")))?;

        check(self.ve.max_missing_slots < 7 * 24, "ve.max_missing_slots must be below a week of slots")?;
        for sp in &self.ve.seasons {
            check(sp.start < sp.end, &format!("ve.seasons: season {} must start before it ends", sp.label))?;
        }
        if !self.ve.seasons.is_empty() {
            self.ve.seasons_for(s.start_date, s.start_date).map(|_| ())?;
        }
        check(self.features.hdd_base.is_finite(), "features.hdd_base must be finite")?;

        let sel = &self.select;
        check(sel.per_group >= 1, "select.per_group must be at least 1")?;
        check((0.0..=1.0).contains(&sel.redundancy_threshold), "select.redundancy_threshold must lie in [0, 1]")?;
        check(sel.model_features >= 1, "select.model_features must be at least 1")?;
        check(sel.skew_threshold >= 0.0, "select.skew_threshold must be non-negative")?;

        let g = &self.gp;
        check(g.restarts >= 1, "gp.restarts must be at least 1")?;
        check(g.base_alpha > 0.0 && g.base_alpha.is_finite(), "gp.base_alpha must be positive")?;
        check(g.max_iter >= 1, "gp.max_iter must be at least 1")?;
        check_bounds(g.signal_variance_bounds, "signal_variance_bounds")?;
        check_bounds(g.lengthscale_bounds, "lengthscale_bounds")?;
        check_bounds(g.noise_variance_bounds, "noise_variance_bounds")?;

        let e = &self.eval;
        check(e.n_train >= 2, "eval.n_train must be at least 2")?;
        check(!e.sizes.is_empty() && e.sizes.windows(2).all(|w| w[0] < w[1]), "eval.sizes must be strictly increasing")?;
        check(e.sizes[0] >= 2, "eval.sizes must be at least 2")?;
        check(e.size_features >= 1 && e.k_max >= 1, "eval.size_features and eval.k_max must be at least 1")?;
        check(!e.seeds.is_empty(), "eval.seeds must not be empty")?;

        self.grid.grid().validate().map_err(|e| CliError::Config(format!("grid: {e}")))?;
        check(!self.grid.curve_feature.is_empty(), "grid.curve_feature must not be empty")?;
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        let g = &self.gp;
        let initial_ls = g.lengthscale_bounds.0.max(1.0f64.min(g.lengthscale_bounds.1));
        let clamp = |v: f64, b: (f64, f64)| v.clamp(b.0, b.1);
        ModelConfig {
            fit: FitOptions {
                bounds: HyperBounds {
                    signal_variance: g.signal_variance_bounds,
                    lengthscale: g.lengthscale_bounds,
                    noise_variance: g.noise_variance_bounds,
                },
                restarts: g.restarts,
                ard: g.lengthscale_mode == LengthscaleMode::Ard,
                hyperopt_max_n: g.hyperopt_max_n,
                max_iter: g.max_iter,
                initial: KernelParams::isotropic(
                    clamp(1.0, g.signal_variance_bounds),
                    initial_ls,
                    clamp(1e-2, g.noise_variance_bounds),
                ),
            },
            base_alpha: g.base_alpha,
            transform: self.select.policy(),
        }
    }

    pub fn build_options(&self) -> BuildOptions {
        BuildOptions { hdd_base: self.features.hdd_base, ga: self.features.ga, max_missing_slots: self.ve.max_missing_slots }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Hash of the named sections, in the given order.
    pub fn sections_hash(&self, sections: &[&str]) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let picked: Vec<(&str, &serde_json::Value)> = sections.iter().map(|s| (*s, &value[*s])).collect();
        let bytes = serde_json::to_vec(&picked).expect("json");
        hex::encode(Sha256::digest(bytes))
    }

    /// Hash of the whole configuration.
    pub fn hash(&self) -> String {
        self.sections_hash(&SECTIONS)
    }
}

pub const SECTIONS: [&str; 9] = ["scenario", "cleaning", "calibration", "ve", "features", "select", "gp", "eval", "grid"];

fn apply_override(table: &mut toml::Table, key: &str, raw: &str) -> CliResult<()> {
    let path: Vec<String> = key
        .strip_prefix(ENV_PREFIX)
        .ok_or_else(|| CliError::Config(format!("override {key} lacks the {ENV_PREFIX} prefix")))?
        .split("__")
        .map(|p| p.to_ascii_lowercase())
        .collect();
    if path.len() < 2 || path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("override {key} must name a section and a key")));
    }
    if !SECTIONS.contains(&path[0].as_str()) {
        return Err(CliError::Config(format!("override {key}: unknown section `{}`", path[0])));
    }
    let value = parse_literal(raw);
    let mut node = table;
    for part in &path[..path.len() - 1] {
        let entry = node.entry(part.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry.as_table_mut().ok_or_else(|| CliError::Config(format!("override {key}: `{part}` is not a table")))?;
    }
    node.insert(path[path.len() - 1].clone(), value);
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

const DOCS: &[(&str, &str)] = &[
    ("scenario", "Synthetic district generator."),
    ("scenario.seed", "Master seed of the synthetic data; `--seed` overrides it."),
    ("scenario.substations", "Number of substations (ids S01, S02, ...)."),
    ("scenario.days", "Length of the hourly record in days."),
    ("scenario.start_date", "First day of the record (midnight UTC)."),
    ("scenario.noise_multiplicative", "Relative meter noise (sd)."),
    ("scenario.noise_additive_kw", "Additive meter noise (sd, kW)."),
    ("scenario.spikes_per_30d", "Expected spike anomalies per 30 days and substation."),
    ("scenario.stuck_per_30d", "Expected stuck-meter episodes per 30 days."),
    ("scenario.dropouts_per_30d", "Expected dropouts per 30 days."),
    ("scenario.structural_error", "Truth generator includes physics the surrogate lacks."),
    ("scenario.bill_months", "Non-heating monthly bills written per substation."),
    ("scenario.bill_noise", "Relative bill noise (sd)."),
    ("cleaning", "Measurement cleaning."),
    ("cleaning.window_days", "Centered rolling window of the 3-sigma filter (days, >= 7)."),
    ("cleaning.consistency_tol", "Relative tolerance of the heat-meter consistency check."),
    ("cleaning.consistency_floor_kw", "Power floor of the consistency check denominator (kW)."),
    ("cleaning.r_min", "Minimum daily energy / HDD correlation for a season to be kept."),
    ("cleaning.hdd_base", "Base temperature of the HDD screen (degC)."),
    ("calibration", "Brute-force calibration."),
    ("calibration.n", "Candidate parameter sets per substation."),
    ("calibration.seed", "Seed of candidate sampling (mixed with the substation id)."),
    ("calibration.ranges", "Sampling ranges; *_per_m2 bounds are multiplied by floor area."),
    ("ve", "Validation-experiment dataset."),
    ("ve.seasons", "Heating seasons as [{label, start, end}]; empty = Oct 1 - May 31 each year."),
    ("ve.max_missing_slots", "Windows with more missing hourly slots than this are dropped."),
    ("features", "Feature extraction."),
    ("features.hdd_base", "Base temperature of the HDD feature (degC)."),
    ("features.ga", "Power-variation interpretation: day_matched or all_pairs."),
    ("select", "Transforms and feature selection."),
    ("select.per_group", "Maximum features selected per group."),
    ("select.redundancy_threshold", "Pairwise dcor above which a candidate is excluded."),
    ("select.scope", "Redundancy check scope: across_groups or within_group."),
    ("select.model_features", "Features used by `train` (first k of the ordering)."),
    ("select.skew_threshold", "Features with |skewness| above this are Box-Cox transformed."),
    ("select.boxcox_target", "Box-Cox transform the target."),
    ("gp", "Gaussian process."),
    ("gp.restarts", "Optimizer starts (the first is the fixed initial point)."),
    ("gp.lengthscale_mode", "isotropic or ard."),
    ("gp.base_alpha", "Per-sample noise of a mean-weight sample, in Box-Cox target units."),
    ("gp.hyperopt_max_n", "Hyperparameters are fitted on at most this many rows (0 = all)."),
    ("gp.max_iter", "Optimizer iterations per start."),
    ("gp.signal_variance_bounds", "[low, high]"),
    ("gp.lengthscale_bounds", "[low, high], inputs are scaled to [0, 1]."),
    ("gp.noise_variance_bounds", "[low, high]"),
    ("eval", "Evaluation and sweeps."),
    ("eval.n_train", "Training size of `train`, `eval` and the feature sweep."),
    ("eval.seed", "Seed of the `train` / `eval` split."),
    ("eval.sizes", "Training sizes of the size sweep."),
    ("eval.size_features", "Fixed feature count of the size sweep."),
    ("eval.k_max", "Largest feature count of the feature sweep."),
    ("eval.seeds", "Seeds of every sweep point."),
    ("grid", "Grid explorer."),
    ("grid.resolution", "Lattice points per axis."),
    ("grid.extend_fraction", "Lattice extends this fraction of the training range past each end."),
    ("grid.pin", "Value of non-axis features: weighted_median or mean."),
    ("grid.band_sigmas", "Half-width of the 1-D band in predictive standard deviations."),
    ("grid.curve_feature", "Feature of the 1-D error curve."),
    ("grid.custom_pins", "Raw-unit pins per feature, overriding `pin`."),
];

/// The default configuration as commented TOML.
pub fn reference() -> String {
    let text = RunConfig::default().to_toml();
    let mut out = String::from("# ubem-gp configuration reference: every key with its default.\n");
    out.push_str(&format!("# Environment overrides: {ENV_PREFIX}<SECTION>__<KEY>=<toml literal>\n"));
    let mut section = String::new();
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.starts_with('[') && trimmed.ends_with(']') {
            section = trimmed.trim_matches(|c| c == '[' || c == ']').to_string();
            if let Some((_, doc)) = DOCS.iter().find(|(k, _)| *k == section) {
                out.push_str(&format!("\n# {doc}\n"));
            } else {
                out.push('\n');
            }
        } else if let Some((key, _)) = trimmed.split_once(" = ") {
            let full = format!("{section}.{key}");
            if let Some((_, doc)) = DOCS.iter().find(|(k, _)| *k == full) {
                out.push_str(&format!("# {doc}\n"));
            }
        }
        out.push_str(line);
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml_with_overrides("", &[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn reference_round_trips_to_defaults() {
        let text = reference();
        assert_eq!(RunConfig::from_toml_with_overrides(&text, &[]).unwrap(), RunConfig::default());
        for section in SECTIONS {
            assert!(text.contains(&format!("[{section}]")), "{section}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml_with_overrides("[gp]\nrestart = 3\n", &[]).unwrap_err();
        assert!(err.to_string().contains("restart"), "{err}");
        assert!(RunConfig::from_toml_with_overrides("[nope]\nx = 1\n", &[]).is_err());
    }

    #[test]
    fn invalid_values_name_the_field() {
        let err = RunConfig::from_toml_with_overrides("[gp]\nrestarts = 0\n", &[]).unwrap_err();
        assert!(err.to_string().contains("gp.restarts"), "{err}");
        let err = RunConfig::from_toml_with_overrides("[eval]\nsizes = [500, 250]\n", &[]).unwrap_err();
        assert!(err.to_string().contains("eval.sizes"), "{err}");
        let err = RunConfig::from_toml_with_overrides("[cleaning]\nwindow_days = 3\n", &[]).unwrap_err();
        assert!(err.to_string().contains("window_days"), "{err}");
    }

    #[test]
    fn env_overrides_win() {
        let env = vec![
            ("UBEM_GP__GP__RESTARTS".to_string(), "3".to_string()),
            ("UBEM_GP__FEATURES__GA".to_string(), "all_pairs".to_string()),
            ("UBEM_GP__EVAL__SEEDS".to_string(), "[7, 8]".to_string()),
        ];
        let c = RunConfig::from_toml_with_overrides("[gp]\nrestarts = 9\n", &env).unwrap();
        assert_eq!(c.gp.restarts, 3);
        assert_eq!(c.features.ga, GaInterpretation::AllPairs);
        assert_eq!(c.eval.seeds, vec![7, 8]);
        let bad = vec![("UBEM_GP__NOPE__X".to_string(), "1".to_string())];
        assert!(RunConfig::from_toml_with_overrides("", &bad).is_err());
    }

    #[test]
    fn section_hashes_are_selective() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.grid.resolution = 20;
        assert_eq!(a.sections_hash(&["scenario", "cleaning"]), b.sections_hash(&["scenario", "cleaning"]));
        assert_ne!(a.sections_hash(&["grid"]), b.sections_hash(&["grid"]));
        assert_ne!(a.hash(), b.hash());
    }
}
