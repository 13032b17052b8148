//! Validation-experiment features and the CV(RMSE) error target.
//!
//! Features fall into three groups: energy use (from the measured load),
//! boundary conditions (from the weather), and calibration/validation
//! conditions (validation-window value minus calibration-window value, plus
//! the time gap between the two windows).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{CalendarWindow, TimeSeries, HOURS_PER_DAY};
use crate::synth::WeatherSeries;
use crate::ve::VEPair;

/// Coefficient of variation of the RMSE over slots present in both series.
pub fn cvrmse(measured: &TimeSeries, simulated: &TimeSeries) -> Result<f64> {
    if measured.start() != simulated.start() || measured.len() != simulated.len() {
        return Err(Error::Input("measured and simulated series are not aligned".into()));
    }
    let pairs: Vec<(f64, f64)> = measured
        .values()
        .iter()
        .zip(simulated.values())
        .filter_map(|(m, s)| Some(((*m)?, (*s)?)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::UndefinedMetric("no common present slots".into()));
    }
    let n = pairs.len() as f64;
    let mean = pairs.iter().map(|(m, _)| m).sum::<f64>() / n;
    if mean <= 0.0 {
        return Err(Error::UndefinedMetric(format!("measured mean {mean} is not positive")));
    }
    let mse = pairs.iter().map(|(m, s)| (m - s).powi(2)).sum::<f64>() / n;
    Ok(mse.sqrt() / mean)
}

/// How the hourly-vs-daily comparison in the relative power variation is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaInterpretation {
    /// Each hour against its own day's mean.
    #[default]
    DayMatched,
    /// Literal double sum over every (hour, hour-of-day-mean) pair.
    AllPairs,
}

/// Hourly, daily and weekly views of a load window.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadWindow {
    /// Hourly loads, kW (`None` = missing).
    pub hourly: Vec<Option<f64>>,
    /// Day-matched mean for every hourly slot.
    pub daily: Vec<Option<f64>>,
    pub weekly_mean: f64,
}

impl LoadWindow {
    pub fn from_series(series: &TimeSeries) -> Result<Self> {
        let daily_means = series.daily_mean();
        let first_day = series.start().date_naive();
        let daily = (0..series.len())
            .map(|i| {
                let day = (series.timestamp(i).date_naive() - first_day).num_days() as usize;
                daily_means[day].1
            })
            .collect();
        let present: Vec<f64> = series.present().collect();
        if present.is_empty() {
            return Err(Error::Input("load window has no present slots".into()));
        }
        Ok(Self {
            hourly: series.values().to_vec(),
            daily,
            weekly_mean: present.iter().sum::<f64>() / present.len() as f64,
        })
    }

    /// Daily means, one per day (only days with data).
    pub fn day_values(&self) -> Vec<f64> {
        self.daily.chunks(HOURS_PER_DAY).filter_map(|c| c[0]).collect()
    }
}

/// Relative power variation of a weekly window, in percent.
pub fn ga_weekly(window: &LoadWindow, mode: GaInterpretation) -> Result<f64> {
    if window.weekly_mean <= 0.0 {
        return Err(Error::UndefinedFeature {
            feature: "power_variation".into(),
            reason: format!("weekly mean {} is not positive", window.weekly_mean),
        });
    }
    let present: Vec<(f64, f64)> =
        window.hourly.iter().zip(&window.daily).filter_map(|(h, d)| Some(((*h)?, (*d)?))).collect();
    let n = present.len() as f64;
    let deviation: f64 = match mode {
        GaInterpretation::DayMatched => present.iter().map(|(h, d)| (h - d).abs()).sum(),
        GaInterpretation::AllPairs => present
            .iter()
            .map(|(h, _)| present.iter().map(|(_, d)| (h - d).abs()).sum::<f64>())
            .sum(),
    };
    Ok(0.5 * deviation / (window.weekly_mean * n) * 100.0)
}

/// Heating degree days: `Σ max(0, base − T_day)`.
pub fn hdd(daily_mean_temp: &[f64], base: f64) -> f64 {
    daily_mean_temp.iter().map(|t| (base - t).max(0.0)).sum()
}

/// Mean absolute deviation from the mean.
fn mean_abs_dev(values: &[f64]) -> f64 {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - mean).abs()).sum::<f64>() / values.len() as f64
}

/// Relative load variation (mean |P_h − P_w| / P_w) divided by the
/// temperature variation (mean |T − mean(T)|), over slots where the load is present.
pub fn thermoception(load: &LoadWindow, temperature: &TimeSeries) -> Result<f64> {
    if temperature.len() != load.hourly.len() {
        return Err(Error::DimensionMismatch { expected: load.hourly.len(), got: temperature.len() });
    }
    let undefined = |reason: String| Error::UndefinedFeature { feature: "thermoception".into(), reason };
    if load.weekly_mean <= 0.0 {
        return Err(undefined("non-positive mean load".into()));
    }
    let (p, t): (Vec<f64>, Vec<f64>) = load
        .hourly
        .iter()
        .zip(temperature.values())
        .filter_map(|(p, t)| Some(((*p)?, (*t)?)))
        .unzip();
    if p.is_empty() {
        return Err(undefined("no aligned slots".into()));
    }
    let t_var = mean_abs_dev(&t);
    if t_var == 0.0 {
        return Err(undefined("zero temperature variation".into()));
    }
    let p_var = p.iter().map(|v| (v - load.weekly_mean).abs()).sum::<f64>() / p.len() as f64 / load.weekly_mean;
    Ok(p_var / t_var)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub min: f64,
    pub mean: f64,
    /// Lower-middle element for even counts.
    pub median: f64,
    pub max: f64,
}

pub fn window_stats(series: &TimeSeries) -> Result<WindowStats> {
    stats_of(series.present().collect())
}

fn stats_of(mut v: Vec<f64>) -> Result<WindowStats> {
    if v.is_empty() {
        return Err(Error::Input("window has no present values".into()));
    }
    v.sort_by(f64::total_cmp);
    Ok(WindowStats {
        min: v[0],
        mean: v.iter().sum::<f64>() / v.len() as f64,
        median: v[(v.len() - 1) / 2],
        max: v[v.len() - 1],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureGroup {
    EnergyUse,
    Boundary,
    CalibrationValidation,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 3] =
        [FeatureGroup::EnergyUse, FeatureGroup::Boundary, FeatureGroup::CalibrationValidation];

    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureGroup::EnergyUse => "energy_use",
            FeatureGroup::Boundary => "boundary",
            FeatureGroup::CalibrationValidation => "cv",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    pub unit: String,
    pub group: FeatureGroup,
}

/// Per-window base features with their units and groups, in schema order.
const BASE_FEATURES: [(&str, &str, FeatureGroup); 17] = [
    ("power_variation", "%", FeatureGroup::EnergyUse),
    ("median_power_per_m2", "kW/m2", FeatureGroup::EnergyUse),
    ("thermoception", "1/K", FeatureGroup::EnergyUse),
    ("min_power", "kW", FeatureGroup::EnergyUse),
    ("mean_power", "kW", FeatureGroup::EnergyUse),
    ("median_power", "kW", FeatureGroup::EnergyUse),
    ("max_power", "kW", FeatureGroup::EnergyUse),
    ("max_temperature", "degC", FeatureGroup::Boundary),
    ("mean_ghi", "W/m2", FeatureGroup::Boundary),
    ("temperature_variation", "degC", FeatureGroup::Boundary),
    ("hdd", "degC.day", FeatureGroup::Boundary),
    ("min_temperature", "degC", FeatureGroup::Boundary),
    ("mean_temperature", "degC", FeatureGroup::Boundary),
    ("median_temperature", "degC", FeatureGroup::Boundary),
    ("min_ghi", "W/m2", FeatureGroup::Boundary),
    ("median_ghi", "W/m2", FeatureGroup::Boundary),
    ("max_ghi", "W/m2", FeatureGroup::Boundary),
];

pub const TIME_GAP_FEATURE: &str = "time_gap_days";

/// Name of the gap feature derived from a base feature.
pub fn gap_name(base: &str) -> String {
    match base {
        "max_temperature" => "max_temp_gap".into(),
        "mean_ghi" => "ghi_gap".into(),
        "temperature_variation" => "temp_var_gap".into(),
        other => format!("{other}_gap"),
    }
}

/// The full, ordered feature schema.
pub fn feature_schema() -> Vec<FeatureDef> {
    let base = BASE_FEATURES.iter().map(|(n, u, g)| FeatureDef { name: (*n).into(), unit: (*u).into(), group: *g });
    let gaps = BASE_FEATURES.iter().map(|(n, u, _)| FeatureDef {
        name: gap_name(n),
        unit: (*u).into(),
        group: FeatureGroup::CalibrationValidation,
    });
    let time_gap =
        FeatureDef { name: TIME_GAP_FEATURE.into(), unit: "day".into(), group: FeatureGroup::CalibrationValidation };
    base.chain(gaps).chain(std::iter::once(time_gap)).collect()
}

/// Named feature values in schema order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    entries: Vec<(String, f64)>,
}

impl FeatureVector {
    pub fn new(entries: Vec<(String, f64)>) -> Result<Self> {
        for (i, (name, v)) in entries.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::UndefinedFeature { feature: name.clone(), reason: format!("non-finite value {v}") });
            }
            if entries[..i].iter().any(|(n, _)| n == name) {
                return Err(Error::Input(format!("duplicate feature name {name}")));
            }
        }
        Ok(Self { entries })
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|(_, v)| *v)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Data a feature extraction reads from.
#[derive(Debug, Clone, Copy)]
pub struct FeatureInputs<'a> {
    /// Cleaned measured load of the substation.
    pub load: &'a TimeSeries,
    pub weather: &'a WeatherSeries,
    pub floor_area: f64,
    pub hdd_base: f64,
    pub ga: GaInterpretation,
}

/// Base features of one window, in schema order.
pub fn window_features(window: &CalendarWindow, inputs: &FeatureInputs<'_>) -> Result<Vec<f64>> {
    let load = inputs.load.slice(window)?;
    let temp = inputs.weather.temperature.slice(window)?;
    let ghi = inputs.weather.ghi.slice(window)?;
    let lw = LoadWindow::from_series(&load)?;

    let power = window_stats(&load)?;
    let t_stats = window_stats(&temp)?;
    let g_stats = window_stats(&ghi)?;
    let temps: Vec<f64> = temp.present().collect();
    let daily_temp: Vec<f64> = temp.daily_mean().into_iter().filter_map(|(_, t)| t).collect();

    Ok(vec![
        ga_weekly(&lw, inputs.ga)?,
        power.median / inputs.floor_area,
        thermoception(&lw, &temp)?,
        power.min,
        power.mean,
        power.median,
        power.max,
        t_stats.max,
        g_stats.mean,
        mean_abs_dev(&temps),
        hdd(&daily_temp, inputs.hdd_base),
        t_stats.min,
        t_stats.mean,
        t_stats.median,
        g_stats.min,
        g_stats.median,
        g_stats.max,
    ])
}

/// Validation-window features, their gaps to the calibration window, and the time gap.
pub fn extract_features(pair: &VEPair, inputs: &FeatureInputs<'_>) -> Result<FeatureVector> {
    let val = window_features(&pair.validation_window, inputs)?;
    let cal = window_features(&pair.calibration_window, inputs)?;
    let time_gap = (pair.validation_window.start_date - pair.calibration_window.start_date).num_days() as f64;
    let mut entries: Vec<(String, f64)> = BASE_FEATURES.iter().zip(&val).map(|((n, _, _), v)| ((*n).into(), *v)).collect();
    entries.extend(BASE_FEATURES.iter().zip(val.iter().zip(&cal)).map(|((n, _, _), (v, c))| (gap_name(n), v - c)));
    entries.push((TIME_GAP_FEATURE.into(), time_gap));
    FeatureVector::new(entries)
}
