//! Validation-experiment (VE) dataset construction.
//!
//! Calibration windows step weekly, validation windows step daily, and every
//! calibration window is paired with every validation window of the same
//! heating season. Samples are weighted by the reciprocal frequency of the
//! dates their validation window covers.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{check_missing_with, simulate_window, CalibrationResult, MAX_MISSING_SLOTS};
use crate::error::{Error, Result};
use crate::features::{cvrmse, extract_features, feature_schema, FeatureInputs, FeatureVector, GaInterpretation};
use crate::series::{CalendarWindow, HeatingSeason, TimeSeries};
use crate::synth::WeatherSeries;

pub const WINDOW_DAYS: u32 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// Non-overlapping, 7-day stride.
    Calibration,
    /// Overlapping, 1-day stride.
    Validation,
}

/// Weekly windows anchored at `first`, covering `days` days.
pub fn enumerate_windows(first: NaiveDate, days: u32, mode: WindowMode) -> Result<Vec<CalendarWindow>> {
    if days < WINDOW_DAYS {
        return Err(Error::Input(format!("span of {days} days is shorter than one window")));
    }
    let stride = match mode {
        WindowMode::Calibration => WINDOW_DAYS,
        WindowMode::Validation => 1,
    };
    Ok((0..=days - WINDOW_DAYS)
        .step_by(stride as usize)
        .map(|k| CalendarWindow::weekly(first + Duration::days(k as i64)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VEPair {
    pub substation_id: String,
    pub calibration_window: CalendarWindow,
    pub validation_window: CalendarWindow,
    pub season: String,
}

fn season_of<'a>(window: &CalendarWindow, seasons: &'a [HeatingSeason]) -> Option<&'a HeatingSeason> {
    seasons.iter().find(|s| s.contains_window(window))
}

/// Same-season Cartesian pairing; windows whose load breaks the missing-data rule are dropped.
pub fn build_pairs(
    substation_id: &str,
    load: &TimeSeries,
    cal_windows: &[CalendarWindow],
    val_windows: &[CalendarWindow],
    seasons: &[HeatingSeason],
) -> Vec<VEPair> {
    build_pairs_with(substation_id, load, cal_windows, val_windows, seasons, MAX_MISSING_SLOTS)
}

pub fn build_pairs_with(
    substation_id: &str,
    load: &TimeSeries,
    cal_windows: &[CalendarWindow],
    val_windows: &[CalendarWindow],
    seasons: &[HeatingSeason],
    max_missing_slots: usize,
) -> Vec<VEPair> {
    let usable =
        |w: &CalendarWindow| load.slice(w).map(|s| check_missing_with(&s, max_missing_slots).is_ok()).unwrap_or(false);
    let vals: Vec<(&CalendarWindow, &HeatingSeason)> = val_windows
        .iter()
        .filter(|w| usable(w))
        .filter_map(|w| season_of(w, seasons).map(|s| (w, s)))
        .collect();
    let mut pairs = Vec::new();
    for cal in cal_windows.iter().filter(|w| usable(w)) {
        let Some(season) = season_of(cal, seasons) else { continue };
        for (val, vs) in &vals {
            if vs.label == season.label {
                pairs.push(VEPair {
                    substation_id: substation_id.to_string(),
                    calibration_window: *cal,
                    validation_window: **val,
                    season: season.label.clone(),
                });
            }
        }
    }
    pairs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VESample {
    pub pair: VEPair,
    /// Raw, untransformed features.
    pub features: FeatureVector,
    pub target_cvrmse: f64,
    pub weight: f64,
}

/// Reciprocal-date-frequency weights, normalized to sum to the window count.
pub fn date_weights(windows: &[CalendarWindow]) -> Vec<f64> {
    if windows.is_empty() {
        return Vec::new();
    }
    let mut freq: BTreeMap<NaiveDate, usize> = BTreeMap::new();
    for w in windows {
        for d in w.dates() {
            *freq.entry(d).or_default() += 1;
        }
    }
    let raw: Vec<f64> = windows.iter().map(|w| w.dates().map(|d| 1.0 / freq[&d] as f64).sum()).collect();
    let scale = windows.len() as f64 / raw.iter().sum::<f64>();
    raw.into_iter().map(|r| r * scale).collect()
}

/// Recomputes every sample's weight from the validation-window dates.
pub fn compute_weights(samples: &mut [VESample]) {
    let windows: Vec<CalendarWindow> = samples.iter().map(|s| s.pair.validation_window).collect();
    for (s, w) in samples.iter_mut().zip(date_weights(&windows)) {
        s.weight = w;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VEDataset {
    pub samples: Vec<VESample>,
    pub feature_names: Vec<String>,
    pub provenance: Provenance,
}

impl VEDataset {
    /// Validates the dataset invariants and returns it.
    pub fn new(samples: Vec<VESample>, feature_names: Vec<String>, provenance: Provenance) -> Result<Self> {
        let ds = Self { samples, feature_names, provenance };
        ds.check()?;
        Ok(ds)
    }

    pub fn check(&self) -> Result<()> {
        for s in &self.samples {
            if !s.features.names().eq(self.feature_names.iter().map(String::as_str)) {
                return Err(Error::Input(format!("sample {:?} has a different feature set", s.pair)));
            }
            if !(s.target_cvrmse.is_finite() && s.target_cvrmse >= 0.0) {
                return Err(Error::Input(format!("invalid target {}", s.target_cvrmse)));
            }
            if !(s.weight.is_finite() && s.weight > 0.0) {
                return Err(Error::Input(format!("invalid weight {}", s.weight)));
            }
        }
        let total: f64 = self.samples.iter().map(|s| s.weight).sum();
        let n = self.samples.len() as f64;
        if (total - n).abs() > 1e-9 * n.max(1.0) {
            return Err(Error::Input(format!("weights sum to {total}, expected {n}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_index(&self, name: &str) -> Result<usize> {
        self.feature_names.iter().position(|n| n == name).ok_or_else(|| Error::UnknownFeature(name.to_string()))
    }

    /// Row-major matrix of the named feature columns.
    pub fn matrix(&self, names: &[String]) -> Result<Vec<Vec<f64>>> {
        let idx: Vec<usize> = names.iter().map(|n| self.feature_index(n)).collect::<Result<_>>()?;
        Ok(self
            .samples
            .iter()
            .map(|s| {
                let v: Vec<f64> = s.features.values().collect();
                idx.iter().map(|&i| v[i]).collect()
            })
            .collect())
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.feature_index(name)?;
        Ok(self.samples.iter().map(|s| s.features.values().nth(i).expect("checked width")).collect())
    }

    pub fn targets(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.target_cvrmse).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.weight).collect()
    }

    pub fn substation_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.samples.iter().map(|s| s.pair.substation_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    /// Keeps the samples for which `keep` holds and renormalizes the weights.
    pub fn filtered(&self, keep: impl Fn(&VESample) -> bool) -> Self {
        let mut samples: Vec<VESample> = self.samples.iter().filter(|s| keep(s)).cloned().collect();
        compute_weights(&mut samples);
        Self { samples, feature_names: self.feature_names.clone(), provenance: self.provenance.clone() }
    }

    pub fn without_substation(&self, id: &str) -> Self {
        self.filtered(|s| s.pair.substation_id != id)
    }
}

/// Everything the dataset builder needs for one substation.
#[derive(Debug, Clone)]
pub struct SubstationInputs<'a> {
    pub id: &'a str,
    /// Cleaned measured load.
    pub load: &'a TimeSeries,
    /// Successful calibrations, one per calibration window.
    pub calibrations: &'a [CalibrationResult],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    pub hdd_base: f64,
    pub ga: GaInterpretation,
    pub max_missing_slots: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { hdd_base: 18.0, ga: GaInterpretation::DayMatched, max_missing_slots: MAX_MISSING_SLOTS }
    }
}

/// A pair left out of the dataset and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedPair {
    pub pair: VEPair,
    pub reason: String,
}

fn evaluate_pair(
    pair: &VEPair,
    cal: &CalibrationResult,
    sub: &SubstationInputs<'_>,
    weather: &WeatherSeries,
    options: &BuildOptions,
) -> Result<(FeatureVector, f64)> {
    let measured = sub.load.slice(&pair.validation_window)?;
    let simulated = simulate_window(&cal.selected_params, weather, &pair.validation_window)?;
    let target = cvrmse(&measured, &simulated)?;
    let inputs = FeatureInputs {
        load: sub.load,
        weather,
        floor_area: cal.selected_params.floor_area,
        hdd_base: options.hdd_base,
        ga: options.ga,
    };
    Ok((extract_features(pair, &inputs)?, target))
}

/// Builds the weighted VE dataset; pairs that cannot be evaluated are returned with a reason.
pub fn build_dataset(
    substations: &[SubstationInputs<'_>],
    weather: &WeatherSeries,
    seasons: &[HeatingSeason],
    options: &BuildOptions,
    provenance: Provenance,
) -> Result<(VEDataset, Vec<SkippedPair>)> {
    let first = weather.temperature.start().date_naive();
    let days = (weather.len() / crate::series::HOURS_PER_DAY) as u32;
    let val_windows = enumerate_windows(first, days, WindowMode::Validation)?;

    let mut jobs: Vec<(VEPair, &CalibrationResult, &SubstationInputs<'_>)> = Vec::new();
    for sub in substations {
        let cal_windows: Vec<CalendarWindow> = sub.calibrations.iter().map(|c| c.window).collect();
        for pair in build_pairs_with(sub.id, sub.load, &cal_windows, &val_windows, seasons, options.max_missing_slots) {
            let cal = sub
                .calibrations
                .iter()
                .find(|c| c.window == pair.calibration_window)
                .expect("pair built from a calibration window");
            jobs.push((pair, cal, sub));
        }
    }

    let evaluated: Vec<Result<(FeatureVector, f64)>> =
        jobs.par_iter().map(|(pair, cal, sub)| evaluate_pair(pair, cal, sub, weather, options)).collect();

    let mut samples = Vec::with_capacity(jobs.len());
    let mut skipped = Vec::new();
    for ((pair, _, _), result) in jobs.into_iter().zip(evaluated) {
        match result {
            Ok((features, target)) => samples.push(VESample { pair, features, target_cvrmse: target, weight: 1.0 }),
            Err(e) => {
                tracing::warn!(substation = %pair.substation_id, cal = %pair.calibration_window.start_date,
                    val = %pair.validation_window.start_date, error = %e, "skipping VE pair");
                skipped.push(SkippedPair { pair, reason: e.to_string() });
            }
        }
    }
    compute_weights(&mut samples);
    let names = feature_schema().into_iter().map(|f| f.name).collect();
    Ok((VEDataset::new(samples, names, provenance)?, skipped))
}
