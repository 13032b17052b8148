//! Measurement cleaning: rolling 3-sigma outliers, heat-meter consistency,
//! and heating-degree-day screening of whole seasons.
//!
//! Every filter produces a [`CleaningMask`]; masks combine with logical AND
//! and are applied by turning rejected slots into missing values. Nothing is
//! ever imputed.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{HeatingSeason, TimeSeries, HOURS_PER_DAY};
use crate::synth::{MeterReadings, WATER_RHO_CP_KWH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Outlier3Sigma,
    Inconsistent,
    AtypicalHdd,
    InsufficientData,
    Manual,
}

impl RejectReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            RejectReason::Outlier3Sigma => "outlier_3sigma",
            RejectReason::Inconsistent => "inconsistent",
            RejectReason::AtypicalHdd => "atypical_hdd",
            RejectReason::InsufficientData => "insufficient_data",
            RejectReason::Manual => "manual",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Outlier3Sigma, Self::Inconsistent, Self::AtypicalHdd, Self::InsufficientData, Self::Manual]
            .into_iter()
            .find(|r| r.as_str() == s)
    }
}

/// Per-slot keep flags; each rejected slot carries exactly one reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningMask {
    reasons: Vec<Option<RejectReason>>,
}

impl CleaningMask {
    pub fn keep_all(len: usize) -> Self {
        Self { reasons: vec![None; len] }
    }

    pub fn from_reasons(reasons: Vec<Option<RejectReason>>) -> Self {
        Self { reasons }
    }

    pub fn len(&self) -> usize {
        self.reasons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reasons.is_empty()
    }

    pub fn keep(&self, i: usize) -> bool {
        self.reasons[i].is_none()
    }

    pub fn reason(&self, i: usize) -> Option<RejectReason> {
        self.reasons[i]
    }

    pub fn reasons(&self) -> &[Option<RejectReason>] {
        &self.reasons
    }

    pub fn reject(&mut self, i: usize, reason: RejectReason) {
        if self.reasons[i].is_none() {
            self.reasons[i] = Some(reason);
        }
    }

    pub fn rejected_count(&self) -> usize {
        self.reasons.iter().filter(|r| r.is_some()).count()
    }

    /// Logical AND of the keep flags; the first mask's reason wins on overlap.
    pub fn and(&self, other: &CleaningMask) -> Result<CleaningMask> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: other.len() });
        }
        Ok(CleaningMask { reasons: self.reasons.iter().zip(&other.reasons).map(|(a, b)| a.or(*b)).collect() })
    }
}

/// Anything that can flag slots of a substation's meter readings.
pub trait MaskProvider {
    fn name(&self) -> &str;
    fn mask(&self, readings: &MeterReadings) -> Result<CleaningMask>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaFilter {
    pub window_days: u32,
}

impl MaskProvider for SigmaFilter {
    fn name(&self) -> &str {
        "sigma_filter"
    }

    fn mask(&self, readings: &MeterReadings) -> Result<CleaningMask> {
        sigma_filter(&readings.power, self.window_days)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyCheck {
    pub tol: f64,
    pub floor_kw: f64,
}

impl MaskProvider for ConsistencyCheck {
    fn name(&self) -> &str {
        "consistency_check"
    }

    fn mask(&self, r: &MeterReadings) -> Result<CleaningMask> {
        consistency_check_with_floor(&r.power, &r.flow, &r.supply_temp, &r.return_temp, self.tol, self.floor_kw)
    }
}

/// Minimum number of present values a rolling window needs before it may flag.
const MIN_WINDOW_PRESENT: usize = 24;

/// Flags slots more than three rolling standard deviations from the rolling
/// mean, over a centered window of `window_days` days (missing slots ignored).
pub fn sigma_filter(series: &TimeSeries, window_days: u32) -> Result<CleaningMask> {
    if window_days < 7 {
        return Err(Error::Input(format!("sigma filter window must be at least 7 days, got {window_days}")));
    }
    let values = series.values();
    let n = values.len();
    let half = window_days as usize * HOURS_PER_DAY / 2;
    let mut mask = CleaningMask::keep_all(n);
    for (i, v) in values.iter().enumerate() {
        let Some(x) = v else { continue };
        let window = &values[i.saturating_sub(half)..(i + half + 1).min(n)];
        let (count, sum) = window.iter().flatten().fold((0usize, 0.0), |(c, s), v| (c + 1, s + v));
        if count < MIN_WINDOW_PRESENT {
            continue;
        }
        let mean = sum / count as f64;
        let var = window.iter().flatten().map(|v| (v - mean).powi(2)).sum::<f64>() / count as f64;
        if (x - mean).abs() > 3.0 * var.sqrt() {
            mask.reject(i, RejectReason::Outlier3Sigma);
        }
    }
    Ok(mask)
}

/// Default power floor for the consistency check, kW.
pub const CONSISTENCY_FLOOR_KW: f64 = 1.0;

/// Flags slots where metered power disagrees with `ρ·c_p·flow·ΔT` by more
/// than `tol` relative to `max(power, 1 kW)`.
pub fn consistency_check(
    power: &TimeSeries,
    flow: &TimeSeries,
    supply: &TimeSeries,
    return_t: &TimeSeries,
    tol: f64,
) -> Result<CleaningMask> {
    consistency_check_with_floor(power, flow, supply, return_t, tol, CONSISTENCY_FLOOR_KW)
}

pub fn consistency_check_with_floor(
    power: &TimeSeries,
    flow: &TimeSeries,
    supply: &TimeSeries,
    return_t: &TimeSeries,
    tol: f64,
    floor_kw: f64,
) -> Result<CleaningMask> {
    for other in [flow, supply, return_t] {
        if other.start() != power.start() || other.len() != power.len() {
            return Err(Error::Input("meter channels are not aligned".into()));
        }
    }
    let mut mask = CleaningMask::keep_all(power.len());
    for i in 0..power.len() {
        if let (Some(p), Some(f), Some(s), Some(r)) = (power.get(i), flow.get(i), supply.get(i), return_t.get(i)) {
            let hydraulic = WATER_RHO_CP_KWH * f * (s - r);
            if (p - hydraulic).abs() / p.max(floor_kw) > tol {
                mask.reject(i, RejectReason::Inconsistent);
            }
        }
    }
    Ok(mask)
}

/// Minimum number of valid days for a season to be screened.
pub const MIN_SCREEN_DAYS: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum SeasonVerdict {
    Kept { r: f64 },
    Rejected { r: f64 },
    InsufficientData { valid_days: usize },
}

impl SeasonVerdict {
    pub fn is_kept(&self) -> bool {
        matches!(self, SeasonVerdict::Kept { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonScreen {
    pub season: String,
    #[serde(flatten)]
    pub verdict: SeasonVerdict,
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Correlates daily energy with daily HDD inside each season; seasons below
/// `r_min` are rejected, seasons with fewer than 14 valid days are rejected
/// as insufficient.
pub fn hdd_screen(
    dates: &[NaiveDate],
    daily_energy: &[Option<f64>],
    daily_hdd: &[Option<f64>],
    seasons: &[HeatingSeason],
    r_min: f64,
) -> Result<Vec<SeasonScreen>> {
    if dates.len() != daily_energy.len() || dates.len() != daily_hdd.len() {
        return Err(Error::Input("daily energy, HDD and dates are not aligned".into()));
    }
    Ok(seasons
        .iter()
        .filter(|s| dates.iter().any(|d| s.contains_date(*d)))
        .map(|season| {
            let (e, h): (Vec<f64>, Vec<f64>) = dates
                .iter()
                .zip(daily_energy.iter().zip(daily_hdd))
                .filter(|(d, _)| season.contains_date(**d))
                .filter_map(|(_, (e, h))| Some(((*e)?, (*h)?)))
                .unzip();
            let verdict = if e.len() < MIN_SCREEN_DAYS {
                SeasonVerdict::InsufficientData { valid_days: e.len() }
            } else {
                let r = pearson(&e, &h).unwrap_or(0.0);
                if r >= r_min {
                    SeasonVerdict::Kept { r }
                } else {
                    SeasonVerdict::Rejected { r }
                }
            };
            SeasonScreen { season: season.label.clone(), verdict }
        })
        .collect())
}

/// Rejects every slot that falls in a season the screen did not keep.
pub fn season_mask(series: &TimeSeries, seasons: &[HeatingSeason], screens: &[SeasonScreen]) -> CleaningMask {
    let mut mask = CleaningMask::keep_all(series.len());
    for screen in screens {
        let reason = match screen.verdict {
            SeasonVerdict::Kept { .. } => continue,
            SeasonVerdict::Rejected { .. } => RejectReason::AtypicalHdd,
            SeasonVerdict::InsufficientData { .. } => RejectReason::InsufficientData,
        };
        let Some(season) = seasons.iter().find(|s| s.label == screen.season) else { continue };
        for i in 0..series.len() {
            if season.contains_date(series.timestamp(i).date_naive()) {
                mask.reject(i, reason);
            }
        }
    }
    mask
}

/// Rejected slots become missing; everything else is untouched.
pub fn apply_mask(series: &TimeSeries, mask: &CleaningMask) -> Result<TimeSeries> {
    if series.len() != mask.len() {
        return Err(Error::Input(format!("mask has {} slots, series has {}", mask.len(), series.len())));
    }
    let values = series.values().iter().enumerate().map(|(i, v)| if mask.keep(i) { *v } else { None }).collect();
    series.with_values(values)
}

/// Present slots a day needs to count as a valid day in the HDD screen.
pub const MIN_DAY_SLOTS: usize = 20;

/// Settings for [`clean_substation`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CleaningConfig {
    pub window_days: u32,
    pub consistency_tol: f64,
    pub consistency_floor_kw: f64,
    pub r_min: f64,
    pub hdd_base: f64,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        Self { window_days: 14, consistency_tol: 0.1, consistency_floor_kw: CONSISTENCY_FLOOR_KW, r_min: 0.5, hdd_base: 18.0 }
    }
}

impl CleaningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_days < 7 {
            return Err(Error::Input("cleaning.window_days must be at least 7".into()));
        }
        if !(self.consistency_tol > 0.0) || !(self.consistency_floor_kw > 0.0) {
            return Err(Error::Input("consistency tolerance and floor must be positive".into()));
        }
        if !(-1.0..=1.0).contains(&self.r_min) {
            return Err(Error::Input("cleaning.r_min must lie in [-1, 1]".into()));
        }
        if !self.hdd_base.is_finite() {
            return Err(Error::Input("cleaning.hdd_base must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleaningOutcome {
    pub mask: CleaningMask,
    pub screens: Vec<SeasonScreen>,
}

/// Sigma filter AND consistency check, then the HDD screen on the surviving
/// daily energy; seasons the screen does not keep are masked out entirely.
pub fn clean_substation(
    readings: &MeterReadings,
    temperature: &TimeSeries,
    seasons: &[HeatingSeason],
    config: &CleaningConfig,
) -> Result<CleaningOutcome> {
    config.validate()?;
    if temperature.start() != readings.power.start() || temperature.len() != readings.power.len() {
        return Err(Error::Input("weather and measurements are not aligned".into()));
    }
    let slot_mask = SigmaFilter { window_days: config.window_days }.mask(readings)?.and(
        &ConsistencyCheck { tol: config.consistency_tol, floor_kw: config.consistency_floor_kw }.mask(readings)?,
    )?;
    let kept = apply_mask(&readings.power, &slot_mask)?;
    let days: Vec<NaiveDate> = kept.daily_mean().into_iter().map(|(d, _)| d).collect();
    // daily energy = mean of present slots x 24, for days with at most a few gaps
    let energy: Vec<Option<f64>> = kept
        .values()
        .chunks(HOURS_PER_DAY)
        .map(|c| {
            let present: Vec<f64> = c.iter().flatten().copied().collect();
            (c.len() == HOURS_PER_DAY && present.len() >= MIN_DAY_SLOTS)
                .then(|| present.iter().sum::<f64>() / present.len() as f64 * HOURS_PER_DAY as f64)
        })
        .collect();
    let hdd: Vec<Option<f64>> =
        temperature.daily_mean().into_iter().map(|(_, t)| t.map(|t| (config.hdd_base - t).max(0.0))).collect();
    if days.len() != energy.len() || days.len() != hdd.len() {
        return Err(Error::Input("series must start at midnight".into()));
    }
    let screens = hdd_screen(&days, &energy, &hdd, seasons, config.r_min)?;
    let mask = slot_mask.and(&season_mask(&readings.power, seasons, &screens))?;
    Ok(CleaningOutcome { mask, screens })
}
