//! Brute-force two-stage calibration of the surrogate.
//!
//! Stage one rescales the DHW demand of every candidate to the non-heating
//! bills; stage two simulates the candidates and keeps the one with the
//! smallest CV(RMSE) on the calibration window.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::cvrmse;
use crate::series::{CalendarWindow, TimeSeries, HOURS_PER_DAY};
use crate::synth::{simulate_load, simulated_month_dhw_kwh, BuildingParams, WeatherSeries};

pub const DEFAULT_CANDIDATES: usize = 1000;

/// Windows with more missing hourly slots than this are unusable.
pub const MAX_MISSING_SLOTS: usize = HOURS_PER_DAY;

/// Closed interval `[low, high]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub low: f64,
    pub high: f64,
}

impl Range {
    pub fn new(low: f64, high: f64) -> Self {
        Self { low, high }
    }

    fn contains(&self, x: f64) -> bool {
        self.low <= x && x <= self.high
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.low == self.high {
            self.low
        } else {
            self.low + (self.high - self.low) * rng.random::<f64>()
        }
    }
}

/// Parameters that are known for a building and never calibrated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedParams {
    pub floor_area: f64,
    pub night_start: u32,
    pub night_end: u32,
    /// Heater size expressed as the design temperature difference it covers: max power = UA × this / 1000.
    pub heat_headroom_k: f64,
}

/// Sampling bounds over the calibratable part of [`BuildingParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRanges {
    pub ua: Range,
    pub capacitance: Range,
    pub setpoint_day: Range,
    pub setpoint_night: Range,
    pub solar_aperture: Range,
    pub dhw_daily_kwh: Range,
    pub fixed: FixedParams,
}

/// Ranges expressed per m² of floor area (setpoints absolute), so one set serves every building.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RangeFactors {
    /// W/K per m².
    pub ua_per_m2: Range,
    /// J/K per m².
    pub capacitance_per_m2: Range,
    pub setpoint_day: Range,
    pub setpoint_night: Range,
    /// m² of effective aperture per m² of floor.
    pub solar_aperture_per_m2: Range,
    /// kWh/day per m².
    pub dhw_daily_kwh_per_m2: Range,
    pub night_start: u32,
    pub night_end: u32,
    pub heat_headroom_k: f64,
}

impl Default for RangeFactors {
    fn default() -> Self {
        Self {
            ua_per_m2: Range::new(0.6, 2.5),
            capacitance_per_m2: Range::new(1.0e5, 3.0e5),
            setpoint_day: Range::new(18.0, 23.0),
            setpoint_night: Range::new(15.0, 22.0),
            solar_aperture_per_m2: Range::new(0.0, 0.06),
            dhw_daily_kwh_per_m2: Range::new(0.02, 0.1),
            night_start: 22,
            night_end: 6,
            heat_headroom_k: 60.0,
        }
    }
}

impl RangeFactors {
    pub fn ranges(&self, floor_area: f64) -> ParamRanges {
        let scale = |r: Range| Range::new(r.low * floor_area, r.high * floor_area);
        ParamRanges {
            ua: scale(self.ua_per_m2),
            capacitance: scale(self.capacitance_per_m2),
            setpoint_day: self.setpoint_day,
            setpoint_night: self.setpoint_night,
            solar_aperture: scale(self.solar_aperture_per_m2),
            dhw_daily_kwh: scale(self.dhw_daily_kwh_per_m2),
            fixed: FixedParams {
                floor_area,
                night_start: self.night_start,
                night_end: self.night_end,
                heat_headroom_k: self.heat_headroom_k,
            },
        }
    }
}

impl ParamRanges {
    /// Plausible ranges for a building of the given floor area.
    pub fn for_floor_area(floor_area: f64) -> Self {
        RangeFactors::default().ranges(floor_area)
    }

    fn fields(&self) -> [(&'static str, Range); 6] {
        [
            ("ua", self.ua),
            ("capacitance", self.capacitance),
            ("setpoint_day", self.setpoint_day),
            ("setpoint_night", self.setpoint_night),
            ("solar_aperture", self.solar_aperture),
            ("dhw_daily_kwh", self.dhw_daily_kwh),
        ]
    }

    /// Degenerate ranges (`low == high`) are allowed and pin the field.
    pub fn validate(&self) -> Result<()> {
        for (name, r) in self.fields() {
            if !(r.low.is_finite() && r.high.is_finite() && r.low <= r.high) {
                return Err(Error::Input(format!("range for {name} is not a finite interval with low <= high")));
            }
        }
        if self.ua.low <= 0.0 || self.capacitance.low <= 0.0 {
            return Err(Error::Input("ua and capacitance ranges must be positive".into()));
        }
        if self.solar_aperture.low < 0.0 || self.dhw_daily_kwh.low < 0.0 {
            return Err(Error::Input("solar_aperture and dhw ranges must be non-negative".into()));
        }
        if self.fixed.heat_headroom_k <= 0.0 {
            return Err(Error::Input("heat_headroom_k must be positive".into()));
        }
        self.build(self.ua.low, self.capacitance.low, self.setpoint_day.low, self.setpoint_night.low, 0.0, 0.0)
            .validate()
    }

    fn build(&self, ua: f64, capacitance: f64, sp_day: f64, sp_night: f64, aperture: f64, dhw: f64) -> BuildingParams {
        BuildingParams {
            ua,
            capacitance,
            floor_area: self.fixed.floor_area,
            setpoint_day: sp_day,
            setpoint_night: sp_night,
            night_start: self.fixed.night_start,
            night_end: self.fixed.night_end,
            solar_aperture: aperture,
            dhw_daily_kwh: dhw,
            max_heat_power: ua * self.fixed.heat_headroom_k / 1000.0,
        }
    }

    /// Whether `p` lies inside the ranges (DHW is excluded: bills may move it anywhere).
    pub fn contains(&self, p: &BuildingParams) -> bool {
        self.ua.contains(p.ua)
            && self.capacitance.contains(p.capacitance)
            && self.setpoint_day.contains(p.setpoint_day)
            && self.setpoint_night.contains(p.setpoint_night)
            && self.solar_aperture.contains(p.solar_aperture)
            && p.floor_area == self.fixed.floor_area
    }
}

/// `n` independent uniform draws per field; a longer list extends a shorter one with the same seed.
pub fn sample_params(ranges: &ParamRanges, n: usize, seed: u64) -> Result<Vec<BuildingParams>> {
    if n == 0 {
        return Err(Error::Input("n must be at least 1".into()));
    }
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let ua = ranges.ua.draw(&mut rng);
            let cap = ranges.capacitance.draw(&mut rng);
            let day = ranges.setpoint_day.draw(&mut rng);
            let night = ranges.setpoint_night.draw(&mut rng);
            let aperture = ranges.solar_aperture.draw(&mut rng);
            let dhw = ranges.dhw_daily_kwh.draw(&mut rng);
            ranges.build(ua, cap, day, night, aperture, dhw)
        })
        .collect())
}

/// Rescale `dhw_daily_kwh` so the simulated non-heating month matches the mean bill.
pub fn calibrate_dhw(monthly_bills_nonheating: &[f64], candidate: &BuildingParams) -> Result<BuildingParams> {
    if monthly_bills_nonheating.is_empty() {
        return Err(Error::Input("at least one non-heating bill is required".into()));
    }
    if monthly_bills_nonheating.iter().any(|b| !b.is_finite() || *b < 0.0) {
        return Err(Error::Input("bills must be finite and non-negative".into()));
    }
    let target = monthly_bills_nonheating.iter().sum::<f64>() / monthly_bills_nonheating.len() as f64;
    let simulated = simulated_month_dhw_kwh(candidate);
    let mut out = candidate.clone();
    if simulated == 0.0 {
        if target != 0.0 {
            return Err(Error::CalibrationInfeasible("candidate simulates no DHW but the bills are nonzero".into()));
        }
        return Ok(out);
    }
    if target != simulated {
        out.dhw_daily_kwh *= target / simulated;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub window: CalendarWindow,
    pub selected_params: BuildingParams,
    pub selected_index: usize,
    /// CV(RMSE) of the selected candidate on the window.
    pub calibration_error: f64,
    pub candidate_count: usize,
}

/// Index of the smallest finite error; ties go to the lowest index.
pub fn select_argmin(errors: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, e) in errors.iter().enumerate() {
        if e.is_finite() && best.is_none_or(|b| *e < errors[b]) {
            best = Some(i);
        }
    }
    best
}

/// Checks the missing-data rule (at most one day of missing slots).
pub fn check_missing(series: &TimeSeries) -> Result<()> {
    check_missing_with(series, MAX_MISSING_SLOTS)
}

pub fn check_missing_with(series: &TimeSeries, max_missing_slots: usize) -> Result<()> {
    let missing = series.missing_count();
    if missing > max_missing_slots {
        return Err(Error::MissingData { missing_slots: missing });
    }
    Ok(())
}

/// Surrogate load from the start of the weather record through `until` (exclusive end of the last window).
fn simulate_through(params: &BuildingParams, weather: &WeatherSeries, days: u32) -> Result<TimeSeries> {
    let span = CalendarWindow::new(weather.temperature.start().date_naive(), days)?;
    let w = WeatherSeries::new(weather.temperature.slice(&span)?, weather.ghi.slice(&span)?)?;
    simulate_load(params, &w)
}

/// Days from the weather start through the end of the latest window.
fn horizon_days(weather: &WeatherSeries, windows: &[CalendarWindow]) -> Result<u32> {
    let first = weather.temperature.start().date_naive();
    let last = windows.iter().map(|w| w.last_date()).max().ok_or_else(|| Error::Input("no windows".into()))?;
    let days = (last - first).num_days() + 1;
    if days <= 0 || days as usize * HOURS_PER_DAY > weather.len() {
        return Err(Error::Range("windows fall outside the weather record".into()));
    }
    Ok(days as u32)
}

/// Simulates a parameter set from the weather start (the record before the window acts as warm-up)
/// and returns the load over `window`.
pub fn simulate_window(params: &BuildingParams, weather: &WeatherSeries, window: &CalendarWindow) -> Result<TimeSeries> {
    let days = horizon_days(weather, std::slice::from_ref(window))?;
    simulate_through(params, weather, days)?.slice(window)
}

/// Runs stage one and two over an explicit candidate list for several windows at once.
///
/// Each candidate is simulated once over the whole horizon; windows failing the
/// missing-data rule get an error entry.
pub fn calibrate_candidates(
    measured: &TimeSeries,
    weather: &WeatherSeries,
    windows: &[CalendarWindow],
    candidates: &[BuildingParams],
    bills: &[f64],
) -> Result<Vec<Result<CalibrationResult>>> {
    calibrate_candidates_with(measured, weather, windows, candidates, bills, MAX_MISSING_SLOTS)
}

pub fn calibrate_candidates_with(
    measured: &TimeSeries,
    weather: &WeatherSeries,
    windows: &[CalendarWindow],
    candidates: &[BuildingParams],
    bills: &[f64],
    max_missing_slots: usize,
) -> Result<Vec<Result<CalibrationResult>>> {
    if candidates.is_empty() {
        return Err(Error::Input("empty candidate list".into()));
    }
    if measured.start() != weather.temperature.start() {
        return Err(Error::Input("measured load and weather must start together".into()));
    }
    let days = horizon_days(weather, windows)?;
    let measured_windows: Vec<Result<TimeSeries>> = windows
        .iter()
        .map(|w| {
            let m = measured.slice(w)?;
            check_missing_with(&m, max_missing_slots)?;
            Ok(m)
        })
        .collect();

    let adjusted: Vec<BuildingParams> =
        candidates.iter().map(|c| calibrate_dhw(bills, c)).collect::<Result<_>>()?;

    // errors[candidate][window]; collected in index order so the reduction below is deterministic
    let errors: Vec<Vec<f64>> = adjusted
        .par_iter()
        .map(|p| -> Result<Vec<f64>> {
            let sim = simulate_through(p, weather, days)?;
            windows
                .iter()
                .zip(&measured_windows)
                .map(|(w, m)| match m {
                    Ok(m) => Ok(cvrmse(m, &sim.slice(w)?).unwrap_or(f64::INFINITY)),
                    Err(_) => Ok(f64::INFINITY),
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    Ok(windows
        .iter()
        .enumerate()
        .zip(measured_windows)
        .map(|((k, w), m)| {
            let m = m?;
            if m.present().sum::<f64>() <= 0.0 {
                return Err(Error::UndefinedMetric("measured load has no positive mean".into()));
            }
            let column: Vec<f64> = errors.iter().map(|e| e[k]).collect();
            let best = select_argmin(&column)
                .ok_or_else(|| Error::CalibrationInfeasible("no candidate produced a finite error".into()))?;
            Ok(CalibrationResult {
                window: *w,
                selected_params: adjusted[best].clone(),
                selected_index: best,
                calibration_error: column[best],
                candidate_count: candidates.len(),
            })
        })
        .collect())
}

/// Calibrates every window of one substation against `n` candidates drawn with `seed`.
pub fn calibrate_windows(
    measured: &TimeSeries,
    weather: &WeatherSeries,
    windows: &[CalendarWindow],
    ranges: &ParamRanges,
    bills: &[f64],
    n: usize,
    seed: u64,
) -> Result<Vec<Result<CalibrationResult>>> {
    let candidates = sample_params(ranges, n, seed)?;
    calibrate_candidates(measured, weather, windows, &candidates, bills)
}

pub fn calibrate_window(
    measured: &TimeSeries,
    weather: &WeatherSeries,
    window: &CalendarWindow,
    ranges: &ParamRanges,
    bills: &[f64],
    n: usize,
    seed: u64,
) -> Result<CalibrationResult> {
    calibrate_windows(measured, weather, std::slice::from_ref(window), ranges, bills, n, seed)?
        .pop()
        .expect("one window in, one result out")
}
