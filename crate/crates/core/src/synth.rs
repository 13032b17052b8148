//! Synthetic district: weather, "true" buildings, noisy heat-meter readings,
//! and the single-node RC surrogate that plays the role of the UBEM.
//!
//! The generator and the surrogate share one stepping routine. The generator
//! switches on a few structural extras (temperature-dependent infiltration, a
//! second thermal mass node, occupancy-driven demand fluctuations, DHW day to
//! day variation) so that a calibrated surrogate keeps an irreducible error
//! whose size depends on the week's conditions.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use chrono::{Datelike, Duration, NaiveDate, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{HeatingSeason, TimeSeries, Unit, HOURS_PER_DAY};

/// Volumetric heat capacity of water, kWh/(m³·K).
pub const WATER_RHO_CP_KWH: f64 = 1.16;

const SECONDS_PER_HOUR: f64 = 3600.0;

/// Diurnal domestic hot water draw shape (relative weights per hour of day).
const DHW_SHAPE: [f64; 24] = [
    0.5, 0.3, 0.2, 0.2, 0.3, 0.8, 2.0, 3.0, 2.4, 1.5, 1.1, 1.0, //
    1.2, 1.0, 0.8, 0.8, 1.0, 1.6, 2.2, 2.6, 2.2, 1.6, 1.0, 0.7,
];

/// Fraction of the daily DHW energy drawn in each hour of the day; sums to 1.
pub fn dhw_profile() -> [f64; 24] {
    let total: f64 = DHW_SHAPE.iter().sum();
    DHW_SHAPE.map(|w| w / total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherSeries {
    pub temperature: TimeSeries,
    pub ghi: TimeSeries,
}

impl WeatherSeries {
    pub fn new(temperature: TimeSeries, ghi: TimeSeries) -> Result<Self> {
        if temperature.start() != ghi.start() || temperature.len() != ghi.len() {
            return Err(Error::Input("temperature and GHI series are not aligned".into()));
        }
        if temperature.unit() != Unit::DegC || ghi.unit() != Unit::WPerM2 {
            return Err(Error::Input("weather series carry the wrong units".into()));
        }
        if ghi.present().any(|g| g < 0.0) {
            return Err(Error::Input("negative GHI".into()));
        }
        Ok(Self { temperature, ghi })
    }

    pub fn len(&self) -> usize {
        self.temperature.len()
    }

    pub fn is_empty(&self) -> bool {
        self.temperature.is_empty()
    }

    /// Dense `(temperature, ghi)` pairs; fails on missing or non-finite values.
    fn dense(&self) -> Result<Vec<(f64, f64)>> {
        self.temperature
            .values()
            .iter()
            .zip(self.ghi.values())
            .enumerate()
            .map(|(i, (t, g))| match (t, g) {
                (Some(t), Some(g)) if t.is_finite() && g.is_finite() => Ok((*t, *g)),
                _ => Err(Error::Input(format!("weather value at slot {i} is missing or non-finite"))),
            })
            .collect()
    }
}

/// Synthetic climate; defaults resemble a mild oceanic/continental site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClimateConfig {
    pub start_date: NaiveDate,
    pub annual_mean_c: f64,
    pub seasonal_amplitude_c: f64,
    pub diurnal_amplitude_c: f64,
    /// Day of year with the coldest seasonal mean.
    pub coldest_day: f64,
    /// Hourly AR(1) persistence of the synoptic temperature anomaly.
    pub anomaly_phi: f64,
    /// Stationary standard deviation of the anomaly, degC.
    pub anomaly_sd_c: f64,
    pub peak_ghi_winter: f64,
    pub peak_ghi_summer: f64,
    /// Lower bound of the daily clear-sky fraction.
    pub cloud_min: f64,
}

impl Default for ClimateConfig {
    fn default() -> Self {
        Self {
            start_date: NaiveDate::from_ymd_opt(2021, 1, 4).expect("valid date"),
            annual_mean_c: 13.5,
            seasonal_amplitude_c: 8.0,
            diurnal_amplitude_c: 4.0,
            coldest_day: 15.0,
            anomaly_phi: 0.985,
            anomaly_sd_c: 3.0,
            peak_ghi_winter: 350.0,
            peak_ghi_summer: 850.0,
            cloud_min: 0.2,
        }
    }
}

/// Weather for `days` days starting at the default climate's start date.
pub fn generate_weather(seed: u64, days: u32) -> Result<WeatherSeries> {
    generate_weather_with(seed, days, &ClimateConfig::default())
}

pub fn generate_weather_with(seed: u64, days: u32, climate: &ClimateConfig) -> Result<WeatherSeries> {
    if days < 7 {
        return Err(Error::Input(format!("weather needs at least 7 days, got {days}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x5745_4154);
    let start = climate.start_date.and_hms_opt(0, 0, 0).expect("midnight").and_utc();
    let n = days as usize * HOURS_PER_DAY;
    let innov_sd = climate.anomaly_sd_c * (1.0 - climate.anomaly_phi.powi(2)).sqrt();
    let mut anomaly = climate.anomaly_sd_c * rng.sample::<f64, _>(StandardNormal);
    let mut temps = Vec::with_capacity(n);
    let mut ghis = Vec::with_capacity(n);
    let mut cloud = 1.0;
    for i in 0..n {
        let t = start + Duration::hours(i as i64);
        let hour = t.hour() as f64;
        let doy = t.ordinal() as f64;
        if t.hour() == 0 {
            cloud = rng.random_range(climate.cloud_min..=1.0);
        }
        let seasonal = -climate.seasonal_amplitude_c * (2.0 * PI * (doy - climate.coldest_day) / 365.25).cos();
        // minimum around 04:00, maximum around 16:00
        let diurnal = -climate.diurnal_amplitude_c * (2.0 * PI * (hour - 4.0) / 24.0).cos();
        temps.push(climate.annual_mean_c + seasonal + diurnal + anomaly);
        anomaly = climate.anomaly_phi * anomaly + innov_sd * rng.sample::<f64, _>(StandardNormal);

        let summerness = (2.0 * PI * (doy - 172.0) / 365.25).cos();
        let day_length = 12.0 + 4.0 * summerness;
        let sunrise = 12.0 - day_length / 2.0;
        let peak = 0.5 * (climate.peak_ghi_winter + climate.peak_ghi_summer)
            + 0.5 * (climate.peak_ghi_summer - climate.peak_ghi_winter) * summerness;
        let phase = (hour + 0.5 - sunrise) / day_length;
        let ghi = if (0.0..=1.0).contains(&phase) { peak * cloud * (PI * phase).sin().max(0.0) } else { 0.0 };
        ghis.push(ghi);
    }
    WeatherSeries::new(
        TimeSeries::from_dense(start, temps, Unit::DegC)?,
        TimeSeries::from_dense(start, ghis, Unit::WPerM2)?,
    )
}

/// Calibratable building description shared by the generator and the surrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingParams {
    /// Envelope heat-loss coefficient, W/K.
    pub ua: f64,
    /// Lumped thermal capacitance, J/K.
    pub capacitance: f64,
    pub floor_area: f64,
    pub setpoint_day: f64,
    pub setpoint_night: f64,
    pub night_start: u32,
    pub night_end: u32,
    /// Effective solar aperture, m².
    pub solar_aperture: f64,
    pub dhw_daily_kwh: f64,
    pub max_heat_power: f64,
}

impl BuildingParams {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.ua > 0.0, "ua must be positive"),
            (self.capacitance > 0.0, "capacitance must be positive"),
            (self.floor_area > 0.0, "floor_area must be positive"),
            (self.solar_aperture >= 0.0, "solar_aperture must be non-negative"),
            (self.dhw_daily_kwh >= 0.0, "dhw_daily_kwh must be non-negative"),
            (self.max_heat_power > 0.0, "max_heat_power must be positive"),
            ((5.0..=30.0).contains(&self.setpoint_day), "setpoint_day outside [5, 30] degC"),
            ((5.0..=30.0).contains(&self.setpoint_night), "setpoint_night outside [5, 30] degC"),
            (self.night_start < 24 && self.night_end < 24, "night hours must be in 0..24"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::Input((*msg).into())),
            None => Ok(()),
        }
    }

    pub fn setpoint(&self, hour: u32) -> f64 {
        let night = match self.night_start.cmp(&self.night_end) {
            std::cmp::Ordering::Equal => false,
            std::cmp::Ordering::Less => hour >= self.night_start && hour < self.night_end,
            std::cmp::Ordering::Greater => hour >= self.night_start || hour < self.night_end,
        };
        if night {
            self.setpoint_night
        } else {
            self.setpoint_day
        }
    }
}

/// Structural differences between the real buildings and the surrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthExtras {
    /// Relative increase of UA per kelvin of outdoor temperature below `infiltration_ref_c`.
    pub infiltration_coeff: f64,
    pub infiltration_ref_c: f64,
    /// Share of the capacitance sitting in a slow mass node.
    pub mass_fraction: f64,
    /// Air-to-mass conductance as a multiple of UA.
    pub mass_coupling: f64,
    /// Standard deviation of occupancy-driven demand fluctuations, W per m² floor.
    pub occupancy_wm2: f64,
    /// Log-sd of the week-to-week multiplier on `occupancy_wm2`.
    pub occupancy_weekly_sd: f64,
    /// Hourly AR(1) persistence of the occupancy fluctuation.
    pub occupancy_phi: f64,
    /// Relative day-to-day standard deviation of DHW use.
    pub dhw_daily_sd: f64,
}

impl TruthExtras {
    /// No extras: the generator reproduces the surrogate exactly.
    pub fn none() -> Self {
        Self {
            infiltration_coeff: 0.0,
            infiltration_ref_c: 15.0,
            mass_fraction: 0.0,
            mass_coupling: 0.0,
            occupancy_wm2: 0.0,
            occupancy_weekly_sd: 0.0,
            occupancy_phi: 0.0,
            dhw_daily_sd: 0.0,
        }
    }
}

/// Per-hour internals of an RC simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    /// Indoor air temperature at the start of each step.
    pub indoor_temp: Vec<f64>,
    pub space_heat_kw: Vec<f64>,
    pub solar_gain_kw: Vec<f64>,
    pub dhw_kw: Vec<f64>,
}

impl SimulationTrace {
    pub fn load(&self) -> Vec<f64> {
        self.space_heat_kw.iter().zip(&self.dhw_kw).map(|(s, d)| s + d).collect()
    }
}

/// Hourly surrogate heat load (space heating + DHW), kW.
///
/// Single-node RC model, explicit hourly step. The heater delivers what is
/// needed to bring the air node to the current set point at the end of the
/// hour, clamped to `[0, max_heat_power]`.
pub fn simulate_load(params: &BuildingParams, weather: &WeatherSeries) -> Result<TimeSeries> {
    let trace = simulate_trace(params, weather)?;
    TimeSeries::from_dense(weather.temperature.start(), trace.load(), Unit::Kw)
}

pub fn simulate_trace(params: &BuildingParams, weather: &WeatherSeries) -> Result<SimulationTrace> {
    run_rc(params, &TruthExtras::none(), weather, None)
}

struct Stochastic<'a> {
    rng: &'a mut ChaCha8Rng,
    week_multipliers: Vec<f64>,
    dhw_day_factors: Vec<f64>,
}

fn run_rc(
    params: &BuildingParams,
    extras: &TruthExtras,
    weather: &WeatherSeries,
    mut noise: Option<Stochastic<'_>>,
) -> Result<SimulationTrace> {
    if weather.len() < HOURS_PER_DAY {
        return Err(Error::Input("weather must cover at least 24 hours".into()));
    }
    params.validate()?;
    let dense = weather.dense()?;
    let profile = dhw_profile();
    let start = weather.temperature.start();
    let first_hour = start.hour();

    let c_air = params.capacitance * (1.0 - extras.mass_fraction);
    let c_mass = params.capacitance * extras.mass_fraction;
    let h_mass = params.ua * extras.mass_coupling;
    let max_w = params.max_heat_power * 1000.0;

    let n = dense.len();
    let mut trace = SimulationTrace {
        indoor_temp: Vec::with_capacity(n),
        space_heat_kw: Vec::with_capacity(n),
        solar_gain_kw: Vec::with_capacity(n),
        dhw_kw: Vec::with_capacity(n),
    };
    let mut t_in = params.setpoint(first_hour);
    let mut t_mass = t_in;
    let mut occupancy = 0.0;
    for (i, &(t_out, ghi)) in dense.iter().enumerate() {
        let hour = (first_hour as usize + i) % HOURS_PER_DAY;
        let t_set = params.setpoint(hour as u32);
        let ua_eff = params.ua * (1.0 + extras.infiltration_coeff * (extras.infiltration_ref_c - t_out).max(0.0));
        let loss = ua_eff * (t_out - t_in);
        let q_solar = params.solar_aperture * ghi;
        let q_mass = h_mass * (t_mass - t_in);
        let mut dhw_factor = 1.0;
        let mut q_occ = 0.0;
        if let Some(st) = noise.as_mut() {
            let z: f64 = st.rng.sample(StandardNormal);
            occupancy = extras.occupancy_phi * occupancy + (1.0 - extras.occupancy_phi.powi(2)).sqrt() * z;
            q_occ = params.floor_area * extras.occupancy_wm2 * st.week_multipliers[i / (7 * HOURS_PER_DAY)] * occupancy;
            dhw_factor = st.dhw_day_factors[i / HOURS_PER_DAY];
        }
        let q_req = c_air * (t_set - t_in) / SECONDS_PER_HOUR - loss - q_solar - q_mass + q_occ;
        let q_heat = q_req.clamp(0.0, max_w);
        trace.indoor_temp.push(t_in);
        trace.space_heat_kw.push(q_heat / 1000.0);
        trace.solar_gain_kw.push(q_solar / 1000.0);
        trace.dhw_kw.push(params.dhw_daily_kwh * dhw_factor * profile[hour]);
        t_in += SECONDS_PER_HOUR / c_air * (loss + q_solar + q_mass + q_heat - q_occ);
        if c_mass > 0.0 {
            t_mass -= SECONDS_PER_HOUR / c_mass * q_mass;
        }
    }
    Ok(trace)
}

/// Simulated DHW energy over a nominal 30-day non-heating month, kWh.
pub fn simulated_month_dhw_kwh(params: &BuildingParams) -> f64 {
    let daily: f64 = dhw_profile().iter().map(|w| params.dhw_daily_kwh * w).sum();
    daily * NOMINAL_MONTH_DAYS as f64
}

pub const NOMINAL_MONTH_DAYS: u32 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    /// Power register frozen while flow and temperatures keep reporting.
    Stuck,
    /// Single-hour meter glitch.
    Spike,
    /// Every channel missing.
    Dropout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anomaly {
    pub kind: AnomalyKind,
    pub start: usize,
    pub len: usize,
}

impl Anomaly {
    pub fn covers(&self, i: usize) -> bool {
        i >= self.start && i < self.start + self.len
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevel {
    pub multiplicative: f64,
    pub additive_kw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Substation {
    pub id: String,
    pub params: BuildingParams,
    pub extras: TruthExtras,
    pub noise: NoiseLevel,
    pub anomalies: Vec<Anomaly>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistrictScenario {
    pub seed: u64,
    pub substations: Vec<Substation>,
    pub weather: WeatherSeries,
    pub seasons: Vec<HeatingSeason>,
    /// Spike height as a multiple of the local 7-day median true load (at least 3 × the local maximum).
    pub spike_factor: f64,
}

/// Knobs for [`DistrictScenario::generate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistrictConfig {
    pub substations: usize,
    pub days: u32,
    pub climate: ClimateConfig,
    pub noise_multiplicative: f64,
    pub noise_additive_kw: f64,
    pub spikes_per_30d: f64,
    pub stuck_per_30d: f64,
    pub dropouts_per_30d: f64,
    pub spike_factor: f64,
    /// Switches the structural extras on; off makes the generator equal the surrogate.
    pub structural_error: bool,
    pub occupancy_wm2_range: (f64, f64),
    pub occupancy_weekly_sd: f64,
    pub infiltration_coeff_range: (f64, f64),
    pub mass_fraction: f64,
    pub mass_coupling: f64,
    pub dhw_daily_sd: f64,
    pub bill_noise: f64,
}

impl Default for DistrictConfig {
    fn default() -> Self {
        Self {
            substations: 15,
            days: 70,
            climate: ClimateConfig::default(),
            noise_multiplicative: 0.02,
            noise_additive_kw: 0.2,
            spikes_per_30d: 1.5,
            stuck_per_30d: 0.5,
            dropouts_per_30d: 0.7,
            spike_factor: 8.0,
            structural_error: true,
            occupancy_wm2_range: (2.0, 9.0),
            occupancy_weekly_sd: 0.5,
            infiltration_coeff_range: (0.01, 0.04),
            mass_fraction: 0.5,
            mass_coupling: 1.5,
            dhw_daily_sd: 0.1,
            bill_noise: 0.03,
        }
    }
}

impl DistrictConfig {
    pub fn validate(&self) -> Result<()> {
        if self.substations == 0 {
            return Err(Error::Input("at least one substation is required".into()));
        }
        if self.days < 7 {
            return Err(Error::Input("scenario needs at least 7 days".into()));
        }
        if !(0.0..1.0).contains(&self.mass_fraction) {
            return Err(Error::Input("mass_fraction must lie in [0, 1)".into()));
        }
        let rates = [self.spikes_per_30d, self.stuck_per_30d, self.dropouts_per_30d];
        if rates.iter().any(|r| *r < 0.0 || !r.is_finite()) {
            return Err(Error::Input("anomaly rates must be finite and non-negative".into()));
        }
        if self.noise_multiplicative < 0.0 || self.noise_additive_kw < 0.0 {
            return Err(Error::Input("noise levels must be non-negative".into()));
        }
        Ok(())
    }
}

/// Stable 64-bit mix of the scenario seed with a substation id.
pub fn substation_seed(seed: u64, id: &str) -> u64 {
    // FNV-1a over the id, then splitmix64 finalisation
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn substation_rng(seed: u64, id: &str, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(substation_seed(seed, id));
    rng.set_stream(stream);
    rng
}

const STREAM_PARAMS: u64 = 1;
const STREAM_TRUTH: u64 = 2;
const STREAM_MEASURE: u64 = 3;
const STREAM_ANOMALY: u64 = 4;
const STREAM_BILLS: u64 = 5;

impl DistrictScenario {
    pub fn generate(seed: u64, config: &DistrictConfig) -> Result<Self> {
        config.validate()?;
        let weather = generate_weather_with(seed, config.days, &config.climate)?;
        let n_slots = weather.len();
        let substations = (1..=config.substations)
            .map(|k| {
                let id = format!("S{k:02}");
                let mut rng = substation_rng(seed, &id, STREAM_PARAMS);
                let floor_area = rng.random_range(1500.0..6000.0);
                let ua = floor_area * rng.random_range(0.8..2.2);
                let setpoint_day = rng.random_range(19.0..22.0);
                let params = BuildingParams {
                    ua,
                    capacitance: floor_area * rng.random_range(1.2e5..2.5e5),
                    floor_area,
                    setpoint_day,
                    setpoint_night: setpoint_day - rng.random_range(1.0..3.0),
                    night_start: 22,
                    night_end: 6,
                    solar_aperture: floor_area * rng.random_range(0.01..0.05),
                    dhw_daily_kwh: floor_area * rng.random_range(0.04..0.08),
                    max_heat_power: ua * 60.0 / 1000.0,
                };
                let extras = if config.structural_error {
                    TruthExtras {
                        infiltration_coeff: rng.random_range(config.infiltration_coeff_range.0..=config.infiltration_coeff_range.1),
                        infiltration_ref_c: 15.0,
                        mass_fraction: config.mass_fraction,
                        mass_coupling: config.mass_coupling,
                        occupancy_wm2: rng.random_range(config.occupancy_wm2_range.0..=config.occupancy_wm2_range.1),
                        occupancy_weekly_sd: config.occupancy_weekly_sd,
                        occupancy_phi: 0.6,
                        dhw_daily_sd: config.dhw_daily_sd,
                    }
                } else {
                    TruthExtras::none()
                };
                let anomalies = plan_anomalies(&mut substation_rng(seed, &id, STREAM_ANOMALY), n_slots, config);
                Substation {
                    id,
                    params,
                    extras,
                    noise: NoiseLevel {
                        multiplicative: config.noise_multiplicative,
                        additive_kw: config.noise_additive_kw,
                    },
                    anomalies,
                }
            })
            .collect();
        let first = config.climate.start_date;
        let last = first + Duration::days(config.days as i64 - 1);
        Ok(Self {
            seed,
            substations,
            weather,
            seasons: HeatingSeason::default_seasons(first, last),
            spike_factor: config.spike_factor,
        })
    }

    pub fn substation(&self, id: &str) -> Option<&Substation> {
        self.substations.iter().find(|s| s.id == id)
    }

    pub fn first_date(&self) -> NaiveDate {
        self.weather.temperature.start().date_naive()
    }

    pub fn days(&self) -> u32 {
        (self.weather.len() / HOURS_PER_DAY) as u32
    }
}

fn plan_anomalies(rng: &mut ChaCha8Rng, n_slots: usize, config: &DistrictConfig) -> Vec<Anomaly> {
    let months = n_slots as f64 / (30.0 * HOURS_PER_DAY as f64);
    let mut out: Vec<Anomaly> = Vec::new();
    let mut plan = |kind: AnomalyKind, rate: f64, lens: (usize, usize), rng: &mut ChaCha8Rng| {
        let expected = rate * months;
        // whole part always, fractional part with matching probability
        let count = expected.floor() as usize + usize::from(rng.random::<f64>() < expected.fract());
        for _ in 0..count {
            for _attempt in 0..50 {
                let len = rng.random_range(lens.0..=lens.1);
                if len >= n_slots {
                    break;
                }
                let start = rng.random_range(0..n_slots - len);
                // keep a one-day buffer between anomalies
                let clear = out.iter().all(|a| {
                    start + len + HOURS_PER_DAY <= a.start || a.start + a.len + HOURS_PER_DAY <= start
                });
                if clear {
                    out.push(Anomaly { kind, start, len });
                    break;
                }
            }
        }
    };
    plan(AnomalyKind::Dropout, config.dropouts_per_30d, (12, 48), rng);
    plan(AnomalyKind::Stuck, config.stuck_per_30d, (6, 24), rng);
    plan(AnomalyKind::Spike, config.spikes_per_30d, (1, 1), rng);
    out.sort_by_key(|a| a.start);
    out
}

/// Heat-meter channels of one substation.
#[derive(Debug, Clone, PartialEq)]
pub struct MeterReadings {
    pub power: TimeSeries,
    pub flow: TimeSeries,
    pub supply_temp: TimeSeries,
    pub return_temp: TimeSeries,
}

/// Supply temperature from a simple heating curve, degC.
fn supply_temperature(t_out: f64) -> f64 {
    (55.0 + (15.0 - t_out)).clamp(55.0, 80.0)
}

fn hydraulics(power_kw: f64, t_out: f64, max_kw: f64) -> (f64, f64, f64) {
    let supply = supply_temperature(t_out);
    let delta = 10.0 + 20.0 * (power_kw / max_kw).clamp(0.0, 1.0);
    let ret = supply - delta;
    let flow = power_kw / (WATER_RHO_CP_KWH * (supply - ret));
    (flow, supply, ret)
}

/// The generator's noise-free "true" load for one substation.
pub fn simulate_truth(sub: &Substation, weather: &WeatherSeries, seed: u64) -> Result<TimeSeries> {
    let mut rng = substation_rng(seed, &sub.id, STREAM_TRUTH);
    let n = weather.len();
    let weeks = n.div_ceil(7 * HOURS_PER_DAY);
    let sd = sub.extras.occupancy_weekly_sd;
    let week_multipliers =
        (0..weeks).map(|_| (sd * rng.sample::<f64, _>(StandardNormal) - 0.5 * sd * sd).exp()).collect();
    let dhw_day_factors = (0..n.div_ceil(HOURS_PER_DAY))
        .map(|_| (1.0 + sub.extras.dhw_daily_sd * rng.sample::<f64, _>(StandardNormal)).max(0.0))
        .collect();
    let trace = run_rc(
        &sub.params,
        &sub.extras,
        weather,
        Some(Stochastic { rng: &mut rng, week_multipliers, dhw_day_factors }),
    )?;
    TimeSeries::from_dense(weather.temperature.start(), trace.load(), Unit::Kw)
}

/// Measured heat-meter readings for every substation, keyed by id.
pub fn synthesize_measurements(scenario: &DistrictScenario) -> Result<BTreeMap<String, MeterReadings>> {
    scenario
        .substations
        .par_iter()
        .map(|sub| Ok((sub.id.clone(), measure_substation(scenario, sub)?)))
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().collect())
}

fn measure_substation(scenario: &DistrictScenario, sub: &Substation) -> Result<MeterReadings> {
    let weather = &scenario.weather;
    let truth = simulate_truth(sub, weather, scenario.seed)?;
    let truth: Vec<f64> = truth.present().collect();
    let temps: Vec<f64> = weather.temperature.present().collect();
    let mut rng = substation_rng(scenario.seed, &sub.id, STREAM_MEASURE);
    let n = truth.len();

    let mut power: Vec<Option<f64>> = truth
        .iter()
        .map(|p| {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            let noisy = p * (1.0 + sub.noise.multiplicative * z1) + sub.noise.additive_kw * z2;
            Some(if sub.noise.multiplicative == 0.0 && sub.noise.additive_kw == 0.0 { *p } else { noisy.max(0.0) })
        })
        .collect();

    let max_kw = sub.params.max_heat_power;
    let mut flow = Vec::with_capacity(n);
    let mut supply = Vec::with_capacity(n);
    let mut ret = Vec::with_capacity(n);
    for (p, t) in power.iter().zip(&temps) {
        let (f, s, r) = hydraulics(p.expect("dense before anomalies"), *t, max_kw);
        flow.push(Some(f));
        supply.push(Some(s));
        ret.push(Some(r));
    }

    for a in &sub.anomalies {
        let range = a.start..(a.start + a.len).min(n);
        match a.kind {
            AnomalyKind::Dropout => {
                for i in range {
                    power[i] = None;
                    flow[i] = None;
                    supply[i] = None;
                    ret[i] = None;
                }
            }
            AnomalyKind::Stuck => {
                let frozen = if a.start > 0 { power[a.start - 1] } else { power[a.start] };
                for i in range {
                    power[i] = frozen;
                }
            }
            AnomalyKind::Spike => {
                let lo = a.start.saturating_sub(84);
                let hi = (a.start + 84).min(n);
                let value = spike_value(&truth[lo..hi], scenario.spike_factor);
                for i in range {
                    // the glitch sits in the energy integrator; flow follows it so the meter stays consistent
                    let (f, s, r) = hydraulics(value, temps[i], max_kw);
                    power[i] = Some(value);
                    flow[i] = Some(f);
                    supply[i] = Some(s);
                    ret[i] = Some(r);
                }
            }
        }
    }

    let start = weather.temperature.start();
    Ok(MeterReadings {
        power: TimeSeries::new(start, power, Unit::Kw)?,
        flow: TimeSeries::new(start, flow, Unit::M3PerH)?,
        supply_temp: TimeSeries::new(start, supply, Unit::DegC)?,
        return_temp: TimeSeries::new(start, ret, Unit::DegC)?,
    })
}

/// `factor` × the local median, raised to 3 × the local maximum when heating is
/// intermittent enough that the median alone would sit inside the normal load range.
fn spike_value(local: &[f64], factor: f64) -> f64 {
    let mut v = local.to_vec();
    v.sort_by(f64::total_cmp);
    (factor * v[(v.len() - 1) / 2]).max(SPIKE_OVER_MAX * v[v.len() - 1])
}

const SPIKE_OVER_MAX: f64 = 3.0;

/// Monthly non-heating bills (kWh per nominal 30-day month) for every substation.
pub fn synthesize_bills(scenario: &DistrictScenario, months: usize, bill_noise: f64) -> BTreeMap<String, Vec<f64>> {
    scenario
        .substations
        .iter()
        .map(|sub| {
            let mut rng = substation_rng(scenario.seed, &sub.id, STREAM_BILLS);
            let base = simulated_month_dhw_kwh(&sub.params);
            let bills = (0..months)
                .map(|_| base * (1.0 + bill_noise * rng.sample::<f64, _>(StandardNormal)).max(0.0))
                .collect();
            (sub.id.clone(), bills)
        })
        .collect()
}
