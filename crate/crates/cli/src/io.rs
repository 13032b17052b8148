//! File contracts: measurement, weather, building, bill, mask, VE dataset, grid
//! and sweep CSVs, plus stamped JSON artifacts.
//!
//! Floats are written with `Display`, which is the shortest representation that
//! parses back to the same bits, so every reader inverts its writer exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use ubem_gp_core::cleaning::{CleaningMask, RejectReason};
use ubem_gp_core::evaluation::SweepResult;
use ubem_gp_core::features::FeatureVector;
use ubem_gp_core::grid::GridSurface;
use ubem_gp_core::series::{CalendarWindow, TimeSeries, Unit};
use ubem_gp_core::synth::{MeterReadings, WeatherSeries};
use ubem_gp_core::ve::{Provenance, VEDataset, VEPair, VESample};

use crate::error::{CliError, CliResult};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const MEASUREMENT_HEADER: [&str; 6] =
    ["substation_id", "timestamp", "heat_power_kw", "flow_m3h", "supply_temp_c", "return_temp_c"];
pub const WEATHER_HEADER: [&str; 3] = ["timestamp", "temp_c", "ghi_wm2"];
pub const BUILDINGS_HEADER: [&str; 2] = ["substation_id", "floor_area_m2"];
pub const BILLS_HEADER: [&str; 3] = ["substation_id", "month", "nonheating_kwh"];
pub const MASK_HEADER: [&str; 4] = ["substation_id", "timestamp", "keep", "reason"];
pub const VE_FIXED_COLUMNS: [&str; 6] = ["substation_id", "cal_start", "val_start", "season", "weight", "target_cvrmse"];
pub const GRID_HEADER: [&str; 7] = ["axis1", "axis2", "mean", "std", "in_domain", "density", "mean_backtransformed"];
pub const SWEEP_HEADER: [&str; 8] = ["split", "axis", "value", "seed", "n_test", "mse", "nlpd", "coverage95"];

/// Identity of the run that produced an artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub config_hash: String,
    pub seed: u64,
    pub tool_version: String,
}

impl Stamp {
    pub fn new(config_hash: String, seed: u64) -> Self {
        Self { config_hash, seed, tool_version: TOOL_VERSION.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub stamp: Stamp,
    pub data: T,
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    Ok(())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    ensure_parent(path)?;
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, stamp: &Stamp, data: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(&Stamped { stamp: stamp.clone(), data })
        .map_err(|e| CliError::format(path, e))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<Stamped<T>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::format(path, e))
}

/// Sidecar holding the stamp of a CSV artifact: `<file>.meta.json`.
pub fn meta_path(csv: &Path) -> PathBuf {
    let mut name = csv.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    csv.with_file_name(name)
}

pub fn write_meta<T: Serialize>(csv: &Path, stamp: &Stamp, data: &T) -> CliResult<()> {
    write_json(&meta_path(csv), stamp, data)
}

fn writer(path: &Path) -> CliResult<csv::Writer<fs::File>> {
    ensure_parent(path)?;
    csv::Writer::from_path(path).map_err(|e| CliError::format(path, e))
}

fn finish(path: &Path, mut w: csv::Writer<fs::File>) -> CliResult<()> {
    w.flush().map_err(|e| CliError::io(path, e))
}

fn put<I, S>(path: &Path, w: &mut csv::Writer<fs::File>, record: I) -> CliResult<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(record).map_err(|e| CliError::format(path, e))
}

/// Reads every record after checking the header.
fn records(path: &Path, header: &[&str]) -> CliResult<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::format(path, e))?;
    let got = r.headers().map_err(|e| CliError::format(path, e))?.clone();
    if !got.iter().eq(header.iter().copied()) {
        return Err(CliError::format(path, format!("expected header {}, found {}", header.join(","), got.iter().collect::<Vec<_>>().join(","))));
    }
    r.records().map(|rec| rec.map_err(|e| CliError::format(path, e))).collect()
}

pub fn fmt_ts(t: DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

pub fn parse_ts(path: &Path, s: &str) -> CliResult<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| CliError::format(path, format!("timestamp `{s}`: {e}")))
}

fn parse_date(path: &Path, s: &str) -> CliResult<NaiveDate> {
    s.parse().map_err(|e| CliError::format(path, format!("date `{s}`: {e}")))
}

fn parse_f64(path: &Path, s: &str) -> CliResult<f64> {
    s.parse().map_err(|e| CliError::format(path, format!("number `{s}`: {e}")))
}

fn parse_opt(path: &Path, s: &str) -> CliResult<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_f64(path, s).map(Some)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Checks the timestamps form an hourly sequence and returns the start.
fn hourly_start(path: &Path, stamps: &[DateTime<Utc>]) -> CliResult<DateTime<Utc>> {
    let first = *stamps.first().ok_or_else(|| CliError::format(path, "no data rows"))?;
    for (i, t) in stamps.iter().enumerate() {
        if *t != first + chrono::Duration::hours(i as i64) {
            return Err(CliError::format(path, format!("row {} is not hourly: {}", i + 1, fmt_ts(*t))));
        }
    }
    Ok(first)
}

fn field<'a>(rec: &'a csv::StringRecord, i: usize) -> &'a str {
    rec.get(i).unwrap_or("")
}

pub fn write_measurements(path: &Path, id: &str, m: &MeterReadings) -> CliResult<()> {
    let mut w = writer(path)?;
    put(path, &mut w, MEASUREMENT_HEADER)?;
    for i in 0..m.power.len() {
        put(
            path,
            &mut w,
            [
                id.to_string(),
                fmt_ts(m.power.timestamp(i)),
                fmt_opt(m.power.get(i)),
                fmt_opt(m.flow.get(i)),
                fmt_opt(m.supply_temp.get(i)),
                fmt_opt(m.return_temp.get(i)),
            ],
        )?;
    }
    finish(path, w)
}

pub fn read_measurements(path: &Path) -> CliResult<(String, MeterReadings)> {
    let recs = records(path, &MEASUREMENT_HEADER)?;
    let id = recs.first().map(|r| field(r, 0).to_string()).ok_or_else(|| CliError::format(path, "no data rows"))?;
    let mut stamps = Vec::with_capacity(recs.len());
    let mut cols: [Vec<Option<f64>>; 4] = Default::default();
    for rec in &recs {
        if field(rec, 0) != id {
            return Err(CliError::format(path, format!("mixed substation ids `{id}` and `{}`", field(rec, 0))));
        }
        stamps.push(parse_ts(path, field(rec, 1))?);
        for (k, col) in cols.iter_mut().enumerate() {
            col.push(parse_opt(path, field(rec, k + 2))?);
        }
    }
    let start = hourly_start(path, &stamps)?;
    let [power, flow, supply, ret] = cols;
    Ok((
        id,
        MeterReadings {
            power: TimeSeries::new(start, power, Unit::Kw)?,
            flow: TimeSeries::new(start, flow, Unit::M3PerH)?,
            supply_temp: TimeSeries::new(start, supply, Unit::DegC)?,
            return_temp: TimeSeries::new(start, ret, Unit::DegC)?,
        },
    ))
}

pub fn write_weather(path: &Path, w: &WeatherSeries) -> CliResult<()> {
    let mut out = writer(path)?;
    put(path, &mut out, WEATHER_HEADER)?;
    for i in 0..w.len() {
        put(path, &mut out, [fmt_ts(w.temperature.timestamp(i)), fmt_opt(w.temperature.get(i)), fmt_opt(w.ghi.get(i))])?;
    }
    finish(path, out)
}

pub fn read_weather(path: &Path) -> CliResult<WeatherSeries> {
    let recs = records(path, &WEATHER_HEADER)?;
    let mut stamps = Vec::with_capacity(recs.len());
    let (mut temp, mut ghi) = (Vec::new(), Vec::new());
    for rec in &recs {
        stamps.push(parse_ts(path, field(rec, 0))?);
        temp.push(parse_opt(path, field(rec, 1))?);
        ghi.push(parse_opt(path, field(rec, 2))?);
    }
    let start = hourly_start(path, &stamps)?;
    Ok(WeatherSeries::new(TimeSeries::new(start, temp, Unit::DegC)?, TimeSeries::new(start, ghi, Unit::WPerM2)?)?)
}

pub fn write_buildings(path: &Path, floor_areas: &BTreeMap<String, f64>) -> CliResult<()> {
    let mut w = writer(path)?;
    put(path, &mut w, BUILDINGS_HEADER)?;
    for (id, area) in floor_areas {
        put(path, &mut w, [id.clone(), area.to_string()])?;
    }
    finish(path, w)
}

pub fn read_buildings(path: &Path) -> CliResult<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for rec in records(path, &BUILDINGS_HEADER)? {
        let area = parse_f64(path, field(&rec, 1))?;
        if !(area > 0.0 && area.is_finite()) {
            return Err(CliError::format(path, format!("floor area of {} must be positive", field(&rec, 0))));
        }
        if out.insert(field(&rec, 0).to_string(), area).is_some() {
            return Err(CliError::format(path, format!("duplicate substation {}", field(&rec, 0))));
        }
    }
    Ok(out)
}

pub fn write_bills(path: &Path, bills: &BTreeMap<String, Vec<f64>>) -> CliResult<()> {
    let mut w = writer(path)?;
    put(path, &mut w, BILLS_HEADER)?;
    for (id, months) in bills {
        for (m, kwh) in months.iter().enumerate() {
            put(path, &mut w, [id.clone(), (m + 1).to_string(), kwh.to_string()])?;
        }
    }
    finish(path, w)
}

pub fn read_bills(path: &Path) -> CliResult<BTreeMap<String, Vec<f64>>> {
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for rec in records(path, &BILLS_HEADER)? {
        let id = field(&rec, 0).to_string();
        let month: usize = field(&rec, 1).parse().map_err(|e| CliError::format(path, format!("month: {e}")))?;
        let list = out.entry(id.clone()).or_default();
        if month != list.len() + 1 {
            return Err(CliError::format(path, format!("bills of {id} must list months 1, 2, ... in order")));
        }
        list.push(parse_f64(path, field(&rec, 2))?);
    }
    Ok(out)
}

pub fn write_mask(path: &Path, id: &str, start: DateTime<Utc>, mask: &CleaningMask) -> CliResult<()> {
    let mut w = writer(path)?;
    put(path, &mut w, MASK_HEADER)?;
    for i in 0..mask.len() {
        let t = start + chrono::Duration::hours(i as i64);
        let reason = mask.reason(i).map(|r| r.as_str()).unwrap_or("");
        put(path, &mut w, [id, &fmt_ts(t), if mask.keep(i) { "true" } else { "false" }, reason])?;
    }
    finish(path, w)
}

pub fn read_mask(path: &Path) -> CliResult<(String, DateTime<Utc>, CleaningMask)> {
    let recs = records(path, &MASK_HEADER)?;
    let id = recs.first().map(|r| field(r, 0).to_string()).ok_or_else(|| CliError::format(path, "no data rows"))?;
    let mut stamps = Vec::with_capacity(recs.len());
    let mut reasons = Vec::with_capacity(recs.len());
    for rec in &recs {
        stamps.push(parse_ts(path, field(rec, 1))?);
        let reason = match (field(rec, 2), field(rec, 3)) {
            ("true", "") => None,
            ("false", r) => Some(RejectReason::parse(r).ok_or_else(|| CliError::format(path, format!("unknown reason `{r}`")))?),
            (k, r) => return Err(CliError::format(path, format!("inconsistent keep `{k}` / reason `{r}`"))),
        };
        reasons.push(reason);
    }
    let start = hourly_start(path, &stamps)?;
    Ok((id, start, CleaningMask::from_reasons(reasons)))
}

/// Dataset-level facts the CSV rows do not carry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub feature_names: Vec<String>,
    pub provenance: Provenance,
    pub window_days: u32,
    pub samples: usize,
}

pub fn write_dataset(path: &Path, stamp: &Stamp, ds: &VEDataset) -> CliResult<()> {
    let window_days = ds.samples.first().map(|s| s.pair.validation_window.length_days).unwrap_or(7);
    if ds.samples.iter().any(|s| {
        s.pair.validation_window.length_days != window_days || s.pair.calibration_window.length_days != window_days
    }) {
        return Err(CliError::format(path, "the dataset CSV needs one window length throughout"));
    }
    let mut w = writer(path)?;
    put(path, &mut w, VE_FIXED_COLUMNS.iter().map(|s| s.to_string()).chain(ds.feature_names.iter().cloned()))?;
    for s in &ds.samples {
        let fixed = [
            s.pair.substation_id.clone(),
            s.pair.calibration_window.start_date.to_string(),
            s.pair.validation_window.start_date.to_string(),
            s.pair.season.clone(),
            s.weight.to_string(),
            s.target_cvrmse.to_string(),
        ];
        put(path, &mut w, fixed.into_iter().chain(s.features.values().map(|v| v.to_string())))?;
    }
    finish(path, w)?;
    let meta = DatasetMeta {
        feature_names: ds.feature_names.clone(),
        provenance: ds.provenance.clone(),
        window_days,
        samples: ds.len(),
    };
    write_meta(path, stamp, &meta)
}

pub fn read_dataset(path: &Path) -> CliResult<(Stamp, VEDataset)> {
    let meta: Stamped<DatasetMeta> = read_json(&meta_path(path))?;
    let DatasetMeta { feature_names, provenance, window_days, samples: expected } = meta.data;
    let header: Vec<&str> = VE_FIXED_COLUMNS.iter().copied().chain(feature_names.iter().map(String::as_str)).collect();
    let recs = records(path, &header)?;
    if recs.len() != expected {
        return Err(CliError::format(path, format!("{} rows, sidecar says {expected}", recs.len())));
    }
    let mut samples = Vec::with_capacity(recs.len());
    for rec in &recs {
        let window = |s: &str| -> CliResult<CalendarWindow> { Ok(CalendarWindow::new(parse_date(path, s)?, window_days)?) };
        let features = feature_names
            .iter()
            .enumerate()
            .map(|(j, n)| Ok((n.clone(), parse_f64(path, field(rec, VE_FIXED_COLUMNS.len() + j))?)))
            .collect::<CliResult<Vec<_>>>()?;
        samples.push(VESample {
            pair: VEPair {
                substation_id: field(rec, 0).to_string(),
                calibration_window: window(field(rec, 1))?,
                validation_window: window(field(rec, 2))?,
                season: field(rec, 3).to_string(),
            },
            weight: parse_f64(path, field(rec, 4))?,
            target_cvrmse: parse_f64(path, field(rec, 5))?,
            features: FeatureVector::new(features)?,
        });
    }
    Ok((meta.stamp, VEDataset::new(samples, feature_names, provenance)?))
}

/// One CSV row per lattice cell; one-axis surfaces leave `axis2` empty.
/// Axis columns hold transformed-scaled coordinates; the raw labels live in the sidecar.
pub fn write_grid(path: &Path, stamp: &Stamp, surface: &GridSurface) -> CliResult<()> {
    let mut w = writer(path)?;
    put(path, &mut w, GRID_HEADER)?;
    for c in &surface.cells {
        put(
            path,
            &mut w,
            [
                c.coords[0].to_string(),
                c.coords.get(1).map(|v| v.to_string()).unwrap_or_default(),
                c.mean.to_string(),
                c.std.to_string(),
                c.in_domain.to_string(),
                c.density.to_string(),
                fmt_opt(c.mean_backtransformed),
            ],
        )?;
    }
    finish(path, w)?;
    let mut shell = surface.clone();
    shell.cells.clear();
    write_meta(path, stamp, &shell)
}

pub fn read_grid(path: &Path) -> CliResult<(Stamp, GridSurface)> {
    let meta: Stamped<GridSurface> = read_json(&meta_path(path))?;
    let mut surface = meta.data;
    for rec in records(path, &GRID_HEADER)? {
        let mut coords = vec![parse_f64(path, field(&rec, 0))?];
        if let Some(v) = parse_opt(path, field(&rec, 1))? {
            coords.push(v);
        }
        surface.cells.push(ubem_gp_core::grid::GridCell {
            coords,
            mean: parse_f64(path, field(&rec, 2))?,
            std: parse_f64(path, field(&rec, 3))?,
            in_domain: field(&rec, 4).parse().map_err(|e| CliError::format(path, format!("in_domain: {e}")))?,
            density: field(&rec, 5).parse().map_err(|e| CliError::format(path, format!("density: {e}")))?,
            mean_backtransformed: parse_opt(path, field(&rec, 6))?,
        });
    }
    let expected: usize = surface.axes.iter().map(|a| a.values.len()).product();
    if surface.cells.len() != expected {
        return Err(CliError::format(path, format!("{} cells, axes need {expected}", surface.cells.len())));
    }
    Ok((meta.stamp, surface))
}

/// One row of the flat sweep export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub split: String,
    pub axis: String,
    pub value: usize,
    pub seed: u64,
    pub n_test: usize,
    pub mse: f64,
    pub nlpd: f64,
    pub coverage95: f64,
}

pub fn sweep_rows(result: &SweepResult) -> Vec<SweepRow> {
    let axis = serde_json::to_value(result.axis).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
    let mut rows = Vec::new();
    for run in &result.runs {
        for (split, report) in [("interpolation", &run.interpolation), ("extrapolation", &run.extrapolation)] {
            rows.push(SweepRow {
                split: split.into(),
                axis: axis.clone(),
                value: run.value,
                seed: run.seed,
                n_test: report.overall.n_test,
                mse: report.overall.mse,
                nlpd: report.overall.nlpd,
                coverage95: report.overall.coverage95,
            });
        }
    }
    rows
}

pub fn write_sweep_csv(path: &Path, stamp: &Stamp, rows: &[SweepRow]) -> CliResult<()> {
    let mut w = writer(path)?;
    put(path, &mut w, SWEEP_HEADER)?;
    for r in rows {
        put(
            path,
            &mut w,
            [
                r.split.clone(),
                r.axis.clone(),
                r.value.to_string(),
                r.seed.to_string(),
                r.n_test.to_string(),
                r.mse.to_string(),
                r.nlpd.to_string(),
                r.coverage95.to_string(),
            ],
        )?;
    }
    finish(path, w)?;
    write_meta(path, stamp, &rows.len())
}

pub fn read_sweep_csv(path: &Path) -> CliResult<Vec<SweepRow>> {
    records(path, &SWEEP_HEADER)?
        .iter()
        .map(|rec| {
            let int = |i: usize| -> CliResult<u64> {
                field(rec, i).parse().map_err(|e| CliError::format(path, format!("column {}: {e}", SWEEP_HEADER[i])))
            };
            Ok(SweepRow {
                split: field(rec, 0).to_string(),
                axis: field(rec, 1).to_string(),
                value: int(2)? as usize,
                seed: int(3)?,
                n_test: int(4)? as usize,
                mse: parse_f64(path, field(rec, 5))?,
                nlpd: parse_f64(path, field(rec, 6))?,
                coverage95: parse_f64(path, field(rec, 7))?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use ubem_gp_core::synth::{synthesize_measurements, DistrictConfig, DistrictScenario};

    fn stamp() -> Stamp {
        Stamp::new("abc".into(), 3)
    }

    fn small_scenario() -> DistrictScenario {
        let config = DistrictConfig { substations: 2, days: 14, ..DistrictConfig::default() };
        DistrictScenario::generate(5, &config).unwrap()
    }

    #[test]
    fn measurements_and_weather_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let sc = small_scenario();
        let meas = synthesize_measurements(&sc).unwrap();
        let (id, m) = meas.iter().next().unwrap();
        let p = dir.path().join("m.csv");
        write_measurements(&p, id, m).unwrap();
        let (rid, back) = read_measurements(&p).unwrap();
        assert_eq!(&rid, id);
        assert_eq!(&back, m);
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("substation_id,timestamp,heat_power_kw,flow_m3h,supply_temp_c,return_temp_c\n"));
        assert_eq!(text.lines().count(), 14 * 24 + 1);

        let wp = dir.path().join("w.csv");
        write_weather(&wp, &sc.weather).unwrap();
        assert_eq!(read_weather(&wp).unwrap(), sc.weather);
    }

    #[test]
    fn gaps_and_bad_headers_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.csv");
        fs::write(&p, "timestamp,temp_c,ghi_wm2\n2021-01-01T00:00:00Z,1,0\n2021-01-01T02:00:00Z,1,0\n").unwrap();
        assert!(matches!(read_weather(&p), Err(CliError::Format { .. })));
        fs::write(&p, "time,temp_c,ghi_wm2\n2021-01-01T00:00:00Z,1,0\n").unwrap();
        assert!(matches!(read_weather(&p), Err(CliError::Format { .. })));
        fs::write(&p, "timestamp,temp_c,ghi_wm2\n2021-01-01T00:00:00Z,,0\n2021-01-01T01:00:00Z,2.5,\n").unwrap();
        let w = read_weather(&p).unwrap();
        assert_eq!(w.temperature.values(), &[None, Some(2.5)]);
        assert_eq!(w.ghi.values(), &[Some(0.0), None]);
    }

    #[test]
    fn buildings_bills_and_stamped_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let areas: BTreeMap<String, f64> = [("S01".to_string(), 1234.5), ("S02".to_string(), 0.1 + 0.2)].into();
        let p = dir.path().join("b.csv");
        write_buildings(&p, &areas).unwrap();
        assert_eq!(read_buildings(&p).unwrap(), areas);

        let bills: BTreeMap<String, Vec<f64>> = [("S01".to_string(), vec![1.0, 2.5, 1e-7])].into();
        let p = dir.path().join("bills.csv");
        write_bills(&p, &bills).unwrap();
        assert_eq!(read_bills(&p).unwrap(), bills);

        let p = dir.path().join("x.json");
        write_json(&p, &stamp(), &vec![0.1f64, 1.0 / 3.0]).unwrap();
        let back: Stamped<Vec<f64>> = read_json(&p).unwrap();
        assert_eq!(back.stamp, stamp());
        assert_eq!(back.data, vec![0.1, 1.0 / 3.0]);
    }

    #[test]
    fn meta_path_appends_suffix() {
        assert_eq!(meta_path(Path::new("a/b/ds.csv")), PathBuf::from("a/b/ds.csv.meta.json"));
    }

    fn arb_reason() -> impl Strategy<Value = Option<RejectReason>> {
        prop_oneof![
            Just(None),
            Just(Some(RejectReason::Outlier3Sigma)),
            Just(Some(RejectReason::Inconsistent)),
            Just(Some(RejectReason::AtypicalHdd)),
            Just(Some(RejectReason::InsufficientData)),
            Just(Some(RejectReason::Manual)),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn masks_round_trip(reasons in proptest::collection::vec(arb_reason(), 1..200), offset in 0i64..10_000) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("mask.csv");
            let start = DateTime::from_timestamp(1_600_000_000 + offset * 3600, 0).unwrap();
            let mask = CleaningMask::from_reasons(reasons);
            write_mask(&p, "S07", start, &mask).unwrap();
            let (id, s, back) = read_mask(&p).unwrap();
            prop_assert_eq!(id, "S07");
            prop_assert_eq!(s, start);
            prop_assert_eq!(back, mask);
        }

        #[test]
        fn datasets_round_trip(
            raw in proptest::collection::vec((0u8..3, 0i64..40, 0i64..40, 1e-6f64..5.0, proptest::collection::vec(-1e6f64..1e6, 3)), 1..30),
        ) {
            let base = NaiveDate::from_ymd_opt(2021, 1, 4).unwrap();
            let names: Vec<String> = vec!["a".into(), "b_gap".into(), "c".into()];
            let mut samples: Vec<VESample> = raw
                .iter()
                .map(|(s, c, v, t, f)| VESample {
                    pair: VEPair {
                        substation_id: format!("S0{s}"),
                        calibration_window: CalendarWindow::weekly(base + chrono::Duration::days(*c)),
                        validation_window: CalendarWindow::weekly(base + chrono::Duration::days(*v)),
                        season: "2020-2021".into(),
                    },
                    features: FeatureVector::new(names.iter().cloned().zip(f.iter().copied()).collect()).unwrap(),
                    target_cvrmse: *t,
                    weight: 1.0,
                })
                .collect();
            ubem_gp_core::ve::compute_weights(&mut samples);
            let ds = VEDataset::new(samples, names, Provenance { config_hash: "h".into(), seed: 9 }).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("ve.csv");
            write_dataset(&p, &stamp(), &ds).unwrap();
            let (st, back) = read_dataset(&p).unwrap();
            prop_assert_eq!(st, stamp());
            prop_assert_eq!(back, ds);
        }

        #[test]
        fn sweep_rows_round_trip(rows in proptest::collection::vec((0usize..4000, 0u64..100, -10f64..10.0, 0f64..1.0), 0..20)) {
            let rows: Vec<SweepRow> = rows
                .into_iter()
                .map(|(v, s, x, c)| SweepRow { split: "interpolation".into(), axis: "sample_size".into(), value: v, seed: s, n_test: v, mse: x * x, nlpd: x, coverage95: c })
                .collect();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("s.csv");
            write_sweep_csv(&p, &stamp(), &rows).unwrap();
            prop_assert_eq!(read_sweep_csv(&p).unwrap(), rows);
        }
    }

    #[test]
    fn grids_round_trip() {
        use ubem_gp_core::grid::{GridAxis, GridCell};
        let axis = |name: &str| GridAxis { feature: name.into(), values: vec![0.0, 0.5, 1.0 / 3.0 + 1.0], labels: vec![Some(1.0), None, Some(7.25)] };
        let mut cells = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                cells.push(GridCell {
                    coords: vec![i as f64 * 0.1, j as f64 / 7.0],
                    mean: 0.1 * (i + j) as f64,
                    std: 1e-3 + j as f64,
                    in_domain: (i + j) % 2 == 0,
                    density: i * j,
                    mean_backtransformed: (j != 1).then_some(0.2 * i as f64),
                });
            }
        }
        let surface = GridSurface { axes: vec![axis("a"), axis("b")], fixed: vec![("c".into(), 0.4)], cells, band_sigmas: 2.0 };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.csv");
        write_grid(&p, &stamp(), &surface).unwrap();
        assert_eq!(read_grid(&p).unwrap().1, surface);

        let curve = GridSurface {
            axes: vec![axis("a")],
            fixed: vec![],
            cells: surface.cells[..3].iter().map(|c| GridCell { coords: vec![c.coords[0]], ..c.clone() }).collect(),
            band_sigmas: 1.0,
        };
        write_grid(&p, &stamp(), &curve).unwrap();
        assert_eq!(read_grid(&p).unwrap().1, curve);
    }
}
