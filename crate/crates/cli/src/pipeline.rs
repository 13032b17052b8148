//! Stage orchestration over a run directory.
//!
//! Layout (relative to the run directory):
//! `data/` inputs, `clean/` masks, `calibration/` per-window results, `ve/` dataset,
//! `select/` report, `model/` artifact, `eval/` reports, `grid/` surfaces, `sweep/` sweeps.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use ubem_gp_core::calibration::{calibrate_candidates_with, sample_params, CalibrationResult};
use ubem_gp_core::cleaning::{apply_mask, clean_substation, SeasonScreen};
use ubem_gp_core::evaluation::{
    extrapolation_eval, interpolation_eval, shuffled_rows, sweep_features, sweep_size, EvalReport, Metrics, Split, SweepResult,
};
use ubem_gp_core::features::feature_schema;
use ubem_gp_core::grid::{density_sigma_deciles, spearman, structure_report, GridSurface};
use ubem_gp_core::model::{ErrorModel, ErrorModelArtifact};
use ubem_gp_core::select::{order_features, select_from_dataset, SelectionReport};
use ubem_gp_core::series::{HeatingSeason, TimeSeries, HOURS_PER_DAY};
use ubem_gp_core::synth::{substation_seed, synthesize_bills, synthesize_measurements, DistrictScenario, MeterReadings, WeatherSeries};
use ubem_gp_core::ve::{build_dataset, enumerate_windows, Provenance, SubstationInputs, VEDataset, WindowMode};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::{self, Stamp, Stamped};
use crate::manifest::{sha256_file, stage_key, Manifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Clean,
    Calibrate,
    BuildVe,
    Select,
    Train,
    Eval,
    Grid,
    SweepSize,
    SweepFeatures,
}

impl Stage {
    /// The stages `pipeline` runs, in order.
    pub const PIPELINE: [Stage; 7] =
        [Stage::Clean, Stage::Calibrate, Stage::BuildVe, Stage::Select, Stage::Train, Stage::Eval, Stage::Grid];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Clean => "clean",
            Stage::Calibrate => "calibrate",
            Stage::BuildVe => "build-ve",
            Stage::Select => "select",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::Grid => "grid",
            Stage::SweepSize => "sweep-size",
            Stage::SweepFeatures => "sweep-features",
        }
    }

    /// Config sections this stage's outputs depend on, upstream ones included.
    pub fn sections(&self) -> &'static [&'static str] {
        match self {
            Stage::Clean => &["scenario", "cleaning", "ve"],
            Stage::Calibrate => &["scenario", "cleaning", "ve", "calibration"],
            Stage::BuildVe => &["scenario", "cleaning", "ve", "calibration", "features"],
            Stage::Select => &["scenario", "cleaning", "ve", "calibration", "features", "select"],
            Stage::Train | Stage::Eval | Stage::SweepSize | Stage::SweepFeatures => {
                &["scenario", "cleaning", "ve", "calibration", "features", "select", "gp", "eval"]
            }
            Stage::Grid => &["scenario", "cleaning", "ve", "calibration", "features", "select", "gp", "eval", "grid"],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Stage::PIPELINE
            .iter()
            .chain(&[Stage::SweepSize, Stage::SweepFeatures])
            .find(|st| st.name() == s)
            .copied()
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

/// Per-invocation overrides of the configuration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageOptions {
    pub features: Option<Vec<String>>,
    pub n: Option<usize>,
    pub split: Option<Split>,
    pub ks: Option<Vec<usize>>,
}

impl StageOptions {
    fn key_part(&self) -> String {
        format!("{:?}|{:?}|{:?}|{:?}", self.features, self.n, self.split, self.ks)
    }
}

/// Parses `a..b` (inclusive), `a..=b` or a comma list.
pub fn parse_ks(s: &str) -> Result<Vec<usize>, String> {
    let num = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}"));
    let ks: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
        (a..=b).collect()
    } else {
        s.split(',').map(num).collect::<Result<_, _>>()?
    };
    if ks.is_empty() || ks.contains(&0) || ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(format!("`{s}` must name strictly increasing positive k values"));
    }
    Ok(ks)
}

pub fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "interpolation" => Ok(Split::Interpolation),
        "extrapolation" => Ok(Split::Extrapolation),
        _ => Err(format!("unknown split `{s}` (interpolation | extrapolation)")),
    }
}

/// Paths of every artifact in a run directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn measurements_dir(&self) -> PathBuf {
        self.root.join("data/measurements")
    }
    pub fn measurement(&self, id: &str) -> PathBuf {
        self.measurements_dir().join(format!("{id}.csv"))
    }
    pub fn weather(&self) -> PathBuf {
        self.root.join("data/weather.csv")
    }
    pub fn buildings(&self) -> PathBuf {
        self.root.join("data/buildings.csv")
    }
    pub fn bills(&self) -> PathBuf {
        self.root.join("data/bills.csv")
    }
    pub fn scenario(&self) -> PathBuf {
        self.root.join("data/scenario.json")
    }
    pub fn mask(&self, id: &str) -> PathBuf {
        self.root.join(format!("clean/{id}_mask.csv"))
    }
    pub fn screens(&self) -> PathBuf {
        self.root.join("clean/screens.json")
    }
    pub fn calibration(&self, id: &str, start: NaiveDate) -> PathBuf {
        self.root.join(format!("calibration/{id}/{start}.json"))
    }
    pub fn calibration_index(&self) -> PathBuf {
        self.root.join("calibration/index.json")
    }
    pub fn dataset(&self) -> PathBuf {
        self.root.join("ve/dataset.csv")
    }
    pub fn skipped(&self) -> PathBuf {
        self.root.join("ve/skipped.json")
    }
    pub fn feature_schema(&self) -> PathBuf {
        self.root.join("ve/feature_schema.json")
    }
    pub fn selection(&self) -> PathBuf {
        self.root.join("select/report.json")
    }
    pub fn model(&self) -> PathBuf {
        self.root.join("model/model.json")
    }
    pub fn eval(&self, split: Split) -> PathBuf {
        self.root.join(match split {
            Split::Interpolation => "eval/interpolation.json",
            Split::Extrapolation => "eval/extrapolation.json",
        })
    }
    pub fn curve(&self, feature: &str) -> PathBuf {
        self.root.join(format!("grid/curve_{feature}.csv"))
    }
    pub fn pair(&self, a: &str, b: &str) -> PathBuf {
        self.root.join(format!("grid/pair_{a}__{b}.csv"))
    }
    pub fn grid_summary(&self) -> PathBuf {
        self.root.join("grid/summary.json")
    }
    pub fn sweep(&self, stage: Stage, ext: &str) -> PathBuf {
        let stem = if stage == Stage::SweepSize { "size" } else { "features" };
        self.root.join(format!("sweep/{stem}.{ext}"))
    }
    fn stage_dir(&self, stage: Stage) -> Option<PathBuf> {
        let dir = match stage {
            Stage::Clean => "clean",
            Stage::Calibrate => "calibration",
            Stage::BuildVe => "ve",
            Stage::Select => "select",
            Stage::Train => "model",
            Stage::Grid => "grid",
            Stage::Eval | Stage::SweepSize | Stage::SweepFeatures => return None,
        };
        Some(self.root.join(dir))
    }
}

/// Substation summary of the cleaning stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanSummary {
    pub slots: usize,
    pub rejected: usize,
    pub by_reason: BTreeMap<String, usize>,
    pub screens: Vec<SeasonScreen>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationEntry {
    pub window_start: NaiveDate,
    /// Result file relative to the run directory; absent when the window failed.
    pub file: Option<String>,
    pub calibration_error: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    /// Training dataset, relative to the run directory.
    pub dataset: String,
    pub dataset_sha256: String,
    pub n_train: usize,
    pub artifact: ErrorModelArtifact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub features: (String, String),
    pub file: String,
    pub in_domain_cells: usize,
    /// Mean σ over the lowest- and highest-density in-domain deciles.
    pub low_density_sigma: Option<f64>,
    pub high_density_sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub curve_feature: String,
    pub curve_file: Option<String>,
    /// Spearman rank correlation between in-domain lattice position and predicted mean.
    pub curve_spearman: Option<f64>,
    pub pairs: Vec<PairSummary>,
}

/// A configured run over one directory.
pub struct Run {
    pub config: RunConfig,
    pub layout: Layout,
}

fn missing(stage: Stage, artifact: &Path, hint: &str) -> CliError {
    CliError::MissingDependency { stage: stage.name().into(), artifact: artifact.to_path_buf(), stage_hint: hint.into() }
}

fn require(stage: Stage, path: &Path, hint: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(missing(stage, path, hint))
    }
}

fn last_date(series: &TimeSeries) -> NaiveDate {
    (series.end() - chrono::Duration::hours(1)).date_naive()
}

fn whole_days(weather: &WeatherSeries, path: &Path) -> CliResult<u32> {
    if weather.temperature.start().time() != chrono::NaiveTime::MIN || weather.len() % HOURS_PER_DAY != 0 {
        return Err(CliError::format(path, "weather must cover whole days starting at midnight UTC"));
    }
    Ok((weather.len() / HOURS_PER_DAY) as u32)
}

/// Model metrics in the shape of an overall / min / max table.
pub fn metrics_table(report: &EvalReport) -> String {
    let split = match report.split {
        Split::Interpolation => "interpolation",
        Split::Extrapolation => "extrapolation",
    };
    let mut out = format!(
        "{split} (n_train = {}, features = {}, seed = {})\n{:<10}{:>12}{:>12}{:>12}\n",
        report.n_train,
        report.features.join(","),
        report.seed,
        "",
        "MSE",
        "Coverage",
        "NLPD"
    );
    let rows: &[(&str, &Metrics)] = match report.split {
        Split::Interpolation => &[("Overall", &report.overall)],
        Split::Extrapolation => &[("Overall", &report.overall), ("Min", &report.min), ("Max", &report.max)],
    };
    for (label, m) in rows {
        out.push_str(&format!("{label:<10}{:>12.4}{:>11.1}%{:>12.3}\n", m.mse, m.coverage95 * 100.0, m.nlpd));
    }
    out
}

fn sweep_table(result: &SweepResult) -> String {
    let mut out = format!(
        "{:>6} {:>20} {:>20} {:>20} {:>20}\n",
        "value", "interp MSE", "interp NLPD", "extrap MSE", "extrap NLPD"
    );
    for p in &result.points {
        let cell = |s: &ubem_gp_core::evaluation::Spread| format!("{:.4} ± {:.4}", s.mean, s.sd);
        out.push_str(&format!(
            "{:>6} {:>20} {:>20} {:>20} {:>20}\n",
            p.value,
            cell(&p.interpolation.mse),
            cell(&p.interpolation.nlpd),
            cell(&p.extrapolation.mse),
            cell(&p.extrapolation.nlpd)
        ));
    }
    out
}

impl Run {
    pub fn new(config: RunConfig, root: impl Into<PathBuf>) -> Self {
        Self { config, layout: Layout::new(root) }
    }

    pub fn stamp(&self, stage: Stage) -> Stamp {
        Stamp::new(self.config.sections_hash(stage.sections()), self.config.scenario.seed)
    }

    /// Generates the synthetic district and writes the input files.
    pub fn synth(&self) -> CliResult<Vec<PathBuf>> {
        let s = &self.config.scenario;
        let stamp = Stamp::new(self.config.sections_hash(&["scenario"]), s.seed);
        let scenario = DistrictScenario::generate(s.seed, &s.district())?;
        let meas = synthesize_measurements(&scenario)?;
        let bills = synthesize_bills(&scenario, s.bill_months, s.bill_noise);
        let l = &self.layout;
        let dir = l.measurements_dir();
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        }
        let mut written = Vec::new();
        for (id, m) in &meas {
            let p = l.measurement(id);
            io::write_measurements(&p, id, m)?;
            written.push(p);
        }
        io::write_weather(&l.weather(), &scenario.weather)?;
        let areas: BTreeMap<String, f64> =
            scenario.substations.iter().map(|sub| (sub.id.clone(), sub.params.floor_area)).collect();
        io::write_buildings(&l.buildings(), &areas)?;
        io::write_bills(&l.bills(), &bills)?;
        for p in [l.weather(), l.buildings(), l.bills()] {
            io::write_meta(&p, &stamp, &"synthetic")?;
            written.push(p);
        }
        // generator truth, for audits only; no stage reads it
        io::write_json(&l.scenario(), &stamp, &scenario)?;
        written.push(l.scenario());
        Ok(written)
    }

    fn measurement_files(&self, stage: Stage) -> CliResult<Vec<PathBuf>> {
        let dir = self.layout.measurements_dir();
        let entries = std::fs::read_dir(&dir).map_err(|_| missing(stage, &dir, "synth"))?;
        let mut files: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(missing(stage, &dir, "synth"));
        }
        Ok(files)
    }

    fn read_measurements(&self, stage: Stage) -> CliResult<BTreeMap<String, MeterReadings>> {
        let mut out = BTreeMap::new();
        for p in self.measurement_files(stage)? {
            let (id, m) = io::read_measurements(&p)?;
            if p.file_stem().and_then(|s| s.to_str()) != Some(id.as_str()) {
                return Err(CliError::format(&p, format!("file of substation {id} must be named {id}.csv")));
            }
            if out.insert(id.clone(), m).is_some() {
                return Err(CliError::format(&p, format!("substation {id} appears in more than one file")));
            }
        }
        Ok(out)
    }

    fn read_weather(&self, stage: Stage) -> CliResult<(WeatherSeries, u32)> {
        let p = self.layout.weather();
        require(stage, &p, "synth")?;
        let w = io::read_weather(&p)?;
        let days = whole_days(&w, &p)?;
        Ok((w, days))
    }

    fn seasons(&self, weather: &WeatherSeries) -> CliResult<Vec<HeatingSeason>> {
        let t = &weather.temperature;
        self.config.ve.seasons_for(t.start().date_naive(), last_date(t))
    }

    /// Cleaned loads: measured power with rejected slots set missing.
    fn cleaned_loads(&self, stage: Stage, meas: &BTreeMap<String, MeterReadings>) -> CliResult<BTreeMap<String, TimeSeries>> {
        let mut out = BTreeMap::new();
        for (id, m) in meas {
            let p = self.layout.mask(id);
            require(stage, &p, "clean")?;
            let (mid, start, mask) = io::read_mask(&p)?;
            if &mid != id || start != m.power.start() {
                return Err(CliError::format(&p, format!("mask does not belong to the current measurements of {id}")));
            }
            out.insert(id.clone(), apply_mask(&m.power, &mask)?);
        }
        Ok(out)
    }

    fn read_dataset(&self, stage: Stage) -> CliResult<VEDataset> {
        let p = self.layout.dataset();
        require(stage, &p, "build-ve")?;
        require(stage, &io::meta_path(&p), "build-ve")?;
        Ok(io::read_dataset(&p)?.1)
    }

    fn read_selection(&self, stage: Stage) -> CliResult<SelectionReport> {
        let p = self.layout.selection();
        require(stage, &p, "select")?;
        Ok(io::read_json::<SelectionReport>(&p)?.data)
    }

    fn read_model(&self, stage: Stage) -> CliResult<ModelFile> {
        let p = self.layout.model();
        require(stage, &p, "train")?;
        let mf: ModelFile = io::read_json(&p)?.data;
        let ds_path = self.layout.root.join(&mf.dataset);
        require(stage, &ds_path, "build-ve")?;
        if sha256_file(&ds_path)? != mf.dataset_sha256 {
            return Err(CliError::format(&p, "the model was trained on a different dataset; rerun `train`"));
        }
        Ok(mf)
    }

    /// Files a stage reads; a missing one is a dependency error naming the producing stage.
    pub fn inputs(&self, stage: Stage) -> CliResult<Vec<PathBuf>> {
        let l = &self.layout;
        let need = |p: PathBuf, hint: &str| -> CliResult<PathBuf> {
            require(stage, &p, hint)?;
            Ok(p)
        };
        let dataset = || -> CliResult<Vec<PathBuf>> {
            Ok(vec![need(l.dataset(), "build-ve")?, need(io::meta_path(&l.dataset()), "build-ve")?])
        };
        let masks = |files: &[PathBuf]| -> CliResult<Vec<PathBuf>> {
            files
                .iter()
                .map(|f| {
                    let id = f.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
                    need(l.mask(id), "clean")
                })
                .collect()
        };
        let mut files = Vec::new();
        match stage {
            Stage::Clean => {
                files.push(need(l.weather(), "synth")?);
                files.extend(self.measurement_files(stage)?);
            }
            Stage::Calibrate => {
                files.push(need(l.weather(), "synth")?);
                files.push(need(l.buildings(), "synth")?);
                files.push(need(l.bills(), "synth")?);
                let m = self.measurement_files(stage)?;
                files.extend(masks(&m)?);
                files.extend(m);
            }
            Stage::BuildVe => {
                files.push(need(l.weather(), "synth")?);
                let m = self.measurement_files(stage)?;
                files.extend(masks(&m)?);
                files.extend(m);
                let index = need(l.calibration_index(), "calibrate")?;
                let entries: BTreeMap<String, Vec<CalibrationEntry>> = io::read_json(&index)?.data;
                for e in entries.values().flatten() {
                    if let Some(f) = &e.file {
                        files.push(need(l.root.join(f), "calibrate")?);
                    }
                }
                files.push(index);
            }
            Stage::Select => files.extend(dataset()?),
            Stage::Train | Stage::SweepSize | Stage::SweepFeatures => {
                files.extend(dataset()?);
                files.push(need(l.selection(), "select")?);
            }
            Stage::Eval | Stage::Grid => {
                files.extend(dataset()?);
                files.push(need(l.model(), "train")?);
            }
        }
        Ok(files)
    }

    /// Runs one stage unless the manifest shows identical inputs and intact outputs.
    /// Returns whether the stage actually ran.
    pub fn run_stage(&self, stage: Stage, opts: &StageOptions) -> CliResult<bool> {
        self.run_stage_inner(stage, opts).map_err(|e| e.in_stage(stage.name()))
    }

    fn run_stage_inner(&self, stage: Stage, opts: &StageOptions) -> CliResult<bool> {
        let root = &self.layout.root;
        let inputs = self.inputs(stage)?;
        let mut hashes = Vec::with_capacity(inputs.len() + 1);
        for p in &inputs {
            hashes.push((p.strip_prefix(root).unwrap_or(p).to_string_lossy().into_owned(), sha256_file(p)?));
        }
        hashes.push(("options".into(), opts.key_part()));
        let stamp = self.stamp(stage);
        let key = stage_key(stage.name(), &stamp.config_hash, &hashes);
        let mut manifest = Manifest::load(root);
        if manifest.is_fresh(root, stage.name(), &key) {
            tracing::info!(stage = stage.name(), "up to date");
            println!("{stage}: up to date");
            return Ok(false);
        }
        manifest.invalidate(stage.name());
        manifest.save(root)?;
        if let Some(dir) = self.layout.stage_dir(stage) {
            if dir.exists() {
                std::fs::remove_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
            }
        }
        let t = Instant::now();
        let outputs = match stage {
            Stage::Clean => self.clean(&stamp)?,
            Stage::Calibrate => self.calibrate(&stamp)?,
            Stage::BuildVe => self.build_ve(&stamp)?,
            Stage::Select => self.select(&stamp)?,
            Stage::Train => self.train(&stamp, opts)?,
            Stage::Eval => self.eval(&stamp, opts)?,
            Stage::Grid => self.grid(&stamp)?,
            Stage::SweepSize | Stage::SweepFeatures => self.sweep(stage, &stamp, opts)?,
        };
        manifest.record(root, stage.name(), key, &outputs)?;
        manifest.save(root)?;
        tracing::info!(stage = stage.name(), seconds = t.elapsed().as_secs_f64(), "stage finished");
        println!("{stage}: done");
        Ok(true)
    }

    /// Runs the pipeline stages in order, or only `only` when given.
    pub fn pipeline(&self, only: Option<Stage>, opts: &StageOptions) -> CliResult<()> {
        match only {
            Some(stage) => self.run_stage(stage, opts).map(|_| ()),
            None => {
                for stage in Stage::PIPELINE {
                    self.run_stage(stage, opts)?;
                }
                Ok(())
            }
        }
    }

    fn clean(&self, stamp: &Stamp) -> CliResult<Vec<PathBuf>> {
        let (weather, _) = self.read_weather(Stage::Clean)?;
        let meas = self.read_measurements(Stage::Clean)?;
        let seasons = self.seasons(&weather)?;
        let mut summaries = BTreeMap::new();
        let mut outputs = Vec::new();
        for (id, m) in &meas {
            let outcome = clean_substation(m, &weather.temperature, &seasons, &self.config.cleaning)?;
            let p = self.layout.mask(id);
            io::write_mask(&p, id, m.power.start(), &outcome.mask)?;
            io::write_meta(&p, stamp, &outcome.mask.rejected_count())?;
            let mut by_reason: BTreeMap<String, usize> = BTreeMap::new();
            for r in outcome.mask.reasons().iter().flatten() {
                *by_reason.entry(r.as_str().to_string()).or_default() += 1;
            }
            let kept = outcome.screens.iter().filter(|s| s.verdict.is_kept()).count();
            println!("  {id}: {} of {} slots rejected, {kept}/{} seasons kept", outcome.mask.rejected_count(), m.power.len(), seasons.len());
            summaries.insert(
                id.clone(),
                CleanSummary { slots: m.power.len(), rejected: outcome.mask.rejected_count(), by_reason, screens: outcome.screens },
            );
            outputs.push(io::meta_path(&p));
            outputs.push(p);
        }
        io::write_json(&self.layout.screens(), stamp, &summaries)?;
        outputs.push(self.layout.screens());
        Ok(outputs)
    }

    fn calibrate(&self, stamp: &Stamp) -> CliResult<Vec<PathBuf>> {
        let stage = Stage::Calibrate;
        let (weather, days) = self.read_weather(stage)?;
        let meas = self.read_measurements(stage)?;
        let loads = self.cleaned_loads(stage, &meas)?;
        let areas = io::read_buildings(&self.layout.buildings())?;
        let bills = io::read_bills(&self.layout.bills())?;
        let windows = enumerate_windows(weather.temperature.start().date_naive(), days, WindowMode::Calibration)?;
        let c = &self.config.calibration;
        let mut index: BTreeMap<String, Vec<CalibrationEntry>> = BTreeMap::new();
        let mut outputs = Vec::new();
        for (id, load) in &loads {
            let area = *areas.get(id).ok_or_else(|| CliError::format(self.layout.buildings(), format!("no floor area for {id}")))?;
            let bill = bills.get(id).ok_or_else(|| CliError::format(self.layout.bills(), format!("no bills for {id}")))?;
            let ranges = c.ranges.ranges(area);
            ranges.validate()?;
            let candidates = sample_params(&ranges, c.n, substation_seed(c.seed, id))?;
            let results =
                calibrate_candidates_with(load, &weather, &windows, &candidates, bill, self.config.ve.max_missing_slots)?;
            let mut entries = Vec::new();
            for (w, r) in windows.iter().zip(results) {
                entries.push(match r {
                    Ok(res) => {
                        let p = self.layout.calibration(id, w.start_date);
                        io::write_json(&p, stamp, &res)?;
                        let rel = p.strip_prefix(&self.layout.root).unwrap_or(&p).to_string_lossy().into_owned();
                        outputs.push(p);
                        CalibrationEntry {
                            window_start: w.start_date,
                            file: Some(rel),
                            calibration_error: Some(res.calibration_error),
                            error: None,
                        }
                    }
                    Err(e) => {
                        CalibrationEntry { window_start: w.start_date, file: None, calibration_error: None, error: Some(e.to_string()) }
                    }
                });
            }
            let ok = entries.iter().filter(|e| e.file.is_some()).count();
            println!("  {id}: {ok}/{} windows calibrated", entries.len());
            index.insert(id.clone(), entries);
        }
        io::write_json(&self.layout.calibration_index(), stamp, &index)?;
        outputs.push(self.layout.calibration_index());
        Ok(outputs)
    }

    fn build_ve(&self, stamp: &Stamp) -> CliResult<Vec<PathBuf>> {
        let stage = Stage::BuildVe;
        let (weather, _) = self.read_weather(stage)?;
        let meas = self.read_measurements(stage)?;
        let loads = self.cleaned_loads(stage, &meas)?;
        let index: BTreeMap<String, Vec<CalibrationEntry>> = io::read_json(&self.layout.calibration_index())?.data;
        let mut calibrations: BTreeMap<String, Vec<CalibrationResult>> = BTreeMap::new();
        for (id, entries) in &index {
            let list = calibrations.entry(id.clone()).or_default();
            for f in entries.iter().filter_map(|e| e.file.as_ref()) {
                list.push(io::read_json::<CalibrationResult>(&self.layout.root.join(f))?.data);
            }
        }
        let empty = Vec::new();
        let inputs: Vec<SubstationInputs<'_>> = loads
            .iter()
            .map(|(id, load)| SubstationInputs { id, load, calibrations: calibrations.get(id).unwrap_or(&empty) })
            .collect();
        let seasons = self.seasons(&weather)?;
        let provenance = Provenance { config_hash: stamp.config_hash.clone(), seed: stamp.seed };
        let (ds, skipped) = build_dataset(&inputs, &weather, &seasons, &self.config.build_options(), provenance)?;
        println!("  {} VE samples from {} substations, {} pairs skipped", ds.len(), ds.substation_ids().len(), skipped.len());
        let l = &self.layout;
        io::write_dataset(&l.dataset(), stamp, &ds)?;
        io::write_json(&l.skipped(), stamp, &skipped)?;
        io::write_json(&l.feature_schema(), stamp, &feature_schema())?;
        Ok(vec![l.dataset(), io::meta_path(&l.dataset()), l.skipped(), l.feature_schema()])
    }

    fn select(&self, stamp: &Stamp) -> CliResult<Vec<PathBuf>> {
        let ds = self.read_dataset(Stage::Select)?;
        let report = select_from_dataset(&ds, &self.config.select.policy(), &self.config.select.selection())?;
        for g in &report.groups {
            let top: Vec<String> = g.ranked.iter().take(3).map(|r| format!("{} {:.3}", r.feature, r.dcor)).collect();
            println!("  {}: {}", g.group.as_str(), top.join(", "));
        }
        println!("  ordering: {}", report.ordering.join(", "));
        io::write_json(&self.layout.selection(), stamp, &report)?;
        Ok(vec![self.layout.selection()])
    }

    /// Features the model uses: the explicit list, or the head of the selection ordering.
    pub fn model_features(&self, stage: Stage, opts: &StageOptions, k: usize) -> CliResult<Vec<String>> {
        match &opts.features {
            Some(f) => Ok(f.clone()),
            None => Ok(order_features(&self.read_selection(stage)?, k)?),
        }
    }

    fn train(&self, stamp: &Stamp, opts: &StageOptions) -> CliResult<Vec<PathBuf>> {
        let ds = self.read_dataset(Stage::Train)?;
        let features = self.model_features(Stage::Train, opts, self.config.select.model_features)?;
        let n = opts.n.unwrap_or(self.config.eval.n_train);
        if n == 0 || n > ds.len() {
            return Err(ubem_gp_core::Error::InsufficientSamples { needed: n.max(1), available: ds.len() }.into());
        }
        let seed = self.config.eval.seed;
        // the same rows interpolation_eval trains on with this seed
        let mut rows = shuffled_rows(ds.len(), seed);
        rows.truncate(n);
        let model = ErrorModel::train(&ds, &rows, &features, &self.config.model_config(), seed)?;
        let p = model.gp().params();
        println!(
            "  {} features, n = {n}: signal variance {:.4}, lengthscales {:?}, noise variance {:.3e}, log marginal likelihood {:.2}",
            features.len(),
            p.signal_variance,
            p.lengthscales,
            p.noise_variance,
            model.gp().log_marginal_likelihood()
        );
        let l = &self.layout;
        let file = ModelFile {
            dataset: "ve/dataset.csv".into(),
            dataset_sha256: sha256_file(&l.dataset())?,
            n_train: n,
            artifact: model.artifact(),
        };
        io::write_json(&l.model(), stamp, &file)?;
        Ok(vec![l.model()])
    }

    fn eval(&self, stamp: &Stamp, opts: &StageOptions) -> CliResult<Vec<PathBuf>> {
        let mf = self.read_model(Stage::Eval)?;
        let ds = self.read_dataset(Stage::Eval)?;
        let features = mf.artifact.features.clone();
        let config = mf.artifact.config.clone();
        let seed = self.config.eval.seed;
        let splits = match opts.split {
            Some(s) => vec![s],
            None => vec![Split::Interpolation, Split::Extrapolation],
        };
        let mut outputs = Vec::new();
        for split in splits {
            let report = match split {
                Split::Interpolation => interpolation_eval(&ds, mf.n_train, &features, &config, seed)?,
                Split::Extrapolation => extrapolation_eval(&ds, mf.n_train, &features, &config, seed)?,
            };
            print!("{}", metrics_table(&report));
            if !report.leakage_audit_passed {
                return Err(CliError::Audit("a validation row reached model fitting".into()));
            }
            let p = self.layout.eval(split);
            io::write_json(&p, stamp, &report.compact())?;
            outputs.push(p);
        }
        Ok(outputs)
    }

    fn grid(&self, stamp: &Stamp) -> CliResult<Vec<PathBuf>> {
        let mf = self.read_model(Stage::Grid)?;
        let ds = self.read_dataset(Stage::Grid)?;
        let model = ErrorModel::from_artifact(&mf.artifact, &ds)?;
        let g = &self.config.grid;
        let report = structure_report(&model, &ds, &g.curve_feature, &g.grid())?;
        let rel = |p: &Path| p.strip_prefix(&self.layout.root).unwrap_or(p).to_string_lossy().into_owned();
        let mut outputs = Vec::new();
        let mut summary = GridSummary { curve_feature: g.curve_feature.clone(), curve_file: None, curve_spearman: None, pairs: Vec::new() };
        if let Some(curve) = &report.curve {
            let p = self.layout.curve(&g.curve_feature);
            io::write_grid(&p, stamp, curve)?;
            summary.curve_file = Some(rel(&p));
            summary.curve_spearman = curve_spearman(curve);
            if let Some(rho) = summary.curve_spearman {
                println!("  {} curve: Spearman(position, mean) = {rho:.3} over the in-domain lattice", g.curve_feature);
            }
            outputs.extend([io::meta_path(&p), p]);
        }
        for surface in &report.pairs {
            let (a, b) = (surface.axes[0].feature.clone(), surface.axes[1].feature.clone());
            let p = self.layout.pair(&a, &b);
            io::write_grid(&p, stamp, surface)?;
            let deciles = density_sigma_deciles(surface);
            summary.pairs.push(PairSummary {
                features: (a, b),
                file: rel(&p),
                in_domain_cells: surface.cells.iter().filter(|c| c.in_domain).count(),
                low_density_sigma: deciles.map(|d| d.0),
                high_density_sigma: deciles.map(|d| d.1),
            });
            outputs.extend([io::meta_path(&p), p]);
        }
        println!("  {} pair surfaces", summary.pairs.len());
        io::write_json(&self.layout.grid_summary(), stamp, &summary)?;
        outputs.push(self.layout.grid_summary());
        Ok(outputs)
    }

    fn sweep(&self, stage: Stage, stamp: &Stamp, opts: &StageOptions) -> CliResult<Vec<PathBuf>> {
        let ds = self.read_dataset(stage)?;
        let e = &self.config.eval;
        let config = self.config.model_config();
        let result = if stage == Stage::SweepSize {
            let features = self.model_features(stage, opts, e.size_features)?;
            let sizes: Vec<usize> = match opts.n {
                Some(n) => vec![n],
                None => e.sizes.clone(),
            };
            sweep_size(&ds, &sizes, &features, &config, &e.seeds)?
        } else {
            let ks = opts.ks.clone().unwrap_or_else(|| (1..=e.k_max).collect());
            let k_top = *ks.last().expect("ks is never empty");
            let ordering = self.model_features(stage, opts, k_top)?;
            sweep_features(&ds, &ordering, &ks, opts.n.unwrap_or(e.n_train), &config, &e.seeds)?
        };
        print!("{}", sweep_table(&result));
        if !result.leakage_audit_passed {
            return Err(CliError::Audit("a validation row reached model fitting".into()));
        }
        let json = self.layout.sweep(stage, "json");
        let csv = self.layout.sweep(stage, "csv");
        io::write_json(&json, stamp, &result)?;
        io::write_sweep_csv(&csv, stamp, &io::sweep_rows(&result))?;
        Ok(vec![json, io::meta_path(&csv), csv])
    }
}

/// Spearman correlation of lattice position and predicted mean over in-domain cells.
pub fn curve_spearman(curve: &GridSurface) -> Option<f64> {
    let cells: Vec<f64> = curve.cells.iter().filter(|c| c.in_domain).map(|c| c.mean).collect();
    let pos: Vec<f64> = (0..cells.len()).map(|i| i as f64).collect();
    spearman(&pos, &cells).ok()
}

/// Reads a stamped artifact of any stage, for tests and tooling.
pub fn read_stamped<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<Stamped<T>> {
    io::read_json(path)
}
