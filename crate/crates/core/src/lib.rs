//! Gaussian-process modelling of urban building energy model (UBEM) error
//! structure: synthetic district data, cleaning, brute-force calibration,
//! validation-experiment datasets, feature selection, a weighted-noise GP,
//! evaluation and grid exploration.

pub mod calibration;
pub mod cleaning;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod gp;
pub mod grid;
pub mod model;
pub mod series;
pub mod select;
pub mod synth;
pub mod transform;
pub mod ve;

pub use error::{Error, Result};

pub use calibration::{CalibrationResult, ParamRanges, RangeFactors};
pub use cleaning::{CleaningConfig, CleaningMask, RejectReason};
pub use evaluation::{EvalReport, Metrics, SweepResult};
pub use features::{FeatureGroup, FeatureVector, GaInterpretation};
pub use gp::{FitOptions, GPModel, KernelParams, Predictive};
pub use grid::{GridConfig, GridSurface, PinMode};
pub use model::{ErrorModel, ErrorModelArtifact, ModelConfig};
pub use select::{SelectionConfig, SelectionReport};
pub use series::{CalendarWindow, HeatingSeason, TimeSeries, Unit};
pub use synth::{BuildingParams, DistrictConfig, DistrictScenario, MeterReadings, WeatherSeries};
pub use transform::{TransformPolicy, TransformSpec};
pub use ve::{VEDataset, VEPair, VESample};
