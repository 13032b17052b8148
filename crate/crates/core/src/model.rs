//! The error model: transforms plus a GP, trained on a subset of a VE dataset.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{alpha_from_weights, FitOptions, GPModel, KernelParams, Predictive};
use crate::transform::{TransformPolicy, TransformSpec};
use crate::ve::VEDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub fit: FitOptions,
    /// Noise add-on for a sample of mean weight, in transformed (Box-Cox, not yet
    /// min-max scaled) target units.
    pub base_alpha: f64,
    pub transform: TransformPolicy,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { fit: FitOptions::default(), base_alpha: 1e-2, transform: TransformPolicy::default() }
    }
}

/// Rows in transformed-scaled space.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledRows {
    /// Dataset row indices that survived the transforms.
    pub rows: Vec<usize>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub dropped: usize,
}

#[derive(Debug, Clone)]
pub struct ErrorModel {
    features: Vec<String>,
    transform: TransformSpec,
    gp: GPModel,
    train_rows: Vec<usize>,
    config: ModelConfig,
    seed: u64,
}

/// Everything needed to rebuild an [`ErrorModel`] from its dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorModelArtifact {
    pub features: Vec<String>,
    pub transform: TransformSpec,
    pub kernel: KernelParams,
    pub alpha: Vec<f64>,
    pub jitter: f64,
    pub log_marginal_likelihood: f64,
    /// Dataset rows the transforms and the GP were fitted on.
    pub train_rows: Vec<usize>,
    pub config: ModelConfig,
    pub seed: u64,
}

impl ErrorModel {
    /// Fits transforms and GP hyperparameters on `rows` of the dataset only.
    pub fn train(ds: &VEDataset, rows: &[usize], features: &[String], config: &ModelConfig, seed: u64) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Input("no training rows".into()));
        }
        if features.is_empty() {
            return Err(Error::Input("no features".into()));
        }
        let (raw, targets) = raw_rows(ds, rows, features)?;
        let transform = TransformSpec::fit(features, &raw, &targets, &config.transform)?;
        let scaled = transform.apply_rows(&raw, &targets)?;
        if scaled.dropped > 0 {
            return Err(Error::Fit("training rows fall outside their own transform domain".into()));
        }
        let weights: Vec<f64> = rows.iter().map(|&r| ds.samples[r].weight).collect();
        let alpha = alpha_from_weights(&weights, scaled_base_alpha(&transform, config.base_alpha))?;
        let gp = GPModel::fit(scaled.x, scaled.y, alpha, &config.fit, seed)?;
        Ok(Self { features: features.to_vec(), transform, gp, train_rows: rows.to_vec(), config: config.clone(), seed })
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn transform(&self) -> &TransformSpec {
        &self.transform
    }

    pub fn gp(&self) -> &GPModel {
        &self.gp
    }

    pub fn train_rows(&self) -> &[usize] {
        &self.train_rows
    }

    /// Transforms dataset rows with the fitted (training-only) transforms.
    pub fn scale_rows(&self, ds: &VEDataset, rows: &[usize]) -> Result<ScaledRows> {
        let (raw, targets) = raw_rows(ds, rows, &self.features)?;
        let t = self.transform.apply_rows(&raw, &targets)?;
        Ok(ScaledRows { rows: t.kept.iter().map(|&i| rows[i]).collect(), x: t.x, y: t.y, dropped: t.dropped })
    }

    /// Predictions (with white noise) and observed scaled targets for dataset rows.
    pub fn predict_rows(&self, ds: &VEDataset, rows: &[usize]) -> Result<(ScaledRows, Vec<Predictive>)> {
        let scaled = self.scale_rows(ds, rows)?;
        let preds = self.gp.predict_batch(&scaled.x, true)?;
        Ok((scaled, preds))
    }

    pub fn artifact(&self) -> ErrorModelArtifact {
        ErrorModelArtifact {
            features: self.features.clone(),
            transform: self.transform.clone(),
            kernel: self.gp.params().clone(),
            alpha: self.gp.alpha().to_vec(),
            jitter: self.gp.jitter(),
            log_marginal_likelihood: self.gp.log_marginal_likelihood(),
            train_rows: self.train_rows.clone(),
            config: self.config.clone(),
            seed: self.seed,
        }
    }

    /// Rebuilds the model by re-conditioning on the recorded rows.
    pub fn from_artifact(a: &ErrorModelArtifact, ds: &VEDataset) -> Result<Self> {
        let (raw, targets) = raw_rows(ds, &a.train_rows, &a.features)?;
        let scaled = a.transform.apply_rows(&raw, &targets)?;
        if scaled.dropped > 0 {
            return Err(Error::Input("artifact does not match the dataset".into()));
        }
        let gp = GPModel::new(a.kernel.clone(), scaled.x, scaled.y, a.alpha.clone())?;
        Ok(Self {
            features: a.features.clone(),
            transform: a.transform.clone(),
            gp,
            train_rows: a.train_rows.clone(),
            config: a.config.clone(),
            seed: a.seed,
        })
    }
}

/// Min-max scaling by `range` divides target variances by `range²`.
pub fn scaled_base_alpha(transform: &TransformSpec, base_alpha: f64) -> f64 {
    match transform.target.scale.bounds {
        Some((lo, hi)) => base_alpha / (hi - lo).powi(2),
        None => base_alpha,
    }
}

fn raw_rows(ds: &VEDataset, rows: &[usize], features: &[String]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let idx: Vec<usize> = features.iter().map(|f| ds.feature_index(f)).collect::<Result<_>>()?;
    let mut raw = Vec::with_capacity(rows.len());
    let mut targets = Vec::with_capacity(rows.len());
    for &r in rows {
        let s = ds.samples.get(r).ok_or_else(|| Error::Input(format!("row {r} out of range")))?;
        let v: Vec<f64> = s.features.values().collect();
        raw.push(idx.iter().map(|&i| v[i]).collect());
        targets.push(s.target_cvrmse);
    }
    Ok((raw, targets))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::features::{feature_schema, FeatureVector};
    use crate::series::CalendarWindow;
    use crate::ve::{compute_weights, Provenance, VEPair, VESample};
    use chrono::NaiveDate;
    use rand::{Rng, SeedableRng};

    /// A dataset whose target depends smoothly on two features, over `subs` substations.
    pub(crate) fn planted_dataset(n: usize, subs: usize, seed: u64) -> VEDataset {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let names: Vec<String> = feature_schema().into_iter().map(|f| f.name).collect();
        let d0 = NaiveDate::from_ymd_opt(2021, 1, 4).unwrap();
        let mut samples: Vec<VESample> = (0..n)
            .map(|i| {
                let vals: Vec<f64> = names.iter().map(|_| rng.random::<f64>()).collect();
                let target = 0.05 + 0.2 * vals[0] + 0.1 * (3.0 * vals[7]).sin().abs() + 0.01 * rng.random::<f64>();
                let k = (i % 40) as i64;
                VESample {
                    pair: VEPair {
                        substation_id: format!("S{:02}", i % subs + 1),
                        calibration_window: CalendarWindow::weekly(d0),
                        validation_window: CalendarWindow::weekly(d0 + chrono::Duration::days(k)),
                        season: "2020-2021".into(),
                    },
                    features: FeatureVector::new(names.iter().cloned().zip(vals).collect()).unwrap(),
                    target_cvrmse: target,
                    weight: 1.0,
                }
            })
            .collect();
        compute_weights(&mut samples);
        VEDataset::new(samples, names, Provenance { config_hash: "test".into(), seed }).unwrap()
    }

    pub(crate) fn quick_config() -> ModelConfig {
        ModelConfig { fit: FitOptions { restarts: 2, hyperopt_max_n: 200, ..FitOptions::default() }, ..ModelConfig::default() }
    }

    #[test]
    fn artifact_round_trip_reproduces_predictions() {
        let ds = planted_dataset(150, 3, 1);
        let features = vec!["power_variation".to_string(), "max_temperature".to_string()];
        let rows: Vec<usize> = (0..100).collect();
        let m = ErrorModel::train(&ds, &rows, &features, &quick_config(), 4).unwrap();
        let json = serde_json::to_string(&m.artifact()).unwrap();
        let back: ErrorModelArtifact = serde_json::from_str(&json).unwrap();
        let m2 = ErrorModel::from_artifact(&back, &ds).unwrap();
        let test: Vec<usize> = (100..150).collect();
        let (_, a) = m.predict_rows(&ds, &test).unwrap();
        let (_, b) = m2.predict_rows(&ds, &test).unwrap();
        assert_eq!(a, b);
        assert_eq!(m2.train_rows(), &rows[..]);
    }

    #[test]
    fn unknown_feature_is_rejected() {
        let ds = planted_dataset(40, 2, 1);
        let err = ErrorModel::train(&ds, &[0, 1, 2], &["nope".into()], &quick_config(), 0).unwrap_err();
        assert_eq!(err, Error::UnknownFeature("nope".into()));
    }
}
