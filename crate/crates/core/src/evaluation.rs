//! Probabilistic and deterministic scores, the interpolation and
//! leave-one-substation-out splits, and the size / feature-count sweeps.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::Predictive;
use crate::model::{ErrorModel, ModelConfig};
use crate::ve::VEDataset;

/// Two-sided 95% standard-normal quantile.
pub const Z95: f64 = 1.959964;

fn check_lengths(preds: &[Predictive], observed: &[f64]) -> Result<()> {
    if preds.len() != observed.len() {
        return Err(Error::DimensionMismatch { expected: preds.len(), got: observed.len() });
    }
    if preds.is_empty() {
        return Err(Error::Input("no predictions".into()));
    }
    Ok(())
}

/// Negative log predictive density, averaged over points.
pub fn nlpd(preds: &[Predictive], observed: &[f64]) -> Result<f64> {
    check_lengths(preds, observed)?;
    if preds.iter().any(|p| !(p.std > 0.0)) {
        return Err(Error::UndefinedMetric("prediction with zero std".into()));
    }
    Ok(-preds.iter().zip(observed).map(|(p, t)| p.log_density(*t)).sum::<f64>() / preds.len() as f64)
}

pub fn mse(preds: &[Predictive], observed: &[f64]) -> Result<f64> {
    check_lengths(preds, observed)?;
    Ok(preds.iter().zip(observed).map(|(p, t)| (p.mean - t).powi(2)).sum::<f64>() / preds.len() as f64)
}

/// Fraction of observations inside `mean ± 1.959964·std`.
pub fn coverage95(preds: &[Predictive], observed: &[f64]) -> Result<f64> {
    check_lengths(preds, observed)?;
    let inside = preds.iter().zip(observed).filter(|(p, t)| (*t - p.mean).abs() <= Z95 * p.std).count();
    Ok(inside as f64 / preds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n_test: usize,
    pub mse: f64,
    pub nlpd: f64,
    pub coverage95: f64,
}

impl Metrics {
    pub fn compute(preds: &[Predictive], observed: &[f64]) -> Result<Self> {
        Ok(Self {
            n_test: preds.len(),
            mse: mse(preds, observed)?,
            nlpd: nlpd(preds, observed)?,
            coverage95: coverage95(preds, observed)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Interpolation,
    Extrapolation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    /// "all" for interpolation, the held-out substation id otherwise.
    pub fold: String,
    pub metrics: Metrics,
    /// Test rows outside the training transform domain.
    pub dropped_test: usize,
    /// Mean squared error of the back-transformed predictive medians, in CV(RMSE) units.
    pub mse_original: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub train_rows: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub test_rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub n_train: usize,
    pub features: Vec<String>,
    pub seed: u64,
    /// Metrics over the pooled predictions of every fold.
    pub overall: Metrics,
    pub min: Metrics,
    pub max: Metrics,
    pub folds: Vec<FoldReport>,
    pub leakage_audit_passed: bool,
}

impl EvalReport {
    /// Drops the row lists (kept only for auditing).
    pub fn compact(mut self) -> Self {
        for f in &mut self.folds {
            f.train_rows = Vec::new();
            f.test_rows = Vec::new();
        }
        self
    }
}

struct FoldOutcome {
    report: FoldReport,
    preds: Vec<Predictive>,
    observed: Vec<f64>,
    audit: bool,
}

fn run_fold(
    ds: &VEDataset,
    fold: String,
    train: Vec<usize>,
    test: Vec<usize>,
    features: &[String],
    config: &ModelConfig,
    seed: u64,
) -> Result<FoldOutcome> {
    let model = ErrorModel::train(ds, &train, features, config, seed)?;
    let (scaled, preds) = model.predict_rows(ds, &test)?;
    if preds.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, available: 0 });
    }
    let metrics = Metrics::compute(&preds, &scaled.y)?;
    let back: Vec<(f64, f64)> = preds
        .iter()
        .zip(&scaled.rows)
        .filter_map(|(p, r)| Some((model.transform().invert_target(p.mean).ok()?, ds.samples[*r].target_cvrmse)))
        .collect();
    let mse_original =
        (!back.is_empty()).then(|| back.iter().map(|(a, b)| (a - b).powi(2)).sum::<f64>() / back.len() as f64);
    // transforms and hyperparameters saw exactly the training rows, none of which is a test row
    let mut sorted_train = train.clone();
    sorted_train.sort_unstable();
    let audit = model.train_rows() == &train[..] && test.iter().all(|t| sorted_train.binary_search(t).is_err());
    Ok(FoldOutcome {
        report: FoldReport { fold, metrics, dropped_test: scaled.dropped, mse_original, train_rows: train, test_rows: test },
        preds,
        observed: scaled.y,
        audit,
    })
}

fn assemble(split: Split, n: usize, features: &[String], seed: u64, outcomes: Vec<FoldOutcome>) -> Result<EvalReport> {
    if outcomes.is_empty() {
        return Err(Error::Input("no folds produced predictions".into()));
    }
    let preds: Vec<Predictive> = outcomes.iter().flat_map(|o| o.preds.iter().copied()).collect();
    let observed: Vec<f64> = outcomes.iter().flat_map(|o| o.observed.iter().copied()).collect();
    let overall = Metrics::compute(&preds, &observed)?;
    let fold_metrics: Vec<Metrics> = outcomes.iter().map(|o| o.report.metrics).collect();
    let pick = |f: fn(f64, f64) -> f64| Metrics {
        n_test: fold_metrics.iter().map(|m| m.n_test).reduce(|a, b| f(a as f64, b as f64) as usize).unwrap_or(0),
        mse: fold_metrics.iter().map(|m| m.mse).reduce(f).unwrap_or(f64::NAN),
        nlpd: fold_metrics.iter().map(|m| m.nlpd).reduce(f).unwrap_or(f64::NAN),
        coverage95: fold_metrics.iter().map(|m| m.coverage95).reduce(f).unwrap_or(f64::NAN),
    };
    let (min, max) = (pick(f64::min), pick(f64::max));
    let leakage_audit_passed = outcomes.iter().all(|o| o.audit);
    Ok(EvalReport {
        split,
        n_train: n,
        features: features.to_vec(),
        seed,
        overall,
        min,
        max,
        folds: outcomes.into_iter().map(|o| o.report).collect(),
        leakage_audit_passed,
    })
}

/// `0..len` in the seeded order every random split draws from.
pub fn shuffled_rows(len: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<usize> = (0..len).collect();
    rows.shuffle(&mut rng);
    rows
}

/// The disjoint training and validation rows `interpolation_eval` draws; needs `len >= 2 * n`.
pub fn interpolation_split(len: usize, n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rows = shuffled_rows(len, seed);
    let test = rows[n..2 * n].to_vec();
    rows.truncate(n);
    (rows, test)
}

/// Random disjoint training and validation subsets of size `n` each.
pub fn interpolation_eval(ds: &VEDataset, n: usize, features: &[String], config: &ModelConfig, seed: u64) -> Result<EvalReport> {
    if n == 0 || ds.len() < 2 * n {
        return Err(Error::InsufficientSamples { needed: 2 * n.max(1), available: ds.len() });
    }
    let (train, test) = interpolation_split(ds.len(), n, seed);
    let outcome = run_fold(ds, "all".into(), train, test, features, config, seed)?;
    assemble(Split::Interpolation, n, features, seed, vec![outcome])
}

/// Leave-one-substation-out: train on `n` rows from the other substations,
/// test on the held-out one (subsampled to `n`).
pub fn extrapolation_eval(ds: &VEDataset, n: usize, features: &[String], config: &ModelConfig, seed: u64) -> Result<EvalReport> {
    let ids = ds.substation_ids();
    if ids.len() < 2 {
        return Err(Error::Input("extrapolation needs at least two substations".into()));
    }
    if n == 0 {
        return Err(Error::Input("n must be positive".into()));
    }
    let jobs: Vec<(usize, String)> = ids.into_iter().enumerate().collect();
    let outcomes: Vec<Option<Result<FoldOutcome>>> = jobs
        .par_iter()
        .map(|(k, id)| {
            let fold_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(*k as u64 + 1);
            let mut rng = ChaCha8Rng::seed_from_u64(fold_seed);
            let mut pool: Vec<usize> = (0..ds.len()).filter(|&r| &ds.samples[r].pair.substation_id != id).collect();
            let mut test: Vec<usize> = (0..ds.len()).filter(|&r| &ds.samples[r].pair.substation_id == id).collect();
            if test.is_empty() {
                tracing::warn!(substation = %id, "no samples; fold skipped");
                return None;
            }
            if pool.len() < n {
                return Some(Err(Error::InsufficientSamples { needed: n, available: pool.len() }));
            }
            pool.shuffle(&mut rng);
            pool.truncate(n);
            if test.len() > n {
                test.shuffle(&mut rng);
                test.truncate(n);
            }
            Some(run_fold(ds, id.clone(), pool, test, features, config, fold_seed))
        })
        .collect();
    let outcomes: Vec<FoldOutcome> = outcomes.into_iter().flatten().collect::<Result<_>>()?;
    let mut report = assemble(Split::Extrapolation, n, features, seed, outcomes)?;
    // a training row from the held-out substation would be leakage across the split
    let by_id = |r: &usize| ds.samples[*r].pair.substation_id.as_str();
    report.leakage_audit_passed &= report.folds.iter().all(|f| f.train_rows.iter().all(|r| by_id(r) != f.fold));
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    SampleSize,
    FeatureCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub value: usize,
    pub seed: u64,
    pub interpolation: EvalReport,
    pub extrapolation: EvalReport,
}

/// Mean and sample standard deviation across seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub sd: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub mse: Spread,
    pub nlpd: Spread,
    pub coverage95: Spread,
}

impl SplitSummary {
    fn of(reports: &[&EvalReport]) -> Self {
        let get = |f: fn(&Metrics) -> f64| Spread::of(&reports.iter().map(|r| f(&r.overall)).collect::<Vec<_>>());
        Self { mse: get(|m| m.mse), nlpd: get(|m| m.nlpd), coverage95: get(|m| m.coverage95) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: usize,
    pub features: Vec<String>,
    pub interpolation: SplitSummary,
    pub extrapolation: SplitSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub seeds: Vec<u64>,
    pub points: Vec<SweepPoint>,
    pub runs: Vec<SweepRun>,
    pub leakage_audit_passed: bool,
}

fn run_sweep(
    axis: SweepAxis,
    ds: &VEDataset,
    settings: Vec<(usize, usize, Vec<String>)>,
    config: &ModelConfig,
    seeds: &[u64],
) -> Result<SweepResult> {
    if seeds.is_empty() {
        return Err(Error::Input("at least one seed is required".into()));
    }
    let values: Vec<usize> = settings.iter().map(|s| s.0).collect();
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Input("sweep axis values must be strictly increasing".into()));
    }
    let mut runs = Vec::new();
    let mut points = Vec::new();
    let mut audit = true;
    for (value, n, features) in &settings {
        let mut here = Vec::new();
        for &seed in seeds {
            let interp = interpolation_eval(ds, *n, features, config, seed)?;
            let extrap = extrapolation_eval(ds, *n, features, config, seed)?;
            audit &= interp.leakage_audit_passed && extrap.leakage_audit_passed;
            tracing::info!(axis = ?axis, value, seed, interp_mse = interp.overall.mse, extrap_nlpd = extrap.overall.nlpd, "sweep run");
            here.push(SweepRun { value: *value, seed, interpolation: interp.compact(), extrapolation: extrap.compact() });
        }
        let interp: Vec<&EvalReport> = here.iter().map(|r| &r.interpolation).collect();
        let extrap: Vec<&EvalReport> = here.iter().map(|r| &r.extrapolation).collect();
        points.push(SweepPoint {
            value: *value,
            features: features.clone(),
            interpolation: SplitSummary::of(&interp),
            extrapolation: SplitSummary::of(&extrap),
        });
        runs.extend(here);
    }
    Ok(SweepResult { axis, seeds: seeds.to_vec(), points, runs, leakage_audit_passed: audit })
}

pub const DEFAULT_SIZES: [usize; 7] = [250, 500, 1000, 1500, 2000, 2500, 3000];

/// Training-size sweep with a fixed feature list.
pub fn sweep_size(ds: &VEDataset, sizes: &[usize], features: &[String], config: &ModelConfig, seeds: &[u64]) -> Result<SweepResult> {
    let settings = sizes.iter().map(|&n| (n, n, features.to_vec())).collect();
    run_sweep(SweepAxis::SampleSize, ds, settings, config, seeds)
}

/// Feature-count sweep: for each k, the first k features of `ordering`, at a fixed size.
pub fn sweep_features(
    ds: &VEDataset,
    ordering: &[String],
    ks: &[usize],
    n: usize,
    config: &ModelConfig,
    seeds: &[u64],
) -> Result<SweepResult> {
    if let Some(k) = ks.iter().find(|&&k| k == 0 || k > ordering.len()) {
        return Err(Error::Input(format!("k = {k} outside 1..={}", ordering.len())));
    }
    let settings = ks.iter().map(|&k| (k, n, ordering[..k].to_vec())).collect();
    run_sweep(SweepAxis::FeatureCount, ds, settings, config, seeds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::{planted_dataset, quick_config};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn p(mean: f64, std: f64) -> Predictive {
        Predictive { mean, std, includes_noise: true }
    }

    #[test]
    fn nlpd_cases() {
        let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((nlpd(&[p(0.0, 1.0)], &[0.0]).unwrap() - half_ln_2pi).abs() < 1e-12);
        assert!((nlpd(&[p(0.0, 1.0)], &[1.0]).unwrap() - (half_ln_2pi + 0.5)).abs() < 1e-12);
        assert!(nlpd(&[p(0.0, 0.0)], &[0.0]).is_err());
        assert!(nlpd(&[p(0.0, 1.0)], &[]).is_err());
    }

    fn per_point_nlpd(pr: &Predictive, t: f64) -> f64 {
        let var = pr.std * pr.std;
        0.5 * (2.0 * std::f64::consts::PI * var).ln() + (t - pr.mean).powi(2) / (2.0 * var)
    }

    proptest! {
        #[test]
        fn nlpd_is_mean_of_pointwise(v in proptest::collection::vec((-3.0f64..3.0, 0.05f64..2.0, -3.0f64..3.0), 1..40)) {
            let preds: Vec<Predictive> = v.iter().map(|(m, s, _)| p(*m, *s)).collect();
            let obs: Vec<f64> = v.iter().map(|(_, _, t)| *t).collect();
            let expected = preds.iter().zip(&obs).map(|(pr, t)| per_point_nlpd(pr, *t)).sum::<f64>() / obs.len() as f64;
            prop_assert!((nlpd(&preds, &obs).unwrap() - expected).abs() < 1e-12);
        }

        #[test]
        fn coverage_is_order_independent(v in proptest::collection::vec((-3.0f64..3.0, 0.05f64..2.0, -3.0f64..3.0), 2..40), rot in 0usize..40) {
            let preds: Vec<Predictive> = v.iter().map(|(m, s, _)| p(*m, *s)).collect();
            let obs: Vec<f64> = v.iter().map(|(_, _, t)| *t).collect();
            let k = rot % preds.len();
            let (mut pr, mut ob) = (preds.clone(), obs.clone());
            pr.rotate_left(k);
            ob.rotate_left(k);
            prop_assert_eq!(coverage95(&preds, &obs).unwrap(), coverage95(&pr, &ob).unwrap());
        }
    }

    #[test]
    fn mse_and_coverage_cases() {
        let preds = [p(1.0, 0.5), p(2.0, 0.1)];
        assert_eq!(mse(&preds, &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(coverage95(&preds, &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(coverage95(&preds, &[2.0, 2.2]).unwrap(), 0.0);
    }

    #[test]
    fn calibrated_draws_cover_95_percent() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let preds: Vec<Predictive> = (0..10_000).map(|_| p(rng.random_range(-2.0..2.0), rng.random_range(0.1..1.0))).collect();
        let obs: Vec<f64> = preds.iter().map(|pr| pr.mean + pr.std * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
        let c = coverage95(&preds, &obs).unwrap();
        assert!((0.94..=0.96).contains(&c), "{c}");
    }

    fn feats() -> Vec<String> {
        vec!["power_variation".into(), "max_temperature".into()]
    }

    #[test]
    fn interpolation_split_is_disjoint_and_deterministic() {
        let ds = planted_dataset(300, 3, 2);
        let a = interpolation_eval(&ds, 100, &feats(), &quick_config(), 5).unwrap();
        let b = interpolation_eval(&ds, 100, &feats(), &quick_config(), 5).unwrap();
        assert_eq!(a, b);
        assert!(a.leakage_audit_passed);
        let f = &a.folds[0];
        assert!(f.train_rows.iter().all(|r| !f.test_rows.contains(r)));
        // the scaled target lies in [0, 1]; a useful model beats its variance
        let model = ErrorModel::train(&ds, &f.train_rows, &feats(), &quick_config(), 5).unwrap();
        let scaled = model.scale_rows(&ds, &f.test_rows).unwrap();
        let mean = scaled.y.iter().sum::<f64>() / scaled.y.len() as f64;
        let var = scaled.y.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / scaled.y.len() as f64;
        assert!(a.overall.mse < var, "{} vs {var}", a.overall.mse);
        assert!(interpolation_eval(&ds, 151, &feats(), &quick_config(), 5).is_err());
    }

    #[test]
    fn extrapolation_folds_hold_out_substations() {
        let ds = planted_dataset(240, 2, 3);
        let r = extrapolation_eval(&ds, 80, &feats(), &quick_config(), 1).unwrap();
        assert_eq!(r.folds.len(), 2);
        assert!(r.leakage_audit_passed);
        for f in &r.folds {
            assert!(f.train_rows.iter().all(|&i| ds.samples[i].pair.substation_id != f.fold));
            assert!(f.test_rows.iter().all(|&i| ds.samples[i].pair.substation_id == f.fold));
        }
        assert_eq!(r.overall.n_test, r.folds.iter().map(|f| f.metrics.n_test).sum::<usize>());
        assert!(r.min.mse <= r.max.mse);

        let interp = interpolation_eval(&ds, 80, &feats(), &quick_config(), 1).unwrap();
        // substations are exchangeable here, so holding one out costs little beyond n = 80 sampling noise
        assert!(r.overall.mse <= 3.0 * interp.overall.mse.max(1e-6), "{} vs {}", r.overall.mse, interp.overall.mse);
    }

    #[test]
    fn sweeps_report_every_axis_value() {
        let ds = planted_dataset(200, 2, 4);
        let s = sweep_size(&ds, &[40, 80], &feats(), &quick_config(), &[1, 2]).unwrap();
        assert_eq!(s.points.iter().map(|p| p.value).collect::<Vec<_>>(), vec![40, 80]);
        assert_eq!(s.runs.len(), 4);
        assert!(s.leakage_audit_passed);
        assert!(sweep_size(&ds, &[80, 40], &feats(), &quick_config(), &[1]).is_err());

        let ordering: Vec<String> = vec!["power_variation".into(), "max_temperature".into(), "hdd".into()];
        let f = sweep_features(&ds, &ordering, &[1, 2, 3], 60, &quick_config(), &[1]).unwrap();
        assert_eq!(f.points[0].features, vec!["power_variation"]);
        assert_eq!(f.points.len(), 3);
        assert!(sweep_features(&ds, &ordering, &[4], 60, &quick_config(), &[1]).is_err());
    }
}
