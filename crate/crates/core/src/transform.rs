//! Box-Cox and min-max normalization of features and target.
//!
//! A [`TransformSpec`] can only be produced by fitting on a training slice;
//! applying it to other rows never reads them back into the fit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LAMBDA_BOUNDS: (f64, f64) = (-5.0, 5.0);
pub const LAMBDA_TOL: f64 = 1e-6;
pub const MIN_BOXCOX_SAMPLES: usize = 20;

/// Positive shift and Box-Cox exponent; `lambda == None` is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxCox {
    pub shift: f64,
    pub lambda: Option<f64>,
}

impl BoxCox {
    pub const IDENTITY: BoxCox = BoxCox { shift: 0.0, lambda: None };
}

fn log_likelihood(logs: &[f64], lambda: f64) -> f64 {
    let n = logs.len() as f64;
    let y: Vec<f64> = logs.iter().map(|&l| transform_log(l, lambda)).collect();
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    -0.5 * n * var.ln() + (lambda - 1.0) * logs.iter().sum::<f64>()
}

/// Box-Cox of `exp(l)`, written through `expm1` so small lambdas stay accurate.
fn transform_log(l: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        l
    } else {
        (lambda * l).exp_m1() / lambda
    }
}

/// Maximizes `f` on `[a, b]` by golden-section search.
fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Fits shift and lambda by maximum likelihood; constant input gives the identity.
pub fn boxcox_fit(values: &[f64]) -> Result<BoxCox> {
    if values.len() < MIN_BOXCOX_SAMPLES {
        return Err(Error::Input(format!(
            "Box-Cox needs at least {MIN_BOXCOX_SAMPLES} values, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("Box-Cox input must be finite".into()));
    }
    let (min, max) = min_max(values);
    let range = max - min;
    if range == 0.0 {
        return Ok(BoxCox::IDENTITY);
    }
    let shift = (1e-6 * range - min).max(0.0);
    let logs: Vec<f64> = values.iter().map(|v| (v + shift).ln()).collect();
    let lambda = golden_max(|l| log_likelihood(&logs, l), LAMBDA_BOUNDS.0, LAMBDA_BOUNDS.1, LAMBDA_TOL);
    Ok(BoxCox { shift, lambda: Some(lambda) })
}

pub fn boxcox_apply(x: f64, spec: &BoxCox) -> Result<f64> {
    let Some(lambda) = spec.lambda else { return Ok(x) };
    let z = x + spec.shift;
    if !(z > 0.0) {
        return Err(Error::Range(format!("shifted value {z} is not positive")));
    }
    Ok(transform_log(z.ln(), lambda))
}

pub fn boxcox_invert(y: f64, spec: &BoxCox) -> Result<f64> {
    let Some(lambda) = spec.lambda else { return Ok(y) };
    let l = if lambda == 0.0 {
        y
    } else {
        let base = lambda * y;
        if base <= -1.0 {
            return Err(Error::Range(format!("{y} is outside the image of the transform (lambda {lambda})")));
        }
        base.ln_1p() / lambda
    };
    Ok(l.exp() - spec.shift)
}

/// Training bounds for scaling to [0, 1]; `None` marks a constant attribute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub bounds: Option<(f64, f64)>,
}

impl MinMax {
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Input("cannot scale an empty column".into()));
        }
        let (min, max) = min_max(values);
        Ok(Self { bounds: (max > min).then_some((min, max)) })
    }
}

/// Not clamped: values outside the training bounds map outside [0, 1].
pub fn minmax_apply(v: f64, spec: &MinMax) -> f64 {
    match spec.bounds {
        Some((lo, hi)) => (v - lo) / (hi - lo),
        None => 0.0,
    }
}

pub fn minmax_invert(s: f64, spec: &MinMax) -> Result<f64> {
    match spec.bounds {
        Some((lo, hi)) => Ok(lo + s * (hi - lo)),
        None => Err(Error::Range("constant attribute has no scale to invert".into())),
    }
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)))
}

/// Population skewness; zero for constant input.
pub fn skewness(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if m2 == 0.0 {
        return 0.0;
    }
    let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    m3 / m2.powf(1.5)
}

/// Box-Cox followed by min-max for one attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeTransform {
    pub name: String,
    pub boxcox: BoxCox,
    pub scale: MinMax,
}

impl AttributeTransform {
    /// Box-Cox is used when `force_boxcox` or when |skewness| exceeds `skew_threshold`.
    pub fn fit(name: &str, values: &[f64], force_boxcox: bool, skew_threshold: f64) -> Result<Self> {
        let use_bc = values.len() >= MIN_BOXCOX_SAMPLES && (force_boxcox || skewness(values).abs() > skew_threshold);
        let boxcox = if use_bc { boxcox_fit(values)? } else { BoxCox::IDENTITY };
        let transformed: Vec<f64> = values.iter().map(|v| boxcox_apply(*v, &boxcox)).collect::<Result<_>>()?;
        Ok(Self { name: name.to_string(), boxcox, scale: MinMax::fit(&transformed)? })
    }

    pub fn apply(&self, v: f64) -> Result<f64> {
        Ok(minmax_apply(boxcox_apply(v, &self.boxcox)?, &self.scale))
    }

    /// Maps a scaled value back through min-max and only then through Box-Cox.
    pub fn invert(&self, s: f64) -> Result<f64> {
        let t = match self.scale.bounds {
            Some(_) => minmax_invert(s, &self.scale)?,
            None => return Err(Error::Range(format!("attribute {} is constant", self.name))),
        };
        boxcox_invert(t, &self.boxcox)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformPolicy {
    /// Features with |skewness| above this get a Box-Cox step.
    pub skew_threshold: f64,
    pub boxcox_target: bool,
}

impl Default for TransformPolicy {
    fn default() -> Self {
        Self { skew_threshold: 0.5, boxcox_target: true }
    }
}

/// Fitted transforms for a set of feature columns and the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub features: Vec<AttributeTransform>,
    pub target: AttributeTransform,
}

impl TransformSpec {
    /// Fits on training rows only: `rows[i][j]` is feature `names[j]` of training sample `i`.
    pub fn fit(names: &[String], rows: &[Vec<f64>], targets: &[f64], policy: &TransformPolicy) -> Result<Self> {
        if rows.len() != targets.len() {
            return Err(Error::DimensionMismatch { expected: rows.len(), got: targets.len() });
        }
        if let Some(r) = rows.iter().find(|r| r.len() != names.len()) {
            return Err(Error::DimensionMismatch { expected: names.len(), got: r.len() });
        }
        let features = names
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
                AttributeTransform::fit(name, &col, false, policy.skew_threshold)
            })
            .collect::<Result<_>>()?;
        let target = AttributeTransform::fit("target_cvrmse", targets, policy.boxcox_target, policy.skew_threshold)?;
        Ok(Self { features, target })
    }

    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn apply_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.features.len() {
            return Err(Error::DimensionMismatch { expected: self.features.len(), got: row.len() });
        }
        row.iter().zip(&self.features).map(|(v, t)| t.apply(*v)).collect()
    }

    /// Transforms rows, dropping those outside the Box-Cox domain; returns the kept row indices.
    pub fn apply_rows(&self, rows: &[Vec<f64>], targets: &[f64]) -> Result<TransformedRows> {
        let mut out = TransformedRows::default();
        for (i, (row, t)) in rows.iter().zip(targets).enumerate() {
            match (self.apply_row(row), self.target.apply(*t)) {
                (Ok(x), Ok(y)) => {
                    out.x.push(x);
                    out.y.push(y);
                    out.kept.push(i);
                }
                (Err(Error::Range(_)), _) | (_, Err(Error::Range(_))) => out.dropped += 1,
                (Err(e), _) | (_, Err(e)) => return Err(e),
            }
        }
        Ok(out)
    }

    pub fn invert_target(&self, y: f64) -> Result<f64> {
        self.target.invert(y)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransformedRows {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    /// Indices into the input rows that survived.
    pub kept: Vec<usize>,
    pub dropped: usize,
}
