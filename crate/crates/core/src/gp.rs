//! Gaussian process regression with a Constant×RBF + White kernel and
//! per-sample noise add-ons derived from VE weights.

use faer::linalg::solvers::DenseSolveCore;
use faer::linalg::triangular_solve::solve_lower_triangular_in_place;
use faer::{Mat, Par, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub signal_variance: f64,
    /// One entry (shared) or one per input dimension.
    pub lengthscales: Vec<f64>,
    pub noise_variance: f64,
}

impl KernelParams {
    pub fn isotropic(signal_variance: f64, lengthscale: f64, noise_variance: f64) -> Self {
        Self { signal_variance, lengthscales: vec![lengthscale], noise_variance }
    }

    fn lengthscale(&self, dim: usize) -> f64 {
        if self.lengthscales.len() == 1 {
            self.lengthscales[0]
        } else {
            self.lengthscales[dim]
        }
    }

    fn validate(&self, dims: usize) -> Result<()> {
        if self.lengthscales.len() != 1 && self.lengthscales.len() != dims {
            return Err(Error::DimensionMismatch { expected: dims, got: self.lengthscales.len() });
        }
        let ok = self.signal_variance > 0.0
            && self.noise_variance >= 0.0
            && self.lengthscales.iter().all(|l| *l > 0.0 && l.is_finite())
            && self.signal_variance.is_finite()
            && self.noise_variance.is_finite();
        if !ok {
            return Err(Error::Input(format!("invalid kernel parameters {self:?}")));
        }
        Ok(())
    }

    /// `[ln sv, ln l_1.., ln nv]`.
    fn to_log(&self) -> Vec<f64> {
        let mut v = vec![self.signal_variance.ln()];
        v.extend(self.lengthscales.iter().map(|l| l.ln()));
        v.push(self.noise_variance.ln());
        v
    }

    fn from_log(theta: &[f64]) -> Self {
        let k = theta.len();
        Self {
            signal_variance: theta[0].exp(),
            lengthscales: theta[1..k - 1].iter().map(|t| t.exp()).collect(),
            noise_variance: theta[k - 1].exp(),
        }
    }
}

fn scaled_sqdist(a: &[f64], b: &[f64], p: &KernelParams) -> f64 {
    a.iter().zip(b).enumerate().map(|(d, (x, y))| ((x - y) / p.lengthscale(d)).powi(2)).sum()
}

/// `sv · exp(−‖a − b‖² / 2ℓ²)`; the white term lives only on the training diagonal.
pub fn kernel_eval(a: &[f64], b: &[f64], params: &KernelParams) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    if params.lengthscales.len() != 1 && params.lengthscales.len() != a.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: params.lengthscales.len() });
    }
    Ok(params.signal_variance * (-0.5 * scaled_sqdist(a, b, params)).exp())
}

/// `alpha_i = base · ln(1 + w̄) / ln(1 + w_i)`.
pub fn alpha_from_weights(weights: &[f64], base_alpha: f64) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return Err(Error::Input("no weights".into()));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(Error::Input(format!("weight {w} is not positive")));
    }
    let mean = weights.iter().sum::<f64>() / weights.len() as f64;
    let anchor = mean.ln_1p();
    Ok(weights.iter().map(|w| base_alpha * anchor / w.ln_1p()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperBounds {
    pub signal_variance: (f64, f64),
    pub lengthscale: (f64, f64),
    pub noise_variance: (f64, f64),
}

impl Default for HyperBounds {
    fn default() -> Self {
        Self { signal_variance: (1e-4, 1e2), lengthscale: (1e-2, 1e2), noise_variance: (1e-8, 1.0) }
    }
}

impl HyperBounds {
    fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in
            [("signal_variance", self.signal_variance), ("lengthscale", self.lengthscale), ("noise_variance", self.noise_variance)]
        {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::Input(format!("bounds for {name} must satisfy 0 < low <= high")));
            }
        }
        Ok(())
    }

    fn log_box(&self, n_lengthscales: usize) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![self.signal_variance.0.ln()];
        let mut hi = vec![self.signal_variance.1.ln()];
        lo.extend(std::iter::repeat_n(self.lengthscale.0.ln(), n_lengthscales));
        hi.extend(std::iter::repeat_n(self.lengthscale.1.ln(), n_lengthscales));
        lo.push(self.noise_variance.0.ln());
        hi.push(self.noise_variance.1.ln());
        (lo, hi)
    }
}

/// Mean and standard deviation of a Gaussian predictive distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Predictive {
    pub mean: f64,
    pub std: f64,
    pub includes_noise: bool,
}

impl Predictive {
    pub fn log_density(&self, t: f64) -> f64 {
        let var = self.std * self.std;
        -0.5 * (LN_2PI + var.ln() + (t - self.mean).powi(2) / var)
    }
}

fn check_inputs(x: &[Vec<f64>], y: &[f64], alpha: &[f64]) -> Result<usize> {
    if x.is_empty() {
        return Err(Error::Input("no training samples".into()));
    }
    if y.len() != x.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    if alpha.len() != x.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: alpha.len() });
    }
    let d = x[0].len();
    if let Some(r) = x.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: r.len() });
    }
    if x.iter().flatten().chain(y).chain(alpha).any(|v| !v.is_finite()) || alpha.iter().any(|a| *a < 0.0) {
        return Err(Error::Input("training data must be finite with non-negative alpha".into()));
    }
    Ok(d)
}

/// Noise-free kernel matrix.
fn kernel_matrix(x: &[Vec<f64>], p: &KernelParams) -> Mat<f64> {
    let n = x.len();
    let mut k = Mat::<f64>::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = p.signal_variance;
        for j in 0..i {
            let v = p.signal_variance * (-0.5 * scaled_sqdist(&x[i], &x[j], p)).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

struct Factor {
    llt: faer::linalg::solvers::Llt<f64>,
    jitter: f64,
}

/// Cholesky of `kf + diag(alpha) + nv·I`, adding jitter 1e-10..1e-4 × mean diagonal on failure.
fn factorize(kf: &Mat<f64>, alpha: &[f64], noise_variance: f64) -> Result<Factor> {
    let n = kf.nrows();
    let mut cov = kf.clone();
    for i in 0..n {
        cov[(i, i)] += alpha[i] + noise_variance;
    }
    let mean_diag = (0..n).map(|i| cov[(i, i)]).sum::<f64>() / n as f64;
    if let Ok(llt) = cov.llt(Side::Lower) {
        return Ok(Factor { llt, jitter: 0.0 });
    }
    let mut rel = 1e-10;
    while rel <= 1e-4 * (1.0 + 1e-9) {
        let jitter = rel * mean_diag;
        let mut c = cov.clone();
        for i in 0..n {
            c[(i, i)] += jitter;
        }
        if let Ok(llt) = c.llt(Side::Lower) {
            return Ok(Factor { llt, jitter });
        }
        rel *= 10.0;
    }
    Err(Error::Fit("covariance is not positive definite after jitter escalation".into()))
}

fn solve(f: &Factor, b: &[f64]) -> Vec<f64> {
    use faer::linalg::solvers::Solve;
    let mut rhs = Mat::<f64>::from_fn(b.len(), 1, |i, _| b[i]);
    f.llt.solve_in_place(&mut rhs);
    (0..b.len()).map(|i| rhs[(i, 0)]).collect()
}

fn log_det(f: &Factor) -> f64 {
    let l = f.llt.L();
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

/// Log marginal likelihood and its gradient with respect to `[ln sv, ln l.., ln nv]`.
pub fn lml_with_gradient(params: &KernelParams, x: &[Vec<f64>], y: &[f64], alpha: &[f64]) -> Result<(f64, Vec<f64>)> {
    let d = check_inputs(x, y, alpha)?;
    params.validate(d)?;
    let n = x.len();
    let kf = kernel_matrix(x, params);
    let f = factorize(&kf, alpha, params.noise_variance)?;
    let coef = solve(&f, y);
    let value = -0.5 * y.iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>() - 0.5 * log_det(&f) - 0.5 * n as f64 * LN_2PI;

    let inv = f.llt.inverse();
    let n_ls = params.lengthscales.len();
    let mut grad = vec![0.0; n_ls + 2];
    let mut trace_w = 0.0;
    for i in 0..n {
        for j in 0..n {
            let w = coef[i] * coef[j] - inv[(i, j)];
            let k = kf[(i, j)];
            grad[0] += w * k;
            if i == j {
                trace_w += w;
                continue;
            }
            if n_ls == 1 {
                let l2 = params.lengthscales[0].powi(2);
                let d2: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b).powi(2)).sum();
                grad[1] += w * k * d2 / l2;
            } else {
                for (dim, l) in params.lengthscales.iter().enumerate() {
                    grad[1 + dim] += w * k * (x[i][dim] - x[j][dim]).powi(2) / (l * l);
                }
            }
        }
    }
    for g in grad.iter_mut().take(n_ls + 1) {
        *g *= 0.5;
    }
    grad[n_ls + 1] = 0.5 * params.noise_variance * trace_w;
    Ok((value, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOptions {
    pub bounds: HyperBounds,
    pub restarts: usize,
    /// One lengthscale per input dimension instead of a shared one.
    pub ard: bool,
    /// Hyperparameters are optimized on at most this many rows (0 = all), then the model conditions on every row.
    pub hyperopt_max_n: usize,
    pub max_iter: usize,
    pub initial: KernelParams,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            bounds: HyperBounds::default(),
            restarts: 5,
            ard: false,
            hyperopt_max_n: 300,
            max_iter: 200,
            initial: KernelParams::isotropic(1.0, 1.0, 1e-2),
        }
    }
}

const PREDICT_CHUNK: usize = 64;

/// A conditioned GP. Immutable; prediction is thread-safe.
#[derive(Clone)]
pub struct GPModel {
    params: KernelParams,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    alpha: Vec<f64>,
    factor_l: Mat<f64>,
    coef: Vec<f64>,
    jitter: f64,
    lml: f64,
}

impl std::fmt::Debug for GPModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GPModel")
            .field("params", &self.params)
            .field("n", &self.x.len())
            .field("jitter", &self.jitter)
            .field("lml", &self.lml)
            .finish()
    }
}

impl GPModel {
    /// Conditions a GP with fixed hyperparameters on the data.
    pub fn new(params: KernelParams, x: Vec<Vec<f64>>, y: Vec<f64>, alpha: Vec<f64>) -> Result<Self> {
        let d = check_inputs(&x, &y, &alpha)?;
        params.validate(d)?;
        let kf = kernel_matrix(&x, &params);
        let f = factorize(&kf, &alpha, params.noise_variance)?;
        let coef = solve(&f, &y);
        let n = x.len() as f64;
        let lml = -0.5 * y.iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>() - 0.5 * log_det(&f) - 0.5 * n * LN_2PI;
        Ok(Self { params, x, y, alpha, factor_l: f.llt.L().to_owned(), coef, jitter: f.jitter, lml })
    }

    /// Maximizes the marginal likelihood over the hyperparameters, then conditions on all rows.
    pub fn fit(x: Vec<Vec<f64>>, y: Vec<f64>, alpha: Vec<f64>, options: &FitOptions, seed: u64) -> Result<Self> {
        let d = check_inputs(&x, &y, &alpha)?;
        if x.len() < 2 {
            return Err(Error::Input("fitting needs at least 2 samples".into()));
        }
        if options.restarts == 0 {
            return Err(Error::Input("restarts must be at least 1".into()));
        }
        options.bounds.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (xs, ys, als) = if options.hyperopt_max_n > 0 && x.len() > options.hyperopt_max_n {
            let mut idx = rand::seq::index::sample(&mut rng, x.len(), options.hyperopt_max_n).into_vec();
            idx.sort_unstable();
            (
                idx.iter().map(|&i| x[i].clone()).collect::<Vec<_>>(),
                idx.iter().map(|&i| y[i]).collect::<Vec<_>>(),
                idx.iter().map(|&i| alpha[i]).collect::<Vec<_>>(),
            )
        } else {
            (x.clone(), y.clone(), alpha.clone())
        };

        let n_ls = if options.ard { d } else { 1 };
        let (lo, hi) = options.bounds.log_box(n_ls);
        let mut init = options.initial.clone();
        init.lengthscales = vec![options.initial.lengthscales[0]; n_ls];
        let mut starts = vec![clamp_box(&init.to_log(), &lo, &hi)];
        for _ in 1..options.restarts {
            starts.push(lo.iter().zip(&hi).map(|(a, b)| if a == b { *a } else { rng.random_range(*a..=*b) }).collect());
        }

        let objective = |theta: &[f64]| lml_with_gradient(&KernelParams::from_log(theta), &xs, &ys, &als);
        let results: Vec<Result<(Vec<f64>, f64)>> =
            starts.par_iter().map(|s| maximize(&objective, s, &lo, &hi, options.max_iter)).collect();
        let mut best: Option<(Vec<f64>, f64)> = None;
        let mut last_err = None;
        for r in results {
            match r {
                Ok((theta, v)) => {
                    if best.as_ref().is_none_or(|(_, bv)| v > *bv) {
                        best = Some((theta, v));
                    }
                }
                Err(e) => last_err = Some(e),
            }
        }
        let (theta, _) = best.ok_or_else(|| last_err.unwrap_or_else(|| Error::Fit("no restart succeeded".into())))?;
        Self::new(KernelParams::from_log(&theta), x, y, alpha)
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.lml
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn dims(&self) -> usize {
        self.x[0].len()
    }

    pub fn train_inputs(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn train_targets(&self) -> &[f64] {
        &self.y
    }

    pub fn predict(&self, x: &[f64], include_noise: bool) -> Result<Predictive> {
        Ok(self.predict_batch(std::slice::from_ref(&x.to_vec()), include_noise)?.remove(0))
    }

    /// Posterior mean and std; `include_noise` adds the white noise variance (not the per-sample alpha).
    pub fn predict_batch(&self, xs: &[Vec<f64>], include_noise: bool) -> Result<Vec<Predictive>> {
        let d = self.dims();
        if let Some(r) = xs.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: r.len() });
        }
        let n = self.n();
        let mut out = Vec::with_capacity(xs.len());
        let l = self.factor_l.as_ref();
        for chunk in xs.chunks(PREDICT_CHUNK) {
            // every solve has the same width (short chunks are padded with their first point),
            // so a point's prediction does not depend on the batch it arrives in
            let mut ks = Mat::<f64>::from_fn(n, PREDICT_CHUNK, |i, c| {
                let p = chunk.get(c).unwrap_or(&chunk[0]);
                self.params.signal_variance * (-0.5 * scaled_sqdist(&self.x[i], p, &self.params)).exp()
            });
            let means: Vec<f64> = (0..chunk.len()).map(|c| (0..n).map(|i| ks[(i, c)] * self.coef[i]).sum()).collect();
            solve_lower_triangular_in_place(l, ks.as_mut(), Par::Seq);
            for (c, mean) in means.into_iter().enumerate() {
                let explained: f64 = (0..n).map(|i| ks[(i, c)] * ks[(i, c)]).sum();
                let mut var = (self.params.signal_variance - explained).max(0.0);
                if include_noise {
                    var += self.params.noise_variance;
                }
                out.push(Predictive { mean, std: var.sqrt(), includes_noise: include_noise });
            }
        }
        Ok(out)
    }
}

fn clamp_box(x: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    x.iter().zip(lo.iter().zip(hi)).map(|(v, (a, b))| v.clamp(*a, *b)).collect()
}

/// Box-constrained maximization: projected quasi-Newton (BFGS) steps with Armijo backtracking.
fn maximize(
    f: &(impl Fn(&[f64]) -> Result<(f64, Vec<f64>)> + Sync),
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    max_iter: usize,
) -> Result<(Vec<f64>, f64)> {
    let k = x0.len();
    // minimize phi = -f
    let eval = |x: &[f64]| f(x).map(|(v, g)| (-v, g.into_iter().map(|gi| -gi).collect::<Vec<f64>>()));
    let mut x = clamp_box(x0, lo, hi);
    let (mut phi, mut g) = eval(&x)?;
    let identity = |k: usize| (0..k).map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let mut h: Vec<Vec<f64>> = identity(k);
    for _ in 0..max_iter {
        let pg: Vec<f64> = (0..k).map(|i| (x[i] - g[i]).clamp(lo[i], hi[i]) - x[i]).collect();
        if pg.iter().fold(0.0f64, |m, v| m.max(v.abs())) < 1e-6 {
            break;
        }
        let free: Vec<bool> = (0..k).map(|i| !((x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0))).collect();
        let direction = |h: &Vec<Vec<f64>>| -> Vec<f64> {
            (0..k)
                .map(|i| if free[i] { -(0..k).filter(|j| free[*j]).map(|j| h[i][j] * g[j]).sum::<f64>() } else { 0.0 })
                .collect()
        };
        let mut dir = direction(&h);
        if dir.iter().zip(&g).map(|(d, gi)| d * gi).sum::<f64>() >= 0.0 {
            h = identity(k);
            dir = direction(&h);
        }
        let max_step = dir.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut t = if max_step > 2.0 { 2.0 / max_step } else { 1.0 };
        let mut accepted = None;
        for _ in 0..40 {
            let cand = clamp_box(&x.iter().zip(&dir).map(|(a, d)| a + t * d).collect::<Vec<_>>(), lo, hi);
            let decrease: f64 = g.iter().zip(cand.iter().zip(&x)).map(|(gi, (c, a))| gi * (c - a)).sum();
            if let Ok((p, gn)) = eval(&cand) {
                if p.is_finite() && p <= phi + 1e-4 * decrease {
                    accepted = Some((cand, p, gn));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, pn, gn)) = accepted else {
            if h == identity(k) {
                break;
            }
            h = identity(k);
            continue;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        if sy > 1e-10 {
            let hy: Vec<f64> = (0..k).map(|i| (0..k).map(|j| h[i][j] * yv[j]).sum()).collect();
            let yhy: f64 = yv.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..k {
                for j in 0..k {
                    h[i][j] += (sy + yhy) * s[i] * s[j] / (sy * sy) - (hy[i] * s[j] + s[i] * hy[j]) / sy;
                }
            }
        }
        let improvement = phi - pn;
        x = xn;
        phi = pn;
        g = gn;
        if improvement.abs() < 1e-10 * (1.0 + phi.abs()) {
            break;
        }
    }
    Ok((x, -phi))
}
