//! Error-structure views: 1-D curves and 2-D surfaces of predicted error and
//! uncertainty over a feature lattice, with sample density and domain flags.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ErrorModel;
use crate::ve::VEDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PinMode {
    #[default]
    WeightedMedian,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub resolution: usize,
    pub extend_fraction: f64,
    pub pin: PinMode,
    /// Half-width of the 1-D band in standard deviations.
    pub band_sigmas: f64,
    /// Explicit pins in raw feature units; they override `pin` for the named features.
    #[serde(default)]
    pub custom_pins: BTreeMap<String, f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            resolution: 50,
            extend_fraction: 0.25,
            pin: PinMode::WeightedMedian,
            band_sigmas: 2.0,
            custom_pins: BTreeMap::new(),
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 2 {
            return Err(Error::Input("grid resolution must be at least 2".into()));
        }
        if !(self.extend_fraction >= 0.0 && self.extend_fraction.is_finite()) {
            return Err(Error::Input("extend_fraction must be finite and non-negative".into()));
        }
        if !(self.band_sigmas > 0.0) {
            return Err(Error::Input("band_sigmas must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub feature: String,
    /// Lattice in transformed-scaled space.
    pub values: Vec<f64>,
    /// Lattice mapped back to raw feature units where the inverse exists.
    pub labels: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub coords: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub in_domain: bool,
    pub density: usize,
    /// Predicted mean mapped back to CV(RMSE) units.
    pub mean_backtransformed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSurface {
    pub axes: Vec<GridAxis>,
    /// Non-axis features and their pinned scaled values.
    pub fixed: Vec<(String, f64)>,
    /// Row-major, first axis outermost.
    pub cells: Vec<GridCell>,
    pub band_sigmas: f64,
}

impl GridSurface {
    pub fn cell(&self, idx: &[usize]) -> &GridCell {
        let flat = match idx {
            [i] => *i,
            [i, j] => i * self.axes[1].values.len() + j,
            _ => panic!("surfaces have one or two axes"),
        };
        &self.cells[flat]
    }
}

/// Lattice spanning the training range extended by `extend · range` on both sides.
pub fn lattice(train_values: &[f64], resolution: usize, extend: f64) -> Result<Vec<f64>> {
    if train_values.is_empty() || resolution < 2 {
        return Err(Error::Input("lattice needs training values and resolution >= 2".into()));
    }
    let lo = train_values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = train_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = if hi > lo { hi - lo } else { 1.0 };
    let (a, b) = (lo - extend * range, hi + extend * range);
    let step = (b - a) / (resolution - 1) as f64;
    let mut v: Vec<f64> = (0..resolution).map(|i| a + step * i as f64).collect();
    // pin the end exactly so extend = 0 never leaves the range through rounding
    v[resolution - 1] = b;
    Ok(v)
}

fn nearest(lattice: &[f64], x: f64) -> usize {
    let pos = lattice.partition_point(|v| *v < x);
    if pos == 0 {
        0
    } else if pos == lattice.len() {
        lattice.len() - 1
    } else if x - lattice[pos - 1] <= lattice[pos] - x {
        pos - 1
    } else {
        pos
    }
}

/// Per-cell counts of points, each assigned to its nearest lattice cell.
pub fn density_map(points: &[Vec<f64>], axes: &[Vec<f64>]) -> Result<Vec<usize>> {
    if axes.is_empty() || axes.len() > 2 {
        return Err(Error::Input("density maps have one or two axes".into()));
    }
    let dims: Vec<usize> = axes.iter().map(|a| a.len()).collect();
    let mut counts = vec![0; dims.iter().product()];
    for p in points {
        if p.len() != axes.len() {
            return Err(Error::DimensionMismatch { expected: axes.len(), got: p.len() });
        }
        let flat = match axes.len() {
            1 => nearest(&axes[0], p[0]),
            _ => nearest(&axes[0], p[0]) * dims[1] + nearest(&axes[1], p[1]),
        };
        counts[flat] += 1;
    }
    Ok(counts)
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Counter-clockwise convex hull (monotone chain), collinear points dropped.
pub fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn inside_convex(hull: &[(f64, f64)], p: (f64, f64)) -> bool {
    let scale = hull.iter().fold(1.0f64, |m, q| m.max(q.0.abs()).max(q.1.abs()));
    (0..hull.len()).all(|i| cross(hull[i], hull[(i + 1) % hull.len()], p) >= -1e-12 * scale * scale)
}

/// In-domain flags: training range in 1-D, convex hull of the projected points in 2-D
/// (bounding box when the points are collinear).
pub fn domain_mask(points: &[Vec<f64>], axes: &[Vec<f64>]) -> Result<Vec<bool>> {
    if points.is_empty() {
        return Err(Error::Input("domain mask needs training points".into()));
    }
    match axes.len() {
        1 => {
            let lo = points.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
            let hi = points.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
            Ok(axes[0].iter().map(|v| (lo..=hi).contains(v)).collect())
        }
        2 => {
            let pts: Vec<(f64, f64)> = points.iter().map(|p| (p[0], p[1])).collect();
            let hull = convex_hull(&pts);
            let cells = axes[0].iter().flat_map(|x| axes[1].iter().map(move |y| (*x, *y)));
            if hull.len() < 3 {
                tracing::info!("fewer than 3 non-collinear points; using the bounding box as domain");
                let (x0, x1, y0, y1) = pts.iter().fold(
                    (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
                    |(a, b, c, d), p| (a.min(p.0), b.max(p.0), c.min(p.1), d.max(p.1)),
                );
                return Ok(cells.map(|(x, y)| x >= x0 && x <= x1 && y >= y0 && y <= y1).collect());
            }
            Ok(cells.map(|c| inside_convex(&hull, c)).collect())
        }
        _ => Err(Error::Input("domain masks have one or two axes".into())),
    }
}

/// Lower weighted median.
pub fn weighted_median(values: &[f64], weights: &[f64]) -> Result<f64> {
    if values.is_empty() || values.len() != weights.len() {
        return Err(Error::Input("weighted median needs matching, non-empty inputs".into()));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for &i in &order {
        acc += weights[i];
        if acc >= 0.5 * total {
            return Ok(values[i]);
        }
    }
    Ok(values[*order.last().expect("non-empty")])
}

/// Predicts over a lattice of one or two model features, the others pinned.
/// Predictions exclude observation noise.
pub fn grid_predict(model: &ErrorModel, ds: &VEDataset, axes: &[&str], config: &GridConfig) -> Result<GridSurface> {
    config.validate()?;
    if axes.is_empty() || axes.len() > 2 {
        return Err(Error::Input("grids have one or two axes".into()));
    }
    let names = model.features();
    let axis_idx: Vec<usize> = axes
        .iter()
        .map(|a| names.iter().position(|n| n == a).ok_or_else(|| Error::UnknownFeature(a.to_string())))
        .collect::<Result<_>>()?;
    if axes.len() == 2 && axis_idx[0] == axis_idx[1] {
        return Err(Error::Input("grid axes must differ".into()));
    }
    let train = model.scale_rows(ds, model.train_rows())?;
    let weights: Vec<f64> = train.rows.iter().map(|&r| ds.samples[r].weight).collect();
    let column = |j: usize| train.x.iter().map(|r| r[j]).collect::<Vec<f64>>();

    if let Some(unknown) = config.custom_pins.keys().find(|k| !names.contains(k)) {
        return Err(Error::UnknownFeature(unknown.clone()));
    }
    let transform = model.transform();
    let pins: Vec<f64> = (0..names.len())
        .map(|j| match (config.custom_pins.get(&names[j]), config.pin) {
            (Some(raw), _) => transform.features[j].apply(*raw),
            (None, PinMode::WeightedMedian) => weighted_median(&column(j), &weights),
            (None, PinMode::Mean) => Ok(column(j).iter().sum::<f64>() / train.x.len() as f64),
        })
        .collect::<Result<_>>()?;
    let lattices: Vec<Vec<f64>> =
        axis_idx.iter().map(|&j| lattice(&column(j), config.resolution, config.extend_fraction)).collect::<Result<_>>()?;

    let coords: Vec<Vec<f64>> = match lattices.len() {
        1 => lattices[0].iter().map(|v| vec![*v]).collect(),
        _ => lattices[0].iter().flat_map(|x| lattices[1].iter().map(move |y| vec![*x, *y])).collect(),
    };
    let inputs: Vec<Vec<f64>> = coords
        .iter()
        .map(|c| {
            let mut row = pins.clone();
            for (k, &j) in axis_idx.iter().enumerate() {
                row[j] = c[k];
            }
            row
        })
        .collect();
    let preds = model.gp().predict_batch(&inputs, false)?;

    let projected: Vec<Vec<f64>> = train.x.iter().map(|r| axis_idx.iter().map(|&j| r[j]).collect()).collect();
    let density = density_map(&projected, &lattices)?;
    let mask = domain_mask(&projected, &lattices)?;

    let axes_out = axis_idx
        .iter()
        .zip(&lattices)
        .map(|(&j, values)| GridAxis {
            feature: names[j].clone(),
            labels: values.iter().map(|v| transform.features[j].invert(*v).ok()).collect(),
            values: values.clone(),
        })
        .collect();
    let fixed = (0..names.len()).filter(|j| !axis_idx.contains(j)).map(|j| (names[j].clone(), pins[j])).collect();
    let cells = coords
        .into_iter()
        .zip(preds)
        .zip(density.into_iter().zip(mask))
        .map(|((c, p), (density, in_domain))| GridCell {
            coords: c,
            mean: p.mean,
            std: p.std,
            in_domain,
            density,
            mean_backtransformed: transform.invert_target(p.mean).ok(),
        })
        .collect();
    Ok(GridSurface { axes: axes_out, fixed, cells, band_sigmas: config.band_sigmas })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    /// 1-D error curve with a ±band_sigmas·σ band.
    pub curve: Option<GridSurface>,
    /// One 2-D surface (mean, σ and density per cell) per feature pair.
    pub pairs: Vec<GridSurface>,
}

/// The canonical views: the curve along `curve_feature` (when it is a model feature)
/// and a surface for every pair of model features.
pub fn structure_report(model: &ErrorModel, ds: &VEDataset, curve_feature: &str, config: &GridConfig) -> Result<StructureReport> {
    let names = model.features();
    let curve = if names.iter().any(|n| n == curve_feature) {
        Some(grid_predict(model, ds, &[curve_feature], config)?)
    } else {
        tracing::info!(feature = curve_feature, "curve feature not in the model; 1-D view skipped");
        None
    };
    let mut pairs = Vec::new();
    for i in 0..names.len() {
        for j in (i + 1)..names.len() {
            pairs.push(grid_predict(model, ds, &[names[i].as_str(), names[j].as_str()], config)?);
        }
    }
    Ok(StructureReport { curve, pairs })
}

/// Mean σ over the lowest- and highest-density deciles of in-domain cells.
pub fn density_sigma_deciles(surface: &GridSurface) -> Option<(f64, f64)> {
    let mut cells: Vec<&GridCell> = surface.cells.iter().filter(|c| c.in_domain).collect();
    if cells.len() < 10 {
        return None;
    }
    cells.sort_by_key(|c| c.density);
    let k = cells.len().div_ceil(10);
    let mean_std = |cs: &[&GridCell]| cs.iter().map(|c| c.std).sum::<f64>() / cs.len() as f64;
    Some((mean_std(&cells[..k]), mean_std(&cells[cells.len() - k..])))
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Input("spearman needs two equal-length series of length >= 2".into()));
    }
    let rank = |v: &[f64]| {
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < order.len() {
            let mut j = i;
            while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
                j += 1;
            }
            for &o in &order[i..=j] {
                r[o] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    };
    let (ra, rb) = (rank(a), rank(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (va * vb).sqrt())
}
