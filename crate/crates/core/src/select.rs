//! Distance correlation and the grouped feature selection / ordering rules.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{feature_schema, FeatureGroup};
use crate::transform::{TransformPolicy, TransformSpec};
use crate::ve::VEDataset;

/// Row sums of the distance matrix `|x_i − x_j|`, via a sort and prefix sums.
fn distance_row_sums(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let total: f64 = x.iter().sum();
    let mut sums = vec![0.0; n];
    let mut below = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        let v = x[i];
        let above = total - below - v;
        let n_above = (n - rank - 1) as f64;
        sums[i] = (rank as f64 * v - below) + (above - n_above * v);
        below += v;
    }
    sums
}

/// Squared sample distance covariance from the pairwise cross term and the row sums.
fn dcov2(x: &[f64], y: &[f64], ax: &[f64], by: &[f64]) -> f64 {
    let n = x.len();
    let mut cross = 0.0;
    for i in 0..n {
        let (xi, yi) = (x[i], y[i]);
        let mut row = 0.0;
        for j in (i + 1)..n {
            row += (xi - x[j]).abs() * (yi - y[j]).abs();
        }
        cross += row;
    }
    let nf = n as f64;
    let sa: f64 = ax.iter().sum();
    let sb: f64 = by.iter().sum();
    let ab: f64 = ax.iter().zip(by).map(|(a, b)| a * b).sum();
    2.0 * cross / (nf * nf) - 2.0 * ab / (nf * nf * nf) + sa * sb / (nf * nf * nf * nf)
}

/// Squared distance variance, with the pairwise sum in closed form.
fn dvar2(x: &[f64], ax: &[f64]) -> f64 {
    let nf = x.len() as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let sq = 2.0 * nf * x.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    let sa: f64 = ax.iter().sum();
    let aa: f64 = ax.iter().map(|a| a * a).sum();
    sq / (nf * nf) - 2.0 * aa / (nf * nf * nf) + sa * sa / (nf * nf * nf * nf)
}

/// Precomputed per-column quantities for repeated dcor calls.
#[derive(Debug, Clone)]
pub struct DcorColumn {
    values: Vec<f64>,
    row_sums: Vec<f64>,
    dvar2: f64,
}

impl DcorColumn {
    pub fn new(values: Vec<f64>) -> Self {
        let row_sums = distance_row_sums(&values);
        let dvar2 = dvar2(&values, &row_sums).max(0.0);
        Self { values, row_sums, dvar2 }
    }

    pub fn is_constant(&self) -> bool {
        self.dvar2 <= 0.0
    }

    pub fn dcor(&self, other: &DcorColumn) -> Result<f64> {
        if self.values.len() != other.values.len() {
            return Err(Error::DimensionMismatch { expected: self.values.len(), got: other.values.len() });
        }
        if self.values.len() < 4 {
            return Err(Error::Input("dcor needs at least 4 observations".into()));
        }
        if self.is_constant() || other.is_constant() {
            return Ok(0.0);
        }
        let c = dcov2(&self.values, &other.values, &self.row_sums, &other.row_sums).max(0.0);
        Ok((c / (self.dvar2 * other.dvar2).sqrt()).sqrt().min(1.0))
    }
}

/// Sample distance correlation in [0, 1]; 0 when either side is constant.
pub fn dcor(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    DcorColumn::new(x.to_vec()).dcor(&DcorColumn::new(y.to_vec()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionScope {
    /// Redundancy is checked against every selected feature.
    #[default]
    AcrossGroups,
    /// Only against selected features of the same group.
    WithinGroup,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    pub per_group: usize,
    pub redundancy_threshold: f64,
    pub scope: ExclusionScope,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { per_group: 3, redundancy_threshold: 0.8, scope: ExclusionScope::AcrossGroups }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub feature: String,
    pub group: FeatureGroup,
    pub dcor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRanking {
    pub group: FeatureGroup,
    pub ranked: Vec<RankedFeature>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub feature: String,
    pub conflicts_with: String,
    pub dcor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub groups: Vec<GroupRanking>,
    pub selected: Vec<RankedFeature>,
    pub exclusions: Vec<Exclusion>,
    /// Incremental ordering of every selected feature.
    pub ordering: Vec<String>,
    /// Pairwise dcor among selected features, in `selected` order.
    pub selected_pairwise: Vec<Vec<f64>>,
}

/// A named, grouped feature column (already transformed).
#[derive(Debug, Clone)]
pub struct FeatureColumn {
    pub name: String,
    pub group: FeatureGroup,
    pub values: Vec<f64>,
}

fn by_dcor_then_name(a: &RankedFeature, b: &RankedFeature) -> std::cmp::Ordering {
    b.dcor.total_cmp(&a.dcor).then_with(|| a.feature.cmp(&b.feature))
}

/// Greedy selection over all features in descending dcor-with-target order.
///
/// A feature is taken when its group still has room and its dcor with every
/// already-selected feature in scope is at most the threshold. Constant
/// features are never selected.
pub fn select_features(columns: &[FeatureColumn], target: &[f64], config: &SelectionConfig) -> Result<SelectionReport> {
    let target = DcorColumn::new(target.to_vec());
    let prepared: Vec<DcorColumn> = columns.par_iter().map(|c| DcorColumn::new(c.values.clone())).collect();
    let scores: Vec<f64> = prepared.par_iter().map(|c| c.dcor(&target)).collect::<Result<_>>()?;

    let mut ranked: Vec<(usize, RankedFeature)> = columns
        .iter()
        .zip(&scores)
        .enumerate()
        .map(|(i, (c, s))| (i, RankedFeature { feature: c.name.clone(), group: c.group, dcor: *s }))
        .collect();
    ranked.sort_by(|a, b| by_dcor_then_name(&a.1, &b.1));

    let mut selected: Vec<(usize, RankedFeature)> = Vec::new();
    let mut exclusions = Vec::new();
    for (i, feat) in &ranked {
        if prepared[*i].is_constant() {
            continue;
        }
        if selected.iter().filter(|(_, s)| s.group == feat.group).count() >= config.per_group {
            continue;
        }
        let mut conflict = None;
        for (j, s) in &selected {
            if config.scope == ExclusionScope::WithinGroup && s.group != feat.group {
                continue;
            }
            let d = prepared[*i].dcor(&prepared[*j])?;
            if d > config.redundancy_threshold {
                conflict = Some(Exclusion { feature: feat.feature.clone(), conflicts_with: s.feature.clone(), dcor: d });
                break;
            }
        }
        match conflict {
            Some(e) => exclusions.push(e),
            None => selected.push((*i, feat.clone())),
        }
    }
    for g in FeatureGroup::ALL {
        let n = selected.iter().filter(|(_, s)| s.group == g).count();
        if n < config.per_group {
            tracing::info!(group = g.as_str(), selected = n, "group yields fewer features than requested");
        }
    }

    let selected_pairwise = selected
        .iter()
        .map(|(i, _)| selected.iter().map(|(j, _)| prepared[*i].dcor(&prepared[*j])).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let groups = FeatureGroup::ALL
        .iter()
        .map(|g| GroupRanking {
            group: *g,
            ranked: ranked.iter().filter(|(_, r)| r.group == *g).map(|(_, r)| r.clone()).collect(),
        })
        .collect();
    let selected: Vec<RankedFeature> = selected.into_iter().map(|(_, r)| r).collect();
    let ordering = incremental_order(&selected);
    Ok(SelectionReport { groups, selected, exclusions, ordering, selected_pairwise })
}

fn incremental_order(selected: &[RankedFeature]) -> Vec<String> {
    let mut remaining: Vec<&RankedFeature> = selected.iter().collect();
    remaining.sort_by(|a, b| by_dcor_then_name(a, b));
    let mut counts: Vec<(FeatureGroup, usize)> = Vec::new();
    let mut order = Vec::new();
    while !remaining.is_empty() {
        let count = |g: FeatureGroup| counts.iter().find(|(h, _)| *h == g).map_or(0, |(_, c)| *c);
        let least = remaining.iter().map(|r| count(r.group)).min().expect("non-empty");
        // remaining is sorted, so the first feature of a least-represented group is the best pick
        let pos = remaining.iter().position(|r| count(r.group) == least).expect("exists");
        let pick = remaining.remove(pos);
        match counts.iter_mut().find(|(h, _)| *h == pick.group) {
            Some((_, c)) => *c += 1,
            None => counts.push((pick.group, 1)),
        }
        order.push(pick.feature.clone());
    }
    order
}

/// Transformed columns of every schema feature, and the transformed target,
/// with transforms fitted on the whole dataset.
pub fn dataset_columns(ds: &VEDataset, policy: &TransformPolicy) -> Result<(Vec<FeatureColumn>, Vec<f64>)> {
    let schema = feature_schema();
    let names: Vec<String> = ds.feature_names.clone();
    let groups: Vec<FeatureGroup> = names
        .iter()
        .map(|n| schema.iter().find(|f| &f.name == n).map(|f| f.group).ok_or_else(|| Error::UnknownFeature(n.clone())))
        .collect::<Result<_>>()?;
    let rows = ds.matrix(&names)?;
    let targets = ds.targets();
    let spec = TransformSpec::fit(&names, &rows, &targets, policy)?;
    let t = spec.apply_rows(&rows, &targets)?;
    let columns = names
        .into_iter()
        .zip(groups)
        .enumerate()
        .map(|(j, (name, group))| FeatureColumn { name, group, values: t.x.iter().map(|r| r[j]).collect() })
        .collect();
    Ok((columns, t.y))
}

/// Selection over a whole VE dataset.
pub fn select_from_dataset(ds: &VEDataset, policy: &TransformPolicy, config: &SelectionConfig) -> Result<SelectionReport> {
    let (columns, target) = dataset_columns(ds, policy)?;
    select_features(&columns, &target, config)
}

/// The first `k` features of the incremental ordering.
pub fn order_features(report: &SelectionReport, k: usize) -> Result<Vec<String>> {
    if k == 0 || k > report.ordering.len() {
        return Err(Error::Input(format!("k = {k} outside 1..={}", report.ordering.len())));
    }
    Ok(report.ordering[..k].to_vec())
}
