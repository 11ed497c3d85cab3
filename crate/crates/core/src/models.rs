//! Logit-family choice models.
//!
//! The utility of item `i` in choice set `C` for chooser `a` is
//!
//! ```text
//! u_i  [+ gamma_i . x_a  (MNL, CML)]  [+ theta . y_i  (CL, CML)]  [+ v_ia  (intercepts)]
//! ```
//!
//! and choice probabilities are the softmax of the utilities over `C`. The
//! training objective is the weighted negative log-likelihood plus a graph
//! Laplacian penalty on the per-chooser intercepts and a ridge penalty on
//! the global parameters.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::{ChoiceDataset, ChoiceObservation};
use crate::error::{Error, Result};
use crate::graph::SocialGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Item utilities only.
    Logit,
    /// Conditional logit: adds item features.
    Cl,
    /// Multinomial logit: adds chooser features.
    Mnl,
    /// Conditional multinomial logit: both.
    Cml,
}

impl Family {
    pub fn uses_chooser_features(self) -> bool {
        matches!(self, Family::Mnl | Family::Cml)
    }

    pub fn uses_item_features(self) -> bool {
        matches!(self, Family::Cl | Family::Cml)
    }

    /// The richest family the given feature dimensions support.
    pub fn for_features(d_x: usize, d_y: usize) -> Self {
        match (d_x > 0, d_y > 0) {
            (false, false) => Family::Logit,
            (false, true) => Family::Cl,
            (true, false) => Family::Mnl,
            (true, true) => Family::Cml,
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "logit" => Ok(Family::Logit),
            "cl" => Ok(Family::Cl),
            "mnl" => Ok(Family::Mnl),
            "cml" => Ok(Family::Cml),
            other => Err(Error::Config(format!("unknown model family {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub per_chooser_intercepts: bool,
    /// Chooser feature dimension; zero for families that ignore it.
    pub d_x: usize,
    /// Item feature dimension; zero for families that ignore it.
    pub d_y: usize,
    pub n: usize,
    pub k: usize,
}

impl ModelSpec {
    pub fn new(family: Family, per_chooser_intercepts: bool, d_x: usize, d_y: usize, n: usize, k: usize) -> Result<Self> {
        if family.uses_chooser_features() && d_x == 0 {
            return Err(Error::Config(format!("{family:?} requires chooser features")));
        }
        if family.uses_item_features() && d_y == 0 {
            return Err(Error::Config(format!("{family:?} requires item features")));
        }
        Ok(Self {
            family,
            per_chooser_intercepts,
            d_x: if family.uses_chooser_features() { d_x } else { 0 },
            d_y: if family.uses_item_features() { d_y } else { 0 },
            n,
            k,
        })
    }

    pub fn for_dataset(family: Family, per_chooser_intercepts: bool, dataset: &ChoiceDataset) -> Result<Self> {
        Self::new(
            family,
            per_chooser_intercepts,
            dataset.d_x,
            dataset.d_y,
            dataset.n_choosers,
            dataset.n_items,
        )
    }

    fn check_dataset(&self, dataset: &ChoiceDataset) -> Result<()> {
        if dataset.n_choosers != self.n || dataset.n_items != self.k {
            return Err(Error::Config(format!(
                "model is {} choosers x {} items, dataset is {} x {}",
                self.n, self.k, dataset.n_choosers, dataset.n_items
            )));
        }
        if self.family.uses_chooser_features() && dataset.d_x != self.d_x {
            return Err(Error::Config(format!("model expects d_x = {}, dataset has {}", self.d_x, dataset.d_x)));
        }
        if self.family.uses_item_features() && dataset.d_y != self.d_y {
            return Err(Error::Config(format!("model expects d_y = {}, dataset has {}", self.d_y, dataset.d_y)));
        }
        Ok(())
    }
}

/// Parameters of a logit-family model. Also used for gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Global item utilities, length `k`.
    pub u: Array1<f64>,
    /// Chooser-feature coefficients, `k x d_x`.
    pub gamma: Array2<f64>,
    /// Item-feature coefficients, length `d_y`.
    pub theta: Array1<f64>,
    /// Per-chooser intercepts, `k x n`; row `i` is the vector smoothed by
    /// the Laplacian penalty for item `i`.
    pub v: Option<Array2<f64>>,
}

impl ModelParams {
    pub fn zeros(spec: &ModelSpec) -> Self {
        Self {
            u: Array1::zeros(spec.k),
            gamma: Array2::zeros((spec.k, spec.d_x)),
            theta: Array1::zeros(spec.d_y),
            v: spec.per_chooser_intercepts.then(|| Array2::zeros((spec.k, spec.n))),
        }
    }

    pub fn check_shape(&self, spec: &ModelSpec) -> Result<()> {
        let ok = self.u.len() == spec.k
            && self.gamma.dim() == (spec.k, spec.d_x)
            && self.theta.len() == spec.d_y
            && match &self.v {
                Some(v) => spec.per_chooser_intercepts && v.dim() == (spec.k, spec.n),
                None => !spec.per_chooser_intercepts,
            };
        if ok {
            Ok(())
        } else {
            Err(Error::Config("parameter shapes do not match the model spec".into()))
        }
    }

    pub fn len(&self) -> usize {
        self.u.len() + self.gamma.len() + self.theta.len() + self.v.as_ref().map_or(0, |v| v.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flattens in the order `u, gamma (row-major), theta, v (row-major)`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        out.extend(self.u.iter());
        out.extend(self.gamma.iter());
        out.extend(self.theta.iter());
        if let Some(v) = &self.v {
            out.extend(v.iter());
        }
        out
    }

    pub fn from_flat(spec: &ModelSpec, flat: &[f64]) -> Result<Self> {
        let mut p = Self::zeros(spec);
        if flat.len() != p.len() {
            return Err(Error::Argument(format!("expected {} parameters, got {}", p.len(), flat.len())));
        }
        p.assign_flat(flat);
        Ok(p)
    }

    pub(crate) fn assign_flat(&mut self, flat: &[f64]) {
        let mut it = flat.iter().copied();
        for x in self.u.iter_mut() {
            *x = it.next().unwrap();
        }
        for x in self.gamma.iter_mut() {
            *x = it.next().unwrap();
        }
        for x in self.theta.iter_mut() {
            *x = it.next().unwrap();
        }
        if let Some(v) = &mut self.v {
            for x in v.iter_mut() {
                *x = it.next().unwrap();
            }
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.to_flat().iter().map(|x| x * x).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|x| x.is_finite())
    }

    /// Per-chooser utility table `u_i + v_ia` as an `n x k` matrix.
    pub fn chooser_utilities(&self, n: usize) -> Array2<f64> {
        let k = self.u.len();
        Array2::from_shape_fn((n, k), |(a, i)| self.u[i] + self.v.as_ref().map_or(0.0, |v| v[[i, a]]))
    }
}

/// Penalty configuration of the training objective.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'g> {
    /// Laplacian strength; zero disables graph regularization.
    pub lambda: f64,
    /// Ridge strength on `u`, `gamma`, `theta`.
    pub l2: f64,
    /// Also apply the ridge penalty to the per-chooser intercepts.
    pub l2_on_intercepts: bool,
    pub graph: Option<&'g SocialGraph>,
}

impl<'g> Objective<'g> {
    pub fn unregularized() -> Self {
        Self { lambda: 0.0, l2: 0.0, l2_on_intercepts: false, graph: None }
    }

    pub fn new(lambda: f64, l2: f64, graph: Option<&'g SocialGraph>) -> Self {
        Self { lambda, l2, l2_on_intercepts: false, graph }
    }

    fn check(&self) -> Result<()> {
        if self.lambda.is_nan() || self.l2.is_nan() || self.lambda < 0.0 || self.l2 < 0.0 {
            return Err(Error::Config(format!(
                "penalty strengths must be nonnegative (lambda {}, l2 {})",
                self.lambda, self.l2
            )));
        }
        if self.lambda > 0.0 && self.graph.is_none() {
            return Err(Error::Config("Laplacian penalty requires a graph".into()));
        }
        Ok(())
    }
}

fn feature_term(params: &ModelParams, spec: &ModelSpec, obs: &ChoiceObservation, x_a: Option<ArrayView1<'_, f64>>, out: &mut [f64]) -> Result<()> {
    let chooser_x = if spec.family.uses_chooser_features() {
        let x = x_a.ok_or_else(|| Error::Config(format!("{:?} needs chooser features", spec.family)))?;
        if x.len() != spec.d_x {
            return Err(Error::Config(format!("chooser feature length {} != {}", x.len(), spec.d_x)));
        }
        Some(x)
    } else {
        None
    };
    let item_y = if spec.family.uses_item_features() {
        let y = obs
            .item_features
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{:?} needs item features", spec.family)))?;
        if y.ncols() != spec.d_y || y.nrows() != obs.choice_set.len() {
            return Err(Error::Config("item feature matrix has the wrong shape".into()));
        }
        Some(y)
    } else {
        None
    };
    for (pos, &item) in obs.choice_set.iter().enumerate() {
        let mut util = params.u[item];
        if let Some(x) = &chooser_x {
            util += params.gamma.row(item).dot(x);
        }
        if let Some(y) = item_y {
            util += params.theta.dot(&y.row(pos));
        }
        if let Some(v) = &params.v {
            util += v[[item, obs.chooser]];
        }
        out[pos] = util;
    }
    Ok(())
}

/// Utilities of the members of `obs.choice_set`, in set order.
pub fn utilities(params: &ModelParams, spec: &ModelSpec, obs: &ChoiceObservation, x_a: Option<ArrayView1<'_, f64>>) -> Result<Array1<f64>> {
    let mut out = vec![0.0; obs.choice_set.len()];
    feature_term(params, spec, obs, x_a, &mut out)?;
    Ok(Array1::from(out))
}

/// `log(sum(exp(x)))`, shifted by the maximum.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

/// Softmax over a choice set.
pub fn choice_probabilities(util: ArrayView1<'_, f64>) -> Array1<f64> {
    let m = util.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p = util.mapv(|v| (v - m).exp());
    let z = p.sum();
    p /= z;
    p
}

/// Weighted NLL over observations `obs_idx`; accumulates into `grad` when
/// given.
pub(crate) fn nll_over(
    params: &ModelParams,
    spec: &ModelSpec,
    dataset: &ChoiceDataset,
    obs_idx: &[usize],
    mut grad: Option<&mut ModelParams>,
) -> Result<f64> {
    let mut util = Vec::new();
    let mut total = 0.0;
    for &o in obs_idx {
        let obs = &dataset.observations[o];
        util.resize(obs.choice_set.len(), 0.0);
        let x_a = dataset.chooser_feature_row(obs.chooser);
        feature_term(params, spec, obs, x_a, &mut util)?;
        let lse = log_sum_exp(&util);
        total += obs.weight * (lse - util[obs.chosen_index]);
        let Some(g) = grad.as_deref_mut() else { continue };
        if obs.weight == 0.0 {
            continue;
        }
        for (pos, &item) in obs.choice_set.iter().enumerate() {
            let p = (util[pos] - lse).exp();
            let r = obs.weight * (p - if pos == obs.chosen_index { 1.0 } else { 0.0 });
            g.u[item] += r;
            if spec.family.uses_chooser_features() {
                let x = x_a.expect("checked in feature_term");
                g.gamma.row_mut(item).scaled_add(r, &x);
            }
            if spec.family.uses_item_features() {
                let y = obs.item_features.as_ref().expect("checked in feature_term");
                g.theta.scaled_add(r, &y.row(pos));
            }
            if let Some(v) = &mut g.v {
                v[[item, obs.chooser]] += r;
            }
        }
    }
    Ok(total)
}

pub fn negative_log_likelihood(params: &ModelParams, spec: &ModelSpec, dataset: &ChoiceDataset, choosers: &[usize]) -> Result<f64> {
    spec.check_dataset(dataset)?;
    params.check_shape(spec)?;
    nll_over(params, spec, dataset, &dataset.observations_of(choosers), None)
}

/// `(lambda / 2) * sum_i v_i^T L v_i` over the item rows of the intercepts.
pub fn laplacian_penalty(params: &ModelParams, objective: &Objective<'_>) -> Result<f64> {
    objective.check()?;
    if objective.lambda == 0.0 {
        return Ok(0.0);
    }
    let v = params
        .v
        .as_ref()
        .ok_or_else(|| Error::Config("Laplacian penalty requires per-chooser intercepts".into()))?;
    let g = objective.graph.expect("checked");
    if v.ncols() != g.n() {
        return Err(Error::Config(format!("intercepts cover {} choosers, graph has {}", v.ncols(), g.n())));
    }
    let total: f64 = v.rows().into_iter().map(|row| g.edge_quadratic_form(row)).sum();
    Ok(0.5 * objective.lambda * total)
}

pub fn l2_penalty(params: &ModelParams, objective: &Objective<'_>) -> f64 {
    let sq = |a: f64, x: &f64| a + x * x;
    let mut s = params.u.iter().fold(0.0, sq) + params.gamma.iter().fold(0.0, sq) + params.theta.iter().fold(0.0, sq);
    if objective.l2_on_intercepts {
        if let Some(v) = &params.v {
            s += v.iter().fold(0.0, sq);
        }
    }
    0.5 * objective.l2 * s
}

pub fn objective_value(
    params: &ModelParams,
    spec: &ModelSpec,
    dataset: &ChoiceDataset,
    choosers: &[usize],
    objective: &Objective<'_>,
) -> Result<f64> {
    let nll = negative_log_likelihood(params, spec, dataset, choosers)?;
    Ok(nll + laplacian_penalty(params, objective)? + l2_penalty(params, objective))
}

/// Objective value and gradient over a precomputed observation subset.
pub(crate) fn value_and_gradient_over(
    params: &ModelParams,
    spec: &ModelSpec,
    dataset: &ChoiceDataset,
    obs_idx: &[usize],
    objective: &Objective<'_>,
) -> Result<(f64, ModelParams)> {
    let mut grad = ModelParams::zeros(spec);
    let nll = nll_over(params, spec, dataset, obs_idx, Some(&mut grad))?;
    let lap = laplacian_penalty(params, objective)?;
    if objective.lambda > 0.0 {
        let g = objective.graph.expect("checked");
        let v = params.v.as_ref().expect("checked");
        let gv = grad.v.as_mut().expect("same spec");
        for (i, row) in v.rows().into_iter().enumerate() {
            gv.row_mut(i).scaled_add(objective.lambda, &g.laplacian_apply(row));
        }
    }
    let l2 = l2_penalty(params, objective);
    if objective.l2 > 0.0 {
        grad.u.scaled_add(objective.l2, &params.u);
        grad.gamma.scaled_add(objective.l2, &params.gamma);
        grad.theta.scaled_add(objective.l2, &params.theta);
        if objective.l2_on_intercepts {
            if let (Some(gv), Some(v)) = (grad.v.as_mut(), params.v.as_ref()) {
                gv.scaled_add(objective.l2, v);
            }
        }
    }
    Ok((nll + lap + l2, grad))
}

/// Exact gradient of [`objective_value`].
pub fn gradient(
    params: &ModelParams,
    spec: &ModelSpec,
    dataset: &ChoiceDataset,
    choosers: &[usize],
    objective: &Objective<'_>,
) -> Result<ModelParams> {
    spec.check_dataset(dataset)?;
    params.check_shape(spec)?;
    let obs = dataset.observations_of(choosers);
    Ok(value_and_gradient_over(params, spec, dataset, &obs, objective)?.1)
}

/// Sorts `(item, score)` pairs by decreasing score, ties by ascending item.
pub(crate) fn rank_by_score(mut scored: Vec<(usize, f64)>) -> Vec<usize> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.into_iter().map(|(i, _)| i).collect()
}

/// Items of `choice_set` ordered by decreasing utility for `chooser`.
pub fn predict_ranking(
    params: &ModelParams,
    spec: &ModelSpec,
    chooser: usize,
    choice_set: &[usize],
    x_a: Option<ArrayView1<'_, f64>>,
    item_features: Option<ArrayView2<'_, f64>>,
) -> Result<Vec<usize>> {
    if choice_set.is_empty() {
        return Err(Error::Argument("cannot rank an empty choice set".into()));
    }
    let mut obs = ChoiceObservation::new(0, chooser, choice_set.to_vec(), 0);
    obs.item_features = item_features.map(|y| y.to_owned());
    let util = utilities(params, spec, &obs, x_a)?;
    Ok(rank_by_score(choice_set.iter().copied().zip(util.iter().copied()).collect()))
}

/// Ranking of an observation's choice set under a fitted model.
pub fn rank_observation(params: &ModelParams, spec: &ModelSpec, dataset: &ChoiceDataset, obs: &ChoiceObservation) -> Result<Vec<usize>> {
    let util = utilities(params, spec, obs, dataset.chooser_feature_row(obs.chooser))?;
    Ok(rank_by_score(obs.choice_set.iter().copied().zip(util.iter().copied()).collect()))
}

/// JSON form of a fitted model: spec fields, dense global arrays, and the
/// intercepts as `(item, chooser, value)` triplets of nonzero entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsDocument {
    pub family: Family,
    pub per_chooser_intercepts: bool,
    pub d_x: usize,
    pub d_y: usize,
    pub n: usize,
    pub k: usize,
    pub item_ids: Vec<String>,
    pub chooser_ids: Vec<String>,
    pub u: Vec<f64>,
    pub gamma: Vec<Vec<f64>>,
    pub theta: Vec<f64>,
    pub v: Vec<(usize, usize, f64)>,
}

impl ParamsDocument {
    pub fn new(spec: &ModelSpec, params: &ModelParams, dataset: &ChoiceDataset) -> Self {
        let v = params
            .v
            .as_ref()
            .map(|v| {
                v.indexed_iter()
                    .filter(|(_, &x)| x != 0.0)
                    .map(|((i, a), &x)| (i, a, x))
                    .collect()
            })
            .unwrap_or_default();
        Self {
            family: spec.family,
            per_chooser_intercepts: spec.per_chooser_intercepts,
            d_x: spec.d_x,
            d_y: spec.d_y,
            n: spec.n,
            k: spec.k,
            item_ids: dataset.item_ids.clone(),
            chooser_ids: dataset.chooser_ids.clone(),
            u: params.u.to_vec(),
            gamma: params.gamma.rows().into_iter().map(|r| r.to_vec()).collect(),
            theta: params.theta.to_vec(),
            v,
        }
    }

    pub fn spec(&self) -> Result<ModelSpec> {
        ModelSpec::new(self.family, self.per_chooser_intercepts, self.d_x, self.d_y, self.n, self.k)
    }

    pub fn params(&self) -> Result<ModelParams> {
        let spec = self.spec()?;
        let mut p = ModelParams::zeros(&spec);
        if self.u.len() != spec.k || self.gamma.len() != spec.k || self.theta.len() != spec.d_y {
            return Err(Error::Config("parameter document has inconsistent shapes".into()));
        }
        p.u = Array1::from(self.u.clone());
        for (i, row) in self.gamma.iter().enumerate() {
            if row.len() != spec.d_x {
                return Err(Error::Config("gamma row has the wrong length".into()));
            }
            p.gamma.row_mut(i).assign(&ArrayView1::from(row));
        }
        p.theta = Array1::from(self.theta.clone());
        if let Some(v) = &mut p.v {
            for &(i, a, x) in &self.v {
                if i >= spec.k || a >= spec.n {
                    return Err(Error::Config(format!("intercept ({i}, {a}) out of range")));
                }
                v[[i, a]] = x;
            }
        } else if !self.v.is_empty() {
            return Err(Error::Config("intercepts present but disabled in the spec".into()));
        }
        if !p.is_finite() {
            return Err(Error::Config("non-finite parameter".into()));
        }
        Ok(p)
    }

    /// Re-indexes the model onto `dataset`'s identifiers. Fails if the
    /// dataset mentions an item or chooser the model has never seen.
    pub fn params_for(&self, dataset: &ChoiceDataset) -> Result<(ModelSpec, ModelParams)> {
        let spec = self.spec()?;
        let params = self.params()?;
        let item_map = remap(&self.item_ids, &dataset.item_ids, "item")?;
        let chooser_map = remap(&self.chooser_ids, &dataset.chooser_ids, "chooser")?;
        let target = ModelSpec { n: dataset.n_choosers, k: dataset.n_items, ..spec };
        let mut out = ModelParams::zeros(&target);
        for (new, &old) in item_map.iter().enumerate() {
            out.u[new] = params.u[old];
            out.gamma.row_mut(new).assign(&params.gamma.row(old));
            if let (Some(dst), Some(src)) = (out.v.as_mut(), params.v.as_ref()) {
                for (a_new, &a_old) in chooser_map.iter().enumerate() {
                    dst[[new, a_new]] = src[[old, a_old]];
                }
            }
        }
        out.theta = params.theta.clone();
        Ok((target, out))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self)?;
        std::fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&body)?)
    }
}

fn remap(known: &[String], wanted: &[String], what: &str) -> Result<Vec<usize>> {
    let index: std::collections::HashMap<&str, usize> = known.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    wanted
        .iter()
        .map(|id| {
            index
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::Config(format!("{what} {id:?} is unknown to the fitted model")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn logit_spec(k: usize) -> ModelSpec {
        ModelSpec::new(Family::Logit, false, 0, 0, 1, k).unwrap()
    }

    #[test]
    fn family_requirements() {
        assert!(ModelSpec::new(Family::Mnl, false, 0, 0, 1, 2).is_err());
        assert!(ModelSpec::new(Family::Cl, false, 3, 0, 1, 2).is_err());
        assert!(ModelSpec::new(Family::Cml, true, 1, 1, 1, 2).is_ok());
        assert_eq!("CML".parse::<Family>().unwrap(), Family::Cml);
    }

    #[test]
    fn utilities_per_family() {
        let spec = logit_spec(2);
        let mut p = ModelParams::zeros(&spec);
        p.u = array![0.5, -1.0];
        let obs = ChoiceObservation::new(0, 0, vec![0, 1], 0);
        assert_eq!(utilities(&p, &spec, &obs, None).unwrap(), array![0.5, -1.0]);

        let spec = ModelSpec::new(Family::Mnl, false, 2, 0, 1, 2).unwrap();
        let mut p = ModelParams::zeros(&spec);
        p.u = array![0.0, 1.0];
        p.gamma = array![[1.0, 0.0], [0.0, 2.0]];
        let x = array![1.0, 1.0];
        assert_eq!(utilities(&p, &spec, &obs, Some(x.view())).unwrap(), array![1.0, 3.0]);
        assert!(matches!(utilities(&p, &spec, &obs, None), Err(Error::Config(_))));

        let spec = ModelSpec::new(Family::Cl, false, 0, 1, 1, 2).unwrap();
        let mut p = ModelParams::zeros(&spec);
        p.theta = array![2.0];
        let obs_y = obs.clone().with_item_features(array![[0.5], [1.0]]);
        assert_eq!(utilities(&p, &spec, &obs_y, None).unwrap(), array![1.0, 2.0]);
        assert!(matches!(utilities(&p, &spec, &obs, None), Err(Error::Config(_))));
    }

    #[test]
    fn probabilities() {
        let p = choice_probabilities(array![0.0, 0.0, 0.0].view());
        assert!(p.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        let p = choice_probabilities(array![2f64.ln(), 0.0].view());
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(choice_probabilities(array![7.3].view()), array![1.0]);
        let p = choice_probabilities(array![1000.0, -1000.0, 999.0].view());
        assert!((p.sum() - 1.0).abs() < 1e-12 && p.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn nll_examples() {
        let spec = logit_spec(2);
        let p = ModelParams::zeros(&spec);
        let ds = ChoiceDataset::new(1, 2, vec![ChoiceObservation::new(0, 0, vec![0, 1], 0)], None).unwrap();
        assert!((negative_log_likelihood(&p, &spec, &ds, &[0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        let ds3 = ChoiceDataset::new(1, 2, vec![ChoiceObservation::new(0, 0, vec![0, 1], 0).with_weight(3.0)], None).unwrap();
        assert!((negative_log_likelihood(&p, &spec, &ds3, &[0]).unwrap() - 3.0 * 2f64.ln()).abs() < 1e-14);
        assert_eq!(negative_log_likelihood(&p, &spec, &ds, &[]).unwrap(), 0.0);
    }

    #[test]
    fn penalties() {
        let g = SocialGraph::new(2, [(0, 1)]).unwrap();
        let spec = ModelSpec::new(Family::Logit, true, 0, 0, 2, 1).unwrap();
        let mut p = ModelParams::zeros(&spec);
        p.v = Some(array![[1.0, 0.0]]);
        assert_eq!(laplacian_penalty(&p, &Objective::new(2.0, 0.0, Some(&g))).unwrap(), 1.0);
        assert_eq!(laplacian_penalty(&p, &Objective::new(0.0, 0.0, Some(&g))).unwrap(), 0.0);
        p.v = Some(array![[4.0, 4.0]]);
        assert_eq!(laplacian_penalty(&p, &Objective::new(2.0, 0.0, Some(&g))).unwrap(), 0.0);

        let no_v = ModelParams::zeros(&logit_spec(1));
        assert!(matches!(laplacian_penalty(&no_v, &Objective::new(1.0, 0.0, Some(&g))), Err(Error::Config(_))));
        assert!(matches!(laplacian_penalty(&p, &Objective::new(1.0, 0.0, None)), Err(Error::Config(_))));

        let mut q = ModelParams::zeros(&logit_spec(1));
        assert_eq!(l2_penalty(&q, &Objective::new(0.0, 2.0, None)), 0.0);
        q.u = array![3.0];
        assert_eq!(l2_penalty(&q, &Objective::new(0.0, 2.0, None)), 9.0);
        assert_eq!(l2_penalty(&q, &Objective::new(0.0, 4.0, None)), 18.0);

        // intercepts excluded unless switched on
        let obj = Objective::new(0.0, 2.0, None);
        assert_eq!(l2_penalty(&p, &obj), 0.0);
        let obj = Objective { l2_on_intercepts: true, ..obj };
        assert_eq!(l2_penalty(&p, &obj), 32.0);
    }

    #[test]
    fn balanced_gradient_vanishes() {
        let spec = logit_spec(3);
        let obs = (0..3).map(|c| ChoiceObservation::new(c as u64, 0, vec![0, 1, 2], c)).collect();
        let ds = ChoiceDataset::new(1, 3, obs, None).unwrap();
        let g = gradient(&ModelParams::zeros(&spec), &spec, &ds, &[0], &Objective::unregularized()).unwrap();
        assert!(g.u.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn penalty_gradient_is_lambda_l_v() {
        let graph = SocialGraph::new(3, [(0, 1), (1, 2)]).unwrap();
        let spec = ModelSpec::new(Family::Logit, true, 0, 0, 3, 2).unwrap();
        let mut p = ModelParams::zeros(&spec);
        p.v = Some(array![[1.0, -2.0, 0.5], [0.0, 3.0, 1.0]]);
        let ds = ChoiceDataset::new(3, 2, vec![], None).unwrap();
        let obj = Objective::new(0.7, 0.0, Some(&graph));
        let g = gradient(&p, &spec, &ds, &[0, 1, 2], &obj).unwrap();
        let l = graph.laplacian();
        let expected = p.v.as_ref().unwrap().dot(&l) * 0.7;
        for (a, b) in g.v.unwrap().iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn shift_changes_l2_not_nll() {
        let spec = logit_spec(2);
        let mut p = ModelParams::zeros(&spec);
        p.u = array![0.3, -0.1];
        let ds = ChoiceDataset::new(1, 2, vec![ChoiceObservation::new(0, 0, vec![0, 1], 1)], None).unwrap();
        let obj = Objective::new(0.0, 1.0, None);
        let mut q = p.clone();
        q.u += 5.0;
        let a = negative_log_likelihood(&p, &spec, &ds, &[0]).unwrap();
        let b = negative_log_likelihood(&q, &spec, &ds, &[0]).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(l2_penalty(&q, &obj) > l2_penalty(&p, &obj));
        let zero = Objective::unregularized();
        assert_eq!(objective_value(&p, &spec, &ds, &[0], &zero).unwrap(), a);
    }

    #[test]
    fn rankings() {
        let spec = logit_spec(3);
        let mut p = ModelParams::zeros(&spec);
        p.u = array![1.0, 3.0, 2.0];
        assert_eq!(predict_ranking(&p, &spec, 0, &[0, 1, 2], None, None).unwrap(), vec![1, 2, 0]);
        let z = ModelParams::zeros(&spec);
        assert_eq!(predict_ranking(&z, &spec, 0, &[2, 0, 1], None, None).unwrap(), vec![0, 1, 2]);
        assert_eq!(predict_ranking(&p, &spec, 0, &[2], None, None).unwrap(), vec![2]);
        assert!(predict_ranking(&p, &spec, 0, &[], None, None).is_err());
    }

    #[test]
    fn document_roundtrip() {
        let spec = ModelSpec::new(Family::Logit, true, 0, 0, 2, 2).unwrap();
        let mut p = ModelParams::zeros(&spec);
        p.u = array![0.25, -1.5];
        p.v = Some(array![[0.0, 1.0], [2.0, 0.0]]);
        let ds = ChoiceDataset::new(2, 2, vec![], None).unwrap();
        let doc = ParamsDocument::new(&spec, &p, &ds);
        assert_eq!(doc.v.len(), 2);
        let json = serde_json::to_string(&doc).unwrap();
        let back: ParamsDocument = serde_json::from_str(&json).unwrap();
        assert_eq!(back.params().unwrap(), p);
        let mut other = ds.clone();
        other.item_ids = vec!["1".into(), "0".into()];
        let (_, remapped) = back.params_for(&other).unwrap();
        assert_eq!(remapped.u, array![-1.5, 0.25]);
        other.item_ids[0] = "zz".into();
        assert!(matches!(back.params_for(&other), Err(Error::Config(_))));
    }
}
