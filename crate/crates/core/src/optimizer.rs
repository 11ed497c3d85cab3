//! Full-batch Rprop training and validation-driven grid search.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{choice_fractions, ChoiceDataset, ChooserSplit};
use crate::error::{Error, Result};
use crate::evaluation::mean_relative_rank;
use crate::gcn::{self, GcnConfig, GcnParams, GcnTrainOptions};
use crate::graph::SocialGraph;
use crate::models::{self, Family, ModelParams, ModelSpec, Objective};
use crate::propagation::{self, PropagationConfig};

pub const ETA_PLUS: f64 = 1.2;
pub const ETA_MINUS: f64 = 0.5;
pub const STEP_MIN: f64 = 1e-6;
pub const STEP_MAX: f64 = 50.0;

/// Per-parameter state of resilient propagation.
#[derive(Debug, Clone, PartialEq)]
pub struct RpropState {
    pub step_sizes: Vec<f64>,
    /// Sign of the last gradient that moved each parameter; 0 after a flip.
    pub previous_gradient_signs: Vec<i8>,
    pub eta_plus: f64,
    pub eta_minus: f64,
    pub step_min: f64,
    pub step_max: f64,
}

impl RpropState {
    pub fn new(len: usize, initial_step: f64) -> Self {
        Self {
            step_sizes: vec![initial_step.clamp(STEP_MIN, STEP_MAX); len],
            previous_gradient_signs: vec![0; len],
            eta_plus: ETA_PLUS,
            eta_minus: ETA_MINUS,
            step_min: STEP_MIN,
            step_max: STEP_MAX,
        }
    }
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// One Rprop update. On a gradient sign flip the step shrinks, the parameter
/// stays put, and the stored sign is cleared.
pub fn rprop_step(params: &mut [f64], grads: &[f64], state: &mut RpropState) {
    assert_eq!(params.len(), grads.len(), "parameter/gradient length mismatch");
    assert_eq!(params.len(), state.step_sizes.len(), "parameter/state length mismatch");
    for i in 0..params.len() {
        let s = sign(grads[i]);
        let agreement = s * state.previous_gradient_signs[i];
        let step = &mut state.step_sizes[i];
        if agreement > 0 {
            *step = (*step * state.eta_plus).min(state.step_max);
        } else if agreement < 0 {
            *step = (*step * state.eta_minus).max(state.step_min);
            state.previous_gradient_signs[i] = 0;
            continue;
        }
        params[i] -= f64::from(s) * *step;
        state.previous_gradient_signs[i] = s;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport<P = ModelParams> {
    pub final_params: P,
    pub epochs_run: usize,
    pub final_objective: f64,
    pub final_gradient_sq_norm: f64,
    pub converged: bool,
}

impl<P> TrainReport<P> {
    /// Report without the parameters, for JSON output.
    pub fn summary(&self) -> TrainSummary {
        TrainSummary {
            epochs_run: self.epochs_run,
            final_objective: self.final_objective,
            final_gradient_sq_norm: self.final_gradient_sq_norm,
            converged: self.converged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub final_objective: f64,
    pub final_gradient_sq_norm: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Stop once the squared gradient norm falls below this.
    pub tolerance: f64,
    /// Hold `u[0]` at zero.
    pub fix_reference_item: bool,
    /// Hold every global utility `u` at zero (per-chooser models).
    pub fix_global_utilities: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            max_epochs: 100,
            tolerance: 1e-8,
            fix_reference_item: false,
            fix_global_utilities: false,
        }
    }
}

impl TrainOptions {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self { learning_rate, ..Self::default() }
    }
}

/// Trains a logit-family model from all-zero parameters.
///
/// The likelihood covers the observations of `train_choosers` only; the
/// Laplacian penalty spans every chooser's intercepts, so held-out choosers
/// are fitted through their neighbours.
pub fn train(
    spec: &ModelSpec,
    dataset: &ChoiceDataset,
    train_choosers: &[usize],
    objective: &Objective<'_>,
    opts: &TrainOptions,
) -> Result<TrainReport> {
    let obs = dataset.observations_of(train_choosers);
    if obs.is_empty() {
        return Err(Error::Argument("training choosers have no observations".into()));
    }
    let mut params = ModelParams::zeros(spec);
    // shape and configuration checks up front
    models::objective_value(&params, spec, dataset, &[], objective)?;

    let frozen = frozen_mask(spec, opts);
    let mut flat = params.to_flat();
    let mut state = RpropState::new(flat.len(), opts.learning_rate);
    let mut epochs_run = 0;
    let mut last = None;
    for epoch in 0..opts.max_epochs {
        let (value, grad) = models::value_and_gradient_over(&params, spec, dataset, &obs, objective)?;
        if !value.is_finite() {
            return Err(Error::Divergence { epoch, value });
        }
        let mut grad = grad.to_flat();
        for &i in &frozen {
            grad[i] = 0.0;
        }
        let sq: f64 = grad.iter().map(|g| g * g).sum();
        if sq < opts.tolerance {
            last = Some((value, sq));
            break;
        }
        rprop_step(&mut flat, &grad, &mut state);
        params.assign_flat(&flat);
        epochs_run = epoch + 1;
    }
    let (value, sq) = match last {
        Some(v) => v,
        None => {
            let (value, grad) = models::value_and_gradient_over(&params, spec, dataset, &obs, objective)?;
            if !value.is_finite() {
                return Err(Error::Divergence { epoch: epochs_run, value });
            }
            let mut grad = grad.to_flat();
            for &i in &frozen {
                grad[i] = 0.0;
            }
            (value, grad.iter().map(|g| g * g).sum())
        }
    };
    Ok(TrainReport {
        final_params: params,
        epochs_run,
        final_objective: value,
        final_gradient_sq_norm: sq,
        converged: sq < opts.tolerance,
    })
}

/// Flat indices of parameters held fixed (the `u` block comes first).
fn frozen_mask(spec: &ModelSpec, opts: &TrainOptions) -> Vec<usize> {
    if opts.fix_global_utilities {
        (0..spec.k).collect()
    } else if opts.fix_reference_item && spec.k > 0 {
        vec![0]
    } else {
        Vec::new()
    }
}

// ---------------------------------------------------------------------------
// Grid search

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Logit-family model without graph information.
    Logit,
    /// Logit-family model with Laplacian-regularized per-chooser intercepts.
    Laplacian,
    Gcn,
    Propagation,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Logit => "logit",
            Method::Laplacian => "laplacian",
            Method::Gcn => "gcn",
            Method::Propagation => "propagation",
        }
    }

    pub fn needs_graph(self) -> bool {
        !matches!(self, Method::Logit)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "logit" | "baseline" => Ok(Method::Logit),
            "laplacian" => Ok(Method::Laplacian),
            "gcn" => Ok(Method::Gcn),
            "propagation" => Ok(Method::Propagation),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperGrid {
    pub learning_rates: Vec<f64>,
    pub l2_strengths: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub rhos: Vec<f64>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        Self {
            learning_rates: vec![1e-3, 1e-2, 1e-1],
            l2_strengths: vec![1e-5, 1e-4, 1e-3, 1e-2, 1e-1],
            lambdas: vec![1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0],
            rhos: vec![0.1, 0.25, 0.5, 0.75, 1.0],
        }
    }
}

impl HyperGrid {
    pub fn single(learning_rate: f64, l2: f64, lambda: f64, rho: f64) -> Self {
        Self {
            learning_rates: vec![learning_rate],
            l2_strengths: vec![l2],
            lambdas: vec![lambda],
            rhos: vec![rho],
        }
    }

    /// Grid points for `method`, as the cross-product in declared order.
    pub fn points(&self, method: Method) -> Result<Vec<Hyperparams>> {
        let need = |v: &Vec<f64>, what: &str| {
            if v.is_empty() {
                Err(Error::Config(format!("{} grid needs at least one {what}", method.name())))
            } else {
                Ok(())
            }
        };
        let mut out = Vec::new();
        match method {
            Method::Propagation => {
                need(&self.rhos, "rho")?;
                if let Some(r) = self.rhos.iter().find(|r| !(0.0..=1.0).contains(*r)) {
                    return Err(Error::Config(format!("rho {r} not in [0, 1]")));
                }
                out.extend(self.rhos.iter().map(|&rho| Hyperparams { rho: Some(rho), ..Default::default() }));
            }
            Method::Logit | Method::Gcn | Method::Laplacian => {
                need(&self.learning_rates, "learning rate")?;
                need(&self.l2_strengths, "L2 strength")?;
                let lambdas: Vec<Option<f64>> = if method == Method::Laplacian {
                    need(&self.lambdas, "lambda")?;
                    self.lambdas.iter().copied().map(Some).collect()
                } else {
                    vec![None]
                };
                for &lr in &self.learning_rates {
                    for &l2 in &self.l2_strengths {
                        for &lambda in &lambdas {
                            out.push(Hyperparams {
                                learning_rate: Some(lr),
                                l2: Some(l2),
                                lambda,
                                rho: None,
                            });
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
}

/// Settings shared by every grid point of a search.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSettings {
    pub family: Family,
    pub max_epochs: usize,
    pub tolerance: f64,
    pub l2_on_intercepts: bool,
    pub fix_reference_item: bool,
    pub gcn: GcnConfig,
    /// Seeds GCN initialization and dropout.
    pub seed: u64,
    pub workers: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            family: Family::Logit,
            max_epochs: 100,
            tolerance: 1e-8,
            l2_on_intercepts: false,
            fix_reference_item: false,
            gcn: GcnConfig::default(),
            seed: 0,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Logit { spec: ModelSpec, report: TrainReport },
    Gcn { cfg: GcnConfig, report: TrainReport<GcnParams>, embedding: Array2<f64> },
    Propagation { z: Array2<f64>, iterations: usize, converged: bool },
}

impl FittedModel {
    pub fn summary(&self) -> Option<TrainSummary> {
        match self {
            FittedModel::Logit { report, .. } => Some(report.summary()),
            FittedModel::Gcn { report, .. } => Some(report.summary()),
            FittedModel::Propagation { .. } => None,
        }
    }

    /// Weighted NLL over the observations of `choosers`; `None` for
    /// propagation, which has no likelihood.
    pub fn nll(&self, dataset: &ChoiceDataset, choosers: &[usize]) -> Result<Option<f64>> {
        match self {
            FittedModel::Logit { spec, report } => {
                models::negative_log_likelihood(&report.final_params, spec, dataset, choosers).map(Some)
            }
            FittedModel::Gcn { report, embedding, .. } => {
                let mut total = 0.0;
                for o in dataset.observations_of(choosers) {
                    let obs = &dataset.observations[o];
                    let util = gcn::head_utilities(&report.final_params, embedding, obs);
                    total += obs.weight * (models::log_sum_exp(&util) - util[obs.chosen_index]);
                }
                Ok(Some(total))
            }
            FittedModel::Propagation { .. } => Ok(None),
        }
    }

    /// Weighted mean relative rank over the observations of `choosers`.
    pub fn mrr(&self, dataset: &ChoiceDataset, choosers: &[usize]) -> Result<f64> {
        mean_relative_rank(dataset, choosers, |obs| self.rank(dataset, obs))
    }

    pub fn rank(&self, dataset: &ChoiceDataset, obs: &crate::data::ChoiceObservation) -> Result<Vec<usize>> {
        match self {
            FittedModel::Logit { spec, report } => models::rank_observation(&report.final_params, spec, dataset, obs),
            FittedModel::Gcn { report, embedding, .. } => {
                let util = gcn::head_utilities(&report.final_params, embedding, obs);
                Ok(models::rank_by_score(obs.choice_set.iter().copied().zip(util).collect()))
            }
            FittedModel::Propagation { z, .. } => propagation::rank_choices(z.row(obs.chooser), &obs.choice_set),
        }
    }
}

/// Fits one grid point of `method` on the training choosers.
pub fn fit(
    method: Method,
    dataset: &ChoiceDataset,
    graph: Option<&SocialGraph>,
    train_choosers: &[usize],
    hp: &Hyperparams,
    settings: &FitSettings,
) -> Result<FittedModel> {
    let graph_for = |m: Method| {
        graph.ok_or_else(|| Error::Config(format!("method {} requires a social graph", m.name())))
    };
    if let Some(g) = graph {
        if g.n() != dataset.n_choosers {
            return Err(Error::Config(format!(
                "graph has {} nodes but the dataset has {} choosers",
                g.n(),
                dataset.n_choosers
            )));
        }
    }
    let lr = || hp.learning_rate.ok_or_else(|| Error::Config("missing learning rate".into()));
    let l2 = hp.l2.unwrap_or(0.0);
    match method {
        Method::Logit | Method::Laplacian => {
            let intercepts = method == Method::Laplacian;
            let spec = ModelSpec::for_dataset(settings.family, intercepts, dataset)?;
            let lambda = if intercepts { hp.lambda.unwrap_or(0.0) } else { 0.0 };
            let g = if intercepts { Some(graph_for(method)?) } else { None };
            let objective = Objective {
                lambda,
                l2,
                l2_on_intercepts: settings.l2_on_intercepts,
                graph: g,
            };
            let opts = TrainOptions {
                learning_rate: lr()?,
                max_epochs: settings.max_epochs,
                tolerance: settings.tolerance,
                fix_reference_item: settings.fix_reference_item,
                fix_global_utilities: false,
            };
            let report = train(&spec, dataset, train_choosers, &objective, &opts)?;
            Ok(FittedModel::Logit { spec, report })
        }
        Method::Gcn => {
            let g = graph_for(method)?;
            let opts = GcnTrainOptions {
                learning_rate: lr()?,
                l2,
                max_epochs: settings.max_epochs,
                tolerance: settings.tolerance,
                seed: settings.seed,
            };
            let report = gcn::train_gcn(g, dataset, train_choosers, &settings.gcn, &opts)?;
            let embedding = gcn::gcn_forward(g, &report.final_params, &settings.gcn, dataset, gcn::Mode::Eval)?;
            Ok(FittedModel::Gcn { cfg: settings.gcn, report, embedding })
        }
        Method::Propagation => {
            let g = graph_for(method)?;
            let rho = hp.rho.ok_or_else(|| Error::Config("missing rho".into()))?;
            let z0 = choice_fractions(dataset, train_choosers);
            let r = propagation::propagate(&z0, g, &PropagationConfig::new(rho))?;
            Ok(FittedModel::Propagation { z: r.z, iterations: r.iterations, converged: r.converged })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    pub hyperparams: Hyperparams,
    pub model: FittedModel,
    /// Validation NLL for likelihood methods, validation MRR for propagation.
    pub validation_score: f64,
    pub points_evaluated: usize,
}

/// Validation score used for model selection (lower is better).
pub fn validation_score(method: Method, model: &FittedModel, dataset: &ChoiceDataset, choosers: &[usize]) -> Result<f64> {
    match method {
        Method::Propagation => model.mrr(dataset, choosers),
        _ => Ok(model.nll(dataset, choosers)?.expect("likelihood method")),
    }
}

/// Fits every grid point on `split.train` and keeps the one with the best
/// validation score; ties go to the earliest point in grid order.
pub fn grid_search(
    method: Method,
    dataset: &ChoiceDataset,
    graph: Option<&SocialGraph>,
    split: &ChooserSplit,
    grid: &HyperGrid,
    settings: &FitSettings,
) -> Result<GridOutcome> {
    let points = grid.points(method)?;
    let run = |hp: &Hyperparams| -> Result<(FittedModel, f64)> {
        let model = fit(method, dataset, graph, &split.train, hp, settings)?;
        let score = validation_score(method, &model, dataset, &split.validation)?;
        Ok((model, score))
    };
    let results: Vec<Result<(FittedModel, f64)>> = if settings.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(settings.workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
        pool.install(|| points.par_iter().map(run).collect())
    } else {
        points.iter().map(run).collect()
    };
    let mut best: Option<(usize, FittedModel, f64)> = None;
    for (i, r) in results.into_iter().enumerate() {
        let (model, score) = r?;
        if best.as_ref().is_none_or(|(_, _, s)| score < *s) {
            best = Some((i, model, score));
        }
    }
    let (i, model, score) = best.expect("grid has at least one point");
    if !score.is_finite() {
        return Err(Error::Evaluation(format!("no grid point of {} has a finite validation score", method.name())));
    }
    Ok(GridOutcome {
        hyperparams: points[i],
        model,
        validation_score: score,
        points_evaluated: points.len(),
    })
}
