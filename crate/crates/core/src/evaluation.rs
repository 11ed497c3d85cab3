//! Metrics and experiment runners: mean relative rank, utility recovery
//! error, synthetic choice simulation, the sample-complexity study, the
//! semi-supervised chooser-split experiment and top-k community analysis.

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView1};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{chooser_mask, split_choosers, ChoiceDataset, ChoiceObservation};
use crate::error::{Error, Result};
use crate::graph::{erdos_renyi, sample_prior_utilities, PriorSample, SocialGraph};
use crate::models::{choice_probabilities, rank_by_score, Family, ModelParams, ModelSpec, Objective};
use crate::optimizer::{grid_search, train, FitSettings, HyperGrid, Hyperparams, Method, TrainOptions};

/// Position of `chosen` in `ranking`, scaled to `[0, 1]` by `|C| - 1`.
/// Singleton rankings score 0; `None` if `chosen` is absent.
pub fn relative_rank(ranking: &[usize], chosen: usize) -> Option<f64> {
    let r = ranking.iter().position(|&i| i == chosen)?;
    if ranking.len() < 2 {
        return Some(0.0);
    }
    Some(r as f64 / (ranking.len() - 1) as f64)
}

/// Weighted mean relative rank of the true choices over the observations of
/// `choosers`, with rankings produced by `rank`.
pub fn mean_relative_rank<F>(dataset: &ChoiceDataset, choosers: &[usize], mut rank: F) -> Result<f64>
where
    F: FnMut(&ChoiceObservation) -> Result<Vec<usize>>,
{
    let mask = chooser_mask(dataset.n_choosers, choosers);
    let mut total = 0.0;
    let mut weight = 0.0;
    for obs in dataset.observations.iter().filter(|o| mask[o.chooser]) {
        let ranking = rank(obs)?;
        let r = relative_rank(&ranking, obs.chosen_item()).ok_or_else(|| {
            Error::Evaluation(format!("ranking for observation {} omits the chosen item", obs.observation_id))
        })?;
        total += obs.weight * r;
        weight += obs.weight;
    }
    if weight == 0.0 {
        return Err(Error::Evaluation("no weighted observations to rank".into()));
    }
    Ok(total / weight)
}

/// Mean squared error between inferred and true per-chooser utilities over
/// `observed_items`, after shifting each chooser's row so item 0 is 0.
pub fn utility_mse(inferred: &Array2<f64>, truth: &Array2<f64>, observed_items: &[usize]) -> Result<f64> {
    if inferred.dim() != truth.dim() {
        return Err(Error::Argument("utility matrices differ in shape".into()));
    }
    if !observed_items.contains(&0) {
        return Err(Error::Argument("item 0 must be observed to anchor utilities".into()));
    }
    let items: BTreeSet<usize> = observed_items.iter().copied().collect();
    if let Some(&bad) = items.iter().find(|&&i| i >= truth.ncols()) {
        return Err(Error::Argument(format!("item {bad} out of range")));
    }
    let mut sum = 0.0;
    for (a, b) in inferred.rows().into_iter().zip(truth.rows()) {
        for &i in &items {
            let d = (a[i] - a[0]) - (b[i] - b[0]);
            sum += d * d;
        }
    }
    Ok(sum / (truth.nrows() * items.len()) as f64)
}

/// Simulates `samples_per_chooser` choices per chooser: a set size uniform
/// in `set_size_range` (inclusive), a uniformly random set of that size,
/// and a choice drawn from the logit probabilities of the chooser's true
/// utilities.
pub fn simulate_choices(
    prior: &PriorSample,
    samples_per_chooser: usize,
    set_size_range: (usize, usize),
    seed: u64,
) -> Result<ChoiceDataset> {
    let (n, k) = prior.utilities.dim();
    let (lo, hi) = set_size_range;
    if lo < 1 || lo > hi {
        return Err(Error::Argument(format!("invalid set size range ({lo}, {hi})")));
    }
    if hi > k {
        return Err(Error::Argument(format!("set size {hi} exceeds the {k} available items")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut observations = Vec::with_capacity(n * samples_per_chooser);
    for a in 0..n {
        let truth = prior.utilities.row(a);
        for _ in 0..samples_per_chooser {
            let size = rng.gen_range(lo..=hi);
            let mut set = sample(&mut rng, k, size).into_vec();
            set.sort_unstable();
            let util = ndarray::Array1::from_iter(set.iter().map(|&i| truth[i]));
            let probs = choice_probabilities(util.view());
            let chosen_index = sample_categorical(&mut rng, probs.view());
            observations.push(ChoiceObservation::new(observations.len() as u64, a, set, chosen_index));
        }
    }
    ChoiceDataset::new(n, k, observations, None)
}

fn sample_categorical(rng: &mut impl Rng, probs: ArrayView1<'_, f64>) -> usize {
    let r: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if r < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// SplitMix64-style mixing of a base seed with a stream of labels.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut x = base;
    for &p in parts {
        x = x.wrapping_add(p.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x ^= x >> 31;
    }
    x
}

pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleComplexityConfig {
    pub n: usize,
    pub p: f64,
    pub k: usize,
    pub lambdas: Vec<f64>,
    pub samples_list: Vec<usize>,
    pub trials: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub set_size_range: (usize, usize),
    pub base_seed: u64,
    pub workers: usize,
}

impl Default for SampleComplexityConfig {
    fn default() -> Self {
        Self {
            n: 100,
            p: 0.1,
            k: 20,
            lambdas: vec![0.1, 1.0, 10.0],
            samples_list: vec![1, 3, 10, 32, 100, 316, 1000],
            trials: 8,
            epochs: 100,
            learning_rate: 0.1,
            set_size_range: (2, 20),
            base_seed: 0,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleComplexityCurve {
    pub lambda: f64,
    /// Whether the fitted model used the Laplacian penalty at `lambda`.
    pub regularized: bool,
    pub samples_per_chooser: Vec<usize>,
    /// Mean utility MSE over trials.
    pub mse: Vec<f64>,
    /// Standard error of the mean over trials.
    pub std_err: Vec<f64>,
}

/// Fits per-chooser utilities (intercepts only, global utilities held at
/// zero) and returns the `n x k` utility table.
fn fit_per_chooser(dataset: &ChoiceDataset, graph: &SocialGraph, lambda: f64, epochs: usize, lr: f64) -> Result<Array2<f64>> {
    let spec = ModelSpec::for_dataset(Family::Logit, true, dataset)?;
    let objective = Objective::new(lambda, 0.0, (lambda > 0.0).then_some(graph));
    let opts = TrainOptions {
        learning_rate: lr,
        max_epochs: epochs,
        fix_global_utilities: true,
        ..TrainOptions::default()
    };
    let all: Vec<usize> = (0..dataset.n_choosers).collect();
    let report = train(&spec, dataset, &all, &objective, &opts)?;
    Ok(report.final_params.chooser_utilities(dataset.n_choosers))
}

fn observed_items(dataset: &ChoiceDataset) -> Vec<usize> {
    let set: BTreeSet<usize> = dataset.observations.iter().flat_map(|o| o.choice_set.iter().copied()).collect();
    set.into_iter().collect()
}

/// Utility-recovery error with and without Laplacian regularization on
/// graphs and utilities drawn from the prior. Returns, for each lambda, the
/// regularized curve followed by the unregularized one.
pub fn run_sample_complexity(cfg: &SampleComplexityConfig) -> Result<Vec<SampleComplexityCurve>> {
    if cfg.trials == 0 || cfg.samples_list.is_empty() || cfg.lambdas.is_empty() {
        return Err(Error::Config("sample-complexity study needs trials, sample counts and lambdas".into()));
    }
    // (lambda index, trial) -> [regularized mse per count, unregularized mse per count]
    let jobs: Vec<(usize, usize)> = (0..cfg.lambdas.len())
        .flat_map(|l| (0..cfg.trials).map(move |t| (l, t)))
        .collect();
    let run = |&(l, t): &(usize, usize)| -> Result<[Vec<f64>; 2]> {
        let lambda = cfg.lambdas[l];
        let seed = derive_seed(cfg.base_seed, &[l as u64, t as u64]);
        let graph = erdos_renyi(cfg.n, cfg.p, derive_seed(seed, &[0]))?;
        let prior = sample_prior_utilities(&graph, lambda, cfg.k, derive_seed(seed, &[1]))?;
        let mut out = [Vec::new(), Vec::new()];
        for (c, &count) in cfg.samples_list.iter().enumerate() {
            let data = simulate_choices(&prior, count, cfg.set_size_range, derive_seed(seed, &[2, c as u64]))?;
            let items = observed_items(&data);
            for (slot, lam) in [(0, lambda), (1, 0.0)] {
                let fitted = fit_per_chooser(&data, &graph, lam, cfg.epochs, cfg.learning_rate)?;
                out[slot].push(utility_mse(&fitted, &prior.utilities, &items)?);
            }
        }
        Ok(out)
    };
    let results: Vec<Result<[Vec<f64>; 2]>> = if cfg.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
        pool.install(|| jobs.par_iter().map(run).collect())
    } else {
        jobs.iter().map(run).collect()
    };
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;

    let mut curves = Vec::new();
    for (l, &lambda) in cfg.lambdas.iter().enumerate() {
        for (slot, regularized) in [(0, true), (1, false)] {
            let trials = &results[l * cfg.trials..(l + 1) * cfg.trials];
            let (mse, std_err): (Vec<f64>, Vec<f64>) = (0..cfg.samples_list.len())
                .map(|c| mean_and_stderr(&trials.iter().map(|r| r[slot][c]).collect::<Vec<_>>()))
                .unzip();
            curves.push(SampleComplexityCurve {
                lambda,
                regularized,
                samples_per_chooser: cfg.samples_list.clone(),
                mse,
                std_err,
            });
        }
    }
    Ok(curves)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub method: Method,
    pub train_fraction: f64,
    pub trial: usize,
    /// Test NLL per unit observation weight; absent for propagation.
    pub test_nll: Option<f64>,
    pub test_mrr: f64,
    pub hyperparams: Hyperparams,
}

/// Semi-supervised chooser-split experiment. For every (fraction, trial) the
/// choosers are split with seed `base_seed + trial`, each method is
/// grid-searched on the validation choosers, and the selected model is
/// scored on the test choosers. Rows are ordered by method, fraction, trial.
#[allow(clippy::too_many_arguments)]
pub fn run_semi_supervised(
    dataset: &ChoiceDataset,
    graph: Option<&SocialGraph>,
    methods: &[Method],
    fractions: &[f64],
    trials: usize,
    base_seed: u64,
    grid: &HyperGrid,
    settings: &FitSettings,
) -> Result<Vec<ExperimentResult>> {
    let mut out = Vec::with_capacity(methods.len() * fractions.len() * trials);
    for &method in methods {
        for &fraction in fractions {
            for trial in 0..trials {
                let seed = base_seed.wrapping_add(trial as u64);
                let split = split_choosers(dataset, fraction, seed)?;
                let trial_settings = FitSettings { seed: settings.seed.wrapping_add(trial as u64), ..settings.clone() };
                let best = grid_search(method, dataset, graph, &split, grid, &trial_settings)?;
                let test_weight: f64 = dataset
                    .observations_of(&split.test)
                    .iter()
                    .map(|&o| dataset.observations[o].weight)
                    .sum();
                let test_nll = best
                    .model
                    .nll(dataset, &split.test)?
                    .map(|v| if test_weight > 0.0 { v / test_weight } else { 0.0 });
                let test_mrr = best.model.mrr(dataset, &split.test)?;
                out.push(ExperimentResult {
                    method,
                    train_fraction: fraction,
                    trial,
                    test_nll,
                    test_mrr,
                    hyperparams: best.hyperparams,
                });
            }
        }
    }
    Ok(out)
}

/// Per chooser, items ordered by `u_i + v_ia` (ties to the lower index),
/// truncated to `k_top`.
pub fn top_k_items(params: &ModelParams, k_top: usize) -> Result<Vec<Vec<usize>>> {
    let v = params
        .v
        .as_ref()
        .ok_or_else(|| Error::Argument("top-k analysis needs per-chooser intercepts".into()))?;
    let n = v.ncols();
    let util = params.chooser_utilities(n);
    Ok(util
        .rows()
        .into_iter()
        .map(|row| {
            let mut ranked = rank_by_score(row.iter().copied().enumerate().collect());
            ranked.truncate(k_top);
            ranked
        })
        .collect())
}

/// Choosers whose top-k list contains `item`.
pub fn choosers_with_item(top_lists: &[Vec<usize>], item: usize) -> Vec<usize> {
    top_lists
        .iter()
        .enumerate()
        .filter(|(_, l)| l.contains(&item))
        .map(|(a, _)| a)
        .collect()
}

/// Symmetric matrix of edge densities within and between node groups.
pub fn group_density_grid(graph: &SocialGraph, groups: &[Vec<usize>]) -> Result<Array2<f64>> {
    let m = groups.len();
    let mut out = Array2::zeros((m, m));
    for i in 0..m {
        for j in i..m {
            let d = graph.group_edge_density(&groups[i], &groups[j])?;
            out[[i, j]] = d;
            out[[j, i]] = d;
        }
    }
    Ok(out)
}
