//! Counterfactual choice sets: scenario editing, expected choice counts per
//! group, model ensembles and plurality winners.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::data::{ChoiceDataset, ChoiceObservation};
use crate::error::{Error, Result};
use crate::models::{choice_probabilities, utilities, ModelParams, ModelSpec};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Scenario {
    /// Every chooser is offered exactly these items.
    ReplaceAllSets(Vec<usize>),
    /// Each chooser's set is intersected with these items.
    IntersectSets(Vec<usize>),
    /// This item is added to every chooser's set.
    AddItem(usize),
}

impl Scenario {
    fn items(&self) -> Vec<usize> {
        match self {
            Scenario::ReplaceAllSets(v) | Scenario::IntersectSets(v) => v.clone(),
            Scenario::AddItem(i) => vec![*i],
        }
    }
}

/// `scenario.json`: `{"kind": ..., "items": [external item ids]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub kind: String,
    pub items: Vec<String>,
}

impl ScenarioFile {
    pub fn read(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&body)?)
    }

    pub fn resolve(&self, item_ids: &[String]) -> Result<Scenario> {
        let items = self
            .items
            .iter()
            .map(|id| {
                item_ids
                    .iter()
                    .position(|x| x == id)
                    .ok_or_else(|| Error::Config(format!("scenario names unknown item {id:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        match self.kind.as_str() {
            "replace_all_sets" => Ok(Scenario::ReplaceAllSets(items)),
            "intersect_sets" => Ok(Scenario::IntersectSets(items)),
            "add_item" => match items.as_slice() {
                [one] => Ok(Scenario::AddItem(*one)),
                _ => Err(Error::Config("add_item scenario takes exactly one item".into())),
            },
            other => Err(Error::Config(format!("unknown scenario kind {other:?}"))),
        }
    }
}

/// Applies a scenario to per-chooser choice sets. Output sets are sorted.
pub fn apply_scenario(base_sets: &[Vec<usize>], scenario: &Scenario, n_items: usize) -> Result<Vec<Vec<usize>>> {
    if let Some(&bad) = scenario.items().iter().find(|&&i| i >= n_items) {
        return Err(Error::Argument(format!("scenario item {bad} out of range")));
    }
    let slate: BTreeSet<usize> = scenario.items().into_iter().collect();
    base_sets
        .iter()
        .enumerate()
        .map(|(a, base)| {
            let base: BTreeSet<usize> = base.iter().copied().collect();
            let set: Vec<usize> = match scenario {
                Scenario::ReplaceAllSets(_) => slate.iter().copied().collect(),
                Scenario::IntersectSets(_) => base.intersection(&slate).copied().collect(),
                Scenario::AddItem(_) => base.union(&slate).copied().collect(),
            };
            if set.is_empty() {
                return Err(Error::Scenario { chooser: a.to_string() });
            }
            Ok(set)
        })
        .collect()
}

/// Like [`apply_scenario`], naming the offending chooser by external id.
pub fn apply_scenario_named(base_sets: &[Vec<usize>], scenario: &Scenario, dataset: &ChoiceDataset) -> Result<Vec<Vec<usize>>> {
    apply_scenario(base_sets, scenario, dataset.n_items).map_err(|e| match e {
        Error::Scenario { chooser } => {
            let a: usize = chooser.parse().expect("index");
            Error::Scenario { chooser: dataset.chooser_ids[a].clone() }
        }
        other => other,
    })
}

/// Union of the items each chooser was offered in the data.
pub fn observed_sets(dataset: &ChoiceDataset) -> Vec<Vec<usize>> {
    let mut sets = vec![BTreeSet::new(); dataset.n_choosers];
    for obs in &dataset.observations {
        sets[obs.chooser].extend(obs.choice_set.iter().copied());
    }
    sets.into_iter().map(|s| s.into_iter().collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupMap {
    /// Group index of each chooser.
    pub group_of: Vec<usize>,
    pub group_names: Vec<String>,
}

impl GroupMap {
    pub fn new(group_of: Vec<usize>, group_names: Vec<String>) -> Result<Self> {
        if let Some(&g) = group_of.iter().find(|&&g| g >= group_names.len()) {
            return Err(Error::Argument(format!("group {g} out of range")));
        }
        Ok(Self { group_of, group_names })
    }

    /// A single group containing every chooser.
    pub fn single(n: usize, name: &str) -> Self {
        Self { group_of: vec![0; n], group_names: vec![name.to_string()] }
    }

    pub fn n_groups(&self) -> usize {
        self.group_names.len()
    }

    pub fn members(&self, group: usize) -> Vec<usize> {
        (0..self.group_of.len()).filter(|&a| self.group_of[a] == group).collect()
    }

    /// Reads `chooser_id,group_id` rows; every chooser must be assigned.
    pub fn read(path: &Path, chooser_ids: &[String]) -> Result<Self> {
        let p = path.display().to_string();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
        let index: HashMap<&str, usize> = chooser_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let mut group_of = vec![usize::MAX; chooser_ids.len()];
        let mut names: Vec<String> = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != 2 {
                return Err(Error::schema(&p, i + 1, "expected chooser_id,group_id"));
            }
            let a = *index
                .get(&rec[0])
                .ok_or_else(|| Error::schema(&p, i + 1, format!("unknown chooser {:?}", &rec[0])))?;
            let g = match names.iter().position(|n| n == &rec[1]) {
                Some(g) => g,
                None => {
                    names.push(rec[1].to_string());
                    names.len() - 1
                }
            };
            group_of[a] = g;
        }
        if let Some(a) = group_of.iter().position(|&g| g == usize::MAX) {
            return Err(Error::schema(&p, 0, format!("chooser {:?} has no group", chooser_ids[a])));
        }
        Ok(Self { group_of, group_names: names })
    }
}

/// Inputs describing the prediction-time population.
#[derive(Debug, Clone, Copy)]
pub struct Population<'a> {
    pub chooser_sets: &'a [Vec<usize>],
    pub chooser_weights: &'a [f64],
    pub chooser_features: Option<&'a Array2<f64>>,
    /// Per-item features (`k x d_y`) for families that use them.
    pub item_features: Option<&'a Array2<f64>>,
    pub groups: &'a GroupMap,
}

/// Expected weighted choice counts per (group, item) under one model.
pub fn aggregate_predictions(params: &ModelParams, spec: &ModelSpec, pop: &Population<'_>) -> Result<Array2<f64>> {
    params.check_shape(spec)?;
    let n = pop.chooser_sets.len();
    if pop.chooser_weights.len() != n || pop.groups.group_of.len() != n {
        return Err(Error::Argument("chooser sets, weights and groups differ in length".into()));
    }
    if spec.per_chooser_intercepts && spec.n != n {
        return Err(Error::Argument(format!("model covers {} choosers, population has {n}", spec.n)));
    }
    let mut counts = Array2::zeros((pop.groups.n_groups(), spec.k));
    for a in 0..n {
        let w = pop.chooser_weights[a];
        if w.is_nan() || w < 0.0 {
            return Err(Error::Argument(format!("chooser {a} has negative weight")));
        }
        let set = &pop.chooser_sets[a];
        if set.is_empty() {
            return Err(Error::Scenario { chooser: a.to_string() });
        }
        let mut obs = ChoiceObservation::new(0, a, set.clone(), 0);
        if spec.family.uses_item_features() {
            let y = pop
                .item_features
                .ok_or_else(|| Error::Config(format!("{:?} needs item features", spec.family)))?;
            obs.item_features = Some(Array2::from_shape_fn((set.len(), y.ncols()), |(r, c)| y[[set[r], c]]));
        }
        let x_a = pop.chooser_features.map(|x| x.row(a));
        let probs = choice_probabilities(utilities(params, spec, &obs, x_a)?.view());
        let g = pop.groups.group_of[a];
        for (&item, p) in set.iter().zip(probs.iter()) {
            counts[[g, item]] += w * p;
        }
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleCounts {
    pub mean: Array2<f64>,
    /// Standard error of the mean across models (zero for one model).
    pub stderr: Array2<f64>,
}

pub fn ensemble_counts(models: &[(ModelSpec, ModelParams)], pop: &Population<'_>) -> Result<EnsembleCounts> {
    if models.is_empty() {
        return Err(Error::Argument("ensemble needs at least one model".into()));
    }
    let per_model = models
        .iter()
        .map(|(spec, params)| aggregate_predictions(params, spec, pop))
        .collect::<Result<Vec<_>>>()?;
    let m = per_model.len() as f64;
    let mut mean = Array2::zeros(per_model[0].raw_dim());
    for c in &per_model {
        mean += c;
    }
    mean /= m;
    let mut stderr = Array2::zeros(mean.raw_dim());
    if per_model.len() > 1 {
        for c in &per_model {
            stderr += &(c - &mean).mapv(|d| d * d);
        }
        stderr.mapv_inplace(|s: f64| (s / (m - 1.0) / m).sqrt());
    }
    Ok(EnsembleCounts { mean, stderr })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Winner {
    pub item: usize,
    /// Another item had exactly the same count.
    pub tied: bool,
}

/// Argmax item per group (row), ties to the lower index.
pub fn plurality_winners(counts: &Array2<f64>) -> Result<Vec<Winner>> {
    if counts.ncols() == 0 {
        return Err(Error::Argument("no items to choose a winner from".into()));
    }
    Ok(counts
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (i, &c) in row.iter().enumerate() {
                if c > row[best] {
                    best = i;
                }
            }
            let tied = row.iter().enumerate().any(|(i, &c)| i != best && c == row[best]);
            Winner { item: best, tied }
        })
        .collect())
}

/// Total weight of each group's choosers.
pub fn group_weights(weights: &[f64], groups: &GroupMap) -> Array1<f64> {
    let mut out = Array1::zeros(groups.n_groups());
    for (a, &w) in weights.iter().enumerate() {
        out[groups.group_of[a]] += w;
    }
    out
}
