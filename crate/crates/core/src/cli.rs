//! Command-line front end. Every subcommand reads a JSON config, runs
//! deterministically given its seeds, and writes its outputs under the
//! output directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::counterfactual::{
    apply_scenario_named, ensemble_counts, observed_sets, plurality_winners, GroupMap, Population, ScenarioFile,
};
use crate::data::{choice_fractions, load_dataset, split_choosers, ChoiceDataset};
use crate::error::{Error, Result};
use crate::evaluation::{run_sample_complexity, run_semi_supervised, SampleComplexityConfig};
use crate::gcn::GcnConfig;
use crate::graph::{read_edge_list, load_edges, SocialGraph};
use crate::models::{self, Family, ParamsDocument};
use crate::optimizer::{grid_search, FitSettings, FittedModel, HyperGrid, Method};
use crate::propagation::{propagate, PropagationConfig};

#[derive(Debug, Parser)]
#[command(name = "graphchoice", version, about = "Discrete choice models on social graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for grid points and trials.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Grid-search the configured method and write the selected model.
    Train,
    /// Score a fitted logit-family model on the dataset.
    Evaluate {
        #[arg(long)]
        params: PathBuf,
    },
    /// Propagate choice fractions over the graph and write Z.
    Propagate,
    /// Sample-complexity study on synthetic graphs.
    Synth,
    /// Semi-supervised chooser-split experiment.
    Experiment,
    /// Expected counts and plurality winners under a choice-set scenario.
    Counterfactual {
        /// Fitted model(s); counts are averaged across them.
        #[arg(long = "params", required = true)]
        params: Vec<PathBuf>,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        groups: PathBuf,
    },
    /// Write the chooser split for the configured fraction and seed.
    Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalChoosers {
    All,
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub observations: Option<PathBuf>,
    pub chooser_features: Option<PathBuf>,
    pub item_features: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    /// Method fitted by `train`.
    pub method: Method,
    /// Methods compared by `experiment`.
    pub methods: Vec<Method>,
    /// Defaults to the richest family the features support.
    pub family: Option<Family>,
    pub grid: HyperGrid,
    /// Training fraction used by `train` and `split`.
    pub train_fraction: f64,
    /// Training fractions swept by `experiment`.
    pub fractions: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub max_epochs: usize,
    pub tolerance: f64,
    pub fix_reference_item: bool,
    pub l2_on_intercepts: bool,
    /// Shorthand for `gcn.concat_input`.
    pub concat_h0: bool,
    pub gcn: GcnConfig,
    /// Smoothing strength used by `propagate`.
    pub rho: f64,
    /// Choosers scored by `evaluate`.
    pub evaluate_on: EvalChoosers,
    pub synth: SampleComplexityConfig,
    pub workers: usize,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            observations: None,
            chooser_features: None,
            item_features: None,
            edges: None,
            method: Method::Laplacian,
            methods: vec![Method::Logit, Method::Laplacian, Method::Gcn, Method::Propagation],
            family: None,
            grid: HyperGrid::default(),
            train_fraction: 0.8,
            fractions: (1..=8).map(|i| i as f64 / 10.0).collect(),
            trials: 8,
            seed: 0,
            max_epochs: 100,
            tolerance: 1e-8,
            fix_reference_item: false,
            l2_on_intercepts: false,
            concat_h0: false,
            gcn: GcnConfig::default(),
            rho: 0.5,
            evaluate_on: EvalChoosers::All,
            synth: SampleComplexityConfig::default(),
            workers: 1,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Reads a config; relative paths resolve against the config's directory.
    pub fn read(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&body).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for p in [&mut cfg.observations, &mut cfg.chooser_features, &mut cfg.item_features, &mut cfg.edges]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        Ok(cfg)
    }

    fn fit_settings(&self, dataset: &ChoiceDataset) -> FitSettings {
        FitSettings {
            family: self.family.unwrap_or_else(|| Family::for_features(dataset.d_x, dataset.d_y)),
            max_epochs: self.max_epochs,
            tolerance: self.tolerance,
            l2_on_intercepts: self.l2_on_intercepts,
            fix_reference_item: self.fix_reference_item,
            gcn: GcnConfig { concat_input: self.gcn.concat_input || self.concat_h0, ..self.gcn },
            seed: self.seed,
            workers: self.workers.max(1),
        }
    }
}

/// Dataset plus the graph over its choosers, when an edge file is given.
struct Inputs {
    dataset: ChoiceDataset,
    graph: Option<SocialGraph>,
}

fn load_inputs(cfg: &ExperimentConfig, need_graph: bool) -> Result<Inputs> {
    let obs = cfg
        .observations
        .as_deref()
        .ok_or_else(|| Error::Config("config has no observations file".into()))?;
    let mut dataset = load_dataset(obs, cfg.chooser_features.as_deref(), cfg.item_features.as_deref())?;
    let graph = match &cfg.edges {
        Some(path) => {
            let named = read_edge_list(path)?;
            dataset.add_choosers(named.iter().flat_map(|(a, b)| [a.as_str(), b.as_str()]))?;
            Some(load_edges(path, &dataset.chooser_ids)?)
        }
        None if need_graph => return Err(Error::Config("this method requires an edges file".into())),
        None => None,
    };
    Ok(Inputs { dataset, graph })
}

fn create_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let body = serde_json::to_string_pretty(value)?;
    std::fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn run(cli: Cli) -> Result<()> {
    let started = Instant::now();
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::read(p)?,
        None => return Err(Error::Config("--config PATH is required".into())),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.synth.base_seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
        cfg.synth.workers = w;
    }
    if let Some(o) = cli.out {
        cfg.out_dir = o;
    }
    let name = match &cli.command {
        Command::Train => {
            cmd_train(&cfg)?;
            "train"
        }
        Command::Evaluate { params } => {
            cmd_evaluate(&cfg, params)?;
            "evaluate"
        }
        Command::Propagate => {
            cmd_propagate(&cfg)?;
            "propagate"
        }
        Command::Synth => {
            cmd_synth(&cfg)?;
            "synth"
        }
        Command::Experiment => {
            cmd_experiment(&cfg)?;
            "experiment"
        }
        Command::Counterfactual { params, scenario, groups } => {
            cmd_counterfactual(&cfg, params, scenario, groups)?;
            "counterfactual"
        }
        Command::Split => {
            cmd_split(&cfg)?;
            "split"
        }
    };
    eprintln!("{name}: {:.3}s", started.elapsed().as_secs_f64());
    Ok(())
}

#[derive(Debug, Serialize)]
struct TrainOutput {
    method: Method,
    hyperparams: crate::optimizer::Hyperparams,
    validation_score: f64,
    points_evaluated: usize,
    train_choosers: usize,
    validation_choosers: usize,
    test_choosers: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<crate::optimizer::TrainSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    propagation: Option<(usize, bool)>,
}

/// Writes `params.json` (or `z.csv` for propagation) and `report.json`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    let inputs = load_inputs(cfg, cfg.method.needs_graph())?;
    let ds = &inputs.dataset;
    let split = split_choosers(ds, cfg.train_fraction, cfg.seed)?;
    let settings = cfg.fit_settings(ds);
    let best = grid_search(cfg.method, ds, inputs.graph.as_ref(), &split, &cfg.grid, &settings)?;
    create_out_dir(&cfg.out_dir)?;
    let mut propagation = None;
    match &best.model {
        FittedModel::Logit { spec, report } => {
            ParamsDocument::new(spec, &report.final_params, ds).write(&cfg.out_dir.join("params.json"))?;
        }
        FittedModel::Gcn { report, .. } => write_json(&cfg.out_dir.join("params.json"), &report.final_params)?,
        FittedModel::Propagation { z, iterations, converged } => {
            write_matrix(&cfg.out_dir.join("z.csv"), z, ds)?;
            propagation = Some((*iterations, *converged));
        }
    }
    let out = TrainOutput {
        method: cfg.method,
        hyperparams: best.hyperparams,
        validation_score: best.validation_score,
        points_evaluated: best.points_evaluated,
        train_choosers: split.train.len(),
        validation_choosers: split.validation.len(),
        test_choosers: split.test.len(),
        report: best.model.summary(),
        propagation,
    };
    write_json(&cfg.out_dir.join("report.json"), &out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub choosers: EvalChoosers,
    pub observations: usize,
    pub total_weight: f64,
    /// Weighted NLL summed over observations.
    pub nll: f64,
    pub nll_per_weight: f64,
    pub mrr: f64,
}

/// Scores a saved logit-family model; writes and returns `metrics.json`.
pub fn cmd_evaluate(cfg: &ExperimentConfig, params_file: &Path) -> Result<Metrics> {
    let inputs = load_inputs(cfg, false)?;
    let ds = &inputs.dataset;
    let doc = ParamsDocument::read(params_file)?;
    let (spec, params) = doc.params_for(ds)?;
    let choosers: Vec<usize> = match cfg.evaluate_on {
        EvalChoosers::All => (0..ds.n_choosers).collect(),
        part => {
            let split = split_choosers(ds, cfg.train_fraction, cfg.seed)?;
            match part {
                EvalChoosers::Train => split.train,
                EvalChoosers::Validation => split.validation,
                _ => split.test,
            }
        }
    };
    let obs = ds.observations_of(&choosers);
    let total_weight: f64 = obs.iter().map(|&o| ds.observations[o].weight).sum();
    let nll = models::negative_log_likelihood(&params, &spec, ds, &choosers)?;
    let mrr = crate::evaluation::mean_relative_rank(ds, &choosers, |o| models::rank_observation(&params, &spec, ds, o))?;
    let metrics = Metrics {
        choosers: cfg.evaluate_on,
        observations: obs.len(),
        total_weight,
        nll,
        nll_per_weight: nll / total_weight,
        mrr,
    };
    create_out_dir(&cfg.out_dir)?;
    write_json(&cfg.out_dir.join("metrics.json"), &metrics)?;
    println!("{}", serde_json::to_string(&metrics)?);
    Ok(metrics)
}

fn write_matrix(path: &Path, z: &Array2<f64>, ds: &ChoiceDataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["chooser_id".to_string()];
    header.extend(ds.item_ids.iter().cloned());
    w.write_record(&header)?;
    for (a, row) in z.rows().into_iter().enumerate() {
        let mut rec = vec![ds.chooser_ids[a].clone()];
        rec.extend(row.iter().map(|&v| fmt_f64(v)));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Propagates the choice fractions of every chooser; writes `z.csv`.
pub fn cmd_propagate(cfg: &ExperimentConfig) -> Result<()> {
    let inputs = load_inputs(cfg, true)?;
    let ds = &inputs.dataset;
    let all: Vec<usize> = (0..ds.n_choosers).collect();
    let z0 = choice_fractions(ds, &all);
    let r = propagate(&z0, inputs.graph.as_ref().expect("required"), &PropagationConfig::new(cfg.rho))?;
    create_out_dir(&cfg.out_dir)?;
    write_matrix(&cfg.out_dir.join("z.csv"), &r.z, ds)?;
    eprintln!("propagation: {} iterations, converged: {}", r.iterations, r.converged);
    Ok(())
}

/// Writes `curves.csv`: lambda, samples, mse_mean, mse_stderr, regularized.
pub fn cmd_synth(cfg: &ExperimentConfig) -> Result<()> {
    let curves = run_sample_complexity(&cfg.synth)?;
    create_out_dir(&cfg.out_dir)?;
    let path = cfg.out_dir.join("curves.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["lambda", "samples", "mse_mean", "mse_stderr", "regularized"])?;
    for c in &curves {
        for i in 0..c.samples_per_chooser.len() {
            w.write_record([
                fmt_f64(c.lambda),
                c.samples_per_chooser[i].to_string(),
                fmt_f64(c.mse[i]),
                fmt_f64(c.std_err[i]),
                c.regularized.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Writes `results.csv`: method, train_fraction, trial, test_nll, test_mrr,
/// hyperparams.
pub fn cmd_experiment(cfg: &ExperimentConfig) -> Result<()> {
    let needs_graph = cfg.methods.iter().any(|m| m.needs_graph());
    let inputs = load_inputs(cfg, needs_graph)?;
    let ds = &inputs.dataset;
    let settings = cfg.fit_settings(ds);
    let rows = run_semi_supervised(
        ds,
        inputs.graph.as_ref(),
        &cfg.methods,
        &cfg.fractions,
        cfg.trials,
        cfg.seed,
        &cfg.grid,
        &settings,
    )?;
    create_out_dir(&cfg.out_dir)?;
    let path = cfg.out_dir.join("results.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["method", "train_fraction", "trial", "test_nll", "test_mrr", "hyperparams"])?;
    for r in &rows {
        w.write_record([
            r.method.name().to_string(),
            fmt_f64(r.train_fraction),
            r.trial.to_string(),
            r.test_nll.map(fmt_f64).unwrap_or_default(),
            fmt_f64(r.test_mrr),
            serde_json::to_string(&r.hyperparams)?,
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Writes `counts.csv` (group, item, mean_count, stderr) and `winners.csv`
/// (group, item, tied).
pub fn cmd_counterfactual(cfg: &ExperimentConfig, params_files: &[PathBuf], scenario_file: &Path, groups_file: &Path) -> Result<()> {
    let inputs = load_inputs(cfg, false)?;
    let ds = &inputs.dataset;
    let models = params_files
        .iter()
        .map(|p| ParamsDocument::read(p)?.params_for(ds))
        .collect::<Result<Vec<_>>>()?;
    let scenario = ScenarioFile::read(scenario_file)?.resolve(&ds.item_ids)?;
    let groups = GroupMap::read(groups_file, &ds.chooser_ids)?;
    let sets = apply_scenario_named(&observed_sets(ds), &scenario, ds)?;
    let weights = ds.chooser_weights().to_vec();
    let pop = Population {
        chooser_sets: &sets,
        chooser_weights: &weights,
        chooser_features: ds.chooser_features.as_ref(),
        item_features: None,
        groups: &groups,
    };
    let counts = ensemble_counts(&models, &pop)?;
    let winners = plurality_winners(&counts.mean)?;
    create_out_dir(&cfg.out_dir)?;

    let path = cfg.out_dir.join("counts.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["group", "item", "mean_count", "stderr"])?;
    for g in 0..groups.n_groups() {
        for i in 0..ds.n_items {
            w.write_record([
                groups.group_names[g].clone(),
                ds.item_ids[i].clone(),
                fmt_f64(counts.mean[[g, i]]),
                fmt_f64(counts.stderr[[g, i]]),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = cfg.out_dir.join("winners.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["group", "item", "tied"])?;
    for (g, win) in winners.iter().enumerate() {
        w.write_record([groups.group_names[g].clone(), ds.item_ids[win.item].clone(), win.tied.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Writes `split.csv`: chooser_id, part.
pub fn cmd_split(cfg: &ExperimentConfig) -> Result<()> {
    let inputs = load_inputs(cfg, false)?;
    let ds = &inputs.dataset;
    let split = split_choosers(ds, cfg.train_fraction, cfg.seed)?;
    create_out_dir(&cfg.out_dir)?;
    let path = cfg.out_dir.join("split.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["chooser_id", "part"])?;
    for (part, ids) in [("train", &split.train), ("validation", &split.validation), ("test", &split.test)] {
        for &a in ids.iter() {
            w.write_record([ds.chooser_ids[a].as_str(), part])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))
}
