//! Train the two-layer GCN end to end with a logit head and inspect the
//! learned chooser embeddings.

use graphchoice::data::split_choosers;
use graphchoice::evaluation::{mean_relative_rank, simulate_choices};
use graphchoice::gcn::{gcn_choice_objective, gcn_forward, train_gcn, GcnConfig, GcnParams, GcnTrainOptions, Mode};
use graphchoice::graph::{geometric_radius, random_geometric, sample_prior_utilities};
use graphchoice::optimizer::FittedModel;

fn main() -> graphchoice::Result<()> {
    let g = random_geometric(60, geometric_radius(60, 6.0), 9)?;
    let prior = sample_prior_utilities(&g, 0.5, 5, 10)?;
    let data = simulate_choices(&prior, 20, (2, 5), 11)?;
    let split = split_choosers(&data, 0.6, 12)?;
    let cfg = GcnConfig::default();
    let opts = GcnTrainOptions { learning_rate: 0.01, l2: 1e-4, max_epochs: 100, tolerance: 1e-8, seed: 13 };

    let before = gcn_choice_objective(&GcnParams::init(&cfg, &data, opts.seed)?, &cfg, &g, &data, &split.train, 0.0)?;
    let report = train_gcn(&g, &data, &split.train, &cfg, &opts)?;
    let after = gcn_choice_objective(&report.final_params, &cfg, &g, &data, &split.train, 0.0)?;
    println!("train NLL {before:.2} -> {after:.2} in {} epochs", report.epochs_run);

    let embedding = gcn_forward(&g, &report.final_params, &cfg, &data, Mode::Eval)?;
    let active = embedding.iter().filter(|&&v| v > 0.0).count();
    println!("embedding {:?}, {active} active units", embedding.dim());

    let model = FittedModel::Gcn { cfg, report, embedding };
    let mrr = mean_relative_rank(&data, &split.test, |obs| model.rank(&data, obs))?;
    println!("test MRR {mrr:.3}");
    Ok(())
}
