//! Fit a logit with per-chooser intercepts tied together by the Laplacian
//! penalty and compare held-out NLL with a plain logit.

use graphchoice::data::split_choosers;
use graphchoice::evaluation::simulate_choices;
use graphchoice::graph::{geometric_radius, random_geometric, sample_prior_utilities};
use graphchoice::models::{negative_log_likelihood, Family, ModelSpec, Objective};
use graphchoice::optimizer::{train, TrainOptions};

fn main() -> graphchoice::Result<()> {
    let g = random_geometric(80, geometric_radius(80, 8.0), 3)?;
    let prior = sample_prior_utilities(&g, 1.0, 8, 4)?;
    let data = simulate_choices(&prior, 30, (2, 8), 5)?;
    let split = split_choosers(&data, 0.5, 6)?;
    let test_weight: f64 = data.observations_of(&split.test).iter().map(|&o| data.observations[o].weight).sum();
    let opts = TrainOptions::with_learning_rate(0.05);

    let plain = ModelSpec::for_dataset(Family::Logit, false, &data)?;
    let fit = train(&plain, &data, &split.train, &Objective::new(0.0, 1e-3, None), &opts)?;
    let nll = negative_log_likelihood(&fit.final_params, &plain, &data, &split.test)? / test_weight;
    println!("logit            test NLL/obs {nll:.4} ({} epochs)", fit.epochs_run);

    let spec = ModelSpec::for_dataset(Family::Logit, true, &data)?;
    for lambda in [0.1, 1.0, 10.0] {
        let fit = train(&spec, &data, &split.train, &Objective::new(lambda, 1e-3, Some(&g)), &opts)?;
        let nll = negative_log_likelihood(&fit.final_params, &spec, &data, &split.test)? / test_weight;
        println!("laplacian λ={lambda:<5} test NLL/obs {nll:.4} ({} epochs)", fit.epochs_run);
    }
    Ok(())
}
