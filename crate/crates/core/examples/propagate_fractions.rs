//! Smooth observed choice fractions over the graph and rank items for
//! choosers who were never observed.

use graphchoice::data::{choice_fractions, split_choosers};
use graphchoice::evaluation::{mean_relative_rank, simulate_choices};
use graphchoice::graph::{geometric_radius, random_geometric, sample_prior_utilities};
use graphchoice::propagation::{propagate, rank_choices, PropagationConfig};

fn main() -> graphchoice::Result<()> {
    let g = random_geometric(60, geometric_radius(60, 6.0), 1)?;
    let prior = sample_prior_utilities(&g, 0.5, 6, 2)?;
    let data = simulate_choices(&prior, 20, (2, 6), 3)?;
    let split = split_choosers(&data, 0.4, 4)?;
    let z0 = choice_fractions(&data, &split.train);

    for rho in [0.0, 0.25, 0.5, 0.9, 1.0] {
        let r = propagate(&z0, &g, &PropagationConfig::new(rho))?;
        let mrr = mean_relative_rank(&data, &split.test, |obs| rank_choices(r.z.row(obs.chooser), &obs.choice_set))?;
        println!("rho {rho:<4} iterations {:>3} converged {:<5} test MRR {mrr:.3}", r.iterations, r.converged);
    }
    Ok(())
}
