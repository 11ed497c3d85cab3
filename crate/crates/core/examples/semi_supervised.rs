//! Compare all four methods on chooser splits: each is grid-searched on the
//! validation choosers and scored on the held-out test choosers.

use graphchoice::evaluation::{mean_and_stderr, run_semi_supervised, simulate_choices};
use graphchoice::graph::{geometric_radius, random_geometric, sample_prior_utilities};
use graphchoice::optimizer::{FitSettings, HyperGrid, Method};

fn main() -> graphchoice::Result<()> {
    let g = random_geometric(60, geometric_radius(60, 6.0), 21)?;
    let prior = sample_prior_utilities(&g, 1.0, 6, 22)?;
    let data = simulate_choices(&prior, 20, (2, 6), 23)?;

    // A trimmed grid keeps the example quick; the default grid is the full one.
    let grid = HyperGrid {
        learning_rates: vec![0.01, 0.1],
        l2_strengths: vec![1e-4, 1e-2],
        lambdas: vec![0.1, 1.0],
        rhos: vec![0.25, 0.5, 0.75],
    };
    let methods = [Method::Logit, Method::Laplacian, Method::Gcn, Method::Propagation];
    let rows = run_semi_supervised(&data, Some(&g), &methods, &[0.3, 0.6], 3, 100, &grid, &FitSettings::default())?;

    println!("{:<12} {:>8} {:>16} {:>16}", "method", "fraction", "test NLL/obs", "test MRR");
    for &m in &methods {
        for f in [0.3, 0.6] {
            let cell: Vec<_> = rows.iter().filter(|r| r.method == m && r.train_fraction == f).collect();
            let (mrr, mrr_se) = mean_and_stderr(&cell.iter().map(|r| r.test_mrr).collect::<Vec<_>>());
            let nll = match cell.iter().map(|r| r.test_nll).collect::<Option<Vec<_>>>() {
                Some(v) => {
                    let (m, se) = mean_and_stderr(&v);
                    format!("{m:.3} ± {se:.3}")
                }
                None => "-".to_string(),
            };
            println!("{:<12} {f:>8} {nll:>16} {:>16}", m.name(), format!("{mrr:.3} ± {mrr_se:.3}"));
        }
    }
    Ok(())
}
