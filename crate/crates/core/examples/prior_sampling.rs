//! Draw per-chooser utilities from the graph prior `N(0, L^+ / lambda)` and
//! check that neighbours end up with similar preferences.

use graphchoice::graph::{erdos_renyi, prior_log_density, sample_prior_utilities, LaplacianSpectrum};

fn main() -> graphchoice::Result<()> {
    let g = erdos_renyi(30, 0.15, 7)?;
    let lambda = 2.0;
    let prior = sample_prior_utilities(&g, lambda, 4, 11)?;
    let u = &prior.utilities;

    let sq = |a: usize, b: usize| (0..u.ncols()).map(|i| (u[[a, i]] - u[[b, i]]).powi(2)).sum::<f64>();
    let (mut near, mut far, mut n_near, mut n_far) = (0.0, 0.0, 0, 0);
    for a in 0..g.n() {
        for b in a + 1..g.n() {
            if g.has_edge(a, b) {
                near += sq(a, b);
                n_near += 1;
            } else {
                far += sq(a, b);
                n_far += 1;
            }
        }
    }
    println!("{} nodes, {} edges, lambda = {lambda}", g.n(), g.n_edges());
    println!("mean squared utility gap: neighbours {:.3}, non-neighbours {:.3}", near / n_near as f64, far / n_far as f64);

    let (i, j) = g.edges()[0];
    println!("partial correlation of an edge ({i}, {j}): {:.3}", g.partial_correlation(i, j)?);

    let spectrum = LaplacianSpectrum::new(&g);
    for item in 0..u.ncols() {
        println!("item {item}: log-density on 1-perp {:.2}", prior_log_density(&spectrum, lambda, u.column(item)));
    }
    Ok(())
}
