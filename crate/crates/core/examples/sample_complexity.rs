//! Utility-recovery error with and without the Laplacian penalty as the
//! number of observations per chooser grows. Pass `full` for the complete
//! 100-node, 8-trial study (a few minutes); the default is a quick version.

use graphchoice::evaluation::{run_sample_complexity, SampleComplexityConfig};

fn main() -> graphchoice::Result<()> {
    let full = std::env::args().any(|a| a == "full");
    let cfg = if full {
        SampleComplexityConfig::default()
    } else {
        SampleComplexityConfig {
            n: 40,
            p: 0.2,
            lambdas: vec![1.0],
            samples_list: vec![1, 3, 10, 32],
            trials: 3,
            ..SampleComplexityConfig::default()
        }
    };
    for curve in run_sample_complexity(&cfg)? {
        let label = if curve.regularized { "laplacian" } else { "unregularized" };
        println!("lambda {} {label}", curve.lambda);
        for ((s, m), se) in curve.samples_per_chooser.iter().zip(&curve.mse).zip(&curve.std_err) {
            println!("  {s:>5} samples/chooser  MSE {m:>12.4} ± {se:.4}");
        }
    }
    Ok(())
}
