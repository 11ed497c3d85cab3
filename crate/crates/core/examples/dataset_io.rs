//! Write a synthetic dataset in the flat-file formats the command-line tool
//! reads, plus a config, then load it back. Prints the directory so the
//! `graphchoice` binary can be pointed at it, e.g.
//! `graphchoice train --config <dir>/config.json`.

use graphchoice::data::{load_dataset, save_dataset};
use graphchoice::evaluation::simulate_choices;
use graphchoice::graph::{erdos_renyi, load_edges, sample_prior_utilities, save_edges};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args().nth(1).map(std::path::PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("graphchoice-demo"));
    std::fs::create_dir_all(&dir)?;

    let g = erdos_renyi(40, 0.15, 1)?;
    let prior = sample_prior_utilities(&g, 1.0, 5, 2)?;
    let data = simulate_choices(&prior, 10, (2, 5), 3)?;
    save_dataset(&data, &dir.join("observations.csv"), None, None)?;
    save_edges(&g, &data.chooser_ids, &dir.join("edges.csv"))?;
    let config = serde_json::json!({
        "observations": "observations.csv",
        "edges": "edges.csv",
        "method": "laplacian",
        "grid": { "learning_rates": [0.1], "l2_strengths": [0.001], "lambdas": [0.1, 1.0] },
        "out_dir": "out"
    });
    let cfg_path = dir.join("config.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&config)?)?;

    let back = load_dataset(&dir.join("observations.csv"), None, None)?;
    let g_back = load_edges(&dir.join("edges.csv"), &back.chooser_ids)?;
    println!("wrote {} observations, {} edges to {}", back.observations.len(), g_back.n_edges(), dir.display());
    // Indices are reassigned on load; compare through external identifiers.
    let named = |d: &graphchoice::ChoiceDataset| -> Vec<(String, Vec<String>, String)> {
        d.observations
            .iter()
            .map(|o| {
                let set = o.choice_set.iter().map(|&i| d.item_ids[i].clone()).collect();
                (d.chooser_ids[o.chooser].clone(), set, d.item_ids[o.chosen_item()].clone())
            })
            .collect()
    };
    println!("round trip identical: {}", named(&back) == named(&data));
    Ok(())
}
