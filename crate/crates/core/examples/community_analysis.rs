//! Recover communities from fitted utilities: choosers whose top items
//! include a given item are far more densely connected to each other than
//! to choosers who favour a different item.

use graphchoice::evaluation::{choosers_with_item, group_density_grid, simulate_choices, top_k_items};
use graphchoice::graph::{planted_partition, PriorSample};
use graphchoice::models::{Family, ModelSpec, Objective};
use graphchoice::optimizer::{train, TrainOptions};
use ndarray::Array2;

fn main() -> graphchoice::Result<()> {
    let g = planted_partition([60, 60], 0.15, 0.03, 5)?;
    // Item 0 is popular in the first community, item 1 in the second.
    let truth = Array2::from_shape_fn((120, 6), |(a, i)| match (i, a < 60) {
        (0, true) | (1, false) => 2.0,
        (0, false) | (1, true) => -2.0,
        _ => 0.0,
    });
    let data = simulate_choices(&PriorSample { utilities: truth, lambda: 1.0 }, 15, (2, 6), 6)?;
    let spec = ModelSpec::for_dataset(Family::Logit, true, &data)?;
    let all: Vec<usize> = (0..120).collect();
    let fit = train(&spec, &data, &all, &Objective::new(0.1, 1e-3, Some(&g)), &TrainOptions::with_learning_rate(0.1))?;

    let top = top_k_items(&fit.final_params, 2)?;
    let sets = [choosers_with_item(&top, 0), choosers_with_item(&top, 1)];
    let grid = group_density_grid(&g, &sets)?;
    println!("|F| = {}, |M| = {}", sets[0].len(), sets[1].len());
    println!("edge density     F        M");
    println!("  F          {:.4}   {:.4}", grid[[0, 0]], grid[[0, 1]]);
    println!("  M          {:.4}   {:.4}", grid[[1, 0]], grid[[1, 1]]);
    Ok(())
}
