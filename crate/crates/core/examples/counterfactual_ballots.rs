//! Fit a model on synthetic ballots, then predict per-group vote counts and
//! winners when the ballot is narrowed or extended.

use graphchoice::counterfactual::{ensemble_counts, observed_sets, plurality_winners, GroupMap, Population, Scenario, apply_scenario};
use graphchoice::data::{ChoiceDataset, ChoiceObservation};
use graphchoice::graph::planted_partition;
use graphchoice::models::{Family, ModelSpec, Objective};
use graphchoice::optimizer::{train, TrainOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CANDIDATES: [&str; 4] = ["left", "right", "green", "none"];

fn main() -> graphchoice::Result<()> {
    // Two regions of 40 counties; the west leans left, the east right, and a
    // minority everywhere prefers the green candidate.
    let g = planted_partition([40, 40], 0.2, 0.02, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut obs = Vec::new();
    for county in 0..80 {
        let lean = if county < 40 { [0.45, 0.35, 0.2] } else { [0.3, 0.5, 0.2] };
        for t in 0..30 {
            let r: f64 = rng.gen();
            let chosen = if r < lean[0] { 0 } else if r < lean[0] + lean[1] { 1 } else { 2 };
            obs.push(ChoiceObservation::new((county * 30 + t) as u64, county, vec![0, 1, 2], chosen).with_weight(100.0));
        }
    }
    let mut data = ChoiceDataset::new(80, 4, obs, None)?;
    data.item_ids = CANDIDATES.iter().map(|s| s.to_string()).collect();

    let spec = ModelSpec::for_dataset(Family::Logit, true, &data)?;
    let all: Vec<usize> = (0..80).collect();
    let models: Vec<_> = [0.1, 1.0]
        .iter()
        .map(|&lambda| {
            let fit = train(&spec, &data, &all, &Objective::new(lambda, 1e-3, Some(&g)), &TrainOptions::with_learning_rate(0.05))?;
            Ok((spec, fit.final_params))
        })
        .collect::<graphchoice::Result<_>>()?;

    let groups = GroupMap::new((0..80).map(|a| usize::from(a >= 40)).collect(), vec!["west".into(), "east".into()])?;
    let weights = data.chooser_weights().to_vec();
    let base = observed_sets(&data);
    for (name, scenario) in [
        ("as observed", None),
        ("two-candidate ballot", Some(Scenario::ReplaceAllSets(vec![0, 1]))),
        ("'none' added", Some(Scenario::AddItem(3))),
    ] {
        let sets = match &scenario {
            Some(s) => apply_scenario(&base, s, 4)?,
            None => base.clone(),
        };
        let pop = Population { chooser_sets: &sets, chooser_weights: &weights, chooser_features: None, item_features: None, groups: &groups };
        let counts = ensemble_counts(&models, &pop)?;
        let winners = plurality_winners(&counts.mean)?;
        println!("{name}:");
        for (gi, w) in winners.iter().enumerate() {
            let row: Vec<String> = (0..4).map(|i| format!("{}={:.0}", CANDIDATES[i], counts.mean[[gi, i]])).collect();
            println!("  {:<5} {}  winner {}", groups.group_names[gi], row.join(" "), CANDIDATES[w.item]);
        }
    }
    Ok(())
}
