//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion numbers as arguments to run a subset.

use std::time::Instant;

use graphchoice::counterfactual::{aggregate_predictions, apply_scenario, group_weights, plurality_winners, GroupMap, Population, Scenario};
use graphchoice::data::{ChoiceDataset, ChoiceObservation};
use graphchoice::evaluation::{
    choosers_with_item, group_density_grid, mean_and_stderr, relative_rank, run_sample_complexity, run_semi_supervised,
    simulate_choices, top_k_items, SampleComplexityConfig,
};
use graphchoice::gcn::{gcn_forward, objective_and_gradient, GcnConfig, GcnParams, Mode};
use graphchoice::graph::{
    erdos_renyi, geometric_radius, planted_partition, random_geometric, prior_log_density, sample_prior_utilities, LaplacianSpectrum, PriorSample, SocialGraph,
};
use graphchoice::models::{
    choice_probabilities, gradient, laplacian_penalty, negative_log_likelihood, objective_value, utilities, Family, ModelParams,
    ModelSpec, Objective,
};
use graphchoice::optimizer::{train, FitSettings, HyperGrid, Method, TrainOptions};
use graphchoice::propagation::{propagate, PropagationConfig};
use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel, StandardNormal};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || scale * normal(rng))
}

fn connected_graph(n: usize, p: f64, rng: &mut ChaCha8Rng) -> SocialGraph {
    erdos_renyi(n, p, rng.gen()).expect("connected graph")
}

/// Random dataset whose features match what `family` consumes.
fn random_dataset(rng: &mut ChaCha8Rng, family: Family, n: usize, k: usize, n_obs: usize) -> ChoiceDataset {
    let d_x = if family.uses_chooser_features() { 2 } else { 0 };
    let d_y = if family.uses_item_features() { 2 } else { 0 };
    let obs = (0..n_obs)
        .map(|t| {
            let size = rng.gen_range(2..=k);
            let mut set = sample(rng, k, size).into_vec();
            set.sort_unstable();
            let chosen = rng.gen_range(0..size);
            let mut o = ChoiceObservation::new(t as u64, rng.gen_range(0..n), set, chosen).with_weight(rng.gen_range(0.5..2.0));
            if d_y > 0 {
                o = o.with_item_features(random_matrix(rng, size, d_y, 1.0));
            }
            o
        })
        .collect();
    let x = (d_x > 0).then(|| random_matrix(rng, n, d_x, 1.0));
    ChoiceDataset::new(n, k, obs, x).expect("valid dataset")
}

fn random_params(rng: &mut ChaCha8Rng, spec: &ModelSpec, scale: f64) -> ModelParams {
    let flat: Vec<f64> = (0..ModelParams::zeros(spec).len()).map(|_| scale * normal(rng)).collect();
    ModelParams::from_flat(spec, &flat).unwrap()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

// 1 ------------------------------------------------------------------------

fn theorem_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.gen_range(3..=15);
        let g = connected_graph(n, 0.4, &mut rng);
        let lambda = 10f64.powf(rng.gen_range(-2.0..1.0));
        let spec = ModelSpec::new(Family::Logit, true, 0, 0, n, 1).unwrap();
        let spectrum = LaplacianSpectrum::new(&g);
        let objective = Objective::new(lambda, 0.0, Some(&g));
        let a = random_params(&mut rng, &spec, 1.0);
        let b = random_params(&mut rng, &spec, 1.0);
        let pen = |p: &ModelParams| laplacian_penalty(p, &objective).unwrap();
        let row = |p: &ModelParams| p.v.as_ref().unwrap().row(0).to_owned();
        let lhs = pen(&a) - pen(&b);
        let rhs = -(prior_log_density(&spectrum, lambda, row(&a).view()) - prior_log_density(&spectrum, lambda, row(&b).view()));
        worst = worst.max((lhs - rhs).abs());
    }
    ensure(worst < 1e-8, || format!("max |difference| {worst:.3e} >= 1e-8"))?;
    Ok(format!("50 triples, max |difference| {worst:.2e}"))
}

// 2 ------------------------------------------------------------------------

fn gradient_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut rejected = 0;
    for family in [Family::Logit, Family::Cl, Family::Mnl, Family::Cml] {
        for intercepts in [false, true] {
            for lambda in [0.0, 0.1] {
                for l2 in [0.0, 0.01] {
                    for _ in 0..20 {
                        let n = rng.gen_range(2..=6);
                        let k = rng.gen_range(2..=5);
                        let g = connected_graph(n, 0.6, &mut rng);
                        let ds = random_dataset(&mut rng, family, n, k, 20);
                        let spec = ModelSpec::for_dataset(family, intercepts, &ds).unwrap();
                        let objective = Objective::new(lambda, l2, Some(&g));
                        let params = random_params(&mut rng, &spec, 0.5);
                        let all: Vec<usize> = (0..n).collect();
                        if lambda > 0.0 && !intercepts {
                            // no intercepts for the Laplacian penalty to act on
                            let err = objective_value(&params, &spec, &ds, &all, &objective).unwrap_err();
                            ensure(err.code() == "E_CONFIG", || format!("expected E_CONFIG, got {err}"))?;
                            ensure(gradient(&params, &spec, &ds, &all, &objective).is_err(), || "gradient accepted lambda>0 without intercepts".into())?;
                            rejected += 1;
                            continue;
                        }
                        let analytic = gradient(&params, &spec, &ds, &all, &objective).unwrap().to_flat();
                        let flat = params.to_flat();
                        let f = |x: &[f64]| objective_value(&ModelParams::from_flat(&spec, x).unwrap(), &spec, &ds, &all, &objective).unwrap();
                        let fd: Vec<f64> = (0..flat.len())
                            .map(|i| {
                                let mut p = flat.clone();
                                p[i] += h;
                                let up = f(&p);
                                p[i] -= 2.0 * h;
                                (up - f(&p)) / (2.0 * h)
                            })
                            .collect();
                        let e = rel_err(&analytic, &fd);
                        ensure(e < 1e-4, || format!("{family:?} intercepts={intercepts} lambda={lambda} l2={l2}: rel err {e:.3e}"))?;
                        worst = worst.max(e);
                        checked += 1;
                    }
                }
            }
        }
    }
    Ok(format!(
        "{checked} instances over 24 combos, max rel err {worst:.2e}; {rejected} lambda>0-without-intercepts instances rejected with E_CONFIG"
    ))
}

// 3 ------------------------------------------------------------------------

/// 200,000 fixed-step gradient-descent steps at learning rate 1e-3.
fn gd_oracle(spec: &ModelSpec, ds: &ChoiceDataset, choosers: &[usize], objective: &Objective<'_>) -> f64 {
    let mut params = ModelParams::zeros(spec);
    let mut x = params.to_flat();
    for _ in 0..200_000 {
        let g = gradient(&params, spec, ds, choosers, objective).unwrap().to_flat();
        for (a, b) in x.iter_mut().zip(&g) {
            *a -= 1e-3 * b;
        }
        params = ModelParams::from_flat(spec, &x).unwrap();
    }
    objective_value(&params, spec, ds, choosers, objective).unwrap()
}

fn optimizer_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    for inst in 0..20 {
        let family = [Family::Logit, Family::Cl, Family::Mnl, Family::Cml][inst % 4];
        let n = rng.gen_range(2..=5);
        let k = rng.gen_range(2..=4);
        let n_obs = rng.gen_range(5..=30);
        let g = connected_graph(n, 0.6, &mut rng);
        let ds = random_dataset(&mut rng, family, n, k, n_obs);
        let spec = ModelSpec::for_dataset(family, true, &ds).unwrap();
        // ridge on every block keeps the objective strongly convex
        let objective = Objective { l2_on_intercepts: true, ..Objective::new(0.1, 0.05, Some(&g)) };
        let all: Vec<usize> = (0..n).collect();
        let opts = TrainOptions { learning_rate: 0.01, max_epochs: 5000, ..TrainOptions::default() };
        let report = train(&spec, &ds, &all, &objective, &opts).map_err(|e| e.to_string())?;
        let oracle = gd_oracle(&spec, &ds, &all, &objective);
        let gap = (report.final_objective - oracle).abs();
        ensure(gap < 1e-3, || format!("instance {inst}: rprop {} vs oracle {oracle} (gap {gap:.3e})", report.final_objective))?;
        worst = worst.max(gap);
    }
    Ok(format!("20 instances, max |rprop - oracle| {worst:.2e}"))
}

// 4 ------------------------------------------------------------------------

fn propagation_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    let mut worst_default = 0.0f64;
    for _ in 0..20 {
        let n = rng.gen_range(2..=20);
        let g = connected_graph(n, 0.3, &mut rng);
        let k = rng.gen_range(2..=5);
        let z0 = Array2::from_shape_simple_fn((n, k), || rng.gen_range(0.0..1.0));
        let s = g.normalized_adjacency(false);
        let exact = propagate(&z0, &g, &PropagationConfig::new(0.0)).map_err(|e| e.to_string())?;
        ensure(exact.z == z0, || "rho = 0 did not return Z0 exactly".into())?;
        for rho in [0.1, 0.5, 0.9] {
            let residual = |z: &Array2<f64>| {
                let r = z - &(&z0 * (1.0 - rho)) - &(s.dot(z) * rho);
                r.iter().fold(0.0f64, |m, v| m.max(v.abs()))
            };
            let cfg = PropagationConfig { tolerance: 1e-24, ..PropagationConfig::new(rho) };
            let r = propagate(&z0, &g, &cfg).map_err(|e| e.to_string())?;
            worst = worst.max(residual(&r.z));
            let d = propagate(&z0, &g, &PropagationConfig::new(rho)).map_err(|e| e.to_string())?;
            worst_default = worst_default.max(residual(&d.z));
        }
    }
    ensure(worst < 1e-6, || format!("max residual {worst:.3e} >= 1e-6"))?;
    Ok(format!(
        "60 (graph, rho) cases, max residual {worst:.2e} at tolerance 1e-24 (default 1e-8 stop: {worst_default:.2e}); rho=0 exact"
    ))
}

// 5 ------------------------------------------------------------------------

fn sample_complexity() -> Outcome {
    let cfg = SampleComplexityConfig { lambdas: vec![1.0], base_seed: 5, ..SampleComplexityConfig::default() };
    let curves = run_sample_complexity(&cfg).map_err(|e| e.to_string())?;
    let reg = curves.iter().find(|c| c.regularized).unwrap();
    let unreg = curves.iter().find(|c| !c.regularized).unwrap();
    let at = |c: &graphchoice::evaluation::SampleComplexityCurve, s: usize| {
        c.mse[c.samples_per_chooser.iter().position(|&x| x == s).unwrap()]
    };
    let (r1, u100) = (at(reg, 1), at(unreg, 100));
    let table: Vec<String> = reg
        .samples_per_chooser
        .iter()
        .zip(reg.mse.iter().zip(&unreg.mse))
        .map(|(s, (r, u))| format!("{s}:{r:.3}/{u:.3}"))
        .collect();
    ensure(r1 < u100, || format!("regularized@1 {r1:.4} >= unregularized@100 {u100:.4}"))?;
    for (i, s) in reg.samples_per_chooser.iter().enumerate() {
        ensure(reg.mse[i] <= unreg.mse[i], || format!("at {s} samples regularized {:.4} > unregularized {:.4}", reg.mse[i], unreg.mse[i]))?;
    }
    Ok(format!("reg@1 {r1:.4} < unreg@100 {u100:.4}; reg/unreg by samples {}", table.join(" ")))
}

// 6 ------------------------------------------------------------------------

/// Mean (laplacian, logit) test NLL and MRR with standard errors on data
/// drawn from the prior over `g`.
fn laplacian_vs_logit(g: &SocialGraph, seed: u64) -> Result<[[(f64, f64); 2]; 2], String> {
    let prior = sample_prior_utilities(g, 1.0, 10, seed).map_err(|e| e.to_string())?;
    let ds = simulate_choices(&prior, 50, (2, 10), seed + 1).map_err(|e| e.to_string())?;
    let settings = FitSettings { family: Family::Logit, ..FitSettings::default() };
    let rows = run_semi_supervised(&ds, Some(g), &[Method::Laplacian, Method::Logit], &[0.5], 8, seed + 2, &HyperGrid::default(), &settings)
        .map_err(|e| e.to_string())?;
    let stat = |m: Method, nll: bool| {
        let vals: Vec<f64> = rows
            .iter()
            .filter(|r| r.method == m)
            .map(|r| if nll { r.test_nll.unwrap() } else { r.test_mrr })
            .collect();
        mean_and_stderr(&vals)
    };
    Ok([
        [stat(Method::Laplacian, true), stat(Method::Logit, true)],
        [stat(Method::Laplacian, false), stat(Method::Logit, false)],
    ])
}

fn semi_supervised() -> Outcome {
    // Spatial graph with the mean degree of G(100, 0.1).
    let g = random_geometric(100, geometric_radius(100, 9.9), 6006).map_err(|e| e.to_string())?;
    let stats = laplacian_vs_logit(&g, 6007)?;
    let er = erdos_renyi(100, 0.1, 6006).map_err(|e| e.to_string())?;
    let er_stats = laplacian_vs_logit(&er, 6007)?;
    let mut parts = Vec::new();
    for (m, name) in ["NLL", "MRR"].iter().enumerate() {
        let [(ml, sl), (mb, sb)] = stats[m];
        let pooled = (sl * sl + sb * sb).sqrt();
        ensure(mb - ml >= pooled, || format!("{name}: laplacian {ml:.4} vs logit {mb:.4}, pooled SE {pooled:.4}"))?;
        parts.push(format!("{name} laplacian {ml:.4} vs logit {mb:.4} (pooled SE {pooled:.4})"));
    }
    let [(el, _), (eb, _)] = er_stats[0];
    let [(rl, _), (rb, _)] = er_stats[1];
    Ok(format!(
        "geometric graph, {} edges: {}; for reference on G(100, 0.1): NLL {el:.4} vs {eb:.4}, MRR {rl:.4} vs {rb:.4}",
        g.n_edges(),
        parts.join("; ")
    ))
}

// 7 ------------------------------------------------------------------------

fn gumbel_max() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let u = Array1::from_shape_simple_fn(5, || normal(&mut rng));
    let p = choice_probabilities(u.view());
    let gumbel = Gumbel::new(0.0, 1.0).unwrap();
    let draws = 100_000;
    let mut counts = [0usize; 5];
    for _ in 0..draws {
        let (best, _) = u
            .iter()
            .map(|&x| x + gumbel.sample(&mut rng))
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
        counts[best] += 1;
    }
    let tv = 0.5 * counts.iter().zip(p.iter()).map(|(&c, &q)| (c as f64 / draws as f64 - q).abs()).sum::<f64>();
    ensure(tv < 0.01, || format!("TV distance {tv:.4}"))?;
    Ok(format!("TV distance {tv:.4} over {draws} draws"))
}

// 8 ------------------------------------------------------------------------

fn permute_dataset(ds: &ChoiceDataset, perm: &[usize]) -> ChoiceDataset {
    let obs = ds
        .observations
        .iter()
        .map(|o| ChoiceObservation { chooser: perm[o.chooser], ..o.clone() })
        .collect();
    let x = ds.chooser_features.as_ref().map(|x| {
        let mut out = Array2::zeros(x.raw_dim());
        for (i, &p) in perm.iter().enumerate() {
            out.row_mut(p).assign(&x.row(i));
        }
        out
    });
    ChoiceDataset::new(ds.n_choosers, ds.n_items, obs, x).unwrap()
}

/// Central-difference gradient of a GCN objective, or `None` when a step
/// changes the ReLU activation pattern (the stencil straddles a kink and
/// finite differences are not a valid oracle there).
fn gcn_fd(g: &SocialGraph, params: &GcnParams, cfg: &GcnConfig, ds: &ChoiceDataset, l2: f64, h: f64) -> Option<Vec<f64>> {
    let op = g.normalized_operator(true);
    let obs: Vec<usize> = (0..ds.observations.len()).collect();
    let pattern = |p: &GcnParams| -> Vec<bool> { gcn_forward(g, p, cfg, ds, Mode::Eval).unwrap().iter().map(|&v| v > 0.0).collect() };
    let base = pattern(params);
    let flat = params.to_flat();
    let mut out = Vec::with_capacity(flat.len());
    for i in 0..flat.len() {
        let mut vals = [0.0; 2];
        for (slot, sign) in [(0, 1.0), (1, -1.0)] {
            let mut x = flat.clone();
            x[i] += sign * h;
            let mut p = params.clone();
            p.assign_flat(&x);
            if pattern(&p) != base {
                return None;
            }
            vals[slot] = objective_and_gradient(&op, &p, cfg, ds, &obs, l2, Mode::Eval).unwrap().0;
        }
        out.push((vals[0] - vals[1]) / (2.0 * h));
    }
    Some(out)
}

fn gcn_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let cfg = GcnConfig::default();
    let mut worst_perm = 0.0f64;
    let mut worst_fd = 0.0f64;
    let mut redraws = 0;
    for family in [Family::Logit, Family::Mnl] {
        let n = 6;
        let (g, ds, params, fd) = loop {
            let g = connected_graph(n, 0.5, &mut rng);
            let ds = random_dataset(&mut rng, family, n, 4, 24);
            let mut params = GcnParams::init(&cfg, &ds, rng.gen()).unwrap();
            params.u = Array1::from_shape_simple_fn(4, || normal(&mut rng));
            params.gamma = random_matrix(&mut rng, 4, cfg.embedding_dim(cfg.input_dim(&ds)), 0.5);
            match gcn_fd(&g, &params, &cfg, &ds, 0.01, 1e-4) {
                Some(fd) => break (g, ds, params, fd),
                None if redraws < 50 => redraws += 1,
                None => return Err("no kink-free instance in 50 draws".into()),
            }
        };

        // equivariance
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let gp = g.permuted(&perm).unwrap();
        let dp = permute_dataset(&ds, &perm);
        let mut pp = params.clone();
        if let Some(h0) = &params.input {
            let mut out = Array2::zeros(h0.raw_dim());
            for (i, &p) in perm.iter().enumerate() {
                out.row_mut(p).assign(&h0.row(i));
            }
            pp.input = Some(out);
        }
        let h = gcn_forward(&g, &params, &cfg, &ds, Mode::Eval).unwrap();
        let hp = gcn_forward(&gp, &pp, &cfg, &dp, Mode::Eval).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            let d = (&h.row(i) - &hp.row(p)).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            worst_perm = worst_perm.max(d);
        }

        // eval determinism
        let again = gcn_forward(&g, &params, &cfg, &ds, Mode::Eval).unwrap();
        ensure(h.iter().zip(again.iter()).all(|(a, b)| a.to_bits() == b.to_bits()), || "eval mode not bitwise deterministic".into())?;

        // end-to-end gradient against central differences, h = 1e-4
        let op = g.normalized_operator(true);
        let obs: Vec<usize> = (0..ds.observations.len()).collect();
        let (_, grad) = objective_and_gradient(&op, &params, &cfg, &ds, &obs, 0.01, Mode::Eval).unwrap();
        worst_fd = worst_fd.max(rel_err(&grad.to_flat(), &fd));
    }
    ensure(worst_perm < 1e-6, || format!("equivariance error {worst_perm:.3e}"))?;
    ensure(worst_fd < 1e-3, || format!("FD rel err {worst_fd:.3e}"))?;
    Ok(format!(
        "equivariance {worst_perm:.1e}, eval bitwise deterministic, FD rel err {worst_fd:.2e} at h=1e-4 \
         (learned and given inputs; {redraws} draws rejected for a ReLU kink inside the stencil)"
    ))
}

// 9 ------------------------------------------------------------------------

fn metric_units() -> Outcome {
    let ranking = [4, 3, 2, 1, 0];
    let got = [relative_rank(&ranking, 4), relative_rank(&ranking, 2), relative_rank(&ranking, 0)];
    ensure(got == [Some(0.0), Some(0.5), Some(1.0)], || format!("MRR values {got:?}"))?;
    let spec = ModelSpec::new(Family::Logit, false, 0, 0, 1, 2).unwrap();
    let zeros = ModelParams::zeros(&spec);
    let one = |w: f64| ChoiceDataset::new(1, 2, vec![ChoiceObservation::new(0, 0, vec![0, 1], 0).with_weight(w)], None).unwrap();
    let a = negative_log_likelihood(&zeros, &spec, &one(1.0), &[0]).unwrap();
    let b = negative_log_likelihood(&zeros, &spec, &one(3.0), &[0]).unwrap();
    ensure(a == 2f64.ln() && b == 3.0 * 2f64.ln(), || format!("NLL values {a}, {b}"))?;
    Ok(format!("MRR (0, 0.5, 1) exact; NLL {a} and {b} exact"))
}

// 10 -----------------------------------------------------------------------

fn chooser_probs(spec: &ModelSpec, params: &ModelParams, x: Option<&Array2<f64>>, chooser: usize, set: &[usize]) -> Vec<f64> {
    let obs = ChoiceObservation::new(0, chooser, set.to_vec(), 0);
    let u = utilities(params, spec, &obs, x.map(|x| x.row(chooser))).unwrap();
    choice_probabilities(u.view()).to_vec()
}

fn counterfactual_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let (n, k) = (40, 5);
    let spec = ModelSpec::new(Family::Mnl, true, 2, 0, n, k).unwrap();
    let params = random_params(&mut rng, &spec, 1.0);
    let x = random_matrix(&mut rng, n, 2, 1.0);
    let base: Vec<Vec<usize>> = (0..n)
        .map(|_| {
            let size = rng.gen_range(2..=4);
            let mut s = sample(&mut rng, 4, size).into_vec();
            if !s.contains(&0) {
                s.push(0);
            }
            s.sort_unstable();
            s
        })
        .collect();
    let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..100.0)).collect();
    let groups = GroupMap::new((0..n).map(|a| a % 2).collect(), vec!["north".into(), "south".into()]).unwrap();
    let totals = group_weights(&weights, &groups);
    let scenarios = [Scenario::ReplaceAllSets(vec![0, 1]), Scenario::IntersectSets(vec![0, 1, 2]), Scenario::AddItem(4)];
    let mut all_sets = vec![base.clone()];
    let mut worst_cons = 0.0f64;
    for sc in &scenarios {
        let sets = apply_scenario(&base, sc, k).map_err(|e| e.to_string())?;
        let pop = Population {
            chooser_sets: &sets,
            chooser_weights: &weights,
            chooser_features: Some(&x),
            item_features: None,
            groups: &groups,
        };
        let counts = aggregate_predictions(&params, &spec, &pop).map_err(|e| e.to_string())?;
        for gi in 0..2 {
            worst_cons = worst_cons.max((counts.row(gi).sum() - totals[gi]).abs() / totals[gi]);
        }
        all_sets.push(sets);
    }
    ensure(worst_cons < 1e-6, || format!("conservation rel error {worst_cons:.3e}"))?;

    let mut worst_iia = 0.0f64;
    for a in 0..n {
        for s1 in 0..all_sets.len() {
            for s2 in s1 + 1..all_sets.len() {
                let (c1, c2) = (&all_sets[s1][a], &all_sets[s2][a]);
                let p1 = chooser_probs(&spec, &params, Some(&x), a, c1);
                let p2 = chooser_probs(&spec, &params, Some(&x), a, c2);
                let pos = |c: &[usize], i: usize| c.iter().position(|&v| v == i);
                for i in 0..k {
                    for j in 0..k {
                        if let (Some(i1), Some(j1), Some(i2), Some(j2)) = (pos(c1, i), pos(c1, j), pos(c2, i), pos(c2, j)) {
                            let (r1, r2) = (p1[i1] / p1[j1], p2[i2] / p2[j2]);
                            worst_iia = worst_iia.max((r1 - r2).abs() / r1.abs());
                        }
                    }
                }
            }
        }
    }
    ensure(worst_iia < 1e-9, || format!("IIA ratio rel error {worst_iia:.3e}"))?;

    // One group: 40 voters strongly for A; 60 split evenly between B and C.
    let mspec = ModelSpec::new(Family::Logit, true, 0, 0, 2, 3).unwrap();
    let mut mp = ModelParams::zeros(&mspec);
    mp.v = Some(ndarray::array![[6.0, -6.0], [0.0, 0.0], [0.0, 0.0]]);
    let mw = [40.0, 60.0];
    let one_group = GroupMap::single(2, "state");
    let winner = |sets: &[Vec<usize>]| -> Result<usize, String> {
        let pop = Population { chooser_sets: sets, chooser_weights: &mw, chooser_features: None, item_features: None, groups: &one_group };
        let counts = aggregate_predictions(&mp, &mspec, &pop).map_err(|e| e.to_string())?;
        Ok(plurality_winners(&counts).map_err(|e| e.to_string())?[0].item)
    };
    let full = vec![vec![0, 1, 2]; 2];
    let w_full = winner(&full)?;
    let narrowed = apply_scenario(&full, &Scenario::ReplaceAllSets(vec![0, 1]), 3).map_err(|e| e.to_string())?;
    let w_narrow = winner(&narrowed)?;
    ensure(w_full == 0 && w_narrow == 1, || format!("winners {w_full} -> {w_narrow}, expected 0 -> 1"))?;
    Ok(format!("conservation {worst_cons:.1e}, IIA {worst_iia:.1e} over 3 scenario kinds; mixture winner flips A -> B"))
}

// 11 -----------------------------------------------------------------------

fn community_recovery() -> Outcome {
    let sizes = [100, 100];
    let g = planted_partition(sizes, 0.1, 0.04, 1111).map_err(|e| e.to_string())?;
    let n = sizes[0] + sizes[1];
    let k = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(1112);
    let base: Vec<f64> = (0..k).map(|_| 0.5 * normal(&mut rng)).collect();
    let truth = Array2::from_shape_fn((n, k), |(a, i)| {
        let community = usize::from(a >= sizes[0]);
        let boost = match i {
            0 | 1 if i == community => 2.5,
            0 | 1 => -2.5,
            _ => 0.0,
        };
        base[i] + boost
    });
    let prior = PriorSample { utilities: truth, lambda: 1.0 };
    let ds = simulate_choices(&prior, 20, (2, k), 1113).map_err(|e| e.to_string())?;
    let spec = ModelSpec::for_dataset(Family::Logit, true, &ds).unwrap();
    let objective = Objective::new(0.1, 1e-3, Some(&g));
    let all: Vec<usize> = (0..n).collect();
    let report = train(&spec, &ds, &all, &objective, &TrainOptions::with_learning_rate(0.1)).map_err(|e| e.to_string())?;
    let top = top_k_items(&report.final_params, 2).map_err(|e| e.to_string())?;
    let groups = [choosers_with_item(&top, 0), choosers_with_item(&top, 1)];
    let grid = group_density_grid(&g, &groups).map_err(|e| e.to_string())?;
    let (w0, w1, b) = (grid[[0, 0]], grid[[1, 1]], grid[[0, 1]]);
    ensure(w0 > b && w1 > b, || format!("within {w0:.4}/{w1:.4} vs between {b:.4}"))?;
    ensure(w0 > 2.0 * b && w1 > 2.0 * b, || format!("within {w0:.4}/{w1:.4} not twice between {b:.4}"))?;
    Ok(format!(
        "|F|={} |M|={}; within {w0:.4}/{w1:.4} vs between {b:.4} (ratios {:.2}/{:.2})",
        groups[0].len(),
        groups[1].len(),
        w0 / b,
        w1 / b
    ))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        ("penalty equals prior negative log-density difference", theorem_identity),
        ("gradient finite-difference suite", gradient_suite),
        ("rprop matches gradient-descent oracle", optimizer_oracle),
        ("propagation fixed point", propagation_oracle),
        ("sample-complexity curves", sample_complexity),
        ("semi-supervised laplacian beats logit", semi_supervised),
        ("gumbel-max equivalence", gumbel_max),
        ("gcn equivariance, determinism, gradients", gcn_checks),
        ("metric unit values", metric_units),
        ("counterfactual conservation and IIA", counterfactual_checks),
        ("community recovery", community_recovery),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{id}] {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{id}] {name} ({secs:.1}s): {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
