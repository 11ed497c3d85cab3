//! Choice observations, datasets, flat-file ingestion, chooser splits and
//! choice-fraction matrices.
//!
//! External string identifiers are mapped to dense 0-based indices at load
//! time. Choosers listed in the chooser feature file come first (in file
//! order), followed by any further choosers in order of first appearance in
//! the observation file. Items are indexed in order of first appearance in
//! the choice sets.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One choice event: chooser `chooser` picked `choice_set[chosen_index]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceObservation {
    pub observation_id: u64,
    pub chooser: usize,
    pub choice_set: Vec<usize>,
    pub chosen_index: usize,
    /// Multiplicity of the event, e.g. a county's vote count.
    pub weight: f64,
    /// Per-instance item features, one row per member of `choice_set`.
    pub item_features: Option<Array2<f64>>,
}

impl ChoiceObservation {
    pub fn new(observation_id: u64, chooser: usize, choice_set: Vec<usize>, chosen_index: usize) -> Self {
        Self {
            observation_id,
            chooser,
            choice_set,
            chosen_index,
            weight: 1.0,
            item_features: None,
        }
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn with_item_features(mut self, features: Array2<f64>) -> Self {
        self.item_features = Some(features);
        self
    }

    pub fn chosen_item(&self) -> usize {
        self.choice_set[self.chosen_index]
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.choice_set.is_empty() {
            return Err("empty choice set".into());
        }
        if self.chosen_index >= self.choice_set.len() {
            return Err(format!(
                "chosen index {} outside choice set of size {}",
                self.chosen_index,
                self.choice_set.len()
            ));
        }
        let mut seen = HashSet::with_capacity(self.choice_set.len());
        for &item in &self.choice_set {
            if !seen.insert(item) {
                return Err(format!("item {item} appears twice in the choice set"));
            }
        }
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return Err(format!("weight {} is not a finite nonnegative number", self.weight));
        }
        if let Some(y) = &self.item_features {
            if y.nrows() != self.choice_set.len() {
                return Err(format!(
                    "item feature matrix has {} rows for a choice set of size {}",
                    y.nrows(),
                    self.choice_set.len()
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceDataset {
    pub n_choosers: usize,
    pub n_items: usize,
    pub d_x: usize,
    pub d_y: usize,
    pub observations: Vec<ChoiceObservation>,
    pub chooser_features: Option<Array2<f64>>,
    /// External identifier of each chooser index.
    pub chooser_ids: Vec<String>,
    /// External identifier of each item index.
    pub item_ids: Vec<String>,
}

impl ChoiceDataset {
    /// Builds a dataset with generated identifiers (`"0"`, `"1"`, ...).
    pub fn new(
        n_choosers: usize,
        n_items: usize,
        observations: Vec<ChoiceObservation>,
        chooser_features: Option<Array2<f64>>,
    ) -> Result<Self> {
        let d_x = chooser_features.as_ref().map_or(0, |x| x.ncols());
        let d_y = observations
            .iter()
            .find_map(|o| o.item_features.as_ref().map(|y| y.ncols()))
            .unwrap_or(0);
        let dataset = Self {
            n_choosers,
            n_items,
            d_x,
            d_y,
            observations,
            chooser_features,
            chooser_ids: (0..n_choosers).map(|i| i.to_string()).collect(),
            item_ids: (0..n_items).map(|i| i.to_string()).collect(),
        };
        dataset.validate()?;
        Ok(dataset)
    }

    pub fn validate(&self) -> Result<()> {
        if self.chooser_ids.len() != self.n_choosers || self.item_ids.len() != self.n_items {
            return Err(Error::Dataset("identifier tables do not match dimensions".into()));
        }
        match &self.chooser_features {
            Some(x) => {
                if x.nrows() != self.n_choosers || x.ncols() != self.d_x || self.d_x == 0 {
                    return Err(Error::Dataset(format!(
                        "chooser features are {}x{}, expected {}x{} with d_x > 0",
                        x.nrows(),
                        x.ncols(),
                        self.n_choosers,
                        self.d_x
                    )));
                }
            }
            None if self.d_x != 0 => {
                return Err(Error::Dataset("d_x > 0 but no chooser features".into()));
            }
            None => {}
        }
        for (row, obs) in self.observations.iter().enumerate() {
            let fail = |m: String| Error::Dataset(format!("observation {} (row {}): {m}", obs.observation_id, row + 1));
            obs.validate().map_err(fail)?;
            if obs.chooser >= self.n_choosers {
                return Err(fail(format!("chooser {} out of range", obs.chooser)));
            }
            if let Some(&item) = obs.choice_set.iter().find(|&&i| i >= self.n_items) {
                return Err(fail(format!("item {item} out of range")));
            }
            match &obs.item_features {
                Some(y) if y.ncols() != self.d_y => {
                    return Err(fail(format!("{} item features, expected {}", y.ncols(), self.d_y)));
                }
                None if self.d_y > 0 => return Err(fail("missing item features".into())),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn chooser_feature_row(&self, chooser: usize) -> Option<ndarray::ArrayView1<'_, f64>> {
        self.chooser_features.as_ref().map(|x| x.row(chooser))
    }

    /// Indices of observations made by the given choosers, in dataset order.
    pub fn observations_of(&self, choosers: &[usize]) -> Vec<usize> {
        let mask = chooser_mask(self.n_choosers, choosers);
        self.observations
            .iter()
            .enumerate()
            .filter(|(_, o)| mask[o.chooser])
            .map(|(i, _)| i)
            .collect()
    }

    /// Total observation weight per chooser.
    pub fn chooser_weights(&self) -> Array1<f64> {
        let mut w = Array1::zeros(self.n_choosers);
        for obs in &self.observations {
            w[obs.chooser] += obs.weight;
        }
        w
    }

    /// Extends the chooser universe with identifiers that have no
    /// observations (e.g. graph nodes of held-out choosers). Known ids are
    /// ignored. Fails if chooser features are present, since new choosers
    /// would have no feature row.
    pub fn add_choosers<'a>(&mut self, ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
        let mut known: HashSet<String> = self.chooser_ids.iter().cloned().collect();
        for id in ids {
            if known.contains(id) {
                continue;
            }
            if self.chooser_features.is_some() {
                return Err(Error::Dataset(format!("chooser {id:?} has no chooser feature row")));
            }
            known.insert(id.to_string());
            self.chooser_ids.push(id.to_string());
            self.n_choosers += 1;
        }
        Ok(())
    }

    pub fn chooser_index(&self, id: &str) -> Option<usize> {
        self.chooser_ids.iter().position(|c| c == id)
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_ids.iter().position(|c| c == id)
    }
}

pub(crate) fn chooser_mask(n: usize, choosers: &[usize]) -> Vec<bool> {
    let mut mask = vec![false; n];
    for &c in choosers {
        if c < n {
            mask[c] = true;
        }
    }
    mask
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChooserSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Random chooser split: `floor(n * train_fraction)` training choosers, then
/// the remainder halved with validation taking the extra chooser on odd
/// remainders.
pub fn split_choosers(dataset: &ChoiceDataset, train_fraction: f64, seed: u64) -> Result<ChooserSplit> {
    split_indices(dataset.n_choosers, train_fraction, seed)
}

pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<ChooserSplit> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Split(format!("train fraction {train_fraction} not in (0, 1)")));
    }
    let n_train = (n as f64 * train_fraction).floor() as usize;
    if n_train < 1 {
        return Err(Error::Split(format!("{n} choosers at fraction {train_fraction} give an empty training set")));
    }
    let rem = n - n_train;
    if rem < 2 {
        return Err(Error::Split(format!(
            "only {rem} chooser(s) left for validation and test"
        )));
    }
    let n_val = rem.div_ceil(2);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    perm.shuffle(&mut rng);
    Ok(ChooserSplit {
        train: perm[..n_train].to_vec(),
        validation: perm[n_train..n_train + n_val].to_vec(),
        test: perm[n_train + n_val..].to_vec(),
        seed,
    })
}

/// Weighted fraction of opportunities on which each chooser picked each
/// item, restricted to `choosers`. Entries with no opportunity are zero.
pub fn choice_fractions(dataset: &ChoiceDataset, choosers: &[usize]) -> Array2<f64> {
    let (n, k) = (dataset.n_choosers, dataset.n_items);
    let mask = chooser_mask(n, choosers);
    let mut chosen = Array2::<f64>::zeros((n, k));
    let mut offered = Array2::<f64>::zeros((n, k));
    for obs in dataset.observations.iter().filter(|o| mask[o.chooser]) {
        for &item in &obs.choice_set {
            offered[[obs.chooser, item]] += obs.weight;
        }
        chosen[[obs.chooser, obs.chosen_item()]] += obs.weight;
    }
    ndarray::Zip::from(&mut chosen).and(&offered).for_each(|c, &o| {
        *c = if o > 0.0 { *c / o } else { 0.0 };
    });
    chosen
}

/// Recency feature `1 / ln(seconds since last use)`, with the elapsed time
/// clamped to at least 2 seconds; 0 when the item has never been used.
pub fn recency_feature(seconds_since_last_use: Option<f64>) -> f64 {
    match seconds_since_last_use {
        None => 0.0,
        Some(s) => 1.0 / s.max(2.0).ln(),
    }
}

// ---------------------------------------------------------------------------
// Flat files

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file))
}

fn column(headers: &csv::StringRecord, name: &str, path: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::schema(path, 0, format!("missing column {name:?}")))
}

fn parse_f64(s: &str, path: &str, row: usize, what: &str) -> Result<f64> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::schema(path, row, format!("{what} {s:?} is not a finite number")))
}

struct IdTable {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdTable {
    fn new() -> Self {
        Self { ids: Vec::new(), index: HashMap::new() }
    }

    fn get_or_insert(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), i);
        i
    }
}

/// Reads a dataset from `observations.csv` and optional chooser/item feature
/// files.
pub fn load_dataset(
    observation_file: &Path,
    chooser_feature_file: Option<&Path>,
    item_feature_file: Option<&Path>,
) -> Result<ChoiceDataset> {
    let mut choosers = IdTable::new();
    let mut items = IdTable::new();

    let mut feature_rows: Vec<Vec<f64>> = Vec::new();
    let mut d_x = 0;
    if let Some(path) = chooser_feature_file {
        let p = path.display().to_string();
        let mut rdr = open_reader(path)?;
        d_x = rdr.headers()?.len().saturating_sub(1);
        if d_x == 0 {
            return Err(Error::schema(&p, 0, "chooser feature file has no feature columns"));
        }
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 1;
            let rec = rec?;
            if rec.len() != d_x + 1 {
                return Err(Error::schema(&p, row, format!("expected {} columns, found {}", d_x + 1, rec.len())));
            }
            let id = &rec[0];
            if choosers.index.contains_key(id) {
                return Err(Error::schema(&p, row, format!("duplicate chooser {id:?}")));
            }
            choosers.get_or_insert(id);
            let values = rec
                .iter()
                .skip(1)
                .map(|s| parse_f64(s, &p, row, "feature"))
                .collect::<Result<Vec<_>>>()?;
            feature_rows.push(values);
        }
    }
    let n_featured = choosers.ids.len();

    let p = observation_file.display().to_string();
    let mut rdr = open_reader(observation_file)?;
    let headers = rdr.headers()?.clone();
    let c_id = column(&headers, "observation_id", &p)?;
    let c_chooser = column(&headers, "chooser_id", &p)?;
    let c_set = column(&headers, "choice_set", &p)?;
    let c_chosen = column(&headers, "chosen_item", &p)?;
    let c_weight = headers.iter().position(|h| h == "weight");

    let mut observations = Vec::new();
    let mut seen_ids = HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let observation_id: u64 = rec[c_id]
            .parse()
            .map_err(|_| Error::schema(&p, row, format!("observation_id {:?} is not an integer", &rec[c_id])))?;
        if !seen_ids.insert(observation_id) {
            return Err(Error::schema(&p, row, format!("duplicate observation_id {observation_id}")));
        }
        let chooser_id = &rec[c_chooser];
        if chooser_feature_file.is_some() && !choosers.index.contains_key(chooser_id) {
            return Err(Error::schema(&p, row, format!("chooser {chooser_id:?} has no chooser feature row")));
        }
        let chooser = choosers.get_or_insert(chooser_id);
        let names: Vec<&str> = rec[c_set].split('|').map(str::trim).collect();
        if names.iter().any(|s| s.is_empty()) {
            return Err(Error::schema(&p, row, "empty item identifier in choice set"));
        }
        let mut uniq = HashSet::new();
        if let Some(dup) = names.iter().find(|s| !uniq.insert(**s)) {
            return Err(Error::schema(&p, row, format!("item {dup:?} appears twice in the choice set")));
        }
        let chosen = rec[c_chosen].trim();
        let chosen_index = names.iter().position(|s| *s == chosen).ok_or_else(|| {
            Error::schema(&p, row, format!("chosen item {chosen:?} is not in the choice set"))
        })?;
        let choice_set = names.iter().map(|s| items.get_or_insert(s)).collect();
        let weight = match c_weight.map(|c| rec.get(c).unwrap_or("").trim()) {
            None | Some("") => 1.0,
            Some(s) => {
                let w = parse_f64(s, &p, row, "weight")?;
                if w < 0.0 {
                    return Err(Error::schema(&p, row, format!("negative weight {w}")));
                }
                w
            }
        };
        observations.push(ChoiceObservation {
            observation_id,
            chooser,
            choice_set,
            chosen_index,
            weight,
            item_features: None,
        });
    }
    debug_assert!(n_featured == 0 || choosers.ids.len() == n_featured);

    let mut d_y = 0;
    if let Some(path) = item_feature_file {
        d_y = attach_item_features(path, &mut observations, &items)?;
    }

    let chooser_features = if chooser_feature_file.is_some() {
        let n = choosers.ids.len();
        let flat: Vec<f64> = feature_rows.into_iter().flatten().collect();
        Some(Array2::from_shape_vec((n, d_x), flat).expect("rows checked above"))
    } else {
        None
    };

    let dataset = ChoiceDataset {
        n_choosers: choosers.ids.len(),
        n_items: items.ids.len(),
        d_x,
        d_y,
        observations,
        chooser_features,
        chooser_ids: choosers.ids,
        item_ids: items.ids,
    };
    dataset.validate()?;
    Ok(dataset)
}

fn attach_item_features(path: &Path, observations: &mut [ChoiceObservation], items: &IdTable) -> Result<usize> {
    let p = path.display().to_string();
    let mut rdr = open_reader(path)?;
    let headers = rdr.headers()?.clone();
    let d_y = headers.len().saturating_sub(2);
    if d_y == 0 {
        return Err(Error::schema(&p, 0, "item feature file has no feature columns"));
    }
    let by_id: HashMap<u64, usize> = observations
        .iter()
        .enumerate()
        .map(|(i, o)| (o.observation_id, i))
        .collect();
    let mut filled: Vec<Vec<bool>> = observations.iter().map(|o| vec![false; o.choice_set.len()]).collect();
    for obs in observations.iter_mut() {
        obs.item_features = Some(Array2::zeros((obs.choice_set.len(), d_y)));
    }
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        if rec.len() != d_y + 2 {
            return Err(Error::schema(&p, row, format!("expected {} columns, found {}", d_y + 2, rec.len())));
        }
        let oid: u64 = rec[0]
            .parse()
            .map_err(|_| Error::schema(&p, row, format!("observation_id {:?} is not an integer", &rec[0])))?;
        let o = *by_id
            .get(&oid)
            .ok_or_else(|| Error::schema(&p, row, format!("unknown observation {oid}")))?;
        let item = *items
            .index
            .get(&rec[1])
            .ok_or_else(|| Error::schema(&p, row, format!("unknown item {:?}", &rec[1])))?;
        let pos = observations[o]
            .choice_set
            .iter()
            .position(|&it| it == item)
            .ok_or_else(|| Error::schema(&p, row, format!("item {:?} is not in observation {oid}'s choice set", &rec[1])))?;
        if filled[o][pos] {
            return Err(Error::schema(&p, row, format!("duplicate features for ({oid}, {:?})", &rec[1])));
        }
        filled[o][pos] = true;
        let y = observations[o].item_features.as_mut().expect("allocated above");
        for (j, s) in rec.iter().skip(2).enumerate() {
            y[[pos, j]] = parse_f64(s, &p, row, "feature")?;
        }
    }
    for (o, f) in filled.iter().enumerate() {
        if let Some(pos) = f.iter().position(|x| !x) {
            let obs = &observations[o];
            return Err(Error::schema(
                &p,
                0,
                format!(
                    "missing features for observation {} item {:?}",
                    obs.observation_id, items.ids[obs.choice_set[pos]]
                ),
            ));
        }
    }
    Ok(d_y)
}

/// Writes a dataset using the same schemas `load_dataset` reads. Feature
/// files are written only when the dataset has the corresponding features.
pub fn save_dataset(
    dataset: &ChoiceDataset,
    observation_file: &Path,
    chooser_feature_file: Option<&Path>,
    item_feature_file: Option<&Path>,
) -> Result<()> {
    let writer = |path: &Path| csv::Writer::from_path(path).map_err(Error::from);
    let mut w = writer(observation_file)?;
    w.write_record(["observation_id", "chooser_id", "choice_set", "chosen_item", "weight"])?;
    for obs in &dataset.observations {
        let set: Vec<&str> = obs.choice_set.iter().map(|&i| dataset.item_ids[i].as_str()).collect();
        w.write_record([
            obs.observation_id.to_string(),
            dataset.chooser_ids[obs.chooser].clone(),
            set.join("|"),
            dataset.item_ids[obs.chosen_item()].clone(),
            obs.weight.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(observation_file, e))?;

    if let (Some(path), Some(x)) = (chooser_feature_file, &dataset.chooser_features) {
        let mut w = writer(path)?;
        let mut header = vec!["chooser_id".to_string()];
        header.extend((0..x.ncols()).map(|j| format!("x{j}")));
        w.write_record(&header)?;
        for (a, row) in x.rows().into_iter().enumerate() {
            let mut rec = vec![dataset.chooser_ids[a].clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }

    if let Some(path) = item_feature_file.filter(|_| dataset.d_y > 0) {
        let mut w = writer(path)?;
        let mut header = vec!["observation_id".to_string(), "item_id".to_string()];
        header.extend((0..dataset.d_y).map(|j| format!("y{j}")));
        w.write_record(&header)?;
        for obs in &dataset.observations {
            let y = obs.item_features.as_ref().expect("validated");
            for (pos, &item) in obs.choice_set.iter().enumerate() {
                let mut rec = vec![obs.observation_id.to_string(), dataset.item_ids[item].clone()];
                rec.extend(y.row(pos).iter().map(|v| v.to_string()));
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
