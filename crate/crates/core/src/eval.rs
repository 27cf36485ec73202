//! Retrieval evaluation: every item is used as a query ("seed") against all
//! the others, ranked by ascending distance.
//!
//! Ranks are bounded by class size: precision is taken at
//! `k = min(5, |class| - 1)` and average precision over the `|class| - 1`
//! relevant items. Ties in distance are broken by item id. All scores are
//! percentages.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PRECISION_RANK: usize = 5;
pub const DEFAULT_CHANCE_TRIALS: usize = 1000;
const SYMMETRY_TOLERANCE: f64 = 1e-9;

/// Symmetric, non-negative, zero-diagonal matrix of pairwise distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    ids: Vec<String>,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(ids: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let n = ids.len();
        let bad = |m: String| Err(Error::InvalidMatrix(m));
        if values.len() != n * n {
            return bad(format!("{} values for {n} items", values.len()));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return bad(format!("duplicate item id {dup:?}"));
        }
        for i in 0..n {
            if values[i * n + i] != 0.0 {
                return bad(format!("diagonal entry {i} is {}", values[i * n + i]));
            }
            for j in 0..n {
                let v = values[i * n + j];
                if !v.is_finite() || v < 0.0 {
                    return bad(format!("entry ({i}, {j}) is {v}"));
                }
                let w = values[j * n + i];
                if (v - w).abs() > SYMMETRY_TOLERANCE * v.abs().max(w.abs()).max(1.0) {
                    return bad(format!("asymmetric at ({i}, {j}): {v} vs {w}"));
                }
            }
        }
        Ok(Self { ids, values })
    }

    /// Build from a pairwise function evaluated once per unordered pair
    /// (in parallel) and mirrored.
    pub fn from_fn<F>(ids: Vec<String>, f: F) -> Result<Self>
    where
        F: Fn(usize, usize) -> Result<f64> + Sync,
    {
        let n = ids.len();
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        let upper: Vec<f64> = pairs
            .par_iter()
            .map(|&(i, j)| f(i, j))
            .collect::<Result<_>>()?;
        let mut values = vec![0.0; n * n];
        for (&(i, j), v) in pairs.iter().zip(upper) {
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
        Self::new(ids, values)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len() + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Apply `f` to every off-diagonal entry.
    pub fn map_off_diagonal(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let n = self.len();
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(idx, &v)| if idx / n == idx % n { 0.0 } else { f(v) })
            .collect();
        Self::new(self.ids.clone(), values)
    }

    /// All items other than `seed`, nearest first.
    pub fn ranking(&self, seed: usize) -> Vec<usize> {
        let mut others: Vec<usize> = (0..self.len()).filter(|&j| j != seed).collect();
        others.sort_by(|&a, &b| {
            self.get(seed, a)
                .total_cmp(&self.get(seed, b))
                .then_with(|| self.ids[a].cmp(&self.ids[b]))
        });
        others
    }
}

fn class_size<L: PartialEq>(labels: &[L], seed: usize) -> usize {
    labels.iter().filter(|l| **l == labels[seed]).count()
}

fn check_seed<L: PartialEq + std::fmt::Debug>(
    dm: &DistanceMatrix,
    labels: &[L],
    seed: usize,
) -> Result<usize> {
    if labels.len() != dm.len() {
        return Err(Error::InvalidMatrix(format!(
            "{} labels for {} items",
            labels.len(),
            dm.len()
        )));
    }
    let size = class_size(labels, seed);
    if size < 2 {
        return Err(Error::SingletonClass {
            label: format!("{:?}", labels[seed]),
        });
    }
    Ok(size)
}

/// Percentage of same-class items among the `min(5, |class| - 1)` nearest.
pub fn precision_at_5<L: PartialEq + std::fmt::Debug>(
    dm: &DistanceMatrix,
    labels: &[L],
    seed: usize,
) -> Result<f64> {
    let size = check_seed(dm, labels, seed)?;
    let k = PRECISION_RANK.min(size - 1);
    let hits = dm
        .ranking(seed)
        .into_iter()
        .take(k)
        .filter(|&j| labels[j] == labels[seed])
        .count();
    Ok(100.0 * hits as f64 / k as f64)
}

/// Mean of the precision at each relevant item's rank, over the
/// `|class| - 1` same-class items.
pub fn average_precision<L: PartialEq + std::fmt::Debug>(
    dm: &DistanceMatrix,
    labels: &[L],
    seed: usize,
) -> Result<f64> {
    let size = check_seed(dm, labels, seed)?;
    let relevant = size - 1;
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, j) in dm.ranking(seed).into_iter().enumerate() {
        if labels[j] == labels[seed] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
            if hits == relevant {
                break;
            }
        }
    }
    Ok(100.0 * sum / relevant as f64)
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                mean: 0.0,
                std: 0.0,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.0}±{:.0}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedScore {
    pub item_id: String,
    pub label: String,
    pub precision_at_5: f64,
    pub average_precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChanceEstimate {
    pub trials: usize,
    pub rng_seed: u64,
    /// Pooled over every seed of every trial.
    pub precision_at_5: Summary,
    pub map: Summary,
    /// Spread of the per-trial means, i.e. what one random matrix yields.
    pub precision_at_5_trial_std: f64,
    pub map_trial_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_seed: Vec<SeedScore>,
    pub precision_at_5: Summary,
    pub map: Summary,
    pub chance: Option<ChanceEstimate>,
    pub config: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn with_chance(mut self, chance: ChanceEstimate) -> Self {
        self.chance = Some(chance);
        self
    }

    pub fn with_config(mut self, config: BTreeMap<String, String>) -> Self {
        self.config = config;
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format {
            what: "report",
            reason: e.to_string(),
        })
    }
}

fn check_classes(labels: &[String]) -> Result<()> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let mut singletons: Vec<&str> = counts
        .iter()
        .filter(|(_, &c)| c < 2)
        .map(|(l, _)| *l)
        .collect();
    singletons.sort_unstable();
    match singletons.first() {
        Some(l) => Err(Error::SingletonClass {
            label: (*l).to_string(),
        }),
        None => Ok(()),
    }
}

fn scores(dm: &DistanceMatrix, labels: &[String]) -> Result<Vec<(f64, f64)>> {
    (0..dm.len())
        .map(|s| {
            Ok((
                precision_at_5(dm, labels, s)?,
                average_precision(dm, labels, s)?,
            ))
        })
        .collect()
}

/// Per-seed p@5 and AP for every item, aggregated to mean ± std.
pub fn evaluate(dm: &DistanceMatrix, labels: &[String]) -> Result<EvalReport> {
    if labels.len() != dm.len() {
        return Err(Error::InvalidMatrix(format!(
            "{} labels for {} items",
            labels.len(),
            dm.len()
        )));
    }
    check_classes(labels)?;
    let per_seed: Vec<SeedScore> = scores(dm, labels)?
        .into_iter()
        .enumerate()
        .map(|(i, (p5, ap))| SeedScore {
            item_id: dm.ids()[i].clone(),
            label: labels[i].clone(),
            precision_at_5: p5,
            average_precision: ap,
        })
        .collect();
    let p5: Vec<f64> = per_seed.iter().map(|s| s.precision_at_5).collect();
    let ap: Vec<f64> = per_seed.iter().map(|s| s.average_precision).collect();
    Ok(EvalReport {
        precision_at_5: Summary::of(&p5),
        map: Summary::of(&ap),
        per_seed,
        chance: None,
        config: BTreeMap::new(),
    })
}

/// Random symmetric matrix with i.i.d. uniform off-diagonal entries.
pub fn random_matrix<R: Rng>(n: usize, rng: &mut R) -> DistanceMatrix {
    let width = n.to_string().len();
    let ids = (0..n).map(|i| format!("{i:0width$}")).collect();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = rng.gen();
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    DistanceMatrix { ids, values }
}

/// Monte-Carlo chance level: the labels evaluated against `trials` random
/// distance matrices. Trial `t` draws from stream `t` of the seeded
/// generator, so results do not depend on scheduling.
pub fn chance_baseline(labels: &[String], trials: usize, rng_seed: u64) -> Result<ChanceEstimate> {
    if trials == 0 {
        return Err(Error::Config("chance trials must be at least 1".into()));
    }
    check_classes(labels)?;
    let per_trial: Vec<Vec<(f64, f64)>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            rng.set_stream(t as u64);
            scores(&random_matrix(labels.len(), &mut rng), labels)
        })
        .collect::<Result<_>>()?;

    let pooled_p5: Vec<f64> = per_trial.iter().flatten().map(|s| s.0).collect();
    let pooled_ap: Vec<f64> = per_trial.iter().flatten().map(|s| s.1).collect();
    let trial_mean = |f: fn(&(f64, f64)) -> f64| -> Vec<f64> {
        per_trial
            .iter()
            .map(|t| t.iter().map(f).sum::<f64>() / t.len() as f64)
            .collect()
    };
    Ok(ChanceEstimate {
        trials,
        rng_seed,
        precision_at_5: Summary::of(&pooled_p5),
        map: Summary::of(&pooled_ap),
        precision_at_5_trial_std: Summary::of(&trial_mean(|s| s.0)).std,
        map_trial_std: Summary::of(&trial_mean(|s| s.1)).std,
    })
}

/// `"p5±sd / map±sd"`, rounded to whole percents.
pub fn format_cell(precision_at_5: Summary, map: Summary) -> String {
    format!("{precision_at_5} / {map}")
}

/// Left-aligned text table with a rule under the header.
pub fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        padded.join("  ").trim_end().to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (cols - 1)));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

/// One table row: dataset name, chance estimate, one report per method.
pub type TableRow<'a> = (
    String,
    Option<&'a ChanceEstimate>,
    Vec<Option<&'a EvalReport>>,
);

/// Table with one row per dataset: chance, then one column per method.
pub fn report_table(rows: &[TableRow<'_>], methods: &[&str]) -> String {
    let mut header = vec!["dataBase", "chance"];
    header.extend_from_slice(methods);
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, chance, reports)| {
            let mut cells = vec![name.clone()];
            cells.push(chance.map_or("-".into(), |c| format_cell(c.precision_at_5, c.map)));
            cells.extend(
                reports
                    .iter()
                    .map(|r| r.map_or("-".into(), |r| format_cell(r.precision_at_5, r.map))),
            );
            cells
        })
        .collect();
    render_table(&header, &body)
}
