//! Subsampling estimate of how far a metric computed on k readers strays
//! from its value on the whole reader set, in raw units and in rank order.

use std::fmt::Write as _;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{ResponseIndex, ResponseSet};
use crate::error::{Error, Result};
use crate::stats::{mean, pearson, ranks, sample_sd};

pub const DEFAULT_ITERATIONS: usize = 1000;
pub const DEFAULT_MAX_RESAMPLE_ATTEMPTS: usize = 10_000;

/// The reader set a simulation draws from, indexed once.
pub struct SimData {
    pub index: ResponseIndex,
    pub chapters: Vec<u32>,
    pub abilities: Vec<f64>,
}

impl SimData {
    pub fn new(rs: &ResponseSet) -> Self {
        let index = rs.index();
        let abilities = index.abilities();
        SimData {
            chapters: rs.chapters().to_vec(),
            abilities,
            index,
        }
    }

    pub fn n_readers(&self) -> usize {
        self.index.n_readers()
    }
}

pub trait Metric: Sync {
    fn name(&self) -> &str;
    /// Smallest sample size worth simulating.
    fn min_k(&self) -> usize;
    /// Metric vector over `subset` (ascending reader indexes), or `None` when
    /// the subset is not valid for this metric.
    fn compute(&self, data: &SimData, subset: &[u32]) -> Option<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum BuiltinMetric {
    /// Fraction of readers whose last answer falls in each chapter. Valid
    /// when every chapter is someone's last.
    Dropoff,
    /// Per-question mean score. Valid when every question has an answer.
    CttDifficulty,
    /// Per-question item-total correlation. Valid when it is defined for
    /// every question.
    CttDiscrimination,
}

pub fn builtin_metrics() -> [BuiltinMetric; 3] {
    [
        BuiltinMetric::Dropoff,
        BuiltinMetric::CttDifficulty,
        BuiltinMetric::CttDiscrimination,
    ]
}

impl BuiltinMetric {
    pub fn parse(name: &str) -> Option<Self> {
        builtin_metrics().into_iter().find(|m| m.name() == name)
    }
}

impl Metric for BuiltinMetric {
    fn name(&self) -> &str {
        match self {
            BuiltinMetric::Dropoff => "dropoff",
            BuiltinMetric::CttDifficulty => "cttDifficulty",
            BuiltinMetric::CttDiscrimination => "cttDiscrimination",
        }
    }

    fn min_k(&self) -> usize {
        match self {
            BuiltinMetric::CttDifficulty => 10,
            _ => 100,
        }
    }

    fn compute(&self, data: &SimData, subset: &[u32]) -> Option<Vec<f64>> {
        let idx = &data.index;
        match self {
            BuiltinMetric::Dropoff => {
                let mut counts = vec![0usize; data.chapters.len()];
                for &ri in subset {
                    let c = idx.last_chapter[ri as usize];
                    let pos = data.chapters.binary_search(&c).ok()?;
                    counts[pos] += 1;
                }
                if counts.contains(&0) {
                    return None;
                }
                let n = subset.len() as f64;
                Some(counts.into_iter().map(|c| c as f64 / n).collect())
            }
            BuiltinMetric::CttDifficulty => {
                let mut sums = vec![(0u32, 0u32); idx.n_questions()];
                for &ri in subset {
                    for &(qi, s) in &idx.by_reader[ri as usize] {
                        let e = &mut sums[qi as usize];
                        e.0 += u32::from(s);
                        e.1 += 1;
                    }
                }
                sums.into_iter()
                    .map(|(s, n)| (n > 0).then(|| f64::from(s) / f64::from(n)))
                    .collect()
            }
            BuiltinMetric::CttDiscrimination => {
                let mut cols = vec![(Vec::new(), Vec::new()); idx.n_questions()];
                for &ri in subset {
                    let ability = data.abilities[ri as usize];
                    for &(qi, s) in &idx.by_reader[ri as usize] {
                        let (xs, ys) = &mut cols[qi as usize];
                        xs.push(f64::from(s));
                        ys.push(ability);
                    }
                }
                cols.iter().map(|(xs, ys)| pearson(xs, ys)).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimConfig {
    /// Sample sizes, ascending. Empty means the default grid.
    #[serde(default)]
    pub ks: Vec<usize>,
    pub iterations: usize,
    pub seed: u64,
    pub max_resample_attempts: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            ks: Vec::new(),
            iterations: DEFAULT_ITERATIONS,
            seed: 0,
            max_resample_attempts: DEFAULT_MAX_RESAMPLE_ATTEMPTS,
        }
    }
}

/// 1-2-5 steps from `min_k` up to (and including) `n`.
pub fn default_ks(min_k: usize, n: usize) -> Vec<usize> {
    let mut ks = Vec::new();
    let mut decade = min_k.max(1);
    'outer: loop {
        for m in [1, 2, 5] {
            let k = decade * m;
            if k >= n {
                break 'outer;
            }
            ks.push(k);
        }
        decade *= 10;
    }
    if n > 0 {
        ks.push(n);
    }
    ks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimRow {
    pub metric: String,
    pub k: usize,
    pub iterations: usize,
    pub mean_raw_error: f64,
    pub sd_raw_error: f64,
    pub mean_rank_error: f64,
    pub sd_rank_error: f64,
    /// Draws made across all iterations, including rejected ones.
    pub attempts: usize,
    pub rejected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimResult {
    pub population: usize,
    pub seed: u64,
    pub rows: Vec<SimRow>,
}

impl SimResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,k,meanRaw,sdRaw,meanRank,sdRank\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.metric, r.k, r.mean_raw_error, r.sd_raw_error, r.mean_rank_error, r.sd_rank_error
            )
            .expect("writing to a String");
        }
        out
    }
}

/// Mean absolute rank displacement divided by n.
pub fn rank_error(r: &[f64], r2: &[f64]) -> Result<f64> {
    if r.len() != r2.len() {
        return Err(Error::InvalidArgument(format!(
            "rank vectors differ in length: {} vs {}",
            r.len(),
            r2.len()
        )));
    }
    if r.is_empty() {
        return Ok(0.0);
    }
    let n = r.len() as f64;
    Ok(r.iter().zip(r2).map(|(a, b)| (a - b).abs()).sum::<f64>() / (n * n))
}

/// Mean absolute difference over components.
pub fn raw_error(x: &[f64], x2: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().zip(x2).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.len() as f64
}

fn iteration_rng(seed: u64, metric: &str, k: usize, iteration: usize) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((metric.len() as u64).to_le_bytes());
    h.update(metric.as_bytes());
    h.update((k as u64).to_le_bytes());
    h.update((iteration as u64).to_le_bytes());
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

struct Draw {
    raw: f64,
    rank: f64,
    attempts: usize,
}

pub fn simulate(rs: &ResponseSet, metric: &dyn Metric, cfg: &SimConfig) -> Result<SimResult> {
    simulate_on(&SimData::new(rs), metric, cfg)
}

pub fn simulate_on(data: &SimData, metric: &dyn Metric, cfg: &SimConfig) -> Result<SimResult> {
    let n = data.n_readers();
    if cfg.iterations == 0 {
        return Err(Error::InvalidArgument("iterations must be at least 1".into()));
    }
    let ks = if cfg.ks.is_empty() {
        default_ks(metric.min_k(), n)
    } else {
        cfg.ks.clone()
    };
    if ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("ks must be strictly ascending".into()));
    }
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > n) {
        return Err(Error::InvalidArgument(format!(
            "k = {k} outside 1..={n} readers"
        )));
    }
    let everyone: Vec<u32> = (0..n as u32).collect();
    let full = metric.compute(data, &everyone).ok_or_else(|| {
        Error::InsufficientData(format!("{} is not valid on the full reader set", metric.name()))
    })?;
    let full_ranks = ranks(&full);

    let mut rows = Vec::with_capacity(ks.len());
    for &k in &ks {
        let draws: Vec<Draw> = (0..cfg.iterations)
            .into_par_iter()
            .map(|it| {
                let mut rng = iteration_rng(cfg.seed, metric.name(), k, it);
                for attempt in 1..=cfg.max_resample_attempts {
                    let mut subset: Vec<u32> = index::sample(&mut rng, n, k)
                        .into_iter()
                        .map(|i| i as u32)
                        .collect();
                    subset.sort_unstable();
                    if let Some(x) = metric.compute(data, &subset) {
                        return Ok(Draw {
                            raw: raw_error(&full, &x),
                            rank: rank_error(&full_ranks, &ranks(&x))?,
                            attempts: attempt,
                        });
                    }
                }
                Err(Error::ResampleExhausted {
                    k,
                    attempts: cfg.max_resample_attempts,
                })
            })
            .collect::<Result<_>>()?;
        let raw: Vec<f64> = draws.iter().map(|d| d.raw).collect();
        let rank: Vec<f64> = draws.iter().map(|d| d.rank).collect();
        let attempts: usize = draws.iter().map(|d| d.attempts).sum();
        rows.push(SimRow {
            metric: metric.name().to_string(),
            k,
            iterations: cfg.iterations,
            mean_raw_error: mean(&raw).unwrap_or(0.0),
            sd_raw_error: sample_sd(&raw).unwrap_or(0.0),
            mean_rank_error: mean(&rank).unwrap_or(0.0),
            sd_rank_error: sample_sd(&rank).unwrap_or(0.0),
            attempts,
            rejected: attempts - cfg.iterations,
        });
    }
    Ok(SimResult {
        population: n,
        seed: cfg.seed,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::fixtures::*;

    #[test]
    fn rank_error_examples() {
        assert_eq!(rank_error(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rank_error(&[1.0, 2.0], &[2.0, 1.0]).unwrap(), 0.5);
        assert!(rank_error(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn default_grid() {
        assert_eq!(default_ks(10, 2000), vec![10, 20, 50, 100, 200, 500, 1000, 2000]);
        assert_eq!(default_ks(100, 100), vec![100]);
        assert_eq!(default_ks(100, 150), vec![100, 150]);
    }

    fn fixture(readers: u128) -> ResponseSet {
        let mut records = Vec::new();
        for r in 0..readers {
            let reach = 1 + (r % 3) as u32;
            for ch in 1..=reach {
                for q in 0..2u128 {
                    let qid = u128::from(ch) * 10 + q;
                    let score = u8::from((r * 7 + qid * 3) % 5 < 3);
                    records.push(rec(r, qid, ch, (r * 100) as i64 + i64::from(ch), score));
                }
            }
        }
        ResponseSet::new(records, [1, 2, 3])
    }

    fn cfg(ks: Vec<usize>) -> SimConfig {
        SimConfig {
            ks,
            iterations: 50,
            seed: 3,
            max_resample_attempts: 1000,
        }
    }

    #[test]
    fn full_sample_has_zero_error() {
        let rs = fixture(60);
        for m in builtin_metrics() {
            let out = simulate(&rs, &m, &cfg(vec![30, 60])).unwrap();
            let last = out.rows.last().unwrap();
            assert_eq!(last.mean_raw_error, 0.0, "{}", m.name());
            assert_eq!(last.mean_rank_error, 0.0);
            assert_eq!(last.sd_raw_error, 0.0);
            assert!(out.rows[0].mean_raw_error >= 0.0);
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let rs = fixture(60);
        let a = simulate(&rs, &BuiltinMetric::CttDifficulty, &cfg(vec![5, 20])).unwrap();
        let b = simulate(&rs, &BuiltinMetric::CttDifficulty, &cfg(vec![5, 20])).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        let c = simulate(
            &rs,
            &BuiltinMetric::CttDifficulty,
            &SimConfig {
                seed: 4,
                ..cfg(vec![5, 20])
            },
        )
        .unwrap();
        assert_ne!(a.to_csv(), c.to_csv());
    }

    #[test]
    fn chapter_never_last_is_invalid() {
        // Everyone reaches chapter 3, so chapters 1 and 2 are never last.
        let mut records = Vec::new();
        for r in 0..10u128 {
            for ch in 1..=3u32 {
                records.push(rec(r, u128::from(ch), ch, i64::from(ch), 1));
            }
        }
        let rs = ResponseSet::new(records, [1, 2, 3]);
        assert!(simulate(&rs, &BuiltinMetric::Dropoff, &cfg(vec![5])).is_err());
    }

    #[test]
    fn exhausted_resampling_names_k() {
        // Only reader 0 answers question 2, so most subsets miss it.
        let mut records = Vec::new();
        for r in 0..50u128 {
            records.push(rec(r, 1, 1, r as i64, 1));
        }
        records.push(rec(0, 2, 1, 99, 1));
        let rs = ResponseSet::new(records, [1]);
        let err = simulate(
            &rs,
            &BuiltinMetric::CttDifficulty,
            &SimConfig {
                ks: vec![1],
                iterations: 20,
                seed: 1,
                max_resample_attempts: 2,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::ResampleExhausted { k: 1, attempts: 2 }));
    }

    #[test]
    fn discrimination_rejects_unanimous_item() {
        let data = SimData::new(&fixture(30));
        let all: Vec<u32> = (0..30).collect();
        assert!(BuiltinMetric::CttDiscrimination.compute(&data, &all).is_some());
        let len = BuiltinMetric::CttDifficulty.compute(&data, &all).unwrap().len();
        assert_eq!(len, data.index.n_questions());
        // A single reader answers each question once: r undefined.
        assert!(BuiltinMetric::CttDiscrimination.compute(&data, &[0]).is_none());
    }

    #[test]
    fn bad_ks_rejected() {
        let rs = fixture(20);
        let m = BuiltinMetric::CttDifficulty;
        assert!(simulate(&rs, &m, &cfg(vec![10, 5])).is_err());
        assert!(simulate(&rs, &m, &cfg(vec![21])).is_err());
        assert!(simulate(&rs, &m, &SimConfig { iterations: 0, ..cfg(vec![5]) }).is_err());
    }
}
