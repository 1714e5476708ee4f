//! Three-parameter logistic item response theory.
//!
//! The probability that a reader with ability `theta` answers an item
//! correctly is `lambda + (1 - lambda) * sigmoid(alpha * (theta - beta))`.
//! Parameters are fitted by maximum a posteriori estimation with full-batch
//! gradient ascent. `alpha` and `lambda` are optimized on unconstrained
//! scales (`ln alpha`, `logit lambda`) so their constraints hold by
//! construction; the priors are placed on those unconstrained values.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::ctt::ItemStats;
use crate::dataset::{ResponseIndex, ResponseSet};
use crate::error::{Error, Result};
use crate::stats::{log_sigmoid, logit, mean, normal_log_pdf, pearson, percentile_rank, sample_sd, sigmoid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ItemParams {
    pub question_id: Uuid,
    /// Discrimination, > 0.
    pub alpha: f64,
    /// Difficulty.
    pub beta: f64,
    /// Baseline (guessing) probability in (0, 1).
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AbilityEstimate {
    pub session_id: Uuid,
    pub theta: f64,
}

/// Item characteristic curve.
pub fn icc(params: &ItemParams, theta: f64) -> f64 {
    params.lambda + (1.0 - params.lambda) * sigmoid(params.alpha * (theta - params.beta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalPrior {
    pub mean: f64,
    pub sd: f64,
}

impl NormalPrior {
    pub const fn new(mean: f64, sd: f64) -> Self {
        NormalPrior { mean, sd }
    }

    fn log_pdf(&self, x: f64) -> f64 {
        normal_log_pdf(x, self.mean, self.sd)
    }

    fn grad(&self, x: f64) -> f64 {
        -(x - self.mean) / (self.sd * self.sd)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Priors {
    pub theta: NormalPrior,
    pub beta: NormalPrior,
    pub log_alpha: NormalPrior,
    pub logit_lambda: NormalPrior,
}

impl Default for Priors {
    fn default() -> Self {
        Priors {
            theta: NormalPrior::new(0.0, 1.0),
            beta: NormalPrior::new(0.0, 1.0),
            log_alpha: NormalPrior::new(0.0, 0.5),
            logit_lambda: NormalPrior::new(-1.4, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FitConfig {
    pub epochs: usize,
    /// Base step on the observation-normalized gradient; halved up to 10
    /// times within an epoch when the posterior would decrease.
    pub step_size: f64,
    pub seed: u64,
    pub priors: Priors,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            epochs: 2000,
            step_size: DEFAULT_STEP_SIZE,
            seed: 0,
            priors: Priors::default(),
        }
    }
}

pub const DEFAULT_STEP_SIZE: f64 = 1.0;
const MAX_HALVINGS: usize = 10;

/// sigmoid(x), sigmoid(-x), ln sigmoid(x) and ln sigmoid(-x) from one
/// exponential.
fn sigmoid_parts(x: f64) -> (f64, f64, f64, f64) {
    let e = (-x.abs()).exp();
    let l = e.ln_1p();
    let (big, small) = (1.0 / (1.0 + e), e / (1.0 + e));
    if x >= 0.0 {
        (big, small, -l, -x - l)
    } else {
        (small, big, x - l, -l)
    }
}

/// Compressed response data: records grouped by item, plus for every reader
/// the positions of their records in the item-major order.
#[derive(Debug, Clone)]
pub struct IrtData {
    pub question_ids: Vec<Uuid>,
    pub reader_ids: Vec<Uuid>,
    item_start: Vec<usize>,
    rec_reader: Vec<u32>,
    rec_score: Vec<u8>,
    reader_start: Vec<usize>,
    reader_recs: Vec<u32>,
    /// Observation counts used to normalize the gradient.
    item_n: Vec<f64>,
    reader_n: Vec<f64>,
}

impl IrtData {
    pub fn from_index(idx: &ResponseIndex) -> Self {
        let mut item_start = Vec::with_capacity(idx.n_questions() + 1);
        let mut rec_reader = Vec::new();
        let mut rec_score = Vec::new();
        item_start.push(0);
        for responses in &idx.by_question {
            for &(ri, s) in responses {
                rec_reader.push(ri);
                rec_score.push(s);
            }
            item_start.push(rec_reader.len());
        }
        let mut per_reader: Vec<Vec<u32>> = vec![Vec::new(); idx.n_readers()];
        for (pos, &ri) in rec_reader.iter().enumerate() {
            per_reader[ri as usize].push(pos as u32);
        }
        let mut reader_start = Vec::with_capacity(idx.n_readers() + 1);
        let mut reader_recs = Vec::with_capacity(rec_reader.len());
        reader_start.push(0);
        for recs in &per_reader {
            reader_recs.extend_from_slice(recs);
            reader_start.push(reader_recs.len());
        }
        let item_n = (0..idx.n_questions())
            .map(|i| (item_start[i + 1] - item_start[i]) as f64)
            .collect();
        let reader_n = per_reader.iter().map(|v| v.len() as f64).collect();
        IrtData {
            question_ids: idx.question_ids.clone(),
            reader_ids: idx.reader_ids.clone(),
            item_start,
            rec_reader,
            rec_score,
            reader_start,
            reader_recs,
            item_n,
            reader_n,
        }
    }

    pub fn n_items(&self) -> usize {
        self.question_ids.len()
    }

    pub fn n_readers(&self) -> usize {
        self.reader_ids.len()
    }

    pub fn n_records(&self) -> usize {
        self.rec_reader.len()
    }

    /// Length of the flat parameter vector:
    /// `[theta; readers] ++ [beta; items] ++ [ln alpha; items] ++ [logit lambda; items]`.
    pub fn n_params(&self) -> usize {
        self.n_readers() + 3 * self.n_items()
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let r = self.n_readers();
        let i = self.n_items();
        (r, r + i, r + 2 * i)
    }

    fn param_name(&self, k: usize) -> String {
        let (b, la, ll) = self.offsets();
        if k < b {
            format!("theta of reader {}", self.reader_ids[k])
        } else if k < la {
            format!("beta of question {}", self.question_ids[k - b])
        } else if k < ll {
            format!("log alpha of question {}", self.question_ids[k - la])
        } else {
            format!("logit lambda of question {}", self.question_ids[k - ll])
        }
    }

    /// Log posterior and, when `grad` is given, its gradient with respect to
    /// the flat parameter vector.
    pub fn evaluate(&self, params: &[f64], priors: &Priors, grad: Option<&mut [f64]>) -> Result<f64> {
        assert_eq!(params.len(), self.n_params(), "parameter vector length");
        if let Some(k) = params.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(self.param_name(k)));
        }
        let (ob, ola, oll) = self.offsets();
        let theta = &params[..ob];
        let want_grad = grad.is_some();

        // Per item: log-likelihood, item gradient triple, and per-record
        // d/dtheta contributions written into the item-major buffer.
        let per_item: Vec<(f64, [f64; 3], Vec<f64>)> = (0..self.n_items())
            .into_par_iter()
            .map(|i| {
                let beta = params[ob + i];
                let la = params[ola + i];
                let ll = params[oll + i];
                let alpha = la.exp();
                let lambda = sigmoid(ll);
                let log_lambda = log_sigmoid(ll);
                let log_one_minus_lambda = log_sigmoid(-ll);
                let range = self.item_start[i]..self.item_start[i + 1];
                let mut lp = 0.0;
                let mut g = [0.0; 3];
                let mut dtheta = if want_grad {
                    Vec::with_capacity(range.len())
                } else {
                    Vec::new()
                };
                for pos in range {
                    let t = theta[self.rec_reader[pos] as usize];
                    let x = alpha * (t - beta);
                    let (s, oms, ls_pos, ls_neg) = sigmoid_parts(x);
                    if self.rec_score[pos] == 1 {
                        let p = lambda + (1.0 - lambda) * s;
                        let tiny = p < 1e-300;
                        let log_p = if tiny {
                            let a = log_lambda;
                            let b = log_one_minus_lambda + ls_pos;
                            let hi = a.max(b);
                            hi + ((a - hi).exp() + (b - hi).exp()).ln()
                        } else {
                            p.ln()
                        };
                        lp += log_p;
                        if want_grad {
                            // w = (1 - lambda) s (1 - s) / p and
                            // dlp/dlogit(lambda) = lambda (1 - lambda) (1 - s) / p
                            let (w, gl) = if tiny {
                                (
                                    (log_one_minus_lambda + ls_pos + ls_neg - log_p).exp(),
                                    (ls_neg + log_lambda + log_one_minus_lambda - log_p).exp(),
                                )
                            } else {
                                let q = (1.0 - lambda) * oms / p;
                                (q * s, q * lambda)
                            };
                            let dx = w * alpha;
                            g[0] -= dx;
                            g[1] += w * x;
                            g[2] += gl;
                            dtheta.push(dx);
                        }
                    } else {
                        lp += log_one_minus_lambda + ls_neg;
                        if want_grad {
                            let dx = -s * alpha;
                            g[0] -= dx;
                            g[1] -= s * x;
                            g[2] -= lambda;
                            dtheta.push(dx);
                        }
                    }
                }
                lp += priors.beta.log_pdf(beta)
                    + priors.log_alpha.log_pdf(la)
                    + priors.logit_lambda.log_pdf(ll);
                if want_grad {
                    g[0] += priors.beta.grad(beta);
                    g[1] += priors.log_alpha.grad(la);
                    g[2] += priors.logit_lambda.grad(ll);
                }
                (lp, g, dtheta)
            })
            .collect();

        let mut total = 0.0;
        for (i, (lp, _, _)) in per_item.iter().enumerate() {
            if !lp.is_finite() {
                return Err(Error::NonFinite(format!(
                    "log-likelihood of question {}",
                    self.question_ids[i]
                )));
            }
            total += lp;
        }
        total += theta.iter().map(|&t| priors.theta.log_pdf(t)).sum::<f64>();

        if let Some(grad) = grad {
            let mut dtheta_flat = Vec::with_capacity(self.n_records());
            for (i, (_, g, dt)) in per_item.into_iter().enumerate() {
                grad[ob + i] = g[0];
                grad[ola + i] = g[1];
                grad[oll + i] = g[2];
                dtheta_flat.extend(dt);
            }
            grad[..ob]
                .par_iter_mut()
                .enumerate()
                .for_each(|(j, gj)| {
                    let recs = &self.reader_recs[self.reader_start[j]..self.reader_start[j + 1]];
                    let mut acc = priors.theta.grad(theta[j]);
                    for &pos in recs {
                        acc += dtheta_flat[pos as usize];
                    }
                    *gj = acc;
                });
        }
        if !total.is_finite() {
            return Err(Error::NonFinite("log posterior".into()));
        }
        Ok(total)
    }

    fn unpack(&self, params: &[f64]) -> (Vec<ItemParams>, Vec<AbilityEstimate>) {
        let (ob, ola, oll) = self.offsets();
        let items = (0..self.n_items())
            .map(|i| ItemParams {
                question_id: self.question_ids[i],
                alpha: params[ola + i].exp(),
                beta: params[ob + i],
                lambda: sigmoid(params[oll + i]),
            })
            .collect();
        let thetas = (0..self.n_readers())
            .map(|j| AbilityEstimate {
                session_id: self.reader_ids[j],
                theta: params[j],
            })
            .collect();
        (items, thetas)
    }

    fn pack(&self, items: &[ItemParams], thetas: &[AbilityEstimate]) -> Result<Vec<f64>> {
        let (ob, ola, oll) = self.offsets();
        let item_map: HashMap<Uuid, &ItemParams> = items.iter().map(|p| (p.question_id, p)).collect();
        let theta_map: HashMap<Uuid, f64> = thetas.iter().map(|t| (t.session_id, t.theta)).collect();
        let mut params = vec![0.0; self.n_params()];
        for (j, id) in self.reader_ids.iter().enumerate() {
            params[j] = *theta_map.get(id).ok_or(Error::UnknownReader(*id))?;
        }
        for (i, id) in self.question_ids.iter().enumerate() {
            let p = item_map.get(id).ok_or(Error::UnknownQuestion(*id))?;
            params[ob + i] = p.beta;
            params[ola + i] = p.alpha.ln();
            params[oll + i] = logit(p.lambda);
        }
        Ok(params)
    }
}

/// Log posterior of the given parameters: Bernoulli log-likelihood of every
/// record plus the log prior densities of every parameter.
pub fn log_posterior(
    rs: &ResponseSet,
    items: &[ItemParams],
    thetas: &[AbilityEstimate],
    cfg: &FitConfig,
) -> Result<f64> {
    let data = IrtData::from_index(&rs.index());
    let mut params = data.pack(items, thetas)?;
    // Parameters of questions/readers absent from the data still carry priors.
    let mut extra = 0.0;
    for p in items {
        if data.question_ids.binary_search(&p.question_id).is_err() {
            extra += cfg.priors.beta.log_pdf(p.beta)
                + cfg.priors.log_alpha.log_pdf(p.alpha.ln())
                + cfg.priors.logit_lambda.log_pdf(logit(p.lambda));
        }
    }
    for t in thetas {
        if data.reader_ids.binary_search(&t.session_id).is_err() {
            extra += cfg.priors.theta.log_pdf(t.theta);
        }
    }
    params.shrink_to_fit();
    Ok(data.evaluate(&params, &cfg.priors, None)? + extra)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FitResult {
    pub items: Vec<ItemParams>,
    pub abilities: Vec<AbilityEstimate>,
    /// Log posterior before the first epoch and after every epoch.
    pub trajectory: Vec<f64>,
    pub config: FitConfig,
}

/// Warm start: beta from the logit of the error rate, theta from standardized
/// CTT ability, ln alpha = 0, logit lambda at the prior mean.
fn initial_params(data: &IrtData, idx: &ResponseIndex, cfg: &FitConfig) -> Vec<f64> {
    let (ob, ola, oll) = data.offsets();
    let mut params = vec![0.0; data.n_params()];
    let abilities = idx.abilities();
    let m = mean(&abilities).unwrap_or(0.0);
    let sd = sample_sd(&abilities).filter(|s| *s > 0.0).unwrap_or(1.0);
    for (j, a) in abilities.iter().enumerate() {
        params[j] = (a - m) / sd;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for (i, responses) in idx.by_question.iter().enumerate() {
        let correct: u32 = responses.iter().map(|&(_, s)| u32::from(s)).sum();
        let difficulty = (f64::from(correct) / responses.len().max(1) as f64).clamp(0.01, 0.99);
        params[ob + i] = logit(1.0 - difficulty) + rng.random_range(-1e-3..1e-3);
        params[ola + i] = 0.0;
        params[oll + i] = cfg.priors.logit_lambda.mean;
    }
    params
}

pub fn fit(rs: &ResponseSet, cfg: &FitConfig) -> Result<FitResult> {
    if cfg.epochs == 0 || cfg.step_size.is_nan() || cfg.step_size <= 0.0 {
        return Err(Error::InvalidArgument(
            "epochs must be >= 1 and step size > 0".into(),
        ));
    }
    let idx = rs.index();
    for (i, responses) in idx.by_question.iter().enumerate() {
        let ones = responses.iter().filter(|&&(_, s)| s == 1).count();
        if ones == 0 || ones == responses.len() {
            return Err(Error::InsufficientData(format!(
                "question {} needs both correct and incorrect answers",
                idx.question_ids[i]
            )));
        }
    }
    let data = IrtData::from_index(&idx);
    let mut params = initial_params(&data, &idx, cfg);
    let (ob, _, _) = data.offsets();
    let scale: Vec<f64> = (0..data.n_params())
        .map(|k| {
            let n = if k < ob {
                data.reader_n[k]
            } else {
                data.item_n[(k - ob) % data.n_items()]
            };
            1.0 / (n + 1.0)
        })
        .collect();

    let mut grad = vec![0.0; data.n_params()];
    let mut current = data
        .evaluate(&params, &cfg.priors, Some(&mut grad))
        .map_err(|e| Error::Diverged {
            epoch: 0,
            reason: e.to_string(),
        })?;
    let mut trajectory = Vec::with_capacity(cfg.epochs + 1);
    trajectory.push(current);
    let mut candidate = vec![0.0; data.n_params()];
    let mut cand_grad = vec![0.0; data.n_params()];

    for epoch in 1..=cfg.epochs {
        let mut step = cfg.step_size;
        for _ in 0..=MAX_HALVINGS {
            for k in 0..params.len() {
                candidate[k] = params[k] + step * scale[k] * grad[k];
            }
            match data.evaluate(&candidate, &cfg.priors, Some(&mut cand_grad)) {
                Ok(lp) if lp >= current => {
                    std::mem::swap(&mut params, &mut candidate);
                    std::mem::swap(&mut grad, &mut cand_grad);
                    current = lp;
                    break;
                }
                Ok(_) | Err(Error::NonFinite(_)) => step *= 0.5,
                Err(e) => return Err(e),
            }
        }
        if !current.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: "non-finite log posterior".into(),
            });
        }
        trajectory.push(current);
    }

    let (items, abilities) = data.unpack(&params);
    Ok(FitResult {
        items,
        abilities,
        trajectory,
        config: *cfg,
    })
}

/// Per-decile Pearson correlation between CTT discrimination and IRT alpha.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DecileCorrelation {
    /// 1 = hardest (lowest mean score) decile.
    pub decile: usize,
    pub questions: usize,
    pub min_difficulty: f64,
    pub max_difficulty: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
}

/// Questions are sorted by CTT difficulty and split into ten nearly equal
/// buckets; within each, r is correlated with alpha.
pub fn decile_correlation(ctt: &[ItemStats], irt: &[ItemParams]) -> Result<Vec<DecileCorrelation>> {
    let alphas: HashMap<Uuid, f64> = irt.iter().map(|p| (p.question_id, p.alpha)).collect();
    let mut joined: Vec<(f64, Option<f64>, f64)> = ctt
        .iter()
        .filter_map(|s| alphas.get(&s.question_id).map(|&a| (s.difficulty, s.discrimination, a)))
        .collect();
    let defined = joined.iter().filter(|j| j.1.is_some()).count();
    if defined < 10 {
        return Err(Error::InsufficientData(format!(
            "decile correlation needs at least 10 questions with both statistics, got {defined}"
        )));
    }
    joined.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = joined.len();
    let mut out = Vec::with_capacity(10);
    for d in 0..10 {
        let bucket = &joined[d * n / 10..(d + 1) * n / 10];
        let (xs, ys): (Vec<f64>, Vec<f64>) = bucket
            .iter()
            .filter_map(|&(_, r, a)| r.map(|r| (r, a)))
            .unzip();
        out.push(DecileCorrelation {
            decile: d + 1,
            questions: bucket.len(),
            min_difficulty: bucket.first().map_or(f64::NAN, |b| b.0),
            max_difficulty: bucket.last().map_or(f64::NAN, |b| b.0),
            r: pearson(&xs, &ys),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IccTable {
    pub question_id: Uuid,
    pub thetas: Vec<f64>,
    pub probabilities: Vec<f64>,
}

/// ICC samples on the grid -3, -2.9, ..., 3.
pub fn icc_table(params: &ItemParams) -> IccTable {
    let thetas: Vec<f64> = (-30..=30).map(|k| f64::from(k) / 10.0).collect();
    let probabilities = thetas.iter().map(|&t| icc(params, t)).collect();
    IccTable {
        question_id: params.question_id,
        thetas,
        probabilities,
    }
}

/// A reader's standing under both models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StandingRow {
    pub session_id: Uuid,
    pub theta: f64,
    pub theta_percentile: f64,
    pub ability: f64,
    pub ability_percentile: f64,
}

pub fn standing_table(abilities: &[crate::ctt::AbilityScore], thetas: &[AbilityEstimate]) -> Vec<StandingRow> {
    let ability_map: HashMap<Uuid, f64> = abilities.iter().map(|a| (a.session_id, a.value)).collect();
    let mut sorted_theta: Vec<f64> = thetas.iter().map(|t| t.theta).collect();
    sorted_theta.sort_by(f64::total_cmp);
    let mut sorted_ability: Vec<f64> = abilities.iter().map(|a| a.value).collect();
    sorted_ability.sort_by(f64::total_cmp);
    thetas
        .iter()
        .filter_map(|t| {
            let ability = *ability_map.get(&t.session_id)?;
            Some(StandingRow {
                session_id: t.session_id,
                theta: t.theta,
                theta_percentile: percentile_rank(&sorted_theta, t.theta),
                ability,
                ability_percentile: percentile_rank(&sorted_ability, ability),
            })
        })
        .collect()
}
