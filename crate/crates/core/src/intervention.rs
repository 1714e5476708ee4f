//! Before/after evaluation of book edits: time splits, t-tests, Cohen's d,
//! Benjamini-Hochberg adjustment and sample-size planning.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use uuid::Uuid;

use crate::dataset::ResponseSet;
use crate::error::{Error, Result};

pub const SIGNIFICANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Intervention {
    pub name: String,
    pub question_id: Uuid,
    /// Server time of deployment.
    pub deployed_at_ms: i64,
}

/// Mean, sample variance and size of a score sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SampleSummary {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
}

impl SampleSummary {
    pub fn from_sample(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n.max(1) as f64;
        let variance = if n > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        SampleSummary { n, mean, variance }
    }

    /// Summary of `n` binary scores with proportion `p` correct, s² = p(1-p).
    pub fn bernoulli(p: f64, n: usize) -> Self {
        SampleSummary {
            n,
            mean: p,
            variance: p * (1.0 - p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p_two_tailed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    #[default]
    Welch,
    Pooled,
}

fn check_sizes(a: &SampleSummary, b: &SampleSummary) -> Result<()> {
    if a.n < 2 || b.n < 2 {
        return Err(Error::InsufficientData(format!(
            "t-test needs at least 2 scores per side, got {} and {}",
            a.n, b.n
        )));
    }
    if !(a.variance.is_finite() && b.variance.is_finite()) {
        return Err(Error::NonFinite("sample variance".into()));
    }
    Ok(())
}

fn finish(diff: f64, se: f64, df: f64) -> Result<TTest> {
    if se == 0.0 {
        // Both samples constant.
        let (t, p) = if diff == 0.0 {
            (0.0, 1.0)
        } else {
            (diff.signum() * f64::INFINITY, f64::MIN_POSITIVE)
        };
        return Ok(TTest {
            t,
            df,
            p_two_tailed: p,
        });
    }
    let t = diff / se;
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).clamp(f64::MIN_POSITIVE, 1.0);
    Ok(TTest {
        t,
        df,
        p_two_tailed: p,
    })
}

/// Unequal-variance t-test of `b` against `a`; t is positive when b's mean
/// is larger.
pub fn welch_t_test(a: &SampleSummary, b: &SampleSummary) -> Result<TTest> {
    check_sizes(a, b)?;
    let va = a.variance / a.n as f64;
    let vb = b.variance / b.n as f64;
    let se = (va + vb).sqrt();
    let df = if se == 0.0 {
        (a.n + b.n - 2) as f64
    } else {
        (va + vb).powi(2) / (va * va / (a.n - 1) as f64 + vb * vb / (b.n - 1) as f64)
    };
    finish(b.mean - a.mean, se, df)
}

/// Student's t-test with pooled variance.
pub fn student_t_test(a: &SampleSummary, b: &SampleSummary) -> Result<TTest> {
    check_sizes(a, b)?;
    let df = (a.n + b.n - 2) as f64;
    let pooled = pooled_variance(a, b);
    let se = (pooled * (1.0 / a.n as f64 + 1.0 / b.n as f64)).sqrt();
    finish(b.mean - a.mean, se, df)
}

fn pooled_variance(a: &SampleSummary, b: &SampleSummary) -> f64 {
    ((a.n - 1) as f64 * a.variance + (b.n - 1) as f64 * b.variance) / (a.n + b.n - 2) as f64
}

/// (mean_b - mean_a) / pooled SD. `None` when the pooled SD is zero.
pub fn cohens_d(a: &SampleSummary, b: &SampleSummary) -> Result<Option<f64>> {
    if a.n + b.n < 3 || a.n == 0 || b.n == 0 {
        return Err(Error::InsufficientData(
            "effect size needs at least 3 scores".into(),
        ));
    }
    let sd = pooled_variance(a, b).sqrt();
    Ok((sd > 0.0).then(|| (b.mean - a.mean) / sd))
}

/// Benjamini-Hochberg step-up adjustment, returned in input order.
pub fn bh_adjust(p_values: &[f64]) -> Vec<f64> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p_values[i].total_cmp(&p_values[j]).then(i.cmp(&j)));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        let scaled = p_values[i] * m as f64 / (rank + 1) as f64;
        running = running.min(scaled).min(1.0);
        // m / rank >= 1, so only rounding could push this below p.
        adjusted[i] = running.max(p_values[i]);
    }
    adjusted
}

/// First-attempt scores on the intervention's question, split at the
/// deployment time. Scores received exactly at deployment count as after.
pub fn split_by_time(rs: &ResponseSet, iv: &Intervention) -> Result<(Vec<f64>, Vec<f64>)> {
    if !rs.questions().contains_key(&iv.question_id) {
        return Err(Error::UnknownQuestion(iv.question_id));
    }
    let mut answers: Vec<(i64, usize)> = rs
        .records()
        .iter()
        .enumerate()
        .filter(|(_, r)| r.question_id == iv.question_id && r.attempt == 0)
        .map(|(i, r)| (r.received_at_ms, i))
        .collect();
    answers.sort_unstable();
    let mut seen = BTreeSet::new();
    let (mut before, mut after) = (Vec::new(), Vec::new());
    for (t, i) in answers {
        let r = &rs.records()[i];
        if !seen.insert(r.session_id) {
            continue;
        }
        let side = if t < iv.deployed_at_ms {
            &mut before
        } else {
            &mut after
        };
        side.push(f64::from(r.score));
    }
    if before.is_empty() || after.is_empty() {
        return Err(Error::InsufficientData(format!(
            "{}: {} answers before and {} after deployment",
            iv.name,
            before.len(),
            after.len()
        )));
    }
    Ok((before, after))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InterventionReport {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_id: Option<Uuid>,
    pub before_mean: f64,
    pub n_before: usize,
    pub after_mean: f64,
    pub n_after: usize,
    pub delta: f64,
    /// Cohen's d; `None` when both sides are constant.
    pub effect_size: Option<f64>,
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
    pub p_adjusted: f64,
    pub significant: bool,
}

/// Report for one comparison on its own; `p_adjusted` equals `p_value`
/// until [`adjust_batch`] runs.
pub fn compare(
    name: &str,
    before: &SampleSummary,
    after: &SampleSummary,
    test: TestKind,
) -> Result<InterventionReport> {
    let tt = match test {
        TestKind::Welch => welch_t_test(before, after)?,
        TestKind::Pooled => student_t_test(before, after)?,
    };
    Ok(InterventionReport {
        name: name.to_string(),
        question_id: None,
        before_mean: before.mean,
        n_before: before.n,
        after_mean: after.mean,
        n_after: after.n,
        delta: after.mean - before.mean,
        effect_size: cohens_d(before, after)?,
        t: tt.t,
        df: tt.df,
        p_value: tt.p_two_tailed,
        p_adjusted: tt.p_two_tailed,
        significant: tt.p_two_tailed < SIGNIFICANCE,
    })
}

/// Applies the BH adjustment across `reports` and sets `significant`.
pub fn adjust_batch(reports: &mut [InterventionReport]) {
    let raw: Vec<f64> = reports.iter().map(|r| r.p_value).collect();
    for (r, adj) in reports.iter_mut().zip(bh_adjust(&raw)) {
        r.p_adjusted = adj;
        r.significant = adj < SIGNIFICANCE;
    }
}

pub fn evaluate(rs: &ResponseSet, iv: &Intervention, test: TestKind) -> Result<InterventionReport> {
    let (before, after) = split_by_time(rs, iv)?;
    let mut report = compare(
        &iv.name,
        &SampleSummary::from_sample(&before),
        &SampleSummary::from_sample(&after),
        test,
    )?;
    report.question_id = Some(iv.question_id);
    Ok(report)
}

/// Evaluates every intervention; failures are returned in place and left
/// out of the multiple-comparison adjustment.
pub fn evaluate_all(
    rs: &ResponseSet,
    interventions: &[Intervention],
    test: TestKind,
) -> Vec<Result<InterventionReport>> {
    let mut results: Vec<Result<InterventionReport>> = interventions
        .par_iter()
        .map(|iv| evaluate(rs, iv, test))
        .collect();
    let mut ok: Vec<InterventionReport> = results
        .iter()
        .filter_map(|r| r.as_ref().ok().cloned())
        .collect();
    adjust_batch(&mut ok);
    let mut adjusted = ok.into_iter();
    for r in results.iter_mut().flatten() {
        *r = adjusted.next().expect("one adjusted report per success");
    }
    results
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PowerSpec {
    pub effect_size: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_power")]
    pub power: f64,
}

fn default_alpha() -> f64 {
    0.05
}

fn default_power() -> f64 {
    0.8
}

impl PowerSpec {
    pub fn new(effect_size: f64) -> Self {
        PowerSpec {
            effect_size,
            alpha: default_alpha(),
            power: default_power(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PowerResult {
    pub n_per_group: usize,
    pub n_total: usize,
}

/// Readers needed per group for a two-sided two-sample t-test to detect
/// `effect_size` with the given power. Starts from the normal approximation
/// and then takes the smallest n at which the same formula with Student t
/// quantiles at df = 2(n - 1) is satisfied.
pub fn power_required(spec: &PowerSpec) -> Result<PowerResult> {
    let d = spec.effect_size;
    if !(d.is_finite() && d > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "effect size must be positive, got {d}"
        )));
    }
    for (name, v) in [("alpha", spec.alpha), ("power", spec.power)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "{name} must lie in (0, 1), got {v}"
            )));
        }
    }
    let required = |qa: f64, qb: f64| 2.0 * ((qa + qb) / d).powi(2);
    let z = Normal::new(0.0, 1.0).expect("standard normal");
    let normal = required(
        z.inverse_cdf(1.0 - spec.alpha / 2.0),
        z.inverse_cdf(spec.power),
    );
    if !normal.is_finite() || normal > 1e12 {
        return Err(Error::InvalidArgument(format!(
            "effect size {d} needs an unbounded sample"
        )));
    }
    // t quantiles exceed z quantiles, so the normal answer is a lower bound
    // and the requirement shrinks as n grows.
    let mut n = (normal.ceil() as usize).max(2);
    loop {
        let t = StudentsT::new(0.0, 1.0, 2.0 * (n as f64 - 1.0))
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let need = required(
            t.inverse_cdf(1.0 - spec.alpha / 2.0),
            t.inverse_cdf(spec.power),
        );
        if need <= n as f64 {
            break;
        }
        n += 1;
    }
    Ok(PowerResult {
        n_per_group: n,
        n_total: 2 * n,
    })
}
