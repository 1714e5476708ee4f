//! Classical test theory: reader ability, item difficulty, item
//! discrimination, and the exhaustive search for the item subset that best
//! predicts overall score.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::dataset::{ResponseIndex, ResponseSet};
use crate::error::{Error, Result};
use crate::stats::{mean, pearson, sample_sd, Histogram};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ItemStats {
    pub question_id: Uuid,
    pub n: usize,
    /// Mean score; higher means easier.
    pub difficulty: f64,
    /// Pearson r between item score and overall score; absent when undefined.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub discrimination: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AbilityScore {
    pub session_id: Uuid,
    pub value: f64,
}

/// Whether the overall score used for discrimination includes the item
/// itself (item-total) or excludes it (item-rest).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrelationMode {
    #[default]
    ItemTotal,
    ItemRest,
}

pub fn ability(rs: &ResponseSet, session_id: Uuid) -> Result<AbilityScore> {
    let idx = rs.index();
    let ri = idx
        .reader_ids
        .binary_search(&session_id)
        .map_err(|_| Error::UnknownReader(session_id))?;
    Ok(AbilityScore {
        session_id,
        value: idx.abilities()[ri],
    })
}

pub fn difficulty(rs: &ResponseSet, question_id: Uuid) -> Result<f64> {
    let idx = rs.index();
    let qi = question_index(&idx, question_id)?;
    Ok(item_difficulty(&idx.by_question[qi]))
}

pub fn discrimination(
    rs: &ResponseSet,
    question_id: Uuid,
    mode: CorrelationMode,
) -> Result<Option<f64>> {
    let idx = rs.index();
    let qi = question_index(&idx, question_id)?;
    let abilities = idx.abilities();
    Ok(item_discrimination(&idx, qi, &abilities, mode))
}

fn question_index(idx: &ResponseIndex, id: Uuid) -> Result<usize> {
    idx.question_ids
        .binary_search(&id)
        .map_err(|_| Error::UnknownQuestion(id))
}

fn item_difficulty(responses: &[(u32, u8)]) -> f64 {
    let sum: u32 = responses.iter().map(|&(_, s)| u32::from(s)).sum();
    sum as f64 / responses.len().max(1) as f64
}

fn item_discrimination(
    idx: &ResponseIndex,
    qi: usize,
    abilities: &[f64],
    mode: CorrelationMode,
) -> Option<f64> {
    let responses = &idx.by_question[qi];
    let mut xs = Vec::with_capacity(responses.len());
    let mut ys = Vec::with_capacity(responses.len());
    for &(ri, score) in responses {
        let ri = ri as usize;
        let overall = match mode {
            CorrelationMode::ItemTotal => abilities[ri],
            CorrelationMode::ItemRest => {
                let n = idx.by_reader[ri].len();
                if n < 2 {
                    continue;
                }
                (abilities[ri] * n as f64 - f64::from(score)) / (n - 1) as f64
            }
        };
        xs.push(f64::from(score));
        ys.push(overall);
    }
    pearson(&xs, &ys)
}

/// Per-question statistics and per-reader abilities over a whole set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CttReport {
    pub mode: CorrelationMode,
    pub items: Vec<ItemStats>,
    pub abilities: Vec<AbilityScore>,
    pub ability_summary: Summary,
    pub difficulty_summary: Summary,
    pub discrimination_summary: Option<Summary>,
}

pub fn item_stats(idx: &ResponseIndex, mode: CorrelationMode) -> Vec<ItemStats> {
    let abilities = idx.abilities();
    (0..idx.n_questions())
        .into_par_iter()
        .map(|qi| ItemStats {
            question_id: idx.question_ids[qi],
            n: idx.by_question[qi].len(),
            difficulty: item_difficulty(&idx.by_question[qi]),
            discrimination: item_discrimination(idx, qi, &abilities, mode),
        })
        .collect()
}

pub fn analyze(rs: &ResponseSet, mode: CorrelationMode) -> Result<CttReport> {
    if rs.is_empty() {
        return Err(Error::InsufficientData("no responses".into()));
    }
    let idx = rs.index();
    let items = item_stats(&idx, mode);
    let ability_values = idx.abilities();
    let abilities = idx
        .reader_ids
        .iter()
        .zip(&ability_values)
        .map(|(id, v)| AbilityScore {
            session_id: *id,
            value: *v,
        })
        .collect();
    let difficulties: Vec<f64> = items.iter().map(|i| i.difficulty).collect();
    let discriminations: Vec<f64> = items.iter().filter_map(|i| i.discrimination).collect();
    Ok(CttReport {
        mode,
        ability_summary: summarize(&ability_values, 0.0, 1.0, 20)?,
        difficulty_summary: summarize(&difficulties, 0.0, 1.0, 20)?,
        discrimination_summary: summarize(&discriminations, -1.0, 1.0, 20).ok(),
        items,
        abilities,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 with `sd_defined = false` for one value.
    pub sd: f64,
    pub sd_defined: bool,
    pub histogram: Histogram,
}

pub fn summarize(values: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Summary> {
    let m = mean(values).ok_or_else(|| Error::InsufficientData("empty sample".into()))?;
    let sd = sample_sd(values);
    Ok(Summary {
        n: values.len(),
        mean: m,
        sd: sd.unwrap_or(0.0),
        sd_defined: sd.is_some(),
        histogram: Histogram::new(values, lo, hi, bins),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BestSubset {
    pub question_ids: Vec<Uuid>,
    pub r: f64,
}

/// Correlation between each reader's mean over `subset` and their overall
/// mean. Readers who answered nothing in the subset are left out.
pub fn subset_correlation(scores: &ScoreMatrix, overall: &[f64], subset: &[usize]) -> Option<f64> {
    let mut xs = Vec::with_capacity(scores.readers);
    let mut ys = Vec::with_capacity(scores.readers);
    for (ri, &total) in overall.iter().enumerate() {
        let row = scores.row(ri);
        let (mut sum, mut n) = (0u32, 0u32);
        for &q in subset {
            let s = row[q];
            if s >= 0 {
                sum += s as u32;
                n += 1;
            }
        }
        if n > 0 {
            xs.push(f64::from(sum) / f64::from(n));
            ys.push(total);
        }
    }
    pearson(&xs, &ys)
}

/// Dense reader × question matrix; -1 marks a missing answer.
#[derive(Debug, Clone)]
pub struct ScoreMatrix {
    pub readers: usize,
    pub questions: usize,
    cells: Vec<i8>,
}

impl ScoreMatrix {
    pub fn from_index(idx: &ResponseIndex) -> Self {
        let (readers, questions) = (idx.n_readers(), idx.n_questions());
        let mut cells = vec![-1i8; readers * questions];
        for (ri, answers) in idx.by_reader.iter().enumerate() {
            for &(qi, s) in answers {
                cells[ri * questions + qi as usize] = s as i8;
            }
        }
        ScoreMatrix {
            readers,
            questions,
            cells,
        }
    }

    pub fn row(&self, reader: usize) -> &[i8] {
        &self.cells[reader * self.questions..(reader + 1) * self.questions]
    }
}

fn better(a: &(f64, Vec<usize>), b: &(f64, Vec<usize>)) -> bool {
    // Higher r wins; equal r prefers the lexicographically smaller subset.
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Exhaustive search over all k-subsets of questions for the subset whose
/// per-reader mean correlates best with the overall mean.
pub fn best_subset(rs: &ResponseSet, k: usize) -> Result<BestSubset> {
    let idx = rs.index();
    let m = idx.n_questions();
    if k == 0 || k > m {
        return Err(Error::InvalidArgument(format!(
            "k must be in 1..={m}, got {k}"
        )));
    }
    let scores = ScoreMatrix::from_index(&idx);
    let overall = idx.abilities();

    let best = (0..=m - k)
        .into_par_iter()
        .filter_map(|first| {
            let mut local: Option<(f64, Vec<usize>)> = None;
            let mut rest: Vec<usize> = (first + 1..first + k).collect();
            loop {
                let mut subset = Vec::with_capacity(k);
                subset.push(first);
                subset.extend_from_slice(&rest);
                if let Some(r) = subset_correlation(&scores, &overall, &subset) {
                    let cand = (r, subset);
                    if local.as_ref().is_none_or(|b| better(&cand, b)) {
                        local = Some(cand);
                    }
                }
                if rest.is_empty() || !advance_tail(&mut rest, first + 1, m) {
                    break;
                }
            }
            local
        })
        .reduce_with(|a, b| if better(&b, &a) { b } else { a })
        .ok_or_else(|| Error::InsufficientData("no subset has a defined correlation".into()))?;

    Ok(BestSubset {
        question_ids: best.1.iter().map(|&q| idx.question_ids[q]).collect(),
        r: best.0,
    })
}

/// Advances a combination whose elements are drawn from `lo..n`.
fn advance_tail(c: &mut [usize], lo: usize, n: usize) -> bool {
    for v in c.iter_mut() {
        *v -= lo;
    }
    let ok = next_combination(c, n - lo);
    for v in c.iter_mut() {
        *v += lo;
    }
    ok
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::fixtures::{rec, uuid};
    use approx::assert_abs_diff_eq;

    #[test]
    fn ability_and_difficulty_means() {
        let records = vec![
            rec(1, 1, 1, 0, 1),
            rec(1, 2, 1, 1, 0),
            rec(1, 3, 1, 2, 1),
            rec(1, 4, 1, 3, 1),
            rec(2, 1, 1, 0, 1),
            rec(3, 1, 1, 0, 0),
            rec(4, 1, 1, 0, 1),
        ];
        let rs = ResponseSet::new(records, [1]);
        assert_abs_diff_eq!(ability(&rs, uuid(1)).unwrap().value, 0.75);
        assert_abs_diff_eq!(difficulty(&rs, uuid(1001)).unwrap(), 0.75);
        assert!(matches!(
            ability(&rs, uuid(99)),
            Err(Error::UnknownReader(_))
        ));
        assert!(matches!(
            difficulty(&rs, uuid(99)),
            Err(Error::UnknownQuestion(_))
        ));
    }

    #[test]
    fn hand_computed_item_total_correlation() {
        // sxy = 0.6, sxx = 1, syy = 0.37
        let r = pearson(&[1.0, 1.0, 0.0, 0.0], &[0.9, 0.8, 0.3, 0.2]).unwrap();
        assert_abs_diff_eq!(r, 0.6 / 0.37f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn unanimous_item_has_undefined_discrimination() {
        let records = vec![
            rec(1, 1, 1, 0, 1),
            rec(1, 2, 1, 0, 0),
            rec(2, 1, 1, 0, 1),
            rec(2, 2, 1, 0, 1),
        ];
        let rs = ResponseSet::new(records, [1]);
        assert_eq!(
            discrimination(&rs, uuid(1001), CorrelationMode::ItemTotal).unwrap(),
            None
        );
        // item 2 orders readers exactly like ability
        let r = discrimination(&rs, uuid(1002), CorrelationMode::ItemTotal)
            .unwrap()
            .unwrap();
        assert_abs_diff_eq!(r, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn summarize_edges() {
        let s = summarize(&[0.0, 1.0], 0.0, 1.0, 10).unwrap();
        assert_abs_diff_eq!(s.mean, 0.5);
        assert_abs_diff_eq!(s.sd, 0.5f64.sqrt(), epsilon = 1e-12);
        let s = summarize(&[0.4; 5], 0.0, 1.0, 10).unwrap();
        assert_eq!(s.sd, 0.0);
        assert!(s.sd_defined);
        let s = summarize(&[0.4], 0.0, 1.0, 10).unwrap();
        assert_eq!(s.sd, 0.0);
        assert!(!s.sd_defined);
        assert!(summarize(&[], 0.0, 1.0, 10).is_err());
    }

    #[test]
    fn combinations_enumerate_all() {
        let mut c = vec![0, 1, 2];
        let mut count = 1;
        while next_combination(&mut c, 6) {
            count += 1;
        }
        assert_eq!(count, 20);
    }

    #[test]
    fn full_subset_has_unit_correlation() {
        let mut records = Vec::new();
        for reader in 0..6u128 {
            for q in 0..4u128 {
                records.push(rec(reader, q, 1, 0, (q < reader % 5) as u8));
            }
        }
        let rs = ResponseSet::new(records, [1]);
        let best = best_subset(&rs, 4).unwrap();
        assert_abs_diff_eq!(best.r, 1.0, epsilon = 1e-12);
        assert!(best_subset(&rs, 5).is_err());
        assert!(best_subset(&rs, 0).is_err());
    }
}
