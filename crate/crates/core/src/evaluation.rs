//! Metrics over predictions, human votes and study judgments.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::corpus::{ContestantLabel, LabelPermutation, Session};
use crate::pipeline::Prediction;
use crate::prompting::ControlKind;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no ground truth for session `{0}`")]
    MissingTruth(String),
    #[error("session `{0}` has more than one prediction")]
    DuplicatePrediction(String),
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("item {item} has {actual} ratings, expected {expected}")]
    RaggedRatings { item: usize, expected: u32, actual: u32 },
    #[error("at least two raters per item are required, got {0}")]
    TooFewRaters(u32),
    #[error("pairwise item {item} has {raters} preferences, expected 3")]
    RaterCount { item: usize, raters: usize },
    #[error("statistic undefined: {0}")]
    Undefined(String),
    #[error("{rows} rows cannot fit {regressors} regressors (need at least {needed})")]
    TooFewRows { rows: usize, regressors: usize, needed: usize },
    #[error("design matrix is rank deficient; collinear columns: {}", columns.join(", "))]
    Collinear { columns: Vec<String> },
    #[error("prediction sets cover different sessions")]
    SessionMismatch,
}

pub type Truths = BTreeMap<String, ContestantLabel>;

pub fn truths_of(sessions: &[Session]) -> Truths {
    sessions.iter().map(|s| (s.id.clone(), s.ground_truth)).collect()
}

/// Fraction formatted as a percentage with one decimal.
pub fn percent(fraction: f64) -> String {
    format!("{:.1}", fraction * 100.0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRow {
    pub session_id: String,
    pub correct: bool,
    /// 1-based rank of the true contestant; absent for invalid outputs.
    pub rank_of_truth: Option<u8>,
    pub invalid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    pub n: usize,
    pub accuracy: f64,
    pub accuracy_at_2: f64,
    pub invalid_rate: f64,
    pub per_session: Vec<SessionRow>,
}

impl EvalReport {
    /// Scores `preds` in the given order. Invalid outputs count as incorrect at every cutoff.
    pub fn from_predictions(
        variant: impl Into<String>,
        preds: &[Prediction],
        truths: &Truths,
    ) -> Result<EvalReport, EvalError> {
        let mut seen = BTreeSet::new();
        let mut per_session = Vec::with_capacity(preds.len());
        for p in preds {
            if !seen.insert(p.session_id.as_str()) {
                return Err(EvalError::DuplicatePrediction(p.session_id.clone()));
            }
            let truth = *truths
                .get(&p.session_id)
                .ok_or_else(|| EvalError::MissingTruth(p.session_id.clone()))?;
            per_session.push(SessionRow {
                session_id: p.session_id.clone(),
                correct: p.is_correct(truth),
                rank_of_truth: p.rank_of(truth).map(|r| r as u8),
                invalid: !p.is_valid(),
            });
        }
        let n = per_session.len();
        let frac = |count: usize| if n == 0 { 0.0 } else { count as f64 / n as f64 };
        Ok(EvalReport {
            variant: variant.into(),
            n,
            accuracy: frac(per_session.iter().filter(|r| r.correct).count()),
            accuracy_at_2: frac(per_session.iter().filter(|r| r.rank_of_truth.is_some_and(|k| k <= 2)).count()),
            invalid_rate: frac(per_session.iter().filter(|r| r.invalid).count()),
            per_session,
        })
    }

    /// Per-session rows as CSV with a header line.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["session_id", "correct", "rank_of_truth", "invalid"]).unwrap();
        for r in &self.per_session {
            let rank = r.rank_of_truth.map(|k| k.to_string()).unwrap_or_default();
            w.write_record([r.session_id.as_str(), &r.correct.to_string(), &rank, &r.invalid.to_string()])
                .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}

pub fn accuracy(preds: &[Prediction], truths: &Truths) -> Result<f64, EvalError> {
    Ok(EvalReport::from_predictions("", preds, truths)?.accuracy)
}

pub fn accuracy_at_2(preds: &[Prediction], truths: &Truths) -> Result<f64, EvalError> {
    Ok(EvalReport::from_predictions("", preds, truths)?.accuracy_at_2)
}

/// Markdown comparison table with columns Variant, Acc, Acc@2, invalid_rate, n.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut out = String::from("| Variant | Acc | Acc@2 | invalid_rate | n |\n|---|---:|---:|---:|---:|\n");
    for r in reports {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} |\n",
            r.variant,
            percent(r.accuracy),
            percent(r.accuracy_at_2),
            percent(r.invalid_rate),
            r.n
        ));
    }
    out
}

/// A uniformly random ranking of the three contestants.
pub fn random_ranking(rng: &mut impl Rng) -> [ContestantLabel; 3] {
    LabelPermutation::random(rng).images()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanAccuracy {
    pub accuracy: f64,
    pub n_sessions: usize,
    pub n_skipped: usize,
}

/// Macro average over sessions of the fraction of judges who found the true contestant.
/// Sessions without votes are skipped and counted.
pub fn human_session_accuracy(sessions: &[Session]) -> Result<HumanAccuracy, EvalError> {
    let voted: Vec<&Session> = sessions.iter().filter(|s| s.has_votes()).collect();
    if voted.is_empty() {
        return Err(EvalError::Empty("set of sessions with judge votes"));
    }
    let total: f64 = voted
        .iter()
        .map(|s| {
            let correct = s.judge_votes.iter().filter(|v| **v == s.ground_truth).count();
            correct as f64 / s.judge_votes.len() as f64
        })
        .sum();
    Ok(HumanAccuracy {
        accuracy: total / voted.len() as f64,
        n_sessions: voted.len(),
        n_skipped: sessions.len() - voted.len(),
    })
}

/// Items × categories count matrix; every item carries the same number of ratings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatingMatrix {
    counts: Vec<Vec<u32>>,
    raters: u32,
}

impl RatingMatrix {
    pub fn from_counts(counts: Vec<Vec<u32>>) -> Result<Self, EvalError> {
        let first = counts.first().ok_or(EvalError::Empty("rating matrix"))?;
        let raters: u32 = first.iter().sum();
        if raters < 2 {
            return Err(EvalError::TooFewRaters(raters));
        }
        for (item, row) in counts.iter().enumerate() {
            let actual: u32 = row.iter().sum();
            if actual != raters || row.len() != first.len() {
                return Err(EvalError::RaggedRatings { item, expected: raters, actual });
            }
        }
        Ok(RatingMatrix { counts, raters })
    }

    /// Builds counts from raw per-item ratings; categories are every distinct value seen.
    pub fn from_ratings<T: Ord + Clone>(items: &[Vec<T>]) -> Result<Self, EvalError> {
        let categories: BTreeSet<&T> = items.iter().flatten().collect();
        let index: BTreeMap<&T, usize> = categories.into_iter().enumerate().map(|(i, c)| (c, i)).collect();
        let counts = items
            .iter()
            .map(|ratings| {
                let mut row = vec![0u32; index.len()];
                for r in ratings {
                    row[index[r]] += 1;
                }
                row
            })
            .collect();
        Self::from_counts(counts)
    }

    pub fn items(&self) -> usize {
        self.counts.len()
    }

    pub fn raters(&self) -> u32 {
        self.raters
    }
}

/// Fleiss' κ = (P̄ − P̄ₑ)/(1 − P̄ₑ). When every rating falls in one category P̄ₑ = 1 and κ is 1.
pub fn fleiss_kappa(m: &RatingMatrix) -> f64 {
    let n = m.raters as f64;
    let items = m.counts.len() as f64;
    let categories = m.counts[0].len();
    let p_bar = m
        .counts
        .iter()
        .map(|row| (row.iter().map(|&c| (c as f64).powi(2)).sum::<f64>() - n) / (n * (n - 1.0)))
        .sum::<f64>()
        / items;
    let p_e: f64 = (0..categories)
        .map(|j| {
            let pj = m.counts.iter().map(|row| row[j] as f64).sum::<f64>() / (items * n);
            pj * pj
        })
        .sum();
    if (1.0 - p_e).abs() < 1e-12 {
        return 1.0;
    }
    (p_bar - p_e) / (1.0 - p_e)
}

/// Adjusted Fisher–Pearson standardized third moment, g₁·√(n(n−1))/(n−2).
pub fn skewness(values: &[f64]) -> Result<f64, EvalError> {
    let n = values.len();
    if n < 3 {
        return Err(EvalError::Undefined(format!("skewness needs n >= 3, got {n}")));
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
    let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / nf;
    if m2 <= f64::EPSILON * mean.abs().max(1.0) * 1e-3 {
        return Err(EvalError::Undefined("zero variance".into()));
    }
    let g1 = m3 / m2.powf(1.5);
    Ok(g1 * (nf * (nf - 1.0)).sqrt() / (nf - 2.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewnessTest {
    pub skewness: f64,
    /// One-sided bootstrap p-value for the sign of the observed skewness.
    pub p_value: f64,
    pub resamples: usize,
}

/// Bootstrap sign test: the share of resamples whose skewness does not share the observed sign
/// (degenerate resamples count against it), with the usual +1 correction.
pub fn skewness_sign_test(values: &[f64], resamples: usize, seed: u64) -> Result<SkewnessTest, EvalError> {
    let observed = skewness(values)?;
    if resamples == 0 {
        return Err(EvalError::Empty("bootstrap resample count"));
    }
    let sign = observed.signum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buffer = vec![0.0; values.len()];
    let mut against = 0usize;
    for _ in 0..resamples {
        for slot in buffer.iter_mut() {
            *slot = values[rng.random_range(0..values.len())];
        }
        match skewness(&buffer) {
            Ok(s) if s.signum() == sign && s != 0.0 => {}
            _ => against += 1,
        }
    }
    Ok(SkewnessTest {
        skewness: observed,
        p_value: (against as f64 + 1.0) / (resamples as f64 + 1.0),
        resamples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preference {
    A,
    B,
}

/// Share of items on which at least two of the three raters prefer system A.
pub fn pairwise_wins(items: &[Vec<Preference>]) -> Result<f64, EvalError> {
    if items.is_empty() {
        return Err(EvalError::Empty("pairwise item list"));
    }
    let mut wins = 0usize;
    for (item, prefs) in items.iter().enumerate() {
        if prefs.len() != 3 {
            return Err(EvalError::RaterCount { item, raters: prefs.len() });
        }
        if prefs.iter().filter(|p| **p == Preference::A).count() >= 2 {
            wins += 1;
        }
    }
    Ok(wins as f64 / items.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvilRating {
    Yes,
    WeakYes,
    WeakNo,
    No,
}

/// Numeric value of each satisfaction category.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvilMapping {
    pub yes: f64,
    pub weak_yes: f64,
    pub weak_no: f64,
    pub no: f64,
}

impl Default for EvilMapping {
    fn default() -> Self {
        EvilMapping {
            yes: 1.0,
            weak_yes: 2.0 / 3.0,
            weak_no: 1.0 / 3.0,
            no: 0.0,
        }
    }
}

impl EvilMapping {
    pub fn value(&self, rating: EvilRating) -> f64 {
        match rating {
            EvilRating::Yes => self.yes,
            EvilRating::WeakYes => self.weak_yes,
            EvilRating::WeakNo => self.weak_no,
            EvilRating::No => self.no,
        }
    }
}

/// Mean mapped rating. Callers restrict `ratings` to correctly predicted items.
pub fn evil_score(ratings: &[EvilRating], mapping: &EvilMapping) -> Result<f64, EvalError> {
    if ratings.is_empty() {
        return Err(EvalError::Empty("e-ViL rating list"));
    }
    Ok(ratings.iter().map(|r| mapping.value(*r)).sum::<f64>() / ratings.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsTerm {
    pub name: String,
    pub coefficient: f64,
    pub std_error: f64,
    /// Absent when the standard error is zero.
    pub t: Option<f64>,
    pub p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    /// Intercept first, then regressors in input order.
    pub terms: Vec<OlsTerm>,
    pub residuals: Vec<f64>,
    /// Absent when the response is constant.
    pub r_squared: Option<f64>,
    pub df_resid: usize,
}

/// Ordinary least squares with an intercept, solved through the normal equations by
/// Gauss–Jordan elimination. Two-sided p-values come from Student's t with n − k degrees of freedom.
pub fn ols(regressors: &[(String, Vec<f64>)], y: &[f64]) -> Result<OlsFit, EvalError> {
    let n = y.len();
    let p = regressors.len();
    if n < p + 2 {
        return Err(EvalError::TooFewRows { rows: n, regressors: p, needed: p + 2 });
    }
    if let Some((name, col)) = regressors.iter().find(|(_, c)| c.len() != n) {
        return Err(EvalError::Undefined(format!("column `{name}` has {} rows, response has {n}", col.len())));
    }
    let k = p + 1;
    let mut names = vec!["intercept".to_string()];
    names.extend(regressors.iter().map(|(name, _)| name.clone()));
    let x = |i: usize, j: usize| if j == 0 { 1.0 } else { regressors[j - 1].1[i] };

    // Augmented [XᵀX | I | Xᵀy].
    let width = 2 * k + 1;
    let mut a = vec![vec![0.0; width]; k];
    for r in 0..k {
        for c in 0..k {
            a[r][c] = (0..n).map(|i| x(i, r) * x(i, c)).sum();
        }
        a[r][k + r] = 1.0;
        a[r][2 * k] = (0..n).map(|i| x(i, r) * y[i]).sum();
    }
    let scale = (0..k).map(|i| a[i][i].abs()).fold(0.0, f64::max).max(1.0);
    let tol = 1e-10 * scale;
    let mut pivot_row_of = vec![None; k];
    let mut row = 0;
    for col in 0..k {
        let best = (row..k).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()));
        let Some(best) = best.filter(|&b| a[b][col].abs() > tol) else {
            // col = Σ a[pivot_row][col] · pivot column, over the pivots found so far.
            let mut columns: Vec<String> = (0..col)
                .filter(|&c| pivot_row_of[c].is_some_and(|r: usize| a[r][col].abs() > tol))
                .map(|c| names[c].clone())
                .collect();
            columns.push(names[col].clone());
            return Err(EvalError::Collinear { columns });
        };
        a.swap(row, best);
        let pivot = a[row][col];
        for v in a[row].iter_mut() {
            *v /= pivot;
        }
        for r in 0..k {
            if r != row && a[r][col] != 0.0 {
                let factor = a[r][col];
                let pivot_values = a[row].clone();
                for (v, pv) in a[r].iter_mut().zip(pivot_values) {
                    *v -= factor * pv;
                }
            }
        }
        pivot_row_of[col] = Some(row);
        row += 1;
    }
    // Full rank: row i now holds coefficient i and row i of (XᵀX)⁻¹.
    let beta: Vec<f64> = (0..k).map(|i| a[i][2 * k]).collect();
    let residuals: Vec<f64> = (0..n)
        .map(|i| y[i] - (0..k).map(|j| beta[j] * x(i, j)).sum::<f64>())
        .collect();
    let ssr: f64 = residuals.iter().map(|e| e * e).sum();
    let mean = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let exact = ssr <= 1e-24 * tss.max(1.0);
    let df = n - k;
    let sigma2 = if exact { 0.0 } else { ssr / df as f64 };
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df >= 1");
    let terms = (0..k)
        .map(|j| {
            let std_error = (sigma2 * a[j][k + j]).max(0.0).sqrt();
            let t = (std_error > 0.0).then(|| beta[j] / std_error);
            OlsTerm {
                name: names[j].clone(),
                coefficient: if exact && beta[j].abs() < 1e-12 { 0.0 } else { beta[j] },
                std_error,
                t,
                p: t.map(|t| (2.0 * dist.sf(t.abs())).min(1.0)),
            }
        })
        .collect();
    Ok(OlsFit {
        terms,
        residuals,
        r_squared: (tss > 0.0).then(|| if exact { 1.0 } else { 1.0 - ssr / tss }),
        df_resid: df,
    })
}

/// Pearson correlation of a binary indicator with a continuous response. Absent when either
/// side is constant.
pub fn point_biserial(indicator: &[bool], y: &[f64]) -> Option<f64> {
    let x: Vec<f64> = indicator.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    pearson(&x, y)
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n != y.len() || n < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// One session: which cues the model flagged anywhere in it, and how often judges were right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CueRow {
    pub cues: BTreeSet<ControlKind>,
    pub human_correct: f64,
}

/// Session-level cue presence from bottleneck predictions joined with judge accuracy.
/// Sessions without votes or without a prediction are left out.
pub fn cue_rows(preds: &[Prediction], sessions: &[Session]) -> Vec<CueRow> {
    let by_id: BTreeMap<&str, &Prediction> = preds.iter().map(|p| (p.session_id.as_str(), p)).collect();
    sessions
        .iter()
        .filter(|s| s.has_votes())
        .filter_map(|s| {
            let p = by_id.get(s.id.as_str())?;
            let correct = s.judge_votes.iter().filter(|v| **v == s.ground_truth).count();
            Some(CueRow {
                cues: p
                    .annotations
                    .iter()
                    .filter(|a| a.control.cue_present())
                    .map(|a| a.control.kind)
                    .collect(),
                human_correct: correct as f64 / s.judge_votes.len() as f64,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CueRegression {
    pub n: usize,
    pub fit: OlsFit,
    /// Per cue, in canonical order.
    pub point_biserial: Vec<(ControlKind, Option<f64>)>,
}

/// Regresses judge accuracy on the four cue indicators.
pub fn cue_human_regression(rows: &[CueRow]) -> Result<CueRegression, EvalError> {
    let y: Vec<f64> = rows.iter().map(|r| r.human_correct).collect();
    let indicators: Vec<(ControlKind, Vec<bool>)> = ControlKind::ALL
        .iter()
        .map(|&k| (k, rows.iter().map(|r| r.cues.contains(&k)).collect()))
        .collect();
    let regressors: Vec<(String, Vec<f64>)> = indicators
        .iter()
        .map(|(k, v)| (k.slug().to_string(), v.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()))
        .collect();
    let fit = ols(&regressors, &y)?;
    Ok(CueRegression {
        n: rows.len(),
        fit,
        point_biserial: indicators.iter().map(|(k, v)| (*k, point_biserial(v, &y))).collect(),
    })
}

/// Phi coefficient between the correctness indicators of two prediction sets over the same
/// sessions.
pub fn prediction_agreement(a: &[Prediction], b: &[Prediction], truths: &Truths) -> Result<f64, EvalError> {
    let ra = EvalReport::from_predictions("a", a, truths)?;
    let rb = EvalReport::from_predictions("b", b, truths)?;
    let ca: BTreeMap<&str, bool> = ra.per_session.iter().map(|r| (r.session_id.as_str(), r.correct)).collect();
    let cb: BTreeMap<&str, bool> = rb.per_session.iter().map(|r| (r.session_id.as_str(), r.correct)).collect();
    if ca.keys().ne(cb.keys()) {
        return Err(EvalError::SessionMismatch);
    }
    let mut table = [[0f64; 2]; 2];
    for (id, &x) in &ca {
        table[x as usize][cb[id] as usize] += 1.0;
    }
    let [[n00, n01], [n10, n11]] = table;
    let denom = ((n10 + n11) * (n00 + n01) * (n01 + n11) * (n00 + n10)).sqrt();
    if denom == 0.0 {
        return Err(EvalError::Undefined("a correctness vector is constant".into()));
    }
    Ok((n11 * n00 - n10 * n01) / denom)
}
