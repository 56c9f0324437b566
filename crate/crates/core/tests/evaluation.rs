//! Statistics checked against values frozen from an independent implementation
//! (numpy least squares and scipy's Student t), not from this crate.

mod common;

use std::collections::BTreeSet;

use approx::assert_relative_eq;
use common::*;
use truthcue::evaluation::{
    cue_human_regression, fleiss_kappa, ols, pairwise_wins, percent, point_biserial, prediction_agreement,
    skewness, truths_of, CueRow, OlsFit, Preference, RatingMatrix,
};
use truthcue::prompting::ControlKind;

fn assert_fit(fit: &OlsFit, params: &[f64], t: &[f64], p: &[f64], r2: f64) {
    assert_eq!(fit.terms.len(), params.len());
    for (i, term) in fit.terms.iter().enumerate() {
        assert_relative_eq!(term.coefficient, params[i], epsilon = 1e-10);
        assert_relative_eq!(term.t.unwrap(), t[i], epsilon = 1e-8);
        assert_relative_eq!(term.p.unwrap(), p[i], epsilon = 1e-8, max_relative = 1e-6);
    }
    assert_relative_eq!(fit.r_squared.unwrap(), r2, epsilon = 1e-10);
}

fn columns(rows: &[[u8; 4]]) -> Vec<Vec<f64>> {
    (0..4).map(|j| rows.iter().map(|r| f64::from(r[j])).collect()).collect()
}

fn quarters(y4: &[u8]) -> Vec<f64> {
    y4.iter().map(|&v| f64::from(v) / 4.0).collect()
}

#[test]
fn kappa_textbook_example() {
    let m = RatingMatrix::from_counts(vec![
        vec![0, 0, 0, 0, 14],
        vec![0, 2, 6, 4, 2],
        vec![0, 0, 3, 5, 6],
        vec![0, 3, 9, 2, 0],
        vec![2, 2, 8, 1, 1],
        vec![7, 7, 0, 0, 0],
        vec![3, 2, 6, 3, 0],
        vec![2, 5, 3, 2, 2],
        vec![6, 5, 2, 1, 0],
        vec![0, 2, 2, 3, 7],
    ])
    .unwrap();
    assert_relative_eq!(fleiss_kappa(&m), 4211.0 / 20059.0, epsilon = 1e-12);
}

#[test]
fn kappa_over_judge_votes() {
    let a = with_votes(fig1_session(), &[ONE, ONE, TWO]);
    let b = with_votes(fig1_session(), &[TWO, TWO, ONE]);
    let m = RatingMatrix::from_ratings(&[a.judge_votes, b.judge_votes]).unwrap();
    assert_relative_eq!(fleiss_kappa(&m), -1.0 / 3.0, epsilon = 1e-12);
}

#[test]
fn skewness_of_deceived_judge_counts() {
    let values: Vec<f64> = [5usize, 5, 20, 19, 10]
        .iter()
        .enumerate()
        .flat_map(|(k, &c)| std::iter::repeat_n(k as f64, c))
        .collect();
    assert_relative_eq!(skewness(&values).unwrap(), -0.49994178236906717, epsilon = 1e-12);
    assert_eq!(skewness(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap(), 0.0);
}

#[test]
fn ols_null_design() {
    // All 16 binary patterns, then the first eight again.
    let mut rows: Vec<[u8; 4]> = (0..16u8).map(|b| [b >> 3 & 1, b >> 2 & 1, b >> 1 & 1, b & 1]).collect();
    rows.extend_from_within(..8);
    let y = quarters(&[2, 2, 3, 4, 0, 0, 4, 4, 1, 1, 4, 2, 1, 4, 1, 2, 3, 2, 0, 0, 4, 3, 4, 2]);
    let regressors: Vec<(String, Vec<f64>)> =
        columns(&rows).into_iter().enumerate().map(|(j, c)| (format!("x{j}"), c)).collect();
    let fit = ols(&regressors, &y).unwrap();
    assert_eq!(fit.df_resid, 19);
    assert_fit(
        &fit,
        &[0.46354166666666685, -0.0781250000000003, 0.1041666666666666, 0.14583333333333331, -0.02083333333333326],
        &[2.742684303558077, -0.46225016352102594, 0.6537204504606128, 0.9152086306448585, -0.1307440900921222],
        &[0.01293849285946328, 0.6491514279861712, 0.521125895845739, 0.3715519399968811, 0.8973521538711229],
        0.07297748123436187,
    );
    let rpb = [-0.10210462507669134, 0.14439774556447696, 0.20215684379026772, -0.028879549112895378];
    for (j, (_, col)) in regressors.iter().enumerate() {
        let indicator: Vec<bool> = col.iter().map(|&v| v == 1.0).collect();
        assert_relative_eq!(point_biserial(&indicator, &y).unwrap(), rpb[j], epsilon = 1e-12);
    }
    // No cue is significant at 0.05 here.
    assert!(fit.terms[1..].iter().all(|t| t.p.unwrap() > 0.05));
}

#[test]
fn cue_regression_with_two_negative_cues() {
    let rows: [[u8; 4]; 32] = [
        [0, 1, 1, 1], [0, 0, 1, 1], [0, 0, 1, 0], [0, 1, 0, 0], [1, 1, 0, 0], [1, 1, 1, 1], [1, 0, 0, 1], [0, 0, 0, 0],
        [1, 0, 0, 0], [1, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1], [1, 1, 0, 1], [0, 1, 1, 0], [1, 0, 0, 1], [0, 1, 0, 0],
        [0, 1, 0, 1], [0, 1, 1, 1], [0, 0, 1, 1], [1, 0, 0, 0], [0, 1, 1, 1], [0, 1, 1, 0], [0, 1, 1, 1], [1, 1, 1, 1],
        [0, 0, 1, 1], [0, 1, 1, 1], [1, 0, 1, 1], [0, 0, 0, 0], [0, 1, 1, 1], [1, 1, 0, 0], [1, 0, 1, 0], [1, 1, 0, 1],
    ];
    let y = quarters(&[0, 1, 2, 1, 2, 0, 2, 2, 3, 2, 3, 2, 2, 0, 0, 2, 1, 1, 1, 2, 0, 1, 1, 0, 0, 1, 0, 3, 1, 3, 1, 2]);
    let cue_rows: Vec<CueRow> = rows
        .iter()
        .zip(&y)
        .map(|(r, &human_correct)| CueRow {
            cues: ControlKind::ALL.iter().zip(r).filter(|(_, &on)| on == 1).map(|(k, _)| *k).collect::<BTreeSet<_>>(),
            human_correct,
        })
        .collect();
    let reg = cue_human_regression(&cue_rows).unwrap();
    assert_eq!(reg.n, 32);
    let names: Vec<&str> = reg.fit.terms.iter().map(|t| t.name.as_str()).collect();
    assert_eq!(names, ["intercept", "entailment", "ambiguity", "overconfidence", "half-truths"]);
    assert_fit(
        &reg.fit,
        &[0.6121016425663346, -0.019795030183911266, -0.051066966165941176, -0.26863681033272485, -0.1857714446160325],
        &[8.541920689179753, -0.3030918041675738, -0.809534188295437, -4.034089107566013, -2.840925783051487],
        &[3.7214831316256088e-09, 0.7641429665681818, 0.4252850826556217, 0.0004043819068632166, 0.00845382630435047],
        0.5788882567221085,
    );
    let rpb = [0.1255060728744939, -0.1683451245853587, -0.6574540081276015, -0.5531339807804643];
    for ((kind, r), (expected_kind, expected)) in reg.point_biserial.iter().zip(ControlKind::ALL.iter().zip(rpb)) {
        assert_eq!(kind, expected_kind);
        assert_relative_eq!(r.unwrap(), expected, epsilon = 1e-12);
    }
    // Overconfidence and half-truths carry the significant negative association.
    let significant: Vec<&str> =
        reg.fit.terms[1..].iter().filter(|t| t.p.unwrap() < 0.05 && t.coefficient < 0.0).map(|t| t.name.as_str()).collect();
    assert_eq!(significant, ["overconfidence", "half-truths"]);
}

#[test]
fn ols_six_rows() {
    let fit = ols(&[("x".into(), vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0])], &[0.25, 0.5, 0.75, 0.5, 0.25, 0.75]).unwrap();
    assert_relative_eq!(fit.terms[0].coefficient, 0.5, epsilon = 1e-12);
    assert_relative_eq!(fit.terms[1].coefficient, 0.0, epsilon = 1e-12);
    assert_relative_eq!(fit.terms[0].p.unwrap(), 0.025721420742506516, epsilon = 1e-9);
}

#[test]
fn phi_between_correctness_vectors() {
    let a = [1, 1, 1, 0, 0, 1, 0, 1, 0, 0];
    let b = [1, 1, 0, 0, 1, 1, 0, 0, 0, 1];
    let sessions: Vec<_> = (0..10).map(|i| with_votes(session(&format!("p-{i}"), "a", &[], ONE), &[ONE])).collect();
    let truths = truths_of(&sessions);
    let preds = |bits: &[u8]| -> Vec<_> {
        bits.iter()
            .enumerate()
            .map(|(i, &c)| prediction(&format!("p-{i}"), Some(ranking_with(ONE, if c == 1 { 1 } else { 2 }))))
            .collect()
    };
    assert_relative_eq!(prediction_agreement(&preds(&a), &preds(&b), &truths).unwrap(), 0.2, epsilon = 1e-12);
}

#[test]
fn pairwise_majority_share() {
    use Preference::{A, B};
    let mut items = vec![vec![A, A, B]; 12];
    items.extend(vec![vec![A, A, A]; 11]);
    items.extend(vec![vec![B, B, A]; 5]);
    items.extend(vec![vec![B, B, B]; 3]);
    let wins = pairwise_wins(&items).unwrap();
    assert_eq!(items.len(), 31);
    assert_eq!(percent(wins), "74.2");
}
