//! Properties of relaxed matching, the accuracy reward and group
//! normalization, checked against closed forms written out here.

use chartforge_core::chart_model::ChartType;
use chartforge_core::qa_engine::{QaItem, Source};
use chartforge_core::response_eval::{evaluate_run, parse_response, relaxed_match, PromptMode, DEFAULT_TAU};
use chartforge_core::reward_engine::{
    accuracy_reward, group_advantages, relative_error, total_reward, DEFAULT_EPSILON,
};
use proptest::prelude::*;

const EPS: f64 = DEFAULT_EPSILON;

fn nonzero() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6..-1e-3f64, 1e-3..1e6f64]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn power_of_two_scaling_preserves_match(p in -1e6..1e6f64, g in nonzero(), e in -20i32..20, neg in any::<bool>()) {
        // multiplying by ±2^e is exact, so the verdict must not move at all
        let k = if neg { -(2f64.powi(e)) } else { 2f64.powi(e) };
        prop_assert_eq!(
            relaxed_match(k * p, k * g, DEFAULT_TAU).unwrap(),
            relaxed_match(p, g, DEFAULT_TAU).unwrap()
        );
    }

    #[test]
    fn scaling_preserves_match_away_from_the_edge(p in -1e6..1e6f64, g in nonzero(), k in nonzero()) {
        let d = (p - g).abs() / g.abs();
        // rounding in k*p can only matter right at the tolerance
        prop_assume!((d - DEFAULT_TAU).abs() > 1e-9);
        prop_assert_eq!(
            relaxed_match(k * p, k * g, DEFAULT_TAU).unwrap(),
            relaxed_match(p, g, DEFAULT_TAU).unwrap()
        );
    }

    #[test]
    fn accepted_predictions_form_the_closed_interval(g in nonzero(), t in -0.1..0.1f64) {
        let p = g + t * g.abs();
        let inside = (p - g).abs() <= DEFAULT_TAU * g.abs();
        prop_assert_eq!(relaxed_match(p, g, DEFAULT_TAU).unwrap(), inside);
    }

    #[test]
    fn acceptance_is_monotone_in_distance(g in nonzero(), a in 0.0..0.05f64, b in 0.0..0.05f64) {
        let (near, far) = if a <= b { (a, b) } else { (b, a) };
        let m_far = relaxed_match(g + far * g.abs(), g, DEFAULT_TAU).unwrap();
        let m_near = relaxed_match(g + near * g.abs(), g, DEFAULT_TAU).unwrap();
        prop_assert!(!m_far || m_near, "far accepted but near rejected");
    }

    #[test]
    fn reward_decays_monotonically(a in 0.0..0.1f64, b in 0.0..0.1f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(accuracy_reward(lo, EPS).unwrap() >= accuracy_reward(hi, EPS).unwrap());
    }

    #[test]
    fn rewards_stay_bounded(p in -1e4..1e4f64, g in nonzero(), noise in "[ -~]{0,40}", tagged in any::<bool>()) {
        let raw = if tagged {
            format!("<think>{noise}</think><answer>{p}</answer>")
        } else {
            format!("{noise} {p}")
        };
        let r = total_reward(&raw, g, EPS).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.accuracy_reward));
        prop_assert!((0.0..=1.0).contains(&r.format_reward));
        prop_assert!((0.0..=2.0).contains(&r.total));
    }

    #[test]
    fn advantages_ignore_affine_rescaling(
        r in prop::collection::vec(0.0..2.0f64, 2..16),
        alpha in 0.01..100.0f64,
        beta in -50.0..50.0f64,
    ) {
        let base = group_advantages(&r, 1e-8).unwrap();
        let moved: Vec<f64> = r.iter().map(|x| alpha * x + beta).collect();
        let spread = r.iter().cloned().fold(f64::MIN, f64::max) - r.iter().cloned().fold(f64::MAX, f64::min);
        prop_assume!(spread > 1e-6);
        let shifted = group_advantages(&moved, 1e-8).unwrap();
        for (a, b) in base.iter().zip(&shifted) {
            prop_assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn match_iff_positive_reward_except_at_tau(p in -1e4..1e4f64, g in nonzero()) {
        let d = relative_error(p, g).unwrap();
        let m = relaxed_match(p, g, DEFAULT_TAU).unwrap();
        let r = accuracy_reward(d, EPS).unwrap();
        if d == DEFAULT_TAU {
            prop_assert!(m && r == 0.0);
        } else {
            prop_assert_eq!(m, r > 0.0);
        }
    }
}

#[test]
fn reward_curve_shape() {
    let r = |d: f64| accuracy_reward(d, EPS).unwrap();
    assert_eq!(r(0.0), 1.0);
    assert_eq!(r(EPS), 0.0);
    let h = 1e-6;
    let slope = |d: f64| ((r(d + h) - r(d - h)) / (2.0 * h)).abs();
    // |R'(d)| = 2(ε - d)/ε², so the quadratic is steepest at zero error and
    // flattens towards ε; the finite differences must agree with that
    for d in [0.001, 0.005, 0.01, 0.018] {
        let exact = 2.0 * (EPS - d) / (EPS * EPS);
        assert!((slope(d) - exact).abs() < 1e-3, "slope at {d}: {} vs {exact}", slope(d));
    }
    assert!(slope(0.001) > slope(0.018));
    // strict convexity on [0, ε): every chord lies above the curve
    let grid: Vec<f64> = (0..200).map(|i| i as f64 * EPS / 200.0).collect();
    for w in grid.windows(3) {
        let mid = r(w[1]);
        let chord = (r(w[0]) + r(w[2])) / 2.0;
        assert!(chord > mid, "not convex near {}", w[1]);
    }
}

fn item(i: usize, gt: f64, source: Source, t: ChartType) -> QaItem {
    QaItem {
        item_id: format!("q{i:05}"),
        chart_ref: format!("c{i}"),
        question: "What is the value?".into(),
        answer_gt: gt,
        chart_type: t,
        source,
        topic: "finance".into(),
        unit: None,
    }
}

#[test]
fn overall_is_the_micro_average() {
    let types = [
        (Source::Synthetic, ChartType::Box),
        (Source::Synthetic, ChartType::Radar),
        (Source::Real, ChartType::Bar),
        (Source::Real, ChartType::Combo),
    ];
    let mut items = Vec::new();
    let mut responses = Vec::new();
    for i in 0..97 {
        let (s, t) = types[i % types.len()];
        items.push(item(i, 10.0 + i as f64, s, t));
        let pred = if i % 3 == 0 { 10.0 + i as f64 } else { 1.0 };
        if i % 11 != 0 {
            responses.push((
                format!("q{i:05}"),
                parse_response(&format!("{pred}"), PromptMode::Direct),
            ));
        }
    }
    let report = evaluate_run(&responses, &items, DEFAULT_TAU).unwrap();
    let n: usize = report.cells.iter().map(|c| c.n).sum();
    let correct: usize = report.cells.iter().map(|c| c.correct).sum();
    assert_eq!(n, 97);
    assert_eq!(report.overall_n, n);
    assert_eq!(report.overall_correct, correct);
    // accuracies are percentages
    assert_eq!(report.overall, Some(100.0 * correct as f64 / n as f64));
    // every third item is right unless its response was dropped
    let oracle = (0..97).filter(|i| i % 3 == 0 && i % 11 != 0).count();
    assert_eq!(correct, oracle);
    assert_eq!(report.missing, (0..97).filter(|i| i % 11 == 0).count());
}
