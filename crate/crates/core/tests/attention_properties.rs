use core::f64::consts::E;

use logattn_core::attention::{
    apply_gate, log_attention_backward, log_attention_derivative, log_attention_forward, GradientConvention,
};
use logattn_core::{AttentionKind, Tensor};
use proptest::prelude::*;

const FIXED_POINT: f64 = E - 1.0;

fn gate(x: f64) -> f64 {
    log_attention_forward(&Tensor::scalar(x)).unwrap().data()[0]
}

fn gate_all(xs: &[f64]) -> Vec<f64> {
    log_attention_forward(&Tensor::from_f64(&[xs.len()], xs).unwrap())
        .unwrap()
        .into_data()
}

fn ratio(v: &[f64]) -> f64 {
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    hi / lo
}

proptest! {
    #[test]
    fn zero_on_the_negative_half_line(x in -1e6f64..=0.0) {
        prop_assert_eq!(gate(x), 0.0);
    }

    #[test]
    fn nonnegative_for_nonnegative_input(x in 0.0f64..1e6) {
        prop_assert!(gate(x) >= 0.0);
    }

    #[test]
    fn strictly_increasing_on_nonnegatives(a in 0.0f64..100.0, b in 0.0f64..100.0) {
        prop_assume!(a != b);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(gate(lo) < gate(hi), "{lo} -> {}, {hi} -> {}", gate(lo), gate(hi));
    }

    #[test]
    fn attention_factor_narrows_ratios(xs in prop::collection::vec(1e-3f64..=FIXED_POINT, 2..16)) {
        // ln(x + 1) / x falls as x grows, so the multiplier compresses spread.
        let factors: Vec<f64> = xs.iter().map(|x| x.ln_1p()).collect();
        prop_assert!(ratio(&factors) <= ratio(&xs) * (1.0 + 1e-12));
    }

    #[test]
    fn gated_output_widens_ratios_below_fixed_point(xs in prop::collection::vec(1e-3f64..=FIXED_POINT, 2..16)) {
        // out / x = ln(x + 1) rises with x, so the largest input is attenuated least.
        prop_assert!(ratio(&gate_all(&xs)) >= ratio(&xs) * (1.0 - 1e-12));
    }

    #[test]
    fn vector_forward_is_elementwise(xs in prop::collection::vec(-10.0f64..10.0, 1..32)) {
        let out = gate_all(&xs);
        for (x, y) in xs.iter().zip(&out) {
            prop_assert_eq!(*y, gate(*x));
        }
    }
}

#[test]
fn output_ratio_claim_has_a_counterexample() {
    // Inputs 0.5 and 1 have ratio 2; outputs 0.5 ln 1.5 and ln 2 have ratio ~3.42.
    let xs = [0.5, 1.0];
    let out = gate_all(&xs);
    assert!(ratio(&out) > 3.4 && ratio(&xs) == 2.0);
}

#[test]
fn fixed_point_and_threshold_grid() {
    assert!((gate(FIXED_POINT) - FIXED_POINT).abs() <= 1e-12);
    for i in 1..=1000 {
        let below = FIXED_POINT * i as f64 / 1001.0;
        assert!(gate(below) < below, "{below}");
        let above = FIXED_POINT + 10.0 * i as f64 / 1000.0;
        assert!(gate(above) > above);
    }
}

#[test]
fn analytic_backward_matches_differences_on_positives() {
    let eps = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let x = 0.01 + (10.0 - 0.01) * (i as f64 + 1.0) / 1000.0;
        let numeric = (gate(x + eps) - gate(x - eps)) / (2.0 * eps);
        let analytic = log_attention_derivative(x, GradientConvention::Analytic);
        worst = worst.max((numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8));
    }
    assert!(worst <= 1e-6, "worst relative error {worst:e}");
}

#[test]
fn analytic_backward_is_exactly_zero_on_negatives() {
    let xs: Vec<f64> = (0..1000).map(|i| -10.0 + (10.0 - 0.01) * i as f64 / 999.0).collect();
    let f: Tensor = Tensor::from_f64(&[xs.len()], &xs).unwrap();
    let up = Tensor::from_f64(&[xs.len()], &vec![1.0; xs.len()]).unwrap();
    let g = log_attention_backward(&f, &up, GradientConvention::Analytic).unwrap();
    assert!(g.data().iter().all(|&v| v == 0.0));
}

#[test]
fn reciprocal_variant_follows_its_printed_form() {
    for i in 0..=200 {
        let f = -10.0 + 0.1 * i as f64;
        let want = if f >= 0.0 {
            (f + 1.0).ln() + 1.0 / (f + 1.0)
        } else {
            1.0
        };
        let got = log_attention_derivative(f, GradientConvention::ReciprocalVariant);
        assert!((got - want).abs() <= 1e-15, "{f}: {got} vs {want}");
    }
}

#[test]
fn identity_gate_passes_values_through() {
    let t: Tensor = Tensor::from_f64(&[2, 2, 2], &[-3.0, -0.5, 0.0, 0.25, 1.0, 2.0, 5.0, 40.0]).unwrap();
    assert_eq!(apply_gate(AttentionKind::Identity, &t).unwrap(), t);
    let logged = apply_gate(AttentionKind::LogAttention, &t).unwrap();
    assert_eq!(logged, log_attention_forward(&t).unwrap());
}
