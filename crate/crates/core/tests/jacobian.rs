//! Analytic model gradients against Richardson-extrapolated central differences.

use proptest::prelude::*;
use sivac_core::inference::models::{G2Binned, Lorentzian, PoissonPmf, Saturation, G2};
use sivac_core::inference::Model;

fn central(model: &dyn Model, x: f64, p: &[f64], k: usize, h: f64) -> f64 {
    let mut up = p.to_vec();
    let mut dn = p.to_vec();
    up[k] += h;
    dn[k] -= h;
    (model.eval(x, &up) - model.eval(x, &dn)) / (2.0 * h)
}

fn check(model: &dyn Model, x: f64, p: &[f64]) -> std::result::Result<(), TestCaseError> {
    let mut g = vec![0.0; p.len()];
    model.gradient(x, p, &mut g);
    let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for k in 0..p.len() {
        let h = 1e-3 * p[k].abs().max(1e-2);
        let fd = (4.0 * central(model, x, p, k, h / 2.0) - central(model, x, p, k, h)) / 3.0;
        // the difference quotient itself carries rounding error ~ ε·|f|/h
        let roundoff = 64.0 * f64::EPSILON * model.eval(x, p).abs() / h;
        let tol = 1e-6 * g[k].abs().max(1e-3 * scale).max(1e-300) + roundoff;
        prop_assert!(
            (g[k] - fd).abs() <= tol,
            "{} ∂/∂{}: analytic {} vs difference {} at x={x}, p={p:?}",
            std::any::type_name_of_val(model),
            model.names()[k],
            g[k],
            fd
        );
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn lorentzian(x in 0.0..150.0f64, f0 in 50.0..90.0f64, w in 5.0..30.0f64, c in -0.01..0.01f64, base in -1.0..1.0f64) {
        prop_assume!(c.abs() > 1e-4);
        check(&Lorentzian, x, &[f0, w, c, base])?;
    }

    #[test]
    fn saturation(x in 0.01..5.0f64, is in 1.0..50.0f64, ps in 0.05..2.0f64) {
        check(&Saturation, x, &[is, ps])?;
    }

    #[test]
    fn g2_point(x in -1000.0..1000.0f64, a in 0.0..1.0f64, b in 0.0..1.0f64, t1 in 5.0..60.0f64, t2 in 100.0..1000.0f64) {
        check(&G2, x, &[a, b, t1, t2])?;
    }

    #[test]
    fn g2_binned(k in -100i32..100, w in 0.5..10.0f64, a in 0.0..1.0f64, b in 0.0..1.0f64, t1 in 5.0..60.0f64, t2 in 100.0..1000.0f64) {
        let x = (k as f64 + 0.5) * w;
        check(&G2Binned { bin_width_ns: w }, x, &[a, b, t1, t2])?;
        // a bin straddling zero
        check(&G2Binned { bin_width_ns: w }, 0.3 * w, &[a, b, t1, t2])?;
    }

    #[test]
    fn poisson_pmf(k in 0u32..15, lambda in 0.05..10.0f64) {
        check(&PoissonPmf, k as f64, &[lambda])?;
    }
}

#[test]
fn g2_far_tail_with_zero_amplitudes() {
    // ∂/∂a ≈ −1e-9 here, so the difference quotient is dominated by rounding
    check(&G2, 949.99382408989, &[0.0, 0.0, 45.76953626620717, 100.0]).unwrap();
}
