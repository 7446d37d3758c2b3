//! Property suites for the N-function calculus: conjugation against the
//! Legendre-transform oracle, shifted-function laws, growth-constant bands,
//! and the Young-inequality calibration protocol.

mod common;

use philab::nfunction::{
    calibrate_young_constant, check_young, estimate_delta2, estimate_growth_constants,
    make_prototype, shifted_phi, shifted_phi_prime, LogGrid, PrototypeKind, PrototypeSpec,
};
use philab::numeric::log_points;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn broad_family() -> Vec<PrototypeSpec> {
    vec![
        PrototypeSpec::new(PrototypeKind::A1, 1.5, 0.0),
        PrototypeSpec::new(PrototypeKind::A1, 3.0, 0.1),
        PrototypeSpec::new(PrototypeKind::A2, 1.5, 1.0),
        PrototypeSpec::new(PrototypeKind::A2, 2.0, 0.0),
        PrototypeSpec::new(PrototypeKind::A2, 3.0, 0.1),
        PrototypeSpec::new(PrototypeKind::A3, 2.0, 0.0),
        PrototypeSpec::new(PrototypeKind::A3, 3.0, 1.0),
    ]
}

#[test]
fn closed_forms_match_quadrature_everywhere() {
    let grid = log_points(1e-6, 1e6, 64);
    for spec in broad_family() {
        let phi = spec.build().unwrap();
        if !phi.has_closed_form() {
            continue;
        }
        for &t in &grid {
            let closed = phi.phi(t);
            let quad = phi.phi_quadrature(t);
            assert!(
                (closed - quad).abs() <= 1e-8 * (1.0 + closed.abs()),
                "{}: closed {closed} vs quadrature {quad} at t = {t}",
                spec.label()
            );
        }
    }
}

#[test]
fn log_prototype_value_against_gauss_oracle() {
    // phi3(p=2, mu=0) has no closed form; pin phi(1) = ∫_0^1 s ln(e+s) ds
    // against an independent fixed-order rule.
    let phi = make_prototype(PrototypeKind::A3, 2.0, 0.0).unwrap();
    let oracle = common::gl_integrate(|s| s * (std::f64::consts::E + s).ln(), 0.0, 1.0, 48);
    assert!((phi.phi(1.0) - oracle).abs() <= 1e-9 * (1.0 + oracle));
    // Frozen value from the oracle.
    assert!((oracle - 0.6084176666297).abs() < 1e-12);
}

#[test]
fn conjugate_matches_power_law_and_legendre_oracle() {
    for p in [1.5f64, 3.0] {
        let spec = make_prototype(PrototypeKind::A1, p, 0.0).unwrap();
        let q = p / (p - 1.0);
        for &t in &log_points(1e-2, 1e2, 25) {
            let analytic = t.powf(q) / q;
            let computed = spec.conjugate_at(t).unwrap();
            assert!(
                (computed - analytic).abs() <= 1e-5 * analytic,
                "p = {p}, t = {t}: {computed} vs {analytic}"
            );
            let s_star = t.powf(1.0 / (p - 1.0));
            let oracle = common::legendre_sup(|s| spec.phi(s), t, s_star);
            assert!(
                (oracle - analytic).abs() <= 1e-5 * analytic,
                "oracle off at p = {p}, t = {t}"
            );
            assert!((computed - oracle).abs() <= 2e-5 * analytic);
        }
    }
}

#[test]
fn conjugate_involution_recovers_phi() {
    for spec in [
        PrototypeSpec::new(PrototypeKind::A1, 3.0, 0.0),
        PrototypeSpec::new(PrototypeKind::A2, 1.5, 1.0),
        PrototypeSpec::new(PrototypeKind::A3, 2.0, 0.0),
    ] {
        let phi = spec.build().unwrap();
        let double = phi.conjugate().conjugate();
        for &t in &log_points(1e-2, 1e2, 12) {
            let expected = phi.phi(t);
            let got = double.phi(t);
            assert!(
                (got - expected).abs() <= 1e-5 * expected,
                "{}: (phi*)*({t}) = {got} vs {expected}",
                spec.label()
            );
        }
    }
}

#[test]
fn derivative_phi_ratio_stays_in_boyd_band() {
    // t phi'(t) / phi(t) lies in [1, q2]: the lower bound is monotonicity of
    // phi', the upper bound is the sampled polynomial envelope. The envelope
    // averages over scale factors >= 2, so the instantaneous ratio may poke
    // slightly past it; a 2% band covers that smoothing.
    let grid = LogGrid::default_constants_grid();
    for spec in broad_family() {
        let phi = spec.build().unwrap();
        let gc = estimate_growth_constants(&phi, &grid).unwrap();
        for &t in &log_points(1e-4, 1e4, 200) {
            let ratio = t * phi.phi_prime(t) / phi.phi(t);
            assert!(
                ratio >= 1.0 - 1e-9 && ratio <= gc.q2 * 1.02,
                "{}: ratio {ratio} outside [1, {}] at t = {t}",
                spec.label(),
                gc.q2
            );
        }
    }
}

#[test]
fn conjugate_composition_band_is_grid_stable() {
    // phi*(phi'(t)) / phi(t) is bounded above and below; the fitted band must
    // move by no more than 10% under grid doubling.
    for spec in [
        PrototypeSpec::new(PrototypeKind::A1, 3.0, 0.0),
        PrototypeSpec::new(PrototypeKind::A2, 1.5, 1.0),
        PrototypeSpec::new(PrototypeKind::A3, 2.0, 0.5),
    ] {
        let phi = spec.build().unwrap();
        let fit = |count: usize| -> f64 {
            let mut k: f64 = 1.0;
            for &t in &log_points(1e-3, 1e3, count) {
                let ratio = phi.conjugate_at(phi.phi_prime(t)).unwrap() / phi.phi(t);
                assert!(ratio.is_finite() && ratio > 0.0);
                k = k.max(ratio).max(1.0 / ratio);
            }
            k
        };
        let coarse = fit(60);
        let fine = fit(120);
        assert!(
            (fine / coarse - 1.0).abs() <= 0.10,
            "{}: band moved {coarse} -> {fine}",
            spec.label()
        );
    }
}

#[test]
fn doubling_constant_respects_growth_bound() {
    // Delta2(phi) <= 2^(1 + g_hi), the direct integration bound; the
    // conjugate's doubling constant is finite as well.
    let grid = LogGrid::default_constants_grid();
    for spec in broad_family() {
        let phi = spec.build().unwrap();
        let gc = estimate_growth_constants(&phi, &grid).unwrap();
        let bound = 2f64.powf(1.0 + gc.g_hi);
        assert!(
            gc.delta2 <= bound * (1.0 + 1e-9),
            "{}: delta2 {} > bound {bound}",
            spec.label(),
            gc.delta2
        );
        assert!(gc.delta2.is_finite() && gc.delta2 > 1.0);
        assert!(gc.q1 > 1.0 && gc.q1 <= gc.q2, "{}", spec.label());
    }
    // Conjugate doubling constant on a lighter grid (every evaluation is an
    // inversion plus quadrature).
    for spec in [
        PrototypeSpec::new(PrototypeKind::A1, 3.0, 0.0),
        PrototypeSpec::new(PrototypeKind::A2, 1.5, 1.0),
    ] {
        let conj = spec.build().unwrap().conjugate();
        let d2 = estimate_delta2(&conj, &LogGrid::new(1e-3, 1e3, 40)).unwrap();
        assert!(d2.is_finite() && d2 > 1.0, "{}: {d2}", spec.label());
    }
}

#[test]
fn shift_family_growth_constants_are_uniform() {
    // The shifted ratio t phi_a''/phi_a' is a convex combination of the base
    // ratio at a+t and 1, so the uniformity constant never exceeds the base.
    let grid = LogGrid::default_constants_grid();
    for spec in [
        PrototypeSpec::new(PrototypeKind::A1, 3.0, 0.1),
        PrototypeSpec::new(PrototypeKind::A2, 1.5, 1.0),
        PrototypeSpec::new(PrototypeKind::A2, 3.0, 0.0),
        PrototypeSpec::new(PrototypeKind::A3, 2.0, 0.0),
    ] {
        let phi = spec.build().unwrap();
        let base = estimate_growth_constants(&phi, &grid).unwrap();
        let base_g = base.g_uniformity();
        let base_doubling_cap = 2f64.powf(1.0 + base.g_hi.max(1.0));
        for a in [0.0, 0.1, 1.0, 10.0, 100.0] {
            let shifted = phi.shifted(a);
            let gc = estimate_growth_constants(&shifted, &grid).unwrap();
            assert!(
                gc.g_uniformity() <= base_g * (1.0 + 1e-6),
                "{} shift {a}: G {} > base {base_g}",
                spec.label(),
                gc.g_uniformity()
            );
            assert!(
                gc.delta2 <= base_doubling_cap * (1.0 + 1e-9),
                "{} shift {a}: delta2 {} above cap {base_doubling_cap}",
                spec.label(),
                gc.delta2
            );
        }
    }
}

#[test]
fn shift_ordering_for_almost_increasing_curvature() {
    // a <= b implies phi_a <= K phi_b; fit K on a coarse lattice, validate
    // with 25% headroom on seeded random triples.
    let shifts = [0.0, 0.1, 0.5, 1.0, 2.0, 10.0];
    for spec in [
        PrototypeSpec::new(PrototypeKind::A1, 3.0, 0.1),
        PrototypeSpec::new(PrototypeKind::A2, 2.0, 0.0),
        PrototypeSpec::new(PrototypeKind::A2, 3.0, 1.0),
        PrototypeSpec::new(PrototypeKind::A3, 2.0, 0.0),
    ] {
        let phi = spec.build().unwrap();
        assert!(phi.phi_second_almost_increasing());
        let mut k: f64 = 1.0;
        for (i, &a) in shifts.iter().enumerate() {
            for &b in &shifts[i..] {
                for &t in &log_points(1e-2, 1e2, 9) {
                    let num = shifted_phi(&phi, a, t);
                    let den = shifted_phi(&phi, b, t);
                    if den > 0.0 {
                        k = k.max(num / den);
                    }
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(90 + spec.p as u64);
        for _ in 0..300 {
            let a = rng.gen_range(0.0..5.0f64);
            let b = a + rng.gen_range(0.0..5.0f64);
            let t = (rng.gen_range(-4.0..4.0f64)).exp();
            let num = shifted_phi(&phi, a, t);
            let den = shifted_phi(&phi, b, t);
            assert!(
                num <= 1.25 * k * den + 1e-300,
                "{}: phi_{a}({t}) = {num} vs {k} * phi_{b}({t}) = {den}",
                spec.label()
            );
        }
    }
}

#[test]
fn shift_scaling_is_quadratic_in_lambda() {
    // phi_s(lambda s) <= lambda^2 K phi(s) for lambda in [0, 1].
    for spec in [
        PrototypeSpec::new(PrototypeKind::A1, 1.5, 0.0),
        PrototypeSpec::new(PrototypeKind::A2, 3.0, 0.1),
        PrototypeSpec::new(PrototypeKind::A3, 2.5, 1.0),
    ] {
        let phi = spec.build().unwrap();
        let mut k: f64 = 1.0;
        for &s in &log_points(1e-2, 1e2, 9) {
            for lam in [0.05, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0] {
                let lhs = shifted_phi(&phi, s, lam * s);
                k = k.max(lhs / (lam * lam * phi.phi(s)));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..300 {
            let s = (rng.gen_range(-4.0..4.0f64)).exp();
            let lam: f64 = rng.gen_range(0.0..1.0);
            let lhs = shifted_phi(&phi, s, lam * s);
            assert!(
                lhs <= 1.25 * k * lam * lam * phi.phi(s) + 1e-300,
                "{}: s = {s}, lambda = {lam}",
                spec.label()
            );
        }
    }
}

#[test]
fn square_root_second_derivative_equivalence() {
    // phibar'' / sqrt(phi'') = (1 + x) / (2 sqrt(x)) at x = t phi''/phi', so
    // it lies in [1, max over the sampled growth band].
    let grid = LogGrid::default_constants_grid();
    for spec in broad_family() {
        let phi = spec.build().unwrap();
        let gc = estimate_growth_constants(&phi, &grid).unwrap();
        let envelope = |x: f64| (1.0 + x) / (2.0 * x.sqrt());
        let bound = envelope(gc.g_lo).max(envelope(gc.g_hi));
        let bar = phi.square_root();
        for &t in &log_points(1e-4, 1e4, 120) {
            let ratio = bar.phi_second(t) / phi.phi_second(t).sqrt();
            assert!(
                ratio >= 1.0 - 1e-9 && ratio <= bound * (1.0 + 1e-9),
                "{}: ratio {ratio} at t = {t}, bound {bound}",
                spec.label()
            );
        }
    }
}

#[test]
fn young_constant_calibrates_and_validates() {
    let grid = LogGrid::new(1e-4, 1e4, 40);
    for spec in [
        PrototypeSpec::new(PrototypeKind::A1, 3.0, 0.0),
        PrototypeSpec::new(PrototypeKind::A2, 1.5, 1.0),
        PrototypeSpec::new(PrototypeKind::A3, 2.0, 0.0),
    ] {
        let phi = spec.build().unwrap();
        for delta in [0.25, 1.0] {
            let c = calibrate_young_constant(&phi, delta, &grid).unwrap();
            assert!(c.is_finite() && c >= 0.0);
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + (delta * 4.0) as u64);
            for _ in 0..200 {
                let a = (rng.gen_range(-8.0..8.0f64)).exp();
                let b = (rng.gen_range(-8.0..8.0f64)).exp();
                let check = check_young(&phi, a, b, delta, 1.25 * c).unwrap();
                assert!(
                    check.pass,
                    "{}: delta = {delta}, a = {a}, b = {b}, slack = {}",
                    spec.label(),
                    check.slack
                );
            }
        }
    }
}

#[test]
fn shifted_prime_closed_form_consistency() {
    // The closed-form shifted derivative matches the derivative of the
    // shifted object and degenerates to phi' at a = 0.
    let phi = make_prototype(PrototypeKind::A2, 3.0, 0.5).unwrap();
    for a in [0.0, 0.3, 2.0] {
        let obj = phi.shifted(a);
        for &t in &[0.1, 1.0, 7.0] {
            assert_eq!(shifted_phi_prime(&phi, a, t), obj.phi_prime(t));
        }
    }
}

fn arbitrary_prototype() -> impl Strategy<Value = PrototypeSpec> {
    (0..3usize, 1.1f64..4.0, 0.0f64..2.0).prop_map(|(k, p, mu)| {
        let kind = match k {
            0 => PrototypeKind::A1,
            1 => PrototypeKind::A2,
            _ => PrototypeKind::A3,
        };
        let p = if kind == PrototypeKind::A3 {
            p.max(2.0)
        } else {
            p
        };
        PrototypeSpec::new(kind, p, mu)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn phi_prime_is_monotone(spec in arbitrary_prototype(), s in 1e-6f64..1e3, factor in 1.0f64..100.0) {
        let phi = spec.build().unwrap();
        let t = s * factor;
        prop_assert!(phi.phi_prime(s) <= phi.phi_prime(t) * (1.0 + 1e-12));
    }

    #[test]
    fn shifted_value_is_dominated_by_base(spec in arbitrary_prototype(), a in 0.0f64..10.0, t in 1e-3f64..1e2) {
        // The shift integrand phi'(a+s) s/(a+s) never exceeds phi'(a+s), so
        // phi_a(t) <= phi(a+t) - phi(a).
        let phi = spec.build().unwrap();
        let lhs = shifted_phi(&phi, a, t);
        let ub = phi.phi(a + t) - phi.phi(a);
        prop_assert!(lhs <= ub * (1.0 + 1e-7) + 1e-12, "{lhs} vs {ub}");
    }
}
