use beta3_irt::icc::*;
use proptest::prelude::*;

fn ab(theta: f64) -> Ability {
    Ability::new(theta).unwrap()
}

fn df(delta: f64) -> Difficulty {
    Difficulty::new(delta).unwrap()
}

fn disc(a: f64) -> Discrimination {
    Discrimination::new(a).unwrap()
}

// log-odds of (0, 1) values that stay well inside the admissible range
fn unit() -> impl Strategy<Value = f64> {
    (-12.0..12.0f64).prop_map(logistic)
}

// same range snapped to a 2^-40 grid, where 1 - x is exact
fn mirrorable() -> impl Strategy<Value = f64> {
    let scale = (1u64 << 40) as f64;
    unit().prop_map(move |x| (x * scale).round().clamp(1.0, scale - 1.0) / scale)
}

proptest! {
    #[test]
    fn midpoint_is_one_half(x in unit(), a in -20.0..20.0f64) {
        let e = icc_beta3(ab(x), df(x), disc(a));
        prop_assert!((e - 0.5).abs() < 1e-12);
    }

    #[test]
    fn expectation_matches_shape(t in unit(), d in unit(), a in -8.0..8.0f64) {
        let s = beta_shape(ab(t), df(d), disc(a));
        let e = icc_beta3(ab(t), df(d), disc(a));
        prop_assert!((e - s.mean()).abs() <= 1e-12 * e.max(s.mean()), "{} vs {}", e, s.mean());
    }

    #[test]
    fn point_symmetry(t in mirrorable(), d in mirrorable(), a in -20.0..20.0f64) {
        let e = icc_beta3(ab(t), df(d), disc(a)) + icc_beta3(ab(1.0 - t), df(1.0 - d), disc(a));
        prop_assert!((e - 1.0).abs() < 1e-12);
    }

    #[test]
    fn slope_at_difficulty(u in -4.6..4.6f64, a in -5.0..5.0f64) {
        prop_assume!(a.abs() > 1e-3);
        let d = logistic(u);
        let h = 1e-6;
        let fd = (icc_beta3(ab(d + h), df(d), disc(a)) - icc_beta3(ab(d - h), df(d), disc(a))) / (2.0 * h);
        let exact = icc_slope_at_difficulty(df(d), disc(a));
        prop_assert!((fd - exact).abs() <= 1e-4 * exact.abs(), "{} vs {}", fd, exact);
    }

    #[test]
    fn two_pl_slope_is_quarter_discrimination(x in -50.0..50.0f64, a in -5.0..5.0f64) {
        prop_assume!(a.abs() > 1e-3);
        let h = 1e-6;
        let fd = (icc_2plnd(x + h, x, disc(a)) - icc_2plnd(x - h, x, disc(a))) / (2.0 * h);
        prop_assert!((fd - a / 4.0).abs() <= 1e-4 * (a / 4.0).abs());
    }

    #[test]
    fn inversion_round_trip(ud in -10.0..10.0f64, x in -10.0..10.0f64, mag in 0.1..5.0f64, neg: bool) {
        // θ is placed so that |a (logit θ - logit δ)| = |x| ≤ 10
        let a = if neg { -mag } else { mag };
        let ut = ud + x / a;
        prop_assume!(ut.abs() < 13.0);
        let (t, d) = (logistic(ut), logistic(ud));
        let p = icc_beta3(ab(t), df(d), disc(a));
        let back = ability_from_expected_response(p, df(d), disc(a)).unwrap().value();
        prop_assert!((back - t).abs() < 1e-10, "{} vs {}", back, t);
    }
}

#[test]
fn monotone_in_ability() {
    let grid: Vec<f64> = (1..=1000).map(|k| k as f64 / 1001.0).collect();
    for &(d, a) in &[(0.2, 0.3), (0.5, 1.0), (0.9, 4.0), (0.3, -0.5), (0.6, -2.0)] {
        let e: Vec<f64> = grid.iter().map(|&t| icc_beta3(ab(t), df(d), disc(a))).collect();
        for w in e.windows(2) {
            if a > 0.0 {
                assert!(w[1] > w[0], "d={d} a={a}");
            } else {
                assert!(w[1] < w[0], "d={d} a={a}");
            }
        }
    }
}

fn trapezoid(alpha: f64, beta: f64) -> f64 {
    let shape = BetaShape::new(alpha, beta).unwrap();
    let eps: f64 = 1e-6;
    // geometric spacing near both ends resolves the integrable spikes
    let n = 4000;
    let half: Vec<f64> = (0..=n)
        .map(|k| eps * (0.5 / eps).powf(k as f64 / n as f64))
        .collect();
    let mut xs = half.clone();
    xs.extend(half.iter().rev().skip(1).map(|x| 1.0 - x));
    xs.windows(2)
        .map(|w| {
            let f0 = beta_log_density(w[0], shape).unwrap().exp();
            let f1 = beta_log_density(w[1], shape).unwrap().exp();
            0.5 * (f0 + f1) * (w[1] - w[0])
        })
        .sum()
}

#[test]
fn density_integrates_to_one() {
    for &alpha in &[0.5, 0.8, 1.0, 2.0, 3.7, 5.0] {
        for &beta in &[0.5, 1.0, 1.5, 4.2, 5.0] {
            let area = trapezoid(alpha, beta);
            assert!((0.99..=1.001).contains(&area), "α={alpha} β={beta}: {area}");
        }
    }
}

#[test]
fn regime_boundaries_are_exact() {
    let cases = [
        (2.0, IccRegime::Sigmoid),
        (1.0, IccRegime::Parabolic),
        (0.5, IccRegime::AntiSigmoid),
        (0.0, IccRegime::Flat),
        (-0.5, IccRegime::DecreasingAntiSigmoid),
        (-1.0, IccRegime::DecreasingParabolic),
        (-2.0, IccRegime::DecreasingSigmoid),
    ];
    for (a, r) in cases {
        assert_eq!(icc_regime(disc(a)), r);
    }
    assert_eq!(icc_regime(disc(1.0 + f64::EPSILON)), IccRegime::Sigmoid);
}
