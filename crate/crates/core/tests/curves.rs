use netcalc_core::curves::{
    conv_rate_latency, deconv_delay, deconv_tb_rl, h_dev, h_dev_tb, min_concave, sum, v_dev,
    ConcavePl, CurveError, PureDelay, RateLatency, TokenBucket,
};
use proptest::prelude::*;

const TOL: f64 = 1e-9;

fn assert_close(actual: f64, expected: f64, rel: f64) {
    assert!(
        (actual - expected).abs() <= rel * expected.abs().max(1e-12),
        "got {actual}, expected {expected}"
    );
}

/// Sample grid covering 0, sub-millisecond and multi-second scales.
fn grid() -> Vec<f64> {
    let mut ts = vec![0.0];
    for k in 1..=60 {
        ts.push(1e-6 * 1.4f64.powi(k));
    }
    ts
}

#[test]
fn token_bucket_value() {
    let tb = TokenBucket::new(1000.0, 1e6);
    assert_eq!(tb.value(0.0), 0.0);
    assert_eq!(tb.value(-1.0), 0.0);
    assert_close(tb.value(2.0), 1000.0 + 2e6, TOL);
}

#[test]
fn rate_latency_value() {
    let rl = RateLatency::new(1e7, 0.001);
    assert_eq!(rl.value(0.0005), 0.0);
    assert_eq!(rl.value(0.001), 0.0);
    assert_close(rl.value(0.002), 1e4, TOL);
}

#[test]
fn pure_delay_value() {
    let d = PureDelay::new(0.5);
    assert_eq!(d.value(0.4), 0.0);
    assert_eq!(d.value(0.5), 0.0);
    assert_eq!(d.value(0.6), f64::INFINITY);
}

#[test]
fn sum_matches_pointwise_on_grid() {
    let curves = vec![
        ConcavePl::from_token_bucket(TokenBucket::new(1000.0, 1e6)),
        ConcavePl::from_token_bucket(TokenBucket::new(500.0, 3e6)),
        min_concave(
            &ConcavePl::from_token_bucket(TokenBucket::new(0.0, 1e7)),
            &ConcavePl::from_token_bucket(TokenBucket::new(4000.0, 2e6)),
        ),
    ];
    let s = sum(&curves);
    for t in grid() {
        let want: f64 = curves.iter().map(|c| c.value(t)).sum();
        assert_close(s.value(t), want, TOL);
    }
}

#[test]
fn min_matches_pointwise_on_grid() {
    let a = ConcavePl::from_token_bucket(TokenBucket::new(0.0, 1e7));
    let b = ConcavePl::from_token_bucket(TokenBucket::new(3000.0, 1e6));
    let m = min_concave(&a, &b);
    for t in grid() {
        assert_close(m.value(t), a.value(t).min(b.value(t)), TOL);
    }
    // The crossing at 1e7 t = 3000 + 1e6 t -> t = 1/3000 becomes a breakpoint.
    assert!(m.breakpoints().iter().any(|&(t, _)| (t - 1.0 / 3000.0).abs() < 1e-12));
}

#[test]
fn min_of_shaped_aggregates_on_grid() {
    // min of two genuinely piecewise curves exercises crossing insertion.
    let a = min_concave(
        &ConcavePl::from_token_bucket(TokenBucket::new(100.0, 9e6)),
        &ConcavePl::from_token_bucket(TokenBucket::new(2500.0, 2e6)),
    );
    let b = min_concave(
        &ConcavePl::from_token_bucket(TokenBucket::new(0.0, 1.2e7)),
        &ConcavePl::from_token_bucket(TokenBucket::new(1800.0, 4e6)),
    );
    let m = min_concave(&a, &b);
    for t in grid() {
        assert_close(m.value(t), a.value(t).min(b.value(t)), TOL);
    }
}

#[test]
fn convolution_of_rate_latency_curves() {
    let c = conv_rate_latency(RateLatency::new(1e7, 0.001), RateLatency::new(4e6, 0.002));
    assert_close(c.rate, 4e6, TOL);
    assert_close(c.latency, 0.003, TOL);
}

#[test]
fn deconvolution_by_rate_latency() {
    // gamma_{b,r} deconvolved by beta_{R,T} is gamma_{b + rT, r} when r <= R.
    let out = deconv_tb_rl(TokenBucket::new(1000.0, 1e6), RateLatency::new(1e7, 0.001)).unwrap();
    assert_close(out.burst, 2000.0, TOL);
    assert_close(out.rate, 1e6, TOL);
    let err = deconv_tb_rl(TokenBucket::new(1000.0, 1e7), RateLatency::new(1e7, 0.001));
    assert!(matches!(err, Err(CurveError::DeconvolutionUnbounded { .. })));
}

#[test]
fn deconvolution_by_pure_delay() {
    let out = deconv_delay(TokenBucket::new(1000.0, 1e6), 0.002);
    assert_close(out.burst, 3000.0, TOL);
    assert_close(out.rate, 1e6, TOL);
}

#[test]
fn horizontal_deviation_token_bucket() {
    // h(gamma_{b,r}, beta_{R,T}) = T + b/R when r <= R.
    let h = h_dev_tb(TokenBucket::new(1000.0, 1e6), RateLatency::new(1e7, 0.001));
    assert_close(h, 0.0011, TOL);
    let inf = h_dev_tb(TokenBucket::new(1000.0, 2e7), RateLatency::new(1e7, 0.001));
    assert_eq!(inf, f64::INFINITY);
}

/// Independent oracle: for piecewise-linear alpha and rate-latency beta the
/// deviation t -> T + alpha(t)/R - t is piecewise linear, so its maximum is
/// attained at a breakpoint of alpha (or in the limit t -> infinity).
fn h_dev_oracle(alpha: &ConcavePl, beta: RateLatency) -> f64 {
    if alpha.tail_slope() > beta.rate {
        return f64::INFINITY;
    }
    let mut best = 0.0f64;
    for &(t, y) in alpha.breakpoints() {
        best = best.max(beta.latency + y / beta.rate - t);
    }
    best.max(0.0)
}

#[test]
fn horizontal_deviation_concave_curve() {
    let beta = RateLatency::new(1e7, 0.001);
    let alpha = min_concave(
        &ConcavePl::from_token_bucket(TokenBucket::new(200.0, 2e7)),
        &ConcavePl::from_token_bucket(TokenBucket::new(5000.0, 3e6)),
    );
    assert_close(h_dev(&alpha, beta), h_dev_oracle(&alpha, beta), TOL);
}

#[test]
fn vertical_deviation_token_bucket() {
    // v(gamma_{b,r}, beta_{R,T}) = b + rT when r <= R.
    let v = v_dev(TokenBucket::new(1000.0, 1e6), RateLatency::new(1e7, 0.001));
    assert_close(v, 2000.0, TOL);
}

fn arb_tb() -> impl Strategy<Value = TokenBucket> {
    (0.0..5000.0f64, 1e5..2e7f64).prop_map(|(b, r)| TokenBucket::new(b, r))
}

fn arb_curve() -> impl Strategy<Value = ConcavePl> {
    prop::collection::vec(arb_tb(), 1..5).prop_map(|tbs| {
        let mut c = ConcavePl::from_token_bucket(tbs[0]);
        for tb in &tbs[1..] {
            c = min_concave(&c, &ConcavePl::from_token_bucket(*tb));
        }
        c
    })
}

proptest! {
    #[test]
    fn prop_min_is_pointwise_min(a in arb_curve(), b in arb_curve(), t in 0.0..10.0f64) {
        let m = min_concave(&a, &b);
        let want = a.value(t).min(b.value(t));
        prop_assert!((m.value(t) - want).abs() <= 1e-9 * want.abs().max(1.0));
    }

    #[test]
    fn prop_sum_is_pointwise_sum(a in arb_curve(), b in arb_curve(), t in 0.0..10.0f64) {
        let s = sum(&[a.clone(), b.clone()]);
        let want = a.value(t) + b.value(t);
        prop_assert!((s.value(t) - want).abs() <= 1e-9 * want.abs().max(1.0));
    }

    #[test]
    fn prop_curves_concave_on_midpoints(a in arb_curve(), b in arb_curve(),
                                        t1 in 0.0..10.0f64, t2 in 0.0..10.0f64) {
        let m = min_concave(&a, &b);
        let mid = 0.5 * (t1 + t2);
        let chord = 0.5 * (m.value(t1) + m.value(t2));
        prop_assert!(m.value(mid) >= chord - 1e-6);
    }

    #[test]
    fn prop_h_dev_matches_token_bucket_formula(tb in arb_tb()) {
        let beta = RateLatency::new(1e7, 0.001);
        let direct = h_dev_tb(tb, beta);
        let via_curve = h_dev(&ConcavePl::from_token_bucket(tb), beta);
        if direct.is_finite() {
            prop_assert!((direct - via_curve).abs() <= 1e-9 * direct.max(1.0));
        } else {
            prop_assert!(via_curve.is_infinite());
        }
    }

    #[test]
    fn prop_h_dev_matches_breakpoint_oracle(a in arb_curve(), b in arb_curve()) {
        let beta = RateLatency::new(8e6, 0.0015);
        let alpha = min_concave(&a, &b);
        let got = h_dev(&alpha, beta);
        let want = h_dev_oracle(&alpha, beta);
        if want.is_finite() {
            prop_assert!((got - want).abs() <= 1e-9 * want.abs().max(1e-9));
        } else {
            prop_assert!(got.is_infinite());
        }
    }
}
