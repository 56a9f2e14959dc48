//! Min-plus curve algebra on the closed families used by the analyzers:
//! token buckets, rate-latency curves, pure delays, and concave piecewise
//! linear curves (finite sums and minima of token buckets).
//!
//! Units are bits and seconds throughout. `f64::INFINITY` is the distinguished
//! "unbounded" value and propagates absorbingly through all operations.

use thiserror::Error;

/// Tolerance for merging duplicate or collinear breakpoints.
const CROSS_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum CurveError {
    /// Deconvolution of an arrival rate at or above the service rate.
    #[error("deconvolution unbounded: arrival rate {rate} >= service rate {service_rate}")]
    DeconvolutionUnbounded { rate: f64, service_rate: f64 },
}

/// Token-bucket arrival curve γ_{b,r}: value 0 at t = 0, b + r·t for t > 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TokenBucket {
    /// Burst b in bits (≥ 0).
    pub burst: f64,
    /// Long-term rate r in bits/second (≥ 0).
    pub rate: f64,
}

impl TokenBucket {
    pub fn new(burst: f64, rate: f64) -> Self {
        assert!(burst >= 0.0 && burst.is_finite(), "burst must be finite and >= 0");
        assert!(rate >= 0.0 && rate.is_finite(), "rate must be finite and >= 0");
        TokenBucket { burst, rate }
    }

    pub fn value(&self, t: f64) -> f64 {
        if t <= 0.0 {
            0.0
        } else {
            self.burst + self.rate * t
        }
    }
}

/// Rate-latency service curve β_{R,T}: value R·max(0, t − T).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateLatency {
    /// Service rate R in bits/second (> 0).
    pub rate: f64,
    /// Latency T in seconds (≥ 0).
    pub latency: f64,
}

impl RateLatency {
    pub fn new(rate: f64, latency: f64) -> Self {
        assert!(rate > 0.0 && rate.is_finite(), "rate must be finite and > 0");
        assert!(latency >= 0.0 && latency.is_finite(), "latency must be finite and >= 0");
        RateLatency { rate, latency }
    }

    pub fn value(&self, t: f64) -> f64 {
        self.rate * (t - self.latency).max(0.0)
    }
}

/// Pure delay service curve δ_d: 0 up to d, +∞ after.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PureDelay {
    /// Delay d in seconds (≥ 0).
    pub delay: f64,
}

impl PureDelay {
    pub fn new(delay: f64) -> Self {
        assert!(delay >= 0.0, "delay must be >= 0");
        PureDelay { delay }
    }

    pub fn value(&self, t: f64) -> f64 {
        if t <= self.delay {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Concave, nondecreasing, piecewise-linear curve with value 0 at t = 0 and a
/// possible jump (burst) at 0+. Closed under sums and minima; this is the
/// family produced by aggregating shaped token-bucket arrivals.
///
/// Stored as breakpoints `(t_k, y_k)` where `y_k` is the right-limit value at
/// `t_k`; the first breakpoint is always at t = 0 and holds the burst. Beyond
/// the last breakpoint the curve continues with `tail_slope`. Segment slopes
/// are strictly decreasing (collinear breakpoints are merged).
#[derive(Clone, Debug, PartialEq)]
pub struct ConcavePl {
    points: Vec<(f64, f64)>,
    tail_slope: f64,
}

impl ConcavePl {
    pub fn zero() -> Self {
        ConcavePl { points: vec![(0.0, 0.0)], tail_slope: 0.0 }
    }

    pub fn from_token_bucket(tb: TokenBucket) -> Self {
        ConcavePl { points: vec![(0.0, tb.burst)], tail_slope: tb.rate }
    }

    /// Breakpoints as `(t, right-limit value)`, starting at t = 0.
    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Slope after the last breakpoint (the long-term rate).
    pub fn tail_slope(&self) -> f64 {
        self.tail_slope
    }

    /// Burst at 0+ (right limit at zero).
    pub fn burst(&self) -> f64 {
        self.points[0].1
    }

    /// Curve value; 0 at t = 0, right-continuous interpolation for t > 0.
    pub fn value(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let mut prev = self.points[0];
        for &(tk, yk) in &self.points[1..] {
            if t <= tk + CROSS_TOL && t >= tk - CROSS_TOL {
                return yk;
            }
            if t < tk {
                let slope = (yk - prev.1) / (tk - prev.0);
                return prev.1 + slope * (t - prev.0);
            }
            prev = (tk, yk);
        }
        prev.1 + self.tail_slope * (t - prev.0)
    }

    /// Merge duplicate and collinear breakpoints.
    fn normalize(points: Vec<(f64, f64)>, tail_slope: f64) -> Self {
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(points.len());
        for (t, y) in points {
            if let Some(&(tp, _)) = out.last() {
                if t - tp <= CROSS_TOL {
                    continue;
                }
            }
            out.push((t, y));
        }
        // Drop points whose adjacent slopes are equal.
        let mut k = 1;
        while k < out.len() {
            let (tp, yp) = out[k - 1];
            let (t, y) = out[k];
            let s_in = (y - yp) / (t - tp);
            let s_out = if k + 1 < out.len() {
                let (tn, yn) = out[k + 1];
                (yn - y) / (tn - t)
            } else {
                tail_slope
            };
            let scale = s_in.abs().max(s_out.abs()).max(1.0);
            if (s_in - s_out).abs() <= 1e-9 * scale {
                out.remove(k);
            } else {
                k += 1;
            }
        }
        ConcavePl { points: out, tail_slope }
    }

    fn breakpoint_times(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|&(t, _)| t)
    }
}

/// Pointwise sum of concave curves; bursts and rates add.
pub fn sum(curves: &[ConcavePl]) -> ConcavePl {
    assert!(!curves.is_empty(), "sum of an empty curve list");
    let mut times: Vec<f64> = curves.iter().flat_map(|c| c.breakpoint_times()).collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times.dedup_by(|a, b| (*a - *b).abs() <= CROSS_TOL);
    let points = times
        .iter()
        .map(|&t| {
            let y = curves
                .iter()
                .map(|c| if t == 0.0 { c.burst() } else { c.value(t) })
                .sum();
            (t, y)
        })
        .collect();
    let tail = curves.iter().map(|c| c.tail_slope).sum();
    ConcavePl::normalize(points, tail)
}

/// Pointwise minimum of two concave curves; breakpoints are the union of the
/// inputs' breakpoints plus the crossing points.
pub fn min_concave(a: &ConcavePl, b: &ConcavePl) -> ConcavePl {
    let mut times: Vec<f64> = a.breakpoint_times().chain(b.breakpoint_times()).collect();
    times.sort_by(|x, y| x.partial_cmp(y).unwrap());
    times.dedup_by(|x, y| (*x - *y).abs() <= CROSS_TOL);

    let val = |c: &ConcavePl, t: f64| if t == 0.0 { c.burst() } else { c.value(t) };
    // Insert crossings interior to segments and in the joint tail.
    let mut crossings = Vec::new();
    for w in times.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let d0 = val(a, t0) - val(b, t0);
        let d1 = val(a, t1) - val(b, t1);
        if d0 * d1 < 0.0 {
            let tc = t0 + (t1 - t0) * d0 / (d0 - d1);
            if tc > t0 + CROSS_TOL && tc < t1 - CROSS_TOL {
                crossings.push(tc);
            }
        }
    }
    let t_last = *times.last().unwrap();
    let d_last = val(a, t_last) - val(b, t_last);
    let slope_diff = a.tail_slope - b.tail_slope;
    if d_last != 0.0 && slope_diff != 0.0 && d_last.signum() != slope_diff.signum() {
        let tc = t_last - d_last / slope_diff;
        if tc > t_last + CROSS_TOL {
            crossings.push(tc);
        }
    }
    times.extend(crossings);
    times.sort_by(|x, y| x.partial_cmp(y).unwrap());
    times.dedup_by(|x, y| (*x - *y).abs() <= CROSS_TOL);

    let points = times.iter().map(|&t| (t, val(a, t).min(val(b, t)))).collect();
    // Past the last crossing both curves are affine and ordered; the lower one
    // supplies the tail slope.
    let probe = times.last().unwrap() + 1.0;
    let (va, vb) = (a.value(probe), b.value(probe));
    let tail = if (va - vb).abs() <= 1e-9 * va.abs().max(vb.abs()).max(1.0) {
        a.tail_slope.min(b.tail_slope)
    } else if va < vb {
        a.tail_slope
    } else {
        b.tail_slope
    };
    ConcavePl::normalize(points, tail)
}

/// Min-plus convolution of two rate-latency curves: β_{min(R1,R2), T1+T2}.
pub fn conv_rate_latency(b1: RateLatency, b2: RateLatency) -> RateLatency {
    RateLatency { rate: b1.rate.min(b2.rate), latency: b1.latency + b2.latency }
}

/// Min-plus deconvolution γ_{b,r} ⊘ β_{R,T} = γ_{b + r·T, r} (output arrival
/// curve of a token-bucket flow through a rate-latency server).
pub fn deconv_tb_rl(alpha: TokenBucket, beta: RateLatency) -> Result<TokenBucket, CurveError> {
    if alpha.rate >= beta.rate {
        return Err(CurveError::DeconvolutionUnbounded {
            rate: alpha.rate,
            service_rate: beta.rate,
        });
    }
    Ok(TokenBucket { burst: alpha.burst + alpha.rate * beta.latency, rate: alpha.rate })
}

/// Min-plus deconvolution by a pure delay: α ⊘ δ_d = γ_{b + r·d, r}.
pub fn deconv_delay(alpha: TokenBucket, d: f64) -> TokenBucket {
    assert!(d >= 0.0, "delay must be >= 0");
    if d.is_infinite() {
        return TokenBucket { burst: f64::INFINITY, rate: alpha.rate };
    }
    TokenBucket { burst: alpha.burst + alpha.rate * d, rate: alpha.rate }
}

/// Horizontal deviation (worst-case delay) between a concave arrival curve and
/// a rate-latency service curve: T + max_k (α(t_k) − R·t_k)_+ / R, evaluated
/// at the breakpoints (sufficient: α(t) − R·t is piecewise linear).
pub fn h_dev(alpha: &ConcavePl, beta: RateLatency) -> f64 {
    if alpha.tail_slope > beta.rate {
        return f64::INFINITY;
    }
    let mut excess: f64 = 0.0;
    for &(t, y) in alpha.breakpoints() {
        excess = excess.max(y - beta.rate * t);
    }
    if alpha.tail_slope == beta.rate && excess > 0.0 {
        // The arrival curve stays above the service asymptote forever.
        return f64::INFINITY;
    }
    beta.latency + excess / beta.rate
}

/// Horizontal deviation for a single token bucket: T + b/R when r < R.
pub fn h_dev_tb(alpha: TokenBucket, beta: RateLatency) -> f64 {
    if alpha.rate > beta.rate || (alpha.rate == beta.rate && alpha.burst > 0.0) {
        return f64::INFINITY;
    }
    beta.latency + alpha.burst / beta.rate
}

/// Vertical deviation (worst-case backlog) b + r·T; +∞ when r > R.
pub fn v_dev(alpha: TokenBucket, beta: RateLatency) -> f64 {
    if alpha.rate > beta.rate {
        return f64::INFINITY;
    }
    alpha.burst + alpha.rate * beta.latency
}
