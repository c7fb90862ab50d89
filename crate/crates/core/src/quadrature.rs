//! Quadrature rules: globally adaptive Gauss-Kronrod (21 point) for complex
//! integrands on a finite interval, and the periodic trapezoid rule.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

// Kronrod abscissae; odd indices are the 10-point Gauss nodes.
const XGK: [f64; 11] = [
    0.995657163025808080735527280689003,
    0.973906528517171720077964012084452,
    0.930157491355708226001207180059508,
    0.865063366688984510732096688423493,
    0.780817726586416897063717578345042,
    0.679409568299024406234327365114874,
    0.562757134668604683339000099272694,
    0.433395394129247190799265943165784,
    0.294392862701460198131126603103866,
    0.148874338981631210884826001129720,
    0.000000000000000000000000000000000,
];

const WGK: [f64; 11] = [
    0.011694638867371874278064396062192,
    0.032558162307964727478818972459390,
    0.054755896574351996031381300244580,
    0.075039674810919952767043140916190,
    0.093125454583697605535065465083366,
    0.109387158802297641899210590325805,
    0.123491976262065851077208491021930,
    0.134709217311473325928054001771707,
    0.142775938577060080797094273138717,
    0.147739104901338491374841515972068,
    0.149445554002916905664936468389821,
];

const WG: [f64; 5] = [
    0.066671344308688137593568809893332,
    0.149451349150580593145776339657697,
    0.219086362515982043995534934228163,
    0.269266719309996355091226921569469,
    0.295524224714752870173892994651338,
];

#[derive(Debug, Clone, Copy)]
struct Segment {
    lo: f64,
    hi: f64,
    value: Complex64,
    abs_value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    // Largest error first; ties broken by position so the refinement order
    // never depends on heap internals.
    fn cmp(&self, other: &Self) -> Ordering {
        self.error
            .total_cmp(&other.error)
            .then_with(|| other.lo.total_cmp(&self.lo))
    }
}

fn gk21<F: Fn(f64) -> Complex64>(f: &F, lo: f64, hi: f64) -> Segment {
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let fc = f(center);
    let mut kronrod = fc * WGK[10];
    let mut gauss = Complex64::new(0.0, 0.0);
    let mut abs_sum = fc.norm() * WGK[10];
    for j in 0..10 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        let s = f1 + f2;
        kronrod += s * WGK[j];
        abs_sum += (f1.norm() + f2.norm()) * WGK[j];
        if j % 2 == 1 {
            gauss += s * WG[j / 2];
        }
    }
    let value = kronrod * half;
    let raw_err = ((kronrod - gauss) * half).norm();
    // QUADPACK-style pessimistic scaling of the Kronrod-Gauss difference.
    let abs_value = abs_sum * half.abs();
    let error = if abs_value > 0.0 {
        let r = (200.0 * raw_err / abs_value).powf(1.5).min(1.0);
        (abs_value * r).max(50.0 * f64::EPSILON * abs_value)
    } else {
        raw_err
    };
    Segment { lo, hi, value, abs_value, error }
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: Complex64,
    /// Estimated absolute error.
    pub error: f64,
    /// Integral of `|f|`, the scale the relative tolerance refers to.
    pub abs_integral: f64,
    pub segments: usize,
}

/// Controls for [`integrate_adaptive`].
#[derive(Debug, Clone, Copy)]
pub struct AdaptiveOptions {
    /// Relative tolerance with respect to the integral of `|f|`.
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_segments: usize,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        AdaptiveOptions {
            rel_tol: 1e-10,
            abs_tol: 0.0,
            max_segments: 200_000,
        }
    }
}

/// Globally adaptive G10/K21 integration of `f` over the union of the
/// intervals between consecutive `breakpoints` (which must be increasing).
///
/// Stops once the summed error estimate is below
/// `max(abs_tol, rel_tol * integral |f|)`.
pub fn integrate_adaptive<F>(f: F, breakpoints: &[f64], opts: &AdaptiveOptions) -> Result<Quadrature>
where
    F: Fn(f64) -> Complex64,
{
    assert!(breakpoints.len() >= 2, "need at least one interval");
    let mut heap = BinaryHeap::with_capacity(breakpoints.len() * 2);
    let mut value = Complex64::new(0.0, 0.0);
    let mut abs_integral = 0.0;
    let mut error = 0.0;
    for w in breakpoints.windows(2) {
        let s = gk21(&f, w[0], w[1]);
        value += s.value;
        abs_integral += s.abs_value;
        error += s.error;
        heap.push(s);
    }
    let tol = |abs_integral: f64| opts.abs_tol.max(opts.rel_tol * abs_integral);
    while error > tol(abs_integral) {
        if heap.len() >= opts.max_segments {
            let worst = heap.peek().copied().expect("non-empty heap");
            return Err(Error::QuadratureNonconvergence {
                error,
                tolerance: tol(abs_integral),
                worst_lo: worst.lo,
                worst_hi: worst.hi,
            });
        }
        let worst = heap.pop().expect("non-empty heap");
        let mid = 0.5 * (worst.lo + worst.hi);
        if mid <= worst.lo || mid >= worst.hi {
            return Err(Error::QuadratureNonconvergence {
                error,
                tolerance: tol(abs_integral),
                worst_lo: worst.lo,
                worst_hi: worst.hi,
            });
        }
        let left = gk21(&f, worst.lo, mid);
        let right = gk21(&f, mid, worst.hi);
        value += left.value + right.value - worst.value;
        abs_integral += left.abs_value + right.abs_value - worst.abs_value;
        error += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
    }
    // Re-sum from the segments to shed accumulated update round-off.
    let mut segs: Vec<Segment> = heap.into_vec();
    segs.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    let value = segs.iter().fold(Complex64::new(0.0, 0.0), |acc, s| acc + s.value);
    let error = segs.iter().map(|s| s.error).sum();
    Ok(Quadrature {
        value,
        error,
        abs_integral,
        segments: segs.len(),
    })
}

/// `int_0^{2 pi} f(theta) d theta` by the `n`-point periodic trapezoid rule.
pub fn periodic_trapezoid<F>(f: F, n: usize) -> Complex64
where
    F: Fn(f64) -> Complex64,
{
    let h = 2.0 * PI / n as f64;
    let sum = (0..n).fold(Complex64::new(0.0, 0.0), |acc, j| acc + f(j as f64 * h));
    sum * h
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule mapped to `[0, 1]`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((0.5 * (1.0 - x), 1.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// Fixed composite Gauss-Legendre rule: `panels` equal panels of `order` points.
pub fn composite_gauss_legendre<F>(f: F, lo: f64, hi: f64, panels: usize, order: usize) -> Complex64
where
    F: Fn(f64) -> Complex64,
{
    let gl = gauss_legendre(order);
    let h = (hi - lo) / panels as f64;
    let mut s = Complex64::new(0.0, 0.0);
    for p in 0..panels {
        for &(x, w) in &gl {
            s += f(lo + (p as f64 + x) * h) * (w * h);
        }
    }
    s
}
