//! Explicit Runge-Kutta integrators on fixed-size real state vectors.
//!
//! [`dopri5`] is the Dormand-Prince 5(4) pair with Hairer's 4th-order
//! continuous extension, so output times never constrain the step size.
//! [`rk4`] is the classical fixed-step method, kept as a reference.

/// Error-control settings for [`dopri5`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    /// First trial step; `None` picks one from the initial derivative.
    pub h_init: Option<f64>,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            rtol: 1e-9,
            atol: 1e-12,
            h_init: None,
            h_max: f64::INFINITY,
            max_steps: 10_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum IntegrationError<E> {
    /// Step size fell below the resolvable limit at time `t`.
    Underflow { t: f64, h: f64 },
    /// The output sink refused a sample.
    Sink(E),
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

fn combo<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        *o += h * acc;
    }
    out
}

/// Dense-output polynomial of one accepted step.
struct Interpolant<const N: usize> {
    t0: f64,
    h: f64,
    r: [[f64; N]; 5],
}

impl<const N: usize> Interpolant<N> {
    fn eval(&self, t: f64) -> [f64; N] {
        let s = (t - self.t0) / self.h;
        let s1 = 1.0 - s;
        let mut out = [0.0; N];
        for (i, o) in out.iter_mut().enumerate() {
            let r = &self.r;
            *o = r[0][i] + s * (r[1][i] + s1 * (r[2][i] + s * (r[3][i] + s1 * r[4][i])));
        }
        out
    }
}

fn error_norm<const N: usize>(err: &[f64; N], y0: &[f64; N], y1: &[f64; N], c: &StepControl) -> f64 {
    let mut sum = 0.0;
    for i in 0..N {
        let sc = c.atol + c.rtol * y0[i].abs().max(y1[i].abs());
        let e = err[i] / sc;
        sum += e * e;
    }
    (sum / N as f64).sqrt()
}

fn rms_scaled<const N: usize>(v: &[f64; N], y: &[f64; N], c: &StepControl) -> f64 {
    let sum: f64 = (0..N)
        .map(|i| {
            let e = v[i] / (c.atol + c.rtol * y[i].abs());
            e * e
        })
        .sum();
    (sum / N as f64).sqrt()
}

// Starting step from Hairer, Norsett & Wanner, with a trial Euler step to
// estimate the second derivative.
fn initial_step<const N: usize, F>(f: &mut F, t: f64, y: &[f64; N], k1: &[f64; N], span: f64, c: &StepControl) -> f64
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
{
    let d0 = rms_scaled(y, y, c);
    let d1 = rms_scaled(k1, y, c);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 }.min(span);
    let y1 = combo(y, h0, &[(1.0, k1)]);
    let k2 = f(t + h0, &y1);
    let mut diff = [0.0; N];
    for i in 0..N {
        diff[i] = k2[i] - k1[i];
    }
    let d2 = rms_scaled(&diff, y, c) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span)
}

/// Integrate `y' = f(t, y)` from `(t0, y0)` through the increasing output
/// times `samples` (all `>= t0`), passing each interpolated state to `sink`.
pub fn dopri5<const N: usize, F, S, E>(
    mut f: F,
    t0: f64,
    y0: [f64; N],
    samples: &[f64],
    control: &StepControl,
    mut sink: S,
) -> Result<StepStats, IntegrationError<E>>
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
    S: FnMut(usize, f64, &[f64; N]) -> Result<(), E>,
{
    let mut stats = StepStats::default();
    let Some(&t_end) = samples.last() else {
        return Ok(stats);
    };
    let mut next = 0;
    while next < samples.len() && samples[next] <= t0 {
        sink(next, samples[next], &y0).map_err(IntegrationError::Sink)?;
        next += 1;
    }
    if next == samples.len() {
        return Ok(stats);
    }

    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y);
    stats.evaluations += 1;
    let mut h = match control.h_init {
        Some(h) => h,
        None => {
            let h = initial_step(&mut f, t, &y, &k1, t_end - t0, control);
            stats.evaluations += 1;
            h
        }
    }
    .min(control.h_max);
    let mut last_rejected = false;

    while next < samples.len() {
        if stats.accepted + stats.rejected >= control.max_steps {
            return Err(IntegrationError::Underflow { t, h });
        }
        if h < 1e-12 * t.abs().max(1.0) {
            return Err(IntegrationError::Underflow { t, h });
        }
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }

        let k2 = f(t + C2 * h, &combo(&y, h, &[(A21, &k1)]));
        let k3 = f(t + C3 * h, &combo(&y, h, &[(A31, &k1), (A32, &k2)]));
        let k4 = f(t + C4 * h, &combo(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
        let k5 = f(
            t + C5 * h,
            &combo(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
        );
        let k6 = f(
            t + h,
            &combo(&y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
        );
        let y1 = combo(&y, h, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
        let t1 = if last { t_end } else { t + h };
        let k7 = f(t1, &y1);
        stats.evaluations += 6;

        let mut err = [0.0; N];
        for i in 0..N {
            err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        let norm = error_norm(&err, &y, &y1, control);

        if norm <= 1.0 {
            stats.accepted += 1;
            let mut r = [[0.0; N]; 5];
            for i in 0..N {
                let dy = y1[i] - y[i];
                let bspl = h * k1[i] - dy;
                r[0][i] = y[i];
                r[1][i] = dy;
                r[2][i] = bspl;
                r[3][i] = dy - h * k7[i] - bspl;
                r[4][i] = h
                    * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
            }
            let interp = Interpolant { t0: t, h, r };
            while next < samples.len() && samples[next] <= t1 {
                let ts = samples[next];
                let ys = if ts == t1 { y1 } else { interp.eval(ts) };
                sink(next, ts, &ys).map_err(IntegrationError::Sink)?;
                next += 1;
            }
            t = t1;
            y = y1;
            k1 = k7;
            let mut fac = if norm == 0.0 { 5.0 } else { 0.9 * norm.powf(-0.2) };
            fac = fac.clamp(0.2, 5.0);
            if last_rejected {
                fac = fac.min(1.0);
            }
            h = (h * fac).min(control.h_max);
            last_rejected = false;
        } else {
            stats.rejected += 1;
            h *= (0.9 * norm.powf(-0.2)).max(0.2);
            last_rejected = true;
        }
    }
    Ok(stats)
}

/// Classical RK4 with `n_steps` steps of size `h`; `sink` sees every step
/// point including the initial one.
pub fn rk4<const N: usize, F, S>(mut f: F, t0: f64, y0: [f64; N], h: f64, n_steps: usize, mut sink: S)
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
    S: FnMut(usize, f64, &[f64; N]),
{
    let mut y = y0;
    sink(0, t0, &y);
    for n in 0..n_steps {
        let t = t0 + n as f64 * h;
        let k1 = f(t, &y);
        let k2 = f(t + 0.5 * h, &combo(&y, 0.5 * h, &[(1.0, &k1)]));
        let k3 = f(t + 0.5 * h, &combo(&y, 0.5 * h, &[(1.0, &k2)]));
        let k4 = f(t + h, &combo(&y, h, &[(1.0, &k3)]));
        y = combo(&y, h / 6.0, &[(1.0, &k1), (2.0, &k2), (2.0, &k3), (1.0, &k4)]);
        sink(n + 1, t0 + (n + 1) as f64 * h, &y);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oscillator(_t: f64, y: &[f64; 2]) -> [f64; 2] {
        [y[1], -y[0]]
    }

    #[test]
    fn dense_output_tracks_harmonic_oscillator() {
        let samples: Vec<f64> = (0..=400).map(|i| i as f64 * 0.05).collect();
        let mut worst: f64 = 0.0;
        let stats = dopri5::<2, _, _, ()>(
            oscillator,
            0.0,
            [1.0, 0.0],
            &samples,
            &StepControl { rtol: 1e-10, atol: 1e-12, ..Default::default() },
            |_, t, y| {
                worst = worst.max((y[0] - t.cos()).abs()).max((y[1] + t.sin()).abs());
                Ok(())
            },
        )
        .unwrap();
        assert!(worst < 1e-8, "{worst}");
        assert!(stats.accepted > 10);
    }

    #[test]
    fn dense_output_between_steps() {
        // A linear decay lets steps grow large; samples fall inside steps.
        let samples: Vec<f64> = (0..=100).map(|i| i as f64 * 0.037).collect();
        let mut worst: f64 = 0.0;
        dopri5::<1, _, _, ()>(
            |_, y| [-0.5 * y[0]],
            0.0,
            [2.0],
            &samples,
            &StepControl { rtol: 1e-9, atol: 1e-14, ..Default::default() },
            |_, t, y| {
                worst = worst.max((y[0] - 2.0 * (-0.5 * t).exp()).abs());
                Ok(())
            },
        )
        .unwrap();
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn sink_error_propagates() {
        let r = dopri5::<2, _, _, &str>(
            oscillator,
            0.0,
            [1.0, 0.0],
            &[0.0, 1.0, 2.0],
            &StepControl::default(),
            |i, _, _| if i == 1 { Err("stop") } else { Ok(()) },
        );
        assert_eq!(r, Err(IntegrationError::Sink("stop")));
    }

    #[test]
    fn stiff_blowup_underflows() {
        let r = dopri5::<1, _, _, ()>(
            |_, y| [y[0] * y[0]],
            0.0,
            [1.0],
            &[2.0],
            &StepControl::default(),
            |_, _, _| Ok(()),
        );
        assert!(matches!(r, Err(IntegrationError::Underflow { .. })));
    }

    #[test]
    fn rk4_is_fourth_order() {
        let run = |n: usize| {
            let mut end = [0.0; 2];
            rk4(oscillator, 0.0, [1.0, 0.0], 2.0 / n as f64, n, |_, _, y| end = *y);
            (end[0] - 2f64.cos()).abs()
        };
        let ratio = run(50) / run(100);
        assert!(ratio > 14.0 && ratio < 18.0, "{ratio}");
    }
}
