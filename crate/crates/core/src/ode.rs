//! Dormand–Prince 5(4) stepper with PI step-size control.
//!
//! Shared by the physical integrator and the phase-plane flow. The driver
//! hands every accepted step to a callback together with the endpoint
//! derivatives, so callers can build cubic Hermite dense output, detect
//! events and decide when to stop.

use std::ops::ControlFlow;

/// Autonomous vector field `y' = F(y)`.
pub trait Autonomous<const N: usize> {
    fn eval(&self, y: &[f64; N]) -> [f64; N];
}

impl<const N: usize, F: Fn(&[f64; N]) -> [f64; N]> Autonomous<N> for F {
    fn eval(&self, y: &[f64; N]) -> [f64; N] {
        self(y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rel: f64,
    pub abs: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rel: 1e-8,
            abs: 1e-10,
        }
    }
}

/// One accepted step.
#[derive(Debug, Clone, Copy)]
pub struct Step<const N: usize> {
    pub t0: f64,
    pub y0: [f64; N],
    pub dy0: [f64; N],
    pub t1: f64,
    pub y1: [f64; N],
    pub dy1: [f64; N],
}

impl<const N: usize> Step<N> {
    /// Cubic Hermite interpolant on `[t0, t1]`.
    pub fn interpolate(&self, t: f64) -> [f64; N] {
        hermite(
            self.t0, &self.y0, &self.dy0, self.t1, &self.y1, &self.dy1, t,
        )
    }
}

pub fn hermite<const N: usize>(
    t0: f64,
    y0: &[f64; N],
    dy0: &[f64; N],
    t1: f64,
    y1: &[f64; N],
    dy1: &[f64; N],
    t: f64,
) -> [f64; N] {
    let h = t1 - t0;
    if h == 0.0 {
        return *y0;
    }
    let s = (t - t0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    let mut out = [0.0; N];
    for i in 0..N {
        out[i] = h00 * y0[i] + h10 * h * dy0[i] + h01 * y1[i] + h11 * h * dy1[i];
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriveEnd {
    Reached,
    Stopped,
    StepLimit { t: f64 },
    Underflow { t: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveOptions {
    pub tol: Tolerances,
    pub max_steps: usize,
    pub max_step: f64,
}

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
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// b - b_hat
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;
// PI gains (Gustafsson), scaled by 1/(order+1) with order 4.
const K_I: f64 = 0.7 / 5.0;
const K_P: f64 = 0.4 / 5.0;

fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for i in 0..N {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        out[i] += h * acc;
    }
    out
}

fn err_norm<const N: usize>(y0: &[f64; N], y1: &[f64; N], err: &[f64; N], tol: &Tolerances) -> f64 {
    let mut acc = 0.0;
    for i in 0..N {
        let sc = tol.abs + tol.rel * y0[i].abs().max(y1[i].abs());
        let r = err[i] / sc;
        acc += r * r;
    }
    (acc / N as f64).sqrt()
}

fn initial_step<const N: usize, S: Autonomous<N>>(
    sys: &S,
    y0: &[f64; N],
    f0: &[f64; N],
    tol: &Tolerances,
    max_step: f64,
) -> f64 {
    // Standard two-evaluation heuristic for an order-5 method.
    let scale = |i: usize| tol.abs + tol.rel * y0[i].abs();
    let d0 = (0..N)
        .map(|i| (y0[i] / scale(i)).powi(2))
        .sum::<f64>()
        .sqrt()
        / (N as f64).sqrt();
    let d1 = (0..N)
        .map(|i| (f0[i] / scale(i)).powi(2))
        .sum::<f64>()
        .sqrt()
        / (N as f64).sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let h0 = h0.min(max_step);
    let y1 = axpy(y0, h0, &[(1.0, f0)]);
    let f1 = sys.eval(&y1);
    let d2 = (0..N)
        .map(|i| ((f1[i] - f0[i]) / scale(i)).powi(2))
        .sum::<f64>()
        .sqrt()
        / (N as f64).sqrt()
        / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / 5.0)
    };
    let h = (100.0 * h0).min(h1).min(max_step);
    if h.is_finite() && h > 0.0 {
        h
    } else {
        1e-6f64.min(max_step)
    }
}

/// Integrates from `t0` to `t_end > t0`, calling `on_step` after each accepted
/// step. Returning `ControlFlow::Break` from the callback stops the drive.
pub fn drive<const N: usize, S, F>(
    sys: &S,
    t0: f64,
    y0: [f64; N],
    t_end: f64,
    opts: &DriveOptions,
    mut on_step: F,
) -> DriveEnd
where
    S: Autonomous<N>,
    F: FnMut(&Step<N>) -> ControlFlow<()>,
{
    let tol = &opts.tol;
    let mut t = t0;
    let mut y = y0;
    let mut k1 = sys.eval(&y);
    let mut h = initial_step(sys, &y, &k1, tol, opts.max_step);
    let mut err_prev: f64 = 1e-4;
    let mut steps = 0usize;

    while t < t_end {
        if steps >= opts.max_steps {
            return DriveEnd::StepLimit { t };
        }
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }
        if h < 1e-13 * t.abs().max(1.0) && !last {
            return DriveEnd::Underflow { t };
        }

        let k2 = sys.eval(&axpy(&y, h, &[(A21, &k1)]));
        let k3 = sys.eval(&axpy(&y, h, &[(A31, &k1), (A32, &k2)]));
        let k4 = sys.eval(&axpy(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
        let k5 = sys.eval(&axpy(
            &y,
            h,
            &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)],
        ));
        let k6 = sys.eval(&axpy(
            &y,
            h,
            &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
        ));
        let y_new = axpy(
            &y,
            h,
            &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)],
        );
        let k7 = sys.eval(&y_new);
        let mut e = [0.0; N];
        for i in 0..N {
            e[i] =
                h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        let err = err_norm(&y, &y_new, &e, tol);
        steps += 1;

        if !err.is_finite() {
            h *= MIN_FACTOR;
            err_prev = 1.0;
            continue;
        }
        if err <= 1.0 {
            let t_new = if last { t_end } else { t + h };
            let step = Step {
                t0: t,
                y0: y,
                dy0: k1,
                t1: t_new,
                y1: y_new,
                dy1: k7,
            };
            t = t_new;
            y = y_new;
            k1 = k7;
            if on_step(&step).is_break() {
                return DriveEnd::Stopped;
            }
            let fac = if err == 0.0 {
                MAX_FACTOR
            } else {
                SAFETY * err.powf(-K_I) * err_prev.powf(K_P)
            };
            h *= fac.clamp(MIN_FACTOR, MAX_FACTOR);
            h = h.min(opts.max_step);
            err_prev = err.max(1e-4);
        } else {
            let fac = SAFETY * err.powf(-1.0 / 5.0);
            h *= fac.clamp(MIN_FACTOR, 1.0);
        }
    }
    DriveEnd::Reached
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(rel: f64, abs: f64) -> DriveOptions {
        DriveOptions {
            tol: Tolerances { rel, abs },
            max_steps: 1_000_000,
            max_step: f64::INFINITY,
        }
    }

    #[test]
    fn exponential_decay() {
        let sys = |y: &[f64; 1]| [-y[0]];
        let mut last = [0.0];
        let end = drive(&sys, 0.0, [1.0], 5.0, &opts(1e-10, 1e-12), |s| {
            last = s.y1;
            ControlFlow::Continue(())
        });
        assert_eq!(end, DriveEnd::Reached);
        assert!((last[0] - (-5.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn harmonic_oscillator_period() {
        let sys = |y: &[f64; 2]| [y[1], -y[0]];
        let mut last = [0.0; 2];
        drive(
            &sys,
            0.0,
            [1.0, 0.0],
            2.0 * std::f64::consts::PI,
            &opts(1e-10, 1e-12),
            |s| {
                last = s.y1;
                ControlFlow::Continue(())
            },
        );
        assert!((last[0] - 1.0).abs() < 1e-8 && last[1].abs() < 1e-8);
    }

    #[test]
    fn hermite_reproduces_cubics() {
        // y = t^3 on [1, 2]
        let p = |t: f64| [t * t * t];
        let d = |t: f64| [3.0 * t * t];
        for t in [1.0, 1.3, 1.77, 2.0] {
            let y = hermite(1.0, &p(1.0), &d(1.0), 2.0, &p(2.0), &d(2.0), t);
            assert!((y[0] - p(t)[0]).abs() < 1e-14);
        }
    }

    #[test]
    fn stop_and_limits() {
        let sys = |y: &[f64; 1]| [y[0] * y[0]];
        // y = 1/(1-t) blows up at t = 1
        let end = drive(&sys, 0.0, [1.0], 2.0, &opts(1e-8, 1e-10), |s| {
            if s.y1[0] > 1e6 {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        });
        assert_eq!(end, DriveEnd::Stopped);
        let mut o = opts(1e-8, 1e-10);
        o.max_steps = 3;
        let end = drive(&sys, 0.0, [1.0], 0.9, &o, |_| ControlFlow::Continue(()));
        assert!(matches!(end, DriveEnd::StepLimit { .. }));
    }
}
