//! Blowing-up coordinates `u = f'/f^2`, `v = f''/f^3` with `ds = f dt`,
//! which turn the third-order equation into the planar system
//!
//! ```text
//! u' = v - 2 u^2
//! v' = -alpha v + beta u^2 - 3 u v
//! ```

use std::io::Write;
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::integrator::{EventKind, Profile, DEFAULT_ABS_TOL, DEFAULT_REL_TOL, SIGN_DEAD_BAND};
use crate::ode::{self, DriveEnd, DriveOptions, Tolerances};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub s: f64,
    pub u: f64,
    pub v: f64,
}

pub fn phase_rhs(alpha: f64, beta: f64, u: f64, v: f64) -> (f64, f64) {
    (v - 2.0 * u * u, -alpha * v + beta * u * u - 3.0 * u * v)
}

pub fn jacobian(alpha: f64, beta: f64, u: f64, v: f64) -> [[f64; 2]; 2] {
    [
        [-4.0 * u, 1.0],
        [2.0 * beta * u - 3.0 * v, -alpha - 3.0 * u],
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedPointKind {
    Saddle,
    StableNode,
    UnstableNode,
    StableFocus,
    UnstableFocus,
    Center,
    /// Some eigenvalue has modulus below `1e-10`.
    Degenerate,
}

/// Complex number as `(re, im)`.
pub type Eigenvalue = (f64, f64);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointInfo {
    pub u: f64,
    pub v: f64,
    pub jacobian: [[f64; 2]; 2],
    pub eigenvalues: [Eigenvalue; 2],
    pub kind: FixedPointKind,
}

pub const DEGENERATE_EIGENVALUE: f64 = 1e-10;

pub fn eigenvalues(j: &[[f64; 2]; 2]) -> [Eigenvalue; 2] {
    let tr = j[0][0] + j[1][1];
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let disc = 0.25 * tr * tr - det;
    if disc >= 0.0 {
        let r = disc.sqrt();
        // Avoid cancellation in the smaller root.
        let big = 0.5 * tr + r.copysign(tr);
        let small = if big != 0.0 { det / big } else { 0.0 };
        let (a, b) = if big <= small {
            (big, small)
        } else {
            (small, big)
        };
        [(a, 0.0), (b, 0.0)]
    } else {
        let im = (-disc).sqrt();
        [(0.5 * tr, -im), (0.5 * tr, im)]
    }
}

pub fn classify_fixed_point(j: &[[f64; 2]; 2]) -> (FixedPointKind, [Eigenvalue; 2]) {
    let ev = eigenvalues(j);
    let modulus = |e: &Eigenvalue| e.0.hypot(e.1);
    let kind = if ev.iter().any(|e| modulus(e) < DEGENERATE_EIGENVALUE) {
        FixedPointKind::Degenerate
    } else if ev[0].1 != 0.0 {
        let re = ev[0].0;
        if re.abs() < DEGENERATE_EIGENVALUE {
            FixedPointKind::Center
        } else if re < 0.0 {
            FixedPointKind::StableFocus
        } else {
            FixedPointKind::UnstableFocus
        }
    } else if ev[0].0 * ev[1].0 < 0.0 {
        FixedPointKind::Saddle
    } else if ev[1].0 < 0.0 {
        FixedPointKind::StableNode
    } else {
        FixedPointKind::UnstableNode
    };
    (kind, ev)
}

fn info(alpha: f64, beta: f64, u: f64, v: f64) -> FixedPointInfo {
    // Adding zero clears negative zeros from the report.
    let j = jacobian(alpha, beta, u, v).map(|r| r.map(|x| x + 0.0));
    let (kind, ev) = classify_fixed_point(&j);
    let eigenvalues = ev.map(|(re, im)| (re + 0.0, im + 0.0));
    FixedPointInfo {
        u,
        v,
        jacobian: j,
        eigenvalues,
        kind,
    }
}

/// The origin, plus `((beta - 2 alpha) / 6, 2 u^2)` when it is distinct.
pub fn fixed_points(alpha: f64, beta: f64) -> Result<Vec<FixedPointInfo>> {
    if !(alpha.is_finite() && beta.is_finite()) {
        return Err(Error::InvalidInput("alpha and beta must be finite".into()));
    }
    let mut out = vec![info(alpha, beta, 0.0, 0.0)];
    let u = (beta - 2.0 * alpha) / 6.0;
    if u != 0.0 {
        out.push(info(alpha, beta, u, 2.0 * u * u));
    }
    Ok(out)
}

pub fn fixed_points_json(alpha: f64, beta: f64) -> Result<serde_json::Value> {
    Ok(json!({
        "spec_version": "1",
        "alpha": alpha,
        "beta": beta,
        "fixed_points": fixed_points(alpha, beta)?,
    }))
}

/// Maximal sample intervals on which `f` keeps a strict sign, split at
/// logged zero crossings and at samples inside the dead band.
pub fn sign_constant_intervals(profile: &Profile) -> Vec<(f64, f64)> {
    let mut cuts: Vec<f64> = profile
        .events
        .iter()
        .filter(|e| e.kind == EventKind::FZeroCrossing)
        .map(|e| e.t)
        .collect();
    cuts.extend(
        profile
            .samples
            .iter()
            .filter(|s| s.state.f.abs() <= SIGN_DEAD_BAND)
            .map(|s| s.t),
    );
    cuts.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    let mut start: Option<f64> = None;
    let mut prev: Option<f64> = None;
    let mut next_cut = 0;
    for s in &profile.samples {
        let mut crossed = false;
        while next_cut < cuts.len() && cuts[next_cut] <= s.t {
            next_cut += 1;
            crossed = true;
        }
        if crossed {
            if let (Some(a), Some(b)) = (start, prev) {
                if b > a {
                    out.push((a, b));
                }
            }
            start = None;
        }
        if s.state.f.abs() > SIGN_DEAD_BAND {
            if start.is_none() {
                start = Some(s.t);
            }
            prev = Some(s.t);
        }
    }
    if let (Some(a), Some(b)) = (start, prev) {
        if b > a {
            out.push((a, b));
        }
    }
    out
}

fn check_window(profile: &Profile, tau: f64, t_end: f64) -> Result<()> {
    if !(tau.is_finite() && t_end.is_finite() && tau < t_end) {
        return Err(Error::InvalidInput(format!(
            "bad phase window [{tau}, {t_end}]"
        )));
    }
    if tau < profile.first().t || t_end > profile.last().t {
        return Err(Error::InvalidInput(format!(
            "phase window [{tau}, {t_end}] leaves the sampled range"
        )));
    }
    if let Some(e) = profile
        .events
        .iter()
        .find(|e| e.kind == EventKind::FZeroCrossing && e.t >= tau && e.t <= t_end)
    {
        return Err(Error::FVanishes { t: e.t });
    }
    for t in std::iter::once(tau)
        .chain(
            profile
                .samples
                .iter()
                .map(|s| s.t)
                .filter(|&t| t > tau && t < t_end),
        )
        .chain(std::iter::once(t_end))
    {
        if profile.state_at(t).f.abs() <= SIGN_DEAD_BAND {
            return Err(Error::FVanishes { t });
        }
    }
    Ok(())
}

/// `int_a^b f dt` on the dense output: trapezoid with one, two and four
/// panels, refined by two rounds of Richardson extrapolation.
fn integral_f(profile: &Profile, a: f64, b: f64) -> f64 {
    let h = b - a;
    let f: Vec<f64> = (0..=4)
        .map(|k| profile.f_at(a + 0.25 * h * k as f64))
        .collect();
    let t1 = 0.5 * h * (f[0] + f[4]);
    let t2 = 0.5 * t1 + 0.5 * h * f[2];
    let t4 = 0.5 * t2 + 0.25 * h * (f[1] + f[3]);
    let r1 = (4.0 * t2 - t1) / 3.0;
    let r2 = (4.0 * t4 - t2) / 3.0;
    (16.0 * r2 - r1) / 15.0
}

/// Transforms the profile on `[tau, t_end]`, with `s(tau) = 0`. Output points
/// are `tau`, every sample strictly inside, and `t_end`.
pub fn to_phase(profile: &Profile, tau: f64, t_end: f64) -> Result<Vec<PhaseState>> {
    check_window(profile, tau, t_end)?;
    let times: Vec<f64> = std::iter::once(tau)
        .chain(
            profile
                .samples
                .iter()
                .map(|s| s.t)
                .filter(|&t| t > tau && t < t_end),
        )
        .chain(std::iter::once(t_end))
        .collect();
    let mut out = Vec::with_capacity(times.len());
    let mut s = 0.0;
    for (i, &t) in times.iter().enumerate() {
        if i > 0 {
            s += integral_f(profile, times[i - 1], t);
        }
        let st = profile.state_at(t);
        let f2 = st.f * st.f;
        out.push(PhaseState {
            s,
            u: st.fp / f2,
            v: st.fpp / (f2 * st.f),
        });
    }
    Ok(out)
}

/// [`to_phase`] over the first sign-constant interval of the profile.
pub fn to_phase_default(profile: &Profile) -> Result<Vec<PhaseState>> {
    let (a, b) = sign_constant_intervals(profile)
        .into_iter()
        .next()
        .ok_or(Error::FVanishes {
            t: profile.first().t,
        })?;
    to_phase(profile, a, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhaseTermination {
    Reached,
    BlowUp { s: f64 },
    StepLimitExceeded { s: f64 },
    StepUnderflow { s: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTrajectory {
    pub alpha: f64,
    pub beta: f64,
    /// Ordered along the direction of integration.
    pub samples: Vec<PhaseState>,
    pub termination: PhaseTermination,
}

impl PhaseTrajectory {
    /// Cubic Hermite interpolation at `s`, clamped to the sampled range.
    pub fn state_at(&self, s: f64) -> PhaseState {
        let ss = &self.samples;
        let forward = ss.last().is_none_or(|l| l.s >= ss[0].s);
        let key = |p: &PhaseState| if forward { p.s } else { -p.s };
        let k = if forward { s } else { -s };
        if k <= key(&ss[0]) {
            return ss[0];
        }
        if k >= key(ss.last().unwrap()) {
            return *ss.last().unwrap();
        }
        let i = ss.partition_point(|p| key(p) <= k);
        let (a, b) = (&ss[i - 1], &ss[i]);
        let d = |p: &PhaseState| {
            let (du, dv) = phase_rhs(self.alpha, self.beta, p.u, p.v);
            [du, dv]
        };
        let y = ode::hermite(a.s, &[a.u, a.v], &d(a), b.s, &[b.u, b.v], &d(b), s);
        PhaseState {
            s,
            u: y[0],
            v: y[1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub blowup_threshold: f64,
    pub max_steps: usize,
}

impl Default for PhaseOptions {
    fn default() -> Self {
        Self {
            rel_tol: DEFAULT_REL_TOL,
            abs_tol: DEFAULT_ABS_TOL,
            blowup_threshold: 1e6,
            max_steps: 1_000_000,
        }
    }
}

/// Integrates the planar system from `(u0, v0)` at `s = 0` to `s_end`, which
/// may be negative.
pub fn integrate_phase(
    alpha: f64,
    beta: f64,
    start: (f64, f64),
    s_end: f64,
    opts: &PhaseOptions,
) -> Result<PhaseTrajectory> {
    if !(alpha.is_finite() && beta.is_finite() && start.0.is_finite() && start.1.is_finite()) {
        return Err(Error::InvalidInput(
            "phase parameters and start must be finite".into(),
        ));
    }
    if !s_end.is_finite() || s_end == 0.0 {
        return Err(Error::InvalidInput(format!(
            "s_end must be finite and nonzero, got {s_end}"
        )));
    }
    let dir = s_end.signum();
    let sys = move |y: &[f64; 2]| {
        let (du, dv) = phase_rhs(alpha, beta, y[0], y[1]);
        [dir * du, dir * dv]
    };
    let drive_opts = DriveOptions {
        tol: Tolerances {
            rel: opts.rel_tol,
            abs: opts.abs_tol,
        },
        max_steps: opts.max_steps,
        max_step: s_end.abs() / 500.0,
    };
    let mut samples = vec![PhaseState {
        s: 0.0,
        u: start.0,
        v: start.1,
    }];
    let mut blown = None;
    let end = ode::drive(
        &sys,
        0.0,
        [start.0, start.1],
        s_end.abs(),
        &drive_opts,
        |st| {
            samples.push(PhaseState {
                s: dir * st.t1,
                u: st.y1[0],
                v: st.y1[1],
            });
            if st.y1.iter().any(|x| !(x.abs() <= opts.blowup_threshold)) {
                blown = Some(dir * st.t1);
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        },
    );
    let termination = match end {
        DriveEnd::Reached => PhaseTermination::Reached,
        DriveEnd::Stopped => PhaseTermination::BlowUp {
            s: blown.unwrap_or(s_end),
        },
        DriveEnd::StepLimit { t } => PhaseTermination::StepLimitExceeded { s: dir * t },
        DriveEnd::Underflow { t } => PhaseTermination::StepUnderflow { s: dir * t },
    };
    Ok(PhaseTrajectory {
        alpha,
        beta,
        samples,
        termination,
    })
}

/// CSV `s,u,v` at full precision.
pub fn write_phase_csv<W: Write>(states: &[PhaseState], mut w: W) -> std::io::Result<()> {
    writeln!(w, "s,u,v")?;
    for p in states {
        writeln!(w, "{:.16e},{:.16e},{:.16e}", p.s, p.u, p.v)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{integrate, IvpSpec};
    use crate::model::{closed_form_m1, State};

    #[test]
    fn rhs_vanishes_at_fixed_points() {
        for (a, b) in [(1.0, 1.0), (-0.5, -2.0), (0.125, -0.75), (3.0, 0.5)] {
            for fp in fixed_points(a, b).unwrap() {
                let (du, dv) = phase_rhs(a, b, fp.u, fp.v);
                assert!(du.abs() < 1e-12 && dv.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn origin_is_degenerate() {
        let fp = fixed_points(1.0, 1.0).unwrap();
        assert_eq!(fp[0].kind, FixedPointKind::Degenerate);
        assert_eq!(fixed_points(1.0, 2.0).unwrap().len(), 1);
    }

    #[test]
    fn eigenvalue_classes() {
        let k = |j: [[f64; 2]; 2]| classify_fixed_point(&j).0;
        assert_eq!(k([[-1.0, 0.0], [0.0, 2.0]]), FixedPointKind::Saddle);
        assert_eq!(k([[-1.0, 0.0], [0.0, -2.0]]), FixedPointKind::StableNode);
        assert_eq!(k([[1.0, 0.0], [0.0, 2.0]]), FixedPointKind::UnstableNode);
        assert_eq!(k([[-1.0, -3.0], [3.0, -1.0]]), FixedPointKind::StableFocus);
        assert_eq!(k([[1.0, -3.0], [3.0, 1.0]]), FixedPointKind::UnstableFocus);
        assert_eq!(k([[0.0, -1.0], [1.0, 0.0]]), FixedPointKind::Center);
        let ev = eigenvalues(&[[2.0, 1.0], [1.0, 2.0]]);
        assert!((ev[0].0 - 1.0).abs() < 1e-15 && (ev[1].0 - 3.0).abs() < 1e-15);
    }

    #[test]
    fn nontrivial_fixed_point_for_temperature_family() {
        // m = 1.1: u* = -1/6 and trace (4 - 3m) / 6 > 0.
        let (a, b) = (1.05, 1.1);
        let fp = fixed_points(a, b).unwrap();
        assert!((fp[1].u + 1.0 / 6.0).abs() < 1e-15);
        assert!((fp[1].v - 1.0 / 18.0).abs() < 1e-15);
        assert_eq!(fp[1].kind, FixedPointKind::UnstableFocus);
    }

    #[test]
    fn transform_of_closed_form() {
        let cf = closed_form_m1(5.0);
        let prof = integrate(&IvpSpec::new(cf.params(), cf.state(0.0), 5.0)).unwrap();
        let ph = to_phase(&prof, 0.0, 5.0).unwrap();
        assert_eq!(ph[0].s, 0.0);
        // s(t) = c t - (1 - e^{-ct}) / c^2
        let c = match cf.constants {
            crate::model::ClosedFormConstants::M1 { c } => c,
            _ => unreachable!(),
        };
        let last = ph.last().unwrap();
        let exact = c * 5.0 - (1.0 - (-c * 5.0f64).exp()) / (c * c);
        assert!((last.s - exact).abs() < 1e-8, "{} vs {exact}", last.s);
        let st = cf.state(5.0);
        assert!((last.u - st.fp / (st.f * st.f)).abs() < 1e-8);
        assert!((last.v - st.fpp / (st.f * st.f * st.f)).abs() < 1e-8);
    }

    #[test]
    fn rejects_zero_of_f() {
        let cf = closed_form_m1(5.0);
        let prof = integrate(&IvpSpec::new(cf.params(), cf.state(0.0), 30.0)).unwrap();
        assert!(matches!(
            to_phase(&prof, 0.0, 30.0),
            Err(Error::FVanishes { .. })
        ));
        let iv = sign_constant_intervals(&prof);
        assert_eq!(iv.len(), 2);
        assert!(iv[0].1 < iv[1].0);
        let ph = to_phase_default(&prof).unwrap();
        assert!(ph.iter().all(|p| p.u.is_finite() && p.v.is_finite()));
    }

    #[test]
    fn phase_integration_backwards() {
        let tr = integrate_phase(1.0, 1.0, (0.1, 0.02), -2.0, &PhaseOptions::default()).unwrap();
        assert_eq!(tr.termination, PhaseTermination::Reached);
        assert_eq!(tr.samples.last().unwrap().s, -2.0);
        let end = *tr.samples.last().unwrap();
        let fwd = integrate_phase(1.0, 1.0, (end.u, end.v), 2.0, &PhaseOptions::default()).unwrap();
        let back = fwd.samples.last().unwrap();
        assert!((back.u - 0.1).abs() < 1e-7 && (back.v - 0.02).abs() < 1e-7);
    }

    #[test]
    fn csv_header() {
        let mut buf = Vec::new();
        write_phase_csv(
            &[PhaseState {
                s: 0.0,
                u: 1.0,
                v: 2.0,
            }],
            &mut buf,
        )
        .unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("s,u,v\n"));
    }

    #[test]
    fn flat_profile_intervals() {
        let params = crate::model::ModelParams::generic(1.0, 1.0, 0.0).unwrap();
        let prof = integrate(&IvpSpec::new(params, State::new(2.0, 0.0, 0.0), 5.0)).unwrap();
        assert_eq!(sign_constant_intervals(&prof), vec![(0.0, 5.0)]);
    }
}
