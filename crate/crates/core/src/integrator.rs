//! Forward integration of the initial value problem with blow-up and
//! sign-change events.

use std::io::Write;
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::model::{ModelParams, State};
use crate::ode::{self, DriveEnd, DriveOptions, Step, Tolerances};

pub const DEFAULT_REL_TOL: f64 = 1e-8;
pub const DEFAULT_ABS_TOL: f64 = 1e-10;
pub const DEFAULT_BLOWUP_THRESHOLD: f64 = 1e6;
pub const DEFAULT_MAX_STEPS: usize = 2_000_000;
/// Values with magnitude at or below this are treated as having no sign.
pub const SIGN_DEAD_BAND: f64 = 1e-12;
/// Resolution of event and blow-up time location.
pub const EVENT_T_RESOLUTION: f64 = 1e-8;

/// Finite horizon standing in for `t = inf`: `50 max(1, 1/max(|alpha|, 0.1))`.
///
/// Empirical; the closed forms decay well within it.
pub fn default_t_max(alpha: f64) -> f64 {
    let alpha_eff = alpha.abs().max(0.1);
    50.0 * (1.0f64).max(1.0 / alpha_eff)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IvpSpec {
    pub params: ModelParams,
    pub initial: State,
    pub t_max: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub blowup_threshold: f64,
    /// Also stop (as a blow-up) once `|f|` alone exceeds this.
    pub escape_threshold: Option<f64>,
    /// Stop as soon as `f < 0` and `f' < 0` hold together.
    pub stop_on_negative_descent: bool,
    pub max_steps: usize,
    /// Upper bound on the step size; `None` means `t_max / 500`, which keeps
    /// at least a few hundred samples in the final decade of the horizon.
    pub max_step: Option<f64>,
}

impl IvpSpec {
    pub fn new(params: ModelParams, initial: State, t_max: f64) -> Self {
        Self {
            params,
            initial,
            t_max,
            rel_tol: DEFAULT_REL_TOL,
            abs_tol: DEFAULT_ABS_TOL,
            blowup_threshold: DEFAULT_BLOWUP_THRESHOLD,
            escape_threshold: None,
            stop_on_negative_descent: false,
            max_steps: DEFAULT_MAX_STEPS,
            max_step: None,
        }
    }

    pub fn with_tolerances(mut self, rel_tol: f64, abs_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self.abs_tol = abs_tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let in_range = |x: f64| x > 0.0 && x <= 1e-2;
        if !in_range(self.rel_tol) || !in_range(self.abs_tol) {
            return Err(Error::InvalidInput(format!(
                "tolerances must lie in (0, 1e-2], got rel {} abs {}",
                self.rel_tol, self.abs_tol
            )));
        }
        if !(self.t_max.is_finite() && self.t_max > 0.0) {
            return Err(Error::InvalidInput(format!(
                "t_max must be positive, got {}",
                self.t_max
            )));
        }
        if !(self.blowup_threshold > 0.0) || self.escape_threshold.is_some_and(|e| !(e > 0.0)) {
            return Err(Error::InvalidInput(
                "blow-up thresholds must be positive".into(),
            ));
        }
        if !self.initial.is_finite() {
            return Err(Error::InvalidInput("initial state must be finite".into()));
        }
        if let Some(h) = self.max_step {
            if !(h > 0.0) {
                return Err(Error::InvalidInput("max_step must be positive".into()));
            }
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidInput("max_steps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Termination {
    ReachedTmax,
    BlowUp {
        t_stop: f64,
    },
    /// `f` and `f'` both became negative (only when requested by the spec).
    NegativeDescent {
        t_stop: f64,
    },
    StepLimitExceeded {
        t: f64,
    },
    StepUnderflow {
        t: f64,
    },
}

impl Termination {
    pub fn label(&self) -> &'static str {
        match self {
            Termination::ReachedTmax => "reached_tmax",
            Termination::BlowUp { .. } => "blow_up",
            Termination::NegativeDescent { .. } => "negative_descent",
            Termination::StepLimitExceeded { .. } => "step_limit_exceeded",
            Termination::StepUnderflow { .. } => "step_underflow",
        }
    }

    pub fn is_failure(&self) -> bool {
        matches!(
            self,
            Termination::StepLimitExceeded { .. } | Termination::StepUnderflow { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    FppSignChange,
    FpSignChange,
    FZeroCrossing,
}

impl EventKind {
    fn component(self) -> usize {
        match self {
            EventKind::FZeroCrossing => 0,
            EventKind::FpSignChange => 1,
            EventKind::FppSignChange => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub state: State,
}

/// A sampled trajectory: one sample per accepted step, plus the terminal one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub params: ModelParams,
    pub t_max: f64,
    pub samples: Vec<Sample>,
    pub termination: Termination,
    pub events: Vec<Event>,
}

/// Sign with a dead band; `0` inside it.
pub fn dead_band_sign(x: f64) -> i8 {
    if x > SIGN_DEAD_BAND {
        1
    } else if x < -SIGN_DEAD_BAND {
        -1
    } else {
        0
    }
}

fn bisect_time(mut lo: f64, mut hi: f64, mut above: impl FnMut(f64) -> bool) -> f64 {
    // `above(lo) == false`, `above(hi) == true`; returns the first `true` side.
    while hi - lo > EVENT_T_RESOLUTION * hi.abs().max(1.0) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if above(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

const EVENT_KINDS: [EventKind; 3] = [
    EventKind::FZeroCrossing,
    EventKind::FpSignChange,
    EventKind::FppSignChange,
];

struct Recorder {
    samples: Vec<Sample>,
    events: Vec<Event>,
    last_sign: [i8; 3],
    threshold: f64,
    escape: f64,
    descent: bool,
    blowup: Option<f64>,
    descended: bool,
}

fn descending(y: &[f64; 3]) -> bool {
    y[0] < -SIGN_DEAD_BAND && y[1] < -SIGN_DEAD_BAND
}

impl Recorder {
    fn on_step(&mut self, step: &Step<3>) -> ControlFlow<()> {
        let mut t_end = step.t1;
        let mut y_end = step.y1;
        let (threshold, escape) = (self.threshold, self.escape);
        let over = |y: &[f64; 3]| {
            !(y.iter().fold(0.0f64, |m, v| m.max(v.abs())) <= threshold && y[0].abs() <= escape)
        };
        if over(&step.y1) {
            let t_stop = bisect_time(step.t0, step.t1, |t| over(&step.interpolate(t)));
            t_end = t_stop;
            y_end = step.interpolate(t_stop);
            if !State::from_array(y_end).is_finite() {
                y_end = step.y0;
                t_end = step.t0.max(t_stop);
            }
            self.blowup = Some(t_end);
        } else if self.descent && descending(&step.y1) {
            let t_stop = bisect_time(step.t0, step.t1, |t| descending(&step.interpolate(t)));
            t_end = t_stop;
            y_end = step.interpolate(t_stop);
            self.blowup = Some(t_end);
            self.descended = true;
        }

        self.detect_events(step, t_end, &y_end);
        self.samples.push(Sample {
            t: t_end,
            state: State::from_array(y_end),
        });
        if self.blowup.is_some() {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    }

    fn detect_events(&mut self, step: &Step<3>, t_end: f64, y_end: &[f64; 3]) {
        for kind in EVENT_KINDS {
            let c = kind.component();
            let s_new = dead_band_sign(y_end[c]);
            if s_new == 0 {
                continue;
            }
            let s_old = self.last_sign[c];
            if s_old != 0 && s_new != s_old {
                let t_ev = if step.y0[c].signum() != y_end[c].signum() {
                    let s_end = y_end[c].signum();
                    bisect_time(step.t0, t_end, |t| step.interpolate(t)[c].signum() == s_end)
                } else {
                    step.t0
                };
                self.events.push(Event { t: t_ev, kind });
            }
            self.last_sign[c] = s_new;
        }
    }
}

/// Integrates `spec` forward from `t = 0`.
///
/// Only invalid specs are errors; step-limit and step-underflow outcomes come
/// back as a [`Termination`] on the (partial) profile.
pub fn integrate(spec: &IvpSpec) -> Result<Profile> {
    spec.validate()?;
    let (alpha, beta) = (spec.params.alpha(), spec.params.beta());
    let sys = move |y: &[f64; 3]| [y[1], y[2], -alpha * y[0] * y[2] + beta * y[1] * y[1]];
    let y0 = spec.initial.to_array();
    let opts = DriveOptions {
        tol: Tolerances {
            rel: spec.rel_tol,
            abs: spec.abs_tol,
        },
        max_steps: spec.max_steps,
        max_step: spec.max_step.unwrap_or(spec.t_max / 500.0),
    };
    let mut rec = Recorder {
        samples: vec![Sample {
            t: 0.0,
            state: spec.initial,
        }],
        events: Vec::new(),
        last_sign: y0.map(dead_band_sign),
        threshold: spec.blowup_threshold,
        escape: spec.escape_threshold.unwrap_or(f64::INFINITY),
        descent: spec.stop_on_negative_descent,
        blowup: None,
        descended: false,
    };
    let termination = if spec.initial.norm() > spec.blowup_threshold
        || spec.initial.f.abs() > spec.escape_threshold.unwrap_or(f64::INFINITY)
    {
        Termination::BlowUp { t_stop: 0.0 }
    } else if spec.stop_on_negative_descent && descending(&y0) {
        Termination::NegativeDescent { t_stop: 0.0 }
    } else {
        match ode::drive(&sys, 0.0, y0, spec.t_max, &opts, |s| rec.on_step(s)) {
            DriveEnd::Reached => Termination::ReachedTmax,
            DriveEnd::Stopped => {
                let t_stop = rec.blowup.unwrap_or(spec.t_max);
                if rec.descended {
                    Termination::NegativeDescent { t_stop }
                } else {
                    Termination::BlowUp { t_stop }
                }
            }
            DriveEnd::StepLimit { t } => Termination::StepLimitExceeded { t },
            DriveEnd::Underflow { t } => Termination::StepUnderflow { t },
        }
    };
    Ok(Profile {
        params: spec.params,
        t_max: spec.t_max,
        samples: rec.samples,
        termination,
        events: rec.events,
    })
}

/// `t -> (k f(k t), k^2 f'(k t), k^3 f''(k t))` on the grid `t_i / k`.
pub fn scale_solution(profile: &Profile, kappa: f64) -> Result<Profile> {
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(Error::InvalidInput(format!(
            "kappa must be positive, got {kappa}"
        )));
    }
    let (k2, k3) = (kappa * kappa, kappa * kappa * kappa);
    let samples = profile
        .samples
        .iter()
        .map(|s| Sample {
            t: s.t / kappa,
            state: State::new(kappa * s.state.f, k2 * s.state.fp, k3 * s.state.fpp),
        })
        .collect();
    let termination = match profile.termination {
        Termination::ReachedTmax => Termination::ReachedTmax,
        Termination::BlowUp { t_stop } => Termination::BlowUp {
            t_stop: t_stop / kappa,
        },
        Termination::NegativeDescent { t_stop } => Termination::NegativeDescent {
            t_stop: t_stop / kappa,
        },
        Termination::StepLimitExceeded { t } => Termination::StepLimitExceeded { t: t / kappa },
        Termination::StepUnderflow { t } => Termination::StepUnderflow { t: t / kappa },
    };
    let events = profile
        .events
        .iter()
        .map(|e| Event {
            t: e.t / kappa,
            kind: e.kind,
        })
        .collect();
    let gamma = -kappa * profile.samples[0].state.f;
    Ok(Profile {
        params: profile.params.with_gamma(gamma),
        t_max: profile.t_max / kappa,
        samples,
        termination,
        events,
    })
}

impl Profile {
    /// Wraps externally computed samples (e.g. a closed form) and runs the
    /// same event detector over them.
    pub fn from_samples(
        params: ModelParams,
        samples: Vec<Sample>,
        termination: Termination,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput(
                "profile needs at least one sample".into(),
            ));
        }
        if samples.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(Error::InvalidInput(
                "sample times must be strictly increasing".into(),
            ));
        }
        let deriv = |s: &State| [s.fp, s.fpp, params.rhs(s)];
        let mut rec = Recorder {
            samples: Vec::new(),
            events: Vec::new(),
            last_sign: samples[0].state.to_array().map(dead_band_sign),
            threshold: f64::INFINITY,
            escape: f64::INFINITY,
            descent: false,
            blowup: None,
            descended: false,
        };
        for w in samples.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            let step = Step {
                t0: a.t,
                y0: a.state.to_array(),
                dy0: deriv(&a.state),
                t1: b.t,
                y1: b.state.to_array(),
                dy1: deriv(&b.state),
            };
            rec.detect_events(&step, b.t, &step.y1);
        }
        let t_max = samples.last().map(|s| s.t).unwrap_or(0.0);
        Ok(Self {
            params,
            t_max,
            samples,
            termination,
            events: rec.events,
        })
    }

    pub fn first(&self) -> &Sample {
        &self.samples[0]
    }

    pub fn last(&self) -> &Sample {
        self.samples
            .last()
            .expect("profile has at least the initial sample")
    }

    pub fn final_state(&self) -> State {
        self.last().state
    }

    pub fn reached_tmax(&self) -> bool {
        self.termination == Termination::ReachedTmax
    }

    pub fn count_events(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    fn derivative(&self, s: &State) -> [f64; 3] {
        [s.fp, s.fpp, self.params.rhs(s)]
    }

    /// Cubic Hermite dense output, clamped to the sampled range.
    pub fn state_at(&self, t: f64) -> State {
        let ss = &self.samples;
        if t <= ss[0].t {
            return ss[0].state;
        }
        if t >= self.last().t {
            return self.last().state;
        }
        let i = ss.partition_point(|s| s.t <= t);
        let (a, b) = (&ss[i - 1], &ss[i]);
        let y = ode::hermite(
            a.t,
            &a.state.to_array(),
            &self.derivative(&a.state),
            b.t,
            &b.state.to_array(),
            &self.derivative(&b.state),
            t,
        );
        State::from_array(y)
    }

    /// `f(t)` by quintic Hermite interpolation, using `f`, `f'` and `f''` at
    /// both ends of the containing step.
    pub fn f_at(&self, t: f64) -> f64 {
        let ss = &self.samples;
        if t <= ss[0].t {
            return ss[0].state.f;
        }
        if t >= self.last().t {
            return self.last().state.f;
        }
        let i = ss.partition_point(|s| s.t <= t);
        let (a, b) = (&ss[i - 1].state, &ss[i].state);
        let h = ss[i].t - ss[i - 1].t;
        let x = (t - ss[i - 1].t) / h;
        let (x2, x3) = (x * x, x * x * x);
        let (x4, x5) = (x3 * x, x3 * x2);
        let h0 = 1.0 - 10.0 * x3 + 15.0 * x4 - 6.0 * x5;
        let h1 = x - 6.0 * x3 + 8.0 * x4 - 3.0 * x5;
        let h2 = 0.5 * (x2 - 3.0 * x3 + 3.0 * x4 - x5);
        let h3 = 0.5 * (x3 - 2.0 * x4 + x5);
        let h4 = -4.0 * x3 + 7.0 * x4 - 3.0 * x5;
        h0 * a.f
            + (1.0 - h0) * b.f
            + h * (h1 * a.fp + h4 * b.fp)
            + h * h * (h2 * a.fpp + h3 * b.fpp)
    }

    /// Largest max-norm of the state over all samples.
    pub fn max_norm(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.state.norm()))
    }

    /// CSV with header `t,f,fp,fpp`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,f,fp,fpp")?;
        for s in &self.samples {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e}",
                s.t, s.state.f, s.state.fp, s.state.fpp
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV is ASCII")
    }

    /// Summary record: parameters, termination, events and endpoints.
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "spec_version": "1",
            "family": self.params.family().name(),
            "m": self.params.m(),
            "alpha": self.params.alpha(),
            "beta": self.params.beta(),
            "gamma": self.params.gamma(),
            "t_max": self.t_max,
            "termination": self.termination,
            "event_log": self.events,
            "n_samples": self.samples.len(),
            "initial": self.first(),
            "final": self.last(),
        })
    }
}
