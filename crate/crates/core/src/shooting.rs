//! Shooting on the free boundary value: residuals, root location, solution
//! enumeration and critical-gamma search.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::classify::{self, ShapeClass, MIN_R_SQUARED};
use crate::error::{Error, Result};
use crate::integrator::{
    default_t_max, integrate, IvpSpec, Profile, Termination, DEFAULT_ABS_TOL, DEFAULT_REL_TOL,
};
use crate::model::{Family, ModelParams};

pub const DEFAULT_BC_TOL: f64 = 1e-6;
/// Free values closer than this are the same solution.
pub const DEDUP_RESOLUTION: f64 = 1e-6;
const ROOT_REL_TOL: f64 = 1e-12;
const SECANT_SWITCH: f64 = 1e-7;
const DECAY_MIN_R_SQUARED: f64 = 0.9;
/// Max-norm stop for shots; blow-up proper is judged on `|f|` alone.
const FLOAT_GUARD: f64 = 1e100;

/// Integration and acceptance settings shared by every shot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShootSettings {
    /// `None` uses the default horizon for the equation's `alpha`.
    pub t_max: Option<f64>,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub bc_tol: f64,
    pub max_steps: usize,
    /// Shots stop as blown up once `|f|` exceeds this (or 100 times the
    /// initial state's size, if larger).
    pub blowup_threshold: f64,
    /// Horizon doublings tried before a root is rejected as unbounded.
    pub max_doublings: u32,
    /// Band members are re-integrated to `tail_factor * t_max`.
    pub tail_factor: f64,
    /// Growth exponents are fitted on `asymptotic_factor * t_max`.
    pub asymptotic_factor: f64,
    pub band_representatives: usize,
}

impl Default for ShootSettings {
    fn default() -> Self {
        Self {
            t_max: None,
            rel_tol: DEFAULT_REL_TOL,
            abs_tol: DEFAULT_ABS_TOL,
            bc_tol: DEFAULT_BC_TOL,
            blowup_threshold: 1e3,
            max_steps: 500_000,
            max_doublings: 4,
            tail_factor: 10.0,
            asymptotic_factor: 250.0,
            band_representatives: 5,
        }
    }
}

impl ShootSettings {
    pub fn horizon(&self, params: &ModelParams) -> f64 {
        self.t_max.unwrap_or_else(|| default_t_max(params.alpha()))
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.t_max {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "t_max must be positive, got {t}"
                )));
            }
        }
        if !(self.bc_tol.is_finite() && self.bc_tol > 0.0) {
            return Err(Error::InvalidInput(format!(
                "bc_tol must be positive, got {}",
                self.bc_tol
            )));
        }
        if !(self.tail_factor >= 1.0 && self.asymptotic_factor >= 1.0) {
            return Err(Error::InvalidInput("horizon factors must be >= 1".into()));
        }
        Ok(())
    }

    fn spec(&self, params: &ModelParams, free_value: f64, t_max: f64) -> Result<IvpSpec> {
        let bc = params.boundary_conditions(free_value)?;
        let mut spec = IvpSpec::new(*params, bc.initial_state(), t_max)
            .with_tolerances(self.rel_tol, self.abs_tol);
        spec.escape_threshold = Some(self.blowup_threshold.max(100.0 * bc.initial_state().norm()));
        spec.blowup_threshold = FLOAT_GUARD;
        spec.stop_on_negative_descent = true;
        spec.max_steps = self.max_steps;
        Ok(spec)
    }
}

/// Free-value scan grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRange {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl ScanRange {
    pub fn new(lo: f64, hi: f64, step: f64) -> Result<Self> {
        let r = Self { lo, hi, step };
        r.validate()?;
        Ok(r)
    }

    /// `[-10 (1 + |gamma|), 10 (1 + |gamma|)]` in steps of `0.01`.
    pub fn default_for(gamma: f64) -> Self {
        let w = 10.0 * (1.0 + gamma.abs());
        Self {
            lo: -w,
            hi: w,
            step: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(Error::InvalidInput(format!(
                "scan step must be positive, got {}",
                self.step
            )));
        }
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::InvalidInput(format!(
                "bad scan range [{}, {}]",
                self.lo, self.hi
            )));
        }
        if (self.hi - self.lo) / self.step > 1e7 {
            return Err(Error::InvalidInput("scan grid exceeds 1e7 points".into()));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<f64> {
        let n = ((self.hi - self.lo) / self.step - 1e-9).ceil() as usize;
        (0..=n)
            .map(|i| (self.lo + i as f64 * self.step).min(self.hi))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShotOutcome {
    Evaluated,
    BlewUpPositive,
    BlewUpNegative,
    /// `f` and `f'` both turned negative; no admissible profile does this.
    Descended,
}

/// `f'(t_max)` for one free value, or the direction of a blow-up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShootResidual {
    pub free_value: f64,
    /// `f'` at the last sample (the horizon unless the shot blew up).
    pub residual: f64,
    pub outcome: ShotOutcome,
}

impl ShootResidual {
    /// Residual sign extended by the blow-up direction.
    pub fn sign(&self) -> i8 {
        match self.outcome {
            ShotOutcome::Evaluated => {
                if self.residual >= 0.0 {
                    1
                } else {
                    -1
                }
            }
            ShotOutcome::BlewUpPositive => 1,
            ShotOutcome::BlewUpNegative | ShotOutcome::Descended => -1,
        }
    }

    pub fn evaluated(&self) -> bool {
        self.outcome == ShotOutcome::Evaluated
    }
}

fn residual_of(profile: &Profile, free_value: f64) -> Result<ShootResidual> {
    let last = profile.final_state();
    let outcome = match profile.termination {
        Termination::ReachedTmax => ShotOutcome::Evaluated,
        Termination::NegativeDescent { .. } => ShotOutcome::Descended,
        Termination::BlowUp { .. } => {
            let dir = if last.f != 0.0 { last.f } else { last.fp };
            if dir > 0.0 {
                ShotOutcome::BlewUpPositive
            } else {
                ShotOutcome::BlewUpNegative
            }
        }
        t => {
            return Err(Error::Indeterminate {
                free_value,
                reason: format!("{} at t = {}", t.label(), profile.last().t),
            })
        }
    };
    Ok(ShootResidual {
        free_value,
        residual: last.fp,
        outcome,
    })
}

fn shoot(params: &ModelParams, free_value: f64, t_max: f64, s: &ShootSettings) -> Result<Profile> {
    integrate(&s.spec(params, free_value, t_max)?)
}

fn residual_at(
    params: &ModelParams,
    x: f64,
    t_max: f64,
    s: &ShootSettings,
) -> Result<ShootResidual> {
    residual_of(&shoot(params, x, t_max, s)?, x)
}

/// Residual at the settings' horizon.
pub fn evaluate_residual(
    params: &ModelParams,
    free_value: f64,
    settings: &ShootSettings,
) -> Result<ShootResidual> {
    if params.family() == Family::Generic {
        return Err(Error::Precondition(
            "shooting needs a physical family".into(),
        ));
    }
    settings.validate()?;
    residual_at(params, free_value, settings.horizon(params), settings)
}

/// Bisection, then Illinois false position once the bracket is narrow and
/// both ends are ordinary residuals.
fn refine_root(
    eval: impl Fn(f64) -> Result<ShootResidual>,
    mut a: ShootResidual,
    mut b: ShootResidual,
) -> Result<ShootResidual> {
    if a.free_value > b.free_value {
        std::mem::swap(&mut a, &mut b);
    }
    let (mut wa, mut wb) = (1.0, 1.0);
    let mut last_side = 0i8;
    for _ in 0..300 {
        let width = b.free_value - a.free_value;
        let scale = a.free_value.abs().max(b.free_value.abs()).max(1.0);
        if width <= ROOT_REL_TOL * scale {
            break;
        }
        let mid = 0.5 * (a.free_value + b.free_value);
        let x = if a.evaluated() && b.evaluated() && width < SECANT_SWITCH * scale {
            let (fa, fb) = (wa * a.residual, wb * b.residual);
            let x = b.free_value - fb * width / (fb - fa);
            if x.is_finite() && x > a.free_value && x < b.free_value {
                x
            } else {
                mid
            }
        } else {
            mid
        };
        let r = eval(x)?;
        if r.evaluated() && r.residual == 0.0 {
            return Ok(r);
        }
        if r.sign() == a.sign() {
            a = r;
            wa = 1.0;
            if last_side == -1 {
                wb *= 0.5;
            }
            last_side = -1;
        } else {
            b = r;
            wb = 1.0;
            if last_side == 1 {
                wa *= 0.5;
            }
            last_side = 1;
        }
    }
    Ok(match (a.evaluated(), b.evaluated()) {
        (true, true) if a.residual.abs() <= b.residual.abs() => a,
        (true, true) => b,
        (true, false) => a,
        (false, true) => b,
        (false, false) => eval(0.5 * (a.free_value + b.free_value))?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailKind {
    /// `f -> lambda` with `f' -> 0`, located as a root of the residual.
    Converges,
    /// `f -> 0` like a negative power of `t`.
    AlgebraicDecay,
    /// `|f| -> infinity` like a positive power of `t` below one.
    AlgebraicGrowth,
}

/// A continuous range of admissible free values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
    pub tail: TailKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub params: ModelParams,
    pub free_value: f64,
    pub bounded: bool,
    pub limit_lambda: Option<f64>,
    pub shape: ShapeClass,
    pub growth_exponent: Option<f64>,
    pub tail: TailKind,
    /// Fitted power of `t` for algebraic tails.
    pub tail_exponent: Option<f64>,
    /// Set when this record represents a band.
    pub band: Option<Band>,
    pub profile: Profile,
}

impl SolutionRecord {
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "spec_version": "1",
            "family": self.params.family().name(),
            "m": self.params.m(),
            "gamma": self.params.gamma(),
            "alpha": self.params.alpha(),
            "beta": self.params.beta(),
            "free_value": self.free_value,
            "bounded": self.bounded,
            "lambda": self.limit_lambda,
            "shape": self.shape.label(),
            "growth_exponent": self.growth_exponent,
            "tail": self.tail,
            "tail_exponent": self.tail_exponent,
            "band": self.band,
            "t_max": self.profile.t_max,
            "termination": self.profile.termination,
            "final": self.profile.final_state(),
        })
    }
}

fn flat_at_horizon(profile: &Profile, bc_tol: f64) -> bool {
    if !profile.reached_tmax() {
        return false;
    }
    let end = profile.final_state();
    let t = profile.last().t;
    end.fp.abs() < bc_tol && (end.f - profile.state_at(0.9 * t).f).abs() < 100.0 * bc_tol
}

fn root_record(params: &ModelParams, profile: Profile, free_value: f64) -> Result<SolutionRecord> {
    let shape = classify::classify_shape(&profile)?;
    Ok(SolutionRecord {
        params: *params,
        free_value,
        bounded: true,
        limit_lambda: Some(profile.final_state().f),
        shape,
        growth_exponent: None,
        tail: TailKind::Converges,
        tail_exponent: None,
        band: None,
        profile,
    })
}

/// Bracket with the orientation of `(lo, hi)` at a new horizon: the
/// original one if it still changes sign, else growing intervals around the
/// previous root.
fn rebracket(
    params: &ModelParams,
    lo: ShootResidual,
    hi: ShootResidual,
    centre: f64,
    t_max: f64,
    s: &ShootSettings,
) -> Result<Option<(ShootResidual, ShootResidual)>> {
    let oriented = |x0: f64, x1: f64| -> Result<Option<(ShootResidual, ShootResidual)>> {
        let a = residual_at(params, x0, t_max, s)?;
        if a.sign() != lo.sign() {
            return Ok(None);
        }
        let b = residual_at(params, x1, t_max, s)?;
        Ok((b.sign() == hi.sign()).then_some((a, b)))
    };
    if let Some(ab) = oriented(lo.free_value, hi.free_value)? {
        return Ok(Some(ab));
    }
    let scale = centre.abs().max(1.0);
    let mut w = 1e-9 * scale;
    while w <= 1e-2 * scale {
        if let Some(ab) = oriented(centre - w, centre + w)? {
            return Ok(Some(ab));
        }
        w *= 10.0;
    }
    Ok(None)
}

/// Refines a sign-change bracket to a root and accepts it once the profile is
/// flat at the horizon, doubling the horizon while it is not.
fn solve_bracket(
    params: &ModelParams,
    lo: ShootResidual,
    hi: ShootResidual,
    s: &ShootSettings,
) -> Result<SolutionRecord> {
    let mut t_max = s.horizon(params);
    let (mut a, mut b) = (lo, hi);
    let mut centre = 0.5 * (lo.free_value + hi.free_value);
    let mut last_reason = String::new();
    let mut candidate: Option<SolutionRecord> = None;
    for k in 0..=s.max_doublings + 1 {
        if k == s.max_doublings + 1 && candidate.is_none() {
            break;
        }
        if k > 0 {
            t_max *= 2.0;
            match rebracket(params, lo, hi, centre, t_max, s)? {
                Some((na, nb)) => (a, b) = (na, nb),
                None => {
                    last_reason = format!("bracket lost its sign change at t_max = {t_max}");
                    break;
                }
            }
        }
        let root = refine_root(|x| residual_at(params, x, t_max, s), a, b)?;
        centre = root.free_value;
        let profile = shoot(params, root.free_value, t_max, s)?;
        if !flat_at_horizon(&profile, s.bc_tol) {
            last_reason = format!(
                "profile not flat at t_max = {t_max} (f' = {:e})",
                profile.final_state().fp
            );
            candidate = None;
            continue;
        }
        let lambda = profile.final_state().f;
        if let Some(prev) = candidate.take() {
            let shift = (root.free_value - prev.free_value).abs();
            let prev_lambda = prev.limit_lambda.unwrap_or(f64::NAN);
            if shift < HORIZON_SHIFT_FACTOR * s.bc_tol
                && (lambda - prev_lambda).abs() < LAMBDA_DRIFT_TOL * prev_lambda.abs().max(1.0)
            {
                return Ok(prev);
            }
            last_reason = format!(
                "root drifts with the horizon: free value moved by {shift:e} and lambda from \
                 {prev_lambda} to {lambda} at t_max = {t_max}"
            );
        }
        candidate = Some(root_record(params, profile, root.free_value)?);
    }
    Err(Error::NotASolution {
        free_value: 0.5 * (lo.free_value + hi.free_value),
        reason: last_reason,
    })
}

/// Locates the bounded solution whose free value lies in `bracket`.
///
/// When the sign change between the endpoints turns out to be a jump rather
/// than a root, the bracket is scanned and the certified root nearest its
/// midpoint is returned.
pub fn solve_bvp(
    params: &ModelParams,
    bracket: (f64, f64),
    settings: &ShootSettings,
) -> Result<SolutionRecord> {
    let (lo, hi) = bracket;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidInput(format!("bad bracket [{lo}, {hi}]")));
    }
    let a = evaluate_residual(params, lo, settings)?;
    let b = evaluate_residual(params, hi, settings)?;
    if a.sign() == b.sign() {
        return Err(Error::NoSignChange { lo, hi });
    }
    match solve_bracket(params, a, b, settings) {
        Err(Error::NotASolution { free_value, reason }) => {
            // The sign change found first was a jump; look for a genuine root.
            let scan = ScanRange::new(lo, hi, (hi - lo) / FALLBACK_SCAN_POINTS)?;
            let mid = 0.5 * (lo + hi);
            enumerate_detailed(params, &scan, settings, false)?
                .records
                .into_iter()
                .filter(|r| r.band.is_none())
                .min_by(|x, y| {
                    (x.free_value - mid)
                        .abs()
                        .total_cmp(&(y.free_value - mid).abs())
                })
                .ok_or(Error::NotASolution { free_value, reason })
        }
        other => other,
    }
}

/// Power-law tail of one profile: exponent of `|f|` when `f` and `f'` keep
/// their signs over the final decade, `|f'|` shrinks and the log-log fit is
/// clean.
fn tail_exponent(profile: &Profile) -> Option<f64> {
    if !profile.reached_tmax() {
        return None;
    }
    let t_end = profile.last().t;
    let t_lo = t_end / 10.0;
    let end = profile.final_state();
    let (fs, fps) = (end.f.signum(), end.fp.signum());
    if end.f == 0.0
        || end.fp == 0.0
        || profile
            .samples
            .iter()
            .filter(|p| p.t >= t_lo)
            .any(|p| p.state.f.signum() != fs || p.state.fp.signum() != fps)
    {
        return None;
    }
    if !(end.fp.abs() < 0.9 * profile.state_at(t_lo).fp.abs()) {
        return None;
    }
    let fit = classify::loglog_fit(profile, t_lo, t_end).ok()?;
    let p = fit.exponent;
    if fs == fps {
        (fit.r_squared >= MIN_R_SQUARED && (0.02..0.95).contains(&p)).then_some(p)
    } else {
        // Decaying tails spiral slowly onto their power law.
        let drop = end.f.abs() / profile.state_at(t_lo).f.abs();
        (fit.r_squared >= DECAY_MIN_R_SQUARED && p <= -0.02 && drop < 0.8).then_some(p)
    }
}

/// Tests one free value for an algebraic tail, lengthening the horizon by
/// factors of ten from `tail_factor * t_base` up to
/// `asymptotic_factor * t_base`. Returns `None` when no clean power law with
/// `f' -> 0` shows up.
fn band_member(
    params: &ModelParams,
    x: f64,
    t_base: f64,
    s: &ShootSettings,
    unbounded_ok: bool,
) -> Result<Option<SolutionRecord>> {
    let t_last = s.asymptotic_factor * t_base;
    let mut t = (s.tail_factor * t_base).min(t_last);
    let (profile, p) = loop {
        let profile = shoot(params, x, t, s)?;
        if !profile.reached_tmax() {
            return Ok(None);
        }
        if let Some(p) = tail_exponent(&profile) {
            break (profile, p);
        }
        if t >= t_last {
            return Ok(None);
        }
        t = (10.0 * t).min(t_last);
    };
    // A decay must persist a decade further out; slow drifts towards a
    // small nonzero limit look like decay on a single window.
    if p < 0.0 && t < t_last {
        let longer = shoot(params, x, (10.0 * t).min(t_last), s)?;
        if !tail_exponent(&longer).is_some_and(|q| q < 0.0) {
            return Ok(None);
        }
    }
    let Ok(shape) = classify::classify_shape(&profile) else {
        return Ok(None);
    };
    let rec = if p > 0.0 {
        if !unbounded_ok {
            return Ok(None);
        }
        let exponent = if t < t_last {
            let long = shoot(params, x, t_last, s)?;
            classify::fit_asymptotic_exponent(&long)
                .map(|f| f.exponent)
                .unwrap_or(p)
        } else {
            p
        };
        SolutionRecord {
            params: *params,
            free_value: x,
            bounded: false,
            limit_lambda: None,
            shape,
            growth_exponent: Some(exponent),
            tail: TailKind::AlgebraicGrowth,
            tail_exponent: Some(exponent),
            band: None,
            profile,
        }
    } else {
        SolutionRecord {
            params: *params,
            free_value: x,
            bounded: true,
            limit_lambda: Some(0.0),
            shape,
            growth_exponent: None,
            tail: TailKind::AlgebraicDecay,
            tail_exponent: Some(p),
            band: None,
            profile,
        }
    };
    Ok(Some(rec))
}

/// Result of a full scan: records sorted by free value, detected bands and
/// per-shot diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Enumeration {
    pub records: Vec<SolutionRecord>,
    pub bands: Vec<Band>,
    pub notes: Vec<String>,
}

/// Boundary between reaching the horizon and blowing up, by bisection.
fn class_boundary(
    params: &ModelParams,
    reached: f64,
    blown: f64,
    t_max: f64,
    s: &ShootSettings,
) -> f64 {
    let (mut a, mut b) = (reached, blown);
    for _ in 0..60 {
        if (b - a).abs() <= 1e-9 * a.abs().max(1.0) {
            break;
        }
        let mid = 0.5 * (a + b);
        match residual_at(params, mid, t_max, s) {
            Ok(r) if r.evaluated() => a = mid,
            _ => b = mid,
        }
    }
    a
}

type Shot = (f64, Option<ShootResidual>);

const REFINE_LEVELS: usize = 3;
const FALLBACK_SCAN_POINTS: f64 = 200.0;
/// A certified root may move by at most this many `bc_tol` when the horizon doubles.
pub const HORIZON_SHIFT_FACTOR: f64 = 10.0;
/// Relative change of the limit allowed under a horizon doubling.
pub const LAMBDA_DRIFT_TOL: f64 = 1e-4;

fn flagged_cells(pts: &[Shot]) -> Vec<(f64, f64)> {
    pts.windows(2)
        .filter_map(|w| match (w[0].1, w[1].1) {
            (Some(a), Some(b)) if a.outcome != b.outcome || a.sign() != b.sign() => {
                Some((w[0].0, w[1].0))
            }
            _ => None,
        })
        .collect()
}

/// Golden-section search of `|f'(t_max)|` on `[lo, hi]` that stops at the
/// first shot whose sign differs from `centre`'s.
fn hidden_flip(
    params: &ModelParams,
    centre: ShootResidual,
    lo: f64,
    hi: f64,
    t_max: f64,
    s: &ShootSettings,
) -> Option<ShootResidual> {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let eval = |x: f64| {
        residual_at(params, x, t_max, s)
            .ok()
            .filter(|r| r.evaluated())
    };
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut rc = eval(c)?;
    let mut rd = eval(d)?;
    for _ in 0..50 {
        for r in [rc, rd] {
            if r.sign() != centre.sign() {
                return Some(r);
            }
        }
        if (b - a) <= 1e-10 * a.abs().max(1.0) {
            break;
        }
        if rc.residual.abs() < rd.residual.abs() {
            b = d;
            d = c;
            rd = rc;
            c = b - INV_PHI * (b - a);
            rc = eval(c)?;
        } else {
            a = c;
            c = d;
            rc = rd;
            d = a + INV_PHI * (b - a);
            rd = eval(d)?;
        }
    }
    None
}

fn scan_points(params: &ModelParams, xs: &[f64], t_max: f64, s: &ShootSettings) -> Vec<Shot> {
    xs.par_iter()
        .map(|&x| (x, residual_at(params, x, t_max, s).ok()))
        .collect()
}

/// Scans `scan`, refines every sign change to a root and samples every band
/// of algebraic-tail solutions. Unbounded band members are kept only when
/// `unbounded_ok`.
pub fn enumerate_detailed(
    params: &ModelParams,
    scan: &ScanRange,
    s: &ShootSettings,
    unbounded_ok: bool,
) -> Result<Enumeration> {
    if params.family() == Family::Generic {
        return Err(Error::Precondition(
            "shooting needs a physical family".into(),
        ));
    }
    scan.validate()?;
    s.validate()?;
    let t_max = s.horizon(params);
    let coarse = scan_points(params, &scan.points(), t_max, s);

    // Cells whose sign or outcome class changes are subdivided recursively;
    // pairs of roots and jumps of the residual often share one coarse cell.
    let mut pts = coarse;
    let mut cells: Vec<(f64, f64)> = flagged_cells(&pts);
    for _ in 0..REFINE_LEVELS {
        let extra: Vec<f64> = cells
            .iter()
            .flat_map(|&(x0, x1)| (1..10).map(move |i| x0 + (x1 - x0) * i as f64 / 10.0))
            .collect();
        if extra.is_empty() {
            break;
        }
        let fine = scan_points(params, &extra, t_max, s);
        let mut sub = Vec::new();
        for &(x0, x1) in &cells {
            let mut local: Vec<Shot> = pts
                .iter()
                .filter(|p| p.0 == x0 || p.0 == x1)
                .copied()
                .collect();
            local.extend(fine.iter().filter(|p| p.0 > x0 && p.0 < x1).copied());
            local.sort_by(|a, b| a.0.total_cmp(&b.0));
            sub.extend(flagged_cells(&local));
        }
        pts.extend(fine);
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        cells = sub;
    }

    // A root pair can hide inside one scan cell; look for it at local minima
    // of |f'(t_max)|.
    let minima: Vec<(ShootResidual, f64, f64)> = (1..pts.len().saturating_sub(1))
        .filter_map(|i| match (pts[i - 1].1, pts[i].1, pts[i + 1].1) {
            (Some(a), Some(b), Some(c))
                if a.evaluated()
                    && b.evaluated()
                    && c.evaluated()
                    && a.sign() == b.sign()
                    && b.sign() == c.sign()
                    && b.residual.abs() <= a.residual.abs()
                    && b.residual.abs() <= c.residual.abs() =>
            {
                Some((b, pts[i - 1].0, pts[i + 1].0))
            }
            _ => None,
        })
        .collect();
    let flips: Vec<Shot> = minima
        .par_iter()
        .filter_map(|&(b, lo, hi)| hidden_flip(params, b, lo, hi, t_max, s))
        .map(|r| (r.free_value, Some(r)))
        .collect();
    if !flips.is_empty() {
        pts.extend(flips);
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    }

    let mut notes: Vec<String> = pts
        .iter()
        .filter(|(_, r)| r.is_none())
        .map(|(x, _)| format!("indeterminate shot at free value {x}"))
        .collect();

    let brackets: Vec<(usize, ShootResidual, ShootResidual)> = pts
        .windows(2)
        .enumerate()
        .filter_map(|(i, w)| match (w[0].1, w[1].1) {
            (Some(a), Some(b)) if a.sign() != b.sign() => Some((i, a, b)),
            _ => None,
        })
        .collect();
    let solved: Vec<(usize, Result<SolutionRecord>)> = brackets
        .par_iter()
        .map(|&(i, a, b)| (i, solve_bracket(params, a, b, s)))
        .collect();

    let mut records = Vec::new();
    // Index of the left point of each bracket -> root free value.
    let mut root_at: Vec<Option<f64>> = vec![None; pts.len()];
    for (i, res) in solved {
        match res {
            Ok(rec) => {
                root_at[i] = Some(rec.free_value);
                records.push(rec);
            }
            Err(e) => notes.push(e.to_string()),
        }
    }

    // Runs of consecutive same-sign points that reached the horizon.
    let mut segments: Vec<(f64, f64)> = Vec::new();
    let mut i = 0;
    while i < pts.len() {
        let Some(r) = pts[i].1.filter(|r| r.evaluated()) else {
            i += 1;
            continue;
        };
        let mut j = i;
        while j + 1 < pts.len()
            && pts[j + 1]
                .1
                .is_some_and(|q| q.evaluated() && q.sign() == r.sign())
        {
            j += 1;
        }
        let edge = |inner: usize, outer: Option<usize>, bracket_left: Option<usize>| -> f64 {
            let x_in = pts[inner].0;
            match outer {
                None => x_in,
                Some(o) => {
                    if let Some(root) = bracket_left.and_then(|b| root_at[b]) {
                        return root;
                    }
                    match pts[o].1 {
                        Some(q) if !q.evaluated() => {
                            class_boundary(params, x_in, pts[o].0, t_max, s)
                        }
                        Some(_) => 0.5 * (x_in + pts[o].0),
                        None => x_in,
                    }
                }
            }
        };
        let lo = edge(i, i.checked_sub(1), i.checked_sub(1));
        let hi = edge(j, (j + 1 < pts.len()).then_some(j + 1), Some(j));
        if hi > lo {
            segments.push((lo, hi));
        }
        i = j + 1;
    }

    let n_rep = s.band_representatives.max(1);
    let candidates: Vec<(usize, f64)> = segments
        .iter()
        .enumerate()
        .flat_map(|(k, &(lo, hi))| {
            (1..=n_rep).map(move |r| (k, lo + (hi - lo) * r as f64 / (n_rep + 1) as f64))
        })
        .collect();
    let members: Vec<(usize, f64, Result<Option<SolutionRecord>>)> = candidates
        .par_iter()
        .map(|&(k, x)| (k, x, band_member(params, x, t_max, s, unbounded_ok)))
        .collect();

    let mut bands = Vec::new();
    for (k, &(lo, hi)) in segments.iter().enumerate() {
        let mut accepted: Vec<SolutionRecord> = Vec::new();
        for (_, x, res) in members.iter().filter(|m| m.0 == k) {
            match res {
                Ok(Some(rec)) => accepted.push(rec.clone()),
                Ok(None) => {}
                Err(e) => notes.push(format!("band sample at {x}: {e}")),
            }
        }
        if accepted.is_empty() {
            continue;
        }
        if accepted.len() < n_rep {
            notes.push(format!(
                "band [{lo}, {hi}]: {} of {n_rep} samples admissible",
                accepted.len()
            ));
        }
        let band = Band {
            lo,
            hi,
            tail: accepted[0].tail,
        };
        bands.push(band);
        records.extend(accepted.into_iter().map(|mut r| {
            r.band = Some(band);
            r
        }));
    }

    records.sort_by(|a, b| a.free_value.total_cmp(&b.free_value));
    records.dedup_by(|b, a| (b.free_value - a.free_value).abs() < DEDUP_RESOLUTION);
    Ok(Enumeration {
        records,
        bands,
        notes,
    })
}

/// Records only; see [`enumerate_detailed`].
pub fn enumerate_solutions(
    params: &ModelParams,
    scan: &ScanRange,
    settings: &ShootSettings,
    unbounded_ok: bool,
) -> Result<Vec<SolutionRecord>> {
    enumerate_detailed(params, scan, settings, unbounded_ok).map(|e| e.records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Above,
    Below,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalGamma {
    pub family: Family,
    pub m: f64,
    pub gamma_star: f64,
    pub bracket_width: f64,
    pub side_with_solutions: Side,
    /// Solvable at `gamma_star` plus two bracket widths on the solvable side
    /// and not on the other.
    pub verified: bool,
}

/// Bisection on `gamma` with the predicate "enumeration finds a solution".
pub fn critical_gamma(
    family: Family,
    m: f64,
    gamma_bracket: (f64, f64),
    tol: f64,
    settings: &ShootSettings,
) -> Result<CriticalGamma> {
    let (mut lo, mut hi) = gamma_bracket;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidInput(format!(
            "bad gamma bracket [{lo}, {hi}]"
        )));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::InvalidInput(format!(
            "tol must be positive, got {tol}"
        )));
    }
    let solvable = |g: f64| -> Result<bool> {
        let p = ModelParams::new(family, m, g)?;
        Ok(!enumerate_solutions(&p, &ScanRange::default_for(g), settings, true)?.is_empty())
    };
    let s_lo = solvable(lo)?;
    let s_hi = solvable(hi)?;
    if s_lo == s_hi {
        return Err(Error::SameStatusAtEndpoints { lo, hi });
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if solvable(mid)? == s_hi {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let gamma_star = 0.5 * (lo + hi);
    let w = hi - lo;
    let side = if s_hi { Side::Above } else { Side::Below };
    let (yes, no) = match side {
        Side::Above => (gamma_star + 2.0 * w, gamma_star - 2.0 * w),
        Side::Below => (gamma_star - 2.0 * w, gamma_star + 2.0 * w),
    };
    let verified = solvable(yes)? && !solvable(no)?;
    Ok(CriticalGamma {
        family,
        m,
        gamma_star,
        bracket_width: w,
        side_with_solutions: side,
        verified,
    })
}

/// Lower bound `f'(0) >= -1 / ((m + 2) gamma)` for flux solutions with
/// `-2 < m < -1` and `gamma < 0`.
pub fn verify_flux_slope_bound(free_value: f64, params: &ModelParams) -> Result<bool> {
    let m = params.m().unwrap_or(f64::NAN);
    let g = params.gamma();
    if params.family() != Family::PrescribedFlux || !(m > -2.0 && m < -1.0) || !(g < 0.0) {
        return Err(Error::Precondition(
            "slope bound needs the flux family with -2 < m < -1 and gamma < 0".into(),
        ));
    }
    Ok(free_value >= -1.0 / ((m + 2.0) * g) - 1e-9)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp(m: f64, g: f64) -> ModelParams {
        ModelParams::new(Family::PrescribedTemperature, m, g).unwrap()
    }

    #[test]
    fn scan_points_cover_range() {
        let pts = ScanRange::new(0.0, 1.0, 0.1).unwrap().points();
        assert_eq!(pts.len(), 11);
        assert_eq!(*pts.last().unwrap(), 1.0);
        let pts = ScanRange::new(0.0, 1.0, 0.3).unwrap().points();
        assert_eq!(pts, vec![0.0, 0.3, 0.6, 0.8999999999999999, 1.0]);
        assert!(ScanRange::new(0.0, 1.0, 0.0).is_err());
        assert!(ScanRange::new(1.0, 0.0, 0.1).is_err());
    }

    #[test]
    fn residual_signs() {
        let s = ShootSettings::default();
        let p = temp(1.0, 0.0);
        assert_eq!(evaluate_residual(&p, -0.5, &s).unwrap().sign(), 1);
        assert_eq!(evaluate_residual(&p, -1.5, &s).unwrap().sign(), -1);
    }

    #[test]
    fn m1_root() {
        let rec = solve_bvp(&temp(1.0, 0.0), (-2.0, 0.0), &ShootSettings::default()).unwrap();
        assert!((rec.free_value + 1.0).abs() < 1e-8, "{}", rec.free_value);
        assert!(rec.bounded);
        assert!((rec.limit_lambda.unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(rec.shape, ShapeClass::Concave);
    }

    #[test]
    fn no_sign_change_is_reported() {
        let e = solve_bvp(&temp(1.0, 0.0), (0.0, 1.0), &ShootSettings::default()).unwrap_err();
        assert_eq!(e, Error::NoSignChange { lo: 0.0, hi: 1.0 });
    }

    #[test]
    fn generic_family_refused() {
        let p = ModelParams::generic(1.0, 1.0, 0.0).unwrap();
        assert!(matches!(
            evaluate_residual(&p, 0.0, &ShootSettings::default()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn slope_bound() {
        let p = ModelParams::new(Family::PrescribedFlux, -1.5, -2.0).unwrap();
        assert!(verify_flux_slope_bound(1.2, &p).unwrap());
        assert!(verify_flux_slope_bound(1.0, &p).unwrap());
        assert!(!verify_flux_slope_bound(0.99, &p).unwrap());
        let q = ModelParams::new(Family::PrescribedFlux, -1.5, 2.0).unwrap();
        assert!(verify_flux_slope_bound(1.0, &q).is_err());
        assert!(verify_flux_slope_bound(1.0, &temp(-1.5, -2.0)).is_err());
    }

    #[test]
    fn enumeration_is_sorted_and_deduplicated() {
        let p = temp(0.5, 0.0);
        let recs = enumerate_solutions(
            &p,
            &ScanRange::new(-3.0, 3.0, 0.05).unwrap(),
            &Default::default(),
            true,
        )
        .unwrap();
        assert_eq!(recs.len(), 1);
        assert!(recs
            .windows(2)
            .all(|w| w[1].free_value - w[0].free_value >= DEDUP_RESOLUTION));
    }
}
