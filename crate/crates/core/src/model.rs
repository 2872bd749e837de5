//! Problem families, coefficient maps and closed-form reference solutions.
//!
//! Every problem handled by this crate is the autonomous third-order equation
//!
//! ```text
//! f''' + alpha * f * f'' - beta * f'^2 = 0,      f(0) = -gamma,  f'(inf) = 0
//! ```
//!
//! closed by either `f'(0) = 1` (prescribed wall temperature) or
//! `f''(0) = -1` (prescribed wall heat flux).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which boundary-condition family (and coefficient map) a problem belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `alpha = (m+1)/2`, `beta = m`, closed by `f'(0) = 1`.
    #[serde(rename = "temperature", alias = "prescribed_temperature")]
    PrescribedTemperature,
    /// `alpha = m+2`, `beta = 2m+1`, closed by `f''(0) = -1`.
    #[serde(rename = "flux", alias = "prescribed_flux")]
    PrescribedFlux,
    /// Free `(alpha, beta)`; no boundary conditions attached.
    Generic,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::PrescribedTemperature => "temperature",
            Family::PrescribedFlux => "flux",
            Family::Generic => "generic",
        }
    }

    /// `(alpha, beta)` for a power-law exponent `m`. `None` for `Generic`.
    pub fn coefficients(self, m: f64) -> Option<(f64, f64)> {
        match self {
            Family::PrescribedTemperature => Some(((m + 1.0) / 2.0, m)),
            Family::PrescribedFlux => Some((m + 2.0, 2.0 * m + 1.0)),
            Family::Generic => None,
        }
    }

    /// Recovers `m` from `alpha`.
    pub fn exponent_from_alpha(self, alpha: f64) -> Option<f64> {
        match self {
            Family::PrescribedTemperature => Some(2.0 * alpha - 1.0),
            Family::PrescribedFlux => Some(alpha - 2.0),
            Family::Generic => None,
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "temperature" | "prescribed_temperature" | "t" => Ok(Family::PrescribedTemperature),
            "flux" | "prescribed_flux" | "q" => Ok(Family::PrescribedFlux),
            "generic" => Ok(Family::Generic),
            other => Err(Error::InvalidInput(format!("unknown family '{other}'"))),
        }
    }
}

/// Coefficients and mass-transfer parameter of one problem instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    family: Family,
    m: Option<f64>,
    alpha: f64,
    beta: f64,
    gamma: f64,
}

fn finite(name: &str, x: f64) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::InvalidInput(format!(
            "{name} must be finite, got {x}"
        )))
    }
}

impl ModelParams {
    /// Builds parameters for one of the two physical families.
    ///
    /// Use [`ModelParams::generic`] for free coefficients.
    pub fn new(family: Family, m: f64, gamma: f64) -> Result<Self> {
        let m = finite("m", m)?;
        let gamma = finite("gamma", gamma)?;
        let (alpha, beta) = family.coefficients(m).ok_or_else(|| {
            Error::InvalidInput("generic family takes (alpha, beta), not m".into())
        })?;
        Ok(Self {
            family,
            m: Some(m),
            alpha,
            beta,
            gamma,
        })
    }

    pub fn generic(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        Ok(Self {
            family: Family::Generic,
            m: None,
            alpha: finite("alpha", alpha)?,
            beta: finite("beta", beta)?,
            gamma: finite("gamma", gamma)?,
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }
    pub fn m(&self) -> Option<f64> {
        self.m
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Same coefficients, different `gamma`.
    pub fn with_gamma(&self, gamma: f64) -> Self {
        Self { gamma, ..*self }
    }

    /// `f'''` from the equation at the given state.
    #[inline]
    pub fn rhs(&self, s: &State) -> f64 {
        rhs(self.alpha, self.beta, s)
    }

    /// Exponent `alpha / (alpha - beta)` of the algebraic law `|f| ~ c t^p`.
    pub fn asymptotic_exponent(&self) -> Option<f64> {
        let d = self.alpha - self.beta;
        (d != 0.0).then(|| self.alpha / d)
    }

    /// Boundary conditions at `t = 0` with the shooting unknown left free.
    pub fn boundary_conditions(&self, free_value: f64) -> Result<BoundaryConditionSet> {
        let fixed_slot = match self.family {
            Family::PrescribedTemperature => FixedSlot::SlopeFixed,
            Family::PrescribedFlux => FixedSlot::CurvatureFixed,
            Family::Generic => {
                return Err(Error::Precondition(
                    "generic family carries no boundary conditions".into(),
                ))
            }
        };
        Ok(BoundaryConditionSet {
            f0: -self.gamma,
            fixed_slot,
            free_slot_value: free_value,
        })
    }
}

/// Convenience wrapper around [`ModelParams::new`].
pub fn make_params(family: Family, m: f64, gamma: f64) -> Result<ModelParams> {
    ModelParams::new(family, m, gamma)
}

/// `(f, f', f'')` at one station.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State {
    pub f: f64,
    pub fp: f64,
    pub fpp: f64,
}

impl State {
    pub const fn new(f: f64, fp: f64, fpp: f64) -> Self {
        Self { f, fp, fpp }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.f, self.fp, self.fpp]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn is_finite(&self) -> bool {
        self.f.is_finite() && self.fp.is_finite() && self.fpp.is_finite()
    }

    /// Max-norm.
    pub fn norm(&self) -> f64 {
        self.f.abs().max(self.fp.abs()).max(self.fpp.abs())
    }

    pub fn distance(&self, other: &State) -> f64 {
        (self.f - other.f)
            .abs()
            .max((self.fp - other.fp).abs())
            .max((self.fpp - other.fpp).abs())
    }
}

/// `f''' = -alpha f f'' + beta f'^2`.
#[inline]
pub fn rhs(alpha: f64, beta: f64, s: &State) -> f64 {
    -alpha * s.f * s.fpp + beta * s.fp * s.fp
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FixedSlot {
    /// `f'(0) = 1`; the unknown is `f''(0)`.
    SlopeFixed,
    /// `f''(0) = -1`; the unknown is `f'(0)`.
    CurvatureFixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConditionSet {
    pub f0: f64,
    pub fixed_slot: FixedSlot,
    pub free_slot_value: f64,
}

impl BoundaryConditionSet {
    pub fn initial_state(&self) -> State {
        match self.fixed_slot {
            FixedSlot::SlopeFixed => State::new(self.f0, 1.0, self.free_slot_value),
            FixedSlot::CurvatureFixed => State::new(self.f0, self.free_slot_value, -1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClosedFormKind {
    /// `m = 1` temperature case, any `gamma`.
    M1AnyGamma,
    /// `m = -1/3` temperature case, any `gamma`.
    MThirdAnyGamma,
}

/// Explicit solutions of the temperature problem for `m = 1` and `m = -1/3`.
///
/// `m = 1`: `f(t) = c - (c + gamma) e^{-ct}` with `c (c + gamma) = 1`.
///
/// `m = -1/3`: `f(t) = L tanh(L (t + t0) / 6)` with `L = sqrt(6 + gamma^2)` and
/// `tanh(L t0 / 6) = -gamma / L`. This is the bounded branch of the first
/// integral `f'' + f f' / 3 = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormSolution {
    pub kind: ClosedFormKind,
    pub gamma: f64,
    pub constants: ClosedFormConstants,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClosedFormConstants {
    M1 { c: f64 },
    MThird { l: f64, t0: f64 },
}

/// `m = 1` closed form.
pub fn closed_form_m1(gamma: f64) -> ClosedFormSolution {
    let root = (gamma * gamma + 4.0).sqrt();
    // Both expressions equal (-gamma + root)/2; pick the one free of cancellation.
    let c = if gamma > 0.0 {
        2.0 / (gamma + root)
    } else {
        (root - gamma) / 2.0
    };
    ClosedFormSolution {
        kind: ClosedFormKind::M1AnyGamma,
        gamma,
        constants: ClosedFormConstants::M1 { c },
    }
}

/// `m = -1/3` closed form.
pub fn closed_form_m_third(gamma: f64) -> ClosedFormSolution {
    let l = (6.0 + gamma * gamma).sqrt();
    let t0 = 6.0 / l * (-gamma / l).atanh();
    ClosedFormSolution {
        kind: ClosedFormKind::MThirdAnyGamma,
        gamma,
        constants: ClosedFormConstants::MThird { l, t0 },
    }
}

impl ClosedFormSolution {
    pub fn params(&self) -> ModelParams {
        let m = match self.kind {
            ClosedFormKind::M1AnyGamma => 1.0,
            ClosedFormKind::MThirdAnyGamma => -1.0 / 3.0,
        };
        ModelParams::new(Family::PrescribedTemperature, m, self.gamma)
            .expect("closed-form parameters are finite")
    }

    /// `[f, f', f'', f''']` at `t`, all analytic.
    pub fn derivatives(&self, t: f64) -> [f64; 4] {
        match self.constants {
            ClosedFormConstants::M1 { c } => {
                let e = (-c * t).exp();
                let k = 1.0 / c;
                [c - k * e, c * k * e, -c * c * k * e, c * c * c * k * e]
            }
            ClosedFormConstants::MThird { l, t0 } => {
                let u = l * (t + t0) / 6.0;
                let th = u.tanh();
                let s2 = 1.0 - th * th;
                let l2 = l * l;
                [
                    l * th,
                    l2 / 6.0 * s2,
                    -l2 * l / 18.0 * s2 * th,
                    -l2 * l2 / 108.0 * (s2 * s2 - 2.0 * s2 * th * th),
                ]
            }
        }
    }

    pub fn state(&self, t: f64) -> State {
        let d = self.derivatives(t);
        State::new(d[0], d[1], d[2])
    }

    /// The shooting unknown `f''(0)`.
    pub fn free_value(&self) -> f64 {
        self.state(0.0).fpp
    }

    /// `f(inf)`.
    pub fn limit(&self) -> f64 {
        match self.constants {
            ClosedFormConstants::M1 { c } => c,
            ClosedFormConstants::MThird { l, .. } => l,
        }
    }

    /// Equation residual at `t` using analytic derivatives.
    pub fn residual(&self, t: f64) -> f64 {
        let p = self.params();
        let [f, fp, fpp, fppp] = self.derivatives(t);
        fppp + p.alpha() * f * fpp - p.beta() * fp * fp
    }
}

/// Physical inputs of the wall-transpiration parameter. `beta_thermal` is the
/// fluid's thermal expansion coefficient, unrelated to the equation's `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// Wall transpiration velocity scale (negative: suction).
    pub omega: f64,
    pub m: f64,
    pub mu: f64,
    pub rho_inf: f64,
    pub beta_thermal: f64,
    pub g: f64,
    pub k: f64,
    /// Wall temperature amplitude in `T_w = T_inf + A x^m`.
    pub a_wall: f64,
    pub lambda_diff: f64,
}

/// `gamma = 2 omega / (m+1) * sqrt(mu / (rho_inf beta_thermal g k A lambda))`.
pub fn gamma_from_physical(pc: &PhysicalConstants) -> Result<f64> {
    for (name, v) in [("omega", pc.omega), ("m", pc.m)] {
        finite(name, v)?;
    }
    if pc.m == -1.0 {
        return Err(Error::InvalidInput(
            "gamma map is singular at m = -1".into(),
        ));
    }
    for (name, v) in [
        ("mu", pc.mu),
        ("rho_inf", pc.rho_inf),
        ("beta_thermal", pc.beta_thermal),
        ("g", pc.g),
        ("k", pc.k),
        ("A", pc.a_wall),
        ("lambda", pc.lambda_diff),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidInput(format!(
                "{name} must be positive, got {v}"
            )));
        }
    }
    let denom = pc.rho_inf * pc.beta_thermal * pc.g * pc.k * pc.a_wall * pc.lambda_diff;
    Ok(2.0 * pc.omega / (pc.m + 1.0) * (pc.mu / denom).sqrt())
}
