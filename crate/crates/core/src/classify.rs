//! Shape classes, asymptotic power-law fits and (m, gamma) atlases.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::integrator::{dead_band_sign, Profile, Termination};
use crate::model::{Family, ModelParams};
use crate::shooting::{self, Band, ScanRange, ShootSettings, SolutionRecord};

/// Sign pattern of `f''` along a profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeClass {
    Concave,
    ConvexConcave,
    ConcaveConvex,
    Convex,
    /// More than one sign change; carries the number of changes.
    Mixed(usize),
}

impl ShapeClass {
    pub fn label(&self) -> String {
        match self {
            ShapeClass::Concave => "concave".into(),
            ShapeClass::ConvexConcave => "convex-concave".into(),
            ShapeClass::ConcaveConvex => "concave-convex".into(),
            ShapeClass::Convex => "convex".into(),
            ShapeClass::Mixed(k) => format!("mixed({k})"),
        }
    }
}

impl std::fmt::Display for ShapeClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeReport {
    pub class: ShapeClass,
    pub sign_changes: usize,
    /// `f''` stayed inside the dead band everywhere.
    pub degenerate: bool,
}

/// Full shape report; see [`classify_shape`].
pub fn shape_report(profile: &Profile) -> Result<ShapeReport> {
    if !profile.reached_tmax() {
        return Err(Error::RefusesBlowUpProfile);
    }
    let mut pattern: Vec<i8> = Vec::new();
    for s in &profile.samples {
        let sg = dead_band_sign(s.state.fpp);
        if sg != 0 && pattern.last() != Some(&sg) {
            pattern.push(sg);
        }
    }
    let sign_changes = pattern.len().saturating_sub(1);
    let class = match pattern.as_slice() {
        [] | [-1] => ShapeClass::Concave,
        [1] => ShapeClass::Convex,
        [1, -1] => ShapeClass::ConvexConcave,
        [-1, 1] => ShapeClass::ConcaveConvex,
        _ => ShapeClass::Mixed(sign_changes),
    };
    Ok(ShapeReport {
        class,
        sign_changes,
        degenerate: pattern.is_empty(),
    })
}

/// Concave iff `f'' < 0` throughout (outside the dead band), and so on.
/// An identically flat profile counts as concave.
pub fn classify_shape(profile: &Profile) -> Result<ShapeClass> {
    shape_report(profile).map(|r| r.class)
}

/// `log|f| = log c + exponent * log t` over a window of the profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticFit {
    pub exponent: f64,
    pub c_constant: f64,
    pub fit_window: (f64, f64),
    pub r_squared: f64,
    pub samples: usize,
}

pub const MIN_FIT_SAMPLES: usize = 20;
/// Smallest growth of `|f|` over half a decade of `t` (exponent about 0.02).
pub const MIN_HALF_DECADE_GROWTH: f64 = 1.02;
pub const MIN_R_SQUARED: f64 = 0.999;

/// Least-squares line through `(ln t, ln|f|)` for samples in `[t_lo, t_hi]`.
pub fn loglog_fit(profile: &Profile, t_lo: f64, t_hi: f64) -> Result<AsymptoticFit> {
    let pts: Vec<(f64, f64)> = profile
        .samples
        .iter()
        .filter(|s| s.t >= t_lo && s.t <= t_hi && s.t > 0.0 && s.state.f != 0.0)
        .map(|s| (s.t.ln(), s.state.f.abs().ln()))
        .collect();
    if pts.len() < MIN_FIT_SAMPLES {
        return Err(Error::WindowTooShort { samples: pts.len() });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::WindowTooShort { samples: pts.len() });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    // A perfectly flat |f| is fitted exactly by a zero slope.
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy) / (sxx * syy)
    };
    Ok(AsymptoticFit {
        exponent: slope,
        c_constant: intercept.exp(),
        fit_window: (t_lo, t_hi),
        r_squared,
        samples: pts.len(),
    })
}

/// Fits `|f(t)| ~ c t^p` over the final decade of an unbounded profile.
///
/// The profile must have reached its horizon with `|f|` growing by at least
/// [`MIN_HALF_DECADE_GROWTH`] across each half of the window.
pub fn fit_asymptotic_exponent(profile: &Profile) -> Result<AsymptoticFit> {
    if !profile.reached_tmax() {
        return Err(Error::Precondition(
            "profile did not reach its horizon".into(),
        ));
    }
    let t_hi = profile.last().t;
    let t_lo = t_hi / 10.0;
    let f_hi = profile.final_state().f.abs();
    let f_mid = profile.state_at(t_lo * 10f64.sqrt()).f.abs();
    let f_lo = profile.state_at(t_lo).f.abs();
    if !(f_mid > MIN_HALF_DECADE_GROWTH * f_lo && f_hi > MIN_HALF_DECADE_GROWTH * f_mid) {
        return Err(Error::Precondition(format!(
            "|f| does not grow over the final decade ({f_lo} -> {f_mid} -> {f_hi})"
        )));
    }
    let fit = loglog_fit(profile, t_lo, t_hi)?;
    if fit.r_squared < MIN_R_SQUARED {
        return Err(Error::PoorFit {
            r_squared: fit.r_squared,
        });
    }
    Ok(fit)
}

/// Summary of the solution set at one `(m, gamma)` point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AtlasOutcome {
    NoSolution,
    Unique,
    FiniteMultiple {
        n: usize,
    },
    /// At least one continuous band of admissible free values.
    BandOfSolutions {
        bands: Vec<Band>,
    },
}

impl AtlasOutcome {
    pub fn label(&self) -> String {
        match self {
            AtlasOutcome::NoSolution => "no_solution".into(),
            AtlasOutcome::Unique => "unique".into(),
            AtlasOutcome::FiniteMultiple { n } => format!("finite_multiple({n})"),
            AtlasOutcome::BandOfSolutions { .. } => "band_of_solutions".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSummary {
    pub free_value: f64,
    pub bounded: bool,
    pub lambda: Option<f64>,
    pub shape: ShapeClass,
    pub growth_exponent: Option<f64>,
    pub from_band: bool,
}

impl From<&SolutionRecord> for RecordSummary {
    fn from(r: &SolutionRecord) -> Self {
        Self {
            free_value: r.free_value,
            bounded: r.bounded,
            lambda: r.limit_lambda,
            shape: r.shape,
            growth_exponent: r.growth_exponent,
            from_band: r.band.is_some(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtlasEntry {
    pub family: Family,
    pub m: f64,
    pub gamma: f64,
    pub outcome: AtlasOutcome,
    pub records: Vec<RecordSummary>,
    /// Per-point failures (invalid parameters, indeterminate shots).
    pub notes: Vec<String>,
}

impl AtlasEntry {
    pub fn n_bounded(&self) -> usize {
        self.records.iter().filter(|r| r.bounded).count()
    }
    pub fn n_unbounded(&self) -> usize {
        self.records.iter().filter(|r| !r.bounded).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtlasSettings {
    pub shoot: ShootSettings,
    /// `None` uses the default scan range for each gamma.
    pub scan: Option<ScanRange>,
    pub unbounded_ok: bool,
}

impl Default for AtlasSettings {
    fn default() -> Self {
        Self {
            shoot: ShootSettings::default(),
            scan: None,
            unbounded_ok: true,
        }
    }
}

pub fn outcome_of(records: &[SolutionRecord], bands: &[Band]) -> AtlasOutcome {
    if !bands.is_empty() {
        return AtlasOutcome::BandOfSolutions {
            bands: bands.to_vec(),
        };
    }
    match records.len() {
        0 => AtlasOutcome::NoSolution,
        1 => AtlasOutcome::Unique,
        n => AtlasOutcome::FiniteMultiple { n },
    }
}

fn atlas_point(family: Family, m: f64, gamma: f64, settings: &AtlasSettings) -> AtlasEntry {
    let mut entry = AtlasEntry {
        family,
        m,
        gamma,
        outcome: AtlasOutcome::NoSolution,
        records: Vec::new(),
        notes: Vec::new(),
    };
    let params = match ModelParams::new(family, m, gamma) {
        Ok(p) => p,
        Err(e) => {
            entry.notes.push(e.to_string());
            return entry;
        }
    };
    let scan = settings
        .scan
        .unwrap_or_else(|| ScanRange::default_for(gamma));
    match shooting::enumerate_detailed(&params, &scan, &settings.shoot, settings.unbounded_ok) {
        Ok(en) => {
            entry.outcome = outcome_of(&en.records, &en.bands);
            entry.records = en.records.iter().map(RecordSummary::from).collect();
            entry.notes = en.notes;
        }
        Err(e) => entry.notes.push(e.to_string()),
    }
    entry
}

/// Runs the enumeration on every grid point, in `m`-major grid order.
pub fn build_atlas(
    family: Family,
    m_grid: &[f64],
    gamma_grid: &[f64],
    settings: &AtlasSettings,
) -> Result<Vec<AtlasEntry>> {
    let sorted = |g: &[f64]| g.windows(2).all(|w| w[0] < w[1]) && g.iter().all(|x| x.is_finite());
    if !sorted(m_grid) || !sorted(gamma_grid) {
        return Err(Error::InvalidInput(
            "grids must be finite and strictly increasing".into(),
        ));
    }
    if family == Family::Generic {
        return Err(Error::Precondition("atlas needs a physical family".into()));
    }
    let points: Vec<(f64, f64)> = m_grid
        .iter()
        .flat_map(|&m| gamma_grid.iter().map(move |&g| (m, g)))
        .collect();
    Ok(points
        .par_iter()
        .map(|&(m, g)| atlas_point(family, m, g, settings))
        .collect())
}

/// One JSON object per line.
pub fn write_atlas_jsonl<W: Write>(entries: &[AtlasEntry], mut w: W) -> std::io::Result<()> {
    for e in entries {
        let mut v = serde_json::to_value(e).map_err(std::io::Error::other)?;
        v["spec_version"] = json!("1");
        writeln!(
            w,
            "{}",
            serde_json::to_string(&v).map_err(std::io::Error::other)?
        )?;
    }
    Ok(())
}

/// CSV `family,m,gamma,outcome,n_bounded,n_unbounded`.
pub fn write_atlas_csv<W: Write>(entries: &[AtlasEntry], mut w: W) -> std::io::Result<()> {
    writeln!(w, "family,m,gamma,outcome,n_bounded,n_unbounded")?;
    for e in entries {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            e.family.name(),
            e.m,
            e.gamma,
            e.outcome.label(),
            e.n_bounded(),
            e.n_unbounded()
        )?;
    }
    Ok(())
}

/// `|lambda|` at or below this counts as a zero limit.
pub const LAMBDA_ZERO_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaReport {
    pub n_negative: usize,
    pub n_zero: usize,
    pub n_positive: usize,
    pub n_unbounded: usize,
    pub n_concave_convex_positive: usize,
    pub findings: Vec<String>,
    /// No expectation was violated.
    pub consistent: bool,
}

/// Counts bounded records by the sign of their limit and checks the expected
/// counts: two negative limits when `m < -1` (temperature) or `m < -2` (flux)
/// and solutions exist; exactly one concave-convex record with a positive
/// limit when `m > 1`.
pub fn check_lambda_limits(records: &[SolutionRecord], family: Family, m: f64) -> LambdaReport {
    let mut rep = LambdaReport {
        n_negative: 0,
        n_zero: 0,
        n_positive: 0,
        n_unbounded: 0,
        n_concave_convex_positive: 0,
        findings: Vec::new(),
        consistent: true,
    };
    for r in records {
        match (r.bounded, r.limit_lambda) {
            (true, Some(l)) if l < -LAMBDA_ZERO_TOL => rep.n_negative += 1,
            (true, Some(l)) if l > LAMBDA_ZERO_TOL => {
                rep.n_positive += 1;
                if r.shape == ShapeClass::ConcaveConvex {
                    rep.n_concave_convex_positive += 1;
                }
            }
            (true, _) => rep.n_zero += 1,
            (false, _) => rep.n_unbounded += 1,
        }
    }
    let multiplicity_regime = match family {
        Family::PrescribedTemperature => m < -1.0,
        Family::PrescribedFlux => m < -2.0,
        Family::Generic => false,
    };
    if multiplicity_regime && !records.is_empty() && rep.n_negative != 2 {
        rep.consistent = false;
        rep.findings.push(format!(
            "expected 2 records with lambda < 0, found {}",
            rep.n_negative
        ));
    }
    if family != Family::Generic && m > 1.0 && rep.n_concave_convex_positive != 1 {
        rep.consistent = false;
        rep.findings.push(format!(
            "expected 1 concave-convex record with lambda > 0, found {}",
            rep.n_concave_convex_positive
        ));
    }
    if rep.findings.is_empty() {
        rep.findings.push(format!(
            "lambda<0: {}, lambda=0: {}, lambda>0: {}, unbounded: {}",
            rep.n_negative, rep.n_zero, rep.n_positive, rep.n_unbounded
        ));
    }
    rep
}

/// `true` when the profile's termination is a blow-up.
pub fn is_blow_up(profile: &Profile) -> bool {
    matches!(profile.termination, Termination::BlowUp { .. })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{integrate, scale_solution, IvpSpec, Sample};
    use crate::model::{closed_form_m1, closed_form_m_third, State};

    fn closed_profile(cf: crate::model::ClosedFormSolution, t_end: f64, dt: f64) -> Profile {
        let n = (t_end / dt).round() as usize;
        let samples = (0..=n)
            .map(|i| Sample {
                t: i as f64 * dt,
                state: cf.state(i as f64 * dt),
            })
            .collect();
        Profile::from_samples(cf.params(), samples, Termination::ReachedTmax).unwrap()
    }

    #[test]
    fn m1_is_concave() {
        let p = closed_profile(closed_form_m1(0.0), 20.0, 0.01);
        assert_eq!(classify_shape(&p).unwrap(), ShapeClass::Concave);
    }

    #[test]
    fn m_third_gamma_two_is_convex_concave() {
        let p = closed_profile(closed_form_m_third(2.0), 30.0, 0.01);
        assert_eq!(classify_shape(&p).unwrap(), ShapeClass::ConvexConcave);
    }

    #[test]
    fn flat_profile_is_degenerate_concave() {
        let params = ModelParams::generic(1.0, 1.0, 0.0).unwrap();
        let prof = integrate(&IvpSpec::new(params, State::new(1.0, 0.0, 0.0), 10.0)).unwrap();
        let rep = shape_report(&prof).unwrap();
        assert_eq!(rep.class, ShapeClass::Concave);
        assert_eq!(rep.sign_changes, 0);
        assert!(rep.degenerate);
    }

    #[test]
    fn blow_up_profiles_are_refused() {
        let params = ModelParams::new(Family::PrescribedTemperature, 1.0, 0.0).unwrap();
        let prof = integrate(&IvpSpec::new(params, State::new(0.0, 1.0, 1.0), 50.0)).unwrap();
        assert!(is_blow_up(&prof));
        assert_eq!(classify_shape(&prof), Err(Error::RefusesBlowUpProfile));
    }

    #[test]
    fn shape_is_scale_invariant() {
        let p = closed_profile(closed_form_m_third(2.0), 30.0, 0.01);
        for k in [0.3, 0.5, 2.0, 7.0] {
            let s = scale_solution(&p, k).unwrap();
            assert_eq!(classify_shape(&s).unwrap(), classify_shape(&p).unwrap());
        }
    }

    #[test]
    fn mixed_counts_changes() {
        let params = ModelParams::generic(0.0, 0.0, 0.0).unwrap();
        let samples = (0..100)
            .map(|i| {
                let t = i as f64 * 0.1;
                Sample {
                    t,
                    state: State::new(0.0, 0.0, t.sin()),
                }
            })
            .collect();
        let prof = Profile::from_samples(params, samples, Termination::ReachedTmax).unwrap();
        // sin changes sign at pi, 2 pi, 3 pi on [0, 9.9]
        assert_eq!(classify_shape(&prof).unwrap(), ShapeClass::Mixed(3));
    }

    #[test]
    fn synthetic_power_law_fit() {
        let params = ModelParams::generic(0.0, 0.0, 0.0).unwrap();
        let samples = (1..=2000)
            .map(|i| {
                let t = i as f64 * 0.5;
                Sample {
                    t,
                    state: State::new(t.powf(0.3), 0.3 * t.powf(-0.7), -0.21 * t.powf(-1.7)),
                }
            })
            .collect();
        let prof = Profile::from_samples(params, samples, Termination::ReachedTmax).unwrap();
        let fit = fit_asymptotic_exponent(&prof).unwrap();
        assert!((fit.exponent - 0.3).abs() < 1e-3);
        assert!((fit.c_constant - 1.0).abs() < 1e-9);
        assert_eq!(fit.fit_window, (100.0, 1000.0));
    }

    #[test]
    fn fit_window_errors() {
        let params = ModelParams::generic(0.0, 0.0, 0.0).unwrap();
        let few: Vec<Sample> = (1..=12)
            .map(|i| {
                let t = i as f64 * 10.0;
                Sample {
                    t,
                    state: State::new(t, 1.0, 0.0),
                }
            })
            .collect();
        let prof = Profile::from_samples(params, few, Termination::ReachedTmax).unwrap();
        assert!(matches!(
            fit_asymptotic_exponent(&prof),
            Err(Error::WindowTooShort { .. })
        ));

        let noisy: Vec<Sample> = (1..=400)
            .map(|i| {
                let t = i as f64;
                let f = t * (1.0 + 0.5 * (t * 0.7).sin());
                Sample {
                    t,
                    state: State::new(f, 1.0, 0.0),
                }
            })
            .collect();
        let prof = Profile::from_samples(params, noisy, Termination::ReachedTmax).unwrap();
        assert!(matches!(
            fit_asymptotic_exponent(&prof),
            Err(Error::PoorFit { .. })
        ));
    }

    #[test]
    fn fit_refuses_decaying_profiles() {
        let cf = closed_form_m1(0.0);
        let params = cf.params();
        let prof = integrate(&IvpSpec::new(params, cf.state(0.0), 20.0)).unwrap();
        assert!(matches!(
            fit_asymptotic_exponent(&prof),
            Err(Error::Precondition(_))
        ));
    }
}
