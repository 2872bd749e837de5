//! Self-checks against closed forms and structural invariants of the
//! equation. Each suite reports its worst error next to the tolerance it is
//! held to.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classify::{fit_asymptotic_exponent, MIN_FIT_SAMPLES};
use crate::error::Result;
use crate::integrator::{
    integrate, scale_solution, IvpSpec, Profile, Sample, Termination, DEFAULT_ABS_TOL,
    DEFAULT_REL_TOL,
};
use crate::model::{closed_form_m1, closed_form_m_third, ClosedFormSolution, ModelParams, State};
use crate::phaseplane::{self, PhaseOptions};

pub const VERIFY_SEED: u64 = 0x5eed_0001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl SuiteResult {
    fn new(name: &str, cases: usize, max_error: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            passed: max_error < tolerance,
            cases,
            max_error,
            tolerance,
        }
    }
}

/// Analytic residual of both closed forms, and agreement of an integrated
/// trajectory with them on `[0, 20]`.
pub fn closed_form_suite() -> Result<Vec<SuiteResult>> {
    let forms: Vec<ClosedFormSolution> = [-2.0, -1.0, 0.0, 1.0, 5.0]
        .iter()
        .flat_map(|&g| [closed_form_m1(g), closed_form_m_third(g)])
        .collect();
    let mut residual = 0.0f64;
    for cf in &forms {
        for k in 0..=200 {
            residual = residual.max(cf.residual(0.1 * k as f64).abs());
        }
    }
    // Forward integration is only well conditioned when f stays positive.
    let mut tracking = 0.0f64;
    let tracked: Vec<ClosedFormSolution> = [-1.0, 0.0]
        .iter()
        .flat_map(|&g| [closed_form_m1(g), closed_form_m_third(g)])
        .collect();
    for cf in &tracked {
        let prof = integrate(&IvpSpec::new(cf.params(), cf.state(0.0), 20.0))?;
        for s in &prof.samples {
            tracking = tracking.max(s.state.distance(&cf.state(s.t)));
        }
    }
    Ok(vec![
        SuiteResult::new("closed_form_residual", forms.len(), residual, 1e-10),
        SuiteResult::new("closed_form_tracking", tracked.len(), tracking, 1e-6),
    ])
}

fn random_state(rng: &mut ChaCha8Rng) -> State {
    State::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    )
}

/// Drift of `f'' + alpha f f'` along random trajectories with `beta = -alpha`,
/// each stopped once its state leaves the ball of radius 10.
pub fn first_integral_suite(instances: usize, seed: u64) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let alpha = rng.gen_range(-2.0..2.0);
        let params = ModelParams::generic(alpha, -alpha, 0.0)?;
        let mut spec = IvpSpec::new(params, random_state(&mut rng), 5.0);
        spec.blowup_threshold = 10.0;
        let prof = integrate(&spec)?;
        let invariant = |s: &State| s.fpp + alpha * s.f * s.fp;
        let i0 = invariant(&prof.first().state);
        for s in &prof.samples {
            worst = worst.max((invariant(&s.state) - i0).abs());
        }
    }
    Ok(SuiteResult::new("first_integral", instances, worst, 1e-6))
}

/// Integrate-then-scale against scale-then-integrate for `kappa` in `{0.5, 2}`.
/// Errors are measured in units of `abs_tol + rel_tol |state|`.
pub fn scaling_suite(instances: usize, seed: u64) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let t_max = 2.0;
    for _ in 0..instances {
        let params = ModelParams::generic(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), 0.0)?;
        let init = random_state(&mut rng);
        let mut spec = IvpSpec::new(params, init, t_max);
        spec.max_step = Some(t_max / 2000.0);
        let base = integrate(&spec)?;
        for kappa in [0.5, 2.0] {
            let scaled = scale_solution(&base, kappa)?;
            let k_init = State::new(
                kappa * init.f,
                kappa * kappa * init.fp,
                kappa.powi(3) * init.fpp,
            );
            let mut k_spec = IvpSpec::new(scaled.params, k_init, t_max / kappa);
            k_spec.max_step = Some(t_max / kappa / 2000.0);
            let direct = integrate(&k_spec)?;
            let t_end = scaled.last().t.min(direct.last().t);
            for s in direct.samples.iter().filter(|s| s.t <= t_end) {
                let err = s.state.distance(&scaled.state_at(s.t));
                let unit = DEFAULT_ABS_TOL + DEFAULT_REL_TOL * s.state.norm().max(1.0);
                worst = worst.max(err / unit);
            }
        }
    }
    Ok(SuiteResult::new(
        "scaling_covariance",
        2 * instances,
        worst,
        100.0,
    ))
}

/// Phase image of the `m = 1`, `gamma = 5` closed form on `[0, 5]` against
/// direct integration of the planar system from its first point.
pub fn conjugacy_suite() -> Result<SuiteResult> {
    let cf = closed_form_m1(5.0);
    let p = cf.params();
    let prof = integrate(&IvpSpec::new(p, cf.state(0.0), 5.0))?;
    let image = phaseplane::to_phase(&prof, 0.0, 5.0)?;
    let start = image[0];
    let s_end = image.last().map_or(0.0, |q| q.s);
    let traj = phaseplane::integrate_phase(
        p.alpha(),
        p.beta(),
        (start.u, start.v),
        s_end,
        &PhaseOptions::default(),
    )?;
    let mut worst = 0.0f64;
    for q in &image {
        let y = traj.state_at(q.s);
        worst = worst.max((y.u - q.u).abs()).max((y.v - q.v).abs());
    }
    Ok(SuiteResult::new(
        "phase_conjugacy",
        image.len(),
        worst,
        1e-6,
    ))
}

/// `|P| + |Q|` at every fixed point and the origin's spectrum `{0, -alpha}`
/// for random `(alpha, beta)`.
pub fn fixed_point_suite(instances: usize, seed: u64) -> Result<Vec<SuiteResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut residual, mut spectrum) = (0.0f64, 0.0f64);
    for _ in 0..instances {
        let (a, b) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let fps = phaseplane::fixed_points(a, b)?;
        for fp in &fps {
            let (du, dv) = phaseplane::phase_rhs(a, b, fp.u, fp.v);
            residual = residual.max(du.abs() + dv.abs());
        }
        let mut ev = [fps[0].eigenvalues[0].0, fps[0].eigenvalues[1].0];
        ev.sort_by(f64::total_cmp);
        let mut want = [0.0, -a];
        want.sort_by(f64::total_cmp);
        let im = fps[0].eigenvalues[0].1.abs() + fps[0].eigenvalues[1].1.abs();
        spectrum = spectrum.max((ev[0] - want[0]).abs() + (ev[1] - want[1]).abs() + im);
    }
    Ok(vec![
        SuiteResult::new("fixed_point_residual", instances, residual, 1e-12),
        SuiteResult::new("origin_spectrum", instances, spectrum, 1e-12),
    ])
}

/// Recovers the exponent of a synthetic `f = t^0.3` profile.
pub fn exponent_fit_suite() -> Result<SuiteResult> {
    let params = ModelParams::generic(1.0, 1.0, 0.0)?;
    let n = 50 * MIN_FIT_SAMPLES;
    let samples: Vec<Sample> = (0..=n)
        .map(|k| {
            let t = 1.0 + 999.0 * k as f64 / n as f64;
            let f = t.powf(0.3);
            Sample {
                t,
                state: State::new(f, 0.3 * f / t, -0.21 * f / (t * t)),
            }
        })
        .collect();
    let prof = Profile::from_samples(params, samples, Termination::ReachedTmax)?;
    let fit = fit_asymptotic_exponent(&prof)?;
    Ok(SuiteResult::new(
        "exponent_fit",
        1,
        (fit.exponent - 0.3).abs(),
        1e-3,
    ))
}

/// Every suite, in a fixed order.
pub fn run_all(seed: u64) -> Result<Vec<SuiteResult>> {
    let mut out = closed_form_suite()?;
    out.push(first_integral_suite(50, seed)?);
    out.push(scaling_suite(50, seed.wrapping_add(1))?);
    out.push(conjugacy_suite()?);
    out.extend(fixed_point_suite(100, seed.wrapping_add(2))?);
    out.push(exponent_fit_suite()?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass() {
        for r in run_all(VERIFY_SEED).unwrap() {
            assert!(r.passed, "{r:?}");
        }
    }
}
