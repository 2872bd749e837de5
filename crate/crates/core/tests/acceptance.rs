//! Acceptance criteria, one PASS/FAIL line each. Runs as a plain binary
//! (`harness = false`) and exits non-zero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use simbvp::classify::ShapeClass;
use simbvp::figures::run_figure;
use simbvp::model::{Family, ModelParams};
use simbvp::shooting::{
    critical_gamma, enumerate_solutions, solve_bvp, ScanRange, ShootSettings, SolutionRecord,
    TailKind,
};
use simbvp::verify::{run_all, VERIFY_SEED};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn temp(m: f64, g: f64) -> ModelParams {
    ModelParams::new(Family::PrescribedTemperature, m, g).unwrap()
}

fn flux(m: f64, g: f64) -> ModelParams {
    ModelParams::new(Family::PrescribedFlux, m, g).unwrap()
}

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t0 = Instant::now();
    let out = f();
    (out, t0.elapsed())
}

fn enumerate_default(p: &ModelParams, unbounded_ok: bool) -> Result<Vec<SolutionRecord>, String> {
    enumerate_solutions(
        p,
        &ScanRange::default_for(p.gamma()),
        &ShootSettings::default(),
        unbounded_ok,
    )
    .map_err(|e| e.to_string())
}

fn criterion_1() -> Outcome {
    let (rec, dt) = timed(|| solve_bvp(&temp(1.0, 0.0), (-2.0, 0.0), &ShootSettings::default()));
    let rec = rec.map_err(|e| e.to_string())?;
    let err = (rec.free_value + 1.0).abs();
    ensure(
        err < 1e-6,
        format!("f''(0) = {} (error {err:e})", rec.free_value),
    )?;
    let mut sup = 0.0f64;
    for k in 0..=2000 {
        let t = 0.01 * k as f64;
        sup = sup.max((rec.profile.state_at(t).f - (1.0 - (-t).exp())).abs());
    }
    ensure(sup < 1e-6, format!("profile error {sup:e} on [0, 20]"))?;
    ensure(dt < Duration::from_secs(1), format!("took {dt:?}"))?;
    Ok(format!(
        "f''(0) error {err:.1e}, profile error {sup:.1e}, {:.0} ms",
        dt.as_secs_f64() * 1e3
    ))
}

fn criterion_2() -> Outcome {
    let (rec, dt) = timed(|| {
        solve_bvp(
            &temp(-1.0 / 3.0, 0.0),
            (-1.0, 1.0),
            &ShootSettings::default(),
        )
    });
    let rec = rec.map_err(|e| e.to_string())?;
    ensure(
        rec.free_value.abs() < 1e-6,
        format!("f''(0) = {}", rec.free_value),
    )?;
    let lim = rec.profile.final_state().f;
    let err = (lim - 6f64.sqrt()).abs();
    ensure(err < 1e-4, format!("f(t_max) = {lim}"))?;
    ensure(dt < Duration::from_secs(1), format!("took {dt:?}"))?;
    Ok(format!(
        "f''(0) = {:.1e}, |f(t_max) - sqrt 6| = {err:.1e}, {:.0} ms",
        rec.free_value,
        dt.as_secs_f64() * 1e3
    ))
}

fn criterion_3() -> Outcome {
    let mut worst = 0.0f64;
    for g in [-0.5, -1.0, -2.0, -4.0] {
        let recs = enumerate_default(&flux(-1.0, g), false)?;
        let roots: Vec<_> = recs
            .iter()
            .filter(|r| r.bounded && r.tail == TailKind::Converges)
            .collect();
        ensure(
            roots.len() == 1,
            format!("gamma {g}: {} bounded roots", roots.len()),
        )?;
        let err = (roots[0].free_value + 1.0 / g).abs();
        ensure(
            err < 1e-5,
            format!("gamma {g}: f'(0) = {}", roots[0].free_value),
        )?;
        worst = worst.max(err);
    }
    Ok(format!("worst |f'(0) + 1/gamma| = {worst:.1e}"))
}

fn cli_solve_exit(dir: &Path, m: f64, g: f64) -> Result<(i32, String), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_simbvp"))
        .args([
            "solve",
            "--family",
            "temperature",
            "--m",
            &m.to_string(),
            "--gamma",
            &g.to_string(),
        ])
        .arg("--output-dir")
        .arg(dir)
        .output()
        .map_err(|e| e.to_string())?;
    let json = std::fs::read_to_string(dir.join("solutions.json")).unwrap_or_default();
    Ok((out.status.code().unwrap_or(-1), json))
}

fn criterion_4() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cases = [
        (-1.0, -5.0),
        (-1.0, 0.0),
        (-1.0, 5.0),
        (-0.75, 0.0),
        (-0.75, 1.0),
    ];
    for (m, g) in cases {
        let recs = enumerate_default(&temp(m, g), true)?;
        ensure(
            recs.is_empty(),
            format!("m {m} gamma {g}: {} records", recs.len()),
        )?;
        let (code, json) = cli_solve_exit(dir.path(), m, g)?;
        ensure(code == 3, format!("m {m} gamma {g}: exit code {code}"))?;
        let v: serde_json::Value = serde_json::from_str(&json).map_err(|e| e.to_string())?;
        ensure(
            v.as_array().is_some_and(|a| a.is_empty()),
            "solutions.json not empty",
        )?;
    }
    Ok(format!("{} cases, no roots, exit code 3", cases.len()))
}

fn criterion_5() -> Outcome {
    let t0 = Instant::now();
    let mut parts = Vec::new();
    for id in 1..=4 {
        let run = run_figure(id, &ShootSettings::default()).map_err(|e| e.to_string())?;
        let failed: Vec<_> = run.manifest.checks.iter().filter(|c| !c.holds).collect();
        ensure(failed.is_empty(), format!("figure {id}: {failed:?}"))?;
        parts.push(format!("fig {id}: {} curves", run.manifest.counts.total));
    }
    let dt = t0.elapsed();
    ensure(dt < Duration::from_secs(30), format!("took {dt:?}"))?;
    Ok(format!("{}, {:.1} s", parts.join(", "), dt.as_secs_f64()))
}

fn criterion_6() -> Outcome {
    let mut parts = Vec::new();
    for (p, want) in [(temp(-0.75, -10.0), 1.0 / 7.0), (flux(-1.5, -5.0), 0.2)] {
        let predicted = p.asymptotic_exponent().unwrap();
        ensure(
            (predicted - want).abs() < 1e-12,
            format!("predicted {predicted}"),
        )?;
        let recs = enumerate_default(&p, true)?;
        let fits: Vec<f64> = recs.iter().filter_map(|r| r.growth_exponent).collect();
        ensure(
            !fits.is_empty(),
            format!("m {:?}: no unbounded solutions", p.m()),
        )?;
        let worst = fits
            .iter()
            .map(|q| (q - want).abs() / want)
            .fold(0.0, f64::max);
        ensure(
            worst < 0.05,
            format!("m {:?}: relative error {worst}", p.m()),
        )?;
        parts.push(format!("{} fits within {:.2}%", fits.len(), 100.0 * worst));
    }
    Ok(parts.join("; "))
}

fn criterion_7() -> Outcome {
    let cg = critical_gamma(
        Family::PrescribedFlux,
        -3.0,
        (0.0, 10.0),
        1e-3,
        &ShootSettings::default(),
    )
    .map_err(|e| e.to_string())?;
    let bound = 2f64.cbrt();
    ensure(cg.gamma_star > bound, format!("gamma* = {}", cg.gamma_star))?;
    ensure(
        cg.bracket_width <= 1e-3,
        format!("width {}", cg.bracket_width),
    )?;
    Ok(format!(
        "gamma* = {:.4} > {bound:.4}, width {:.1e}",
        cg.gamma_star, cg.bracket_width
    ))
}

fn criterion_8() -> Outcome {
    let (res, dt) = timed(|| run_all(VERIFY_SEED));
    let res = res.map_err(|e| e.to_string())?;
    let failed: Vec<_> = res
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.name.clone())
        .collect();
    ensure(failed.is_empty(), format!("failed suites: {failed:?}"))?;
    ensure(dt < Duration::from_secs(60), format!("took {dt:?}"))?;
    Ok(format!("{} suites, {:.2} s", res.len(), dt.as_secs_f64()))
}

fn criterion_9() -> Outcome {
    let mut cases = Vec::new();
    for m in [0.0, 0.25, 0.5, 0.75, 1.0] {
        for g in [-1.0, 0.0, 1.0] {
            cases.push(temp(m, g));
        }
    }
    for m in [-0.5, 0.0, 0.5, 1.0] {
        for g in [-1.0, 0.0, 1.0] {
            cases.push(flux(m, g));
        }
    }
    for p in &cases {
        let recs = enumerate_default(p, true)?;
        let label = format!("{} m {:?} gamma {}", p.family(), p.m(), p.gamma());
        ensure(recs.len() == 1, format!("{label}: {} records", recs.len()))?;
        ensure(
            recs[0].bounded && recs[0].shape == ShapeClass::Concave,
            format!("{label}: {:?}", recs[0].shape),
        )?;
    }
    Ok(format!(
        "{} cases, one concave bounded root each",
        cases.len()
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("closed form m = 1", criterion_1),
        ("closed form m = -1/3", criterion_2),
        ("flux m = -1 slope relation", criterion_3),
        ("nonexistence", criterion_4),
        ("figure reproduction", criterion_5),
        ("asymptotic growth law", criterion_6),
        ("critical gamma bound", criterion_7),
        ("property suites", criterion_8),
        ("uniqueness sweep", criterion_9),
    ];
    let mut failures = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("PASS criterion {}: {name}: {detail}", k + 1),
            Err(why) => {
                failures += 1;
                println!("FAIL criterion {}: {name}: {why}", k + 1);
            }
        }
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
