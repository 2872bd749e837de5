//! The four reference cases and the curve counts each must reproduce.

use serde::{Deserialize, Serialize};

use crate::classify::{ShapeClass, LAMBDA_ZERO_TOL};
use crate::error::{Error, Result};
use crate::integrator::SIGN_DEAD_BAND;
use crate::model::{Family, ModelParams};
use crate::shooting::{enumerate_detailed, Enumeration, ScanRange, ShootSettings, SolutionRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FigureCase {
    pub id: u8,
    pub family: Family,
    pub m: f64,
    pub gamma: f64,
}

pub const FIGURES: [FigureCase; 4] = [
    FigureCase {
        id: 1,
        family: Family::PrescribedTemperature,
        m: -2.0,
        gamma: 5.0,
    },
    FigureCase {
        id: 2,
        family: Family::PrescribedTemperature,
        m: -0.75,
        gamma: -10.0,
    },
    FigureCase {
        id: 3,
        family: Family::PrescribedTemperature,
        m: 0.5,
        gamma: 0.0,
    },
    FigureCase {
        id: 4,
        family: Family::PrescribedTemperature,
        m: 1.1,
        gamma: 0.0,
    },
];

pub fn figure_case(id: u8) -> Result<FigureCase> {
    FIGURES
        .iter()
        .copied()
        .find(|c| c.id == id)
        .ok_or_else(|| Error::InvalidInput(format!("no figure {id}; expected 1 to 4")))
}

/// Curve counts by limit and by shape.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurveCounts {
    pub total: usize,
    pub bounded: usize,
    pub unbounded: usize,
    pub lambda_negative: usize,
    pub lambda_zero: usize,
    pub lambda_positive: usize,
    pub concave: usize,
    pub convex_concave: usize,
    pub concave_convex: usize,
    pub convex: usize,
    pub mixed: usize,
    pub concave_convex_lambda_positive: usize,
    /// Curves with `f <= 0` and `f' >= 0` at every sample.
    pub negative_increasing: usize,
}

pub fn count_curves(records: &[SolutionRecord]) -> CurveCounts {
    let mut c = CurveCounts {
        total: records.len(),
        ..Default::default()
    };
    for r in records {
        if r.bounded {
            c.bounded += 1;
        } else {
            c.unbounded += 1;
        }
        let positive = matches!(r.limit_lambda, Some(l) if l > LAMBDA_ZERO_TOL);
        match r.limit_lambda {
            Some(l) if l < -LAMBDA_ZERO_TOL => c.lambda_negative += 1,
            Some(_) if positive => c.lambda_positive += 1,
            Some(_) => c.lambda_zero += 1,
            None => {}
        }
        match r.shape {
            ShapeClass::Concave => c.concave += 1,
            ShapeClass::ConvexConcave => c.convex_concave += 1,
            ShapeClass::ConcaveConvex => {
                c.concave_convex += 1;
                if positive {
                    c.concave_convex_lambda_positive += 1;
                }
            }
            ShapeClass::Convex => c.convex += 1,
            ShapeClass::Mixed(_) => c.mixed += 1,
        }
        let neg_inc = r
            .profile
            .samples
            .iter()
            .all(|s| s.state.f <= SIGN_DEAD_BAND && s.state.fp >= -SIGN_DEAD_BAND);
        if neg_inc {
            c.negative_increasing += 1;
        }
    }
    c
}

/// One expectation of a figure and whether it holds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Check {
    pub requirement: String,
    pub observed: usize,
    pub holds: bool,
}

fn at_least(requirement: &str, observed: usize, n: usize) -> Check {
    Check {
        requirement: format!("{requirement} >= {n}"),
        observed,
        holds: observed >= n,
    }
}

fn exactly(requirement: &str, observed: usize, n: usize) -> Check {
    Check {
        requirement: format!("{requirement} == {n}"),
        observed,
        holds: observed == n,
    }
}

pub fn figure_checks(id: u8, c: &CurveCounts) -> Vec<Check> {
    match id {
        1 => vec![
            at_least("curves", c.total, 5),
            exactly("lambda < 0", c.lambda_negative, 2),
            exactly("negative and increasing", c.negative_increasing, c.total),
        ],
        2 => vec![
            exactly("bounded", c.bounded, 2),
            at_least("unbounded", c.unbounded, 4),
        ],
        3 => vec![
            exactly("curves", c.total, 1),
            exactly("concave", c.concave, 1),
            exactly("bounded", c.bounded, 1),
        ],
        4 => vec![
            exactly("concave", c.concave, 1),
            at_least("concave-convex", c.concave_convex, 3),
            exactly("bounded", c.bounded, c.total),
            exactly(
                "concave-convex with lambda > 0",
                c.concave_convex_lambda_positive,
                1,
            ),
        ],
        _ => Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureManifest {
    pub spec_version: String,
    pub figure: u8,
    pub family: Family,
    pub m: f64,
    pub gamma: f64,
    pub counts: CurveCounts,
    pub checks: Vec<Check>,
    pub reproduced: bool,
    /// Curve file names, in free-value order.
    pub curves: Vec<String>,
}

pub struct FigureRun {
    pub case: FigureCase,
    pub enumeration: Enumeration,
    pub manifest: FigureManifest,
}

pub fn curve_file_name(k: usize) -> String {
    format!("curve_{k:02}.csv")
}

/// Enumerates the figure's solutions over the default scan and checks the
/// expected counts.
pub fn run_figure(id: u8, settings: &ShootSettings) -> Result<FigureRun> {
    let case = figure_case(id)?;
    let params = ModelParams::new(case.family, case.m, case.gamma)?;
    let enumeration =
        enumerate_detailed(&params, &ScanRange::default_for(case.gamma), settings, true)?;
    let counts = count_curves(&enumeration.records);
    let checks = figure_checks(id, &counts);
    let manifest = FigureManifest {
        spec_version: "1".into(),
        figure: id,
        family: case.family,
        m: case.m,
        gamma: case.gamma,
        reproduced: checks.iter().all(|c| c.holds),
        checks,
        counts,
        curves: (0..enumeration.records.len())
            .map(curve_file_name)
            .collect(),
    };
    Ok(FigureRun {
        case,
        enumeration,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_figure() {
        assert!(figure_case(5).is_err());
        assert_eq!(figure_case(2).unwrap().gamma, -10.0);
    }

    #[test]
    fn checks_on_counts() {
        let c = CurveCounts {
            total: 1,
            bounded: 1,
            concave: 1,
            ..Default::default()
        };
        assert!(figure_checks(3, &c).iter().all(|k| k.holds));
        assert!(!figure_checks(4, &c).iter().all(|k| k.holds));
    }

    #[test]
    fn figure_three() {
        let run = run_figure(3, &ShootSettings::default()).unwrap();
        assert!(run.manifest.reproduced, "{:?}", run.manifest);
        assert_eq!(run.manifest.curves, vec!["curve_00.csv".to_string()]);
    }
}
