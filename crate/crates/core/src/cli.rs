//! Command-line front end.
//!
//! Settings are resolved per key: command-line flag (or `SIMBVP_THREADS` for
//! the thread count), then the `--config` JSON file, then the built-in
//! default.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::classify::{build_atlas, write_atlas_csv, write_atlas_jsonl, AtlasSettings};
use crate::figures::{curve_file_name, run_figure, FIGURES};
use crate::integrator::{integrate, IvpSpec, Profile};
use crate::model::{Family, ModelParams};
use crate::phaseplane;
use crate::shooting::{
    critical_gamma, enumerate_detailed, solve_bvp, ScanRange, ShootSettings, SolutionRecord,
};
use crate::verify;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_NUMERICAL: u8 = 2;
pub const EXIT_NONE_FOUND: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "simbvp",
    version,
    about = "Similarity boundary-layer solutions by shooting"
)]
#[command(allow_negative_numbers = true)]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON file with defaults for any flag (keys use underscores).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true, env = "SIMBVP_THREADS")]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Shooting horizon; defaults to one derived from alpha.
    #[arg(long, global = true)]
    pub t_max: Option<f64>,
    #[arg(long, global = true)]
    pub rel_tol: Option<f64>,
    #[arg(long, global = true)]
    pub abs_tol: Option<f64>,
    /// Tolerance on |f'(t_max)| for bounded solutions.
    #[arg(long, global = true)]
    pub bc_tol: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct ProblemArgs {
    /// temperature or flux.
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub m: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct ScanArgs {
    #[arg(long)]
    pub scan_lo: Option<f64>,
    #[arg(long)]
    pub scan_hi: Option<f64>,
    #[arg(long)]
    pub scan_step: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Find the solutions at one (family, m, gamma).
    #[command(allow_negative_numbers = true)]
    Solve {
        #[command(flatten)]
        problem: ProblemArgs,
        /// Refine the single root in LO,HI instead of scanning.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        bracket: Option<Vec<f64>>,
        #[command(flatten)]
        scan: ScanArgs,
        /// Skip unbounded band members.
        #[arg(long)]
        bounded_only: bool,
    },
    /// Reproduce the reference figures (1 to 4, or all).
    #[command(allow_negative_numbers = true)]
    Figures {
        #[arg(default_value = "all")]
        figure: String,
    },
    /// Classify the solution set over a grid of (m, gamma).
    #[command(allow_negative_numbers = true)]
    Sweep {
        #[arg(long)]
        family: Option<String>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        m_values: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        gamma_values: Option<Vec<f64>>,
        #[arg(long)]
        bounded_only: bool,
    },
    /// Bisect for the critical gamma separating solvable from unsolvable.
    #[command(allow_negative_numbers = true)]
    GammaStar {
        #[arg(long)]
        family: Option<String>,
        #[arg(long)]
        m: Option<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        gamma_bracket: Option<Vec<f64>>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Map one trajectory to the (u, v) plane and report fixed points.
    #[command(allow_negative_numbers = true)]
    Phase {
        #[command(flatten)]
        problem: ProblemArgs,
        /// Shooting value to integrate; defaults to the first bounded root.
        #[arg(long)]
        free_value: Option<f64>,
        /// Base point of s; defaults to the start of the first interval with f != 0.
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        t_end: Option<f64>,
    },
    /// Fit the growth exponent of the unbounded solutions.
    #[command(allow_negative_numbers = true)]
    Asymptote {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        scan: ScanArgs,
    },
    /// Run the closed-form and invariant self-checks.
    #[command(allow_negative_numbers = true)]
    Verify {
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Keys accepted in the `--config` file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub threads: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub format: Option<Format>,
    pub t_max: Option<f64>,
    pub rel_tol: Option<f64>,
    pub abs_tol: Option<f64>,
    pub bc_tol: Option<f64>,
    pub family: Option<String>,
    pub m: Option<f64>,
    pub gamma: Option<f64>,
    pub bracket: Option<[f64; 2]>,
    pub scan_lo: Option<f64>,
    pub scan_hi: Option<f64>,
    pub scan_step: Option<f64>,
    pub bounded_only: Option<bool>,
    pub figure: Option<String>,
    pub m_values: Option<Vec<f64>>,
    pub gamma_values: Option<Vec<f64>>,
    pub gamma_bracket: Option<[f64; 2]>,
    pub tol: Option<f64>,
    pub free_value: Option<f64>,
    pub tau: Option<f64>,
    pub t_end: Option<f64>,
    pub seed: Option<u64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Failure classes that map onto exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    NoneFound(String),
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    CliError::Usage(msg.into()).into()
}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<CliError>() {
        return match e {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::NoneFound(_) => EXIT_NONE_FOUND,
        };
    }
    match err.downcast_ref::<crate::Error>() {
        Some(crate::Error::InvalidInput(_)) => EXIT_USAGE,
        Some(crate::Error::SameStatusAtEndpoints { .. })
        | Some(crate::Error::NoSignChange { .. }) => EXIT_NONE_FOUND,
        _ => EXIT_NUMERICAL,
    }
}

/// Everything a command needs after merging flags with the config file.
struct Ctx {
    file: FileConfig,
    output_dir: PathBuf,
    format: Format,
    shoot: ShootSettings,
}

impl Ctx {
    fn new(common: &CommonArgs) -> anyhow::Result<Self> {
        let file = match &common.config {
            Some(p) => FileConfig::load(p).map_err(|e| usage(format!("{e:#}")))?,
            None => FileConfig::default(),
        };
        let mut shoot = ShootSettings {
            t_max: common.t_max.or(file.t_max),
            ..ShootSettings::default()
        };
        if let Some(x) = common.rel_tol.or(file.rel_tol) {
            shoot.rel_tol = x;
        }
        if let Some(x) = common.abs_tol.or(file.abs_tol) {
            shoot.abs_tol = x;
        }
        if let Some(x) = common.bc_tol.or(file.bc_tol) {
            shoot.bc_tol = x;
        }
        shoot.validate().map_err(|e| usage(e.to_string()))?;
        if let Some(n) = common.threads.or(file.threads) {
            if n == 0 {
                return Err(usage("threads must be at least 1"));
            }
            // Fails only if a pool already exists, e.g. in tests.
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
        Ok(Self {
            output_dir: common
                .output_dir
                .clone()
                .or(file.output_dir.clone())
                .unwrap_or(".".into()),
            format: common.format.or(file.format).unwrap_or(Format::Json),
            shoot,
            file,
        })
    }

    fn family(&self, flag: &Option<String>) -> anyhow::Result<Family> {
        let name = flag
            .clone()
            .or(self.file.family.clone())
            .ok_or_else(|| usage("--family is required"))?;
        let fam: Family = name
            .parse()
            .map_err(|e: crate::Error| usage(e.to_string()))?;
        if fam == Family::Generic {
            return Err(usage("family must be temperature or flux"));
        }
        Ok(fam)
    }

    fn params(&self, p: &ProblemArgs) -> anyhow::Result<ModelParams> {
        let family = self.family(&p.family)?;
        let m =
            p.m.or(self.file.m)
                .ok_or_else(|| usage("--m is required"))?;
        let gamma = p
            .gamma
            .or(self.file.gamma)
            .ok_or_else(|| usage("--gamma is required"))?;
        ModelParams::new(family, m, gamma).map_err(|e| usage(e.to_string()))
    }

    fn scan(&self, s: &ScanArgs, gamma: f64) -> anyhow::Result<ScanRange> {
        let d = ScanRange::default_for(gamma);
        ScanRange::new(
            s.scan_lo.or(self.file.scan_lo).unwrap_or(d.lo),
            s.scan_hi.or(self.file.scan_hi).unwrap_or(d.hi),
            s.scan_step.or(self.file.scan_step).unwrap_or(d.step),
        )
        .map_err(|e| usage(e.to_string()))
    }

    fn dir(&self, sub: Option<&str>) -> anyhow::Result<PathBuf> {
        let d = match sub {
            Some(s) => self.output_dir.join(s),
            None => self.output_dir.clone(),
        };
        fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
        Ok(d)
    }
}

fn pair(v: &Option<Vec<f64>>, flag: &str) -> anyhow::Result<Option<[f64; 2]>> {
    match v.as_deref() {
        None => Ok(None),
        Some(&[a, b]) => Ok(Some([a, b])),
        Some(_) => Err(usage(format!("{flag} takes two values, LO,HI"))),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn pretty(v: &impl Serialize) -> anyhow::Result<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(v)?;
    s.push(b'\n');
    Ok(s)
}

fn profile_csv(p: &Profile) -> Vec<u8> {
    p.to_csv_string().into_bytes()
}

fn opt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| v.to_string())
}

fn records_csv(records: &[SolutionRecord]) -> Vec<u8> {
    let mut out = String::from(
        "family,m,gamma,free_value,bounded,lambda,shape,growth_exponent,tail,tail_exponent\n",
    );
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.params.family().name(),
            opt(r.params.m()),
            r.params.gamma(),
            r.free_value,
            r.bounded,
            opt(r.limit_lambda),
            r.shape.label(),
            opt(r.growth_exponent),
            serde_json::to_value(r.tail)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default(),
            opt(r.tail_exponent),
        ));
    }
    out.into_bytes()
}

fn write_records(ctx: &Ctx, dir: &Path, records: &[SolutionRecord]) -> anyhow::Result<()> {
    match ctx.format {
        Format::Json => {
            let v: Vec<_> = records.iter().map(SolutionRecord::to_json).collect();
            write_file(&dir.join("solutions.json"), &pretty(&v)?)?;
        }
        Format::Csv => write_file(&dir.join("solutions.csv"), &records_csv(records))?,
    }
    for (k, r) in records.iter().enumerate() {
        write_file(
            &dir.join(format!("profile_{k:03}.csv")),
            &profile_csv(&r.profile),
        )?;
    }
    Ok(())
}

fn summary_line(r: &SolutionRecord) -> String {
    let lambda = r.limit_lambda.map_or("-".into(), |l| format!("{l:.6}"));
    let growth = r.growth_exponent.map_or("-".into(), |p| format!("{p:.6}"));
    format!(
        "free_value={:.10} bounded={} lambda={lambda} shape={} growth={growth}",
        r.free_value,
        r.bounded,
        r.shape.label()
    )
}

fn cmd_solve(
    ctx: &Ctx,
    problem: &ProblemArgs,
    bracket: &Option<Vec<f64>>,
    scan: &ScanArgs,
    bounded_only: bool,
) -> anyhow::Result<()> {
    let params = ctx.params(problem)?;
    let bracket = pair(bracket, "--bracket")?.or(ctx.file.bracket);
    let records = match bracket {
        Some([lo, hi]) => match solve_bvp(&params, (lo, hi), &ctx.shoot) {
            Ok(r) => vec![r],
            Err(e @ (crate::Error::NoSignChange { .. } | crate::Error::NotASolution { .. })) => {
                return Err(CliError::NoneFound(e.to_string()).into())
            }
            Err(e) => return Err(e.into()),
        },
        None => {
            let unbounded_ok = !(bounded_only || ctx.file.bounded_only.unwrap_or(false));
            let range = ctx.scan(scan, params.gamma())?;
            let en = enumerate_detailed(&params, &range, &ctx.shoot, unbounded_ok)?;
            for n in &en.notes {
                eprintln!("note: {n}");
            }
            en.records
        }
    };
    let dir = ctx.dir(None)?;
    write_records(ctx, &dir, &records)?;
    for r in &records {
        println!("{}", summary_line(r));
    }
    if records.is_empty() {
        return Err(CliError::NoneFound(format!(
            "no solution found for {} m={} gamma={}",
            params.family().name(),
            params.m().unwrap_or(f64::NAN),
            params.gamma()
        ))
        .into());
    }
    Ok(())
}

fn cmd_figures(ctx: &Ctx, which: &str) -> anyhow::Result<()> {
    let which = ctx
        .file
        .figure
        .as_deref()
        .filter(|_| which == "all")
        .unwrap_or(which);
    let ids: Vec<u8> = if which == "all" {
        FIGURES.iter().map(|c| c.id).collect()
    } else {
        vec![which
            .parse()
            .map_err(|_| usage(format!("unknown figure '{which}'")))?]
    };
    let mut failed = Vec::new();
    for id in ids {
        let run = run_figure(id, &ctx.shoot).map_err(|e| match e {
            crate::Error::InvalidInput(m) => usage(m),
            other => other.into(),
        })?;
        let dir = ctx.dir(Some(&format!("fig{id}")))?;
        for (k, r) in run.enumeration.records.iter().enumerate() {
            write_file(&dir.join(curve_file_name(k)), &profile_csv(&r.profile))?;
        }
        write_file(&dir.join("manifest.json"), &pretty(&run.manifest)?)?;
        let c = &run.manifest.counts;
        println!(
            "figure {id}: {} curves ({} bounded, {} unbounded, {} with lambda < 0) {}",
            c.total,
            c.bounded,
            c.unbounded,
            c.lambda_negative,
            if run.manifest.reproduced {
                "reproduced"
            } else {
                "NOT reproduced"
            }
        );
        if !run.manifest.reproduced {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        bail!("figures {failed:?} do not match their expected curve counts");
    }
    Ok(())
}

fn cmd_sweep(
    ctx: &Ctx,
    family: &Option<String>,
    m_values: &Option<Vec<f64>>,
    gamma_values: &Option<Vec<f64>>,
    bounded_only: bool,
) -> anyhow::Result<()> {
    let fam = ctx.family(family)?;
    let ms = m_values
        .clone()
        .or(ctx.file.m_values.clone())
        .ok_or_else(|| usage("--m-values is required"))?;
    let gs = gamma_values
        .clone()
        .or(ctx.file.gamma_values.clone())
        .ok_or_else(|| usage("--gamma-values is required"))?;
    let settings = AtlasSettings {
        shoot: ctx.shoot,
        scan: None,
        unbounded_ok: !(bounded_only || ctx.file.bounded_only.unwrap_or(false)),
    };
    let atlas = build_atlas(fam, &ms, &gs, &settings)?;
    let dir = ctx.dir(None)?;
    let mut buf = Vec::new();
    match ctx.format {
        Format::Json => {
            write_atlas_jsonl(&atlas, &mut buf)?;
            write_file(&dir.join("atlas.jsonl"), &buf)?;
        }
        Format::Csv => {
            write_atlas_csv(&atlas, &mut buf)?;
            write_file(&dir.join("atlas.csv"), &buf)?;
        }
    }
    for e in &atlas {
        println!("m={} gamma={} {}", e.m, e.gamma, e.outcome.label());
    }
    Ok(())
}

/// Default gamma bracket: gamma* is positive where solutions appear for large
/// gamma, negative otherwise.
fn default_gamma_bracket(family: Family, m: f64) -> [f64; 2] {
    let positive = match family {
        Family::PrescribedTemperature => m < -1.0,
        _ => m < -2.0,
    };
    if positive {
        [0.0, 10.0]
    } else {
        [-20.0, 0.0]
    }
}

fn cmd_gamma_star(
    ctx: &Ctx,
    family: &Option<String>,
    m: Option<f64>,
    bracket: &Option<Vec<f64>>,
    tol: Option<f64>,
) -> anyhow::Result<()> {
    let fam = ctx.family(family)?;
    let m = m.or(ctx.file.m).ok_or_else(|| usage("--m is required"))?;
    let [lo, hi] = pair(bracket, "--gamma-bracket")?
        .or(ctx.file.gamma_bracket)
        .unwrap_or_else(|| default_gamma_bracket(fam, m));
    let tol = tol.or(ctx.file.tol).unwrap_or(1e-3);
    let cg = critical_gamma(fam, m, (lo, hi), tol, &ctx.shoot)?;
    let dir = ctx.dir(None)?;
    match ctx.format {
        Format::Json => {
            let mut v = serde_json::to_value(cg)?;
            v["spec_version"] = json!("1");
            write_file(&dir.join("gamma_star.json"), &pretty(&v)?)?;
        }
        Format::Csv => {
            let side = serde_json::to_value(cg.side_with_solutions)?;
            let text = format!(
                "family,m,gamma_star,bracket_width,side_with_solutions,verified\n{},{},{},{},{},{}\n",
                fam.name(),
                m,
                cg.gamma_star,
                cg.bracket_width,
                side.as_str().unwrap_or_default(),
                cg.verified
            );
            write_file(&dir.join("gamma_star.csv"), text.as_bytes())?;
        }
    }
    println!(
        "gamma_star={} width={} verified={}",
        cg.gamma_star, cg.bracket_width, cg.verified
    );
    Ok(())
}

fn cmd_phase(
    ctx: &Ctx,
    problem: &ProblemArgs,
    free_value: Option<f64>,
    tau: Option<f64>,
    t_end: Option<f64>,
) -> anyhow::Result<()> {
    let params = ctx.params(problem)?;
    let profile = match free_value.or(ctx.file.free_value) {
        Some(x) => {
            let bc = params.boundary_conditions(x)?;
            let mut spec = IvpSpec::new(params, bc.initial_state(), ctx.shoot.horizon(&params));
            spec = spec.with_tolerances(ctx.shoot.rel_tol, ctx.shoot.abs_tol);
            integrate(&spec)?
        }
        None => {
            let range = ScanRange::default_for(params.gamma());
            enumerate_detailed(&params, &range, &ctx.shoot, false)?
                .records
                .into_iter()
                .find(|r| r.band.is_none())
                .ok_or_else(|| CliError::NoneFound("no bounded solution to transform".into()))?
                .profile
        }
    };
    let intervals = phaseplane::sign_constant_intervals(&profile);
    let tau = tau.or(ctx.file.tau);
    let (a, b) = match tau {
        Some(t) => intervals
            .iter()
            .copied()
            .find(|&(a, b)| a <= t && t < b)
            .map(|(_, b)| (t, b)),
        None => intervals.first().copied(),
    }
    .ok_or_else(|| {
        anyhow!(crate::Error::FVanishes {
            t: tau.unwrap_or(profile.first().t)
        })
    })?;
    let b = t_end.or(ctx.file.t_end).unwrap_or(b);
    let states = phaseplane::to_phase(&profile, a, b)?;
    let dir = ctx.dir(None)?;
    match ctx.format {
        Format::Csv => {
            let mut buf = Vec::new();
            phaseplane::write_phase_csv(&states, &mut buf)?;
            write_file(&dir.join("phase.csv"), &buf)?;
        }
        Format::Json => {
            let v = json!({ "spec_version": "1", "tau": a, "t_end": b, "states": states });
            write_file(&dir.join("phase.json"), &pretty(&v)?)?;
        }
    }
    let fps = phaseplane::fixed_points_json(params.alpha(), params.beta())?;
    write_file(&dir.join("fixed_points.json"), &pretty(&fps)?)?;
    println!("phase: {} states on t in [{a}, {b}]", states.len());
    Ok(())
}

fn cmd_asymptote(ctx: &Ctx, problem: &ProblemArgs, scan: &ScanArgs) -> anyhow::Result<()> {
    let params = ctx.params(problem)?;
    let range = ctx.scan(scan, params.gamma())?;
    let en = enumerate_detailed(&params, &range, &ctx.shoot, true)?;
    let predicted = params.asymptotic_exponent();
    let fits: Vec<_> = en
        .records
        .iter()
        .filter_map(|r| r.growth_exponent.map(|p| (r.free_value, p)))
        .collect();
    if fits.is_empty() {
        return Err(CliError::NoneFound("no unbounded solution to fit".into()).into());
    }
    let dir = ctx.dir(None)?;
    let rel = |p: f64| predicted.map(|q| (p - q).abs() / q.abs());
    match ctx.format {
        Format::Json => {
            let rows: Vec<_> = fits
                .iter()
                .map(|&(x, p)| json!({"free_value": x, "exponent": p, "relative_error": rel(p)}))
                .collect();
            let v = json!({
                "spec_version": "1",
                "family": params.family().name(),
                "m": params.m(),
                "gamma": params.gamma(),
                "predicted_exponent": predicted,
                "fits": rows,
            });
            write_file(&dir.join("asymptote.json"), &pretty(&v)?)?;
        }
        Format::Csv => {
            let mut text = String::from("free_value,exponent,predicted_exponent,relative_error\n");
            for &(x, p) in &fits {
                text.push_str(&format!("{x},{p},{},{}\n", opt(predicted), opt(rel(p))));
            }
            write_file(&dir.join("asymptote.csv"), text.as_bytes())?;
        }
    }
    for &(x, p) in &fits {
        println!(
            "free_value={x:.10} exponent={p:.6} predicted={}",
            opt(predicted)
        );
    }
    Ok(())
}

fn cmd_verify(ctx: &Ctx, seed: Option<u64>) -> anyhow::Result<()> {
    let seed = seed.or(ctx.file.seed).unwrap_or(verify::VERIFY_SEED);
    let results = verify::run_all(seed)?;
    let dir = ctx.dir(None)?;
    match ctx.format {
        Format::Json => {
            let v = json!({ "spec_version": "1", "seed": seed, "suites": results });
            write_file(&dir.join("verify.json"), &pretty(&v)?)?;
        }
        Format::Csv => {
            let mut text = String::from("suite,passed,cases,max_error,tolerance\n");
            for r in &results {
                text.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.name, r.passed, r.cases, r.max_error, r.tolerance
                ));
            }
            write_file(&dir.join("verify.csv"), text.as_bytes())?;
        }
    }
    for r in &results {
        println!(
            "{} {}: max error {:e} (tolerance {:e}, {} cases)",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.max_error,
            r.tolerance,
            r.cases
        );
    }
    if results.iter().any(|r| !r.passed) {
        bail!("some self-checks failed");
    }
    Ok(())
}

pub fn run(cli: &Cli) -> anyhow::Result<()> {
    let ctx = Ctx::new(&cli.common)?;
    match &cli.command {
        Command::Solve {
            problem,
            bracket,
            scan,
            bounded_only,
        } => cmd_solve(&ctx, problem, bracket, scan, *bounded_only),
        Command::Figures { figure } => cmd_figures(&ctx, figure),
        Command::Sweep {
            family,
            m_values,
            gamma_values,
            bounded_only,
        } => cmd_sweep(&ctx, family, m_values, gamma_values, *bounded_only),
        Command::GammaStar {
            family,
            m,
            gamma_bracket,
            tol,
        } => cmd_gamma_star(&ctx, family, *m, gamma_bracket, *tol),
        Command::Phase {
            problem,
            free_value,
            tau,
            t_end,
        } => cmd_phase(&ctx, problem, *free_value, *tau, *t_end),
        Command::Asymptote { problem, scan } => cmd_asymptote(&ctx, problem, scan),
        Command::Verify { seed } => cmd_verify(&ctx, *seed),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let code = exit_code(&e);
            let _ = writeln!(std::io::stderr(), "simbvp: {e:#}");
            code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_negative_values() {
        let cli = Cli::try_parse_from([
            "simbvp",
            "solve",
            "--family",
            "flux",
            "--m",
            "-1",
            "--gamma",
            "-2",
            "--bracket",
            "-1,2",
        ])
        .unwrap();
        match cli.command {
            Command::Solve {
                problem, bracket, ..
            } => {
                assert_eq!(problem.m, Some(-1.0));
                assert_eq!(bracket, Some(vec![-1.0, 2.0]));
            }
            _ => panic!("wrong command"),
        }
    }

    #[test]
    fn config_rejects_unknown_keys() {
        assert!(serde_json::from_str::<FileConfig>(r#"{"gama": 1}"#).is_err());
        let c: FileConfig = serde_json::from_str(r#"{"gamma": 1, "format": "csv"}"#).unwrap();
        assert_eq!(c.format, Some(Format::Csv));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&usage("x")), EXIT_USAGE);
        assert_eq!(
            exit_code(&CliError::NoneFound("x".into()).into()),
            EXIT_NONE_FOUND
        );
        assert_eq!(
            exit_code(&crate::Error::StepUnderflow { t: 1.0 }.into()),
            EXIT_NUMERICAL
        );
        assert_eq!(
            exit_code(&crate::Error::InvalidInput("x".into()).into()),
            EXIT_USAGE
        );
    }

    #[test]
    fn gamma_bracket_defaults() {
        assert_eq!(
            default_gamma_bracket(Family::PrescribedFlux, -3.0),
            [0.0, 10.0]
        );
        assert_eq!(
            default_gamma_bracket(Family::PrescribedTemperature, -0.75),
            [-20.0, 0.0]
        );
    }
}
