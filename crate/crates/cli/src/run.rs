//! Pipelines behind each subcommand.

use std::path::Path;
use std::time::Instant;

use fbx_core::anomalous::{construct_anomalous, AnomalousRun};
use fbx_core::classifier::{classify_point, ClassifyConfig, Kind, PointClassification};
use fbx_core::fixtures::Fixture;
use fbx_core::monotonicity::{
    format_real, monotonicity_report, radial_profile, radius_schedule, Column, MonotonicityReport, RadialProfile,
};
use fbx_core::solver::{
    solve_active_set, solve_psor, ActiveSetOptions, ObstacleProblem, PsorOptions, SolveReport,
};
use fbx_core::{BoxDomain, CartesianProbe, Error, GridField};
use serde::{Deserialize, Serialize};

use crate::config::{Command, ExperimentConfig, Reference, SolverKind};
use crate::output::{OutDir, RunManifest, Stage, Status};
use crate::report;

/// Why a run stopped early; maps onto the exit code.
#[derive(Debug)]
pub enum Failure {
    Validation(Vec<String>),
    Numerical(String),
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Numerical(_) => 3,
            Failure::Io(_) => 1,
        }
    }

    pub fn message(&self) -> String {
        match self {
            Failure::Validation(list) => list.join("\n"),
            Failure::Numerical(m) | Failure::Io(m) => m.clone(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(m) => Failure::Io(m),
            Error::InvalidDomain(_)
            | Error::InvalidSpacing { .. }
            | Error::InvalidArgument(_)
            | Error::InvalidMatrix(_)
            | Error::InvalidBracket(_)
            | Error::Format(_) => Failure::Validation(vec![e.to_string()]),
            other => Failure::Numerical(other.to_string()),
        }
    }
}

/// Finished run: manifest plus the acceptance checks that failed.
pub struct Outcome {
    pub manifest: RunManifest,
    pub failed_checks: Vec<String>,
    pub failure: Option<Failure>,
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    config_dir: &'a Path,
    out: OutDir,
    stages: Vec<Stage>,
    checks: Vec<String>,
}

impl Ctx<'_> {
    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T, Failure>) -> Result<T, Failure> {
        let r = f(self);
        let (status, message) = match &r {
            Ok(_) => (Status::Ok, None),
            Err(e) => (Status::Failed, Some(e.message())),
        };
        self.stages.push(Stage { name: name.into(), status, message });
        r
    }

    fn check(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.checks.push(what.into());
        }
    }
}

pub fn run(cfg: &ExperimentConfig, command: Command, config_dir: &Path, out: OutDir) -> Result<Outcome, Failure> {
    let start = Instant::now();
    let mut ctx = Ctx { cfg, config_dir, out, stages: Vec::new(), checks: Vec::new() };
    let result = match command {
        Command::Solve => solve_command(&mut ctx),
        Command::Diagnose => diagnose_command(&mut ctx),
        Command::Classify => classify_command(&mut ctx),
        Command::ConstructAnomalous => anomalous_command(&mut ctx),
        Command::Report => report_command(&mut ctx),
    };
    let seconds = start.elapsed().as_secs_f64();
    let stages = std::mem::take(&mut ctx.stages);
    let manifest = ctx.out.manifest(command.name(), seconds, stages)?;
    Ok(Outcome { manifest, failed_checks: ctx.checks, failure: result.err() })
}

#[derive(Serialize, Deserialize)]
struct SolveSummary {
    fixture: String,
    h: f64,
    solver: SolverKind,
    omega: Option<f64>,
    report: SolveReport,
    converged: bool,
    /// Sup-norm distance to the fixture when the fixture is a solution.
    error_vs_fixture: Option<f64>,
}

fn solve_stage(ctx: &mut Ctx) -> Result<(Fixture, GridField), Failure> {
    ctx.stage("solve", |ctx| {
        let p = ctx.cfg.problem.clone().expect("validated");
        let fx = ctx.cfg.fixture().expect("validated");
        let domain = BoxDomain::cube(fx.dim, p.half_width)?;
        let problem = ObstacleProblem::classical(domain.clone(), p.h, fx.f.clone());
        let mut omega = None;
        let (u, report) = match p.solver {
            SolverKind::Psor => {
                let w = match p.omega {
                    Some(w) => w,
                    None => PsorOptions::optimal_omega(&problem)?,
                };
                omega = Some(w);
                solve_psor(&problem, &PsorOptions { omega: w, tol: p.tol, ..Default::default() }, None)?
            }
            SolverKind::ActiveSet => {
                let opts = ActiveSetOptions { tol: p.tol, ..Default::default() };
                let (u, rep, _) = solve_active_set(&problem, &opts, None)?;
                (u, rep)
            }
        };
        let error_vs_fixture = fx.exact.then(|| {
            u.values().iter().enumerate().map(|(i, v)| (v - fx.eval(&u.position(i))).abs()).fold(0.0, f64::max)
        });
        let summary = SolveSummary {
            fixture: fx.name.clone(),
            h: p.h,
            solver: p.solver,
            omega,
            converged: report.converged,
            report,
            error_vs_fixture,
        };
        let mut bin = Vec::new();
        u.write_binary(&mut bin)?;
        ctx.out.binary("solution.bin", &bin)?;
        ctx.out.json("solve.json", &summary)?;
        if !summary.converged {
            return Err(Failure::Numerical(format!(
                "solver stopped after {} iterations at residual {:e}",
                summary.report.iterations, summary.report.comp_residual
            )));
        }
        if let Some(err) = error_vs_fixture {
            ctx.check(err <= 5.0 * p.h * p.h, format!("sup error {err:e} exceeds 5h²"));
        }
        Ok((fx, u))
    })
}

fn solve_command(ctx: &mut Ctx) -> Result<(), Failure> {
    solve_stage(ctx).map(|_| ())
}

fn profile_csv(profile: &RadialProfile) -> Result<Vec<u8>, Failure> {
    let mut body = Vec::new();
    profile.write_csv(&mut body)?;
    Ok(body)
}

#[derive(Serialize, Deserialize)]
pub struct CenterReport {
    pub center: Vec<f64>,
    pub profile: String,
    pub valid_rows: usize,
    pub report: Option<MonotonicityReport>,
    pub error: Option<String>,
}

#[derive(Serialize, Deserialize)]
pub struct DiagnoseSummary {
    pub fixture: String,
    pub centers: Vec<CenterReport>,
    pub pass: bool,
}

fn diagnose_command(ctx: &mut Ctx) -> Result<(), Failure> {
    let (fx, u) = solve_stage(ctx)?;
    ctx.stage("diagnose", |ctx| {
        let d = ctx.cfg.diagnostics();
        let probe = CartesianProbe::new(&u);
        let radii = radius_schedule(d.r_max, d.radius_ratio, u.h());
        let blowup = match d.reference {
            Reference::Fixture => fx.blowup.clone(),
            Reference::None => None,
        };
        let mut centers = Vec::new();
        for (i, x0) in ctx.cfg.centers().iter().enumerate() {
            let p = blowup.clone().map(|a| move |x: &[f64]| a.eval(x));
            let pref = p.as_ref().map(|f| f as &dyn Fn(&[f64]) -> f64);
            let profile = radial_profile(&probe, &u, pref, x0, &radii)?;
            let name = format!("profile-{i}.csv");
            ctx.out.csv(&name, &profile_csv(&profile)?)?;
            // only columns the profile actually has
            let columns: Vec<Column> = Column::MONOTONE
                .into_iter()
                .filter(|c| profile.rows.iter().filter(|r| c.get(r).is_some()).count() >= 2)
                .collect();
            let (report, error) = match monotonicity_report(&profile, &columns, d.tol_rel) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            let pass = report.as_ref().is_some_and(|r| r.pass);
            ctx.check(pass, format!("monotonicity at center {x0:?}"));
            centers.push(CenterReport {
                center: x0.clone(),
                profile: name,
                valid_rows: profile.valid_rows().count(),
                report,
                error,
            });
        }
        let pass = centers.iter().all(|c| c.report.as_ref().is_some_and(|r| r.pass));
        ctx.out.json("monotonicity.json", &DiagnoseSummary { fixture: fx.name.clone(), centers, pass })?;
        Ok(())
    })
}

#[derive(Serialize, Deserialize, Default)]
pub struct KindCounts {
    pub regular: usize,
    pub singular: usize,
    pub unresolved: usize,
}

#[derive(Serialize, Deserialize)]
pub struct ClassifySummary {
    pub fixture: String,
    pub counts: KindCounts,
    pub points: Vec<PointClassification>,
}

fn classify_command(ctx: &mut Ctx) -> Result<(), Failure> {
    let (fx, u) = solve_stage(ctx)?;
    ctx.stage("classify", |ctx| {
        let d = ctx.cfg.diagnostics();
        let probe = CartesianProbe::new(&u);
        let ccfg = ClassifyConfig { r_max: d.r_max, ..Default::default() };
        let mut points = Vec::new();
        let mut counts = KindCounts::default();
        for x0 in ctx.cfg.points() {
            let c = classify_point(&probe, &u, &x0, &ccfg)?;
            match c.kind {
                Kind::Regular => counts.regular += 1,
                Kind::Singular => counts.singular += 1,
                Kind::Unresolved => counts.unresolved += 1,
            }
            ctx.check(c.kind != Kind::Unresolved, format!("point {x0:?} unresolved"));
            points.push(c);
        }
        ctx.out.json("classification.json", &ClassifySummary { fixture: fx.name.clone(), counts, points })?;
        Ok(())
    })
}

fn anomalous_command(ctx: &mut Ctx) -> Result<(), Failure> {
    let run: AnomalousRun = ctx.stage("construct", |ctx| {
        let acfg = ctx.cfg.anomalous.as_ref().expect("validated").to_core();
        Ok(construct_anomalous(&acfg)?)
    })?;
    ctx.stage("write", |ctx| {
        ctx.out.json("anomalous.json", &run)?;
        if let Some(u) = &run.field {
            let mut bin = Vec::new();
            u.write_binary(&mut bin)?;
            ctx.out.binary("u_star.bin", &bin)?;
        }
        let mut fb = String::from("z,r\n");
        for (z, r) in &run.free_boundary {
            fb.push_str(&format!("{},{}\n", format_real(*z), format_real(*r)));
        }
        ctx.out.csv("free_boundary.csv", fb.as_bytes())?;
        if let Some(p) = &run.profile {
            ctx.out.csv("profile.csv", &profile_csv(p)?)?;
        }
        Ok(())
    })?;
    let lambda = run.lambda_star.as_ref().map(|l| l.value);
    ctx.check(run.is_anomalous(), "origin not classified singular and anomalous");
    ctx.check(lambda.is_some_and(|l| (2.05..=2.95).contains(&l)), format!("λ_* = {lambda:?} outside [2.05, 2.95]"));
    ctx.check(run.properties.all(), format!("axisymmetric properties {:?}", run.properties));
    ctx.check(run.bisection.iter().all(|s| s.monotone), "non-monotone touch predicate");
    Ok(())
}

fn report_command(ctx: &mut Ctx) -> Result<(), Failure> {
    let (csv, text) = ctx.stage("report", |ctx| {
        let paths: Vec<_> = ctx.cfg.manifests.iter().map(|p| ctx.config_dir.join(p)).collect();
        report::summarize(&paths).map_err(Failure::Validation)
    })?;
    ctx.stage("write", |ctx| {
        ctx.out.csv("summary.csv", csv.as_bytes())?;
        ctx.out.binary("summary.txt", text.as_bytes())?;
        print!("{text}");
        Ok(())
    })
}
