//! Verification suites over a built model, leaf traces and grids of `u`.
//!
//! Every check evaluates one residual per sample point, in parallel, and reports
//! its maximum, mean and minimum against a tolerance. A check is either an upper
//! bound (pass when `max ≤ tolerance`) or a lower bound (pass when
//! `min > tolerance`); any sample that raises an error fails its check. Numbers
//! in CSV output are written with 17 significant digits.

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blowup::{self, contact_volume, hilbert_plus_theta, profile_formula_check};
use crate::complexify::{ComplexPoint, HalfStripPoint};
use crate::error::{Error, Result};
use crate::finsler::{FinslerMetric, MetricFamily, MetricSpec, SpherePoint, TangentVector};
use crate::frames::{
    flow_commutation_defect, leaf_cauchy_riemann, leaf_check, leaf_map, leaf_pullback, recover_finsler,
    vector_fields_xy, RECOVERY_HEIGHTS,
};
use crate::geodesic::conservation_defect;
use crate::hessian::{self, boundary_hessian, complex_hessian, ma_residual, ScalarField, NEAR_M};
use crate::model::{sample_rays, sample_tube, BuildDiagnostics, MAModel, SINGULAR_SET_CUTOFF};
use crate::sampling::QuasiRandom;

pub const DEFAULT_SEED: u64 = 42;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Ma,
    Psh,
    Hilbert,
    Leaf,
    Roundtrip,
    Contact,
    Frames,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::Ma,
        Suite::Psh,
        Suite::Hilbert,
        Suite::Leaf,
        Suite::Roundtrip,
        Suite::Contact,
        Suite::Frames,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Ma => "ma",
            Suite::Psh => "psh",
            Suite::Hilbert => "hilbert",
            Suite::Leaf => "leaf",
            Suite::Roundtrip => "roundtrip",
            Suite::Contact => "contact",
            Suite::Frames => "frames",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s.trim())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown suite `{s}`")))
    }
}

/// Comma-separated suite names; `all` selects every suite.
pub fn parse_suites(list: &str) -> Result<Vec<Suite>> {
    if list.trim() == "all" {
        return Ok(Suite::ALL.to_vec());
    }
    let mut suites = list.split(',').map(Suite::from_str).collect::<Result<Vec<_>>>()?;
    suites.sort();
    suites.dedup();
    Ok(suites)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub spec_path: Option<PathBuf>,
    pub radius: f64,
    /// Samples per check; `None` uses each check's default count.
    pub samples: Option<usize>,
    pub seed: u64,
    /// Tolerance overrides keyed by check name.
    pub tolerances: BTreeMap<String, f64>,
    pub out_dir: Option<PathBuf>,
    /// Record wall-clock time per check (makes reports non-reproducible).
    pub record_timings: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            spec_path: None,
            radius: 0.5,
            samples: None,
            seed: DEFAULT_SEED,
            tolerances: BTreeMap::new(),
            out_dir: None,
            record_timings: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == Some(0) {
            return Err(Error::InvalidArgument("sample count must be at least 1".into()));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "radius {} must be positive",
                self.radius
            )));
        }
        for (name, tol) in &self.tolerances {
            if !(tol.is_finite() && *tol >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "tolerance for {name} must be non-negative"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    /// Pass when the largest residual is at most the tolerance.
    Upper,
    /// Pass when the smallest value exceeds the tolerance.
    Lower,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub suite: Suite,
    /// The identity the check verifies.
    pub anchor: String,
    pub bound: Bound,
    pub samples: usize,
    pub errors: usize,
    pub max: Option<f64>,
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub tolerance: f64,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub family: MetricFamily,
    pub dim: usize,
    pub metric: MetricSpec,
    pub requested_radius: f64,
    pub radius: f64,
    pub diagnostics: BuildDiagnostics,
}

impl ModelMeta {
    pub fn of(model: &MAModel) -> Self {
        Self {
            family: model.metric().family(),
            dim: model.dim(),
            metric: model.metric().to_spec(),
            requested_radius: model.diagnostics().requested_radius,
            radius: model.radius(),
            diagnostics: model.diagnostics().clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub model: ModelMeta,
    pub seed: u64,
    pub suites: Vec<Suite>,
    pub checks: Vec<CheckResult>,
    pub pass: bool,
}

impl VerificationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Plain-text summary, one line per check.
    pub fn summary(&self) -> String {
        let m = &self.model;
        let mut out = format!(
            "model: {:?} n={} R={} (requested {}) seed={}\n",
            m.family, m.dim, m.radius, m.requested_radius, self.seed
        );
        let show = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3e}"));
        for c in &self.checks {
            let (label, value) = match c.bound {
                Bound::Upper => ("max", c.max),
                Bound::Lower => ("min", c.min),
            };
            out += &format!(
                "{} {:<24} {label} {:>10}  mean {:>10}  tol {:.1e}  n={}",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                show(value),
                show(c.mean),
                c.tolerance,
                c.samples
            );
            if c.errors > 0 {
                out += &format!("  errors={}", c.errors);
            }
            if let Some(t) = c.wall_clock_s {
                out += &format!("  {t:.2}s");
            }
            if let Some(note) = &c.note {
                out += &format!("  ({note})");
            }
            out.push('\n');
        }
        let passed = self.checks.iter().filter(|c| c.pass).count();
        out += &format!(
            "overall: {} ({passed}/{} checks)\n",
            if self.pass { "PASS" } else { "FAIL" },
            self.checks.len()
        );
        out
    }
}

struct CheckDef {
    name: &'static str,
    anchor: &'static str,
    bound: Bound,
    tolerance: f64,
}

const fn upper(name: &'static str, anchor: &'static str, tolerance: f64) -> CheckDef {
    CheckDef {
        name,
        anchor,
        bound: Bound::Upper,
        tolerance,
    }
}

const fn lower(name: &'static str, anchor: &'static str, tolerance: f64) -> CheckDef {
    CheckDef {
        name,
        anchor,
        bound: Bound::Lower,
        tolerance,
    }
}

type Outcome = std::result::Result<Vec<f64>, String>;

struct Runner<'a> {
    model: &'a MAModel,
    cfg: &'a RunConfig,
    suite: Suite,
    checks: Vec<CheckResult>,
}

impl<'a> Runner<'a> {
    fn count(&self, default: usize) -> usize {
        self.cfg.samples.unwrap_or(default)
    }

    fn tube(&self, count: usize, lo: f64, hi: f64) -> Vec<(SpherePoint, f64)> {
        let r = self.model.radius();
        sample_tube(self.model.dim(), count, self.cfg.seed, lo * r, hi * r)
    }

    fn rays(&self, count: usize) -> Vec<SpherePoint> {
        sample_rays(self.model.dim(), count, self.cfg.seed)
    }

    /// Evaluates `f` on every sample and records one check per output slot.
    fn run<T, F>(&mut self, defs: &[CheckDef], items: &[T], f: F)
    where
        T: Sync,
        F: Fn(&T) -> Result<Vec<f64>> + Sync,
    {
        self.run_annotated(defs, items, f, |_, _| None)
    }

    fn run_annotated<T, F, N>(&mut self, defs: &[CheckDef], items: &[T], f: F, annotate: N)
    where
        T: Sync,
        F: Fn(&T) -> Result<Vec<f64>> + Sync,
        N: Fn(usize, &[Vec<f64>]) -> Option<String>,
    {
        let start = Instant::now();
        let outcomes: Vec<Outcome> = items.par_iter().map(|t| f(t).map_err(|e| e.to_string())).collect();
        let elapsed = start.elapsed().as_secs_f64();
        let ok: Vec<Vec<f64>> = outcomes.iter().filter_map(|o| o.as_ref().ok().cloned()).collect();
        let first_error = outcomes.iter().find_map(|o| o.as_ref().err().cloned());
        let errors = outcomes.len() - ok.len();
        for (k, def) in defs.iter().enumerate() {
            let values: Vec<f64> = ok.iter().map(|v| v[k]).collect();
            let tolerance = self.cfg.tolerances.get(def.name).copied().unwrap_or(def.tolerance);
            let max = values.iter().copied().reduce(f64::max);
            let min = values.iter().copied().reduce(f64::min);
            let mean = (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64);
            let finite = values.iter().all(|v| v.is_finite());
            let within = match def.bound {
                Bound::Upper => max.is_some_and(|m| m <= tolerance),
                Bound::Lower => min.is_some_and(|m| m > tolerance),
            };
            let mut note = annotate(k, &ok);
            if let Some(e) = &first_error {
                note = Some(format!("{errors} of {} samples failed: {e}", items.len()));
            }
            self.checks.push(CheckResult {
                name: def.name.to_string(),
                suite: self.suite,
                anchor: def.anchor.to_string(),
                bound: def.bound,
                samples: items.len(),
                errors,
                max,
                mean,
                min,
                tolerance,
                pass: errors == 0 && !items.is_empty() && finite && within,
                wall_clock_s: self.cfg.record_timings.then_some(elapsed),
                note,
            });
        }
    }
}

fn is_euclidean(metric: &FinslerMetric) -> bool {
    metric.is_flat() && metric.is_reversible()
}

/// Runs the selected suites; evaluation errors become failed checks.
pub fn run_suites(model: &MAModel, suites: &[Suite], cfg: &RunConfig) -> Result<VerificationReport> {
    cfg.validate()?;
    let mut checks = Vec::new();
    for &suite in suites {
        let mut runner = Runner {
            model,
            cfg,
            suite,
            checks: Vec::new(),
        };
        match suite {
            Suite::Ma => suite_ma(&mut runner),
            Suite::Psh => suite_psh(&mut runner),
            Suite::Hilbert => suite_hilbert(&mut runner),
            Suite::Leaf => suite_leaf(&mut runner),
            Suite::Roundtrip => suite_roundtrip(&mut runner),
            Suite::Contact => suite_contact(&mut runner),
            Suite::Frames => suite_frames(&mut runner),
        }
        checks.extend(runner.checks);
    }
    let pass = checks.iter().all(|c| c.pass);
    Ok(VerificationReport {
        model: ModelMeta::of(model),
        seed: cfg.seed,
        suites: suites.to_vec(),
        checks,
        pass,
    })
}

fn suite_ma(run: &mut Runner) {
    let model = run.model;
    let h = model.fd().hessian_step;
    let points = run.tube(run.count(200), 0.1, 0.8);
    let det_tol = if model.metric().is_flat() { 1e-6 } else { 1e-3 };
    let mut defs = vec![upper("ma_normalized_det", "(dd^c u)^n = 0 off M", det_tol)];
    if model.dim() >= 2 {
        defs.push(lower("ma_rank_witness", "(dd^c u)^(n-1) != 0 off M", 1e-3));
    }
    run.run(&defs, &points, |(p, r)| {
        let m = ma_residual(model, &model.mu(p, *r)?, h)?;
        Ok(vec![m.normalized_det, m.rank_witness])
    });
}

fn suite_psh(run: &mut Runner) {
    let model = run.model;
    let h = model.fd().hessian_step;
    let points = run.tube(run.count(200), 0.1, 0.8);
    let mut defs = vec![lower("psh_min_eigenvalue", "dd^c u^2 > 0 off M", 0.0)];
    if is_euclidean(model.metric()) {
        defs.push(upper("psh_euclidean_value", "H_C(u^2) = I/2 for the flat metric", 1e-6));
    }
    run.run(&defs, &points, |(p, r)| {
        let lambda = complex_hessian(model, ScalarField::USquared, &model.mu(p, *r)?, h)?.min_eigenvalue();
        Ok(vec![lambda, (lambda - 0.5).abs()])
    });
    let rays = run.rays(run.count(50));
    run.run(
        &[upper("boundary_hessian", "H_C(u^2) = H_R(F^2)/4 at r = 0", 5e-3)],
        &rays,
        |p| {
            Ok(vec![
                boundary_hessian(model, p, &hessian::BOUNDARY_HEIGHTS, h)?.residual,
            ])
        },
    );
}

fn suite_hilbert(run: &mut Runner) {
    let model = run.model;
    let rays = run.rays(run.count(100));
    run.run(
        &[upper("hilbert_plus_theta", "theta_S = -theta_F on SM", 1e-3)],
        &rays,
        |p| Ok(vec![hilbert_plus_theta(model, p, &blowup::BOUNDARY_HEIGHTS)?]),
    );
    let offsets = sample_tube(model.dim(), run.count(100), run.cfg.seed, -0.5, 0.5);
    run.run(
        &[upper(
            "profile_formula",
            "theta_S = -(U - p U_p) ds - U_p dx with u = r U",
            1e-3,
        )],
        &offsets,
        |(p, t)| {
            let offset = if model.dim() == 2 { vec![*t] } else { Vec::new() };
            Ok(vec![
                profile_formula_check(model, p, &offset, &blowup::BOUNDARY_HEIGHTS)?.residual,
            ])
        },
    );
}

fn suite_leaf(run: &mut Runner) {
    let model = run.model;
    let rays = run.rays(run.count(20));
    let r = 0.4 * model.radius();
    let grid: Vec<HalfStripPoint> = (0..=10).map(|k| HalfStripPoint::new(0.1 * k as f64, r)).collect();
    run.run(
        &[
            upper("leaf_geodesic", "leaves meet M along geodesics", 1e-8),
            upper("leaf_on_m", "phi_p(s) lies in M", 1e-10),
            upper("leaf_level", "u(phi_p(s + ir)) = r", 1e-9),
        ],
        &rays,
        |p| {
            let c = leaf_check(model, p, &grid)?;
            Ok(vec![c.boundary, c.boundary_height, c.level])
        },
    );
    let z = HalfStripPoint::new(0.5, r);
    run.run(
        &[upper("leaf_cauchy_riemann", "phi_p is holomorphic", 1e-5)],
        &rays,
        |p| Ok(vec![leaf_cauchy_riemann(model, p, z, 1e-3)?]),
    );
    run.run(&[upper("leaf_pullback", "phi_p^*(dd^c u) = 0", 1e-5)], &rays, |p| {
        Ok(vec![leaf_pullback(model, p, z, 1e-3)?])
    });
    let integrator = model.config().integrator;
    run.run(
        &[upper(
            "geodesic_conservation",
            "F(g, g') = 1 along unit-speed geodesics",
            1e-9,
        )],
        &rays,
        |p| Ok(vec![conservation_defect(model.metric(), p, 10.0, &integrator)?]),
    );
}

/// `count` quasi-random tangent vectors with `|X| ∈ [0.5, 2]`.
fn sample_vectors(dim: usize, count: usize, seed: u64) -> Vec<TangentVector> {
    let mut seq = QuasiRandom::new(dim + 2, seed);
    let tau = std::f64::consts::TAU;
    (0..count)
        .map(|_| {
            let u = seq.next_point();
            let size = 0.5 + 1.5 * u[dim + 1];
            let components = if dim == 1 {
                vec![if u[1] < 0.5 { size } else { -size }]
            } else {
                let a = tau * u[dim];
                vec![size * a.cos(), size * a.sin()]
            };
            TangentVector::new(u[..dim].iter().map(|c| tau * c).collect(), components)
        })
        .collect()
}

fn suite_roundtrip(run: &mut Runner) {
    let model = run.model;
    let metric = model.metric();
    if metric.is_flat() {
        let targets = sample_vectors(model.dim(), run.count(500), run.cfg.seed);
        let r_max = model.radius();
        run.run(
            &[upper("closed_form_u", "u(z) = F(Im z) for flat metrics", 1e-6)],
            &targets,
            |v| {
                let size = v.components.iter().map(|c| c * c).sum::<f64>().sqrt();
                let height = r_max * (0.05 + 0.9 * (size - 0.5) / 1.5);
                let f = metric.eval_f(&v.base, &v.components)?;
                let y: Vec<f64> = v.components.iter().map(|c| c * height / f).collect();
                let u = model.eval_u(&ComplexPoint::from_parts(&v.base, &y))?;
                Ok(vec![(u - metric.eval_f(&v.base, &y)?).abs()])
            },
        );
    }
    let points = run.tube(run.count(50), 0.05, 0.95);
    run.run(
        &[upper("invert_mu", "mu^-1(mu(p, r)) = (p, r)", 1e-9)],
        &points,
        |(p, r)| {
            let tc = model.invert_mu(&model.mu(p, *r)?)?;
            Ok(vec![(tc.r - r).abs().max(tc.p.distance(p))])
        },
    );
    let vectors = sample_vectors(model.dim(), run.count(50), run.cfg.seed);
    run.run(
        &[upper("recover_finsler", "F(X) = lim u(x + itX)/t", 1e-3)],
        &vectors,
        |x| {
            let exact = metric.eval_f(&x.base, &x.components)?;
            Ok(vec![
                ((recover_finsler(model, x, &RECOVERY_HEIGHTS)? - exact) / exact).abs()
            ])
        },
    );
}

fn suite_contact(run: &mut Runner) {
    let model = run.model;
    if model.dim() != 2 {
        return;
    }
    let rays = run.rays(run.count(200));
    run.run(
        &[lower(
            "contact_volume",
            "theta_S ^ d theta_S != 0",
            blowup::CONTACT_FLOOR,
        )],
        &rays,
        |p| Ok(vec![contact_volume(model, p, &blowup::BOUNDARY_HEIGHTS)?.abs()]),
    );
}

fn suite_frames(run: &mut Runner) {
    let model = run.model;
    let h = model.fd().hessian_step;
    let points = run.tube(run.count(20), 0.15, 0.6);
    run.run_annotated(
        &[
            upper("frame_contractions", "X, Y solve the defining contractions", 1e-8),
            upper("frame_y_minus_jx", "Y = JX", 1e-6),
        ],
        &points,
        |(p, r)| {
            let f = vector_fields_xy(model, &model.mu(p, *r)?, h)?;
            Ok(vec![f.max_contraction_residual(), f.y_minus_jx, f.sign])
        },
        |k, values| {
            (k == 1).then(|| {
                let positive = values.iter().filter(|v| v[2] > 0.0).count();
                format!("Y = +JX at {positive} of {} samples", values.len())
            })
        },
    );
    let flows = run.tube(run.count(2).min(2), 0.2, 0.5);
    run.run(
        &[upper("frame_commutation", "the flows of X and Y commute", 1e-6)],
        &flows,
        |(p, r)| Ok(vec![flow_commutation_defect(model, &model.mu(p, *r)?, 0.1, 2)?]),
    );
}

/// Formats a number with 17 significant digits.
pub fn format_number(x: f64) -> String {
    format!("{x:.16e}")
}

fn status_of(e: &Error) -> &'static str {
    match e {
        Error::TubeExceeded { .. } => "tube_exceeded",
        Error::NewtonDiverged { .. } => "diverged",
        Error::OnSingularSet => "on_m",
        _ => "error",
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceGrid {
    pub ns: usize,
    pub nr: usize,
    pub s_max: f64,
    /// Largest `r`; defaults to `0.9 R`.
    pub r_max: Option<f64>,
}

impl TraceGrid {
    pub fn new(ns: usize, nr: usize) -> Self {
        Self {
            ns,
            nr,
            s_max: 1.0,
            r_max: None,
        }
    }
}

/// Parses `NsxNr`.
pub fn parse_resolution(text: &str) -> Result<Vec<usize>> {
    let dims = text
        .split(['x', 'X'])
        .map(|t| t.trim().parse::<usize>().ok().filter(|n| *n >= 1))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::InvalidArgument(format!("bad resolution `{text}`")))?;
    if dims.is_empty() || dims.len() > 2 {
        return Err(Error::InvalidArgument(format!("bad resolution `{text}`")));
    }
    Ok(dims)
}

fn linspace(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub s: f64,
    pub r: f64,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    pub u: f64,
    pub ma_residual: f64,
    pub status: String,
}

/// Samples the leaf through `p` on an `s × r` grid; failed rows are kept with a status.
pub fn trace_leaf(model: &MAModel, p: &SpherePoint, grid: &TraceGrid) -> Result<Vec<TraceRow>> {
    if grid.ns == 0 || grid.nr == 0 {
        return Err(Error::InvalidArgument("trace grid must be non-empty".into()));
    }
    let n = model.dim();
    let r_max = grid.r_max.unwrap_or(0.9 * model.radius());
    let h = model.fd().hessian_step;
    let nodes: Vec<(f64, f64)> = linspace(grid.ns, 0.0, grid.s_max)
        .into_iter()
        .flat_map(|s| linspace(grid.nr, 0.0, r_max).into_iter().map(move |r| (s, r)))
        .collect();
    Ok(nodes
        .par_iter()
        .map(|&(s, r)| {
            let mut row = TraceRow {
                s,
                r,
                re: vec![f64::NAN; n],
                im: vec![f64::NAN; n],
                u: f64::NAN,
                ma_residual: f64::NAN,
                status: "ok".into(),
            };
            let zeta = match leaf_map(model, p, HalfStripPoint::new(s, r)) {
                Ok(z) => z,
                Err(e) => {
                    row.status = status_of(&e).into();
                    return row;
                }
            };
            row.re = zeta.re();
            row.im = zeta.im();
            match model.eval_u(&zeta) {
                Ok(u) => row.u = u,
                Err(e) => {
                    row.status = status_of(&e).into();
                    return row;
                }
            }
            let height = zeta.im_norm();
            if height < SINGULAR_SET_CUTOFF {
                row.status = "on_m".into();
            } else if height < NEAR_M {
                row.status = "near_m".into();
            } else {
                match ma_residual(model, &zeta, h) {
                    Ok(m) => row.ma_residual = m.normalized_det,
                    Err(e) => row.status = status_of(&e).into(),
                }
            }
            row
        })
        .collect())
}

pub fn write_trace_csv<W: io::Write>(rows: &[TraceRow], dim: usize, out: W) -> Result<()> {
    let mut header = vec!["s".to_string(), "r".to_string()];
    header.extend((1..=dim).map(|j| format!("re_z{j}")));
    header.extend((1..=dim).map(|j| format!("im_z{j}")));
    header.extend(["u", "ma_residual", "status"].map(String::from));
    let mut w = csv::Writer::from_writer(out);
    let io_err = |e: csv::Error| Error::InvalidArgument(format!("csv write failed: {e}"));
    w.write_record(&header).map_err(io_err)?;
    for row in rows {
        let mut rec: Vec<String> = [row.s, row.r].into_iter().map(format_number).collect();
        rec.extend(row.re.iter().chain(&row.im).map(|x| format_number(*x)));
        rec.push(format_number(row.u));
        rec.push(format_number(row.ma_residual));
        rec.push(row.status.clone());
        w.write_record(&rec).map_err(io_err)?;
    }
    w.flush()
        .map_err(|e| Error::InvalidArgument(format!("csv write failed: {e}")))
}

/// A rectangular slice of `C^n`: fixed real coordinates plus up to two ranged ones.
/// Coordinates are ordered `(x1..xn, y1..yn)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridWindow {
    pub fixed: Vec<f64>,
    pub ranges: Vec<(usize, f64, f64)>,
}

impl GridWindow {
    /// Parses `name=value` and `name=lo:hi` entries such as `x1=0,y1=-0.3:0.3`;
    /// unnamed coordinates are `0`.
    pub fn parse(text: &str, dim: usize) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad window `{text}`"));
        let mut fixed = vec![0.0; 2 * dim];
        let mut ranges = Vec::new();
        for entry in text.split(',').filter(|e| !e.trim().is_empty()) {
            let (name, value) = entry.split_once('=').ok_or_else(bad)?;
            let name = name.trim();
            let part = match name.chars().next() {
                Some('x') => 0,
                Some('y') => dim,
                _ => return Err(bad()),
            };
            let j: usize = name[1..].parse().map_err(|_| bad())?;
            if j == 0 || j > dim {
                return Err(bad());
            }
            let index = part + j - 1;
            match value.split_once(':') {
                Some((lo, hi)) => {
                    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
                    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
                    ranges.push((index, lo, hi));
                }
                None => fixed[index] = value.trim().parse().map_err(|_| bad())?,
            }
        }
        if ranges.len() > 2 {
            return Err(Error::InvalidArgument("at most two ranged coordinates".into()));
        }
        Ok(Self { fixed, ranges })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridRow {
    pub coords: Vec<f64>,
    pub u: f64,
    pub min_eig_u2: f64,
    pub status: String,
}

/// `u` and the smallest eigenvalue of `H_C(u²)` on a window; failures are kept with a status.
pub fn grid_u(model: &MAModel, window: &GridWindow, resolution: &[usize]) -> Result<Vec<GridRow>> {
    let n = model.dim();
    if window.fixed.len() != 2 * n {
        return Err(Error::DimensionMismatch {
            expected: 2 * n,
            found: window.fixed.len(),
        });
    }
    if resolution.len() != window.ranges.len().max(1) && !(window.ranges.is_empty() && resolution == [1, 1]) {
        return Err(Error::InvalidArgument(format!(
            "resolution has {} axes for {} ranged coordinates",
            resolution.len(),
            window.ranges.len()
        )));
    }
    let mut points = vec![window.fixed.clone()];
    for (axis, &(index, lo, hi)) in window.ranges.iter().enumerate() {
        let values = linspace(resolution[axis], lo, hi);
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |&v| {
                    let mut q = p.clone();
                    q[index] = v;
                    q
                })
            })
            .collect();
    }
    let h = model.fd().hessian_step;
    Ok(points
        .par_iter()
        .map(|c| {
            let zeta = ComplexPoint::from_parts(&c[..n], &c[n..]);
            let mut row = GridRow {
                coords: c.clone(),
                u: f64::NAN,
                min_eig_u2: f64::NAN,
                status: "ok".into(),
            };
            match model.eval_u(&zeta) {
                Ok(u) => row.u = u,
                Err(e) => {
                    row.status = status_of(&e).into();
                    return row;
                }
            }
            if zeta.im_norm() < SINGULAR_SET_CUTOFF {
                row.status = "on_m".into();
                return row;
            }
            match complex_hessian(model, ScalarField::USquared, &zeta, h) {
                Ok(hc) => row.min_eig_u2 = hc.min_eigenvalue(),
                Err(e) => row.status = status_of(&e).into(),
            }
            row
        })
        .collect())
}

pub fn write_grid_csv<W: io::Write>(rows: &[GridRow], dim: usize, out: W) -> Result<()> {
    let mut header: Vec<String> = (1..=dim).map(|j| format!("x{j}")).collect();
    header.extend((1..=dim).map(|j| format!("y{j}")));
    header.extend(["u", "min_eig_u2", "status"].map(String::from));
    let mut w = csv::Writer::from_writer(out);
    let io_err = |e: csv::Error| Error::InvalidArgument(format!("csv write failed: {e}"));
    w.write_record(&header).map_err(io_err)?;
    for row in rows {
        let mut rec: Vec<String> = row.coords.iter().map(|x| format_number(*x)).collect();
        rec.push(format_number(row.u));
        rec.push(format_number(row.min_eig_u2));
        rec.push(row.status.clone());
        w.write_record(&rec).map_err(io_err)?;
    }
    w.flush()
        .map_err(|e| Error::InvalidArgument(format!("csv write failed: {e}")))
}

/// Parses a ray given as `x,phi` (`n = 1`, the sign of `cos phi` picks the ray)
/// or `x1,x2,phi`.
pub fn parse_ray(text: &str, dim: usize) -> Result<SpherePoint> {
    let v = text
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::InvalidArgument(format!("bad ray `{text}`")))?;
    match (dim, v.as_slice()) {
        (1, [x, phi]) => Ok(SpherePoint::on_line(*x, phi.cos() >= 0.0)),
        (2, [x1, x2, phi]) => Ok(SpherePoint::planar(*x1, *x2, *phi)),
        _ => Err(Error::InvalidArgument(format!(
            "ray `{text}` does not match dimension {dim}"
        ))),
    }
}
