//! The inertial gradient iteration with two Tikhonov regularization terms:
//!
//! ```text
//! y_k     = x_k + b_{k-1}(x_k - x_{k-1}) - c_k·x_k
//! x_{k+1} = (1 - s·eps_k)·y_k - s·grad f(y_k)
//! ```
//!
//! from starting points `x_0, x_1`, with `b_{k-1}` and `c_k` supplied by the
//! schedule. Both regularization terms pull the iterates toward the
//! minimal-norm minimizer; the ablation variants switch them off to expose
//! what each one contributes.

use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problems::{Objective, Vector};
use crate::schedules::{b_from_parts, c_from_parts, Certification, Schedule, ScheduleError};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("iteration diverged: non-finite value at k = {k}")]
    Divergence {
        k: u64,
        /// Records accumulated before the blow-up, when the error comes from
        /// a full run rather than a single step.
        partial: Option<Box<Trace>>,
    },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

/// Which of the two Tikhonov terms are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Both terms as prescribed by the schedule.
    Full,
    /// `eps_k` forced to 0; `c_k` keeps its regularizing role in the reduced
    /// form `2s²/(q_{k-1}·q_k)` (the eps→0 limit of (C)).
    DropEps,
    /// `c_k` forced to 0, `eps_k` kept.
    DropC,
    /// Plain inertial gradient baseline: both terms off.
    DropBoth,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::DropEps, Variant::DropC, Variant::DropBoth];

    fn eps_active(self) -> bool {
        matches!(self, Variant::Full | Variant::DropC)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Variant::Full => "full",
            Variant::DropEps => "drop_eps",
            Variant::DropC => "drop_c",
            Variant::DropBoth => "drop_both",
        };
        write!(f, "{name}")
    }
}

/// Stride rule bounding trace size: every iterate below 10³ iterations,
/// `ceil(max_iter/10⁴)` beyond. First and last iterates are always recorded.
pub fn default_stride(max_iter: u64) -> u64 {
    if max_iter < 1_000 {
        1
    } else {
        max_iter.div_ceil(10_000)
    }
}

/// A problem, a schedule, starting points and an iteration budget.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub(crate) objective: Objective,
    pub(crate) schedule: Schedule,
    pub(crate) s: f64,
    pub(crate) x0: Vector,
    pub(crate) x1: Vector,
    pub(crate) max_iter: u64,
    pub(crate) variant: Variant,
    pub(crate) record_every: u64,
}

impl SolverConfig {
    pub fn new(
        objective: Objective,
        schedule: Schedule,
        x0: Vector,
        x1: Vector,
        max_iter: u64,
    ) -> Result<Self, SolverError> {
        let dim = objective.dim();
        if x0.len() != dim || x1.len() != dim {
            return Err(SolverError::Config(format!(
                "starting points must have the objective's dimension {dim} (got {} and {})",
                x0.len(),
                x1.len()
            )));
        }
        if max_iter == 0 {
            return Err(SolverError::Config("max_iter must be at least 1".into()));
        }
        let record_every = default_stride(max_iter);
        let s = schedule.s();
        Ok(SolverConfig { objective, schedule, s, x0, x1, max_iter, variant: Variant::Full, record_every })
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_record_every(mut self, stride: u64) -> Result<Self, SolverError> {
        if stride == 0 {
            return Err(SolverError::Config("record_every must be at least 1".into()));
        }
        self.record_every = stride;
        self
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn max_iter(&self) -> u64 {
        self.max_iter
    }

    pub fn record_every(&self) -> u64 {
        self.record_every
    }

    /// The `(eps_k, b_{k-1}, c_k)` actually used at outer iteration `k`,
    /// after applying the variant's substitutions.
    pub fn coefficients(&self, k: u64) -> (f64, f64, f64) {
        let eps_k = if self.variant.eps_active() { self.schedule.eps_unchecked(k) } else { 0.0 };
        if k == 1 {
            return (eps_k, 0.0, 0.0);
        }
        let s = self.s;
        let q_prev = self.schedule.q_unchecked(k - 1);
        let q_cur = self.schedule.q_unchecked(k);
        match self.variant {
            Variant::Full => {
                let e_prev = self.schedule.eps_unchecked(k - 1);
                (
                    eps_k,
                    b_from_parts(s, e_prev, eps_k, q_prev, q_cur),
                    c_from_parts(s, e_prev, eps_k, q_prev, q_cur),
                )
            }
            Variant::DropC => {
                let e_prev = self.schedule.eps_unchecked(k - 1);
                (eps_k, b_from_parts(s, e_prev, eps_k, q_prev, q_cur), 0.0)
            }
            Variant::DropEps => {
                let c = if q_prev * q_cur > 0.0 { 2.0 * s * s / (q_prev * q_cur) } else { 0.0 };
                (0.0, b_from_parts(s, 0.0, 0.0, q_prev, q_cur), c)
            }
            Variant::DropBoth => (0.0, b_from_parts(s, 0.0, 0.0, q_prev, q_cur), 0.0),
        }
    }
}

/// Per-iteration snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateRecord {
    pub k: u64,
    pub x: Vector,
    pub y: Vector,
    pub f_x: f64,
    pub f_y: f64,
    pub grad_norm_x: f64,
    pub grad_norm_y: f64,
    /// `|x_k - x_{k-1}|`, always against the true previous iterate.
    pub velocity: f64,
    /// `|x_k - x*|` when the problem has a minimal-norm oracle.
    pub dist_xstar: Option<f64>,
    pub eps_k: f64,
    pub b_k: f64,
    pub c_k: f64,
}

/// Configuration echo attached to every trace.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub problem: String,
    pub dim: usize,
    pub variant: Variant,
    pub s: f64,
    pub lipschitz: f64,
    pub max_iter: u64,
    pub record_every: u64,
    pub schedule: String,
    pub certification: Option<Certification>,
    pub k0: u64,
    pub k1: u64,
    pub k2: Option<u64>,
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "problem:      {}", self.problem)?;
        writeln!(f, "schedule:     {}", self.schedule)?;
        writeln!(f, "variant:      {}", self.variant)?;
        writeln!(f, "s:            {:.17e} (L = {})", self.s, self.lipschitz)?;
        writeln!(f, "max_iter:     {} (recording every {})", self.max_iter, self.record_every)?;
        match self.certification {
            Some(cert) => writeln!(f, "certification: {cert}")?,
            None => writeln!(f, "certification: n/a (custom schedule)")?,
        }
        write!(f, "indices:      k0 = {}, k1 = {}, k2 = ", self.k0, self.k1)?;
        match self.k2 {
            Some(k2) => write!(f, "{k2}"),
            None => write!(f, "not found within scan horizon"),
        }
    }
}

/// Result of a run: ordered records (strictly increasing `k`, first at
/// `k = 1`), warnings, and timing.
#[derive(Debug, Clone)]
pub struct Trace {
    pub summary: RunSummary,
    pub records: Vec<IterateRecord>,
    pub warnings: Vec<String>,
    pub wall_time: Duration,
}

impl Trace {
    pub fn last(&self) -> &IterateRecord {
        self.records.last().expect("a trace has at least one record")
    }

    /// Record at exactly iteration `k`, if it was recorded.
    pub fn record_at(&self, k: u64) -> Option<&IterateRecord> {
        self.records.binary_search_by_key(&k, |r| r.k).ok().map(|i| &self.records[i])
    }
}

fn extrapolate(x_prev: &Vector, x_curr: &Vector, b: f64, c: f64) -> Vector {
    x_curr + (x_curr - x_prev) * b - x_curr * c
}

fn all_finite(v: &Vector) -> bool {
    v.iter().all(|t| t.is_finite())
}

/// One iteration of the two-term update: returns `(y_k, x_{k+1})`.
pub fn step(
    x_prev: &Vector,
    x_curr: &Vector,
    k: u64,
    cfg: &SolverConfig,
) -> Result<(Vector, Vector), SolverError> {
    let (y, x_next, ..) = step_inner(x_prev, x_curr, k, cfg)?;
    Ok((y, x_next))
}

/// The same contract as [`step`], computed through the regularized gradient
/// `grad f_k(y) = grad f(y) + eps_k·y` instead of the factored update. The two
/// agree up to floating-point rounding.
pub fn step_equivalent(
    x_prev: &Vector,
    x_curr: &Vector,
    k: u64,
    cfg: &SolverConfig,
) -> Result<(Vector, Vector), SolverError> {
    check_step_args(x_prev, x_curr, k, cfg)?;
    let (eps, b, c) = cfg.coefficients(k);
    let y = extrapolate(x_prev, x_curr, b, c);
    let reg_grad = cfg.objective.gradient(&y) + &y * eps;
    let x_next = &y - reg_grad * cfg.s;
    if !all_finite(&y) || !all_finite(&x_next) {
        return Err(SolverError::Divergence { k, partial: None });
    }
    Ok((y, x_next))
}

fn check_step_args(
    x_prev: &Vector,
    x_curr: &Vector,
    k: u64,
    cfg: &SolverConfig,
) -> Result<(), SolverError> {
    if k == 0 {
        return Err(SolverError::Config("iterations are 1-indexed".into()));
    }
    let dim = cfg.objective.dim();
    if x_prev.len() != dim || x_curr.len() != dim {
        return Err(SolverError::Config(format!(
            "state dimension mismatch: objective has {dim}, got {} and {}",
            x_prev.len(),
            x_curr.len()
        )));
    }
    Ok(())
}

#[allow(clippy::type_complexity)]
fn step_inner(
    x_prev: &Vector,
    x_curr: &Vector,
    k: u64,
    cfg: &SolverConfig,
) -> Result<(Vector, Vector, f64, f64, f64, f64), SolverError> {
    check_step_args(x_prev, x_curr, k, cfg)?;
    let (eps, b, c) = cfg.coefficients(k);
    let y = extrapolate(x_prev, x_curr, b, c);
    let grad_y = cfg.objective.gradient(&y);
    let grad_norm_y = grad_y.norm();
    let x_next = &y * (1.0 - cfg.s * eps) - grad_y * cfg.s;
    if !all_finite(&y) || !all_finite(&x_next) {
        return Err(SolverError::Divergence { k, partial: None });
    }
    Ok((y, x_next, eps, b, c, grad_norm_y))
}

fn gather_warnings(cfg: &SolverConfig) -> Vec<String> {
    let mut warnings = Vec::new();
    let s = cfg.s;
    let lip = cfg.schedule.lipschitz();
    if s * lip >= 1.0 {
        warnings.push(format!(
            "step size exceeds 1/L (s = {s}, L = {lip}); condition (S) is unsatisfiable and the run is uncertified"
        ));
    }
    match cfg.schedule.certification() {
        Some(Certification::RateCertified) | None => {}
        Some(Certification::Q1Mode) => {
            warnings.push("q = 1 mode: condition (Q) holds (a < s/2) but the polynomial rate gate 0 < p < 2q does not apply".into());
        }
        Some(Certification::Uncertified) => {
            warnings.push("schedule parameters are outside the certified range (need 0 < q < 1 and 0 < p < 2q, or q = 1 with a < s/2)".into());
        }
    }
    match cfg.schedule.k2() {
        None => warnings.push(format!(
            "condition (Q) not satisfied within the scan horizon {}; running from k = 1 regardless",
            crate::schedules::DEFAULT_K2_HORIZON
        )),
        Some(k2) if k2 >= cfg.max_iter => warnings.push(format!(
            "condition (Q) onset k2 = {k2} is beyond max_iter = {}; the run never enters the certified regime",
            cfg.max_iter
        )),
        Some(_) => {}
    }
    if cfg.schedule.poly_params().is_some() {
        let horizon = cfg.max_iter.max(10_000);
        if let Ok(report) = cfg.schedule.theorem2_hypotheses(horizon) {
            for failure in report.failures() {
                warnings.push(format!("strong-convergence hypothesis failed: {failure}"));
            }
        }
    }
    warnings
}

/// Runs the iteration for `k = 1..=max_iter` from `(x0, x1)`.
///
/// Divergence aborts with the partial trace attached to the error. Warnings
/// (unsatisfiable condition (S), (Q) status, hypothesis failures) are
/// collected on the trace rather than gating execution.
pub fn run(cfg: &SolverConfig) -> Result<Trace, SolverError> {
    let started = Instant::now();
    let warnings = gather_warnings(cfg);
    let summary = RunSummary {
        problem: cfg.objective.name().to_string(),
        dim: cfg.objective.dim(),
        variant: cfg.variant,
        s: cfg.s,
        lipschitz: cfg.schedule.lipschitz(),
        max_iter: cfg.max_iter,
        record_every: cfg.record_every,
        schedule: match cfg.schedule.poly_params() {
            Some(p) => format!("q_k = {}·k^{}, eps_k = {}/k^{}", p.a, p.q, p.c, p.p),
            None => "custom (eps_k, q_k) rules".to_string(),
        },
        certification: cfg.schedule.certification(),
        k0: cfg.schedule.k0(),
        k1: cfg.schedule.k1(),
        k2: cfg.schedule.k2(),
    };

    let estimated = (cfg.max_iter / cfg.record_every).min(1 << 22) as usize + 2;
    let mut records: Vec<IterateRecord> = Vec::with_capacity(estimated);
    let x_star = cfg.objective.min_norm().map(|o| o.x_star.clone());
    let mut x_prev = cfg.x0.clone();
    let mut x_curr = cfg.x1.clone();

    for k in 1..=cfg.max_iter {
        let step_result = step_inner(&x_prev, &x_curr, k, cfg);
        let (y, x_next, eps, b, c, grad_norm_y) = match step_result {
            Ok(parts) => parts,
            Err(SolverError::Divergence { k, .. }) => {
                let mut warnings = warnings;
                warnings.push(format!("diverged at k = {k}; trace truncated"));
                let trace =
                    Trace { summary, records, warnings, wall_time: started.elapsed() };
                return Err(SolverError::Divergence { k, partial: Some(Box::new(trace)) });
            }
            Err(other) => return Err(other),
        };
        if k == 1 || k == cfg.max_iter || k % cfg.record_every == 0 {
            records.push(IterateRecord {
                k,
                f_x: cfg.objective.value(&x_curr),
                f_y: cfg.objective.value(&y),
                grad_norm_x: cfg.objective.gradient(&x_curr).norm(),
                grad_norm_y,
                velocity: (&x_curr - &x_prev).norm(),
                dist_xstar: x_star.as_ref().map(|xs| (&x_curr - xs).norm()),
                eps_k: eps,
                b_k: b,
                c_k: c,
                x: x_curr.clone(),
                y,
            });
        }
        x_prev = x_curr;
        x_curr = x_next;
    }
    Ok(Trace { summary, records, warnings, wall_time: started.elapsed() })
}

/// One entry of a regularization-exponent sweep.
#[derive(Debug)]
pub struct MatrixEntry {
    pub label: String,
    /// The eps exponent, `None` for the unregularized baseline.
    pub p: Option<f64>,
    pub result: Result<Trace, SolverError>,
}

/// Runs `base` once per eps exponent in `p_values` plus one drop-both
/// baseline, sharing starting points. Per-run failures are recorded in the
/// corresponding entry; the sweep continues.
pub fn run_matrix(base: &SolverConfig, p_values: &[f64]) -> Result<Vec<MatrixEntry>, SolverError> {
    if p_values.is_empty() {
        return Err(SolverError::Config("run_matrix needs at least one eps exponent".into()));
    }
    let params = *base.schedule.poly_params().ok_or_else(|| {
        SolverError::Config("run_matrix requires a polynomial schedule".into())
    })?;
    let mut out = Vec::with_capacity(p_values.len() + 1);
    for &p in p_values {
        let result = crate::schedules::PolyParams::new(params.a, params.q, params.c, p)
            .and_then(|swept| Schedule::polynomial(swept, base.s, base.schedule.lipschitz()))
            .map_err(SolverError::from)
            .and_then(|schedule| {
                let cfg = SolverConfig { schedule, ..base.clone() };
                run(&cfg)
            });
        out.push(MatrixEntry { label: format!("p={p}"), p: Some(p), result });
    }
    let baseline = SolverConfig { variant: Variant::DropBoth, ..base.clone() };
    out.push(MatrixEntry { label: "baseline".into(), p: None, result: run(&baseline) });
    Ok(out)
}
