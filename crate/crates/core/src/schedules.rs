//! The parameter system driving the iteration: the regularization sequence
//! `eps_k` (non-increasing, `-> 0`), the auxiliary sequence `q_k`, and the
//! derived coefficients.
//!
//! For a step size `s` the sequences must satisfy
//!
//! ```text
//! (S)  s <= 1/(L + eps_{k0})                                   for all k >= k0
//! (Q)  (1-s·eps_{k+1})²q_{k+1}² - (1-s·eps_k)²q_k²
//!        - 2s·q_{k+1} + s(1-s·eps_k)²q_k <= 0,
//!      q_k >= 2s/(1-s·eps_k)²                                  for all k >= k2
//! ```
//!
//! and the inertial and second regularization coefficients are
//!
//! ```text
//! (B)  b_{k-1} = (q_{k-1}-s)((1-s·eps_{k-1})²q_{k-1} - 2s)
//!               / ((1-s·eps_{k-1})(1-s·eps_k)q_{k-1}q_k)
//! (C)  c_k     = 2s/((1-s·eps_{k-1})(1-s·eps_k)²q_k)
//!               · (s/q_{k-1} - s²eps_k/q_{k-1} - s(eps_{k-1}-eps_k))
//! ```
//!
//! with `b_0 = 0`, `c_1 = 0` and a guard for vanishing denominators. The
//! polynomial family `q_k = a·k^q`, `eps_k = c/k^p` additionally has closed
//! forms ([`bp_closed_form`], [`cp_closed_form`]) that must agree with the
//! generic formulas; the test suite treats (B)/(C) as the source of truth.
//! Note the closed form for `c_k` implemented here carries the second
//! numerator term `-s·c·(k-1)^p`; deriving it from (C) by substitution shows
//! the factor `s` is required (dropping it yields `c_2 = 0` for a = c = 1,
//! contradicting (C)).

use std::fmt;
use std::sync::{Arc, OnceLock};

use thiserror::Error;

/// Denominators whose magnitude falls at or below this are treated as the
/// degenerate branch of (B)/(C), which returns 0.
pub const DEGENERACY_GUARD: f64 = 1e-14;
/// Indices up to this bound are scanned densely; beyond it, geometrically.
const DENSE_SCAN_LIMIT: u64 = 100_000;
/// Ratio of consecutive indices in the geometric part of a scan.
const GEOMETRIC_STEP: f64 = 1.02;
/// Horizon used when `k2` is requested without an explicit scan.
pub const DEFAULT_K2_HORIZON: u64 = 2_000_000;
/// Cap for forward scans on custom (non-polynomial) rules.
const CUSTOM_SCAN_LIMIT: u64 = 10_000_000;

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("schedule indices start at k = 1")]
    IndexZero,
    #[error("invalid schedule parameters: {0}")]
    InvalidParams(String),
    #[error("condition (S) is unsatisfiable: s·L = {product} >= 1 (s = {s}, L = {lipschitz})")]
    ConditionSUnsatisfiable { s: f64, lipschitz: f64, product: f64 },
    #[error("k = {k} is below k1 = {k1}; 1 - s·eps_k may be nonpositive there")]
    BelowK1 { k: u64, k1: u64 },
    #[error("scan horizon {horizon} is below the first admissible index {needed}")]
    HorizonTooSmall { horizon: u64, needed: u64 },
}

/// Gate for the polynomial-schedule rate theorem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Certification {
    /// `0 < q < 1` and `0 < p < 2q`: the strong-convergence and rate
    /// conclusions are certified.
    RateCertified,
    /// `q = 1` with `a < s/2`: condition (Q) holds eventually, but the rate
    /// theorem itself does not cover this mode.
    Q1Mode,
    /// Anything else. Still runnable; diagnostics report what breaks.
    Uncertified,
}

impl fmt::Display for Certification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Certification::RateCertified => write!(f, "rate_certified"),
            Certification::Q1Mode => write!(f, "q1_mode"),
            Certification::Uncertified => write!(f, "uncertified"),
        }
    }
}

/// Parameters of the polynomial family `q_k = a·k^q`, `eps_k = c/k^p`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PolyParams {
    pub a: f64,
    pub q: f64,
    pub c: f64,
    pub p: f64,
}

impl PolyParams {
    pub fn new(a: f64, q: f64, c: f64, p: f64) -> Result<Self, ScheduleError> {
        let params = PolyParams { a, q, c, p };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        let ok = self.a > 0.0
            && self.c > 0.0
            && self.p > 0.0
            && self.q > 0.0
            && self.q <= 1.0
            && [self.a, self.q, self.c, self.p].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(ScheduleError::InvalidParams(format!(
                "need a > 0, c > 0, p > 0, 0 < q <= 1; got a={}, q={}, c={}, p={}",
                self.a, self.q, self.c, self.p
            )))
        }
    }

    pub fn eps(&self, k: u64) -> f64 {
        self.c * (k as f64).powf(-self.p)
    }

    pub fn q(&self, k: u64) -> f64 {
        self.a * (k as f64).powf(self.q)
    }

    /// Smallest index satisfying condition (S): `int((c·s/(1-L·s))^(1/p)) + 1`.
    pub fn k0(&self, s: f64, lipschitz: f64) -> Result<u64, ScheduleError> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(ScheduleError::InvalidParams(format!("step size must be positive, got {s}")));
        }
        let product = s * lipschitz;
        if product >= 1.0 {
            return Err(ScheduleError::ConditionSUnsatisfiable { s, lipschitz, product });
        }
        let raw = (self.c * s / (1.0 - lipschitz * s)).powf(1.0 / self.p);
        Ok(int_part_plus_one(raw))
    }

    /// First index with `1 - s·eps_k > 0`, independent of `L`:
    /// `int((s·c)^(1/p)) + 1`.
    pub fn k1_floor(&self, s: f64) -> u64 {
        int_part_plus_one((s * self.c).powf(1.0 / self.p))
    }

    /// The rate-theorem gate. `q = 1` needs `a < s/2` for (Q) to hold, so the
    /// verdict depends on the step size.
    pub fn certification(&self, s: f64) -> Certification {
        if self.q < 1.0 && self.p < 2.0 * self.q {
            Certification::RateCertified
        } else if self.q == 1.0 && self.a < s / 2.0 {
            Certification::Q1Mode
        } else {
            Certification::Uncertified
        }
    }
}

type SeqFn = dyn Fn(u64) -> f64 + Send + Sync;

#[derive(Clone)]
enum Rule {
    Poly(PolyParams),
    Custom { eps: Arc<SeqFn>, q: Arc<SeqFn> },
}

/// An immutable `(s, eps_k, q_k)` system with its validity indices.
///
/// `k0` marks condition (S), `k1` the positivity of `1 - s·eps_k`, `k2` the
/// onset of condition (Q) (scanned, and possibly not found within the
/// horizon), and `kbar = k2 + 1` the first index where the analysis uses the
/// generic (B)/(C) branch throughout.
#[derive(Clone)]
pub struct Schedule {
    s: f64,
    lipschitz: f64,
    rule: Rule,
    condition_s: bool,
    k0: u64,
    k1: u64,
    k2_cache: OnceLock<Option<u64>>,
}

impl fmt::Debug for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Schedule")
            .field("s", &self.s)
            .field("lipschitz", &self.lipschitz)
            .field("poly", &self.poly_params())
            .field("condition_s", &self.condition_s)
            .field("k0", &self.k0)
            .field("k1", &self.k1)
            .finish()
    }
}

impl Schedule {
    /// Builds the polynomial schedule `q_k = a·k^q`, `eps_k = c/k^p` for step
    /// size `s` against the Lipschitz bound `L`.
    ///
    /// When `s·L >= 1` condition (S) has no solution; the schedule is still
    /// constructed (callers are expected to warn, not refuse) with `k0 = 1`
    /// and [`Schedule::condition_s`] reporting the failure.
    pub fn polynomial(params: PolyParams, s: f64, lipschitz: f64) -> Result<Schedule, ScheduleError> {
        params.validate()?;
        if !(s > 0.0) || !s.is_finite() {
            return Err(ScheduleError::InvalidParams(format!("step size must be positive, got {s}")));
        }
        if !(lipschitz > 0.0) || !lipschitz.is_finite() {
            return Err(ScheduleError::InvalidParams(format!(
                "lipschitz bound must be positive, got {lipschitz}"
            )));
        }
        let (condition_s, k0) = match params.k0(s, lipschitz) {
            Ok(k0) => (true, k0),
            Err(ScheduleError::ConditionSUnsatisfiable { .. }) => (false, 1),
            Err(other) => return Err(other),
        };
        let k1 = k0.max(params.k1_floor(s));
        Ok(Schedule {
            s,
            lipschitz,
            rule: Rule::Poly(params),
            condition_s,
            k0,
            k1,
            k2_cache: OnceLock::new(),
        })
    }

    /// Builds a schedule from arbitrary `eps`/`q` rules (1-indexed). `eps`
    /// must be positive and non-increasing; indices are located by forward
    /// scan.
    pub fn custom(
        eps: Arc<SeqFn>,
        q: Arc<SeqFn>,
        s: f64,
        lipschitz: f64,
    ) -> Result<Schedule, ScheduleError> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(ScheduleError::InvalidParams(format!("step size must be positive, got {s}")));
        }
        if !(lipschitz > 0.0) || !lipschitz.is_finite() {
            return Err(ScheduleError::InvalidParams(format!(
                "lipschitz bound must be positive, got {lipschitz}"
            )));
        }
        // spot-check monotonicity and positivity on a prefix plus a log grid
        let mut prev = f64::INFINITY;
        for k in scan_grid(1, 1_000_000) {
            let e = eps(k);
            if !(e > 0.0) || !e.is_finite() {
                return Err(ScheduleError::InvalidParams(format!("eps({k}) = {e} must be positive")));
            }
            if e > prev * (1.0 + 1e-12) {
                return Err(ScheduleError::InvalidParams(format!(
                    "eps must be non-increasing, violated at k = {k}"
                )));
            }
            prev = e;
            let qv = q(k);
            if !(qv > 0.0) || !qv.is_finite() {
                return Err(ScheduleError::InvalidParams(format!("q({k}) = {qv} must be positive")));
            }
        }
        let bound = 1.0 / s - lipschitz;
        let (condition_s, k0) = if bound > 0.0 {
            match (1..=CUSTOM_SCAN_LIMIT).find(|&k| eps(k) <= bound) {
                Some(k0) => (true, k0),
                None => (false, 1),
            }
        } else {
            (false, 1)
        };
        let k1 = (k0.max(1)..=CUSTOM_SCAN_LIMIT)
            .find(|&k| 1.0 - s * eps(k) > 0.0)
            .ok_or_else(|| {
                ScheduleError::InvalidParams("1 - s·eps_k never positive within scan limit".into())
            })?;
        Ok(Schedule {
            s,
            lipschitz,
            rule: Rule::Custom { eps, q },
            condition_s,
            k0,
            k1,
            k2_cache: OnceLock::new(),
        })
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Whether condition (S) is satisfiable for this `(s, L)` pair.
    pub fn condition_s(&self) -> bool {
        self.condition_s
    }

    pub fn k0(&self) -> u64 {
        self.k0
    }

    pub fn k1(&self) -> u64 {
        self.k1
    }

    /// Onset of condition (Q), scanned up to [`DEFAULT_K2_HORIZON`] on first
    /// access. `None` means not found within that horizon.
    pub fn k2(&self) -> Option<u64> {
        *self
            .k2_cache
            .get_or_init(|| self.find_k2(DEFAULT_K2_HORIZON).unwrap_or(None))
    }

    /// `k2 + 1`, the first index from which the Lyapunov analysis runs on the
    /// generic branch.
    pub fn kbar(&self) -> Option<u64> {
        self.k2().map(|k| k + 1)
    }

    pub fn poly_params(&self) -> Option<&PolyParams> {
        match &self.rule {
            Rule::Poly(p) => Some(p),
            Rule::Custom { .. } => None,
        }
    }

    /// Certification verdict; `None` for custom rules (no closed-form gate).
    pub fn certification(&self) -> Option<Certification> {
        self.poly_params().map(|p| p.certification(self.s))
    }

    pub fn eps_at(&self, k: u64) -> Result<f64, ScheduleError> {
        if k == 0 {
            return Err(ScheduleError::IndexZero);
        }
        Ok(self.eps_unchecked(k))
    }

    pub fn q_at(&self, k: u64) -> Result<f64, ScheduleError> {
        if k == 0 {
            return Err(ScheduleError::IndexZero);
        }
        Ok(self.q_unchecked(k))
    }

    pub(crate) fn eps_unchecked(&self, k: u64) -> f64 {
        debug_assert!(k >= 1);
        match &self.rule {
            Rule::Poly(p) => p.eps(k),
            Rule::Custom { eps, .. } => eps(k),
        }
    }

    pub(crate) fn q_unchecked(&self, k: u64) -> f64 {
        debug_assert!(k >= 1);
        match &self.rule {
            Rule::Poly(p) => p.q(k),
            Rule::Custom { q, .. } => q(k),
        }
    }

    /// `b_{k-1}`, the inertial coefficient multiplying `x_k - x_{k-1}` at
    /// outer iteration `k`. Zero at `k = 1` and on degenerate denominators.
    pub fn b_coef(&self, k: u64) -> Result<f64, ScheduleError> {
        if k == 0 {
            return Err(ScheduleError::IndexZero);
        }
        if k == 1 {
            return Ok(0.0);
        }
        Ok(b_from_parts(
            self.s,
            self.eps_unchecked(k - 1),
            self.eps_unchecked(k),
            self.q_unchecked(k - 1),
            self.q_unchecked(k),
        ))
    }

    /// `c_k`, the coefficient of the Tikhonov term `c_k·x_k` in the `y` line.
    pub fn c_coef(&self, k: u64) -> Result<f64, ScheduleError> {
        if k == 0 {
            return Err(ScheduleError::IndexZero);
        }
        if k == 1 {
            return Ok(0.0);
        }
        Ok(c_from_parts(
            self.s,
            self.eps_unchecked(k - 1),
            self.eps_unchecked(k),
            self.q_unchecked(k - 1),
            self.q_unchecked(k),
        ))
    }

    /// Evaluates both parts of condition (Q) at index `k`. Requires `k >= k1`
    /// so that `1 - s·eps_k` is known positive.
    pub fn check_q(&self, k: u64) -> Result<QVerdict, ScheduleError> {
        if k == 0 {
            return Err(ScheduleError::IndexZero);
        }
        if k < self.k1 {
            return Err(ScheduleError::BelowK1 { k, k1: self.k1 });
        }
        let s = self.s;
        let (e_k, e_k1) = (self.eps_unchecked(k), self.eps_unchecked(k + 1));
        let (q_k, q_k1) = (self.q_unchecked(k), self.q_unchecked(k + 1));
        let (a_k, a_k1) = (1.0 - s * e_k, 1.0 - s * e_k1);
        let lhs = a_k1 * a_k1 * q_k1 * q_k1 - a_k * a_k * q_k * q_k - 2.0 * s * q_k1
            + s * a_k * a_k * q_k;
        let bound = 2.0 * s / (a_k * a_k);
        Ok(QVerdict {
            lhs,
            bound,
            inequality_holds: lhs <= 0.0,
            lower_bound_holds: q_k >= bound,
        })
    }

    /// Smallest scanned index from which condition (Q) holds at every later
    /// scanned index up to `horizon`; `None` if there is no such index. The
    /// scan is dense up to 10^5 and geometric beyond.
    pub fn find_k2(&self, horizon: u64) -> Result<Option<u64>, ScheduleError> {
        if horizon < self.k1 {
            return Err(ScheduleError::HorizonTooSmall { horizon, needed: self.k1 });
        }
        let grid = scan_grid(self.k1, horizon);
        let mut first_all_ok: Option<u64> = None;
        for &k in grid.iter().rev() {
            let v = self.check_q(k)?;
            if v.inequality_holds && v.lower_bound_holds {
                first_all_ok = Some(k);
            } else {
                break;
            }
        }
        Ok(first_all_ok)
    }

    /// Numerically evaluates the four strong-convergence hypotheses over
    /// `[start, horizon]` where `start` is `kbar` when known (and at least two
    /// decades fit), otherwise `k1`.
    pub fn theorem2_hypotheses(&self, horizon: u64) -> Result<Theorem2Report, ScheduleError> {
        let kbar = self.kbar().unwrap_or(self.k1);
        let start = if kbar.saturating_mul(100) <= horizon { kbar } else { self.k1 };
        if horizon < start.saturating_mul(100) {
            return Err(ScheduleError::HorizonTooSmall {
                horizon,
                needed: start.saturating_mul(100),
            });
        }
        let g = |k: u64| {
            let q = self.q_unchecked(k);
            q * q * self.eps_unchecked(k)
        };
        let ratio = |k: u64| {
            self.q_unchecked(k) * self.eps_unchecked(k)
                / (self.q_unchecked(k - 1) * self.eps_unchecked(k - 1))
        };
        let shift = |k: u64| {
            let e = self.eps_unchecked(k);
            self.q_unchecked(k) * (e - self.eps_unchecked(k + 1)) / e
        };

        let grid = scan_grid(start.max(2), horizon);
        let early_end = (horizon / 10).max(start.max(2));
        let mut ratio_sup = f64::NEG_INFINITY;
        let mut ratio_sup_early = f64::NEG_INFINITY;
        let mut increasing = true;
        let mut prev_g = f64::NEG_INFINITY;
        let mut shift_first: f64 = 0.0;
        let mut shift_last: f64 = 0.0;
        for &k in &grid {
            let r = ratio(k);
            ratio_sup = ratio_sup.max(r);
            if k <= early_end {
                ratio_sup_early = ratio_sup_early.max(r);
            }
            let gv = g(k);
            if gv <= prev_g {
                increasing = false;
            }
            prev_g = gv;
            let h = shift(k);
            if k < start.max(2).saturating_mul(10) {
                shift_first = shift_first.max(h);
            }
            if k >= horizon / 10 {
                shift_last = shift_last.max(h);
            }
        }
        let mid = grid[grid.partition_point(|&k| k < horizon / 2).min(grid.len() - 1)];
        let g_mid = g(mid);
        let g_end = g(horizon);
        Ok(Theorem2Report {
            start,
            horizon,
            ratio_sup,
            ratio_sup_early,
            ratio_bounded: ratio_sup <= ratio_sup_early * 1.05 + 1e-9,
            q2eps_increasing: increasing,
            q2eps_mid: g_mid,
            q2eps_end: g_end,
            q2eps_divergent: g_end > g_mid * (1.0 + 1e-12),
            shift_first_max: shift_first,
            shift_last_max: shift_last,
            shift_vanishes: shift_last <= 0.5 * shift_first,
        })
    }
}

/// Outcome of evaluating condition (Q) at one index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QVerdict {
    /// Value of the left-hand side of the first inequality (wants `<= 0`).
    pub lhs: f64,
    /// Lower bound `2s/(1-s·eps_k)²` that `q_k` must dominate.
    pub bound: f64,
    pub inequality_holds: bool,
    pub lower_bound_holds: bool,
}

impl QVerdict {
    pub fn holds(&self) -> bool {
        self.inequality_holds && self.lower_bound_holds
    }
}

/// Numerical verdicts on the four hypotheses of the strong-convergence
/// theorem: bounded ratio `q_k·eps_k/(q_{k-1}·eps_{k-1})`, increasing and
/// divergent `q_k²·eps_k`, and vanishing `q_k(eps_k - eps_{k+1})/eps_k`.
#[derive(Debug, Clone)]
pub struct Theorem2Report {
    pub start: u64,
    pub horizon: u64,
    pub ratio_sup: f64,
    pub ratio_sup_early: f64,
    /// Sup stabilized: the running sup grew less than 5% after the first
    /// tenth of the window.
    pub ratio_bounded: bool,
    pub q2eps_increasing: bool,
    pub q2eps_mid: f64,
    pub q2eps_end: f64,
    pub q2eps_divergent: bool,
    pub shift_first_max: f64,
    pub shift_last_max: f64,
    /// Last-decade max fell to at most half the first-decade max.
    pub shift_vanishes: bool,
}

impl Theorem2Report {
    pub fn all_pass(&self) -> bool {
        self.ratio_bounded && self.q2eps_increasing && self.q2eps_divergent && self.shift_vanishes
    }

    /// Names of the failed hypotheses, empty when all pass.
    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.ratio_bounded {
            out.push("ratio q_k·eps_k/(q_{k-1}·eps_{k-1}) bounded");
        }
        if !self.q2eps_increasing {
            out.push("q_k²·eps_k increasing");
        }
        if !self.q2eps_divergent {
            out.push("q_k²·eps_k -> +inf");
        }
        if !self.shift_vanishes {
            out.push("q_k(eps_k - eps_{k+1})/eps_k -> 0");
        }
        out
    }
}

impl fmt::Display for Theorem2Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "hypothesis checks over [{}, {}]:", self.start, self.horizon)?;
        writeln!(
            f,
            "  ratio bounded:      {} (sup {:.6e}, early sup {:.6e})",
            pass(self.ratio_bounded),
            self.ratio_sup,
            self.ratio_sup_early
        )?;
        writeln!(f, "  q²eps increasing:   {}", pass(self.q2eps_increasing))?;
        writeln!(
            f,
            "  q²eps divergent:    {} (mid {:.6e} -> end {:.6e})",
            pass(self.q2eps_divergent),
            self.q2eps_mid,
            self.q2eps_end
        )?;
        write!(
            f,
            "  eps-shift vanishes: {} (first-decade max {:.6e}, last-decade max {:.6e})",
            pass(self.shift_vanishes),
            self.shift_first_max,
            self.shift_last_max
        )
    }
}

fn pass(b: bool) -> &'static str {
    if b {
        "pass"
    } else {
        "FAIL"
    }
}

/// Generic (B) evaluated from raw parts. Used by the solver so that ablation
/// variants can substitute `eps == 0`.
pub(crate) fn b_from_parts(s: f64, eps_prev: f64, eps_cur: f64, q_prev: f64, q_cur: f64) -> f64 {
    let a_prev = 1.0 - s * eps_prev;
    let a_cur = 1.0 - s * eps_cur;
    let den = a_prev * a_cur * q_prev * q_cur;
    if den.abs() <= DEGENERACY_GUARD {
        return 0.0;
    }
    (q_prev - s) * (a_prev * a_prev * q_prev - 2.0 * s) / den
}

/// Generic (C) evaluated from raw parts.
pub(crate) fn c_from_parts(s: f64, eps_prev: f64, eps_cur: f64, q_prev: f64, q_cur: f64) -> f64 {
    let a_prev = 1.0 - s * eps_prev;
    let a_cur = 1.0 - s * eps_cur;
    if (a_prev * a_cur * q_prev * q_cur).abs() <= DEGENERACY_GUARD {
        return 0.0;
    }
    2.0 * s / (a_prev * a_cur * a_cur * q_cur)
        * (s / q_prev - s * s * eps_cur / q_prev - s * (eps_prev - eps_cur))
}

/// Closed form of `b_{k-1}` for polynomial schedules. Must agree with
/// [`Schedule::b_coef`] to 1e-10 relative; the generic formula is the source
/// of truth.
pub fn bp_closed_form(params: &PolyParams, s: f64, k: u64) -> Result<f64, ScheduleError> {
    if k == 0 {
        return Err(ScheduleError::IndexZero);
    }
    if k == 1 {
        return Ok(0.0);
    }
    let (a, q, c, p) = (params.a, params.q, params.c, params.p);
    let kf = k as f64;
    let km = kf - 1.0;
    let den = a * a * km.powf(q + p) * kf.powf(q) * (km.powf(p) - c * s) * (kf.powf(p) - c * s);
    if den.abs() <= DEGENERACY_GUARD {
        return Ok(0.0);
    }
    let num = kf.powf(p)
        * (a * km.powf(q) - s)
        * (a * (km.powf(p) - c * s).powi(2) * km.powf(q) - 2.0 * s * km.powf(2.0 * p));
    Ok(num / den)
}

/// Closed form of `c_k` for polynomial schedules, with the corrected
/// `-s·c·(k-1)^p` numerator term (see the module docs).
pub fn cp_closed_form(params: &PolyParams, s: f64, k: u64) -> Result<f64, ScheduleError> {
    if k == 0 {
        return Err(ScheduleError::IndexZero);
    }
    if k == 1 {
        return Ok(0.0);
    }
    let (a, q, c, p) = (params.a, params.q, params.c, params.p);
    let kf = k as f64;
    let km = kf - 1.0;
    let den = a * a * km.powf(q) * kf.powf(q) * (km.powf(p) - c * s) * (kf.powf(p) - c * s).powi(2);
    if den.abs() <= DEGENERACY_GUARD {
        return Ok(0.0);
    }
    let num = 2.0
        * s
        * s
        * kf.powf(p)
        * (km.powf(p) * kf.powf(p) - s * c * km.powf(p) - a * c * km.powf(q) * kf.powf(p)
            + a * c * km.powf(q + p));
    Ok(num / den)
}

/// `int(x) + 1` saturating at `u64::MAX`; small exponents `p` can push the
/// index formulas beyond any addressable iteration count.
fn int_part_plus_one(raw: f64) -> u64 {
    if raw.is_finite() {
        (raw.trunc() as u64).saturating_add(1)
    } else {
        u64::MAX
    }
}

/// Indices `start..=horizon`, dense up to the dense-scan limit and geometric
/// (ratio 1.02) beyond, always including `horizon`.
fn scan_grid(start: u64, horizon: u64) -> Vec<u64> {
    let start = start.max(1);
    if horizon < start {
        return Vec::new();
    }
    let mut ks: Vec<u64> = Vec::new();
    let dense_end = horizon.min(DENSE_SCAN_LIMIT.max(start));
    ks.extend(start..=dense_end);
    let mut k = dense_end as f64;
    loop {
        k *= GEOMETRIC_STEP;
        let ki = k.ceil() as u64;
        if ki >= horizon {
            break;
        }
        ks.push(ki);
    }
    if ks.last() != Some(&horizon) {
        ks.push(horizon);
    }
    ks
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn paper_params() -> PolyParams {
        PolyParams::new(1.0, 0.8, 1.0, 1.5).unwrap()
    }

    fn paper_schedule() -> Schedule {
        // L = 4 keeps condition (S) satisfiable at s = 0.1
        Schedule::polynomial(paper_params(), 0.1, 4.0).unwrap()
    }

    #[test]
    fn eps_at_values() {
        let sched = paper_schedule();
        assert_eq!(sched.eps_at(1).unwrap(), 1.0);
        // frozen: 5^(-1.5)
        assert_relative_eq!(sched.eps_at(5).unwrap(), 0.08944271909999159, max_relative = 1e-14);
        let sched100 =
            Schedule::polynomial(PolyParams::new(1.0, 0.8, 100.0, 1.5).unwrap(), 0.1, 4.0).unwrap();
        assert_relative_eq!(sched100.eps_at(4).unwrap(), 12.5, max_relative = 1e-14);
        assert!(matches!(sched.eps_at(0), Err(ScheduleError::IndexZero)));
    }

    #[test]
    fn q_at_values() {
        let sched = paper_schedule();
        assert_eq!(sched.q_at(1).unwrap(), 1.0);
        // frozen: 5^0.8
        assert_relative_eq!(sched.q_at(5).unwrap(), 3.623898318388478, max_relative = 1e-14);
        let small =
            Schedule::polynomial(PolyParams::new(0.04, 0.8, 1.0, 1.5).unwrap(), 0.1, 4.0).unwrap();
        // 0.04 · 32^0.8 = 0.04 · 16
        assert_relative_eq!(small.q_at(32).unwrap(), 0.64, max_relative = 1e-14);
        assert!(matches!(sched.q_at(0), Err(ScheduleError::IndexZero)));
    }

    #[test]
    fn k0_formula() {
        // (0.1/0.6)^(2/3) ≈ 0.3028 -> int 0 -> k0 = 1
        assert_eq!(paper_params().k0(0.1, 4.0).unwrap(), 1);
        // (10/0.6)^(2/3) ≈ 6.52 -> int 6 -> k0 = 7
        let c100 = PolyParams::new(1.0, 0.8, 100.0, 1.5).unwrap();
        assert_eq!(c100.k0(0.1, 4.0).unwrap(), 7);
        // s·L = 1 is unsatisfiable
        assert!(matches!(
            paper_params().k0(0.2, 5.0),
            Err(ScheduleError::ConditionSUnsatisfiable { .. })
        ));
    }

    #[test]
    fn k1_values() {
        assert_eq!(paper_schedule().k1(), 1);
        let c100 =
            Schedule::polynomial(PolyParams::new(1.0, 0.8, 100.0, 1.5).unwrap(), 0.1, 4.0).unwrap();
        // (s·c)^(1/p) = 10^(2/3) ≈ 4.64 < k0 = 7
        assert_eq!(c100.k1(), 7);
        // tiny L: k0 = int((100/(1-0.0001))^(2/3)) + 1 = 22 = the k1 floor
        let c1000 = Schedule::polynomial(PolyParams::new(1.0, 0.8, 1000.0, 1.5).unwrap(), 0.1, 1e-3)
            .unwrap();
        assert_eq!(c1000.k1(), 22);
        assert!(c1000.k1() >= c1000.k0());
    }

    #[test]
    fn condition_s_downgrade() {
        // the 2-D benchmark at s = 0.1 has s·L = 2000: constructible, flagged
        let sched = Schedule::polynomial(paper_params(), 0.1, 20000.02).unwrap();
        assert!(!sched.condition_s());
        assert_eq!(sched.k0(), 1);
    }

    #[test]
    fn check_q_paper_values() {
        let sched = paper_schedule();
        // frozen by direct evaluation: lhs at k = 1 is +1.7436475066113639
        let v1 = sched.check_q(1).unwrap();
        assert_relative_eq!(v1.lhs, 1.7436475066113639, max_relative = 1e-13);
        assert!(!v1.inequality_holds);
        assert!(v1.lower_bound_holds);
        // far beyond the crossover (2qa/s)^(1/(1-q)) ≈ 1.05e6 both parts hold
        let v2 = sched.check_q(10_000_000).unwrap();
        assert!(v2.inequality_holds && v2.lower_bound_holds);
        // q = 1 mode with a < s/2
        let q1 = Schedule::polynomial(PolyParams::new(0.04, 1.0, 1.0, 1.5).unwrap(), 0.1, 4.0)
            .unwrap();
        let v3 = q1.check_q(10_000).unwrap();
        assert!(v3.inequality_holds && v3.lower_bound_holds);
    }

    #[test]
    fn check_q_below_k1_is_an_error() {
        let c100 =
            Schedule::polynomial(PolyParams::new(1.0, 0.8, 100.0, 1.5).unwrap(), 0.1, 4.0).unwrap();
        assert!(matches!(c100.check_q(3), Err(ScheduleError::BelowK1 { .. })));
    }

    #[test]
    fn find_k2_small_a() {
        let sched =
            Schedule::polynomial(PolyParams::new(0.04, 0.8, 1.0, 1.5).unwrap(), 0.1, 4.0).unwrap();
        // the lower bound q_k >= 2s/(1-s eps_k)² starts holding at k = 8
        assert_eq!(sched.find_k2(100_000).unwrap(), Some(8));
        assert_eq!(sched.k2(), Some(8));
        assert_eq!(sched.kbar(), Some(9));
    }

    #[test]
    fn find_k2_crossover_beyond_horizon() {
        let sched = paper_schedule();
        assert_eq!(sched.find_k2(10_000).unwrap(), None);
        // the crossover sits near 1.05e6; the geometric grid localizes it
        let k2 = sched.find_k2(2_000_000).unwrap().unwrap();
        assert!((1_040_000..1_100_000).contains(&k2), "k2 = {k2}");
    }

    #[test]
    fn find_k2_horizon_below_k1() {
        let c100 =
            Schedule::polynomial(PolyParams::new(1.0, 0.8, 100.0, 1.5).unwrap(), 0.1, 4.0).unwrap();
        assert!(matches!(c100.find_k2(3), Err(ScheduleError::HorizonTooSmall { .. })));
    }

    #[test]
    fn b_coef_values() {
        let sched = paper_schedule();
        assert_eq!(sched.b_coef(1).unwrap(), 0.0);
        // frozen by 30-digit evaluation of (B) at eps1 = 1, eps2 = 2^-1.5,
        // q1 = 1, q2 = 2^0.8
        assert_relative_eq!(sched.b_coef(2).unwrap(), 0.36319383961805083, max_relative = 1e-13);
        let tail = sched.b_coef(1_000_000).unwrap();
        assert!((tail - 1.0).abs() < 0.01, "b at 1e6 = {tail}");
        assert!(matches!(sched.b_coef(0), Err(ScheduleError::IndexZero)));
    }

    #[test]
    fn c_coef_values() {
        let sched = paper_schedule();
        assert_eq!(sched.c_coef(1).unwrap(), 0.0);
        // frozen by 30-digit evaluation of (C) at the same parameters
        assert_relative_eq!(sched.c_coef(2).unwrap(), 0.004364417372035608, max_relative = 1e-13);
        let tail = sched.c_coef(1_000_000).unwrap();
        assert!(tail > 0.0 && tail < 1e-4, "c at 1e6 = {tail}");
    }

    #[test]
    fn closed_forms_match_generic_at_k2() {
        let params = paper_params();
        let sched = paper_schedule();
        let b = bp_closed_form(&params, 0.1, 2).unwrap();
        let c = cp_closed_form(&params, 0.1, 2).unwrap();
        assert_relative_eq!(b, sched.b_coef(2).unwrap(), max_relative = 1e-12);
        assert_relative_eq!(c, sched.c_coef(2).unwrap(), max_relative = 1e-12);
        assert_eq!(bp_closed_form(&params, 0.1, 1).unwrap(), 0.0);
        assert_eq!(cp_closed_form(&params, 0.1, 1).unwrap(), 0.0);
    }

    #[test]
    fn uncorrected_cp_would_vanish_at_k2() {
        // with a = c = 1 the uncorrected numerator term -c·(k-1)^p cancels the
        // whole bracket at k = 2; the corrected form does not
        let params = paper_params();
        let c = cp_closed_form(&params, 0.1, 2).unwrap();
        assert!(c > 1e-3, "corrected form must be nonzero, got {c}");
    }

    #[test]
    fn theorem2_certified_passes() {
        let report = paper_schedule().theorem2_hypotheses(100_000).unwrap();
        assert!(report.all_pass(), "{report}");
    }

    #[test]
    fn theorem2_p_above_2q_fails_monotonicity() {
        let sched =
            Schedule::polynomial(PolyParams::new(1.0, 0.8, 1.0, 1.7).unwrap(), 0.1, 4.0).unwrap();
        let report = sched.theorem2_hypotheses(100_000).unwrap();
        assert!(!report.q2eps_increasing);
        assert!(!report.q2eps_divergent);
        assert!(report.failures().iter().any(|f| f.contains("increasing")));
    }

    #[test]
    fn theorem2_q1_shift_does_not_vanish() {
        let sched =
            Schedule::polynomial(PolyParams::new(1.0, 1.0, 1.0, 1.5).unwrap(), 0.1, 4.0).unwrap();
        let report = sched.theorem2_hypotheses(100_000).unwrap();
        // q_k(eps_k - eps_{k+1})/eps_k -> a·p = 1.5, not 0
        assert!(!report.shift_vanishes, "{report}");
        assert!(report.shift_last_max > 1.0);
    }

    #[test]
    fn certification_gate() {
        assert_eq!(paper_params().certification(0.1), Certification::RateCertified);
        assert_eq!(
            PolyParams::new(1.0, 0.8, 1.0, 1.7).unwrap().certification(0.1),
            Certification::Uncertified
        );
        assert_eq!(
            PolyParams::new(0.04, 1.0, 1.0, 1.5).unwrap().certification(0.1),
            Certification::Q1Mode
        );
        assert_eq!(
            PolyParams::new(0.06, 1.0, 1.0, 1.5).unwrap().certification(0.1),
            Certification::Uncertified
        );
    }

    #[test]
    fn custom_rule_matches_polynomial() {
        let params = paper_params();
        let custom = Schedule::custom(
            Arc::new(move |k| params.eps(k)),
            Arc::new(move |k| params.q(k)),
            0.1,
            4.0,
        )
        .unwrap();
        let poly = paper_schedule();
        assert_eq!(custom.k0(), poly.k0());
        assert_eq!(custom.k1(), poly.k1());
        for k in [1, 2, 5, 100, 12345] {
            assert_eq!(custom.b_coef(k).unwrap(), poly.b_coef(k).unwrap());
            assert_eq!(custom.c_coef(k).unwrap(), poly.c_coef(k).unwrap());
        }
    }

    #[test]
    fn custom_rule_rejects_increasing_eps() {
        let bad = Schedule::custom(
            Arc::new(|k| k as f64),
            Arc::new(|k| k as f64),
            0.1,
            4.0,
        );
        assert!(matches!(bad, Err(ScheduleError::InvalidParams(_))));
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(PolyParams::new(0.0, 0.8, 1.0, 1.5).is_err());
        assert!(PolyParams::new(1.0, 1.2, 1.0, 1.5).is_err());
        assert!(PolyParams::new(1.0, 0.8, -1.0, 1.5).is_err());
        assert!(PolyParams::new(1.0, 0.8, 1.0, 0.0).is_err());
        assert!(Schedule::polynomial(paper_params(), 0.0, 4.0).is_err());
        assert!(Schedule::polynomial(paper_params(), 0.1, 0.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// Closed forms agree with the generic formulas over certified draws
        /// and a log grid of indices up to 1e6.
        #[test]
        fn closed_forms_match_generic(
            a in 0.01f64..1.0,
            q in 0.1f64..0.9,
            c in 0.1f64..100.0,
            t in 0.05f64..0.95,
            exp in 0u32..7,
            frac in 1.0f64..9.99,
        ) {
            let p = t * 2.0 * q;
            prop_assume!(p > 0.01);
            let params = PolyParams::new(a, q, c, p).unwrap();
            let s = 0.9 / 52.0;
            let sched = Schedule::polynomial(params, s, 52.0).unwrap();
            let k = ((frac * 10f64.powi(exp as i32)) as u64).max(2);
            let b_closed = bp_closed_form(&params, s, k).unwrap();
            let b_generic = sched.b_coef(k).unwrap();
            let c_closed = cp_closed_form(&params, s, k).unwrap();
            let c_generic = sched.c_coef(k).unwrap();
            prop_assert!(
                (b_closed - b_generic).abs() <= 1e-14 + 1e-10 * b_generic.abs(),
                "b mismatch at k={}: {} vs {}", k, b_closed, b_generic
            );
            prop_assert!(
                (c_closed - c_generic).abs() <= 1e-14 + 1e-10 * c_generic.abs(),
                "c mismatch at k={}: {} vs {}", k, c_closed, c_generic
            );
        }

        /// eps is non-increasing and q increasing on certified draws.
        #[test]
        fn monotonic_sequences(
            a in 0.01f64..1.0,
            q in 0.1f64..0.9,
            c in 0.1f64..100.0,
            k in 1u64..1_000_000,
        ) {
            let params = PolyParams::new(a, q, c, 2.0 * q * 0.9).unwrap();
            prop_assert!(params.eps(k + 1) <= params.eps(k));
            prop_assert!(params.q(k + 1) > params.q(k));
        }

        /// b stays in [0, 1) from kbar on for certified schedules.
        #[test]
        fn b_in_unit_interval_past_kbar(
            a in 0.05f64..1.0,
            q in 0.3f64..0.9,
            c in 0.1f64..10.0,
            k in 2u64..100_000,
        ) {
            let params = PolyParams::new(a, q, c, q).unwrap();
            let s = 0.9 / 52.0;
            let sched = Schedule::polynomial(params, s, 52.0).unwrap();
            if let Some(kbar) = sched.k2().map(|v| v + 1) {
                let kk = k.max(kbar);
                let b = sched.b_coef(kk).unwrap();
                prop_assert!((0.0..1.0).contains(&b), "b({}) = {}", kk, b);
            }
        }
    }
}
