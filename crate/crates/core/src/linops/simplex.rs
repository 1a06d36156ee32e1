//! Bounded-variable primal simplex for `max c·x  s.t.  A x ≤ b,  lo ≤ x ≤ hi`.
//!
//! Every row carries an implicit slack `s_i = b_i - A_i x ≥ 0`. The basis is
//! never stored as an `m x m` matrix: the basic slacks are identity columns, so
//! the only nontrivial part is the square kernel `A[R, S]` formed by the tight
//! rows `R` (nonbasic slacks) and the basic structurals `S`. This keeps each
//! iteration at `O(k^3 + m k)` with `k ≤ n`, which matters for the tall,
//! narrow programs produced by the big-M encodings.
//!
//! Pricing is Dantzig's largest reduced cost with a Harris two-pass ratio
//! test. After a run of degenerate pivots the solver falls back to Bland's
//! rule until the objective moves again. Infeasible starting points go
//! through a phase 1 that minimizes a single artificial variable added to
//! every initially violated row.

use serde::{Deserialize, Serialize};

use super::dense::Lu;
use super::{LinalgError, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    /// Maximized.
    pub objective: Vec<f64>,
    pub constraints: Matrix,
    pub rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LpProblem {
    pub fn new(
        objective: Vec<f64>,
        constraints: Matrix,
        rhs: Vec<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> Result<Self, LpError> {
        let p = Self {
            objective,
            constraints,
            rhs,
            lower,
            upper,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.objective.len();
        let m = self.rhs.len();
        if self.constraints.rows() != m || (m > 0 && self.constraints.cols() != n) {
            return Err(LpError::InvalidProblem(format!(
                "constraint matrix is {}x{}, expected {m}x{n}",
                self.constraints.rows(),
                self.constraints.cols()
            )));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err(LpError::InvalidProblem(
                "bound vectors have wrong length".into(),
            ));
        }
        if self
            .objective
            .iter()
            .chain(&self.rhs)
            .any(|v| !v.is_finite())
        {
            return Err(LpError::InvalidProblem(
                "non-finite objective or rhs".into(),
            ));
        }
        for (j, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if lo.is_nan() || hi.is_nan() || *lo == f64::INFINITY || *hi == f64::NEG_INFINITY {
                return Err(LpError::InvalidProblem(format!(
                    "bad bounds on variable {j}"
                )));
            }
            if lo > hi {
                return Err(LpError::InvalidProblem(format!(
                    "variable {j} has lower bound {lo} above upper bound {hi}"
                )));
            }
        }
        Ok(())
    }

    /// Largest violation of any row or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (i, row) in self.constraints.row_iter().enumerate() {
            let lhs: f64 = row.iter().zip(x).map(|(a, v)| a * v).sum();
            worst = worst.max(lhs - self.rhs[i]);
        }
        for ((v, lo), hi) in x.iter().zip(&self.lower).zip(&self.upper) {
            worst = worst.max(lo - v).max(v - hi);
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Objective at `point`; meaningful only when `Optimal`.
    pub value: f64,
    pub point: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpOptions {
    pub feas_tol: f64,
    pub opt_tol: f64,
    /// Hard cap on pivots; `None` derives one from the problem size.
    pub max_iterations: Option<usize>,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub bland_after: usize,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-7,
            opt_tol: 1e-7,
            max_iterations: None,
            bland_after: 50,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LpError {
    #[error("invalid LP: {0}")]
    InvalidProblem(String),
    #[error("simplex hit the iteration limit ({iterations} pivots, phase {phase}, objective {objective:e})")]
    IterationLimit {
        iterations: usize,
        phase: u8,
        objective: f64,
    },
    #[error("simplex lost numerical accuracy after {iterations} pivots: {detail}")]
    Numerical { iterations: usize, detail: String },
}

/// Solves `p` with the given tolerances.
pub fn solve_lp(p: &LpProblem, opts: &LpOptions) -> Result<LpSolution, LpError> {
    p.validate()?;
    if !(opts.feas_tol > 0.0 && opts.opt_tol > 0.0) {
        return Err(LpError::InvalidProblem(
            "tolerances must be positive".into(),
        ));
    }
    Simplex::new(p, opts).run()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic,
    AtLower,
    AtUpper,
    FreeZero,
}

const PIVOT_TOL: f64 = 1e-9;
const REFRESH_EVERY: usize = 40;

struct Simplex<'a> {
    opts: &'a LpOptions,
    m: usize,
    /// Structural count including the phase-1 artificial (last column).
    n: usize,
    n_orig: usize,
    /// Row-major `m x n`.
    a: Vec<f64>,
    b: Vec<f64>,
    /// Current phase objective.
    cost: Vec<f64>,
    objective: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    x: Vec<f64>,
    state: Vec<VarState>,
    /// Slack values; meaningful for basic slacks (rows not in `tight`).
    slack: Vec<f64>,
    row_tight: Vec<bool>,
    basic: Vec<usize>,
    tight: Vec<usize>,
    iterations: usize,
    max_iterations: usize,
}

#[derive(Debug, Clone, Copy)]
enum Entering {
    /// Structural index and direction (+1 increase, -1 decrease).
    Structural(usize, f64),
    /// Slack of the tight row at this position of `tight`.
    Slack(usize),
}

#[derive(Debug, Clone, Copy)]
enum Leaving {
    /// The entering variable travels to its opposite bound.
    Flip,
    /// Basic structural at this position of `basic`; `true` when it leaves at its upper bound.
    Structural(usize, bool),
    /// Basic slack of this row hits zero.
    Slack(usize),
}

struct Kernel {
    lu: Option<Lu>,
}

impl Kernel {
    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        self.lu.as_ref().map_or_else(Vec::new, |lu| lu.solve(rhs))
    }

    fn solve_transpose(&self, rhs: &[f64]) -> Vec<f64> {
        self.lu
            .as_ref()
            .map_or_else(Vec::new, |lu| lu.solve_transpose(rhs))
    }
}

impl<'a> Simplex<'a> {
    fn new(p: &LpProblem, opts: &'a LpOptions) -> Self {
        let m = p.num_rows();
        let n_orig = p.num_vars();
        let n = n_orig + 1;
        let mut a = vec![0.0; m * n];
        for i in 0..m {
            a[i * n..i * n + n_orig].copy_from_slice(p.constraints.row(i));
        }
        let mut lo = p.lower.clone();
        let mut hi = p.upper.clone();
        lo.push(0.0);
        hi.push(0.0);
        let mut x = vec![0.0; n];
        let mut state = vec![VarState::AtLower; n];
        for j in 0..n {
            if lo[j].is_finite() {
                x[j] = lo[j];
            } else if hi[j].is_finite() {
                x[j] = hi[j];
                state[j] = VarState::AtUpper;
            } else {
                state[j] = VarState::FreeZero;
            }
        }
        let mut objective = p.objective.clone();
        objective.push(0.0);
        Self {
            opts,
            m,
            n,
            n_orig,
            a,
            b: p.rhs.clone(),
            cost: vec![0.0; n],
            objective,
            lo,
            hi,
            x,
            state,
            slack: vec![0.0; m],
            row_tight: vec![false; m],
            basic: Vec::new(),
            tight: Vec::new(),
            iterations: 0,
            max_iterations: opts.max_iterations.unwrap_or(20_000 + 50 * (m + n)),
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    fn run(mut self) -> Result<LpSolution, LpError> {
        let art = self.n - 1;
        for i in 0..self.m {
            let lhs: f64 = (0..self.n_orig).map(|j| self.at(i, j) * self.x[j]).sum();
            self.slack[i] = self.b[i] - lhs;
        }
        let mut worst_row = 0;
        let mut worst = 0.0;
        for (i, s) in self.slack.iter().enumerate() {
            if -s > worst {
                worst = -s;
                worst_row = i;
            }
        }
        if worst > self.opts.feas_tol {
            for i in 0..self.m {
                if self.slack[i] < 0.0 {
                    self.a[i * self.n + art] = -1.0;
                }
            }
            self.hi[art] = f64::INFINITY;
            self.basic.push(art);
            self.tight.push(worst_row);
            self.row_tight[worst_row] = true;
            self.state[art] = VarState::Basic;
            self.cost = vec![0.0; self.n];
            self.cost[art] = -1.0;
            self.refresh()?;
            self.optimize(1)?;
            if self.x[art] > self.opts.feas_tol {
                return Ok(LpSolution {
                    status: LpStatus::Infeasible,
                    value: f64::NAN,
                    point: self.x[..self.n_orig].to_vec(),
                    iterations: self.iterations,
                });
            }
            self.hi[art] = 0.0;
            if self.state[art] != VarState::Basic {
                self.state[art] = VarState::AtLower;
                self.x[art] = 0.0;
            }
            self.refresh()?;
        }
        self.cost = self.objective.clone();
        let unbounded = self.optimize(2)?;
        let point = self.x[..self.n_orig].to_vec();
        if unbounded {
            return Ok(LpSolution {
                status: LpStatus::Unbounded,
                value: f64::INFINITY,
                point,
                iterations: self.iterations,
            });
        }
        let value = point.iter().zip(&self.objective).map(|(x, c)| x * c).sum();
        Ok(LpSolution {
            status: LpStatus::Optimal,
            value,
            point,
            iterations: self.iterations,
        })
    }

    fn factor_kernel(&self) -> Result<Kernel, LpError> {
        let k = self.basic.len();
        if k == 0 {
            return Ok(Kernel { lu: None });
        }
        let mut dense = Vec::with_capacity(k * k);
        for &r in &self.tight {
            for &j in &self.basic {
                dense.push(self.at(r, j));
            }
        }
        match Lu::factor(k, dense, 1e-13) {
            Ok(lu) => Ok(Kernel { lu: Some(lu) }),
            Err(LinalgError::Singular { pivot }) => Err(LpError::Numerical {
                iterations: self.iterations,
                detail: format!("basis kernel of size {k} is singular at pivot {pivot}"),
            }),
            Err(e) => Err(LpError::Numerical {
                iterations: self.iterations,
                detail: e.to_string(),
            }),
        }
    }

    /// Recomputes basic structurals and basic slacks from the nonbasic values.
    fn refresh(&mut self) -> Result<(), LpError> {
        let kernel = self.factor_kernel()?;
        for j in 0..self.n {
            match self.state[j] {
                VarState::AtLower => self.x[j] = self.lo[j],
                VarState::AtUpper => self.x[j] = self.hi[j],
                VarState::FreeZero => self.x[j] = 0.0,
                VarState::Basic => self.x[j] = 0.0,
            }
        }
        let mut residual = self.b.clone();
        for (i, r) in residual.iter_mut().enumerate() {
            let row = &self.a[i * self.n..(i + 1) * self.n];
            *r -= row.iter().zip(&self.x).map(|(a, x)| a * x).sum::<f64>();
        }
        let rhs: Vec<f64> = self.tight.iter().map(|&r| residual[r]).collect();
        let xs = kernel.solve(&rhs);
        for (l, &j) in self.basic.iter().enumerate() {
            self.x[j] = xs[l];
        }
        for i in 0..self.m {
            if self.row_tight[i] {
                self.slack[i] = 0.0;
            } else {
                let s: f64 = self.basic.iter().map(|&j| self.at(i, j) * self.x[j]).sum();
                self.slack[i] = residual[i] - s;
            }
        }
        Ok(())
    }

    fn objective_value(&self) -> f64 {
        self.x.iter().zip(&self.cost).map(|(x, c)| x * c).sum()
    }

    /// Runs pivots until optimal; returns `true` when the phase objective is unbounded.
    fn optimize(&mut self, phase: u8) -> Result<bool, LpError> {
        let mut degenerate_run = 0usize;
        let mut since_refresh = 0usize;
        let mut verified = false;
        loop {
            if self.iterations >= self.max_iterations {
                return Err(LpError::IterationLimit {
                    iterations: self.iterations,
                    phase,
                    objective: self.objective_value(),
                });
            }
            if since_refresh >= REFRESH_EVERY {
                self.refresh()?;
                since_refresh = 0;
            }
            let bland = degenerate_run >= self.opts.bland_after;
            let kernel = self.factor_kernel()?;
            let Some(entering) = self.price(&kernel, bland) else {
                if verified {
                    return Ok(false);
                }
                // Confirm optimality on freshly recomputed values.
                self.refresh()?;
                since_refresh = 0;
                verified = true;
                continue;
            };
            verified = false;
            let (dir_basic, dir_slack, sigma, range) = self.direction(&kernel, entering);
            let Some((theta, leaving)) = self.ratio_test(&dir_basic, &dir_slack, range, bland)
            else {
                return Ok(true);
            };
            self.pivot(entering, sigma, theta, leaving, &dir_basic, &dir_slack);
            self.iterations += 1;
            since_refresh += 1;
            if theta <= 1e-12 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
        }
    }

    fn price(&self, kernel: &Kernel, bland: bool) -> Option<Entering> {
        let cb: Vec<f64> = self.basic.iter().map(|&j| self.cost[j]).collect();
        let y = kernel.solve_transpose(&cb);
        let tol = self.opts.opt_tol;
        let mut best: Option<(Entering, f64)> = None;
        let consider = |cand: Entering, score: f64, best: &mut Option<(Entering, f64)>| match best {
            None => *best = Some((cand, score)),
            Some((_, s)) if !bland && score > *s => *best = Some((cand, score)),
            _ => {}
        };
        for j in 0..self.n {
            let st = self.state[j];
            if st == VarState::Basic || self.hi[j] - self.lo[j] <= 0.0 {
                continue;
            }
            let mut d = self.cost[j];
            for (p, &r) in self.tight.iter().enumerate() {
                d -= y[p] * self.at(r, j);
            }
            let sigma = match st {
                VarState::AtLower if d > tol => 1.0,
                VarState::AtUpper if d < -tol => -1.0,
                VarState::FreeZero if d.abs() > tol => d.signum(),
                _ => continue,
            };
            consider(Entering::Structural(j, sigma), d.abs(), &mut best);
            if bland {
                break;
            }
        }
        // Slack of tight row r has reduced cost -y_r; it may only increase.
        let mut slack_best: Option<(Entering, f64, usize)> = None;
        for (p, &r) in self.tight.iter().enumerate() {
            let d = -y[p];
            if d > tol {
                match slack_best {
                    None => slack_best = Some((Entering::Slack(p), d, r)),
                    Some((_, s, row)) => {
                        let better = if bland { r < row } else { d > s };
                        if better {
                            slack_best = Some((Entering::Slack(p), d, r));
                        }
                    }
                }
            }
        }
        match (best, slack_best) {
            (None, None) => None,
            (Some((e, _)), None) => Some(e),
            (None, Some((e, _, _))) => Some(e),
            // Under Bland's rule structurals precede slacks in the variable order.
            (Some((e, _)), Some(_)) if bland => Some(e),
            (Some((e, s)), Some((es, ss, _))) => Some(if ss > s { es } else { e }),
        }
    }

    /// Rates of change of basic structurals and all slacks per unit step of
    /// the entering variable, its direction, and its own travel range.
    fn direction(&self, kernel: &Kernel, entering: Entering) -> (Vec<f64>, Vec<f64>, f64, f64) {
        let k = self.basic.len();
        let (rhs, sigma, col, range) = match entering {
            Entering::Structural(q, sigma) => {
                let rhs: Vec<f64> = self.tight.iter().map(|&r| -sigma * self.at(r, q)).collect();
                (rhs, sigma, Some(q), self.hi[q] - self.lo[q])
            }
            Entering::Slack(p) => {
                let mut rhs = vec![0.0; k];
                rhs[p] = -1.0;
                (rhs, 1.0, None, f64::INFINITY)
            }
        };
        let dx = kernel.solve(&rhs);
        let mut ds = vec![0.0; self.m];
        for i in 0..self.m {
            if self.row_tight[i] {
                continue;
            }
            let mut v = match col {
                Some(q) => -sigma * self.at(i, q),
                None => 0.0,
            };
            for (l, &j) in self.basic.iter().enumerate() {
                v -= self.at(i, j) * dx[l];
            }
            ds[i] = v;
        }
        (dx, ds, sigma, range)
    }

    fn ratio_test(
        &self,
        dx: &[f64],
        ds: &[f64],
        range: f64,
        bland: bool,
    ) -> Option<(f64, Leaving)> {
        let tol = self.opts.feas_tol;
        // (ratio with exact bounds, ratio with relaxed bounds, |rate|, leaving, var order)
        let mut cands: Vec<(f64, f64, f64, Leaving, usize)> = Vec::new();
        for (l, &j) in self.basic.iter().enumerate() {
            let d = dx[l];
            if d < -PIVOT_TOL && self.lo[j].is_finite() {
                let gap = (self.x[j] - self.lo[j]).max(0.0);
                cands.push((
                    gap / -d,
                    (gap + tol) / -d,
                    -d,
                    Leaving::Structural(l, false),
                    j,
                ));
            } else if d > PIVOT_TOL && self.hi[j].is_finite() {
                let gap = (self.hi[j] - self.x[j]).max(0.0);
                cands.push((gap / d, (gap + tol) / d, d, Leaving::Structural(l, true), j));
            }
        }
        for i in 0..self.m {
            let d = ds[i];
            if !self.row_tight[i] && d < -PIVOT_TOL {
                let gap = self.slack[i].max(0.0);
                cands.push((
                    gap / -d,
                    (gap + tol) / -d,
                    -d,
                    Leaving::Slack(i),
                    self.n + i,
                ));
            }
        }
        if cands.is_empty() {
            return range.is_finite().then_some((range, Leaving::Flip));
        }
        let chosen = if bland {
            let min = cands.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
            let cut = min + 1e-12 * (1.0 + min);
            cands
                .iter()
                .filter(|c| c.0 <= cut)
                .min_by_key(|c| c.4)
                .copied()
                .unwrap()
        } else {
            let relaxed = cands.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
            cands
                .iter()
                .filter(|c| c.0 <= relaxed)
                .fold(
                    None::<(f64, f64, f64, Leaving, usize)>,
                    |best, c| match best {
                        Some(b) if b.2 >= c.2 => Some(b),
                        _ => Some(*c),
                    },
                )
                .unwrap()
        };
        if range <= chosen.0 {
            return Some((range, Leaving::Flip));
        }
        Some((chosen.0, chosen.3))
    }

    fn pivot(
        &mut self,
        entering: Entering,
        sigma: f64,
        theta: f64,
        leaving: Leaving,
        dx: &[f64],
        ds: &[f64],
    ) {
        for (l, &j) in self.basic.iter().enumerate() {
            self.x[j] += theta * dx[l];
        }
        for i in 0..self.m {
            if !self.row_tight[i] {
                self.slack[i] += theta * ds[i];
            }
        }
        match entering {
            Entering::Structural(q, _) => self.x[q] += sigma * theta,
            Entering::Slack(p) => self.slack[self.tight[p]] = theta,
        }

        match leaving {
            Leaving::Flip => {
                if let Entering::Structural(q, _) = entering {
                    if sigma > 0.0 {
                        self.state[q] = VarState::AtUpper;
                        self.x[q] = self.hi[q];
                    } else {
                        self.state[q] = VarState::AtLower;
                        self.x[q] = self.lo[q];
                    }
                }
            }
            Leaving::Structural(l, at_upper) => {
                let j = self.basic[l];
                if at_upper {
                    self.state[j] = VarState::AtUpper;
                    self.x[j] = self.hi[j];
                } else {
                    self.state[j] = VarState::AtLower;
                    self.x[j] = self.lo[j];
                }
                match entering {
                    Entering::Structural(q, _) => {
                        self.basic[l] = q;
                        self.state[q] = VarState::Basic;
                    }
                    Entering::Slack(p) => {
                        let row = self.tight[p];
                        self.row_tight[row] = false;
                        self.basic.swap_remove(l);
                        self.tight.swap_remove(p);
                    }
                }
            }
            Leaving::Slack(i) => {
                self.slack[i] = 0.0;
                self.row_tight[i] = true;
                match entering {
                    Entering::Structural(q, _) => {
                        self.basic.push(q);
                        self.tight.push(i);
                        self.state[q] = VarState::Basic;
                    }
                    Entering::Slack(p) => {
                        let old = self.tight[p];
                        self.row_tight[old] = false;
                        self.tight[p] = i;
                    }
                }
            }
        }
    }
}
