//! Dense bounded-variable primal simplex.
//!
//! Solves `min c·x  s.t.  A x ≥ b,  lo ≤ x ≤ hi` with finite `lo` and
//! possibly infinite `hi`. Rows are turned into equalities with one surplus
//! column each; rows that the all-at-lower-bound start violates get an
//! artificial column and a phase-one objective. Entering and leaving
//! variables follow Bland's rule, so degenerate problems terminate.

use thiserror::Error;

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-11;
const FEAS_TOL: f64 = 1e-9;
const RATIO_TOL: f64 = 1e-10;
/// Pivots between refactorizations of the tableau.
const REFACTOR_EVERY: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("variable {index} has invalid bounds [{lo}, {hi}]")]
    Bounds { index: usize, lo: f64, hi: f64 },
    #[error("non-finite coefficient in {0}")]
    NonFinite(&'static str),
}

/// `min c·x  s.t.  rows·x ≥ rhs,  lower ≤ x ≤ upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LpProblem {
    pub fn new(objective: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        LpProblem {
            objective,
            rows: Vec::new(),
            rhs: Vec::new(),
            lower,
            upper,
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Appends the constraint `row·x ≥ rhs`.
    pub fn push_row(&mut self, row: Vec<f64>, rhs: f64) {
        self.rows.push(row);
        self.rhs.push(rhs);
    }

    fn validate(&self) -> Result<(), LpError> {
        let n = self.n_vars();
        if n == 0 {
            return Err(LpError::Dimension("no variables".into()));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err(LpError::Dimension(format!(
                "{} variables but {} lower / {} upper bounds",
                n,
                self.lower.len(),
                self.upper.len()
            )));
        }
        if self.rhs.len() != self.rows.len() {
            return Err(LpError::Dimension(format!(
                "{} rows but {} right-hand sides",
                self.rows.len(),
                self.rhs.len()
            )));
        }
        if let Some(i) = self.rows.iter().position(|r| r.len() != n) {
            return Err(LpError::Dimension(format!(
                "row {i} has {} entries, expected {n}",
                self.rows[i].len()
            )));
        }
        for j in 0..n {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            if !lo.is_finite() || hi.is_nan() || hi < lo {
                return Err(LpError::Bounds { index: j, lo, hi });
            }
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(LpError::NonFinite("objective"));
        }
        if self.rows.iter().flatten().any(|a| !a.is_finite()) {
            return Err(LpError::NonFinite("constraint matrix"));
        }
        if self.rhs.iter().any(|b| !b.is_finite()) {
            return Err(LpError::NonFinite("right-hand side"));
        }
        Ok(())
    }

    /// Largest violation of rows and bounds at `x` (0 when feasible).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (row, &b) in self.rows.iter().zip(&self.rhs) {
            let ax: f64 = row.iter().zip(x).map(|(a, v)| a * v).sum();
            worst = worst.max(b - ax);
        }
        for j in 0..x.len() {
            worst = worst.max(self.lower[j] - x[j]).max(x[j] - self.upper[j]);
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// Pivot budget `10·(n+m)·max(n,m)` exhausted.
    IterationLimit,
    /// Phase one reported an unbounded ray, which only round-off can cause.
    Numerical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// Row multipliers `y ≥ 0` of an optimal basis.
    pub duals: Vec<f64>,
}

struct Tableau {
    m: usize,
    cols: usize,
    /// `B⁻¹ M`, row-major.
    t: Vec<f64>,
    /// Original columns `M = [A | -I | art]` and right-hand side.
    orig: Vec<f64>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    value: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    cost: Vec<f64>,
    reduced: Vec<f64>,
    iterations: usize,
    max_iterations: usize,
    pivots_since_refactor: usize,
}

enum Phase {
    Optimal,
    Unbounded,
    IterationLimit,
}

impl Tableau {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.cols + j]
    }

    fn price_out(&mut self) {
        for j in 0..self.cols {
            let mut d = self.cost[j];
            for i in 0..self.m {
                d -= self.cost[self.basis[i]] * self.at(i, j);
            }
            self.reduced[j] = d;
        }
    }

    /// Step at which basic variable of row `i` hits a bound when column `j`
    /// moves in direction `dir`, with the bound relaxed by `slack`.
    fn row_limit(&self, i: usize, j: usize, dir: f64, slack: f64) -> Option<(f64, bool)> {
        let alpha = self.at(i, j);
        if alpha.abs() <= PIVOT_TOL {
            return None;
        }
        let bv = self.basis[i];
        let rate = -dir * alpha;
        if rate < 0.0 {
            Some(((self.value[bv] - self.lo[bv] + slack) / -rate, false))
        } else if self.hi[bv].is_finite() {
            Some(((self.hi[bv] - self.value[bv] + slack) / rate, true))
        } else {
            None
        }
    }

    /// Rebuilds `B⁻¹ M` and the basic values from the original columns.
    fn refactor(&mut self) {
        let (m, cols) = (self.m, self.cols);
        if m == 0 {
            return;
        }
        // Gauss-Jordan on [B | M | rhs - N x_N]
        let w = cols + 1;
        let mut rhs = self.rhs.clone();
        for j in 0..cols {
            if !self.is_basic[j] && self.value[j] != 0.0 {
                for i in 0..m {
                    rhs[i] -= self.orig[i * cols + j] * self.value[j];
                }
            }
        }
        let mut bmat = vec![0.0; m * m];
        for i in 0..m {
            for (r, &bv) in self.basis.iter().enumerate() {
                bmat[i * m + r] = self.orig[i * cols + bv];
            }
        }
        let mut aug = vec![0.0; m * w];
        for i in 0..m {
            aug[i * w..i * w + cols].copy_from_slice(&self.orig[i * cols..(i + 1) * cols]);
            aug[i * w + cols] = rhs[i];
        }
        // column r of B corresponds to basis position r
        let mut perm: Vec<usize> = (0..m).collect();
        for c in 0..m {
            let piv = (c..m)
                .max_by(|&a, &b| bmat[a * m + c].abs().total_cmp(&bmat[b * m + c].abs()))
                .expect("nonempty range");
            if bmat[piv * m + c].abs() < 1e-12 {
                log::debug!("singular basis during refactorization; keeping updated tableau");
                return;
            }
            if piv != c {
                for k in 0..m {
                    bmat.swap(c * m + k, piv * m + k);
                }
                for k in 0..w {
                    aug.swap(c * w + k, piv * w + k);
                }
                perm.swap(c, piv);
            }
            let p = bmat[c * m + c];
            for k in 0..m {
                bmat[c * m + k] /= p;
            }
            for k in 0..w {
                aug[c * w + k] /= p;
            }
            for r in 0..m {
                if r == c {
                    continue;
                }
                let f = bmat[r * m + c];
                if f == 0.0 {
                    continue;
                }
                for k in 0..m {
                    bmat[r * m + k] -= f * bmat[c * m + k];
                }
                for k in 0..w {
                    aug[r * w + k] -= f * aug[c * w + k];
                }
            }
        }
        // after elimination row c of aug is the row for basis position c
        for r in 0..m {
            self.t[r * cols..(r + 1) * cols].copy_from_slice(&aug[r * w..r * w + cols]);
            self.value[self.basis[r]] = aug[r * w + cols];
        }
        self.price_out();
    }

    fn objective(&self) -> f64 {
        self.cost.iter().zip(&self.value).map(|(c, v)| c * v).sum()
    }

    /// Runs to optimality, then refactors and confirms the basis is still
    /// optimal against the freshly computed tableau.
    fn solve_phase(&mut self) -> Phase {
        for _ in 0..8 {
            let before = self.iterations;
            match self.run() {
                Phase::Optimal => {}
                other => return other,
            }
            self.refactor();
            self.pivots_since_refactor = 0;
            if self.is_optimal() || self.iterations == before {
                return Phase::Optimal;
            }
        }
        Phase::Optimal
    }

    fn is_optimal(&self) -> bool {
        (0..self.cols).all(|j| {
            if self.is_basic[j] || self.hi[j] <= self.lo[j] {
                return true;
            }
            let at_lower = self.value[j] <= self.lo[j];
            !((at_lower && self.reduced[j] < -COST_TOL) || (!at_lower && self.reduced[j] > COST_TOL))
        })
    }

    fn run(&mut self) -> Phase {
        loop {
            // Bland: lowest-index improving column
            let mut entering = None;
            for j in 0..self.cols {
                if self.is_basic[j] || self.hi[j] <= self.lo[j] {
                    continue;
                }
                let d = self.reduced[j];
                let at_lower = self.value[j] <= self.lo[j];
                if (at_lower && d < -COST_TOL) || (!at_lower && d > COST_TOL) {
                    entering = Some((j, if at_lower { 1.0 } else { -1.0 }));
                    break;
                }
            }
            let Some((j, dir)) = entering else {
                return Phase::Optimal;
            };
            if self.iterations >= self.max_iterations {
                return Phase::IterationLimit;
            }
            self.iterations += 1;

            // Harris two-pass ratio test: the first pass finds the longest
            // step allowed with bounds relaxed by RATIO_TOL, the second picks
            // the largest pivot among rows blocking within that step.
            let range = self.hi[j] - self.lo[j];
            let mut relaxed = range;
            for i in 0..self.m {
                if let Some((limit, _)) = self.row_limit(i, j, dir, RATIO_TOL) {
                    relaxed = relaxed.min(limit);
                }
            }
            let mut step = range;
            let mut leave: Option<(usize, bool)> = None;
            if relaxed < range {
                let mut best_alpha = 0.0;
                for i in 0..self.m {
                    if let Some((limit, to_upper)) = self.row_limit(i, j, dir, 0.0) {
                        let alpha = self.at(i, j).abs();
                        let bv = self.basis[i];
                        let better = alpha > best_alpha
                            || (alpha == best_alpha && leave.is_none_or(|(r, _)| bv < self.basis[r]));
                        if limit <= relaxed && better {
                            best_alpha = alpha;
                            step = limit.max(0.0);
                            leave = Some((i, to_upper));
                        }
                    }
                }
            }
            if !step.is_finite() {
                return Phase::Unbounded;
            }

            for i in 0..self.m {
                let bv = self.basis[i];
                self.value[bv] -= dir * self.at(i, j) * step;
            }
            self.value[j] += dir * step;

            let pivoted = leave.is_some();
            match leave {
                None => {
                    // bound flip
                    self.value[j] = if dir > 0.0 { self.hi[j] } else { self.lo[j] };
                }
                Some((r, to_upper)) => {
                    let out = self.basis[r];
                    self.value[out] = if to_upper { self.hi[out] } else { self.lo[out] };
                    self.pivot(r, j);
                }
            }
            if pivoted {
                self.pivots_since_refactor += 1;
                if self.pivots_since_refactor >= REFACTOR_EVERY {
                    self.refactor();
                    self.pivots_since_refactor = 0;
                }
            }
        }
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let cols = self.cols;
        let p = self.at(r, j);
        for k in 0..cols {
            self.t[r * cols + k] /= p;
        }
        let (before, rest) = self.t.split_at_mut(r * cols);
        let (prow, after) = rest.split_at_mut(cols);
        for row in before.chunks_mut(cols).chain(after.chunks_mut(cols)) {
            let f = row[j];
            if f != 0.0 {
                for k in 0..cols {
                    row[k] -= f * prow[k];
                }
                row[j] = 0.0;
            }
        }
        let f = self.reduced[j];
        if f != 0.0 {
            for k in 0..cols {
                self.reduced[k] -= f * prow[k];
            }
            self.reduced[j] = 0.0;
        }
        let out = self.basis[r];
        self.is_basic[out] = false;
        self.is_basic[j] = true;
        self.basis[r] = j;
    }
}

/// Solves the problem. Returns `Err` only for malformed input; solver
/// outcomes are reported through [`LpSolution::status`].
pub fn solve_lp(problem: &LpProblem) -> Result<LpSolution, LpError> {
    problem.validate()?;
    let n = problem.n_vars();
    let m = problem.n_rows();

    let residual: Vec<f64> = problem
        .rows
        .iter()
        .zip(&problem.rhs)
        .map(|(row, b)| b - row.iter().zip(&problem.lower).map(|(a, l)| a * l).sum::<f64>())
        .collect();
    let art_rows: Vec<usize> = (0..m).filter(|&i| residual[i] > 0.0).collect();
    let p = art_rows.len();
    let cols = n + m + p;

    let mut t = vec![0.0; m * cols];
    let mut orig = vec![0.0; m * cols];
    let mut basis = vec![0; m];
    let mut value = vec![0.0; cols];
    value[..n].copy_from_slice(&problem.lower);
    let mut art_of_row = vec![None; m];
    for (k, &i) in art_rows.iter().enumerate() {
        art_of_row[i] = Some(n + m + k);
    }
    for i in 0..m {
        let o = &mut orig[i * cols..(i + 1) * cols];
        o[..n].copy_from_slice(&problem.rows[i]);
        o[n + i] = -1.0;
        if let Some(a) = art_of_row[i] {
            o[a] = 1.0;
        }
        let row = &mut t[i * cols..(i + 1) * cols];
        match art_of_row[i] {
            // A x - s + art = b, art basic at value r_i
            Some(a) => {
                row[..n].copy_from_slice(&problem.rows[i]);
                row[n + i] = -1.0;
                row[a] = 1.0;
                basis[i] = a;
                value[a] = residual[i];
            }
            // -A x + s = -b, s basic at value -r_i
            None => {
                for (dst, src) in row[..n].iter_mut().zip(&problem.rows[i]) {
                    *dst = -src;
                }
                row[n + i] = 1.0;
                basis[i] = n + i;
                value[n + i] = -residual[i];
            }
        }
    }
    let mut is_basic = vec![false; cols];
    for &b in &basis {
        is_basic[b] = true;
    }
    let mut lo = vec![0.0; cols];
    let mut hi = vec![f64::INFINITY; cols];
    lo[..n].copy_from_slice(&problem.lower);
    hi[..n].copy_from_slice(&problem.upper);

    let mut cost = vec![0.0; cols];
    for c in &mut cost[n + m..] {
        *c = 1.0;
    }
    let max_iterations = 10 * (n + m) * n.max(m);
    let mut tab = Tableau {
        m,
        cols,
        t,
        orig,
        rhs: problem.rhs.clone(),
        basis,
        is_basic,
        value,
        lo,
        hi,
        cost,
        reduced: vec![0.0; cols],
        iterations: 0,
        max_iterations,
        pivots_since_refactor: 0,
    };

    let finish = |tab: &Tableau, status: LpStatus| {
        let x = tab.value[..n].to_vec();
        let value = problem.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        let duals = if status == LpStatus::Optimal {
            (0..m).map(|i| tab.reduced[n + i].max(0.0)).collect()
        } else {
            vec![0.0; m]
        };
        LpSolution {
            status,
            x,
            value,
            iterations: tab.iterations,
            duals,
        }
    };

    if p > 0 {
        tab.price_out();
        match tab.solve_phase() {
            Phase::Optimal => {}
            Phase::IterationLimit => return Ok(finish(&tab, LpStatus::IterationLimit)),
            Phase::Unbounded => return Ok(finish(&tab, LpStatus::Numerical)),
        }
        let scale = 1.0 + problem.rhs.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if tab.objective() > FEAS_TOL * scale {
            return Ok(finish(&tab, LpStatus::Infeasible));
        }
        for k in n + m..cols {
            tab.value[k] = 0.0;
            tab.hi[k] = 0.0;
        }
    }

    for c in &mut tab.cost[n + m..] {
        *c = 0.0;
    }
    tab.cost[..n].copy_from_slice(&problem.objective);
    tab.price_out();
    let status = match tab.solve_phase() {
        Phase::Optimal => LpStatus::Optimal,
        Phase::Unbounded => LpStatus::Unbounded,
        Phase::IterationLimit => LpStatus::IterationLimit,
    };
    let mut sol = finish(&tab, status);
    if status == LpStatus::Optimal {
        // snap round-off back inside the bounds
        for j in 0..n {
            sol.x[j] = sol.x[j].clamp(problem.lower[j], problem.upper[j]);
        }
        sol.value = problem.objective.iter().zip(&sol.x).map(|(c, v)| c * v).sum();
    }
    Ok(sol)
}
