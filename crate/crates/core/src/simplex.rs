//! Dense revised simplex for bounded-variable linear programs
//!
//! ```text
//! maximize  c . x   subject to  A x = b,  lower <= x <= upper
//! ```
//!
//! with every structural bound finite. The constraint count is expected to
//! be small (the basis inverse is kept as a dense `m x m` matrix) while the
//! column count may be large. Entering and leaving variables follow Bland's
//! rule over a fixed pseudo-random ordering of the structural columns (any
//! fixed ordering terminates); scanning in input order is slow on inputs
//! sorted by cost, such as per-atom runs of increasing scores.
//!
//! Phase one starts from a caller-chosen bound assignment and drives `m`
//! artificial variables to zero; afterwards the artificials are fixed at
//! zero. Changing costs with [`BoundedSimplex::set_cost`] keeps the current
//! basis primal feasible, so a later [`BoundedSimplex::solve`] warm-starts.

use thiserror::Error;

use crate::scalar::Scalar;
use crate::splitmix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("variable {0} has an empty or infinite box")]
    BadBounds(usize),
    #[error("problem is infeasible (residual {0})")]
    Infeasible(f64),
    #[error("problem is unbounded along variable {0}")]
    Unbounded(usize),
    #[error("basis became singular")]
    Singular,
    #[error("iteration limit {0} reached")]
    IterationLimit(usize),
}

/// Where a variable currently sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarStatus {
    Lower,
    Upper,
    Basic,
}

/// Bounded-variable LP in equality form with a dense, column-major matrix.
#[derive(Debug, Clone)]
pub struct BoundedLp<T> {
    rows: usize,
    columns: Vec<T>,
    rhs: Vec<T>,
    cost: Vec<T>,
    lower: Vec<T>,
    upper: Vec<T>,
}

impl<T: Scalar> BoundedLp<T> {
    /// `columns[j]` is column `j` of `A`, of length `rhs.len()`.
    pub fn new(
        columns: Vec<Vec<T>>,
        rhs: Vec<T>,
        cost: Vec<T>,
        lower: Vec<T>,
        upper: Vec<T>,
    ) -> Result<Self, LpError> {
        let rows = rhs.len();
        let n = columns.len();
        if cost.len() != n || lower.len() != n || upper.len() != n {
            return Err(LpError::Dimension(format!(
                "{n} columns but {} costs, {} lower, {} upper bounds",
                cost.len(),
                lower.len(),
                upper.len()
            )));
        }
        let mut flat = Vec::with_capacity(n * rows);
        for (j, col) in columns.into_iter().enumerate() {
            if col.len() != rows {
                return Err(LpError::Dimension(format!(
                    "column {j} has {} entries, expected {rows}",
                    col.len()
                )));
            }
            flat.extend(col);
        }
        for j in 0..n {
            if !(lower[j] <= upper[j]) || !lower[j].is_finite() || !upper[j].is_finite() {
                return Err(LpError::BadBounds(j));
            }
        }
        Ok(Self {
            rows,
            columns: flat,
            rhs,
            cost,
            lower,
            upper,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cost.len()
    }

    fn column(&self, j: usize) -> &[T] {
        &self.columns[j * self.rows..(j + 1) * self.rows]
    }
}

const REFACTOR_EVERY: usize = 64;

/// Solver state; owns the problem so costs can be updated between solves.
#[derive(Debug, Clone)]
pub struct BoundedSimplex<T> {
    lp: BoundedLp<T>,
    /// Artificial column `i` is `sign[i] * e_i`.
    art_sign: Vec<T>,
    art_upper: Vec<T>,
    status: Vec<VarStatus>,
    x: Vec<T>,
    basis: Vec<usize>,
    /// Row-major basis inverse.
    binv: Vec<T>,
    feasible: bool,
    since_refactor: usize,
    iterations: usize,
    /// Pricing order over all variables and its inverse.
    order: Vec<usize>,
    rank: Vec<usize>,
}

/// Structural columns in hashed order, artificials last.
fn pricing_order(n: usize, m: usize) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&j| (splitmix(j as u64), j));
    order.extend(n..n + m);
    let mut rank = vec![0; n + m];
    for (p, &j) in order.iter().enumerate() {
        rank[j] = p;
    }
    (order, rank)
}

impl<T: Scalar> BoundedSimplex<T> {
    /// Starts every structural variable at a bound: upper where
    /// `at_upper[j]` is set, lower otherwise (or everywhere when `None`).
    pub fn new(lp: BoundedLp<T>, at_upper: Option<&[bool]>) -> Result<Self, LpError> {
        let n = lp.cols();
        let m = lp.rows;
        if let Some(h) = at_upper {
            if h.len() != n {
                return Err(LpError::Dimension(format!("hint has {} entries, expected {n}", h.len())));
            }
        }
        let mut status = Vec::with_capacity(n + m);
        let mut x = Vec::with_capacity(n + m);
        for j in 0..n {
            let up = at_upper.is_some_and(|h| h[j]);
            status.push(if up { VarStatus::Upper } else { VarStatus::Lower });
            x.push(if up { lp.upper[j] } else { lp.lower[j] });
        }
        let mut residual = lp.rhs.clone();
        for (j, &xj) in x.iter().enumerate() {
            if xj != T::zero() {
                for (r, &a) in residual.iter_mut().zip(lp.column(j)) {
                    *r = *r - a * xj;
                }
            }
        }
        let mut art_sign = Vec::with_capacity(m);
        let mut binv = vec![T::zero(); m * m];
        for (i, &r) in residual.iter().enumerate() {
            let s = if r < T::zero() { -T::one() } else { T::one() };
            art_sign.push(s);
            binv[i * m + i] = s;
            status.push(VarStatus::Basic);
            x.push(r.abs());
        }
        let (order, rank) = pricing_order(n, m);
        Ok(Self {
            lp,
            art_sign,
            art_upper: vec![T::infinity(); m],
            status,
            x,
            basis: (n..n + m).collect(),
            binv,
            feasible: false,
            since_refactor: 0,
            iterations: 0,
            order,
            rank,
        })
    }

    pub fn problem(&self) -> &BoundedLp<T> {
        &self.lp
    }

    /// Replaces the objective coefficient of structural variable `j`.
    pub fn set_cost(&mut self, j: usize, c: T) {
        self.lp.cost[j] = c;
    }

    /// Structural variable values.
    pub fn values(&self) -> &[T] {
        &self.x[..self.lp.cols()]
    }

    pub fn status(&self) -> &[VarStatus] {
        &self.status[..self.lp.cols()]
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn objective(&self) -> T {
        self.values()
            .iter()
            .zip(&self.lp.cost)
            .fold(T::zero(), |acc, (&x, &c)| acc + x * c)
    }

    /// Simplex multipliers `y = c_B^T B^{-1}` of the equality rows.
    pub fn duals(&self) -> Vec<T> {
        let cost = |j: usize| self.phase2_cost(j);
        self.multipliers(&cost)
    }

    fn phase1_cost(&self, j: usize) -> T {
        if j >= self.lp.cols() {
            -T::one()
        } else {
            T::zero()
        }
    }

    fn phase2_cost(&self, j: usize) -> T {
        if j >= self.lp.cols() {
            T::zero()
        } else {
            self.lp.cost[j]
        }
    }

    fn lower(&self, j: usize) -> T {
        if j >= self.lp.cols() {
            T::zero()
        } else {
            self.lp.lower[j]
        }
    }

    fn upper(&self, j: usize) -> T {
        let n = self.lp.cols();
        if j >= n {
            self.art_upper[j - n]
        } else {
            self.lp.upper[j]
        }
    }

    /// `a_j . y`
    fn column_dot(&self, j: usize, y: &[T]) -> T {
        let n = self.lp.cols();
        if j >= n {
            self.art_sign[j - n] * y[j - n]
        } else {
            self.lp
                .column(j)
                .iter()
                .zip(y)
                .fold(T::zero(), |acc, (&a, &v)| acc + a * v)
        }
    }

    fn multipliers(&self, cost: &dyn Fn(usize) -> T) -> Vec<T> {
        let m = self.lp.rows;
        let mut y = vec![T::zero(); m];
        for (i, &bi) in self.basis.iter().enumerate() {
            let c = cost(bi);
            if c != T::zero() {
                for (r, yr) in y.iter_mut().enumerate() {
                    *yr = *yr + c * self.binv[i * m + r];
                }
            }
        }
        y
    }

    /// `B^{-1} a_j`
    fn ftran(&self, j: usize) -> Vec<T> {
        let m = self.lp.rows;
        let n = self.lp.cols();
        let mut out = vec![T::zero(); m];
        if j >= n {
            let r = j - n;
            let s = self.art_sign[r];
            for (i, o) in out.iter_mut().enumerate() {
                *o = self.binv[i * m + r] * s;
            }
        } else {
            let col = self.lp.column(j);
            for (i, o) in out.iter_mut().enumerate() {
                let row = &self.binv[i * m..(i + 1) * m];
                *o = row.iter().zip(col).fold(T::zero(), |acc, (&b, &a)| acc + b * a);
            }
        }
        out
    }

    /// Runs phase one (if not done yet) and phase two to optimality.
    pub fn solve(&mut self) -> Result<(), LpError> {
        let n = self.lp.cols();
        if !self.feasible {
            let cost = |j: usize| self.phase1_cost(j);
            let cost: Vec<T> = (0..n + self.lp.rows).map(cost).collect();
            self.iterate(&cost)?;
            let infeasibility = self.x[n..].iter().fold(T::zero(), |acc, &v| acc + v.abs());
            let scale = self
                .lp
                .rhs
                .iter()
                .chain(&self.lp.upper)
                .chain(&self.lp.lower)
                .fold(T::zero(), |acc, &v| acc.max(v.abs()));
            if infeasibility > T::of(T::FEAS_TOL) * scale.max(T::min_positive_value()) {
                return Err(LpError::Infeasible(infeasibility.as_f64()));
            }
            for i in 0..self.lp.rows {
                self.art_upper[i] = T::zero();
                if self.status[n + i] != VarStatus::Basic {
                    self.status[n + i] = VarStatus::Lower;
                }
                self.x[n + i] = T::zero();
            }
            self.feasible = true;
        }
        let cost: Vec<T> = (0..n + self.lp.rows).map(|j| self.phase2_cost(j)).collect();
        self.iterate(&cost)
    }

    fn iterate(&mut self, cost: &[T]) -> Result<(), LpError> {
        let n = self.lp.cols();
        let m = self.lp.rows;
        let total = n + m;
        let limit = 50 * total + 10_000;
        let opt_tol = T::of(T::OPT_TOL);
        let piv_tol = T::of(T::PIVOT_TOL);
        let tie_tol = T::epsilon() * T::of(1024.0);
        let mut local = 0usize;
        // A bound flip leaves the basis, and so the multipliers, unchanged:
        // columns before the flipped one stay non-improving and the scan
        // resumes after it.
        let mut scan_from = 0usize;
        let mut y = self.multipliers(&|j| cost[j]);
        loop {
            if self.since_refactor >= REFACTOR_EVERY {
                self.refactor()?;
                y = self.multipliers(&|j| cost[j]);
                scan_from = 0;
            }

            // Bland: first improving column.
            let mut entering = None;
            for &j in &self.order[scan_from..total] {
                let st = self.status[j];
                if st == VarStatus::Basic || self.upper(j) <= self.lower(j) {
                    continue;
                }
                let d = cost[j] - self.column_dot(j, &y);
                let tol = opt_tol * (T::one() + cost[j].abs());
                if st == VarStatus::Lower && d > tol {
                    entering = Some((j, T::one()));
                    break;
                }
                if st == VarStatus::Upper && d < -tol {
                    entering = Some((j, -T::one()));
                    break;
                }
            }
            let Some((j, dir)) = entering else {
                if scan_from == 0 {
                    return Ok(());
                }
                scan_from = 0;
                continue;
            };

            local += 1;
            if local > limit {
                return Err(LpError::IterationLimit(limit));
            }
            self.iterations += 1;

            let alpha = self.ftran(j);
            // Ratio test; the entering variable's own bound flip competes
            // under its index.
            let mut step = self.upper(j) - self.lower(j);
            let range = if step.is_finite() { step } else { T::zero() };
            let mut leave: Option<(usize, VarStatus)> = None;
            let mut leave_var = j;
            for (i, &a) in alpha.iter().enumerate() {
                let a = a * dir;
                let bi = self.basis[i];
                let (limit_i, dest) = if a > piv_tol {
                    ((self.x[bi] - self.lower(bi)) / a, VarStatus::Lower)
                } else if a < -piv_tol {
                    let up = self.upper(bi);
                    if up.is_infinite() {
                        continue;
                    }
                    ((up - self.x[bi]) / (-a), VarStatus::Upper)
                } else {
                    continue;
                };
                let limit_i = limit_i.max(T::zero());
                // Ratios equal up to rounding count as ties, so that a common
                // rescaling of the bounds cannot change the pivot sequence.
                let tie = if step.is_finite() { tie_tol * (limit_i + step + range) } else { T::zero() };
                if limit_i < step - tie || (limit_i <= step + tie && self.rank[bi] < self.rank[leave_var]) {
                    step = step.min(limit_i);
                    leave = Some((i, dest));
                    leave_var = bi;
                }
            }
            if step.is_infinite() {
                return Err(LpError::Unbounded(j));
            }

            if step != T::zero() {
                self.x[j] = self.x[j] + dir * step;
                for (i, &a) in alpha.iter().enumerate() {
                    let bi = self.basis[i];
                    self.x[bi] = self.x[bi] - dir * step * a;
                }
            }
            match leave {
                None => {
                    // Bound flip.
                    if dir > T::zero() {
                        self.status[j] = VarStatus::Upper;
                        self.x[j] = self.upper(j);
                    } else {
                        self.status[j] = VarStatus::Lower;
                        self.x[j] = self.lower(j);
                    }
                    scan_from = self.rank[j] + 1;
                }
                Some((r, dest)) => {
                    let out = self.basis[r];
                    self.status[out] = dest;
                    self.x[out] = match dest {
                        VarStatus::Upper => self.upper(out),
                        _ => self.lower(out),
                    };
                    self.status[j] = VarStatus::Basic;
                    self.basis[r] = j;
                    self.pivot(r, &alpha);
                    y = self.multipliers(&|j| cost[j]);
                    scan_from = 0;
                }
            }
        }
    }

    fn pivot(&mut self, r: usize, alpha: &[T]) {
        let m = self.lp.rows;
        let p = alpha[r];
        for c in 0..m {
            self.binv[r * m + c] = self.binv[r * m + c] / p;
        }
        for (i, &f) in alpha.iter().enumerate() {
            if i == r || f == T::zero() {
                continue;
            }
            for c in 0..m {
                self.binv[i * m + c] = self.binv[i * m + c] - f * self.binv[r * m + c];
            }
        }
        self.since_refactor += 1;
    }

    /// Re-inverts the basis and recomputes basic values from the nonbasics.
    fn refactor(&mut self) -> Result<(), LpError> {
        let m = self.lp.rows;
        let n = self.lp.cols();
        // Augmented [B | I] Gauss-Jordan with partial pivoting.
        let mut a = vec![T::zero(); m * 2 * m];
        for (c, &bj) in self.basis.iter().enumerate() {
            if bj >= n {
                a[(bj - n) * 2 * m + c] = self.art_sign[bj - n];
            } else {
                for (r, &v) in self.lp.column(bj).iter().enumerate() {
                    a[r * 2 * m + c] = v;
                }
            }
        }
        for r in 0..m {
            a[r * 2 * m + m + r] = T::one();
        }
        for c in 0..m {
            let piv = (c..m)
                .max_by(|&p, &q| {
                    a[p * 2 * m + c]
                        .abs()
                        .partial_cmp(&a[q * 2 * m + c].abs())
                        .expect("finite basis")
                })
                .expect("nonempty");
            if a[piv * 2 * m + c].abs() <= T::epsilon() {
                return Err(LpError::Singular);
            }
            if piv != c {
                for k in 0..2 * m {
                    a.swap(piv * 2 * m + k, c * 2 * m + k);
                }
            }
            let p = a[c * 2 * m + c];
            for k in 0..2 * m {
                a[c * 2 * m + k] = a[c * 2 * m + k] / p;
            }
            for r in 0..m {
                if r == c {
                    continue;
                }
                let f = a[r * 2 * m + c];
                if f != T::zero() {
                    for k in 0..2 * m {
                        a[r * 2 * m + k] = a[r * 2 * m + k] - f * a[c * 2 * m + k];
                    }
                }
            }
        }
        for r in 0..m {
            for c in 0..m {
                self.binv[r * m + c] = a[r * 2 * m + m + c];
            }
        }

        let mut residual = self.lp.rhs.clone();
        for j in 0..n + m {
            if self.status[j] == VarStatus::Basic || self.x[j] == T::zero() {
                continue;
            }
            if j >= n {
                residual[j - n] = residual[j - n] - self.art_sign[j - n] * self.x[j];
            } else {
                for (res, &a) in residual.iter_mut().zip(self.lp.column(j)) {
                    *res = *res - a * self.x[j];
                }
            }
        }
        for i in 0..m {
            let row = &self.binv[i * m..(i + 1) * m];
            let v = row
                .iter()
                .zip(&residual)
                .fold(T::zero(), |acc, (&b, &r)| acc + b * r);
            let bi = self.basis[i];
            self.x[bi] = v;
        }
        self.since_refactor = 0;
        Ok(())
    }

    /// Re-inverts the basis now (useful before reading final values).
    pub fn refresh(&mut self) -> Result<(), LpError> {
        self.refactor()
    }
}
