//! Augmented weighted pinball quantile regression over group indicators.
//!
//! The estimator minimizes
//!
//! ```text
//! sum_e  w_e * pinball_alpha(beta . phi_e, s_e)
//! ```
//!
//! over `beta` in `R^|G|`, where the entries `e` are calibration entries
//! plus one test entry. The primal LP (free `beta`, slack pairs `p_e, q_e`)
//! has the bounded dual
//!
//! ```text
//! maximize  sum_e eta_e s_e
//! s.t.      sum_e eta_e phi_e = 0,   -w_e alpha <= eta_e <= w_e (1 - alpha)
//! ```
//!
//! which has only `|G|` equality rows. It is solved with the bounded simplex
//! in [`crate::simplex`]; `beta` is read off as the simplex multipliers of the
//! coupling rows and the primal objective is evaluated directly from it, so
//! the duality gap is an independent check.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::federation::Coreset;
use crate::groups::MembershipVector;
use crate::scalar::Scalar;
use crate::simplex::{BoundedLp, BoundedSimplex, LpError, VarStatus};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QrError {
    #[error("alpha {0} outside (0, 1)")]
    InvalidAlpha(f64),
    #[error("dimension mismatch: expected {expected}, entry {entry} has {got}")]
    DimensionMismatch {
        expected: usize,
        entry: usize,
        got: usize,
    },
    #[error("no calibration entries")]
    Empty,
    #[error("entry {0} has a nonpositive or nonfinite weight")]
    BadWeight(usize),
    #[error("entry {0} has a nonfinite score")]
    BadScore(usize),
    #[error("group {group} has no calibration mass")]
    DegenerateGroup { group: usize },
    #[error("quantile regression is infeasible")]
    Infeasible,
    #[error("solver failure: {0}")]
    Solver(LpError),
    #[error("duality gap {gap:e} exceeds tolerance")]
    DualityGap { gap: f64 },
    #[error("solution is not optimal")]
    NotOptimal,
}

impl From<LpError> for QrError {
    fn from(e: LpError) -> Self {
        match e {
            LpError::Infeasible(_) => QrError::Infeasible,
            other => QrError::Solver(other),
        }
    }
}

/// Pinball loss at level `1 - alpha`.
pub fn pinball_loss<T: Scalar>(theta: T, s: T, alpha: T) -> Result<T, QrError> {
    check_alpha(alpha)?;
    Ok(pinball_unchecked(theta, s, alpha))
}

#[inline]
fn pinball_unchecked<T: Scalar>(theta: T, s: T, alpha: T) -> T {
    if s >= theta {
        (T::one() - alpha) * (s - theta)
    } else {
        alpha * (theta - s)
    }
}

fn check_alpha<T: Scalar>(alpha: T) -> Result<(), QrError> {
    if alpha > T::zero() && alpha < T::one() {
        Ok(())
    } else {
        Err(QrError::InvalidAlpha(alpha.as_f64()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QrEntry<T> {
    pub feature: MembershipVector,
    pub score: T,
    pub weight: T,
    pub is_test: bool,
}

impl<T> QrEntry<T> {
    pub fn calibration(feature: MembershipVector, score: T, weight: T) -> Self {
        Self {
            feature,
            score,
            weight,
            is_test: false,
        }
    }

    pub fn test(feature: MembershipVector, score: T, weight: T) -> Self {
        Self {
            feature,
            score,
            weight,
            is_test: true,
        }
    }
}

/// Calibration entries followed by exactly one test entry.
#[derive(Debug, Clone, PartialEq)]
pub struct QrProblem<T> {
    entries: Vec<QrEntry<T>>,
    alpha: T,
    dimension: usize,
}

impl<T: Scalar> QrProblem<T> {
    pub fn new(
        calibration: Vec<QrEntry<T>>,
        test: QrEntry<T>,
        alpha: T,
    ) -> Result<Self, QrError> {
        check_alpha(alpha)?;
        if calibration.is_empty() {
            return Err(QrError::Empty);
        }
        let dimension = test.feature.len();
        let mut entries = calibration;
        for e in &mut entries {
            e.is_test = false;
        }
        entries.push(QrEntry { is_test: true, ..test });
        for (i, e) in entries.iter().enumerate() {
            if e.feature.len() != dimension {
                return Err(QrError::DimensionMismatch {
                    expected: dimension,
                    entry: i,
                    got: e.feature.len(),
                });
            }
            if !(e.weight > T::zero()) || !e.weight.is_finite() {
                return Err(QrError::BadWeight(i));
            }
            if !e.score.is_finite() {
                return Err(QrError::BadScore(i));
            }
        }
        Ok(Self {
            entries,
            alpha,
            dimension,
        })
    }

    pub fn entries(&self) -> &[QrEntry<T>] {
        &self.entries
    }

    pub fn calibration(&self) -> &[QrEntry<T>] {
        &self.entries[..self.entries.len() - 1]
    }

    pub fn test_entry(&self) -> &QrEntry<T> {
        &self.entries[self.entries.len() - 1]
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Same problem with a different hypothesized test score.
    pub fn with_test_score(&self, score: T) -> Self {
        let mut p = self.clone();
        let last = p.entries.len() - 1;
        p.entries[last].score = score;
        p
    }

    /// First group whose calibration entries carry no weight.
    pub fn degenerate_group(&self) -> Option<usize> {
        (0..self.dimension).find(|&g| {
            !self
                .calibration()
                .iter()
                .any(|e| e.feature.get(g) && e.weight > T::zero())
        })
    }

    /// Objective `sum_e w_e pinball(beta . phi_e, s_e)`.
    pub fn objective(&self, beta: &[T]) -> T {
        self.entries.iter().fold(T::zero(), |acc, e| {
            acc + e.weight * pinball_unchecked(e.feature.dot(beta), e.score, self.alpha)
        })
    }
}

/// One entry per coreset triple plus the test entry.
pub fn assemble_problem<T: Scalar>(
    coreset: &Coreset<T>,
    test_feature: MembershipVector,
    test_score: T,
    test_weight: T,
    alpha: T,
) -> Result<QrProblem<T>, QrError> {
    if coreset.entries().is_empty() {
        return Err(QrError::Empty);
    }
    let calibration = coreset
        .entries()
        .iter()
        .map(|e| QrEntry::calibration(e.atom_feature().clone(), e.mean_score, e.weight))
        .collect();
    QrProblem::new(calibration, QrEntry::test(test_feature, test_score, test_weight), alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    /// Solved although the given group has no calibration mass.
    DegenerateGroup(usize),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolveOptions {
    pub allow_degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QrSolution<T> {
    pub beta: Vec<T>,
    pub primal_objective: T,
    pub dual_objective: T,
    /// Dual value per calibration entry.
    pub eta: Vec<T>,
    pub eta_test: T,
    pub status: SolveStatus,
    /// `max_g |sum_e eta_e phi_e[g]|`.
    pub coupling_residual: T,
    pub test_weight: T,
    pub alpha: T,
}

impl<T: Scalar> QrSolution<T> {
    pub fn duality_gap(&self) -> T {
        (self.primal_objective - self.dual_objective).abs()
    }

    /// `beta . phi`.
    pub fn fitted(&self, feature: &MembershipVector) -> T {
        feature.dot(&self.beta)
    }
}

/// Dual value of the test entry.
pub fn eta_test<T: Scalar>(solution: &QrSolution<T>) -> Result<T, QrError> {
    match solution.status {
        SolveStatus::Optimal => Ok(solution.eta_test),
        SolveStatus::DegenerateGroup(_) => Err(QrError::NotOptimal),
    }
}

pub fn solve<T: Scalar>(problem: &QrProblem<T>) -> Result<QrSolution<T>, QrError> {
    solve_with(problem, SolveOptions::default())
}

pub fn solve_with<T: Scalar>(
    problem: &QrProblem<T>,
    options: SolveOptions,
) -> Result<QrSolution<T>, QrError> {
    let mut solver = QrSolver::new(problem.clone(), options, None)?;
    solver.solve()
}

/// Initial bound assignment: a calibration entry starts at its upper bound
/// when it scores above the weighted `1 - alpha` quantile of its own
/// membership pattern, which is where the fit tends to land.
fn crash_hint<T: Scalar>(problem: &QrProblem<T>) -> Vec<bool> {
    let cal = problem.calibration();
    let mut by_pattern: BTreeMap<&MembershipVector, Vec<usize>> = BTreeMap::new();
    for (i, e) in cal.iter().enumerate() {
        by_pattern.entry(&e.feature).or_default().push(i);
    }
    let mut hint = vec![false; cal.len() + 1];
    for mut idx in by_pattern.into_values() {
        idx.sort_by(|&a, &b| cal[a].score.partial_cmp(&cal[b].score).expect("finite"));
        let total = idx.iter().fold(T::zero(), |acc, &i| acc + cal[i].weight);
        let target = (T::one() - problem.alpha) * total;
        let mut cum = T::zero();
        let mut threshold = cal[idx[idx.len() - 1]].score;
        for &i in &idx {
            cum = cum + cal[i].weight;
            if cum >= target {
                threshold = cal[i].score;
                break;
            }
        }
        for &i in &idx {
            hint[i] = cal[i].score > threshold;
        }
    }
    hint
}

/// Reusable solver for one calibration set and test feature; the test score
/// can be changed between solves and the previous basis is reused.
#[derive(Debug, Clone)]
pub struct QrSolver<T> {
    problem: QrProblem<T>,
    options: SolveOptions,
    degenerate: Option<usize>,
    simplex: BoundedSimplex<T>,
}

impl<T: Scalar> QrSolver<T> {
    /// `hint[e]` starts entry `e` at its upper dual bound; defaults to a
    /// quantile-based crash.
    pub fn new(
        problem: QrProblem<T>,
        options: SolveOptions,
        hint: Option<&[bool]>,
    ) -> Result<Self, QrError> {
        let degenerate = problem.degenerate_group();
        if let (Some(group), false) = (degenerate, options.allow_degenerate) {
            return Err(QrError::DegenerateGroup { group });
        }
        let alpha = problem.alpha;
        let d = problem.dimension;
        let n = problem.entries.len();
        let mut columns = Vec::with_capacity(n);
        let mut cost = Vec::with_capacity(n);
        let mut lower = Vec::with_capacity(n);
        let mut upper = Vec::with_capacity(n);
        for e in &problem.entries {
            columns.push(
                e.feature
                    .bits()
                    .iter()
                    .map(|&b| if b { T::one() } else { T::zero() })
                    .collect(),
            );
            cost.push(e.score);
            lower.push(-e.weight * alpha);
            upper.push(e.weight * (T::one() - alpha));
        }
        let lp = BoundedLp::new(columns, vec![T::zero(); d], cost, lower, upper)?;
        let crash;
        let hint = match hint {
            Some(h) => h,
            None => {
                crash = crash_hint(&problem);
                &crash
            }
        };
        let simplex = BoundedSimplex::new(lp, Some(hint))?;
        Ok(Self {
            problem,
            options,
            degenerate,
            simplex,
        })
    }

    pub fn problem(&self) -> &QrProblem<T> {
        &self.problem
    }

    /// Simplex pivots performed so far, across all solves.
    pub fn pivots(&self) -> usize {
        self.simplex.iterations()
    }

    pub fn set_test_score(&mut self, score: T) {
        let last = self.problem.entries.len() - 1;
        self.problem.entries[last].score = score;
        self.simplex.set_cost(last, score);
    }

    /// Bound assignment of the current basis, usable as a hint for a
    /// related problem.
    pub fn bound_hint(&self) -> Vec<bool> {
        self.simplex
            .status()
            .iter()
            .zip(self.simplex.values())
            .zip(&self.problem.entries)
            .map(|((st, &v), e)| match st {
                VarStatus::Upper => true,
                VarStatus::Lower => false,
                VarStatus::Basic => {
                    let lo = -e.weight * self.problem.alpha;
                    let hi = e.weight * (T::one() - self.problem.alpha);
                    (hi - v) < (v - lo)
                }
            })
            .collect()
    }

    pub fn solve(&mut self) -> Result<QrSolution<T>, QrError> {
        self.simplex.solve()?;
        self.simplex.refresh()?;
        let p = &self.problem;
        let beta = self.simplex.duals();
        let eta_all = self.simplex.values().to_vec();
        let primal = p.objective(&beta);
        let dual = p
            .entries
            .iter()
            .zip(&eta_all)
            .fold(T::zero(), |acc, (e, &eta)| acc + eta * e.score);
        let mut coupling = vec![T::zero(); p.dimension];
        for (e, &eta) in p.entries.iter().zip(&eta_all) {
            for (g, c) in coupling.iter_mut().enumerate() {
                if e.feature.get(g) {
                    *c = *c + eta;
                }
            }
        }
        let coupling_residual = coupling.iter().fold(T::zero(), |acc, c| acc.max(c.abs()));
        let gap = (primal - dual).abs();
        if gap > T::of(10.0 * T::FEAS_TOL) * (T::one() + primal.abs()) {
            return Err(QrError::DualityGap { gap: gap.as_f64() });
        }
        let status = match self.degenerate {
            Some(g) if self.options.allow_degenerate => SolveStatus::DegenerateGroup(g),
            _ => SolveStatus::Optimal,
        };
        let eta_test = eta_all[eta_all.len() - 1];
        let mut eta = eta_all;
        eta.pop();
        Ok(QrSolution {
            beta,
            primal_objective: primal,
            dual_objective: dual,
            eta,
            eta_test,
            status,
            coupling_residual,
            test_weight: p.test_entry().weight,
            alpha: p.alpha,
        })
    }
}
