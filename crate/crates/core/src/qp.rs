//! Convex-QP instance representation and swappable solver backends.
//!
//! Problems are quadratic objectives `(1/2) z' P z + q' z` over linear
//! equality rows `a·z = b` followed by inequality rows `a·z ≤ b`. The primary
//! backend wraps an interior-point conic solver; a self-contained dense
//! operator-splitting backend provides an independent cross-check.

use std::io::Write;

use thiserror::Error;

/// One sparse linear row with its right-hand side.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRow {
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl SparseRow {
    pub fn dot(&self, z: &[f64]) -> f64 {
        self.terms.iter().map(|&(j, c)| c * z[j]).sum()
    }
}

/// Sparse convex quadratic program.
///
/// `p_triplets` holds the upper triangle (row ≤ col) of the symmetric
/// quadratic-term matrix P, duplicates summed.
#[derive(Debug, Clone, Default)]
pub struct QpProblem {
    pub n: usize,
    pub p_triplets: Vec<(usize, usize, f64)>,
    pub q: Vec<f64>,
    pub eq_rows: Vec<SparseRow>,
    pub ineq_rows: Vec<SparseRow>,
}

#[derive(Debug, Error)]
pub enum QpError {
    #[error("column index {col} out of range for {n} variables")]
    ColumnRange { col: usize, n: usize },
    #[error("quadratic triplet ({row},{col}) not in the upper triangle")]
    NotUpperTriangle { row: usize, col: usize },
    #[error("gradient length {got} does not match variable count {n}")]
    GradientLength { got: usize, n: usize },
    #[error("non-finite entry in problem data")]
    NonFinite,
}

impl QpProblem {
    /// Structural validation: index ranges, upper-triangularity, finiteness.
    pub fn validate(&self) -> Result<(), QpError> {
        if self.q.len() != self.n {
            return Err(QpError::GradientLength {
                got: self.q.len(),
                n: self.n,
            });
        }
        for &(r, c, v) in &self.p_triplets {
            if r > c {
                return Err(QpError::NotUpperTriangle { row: r, col: c });
            }
            if c >= self.n {
                return Err(QpError::ColumnRange { col: c, n: self.n });
            }
            if !v.is_finite() {
                return Err(QpError::NonFinite);
            }
        }
        for row in self.eq_rows.iter().chain(&self.ineq_rows) {
            if !row.rhs.is_finite() {
                return Err(QpError::NonFinite);
            }
            for &(j, c) in &row.terms {
                if j >= self.n {
                    return Err(QpError::ColumnRange { col: j, n: self.n });
                }
                if !c.is_finite() {
                    return Err(QpError::NonFinite);
                }
            }
        }
        for &v in &self.q {
            if !v.is_finite() {
                return Err(QpError::NonFinite);
            }
        }
        Ok(())
    }

    /// Objective `(1/2) z' P z + q' z` (P symmetric, stored upper).
    pub fn objective_at(&self, z: &[f64]) -> f64 {
        let mut quad = 0.0;
        for &(r, c, v) in &self.p_triplets {
            if r == c {
                quad += v * z[r] * z[c];
            } else {
                quad += 2.0 * v * z[r] * z[c];
            }
        }
        0.5 * quad + self.q.iter().zip(z).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Largest absolute equality residual at `z`.
    pub fn equality_residual_inf(&self, z: &[f64]) -> f64 {
        self.eq_rows
            .iter()
            .map(|r| (r.dot(z) - r.rhs).abs())
            .fold(0.0, f64::max)
    }

    /// Largest inequality violation (`max(a·z − b, 0)`) at `z`.
    pub fn inequality_violation_inf(&self, z: &[f64]) -> f64 {
        self.ineq_rows
            .iter()
            .map(|r| (r.dot(z) - r.rhs).max(0.0))
            .fold(0.0, f64::max)
    }

    /// Plain-text dump: variable count, objective triplets, then one line per
    /// constraint row. Stable, greppable, diffable.
    pub fn dump_text(&self, out: &mut dyn Write) -> std::io::Result<()> {
        writeln!(
            out,
            "qp n={} eq={} ineq={}",
            self.n,
            self.eq_rows.len(),
            self.ineq_rows.len()
        )?;
        for &(r, c, v) in &self.p_triplets {
            writeln!(out, "P {r} {c} {v:.17e}")?;
        }
        for (j, &v) in self.q.iter().enumerate() {
            if v != 0.0 {
                writeln!(out, "q {j} {v:.17e}")?;
            }
        }
        for (tag, rows) in [("eq", &self.eq_rows), ("ineq", &self.ineq_rows)] {
            for (i, row) in rows.iter().enumerate() {
                write!(out, "{tag} {i} rhs {:.17e}", row.rhs)?;
                for &(j, c) in &row.terms {
                    write!(out, " {j}:{c:.17e}")?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }
}

/// Backend verdict on a QP instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

/// Primal result of a backend run.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub status: QpStatus,
    pub primal: Vec<f64>,
    /// Objective reported by the backend (excludes any constant terms the
    /// caller tracks separately).
    pub objective: f64,
    pub iterations: usize,
}

/// A swappable convex-QP solver.
pub trait QpBackend: Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, problem: &QpProblem) -> QpSolution;
}

// ─────────────────────────────────────────────────────────────────────────────
// CSC assembly helper
// ─────────────────────────────────────────────────────────────────────────────

/// Builds column-compressed storage from (row, col, value) triplets,
/// accumulating duplicates.
fn csc_from_triplets(
    m: usize,
    n: usize,
    triplets: &[(usize, usize, f64)],
) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
    let mut sorted: Vec<(usize, usize, f64)> = triplets
        .iter()
        .copied()
        .filter(|&(_, _, v)| v != 0.0)
        .collect();
    sorted.sort_by_key(|&(r, c, _)| (c, r));
    let mut colptr = vec![0usize; n + 1];
    let mut rowind: Vec<usize> = Vec::with_capacity(sorted.len());
    let mut nzval: Vec<f64> = Vec::with_capacity(sorted.len());
    let mut last = None;
    for (r, c, v) in sorted {
        debug_assert!(r < m && c < n);
        if last == Some((c, r)) {
            *nzval.last_mut().unwrap() += v;
        } else {
            colptr[c + 1] += 1;
            rowind.push(r);
            nzval.push(v);
            last = Some((c, r));
        }
    }
    for c in 0..n {
        colptr[c + 1] += colptr[c];
    }
    (colptr, rowind, nzval)
}

// ─────────────────────────────────────────────────────────────────────────────
// Interior-point backend
// ─────────────────────────────────────────────────────────────────────────────

/// Interior-point conic backend (primary).
#[derive(Debug, Clone)]
pub struct InteriorPointBackend {
    /// Feasibility tolerance for the scaled problem.
    pub feasibility_tol: f64,
    pub max_iter: u32,
}

impl Default for InteriorPointBackend {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-8,
            max_iter: 200,
        }
    }
}

impl QpBackend for InteriorPointBackend {
    fn name(&self) -> &'static str {
        "interior-point"
    }

    fn solve(&self, problem: &QpProblem) -> QpSolution {
        use clarabel::algebra::CscMatrix;
        use clarabel::solver::{
            DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
        };

        let n = problem.n;
        let m_eq = problem.eq_rows.len();
        let m_ineq = problem.ineq_rows.len();
        let m = m_eq + m_ineq;

        let (pc, pr, pv) = csc_from_triplets(n, n, &problem.p_triplets);
        let p = CscMatrix::new(n, n, pc, pr, pv);

        let mut a_triplets = Vec::new();
        let mut b = Vec::with_capacity(m);
        for (i, row) in problem.eq_rows.iter().chain(&problem.ineq_rows).enumerate() {
            for &(j, c) in &row.terms {
                a_triplets.push((i, j, c));
            }
            b.push(row.rhs);
        }
        let (ac, ar, av) = csc_from_triplets(m, n, &a_triplets);
        let a = CscMatrix::new(m, n, ac, ar, av);

        let cones = [
            SupportedConeT::ZeroConeT(m_eq),
            SupportedConeT::NonnegativeConeT(m_ineq),
        ];
        let settings = DefaultSettings {
            verbose: false,
            max_iter: self.max_iter,
            tol_feas: self.feasibility_tol,
            ..DefaultSettings::default()
        };
        let mut solver = match DefaultSolver::new(&p, &problem.q, &a, &b, &cones, settings) {
            Ok(s) => s,
            Err(_) => {
                return QpSolution {
                    status: QpStatus::NumericalFailure,
                    primal: vec![0.0; n],
                    objective: f64::NAN,
                    iterations: 0,
                }
            }
        };
        solver.solve();
        let status = match solver.solution.status {
            SolverStatus::Solved => QpStatus::Optimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                QpStatus::Infeasible
            }
            _ => QpStatus::NumericalFailure,
        };
        QpSolution {
            status,
            primal: solver.solution.x.clone(),
            objective: solver.solution.obj_val,
            iterations: solver.solution.iterations as usize,
        }
    }
}

// ─────────────────────────────────────────────────────────────────────────────
// Dense operator-splitting backend
// ─────────────────────────────────────────────────────────────────────────────

/// Self-contained dense ADMM backend used to cross-check the primary solver
/// on small instances. Splitting form: minimize the objective subject to
/// `l ≤ M z ≤ u` with equality rows encoded as `l = u`.
#[derive(Debug, Clone)]
pub struct DenseSplittingBackend {
    pub max_iter: usize,
    pub eps_abs: f64,
    pub eps_rel: f64,
}

impl Default for DenseSplittingBackend {
    fn default() -> Self {
        Self {
            max_iter: 200_000,
            eps_abs: 1e-10,
            eps_rel: 1e-10,
        }
    }
}

impl QpBackend for DenseSplittingBackend {
    fn name(&self) -> &'static str {
        "dense-splitting"
    }

    fn solve(&self, problem: &QpProblem) -> QpSolution {
        use nalgebra::{DMatrix, DVector};

        const SIGMA: f64 = 1e-6;
        const ALPHA: f64 = 1.6;
        const RHO_EQ_FACTOR: f64 = 1e3;
        const INF: f64 = 1e30;

        let n = problem.n;
        let m_eq = problem.eq_rows.len();
        let m = m_eq + problem.ineq_rows.len();

        // Dense constraint matrix and bounds.
        let mut mat = DMatrix::<f64>::zeros(m, n);
        let mut lower = DVector::from_element(m, -INF);
        let mut upper = DVector::zeros(m);
        for (i, row) in problem.eq_rows.iter().chain(&problem.ineq_rows).enumerate() {
            for &(j, c) in &row.terms {
                mat[(i, j)] += c;
            }
            upper[i] = row.rhs;
            if i < m_eq {
                lower[i] = row.rhs;
            }
        }

        // Dense symmetric P from the upper triangle.
        let mut pmat = DMatrix::<f64>::zeros(n, n);
        for &(r, c, v) in &problem.p_triplets {
            pmat[(r, c)] += v;
            if r != c {
                pmat[(c, r)] += v;
            }
        }
        let q = DVector::from_column_slice(&problem.q);

        let mut rho = vec![0.1; m];
        for r in rho.iter_mut().take(m_eq) {
            *r *= RHO_EQ_FACTOR;
        }

        let factor = |rho: &[f64]| {
            let mut kkt = pmat.clone();
            for i in 0..n {
                kkt[(i, i)] += SIGMA;
            }
            for (i, &ri) in rho.iter().enumerate() {
                let row = mat.row(i);
                // kkt += rho_i * a_i' a_i
                for p_col in 0..n {
                    let ap = row[p_col];
                    if ap == 0.0 {
                        continue;
                    }
                    for p_row in 0..n {
                        let aq = row[p_row];
                        if aq != 0.0 {
                            kkt[(p_row, p_col)] += ri * ap * aq;
                        }
                    }
                }
            }
            kkt.cholesky()
        };

        let Some(mut chol) = factor(&rho) else {
            return QpSolution {
                status: QpStatus::NumericalFailure,
                primal: vec![0.0; n],
                objective: f64::NAN,
                iterations: 0,
            };
        };

        let mut z = DVector::<f64>::zeros(n);
        let mut zeta = DVector::<f64>::zeros(m);
        let mut y = DVector::<f64>::zeros(m);
        let mut iterations = 0;

        for iter in 0..self.max_iter {
            iterations = iter + 1;
            // z-update via the regularized KKT system.
            let mut rhs = SIGMA * &z - &q;
            let scaled: DVector<f64> = DVector::from_iterator(
                m,
                (0..m).map(|i| rho[i] * zeta[i] - y[i]),
            );
            rhs += mat.transpose() * scaled;
            let z_tilde = chol.solve(&rhs);
            let zeta_tilde = &mat * &z_tilde;

            let z_next = ALPHA * &z_tilde + (1.0 - ALPHA) * &z;
            let mut zeta_next = DVector::<f64>::zeros(m);
            for i in 0..m {
                let relaxed = ALPHA * zeta_tilde[i] + (1.0 - ALPHA) * zeta[i];
                let unproj = relaxed + y[i] / rho[i];
                zeta_next[i] = unproj.clamp(lower[i], upper[i]);
                y[i] += rho[i] * (relaxed - zeta_next[i]);
            }
            z = z_next;
            zeta = zeta_next;

            if iter % 25 == 24 {
                let mz = &mat * &z;
                let pri_res = (0..m)
                    .map(|i| (mz[i] - zeta[i]).abs())
                    .fold(0.0, f64::max);
                let pz = &pmat * &z;
                let aty = mat.transpose() * &y;
                let dua_res = (0..n)
                    .map(|i| (pz[i] + q[i] + aty[i]).abs())
                    .fold(0.0, f64::max);

                let pri_scale = mz.amax().max(zeta.amax()).max(1.0);
                let dua_scale = pz.amax().max(q.amax()).max(aty.amax()).max(1.0);
                if pri_res <= self.eps_abs + self.eps_rel * pri_scale
                    && dua_res <= self.eps_abs + self.eps_rel * dua_scale
                {
                    break;
                }

                // Residual-balancing step-size adaptation with refactorize.
                let ratio = ((pri_res / pri_scale) / (dua_res / dua_scale).max(1e-300)).sqrt();
                if ratio > 5.0 || ratio < 0.2 {
                    let scale = ratio.clamp(1e-4, 1e4);
                    for r in rho.iter_mut() {
                        *r = (*r * scale).clamp(1e-8, 1e8);
                    }
                    match factor(&rho) {
                        Some(f) => chol = f,
                        None => {
                            return QpSolution {
                                status: QpStatus::NumericalFailure,
                                primal: z.iter().copied().collect(),
                                objective: f64::NAN,
                                iterations,
                            }
                        }
                    }
                }
            }
        }

        let primal: Vec<f64> = z.iter().copied().collect();
        let mz = &mat * &z;
        let pri_res = (0..m).map(|i| (mz[i] - zeta[i]).abs()).fold(0.0, f64::max);
        let status = if pri_res.is_finite() && pri_res < 1e-6 {
            QpStatus::Optimal
        } else {
            QpStatus::NumericalFailure
        };
        let objective = problem.objective_at(&primal);
        QpSolution {
            status,
            primal,
            objective,
            iterations,
        }
    }
}
