//! Direct symmetric solves: a pivoted dense LDL^T for small systems and a
//! sparse Cholesky (with an LU retry for indefinite matrices, which the
//! moment-fitting quadrature can produce) above the dense cutoff.

use super::FeSystem;
use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};
use thiserror::Error;

/// Systems smaller than this are factored densely.
pub const DENSE_CUTOFF: usize = 2000;
/// Required relative residual of a solve.
pub const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("matrix is singular at pivot {pivot} (|d| = {magnitude:.3e})")]
    Singular { pivot: usize, magnitude: f64 },
    #[error("solve residual {residual:.3e} exceeds {tol:.3e} * |b|")]
    ResidualTooLarge { residual: f64, tol: f64 },
    #[error("sparse factorization failed: {0}")]
    Factorization(String),
}

/// Solution of a linear system together with definiteness diagnostics.
#[derive(Debug, Clone)]
pub struct SolveReport {
    /// Solution over active dofs.
    pub x: Vec<f64>,
    /// True when a nonpositive pivot was met (matrix not positive definite).
    pub indefinite: bool,
    /// First nonpositive pivot index, when one was met.
    pub bad_pivot: Option<usize>,
    /// Final relative residual |Ax - b| / |b|.
    pub residual: f64,
}

/// Direct solve of the assembled symmetric system.
pub fn solve(system: &FeSystem) -> Result<SolveReport, SolveError> {
    let n = system.n_active;
    if n == 0 {
        return Ok(SolveReport { x: Vec::new(), indefinite: false, bad_pivot: None, residual: 0.0 });
    }
    let mut report = if n < DENSE_CUTOFF {
        solve_dense(system)?
    } else {
        solve_sparse(system)?
    };
    let residual = relative_residual(system, &report.x);
    report.residual = residual;
    if residual > RESIDUAL_TOL {
        return Err(SolveError::ResidualTooLarge { residual, tol: RESIDUAL_TOL });
    }
    Ok(report)
}

fn relative_residual(system: &FeSystem, x: &[f64]) -> f64 {
    let n = system.n_active;
    let mut r = system.rhs.clone();
    for &(i, j, v) in &system.entries {
        r[i] -= v * x[j];
    }
    let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    let bn = system.rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    let _ = n;
    rn / bn.max(1e-300)
}

/// Dense LDL^T with symmetric diagonal pivoting; reports the first
/// nonpositive pivot and fails on a vanishing one.
fn solve_dense(system: &FeSystem) -> Result<SolveReport, SolveError> {
    let n = system.n_active;
    let mut a = vec![0.0f64; n * n];
    for &(i, j, v) in &system.entries {
        a[i * n + j] += v;
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut indefinite = false;
    let mut bad_pivot = None;

    let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0f64, f64::max).max(1e-300);
    for k in 0..n {
        // Largest remaining |diagonal| as pivot.
        let (mut pk, mut pmax) = (k, a[perm[k] * n + perm[k]].abs());
        for (idx, &p) in perm.iter().enumerate().skip(k + 1) {
            let cand = a[p * n + p].abs();
            if cand > pmax {
                pk = idx;
                pmax = cand;
            }
        }
        perm.swap(k, pk);
        let pk = perm[k];
        let d = a[pk * n + pk];
        if d.abs() <= 1e-14 * scale {
            return Err(SolveError::Singular { pivot: k, magnitude: d.abs() });
        }
        if d <= 0.0 && !indefinite {
            indefinite = true;
            bad_pivot = Some(k);
        }
        for ii in k + 1..n {
            let pi = perm[ii];
            let lik = a[pi * n + pk] / d;
            if lik == 0.0 {
                continue;
            }
            for jj in ii..n {
                let pj = perm[jj];
                let v = a[pj * n + pk];
                a[pi * n + pj] -= lik * v;
                if pi != pj {
                    a[pj * n + pi] -= lik * v;
                }
            }
            a[pi * n + pk] = lik;
            a[pk * n + pi] = lik;
        }
    }

    // Forward/diagonal/backward substitution in the pivoted order.
    let mut y: Vec<f64> = perm.iter().map(|&p| system.rhs[p]).collect();
    for i in 0..n {
        for j in 0..i {
            y[i] -= a[perm[i] * n + perm[j]] * y[j];
        }
    }
    for (i, yi) in y.iter_mut().enumerate() {
        *yi /= a[perm[i] * n + perm[i]];
    }
    for i in (0..n).rev() {
        for j in i + 1..n {
            let lji = a[perm[j] * n + perm[i]];
            y[i] -= lji * y[j];
        }
    }
    let mut x = vec![0.0; n];
    for (i, &p) in perm.iter().enumerate() {
        x[p] = y[i];
    }
    Ok(SolveReport { x, indefinite, bad_pivot, residual: 0.0 })
}

fn solve_sparse(system: &FeSystem) -> Result<SolveReport, SolveError> {
    let n = system.n_active;
    let triplets: Vec<Triplet<usize, usize, f64>> = system
        .entries
        .iter()
        .map(|&(i, j, v)| Triplet::new(i, j, v))
        .collect();
    let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
        .map_err(|e| SolveError::Factorization(format!("{e:?}")))?;
    let b = Mat::from_fn(n, 1, |i, _| system.rhs[i]);

    match a.sp_cholesky(Side::Lower) {
        Ok(llt) => {
            let x = llt.solve(&b);
            Ok(SolveReport {
                x: (0..n).map(|i| x[(i, 0)]).collect(),
                indefinite: false,
                bad_pivot: None,
                residual: 0.0,
            })
        }
        Err(err) => {
            // Not positive definite: report the pivot and retry with an
            // exact unsymmetric factorization.
            let bad_pivot = pivot_of(&format!("{err:?}"));
            let lu = a
                .sp_lu()
                .map_err(|e| SolveError::Factorization(format!("{e:?}")))?;
            let x = lu.solve(&b);
            Ok(SolveReport {
                x: (0..n).map(|i| x[(i, 0)]).collect(),
                indefinite: true,
                bad_pivot,
                residual: 0.0,
            })
        }
    }
}

/// Extract the pivot index from the factorization error debug string.
fn pivot_of(msg: &str) -> Option<usize> {
    let idx = msg.find("index:")?;
    let rest = &msg[idx + 6..];
    let digits: String = rest.chars().skip_while(|c| !c.is_ascii_digit()).take_while(|c| c.is_ascii_digit()).collect();
    digits.parse().ok()
}

/// Positive definiteness check used by tests: every pivot of the dense
/// factorization is positive (small systems only).
pub fn is_positive_definite(system: &FeSystem) -> bool {
    match solve_dense(system) {
        Ok(r) => !r.indefinite,
        Err(_) => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::FeSystem;

    fn system_from_dense(a: &[Vec<f64>], b: Vec<f64>) -> FeSystem {
        let n = b.len();
        let mut entries = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if a[i][j] != 0.0 {
                    entries.push((i, j, a[i][j]));
                }
            }
        }
        FeSystem {
            n_active: n,
            entries,
            rhs: b,
            active_to_global: (0..n).collect(),
            n_global: n,
            stats: Default::default(),
        }
    }

    #[test]
    fn identity_solve() {
        let n = 7;
        let a: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let b: Vec<f64> = (0..n).map(|i| i as f64 - 2.5).collect();
        let rep = solve(&system_from_dense(&a, b.clone())).unwrap();
        for (x, e) in rep.x.iter().zip(&b) {
            assert!((x - e).abs() < 1e-14);
        }
        assert!(!rep.indefinite);
    }

    #[test]
    fn random_spd_200_meets_residual_contract() {
        // A = M^T M + I with a fixed pseudo-random M.
        let n = 200;
        let mut state = 42u64;
        let mut rand = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let m: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rand()).collect()).collect();
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += m[k][i] * m[k][j];
                }
                a[i][j] = s / n as f64 + if i == j { 1.0 } else { 0.0 };
            }
        }
        let b: Vec<f64> = (0..n).map(|_| rand()).collect();
        let sys = system_from_dense(&a, b);
        let rep = solve(&sys).unwrap();
        assert!(rep.residual <= RESIDUAL_TOL);
        assert!(!rep.indefinite);
        assert!(is_positive_definite(&sys));
    }

    #[test]
    fn indefinite_dense_reported_but_solved() {
        let a = vec![
            vec![-2.0, 1.0, 0.0],
            vec![1.0, 3.0, 0.5],
            vec![0.0, 0.5, 1.0],
        ];
        let sys = system_from_dense(&a, vec![1.0, 2.0, 3.0]);
        let rep = solve(&sys).unwrap();
        assert!(rep.indefinite);
        assert!(rep.residual <= RESIDUAL_TOL);
        assert!(!is_positive_definite(&sys));
    }

    #[test]
    fn singular_matrix_reports_pivot() {
        let a = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        let sys = system_from_dense(&a, vec![1.0, 2.0]);
        match solve(&sys) {
            Err(SolveError::Singular { .. }) => {}
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn sparse_path_spd_tridiagonal() {
        // Above the dense cutoff: -u'' discretization, well conditioned.
        let n = DENSE_CUTOFF + 100;
        let mut entries = Vec::new();
        for i in 0..n {
            entries.push((i, i, 2.0));
            if i + 1 < n {
                entries.push((i, i + 1, -1.0));
                entries.push((i + 1, i, -1.0));
            }
        }
        let sys = FeSystem {
            n_active: n,
            entries,
            rhs: vec![1.0; n],
            active_to_global: (0..n).collect(),
            n_global: n,
            stats: Default::default(),
        };
        let rep = solve(&sys).unwrap();
        assert!(rep.residual <= RESIDUAL_TOL);
        assert!(!rep.indefinite);
    }
}
