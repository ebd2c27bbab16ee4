//! Dense reference routines built on nalgebra.
//!
//! These are the independent oracles the test suite compares the streaming
//! kernels against (pseudo-inverse solves, generalized eigenvalues, exact
//! leverage scores, fixed-point Lewis weights) plus the dense mirror's
//! helpers. Nothing here is used on the streaming fast path.

use nalgebra::{DMatrix, DVector};

use crate::linalg::Sparsifier;
use crate::stream::EdgeRecord;

/// Dense Laplacian of a weighted edge list.
pub fn laplacian_dense(n: usize, edges: &[(usize, usize, f64)]) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(n, n);
    for &(t, h, w) in edges {
        l[(t, t)] += w;
        l[(h, h)] += w;
        l[(t, h)] -= w;
        l[(h, t)] -= w;
    }
    l
}

pub fn laplacian_of(sp: &Sparsifier) -> DMatrix<f64> {
    let mut l = laplacian_dense(sp.n, &sp.edges);
    if let Some(z) = sp.grounded {
        for i in 0..sp.n {
            l[(z, i)] = 0.0;
            l[(i, z)] = 0.0;
        }
        l[(z, z)] = 1.0;
    }
    l
}

/// Moore-Penrose pseudo-inverse solve via SVD (tolerance on singular values).
pub fn pinv_solve(a: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let tol = max_sv * 1e-12 * a.nrows() as f64;
    svd.solve(rhs, tol).expect("svd solve")
}

/// Weighted incidence matrix B with row e = d_e (chi_head - chi_tail).
pub fn weighted_incidence(n: usize, edges: &[EdgeRecord], d: &[f64]) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(edges.len(), n);
    for (i, e) in edges.iter().enumerate() {
        b[(i, e.head)] = d[i];
        b[(i, e.tail)] = -d[i];
    }
    b
}

/// Exact leverage scores diag(B (B^T B)^+ B^T).
pub fn leverage_scores(b: &DMatrix<f64>) -> Vec<f64> {
    let gram = b.transpose() * b;
    let svd = gram.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let tol = max_sv * 1e-12 * gram.nrows() as f64;
    let pinv = svd.pseudo_inverse(tol).expect("pinv");
    (0..b.nrows())
        .map(|i| {
            let row = b.row(i).transpose();
            (row.transpose() * &pinv * &row)[(0, 0)]
        })
        .collect()
}

/// Generalized eigenvalues of (L_h, L_g) restricted to the common range of
/// L_g: eigenvalues of pinv_sqrt(L_g) L_h pinv_sqrt(L_g) on that range.
pub fn generalized_eigenvalues(l_h: &DMatrix<f64>, l_g: &DMatrix<f64>) -> Vec<f64> {
    let eig = l_g.clone().symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let tol = max_ev * 1e-10 * l_g.nrows() as f64;
    // Columns of V spanning the range, scaled by 1/sqrt(lambda).
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > tol)
        .collect();
    let mut basis = DMatrix::zeros(l_g.nrows(), keep.len());
    for (j, &i) in keep.iter().enumerate() {
        let scale = 1.0 / eig.eigenvalues[i].sqrt();
        basis.set_column(j, &(eig.eigenvectors.column(i) * scale));
    }
    let reduced = basis.transpose() * l_h * &basis;
    reduced.symmetric_eigen().eigenvalues.iter().cloned().collect()
}

/// min c^T x subject to A x = b, x >= 0, by dense two-phase primal simplex
/// with Bland's rule (no cycling). Returns (optimum, x). Small instances
/// only; this is a verification oracle, not a production solver.
pub fn simplex_min(
    a: &DMatrix<f64>,
    b: &[f64],
    c: &[f64],
) -> crate::Result<(f64, Vec<f64>)> {
    use crate::Error;
    let (m, n) = (a.nrows(), a.ncols());
    assert_eq!(b.len(), m);
    assert_eq!(c.len(), n);
    let tol = 1e-9;
    // Tableau with artificial columns: m rows x (n + m + 1); rows flipped so
    // the right-hand side is nonnegative. Basis starts as the artificials.
    let mut t = vec![vec![0.0; n + m + 1]; m];
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[i][j] = sign * a[(i, j)];
        }
        t[i][n + i] = 1.0;
        t[i][n + m] = sign * b[i];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    let run = |t: &mut Vec<Vec<f64>>,
                   basis: &mut Vec<usize>,
                   cost: &[f64],
                   allowed: usize|
     -> crate::Result<f64> {
        loop {
            // Reduced costs r_j = c_j - c_B^T column_j; Bland: first j with
            // r_j < -tol enters.
            let mut enter = None;
            for j in 0..allowed {
                if basis.contains(&j) {
                    continue;
                }
                let mut r = cost[j];
                for i in 0..t.len() {
                    r -= cost[basis[i]] * t[i][j];
                }
                if r < -tol {
                    enter = Some(j);
                    break;
                }
            }
            let Some(j) = enter else {
                let mut z = 0.0;
                for i in 0..t.len() {
                    z += cost[basis[i]] * t[i][n + m];
                }
                return Ok(z);
            };
            // Ratio test; ties broken by smallest basis variable (Bland).
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..t.len() {
                if t[i][j] > tol {
                    let ratio = t[i][n + m] / t[i][j];
                    let better = match leave {
                        None => true,
                        Some((li, lr)) => {
                            ratio < lr - tol || (ratio < lr + tol && basis[i] < basis[li])
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            let Some((li, _)) = leave else {
                return Err(Error::Validation("lp unbounded".into()));
            };
            let piv = t[li][j];
            for v in t[li].iter_mut() {
                *v /= piv;
            }
            for i in 0..t.len() {
                if i != li && t[i][j].abs() > 0.0 {
                    let f = t[i][j];
                    for k in 0..=n + m {
                        t[i][k] -= f * t[li][k];
                    }
                }
            }
            basis[li] = j;
        }
    };
    // Phase 1: minimize the sum of artificials.
    let mut phase1 = vec![0.0; n + m];
    for v in phase1.iter_mut().skip(n) {
        *v = 1.0;
    }
    let z1 = run(&mut t, &mut basis, &phase1, n + m)?;
    if z1 > 1e-7 {
        return Err(Error::Infeasible(format!("lp phase-1 optimum {z1:.3e}")));
    }
    // Drive leftover artificials (basic at level 0) out of the basis; with
    // zero phase-2 cost they could otherwise drift positive and break
    // A x = b. A row with no real pivot entry is redundant: zero it.
    for li in 0..m {
        if basis[li] < n {
            continue;
        }
        let pivot_col = (0..n).find(|&j| t[li][j].abs() > 1e-7 && !basis.contains(&j));
        match pivot_col {
            Some(j) => {
                let piv = t[li][j];
                for v in t[li].iter_mut() {
                    *v /= piv;
                }
                let row = t[li].clone();
                for (i, trow) in t.iter_mut().enumerate() {
                    if i != li && trow[j].abs() > 0.0 {
                        let f = trow[j];
                        for (k, rv) in row.iter().enumerate() {
                            trow[k] -= f * rv;
                        }
                    }
                }
                basis[li] = j;
            }
            None => {
                for v in t[li].iter_mut() {
                    *v = 0.0;
                }
            }
        }
    }
    // Phase 2: original costs; artificials can never re-enter.
    let mut phase2 = vec![0.0; n + m];
    phase2[..n].copy_from_slice(c);
    let z2 = run(&mut t, &mut basis, &phase2, n)?;
    let mut x = vec![0.0; n];
    for (i, &bi) in basis.iter().enumerate() {
        if bi < n {
            x[bi] = t[i][n + m];
        }
    }
    Ok((z2, x))
}

/// LP relaxation of min-cost flow: variables (x_e, slack_e) with
/// x_e + slack_e = u_e and per-vertex conservation, solved by `simplex_min`.
/// Independent of the combinatorial oracle in every way except the input.
pub fn lp_min_cost_flow(
    n: usize,
    edges: &[(usize, usize, f64, f64)], // (tail, head, cost, capacity)
    demand: &[i64],
) -> crate::Result<f64> {
    let m = edges.len();
    let rows = n + m;
    let cols = 2 * m;
    let mut a = DMatrix::zeros(rows, cols);
    let mut b = vec![0.0; rows];
    let mut c = vec![0.0; cols];
    for (e, &(t, h, cost, cap)) in edges.iter().enumerate() {
        a[(t, e)] -= 1.0;
        a[(h, e)] += 1.0;
        a[(n + e, e)] = 1.0;
        a[(n + e, m + e)] = 1.0;
        b[n + e] = cap;
        c[e] = cost;
    }
    for v in 0..n {
        b[v] = -(demand[v] as f64); // A^T x = b with b = -demand
    }
    simplex_min(&a, &b, &c).map(|(z, _)| z)
}
