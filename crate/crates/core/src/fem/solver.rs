//! Sparse linear solvers: banded LU with partial pivoting (after RCM
//! reordering) and conjugate gradients for SPD systems.

use crate::error::{Error, Result};
use crate::fem::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverMethod {
    /// Direct banded LU with partial pivoting; works for any square matrix.
    Lu,
    /// Conjugate gradients; only valid for matrices flagged symmetric.
    Cg,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOpts {
    pub method: SolverMethod,
    /// Relative residual target |Ax - b| <= tol |b|.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOpts {
    fn default() -> Self {
        Self {
            method: SolverMethod::Lu,
            tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

impl SolveOpts {
    pub fn cg() -> Self {
        Self {
            method: SolverMethod::Cg,
            ..Self::default()
        }
    }
    pub fn lu() -> Self {
        Self::default()
    }
}

pub fn solve_sparse(a: &CsrMatrix, b: &[f64], opts: &SolveOpts) -> Result<Vec<f64>> {
    if a.nrows != a.ncols {
        return Err(Error::DimensionMismatch(format!(
            "solve_sparse needs a square matrix, got {}x{}",
            a.nrows, a.ncols
        )));
    }
    if b.len() != a.nrows {
        return Err(Error::DimensionMismatch(format!(
            "rhs length {} vs matrix order {}",
            b.len(),
            a.nrows
        )));
    }
    match opts.method {
        SolverMethod::Lu => {
            let lu = BandLu::factor(a)?;
            Ok(lu.solve(b))
        }
        SolverMethod::Cg => {
            if !a.symmetric {
                return Err(Error::InvalidSolverChoice);
            }
            conjugate_gradient(a, b, opts.tol, opts.max_iter)
        }
    }
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn conjugate_gradient(a: &CsrMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = b.len();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rs = r.iter().map(|v| v * v).sum::<f64>();
    for _ in 0..max_iter {
        if rs.sqrt() <= tol * bnorm {
            return Ok(x);
        }
        let ap = a.mul_vec(&p);
        let pap: f64 = p.iter().zip(&ap).map(|(pi, api)| pi * api).sum();
        if pap <= 0.0 {
            return Err(Error::SolverDiverged {
                residual: rs.sqrt() / bnorm,
                iterations: 0,
                context: Some("CG hit a non-positive curvature direction".into()),
            });
        }
        let alpha = rs / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new = r.iter().map(|v| v * v).sum::<f64>();
        let beta = rs_new / rs;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rs = rs_new;
    }
    if rs.sqrt() <= tol * bnorm {
        Ok(x)
    } else {
        Err(Error::SolverDiverged {
            residual: rs.sqrt() / bnorm,
            iterations: max_iter,
            context: Some("CG did not converge".into()),
        })
    }
}

/// Banded LU factorization with partial pivoting. The matrix is first
/// permuted by reverse Cuthill-McKee to keep the bandwidth small, then
/// factored in LAPACK-style band storage (the upper band is widened by the
/// lower bandwidth to hold pivoting fill).
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    /// Row-major band: row i occupies columns [i-kl, i+ku+kl].
    band: Vec<f64>,
    pivots: Vec<usize>,
    perm: Vec<usize>,
}

impl BandLu {
    pub fn factor(a: &CsrMatrix) -> Result<BandLu> {
        let n = a.nrows;
        if n == 0 {
            return Ok(BandLu {
                n,
                kl: 0,
                ku: 0,
                width: 1,
                band: Vec::new(),
                pivots: Vec::new(),
                perm: Vec::new(),
            });
        }
        let perm = reverse_cuthill_mckee(a);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        // Bandwidths of the permuted matrix.
        let mut kl = 0usize;
        let mut ku = 0usize;
        for i in 0..n {
            let (cols, _) = a.row(i);
            let pi = inv[i];
            for &j in cols {
                let pj = inv[j];
                if pi > pj {
                    kl = kl.max(pi - pj);
                } else {
                    ku = ku.max(pj - pi);
                }
            }
        }
        let width = 2 * kl + ku + 1;
        let mut band = vec![0.0; n * width];
        let at = |i: usize, j: usize| i * width + (j + kl - i);
        for i in 0..n {
            let (cols, vals) = a.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                band[at(inv[i], inv[j])] = v;
            }
        }

        let mut pivots = vec![0usize; n];
        for k in 0..n {
            let imax = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = band[at(k, k)].abs();
            for i in k + 1..=imax {
                let v = band[at(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 {
                return Err(Error::SolverDiverged {
                    residual: f64::INFINITY,
                    iterations: 0,
                    context: Some(format!("singular matrix: zero pivot at column {k}")),
                });
            }
            pivots[k] = p;
            let jmax = (k + ku + kl).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    band.swap(at(k, j), at(p, j));
                }
            }
            let pivot = band[at(k, k)];
            for i in k + 1..=imax {
                let mult = band[at(i, k)] / pivot;
                band[at(i, k)] = mult;
                if mult != 0.0 {
                    for j in k + 1..=jmax {
                        let upper = band[at(k, j)];
                        if upper != 0.0 {
                            band[at(i, j)] -= mult * upper;
                        }
                    }
                }
            }
        }
        Ok(BandLu {
            n,
            kl,
            ku,
            width,
            band,
            pivots,
            perm,
        })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        if n == 0 {
            return Vec::new();
        }
        let at = |i: usize, j: usize| i * self.width + (j + self.kl - i);
        let mut y = vec![0.0; n];
        // Permute rhs.
        let mut inv = vec![0usize; n];
        for (new, &old) in self.perm.iter().enumerate() {
            inv[old] = new;
        }
        for i in 0..n {
            y[inv[i]] = b[i];
        }
        // Forward elimination with pivoting.
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                y.swap(k, p);
            }
            let imax = (k + self.kl).min(n - 1);
            for i in k + 1..=imax {
                y[i] -= self.band[at(i, k)] * y[k];
            }
        }
        // Back substitution.
        for k in (0..n).rev() {
            let jmax = (k + self.ku + self.kl).min(n - 1);
            let mut acc = y[k];
            for j in k + 1..=jmax {
                acc -= self.band[at(k, j)] * y[j];
            }
            y[k] = acc / self.band[at(k, k)];
        }
        // Unpermute.
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}

/// Reverse Cuthill-McKee ordering of the symmetrized sparsity pattern.
/// Returns `perm` with `perm[new] = old`.
fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.nrows;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        let (cols, _) = a.row(i);
        for &j in cols {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    for nbrs in &mut adj {
        nbrs.sort_unstable();
        nbrs.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(|v| v.len()).collect();

    let mut order = Vec::with_capacity(n);
    let mut visited = vec![false; n];
    loop {
        // Lowest-degree unvisited vertex seeds the next component.
        let start = match (0..n)
            .filter(|&v| !visited[v])
            .min_by_key(|&v| (degree[v], v))
        {
            Some(s) => s,
            None => break,
        };
        visited[start] = true;
        let mut queue = std::collections::VecDeque::new();
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = adj[v].iter().copied().filter(|&u| !visited[u]).collect();
            nbrs.sort_by_key(|&u| (degree[u], u));
            for u in nbrs {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::sparse::{identity, CooBuilder};
    use approx::assert_abs_diff_eq;

    #[test]
    fn identity_solve() {
        let a = identity(4);
        let b = vec![1.0, -2.0, 3.0, 0.5];
        for opts in [SolveOpts::lu(), SolveOpts::cg()] {
            let x = solve_sparse(&a, &b, &opts).unwrap();
            assert_eq!(x, b);
        }
    }

    #[test]
    fn two_by_two_hand_solve() {
        let mut builder = CooBuilder::new(2, 2);
        builder.add(0, 0, 2.0);
        builder.add(0, 1, 1.0);
        builder.add(1, 0, 1.0);
        builder.add(1, 1, 2.0);
        let a = builder.build(true);
        let b = vec![3.0, 3.0];
        for opts in [SolveOpts::lu(), SolveOpts::cg()] {
            let x = solve_sparse(&a, &b, &opts).unwrap();
            assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(x[1], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let builder = CooBuilder::new(1, 1);
        let a = builder.build(false);
        let res = solve_sparse(&a, &[1.0], &SolveOpts::lu());
        assert!(matches!(res, Err(Error::SolverDiverged { .. })));
    }

    #[test]
    fn cg_rejects_unflagged_matrix() {
        let mut builder = CooBuilder::new(2, 2);
        builder.add(0, 0, 1.0);
        builder.add(1, 1, 1.0);
        builder.add(0, 1, 0.5);
        let a = builder.build(false);
        assert!(matches!(
            solve_sparse(&a, &[1.0, 1.0], &SolveOpts::cg()),
            Err(Error::InvalidSolverChoice)
        ));
    }

    #[test]
    fn lu_handles_random_banded_system() {
        // Deterministic pseudo-random SPD-ish nonsymmetric system.
        let n = 60;
        let mut builder = CooBuilder::new(n, n);
        let mut state = 12345u64;
        let mut rnd = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        };
        let mut x_true = vec![0.0; n];
        for i in 0..n {
            x_true[i] = rnd();
            builder.add(i, i, 4.0 + rnd());
            if i + 1 < n {
                builder.add(i, i + 1, rnd());
                builder.add(i + 1, i, rnd());
            }
            if i + 7 < n {
                builder.add(i, i + 7, 0.3 * rnd());
            }
        }
        let a = builder.build(false);
        let b = a.mul_vec(&x_true);
        let x = solve_sparse(&a, &b, &SolveOpts::lu()).unwrap();
        for i in 0..n {
            assert_abs_diff_eq!(x[i], x_true[i], epsilon = 1e-9);
        }
    }
}
