//! Modal basis construction by the method of snapshots: build the snapshot
//! correlation matrix in the chosen inner product, diagonalize it, and
//! assemble orthonormal modes as snapshot combinations.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fem::sparse::CsrMatrix;

/// Inner product used for correlation and mode orthonormality. Velocity-like
/// fields use L2 (mass Gram); pressure-like fields use the full H1 product
/// (mass plus gradient Gram).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerProduct {
    L2,
    H1,
}

impl InnerProduct {
    pub fn code(self) -> u32 {
        match self {
            InnerProduct::L2 => 0,
            InnerProduct::H1 => 1,
        }
    }

    pub fn from_code(c: u32) -> Result<InnerProduct> {
        match c {
            0 => Ok(InnerProduct::L2),
            1 => Ok(InnerProduct::H1),
            _ => Err(Error::ParseError(format!("unknown inner product code {c}"))),
        }
    }
}

/// Gram matrix of the inner product; H1 needs the stiffness term.
pub fn gram_matrix(
    inner: InnerProduct,
    mass: &CsrMatrix,
    stiffness: Option<&CsrMatrix>,
) -> Result<CsrMatrix> {
    match inner {
        InnerProduct::L2 => Ok(mass.clone()),
        InnerProduct::H1 => {
            let k = stiffness.ok_or_else(|| {
                Error::InvalidInput("H1 inner product needs a stiffness matrix".into())
            })?;
            CsrMatrix::linear_combination(&[(1.0, mass), (1.0, k)])
        }
    }
}

/// Snapshot correlation K with K[m,l] = (s_m, s_l) in the Gram inner product.
/// Snapshots are the columns of `snapshots`.
pub fn correlation_matrix(snapshots: &DMatrix<f64>, gram: &CsrMatrix) -> Result<DMatrix<f64>> {
    if snapshots.nrows() != gram.nrows {
        return Err(Error::DimensionMismatch(format!(
            "snapshots have {} dofs, Gram matrix is {}x{}",
            snapshots.nrows(),
            gram.nrows,
            gram.ncols
        )));
    }
    let m = snapshots.ncols();
    let gs = gram.mul_dense(snapshots);
    let mut k = DMatrix::zeros(m, m);
    for a in 0..m {
        for b in a..m {
            let v = snapshots.column(a).dot(&gs.column(b));
            k[(a, b)] = v;
            k[(b, a)] = v;
        }
    }
    Ok(k)
}

/// Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations,
/// iterated until the off-diagonal Frobenius norm drops below 1e-14 times the
/// Frobenius norm of the input. Returns eigenvalues in descending order with
/// matching eigenvector columns.
pub fn jacobi_eigh(a: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "jacobi_eigh needs a square matrix");
    let frob = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let asym = (a - a.transpose()).amax();
    if asym > 1e-12 * frob.max(1.0) {
        return Err(Error::InvalidInput(format!(
            "eigensolver input is not symmetric: max |A - A^T| = {asym:.3e}"
        )));
    }
    let mut m = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let tol = 1e-14 * frob;

    let off_norm = |m: &DMatrix<f64>| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[(i, j)] * m[(i, j)];
                }
            }
        }
        s.sqrt()
    };

    let max_sweeps = 100;
    let mut sweeps = 0;
    while off_norm(&m) > tol {
        if sweeps >= max_sweeps {
            return Err(Error::SolverDiverged {
                residual: off_norm(&m),
                iterations: sweeps,
                context: Some("jacobi eigensolver".into()),
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // rows/columns p and q of M
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].partial_cmp(&m[(i, i)]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (new, &old) in order.iter().enumerate() {
        vectors.set_column(new, &v.column(old));
    }
    Ok((eigenvalues, vectors))
}

/// Number of eigenvalues above the relative cutoff 1e-12 times the largest.
pub fn numerical_rank(eigenvalues: &[f64]) -> usize {
    let lead = eigenvalues.first().copied().unwrap_or(0.0);
    if lead <= 0.0 {
        return 0;
    }
    eigenvalues
        .iter()
        .take_while(|&&l| l > 1e-12 * lead)
        .count()
}

/// Percentage of snapshot energy captured by the first `r` modes.
pub fn energy_ratio(eigenvalues: &[f64], r: usize) -> f64 {
    let total: f64 = eigenvalues.iter().filter(|&&l| l > 0.0).sum();
    if total <= 0.0 {
        return 0.0;
    }
    let kept: f64 = eigenvalues
        .iter()
        .take(r)
        .filter(|&&l| l > 0.0)
        .sum();
    100.0 * kept / total
}

/// Orthonormal modal basis with the spectrum of the snapshot correlation.
#[derive(Debug, Clone, PartialEq)]
pub struct PODBasis {
    /// Columns are modes, orthonormal in the stated inner product.
    pub modes: DMatrix<f64>,
    /// Full correlation spectrum, descending; may be longer than the mode count.
    pub eigenvalues: Vec<f64>,
    pub inner_product: InnerProduct,
}

impl PODBasis {
    pub fn rank(&self) -> usize {
        self.modes.ncols()
    }

    pub fn dof_count(&self) -> usize {
        self.modes.nrows()
    }
}

/// Builds the first `r` modes from the snapshot columns. Modes are
/// phi_i = (1 / sqrt(lambda_i)) * S a_i with a_i the correlation eigenvectors,
/// which makes them orthonormal in the Gram inner product. Requests beyond
/// the numerical rank of the snapshot set are refused.
pub fn pod_basis(
    snapshots: &DMatrix<f64>,
    gram: &CsrMatrix,
    inner_product: InnerProduct,
    r: usize,
) -> Result<PODBasis> {
    if snapshots.ncols() == 0 {
        return Err(Error::InvalidInput("no snapshots given".into()));
    }
    let k = correlation_matrix(snapshots, gram)?;
    let (eigenvalues, vectors) = jacobi_eigh(&k)?;
    let rank = numerical_rank(&eigenvalues);
    if r > rank {
        return Err(Error::RankExceeded { requested: r, rank });
    }
    let mut modes = DMatrix::zeros(snapshots.nrows(), r);
    for i in 0..r {
        let scale = 1.0 / eigenvalues[i].sqrt();
        let coef = vectors.column(i) * scale;
        let mode: DVector<f64> = snapshots * coef;
        modes.set_column(i, &mode);
    }
    Ok(PODBasis {
        modes,
        eigenvalues,
        inner_product,
    })
}

/// Coefficients of a field in the basis: c_i = (phi_i, f) in the Gram inner
/// product. This is the orthogonal projection since the basis is orthonormal.
pub fn project(basis: &PODBasis, gram: &CsrMatrix, field: &[f64]) -> Result<Vec<f64>> {
    if field.len() != basis.dof_count() || gram.nrows != field.len() {
        return Err(Error::DimensionMismatch(format!(
            "project: field {} vs basis {} vs Gram {}",
            field.len(),
            basis.dof_count(),
            gram.nrows
        )));
    }
    let gf = gram.mul_vec(field);
    let gf = DVector::from_vec(gf);
    Ok((0..basis.rank())
        .map(|i| basis.modes.column(i).dot(&gf))
        .collect())
}

/// Expands coefficients back to a full field.
pub fn reconstruct(basis: &PODBasis, coeffs: &[f64]) -> Result<Vec<f64>> {
    if coeffs.len() != basis.rank() {
        return Err(Error::DimensionMismatch(format!(
            "reconstruct: {} coefficients for rank {}",
            coeffs.len(),
            basis.rank()
        )));
    }
    let c = DVector::from_column_slice(coeffs);
    Ok((&basis.modes * c).iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::dofmap::{DofMap, FEField, Space};
    use crate::fem::{assemble_mass, assemble_stiffness};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn channel_setup() -> (crate::mesh::TriMesh, DofMap, CsrMatrix) {
        let mesh = crate::mesh::generate_channel(2.0, 1.0, 4, 3).unwrap();
        let map = DofMap::new(&mesh, Space::P2Scalar);
        let m = assemble_mass(&mesh, &map);
        (mesh, map, m)
    }

    fn random_snapshots(n: usize, m: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn jacobi_matches_dense_oracle() {
        let a0 = random_snapshots(8, 8, 7);
        let a = &a0 * a0.transpose(); // symmetric PSD
        let (eigs, vecs) = jacobi_eigh(&a).unwrap();
        let oracle = a.clone().symmetric_eigen();
        let mut oe: Vec<f64> = oracle.eigenvalues.iter().copied().collect();
        oe.sort_by(|x, y| y.partial_cmp(x).unwrap());
        for (l, o) in eigs.iter().zip(&oe) {
            assert_abs_diff_eq!(l, o, epsilon = 1e-10 * a.norm());
        }
        // residual check A v = lambda v
        for i in 0..8 {
            let r = &a * vecs.column(i) - eigs[i] * vecs.column(i);
            assert!(r.norm() < 1e-10 * a.norm());
        }
    }

    #[test]
    fn modes_are_orthonormal_in_the_gram_product() {
        let (_, map, gram) = channel_setup();
        let snaps = random_snapshots(map.dof_count, 6, 1);
        let basis = pod_basis(&snaps, &gram, InnerProduct::L2, 6).unwrap();
        let g_modes = gram.mul_dense(&basis.modes);
        let ident = basis.modes.transpose() * g_modes;
        for i in 0..6 {
            for j in 0..6 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(ident[(i, j)], expect, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn spectrum_sums_to_snapshot_energy() {
        let (_, map, gram) = channel_setup();
        let snaps = random_snapshots(map.dof_count, 5, 2);
        let k = correlation_matrix(&snaps, &gram).unwrap();
        let (eigs, _) = jacobi_eigh(&k).unwrap();
        let energy: f64 = (0..5)
            .map(|j| {
                let s: Vec<f64> = snaps.column(j).iter().copied().collect();
                let gs = gram.mul_vec(&s);
                s.iter().zip(&gs).map(|(a, b)| a * b).sum::<f64>()
            })
            .sum();
        assert_abs_diff_eq!(eigs.iter().sum::<f64>(), energy, epsilon = 1e-10 * energy);
    }

    #[test]
    fn projection_satisfies_pythagoras() {
        let (_, map, gram) = channel_setup();
        let snaps = random_snapshots(map.dof_count, 6, 3);
        let basis = pod_basis(&snaps, &gram, InnerProduct::L2, 3).unwrap();
        let f: Vec<f64> = snaps.column(0).iter().copied().collect();
        let coeffs = project(&basis, &gram, &f).unwrap();
        let recon = reconstruct(&basis, &coeffs).unwrap();
        let resid: Vec<f64> = f.iter().zip(&recon).map(|(a, b)| a - b).collect();
        let sq = |v: &[f64]| {
            let gv = gram.mul_vec(v);
            v.iter().zip(&gv).map(|(a, b)| a * b).sum::<f64>()
        };
        let coeff_sq: f64 = coeffs.iter().map(|c| c * c).sum();
        assert_abs_diff_eq!(sq(&f), coeff_sq + sq(&resid), epsilon = 1e-10 * sq(&f));
        // residual is Gram-orthogonal to every mode
        let gr = DVector::from_vec(gram.mul_vec(&resid));
        for i in 0..basis.rank() {
            assert_abs_diff_eq!(basis.modes.column(i).dot(&gr), 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn rank_complete_basis_reproduces_snapshots() {
        let (_, map, gram) = channel_setup();
        let snaps = random_snapshots(map.dof_count, 4, 4);
        let basis = pod_basis(&snaps, &gram, InnerProduct::L2, 4).unwrap();
        for j in 0..4 {
            let s: Vec<f64> = snaps.column(j).iter().copied().collect();
            let coeffs = project(&basis, &gram, &s).unwrap();
            let recon = reconstruct(&basis, &coeffs).unwrap();
            for (a, b) in s.iter().zip(&recon) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn duplicated_snapshots_reduce_the_rank() {
        let (_, map, gram) = channel_setup();
        let mut snaps = random_snapshots(map.dof_count, 4, 5);
        let copy = snaps.column(0).into_owned();
        snaps.set_column(3, &copy);
        let err = pod_basis(&snaps, &gram, InnerProduct::L2, 4).unwrap_err();
        match err {
            crate::Error::RankExceeded { requested, rank } => {
                assert_eq!(requested, 4);
                assert_eq!(rank, 3);
            }
            other => panic!("expected RankExceeded, got {other:?}"),
        }
        assert!(pod_basis(&snaps, &gram, InnerProduct::L2, 3).is_ok());
    }

    #[test]
    fn eigenvalue_order_is_invariant_under_snapshot_permutation() {
        let (_, map, gram) = channel_setup();
        let snaps = random_snapshots(map.dof_count, 5, 6);
        let mut permuted = snaps.clone();
        permuted.swap_columns(0, 3);
        permuted.swap_columns(1, 4);
        let k1 = correlation_matrix(&snaps, &gram).unwrap();
        let k2 = correlation_matrix(&permuted, &gram).unwrap();
        let (e1, _) = jacobi_eigh(&k1).unwrap();
        let (e2, _) = jacobi_eigh(&k2).unwrap();
        for (a, b) in e1.iter().zip(&e2) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10 * e1[0]);
        }
    }

    #[test]
    fn h1_product_penalizes_gradients() {
        let mesh = crate::mesh::generate_channel(2.0, 1.0, 4, 3).unwrap();
        let map = DofMap::new(&mesh, Space::P1Scalar);
        let m = assemble_mass(&mesh, &map);
        let k = assemble_stiffness(&mesh, &map);
        let g = gram_matrix(InnerProduct::H1, &m, Some(&k)).unwrap();
        let f = FEField::interpolate_scalar(&mesh, &map, |p| p[0]);
        let l2: f64 = {
            let mv = m.mul_vec(&f.values);
            f.values.iter().zip(&mv).map(|(a, b)| a * b).sum()
        };
        let h1: f64 = {
            let gv = g.mul_vec(&f.values);
            f.values.iter().zip(&gv).map(|(a, b)| a * b).sum()
        };
        // |x|_{H1}^2 = |x|_{L2}^2 + |Omega| for the linear field x1
        assert_abs_diff_eq!(h1, l2 + 2.0, epsilon = 1e-10);
        assert!(gram_matrix(InnerProduct::H1, &m, None).is_err());
    }

    #[test]
    fn energy_ratio_reaches_one_hundred_percent() {
        let eigs = [4.0, 2.0, 1.0, 1e-20];
        assert_abs_diff_eq!(energy_ratio(&eigs, 2), 600.0 / 7.0, epsilon = 1e-12);
        assert_abs_diff_eq!(energy_ratio(&eigs, 4), 100.0, epsilon = 1e-12);
        assert_abs_diff_eq!(energy_ratio(&[1.0, 1.0, 1.0, 1.0], 2), 50.0, epsilon = 1e-14);
        assert_eq!(numerical_rank(&eigs), 3);
    }

    #[test]
    fn jacobi_hand_examples_and_symmetry_guard() {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 1.0, 2.0]));
        let (eigs, _) = jacobi_eigh(&d).unwrap();
        assert_eq!(eigs, vec![3.0, 2.0, 1.0]);

        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let (eigs, vecs) = jacobi_eigh(&m).unwrap();
        assert_abs_diff_eq!(eigs[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eigs[1], 1.0, epsilon = 1e-12);
        let s = 1.0 / 2.0_f64.sqrt();
        assert_abs_diff_eq!(vecs.column(0)[0].abs(), s, epsilon = 1e-12);
        assert_abs_diff_eq!(vecs.column(1)[1].abs(), s, epsilon = 1e-12);

        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(jacobi_eigh(&bad), Err(crate::Error::InvalidInput(_))));
    }
}
