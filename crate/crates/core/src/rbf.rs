//! Thin-plate-spline radial-basis regression of reduced pressure-correction
//! coefficients. Two flavors of inputs are supported: (time, parameter)
//! pairs for interpolation across a training set of flow parameters, and
//! predicted-velocity coefficient vectors for extrapolation in time.
//!
//! Input coordinates are affinely normalized to [0,1] over the training
//! range before distances are taken (time and parameter scales can differ by
//! orders of magnitude); the normalization is stored in the model.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fem::sparse::CsrMatrix;
use crate::fom::SnapshotSet;
use crate::pod::{project, PODBasis};

/// What the model takes as input coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RBFMode {
    /// Centers are (time, parameter) pairs.
    ParamTime,
    /// Centers are reduced predicted-velocity coefficient vectors.
    CoefExtrapolation,
}

impl RBFMode {
    pub fn code(self) -> u8 {
        match self {
            RBFMode::ParamTime => 0,
            RBFMode::CoefExtrapolation => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<RBFMode> {
        match code {
            0 => Ok(RBFMode::ParamTime),
            1 => Ok(RBFMode::CoefExtrapolation),
            other => Err(Error::InvalidInput(format!("unknown RBF mode code {other}"))),
        }
    }
}

/// Per-coordinate affine map to [0,1]: x -> (x - lo) / span.
/// Coordinates that are constant over the training set map to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordScaling {
    pub lo: Vec<f64>,
    pub span: Vec<f64>,
}

impl CoordScaling {
    /// Fits the per-coordinate range of the given centers.
    pub fn fit(centers: &[Vec<f64>]) -> CoordScaling {
        let dim = centers.first().map_or(0, |c| c.len());
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for c in centers {
            for (k, &x) in c.iter().enumerate() {
                lo[k] = lo[k].min(x);
                hi[k] = hi[k].max(x);
            }
        }
        let span = lo
            .iter()
            .zip(&hi)
            .map(|(&l, &h)| if h - l > 0.0 { h - l } else { 1.0 })
            .collect();
        CoordScaling { lo, span }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(k, &v)| (v - self.lo[k]) / self.span[k])
            .collect()
    }
}

/// Regularized thin-plate spline kernel: r^2 ln(r + 1).
pub fn kernel(r: f64) -> Result<f64> {
    if r < 0.0 || r.is_nan() {
        return Err(Error::InvalidInput(format!(
            "kernel argument must be a nonnegative radius, got {r}"
        )));
    }
    Ok(r * r * (r + 1.0).ln())
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Kernel matrix of pairwise center distances; symmetric, zero diagonal.
pub fn kernel_matrix(centers: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = centers.len();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = kernel(dist(&centers[i], &centers[j]))?;
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    Ok(a)
}

/// Returns the index of the second member of the closest duplicate pair if
/// any two points coincide to within 1e-12.
fn find_duplicate(points: &[Vec<f64>]) -> Option<usize> {
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            if dist(&points[i], &points[j]) <= 1e-12 {
                return Some(j);
            }
        }
    }
    None
}

/// Training inputs and projected-coefficient targets.
#[derive(Debug, Clone)]
pub struct TrainingTable {
    pub mode: RBFMode,
    /// Raw (unnormalized) input coordinates, one per row of `targets`.
    pub centers: Vec<Vec<f64>>,
    /// n_centers x n_output_modes.
    pub targets: DMatrix<f64>,
}

/// Fitted interpolant: one weight column per output mode.
#[derive(Debug, Clone)]
pub struct RBFModel {
    pub mode: RBFMode,
    /// Normalized center coordinates.
    pub centers: Vec<Vec<f64>>,
    /// n_centers x n_output_modes.
    pub weights: DMatrix<f64>,
    pub scaling: CoordScaling,
    pub ridge: f64,
    /// 1-norm-free cheap condition estimate from the LU pivots.
    pub condition_estimate: f64,
}

impl RBFModel {
    pub fn n_centers(&self) -> usize {
        self.centers.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.scaling.dim()
    }
}

/// Solves (A + ridge I) W = Y by LU with partial pivoting. Fails with
/// `IllConditioned` when the pivot-ratio condition estimate exceeds 1e14.
pub fn rbf_fit(table: &TrainingTable, ridge: f64) -> Result<RBFModel> {
    let n = table.centers.len();
    if n < 2 {
        return Err(Error::InsufficientCenters(n));
    }
    if table.targets.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "training table has {n} centers but {} target rows",
            table.targets.nrows()
        )));
    }
    if ridge < 0.0 {
        return Err(Error::InvalidInput("ridge parameter must be nonnegative".into()));
    }
    let scaling = CoordScaling::fit(&table.centers);
    let centers: Vec<Vec<f64>> = table.centers.iter().map(|c| scaling.apply(c)).collect();
    if let Some(j) = find_duplicate(&centers) {
        return Err(Error::DuplicateCenter(j));
    }

    let mut a = kernel_matrix(&centers)?;
    for i in 0..n {
        a[(i, i)] += ridge;
    }
    let lu = a.lu();
    let diag = lu.u().diagonal();
    let max_pivot = diag.iter().fold(0.0_f64, |m, &d| m.max(d.abs()));
    let min_pivot = diag.iter().fold(f64::INFINITY, |m, &d| m.min(d.abs()));
    let condition_estimate = if min_pivot > 0.0 {
        max_pivot / min_pivot
    } else {
        f64::INFINITY
    };
    if condition_estimate > 1e14 {
        return Err(Error::IllConditioned {
            estimate: condition_estimate,
        });
    }
    let weights = lu.solve(&table.targets).ok_or(Error::IllConditioned {
        estimate: condition_estimate,
    })?;
    Ok(RBFModel {
        mode: table.mode,
        centers,
        weights,
        scaling,
        ridge,
        condition_estimate,
    })
}

/// Evaluates all output modes at one query point (raw coordinates).
pub fn rbf_eval(model: &RBFModel, query: &[f64]) -> Result<Vec<f64>> {
    if query.len() != model.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "query has dimension {} but model expects {}",
            query.len(),
            model.input_dim()
        )));
    }
    let z = model.scaling.apply(query);
    let mut out = vec![0.0; model.n_outputs()];
    for (j, c) in model.centers.iter().enumerate() {
        let k = kernel(dist(&z, c))?;
        if k == 0.0 {
            continue;
        }
        for (l, o) in out.iter_mut().enumerate() {
            *o += model.weights[(j, l)] * k;
        }
    }
    Ok(out)
}

/// Which correction family the targets are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrectionField {
    /// Interior pressure correction.
    Volume,
    /// Outlet-trace correction.
    OutletTrace,
}

fn correction_data(set: &SnapshotSet, field: CorrectionField) -> &DMatrix<f64> {
    match field {
        CorrectionField::Volume => &set.phi,
        CorrectionField::OutletTrace => &set.phi_hat,
    }
}

/// Builds a (time, parameter) training table: one center per snapshot,
/// targets are the projections of the correction snapshots onto its basis.
pub fn build_training_param_time(
    sets: &[&SnapshotSet],
    field: CorrectionField,
    basis: &PODBasis,
    gram: &CsrMatrix,
) -> Result<TrainingTable> {
    let mut centers = Vec::new();
    let mut rows = Vec::new();
    for set in sets {
        let data = correction_data(set, field);
        if data.ncols() != set.times.len() {
            return Err(Error::DimensionMismatch(
                "snapshot columns do not match the time stamps".into(),
            ));
        }
        for (j, &t) in set.times.iter().enumerate() {
            centers.push(vec![t, set.param]);
            let col: Vec<f64> = data.column(j).iter().copied().collect();
            rows.push(project(basis, gram, &col)?);
        }
    }
    if let Some(j) = find_duplicate(&CoordScaling::fit(&centers)
        .apply_all(&centers))
    {
        return Err(Error::DuplicateCenter(j));
    }
    let targets = DMatrix::from_fn(rows.len(), basis.rank(), |i, l| rows[i][l]);
    Ok(TrainingTable {
        mode: RBFMode::ParamTime,
        centers,
        targets,
    })
}

impl CoordScaling {
    fn apply_all(&self, points: &[Vec<f64>]) -> Vec<Vec<f64>> {
        points.iter().map(|p| self.apply(p)).collect()
    }
}

/// Builds a coefficient-extrapolation training table: centers are the
/// reduced coordinates of the predicted-velocity snapshots, targets the
/// projected correction coefficients at the same steps.
pub fn build_training_coef(
    sets: &[&SnapshotSet],
    vel_basis: &PODBasis,
    vel_gram: &CsrMatrix,
    field: CorrectionField,
    basis: &PODBasis,
    gram: &CsrMatrix,
) -> Result<TrainingTable> {
    let mut centers = Vec::new();
    let mut rows = Vec::new();
    for set in sets {
        let data = correction_data(set, field);
        if data.ncols() != set.u_tilde.ncols() {
            return Err(Error::DimensionMismatch(
                "predicted-velocity and correction snapshots are misaligned".into(),
            ));
        }
        for j in 0..set.u_tilde.ncols() {
            let ut: Vec<f64> = set.u_tilde.column(j).iter().copied().collect();
            centers.push(project(vel_basis, vel_gram, &ut)?);
            let col: Vec<f64> = data.column(j).iter().copied().collect();
            rows.push(project(basis, gram, &col)?);
        }
    }
    if let Some(j) = find_duplicate(&CoordScaling::fit(&centers).apply_all(&centers)) {
        return Err(Error::DuplicateCenter(j));
    }
    let targets = DMatrix::from_fn(rows.len(), basis.rank(), |i, l| rows[i][l]);
    Ok(TrainingTable {
        mode: RBFMode::CoefExtrapolation,
        centers,
        targets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::sparse::identity;
    use crate::pod::InnerProduct;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kernel_values() {
        assert_eq!(kernel(0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(kernel(1.0).unwrap(), 0.6931471805599453, epsilon = 1e-15);
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(
            kernel(e - 1.0).unwrap(),
            (e - 1.0) * (e - 1.0),
            epsilon = 1e-12
        );
        assert!(matches!(kernel(-0.5), Err(Error::InvalidInput(_))));
    }

    fn table(centers: Vec<Vec<f64>>, targets: DMatrix<f64>) -> TrainingTable {
        TrainingTable {
            mode: RBFMode::ParamTime,
            centers,
            targets,
        }
    }

    #[test]
    fn two_center_fit_matches_hand_solve() {
        // Normalized distance between the two centers is exactly 1.
        let t = table(
            vec![vec![0.0, 0.0], vec![3.0, 0.0]],
            DMatrix::from_column_slice(2, 1, &[2.0, 5.0]),
        );
        let m = rbf_fit(&t, 0.0).unwrap();
        let xi = kernel(1.0).unwrap();
        assert_abs_diff_eq!(m.weights[(0, 0)], 5.0 / xi, epsilon = 1e-12);
        assert_abs_diff_eq!(m.weights[(1, 0)], 2.0 / xi, epsilon = 1e-12);

        // Midpoint by the closed form.
        let mid = rbf_eval(&m, &[1.5, 0.0]).unwrap();
        let expect = (m.weights[(0, 0)] + m.weights[(1, 0)]) * kernel(0.5).unwrap();
        assert_abs_diff_eq!(mid[0], expect, epsilon = 1e-12);
    }

    #[test]
    fn zero_targets_give_zero_weights_and_outputs() {
        let t = table(
            vec![vec![0.0, 0.0], vec![1.0, 2.0], vec![2.0, 1.0]],
            DMatrix::zeros(3, 2),
        );
        let m = rbf_fit(&t, 0.0).unwrap();
        assert_eq!(m.weights.amax(), 0.0);
        let out = rbf_eval(&m, &[0.7, 0.4]).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn interpolation_is_exact_at_centers() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 12;
        let centers: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.gen_range(0.0..2.0), rng.gen_range(400.0..600.0)])
            .collect();
        let targets = DMatrix::from_fn(n, 3, |_, _| rng.gen_range(-1.0..1.0));
        let m = rbf_fit(&table(centers.clone(), targets.clone()), 0.0).unwrap();
        for i in 0..n {
            let out = rbf_eval(&m, &centers[i]).unwrap();
            for l in 0..3 {
                let denom = targets[(i, l)].abs().max(1.0);
                assert!(
                    (out[l] - targets[(i, l)]).abs() / denom < 1e-8,
                    "center {i} mode {l}: {} vs {}",
                    out[l],
                    targets[(i, l)]
                );
            }
        }
    }

    #[test]
    fn kernel_matrix_matches_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let centers: Vec<Vec<f64>> = (0..8)
            .map(|_| vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)])
            .collect();
        let a = kernel_matrix(&centers).unwrap();
        for i in 0..8 {
            assert_eq!(a[(i, i)], 0.0);
            for j in 0..8 {
                let d: f64 = centers[i]
                    .iter()
                    .zip(&centers[j])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                assert_abs_diff_eq!(a[(i, j)], d * d * (d + 1.0).ln(), epsilon = 1e-12);
                assert_eq!(a[(i, j)], a[(j, i)]);
            }
        }
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let one = table(vec![vec![0.0, 0.0]], DMatrix::zeros(1, 1));
        assert!(matches!(rbf_fit(&one, 0.0), Err(Error::InsufficientCenters(1))));

        let dup = table(
            vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![1.0, 1.0]],
            DMatrix::zeros(3, 1),
        );
        assert!(matches!(rbf_fit(&dup, 0.0), Err(Error::DuplicateCenter(2))));

        let m = rbf_fit(
            &table(
                vec![vec![0.0, 0.0], vec![1.0, 0.0]],
                DMatrix::zeros(2, 1),
            ),
            0.0,
        )
        .unwrap();
        assert!(matches!(
            rbf_eval(&m, &[0.0, 0.0, 0.0]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn normalization_matches_prenormalized_fit_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let centers: Vec<Vec<f64>> = (0..6)
            .map(|_| vec![rng.gen_range(5.0..7.0), rng.gen_range(400.0..600.0)])
            .collect();
        let targets = DMatrix::from_fn(6, 2, |_, _| rng.gen_range(-1.0..1.0));
        let m_raw = rbf_fit(&table(centers.clone(), targets.clone()), 0.0).unwrap();
        let pre: Vec<Vec<f64>> = centers.iter().map(|c| m_raw.scaling.apply(c)).collect();
        let m_pre = rbf_fit(&table(pre, targets), 0.0).unwrap();
        let q = vec![6.13, 517.0];
        let out_raw = rbf_eval(&m_raw, &q).unwrap();
        let out_pre = rbf_eval(&m_pre, &m_raw.scaling.apply(&q)).unwrap();
        assert_eq!(out_raw, out_pre);
    }

    /// Tiny synthetic snapshot sets on 3 "dofs" with identity Gram.
    fn fake_basis(n: usize, r: usize) -> PODBasis {
        let mut modes = DMatrix::zeros(n, r);
        for l in 0..r {
            modes[(l, l)] = 1.0;
        }
        PODBasis {
            modes,
            eigenvalues: vec![1.0; r],
            inner_product: InnerProduct::L2,
        }
    }

    fn fake_set(times: Vec<f64>, param: f64, phi: DMatrix<f64>, ut: DMatrix<f64>) -> SnapshotSet {
        let n = phi.ncols();
        SnapshotSet {
            times,
            param,
            u: DMatrix::zeros(ut.nrows(), n),
            u_tilde: ut,
            p: DMatrix::zeros(phi.nrows(), n),
            phi,
            phi_hat: DMatrix::zeros(2, n),
        }
    }

    #[test]
    fn param_time_table_projects_targets() {
        let basis = fake_basis(3, 2);
        let gram = identity(3);
        // phi snapshots equal to mode 0 and mode 1.
        let phi = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let ut = DMatrix::zeros(3, 2);
        let s1 = fake_set(vec![0.0, 1.0], 400.0, phi.clone(), ut.clone());
        let s2 = fake_set(vec![0.0, 1.0], 600.0, phi, ut);
        let t = build_training_param_time(&[&s1, &s2], CorrectionField::Volume, &basis, &gram)
            .unwrap();
        assert_eq!(t.centers.len(), 4);
        assert_eq!(t.centers[3], vec![1.0, 600.0]);
        assert_abs_diff_eq!(t.targets[(0, 0)], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(t.targets[(0, 1)], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(t.targets[(1, 1)], 1.0, epsilon = 1e-10);

        // Duplicate (t, mu) across sets is rejected.
        let s3 = fake_set(
            vec![0.0, 1.0],
            400.0,
            DMatrix::zeros(3, 2),
            DMatrix::zeros(3, 2),
        );
        let err = build_training_param_time(&[&s1, &s3], CorrectionField::Volume, &basis, &gram);
        assert!(matches!(err, Err(Error::DuplicateCenter(_))));
    }

    #[test]
    fn coef_table_uses_velocity_coordinates() {
        let vel_basis = fake_basis(3, 2);
        let basis = fake_basis(3, 2);
        let gram = identity(3);
        // First predicted-velocity snapshot equals velocity mode 0.
        let ut = DMatrix::from_column_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.5, 0.5, 0.0]);
        let phi = DMatrix::from_column_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.2, 0.2, 0.0]);
        let s = fake_set(vec![0.0, 1.0, 2.0], 500.0, phi, ut);
        let t = build_training_coef(
            &[&s],
            &vel_basis,
            &gram,
            CorrectionField::Volume,
            &basis,
            &gram,
        )
        .unwrap();
        assert_eq!(t.centers.len(), 3);
        assert_abs_diff_eq!(t.centers[0][0], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(t.centers[0][1], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(t.targets[(0, 1)], 1.0, epsilon = 1e-10);

        // Identical consecutive predicted-velocity snapshots are rejected.
        let ut_dup =
            DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let s_dup = fake_set(
            vec![0.0, 1.0],
            500.0,
            DMatrix::zeros(3, 2),
            ut_dup,
        );
        let err = build_training_coef(
            &[&s_dup],
            &vel_basis,
            &gram,
            CorrectionField::Volume,
            &basis,
            &gram,
        );
        assert!(matches!(err, Err(Error::DuplicateCenter(_))));
    }
}
