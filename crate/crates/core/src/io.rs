//! Binary artifact formats, all little-endian:
//!
//! * `PODSNAP1` — snapshot matrices and modal bases. Header: magic, then
//!   u32 `{field_id, dof_count, n_columns}`, then `n_columns` f64 time
//!   stamps, one f64 parameter value, then column-major f64 data. Basis
//!   files reuse the container with `field_id >= 100` (`100 + field`),
//!   the parameter slot holding the inner-product code, and the full
//!   eigenvalue spectrum appended as a trailing f64 block.
//! * `ROMOPS01` — the projected operators: u32 dimension header, then f64
//!   blocks in the order the fields are declared on `ReducedOperators`.
//! * `RBFMDL01` — a fitted surrogate: mode byte, u32 dims, normalization
//!   block, centers, weights, ridge, condition estimate.
//!
//! Every writer also emits a `<file>.sha256` sidecar holding the hex digest
//! of the producing configuration, so consumers can check that artifacts
//! from different pipeline stages belong together.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fom::SnapshotSet;
use crate::pod::{InnerProduct, PODBasis};
use crate::rbf::{CoordScaling, RBFMode, RBFModel};
use crate::rom::{ROMBases, ReducedOperators, ReducedQoI};

pub const FIELD_U: u32 = 0;
pub const FIELD_U_TILDE: u32 = 1;
pub const FIELD_P: u32 = 2;
pub const FIELD_PHI: u32 = 3;
pub const FIELD_PHI_HAT: u32 = 4;
/// Basis containers use `BASIS_FIELD_OFFSET + field_id`.
pub const BASIS_FIELD_OFFSET: u32 = 100;

const SNAP_MAGIC: &[u8; 8] = b"PODSNAP1";
const OPS_MAGIC: &[u8; 8] = b"ROMOPS01";
const RBF_MAGIC: &[u8; 8] = b"RBFMDL01";

/// Hex SHA-256 of a configuration string; used for artifact sidecars.
pub fn config_hash(config_text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(config_text.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".sha256");
    os.into()
}

/// Writes the provenance sidecar next to an artifact.
pub fn write_sidecar(path: &Path, hash: &str) -> Result<()> {
    std::fs::write(sidecar_path(path), format!("{hash}\n"))?;
    Ok(())
}

/// Reads the sidecar, if present.
pub fn read_sidecar(path: &Path) -> Result<Option<String>> {
    match std::fs::read_to_string(sidecar_path(path)) {
        Ok(s) => Ok(Some(s.trim().to_string())),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Fails when the artifact's sidecar exists and names a different producing
/// configuration.
pub fn verify_sidecar(path: &Path, expected_hash: &str) -> Result<()> {
    if let Some(found) = read_sidecar(path)? {
        if found != expected_hash {
            return Err(Error::IncompatibleArtifacts(format!(
                "{} was produced by a different configuration (hash {found}, expected {expected_hash})",
                path.display()
            )));
        }
    }
    Ok(())
}

fn open_reader(path: &Path) -> Result<BufReader<File>> {
    match File::open(path) {
        Ok(f) => Ok(BufReader::new(f)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingArtifact(
            path.display().to_string(),
        )),
        Err(e) => Err(e.into()),
    }
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64_slice<W: Write>(w: &mut W, vs: &[f64]) -> Result<()> {
    for &v in vs {
        write_f64(w, v)?;
    }
    Ok(())
}

fn write_matrix<W: Write>(w: &mut W, m: &DMatrix<f64>) -> Result<()> {
    // column-major, matching the header-declared dimensions
    write_f64_slice(w, m.as_slice())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

fn read_f64_vec<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(read_f64(r)?);
    }
    Ok(out)
}

fn read_matrix<R: Read>(r: &mut R, nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    Ok(DMatrix::from_vec(nrows, ncols, read_f64_vec(r, nrows * ncols)?))
}

fn check_magic<R: Read>(r: &mut R, expected: &[u8; 8], what: &str) -> Result<()> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    if &buf != expected {
        return Err(Error::IncompatibleArtifacts(format!(
            "not a {what} file (bad magic)"
        )));
    }
    Ok(())
}

/// Writes one snapshot matrix (one field of one parameter run).
pub fn write_snapshot_matrix(
    path: &Path,
    field_id: u32,
    times: &[f64],
    param: f64,
    data: &DMatrix<f64>,
) -> Result<()> {
    if times.len() != data.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{} time stamps for {} snapshot columns",
            times.len(),
            data.ncols()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SNAP_MAGIC)?;
    write_u32(&mut w, field_id)?;
    write_u32(&mut w, data.nrows() as u32)?;
    write_u32(&mut w, data.ncols() as u32)?;
    write_f64_slice(&mut w, times)?;
    write_f64(&mut w, param)?;
    write_matrix(&mut w, data)?;
    w.flush()?;
    Ok(())
}

/// Reads one snapshot matrix: (field_id, times, param, data).
pub fn read_snapshot_matrix(path: &Path) -> Result<(u32, Vec<f64>, f64, DMatrix<f64>)> {
    let mut r = open_reader(path)?;
    check_magic(&mut r, SNAP_MAGIC, "snapshot")?;
    let field_id = read_u32(&mut r)?;
    let dof_count = read_u32(&mut r)? as usize;
    let n = read_u32(&mut r)? as usize;
    let times = read_f64_vec(&mut r, n)?;
    let param = read_f64(&mut r)?;
    let data = read_matrix(&mut r, dof_count, n)?;
    Ok((field_id, times, param, data))
}

/// File name used for one field of one parameter run.
pub fn snapshot_file_name(prefix: &str, field_id: u32) -> String {
    let field = match field_id {
        FIELD_U => "u",
        FIELD_U_TILDE => "u_tilde",
        FIELD_P => "p",
        FIELD_PHI => "phi",
        FIELD_PHI_HAT => "phi_hat",
        other => return format!("{prefix}_field{other}.snap"),
    };
    format!("{prefix}_{field}.snap")
}

/// Writes all five snapshot files of one run; returns the paths written.
pub fn write_snapshot_set(
    dir: &Path,
    prefix: &str,
    set: &SnapshotSet,
    hash: &str,
) -> Result<Vec<std::path::PathBuf>> {
    let fields = [
        (FIELD_U, &set.u),
        (FIELD_U_TILDE, &set.u_tilde),
        (FIELD_P, &set.p),
        (FIELD_PHI, &set.phi),
        (FIELD_PHI_HAT, &set.phi_hat),
    ];
    let mut paths = Vec::new();
    for (id, data) in fields {
        let path = dir.join(snapshot_file_name(prefix, id));
        write_snapshot_matrix(&path, id, &set.times, set.param, data)?;
        write_sidecar(&path, hash)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Reads the five snapshot files of one run back into a set.
pub fn read_snapshot_set(dir: &Path, prefix: &str) -> Result<SnapshotSet> {
    let mut matrices = Vec::new();
    let mut times = None;
    let mut param = 0.0;
    for id in [FIELD_U, FIELD_U_TILDE, FIELD_P, FIELD_PHI, FIELD_PHI_HAT] {
        let path = dir.join(snapshot_file_name(prefix, id));
        let (found_id, t, mu, data) = read_snapshot_matrix(&path)?;
        if found_id != id {
            return Err(Error::IncompatibleArtifacts(format!(
                "{} holds field {found_id}, expected {id}",
                path.display()
            )));
        }
        if let Some(ref t0) = times {
            if t != *t0 {
                return Err(Error::IncompatibleArtifacts(
                    "snapshot files of one run have different time stamps".into(),
                ));
            }
        } else {
            times = Some(t);
            param = mu;
        }
        matrices.push(data);
    }
    let mut it = matrices.into_iter();
    Ok(SnapshotSet {
        times: times.unwrap(),
        param,
        u: it.next().unwrap(),
        u_tilde: it.next().unwrap(),
        p: it.next().unwrap(),
        phi: it.next().unwrap(),
        phi_hat: it.next().unwrap(),
    })
}

/// Persists a basis in the snapshot container: columns are modes, the
/// parameter slot holds the inner-product code, and the full eigenvalue
/// spectrum follows the data block.
pub fn write_basis(path: &Path, field_id: u32, basis: &PODBasis) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SNAP_MAGIC)?;
    write_u32(&mut w, BASIS_FIELD_OFFSET + field_id)?;
    write_u32(&mut w, basis.modes.nrows() as u32)?;
    write_u32(&mut w, basis.modes.ncols() as u32)?;
    // mode columns carry no time stamps; store the eigenvalue count instead
    write_f64_slice(&mut w, &vec![0.0; basis.modes.ncols()])?;
    write_f64(&mut w, basis.inner_product.code() as f64)?;
    write_matrix(&mut w, &basis.modes)?;
    write_u32(&mut w, basis.eigenvalues.len() as u32)?;
    write_f64_slice(&mut w, &basis.eigenvalues)?;
    w.flush()?;
    Ok(())
}

/// Reads a persisted basis: (field_id, basis).
pub fn read_basis(path: &Path) -> Result<(u32, PODBasis)> {
    let mut r = open_reader(path)?;
    check_magic(&mut r, SNAP_MAGIC, "basis")?;
    let tagged = read_u32(&mut r)?;
    if tagged < BASIS_FIELD_OFFSET {
        return Err(Error::IncompatibleArtifacts(
            "snapshot file given where a basis file was expected".into(),
        ));
    }
    let field_id = tagged - BASIS_FIELD_OFFSET;
    let dof_count = read_u32(&mut r)? as usize;
    let rank = read_u32(&mut r)? as usize;
    let _placeholder = read_f64_vec(&mut r, rank)?;
    let ip = InnerProduct::from_code(read_f64(&mut r)? as u32)?;
    let modes = read_matrix(&mut r, dof_count, rank)?;
    let n_eigs = read_u32(&mut r)? as usize;
    let eigenvalues = read_f64_vec(&mut r, n_eigs)?;
    Ok((
        field_id,
        PODBasis {
            modes,
            eigenvalues,
            inner_product: ip,
        },
    ))
}

/// Writes the five bases of one reduction, with sidecars.
pub fn write_bases(dir: &Path, prefix: &str, bases: &ROMBases, hash: &str) -> Result<()> {
    let fields = [
        (FIELD_U, &bases.u),
        (FIELD_U_TILDE, &bases.u_tilde),
        (FIELD_P, &bases.p),
        (FIELD_PHI, &bases.phi),
        (FIELD_PHI_HAT, &bases.phi_hat),
    ];
    for (id, basis) in fields {
        let path = dir.join(format!("{prefix}_{}.basis", basis_suffix(id)));
        write_basis(&path, id, basis)?;
        write_sidecar(&path, hash)?;
    }
    Ok(())
}

fn basis_suffix(field_id: u32) -> &'static str {
    match field_id {
        FIELD_U => "u",
        FIELD_U_TILDE => "u_tilde",
        FIELD_P => "p",
        FIELD_PHI => "phi",
        _ => "phi_hat",
    }
}

/// Reads the five bases of one reduction.
pub fn read_bases(dir: &Path, prefix: &str) -> Result<ROMBases> {
    let mut out = Vec::new();
    for id in [FIELD_U, FIELD_U_TILDE, FIELD_P, FIELD_PHI, FIELD_PHI_HAT] {
        let path = dir.join(format!("{prefix}_{}.basis", basis_suffix(id)));
        let (found, basis) = read_basis(&path)?;
        if found != id {
            return Err(Error::IncompatibleArtifacts(format!(
                "{} holds basis for field {found}, expected {id}",
                path.display()
            )));
        }
        out.push(basis);
    }
    let mut it = out.into_iter();
    Ok(ROMBases {
        u: it.next().unwrap(),
        u_tilde: it.next().unwrap(),
        p: it.next().unwrap(),
        phi: it.next().unwrap(),
        phi_hat: it.next().unwrap(),
    })
}

/// Writes the projected operators.
pub fn write_reduced_ops(path: &Path, ops: &ReducedOperators) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(OPS_MAGIC)?;
    for dim in [
        ops.r_u,
        ops.r_u_tilde,
        ops.r_p,
        ops.r_phi,
        ops.r_phi_hat,
        ops.qoi.flux.len(),
    ] {
        write_u32(&mut w, dim as u32)?;
    }
    write_matrix(&mut w, &ops.dir)?;
    write_matrix(&mut w, &ops.mass_ut)?;
    write_matrix(&mut w, &ops.stiff_ut)?;
    for c in &ops.conv {
        write_matrix(&mut w, c)?;
    }
    write_matrix(&mut w, &ops.cross_mass)?;
    write_matrix(&mut w, &ops.pres_coupling)?;
    write_f64_slice(&mut w, ops.lift_dir.as_slice())?;
    write_f64_slice(&mut w, ops.lift_mass.as_slice())?;
    write_f64_slice(&mut w, ops.lift_stiff.as_slice())?;
    write_matrix(&mut w, &ops.lift_conv)?;
    write_f64_slice(&mut w, ops.forcing.as_slice())?;
    write_matrix(&mut w, &ops.trace_mass)?;
    write_matrix(&mut w, &ops.trace_stiff)?;
    write_matrix(&mut w, &ops.trace_div)?;
    write_matrix(&mut w, &ops.corr_stiff)?;
    write_matrix(&mut w, &ops.corr_div)?;
    write_matrix(&mut w, &ops.corr_ext)?;
    write_matrix(&mut w, &ops.mass_u)?;
    write_matrix(&mut w, &ops.update_cross)?;
    write_matrix(&mut w, &ops.grad_phi)?;
    write_matrix(&mut w, &ops.grad_ext)?;
    write_matrix(&mut w, &ops.pres_phi)?;
    write_matrix(&mut w, &ops.pres_ext)?;
    write_matrix(&mut w, &ops.qoi.mass_u)?;
    write_matrix(&mut w, &ops.qoi.quad_inlet)?;
    write_f64_slice(&mut w, ops.qoi.pres_inlet.as_slice())?;
    for k in 0..ops.qoi.flux.len() {
        write_f64_slice(&mut w, ops.qoi.flux[k].as_slice())?;
        write_matrix(&mut w, &ops.qoi.quad_outlet[k])?;
        write_f64_slice(&mut w, ops.qoi.pres_outlet[k].as_slice())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the projected operators.
pub fn read_reduced_ops(path: &Path) -> Result<ReducedOperators> {
    use nalgebra::DVector;
    let mut r = open_reader(path)?;
    check_magic(&mut r, OPS_MAGIC, "reduced-operator")?;
    let r_u = read_u32(&mut r)? as usize;
    let r_ut = read_u32(&mut r)? as usize;
    let r_p = read_u32(&mut r)? as usize;
    let r_phi = read_u32(&mut r)? as usize;
    let r_phi_hat = read_u32(&mut r)? as usize;
    let n_out = read_u32(&mut r)? as usize;

    let dir = read_matrix(&mut r, r_ut, r_ut)?;
    let mass_ut = read_matrix(&mut r, r_ut, r_ut)?;
    let stiff_ut = read_matrix(&mut r, r_ut, r_ut)?;
    let mut conv = Vec::with_capacity(r_u);
    for _ in 0..r_u {
        conv.push(read_matrix(&mut r, r_ut, r_ut)?);
    }
    let cross_mass = read_matrix(&mut r, r_ut, r_u)?;
    let pres_coupling = read_matrix(&mut r, r_ut, r_p)?;
    let lift_dir = DVector::from_vec(read_f64_vec(&mut r, r_ut)?);
    let lift_mass = DVector::from_vec(read_f64_vec(&mut r, r_ut)?);
    let lift_stiff = DVector::from_vec(read_f64_vec(&mut r, r_ut)?);
    let lift_conv = read_matrix(&mut r, r_ut, r_u)?;
    let forcing = DVector::from_vec(read_f64_vec(&mut r, r_ut)?);
    let trace_mass = read_matrix(&mut r, r_phi_hat, r_phi_hat)?;
    let trace_stiff = read_matrix(&mut r, r_phi_hat, r_phi_hat)?;
    let trace_div = read_matrix(&mut r, r_phi_hat, r_ut)?;
    let corr_stiff = read_matrix(&mut r, r_phi, r_phi)?;
    let corr_div = read_matrix(&mut r, r_phi, r_ut)?;
    let corr_ext = read_matrix(&mut r, r_phi, r_phi_hat)?;
    let mass_u = read_matrix(&mut r, r_u, r_u)?;
    let update_cross = read_matrix(&mut r, r_u, r_ut)?;
    let grad_phi = read_matrix(&mut r, r_u, r_phi)?;
    let grad_ext = read_matrix(&mut r, r_u, r_phi_hat)?;
    let pres_phi = read_matrix(&mut r, r_p, r_phi)?;
    let pres_ext = read_matrix(&mut r, r_p, r_phi_hat)?;
    let qoi_mass_u = read_matrix(&mut r, r_u, r_u)?;
    let quad_inlet = read_matrix(&mut r, r_u, r_u)?;
    let pres_inlet = DVector::from_vec(read_f64_vec(&mut r, r_p)?);
    let mut flux = Vec::new();
    let mut quad_outlet = Vec::new();
    let mut pres_outlet = Vec::new();
    for _ in 0..n_out {
        flux.push(DVector::from_vec(read_f64_vec(&mut r, r_u)?));
        quad_outlet.push(read_matrix(&mut r, r_u, r_u)?);
        pres_outlet.push(DVector::from_vec(read_f64_vec(&mut r, r_p)?));
    }

    Ok(ReducedOperators {
        r_u,
        r_u_tilde: r_ut,
        r_p,
        r_phi,
        r_phi_hat,
        dir,
        mass_ut,
        stiff_ut,
        conv,
        cross_mass,
        pres_coupling,
        lift_dir,
        lift_mass,
        lift_stiff,
        lift_conv,
        forcing,
        trace_mass,
        trace_stiff,
        trace_div,
        corr_stiff,
        corr_div,
        corr_ext,
        mass_u,
        update_cross,
        grad_phi,
        grad_ext,
        pres_phi,
        pres_ext,
        qoi: ReducedQoI {
            mass_u: qoi_mass_u,
            flux,
            quad_inlet,
            quad_outlet,
            pres_inlet,
            pres_outlet,
        },
    })
}

/// Writes a fitted surrogate.
pub fn write_rbf_model(path: &Path, model: &RBFModel) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(RBF_MAGIC)?;
    w.write_all(&[model.mode.code()])?;
    let dim = model.input_dim();
    write_u32(&mut w, dim as u32)?;
    write_u32(&mut w, model.n_centers() as u32)?;
    write_u32(&mut w, model.n_outputs() as u32)?;
    write_f64_slice(&mut w, &model.scaling.lo)?;
    write_f64_slice(&mut w, &model.scaling.span)?;
    for c in &model.centers {
        write_f64_slice(&mut w, c)?;
    }
    write_matrix(&mut w, &model.weights)?;
    write_f64(&mut w, model.ridge)?;
    write_f64(&mut w, model.condition_estimate)?;
    w.flush()?;
    Ok(())
}

/// Reads a fitted surrogate.
pub fn read_rbf_model(path: &Path) -> Result<RBFModel> {
    let mut r = open_reader(path)?;
    check_magic(&mut r, RBF_MAGIC, "surrogate")?;
    let mut mode_byte = [0u8; 1];
    r.read_exact(&mut mode_byte)?;
    let mode = RBFMode::from_code(mode_byte[0])?;
    let dim = read_u32(&mut r)? as usize;
    let n_centers = read_u32(&mut r)? as usize;
    let n_outputs = read_u32(&mut r)? as usize;
    let lo = read_f64_vec(&mut r, dim)?;
    let span = read_f64_vec(&mut r, dim)?;
    let mut centers = Vec::with_capacity(n_centers);
    for _ in 0..n_centers {
        centers.push(read_f64_vec(&mut r, dim)?);
    }
    let weights = read_matrix(&mut r, n_centers, n_outputs)?;
    let ridge = read_f64(&mut r)?;
    let condition_estimate = read_f64(&mut r)?;
    Ok(RBFModel {
        mode,
        centers,
        weights,
        scaling: CoordScaling { lo, span },
        ridge,
        condition_estimate,
    })
}
