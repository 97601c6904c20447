//! Experiment pipelines: full-order sweeps, basis construction, offline
//! projection, online runs, and comparison reports, all driven by a plain
//! `key = value` configuration file with `[section]` headers.

use std::collections::HashMap;
use std::path::PathBuf;
use std::time::Duration;

use crate::error::{Error, Result};
use crate::fom::{inlet_span, run_fom, FOMConfig, FOMOperators, SnapshotSet};
use crate::hybrid::{run_hybrid, HybridModel};
use crate::io;
use crate::mesh::{generate_bifurcated_tube, generate_channel, load_mesh, save_mesh, TriMesh};
use crate::pod::{energy_ratio, reconstruct};
use crate::qoi::{l2l2_relative_error, qoi_relative_error_l2time};
use crate::rbf::{
    build_training_coef, build_training_param_time, rbf_fit, CorrectionField, RBFMode,
};
use crate::rom::{
    assemble_reduced, build_bases, build_bases_clamped, rom_initialize, run_rom, BasisGrams,
    ROMBases, ROMConfig, ROMRanks, ReducedOperators,
};

/// Geometry source for an experiment.
#[derive(Debug, Clone, PartialEq)]
pub enum Scenario {
    Channel {
        length: f64,
        height: f64,
        nx: usize,
        ny: usize,
    },
    Bifurcated {
        nx: usize,
    },
    MeshFile(PathBuf),
}

/// Which online model the `rom`/`hybrid` commands run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ROMVariant {
    Intrusive,
    HybridParam,
    HybridExtrap,
}

impl ROMVariant {
    pub fn parse(s: &str) -> Result<ROMVariant> {
        match s {
            "intrusive" => Ok(ROMVariant::Intrusive),
            "hybrid-param" => Ok(ROMVariant::HybridParam),
            "hybrid-extrap" => Ok(ROMVariant::HybridExtrap),
            other => Err(Error::Config(format!(
                "unknown rom variant '{other}' (expected intrusive, hybrid-param, hybrid-extrap)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ROMVariant::Intrusive => "intrusive",
            ROMVariant::HybridParam => "hybrid-param",
            ROMVariant::HybridExtrap => "hybrid-extrap",
        }
    }
}

/// Everything a pipeline run needs. Reynolds numbers are converted to
/// viscosities through Re = U D / nu with D the inlet diameter.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub mean_velocity: f64,
    pub re_train: Vec<f64>,
    pub re_test: Vec<f64>,
    pub dt: f64,
    pub t_end: f64,
    pub window: (f64, f64),
    pub stride: usize,
    pub ramp_steps: usize,
    pub ranks: ROMRanks,
    pub variant: ROMVariant,
    pub rbf_ridge: f64,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.re_train.is_empty() {
            return Err(Error::Config("re_train must list at least one value".into()));
        }
        if !(self.dt > 0.0) || !(self.t_end > 0.0) {
            return Err(Error::Config("dt and t_end must be positive".into()));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        if self.window.1 < self.window.0 {
            return Err(Error::Config("snapshot window end precedes its start".into()));
        }
        if self.variant == ROMVariant::HybridParam {
            let lo = self.re_train.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = self
                .re_train
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            for &re in &self.re_test {
                if re < lo || re > hi {
                    return Err(Error::Config(format!(
                        "query Re {re} is outside the training range [{lo}, {hi}]"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Canonical text form; its hash ties artifacts together.
    pub fn canonical_text(&self) -> String {
        format!(
            "scenario={:?};u={};re_train={:?};re_test={:?};dt={};t_end={};window={:?};stride={};ramp={};ranks={:?};variant={};ridge={};seed={}",
            self.scenario,
            self.mean_velocity,
            self.re_train,
            self.re_test,
            self.dt,
            self.t_end,
            self.window,
            self.stride,
            self.ramp_steps,
            self.ranks,
            self.variant.as_str(),
            self.rbf_ridge,
            self.seed
        )
    }

    pub fn hash(&self) -> String {
        io::config_hash(&self.canonical_text())
    }

    pub fn build_mesh(&self) -> Result<TriMesh> {
        match &self.scenario {
            Scenario::Channel {
                length,
                height,
                nx,
                ny,
            } => generate_channel(*length, *height, *nx, *ny),
            Scenario::Bifurcated { nx } => generate_bifurcated_tube(*nx),
            Scenario::MeshFile(path) => load_mesh(path),
        }
    }

    /// nu for a given Reynolds number on this geometry.
    pub fn viscosity(&self, mesh: &TriMesh, re: f64) -> Result<f64> {
        if !(re > 0.0) {
            return Err(Error::Config(format!("Reynolds number must be positive, got {re}")));
        }
        let (lo, hi) = inlet_span(mesh)?;
        Ok(self.mean_velocity * (hi - lo) / re)
    }

    pub fn fom_config(&self, mesh: &TriMesh, re: f64) -> Result<FOMConfig> {
        let nu = self.viscosity(mesh, re)?;
        let mut cfg = FOMConfig::new(nu, self.dt, self.t_end, self.mean_velocity);
        cfg.snapshot_window = self.window;
        cfg.snapshot_stride = self.stride;
        cfg.ramp_steps = self.ramp_steps;
        cfg.param = re;
        Ok(cfg)
    }
}

/// Compact decimal form used in artifact file names (500 -> "500",
/// 467.5 -> "467.5").
pub fn format_param(re: f64) -> String {
    let s = format!("{re}");
    s.replace('.', "p")
}

fn fom_prefix(re: f64) -> String {
    format!("fom_re{}", format_param(re))
}

// ---------------------------------------------------------------------------
// Configuration file parsing
// ---------------------------------------------------------------------------

/// Parses `[section]` / `key = value` text into a flat `section.key` map.
pub fn parse_key_values(text: &str) -> Result<HashMap<String, String>> {
    let mut out = HashMap::new();
    let mut section = String::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            if !line.ends_with(']') {
                return Err(Error::Config(format!(
                    "line {}: unterminated section header '{raw}'",
                    lineno + 1
                )));
            }
            section = line[1..line.len() - 1].trim().to_string();
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected 'key = value', got '{raw}'",
                lineno + 1
            )));
        };
        let full_key = if section.is_empty() {
            key.trim().to_string()
        } else {
            format!("{section}.{}", key.trim())
        };
        out.insert(full_key, value.trim().to_string());
    }
    Ok(out)
}

struct ConfigReader {
    map: HashMap<String, String>,
}

impl ConfigReader {
    fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("{key}: expected a number, got '{v}'"))),
        }
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("{key}: expected an integer, got '{v}'"))),
        }
    }

    fn f64_list(&self, key: &str) -> Result<Vec<f64>> {
        match self.get(key) {
            None => Ok(Vec::new()),
            Some(v) => v
                .split(',')
                .map(|p| {
                    p.trim().parse().map_err(|_| {
                        Error::Config(format!("{key}: expected numbers, got '{p}'"))
                    })
                })
                .collect(),
        }
    }

    fn rank_or(&self, key: &str, default: Option<usize>) -> Result<Option<usize>> {
        match self.get(key) {
            None => Ok(default),
            Some("full") => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| {
                Error::Config(format!("{key}: expected an integer or 'full', got '{v}'"))
            }),
        }
    }
}

/// Builds an experiment configuration from config text, applying
/// `overrides` (same `section.key` form) on top.
pub fn parse_experiment_config(
    text: &str,
    overrides: &[(String, String)],
) -> Result<ExperimentConfig> {
    let mut map = parse_key_values(text)?;
    for (k, v) in overrides {
        map.insert(k.clone(), v.clone());
    }
    let r = ConfigReader { map };

    let scenario = match r.get("scenario.kind").unwrap_or("channel") {
        "channel" => Scenario::Channel {
            length: r.f64_or("scenario.length", 4.0)?,
            height: r.f64_or("scenario.height", 1.0)?,
            nx: r.usize_or("scenario.nx", 16)?,
            ny: r.usize_or("scenario.ny", 4)?,
        },
        "bifurcated" => Scenario::Bifurcated {
            nx: r.usize_or("scenario.nx", 32)?,
        },
        "mesh-file" => Scenario::MeshFile(PathBuf::from(r.get("scenario.path").ok_or_else(
            || Error::Config("scenario.path is required for kind = mesh-file".into()),
        )?)),
        other => {
            return Err(Error::Config(format!(
                "scenario.kind: unknown scenario '{other}'"
            )))
        }
    };

    let t_end = r.f64_or("time.t_end", 1.0)?;
    let uniform = r.rank_or("rom.ranks", None)?;
    let ranks = ROMRanks {
        r_u: r.rank_or("rom.rank_u", uniform)?,
        r_u_tilde: r.rank_or("rom.rank_u_tilde", uniform)?,
        r_p: r.rank_or("rom.rank_p", uniform)?,
        r_phi: r.rank_or("rom.rank_phi", uniform)?,
        r_phi_hat: r.rank_or("rom.rank_phi_hat", uniform)?,
    };
    let cfg = ExperimentConfig {
        scenario,
        mean_velocity: r.f64_or("flow.mean_velocity", 1.0)?,
        re_train: {
            let v = r.f64_list("flow.re_train")?;
            if v.is_empty() {
                vec![100.0]
            } else {
                v
            }
        },
        re_test: r.f64_list("flow.re_test")?,
        dt: r.f64_or("time.dt", 0.02)?,
        t_end,
        window: (
            r.f64_or("time.window_start", 0.0)?,
            r.f64_or("time.window_end", t_end)?,
        ),
        stride: r.usize_or("time.stride", 1)?,
        ramp_steps: r.usize_or("time.ramp_steps", 10)?,
        ranks,
        variant: ROMVariant::parse(r.get("rom.variant").unwrap_or("intrusive"))?,
        rbf_ridge: r.f64_or("rom.ridge", 0.0)?,
        output_dir: PathBuf::from(r.get("output.dir").unwrap_or("out")),
        seed: r.usize_or("output.seed", 42)? as u64,
    };
    cfg.validate()?;
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Pipeline commands
// ---------------------------------------------------------------------------

/// Result summary of the full-order sweep.
pub struct FOMSweep {
    /// (Re, snapshots recorded, wall time).
    pub runs: Vec<(f64, usize, Duration)>,
}

/// Runs the full-order model for every training and test parameter and
/// writes snapshots, QoI series, and a timing report.
pub fn cmd_fom(cfg: &ExperimentConfig) -> Result<FOMSweep> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let mesh = cfg.build_mesh()?;
    save_mesh(&mesh, &cfg.output_dir.join("mesh.txt"))?;
    let hash = cfg.hash();

    let mut res = Vec::new();
    let mut all: Vec<f64> = cfg.re_train.clone();
    for &re in &cfg.re_test {
        if !all.iter().any(|&x| x == re) {
            all.push(re);
        }
    }
    let mut timing = String::from("model = fom\nre, n_steps, wall_seconds\n");
    for &re in &all {
        let fom_cfg = cfg.fom_config(&mesh, re)?;
        let run = run_fom(&mesh, &fom_cfg)?;
        let prefix = fom_prefix(re);
        io::write_snapshot_set(&cfg.output_dir, &prefix, &run.snapshots, &hash)?;
        let mut csv = Vec::new();
        run.qoi.write_csv(&mut csv)?;
        std::fs::write(cfg.output_dir.join(format!("{prefix}_qoi.csv")), csv)?;
        timing.push_str(&format!(
            "{re}, {}, {:.6}\n",
            fom_cfg.n_steps(),
            run.wall_time.as_secs_f64()
        ));
        res.push((re, run.snapshots.len(), run.wall_time));
    }
    std::fs::write(cfg.output_dir.join("fom_timing.txt"), timing)?;
    Ok(FOMSweep { runs: res })
}

fn load_training_sets(cfg: &ExperimentConfig) -> Result<Vec<SnapshotSet>> {
    let mut sets = Vec::new();
    for &re in &cfg.re_train {
        sets.push(io::read_snapshot_set(&cfg.output_dir, &fom_prefix(re))?);
    }
    Ok(sets)
}

/// Builds the bases from the training snapshots; writes basis files and the
/// eigenvalue / captured-energy report.
pub fn cmd_pod(cfg: &ExperimentConfig) -> Result<ROMBases> {
    cfg.validate()?;
    let mesh = cfg.build_mesh()?;
    let sets = load_training_sets(cfg)?;
    let merged = SnapshotSet::concat(&sets)?;
    let fom_cfg = cfg.fom_config(&mesh, cfg.re_train[0])?;
    let ops = FOMOperators::new(&mesh, &fom_cfg)?;
    let bases = build_bases(&ops, &merged, &cfg.ranks)?;

    let hash = cfg.hash();
    io::write_bases(&cfg.output_dir, "pod", &bases, &hash)?;

    let mut csv = String::from("field,index,eigenvalue,energy_percent\n");
    for (name, basis) in [
        ("u", &bases.u),
        ("u_tilde", &bases.u_tilde),
        ("p", &bases.p),
        ("phi", &bases.phi),
        ("phi_hat", &bases.phi_hat),
    ] {
        for r in 1..=basis.eigenvalues.len() {
            csv.push_str(&format!(
                "{name},{r},{:e},{:.12}\n",
                basis.eigenvalues[r - 1],
                energy_ratio(&basis.eigenvalues, r)
            ));
        }
    }
    std::fs::write(cfg.output_dir.join("pod_eigenvalues.csv"), csv)?;
    Ok(bases)
}

/// Projects the full-order operators onto the stored bases and, for hybrid
/// variants, fits the correction surrogates; writes all offline artifacts.
pub fn cmd_rom_offline(cfg: &ExperimentConfig) -> Result<ReducedOperators> {
    cfg.validate()?;
    let mesh = cfg.build_mesh()?;
    let hash = cfg.hash();
    let bases = io::read_bases(&cfg.output_dir, "pod")?;
    let fom_cfg = cfg.fom_config(&mesh, cfg.re_train[0])?;
    let ops = FOMOperators::new(&mesh, &fom_cfg)?;
    let rops = assemble_reduced(&mesh, &ops, &bases)?;
    let ops_path = cfg.output_dir.join("ops.rom");
    io::write_reduced_ops(&ops_path, &rops)?;
    io::write_sidecar(&ops_path, &hash)?;

    if cfg.variant != ROMVariant::Intrusive {
        let sets = load_training_sets(cfg)?;
        let refs: Vec<&SnapshotSet> = sets.iter().collect();
        let grams = BasisGrams::new(&ops)?;
        let (table_c, table_c_hat) = match cfg.variant {
            ROMVariant::HybridParam => (
                build_training_param_time(&refs, CorrectionField::Volume, &bases.phi, &grams.pres_h1)?,
                build_training_param_time(
                    &refs,
                    CorrectionField::OutletTrace,
                    &bases.phi_hat,
                    &grams.trace_h1,
                )?,
            ),
            ROMVariant::HybridExtrap => (
                build_training_coef(
                    &refs,
                    &bases.u_tilde,
                    &grams.vel,
                    CorrectionField::Volume,
                    &bases.phi,
                    &grams.pres_h1,
                )?,
                build_training_coef(
                    &refs,
                    &bases.u_tilde,
                    &grams.vel,
                    CorrectionField::OutletTrace,
                    &bases.phi_hat,
                    &grams.trace_h1,
                )?,
            ),
            ROMVariant::Intrusive => unreachable!(),
        };
        let model_c = rbf_fit(&table_c, cfg.rbf_ridge)?;
        let model_c_hat = rbf_fit(&table_c_hat, cfg.rbf_ridge)?;
        for (name, model) in [("rbf_c.rbf", &model_c), ("rbf_c_hat.rbf", &model_c_hat)] {
            let path = cfg.output_dir.join(name);
            io::write_rbf_model(&path, model)?;
            io::write_sidecar(&path, &hash)?;
        }
    }
    Ok(rops)
}

/// Outcome of one online run at one query parameter.
pub struct OnlineReport {
    pub re: f64,
    pub variant: ROMVariant,
    pub velocity_error: f64,
    pub pressure_error: f64,
    /// (name, relative L2-in-time error) per scalar output.
    pub qoi_errors: Vec<(String, f64)>,
    pub online_time: Duration,
    pub fom_time: Duration,
    pub extrapolated_steps: usize,
}

impl OnlineReport {
    pub fn speedup(&self) -> f64 {
        self.fom_time.as_secs_f64() / self.online_time.as_secs_f64().max(1e-12)
    }
}

fn read_fom_wall_time(cfg: &ExperimentConfig, re: f64) -> Result<Duration> {
    let text = std::fs::read_to_string(cfg.output_dir.join("fom_timing.txt"))
        .map_err(|_| Error::MissingArtifact("fom_timing.txt (run the fom command first)".into()))?;
    for line in text.lines().skip(2) {
        let parts: Vec<&str> = line.split(',').map(|p| p.trim()).collect();
        if parts.len() == 3 {
            if let (Ok(r), Ok(s)) = (parts[0].parse::<f64>(), parts[2].parse::<f64>()) {
                if r == re {
                    return Ok(Duration::from_secs_f64(s));
                }
            }
        }
    }
    Err(Error::MissingArtifact(format!(
        "no full-order timing entry for Re = {re}"
    )))
}

fn load_hybrid_model(cfg: &ExperimentConfig, re: f64) -> Result<HybridModel> {
    let hash = cfg.hash();
    let path_c = cfg.output_dir.join("rbf_c.rbf");
    let path_c_hat = cfg.output_dir.join("rbf_c_hat.rbf");
    io::verify_sidecar(&path_c, &hash)?;
    io::verify_sidecar(&path_c_hat, &hash)?;
    let model_c = io::read_rbf_model(&path_c)?;
    let model_c_hat = io::read_rbf_model(&path_c_hat)?;
    let mode = match cfg.variant {
        ROMVariant::HybridParam => RBFMode::ParamTime,
        ROMVariant::HybridExtrap => RBFMode::CoefExtrapolation,
        ROMVariant::Intrusive => {
            return Err(Error::Config(
                "hybrid command requires a hybrid rom variant".into(),
            ))
        }
    };
    Ok(HybridModel {
        mode,
        mu_star: Some(re),
        model_c,
        model_c_hat,
    })
}

/// Runs the configured online model at each test parameter, comparing
/// against the stored full-order reference.
pub fn cmd_online(cfg: &ExperimentConfig) -> Result<Vec<OnlineReport>> {
    cfg.validate()?;
    let mesh = cfg.build_mesh()?;
    let hash = cfg.hash();
    let ops_path = cfg.output_dir.join("ops.rom");
    io::verify_sidecar(&ops_path, &hash)?;
    let rops = io::read_reduced_ops(&ops_path)?;
    let bases = io::read_bases(&cfg.output_dir, "pod")?;
    let queries: &[f64] = if cfg.re_test.is_empty() {
        &cfg.re_train
    } else {
        &cfg.re_test
    };

    let mut reports = Vec::new();
    for &re in queries {
        let fom_cfg = cfg.fom_config(&mesh, re)?;
        let fom_ops = FOMOperators::new(&mesh, &fom_cfg)?;
        let reference = io::read_snapshot_set(&cfg.output_dir, &fom_prefix(re))?;
        if reference.len() < 2 {
            return Err(Error::InvalidInput(
                "reference run holds fewer than 2 snapshots".into(),
            ));
        }
        let u0: Vec<f64> = reference.u.column(0).iter().copied().collect();
        let p0: Vec<f64> = reference.p.column(0).iter().copied().collect();
        let mut init = rom_initialize(&fom_ops, &bases, &u0, &p0)?;
        init.t = reference.times[0];
        // The reduced model steps at the full-order dt; with stride > 1 the
        // reference holds every stride-th state, so compare at those indices.
        let n_steps = (reference.len() - 1) * cfg.stride;
        let rom_cfg = ROMConfig {
            nu: fom_cfg.nu,
            dt: cfg.dt,
        };

        let (trajectory, qoi, online_time, extrapolated_steps) = match cfg.variant {
            ROMVariant::Intrusive => {
                let run = run_rom(&init, &rops, &rom_cfg, n_steps)?;
                (run.trajectory, run.qoi, run.online_time, 0)
            }
            _ => {
                let model = load_hybrid_model(cfg, re)?;
                let run = run_hybrid(&init, &rops, &rom_cfg, &model, n_steps)?;
                (
                    run.trajectory,
                    run.qoi,
                    run.online_time,
                    run.extrapolated_steps,
                )
            }
        };

        // Reconstruct and compare against the reference trajectory.
        let grams = BasisGrams::new(&fom_ops)?;
        let mut rec_u = Vec::new();
        let mut rec_p = Vec::new();
        let mut ref_u = Vec::new();
        let mut ref_p = Vec::new();
        for j in 1..reference.len() {
            let state = &trajectory[j * cfg.stride];
            rec_u.push(reconstruct(&bases.u, state.a.as_slice())?);
            rec_p.push(reconstruct(&bases.p, state.b.as_slice())?);
            ref_u.push(reference.u.column(j).iter().copied().collect::<Vec<f64>>());
            ref_p.push(reference.p.column(j).iter().copied().collect::<Vec<f64>>());
        }
        let velocity_error = l2l2_relative_error(&ref_u, &rec_u, &grams.vel)?;
        let pressure_error = l2l2_relative_error(&ref_p, &rec_p, &grams.pres_h1)?;

        // Scalar-output errors against the reference fields.
        let mut qoi_errors = Vec::new();
        {
            let seg0 = &fom_ops.outlet.segments;
            let mut ref_ek = Vec::new();
            let mut ref_q: Vec<Vec<f64>> = vec![Vec::new(); seg0.len()];
            let mut ref_cd: Vec<Vec<f64>> = vec![Vec::new(); seg0.len()];
            for j in 1..reference.len() {
                let u: Vec<f64> = reference.u.column(j).iter().copied().collect();
                let p: Vec<f64> = reference.p.column(j).iter().copied().collect();
                ref_ek.push(crate::qoi::kinetic_energy(&fom_ops.mass_vel, &u));
                for (k, seg) in seg0.iter().enumerate() {
                    ref_q[k].push(crate::qoi::outflux(&mesh, &fom_ops.vel_map, &u, seg)?);
                    ref_cd[k].push(crate::qoi::charge_drop(
                        &mesh,
                        &fom_ops.vel_map,
                        &u,
                        &p,
                        seg,
                    )?);
                }
            }
            let times = &reference.times[1..];
            let sample = |series: &[f64]| -> Vec<f64> {
                (1..reference.len())
                    .map(|j| series[j * cfg.stride - 1])
                    .collect()
            };
            qoi_errors.push((
                "E_kin".to_string(),
                qoi_relative_error_l2time(times, &ref_ek, &sample(&qoi.kinetic_energy))?,
            ));
            for k in 0..seg0.len() {
                qoi_errors.push((
                    format!("Q_outflux_{k}"),
                    qoi_relative_error_l2time(times, &ref_q[k], &sample(&qoi.outflux[k]))?,
                ));
                qoi_errors.push((
                    format!("CD_charge_{k}"),
                    qoi_relative_error_l2time(times, &ref_cd[k], &sample(&qoi.charge_drop[k]))?,
                ));
            }
        }

        // Persist the online QoI series and a per-run report.
        let prefix = format!("{}_re{}", cfg.variant.as_str(), format_param(re));
        let mut csv = Vec::new();
        qoi.write_csv(&mut csv)?;
        std::fs::write(cfg.output_dir.join(format!("{prefix}_qoi.csv")), csv)?;

        let fom_time = read_fom_wall_time(cfg, re)?;
        let report = OnlineReport {
            re,
            variant: cfg.variant,
            velocity_error,
            pressure_error,
            qoi_errors,
            online_time,
            fom_time,
            extrapolated_steps,
        };
        std::fs::write(
            cfg.output_dir.join(format!("{prefix}_report.txt")),
            render_report(&report),
        )?;
        reports.push(report);
    }
    Ok(reports)
}

fn render_report(r: &OnlineReport) -> String {
    let mut s = String::new();
    s.push_str(&format!("model = {}\n", r.variant.as_str()));
    s.push_str(&format!("re = {}\n", r.re));
    s.push_str(&format!("velocity_l2l2_error = {:e}\n", r.velocity_error));
    s.push_str(&format!("pressure_l2l2_error = {:e}\n", r.pressure_error));
    for (name, e) in &r.qoi_errors {
        s.push_str(&format!("qoi_error_{name} = {e:e}\n"));
    }
    s.push_str(&format!(
        "online_seconds = {:.6}\nfom_seconds = {:.6}\nspeedup = {:.2}\n",
        r.online_time.as_secs_f64(),
        r.fom_time.as_secs_f64(),
        r.speedup()
    ));
    s.push_str(&format!("extrapolated_steps = {}\n", r.extrapolated_steps));
    s
}

/// One row of the error-vs-rank study.
pub struct RankErrorPoint {
    pub r: usize,
    pub velocity_error: f64,
    pub online_seconds: f64,
}

/// Rebuilds the reduction at several uniform ranks and records the velocity
/// error of the intrusive model at the first query parameter; writes
/// `error_vs_r.csv`.
pub fn cmd_compare(cfg: &ExperimentConfig, rank_list: &[usize]) -> Result<Vec<RankErrorPoint>> {
    cfg.validate()?;
    let mesh = cfg.build_mesh()?;
    let sets = load_training_sets(cfg)?;
    let merged = SnapshotSet::concat(&sets)?;
    let re = *cfg.re_test.first().unwrap_or(&cfg.re_train[0]);
    let fom_cfg = cfg.fom_config(&mesh, re)?;
    let fom_ops = FOMOperators::new(&mesh, &fom_cfg)?;
    let reference = io::read_snapshot_set(&cfg.output_dir, &fom_prefix(re))?;
    let grams = BasisGrams::new(&fom_ops)?;

    let mut points = Vec::new();
    for &r in rank_list {
        let bases = build_bases_clamped(&fom_ops, &merged, r)?;
        let rops = assemble_reduced(&mesh, &fom_ops, &bases)?;
        let u0: Vec<f64> = reference.u.column(0).iter().copied().collect();
        let p0: Vec<f64> = reference.p.column(0).iter().copied().collect();
        let mut init = rom_initialize(&fom_ops, &bases, &u0, &p0)?;
        init.t = reference.times[0];
        let rom_cfg = ROMConfig {
            nu: fom_cfg.nu,
            dt: cfg.dt,
        };
        let run = run_rom(&init, &rops, &rom_cfg, (reference.len() - 1) * cfg.stride)?;
        let mut rec_u = Vec::new();
        let mut ref_u = Vec::new();
        for j in 1..reference.len() {
            let state = &run.trajectory[j * cfg.stride];
            rec_u.push(reconstruct(&bases.u, state.a.as_slice())?);
            ref_u.push(reference.u.column(j).iter().copied().collect::<Vec<f64>>());
        }
        points.push(RankErrorPoint {
            r,
            velocity_error: l2l2_relative_error(&ref_u, &rec_u, &grams.vel)?,
            online_seconds: run.online_time.as_secs_f64(),
        });
    }

    let mut csv = String::from("r,velocity_l2l2_error,online_seconds\n");
    for p in &points {
        csv.push_str(&format!("{},{:e},{:.6}\n", p.r, p.velocity_error, p.online_seconds));
    }
    std::fs::write(cfg.output_dir.join("error_vs_r.csv"), csv)?;
    Ok(points)
}

/// Collects the per-run reports into one summary with a speed-up table.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<String> {
    let dir = &cfg.output_dir;
    let mut out = String::from("# Experiment summary\n\n");
    let timing = dir.join("fom_timing.txt");
    if timing.exists() {
        out.push_str("## Full-order timings\n");
        out.push_str(&std::fs::read_to_string(timing)?);
        out.push('\n');
    }
    out.push_str("## Online runs\n");
    let mut found = false;
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.filter_map(|e| e.ok()).collect();
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with("_report.txt") {
            found = true;
            out.push_str(&format!("\n### {name}\n"));
            out.push_str(&std::fs::read_to_string(entry.path())?);
        }
    }
    if !found {
        out.push_str("(no online runs found)\n");
    }
    let evr = dir.join("error_vs_r.csv");
    if evr.exists() {
        out.push_str("\n## Error vs retained modes\n");
        out.push_str(&std::fs::read_to_string(evr)?);
    }
    let path = dir.join("summary.txt");
    std::fs::write(&path, &out)?;
    Ok(out)
}
