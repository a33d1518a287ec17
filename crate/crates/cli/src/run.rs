//! The `run`, `moments` and `phase-validate` commands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use oqbm_core::grid::SpatialGrid;
use oqbm_core::moments::{
    evolve_moments, initial_moments, moments_from_pde, HierarchyOptions, MomentSettings,
    MomentSystem, MomentTrajectory, MIN_NMAX,
};
use oqbm_core::observables::{self, default_windows, growth_exponent, PeakOptions};
use oqbm_core::oqbm::{evolve, initial_field, DtChoice, InitialKind, Integrator, Trajectory};
use oqbm_core::phase_space::{validate_elimination, EliminationConfig, EliminationReport};
use std::sync::Arc;

use crate::config::{ConfigError, MomentSection, Scenario};
use crate::output::{self, fmt};
use crate::CliError;

/// Command-line overrides applied on top of a scenario file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub grid_n: Option<usize>,
    pub dt: Option<f64>,
    pub nmax: Option<usize>,
    pub gamma_schedule: Option<Vec<f64>>,
}

impl Overrides {
    pub fn apply(&self, s: &Scenario) -> Scenario {
        let mut s = s.clone();
        if let Some(n) = self.grid_n {
            s.config.nodes = n;
            if let Some(p) = s.phase.as_mut() {
                p.x_nodes = n;
            }
        }
        if let Some(dt) = self.dt {
            s.config.integrator.dt = DtChoice::Fixed(dt);
            if let Some(m) = s.moments.as_mut() {
                m.dt = dt;
            }
        }
        if let Some(n) = self.nmax {
            let mut m = moment_section(&s);
            m.nmax = n;
            s.moments = Some(m);
        }
        if let (Some(g), Some(p)) = (&self.gamma_schedule, s.phase.as_mut()) {
            p.gamma_schedule = g.clone();
        }
        s
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub scenario: String,
    pub command: String,
    pub config_hash: String,
    pub version: String,
    pub wall_time_s: f64,
    pub files: Vec<String>,
}

fn manifest(
    s: &Scenario,
    command: &str,
    out: &Path,
    started: Instant,
    files: &[PathBuf],
) -> Result<RunManifest, CliError> {
    let digest = Sha256::digest(s.to_text().as_bytes());
    let m = RunManifest {
        scenario: s.name.clone(),
        command: command.to_string(),
        config_hash: digest.iter().map(|b| format!("{b:02x}")).collect(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_s: started.elapsed().as_secs_f64(),
        files: files
            .iter()
            .map(|p| {
                p.file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default()
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&m).map_err(std::io::Error::other)?;
    std::fs::write(out.join("manifest.json"), json)?;
    Ok(m)
}

/// Integrates the four-field PDE and writes snapshots, time series and diagnostics.
pub fn run(s: &Scenario, out: &Path) -> Result<(RunManifest, Trajectory<f64>), CliError> {
    let started = Instant::now();
    std::fs::create_dir_all(out)?;
    let traj = evolve(&s.config)?;
    let mut files = Vec::new();
    for snap in &traj.snapshots {
        files.push(output::write_snapshot(out, snap)?);
    }
    let ts_path = out.join("timeseries.csv");
    output::write_timeseries(&ts_path, &traj.series)?;
    files.push(ts_path);

    let diag_path = out.join("diagnostics.csv");
    output::write_diagnostics(&diag_path, &snapshot_diagnostics(&traj)?)?;
    files.push(diag_path);
    let summary_path = out.join("summary.csv");
    output::write_summary(&summary_path, &run_summary(s, &traj))?;
    files.push(summary_path);
    let m = manifest(s, "run", out, started, &files)?;
    Ok((m, traj))
}

fn snapshot_diagnostics(traj: &Trajectory<f64>) -> Result<Vec<(f64, usize, f64)>, CliError> {
    traj.snapshots
        .iter()
        .map(|snap| {
            let peaks = observables::peak_census(snap, &PeakOptions::default())?.count;
            Ok((snap.t, peaks, observables::gaussian_residual(snap)?))
        })
        .collect()
}

fn run_summary(s: &Scenario, traj: &Trajectory<f64>) -> Vec<(String, String)> {
    let mut d: Vec<(String, String)> = Vec::new();
    let mut put = |k: String, v: String| d.push((k, v));
    put("dt".into(), fmt(traj.dt));
    put("steps".into(), traj.steps.to_string());
    put("cfl_binding".into(), format!("{:?}", traj.cfl.binding));
    put(
        "cfl_diffusive_dt".into(),
        fmt(traj.cfl.diffusive_dt.unwrap_or(f64::INFINITY)),
    );
    put(
        "cfl_advective_dt".into(),
        fmt(traj.cfl.advective_dt.unwrap_or(f64::INFINITY)),
    );
    put(
        "abs_exponent_substitution".into(),
        s.config.initial.uses_abs_substitution().to_string(),
    );
    let ts = &traj.series;
    let max_trace = ts.norm.iter().fold(0.0f64, |m, &n| m.max((n - 1.0).abs()));
    put("max_trace_error".into(), fmt(max_trace));
    if let Some(&sz) = ts.sigma_z.last() {
        put("sigma_z_final".into(), fmt(sz));
    }
    if let Some(rate) = ts.sigma_z_rate_at_end() {
        put("sigma_z_rate_final".into(), fmt(rate));
    }
    for (label, w) in ["early", "late"].iter().zip(default_windows::<f64>()) {
        if let Ok(g) = growth_exponent(ts, w) {
            put(format!("growth_exponent_{label}"), fmt(g));
        }
    }
    let sz_max = ts.sigma_z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    put("sigma_z_max_abs".into(), fmt(sz_max));
    d
}

/// Initial moments: closed form for the Gaussian start, quadrature otherwise.
fn moment_initial(s: &Scenario, nmax: usize) -> Result<Vec<[f64; 4]>, CliError> {
    let ic = &s.config.initial;
    if ic.kind == InitialKind::Single && ic.k == 2.0 {
        return Ok((0..=nmax).map(|n| initial_moments(n, &ic.state)).collect());
    }
    let grid = Arc::new(SpatialGrid::new(s.config.half_width, s.config.nodes)?);
    let f0 = initial_field(ic, grid)?;
    (0..=nmax)
        .map(|n| Ok(moments_from_pde(std::slice::from_ref(&f0), n)?[0].1))
        .collect()
}

fn moment_section(s: &Scenario) -> MomentSection {
    s.moments.clone().unwrap_or(MomentSection {
        nmax: 8,
        dt: 1e-2,
        t_final: s.config.integrator.t_final,
        sample_every: 10,
        form: Default::default(),
    })
}

/// Result of [`moments_run`].
pub struct MomentOutcome {
    pub manifest: RunManifest,
    pub hierarchy: MomentTrajectory<f64>,
    /// `(t, n, hierarchy, pde)` at each PDE snapshot time, n ≤ 4.
    pub cross_check: Vec<(f64, usize, [f64; 4], [f64; 4])>,
}

/// Evolves the truncated hierarchy and cross-checks it against the PDE at the
/// scenario's snapshot times.
pub fn moments_run(s: &Scenario, out: &Path) -> Result<MomentOutcome, CliError> {
    let started = Instant::now();
    let sec = moment_section(s);
    if sec.nmax < MIN_NMAX {
        return Err(ConfigError::Value {
            line: 0,
            key: "moments.nmax".into(),
            reason: format!("must be at least {MIN_NMAX}, got {}", sec.nmax),
        }
        .into());
    }
    std::fs::create_dir_all(out)?;
    let opts = HierarchyOptions {
        form: sec.form,
        lambda1: s.config.integrator.options.lambda1,
    };
    let sys = MomentSystem::new(&s.config.coefficients, sec.nmax, opts)?;
    let init = moment_initial(s, sec.nmax)?;
    let mut settings = MomentSettings::new(sec.dt, sec.t_final);
    settings.sample_every = sec.sample_every;
    let hierarchy = evolve_moments(&sys, &init, &settings)?;

    let mut files = Vec::new();
    for n in 0..=sec.nmax.min(4) {
        files.push(output::write_moments(out, &hierarchy, n)?);
    }

    // PDE cross-check on the snapshot times inside the hierarchy horizon.
    let mut cfg = s.config.clone();
    let horizon = sec.t_final.min(cfg.integrator.t_final);
    cfg.integrator = Integrator {
        t_final: horizon,
        snapshots: cfg
            .integrator
            .snapshots
            .iter()
            .copied()
            .filter(|&t| t <= horizon)
            .collect(),
        ..cfg.integrator
    };
    let pde = evolve(&cfg)?;
    let mut cross_check = Vec::new();
    for n in 0..=sec.nmax.min(4) {
        for (t, v) in moments_from_pde(&pde.snapshots, n)? {
            let k = hierarchy
                .times
                .iter()
                .position(|&h| (h - t).abs() <= 1e-9 * t.abs().max(1.0));
            if let Some(k) = k {
                cross_check.push((t, n, hierarchy.moments[k][n], v));
            }
        }
    }
    let check_path = out.join("moments_check.csv");
    let names = ["W_plus", "W_minus", "C_R", "C_I"];
    let mut text = String::from("t,n,component,hierarchy,pde\n");
    for (t, n, h, p) in &cross_check {
        for c in 0..4 {
            text.push_str(&format!(
                "{},{n},{},{},{}\n",
                fmt(*t),
                names[c],
                fmt(h[c]),
                fmt(p[c])
            ));
        }
    }
    std::fs::write(&check_path, text)?;
    files.push(check_path);

    let diag_path = out.join("moments_summary.csv");
    output::write_summary(
        &diag_path,
        &[
            ("nmax".into(), sec.nmax.to_string()),
            ("spectral_bound".into(), fmt(hierarchy.spectral_bound)),
            ("dt".into(), fmt(sec.dt)),
        ],
    )?;
    files.push(diag_path);
    let manifest = manifest(s, "moments", out, started, &files)?;
    Ok(MomentOutcome {
        manifest,
        hierarchy,
        cross_check,
    })
}

/// Builds the elimination setup from a scenario's `[phase]` section.
pub fn elimination_config(s: &Scenario) -> Result<(EliminationConfig<f64>, Vec<f64>), CliError> {
    let p = s
        .phase
        .as_ref()
        .ok_or_else(|| ConfigError::Missing("phase.alpha".into()))?;
    Ok((
        EliminationConfig {
            coefficients: s.config.coefficients,
            alpha: p.alpha,
            initial: s.config.initial,
            x_half_width: p.x_half_width,
            x_nodes: p.x_nodes,
            p_half_width: None,
            p_nodes: p.p_nodes,
            t_final: p.t_final,
            times: p.times.clone(),
            dt_fraction: p.dt_fraction,
            compare_rotation: true,
        },
        p.gamma_schedule.clone(),
    ))
}

/// Runs the phase-space elimination check, one γ_eff per worker.
pub fn phase_validate(
    s: &Scenario,
    out: &Path,
) -> Result<(RunManifest, EliminationReport<f64>), CliError> {
    let started = Instant::now();
    let (cfg, schedule) = elimination_config(s)?;
    std::fs::create_dir_all(out)?;
    let parts: Vec<_> = schedule
        .par_iter()
        .map(|&g| validate_elimination(&cfg, &[g]))
        .collect();
    let mut report = EliminationReport { rows: Vec::new() };
    for p in parts {
        report.rows.extend(p?.rows);
    }
    let path = out.join("elimination_report.csv");
    output::write_elimination(&path, &report)?;
    let diag = out.join("elimination_details.csv");
    let mut text = String::from("gamma_eff,t,l1_distance_rotation,trace_error,dt,retried\n");
    for r in &report.rows {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            fmt(r.gamma_eff),
            fmt(r.t),
            fmt(r.l1_rotation.unwrap_or(f64::NAN)),
            fmt(r.trace_error),
            fmt(r.dt),
            r.retried
        ));
    }
    std::fs::write(&diag, text)?;
    let m = manifest(s, "phase-validate", out, started, &[path, diag])?;
    Ok((m, report))
}
