//! CSV emission. Floats are written with 17 significant digits.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use oqbm_core::moments::MomentTrajectory;
use oqbm_core::observables::TimeSeries;
use oqbm_core::oqbm::WignerField;
use oqbm_core::phase_space::EliminationReport;

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_rows(path: &Path, header: &str, rows: impl Iterator<Item = Vec<f64>>) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{header}")?;
    for row in rows {
        let line: Vec<String> = row.into_iter().map(num).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()
}

/// `snap_t{time}.csv`, with the time printed in its shortest exact form.
pub fn snapshot_name(t: f64) -> String {
    format!("snap_t{t}.csv")
}

pub fn write_snapshot(dir: &Path, f: &WignerField<f64>) -> io::Result<PathBuf> {
    let path = dir.join(snapshot_name(f.t));
    let [wp, wm, cr, ci] = f.components();
    let x = f.grid().nodes();
    write_rows(
        &path,
        "x,W_plus,W_minus,C_R,C_I",
        (0..x.len()).map(|i| vec![x[i], wp[i], wm[i], cr[i], ci[i]]),
    )?;
    Ok(path)
}

pub fn write_timeseries(path: &Path, ts: &TimeSeries<f64>) -> io::Result<()> {
    write_rows(
        path,
        "t,norm,mean_x,variance,C_I_total,sigma_z",
        (0..ts.times.len()).map(|i| {
            vec![
                ts.times[i],
                ts.norm[i],
                ts.mean_x[i],
                ts.variance[i],
                ts.c_i_total[i],
                ts.sigma_z[i],
            ]
        }),
    )
}

/// `moments_n{n}.csv` for order `n`.
pub fn write_moments(dir: &Path, traj: &MomentTrajectory<f64>, n: usize) -> io::Result<PathBuf> {
    let path = dir.join(format!("moments_n{n}.csv"));
    let series = traj.order(n);
    write_rows(
        &path,
        "t,xnW_plus,xnW_minus,xnC_R,xnC_I",
        traj.times
            .iter()
            .zip(series)
            .map(|(&t, r)| vec![t, r[0], r[1], r[2], r[3]]),
    )?;
    Ok(path)
}

pub fn write_elimination(path: &Path, report: &EliminationReport<f64>) -> io::Result<()> {
    write_rows(
        path,
        "gamma_eff,t,l1_distance",
        report
            .rows
            .iter()
            .map(|r| vec![r.gamma_eff, r.t, r.l1_distance]),
    )
}

/// Per-snapshot diagnostics: `t,peaks,gaussian_residual`.
pub fn write_diagnostics(path: &Path, rows: &[(f64, usize, f64)]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "t,peaks,gaussian_residual")?;
    for (t, peaks, r) in rows {
        writeln!(w, "{},{peaks},{}", num(*t), num(*r))?;
    }
    w.flush()
}

/// Free-form `key,value` run summary.
pub fn write_summary(path: &Path, entries: &[(String, String)]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "key,value")?;
    for (k, v) in entries {
        writeln!(w, "{k},{v}")?;
    }
    w.flush()
}

pub fn fmt(v: f64) -> String {
    num(v)
}
