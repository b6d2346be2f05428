//! On-disk formats: trajectory CSV, certificate JSON, raw snapshots and the
//! wave-diagnostic CSV. All text output uses LF line endings and shortest
//! round-trip float formatting, so identical runs give identical bytes.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::certificates::CertificateReport;
use crate::grid::{DensityField, Grid};
use crate::integrator::{Snapshot, Trajectory};
use crate::waveframe::WaveReport;

pub const TRAJECTORY_HEADER: &str = "t,dbar,mass,M1,M2,M3,M4,p0,p2,p4,x_norm";
pub const WAVE_HEADER: &str = "t,lag,frame_distance";

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-5..1e16).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, out: W) -> io::Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "{TRAJECTORY_HEADER}")?;
    for r in &traj.rows {
        let cols = [
            r.t,
            r.dbar,
            r.mass,
            r.moments[0],
            r.moments[1],
            r.moments[2],
            r.moments[3],
            r.norms.p0,
            r.norms.p2,
            r.norms.p4,
            r.norms.x_norm,
        ];
        let line: Vec<String> = cols.iter().map(|v| fmt_f64(*v)).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()
}

pub fn write_wave_csv<W: Write>(report: &WaveReport, out: W) -> io::Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "{WAVE_HEADER}")?;
    for p in &report.points {
        let d = p.frame_distance.map(fmt_f64).unwrap_or_default();
        writeln!(w, "{},{},{}", fmt_f64(p.t), fmt_f64(p.lag), d)?;
    }
    w.flush()
}

pub fn certificates_json(report: &CertificateReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

fn snapshot_stem(step: usize) -> String {
    format!("snap_{step:08}")
}

/// Writes `snap_<step>.bin` (little-endian `f64` samples) and a
/// `snap_<step>.txt` sidecar with the grid and time. Returns the `.bin` path.
pub fn write_snapshot(dir: &Path, snap: &Snapshot) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let stem = snapshot_stem(snap.step);
    let bin = dir.join(format!("{stem}.bin"));
    let mut bytes = Vec::with_capacity(8 * snap.field.values().len());
    for v in snap.field.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&bin, bytes)?;
    let g = snap.field.grid();
    let meta = format!(
        "step = {}\nt = {}\nx_min = {}\nx_max = {}\nn_points = {}\n",
        snap.step,
        fmt_f64(snap.t),
        fmt_f64(g.x_min()),
        fmt_f64(g.x_max()),
        g.n_points()
    );
    fs::write(dir.join(format!("{stem}.txt")), meta)?;
    Ok(bin)
}

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

/// Reads a snapshot back from its `.bin` path and sidecar.
pub fn read_snapshot(bin: &Path) -> io::Result<Snapshot> {
    let meta = fs::read_to_string(bin.with_extension("txt"))?;
    let mut step = None;
    let mut t = None;
    let mut x_min = None;
    let mut x_max = None;
    let mut n_points = None;
    for line in meta.lines() {
        let Some((k, v)) = line.split_once('=') else {
            continue;
        };
        let v = v.trim();
        match k.trim() {
            "step" => step = v.parse::<usize>().ok(),
            "t" => t = v.parse::<f64>().ok(),
            "x_min" => x_min = v.parse::<f64>().ok(),
            "x_max" => x_max = v.parse::<f64>().ok(),
            "n_points" => n_points = v.parse::<usize>().ok(),
            _ => {}
        }
    }
    let (Some(step), Some(t), Some(x_min), Some(x_max), Some(n)) =
        (step, t, x_min, x_max, n_points)
    else {
        return Err(invalid("incomplete snapshot sidecar"));
    };
    let grid = Grid::new(x_min, x_max, n).map_err(|e| invalid(e.to_string()))?;
    let bytes = fs::read(bin)?;
    if bytes.len() != 8 * n {
        return Err(invalid(format!(
            "expected {} bytes, found {}",
            8 * n,
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let field = DensityField::new(grid, values).map_err(|e| invalid(e.to_string()))?;
    Ok(Snapshot { step, t, field })
}
