//! File formats: binary trajectories with a JSON sidecar, and CSV tables.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use tailchain::chain::TailChainPath;
use tailchain::engine::{ExtremeWindow, Trajectory};

/// Header stored next to a binary trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub d: usize,
    pub n: usize,
    pub seed: u64,
    pub model: serde_json::Value,
    pub burn_in: usize,
}

pub fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Writes `bin` (little-endian f64, row-major) and its sidecar.
pub fn write_trajectory(bin: &Path, traj: &Trajectory, header: &Sidecar) -> anyhow::Result<()> {
    fs::write(bin, traj.to_le_bytes()).with_context(|| format!("writing {}", bin.display()))?;
    write_json(&sidecar_path(bin), header)
}

pub fn read_trajectory(bin: &Path) -> anyhow::Result<(Sidecar, Trajectory)> {
    let side = sidecar_path(bin);
    let header: Sidecar = serde_json::from_str(
        &fs::read_to_string(&side)
            .with_context(|| format!("reading sidecar {}", side.display()))?,
    )?;
    let bytes = fs::read(bin).with_context(|| format!("reading {}", bin.display()))?;
    let traj = Trajectory::from_le_bytes(header.d, &bytes)?;
    anyhow::ensure!(
        traj.len() == header.n,
        "sidecar says n = {}, file holds {} rows",
        header.n,
        traj.len()
    );
    Ok((header, traj))
}

fn block_header(prefix: &str, s: usize, t: usize, d: usize) -> Vec<String> {
    let mut h = Vec::with_capacity((s + t + 1) * d);
    for k in -(s as isize)..=t as isize {
        for j in 1..=d {
            h.push(format!("{prefix}{k}_{j}"));
        }
    }
    h
}

/// Windows as CSV: `y`, then `x{k}_{j}` for `k = -s..=t`, `j = 1..=d`.
pub fn write_windows<W: Write>(
    out: W,
    windows: &[ExtremeWindow],
    s: usize,
    t: usize,
    d: usize,
) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["y".to_string()];
    header.extend(block_header("x", s, t, d));
    w.write_record(&header)?;
    for win in windows {
        let mut row = vec![win.y.to_string()];
        row.extend(win.normalized.iter().flatten().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Tail chain paths as CSV: `m{k}_{j}` for `k = -s..=t`, `j = 1..=d`.
pub fn write_paths<W: Write>(out: W, paths: &[TailChainPath], d: usize) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let Some(first) = paths.first() else {
        w.flush()?;
        return Ok(());
    };
    w.write_record(block_header("m", first.s, first.t, d))?;
    for p in paths {
        w.write_record(p.flatten().iter().map(f64::to_string))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a numeric CSV with a header row, dropping the first `skip` columns.
pub fn read_rows(path: &Path, skip: usize) -> anyhow::Result<Vec<Vec<f64>>> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .skip(skip)
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("{}: row {} is not numeric", path.display(), i + 1))?;
        rows.push(row);
    }
    Ok(rows)
}
