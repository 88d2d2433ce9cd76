//! Trajectory files.
//!
//! The text form is tab separated with `#` comment lines; the first comment
//! line carries the run metadata as JSON. The binary form is
//!
//! ```text
//! b"CMTRAJ01" | u64 header length | JSON header | u64 sample count |
//! f64 sample interval | x[] | phase[] | force[] (if present)
//! ```
//!
//! with all numbers little-endian.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::sim::{Trajectory, TrajectoryMeta};

const MAGIC: &[u8; 8] = b"CMTRAJ01";
const META_PREFIX: &str = "# meta ";

#[derive(serde::Serialize, serde::Deserialize)]
struct BinaryHeader {
    meta: TrajectoryMeta,
    has_force: bool,
}

pub fn write_text<W: Write>(traj: &Trajectory, mut w: W) -> Result<()> {
    let meta = serde_json::to_string(&traj.meta).map_err(|e| Error::Format(e.to_string()))?;
    writeln!(w, "{META_PREFIX}{meta}")?;
    writeln!(w, "# sample_interval_s {}", traj.dt)?;
    let has_force = traj.force_series.is_some();
    if has_force {
        writeln!(w, "# time_s\tx_m\tphase_rad\tforce_N")?;
    } else {
        writeln!(w, "# time_s\tx_m\tphase_rad")?;
    }
    for i in 0..traj.len() {
        write!(w, "{}\t{}\t{}", i as f64 * traj.dt, traj.x_series[i], traj.phase_series[i])?;
        if let Some(f) = &traj.force_series {
            write!(w, "\t{}", f[i])?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_text<R: BufRead>(r: R) -> Result<Trajectory> {
    let mut meta: Option<TrajectoryMeta> = None;
    let mut dt: Option<f64> = None;
    let mut x = Vec::new();
    let mut phase = Vec::new();
    let mut force = Vec::new();
    let mut columns = None;
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(json) = line.strip_prefix(META_PREFIX) {
            meta = Some(serde_json::from_str(json).map_err(|e| Error::Format(e.to_string()))?);
            continue;
        }
        if let Some(v) = line.strip_prefix("# sample_interval_s ") {
            dt = Some(parse(v.trim(), lineno)?);
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let n = *columns.get_or_insert(fields.len());
        if fields.len() != n || !(3..=4).contains(&n) {
            return Err(Error::Format(format!("line {}: expected 3 or 4 columns", lineno + 1)));
        }
        x.push(parse(fields[1], lineno)?);
        phase.push(parse(fields[2], lineno)?);
        if n == 4 {
            force.push(parse(fields[3], lineno)?);
        }
    }
    let meta = meta.ok_or_else(|| Error::Format("missing metadata line".into()))?;
    let dt = dt.unwrap_or_else(|| meta.config.sample_interval());
    Ok(Trajectory {
        x_series: x,
        phase_series: phase,
        force_series: (columns == Some(4)).then_some(force),
        dt,
        meta,
    })
}

fn parse(s: &str, lineno: usize) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Format(format!("line {}: cannot parse {s:?} as a number", lineno + 1)))
}

pub fn write_binary<W: Write>(traj: &Trajectory, mut w: W) -> Result<()> {
    let header = BinaryHeader { meta: traj.meta.clone(), has_force: traj.force_series.is_some() };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&(traj.len() as u64).to_le_bytes())?;
    w.write_all(&traj.dt.to_le_bytes())?;
    let mut put = |v: &[f64]| -> Result<()> {
        for s in v {
            w.write_all(&s.to_le_bytes())?;
        }
        Ok(())
    };
    put(&traj.x_series)?;
    put(&traj.phase_series)?;
    if let Some(f) = &traj.force_series {
        put(f)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<Trajectory> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a trajectory file".into()));
    }
    let len = read_u64(&mut r)? as usize;
    if len > 1 << 24 {
        return Err(Error::Format("header too large".into()));
    }
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: BinaryHeader = serde_json::from_slice(&json).map_err(|e| Error::Format(e.to_string()))?;
    let n = read_u64(&mut r)? as usize;
    let dt = f64::from_bits(read_u64(&mut r)?);
    let column = |r: &mut R| -> Result<Vec<f64>> {
        (0..n).map(|_| read_u64(r).map(f64::from_bits)).collect()
    };
    let x_series = column(&mut r)?;
    let phase_series = column(&mut r)?;
    let force_series = if header.has_force { Some(column(&mut r)?) } else { None };
    Ok(Trajectory { x_series, phase_series, force_series, dt, meta: header.meta })
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Reads a trajectory file in either form, recognising the binary one by
/// its magic bytes.
pub fn read_file(path: &Path) -> Result<Trajectory> {
    let mut r = BufReader::new(File::open(path)?);
    if r.fill_buf()?.starts_with(MAGIC) {
        read_binary(r)
    } else {
        read_text(r)
    }
}
