//! Export of backward solves: a columnar text dump and a compact binary grid
//! format.
//!
//! Binary layout (all little-endian): magic `b"MSDG"`, `u32` version, `u32`
//! `d`, `u32` interior nodes per axis, `u32` number of stored times, `u32`
//! arrays per time (`1 + d`: `u` then `D_1u … D_du`), `f64` `L`, `f64` `h`,
//! `f64` `dt`, the stored times as `f64`, then for each time the arrays in
//! row-major node order as `f64`.

use std::io::{Read, Write};

use super::EvolutionSolve;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MSDG";
const VERSION: u32 = 1;

/// Decoded binary grid file.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDump {
    pub d: usize,
    pub m: usize,
    pub l: f64,
    pub h: f64,
    pub dt: f64,
    pub times: Vec<f64>,
    /// `arrays[time][component]`, component 0 is `u`, `1..=d` the gradient.
    pub arrays: Vec<Vec<Vec<f64>>>,
}

/// Writes `t, x_1..x_d, u, D_1u..D_du` rows, one per stored time and node.
pub fn write_text(solve: &EvolutionSolve, mut w: impl Write) -> Result<()> {
    let d = solve.grid.d;
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|i| format!("x{i}")));
    header.push("u".into());
    header.extend((1..=d).map(|i| format!("du{i}")));
    writeln!(w, "{}", header.join(" "))?;
    for (idx, &k) in solve.indices.iter().enumerate() {
        let t = solve.grid.time(k);
        let u = &solve.u[idx];
        let du = super::gradient(&solve.grid, u);
        for n in 0..solve.grid.n_nodes() {
            let x = solve.grid.coords(n);
            let mut row = vec![format!("{t:.17e}")];
            row.extend(x.iter().map(|v| format!("{v:.17e}")));
            row.push(format!("{:.17e}", u[n]));
            row.extend(du.iter().map(|c| format!("{:.17e}", c[n])));
            writeln!(w, "{}", row.join(" "))?;
        }
    }
    Ok(())
}

pub fn write_binary(solve: &EvolutionSolve, mut w: impl Write) -> Result<()> {
    let g = &solve.grid;
    w.write_all(MAGIC)?;
    for v in [
        VERSION,
        g.d as u32,
        g.m() as u32,
        solve.indices.len() as u32,
        1 + g.d as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in [g.l, g.h, g.dt] {
        w.write_all(&v.to_le_bytes())?;
    }
    for t in solve.times() {
        w.write_all(&t.to_le_bytes())?;
    }
    for u in &solve.u {
        for v in u {
            w.write_all(&v.to_le_bytes())?;
        }
        for c in super::gradient(g, u) {
            for v in c {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn read_binary(mut r: impl Read) -> Result<GridDump> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Io("not a grid dump (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Io(format!(
            "unsupported grid dump version {version}"
        )));
    }
    let d = read_u32(&mut r)? as usize;
    let m = read_u32(&mut r)? as usize;
    let nt = read_u32(&mut r)? as usize;
    let comps = read_u32(&mut r)? as usize;
    let l = read_f64(&mut r)?;
    let h = read_f64(&mut r)?;
    let dt = read_f64(&mut r)?;
    let times = (0..nt)
        .map(|_| read_f64(&mut r))
        .collect::<Result<Vec<_>>>()?;
    let n = m.pow(d as u32);
    let mut arrays = Vec::with_capacity(nt);
    for _ in 0..nt {
        let mut per = Vec::with_capacity(comps);
        for _ in 0..comps {
            per.push(
                (0..n)
                    .map(|_| read_f64(&mut r))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        arrays.push(per);
    }
    Ok(GridDump {
        d,
        m,
        l,
        h,
        dt,
        times,
        arrays,
    })
}
