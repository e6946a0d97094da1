//! Binary export of kernel sets.
//!
//! Layout (little-endian): magic `b"MSDC"`, `u32` version, `f64` `t0`, `u32`
//! `m`, `u32` `d1`, `u32` `n_t`, `f64` `c`, then for each order `i = 1..=m`
//! and each multi-index in lexicographic order, the `C(n_t, i)` kernel values
//! over ordered simplex tuples in rank order, as `f64`.

use std::io::{Read, Write};

use super::{binomial, ChaosKernelSet};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MSDC";
const VERSION: u32 = 1;

/// Decoded kernel file.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelDump {
    pub t0: f64,
    pub m: usize,
    pub d1: usize,
    pub n_t: usize,
    pub c: f64,
    pub kernels: Vec<Vec<Vec<f64>>>,
}

pub fn write_kernels(set: &ChaosKernelSet, mut w: impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&set.simplex.t0.to_le_bytes())?;
    for v in [set.m_max() as u32, set.d1 as u32, set.simplex.n_t as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&set.c.to_le_bytes())?;
    for per in &set.kernels {
        for vals in per {
            for v in vals {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_kernels(mut r: impl Read) -> Result<KernelDump> {
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    if &b4 != MAGIC {
        return Err(Error::Io("not a kernel dump (bad magic)".into()));
    }
    r.read_exact(&mut b4)?;
    if u32::from_le_bytes(b4) != VERSION {
        return Err(Error::Io("unsupported kernel dump version".into()));
    }
    let u32_ = |r: &mut dyn Read| -> Result<usize> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b) as usize)
    };
    r.read_exact(&mut b8)?;
    let t0 = f64::from_le_bytes(b8);
    let m = u32_(&mut r)?;
    let d1 = u32_(&mut r)?;
    let n_t = u32_(&mut r)?;
    r.read_exact(&mut b8)?;
    let c = f64::from_le_bytes(b8);
    let mut kernels = Vec::with_capacity(m);
    for i in 1..=m {
        let count = binomial(n_t, i) as usize;
        let mut per = Vec::with_capacity(d1.pow(i as u32));
        for _ in 0..d1.pow(i as u32) {
            let mut vals = Vec::with_capacity(count);
            for _ in 0..count {
                r.read_exact(&mut b8)?;
                vals.push(f64::from_le_bytes(b8));
            }
            per.push(vals);
        }
        kernels.push(per);
    }
    Ok(KernelDump {
        t0,
        m,
        d1,
        n_t,
        c,
        kernels,
    })
}
