//! On-disk interchange formats.
//!
//! * Channel archive — every matrix of a [`ChannelSet`] in one file so an
//!   oracle run and an optimizer run can share identical channels. Binary
//!   layout: ASCII magic + version, then dimension header, then each block
//!   row-major as little-endian f64 pairs (re, im); real vectors as plain
//!   f64. A text twin holds the same blocks as whitespace tables.
//! * Phase profile text — one row of radians per layer.

use crate::channel::ChannelSet;
use crate::stack::PhaseProfile;
use crate::{C64, CMatrix, RMatrix, RVector};
use std::io::{self, Read, Write};
use thiserror::Error;

const MAGIC: &[u8; 8] = b"SIMCHv1\n";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad magic; not a channel archive")]
    BadMagic,
    #[error("malformed archive: {0}")]
    Malformed(String),
}

/// Writes the full channel set in the binary layout.
pub fn write_channels_binary<W: Write>(set: &ChannelSet, out: &mut W) -> Result<(), ArchiveError> {
    out.write_all(MAGIC)?;
    let dims = [
        set.elements() as u64,
        set.users() as u64,
        set.layers() as u64,
        set.h.is_some() as u64,
    ];
    for d in dims {
        out.write_all(&d.to_le_bytes())?;
    }
    write_cmatrix(out, &set.w1)?;
    for w in &set.w_inter {
        write_cmatrix(out, w)?;
    }
    write_cmatrix(out, &set.r_ris)?;
    write_cmatrix(out, &set.r_sqrt)?;
    write_cmatrix(out, &set.eig_vectors)?;
    write_rvector(out, &set.eig_values)?;
    write_rvector(out, &set.betas)?;
    if let Some(h) = &set.h {
        write_cmatrix(out, h)?;
    }
    Ok(())
}

/// Reads an archive previously written by [`write_channels_binary`].
pub fn read_channels_binary<R: Read>(input: &mut R) -> Result<ChannelSet, ArchiveError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ArchiveError::BadMagic);
    }
    let m = read_u64(input)? as usize;
    let k = read_u64(input)? as usize;
    let layers = read_u64(input)? as usize;
    let has_h = read_u64(input)? != 0;

    let w1 = read_cmatrix(input, m, k)?;
    let mut w_inter = Vec::with_capacity(layers - 1);
    for _ in 1..layers {
        w_inter.push(read_cmatrix(input, m, m)?);
    }
    let r_ris = read_cmatrix(input, m, m)?;
    let r_sqrt = read_cmatrix(input, m, m)?;
    let eig_vectors = read_cmatrix(input, m, m)?;
    let eig_values = read_rvector(input, m)?;
    let betas = read_rvector(input, k)?;
    let h = if has_h {
        Some(read_cmatrix(input, m, k)?)
    } else {
        None
    };
    Ok(ChannelSet {
        w1,
        w_inter,
        r_ris,
        r_sqrt,
        eig_values,
        eig_vectors,
        betas,
        h,
    })
}

/// Text twin of the binary archive; one labeled block per matrix.
pub fn write_channels_text<W: Write>(set: &ChannelSet, out: &mut W) -> Result<(), ArchiveError> {
    writeln!(out, "simchannels 1")?;
    writeln!(
        out,
        "dims {} {} {} {}",
        set.elements(),
        set.users(),
        set.layers(),
        set.h.is_some() as u8
    )?;
    write_cmatrix_text(out, "w1", &set.w1)?;
    for (i, w) in set.w_inter.iter().enumerate() {
        write_cmatrix_text(out, &format!("w_inter{}", i + 2), w)?;
    }
    write_cmatrix_text(out, "r_ris", &set.r_ris)?;
    write_cmatrix_text(out, "r_sqrt", &set.r_sqrt)?;
    write_cmatrix_text(out, "eig_vectors", &set.eig_vectors)?;
    writeln!(out, "eig_values")?;
    for v in set.eig_values.iter() {
        write!(out, "{v:?} ")?;
    }
    writeln!(out)?;
    writeln!(out, "betas")?;
    for v in set.betas.iter() {
        write!(out, "{v:?} ")?;
    }
    writeln!(out)?;
    if let Some(h) = &set.h {
        write_cmatrix_text(out, "h", h)?;
    }
    Ok(())
}

/// Phase profile as plain text: one row of radians per layer.
pub fn write_phases_text<W: Write>(theta: &PhaseProfile, out: &mut W) -> Result<(), ArchiveError> {
    for l in 0..theta.layers() {
        let row: Vec<String> = (0..theta.elements())
            .map(|m| format!("{:?}", theta.theta[(l, m)]))
            .collect();
        writeln!(out, "{}", row.join(" "))?;
    }
    Ok(())
}

/// Parses the text produced by [`write_phases_text`].
pub fn read_phases_text<R: Read>(input: &mut R) -> Result<PhaseProfile, ArchiveError> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|e| ArchiveError::Malformed(format!("bad number {tok:?}: {e}")))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(ArchiveError::Malformed("ragged phase rows".into()));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(ArchiveError::Malformed("empty phase file".into()));
    }
    let layers = rows.len();
    let elements = rows[0].len();
    Ok(PhaseProfile {
        theta: RMatrix::from_fn(layers, elements, |l, m| rows[l][m]),
        quantized: false,
    })
}

fn write_cmatrix<W: Write>(out: &mut W, m: &CMatrix) -> io::Result<()> {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let z = m[(r, c)];
            out.write_all(&z.re.to_le_bytes())?;
            out.write_all(&z.im.to_le_bytes())?;
        }
    }
    Ok(())
}

fn write_cmatrix_text<W: Write>(out: &mut W, name: &str, m: &CMatrix) -> io::Result<()> {
    writeln!(out, "{name} {} {}", m.nrows(), m.ncols())?;
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols())
            .map(|c| format!("{:?} {:?}", m[(r, c)].re, m[(r, c)].im))
            .collect();
        writeln!(out, "{}", row.join(" "))?;
    }
    Ok(())
}

fn write_rvector<W: Write>(out: &mut W, v: &RVector) -> io::Result<()> {
    for x in v.iter() {
        out.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64, ArchiveError> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64<R: Read>(input: &mut R) -> Result<f64, ArchiveError> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

fn read_cmatrix<R: Read>(input: &mut R, rows: usize, cols: usize) -> Result<CMatrix, ArchiveError> {
    let mut m = CMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let re = read_f64(input)?;
            let im = read_f64(input)?;
            m[(r, c)] = C64::new(re, im);
        }
    }
    Ok(m)
}

fn read_rvector<R: Read>(input: &mut R, len: usize) -> Result<RVector, ArchiveError> {
    let mut v = RVector::zeros(len);
    for i in 0..len {
        v[i] = read_f64(input)?;
    }
    Ok(v)
}
