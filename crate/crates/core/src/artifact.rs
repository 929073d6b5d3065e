//! Little-endian binary artifacts. Every file opens with a 16-byte header:
//! a 12-byte tag followed by a `u32` format version.

use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

pub const SNAPSHOT_TAG: [u8; 12] = *b"BFENKF-SNAP\0";
pub const MATRIX_TAG: [u8; 12] = *b"BFENKF-MAT\0\0";
pub const KL_TAG: [u8; 12] = *b"BFENKF-KLB\0\0";

pub fn write_header(w: &mut impl Write, tag: [u8; 12]) -> Result<()> {
    w.write_all(&tag)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    Ok(())
}

pub fn read_header(r: &mut impl Read, tag: [u8; 12]) -> Result<()> {
    let mut buf = [0u8; 16];
    r.read_exact(&mut buf)?;
    if buf[..12] != tag {
        return Err(Error::invalid(format!(
            "bad magic: expected {:?}",
            String::from_utf8_lossy(&tag)
        )));
    }
    let version = u32::from_le_bytes(buf[12..].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::invalid(format!(
            "unsupported format version {version}"
        )));
    }
    Ok(())
}

pub fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn write_f64s<'a>(w: &mut impl Write, vals: impl IntoIterator<Item = &'a f64>) -> Result<()> {
    for v in vals {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

/// Header, `rows`, `cols`, then row-major values.
pub fn write_matrix(w: &mut impl Write, m: &DMatrix<f64>) -> Result<()> {
    write_header(w, MATRIX_TAG)?;
    write_u64(w, m.nrows() as u64)?;
    write_u64(w, m.ncols() as u64)?;
    for r in m.row_iter() {
        write_f64s(w, r.iter())?;
    }
    Ok(())
}

pub fn read_matrix(r: &mut impl Read) -> Result<DMatrix<f64>> {
    read_header(r, MATRIX_TAG)?;
    let rows = read_u64(r)? as usize;
    let cols = read_u64(r)? as usize;
    let vals = read_f64s(r, rows * cols)?;
    Ok(DMatrix::from_row_slice(rows, cols, &vals))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip_and_header_checks() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 3.5, 0.0, 1e-300, f64::MAX]);
        let mut buf = Vec::new();
        write_matrix(&mut buf, &m).unwrap();
        assert_eq!(&buf[..12], &MATRIX_TAG);
        assert_eq!(buf.len(), 16 + 16 + 6 * 8);
        assert_eq!(read_matrix(&mut buf.as_slice()).unwrap(), m);

        let mut wrong = buf.clone();
        wrong[0] = b'X';
        assert!(read_matrix(&mut wrong.as_slice()).is_err());
        let mut future = buf.clone();
        future[12] = 9;
        assert!(read_matrix(&mut future.as_slice()).is_err());
    }
}
