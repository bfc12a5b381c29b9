//! Flat named-array checkpoint files.
//!
//! Entries are concatenated with no file header. Each entry is:
//!
//! | field | encoding |
//! |-------|----------|
//! | name length | `u32` little-endian |
//! | name | UTF-8 bytes |
//! | rank | `u32` little-endian |
//! | dims | `rank` × `u64` little-endian |
//! | values | `Π dims` × `f64` little-endian, row-major |
//!
//! Tensors are written with rank 2. Rank 0 and 1 entries are accepted on
//! read and become `1×1` and `1×d` tensors.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub fn write_arrays<W: Write>(mut w: W, arrays: &[(String, &Tensor)]) -> std::io::Result<()> {
    for (name, t) in arrays {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&2u32.to_le_bytes())?;
        w.write_all(&(t.rows() as u64).to_le_bytes())?;
        w.write_all(&(t.cols() as u64).to_le_bytes())?;
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn read_arrays<R: Read>(mut r: R) -> std::io::Result<Vec<(String, Tensor)>> {
    use std::io::{Error as IoError, ErrorKind};
    let bad = |m: &str| IoError::new(ErrorKind::InvalidData, m.to_string());
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let mut take = |n: usize| -> std::io::Result<&[u8]> {
        if pos + n > bytes.len() {
            return Err(IoError::new(ErrorKind::UnexpectedEof, "truncated checkpoint"));
        }
        let s = &bytes[pos..pos + n];
        pos += n;
        Ok(s)
    };
    let mut out = Vec::new();
    loop {
        let len_bytes = match take(4) {
            Ok(b) => u32::from_le_bytes(b.try_into().unwrap()) as usize,
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e),
        };
        let name = String::from_utf8(take(len_bytes)?.to_vec()).map_err(|_| bad("name is not UTF-8"))?;
        let rank = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize);
        }
        let (rows, cols) = match dims.as_slice() {
            [] => (1, 1),
            [d] => (1, *d),
            [r, c] => (*r, *c),
            _ => return Err(bad("rank above 2 is not supported")),
        };
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(f64::from_le_bytes(take(8)?.try_into().unwrap()));
        }
        out.push((
            name,
            Tensor::from_vec(rows, cols, data).map_err(|e| bad(&e.to_string()))?,
        ));
    }
    Ok(out)
}

pub fn save_arrays(path: &Path, arrays: &[(String, &Tensor)]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_arrays(std::io::BufWriter::new(file), arrays).map_err(|e| Error::io(path, e))
}

pub fn load_arrays(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_arrays(std::io::BufReader::new(file)).map_err(|e| Error::io(path, e))
}
