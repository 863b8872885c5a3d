//! `SSPT` tensor files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic     4 bytes  "SSPT"
//! version   u32      1
//! dtype     u32      0 = f32, 1 = f64
//! ndim      u32
//! dims      ndim × u64
//! payload   product(dims) scalars, row-major
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{checked_len, Tensor};
use crate::{Error, Real, Result};

pub const HEADER_MAGIC: [u8; 4] = *b"SSPT";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_tensor<T: Real>(t: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 8 * t.ndim() + T::BYTES * t.len());
    encode(t, &mut buf);
    fs::write(path, buf)?;
    Ok(())
}

/// Appends one encoded tensor to a stream; several tensors may share a file.
pub fn write_tensor_to<T: Real, W: Write>(t: &Tensor<T>, out: &mut W) -> Result<()> {
    let mut buf = Vec::new();
    encode(t, &mut buf);
    out.write_all(&buf)?;
    Ok(())
}

fn encode<T: Real>(t: &Tensor<T>, buf: &mut Vec<u8>) {
    buf.extend_from_slice(&HEADER_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&T::DTYPE.to_le_bytes());
    buf.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
    for &d in t.dims() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(buf);
    }
}

/// Reads a file holding exactly one tensor.
pub fn read_tensor<T: Real>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    let mut cursor = bytes.as_slice();
    let t = decode(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(Error::TrailingBytes(cursor.len() as u64));
    }
    Ok(t)
}

/// Reads the next tensor from a stream of concatenated tensors.
pub fn read_tensor_from<T: Real, R: Read>(input: &mut R) -> Result<Tensor<T>> {
    let mut head = [0u8; 16];
    read_exact(input, &mut head, 16)?;
    let ndim = u32::from_le_bytes(head[12..16].try_into().unwrap()) as usize;
    let mut dims = vec![0u8; 8 * ndim];
    read_exact(input, &mut dims, 16 + 8 * ndim as u64)?;
    let mut header = head.to_vec();
    header.extend_from_slice(&dims);
    let (dims, dtype) = parse_header(&mut header.as_slice())?;
    check_dtype::<T>(dtype)?;
    let n = checked_len(&dims)?;
    let nbytes = n
        .checked_mul(T::BYTES)
        .ok_or_else(|| Error::DimOverflow(dims.iter().map(|&d| d as u64).collect()))?;
    let mut payload = vec![0u8; nbytes];
    read_exact(input, &mut payload, nbytes as u64)?;
    Tensor::new(dims, payload.chunks_exact(T::BYTES).map(T::read_le).collect())
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8], expected: u64) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        match input.read(&mut buf[filled..])? {
            0 => {
                return Err(Error::Truncated { expected, found: filled as u64 });
            }
            k => filled += k,
        }
    }
    Ok(())
}

fn take<'a>(cursor: &mut &'a [u8], n: usize, expected: u64) -> Result<&'a [u8]> {
    if cursor.len() < n {
        return Err(Error::Truncated { expected, found: cursor.len() as u64 });
    }
    let (head, rest) = cursor.split_at(n);
    *cursor = rest;
    Ok(head)
}

fn parse_header(cursor: &mut &[u8]) -> Result<(Vec<usize>, u32)> {
    let magic: [u8; 4] = take(cursor, 4, 16)?.try_into().unwrap();
    if magic != HEADER_MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let word = |c: &mut &[u8]| -> Result<u32> { Ok(u32::from_le_bytes(take(c, 4, 16)?.try_into().unwrap())) };
    let version = word(cursor)?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dtype = word(cursor)?;
    if dtype > 1 {
        return Err(Error::UnsupportedDtype(dtype));
    }
    let ndim = word(cursor)? as usize;
    let raw = take(cursor, 8 * ndim, 16 + 8 * ndim as u64)?;
    let dims64: Vec<u64> = raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect();
    let dims = dims64
        .iter()
        .map(|&d| usize::try_from(d))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::DimOverflow(dims64.clone()))?;
    Ok((dims, dtype))
}

fn check_dtype<T: Real>(dtype: u32) -> Result<()> {
    if dtype != T::DTYPE {
        return Err(Error::DtypeMismatch { expected: T::DTYPE, found: dtype });
    }
    Ok(())
}

fn decode<T: Real>(cursor: &mut &[u8]) -> Result<Tensor<T>> {
    let (dims, dtype) = parse_header(cursor)?;
    check_dtype::<T>(dtype)?;
    let n = checked_len(&dims)?;
    let nbytes = n
        .checked_mul(T::BYTES)
        .ok_or_else(|| Error::DimOverflow(dims.iter().map(|&d| d as u64).collect()))?;
    let payload = take(cursor, nbytes, nbytes as u64)?;
    Tensor::new(dims, payload.chunks_exact(T::BYTES).map(T::read_le).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn roundtrip_small() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.sspt");
        let t = Tensor::<f32>::new(vec![2, 3], vec![1.0, -2.5, 3.0, 0.0, 1e-30, f32::MAX]).unwrap();
        write_tensor(&t, &p).unwrap();
        assert_eq!(read_tensor::<f32>(&p).unwrap(), t);
    }

    #[test]
    fn scalar_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.sspt");
        write_tensor(&Tensor::<f32>::scalar(4.25), &p).unwrap();
        let t = read_tensor::<f32>(&p).unwrap();
        assert!(t.dims().is_empty());
        assert_eq!(t.data(), &[4.25]);
    }

    #[test]
    fn file_size_matches_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("img.sspt");
        write_tensor(&Tensor::<f32>::zeros(&[480, 640, 3]), &p).unwrap();
        let header = 4 + 4 + 4 + 4 + 3 * 8;
        assert_eq!(std::fs::metadata(&p).unwrap().len(), (header + 480 * 640 * 3 * 4) as u64);
    }

    #[test]
    fn f64_dtype_code() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.sspt");
        write_tensor(&Tensor::<f64>::zeros(&[2]), &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert!(matches!(read_tensor::<f32>(&p), Err(Error::DtypeMismatch { .. })));
    }

    #[test]
    fn distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("g.sspt");
        write_tensor(&Tensor::<f32>::zeros(&[4]), &good).unwrap();
        let bytes = std::fs::read(&good).unwrap();

        let p = dir.path().join("bad.sspt");
        let mut b = bytes.clone();
        b[..4].copy_from_slice(b"XXXX");
        std::fs::write(&p, &b).unwrap();
        assert!(matches!(read_tensor::<f32>(&p), Err(Error::BadMagic { .. })));

        let mut b = bytes.clone();
        b[4] = 9;
        std::fs::write(&p, &b).unwrap();
        assert!(matches!(read_tensor::<f32>(&p), Err(Error::UnsupportedVersion(9))));

        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_tensor::<f32>(&p), Err(Error::Truncated { .. })));

        let mut b = bytes.clone();
        b[12..16].copy_from_slice(&2u32.to_le_bytes());
        b.truncate(16);
        b.extend_from_slice(&u64::MAX.to_le_bytes());
        b.extend_from_slice(&u64::MAX.to_le_bytes());
        std::fs::write(&p, &b).unwrap();
        assert!(matches!(read_tensor::<f32>(&p), Err(Error::DimOverflow(_))));

        assert!(matches!(read_tensor::<f32>(dir.path().join("none")), Err(Error::MissingFile(_))));
    }

    #[test]
    fn stream_of_tensors() {
        let a = Tensor::<f32>::from_fn(&[3, 2], |i| i as f32);
        let b = Tensor::<f32>::from_fn(&[5], |i| -(i as f32));
        let mut buf = Vec::new();
        write_tensor_to(&a, &mut buf).unwrap();
        write_tensor_to(&b, &mut buf).unwrap();
        let mut r = buf.as_slice();
        assert_eq!(read_tensor_from::<f32, _>(&mut r).unwrap(), a);
        assert_eq!(read_tensor_from::<f32, _>(&mut r).unwrap(), b);
        assert!(matches!(read_tensor_from::<f32, _>(&mut r), Err(Error::Truncated { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn roundtrip_bitwise(bits in proptest::collection::vec(any::<u32>(), 0..1024), split in 1usize..8) {
            let data: Vec<f32> = bits.iter().map(|&b| f32::from_bits(b)).collect();
            let n = data.len();
            let dims = if n % split == 0 { vec![split, n / split] } else { vec![n] };
            let t = Tensor::new(dims, data).unwrap();
            let mut buf = Vec::new();
            write_tensor_to(&t, &mut buf).unwrap();
            let back: Tensor<f32> = read_tensor_from(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back.dims(), t.dims());
            let same = back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }
    }
}
