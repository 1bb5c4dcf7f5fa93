//! Versioned checkpoint containers: a 4-byte magic, a JSON config echo, and
//! named f32 little-endian tensors.
//!
//! Layout: magic, u32 config length + config bytes, u32 tensor count, then
//! per tensor a u16 name length + name, u8 rank + u32 dims, and the f32 data.

use crate::{Error, Result};
use ndarray::{ArrayD, IxDyn};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub fn write_container<S, T>(
    path: &Path,
    magic: &[u8; 4],
    config_json: &str,
    tensors: impl Iterator<Item = (S, T)>,
) -> Result<()>
where
    S: AsRef<str>,
    T: std::borrow::Borrow<ArrayD<f64>>,
{
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(magic)?;
    out.write_all(&(config_json.len() as u32).to_le_bytes())?;
    out.write_all(config_json.as_bytes())?;
    let items: Vec<_> = tensors.collect();
    out.write_all(&(items.len() as u32).to_le_bytes())?;
    for (name, tensor) in &items {
        let (name, tensor) = (name.as_ref(), tensor.borrow());
        if name.len() > u16::MAX as usize {
            return Err(Error::format(format!("tensor name too long: {name:.40}...")));
        }
        out.write_all(&(name.len() as u16).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        let shape = tensor.shape();
        out.write_all(&[shape.len() as u8])?;
        for &d in shape {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in tensor.iter() {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_container(path: &Path, magic: &[u8; 4]) -> Result<(String, Vec<(String, ArrayD<f64>)>)> {
    let mut input = BufReader::new(File::open(path)?);
    let mut got = [0u8; 4];
    input.read_exact(&mut got)?;
    if &got != magic {
        return Err(Error::format(format!(
            "checkpoint magic {:?} does not match {:?}",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(magic)
        )));
    }
    let config_len = read_u32(&mut input)? as usize;
    let mut config = vec![0u8; config_len];
    input.read_exact(&mut config)?;
    let config = String::from_utf8(config).map_err(|_| Error::format("config echo not UTF-8"))?;
    let count = read_u32(&mut input)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let mut len2 = [0u8; 2];
        input.read_exact(&mut len2)?;
        let mut name = vec![0u8; u16::from_le_bytes(len2) as usize];
        input.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::format("tensor name not UTF-8"))?;
        let mut rank = [0u8; 1];
        input.read_exact(&mut rank)?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            shape.push(read_u32(&mut input)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut f32buf = [0u8; 4];
        for _ in 0..n {
            input
                .read_exact(&mut f32buf)
                .map_err(|_| Error::format(format!("checkpoint truncated in tensor {name}")))?;
            data.push(f32::from_le_bytes(f32buf) as f64);
        }
        tensors.push((name, ArrayD::from_shape_vec(IxDyn(&shape), data).unwrap()));
    }
    Ok((config, tensors))
}

fn read_u32(input: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trips_at_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.ckpt");
        let a = ArrayD::from_shape_vec(IxDyn(&[2, 3]), vec![0.5, -1.25, 3.0, 0.1, 2.5, -0.75])
            .unwrap();
        let b = ArrayD::from_shape_vec(IxDyn(&[4]), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        write_container(
            &path,
            b"TST0",
            r#"{"kind":"demo"}"#,
            [("alpha", &a), ("beta", &b)].into_iter(),
        )
        .unwrap();
        let (config, tensors) = read_container(&path, b"TST0").unwrap();
        assert_eq!(config, r#"{"kind":"demo"}"#);
        assert_eq!(tensors.len(), 2);
        assert_eq!(tensors[0].0, "alpha");
        assert_eq!(tensors[0].1, a, "exactly representable values survive f32");
        assert_eq!(tensors[1].1, b);
        assert!(read_container(&path, b"XXXX").is_err(), "magic mismatch must fail");
    }
}
