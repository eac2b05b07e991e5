//! Model checkpoints: named parameter arrays behind a small binary
//! header, shared by the translator and the detector.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::ArrayD;

use crate::error::{Error, Result};
use crate::nn::Param;

const MAGIC: &[u8; 6] = b"DLCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, ArrayD<f32>)>,
}

impl Checkpoint {
    pub fn kind(&self) -> Option<&str> {
        self.meta.get("kind").map(String::as_str)
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.meta
            .get(key)
            .and_then(|v| v.parse::<T>().ok())
            .ok_or_else(|| Error::Validation(format!("checkpoint missing or bad meta key {key:?}")))
    }

    pub fn tensor(&self, name: &str) -> Option<&ArrayD<f32>> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }
}

pub fn save_checkpoint(
    path: &Path,
    meta: &[(&str, String)],
    params: &[&Param],
) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    for (k, v) in meta {
        write_str(&mut buf, k);
        write_str(&mut buf, v);
    }
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        write_str(&mut buf, &p.name);
        let shape = p.value.shape();
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut cur = 0usize;
    let fail = |msg: &str| Error::Validation(format!("checkpoint {}: {msg}", path.display()));

    if bytes.len() < 6 || &bytes[..6] != MAGIC {
        return Err(fail("bad magic"));
    }
    cur += 6;
    let version = read_u32(&bytes, &mut cur).ok_or_else(|| fail("truncated version"))?;
    if version != VERSION {
        return Err(fail(&format!("unsupported version {version}")));
    }
    let meta_count = read_u32(&bytes, &mut cur).ok_or_else(|| fail("truncated meta count"))?;
    let mut meta = BTreeMap::new();
    for _ in 0..meta_count {
        let k = read_str(&bytes, &mut cur).ok_or_else(|| fail("truncated meta key"))?;
        let v = read_str(&bytes, &mut cur).ok_or_else(|| fail("truncated meta value"))?;
        meta.insert(k, v);
    }
    let tensor_count = read_u32(&bytes, &mut cur).ok_or_else(|| fail("truncated tensor count"))?;
    let mut tensors = Vec::with_capacity(tensor_count as usize);
    for _ in 0..tensor_count {
        let name = read_str(&bytes, &mut cur).ok_or_else(|| fail("truncated tensor name"))?;
        let ndim = read_u32(&bytes, &mut cur).ok_or_else(|| fail("truncated ndim"))? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(read_u32(&bytes, &mut cur).ok_or_else(|| fail("truncated dims"))? as usize);
        }
        let len: usize = dims.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            if cur + 4 > bytes.len() {
                return Err(fail("truncated tensor data"));
            }
            data.push(f32::from_le_bytes(bytes[cur..cur + 4].try_into().unwrap()));
            cur += 4;
        }
        let arr = ArrayD::from_shape_vec(ndarray::IxDyn(&dims), data)
            .map_err(|e| fail(&format!("bad tensor shape: {e}")))?;
        tensors.push((name, arr));
    }
    Ok(Checkpoint { meta, tensors })
}

/// Copy checkpoint tensors onto a model's parameters by name. Every
/// parameter must be present with a matching shape, and no extra tensors
/// may remain.
pub fn restore_params(ckpt: &Checkpoint, params: &mut [&mut Param]) -> Result<()> {
    if ckpt.tensors.len() != params.len() {
        return Err(Error::Validation(format!(
            "checkpoint holds {} tensors but model has {} parameters",
            ckpt.tensors.len(),
            params.len()
        )));
    }
    for p in params.iter_mut() {
        let t = ckpt
            .tensor(&p.name)
            .ok_or_else(|| Error::Validation(format!("checkpoint missing tensor {}", p.name)))?;
        if t.shape() != p.value.shape() {
            return Err(Error::Validation(format!(
                "tensor {} shape {:?} does not match parameter shape {:?}",
                p.name,
                t.shape(),
                p.value.shape()
            )));
        }
        p.value.assign(t);
    }
    Ok(())
}

fn write_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

fn read_u32(bytes: &[u8], cur: &mut usize) -> Option<u32> {
    if *cur + 4 > bytes.len() {
        return None;
    }
    let v = u32::from_le_bytes(bytes[*cur..*cur + 4].try_into().unwrap());
    *cur += 4;
    Some(v)
}

fn read_str(bytes: &[u8], cur: &mut usize) -> Option<String> {
    let len = read_u32(bytes, cur)? as usize;
    if *cur + len > bytes.len() {
        return None;
    }
    let s = String::from_utf8(bytes[*cur..*cur + len].to_vec()).ok()?;
    *cur += len;
    Some(s)
}
