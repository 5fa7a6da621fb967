//! Binary weights checkpoint.
//!
//! ```text
//! b"FPTW" | u32 version | u64 spec fingerprint | u32 layer count
//! repeated until EOF:
//!   u32 name length | name bytes | u32 rank | rank x u32 dims | f32 data
//! ```
//!
//! All integers and floats are little-endian. Optimizer state, when present,
//! follows the parameters as `opt.step`, `opt.m.<name>` and `opt.v.<name>`.

use std::fs;
use std::path::Path;

use super::network::{Network, Param};
use super::optim::{Adam, AdamConfig};
use super::spec::NetworkSpec;
use crate::error::{Error, Result};
use crate::raster::write_bytes;

pub const MAGIC: &[u8; 4] = b"FPTW";
pub const FORMAT_VERSION: u32 = 1;

fn put_entry(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f32]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for d in shape {
        out.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(network: &Network, optimizer: Option<&Adam>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&network.spec().fingerprint().to_le_bytes());
    out.extend_from_slice(&(network.spec().layers.len() as u32).to_le_bytes());
    for p in network.params() {
        put_entry(&mut out, &p.name, &p.shape, &p.data);
    }
    if let Some(adam) = optimizer {
        put_entry(&mut out, "opt.step", &[1], &[adam.step as f32]);
        for (i, p) in network.params().iter().enumerate() {
            put_entry(&mut out, &format!("opt.m.{}", p.name), &p.shape, &adam.first_moment[i]);
            put_entry(&mut out, &format!("opt.v.{}", p.name), &p.shape, &adam.second_moment[i]);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, "truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn entry(&mut self) -> Result<(String, Vec<usize>, Vec<f32>)> {
        let len = self.u32()? as usize;
        let name = String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::format(self.path, "parameter name is not UTF-8"))?;
        let rank = self.u32()? as usize;
        let shape = (0..rank).map(|_| self.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let data = self
            .take(4 * count)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok((name, shape, data))
    }
}

/// Restores a network for `spec`; fails on any fingerprint or layout mismatch.
pub fn decode(bytes: &[u8], spec: &NetworkSpec, path: &Path) -> Result<(Network, Option<Adam>)> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != MAGIC {
        return Err(Error::format(path, "missing FPTW magic"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let found = r.u64()?;
    if found != spec.fingerprint() {
        return Err(Error::Fingerprint {
            expected: spec.fingerprint(),
            found,
        });
    }
    let layers = r.u32()? as usize;
    if layers != spec.layers.len() {
        return Err(Error::format(path, format!("checkpoint has {layers} layers, spec has {}", spec.layers.len())));
    }
    let mut network = Network::new(spec.clone(), 0)?;
    let mut params = Vec::with_capacity(network.params().len());
    for template in network.params() {
        let (name, shape, data) = r.entry()?;
        params.push(Param {
            name,
            shape,
            data,
            trainable: template.trainable,
        });
    }
    network.load_params(params)?;
    let optimizer = if r.pos < bytes.len() {
        let (name, _, step) = r.entry()?;
        if name != "opt.step" || step.len() != 1 {
            return Err(Error::format(path, "unexpected trailing checkpoint entry"));
        }
        let mut adam = Adam::new(&network, AdamConfig::default());
        adam.step = step[0] as u64;
        for (i, p) in network.params().iter().enumerate() {
            for (prefix, slot) in [("opt.m.", 0), ("opt.v.", 1)] {
                let (name, shape, data) = r.entry()?;
                if name != format!("{prefix}{}", p.name) || shape != p.shape {
                    return Err(Error::format(path, format!("optimizer entry {name} is out of place")));
                }
                if slot == 0 {
                    adam.first_moment[i] = data;
                } else {
                    adam.second_moment[i] = data;
                }
            }
        }
        Some(adam)
    } else {
        None
    };
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after checkpoint"));
    }
    Ok((network, optimizer))
}

pub fn save(path: &Path, network: &Network, optimizer: Option<&Adam>) -> Result<()> {
    write_bytes(path, &encode(network, optimizer))
}

pub fn load(path: &Path, spec: &NetworkSpec) -> Result<(Network, Option<Adam>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, spec, path)
}
