//! Binary checkpoint format.
//!
//! ```text
//! magic      8 bytes   "GANLMP01"
//! hlen       u64 LE    header length in bytes
//! header     hlen      UTF-8: `seed=..`, `iteration=..`, free `key=value`
//!                      lines, then per network `network <name>`, its spec in
//!                      canonical text form, and `end`
//! tensors              for each network, each layer, params then buffers:
//!                      u64 LE ndim, ndim x u64 LE dims, row-major f64 LE data
//! ```

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::layer::NetworkSpec;
use super::network::{LayerParams, NetworkState};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"GANLMP01";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub iteration: u64,
    /// Extra `key=value` header entries, written in order.
    pub meta: Vec<(String, String)>,
    pub networks: Vec<(String, NetworkState)>,
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn network(&self, name: &str) -> Option<&NetworkState> {
        self.networks.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    fn header(&self) -> Result<String> {
        let mut h = format!("seed={}\niteration={}\n", self.seed, self.iteration);
        for (k, v) in &self.meta {
            if k.contains(['=', '\n']) || v.contains('\n') || k == "network" {
                return Err(Error::Checkpoint(format!("invalid metadata key/value `{k}`")));
            }
            h.push_str(&format!("{k}={v}\n"));
        }
        for (name, net) in &self.networks {
            h.push_str(&format!("network {name}\n"));
            h.push_str(&net.spec().to_text());
            h.push_str("end\n");
        }
        Ok(h)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let header = self.header()?;
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(header.as_bytes())?;
        for (_, net) in &self.networks {
            for l in net.layers() {
                for t in l.params.iter().chain(&l.buffers) {
                    w.write_all(&(t.shape().len() as u64).to_le_bytes())?;
                    for &d in t.shape() {
                        w.write_all(&(d as u64).to_le_bytes())?;
                    }
                    for &v in t.data() {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Checkpoint("file too short for magic bytes".into()))?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "unknown magic/version {:?}, expected {:?}",
                String::from_utf8_lossy(&magic),
                String::from_utf8_lossy(MAGIC)
            )));
        }
        let hlen = read_u64(&mut r)? as usize;
        if hlen > 1 << 24 {
            return Err(Error::Checkpoint(format!("implausible header length {hlen}")));
        }
        let mut hbuf = vec![0u8; hlen];
        r.read_exact(&mut hbuf)
            .map_err(|_| Error::Checkpoint("truncated header".into()))?;
        let header = String::from_utf8(hbuf).map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;

        let mut seed = None;
        let mut iteration = None;
        let mut meta = Vec::new();
        let mut specs: Vec<(String, NetworkSpec)> = Vec::new();
        let mut lines = header.lines();
        while let Some(line) = lines.next() {
            if let Some(name) = line.strip_prefix("network ") {
                let mut text = String::new();
                loop {
                    match lines.next() {
                        Some("end") => break,
                        Some(l) => {
                            text.push_str(l);
                            text.push('\n');
                        }
                        None => return Err(Error::Checkpoint(format!("network `{name}` spec not terminated"))),
                    }
                }
                specs.push((name.to_string(), NetworkSpec::from_text(&text)?));
            } else if let Some((k, v)) = line.split_once('=') {
                match k {
                    "seed" => seed = v.parse().ok(),
                    "iteration" => iteration = v.parse().ok(),
                    _ => meta.push((k.to_string(), v.to_string())),
                }
            } else if !line.is_empty() {
                return Err(Error::Checkpoint(format!("unparseable header line `{line}`")));
            }
        }
        let seed = seed.ok_or_else(|| Error::Checkpoint("header lacks seed".into()))?;
        let iteration = iteration.ok_or_else(|| Error::Checkpoint("header lacks iteration".into()))?;

        let mut networks = Vec::with_capacity(specs.len());
        for (name, spec) in specs {
            let mut layers = Vec::with_capacity(spec.layers.len());
            for l in &spec.layers {
                let params = l.param_shapes().iter().map(|s| read_tensor(&mut r, s)).collect::<Result<_>>()?;
                let buffers = l.buffer_shapes().iter().map(|s| read_tensor(&mut r, s)).collect::<Result<_>>()?;
                layers.push(LayerParams { params, buffers });
            }
            networks.push((name, NetworkState::from_parts(spec, layers)?));
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
        }
        Ok(Self {
            seed,
            iteration,
            meta,
            networks,
        })
    }

    /// Writes to `path` via a temporary file and rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let f = File::create(&tmp)?;
            self.write(BufWriter::new(f))?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| Error::Checkpoint("unexpected end of file".into()))?;
    Ok(u64::from_le_bytes(b))
}

fn read_tensor<R: Read>(r: &mut R, want: &[usize]) -> Result<Tensor> {
    let ndim = read_u64(r)? as usize;
    if ndim != want.len() {
        return Err(Error::Checkpoint(format!("tensor rank {ndim}, expected {}", want.len())));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(read_u64(r)? as usize);
    }
    if shape != want {
        return Err(Error::Checkpoint(format!("tensor shape {shape:?}, expected {want:?}")));
    }
    let n: usize = shape.iter().product();
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Checkpoint("truncated tensor data".into()))?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data)
}
