//! Binary checkpoint container for named networks.
//!
//! Layout (all integers big-endian, floats little-endian f64):
//!
//! ```text
//! magic            4 bytes  "SCCK"
//! version          u32      format version, currently 1
//! init_seed        u64      RNG seed the parameters were initialized from
//! network_count    u32
//! per network:
//!   name_len       u32      followed by that many UTF-8 bytes
//!   input_dim      u32
//!   layer_count    u32
//!   per layer:
//!     in_dim       u32
//!     out_dim      u32
//!     activation   u8       0 = ReLU, 1 = Linear, 2 = Softmax
//!     weights      out_dim * in_dim f64, row-major
//!     biases       out_dim f64
//! ```
//!
//! Round-trips are bitwise exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::nn::network::{Activation, DenseLayer, Network};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SCCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A set of named networks plus the init seed they were built from.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub init_seed: u64,
    pub networks: Vec<(String, Network)>,
}

impl Checkpoint {
    pub fn network(&self, name: &str) -> Option<&Network> {
        self.networks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, net)| net)
    }
}

struct Reader<'a> {
    inner: BufReader<File>,
    path: &'a str,
}

impl<'a> Reader<'a> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::Truncated {
                    path: self.path.into(),
                    detail: format!("expected {n} more bytes"),
                }
            } else {
                Error::io(self.path, e)
            }
        })?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.bytes(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.bytes(8)?;
        Ok(u64::from_be_bytes(b.try_into().expect("8 bytes")))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.bytes(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

/// Writes `networks` with their `init_seed` to `path`.
pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let display = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(&display, e))?;
    let mut w = BufWriter::new(file);
    let mut write = |buf: &[u8]| w.write_all(buf).map_err(|e| Error::io(&display, e));

    write(&CHECKPOINT_MAGIC)?;
    write(&CHECKPOINT_VERSION.to_be_bytes())?;
    write(&checkpoint.init_seed.to_be_bytes())?;
    write(&(checkpoint.networks.len() as u32).to_be_bytes())?;
    for (name, net) in &checkpoint.networks {
        write(&(name.len() as u32).to_be_bytes())?;
        write(name.as_bytes())?;
        write(&(net.input_dim() as u32).to_be_bytes())?;
        write(&(net.layers().len() as u32).to_be_bytes())?;
        for layer in net.layers() {
            write(&(layer.in_dim() as u32).to_be_bytes())?;
            write(&(layer.out_dim() as u32).to_be_bytes())?;
            write(&[layer.activation().tag()])?;
            for v in layer.weights().iter() {
                write(&v.to_le_bytes())?;
            }
            for v in layer.biases().iter() {
                write(&v.to_le_bytes())?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&display, e))
}

/// Reads a checkpoint written by `save_checkpoint`.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&display, e))?;
    let mut r = Reader {
        inner: BufReader::new(file),
        path: &display,
    };

    let magic = r.bytes(4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            path: display.clone(),
            found: u32::from_be_bytes(magic.try_into().expect("4 bytes")),
            expected: u32::from_be_bytes(CHECKPOINT_MAGIC),
        });
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::FormatVersion {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let init_seed = r.u64()?;
    let network_count = r.u32()? as usize;
    let mut networks = Vec::with_capacity(network_count);
    for _ in 0..network_count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.bytes(name_len)?).map_err(|_| Error::DataDimension {
            path: display.clone(),
            detail: "network name is not valid UTF-8".into(),
        })?;
        let input_dim = r.u32()? as usize;
        let layer_count = r.u32()? as usize;
        let mut layers = Vec::with_capacity(layer_count);
        for _ in 0..layer_count {
            let in_dim = r.u32()? as usize;
            let out_dim = r.u32()? as usize;
            let activation = Activation::from_tag(r.u8()?).ok_or_else(|| Error::DataDimension {
                path: display.clone(),
                detail: "unknown activation tag".into(),
            })?;
            let weights = Array2::from_shape_vec((out_dim, in_dim), r.f64_vec(out_dim * in_dim)?)
                .expect("shape matches read size");
            let biases = Array1::from_vec(r.f64_vec(out_dim)?);
            layers.push(DenseLayer::new(weights, biases, activation)?);
        }
        networks.push((name, Network::new(input_dim, layers)?));
    }
    Ok(Checkpoint {
        init_seed,
        networks,
    })
}
