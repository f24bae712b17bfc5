//! Columnar dataset container.
//!
//! Layout (integers big-endian, floats little-endian f64):
//!
//! ```text
//! magic          4 bytes  "SCDS"
//! version        u32      currently 1
//! split          u8       0 = train, 1 = test
//! flags          u8       bit 0: provenance columns present
//! count          u64      number of samples N
//! dims           u32      feature dimensionality (784)
//! features       N * dims f64, row-major
//! labels         N u8
//! if provenance:
//!   provenance       N u8   0 = clean, 1 = poisoned
//!   original_labels  N u8
//!   non_target       u8
//!   target           u8
//! ```
//!
//! Round-trips reproduce features bitwise and labels exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::backdoor::{PoisonedDataset, Provenance};
use crate::data::{Dataset, SplitTag};
use crate::error::{Error, Result};

pub const CONTAINER_MAGIC: [u8; 4] = *b"SCDS";
pub const CONTAINER_VERSION: u32 = 1;

const FLAG_PROVENANCE: u8 = 1;

fn write_header(
    w: &mut impl Write,
    path: &str,
    split: SplitTag,
    flags: u8,
    count: usize,
    dims: usize,
) -> Result<()> {
    let mut out = |buf: &[u8]| w.write_all(buf).map_err(|e| Error::io(path, e));
    out(&CONTAINER_MAGIC)?;
    out(&CONTAINER_VERSION.to_be_bytes())?;
    out(&[split.tag(), flags])?;
    out(&(count as u64).to_be_bytes())?;
    out(&(dims as u32).to_be_bytes())
}

fn write_body(w: &mut impl Write, path: &str, data: &Dataset) -> Result<()> {
    let mut out = |buf: &[u8]| w.write_all(buf).map_err(|e| Error::io(path, e));
    for v in data.features().iter() {
        out(&v.to_le_bytes())?;
    }
    out(data.labels())
}

/// Writes a clean dataset.
pub fn save_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let display = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(&display, e))?;
    let mut w = BufWriter::new(file);
    write_header(&mut w, &display, data.split(), 0, data.len(), data.features().ncols())?;
    write_body(&mut w, &display, data)?;
    w.flush().map_err(|e| Error::io(&display, e))
}

/// Writes a poisoned dataset with its provenance columns.
pub fn save_poisoned_dataset(path: &Path, data: &PoisonedDataset) -> Result<()> {
    let display = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(&display, e))?;
    let mut w = BufWriter::new(file);
    write_header(
        &mut w,
        &display,
        data.data().split(),
        FLAG_PROVENANCE,
        data.data().len(),
        data.data().features().ncols(),
    )?;
    write_body(&mut w, &display, data.data())?;
    let mut out = |buf: &[u8]| w.write_all(buf).map_err(|e| Error::io(&display, e));
    let prov: Vec<u8> = data
        .provenance()
        .iter()
        .map(|&p| u8::from(p == Provenance::Poisoned))
        .collect();
    out(&prov)?;
    out(data.original_labels())?;
    out(&[data.non_target_label(), data.target_label()])?;
    w.flush().map_err(|e| Error::io(&display, e))
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
}

fn read_parts(path: &Path, expect_provenance: bool) -> Result<(Dataset, Option<(Vec<Provenance>, Vec<u8>, u8, u8)>)> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&display, e))?;
    let mut r = Reader {
        inner: BufReader::new(file),
        path: &display,
    };
    let magic = r.bytes(4)?;
    if magic != CONTAINER_MAGIC {
        return Err(Error::BadMagic {
            path: display.clone(),
            found: u32::from_be_bytes(magic.try_into().expect("4 bytes")),
            expected: u32::from_be_bytes(CONTAINER_MAGIC),
        });
    }
    let version = u32::from_be_bytes(r.bytes(4)?.try_into().expect("4 bytes"));
    if version != CONTAINER_VERSION {
        return Err(Error::FormatVersion {
            found: version,
            supported: CONTAINER_VERSION,
        });
    }
    let head = r.bytes(2)?;
    let split = SplitTag::from_tag(head[0]).ok_or_else(|| Error::DataDimension {
        path: display.clone(),
        detail: format!("unknown split tag {}", head[0]),
    })?;
    let has_provenance = head[1] & FLAG_PROVENANCE != 0;
    if has_provenance != expect_provenance {
        return Err(Error::DataDimension {
            path: display.clone(),
            detail: format!(
                "provenance columns {}, expected the opposite",
                if has_provenance { "present" } else { "absent" }
            ),
        });
    }
    let count = u64::from_be_bytes(r.bytes(8)?.try_into().expect("8 bytes")) as usize;
    let dims = u32::from_be_bytes(r.bytes(4)?.try_into().expect("4 bytes")) as usize;
    let raw = r.bytes(count * dims * 8)?;
    let features = Array2::from_shape_vec(
        (count, dims),
        raw.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    )
    .expect("shape matches read size");
    let labels = r.bytes(count)?;
    let data = Dataset::new(features, labels, split)?;
    if !has_provenance {
        return Ok((data, None));
    }
    let prov_bytes = r.bytes(count)?;
    let provenance = prov_bytes
        .iter()
        .map(|&b| {
            if b == 0 {
                Provenance::Clean
            } else {
                Provenance::Poisoned
            }
        })
        .collect();
    let original_labels = r.bytes(count)?;
    let tail = r.bytes(2)?;
    Ok((data, Some((provenance, original_labels, tail[0], tail[1]))))
}

/// Reads a clean dataset written by [`save_dataset`].
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    Ok(read_parts(path, false)?.0)
}

/// Reads a poisoned dataset written by [`save_poisoned_dataset`].
pub fn load_poisoned_dataset(path: &Path) -> Result<PoisonedDataset> {
    let (data, extra) = read_parts(path, true)?;
    let (provenance, original_labels, non_target, target) =
        extra.expect("provenance wanted and validated");
    PoisonedDataset::from_parts(data, provenance, original_labels, non_target, target)
}
