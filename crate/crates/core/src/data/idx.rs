//! Reader for the original MNIST IDX container format.
//!
//! Big-endian headers: images carry magic `0x00000803` followed by count,
//! rows, cols; labels carry magic `0x00000801` followed by count. Pixel
//! bytes are divided by 255 into `[0, 1]`.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use ndarray::Array2;

use crate::data::{Dataset, SplitTag, FEATURE_DIM, IMAGE_SIDE};
use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_exact(reader: &mut impl Read, buf: &mut [u8], path: &str) -> Result<()> {
    reader.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Truncated {
                path: path.into(),
                detail: format!("expected {} more bytes", buf.len()),
            }
        } else {
            Error::io(path, e)
        }
    })
}

fn read_u32_be(reader: &mut impl Read, path: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(reader, &mut buf, path)?;
    Ok(u32::from_be_bytes(buf))
}

/// Loads an images/labels IDX pair into a [`Dataset`].
pub fn load_idx(images_path: &Path, labels_path: &Path, split: SplitTag) -> Result<Dataset> {
    let img_display = images_path.display().to_string();
    let file = File::open(images_path).map_err(|e| Error::io(&img_display, e))?;
    let mut reader = BufReader::new(file);

    let magic = read_u32_be(&mut reader, &img_display)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::BadMagic {
            path: img_display,
            found: magic,
            expected: IMAGE_MAGIC,
        });
    }
    let count = read_u32_be(&mut reader, &img_display)? as usize;
    let rows = read_u32_be(&mut reader, &img_display)? as usize;
    let cols = read_u32_be(&mut reader, &img_display)? as usize;
    if rows != IMAGE_SIDE || cols != IMAGE_SIDE {
        return Err(Error::DataDimension {
            path: img_display,
            detail: format!("expected {IMAGE_SIDE}x{IMAGE_SIDE} images, header says {rows}x{cols}"),
        });
    }
    let mut pixel_bytes = vec![0u8; count * FEATURE_DIM];
    read_exact(&mut reader, &mut pixel_bytes, &img_display)?;

    let lbl_display = labels_path.display().to_string();
    let file = File::open(labels_path).map_err(|e| Error::io(&lbl_display, e))?;
    let mut reader = BufReader::new(file);
    let magic = read_u32_be(&mut reader, &lbl_display)?;
    if magic != LABEL_MAGIC {
        return Err(Error::BadMagic {
            path: lbl_display,
            found: magic,
            expected: LABEL_MAGIC,
        });
    }
    let label_count = read_u32_be(&mut reader, &lbl_display)? as usize;
    if label_count != count {
        return Err(Error::DataDimension {
            path: lbl_display,
            detail: format!("{label_count} labels for {count} images"),
        });
    }
    let mut labels = vec![0u8; label_count];
    read_exact(&mut reader, &mut labels, &lbl_display)?;

    let features = Array2::from_shape_vec(
        (count, FEATURE_DIM),
        pixel_bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
    )
    .expect("shape matches byte count");
    Dataset::new(features, labels, split)
}
