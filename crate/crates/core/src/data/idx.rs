//! Big-endian IDX files, optionally gzip-compressed.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;

use super::{ImageDataset, SplitTag};
use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_payload(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut raw = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn parse(path: &Path, bytes: &[u8], magic: u32, ndims: usize) -> Result<(Vec<usize>, usize)> {
    let header = 4 + 4 * ndims;
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: header,
            found: bytes.len(),
        });
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: magic,
            found,
        });
    }
    if bytes.len() < header {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: header,
            found: bytes.len(),
        });
    }
    let dims: Vec<usize> = (0..ndims).map(|i| be_u32(bytes, 4 + 4 * i) as usize).collect();
    let expected = header + dims.iter().product::<usize>();
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    Ok((dims, header))
}

/// Image file: `(count, height, width, pixel bytes)`.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let bytes = read_payload(path)?;
    let (dims, header) = parse(path, &bytes, IMAGE_MAGIC, 3)?;
    let len = dims.iter().product::<usize>();
    Ok((dims[0], dims[1], dims[2], bytes[header..header + len].to_vec()))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_payload(path)?;
    let (dims, header) = parse(path, &bytes, LABEL_MAGIC, 1)?;
    Ok(bytes[header..header + dims[0]].to_vec())
}

/// Loads an image/label IDX pair; pixel bytes are scaled by `1/255`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<ImageDataset> {
    let (n, h, w, pixels) = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if labels.len() != n {
        return Err(Error::CountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    if n == 0 {
        return Err(Error::Dataset(format!("{} holds no images", images_path.display())));
    }
    let images = pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
    ImageDataset::new(images, labels, h, w, SplitTag::Train)
}

/// Writes a dataset as uncompressed IDX, quantizing pixels back to bytes.
pub fn write_idx(data: &ImageDataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let write = |path: &Path, header: &[u32], body: &mut dyn Iterator<Item = u8>| -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let body: Vec<u8> = body.collect();
        header
            .iter()
            .try_for_each(|v| out.write_all(&v.to_be_bytes()))
            .and_then(|_| out.write_all(&body))
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(path, e))
    };
    let n = data.len() as u32;
    write(
        images_path,
        &[IMAGE_MAGIC, n, data.height() as u32, data.width() as u32],
        &mut data.images().iter().map(|&v| (v * 255.0).round() as u8),
    )?;
    write(labels_path, &[LABEL_MAGIC, n], &mut data.labels().iter().copied())
}
