//! MNIST in the IDX format: a big-endian `u32` magic, one big-endian `u32`
//! per dimension, then raw unsigned bytes.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use super::Dataset;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

pub const MNIST_TRAIN: usize = 60_000;
pub const MNIST_TEST: usize = 10_000;

/// Locations of the four MNIST files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MnistFiles {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl MnistFiles {
    /// Standard file names inside `dir`; each may also carry a `.gz` suffix.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        let pick = |stem: &str| {
            let raw = dir.join(stem);
            let gz = dir.join(format!("{stem}.gz"));
            if !raw.exists() && gz.exists() {
                gz
            } else {
                raw
            }
        };
        Self {
            train_images: pick("train-images-idx3-ubyte"),
            train_labels: pick("train-labels-idx1-ubyte"),
            test_images: pick("t10k-images-idx3-ubyte"),
            test_labels: pick("t10k-labels-idx1-ubyte"),
        }
    }

    pub fn exist(&self) -> bool {
        [&self.train_images, &self.train_labels, &self.test_images, &self.test_labels]
            .iter()
            .all(|p| p.exists())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Truncated(format!("header ends at byte {}", bytes.len())))
}

/// Header dimensions and the payload of an IDX file with the given magic.
fn parse(bytes: &[u8], magic: u32, rank: usize) -> Result<(Vec<usize>, &[u8])> {
    let found = be_u32(bytes, 0)?;
    if found != magic {
        return Err(Error::BadMagic { expected: magic, found });
    }
    let dims = (0..rank)
        .map(|i| be_u32(bytes, 4 + 4 * i).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * rank;
    let expected = dims.iter().product::<usize>();
    let payload = &bytes[header..];
    if payload.len() < expected {
        return Err(Error::Truncated(format!(
            "header declares {expected} data bytes, file holds {}",
            payload.len()
        )));
    }
    if payload.len() > expected {
        return Err(Error::CountMismatch(format!(
            "{} bytes beyond the declared {expected}",
            payload.len() - expected
        )));
    }
    Ok((dims, payload))
}

/// `(count, rows, cols, pixels)` of an image file.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let (dims, payload) = parse(bytes, IMAGES_MAGIC, 3)?;
    Ok((dims[0], dims[1], dims[2], payload))
}

pub fn parse_labels(bytes: &[u8]) -> Result<&[u8]> {
    Ok(parse(bytes, LABELS_MAGIC, 1)?.1)
}

fn load_split(images: &Path, labels: &Path, expected: usize) -> Result<(Vec<f64>, Vec<u32>, usize)> {
    let image_bytes = read_file(images)?;
    let label_bytes = read_file(labels)?;
    let (count, rows, cols, pixels) = parse_images(&image_bytes)?;
    let ys = parse_labels(&label_bytes)?;
    if count != ys.len() {
        return Err(Error::CountMismatch(format!(
            "{} has {count} images, {} has {} labels",
            images.display(),
            labels.display(),
            ys.len()
        )));
    }
    if count != expected {
        return Err(Error::CountMismatch(format!("expected {expected} examples, found {count}")));
    }
    if let Some(y) = ys.iter().find(|&&y| y > 9) {
        return Err(Error::InvalidArgument(format!("label {y} outside 0..=9")));
    }
    let xs = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    Ok((xs, ys.iter().map(|&y| y as u32).collect(), rows * cols))
}

/// Loads the 60,000/10,000 MNIST split with pixels scaled to `[0, 1]`.
pub fn load_mnist_idx(files: &MnistFiles) -> Result<Dataset> {
    let (tx, ty, dim) = load_split(&files.train_images, &files.train_labels, MNIST_TRAIN)?;
    let (vx, vy, vdim) = load_split(&files.test_images, &files.test_labels, MNIST_TEST)?;
    if dim != vdim {
        return Err(Error::Shape(format!("train images have {dim} pixels, test images {vdim}")));
    }
    let side = (dim as f64).sqrt() as usize;
    let ds = Dataset::new("mnist", dim, 10, (tx, ty), (vx, vy))?;
    if side * side == dim {
        ds.with_image_shape([1, side, side])
    } else {
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_file(count: u32, rows: u32, cols: u32, payload: usize) -> Vec<u8> {
        let mut b = IMAGES_MAGIC.to_be_bytes().to_vec();
        for d in [count, rows, cols] {
            b.extend(d.to_be_bytes());
        }
        b.extend((0..payload).map(|i| (i % 256) as u8));
        b
    }

    #[test]
    fn parses_well_formed_images() {
        let b = image_file(2, 2, 3, 12);
        assert_eq!(&b[..4], &[0, 0, 8, 3]);
        let (n, r, c, px) = parse_images(&b).unwrap();
        assert_eq!((n, r, c, px.len()), (2, 2, 3, 12));
    }

    #[test]
    fn parses_labels() {
        let mut b = vec![0, 0, 8, 1, 0, 0, 0, 3];
        b.extend([7, 0, 9]);
        assert_eq!(parse_labels(&b).unwrap(), &[7, 0, 9]);
    }

    #[test]
    fn wrong_magic() {
        let b = image_file(1, 1, 1, 1);
        assert!(matches!(
            parse_labels(&b),
            Err(Error::BadMagic {
                expected: LABELS_MAGIC,
                found: IMAGES_MAGIC
            })
        ));
    }

    #[test]
    fn corrupted_length_header_is_truncation() {
        let mut b = image_file(2, 2, 3, 12);
        b[7] = 9; // now claims 9 images
        let err = parse_images(&b).unwrap_err();
        assert!(matches!(err, Error::Truncated(_)));
        assert!(err.to_string().starts_with("truncated file"));
        assert!(matches!(parse_images(&b[..10]), Err(Error::Truncated(_))));
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let b = image_file(1, 2, 2, 5);
        assert!(matches!(parse_images(&b), Err(Error::CountMismatch(_))));
    }

    #[test]
    fn image_label_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("i");
        let lab = dir.path().join("l");
        fs::write(&img, image_file(2, 1, 1, 2)).unwrap();
        fs::write(&lab, [0, 0, 8, 1, 0, 0, 0, 3, 1, 2, 3]).unwrap();
        assert!(matches!(load_split(&img, &lab, 2), Err(Error::CountMismatch(_))));
    }
}
