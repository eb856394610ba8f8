//! IDX-format image/label files and their conversion to row-per-timestep sequences.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::data::{one_hot, SeqSample};
use crate::error::{Error, Result};
use crate::ndcore::Matrix2;

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;
pub const NUM_CLASSES: usize = 10;

/// A labeled image set with pixels kept as raw bytes.
#[derive(Debug, Clone)]
pub struct DigitSet {
    pub rows: usize,
    pub cols: usize,
    /// One entry per image, `rows * cols` bytes each, row-major.
    pub images: Vec<Vec<u8>>,
    pub labels: Vec<u8>,
}

impl DigitSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Converts image `idx` into a sequence: row `t` of the image becomes the
    /// input at timestep `t`, pixels scaled to `[0, 1]`; the target is the
    /// one-hot label over ten classes.
    pub fn to_sequence(&self, idx: usize) -> Result<SeqSample> {
        let img = self
            .images
            .get(idx)
            .ok_or_else(|| Error::invalid(format!("image index {idx} out of range")))?;
        let label = self.labels[idx] as usize;
        let mut inputs = Vec::with_capacity(self.rows);
        for r in 0..self.rows {
            let mut x = Matrix2::zeros(self.cols, 1)?;
            for c in 0..self.cols {
                x.set(c, 0, f64::from(img[r * self.cols + c]) / 255.0);
            }
            inputs.push(x);
        }
        SeqSample::new(inputs, one_hot(label, NUM_CLASSES)?)
    }

    pub fn to_sequences(&self, indices: &[usize]) -> Result<Vec<SeqSample>> {
        indices.iter().map(|&i| self.to_sequence(i)).collect()
    }
}

fn read_u32_be(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::data(format!("truncated header while reading {what}")))?;
    Ok(u32::from_be_bytes(buf))
}

/// Reads a pair of IDX files (images magic 2051, labels magic 2049).
pub fn load_digits(images_path: &Path, labels_path: &Path) -> Result<DigitSet> {
    let mut ir = BufReader::new(File::open(images_path)?);
    let magic = read_u32_be(&mut ir, "image magic")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::data(format!(
            "bad image file magic {magic}, expected {IMAGE_MAGIC}"
        )));
    }
    let count = read_u32_be(&mut ir, "image count")? as usize;
    let rows = read_u32_be(&mut ir, "image rows")? as usize;
    let cols = read_u32_be(&mut ir, "image cols")? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::data("image dimensions must be nonzero".to_string()));
    }
    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let mut px = vec![0u8; rows * cols];
        ir.read_exact(&mut px)
            .map_err(|_| Error::data(format!("truncated image data at image {i}")))?;
        images.push(px);
    }

    let mut lr = BufReader::new(File::open(labels_path)?);
    let magic = read_u32_be(&mut lr, "label magic")?;
    if magic != LABEL_MAGIC {
        return Err(Error::data(format!(
            "bad label file magic {magic}, expected {LABEL_MAGIC}"
        )));
    }
    let label_count = read_u32_be(&mut lr, "label count")? as usize;
    if label_count != count {
        return Err(Error::data(format!(
            "label count {label_count} does not match image count {count}"
        )));
    }
    let mut labels = vec![0u8; count];
    lr.read_exact(&mut labels)
        .map_err(|_| Error::data("truncated label data".to_string()))?;
    for (i, &l) in labels.iter().enumerate() {
        if l as usize >= NUM_CLASSES {
            return Err(Error::data(format!("label {l} at index {i} out of range")));
        }
    }
    Ok(DigitSet {
        rows,
        cols,
        images,
        labels,
    })
}

pub fn write_idx_images(path: &Path, rows: usize, cols: usize, images: &[Vec<u8>]) -> Result<()> {
    for (i, img) in images.iter().enumerate() {
        if img.len() != rows * cols {
            return Err(Error::invalid(format!(
                "image {i} has {} bytes, expected {}",
                img.len(),
                rows * cols
            )));
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&IMAGE_MAGIC.to_be_bytes())?;
    w.write_all(&(images.len() as u32).to_be_bytes())?;
    w.write_all(&(rows as u32).to_be_bytes())?;
    w.write_all(&(cols as u32).to_be_bytes())?;
    for img in images {
        w.write_all(img)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&LABEL_MAGIC.to_be_bytes())?;
    w.write_all(&(labels.len() as u32).to_be_bytes())?;
    w.write_all(labels)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn tiny_set() -> DigitSet {
        DigitSet {
            rows: 2,
            cols: 3,
            images: vec![vec![0, 128, 255, 10, 20, 30], vec![1, 2, 3, 4, 5, 6]],
            labels: vec![7, 0],
        }
    }

    #[test]
    fn roundtrip_is_lossless() {
        let dir = tempdir().unwrap();
        let ip = dir.path().join("imgs.idx3-ubyte");
        let lp = dir.path().join("labels.idx1-ubyte");
        let set = tiny_set();
        write_idx_images(&ip, set.rows, set.cols, &set.images).unwrap();
        write_idx_labels(&lp, &set.labels).unwrap();
        let back = load_digits(&ip, &lp).unwrap();
        assert_eq!(back.rows, 2);
        assert_eq!(back.cols, 3);
        assert_eq!(back.images, set.images);
        assert_eq!(back.labels, set.labels);
    }

    #[test]
    fn sequence_conversion_scales_rows() {
        let set = tiny_set();
        let s = set.to_sequence(0).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.input_dim(), 3);
        assert_eq!(s.inputs[0].get(1, 0), 128.0 / 255.0);
        assert_eq!(s.inputs[0].get(2, 0), 1.0);
        assert_eq!(s.inputs[1].get(0, 0), 10.0 / 255.0);
        assert_eq!(s.class_index(), 7);

        let recovered: Vec<u8> = (0..2)
            .flat_map(|t| {
                (0..3)
                    .map(|c| (s.inputs[t].get(c, 0) * 255.0).round() as u8)
                    .collect::<Vec<_>>()
            })
            .collect();
        assert_eq!(recovered, set.images[0]);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempdir().unwrap();
        let ip = dir.path().join("imgs");
        let lp = dir.path().join("labels");
        let set = tiny_set();
        write_idx_images(&ip, set.rows, set.cols, &set.images).unwrap();
        write_idx_labels(&lp, &set.labels).unwrap();

        let bad_magic = dir.path().join("bad");
        std::fs::write(&bad_magic, 99u32.to_be_bytes()).unwrap();
        assert!(load_digits(&bad_magic, &lp).is_err());

        let mut bytes = std::fs::read(&ip).unwrap();
        bytes.truncate(bytes.len() - 2);
        let trunc = dir.path().join("trunc");
        std::fs::write(&trunc, bytes).unwrap();
        assert!(load_digits(&trunc, &lp).is_err());

        write_idx_labels(&lp, &[1]).unwrap();
        let err = load_digits(&ip, &lp).unwrap_err();
        assert!(err.to_string().contains("does not match"));
    }
}
