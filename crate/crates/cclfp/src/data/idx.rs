//! IDX file ingestion (the MNIST container format).
//!
//! Big-endian headers, magic 0x00000803 for image files and 0x00000801 for
//! label files. Malformed input surfaces as a data error naming the byte
//! offset where parsing failed.

use std::path::Path;

use crate::data::Example;
use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug)]
pub struct IdxImages {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    /// count * height * width raw bytes, row-major.
    pub pixels: Vec<u8>,
}

#[derive(Debug)]
pub struct LoadedIdx {
    pub examples: Vec<Example>,
    pub height: usize,
    pub width: usize,
}

fn read_u32_be(bytes: &[u8], offset: usize, path: &Path, what: &str) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::data(format!(
            "{}: truncated reading {} at offset {} (file is {} bytes)",
            path.display(),
            what,
            offset,
            bytes.len()
        )));
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

pub fn read_idx_images(path: &Path) -> Result<IdxImages> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::data(format!("{}: {}", path.display(), e)))?;
    let magic = read_u32_be(&bytes, 0, path, "magic")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::data(format!(
            "{}: bad image magic {:#010x} at offset 0 (expected {:#010x})",
            path.display(),
            magic,
            IMAGE_MAGIC
        )));
    }
    let count = read_u32_be(&bytes, 4, path, "image count")? as usize;
    let height = read_u32_be(&bytes, 8, path, "row count")? as usize;
    let width = read_u32_be(&bytes, 12, path, "column count")? as usize;
    let expected = 16 + count * height * width;
    if bytes.len() != expected {
        return Err(Error::data(format!(
            "{}: expected {} bytes for {} {}x{} images, file has {} (data ends at offset {})",
            path.display(),
            expected,
            count,
            height,
            width,
            bytes.len(),
            bytes.len()
        )));
    }
    Ok(IdxImages {
        count,
        height,
        width,
        pixels: bytes[16..].to_vec(),
    })
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::data(format!("{}: {}", path.display(), e)))?;
    let magic = read_u32_be(&bytes, 0, path, "magic")?;
    if magic != LABEL_MAGIC {
        return Err(Error::data(format!(
            "{}: bad label magic {:#010x} at offset 0 (expected {:#010x})",
            path.display(),
            magic,
            LABEL_MAGIC
        )));
    }
    let count = read_u32_be(&bytes, 4, path, "label count")? as usize;
    let expected = 8 + count;
    if bytes.len() != expected {
        return Err(Error::data(format!(
            "{}: expected {} bytes for {} labels, file has {} (data ends at offset {})",
            path.display(),
            expected,
            count,
            bytes.len(),
            bytes.len()
        )));
    }
    Ok(bytes[8..].to_vec())
}

/// Load an image/label file pair into examples with pixels scaled by 1/255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LoadedIdx> {
    let images = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if labels.len() != images.count {
        return Err(Error::data(format!(
            "{} has {} labels but {} has {} images",
            labels_path.display(),
            labels.len(),
            images_path.display(),
            images.count
        )));
    }
    let stride = images.height * images.width;
    let mut examples = Vec::with_capacity(images.count);
    for (i, &label) in labels.iter().enumerate() {
        if label > 9 {
            return Err(Error::data(format!(
                "{}: label {} at offset {} is not a digit",
                labels_path.display(),
                label,
                8 + i
            )));
        }
        let raw = &images.pixels[i * stride..(i + 1) * stride];
        examples.push(Example {
            input: raw.iter().map(|&p| p as f64 / 255.0).collect(),
            label: label as usize,
            task_id: 0,
        });
    }
    Ok(LoadedIdx {
        examples,
        height: images.height,
        width: images.width,
    })
}

pub fn write_idx_images(path: &Path, height: usize, width: usize, pixels: &[u8]) -> Result<()> {
    let count = pixels.len() / (height * width);
    if count * height * width != pixels.len() {
        return Err(Error::data(format!(
            "pixel buffer length {} is not a multiple of {}x{}",
            pixels.len(),
            height,
            width
        )));
    }
    let mut bytes = Vec::with_capacity(16 + pixels.len());
    bytes.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(count as u32).to_be_bytes());
    bytes.extend_from_slice(&(height as u32).to_be_bytes());
    bytes.extend_from_slice(&(width as u32).to_be_bytes());
    bytes.extend_from_slice(pixels);
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + labels.len());
    bytes.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    bytes.extend_from_slice(labels);
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Conventional MNIST file names inside a data directory.
pub fn mnist_paths(dir: &Path) -> [std::path::PathBuf; 4] {
    [
        dir.join("train-images-idx3-ubyte"),
        dir.join("train-labels-idx1-ubyte"),
        dir.join("t10k-images-idx3-ubyte"),
        dir.join("t10k-labels-idx1-ubyte"),
    ]
}

/// Load the train and test splits from a directory laid out like the MNIST
/// distribution.
pub fn load_mnist_dir(dir: &Path) -> Result<(LoadedIdx, LoadedIdx)> {
    let [ti, tl, vi, vl] = mnist_paths(dir);
    Ok((load_idx(&ti, &tl)?, load_idx(&vi, &vl)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp_file(name: &str) -> std::path::PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("cclfp-idx-test-{}-{}", std::process::id(), name));
        p
    }

    #[test]
    fn fixture_round_trips_exact_pixels() {
        let img = tmp_file("imgs");
        let lbl = tmp_file("lbls");
        // two 2x3 images with hand-picked bytes
        let pixels = [0u8, 51, 102, 153, 204, 255, 10, 20, 30, 40, 50, 60];
        write_idx_images(&img, 2, 3, &pixels).unwrap();
        write_idx_labels(&lbl, &[7, 3]).unwrap();

        let loaded = load_idx(&img, &lbl).unwrap();
        assert_eq!(loaded.height, 2);
        assert_eq!(loaded.width, 3);
        assert_eq!(loaded.examples.len(), 2);
        assert_eq!(loaded.examples[0].label, 7);
        assert_eq!(loaded.examples[1].label, 3);
        let expect: Vec<f64> = pixels[..6].iter().map(|&p| p as f64 / 255.0).collect();
        assert_eq!(loaded.examples[0].input, expect);

        std::fs::remove_file(img).ok();
        std::fs::remove_file(lbl).ok();
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let img = tmp_file("imgs-mismatch");
        let lbl = tmp_file("lbls-mismatch");
        write_idx_images(&img, 2, 2, &[0; 8]).unwrap();
        write_idx_labels(&lbl, &[1, 2, 3]).unwrap();
        let err = load_idx(&img, &lbl).unwrap_err();
        assert!(matches!(err, Error::Data(_)), "{err}");
        std::fs::remove_file(img).ok();
        std::fs::remove_file(lbl).ok();
    }

    #[test]
    fn bad_magic_names_offset() {
        let img = tmp_file("imgs-magic");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&0x0000_0802u32.to_be_bytes());
        bytes.extend_from_slice(&[0; 12]);
        std::fs::write(&img, bytes).unwrap();
        let err = read_idx_images(&img).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("offset 0"), "{msg}");
        std::fs::remove_file(img).ok();
    }

    #[test]
    fn truncated_file_names_offset() {
        let img = tmp_file("imgs-trunc");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&5u32.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&[0; 7]); // should be 20 data bytes
        std::fs::write(&img, bytes).unwrap();
        let err = read_idx_images(&img).unwrap_err();
        assert!(err.to_string().contains("offset"), "{err}");
        std::fs::remove_file(img).ok();
    }
}
