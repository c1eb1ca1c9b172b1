//! IDX (MNIST) binary format.
//!
//! Big-endian header: a `u32` magic encoding dtype and rank, then one `u32`
//! per dimension, then the payload bytes. Image files carry magic
//! `0x00000803` (u8 data, rank 3), label files `0x00000801`. Files ending in
//! a gzip stream (magic `1f 8b`) are transparently decompressed.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};

use super::{LabeledDataset, Split};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::format(path, format!("gzip decode failed: {}", e)))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(buf: &[u8], offset: usize, path: &Path, what: &str) -> Result<u32> {
    if offset + 4 > buf.len() {
        return Err(Error::format(
            path,
            format!(
                "truncated IDX file: need 4 bytes for {} at offset {}, file has {}",
                what,
                offset,
                buf.len()
            ),
        ));
    }
    Ok(u32::from_be_bytes(buf[offset..offset + 4].try_into().unwrap()))
}

struct IdxPayload {
    dims: Vec<usize>,
    data: Vec<u8>,
}

fn parse_idx(path: &Path, expected_magic: u32) -> Result<IdxPayload> {
    let buf = read_maybe_gz(path)?;
    let magic = be_u32(&buf, 0, path, "magic")?;
    if magic != expected_magic {
        return Err(Error::format(
            path,
            format!("bad IDX magic: expected {:08x}, found {:08x}", expected_magic, magic),
        ));
    }
    let rank = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(rank);
    for d in 0..rank {
        dims.push(be_u32(&buf, 4 + 4 * d, path, "dimension")? as usize);
    }
    let header = 4 + 4 * rank;
    let payload: usize = dims.iter().product();
    if buf.len() != header + payload {
        return Err(Error::format(
            path,
            format!(
                "IDX payload length mismatch: header promises {} bytes after offset {}, file has {}",
                payload,
                header,
                buf.len() - header
            ),
        ));
    }
    Ok(IdxPayload {
        dims,
        data: buf[header..].to_vec(),
    })
}

/// Load an MNIST-format image/label file pair. Images come out raw in
/// `[0, 255]`, shaped `n x 1 x rows x cols`; labels must lie in `[0, 10)`.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<LabeledDataset> {
    let images = parse_idx(images_path, IMAGES_MAGIC)?;
    let labels = parse_idx(labels_path, LABELS_MAGIC)?;
    let [n, rows, cols] = images.dims[..] else {
        return Err(Error::format(
            images_path,
            format!("image file should be rank 3, got dims {:?}", images.dims),
        ));
    };
    if labels.dims != [n] {
        return Err(Error::format(
            labels_path,
            format!("label count {:?} does not match {} images", labels.dims, n),
        ));
    }
    for (i, &l) in labels.data.iter().enumerate() {
        if l > 9 {
            return Err(Error::format(
                labels_path,
                format!("label {} at index {} outside [0, 10)", l, i),
            ));
        }
    }
    let pixels: Vec<f32> = images.data.iter().map(|&b| b as f32).collect();
    let label_ids: Vec<u32> = labels.data.iter().map(|&b| b as u32).collect();
    LabeledDataset::from_raw(
        1,
        rows,
        cols,
        pixels,
        label_ids,
        10,
        split,
        format!("idx:{}", images_path.display()),
    )
}

/// Write an IDX image file (u8 pixels, rank 3).
pub fn write_idx_images(path: &Path, n: usize, rows: usize, cols: usize, data: &[u8]) -> Result<()> {
    assert_eq!(data.len(), n * rows * cols);
    let mut buf = Vec::with_capacity(16 + data.len());
    buf.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    buf.extend_from_slice(&(n as u32).to_be_bytes());
    buf.extend_from_slice(&(rows as u32).to_be_bytes());
    buf.extend_from_slice(&(cols as u32).to_be_bytes());
    buf.extend_from_slice(data);
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Write an IDX label file (u8 labels, rank 1).
pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + labels.len());
    buf.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    buf.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    buf.extend_from_slice(labels);
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn fixture_pair(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
        let img = dir.join("img-idx3-ubyte");
        let lab = dir.join("lab-idx1-ubyte");
        let pixels: Vec<u8> = (0..2 * 28 * 28).map(|i| (i % 251) as u8).collect();
        write_idx_images(&img, 2, 28, 28, &pixels).unwrap();
        write_idx_labels(&lab, &[3, 7]).unwrap();
        (img, lab)
    }

    #[test]
    fn two_image_fixture_roundtrips_pixel_exact() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = fixture_pair(dir.path());
        let ds = load_mnist_idx(&img, &lab, Split::Train).unwrap();
        assert_eq!(ds.n, 2);
        assert_eq!((ds.channels, ds.height, ds.width), (1, 28, 28));
        assert_eq!(ds.labels, vec![3, 7]);
        for i in 0..2 * 28 * 28 {
            assert_eq!(ds.pixels[i], ((i % 251) as u8) as f32);
        }
    }

    #[test]
    fn accepts_only_the_published_magics() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = fixture_pair(dir.path());
        // images magic is 00 00 08 03, labels magic 00 00 08 01
        let img_bytes = std::fs::read(&img).unwrap();
        assert_eq!(&img_bytes[..4], &[0x00, 0x00, 0x08, 0x03]);
        let lab_bytes = std::fs::read(&lab).unwrap();
        assert_eq!(&lab_bytes[..4], &[0x00, 0x00, 0x08, 0x01]);

        // swap a magic: must be rejected, naming expected vs found
        let mut bad = img_bytes.clone();
        bad[3] = 0x01;
        let bad_path = dir.path().join("bad-idx");
        std::fs::write(&bad_path, &bad).unwrap();
        let err = load_mnist_idx(&bad_path, &lab, Split::Train).unwrap_err().to_string();
        assert!(err.contains("expected 00000803"), "{err}");
        assert!(err.contains("found 00000801"), "{err}");
    }

    #[test]
    fn truncated_file_names_offset() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = fixture_pair(dir.path());
        let full = std::fs::read(&img).unwrap();
        std::fs::write(&img, &full[..full.len() - 10]).unwrap();
        let err = load_mnist_idx(&img, &lab, Split::Train).unwrap_err().to_string();
        assert!(err.contains("mismatch") || err.contains("truncated"), "{err}");
        assert!(err.contains("offset"), "{err}");
    }

    #[test]
    fn gzip_compressed_files_load_transparently() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = fixture_pair(dir.path());
        for src in [&img, &lab] {
            let raw = std::fs::read(src).unwrap();
            let gz_path = src.with_extension("gz");
            let f = std::fs::File::create(&gz_path).unwrap();
            let mut enc = flate2::write::GzEncoder::new(f, flate2::Compression::default());
            enc.write_all(&raw).unwrap();
            enc.finish().unwrap();
        }
        let ds = load_mnist_idx(&img.with_extension("gz"), &lab.with_extension("gz"), Split::Test).unwrap();
        assert_eq!(ds.n, 2);
        assert_eq!(ds.labels, vec![3, 7]);
    }

    #[test]
    fn official_files_parse_to_expected_counts_when_available() {
        // Needs the real MNIST files; point LQIQ_MNIST_DIR at them to enable.
        let Ok(dir) = std::env::var("LQIQ_MNIST_DIR") else {
            return;
        };
        let dir = std::path::PathBuf::from(dir);
        let train = load_mnist_idx(
            &dir.join("train-images-idx3-ubyte"),
            &dir.join("train-labels-idx1-ubyte"),
            Split::Train,
        )
        .unwrap();
        assert_eq!(train.n, 60000);
        let test = load_mnist_idx(
            &dir.join("t10k-images-idx3-ubyte"),
            &dir.join("t10k-labels-idx1-ubyte"),
            Split::Test,
        )
        .unwrap();
        assert_eq!(test.n, 10000);
    }
}
