//! Dataset ingestion and pixel preprocessing.
//!
//! Supported inputs: IDX image/label pairs (the MNIST container format),
//! CSV point clouds with a trailing integer class column, and raw
//! little-endian `f32` tensors. Quantized sources keep their raw bytes so
//! the flow driver can re-dequantize them with fresh noise at every step.

mod images;
mod occlusion;
pub mod model_file;

pub use images::{read_image_grid, write_image_grid};
pub use occlusion::{
    make_occlusion, occlusion_split, split_projection, OcclusionKind, OcclusionSpec,
    OcclusionSplit,
};

use std::io::Read;
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use rand::Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mat::Matrix;
use crate::projections::ImageShape;
use crate::rng::{self, role};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone)]
pub enum DatasetFormat {
    /// IDX images; labels from a sibling IDX file when given.
    IdxPair { labels: Option<PathBuf> },
    /// CSV with a header row; the last column is an integer class label.
    Csv,
    /// Raw little-endian `f32` values, row-major, no labels.
    RawF32,
}

/// An immutable, preprocessed dataset.
#[derive(Debug, Clone)]
pub struct DatasetView {
    /// N x d values in [-1, 1] (for quantized sources: a default
    /// dequantization, reproducible from the digest).
    pub x: Matrix,
    /// N x l one-hot labels, observed-pixel vectors, or empty (l = 0).
    pub y: Matrix,
    pub shape: ImageShape,
    /// N x d original integer pixels, present for quantized sources.
    pub raw_quantized: Option<Vec<u8>>,
    /// N x l original integer pixels for the Y side; present only for
    /// occlusion-split quantized image datasets.
    pub raw_quantized_y: Option<Vec<u8>>,
    /// SHA-256 over the raw input bytes.
    pub digest: [u8; 32],
}

impl DatasetView {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn label_dim(&self) -> usize {
        self.y.cols()
    }

    /// Builds a view directly from matrices (toy problems, tests). The
    /// digest is computed over the value bytes.
    pub fn from_parts(x: Matrix, y: Matrix, shape: ImageShape) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::invalid("dataset must contain at least one row"));
        }
        if y.rows() != x.rows() {
            return Err(Error::invalid("label count does not match sample count"));
        }
        if x.cols() != shape.dim() {
            return Err(Error::invalid("sample dimension does not match shape"));
        }
        if !x.is_finite() {
            return Err(Error::invalid("non-finite dataset values"));
        }
        let mut hasher = Sha256::new();
        for v in x.data() {
            hasher.update(v.to_le_bytes());
        }
        for v in y.data() {
            hasher.update(v.to_le_bytes());
        }
        Ok(DatasetView {
            x,
            y,
            shape,
            raw_quantized: None,
            raw_quantized_y: None,
            digest: hasher.finalize().into(),
        })
    }

    /// Re-views an image dataset for inpainting: X-columns are the occluded
    /// pixels, Y-columns the observed ones. Quantized pixels are split the
    /// same way so both sides can be redrawn per step. The digest is kept,
    /// since the underlying content is unchanged.
    pub fn split_by_occlusion(&self, split: &OcclusionSplit) -> Result<DatasetView> {
        if self.shape != split.shape || self.label_dim() != 0 {
            return Err(Error::invalid(
                "occlusion split needs an unlabeled dataset of matching shape",
            ));
        }
        let n = self.len();
        let (xd, yd) = (split.x_dim(), split.y_dim());
        let mut x = Matrix::zeros(n, xd);
        let mut y = Matrix::zeros(n, yd);
        for i in 0..n {
            let row = self.x.row(i);
            x.row_mut(i).copy_from_slice(&split.occluded(row));
            y.row_mut(i).copy_from_slice(&split.observed(row));
        }
        let (raw_x, raw_y) = match &self.raw_quantized {
            None => (None, None),
            Some(raw) => {
                let mut rx = Vec::with_capacity(n * xd);
                let mut ry = Vec::with_capacity(n * yd);
                let dim = self.dim();
                for i in 0..n {
                    let row = &raw[i * dim..(i + 1) * dim];
                    rx.extend(split.x_pixels.iter().map(|&p| row[p as usize]));
                    ry.extend(split.y_pixels.iter().map(|&p| row[p as usize]));
                }
                (Some(rx), Some(ry))
            }
        };
        Ok(DatasetView {
            x,
            y,
            shape: self.shape,
            raw_quantized: raw_x,
            raw_quantized_y: raw_y,
            digest: self.digest,
        })
    }
}

pub fn load_dataset(path: &Path, format: &DatasetFormat, shape: ImageShape) -> Result<DatasetView> {
    match format {
        DatasetFormat::IdxPair { labels } => load_idx_pair(path, labels.as_deref(), shape),
        DatasetFormat::Csv => load_csv(path, shape),
        DatasetFormat::RawF32 => load_raw_f32(path, shape),
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    Ok(bytes)
}

fn format_err(offset: u64, message: impl Into<String>) -> Error {
    Error::DataFormat {
        offset,
        message: message.into(),
    }
}

fn load_idx_pair(
    images_path: &Path,
    labels_path: Option<&Path>,
    shape: ImageShape,
) -> Result<DatasetView> {
    if shape.channels != 1 {
        return Err(Error::invalid("IDX images are single-channel"));
    }
    let bytes = read_all(images_path)?;
    if bytes.len() < 16 {
        return Err(format_err(bytes.len() as u64, "IDX image header truncated"));
    }
    let magic = BigEndian::read_u32(&bytes[0..4]);
    if magic != IDX_IMAGES_MAGIC {
        return Err(format_err(
            0,
            format!("bad IDX image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        ));
    }
    let count = BigEndian::read_u32(&bytes[4..8]) as usize;
    let rows = BigEndian::read_u32(&bytes[8..12]) as usize;
    let cols = BigEndian::read_u32(&bytes[12..16]) as usize;
    if rows != shape.height || cols != shape.width {
        return Err(format_err(
            8,
            format!(
                "IDX image size {rows}x{cols} does not match requested {}x{}",
                shape.height, shape.width
            ),
        ));
    }
    let expected = 16 + count * rows * cols;
    if bytes.len() != expected {
        return Err(format_err(
            bytes.len().min(expected) as u64,
            format!("IDX payload is {} bytes, expected {expected}", bytes.len()),
        ));
    }
    let raw = bytes[16..].to_vec();

    let mut hasher = Sha256::new();
    hasher.update(&bytes);

    let y = match labels_path {
        None => Matrix::zeros(count, 0),
        Some(lp) => {
            let lbytes = read_all(lp)?;
            if lbytes.len() < 8 {
                return Err(format_err(lbytes.len() as u64, "IDX label header truncated"));
            }
            let lmagic = BigEndian::read_u32(&lbytes[0..4]);
            if lmagic != IDX_LABELS_MAGIC {
                return Err(format_err(
                    0,
                    format!("bad IDX label magic {lmagic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
                ));
            }
            let lcount = BigEndian::read_u32(&lbytes[4..8]) as usize;
            if lbytes.len() != 8 + lcount {
                return Err(format_err(
                    lbytes.len().min(8 + lcount) as u64,
                    "IDX label payload size mismatch",
                ));
            }
            if lcount != count {
                return Err(Error::invalid(format!(
                    "image/label count mismatch: {count} images vs {lcount} labels"
                )));
            }
            hasher.update(&lbytes);
            let labels = &lbytes[8..];
            one_hot(labels)?
        }
    };

    let digest: [u8; 32] = hasher.finalize().into();
    let x = default_dequantized(&raw, count, shape.dim(), &digest);
    Ok(DatasetView {
        x,
        y,
        shape,
        raw_quantized: Some(raw),
        raw_quantized_y: None,
        digest,
    })
}

fn one_hot(labels: &[u8]) -> Result<Matrix> {
    let l = *labels.iter().max().unwrap_or(&0) as usize + 1;
    let mut m = Matrix::zeros(labels.len(), l);
    for (i, &lab) in labels.iter().enumerate() {
        m.row_mut(i)[lab as usize] = 1.0;
    }
    Ok(m)
}

/// Default dequantization applied at load time, seeded from the content
/// digest so identical files produce identical views.
fn default_dequantized(raw: &[u8], count: usize, dim: usize, digest: &[u8; 32]) -> Matrix {
    let seed = rng::derive(u64::from_le_bytes(digest[0..8].try_into().unwrap()), role::DEQUANT);
    let mut x = Matrix::zeros(count, dim);
    dequantize_rows(raw, seed, &mut x);
    x
}

fn load_csv(path: &Path, shape: ImageShape) -> Result<DatasetView> {
    let bytes = read_all(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest: [u8; 32] = hasher.finalize().into();

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes.as_slice());
    let ncols = reader.headers().map_err(|e| Error::invalid(e.to_string()))?.len();
    if ncols < 2 {
        return Err(Error::invalid("CSV needs at least one feature column plus a class column"));
    }
    let d = ncols - 1;
    if d != shape.dim() {
        return Err(Error::invalid(format!(
            "CSV has {d} feature columns but the shape implies {}",
            shape.dim()
        )));
    }
    let mut xs: Vec<f32> = Vec::new();
    let mut classes: Vec<i64> = Vec::new();
    for (lineno, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::invalid(e.to_string()))?;
        for v in record.iter().take(d) {
            let parsed: f64 = v.parse().map_err(|_| {
                Error::invalid(format!("CSV line {}: bad number {v:?}", lineno + 2))
            })?;
            xs.push(parsed as f32);
        }
        let class: i64 = record[d].parse().map_err(|_| {
            Error::invalid(format!("CSV line {}: bad class {:?}", lineno + 2, &record[d]))
        })?;
        classes.push(class);
    }
    if classes.is_empty() {
        return Err(Error::invalid("CSV has no data rows"));
    }
    let n = classes.len();
    let x = Matrix::from_vec(xs, n, d)?;

    let mut distinct: Vec<i64> = classes.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let l = distinct.len();
    let mut y = Matrix::zeros(n, l);
    for (i, c) in classes.iter().enumerate() {
        let slot = distinct.binary_search(c).unwrap();
        y.row_mut(i)[slot] = 1.0;
    }
    Ok(DatasetView {
        x,
        y,
        shape,
        raw_quantized: None,
        raw_quantized_y: None,
        digest,
    })
}

fn load_raw_f32(path: &Path, shape: ImageShape) -> Result<DatasetView> {
    let bytes = read_all(path)?;
    let d = shape.dim();
    if bytes.is_empty() || bytes.len() % (4 * d) != 0 {
        return Err(format_err(
            bytes.len() as u64,
            format!("raw-f32 file length {} is not a positive multiple of 4*{d}", bytes.len()),
        ));
    }
    let n = bytes.len() / (4 * d);
    let mut data = vec![0f32; n * d];
    LittleEndian::read_f32_into(&bytes, &mut data);
    if data.iter().any(|v| !v.is_finite()) {
        return Err(format_err(0, "raw-f32 file contains non-finite values"));
    }
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(DatasetView {
        x: Matrix::from_vec(data, n, d)?,
        y: Matrix::zeros(n, 0),
        shape,
        raw_quantized: None,
        raw_quantized_y: None,
        digest: hasher.finalize().into(),
    })
}

/// Dequantizes integer pixels to `[-1, 1)`: `2 * ((raw + u) / 256) - 1`
/// with `u ~ Uniform[0, 1)` drawn per entry.
pub fn dequantize_rescale(raw: &[u8], rng: &mut impl Rng) -> Vec<f32> {
    raw.iter()
        .map(|&b| {
            let u: f64 = rng.random();
            (2.0 * ((b as f64 + u) / 256.0) - 1.0) as f32
        })
        .collect()
}

/// Re-dequantizes a whole quantized dataset into `out`, one seeded stream
/// per row so the result is identical at any thread count.
pub fn dequantize_rows(raw: &[u8], seed: u64, out: &mut Matrix) {
    let d = out.cols();
    debug_assert_eq!(raw.len(), out.rows() * d);
    out.data_mut()
        .par_chunks_mut(d)
        .enumerate()
        .for_each(|(i, row)| {
            let mut rng = rng::chacha(rng::derive(seed, i as u64));
            for (o, &b) in row.iter_mut().zip(&raw[i * d..(i + 1) * d]) {
                let u: f64 = rng.random();
                *o = (2.0 * ((b as f64 + u) / 256.0) - 1.0) as f32;
            }
        });
}

#[cfg(test)]
mod tests {
    use super::*;
    use byteorder::WriteBytesExt;
    use std::io::Write;

    pub(crate) fn write_idx_images(path: &Path, images: &[u8], n: usize, h: usize, w: usize) {
        let mut f = std::fs::File::create(path).unwrap();
        f.write_u32::<BigEndian>(IDX_IMAGES_MAGIC).unwrap();
        f.write_u32::<BigEndian>(n as u32).unwrap();
        f.write_u32::<BigEndian>(h as u32).unwrap();
        f.write_u32::<BigEndian>(w as u32).unwrap();
        f.write_all(images).unwrap();
    }

    pub(crate) fn write_idx_labels(path: &Path, labels: &[u8]) {
        let mut f = std::fs::File::create(path).unwrap();
        f.write_u32::<BigEndian>(IDX_LABELS_MAGIC).unwrap();
        f.write_u32::<BigEndian>(labels.len() as u32).unwrap();
        f.write_all(labels).unwrap();
    }

    #[test]
    fn idx_pair_loads_with_one_hot_labels() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("img.idx");
        let lab_path = dir.path().join("lab.idx");
        let (n, h, w) = (6usize, 4usize, 4usize);
        let pixels: Vec<u8> = (0..n * h * w).map(|i| (i % 256) as u8).collect();
        write_idx_images(&img_path, &pixels, n, h, w);
        write_idx_labels(&lab_path, &[0, 1, 2, 1, 0, 2]);

        let shape = ImageShape::new(1, h, w).unwrap();
        let ds = load_dataset(
            &img_path,
            &DatasetFormat::IdxPair {
                labels: Some(lab_path),
            },
            shape,
        )
        .unwrap();
        assert_eq!(ds.len(), n);
        assert_eq!(ds.dim(), 16);
        assert_eq!(ds.label_dim(), 3);
        assert_eq!(ds.raw_quantized.as_ref().unwrap().len(), n * h * w);
        for i in 0..n {
            let row = ds.y.row(i);
            assert_eq!(row.iter().sum::<f32>(), 1.0);
        }
        // Default dequantization stays in [-1, 1).
        assert!(ds.x.data().iter().all(|&v| (-1.0..1.0).contains(&v)));

        // Identical files give an identical view.
        let ds2 = load_dataset(
            &img_path,
            &DatasetFormat::IdxPair { labels: None },
            shape,
        )
        .unwrap();
        assert_eq!(ds2.label_dim(), 0);
        let ds3 = load_dataset(
            &img_path,
            &DatasetFormat::IdxPair { labels: None },
            shape,
        )
        .unwrap();
        assert_eq!(ds2.digest, ds3.digest);
        assert_eq!(ds2.x, ds3.x);
    }

    #[test]
    fn idx_errors_name_the_offset() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("bad.idx");
        let mut f = std::fs::File::create(&img_path).unwrap();
        f.write_u32::<BigEndian>(0xdead_beef).unwrap();
        f.write_all(&[0u8; 12]).unwrap();
        drop(f);
        let shape = ImageShape::new(1, 2, 2).unwrap();
        match load_dataset(&img_path, &DatasetFormat::IdxPair { labels: None }, shape) {
            Err(Error::DataFormat { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn idx_count_mismatch_is_invalid_argument() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("img.idx");
        let lab_path = dir.path().join("lab.idx");
        write_idx_images(&img_path, &[0u8; 2 * 4], 2, 2, 2);
        write_idx_labels(&lab_path, &[0, 1, 1]);
        let shape = ImageShape::new(1, 2, 2).unwrap();
        let err = load_dataset(
            &img_path,
            &DatasetFormat::IdxPair {
                labels: Some(lab_path),
            },
            shape,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn csv_toy_points_get_distinct_class_one_hots() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.csv");
        std::fs::write(&path, "x,y,class\n0.0,1.0,5\n2.0,3.0,7\n4.0,5.0,5\n").unwrap();
        let ds = load_dataset(
            &path,
            &DatasetFormat::Csv,
            ImageShape::new(1, 1, 2).unwrap(),
        )
        .unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.label_dim(), 2);
        assert_eq!(ds.y.row(0), &[1.0, 0.0]);
        assert_eq!(ds.y.row(1), &[0.0, 1.0]);
        assert_eq!(ds.x.row(1), &[2.0, 3.0]);
    }

    #[test]
    fn raw_f32_size_arithmetic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.f32");
        let values: Vec<f32> = (0..12).map(|i| i as f32).collect();
        let mut bytes = Vec::new();
        for v in &values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(&path, &bytes).unwrap();
        let ds = load_dataset(
            &path,
            &DatasetFormat::RawF32,
            ImageShape::new(1, 1, 3).unwrap(),
        )
        .unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.x.row(2), &[6.0, 7.0, 8.0]);
        assert_eq!(ds.label_dim(), 0);
        // trailing garbage byte breaks the size contract
        std::fs::write(&path, [bytes, vec![0u8]].concat()).unwrap();
        assert!(load_dataset(
            &path,
            &DatasetFormat::RawF32,
            ImageShape::new(1, 1, 3).unwrap()
        )
        .is_err());
    }

    #[test]
    fn dequantize_bounds_and_mean() {
        let mut rng = crate::rng::chacha(1);
        let zeros = dequantize_rescale(&[0u8; 1000], &mut rng);
        assert!(zeros.iter().all(|&v| (-1.0..(-1.0 + 2.0 / 256.0)).contains(&v)));
        let tops = dequantize_rescale(&[255u8; 1000], &mut rng);
        assert!(tops.iter().all(|&v| ((1.0 - 2.0 / 256.0)..1.0).contains(&v)));

        let mids = dequantize_rescale(&[128u8; 1_000_000], &mut rng);
        let mean = mids.iter().map(|&v| v as f64).sum::<f64>() / mids.len() as f64;
        let expected = 2.0 * (128.5 / 256.0) - 1.0;
        assert!((expected - 0.00390625).abs() < 1e-12);
        assert!((mean - expected).abs() < 0.001, "mean {mean}");
    }

    #[test]
    fn dequantize_rows_is_thread_count_independent() {
        let raw: Vec<u8> = (0..64u32).map(|i| (i * 7 % 256) as u8).collect();
        let mut a = Matrix::zeros(8, 8);
        let mut b = Matrix::zeros(8, 8);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        one.install(|| dequantize_rows(&raw, 9, &mut a));
        four.install(|| dequantize_rows(&raw, 9, &mut b));
        assert_eq!(a, b);
    }
}
