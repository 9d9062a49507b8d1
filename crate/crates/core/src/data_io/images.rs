//! PNG grid output for sample batches.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mat::Matrix;
use crate::projections::ImageShape;

/// Writes the first `rows * cols` samples as an 8-bit PNG grid.
///
/// Values in [-1, 1] map to pixels by `round(255 * (v + 1) / 2)`, clamped.
/// Samples are placed row-major. One channel writes grayscale, three write
/// RGB.
pub fn write_image_grid(
    samples: &Matrix,
    shape: ImageShape,
    grid: (usize, usize),
    path: &Path,
) -> Result<()> {
    let (rows, cols) = grid;
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("grid extents must be positive"));
    }
    if rows * cols > samples.rows() {
        return Err(Error::invalid(format!(
            "grid {rows}x{cols} needs {} samples but only {} are available",
            rows * cols,
            samples.rows()
        )));
    }
    if samples.cols() != shape.dim() {
        return Err(Error::invalid("sample dimension does not match shape"));
    }
    let channels = shape.channels;
    let color = match channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        _ => return Err(Error::invalid("PNG output supports 1 or 3 channels")),
    };
    let (h, w) = (shape.height, shape.width);
    let (canvas_h, canvas_w) = (rows * h, cols * w);
    let mut canvas = vec![0u8; canvas_h * canvas_w * channels];
    for k in 0..rows * cols {
        let sample = samples.row(k);
        let (gr, gc) = (k / cols, k % cols);
        for ch in 0..channels {
            for r in 0..h {
                for c in 0..w {
                    let v = sample[ch * h * w + r * w + c];
                    let pixel = quantize(v);
                    let y = gr * h + r;
                    let x = gc * w + c;
                    canvas[(y * canvas_w + x) * channels + ch] = pixel;
                }
            }
        }
    }
    let file = File::create(path)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), canvas_w as u32, canvas_h as u32);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::invalid(e.to_string()))?;
    writer
        .write_image_data(&canvas)
        .map_err(|e| Error::invalid(e.to_string()))?;
    Ok(())
}

fn quantize(v: f32) -> u8 {
    (255.0 * (v as f64 + 1.0) / 2.0).round().clamp(0.0, 255.0) as u8
}

/// Reads an 8-bit PNG back as (pixels, width, height, channels).
pub fn read_image_grid(path: &Path) -> Result<(Vec<u8>, usize, usize, usize)> {
    let decoder = png::Decoder::new(File::open(path)?);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::invalid(e.to_string()))?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::invalid(e.to_string()))?;
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => return Err(Error::invalid(format!("unsupported PNG color {other:?}"))),
    };
    buf.truncate(info.buffer_size());
    Ok((buf, info.width as usize, info.height as usize, channels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extreme_values_map_to_black_and_white() {
        let dir = tempfile::tempdir().unwrap();
        let shape = ImageShape::new(1, 2, 2).unwrap();
        let black = Matrix::from_vec(vec![-1.0; 4], 1, 4).unwrap();
        let p = dir.path().join("black.png");
        write_image_grid(&black, shape, (1, 1), &p).unwrap();
        let (pix, w, h, c) = read_image_grid(&p).unwrap();
        assert_eq!((w, h, c), (2, 2, 1));
        assert!(pix.iter().all(|&b| b == 0));

        let white = Matrix::from_vec(vec![1.0; 4], 1, 4).unwrap();
        let p = dir.path().join("white.png");
        write_image_grid(&white, shape, (1, 1), &p).unwrap();
        let (pix, ..) = read_image_grid(&p).unwrap();
        assert!(pix.iter().all(|&b| b == 255));
    }

    #[test]
    fn zero_maps_to_128() {
        assert_eq!(quantize(0.0), 128);
    }

    #[test]
    fn png_round_trip_reproduces_quantized_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let shape = ImageShape::new(3, 2, 2).unwrap();
        let mut vals = Vec::new();
        for k in 0..4 {
            for i in 0..12 {
                vals.push(((k * 12 + i) as f32 / 24.0) - 0.9);
            }
        }
        let samples = Matrix::from_vec(vals.clone(), 4, 12).unwrap();
        let p = dir.path().join("grid.png");
        write_image_grid(&samples, shape, (2, 2), &p).unwrap();
        let (pix, w, h, c) = read_image_grid(&p).unwrap();
        assert_eq!((w, h, c), (4, 4, 3));
        // Check one interior pixel of sample 3 (grid position (1,1)):
        // channel 2, image row 1, col 0 -> canvas (y=3, x=2), channel 2.
        let v = samples.row(3)[2 * 4 + 1 * 2 + 0];
        assert_eq!(pix[(3 * 4 + 2) * 3 + 2], quantize(v));
    }

    #[test]
    fn grid_larger_than_batch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let shape = ImageShape::new(1, 2, 2).unwrap();
        let m = Matrix::zeros(3, 4);
        assert!(write_image_grid(&m, shape, (2, 2), &dir.path().join("x.png")).is_err());
    }
}
