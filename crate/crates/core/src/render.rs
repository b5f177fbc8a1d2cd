//! Binary PPM (P6) rendering of frames and correlation matrices, one pixel
//! per cell.

use std::io::Write;

use crate::error::{Error, Result};

/// Grey level of a value in `[-1, 1]`.
pub fn intensity(v: f64) -> u8 {
    (255.0 * (v + 1.0) / 2.0).round().clamp(0.0, 255.0) as u8
}

/// Colour of undefined (`NaN`) cells.
pub const UNDEFINED_RGB: [u8; 3] = [255, 0, 0];

/// Writes a `rows x cols` grey image of row-major `values` in `[-1, 1]`.
/// `NaN` cells are drawn in [`UNDEFINED_RGB`].
pub fn write_ppm<W: Write>(values: &[f64], rows: usize, cols: usize, mut w: W) -> Result<()> {
    if values.len() != rows * cols || rows == 0 || cols == 0 {
        return Err(Error::shape("image", &[rows, cols], &[values.len()]));
    }
    write!(w, "P6\n{cols} {rows}\n255\n")?;
    let mut px = Vec::with_capacity(values.len() * 3);
    for &v in values {
        if v.is_nan() {
            px.extend_from_slice(&UNDEFINED_RGB);
        } else {
            px.extend_from_slice(&[intensity(v); 3]);
        }
    }
    w.write_all(&px)?;
    Ok(())
}

/// Renders a correlation matrix; undefined entries become [`UNDEFINED_RGB`].
pub fn write_matrix_ppm<W: Write>(m: &[Vec<Option<f64>>], w: W) -> Result<()> {
    let k = m.len();
    let flat: Vec<f64> = m.iter().flat_map(|r| r.iter().map(|v| v.unwrap_or(f64::NAN))).collect();
    write_ppm(&flat, k, k, w)
}
