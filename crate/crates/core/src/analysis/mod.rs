//! Image analysis: flat-field correction, energy windows, PSF profiles and
//! the Fourier background-suppression pipeline.
//!
//! Images are row-major with `x` the column index and `y` the row index.
//! For simulated data, column follows lab x and row follows lab z.

mod export;
mod fourier;
mod pipeline;
mod psf;

pub use export::{read_image_csv, write_atf_csv, write_image_csv, write_pgm, write_profile_csv};
pub use fourier::{
    atf, average_atf, gaussian_window, idealized_psf, inverse_amplitude, resolution_lp_per_mm, Atf,
    DEFAULT_RESOLUTION_THRESHOLD, DEFAULT_WINDOW_SIGMA_MM,
};
pub use pipeline::{clean_psfs, CleanParams, CleanResult};
pub use psf::{
    background_level, expected_arm_half_length, expected_direct_half_width, extract_arm_profiles,
    find_psf_center, fwhm, profile_extent, Axis, PsfProfile, DEFAULT_ARM_BAND_HALF_WIDTH_MM,
};

use thiserror::Error;

use crate::cube::SpectralImage;

/// Flat-field pixels below this fraction of the mean flat are masked.
pub const FLAT_FIELD_EPSILON: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("image has no peak")]
    NoPeak,
    #[error("profile never drops to half maximum on the {side} side")]
    OneSided { side: &'static str },
    #[error("centre ({x:.1}, {y:.1}) is too close to the image edge")]
    CenterAtEdge { x: f64, y: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("background region is empty")]
    EmptyRegion,
    #[error("amplitude never falls below {threshold} of DC before Nyquist")]
    BeyondNyquist { threshold: f64 },
    #[error("malformed image file: {0}")]
    Malformed(String),
}

/// Real-valued image with a physical pixel pitch.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    pub n_x: usize,
    pub n_y: usize,
    pub pitch_um: f64,
    pub data: Vec<f64>,
    /// Per-pixel validity; `None` means every pixel is valid.
    pub valid: Option<Vec<bool>>,
}

impl Image2D {
    pub fn zeros(n_x: usize, n_y: usize, pitch_um: f64) -> Self {
        Self::from_data(n_x, n_y, pitch_um, vec![0.0; n_x * n_y])
    }

    pub fn from_data(n_x: usize, n_y: usize, pitch_um: f64, data: Vec<f64>) -> Self {
        assert!(n_x > 0 && n_y > 0, "image dimensions must be positive");
        assert_eq!(
            data.len(),
            n_x * n_y,
            "data length does not match dimensions"
        );
        Self {
            n_x,
            n_y,
            pitch_um,
            data,
            valid: None,
        }
    }

    pub fn from_fn(n_x: usize, n_y: usize, pitch_um: f64, f: impl Fn(usize, usize) -> f64) -> Self {
        let data = (0..n_y)
            .flat_map(|y| (0..n_x).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::from_data(n_x, n_y, pitch_um, data)
    }

    /// Image of integer counts, e.g. a class map from the simulator.
    pub fn from_counts(n_x: usize, n_y: usize, pitch_um: f64, counts: &[u64]) -> Self {
        Self::from_data(
            n_x,
            n_y,
            pitch_um,
            counts.iter().map(|&c| c as f64).collect(),
        )
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.n_x + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.n_x + x] = value;
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid.as_ref().is_none_or(|v| v[y * self.n_x + x])
    }

    pub fn pitch_mm(&self) -> f64 {
        self.pitch_um / 1000.0
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn same_shape(&self, other: &Image2D) -> bool {
        self.n_x == other.n_x && self.n_y == other.n_y
    }

    /// Scale so the maximum is 1. All-zero images are returned unchanged.
    pub fn normalized_to_peak(&self) -> Image2D {
        let peak = self.max();
        let mut out = self.clone();
        if peak > 0.0 {
            out.data.iter_mut().for_each(|v| *v /= peak);
        }
        out
    }

    /// Periodic translation by `(dx, dy)` pixels.
    pub fn translate_periodic(&self, dx: isize, dy: isize) -> Image2D {
        let (nx, ny) = (self.n_x as isize, self.n_y as isize);
        Image2D::from_fn(self.n_x, self.n_y, self.pitch_um, |x, y| {
            let sx = (x as isize - dx).rem_euclid(nx) as usize;
            let sy = (y as isize - dy).rem_euclid(ny) as usize;
            self.get(sx, sy)
        })
    }
}

/// Divide by the flat field normalised to unit mean. Pixels where the flat
/// is below `FLAT_FIELD_EPSILON · mean(flat)` are zeroed and marked invalid.
pub fn flat_field_correct(image: &Image2D, flat: &Image2D) -> Result<Image2D, AnalysisError> {
    if !image.same_shape(flat) {
        return Err(AnalysisError::DimensionMismatch(format!(
            "image {}×{} vs flat {}×{}",
            image.n_x, image.n_y, flat.n_x, flat.n_y
        )));
    }
    let mean = flat.sum() / flat.data.len() as f64;
    if !(mean > 0.0) {
        return Err(AnalysisError::InvalidParameter(
            "flat field has no positive signal".into(),
        ));
    }
    let floor = FLAT_FIELD_EPSILON * mean;
    let mut valid = image
        .valid
        .clone()
        .unwrap_or_else(|| vec![true; image.data.len()]);
    let data = image
        .data
        .iter()
        .zip(&flat.data)
        .zip(valid.iter_mut())
        .map(|((&value, &f), ok)| {
            if f < floor {
                *ok = false;
                0.0
            } else {
                value / (f / mean)
            }
        })
        .collect();
    Ok(Image2D {
        n_x: image.n_x,
        n_y: image.n_y,
        pitch_um: image.pitch_um,
        data,
        valid: Some(valid),
    })
}

/// Result of summing a range of energy bins.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyWindow {
    pub image: Image2D,
    pub bins_summed: usize,
    /// Set when no bin centre falls inside the window.
    pub outside_cube: bool,
}

/// Sum the bins whose centres lie in `[e_lo, e_hi)`.
pub fn energy_window(
    cube: &SpectralImage,
    e_lo: f64,
    e_hi: f64,
) -> Result<EnergyWindow, AnalysisError> {
    if !(e_lo < e_hi) {
        return Err(AnalysisError::InvalidParameter(format!(
            "window [{e_lo}, {e_hi}) is empty"
        )));
    }
    let bins: Vec<usize> = (0..cube.n_bins)
        .filter(|&b| {
            let c = cube.bin_center(b);
            c >= e_lo && c < e_hi
        })
        .collect();
    let data = cube
        .counts
        .chunks_exact(cube.n_bins)
        .map(|spectrum| bins.iter().map(|&b| spectrum[b]).sum::<u64>() as f64)
        .collect();
    Ok(EnergyWindow {
        image: Image2D::from_data(cube.n_x, cube.n_y, cube.pixel_pitch_um, data),
        bins_summed: bins.len(),
        outside_cube: bins.is_empty(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_field_self_division() {
        let img = Image2D::from_fn(8, 6, 55.0, |x, y| 1.0 + x as f64 + 2.0 * y as f64);
        let out = flat_field_correct(&img, &img).unwrap();
        let mean = img.sum() / img.data.len() as f64;
        for &v in &out.data {
            assert!((v - mean).abs() < 1e-12);
        }
        // out = image / (flat / mean) = mean, i.e. uniform.
        let normalized: Vec<f64> = out.data.iter().map(|v| v / mean).collect();
        assert!(normalized.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn uniform_flat_is_identity() {
        let img = Image2D::from_fn(5, 5, 55.0, |x, y| (x * y) as f64);
        let flat = Image2D::from_data(5, 5, 55.0, vec![3.7; 25]);
        let out = flat_field_correct(&img, &flat).unwrap();
        for (a, b) in out.data.iter().zip(&img.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dead_flat_pixel_is_masked() {
        let img = Image2D::from_data(2, 2, 55.0, vec![5.0; 4]);
        let flat = Image2D::from_data(2, 2, 55.0, vec![1.0, 1.0, 0.0, 1.0]);
        let out = flat_field_correct(&img, &flat).unwrap();
        assert_eq!(out.data[2], 0.0);
        assert!(!out.is_valid(0, 1));
        assert!(out.is_valid(1, 1));
        assert!(out.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn flat_field_shape_mismatch() {
        let a = Image2D::zeros(2, 2, 55.0);
        let b = Image2D::zeros(3, 2, 55.0);
        assert!(matches!(
            flat_field_correct(&a, &b),
            Err(AnalysisError::DimensionMismatch(_))
        ));
    }

    fn cube() -> SpectralImage {
        let mut cube = SpectralImage::zeros(2, 1, 4, 0.0, 1.0, 55.0).unwrap();
        for bin in 0..4 {
            cube.add(0, 0, bin, bin as u64 + 1);
            cube.add(1, 0, bin, 10);
        }
        cube
    }

    #[test]
    fn window_sums_bins_by_centre() {
        let c = cube();
        let full = energy_window(&c, 0.0, 4.0).unwrap();
        assert_eq!(full.image.data, vec![10.0, 40.0]);
        // Centres 0.5, 1.5, 2.5, 3.5: [1, 3) holds bins 1 and 2.
        let mid = energy_window(&c, 1.0, 3.0).unwrap();
        assert_eq!(mid.bins_summed, 2);
        assert_eq!(mid.image.data, vec![5.0, 20.0]);
    }

    #[test]
    fn window_outside_cube_is_flagged() {
        let w = energy_window(&cube(), 10.0, 20.0).unwrap();
        assert!(w.outside_cube);
        assert_eq!(w.image.sum(), 0.0);
        assert!(energy_window(&cube(), 3.0, 3.0).is_err());
    }

    #[test]
    fn translate_wraps() {
        let img = Image2D::from_fn(4, 3, 1.0, |x, y| (10 * y + x) as f64);
        let moved = img.translate_periodic(1, -1);
        assert_eq!(moved.get(1, 0), img.get(0, 1));
        assert_eq!(moved.get(0, 2), img.get(3, 0));
    }
}
