//! Amplitude transfer functions and zero-phase PSF reconstruction.
//!
//! Spectra are stored in unshifted DFT order: DC at index `(0, 0)`, bin `k`
//! along an axis of `n` pixels at `k / (n·pitch)` lp/mm for `k < n/2` and
//! `(k − n) / (n·pitch)` above. The forward transform is unnormalised and
//! the inverse carries the `1/N` factor.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{AnalysisError, Image2D};

pub const DEFAULT_WINDOW_SIGMA_MM: f64 = 1.5;
pub const DEFAULT_RESOLUTION_THRESHOLD: f64 = 0.1;

/// Amplitude spectrum of one PSF or the mean over several.
#[derive(Debug, Clone, PartialEq)]
pub struct Atf {
    pub n_x: usize,
    pub n_y: usize,
    pub pitch_um: f64,
    pub amplitude: Vec<f64>,
    /// Number of PSFs averaged into this spectrum.
    pub sources: usize,
}

impl Atf {
    pub fn get(&self, kx: usize, ky: usize) -> f64 {
        self.amplitude[ky * self.n_x + kx]
    }

    pub fn dc(&self) -> f64 {
        self.amplitude[0]
    }

    /// Spatial frequency (lp/mm) of DFT bin `k` on an axis of `n` pixels.
    pub fn frequency(&self, k: usize, n: usize) -> f64 {
        let signed = if k < n.div_ceil(2) {
            k as f64
        } else {
            k as f64 - n as f64
        };
        signed / (n as f64 * self.pitch_um / 1000.0)
    }

    pub fn frequency_x(&self, kx: usize) -> f64 {
        self.frequency(kx, self.n_x)
    }

    pub fn frequency_y(&self, ky: usize) -> f64 {
        self.frequency(ky, self.n_y)
    }
}

fn fft_2d(data: &mut [Complex<f64>], n_x: usize, n_y: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(n_x), planner.plan_fft_inverse(n_y))
    } else {
        (planner.plan_fft_forward(n_x), planner.plan_fft_forward(n_y))
    };
    for row in data.chunks_exact_mut(n_x) {
        row_fft.process(row);
    }
    let mut column = vec![Complex::new(0.0, 0.0); n_y];
    for x in 0..n_x {
        for (y, c) in column.iter_mut().enumerate() {
            *c = data[y * n_x + x];
        }
        col_fft.process(&mut column);
        for (y, c) in column.iter().enumerate() {
            data[y * n_x + x] = *c;
        }
    }
}

/// Multiply by `exp(−r² / 2σ²)` around `center` (pixel units), `σ` in mm.
pub fn gaussian_window(
    image: &Image2D,
    sigma_mm: f64,
    center: (f64, f64),
) -> Result<Image2D, AnalysisError> {
    if !(sigma_mm > 0.0) {
        return Err(AnalysisError::InvalidParameter(format!(
            "window sigma {sigma_mm} must be positive"
        )));
    }
    let pitch = image.pitch_mm();
    let two_var = 2.0 * sigma_mm * sigma_mm;
    let mut out = image.clone();
    for y in 0..image.n_y {
        let dy = (y as f64 - center.1) * pitch;
        for x in 0..image.n_x {
            let dx = (x as f64 - center.0) * pitch;
            let w = (-(dx * dx + dy * dy) / two_var).exp();
            out.set(x, y, image.get(x, y) * w);
        }
    }
    Ok(out)
}

/// DFT magnitude of `image`; the phase is discarded.
pub fn atf(image: &Image2D) -> Atf {
    let mut data: Vec<Complex<f64>> = image.data.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft_2d(&mut data, image.n_x, image.n_y, false);
    Atf {
        n_x: image.n_x,
        n_y: image.n_y,
        pitch_um: image.pitch_um,
        amplitude: data.iter().map(|c| c.norm()).collect(),
        sources: 1,
    }
}

/// Element-wise mean of several spectra.
pub fn average_atf(atfs: &[Atf]) -> Result<Atf, AnalysisError> {
    let first = atfs
        .first()
        .ok_or_else(|| AnalysisError::InvalidParameter("no spectra to average".into()))?;
    let mut sum = vec![0.0; first.amplitude.len()];
    let mut sources = 0;
    for a in atfs {
        if a.n_x != first.n_x || a.n_y != first.n_y {
            return Err(AnalysisError::DimensionMismatch(format!(
                "spectrum {}×{} vs {}×{}",
                a.n_x, a.n_y, first.n_x, first.n_y
            )));
        }
        for (s, v) in sum.iter_mut().zip(&a.amplitude) {
            *s += v;
        }
        sources += a.sources;
    }
    let k = atfs.len() as f64;
    Ok(Atf {
        amplitude: sum.into_iter().map(|s| s / k).collect(),
        sources,
        ..first.clone()
    })
}

/// Inverse DFT of the amplitude with zero phase, real part, scaled by
/// `1/N` and shifted so the origin sits at pixel `(n_x/2, n_y/2)`.
///
/// With this scaling `Σ out² = Σ A² / N`.
pub fn inverse_amplitude(atf: &Atf) -> Image2D {
    let (nx, ny) = (atf.n_x, atf.n_y);
    let mut data: Vec<Complex<f64>> = atf
        .amplitude
        .iter()
        .map(|&a| Complex::new(a, 0.0))
        .collect();
    fft_2d(&mut data, nx, ny, true);
    let scale = 1.0 / (nx * ny) as f64;
    Image2D::from_fn(nx, ny, atf.pitch_um, |x, y| {
        let sx = (x + nx - nx / 2) % nx;
        let sy = (y + ny - ny / 2) % ny;
        data[sy * nx + sx].re * scale
    })
}

/// Zero-phase PSF reconstructed from an amplitude spectrum, centred at the
/// image midpoint and normalised to unit peak.
pub fn idealized_psf(atf: &Atf) -> Image2D {
    inverse_amplitude(atf).normalized_to_peak()
}

/// Lowest radial frequency (lp/mm) where the ring-averaged amplitude drops
/// below `threshold · DC` and the next ring is also below.
///
/// Rings are one frequency step wide (the finer of the two axes); the
/// crossing is interpolated linearly between the last ring above and the
/// first ring below the level.
pub fn resolution_lp_per_mm(atf: &Atf, threshold: f64) -> Result<f64, AnalysisError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(AnalysisError::InvalidParameter(format!(
            "threshold {threshold} must lie in (0, 1)"
        )));
    }
    let pitch_mm = atf.pitch_um / 1000.0;
    let step = 1.0 / (atf.n_x.max(atf.n_y) as f64 * pitch_mm);
    let nyquist = 0.5 / pitch_mm;
    let rings = (nyquist / step).floor() as usize + 1;

    let mut sum = vec![0.0; rings];
    let mut count = vec![0usize; rings];
    for ky in 0..atf.n_y {
        let fy = atf.frequency_y(ky);
        for kx in 0..atf.n_x {
            let r = atf.frequency_x(kx).hypot(fy);
            let ring = (r / step).round() as usize;
            if ring < rings {
                sum[ring] += atf.get(kx, ky);
                count[ring] += 1;
            }
        }
    }
    let profile: Vec<Option<f64>> = sum
        .iter()
        .zip(&count)
        .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
        .collect();

    let level = threshold * atf.dc();
    let below = |k: usize| profile[k].is_some_and(|v| v < level);
    for k in 1..rings.saturating_sub(1) {
        if below(k) && below(k + 1) {
            let prev = (0..k).rev().find_map(|j| profile[j].map(|v| (j, v)));
            let Some((j, above)) = prev else {
                return Ok(k as f64 * step);
            };
            let here = profile[k].unwrap();
            let t = (above - level) / (above - here);
            return Ok((j as f64 + t * (k - j) as f64) * step);
        }
    }
    Err(AnalysisError::BeyondNyquist { threshold })
}
