//! Background suppression over several PSF images: window each PSF around
//! its centre, average the amplitude spectra and invert with zero phase.

use super::{
    atf, average_atf, background_level, find_psf_center, gaussian_window, idealized_psf,
    resolution_lp_per_mm, AnalysisError, Atf, Image2D,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CleanParams {
    pub window_sigma_mm: f64,
    /// Radius of the disc around the PSF centre excluded from the
    /// background estimate.
    pub exclusion_radius_mm: f64,
    pub band_half_width_mm: f64,
    /// Radius outside which the residual background of the idealized PSF
    /// is reported.
    pub outer_radius_mm: f64,
    pub resolution_threshold: f64,
}

impl Default for CleanParams {
    fn default() -> Self {
        Self {
            window_sigma_mm: super::DEFAULT_WINDOW_SIGMA_MM,
            exclusion_radius_mm: 0.2,
            band_half_width_mm: super::DEFAULT_ARM_BAND_HALF_WIDTH_MM,
            outer_radius_mm: 1.0,
            resolution_threshold: super::DEFAULT_RESOLUTION_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleanResult {
    pub idealized: Image2D,
    pub mean_atf: Atf,
    pub centers: Vec<(f64, f64)>,
    /// Peak-normalised background of each raw input.
    pub raw_backgrounds: Vec<f64>,
    /// Mean of `raw_backgrounds`.
    pub background_before: f64,
    /// Background of the idealized PSF (unit peak).
    pub background_after: f64,
    /// Background of the idealized PSF outside `outer_radius_mm`.
    pub outer_background: f64,
    /// `Err` when the amplitude never drops below the threshold.
    pub resolution_lp_per_mm: Result<f64, AnalysisError>,
}

impl CleanResult {
    pub fn background_ratio(&self) -> f64 {
        self.background_after / self.background_before
    }
}

pub fn clean_psfs(images: &[Image2D], params: &CleanParams) -> Result<CleanResult, AnalysisError> {
    if images.is_empty() {
        return Err(AnalysisError::InvalidParameter("no input images".into()));
    }
    let mut centers = Vec::with_capacity(images.len());
    let mut raw_backgrounds = Vec::with_capacity(images.len());
    let mut spectra = Vec::with_capacity(images.len());
    for image in images {
        let center = find_psf_center(image)?;
        raw_backgrounds.push(background_level(
            &image.normalized_to_peak(),
            params.exclusion_radius_mm,
            center,
            params.band_half_width_mm,
        )?);
        spectra.push(atf(&gaussian_window(
            image,
            params.window_sigma_mm,
            center,
        )?));
        centers.push(center);
    }
    let mean_atf = average_atf(&spectra)?;
    let idealized = idealized_psf(&mean_atf);
    let ideal_center = find_psf_center(&idealized)?;
    let background_after = background_level(
        &idealized,
        params.exclusion_radius_mm,
        ideal_center,
        params.band_half_width_mm,
    )?;
    let outer_background = background_level(
        &idealized,
        params.outer_radius_mm,
        ideal_center,
        params.band_half_width_mm,
    )?;
    let background_before = raw_backgrounds.iter().sum::<f64>() / raw_backgrounds.len() as f64;
    let resolution = resolution_lp_per_mm(&mean_atf, params.resolution_threshold);
    Ok(CleanResult {
        idealized,
        mean_atf,
        centers,
        raw_backgrounds,
        background_before,
        background_after,
        outer_background,
        resolution_lp_per_mm: resolution,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn psf_with_floor(cx: f64, cy: f64, floor: f64) -> Image2D {
        Image2D::from_fn(96, 96, 55.0, |x, y| {
            let r2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            100.0 * (-r2 / 8.0).exp() + floor
        })
    }

    #[test]
    fn uniform_floor_is_suppressed() {
        let images = [
            psf_with_floor(40.0, 50.0, 5.0),
            psf_with_floor(55.0, 45.0, 5.0),
            psf_with_floor(48.0, 48.0, 5.0),
        ];
        let params = CleanParams {
            window_sigma_mm: 0.5,
            ..CleanParams::default()
        };
        let out = clean_psfs(&images, &params).unwrap();
        assert_eq!(out.centers.len(), 3);
        assert!((out.background_before - 0.05).abs() < 0.01);
        assert!(out.background_ratio() < 0.25, "{}", out.background_ratio());
        assert!((out.idealized.max() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(clean_psfs(&[], &CleanParams::default()).is_err());
    }
}
