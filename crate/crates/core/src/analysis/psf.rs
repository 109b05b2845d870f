//! PSF centring, arm profiles, widths and the closed-form extent models.

use super::{AnalysisError, Image2D};
use crate::optics::{critical_angle_deg, Material, MpoGeometry, OpticsError};

/// Half-width of the horizontal and vertical bands excluded from
/// background estimates.
pub const DEFAULT_ARM_BAND_HALF_WIDTH_MM: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsfProfile {
    pub axis: Axis,
    /// mm, relative to the PSF centre.
    pub positions: Vec<f64>,
    pub intensities: Vec<f64>,
    pub rows_averaged: usize,
}

/// Sub-pixel PSF centre `(x, y)` in pixel units.
///
/// The peak is the maximum of the 3×3 box-smoothed image (zero padded,
/// ties to the lowest `(y, x)`); the centre is the intensity centroid of
/// the raw 3×3 neighbourhood around it.
pub fn find_psf_center(image: &Image2D) -> Result<(f64, f64), AnalysisError> {
    let (nx, ny) = (image.n_x, image.n_y);
    let neighbourhood = |x: usize, y: usize| {
        let xs = x.saturating_sub(1)..=(x + 1).min(nx - 1);
        let ys = y.saturating_sub(1)..=(y + 1).min(ny - 1);
        ys.flat_map(move |j| xs.clone().map(move |i| (i, j)))
    };

    let mut best: Option<(f64, usize, usize)> = None;
    for y in 0..ny {
        for x in 0..nx {
            let smoothed: f64 = neighbourhood(x, y).map(|(i, j)| image.get(i, j)).sum();
            if best.is_none_or(|(b, _, _)| smoothed > b) {
                best = Some((smoothed, x, y));
            }
        }
    }
    let (peak, px, py) = best.expect("non-empty image");
    if !(peak > 0.0) {
        return Err(AnalysisError::NoPeak);
    }

    let (mut sum, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for (i, j) in neighbourhood(px, py) {
        let v = image.get(i, j);
        sum += v;
        sx += v * i as f64;
        sy += v * j as f64;
    }
    if !(sum > 0.0) {
        return Err(AnalysisError::NoPeak);
    }
    Ok((sx / sum, sy / sum))
}

/// Horizontal and vertical profiles through `center`, each the mean of the
/// three rows (columns) nearest the centre.
pub fn extract_arm_profiles(
    image: &Image2D,
    center: (f64, f64),
) -> Result<(PsfProfile, PsfProfile), AnalysisError> {
    let (cx, cy) = center;
    let col = cx.round();
    let row = cy.round();
    if col < 1.0 || row < 1.0 || col > (image.n_x - 2) as f64 || row > (image.n_y - 2) as f64 {
        return Err(AnalysisError::CenterAtEdge { x: cx, y: cy });
    }
    let (col, row) = (col as usize, row as usize);
    let pitch = image.pitch_mm();

    let horizontal = PsfProfile {
        axis: Axis::Horizontal,
        positions: (0..image.n_x).map(|x| (x as f64 - cx) * pitch).collect(),
        intensities: (0..image.n_x)
            .map(|x| (row - 1..=row + 1).map(|y| image.get(x, y)).sum::<f64>() / 3.0)
            .collect(),
        rows_averaged: 3,
    };
    let vertical = PsfProfile {
        axis: Axis::Vertical,
        positions: (0..image.n_y).map(|y| (y as f64 - cy) * pitch).collect(),
        intensities: (0..image.n_y)
            .map(|y| (col - 1..=col + 1).map(|x| image.get(x, y)).sum::<f64>() / 3.0)
            .collect(),
        rows_averaged: 3,
    };
    Ok((horizontal, vertical))
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median of the outer 20 % of samples (10 % from each end).
fn edge_background(intensities: &[f64]) -> f64 {
    let n = intensities.len();
    let k = (n / 10).max(1).min(n.div_ceil(2));
    let mut edge: Vec<f64> = intensities[..k].to_vec();
    edge.extend_from_slice(&intensities[n - k..]);
    median(edge)
}

/// Width at `fraction` of the peak height above background, between the
/// linearly interpolated crossings nearest the peak. Returns
/// `(left, right)` crossing positions.
fn crossings(
    profile: &PsfProfile,
    fraction: f64,
    background: f64,
) -> Result<(f64, f64), AnalysisError> {
    let values = &profile.intensities;
    let pos = &profile.positions;
    let (peak_idx, &peak) = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .ok_or(AnalysisError::NoPeak)?;
    if !(peak > background) {
        return Err(AnalysisError::NoPeak);
    }
    // Vertex of the parabola through the peak sample and its neighbours;
    // at most (peak − neighbour) / 8 above the sampled maximum.
    let peak = match (peak_idx.checked_sub(1), values.get(peak_idx + 1)) {
        (Some(l), Some(&c)) => {
            let a = values[l];
            let curvature = 2.0 * peak - a - c;
            if curvature > 0.0 {
                peak + (a - c).powi(2) / (8.0 * curvature)
            } else {
                peak
            }
        }
        _ => peak,
    };
    let level = background + fraction * (peak - background);
    let interpolate = |inside: usize, outside: usize| {
        let (vi, vo) = (values[inside], values[outside]);
        pos[inside] + (level - vi) / (vo - vi) * (pos[outside] - pos[inside])
    };
    let left = (0..peak_idx)
        .rev()
        .find(|&i| values[i] < level)
        .map(|i| interpolate(i + 1, i))
        .ok_or(AnalysisError::OneSided { side: "left" })?;
    let right = (peak_idx + 1..values.len())
        .find(|&i| values[i] < level)
        .map(|i| interpolate(i - 1, i))
        .ok_or(AnalysisError::OneSided { side: "right" })?;
    Ok((left, right))
}

/// Full width at half maximum (mm) above the edge background.
pub fn fwhm(profile: &PsfProfile) -> Result<f64, AnalysisError> {
    let background = edge_background(&profile.intensities);
    let (left, right) = crossings(profile, 0.5, background)?;
    Ok(right - left)
}

/// Half of the full width at `fraction` of the peak, measured from zero
/// baseline. Used for arm extents at 10 % of the arm peak.
pub fn profile_extent(profile: &PsfProfile, fraction: f64) -> Result<f64, AnalysisError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(AnalysisError::InvalidParameter(format!(
            "fraction {fraction} must lie in (0, 1)"
        )));
    }
    let (left, right) = crossings(profile, fraction, 0.0)?;
    Ok(0.5 * (right - left))
}

/// Largest landing offset (mm) of direction-preserving reflected photons
/// from a point source: `tan θc(E) · (L_s + L_i)`.
pub fn expected_arm_half_length(
    energy_kev: f64,
    coating: &Material,
    ls_mm: f64,
    li_mm: f64,
) -> Result<f64, OpticsError> {
    let theta_c = critical_angle_deg(energy_kev, coating)?;
    Ok(theta_c.to_radians().tan() * (ls_mm + li_mm))
}

/// Landing offset bound (mm) for unreflected photons from a point source:
/// the channel acceptance slope `w / t` times `L_s + L_i`.
pub fn expected_direct_half_width(geometry: &MpoGeometry, ls_mm: f64, li_mm: f64) -> f64 {
    geometry.acceptance_slope() * (ls_mm + li_mm)
}

/// Mean of the pixels outside a disc of `exclusion_radius_mm` around
/// `center` and outside the horizontal and vertical arm bands of
/// half-width `band_half_width_mm`. Invalid pixels are skipped.
pub fn background_level(
    image: &Image2D,
    exclusion_radius_mm: f64,
    center: (f64, f64),
    band_half_width_mm: f64,
) -> Result<f64, AnalysisError> {
    let pitch = image.pitch_mm();
    let half_extent = 0.5 * (image.n_x.min(image.n_y) as f64) * pitch;
    if !(exclusion_radius_mm >= 0.0 && exclusion_radius_mm < half_extent) {
        return Err(AnalysisError::InvalidParameter(format!(
            "exclusion radius {exclusion_radius_mm} mm must be below half the image ({half_extent} mm)"
        )));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for y in 0..image.n_y {
        let dy = (y as f64 - center.1) * pitch;
        if dy.abs() <= band_half_width_mm {
            continue;
        }
        for x in 0..image.n_x {
            let dx = (x as f64 - center.0) * pitch;
            if dx.abs() <= band_half_width_mm
                || dx.hypot(dy) <= exclusion_radius_mm
                || !image.is_valid(x, y)
            {
                continue;
            }
            sum += image.get(x, y);
            n += 1;
        }
    }
    if n == 0 {
        return Err(AnalysisError::EmptyRegion);
    }
    Ok(sum / n as f64)
}
