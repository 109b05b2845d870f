use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use mpo_xrf::analysis::{self, energy_window, Image2D};
use mpo_xrf::SpectralImage;

/// Malformed argument values that clap cannot check on its own.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// `LO:HI` in keV.
pub fn parse_window(text: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = text
        .split_once(':')
        .ok_or_else(|| format!("expected LO:HI, got {text:?}"))?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{lo:?}: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{hi:?}: {e}"))?;
    if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
        return Err(format!("window {lo}:{hi} is empty"));
    }
    Ok((lo, hi))
}

pub fn load_cube(path: &Path) -> Result<SpectralImage> {
    SpectralImage::load(path).with_context(|| format!("reading cube {}", path.display()))
}

/// A 2-D image from a SIC cube (summed over `window`, or every bin) or an
/// image CSV.
pub fn load_image(path: &Path, window: Option<(f64, f64)>) -> Result<Image2D> {
    let is_sic = path
        .extension()
        .is_some_and(|ext| ext.eq_ignore_ascii_case("sic"));
    if is_sic {
        let cube = load_cube(path)?;
        let (lo, hi) = window.unwrap_or((
            cube.e_min_kev,
            cube.e_min_kev + cube.n_bins as f64 * cube.e_bin_width_kev,
        ));
        let w = energy_window(&cube, lo, hi)?;
        if w.outside_cube {
            eprintln!(
                "warning: window {lo}:{hi} keV lies outside {}",
                path.display()
            );
        }
        Ok(w.image)
    } else {
        if window.is_some() {
            return Err(UsageError(format!(
                "--window applies to SIC cubes, not {}",
                path.display()
            ))
            .into());
        }
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        analysis::read_image_csv(BufReader::new(file))
            .with_context(|| format!("reading image {}", path.display()))
    }
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

pub fn write_with(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
    let mut out = create(path)?;
    f(&mut out).with_context(|| format!("writing {}", path.display()))?;
    out.flush()
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
