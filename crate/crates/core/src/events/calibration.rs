use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, RngExt};
use rayon::prelude::*;
use thiserror::Error;

use super::PixelEvent;
use crate::cube::{CubeError, SpectralImage};
use crate::sim::{smear_energy, DetectorSpec};

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("invalid line set: {0}")]
    LineSet(String),
    #[error("invalid pixel gains: {0}")]
    Gains(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("calibration CSV line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("event pixel ({x}, {y}) is outside the {n_x}×{n_y} calibration map")]
    PixelOutsideMap {
        x: u16,
        y: u16,
        n_x: usize,
        n_y: usize,
    },
    #[error(transparent)]
    Cube(#[from] CubeError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Reference lines used for calibration, sorted by energy.
#[derive(Debug, Clone, PartialEq)]
pub struct LineSet {
    lines: Vec<(String, f64)>,
}

impl LineSet {
    pub fn new(lines: Vec<(String, f64)>) -> Result<Self, CalibrationError> {
        if lines.len() < 2 {
            return Err(CalibrationError::LineSet(
                "a linear fit needs at least two lines".into(),
            ));
        }
        for (label, e) in &lines {
            if !(*e > 0.0 && e.is_finite()) {
                return Err(CalibrationError::LineSet(format!(
                    "{label}: energy {e} keV must be positive"
                )));
            }
        }
        if lines.windows(2).any(|w| w[1].1 <= w[0].1) {
            return Err(CalibrationError::LineSet(
                "energies must be strictly increasing".into(),
            ));
        }
        Ok(Self { lines })
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.lines.iter().map(|(l, _)| l.as_str())
    }

    pub fn energies(&self) -> impl Iterator<Item = f64> + '_ {
        self.lines.iter().map(|&(_, e)| e)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.lines.iter().map(|(l, e)| (l.as_str(), *e))
    }

    pub fn energy_of(&self, label: &str) -> Option<f64> {
        self.lines.iter().find(|(l, _)| l == label).map(|&(_, e)| e)
    }
}

impl Default for LineSet {
    /// Kα lines of Ti, Fe, Cu, Zr and Ag.
    fn default() -> Self {
        let lines = [
            ("Ti", 4.51),
            ("Fe", 6.40),
            ("Cu", 8.05),
            ("Zr", 15.78),
            ("Ag", 22.16),
        ];
        Self {
            lines: lines.iter().map(|&(l, e)| (l.to_string(), e)).collect(),
        }
    }
}

impl FromStr for LineSet {
    type Err = CalibrationError;

    /// `"Ti=4.51,Cu=8.05"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lines = s
            .split(',')
            .map(|item| {
                let (label, energy) = item.split_once('=').ok_or_else(|| {
                    CalibrationError::LineSet(format!("expected LABEL=keV, got {item:?}"))
                })?;
                let energy = energy
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| CalibrationError::LineSet(format!("{}: {e}", label.trim())))?;
                Ok::<_, CalibrationError>((label.trim().to_string(), energy))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(lines)
    }
}

/// Per-pixel linear response `E = gain · ToT + offset`, used as the ground
/// truth when synthesizing events.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelGains {
    pub n_x: usize,
    pub n_y: usize,
    pub gain: Vec<f64>,
    pub offset: Vec<f64>,
}

impl PixelGains {
    pub fn new(
        n_x: usize,
        n_y: usize,
        gain: Vec<f64>,
        offset: Vec<f64>,
    ) -> Result<Self, CalibrationError> {
        let n = n_x * n_y;
        if n == 0 || gain.len() != n || offset.len() != n {
            return Err(CalibrationError::Gains(format!(
                "{n_x}×{n_y} map needs {n} gains and offsets"
            )));
        }
        if n_x > usize::from(u16::MAX) + 1 || n_y > usize::from(u16::MAX) + 1 {
            return Err(CalibrationError::Gains("pixel index exceeds u16".into()));
        }
        if gain.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(CalibrationError::Gains("gains must be positive".into()));
        }
        if offset.iter().any(|b| !b.is_finite()) {
            return Err(CalibrationError::Gains("offsets must be finite".into()));
        }
        Ok(Self {
            n_x,
            n_y,
            gain,
            offset,
        })
    }

    pub fn uniform(
        n_x: usize,
        n_y: usize,
        gain: f64,
        offset: f64,
    ) -> Result<Self, CalibrationError> {
        Self::new(n_x, n_y, vec![gain; n_x * n_y], vec![offset; n_x * n_y])
    }

    /// Gains drawn uniformly from `[gain_lo, gain_hi)` with a common offset.
    pub fn random<R: Rng + ?Sized>(
        n_x: usize,
        n_y: usize,
        gain_lo: f64,
        gain_hi: f64,
        offset: f64,
        rng: &mut R,
    ) -> Result<Self, CalibrationError> {
        if !(gain_lo > 0.0 && gain_lo < gain_hi) {
            return Err(CalibrationError::Gains(format!(
                "gain range [{gain_lo}, {gain_hi}) must be positive and non-empty"
            )));
        }
        let gain = (0..n_x * n_y)
            .map(|_| rng.random_range(gain_lo..gain_hi))
            .collect();
        Self::new(n_x, n_y, gain, vec![offset; n_x * n_y])
    }
}

/// Events for one fluorescence line, `n_per_pixel` in every pixel, pixel by
/// pixel in row-major order. ToT is `round((E_meas − b) / a)` clamped to the
/// u16 range; ToA counts up from zero.
pub fn synthesize_line_events<R: Rng + ?Sized>(
    line_kev: f64,
    truth: &PixelGains,
    n_per_pixel: usize,
    energy_fwhm_kev: f64,
    rng: &mut R,
) -> Vec<PixelEvent> {
    let mut events = Vec::with_capacity(truth.gain.len() * n_per_pixel);
    let mut toa = 0u64;
    for y in 0..truth.n_y {
        for x in 0..truth.n_x {
            let p = y * truth.n_x + x;
            let (a, b) = (truth.gain[p], truth.offset[p]);
            for _ in 0..n_per_pixel {
                let measured = smear_energy(line_kev, energy_fwhm_kev, rng);
                let tot = ((measured - b) / a).round().clamp(0.0, f64::from(u16::MAX)) as u16;
                events.push(PixelEvent {
                    x: x as u16,
                    y: y as u16,
                    tot,
                    toa,
                });
                toa += 1;
            }
        }
    }
    events
}

/// Per-pixel ToT histograms (index = ToT), each as long as its largest ToT.
pub fn tot_histograms(events: &[PixelEvent], n_x: usize, n_y: usize) -> Vec<Vec<u64>> {
    let mut hists = vec![Vec::new(); n_x * n_y];
    for e in events {
        let h: &mut Vec<u64> = &mut hists[usize::from(e.y) * n_x + usize::from(e.x)];
        let t = usize::from(e.tot);
        if h.len() <= t {
            h.resize(t + 1, 0);
        }
        h[t] += 1;
    }
    hists
}

/// Count-weighted centroid of the connected run of bins at or above half
/// the maximum that contains the (first) maximum. `None` for an empty
/// histogram.
pub fn find_line_peak(histogram: &[u64]) -> Option<f64> {
    let (peak_bin, &peak) = histogram
        .iter()
        .enumerate()
        .rev()
        .max_by_key(|&(_, c)| *c)?;
    if peak == 0 {
        return None;
    }
    let above = |c: u64| 2 * c >= peak;
    let mut lo = peak_bin;
    while lo > 0 && above(histogram[lo - 1]) {
        lo -= 1;
    }
    let mut hi = peak_bin;
    while hi + 1 < histogram.len() && above(histogram[hi + 1]) {
        hi += 1;
    }
    let (mut sum, mut weighted) = (0.0, 0.0);
    for (t, &c) in histogram.iter().enumerate().take(hi + 1).skip(lo) {
        sum += c as f64;
        weighted += t as f64 * c as f64;
    }
    Some(weighted / sum)
}

/// Peak ToT per pixel (row-major) for events from a single line.
pub fn line_peaks(events: &[PixelEvent], n_x: usize, n_y: usize) -> Vec<Option<f64>> {
    tot_histograms(events, n_x, n_y)
        .par_iter()
        .map(|h| find_line_peak(h))
        .collect()
}

/// Fitted per-pixel calibration. Dead pixels keep whatever fit values they
/// have (NaN when no fit was possible).
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationMap {
    pub n_x: usize,
    pub n_y: usize,
    /// keV per ToT unit.
    pub gain: Vec<f64>,
    /// keV.
    pub offset: Vec<f64>,
    /// RMS fit residual, keV.
    pub residual: Vec<f64>,
    pub dead: Vec<bool>,
}

impl CalibrationMap {
    /// gain 1, offset 0 everywhere.
    pub fn identity(n_x: usize, n_y: usize) -> Self {
        let n = n_x * n_y;
        Self {
            n_x,
            n_y,
            gain: vec![1.0; n],
            offset: vec![0.0; n],
            residual: vec![0.0; n],
            dead: vec![false; n],
        }
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.n_x + x
    }

    /// Calibrated energy for a ToT value, `None` on dead pixels.
    pub fn energy(&self, x: usize, y: usize, tot: u16) -> Option<f64> {
        let p = self.index(x, y);
        (!self.dead[p]).then(|| self.gain[p] * f64::from(tot) + self.offset[p])
    }

    pub fn dead_count(&self) -> usize {
        self.dead.iter().filter(|&&d| d).count()
    }

    /// CSV with header `x,y,gain,offset,residual,dead`, one row per pixel in
    /// row-major order; `dead` is 0 or 1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,gain,offset,residual,dead\n");
        for y in 0..self.n_y {
            for x in 0..self.n_x {
                let p = self.index(x, y);
                let _ = writeln!(
                    out,
                    "{x},{y},{},{},{},{}",
                    self.gain[p],
                    self.offset[p],
                    self.residual[p],
                    u8::from(self.dead[p])
                );
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, CalibrationError> {
        let malformed = |line: usize, msg: String| CalibrationError::Malformed { line, msg };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "x,y,gain,offset,residual,dead" => {}
            _ => {
                return Err(malformed(
                    1,
                    "expected header x,y,gain,offset,residual,dead".into(),
                ))
            }
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != 6 {
                return Err(malformed(
                    lineno,
                    format!("{} fields, expected 6", cells.len()),
                ));
            }
            let int = |s: &str| {
                s.parse::<usize>()
                    .map_err(|e| malformed(lineno, format!("{s:?}: {e}")))
            };
            let float = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| malformed(lineno, format!("{s:?}: {e}")))
            };
            let dead = match cells[5] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(malformed(
                        lineno,
                        format!("dead flag {other:?} is not 0 or 1"),
                    ))
                }
            };
            rows.push((
                lineno,
                int(cells[0])?,
                int(cells[1])?,
                float(cells[2])?,
                float(cells[3])?,
                float(cells[4])?,
                dead,
            ));
        }
        if rows.is_empty() {
            return Err(malformed(2, "no pixel rows".into()));
        }
        let n_x = rows.iter().map(|r| r.1).max().unwrap() + 1;
        let n_y = rows.iter().map(|r| r.2).max().unwrap() + 1;
        let mut map = Self::identity(n_x, n_y);
        let mut seen = vec![false; n_x * n_y];
        for (lineno, x, y, gain, offset, residual, dead) in rows {
            let p = map.index(x, y);
            if std::mem::replace(&mut seen[p], true) {
                return Err(malformed(lineno, format!("pixel ({x}, {y}) listed twice")));
            }
            if !dead && !(gain > 0.0) {
                return Err(malformed(lineno, format!("live pixel with gain {gain}")));
            }
            map.gain[p] = gain;
            map.offset[p] = offset;
            map.residual[p] = residual;
            map.dead[p] = dead;
        }
        if let Some(p) = seen.iter().position(|s| !s) {
            return Err(malformed(
                text.lines().count(),
                format!("pixel ({}, {}) missing", p % n_x, p / n_x),
            ));
        }
        Ok(map)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CalibrationError> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CalibrationError> {
        Self::from_csv(&fs::read_to_string(path)?)
    }
}

struct PixelFit {
    gain: f64,
    offset: f64,
    residual: f64,
    dead: bool,
}

fn fit_pixel(points: &[(f64, f64)]) -> PixelFit {
    let dead = PixelFit {
        gain: f64::NAN,
        offset: f64::NAN,
        residual: f64::NAN,
        dead: true,
    };
    if points.len() < 2 {
        return dead;
    }
    let n = points.len() as f64;
    let t_mean = points.iter().map(|p| p.0).sum::<f64>() / n;
    let e_mean = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - t_mean).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - t_mean) * (p.1 - e_mean)).sum();
    if !(sxx > 0.0) {
        return dead;
    }
    let gain = sxy / sxx;
    let offset = e_mean - gain * t_mean;
    let residual = (points
        .iter()
        .map(|&(t, e)| (e - gain * t - offset).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    PixelFit {
        gain,
        offset,
        residual,
        dead: !(gain > 0.0 && gain.is_finite()),
    }
}

/// Least-squares `E = a·ToT + b` per pixel. `peaks[line][pixel]` holds the
/// located peak ToT of each line in `lines`, pixels in row-major order.
/// Pixels with fewer than two peaks, a degenerate fit or a non-positive
/// gain are marked dead.
pub fn fit_calibration(
    lines: &LineSet,
    peaks: &[Vec<Option<f64>>],
    n_x: usize,
    n_y: usize,
) -> Result<CalibrationMap, CalibrationError> {
    if peaks.len() != lines.len() {
        return Err(CalibrationError::Shape(format!(
            "{} peak maps for {} lines",
            peaks.len(),
            lines.len()
        )));
    }
    let n = n_x * n_y;
    if let Some(bad) = peaks.iter().find(|p| p.len() != n) {
        return Err(CalibrationError::Shape(format!(
            "peak map has {} pixels, expected {n}",
            bad.len()
        )));
    }
    let energies: Vec<f64> = lines.energies().collect();
    let fits: Vec<PixelFit> = (0..n)
        .into_par_iter()
        .map(|p| {
            let points: Vec<(f64, f64)> = peaks
                .iter()
                .zip(&energies)
                .filter_map(|(map, &e)| map[p].filter(|t| t.is_finite()).map(|t| (t, e)))
                .collect();
            fit_pixel(&points)
        })
        .collect();
    Ok(CalibrationMap {
        n_x,
        n_y,
        gain: fits.iter().map(|f| f.gain).collect(),
        offset: fits.iter().map(|f| f.offset).collect(),
        residual: fits.iter().map(|f| f.residual).collect(),
        dead: fits.iter().map(|f| f.dead).collect(),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ApplyStats {
    pub binned: u64,
    pub dead_pixel: u64,
    /// Calibrated energy outside the cube's energy range.
    pub out_of_range: u64,
}

/// Histogram calibrated events into a cube using the detector's binning and
/// pitch. Events on dead pixels are dropped and counted in `meta.dropped`.
pub fn apply_calibration(
    events: &[PixelEvent],
    cal: &CalibrationMap,
    binning: &DetectorSpec,
) -> Result<(SpectralImage, ApplyStats), CalibrationError> {
    let mut cube = SpectralImage::zeros(
        cal.n_x,
        cal.n_y,
        binning.n_bins,
        binning.e_min_kev,
        binning.e_bin_width_kev,
        binning.pitch_um,
    )?;
    let mut stats = ApplyStats::default();
    for e in events {
        let (x, y) = (usize::from(e.x), usize::from(e.y));
        if x >= cal.n_x || y >= cal.n_y {
            return Err(CalibrationError::PixelOutsideMap {
                x: e.x,
                y: e.y,
                n_x: cal.n_x,
                n_y: cal.n_y,
            });
        }
        match cal.energy(x, y, e.tot) {
            None => stats.dead_pixel += 1,
            Some(energy) => match cube.bin_for_energy(energy) {
                Some(bin) => {
                    cube.add(x, y, bin, 1);
                    stats.binned += 1;
                }
                None => stats.out_of_range += 1,
            },
        }
    }
    cube.meta.photons = events.len() as u64;
    cube.meta.dropped = stats.dead_pixel;
    Ok((cube, stats))
}
