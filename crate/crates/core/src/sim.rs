//! Monte Carlo transport of fluorescence photons through a flat MPO onto a
//! pixel detector.
//!
//! Lab frame: optic axis `y`, sample plane at `y = 0`. `ls_mm` is the gap
//! from the sample plane to the MPO entrance face and `li_mm` the gap from
//! the exit face to the detector, so the detector sits at
//! `y = ls + t + li`. Detector column follows lab `x`, detector row follows
//! lab `z`, and the optic axis hits the detector at its geometric centre.
//!
//! Runs are split into fixed batches of [`BATCH_SIZE`] photons. Batch `b`
//! draws from `ChaCha8Rng::seed_from_u64(seed)` on stream `b`, and counts
//! are merged by integer addition, so the output does not depend on the
//! number of worker threads.

use std::f64::consts::PI;

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::cube::{CubeError, SpectralImage};
use crate::optics::{
    self, critical_angle_deg, pore_entry, pore_origin_mm, ChannelTraceResult, MpoGeometry,
    OpticsError, PathClass, Photon, PoreEntry, MAX_PARAXIAL_SLOPE,
};

/// Photons per deterministic batch.
pub const BATCH_SIZE: u64 = 65_536;

/// Gaussian FWHM / σ.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid detector: {0}")]
    InvalidDetector(String),
    #[error(transparent)]
    Optics(#[from] OpticsError),
    #[error(transparent)]
    Cube(#[from] CubeError),
    #[error("failed to start worker pool: {0}")]
    ThreadPool(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceShape {
    Point {
        pos: [f64; 3],
    },
    /// Uniform emitter in the plane `y = center[1]`; `width` along x,
    /// `height` along z.
    Rect {
        center: [f64; 3],
        width: f64,
        height: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmissionLine {
    pub energy_kev: f64,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Source {
    pub shape: SourceShape,
    pub lines: Vec<EmissionLine>,
    pub label: String,
}

impl Source {
    pub fn point(label: impl Into<String>, pos: [f64; 3], lines: Vec<EmissionLine>) -> Self {
        Self {
            shape: SourceShape::Point { pos },
            lines,
            label: label.into(),
        }
    }

    /// Point emitter of a single line.
    pub fn mono_point(label: impl Into<String>, pos: [f64; 3], energy_kev: f64) -> Self {
        Self::point(
            label,
            pos,
            vec![EmissionLine {
                energy_kev,
                intensity: 1.0,
            }],
        )
    }

    /// Sum of line intensities; sets this source's share of emitted photons.
    pub fn strength(&self) -> f64 {
        self.lines.iter().map(|l| l.intensity).sum()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| {
            Err(SimError::InvalidScene(format!(
                "source {}: {msg}",
                self.label
            )))
        };
        if self.lines.is_empty() {
            return bad("needs at least one emission line".into());
        }
        for line in &self.lines {
            if !(line.energy_kev > 0.0 && line.energy_kev.is_finite()) {
                return bad(format!(
                    "line energy {} keV must be positive",
                    line.energy_kev
                ));
            }
            if !(line.intensity > 0.0 && line.intensity.is_finite()) {
                return bad(format!(
                    "line intensity {} must be positive",
                    line.intensity
                ));
            }
        }
        match &self.shape {
            SourceShape::Point { pos } if pos.iter().all(|v| v.is_finite()) => {}
            SourceShape::Point { .. } => return bad("non-finite position".into()),
            SourceShape::Rect {
                center,
                width,
                height,
            } => {
                if !(*width > 0.0 && *height > 0.0) {
                    return bad("rectangle dimensions must be positive".into());
                }
                if !center.iter().all(|v| v.is_finite()) {
                    return bad("non-finite position".into());
                }
            }
        }
        Ok(())
    }

    fn plane_y(&self) -> f64 {
        match &self.shape {
            SourceShape::Point { pos } => pos[1],
            SourceShape::Rect { center, .. } => center[1],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub sources: Vec<Source>,
    /// Sample plane to MPO entrance face, mm.
    pub ls_mm: f64,
    /// MPO exit face to detector, mm.
    pub li_mm: f64,
}

impl Scene {
    pub fn validate(&self, mpo: &MpoGeometry) -> Result<(), SimError> {
        if !(self.ls_mm > 0.0 && self.li_mm > 0.0) {
            return Err(SimError::InvalidScene(format!(
                "distances must be positive (L_s = {}, L_i = {})",
                self.ls_mm, self.li_mm
            )));
        }
        if self.sources.is_empty() {
            return Err(SimError::InvalidScene("no sources".into()));
        }
        let paraxial_deg = MAX_PARAXIAL_SLOPE.atan().to_degrees();
        for source in &self.sources {
            source.validate()?;
            if source.plane_y() >= self.ls_mm {
                return Err(SimError::InvalidScene(format!(
                    "source {} is not in front of the MPO",
                    source.label
                )));
            }
            // Rays outside the paraxial cone are treated as wall losses,
            // which requires every line to be super-critical there.
            for line in &source.lines {
                let theta_c = critical_angle_deg(line.energy_kev, &mpo.coating)?;
                if theta_c >= paraxial_deg {
                    return Err(SimError::InvalidScene(format!(
                        "line at {} keV has θc = {theta_c:.2}°, beyond the paraxial model",
                        line.energy_kev
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorSpec {
    pub n_x: usize,
    pub n_y: usize,
    pub pitch_um: f64,
    /// Constant energy resolution, keV FWHM.
    pub energy_fwhm_kev: f64,
    pub threshold_kev: f64,
    pub e_min_kev: f64,
    pub e_bin_width_kev: f64,
    pub n_bins: usize,
}

impl Default for DetectorSpec {
    /// 256 × 256 pixels at 55 µm, 1.12 keV FWHM, 2 keV threshold,
    /// 100 bins of 0.25 keV from 0.
    fn default() -> Self {
        Self {
            n_x: 256,
            n_y: 256,
            pitch_um: 55.0,
            energy_fwhm_kev: 1.12,
            threshold_kev: 2.0,
            e_min_kev: 0.0,
            e_bin_width_kev: 0.25,
            n_bins: 100,
        }
    }
}

impl DetectorSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: &str| Err(SimError::InvalidDetector(msg.into()));
        if self.n_x == 0 || self.n_y == 0 {
            return bad("pixel counts must be positive");
        }
        if !(self.pitch_um > 0.0) {
            return bad("pitch must be positive");
        }
        if !(self.energy_fwhm_kev >= 0.0) {
            return bad("energy FWHM must be non-negative");
        }
        if self.n_bins == 0 || !(self.e_bin_width_kev > 0.0) {
            return bad("energy binning must have positive bins");
        }
        if !self.threshold_kev.is_finite() || !self.e_min_kev.is_finite() {
            return bad("threshold and e_min must be finite");
        }
        Ok(())
    }

    pub fn empty_cube(&self) -> Result<SpectralImage, SimError> {
        Ok(SpectralImage::zeros(
            self.n_x,
            self.n_y,
            self.n_bins,
            self.e_min_kev,
            self.e_bin_width_kev,
            self.pitch_um,
        )?)
    }

    /// Pixel containing lab point `(x, z)` mm on the detector plane.
    pub fn pixel_of(&self, x_mm: f64, z_mm: f64) -> Option<(usize, usize)> {
        let col = x_mm * 1000.0 / self.pitch_um + self.n_x as f64 / 2.0;
        let row = z_mm * 1000.0 / self.pitch_um + self.n_y as f64 / 2.0;
        if col >= 0.0 && row >= 0.0 && col < self.n_x as f64 && row < self.n_y as f64 {
            Some((col as usize, row as usize))
        } else {
            None
        }
    }

    /// Lab coordinate (mm) of the centre of pixel `(col, row)`.
    pub fn pixel_center_mm(&self, col: usize, row: usize) -> (f64, f64) {
        let to_mm = |i: usize, n: usize| (i as f64 + 0.5 - n as f64 / 2.0) * self.pitch_um / 1000.0;
        (to_mm(col, self.n_x), to_mm(row, self.n_y))
    }
}

/// Solid angle of the rectangle `[x1, x2] × [z1, z2]` lying in a plane at
/// perpendicular distance `d` from the viewpoint (coordinates relative to
/// the foot of the perpendicular).
pub fn rect_solid_angle(x1: f64, x2: f64, z1: f64, z2: f64, d: f64) -> f64 {
    let corner = |x: f64, z: f64| (x * z / (d * (x * x + z * z + d * d).sqrt())).atan();
    corner(x2, z2) - corner(x1, z2) - corner(x2, z1) + corner(x1, z1)
}

/// Draw one photon from `source`, aimed uniformly over the solid angle the
/// MPO plate subtends from the emission point.
///
/// The photon's weight is that solid angle over 4π, i.e. the fraction of
/// isotropic emission it stands for. Slopes are not clamped; rays steeper
/// than the paraxial limit are returned as-is.
pub fn sample_emission<R: Rng + ?Sized>(
    source: &Source,
    geometry: &MpoGeometry,
    scene: &Scene,
    rng: &mut R,
) -> Photon {
    let origin = match &source.shape {
        SourceShape::Point { pos } => *pos,
        SourceShape::Rect {
            center,
            width,
            height,
        } => [
            center[0] + (rng.random::<f64>() - 0.5) * width,
            center[1],
            center[2] + (rng.random::<f64>() - 0.5) * height,
        ],
    };
    let energy = pick_line(&source.lines, rng);

    let depth = scene.ls_mm - origin[1];
    let half = geometry.plate_side_mm / 2.0;
    let (x1, x2) = (-half - origin[0], half - origin[0]);
    let (z1, z2) = (-half - origin[2], half - origin[2]);
    let reach = x1.abs().max(x2.abs()).hypot(z1.abs().max(z2.abs()));
    let cos_max = depth / reach.hypot(depth);

    // Uniform over the cone around +y that contains the plate, kept only
    // when the ray lands on the plate.
    let (slope_x, slope_z) = loop {
        let cos_t = 1.0 - rng.random::<f64>() * (1.0 - cos_max);
        let phi = 2.0 * PI * rng.random::<f64>();
        let tan_t = (1.0 - cos_t * cos_t).max(0.0).sqrt() / cos_t;
        let (sx, sz) = (tan_t * phi.cos(), tan_t * phi.sin());
        let (hx, hz) = (sx * depth, sz * depth);
        if hx >= x1 && hx <= x2 && hz >= z1 && hz <= z2 {
            break (sx, sz);
        }
    };
    let weight = rect_solid_angle(x1, x2, z1, z2, depth) / (4.0 * PI);
    Photon {
        pos: origin,
        slope_x,
        slope_z,
        energy,
        weight,
    }
}

fn pick_line<R: Rng + ?Sized>(lines: &[EmissionLine], rng: &mut R) -> f64 {
    if lines.len() == 1 {
        return lines[0].energy_kev;
    }
    let total: f64 = lines.iter().map(|l| l.intensity).sum();
    let mut target = rng.random::<f64>() * total;
    for line in lines {
        if target < line.intensity {
            return line.energy_kev;
        }
        target -= line.intensity;
    }
    lines[lines.len() - 1].energy_kev
}

/// Straight-line propagation from the channel exit of pore `(i, j)` over
/// `li_mm` to the detector plane. Returns lab `(x, z)` in mm.
pub fn project_to_detector(
    trace: &ChannelTraceResult,
    pore: (i64, i64),
    geometry: &MpoGeometry,
    li_mm: f64,
) -> (f64, f64) {
    let exit_x = pore_origin_mm(pore.0, geometry) + trace.exit_u / 1000.0;
    let exit_z = pore_origin_mm(pore.1, geometry) + trace.exit_v / 1000.0;
    (
        exit_x + trace.exit_slope_x * li_mm,
        exit_z + trace.exit_slope_z * li_mm,
    )
}

/// Gaussian energy smearing with the detector's constant FWHM.
pub fn apply_energy_response<R: Rng + ?Sized>(
    true_energy_kev: f64,
    detector: &DetectorSpec,
    rng: &mut R,
) -> f64 {
    smear_energy(true_energy_kev, detector.energy_fwhm_kev, rng)
}

/// Add zero-mean Gaussian noise of the given FWHM (keV).
pub fn smear_energy<R: Rng + ?Sized>(energy_kev: f64, fwhm_kev: f64, rng: &mut R) -> f64 {
    if fwhm_kev == 0.0 {
        return energy_kev;
    }
    Normal::new(energy_kev, fwhm_kev / FWHM_PER_SIGMA)
        .expect("finite sigma")
        .sample(rng)
}

/// Where each simulated photon ended up.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub photons: u64,
    pub missed_plate: u64,
    pub web_absorbed: u64,
    /// Super-critical wall hits, roulette losses and rays outside the
    /// paraxial cone.
    pub wall_absorbed: u64,
    pub off_detector: u64,
    pub below_threshold: u64,
    pub out_of_range: u64,
    pub detected: u64,
    /// Detected photons per [`PathClass`], indexed by [`PathClass::index`].
    pub per_class: [u64; 5],
}

impl Tally {
    fn merge(&mut self, other: &Tally) {
        self.photons += other.photons;
        self.missed_plate += other.missed_plate;
        self.web_absorbed += other.web_absorbed;
        self.wall_absorbed += other.wall_absorbed;
        self.off_detector += other.off_detector;
        self.below_threshold += other.below_threshold;
        self.out_of_range += other.out_of_range;
        self.detected += other.detected;
        for (a, b) in self.per_class.iter_mut().zip(other.per_class) {
            *a += b;
        }
    }

    pub fn class_count(&self, class: PathClass) -> u64 {
        self.per_class[class.index()]
    }
}

/// Energy-integrated hit maps split by path class, row-major `n_x × n_y`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassImages {
    pub n_x: usize,
    pub n_y: usize,
    pub pitch_um: f64,
    pub counts: [Vec<u64>; 5],
}

impl ClassImages {
    fn new(detector: &DetectorSpec) -> Self {
        let n = detector.n_x * detector.n_y;
        Self {
            n_x: detector.n_x,
            n_y: detector.n_y,
            pitch_um: detector.pitch_um,
            counts: std::array::from_fn(|_| vec![0; n]),
        }
    }

    pub fn class(&self, class: PathClass) -> &[u64] {
        &self.counts[class.index()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRun {
    pub image: SpectralImage,
    pub tally: Tally,
    pub classes: ClassImages,
}

#[derive(Debug, Clone, Copy)]
struct Hit {
    cube_index: u32,
    pixel: u32,
    class: PathClass,
}

/// Seeded generator for batch `batch` of a run.
pub fn batch_rng(seed: u64, batch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(batch);
    rng
}

/// Transport `n_photons` photons and accumulate the spectral cube.
pub fn simulate(
    scene: &Scene,
    mpo: &MpoGeometry,
    detector: &DetectorSpec,
    n_photons: u64,
    seed: u64,
    n_workers: usize,
) -> Result<SimulationRun, SimError> {
    mpo.validate()?;
    scene.validate(mpo)?;
    detector.validate()?;
    if detector.n_x * detector.n_y * detector.n_bins > u32::MAX as usize {
        return Err(SimError::InvalidDetector("cube too large".into()));
    }

    let mut image = detector.empty_cube()?;
    let mut classes = ClassImages::new(detector);
    let mut tally = Tally::default();

    let n_batches = n_photons.div_ceil(BATCH_SIZE);
    let run_batch = |batch: u64| {
        let start = batch * BATCH_SIZE;
        let count = BATCH_SIZE.min(n_photons - start);
        BatchRunner::new(scene, mpo, detector).run(seed, batch, count)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n_workers.max(1))
        .build()
        .map_err(|e| SimError::ThreadPool(e.to_string()))?;
    let results: Vec<(Tally, Vec<Hit>)> =
        pool.install(|| (0..n_batches).into_par_iter().map(run_batch).collect());

    for (batch_tally, hits) in &results {
        tally.merge(batch_tally);
        for hit in hits {
            image.counts[hit.cube_index as usize] += 1;
            classes.counts[hit.class.index()][hit.pixel as usize] += 1;
        }
    }

    image.meta.seed = seed;
    image.meta.photons = n_photons;
    image.meta.scene_digest = scene_digest(scene, mpo, detector);
    Ok(SimulationRun {
        image,
        tally,
        classes,
    })
}

/// FNV-1a over the debug rendering of the run configuration.
pub fn scene_digest(scene: &Scene, mpo: &MpoGeometry, detector: &DetectorSpec) -> u64 {
    let text = format!("{scene:?}|{mpo:?}|{detector:?}");
    text.bytes().fold(0xcbf2_9ce4_8422_2325u64, |hash, byte| {
        (hash ^ byte as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

struct BatchRunner<'a> {
    scene: &'a Scene,
    mpo: &'a MpoGeometry,
    detector: &'a DetectorSpec,
    source_cdf: Vec<f64>,
}

enum Fate {
    MissedPlate,
    Web,
    Wall,
    OffDetector,
    BelowThreshold,
    OutOfRange,
    Detected(Hit),
}

impl<'a> BatchRunner<'a> {
    fn new(scene: &'a Scene, mpo: &'a MpoGeometry, detector: &'a DetectorSpec) -> Self {
        let mut acc = 0.0;
        let source_cdf = scene
            .sources
            .iter()
            .map(|s| {
                acc += s.strength();
                acc
            })
            .collect();
        Self {
            scene,
            mpo,
            detector,
            source_cdf,
        }
    }

    fn run(&self, seed: u64, batch: u64, count: u64) -> (Tally, Vec<Hit>) {
        let mut rng = batch_rng(seed, batch);
        let mut tally = Tally {
            photons: count,
            ..Tally::default()
        };
        let mut hits = Vec::new();
        for _ in 0..count {
            match self.transport(&mut rng) {
                Fate::MissedPlate => tally.missed_plate += 1,
                Fate::Web => tally.web_absorbed += 1,
                Fate::Wall => tally.wall_absorbed += 1,
                Fate::OffDetector => tally.off_detector += 1,
                Fate::BelowThreshold => tally.below_threshold += 1,
                Fate::OutOfRange => tally.out_of_range += 1,
                Fate::Detected(hit) => {
                    tally.detected += 1;
                    tally.per_class[hit.class.index()] += 1;
                    hits.push(hit);
                }
            }
        }
        (tally, hits)
    }

    fn pick_source<R: Rng + ?Sized>(&self, rng: &mut R) -> &'a Source {
        let sources = &self.scene.sources;
        if sources.len() == 1 {
            return &sources[0];
        }
        let target = rng.random::<f64>() * self.source_cdf[sources.len() - 1];
        let idx = self.source_cdf.partition_point(|&c| c <= target);
        &sources[idx.min(sources.len() - 1)]
    }

    fn transport<R: Rng + ?Sized>(&self, rng: &mut R) -> Fate {
        let source = self.pick_source(rng);
        let photon = sample_emission(source, self.mpo, self.scene, rng);
        if !photon.is_paraxial() {
            // Steeper than the paraxial cone: crosses a wall at a grazing
            // angle far above θc (checked in Scene::validate).
            return Fate::Wall;
        }
        let depth = self.scene.ls_mm - photon.pos[1];
        let face_x = photon.pos[0] + photon.slope_x * depth;
        let face_z = photon.pos[2] + photon.slope_z * depth;
        let (i, j, u, v) = match pore_entry(face_x, face_z, self.mpo) {
            PoreEntry::Pore { i, j, u, v } => (i, j, u, v),
            PoreEntry::Web => return Fate::Web,
            PoreEntry::MissedPlate => return Fate::MissedPlate,
        };
        let trace = match optics::trace_channel(
            u,
            v,
            photon.slope_x,
            photon.slope_z,
            photon.energy,
            self.mpo,
        ) {
            Ok(t) if t.exited() => t,
            _ => return Fate::Wall,
        };
        if trace.transmission < 1.0 && rng.random::<f64>() >= trace.transmission {
            return Fate::Wall;
        }
        let (x, z) = project_to_detector(&trace, (i, j), self.mpo, self.scene.li_mm);
        let Some((col, row)) = self.detector.pixel_of(x, z) else {
            return Fate::OffDetector;
        };
        let measured = apply_energy_response(photon.energy, self.detector, rng);
        if measured < self.detector.threshold_kev {
            return Fate::BelowThreshold;
        }
        let pos = (measured - self.detector.e_min_kev) / self.detector.e_bin_width_kev;
        if !(pos >= 0.0 && pos < self.detector.n_bins as f64) {
            return Fate::OutOfRange;
        }
        let pixel = row * self.detector.n_x + col;
        Fate::Detected(Hit {
            cube_index: (pixel * self.detector.n_bins + pos as usize) as u32,
            pixel: pixel as u32,
            class: trace.path_class(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cu_scene(ls: f64, li: f64) -> Scene {
        Scene {
            sources: vec![Source::mono_point("Cu", [0.0; 3], 8.0)],
            ls_mm: ls,
            li_mm: li,
        }
    }

    #[test]
    fn solid_angle_limits() {
        // Small patch: area / d².
        let omega = rect_solid_angle(-0.05, 0.05, -0.05, 0.05, 100.0);
        assert_abs_diff_eq!(omega, 0.01 / 10_000.0, epsilon = 1e-12);
        // Infinite plane: half the sphere.
        let big = 1e9;
        assert_abs_diff_eq!(
            rect_solid_angle(-big, big, -big, big, 1.0),
            2.0 * PI,
            epsilon = 1e-6
        );
        // Cube face seen from the centre: 4π / 6.
        assert_abs_diff_eq!(
            rect_solid_angle(-1.0, 1.0, -1.0, 1.0, 1.0),
            4.0 * PI / 6.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn point_source_slopes_stay_on_plate() {
        let scene = cu_scene(25.0, 25.0);
        let mpo = MpoGeometry::reference();
        let mut rng = batch_rng(1, 0);
        for _ in 0..10_000 {
            let p = sample_emission(&scene.sources[0], &mpo, &scene, &mut rng);
            assert!(p.slope_x.abs() <= 10.0 / 25.0 + 1e-12);
            assert!(p.slope_z.abs() <= 10.0 / 25.0 + 1e-12);
            assert_eq!(p.energy, 8.0);
        }
    }

    #[test]
    fn line_fractions_follow_intensity() {
        let source = Source::point(
            "two",
            [0.0; 3],
            vec![
                EmissionLine {
                    energy_kev: 4.5,
                    intensity: 1.0,
                },
                EmissionLine {
                    energy_kev: 8.0,
                    intensity: 3.0,
                },
            ],
        );
        let scene = Scene {
            sources: vec![source.clone()],
            ls_mm: 25.0,
            li_mm: 25.0,
        };
        let mpo = MpoGeometry::reference();
        let mut rng = batch_rng(7, 0);
        let n = 100_000;
        let second = (0..n)
            .filter(|_| sample_emission(&source, &mpo, &scene, &mut rng).energy == 8.0)
            .count();
        assert_abs_diff_eq!(second as f64 / n as f64, 0.75, epsilon = 0.01);
    }

    #[test]
    fn rect_source_is_uniform() {
        let source = Source {
            shape: SourceShape::Rect {
                center: [1.0, 0.0, -2.0],
                width: 4.0,
                height: 2.0,
            },
            lines: vec![EmissionLine {
                energy_kev: 8.0,
                intensity: 1.0,
            }],
            label: "plate".into(),
        };
        let scene = Scene {
            sources: vec![source.clone()],
            ls_mm: 25.0,
            li_mm: 25.0,
        };
        let mpo = MpoGeometry::reference();
        let mut rng = batch_rng(3, 0);
        let n = 50_000;
        let (mut sx, mut sz) = (0.0, 0.0);
        for _ in 0..n {
            let p = sample_emission(&source, &mpo, &scene, &mut rng);
            assert!((p.pos[0] - 1.0).abs() <= 2.0 && (p.pos[2] + 2.0).abs() <= 1.0);
            sx += p.pos[0];
            sz += p.pos[2];
        }
        let sigma_x = 4.0 / 12f64.sqrt();
        let sigma_z = 2.0 / 12f64.sqrt();
        let n = n as f64;
        assert!((sx / n - 1.0).abs() < 3.0 * sigma_x / n.sqrt());
        assert!((sz / n + 2.0).abs() < 3.0 * sigma_z / n.sqrt());
    }

    #[test]
    fn emission_weight_is_plate_solid_angle_fraction() {
        let scene = cu_scene(25.0, 25.0);
        let mpo = MpoGeometry::reference();
        let p = sample_emission(&scene.sources[0], &mpo, &scene, &mut batch_rng(0, 0));
        let expected = rect_solid_angle(-10.0, 10.0, -10.0, 10.0, 25.0) / (4.0 * PI);
        assert_abs_diff_eq!(p.weight, expected, epsilon = 1e-15);
    }

    fn exit(u: f64, slope: f64) -> ChannelTraceResult {
        ChannelTraceResult {
            outcome: optics::TraceOutcome::Exited,
            exit_u: u,
            exit_v: 10.0,
            exit_slope_x: slope,
            exit_slope_z: 0.0,
            n_reflections_x: 0,
            n_reflections_z: 0,
            transmission: 1.0,
        }
    }

    #[test]
    fn projection_is_straight_line() {
        let mpo = MpoGeometry::reference();
        // Pore 40 starts at 990 µm; exit at u = 10 µm is x = 1 mm.
        let (x, z) = project_to_detector(&exit(10.0, 0.0), (40, 0), &mpo, 25.0);
        assert_abs_diff_eq!(x, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(z, 0.0, epsilon = 1e-12);
        let (x, _) = project_to_detector(&exit(10.0, 0.01), (0, 0), &mpo, 25.0);
        assert_abs_diff_eq!(x, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn energy_response() {
        let mut det = DetectorSpec {
            energy_fwhm_kev: 0.0,
            ..DetectorSpec::default()
        };
        let mut rng = batch_rng(11, 0);
        assert_eq!(apply_energy_response(8.04, &det, &mut rng), 8.04);
        det.energy_fwhm_kev = 1.12;
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| apply_energy_response(8.04, &det, &mut rng))
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert_abs_diff_eq!(var.sqrt(), 0.4757, epsilon = 0.002);
    }

    #[test]
    fn pixel_mapping() {
        let det = DetectorSpec::default();
        assert_eq!(det.pixel_of(0.0, 0.0), Some((128, 128)));
        assert_eq!(det.pixel_of(-0.001, -0.001), Some((127, 127)));
        assert_eq!(det.pixel_of(7.1, 0.0), None);
        let (x, z) = det.pixel_center_mm(128, 127);
        assert_abs_diff_eq!(x, 0.0275, epsilon = 1e-12);
        assert_abs_diff_eq!(z, -0.0275, epsilon = 1e-12);
        assert_eq!(det.pixel_of(x, z), Some((128, 127)));
    }

    #[test]
    fn zero_photons_gives_empty_cube() {
        let run = simulate(
            &cu_scene(25.0, 25.0),
            &MpoGeometry::reference(),
            &DetectorSpec::default(),
            0,
            5,
            2,
        )
        .unwrap();
        assert_eq!(run.image.total(), 0);
        assert_eq!(run.tally, Tally::default());
    }

    #[test]
    fn invalid_scene_is_rejected() {
        let mpo = MpoGeometry::reference();
        let det = DetectorSpec::default();
        let scene = cu_scene(0.0, 25.0);
        assert!(matches!(
            simulate(&scene, &mpo, &det, 10, 0, 1),
            Err(SimError::InvalidScene(_))
        ));
        let scene = Scene {
            sources: vec![Source::mono_point("soft", [0.0; 3], 0.5)],
            ls_mm: 25.0,
            li_mm: 25.0,
        };
        assert!(simulate(&scene, &mpo, &det, 10, 0, 1).is_err());
        let scene = Scene {
            sources: vec![],
            ls_mm: 25.0,
            li_mm: 25.0,
        };
        assert!(simulate(&scene, &mpo, &det, 10, 0, 1).is_err());
    }

    #[test]
    fn tallies_balance() {
        let run = simulate(
            &cu_scene(25.0, 25.0),
            &MpoGeometry::reference(),
            &DetectorSpec::default(),
            200_000,
            9,
            2,
        )
        .unwrap();
        let t = run.tally;
        assert_eq!(t.photons, 200_000);
        assert_eq!(
            t.missed_plate
                + t.web_absorbed
                + t.wall_absorbed
                + t.off_detector
                + t.below_threshold
                + t.out_of_range
                + t.detected,
            t.photons
        );
        assert_eq!(t.detected, run.image.total());
        assert_eq!(t.per_class.iter().sum::<u64>(), t.detected);
        assert!(t.detected > 0);
        // Rejection sampling never misses the plate.
        assert_eq!(t.missed_plate, 0);
    }
}
