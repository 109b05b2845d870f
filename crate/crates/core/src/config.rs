//! TOML run configuration.
//!
//! ```toml
//! [mpo]
//! plate_side_mm = 20.0
//! thickness_mm = 1.2
//! pore_width_um = 20.0
//! pitch_um = 25.0
//! # reflectivity_per_bounce = 0.9   # omit for binary reflectivity
//! [mpo.coating]
//! name = "Ir"
//! z = 77
//! a = 192.217          # g/mol
//! rho = 22.56          # g/cm³
//!
//! [detector]
//! n_x = 256
//! n_y = 256
//! pitch_um = 55.0
//! energy_fwhm_kev = 1.12
//! threshold_kev = 2.0
//! e_min_kev = 0.0
//! e_bin_width_kev = 0.25
//! n_bins = 100
//!
//! [scene]
//! ls_mm = 25.0
//! li_mm = 25.0
//! [[scene.source]]
//! label = "Cu"
//! kind = "point"                 # or "rect" with width_mm / height_mm
//! position_mm = [0.0275, 0.0, 0.0275]
//! lines = [{ energy_kev = 8.0, intensity = 1.0 }]
//!
//! [sim]
//! photons = 10000000
//! seed = 1
//! jobs = 1
//!
//! [analysis]
//! window_sigma_mm = 1.5
//! resolution_threshold = 0.1
//! arm_band_half_width_mm = 0.2
//! background_exclusion_mm = 0.2
//! windows_kev = [[2.5, 5.5], [6.0, 9.0]]
//! ```
//!
//! Every section except `[scene]` may be omitted, as may any key with a
//! default. Unknown keys are rejected.

use std::fs;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::analysis::{
    DEFAULT_ARM_BAND_HALF_WIDTH_MM, DEFAULT_RESOLUTION_THRESHOLD, DEFAULT_WINDOW_SIGMA_MM,
};
use crate::optics::{Material, MpoGeometry, OpticsError, ReflectivityModel};
use crate::sim::{DetectorSpec, EmissionLine, Scene, SimError, Source, SourceShape};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read {path}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl From<SimError> for ConfigError {
    fn from(e: SimError) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

impl From<OpticsError> for ConfigError {
    fn from(e: OpticsError) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSettings {
    pub photons: u64,
    pub seed: u64,
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSettings {
    pub window_sigma_mm: f64,
    pub resolution_threshold: f64,
    pub arm_band_half_width_mm: f64,
    pub background_exclusion_mm: f64,
    pub windows_kev: Vec<(f64, f64)>,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            window_sigma_mm: DEFAULT_WINDOW_SIGMA_MM,
            resolution_threshold: DEFAULT_RESOLUTION_THRESHOLD,
            arm_band_half_width_mm: DEFAULT_ARM_BAND_HALF_WIDTH_MM,
            background_exclusion_mm: 0.2,
            windows_kev: vec![(2.5, 5.5), (6.0, 9.0)],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mpo: MpoGeometry,
    pub detector: DetectorSpec,
    pub scene: Scene,
    pub sim: SimSettings,
    pub analysis: AnalysisSettings,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        raw.into_config()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            ConfigError::Parse(msg) => ConfigError::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    mpo: RawMpo,
    #[serde(default)]
    detector: RawDetector,
    scene: RawScene,
    #[serde(default)]
    sim: RawSim,
    #[serde(default)]
    analysis: RawAnalysis,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawMpo {
    plate_side_mm: f64,
    thickness_mm: f64,
    pore_width_um: f64,
    pitch_um: f64,
    reflectivity_per_bounce: Option<f64>,
    coating: RawMaterial,
}

impl Default for RawMpo {
    fn default() -> Self {
        let r = MpoGeometry::reference();
        Self {
            plate_side_mm: r.plate_side_mm,
            thickness_mm: r.thickness_mm,
            pore_width_um: r.pore_width_um,
            pitch_um: r.pitch_um,
            reflectivity_per_bounce: None,
            coating: RawMaterial::default(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMaterial {
    name: String,
    z: u32,
    a: f64,
    rho: f64,
}

impl Default for RawMaterial {
    fn default() -> Self {
        let ir = Material::iridium();
        Self {
            name: ir.name,
            z: ir.z,
            a: ir.a,
            rho: ir.rho,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawDetector {
    n_x: usize,
    n_y: usize,
    pitch_um: f64,
    energy_fwhm_kev: f64,
    threshold_kev: f64,
    e_min_kev: f64,
    e_bin_width_kev: f64,
    n_bins: usize,
}

impl Default for RawDetector {
    fn default() -> Self {
        let d = DetectorSpec::default();
        Self {
            n_x: d.n_x,
            n_y: d.n_y,
            pitch_um: d.pitch_um,
            energy_fwhm_kev: d.energy_fwhm_kev,
            threshold_kev: d.threshold_kev,
            e_min_kev: d.e_min_kev,
            e_bin_width_kev: d.e_bin_width_kev,
            n_bins: d.n_bins,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScene {
    ls_mm: f64,
    li_mm: f64,
    #[serde(default)]
    source: Vec<RawSource>,
}

#[derive(Deserialize, Clone, Copy, PartialEq)]
#[serde(rename_all = "lowercase")]
enum SourceKind {
    Point,
    Rect,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSource {
    label: String,
    kind: SourceKind,
    position_mm: [f64; 3],
    width_mm: Option<f64>,
    height_mm: Option<f64>,
    lines: Vec<RawLine>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLine {
    energy_kev: f64,
    #[serde(default = "unit")]
    intensity: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawSim {
    photons: u64,
    seed: u64,
    jobs: usize,
}

impl Default for RawSim {
    fn default() -> Self {
        Self {
            photons: 1_000_000,
            seed: 1,
            jobs: 1,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawAnalysis {
    window_sigma_mm: f64,
    resolution_threshold: f64,
    arm_band_half_width_mm: f64,
    background_exclusion_mm: f64,
    windows_kev: Vec<[f64; 2]>,
}

impl Default for RawAnalysis {
    fn default() -> Self {
        let a = AnalysisSettings::default();
        Self {
            window_sigma_mm: a.window_sigma_mm,
            resolution_threshold: a.resolution_threshold,
            arm_band_half_width_mm: a.arm_band_half_width_mm,
            background_exclusion_mm: a.background_exclusion_mm,
            windows_kev: a.windows_kev.iter().map(|&(lo, hi)| [lo, hi]).collect(),
        }
    }
}

impl RawSource {
    fn into_source(self) -> Result<Source, ConfigError> {
        let shape = match (self.kind, self.width_mm, self.height_mm) {
            (SourceKind::Point, None, None) => SourceShape::Point {
                pos: self.position_mm,
            },
            (SourceKind::Point, _, _) => {
                return Err(ConfigError::Invalid(format!(
                    "source {}: point sources take no width_mm/height_mm",
                    self.label
                )))
            }
            (SourceKind::Rect, Some(width), Some(height)) => SourceShape::Rect {
                center: self.position_mm,
                width,
                height,
            },
            (SourceKind::Rect, _, _) => {
                return Err(ConfigError::Invalid(format!(
                    "source {}: rect sources need width_mm and height_mm",
                    self.label
                )))
            }
        };
        Ok(Source {
            shape,
            lines: self
                .lines
                .into_iter()
                .map(|l| EmissionLine {
                    energy_kev: l.energy_kev,
                    intensity: l.intensity,
                })
                .collect(),
            label: self.label,
        })
    }
}

impl RawConfig {
    fn into_config(self) -> Result<RunConfig, ConfigError> {
        let m = self.mpo;
        let coating = Material::new(m.coating.name, m.coating.z, m.coating.a, m.coating.rho)?;
        let reflectivity = match m.reflectivity_per_bounce {
            None => ReflectivityModel::Binary,
            Some(r) => ReflectivityModel::ConstantPerBounce(r),
        };
        let mpo = MpoGeometry::new(
            m.plate_side_mm,
            m.thickness_mm,
            m.pore_width_um,
            m.pitch_um,
            coating,
            reflectivity,
        )?;

        let d = self.detector;
        let detector = DetectorSpec {
            n_x: d.n_x,
            n_y: d.n_y,
            pitch_um: d.pitch_um,
            energy_fwhm_kev: d.energy_fwhm_kev,
            threshold_kev: d.threshold_kev,
            e_min_kev: d.e_min_kev,
            e_bin_width_kev: d.e_bin_width_kev,
            n_bins: d.n_bins,
        };
        detector.validate()?;

        let scene = Scene {
            sources: self
                .scene
                .source
                .into_iter()
                .map(RawSource::into_source)
                .collect::<Result<_, _>>()?,
            ls_mm: self.scene.ls_mm,
            li_mm: self.scene.li_mm,
        };
        scene.validate(&mpo)?;

        if self.sim.jobs == 0 {
            return Err(ConfigError::Invalid("sim.jobs must be at least 1".into()));
        }
        let sim = SimSettings {
            photons: self.sim.photons,
            seed: self.sim.seed,
            jobs: self.sim.jobs,
        };

        let a = self.analysis;
        for (key, value) in [
            ("window_sigma_mm", a.window_sigma_mm),
            ("resolution_threshold", a.resolution_threshold),
            ("arm_band_half_width_mm", a.arm_band_half_width_mm),
            ("background_exclusion_mm", a.background_exclusion_mm),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ConfigError::Invalid(format!(
                    "analysis.{key} must be positive"
                )));
            }
        }
        if let Some([lo, hi]) = a.windows_kev.iter().find(|[lo, hi]| !(lo < hi)) {
            return Err(ConfigError::Invalid(format!(
                "energy window [{lo}, {hi}) is empty"
            )));
        }
        let analysis = AnalysisSettings {
            window_sigma_mm: a.window_sigma_mm,
            resolution_threshold: a.resolution_threshold,
            arm_band_half_width_mm: a.arm_band_half_width_mm,
            background_exclusion_mm: a.background_exclusion_mm,
            windows_kev: a.windows_kev.into_iter().map(|[lo, hi]| (lo, hi)).collect(),
        };

        Ok(RunConfig {
            mpo,
            detector,
            scene,
            sim,
            analysis,
        })
    }
}
