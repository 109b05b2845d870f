//! Physics of a single square pore.
//!
//! A flat micro pore optic is a plate of square channels whose axes are
//! parallel to the optic axis (lab `y`). Each channel has walls normal to
//! lab `x` and lab `z`, so a ray's motion separates into two independent
//! planar problems. Within one plane the ray bounces between two parallel
//! mirrors a pore width apart; unfolding the mirrors turns that into a
//! straight line over a periodic tiling, which is what [`trace_channel`]
//! evaluates in closed form.
//!
//! Lengths follow the instrument datasheet: plate dimensions in mm, pore
//! width and pitch in µm. Pore-local lateral coordinates (`u` along lab x,
//! `v` along lab z) are in µm and run over `[0, w]`.

use thiserror::Error;

/// Paraxial limit on photon slopes.
pub const MAX_PARAXIAL_SLOPE: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpticsError {
    #[error("photon energy must be positive, got {0} keV")]
    NonPositiveEnergy(f64),
    #[error("invalid material: {0}")]
    InvalidMaterial(String),
    #[error("invalid MPO geometry: {0}")]
    InvalidGeometry(String),
    #[error("entry point ({u}, {v}) µm lies outside the {w} µm pore")]
    EntryOutsidePore { u: f64, v: f64, w: f64 },
    #[error("slope {0} is outside the paraxial regime (|slope| < {MAX_PARAXIAL_SLOPE})")]
    NonParaxial(f64),
    #[error("non-finite slope")]
    NonFiniteSlope,
}

/// Reflective coating material.
#[derive(Debug, Clone, PartialEq)]
pub struct Material {
    pub name: String,
    /// Atomic number.
    pub z: u32,
    /// Atomic mass, g/mol.
    pub a: f64,
    /// Density, g/cm³.
    pub rho: f64,
}

impl Material {
    pub fn new(name: impl Into<String>, z: u32, a: f64, rho: f64) -> Result<Self, OpticsError> {
        let name = name.into();
        if z < 1 {
            return Err(OpticsError::InvalidMaterial(format!(
                "{name}: Z must be >= 1"
            )));
        }
        if !(a > 0.0 && a.is_finite()) {
            return Err(OpticsError::InvalidMaterial(format!(
                "{name}: A must be > 0"
            )));
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(OpticsError::InvalidMaterial(format!(
                "{name}: density must be > 0"
            )));
        }
        let z_over_a = z as f64 / a;
        if z_over_a > 1.0 {
            return Err(OpticsError::InvalidMaterial(format!(
                "{name}: Z/A = {z_over_a:.4} exceeds 1"
            )));
        }
        Ok(Self { name, z, a, rho })
    }

    /// Bulk iridium, the MPO wall coating.
    pub fn iridium() -> Self {
        Self {
            name: "Ir".into(),
            z: 77,
            a: 192.217,
            rho: 22.56,
        }
    }

    pub fn z_over_a(&self) -> f64 {
        self.z as f64 / self.a
    }
}

/// Survival model for a single wall reflection below the critical angle.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ReflectivityModel {
    /// Perfect reflection at or below θc, total absorption above.
    #[default]
    Binary,
    /// Reflection probability `r` at or below θc, absorption above.
    ConstantPerBounce(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpoGeometry {
    pub plate_side_mm: f64,
    pub thickness_mm: f64,
    pub pore_width_um: f64,
    pub pitch_um: f64,
    pub coating: Material,
    pub reflectivity: ReflectivityModel,
}

impl MpoGeometry {
    pub fn new(
        plate_side_mm: f64,
        thickness_mm: f64,
        pore_width_um: f64,
        pitch_um: f64,
        coating: Material,
        reflectivity: ReflectivityModel,
    ) -> Result<Self, OpticsError> {
        let geometry = Self {
            plate_side_mm,
            thickness_mm,
            pore_width_um,
            pitch_um,
            coating,
            reflectivity,
        };
        geometry.validate()?;
        Ok(geometry)
    }

    /// 20 mm square plate, 1.2 mm thick, 20 µm pores on a 25 µm pitch,
    /// iridium-coated walls.
    pub fn reference() -> Self {
        Self {
            plate_side_mm: 20.0,
            thickness_mm: 1.2,
            pore_width_um: 20.0,
            pitch_um: 25.0,
            coating: Material::iridium(),
            reflectivity: ReflectivityModel::Binary,
        }
    }

    pub fn validate(&self) -> Result<(), OpticsError> {
        let bad = |msg: &str| Err(OpticsError::InvalidGeometry(msg.to_string()));
        if !(self.plate_side_mm > 0.0 && self.plate_side_mm.is_finite()) {
            return bad("plate side must be > 0");
        }
        if !(self.thickness_mm > 0.0 && self.thickness_mm.is_finite()) {
            return bad("thickness must be > 0");
        }
        if !(self.pore_width_um > 0.0 && self.pore_width_um < self.pitch_um) {
            return bad("pore width must satisfy 0 < w < pitch");
        }
        if !self.pitch_um.is_finite() {
            return bad("pitch must be finite");
        }
        if let ReflectivityModel::ConstantPerBounce(r) = self.reflectivity {
            if !(0.0..=1.0).contains(&r) {
                return bad("per-bounce reflectivity must lie in [0, 1]");
            }
        }
        Material::new(
            self.coating.name.clone(),
            self.coating.z,
            self.coating.a,
            self.coating.rho,
        )?;
        Ok(())
    }

    /// Geometric open-area fraction `(w / p)²`.
    ///
    /// For the reference plate this is 0.64. The manufacturer quotes 60 %,
    /// which presumably folds in edge and fabrication losses; the pore
    /// dimensions are what the tracer uses.
    pub fn open_area_fraction(&self) -> f64 {
        let ratio = self.pore_width_um / self.pitch_um;
        ratio * ratio
    }

    pub fn thickness_um(&self) -> f64 {
        self.thickness_mm * 1000.0
    }

    /// Largest slope a ray can have and still cross the channel without
    /// touching a wall (`w / t`).
    pub fn acceptance_slope(&self) -> f64 {
        self.pore_width_um / self.thickness_um()
    }
}

/// A photon in the lab frame. The optic axis is `y`; slopes are `dx/dy`
/// and `dz/dy`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Photon {
    pub pos: [f64; 3],
    pub slope_x: f64,
    pub slope_z: f64,
    /// keV.
    pub energy: f64,
    pub weight: f64,
}

impl Photon {
    pub fn new(
        pos: [f64; 3],
        slope_x: f64,
        slope_z: f64,
        energy: f64,
        weight: f64,
    ) -> Result<Self, OpticsError> {
        if !(energy > 0.0) {
            return Err(OpticsError::NonPositiveEnergy(energy));
        }
        for slope in [slope_x, slope_z] {
            if !slope.is_finite() {
                return Err(OpticsError::NonFiniteSlope);
            }
            if slope.abs() >= MAX_PARAXIAL_SLOPE {
                return Err(OpticsError::NonParaxial(slope));
            }
        }
        Ok(Self {
            pos,
            slope_x,
            slope_z,
            energy,
            weight,
        })
    }

    pub fn is_paraxial(&self) -> bool {
        self.slope_x.abs() < MAX_PARAXIAL_SLOPE && self.slope_z.abs() < MAX_PARAXIAL_SLOPE
    }
}

/// Approximate critical angle for total external reflection, in degrees:
/// `θc ≈ 1.651 / E · sqrt(Z/A · ρ)` with `E` in keV and `ρ` in g/cm³.
pub fn critical_angle_deg(energy_kev: f64, material: &Material) -> Result<f64, OpticsError> {
    if !(energy_kev > 0.0) {
        return Err(OpticsError::NonPositiveEnergy(energy_kev));
    }
    Ok(critical_angle_unchecked(energy_kev, material))
}

fn critical_angle_unchecked(energy_kev: f64, material: &Material) -> f64 {
    1.651 / energy_kev * (material.z_over_a() * material.rho).sqrt()
}

/// Survival probability of one wall reflection at the given grazing angle
/// (degrees). The comparison with θc is inclusive.
pub fn grazing_reflectivity(
    grazing_angle_deg: f64,
    energy_kev: f64,
    geometry: &MpoGeometry,
) -> f64 {
    debug_assert!(grazing_angle_deg >= 0.0);
    debug_assert!(energy_kev > 0.0);
    let theta_c = critical_angle_unchecked(energy_kev, &geometry.coating);
    if grazing_angle_deg > theta_c {
        return 0.0;
    }
    match geometry.reflectivity {
        ReflectivityModel::Binary => 1.0,
        ReflectivityModel::ConstantPerBounce(r) => r,
    }
}

/// Where a point on the plate face falls relative to the pore lattice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PoreEntry {
    /// Inside the opening of pore `(i, j)` at pore-local `(u, v)` µm.
    Pore { i: i64, j: i64, u: f64, v: f64 },
    /// On the glass web between openings.
    Web,
    /// Outside the plate.
    MissedPlate,
}

/// Locate a plate-face point (mm, relative to the plate centre) in the pore
/// lattice. Cell `(i, j)` is centred on `(i·p, j·p)` and carries a centred
/// `w × w` opening; the opening edges count as inside.
pub fn pore_entry(plate_x_mm: f64, plate_z_mm: f64, geometry: &MpoGeometry) -> PoreEntry {
    let half = geometry.plate_side_mm / 2.0;
    if !(plate_x_mm.abs() <= half && plate_z_mm.abs() <= half) {
        return PoreEntry::MissedPlate;
    }
    let (i, u) = match locate_in_cell(plate_x_mm * 1000.0, geometry) {
        Some(hit) => hit,
        None => return PoreEntry::Web,
    };
    let (j, v) = match locate_in_cell(plate_z_mm * 1000.0, geometry) {
        Some(hit) => hit,
        None => return PoreEntry::Web,
    };
    PoreEntry::Pore { i, j, u, v }
}

fn locate_in_cell(coord_um: f64, geometry: &MpoGeometry) -> Option<(i64, f64)> {
    let pitch = geometry.pitch_um;
    let half_w = geometry.pore_width_um / 2.0;
    let index = (coord_um / pitch).round();
    let offset = coord_um - index * pitch;
    (offset.abs() <= half_w).then_some((index as i64, offset + half_w))
}

/// Lab-frame coordinate (mm) of the `u = 0` wall of pore index `i`.
pub fn pore_origin_mm(index: i64, geometry: &MpoGeometry) -> f64 {
    (index as f64 * geometry.pitch_um - geometry.pore_width_um / 2.0) / 1000.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceOutcome {
    Absorbed,
    Exited,
}

/// Result of tracing one ray through one channel.
///
/// Exit position, exit slopes and reflection counts describe the unfolded
/// geometric path and are filled in for absorbed rays too; they are only
/// physically meaningful when `outcome` is [`TraceOutcome::Exited`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelTraceResult {
    pub outcome: TraceOutcome,
    pub exit_u: f64,
    pub exit_v: f64,
    pub exit_slope_x: f64,
    pub exit_slope_z: f64,
    pub n_reflections_x: u32,
    pub n_reflections_z: u32,
    /// Product of per-bounce reflectivities; multiplies the photon weight.
    pub transmission: f64,
}

impl ChannelTraceResult {
    pub fn exited(&self) -> bool {
        self.outcome == TraceOutcome::Exited
    }

    pub fn path_class(&self) -> PathClass {
        classify_path(self.n_reflections_x, self.n_reflections_z)
    }
}

/// Geometric passage through one plane of a channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneTrace {
    pub exit: f64,
    pub exit_slope: f64,
    pub reflections: u32,
}

/// Trace one plane of a channel of width `width_um` and depth `depth_um`.
///
/// The unfolded lateral displacement `U = u + depth·slope` lands in tile
/// `k = floor(U / w)`; the ray crossed `|k|` walls, and the exit position is
/// `U` folded back into `[0, w]` by a triangle wave.
pub fn unfold_plane(entry_um: f64, slope: f64, depth_um: f64, width_um: f64) -> PlaneTrace {
    let displaced = entry_um + depth_um * slope;
    let tile = (displaced / width_um).floor();
    let reflections = tile.abs() as u32;
    let (exit, exit_slope) = if reflections.is_multiple_of(2) {
        (displaced - tile * width_um, slope)
    } else {
        ((tile + 1.0) * width_um - displaced, -slope)
    };
    PlaneTrace {
        exit,
        exit_slope,
        reflections,
    }
}

/// Trace a ray entering a pore at `(u, v)` µm with the given slopes.
///
/// Every reflection in a plane has the same grazing angle `atan(|slope|)`,
/// so a plane contributes `R^n` to the transmission. Under the binary
/// model the first super-critical bounce absorbs the ray.
pub fn trace_channel(
    entry_u: f64,
    entry_v: f64,
    slope_x: f64,
    slope_z: f64,
    energy_kev: f64,
    geometry: &MpoGeometry,
) -> Result<ChannelTraceResult, OpticsError> {
    let w = geometry.pore_width_um;
    if !(0.0..=w).contains(&entry_u) || !(0.0..=w).contains(&entry_v) {
        return Err(OpticsError::EntryOutsidePore {
            u: entry_u,
            v: entry_v,
            w,
        });
    }
    if !slope_x.is_finite() || !slope_z.is_finite() {
        return Err(OpticsError::NonFiniteSlope);
    }
    if !(energy_kev > 0.0) {
        return Err(OpticsError::NonPositiveEnergy(energy_kev));
    }

    let depth = geometry.thickness_um();
    let x = unfold_plane(entry_u, slope_x, depth, w);
    let z = unfold_plane(entry_v, slope_z, depth, w);

    let plane_transmission = |slope: f64, n: u32| {
        if n == 0 {
            return 1.0;
        }
        let angle = slope.abs().atan().to_degrees();
        grazing_reflectivity(angle, energy_kev, geometry).powi(n as i32)
    };
    let transmission =
        plane_transmission(slope_x, x.reflections) * plane_transmission(slope_z, z.reflections);

    Ok(ChannelTraceResult {
        outcome: if transmission > 0.0 {
            TraceOutcome::Exited
        } else {
            TraceOutcome::Absorbed
        },
        exit_u: x.exit,
        exit_v: z.exit,
        exit_slope_x: x.exit_slope,
        exit_slope_z: z.exit_slope,
        n_reflections_x: x.reflections,
        n_reflections_z: z.reflections,
        transmission,
    })
}

/// Reflection-parity class of a channel passage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PathClass {
    /// Odd in both planes: lands on the focus.
    CentralFocus,
    /// Focused in z, unfocused in x: lands on the horizontal arm.
    ArmAlongX,
    /// Focused in x, unfocused in z: lands on the vertical arm.
    ArmAlongZ,
    /// Even in both planes with at least one reflection.
    Diffuse,
    /// No reflections.
    Direct,
}

impl PathClass {
    pub const ALL: [PathClass; 5] = [
        PathClass::CentralFocus,
        PathClass::ArmAlongX,
        PathClass::ArmAlongZ,
        PathClass::Diffuse,
        PathClass::Direct,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            PathClass::CentralFocus => "central_focus",
            PathClass::ArmAlongX => "arm_along_x",
            PathClass::ArmAlongZ => "arm_along_z",
            PathClass::Diffuse => "diffuse",
            PathClass::Direct => "direct",
        }
    }
}

pub fn classify_path(n_reflections_x: u32, n_reflections_z: u32) -> PathClass {
    let odd_x = n_reflections_x % 2 == 1;
    let odd_z = n_reflections_z % 2 == 1;
    match (odd_x, odd_z) {
        (true, true) => PathClass::CentralFocus,
        (true, false) => PathClass::ArmAlongZ,
        (false, true) => PathClass::ArmAlongX,
        (false, false) if n_reflections_x == 0 && n_reflections_z == 0 => PathClass::Direct,
        (false, false) => PathClass::Diffuse,
    }
}
