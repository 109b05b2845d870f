use std::io;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use mpo_xrf::analysis::{
    self, clean_psfs, expected_arm_half_length, expected_direct_half_width, extract_arm_profiles,
    find_psf_center, flat_field_correct, fwhm, gaussian_window, profile_extent,
    resolution_lp_per_mm, AnalysisError, CleanParams, DEFAULT_ARM_BAND_HALF_WIDTH_MM,
    DEFAULT_RESOLUTION_THRESHOLD, DEFAULT_WINDOW_SIGMA_MM,
};
use mpo_xrf::config::ConfigError;
use mpo_xrf::cube::CubeError;
use mpo_xrf::events::{
    apply_calibration, fit_calibration, line_peaks, synthesize_line_events, CalibrationError,
    EventFormatError, EventStream, PixelGains,
};
use mpo_xrf::sim::{simulate as run_simulation, SimError};
use mpo_xrf::{DetectorSpec, LineSet, MpoGeometry, PathClass, RunConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::inputs::{load_cube, load_image, parse_window, write_with, UsageError};

pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<ConfigError>() {
            return if matches!(e, ConfigError::Io { .. }) {
                4
            } else {
                3
            };
        }
        if cause.is::<SimError>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<AnalysisError>() {
            return if matches!(e, AnalysisError::Malformed(_)) {
                4
            } else {
                5
            };
        }
        if let Some(e) = cause.downcast_ref::<CalibrationError>() {
            return match e {
                CalibrationError::Malformed { .. }
                | CalibrationError::Io(_)
                | CalibrationError::Cube(_) => 4,
                _ => 5,
            };
        }
        if cause.is::<CubeError>() || cause.is::<EventFormatError>() || cause.is::<io::Error>() {
            return 4;
        }
    }
    1
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Number of photons; overrides `sim.photons`.
    #[arg(long)]
    photons: Option<u64>,
    /// RNG seed; overrides `sim.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; overrides `sim.jobs`. Output does not depend on it.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output SIC cube.
    #[arg(long)]
    out: PathBuf,
    /// Also write one energy-integrated CSV image per path class here.
    #[arg(long)]
    class_images: Option<PathBuf>,
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.config)?;
    let photons = args.photons.unwrap_or(cfg.sim.photons);
    let seed = args.seed.unwrap_or(cfg.sim.seed);
    let jobs = args.jobs.unwrap_or(cfg.sim.jobs);
    if jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    let run = run_simulation(&cfg.scene, &cfg.mpo, &cfg.detector, photons, seed, jobs)?;
    run.image
        .save(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;

    let t = &run.tally;
    println!("photons traced       {}", t.photons);
    println!("missed plate         {}", t.missed_plate);
    println!("web absorbed         {}", t.web_absorbed);
    println!("wall absorbed        {}", t.wall_absorbed);
    println!("off detector         {}", t.off_detector);
    println!("below threshold      {}", t.below_threshold);
    println!("out of energy range  {}", t.out_of_range);
    println!("detected             {}", t.detected);
    for class in PathClass::ALL {
        println!("  {:<18} {}", class.name(), t.class_count(class));
    }
    println!(
        "wrote {} ({}×{}×{}, seed {seed})",
        args.out.display(),
        run.image.n_x,
        run.image.n_y,
        run.image.n_bins
    );

    if let Some(dir) = args.class_images {
        for class in PathClass::ALL {
            let image = analysis::Image2D::from_counts(
                run.classes.n_x,
                run.classes.n_y,
                run.classes.pitch_um,
                run.classes.class(class),
            );
            let path = dir.join(format!("{}.csv", class.name()));
            write_with(&path, |out| analysis::write_image_csv(out, &image))?;
        }
    }
    Ok(())
}

#[derive(Args)]
pub struct FlatfieldArgs {
    /// Image to correct (SIC cube or image CSV).
    #[arg(long)]
    image: PathBuf,
    /// Flat-field image (SIC cube or image CSV).
    #[arg(long)]
    flat: PathBuf,
    /// Energy window LO:HI keV applied to SIC inputs.
    #[arg(long, value_parser = parse_window)]
    window: Option<(f64, f64)>,
    /// Corrected image CSV.
    #[arg(long)]
    out: PathBuf,
    /// Also write a PGM rendering.
    #[arg(long)]
    pgm: Option<PathBuf>,
}

pub fn flatfield(args: FlatfieldArgs) -> Result<()> {
    let image = load_image(&args.image, args.window)?;
    let flat = load_image(&args.flat, args.window)?;
    let corrected = flat_field_correct(&image, &flat)?;
    let masked = corrected
        .valid
        .as_ref()
        .map_or(0, |v| v.iter().filter(|&&ok| !ok).count());
    write_with(&args.out, |out| analysis::write_image_csv(out, &corrected))?;
    if let Some(pgm) = &args.pgm {
        write_with(pgm, |out| analysis::write_pgm(out, &corrected))?;
    }
    println!("masked pixels        {masked}");
    println!("wrote {}", args.out.display());
    Ok(())
}

#[derive(Args)]
pub struct WindowArgs {
    /// Input SIC cube.
    #[arg(long)]
    cube: PathBuf,
    /// Energy window LO:HI keV; repeatable.
    #[arg(long = "window", value_parser = parse_window, default_values = ["2.5:5.5", "6:9"])]
    windows: Vec<(f64, f64)>,
    /// Output directory.
    #[arg(long)]
    out_dir: PathBuf,
}

pub fn window(args: WindowArgs) -> Result<()> {
    let cube = load_cube(&args.cube)?;
    let stem = args
        .cube
        .file_stem()
        .map_or_else(|| "cube".into(), |s| s.to_string_lossy().into_owned());
    for (lo, hi) in args.windows {
        let w = analysis::energy_window(&cube, lo, hi)?;
        let base = format!("{stem}_{lo}-{hi}keV");
        let pgm = args.out_dir.join(format!("{base}.pgm"));
        let csv = args.out_dir.join(format!("{base}.csv"));
        write_with(&pgm, |out| analysis::write_pgm(out, &w.image))?;
        write_with(&csv, |out| analysis::write_image_csv(out, &w.image))?;
        let note = if w.outside_cube {
            " (outside cube range)"
        } else {
            ""
        };
        println!(
            "{lo}-{hi} keV: {} bins, {} counts -> {}{note}",
            w.bins_summed,
            w.image.sum(),
            pgm.display()
        );
    }
    Ok(())
}

#[derive(Args)]
pub struct PsfArgs {
    /// PSF image (SIC cube or image CSV).
    #[arg(long)]
    image: PathBuf,
    /// Energy window LO:HI keV applied to a SIC input.
    #[arg(long, value_parser = parse_window)]
    window: Option<(f64, f64)>,
    /// Run configuration supplying the MPO, distances and line energy.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sample-to-MPO distance, mm.
    #[arg(long)]
    ls: Option<f64>,
    /// MPO-to-detector distance, mm.
    #[arg(long)]
    li: Option<f64>,
    /// Line energy for the arm model, keV.
    #[arg(long)]
    energy: Option<f64>,
    /// Write `<prefix>_horizontal.csv` and `<prefix>_vertical.csv`.
    #[arg(long)]
    out_prefix: Option<PathBuf>,
}

fn suffixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

pub fn psf(args: PsfArgs) -> Result<()> {
    let image = load_image(&args.image, args.window)?;
    let cfg = args.config.as_deref().map(RunConfig::load).transpose()?;
    let mpo = cfg
        .as_ref()
        .map_or_else(MpoGeometry::reference, |c| c.mpo.clone());
    let ls = args.ls.or(cfg.as_ref().map(|c| c.scene.ls_mm));
    let li = args.li.or(cfg.as_ref().map(|c| c.scene.li_mm));
    let energy = args.energy.or_else(|| {
        cfg.as_ref()
            .and_then(|c| c.scene.sources.first())
            .map(|s| s.lines[0].energy_kev)
    });

    let center = find_psf_center(&image)?;
    let (h, v) = extract_arm_profiles(&image, center)?;
    let pitch = image.pitch_mm();
    println!("center_px            {:.3} {:.3}", center.0, center.1);
    println!(
        "center_mm            {:.4} {:.4}",
        (center.0 + 0.5 - image.n_x as f64 / 2.0) * pitch,
        (center.1 + 0.5 - image.n_y as f64 / 2.0) * pitch
    );
    for profile in [&h, &v] {
        let name = match profile.axis {
            analysis::Axis::Horizontal => "horizontal",
            analysis::Axis::Vertical => "vertical",
        };
        match fwhm(profile) {
            Ok(w) => println!("fwhm_{name:<15} {w:.4} mm"),
            Err(e) => println!("fwhm_{name:<15} unavailable ({e})"),
        }
        match profile_extent(profile, 0.1) {
            Ok(x) => println!("extent10_{name:<11} {x:.4} mm"),
            Err(e) => println!("extent10_{name:<11} unavailable ({e})"),
        }
    }
    match (ls, li) {
        (Some(ls), Some(li)) => {
            if let Some(e) = energy {
                let arm = expected_arm_half_length(e, &mpo.coating, ls, li)?;
                println!("model_arm_half_mm    {arm:.4} ({e} keV)");
            }
            let direct = expected_direct_half_width(&mpo, ls, li);
            println!("model_direct_half_mm {direct:.4}");
        }
        _ => println!("model extents need --ls and --li (or --config)"),
    }
    if let Some(prefix) = &args.out_prefix {
        write_with(&suffixed(prefix, "_horizontal.csv"), |out| {
            analysis::write_profile_csv(out, &h)
        })?;
        write_with(&suffixed(prefix, "_vertical.csv"), |out| {
            analysis::write_profile_csv(out, &v)
        })?;
    }
    Ok(())
}

#[derive(Args)]
pub struct AtfArgs {
    /// PSF image (SIC cube or image CSV).
    #[arg(long)]
    image: PathBuf,
    #[arg(long, value_parser = parse_window)]
    window: Option<(f64, f64)>,
    /// Gaussian window σ around the PSF centre, mm.
    #[arg(long, default_value_t = DEFAULT_WINDOW_SIGMA_MM)]
    sigma: f64,
    /// Fraction of DC defining the resolution limit.
    #[arg(long, default_value_t = DEFAULT_RESOLUTION_THRESHOLD)]
    threshold: f64,
    /// Amplitude spectrum CSV.
    #[arg(long)]
    out: PathBuf,
}

pub fn atf(args: AtfArgs) -> Result<()> {
    let image = load_image(&args.image, args.window)?;
    let center = find_psf_center(&image)?;
    let spectrum = analysis::atf(&gaussian_window(&image, args.sigma, center)?);
    write_with(&args.out, |out| analysis::write_atf_csv(out, &spectrum))?;
    println!("dc                   {}", spectrum.dc());
    report_resolution(resolution_lp_per_mm(&spectrum, args.threshold));
    Ok(())
}

fn report_resolution(result: std::result::Result<f64, AnalysisError>) {
    match result {
        Ok(f) => println!("resolution           {f:.3} lp/mm"),
        Err(e) => println!("resolution           unresolved ({e})"),
    }
}

#[derive(Args)]
pub struct CleanArgs {
    /// PSF images (SIC cubes or image CSVs); repeatable.
    #[arg(long = "image", required = true)]
    images: Vec<PathBuf>,
    #[arg(long, value_parser = parse_window)]
    window: Option<(f64, f64)>,
    #[arg(long, default_value_t = DEFAULT_WINDOW_SIGMA_MM)]
    sigma: f64,
    /// Radius excluded around the centre for the background estimate, mm.
    #[arg(long, default_value_t = 0.2)]
    exclusion: f64,
    /// Half-width of the excluded arm bands, mm.
    #[arg(long, default_value_t = DEFAULT_ARM_BAND_HALF_WIDTH_MM)]
    band: f64,
    /// Radius beyond which the residual background is reported, mm.
    #[arg(long, default_value_t = 1.0)]
    outer: f64,
    #[arg(long, default_value_t = DEFAULT_RESOLUTION_THRESHOLD)]
    threshold: f64,
    /// Idealized PSF CSV.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    pgm: Option<PathBuf>,
    /// Averaged amplitude spectrum CSV.
    #[arg(long)]
    atf_out: Option<PathBuf>,
}

pub fn clean(args: CleanArgs) -> Result<()> {
    let images = args
        .images
        .iter()
        .map(|p| load_image(p, args.window))
        .collect::<Result<Vec<_>>>()?;
    let params = CleanParams {
        window_sigma_mm: args.sigma,
        exclusion_radius_mm: args.exclusion,
        band_half_width_mm: args.band,
        outer_radius_mm: args.outer,
        resolution_threshold: args.threshold,
    };
    let result = clean_psfs(&images, &params)?;
    for ((path, c), bg) in args
        .images
        .iter()
        .zip(&result.centers)
        .zip(&result.raw_backgrounds)
    {
        println!(
            "{}: center {:.2} {:.2}, background {bg:.4e}",
            path.display(),
            c.0,
            c.1
        );
    }
    println!("background_before    {:.4e}", result.background_before);
    println!("background_after     {:.4e}", result.background_after);
    println!("background_ratio     {:.4}", result.background_ratio());
    println!(
        "outer_background     {:.4e} (r > {} mm)",
        result.outer_background, args.outer
    );
    report_resolution(result.resolution_lp_per_mm.clone());
    write_with(&args.out, |out| {
        analysis::write_image_csv(out, &result.idealized)
    })?;
    if let Some(pgm) = &args.pgm {
        write_with(pgm, |out| analysis::write_pgm(out, &result.idealized))?;
    }
    if let Some(path) = &args.atf_out {
        write_with(path, |out| analysis::write_atf_csv(out, &result.mean_atf))?;
    }
    Ok(())
}

#[derive(Args)]
pub struct SynthEventsArgs {
    /// Line energy, keV.
    #[arg(long)]
    line: f64,
    /// Sensor is SIZE × SIZE pixels.
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 2000)]
    per_pixel: usize,
    #[arg(long, default_value_t = 0.04)]
    gain_min: f64,
    #[arg(long, default_value_t = 0.06)]
    gain_max: f64,
    /// Offset b, keV.
    #[arg(long, default_value_t = 0.0)]
    offset: f64,
    /// Energy resolution, keV FWHM.
    #[arg(long, default_value_t = 1.12)]
    fwhm: f64,
    /// Seed for the per-pixel gains; reuse it across lines.
    #[arg(long, default_value_t = 1)]
    gain_seed: u64,
    /// Seed for the energy noise.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output TPXE file.
    #[arg(long)]
    out: PathBuf,
    /// Also write the true response as a calibration CSV.
    #[arg(long)]
    truth_out: Option<PathBuf>,
}

pub fn synth_events(args: SynthEventsArgs) -> Result<()> {
    if args.size == 0 || args.size > 65_536 {
        return Err(usage("--size must lie in 1..=65536"));
    }
    let mut gain_rng = ChaCha8Rng::seed_from_u64(args.gain_seed);
    let truth = if args.gain_min == args.gain_max {
        PixelGains::uniform(args.size, args.size, args.gain_min, args.offset)?
    } else {
        PixelGains::random(
            args.size,
            args.size,
            args.gain_min,
            args.gain_max,
            args.offset,
            &mut gain_rng,
        )?
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let events = synthesize_line_events(args.line, &truth, args.per_pixel, args.fwhm, &mut rng);
    let n = args.size as u32;
    EventStream::new(n, n, events)
        .save(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    if let Some(path) = &args.truth_out {
        let mut map = mpo_xrf::CalibrationMap::identity(args.size, args.size);
        map.gain.clone_from(&truth.gain);
        map.offset.clone_from(&truth.offset);
        map.save(path)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    println!(
        "wrote {} events to {}",
        args.size * args.size * args.per_pixel,
        args.out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct CalibrateArgs {
    /// LABEL=PATH of a single-line TPXE file; one per calibration line.
    #[arg(long = "events", required = true)]
    events: Vec<String>,
    /// Calibration lines as LABEL=keV pairs, e.g. "Ti=4.51,Cu=8.05".
    #[arg(long)]
    lines: Option<String>,
    /// Output calibration CSV.
    #[arg(long)]
    out: PathBuf,
}

pub fn calibrate(args: CalibrateArgs) -> Result<()> {
    let lines = match &args.lines {
        Some(text) => text.parse::<LineSet>().map_err(|e| usage(e.to_string()))?,
        None => LineSet::default(),
    };
    let mut files: Vec<(String, PathBuf)> = Vec::new();
    for spec in &args.events {
        let (label, path) = spec
            .split_once('=')
            .ok_or_else(|| usage(format!("--events expects LABEL=PATH, got {spec:?}")))?;
        if lines.energy_of(label).is_none() {
            return Err(usage(format!("no calibration line named {label:?}")));
        }
        if files.iter().any(|(l, _)| l == label) {
            return Err(usage(format!("line {label} given twice")));
        }
        files.push((label.to_string(), PathBuf::from(path)));
    }
    let missing: Vec<&str> = lines
        .labels()
        .filter(|l| files.iter().all(|(f, _)| f != l))
        .collect();
    if !missing.is_empty() {
        return Err(usage(format!(
            "no event file for line(s): {}",
            missing.join(", ")
        )));
    }

    let mut dims: Option<(u32, u32)> = None;
    let mut peaks = Vec::with_capacity(lines.len());
    for label in lines.labels() {
        let path = &files.iter().find(|(l, _)| l == label).unwrap().1;
        let stream =
            EventStream::load(path).with_context(|| format!("reading {}", path.display()))?;
        let d = (stream.n_x, stream.n_y);
        if dims.is_some_and(|prev| prev != d) {
            return Err(CalibrationError::Shape(format!(
                "{} is {}×{}, other files differ",
                path.display(),
                d.0,
                d.1
            ))
            .into());
        }
        dims = Some(d);
        let found = line_peaks(&stream.events, d.0 as usize, d.1 as usize);
        let located = found.iter().filter(|p| p.is_some()).count();
        println!(
            "{label}: {} events, peaks in {located} pixels",
            stream.events.len()
        );
        peaks.push(found);
    }
    let (n_x, n_y) = dims.expect("at least two lines");
    let cal = fit_calibration(&lines, &peaks, n_x as usize, n_y as usize)?;
    cal.save(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;

    let live: Vec<usize> = (0..cal.dead.len()).filter(|&p| !cal.dead[p]).collect();
    println!("pixels               {}", cal.dead.len());
    println!("dead pixels          {}", cal.dead_count());
    if !live.is_empty() {
        let mean = |v: &[f64]| live.iter().map(|&p| v[p]).sum::<f64>() / live.len() as f64;
        println!("mean gain            {:.6} keV/ToT", mean(&cal.gain));
        println!("mean offset          {:.4} keV", mean(&cal.offset));
        println!("mean residual        {:.4} keV", mean(&cal.residual));
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

#[derive(Args)]
pub struct ApplyCalArgs {
    /// TPXE event file.
    #[arg(long)]
    events: PathBuf,
    /// Calibration CSV.
    #[arg(long)]
    cal: PathBuf,
    /// Output SIC cube.
    #[arg(long)]
    out: PathBuf,
    /// Run configuration whose [detector] section sets pitch and binning.
    #[arg(long)]
    config: Option<PathBuf>,
}

pub fn apply_cal(args: ApplyCalArgs) -> Result<()> {
    let binning = match &args.config {
        Some(path) => RunConfig::load(path)?.detector,
        None => DetectorSpec::default(),
    };
    let stream = EventStream::load(&args.events)
        .with_context(|| format!("reading {}", args.events.display()))?;
    let cal = mpo_xrf::CalibrationMap::load(&args.cal)
        .with_context(|| format!("reading {}", args.cal.display()))?;
    let (cube, stats) = apply_calibration(&stream.events, &cal, &binning)?;
    cube.save(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!("events               {}", stream.events.len());
    println!("binned               {}", stats.binned);
    println!("dead-pixel drops     {}", stats.dead_pixel);
    println!("out of energy range  {}", stats.out_of_range);
    println!("wrote {}", args.out.display());
    Ok(())
}
