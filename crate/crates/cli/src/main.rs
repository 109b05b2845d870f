//! `mpoxrf`: simulation, calibration and PSF analysis for MPO fluorescence
//! imaging.
//!
//! Exit status:
//!
//! | code | meaning                                   |
//! |------|-------------------------------------------|
//! | 0    | success                                   |
//! | 1    | unexpected internal failure               |
//! | 2    | invalid command line                      |
//! | 3    | configuration error                       |
//! | 4    | input/output or file-format error         |
//! | 5    | analysis error (no peak, bad calibration) |

mod commands;
mod inputs;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{
    ApplyCalArgs, AtfArgs, CalibrateArgs, CleanArgs, FlatfieldArgs, PsfArgs, SimulateArgs,
    SynthEventsArgs, WindowArgs,
};

#[derive(Parser)]
#[command(
    name = "mpoxrf",
    version,
    about = "MPO X-ray fluorescence imaging toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Trace photons through the MPO and write a SIC cube.
    Simulate(SimulateArgs),
    /// Divide an image by a flat-field image.
    Flatfield(FlatfieldArgs),
    /// Sum energy windows of a cube into PGM and CSV images.
    Window(WindowArgs),
    /// Locate a PSF, extract its arm profiles and compare with the models.
    Psf(PsfArgs),
    /// Amplitude spectrum of a windowed PSF.
    Atf(AtfArgs),
    /// Average PSF spectra and reconstruct a zero-phase PSF.
    Clean(CleanArgs),
    /// Generate single-line calibration events for a known response.
    SynthEvents(SynthEventsArgs),
    /// Fit per-pixel ToT calibration from single-line event files.
    Calibrate(CalibrateArgs),
    /// Apply a calibration map to events and write a SIC cube.
    ApplyCal(ApplyCalArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Flatfield(a) => commands::flatfield(a),
        Command::Window(a) => commands::window(a),
        Command::Psf(a) => commands::psf(a),
        Command::Atf(a) => commands::atf(a),
        Command::Clean(a) => commands::clean(a),
        Command::SynthEvents(a) => commands::synth_events(a),
        Command::Calibrate(a) => commands::calibrate(a),
        Command::ApplyCal(a) => commands::apply_cal(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(commands::exit_code(&err))
        }
    }
}
