use mpo_xrf::events::{
    apply_calibration, fit_calibration, line_peaks, synthesize_line_events, LineSet, PixelGains,
};
use mpo_xrf::sim::{DetectorSpec, FWHM_PER_SIGMA};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SIZE: usize = 16;
const PER_PIXEL: usize = 2000;
const FWHM: f64 = 1.12;

/// synthesize → peak-find → fit → apply on a small sensor.
#[test]
fn closed_loop_recovers_line_energies() {
    let lines = LineSet::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let truth = PixelGains::random(SIZE, SIZE, 0.04, 0.06, 0.3, &mut rng).unwrap();
    let per_line: Vec<_> = lines
        .energies()
        .map(|e| synthesize_line_events(e, &truth, PER_PIXEL, FWHM, &mut rng))
        .collect();
    let peaks: Vec<_> = per_line
        .iter()
        .map(|ev| line_peaks(ev, SIZE, SIZE))
        .collect();
    let cal = fit_calibration(&lines, &peaks, SIZE, SIZE).unwrap();
    assert_eq!(cal.dead_count(), 0);

    let rel_rms = (cal
        .gain
        .iter()
        .zip(&truth.gain)
        .map(|(g, t)| ((g - t) / t).powi(2))
        .sum::<f64>()
        / cal.gain.len() as f64)
        .sqrt();
    assert!(rel_rms < 0.01, "gain error {rel_rms}");

    let binning = DetectorSpec {
        n_x: SIZE,
        n_y: SIZE,
        e_bin_width_kev: 0.05,
        n_bins: 600,
        ..DetectorSpec::default()
    };
    let sigma = FWHM / FWHM_PER_SIGMA;
    for ((label, energy), events) in lines.iter().zip(&per_line) {
        let (cube, stats) = apply_calibration(events, &cal, &binning).unwrap();
        assert_eq!(stats.dead_pixel, 0);
        // Mean calibrated energy, which has statistical error σ/√N.
        let spectrum = cube.total_spectrum();
        let n: u64 = spectrum.iter().sum();
        let mean = spectrum
            .iter()
            .enumerate()
            .map(|(b, &c)| cube.bin_center(b) * c as f64)
            .sum::<f64>()
            / n as f64;
        let stat = sigma / (n as f64).sqrt();
        // Per-pixel fit error and 0.05 keV binning add a small systematic.
        let tolerance = 2.0 * stat + 0.02;
        assert!(
            (mean - energy).abs() < tolerance,
            "{label}: mean {mean:.4} keV vs {energy} (±{tolerance:.4})"
        );
    }
}

#[test]
fn single_line_pixels_are_dead() {
    let lines: LineSet = "Ti=4.51,Cu=8.05".parse().unwrap();
    let truth = PixelGains::uniform(2, 1, 0.05, 0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ti = synthesize_line_events(4.51, &truth, 200, FWHM, &mut rng);
    let cu: Vec<_> = synthesize_line_events(8.05, &truth, 200, FWHM, &mut rng)
        .into_iter()
        .filter(|e| e.x == 0)
        .collect();
    let peaks = vec![line_peaks(&ti, 2, 1), line_peaks(&cu, 2, 1)];
    let cal = fit_calibration(&lines, &peaks, 2, 1).unwrap();
    assert_eq!(cal.dead, vec![false, true]);
}

proptest! {
    /// Scaling every peak ToT by k scales the gain by 1/k and leaves the
    /// calibrated energies unchanged.
    #[test]
    fn fit_is_invariant_under_tot_scaling(
        gain in 0.01..0.2f64,
        offset in -1.0..1.0f64,
        jitter in proptest::collection::vec(-2.0..2.0f64, 5),
        k in 0.1..10.0f64,
    ) {
        let lines = LineSet::default();
        let peaks: Vec<Vec<Option<f64>>> = lines
            .energies()
            .zip(&jitter)
            .map(|(e, j)| vec![Some((e - offset) / gain + j)])
            .collect();
        let scaled: Vec<Vec<Option<f64>>> = peaks
            .iter()
            .map(|p| vec![p[0].map(|t| t * k)])
            .collect();
        let a = fit_calibration(&lines, &peaks, 1, 1).unwrap();
        let b = fit_calibration(&lines, &scaled, 1, 1).unwrap();
        prop_assert!((b.gain[0] * k - a.gain[0]).abs() <= 1e-9 * a.gain[0]);
        for p in &peaks {
            let t = p[0].unwrap();
            let ea = a.gain[0] * t + a.offset[0];
            let eb = b.gain[0] * (t * k) + b.offset[0];
            prop_assert!((ea - eb).abs() < 1e-9);
        }
        prop_assert!((a.residual[0] - b.residual[0]).abs() < 1e-9);
    }
}
