use mpo_xrf::analysis::energy_window;
use mpo_xrf::sim::{simulate, DetectorSpec, Scene, Source};
use mpo_xrf::{MpoGeometry, PathClass};

fn point_scene(pos: [f64; 3], energy: f64) -> Scene {
    Scene {
        sources: vec![Source::mono_point("src", pos, energy)],
        ls_mm: 25.0,
        li_mm: 25.0,
    }
}

#[test]
fn worker_count_does_not_change_output() {
    let scene = point_scene([0.3, 0.0, -0.2], 4.5);
    let det = DetectorSpec::default();
    let mpo = MpoGeometry::reference();
    let base = simulate(&scene, &mpo, &det, 300_000, 17, 1).unwrap();
    for workers in [4, 8] {
        let run = simulate(&scene, &mpo, &det, 300_000, 17, workers).unwrap();
        assert_eq!(run, base, "{workers} workers");
    }
    let other_seed = simulate(&scene, &mpo, &det, 300_000, 18, 1).unwrap();
    assert_ne!(other_seed.image.counts, base.image.counts);
}

#[test]
fn counts_are_conserved() {
    let scene = point_scene([0.0, 0.0, 0.0], 8.0);
    let det = DetectorSpec {
        threshold_kev: 7.5,
        ..DetectorSpec::default()
    };
    let run = simulate(&scene, &MpoGeometry::reference(), &det, 500_000, 3, 2).unwrap();
    let t = &run.tally;
    assert_eq!(t.photons, 500_000);
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
    assert_eq!(run.image.total(), t.detected);
    assert_eq!(t.per_class.iter().sum::<u64>(), t.detected);
    assert!(t.below_threshold > 0);
    assert!(run.image.total() < 500_000);
}

#[test]
fn zero_photons_gives_empty_cube() {
    let run = simulate(
        &point_scene([0.0; 3], 8.0),
        &MpoGeometry::reference(),
        &DetectorSpec::default(),
        0,
        1,
        1,
    )
    .unwrap();
    assert_eq!(run.image.total(), 0);
    assert_eq!(run.image.counts.len(), 256 * 256 * 100);
}

/// For an on-axis source the optic axis meets the detector on the corner
/// between pixels 127 and 128, so x ↔ −x maps column c to 255 − c.
#[test]
fn on_axis_image_is_mirror_symmetric() {
    let det = DetectorSpec::default();
    let run = simulate(
        &point_scene([0.0; 3], 4.5),
        &MpoGeometry::reference(),
        &det,
        4_000_000,
        5,
        1,
    )
    .unwrap();
    let img = energy_window(&run.image, 0.0, 25.0).unwrap().image;
    let n = det.n_x;
    for flip_x in [true, false] {
        let (mut chi2, mut var, mut dof) = (0.0, 0.0, 0usize);
        for y in 0..n {
            for x in 0..n {
                let (mx, my) = if flip_x {
                    (n - 1 - x, y)
                } else {
                    (x, n - 1 - y)
                };
                let first = if flip_x { x < mx } else { y < my };
                if !first {
                    continue;
                }
                let (a, b) = (img.get(x, y), img.get(mx, my));
                let total = a + b;
                if total > 0.0 {
                    chi2 += (a - b).powi(2) / total;
                    var += 2.0 - 2.0 / total;
                    dof += 1;
                }
            }
        }
        assert!(dof > 100);
        let z = (chi2 - dof as f64) / var.sqrt();
        assert!(
            z.abs() < 5.0,
            "flip_x={flip_x}: chi2 {chi2:.1} over {dof} pairs (z = {z:.2})"
        );
    }
}

/// A single reflection at depth y_r sends a ray of slope s to
/// x_s + s(2 y_r − y_d), so with L_s = L_i the focus stays within |s|·t of
/// the source. Cu cannot reflect twice in the reference pores, so every
/// central-focus hit falls in the pixel under the source.
#[test]
fn central_focus_lands_under_the_source() {
    let det = DetectorSpec::default();
    let (px, pz) = det.pixel_center_mm(128, 128);
    let run = simulate(
        &point_scene([px, 0.0, pz], 8.0),
        &MpoGeometry::reference(),
        &det,
        3_000_000,
        9,
        1,
    )
    .unwrap();
    let focus = run.classes.class(PathClass::CentralFocus);
    let total: u64 = focus.iter().sum();
    assert!(total > 50);
    assert_eq!(focus[128 * det.n_x + 128], total);
    assert_eq!(run.tally.class_count(PathClass::Diffuse), 0);
}
