//! Analytic channel tracing against an explicit wall-intersection marcher.

use mpo_xrf::optics::{
    critical_angle_deg, trace_channel, Material, MpoGeometry, ReflectivityModel, TraceOutcome,
};
use proptest::prelude::*;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Marched {
    exit: f64,
    exit_slope: f64,
    reflections: u32,
    /// Largest grazing angle met at a wall, degrees (0 without reflections).
    max_grazing_deg: f64,
}

/// Follow one plane of a channel from wall to wall.
fn march(entry: f64, slope: f64, depth: f64, width: f64) -> Marched {
    let (mut pos, mut s, mut remaining) = (entry, slope, depth);
    let mut reflections = 0;
    let mut max_grazing_deg: f64 = 0.0;
    loop {
        let to_wall = if s > 0.0 {
            (width - pos) / s
        } else if s < 0.0 {
            -pos / s
        } else {
            f64::INFINITY
        };
        if to_wall >= remaining {
            pos += s * remaining;
            break;
        }
        remaining -= to_wall;
        pos = if s > 0.0 { width } else { 0.0 };
        max_grazing_deg = max_grazing_deg.max(s.abs().atan().to_degrees());
        s = -s;
        reflections += 1;
    }
    Marched {
        exit: pos,
        exit_slope: s,
        reflections,
        max_grazing_deg,
    }
}

fn theta_c(energy: f64, m: &Material) -> f64 {
    1.651 / energy * (m.z as f64 / m.a * m.rho).sqrt()
}

#[test]
fn analytic_trace_matches_marcher_on_random_rays() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut max_err_mm: f64 = 0.0;
    for i in 0..100_000 {
        let w = rng.random_range(5.0..50.0);
        let t_mm = rng.random_range(0.3..3.0);
        let geom = MpoGeometry::new(
            20.0,
            t_mm,
            w,
            w * 1.25,
            Material::iridium(),
            ReflectivityModel::Binary,
        )
        .unwrap();
        let (u, v) = (rng.random_range(0.0..=w), rng.random_range(0.0..=w));
        let (sx, sz) = (rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
        let energy = rng.random_range(3.0..25.0);

        let got = trace_channel(u, v, sx, sz, energy, &geom).unwrap();
        let depth = t_mm * 1000.0;
        let mx = march(u, sx, depth, w);
        let mz = march(v, sz, depth, w);

        assert_eq!(got.n_reflections_x, mx.reflections, "ray {i}: x count");
        assert_eq!(got.n_reflections_z, mz.reflections, "ray {i}: z count");
        assert_eq!(got.exit_slope_x, mx.exit_slope, "ray {i}");
        assert_eq!(got.exit_slope_z, mz.exit_slope, "ray {i}");
        let err_mm = ((got.exit_u - mx.exit).abs()).max((got.exit_v - mz.exit).abs()) / 1000.0;
        max_err_mm = max_err_mm.max(err_mm);
        assert!(err_mm <= 1e-9, "ray {i}: exit differs by {err_mm} mm");

        let tc = theta_c(energy, &geom.coating);
        let survives = mx.max_grazing_deg <= tc && mz.max_grazing_deg <= tc;
        let expected = if survives {
            TraceOutcome::Exited
        } else {
            TraceOutcome::Absorbed
        };
        assert_eq!(got.outcome, expected, "ray {i}: outcome");
    }
    println!("largest exit deviation {max_err_mm:e} mm");
}

#[test]
fn worked_example() {
    let geom = MpoGeometry::reference();
    let slope = 1.0f64.to_radians().tan();
    let m = march(5.0, slope, 1200.0, 20.0);
    assert_eq!(m.reflections, 1);
    assert!((m.exit - 14.05).abs() < 0.01);
    let got = trace_channel(5.0, 5.0, slope, 0.0, 4.5, &geom).unwrap();
    assert_eq!(got.outcome, TraceOutcome::Exited);
    assert!((got.exit_u - m.exit).abs() < 1e-9);
    let hot = trace_channel(5.0, 5.0, slope, 0.0, 8.0, &geom).unwrap();
    assert_eq!(hot.outcome, TraceOutcome::Absorbed);
}

fn pore() -> impl Strategy<Value = (f64, f64, f64, f64)> {
    (0.0..=20.0f64, 0.0..=20.0f64, -0.1..0.1f64, -0.1..0.1f64)
}

proptest! {
    #[test]
    fn specular_and_parity((u, v, sx, sz) in pore(), energy in 2.0..30.0f64) {
        let r = trace_channel(u, v, sx, sz, energy, &MpoGeometry::reference()).unwrap();
        for (entry, exit, n) in [
            (sx, r.exit_slope_x, r.n_reflections_x),
            (sz, r.exit_slope_z, r.n_reflections_z),
        ] {
            prop_assert_eq!(exit.abs(), entry.abs());
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            prop_assert_eq!(exit, sign * entry);
        }
        prop_assert!((0.0..=20.0).contains(&r.exit_u));
        prop_assert!((0.0..=20.0).contains(&r.exit_v));
    }

    #[test]
    fn planes_are_independent((u, v, sx, _sz) in pore(), energy in 2.0..30.0f64) {
        let geom = MpoGeometry::reference();
        let r = trace_channel(u, v, sx, 0.0, energy, &geom).unwrap();
        prop_assert_eq!(r.exit_v, v);
        prop_assert_eq!(r.n_reflections_z, 0);
        let alone = trace_channel(u, 10.0, sx, 0.0, energy, &geom).unwrap();
        prop_assert_eq!(alone.exit_u, r.exit_u);
        prop_assert_eq!(alone.n_reflections_x, r.n_reflections_x);
    }

    #[test]
    fn survival_is_monotone_in_energy(
        (u, v, sx, sz) in pore(),
        energy in 2.0..30.0f64,
        factor in 0.05..1.0f64,
    ) {
        let geom = MpoGeometry::reference();
        let hot = trace_channel(u, v, sx, sz, energy, &geom).unwrap();
        let cool = trace_channel(u, v, sx, sz, energy * factor, &geom).unwrap();
        if hot.outcome == TraceOutcome::Exited {
            prop_assert_eq!(cool.outcome, TraceOutcome::Exited);
        }
    }

    #[test]
    fn critical_angle_scales_inversely(energy in 0.1..100.0f64, k in 0.01..100.0f64) {
        let ir = Material::iridium();
        let a = critical_angle_deg(energy, &ir).unwrap();
        let b = critical_angle_deg(k * energy, &ir).unwrap();
        prop_assert!((b - a / k).abs() <= 4.0 * f64::EPSILON * (a / k));
    }
}

#[test]
fn doubling_energy_halves_critical_angle_exactly() {
    let ir = Material::iridium();
    for e in [1.0, 4.5, 8.0, 17.3] {
        assert_eq!(
            critical_angle_deg(2.0 * e, &ir).unwrap(),
            critical_angle_deg(e, &ir).unwrap() / 2.0
        );
    }
}
