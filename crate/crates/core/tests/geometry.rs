use covertrace::geometry::{refract, trace_through_cover, CoverSurfacePair, CoverTraversal, GeometryError};
use covertrace::simulator::CoverConfig;
use covertrace::{Ray, Vec3};
use proptest::prelude::*;

fn direction(theta: f64, phi: f64) -> Vec3 {
    Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
}

fn desk_cover() -> CoverSurfacePair {
    CoverConfig::default().build().unwrap().unwrap()
}

#[test]
fn air_to_glass_at_45_degrees() {
    let r = direction(std::f64::consts::FRAC_PI_4, 0.0);
    let t = refract(r, Vec3::new(0.0, 0.0, -1.0), 1.0 / 1.5).unwrap();
    assert!((t.x - 0.4714045).abs() < 1e-7);
    assert!(t.y.abs() < 1e-15);
    assert!((t.z - 0.8819171).abs() < 1e-7);
    // Exact oracle: sin θt = sin 45° / 1.5.
    let sin_t = std::f64::consts::FRAC_1_SQRT_2 / 1.5;
    assert!((t.x - sin_t).abs() < 1e-15);
    assert!((t.z - (1.0 - sin_t * sin_t).sqrt()).abs() < 1e-15);
}

#[test]
fn critical_angle_separates_transmission_from_tir() {
    let critical = (1.0f64 / 1.5).asin();
    let n = Vec3::new(0.0, 0.0, -1.0);
    assert!(refract(direction(critical - 1e-6, 0.3), n, 1.5).is_ok());
    assert_eq!(
        refract(direction(critical + 1e-6, 0.3), n, 1.5),
        Err(GeometryError::TotalInternalReflection)
    );
}

#[test]
fn desk_cover_distorts_but_keeps_rays_forward() {
    let cover = desk_cover();
    let mut max_dev = 0.0f64;
    for i in 0..21 {
        for j in 0..21 {
            let d = Vec3::new(-0.5 + 0.05 * i as f64, -0.5 + 0.05 * j as f64, 1.0).normalized();
            let exit = trace_through_cover(&Ray::new(Vec3::ZERO, d), &cover).unwrap().ray();
            assert!(exit.direction.z > 0.8);
            max_dev = max_dev.max(exit.direction.dot(d).min(1.0).acos().to_degrees());
        }
    }
    // The figured outer surface bends rays by a fraction of a degree up to
    // roughly a degree and a half.
    assert!(max_dev > 0.1 && max_dev < 3.0, "{max_dev}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn flat_slab_preserves_direction_and_shifts_laterally(
        theta in 0.0f64..1.2,
        phi in 0.0f64..std::f64::consts::TAU,
        front in 0.01f64..0.2,
        thickness in 1e-4f64..0.01,
        index in 1.05f64..2.0,
    ) {
        let cover = CoverSurfacePair::flat_slab(front, thickness, index, 10.0).unwrap();
        let ray = Ray::new(Vec3::ZERO, direction(theta, phi));
        let exit = trace_through_cover(&ray, &cover).unwrap().ray();
        prop_assert!((exit.direction - ray.direction).max_abs() < 1e-9);
        let theta_t = (theta.sin() / index).asin();
        let expected = thickness * (theta - theta_t).sin() / theta_t.cos();
        let lateral = (exit.origin - ray.origin).cross(ray.direction).norm();
        prop_assert!((lateral - expected).abs() < 1e-9);
        prop_assert!((exit.origin.z - front - thickness).abs() < 1e-12);
    }

    #[test]
    fn figured_shell_exits_on_outer_surface_after_inner_hit(
        theta in 0.0f64..0.6,
        phi in 0.0f64..std::f64::consts::TAU,
        ox in -0.003f64..0.003,
        oy in -0.003f64..0.003,
    ) {
        let cover = desk_cover();
        let ray = Ray::new(Vec3::new(ox, oy, 0.0), direction(theta, phi));
        match trace_through_cover(&ray, &cover).unwrap() {
            CoverTraversal::Refracted { exit, inner, outer } => {
                prop_assert!(cover.outer.implicit(exit.origin).abs() < 1e-9);
                prop_assert!(cover.inner.implicit(inner.point).abs() < 1e-9);
                prop_assert!(inner.distance > 0.0 && inner.distance < outer.distance);
                prop_assert!((exit.direction.norm() - 1.0).abs() < 1e-12);
                // Both refractions keep the ray in the plane of incidence.
                let inside = (outer.point - inner.point).normalized();
                prop_assert!(ray.direction.dot(inner.normal.cross(inside)).abs() < 1e-9);
                prop_assert!(inside.dot(outer.normal.cross(exit.direction)).abs() < 1e-9);
            }
            CoverTraversal::Untouched(r) => {
                prop_assert_eq!(r, ray);
            }
        }
    }

    #[test]
    fn inert_shell_is_a_pure_translation_along_the_ray(
        theta in 0.0f64..0.6,
        phi in 0.0f64..std::f64::consts::TAU,
    ) {
        let cover = desk_cover().with_uniform_index(1.0);
        let ray = Ray::new(Vec3::ZERO, direction(theta, phi));
        let exit = trace_through_cover(&ray, &cover).unwrap().ray();
        prop_assert!((exit.direction - ray.direction).max_abs() < 1e-12);
        prop_assert!((exit.origin - ray.origin).cross(ray.direction).norm() < 1e-12);
    }
}
