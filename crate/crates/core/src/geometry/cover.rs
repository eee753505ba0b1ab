use serde::{Deserialize, Serialize};

use super::{intersect, refract, Figure, GeometryError, ParametricSurface, Ray, SurfaceHit};
use crate::vec3::Vec3;

/// Ground-truth two-surface refractive cover.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverSurfacePair {
    pub inner: ParametricSurface,
    pub outer: ParametricSurface,
    pub index_inside: f64,
    pub index_outside: f64,
    /// Maximum lateral distance of the inner hit from the inner surface axis.
    pub aperture_radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoverTraversal {
    /// Ray refracted at both surfaces; `exit` starts on the outer surface.
    Refracted {
        exit: Ray,
        inner: SurfaceHit,
        outer: SurfaceHit,
    },
    /// Ray outside the aperture, returned unchanged.
    Untouched(Ray),
}

impl CoverTraversal {
    pub fn ray(&self) -> Ray {
        match self {
            CoverTraversal::Refracted { exit, .. } => *exit,
            CoverTraversal::Untouched(r) => *r,
        }
    }

    pub fn is_untouched(&self) -> bool {
        matches!(self, CoverTraversal::Untouched(_))
    }
}

impl CoverSurfacePair {
    pub fn new(
        inner: ParametricSurface,
        outer: ParametricSurface,
        index_inside: f64,
        index_outside: f64,
        aperture_radius: f64,
    ) -> Result<Self, GeometryError> {
        let cover = Self {
            inner,
            outer,
            index_inside,
            index_outside,
            aperture_radius,
        };
        cover.validate()?;
        Ok(cover)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.index_inside > 0.0 && self.index_outside > 0.0) {
            return Err(GeometryError::InvalidInput(format!(
                "refractive indices must be positive ({}, {})",
                self.index_inside, self.index_outside
            )));
        }
        if !(self.aperture_radius > 0.0) {
            return Err(GeometryError::InvalidInput("aperture radius must be positive".into()));
        }
        self.inner.validate()?;
        self.outer.validate()
    }

    /// Parallel flat slab in front of the origin looking down +z.
    pub fn flat_slab(
        front_z: f64,
        thickness: f64,
        index_inside: f64,
        aperture_radius: f64,
    ) -> Result<Self, GeometryError> {
        let n = Vec3::new(0.0, 0.0, -1.0);
        Self::new(
            ParametricSurface::plane(Vec3::new(0.0, 0.0, front_z), n),
            ParametricSurface::plane(Vec3::new(0.0, 0.0, front_z + thickness), n),
            index_inside,
            1.0,
            aperture_radius,
        )
    }

    /// Concentric spherical shell on the +z axis; the sphere center sits at
    /// `center_z` and the inner radius is `radius`. The figure perturbs the
    /// outer surface.
    pub fn spherical_shell(
        center_z: f64,
        radius: f64,
        thickness: f64,
        index_inside: f64,
        aperture_radius: f64,
        outer_figure: Figure,
    ) -> Result<Self, GeometryError> {
        let center = Vec3::new(0.0, 0.0, center_z);
        Self::new(
            ParametricSurface::sphere(center, radius, Vec3::Z),
            ParametricSurface::sphere(center, radius + thickness, Vec3::Z).with_figure(outer_figure)?,
            index_inside,
            1.0,
            aperture_radius,
        )
    }

    /// Same surfaces with both indices set to `index`, which makes the cover
    /// optically inert.
    pub fn with_uniform_index(mut self, index: f64) -> Self {
        self.index_inside = index;
        self.index_outside = index;
        self
    }
}

/// Traces a ray through both cover surfaces.
pub fn trace_through_cover(ray: &Ray, cover: &CoverSurfacePair) -> Result<CoverTraversal, GeometryError> {
    if !ray.is_valid() {
        return Err(GeometryError::InvalidInput("ray direction must be unit".into()));
    }
    let inner = match intersect(ray, &cover.inner) {
        Ok(hit) => hit,
        Err(GeometryError::Miss) => return Ok(CoverTraversal::Untouched(*ray)),
        Err(e) => return Err(e),
    };
    if cover.inner.lateral_distance(inner.point) > cover.aperture_radius {
        return Ok(CoverTraversal::Untouched(*ray));
    }
    let inside_dir = refract(
        ray.direction,
        inner.normal,
        cover.index_outside / cover.index_inside,
    )?;
    let inside = Ray {
        origin: inner.point,
        direction: inside_dir,
    };
    let to_outer = intersect(&inside, &cover.outer)?;
    let exit_dir = refract(
        inside_dir,
        to_outer.normal,
        cover.index_inside / cover.index_outside,
    )?;
    let outer = SurfaceHit {
        distance: inner.distance + to_outer.distance,
        ..to_outer
    };
    Ok(CoverTraversal::Refracted {
        exit: Ray {
            origin: to_outer.point,
            direction: exit_dir,
        },
        inner,
        outer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BicubicFigure;

    fn lateral_offset(entry: &Ray, exit: &Ray) -> f64 {
        (exit.origin - entry.origin).cross(entry.direction).norm()
    }

    #[test]
    fn inert_cover_keeps_direction() {
        let cover = CoverSurfacePair::spherical_shell(-0.01, 0.06, 0.003, 1.49, 0.05, Figure::Flat)
            .unwrap()
            .with_uniform_index(1.0);
        let ray = Ray::new(Vec3::ZERO, Vec3::new(0.2, -0.1, 1.0));
        let t = trace_through_cover(&ray, &cover).unwrap();
        let exit = t.ray();
        assert!((exit.direction - ray.direction).max_abs() < 1e-15);
        assert!(cover.outer.implicit(exit.origin).abs() < 1e-12);
    }

    #[test]
    fn slab_displacement_at_reference_configuration() {
        let cover = CoverSurfacePair::flat_slab(0.05, 0.003, 1.5, 1.0).unwrap();
        let ray = Ray::new(Vec3::ZERO, Vec3::new(1.0, 0.0, 1.0));
        let exit = trace_through_cover(&ray, &cover).unwrap().ray();
        assert!((exit.direction - ray.direction).max_abs() < 1e-12);
        let theta_i = std::f64::consts::FRAC_PI_4;
        let theta_t = (theta_i.sin() / 1.5).asin();
        let expected = 0.003 * (theta_i - theta_t).sin() / theta_t.cos();
        assert!((lateral_offset(&ray, &exit) - expected).abs() < 1e-12);
        assert!((expected - 0.0009875).abs() < 1e-7);
    }

    #[test]
    fn rays_outside_aperture_are_untouched() {
        let cover = CoverSurfacePair::flat_slab(0.05, 0.003, 1.5, 0.01).unwrap();
        let ray = Ray::new(Vec3::ZERO, Vec3::new(1.0, 0.0, 1.0));
        assert_eq!(
            trace_through_cover(&ray, &cover).unwrap(),
            CoverTraversal::Untouched(ray)
        );
        let away = Ray::new(Vec3::ZERO, Vec3::new(0.0, 0.0, -1.0));
        assert!(trace_through_cover(&away, &cover).unwrap().is_untouched());
    }

    #[test]
    fn perturbed_shell_orders_hits_and_lands_on_outer_surface() {
        let fig = Figure::Bicubic(BicubicFigure::random(0.07, 8, 5e-4, 5));
        let cover = CoverSurfacePair::spherical_shell(-0.01, 0.06, 0.003, 1.49, 0.06, fig).unwrap();
        for i in 0..40 {
            let a = -0.6 + 0.03 * i as f64;
            let ray = Ray::new(Vec3::ZERO, Vec3::new(a, 0.5 * a * a - 0.1, 1.0));
            match trace_through_cover(&ray, &cover).unwrap() {
                CoverTraversal::Refracted { exit, inner, outer } => {
                    assert!(inner.distance < outer.distance);
                    assert!(cover.outer.implicit(exit.origin).abs() < 1e-9);
                    assert!((exit.direction.norm() - 1.0).abs() < 1e-12);
                }
                CoverTraversal::Untouched(_) => panic!("ray {i} should cross the cover"),
            }
        }
    }

    #[test]
    fn invalid_indices_are_rejected() {
        assert!(CoverSurfacePair::flat_slab(0.05, 0.003, 0.0, 1.0).is_err());
    }
}
