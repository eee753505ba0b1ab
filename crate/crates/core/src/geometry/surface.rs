use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GeometryError, Ray, SurfaceHit};
use crate::vec3::Vec3;

const MIN_DISTANCE: f64 = 1e-9;
const NEWTON_TOLERANCE: f64 = 1e-10;
const NEWTON_MAX_ITERS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SurfaceBase {
    Plane { point: Vec3, normal: Vec3 },
    SphericalCap { center: Vec3, radius: f64, axis: Vec3 },
}

/// Smooth height perturbation over the surface's lateral coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Figure {
    Flat,
    Bicubic(BicubicFigure),
}

/// Uniform cubic B-spline heightfield on a square control grid spanning
/// `[-half_extent, half_extent]^2`. Controls beyond the grid repeat the edge
/// value, so the field is C2 everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BicubicFigure {
    pub half_extent: f64,
    pub nodes: usize,
    /// Control heights in meters, `heights[iv * nodes + iu]`.
    pub heights: Vec<f64>,
}

fn bspline_basis(f: f64) -> ([f64; 4], [f64; 4]) {
    let g = 1.0 - f;
    let f2 = f * f;
    let f3 = f2 * f;
    let w = [
        g * g * g / 6.0,
        (3.0 * f3 - 6.0 * f2 + 4.0) / 6.0,
        (-3.0 * f3 + 3.0 * f2 + 3.0 * f + 1.0) / 6.0,
        f3 / 6.0,
    ];
    let dw = [
        -g * g / 2.0,
        (3.0 * f2 - 4.0 * f) / 2.0,
        (-3.0 * f2 + 2.0 * f + 1.0) / 2.0,
        f2 / 2.0,
    ];
    (w, dw)
}

impl BicubicFigure {
    /// Control heights drawn uniformly from `[-amplitude, amplitude]`.
    pub fn random(half_extent: f64, nodes: usize, amplitude: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let heights = (0..nodes * nodes)
            .map(|_| rng.gen_range(-amplitude..=amplitude))
            .collect();
        Self {
            half_extent,
            nodes,
            heights,
        }
    }

    fn spacing(&self) -> f64 {
        2.0 * self.half_extent / (self.nodes - 1) as f64
    }

    fn control(&self, iu: isize, iv: isize) -> f64 {
        let last = self.nodes as isize - 1;
        let iu = iu.clamp(0, last) as usize;
        let iv = iv.clamp(0, last) as usize;
        self.heights[iv * self.nodes + iu]
    }

    /// Height and its lateral gradient `(h, dh/du, dh/dv)`.
    pub fn eval(&self, u: f64, v: f64) -> (f64, f64, f64) {
        let s = self.spacing();
        let su = (u + self.half_extent) / s;
        let sv = (v + self.half_extent) / s;
        let (iu, iv) = (su.floor(), sv.floor());
        let (wu, dwu) = bspline_basis(su - iu);
        let (wv, dwv) = bspline_basis(sv - iv);
        let (iu, iv) = (iu as isize, iv as isize);
        let (mut h, mut hu, mut hv) = (0.0, 0.0, 0.0);
        for b in 0..4 {
            for a in 0..4 {
                let c = self.control(iu + a as isize - 1, iv + b as isize - 1);
                h += wu[a] * wv[b] * c;
                hu += dwu[a] * wv[b] * c;
                hv += wu[a] * dwv[b] * c;
            }
        }
        (h, hu / s, hv / s)
    }

    pub fn max_abs_control(&self) -> f64 {
        self.heights.iter().fold(0.0, |m, h| m.max(h.abs()))
    }
}

impl Figure {
    pub fn eval(&self, u: f64, v: f64) -> (f64, f64, f64) {
        match self {
            Figure::Flat => (0.0, 0.0, 0.0),
            Figure::Bicubic(b) => b.eval(u, v),
        }
    }

    pub fn is_flat(&self) -> bool {
        matches!(self, Figure::Flat)
    }
}

/// A base plane or sphere plus a height perturbation along its lateral frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametricSurface {
    pub base: SurfaceBase,
    pub figure: Figure,
}

impl ParametricSurface {
    pub fn new(base: SurfaceBase, figure: Figure) -> Result<Self, GeometryError> {
        let surface = Self { base, figure };
        surface.validate()?;
        Ok(surface)
    }

    pub fn plane(point: Vec3, normal: Vec3) -> Self {
        Self {
            base: SurfaceBase::Plane {
                point,
                normal: normal.normalized(),
            },
            figure: Figure::Flat,
        }
    }

    pub fn sphere(center: Vec3, radius: f64, axis: Vec3) -> Self {
        Self {
            base: SurfaceBase::SphericalCap {
                center,
                radius,
                axis: axis.normalized(),
            },
            figure: Figure::Flat,
        }
    }

    pub fn with_figure(mut self, figure: Figure) -> Result<Self, GeometryError> {
        self.figure = figure;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let (scale, axis) = match &self.base {
            SurfaceBase::Plane { normal, .. } => (None, *normal),
            SurfaceBase::SphericalCap { radius, axis, .. } => {
                if !(*radius > 0.0) {
                    return Err(GeometryError::InvalidInput(format!("sphere radius {radius}")));
                }
                (Some(*radius), *axis)
            }
        };
        if (axis.norm() - 1.0).abs() > 1e-9 {
            return Err(GeometryError::InvalidInput("surface axis must be unit".into()));
        }
        if let Figure::Bicubic(b) = &self.figure {
            if b.nodes < 2 || b.heights.len() != b.nodes * b.nodes || !(b.half_extent > 0.0) {
                return Err(GeometryError::InvalidInput("malformed bicubic figure".into()));
            }
            // Planes have no radius; the figure's own extent sets the scale.
            let limit = 0.1 * scale.unwrap_or(b.half_extent);
            if b.max_abs_control() > limit {
                return Err(GeometryError::InvalidInput(format!(
                    "figure amplitude {} exceeds 10% of the base scale ({limit})",
                    b.max_abs_control()
                )));
            }
        }
        Ok(())
    }

    /// Frame origin and unit axis of the base.
    pub fn frame_origin_axis(&self) -> (Vec3, Vec3) {
        match &self.base {
            SurfaceBase::Plane { point, normal } => (*point, *normal),
            SurfaceBase::SphericalCap { center, axis, .. } => (*center, *axis),
        }
    }

    fn lateral_frame(&self) -> (Vec3, Vec3, Vec3, Vec3) {
        let (origin, axis) = self.frame_origin_axis();
        let e1 = axis.any_orthonormal();
        let e2 = axis.cross(e1);
        (origin, axis, e1, e2)
    }

    /// Distance of `p` from the base axis line.
    pub fn lateral_distance(&self, p: Vec3) -> f64 {
        let (origin, axis) = self.frame_origin_axis();
        let q = p - origin;
        (q - axis * q.dot(axis)).norm()
    }

    /// Implicit function; zero on the surface, in meters.
    pub fn implicit(&self, p: Vec3) -> f64 {
        self.implicit_with_gradient(p).0
    }

    pub fn implicit_with_gradient(&self, p: Vec3) -> (f64, Vec3) {
        let (origin, axis, e1, e2) = self.lateral_frame();
        let q = p - origin;
        let (h, hu, hv) = self.figure.eval(q.dot(e1), q.dot(e2));
        let slope = e1 * hu + e2 * hv;
        match &self.base {
            SurfaceBase::Plane { .. } => (q.dot(axis) - h, axis - slope),
            SurfaceBase::SphericalCap { radius, .. } => {
                let r = q.norm();
                (r - radius - h, q * (1.0 / r) - slope)
            }
        }
    }

    fn base_hit_distance(&self, ray: &Ray) -> Option<f64> {
        match &self.base {
            SurfaceBase::Plane { point, normal } => {
                let denom = ray.direction.dot(*normal);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = (*point - ray.origin).dot(*normal) / denom;
                (t > MIN_DISTANCE).then_some(t)
            }
            SurfaceBase::SphericalCap { center, radius, .. } => {
                let oc = ray.origin - *center;
                let b = oc.dot(ray.direction);
                let c = oc.dot(oc) - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                [-b - sq, -b + sq].into_iter().find(|t| *t > MIN_DISTANCE)
            }
        }
    }
}

/// Nearest intersection of `ray` with `surface`.
///
/// Perturbed surfaces start from the base hit and refine the distance with
/// Newton steps on the implicit function until `|f| < 1e-10` m.
pub fn intersect(ray: &Ray, surface: &ParametricSurface) -> Result<SurfaceHit, GeometryError> {
    let mut t = surface.base_hit_distance(ray).ok_or(GeometryError::Miss)?;
    let (mut value, mut grad) = surface.implicit_with_gradient(ray.at(t));
    if !surface.figure.is_flat() {
        let mut iterations = 0;
        while value.abs() >= NEWTON_TOLERANCE {
            if iterations == NEWTON_MAX_ITERS {
                return Err(GeometryError::NoConvergence {
                    iterations,
                    residual: value.abs(),
                });
            }
            let slope = grad.dot(ray.direction);
            if slope.abs() < 1e-14 {
                return Err(GeometryError::NoConvergence {
                    iterations,
                    residual: value.abs(),
                });
            }
            t -= value / slope;
            (value, grad) = surface.implicit_with_gradient(ray.at(t));
            iterations += 1;
        }
        if t <= MIN_DISTANCE {
            return Err(GeometryError::Miss);
        }
    }
    let mut normal = grad.normalized();
    if normal.dot(ray.direction) > 0.0 {
        normal = -normal;
    }
    Ok(SurfaceHit {
        distance: t,
        point: ray.at(t),
        normal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_hit_matches_quadratic_formula() {
        let s = ParametricSurface::sphere(Vec3::new(0.0, 0.0, 5.0), 1.0, Vec3::Z);
        let hit = intersect(&Ray::new(Vec3::ZERO, Vec3::Z), &s).unwrap();
        assert!((hit.distance - 4.0).abs() < 1e-12);
        assert!((hit.point - Vec3::new(0.0, 0.0, 4.0)).max_abs() < 1e-12);
        assert!((hit.normal - Vec3::new(0.0, 0.0, -1.0)).max_abs() < 1e-12);
    }

    #[test]
    fn plane_hit_and_parallel_miss() {
        let p = ParametricSurface::plane(Vec3::new(0.0, 0.0, 2.0), Vec3::new(0.0, 0.0, -1.0));
        let hit = intersect(&Ray::new(Vec3::ZERO, Vec3::Z), &p).unwrap();
        assert!((hit.distance - 2.0).abs() < 1e-15);
        assert_eq!(
            intersect(&Ray::new(Vec3::ZERO, Vec3::X), &p).unwrap_err(),
            GeometryError::Miss
        );
    }

    #[test]
    fn plane_behind_origin_is_a_miss() {
        let p = ParametricSurface::plane(Vec3::new(0.0, 0.0, -2.0), Vec3::Z);
        assert_eq!(
            intersect(&Ray::new(Vec3::ZERO, Vec3::Z), &p).unwrap_err(),
            GeometryError::Miss
        );
    }

    #[test]
    fn bicubic_gradient_matches_finite_differences() {
        let fig = BicubicFigure::random(0.05, 7, 5e-4, 3);
        let h = 1e-7;
        for &(u, v) in &[(0.0, 0.0), (0.013, -0.021), (-0.049, 0.031), (0.07, 0.0)] {
            let (_, hu, hv) = fig.eval(u, v);
            let fu = (fig.eval(u + h, v).0 - fig.eval(u - h, v).0) / (2.0 * h);
            let fv = (fig.eval(u, v + h).0 - fig.eval(u, v - h).0) / (2.0 * h);
            assert!((hu - fu).abs() < 1e-8, "{hu} vs {fu}");
            assert!((hv - fv).abs() < 1e-8, "{hv} vs {fv}");
        }
    }

    #[test]
    fn perturbed_sphere_converges_onto_implicit_set() {
        let fig = Figure::Bicubic(BicubicFigure::random(0.06, 8, 5e-4, 11));
        let s = ParametricSurface::sphere(Vec3::new(0.0, 0.0, -0.01), 0.063, Vec3::Z)
            .with_figure(fig)
            .unwrap();
        for i in 0..50 {
            let a = i as f64 * 0.01;
            let ray = Ray::new(Vec3::ZERO, Vec3::new(a.sin(), 0.3 * a.cos() - 0.1, 1.0));
            let hit = intersect(&ray, &s).unwrap();
            assert!(s.implicit(hit.point).abs() < 1e-10);
            assert!(hit.normal.dot(ray.direction) < 0.0);
            assert!((hit.normal.norm() - 1.0).abs() < 1e-12);
            assert!((ray.at(hit.distance) - hit.point).max_abs() < 1e-12);
        }
    }

    #[test]
    fn oversized_figure_is_rejected() {
        let fig = Figure::Bicubic(BicubicFigure::random(0.06, 4, 0.05, 1));
        let err = ParametricSurface::sphere(Vec3::ZERO, 0.06, Vec3::Z).with_figure(fig);
        assert!(matches!(err, Err(GeometryError::InvalidInput(_))));
    }
}
