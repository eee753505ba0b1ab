//! Learnable cover surrogate.
//!
//! A [`RefractiveFieldModel`] maps a ray to the distances of its two cover
//! crossings and the incident normals there; the exit ray then follows from
//! two analytic refractions. [`RayOffsetField`] is the ablation that predicts
//! a direction offset instead of geometry.
//!
//! Geometric head outputs, all produced by a zero-weight output layer at
//! initialization so the biases alone describe a flat slab:
//!
//! | slot | meaning |
//! |------|---------|
//! | 0 | `ln h1`, axial depth of the first surface (`d1 = h1 / dir.z`) |
//! | 1 | `ln tau`, local thickness along `n1` |
//! | 2..5 | unnormalized `n1` |
//! | 5..8 | unnormalized `n2` |
//!
//! The in-medium path length is `tau / cos(theta_t)` with `theta_t` taken
//! from the first refraction under the configured indices, so `d2 - d1` is a
//! distance along the refracted direction.

mod checkpoint;
mod encoding;
mod mlp;
mod normals;

pub use checkpoint::{read_field_checkpoint, write_field_checkpoint, FieldCheckpointHeader, StoredField, FIELD_FORMAT_VERSION};
pub use encoding::{encode, encode_backward, encoded_len};
pub use mlp::{Mlp, MlpCache};
pub use normals::{fit_local_normals, fit_plane, symmetric_eigen3, PlaneFit, SurfaceIndex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{refract, GeometryError, Ray};
use crate::real::Real;
use crate::vec3::Vec3;

pub const GEOMETRIC_OUTPUTS: usize = 8;
pub const OFFSET_OUTPUTS: usize = 3;
/// Raw encoder inputs: ray origin and direction.
pub const RAY_INPUTS: usize = 6;

/// Smallest axial direction component used when converting depth to distance.
const AXIAL_FLOOR: f64 = 0.05;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("local neighborhood is degenerate")]
    Degenerate,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldConfig {
    /// Axial distance of the initial flat slab (m).
    pub z0: f64,
    /// Thickness of the initial flat slab (m).
    pub t0: f64,
    pub index_inside: f64,
    pub index_outside: f64,
    pub octaves: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub seed: u64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            z0: 0.05,
            t0: 0.003,
            index_inside: 1.49,
            index_outside: 1.0,
            octaves: 6,
            hidden_layers: 4,
            hidden_width: 64,
            seed: 0,
        }
    }
}

impl FieldConfig {
    fn layer_sizes(&self, outputs: usize) -> Vec<usize> {
        let mut sizes = vec![encoded_len(RAY_INPUTS, self.octaves)];
        sizes.extend(std::iter::repeat(self.hidden_width).take(self.hidden_layers));
        sizes.push(outputs);
        sizes
    }
}

/// Encoded MLP shared by both field variants.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMlp {
    pub octaves: usize,
    pub mlp: Mlp,
}

impl EncodedMlp {
    pub fn ray_input(origin: Vec3, dir: Vec3) -> [f64; RAY_INPUTS] {
        [origin.x, origin.y, origin.z, dir.x, dir.y, dir.z]
    }

    pub fn forward(&self, origin: Vec3, dir: Vec3) -> MlpCache {
        self.mlp.forward(&encode(&Self::ray_input(origin, dir), self.octaves))
    }

    /// Accumulates parameter gradients; returns the gradient with respect to
    /// `(origin, direction)`.
    pub fn backward(
        &self,
        origin: Vec3,
        dir: Vec3,
        cache: &MlpCache,
        grad_output: &[f64],
        grad_params: &mut [f64],
    ) -> [f64; RAY_INPUTS] {
        let g_enc = self.mlp.backward(cache, grad_output, grad_params);
        let g = encode_backward(&Self::ray_input(origin, dir), self.octaves, &g_enc);
        std::array::from_fn(|i| g[i])
    }
}

/// Field output along one ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldPrediction {
    pub d1: f64,
    pub d2: f64,
    pub n1: Vec3,
    pub n2: Vec3,
    /// First-surface crossing `o + d1 * dir`.
    pub x1: Vec3,
    /// Second-surface crossing, reached along the first refracted direction.
    pub x2: Vec3,
    /// Bit 0: `n1` was flipped, bit 1: `n2` was flipped.
    pub repairs: u8,
}

/// Geometric head evaluated over any scalar type.
#[derive(Debug, Clone, Copy)]
pub struct GeometricTrace<T> {
    pub d1: T,
    pub d2: T,
    pub n1: Vec3<T>,
    pub n2: Vec3<T>,
    pub x1: Vec3<T>,
    pub x2: Vec3<T>,
    pub inside: Vec3<T>,
    pub repairs: u8,
}

impl<T: Real> GeometricTrace<T> {
    /// Second refraction; returns the exit direction.
    pub fn exit_direction(&self, index_inside: f64, index_outside: f64) -> Result<Vec3<T>, GeometryError> {
        refract(self.inside, self.n2, T::cst(index_inside / index_outside))
    }
}

/// Decodes raw head outputs into distances, normals and both crossings.
///
/// If the first refraction is impossible (only when the inside index is
/// lower than the outside one) the in-medium direction falls back to the
/// incoming one.
pub fn geometric_head<T: Real>(
    origin: Vec3<T>,
    dir: Vec3<T>,
    raw: &[T],
    index_inside: f64,
    index_outside: f64,
) -> GeometricTrace<T> {
    let mut repairs = 0;
    let h1 = raw[0].exp();
    let tau = raw[1].exp();
    let axial = if dir.z.re() < AXIAL_FLOOR {
        T::cst(AXIAL_FLOOR)
    } else {
        dir.z
    };
    let d1 = h1 / axial;
    let mut n1 = Vec3::new(raw[2], raw[3], raw[4]).normalized();
    if n1.dot(dir).re() >= 0.0 {
        n1 = -n1;
        repairs |= 1;
    }
    let x1 = origin + dir.scale(d1);
    let inside = refract(dir, n1, T::cst(index_outside / index_inside)).unwrap_or(dir);
    let cos_t = -n1.dot(inside);
    let path = tau / cos_t;
    let x2 = x1 + inside.scale(path);
    let mut n2 = Vec3::new(raw[5], raw[6], raw[7]).normalized();
    if n2.dot(inside).re() >= 0.0 {
        n2 = -n2;
        repairs |= 2;
    }
    GeometricTrace {
        d1,
        d2: d1 + path,
        n1,
        n2,
        x1,
        x2,
        inside,
        repairs,
    }
}

/// Ablation head: exit direction is `normalize(dir + offset)` from the same origin.
pub fn offset_head<T: Real>(dir: Vec3<T>, raw: &[T]) -> Vec3<T> {
    (dir + Vec3::new(raw[0], raw[1], raw[2])).normalized()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefractiveFieldModel {
    pub config: FieldConfig,
    pub net: EncodedMlp,
}

impl RefractiveFieldModel {
    /// Fresh model reproducing a flat slab at `z0` of thickness `t0` with
    /// normals along `-z`.
    pub fn new(config: FieldConfig) -> Self {
        let mut bias = [0.0; GEOMETRIC_OUTPUTS];
        bias[0] = config.z0.ln();
        bias[1] = config.t0.ln();
        bias[4] = -1.0;
        bias[7] = -1.0;
        let mlp = Mlp::new(&config.layer_sizes(GEOMETRIC_OUTPUTS), &bias, config.seed);
        Self {
            config,
            net: EncodedMlp {
                octaves: config.octaves,
                mlp,
            },
        }
    }

    pub fn params(&self) -> &[f64] {
        self.net.mlp.params()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.net.mlp.params_mut()
    }

    pub fn trace(&self, ray: &Ray) -> GeometricTrace<f64> {
        let cache = self.net.forward(ray.origin, ray.direction);
        geometric_head(
            ray.origin,
            ray.direction,
            cache.output(),
            self.config.index_inside,
            self.config.index_outside,
        )
    }
}

/// Distances and normals predicted for `ray`.
pub fn field_eval(model: &RefractiveFieldModel, ray: &Ray) -> FieldPrediction {
    let t = model.trace(ray);
    FieldPrediction {
        d1: t.d1,
        d2: t.d2,
        n1: t.n1,
        n2: t.n2,
        x1: t.x1,
        x2: t.x2,
        repairs: t.repairs,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldExit {
    pub ray: Ray,
    pub prediction: FieldPrediction,
}

/// Bends `ray` through the predicted cover: refract at `o + d1 * dir` with
/// `n1`, advance `d2 - d1` along the refracted direction, refract with `n2`.
pub fn refract_via_field(
    ray: &Ray,
    model: &RefractiveFieldModel,
    index_inside: f64,
    index_outside: f64,
) -> Result<FieldExit, GeometryError> {
    if !(index_inside > 0.0 && index_outside > 0.0) {
        return Err(GeometryError::InvalidInput("indices must be positive".into()));
    }
    let p = field_eval(model, ray);
    let inside = refract(ray.direction, p.n1, index_outside / index_inside)?;
    // n2 must face the in-medium direction actually used here.
    let n2 = if p.n2.dot(inside) >= 0.0 { -p.n2 } else { p.n2 };
    let x2 = p.x1 + inside * (p.d2 - p.d1);
    let exit = refract(inside, n2, index_inside / index_outside)?;
    Ok(FieldExit {
        ray: Ray {
            origin: x2,
            direction: exit,
        },
        prediction: p,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RayOffsetField {
    pub config: FieldConfig,
    pub net: EncodedMlp,
}

impl RayOffsetField {
    pub fn new(config: FieldConfig) -> Self {
        let mlp = Mlp::new(&config.layer_sizes(OFFSET_OUTPUTS), &[0.0; OFFSET_OUTPUTS], config.seed);
        Self {
            config,
            net: EncodedMlp {
                octaves: config.octaves,
                mlp,
            },
        }
    }

    pub fn exit_ray(&self, ray: &Ray) -> Ray {
        let cache = self.net.forward(ray.origin, ray.direction);
        Ray {
            origin: ray.origin,
            direction: offset_head(ray.direction, cache.output()),
        }
    }
}
