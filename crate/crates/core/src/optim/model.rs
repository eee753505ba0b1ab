use crate::camera::{CameraModel, CAMERA_PARAMS};
use crate::field::{
    geometric_head, offset_head, MlpCache, RayOffsetField, RefractiveFieldModel, GEOMETRIC_OUTPUTS, OFFSET_OUTPUTS,
};
use crate::geometry::Ray;
use crate::real::Dual;
use crate::vec3::Vec3;

/// How camera rays are bent before sampling the scene. All variants work in
/// the camera frame, where the cover is fixed.
#[derive(Debug, Clone, PartialEq)]
pub enum RayModel {
    /// No cover modeling: rays leave the camera center unchanged.
    Identity,
    /// Geometric field with two analytic refractions.
    Refractive(RefractiveFieldModel),
    /// Direct direction offsets, the ablation without geometry.
    RayOffset(RayOffsetField),
}

impl RayModel {
    pub fn params(&self) -> &[f64] {
        match self {
            RayModel::Identity => &[],
            RayModel::Refractive(m) => m.params(),
            RayModel::RayOffset(m) => m.net.mlp.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            RayModel::Identity => &mut [],
            RayModel::Refractive(m) => m.params_mut(),
            RayModel::RayOffset(m) => m.net.mlp.params_mut(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RayModel::Identity => "identity",
            RayModel::Refractive(_) => "refractive",
            RayModel::RayOffset(_) => "ray_offset",
        }
    }
}

/// Cover crossings predicted by the geometric field, camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceTrace {
    pub x1: Vec3,
    pub x2: Vec3,
    pub n1: Vec3,
    pub n2: Vec3,
}

/// Upstream gradient for the quantities of an [`ExitTrace`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TraceGrad {
    pub exit_origin: Vec3,
    pub exit_dir: Vec3,
    pub x1: Vec3,
    pub x2: Vec3,
    pub n1: Vec3,
    pub n2: Vec3,
}

/// Output rows of the geometric Jacobian: exit origin, exit direction,
/// then x1, x2, n1, n2.
const GEO_ROWS: usize = 18;
const GEO_COLS: usize = GEOMETRIC_OUTPUTS + 3;
const OFF_ROWS: usize = 3;
const OFF_COLS: usize = OFFSET_OUTPUTS + 3;

/// One camera ray traced through a [`RayModel`], kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ExitTrace {
    /// Exit ray in the camera frame.
    pub exit: Ray,
    /// The second refraction was impossible; the ray renders as background.
    pub tir: bool,
    pub repairs: u8,
    pub surfaces: Option<SurfaceTrace>,
    local_dir: Vec3,
    lift_jac: Option<[[f64; CAMERA_PARAMS]; 3]>,
    cache: Option<MlpCache>,
    jac: Vec<f64>,
}

fn dual_vec<const N: usize>(v: Vec3, first_slot: usize) -> Vec3<Dual<N>> {
    Vec3::new(
        Dual::variable(v.x, first_slot),
        Dual::variable(v.y, first_slot + 1),
        Dual::variable(v.z, first_slot + 2),
    )
}

fn push_rows<const N: usize>(jac: &mut Vec<f64>, v: Vec3<Dual<N>>) {
    for c in [v.x, v.y, v.z] {
        jac.extend_from_slice(&c.eps);
    }
}

/// Lifts `pixel` with the shared camera offsets and traces it through
/// `model`. With `with_grad` the Jacobians needed by [`ExitTrace::backward`]
/// are recorded.
pub fn trace_exit(
    model: &RayModel,
    camera: &CameraModel,
    offsets: &[f64; CAMERA_PARAMS],
    pixel: [f64; 2],
    with_grad: bool,
) -> ExitTrace {
    let (local_dir, lift_jac) = if with_grad {
        let vars: [Dual<CAMERA_PARAMS>; CAMERA_PARAMS] = std::array::from_fn(|i| Dual::variable(offsets[i], i));
        let d = camera.lift_local(pixel, &vars);
        (d.re(), Some([d.x.eps, d.y.eps, d.z.eps]))
    } else {
        (camera.lift_local(pixel, offsets), None)
    };
    let mut out = ExitTrace {
        exit: Ray {
            origin: Vec3::ZERO,
            direction: local_dir,
        },
        tir: false,
        repairs: 0,
        surfaces: None,
        local_dir,
        lift_jac,
        cache: None,
        jac: Vec::new(),
    };
    match model {
        RayModel::Identity => {}
        RayModel::Refractive(m) => {
            let cache = m.net.forward(Vec3::ZERO, local_dir);
            let (ni, no) = (m.config.index_inside, m.config.index_outside);
            if with_grad {
                let raw: [Dual<GEO_COLS>; GEOMETRIC_OUTPUTS] =
                    std::array::from_fn(|i| Dual::variable(cache.output()[i], i));
                let dir = dual_vec::<GEO_COLS>(local_dir, GEOMETRIC_OUTPUTS);
                let t = geometric_head(Vec3::zero(), dir, &raw, ni, no);
                let exit_dir = match t.exit_direction(ni, no) {
                    Ok(e) => e,
                    Err(_) => {
                        out.tir = true;
                        dir
                    }
                };
                let mut jac = Vec::with_capacity(GEO_ROWS * GEO_COLS);
                for v in [t.x2, exit_dir, t.x1, t.x2, t.n1, t.n2] {
                    push_rows(&mut jac, v);
                }
                out.jac = jac;
                out.exit = Ray {
                    origin: t.x2.re(),
                    direction: exit_dir.re(),
                };
                out.repairs = t.repairs;
                out.surfaces = Some(SurfaceTrace {
                    x1: t.x1.re(),
                    x2: t.x2.re(),
                    n1: t.n1.re(),
                    n2: t.n2.re(),
                });
            } else {
                let t = geometric_head(Vec3::ZERO, local_dir, cache.output(), ni, no);
                let exit_dir = match t.exit_direction(ni, no) {
                    Ok(e) => e,
                    Err(_) => {
                        out.tir = true;
                        local_dir
                    }
                };
                out.exit = Ray {
                    origin: t.x2,
                    direction: exit_dir,
                };
                out.repairs = t.repairs;
                out.surfaces = Some(SurfaceTrace {
                    x1: t.x1,
                    x2: t.x2,
                    n1: t.n1,
                    n2: t.n2,
                });
            }
            out.cache = Some(cache);
        }
        RayModel::RayOffset(m) => {
            let cache = m.net.forward(Vec3::ZERO, local_dir);
            if with_grad {
                let raw: [Dual<OFF_COLS>; OFFSET_OUTPUTS] =
                    std::array::from_fn(|i| Dual::variable(cache.output()[i], i));
                let dir = dual_vec::<OFF_COLS>(local_dir, OFFSET_OUTPUTS);
                let e = offset_head(dir, &raw);
                let mut jac = Vec::with_capacity(OFF_ROWS * OFF_COLS);
                push_rows(&mut jac, e);
                out.jac = jac;
                out.exit.direction = e.re();
            } else {
                out.exit.direction = offset_head(local_dir, cache.output());
            }
            out.cache = Some(cache);
        }
    }
    out
}

impl ExitTrace {
    pub fn local_dir(&self) -> Vec3 {
        self.local_dir
    }

    /// Back-propagates `grad` into `model_grads` (when given) and returns the
    /// gradient with respect to the nine camera offsets (zero unless the
    /// trace was recorded with gradients).
    pub fn backward(&self, model: &RayModel, grad: &TraceGrad, model_grads: Option<&mut [f64]>) -> [f64; CAMERA_PARAMS] {
        let mut g_dir = Vec3::ZERO;
        match model {
            RayModel::Identity => g_dir = grad.exit_dir,
            RayModel::Refractive(m) => {
                let mut upstream = [Vec3::ZERO; 6];
                upstream[0] = grad.exit_origin;
                if !self.tir {
                    upstream[1] = grad.exit_dir;
                }
                upstream[2] = grad.x1;
                upstream[3] = grad.x2;
                upstream[4] = grad.n1;
                upstream[5] = grad.n2;
                let g_in = self.contract(&upstream, GEO_COLS);
                g_dir += Vec3::new(g_in[8], g_in[9], g_in[10]);
                if let Some(mg) = model_grads {
                    let cache = self.cache.as_ref().expect("recorded trace");
                    let gi = m.net.backward(Vec3::ZERO, self.local_dir, cache, &g_in[..GEOMETRIC_OUTPUTS], mg);
                    g_dir += Vec3::new(gi[3], gi[4], gi[5]);
                }
            }
            RayModel::RayOffset(m) => {
                let g_in = self.contract(&[grad.exit_dir], OFF_COLS);
                g_dir += Vec3::new(g_in[3], g_in[4], g_in[5]);
                if let Some(mg) = model_grads {
                    let cache = self.cache.as_ref().expect("recorded trace");
                    let gi = m.net.backward(Vec3::ZERO, self.local_dir, cache, &g_in[..OFFSET_OUTPUTS], mg);
                    g_dir += Vec3::new(gi[3], gi[4], gi[5]);
                }
            }
        }
        let mut g_cam = [0.0; CAMERA_PARAMS];
        if let Some(j) = &self.lift_jac {
            for (p, g) in g_cam.iter_mut().enumerate() {
                *g = g_dir.x * j[0][p] + g_dir.y * j[1][p] + g_dir.z * j[2][p];
            }
        }
        g_cam
    }

    fn contract(&self, upstream: &[Vec3], cols: usize) -> Vec<f64> {
        let mut g = vec![0.0; cols];
        for (block, u) in upstream.iter().enumerate() {
            for a in 0..3 {
                let w = u[a];
                if w == 0.0 {
                    continue;
                }
                let row = &self.jac[(3 * block + a) * cols..(3 * block + a + 1) * cols];
                for (gi, r) in g.iter_mut().zip(row) {
                    *gi += w * r;
                }
            }
        }
        g
    }
}
