use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RadianceError;
use crate::vec3::Vec3;

pub const GRID_FORMAT_VERSION: u32 = 1;

/// Stored pre-activation value used for vacuum voxels.
pub const VACUUM_RAW: f64 = -30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn cube(half: f64) -> Self {
        Self {
            min: Vec3::new(-half, -half, -half),
            max: Vec3::new(half, half, half),
        }
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn is_valid(&self) -> bool {
        (0..3).all(|a| self.max[a] > self.min[a])
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn inverse_softplus(y: f64) -> f64 {
    if y <= 0.0 {
        VACUUM_RAW
    } else if y > 30.0 {
        y
    } else {
        y.exp_m1().ln().max(VACUUM_RAW)
    }
}

/// Voxel grid of density and color.
///
/// Parameters are stored as one flat vector: `V` pre-activation densities
/// followed by `3V` interleaved colors, voxels ordered row-major with z
/// fastest. Physical density is `density_scale * softplus(raw)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadianceGrid {
    pub resolution: [usize; 3],
    pub bounds: Aabb,
    pub density_scale: f64,
    params: Vec<f64>,
}

impl RadianceGrid {
    pub fn vacuum(resolution: [usize; 3], bounds: Aabb, density_scale: f64) -> Result<Self, RadianceError> {
        if resolution.iter().any(|&n| n == 0) || !bounds.is_valid() || !(density_scale > 0.0) {
            return Err(RadianceError::InvalidGrid("empty resolution, bounds or scale".into()));
        }
        let v = resolution.iter().product::<usize>();
        let mut params = vec![0.0; 4 * v];
        params[..v].fill(VACUUM_RAW);
        Ok(Self {
            resolution,
            bounds,
            density_scale,
            params,
        })
    }

    pub fn voxel_count(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.resolution[1] + j) * self.resolution[2] + k
    }

    pub fn voxel_size(&self) -> Vec3 {
        let e = self.bounds.max - self.bounds.min;
        Vec3::new(
            e.x / self.resolution[0] as f64,
            e.y / self.resolution[1] as f64,
            e.z / self.resolution[2] as f64,
        )
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let h = self.voxel_size();
        self.bounds.min + Vec3::new((i as f64 + 0.5) * h.x, (j as f64 + 0.5) * h.y, (k as f64 + 0.5) * h.z)
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn density(&self, voxel: usize) -> f64 {
        self.density_scale * softplus(self.params[voxel])
    }

    pub fn color(&self, voxel: usize) -> [f64; 3] {
        let v = self.voxel_count();
        std::array::from_fn(|c| self.params[v + 3 * voxel + c])
    }

    pub fn set_voxel(&mut self, voxel: usize, density: f64, rgb: [f64; 3]) {
        let v = self.voxel_count();
        self.params[voxel] = inverse_softplus(density / self.density_scale);
        self.params[v + 3 * voxel..v + 3 * voxel + 3].copy_from_slice(&rgb);
    }

    /// Clamps stored colors into `[0, 1]`.
    pub fn project_colors(&mut self) {
        let v = self.voxel_count();
        for c in &mut self.params[v..] {
            *c = c.clamp(0.0, 1.0);
        }
    }

    /// Activated snapshot used for rendering.
    pub fn view(&self) -> GridView<'_> {
        let v = self.voxel_count();
        let sigma = self.params[..v].iter().map(|&r| self.density_scale * softplus(r)).collect();
        GridView { grid: self, sigma }
    }

    /// Derivative of physical density with respect to the stored value.
    pub fn density_derivative(&self, voxel: usize) -> f64 {
        self.density_scale * sigmoid(self.params[voxel])
    }
}

/// Trilinear stencil of one query point.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    pub voxels: [usize; 8],
    pub weights: [f64; 8],
    /// Gradient of each weight with respect to the query point.
    pub weight_grads: [Vec3; 8],
    /// Lower corner cell, identifies the smooth piece of the interpolant.
    pub cell: [usize; 3],
}

/// Density and clamped color at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSample {
    pub sigma: f64,
    pub rgb: [f64; 3],
}

impl GridSample {
    pub const VACUUM: Self = Self {
        sigma: 0.0,
        rgb: [0.0; 3],
    };
}

/// Grid with densities activated once.
pub struct GridView<'a> {
    pub grid: &'a RadianceGrid,
    sigma: Vec<f64>,
}

impl GridView<'_> {
    pub fn sigma(&self, voxel: usize) -> f64 {
        self.sigma[voxel]
    }

    /// Stencil at `p`, or `None` outside the bounds. Interpolation is over
    /// voxel centers and clamps to the edge voxels near the boundary.
    pub fn stencil(&self, p: Vec3) -> Option<Stencil> {
        let g = self.grid;
        if !g.bounds.contains(p) {
            return None;
        }
        let h = g.voxel_size();
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        let mut dfrac = [0.0; 3];
        for a in 0..3 {
            let n = g.resolution[a];
            let u = (p[a] - g.bounds.min[a]) / h[a] - 0.5;
            let top = (n - 1) as f64;
            let inside = u > 0.0 && u < top;
            let uc = u.clamp(0.0, top);
            let i0 = (uc.floor() as usize).min(n.saturating_sub(2));
            base[a] = i0;
            frac[a] = if n == 1 { 0.0 } else { uc - i0 as f64 };
            dfrac[a] = if inside { 1.0 / h[a] } else { 0.0 };
        }
        let mut voxels = [0; 8];
        let mut weights = [0.0; 8];
        let mut weight_grads = [Vec3::ZERO; 8];
        for c in 0..8 {
            let bit = [(c >> 2) & 1, (c >> 1) & 1, c & 1];
            let mut idx = [0usize; 3];
            let mut f = [0.0; 3];
            let mut df = [0.0; 3];
            for a in 0..3 {
                let n = g.resolution[a];
                idx[a] = (base[a] + bit[a]).min(n - 1);
                if bit[a] == 1 {
                    f[a] = frac[a];
                    df[a] = dfrac[a];
                } else {
                    f[a] = 1.0 - frac[a];
                    df[a] = -dfrac[a];
                }
            }
            voxels[c] = g.index(idx[0], idx[1], idx[2]);
            weights[c] = f[0] * f[1] * f[2];
            weight_grads[c] = Vec3::new(df[0] * f[1] * f[2], f[0] * df[1] * f[2], f[0] * f[1] * df[2]);
        }
        Some(Stencil {
            voxels,
            weights,
            weight_grads,
            cell: base,
        })
    }

    /// Interpolated values before color clamping.
    pub fn evaluate(&self, stencil: &Stencil) -> (f64, [f64; 3]) {
        let v = self.grid.voxel_count();
        let params = self.grid.params();
        let mut sigma = 0.0;
        let mut rgb = [0.0; 3];
        for c in 0..8 {
            let w = stencil.weights[c];
            let vox = stencil.voxels[c];
            sigma += w * self.sigma[vox];
            for (ch, out) in rgb.iter_mut().enumerate() {
                *out += w * params[v + 3 * vox + ch];
            }
        }
        (sigma, rgb)
    }

    pub fn query(&self, p: Vec3) -> GridSample {
        match self.stencil(p) {
            None => GridSample::VACUUM,
            Some(s) => {
                let (sigma, rgb) = self.evaluate(&s);
                GridSample {
                    sigma,
                    rgb: rgb.map(|c| c.clamp(0.0, 1.0)),
                }
            }
        }
    }
}

/// Convenience wrapper over [`RadianceGrid::view`] for single lookups.
pub fn query_grid(grid: &RadianceGrid, point: Vec3) -> GridSample {
    grid.view().query(point)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCheckpointHeader {
    pub version: u32,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub bounds_min: [f64; 3],
    pub bounds_max: [f64; 3],
    pub density_scale: f64,
}

/// Writes a header line of JSON, then `V` little-endian f32 densities
/// (physical units) and `3V` f32 colors, voxels in row-major z-fastest order.
pub fn write_grid_checkpoint(path: &Path, grid: &RadianceGrid) -> Result<(), RadianceError> {
    let header = GridCheckpointHeader {
        version: GRID_FORMAT_VERSION,
        nx: grid.resolution[0],
        ny: grid.resolution[1],
        nz: grid.resolution[2],
        bounds_min: grid.bounds.min.to_array(),
        bounds_max: grid.bounds.max.to_array(),
        density_scale: grid.density_scale,
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut out, &header).map_err(|e| RadianceError::Checkpoint(e.to_string()))?;
    out.write_all(b"\n")?;
    let v = grid.voxel_count();
    for i in 0..v {
        out.write_all(&(grid.density(i) as f32).to_le_bytes())?;
    }
    for c in &grid.params()[v..] {
        out.write_all(&(*c as f32).to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_grid_checkpoint(path: &Path) -> Result<RadianceGrid, RadianceError> {
    let mut reader = BufReader::new(std::fs::File::open(path)?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let h: GridCheckpointHeader =
        serde_json::from_str(line.trim_end()).map_err(|e| RadianceError::Checkpoint(e.to_string()))?;
    if h.version != GRID_FORMAT_VERSION {
        return Err(RadianceError::Checkpoint(format!("unsupported version {}", h.version)));
    }
    let bounds = Aabb {
        min: Vec3::from_array(h.bounds_min),
        max: Vec3::from_array(h.bounds_max),
    };
    let mut grid = RadianceGrid::vacuum([h.nx, h.ny, h.nz], bounds, h.density_scale)?;
    let v = grid.voxel_count();
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() != 16 * v {
        return Err(RadianceError::Checkpoint(format!(
            "expected {} payload bytes, found {}",
            16 * v,
            bytes.len()
        )));
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    for i in 0..v {
        let rgb = [vals[v + 3 * i], vals[v + 3 * i + 1], vals[v + 3 * i + 2]];
        grid.set_voxel(i, vals[i], rgb);
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RadianceGrid {
        RadianceGrid::vacuum([4, 4, 4], Aabb::cube(1.0), 10.0).unwrap()
    }

    #[test]
    fn voxel_center_returns_voxel_value() {
        let mut g = small();
        let i = g.index(1, 2, 3);
        g.set_voxel(i, 2.5, [0.1, 0.2, 0.3]);
        let s = query_grid(&g, g.voxel_center(1, 2, 3));
        assert!((s.sigma - 2.5).abs() < 1e-9);
        for (a, b) in s.rgb.iter().zip([0.1, 0.2, 0.3]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn outside_bounds_is_vacuum() {
        let mut g = small();
        for i in 0..g.voxel_count() {
            g.set_voxel(i, 5.0, [1.0, 1.0, 1.0]);
        }
        assert_eq!(query_grid(&g, Vec3::new(1.5, 0.0, 0.0)), GridSample::VACUUM);
    }

    #[test]
    fn midpoint_interpolates_linearly() {
        let mut g = small();
        let a = g.index(1, 1, 1);
        let b = g.index(2, 1, 1);
        g.set_voxel(a, 1.0, [0.0; 3]);
        g.set_voxel(b, 3.0, [0.0; 3]);
        let p = (g.voxel_center(1, 1, 1) + g.voxel_center(2, 1, 1)) * 0.5;
        // Neighbors are vacuum at 10 * softplus(-30), about 1e-12.
        assert!((query_grid(&g, p).sigma - 2.0).abs() < 1e-9);
    }

    #[test]
    fn stencil_weight_gradients_match_differences() {
        let mut g = small();
        for i in 0..g.voxel_count() {
            g.set_voxel(i, (i % 7) as f64 * 0.3, [0.5; 3]);
        }
        let view = g.view();
        let p = Vec3::new(0.13, -0.31, 0.27);
        let s = view.stencil(p).unwrap();
        let grad = (0..8).fold(Vec3::ZERO, |acc, c| acc + s.weight_grads[c] * view.sigma(s.voxels[c]));
        let h = 1e-6;
        for a in 0..3 {
            let mut e = Vec3::ZERO;
            match a {
                0 => e.x = h,
                1 => e.y = h,
                _ => e.z = h,
            }
            let fd = (view.query(p + e).sigma - view.query(p - e).sigma) / (2.0 * h);
            assert!((fd - grad[a]).abs() < 1e-6, "axis {a}: {fd} vs {}", grad[a]);
        }
    }

    #[test]
    fn checkpoint_round_trip_preserves_f32_values() {
        let mut g = small();
        for i in 0..g.voxel_count() {
            g.set_voxel(i, i as f64 * 0.25, [0.25, 0.5, 0.75]);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.bin");
        write_grid_checkpoint(&path, &g).unwrap();
        let back = read_grid_checkpoint(&path).unwrap();
        assert_eq!(back.resolution, g.resolution);
        for i in 0..g.voxel_count() {
            assert!((back.density(i) - g.density(i)).abs() < 1e-5 * g.density(i).max(1.0));
            assert_eq!(back.color(i), g.color(i));
        }
        let bytes = std::fs::read(&path).unwrap();
        let header_len = bytes.iter().position(|&b| b == b'\n').unwrap() + 1;
        assert_eq!(bytes.len() - header_len, 16 * g.voxel_count());
    }
}
