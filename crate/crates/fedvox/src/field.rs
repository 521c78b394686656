//! Dense axis-aligned voxel grid of density and SH color coefficients with
//! trilinear sampling. One representation serves local trainable models
//! (raw density logits), cached client uploads and the global model
//! (activated densities).

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::scalar::{softplus, Scalar};

/// Coefficients per node: 3 color channels x 9 SH basis functions,
/// channel-major (`[r0..r8, g0..g8, b0..b8]`).
pub const SH_PER_NODE: usize = 27;

/// How the density array is to be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensityMode {
    /// Stored values are post-softplus densities (sigma >= 0). Used for
    /// ground-truth scenes, cached uploads and the global model.
    Activated,
    /// Stored values are raw logits; sampling applies softplus to the
    /// interpolated logit. Used for local trainable fields.
    Logit,
}

/// Axis-aligned box in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionBounds<T> {
    pub min: Vec3<T>,
    pub max: Vec3<T>,
}

impl<T: Scalar> RegionBounds<T> {
    pub fn new(min: Vec3<T>, max: Vec3<T>) -> Result<Self> {
        if min.x > max.x || min.y > max.y || min.z > max.z {
            return Err(Error::invalid("region", format!("min {min:?} exceeds max {max:?}")));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, p: Vec3<T>) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    pub fn center(&self) -> Vec3<T> {
        (self.min + self.max) * T::half()
    }

    pub fn extent(&self) -> Vec3<T> {
        self.max - self.min
    }

    pub fn intersection(&self, other: &Self) -> Option<Self> {
        let min = self.min.max(other.min);
        let max = self.max.min(other.max);
        if min.x <= max.x && min.y <= max.y && min.z <= max.z {
            Some(Self { min, max })
        } else {
            None
        }
    }

    /// Tight box around the image of this box under a rigid transform.
    pub fn transformed(&self, pose: &crate::geom::Pose<T>) -> Self {
        let mut min = Vec3::splat(T::infinity());
        let mut max = Vec3::splat(T::neg_infinity());
        for ix in 0..2 {
            for iy in 0..2 {
                for iz in 0..2 {
                    let corner = Vec3::new(
                        if ix == 0 { self.min.x } else { self.max.x },
                        if iy == 0 { self.min.y } else { self.max.y },
                        if iz == 0 { self.min.z } else { self.max.z },
                    );
                    let p = pose.apply(corner);
                    min = min.min(p);
                    max = max.max(p);
                }
            }
        }
        Self { min, max }
    }
}

/// The 8 grid nodes around a point plus their trilinear weights.
#[derive(Debug, Clone, Copy)]
pub struct NodeWeights<T> {
    pub indices: [usize; 8],
    pub weights: [T; 8],
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelField<T> {
    /// World position of the grid node (0, 0, 0).
    pub origin: Vec3<T>,
    /// Node spacing in meters.
    pub voxel_size: T,
    /// Node counts per axis.
    pub dims: [usize; 3],
    pub mode: DensityMode,
    /// One value per node, X-fastest: `ix + dims.x * (iy + dims.y * iz)`.
    pub density: Vec<T>,
    /// `SH_PER_NODE` values per node, same node order.
    pub sh: Vec<T>,
    /// True where the field claims to model the scene.
    pub occupancy: Vec<bool>,
}

impl<T: Scalar> VoxelField<T> {
    pub fn new(origin: Vec3<T>, voxel_size: T, dims: [usize; 3], mode: DensityMode) -> Result<Self> {
        if voxel_size <= T::zero() {
            return Err(Error::invalid("voxel field", format!("voxel size must be positive, got {voxel_size}")));
        }
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::invalid("voxel field", format!("dims {dims:?} must be at least 2 per axis")));
        }
        let n = dims[0] * dims[1] * dims[2];
        Ok(Self {
            origin,
            voxel_size,
            dims,
            mode,
            density: vec![T::zero(); n],
            sh: vec![T::zero(); n * SH_PER_NODE],
            occupancy: vec![false; n],
        })
    }

    /// Grid with node spacing chosen so `dims` nodes span `bounds` exactly.
    pub fn covering(bounds: &RegionBounds<T>, dims: [usize; 3], mode: DensityMode) -> Result<Self> {
        let extent = bounds.extent();
        let spans = [
            extent.x / T::of_usize(dims[0] - 1),
            extent.y / T::of_usize(dims[1] - 1),
            extent.z / T::of_usize(dims[2] - 1),
        ];
        let voxel_size = spans[0].max(spans[1]).max(spans[2]);
        Self::new(bounds.min, voxel_size, dims, mode)
    }

    pub fn node_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn node_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.dims[0] * (iy + self.dims[1] * iz)
    }

    pub fn node_coords(&self, index: usize) -> [usize; 3] {
        let ix = index % self.dims[0];
        let iy = (index / self.dims[0]) % self.dims[1];
        let iz = index / (self.dims[0] * self.dims[1]);
        [ix, iy, iz]
    }

    pub fn node_position(&self, index: usize) -> Vec3<T> {
        let [ix, iy, iz] = self.node_coords(index);
        self.origin
            + Vec3::new(
                T::of_usize(ix) * self.voxel_size,
                T::of_usize(iy) * self.voxel_size,
                T::of_usize(iz) * self.voxel_size,
            )
    }

    /// Affine map from world space to continuous grid coordinates.
    pub fn world_to_grid(&self, point: Vec3<T>) -> Vec3<T> {
        (point - self.origin) / self.voxel_size
    }

    pub fn grid_to_world(&self, grid: Vec3<T>) -> Vec3<T> {
        self.origin + grid * self.voxel_size
    }

    /// World-space box spanned by the grid nodes.
    pub fn bounds(&self) -> RegionBounds<T> {
        let extent = Vec3::new(
            T::of_usize(self.dims[0] - 1) * self.voxel_size,
            T::of_usize(self.dims[1] - 1) * self.voxel_size,
            T::of_usize(self.dims[2] - 1) * self.voxel_size,
        );
        RegionBounds { min: self.origin, max: self.origin + extent }
    }

    /// Trilinear gather at a point; `None` outside the grid.
    pub fn gather(&self, point: Vec3<T>) -> Option<NodeWeights<T>> {
        let g = self.world_to_grid(point);
        let max = Vec3::new(
            T::of_usize(self.dims[0] - 1),
            T::of_usize(self.dims[1] - 1),
            T::of_usize(self.dims[2] - 1),
        );
        if g.x < T::zero() || g.y < T::zero() || g.z < T::zero() || g.x > max.x || g.y > max.y || g.z > max.z {
            return None;
        }
        // Clamp the cell so points exactly on the upper face still have a cell.
        let cell = [
            (g.x.floor().as_f64() as usize).min(self.dims[0] - 2),
            (g.y.floor().as_f64() as usize).min(self.dims[1] - 2),
            (g.z.floor().as_f64() as usize).min(self.dims[2] - 2),
        ];
        let f = Vec3::new(
            g.x - T::of_usize(cell[0]),
            g.y - T::of_usize(cell[1]),
            g.z - T::of_usize(cell[2]),
        );
        let one = T::one();
        let mut indices = [0usize; 8];
        let mut weights = [T::zero(); 8];
        for (corner, (idx, w)) in indices.iter_mut().zip(weights.iter_mut()).enumerate() {
            let (dx, dy, dz) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
            *idx = self.node_index(cell[0] + dx, cell[1] + dy, cell[2] + dz);
            let wx = if dx == 1 { f.x } else { one - f.x };
            let wy = if dy == 1 { f.y } else { one - f.y };
            let wz = if dz == 1 { f.z } else { one - f.z };
            *w = wx * wy * wz;
        }
        Some(NodeWeights { indices, weights })
    }

    /// Interpolated raw density value (logit in `Logit` mode).
    pub fn interp_density_raw(&self, nw: &NodeWeights<T>) -> T {
        let mut v = T::zero();
        for k in 0..8 {
            v = v + self.density[nw.indices[k]] * nw.weights[k];
        }
        v
    }

    /// Interpolated SH coefficients.
    pub fn interp_sh(&self, nw: &NodeWeights<T>) -> [T; SH_PER_NODE] {
        let mut out = [T::zero(); SH_PER_NODE];
        for k in 0..8 {
            let base = nw.indices[k] * SH_PER_NODE;
            let w = nw.weights[k];
            for (o, &s) in out.iter_mut().zip(&self.sh[base..base + SH_PER_NODE]) {
                *o = *o + s * w;
            }
        }
        out
    }

    fn activate(&self, raw: T) -> T {
        match self.mode {
            DensityMode::Activated => raw,
            DensityMode::Logit => softplus(raw),
        }
    }

    /// Density and SH coefficients at a point; out-of-bounds points yield
    /// exactly zero density and zero coefficients.
    pub fn sample(&self, point: Vec3<T>) -> (T, [T; SH_PER_NODE]) {
        match self.gather(point) {
            Some(nw) => (self.activate(self.interp_density_raw(&nw)), self.interp_sh(&nw)),
            None => (T::zero(), [T::zero(); SH_PER_NODE]),
        }
    }

    /// Like [`sample`](Self::sample) but also exposes the nodes and trilinear
    /// weights, for backpropagation. Errors outside the grid.
    #[allow(clippy::type_complexity)]
    pub fn sample_with_weights(&self, point: Vec3<T>) -> Result<(T, [T; SH_PER_NODE], [usize; 8], [T; 8])> {
        let nw = self.gather(point).ok_or(Error::OutOfBounds {
            x: point.x.as_f64(),
            y: point.y.as_f64(),
            z: point.z.as_f64(),
        })?;
        let sigma = self.activate(self.interp_density_raw(&nw));
        let coeffs = self.interp_sh(&nw);
        Ok((sigma, coeffs, nw.indices, nw.weights))
    }

    /// Tight world-space box over occupied nodes; `None` when nothing is
    /// occupied.
    pub fn occupied_bounds(&self) -> Option<RegionBounds<T>> {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        for (idx, &occ) in self.occupancy.iter().enumerate() {
            if !occ {
                continue;
            }
            any = true;
            let c = self.node_coords(idx);
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
        }
        if !any {
            return None;
        }
        let to_world = |c: [usize; 3]| {
            self.origin
                + Vec3::new(
                    T::of_usize(c[0]) * self.voxel_size,
                    T::of_usize(c[1]) * self.voxel_size,
                    T::of_usize(c[2]) * self.voxel_size,
                )
        };
        Some(RegionBounds { min: to_world(lo), max: to_world(hi) })
    }

    /// True when every node carrying trilinear weight at `point` is occupied.
    /// Out-of-bounds points are never modeled.
    pub fn is_modeled(&self, point: Vec3<T>) -> bool {
        match self.gather(point) {
            Some(nw) => (0..8).all(|k| nw.weights[k] <= T::zero() || self.occupancy[nw.indices[k]]),
            None => false,
        }
    }

    /// Converts a logit-mode field into activated storage (densities through
    /// softplus at the nodes). Activated fields are returned unchanged.
    pub fn activated(&self) -> Self {
        match self.mode {
            DensityMode::Activated => self.clone(),
            DensityMode::Logit => {
                let mut out = self.clone();
                out.mode = DensityMode::Activated;
                for v in &mut out.density {
                    *v = softplus(*v);
                }
                out
            }
        }
    }
}
