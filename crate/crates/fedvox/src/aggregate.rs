//! Server-side merge of aligned client fields into the global voxel grid:
//! cache the client field's outputs at the pre-images of global node
//! positions inside the client's modeled region, then blend them in by
//! exponential moving averaging.

use crate::error::{Error, Result};
use crate::field::{DensityMode, RegionBounds, VoxelField, SH_PER_NODE};
use crate::geom::Pose;
use crate::scalar::Scalar;

/// The server's model: an activated voxel grid plus per-node update counts.
/// Nodes that were never written hold zero density and zero coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModel<T> {
    pub field: VoxelField<T>,
    pub update_count: Vec<u32>,
    /// EMA mixing value in (0, 1].
    pub eta: T,
}

impl<T: Scalar> GlobalModel<T> {
    pub fn new(field: VoxelField<T>, eta: T) -> Result<Self> {
        if field.mode != DensityMode::Activated {
            return Err(Error::invalid("global model", "global grid must store activated densities"));
        }
        if eta <= T::zero() || eta > T::one() {
            return Err(Error::invalid("global model", format!("eta {eta} outside (0, 1]")));
        }
        let n = field.node_count();
        Ok(Self { field, update_count: vec![0; n], eta })
    }

    pub fn empty(origin: crate::math::Vec3<T>, voxel_size: T, dims: [usize; 3], eta: T) -> Result<Self> {
        Self::new(VoxelField::new(origin, voxel_size, dims, DensityMode::Activated)?, eta)
    }
}

/// A client's contribution as shipped to the server.
#[derive(Debug, Clone)]
pub struct ClientUpdate<T> {
    /// The trained local field, in the client's own frame.
    pub local_field: VoxelField<T>,
    /// Local-to-global transform after pose alignment.
    pub corrected_pose: Pose<T>,
    /// Modeled area in the local frame (bounding box of the occupancy mask).
    pub region: RegionBounds<T>,
    /// Restrict caching to points whose interpolating nodes are all
    /// occupied, rather than the whole bounding box.
    pub mask_refined: bool,
}

impl<T: Scalar> ClientUpdate<T> {
    /// Wraps a trained field, deriving the region from its occupancy mask.
    /// `None` when the field models nothing.
    pub fn from_field(local_field: VoxelField<T>, corrected_pose: Pose<T>) -> Option<Self> {
        let region = local_field.occupied_bounds()?;
        Some(Self { local_field, corrected_pose, region, mask_refined: true })
    }

    fn models_local_point(&self, p: crate::math::Vec3<T>) -> bool {
        if !self.region.contains(p) {
            return false;
        }
        if self.mask_refined {
            self.local_field.is_modeled(p)
        } else {
            true
        }
    }
}

/// One cached value: the client field evaluated at a global node pre-image.
#[derive(Debug, Clone)]
pub struct CachedNode<T> {
    pub node: usize,
    pub density: T,
    pub sh: [T; SH_PER_NODE],
}

/// Evaluates the client field at every global node whose position maps into
/// the client's modeled region through the inverse corrected pose. Nodes
/// outside the region are not emitted; an empty intersection yields an empty
/// list.
pub fn cache_region<T: Scalar>(update: &ClientUpdate<T>, global_grid: &VoxelField<T>) -> Vec<CachedNode<T>> {
    let inverse = update.corrected_pose.inverse();
    // Restrict the scan to the global-grid box the transformed region covers.
    let world_region = update.region.transformed(&update.corrected_pose);
    let Some(clip) = world_region.intersection(&global_grid.bounds()) else {
        return Vec::new();
    };
    let lo = global_grid.world_to_grid(clip.min);
    let hi = global_grid.world_to_grid(clip.max);
    let clamp = |v: T, max: usize| (v.as_f64().max(0.0) as usize).min(max - 1);
    let (x0, y0, z0) = (
        clamp(lo.x.ceil(), global_grid.dims[0]),
        clamp(lo.y.ceil(), global_grid.dims[1]),
        clamp(lo.z.ceil(), global_grid.dims[2]),
    );
    let (x1, y1, z1) = (
        clamp(hi.x.floor(), global_grid.dims[0]),
        clamp(hi.y.floor(), global_grid.dims[1]),
        clamp(hi.z.floor(), global_grid.dims[2]),
    );
    let mut cached = Vec::new();
    for iz in z0..=z1 {
        for iy in y0..=y1 {
            for ix in x0..=x1 {
                let node = global_grid.node_index(ix, iy, iz);
                let local = inverse.apply(global_grid.node_position(node));
                if !update.models_local_point(local) {
                    continue;
                }
                let (density, sh) = update.local_field.sample(local);
                cached.push(CachedNode { node, density, sh });
            }
        }
    }
    cached
}

/// Folds cached values into the model. The first write to a node assigns the
/// cached value directly; later writes apply `v <- eta v + (1 - eta) cached`.
pub fn ema_merge<T: Scalar>(model: &mut GlobalModel<T>, cached: &[CachedNode<T>]) {
    let eta = model.eta;
    let inv = T::one() - eta;
    for entry in cached {
        let node = entry.node;
        if model.update_count[node] == 0 {
            model.field.density[node] = entry.density;
            model.field.sh[node * SH_PER_NODE..(node + 1) * SH_PER_NODE].copy_from_slice(&entry.sh);
        } else {
            model.field.density[node] = eta * model.field.density[node] + inv * entry.density;
            for (m, &v) in entry.sh.iter().enumerate() {
                let slot = node * SH_PER_NODE + m;
                model.field.sh[slot] = eta * model.field.sh[slot] + inv * v;
            }
        }
        model.field.occupancy[node] = true;
        model.update_count[node] += 1;
    }
}

/// Cache-then-merge. Callers serialize aggregations through `&mut`, so
/// concurrent readers can never observe a partially merged model.
pub fn aggregate<T: Scalar>(model: &mut GlobalModel<T>, update: &ClientUpdate<T>) -> usize {
    let cached = cache_region(update, &model.field);
    ema_merge(model, &cached);
    cached.len()
}
