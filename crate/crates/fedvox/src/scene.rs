//! Procedural ground-truth scenes, camera trajectories, the k-nearest-
//! neighbor client partitioning protocol, local-frame re-expression and
//! global-pose noise injection.

use crate::error::{Error, Result};
use crate::field::{DensityMode, RegionBounds, VoxelField, SH_PER_NODE};
use crate::geom::{look_at, random_pose_noise, Camera, Pose};
use crate::math::Vec3;
use crate::render::{render_image, RenderOpts, RgbImage};
use crate::scalar::{logit, Scalar};
use crate::train::ClientDataset;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// DC coefficient that decodes to the given channel value through
/// sigmoid(Y00 * k).
pub fn dc_for_channel<T: Scalar>(value: T) -> T {
    logit(value) / T::of_f64(0.282_094_791_773_878_14)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PrimitiveShape<T> {
    Box { half_extent: Vec3<T> },
    Sphere { radius: T },
}

#[derive(Debug, Clone, Copy)]
pub struct Primitive<T> {
    pub shape: PrimitiveShape<T>,
    pub center: Vec3<T>,
    pub density: T,
    pub color: [T; 3],
    /// Degree-1 SH coefficient added per channel for a mild view tint.
    pub tint: T,
}

impl<T: Scalar> Primitive<T> {
    pub fn contains(&self, p: Vec3<T>) -> bool {
        match self.shape {
            PrimitiveShape::Box { half_extent } => {
                let d = p - self.center;
                d.x.abs() <= half_extent.x && d.y.abs() <= half_extent.y && d.z.abs() <= half_extent.z
            }
            PrimitiveShape::Sphere { radius } => (p - self.center).norm_squared() <= radius * radius,
        }
    }
}

/// Checker-textured ground plane; reproduces the repetitive-pattern
/// alignment failure mode.
#[derive(Debug, Clone, Copy)]
pub struct CheckerSpec<T> {
    /// Tile edge length in meters.
    pub period: T,
    pub color_a: [T; 3],
    pub color_b: [T; 3],
    /// Slab thickness in meters.
    pub thickness: T,
}

#[derive(Debug, Clone)]
pub struct SceneSpec<T> {
    pub seed: u64,
    pub bounds: RegionBounds<T>,
    /// Node count along the longest axis; other axes scale by extent.
    pub grid_dim: usize,
    pub n_boxes: usize,
    pub n_spheres: usize,
    /// Density assigned inside primitives.
    pub density: T,
    /// Add a small degree-1 view tint to primitive colors.
    pub tint: bool,
    /// Flat ground slab across the scene floor.
    pub terrain: bool,
    pub checker: Option<CheckerSpec<T>>,
}

impl<T: Scalar> SceneSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if self.density <= T::zero() {
            return Err(Error::invalid("scene", "primitive density must be positive"));
        }
        if self.grid_dim < 2 {
            return Err(Error::invalid("scene", "grid_dim must be at least 2"));
        }
        Ok(())
    }

    /// Node spacing implied by the bounds and grid_dim.
    pub fn voxel_size(&self) -> T {
        let e = self.bounds.extent();
        let longest = e.x.max(e.y).max(e.z);
        longest / T::of_usize(self.grid_dim - 1)
    }

    pub fn grid_dims(&self) -> [usize; 3] {
        let v = self.voxel_size();
        let e = self.bounds.extent();
        let count = |len: T| ((len / v).as_f64().floor() as usize + 1).max(2);
        [count(e.x), count(e.y), count(e.z)]
    }

    /// The primitives this spec deterministically expands to.
    pub fn primitives(&self) -> Vec<Primitive<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let e = self.bounds.extent();
        let min_extent = e.x.min(e.y).min(e.z).as_f64();
        let mut prims = Vec::new();
        let mut rand_color = |rng: &mut ChaCha8Rng| {
            [
                T::of_f64(rng.gen_range(0.15..0.85)),
                T::of_f64(rng.gen_range(0.15..0.85)),
                T::of_f64(rng.gen_range(0.15..0.85)),
            ]
        };
        for i in 0..self.n_boxes + self.n_spheres {
            // Keep primitive centers away from the walls so shapes stay inside.
            let margin = 0.18;
            let center = Vec3::new(
                T::of_f64(rng.gen_range(margin..1.0 - margin) * e.x.as_f64()) + self.bounds.min.x,
                T::of_f64(rng.gen_range(margin..1.0 - margin) * e.y.as_f64()) + self.bounds.min.y,
                T::of_f64(rng.gen_range(0.05..0.55) * e.z.as_f64()) + self.bounds.min.z,
            );
            let size = rng.gen_range(0.04..0.12) * min_extent;
            let shape = if i < self.n_boxes {
                PrimitiveShape::Box {
                    half_extent: Vec3::new(
                        T::of_f64(size * rng.gen_range(0.6..1.6)),
                        T::of_f64(size * rng.gen_range(0.6..1.6)),
                        T::of_f64(size * rng.gen_range(0.6..1.6)),
                    ),
                }
            } else {
                PrimitiveShape::Sphere { radius: T::of_f64(size) }
            };
            let tint = if self.tint { T::of_f64(rng.gen_range(-0.4..0.4)) } else { T::zero() };
            prims.push(Primitive { shape, center, density: self.density, color: rand_color(&mut rng), tint });
        }
        prims
    }
}

/// Voxelizes the spec onto an activated ground-truth grid. Deterministic
/// given the seed; later primitives overwrite earlier ones where they overlap.
pub fn build_scene<T: Scalar>(spec: &SceneSpec<T>) -> Result<VoxelField<T>> {
    spec.validate()?;
    build_scene_in_frame(spec, Vec3::zeros())
}

/// Same scene content expressed in a frame translated by `-frame_origin`:
/// voxelizing in the local frame directly avoids any resampling error.
pub fn build_scene_in_frame<T: Scalar>(spec: &SceneSpec<T>, frame_origin: Vec3<T>) -> Result<VoxelField<T>> {
    let dims = spec.grid_dims();
    let mut field = VoxelField::new(
        spec.bounds.min - frame_origin,
        spec.voxel_size(),
        dims,
        DensityMode::Activated,
    )?;
    let prims = spec.primitives();
    let floor_top = spec.bounds.min.z + spec.bounds.extent().z * T::of_f64(0.08);
    for idx in 0..field.node_count() {
        // World position of the node regardless of the expression frame.
        let p = field.node_position(idx) + frame_origin;
        let mut value: Option<(T, [T; 3], T)> = None;
        if spec.terrain && p.z <= floor_top {
            value = Some((spec.density, [T::of_f64(0.45), T::of_f64(0.4), T::of_f64(0.3)], T::zero()));
        }
        if let Some(ch) = &spec.checker {
            if p.z <= spec.bounds.min.z + ch.thickness {
                let tile = ((p.x / ch.period).floor() + (p.y / ch.period).floor()).as_f64() as i64;
                let color = if tile.rem_euclid(2) == 0 { ch.color_a } else { ch.color_b };
                value = Some((spec.density, color, T::zero()));
            }
        }
        for prim in &prims {
            if prim.contains(p) {
                value = Some((prim.density, prim.color, prim.tint));
            }
        }
        if let Some((density, color, tint)) = value {
            field.density[idx] = density;
            field.occupancy[idx] = true;
            for ch in 0..3 {
                field.sh[idx * SH_PER_NODE + ch * 9] = dc_for_channel(color[ch]);
                if tint != T::zero() {
                    // Mild vertical view dependence on the Y10 term.
                    field.sh[idx * SH_PER_NODE + ch * 9 + 2] = tint;
                }
            }
        }
    }
    Ok(field)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryPattern {
    Orbit,
    GridSweep,
}

#[derive(Debug, Clone, Copy)]
pub struct TrajectorySpec<T> {
    pub pattern: TrajectoryPattern,
    pub n_views: usize,
    /// Camera height above the scene's top face.
    pub height: T,
    /// Orbit radius as a fraction of the larger horizontal extent.
    pub radius_factor: T,
    pub width: u32,
    pub height_px: u32,
    pub fov_y_rad: T,
}

/// Aerial cameras above the scene looking down or inward.
pub fn generate_trajectory<T: Scalar>(
    bounds: &RegionBounds<T>,
    traj: &TrajectorySpec<T>,
) -> Result<Vec<Camera<T>>> {
    if traj.n_views == 0 {
        return Err(Error::invalid("trajectory", "need at least one view"));
    }
    let center = bounds.center();
    let e = bounds.extent();
    let top = bounds.max.z + traj.height;
    let mut cams = Vec::with_capacity(traj.n_views);
    match traj.pattern {
        TrajectoryPattern::Orbit => {
            let radius = e.x.max(e.y) * traj.radius_factor;
            for i in 0..traj.n_views {
                let angle = T::of_usize(i) * T::TAU() / T::of_usize(traj.n_views);
                let eye = Vec3::new(
                    center.x + radius * angle.cos(),
                    center.y + radius * angle.sin(),
                    top,
                );
                let target = Vec3::new(center.x, center.y, bounds.min.z + e.z * T::half());
                cams.push(Camera::from_fov(traj.width, traj.height_px, traj.fov_y_rad, look_at(eye, target))?);
            }
        }
        TrajectoryPattern::GridSweep => {
            // Near-square lattice of nadir views covering the footprint.
            let cols = (traj.n_views as f64).sqrt().ceil() as usize;
            let rows = traj.n_views.div_ceil(cols);
            let mut placed = 0;
            for r in 0..rows {
                for c in 0..cols {
                    if placed == traj.n_views {
                        break;
                    }
                    let fx = (c as f64 + 0.5) / cols as f64;
                    let fy = (r as f64 + 0.5) / rows as f64;
                    let eye = Vec3::new(
                        bounds.min.x + e.x * T::of_f64(fx),
                        bounds.min.y + e.y * T::of_f64(fy),
                        top,
                    );
                    let target = Vec3::new(eye.x, eye.y, bounds.min.z);
                    cams.push(Camera::from_fov(traj.width, traj.height_px, traj.fov_y_rad, look_at(eye, target))?);
                    placed += 1;
                }
            }
        }
    }
    Ok(cams)
}

/// One client's slice of the data plus its frame relationship to the world.
#[derive(Debug, Clone)]
pub struct ClientAssignment<T> {
    pub client_id: usize,
    pub anchor: usize,
    pub image_indices: Vec<usize>,
    /// Maps the client's local frame into the global frame.
    pub true_global_pose: Pose<T>,
    /// What the client claims before alignment (true pose plus sensor noise).
    pub noisy_global_pose: Pose<T>,
}

/// The data-ownership protocol: per client, pick a random anchor image, a
/// random k in `k_range`, and own the k cameras nearest to the anchor
/// (anchor included). Clients are drawn independently and may overlap.
pub fn partition_clients<T: Scalar, R: Rng>(
    cameras: &[Camera<T>],
    n_clients: usize,
    k_range: (usize, usize),
    rng: &mut R,
) -> Result<Vec<ClientAssignment<T>>> {
    let (k_min, k_max) = k_range;
    if n_clients == 0 || k_min == 0 || k_min > k_max {
        return Err(Error::invalid("partition", format!("bad n_clients {n_clients} or k range {k_min}..{k_max}")));
    }
    if k_max > cameras.len() {
        return Err(Error::BadPartition { k_max, cameras: cameras.len() });
    }
    let mut assignments = Vec::with_capacity(n_clients);
    for client_id in 0..n_clients {
        let anchor = rng.gen_range(0..cameras.len());
        let k = rng.gen_range(k_min..=k_max);
        let anchor_pos = cameras[anchor].position();
        let mut by_distance: Vec<(usize, T)> = cameras
            .iter()
            .enumerate()
            .map(|(i, c)| (i, (c.position() - anchor_pos).norm()))
            .collect();
        by_distance.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        let image_indices: Vec<usize> = by_distance.iter().take(k).map(|&(i, _)| i).collect();
        let true_global_pose = Pose::from_translation(anchor_pos);
        assignments.push(ClientAssignment {
            client_id,
            anchor,
            image_indices,
            true_global_pose,
            noisy_global_pose: true_global_pose,
        });
    }
    Ok(assignments)
}

/// Re-expresses the client's cameras in its local frame: an axis-aligned
/// frame whose origin is the anchor camera position. Returns the local
/// cameras in `image_indices` order.
pub fn localize_client<T: Scalar>(
    assignment: &ClientAssignment<T>,
    cameras: &[Camera<T>],
) -> Vec<Camera<T>> {
    let offset = assignment.true_global_pose.translation;
    assignment
        .image_indices
        .iter()
        .map(|&i| {
            let mut cam = cameras[i];
            cam.pose.translation = cam.pose.translation - offset;
            cam
        })
        .collect()
}

/// Applies sensor noise to the claimed global pose. The perturbation is
/// composed on the local side so the initial translation and rotation errors
/// are bounded by the sampled ranges themselves.
pub fn inject_pose_noise<T: Scalar, R: Rng>(
    assignment: &mut ClientAssignment<T>,
    rng: &mut R,
    max_trans: T,
    max_rot_deg: T,
) -> Pose<T> {
    let noise = random_pose_noise(rng, max_trans, max_rot_deg);
    assignment.noisy_global_pose = Pose::compose(&assignment.true_global_pose, &noise);
    noise
}

/// Renders ground-truth views for the given global-frame cameras.
pub fn render_views<T: Scalar>(
    ground_truth: &VoxelField<T>,
    cameras: &[Camera<T>],
    opts: &RenderOpts<T>,
) -> Vec<RgbImage<T>> {
    cameras.iter().map(|cam| render_image(ground_truth, cam, opts).0).collect()
}

/// Builds a client's training dataset: images rendered through the ground
/// truth from the client's global-frame views, paired with the local-frame
/// cameras the client actually knows.
pub fn render_client_dataset<T: Scalar>(
    ground_truth: &VoxelField<T>,
    assignment: &ClientAssignment<T>,
    cameras: &[Camera<T>],
    opts: &RenderOpts<T>,
) -> Result<ClientDataset<T>> {
    let global_cams: Vec<Camera<T>> = assignment.image_indices.iter().map(|&i| cameras[i]).collect();
    let images = render_views(ground_truth, &global_cams, opts);
    let local_cams = localize_client(assignment, cameras);
    ClientDataset::new(images, local_cams)
}
