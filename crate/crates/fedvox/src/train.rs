//! Client-side training of a voxel field: photometric loss with analytic
//! gradients backpropagated through compositing, SH color decoding, softplus
//! density activation and trilinear interpolation, optimized with Adam.

use crate::error::{Error, Result};
use crate::field::{DensityMode, VoxelField, SH_PER_NODE};
use crate::geom::{sh_basis, Camera, Ray, SH_COUNT};
use crate::math::Vec3;
use crate::render::{ray_box_range, RaySamples, RgbImage};
use crate::scalar::{sigmoid, softplus_inv, Scalar};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

/// Shape of the trainable grid, in the client's local frame.
#[derive(Debug, Clone, Copy)]
pub struct GridGeometry<T> {
    pub origin: Vec3<T>,
    pub voxel_size: T,
    pub dims: [usize; 3],
}

#[derive(Debug, Clone)]
pub struct TrainConfig<T> {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_density: T,
    pub lr_sh: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub samples_per_ray: usize,
    pub seed: u64,
    pub grid: GridGeometry<T>,
}

impl<T: Scalar> TrainConfig<T> {
    pub fn new(grid: GridGeometry<T>) -> Self {
        Self {
            batch_size: 8192,
            epochs: 1,
            lr_density: T::of_f64(5e-2),
            lr_sh: T::of_f64(5e-2),
            beta1: T::of_f64(0.9),
            beta2: T::of_f64(0.999),
            eps: T::of_f64(1e-8),
            samples_per_ray: 512,
            seed: 0,
            grid,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.lr_density <= T::zero() || self.lr_sh <= T::zero() {
            return Err(Error::invalid("train config", "learning rates must be positive"));
        }
        let one = T::one();
        if self.beta1 <= T::zero() || self.beta1 >= one || self.beta2 <= T::zero() || self.beta2 >= one {
            return Err(Error::invalid("train config", "betas must lie in (0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("train config", "batch size must be positive"));
        }
        Ok(())
    }
}

/// A client's training views: images with relative poses in the client's
/// local frame.
#[derive(Debug, Clone)]
pub struct ClientDataset<T> {
    pub images: Vec<RgbImage<T>>,
    pub cameras: Vec<Camera<T>>,
}

impl<T: Scalar> ClientDataset<T> {
    pub fn new(images: Vec<RgbImage<T>>, cameras: Vec<Camera<T>>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if images.len() != cameras.len() {
            return Err(Error::invalid(
                "dataset",
                format!("{} images vs {} cameras", images.len(), cameras.len()),
            ));
        }
        for (img, cam) in images.iter().zip(&cameras) {
            if img.width != cam.width || img.height != cam.height {
                return Err(Error::invalid("dataset", "image resolution does not match camera"));
            }
            if !cam.pose.translation.is_finite() {
                return Err(Error::invalid("dataset", "camera pose is not finite"));
            }
        }
        Ok(Self { images, cameras })
    }

    pub fn pixel_count(&self) -> usize {
        self.images.iter().map(|i| (i.width * i.height) as usize).sum()
    }
}

/// One training ray with its frozen sample positions. Rays that miss the
/// grid keep `samples` empty and render black.
#[derive(Debug, Clone)]
pub struct BatchRay<T> {
    pub ray: Ray<T>,
    pub target: [T; 3],
    pub samples: Option<RaySamples<T>>,
}

#[derive(Debug, Clone)]
pub struct RayBatch<T> {
    pub entries: Vec<BatchRay<T>>,
}

impl<T: Scalar> RayBatch<T> {
    /// Freezes sample positions for a set of rays, clipped to the grid box.
    /// Positions are fixed at construction so the loss is a deterministic
    /// function of the field parameters.
    pub fn build(
        field: &VoxelField<T>,
        rays: Vec<(Ray<T>, [T; 3])>,
        samples_per_ray: usize,
        mut jitter: Option<&mut (dyn rand::RngCore + '_)>,
    ) -> Self {
        let bounds = field.bounds();
        let mut entries = Vec::with_capacity(rays.len());
        for (ray, target) in rays {
            let samples = match ray_box_range(&ray, &bounds) {
                Some((near, far)) => {
                    // Inset so floating-point noise cannot push boundary
                    // samples outside the trainable region.
                    let inset = (far - near) * T::of_f64(1e-6);
                    RaySamples::stratified(near + inset, far - inset, samples_per_ray, jitter.as_deref_mut()).ok()
                }
                None => None,
            };
            entries.push(BatchRay { ray, target, samples });
        }
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Dense gradients matching the field layout.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub density: Vec<T>,
    pub sh: Vec<T>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros(field: &VoxelField<T>) -> Self {
        Self {
            density: vec![T::zero(); field.density.len()],
            sh: vec![T::zero(); field.sh.len()],
        }
    }
}

/// Per-sample forward cache for one ray.
struct RayForward<T> {
    gathered: Vec<([usize; 8], [T; 8])>,
    logits: Vec<T>,
    alphas: Vec<T>,
    trans: Vec<T>,
    colors: Vec<[T; 3]>,
    color: [T; 3],
}

fn forward_ray<T: Scalar>(field: &VoxelField<T>, entry: &BatchRay<T>) -> Option<RayForward<T>> {
    let samples = entry.samples.as_ref()?;
    let basis = sh_basis(entry.ray.direction).ok()?;
    let n = samples.len();
    let mut fwd = RayForward {
        gathered: Vec::with_capacity(n),
        logits: Vec::with_capacity(n),
        alphas: Vec::with_capacity(n),
        trans: Vec::with_capacity(n + 1),
        colors: Vec::with_capacity(n),
        color: [T::zero(); 3],
    };
    let mut transmittance = T::one();
    fwd.trans.push(transmittance);
    for i in 0..n {
        let p = entry.ray.origin + entry.ray.direction * samples.positions[i];
        let nw = field.gather(p)?;
        let logit = field.interp_density_raw(&nw);
        let sigma = match field.mode {
            DensityMode::Logit => crate::scalar::softplus(logit),
            DensityMode::Activated => logit,
        };
        let coeffs = field.interp_sh(&nw);
        let mut color = [T::zero(); 3];
        for (ch, c) in color.iter_mut().enumerate() {
            let mut u = T::zero();
            for (m, &b) in basis.iter().enumerate() {
                u = u + coeffs[ch * SH_COUNT + m] * b;
            }
            *c = sigmoid(u);
        }
        let alpha = T::one() - (-sigma * samples.deltas[i]).exp();
        let w = transmittance * alpha;
        for ch in 0..3 {
            fwd.color[ch] = fwd.color[ch] + color[ch] * w;
        }
        transmittance = transmittance * (T::one() - alpha);
        fwd.gathered.push((nw.indices, nw.weights));
        fwd.logits.push(logit);
        fwd.alphas.push(alpha);
        fwd.trans.push(transmittance);
        fwd.colors.push(color);
    }
    Some(fwd)
}

fn ray_color<T: Scalar>(field: &VoxelField<T>, entry: &BatchRay<T>) -> [T; 3] {
    forward_ray(field, entry).map(|f| f.color).unwrap_or([T::zero(); 3])
}

/// Mean over the batch of the squared L2 color error.
pub fn photometric_loss<T: Scalar>(field: &VoxelField<T>, batch: &RayBatch<T>) -> T {
    let mut acc = T::zero();
    for entry in &batch.entries {
        let c = ray_color(field, entry);
        for ch in 0..3 {
            let d = c[ch] - entry.target[ch];
            acc = acc + d * d;
        }
    }
    acc / T::of_usize(batch.len().max(1))
}

/// Exact analytic gradient of [`photometric_loss`] with respect to every
/// touched node value; untouched nodes keep a zero gradient. Returns the
/// loss along with the gradients.
pub fn backward<T: Scalar>(field: &VoxelField<T>, batch: &RayBatch<T>) -> (T, Gradients<T>) {
    let mut grads = Gradients::zeros(field);
    let mut loss = T::zero();
    let inv_batch = T::one() / T::of_usize(batch.len().max(1));
    for entry in &batch.entries {
        let Some(fwd) = forward_ray(field, entry) else {
            for ch in 0..3 {
                let d = T::zero() - entry.target[ch];
                loss = loss + d * d * inv_batch;
            }
            continue;
        };
        let basis = sh_basis(entry.ray.direction).expect("batch rays carry unit directions");
        let samples = entry.samples.as_ref().expect("forward succeeded");
        let n = fwd.logits.len();
        // dL/dC per channel.
        let mut g = [T::zero(); 3];
        for ch in 0..3 {
            let d = fwd.color[ch] - entry.target[ch];
            loss = loss + d * d * inv_batch;
            g[ch] = T::two() * d * inv_batch;
        }
        // Back-to-front sweep with a suffix accumulator of downstream color.
        let mut suffix = [T::zero(); 3];
        for i in (0..n).rev() {
            let w = fwd.trans[i] * fwd.alphas[i];
            let (indices, weights) = fwd.gathered[i];
            // Color path: dL/d(coeff) = g * w * c(1-c) * basis.
            for ch in 0..3 {
                let c = fwd.colors[i][ch];
                let dc = g[ch] * w * c * (T::one() - c);
                if dc != T::zero() {
                    for (m, &b) in basis.iter().enumerate() {
                        let dcoef = dc * b;
                        for k in 0..8 {
                            let slot = indices[k] * SH_PER_NODE + ch * SH_COUNT + m;
                            grads.sh[slot] = grads.sh[slot] + dcoef * weights[k];
                        }
                    }
                }
            }
            // Density path: dC/dsigma_i = delta_i (T_{i+1} c_i - sum_{j>i} w_j c_j).
            let mut dsigma = T::zero();
            for ch in 0..3 {
                dsigma = dsigma + g[ch] * (fwd.trans[i + 1] * fwd.colors[i][ch] - suffix[ch]);
            }
            dsigma = dsigma * samples.deltas[i];
            let dlogit = match field.mode {
                DensityMode::Logit => dsigma * sigmoid(fwd.logits[i]),
                DensityMode::Activated => dsigma,
            };
            for k in 0..8 {
                grads.density[indices[k]] = grads.density[indices[k]] + dlogit * weights[k];
            }
            for ch in 0..3 {
                suffix[ch] = suffix[ch] + w * fwd.colors[i][ch];
            }
        }
    }
    (loss, grads)
}

/// Adam moment state for a field's parameters.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    m_density: Vec<T>,
    v_density: Vec<T>,
    m_sh: Vec<T>,
    v_sh: Vec<T>,
    step: u32,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(field: &VoxelField<T>) -> Self {
        Self {
            m_density: vec![T::zero(); field.density.len()],
            v_density: vec![T::zero(); field.density.len()],
            m_sh: vec![T::zero(); field.sh.len()],
            v_sh: vec![T::zero(); field.sh.len()],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u32 {
        self.step
    }
}

/// One Adam update with bias correction over both parameter grids.
pub fn adam_step<T: Scalar>(
    state: &mut AdamState<T>,
    field: &mut VoxelField<T>,
    grads: &Gradients<T>,
    config: &TrainConfig<T>,
) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = T::one() - config.beta1.powi(t);
    let bc2 = T::one() - config.beta2.powi(t);
    let update = |params: &mut [T], m: &mut [T], v: &mut [T], g: &[T], lr: T| {
        for i in 0..params.len() {
            m[i] = config.beta1 * m[i] + (T::one() - config.beta1) * g[i];
            v[i] = config.beta2 * v[i] + (T::one() - config.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + config.eps);
        }
    };
    update(&mut field.density, &mut state.m_density, &mut state.v_density, &grads.density, config.lr_density);
    update(&mut field.sh, &mut state.m_sh, &mut state.v_sh, &grads.sh, config.lr_sh);
}

#[derive(Debug, Clone, Copy)]
pub struct StepMetric {
    pub step: usize,
    pub loss: f64,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedClient<T> {
    pub field: VoxelField<T>,
    pub metrics: Vec<StepMetric>,
}

/// Density logit whose softplus is the near-empty initialization (0.01).
pub fn empty_space_logit<T: Scalar>() -> T {
    softplus_inv(T::of_f64(0.01))
}

/// Trains a field from scratch on the client's views.
///
/// Each epoch visits every training pixel exactly once in a seeded shuffled
/// order, in ceil(pixels / batch) steps. Nodes within one voxel of any
/// sampled ray point are marked occupied. Deterministic given the seed.
pub fn train_client<T: Scalar>(dataset: &ClientDataset<T>, config: &TrainConfig<T>) -> Result<TrainedClient<T>> {
    config.validate()?;
    let mut field = VoxelField::new(
        config.grid.origin,
        config.grid.voxel_size,
        config.grid.dims,
        DensityMode::Logit,
    )?;
    let init_logit = empty_space_logit::<T>();
    for v in &mut field.density {
        *v = init_logit;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut pixels: Vec<(u32, u32, u32)> = Vec::with_capacity(dataset.pixel_count());
    for (ci, cam) in dataset.cameras.iter().enumerate() {
        for py in 0..cam.height {
            for px in 0..cam.width {
                pixels.push((ci as u32, px, py));
            }
        }
    }

    let mut state = AdamState::new(&field);
    let mut metrics = Vec::new();
    let start = Instant::now();
    let mut step = 0usize;
    for _ in 0..config.epochs {
        pixels.shuffle(&mut rng);
        for chunk in pixels.chunks(config.batch_size) {
            let rays: Vec<(Ray<T>, [T; 3])> = chunk
                .iter()
                .map(|&(ci, px, py)| {
                    let cam = &dataset.cameras[ci as usize];
                    let ray = cam
                        .pixel_ray(T::of_usize(px as usize), T::of_usize(py as usize))
                        .expect("enumerated pixels are in bounds");
                    (ray, dataset.images[ci as usize].pixel(px, py))
                })
                .collect();
            let batch = RayBatch::build(&field, rays, config.samples_per_ray, Some(&mut rng));
            mark_occupancy(&mut field, &batch);
            let (loss, grads) = backward(&field, &batch);
            adam_step(&mut state, &mut field, &grads, config);
            step += 1;
            metrics.push(StepMetric {
                step,
                loss: loss.as_f64(),
                elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
            });
        }
    }
    Ok(TrainedClient { field, metrics })
}

/// Marks the 8 cell nodes around every sampled point as modeled.
fn mark_occupancy<T: Scalar>(field: &mut VoxelField<T>, batch: &RayBatch<T>) {
    for entry in &batch.entries {
        let Some(samples) = &entry.samples else { continue };
        for &s in &samples.positions {
            let p = entry.ray.origin + entry.ray.direction * s;
            if let Some(nw) = field.gather(p) {
                for idx in nw.indices {
                    field.occupancy[idx] = true;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::look_at;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn small_geometry() -> GridGeometry<f64> {
        GridGeometry { origin: Vec3::splat(-1.0), voxel_size: 2.0 / 3.0, dims: [4, 4, 4] }
    }

    fn random_field(rng: &mut ChaCha8Rng) -> VoxelField<f64> {
        let g = small_geometry();
        let mut f = VoxelField::new(g.origin, g.voxel_size, g.dims, DensityMode::Logit).unwrap();
        for v in &mut f.density {
            *v = rng.gen_range(-3.0..1.0);
        }
        for v in &mut f.sh {
            *v = rng.gen_range(-1.0..1.0);
        }
        f
    }

    fn random_batch(field: &VoxelField<f64>, rng: &mut ChaCha8Rng, rays: usize, samples: usize) -> RayBatch<f64> {
        let mut specs = Vec::new();
        for _ in 0..rays {
            let origin = Vec3::new(rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8), 3.0);
            let aim = Vec3::new(rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6), rng.gen_range(-0.5..0.5));
            let ray = Ray { origin, direction: (aim - origin).normalized() };
            let target = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
            specs.push((ray, target));
        }
        RayBatch::build(field, specs, samples, Some(rng))
    }

    /// Central finite differences of the photometric loss over every
    /// parameter. Independent of the analytic backward path.
    fn numeric_gradient(field: &VoxelField<f64>, batch: &RayBatch<f64>, h: f64) -> Gradients<f64> {
        let mut grads = Gradients::zeros(field);
        let mut probe = field.clone();
        for i in 0..field.density.len() {
            probe.density[i] = field.density[i] + h;
            let plus = photometric_loss(&probe, batch);
            probe.density[i] = field.density[i] - h;
            let minus = photometric_loss(&probe, batch);
            probe.density[i] = field.density[i];
            grads.density[i] = (plus - minus) / (2.0 * h);
        }
        for i in 0..field.sh.len() {
            probe.sh[i] = field.sh[i] + h;
            let plus = photometric_loss(&probe, batch);
            probe.sh[i] = field.sh[i] - h;
            let minus = photometric_loss(&probe, batch);
            probe.sh[i] = field.sh[i];
            grads.sh[i] = (plus - minus) / (2.0 * h);
        }
        grads
    }

    fn max_relative_error(analytic: &Gradients<f64>, numeric: &Gradients<f64>) -> f64 {
        let cmp = |a: f64, n: f64| (a - n).abs() / n.abs().max(1e-6);
        let mut worst: f64 = 0.0;
        for (&a, &n) in analytic.density.iter().zip(&numeric.density) {
            worst = worst.max(cmp(a, n));
        }
        for (&a, &n) in analytic.sh.iter().zip(&numeric.sh) {
            worst = worst.max(cmp(a, n));
        }
        worst
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..5 {
            let field = random_field(&mut rng);
            let batch = random_batch(&field, &mut rng, 8, 16);
            let (_, analytic) = backward(&field, &batch);
            let numeric = numeric_gradient(&field, &batch, 1e-4);
            let err = max_relative_error(&analytic, &numeric);
            assert!(err <= 1e-3, "trial {trial}: max relative error {err}");
        }
    }

    #[test]
    fn activated_mode_gradient_also_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let mut field = random_field(&mut rng);
        field.mode = DensityMode::Activated;
        for v in &mut field.density {
            *v = v.abs();
        }
        let batch = random_batch(&field, &mut rng, 4, 12);
        let (_, analytic) = backward(&field, &batch);
        let numeric = numeric_gradient(&field, &batch, 1e-4);
        assert!(max_relative_error(&analytic, &numeric) <= 1e-3);
    }

    #[test]
    fn zero_loss_batch_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let field = random_field(&mut rng);
        let mut batch = random_batch(&field, &mut rng, 6, 12);
        for entry in &mut batch.entries {
            entry.target = ray_color(&field, entry);
        }
        assert_eq!(photometric_loss(&field, &batch), 0.0);
        let (loss, grads) = backward(&field, &batch);
        assert_eq!(loss, 0.0);
        assert!(grads.density.iter().all(|&g| g == 0.0));
        assert!(grads.sh.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn unsampled_nodes_have_exactly_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let field = random_field(&mut rng);
        // One ray hugging the -x, -y corner.
        let ray = Ray {
            origin: Vec3::new(-0.9, -0.9, 1.5),
            direction: Vec3::new(0.0, 0.0, -1.0),
        };
        let batch = RayBatch::build(&field, vec![(ray, [1.0, 0.0, 0.0])], 8, None);
        let (_, grads) = backward(&field, &batch);
        let mut touched = std::collections::HashSet::new();
        for entry in &batch.entries {
            let samples = entry.samples.as_ref().unwrap();
            for &s in &samples.positions {
                let p = entry.ray.origin + entry.ray.direction * s;
                for idx in field.gather(p).unwrap().indices {
                    touched.insert(idx);
                }
            }
        }
        assert!(touched.len() < field.node_count());
        for idx in 0..field.node_count() {
            if !touched.contains(&idx) {
                assert_eq!(grads.density[idx], 0.0, "node {idx}");
                for m in 0..SH_PER_NODE {
                    assert_eq!(grads.sh[idx * SH_PER_NODE + m], 0.0);
                }
            }
        }
    }

    #[test]
    fn photometric_loss_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let g = small_geometry();
        // An all-empty field renders black.
        let black = VoxelField::new(g.origin, g.voxel_size, g.dims, DensityMode::Activated).unwrap();
        let mut batch = random_batch(&black, &mut rng, 10, 8);
        for entry in &mut batch.entries {
            entry.target = [1.0, 1.0, 1.0];
        }
        assert_relative_eq!(photometric_loss(&black, &batch), 3.0, epsilon = 1e-12);

        // Random batch against an independent forward + MSE oracle.
        let field = random_field(&mut rng);
        let batch = random_batch(&field, &mut rng, 10, 8);
        let mut oracle = 0.0;
        for entry in &batch.entries {
            let samples = entry.samples.as_ref().unwrap();
            let basis = sh_basis(entry.ray.direction).unwrap();
            let mut sigmas = Vec::new();
            let mut colors = Vec::new();
            for &s in &samples.positions {
                let p = entry.ray.origin + entry.ray.direction * s;
                let (sigma, coeffs) = field.sample(p);
                sigmas.push(sigma);
                colors.push(crate::render::sh_color_from_basis(&coeffs, &basis));
            }
            let out = crate::render::composite(&sigmas, &colors, &samples.deltas, &samples.positions, None);
            for ch in 0..3 {
                let d = out.color[ch] - entry.target[ch];
                oracle += d * d;
            }
        }
        oracle /= batch.len() as f64;
        assert_relative_eq!(photometric_loss(&field, &batch), oracle, epsilon = 1e-12);
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let mut field = random_field(&mut rng);
        let before = field.clone();
        let config = TrainConfig::new(small_geometry());
        let mut state = AdamState::new(&field);
        let grads = Gradients::zeros(&field);
        adam_step(&mut state, &mut field, &grads, &config);
        assert_eq!(field.density, before.density);
        assert_eq!(field.sh, before.sh);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn adam_first_step_matches_hand_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(48);
        let mut field = random_field(&mut rng);
        let before = field.clone();
        let config = TrainConfig::new(small_geometry());
        let mut state = AdamState::new(&field);
        let mut grads = Gradients::zeros(&field);
        let g = 0.37;
        for v in &mut grads.density {
            *v = g;
        }
        for v in &mut grads.sh {
            *v = -g;
        }
        adam_step(&mut state, &mut field, &grads, &config);
        // t = 1: m_hat = g, v_hat = g^2, update = -lr g / (|g| + eps).
        let expected = config.lr_density * g / (g.abs() + config.eps);
        for (after, beforev) in field.density.iter().zip(&before.density) {
            assert_relative_eq!(beforev - after, expected, epsilon = 1e-12);
        }
        for (after, beforev) in field.sh.iter().zip(&before.sh) {
            assert_relative_eq!(after - beforev, expected, epsilon = 1e-12);
        }
    }

    fn tiny_dataset() -> (ClientDataset<f64>, TrainConfig<f64>) {
        // Solid-color scene: opaque uniform red fog fills the grid.
        let g = GridGeometry { origin: Vec3::splat(-1.0), voxel_size: 0.25, dims: [9, 9, 9] };
        let mut truth = VoxelField::new(g.origin, g.voxel_size, g.dims, DensityMode::Activated).unwrap();
        let red_dc = crate::scalar::logit(0.8) / 0.28209479177387814;
        let dim_dc = crate::scalar::logit(0.3) / 0.28209479177387814;
        for idx in 0..truth.node_count() {
            truth.density[idx] = 30.0;
            truth.sh[idx * SH_PER_NODE] = red_dc;
            truth.sh[idx * SH_PER_NODE + 9] = dim_dc;
            truth.sh[idx * SH_PER_NODE + 18] = dim_dc;
        }
        let opts = crate::render::RenderOpts::with_samples(32);
        let mut images = Vec::new();
        let mut cameras = Vec::new();
        for k in 0..3 {
            let angle = k as f64 * 2.1;
            let eye = Vec3::new(3.0 * angle.cos(), 3.0 * angle.sin(), 2.0);
            let cam = Camera::from_fov(16, 16, 0.7, look_at(eye, Vec3::zeros())).unwrap();
            let (rgb, _) = crate::render::render_image(&truth, &cam, &opts);
            images.push(rgb);
            cameras.push(cam);
        }
        let mut config = TrainConfig::new(g);
        config.batch_size = 256;
        config.epochs = 80;
        config.lr_density = 0.15;
        config.lr_sh = 0.15;
        config.samples_per_ray = 32;
        config.seed = 9;
        (ClientDataset::new(images, cameras).unwrap(), config)
    }

    #[test]
    fn training_recovers_solid_color_scene() {
        let (dataset, config) = tiny_dataset();
        let trained = train_client(&dataset, &config).unwrap();
        let opts = crate::render::RenderOpts::with_samples(32);
        let mut worst = f64::INFINITY;
        for (img, cam) in dataset.images.iter().zip(&dataset.cameras) {
            let (rendered, _) = crate::render::render_image(&trained.field, cam, &opts);
            worst = worst.min(crate::render::psnr(&rendered, img).unwrap());
        }
        assert!(worst >= 30.0, "training-view PSNR {worst}");
    }

    #[test]
    fn zero_epochs_leaves_field_at_initialization() {
        let (dataset, mut config) = tiny_dataset();
        config.epochs = 0;
        let trained = train_client(&dataset, &config).unwrap();
        let init = empty_space_logit::<f64>();
        assert!(trained.field.density.iter().all(|&v| v == init));
        assert!(trained.field.sh.iter().all(|&v| v == 0.0));
        assert!(trained.metrics.is_empty());
    }

    #[test]
    fn training_is_deterministic_given_seed() {
        let (dataset, mut config) = tiny_dataset();
        config.epochs = 2;
        let a = train_client(&dataset, &config).unwrap();
        let b = train_client(&dataset, &config).unwrap();
        assert_eq!(a.field.density, b.field.density);
        assert_eq!(a.field.sh, b.field.sh);
        assert_eq!(a.field.occupancy, b.field.occupancy);
    }

    #[test]
    fn training_loss_trends_down_in_windows() {
        let (dataset, mut config) = tiny_dataset();
        config.epochs = 40;
        let trained = train_client(&dataset, &config).unwrap();
        let losses: Vec<f64> = trained.metrics.iter().map(|m| m.loss).collect();
        let window = 100.min(losses.len() / 2);
        let averages: Vec<f64> = losses
            .chunks(window)
            .filter(|c| c.len() == window)
            .map(|c| c.iter().sum::<f64>() / window as f64)
            .collect();
        assert!(averages.len() >= 2);
        for pair in averages.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-4, "window averages rose: {} -> {}", pair[0], pair[1]);
        }
    }

    #[test]
    fn steps_per_epoch_is_ceil_pixels_over_batch() {
        let (dataset, mut config) = tiny_dataset();
        config.epochs = 1;
        config.batch_size = 300;
        let trained = train_client(&dataset, &config).unwrap();
        let pixels = dataset.pixel_count();
        assert_eq!(trained.metrics.len(), pixels.div_ceil(300));
    }


    #[test]
    fn empty_dataset_is_rejected() {
        assert!(ClientDataset::<f64>::new(vec![], vec![]).is_err());
    }
}
