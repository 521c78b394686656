//! Volumetric rendering of RGB and depth from a voxel field: front-to-back
//! alpha compositing of SH-decoded sample colors, plus PSNR.

use crate::error::{Error, Result};
use crate::field::{VoxelField, SH_PER_NODE};
use crate::geom::{sh_basis, Camera, Ray, SH_COUNT};
use crate::math::Vec3;
use crate::scalar::{sigmoid, Scalar};
use rand::Rng;
use rayon::prelude::*;

/// Ordered sample positions and spacings along a ray.
#[derive(Debug, Clone)]
pub struct RaySamples<T> {
    /// Distances from the ray origin, strictly ascending.
    pub positions: Vec<T>,
    /// `deltas[i] = positions[i+1] - positions[i]`; the last spacing repeats
    /// the previous one.
    pub deltas: Vec<T>,
}

impl<T: Scalar> RaySamples<T> {
    /// Stratified sampling of `[near, far)` into `n` equal bins: bin centers
    /// without jitter, one uniform draw per bin with it.
    pub fn stratified(near: T, far: T, n: usize, jitter: Option<&mut (dyn rand::RngCore + '_)>) -> Result<Self> {
        if near < T::zero() || near >= far {
            return Err(Error::BadSampleRange { near: near.as_f64(), far: far.as_f64() });
        }
        if n < 2 {
            return Err(Error::invalid("ray samples", format!("need at least 2 samples, got {n}")));
        }
        let h = (far - near) / T::of_usize(n);
        let mut positions = Vec::with_capacity(n);
        match jitter {
            Some(rng) => {
                for i in 0..n {
                    let u = T::of_f64(rng.gen_range(0.0..1.0));
                    positions.push(near + (T::of_usize(i) + u) * h);
                }
            }
            None => {
                for i in 0..n {
                    positions.push(near + (T::of_usize(i) + T::half()) * h);
                }
            }
        }
        let mut deltas = Vec::with_capacity(n);
        for i in 0..n - 1 {
            deltas.push(positions[i + 1] - positions[i]);
        }
        deltas.push(deltas[n - 2]);
        Ok(Self { positions, deltas })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Result of compositing one ray.
#[derive(Debug, Clone)]
pub struct RenderOutput<T> {
    pub color: [T; 3],
    pub depth: T,
    /// 1 - final transmittance.
    pub opacity: T,
    /// Per-sample compositing weights, retained for backprop and depth.
    pub weights: Vec<T>,
}

impl<T: Scalar> RenderOutput<T> {
    pub fn empty() -> Self {
        Self { color: [T::zero(); 3], depth: T::zero(), opacity: T::zero(), weights: Vec::new() }
    }
}

/// View-dependent RGB from 27 SH coefficients: per channel, sigmoid of the
/// dot product between the 9 basis values and that channel's coefficients.
pub fn sh_color<T: Scalar>(coeffs: &[T; SH_PER_NODE], direction: Vec3<T>) -> Result<[T; 3]> {
    Ok(sh_color_from_basis(coeffs, &sh_basis(direction)?))
}

pub fn sh_color_from_basis<T: Scalar>(coeffs: &[T; SH_PER_NODE], basis: &[T; SH_COUNT]) -> [T; 3] {
    let mut out = [T::zero(); 3];
    for (ch, o) in out.iter_mut().enumerate() {
        let mut u = T::zero();
        for (m, &b) in basis.iter().enumerate() {
            u = u + coeffs[ch * SH_COUNT + m] * b;
        }
        *o = sigmoid(u);
    }
    out
}

/// Front-to-back compositing of `(sigma, color, delta, position)` samples.
///
/// `cutoff` stops the march once transmittance drops below it; the telescoped
/// weight identity (sum of weights + final transmittance = 1) is preserved
/// either way.
pub fn composite<T: Scalar>(
    sigmas: &[T],
    colors: &[[T; 3]],
    deltas: &[T],
    positions: &[T],
    cutoff: Option<T>,
) -> RenderOutput<T> {
    let n = sigmas.len();
    debug_assert_eq!(colors.len(), n);
    debug_assert_eq!(deltas.len(), n);
    debug_assert_eq!(positions.len(), n);
    let mut weights = vec![T::zero(); n];
    let mut color = [T::zero(); 3];
    let mut depth = T::zero();
    let mut transmittance = T::one();
    for i in 0..n {
        let alpha = T::one() - (-sigmas[i] * deltas[i]).exp();
        let w = transmittance * alpha;
        weights[i] = w;
        for ch in 0..3 {
            color[ch] = color[ch] + colors[i][ch] * w;
        }
        depth = depth + positions[i] * w;
        transmittance = transmittance * (T::one() - alpha);
        if let Some(c) = cutoff {
            if transmittance < c {
                break;
            }
        }
    }
    RenderOutput { color, depth, opacity: T::one() - transmittance, weights }
}

/// Expected ray depth: the compositing weights applied to the sample
/// positions, unnormalized by opacity.
pub fn composite_depth<T: Scalar>(sigmas: &[T], deltas: &[T], positions: &[T]) -> T {
    let mut depth = T::zero();
    let mut transmittance = T::one();
    for i in 0..sigmas.len() {
        let alpha = T::one() - (-sigmas[i] * deltas[i]).exp();
        depth = depth + positions[i] * transmittance * alpha;
        transmittance = transmittance * (T::one() - alpha);
    }
    depth
}

/// Rendering knobs; `samples` defaults to 512 per ray.
#[derive(Debug, Clone, Copy)]
pub struct RenderOpts<T> {
    pub samples: usize,
    /// Stop marching once transmittance falls below this.
    pub cutoff: Option<T>,
}

impl<T: Scalar> Default for RenderOpts<T> {
    fn default() -> Self {
        Self { samples: 512, cutoff: Some(T::of_f64(1e-7)) }
    }
}

impl<T: Scalar> RenderOpts<T> {
    pub fn with_samples(samples: usize) -> Self {
        Self { samples, ..Self::default() }
    }
}

/// Entry/exit distances of a ray against an axis-aligned box, clamped to
/// t >= 0. `None` when the ray misses.
pub fn ray_box_range<T: Scalar>(ray: &Ray<T>, bounds: &crate::field::RegionBounds<T>) -> Option<(T, T)> {
    let mut tmin = T::zero();
    let mut tmax = T::infinity();
    for a in 0..3 {
        let o = ray.origin[a];
        let d = ray.direction[a];
        if d.abs() < T::of_f64(1e-12) {
            if o < bounds.min[a] || o > bounds.max[a] {
                return None;
            }
            continue;
        }
        let inv = T::one() / d;
        let (t0, t1) = {
            let ta = (bounds.min[a] - o) * inv;
            let tb = (bounds.max[a] - o) * inv;
            if ta < tb { (ta, tb) } else { (tb, ta) }
        };
        tmin = tmin.max(t0);
        tmax = tmax.min(t1);
        if tmin > tmax {
            return None;
        }
    }
    if tmax <= tmin {
        return None;
    }
    Some((tmin, tmax))
}

/// Marches one ray through the field: AABB-clipped stratified samples at bin
/// centers, trilinear field lookups, SH color decoding, compositing.
pub fn render_ray<T: Scalar>(field: &VoxelField<T>, ray: &Ray<T>, opts: &RenderOpts<T>) -> RenderOutput<T> {
    let Some((near, far)) = ray_box_range(ray, &field.bounds()) else {
        return RenderOutput::empty();
    };
    let Ok(samples) = RaySamples::stratified(near, far, opts.samples, None) else {
        return RenderOutput::empty();
    };
    let basis = match sh_basis(ray.direction) {
        Ok(b) => b,
        Err(_) => return RenderOutput::empty(),
    };
    let n = samples.len();
    let mut sigmas = Vec::with_capacity(n);
    let mut colors = Vec::with_capacity(n);
    for i in 0..n {
        let p = ray.origin + ray.direction * samples.positions[i];
        let (sigma, coeffs) = field.sample(p);
        sigmas.push(sigma);
        colors.push(sh_color_from_basis(&coeffs, &basis));
    }
    composite(&sigmas, &colors, &samples.deltas, &samples.positions, opts.cutoff)
}

pub fn render_pixel<T: Scalar>(
    field: &VoxelField<T>,
    cam: &Camera<T>,
    px: T,
    py: T,
    opts: &RenderOpts<T>,
) -> Result<RenderOutput<T>> {
    let ray = cam.pixel_ray(px, py)?;
    Ok(render_ray(field, &ray, opts))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage<T> {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<[T; 3]>,
}

impl<T: Scalar> RgbImage<T> {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, pixels: vec![[T::zero(); 3]; (width * height) as usize] }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [T; 3] {
        self.pixels[(y * self.width + x) as usize]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage<T> {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<T>,
}

/// Renders all pixels of the camera. Pixels are partitioned across worker
/// threads by row; each pixel is written to its own slot, so the output is
/// bit-identical to a single-threaded render.
pub fn render_image<T: Scalar>(
    field: &VoxelField<T>,
    cam: &Camera<T>,
    opts: &RenderOpts<T>,
) -> (RgbImage<T>, DepthImage<T>) {
    let (w, h) = (cam.width, cam.height);
    let mut rgb = RgbImage::new(w, h);
    let mut depth = DepthImage { width: w, height: h, pixels: vec![T::zero(); (w * h) as usize] };
    rgb.pixels
        .par_chunks_mut(w as usize)
        .zip(depth.pixels.par_chunks_mut(w as usize))
        .enumerate()
        .for_each(|(py, (rgb_row, depth_row))| {
            for px in 0..w as usize {
                let out = render_pixel(field, cam, T::of_usize(px), T::of_usize(py), opts)
                    .expect("pixel iteration stays in bounds");
                rgb_row[px] = out.color;
                depth_row[px] = out.depth;
            }
        });
    (rgb, depth)
}

/// Peak signal-to-noise ratio in dB for unit-range images; identical images
/// report the 99 dB sentinel.
pub fn psnr<T: Scalar>(rendered: &RgbImage<T>, reference: &RgbImage<T>) -> Result<T> {
    if rendered.width != reference.width || rendered.height != reference.height {
        return Err(Error::DimensionMismatch {
            a_width: rendered.width,
            a_height: rendered.height,
            b_width: reference.width,
            b_height: reference.height,
        });
    }
    mse_to_psnr(mse(&rendered.pixels, &reference.pixels))
}

/// PSNR over the right half of each image only (columns >= width / 2).
pub fn psnr_right_half<T: Scalar>(rendered: &RgbImage<T>, reference: &RgbImage<T>) -> Result<T> {
    if rendered.width != reference.width || rendered.height != reference.height {
        return Err(Error::DimensionMismatch {
            a_width: rendered.width,
            a_height: rendered.height,
            b_width: reference.width,
            b_height: reference.height,
        });
    }
    let half = rendered.width / 2;
    let mut acc = T::zero();
    let mut count = 0usize;
    for y in 0..rendered.height {
        for x in half..rendered.width {
            let a = rendered.pixel(x, y);
            let b = reference.pixel(x, y);
            for ch in 0..3 {
                let d = a[ch] - b[ch];
                acc = acc + d * d;
            }
            count += 3;
        }
    }
    mse_to_psnr(acc / T::of_usize(count))
}

fn mse<T: Scalar>(a: &[[T; 3]], b: &[[T; 3]]) -> T {
    let mut acc = T::zero();
    for (pa, pb) in a.iter().zip(b) {
        for ch in 0..3 {
            let d = pa[ch] - pb[ch];
            acc = acc + d * d;
        }
    }
    acc / T::of_usize(a.len() * 3)
}

fn mse_to_psnr<T: Scalar>(mse: T) -> Result<T> {
    if mse == T::zero() {
        return Ok(T::of_f64(99.0));
    }
    Ok(T::of_f64(10.0) * (T::one() / mse).log10())
}
