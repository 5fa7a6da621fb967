//! Random smooth surfaces and scene rendering.
//!
//! A surface is uniform noise of random amplitude, blurred by a separable
//! Gaussian of random width and min-max rescaled into a target depth range.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fringe::{render_set, FringeImage, FringeSet, RenderParams};
use crate::rng;

/// Per-pixel depth field, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    width: usize,
    height: usize,
    depth: Vec<f64>,
    depth_range: (f64, f64),
}

impl Surface {
    /// Wraps a depth field; the recorded range is its own min/max.
    pub fn from_depth(width: usize, height: usize, depth: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("surface must have nonzero area"));
        }
        if depth.len() != width * height {
            return Err(Error::shape(format!(
                "surface {width}x{height} needs {} values, got {}",
                width * height,
                depth.len()
            )));
        }
        if depth.iter().any(|z| !z.is_finite()) {
            return Err(Error::invalid("surface depth must be finite"));
        }
        let range = min_max(&depth);
        Ok(Self {
            width,
            height,
            depth,
            depth_range: range,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depth(&self) -> &[f64] {
        &self.depth
    }

    pub fn depth_range(&self) -> (f64, f64) {
        self.depth_range
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.depth[y * self.width + x]
    }

    /// A copy shifted by a constant depth.
    pub fn offset(&self, dz: f64) -> Surface {
        Surface {
            width: self.width,
            height: self.height,
            depth: self.depth.iter().map(|z| z + dz).collect(),
            depth_range: (self.depth_range.0 + dz, self.depth_range.1 + dz),
        }
    }
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
            (lo.min(*x), hi.max(*x))
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurfaceGenConfig {
    pub seed: u64,
    /// Open interval the noise amplitude is drawn from.
    pub amplitude_range: (f64, f64),
    /// Open interval the Gaussian standard deviation (pixels) is drawn from.
    pub sigma_range: (f64, f64),
    pub depth_range: (f64, f64),
    pub width: usize,
    pub height: usize,
}

impl Default for SurfaceGenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            amplitude_range: (5.0, 55.0),
            sigma_range: (2.0, 125.0),
            depth_range: (0.0, std::f64::consts::TAU),
            width: 64,
            height: 64,
        }
    }
}

impl SurfaceGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid(format!(
                "surface size {}x{} has zero area",
                self.width, self.height
            )));
        }
        for (name, (lo, hi)) in [
            ("amplitude", self.amplitude_range),
            ("sigma", self.sigma_range),
        ] {
            if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                return Err(Error::invalid(format!(
                    "{name} range ({lo}, {hi}) must be positive and nonempty"
                )));
            }
        }
        let (lo, hi) = self.depth_range;
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::invalid(format!(
                "depth range ({lo}, {hi}) must satisfy min < max"
            )));
        }
        Ok(())
    }
}

/// Parameters drawn for one surface, exposed for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceDraw {
    pub amplitude: f64,
    pub sigma: f64,
}

/// Blurred noise before rescaling, plus the drawn parameters.
pub fn smooth_field(config: &SurfaceGenConfig) -> Result<(Vec<f64>, SurfaceDraw)> {
    config.validate()?;
    let mut rng = rng::stream(config.seed, "surface", 0);
    let (w, h) = (config.width, config.height);
    let amplitude = draw_open(&mut rng, config.amplitude_range);
    let noise: Vec<f64> = (0..w * h).map(|_| rng.random_range(0.0..=amplitude)).collect();
    let sigma = draw_open(&mut rng, config.sigma_range);
    let field = gaussian_blur(&noise, w, h, sigma);
    Ok((field, SurfaceDraw { amplitude, sigma }))
}

fn draw_open(rng: &mut rng::StreamRng, (lo, hi): (f64, f64)) -> f64 {
    loop {
        let v = rng.random_range(lo..hi);
        if v > lo {
            return v;
        }
    }
}

/// Generates a random smooth surface rescaled into `config.depth_range`.
pub fn generate_surface(config: &SurfaceGenConfig) -> Result<Surface> {
    let (field, _) = smooth_field(config)?;
    let (lo, hi) = min_max(&field);
    let (dmin, dmax) = config.depth_range;
    let depth = if hi > lo {
        field
            .iter()
            .map(|v| ((v - lo) / (hi - lo) * (dmax - dmin) + dmin).clamp(dmin, dmax))
            .collect()
    } else {
        vec![dmin; field.len()]
    };
    Ok(Surface {
        width: config.width,
        height: config.height,
        depth,
        depth_range: config.depth_range,
    })
}

/// Normalized Gaussian taps truncated at ±3σ.
///
/// σ is capped so the half-width never exceeds `limit`.
pub fn gaussian_kernel(sigma: f64, limit: usize) -> Vec<f64> {
    let sigma = sigma.min(limit as f64 / 3.0).max(1e-6);
    let radius = ((3.0 * sigma).ceil() as usize).min(limit);
    let mut taps: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

/// Half-sample symmetric reflection (`dcba|abcd|dcba`) of any integer index.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Separable Gaussian blur with reflective boundaries.
pub fn gaussian_blur(field: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    let taps = gaussian_kernel(sigma, width.max(height));
    let radius = (taps.len() / 2) as isize;
    let mut rows = vec![0.0; field.len()];
    for y in 0..height {
        let row = &field[y * width..(y + 1) * width];
        for x in 0..width {
            rows[y * width + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * row[reflect(x as isize + k as isize - radius, width)])
                .sum();
        }
    }
    let mut out = vec![0.0; field.len()];
    for y in 0..height {
        for x in 0..width {
            out[y * width + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * rows[reflect(y as isize + k as isize - radius, height) * width + x])
                .sum();
        }
    }
    out
}

/// One fringe set per requested frequency.
pub fn render_scene(
    surface: &Surface,
    frequencies: &[f64],
    phase_steps: usize,
    params: &RenderParams,
) -> Result<Vec<FringeSet>> {
    if frequencies.is_empty() {
        return Err(Error::invalid("render_scene needs at least one frequency"));
    }
    frequencies
        .iter()
        .map(|f| render_set(surface, *f, phase_steps, params))
        .collect()
}

/// Adds i.i.d. zero-mean Gaussian noise and clamps back into `[0, 1]`.
pub fn add_noise(image: &FringeImage, gaussian_sigma: f64, seed: u64) -> Result<FringeImage> {
    if !(gaussian_sigma >= 0.0 && gaussian_sigma.is_finite()) {
        return Err(Error::invalid(format!(
            "noise sigma must be nonnegative, got {gaussian_sigma}"
        )));
    }
    if gaussian_sigma == 0.0 {
        return Ok(image.clone());
    }
    let normal = Normal::new(0.0, gaussian_sigma).expect("sigma validated");
    let mut rng = rng::stream(seed, "noise", 0);
    let data = image
        .data()
        .iter()
        .map(|v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0))
        .collect();
    FringeImage::new(image.width(), image.height(), data)
}
