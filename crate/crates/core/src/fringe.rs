//! Phase-shifted fringe rendering, least-squares demodulation and
//! multi-frequency temporal unwrapping.
//!
//! All phase arithmetic is carried out in `f64`. Intensities are kept
//! normalized to `[0, 1]`; quantization to 8 bits only happens in
//! [`crate::raster`].

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::surface::Surface;

/// Pixels whose estimated modulation falls below this are masked (5/255).
pub const DEFAULT_MODULATION_THRESHOLD: f64 = 5.0 / 255.0;

/// Slack allowed for rounding noise before an out-of-range intensity is a bug.
const INTENSITY_SLACK: f64 = 1e-12;

/// Wraps a phase into `(-π, π]`, resolving the branch cut to `+π`.
pub fn wrap(phase: f64) -> f64 {
    let w = phase.sin().atan2(phase.cos());
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

/// Rounds to the nearest integer, halves away from zero.
fn nearest_integer(v: f64) -> i64 {
    v.round() as i64
}

/// Linear spatial phase ramp of a projected fringe at column `x`.
pub fn carrier_phase(frequency: f64, x: usize, width: usize) -> f64 {
    TAU * frequency * x as f64 / width as f64
}

/// A single normalized intensity image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FringeImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl FringeImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("fringe image must have nonzero area"));
        }
        if data.len() != width * height {
            return Err(Error::shape(format!(
                "fringe image {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!(
                "intensity {v} outside the normalized range [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Builds an image from arbitrary values, clamping them into `[0, 1]`.
    pub fn from_clamped(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        let data = data
            .into_iter()
            .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
            .collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn same_size(&self, other: &FringeImage) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// N phase-shifted images of one fringe frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct FringeSet {
    frequency: f64,
    images: Vec<FringeImage>,
    offsets: Vec<f64>,
}

impl FringeSet {
    /// Wraps `images` as a set; offsets are `2π·n/N` for zero-based `n`.
    pub fn new(frequency: f64, images: Vec<FringeImage>) -> Result<Self> {
        if !(frequency > 0.0 && frequency.is_finite()) {
            return Err(Error::invalid(format!(
                "fringe frequency must be positive, got {frequency}"
            )));
        }
        if images.len() < 3 {
            return Err(Error::invalid(format!(
                "a fringe set needs at least 3 phase steps, got {}",
                images.len()
            )));
        }
        if images.iter().any(|im| !im.same_size(&images[0])) {
            return Err(Error::shape("fringe set images differ in size"));
        }
        let offsets = phase_offsets(images.len());
        Ok(Self {
            frequency,
            images,
            offsets,
        })
    }

    pub fn frequency(&self) -> f64 {
        self.frequency
    }

    pub fn phase_steps(&self) -> usize {
        self.images.len()
    }

    pub fn images(&self) -> &[FringeImage] {
        &self.images
    }

    pub fn into_images(self) -> Vec<FringeImage> {
        self.images
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn width(&self) -> usize {
        self.images[0].width
    }

    pub fn height(&self) -> usize {
        self.images[0].height
    }
}

/// `δ_n = 2π·n/N`, zero-based.
pub fn phase_offsets(steps: usize) -> Vec<f64> {
    (0..steps)
        .map(|n| TAU * n as f64 / steps as f64)
        .collect()
}

/// Intensity model `a + b·cos(z·f·c + carrier + δ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderParams {
    pub background: f64,
    pub modulation: f64,
    /// Radians of phase per depth unit per unit of fringe frequency.
    pub phase_constant: f64,
    #[serde(default)]
    pub carrier_enabled: bool,
}

impl Default for RenderParams {
    fn default() -> Self {
        Self {
            background: 0.5,
            modulation: 0.5,
            phase_constant: 1.0 / 35.0,
            carrier_enabled: false,
        }
    }
}

impl RenderParams {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = (self.background, self.modulation);
        if !(a.is_finite() && b.is_finite() && b >= 0.0) {
            return Err(Error::invalid(format!(
                "background {a} and modulation {b} must be finite, modulation nonnegative"
            )));
        }
        if a - b < 0.0 || a + b > 1.0 {
            return Err(Error::invalid(format!(
                "background {a} ± modulation {b} leaves the [0, 1] intensity range"
            )));
        }
        if !(self.phase_constant > 0.0 && self.phase_constant.is_finite()) {
            return Err(Error::invalid(format!(
                "phase constant must be positive, got {}",
                self.phase_constant
            )));
        }
        Ok(())
    }

    /// Total modeled phase of a pixel, without the step offset.
    pub fn phase_at(&self, depth: f64, frequency: f64, x: usize, width: usize) -> f64 {
        let carrier = if self.carrier_enabled {
            carrier_phase(frequency, x, width)
        } else {
            0.0
        };
        depth * frequency * self.phase_constant + carrier
    }
}

/// Renders one phase-shifted fringe of `surface`.
pub fn render_fringe(
    surface: &Surface,
    frequency: f64,
    offset: f64,
    params: &RenderParams,
) -> Result<FringeImage> {
    params.validate()?;
    if !(frequency > 0.0 && frequency.is_finite()) {
        return Err(Error::invalid(format!(
            "fringe frequency must be positive, got {frequency}"
        )));
    }
    let (w, h) = (surface.width(), surface.height());
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let phase = params.phase_at(surface.get(x, y), frequency, x, w);
            let v = params.background + params.modulation * (phase + offset).cos();
            data.push(clamp_rounding(v)?);
        }
    }
    FringeImage::new(w, h, data)
}

fn clamp_rounding(v: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else if v > -INTENSITY_SLACK && v < 1.0 + INTENSITY_SLACK {
        Ok(v.clamp(0.0, 1.0))
    } else {
        Err(Error::Numeric(format!("rendered intensity {v} out of range")))
    }
}

/// Renders an `N`-step set with offsets `2π·n/N`.
pub fn render_set(
    surface: &Surface,
    frequency: f64,
    phase_steps: usize,
    params: &RenderParams,
) -> Result<FringeSet> {
    if phase_steps < 3 {
        return Err(Error::invalid(format!(
            "least-squares demodulation needs N >= 3 phase steps, got {phase_steps}"
        )));
    }
    let images = phase_offsets(phase_steps)
        .into_iter()
        .map(|delta| render_fringe(surface, frequency, delta, params))
        .collect::<Result<Vec<_>>>()?;
    FringeSet::new(frequency, images)
}

/// Wrapped phase of one frequency with its validity mask.
///
/// Masked pixels hold `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMap {
    pub width: usize,
    pub height: usize,
    pub frequency: f64,
    pub phase: Vec<f64>,
    pub valid: Vec<bool>,
}

impl PhaseMap {
    /// A fully valid map; every value is wrapped into `(-π, π]`.
    pub fn from_phase(width: usize, height: usize, frequency: f64, phase: Vec<f64>) -> Result<Self> {
        if phase.len() != width * height {
            return Err(Error::shape(format!(
                "phase map {width}x{height} needs {} values, got {}",
                width * height,
                phase.len()
            )));
        }
        let valid = phase.iter().map(|p| p.is_finite()).collect();
        let phase = phase
            .into_iter()
            .map(|p| if p.is_finite() { wrap(p) } else { f64::NAN })
            .collect();
        Ok(Self {
            width,
            height,
            frequency,
            phase,
            valid,
        })
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Least-squares phase of a fringe set.
pub fn wrapped_phase(set: &FringeSet, modulation_threshold: f64) -> PhaseMap {
    let (w, h) = (set.width(), set.height());
    let steps = set.phase_steps() as f64;
    let trig: Vec<(f64, f64)> = set.offsets.iter().map(|d| d.sin_cos()).collect();
    let mut phase = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for i in 0..w * h {
        let (mut s, mut c) = (0.0, 0.0);
        for (image, (sin_d, cos_d)) in set.images.iter().zip(&trig) {
            let v = image.data[i];
            s += v * sin_d;
            c += v * cos_d;
        }
        let modulation = 2.0 / steps * s.hypot(c);
        if modulation < modulation_threshold {
            phase.push(f64::NAN);
            valid.push(false);
        } else {
            let p = (-s).atan2(c);
            phase.push(if p <= -PI { p + TAU } else { p });
            valid.push(true);
        }
    }
    PhaseMap {
        width: w,
        height: h,
        frequency: set.frequency,
        phase,
        valid,
    }
}

/// Unwrapped phase `Φ = 2πK + φ` with its integer fringe order.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsolutePhaseMap {
    pub width: usize,
    pub height: usize,
    pub frequency: f64,
    pub phase: Vec<f64>,
    pub order: Vec<i64>,
    pub valid: Vec<bool>,
}

impl AbsolutePhaseMap {
    /// Base case of the ladder: the lowest frequency is taken as already absolute.
    pub fn from_wrapped(map: &PhaseMap) -> Self {
        Self {
            width: map.width,
            height: map.height,
            frequency: map.frequency,
            phase: map.phase.clone(),
            order: vec![0; map.phase.len()],
            valid: map.valid.clone(),
        }
    }

    /// Recovers the wrapped component `Φ − 2πK`.
    pub fn wrapped(&self) -> PhaseMap {
        let phase = self
            .phase
            .iter()
            .zip(&self.order)
            .zip(&self.valid)
            .map(|((p, k), ok)| if *ok { p - TAU * *k as f64 } else { f64::NAN })
            .collect();
        PhaseMap {
            width: self.width,
            height: self.height,
            frequency: self.frequency,
            phase,
            valid: self.valid.clone(),
        }
    }
}

/// One temporal unwrapping step from `previous` to the higher frequency of `wrapped`.
///
/// The fringe order is `INT((r·Φ_prev − φ)/2π)` with `r` the frequency ratio;
/// `r = 2` is the classic doubling ladder.
pub fn unwrap_step(previous: &AbsolutePhaseMap, wrapped: &PhaseMap) -> Result<AbsolutePhaseMap> {
    if !(wrapped.frequency > previous.frequency) {
        return Err(Error::invalid(format!(
            "unwrap frequencies must increase, got {} -> {}",
            previous.frequency, wrapped.frequency
        )));
    }
    if previous.width != wrapped.width || previous.height != wrapped.height {
        return Err(Error::shape(format!(
            "unwrap maps differ in size: {}x{} vs {}x{}",
            previous.width, previous.height, wrapped.width, wrapped.height
        )));
    }
    let ratio = wrapped.frequency / previous.frequency;
    let n = wrapped.phase.len();
    let mut phase = Vec::with_capacity(n);
    let mut order = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for i in 0..n {
        if previous.valid[i] && wrapped.valid[i] {
            let k = nearest_integer((ratio * previous.phase[i] - wrapped.phase[i]) / TAU);
            phase.push(TAU * k as f64 + wrapped.phase[i]);
            order.push(k);
            valid.push(true);
        } else {
            phase.push(f64::NAN);
            order.push(0);
            valid.push(false);
        }
    }
    Ok(AbsolutePhaseMap {
        width: wrapped.width,
        height: wrapped.height,
        frequency: wrapped.frequency,
        phase,
        order,
        valid,
    })
}

/// Strictly increasing fringe frequencies starting at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FrequencyLadder {
    frequencies: Vec<f64>,
}

impl FrequencyLadder {
    pub fn new(frequencies: Vec<f64>) -> Result<Self> {
        match frequencies.first() {
            None => return Err(Error::invalid("frequency ladder is empty")),
            Some(f) if *f != 1.0 => {
                return Err(Error::invalid(format!(
                    "frequency ladder must start at 1, starts at {f}"
                )))
            }
            _ => {}
        }
        if frequencies.windows(2).any(|p| !(p[1] > p[0])) {
            return Err(Error::invalid(format!(
                "frequency ladder must be strictly increasing: {frequencies:?}"
            )));
        }
        if frequencies.iter().any(|f| !f.is_finite()) {
            return Err(Error::invalid("frequency ladder contains non-finite values"));
        }
        Ok(Self { frequencies })
    }

    /// `f_i = 2^(i-1)` for `i = 1..=count`.
    pub fn doubling(count: usize) -> Result<Self> {
        Self::new((0..count).map(|i| (1u64 << i) as f64).collect())
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn count(&self) -> usize {
        self.frequencies.len()
    }

    pub fn highest(&self) -> f64 {
        *self.frequencies.last().expect("ladder is nonempty")
    }
}

impl TryFrom<Vec<f64>> for FrequencyLadder {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<FrequencyLadder> for Vec<f64> {
    fn from(l: FrequencyLadder) -> Self {
        l.frequencies
    }
}

/// Unwraps a full ladder of wrapped maps, lowest frequency first.
///
/// Returns one absolute map per input; the last is the measurement output.
pub fn unwrap_ladder(wrapped_maps: &[PhaseMap]) -> Result<Vec<AbsolutePhaseMap>> {
    FrequencyLadder::new(wrapped_maps.iter().map(|m| m.frequency).collect())?;
    let mut out: Vec<AbsolutePhaseMap> = Vec::with_capacity(wrapped_maps.len());
    out.push(AbsolutePhaseMap::from_wrapped(&wrapped_maps[0]));
    for map in &wrapped_maps[1..] {
        let next = unwrap_step(out.last().expect("base case pushed"), map)?;
        out.push(next);
    }
    Ok(out)
}

/// Fringe-order deviation caused by phase errors at two adjacent ladder steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderError {
    pub delta_k: f64,
    pub safe: bool,
}

pub fn order_error(delta_prev: f64, delta_cur: f64) -> OrderError {
    let combined = 2.0 * delta_prev - delta_cur;
    OrderError {
        delta_k: combined / TAU,
        safe: combined.abs() < PI,
    }
}

/// Projector-camera geometry, all lengths in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemGeometry {
    /// `l`: camera to reference plane.
    pub camera_to_reference: f64,
    /// `d`: projector to camera baseline.
    pub projector_to_camera: f64,
    /// `c_1`: horizontal extent of the projected field.
    pub projected_width: f64,
    /// `L`: measurement range above the reference plane.
    pub measurement_range: f64,
}

impl Default for SystemGeometry {
    fn default() -> Self {
        Self {
            camera_to_reference: 1000.0,
            projector_to_camera: 60.0,
            projected_width: 280.0,
            measurement_range: 250.0,
        }
    }
}

impl SystemGeometry {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.camera_to_reference,
            self.projector_to_camera,
            self.projected_width,
            self.measurement_range,
        ];
        if fields.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "system geometry lengths must be positive: {self:?}"
            )))
        }
    }
}

/// Depth span `l·c_1/(f_s·d)` over which the highest frequency shifts by less than a period.
pub fn restricted_depth(geometry: &SystemGeometry, highest_frequency: f64) -> Result<f64> {
    geometry.validate()?;
    if !(highest_frequency > 0.0) {
        return Err(Error::invalid(format!(
            "highest frequency must be positive, got {highest_frequency}"
        )));
    }
    Ok(geometry.camera_to_reference * geometry.projected_width
        / (highest_frequency * geometry.projector_to_camera))
}

/// Simulation-scale restricted depth: the depth whose phase `z·f_s·c` is one period.
pub fn restricted_depth_sim(params: &RenderParams, highest_frequency: f64) -> Result<f64> {
    if !(highest_frequency > 0.0) {
        return Err(Error::invalid(format!(
            "highest frequency must be positive, got {highest_frequency}"
        )));
    }
    if !(params.phase_constant > 0.0) {
        return Err(Error::invalid(format!(
            "phase constant must be positive, got {}",
            params.phase_constant
        )));
    }
    Ok(TAU / (highest_frequency * params.phase_constant))
}

/// Inverts the phase model: `z = (Φ − carrier)/(f·c)`.
///
/// Masked pixels come back as depth 0.
pub fn height_from_phase(abs_phase: &AbsolutePhaseMap, params: &RenderParams) -> Result<Surface> {
    let scale = abs_phase.frequency * params.phase_constant;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::invalid(format!(
            "cannot invert phase with f·c = {scale}"
        )));
    }
    let (w, h) = (abs_phase.width, abs_phase.height);
    let mut depth = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !abs_phase.valid[i] {
                depth.push(0.0);
                continue;
            }
            let carrier = if params.carrier_enabled {
                carrier_phase(abs_phase.frequency, x, w)
            } else {
                0.0
            };
            depth.push((abs_phase.phase[i] - carrier) / scale);
        }
    }
    Surface::from_depth(w, h, depth)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(w: usize, h: usize, z: f64) -> Surface {
        Surface::from_depth(w, h, vec![z; w * h]).unwrap()
    }

    fn analytic_set(steps: usize, a: f64, b: f64, phi: f64) -> FringeSet {
        let images = phase_offsets(steps)
            .into_iter()
            .map(|d| FringeImage::new(1, 1, vec![a + b * (phi + d).cos()]).unwrap())
            .collect();
        FringeSet::new(1.0, images).unwrap()
    }

    #[test]
    fn flat_surface_renders_full_intensity() {
        let params = RenderParams {
            background: 0.5,
            modulation: 0.5,
            phase_constant: 1.0,
            carrier_enabled: false,
        };
        let img = render_fringe(&flat(8, 4, 0.0), 3.0, 0.0, &params).unwrap();
        assert!(img.data().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn half_half_params_match_eight_bit_model() {
        // 127.5 + 127.5 cos(.) at 8-bit scale
        let p = RenderParams::default();
        assert_eq!(p.background * 255.0, 127.5);
        assert_eq!(p.modulation * 255.0, 127.5);
    }

    fn count_rising_zero_crossings(row: &[f64], mean: f64) -> usize {
        row.windows(2)
            .filter(|p| p[0] - mean < 0.0 && p[1] - mean >= 0.0)
            .count()
    }

    #[test]
    fn linear_ramp_gives_one_cycle_per_row() {
        let (w, h) = (200, 3);
        let (f, c) = (5.0, 0.2);
        let span = TAU / (f * c);
        let depth = (0..h)
            .flat_map(|_| (0..w).map(move |x| span * x as f64 / w as f64))
            .collect();
        let surface = Surface::from_depth(w, h, depth).unwrap();
        let params = RenderParams {
            phase_constant: c,
            ..RenderParams::default()
        };
        // offset by π/2 so the cycle starts at a zero crossing and ends before the next
        let img = render_fringe(&surface, f, PI / 2.0, &params).unwrap();
        for y in 0..h {
            let row = &img.data()[y * w..(y + 1) * w];
            assert_eq!(count_rising_zero_crossings(row, 0.5), 1);
        }
    }

    #[test]
    fn render_rejects_out_of_range_params() {
        let params = RenderParams {
            background: 0.6,
            modulation: 0.5,
            ..RenderParams::default()
        };
        assert!(render_fringe(&flat(2, 2, 0.0), 1.0, 0.0, &params).is_err());
    }

    #[test]
    fn four_step_quadrature_images() {
        let (a, b, phi) = (0.5, 0.3, 0.7);
        let c = 1.0;
        let params = RenderParams {
            background: a,
            modulation: b,
            phase_constant: c,
            carrier_enabled: false,
        };
        let set = render_set(&flat(2, 2, phi), 1.0, 4, &params).unwrap();
        let expected = [phi.cos(), -phi.sin(), -phi.cos(), phi.sin()];
        for (img, e) in set.images().iter().zip(expected) {
            for v in img.data() {
                assert!((v - (a + b * e)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn render_set_rejects_two_steps() {
        assert!(render_set(&flat(2, 2, 0.0), 1.0, 2, &RenderParams::default()).is_err());
    }

    #[test]
    fn offsets_are_uniform() {
        let set = analytic_set(12, 0.5, 0.5, 0.0);
        for (n, d) in set.offsets().iter().enumerate() {
            assert!((d - TAU * n as f64 / 12.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_phase_demodulates_to_zero() {
        let map = wrapped_phase(&analytic_set(5, 0.5, 0.5, 0.0), DEFAULT_MODULATION_THRESHOLD);
        assert_eq!(map.phase[0], 0.0);
    }

    #[test]
    fn three_step_recovers_injected_phase() {
        let map = wrapped_phase(&analytic_set(3, 0.5, 0.4, 1.0), DEFAULT_MODULATION_THRESHOLD);
        assert!((map.phase[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gray_images_are_masked() {
        let map = wrapped_phase(&analytic_set(4, 0.5, 0.0, 1.0), DEFAULT_MODULATION_THRESHOLD);
        assert!(!map.valid[0]);
        assert!(map.phase[0].is_nan());
        assert_eq!(map.valid_count(), 0);
    }

    #[test]
    fn wrap_branch_cut_is_positive_pi() {
        assert_eq!(wrap(PI), PI);
        assert_eq!(wrap(-PI), PI);
        assert!((wrap(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap(0.5 + 4.0 * TAU) - 0.5).abs() < 1e-12);
    }

    fn single(frequency: f64, phase: f64) -> PhaseMap {
        PhaseMap::from_phase(1, 1, frequency, vec![phase]).unwrap()
    }

    #[test]
    fn null_unwrap_step() {
        let prev = AbsolutePhaseMap::from_wrapped(&single(1.0, 0.0));
        let next = unwrap_step(&prev, &single(2.0, 0.0)).unwrap();
        assert_eq!(next.order[0], 0);
        assert_eq!(next.phase[0], 0.0);
    }

    #[test]
    fn hand_evaluated_unwrap_step() {
        let prev = AbsolutePhaseMap {
            width: 1,
            height: 1,
            frequency: 1.0,
            phase: vec![3.0 * PI],
            order: vec![1],
            valid: vec![true],
        };
        let next = unwrap_step(&prev, &single(2.0, 0.1)).unwrap();
        assert_eq!(next.order[0], 3);
        assert!((next.phase[0] - (TAU * 3.0 + 0.1)).abs() < 1e-12);
    }

    #[test]
    fn unwrap_step_rejects_bad_inputs() {
        let prev = AbsolutePhaseMap::from_wrapped(&single(2.0, 0.0));
        assert!(unwrap_step(&prev, &single(2.0, 0.0)).is_err());
        assert!(unwrap_step(&prev, &single(1.0, 0.0)).is_err());
        let wide = PhaseMap::from_phase(2, 1, 4.0, vec![0.0, 0.0]).unwrap();
        assert!(matches!(unwrap_step(&prev, &wide), Err(Error::Shape(_))));
    }

    #[test]
    fn masked_pixels_propagate_through_unwrap() {
        let mut base = PhaseMap::from_phase(2, 1, 1.0, vec![0.2, 0.3]).unwrap();
        base.valid[1] = false;
        base.phase[1] = f64::NAN;
        let next = PhaseMap::from_phase(2, 1, 2.0, vec![0.4, 0.6]).unwrap();
        let out = unwrap_ladder(&[base, next]).unwrap();
        assert!(out[1].valid[0]);
        assert!(!out[1].valid[1]);
    }

    #[test]
    fn single_map_ladder_is_verbatim() {
        let map = PhaseMap::from_phase(3, 1, 1.0, vec![0.1, -0.2, 3.0]).unwrap();
        let out = unwrap_ladder(std::slice::from_ref(&map)).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].phase, map.phase);
        assert!(out[0].order.iter().all(|k| *k == 0));
    }

    #[test]
    fn ladder_validation() {
        assert!(FrequencyLadder::new(vec![]).is_err());
        assert!(FrequencyLadder::new(vec![2.0, 4.0]).is_err());
        assert!(FrequencyLadder::new(vec![1.0, 4.0, 4.0]).is_err());
        let l = FrequencyLadder::doubling(7).unwrap();
        assert_eq!(l.frequencies(), &[1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0]);
        assert_eq!(l.highest(), 64.0);
        let parsed: FrequencyLadder = serde_json::from_str("[1, 3, 9]").unwrap();
        assert_eq!(parsed.count(), 3);
        assert!(serde_json::from_str::<FrequencyLadder>("[1, 0.5]").is_err());
    }

    #[test]
    fn order_error_examples() {
        let e = order_error(0.0, 0.0);
        assert_eq!(e.delta_k, 0.0);
        assert!(e.safe);
        let e = order_error(0.2 * PI, -0.7 * PI);
        assert!(!e.safe);
        assert!((e.delta_k - 0.55).abs() < 1e-12);
        // below one half is safe
        assert!(order_error(0.49 * PI, 0.0).safe);
        assert!(!order_error(0.51 * PI, 0.0).safe);
    }

    #[test]
    fn restricted_depth_values() {
        let g = SystemGeometry::default();
        let z = restricted_depth(&g, 64.0).unwrap();
        assert!((z - 72.916_666).abs() < 1e-3);
        let z2 = restricted_depth(&g, 128.0).unwrap();
        assert!((z / z2 - 2.0).abs() < 1e-12);
        let unit = SystemGeometry {
            camera_to_reference: 1.0,
            projector_to_camera: 1.0,
            projected_width: 1.0,
            measurement_range: 1.0,
        };
        assert_eq!(restricted_depth(&unit, 1.0).unwrap(), 1.0);
        assert!(restricted_depth(&g, 0.0).is_err());
        assert!(restricted_depth(&g, -3.0).is_err());
    }

    #[test]
    fn restricted_depth_sim_values() {
        let p = RenderParams::default();
        assert!((restricted_depth_sim(&p, 35.0).unwrap() - TAU).abs() < 1e-12);
        let unit = RenderParams {
            phase_constant: 1.0,
            ..p
        };
        assert!((restricted_depth_sim(&unit, TAU).unwrap() - 1.0).abs() < 1e-15);
        let doubled = RenderParams {
            phase_constant: 2.0 / 35.0,
            ..p
        };
        let ratio = restricted_depth_sim(&p, 35.0).unwrap()
            / restricted_depth_sim(&doubled, 35.0).unwrap();
        assert!((ratio - 2.0).abs() < 1e-12);
        assert!(restricted_depth_sim(&p, 0.0).is_err());
    }

    #[test]
    fn height_of_zero_phase_is_zero() {
        let abs = AbsolutePhaseMap::from_wrapped(&PhaseMap::from_phase(3, 2, 4.0, vec![0.0; 6]).unwrap());
        let s = height_from_phase(&abs, &RenderParams::default()).unwrap();
        assert!(s.depth().iter().all(|z| *z == 0.0));
    }

    #[test]
    fn height_equals_phase_with_unit_scale() {
        let params = RenderParams::default(); // c = 1/35
        let abs = AbsolutePhaseMap {
            width: 2,
            height: 1,
            frequency: 35.0,
            phase: vec![1.25, 17.0],
            order: vec![0, 3],
            valid: vec![true, true],
        };
        let s = height_from_phase(&abs, &params).unwrap();
        assert!((s.depth()[0] - 1.25).abs() < 1e-12);
        assert!((s.depth()[1] - 17.0).abs() < 1e-12);
    }

    #[test]
    fn carrier_round_trip_single_frequency() {
        let params = RenderParams {
            phase_constant: 0.1,
            carrier_enabled: true,
            ..RenderParams::default()
        };
        let surface = flat(16, 2, 1.5);
        let set = render_set(&surface, 1.0, 4, &params).unwrap();
        let map = wrapped_phase(&set, DEFAULT_MODULATION_THRESHOLD);
        for y in 0..2 {
            for x in 0..16 {
                let expected = wrap(params.phase_at(1.5, 1.0, x, 16));
                let got = map.phase[y * 16 + x];
                assert!(wrap(got - expected).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn uniform_offset_does_not_move_phase() {
        let base = analytic_set(6, 0.3, 0.25, -2.1);
        let shifted = FringeSet::new(
            1.0,
            base.images()
                .iter()
                .map(|im| FringeImage::new(1, 1, vec![im.data()[0] + 0.2]).unwrap())
                .collect(),
        )
        .unwrap();
        let a = wrapped_phase(&base, 0.0).phase[0];
        let b = wrapped_phase(&shifted, 0.0).phase[0];
        assert!((a - b).abs() < 1e-12);
    }
}
