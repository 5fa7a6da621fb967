//! Layer plans for the fringe transformation network and its variants.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fringe::FrequencyLadder;

/// One entry of the layer plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Concatenates a 3×3 convolution producing `out_ch - in_ch` maps with the
    /// input itself: max-pooled when `stride == 2`, passed through when `stride == 1`.
    Downsample {
        in_ch: usize,
        out_ch: usize,
        stride: usize,
    },
    /// Factorized residual block with dilation applied to its second pair of convolutions.
    Erf { channels: usize, dilation: usize },
    /// Stride-2 transposed 3×3 convolution.
    Upsample { in_ch: usize, out_ch: usize },
    /// Linear 1×1 convolution.
    OutputConv { in_ch: usize, out_ch: usize },
}

impl LayerSpec {
    pub fn in_channels(&self) -> usize {
        match *self {
            LayerSpec::Downsample { in_ch, .. }
            | LayerSpec::Upsample { in_ch, .. }
            | LayerSpec::OutputConv { in_ch, .. } => in_ch,
            LayerSpec::Erf { channels, .. } => channels,
        }
    }

    pub fn out_channels(&self) -> usize {
        match *self {
            LayerSpec::Downsample { out_ch, .. }
            | LayerSpec::Upsample { out_ch, .. }
            | LayerSpec::OutputConv { out_ch, .. } => out_ch,
            LayerSpec::Erf { channels, .. } => channels,
        }
    }

    /// Output `(channels, height, width)` for an input of `height x width`.
    pub fn output_shape(&self, height: usize, width: usize) -> (usize, usize, usize) {
        match *self {
            LayerSpec::Downsample { out_ch, stride, .. } => (out_ch, height / stride, width / stride),
            LayerSpec::Upsample { out_ch, .. } => (out_ch, height * 2, width * 2),
            _ => (self.out_channels(), height, width),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    pub width_multiplier: f64,
    pub normalization: bool,
}

impl NetworkSpec {
    pub fn new(layers: Vec<LayerSpec>, width_multiplier: f64, normalization: bool) -> Result<Self> {
        let spec = Self {
            layers,
            width_multiplier,
            normalization,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("network has no layers"));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.in_channels() == 0 || layer.out_channels() == 0 {
                return Err(Error::invalid(format!("layer {i} has zero channels")));
            }
            match *layer {
                LayerSpec::Downsample { in_ch, out_ch, stride } => {
                    if out_ch <= in_ch {
                        return Err(Error::invalid(format!(
                            "downsample layer {i} leaves no convolution channels ({in_ch} -> {out_ch})"
                        )));
                    }
                    if stride != 1 && stride != 2 {
                        return Err(Error::invalid(format!("downsample layer {i} has stride {stride}")));
                    }
                }
                LayerSpec::Erf { dilation, .. } if dilation == 0 => {
                    return Err(Error::invalid(format!("ERF layer {i} has dilation 0")));
                }
                _ => {}
            }
            if i > 0 && self.layers[i - 1].out_channels() != layer.in_channels() {
                return Err(Error::invalid(format!(
                    "layer {i} expects {} channels but layer {} produces {}",
                    layer.in_channels(),
                    i - 1,
                    self.layers[i - 1].out_channels()
                )));
            }
        }
        Ok(())
    }

    pub fn input_channels(&self) -> usize {
        self.layers[0].in_channels()
    }

    pub fn output_channels(&self) -> usize {
        self.layers.last().expect("validated nonempty").out_channels()
    }

    /// Product of all spatial strides; inputs must be divisible by this.
    pub fn spatial_factor(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                LayerSpec::Downsample { stride, .. } => *stride,
                _ => 1,
            })
            .product()
    }

    /// Shape after each layer for a `channels x height x width` input.
    pub fn layer_shapes(&self, height: usize, width: usize) -> Vec<(usize, usize, usize)> {
        let mut shapes = Vec::with_capacity(self.layers.len());
        let (mut h, mut w) = (height, width);
        for layer in &self.layers {
            let s = layer.output_shape(h, w);
            h = s.1;
            w = s.2;
            shapes.push(s);
        }
        shapes
    }

    /// First 64 bits of SHA-256 over the canonical JSON of the plan.
    pub fn fingerprint(&self) -> u64 {
        let json = serde_json::to_vec(self).expect("spec serializes");
        let d = Sha256::digest(&json);
        u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
    }
}

/// Scales a reference channel count, rounding to nearest with a floor of 1.
pub fn scale_channels(reference: usize, multiplier: f64) -> usize {
    ((reference as f64 * multiplier).round() as usize).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VariantKind {
    /// One fringe in, one phase-shifted stack of the same frequency out.
    #[serde(rename = "c")]
    C,
    /// One fringe in, lower-frequency stacks out (restricted depth).
    #[serde(rename = "u1")]
    UI,
    /// Two fringes in, lower-frequency stacks out (unrestricted depth).
    #[serde(rename = "u2")]
    UII,
}

impl VariantKind {
    pub fn input_count(&self) -> usize {
        match self {
            VariantKind::C | VariantKind::UI => 1,
            VariantKind::UII => 2,
        }
    }
}

impl std::str::FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "c" => Ok(VariantKind::C),
            "u1" | "u-i" | "ui" => Ok(VariantKind::UI),
            "u2" | "u-ii" | "uii" => Ok(VariantKind::UII),
            other => Err(Error::invalid(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputStack {
    pub frequency: f64,
    pub phase_steps: usize,
}

/// A network task: which fringes go in and which stacks come out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub kind: VariantKind,
    /// Frequencies of the input fringes (first phase step of each), in channel order.
    pub input_frequencies: Vec<f64>,
    pub output_plan: Vec<OutputStack>,
}

impl Variant {
    pub fn new(kind: VariantKind, input_frequencies: Vec<f64>, output_frequencies: &[f64], phase_steps: usize) -> Result<Self> {
        let v = Self {
            kind,
            input_frequencies,
            output_plan: output_frequencies
                .iter()
                .map(|f| OutputStack {
                    frequency: *f,
                    phase_steps,
                })
                .collect(),
        };
        v.validate()?;
        Ok(v)
    }

    /// Same-frequency transformation at `frequency`.
    pub fn calculation(frequency: f64, phase_steps: usize) -> Result<Self> {
        Self::new(VariantKind::C, vec![frequency], &[frequency], phase_steps)
    }

    /// Single-input unwrapping variant producing every ladder stack below the highest.
    pub fn unwrap_single(ladder: &FrequencyLadder, phase_steps: usize) -> Result<Self> {
        let f = ladder.frequencies();
        Self::new(VariantKind::UI, vec![ladder.highest()], &f[..f.len() - 1], phase_steps)
    }

    /// Two-input unwrapping variant with auxiliary input frequency `low`.
    pub fn unwrap_pair(ladder: &FrequencyLadder, low: f64, phase_steps: usize) -> Result<Self> {
        let f = ladder.frequencies();
        Self::new(VariantKind::UII, vec![ladder.highest(), low], &f[..f.len() - 1], phase_steps)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_frequencies.len() != self.kind.input_count() {
            return Err(Error::invalid(format!(
                "variant {:?} takes {} input fringe(s), got {}",
                self.kind,
                self.kind.input_count(),
                self.input_frequencies.len()
            )));
        }
        if self.output_plan.is_empty() {
            return Err(Error::invalid("variant has an empty output plan"));
        }
        if self.output_plan.iter().any(|s| s.phase_steps < 3) {
            return Err(Error::invalid("output stacks need at least 3 phase steps"));
        }
        if self
            .input_frequencies
            .iter()
            .chain(self.output_plan.iter().map(|s| &s.frequency))
            .any(|f| !(*f > 0.0))
        {
            return Err(Error::invalid("variant frequencies must be positive"));
        }
        if self.kind == VariantKind::C
            && (self.output_plan.len() != 1 || self.output_plan[0].frequency != self.input_frequencies[0])
        {
            return Err(Error::invalid(
                "the calculation variant outputs exactly one stack at its input frequency",
            ));
        }
        if self.kind == VariantKind::UII {
            validate_fl_choice(self.input_frequencies[0], self.input_frequencies[1])?;
        }
        Ok(())
    }

    pub fn output_channels(&self) -> usize {
        self.output_plan.iter().map(|s| s.phase_steps).sum()
    }
}

/// The reference layer plan scaled by `width_multiplier`.
pub fn build_network(variant: &Variant, width_multiplier: f64, normalization: bool) -> Result<NetworkSpec> {
    variant.validate()?;
    if !(width_multiplier > 0.0 && width_multiplier.is_finite()) {
        return Err(Error::invalid(format!(
            "width multiplier must be positive, got {width_multiplier}"
        )));
    }
    let c0 = scale_channels(16, width_multiplier);
    let c1 = scale_channels(64, width_multiplier);
    let c2 = scale_channels(128, width_multiplier);
    let input = variant.kind.input_count();
    let mut layers = vec![
        LayerSpec::Downsample {
            in_ch: input,
            out_ch: c0,
            stride: 1,
        },
        LayerSpec::Downsample {
            in_ch: c0,
            out_ch: c1,
            stride: 2,
        },
    ];
    layers.extend((0..5).map(|_| LayerSpec::Erf {
        channels: c1,
        dilation: 1,
    }));
    layers.push(LayerSpec::Downsample {
        in_ch: c1,
        out_ch: c2,
        stride: 2,
    });
    for _ in 0..2 {
        layers.extend([2, 4, 8, 16].map(|d| LayerSpec::Erf {
            channels: c2,
            dilation: d,
        }));
    }
    layers.push(LayerSpec::Upsample { in_ch: c2, out_ch: c1 });
    layers.extend((0..2).map(|_| LayerSpec::Erf {
        channels: c1,
        dilation: 1,
    }));
    layers.push(LayerSpec::Upsample { in_ch: c1, out_ch: c0 });
    layers.extend((0..2).map(|_| LayerSpec::Erf {
        channels: c0,
        dilation: 1,
    }));
    layers.push(LayerSpec::OutputConv {
        in_ch: c0,
        out_ch: variant.output_channels(),
    });
    NetworkSpec::new(layers, width_multiplier, normalization)
}

/// Single-input unwrapping is unambiguous when the depth span stays within `z_th` (inclusive).
pub fn select_variant(depth_range: (f64, f64), z_th: f64) -> VariantKind {
    if depth_range.1 - depth_range.0 <= z_th {
        VariantKind::UI
    } else {
        VariantKind::UII
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LowFrequencyAdvice {
    Safe,
    /// `f_l` divides `f_s`; usable only when depth stays within one period.
    RestrictedOnly,
}

/// Advises on the auxiliary input frequency `f_l` for a highest frequency `f_s`.
pub fn validate_fl_choice(f_s: f64, f_l: f64) -> Result<LowFrequencyAdvice> {
    if !(f_l > 0.0 && f_l < f_s) {
        return Err(Error::invalid(format!(
            "auxiliary frequency {f_l} must lie in (0, {f_s})"
        )));
    }
    let ratio = f_s / f_l;
    if (ratio - ratio.round()).abs() < 1e-9 {
        Ok(LowFrequencyAdvice::RestrictedOnly)
    } else {
        Ok(LowFrequencyAdvice::Safe)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_plan_matches_layer_table() {
        let v = Variant::calculation(1.0, 12).unwrap();
        let spec = build_network(&v, 1.0, true).unwrap();
        assert_eq!(spec.layers.len(), 1 + 1 + 5 + 1 + 8 + 1 + 2 + 1 + 2 + 1);
        assert_eq!(spec.input_channels(), 1);
        assert_eq!(spec.output_channels(), 12);
        assert_eq!(spec.layers[1], LayerSpec::Downsample { in_ch: 16, out_ch: 64, stride: 2 });
        let dil: Vec<usize> = spec.layers[8..16]
            .iter()
            .map(|l| match l {
                LayerSpec::Erf { dilation, .. } => *dilation,
                _ => 0,
            })
            .collect();
        assert_eq!(dil, vec![2, 4, 8, 16, 2, 4, 8, 16]);
        assert_eq!(spec.spatial_factor(), 4);
    }

    #[test]
    fn quarter_width_channels() {
        assert_eq!(
            [16, 64, 128].map(|c| scale_channels(c, 0.25)),
            [4, 16, 32]
        );
        let v = Variant::calculation(8.0, 4).unwrap();
        let spec = build_network(&v, 0.25, false).unwrap();
        assert_eq!(spec.layers[0], LayerSpec::Downsample { in_ch: 1, out_ch: 4, stride: 1 });
    }

    #[test]
    fn tiny_multiplier_is_rejected() {
        let v = Variant::calculation(8.0, 4).unwrap();
        assert!(build_network(&v, 0.01, false).is_err());
        assert!(build_network(&v, 0.0, false).is_err());
    }

    #[test]
    fn two_input_variant_has_two_channels() {
        let ladder = FrequencyLadder::doubling(7).unwrap();
        let v = Variant::unwrap_pair(&ladder, 45.0, 12).unwrap();
        let spec = build_network(&v, 0.25, true).unwrap();
        assert_eq!(spec.input_channels(), 2);
        assert_eq!(spec.output_channels(), 6 * 12);
        let v1 = Variant::unwrap_single(&ladder, 12).unwrap();
        assert_eq!(v1.output_plan.len(), 6);
    }

    #[test]
    fn variant_validation() {
        assert!(Variant::new(VariantKind::C, vec![8.0], &[4.0], 4).is_err());
        assert!(Variant::new(VariantKind::UII, vec![8.0], &[4.0], 4).is_err());
        assert!(Variant::new(VariantKind::UI, vec![8.0], &[4.0], 2).is_err());
        assert!("u2".parse::<VariantKind>().is_ok());
        assert!("x".parse::<VariantKind>().is_err());
    }

    #[test]
    fn select_variant_examples() {
        assert_eq!(select_variant((0.0, 6.28), 6.28), VariantKind::UI);
        assert_eq!(select_variant((0.0, 25.0), 6.28), VariantKind::UII);
    }

    #[test]
    fn low_frequency_advice() {
        assert_eq!(validate_fl_choice(64.0, 45.0).unwrap(), LowFrequencyAdvice::Safe);
        assert_eq!(validate_fl_choice(64.0, 16.0).unwrap(), LowFrequencyAdvice::RestrictedOnly);
        assert_eq!(validate_fl_choice(35.0, 30.0).unwrap(), LowFrequencyAdvice::Safe);
        assert!(validate_fl_choice(35.0, 35.0).is_err());
        assert!(validate_fl_choice(35.0, 40.0).is_err());
    }

    #[test]
    fn fingerprint_tracks_plan() {
        let v = Variant::calculation(8.0, 4).unwrap();
        let a = build_network(&v, 0.25, true).unwrap();
        let b = build_network(&v, 0.25, false).unwrap();
        assert_eq!(a.fingerprint(), a.clone().fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn chaining_is_checked() {
        let bad = NetworkSpec::new(
            vec![
                LayerSpec::Erf { channels: 4, dilation: 1 },
                LayerSpec::OutputConv { in_ch: 3, out_ch: 1 },
            ],
            1.0,
            false,
        );
        assert!(bad.is_err());
    }
}
