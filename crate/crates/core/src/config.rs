//! Run configuration shared by every CLI subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetSpec, Regime, SplitCounts};
use crate::error::{Error, Result};
use crate::fringe::{
    restricted_depth_sim, FrequencyLadder, RenderParams, SystemGeometry, DEFAULT_MODULATION_THRESHOLD,
};
use crate::nn::{TrainConfig, Variant, VariantKind};
use crate::surface::SurfaceGenConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub variant: VariantKind,
    /// Frequency of the calculation variant; defaults to the top of the ladder.
    pub frequency: Option<f64>,
    /// Auxiliary input frequency of the two-input unwrapping variant.
    pub low_frequency: Option<f64>,
    pub width_multiplier: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            variant: VariantKind::C,
            frequency: None,
            low_frequency: None,
            width_multiplier: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub path: Option<PathBuf>,
    pub regime: Regime,
    pub splits: SplitCounts,
    /// Template for every generated surface; the seed field is ignored.
    pub surface: SurfaceGenConfig,
    /// Input frequencies to render; empty means whatever the variant consumes.
    pub frequencies: Vec<f64>,
    /// Target-only frequencies; empty means whatever the variant produces.
    pub ground_truth_frequencies: Vec<f64>,
    pub quantize: bool,
    pub noise_sigma: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        let render = RenderParams::default();
        let z_th = restricted_depth_sim(&render, 64.0).expect("default render params are valid");
        Self {
            path: None,
            regime: Regime::Restricted,
            splits: SplitCounts::default(),
            surface: SurfaceGenConfig {
                depth_range: (0.0, z_th),
                ..SurfaceGenConfig::default()
            },
            frequencies: Vec::new(),
            ground_truth_frequencies: Vec::new(),
            quantize: true,
            noise_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct E2eConfig {
    /// Random surfaces drawn by the classical end-to-end check.
    pub scenes: usize,
}

impl Default for E2eConfig {
    fn default() -> Self {
        Self { scenes: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub geometry: SystemGeometry,
    pub render: RenderParams,
    pub ladder: FrequencyLadder,
    pub phase_steps: usize,
    pub modulation_threshold: f64,
    pub network: NetworkConfig,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub e2e: E2eConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            geometry: SystemGeometry::default(),
            render: RenderParams::default(),
            ladder: FrequencyLadder::doubling(7).expect("doubling ladder is valid"),
            phase_steps: 4,
            modulation_threshold: DEFAULT_MODULATION_THRESHOLD,
            network: NetworkConfig::default(),
            dataset: DatasetConfig::default(),
            train: TrainConfig::default(),
            e2e: E2eConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: Self = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.render.validate()?;
        self.dataset.surface.validate()?;
        self.train.validate()?;
        if self.phase_steps < 3 {
            return Err(Error::invalid(format!(
                "phase_steps must be at least 3, got {}",
                self.phase_steps
            )));
        }
        if !(self.modulation_threshold >= 0.0) {
            return Err(Error::invalid("modulation_threshold must be nonnegative"));
        }
        if !(self.network.width_multiplier > 0.0) {
            return Err(Error::invalid("width_multiplier must be positive"));
        }
        Ok(())
    }

    /// The network task selected by `network.variant`.
    pub fn variant(&self) -> Result<Variant> {
        self.variant_of(self.network.variant)
    }

    pub fn variant_of(&self, kind: VariantKind) -> Result<Variant> {
        match kind {
            VariantKind::C => Variant::calculation(
                self.network.frequency.unwrap_or(self.ladder.highest()),
                self.phase_steps,
            ),
            VariantKind::UI => Variant::unwrap_single(&self.ladder, self.phase_steps),
            VariantKind::UII => {
                let low = self.network.low_frequency.ok_or_else(|| {
                    Error::invalid("the two-input variant needs network.low_frequency")
                })?;
                Variant::unwrap_pair(&self.ladder, low, self.phase_steps)
            }
        }
    }

    /// Dataset spec, filling empty frequency lists from `variant`.
    pub fn dataset_spec(&self, variant: &Variant) -> DatasetSpec {
        let d = &self.dataset;
        let frequencies = if d.frequencies.is_empty() {
            variant.input_frequencies.clone()
        } else {
            d.frequencies.clone()
        };
        let ground_truth_frequencies = if d.ground_truth_frequencies.is_empty() {
            variant
                .output_plan
                .iter()
                .map(|s| s.frequency)
                .filter(|f| !frequencies.contains(f))
                .collect()
        } else {
            d.ground_truth_frequencies.clone()
        };
        DatasetSpec {
            regime: d.regime,
            splits: d.splits,
            surface: d.surface.clone(),
            render: self.render,
            frequencies,
            ground_truth_frequencies,
            phase_steps: self.phase_steps,
            quantize: d.quantize,
            noise_sigma: d.noise_sigma,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let back: RunConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"seed": 1, "colour": 3}"#);
        assert!(err.is_err());
        let nested = serde_json::from_str::<RunConfig>(r#"{"train": {"epochs": 3, "lr": 1}}"#);
        assert!(nested.is_err());
    }

    #[test]
    fn partial_files_take_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"seed": 9, "train": {"epochs": 3}}"#).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.batch_size, 4);
        assert_eq!(c.ladder.highest(), 64.0);
    }

    #[test]
    fn bad_ladder_is_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"ladder": [2, 4]}"#).is_err());
    }

    #[test]
    fn variants_and_dataset_frequencies() {
        let mut c = RunConfig::default();
        let v = c.variant().unwrap();
        assert_eq!(v.input_frequencies, vec![64.0]);
        let spec = c.dataset_spec(&v);
        assert_eq!(spec.frequencies, vec![64.0]);
        assert!(spec.ground_truth_frequencies.is_empty());
        spec.validate().unwrap();

        c.network.variant = VariantKind::UII;
        assert!(c.variant().is_err());
        c.network.low_frequency = Some(45.0);
        let v = c.variant().unwrap();
        let spec = c.dataset_spec(&v);
        assert_eq!(spec.frequencies, vec![64.0, 45.0]);
        assert_eq!(spec.ground_truth_frequencies, vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0]);
    }
}
