//! Classical and learned phase retrieval chains.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::fringe::{
    carrier_phase, height_from_phase, unwrap_ladder, wrap, wrapped_phase, AbsolutePhaseMap, FrequencyLadder,
    FringeImage, FringeSet, PhaseMap, RenderParams,
};
use crate::metrics::{evaluate_absolute, Metrics};
use crate::nn::{checkpoint, infer, Adam, Network, NetworkSpec, Variant, VariantKind};
use crate::raster;
use crate::rng::derive_seed;
use crate::surface::{generate_surface, render_scene, Surface, SurfaceGenConfig};

/// Anything that maps captured fringes to the stacks of a [`Variant`].
pub trait FringeTransformer {
    fn variant(&self) -> &Variant;
    fn transform(&self, inputs: &[FringeImage]) -> Result<Vec<FringeSet>>;
}

pub struct NetworkTransformer {
    pub network: Network,
    pub variant: Variant,
}

impl NetworkTransformer {
    pub fn new(network: Network, variant: Variant) -> Result<Self> {
        variant.validate()?;
        let spec = network.spec();
        if spec.input_channels() != variant.kind.input_count() || spec.output_channels() != variant.output_channels() {
            return Err(Error::invalid(format!(
                "network maps {} -> {} channels but the variant needs {} -> {}",
                spec.input_channels(),
                spec.output_channels(),
                variant.kind.input_count(),
                variant.output_channels()
            )));
        }
        Ok(Self { network, variant })
    }
}

impl FringeTransformer for NetworkTransformer {
    fn variant(&self) -> &Variant {
        &self.variant
    }

    fn transform(&self, inputs: &[FringeImage]) -> Result<Vec<FringeSet>> {
        infer(&self.network, &self.variant, inputs)
    }
}

/// Ignores its inputs and returns ground-truth stacks.
pub struct OracleTransformer {
    variant: Variant,
    truth: Vec<FringeSet>,
}

impl OracleTransformer {
    /// Picks the stacks named by the variant's output plan out of `available`.
    pub fn new(variant: Variant, available: &[FringeSet]) -> Result<Self> {
        variant.validate()?;
        let truth = variant
            .output_plan
            .iter()
            .map(|stack| {
                available
                    .iter()
                    .find(|s| s.frequency() == stack.frequency && s.phase_steps() == stack.phase_steps)
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("oracle has no stack at frequency {}", stack.frequency)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { variant, truth })
    }
}

impl FringeTransformer for OracleTransformer {
    fn variant(&self) -> &Variant {
        &self.variant
    }

    fn transform(&self, inputs: &[FringeImage]) -> Result<Vec<FringeSet>> {
        if inputs.len() != self.variant.kind.input_count() {
            return Err(Error::invalid(format!(
                "variant takes {} input fringe(s), got {}",
                self.variant.kind.input_count(),
                inputs.len()
            )));
        }
        Ok(self.truth.clone())
    }
}

/// Every intermediate of one retrieval, lowest ladder frequency first.
#[derive(Debug, Clone, PartialEq)]
pub struct Retrieval {
    pub wrapped: Vec<PhaseMap>,
    pub absolute: Vec<AbsolutePhaseMap>,
    pub height: Surface,
}

impl Retrieval {
    /// Absolute phase at the highest frequency.
    pub fn output(&self) -> &AbsolutePhaseMap {
        self.absolute.last().expect("retrieval has at least one map")
    }
}

fn carrier_map(map: &PhaseMap, sign: f64) -> Vec<f64> {
    let w = map.width;
    map.phase
        .iter()
        .enumerate()
        .map(|(i, p)| p + sign * carrier_phase(map.frequency, i % w, w))
        .collect()
}

/// Demodulates a full ladder of fringe sets, unwraps it and converts to height.
///
/// With the carrier enabled, the known ramp is removed before unwrapping and
/// restored afterwards.
pub fn classical_retrieve(sets: &[FringeSet], render: &RenderParams, modulation_threshold: f64) -> Result<Retrieval> {
    if sets.is_empty() {
        return Err(Error::invalid("no fringe sets to retrieve from"));
    }
    let wrapped: Vec<PhaseMap> = sets.iter().map(|s| wrapped_phase(s, modulation_threshold)).collect();
    let absolute = if render.carrier_enabled {
        let stripped = wrapped
            .iter()
            .map(|m| PhaseMap {
                phase: carrier_map(m, -1.0).into_iter().map(wrap).collect(),
                ..m.clone()
            })
            .collect::<Vec<_>>();
        unwrap_ladder(&stripped)?
            .into_iter()
            .zip(&wrapped)
            .map(|(abs, measured)| {
                let w = abs.width;
                let mut out = abs.clone();
                for i in 0..out.phase.len() {
                    if out.valid[i] {
                        out.phase[i] += carrier_phase(abs.frequency, i % w, w);
                        out.order[i] = ((out.phase[i] - measured.phase[i]) / TAU).round() as i64;
                    }
                }
                out
            })
            .collect()
    } else {
        unwrap_ladder(&wrapped)?
    };
    let height = height_from_phase(absolute.last().expect("nonempty ladder"), render)?;
    Ok(Retrieval {
        wrapped,
        absolute,
        height,
    })
}

/// The learned chain: the calculation network yields the top stack, the
/// unwrapping network the lower ones, then the classical ladder takes over.
pub fn end_to_end_retrieve(
    inputs: &[FringeImage],
    calculation: &dyn FringeTransformer,
    unwrapping: &dyn FringeTransformer,
    ladder: &FrequencyLadder,
    render: &RenderParams,
    modulation_threshold: f64,
) -> Result<Retrieval> {
    let (c, u) = (calculation.variant(), unwrapping.variant());
    if c.kind != VariantKind::C || c.input_frequencies[0] != ladder.highest() {
        return Err(Error::invalid(format!(
            "first network must be the calculation variant at frequency {}",
            ladder.highest()
        )));
    }
    if u.kind == VariantKind::C {
        return Err(Error::invalid("second network must be an unwrapping variant"));
    }
    let lower = &ladder.frequencies()[..ladder.count() - 1];
    let planned: Vec<f64> = u.output_plan.iter().map(|s| s.frequency).collect();
    if planned != lower || u.input_frequencies[0] != ladder.highest() {
        return Err(Error::invalid(format!(
            "unwrapping network produces {planned:?} but the ladder needs {lower:?}"
        )));
    }
    if inputs.len() != u.kind.input_count() {
        return Err(Error::invalid(format!(
            "{:?} takes {} input fringe(s), got {}",
            u.kind,
            u.kind.input_count(),
            inputs.len()
        )));
    }
    let mut sets = unwrapping.transform(inputs)?;
    sets.extend(calculation.transform(&inputs[..1])?);
    classical_retrieve(&sets, render, modulation_threshold)
}

/// Ground-truth absolute phase of `surface` at `frequency`.
pub fn analytic_phase(surface: &Surface, frequency: f64, render: &RenderParams) -> AbsolutePhaseMap {
    let (w, h) = (surface.width(), surface.height());
    let phase: Vec<f64> = (0..w * h)
        .map(|i| render.phase_at(surface.get(i % w, i / w), frequency, i % w, w))
        .collect();
    let order = phase.iter().map(|p| ((p - wrap(*p)) / TAU).round() as i64).collect();
    AbsolutePhaseMap {
        width: w,
        height: h,
        frequency,
        phase,
        order,
        valid: vec![true; w * h],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneResult {
    pub label: String,
    pub max_abs_height_error: f64,
    pub mean_abs_height_error: f64,
    pub mean_abs_phase_error: f64,
    pub order_error_rate: f64,
    pub valid_pixel_count: usize,
}

/// Compares a retrieval against the surface it was rendered from.
pub fn score_retrieval(
    label: &str,
    retrieval: &Retrieval,
    truth: &Surface,
    render: &RenderParams,
) -> Result<(SceneResult, Metrics)> {
    let out = retrieval.output();
    let metrics = evaluate_absolute(label, out, &analytic_phase(truth, out.frequency, render))?;
    let (mut max, mut sum, mut n) = (0.0f64, 0.0, 0usize);
    for (i, (z, t)) in retrieval.height.depth().iter().zip(truth.depth()).enumerate() {
        if out.valid[i] {
            let e = (z - t).abs();
            max = max.max(e);
            sum += e;
            n += 1;
        }
    }
    Ok((
        SceneResult {
            label: label.to_string(),
            max_abs_height_error: max,
            mean_abs_height_error: if n > 0 { sum / n as f64 } else { 0.0 },
            mean_abs_phase_error: metrics.mean_abs_phase_error,
            order_error_rate: metrics.order_error_rate.unwrap_or(0.0),
            valid_pixel_count: metrics.valid_pixel_count,
        },
        metrics,
    ))
}

/// Surface `index` of the classical end-to-end run.
pub fn e2e_surface(config: &RunConfig, index: usize) -> Result<Surface> {
    generate_surface(&SurfaceGenConfig {
        seed: derive_seed(config.seed, "e2e", index as u64),
        ..config.dataset.surface.clone()
    })
}

/// Render → demodulate → unwrap → height on `config.e2e.scenes` random surfaces.
pub fn run_classical_e2e(config: &RunConfig) -> Result<Vec<(SceneResult, Metrics, Retrieval)>> {
    config.validate()?;
    (0..config.e2e.scenes)
        .map(|i| {
            let surface = e2e_surface(config, i)?;
            let sets = render_scene(&surface, config.ladder.frequencies(), config.phase_steps, &config.render)?;
            let r = classical_retrieve(&sets, &config.render, config.modulation_threshold)?;
            let (score, metrics) = score_retrieval(&format!("scene{i:03}"), &r, &surface, &config.render)?;
            Ok((score, metrics, r))
        })
        .collect()
}

/// Network architecture and task stored next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCard {
    pub spec: NetworkSpec,
    pub variant: Variant,
}

pub fn model_card_path(weights: &Path) -> PathBuf {
    let mut name = weights.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

/// Writes the checkpoint and its `<weights>.json` model card.
pub fn save_model(path: &Path, network: &Network, variant: &Variant, optimizer: Option<&Adam>) -> Result<()> {
    checkpoint::save(path, network, optimizer)?;
    let card = ModelCard {
        spec: network.spec().clone(),
        variant: variant.clone(),
    };
    raster::write_bytes(&model_card_path(path), &serde_json::to_vec_pretty(&card)?)
}

pub fn load_model(path: &Path) -> Result<(Network, Variant, Option<Adam>)> {
    let card_path = model_card_path(path);
    let text = std::fs::read_to_string(&card_path).map_err(|e| Error::io(&card_path, e))?;
    let card: ModelCard = serde_json::from_str(&text)?;
    let (network, adam) = checkpoint::load(path, &card.spec)?;
    Ok((network, card.variant, adam))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::build_network;

    fn config(carrier: bool) -> RunConfig {
        let mut c = RunConfig::default();
        c.render.carrier_enabled = carrier;
        c.dataset.surface.width = 32;
        c.dataset.surface.height = 16;
        c.e2e.scenes = 3;
        c
    }

    #[test]
    fn classical_chain_recovers_surfaces() {
        for carrier in [false, true] {
            for (score, metrics, _) in run_classical_e2e(&config(carrier)).unwrap() {
                assert!(score.max_abs_height_error < 1e-6, "{carrier} {score:?}");
                assert_eq!(metrics.order_error_rate, Some(0.0));
                assert_eq!(score.valid_pixel_count, 32 * 16);
            }
        }
    }

    #[test]
    fn oracle_pipeline_matches_classical() {
        for carrier in [false, true] {
            let c = config(carrier);
            let surface = e2e_surface(&c, 0).unwrap();
            let sets = render_scene(&surface, c.ladder.frequencies(), c.phase_steps, &c.render).unwrap();
            let classical = classical_retrieve(&sets, &c.render, c.modulation_threshold).unwrap();
            let calc = OracleTransformer::new(c.variant_of(VariantKind::C).unwrap(), &sets).unwrap();
            let unwrap = OracleTransformer::new(c.variant_of(VariantKind::UI).unwrap(), &sets).unwrap();
            let top = sets.last().unwrap().images()[0].clone();
            let learned = end_to_end_retrieve(&[top], &calc, &unwrap, &c.ladder, &c.render, c.modulation_threshold).unwrap();
            assert_eq!(learned, classical);
        }
    }

    #[test]
    fn mismatched_networks_are_rejected() {
        let c = config(false);
        let surface = e2e_surface(&c, 0).unwrap();
        let sets = render_scene(&surface, c.ladder.frequencies(), c.phase_steps, &c.render).unwrap();
        let calc = OracleTransformer::new(c.variant_of(VariantKind::C).unwrap(), &sets).unwrap();
        let top = sets.last().unwrap().images()[0].clone();
        let swapped = end_to_end_retrieve(&[top.clone()], &calc, &calc, &c.ladder, &c.render, 0.0);
        assert!(swapped.is_err());
        let unwrap = OracleTransformer::new(c.variant_of(VariantKind::UI).unwrap(), &sets).unwrap();
        let two = end_to_end_retrieve(&[top.clone(), top], &calc, &unwrap, &c.ladder, &c.render, 0.0);
        assert!(two.is_err());
    }

    #[test]
    fn model_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let variant = Variant::calculation(8.0, 4).unwrap();
        let net = Network::new(build_network(&variant, 0.125, true).unwrap(), 3).unwrap();
        let path = dir.path().join("c.fptw");
        save_model(&path, &net, &variant, None).unwrap();
        let (back, v, adam) = load_model(&path).unwrap();
        assert_eq!(v, variant);
        assert!(adam.is_none());
        assert_eq!(back.params(), net.params());
        assert!(NetworkTransformer::new(back, Variant::calculation(8.0, 3).unwrap()).is_err());
    }
}
