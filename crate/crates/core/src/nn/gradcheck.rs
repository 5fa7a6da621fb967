//! Central-difference verification of [`Network::backward`].
//!
//! With normalization off, the loss `L = Σ r ⊙ f(x)` is piecewise linear in
//! any single parameter. A stencil whose second difference is not zero
//! therefore straddles a ReLU or max-pool switch, where a central difference
//! does not estimate the gradient; such entries are skipped and replaced.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::network::{Mode, Network};
use super::spec::{LayerSpec, NetworkSpec};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const STEP: f32 = 1e-3;
/// Second differences above this mark a switch inside the stencil.
pub const KINK: f64 = 1e-6;
pub const ENTRIES_PER_PARAM: usize = 24;
const MIN_SMOOTH: usize = 4;

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub layers: Vec<LayerSpec>,
    pub input_shape: [usize; 4],
    pub seed: u64,
    /// Restrict the loss to this many output pixels.
    pub active_outputs: Option<usize>,
    /// Multiplies the analytic gradient; anything but 1 must fail the check.
    pub analytic_scale: f32,
}

impl GradCheck {
    pub fn new(layers: Vec<LayerSpec>, input_shape: [usize; 4], seed: u64) -> Self {
        Self {
            layers,
            input_shape,
            seed,
            active_outputs: None,
            analytic_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// `‖g − g_fd‖ / max(‖g_fd‖, ε)` over every checked entry.
    pub relative_error: f64,
    pub checked: usize,
    pub straddled: usize,
}

fn random_tensor(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect())
}

fn weighted_sum(net: &Network, input: &Tensor, weights: &Tensor) -> Result<f64> {
    let (out, _) = net.forward(input, Mode::Train)?;
    Ok(out
        .data()
        .iter()
        .zip(weights.data())
        .map(|(o, r)| *o as f64 * *r as f64)
        .sum())
}

pub fn run(check: &GradCheck) -> Result<GradCheckReport> {
    let spec = NetworkSpec::new(check.layers.clone(), 1.0, false)?;
    let mut net = Network::new(spec, check.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(check.seed);
    // Gain-preserving weights keep deep gradients well above f32 rounding in the loss.
    for p in net.params_mut() {
        let bound = if p.shape.len() == 4 {
            (6.0 / p.shape[1..].iter().product::<usize>() as f32).sqrt()
        } else {
            0.1
        };
        for v in p.data.iter_mut() {
            *v = rng.random_range(-bound..bound);
        }
    }
    let input = random_tensor(check.input_shape, &mut rng)?;
    let (out, cache) = net.forward(&input, Mode::Train)?;
    let mut weights = random_tensor(out.shape(), &mut rng)?;
    if let Some(k) = check.active_outputs {
        let mut order: Vec<usize> = (0..weights.data().len()).collect();
        order.shuffle(&mut rng);
        for i in order.into_iter().skip(k) {
            weights.data_mut()[i] = 0.0;
        }
    }
    let analytic = net.backward(&cache, &weights)?;
    drop(cache);

    let (mut diff2, mut fd2) = (0.0f64, 0.0f64);
    let (mut total_checked, mut total_straddled) = (0, 0);
    for p in 0..net.params().len() {
        if !net.params()[p].trainable {
            continue;
        }
        let len = net.params()[p].data.len();
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        let (mut checked, mut straddled) = (0usize, 0usize);
        for j in order {
            if checked == ENTRIES_PER_PARAM {
                break;
            }
            let original = net.params()[p].data[j];
            net.params_mut()[p].data[j] = original + STEP;
            let plus = weighted_sum(&net, &input, &weights)?;
            net.params_mut()[p].data[j] = original - STEP;
            let minus = weighted_sum(&net, &input, &weights)?;
            net.params_mut()[p].data[j] = original;
            let center = weighted_sum(&net, &input, &weights)?;
            if (plus - 2.0 * center + minus).abs() > KINK {
                straddled += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * STEP as f64);
            diff2 += ((analytic.grads[p][j] * check.analytic_scale) as f64 - numeric).powi(2);
            fd2 += numeric * numeric;
            checked += 1;
        }
        if checked < len.min(MIN_SMOOTH) && !(checked > 0 && len <= MIN_SMOOTH) {
            return Err(Error::Numeric(format!(
                "{}: only {checked} differentiable entries ({straddled} straddled a switch)",
                net.params()[p].name
            )));
        }
        total_checked += checked;
        total_straddled += straddled;
    }
    Ok(GradCheckReport {
        relative_error: diff2.sqrt() / fd2.sqrt().max(1e-12),
        checked: total_checked,
        straddled: total_straddled,
    })
}

/// The layer-wise and composed cases: every layer type in isolation, ERF at
/// each dilation, and a downsample-ERF-upsample-output stack.
pub fn standard_suite() -> Vec<(String, GradCheck)> {
    let mut cases = vec![
        (
            "downsample (pool)".to_string(),
            GradCheck::new(vec![LayerSpec::Downsample { in_ch: 2, out_ch: 5, stride: 2 }], [2, 2, 4, 4], 1),
        ),
        (
            "downsample (passthrough)".to_string(),
            GradCheck::new(vec![LayerSpec::Downsample { in_ch: 1, out_ch: 4, stride: 1 }], [2, 1, 4, 3], 2),
        ),
    ];
    for (i, dilation) in [1, 2, 4, 8, 16].into_iter().enumerate() {
        // Just large enough that every dilated tap lands inside the image somewhere.
        let size = dilation + 2;
        let mut c = GradCheck::new(vec![LayerSpec::Erf { channels: 2, dilation }], [1, 2, size, size], 10 + i as u64);
        c.active_outputs = Some(3);
        cases.push((format!("erf (dilation {dilation})"), c));
    }
    cases.push((
        "upsample".to_string(),
        GradCheck::new(vec![LayerSpec::Upsample { in_ch: 3, out_ch: 2 }], [2, 3, 2, 3], 3),
    ));
    cases.push((
        "output conv".to_string(),
        GradCheck::new(vec![LayerSpec::OutputConv { in_ch: 4, out_ch: 3 }], [2, 4, 3, 4], 4),
    ));
    cases.push((
        "composed".to_string(),
        GradCheck::new(
            vec![
                LayerSpec::Downsample { in_ch: 1, out_ch: 4, stride: 2 },
                LayerSpec::Erf { channels: 4, dilation: 2 },
                LayerSpec::Upsample { in_ch: 4, out_ch: 3 },
                LayerSpec::OutputConv { in_ch: 3, out_ch: 2 },
            ],
            [2, 1, 4, 6],
            5,
        ),
    ));
    cases
}
