use rand::Rng;

use super::ops::{self, ConvGeom, NormCache, ParamGrads, UpGeom};
use super::spec::{LayerSpec, NetworkSpec};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng;

/// Inputs are reflect-padded to a multiple of this before inference.
pub const PAD_MULTIPLE: usize = 8;

/// A named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    /// Running normalization statistics are stored here but never optimized.
    pub trainable: bool,
}

#[derive(Debug, Clone, Copy)]
struct ConvRef {
    geom: ConvGeom,
    weight: usize,
    bias: usize,
}

#[derive(Debug, Clone, Copy)]
struct UpRef {
    geom: UpGeom,
    weight: usize,
    bias: usize,
}

#[derive(Debug, Clone, Copy)]
struct NormRef {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

#[derive(Debug, Clone)]
enum Layer {
    Downsample {
        conv: ConvRef,
        pool: bool,
        norm: Option<NormRef>,
    },
    Erf {
        convs: [ConvRef; 4],
        norms: Option<[NormRef; 2]>,
    },
    Upsample {
        up: UpRef,
        norm: Option<NormRef>,
    },
    Output {
        conv: ConvRef,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics for normalization; caches kept for backward.
    Train,
    /// Running statistics for normalization.
    Eval,
}

#[derive(Debug)]
enum LayerCache {
    Downsample {
        input: Tensor,
        argmax: Option<Vec<u32>>,
        norm: Option<NormCache>,
        output: Tensor,
    },
    Erf {
        input: Tensor,
        r1: Tensor,
        r2: Tensor,
        r3: Tensor,
        norms: Option<[NormCache; 2]>,
        output: Tensor,
    },
    Upsample {
        input: Tensor,
        norm: Option<NormCache>,
        output: Tensor,
    },
    Output {
        input: Tensor,
    },
}

/// Activations recorded by [`Network::forward`] for one backward pass.
#[derive(Debug)]
pub struct ForwardCache {
    version: u64,
    fingerprint: u64,
    mode: Mode,
    layers: Vec<LayerCache>,
}

/// Gradients aligned with [`Network::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub grads: Vec<Vec<f32>>,
}

impl Gradients {
    pub fn norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(|g| (*g as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// The parameter store together with the layer plan that owns it.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    params: Vec<Param>,
    layers: Vec<Layer>,
    version: u64,
}

struct Builder<'a> {
    params: Vec<Param>,
    rng: &'a mut rng::StreamRng,
}

impl Builder<'_> {
    fn push(&mut self, name: String, shape: Vec<usize>, data: Vec<f32>, trainable: bool) -> usize {
        self.params.push(Param {
            name,
            shape,
            data,
            trainable,
        });
        self.params.len() - 1
    }

    fn uniform(&mut self, len: usize, bound: f32) -> Vec<f32> {
        (0..len).map(|_| self.rng.random_range(-bound..bound)).collect()
    }

    fn conv(&mut self, name: &str, geom: ConvGeom) -> ConvRef {
        let fan_in = geom.col_rows();
        let bound = 1.0 / (fan_in as f32).sqrt();
        let w = self.uniform(geom.weight_len(), bound);
        let b = self.uniform(geom.out_ch, bound);
        let (kh, kw) = geom.kernel;
        ConvRef {
            geom,
            weight: self.push(format!("{name}.weight"), vec![geom.out_ch, geom.in_ch, kh, kw], w, true),
            bias: self.push(format!("{name}.bias"), vec![geom.out_ch], b, true),
        }
    }

    fn up(&mut self, name: &str, geom: UpGeom) -> UpRef {
        let bound = 1.0 / ((geom.in_ch * 9) as f32).sqrt();
        let w = self.uniform(geom.weight_len(), bound);
        let b = self.uniform(geom.out_ch, bound);
        UpRef {
            geom,
            weight: self.push(format!("{name}.weight"), vec![geom.in_ch, geom.out_ch, 3, 3], w, true),
            bias: self.push(format!("{name}.bias"), vec![geom.out_ch], b, true),
        }
    }

    fn norm(&mut self, name: &str, ch: usize) -> NormRef {
        NormRef {
            gamma: self.push(format!("{name}.gamma"), vec![ch], vec![1.0; ch], true),
            beta: self.push(format!("{name}.beta"), vec![ch], vec![0.0; ch], true),
            mean: self.push(format!("{name}.running_mean"), vec![ch], vec![0.0; ch], false),
            var: self.push(format!("{name}.running_var"), vec![ch], vec![1.0; ch], false),
        }
    }
}

fn factorized(ch: usize, vertical: bool, dilation: usize) -> ConvGeom {
    let (kernel, pad, dil) = if vertical {
        ((3, 1), (dilation, 0), (dilation, 1))
    } else {
        ((1, 3), (0, dilation), (1, dilation))
    };
    ConvGeom {
        in_ch: ch,
        out_ch: ch,
        kernel,
        stride: (1, 1),
        pad,
        dilation: dil,
    }
}

impl Network {
    /// Builds the network with seeded fan-in scaled uniform initialization.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut r = rng::stream(seed, "init", 0);
        let mut b = Builder {
            params: Vec::new(),
            rng: &mut r,
        };
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, layer) in spec.layers.iter().enumerate() {
            let name = format!("l{i:02}");
            let built = match *layer {
                LayerSpec::Downsample { in_ch, out_ch, stride } => Layer::Downsample {
                    conv: b.conv(&format!("{name}.conv"), ConvGeom::square(in_ch, out_ch - in_ch, 3, stride, 1)),
                    pool: stride == 2,
                    norm: spec.normalization.then(|| b.norm(&format!("{name}.norm"), out_ch)),
                },
                LayerSpec::Erf { channels, dilation } => Layer::Erf {
                    convs: [
                        b.conv(&format!("{name}.conv3x1_1"), factorized(channels, true, 1)),
                        b.conv(&format!("{name}.conv1x3_1"), factorized(channels, false, 1)),
                        b.conv(&format!("{name}.conv3x1_2"), factorized(channels, true, dilation)),
                        b.conv(&format!("{name}.conv1x3_2"), factorized(channels, false, dilation)),
                    ],
                    norms: spec.normalization.then(|| {
                        [
                            b.norm(&format!("{name}.norm1"), channels),
                            b.norm(&format!("{name}.norm2"), channels),
                        ]
                    }),
                },
                LayerSpec::Upsample { in_ch, out_ch } => Layer::Upsample {
                    up: b.up(&format!("{name}.deconv"), UpGeom { in_ch, out_ch }),
                    norm: spec.normalization.then(|| b.norm(&format!("{name}.norm"), out_ch)),
                },
                LayerSpec::OutputConv { in_ch, out_ch } => Layer::Output {
                    conv: b.conv(&format!("{name}.conv"), ConvGeom::square(in_ch, out_ch, 1, 1, 0)),
                },
            };
            layers.push(built);
        }
        let params = b.params;
        Ok(Self {
            spec,
            params,
            layers,
            version: 0,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    /// Mutable parameter access; invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut [Param] {
        self.version += 1;
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.data.len()).sum()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            grads: self.params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
        }
    }

    fn p(&self, i: usize) -> &[f32] {
        &self.params[i].data
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let factor = self.spec.spatial_factor();
        if input.channels() != self.spec.input_channels() {
            return Err(Error::shape(format!(
                "network expects {} input channels, got {}",
                self.spec.input_channels(),
                input.channels()
            )));
        }
        if input.height() % factor != 0 || input.width() % factor != 0 || input.height() == 0 || input.width() == 0 {
            return Err(Error::shape(format!(
                "input {}x{} is not a nonzero multiple of {factor}; pad it first",
                input.height(),
                input.width()
            )));
        }
        Ok(())
    }

    fn normalize(&self, x: Tensor, norm: &NormRef, mode: Mode) -> (Tensor, Option<NormCache>) {
        match mode {
            Mode::Train => {
                let (y, cache) = ops::batch_norm_train(&x, self.p(norm.gamma), self.p(norm.beta));
                (y, Some(cache))
            }
            Mode::Eval => (
                ops::batch_norm_eval(&x, self.p(norm.gamma), self.p(norm.beta), self.p(norm.mean), self.p(norm.var)),
                None,
            ),
        }
    }

    fn conv(&self, c: &ConvRef, x: &Tensor) -> Result<Tensor> {
        ops::conv2d(&c.geom, x, self.p(c.weight), self.p(c.bias))
    }

    /// Runs the network on an input whose size is a multiple of the spatial factor.
    pub fn forward(&self, input: &Tensor, mode: Mode) -> Result<(Tensor, ForwardCache)> {
        self.check_input(input)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &self.layers {
            let (y, cache) = self.forward_layer(layer, x, mode)?;
            caches.push(cache);
            x = y;
        }
        if !x.all_finite() {
            return Err(Error::Numeric("network output contains non-finite values".into()));
        }
        Ok((
            x,
            ForwardCache {
                version: self.version,
                fingerprint: self.spec.fingerprint(),
                mode,
                layers: caches,
            },
        ))
    }

    fn forward_layer(&self, layer: &Layer, x: Tensor, mode: Mode) -> Result<(Tensor, LayerCache)> {
        Ok(match layer {
            Layer::Downsample { conv, pool, norm } => {
                let c = self.conv(conv, &x)?;
                let (side, argmax) = if *pool {
                    let (p, a) = ops::max_pool2(&x);
                    (p, Some(a))
                } else {
                    (x.clone(), None)
                };
                let cat = ops::concat_channels(&c, &side)?;
                let (mut y, nc) = match norm {
                    Some(n) => self.normalize(cat, n, mode),
                    None => (cat, None),
                };
                ops::relu_inplace(&mut y);
                let cache = LayerCache::Downsample {
                    input: x,
                    argmax,
                    norm: nc,
                    output: y.clone(),
                };
                (y, cache)
            }
            Layer::Erf { convs, norms } => {
                let mut r1 = self.conv(&convs[0], &x)?;
                ops::relu_inplace(&mut r1);
                let a2 = self.conv(&convs[1], &r1)?;
                let (mut r2, n1) = match norms {
                    Some(n) => self.normalize(a2, &n[0], mode),
                    None => (a2, None),
                };
                ops::relu_inplace(&mut r2);
                let mut r3 = self.conv(&convs[2], &r2)?;
                ops::relu_inplace(&mut r3);
                let a4 = self.conv(&convs[3], &r3)?;
                let (mut y, n2) = match norms {
                    Some(n) => self.normalize(a4, &n[1], mode),
                    None => (a4, None),
                };
                ops::add_inplace(&mut y, &x);
                ops::relu_inplace(&mut y);
                let norms = match (n1, n2) {
                    (Some(a), Some(b)) => Some([a, b]),
                    _ => None,
                };
                let cache = LayerCache::Erf {
                    input: x,
                    r1,
                    r2,
                    r3,
                    norms,
                    output: y.clone(),
                };
                (y, cache)
            }
            Layer::Upsample { up, norm } => {
                let d = ops::conv_transpose2d(&up.geom, &x, self.p(up.weight), self.p(up.bias))?;
                let (mut y, nc) = match norm {
                    Some(n) => self.normalize(d, n, mode),
                    None => (d, None),
                };
                ops::relu_inplace(&mut y);
                let cache = LayerCache::Upsample {
                    input: x,
                    norm: nc,
                    output: y.clone(),
                };
                (y, cache)
            }
            Layer::Output { conv } => {
                let y = self.conv(conv, &x)?;
                (y, LayerCache::Output { input: x })
            }
        })
    }

    /// Eval-mode forward that pads to [`PAD_MULTIPLE`] and crops back.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        let (h, w) = (input.height(), input.width());
        let padded = input.pad_to_multiple(PAD_MULTIPLE);
        let (out, _) = self.forward(&padded, Mode::Eval)?;
        out.crop(h, w)
    }

    /// Exact parameter gradients for the cached forward pass.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &Tensor) -> Result<Gradients> {
        if cache.version != self.version || cache.fingerprint != self.spec.fingerprint() {
            return Err(Error::invalid("forward cache is stale: parameters changed since forward"));
        }
        if cache.layers.len() != self.layers.len() {
            return Err(Error::invalid("forward cache does not belong to this network"));
        }
        let mut grads = self.zero_gradients();
        let mut g = grad_output.clone();
        for (layer, lc) in self.layers.iter().zip(&cache.layers).rev() {
            g = self.backward_layer(layer, lc, g, cache.mode, &mut grads)?;
        }
        Ok(grads)
    }

    fn accumulate(grads: &mut Gradients, weight: usize, bias: usize, pg: ParamGrads) {
        grads.grads[weight].iter_mut().zip(&pg.weight).for_each(|(a, b)| *a += b);
        grads.grads[bias].iter_mut().zip(&pg.bias).for_each(|(a, b)| *a += b);
    }

    fn norm_backward(
        &self,
        norm: &NormRef,
        cache: Option<&NormCache>,
        g: Tensor,
        mode: Mode,
        grads: &mut Gradients,
    ) -> Result<Tensor> {
        match (mode, cache) {
            (Mode::Train, Some(nc)) => {
                let (gx, pg) = ops::batch_norm_backward(nc, self.p(norm.gamma), &g);
                Self::accumulate(grads, norm.gamma, norm.beta, pg);
                Ok(gx)
            }
            _ => Err(Error::invalid(
                "backward through normalization requires a train-mode forward",
            )),
        }
    }

    fn conv_backward(&self, c: &ConvRef, x: &Tensor, g: &Tensor, grads: &mut Gradients) -> Result<Tensor> {
        let (gx, pg) = ops::conv2d_backward(&c.geom, x, self.p(c.weight), g)?;
        Self::accumulate(grads, c.weight, c.bias, pg);
        Ok(gx)
    }

    fn backward_layer(
        &self,
        layer: &Layer,
        cache: &LayerCache,
        mut g: Tensor,
        mode: Mode,
        grads: &mut Gradients,
    ) -> Result<Tensor> {
        match (layer, cache) {
            (
                Layer::Downsample { conv, norm, .. },
                LayerCache::Downsample {
                    input,
                    argmax,
                    norm: nc,
                    output,
                },
            ) => {
                ops::relu_backward(&mut g, output);
                if let Some(n) = norm {
                    g = self.norm_backward(n, nc.as_ref(), g, mode, grads)?;
                }
                let (gc, gside) = ops::split_channels(&g, conv.geom.out_ch);
                let mut gx = self.conv_backward(conv, input, &gc, grads)?;
                let gside = match argmax {
                    Some(a) => ops::max_pool2_backward(input.shape(), a, &gside),
                    None => gside,
                };
                ops::add_inplace(&mut gx, &gside);
                Ok(gx)
            }
            (
                Layer::Erf { convs, norms },
                LayerCache::Erf {
                    input,
                    r1,
                    r2,
                    r3,
                    norms: ncs,
                    output,
                },
            ) => {
                ops::relu_backward(&mut g, output);
                let residual = g.clone();
                if let Some(n) = norms {
                    g = self.norm_backward(&n[1], ncs.as_ref().map(|c| &c[1]), g, mode, grads)?;
                }
                let mut g3 = self.conv_backward(&convs[3], r3, &g, grads)?;
                ops::relu_backward(&mut g3, r3);
                let mut g2 = self.conv_backward(&convs[2], r2, &g3, grads)?;
                ops::relu_backward(&mut g2, r2);
                if let Some(n) = norms {
                    g2 = self.norm_backward(&n[0], ncs.as_ref().map(|c| &c[0]), g2, mode, grads)?;
                }
                let mut g1 = self.conv_backward(&convs[1], r1, &g2, grads)?;
                ops::relu_backward(&mut g1, r1);
                let mut gx = self.conv_backward(&convs[0], input, &g1, grads)?;
                ops::add_inplace(&mut gx, &residual);
                Ok(gx)
            }
            (Layer::Upsample { up, norm }, LayerCache::Upsample { input, norm: nc, output }) => {
                ops::relu_backward(&mut g, output);
                if let Some(n) = norm {
                    g = self.norm_backward(n, nc.as_ref(), g, mode, grads)?;
                }
                let (gx, pg) = ops::conv_transpose2d_backward(&up.geom, input, self.p(up.weight), &g)?;
                Self::accumulate(grads, up.weight, up.bias, pg);
                Ok(gx)
            }
            (Layer::Output { conv }, LayerCache::Output { input }) => self.conv_backward(conv, input, &g, grads),
            _ => Err(Error::invalid("forward cache layout does not match the network")),
        }
    }

    /// Folds the batch statistics of a train-mode pass into the running estimates.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        if cache.mode != Mode::Train {
            return;
        }
        let mut pending = Vec::new();
        for (layer, lc) in self.layers.iter().zip(&cache.layers) {
            match (layer, lc) {
                (Layer::Downsample { norm: Some(n), .. }, LayerCache::Downsample { norm: Some(c), .. })
                | (Layer::Upsample { norm: Some(n), .. }, LayerCache::Upsample { norm: Some(c), .. }) => {
                    pending.push((*n, c));
                }
                (Layer::Erf { norms: Some(n), .. }, LayerCache::Erf { norms: Some(c), .. }) => {
                    pending.push((n[0], &c[0]));
                    pending.push((n[1], &c[1]));
                }
                _ => {}
            }
        }
        let m = ops::NORM_MOMENTUM;
        for (n, c) in pending {
            for (r, b) in self.params[n.mean].data.iter_mut().zip(&c.batch_mean) {
                *r = (1.0 - m) * *r + m * b;
            }
            for (r, b) in self.params[n.var].data.iter_mut().zip(&c.batch_var) {
                *r = (1.0 - m) * *r + m * b;
            }
        }
    }

    /// Replaces all parameter values, checking names and shapes.
    pub fn load_params(&mut self, params: Vec<Param>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::invalid(format!(
                "expected {} parameter tensors, got {}",
                self.params.len(),
                params.len()
            )));
        }
        for (mine, theirs) in self.params.iter().zip(&params) {
            if mine.name != theirs.name || mine.shape != theirs.shape {
                return Err(Error::invalid(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    theirs.name, theirs.shape, mine.name, mine.shape
                )));
            }
        }
        for (mine, theirs) in self.params.iter_mut().zip(params) {
            mine.data = theirs.data;
        }
        self.version += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::{build_network, Variant};

    fn small_spec(normalization: bool) -> NetworkSpec {
        build_network(&Variant::calculation(8.0, 4).unwrap(), 0.25, normalization).unwrap()
    }

    #[test]
    fn output_matches_input_size() {
        let net = Network::new(small_spec(true), 1).unwrap();
        let x = Tensor::zeros([2, 1, 16, 24]);
        let (y, _) = net.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.shape(), [2, 4, 16, 24]);
    }

    #[test]
    fn predict_pads_and_crops() {
        let net = Network::new(small_spec(false), 1).unwrap();
        let y = net.predict(&Tensor::zeros([1, 1, 13, 10])).unwrap();
        assert_eq!(y.shape(), [1, 4, 13, 10]);
        assert!(net.forward(&Tensor::zeros([1, 1, 13, 10]), Mode::Eval).is_err());
        assert!(net.forward(&Tensor::zeros([1, 2, 16, 16]), Mode::Eval).is_err());
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let mut net = Network::new(small_spec(false), 1).unwrap();
        net.params_mut().iter_mut().for_each(|p| p.data.fill(0.0));
        let x = Tensor::from_vec([1, 1, 8, 8], (0..64).map(|v| v as f32 / 64.0).collect()).unwrap();
        let (y, _) = net.forward(&x, Mode::Eval).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut net = Network::new(small_spec(false), 3).unwrap();
        let x = Tensor::zeros([1, 1, 8, 8]);
        let (y, cache) = net.forward(&x, Mode::Train).unwrap();
        net.params_mut()[0].data[0] += 1.0;
        assert!(net.backward(&cache, &y).is_err());
    }

    #[test]
    fn zero_output_gradient_gives_zero_parameter_gradient() {
        let net = Network::new(small_spec(true), 3).unwrap();
        let x = Tensor::from_vec([2, 1, 8, 8], (0..128).map(|v| (v % 7) as f32 / 7.0).collect()).unwrap();
        let (y, cache) = net.forward(&x, Mode::Train).unwrap();
        let g = net.backward(&cache, &Tensor::zeros(y.shape())).unwrap();
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn running_stats_move_toward_batch_stats() {
        let mut net = Network::new(small_spec(true), 3).unwrap();
        let x = Tensor::from_vec([2, 1, 8, 8], (0..128).map(|v| (v % 5) as f32).collect()).unwrap();
        let before: Vec<f32> = net.params().iter().filter(|p| p.name.ends_with("running_mean")).flat_map(|p| p.data.clone()).collect();
        let (_, cache) = net.forward(&x, Mode::Train).unwrap();
        net.update_running_stats(&cache);
        let after: Vec<f32> = net.params().iter().filter(|p| p.name.ends_with("running_mean")).flat_map(|p| p.data.clone()).collect();
        assert_ne!(before, after);
    }

    #[test]
    fn initialization_is_seeded() {
        let a = Network::new(small_spec(true), 9).unwrap();
        let b = Network::new(small_spec(true), 9).unwrap();
        let c = Network::new(small_spec(true), 10).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }
}
