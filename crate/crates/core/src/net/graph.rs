//! The U-Net as an explicit layer graph with cached activations.
//!
//! Nodes are stored in topological order; the backward pass walks them in
//! exact reverse and accumulates into each node's input gradients.

use crate::error::{ensure, Error, Result};
use crate::kernel::{build_band_partition, BandPartition, BandTheta, SreConvParams};
use crate::net::config::{ConvType, UNetConfig};
use crate::net::init;
use crate::ops::conv::{conv2d_backward, conv2d_fast, ConvSpec};
use crate::ops::pool::{maxpool2, maxpool2_backward, ArgmaxRecord};
use crate::ops::sre::{sre_backward_cached, sre_forward, PooledCache};
use crate::ops::upsample::{upsample2_linear, upsample2_linear_backward};
use crate::ops::{relu, relu_backward};
use crate::real::Real;
use crate::tensor::Tensor4;

/// One named trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T> Param<T> {
    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Gradients aligned index-for-index with [`Network::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub names: Vec<String>,
    pub grads: Vec<Vec<T>>,
}

#[derive(Clone, Debug)]
pub enum ConvKind {
    Sre(BandPartition),
    Dense,
}

#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub name: String,
    pub kind: ConvKind,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub weight: usize,
    pub bias: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Node {
    Input,
    Conv { input: usize, layer: usize },
    Relu { input: usize },
    MaxPool { input: usize },
    Upsample { input: usize },
    Concat { a: usize, b: usize },
}

impl Node {
    fn inputs(&self) -> Vec<usize> {
        match *self {
            Node::Input => vec![],
            Node::Conv { input, .. }
            | Node::Relu { input }
            | Node::MaxPool { input }
            | Node::Upsample { input } => vec![input],
            Node::Concat { a, b } => vec![a, b],
        }
    }
}

enum Aux<T> {
    None,
    Argmax(ArgmaxRecord),
    Pooled(PooledCache<T>),
}

struct Cache<T> {
    acts: Vec<Tensor4<T>>,
    aux: Vec<Aux<T>>,
}

pub struct Network<T> {
    config: UNetConfig,
    seed: u64,
    nodes: Vec<Node>,
    convs: Vec<ConvLayer>,
    params: Vec<Param<T>>,
    cache: Option<Cache<T>>,
}

impl<T: Real> Clone for Network<T> {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            seed: self.seed,
            nodes: self.nodes.clone(),
            convs: self.convs.clone(),
            params: self.params.clone(),
            cache: None,
        }
    }
}

struct Builder<T> {
    seed: u64,
    nodes: Vec<Node>,
    convs: Vec<ConvLayer>,
    params: Vec<Param<T>>,
    bias: bool,
}

impl<T: Real> Builder<T> {
    fn push(&mut self, node: Node) -> usize {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    fn conv(
        &mut self,
        input: usize,
        name: &str,
        conv_type: ConvType,
        c_in: usize,
        c_out: usize,
        k: usize,
    ) -> Result<usize> {
        let use_bands = conv_type == ConvType::Sre && k >= 3;
        let weight = self.params.len();
        let (kind, param) = if use_bands {
            let part = build_band_partition(k)?;
            let data = init::band_theta(self.seed, weight, c_out, c_in, &part);
            let p = Param {
                name: format!("{name}.theta"),
                shape: vec![c_out, c_in, part.bands()],
                data,
            };
            (ConvKind::Sre(part), p)
        } else {
            let p = Param {
                name: format!("{name}.weight"),
                shape: vec![c_out, c_in, k, k],
                data: init::dense_kernel(self.seed, weight, c_out, c_in, k),
            };
            (ConvKind::Dense, p)
        };
        self.params.push(param);
        let bias = self.bias.then(|| {
            self.params.push(Param {
                name: format!("{name}.bias"),
                shape: vec![c_out],
                data: vec![T::zero(); c_out],
            });
            self.params.len() - 1
        });
        self.convs.push(ConvLayer {
            name: name.to_string(),
            kind,
            c_in,
            c_out,
            k,
            weight,
            bias,
        });
        let layer = self.convs.len() - 1;
        Ok(self.push(Node::Conv { input, layer }))
    }

    fn conv_relu(
        &mut self,
        input: usize,
        name: &str,
        t: ConvType,
        c_in: usize,
        c_out: usize,
        k: usize,
    ) -> Result<usize> {
        let c = self.conv(input, name, t, c_in, c_out, k)?;
        Ok(self.push(Node::Relu { input: c }))
    }
}

/// Build the encoder/decoder graph for `cfg`, initialising weights from `seed`.
pub fn build_unet<T: Real>(cfg: &UNetConfig, seed: u64) -> Result<Network<T>> {
    cfg.validate()?;
    let mut b = Builder {
        seed,
        nodes: Vec::new(),
        convs: Vec::new(),
        params: Vec::new(),
        bias: cfg.bias,
    };
    let t = cfg.conv_type;
    let mut x = b.push(Node::Input);
    let mut c_prev = cfg.in_channels;
    let mut skips = Vec::new();
    for level in 0..=cfg.depth {
        if level > 0 {
            x = b.push(Node::MaxPool { input: x });
        }
        let (c, k) = (cfg.channels_at(level), cfg.k_list[level]);
        x = b.conv_relu(x, &format!("enc{level}.conv1"), t, c_prev, c, k)?;
        x = b.conv_relu(x, &format!("enc{level}.conv2"), t, c, c, k)?;
        skips.push(x);
        c_prev = c;
    }
    for level in (0..cfg.depth).rev() {
        let up = b.push(Node::Upsample { input: x });
        let cat = b.push(Node::Concat {
            a: up,
            b: skips[level],
        });
        let (c, k) = (cfg.channels_at(level), cfg.k_list[level]);
        x = b.conv_relu(cat, &format!("dec{level}.conv1"), t, c_prev + c, c, k)?;
        x = b.conv_relu(x, &format!("dec{level}.conv2"), t, c, c, k)?;
        c_prev = c;
    }
    b.conv(x, "head", t, c_prev, cfg.out_classes, cfg.final_k)?;
    Ok(Network {
        config: cfg.clone(),
        seed,
        nodes: b.nodes,
        convs: b.convs,
        params: b.params,
        cache: None,
    })
}

impl<T: Real> Network<T> {
    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn conv_layers(&self) -> &[ConvLayer] {
        &self.convs
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    /// Total number of trainable scalars.
    pub fn count_params(&self) -> usize {
        self.params.iter().map(Param::len).sum()
    }

    /// Parameters of one conv layer (weight plus bias).
    pub fn layer_params(&self, layer: &ConvLayer) -> usize {
        self.params[layer.weight].len() + layer.bias.map_or(0, |b| self.params[b].len())
    }

    /// Replace all parameter values, checking names and shapes.
    pub fn load_params(&mut self, params: Vec<Param<T>>) -> Result<()> {
        ensure!(
            params.len() == self.params.len(),
            Shape,
            "expected {} parameter tensors, got {}",
            self.params.len(),
            params.len()
        );
        for (have, new) in self.params.iter().zip(&params) {
            ensure!(
                have.name == new.name
                    && have.shape == new.shape
                    && new.data.len() == have.data.len(),
                Shape,
                "parameter {} {:?} does not match {} {:?}",
                new.name,
                new.shape,
                have.name,
                have.shape
            );
        }
        self.params = params;
        self.cache = None;
        Ok(())
    }

    /// Convert every parameter to another scalar type (same graph).
    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            seed: self.seed,
            nodes: self.nodes.clone(),
            convs: self.convs.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.data.iter().map(|v| U::of(v.as_f64())).collect(),
                })
                .collect(),
            cache: None,
        }
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        let m = self.config.size_multiple();
        ensure!(
            x.c() == self.config.in_channels,
            Shape,
            "network expects {} input channels, got {}",
            self.config.in_channels,
            x.c()
        );
        ensure!(
            x.h().is_multiple_of(m) && x.w().is_multiple_of(m),
            InvalidArgument,
            "input {}x{} is not divisible by {m}; pad it first",
            x.h(),
            x.w()
        );
        Ok(())
    }

    fn sre_params(&self, layer: &ConvLayer, bands: usize) -> Result<SreConvParams<T>> {
        let theta = BandTheta::new(
            layer.c_out,
            layer.c_in,
            bands,
            self.params[layer.weight].data.clone(),
        )?;
        let bias = layer.bias.map(|b| self.params[b].data.clone());
        SreConvParams::new(theta, bias)
    }

    fn dense_weight(&self, layer: &ConvLayer) -> Result<Tensor4<T>> {
        Tensor4::new(
            [layer.c_out, layer.c_in, layer.k, layer.k],
            self.params[layer.weight].data.clone(),
        )
    }

    fn eval_node(
        &self,
        node: Node,
        acts: &[Option<Tensor4<T>>],
        keep: bool,
    ) -> Result<(Tensor4<T>, Aux<T>)> {
        let get = |i: usize| {
            acts[i]
                .as_ref()
                .expect("activation dropped before last use")
        };
        let spec = ConvSpec::same();
        Ok(match node {
            Node::Input => unreachable!("input node is seeded by forward"),
            Node::Conv { input, layer } => {
                let l = &self.convs[layer];
                match &l.kind {
                    ConvKind::Sre(part) => {
                        let params = self.sre_params(l, part.bands())?;
                        let (y, pooled) =
                            sre_forward(get(input), &params, part, &spec, keep, None)?;
                        (y, pooled.map_or(Aux::None, Aux::Pooled))
                    }
                    ConvKind::Dense => {
                        let w = self.dense_weight(l)?;
                        let bias = l.bias.map(|b| self.params[b].data.as_slice());
                        (conv2d_fast(get(input), &w, bias, &spec)?, Aux::None)
                    }
                }
            }
            Node::Relu { input } => (relu(get(input)), Aux::None),
            Node::MaxPool { input } => {
                let (y, rec) = maxpool2(get(input))?;
                (y, if keep { Aux::Argmax(rec) } else { Aux::None })
            }
            Node::Upsample { input } => (upsample2_linear(get(input)), Aux::None),
            Node::Concat { a, b } => (Tensor4::concat_channels(get(a), get(b))?, Aux::None),
        })
    }

    /// Training forward pass; keeps every activation for [`Network::backward`].
    pub fn forward(&mut self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_input(x)?;
        let mut acts: Vec<Option<Tensor4<T>>> = vec![None; self.nodes.len()];
        let mut aux = Vec::with_capacity(self.nodes.len());
        acts[0] = Some(x.clone());
        aux.push(Aux::None);
        for i in 1..self.nodes.len() {
            let (y, a) = self.eval_node(self.nodes[i], &acts, true)?;
            acts[i] = Some(y);
            aux.push(a);
        }
        let acts: Vec<Tensor4<T>> = acts.into_iter().map(Option::unwrap).collect();
        let out = acts.last().cloned().expect("graph has an output");
        self.cache = Some(Cache { acts, aux });
        Ok(out)
    }

    /// Forward pass without caching; activations are freed after their last use.
    pub fn infer(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_input(x)?;
        let n = self.nodes.len();
        let mut last_use = vec![0usize; n];
        for (i, node) in self.nodes.iter().enumerate() {
            for j in node.inputs() {
                last_use[j] = i;
            }
        }
        let mut acts: Vec<Option<Tensor4<T>>> = vec![None; n];
        acts[0] = Some(x.clone());
        for i in 1..n {
            let (y, _) = self.eval_node(self.nodes[i], &acts, false)?;
            acts[i] = Some(y);
            for j in self.nodes[i].inputs() {
                if last_use[j] == i {
                    acts[j] = None;
                }
            }
        }
        Ok(acts.pop().flatten().expect("graph has an output"))
    }

    /// Backpropagate `grad_logits` through the cached forward pass.
    pub fn backward(&mut self, grad_logits: &Tensor4<T>) -> Result<Gradients<T>> {
        let cache = self.cache.take().ok_or_else(|| {
            Error::InvalidArgument("backward called without a cached forward pass".into())
        })?;
        let n = self.nodes.len();
        ensure!(
            cache.acts[n - 1].same_dims(grad_logits),
            Shape,
            "grad_logits dims {:?} != logits dims {:?}",
            grad_logits.dims(),
            cache.acts[n - 1].dims()
        );
        let mut grads: Vec<Vec<T>> = self
            .params
            .iter()
            .map(|p| vec![T::zero(); p.len()])
            .collect();
        let mut node_grads: Vec<Option<Tensor4<T>>> = vec![None; n];
        node_grads[n - 1] = Some(grad_logits.clone());

        let accumulate = |slot: &mut Option<Tensor4<T>>, g: Tensor4<T>| match slot {
            Some(existing) => existing
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(a, &b)| *a += b),
            None => *slot = Some(g),
        };

        for i in (1..n).rev() {
            let Some(gy) = node_grads[i].take() else {
                continue;
            };
            match self.nodes[i] {
                Node::Input => {}
                Node::Conv { input, layer } => {
                    let l = &self.convs[layer];
                    let x = &cache.acts[input];
                    let gx = match (&l.kind, &cache.aux[i]) {
                        (ConvKind::Sre(part), Aux::Pooled(pooled)) => {
                            let params = self.sre_params(l, part.bands())?;
                            let g = sre_backward_cached(x.dims(), &params, part, pooled, &gy)?;
                            grads[l.weight] = g.grad_theta.data;
                            if let Some(b) = l.bias {
                                grads[b] = g.grad_bias;
                            }
                            g.grad_x
                        }
                        (ConvKind::Dense, _) => {
                            let g =
                                conv2d_backward(x, &self.dense_weight(l)?, &ConvSpec::same(), &gy)?;
                            grads[l.weight] = g.grad_w.into_data();
                            if let Some(b) = l.bias {
                                grads[b] = g.grad_bias;
                            }
                            g.grad_x
                        }
                        _ => unreachable!("SRE layers always cache pooled planes in training mode"),
                    };
                    if input > 0 {
                        accumulate(&mut node_grads[input], gx);
                    }
                }
                Node::Relu { input } => {
                    accumulate(
                        &mut node_grads[input],
                        relu_backward(&cache.acts[input], &gy)?,
                    );
                }
                Node::MaxPool { input } => {
                    let Aux::Argmax(rec) = &cache.aux[i] else {
                        unreachable!("pool nodes record argmax in training mode")
                    };
                    accumulate(&mut node_grads[input], maxpool2_backward(rec, &gy)?);
                }
                Node::Upsample { input } => {
                    accumulate(&mut node_grads[input], upsample2_linear_backward(&gy)?);
                }
                Node::Concat { a, b } => {
                    let (ga, gb) = gy.split_channels(cache.acts[a].c())?;
                    accumulate(&mut node_grads[a], ga);
                    accumulate(&mut node_grads[b], gb);
                }
            }
        }
        Ok(Gradients {
            names: self.params.iter().map(|p| p.name.clone()).collect(),
            grads,
        })
    }
}
