//! Analytic parameter and arithmetic counts for dense and band-pooled
//! execution plans.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::net::graph::{ConvKind, Network, Node};
use crate::real::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCount {
    pub mults: u64,
    pub adds: u64,
}

impl std::ops::AddAssign for OpCount {
    fn add_assign(&mut self, o: Self) {
        self.mults += o.mults;
        self.adds += o.adds;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCount {
    pub name: String,
    pub kind: String,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub bands: Option<usize>,
    pub height: usize,
    pub width: usize,
    pub params: usize,
    pub dense: OpCount,
    pub band_pooled: OpCount,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopReport {
    pub layers: Vec<LayerCount>,
    pub total_params: usize,
    pub total_dense: OpCount,
    pub total_band_pooled: OpCount,
}

/// Per-layer counts for one `height × width` input.
///
/// Dense plan: `c_out·c_in·k²·H·W` multiplies (and as many adds). Band-pooled
/// plan for SRE layers: `c_out·c_in·b·H·W` multiplies plus `c_in·k²·H·W`
/// pooling additions. Upsampling costs 2 multiplies and 6 adds per output in
/// both plans; pooling and ReLU are counted as free.
pub fn count_flops<T: Real>(net: &Network<T>, height: usize, width: usize) -> Result<FlopReport> {
    let m = net.config().size_multiple();
    ensure!(
        height.is_multiple_of(m) && width.is_multiple_of(m),
        InvalidArgument,
        "input {height}x{width} is not divisible by {m}"
    );
    let nodes = net.nodes();
    let mut dims = vec![(0usize, 0usize); nodes.len()];
    let mut layers = Vec::new();
    let mut total_dense = OpCount::default();
    let mut total_band = OpCount::default();
    for (i, node) in nodes.iter().enumerate() {
        dims[i] = match *node {
            Node::Input => (height, width),
            Node::Conv { input, layer } => {
                let (h, w) = dims[input];
                let l = &net.conv_layers()[layer];
                let px = (h * w) as u64;
                let (co, ci, k) = (l.c_out as u64, l.c_in as u64, l.k as u64);
                let bias_adds = if l.bias.is_some() { co * px } else { 0 };
                let dense = OpCount {
                    mults: co * ci * k * k * px,
                    adds: co * ci * k * k * px + bias_adds,
                };
                let (bands, band_pooled) = match &l.kind {
                    ConvKind::Sre(part) => {
                        let b = part.bands() as u64;
                        (
                            Some(part.bands()),
                            OpCount {
                                mults: co * ci * b * px,
                                adds: ci * k * k * px + co * ci * b * px + bias_adds,
                            },
                        )
                    }
                    ConvKind::Dense => (None, dense),
                };
                total_dense += dense;
                total_band += band_pooled;
                layers.push(LayerCount {
                    name: l.name.clone(),
                    kind: if bands.is_some() { "sre" } else { "dense" }.into(),
                    c_in: l.c_in,
                    c_out: l.c_out,
                    k: l.k,
                    bands,
                    height: h,
                    width: w,
                    params: net.layer_params(l),
                    dense,
                    band_pooled,
                });
                (h, w)
            }
            Node::Relu { input } | Node::Concat { a: input, .. } => dims[input],
            Node::MaxPool { input } => (dims[input].0 / 2, dims[input].1 / 2),
            Node::Upsample { input } => {
                let (h, w) = (dims[input].0 * 2, dims[input].1 * 2);
                let c = channels_of(net, input) as u64;
                let px = c * (h * w) as u64;
                let cost = OpCount {
                    mults: 2 * px,
                    adds: 6 * px,
                };
                total_dense += cost;
                total_band += cost;
                layers.push(LayerCount {
                    name: format!("upsample@{h}x{w}"),
                    kind: "upsample".into(),
                    c_in: c as usize,
                    c_out: c as usize,
                    k: 0,
                    bands: None,
                    height: h,
                    width: w,
                    params: 0,
                    dense: cost,
                    band_pooled: cost,
                });
                (h, w)
            }
        };
    }
    Ok(FlopReport {
        layers,
        total_params: net.count_params(),
        total_dense,
        total_band_pooled: total_band,
    })
}

fn channels_of<T: Real>(net: &Network<T>, node: usize) -> usize {
    match net.nodes()[node] {
        Node::Input => net.config().in_channels,
        Node::Conv { layer, .. } => net.conv_layers()[layer].c_out,
        Node::Relu { input } | Node::MaxPool { input } | Node::Upsample { input } => {
            channels_of(net, input)
        }
        Node::Concat { a, b } => channels_of(net, a) + channels_of(net, b),
    }
}
