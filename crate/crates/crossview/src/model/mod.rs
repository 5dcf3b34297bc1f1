//! The two-pathway siamese encoder.
//!
//! Each view (ground, aerial) owns a small strided CNN backbone producing a
//! raw feature grid, and a transformer-based layout extractor predicting K
//! mask-like descriptors from the patchified feature. The retrieval
//! embedding is the Frobenius inner product of every descriptor with every
//! feature channel, optionally L2-normalized.


use crate::error::{Error, Result};

/// Positional-encoding init scale. Desk-scale budgets need the position
/// channel visible from step one or the descriptors converge
/// translation-blind.
const POS_INIT_STD: f32 = 0.02;
use crate::graph::{Graph, Init, NodeId, PadMode, ParamId, ParamStore};
use crate::imaging::{ImageBuf, View};
use ndarray::{Array1, ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Output-activation mode of the layout extractor. `Sigmoid` is the normal
/// mode; the other two are ablation switches reachable from config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DescriptorActivation {
    #[default]
    Sigmoid,
    /// Remove the sigmoid: descriptors live in (-inf, inf).
    Identity,
    /// Replace descriptors with constant ones, muting the layout pathway.
    AllOnes,
}

/// Backbone contract for one view: declared channel count, total spatial
/// stride and padding behavior must match the produced feature shape.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BackboneConfig {
    pub channels: usize,
    pub stride: usize,
    pub pad: PadMode,
}

/// Full model configuration. `aerial_size` is the effective input size of
/// the aerial branch (i.e. the polar-transform output size when the polar
/// preprocessing is enabled upstream).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub channels: usize,
    pub descriptors: usize,
    pub gle_layers: usize,
    pub gle_heads: usize,
    pub stride: usize,
    pub ground_size: (usize, usize),
    pub aerial_size: (usize, usize),
    pub activation: DescriptorActivation,
    pub normalize: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            descriptors: 8,
            gle_layers: 2,
            gle_heads: 4,
            stride: 16,
            ground_size: (128, 672),
            aerial_size: (256, 256),
            activation: DescriptorActivation::Sigmoid,
            normalize: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.descriptors < 1 {
            return Err(Error::InvalidParam("descriptor count must be >= 1".into()));
        }
        if self.gle_heads == 0 || !self.channels.is_multiple_of(self.gle_heads) {
            return Err(Error::InvalidParam(format!(
                "heads ({}) must divide the channel count ({})",
                self.gle_heads, self.channels
            )));
        }
        if !self.stride.is_power_of_two() || self.stride < 2 {
            return Err(Error::InvalidParam(format!(
                "stride must be a power of two >= 2, got {}",
                self.stride
            )));
        }
        for (name, (h, w)) in [("ground", self.ground_size), ("aerial", self.aerial_size)] {
            if h % self.stride != 0 || w % self.stride != 0 {
                return Err(Error::InvalidParam(format!(
                    "{name} input {h}x{w} not divisible by stride {}",
                    self.stride
                )));
            }
            if h == 0 || w == 0 {
                return Err(Error::InvalidParam(format!("{name} input size is zero")));
            }
        }
        Ok(())
    }

    pub fn input_size(&self, view: View) -> (usize, usize) {
        match view {
            View::Ground => self.ground_size,
            View::Aerial => self.aerial_size,
        }
    }

    /// Feature-grid size produced by the backbone for a view.
    pub fn feature_size(&self, view: View) -> (usize, usize) {
        let (h, w) = self.input_size(view);
        (h / self.stride, w / self.stride)
    }

    pub fn backbone(&self, view: View) -> BackboneConfig {
        BackboneConfig {
            channels: self.channels,
            stride: self.stride,
            pad: match view {
                View::Ground => PadMode::CircularWidth,
                View::Aerial => PadMode::Zeros,
            },
        }
    }

    /// Length of the retrieval embedding: one Frobenius product per
    /// (descriptor, channel) pair.
    pub fn embedding_dim(&self) -> usize {
        self.channels * self.descriptors
    }

    fn num_blocks(&self) -> usize {
        self.stride.trailing_zeros() as usize
    }
}

struct ConvParams {
    weight: ParamId,
    bias: ParamId,
}

struct AttentionParams {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
}

struct EncoderLayerParams {
    ln1_gamma: ParamId,
    ln1_beta: ParamId,
    attn: AttentionParams,
    ln2_gamma: ParamId,
    ln2_beta: ParamId,
    ffn_w1: ParamId,
    ffn_b1: ParamId,
    ffn_w2: ParamId,
    ffn_b2: ParamId,
}

struct ExtractorParams {
    pos: ParamId,
    layers: Vec<EncoderLayerParams>,
    proj_w: ParamId,
    proj_b: ParamId,
    bottleneck_w1: ParamId,
    bottleneck_b1: ParamId,
    bottleneck_w2: ParamId,
    bottleneck_b2: ParamId,
}

struct BranchParams {
    blocks: Vec<ConvParams>,
    extractor: ExtractorParams,
}

/// Everything a forward pass returns: the retrieval embedding, the
/// descriptor set [K, h, w] and the raw backbone feature [C, h, w].
pub struct ForwardOut {
    pub embedding: NodeId,
    pub descriptors: NodeId,
    pub raw: NodeId,
}

/// Siamese two-branch model; the branches share architecture but not
/// weights.
pub struct Model {
    config: ModelConfig,
    pub store: ParamStore,
    ground: BranchParams,
    aerial: BranchParams,
}

impl Model {
    pub fn new(config: ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let ground = Self::init_branch(&config, View::Ground, &mut store, rng);
        let aerial = Self::init_branch(&config, View::Aerial, &mut store, rng);
        Ok(Self {
            config,
            store,
            ground,
            aerial,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn init_branch(
        cfg: &ModelConfig,
        view: View,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> BranchParams {
        let c = cfg.channels;
        let prefix = view.to_string();
        let mut blocks = Vec::new();
        let mut in_ch = 3;
        for b in 0..cfg.num_blocks() {
            let fan_in = in_ch * 9;
            let weight = store.add(
                format!("{prefix}.backbone.block{b}.weight"),
                &[c, in_ch, 3, 3],
                Init::ReluFanInUniform { fan_in },
                rng,
            );
            let bias = store.add(
                format!("{prefix}.backbone.block{b}.bias"),
                &[c],
                Init::FanInUniform { fan_in },
                rng,
            );
            blocks.push(ConvParams { weight, bias });
            in_ch = c;
        }

        let (fh, fw) = cfg.feature_size(view);
        let tokens = fh * fw;
        let hidden = (tokens / 2).max(1);
        let k = cfg.descriptors;

        let pos = store.add(
            format!("{prefix}.gle.pos"),
            &[tokens, c],
            Init::Normal { std: POS_INIT_STD },
            rng,
        );
        let mut layers = Vec::new();
        for l in 0..cfg.gle_layers {
            let p = format!("{prefix}.gle.layer{l}");
            let lin = |store: &mut ParamStore,
                       rng: &mut ChaCha8Rng,
                       name: &str,
                       din: usize,
                       dout: usize| {
                (
                    store.add(
                        format!("{p}.{name}.weight"),
                        &[din, dout],
                        Init::FanInUniform { fan_in: din },
                        rng,
                    ),
                    store.add(
                        format!("{p}.{name}.bias"),
                        &[dout],
                        Init::FanInUniform { fan_in: din },
                        rng,
                    ),
                )
            };
            let (wq, bq) = lin(store, rng, "attn.q", c, c);
            let (wk, bk) = lin(store, rng, "attn.k", c, c);
            let (wv, bv) = lin(store, rng, "attn.v", c, c);
            let (wo, bo) = lin(store, rng, "attn.out", c, c);
            let ln1_gamma = store.add(format!("{p}.ln1.gamma"), &[c], Init::Ones, rng);
            let ln1_beta = store.add(format!("{p}.ln1.beta"), &[c], Init::Zeros, rng);
            let ln2_gamma = store.add(format!("{p}.ln2.gamma"), &[c], Init::Ones, rng);
            let ln2_beta = store.add(format!("{p}.ln2.beta"), &[c], Init::Zeros, rng);
            let (ffn_w1, ffn_b1) = lin(store, rng, "ffn.lin1", c, 4 * c);
            let (ffn_w2, ffn_b2) = lin(store, rng, "ffn.lin2", 4 * c, c);
            layers.push(EncoderLayerParams {
                ln1_gamma,
                ln1_beta,
                attn: AttentionParams {
                    wq,
                    bq,
                    wk,
                    bk,
                    wv,
                    bv,
                    wo,
                    bo,
                },
                ln2_gamma,
                ln2_beta,
                ffn_w1,
                ffn_b1,
                ffn_w2,
                ffn_b2,
            });
        }

        let proj_w = store.add(
            format!("{prefix}.gle.proj.weight"),
            &[c, k],
            Init::FanInUniform { fan_in: c },
            rng,
        );
        let proj_b = store.add(
            format!("{prefix}.gle.proj.bias"),
            &[k],
            Init::FanInUniform { fan_in: c },
            rng,
        );
        let bottleneck_w1 = store.add(
            format!("{prefix}.gle.bottleneck.lin1.weight"),
            &[tokens, hidden],
            Init::FanInUniform { fan_in: tokens },
            rng,
        );
        let bottleneck_b1 = store.add(
            format!("{prefix}.gle.bottleneck.lin1.bias"),
            &[hidden],
            Init::FanInUniform { fan_in: tokens },
            rng,
        );
        let bottleneck_w2 = store.add(
            format!("{prefix}.gle.bottleneck.lin2.weight"),
            &[hidden, tokens],
            Init::FanInUniform { fan_in: hidden },
            rng,
        );
        let bottleneck_b2 = store.add(
            format!("{prefix}.gle.bottleneck.lin2.bias"),
            &[tokens],
            Init::FanInUniform { fan_in: hidden },
            rng,
        );

        BranchParams {
            blocks,
            extractor: ExtractorParams {
                pos,
                layers,
                proj_w,
                proj_b,
                bottleneck_w1,
                bottleneck_b1,
                bottleneck_w2,
                bottleneck_b2,
            },
        }
    }

    fn branch(&self, view: View) -> &BranchParams {
        match view {
            View::Ground => &self.ground,
            View::Aerial => &self.aerial,
        }
    }

    /// Image (h, w, 3) in [0,1] to a [3, h, w] constant node.
    pub fn image_node(&self, g: &mut Graph, image: &ImageBuf) -> NodeId {
        let (h, w) = (image.height(), image.width());
        let mut chw = ArrayD::<f32>::zeros(IxDyn(&[3, h, w]));
        for i in 0..h {
            for j in 0..w {
                for c in 0..3 {
                    chw[[c, i, j]] = image.data()[[i, j, c]];
                }
            }
        }
        g.constant(chw)
    }

    /// Backbone only: image node [3, h, w] to raw feature [C, h/s, w/s].
    pub fn backbone_forward(&self, g: &mut Graph, image: NodeId, view: View) -> Result<NodeId> {
        let (h, w) = self.config.input_size(view);
        let shape = g.shape(image).to_vec();
        if shape != [3, h, w] {
            return Err(Error::Shape(format!(
                "{view} input must be [3, {h}, {w}], got {shape:?}"
            )));
        }
        let pad = self.config.backbone(view).pad;
        let mut x = image;
        for conv in &self.branch(view).blocks {
            let wt = g.param(&self.store, conv.weight);
            let bs = g.param(&self.store, conv.bias);
            let y = g.conv2d(x, wt, bs, 2, pad);
            x = g.relu(y);
        }
        Ok(x)
    }

    /// Row-major patchification: [C, h, w] feature to [h*w, C] tokens.
    pub fn patchify(&self, g: &mut Graph, raw: NodeId) -> NodeId {
        let shape = g.shape(raw).to_vec();
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let flat = g.reshape(raw, &[c, h * w]);
        g.transpose2(flat)
    }

    /// Layout extractor: raw feature [C, h, w] to descriptors [K, h, w].
    pub fn extract_descriptors(&self, g: &mut Graph, raw: NodeId, view: View) -> Result<NodeId> {
        let (fh, fw) = self.config.feature_size(view);
        let c = self.config.channels;
        let shape = g.shape(raw).to_vec();
        if shape != [c, fh, fw] {
            return Err(Error::Shape(format!(
                "{view} raw feature must be [{c}, {fh}, {fw}], got {shape:?}"
            )));
        }
        let k = self.config.descriptors;
        let tokens = fh * fw;
        let ex = &self.branch(view).extractor;

        let mut x = self.patchify(g, raw);
        let pos = g.param(&self.store, ex.pos);
        x = g.add(x, pos);

        for layer in &ex.layers {
            x = self.encoder_layer(g, x, layer);
        }

        // Point-wise projection C -> K, then per-descriptor bottleneck over
        // the flattened spatial axis.
        let pw = g.param(&self.store, ex.proj_w);
        let pb = g.param(&self.store, ex.proj_b);
        let projected = g.linear(x, pw, pb); // [tokens, K]
        let q0 = g.transpose2(projected); // [K, tokens]

        let w1 = g.param(&self.store, ex.bottleneck_w1);
        let b1 = g.param(&self.store, ex.bottleneck_b1);
        let w2 = g.param(&self.store, ex.bottleneck_w2);
        let b2 = g.param(&self.store, ex.bottleneck_b2);
        let h1 = g.linear(q0, w1, b1);
        let q1 = g.linear(h1, w2, b2); // [K, tokens]

        let q = match self.config.activation {
            DescriptorActivation::Sigmoid => g.sigmoid(q1),
            DescriptorActivation::Identity => q1,
            DescriptorActivation::AllOnes => {
                g.constant(ArrayD::from_elem(IxDyn(&[k, tokens]), 1.0))
            }
        };
        Ok(g.reshape(q, &[k, fh, fw]))
    }

    fn encoder_layer(&self, g: &mut Graph, x: NodeId, p: &EncoderLayerParams) -> NodeId {
        let c = self.config.channels;
        let heads = self.config.gle_heads;
        let hd = c / heads;

        // Pre-norm attention with residual.
        let g1 = g.param(&self.store, p.ln1_gamma);
        let b1 = g.param(&self.store, p.ln1_beta);
        let normed = g.layer_norm_rows(x, g1, b1, 1e-5);
        let wq = g.param(&self.store, p.attn.wq);
        let bq = g.param(&self.store, p.attn.bq);
        let wk = g.param(&self.store, p.attn.wk);
        let bk = g.param(&self.store, p.attn.bk);
        let wv = g.param(&self.store, p.attn.wv);
        let bv = g.param(&self.store, p.attn.bv);
        let q = g.linear(normed, wq, bq);
        let k = g.linear(normed, wk, bk);
        let v = g.linear(normed, wv, bv);
        let scale = 1.0 / (hd as f32).sqrt();
        let mut ctx = Vec::with_capacity(heads);
        for hidx in 0..heads {
            let qh = g.narrow_cols(q, hidx * hd, hd);
            let kh = g.narrow_cols(k, hidx * hd, hd);
            let vh = g.narrow_cols(v, hidx * hd, hd);
            let kt = g.transpose2(kh);
            let scores = g.matmul(qh, kt);
            let scaled = g.scale(scores, scale);
            let attn = g.softmax_rows(scaled);
            ctx.push(g.matmul(attn, vh));
        }
        let merged = g.concat_cols(ctx);
        let wo = g.param(&self.store, p.attn.wo);
        let bo = g.param(&self.store, p.attn.bo);
        let attn_out = g.linear(merged, wo, bo);
        let x = g.add(x, attn_out);

        // Pre-norm feed-forward with residual.
        let g2 = g.param(&self.store, p.ln2_gamma);
        let b2 = g.param(&self.store, p.ln2_beta);
        let normed = g.layer_norm_rows(x, g2, b2, 1e-5);
        let w1 = g.param(&self.store, p.ffn_w1);
        let fb1 = g.param(&self.store, p.ffn_b1);
        let w2 = g.param(&self.store, p.ffn_w2);
        let fb2 = g.param(&self.store, p.ffn_b2);
        let h1 = g.linear(normed, w1, fb1);
        let h1 = g.relu(h1);
        let ffn_out = g.linear(h1, w2, fb2);
        g.add(x, ffn_out)
    }

    /// Frobenius modulation: descriptors [K, h, w] x raw [C, h, w] to a
    /// length C*K embedding ordered descriptor-major (all channels of
    /// descriptor 1 first).
    pub fn modulate(&self, g: &mut Graph, descriptors: NodeId, raw: NodeId) -> Result<NodeId> {
        let qs = g.shape(descriptors).to_vec();
        let rs = g.shape(raw).to_vec();
        if qs.len() != 3 || rs.len() != 3 || qs[1..] != rs[1..] {
            return Err(Error::Shape(format!(
                "modulate spatial mismatch: descriptors {qs:?} vs raw {rs:?}"
            )));
        }
        let (k, c) = (qs[0], rs[0]);
        let hw = qs[1] * qs[2];
        let qf = g.reshape(descriptors, &[k, hw]);
        let rf = g.reshape(raw, &[c, hw]);
        let rt = g.transpose2(rf);
        let f = g.matmul(qf, rt); // [K, C], row-major flatten is descriptor-major
        let flat = g.reshape(f, &[k * c]);
        Ok(if self.config.normalize {
            g.l2_normalize(flat)
        } else {
            flat
        })
    }

    /// Full forward for one image.
    pub fn forward(&self, g: &mut Graph, image: &ImageBuf, view: View) -> Result<ForwardOut> {
        let node = self.image_node(g, image);
        let raw = self.backbone_forward(g, node, view)?;
        let descriptors = self.extract_descriptors(g, raw, view)?;
        let embedding = self.modulate(g, descriptors, raw)?;
        Ok(ForwardOut {
            embedding,
            descriptors,
            raw,
        })
    }

    /// Counterfactual embedding: replace the descriptors with fresh
    /// U[0,1] draws (a constant, so gradient flows only through `raw`).
    pub fn counterfactual_forward(
        &self,
        g: &mut Graph,
        raw: NodeId,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId> {
        let rs = g.shape(raw).to_vec();
        if rs.len() != 3 {
            return Err(Error::Shape(format!("raw feature must be 3-d, got {rs:?}")));
        }
        let k = self.config.descriptors;
        let qhat = ArrayD::from_shape_fn(IxDyn(&[k, rs[1], rs[2]]), |_| rng.random::<f32>());
        let qnode = g.constant(qhat);
        self.modulate(g, qnode, raw)
    }

    /// Eval-path embedding as a plain vector.
    pub fn embed(&self, image: &ImageBuf, view: View) -> Result<Array1<f32>> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, image, view)?;
        let v = g.value(out.embedding);
        Ok(Array1::from_iter(v.iter().copied()))
    }
}
