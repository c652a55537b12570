//! Trainable multi-modal fake-news detectors.
//!
//! Architecture (desk-scale stand-in for the BERT/VGG19-based originals):
//! a character CNN text extractor (embedding, width-3 convolution, mean
//! pooling over positions, projection to `p` dims), a two-layer 3x3
//! conv image extractor projected to `p` dims, concat or attention-gated
//! fusion, and a two-layer classifier head. An optional event head is
//! trained through a gradient-reversal connection so the extractors
//! unlearn event-specific features.

use crate::alphabet::SymbolId;
use crate::corpus::{Dataset, NewsSample};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::rng::{self, streams};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Fusion strategy for the two modal feature vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// `R = [R_T, R_I]`
    Concat,
    /// A scalar gate in (0,1) computed from `R_T` scales `R_I` before
    /// concatenation.
    Attention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub fusion: Fusion,
    pub event_head: bool,
    /// Hidden size `p` of the fully connected layers.
    pub hidden: usize,
    pub dropout: f32,
    pub lr: f32,
    pub batch: usize,
    pub epochs: usize,
    pub leaky_slope: f32,
    /// Gradient-reversal strength for the event head.
    pub grl_lambda: f32,
    pub embed_dim: usize,
    pub text_channels: usize,
    pub image_channels: (usize, usize),
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            fusion: Fusion::Concat,
            event_head: false,
            hidden: 32,
            dropout: 0.5,
            lr: 1e-3,
            batch: 128,
            epochs: 30,
            leaky_slope: 0.01,
            grl_lambda: 1.0,
            embed_dim: 12,
            text_channels: 16,
            image_channels: (6, 6),
            seed: 0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::validation("dropout must lie in [0,1)"));
        }
        if self.hidden == 0 || self.batch == 0 || self.embed_dim == 0 || self.text_channels == 0 {
            return Err(Error::validation("layer sizes must be >= 1"));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::validation("leaky slope must lie in (0,1)"));
        }
        Ok(())
    }
}

/// Per-modality features and the fused vector for one sample.
#[derive(Debug, Clone)]
pub struct FeatureBundle {
    pub text: Vec<f32>,
    pub image: Vec<f32>,
    pub fused: Vec<f32>,
    /// Attention gate value; 1.0 under concat fusion.
    pub gate: f32,
}

/// All trainable weights plus the shape context they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorParams {
    pub config: DetectorConfig,
    pub alphabet_len: usize,
    pub image_h: usize,
    pub image_w: usize,
    /// Event ids the event head was trained over (empty if disabled).
    pub event_ids: Vec<u32>,
    pub embed: Tensor,
    pub text_conv: Tensor,
    pub text_proj_w: Tensor,
    pub text_proj_b: Tensor,
    pub img_conv1: Tensor,
    pub img_conv2: Tensor,
    pub img_proj_w: Tensor,
    pub img_proj_b: Tensor,
    pub attn_w: Tensor,
    pub attn_b: Tensor,
    pub head1_w: Tensor,
    pub head1_b: Tensor,
    pub head2_w: Tensor,
    pub head2_b: Tensor,
    pub event_w: Option<Tensor>,
    pub event_b: Option<Tensor>,
}

/// Text input to a forward pass: token ids, or a pre-embedded matrix
/// (used by embedding-space attacks).
pub enum TextInput<'a> {
    Tokens(&'a [SymbolId]),
    Embedded(&'a Tensor),
}

fn uniform_tensor<R: Rng>(rng: &mut R, shape: Vec<usize>, bound: f32) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("shape/data consistent")
}

impl DetectorParams {
    /// Fresh parameters with seeded uniform init (bound `sqrt(6/fan_in)`),
    /// zero biases, zero PAD embedding row.
    pub fn init(
        config: &DetectorConfig,
        alphabet_len: usize,
        image_h: usize,
        image_w: usize,
        event_ids: Vec<u32>,
    ) -> Result<Self> {
        config.validate()?;
        if image_h < 5 || image_w < 5 {
            return Err(Error::validation("images must be at least 5x5 for two 3x3 convs"));
        }
        let p = config.hidden;
        let d = config.embed_dim;
        let tc = config.text_channels;
        let (c1, c2) = config.image_channels;
        let flat = c2 * (image_h - 4) * (image_w - 4);
        let mut rng = rng::stream(config.seed, streams::INIT);
        let bound = |fan_in: usize| (6.0 / fan_in as f32).sqrt();

        let mut embed = uniform_tensor(&mut rng, vec![alphabet_len + 1, d], 0.5);
        // PAD row starts at zero
        let start = alphabet_len * d;
        embed.data_mut()[start..start + d].fill(0.0);

        let event_head = config.event_head && !event_ids.is_empty();
        let event_count = event_ids.len();
        Ok(DetectorParams {
            config: config.clone(),
            alphabet_len,
            image_h,
            image_w,
            event_ids: if event_head { event_ids } else { Vec::new() },
            embed,
            text_conv: uniform_tensor(&mut rng, vec![tc, 1, 3, d], bound(3 * d)),
            text_proj_w: uniform_tensor(&mut rng, vec![tc, p], bound(tc)),
            text_proj_b: Tensor::zeros(vec![p]),
            img_conv1: uniform_tensor(&mut rng, vec![c1, 3, 3, 3], bound(27)),
            img_conv2: uniform_tensor(&mut rng, vec![c2, c1, 3, 3], bound(9 * c1)),
            img_proj_w: uniform_tensor(&mut rng, vec![flat, p], bound(flat)),
            img_proj_b: Tensor::zeros(vec![p]),
            attn_w: uniform_tensor(&mut rng, vec![p, 1], bound(p)),
            attn_b: Tensor::zeros(vec![1]),
            head1_w: uniform_tensor(&mut rng, vec![2 * p, p], bound(2 * p)),
            head1_b: Tensor::zeros(vec![p]),
            head2_w: uniform_tensor(&mut rng, vec![p, 2], bound(p)),
            head2_b: Tensor::zeros(vec![2]),
            event_w: event_head
                .then(|| uniform_tensor(&mut rng, vec![2 * p, event_count], bound(2 * p))),
            event_b: event_head.then(|| Tensor::zeros(vec![event_count])),
        })
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }

    /// Named tensors in checkpoint order.
    pub fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        let mut v = vec![
            ("embed", &self.embed),
            ("text_conv", &self.text_conv),
            ("text_proj_w", &self.text_proj_w),
            ("text_proj_b", &self.text_proj_b),
            ("img_conv1", &self.img_conv1),
            ("img_conv2", &self.img_conv2),
            ("img_proj_w", &self.img_proj_w),
            ("img_proj_b", &self.img_proj_b),
            ("attn_w", &self.attn_w),
            ("attn_b", &self.attn_b),
            ("head1_w", &self.head1_w),
            ("head1_b", &self.head1_b),
            ("head2_w", &self.head2_w),
            ("head2_b", &self.head2_b),
        ];
        if let (Some(w), Some(b)) = (&self.event_w, &self.event_b) {
            v.push(("event_w", w));
            v.push(("event_b", b));
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![
            &mut self.embed,
            &mut self.text_conv,
            &mut self.text_proj_w,
            &mut self.text_proj_b,
            &mut self.img_conv1,
            &mut self.img_conv2,
            &mut self.img_proj_w,
            &mut self.img_proj_b,
            &mut self.attn_w,
            &mut self.attn_b,
            &mut self.head1_w,
            &mut self.head1_b,
            &mut self.head2_w,
            &mut self.head2_b,
        ];
        if let Some(w) = &mut self.event_w {
            v.push(w);
        }
        if let Some(b) = &mut self.event_b {
            v.push(b);
        }
        v
    }
}

/// Graph leaves holding the parameters for one forward/backward pass.
struct ParamNodes {
    ids: Vec<NodeId>,
    embed: NodeId,
    text_conv: NodeId,
    text_proj_w: NodeId,
    text_proj_b: NodeId,
    img_conv1: NodeId,
    img_conv2: NodeId,
    img_proj_w: NodeId,
    img_proj_b: NodeId,
    attn_w: NodeId,
    attn_b: NodeId,
    head1_w: NodeId,
    head1_b: NodeId,
    head2_w: NodeId,
    head2_b: NodeId,
    event_w: Option<NodeId>,
    event_b: Option<NodeId>,
}

/// Node handles for one sample's subgraph.
struct SampleNodes {
    image: NodeId,
    /// Embedding output (rows = padded token positions); None when the
    /// text came in pre-embedded.
    emb_out: NodeId,
    r_t: NodeId,
    r_i: NodeId,
    gate: Option<NodeId>,
    fused: NodeId,
    logits: NodeId,
}

fn add_param_nodes(g: &mut Graph, p: &DetectorParams) -> ParamNodes {
    let mut ids = Vec::new();
    let mut add = |g: &mut Graph, t: &Tensor| {
        let id = g.leaf(t.clone());
        ids.push(id);
        id
    };
    let embed = add(g, &p.embed);
    let text_conv = add(g, &p.text_conv);
    let text_proj_w = add(g, &p.text_proj_w);
    let text_proj_b = add(g, &p.text_proj_b);
    let img_conv1 = add(g, &p.img_conv1);
    let img_conv2 = add(g, &p.img_conv2);
    let img_proj_w = add(g, &p.img_proj_w);
    let img_proj_b = add(g, &p.img_proj_b);
    let attn_w = add(g, &p.attn_w);
    let attn_b = add(g, &p.attn_b);
    let head1_w = add(g, &p.head1_w);
    let head1_b = add(g, &p.head1_b);
    let head2_w = add(g, &p.head2_w);
    let head2_b = add(g, &p.head2_b);
    let event_w = p.event_w.as_ref().map(|t| add(g, t));
    let event_b = p.event_b.as_ref().map(|t| add(g, t));
    ParamNodes {
        ids,
        embed,
        text_conv,
        text_proj_w,
        text_proj_b,
        img_conv1,
        img_conv2,
        img_proj_w,
        img_proj_b,
        attn_w,
        attn_b,
        head1_w,
        head1_b,
        head2_w,
        head2_b,
        event_w,
        event_b,
    }
}

impl DetectorParams {
    fn check_tokens(&self, tokens: &[SymbolId]) -> Result<()> {
        for &t in tokens {
            if t as usize >= self.alphabet_len {
                return Err(Error::UnknownSymbol(format!(
                    "token id {t} outside embedding table of {} symbols",
                    self.alphabet_len
                )));
            }
        }
        Ok(())
    }

    fn check_image(&self, image: &Tensor) -> Result<()> {
        let s = image.shape();
        if s != [3, self.image_h, self.image_w] {
            return Err(Error::dim(format!(
                "image shape {s:?}, detector expects [3, {}, {}]",
                self.image_h, self.image_w
            )));
        }
        Ok(())
    }

    /// Builds one sample's forward subgraph. `dropout_mask`, when given,
    /// multiplies the fused vector (training mode).
    fn forward_sample(
        &self,
        g: &mut Graph,
        pn: &ParamNodes,
        text: TextInput<'_>,
        image: &Tensor,
        dropout_mask: Option<&[f32]>,
    ) -> Result<SampleNodes> {
        let slope = self.config.leaky_slope;
        let d = self.config.embed_dim;
        let tc = self.config.text_channels;

        // text path
        let emb_out = match text {
            TextInput::Tokens(tokens) => {
                self.check_tokens(tokens)?;
                if tokens.is_empty() {
                    return Err(Error::validation("empty token sequence"));
                }
                let mut ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
                while ids.len() < 3 {
                    ids.push(self.alphabet_len); // PAD row
                }
                g.embedding(pn.embed, &ids)?
            }
            TextInput::Embedded(m) => {
                let s = m.shape();
                if s.len() != 2 || s[1] != d || s[0] < 3 {
                    return Err(Error::dim(format!(
                        "embedded text shape {s:?}, expected [len>=3, {d}]"
                    )));
                }
                g.leaf(m.clone())
            }
        };
        let len = g.value(emb_out).shape()[0];
        let as_img = g.reshape(emb_out, vec![1, len, d])?;
        let conv = g.conv2d(as_img, pn.text_conv)?; // [tc, len-2, 1]
        let act = g.leaky_relu(conv, slope)?;
        let mat = g.reshape(act, vec![tc, len - 2])?;
        let pooled = g.mean_pool_cols(mat)?; // [tc, 1]
        let row = g.reshape(pooled, vec![1, tc])?;
        let proj = g.affine(row, pn.text_proj_w, pn.text_proj_b)?;
        let r_t = g.leaky_relu(proj, slope)?;

        // image path
        self.check_image(image)?;
        let img = g.leaf(image.clone());
        let c1 = g.conv2d(img, pn.img_conv1)?;
        let a1 = g.leaky_relu(c1, slope)?;
        let c2 = g.conv2d(a1, pn.img_conv2)?;
        let a2 = g.leaky_relu(c2, slope)?;
        let flat_len = g.value(a2).len();
        let flat = g.reshape(a2, vec![1, flat_len])?;
        let proj_i = g.affine(flat, pn.img_proj_w, pn.img_proj_b)?;
        let r_i = g.leaky_relu(proj_i, slope)?;

        // fusion
        let (fused_pre, gate) = match self.config.fusion {
            Fusion::Concat => (g.concat(&[r_t, r_i])?, None),
            Fusion::Attention => {
                let pre = g.affine(r_t, pn.attn_w, pn.attn_b)?;
                let alpha = g.sigmoid(pre);
                let gated = g.gate_mul(r_i, alpha)?;
                (g.concat(&[r_t, gated])?, Some(alpha))
            }
        };
        let fused = match dropout_mask {
            Some(mask) => g.mul_mask(fused_pre, mask.to_vec())?,
            None => fused_pre,
        };

        // classifier head
        let h1 = g.affine(fused, pn.head1_w, pn.head1_b)?;
        let h1a = g.leaky_relu(h1, slope)?;
        let logits = g.affine(h1a, pn.head2_w, pn.head2_b)?;

        Ok(SampleNodes {
            image: img,
            emb_out,
            r_t,
            r_i,
            gate,
            fused,
            logits,
        })
    }

    /// Inference-mode logits `[real, fake]` for arbitrary (tokens, image).
    pub fn logits_for(&self, tokens: &[SymbolId], image: &Tensor) -> Result<[f32; 2]> {
        let mut g = Graph::new();
        let pn = add_param_nodes(&mut g, self);
        let sn = self.forward_sample(&mut g, &pn, TextInput::Tokens(tokens), image, None)?;
        let v = g.value(sn.logits).data();
        Ok([v[0], v[1]])
    }

    pub fn logits_sample(&self, sample: &NewsSample) -> Result<[f32; 2]> {
        self.logits_for(&sample.tokens, &sample.image)
    }

    /// Probability that the sample is fake; classify fake iff >= 0.5.
    pub fn predict_proba(&self, sample: &NewsSample) -> Result<f32> {
        let l = self.logits_sample(sample)?;
        Ok(softmax2(l)[1])
    }

    pub fn predict(&self, sample: &NewsSample) -> Result<u8> {
        Ok(u8::from(self.predict_proba(sample)? >= 0.5))
    }

    pub fn predict_for(&self, tokens: &[SymbolId], image: &Tensor) -> Result<u8> {
        let l = self.logits_for(tokens, image)?;
        Ok(u8::from(softmax2(l)[1] >= 0.5))
    }

    /// Per-modality features at inference (dropout disabled).
    pub fn extract_features(&self, sample: &NewsSample) -> Result<FeatureBundle> {
        let mut g = Graph::new();
        let pn = add_param_nodes(&mut g, self);
        let sn =
            self.forward_sample(&mut g, &pn, TextInput::Tokens(&sample.tokens), &sample.image, None)?;
        Ok(FeatureBundle {
            text: g.value(sn.r_t).data().to_vec(),
            image: g.value(sn.r_i).data().to_vec(),
            fused: g.value(sn.fused).data().to_vec(),
            gate: sn
                .gate
                .map(|n| g.value(n).data()[0])
                .unwrap_or(1.0),
        })
    }

    /// Cross-entropy loss of one (tokens, image) pair against `label`,
    /// plus gradients with respect to the raw image and the one-hot text
    /// encoding (`[len, alphabet_len]`, PAD positions excluded).
    pub fn input_gradients_for(
        &self,
        tokens: &[SymbolId],
        image: &Tensor,
        label: u8,
    ) -> Result<(f32, Tensor, Tensor)> {
        let mut g = Graph::new();
        let pn = add_param_nodes(&mut g, self);
        let sn = self.forward_sample(&mut g, &pn, TextInput::Tokens(tokens), image, None)?;
        let loss = g.softmax_cross_entropy(sn.logits, &[label as usize])?;
        g.backward(loss)?;
        let img_grad = Tensor::new(
            vec![3, self.image_h, self.image_w],
            g.grad(sn.image)?.to_vec(),
        )?;
        // d loss / d one-hot(i, a) = <d loss / d emb_i, embed_row_a>
        let d = self.config.embed_dim;
        let demb = g.grad(sn.emb_out)?;
        let table = self.embed.data();
        let len = tokens.len();
        let mut tg = vec![0.0f32; len * self.alphabet_len];
        for i in 0..len {
            let gi = &demb[i * d..(i + 1) * d];
            for a in 0..self.alphabet_len {
                let row = &table[a * d..(a + 1) * d];
                let mut acc = 0.0f32;
                for (x, y) in gi.iter().zip(row) {
                    acc += x * y;
                }
                tg[i * self.alphabet_len + a] = acc;
            }
        }
        let text_grad = Tensor::new(vec![len, self.alphabet_len], tg)?;
        Ok((g.value(loss).item()?, img_grad, text_grad))
    }

    /// Convenience wrapper over [`Self::input_gradients_for`].
    pub fn gradient_wrt_inputs(&self, sample: &NewsSample, label: u8) -> Result<(Tensor, Tensor)> {
        let (_, ig, tg) = self.input_gradients_for(&sample.tokens, &sample.image, label)?;
        Ok((ig, tg))
    }

    /// Margin `logit(fake) - logit(real)` and its image gradient; the
    /// decision boundary is margin == 0.
    pub fn margin_grad_image(&self, tokens: &[SymbolId], image: &Tensor) -> Result<(f32, Tensor)> {
        let mut g = Graph::new();
        let pn = add_param_nodes(&mut g, self);
        let sn = self.forward_sample(&mut g, &pn, TextInput::Tokens(tokens), image, None)?;
        let w = g.leaf(Tensor::matrix(2, 1, vec![-1.0, 1.0])?);
        let b = g.leaf(Tensor::new(vec![1], vec![0.0])?);
        let margin = g.affine(sn.logits, w, b)?;
        let m = g.reshape(margin, vec![1])?;
        g.backward(m)?;
        let grad = Tensor::new(
            vec![3, self.image_h, self.image_w],
            g.grad(sn.image)?.to_vec(),
        )?;
        Ok((g.value(m).item()?, grad))
    }

    /// Embedding matrix for a token sequence (padded to length >= 3).
    pub fn embed_tokens(&self, tokens: &[SymbolId]) -> Result<Tensor> {
        self.check_tokens(tokens)?;
        let d = self.config.embed_dim;
        let mut ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        while ids.len() < 3 {
            ids.push(self.alphabet_len);
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for id in ids {
            data.extend_from_slice(&self.embed.data()[id * d..(id + 1) * d]);
        }
        Tensor::new(vec![data.len() / d, d], data)
    }

    /// Loss and gradient with respect to a pre-embedded text matrix
    /// (embedding-space adversarial training).
    pub fn loss_grad_text_embedding(
        &self,
        embedded: &Tensor,
        image: &Tensor,
        label: u8,
    ) -> Result<(f32, Tensor)> {
        let mut g = Graph::new();
        let pn = add_param_nodes(&mut g, self);
        let sn = self.forward_sample(&mut g, &pn, TextInput::Embedded(embedded), image, None)?;
        let loss = g.softmax_cross_entropy(sn.logits, &[label as usize])?;
        g.backward(loss)?;
        let grad = Tensor::new(embedded.shape().to_vec(), g.grad(sn.emb_out)?.to_vec())?;
        Ok((g.value(loss).item()?, grad))
    }

    /// Inference logits for an embedded text matrix.
    pub fn logits_for_embedded(&self, embedded: &Tensor, image: &Tensor) -> Result<[f32; 2]> {
        let mut g = Graph::new();
        let pn = add_param_nodes(&mut g, self);
        let sn = self.forward_sample(&mut g, &pn, TextInput::Embedded(embedded), image, None)?;
        let v = g.value(sn.logits).data();
        Ok([v[0], v[1]])
    }
}

pub fn softmax2(l: [f32; 2]) -> [f32; 2] {
    let m = l[0].max(l[1]);
    let e0 = (l[0] - m).exp();
    let e1 = (l[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// Per-epoch training statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f32,
    pub train_acc: f64,
    pub val_loss: f32,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

/// Mean loss and accuracy of a model over a dataset (inference mode).
pub fn evaluate(params: &DetectorParams, data: &[NewsSample]) -> Result<(f32, f64)> {
    if data.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut loss_sum = 0.0f64;
    let mut correct = 0usize;
    for s in data {
        let l = params.logits_sample(s)?;
        let p = softmax2(l);
        let y = s.label as usize;
        loss_sum += -(p[y].max(1e-12) as f64).ln();
        let pred = u8::from(p[1] >= 0.5);
        if pred == s.label {
            correct += 1;
        }
    }
    Ok((
        (loss_sum / data.len() as f64) as f32,
        correct as f64 / data.len() as f64,
    ))
}

/// Minibatch SGD training. Deterministic given `cfg.seed`; dropout masks
/// come from the seeded dropout stream; the event head (when enabled)
/// contributes its loss through gradient reversal scaled by
/// `cfg.grl_lambda`.
pub fn train(
    cfg: &DetectorConfig,
    train_set: &Dataset,
    val_set: &Dataset,
) -> Result<(DetectorParams, TrainReport)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::validation("empty training set"));
    }
    let first = &train_set.samples[0];
    let (h, w) = (first.image.shape()[1], first.image.shape()[2]);
    let event_ids: Vec<u32> = if cfg.event_head {
        train_set.event_ids().into_iter().collect()
    } else {
        Vec::new()
    };
    let event_index: BTreeMap<u32, usize> = event_ids
        .iter()
        .enumerate()
        .map(|(i, &e)| (e, i))
        .collect();
    let mut params = DetectorParams::init(cfg, train_set.alphabet.len(), h, w, event_ids)?;
    let mut report = TrainReport::default();
    if cfg.epochs == 0 {
        return Ok((params, report));
    }

    let mut shuffle_rng = rng::stream(cfg.seed, streams::TRAIN_SHUFFLE);
    let mut dropout_rng = rng::stream(cfg.seed, streams::DROPOUT);
    let keep = 1.0 - cfg.dropout;
    let fused_len = 2 * cfg.hidden;

    let n = train_set.len();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0f64;
        let mut epoch_correct = 0usize;
        for chunk in order.chunks(cfg.batch) {
            let mut g = Graph::new();
            let pn = add_param_nodes(&mut g, &params);
            let inv = 1.0 / chunk.len() as f32;
            let mut total: Option<NodeId> = None;
            for &idx in chunk {
                let s = &train_set.samples[idx];
                let mask: Option<Vec<f32>> = if cfg.dropout > 0.0 {
                    Some(
                        (0..fused_len)
                            .map(|_| {
                                if dropout_rng.gen::<f32>() < keep {
                                    1.0 / keep
                                } else {
                                    0.0
                                }
                            })
                            .collect(),
                    )
                } else {
                    None
                };
                let sn = params.forward_sample(
                    &mut g,
                    &pn,
                    TextInput::Tokens(&s.tokens),
                    &s.image,
                    mask.as_deref(),
                )?;
                let label_loss = g.softmax_cross_entropy(sn.logits, &[s.label as usize])?;
                let sample_loss = match (&pn.event_w, &pn.event_b) {
                    (Some(ew), Some(eb)) => {
                        let ev = *event_index
                            .get(&s.event_id)
                            .expect("train event indexed");
                        let rev = g.grad_reverse(sn.fused, cfg.grl_lambda);
                        let ev_logits = g.affine(rev, *ew, *eb)?;
                        let ev_loss = g.softmax_cross_entropy(ev_logits, &[ev])?;
                        g.add(label_loss, ev_loss)?
                    }
                    _ => label_loss,
                };
                // statistics on the label loss only
                epoch_loss += g.value(label_loss).item()? as f64;
                let lv = g.value(sn.logits).data();
                let p = softmax2([lv[0], lv[1]]);
                if u8::from(p[1] >= 0.5) == s.label {
                    epoch_correct += 1;
                }
                let scaled = g.scale(sample_loss, inv);
                total = Some(match total {
                    None => scaled,
                    Some(t) => g.add(t, scaled)?,
                });
            }
            let loss_node = total.expect("nonempty batch");
            g.backward(loss_node)?;
            let grads: Vec<Vec<f32>> = pn
                .ids
                .iter()
                .map(|&id| g.grad(id).map(|s| s.to_vec()))
                .collect::<Result<_>>()?;
            drop(g);
            for (t, grad) in params.tensors_mut().into_iter().zip(&grads) {
                for (w, &dg) in t.data_mut().iter_mut().zip(grad) {
                    *w -= cfg.lr * dg;
                }
            }
        }
        let (val_loss, val_acc) = evaluate(&params, &val_set.samples)?;
        report.epochs.push(EpochStats {
            epoch,
            train_loss: (epoch_loss / n as f64) as f32,
            train_acc: epoch_correct as f64 / n as f64,
            val_loss,
            val_acc,
        });
    }
    if !params.all_finite() {
        return Err(Error::validation(
            "training diverged: non-finite parameters",
        ));
    }
    Ok((params, report))
}
