//! Reverse-mode differentiation over a closed op set.
//!
//! A [`Graph`] is a tape: every forward call appends one node holding the
//! operation record and its output tensor. [`Graph::backward`] walks the
//! tape in reverse from a designated scalar loss node and fills gradient
//! buffers for every node, so both parameter and input gradients are
//! retrievable by node id.
//!
//! The op set is exactly what the detectors and attacks need: affine,
//! valid 2-D cross-correlation (stride 1), embedding lookup, leaky ReLU,
//! mean pooling over rows, concatenation, elementwise add/scale, a
//! constant mask multiply (dropout), a scalar gate multiply plus sigmoid
//! (attention fusion), gradient reversal, reshape, and softmax
//! cross-entropy.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Index of a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Affine { x: NodeId, w: NodeId, b: NodeId },
    Conv2d { x: NodeId, k: NodeId },
    Embedding { table: NodeId, ids: Vec<usize> },
    LeakyRelu { x: NodeId, slope: f32 },
    MeanPoolRows { x: NodeId },
    MeanPoolCols { x: NodeId },
    Concat { parts: Vec<NodeId> },
    Add { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: f32 },
    MulMask { x: NodeId, mask: Vec<f32> },
    GateMul { x: NodeId, gate: NodeId },
    Sigmoid { x: NodeId },
    GradReverse { x: NodeId, lambda: f32 },
    Reshape { x: NodeId },
    SoftmaxCrossEntropy { logits: NodeId, labels: Vec<usize> },
}

struct Node {
    op: Op,
    value: Tensor,
    grad: Option<Vec<f32>>,
}

/// Tape of operation records, topologically ordered by construction.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    ran_backward: bool,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            value,
            grad: None,
        });
        id
    }

    fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    /// Output tensor of a node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.node(id).value
    }

    /// Gradient of the loss with respect to a node's output.
    ///
    /// State error until [`Graph::backward`] has run.
    pub fn grad(&self, id: NodeId) -> Result<&[f32]> {
        self.node(id)
            .grad
            .as_deref()
            .ok_or_else(|| Error::state("gradient requested before backward pass"))
    }

    /// Adds a leaf node (input or parameter).
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// `out[i,j] = sum_m x[i,m] * w[m,j] + b[j]`
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xs, ws, bs) = (
            self.value(x).shape().to_vec(),
            self.value(w).shape().to_vec(),
            self.value(b).shape().to_vec(),
        );
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(Error::dim(format!("affine: x {xs:?} incompatible with w {ws:?}")));
        }
        if bs != [ws[1]] {
            return Err(Error::dim(format!("affine: bias {bs:?} vs w {ws:?}")));
        }
        let (n, d, k) = (xs[0], xs[1], ws[1]);
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0f32; n * k];
        for i in 0..n {
            let row = &mut out[i * k..(i + 1) * k];
            row.copy_from_slice(bv);
            for m in 0..d {
                let xim = xv[i * d + m];
                if xim != 0.0 {
                    let wrow = &wv[m * k..(m + 1) * k];
                    for (o, &wmk) in row.iter_mut().zip(wrow) {
                        *o += xim * wmk;
                    }
                }
            }
        }
        let value = Tensor::new(vec![n, k], out)?;
        Ok(self.push(Op::Affine { x, w, b }, value))
    }

    /// Valid (no padding) cross-correlation with stride 1.
    ///
    /// `x: [c, h, w]`, `k: [k_out, c, kh, kw]` -> `[k_out, h-kh+1, w-kw+1]`.
    pub fn conv2d(&mut self, x: NodeId, k: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        let ks = self.value(k).shape().to_vec();
        if xs.len() != 3 || ks.len() != 4 || xs[0] != ks[1] {
            return Err(Error::dim(format!("conv2d: x {xs:?} vs kernels {ks:?}")));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let (ko, kh, kw) = (ks[0], ks[2], ks[3]);
        if h < kh || w < kw {
            return Err(Error::dim(format!(
                "conv2d: image {h}x{w} smaller than kernel {kh}x{kw}"
            )));
        }
        let (oh, ow) = (h - kh + 1, w - kw + 1);
        let xv = self.value(x).data();
        let kv = self.value(k).data();
        let mut out = vec![0.0f32; ko * oh * ow];
        for o in 0..ko {
            let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
            for ci in 0..c {
                for a in 0..kh {
                    for b in 0..kw {
                        let kval = kv[((o * c + ci) * kh + a) * kw + b];
                        if kval == 0.0 {
                            continue;
                        }
                        for i in 0..oh {
                            let src = &xv[(ci * h + i + a) * w + b..(ci * h + i + a) * w + b + ow];
                            let dst = &mut plane[i * ow..(i + 1) * ow];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += kval * s;
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![ko, oh, ow], out)?;
        Ok(self.push(Op::Conv2d { x, k }, value))
    }

    /// Row lookup: `table: [v, d]`, `ids` of length `n` -> `[n, d]`.
    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let ts = self.value(table).shape().to_vec();
        if ts.len() != 2 {
            return Err(Error::dim(format!("embedding: table shape {ts:?}")));
        }
        let (v, d) = (ts[0], ts[1]);
        if ids.is_empty() {
            return Err(Error::validation("embedding: empty id list"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::validation(format!(
                "embedding: id {bad} out of table range {v}"
            )));
        }
        let tv = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let value = Tensor::new(vec![ids.len(), d], out)?;
        Ok(self.push(
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            value,
        ))
    }

    /// `out = x` where `x >= 0`, `slope * x` otherwise.
    pub fn leaky_relu(&mut self, x: NodeId, slope: f32) -> Result<NodeId> {
        if !(0.0..1.0).contains(&slope) || slope <= 0.0 {
            return Err(Error::validation(format!("leaky_relu slope {slope} not in (0,1)")));
        }
        let value = self.value(x).map(|v| if v >= 0.0 { v } else { slope * v });
        Ok(self.push(Op::LeakyRelu { x, slope }, value))
    }

    /// Mean over rows: `[n, d]` -> `[1, d]`.
    pub fn mean_pool_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 2 {
            return Err(Error::dim(format!("mean_pool_rows: shape {xs:?}")));
        }
        let (n, d) = (xs[0], xs[1]);
        let xv = self.value(x).data();
        let mut out = vec![0.0f32; d];
        for i in 0..n {
            for j in 0..d {
                out[j] += xv[i * d + j];
            }
        }
        let inv = 1.0 / n as f32;
        out.iter_mut().for_each(|v| *v *= inv);
        let value = Tensor::new(vec![1, d], out)?;
        Ok(self.push(Op::MeanPoolRows { x }, value))
    }

    /// Mean over columns: `[n, d]` -> `[n, 1]` (sequence pooling when the
    /// sequence runs along the second axis).
    pub fn mean_pool_cols(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 2 {
            return Err(Error::dim(format!("mean_pool_cols: shape {xs:?}")));
        }
        let (n, d) = (xs[0], xs[1]);
        let xv = self.value(x).data();
        let inv = 1.0 / d as f32;
        let out: Vec<f32> = (0..n)
            .map(|i| xv[i * d..(i + 1) * d].iter().sum::<f32>() * inv)
            .collect();
        let value = Tensor::new(vec![n, 1], out)?;
        Ok(self.push(Op::MeanPoolCols { x }, value))
    }

    /// Concatenates row vectors `[1, d_i]` into `[1, sum d_i]`.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::validation("concat: no inputs"));
        }
        let mut out = Vec::new();
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != 2 || s[0] != 1 {
                return Err(Error::dim(format!("concat: part shape {s:?} is not [1, d]")));
            }
            out.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::new(vec![1, out.len()], out)?;
        Ok(self.push(
            Op::Concat {
                parts: parts.to_vec(),
            },
            value,
        ))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::dim(format!(
                "add: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(Op::Add { a, b }, value))
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, x: NodeId, c: f32) -> NodeId {
        let value = self.value(x).map(|v| c * v);
        self.push(Op::Scale { x, c }, value)
    }

    /// Elementwise multiply by a fixed mask (used for inverted dropout).
    pub fn mul_mask(&mut self, x: NodeId, mask: Vec<f32>) -> Result<NodeId> {
        if mask.len() != self.value(x).len() {
            return Err(Error::dim(format!(
                "mul_mask: mask len {} vs tensor len {}",
                mask.len(),
                self.value(x).len()
            )));
        }
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data)?;
        Ok(self.push(Op::MulMask { x, mask }, value))
    }

    /// Multiplies a tensor by a scalar-valued node (gradient flows to both).
    pub fn gate_mul(&mut self, x: NodeId, gate: NodeId) -> Result<NodeId> {
        if self.value(gate).len() != 1 {
            return Err(Error::dim(format!(
                "gate_mul: gate shape {:?} is not scalar",
                self.value(gate).shape()
            )));
        }
        let g = self.value(gate).data()[0];
        let value = self.value(x).map(|v| g * v);
        Ok(self.push(Op::GateMul { x, gate }, value))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(Op::Sigmoid { x }, value)
    }

    /// Identity forward; backward multiplies the gradient by `-lambda`.
    pub fn grad_reverse(&mut self, x: NodeId, lambda: f32) -> NodeId {
        let value = self.value(x).clone();
        self.push(Op::GradReverse { x, lambda }, value)
    }

    /// Reshape without moving data.
    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let n: usize = shape.iter().product();
        if n != self.value(x).len() {
            return Err(Error::dim(format!(
                "reshape: {:?} -> {shape:?}",
                self.value(x).shape()
            )));
        }
        let value = Tensor::new(shape, self.value(x).data().to_vec())?;
        Ok(self.push(Op::Reshape { x }, value))
    }

    /// Mean cross-entropy of row-wise softmax against integer labels.
    ///
    /// Numerically stabilized by subtracting the row max before
    /// exponentiation; returns a scalar node.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let ls = self.value(logits).shape().to_vec();
        if ls.len() != 2 {
            return Err(Error::dim(format!("softmax_ce: logits shape {ls:?}")));
        }
        let (n, c) = (ls[0], ls[1]);
        if labels.len() != n {
            return Err(Error::dim(format!(
                "softmax_ce: {n} rows vs {} labels",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::validation(format!(
                "softmax_ce: label {bad} out of range 0..{c}"
            )));
        }
        let lv = self.value(logits).data();
        let mut total = 0.0f32;
        for (i, &y) in labels.iter().enumerate() {
            let row = &lv[i * c..(i + 1) * c];
            let m = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
            let lse: f32 = row.iter().map(|&v| (v - m).exp()).sum::<f32>().ln() + m;
            total += lse - row[y];
        }
        let value = Tensor::scalar(total / n as f32);
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            value,
        ))
    }

    /// Fills gradient buffers for every node reachable from `loss`.
    ///
    /// `loss` must hold exactly one value. Deterministic: same tape and
    /// same inputs give bitwise-identical gradients.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::state("backward: loss node not on tape"));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::dim(format!(
                "backward: loss shape {:?} is not scalar",
                self.nodes[loss.0].value.shape()
            )));
        }
        for node in &mut self.nodes {
            node.grad = Some(vec![0.0; node.value.len()]);
        }
        self.nodes[loss.0].grad.as_mut().unwrap()[0] = 1.0;

        for idx in (0..=loss.0).rev() {
            let gout = self.nodes[idx].grad.as_ref().unwrap().clone();
            if gout.iter().all(|&g| g == 0.0) {
                continue;
            }
            // Split borrows: clone op record, then scatter into inputs.
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Leaf => {}
                Op::Affine { x, w, b } => {
                    let (n, d) = {
                        let s = self.nodes[x.0].value.shape();
                        (s[0], s[1])
                    };
                    let k = self.nodes[w.0].value.shape()[1];
                    let xv = self.nodes[x.0].value.data().to_vec();
                    let wv = self.nodes[w.0].value.data().to_vec();
                    {
                        let gx = self.nodes[x.0].grad.as_mut().unwrap();
                        for i in 0..n {
                            for m in 0..d {
                                let mut acc = 0.0f32;
                                let wrow = &wv[m * k..(m + 1) * k];
                                let grow = &gout[i * k..(i + 1) * k];
                                for j in 0..k {
                                    acc += grow[j] * wrow[j];
                                }
                                gx[i * d + m] += acc;
                            }
                        }
                    }
                    {
                        let gw = self.nodes[w.0].grad.as_mut().unwrap();
                        for i in 0..n {
                            let grow = &gout[i * k..(i + 1) * k];
                            for m in 0..d {
                                let xim = xv[i * d + m];
                                if xim != 0.0 {
                                    let dst = &mut gw[m * k..(m + 1) * k];
                                    for (g, &go) in dst.iter_mut().zip(grow) {
                                        *g += xim * go;
                                    }
                                }
                            }
                        }
                    }
                    {
                        let gb = self.nodes[b.0].grad.as_mut().unwrap();
                        for i in 0..n {
                            for j in 0..k {
                                gb[j] += gout[i * k + j];
                            }
                        }
                    }
                }
                Op::Conv2d { x, k } => {
                    let (c, h, w) = {
                        let s = self.nodes[x.0].value.shape();
                        (s[0], s[1], s[2])
                    };
                    let (ko, kh, kw) = {
                        let s = self.nodes[k.0].value.shape();
                        (s[0], s[2], s[3])
                    };
                    let (oh, ow) = (h - kh + 1, w - kw + 1);
                    let xv = self.nodes[x.0].value.data().to_vec();
                    let kv = self.nodes[k.0].value.data().to_vec();
                    {
                        let gx = self.nodes[x.0].grad.as_mut().unwrap();
                        for o in 0..ko {
                            let gplane = &gout[o * oh * ow..(o + 1) * oh * ow];
                            for ci in 0..c {
                                for a in 0..kh {
                                    for b in 0..kw {
                                        let kval = kv[((o * c + ci) * kh + a) * kw + b];
                                        if kval == 0.0 {
                                            continue;
                                        }
                                        for i in 0..oh {
                                            let grow = &gplane[i * ow..(i + 1) * ow];
                                            let base = (ci * h + i + a) * w + b;
                                            let dst = &mut gx[base..base + ow];
                                            for (g, &go) in dst.iter_mut().zip(grow) {
                                                *g += kval * go;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    {
                        let gk = self.nodes[k.0].grad.as_mut().unwrap();
                        for o in 0..ko {
                            let gplane = &gout[o * oh * ow..(o + 1) * oh * ow];
                            for ci in 0..c {
                                for a in 0..kh {
                                    for b in 0..kw {
                                        let mut acc = 0.0f32;
                                        for i in 0..oh {
                                            let grow = &gplane[i * ow..(i + 1) * ow];
                                            let base = (ci * h + i + a) * w + b;
                                            let src = &xv[base..base + ow];
                                            for (s, &go) in src.iter().zip(grow) {
                                                acc += s * go;
                                            }
                                        }
                                        gk[((o * c + ci) * kh + a) * kw + b] += acc;
                                    }
                                }
                            }
                        }
                    }
                }
                Op::Embedding { table, ids } => {
                    let d = self.nodes[table.0].value.shape()[1];
                    let gt = self.nodes[table.0].grad.as_mut().unwrap();
                    for (row, &id) in ids.iter().enumerate() {
                        let src = &gout[row * d..(row + 1) * d];
                        let dst = &mut gt[id * d..(id + 1) * d];
                        for (g, &go) in dst.iter_mut().zip(src) {
                            *g += go;
                        }
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    let xv = self.nodes[x.0].value.data().to_vec();
                    let gx = self.nodes[x.0].grad.as_mut().unwrap();
                    for (i, (&v, &go)) in xv.iter().zip(&gout).enumerate() {
                        gx[i] += if v >= 0.0 { go } else { slope * go };
                    }
                }
                Op::MeanPoolRows { x } => {
                    let (n, d) = {
                        let s = self.nodes[x.0].value.shape();
                        (s[0], s[1])
                    };
                    let inv = 1.0 / n as f32;
                    let gx = self.nodes[x.0].grad.as_mut().unwrap();
                    for i in 0..n {
                        for j in 0..d {
                            gx[i * d + j] += gout[j] * inv;
                        }
                    }
                }
                Op::MeanPoolCols { x } => {
                    let (n, d) = {
                        let s = self.nodes[x.0].value.shape();
                        (s[0], s[1])
                    };
                    let inv = 1.0 / d as f32;
                    let gx = self.nodes[x.0].grad.as_mut().unwrap();
                    for i in 0..n {
                        for j in 0..d {
                            gx[i * d + j] += gout[i] * inv;
                        }
                    }
                }
                Op::Concat { parts } => {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.nodes[p.0].value.len();
                        let gp = self.nodes[p.0].grad.as_mut().unwrap();
                        for (g, &go) in gp.iter_mut().zip(&gout[offset..offset + len]) {
                            *g += go;
                        }
                        offset += len;
                    }
                }
                Op::Add { a, b } => {
                    for id in [a, b] {
                        let g = self.nodes[id.0].grad.as_mut().unwrap();
                        for (gi, &go) in g.iter_mut().zip(&gout) {
                            *gi += go;
                        }
                    }
                }
                Op::Scale { x, c } => {
                    let gx = self.nodes[x.0].grad.as_mut().unwrap();
                    for (g, &go) in gx.iter_mut().zip(&gout) {
                        *g += c * go;
                    }
                }
                Op::MulMask { x, mask } => {
                    let gx = self.nodes[x.0].grad.as_mut().unwrap();
                    for (i, (&go, &m)) in gout.iter().zip(&mask).enumerate() {
                        gx[i] += go * m;
                    }
                }
                Op::GateMul { x, gate } => {
                    let g = self.nodes[gate.0].value.data()[0];
                    let xv = self.nodes[x.0].value.data().to_vec();
                    {
                        let gx = self.nodes[x.0].grad.as_mut().unwrap();
                        for (gi, &go) in gx.iter_mut().zip(&gout) {
                            *gi += g * go;
                        }
                    }
                    {
                        let gg = self.nodes[gate.0].grad.as_mut().unwrap();
                        let mut acc = 0.0f32;
                        for (&go, &xvi) in gout.iter().zip(&xv) {
                            acc += go * xvi;
                        }
                        gg[0] += acc;
                    }
                }
                Op::Sigmoid { x } => {
                    let yv = self.nodes[idx].value.data().to_vec();
                    let gx = self.nodes[x.0].grad.as_mut().unwrap();
                    for (i, (&go, &y)) in gout.iter().zip(&yv).enumerate() {
                        gx[i] += go * y * (1.0 - y);
                    }
                }
                Op::GradReverse { x, lambda } => {
                    let gx = self.nodes[x.0].grad.as_mut().unwrap();
                    for (g, &go) in gx.iter_mut().zip(&gout) {
                        *g -= lambda * go;
                    }
                }
                Op::Reshape { x } => {
                    let gx = self.nodes[x.0].grad.as_mut().unwrap();
                    for (g, &go) in gx.iter_mut().zip(&gout) {
                        *g += go;
                    }
                }
                Op::SoftmaxCrossEntropy { logits, labels } => {
                    let (n, c) = {
                        let s = self.nodes[logits.0].value.shape();
                        (s[0], s[1])
                    };
                    let lv = self.nodes[logits.0].value.data().to_vec();
                    let gl = self.nodes[logits.0].grad.as_mut().unwrap();
                    let go = gout[0] / n as f32;
                    for (i, &y) in labels.iter().enumerate() {
                        let row = &lv[i * c..(i + 1) * c];
                        let m = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
                        let denom: f32 = row.iter().map(|&v| (v - m).exp()).sum();
                        for j in 0..c {
                            let p = (row[j] - m).exp() / denom;
                            let delta = if j == y { 1.0 } else { 0.0 };
                            gl[i * c + j] += go * (p - delta);
                        }
                    }
                }
            }
        }
        self.ran_backward = true;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_identity_weights() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let w = g.leaf(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = g.leaf(Tensor::new(vec![2], vec![0.0, 0.0]).unwrap());
        let y = g.affine(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn affine_zero_input_passes_bias() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        let w = g.leaf(Tensor::matrix(2, 2, vec![0.5, -0.25, 2.0, 1.0]).unwrap());
        let b = g.leaf(Tensor::new(vec![2], vec![3.0, 4.0]).unwrap());
        let y = g.affine(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 4.0]);
    }

    #[test]
    fn affine_shape_mismatch_names_both_shapes() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::matrix(1, 3, vec![0.0; 3]).unwrap());
        let w = g.leaf(Tensor::matrix(2, 2, vec![0.0; 4]).unwrap());
        let b = g.leaf(Tensor::new(vec![2], vec![0.0; 2]).unwrap());
        let err = g.affine(x, w, b).unwrap_err().to_string();
        assert!(err.contains("[1, 3]") && err.contains("[2, 2]"), "{err}");
    }

    #[test]
    fn conv_zero_image_gives_zero_output() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![1, 4, 4], vec![0.0; 16]).unwrap());
        let k = g.leaf(Tensor::new(vec![2, 1, 3, 3], vec![0.3; 18]).unwrap());
        let y = g.conv2d(x, k).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 2, 2]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_delta_kernel_crops_input() {
        let mut g = Graph::new();
        let data: Vec<f32> = (0..25).map(|v| v as f32).collect();
        let x = g.leaf(Tensor::new(vec![1, 5, 5], data.clone()).unwrap());
        let mut kern = vec![0.0f32; 9];
        kern[4] = 1.0; // center tap
        let k = g.leaf(Tensor::new(vec![1, 1, 3, 3], kern).unwrap());
        let y = g.conv2d(x, k).unwrap();
        let mut expect = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                expect.push(data[(i + 1) * 5 + (j + 1)]);
            }
        }
        assert_eq!(g.value(y).data(), &expect[..]);
    }

    #[test]
    fn conv_rejects_small_image() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![1, 2, 2], vec![0.0; 4]).unwrap());
        let k = g.leaf(Tensor::new(vec![1, 1, 3, 3], vec![0.0; 9]).unwrap());
        assert!(matches!(g.conv2d(x, k), Err(Error::Dimension(_))));
    }

    #[test]
    fn leaky_relu_definition() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![3], vec![0.0, -1.0, 2.0]).unwrap());
        let y = g.leaky_relu(x, 0.01).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, -0.01, 2.0]);
    }

    #[test]
    fn softmax_ce_uniform_logits_is_ln2() {
        let mut g = Graph::new();
        let l = g.leaf(Tensor::matrix(1, 2, vec![0.7, 0.7]).unwrap());
        let loss = g.softmax_cross_entropy(l, &[1]).unwrap();
        let v = g.value(loss).item().unwrap();
        assert!((v - std::f32::consts::LN_2).abs() < 1e-6, "{v}");
    }

    #[test]
    fn softmax_ce_large_margin_is_small() {
        let mut g = Graph::new();
        let l = g.leaf(Tensor::matrix(1, 2, vec![0.0, 20.0]).unwrap());
        let loss = g.softmax_cross_entropy(l, &[1]).unwrap();
        assert!(g.value(loss).item().unwrap() < 1e-3);
    }

    #[test]
    fn softmax_ce_rejects_out_of_range_label() {
        let mut g = Graph::new();
        let l = g.leaf(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        assert!(matches!(
            g.softmax_cross_entropy(l, &[2]),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn backward_of_sum_is_ones() {
        // loss = mean_pool of a column vector times n == sum/n; use scale to
        // recover plain sum semantics: grad(x) should be all ones.
        let mut g = Graph::new();
        let x = g.leaf(Tensor::matrix(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let m = g.mean_pool_rows(x).unwrap();
        let s = g.scale(m, 4.0);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_zero_scale_is_zero() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::matrix(1, 3, vec![5.0, -2.0, 7.0]).unwrap());
        let z = g.scale(x, 0.0);
        let m = g.mean_pool_rows(z).unwrap();
        let l = g.reshape(m, vec![3]).unwrap();
        // reduce to scalar via mean over a [3,1] view
        let col = g.reshape(l, vec![3, 1]).unwrap();
        let s = g.mean_pool_rows(col).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn grad_before_backward_is_state_error() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(1.0));
        assert!(matches!(g.grad(x), Err(Error::State(_))));
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        assert!(matches!(g.backward(x), Err(Error::Dimension(_))));
    }

    #[test]
    fn grad_reverse_negates() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::matrix(1, 1, vec![2.0]).unwrap());
        let r = g.grad_reverse(x, 1.0);
        let s = g.reshape(r, vec![1]).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[-1.0]);
    }

    #[test]
    fn gate_mul_routes_gradient_to_gate() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::matrix(1, 2, vec![3.0, 4.0]).unwrap());
        let gate = g.leaf(Tensor::scalar(0.5));
        let y = g.gate_mul(x, gate).unwrap();
        assert_eq!(g.value(y).data(), &[1.5, 2.0]);
        let col = g.reshape(y, vec![2, 1]).unwrap();
        let m = g.mean_pool_rows(col).unwrap();
        let s = g.scale(m, 2.0); // sum of the two entries
        g.backward(s).unwrap();
        // loss == 3*gate + 4*gate, so dloss/dgate == 7
        assert_eq!(g.grad(gate).unwrap(), &[7.0]);
    }
}
