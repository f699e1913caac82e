//! Graph-domain layers over fixed-size connectomes.
//!
//! Four parametric families, each with a hand-derived backward pass:
//!
//! * edge-to-edge (E2E), used both as encoder convolution and decoder
//!   deconvolution: `Y(i,j,o) = b(o) + Σ_c Σ_k row(o,c,k)·X(i,k,c) + col(o,c,k)·X(k,j,c)`
//! * edge-to-node (E2N): `H(i,o) = b(o) + Σ_c Σ_k w(o,c,k)·X(i,k,c)`
//! * node-to-edge (N2E): `Y(i,j,o) = b(o) + Σ_c P(o,c)·H(i,c) + Q(o,c)·H(j,c)`
//!
//! The E2E row term only depends on `i` and the column term only on `j`, so
//! a layer costs `O(n²·C_in·C_out)` rather than the naive `O(n³·…)`.
//!
//! All outputs are pre-activation; [`Activation`] is applied separately.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, DenseTensor, Prng};

/// `n × n × C` edge features, stored channel-major (`[c][i][j]`).
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeFeatureMap {
    n: usize,
    channels: usize,
    values: Vec<f64>,
}

impl EdgeFeatureMap {
    pub fn zeros(n: usize, channels: usize) -> Self {
        Self {
            n,
            channels,
            values: vec![0.0; n * n * channels],
        }
    }

    pub fn from_values(n: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n * channels {
            return Err(Error::shape(format!(
                "edge map {n}x{n}x{channels} needs {} values, got {}",
                n * n * channels,
                values.len()
            )));
        }
        Ok(Self { n, channels, values })
    }

    /// Stacks square matrices as channels, in order.
    pub fn from_matrices(mats: &[&DenseTensor]) -> Result<Self> {
        let first = mats.first().ok_or_else(|| Error::shape("no channels"))?;
        if !first.is_square() {
            return Err(Error::shape(format!("channel is not square: {:?}", first.shape())));
        }
        let n = first.rows();
        let mut values = Vec::with_capacity(n * n * mats.len());
        for m in mats {
            if m.shape() != first.shape() {
                return Err(Error::shape(format!("{:?} vs {:?}", m.shape(), first.shape())));
            }
            values.extend_from_slice(m.data());
        }
        Ok(Self {
            n,
            channels: mats.len(),
            values,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize, c: usize) -> f64 {
        self.values[(c * self.n + i) * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, c: usize, v: f64) {
        self.values[(c * self.n + i) * self.n + j] = v;
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let nn = self.n * self.n;
        &self.values[c * nn..(c + 1) * nn]
    }

    /// Row `i` of channel `c`.
    fn row(&self, c: usize, i: usize) -> &[f64] {
        let start = (c * self.n + i) * self.n;
        &self.values[start..start + self.n]
    }

    fn row_mut(&mut self, c: usize, i: usize) -> &mut [f64] {
        let start = (c * self.n + i) * self.n;
        &mut self.values[start..start + self.n]
    }

    pub fn channel_matrix(&self, c: usize) -> DenseTensor {
        DenseTensor::from_vec(&[self.n, self.n], self.channel(c).to_vec()).expect("valid channel")
    }

    /// Per-position mean over channels.
    pub fn channel_mean(&self) -> DenseTensor {
        let nn = self.n * self.n;
        let mut out = vec![0.0; nn];
        for c in 0..self.channels {
            for (o, v) in out.iter_mut().zip(self.channel(c)) {
                *o += v;
            }
        }
        let scale = 1.0 / self.channels as f64;
        out.iter_mut().for_each(|v| *v *= scale);
        DenseTensor::from_vec(&[self.n, self.n], out).expect("valid mean")
    }

    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::shape(format!("concat of n={} and n={}", self.n, other.n)));
        }
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        Ok(Self {
            n: self.n,
            channels: self.channels + other.channels,
            values,
        })
    }

    /// Inverse of [`EdgeFeatureMap::concat`]: first `head` channels, then the rest.
    pub fn split(&self, head: usize) -> (Self, Self) {
        assert!(head <= self.channels);
        let cut = head * self.n * self.n;
        (
            Self {
                n: self.n,
                channels: head,
                values: self.values[..cut].to_vec(),
            },
            Self {
                n: self.n,
                channels: self.channels - head,
                values: self.values[cut..].to_vec(),
            },
        )
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.channels).all(|c| {
            (0..self.n).all(|i| (0..i).all(|j| (self.get(i, j, c) - self.get(j, i, c)).abs() <= tol))
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            n: self.n,
            channels: self.channels,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// `n × C` node features, stored node-major (`[i][c]`).
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatureMap {
    n: usize,
    channels: usize,
    values: Vec<f64>,
}

impl NodeFeatureMap {
    pub fn zeros(n: usize, channels: usize) -> Self {
        Self {
            n,
            channels,
            values: vec![0.0; n * channels],
        }
    }

    pub fn from_values(n: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * channels {
            return Err(Error::shape(format!(
                "node map {n}x{channels} needs {} values, got {}",
                n * channels,
                values.len()
            )));
        }
        Ok(Self { n, channels, values })
    }

    /// Standard-normal features drawn row by row.
    pub fn gaussian(n: usize, channels: usize, rng: &mut Prng) -> Self {
        Self {
            n,
            channels,
            values: (0..n * channels).map(|_| rng.normal()).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, i: usize, c: usize) -> f64 {
        self.values[i * self.channels + c]
    }

    fn node(&self, i: usize) -> &[f64] {
        &self.values[i * self.channels..(i + 1) * self.channels]
    }

    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::shape(format!("concat of n={} and n={}", self.n, other.n)));
        }
        let channels = self.channels + other.channels;
        let mut values = Vec::with_capacity(self.n * channels);
        for i in 0..self.n {
            values.extend_from_slice(self.node(i));
            values.extend_from_slice(other.node(i));
        }
        Ok(Self {
            n: self.n,
            channels,
            values,
        })
    }

    pub fn split(&self, head: usize) -> (Self, Self) {
        assert!(head <= self.channels);
        let tail = self.channels - head;
        let mut a = Vec::with_capacity(self.n * head);
        let mut b = Vec::with_capacity(self.n * tail);
        for i in 0..self.n {
            let node = self.node(i);
            a.extend_from_slice(&node[..head]);
            b.extend_from_slice(&node[head..]);
        }
        (
            Self {
                n: self.n,
                channels: head,
                values: a,
            },
            Self {
                n: self.n,
                channels: tail,
                values: b,
            },
        )
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            n: self.n,
            channels: self.channels,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    E2eConv,
    E2nConv,
    N2eDeconv,
    E2eDeconv,
}

impl LayerKind {
    pub const ALL: [LayerKind; 4] = [
        LayerKind::E2eConv,
        LayerKind::E2nConv,
        LayerKind::N2eDeconv,
        LayerKind::E2eDeconv,
    ];

    /// Names of the tensors in [`LayerParams::tensors`], bias last.
    pub fn tensor_names(self) -> &'static [&'static str] {
        match self {
            LayerKind::E2eConv | LayerKind::E2eDeconv => &["row_weights", "col_weights", "bias"],
            LayerKind::E2nConv => &["node_weights", "bias"],
            LayerKind::N2eDeconv => &["p", "q", "bias"],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::E2eConv => "e2e_conv",
            LayerKind::E2nConv => "e2n_conv",
            LayerKind::N2eDeconv => "n2e_deconv",
            LayerKind::E2eDeconv => "e2e_deconv",
        }
    }

    fn weight_shape(self, n: usize, c_in: usize, c_out: usize) -> Vec<usize> {
        match self {
            LayerKind::N2eDeconv => vec![c_out, c_in],
            _ => vec![c_out, c_in, n],
        }
    }

    /// `(fan_in, fan_out)` for Glorot-uniform initialization.
    fn fans(self, n: usize, c_in: usize, c_out: usize) -> (usize, usize) {
        match self {
            LayerKind::E2eConv | LayerKind::E2eDeconv => (2 * n * c_in, 2 * n * c_out),
            LayerKind::E2nConv => (n * c_in, c_out),
            LayerKind::N2eDeconv => (2 * c_in, c_out),
        }
    }
}

/// Learnable tensors of one layer. Also used to carry their gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub kind: LayerKind,
    pub n: usize,
    pub c_in: usize,
    pub c_out: usize,
    tensors: Vec<DenseTensor>,
}

impl LayerParams {
    pub fn zeros(kind: LayerKind, n: usize, c_in: usize, c_out: usize) -> Self {
        let w = kind.weight_shape(n, c_in, c_out);
        let mut tensors: Vec<DenseTensor> = (0..kind.tensor_names().len() - 1)
            .map(|_| DenseTensor::zeros(&w))
            .collect();
        tensors.push(DenseTensor::zeros(&[c_out]));
        Self {
            kind,
            n,
            c_in,
            c_out,
            tensors,
        }
    }

    /// Weights uniform in `[-s, s]`, `s = sqrt(6 / (fan_in + fan_out))`; zero bias.
    pub fn init(kind: LayerKind, n: usize, c_in: usize, c_out: usize, rng: &mut Prng) -> Self {
        let mut p = Self::zeros(kind, n, c_in, c_out);
        let (fan_in, fan_out) = kind.fans(n, c_in, c_out);
        let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weights = p.tensors.len() - 1;
        for t in &mut p.tensors[..weights] {
            t.data_mut().iter_mut().for_each(|v| *v = rng.uniform_in(-s, s));
        }
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.kind, self.n, self.c_in, self.c_out)
    }

    pub fn tensors(&self) -> &[DenseTensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [DenseTensor] {
        &mut self.tensors
    }

    pub fn named_tensors(&self) -> impl Iterator<Item = (&'static str, &DenseTensor)> {
        self.kind.tensor_names().iter().copied().zip(&self.tensors)
    }

    pub fn bias(&self) -> &DenseTensor {
        self.tensors.last().expect("bias present")
    }

    pub fn bias_mut(&mut self) -> &mut DenseTensor {
        self.tensors.last_mut().expect("bias present")
    }

    fn weight(&self, idx: usize) -> &[f64] {
        self.tensors[idx].data()
    }

    fn weight_mut(&mut self, idx: usize) -> &mut [f64] {
        self.tensors[idx].data_mut()
    }

    /// E2E row-filter weights, `C_out × C_in × n`.
    pub fn row_weights(&self) -> &DenseTensor {
        assert!(matches!(self.kind, LayerKind::E2eConv | LayerKind::E2eDeconv));
        &self.tensors[0]
    }

    pub fn col_weights(&self) -> &DenseTensor {
        assert!(matches!(self.kind, LayerKind::E2eConv | LayerKind::E2eDeconv));
        &self.tensors[1]
    }

    pub fn node_weights(&self) -> &DenseTensor {
        assert_eq!(self.kind, LayerKind::E2nConv);
        &self.tensors[0]
    }

    pub fn endpoint_weights(&self) -> (&DenseTensor, &DenseTensor) {
        assert_eq!(self.kind, LayerKind::N2eDeconv);
        (&self.tensors[0], &self.tensors[1])
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(DenseTensor::len).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_values());
        let mut offset = 0;
        for t in &mut self.tensors {
            let len = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.tensors.iter().all(|t| t.data().iter().all(|v| *v == 0.0))
    }

    /// Copies `row_weights` into `col_weights` (or `p` into `q`).
    pub fn tie_weights(&mut self) {
        assert!(self.kind != LayerKind::E2nConv, "E2N has a single weight tensor");
        self.tensors[1] = self.tensors[0].clone();
    }
}

fn expect_kind(p: &LayerParams, kinds: &[LayerKind]) -> Result<()> {
    if kinds.contains(&p.kind) {
        Ok(())
    } else {
        Err(Error::shape(format!("expected {kinds:?} parameters, got {:?}", p.kind)))
    }
}

fn check_edge_input(x: &EdgeFeatureMap, p: &LayerParams) -> Result<()> {
    if x.channels != p.c_in || x.n != p.n {
        return Err(Error::shape(format!(
            "{} layer expects n={}, C_in={}; got n={}, C={}",
            p.kind.name(),
            p.n,
            p.c_in,
            x.n,
            x.channels
        )));
    }
    Ok(())
}

fn check_edge_grad(dy: &EdgeFeatureMap, p: &LayerParams) -> Result<()> {
    if dy.channels != p.c_out || dy.n != p.n {
        return Err(Error::shape(format!(
            "{} upstream gradient must be n={}, C={}; got n={}, C={}",
            p.kind.name(),
            p.n,
            p.c_out,
            dy.n,
            dy.channels
        )));
    }
    Ok(())
}

/// `Y(o,i,j) = b(o) + rows[o][i] + cols[o][j]`.
fn broadcast(n: usize, bias: &[f64], rows: &[f64], cols: &[f64]) -> EdgeFeatureMap {
    let c_out = bias.len();
    let mut y = EdgeFeatureMap::zeros(n, c_out);
    for o in 0..c_out {
        let col = &cols[o * n..(o + 1) * n];
        for i in 0..n {
            let base = bias[o] + rows[o * n + i];
            for (out, c) in y.row_mut(o, i).iter_mut().zip(col) {
                *out = base + c;
            }
        }
    }
    y
}

/// Row sums and column sums of each output channel of `dy`, as `[o][i]`.
fn reduce_rows_cols(dy: &EdgeFeatureMap) -> (Vec<f64>, Vec<f64>) {
    let n = dy.n;
    let mut d_rows = vec![0.0; dy.channels * n];
    let mut d_cols = vec![0.0; dy.channels * n];
    for o in 0..dy.channels {
        let dc = &mut d_cols[o * n..(o + 1) * n];
        for i in 0..n {
            let row = dy.row(o, i);
            d_rows[o * n + i] = row.iter().sum();
            for (acc, v) in dc.iter_mut().zip(row) {
                *acc += v;
            }
        }
    }
    (d_rows, d_cols)
}

fn cross_filter_forward(x: &EdgeFeatureMap, p: &LayerParams) -> EdgeFeatureMap {
    let n = x.n;
    let (row_w, col_w) = (p.weight(0), p.weight(1));
    let mut rows = vec![0.0; p.c_out * n];
    let mut cols = vec![0.0; p.c_out * n];
    for o in 0..p.c_out {
        let r = &mut rows[o * n..(o + 1) * n];
        let cc = &mut cols[o * n..(o + 1) * n];
        for c in 0..p.c_in {
            let wr = &row_w[(o * p.c_in + c) * n..(o * p.c_in + c + 1) * n];
            let wc = &col_w[(o * p.c_in + c) * n..(o * p.c_in + c + 1) * n];
            for (i, r_i) in r.iter_mut().enumerate() {
                *r_i += dot(wr, x.row(c, i));
            }
            for (k, &w) in wc.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                for (acc, v) in cc.iter_mut().zip(x.row(c, k)) {
                    *acc += w * v;
                }
            }
        }
    }
    broadcast(n, p.bias().data(), &rows, &cols)
}

fn cross_filter_backward(
    x: &EdgeFeatureMap,
    p: &LayerParams,
    dy: &EdgeFeatureMap,
) -> (EdgeFeatureMap, LayerParams) {
    let n = x.n;
    let (d_rows, d_cols) = reduce_rows_cols(dy);
    let mut grads = p.zeros_like();
    let mut dx = EdgeFeatureMap::zeros(n, p.c_in);
    let (row_w, col_w) = (p.weight(0), p.weight(1));

    for o in 0..p.c_out {
        let dr = &d_rows[o * n..(o + 1) * n];
        let dc = &d_cols[o * n..(o + 1) * n];
        grads.bias_mut().data_mut()[o] = dr.iter().sum();
        for c in 0..p.c_in {
            let w_off = (o * p.c_in + c) * n;
            {
                let d_row_w = &mut grads.weight_mut(0)[w_off..w_off + n];
                for (i, &g) in dr.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    for (acc, v) in d_row_w.iter_mut().zip(x.row(c, i)) {
                        *acc += g * v;
                    }
                }
            }
            {
                let d_col_w = &mut grads.weight_mut(1)[w_off..w_off + n];
                for (k, acc) in d_col_w.iter_mut().enumerate() {
                    *acc = dot(dc, x.row(c, k));
                }
            }
            let wr = &row_w[w_off..w_off + n];
            let wc = &col_w[w_off..w_off + n];
            for i in 0..n {
                let g = dr[i];
                let h = wc[i];
                let dx_row = dx.row_mut(c, i);
                for ((acc, w), d) in dx_row.iter_mut().zip(wr).zip(dc) {
                    *acc += g * w + h * d;
                }
            }
        }
    }
    (dx, grads)
}

pub fn e2e_forward(x: &EdgeFeatureMap, p: &LayerParams) -> Result<EdgeFeatureMap> {
    expect_kind(p, &[LayerKind::E2eConv])?;
    check_edge_input(x, p)?;
    Ok(cross_filter_forward(x, p))
}

pub fn e2e_backward(
    x: &EdgeFeatureMap,
    p: &LayerParams,
    dy: &EdgeFeatureMap,
) -> Result<(EdgeFeatureMap, LayerParams)> {
    expect_kind(p, &[LayerKind::E2eConv])?;
    check_edge_input(x, p)?;
    check_edge_grad(dy, p)?;
    Ok(cross_filter_backward(x, p, dy))
}

/// Same algebra as [`e2e_forward`] with independent decoder parameters.
pub fn e2e_deconv_forward(x: &EdgeFeatureMap, p: &LayerParams) -> Result<EdgeFeatureMap> {
    expect_kind(p, &[LayerKind::E2eDeconv])?;
    check_edge_input(x, p)?;
    Ok(cross_filter_forward(x, p))
}

pub fn e2e_deconv_backward(
    x: &EdgeFeatureMap,
    p: &LayerParams,
    dy: &EdgeFeatureMap,
) -> Result<(EdgeFeatureMap, LayerParams)> {
    expect_kind(p, &[LayerKind::E2eDeconv])?;
    check_edge_input(x, p)?;
    check_edge_grad(dy, p)?;
    Ok(cross_filter_backward(x, p, dy))
}

pub fn e2n_forward(x: &EdgeFeatureMap, p: &LayerParams) -> Result<NodeFeatureMap> {
    expect_kind(p, &[LayerKind::E2nConv])?;
    check_edge_input(x, p)?;
    let n = x.n;
    let w = p.weight(0);
    let bias = p.bias().data();
    let mut h = NodeFeatureMap::zeros(n, p.c_out);
    for i in 0..n {
        for o in 0..p.c_out {
            let mut acc = bias[o];
            for c in 0..p.c_in {
                let off = (o * p.c_in + c) * n;
                acc += dot(&w[off..off + n], x.row(c, i));
            }
            h.values[i * p.c_out + o] = acc;
        }
    }
    Ok(h)
}

pub fn e2n_backward(
    x: &EdgeFeatureMap,
    p: &LayerParams,
    dh: &NodeFeatureMap,
) -> Result<(EdgeFeatureMap, LayerParams)> {
    expect_kind(p, &[LayerKind::E2nConv])?;
    check_edge_input(x, p)?;
    if dh.n != p.n || dh.channels != p.c_out {
        return Err(Error::shape("e2n upstream gradient shape"));
    }
    let n = x.n;
    let mut grads = p.zeros_like();
    let mut dx = EdgeFeatureMap::zeros(n, p.c_in);
    let w = p.weight(0);
    for i in 0..n {
        for o in 0..p.c_out {
            let g = dh.get(i, o);
            grads.bias_mut().data_mut()[o] += g;
            if g == 0.0 {
                continue;
            }
            for c in 0..p.c_in {
                let off = (o * p.c_in + c) * n;
                for (acc, v) in grads.weight_mut(0)[off..off + n].iter_mut().zip(x.row(c, i)) {
                    *acc += g * v;
                }
                for (acc, wv) in dx.row_mut(c, i).iter_mut().zip(&w[off..off + n]) {
                    *acc += g * wv;
                }
            }
        }
    }
    Ok((dx, grads))
}

fn check_node_input(h: &NodeFeatureMap, p: &LayerParams) -> Result<()> {
    if h.channels != p.c_in || h.n != p.n {
        return Err(Error::shape(format!(
            "n2e layer expects n={}, C_in={}; got n={}, C={}",
            p.n, p.c_in, h.n, h.channels
        )));
    }
    Ok(())
}

pub fn n2e_forward(h: &NodeFeatureMap, p: &LayerParams) -> Result<EdgeFeatureMap> {
    expect_kind(p, &[LayerKind::N2eDeconv])?;
    check_node_input(h, p)?;
    let n = h.n;
    let (pw, qw) = (p.weight(0), p.weight(1));
    let mut rows = vec![0.0; p.c_out * n];
    let mut cols = vec![0.0; p.c_out * n];
    for o in 0..p.c_out {
        let prow = &pw[o * p.c_in..(o + 1) * p.c_in];
        let qrow = &qw[o * p.c_in..(o + 1) * p.c_in];
        for i in 0..n {
            rows[o * n + i] = dot(prow, h.node(i));
            cols[o * n + i] = dot(qrow, h.node(i));
        }
    }
    Ok(broadcast(n, p.bias().data(), &rows, &cols))
}

pub fn n2e_backward(
    h: &NodeFeatureMap,
    p: &LayerParams,
    dy: &EdgeFeatureMap,
) -> Result<(NodeFeatureMap, LayerParams)> {
    expect_kind(p, &[LayerKind::N2eDeconv])?;
    check_node_input(h, p)?;
    check_edge_grad(dy, p)?;
    let n = h.n;
    let (d_rows, d_cols) = reduce_rows_cols(dy);
    let mut grads = p.zeros_like();
    let mut dh = NodeFeatureMap::zeros(n, p.c_in);
    let (pw, qw) = (p.weight(0).to_vec(), p.weight(1).to_vec());
    for o in 0..p.c_out {
        let mut db = 0.0;
        for i in 0..n {
            let (du, dv) = (d_rows[o * n + i], d_cols[o * n + i]);
            db += du;
            let node = h.node(i);
            for c in 0..p.c_in {
                let idx = o * p.c_in + c;
                grads.tensors[0].data_mut()[idx] += du * node[c];
                grads.tensors[1].data_mut()[idx] += dv * node[c];
                dh.values[i * p.c_in + c] += du * pw[idx] + dv * qw[idx];
            }
        }
        grads.bias_mut().data_mut()[o] = db;
    }
    Ok((dh, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Identity,
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Sigmoid => sigmoid(v),
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }

    /// Derivative at pre-activation `v`; `relu'(0) = 0`.
    pub fn derivative(self, v: f64) -> f64 {
        match self {
            Activation::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(v);
                s * (1.0 - s)
            }
            Activation::Tanh => 1.0 - v.tanh().powi(2),
            Activation::Identity => 1.0,
        }
    }

    pub fn forward(self, pre: &[f64]) -> Vec<f64> {
        pre.iter().map(|&v| self.apply(v)).collect()
    }

    /// Gradient w.r.t. the pre-activation given the upstream gradient.
    pub fn backward(self, pre: &[f64], upstream: &[f64]) -> Vec<f64> {
        pre.iter()
            .zip(upstream)
            .map(|(&v, &g)| g * self.derivative(v))
            .collect()
    }

    pub fn forward_edges(self, pre: &EdgeFeatureMap) -> EdgeFeatureMap {
        pre.map(|v| self.apply(v))
    }

    pub fn backward_edges(self, pre: &EdgeFeatureMap, upstream: &EdgeFeatureMap) -> EdgeFeatureMap {
        EdgeFeatureMap {
            n: pre.n,
            channels: pre.channels,
            values: self.backward(&pre.values, &upstream.values),
        }
    }

    pub fn forward_nodes(self, pre: &NodeFeatureMap) -> NodeFeatureMap {
        pre.map(|v| self.apply(v))
    }

    pub fn backward_nodes(self, pre: &NodeFeatureMap, upstream: &NodeFeatureMap) -> NodeFeatureMap {
        NodeFeatureMap {
            n: pre.n,
            channels: pre.channels,
            values: self.backward(&pre.values, &upstream.values),
        }
    }
}
