//! Brain networks, multiplex assembly and the flat feature space the
//! classifier works in.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::DenseTensor;

/// Tolerance for the symmetry invariant of a [`BrainNetwork`].
pub const SYMMETRY_TOL: f64 = 1e-12;

/// One subject's view: symmetric `n × n` weights, zero diagonal, entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrainNetwork {
    weights: DenseTensor,
    view_label: String,
}

impl BrainNetwork {
    pub fn new(weights: DenseTensor, view_label: impl Into<String>) -> Result<Self> {
        let net = Self {
            weights,
            view_label: view_label.into(),
        };
        net.validate()?;
        Ok(net)
    }

    /// Symmetrizes, zeroes the diagonal and clips into `[0, 1]`.
    pub fn sanitized(mut weights: DenseTensor, view_label: impl Into<String>) -> Result<Self> {
        if !weights.is_square() {
            return Err(Error::shape(format!("network must be square, got {:?}", weights.shape())));
        }
        let n = weights.rows();
        for i in 0..n {
            weights[(i, i)] = 0.0;
            for j in 0..i {
                let v = (0.5 * (weights[(i, j)] + weights[(j, i)])).clamp(0.0, 1.0);
                weights[(i, j)] = v;
                weights[(j, i)] = v;
            }
        }
        Self::new(weights, view_label)
    }

    /// Skips validation; used for unsymmetrized translator output.
    pub(crate) fn from_parts_unchecked(weights: DenseTensor, view_label: impl Into<String>) -> Self {
        Self {
            weights,
            view_label: view_label.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        if !w.is_square() {
            return Err(Error::shape(format!("network must be square, got {:?}", w.shape())));
        }
        let n = w.rows();
        if n < 2 {
            return Err(Error::Domain("network needs at least two nodes".into()));
        }
        for i in 0..n {
            if w[(i, i)] != 0.0 {
                return Err(Error::Domain(format!("nonzero diagonal at node {i}")));
            }
            for j in 0..n {
                let v = w[(i, j)];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Domain(format!("entry ({i},{j}) = {v} outside [0, 1]")));
                }
                if (v - w[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(Error::Domain(format!("asymmetric at ({i},{j})")));
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.weights.rows()
    }

    pub fn weights(&self) -> &DenseTensor {
        &self.weights
    }

    pub fn into_weights(self) -> DenseTensor {
        self.weights
    }

    pub fn view_label(&self) -> &str {
        &self.view_label
    }

    /// Upper off-diagonal entries in row-major `i < j` order.
    pub fn upper_triangle(&self) -> Vec<f64> {
        upper_triangle(&self.weights)
    }
}

pub fn upper_triangle(m: &DenseTensor) -> Vec<f64> {
    let n = m.rows();
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        out.extend_from_slice(&m.row(i)[i + 1..]);
    }
    out
}

/// Symmetric matrix with zero diagonal from its upper triangle.
pub fn from_upper_triangle(n: usize, values: &[f64]) -> Result<DenseTensor> {
    if values.len() != n * (n - 1) / 2 {
        return Err(Error::SizeMismatch {
            expected: n * (n - 1) / 2,
            actual: values.len(),
        });
    }
    let mut m = DenseTensor::zeros(&[n, n]);
    let mut it = values.iter();
    for i in 0..n {
        for j in i + 1..n {
            let v = *it.next().expect("length checked");
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

/// Linear rescale to `[0, 1]`; a constant matrix maps to zeros.
pub fn min_max_normalize(m: &DenseTensor) -> DenseTensor {
    let (lo, hi) = m
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    if span <= 0.0 {
        return m.zeros_like();
    }
    m.map(|v| (v - lo) / span)
}

/// Zero-padded "same"-size 2-D convolution of two intra-layers:
/// `out(a,b) = Σ_{p,q} S(p,q)·T(a−p+1, b−q+1)` with 1-based indices.
///
/// Returned pre-normalization; see [`build_multiplex`] for the normalized form.
pub fn inter_layer_conv(source: &BrainNetwork, target: &BrainNetwork) -> Result<DenseTensor> {
    convolve_same(source.weights(), target.weights())
}

/// [`inter_layer_conv`] on raw square matrices of equal size, without the
/// `[0, 1]` domain check.
pub fn convolve_same(s: &DenseTensor, t: &DenseTensor) -> Result<DenseTensor> {
    if !s.is_square() || !t.is_square() {
        return Err(Error::shape("inter-layer convolution needs square layers"));
    }
    let n = s.rows();
    if t.rows() != n {
        return Err(Error::SizeMismatch {
            expected: n,
            actual: t.rows(),
        });
    }
    let mut out = DenseTensor::zeros(&[n, n]);
    let (sd, td) = (s.data(), t.data());
    // out[p + r][q + c] += S[p][q] * T[r][c]
    for p in 0..n {
        for q in 0..n {
            let w = sd[p * n + q];
            if w == 0.0 {
                continue;
            }
            let width = n - q;
            for r in 0..n - p {
                let trow = &td[r * n..r * n + width];
                let orow = &mut out.data_mut()[(p + r) * n + q..(p + r) * n + n];
                for (o, tv) in orow.iter_mut().zip(trow) {
                    *o += w * tv;
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterKind {
    Conv,
    LearnedPreRelu,
    LearnedPostRelu,
}

/// Source intra-layer, inter-layer, target intra-layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Multiplex {
    pub source: BrainNetwork,
    pub inter: DenseTensor,
    pub target: BrainNetwork,
    pub inter_kind: InterKind,
}

impl Multiplex {
    pub fn n(&self) -> usize {
        self.source.n()
    }

    /// Layers in their fixed order.
    pub fn layers(&self) -> [&DenseTensor; 3] {
        [self.source.weights(), &self.inter, self.target.weights()]
    }
}

/// Assembles a multiplex. `tap` is required for the learned inter-layer kinds;
/// `normalize_inter` min-max scales the inter-layer into `[0, 1]`.
pub fn build_multiplex(
    source: BrainNetwork,
    target: BrainNetwork,
    inter_kind: InterKind,
    tap: Option<&DenseTensor>,
    normalize_inter: bool,
) -> Result<Multiplex> {
    if source.n() != target.n() {
        return Err(Error::SizeMismatch {
            expected: source.n(),
            actual: target.n(),
        });
    }
    let raw = match inter_kind {
        InterKind::Conv => inter_layer_conv(&source, &target)?,
        InterKind::LearnedPreRelu | InterKind::LearnedPostRelu => {
            let tap = tap.ok_or(Error::MissingTap)?;
            if tap.shape() != source.weights().shape() {
                return Err(Error::shape(format!("tap {:?} vs network {:?}", tap.shape(), source.weights().shape())));
            }
            tap.clone()
        }
    };
    let inter = if normalize_inter { min_max_normalize(&raw) } else { raw };
    Ok(Multiplex {
        source,
        inter,
        target,
        inter_kind,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerId {
    Source,
    Inter,
    Target,
}

impl LayerId {
    pub fn name(self) -> &'static str {
        match self {
            LayerId::Source => "source",
            LayerId::Inter => "inter",
            LayerId::Target => "target",
        }
    }
}

/// Maps flat feature positions to `(layer, i, j)` with `i < j`:
/// layer-major, then row-major upper triangle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureLayout {
    n: usize,
    layers: Vec<LayerId>,
    pairs: Vec<(usize, usize)>,
}

impl FeatureLayout {
    pub fn new(n: usize, layers: Vec<LayerId>) -> Self {
        let pairs = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        Self { n, layers, pairs }
    }

    pub fn single(n: usize) -> Self {
        Self::new(n, vec![LayerId::Source])
    }

    pub fn multiplex(n: usize) -> Self {
        Self::new(n, vec![LayerId::Source, LayerId::Inter, LayerId::Target])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn layers(&self) -> &[LayerId] {
        &self.layers
    }

    pub fn per_layer(&self) -> usize {
        self.pairs.len()
    }

    pub fn len(&self) -> usize {
        self.layers.len() * self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entry(&self, position: usize) -> (LayerId, usize, usize) {
        let per = self.per_layer();
        let (i, j) = self.pairs[position % per];
        (self.layers[position / per], i, j)
    }

    pub fn position(&self, layer: LayerId, i: usize, j: usize) -> Option<usize> {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        if i == j || j >= self.n {
            return None;
        }
        let l = self.layers.iter().position(|&x| x == layer)?;
        // Offset of row i in the upper triangle: i*n - i*(i+1)/2.
        let within = i * self.n - i * (i + 1) / 2 + (j - i - 1);
        Some(l * self.per_layer() + within)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub layout: FeatureLayout,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// One symmetric zero-diagonal matrix per layer.
    pub fn devectorize(&self) -> Result<Vec<DenseTensor>> {
        let per = self.layout.per_layer();
        self.values
            .chunks(per)
            .map(|chunk| from_upper_triangle(self.layout.n(), chunk))
            .collect()
    }
}

pub fn vectorize_multiplex(m: &Multiplex) -> FeatureVector {
    let layout = FeatureLayout::multiplex(m.n());
    let values = m.layers().iter().flat_map(|l| upper_triangle(l)).collect();
    FeatureVector { values, layout }
}

pub fn vectorize_network(net: &BrainNetwork) -> FeatureVector {
    FeatureVector {
        values: net.upper_triangle(),
        layout: FeatureLayout::single(net.n()),
    }
}

/// Mean absolute error over upper off-diagonal entries.
pub fn mae(predicted: &BrainNetwork, truth: &BrainNetwork) -> Result<f64> {
    mae_matrices(predicted.weights(), truth.weights())
}

pub(crate) fn mae_matrices(a: &DenseTensor, b: &DenseTensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::SizeMismatch {
            expected: a.rows(),
            actual: b.rows(),
        });
    }
    let n = a.rows();
    let mut total = 0.0;
    for i in 0..n {
        for (x, y) in a.row(i)[i + 1..].iter().zip(&b.row(i)[i + 1..]) {
            total += (x - y).abs();
        }
    }
    Ok(total / (n * (n - 1) / 2) as f64)
}
