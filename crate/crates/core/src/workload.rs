//! Layer loop nests: the seven convolution dimensions, operand relevance,
//! prime-factor decomposition and tile footprints.

use std::fmt;
use std::ops::{Index, IndexMut};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::archspec::SpatialUnrolling;
use crate::error::{Error, Result};

/// A loop dimension of the convolution nest, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dim {
    B,
    K,
    C,
    OY,
    OX,
    FY,
    FX,
}

impl Dim {
    pub const ALL: [Dim; 7] = [Dim::B, Dim::K, Dim::C, Dim::OY, Dim::OX, Dim::FY, Dim::FX];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Dim::B => "B",
            Dim::K => "K",
            Dim::C => "C",
            Dim::OY => "OY",
            Dim::OX => "OX",
            Dim::FY => "FY",
            Dim::FX => "FX",
        }
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Dim {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Dim::ALL
            .into_iter()
            .find(|d| d.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown dimension `{s}`"))
    }
}

/// The three tensors of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OperandKind {
    I,
    W,
    O,
}

impl OperandKind {
    pub const ALL: [OperandKind; 3] = [OperandKind::I, OperandKind::W, OperandKind::O];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_relevant(self, dim: Dim) -> bool {
        operand_relevance(dim, self)
    }
}

impl fmt::Display for OperandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OperandKind::I => "I",
            OperandKind::W => "W",
            OperandKind::O => "O",
        })
    }
}

/// One value per operand. Serializes as `{"I": .., "W": .., "O": ..}`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerOperand<T> {
    #[serde(rename = "I")]
    pub input: T,
    #[serde(rename = "W")]
    pub weight: T,
    #[serde(rename = "O")]
    pub output: T,
}

impl<T> PerOperand<T> {
    pub fn from_fn(mut f: impl FnMut(OperandKind) -> T) -> Self {
        PerOperand {
            input: f(OperandKind::I),
            weight: f(OperandKind::W),
            output: f(OperandKind::O),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (OperandKind, &T)> {
        [
            (OperandKind::I, &self.input),
            (OperandKind::W, &self.weight),
            (OperandKind::O, &self.output),
        ]
        .into_iter()
    }
}

impl<T> Index<OperandKind> for PerOperand<T> {
    type Output = T;

    fn index(&self, op: OperandKind) -> &T {
        match op {
            OperandKind::I => &self.input,
            OperandKind::W => &self.weight,
            OperandKind::O => &self.output,
        }
    }
}

impl<T> IndexMut<OperandKind> for PerOperand<T> {
    fn index_mut(&mut self, op: OperandKind) -> &mut T {
        match op {
            OperandKind::I => &mut self.input,
            OperandKind::W => &mut self.weight,
            OperandKind::O => &mut self.output,
        }
    }
}

/// Whether `dim` indexes the tensor of `operand`.
pub fn operand_relevance(dim: Dim, operand: OperandKind) -> bool {
    use Dim::*;
    match operand {
        OperandKind::W => matches!(dim, K | C | FY | FX),
        OperandKind::O => matches!(dim, B | K | OY | OX),
        OperandKind::I => matches!(dim, B | C | OY | OX | FY | FX),
    }
}

fn default_stride() -> u64 {
    1
}

/// A convolutional layer. Other layer types are expressed by setting
/// dimensions to 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub name: String,
    #[serde(rename = "B")]
    pub b: u64,
    #[serde(rename = "K")]
    pub k: u64,
    #[serde(rename = "C")]
    pub c: u64,
    #[serde(rename = "OY")]
    pub oy: u64,
    #[serde(rename = "OX")]
    pub ox: u64,
    #[serde(rename = "FY")]
    pub fy: u64,
    #[serde(rename = "FX")]
    pub fx: u64,
    #[serde(default = "default_stride")]
    pub stride_y: u64,
    #[serde(default = "default_stride")]
    pub stride_x: u64,
    pub word_bits: PerOperand<u32>,
}

impl LayerSpec {
    /// Builds a layer with unit strides and 16-bit words for every operand.
    pub fn new(name: impl Into<String>, dims: [u64; 7]) -> Self {
        let [b, k, c, oy, ox, fy, fx] = dims;
        LayerSpec {
            name: name.into(),
            b,
            k,
            c,
            oy,
            ox,
            fy,
            fx,
            stride_y: 1,
            stride_x: 1,
            word_bits: PerOperand {
                input: 16,
                weight: 16,
                output: 16,
            },
        }
    }

    pub fn with_strides(mut self, stride_y: u64, stride_x: u64) -> Self {
        self.stride_y = stride_y;
        self.stride_x = stride_x;
        self
    }

    pub fn size(&self, dim: Dim) -> u64 {
        match dim {
            Dim::B => self.b,
            Dim::K => self.k,
            Dim::C => self.c,
            Dim::OY => self.oy,
            Dim::OX => self.ox,
            Dim::FY => self.fy,
            Dim::FX => self.fx,
        }
    }

    pub fn dims(&self) -> DimSizes {
        let mut sizes = DimSizes::ones();
        for d in Dim::ALL {
            sizes[d] = self.size(d);
        }
        sizes
    }

    pub fn validate(&self) -> Result<()> {
        let fields: [(&'static str, u64); 9] = [
            ("B", self.b),
            ("K", self.k),
            ("C", self.c),
            ("OY", self.oy),
            ("OX", self.ox),
            ("FY", self.fy),
            ("FX", self.fx),
            ("stride_y", self.stride_y),
            ("stride_x", self.stride_x),
        ];
        let bad = fields
            .iter()
            .map(|&(f, v)| (f, v))
            .chain(self.word_bits.iter().map(|(op, &v)| {
                let f = match op {
                    OperandKind::I => "word_bits.I",
                    OperandKind::W => "word_bits.W",
                    OperandKind::O => "word_bits.O",
                };
                (f, u64::from(v))
            }))
            .find(|&(_, v)| v == 0);
        match bad {
            Some((field, _)) => Err(Error::InvalidLayer {
                layer: self.name.clone(),
                field,
            }),
            None => Ok(()),
        }
    }

    /// Every numeric field, used to detect layers with identical shape.
    pub fn shape_key(&self) -> [u64; 12] {
        [
            self.b,
            self.k,
            self.c,
            self.oy,
            self.ox,
            self.fy,
            self.fx,
            self.stride_y,
            self.stride_x,
            u64::from(self.word_bits.input),
            u64::from(self.word_bits.weight),
            u64::from(self.word_bits.output),
        ]
    }
}

/// A size per dimension. Absent dimensions are 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DimSizes(pub [u64; 7]);

impl DimSizes {
    pub fn ones() -> Self {
        DimSizes([1; 7])
    }

    pub fn from_pairs(pairs: &[(Dim, u64)]) -> Self {
        let mut sizes = Self::ones();
        for &(d, s) in pairs {
            sizes[d] *= s;
        }
        sizes
    }

    pub fn from_loops(loops: &[Loop]) -> Self {
        let mut sizes = Self::ones();
        for l in loops {
            sizes[l.dim] *= l.size;
        }
        sizes
    }

    pub fn product(&self) -> u64 {
        self.0.iter().product()
    }
}

impl Index<Dim> for DimSizes {
    type Output = u64;

    fn index(&self, d: Dim) -> &u64 {
        &self.0[d.index()]
    }
}

impl IndexMut<Dim> for DimSizes {
    fn index_mut(&mut self, d: Dim) -> &mut u64 {
        &mut self.0[d.index()]
    }
}

/// A loop prime factor: an indivisible temporal loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Lpf {
    dim: Dim,
    factor: u64,
}

impl Lpf {
    pub fn new(dim: Dim, factor: u64) -> Option<Self> {
        is_prime(factor).then_some(Lpf { dim, factor })
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn factor(&self) -> u64 {
        self.factor
    }
}

/// One entry of a loop ordering. Usually an [`Lpf`]; the size is composite
/// only after [`limit_lpfs`] merged factors.
///
/// Ordered by (dimension, size), which is the canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(Dim, u64)", into = "(Dim, u64)")]
pub struct Loop {
    pub dim: Dim,
    pub size: u64,
}

impl Loop {
    pub fn new(dim: Dim, size: u64) -> Self {
        Loop { dim, size }
    }
}

impl From<Lpf> for Loop {
    fn from(l: Lpf) -> Self {
        Loop {
            dim: l.dim,
            size: l.factor,
        }
    }
}

impl From<(Dim, u64)> for Loop {
    fn from((dim, size): (Dim, u64)) -> Self {
        Loop { dim, size }
    }
}

impl From<Loop> for (Dim, u64) {
    fn from(l: Loop) -> Self {
        (l.dim, l.size)
    }
}

impl fmt::Display for Loop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.dim, self.size)
    }
}

pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2u64;
    while d * d <= n {
        if n.is_multiple_of(d) {
            return false;
        }
        d += 1;
    }
    true
}

/// Prime factors of `n` in ascending order (empty for 1).
pub fn prime_factors(mut n: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut d = 2u64;
    while d * d <= n {
        while n.is_multiple_of(d) {
            out.push(d);
            n /= d;
        }
        d += 1;
    }
    if n > 1 {
        out.push(n);
    }
    out
}

/// Temporal size of every dimension once the spatial factors are removed.
pub fn temporal_sizes(layer: &LayerSpec, spatial: &SpatialUnrolling) -> Result<DimSizes> {
    let mut sizes = layer.dims();
    for d in Dim::ALL {
        let factor = spatial.factor(d);
        if !sizes[d].is_multiple_of(factor) {
            return Err(Error::NonDivisibleUnrolling {
                dim: d,
                factor,
                size: sizes[d],
            });
        }
        sizes[d] /= factor;
    }
    Ok(sizes)
}

/// Decomposes every temporal loop into its prime factors, in canonical order.
pub fn lpf_decompose(layer: &LayerSpec, spatial: &SpatialUnrolling) -> Result<Vec<Lpf>> {
    let sizes = temporal_sizes(layer, spatial)?;
    Ok(Dim::ALL
        .into_iter()
        .flat_map(|d| {
            prime_factors(sizes[d])
                .into_iter()
                .map(move |p| Lpf { dim: d, factor: p })
        })
        .collect())
}

/// Coarsens a loop list to at most `max_n` entries by repeatedly merging the
/// two smallest loops of one dimension. The dimension whose merge gives the
/// smallest product goes first; ties go to the earlier dimension. The merged
/// loop takes the position of the first of the pair.
pub fn limit_lpfs(loops: &[Loop], max_n: usize) -> Vec<Loop> {
    let mut out = loops.to_vec();
    while out.len() > max_n {
        let mut best: Option<(u64, Dim, usize, usize)> = None;
        for d in Dim::ALL {
            let mut idx: Vec<usize> = (0..out.len()).filter(|&i| out[i].dim == d).collect();
            if idx.len() < 2 {
                continue;
            }
            idx.sort_by_key(|&i| (out[i].size, i));
            let (a, b) = (idx[0], idx[1]);
            let product = out[a].size * out[b].size;
            if best.is_none_or(|(p, ..)| product < p) {
                best = Some((product, d, a.min(b), a.max(b)));
            }
        }
        let Some((product, _, keep, drop)) = best else {
            break;
        };
        out[keep].size = product;
        out.remove(drop);
    }
    out
}

/// Words of `operand` touched by a tile with the given per-dimension sizes.
pub fn tile_footprint(operand: OperandKind, tile: &DimSizes, layer: &LayerSpec) -> u64 {
    use Dim::*;
    match operand {
        OperandKind::W => tile[K] * tile[C] * tile[FY] * tile[FX],
        OperandKind::O => tile[B] * tile[K] * tile[OY] * tile[OX],
        OperandKind::I => {
            let iy = layer.stride_y * (tile[OY] - 1) + tile[FY];
            let ix = layer.stride_x * (tile[OX] - 1) + tile[FX];
            tile[B] * tile[C] * iy * ix
        }
    }
}

pub fn total_macs(layer: &LayerSpec) -> u64 {
    layer.dims().product()
}

/// Full tensor size of `operand` in words.
pub fn tensor_size(operand: OperandKind, layer: &LayerSpec) -> u64 {
    tile_footprint(operand, &layer.dims(), layer)
}
