//! Dense rank-4 tensor values, seeded initialization, and the elementwise
//! math every network component is built from.
//!
//! Data is row-major `(n, c, h, w)`. The element type is `f64` by default;
//! the `f32` feature switches the whole crate to single precision (gradient
//! verification needs the double-precision build).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{arg_err, shape_err, Error, Result};

#[cfg(not(feature = "f32"))]
pub type Elem = f64;
#[cfg(feature = "f32")]
pub type Elem = f32;

/// Label value excluded from losses and metrics.
pub const IGNORE_INDEX: u8 = 255;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Shape {
        Shape { n, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// numel with overflow detection, for fresh allocations.
    pub fn checked_numel(&self) -> Result<usize> {
        self.n
            .checked_mul(self.c)
            .and_then(|p| p.checked_mul(self.h))
            .and_then(|p| p.checked_mul(self.w))
            // Keep a sane ceiling well below isize::MAX bytes.
            .filter(|&p| p <= usize::MAX / 16)
            .ok_or_else(|| Error::Alloc(format!("extent product overflows: {self}")))
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    /// Elements per spatial plane.
    #[inline]
    pub fn plane(&self) -> usize {
        self.h * self.w
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Dense rank-4 value with an optional gradient slot of identical shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<Elem>,
    grad: Option<Vec<Elem>>,
}

impl Tensor {
    /// Allocate a constant-filled tensor. Errors when the extent product
    /// overflows addressable size.
    pub fn alloc(shape: Shape, fill: Elem) -> Result<Tensor> {
        let numel = shape.checked_numel()?;
        Ok(Tensor { shape, data: vec![fill; numel], grad: None })
    }

    /// Zero tensor for a shape known to be valid (derived from an existing
    /// tensor).
    pub fn zeros(shape: Shape) -> Tensor {
        Tensor::alloc(shape, 0.0).expect("shape derived from an existing tensor")
    }

    pub fn from_vec(shape: Shape, data: Vec<Elem>) -> Result<Tensor> {
        if data.len() != shape.numel() {
            return shape_err(format!(
                "data length {} does not match shape {shape}",
                data.len()
            ));
        }
        Ok(Tensor { shape, data, grad: None })
    }

    /// He-normal initialization: i.i.d. N(0, 2/fan_in).
    pub fn he_init(shape: Shape, fan_in: usize, rng: &mut SeededRng) -> Result<Tensor> {
        if fan_in == 0 {
            return arg_err("he_init: fan_in must be >= 1");
        }
        let numel = shape.checked_numel()?;
        let std = (2.0 / fan_in as Elem).sqrt();
        let data = (0..numel).map(|_| rng.normal() * std).collect();
        Ok(Tensor { shape, data, grad: None })
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[Elem] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [Elem] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Elem> {
        self.data
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> Elem {
        self.data[self.shape.at(n, c, y, x)]
    }

    pub fn grad(&self) -> Option<&[Elem]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<Elem>) {
        assert_eq!(grad.len(), self.data.len(), "gradient shape mismatch");
        self.grad = Some(grad);
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn take_grad(&mut self) -> Option<Vec<Elem>> {
        self.grad.take()
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Channel slice `[from, to)` as a new tensor.
    pub fn slice_channels(&self, from: usize, to: usize) -> Result<Tensor> {
        if from >= to || to > self.shape.c {
            return shape_err(format!(
                "channel slice {from}..{to} out of range for {}",
                self.shape
            ));
        }
        let out_shape = Shape::new(self.shape.n, to - from, self.shape.h, self.shape.w);
        let plane = self.shape.plane();
        let mut out = Vec::with_capacity(out_shape.numel());
        for n in 0..self.shape.n {
            let base = (n * self.shape.c + from) * plane;
            out.extend_from_slice(&self.data[base..base + (to - from) * plane]);
        }
        Tensor::from_vec(out_shape, out)
    }
}

/// Elementwise binary op kinds.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum EwKind {
    Add,
    Hadamard,
}

/// Per-element sum or product of two same-shaped tensors.
pub fn elementwise(a: &Tensor, b: &Tensor, kind: EwKind) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return shape_err(format!("elementwise: {} vs {}", a.shape(), b.shape()));
    }
    let data = match kind {
        EwKind::Add => a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect(),
        EwKind::Hadamard => a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect(),
    };
    Ok(Tensor { shape: a.shape, data, grad: None })
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

#[inline]
pub(crate) fn sigmoid(v: Elem) -> Elem {
    1.0 / (1.0 + (-v).exp())
}

/// Per-element nonlinearity.
pub fn activation(x: &Tensor, kind: Activation) -> Tensor {
    let data = x
        .data
        .iter()
        .map(|&v| match kind {
            Activation::Sigmoid => sigmoid(v),
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
        })
        .collect();
    Tensor { shape: x.shape, data, grad: None }
}

/// d(activation)/d(input), expressed through the activation output `y`.
#[inline]
pub(crate) fn activation_deriv_from_output(kind: Activation, y: Elem) -> Elem {
    match kind {
        Activation::Sigmoid => y * (1.0 - y),
        Activation::Tanh => 1.0 - y * y,
        Activation::Relu => {
            if y > 0.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Seeded pseudo-random source. Fixed algorithm: ChaCha8 keyed from the
/// 64-bit seed, so identical seeds give identical draw sequences on every
/// platform. Sub-streams derive statelessly from (seed, tag, index).
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SeededRng {
    pub fn new(seed: u64) -> SeededRng {
        SeededRng { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent sub-stream keyed by a purpose tag and an index. The
    /// derivation is stateless, so replaying a run from any step draws the
    /// same values.
    pub fn fork(&self, tag: &str, index: u64) -> SeededRng {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in tag.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
        SeededRng::new(splitmix64(self.seed ^ h ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> Elem {
        let v: f64 = self.inner.sample(StandardNormal);
        v as Elem
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> Elem {
        self.inner.random::<f64>() as Elem
    }

    pub fn range(&mut self, lo: Elem, hi: Elem) -> Elem {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        self.inner.random_range(0..n)
    }

    pub fn chance(&mut self, p: Elem) -> bool {
        self.uniform() < p
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
