//! Deterministic numeric substrate: seeded RNG streams, flat parameter
//! vectors with a per-layer segment map, Gaussian sampling and norms.

use std::sync::Arc;

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Seeded random stream.
///
/// Streams are identified by `(seed, stream)`. Children are derived from the
/// parent's identity only, never from its current position, so spawning a
/// child does not advance the parent and sibling streams never overlap.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    /// Independent child stream keyed by `id`.
    pub fn child(&self, id: u64) -> Self {
        let stream = splitmix64(self.stream ^ splitmix64(id.wrapping_add(1)));
        Self::with_stream(self.seed, stream)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Number of 32-bit words consumed so far.
    pub fn position(&self) -> u128 {
        self.inner.get_word_pos()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
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

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// `dim` i.i.d. draws from N(0, sigma^2).
pub fn gaussian_sample(rng: &mut Rng, dim: usize, sigma: f64) -> Result<Vec<f64>> {
    if dim == 0 {
        return Err(invalid("gaussian_sample: dim must be >= 1"));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(invalid(format!("gaussian_sample: sigma must be > 0, got {sigma}")));
    }
    Ok((0..dim).map(|_| sigma * rng.normal()).collect())
}

pub fn l2_norm(v: &[f64]) -> Result<f64> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(invalid(format!("l2_norm: non-finite entry at index {i}")));
    }
    Ok(norm_unchecked(v))
}

pub(crate) fn norm_unchecked(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(sigmoid(x))` without cancellation for large |x|.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Binary entropy in nats.
pub fn bernoulli_entropy(p: f64) -> f64 {
    let term = |q: f64| if q > 0.0 { -q * q.ln() } else { 0.0 };
    term(p) + term(1.0 - p)
}

/// KL(Bern(p) || Bern(q)) in nats.
pub fn bernoulli_kl(p: f64, q: f64) -> f64 {
    let term = |a: f64, b: f64| if a > 0.0 { a * (a / b).ln() } else { 0.0 };
    term(p, q) + term(1.0 - p, 1.0 - q)
}

/// Sample mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, se: 0.0 }
    }

    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                value: f64::NAN,
                se: f64::NAN,
            };
        }
        // shifted by the first sample so constant data gives that value exactly
        let x0 = xs[0];
        let mean = x0 + xs.iter().map(|x| x - x0).sum::<f64>() / n as f64;
        if n == 1 {
            return Self { value: mean, se: 0.0 };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Self {
            value: mean,
            se: (var / n as f64).sqrt(),
        }
    }
}

/// One named slice of a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Ordered, contiguous segment map covering a whole vector.
#[derive(Clone, Debug)]
pub struct Layout {
    segments: Arc<[Segment]>,
    total: usize,
}

impl PartialEq for Layout {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.segments, &other.segments) || self.segments == other.segments
    }
}

impl Layout {
    pub fn new<S: Into<String>>(parts: impl IntoIterator<Item = (S, usize)>) -> Self {
        let mut offset = 0;
        let segments: Vec<Segment> = parts
            .into_iter()
            .map(|(name, len)| {
                let seg = Segment {
                    name: name.into(),
                    offset,
                    len,
                };
                offset += len;
                seg
            })
            .collect();
        Self {
            segments: segments.into(),
            total: offset,
        }
    }

    /// Rebuild from explicit segments, checking contiguity.
    pub fn from_segments(segments: Vec<Segment>) -> Result<Self> {
        let mut offset = 0;
        for s in &segments {
            if s.offset != offset {
                return Err(invalid(format!(
                    "segment '{}' starts at {} but previous segments end at {offset}",
                    s.name, s.offset
                )));
            }
            offset += s.len;
        }
        Ok(Self {
            segments: segments.into(),
            total: offset,
        })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }
}

/// Flat parameter or gradient vector with its layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Layout,
}

impl ParamVector {
    pub fn zeros(layout: &Layout) -> Self {
        Self {
            values: vec![0.0; layout.len()],
            layout: layout.clone(),
        }
    }

    pub fn new(layout: &Layout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(invalid(format!(
                "parameter vector has {} values but layout covers {}",
                values.len(),
                layout.len()
            )));
        }
        if let Some(i) = values.iter().position(|x| !x.is_finite()) {
            return Err(invalid(format!("non-finite parameter at index {i}")));
        }
        Ok(Self {
            values,
            layout: layout.clone(),
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
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

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, index: usize) -> &[f64] {
        let s = &self.layout.segments()[index];
        &self.values[s.offset..s.offset + s.len]
    }

    pub fn segment_mut(&mut self, index: usize) -> &mut [f64] {
        let (offset, len) = {
            let s = &self.layout.segments()[index];
            (s.offset, s.len)
        };
        &mut self.values[offset..offset + len]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    pub fn norm(&self) -> f64 {
        norm_unchecked(&self.values)
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_layout(other)?;
        Ok(dot(&self.values, &other.values))
    }

    pub fn check_layout(&self, other: &Self) -> Result<()> {
        if self.layout != other.layout {
            return Err(invalid("parameter layouts differ"));
        }
        Ok(())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) -> Result<()> {
        self.check_layout(other)?;
        for (x, y) in self.values.iter_mut().zip(&other.values) {
            *x += scale * y;
        }
        Ok(())
    }

    pub fn scale(&mut self, c: f64) {
        for x in &mut self.values {
            *x *= c;
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.scale(c);
        out
    }

    /// `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_layout(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self {
            values,
            layout: self.layout.clone(),
        })
    }
}

/// Rescale `g` so that its norm is at most `max_norm`; returns `g` unchanged
/// when it is already within the threshold.
pub fn clip_by_global_norm(g: &ParamVector, max_norm: f64) -> Result<ParamVector> {
    if !(max_norm > 0.0) {
        return Err(invalid(format!("clip_by_global_norm: max_norm must be > 0, got {max_norm}")));
    }
    let norm = l2_norm(g.values())?;
    if norm <= max_norm {
        return Ok(g.clone());
    }
    Ok(g.scaled(max_norm / norm))
}
