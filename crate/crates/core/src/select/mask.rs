use serde::{Deserialize, Serialize};

use crate::error::SelectError;
use crate::tensor::{Scalar, Tensor};

/// Fraction `K` of weights kept per layer, as an exact rational.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KeepRatio {
    num: u32,
    den: u32,
}

impl KeepRatio {
    pub const HALF: KeepRatio = KeepRatio { num: 1, den: 2 };
    pub const ALL: KeepRatio = KeepRatio { num: 1, den: 1 };

    pub fn new(num: u32, den: u32) -> Result<Self, SelectError> {
        if den == 0 || num == 0 || num > den {
            return Err(SelectError::InvalidRatio { num, den });
        }
        let g = gcd(num, den);
        Ok(Self {
            num: num / g,
            den: den / g,
        })
    }

    /// Nearest rational with denominator 10^6, reduced.
    pub fn from_f64(k: f64) -> Result<Self, SelectError> {
        if !(k > 0.0 && k <= 1.0) {
            return Err(SelectError::Config(format!("keep ratio K must lie in (0, 1], got {k}")));
        }
        let den = 1_000_000u32;
        let num = ((k * den as f64).round() as u32).max(1);
        Self::new(num, den)
    }

    pub fn num(self) -> u32 {
        self.num
    }

    pub fn den(self) -> u32 {
        self.den
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `max(1, ⌊K·d⌋)`; a layer never loses every weight.
    pub fn keep_count(self, d: usize) -> usize {
        let kept = (d as u128 * self.num as u128 / self.den as u128) as usize;
        kept.max(1).min(d)
    }
}

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Binary masks, one per weighted layer, stored as 0/1 tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet<T = f32> {
    pub layers: Vec<Tensor<T>>,
}

impl<T: Scalar> MaskSet<T> {
    pub fn ones(shapes: &[Vec<usize>]) -> Self {
        Self {
            layers: shapes
                .iter()
                .map(|s| Tensor::full(s.clone(), T::one()).expect("weight shape"))
                .collect(),
        }
    }

    /// Number of ones per layer.
    pub fn counts(&self) -> Vec<usize> {
        self.layers
            .iter()
            .map(|t| t.data().iter().filter(|&&v| v != T::zero()).count())
            .collect()
    }

    pub fn total_ones(&self) -> usize {
        self.counts().iter().sum()
    }

    pub fn is_binary(&self) -> bool {
        self.layers
            .iter()
            .all(|t| t.data().iter().all(|&v| v == T::zero() || v == T::one()))
    }
}

/// Indices of the `keep` largest values in ascending order; equal values
/// prefer the lower index.
pub fn top_k_indices<T: Scalar>(values: &[T], keep: usize) -> Vec<usize> {
    let mut flags = vec![T::zero(); values.len()];
    fill_top_k(values, keep, &mut flags);
    (0..values.len()).filter(|&i| flags[i] != T::zero()).collect()
}

/// Writes 1 at the top `keep` positions of `values` and 0 elsewhere. Finds
/// the `keep`-th largest value, takes everything above it and then the
/// earliest values equal to it.
fn fill_top_k<T: Scalar>(values: &[T], keep: usize, out: &mut [T]) {
    let keep = keep.min(values.len());
    let (one, zero) = (T::one(), T::zero());
    if keep == 0 {
        out.fill(zero);
        return;
    }
    let keys: Vec<u64> = values.iter().map(|v| order_key(v.as_f64())).collect();
    let t = kth_largest(&keys, keep);
    let above: usize = keys.iter().map(|&k| (k > t) as usize).sum();
    let equal: usize = keys.iter().map(|&k| (k == t) as usize).sum();
    if above + equal == keep {
        for (o, &k) in out.iter_mut().zip(&keys) {
            *o = if k >= t { one } else { zero };
        }
    } else {
        let mut ties = keep - above;
        for (o, &k) in out.iter_mut().zip(&keys) {
            let take = k > t || (k == t && ties > 0);
            if k == t && take {
                ties -= 1;
            }
            *o = if take { one } else { zero };
        }
    }
}

/// Maps an `f64` to a `u64` with the same order; both zeros share a key.
fn order_key(x: f64) -> u64 {
    let b = (x + 0.0).to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | 1 << 63
    }
}

/// The `rank`-th largest key (1-based): a histogram over the top 16 bits
/// locates the bucket, then selection runs inside it.
fn kth_largest(keys: &[u64], rank: usize) -> u64 {
    let mut hist = vec![0usize; 1 << 16];
    for &k in keys {
        hist[(k >> 48) as usize] += 1;
    }
    let mut above = 0;
    let mut bucket = 0;
    for b in (0..hist.len()).rev() {
        if above + hist[b] >= rank {
            bucket = b;
            break;
        }
        above += hist[b];
    }
    let mut inside: Vec<u64> = keys.iter().copied().filter(|&k| (k >> 48) as usize == bucket).collect();
    let at = rank - above - 1;
    *inside.select_nth_unstable_by(at, |a, b| b.cmp(a)).1
}

/// Per-layer top-K: each layer keeps its `max(1, ⌊K·d_l⌋)` highest scores.
pub fn make_mask<T: Scalar>(scores: &[Tensor<T>], k: KeepRatio) -> MaskSet<T> {
    let layers = scores
        .iter()
        .map(|s| {
            let keep = k.keep_count(s.len());
            let mut data = vec![T::zero(); s.len()];
            fill_top_k(s.data(), keep, &mut data);
            Tensor::new(s.shape().to_vec(), data).expect("same shape")
        })
        .collect();
    MaskSet { layers }
}
