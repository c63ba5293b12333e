//! The `.pemn` container: a bit-exact byte layout for a masked network and
//! the storage accounting that goes with it.
//!
//! Layout (all integers little-endian, floats IEEE-754 binary32):
//!
//! ```text
//! magic "PEMN"          4
//! version               u16
//! strategy              u8   0 dense-mask, 1 one_layer, 2 mp, 3 rp, 4 trained
//! flags                 u8   bit0 explicit values, bit1 prototype digest
//! seed                  u64
//! d_v                   u64  0 unless rp
//! K num, den            u32, u32
//! init scheme           u8   0 kaiming normal, 1 kaiming uniform
//! input rank            u8, then u32 x rank
//! class count           u32
//! layer count           u32
//! per layer             kind u8, rank u8, dims u32 x rank
//!   weighted layers add scale f32, mask tag u8, payload length u64, payload
//! explicit values       count u64, f32 x count          (bit0)
//! prototype digest      u32                             (bit1)
//! crc32                 u32 over everything before it
//! ```
//!
//! Layer kinds: 0 linear `[out, in]`, 1 conv `[out, in, kh, kw, stride, pad]`,
//! 2 relu, 3 flatten, 4 avgpool `[kernel]`.
//!
//! For `trained` models the explicit values are the kept weights in mask
//! order; such models come from conventional sparse training rather than from
//! a prototype.

use crate::error::ContainerError;
use crate::gradcore::{check_layer_tensors, forward, ForwardTrace, LayerSpec, NetworkSpec};
use crate::protogen::{expand_payload, fill, FilledWeights, InitScheme, PrototypeSource, Strategy, VectorLength};
use crate::select::{KeepRatio, MaskSet};
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: [u8; 4] = *b"PEMN";
pub const VERSION: u16 = 1;

const FLAG_EXPLICIT: u8 = 1;
const FLAG_DIGEST: u8 = 2;
const TAG_BITMAP: u8 = 1;
const TAG_INDEX: u8 = 2;
const STRATEGY_TRAINED: u8 = 4;

/// How a mask payload is encoded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MaskEncoding {
    /// `⌈d/8⌉` bytes, LSB-first, row-major.
    Bitmap,
    /// `u32` count followed by sorted `u32` flat indices of ones.
    IndexList,
}

impl MaskEncoding {
    pub fn tag(self) -> u8 {
        match self {
            MaskEncoding::Bitmap => TAG_BITMAP,
            MaskEncoding::IndexList => TAG_INDEX,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MaskEncoding::Bitmap => "bitmap",
            MaskEncoding::IndexList => "index-list",
        }
    }
}

pub fn bitmap_len(d: usize) -> usize {
    d.div_ceil(8)
}

pub fn index_list_len(ones: usize) -> usize {
    4 + 4 * ones
}

/// Encodes a binary mask with whichever encoding is smaller; ties favour the
/// bitmap. Any non-zero entry counts as a one.
pub fn encode_mask<T: Scalar>(mask: &Tensor<T>) -> (MaskEncoding, Vec<u8>) {
    let data = mask.data();
    let ones = data.iter().filter(|v| **v != T::zero()).count();
    if bitmap_len(data.len()) <= index_list_len(ones) {
        let mut out = vec![0u8; bitmap_len(data.len())];
        for (i, v) in data.iter().enumerate() {
            if *v != T::zero() {
                out[i / 8] |= 1 << (i % 8);
            }
        }
        (MaskEncoding::Bitmap, out)
    } else {
        let mut out = Vec::with_capacity(index_list_len(ones));
        out.extend_from_slice(&(ones as u32).to_le_bytes());
        for (i, v) in data.iter().enumerate() {
            if *v != T::zero() {
                out.extend_from_slice(&(i as u32).to_le_bytes());
            }
        }
        (MaskEncoding::IndexList, out)
    }
}

/// Inverse of [`encode_mask`]. Rejects padding bits, unsorted or
/// out-of-range indices and length mismatches.
pub fn decode_mask(encoding: MaskEncoding, payload: &[u8], shape: Vec<usize>) -> Result<Tensor<f32>, ContainerError> {
    let d: usize = shape.iter().product();
    let mut data = vec![0.0f32; d];
    match encoding {
        MaskEncoding::Bitmap => {
            if payload.len() != bitmap_len(d) {
                return Err(ContainerError::Malformed(format!(
                    "bitmap of {} bytes for {d} weights",
                    payload.len()
                )));
            }
            for (i, v) in data.iter_mut().enumerate() {
                if payload[i / 8] >> (i % 8) & 1 == 1 {
                    *v = 1.0;
                }
            }
            if !d.is_multiple_of(8) && payload[d / 8] >> (d % 8) != 0 {
                return Err(ContainerError::Malformed("bitmap padding bits are set".into()));
            }
        }
        MaskEncoding::IndexList => {
            if payload.len() < 4 {
                return Err(ContainerError::Malformed("index list shorter than its count".into()));
            }
            let count = u32::from_le_bytes(payload[..4].try_into().expect("4 bytes")) as usize;
            if payload.len() != 4 + 4 * count {
                return Err(ContainerError::Malformed(format!(
                    "index list of {} bytes declares {count} entries",
                    payload.len()
                )));
            }
            let mut prev: Option<usize> = None;
            for chunk in payload[4..].chunks_exact(4) {
                let i = u32::from_le_bytes(chunk.try_into().expect("4 bytes")) as usize;
                if i >= d || prev.is_some_and(|p| p >= i) {
                    return Err(ContainerError::Malformed(format!("index {i} out of order or range")));
                }
                data[i] = 1.0;
                prev = Some(i);
            }
        }
    }
    Ok(Tensor::new(shape, data).expect("shape from spec"))
}

/// Where the fixed weights of a model come from.
#[derive(Clone, Debug, PartialEq)]
pub enum WeightSource {
    /// Generated from a random prototype. `explicit` holds the prototype's
    /// unique values when they are stored rather than regenerated.
    Prototype {
        source: PrototypeSource,
        explicit: Option<Vec<f32>>,
    },
    /// Weights of a conventionally trained sparse network: the kept values in
    /// mask order.
    Trained {
        seed: u64,
        init: InitScheme,
        values: Vec<f32>,
    },
}

/// A masked network as stored in a container.
#[derive(Clone, Debug, PartialEq)]
pub struct PemnModel {
    pub spec: NetworkSpec,
    pub weights: WeightSource,
    pub k: KeepRatio,
    pub masks: MaskSet<f32>,
    /// One multiplier per weighted layer.
    pub scales: Vec<f32>,
    /// CRC32 of the prototype values, checked when the model is loaded.
    pub prototype_digest: Option<u32>,
}

fn digest(values: &[f32]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    for v in values {
        h.update(&v.to_le_bytes());
    }
    h.finalize()
}

impl PemnModel {
    /// Seed-only model over prototype weights, with a digest of the prototype
    /// so that a loader can detect a generator that disagrees.
    pub fn from_prototype(
        spec: &NetworkSpec,
        source: &PrototypeSource,
        filled: &FilledWeights,
        k: KeepRatio,
        masks: MaskSet<f32>,
    ) -> Result<Self, ContainerError> {
        let model = Self {
            spec: spec.clone(),
            weights: WeightSource::Prototype {
                source: source.resolve(spec)?,
                explicit: None,
            },
            k,
            masks,
            scales: filled.scales().to_vec(),
            prototype_digest: Some(digest(filled.payload())),
        };
        model.validate()?;
        Ok(model)
    }

    /// Stores the prototype values in the container instead of relying on the
    /// seed.
    pub fn with_explicit_prototype(mut self, values: Vec<f32>) -> Result<Self, ContainerError> {
        match &mut self.weights {
            WeightSource::Prototype { explicit, .. } => *explicit = Some(values),
            WeightSource::Trained { .. } => {
                return Err(ContainerError::Inconsistent(
                    "trained models always store their values".into(),
                ))
            }
        }
        self.validate()?;
        Ok(self)
    }

    /// Model holding the surviving weights of a conventionally trained sparse
    /// network. `k` records the overall kept fraction.
    pub fn from_trained(
        spec: &NetworkSpec,
        seed: u64,
        init: InitScheme,
        weights: &[Tensor<f32>],
        masks: MaskSet<f32>,
    ) -> Result<Self, ContainerError> {
        check_layer_tensors(spec, weights)?;
        check_layer_tensors(spec, &masks.layers)?;
        let values: Vec<f32> = weights
            .iter()
            .zip(&masks.layers)
            .flat_map(|(w, m)| {
                w.data()
                    .iter()
                    .zip(m.data())
                    .filter(|(_, &b)| b != 0.0)
                    .map(|(&v, _)| v)
            })
            .collect();
        let p = spec.parameter_count();
        let k = match (u32::try_from(values.len()), u32::try_from(p)) {
            (Ok(n), Ok(d)) => KeepRatio::new(n, d),
            _ => KeepRatio::from_f64(values.len() as f64 / p as f64),
        }
        .map_err(|e| ContainerError::Inconsistent(e.to_string()))?;
        let model = Self {
            spec: spec.clone(),
            weights: WeightSource::Trained { seed, init, values },
            k,
            scales: vec![1.0; masks.layers.len()],
            masks,
            prototype_digest: None,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn strategy_code(&self) -> u8 {
        match &self.weights {
            WeightSource::Prototype { source, .. } => match source.strategy {
                Strategy::Dense => 0,
                Strategy::OneLayer => 1,
                Strategy::Mp => 2,
                Strategy::Rp => 3,
            },
            WeightSource::Trained { .. } => STRATEGY_TRAINED,
        }
    }

    pub fn strategy_name(&self) -> &'static str {
        match &self.weights {
            WeightSource::Prototype { source, .. } => source.strategy.name(),
            WeightSource::Trained { .. } => "trained",
        }
    }

    pub fn seed(&self) -> u64 {
        match &self.weights {
            WeightSource::Prototype { source, .. } => source.seed,
            WeightSource::Trained { seed, .. } => *seed,
        }
    }

    pub fn init(&self) -> InitScheme {
        match &self.weights {
            WeightSource::Prototype { source, .. } => source.init,
            WeightSource::Trained { init, .. } => *init,
        }
    }

    /// Prototype vector length for `rp`, else 0.
    pub fn d_v(&self) -> u64 {
        match &self.weights {
            WeightSource::Prototype { source, .. } => source.vector_len().unwrap_or(0) as u64,
            WeightSource::Trained { .. } => 0,
        }
    }

    /// Values stored in the container, if any.
    pub fn explicit_values(&self) -> Option<&[f32]> {
        match &self.weights {
            WeightSource::Prototype { explicit, .. } => explicit.as_deref(),
            WeightSource::Trained { values, .. } => Some(values),
        }
    }

    fn flags(&self) -> u8 {
        let mut f = 0;
        if self.explicit_values().is_some() {
            f |= FLAG_EXPLICIT;
        }
        if self.prototype_digest.is_some() {
            f |= FLAG_DIGEST;
        }
        f
    }

    /// Checks that masks, scales and stored values agree with the network shape.
    pub fn validate(&self) -> Result<(), ContainerError> {
        check_layer_tensors(&self.spec, &self.masks.layers)?;
        if !self.masks.is_binary() {
            return Err(ContainerError::Inconsistent("masks must be binary".into()));
        }
        let layers = self.spec.weighted_layers().len();
        if self.scales.len() != layers {
            return Err(ContainerError::Inconsistent(format!(
                "{} scales for {layers} weighted layers",
                self.scales.len()
            )));
        }
        if self.scales.iter().any(|s| !s.is_finite()) {
            return Err(ContainerError::Inconsistent("scales must be finite".into()));
        }
        for shape in self.spec.weight_shapes() {
            if shape.iter().product::<usize>() > u32::MAX as usize {
                return Err(ContainerError::Inconsistent("layer exceeds 2^32 weights".into()));
            }
        }
        match &self.weights {
            WeightSource::Prototype { source, explicit } => {
                if source.resolve(&self.spec)? != *source {
                    return Err(ContainerError::Inconsistent(
                        "prototype vector length must be resolved".into(),
                    ));
                }
                if let Some(values) = explicit {
                    expand_payload(&self.spec, source.strategy, values.clone(), Some(self.scales.clone()))?;
                }
            }
            WeightSource::Trained { values, .. } => {
                let ones = self.masks.total_ones();
                if values.len() != ones {
                    return Err(ContainerError::Inconsistent(format!(
                        "{} stored values for {ones} kept weights",
                        values.len()
                    )));
                }
                if self.prototype_digest.is_some() {
                    return Err(ContainerError::Inconsistent(
                        "trained models carry no prototype digest".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Unique prototype values, regenerated from the seed when not stored.
    pub fn prototype_values(&self) -> Result<Option<Vec<f32>>, ContainerError> {
        match &self.weights {
            WeightSource::Prototype { explicit: Some(v), .. } => Ok(Some(v.clone())),
            WeightSource::Prototype { source, explicit: None } => {
                Ok(Some(fill(&self.spec, source)?.payload().to_vec()))
            }
            WeightSource::Trained { .. } => Ok(None),
        }
    }

    /// Checks the stored prototype digest against the values the model
    /// actually uses.
    pub fn verify_prototype(&self) -> Result<(), ContainerError> {
        if let Some(stored) = self.prototype_digest {
            let values = self.prototype_values()?.expect("digest only on prototype models");
            if digest(&values) != stored {
                return Err(ContainerError::PrototypeMismatch);
            }
        }
        Ok(())
    }

    /// Fixed (unmasked) weights, `raw * scale` per layer. Unkept positions of
    /// trained models are zero.
    pub fn weights(&self) -> Result<Vec<Tensor<f32>>, ContainerError> {
        match &self.weights {
            WeightSource::Prototype { source, .. } => {
                let values = self.prototype_values()?.expect("prototype model");
                Ok(expand_payload(&self.spec, source.strategy, values, Some(self.scales.clone()))?.effective())
            }
            WeightSource::Trained { values, .. } => {
                let mut it = values.iter();
                Ok(self
                    .masks
                    .layers
                    .iter()
                    .zip(&self.scales)
                    .map(|(m, &s)| {
                        let data = m
                            .data()
                            .iter()
                            .map(|&b| {
                                if b != 0.0 {
                                    *it.next().expect("validated count") * s
                                } else {
                                    0.0
                                }
                            })
                            .collect();
                        Tensor::new(m.shape().to_vec(), data).expect("mask shape")
                    })
                    .collect())
            }
        }
    }

    /// Logits of the masked network on `batch`.
    pub fn logits(&self, batch: &Tensor<f32>) -> Result<(Tensor<f32>, ForwardTrace<f32>), ContainerError> {
        let weights = self.weights()?;
        Ok(forward(&self.spec, &weights, &self.masks.layers, batch)?)
    }

    pub fn serialize(&self) -> Result<Vec<u8>, ContainerError> {
        self.validate()?;
        let layout = self.layout();
        let mut w = Writer(Vec::with_capacity(layout.total()));
        w.bytes(&MAGIC);
        w.u16(VERSION);
        w.u8(self.strategy_code());
        w.u8(self.flags());
        w.u64(self.seed());
        w.u64(self.d_v());
        w.u32(self.k.num());
        w.u32(self.k.den());
        w.u8(match self.init() {
            InitScheme::KaimingNormal => 0,
            InitScheme::KaimingUniform => 1,
        });
        let input = self.spec.input_shape();
        w.u8(input.len() as u8);
        for &d in input {
            w.u32(d as u32);
        }
        w.u32(self.spec.classes() as u32);
        w.u32(self.spec.layers().len() as u32);
        let mut weighted = 0;
        for layer in self.spec.layers() {
            let (kind, dims) = layer_record(layer);
            w.u8(kind);
            w.u8(dims.len() as u8);
            for d in dims {
                w.u32(d as u32);
            }
            if layer.is_weighted() {
                let (enc, payload) = &layout.masks[weighted];
                w.f32(self.scales[weighted]);
                w.u8(enc.tag());
                w.u64(payload.len() as u64);
                w.bytes(payload);
                weighted += 1;
            }
        }
        if let Some(values) = self.explicit_values() {
            w.u64(values.len() as u64);
            for &v in values {
                w.f32(v);
            }
        }
        if let Some(d) = self.prototype_digest {
            w.u32(d);
        }
        let crc = crc32fast::hash(&w.0);
        w.u32(crc);
        debug_assert_eq!(w.0.len(), layout.total());
        Ok(w.0)
    }

    fn layout(&self) -> Layout {
        let header = 4 + 2 + 1 + 1 + 8 + 8 + 4 + 4 + 1 + 1 + 4 * self.spec.input_shape().len() + 4 + 4;
        let mut records = 0;
        for layer in self.spec.layers() {
            records += 2 + 4 * layer_record(layer).1.len();
            if layer.is_weighted() {
                records += 1 + 8;
            }
        }
        Layout {
            header,
            records,
            scales: 4 * self.scales.len(),
            masks: self.masks.layers.iter().map(encode_mask).collect(),
            explicit: self.explicit_values().map(|v| v.len()),
            digest: self.prototype_digest.is_some(),
        }
    }

    /// Byte accounting of the serialized form. `total_bytes` equals the
    /// serialized length.
    pub fn storage_cost(&self) -> StorageReport {
        let layout = self.layout();
        let weight_bytes = match layout.explicit {
            Some(n) => 4 * n,
            None => 8,
        } + layout.scales;
        let mask_bytes: usize = layout.masks.iter().map(|(_, p)| p.len()).sum();
        let total_bytes = layout.total();
        let p = self.spec.parameter_count();
        let kept = self.masks.total_ones();
        let sparsity = if p == 0 { 0.0 } else { 1.0 - kept as f64 / p as f64 };
        let dense_bytes = 4 * p;
        StorageReport {
            parameters: p,
            kept,
            weight_bytes,
            mask_bytes,
            overhead_bytes: total_bytes - weight_bytes - mask_bytes,
            total_bytes,
            dense_bytes,
            conventional_bytes: conventional_cost(p, sparsity).total(),
            csr_exact_bytes: csr_exact_bytes(&self.masks),
            compression_ratio: 1.0 - total_bytes as f64 / dense_bytes as f64,
        }
    }
}

fn layer_record(layer: &LayerSpec) -> (u8, Vec<usize>) {
    match *layer {
        LayerSpec::Linear { in_dim, out_dim } => (0, vec![out_dim, in_dim]),
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel_h,
            kernel_w,
            stride,
            padding,
        } => (1, vec![out_channels, in_channels, kernel_h, kernel_w, stride, padding]),
        LayerSpec::Relu => (2, vec![]),
        LayerSpec::Flatten => (3, vec![]),
        LayerSpec::AvgPool2d { kernel } => (4, vec![kernel]),
    }
}

fn layer_from_record(kind: u8, dims: &[usize]) -> Result<LayerSpec, ContainerError> {
    let want = match kind {
        0 => 2,
        1 => 6,
        2 | 3 => 0,
        4 => 1,
        _ => return Err(ContainerError::Malformed(format!("unknown layer kind {kind}"))),
    };
    if dims.len() != want {
        return Err(ContainerError::Malformed(format!(
            "layer kind {kind} needs rank {want}, found {}",
            dims.len()
        )));
    }
    Ok(match kind {
        0 => LayerSpec::Linear {
            in_dim: dims[1],
            out_dim: dims[0],
        },
        1 => LayerSpec::Conv2d {
            out_channels: dims[0],
            in_channels: dims[1],
            kernel_h: dims[2],
            kernel_w: dims[3],
            stride: dims[4],
            padding: dims[5],
        },
        2 => LayerSpec::Relu,
        3 => LayerSpec::Flatten,
        _ => LayerSpec::AvgPool2d { kernel: dims[0] },
    })
}

struct Layout {
    header: usize,
    records: usize,
    scales: usize,
    masks: Vec<(MaskEncoding, Vec<u8>)>,
    explicit: Option<usize>,
    digest: bool,
}

impl Layout {
    fn total(&self) -> usize {
        self.header
            + self.records
            + self.scales
            + self.masks.iter().map(|(_, p)| p.len()).sum::<usize>()
            + self.explicit.map_or(0, |n| 8 + 4 * n)
            + if self.digest { 4 } else { 0 }
            + 4
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.bytes(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(ContainerError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N], ContainerError> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }
    fn u8(&mut self) -> Result<u8, ContainerError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, ContainerError> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64, ContainerError> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn f32(&mut self) -> Result<f32, ContainerError> {
        Ok(f32::from_le_bytes(self.array()?))
    }
    /// Bytes whose count comes from the stream; sizes beyond the buffer are
    /// reported as truncation.
    fn take_counted(&mut self, count: u64, width: usize) -> Result<&'a [u8], ContainerError> {
        let n = usize::try_from(count)
            .ok()
            .and_then(|c| c.checked_mul(width))
            .unwrap_or(usize::MAX);
        self.take(n)
    }
    fn dims(&mut self, rank: u8) -> Result<Vec<usize>, ContainerError> {
        (0..rank).map(|_| Ok(self.u32()? as usize)).collect()
    }
}

struct RawLayer<'a> {
    kind: u8,
    dims: Vec<usize>,
    weighted: Option<(f32, u8, &'a [u8])>,
}

/// Parses a container. Structure is read first (truncation and unknown layer
/// kinds fail here), then the checksum is verified, then the contents are
/// validated and, if a digest is present, the prototype is regenerated and
/// checked.
pub fn deserialize(bytes: &[u8]) -> Result<PemnModel, ContainerError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.array()?;
    if magic != MAGIC {
        return Err(ContainerError::BadMagic(magic));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(ContainerError::UnsupportedVersion(version));
    }
    let strategy = r.u8()?;
    let flags = r.u8()?;
    let seed = r.u64()?;
    let d_v = r.u64()?;
    let (k_num, k_den) = (r.u32()?, r.u32()?);
    let init = r.u8()?;
    let input_rank = r.u8()?;
    let input = r.dims(input_rank)?;
    let classes = r.u32()? as usize;
    let layer_count = r.u32()?;
    let mut raw_layers = Vec::new();
    for _ in 0..layer_count {
        let kind = r.u8()?;
        let rank = r.u8()?;
        let dims = r.dims(rank)?;
        let weighted = match kind {
            0 | 1 => {
                let scale = r.f32()?;
                let tag = r.u8()?;
                let len = r.u64()?;
                Some((scale, tag, r.take_counted(len, 1)?))
            }
            2..=4 => None,
            _ => return Err(ContainerError::Malformed(format!("unknown layer kind {kind}"))),
        };
        raw_layers.push(RawLayer { kind, dims, weighted });
    }
    let explicit = if flags & FLAG_EXPLICIT != 0 {
        let count = r.u64()?;
        let raw = r.take_counted(count, 4)?;
        Some(
            raw.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect::<Vec<_>>(),
        )
    } else {
        None
    };
    let stored_digest = if flags & FLAG_DIGEST != 0 { Some(r.u32()?) } else { None };
    let body_end = r.pos;
    let stored = r.u32()?;
    if r.pos != bytes.len() {
        return Err(ContainerError::Malformed(format!(
            "{} trailing bytes after checksum",
            bytes.len() - r.pos
        )));
    }
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(ContainerError::ChecksumMismatch { stored, computed });
    }

    if flags & !(FLAG_EXPLICIT | FLAG_DIGEST) != 0 {
        return Err(ContainerError::Malformed(format!("unknown flag bits {flags:#04x}")));
    }
    let init = match init {
        0 => InitScheme::KaimingNormal,
        1 => InitScheme::KaimingUniform,
        _ => return Err(ContainerError::Malformed(format!("unknown init scheme {init}"))),
    };
    let k = KeepRatio::new(k_num, k_den).map_err(|e| ContainerError::Malformed(e.to_string()))?;
    let layers = raw_layers
        .iter()
        .map(|l| layer_from_record(l.kind, &l.dims))
        .collect::<Result<Vec<_>, _>>()?;
    let spec = NetworkSpec::new(layers, input, classes)?;
    let mut scales = Vec::new();
    let mut masks = Vec::new();
    for (raw, shape) in raw_layers.iter().filter_map(|l| l.weighted).zip(spec.weight_shapes()) {
        let (scale, tag, payload) = raw;
        let enc = match tag {
            TAG_BITMAP => MaskEncoding::Bitmap,
            TAG_INDEX => MaskEncoding::IndexList,
            _ => return Err(ContainerError::Malformed(format!("unknown mask tag {tag}"))),
        };
        scales.push(scale);
        masks.push(decode_mask(enc, payload, shape)?);
    }
    let weights = if strategy == STRATEGY_TRAINED {
        if d_v != 0 {
            return Err(ContainerError::Malformed("trained model with a vector length".into()));
        }
        let values = explicit.ok_or_else(|| ContainerError::Malformed("trained model without stored values".into()))?;
        WeightSource::Trained { seed, init, values }
    } else {
        let strategy = match strategy {
            0 => Strategy::Dense,
            1 => Strategy::OneLayer,
            2 => Strategy::Mp,
            3 => Strategy::Rp,
            _ => return Err(ContainerError::Malformed(format!("unknown strategy code {strategy}"))),
        };
        let vector = match (strategy, d_v) {
            (Strategy::Rp, 0) => return Err(ContainerError::Malformed("rp model with d_v = 0".into())),
            (Strategy::Rp, n) => Some(VectorLength::Length(
                usize::try_from(n).map_err(|_| ContainerError::Malformed("d_v too large".into()))?,
            )),
            (_, 0) => None,
            (_, _) => return Err(ContainerError::Malformed("vector length on a non-rp model".into())),
        };
        WeightSource::Prototype {
            source: PrototypeSource {
                strategy,
                seed,
                vector,
                init,
            },
            explicit,
        }
    };
    let model = PemnModel {
        spec,
        weights,
        k,
        masks: MaskSet { layers: masks },
        scales,
        prototype_digest: stored_digest,
    };
    model.validate()?;
    model.verify_prototype()?;
    Ok(model)
}

/// Byte accounting for one model.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StorageReport {
    pub parameters: usize,
    pub kept: usize,
    /// `C_w`: stored values (or the 8-byte seed) plus per-layer scales.
    pub weight_bytes: usize,
    /// `C_m`: encoded mask payloads.
    pub mask_bytes: usize,
    pub overhead_bytes: usize,
    pub total_bytes: usize,
    /// Dense fp32 model, `4p`.
    pub dense_bytes: usize,
    /// Conventional sparse model at this model's sparsity.
    pub conventional_bytes: f64,
    /// Exact CSR size (f32 values, u32 column indices and row pointers).
    pub csr_exact_bytes: usize,
    pub compression_ratio: f64,
}

impl StorageReport {
    /// Sparsity a conventional model of the same size would need.
    pub fn equiv_ratio(&self) -> f64 {
        equiv_storage_ratio(self.total_bytes as f64, self.parameters)
    }
}

/// Modelled size of a conventional sparse model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConventionalCost {
    /// `4·p·(1-r)`.
    pub value_bytes: f64,
    /// `2·p·(1-r)` entries at 2 bytes each.
    pub index_bytes: f64,
}

impl ConventionalCost {
    pub fn total(&self) -> f64 {
        self.value_bytes + self.index_bytes
    }
}

/// Conventional sparse storage for `p` weights at sparsity `r`.
pub fn conventional_cost(p: usize, r: f64) -> ConventionalCost {
    let kept = p as f64 * (1.0 - r.clamp(0.0, 1.0));
    ConventionalCost {
        value_bytes: 4.0 * kept,
        index_bytes: 2.0 * 2.0 * kept,
    }
}

/// Sparsity `r` at which a conventional model of `p` weights costs `total`
/// bytes. At or above the dense size `4p` nothing is gained by sparsifying, so
/// the ratio is 0.
pub fn equiv_storage_ratio(total: f64, p: usize) -> f64 {
    let p = p as f64;
    if p == 0.0 || total >= 4.0 * p {
        return 0.0;
    }
    (1.0 - total / (8.0 * p)).max(0.0)
}

/// Sparsity a conventional model needs to sit at `target` on the equivalent
/// ratio axis. Targets strictly between 0 and 0.5 have no preimage (the
/// conventional model is larger than dense there) and 1 or more means no
/// weights at all.
pub fn sparsity_for_equiv_ratio(target: f64) -> Option<f64> {
    if target == 0.0 {
        Some(0.0)
    } else if (0.5..1.0).contains(&target) {
        Some(target)
    } else {
        None
    }
}

/// Exact CSR bytes for the kept weights, each layer viewed as a
/// `out x (in·kh·kw)` matrix.
pub fn csr_exact_bytes<T: Scalar>(masks: &MaskSet<T>) -> usize {
    masks
        .layers
        .iter()
        .map(|m| {
            let rows = m.shape()[0];
            let nnz = m.data().iter().filter(|v| **v != T::zero()).count();
            4 * nnz + 4 * nnz + 4 * (rows + 1)
        })
        .sum()
}
