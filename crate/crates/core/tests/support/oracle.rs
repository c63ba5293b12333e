//! Plain f64 reference implementations, written without reference to the
//! engine's kernels.

use pemn_core::gradcore::{LayerSpec, NetworkSpec};
use pemn_core::protogen::{rng_stream, InitScheme};

/// Per-sample forward pass. Returns the logits of every sample and the
/// smallest |pre-activation| seen at any ReLU. Pre-activations whose inputs
/// are all zero stay zero under any perturbation and are not counted.
pub fn forward(spec: &NetworkSpec, eff: &[Vec<f64>], x: &[f64], batch: usize) -> (Vec<Vec<f64>>, f64) {
    let per: usize = spec.input_shape().iter().product();
    let mut closest = f64::INFINITY;
    let mut logits = Vec::with_capacity(batch);
    for b in 0..batch {
        let mut shape = spec.input_shape().to_vec();
        let mut a = x[b * per..(b + 1) * per].to_vec();
        let mut w_at = 0;
        let mut live = vec![true; per];
        for layer in spec.layers() {
            match *layer {
                LayerSpec::Linear { in_dim, out_dim } => {
                    let w = &eff[w_at];
                    w_at += 1;
                    let any = a.iter().any(|&v| v != 0.0);
                    live = vec![any; out_dim];
                    a = (0..out_dim)
                        .map(|o| (0..in_dim).map(|i| w[o * in_dim + i] * a[i]).sum())
                        .collect();
                    shape = vec![out_dim];
                }
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel_h,
                    kernel_w,
                    stride,
                    padding,
                } => {
                    let w = &eff[w_at];
                    w_at += 1;
                    let (h, wd) = (shape[1] as isize, shape[2] as isize);
                    let oh = (shape[1] + 2 * padding - kernel_h) / stride + 1;
                    let ow = (shape[2] + 2 * padding - kernel_w) / stride + 1;
                    let mut out = vec![0.0; out_channels * oh * ow];
                    live = vec![false; out_channels * oh * ow];
                    for o in 0..out_channels {
                        for y in 0..oh {
                            for xx in 0..ow {
                                let mut acc = 0.0;
                                for i in 0..in_channels {
                                    for ky in 0..kernel_h {
                                        for kx in 0..kernel_w {
                                            let iy = (y * stride + ky) as isize - padding as isize;
                                            let ix = (xx * stride + kx) as isize - padding as isize;
                                            if iy < 0 || ix < 0 || iy >= h || ix >= wd {
                                                continue;
                                            }
                                            let wv = w[((o * in_channels + i) * kernel_h + ky) * kernel_w + kx];
                                            let av = a[(i * shape[1] + iy as usize) * shape[2] + ix as usize];
                                            live[(o * oh + y) * ow + xx] |= av != 0.0;
                                            acc += wv * av;
                                        }
                                    }
                                }
                                out[(o * oh + y) * ow + xx] = acc;
                            }
                        }
                    }
                    a = out;
                    shape = vec![out_channels, oh, ow];
                }
                LayerSpec::Relu => {
                    for (v, &l) in a.iter_mut().zip(&live) {
                        if l {
                            closest = closest.min(v.abs());
                        }
                        *v = v.max(0.0);
                    }
                }
                LayerSpec::Flatten => shape = vec![a.len()],
                LayerSpec::AvgPool2d { kernel } => {
                    let (c, h, w) = (shape[0], shape[1], shape[2]);
                    let (oh, ow) = (h / kernel, w / kernel);
                    let mut out = vec![0.0; c * oh * ow];
                    for ch in 0..c {
                        for y in 0..oh {
                            for xx in 0..ow {
                                let mut s = 0.0;
                                for dy in 0..kernel {
                                    for dx in 0..kernel {
                                        s += a[(ch * h + y * kernel + dy) * w + xx * kernel + dx];
                                    }
                                }
                                out[(ch * oh + y) * ow + xx] = s / (kernel * kernel) as f64;
                            }
                        }
                    }
                    a = out;
                    shape = vec![c, oh, ow];
                }
            }
        }
        logits.push(a);
    }
    (logits, closest)
}

/// Mean softmax cross-entropy.
pub fn cross_entropy(logits: &[Vec<f64>], labels: &[usize]) -> f64 {
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(z, &y)| {
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - z[y]
        })
        .sum();
    total / labels.len() as f64
}

/// Loss of the network whose weights are `w ⊙ m`.
pub fn masked_loss(spec: &NetworkSpec, w: &[Vec<f64>], m: &[Vec<f64>], x: &[f64], labels: &[usize]) -> f64 {
    let eff: Vec<Vec<f64>> = w
        .iter()
        .zip(m)
        .map(|(a, b)| a.iter().zip(b).map(|(p, q)| p * q).collect())
        .collect();
    cross_entropy(&forward(spec, &eff, x, labels.len()).0, labels)
}

fn unit(init: InitScheme, seed: u64, stream: usize, n: usize) -> Vec<f64> {
    let mut rng = rng_stream(seed, stream as u64);
    (0..n)
        .map(|_| match init {
            InitScheme::KaimingNormal => rng.normal() as f32 as f64,
            InitScheme::KaimingUniform => ((2.0 * rng.uniform() - 1.0) * 3f64.sqrt()) as f32 as f64,
        })
        .collect()
}

fn fan_in(shape: &[usize]) -> usize {
    shape[1..].iter().product()
}

fn std_of(shape: &[usize]) -> f32 {
    (2.0 / fan_in(shape) as f64).sqrt() as f32
}

fn weighted(spec: &NetworkSpec) -> Vec<(&'static str, Vec<usize>)> {
    spec.layers()
        .iter()
        .filter_map(|l| l.weight_shape().map(|s| (l.name(), s)))
        .collect()
}

fn largest(shapes: &[(&'static str, Vec<usize>)]) -> usize {
    let sizes: Vec<usize> = shapes.iter().map(|(_, s)| s.iter().product()).collect();
    let mut best = 0;
    for i in 1..sizes.len() {
        if sizes[i] > sizes[best] {
            best = i;
        }
    }
    best
}

/// Effective weights under one-layer sharing: each layer copies the first
/// earlier layer of identical kind and shape.
pub fn one_layer(spec: &NetworkSpec, seed: u64, init: InitScheme) -> Vec<Vec<f32>> {
    let shapes = weighted(spec);
    (0..shapes.len())
        .map(|i| {
            let src = (0..=i).find(|&j| shapes[j] == shapes[i]).unwrap();
            let n: usize = shapes[src].1.iter().product();
            let s = std_of(&shapes[src].1);
            unit(init, seed, src, n).into_iter().map(|v| v as f32 * s).collect()
        })
        .collect()
}

/// Effective weights under max-layer padding: prefix slices of the largest
/// layer's draw, rescaled per layer.
pub fn max_layer_padding(spec: &NetworkSpec, seed: u64, init: InitScheme) -> Vec<Vec<f32>> {
    let shapes = weighted(spec);
    let m = largest(&shapes);
    let d_m: usize = shapes[m].1.iter().product();
    let v = unit(init, seed, m, d_m);
    shapes
        .iter()
        .map(|(_, s)| {
            let n: usize = s.iter().product();
            let scale = std_of(s);
            (0..n).map(|i| v[i] as f32 * scale).collect()
        })
        .collect()
}

/// Effective weights under random-vector padding: the vector repeated
/// end to end, rescaled per layer.
pub fn random_vector_padding(spec: &NetworkSpec, seed: u64, d_v: usize, init: InitScheme) -> Vec<Vec<f32>> {
    let shapes = weighted(spec);
    let m = largest(&shapes);
    let v = unit(init, seed, m, d_v);
    shapes
        .iter()
        .map(|(_, s)| {
            let n: usize = s.iter().product();
            let scale = std_of(s);
            (0..n).map(|i| v[i % d_v] as f32 * scale).collect()
        })
        .collect()
}
