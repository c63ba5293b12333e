//! Randomized property suites shared by the integration tests and the
//! acceptance runner. Each returns a one-line summary on success and the
//! first violation on failure.

use pemn_core::container::{deserialize, PemnModel};
use pemn_core::gradcore::{backward_scores, backward_weights, cross_entropy, forward, LayerSpec, NetworkSpec};
use pemn_core::protogen::{fill, rng_stream, InitScheme, PrototypeSource, RngStream, Strategy};
use pemn_core::select::{make_mask, KeepRatio, MaskSet};
use pemn_core::ContainerError;
use pemn_core::Tensor;

use super::oracle;

pub type SuiteResult = Result<String, String>;

pub struct Gen(RngStream);

impl Gen {
    pub fn new(seed: u64) -> Self {
        Gen(rng_stream(seed, 7 << 40))
    }

    pub fn range(&mut self, lo: usize, hi: usize) -> usize {
        lo + self.0.below(hi - lo + 1)
    }

    pub fn coin(&mut self) -> bool {
        self.0.below(2) == 1
    }

    pub fn normal(&mut self) -> f64 {
        self.0.normal()
    }

    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    pub fn pick<T: Copy>(&mut self, items: &[T]) -> T {
        items[self.0.below(items.len())]
    }
}

/// MLP with 1 to 3 linear layers drawn from a small set of widths, so that
/// shapes repeat.
pub fn random_mlp(g: &mut Gen, widths: &[usize]) -> NetworkSpec {
    let depth = g.range(2, 4);
    let dims: Vec<usize> = (0..depth).map(|_| g.pick(widths)).collect();
    NetworkSpec::mlp(&dims).unwrap()
}

/// conv → relu → [conv → relu] → [avgpool] → flatten → linear.
pub fn random_conv(g: &mut Gen) -> NetworkSpec {
    let c = g.range(1, 2);
    let side = g.range(3, 5);
    let mut layers = Vec::new();
    let mut shape = vec![c, side, side];
    for _ in 0..g.range(1, 2) {
        // Windows must see enough real inputs that a half mask rarely
        // silences one, so padding only goes with 3x3 kernels.
        let k = g.range(2, 3);
        let stride = g.range(1, 2);
        let pad = if k == 3 { g.range(0, 1) } else { 0 };
        let out = g.range(1, 3);
        let conv = LayerSpec::conv2d(shape[0], out, k, stride, pad);
        let Ok(next) = conv.output_shape(&shape) else { continue };
        layers.push(conv);
        layers.push(LayerSpec::Relu);
        shape = next;
    }
    if shape[1] >= 2 && g.coin() {
        let pool = LayerSpec::AvgPool2d { kernel: 2 };
        shape = pool.output_shape(&shape).unwrap();
        layers.push(pool);
    }
    layers.push(LayerSpec::Flatten);
    let classes = g.range(2, 4);
    layers.push(LayerSpec::linear(shape.iter().product(), classes));
    NetworkSpec::new(layers, vec![c, side, side], classes).unwrap()
}

fn tensors_f64(spec: &NetworkSpec, values: &[Vec<f64>]) -> Vec<Tensor<f64>> {
    spec.weight_shapes()
        .into_iter()
        .zip(values)
        .map(|(s, v)| Tensor::from_f64(s, v).unwrap())
        .collect()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Straight-through score gradients and masked weight gradients against
/// central differences of an independent f64 forward pass.
pub fn gradient_suite(nets: usize, seed: u64) -> SuiteResult {
    let mut g = Gen::new(seed);
    let eps = 1e-6;
    let (mut worst_s, mut worst_w) = (0.0f64, 0.0f64);
    let mut params = 0;
    for n in 0..nets {
        let spec = if n % 2 == 0 {
            random_mlp(&mut g, &[3, 5, 8])
        } else {
            random_conv(&mut g)
        };
        if spec.parameter_count() > 5000 {
            return Err(format!("net {n} has {} parameters", spec.parameter_count()));
        }
        params += spec.parameter_count();
        let per: usize = spec.input_shape().iter().product();
        let batch = 3;
        let counts = spec.weight_counts();
        // Resample until no pre-activation sits near a ReLU kink.
        let (w, m, x, labels) = (0..1000)
            .find_map(|_| {
                let w: Vec<Vec<f64>> = counts.iter().map(|&d| g.normals(d)).collect();
                let scores = tensors_f64(&spec, &counts.iter().map(|&d| g.normals(d)).collect::<Vec<_>>());
                let m: Vec<Vec<f64>> = make_mask(&scores, KeepRatio::HALF)
                    .layers
                    .iter()
                    .map(|t| t.data().to_vec())
                    .collect();
                let x = g.normals(batch * per);
                let labels: Vec<usize> = (0..batch).map(|_| g.range(0, spec.classes() - 1)).collect();
                let eff: Vec<Vec<f64>> = w
                    .iter()
                    .zip(&m)
                    .map(|(a, b)| a.iter().zip(b).map(|(p, q)| p * q).collect())
                    .collect();
                let (_, closest) = oracle::forward(&spec, &eff, &x, batch);
                (closest > 1e-4).then_some((w, m, x, labels))
            })
            .ok_or_else(|| format!("net {n} {:?}: could not avoid ReLU kinks", spec.weight_shapes()))?;

        let wt = tensors_f64(&spec, &w);
        let mt = tensors_f64(&spec, &m);
        let xt = Tensor::from_f64([vec![batch], spec.input_shape().to_vec()].concat(), &x).unwrap();
        let (logits, trace) = forward(&spec, &wt, &mt, &xt).map_err(|e| e.to_string())?;
        let (loss, grad) = cross_entropy(&logits, &labels).map_err(|e| e.to_string())?;
        let oracle_loss = oracle::masked_loss(&spec, &w, &m, &x, &labels);
        if rel_err(loss, oracle_loss) > 1e-10 {
            return Err(format!("net {n}: loss {loss} vs oracle {oracle_loss}"));
        }
        let gs = backward_scores(&spec, &wt, &mt, &trace, &grad).map_err(|e| e.to_string())?;
        let gw = backward_weights(&spec, &wt, &mt, &trace, &grad).map_err(|e| e.to_string())?;
        for l in 0..w.len() {
            for i in 0..w[l].len() {
                let mut mp = m.clone();
                let mut mm = m.clone();
                mp[l][i] += eps;
                mm[l][i] -= eps;
                let fd = (oracle::masked_loss(&spec, &w, &mp, &x, &labels)
                    - oracle::masked_loss(&spec, &w, &mm, &x, &labels))
                    / (2.0 * eps);
                let e = rel_err(gs[l].data()[i], fd);
                worst_s = worst_s.max(e);
                if e > 1e-5 {
                    return Err(format!(
                        "net {n} layer {l} index {i}: score grad {} vs fd {fd}",
                        gs[l].data()[i]
                    ));
                }

                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[l][i] += eps;
                wm[l][i] -= eps;
                let fd = (oracle::masked_loss(&spec, &wp, &m, &x, &labels)
                    - oracle::masked_loss(&spec, &wm, &m, &x, &labels))
                    / (2.0 * eps);
                let e = rel_err(gw[l].data()[i], fd);
                worst_w = worst_w.max(e);
                if e > 1e-5 {
                    return Err(format!(
                        "net {n} layer {l} index {i}: weight grad {} vs fd {fd}",
                        gw[l].data()[i]
                    ));
                }
            }
        }
    }
    Ok(format!(
        "{nets} nets, {params} parameters; max rel err scores {worst_s:.2e}, weights {worst_w:.2e}"
    ))
}

fn same_bits(a: &[Tensor<f32>], b: &[Vec<f32>]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(t, v)| t.len() == v.len() && t.data().iter().zip(v).all(|(x, y)| x.to_bits() == y.to_bits()))
}

/// one_layer / mp / rp fills against brute-force references.
pub fn padding_suite(lists: usize, seed: u64) -> SuiteResult {
    let mut g = Gen::new(seed);
    let init_of = |g: &mut Gen| {
        if g.coin() {
            InitScheme::KaimingNormal
        } else {
            InitScheme::KaimingUniform
        }
    };

    let shared_net = NetworkSpec::mlp(&[512, 100, 100, 100, 10]).unwrap();
    let src = PrototypeSource::new(Strategy::OneLayer, 11, InitScheme::KaimingNormal);
    let w = fill(&shared_net, &src).map_err(|e| e.to_string())?.effective();
    if w[2] != w[1] {
        return Err("[512,100,100,100,10]: w3 != w2".into());
    }
    if w[3] == w[1] || w[2].shape() != [100, 100] {
        return Err("[512,100,100,100,10]: unexpected sharing".into());
    }
    if !same_bits(&w, &oracle::one_layer(&shared_net, 11, InitScheme::KaimingNormal)) {
        return Err("[512,100,100,100,10]: one_layer differs from reference".into());
    }

    let mut checked = 0;
    for n in 0..lists {
        let spec = if n % 3 == 2 {
            random_conv(&mut g)
        } else {
            random_mlp(&mut g, &[3, 4, 7, 12])
        };
        let seed = g.range(0, 1 << 20) as u64;
        let init = init_of(&mut g);
        let d_m = *spec.weight_counts().iter().max().unwrap();
        let d_v = g.range(1, d_m + 5);
        let cases = [
            (
                "one_layer",
                PrototypeSource::new(Strategy::OneLayer, seed, init),
                oracle::one_layer(&spec, seed, init),
            ),
            (
                "mp",
                PrototypeSource::new(Strategy::Mp, seed, init),
                oracle::max_layer_padding(&spec, seed, init),
            ),
            (
                "rp",
                PrototypeSource::rp_len(seed, d_v, init),
                oracle::random_vector_padding(&spec, seed, d_v, init),
            ),
        ];
        for (name, src, want) in cases {
            let got = fill(&spec, &src).map_err(|e| e.to_string())?.effective();
            if !same_bits(&got, &want) {
                return Err(format!(
                    "list {n} ({:?}): {name} differs from reference",
                    spec.weight_shapes()
                ));
            }
            checked += 1;
        }
    }
    Ok(format!(
        "{lists} shape lists, {checked} fills equal their references; w3 == w2 on [512,100,100,100,10]"
    ))
}

/// A random valid model: prototype or trained weights, random K, optional
/// explicit values and digest.
pub fn random_model(g: &mut Gen) -> PemnModel {
    let spec = if g.coin() {
        random_mlp(g, &[2, 5, 9, 16, 33])
    } else {
        random_conv(g)
    };
    let den = g.range(1, 9) as u32;
    let k = KeepRatio::new(g.range(1, den as usize) as u32, den).unwrap();
    let seed = g.range(0, 1 << 30) as u64;
    let init = if g.coin() {
        InitScheme::KaimingNormal
    } else {
        InitScheme::KaimingUniform
    };
    let scores: Vec<Tensor<f32>> = spec
        .weight_shapes()
        .into_iter()
        .map(|s| {
            let n = s.iter().product();
            Tensor::from_f64(s, &g.normals(n)).unwrap()
        })
        .collect();
    let masks = make_mask(&scores, k);
    match g.range(0, 4) {
        4 => {
            let w: Vec<Tensor<f32>> = scores.iter().map(|s| s.hadamard(s).unwrap()).collect();
            let masks = MaskSet {
                layers: scores
                    .iter()
                    .enumerate()
                    .map(|(l, s)| {
                        // The first weight always survives so the model keeps something.
                        let data = s
                            .data()
                            .iter()
                            .enumerate()
                            .map(|(i, &v)| if v > 0.8 || (l, i) == (0, 0) { 1.0 } else { 0.0 })
                            .collect();
                        Tensor::new(s.shape().to_vec(), data).unwrap()
                    })
                    .collect(),
            };
            PemnModel::from_trained(&spec, seed, init, &w, masks).unwrap()
        }
        choice => {
            let strategy = [Strategy::Dense, Strategy::OneLayer, Strategy::Mp, Strategy::Rp][choice];
            let src = match strategy {
                Strategy::Rp => PrototypeSource::rp_len(seed, g.range(1, 40), init),
                s => PrototypeSource::new(s, seed, init),
            };
            let filled = fill(&spec, &src).unwrap();
            let mut model = PemnModel::from_prototype(&spec, &src, &filled, k, masks).unwrap();
            if g.coin() {
                model.prototype_digest = None;
            }
            if g.coin() {
                model = model.with_explicit_prototype(filled.payload().to_vec()).unwrap();
            }
            model
        }
    }
}

fn bits(t: &Tensor<f32>) -> Vec<u32> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

/// Round trips, restored logits, size law, truncation at every cut point and
/// single-byte corruption.
pub fn codec_suite(models: usize, seed: u64) -> SuiteResult {
    let mut g = Gen::new(seed);
    let mut bytes_total = 0;
    for n in 0..models {
        let model = random_model(&mut g);
        let bytes = model.serialize().map_err(|e| format!("model {n}: {e}"))?;
        bytes_total += bytes.len();
        let report = model.storage_cost();
        if bytes.len() != report.total_bytes {
            return Err(format!(
                "model {n}: {} bytes, report says {}",
                bytes.len(),
                report.total_bytes
            ));
        }
        if report.total_bytes != report.weight_bytes + report.mask_bytes + report.overhead_bytes {
            return Err(format!("model {n}: report parts do not add up"));
        }
        let back = deserialize(&bytes).map_err(|e| format!("model {n}: {e}"))?;
        if back != model {
            return Err(format!("model {n}: round trip changed the model"));
        }
        let per: usize = model.spec.input_shape().iter().product();
        let x = Tensor::from_f64(
            [vec![4], model.spec.input_shape().to_vec()].concat(),
            &g.normals(4 * per),
        )
        .unwrap();
        let (a, _) = model.logits(&x).map_err(|e| e.to_string())?;
        let (b, _) = back.logits(&x).map_err(|e| e.to_string())?;
        if bits(&a) != bits(&b) {
            return Err(format!("model {n}: restored logits differ"));
        }
    }

    let fixture = loop {
        let m = random_model(&mut g);
        if m.spec.weighted_layers().len() >= 2 {
            break m;
        }
    };
    let bytes = fixture.serialize().unwrap();
    for cut in 0..bytes.len() {
        match std::panic::catch_unwind(|| deserialize(&bytes[..cut])) {
            Ok(Err(ContainerError::Truncated { .. })) => {}
            Ok(other) => return Err(format!("cut at {cut}: expected truncation, got {other:?}")),
            Err(_) => return Err(format!("cut at {cut}: panicked")),
        }
    }
    for at in 0..bytes.len() {
        let mut b = bytes.clone();
        b[at] ^= 0x5a;
        match std::panic::catch_unwind(|| deserialize(&b)) {
            Ok(Err(_)) => {}
            Ok(Ok(_)) => return Err(format!("flip at {at}: accepted")),
            Err(_) => return Err(format!("flip at {at}: panicked")),
        }
    }
    Ok(format!(
        "{models} models round-trip ({bytes_total} bytes); {} truncations and byte flips all rejected",
        bytes.len()
    ))
}

/// Cardinality `max(1, ⌊K·d⌋)`, agreement with a sort-based top-K (ties to
/// the lower index) and invariance under `x³` and `eˣ`.
pub fn mask_suite(cases: usize, seed: u64) -> SuiteResult {
    let mut g = Gen::new(seed);
    let mut layers = 0;
    for n in 0..cases {
        let den = g.range(1, 16) as u32;
        let k = KeepRatio::new(g.range(1, den as usize) as u32, den).unwrap();
        let ties = g.coin();
        let scores: Vec<Tensor<f64>> = (0..g.range(1, 4))
            .map(|_| {
                let d = g.range(1, 600);
                let v: Vec<f64> = (0..d)
                    .map(|_| if ties { g.range(0, 5) as f64 } else { g.normal() })
                    .collect();
                Tensor::from_f64(vec![d], &v).unwrap()
            })
            .collect();
        layers += scores.len();
        let mask = make_mask(&scores, k);
        for (s, m) in scores.iter().zip(&mask.layers) {
            let d = s.len();
            let want = ((d as u64 * k.num() as u64 / k.den() as u64) as usize).max(1);
            let ones = m.data().iter().filter(|&&v| v == 1.0).count();
            if ones != want || m.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(format!(
                    "case {n}: {ones} ones in a layer of {d} at K={}/{}",
                    k.num(),
                    k.den()
                ));
            }
            let mut order: Vec<usize> = (0..d).collect();
            order.sort_by(|&a, &b| s.data()[b].partial_cmp(&s.data()[a]).unwrap().then(a.cmp(&b)));
            let mut expect = vec![0.0; d];
            for &i in &order[..want] {
                expect[i] = 1.0;
            }
            if m.data() != expect.as_slice() {
                return Err(format!("case {n}: mask differs from sorted top-K"));
            }
        }
        if !ties {
            for (name, f) in [("x^3", (|x: f64| x * x * x) as fn(f64) -> f64), ("e^x", f64::exp)] {
                let moved: Vec<Tensor<f64>> = scores
                    .iter()
                    .map(|s| Tensor::new(s.shape().to_vec(), s.data().iter().map(|&v| f(v)).collect()).unwrap())
                    .collect();
                if make_mask(&moved, k) != mask {
                    return Err(format!("case {n}: mask changed under {name}"));
                }
            }
        }
    }
    Ok(format!(
        "{cases} cases, {layers} layers: exact cardinality, sorted top-K, invariant under x^3 and e^x"
    ))
}
