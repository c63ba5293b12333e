use super::*;
use crate::tensor::Tensor;

fn t32(shape: &[usize], v: &[f64]) -> Tensor<f32> {
    Tensor::from_f64(shape.to_vec(), v).unwrap()
}

fn t64(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape.to_vec(), v).unwrap()
}

fn lcg(seed: &mut u64) -> f64 {
    *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
}

fn random(shape: &[usize], seed: &mut u64) -> Tensor<f32> {
    let n = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| lcg(seed)).collect();
    t32(shape, &v)
}

#[test]
fn identity_weights_pass_input_through() {
    let net = NetworkSpec::mlp(&[2, 2]).unwrap();
    let w = t32(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
    let ones = t32(&[2, 2], &[1.0; 4]);
    let (logits, _) = forward(&net, &[w], &[ones], &t32(&[1, 2], &[3.0, -1.0])).unwrap();
    assert_eq!(logits.data(), &[3.0, -1.0]);
}

#[test]
fn zero_mask_annihilates_output() {
    let net = NetworkSpec::mlp(&[2, 2]).unwrap();
    let w = t32(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
    let zeros = t32(&[2, 2], &[0.0; 4]);
    let (logits, _) = forward(&net, &[w], &[zeros], &t32(&[1, 2], &[3.0, -1.0])).unwrap();
    assert_eq!(logits.data(), &[0.0, 0.0]);
}

#[test]
fn masked_dot_product() {
    let net = NetworkSpec::mlp(&[2, 1]).unwrap();
    let w = t32(&[1, 2], &[0.5, 2.0]);
    let m = t32(&[1, 2], &[1.0, 0.0]);
    let (logits, _) = forward(&net, &[w], &[m], &t32(&[1, 2], &[4.0, 7.0])).unwrap();
    assert_eq!(logits.data(), &[2.0]);
}

#[test]
fn single_weight_chain_rule() {
    let net = NetworkSpec::mlp(&[1, 1]).unwrap();
    let w = [t64(&[1, 1], &[2.0])];
    let m = [t64(&[1, 1], &[1.0])];
    let (_, trace) = forward(&net, &w, &m, &t64(&[1, 1], &[3.0])).unwrap();
    for g in [1.0, -0.25, 7.5] {
        let gl = t64(&[1, 1], &[g]);
        let s = backward_scores(&net, &w, &m, &trace, &gl).unwrap();
        let wg = backward_weights(&net, &w, &m, &trace, &gl).unwrap();
        assert_eq!(s[0].data(), &[6.0 * g]);
        assert_eq!(wg[0].data(), &[3.0 * g]);
    }
}

#[test]
fn zero_downstream_gradient_gives_zero_grads() {
    let net = NetworkSpec::mlp(&[3, 4, 2]).unwrap();
    let mut seed = 3;
    let ws = vec![random(&[4, 3], &mut seed), random(&[2, 4], &mut seed)];
    let ms = vec![t32(&[4, 3], &[1.0; 12]), t32(&[2, 4], &[1.0; 8])];
    let (_, trace) = forward(&net, &ws, &ms, &random(&[5, 3], &mut seed)).unwrap();
    let zero = Tensor::zeros(vec![5, 2]).unwrap();
    for g in backward_scores(&net, &ws, &ms, &trace, &zero).unwrap() {
        assert!(g.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn zero_mask_gives_zero_weight_grads() {
    let net = NetworkSpec::mlp(&[3, 4, 2]).unwrap();
    let mut seed = 11;
    let ws = vec![random(&[4, 3], &mut seed), random(&[2, 4], &mut seed)];
    let ms = vec![Tensor::zeros(vec![4, 3]).unwrap(), Tensor::zeros(vec![2, 4]).unwrap()];
    let (logits, trace) = forward(&net, &ws, &ms, &random(&[5, 3], &mut seed)).unwrap();
    let (_, gl) = cross_entropy(&logits, &[0, 1, 0, 1, 1]).unwrap();
    for g in backward_weights(&net, &ws, &ms, &trace, &gl).unwrap() {
        assert!(g.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn all_ones_mask_is_bit_identical_to_dense() {
    let net = NetworkSpec::mlp(&[6, 8, 8, 3]).unwrap();
    let mut seed = 5;
    let ws: Vec<_> = net.weight_shapes().iter().map(|s| random(s, &mut seed)).collect();
    let ones: Vec<_> = net
        .weight_shapes()
        .into_iter()
        .map(|s| Tensor::full(s, 1.0).unwrap())
        .collect();
    let x = random(&[7, 6], &mut seed);
    let (masked, _) = forward(&net, &ws, &ones, &x).unwrap();
    let dense_eff = ws.iter().map(|w| w.data().to_vec()).collect();
    let (dense, _) = forward_effective(&net, dense_eff, &x).unwrap();
    assert_eq!(masked.data(), dense.data());
    let (again, _) = forward(&net, &ws, &ones, &x).unwrap();
    assert_eq!(masked, again);
}

#[test]
fn shape_errors_name_the_layer() {
    let net = NetworkSpec::mlp(&[3, 4, 2]).unwrap();
    let ws = vec![
        Tensor::<f32>::zeros(vec![4, 3]).unwrap(),
        Tensor::zeros(vec![4, 2]).unwrap(),
    ];
    let ms = ws.clone();
    let err = forward(&net, &ws, &ms, &Tensor::zeros(vec![1, 3]).unwrap()).unwrap_err();
    assert!(
        matches!(err, crate::error::NetError::LayerShape { layer: 2, .. }),
        "{err}"
    );
    let ws = vec![
        Tensor::<f32>::zeros(vec![4, 3]).unwrap(),
        Tensor::zeros(vec![2, 4]).unwrap(),
    ];
    let err = forward(&net, &ws, &ws, &Tensor::zeros(vec![1, 4]).unwrap()).unwrap_err();
    assert!(matches!(err, crate::error::NetError::BatchShape { .. }));
}

#[test]
fn trace_from_other_network_is_rejected() {
    let a = NetworkSpec::mlp(&[3, 4, 2]).unwrap();
    let b = NetworkSpec::mlp(&[3, 2]).unwrap();
    let ws = vec![Tensor::<f32>::full(vec![2, 3], 0.5).unwrap()];
    let (_, trace) = forward(&b, &ws, &ws, &Tensor::full(vec![2, 3], 1.0).unwrap()).unwrap();
    let wa = vec![
        Tensor::<f32>::zeros(vec![4, 3]).unwrap(),
        Tensor::zeros(vec![2, 4]).unwrap(),
    ];
    let gl = Tensor::zeros(vec![2, 2]).unwrap();
    assert!(matches!(
        backward_scores(&a, &wa, &wa, &trace, &gl),
        Err(crate::error::NetError::TraceMismatch(_))
    ));
}

/// Six nested loops, bounds-checked taps, `(ic, ky, kx)` accumulation order.
#[allow(clippy::too_many_arguments)]
fn naive_conv(
    x: &[f32],
    w: &[f32],
    c: usize,
    h: usize,
    wd: usize,
    oc: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Vec<f32> {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0f32; oc * oh * ow];
    for o in 0..oc {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0f32;
                for ic in 0..c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                continue;
                            }
                            acc += x[(ic * h + iy as usize) * wd + ix as usize] * w[((o * c + ic) * k + ky) * k + kx];
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
    out
}

#[test]
fn conv_matches_naive_reference_exactly() {
    let mut seed = 99;
    for (stride, pad) in [(1, 0), (1, 1), (2, 1), (2, 0)] {
        let oc = 3;
        let layers = vec![LayerSpec::conv2d(2, oc, 3, stride, pad), LayerSpec::Flatten];
        let out_hw = (5 + 2 * pad - 3) / stride + 1;
        let classes = oc * out_hw * out_hw;
        let net = NetworkSpec::new(layers, vec![2, 5, 5], classes).unwrap();
        let w = random(&[oc, 2, 3, 3], &mut seed);
        let x = random(&[1, 2, 5, 5], &mut seed);
        let ones = Tensor::full(vec![oc, 2, 3, 3], 1.0).unwrap();
        let (y, _) = forward(&net, std::slice::from_ref(&w), &[ones], &x).unwrap();
        let want = naive_conv(x.data(), w.data(), 2, 5, 5, oc, 3, stride, pad);
        assert_eq!(y.data(), want.as_slice(), "stride {stride} pad {pad}");
    }
}

#[test]
fn avgpool_averages_windows() {
    let net = NetworkSpec::new(
        vec![LayerSpec::AvgPool2d { kernel: 2 }, LayerSpec::Flatten],
        vec![1, 2, 4],
        2,
    )
    .unwrap();
    let x = t32(&[1, 1, 2, 4], &[1.0, 3.0, 5.0, 7.0, 1.0, 3.0, 5.0, 7.0]);
    let (y, _) = forward::<f32>(&net, &[], &[], &x).unwrap();
    assert_eq!(y.data(), &[2.0, 6.0]);
}

#[test]
fn prediction_and_accuracy() {
    let net = NetworkSpec::mlp(&[2, 2]).unwrap();
    let w = t32(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
    let m = t32(&[2, 2], &[1.0; 4]);
    let x = t32(&[3, 2], &[1.0, 0.0, 0.0, 1.0, 2.0, 2.0]);
    let (w, m) = ([w], [m]);
    assert_eq!(predict(&net, &w, &m, &x, 2).unwrap(), vec![0, 1, 0]);
    let acc = accuracy(&net, &w, &m, &x, &[0, 1, 1], 2).unwrap();
    assert!((acc - 2.0 / 3.0).abs() < 1e-12);
}
