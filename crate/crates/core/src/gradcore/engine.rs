use super::kernels::{self, ConvGeom};
use super::spec::{LayerSpec, NetworkSpec};
use crate::error::NetError;
use crate::tensor::{Scalar, Tensor};

/// Activations cached by [`forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T = f32> {
    batch: usize,
    /// Input of every layer (flat, batch-major).
    inputs: Vec<Vec<T>>,
    /// `w ⊙ m` for every weighted layer.
    effective: Vec<Vec<T>>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Cached input of layer `l` (in `NetworkSpec::layers()` numbering).
    pub fn layer_input(&self, l: usize) -> &[T] {
        &self.inputs[l]
    }
}

pub(crate) fn conv_geom(spec: &LayerSpec, input: &[usize], output: &[usize]) -> ConvGeom {
    let LayerSpec::Conv2d {
        in_channels,
        out_channels,
        kernel_h,
        kernel_w,
        stride,
        padding,
    } = *spec
    else {
        unreachable!("conv_geom on a non-conv layer");
    };
    ConvGeom {
        in_c: in_channels,
        in_h: input[1],
        in_w: input[2],
        out_c: out_channels,
        out_h: output[1],
        out_w: output[2],
        kh: kernel_h,
        kw: kernel_w,
        stride,
        pad: padding,
    }
}

/// Checks that `tensors` holds one tensor per weighted layer with the layer's
/// weight shape.
pub fn check_layer_tensors<T: Scalar>(net: &NetworkSpec, tensors: &[Tensor<T>]) -> Result<(), NetError> {
    let weighted = net.weighted_layers();
    if tensors.len() != weighted.len() {
        return Err(NetError::LayerCount {
            expected: weighted.len(),
            found: tensors.len(),
        });
    }
    for (&l, t) in weighted.iter().zip(tensors) {
        let expected = net.layers()[l].weight_shape().expect("weighted layer");
        if t.shape() != expected.as_slice() {
            return Err(NetError::LayerShape {
                layer: l,
                expected,
                found: t.shape().to_vec(),
            });
        }
    }
    Ok(())
}

fn batch_size(net: &NetworkSpec, batch: &Tensor<impl Scalar>) -> Result<usize, NetError> {
    let shape = batch.shape();
    let per_sample: usize = net.input_shape().iter().product();
    if shape.len() < 2 || shape[1..].iter().product::<usize>() != per_sample {
        return Err(NetError::BatchShape {
            expected: net.input_shape().to_vec(),
            found: shape.to_vec(),
        });
    }
    Ok(shape[0])
}

/// Runs the network on `batch` using effective weights `w ⊙ m` per weighted
/// layer.
///
/// `masks` normally holds binary masks, but any multiplier works: passing raw
/// scores evaluates the straight-through surrogate network.
pub fn forward<T: Scalar>(
    net: &NetworkSpec,
    weights: &[Tensor<T>],
    masks: &[Tensor<T>],
    batch: &Tensor<T>,
) -> Result<(Tensor<T>, ForwardTrace<T>), NetError> {
    check_layer_tensors(net, weights)?;
    check_layer_tensors(net, masks)?;
    let effective = weights
        .iter()
        .zip(masks)
        .map(|(w, m)| w.hadamard(m).map(Tensor::into_data))
        .collect::<Result<Vec<_>, _>>()?;
    forward_effective(net, effective, batch)
}

/// Forward pass with already-combined weights, one flat buffer per weighted
/// layer.
pub(crate) fn forward_effective<T: Scalar>(
    net: &NetworkSpec,
    effective: Vec<Vec<T>>,
    batch: &Tensor<T>,
) -> Result<(Tensor<T>, ForwardTrace<T>), NetError> {
    let n = batch_size(net, batch)?;
    let mut inputs = Vec::with_capacity(net.layers().len());
    let mut x = batch.data().to_vec();
    let mut wi = 0;
    for (l, layer) in net.layers().iter().enumerate() {
        let in_shape = net.layer_input_shape(l);
        let out_shape = net.layer_input_shape(l + 1);
        let y = match *layer {
            LayerSpec::Linear { in_dim, out_dim } => {
                let y = kernels::linear_forward(&x, &effective[wi], n, in_dim, out_dim);
                wi += 1;
                y
            }
            LayerSpec::Conv2d { .. } => {
                let g = conv_geom(layer, in_shape, out_shape);
                let y = kernels::conv_forward(&x, &effective[wi], n, &g);
                wi += 1;
                y
            }
            LayerSpec::Relu => kernels::relu_forward(&x),
            LayerSpec::Flatten => x.clone(),
            LayerSpec::AvgPool2d { kernel } => {
                kernels::avgpool_forward(&x, n, in_shape[0], in_shape[1], in_shape[2], kernel)
            }
        };
        inputs.push(std::mem::replace(&mut x, y));
    }
    let logits = Tensor::new(vec![n, net.classes()], x)?;
    Ok((
        logits,
        ForwardTrace {
            batch: n,
            inputs,
            effective,
        },
    ))
}

/// Gradient of the loss w.r.t. each layer's effective weight `w ⊙ m`.
pub(crate) fn effective_grads<T: Scalar>(
    net: &NetworkSpec,
    trace: &ForwardTrace<T>,
    grad_logits: &Tensor<T>,
) -> Result<Vec<Vec<T>>, NetError> {
    let layers = net.layers();
    let weighted = net.weighted_layers();
    if trace.inputs.len() != layers.len() || trace.effective.len() != weighted.len() {
        return Err(NetError::TraceMismatch(format!(
            "trace holds {} layers / {} weighted, network has {} / {}",
            trace.inputs.len(),
            trace.effective.len(),
            layers.len(),
            weighted.len()
        )));
    }
    let n = trace.batch;
    if grad_logits.shape() != [n, net.classes()] {
        return Err(NetError::TraceMismatch(format!(
            "logit gradient shape {:?} for batch {n} and {} classes",
            grad_logits.shape(),
            net.classes()
        )));
    }
    for (l, input) in trace.inputs.iter().enumerate() {
        let per: usize = net.layer_input_shape(l).iter().product();
        if input.len() != n * per {
            return Err(NetError::TraceMismatch(format!("layer {l} cache has wrong size")));
        }
    }
    let first_weighted = weighted.first().copied();
    let mut grads: Vec<Vec<T>> = vec![Vec::new(); weighted.len()];
    let mut delta = grad_logits.data().to_vec();
    let mut wi = weighted.len();
    for (l, layer) in layers.iter().enumerate().rev() {
        // Nothing upstream needs a gradient once the first weighted layer is done.
        let need_input_grad = first_weighted.is_some_and(|f| l > f);
        let x = &trace.inputs[l];
        let in_shape = net.layer_input_shape(l);
        let out_shape = net.layer_input_shape(l + 1);
        match *layer {
            LayerSpec::Linear { in_dim, out_dim } => {
                wi -= 1;
                grads[wi] = kernels::linear_weight_grad(&delta, x, n, in_dim, out_dim);
                if need_input_grad {
                    delta = kernels::linear_input_grad(&delta, &trace.effective[wi], n, in_dim, out_dim);
                }
            }
            LayerSpec::Conv2d { .. } => {
                wi -= 1;
                let g = conv_geom(layer, in_shape, out_shape);
                grads[wi] = kernels::conv_weight_grad(&delta, x, n, &g);
                if need_input_grad {
                    delta = kernels::conv_input_grad(&delta, &trace.effective[wi], n, &g);
                }
            }
            LayerSpec::Relu => kernels::relu_backward(&mut delta, x),
            LayerSpec::Flatten => {}
            LayerSpec::AvgPool2d { kernel } => {
                delta = kernels::avgpool_backward(&delta, n, in_shape[0], in_shape[1], in_shape[2], kernel);
            }
        }
        if !need_input_grad && l <= first_weighted.unwrap_or(0) {
            break;
        }
    }
    Ok(grads)
}

fn scaled_grads<T: Scalar>(grads: Vec<Vec<T>>, factors: &[Tensor<T>]) -> Result<Vec<Tensor<T>>, NetError> {
    grads
        .into_iter()
        .zip(factors)
        .map(|(g, f)| {
            let data = g.iter().zip(f.data()).map(|(&a, &b)| a * b).collect();
            Ok(Tensor::new(f.shape().to_vec(), data)?)
        })
        .collect()
}

/// Straight-through score gradient: the indicator `h` is treated as the
/// identity, so `∂L/∂s = ∂L/∂(w ⊙ h(s)) · w`, evaluated at the activations of
/// the masked forward pass recorded in `trace`.
pub fn backward_scores<T: Scalar>(
    net: &NetworkSpec,
    weights: &[Tensor<T>],
    masks: &[Tensor<T>],
    trace: &ForwardTrace<T>,
    grad_logits: &Tensor<T>,
) -> Result<Vec<Tensor<T>>, NetError> {
    check_layer_tensors(net, weights)?;
    check_layer_tensors(net, masks)?;
    let grads = effective_grads(net, trace, grad_logits)?;
    scaled_grads(grads, weights)
}

/// Gradient w.r.t. the weights of a masked network; zero wherever the mask is
/// zero.
pub fn backward_weights<T: Scalar>(
    net: &NetworkSpec,
    weights: &[Tensor<T>],
    masks: &[Tensor<T>],
    trace: &ForwardTrace<T>,
    grad_logits: &Tensor<T>,
) -> Result<Vec<Tensor<T>>, NetError> {
    check_layer_tensors(net, weights)?;
    check_layer_tensors(net, masks)?;
    let grads = effective_grads(net, trace, grad_logits)?;
    scaled_grads(grads, masks)
}

/// Classification accuracy over a labelled set, evaluated in chunks.
pub fn accuracy<T: Scalar>(
    net: &NetworkSpec,
    weights: &[Tensor<T>],
    masks: &[Tensor<T>],
    images: &Tensor<T>,
    labels: &[usize],
    chunk: usize,
) -> Result<f64, NetError> {
    let n = images.shape()[0];
    if labels.len() != n {
        return Err(NetError::LabelCount {
            labels: labels.len(),
            batch: n,
        });
    }
    let predictions = predict(net, weights, masks, images, chunk)?;
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / n as f64)
}

/// Arg-max class per sample (lowest index on ties).
pub fn predict<T: Scalar>(
    net: &NetworkSpec,
    weights: &[Tensor<T>],
    masks: &[Tensor<T>],
    images: &Tensor<T>,
    chunk: usize,
) -> Result<Vec<usize>, NetError> {
    check_layer_tensors(net, weights)?;
    check_layer_tensors(net, masks)?;
    let effective: Vec<Vec<T>> = weights
        .iter()
        .zip(masks)
        .map(|(w, m)| w.hadamard(m).map(Tensor::into_data))
        .collect::<Result<_, _>>()?;
    let n = images.shape()[0];
    let chunk = chunk.max(1);
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let count = chunk.min(n - start);
        let batch = images.slice_rows(start, count)?;
        let (logits, _) = forward_effective(net, effective.clone(), &batch)?;
        for row in logits.data().chunks(net.classes()) {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            out.push(best);
        }
        start += count;
    }
    Ok(out)
}
