use std::ops::Range;

use rand::Rng as _;

use super::spec::{LayerSpec, ModelSpec, Shape};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct ParamSlot {
    pub weight: Range<usize>,
    pub bias: Range<usize>,
}

/// A layer stack with all parameters in one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: ModelSpec,
    shapes: Vec<Shape>,
    slots: Vec<Option<ParamSlot>>,
    params: Vec<f64>,
}

/// Named view of one parameter tensor with its gradient.
#[derive(Debug, Clone, Copy)]
pub struct ParamTensor<'a> {
    pub layer: usize,
    pub is_bias: bool,
    pub shape: &'a [usize],
    pub values: &'a [f64],
    pub grad: &'a [f64],
}

/// Activations cached by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    acts: Vec<Vec<f64>>,
    argmax: Vec<Vec<u32>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().unwrap()
    }

    pub fn input(&self) -> &[f64] {
        &self.acts[0]
    }

    pub fn into_output(mut self) -> Vec<f64> {
        self.acts.pop().unwrap()
    }
}

impl Network {
    /// Zero-initialized parameters.
    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        let shapes = spec.shapes()?;
        let mut slots = Vec::with_capacity(spec.layers.len());
        let mut offset = 0;
        for layer in &spec.layers {
            slots.push(layer.param_lens().map(|(w, b)| {
                let slot = ParamSlot {
                    weight: offset..offset + w,
                    bias: offset + w..offset + w + b,
                };
                offset += w + b;
                slot
            }));
        }
        Ok(Self {
            spec,
            shapes,
            slots,
            params: vec![0.0; offset],
        })
    }

    /// He-uniform weights, zero biases.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        let mut rng = rng::stream(seed, "init", 0);
        for (layer, slot) in net.spec.layers.iter().zip(&net.slots) {
            if let Some(slot) = slot {
                let bound = layer.init_bound();
                for w in &mut net.params[slot.weight.clone()] {
                    *w = rng.random_range(-bound..bound);
                }
            }
        }
        Ok(net)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn input_shape(&self) -> Shape {
        self.shapes[0]
    }

    pub fn output_shape(&self) -> Shape {
        *self.shapes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::shape(self.params.len(), params.len()));
        }
        self.params = params;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn param_tensors<'a>(
        &'a self,
        grads: &'a [f64],
        shapes: &'a [Vec<usize>],
    ) -> Vec<ParamTensor<'a>> {
        let mut out = Vec::new();
        let mut k = 0;
        for (layer, slot) in self.slots.iter().enumerate() {
            if let Some(slot) = slot {
                out.push(ParamTensor {
                    layer,
                    is_bias: false,
                    shape: &shapes[k],
                    values: &self.params[slot.weight.clone()],
                    grad: &grads[slot.weight.clone()],
                });
                out.push(ParamTensor {
                    layer,
                    is_bias: true,
                    shape: &shapes[k + 1],
                    values: &self.params[slot.bias.clone()],
                    grad: &grads[slot.bias.clone()],
                });
                k += 2;
            }
        }
        out
    }

    /// Shapes of every parameter tensor, weight then bias per parameterized layer.
    pub fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        self.spec
            .layers
            .iter()
            .filter_map(|l| {
                let (_, b) = l.param_lens()?;
                Some([l.weight_shape().unwrap(), vec![b]])
            })
            .flatten()
            .collect()
    }

    pub(crate) fn slots(&self) -> &[Option<ParamSlot>] {
        &self.slots
    }

    pub fn forward(&self, input: &[f64]) -> Result<Trace> {
        if input.len() != self.shapes[0].size() {
            return Err(Error::shape(self.shapes[0].size(), input.len()));
        }
        let mut acts = Vec::with_capacity(self.spec.layers.len() + 1);
        let mut argmax = vec![Vec::new(); self.spec.layers.len()];
        acts.push(input.to_vec());
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let x = &acts[i];
            let (sin, sout) = (self.shapes[i], self.shapes[i + 1]);
            let mut y = vec![0.0; sout.size()];
            self.layer_forward(i, layer, x, sin, sout, &mut y, &mut argmax[i]);
            acts.push(y);
        }
        Ok(Trace { acts, argmax })
    }

    /// Splits the stack before layer `at` into two networks that compose to this one.
    pub fn split_at(&self, at: usize) -> Result<(Network, Network)> {
        if at > self.spec.layers.len() {
            return Err(Error::InvalidConfig(format!(
                "split point {at} beyond {} layers",
                self.spec.layers.len()
            )));
        }
        let head = ModelSpec {
            input: self.shapes[0],
            layers: self.spec.layers[..at].to_vec(),
        };
        let tail = ModelSpec {
            input: self.shapes[at],
            layers: self.spec.layers[at..].to_vec(),
        };
        let mut head = Network::zeros(head)?;
        let mut tail = Network::zeros(tail)?;
        let boundary = head.params.len();
        head.params.copy_from_slice(&self.params[..boundary]);
        tail.params.copy_from_slice(&self.params[boundary..]);
        Ok((head, tail))
    }

    /// Hash of the piecewise-linear regime of a forward pass: which ReLU units are active and
    /// which element won every max-pool window. Two parameter points with the same pattern lie
    /// on the same smooth piece of the loss.
    pub fn activation_pattern(&self, trace: &Trace) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for (i, layer) in self.spec.layers.iter().enumerate() {
            match layer {
                LayerSpec::Relu => {
                    for v in &trace.acts[i] {
                        (*v > 0.0).hash(&mut h);
                    }
                }
                LayerSpec::MaxPool { .. } | LayerSpec::WinnerTakeAll { .. } => {
                    trace.argmax[i].hash(&mut h)
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Forward pass without keeping intermediate activations.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.shapes[0].size() {
            return Err(Error::shape(self.shapes[0].size(), input.len()));
        }
        let mut x = input.to_vec();
        let mut scratch = Vec::new();
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let (sin, sout) = (self.shapes[i], self.shapes[i + 1]);
            let mut y = vec![0.0; sout.size()];
            self.layer_forward(i, layer, &x, sin, sout, &mut y, &mut scratch);
            x = y;
        }
        Ok(x)
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient with respect to
    /// the network input when `want_input_grad` is set.
    pub fn backward(
        &self,
        trace: &Trace,
        grad_output: &[f64],
        grads: &mut [f64],
        want_input_grad: bool,
    ) -> Option<Vec<f64>> {
        debug_assert_eq!(grads.len(), self.params.len());
        let mut g = grad_output.to_vec();
        for i in (0..self.spec.layers.len()).rev() {
            let need_gx = i > 0 || want_input_grad;
            g = self.layer_backward(i, trace, &g, grads, need_gx)?;
        }
        Some(g)
    }

    #[allow(clippy::too_many_arguments)]
    fn layer_forward(
        &self,
        i: usize,
        layer: &LayerSpec,
        x: &[f64],
        sin: Shape,
        sout: Shape,
        y: &mut [f64],
        argmax: &mut Vec<u32>,
    ) {
        match *layer {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let slot = self.slots[i].as_ref().unwrap();
                let w = &self.params[slot.weight.clone()];
                let b = &self.params[slot.bias.clone()];
                conv1d_forward(
                    x,
                    sin.len,
                    w,
                    b,
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    y,
                    sout.len,
                );
            }
            LayerSpec::ConvTranspose1d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let slot = self.slots[i].as_ref().unwrap();
                let w = &self.params[slot.weight.clone()];
                let b = &self.params[slot.bias.clone()];
                for oc in 0..out_channels {
                    y[oc * sout.len..(oc + 1) * sout.len].fill(b[oc]);
                }
                for ic in 0..in_channels {
                    let xr = &x[ic * sin.len..(ic + 1) * sin.len];
                    for oc in 0..out_channels {
                        let yr = &mut y[oc * sout.len..(oc + 1) * sout.len];
                        for kk in 0..kernel {
                            let wv = w[(ic * out_channels + oc) * kernel + kk];
                            for (t, xv) in xr.iter().enumerate() {
                                yr[t * stride + kk] += wv * xv;
                            }
                        }
                    }
                }
            }
            LayerSpec::Dense { inputs, outputs } => {
                let slot = self.slots[i].as_ref().unwrap();
                let w = &self.params[slot.weight.clone()];
                let b = &self.params[slot.bias.clone()];
                for o in 0..outputs {
                    y[o] = b[o] + dot(&w[o * inputs..(o + 1) * inputs], x);
                }
            }
            LayerSpec::Relu => {
                for (o, v) in y.iter_mut().zip(x) {
                    *o = v.max(0.0);
                }
            }
            LayerSpec::Sigmoid => {
                for (o, v) in y.iter_mut().zip(x) {
                    *o = sigmoid(*v);
                }
            }
            LayerSpec::MaxPool { size } => {
                argmax.clear();
                argmax.reserve(sout.size());
                for c in 0..sin.channels {
                    for t in 0..sout.len {
                        let base = c * sin.len + t * size;
                        let mut best = base;
                        for k in 1..size {
                            if x[base + k] > x[best] {
                                best = base + k;
                            }
                        }
                        y[c * sout.len + t] = x[best];
                        argmax.push(best as u32);
                    }
                }
            }
            LayerSpec::Upsample { factor } => {
                for c in 0..sin.channels {
                    for t in 0..sout.len {
                        y[c * sout.len + t] = x[c * sin.len + t / factor];
                    }
                }
            }
            LayerSpec::GlobalAvgPool => {
                let inv = 1.0 / sin.len as f64;
                for c in 0..sin.channels {
                    y[c] = x[c * sin.len..(c + 1) * sin.len].iter().sum::<f64>() * inv;
                }
            }
            LayerSpec::CenterChannels => {
                for c in 0..sin.channels {
                    let row = &x[c * sin.len..(c + 1) * sin.len];
                    let mean = row.iter().sum::<f64>() / sin.len as f64;
                    for (o, v) in y[c * sin.len..(c + 1) * sin.len].iter_mut().zip(row) {
                        *o = v - mean;
                    }
                }
            }
            LayerSpec::WinnerTakeAll { keep } => {
                let mut order: Vec<u32> = (0..x.len() as u32).collect();
                order.sort_by(|&a, &b| x[b as usize].total_cmp(&x[a as usize]).then(a.cmp(&b)));
                order.truncate(keep);
                y.fill(0.0);
                for &k in &order {
                    y[k as usize] = x[k as usize];
                }
                *argmax = order;
            }
            LayerSpec::Reshape { .. } => y.copy_from_slice(x),
            LayerSpec::L2Normalize => {
                let norm = dot(x, x).sqrt().max(NORM_FLOOR);
                for (o, v) in y.iter_mut().zip(x) {
                    *o = v / norm;
                }
            }
        }
    }

    fn layer_backward(
        &self,
        i: usize,
        trace: &Trace,
        g: &[f64],
        grads: &mut [f64],
        need_gx: bool,
    ) -> Option<Vec<f64>> {
        let layer = &self.spec.layers[i];
        let (sin, sout) = (self.shapes[i], self.shapes[i + 1]);
        let x = &trace.acts[i];
        let y = &trace.acts[i + 1];
        match *layer {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let slot = self.slots[i].as_ref().unwrap();
                let w = &self.params[slot.weight.clone()];
                let (gw_all, gb_all) = split_slot(grads, slot);
                let mut gx = need_gx.then(|| vec![0.0; sin.size()]);
                let lo = sout.len;
                for oc in 0..out_channels {
                    let go = &g[oc * lo..(oc + 1) * lo];
                    gb_all[oc] += go.iter().sum::<f64>();
                    for ic in 0..in_channels {
                        let xr = &x[ic * sin.len..(ic + 1) * sin.len];
                        for kk in 0..kernel {
                            let widx = (oc * in_channels + ic) * kernel + kk;
                            if stride == 1 {
                                gw_all[widx] += dot(go, &xr[kk..kk + lo]);
                            } else {
                                gw_all[widx] += go
                                    .iter()
                                    .enumerate()
                                    .map(|(t, gv)| gv * xr[t * stride + kk])
                                    .sum::<f64>();
                            }
                            if let Some(gx) = gx.as_mut() {
                                let wv = w[widx];
                                let gxr = &mut gx[ic * sin.len..(ic + 1) * sin.len];
                                if stride == 1 {
                                    for (d, gv) in gxr[kk..kk + lo].iter_mut().zip(go) {
                                        *d += wv * gv;
                                    }
                                } else {
                                    for (t, gv) in go.iter().enumerate() {
                                        gxr[t * stride + kk] += wv * gv;
                                    }
                                }
                            }
                        }
                    }
                }
                gx
            }
            LayerSpec::ConvTranspose1d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let slot = self.slots[i].as_ref().unwrap();
                let w = &self.params[slot.weight.clone()];
                let (gw_all, gb_all) = split_slot(grads, slot);
                for oc in 0..out_channels {
                    gb_all[oc] += g[oc * sout.len..(oc + 1) * sout.len].iter().sum::<f64>();
                }
                let mut gx = need_gx.then(|| vec![0.0; sin.size()]);
                for ic in 0..in_channels {
                    let xr = &x[ic * sin.len..(ic + 1) * sin.len];
                    for oc in 0..out_channels {
                        let go = &g[oc * sout.len..(oc + 1) * sout.len];
                        for kk in 0..kernel {
                            let widx = (ic * out_channels + oc) * kernel + kk;
                            let mut acc = 0.0;
                            for (t, xv) in xr.iter().enumerate() {
                                acc += xv * go[t * stride + kk];
                            }
                            gw_all[widx] += acc;
                            if let Some(gx) = gx.as_mut() {
                                let wv = w[widx];
                                let gxr = &mut gx[ic * sin.len..(ic + 1) * sin.len];
                                for (t, d) in gxr.iter_mut().enumerate() {
                                    *d += wv * go[t * stride + kk];
                                }
                            }
                        }
                    }
                }
                gx
            }
            LayerSpec::Dense { inputs, outputs } => {
                let slot = self.slots[i].as_ref().unwrap();
                let w = &self.params[slot.weight.clone()];
                let (gw_all, gb_all) = split_slot(grads, slot);
                let mut gx = need_gx.then(|| vec![0.0; inputs]);
                for o in 0..outputs {
                    let go = g[o];
                    gb_all[o] += go;
                    if go == 0.0 {
                        continue;
                    }
                    let row = &mut gw_all[o * inputs..(o + 1) * inputs];
                    for (d, xv) in row.iter_mut().zip(x) {
                        *d += go * xv;
                    }
                    if let Some(gx) = gx.as_mut() {
                        for (d, wv) in gx.iter_mut().zip(&w[o * inputs..(o + 1) * inputs]) {
                            *d += go * wv;
                        }
                    }
                }
                gx
            }
            _ if !need_gx => None,
            LayerSpec::Relu => Some(
                g.iter()
                    .zip(y)
                    .map(|(gv, yv)| if *yv > 0.0 { *gv } else { 0.0 })
                    .collect(),
            ),
            LayerSpec::Sigmoid => Some(
                g.iter()
                    .zip(y)
                    .map(|(gv, yv)| gv * yv * (1.0 - yv))
                    .collect(),
            ),
            LayerSpec::MaxPool { .. } => {
                let mut gx = vec![0.0; sin.size()];
                for (gv, &idx) in g.iter().zip(&trace.argmax[i]) {
                    gx[idx as usize] += gv;
                }
                Some(gx)
            }
            LayerSpec::Upsample { factor } => {
                let mut gx = vec![0.0; sin.size()];
                for c in 0..sin.channels {
                    for t in 0..sout.len {
                        gx[c * sin.len + t / factor] += g[c * sout.len + t];
                    }
                }
                Some(gx)
            }
            LayerSpec::GlobalAvgPool => {
                let inv = 1.0 / sin.len as f64;
                let mut gx = vec![0.0; sin.size()];
                for c in 0..sin.channels {
                    gx[c * sin.len..(c + 1) * sin.len].fill(g[c] * inv);
                }
                Some(gx)
            }
            LayerSpec::CenterChannels => {
                let mut gx = g.to_vec();
                for c in 0..sin.channels {
                    let row = &mut gx[c * sin.len..(c + 1) * sin.len];
                    let mean = row.iter().sum::<f64>() / sin.len as f64;
                    row.iter_mut().for_each(|v| *v -= mean);
                }
                Some(gx)
            }
            LayerSpec::WinnerTakeAll { .. } => {
                let mut gx = vec![0.0; sin.size()];
                for &k in &trace.argmax[i] {
                    gx[k as usize] = g[k as usize];
                }
                Some(gx)
            }
            LayerSpec::Reshape { .. } => Some(g.to_vec()),
            LayerSpec::L2Normalize => {
                let norm = dot(x, x).sqrt().max(NORM_FLOOR);
                let yg = dot(y, g);
                Some(
                    g.iter()
                        .zip(y)
                        .map(|(gv, yv)| (gv - yv * yg) / norm)
                        .collect(),
                )
            }
        }
    }
}

const NORM_FLOOR: f64 = 1e-12;

fn split_slot<'a>(grads: &'a mut [f64], slot: &ParamSlot) -> (&'a mut [f64], &'a mut [f64]) {
    debug_assert_eq!(slot.weight.end, slot.bias.start);
    let (head, tail) = grads[slot.weight.start..slot.bias.end].split_at_mut(slot.weight.len());
    (head, tail)
}

#[allow(clippy::too_many_arguments)]
fn conv1d_forward(
    x: &[f64],
    len: usize,
    w: &[f64],
    b: &[f64],
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    y: &mut [f64],
    lo: usize,
) {
    for oc in 0..out_channels {
        let row = &mut y[oc * lo..(oc + 1) * lo];
        row.fill(b[oc]);
        for ic in 0..in_channels {
            let xr = &x[ic * len..(ic + 1) * len];
            for kk in 0..kernel {
                let wv = w[(oc * in_channels + ic) * kernel + kk];
                if stride == 1 {
                    for (o, xv) in row.iter_mut().zip(&xr[kk..kk + lo]) {
                        *o += wv * xv;
                    }
                } else {
                    for (t, o) in row.iter_mut().enumerate() {
                        *o += wv * xr[t * stride + kk];
                    }
                }
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weight_linear_model_gives_zero_logits() {
        let spec = ModelSpec {
            input: Shape::new(3, 8),
            layers: vec![LayerSpec::Dense {
                inputs: 24,
                outputs: 2,
            }],
        };
        let net = Network::zeros(spec).unwrap();
        let out = net.predict(&[0.7; 24]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn conv_matches_direct_arithmetic() {
        let spec = ModelSpec {
            input: Shape::new(1, 7),
            layers: vec![LayerSpec::Conv1d {
                in_channels: 1,
                out_channels: 1,
                kernel: 3,
                stride: 2,
            }],
        };
        let mut net = Network::zeros(spec).unwrap();
        net.params_mut().copy_from_slice(&[1.0, -1.0, 2.0, 0.5]);
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
        let y = net.predict(&x).unwrap();
        assert_eq!(y.len(), (7 - 3) / 2 + 1);
        let expect: Vec<f64> = (0..3)
            .map(|t| 0.5 + x[2 * t] - x[2 * t + 1] + 2.0 * x[2 * t + 2])
            .collect();
        assert_eq!(y, expect);
    }

    #[test]
    fn forward_is_deterministic_and_checks_shape() {
        let net = Network::new(ModelSpec::classifier(64), 3).unwrap();
        let x: Vec<f64> = (0..192).map(|i| (i as f64 * 0.37).sin()).collect();
        assert_eq!(net.predict(&x).unwrap(), net.predict(&x).unwrap());
        assert_eq!(
            net.forward(&x).unwrap().output(),
            &net.predict(&x).unwrap()[..]
        );
        assert!(matches!(
            net.predict(&x[..10]),
            Err(Error::ShapeMismatch { .. })
        ));
        assert_eq!(Network::new(ModelSpec::classifier(64), 3).unwrap(), net);
    }

    #[test]
    fn param_tensor_views_match_shapes() {
        let net = Network::new(ModelSpec::classifier(64), 1).unwrap();
        let grads = vec![0.0; net.param_count()];
        let shapes = net.tensor_shapes();
        let tensors = net.param_tensors(&grads, &shapes);
        assert_eq!(tensors.len(), 6);
        for t in tensors {
            assert_eq!(t.values.len(), t.shape.iter().product::<usize>());
            assert_eq!(t.values.len(), t.grad.len());
        }
    }
}
