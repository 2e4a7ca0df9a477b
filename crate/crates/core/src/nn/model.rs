//! Small convolutional classifier: a stack of conv(3x3) / group-norm / swish
//! blocks, global average pooling and a linear head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::functional;
use crate::nn::tape::{Gradients, Tape, Var};
use crate::nn::tensor::Tensor;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Swish,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub channels: usize,
    pub stride: usize,
}

/// Architecture description. With no blocks the model is a single linear
/// layer over the flattened image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub classes: usize,
    pub blocks: Vec<BlockSpec>,
    pub activation: Activation,
}

impl ModelSpec {
    /// Four stride-2 blocks of widths 16/32/64/128.
    pub fn desk_default(height: usize, width: usize, classes: usize) -> Self {
        Self::with_widths(height, width, classes, &[16, 32, 64, 128])
    }

    pub fn with_widths(height: usize, width: usize, classes: usize, widths: &[usize]) -> Self {
        ModelSpec {
            height,
            width,
            channels: 3,
            classes,
            blocks: widths.iter().map(|&channels| BlockSpec { channels, stride: 2 }).collect(),
            activation: Activation::Swish,
        }
    }

    /// A linear classifier over `height * width * channels` inputs.
    pub fn linear(height: usize, width: usize, channels: usize, classes: usize) -> Self {
        ModelSpec {
            height,
            width,
            channels,
            classes,
            blocks: Vec::new(),
            activation: Activation::Swish,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.channels == 0 || self.classes == 0 {
            return Err(Error::Config(format!("degenerate model spec {self:?}")));
        }
        if self.blocks.iter().any(|b| b.channels == 0 || b.stride == 0) {
            return Err(Error::Config("conv blocks need positive channels and stride".into()));
        }
        Ok(())
    }

    /// Width of the vector fed to the linear head.
    pub fn head_inputs(&self) -> usize {
        match self.blocks.last() {
            Some(b) => b.channels,
            None => self.height * self.width * self.channels,
        }
    }

    /// Number of layers (conv blocks plus the head).
    pub fn layer_count(&self) -> usize {
        self.blocks.len() + 1
    }
}

/// Group count for `channels`: groups of `channels / 4` channels (at least
/// one channel per group).
pub fn norm_groups(channels: usize) -> usize {
    let group_size = (channels / 4).max(1);
    if channels % group_size == 0 {
        channels / group_size
    } else {
        channels
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub frozen: bool,
    /// Layer index, 0 = closest to the input.
    pub layer: usize,
}

/// Named parameters in a fixed order. The head (final layer) is always the
/// last layer index.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet<T> {
    params: Vec<Parameter<T>>,
    layers: usize,
}

impl<T: Scalar> ParameterSet<T> {
    pub fn new(params: Vec<Parameter<T>>, layers: usize) -> Result<Self> {
        for (i, p) in params.iter().enumerate() {
            if params[..i].iter().any(|q| q.name == p.name) {
                return Err(Error::invalid(format!("duplicate parameter name {}", p.name)));
            }
            if p.layer >= layers {
                return Err(Error::invalid(format!("parameter {} in layer {} of {layers}", p.name, p.layer)));
            }
        }
        if !params.iter().any(|p| p.layer + 1 == layers) {
            return Err(Error::invalid("final-layer parameter group is empty"));
        }
        Ok(ParameterSet { params, layers })
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn get(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn as_slice(&self) -> &[Parameter<T>] {
        &self.params
    }

    /// Indices of parameters belonging to `layer`.
    pub fn layer_indices(&self, layer: usize) -> Vec<usize> {
        (0..self.params.len()).filter(|&i| self.params[i].layer == layer).collect()
    }

    pub fn final_layer_indices(&self) -> Vec<usize> {
        self.layer_indices(self.layers - 1)
    }

    /// Makes the top `k` layers trainable and freezes the rest.
    pub fn unfreeze_top(&mut self, k: usize) {
        let first_trainable = self.layers.saturating_sub(k);
        for p in &mut self.params {
            p.frozen = p.layer < first_trainable;
        }
    }

    pub fn freeze_all(&mut self, frozen: bool) {
        for p in &mut self.params {
            p.frozen = frozen;
        }
    }

    pub fn element_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Which parameter group per-example gradients are restricted to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientLayer {
    #[default]
    Final,
    Penultimate,
}

/// Nodes of one recorded forward pass.
#[derive(Clone, Debug)]
pub struct ModelGraph {
    pub logits: Var,
    /// Input to the linear head (pooled features or flattened pixels).
    pub features: Var,
    /// Output of the last conv block, if the model has any.
    pub last_conv: Option<Var>,
    /// One node per parameter, in [`ParameterSet`] order.
    pub params: Vec<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierModel<T> {
    spec: ModelSpec,
    params: ParameterSet<T>,
}

impl<T: Scalar> ClassifierModel<T> {
    /// He-initialised conv weights, unit norm scales, small head.
    pub fn new<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = Vec::new();
        let mut in_c = spec.channels;
        for (i, b) in spec.blocks.iter().enumerate() {
            let std = (2.0 / (9 * in_c) as f64).sqrt();
            params.push(Parameter {
                name: format!("block{i}.conv.weight"),
                value: Tensor::randn(vec![3, 3, in_c, b.channels], std, rng),
                frozen: false,
                layer: i,
            });
            params.push(Parameter {
                name: format!("block{i}.norm.gamma"),
                value: Tensor::full(vec![b.channels], T::one()),
                frozen: false,
                layer: i,
            });
            params.push(Parameter {
                name: format!("block{i}.norm.beta"),
                value: Tensor::zeros(vec![b.channels]),
                frozen: false,
                layer: i,
            });
            in_c = b.channels;
        }
        let d = spec.head_inputs();
        let head = spec.blocks.len();
        params.push(Parameter {
            name: "head.weight".into(),
            value: Tensor::randn(vec![d, spec.classes], (1.0 / d as f64).sqrt(), rng),
            frozen: false,
            layer: head,
        });
        params.push(Parameter {
            name: "head.bias".into(),
            value: Tensor::zeros(vec![spec.classes]),
            frozen: false,
            layer: head,
        });
        let layers = spec.layer_count();
        Ok(ClassifierModel {
            spec,
            params: ParameterSet::new(params, layers)?,
        })
    }

    /// Same architecture with every parameter set to zero.
    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        let mut m = Self::new(spec, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0))?;
        for p in m.params.iter_mut() {
            p.value = Tensor::zeros(p.value.shape().to_vec());
        }
        Ok(m)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParameterSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet<T> {
        &mut self.params
    }

    pub fn set_param(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::invalid(format!("no parameter named {name}")))?;
        if p.value.shape() != value.shape() {
            return Err(Error::shape("set_param", p.value.shape(), value.shape()));
        }
        p.value = value;
        Ok(())
    }

    /// Records a forward pass of `images` (`[N,H,W,C]`) on `tape`.
    pub fn forward(&self, tape: &mut Tape<T>, images: &Tensor<T>) -> Result<ModelGraph> {
        let s = &self.spec;
        let expected = [images.shape().first().copied().unwrap_or(0), s.height, s.width, s.channels];
        if images.shape() != expected {
            return Err(Error::shape("forward", &expected, images.shape()));
        }
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| {
                if p.frozen {
                    tape.constant(p.value.clone())
                } else {
                    tape.parameter(p.value.clone())
                }
            })
            .collect::<Result<_>>()?;

        let mut x = tape.constant(images.clone())?;
        let mut last_conv = None;
        for (i, block) in s.blocks.iter().enumerate() {
            let (w, gamma, beta) = (params[3 * i], params[3 * i + 1], params[3 * i + 2]);
            let c = tape.conv2d(x, w, block.stride)?;
            let n = tape.group_norm(c, gamma, beta, norm_groups(block.channels))?;
            x = match s.activation {
                Activation::Swish => tape.swish(n)?,
                Activation::Relu => tape.relu(n)?,
            };
            last_conv = Some(x);
        }
        let features = match last_conv {
            Some(a) => tape.global_avg_pool(a)?,
            None => tape.flatten(x)?,
        };
        let head_w = params[params.len() - 2];
        let head_b = params[params.len() - 1];
        let z = tape.matmul(features, head_w)?;
        let logits = tape.add_channel_bias(z, head_b)?;
        Ok(ModelGraph {
            logits,
            features,
            last_conv,
            params,
        })
    }

    /// Logits for a batch, `[N, classes]`.
    pub fn logits(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let g = self.forward(&mut tape, images)?;
        Ok(tape.value(g.logits).clone())
    }

    /// Row-wise softmax of [`ClassifierModel::logits`], widened to `f64`.
    pub fn probabilities(&self, images: &Tensor<T>) -> Result<Vec<Vec<f64>>> {
        let z = self.logits(images)?;
        let c = self.spec.classes;
        z.data()
            .chunks(c)
            .map(|row| Ok(functional::softmax(row)?.iter().map(|v| v.widen()).collect()))
            .collect()
    }

    /// Gradient per parameter (zeros where the loss does not reach).
    pub fn param_gradients(&self, graph: &ModelGraph, grads: &Gradients<T>) -> Vec<Tensor<T>> {
        self.params
            .iter()
            .zip(&graph.params)
            .map(|(p, &v)| grads.get_or_zeros(v, p.value.shape()))
            .collect()
    }

    /// Parameter indices making up `layer`'s group.
    pub fn gradient_layer_indices(&self, layer: GradientLayer) -> Result<Vec<usize>> {
        let layers = self.params.layers();
        match layer {
            GradientLayer::Final => Ok(self.params.final_layer_indices()),
            GradientLayer::Penultimate if layers >= 2 => Ok(self.params.layer_indices(layers - 2)),
            GradientLayer::Penultimate => Err(Error::invalid("model has no penultimate layer")),
        }
    }

    /// Element count of the flattened gradient for a layer group.
    pub fn gradient_layer_len(&self, layer: GradientLayer) -> Result<usize> {
        Ok(self
            .gradient_layer_indices(layer)?
            .iter()
            .map(|&i| self.params.as_slice()[i].value.len())
            .sum())
    }

    /// Concatenated gradient of the head (weight then bias).
    pub fn final_layer_gradient(&self, graph: &ModelGraph, grads: &Gradients<T>) -> Vec<T> {
        self.layer_gradient(GradientLayer::Final, graph, grads)
            .expect("final layer always exists")
    }

    pub fn layer_gradient(&self, layer: GradientLayer, graph: &ModelGraph, grads: &Gradients<T>) -> Result<Vec<T>> {
        let mut out = Vec::new();
        for i in self.gradient_layer_indices(layer)? {
            let p = &self.params.as_slice()[i];
            out.extend_from_slice(grads.get_or_zeros(graph.params[i], p.value.shape()).data());
        }
        Ok(out)
    }

    /// Per-example head gradients of `per_example_losses` (`[N]`), where
    /// loss `b` depends only on logits row `b` (true for every loss in this
    /// crate). Slices are laid out as `[weight (D x C), bias (C)]`.
    pub fn per_example_final_layer_grads(
        &self,
        tape: &mut Tape<T>,
        graph: &ModelGraph,
        per_example_losses: Var,
    ) -> Result<Vec<Vec<T>>> {
        let n = tape.value(per_example_losses).len();
        if n == 0 {
            return Ok(Vec::new());
        }
        let total = tape.sum(per_example_losses)?;
        let grads = tape.backward_with(total, &[graph.logits])?;
        let c = self.spec.classes;
        let dz = grads.get_or_zeros(graph.logits, &[n, c]);
        let h = tape.value(graph.features);
        let d = h.len() / n;
        Ok((0..n)
            .map(|b| outer_with_bias(&h.data()[b * d..][..d], &dz.data()[b * c..][..c]))
            .collect())
    }

    /// Per-example gradients of `weights[b] * H(targets[b], softmax(f(x_b)))`
    /// restricted to the requested layer group.
    pub fn per_example_grads(
        &self,
        images: &Tensor<T>,
        targets: &Tensor<T>,
        weights: &[f64],
        layer: GradientLayer,
    ) -> Result<Vec<Vec<T>>> {
        let n = images.shape().first().copied().unwrap_or(0);
        if weights.len() != n {
            return Err(Error::shape("per_example_grads", &[n], &[weights.len()]));
        }
        if n == 0 {
            return Ok(Vec::new());
        }
        match layer {
            GradientLayer::Final => {
                let mut tape = Tape::new();
                let g = self.forward(&mut tape, images)?;
                let losses = tape.softmax_cross_entropy(g.logits, targets.clone())?;
                let scaled = tape.weighted_sum(losses, weights.to_vec())?;
                let grads = tape.backward_with(scaled, &[g.logits])?;
                let c = self.spec.classes;
                let dz = grads.get_or_zeros(g.logits, &[n, c]);
                let h = tape.value(g.features);
                let d = h.len() / n;
                Ok((0..n)
                    .map(|b| outer_with_bias(&h.data()[b * d..][..d], &dz.data()[b * c..][..c]))
                    .collect())
            }
            GradientLayer::Penultimate => (0..n)
                .map(|b| {
                    let x = Tensor::stack(&[images.index_outer(b)?])?;
                    let t = Tensor::stack(&[targets.index_outer(b)?])?;
                    // Gradients are wanted even when the group is frozen.
                    let mut model = self.clone();
                    model.params.freeze_all(false);
                    let mut tape = Tape::new();
                    let g = model.forward(&mut tape, &x)?;
                    let l = tape.softmax_cross_entropy(g.logits, t)?;
                    let l = tape.weighted_sum(l, vec![weights[b]])?;
                    let grads = tape.backward(l)?;
                    model.layer_gradient(GradientLayer::Penultimate, &g, &grads)
                })
                .collect(),
        }
    }
}

fn outer_with_bias<T: Scalar>(h: &[T], dz: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(h.len() * dz.len() + dz.len());
    for &hv in h {
        let hv = hv.widen();
        out.extend(dz.iter().map(|&g| T::narrow(hv * g.widen())));
    }
    out.extend_from_slice(dz);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_linear() -> ClassifierModel<f64> {
        let mut m = ClassifierModel::zeros(ModelSpec::linear(1, 1, 4, 4)).unwrap();
        let mut eye = Tensor::zeros(vec![4, 4]);
        for i in 0..4 {
            eye.data_mut()[i * 4 + i] = 1.0;
        }
        m.set_param("head.weight", eye).unwrap();
        m
    }

    #[test]
    fn identity_linear_layer_passes_input_through() {
        let m = identity_linear();
        let x = Tensor::from_f64([1, 1, 1, 4], &[0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(m.logits(&x).unwrap().data(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn zero_model_gives_zero_logits() {
        let m = ClassifierModel::<f32>::zeros(ModelSpec::with_widths(8, 8, 3, &[4, 8])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::uniform([2, 8, 8, 3], 0.0, 1.0, &mut rng);
        assert!(m.logits(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_rejects_wrong_resolution() {
        let m = ClassifierModel::<f32>::zeros(ModelSpec::with_widths(8, 8, 3, &[4])).unwrap();
        let x = Tensor::zeros([1, 9, 8, 3]);
        assert!(matches!(m.logits(&x), Err(Error::Shape { .. })));
    }

    #[test]
    fn seeded_model_is_bitwise_deterministic() {
        let build = || {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let m = ClassifierModel::<f32>::new(ModelSpec::with_widths(16, 16, 5, &[8, 16]), &mut rng).unwrap();
            let x = Tensor::uniform([3, 16, 16, 3], 0.0, 1.0, &mut rng);
            m.logits(&x).unwrap()
        };
        let (a, b) = (build(), build());
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn norm_group_rule() {
        assert_eq!(norm_groups(16), 4);
        assert_eq!(norm_groups(128), 4);
        assert_eq!(norm_groups(3), 3);
        assert_eq!(norm_groups(6), 6);
        assert_eq!(norm_groups(1), 1);
    }

    #[test]
    fn unfreeze_top_k_boundaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m = ClassifierModel::<f32>::new(ModelSpec::with_widths(8, 8, 2, &[4, 4]), &mut rng).unwrap();
        m.params_mut().unfreeze_top(0);
        assert!(m.params().iter().all(|p| p.frozen));
        m.params_mut().unfreeze_top(3);
        assert!(m.params().iter().all(|p| !p.frozen));
        m.params_mut().unfreeze_top(1);
        assert!(m.params().iter().all(|p| p.frozen == !p.name.starts_with("head")));
    }

    #[test]
    fn per_example_slices_for_singleton_and_duplicates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = ClassifierModel::<f64>::new(ModelSpec::with_widths(8, 8, 3, &[4]), &mut rng).unwrap();
        let img = Tensor::<f64>::uniform([8, 8, 3], 0.0, 1.0, &mut rng);
        let target = Tensor::from_f64([3], &[0.0, 1.0, 0.0]).unwrap();

        let one = Tensor::stack(&[img.clone()]).unwrap();
        let t1 = Tensor::stack(&[target.clone()]).unwrap();
        let mut tape = Tape::new();
        let g = m.forward(&mut tape, &one).unwrap();
        let l = tape.softmax_cross_entropy(g.logits, t1).unwrap();
        let slices = m.per_example_final_layer_grads(&mut tape, &g, l).unwrap();
        let total = tape.sum(l).unwrap();
        let full = m.final_layer_gradient(&g, &tape.backward(total).unwrap());
        assert_eq!(slices.len(), 1);
        for (a, b) in slices[0].iter().zip(&full) {
            assert!((a - b).abs() < 1e-12);
        }

        let two = Tensor::stack(&[img.clone(), img]).unwrap();
        let t2 = Tensor::stack(&[target.clone(), target]).unwrap();
        let s = m.per_example_grads(&two, &t2, &[1.0, 1.0], GradientLayer::Final).unwrap();
        assert_eq!(s[0], s[1]);
        let pen = m.per_example_grads(&two, &t2, &[1.0, 1.0], GradientLayer::Penultimate).unwrap();
        assert_eq!(pen[0], pen[1]);
        assert_eq!(pen[0].len(), m.gradient_layer_len(GradientLayer::Penultimate).unwrap());
    }

    #[test]
    fn empty_batch_gives_no_slices() {
        let m = ClassifierModel::<f64>::zeros(ModelSpec::linear(1, 1, 2, 2)).unwrap();
        let x = Tensor::zeros([0, 1, 1, 2]);
        let t = Tensor::zeros([0, 2]);
        assert!(m.per_example_grads(&x, &t, &[], GradientLayer::Final).unwrap().is_empty());
    }
}
