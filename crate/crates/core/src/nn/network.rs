//! VGG-style classifier: blocks of 3x3 conv + ReLU, a 2x2/stride-2 max pool
//! after each block, then a fully connected head with dropout.

use rand::RngCore;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{self, ConvShape, PoolShape};
use crate::error::{invalid, Error, Result};
use crate::image::ImageTensor;
use crate::rng::{purpose, stream};
use crate::scalar::{lit, Scalar};

/// Inputs arrive on the `[0, 255]` scale and are mapped to `(x - 127.5) / 64`
/// before the first layer.
pub const INPUT_CENTRE: f64 = 127.5;
pub const INPUT_SCALE: f64 = 64.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    /// Filter counts per block; a max pool follows every block.
    pub conv_blocks: Vec<Vec<usize>>,
    /// Width of the hidden fully connected layer (0 for none). Dropout sits
    /// right before the output layer.
    pub hidden_units: usize,
    pub num_classes: usize,
}

impl NetworkConfig {
    /// The default small network: two blocks of two convolutions and one
    /// hidden fully connected layer.
    pub fn desk_scale(channels: usize, height: usize, width: usize, num_classes: usize) -> Self {
        Self {
            input_channels: channels,
            input_height: height,
            input_width: width,
            conv_blocks: vec![vec![32, 32], vec![64, 64]],
            hidden_units: 256,
            num_classes,
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_channels * self.input_height * self.input_width
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_len() == 0 {
            return Err(invalid("network input dimensions must be positive"));
        }
        if self.num_classes < 2 {
            return Err(invalid("a classifier needs at least two classes"));
        }
        let (mut h, mut w) = (self.input_height, self.input_width);
        for (i, block) in self.conv_blocks.iter().enumerate() {
            if block.is_empty() || block.contains(&0) {
                return Err(invalid(format!("conv block {i} needs non-zero filter counts")));
            }
            h /= 2;
            w /= 2;
            if h == 0 || w == 0 {
                return Err(invalid(format!(
                    "input {}x{} collapses to zero after pooling block {i}",
                    self.input_height, self.input_width
                )));
            }
        }
        Ok(())
    }

    fn ops(&self) -> Vec<Op> {
        let mut ops = vec![Op::Scale];
        let (mut c, mut h, mut w) = (self.input_channels, self.input_height, self.input_width);
        let mut layer = 0;
        for block in &self.conv_blocks {
            for &filters in block {
                ops.push(Op::Conv {
                    layer,
                    shape: ConvShape {
                        in_channels: c,
                        out_channels: filters,
                        height: h,
                        width: w,
                    },
                });
                ops.push(Op::Relu);
                layer += 1;
                c = filters;
            }
            ops.push(Op::Pool(PoolShape {
                channels: c,
                height: h,
                width: w,
            }));
            h /= 2;
            w /= 2;
        }
        let mut features = c * h * w;
        if self.hidden_units > 0 {
            ops.push(Op::Dense {
                layer,
                inputs: features,
                outputs: self.hidden_units,
            });
            ops.push(Op::Relu);
            layer += 1;
            features = self.hidden_units;
        }
        ops.push(Op::Dropout);
        ops.push(Op::Dense {
            layer,
            inputs: features,
            outputs: self.num_classes,
        });
        ops
    }

    /// `(weight shape, bias shape, fan_in)` per parametrised layer.
    fn param_shapes(&self) -> Vec<(Vec<usize>, usize, usize)> {
        self.ops()
            .iter()
            .filter_map(|op| match *op {
                Op::Conv { shape, .. } => Some((
                    vec![shape.out_channels, shape.in_channels, layers::KERNEL, layers::KERNEL],
                    shape.out_channels,
                    shape.in_channels * layers::KERNEL * layers::KERNEL,
                )),
                Op::Dense { inputs, outputs, .. } => Some((vec![outputs, inputs], outputs, inputs)),
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Scale,
    Conv {
        layer: usize,
        shape: ConvShape,
    },
    Relu,
    Pool(PoolShape),
    Dense {
        layer: usize,
        inputs: usize,
        outputs: usize,
    },
    Dropout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); len],
        }
    }
}

/// Flat list of tensors: `[w0, b0, w1, b1, ...]`. Used for parameters,
/// gradients and momentum buffers alike.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn zeros_like(other: &Self) -> Self {
        Self {
            tensors: other.tensors.iter().map(|t| Tensor::zeros(t.shape.clone())).collect(),
        }
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.shape == b.shape)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn scale(&mut self, factor: T) {
        for t in &mut self.tensors {
            for v in &mut t.data {
                *v *= factor;
            }
        }
    }
}

/// Everything the backward pass needs from one forward pass.
pub struct ForwardCache<T> {
    batch: usize,
    saved: Vec<Saved<T>>,
}

enum Saved<T> {
    None,
    Input(Vec<T>),
    Output(Vec<T>),
    Pool { argmax: Vec<usize>, input_len: usize },
    Mask(Option<Vec<T>>),
}

pub enum Mode<'a> {
    Inference,
    Training { dropout_p: f64, rng: &'a mut dyn RngCore },
}

/// Network weights plus the architecture they belong to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T> {
    pub config: NetworkConfig,
    pub params: ParamSet<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let tensors = config
            .param_shapes()
            .into_iter()
            .flat_map(|(w, b, _)| [Tensor::zeros(w), Tensor::zeros(vec![b])])
            .collect();
        Ok(Self {
            config,
            params: ParamSet { tensors },
        })
    }

    /// He-normal weights (`std = sqrt(2 / fan_in)`), zero biases.
    pub fn init(config: NetworkConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let mut rng = stream(seed, &[purpose::INIT]);
        let fans: Vec<usize> = model.config.param_shapes().iter().map(|s| s.2).collect();
        for (layer, fan_in) in fans.into_iter().enumerate() {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            for v in &mut model.params.tensors[2 * layer].data {
                *v = T::from_f64_lossy(normal.sample(&mut rng));
            }
        }
        Ok(model)
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn weight(&self, layer: usize) -> &[T] {
        &self.params.tensors[2 * layer].data
    }

    fn bias(&self, layer: usize) -> &[T] {
        &self.params.tensors[2 * layer + 1].data
    }

    /// Packs images into one batch-major buffer, checking geometry.
    pub fn pack(&self, images: &[&ImageTensor<T>]) -> Result<Vec<T>> {
        let c = &self.config;
        let expected = (c.input_channels, c.input_height, c.input_width);
        let mut out = Vec::with_capacity(images.len() * c.input_len());
        for (i, img) in images.iter().enumerate() {
            if img.shape() != expected {
                return Err(Error::at(
                    i,
                    Error::ShapeMismatch {
                        expected: format!("{expected:?}"),
                        found: format!("{:?}", img.shape()),
                    },
                ));
            }
            out.extend_from_slice(img.data());
        }
        Ok(out)
    }

    /// Runs the network on `batch` packed inputs. Dropout is active only in
    /// training mode and uses inverted scaling.
    pub fn forward(&self, input: &[T], batch: usize, mode: Mode<'_>) -> Result<(Vec<T>, ForwardCache<T>)> {
        if batch == 0 {
            return Err(Error::Empty("input batch"));
        }
        if input.len() != batch * self.config.input_len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} inputs", batch * self.config.input_len()),
                found: format!("{} inputs", input.len()),
            });
        }
        let (dropout_p, mut rng) = match mode {
            Mode::Inference => (0.0, None),
            Mode::Training { dropout_p, rng } => {
                if !(0.0..1.0).contains(&dropout_p) {
                    return Err(invalid(format!("dropout probability {dropout_p} outside [0, 1)")));
                }
                (dropout_p, Some(rng))
            }
        };
        let ops = self.config.ops();
        let mut saved = Vec::with_capacity(ops.len());
        let mut x = input.to_vec();
        for op in ops {
            match op {
                Op::Scale => {
                    let (centre, scale) = (lit::<T>(INPUT_CENTRE), lit::<T>(1.0 / INPUT_SCALE));
                    for v in &mut x {
                        *v = (*v - centre) * scale;
                    }
                    saved.push(Saved::None);
                }
                Op::Conv { layer, shape } => {
                    let y = layers::conv_forward(&x, batch, &shape, self.weight(layer), self.bias(layer));
                    saved.push(Saved::Input(std::mem::replace(&mut x, y)));
                }
                Op::Relu => {
                    layers::relu_forward(&mut x);
                    saved.push(Saved::Output(x.clone()));
                }
                Op::Pool(shape) => {
                    let (y, argmax) = layers::maxpool_forward(&x, batch, &shape);
                    saved.push(Saved::Pool {
                        argmax,
                        input_len: x.len(),
                    });
                    x = y;
                }
                Op::Dense { layer, inputs, outputs } => {
                    let y = layers::dense_forward(&x, batch, inputs, outputs, self.weight(layer), self.bias(layer));
                    saved.push(Saved::Input(std::mem::replace(&mut x, y)));
                }
                Op::Dropout => {
                    let mask = match rng.as_mut() {
                        Some(rng) if dropout_p > 0.0 => {
                            let mask = layers::dropout_mask(x.len(), dropout_p, &mut **rng);
                            layers::apply_mask(&mut x, &mask);
                            Some(mask)
                        }
                        _ => None,
                    };
                    saved.push(Saved::Mask(mask));
                }
            }
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("logits"));
        }
        Ok((x, ForwardCache { batch, saved }))
    }

    /// Gradient of the loss w.r.t. every parameter, given `dlogits`.
    pub fn backward(&self, cache: &ForwardCache<T>, dlogits: &[T]) -> Result<ParamSet<T>> {
        let batch = cache.batch;
        if dlogits.len() != batch * self.config.num_classes {
            return Err(Error::ShapeMismatch {
                expected: format!("{} logit gradients", batch * self.config.num_classes),
                found: format!("{} logit gradients", dlogits.len()),
            });
        }
        let mut grads = ParamSet::zeros_like(&self.params);
        let ops = self.config.ops();
        let mut g = dlogits.to_vec();
        for (i, (op, saved)) in ops.iter().zip(&cache.saved).enumerate().rev() {
            match (*op, saved) {
                (Op::Scale, _) => {}
                (Op::Conv { layer, shape }, Saved::Input(input)) => {
                    let (dw, db) = split_pair(&mut grads, layer);
                    // The op before the first conv is the fixed input scaling.
                    let want_input = i > 1;
                    if let Some(din) =
                        layers::conv_backward(input, &g, batch, &shape, self.weight(layer), dw, db, want_input)
                    {
                        g = din;
                    }
                }
                (Op::Relu, Saved::Output(out)) => layers::relu_backward(out, &mut g),
                (Op::Pool(_), Saved::Pool { argmax, input_len }) => {
                    g = layers::maxpool_backward(&g, argmax, *input_len);
                }
                (Op::Dense { layer, inputs, outputs }, Saved::Input(input)) => {
                    let (dw, db) = split_pair(&mut grads, layer);
                    g = layers::dense_backward(input, &g, batch, inputs, outputs, self.weight(layer), dw, db);
                }
                (Op::Dropout, Saved::Mask(mask)) => {
                    if let Some(mask) = mask {
                        layers::apply_mask(&mut g, mask);
                    }
                }
                _ => unreachable!("forward cache does not match the network layout"),
            }
        }
        Ok(grads)
    }

    /// Mean cross-entropy and parameter gradients for one labelled batch.
    pub fn loss_and_gradients(
        &self,
        input: &[T],
        labels: &[usize],
        mode: Mode<'_>,
    ) -> Result<(f64, Vec<T>, ParamSet<T>)> {
        let (logits, cache) = self.forward(input, labels.len(), mode)?;
        let (loss, dlogits) = layers::softmax_cross_entropy(&logits, labels, self.config.num_classes)?;
        let grads = self.backward(&cache, &dlogits)?;
        Ok((loss, logits, grads))
    }

    pub fn logits(&self, images: &[&ImageTensor<T>]) -> Result<Vec<T>> {
        let input = self.pack(images)?;
        Ok(self.forward(&input, images.len(), Mode::Inference)?.0)
    }

    /// Top-1 class per image.
    pub fn predict(&self, images: &[&ImageTensor<T>]) -> Result<Vec<usize>> {
        const CHUNK: usize = 256;
        let k = self.config.num_classes;
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(CHUNK) {
            let logits = self.logits(chunk)?;
            out.extend(logits.chunks_exact(k).map(layers::argmax));
        }
        Ok(out)
    }
}

fn split_pair<T>(grads: &mut ParamSet<T>, layer: usize) -> (&mut [T], &mut [T]) {
    let (w, b) = grads.tensors[2 * layer..2 * layer + 2].split_at_mut(1);
    (&mut w[0].data, &mut b[0].data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> NetworkConfig {
        NetworkConfig {
            input_channels: 1,
            input_height: 2,
            input_width: 2,
            conv_blocks: vec![vec![1]],
            hidden_units: 0,
            num_classes: 2,
        }
    }

    #[test]
    fn config_validation() {
        assert!(NetworkConfig::desk_scale(3, 32, 32, 10).validate().is_ok());
        let mut c = NetworkConfig::desk_scale(3, 3, 3, 10);
        assert!(c.validate().is_err());
        c = NetworkConfig::desk_scale(3, 32, 32, 1);
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_weights_give_uniform_probabilities() {
        let cfg = NetworkConfig::desk_scale(3, 8, 8, 5);
        let model = ModelParams::<f64>::zeros(cfg).unwrap();
        let img = ImageTensor::filled(3, 8, 8, 200.0).unwrap();
        let logits = model.logits(&[&img]).unwrap();
        for p in layers::softmax(&logits) {
            assert!((p - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_dropout_training_equals_inference() {
        use rand::SeedableRng;
        let model = ModelParams::<f64>::init(NetworkConfig::desk_scale(3, 8, 8, 4), 3).unwrap();
        let img = ImageTensor::from_fn(3, 8, 8, |c, r, k| (c * 64 + r * 8 + k) as f64).unwrap();
        let input = model.pack(&[&img]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let (train, _) = model
            .forward(
                &input,
                1,
                Mode::Training {
                    dropout_p: 0.0,
                    rng: &mut rng,
                },
            )
            .unwrap();
        let (infer, _) = model.forward(&input, 1, Mode::Inference).unwrap();
        assert_eq!(train, infer);
    }

    #[test]
    fn hand_computed_identity_network() {
        // One conv with only the centre tap set (a 1x1 identity), pool, then a
        // dense layer reading the pooled value.
        let mut model = ModelParams::<f64>::zeros(tiny_config()).unwrap();
        model.params.tensors[0].data[4] = 1.0; // conv centre tap
        model.params.tensors[2].data = vec![1.0, -1.0]; // dense 2x1
        model.params.tensors[3].data = vec![0.5, 0.0];
        // Pixels 127.5 + 64 * [0.5, -1, 2, 0] -> scaled [0.5, -1, 2, 0]; ReLU;
        // pool max = 2; logits = [2 + 0.5, -2].
        let img = ImageTensor::new(1, 2, 2, vec![159.5, 63.5, 255.5, 127.5]).unwrap();
        let logits = model.logits(&[&img]).unwrap();
        assert_eq!(logits, vec![2.5, -2.0]);
    }

    #[test]
    fn stationary_point_has_zero_gradient() {
        // Zero weights give uniform logits; with labels balanced over the
        // classes the output-layer gradient cancels.
        let model = ModelParams::<f64>::zeros(tiny_config()).unwrap();
        let img = ImageTensor::filled(1, 2, 2, 100.0).unwrap();
        let input = model.pack(&[&img, &img]).unwrap();
        let (_, _, grads) = model.loss_and_gradients(&input, &[0, 1], Mode::Inference).unwrap();
        for t in &grads.tensors {
            assert!(t.data.iter().all(|v| v.abs() < 1e-15));
        }
    }

    #[test]
    fn duplicated_batch_has_same_mean_gradient() {
        let model = ModelParams::<f64>::init(NetworkConfig::desk_scale(1, 8, 8, 3), 9).unwrap();
        let img = ImageTensor::from_fn(1, 8, 8, |_, r, c| (r * 31 + c * 7) as f64 % 255.0).unwrap();
        let single = model.pack(&[&img]).unwrap();
        let double = model.pack(&[&img, &img]).unwrap();
        let (l1, _, g1) = model.loss_and_gradients(&single, &[2], Mode::Inference).unwrap();
        let (l2, _, g2) = model.loss_and_gradients(&double, &[2, 2], Mode::Inference).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.tensors.iter().zip(&g2.tensors) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_and_label_errors() {
        let model = ModelParams::<f32>::zeros(tiny_config()).unwrap();
        let wrong = ImageTensor::filled(1, 3, 3, 0.0f32).unwrap();
        assert!(model.pack(&[&wrong]).is_err());
        assert!(model.forward(&[0.0; 3], 1, Mode::Inference).is_err());
        assert!(matches!(
            model.loss_and_gradients(&[0.0; 4], &[7], Mode::Inference),
            Err(Error::LabelOutOfRange { .. })
        ));
    }
}
