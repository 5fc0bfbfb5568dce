//! The embedding network: a plain feed-forward chain of convolution, relu,
//! pooling, flatten and dense layers mapping an input tensor to a
//! d-dimensional embedding, with hand-written reverse-mode gradients.

use ndarray::{Array1, Array2, Array4, ArrayD, Axis, IxDyn, s};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

mod adam;
mod checkpoint;
mod gradcheck;
mod layers;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, AnyModel,
};
pub use gradcheck::{finite_difference, grad_check, mean_square_loss, GradCheckReport};
pub use layers::{conv_output_side, pool_output_side};

use layers::{LayerCache, Value};

/// Element type of network parameters and activations. Training typically
/// runs in `f32`; gradient-check suites in `f64`.
pub trait Scalar: ndarray::NdFloat + Send + Sync + 'static {
    const TAG: u8;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    const TAG: u8 = 0;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const TAG: u8 = 1;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// One layer of the chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    Conv {
        feature_maps: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool {
        pool_size: usize,
        stride: usize,
    },
    AvgPool {
        pool_size: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        output_dim: usize,
    },
}

/// Shape of one example at some point in the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Image { h: usize, w: usize, c: usize },
    Flat { dim: usize },
}

impl Shape {
    pub fn flat_len(&self) -> usize {
        match *self {
            Shape::Image { h, w, c } => h * w * c,
            Shape::Flat { dim } => dim,
        }
    }
}

fn infer_output_shape(spec: &LayerSpec, input: Shape, index: usize) -> Result<Shape> {
    let err = |msg: String| Err(Error::Spec(format!("layer {index}: {msg}")));
    match (spec, input) {
        (
            LayerSpec::Conv {
                feature_maps,
                kernel_size,
                stride,
                padding,
            },
            Shape::Image { h, w, .. },
        ) => {
            if *feature_maps == 0 || *kernel_size == 0 || *stride == 0 {
                return err("conv needs positive feature maps, kernel and stride".into());
            }
            match (
                conv_output_side(h, *kernel_size, *stride, *padding),
                conv_output_side(w, *kernel_size, *stride, *padding),
            ) {
                (Some(oh), Some(ow)) => Ok(Shape::Image {
                    h: oh,
                    w: ow,
                    c: *feature_maps,
                }),
                _ => err(format!("conv kernel {kernel_size} exceeds padded {h}x{w} input")),
            }
        }
        (LayerSpec::Conv { .. }, Shape::Flat { .. }) => err("conv applied to flat input".into()),
        (LayerSpec::Relu, shape) => Ok(shape),
        (LayerSpec::MaxPool { pool_size, stride }, Shape::Image { h, w, c })
        | (LayerSpec::AvgPool { pool_size, stride }, Shape::Image { h, w, c }) => {
            if *pool_size == 0 || *stride == 0 {
                return err("pooling needs positive size and stride".into());
            }
            match (
                pool_output_side(h, *pool_size, *stride),
                pool_output_side(w, *pool_size, *stride),
            ) {
                (Some(oh), Some(ow)) => Ok(Shape::Image { h: oh, w: ow, c }),
                _ => err(format!("pool size {pool_size} exceeds {h}x{w} input")),
            }
        }
        (LayerSpec::MaxPool { .. }, Shape::Flat { .. })
        | (LayerSpec::AvgPool { .. }, Shape::Flat { .. }) => {
            err("pooling applied to flat input".into())
        }
        (LayerSpec::Flatten, Shape::Image { h, w, c }) => Ok(Shape::Flat { dim: h * w * c }),
        (LayerSpec::Flatten, Shape::Flat { .. }) => err("flatten applied to flat input".into()),
        (LayerSpec::Dense { output_dim }, Shape::Flat { .. }) => {
            if *output_dim == 0 {
                return err("dense needs a positive output dim".into());
            }
            Ok(Shape::Flat { dim: *output_dim })
        }
        (LayerSpec::Dense { .. }, Shape::Image { .. }) => {
            err("dense applied to image input; flatten first".into())
        }
    }
}

/// Weight/bias tensors of a parameterized layer.
#[derive(Debug, Clone)]
pub struct LayerParams<F> {
    pub weights: ArrayD<F>,
    pub bias: Array1<F>,
}

/// Parameter gradients, aligned with the model's layer list.
#[derive(Debug, Clone)]
pub struct Gradients<F> {
    pub layers: Vec<Option<LayerParams<F>>>,
}

impl<F: Scalar> Gradients<F> {
    /// Scale every gradient tensor in place.
    pub fn scale(&mut self, factor: F) {
        for layer in self.layers.iter_mut().flatten() {
            layer.weights.mapv_inplace(|v| v * factor);
            layer.bias.mapv_inplace(|v| v * factor);
        }
    }
}

/// The embedding network. Immutable snapshot: training replaces parameters
/// through `&mut self` on a single owned copy.
#[derive(Debug, Clone)]
pub struct EmbeddingModel<F: Scalar> {
    input: Shape,
    specs: Vec<LayerSpec>,
    params: Vec<Option<LayerParams<F>>>,
    embedding_dim: usize,
    init_seed: u64,
}

/// Expected parameter shapes for a validated chain: (weights dims, bias len)
/// per layer, `None` for parameter-free layers.
fn expected_param_shapes(input: Shape, specs: &[LayerSpec]) -> Result<Vec<Option<(Vec<usize>, usize)>>> {
    let mut shape = input;
    let mut out = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let entry = match (spec, shape) {
            (
                LayerSpec::Conv {
                    feature_maps,
                    kernel_size,
                    ..
                },
                Shape::Image { c, .. },
            ) => Some((
                vec![*kernel_size, *kernel_size, c, *feature_maps],
                *feature_maps,
            )),
            (LayerSpec::Dense { output_dim }, Shape::Flat { dim }) => {
                Some((vec![dim, *output_dim], *output_dim))
            }
            _ => None,
        };
        shape = infer_output_shape(spec, shape, i)?;
        out.push(entry);
    }
    Ok(out)
}

/// Validate a chain and initialize parameters: fan-in-scaled uniform
/// weights, zero biases, deterministic in `seed`.
pub fn init_model<F: Scalar>(input: Shape, specs: &[LayerSpec], seed: u64) -> Result<EmbeddingModel<F>> {
    let shapes = expected_param_shapes(input, specs)?;
    let final_shape = specs
        .iter()
        .enumerate()
        .try_fold(input, |acc, (i, spec)| infer_output_shape(spec, acc, i))?;
    let embedding_dim = match final_shape {
        Shape::Flat { dim } => dim,
        Shape::Image { h, w, c } => {
            return Err(Error::Spec(format!(
                "chain ends with an unflattened {h}x{w}x{c} image; add a flatten layer"
            )))
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = shapes
        .into_iter()
        .map(|entry| {
            entry.map(|(wdims, blen)| {
                let fan_in: usize = wdims[..wdims.len() - 1].iter().product();
                let limit = (6.0 / fan_in as f64).sqrt();
                let mut weights = ArrayD::<F>::zeros(IxDyn(&wdims));
                for v in weights.iter_mut() {
                    *v = F::from_f64((rng.random::<f64>() * 2.0 - 1.0) * limit);
                }
                LayerParams {
                    weights,
                    bias: Array1::zeros(blen),
                }
            })
        })
        .collect();

    Ok(EmbeddingModel {
        input,
        specs: specs.to_vec(),
        params,
        embedding_dim,
        init_seed: seed,
    })
}

/// Forward activations retained for the backward pass.
pub struct ForwardCache<F: Scalar> {
    adapted: ArrayD<F>,
    layer_caches: Vec<LayerCache<F>>,
    batch_len: usize,
}

impl<F: Scalar> EmbeddingModel<F> {
    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn params(&self) -> &[Option<LayerParams<F>>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Option<LayerParams<F>>] {
        &mut self.params
    }

    /// Total number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params
            .iter()
            .flatten()
            .map(|p| p.weights.len() + p.bias.len())
            .sum()
    }

    /// Rebuild a model from decoded parts, validating every tensor shape.
    pub fn from_parts(
        input: Shape,
        specs: Vec<LayerSpec>,
        params: Vec<Option<LayerParams<F>>>,
        init_seed: u64,
    ) -> Result<Self> {
        let expected = expected_param_shapes(input, &specs)?;
        if expected.len() != params.len() {
            return Err(Error::Spec(format!(
                "{} layers but {} parameter slots",
                expected.len(),
                params.len()
            )));
        }
        for (i, (exp, got)) in expected.iter().zip(params.iter()).enumerate() {
            match (exp, got) {
                (None, None) => {}
                (Some((wdims, blen)), Some(p)) => {
                    if p.weights.shape() != wdims.as_slice() || p.bias.len() != *blen {
                        return Err(Error::Spec(format!(
                            "layer {i}: parameter tensors do not match the layer spec"
                        )));
                    }
                }
                _ => {
                    return Err(Error::Spec(format!(
                        "layer {i}: parameter slot does not match the layer kind"
                    )))
                }
            }
        }
        let final_shape = specs
            .iter()
            .enumerate()
            .try_fold(input, |acc, (i, spec)| infer_output_shape(spec, acc, i))?;
        let embedding_dim = match final_shape {
            Shape::Flat { dim } => dim,
            _ => return Err(Error::Spec("chain must end flat".into())),
        };
        Ok(EmbeddingModel {
            input,
            specs,
            params,
            embedding_dim,
            init_seed,
        })
    }

    /// Fit a batch to the declared input shape. Image batches with smaller
    /// spatial extent are zero-padded symmetrically; single-channel batches
    /// are replicated across the expected channels (grayscale into an RGB
    /// trunk). Anything else is a shape error.
    fn adapt_input(&self, batch: &ArrayD<F>) -> Result<ArrayD<F>> {
        match self.input {
            Shape::Flat { dim } => {
                if batch.ndim() != 2 || batch.shape()[1] != dim {
                    return Err(Error::Argument(format!(
                        "expected a flat batch of dim {dim}, got shape {:?}",
                        batch.shape()
                    )));
                }
                Ok(batch.clone())
            }
            Shape::Image { h, w, c } => {
                if batch.ndim() != 4 {
                    return Err(Error::Argument(format!(
                        "expected an image batch, got shape {:?}",
                        batch.shape()
                    )));
                }
                let (b, bh, bw, bc) = (
                    batch.shape()[0],
                    batch.shape()[1],
                    batch.shape()[2],
                    batch.shape()[3],
                );
                if bh > h || bw > w || (bc != c && bc != 1) {
                    return Err(Error::Argument(format!(
                        "batch of {bh}x{bw}x{bc} does not fit model input {h}x{w}x{c}"
                    )));
                }
                if (bh, bw, bc) == (h, w, c) {
                    return Ok(batch.clone());
                }
                let src: Array4<F> = batch
                    .view()
                    .into_dimensionality()
                    .map_err(|e| Error::Argument(format!("batch shape: {e}")))?
                    .to_owned();
                let (oy, ox) = ((h - bh) / 2, (w - bw) / 2);
                let mut out = Array4::<F>::zeros((b, h, w, c));
                for ch in 0..c {
                    let src_ch = if bc == 1 { 0 } else { ch };
                    out.slice_mut(s![.., oy..oy + bh, ox..ox + bw, ch])
                        .assign(&src.slice(s![.., .., .., src_ch]));
                }
                Ok(out.into_dyn())
            }
        }
    }

    /// Map a batch to embeddings.
    pub fn forward(&self, batch: &ArrayD<F>) -> Result<Array2<F>> {
        self.forward_cached(batch).map(|(e, _)| e)
    }

    /// Forward pass that also returns the caches needed by
    /// [`EmbeddingModel::backward_cached`].
    pub fn forward_cached(&self, batch: &ArrayD<F>) -> Result<(Array2<F>, ForwardCache<F>)> {
        let adapted = self.adapt_input(batch)?;
        let batch_len = adapted.shape()[0];
        let mut value = Value::from_dyn(&adapted)?;
        let mut caches = Vec::with_capacity(self.specs.len());

        for (i, spec) in self.specs.iter().enumerate() {
            let (next, cache) = self.apply_layer(i, spec, &value)?;
            caches.push(cache);
            value = next;
        }

        let embeddings = match value {
            Value::Flat(e) => e,
            Value::Image(_) => {
                return Err(Error::Spec("chain produced unflattened output".into()))
            }
        };
        Ok((
            embeddings,
            ForwardCache {
                adapted,
                layer_caches: caches,
                batch_len,
            },
        ))
    }

    fn apply_layer(&self, i: usize, spec: &LayerSpec, value: &Value<F>) -> Result<(Value<F>, LayerCache<F>)> {
        let image = |v: &Value<F>| -> Result<Array4<F>> {
            match v {
                Value::Image(a) => Ok(a.clone()),
                Value::Flat(_) => Err(Error::Spec(format!("layer {i}: needs image input"))),
            }
        };
        let flat = |v: &Value<F>| -> Result<Array2<F>> {
            match v {
                Value::Flat(a) => Ok(a.clone()),
                Value::Image(_) => Err(Error::Spec(format!("layer {i}: needs flat input"))),
            }
        };
        match spec {
            LayerSpec::Conv {
                kernel_size,
                stride,
                padding,
                ..
            } => {
                let p = self.params[i].as_ref().expect("conv has params");
                let (out, cache) = layers::conv_forward(
                    &image(value)?,
                    &p.weights,
                    &p.bias,
                    *kernel_size,
                    *stride,
                    *padding,
                )?;
                Ok((Value::Image(out), cache))
            }
            LayerSpec::Relu => {
                let (out, cache) = layers::relu_forward(value);
                Ok((out, cache))
            }
            LayerSpec::MaxPool { pool_size, stride } => {
                let (out, cache) = layers::maxpool_forward(&image(value)?, *pool_size, *stride)?;
                Ok((Value::Image(out), cache))
            }
            LayerSpec::AvgPool { pool_size, stride } => {
                let (out, cache) = layers::avgpool_forward(&image(value)?, *pool_size, *stride)?;
                Ok((Value::Image(out), cache))
            }
            LayerSpec::Flatten => {
                let (out, cache) = layers::flatten_forward(&image(value)?)?;
                Ok((Value::Flat(out), cache))
            }
            LayerSpec::Dense { .. } => {
                let p = self.params[i].as_ref().expect("dense has params");
                let (out, cache) = layers::dense_forward(&flat(value)?, &p.weights, &p.bias)?;
                Ok((Value::Flat(out), cache))
            }
        }
    }

    /// Parameter gradients for the given upstream embedding gradient.
    /// Recomputes the forward pass; use [`EmbeddingModel::forward_cached`] +
    /// [`EmbeddingModel::backward_cached`] inside training loops.
    pub fn backward(&self, batch: &ArrayD<F>, grad_embeddings: &Array2<F>) -> Result<Gradients<F>> {
        let (_, cache) = self.forward_cached(batch)?;
        self.backward_cached(&cache, grad_embeddings)
    }

    /// Backward pass over cached activations.
    pub fn backward_cached(
        &self,
        cache: &ForwardCache<F>,
        grad_embeddings: &Array2<F>,
    ) -> Result<Gradients<F>> {
        if grad_embeddings.shape() != [cache.batch_len, self.embedding_dim] {
            return Err(Error::Argument(format!(
                "gradient shape {:?} does not match {} x {}",
                grad_embeddings.shape(),
                cache.batch_len,
                self.embedding_dim
            )));
        }

        let mut grads: Vec<Option<LayerParams<F>>> = vec![None; self.specs.len()];
        let mut grad = Value::Flat(grad_embeddings.clone());

        for (i, spec) in self.specs.iter().enumerate().rev() {
            let layer_cache = &cache.layer_caches[i];
            grad = match spec {
                LayerSpec::Conv {
                    kernel_size,
                    stride,
                    padding,
                    ..
                } => {
                    let p = self.params[i].as_ref().expect("conv has params");
                    let g = match &grad {
                        Value::Image(g) => g,
                        Value::Flat(_) => {
                            return Err(Error::Spec(format!("layer {i}: image gradient expected")))
                        }
                    };
                    let (dx, dw, db) = layers::conv_backward(
                        layer_cache,
                        &p.weights,
                        g,
                        *kernel_size,
                        *stride,
                        *padding,
                    )?;
                    grads[i] = Some(LayerParams {
                        weights: dw,
                        bias: db,
                    });
                    Value::Image(dx)
                }
                LayerSpec::Relu => layers::relu_backward(layer_cache, &grad)?,
                LayerSpec::MaxPool { .. } => {
                    let g = match &grad {
                        Value::Image(g) => g,
                        Value::Flat(_) => {
                            return Err(Error::Spec(format!("layer {i}: image gradient expected")))
                        }
                    };
                    Value::Image(layers::maxpool_backward(layer_cache, g)?)
                }
                LayerSpec::AvgPool { pool_size, stride } => {
                    let g = match &grad {
                        Value::Image(g) => g,
                        Value::Flat(_) => {
                            return Err(Error::Spec(format!("layer {i}: image gradient expected")))
                        }
                    };
                    Value::Image(layers::avgpool_backward(layer_cache, g, *pool_size, *stride)?)
                }
                LayerSpec::Flatten => {
                    let g = match &grad {
                        Value::Flat(g) => g,
                        Value::Image(_) => {
                            return Err(Error::Spec(format!("layer {i}: flat gradient expected")))
                        }
                    };
                    Value::Image(layers::flatten_backward(layer_cache, g)?)
                }
                LayerSpec::Dense { .. } => {
                    let p = self.params[i].as_ref().expect("dense has params");
                    let g = match &grad {
                        Value::Flat(g) => g,
                        Value::Image(_) => {
                            return Err(Error::Spec(format!("layer {i}: flat gradient expected")))
                        }
                    };
                    let (dx, dw, db) = layers::dense_backward(layer_cache, &p.weights, g)?;
                    grads[i] = Some(LayerParams {
                        weights: dw,
                        bias: db,
                    });
                    Value::Flat(dx)
                }
            };
        }
        let _ = &cache.adapted;
        Ok(Gradients { layers: grads })
    }

    /// Convert parameters to a different precision, value by value.
    pub fn cast<G: Scalar>(&self) -> EmbeddingModel<G> {
        EmbeddingModel {
            input: self.input,
            specs: self.specs.clone(),
            params: self
                .params
                .iter()
                .map(|p| {
                    p.as_ref().map(|p| LayerParams {
                        weights: p.weights.mapv(|v| G::from_f64(v.to_f64())),
                        bias: p.bias.mapv(|v| G::from_f64(v.to_f64())),
                    })
                })
                .collect(),
            embedding_dim: self.embedding_dim,
            init_seed: self.init_seed,
        }
    }
}

/// Built-in architectures selectable from run configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NamedModel {
    /// Five-conv trunk with 16-dimensional embeddings for 32x32x3 input
    /// (grayscale 28x28 batches are padded and channel-replicated).
    Simple,
    /// `Simple` with a 2-map final conv and average pooling: 2-D embeddings
    /// for scatter visualization.
    Embed2d,
    /// Two dense layers for flat synthetic features; 16-dim embeddings.
    Mlp,
}

impl std::str::FromStr for NamedModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(NamedModel::Simple),
            "embed2d" => Ok(NamedModel::Embed2d),
            "mlp" => Ok(NamedModel::Mlp),
            other => Err(Error::Config(format!(
                "unknown model name {other:?}; expected simple, embed2d or mlp"
            ))),
        }
    }
}

impl NamedModel {
    pub fn as_str(&self) -> &'static str {
        match self {
            NamedModel::Simple => "simple",
            NamedModel::Embed2d => "embed2d",
            NamedModel::Mlp => "mlp",
        }
    }
}

/// Input shape and layer chain for a named architecture, given the
/// per-example shape of the dataset it will consume.
pub fn named_model_spec(name: NamedModel, example_shape: &[usize]) -> Result<(Shape, Vec<LayerSpec>)> {
    match name {
        NamedModel::Simple | NamedModel::Embed2d => {
            if example_shape.len() != 3 {
                return Err(Error::Config(format!(
                    "model.name {:?} needs image data, got example shape {example_shape:?}",
                    name.as_str()
                )));
            }
            let (h, w, c) = (example_shape[0], example_shape[1], example_shape[2]);
            if h > 32 || w > 32 || (c != 1 && c != 3) {
                return Err(Error::Config(format!(
                    "model.name {:?} takes up to 32x32 images with 1 or 3 channels, got {h}x{w}x{c}",
                    name.as_str()
                )));
            }
            let input = Shape::Image { h: 32, w: 32, c: 3 };
            let last_maps = if name == NamedModel::Simple { 4 } else { 2 };
            let mut specs = vec![
                LayerSpec::Conv { feature_maps: 32, kernel_size: 7, stride: 1, padding: 3 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { pool_size: 2, stride: 2 },
                LayerSpec::Conv { feature_maps: 64, kernel_size: 5, stride: 1, padding: 2 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { pool_size: 2, stride: 2 },
                LayerSpec::Conv { feature_maps: 128, kernel_size: 3, stride: 1, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { pool_size: 2, stride: 2 },
                LayerSpec::Conv { feature_maps: 256, kernel_size: 1, stride: 1, padding: 0 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { pool_size: 2, stride: 2 },
                LayerSpec::Conv { feature_maps: last_maps, kernel_size: 1, stride: 1, padding: 0 },
            ];
            if name == NamedModel::Embed2d {
                specs.push(LayerSpec::AvgPool { pool_size: 2, stride: 2 });
            }
            specs.push(LayerSpec::Flatten);
            Ok((input, specs))
        }
        NamedModel::Mlp => {
            if example_shape.len() != 1 {
                return Err(Error::Config(format!(
                    "model.name \"mlp\" needs flat data, got example shape {example_shape:?}"
                )));
            }
            let input = Shape::Flat {
                dim: example_shape[0],
            };
            Ok((
                input,
                vec![
                    LayerSpec::Dense { output_dim: 32 },
                    LayerSpec::Relu,
                    LayerSpec::Dense { output_dim: 16 },
                ],
            ))
        }
    }
}

/// Assemble and initialize a named architecture for the given data shape.
pub fn init_named_model<F: Scalar>(
    name: NamedModel,
    example_shape: &[usize],
    seed: u64,
) -> Result<EmbeddingModel<F>> {
    let (input, specs) = named_model_spec(name, example_shape)?;
    let model = init_model::<F>(input, &specs, seed)?;
    let expected = match name {
        NamedModel::Simple => 16,
        NamedModel::Embed2d => 2,
        NamedModel::Mlp => 16,
    };
    if model.embedding_dim() != expected {
        return Err(Error::Spec(format!(
            "{} assembles to {}-dim embeddings, expected {expected}",
            name.as_str(),
            model.embedding_dim()
        )));
    }
    Ok(model)
}
