//! Model checkpoints: a self-describing little-endian binary container
//! holding the layer chain, parameter tensors, precision tag and the
//! initialization seed. Encoding is a pure function of the contents, so
//! files are byte-stable across runs with equal inputs. The decoder
//! validates every length against the remaining input before allocating,
//! so arbitrary bytes fail cleanly; it doubles as a fuzzing entry point.

use std::fs;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use ndarray::{Array1, ArrayD, IxDyn};

use crate::{Error, Result};

use super::{EmbeddingModel, LayerParams, LayerSpec, Scalar, Shape};

pub const MAGIC: &[u8; 8] = b"EMBCKPT\x01";

const MAX_LAYERS: usize = 1024;
const MAX_RANK: usize = 8;
const MAX_DIM: u32 = 1 << 24;
const MAX_TENSOR_LEN: usize = 1 << 27;

/// A decoded checkpoint: model in its stored precision plus seed provenance.
pub enum AnyModel {
    F32(EmbeddingModel<f32>),
    F64(EmbeddingModel<f64>),
}

impl AnyModel {
    pub fn embedding_dim(&self) -> usize {
        match self {
            AnyModel::F32(m) => m.embedding_dim(),
            AnyModel::F64(m) => m.embedding_dim(),
        }
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        let mut b = [0u8; 4];
        LittleEndian::write_u32(&mut b, v);
        self.buf.extend_from_slice(&b);
    }
    fn u64(&mut self, v: u64) {
        let mut b = [0u8; 8];
        LittleEndian::write_u64(&mut b, v);
        self.buf.extend_from_slice(&b);
    }
}

fn write_shape(w: &mut Writer, shape: Shape) {
    match shape {
        Shape::Flat { dim } => {
            w.u8(0);
            w.u32(dim as u32);
        }
        Shape::Image { h, w: width, c } => {
            w.u8(1);
            w.u32(h as u32);
            w.u32(width as u32);
            w.u32(c as u32);
        }
    }
}

fn write_spec(w: &mut Writer, spec: &LayerSpec) {
    match spec {
        LayerSpec::Conv {
            feature_maps,
            kernel_size,
            stride,
            padding,
        } => {
            w.u8(1);
            w.u32(*feature_maps as u32);
            w.u32(*kernel_size as u32);
            w.u32(*stride as u32);
            w.u32(*padding as u32);
        }
        LayerSpec::Relu => w.u8(2),
        LayerSpec::MaxPool { pool_size, stride } => {
            w.u8(3);
            w.u32(*pool_size as u32);
            w.u32(*stride as u32);
        }
        LayerSpec::AvgPool { pool_size, stride } => {
            w.u8(4);
            w.u32(*pool_size as u32);
            w.u32(*stride as u32);
        }
        LayerSpec::Flatten => w.u8(5),
        LayerSpec::Dense { output_dim } => {
            w.u8(6);
            w.u32(*output_dim as u32);
        }
    }
}

fn write_tensor<F: Scalar>(w: &mut Writer, dims: &[usize], data: impl Iterator<Item = F>) {
    w.u8(dims.len() as u8);
    for &d in dims {
        w.u32(d as u32);
    }
    for v in data {
        if F::TAG == 0 {
            let mut b = [0u8; 4];
            LittleEndian::write_f32(&mut b, v.to_f64() as f32);
            w.buf.extend_from_slice(&b);
        } else {
            let mut b = [0u8; 8];
            LittleEndian::write_f64(&mut b, v.to_f64());
            w.buf.extend_from_slice(&b);
        }
    }
}

/// Serialize a model to checkpoint bytes.
pub fn encode_checkpoint<F: Scalar>(model: &EmbeddingModel<F>) -> Vec<u8> {
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(MAGIC);
    w.u8(F::TAG);
    w.u64(model.init_seed());
    write_shape(&mut w, model.input_shape());
    w.u32(model.specs().len() as u32);
    for spec in model.specs() {
        write_spec(&mut w, spec);
    }
    for params in model.params().iter().flatten() {
        write_tensor(&mut w, params.weights.shape(), params.weights.iter().copied());
        write_tensor(&mut w, &[params.bias.len()], params.bias.iter().copied());
    }
    w.buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated checkpoint: missing {what}")))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(LittleEndian::read_u32(self.take(4, what)?))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(LittleEndian::read_u64(self.take(8, what)?))
    }
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

fn read_shape(r: &mut Reader) -> Result<Shape> {
    match r.u8("shape tag")? {
        0 => Ok(Shape::Flat {
            dim: check_dim(r.u32("flat dim")?)?,
        }),
        1 => Ok(Shape::Image {
            h: check_dim(r.u32("input height")?)?,
            w: check_dim(r.u32("input width")?)?,
            c: check_dim(r.u32("input channels")?)?,
        }),
        t => Err(Error::Format(format!("unknown shape tag {t}"))),
    }
}

fn check_dim(v: u32) -> Result<usize> {
    if v == 0 || v > MAX_DIM {
        return Err(Error::Format(format!("dimension {v} out of range")));
    }
    Ok(v as usize)
}

fn read_spec(r: &mut Reader) -> Result<LayerSpec> {
    match r.u8("layer tag")? {
        1 => Ok(LayerSpec::Conv {
            feature_maps: check_dim(r.u32("feature maps")?)?,
            kernel_size: check_dim(r.u32("kernel size")?)?,
            stride: check_dim(r.u32("stride")?)?,
            padding: r.u32("padding")?.min(MAX_DIM) as usize,
        }),
        2 => Ok(LayerSpec::Relu),
        3 => Ok(LayerSpec::MaxPool {
            pool_size: check_dim(r.u32("pool size")?)?,
            stride: check_dim(r.u32("pool stride")?)?,
        }),
        4 => Ok(LayerSpec::AvgPool {
            pool_size: check_dim(r.u32("pool size")?)?,
            stride: check_dim(r.u32("pool stride")?)?,
        }),
        5 => Ok(LayerSpec::Flatten),
        6 => Ok(LayerSpec::Dense {
            output_dim: check_dim(r.u32("dense output dim")?)?,
        }),
        t => Err(Error::Format(format!("unknown layer tag {t}"))),
    }
}

fn read_tensor<F: Scalar>(r: &mut Reader) -> Result<ArrayD<F>> {
    let rank = r.u8("tensor rank")? as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::Format(format!("tensor rank {rank} out of range")));
    }
    let mut dims = Vec::with_capacity(rank);
    let mut len: usize = 1;
    for _ in 0..rank {
        let d = check_dim(r.u32("tensor dim")?)?;
        len = len
            .checked_mul(d)
            .filter(|&l| l <= MAX_TENSOR_LEN)
            .ok_or_else(|| Error::Format("tensor too large".into()))?;
        dims.push(d);
    }
    let elem = if F::TAG == 0 { 4 } else { 8 };
    let need = len * elem;
    if r.remaining() < need {
        return Err(Error::Format(format!(
            "truncated tensor: need {need} bytes, have {}",
            r.remaining()
        )));
    }
    let raw = r.take(need, "tensor data")?;
    let mut data = Vec::with_capacity(len);
    for chunk in raw.chunks_exact(elem) {
        let v = if F::TAG == 0 {
            LittleEndian::read_f32(chunk) as f64
        } else {
            LittleEndian::read_f64(chunk)
        };
        data.push(F::from_f64(v));
    }
    ArrayD::from_shape_vec(IxDyn(&dims), data)
        .map_err(|e| Error::Format(format!("tensor shape: {e}")))
}

fn decode_typed<F: Scalar>(r: &mut Reader, seed: u64) -> Result<EmbeddingModel<F>> {
    let input = read_shape(r)?;
    let n_layers = r.u32("layer count")? as usize;
    if n_layers > MAX_LAYERS {
        return Err(Error::Format(format!("{n_layers} layers exceeds limit")));
    }
    let mut specs = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        specs.push(read_spec(r)?);
    }
    let mut params = Vec::with_capacity(n_layers);
    for spec in &specs {
        let has_params = matches!(spec, LayerSpec::Conv { .. } | LayerSpec::Dense { .. });
        if has_params {
            let weights = read_tensor::<F>(r)?;
            let bias_nd = read_tensor::<F>(r)?;
            if bias_nd.ndim() != 1 {
                return Err(Error::Format("bias tensor must be rank 1".into()));
            }
            let bias: Array1<F> = bias_nd
                .into_dimensionality()
                .map_err(|e| Error::Format(format!("bias shape: {e}")))?;
            params.push(Some(LayerParams { weights, bias }));
        } else {
            params.push(None);
        }
    }
    if r.remaining() != 0 {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint",
            r.remaining()
        )));
    }
    EmbeddingModel::from_parts(input, specs, params, seed)
}

/// Decode checkpoint bytes into a model.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<AnyModel> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(MAGIC.len(), "magic")?;
    if magic != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let precision = r.u8("precision tag")?;
    let seed = r.u64("seed")?;
    match precision {
        0 => Ok(AnyModel::F32(decode_typed::<f32>(&mut r, seed)?)),
        1 => Ok(AnyModel::F64(decode_typed::<f64>(&mut r, seed)?)),
        t => Err(Error::Format(format!("unknown precision tag {t}"))),
    }
}

pub fn save_checkpoint<F: Scalar>(model: &EmbeddingModel<F>, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<AnyModel> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init_model, init_named_model, NamedModel};

    #[test]
    fn round_trip_preserves_everything() {
        let model = init_model::<f32>(
            Shape::Flat { dim: 6 },
            &[
                LayerSpec::Dense { output_dim: 10 },
                LayerSpec::Relu,
                LayerSpec::Dense { output_dim: 4 },
            ],
            991,
        )
        .unwrap();
        let bytes = encode_checkpoint(&model);
        match decode_checkpoint(&bytes).unwrap() {
            AnyModel::F32(back) => {
                assert_eq!(back.specs(), model.specs());
                assert_eq!(back.init_seed(), 991);
                assert_eq!(back.embedding_dim(), 4);
                for (a, b) in back.params().iter().zip(model.params().iter()) {
                    if let (Some(a), Some(b)) = (a, b) {
                        assert_eq!(a.weights, b.weights);
                        assert_eq!(a.bias, b.bias);
                    }
                }
            }
            _ => panic!("expected f32 model"),
        }
    }

    #[test]
    fn encoding_is_byte_stable() {
        let a = init_named_model::<f32>(NamedModel::Embed2d, &[28, 28, 1], 5).unwrap();
        let b = init_named_model::<f32>(NamedModel::Embed2d, &[28, 28, 1], 5).unwrap();
        assert_eq!(encode_checkpoint(&a), encode_checkpoint(&b));
    }

    #[test]
    fn f64_round_trip() {
        let model = init_model::<f64>(
            Shape::Flat { dim: 2 },
            &[LayerSpec::Dense { output_dim: 3 }],
            7,
        )
        .unwrap();
        let bytes = encode_checkpoint(&model);
        assert!(matches!(
            decode_checkpoint(&bytes).unwrap(),
            AnyModel::F64(_)
        ));
    }

    #[test]
    fn corrupt_inputs_fail_cleanly() {
        let model = init_model::<f32>(
            Shape::Flat { dim: 2 },
            &[LayerSpec::Dense { output_dim: 3 }],
            7,
        )
        .unwrap();
        let bytes = encode_checkpoint(&model);

        assert!(decode_checkpoint(&[]).is_err());
        assert!(decode_checkpoint(&bytes[..10]).is_err());

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(decode_checkpoint(&bad_magic).is_err());

        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(decode_checkpoint(&trailing).is_err());

        // Truncations at every prefix length must error, never panic.
        for cut in 0..bytes.len() {
            assert!(decode_checkpoint(&bytes[..cut]).is_err());
        }
    }

    #[test]
    fn huge_declared_tensor_rejected_before_allocation() {
        let mut w = Writer { buf: Vec::new() };
        w.buf.extend_from_slice(MAGIC);
        w.u8(0);
        w.u64(0);
        w.u8(0); // flat shape
        w.u32(4);
        w.u32(1); // one layer
        w.u8(6); // dense
        w.u32(4);
        w.u8(2); // weights rank 2
        w.u32(MAX_DIM);
        w.u32(MAX_DIM);
        assert!(matches!(
            decode_checkpoint(&w.buf),
            Err(Error::Format(_))
        ));
    }
}
