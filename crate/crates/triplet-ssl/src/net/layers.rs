//! Layer forward/backward kernels.
//!
//! Convolutions run as im2col + matrix multiply. Parallel work is split
//! into fixed-size sample chunks (not thread-count dependent), so results
//! are bitwise independent of the number of worker threads.

use ndarray::parallel::prelude::*;
use ndarray::{s, Array1, Array2, Array4, ArrayD, ArrayView2, Axis};

use crate::{Error, Result};

use super::Scalar;

/// Samples per parallel GEMM chunk. Fixed so chunk boundaries (and thus
/// float accumulation order) never depend on the thread count.
const CHUNK_SAMPLES: usize = 8;

/// Activations flowing between layers.
#[derive(Debug, Clone)]
pub enum Value<F> {
    Image(Array4<F>),
    Flat(Array2<F>),
}

impl<F: Scalar> Value<F> {
    pub fn batch_len(&self) -> usize {
        match self {
            Value::Image(a) => a.shape()[0],
            Value::Flat(a) => a.shape()[0],
        }
    }

    pub fn from_dyn(array: &ArrayD<F>) -> Result<Self> {
        match array.ndim() {
            4 => Ok(Value::Image(
                array
                    .view()
                    .into_dimensionality()
                    .map_err(|e| Error::Argument(format!("batch shape: {e}")))?
                    .to_owned(),
            )),
            2 => Ok(Value::Flat(
                array
                    .view()
                    .into_dimensionality()
                    .map_err(|e| Error::Argument(format!("batch shape: {e}")))?
                    .to_owned(),
            )),
            n => Err(Error::Argument(format!(
                "expected a rank-4 image batch or rank-2 flat batch, got rank {n}"
            ))),
        }
    }
}

/// Per-layer state kept from forward for the backward pass.
pub enum LayerCache<F> {
    Conv {
        im2col: Array2<F>,
        in_dims: (usize, usize, usize, usize),
    },
    Relu {
        mask: Vec<bool>,
    },
    MaxPool {
        // Flat spatial index (h * width + w) of each window maximum.
        argmax: Array4<usize>,
        in_dims: (usize, usize, usize, usize),
    },
    AvgPool {
        in_dims: (usize, usize, usize, usize),
    },
    Flatten {
        in_dims: (usize, usize, usize, usize),
    },
    Dense {
        input: Array2<F>,
    },
}

pub fn conv_output_side(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

pub fn pool_output_side(input: usize, pool: usize, stride: usize) -> Option<usize> {
    if input < pool || stride == 0 {
        return None;
    }
    Some((input - pool) / stride + 1)
}

fn pad_images<F: Scalar>(input: &Array4<F>, padding: usize) -> Array4<F> {
    if padding == 0 {
        return input.clone();
    }
    let (b, h, w, c) = input.dim();
    let mut padded = Array4::zeros((b, h + 2 * padding, w + 2 * padding, c));
    padded
        .slice_mut(s![.., padding..padding + h, padding..padding + w, ..])
        .assign(input);
    padded
}

pub fn conv_forward<F: Scalar>(
    input: &Array4<F>,
    weights: &ArrayD<F>,
    bias: &Array1<F>,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<(Array4<F>, LayerCache<F>)> {
    let (b, h, w, c) = input.dim();
    let out_maps = bias.len();
    let oh = conv_output_side(h, kernel, stride, padding)
        .ok_or_else(|| Error::Spec(format!("conv kernel {kernel} exceeds padded input {h}")))?;
    let ow = conv_output_side(w, kernel, stride, padding).unwrap();
    let k_cols = kernel * kernel * c;

    let padded = pad_images(input, padding);
    let rows_per_sample = oh * ow;
    let mut im2col = Array2::<F>::zeros((b * rows_per_sample, k_cols));
    im2col
        .axis_chunks_iter_mut(Axis(0), rows_per_sample)
        .into_par_iter()
        .zip(padded.axis_iter(Axis(0)).into_par_iter())
        .for_each(|(mut rows, img)| {
            for oy in 0..oh {
                for ox in 0..ow {
                    let r = oy * ow + ox;
                    let mut col = 0;
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            for ch in 0..c {
                                rows[[r, col]] = img[[oy * stride + ky, ox * stride + kx, ch]];
                                col += 1;
                            }
                        }
                    }
                }
            }
        });

    let w_mat = weights
        .view()
        .into_shape_with_order((k_cols, out_maps))
        .map_err(|e| Error::Spec(format!("conv weight layout: {e}")))?;

    let mut out_mat = Array2::<F>::zeros((b * rows_per_sample, out_maps));
    let chunk_rows = CHUNK_SAMPLES * rows_per_sample;
    out_mat
        .axis_chunks_iter_mut(Axis(0), chunk_rows)
        .into_par_iter()
        .zip(im2col.axis_chunks_iter(Axis(0), chunk_rows).into_par_iter())
        .for_each(|(mut out_chunk, col_chunk)| {
            out_chunk.assign(&col_chunk.dot(&w_mat));
        });
    out_mat += &bias.view().insert_axis(Axis(0));

    let output = out_mat
        .into_shape_with_order((b, oh, ow, out_maps))
        .map_err(|e| Error::Spec(format!("conv output layout: {e}")))?;
    Ok((
        output,
        LayerCache::Conv {
            im2col,
            in_dims: (b, h, w, c),
        },
    ))
}

#[allow(clippy::too_many_arguments)]
pub fn conv_backward<F: Scalar>(
    cache: &LayerCache<F>,
    weights: &ArrayD<F>,
    grad_out: &Array4<F>,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<(Array4<F>, ArrayD<F>, Array1<F>)> {
    let (im2col, in_dims) = match cache {
        LayerCache::Conv { im2col, in_dims } => (im2col, *in_dims),
        _ => return Err(Error::Argument("mismatched layer cache".into())),
    };
    let (b, h, w, c) = in_dims;
    let (gb, oh, ow, out_maps) = grad_out.dim();
    if gb != b {
        return Err(Error::Argument("gradient batch size mismatch".into()));
    }
    let k_cols = kernel * kernel * c;
    let rows_per_sample = oh * ow;
    let chunk_rows = CHUNK_SAMPLES * rows_per_sample;

    let grad_mat = grad_out
        .view()
        .into_shape_with_order((b * rows_per_sample, out_maps))
        .map_err(|e| Error::Argument(format!("gradient layout: {e}")))?;

    // dW: accumulate per-chunk products in fixed chunk order.
    let chunk_dw: Vec<Array2<F>> = im2col
        .axis_chunks_iter(Axis(0), chunk_rows)
        .into_par_iter()
        .zip(grad_mat.axis_chunks_iter(Axis(0), chunk_rows).into_par_iter())
        .map(|(cols, grads)| cols.t().dot(&grads))
        .collect();
    let mut dw_mat = Array2::<F>::zeros((k_cols, out_maps));
    for part in chunk_dw {
        dw_mat += &part;
    }
    let d_weights = dw_mat
        .into_shape_with_order(weights.raw_dim())
        .map_err(|e| Error::Argument(format!("weight gradient layout: {e}")))?;

    let d_bias = grad_mat.sum_axis(Axis(0));

    // dInput: propagate through the GEMM, then scatter patches back.
    let w_mat = weights
        .view()
        .into_shape_with_order((k_cols, out_maps))
        .map_err(|e| Error::Spec(format!("conv weight layout: {e}")))?;
    let mut d_cols = Array2::<F>::zeros((b * rows_per_sample, k_cols));
    d_cols
        .axis_chunks_iter_mut(Axis(0), chunk_rows)
        .into_par_iter()
        .zip(grad_mat.axis_chunks_iter(Axis(0), chunk_rows).into_par_iter())
        .for_each(|(mut dst, grads)| {
            dst.assign(&grads.dot(&w_mat.t()));
        });

    let (ph, pw) = (h + 2 * padding, w + 2 * padding);
    let mut d_padded = Array4::<F>::zeros((b, ph, pw, c));
    d_padded
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(d_cols.axis_chunks_iter(Axis(0), rows_per_sample).into_par_iter())
        .for_each(|(mut dimg, rows)| {
            for oy in 0..oh {
                for ox in 0..ow {
                    let r = oy * ow + ox;
                    let mut col = 0;
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            for ch in 0..c {
                                dimg[[oy * stride + ky, ox * stride + kx, ch]] =
                                    dimg[[oy * stride + ky, ox * stride + kx, ch]] + rows[[r, col]];
                                col += 1;
                            }
                        }
                    }
                }
            }
        });

    let d_input = d_padded
        .slice(s![.., padding..padding + h, padding..padding + w, ..])
        .to_owned();
    Ok((d_input, d_weights, d_bias))
}

pub fn relu_forward<F: Scalar>(input: &Value<F>) -> (Value<F>, LayerCache<F>) {
    let zero = F::zero();
    match input {
        Value::Image(a) => {
            let mask: Vec<bool> = a.iter().map(|&v| v > zero).collect();
            let out = a.mapv(|v| if v > zero { v } else { zero });
            (Value::Image(out), LayerCache::Relu { mask })
        }
        Value::Flat(a) => {
            let mask: Vec<bool> = a.iter().map(|&v| v > zero).collect();
            let out = a.mapv(|v| if v > zero { v } else { zero });
            (Value::Flat(out), LayerCache::Relu { mask })
        }
    }
}

pub fn relu_backward<F: Scalar>(cache: &LayerCache<F>, grad_out: &Value<F>) -> Result<Value<F>> {
    let mask = match cache {
        LayerCache::Relu { mask } => mask,
        _ => return Err(Error::Argument("mismatched layer cache".into())),
    };
    let zero = F::zero();
    let apply = |slice: &mut [F]| {
        for (g, &keep) in slice.iter_mut().zip(mask.iter()) {
            if !keep {
                *g = zero;
            }
        }
    };
    Ok(match grad_out {
        Value::Image(g) => {
            let mut g = g.clone();
            apply(g.as_slice_mut().expect("standard layout"));
            Value::Image(g)
        }
        Value::Flat(g) => {
            let mut g = g.clone();
            apply(g.as_slice_mut().expect("standard layout"));
            Value::Flat(g)
        }
    })
}

pub fn maxpool_forward<F: Scalar>(
    input: &Array4<F>,
    pool: usize,
    stride: usize,
) -> Result<(Array4<F>, LayerCache<F>)> {
    let (b, h, w, c) = input.dim();
    let oh = pool_output_side(h, pool, stride)
        .ok_or_else(|| Error::Spec(format!("pool size {pool} exceeds input {h}")))?;
    let ow = pool_output_side(w, pool, stride).unwrap();

    let mut output = Array4::<F>::zeros((b, oh, ow, c));
    let mut argmax = Array4::<usize>::zeros((b, oh, ow, c));
    output
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(argmax.axis_iter_mut(Axis(0)).into_par_iter())
        .zip(input.axis_iter(Axis(0)).into_par_iter())
        .for_each(|((mut out, mut arg), img)| {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        let mut best = img[[oy * stride, ox * stride, ch]];
                        let mut best_idx = oy * stride * w + ox * stride;
                        for ky in 0..pool {
                            for kx in 0..pool {
                                let (iy, ix) = (oy * stride + ky, ox * stride + kx);
                                let v = img[[iy, ix, ch]];
                                // Strictly greater keeps the first (row-major)
                                // index on ties.
                                if v > best {
                                    best = v;
                                    best_idx = iy * w + ix;
                                }
                            }
                        }
                        out[[oy, ox, ch]] = best;
                        arg[[oy, ox, ch]] = best_idx;
                    }
                }
            }
        });
    Ok((
        output,
        LayerCache::MaxPool {
            argmax,
            in_dims: (b, h, w, c),
        },
    ))
}

pub fn maxpool_backward<F: Scalar>(cache: &LayerCache<F>, grad_out: &Array4<F>) -> Result<Array4<F>> {
    let (argmax, in_dims) = match cache {
        LayerCache::MaxPool { argmax, in_dims } => (argmax, *in_dims),
        _ => return Err(Error::Argument("mismatched layer cache".into())),
    };
    let (b, h, w, c) = in_dims;
    let (_, oh, ow, _) = grad_out.dim();
    let mut d_input = Array4::<F>::zeros((b, h, w, c));
    d_input
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(grad_out.axis_iter(Axis(0)).into_par_iter())
        .zip(argmax.axis_iter(Axis(0)).into_par_iter())
        .for_each(|((mut dst, g), arg)| {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        let flat = arg[[oy, ox, ch]];
                        let (iy, ix) = (flat / w, flat % w);
                        dst[[iy, ix, ch]] = dst[[iy, ix, ch]] + g[[oy, ox, ch]];
                    }
                }
            }
        });
    Ok(d_input)
}

pub fn avgpool_forward<F: Scalar>(
    input: &Array4<F>,
    pool: usize,
    stride: usize,
) -> Result<(Array4<F>, LayerCache<F>)> {
    let (b, h, w, c) = input.dim();
    let oh = pool_output_side(h, pool, stride)
        .ok_or_else(|| Error::Spec(format!("pool size {pool} exceeds input {h}")))?;
    let ow = pool_output_side(w, pool, stride).unwrap();
    let norm = F::from_f64(1.0 / (pool * pool) as f64);

    let mut output = Array4::<F>::zeros((b, oh, ow, c));
    output
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(input.axis_iter(Axis(0)).into_par_iter())
        .for_each(|(mut out, img)| {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        let mut acc = F::zero();
                        for ky in 0..pool {
                            for kx in 0..pool {
                                acc = acc + img[[oy * stride + ky, ox * stride + kx, ch]];
                            }
                        }
                        out[[oy, ox, ch]] = acc * norm;
                    }
                }
            }
        });
    Ok((
        output,
        LayerCache::AvgPool {
            in_dims: (b, h, w, c),
        },
    ))
}

pub fn avgpool_backward<F: Scalar>(
    cache: &LayerCache<F>,
    grad_out: &Array4<F>,
    pool: usize,
    stride: usize,
) -> Result<Array4<F>> {
    let in_dims = match cache {
        LayerCache::AvgPool { in_dims } => *in_dims,
        _ => return Err(Error::Argument("mismatched layer cache".into())),
    };
    let (b, h, w, c) = in_dims;
    let (_, oh, ow, _) = grad_out.dim();
    let norm = F::from_f64(1.0 / (pool * pool) as f64);
    let mut d_input = Array4::<F>::zeros((b, h, w, c));
    d_input
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(grad_out.axis_iter(Axis(0)).into_par_iter())
        .for_each(|(mut dst, g)| {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        let share = g[[oy, ox, ch]] * norm;
                        for ky in 0..pool {
                            for kx in 0..pool {
                                let (iy, ix) = (oy * stride + ky, ox * stride + kx);
                                dst[[iy, ix, ch]] = dst[[iy, ix, ch]] + share;
                            }
                        }
                    }
                }
            }
        });
    Ok(d_input)
}

pub fn flatten_forward<F: Scalar>(input: &Array4<F>) -> Result<(Array2<F>, LayerCache<F>)> {
    let (b, h, w, c) = input.dim();
    let out = input
        .to_owned()
        .into_shape_with_order((b, h * w * c))
        .map_err(|e| Error::Spec(format!("flatten layout: {e}")))?;
    Ok((
        out,
        LayerCache::Flatten {
            in_dims: (b, h, w, c),
        },
    ))
}

pub fn flatten_backward<F: Scalar>(cache: &LayerCache<F>, grad_out: &Array2<F>) -> Result<Array4<F>> {
    let in_dims = match cache {
        LayerCache::Flatten { in_dims } => *in_dims,
        _ => return Err(Error::Argument("mismatched layer cache".into())),
    };
    grad_out
        .to_owned()
        .into_shape_with_order(in_dims)
        .map_err(|e| Error::Argument(format!("flatten gradient layout: {e}")))
}

pub fn dense_forward<F: Scalar>(
    input: &Array2<F>,
    weights: &ArrayD<F>,
    bias: &Array1<F>,
) -> Result<(Array2<F>, LayerCache<F>)> {
    let w: ArrayView2<F> = weights
        .view()
        .into_dimensionality()
        .map_err(|e| Error::Spec(format!("dense weight rank: {e}")))?;
    if input.shape()[1] != w.shape()[0] {
        return Err(Error::Argument(format!(
            "dense input dim {} != weight rows {}",
            input.shape()[1],
            w.shape()[0]
        )));
    }
    let mut out = input.dot(&w);
    out += &bias.view().insert_axis(Axis(0));
    Ok((
        out,
        LayerCache::Dense {
            input: input.clone(),
        },
    ))
}

pub fn dense_backward<F: Scalar>(
    cache: &LayerCache<F>,
    weights: &ArrayD<F>,
    grad_out: &Array2<F>,
) -> Result<(Array2<F>, ArrayD<F>, Array1<F>)> {
    let input = match cache {
        LayerCache::Dense { input } => input,
        _ => return Err(Error::Argument("mismatched layer cache".into())),
    };
    let w: ArrayView2<F> = weights
        .view()
        .into_dimensionality()
        .map_err(|e| Error::Spec(format!("dense weight rank: {e}")))?;
    let d_weights = input.t().dot(grad_out).into_dyn();
    let d_bias = grad_out.sum_axis(Axis(0));
    let d_input = grad_out.dot(&w.t());
    Ok((d_input, d_weights, d_bias))
}
