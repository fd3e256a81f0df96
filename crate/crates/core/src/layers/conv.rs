//! 2-D convolution (cross-correlation, no kernel flip) and its depthwise
//! variant, both with exact hand-derived backward passes.

use super::{out_dim, pad_before, Padding};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};
use rayon::prelude::*;

fn check_input<E: Element>(x: &Tensor<E>, in_ch: usize, kernel: usize, padding: Padding) -> Result<()> {
    if x.shape().len() != 4 {
        return Err(Error::InvalidShape(format!(
            "conv input must be 4-D, got {:?}",
            x.shape()
        )));
    }
    if x.shape()[1] != in_ch {
        return Err(Error::ShapeMismatch(format!(
            "conv expects {in_ch} input channels, got {}",
            x.shape()[1]
        )));
    }
    if padding == Padding::Valid && (x.shape()[2] < kernel || x.shape()[3] < kernel) {
        return Err(Error::ShapeMismatch(format!(
            "input {}x{} smaller than kernel {kernel} under valid padding",
            x.shape()[2],
            x.shape()[3]
        )));
    }
    Ok(())
}

/// `y[b,o,i,j] = bias[o] + sum_{c,u,v} x[b,c,i*s+u-pad, j*s+v-pad] * k[o,c,u,v]`
///
/// Kernel layout is `[out_ch, in_ch, k, k]`. Parallel over (batch, out
/// channel); each output map is written by exactly one task, so the result is
/// bitwise identical for any thread count.
pub fn conv2d_forward<E: Element>(
    x: &Tensor<E>,
    kernel: &Tensor<E>,
    bias: &Tensor<E>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<E>> {
    let (out_ch, in_ch, k) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
    check_input(x, in_ch, k, padding)?;
    let (b, _, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oh, ow) = (out_dim(h, k, stride, padding), out_dim(w, k, stride, padding));
    let (ph, pw) = (
        pad_before(h, k, stride, padding),
        pad_before(w, k, stride, padding),
    );

    let mut out = vec![E::zero(); b * out_ch * oh * ow];
    let xd = x.data();
    let kd = kernel.data();
    let bd = bias.data();

    out.par_chunks_mut(oh * ow).enumerate().for_each(|(bo, map)| {
        let (bi, o) = (bo / out_ch, bo % out_ch);
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = bd[o];
                for c in 0..in_ch {
                    let xbase = ((bi * in_ch + c) * h) * w;
                    let kbase = ((o * in_ch + c) * k) * k;
                    for u in 0..k {
                        let ih = (i * stride + u).wrapping_sub(ph);
                        if ih >= h {
                            continue;
                        }
                        let xrow = xbase + ih * w;
                        let krow = kbase + u * k;
                        for v in 0..k {
                            let iw = (j * stride + v).wrapping_sub(pw);
                            if iw < w {
                                acc = acc + xd[xrow + iw] * kd[krow + v];
                            }
                        }
                    }
                }
                map[i * ow + j] = acc;
            }
        }
    });

    Tensor::from_vec(&[b, out_ch, oh, ow], out)
}

/// Gradients w.r.t. input, kernel, and bias given `grad_y` from downstream.
pub fn conv2d_backward<E: Element>(
    x: &Tensor<E>,
    kernel: &Tensor<E>,
    stride: usize,
    padding: Padding,
    grad_y: &Tensor<E>,
) -> Result<(Tensor<E>, Tensor<E>, Tensor<E>)> {
    let (out_ch, in_ch, k) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
    let (b, _, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oh, ow) = (grad_y.shape()[2], grad_y.shape()[3]);
    let (ph, pw) = (
        pad_before(h, k, stride, padding),
        pad_before(w, k, stride, padding),
    );
    let xd = x.data();
    let kd = kernel.data();
    let gd = grad_y.data();

    // Each output channel owns its kernel/bias slice.
    let mut grad_k = vec![E::zero(); out_ch * in_ch * k * k];
    let mut grad_b = vec![E::zero(); out_ch];
    grad_k
        .par_chunks_mut(in_ch * k * k)
        .zip(grad_b.par_iter_mut())
        .enumerate()
        .for_each(|(o, (gk, gb))| {
            for bi in 0..b {
                let gbase = ((bi * out_ch + o) * oh) * ow;
                for i in 0..oh {
                    for j in 0..ow {
                        let g = gd[gbase + i * ow + j];
                        *gb = *gb + g;
                        for c in 0..in_ch {
                            let xbase = ((bi * in_ch + c) * h) * w;
                            for u in 0..k {
                                let ih = (i * stride + u).wrapping_sub(ph);
                                if ih >= h {
                                    continue;
                                }
                                for v in 0..k {
                                    let iw = (j * stride + v).wrapping_sub(pw);
                                    if iw < w {
                                        let idx = (c * k + u) * k + v;
                                        gk[idx] = gk[idx] + g * xd[xbase + ih * w + iw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });

    // Each batch element owns its input-gradient slice.
    let mut grad_x = vec![E::zero(); b * in_ch * h * w];
    grad_x.par_chunks_mut(in_ch * h * w).enumerate().for_each(|(bi, gx)| {
        for o in 0..out_ch {
            let gbase = ((bi * out_ch + o) * oh) * ow;
            for i in 0..oh {
                for j in 0..ow {
                    let g = gd[gbase + i * ow + j];
                    for c in 0..in_ch {
                        let kbase = ((o * in_ch + c) * k) * k;
                        for u in 0..k {
                            let ih = (i * stride + u).wrapping_sub(ph);
                            if ih >= h {
                                continue;
                            }
                            for v in 0..k {
                                let iw = (j * stride + v).wrapping_sub(pw);
                                if iw < w {
                                    let idx = (c * h + ih) * w + iw;
                                    gx[idx] = gx[idx] + g * kd[kbase + u * k + v];
                                }
                            }
                        }
                    }
                }
            }
        }
    });

    Ok((
        Tensor::from_vec(x.shape(), grad_x)?,
        Tensor::from_vec(kernel.shape(), grad_k)?,
        Tensor::from_vec(&[out_ch], grad_b)?,
    ))
}

/// Per-channel spatial convolution; kernel layout `[channels, k, k]`.
pub fn depthwise_forward<E: Element>(
    x: &Tensor<E>,
    kernel: &Tensor<E>,
    bias: &Tensor<E>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<E>> {
    let (ch, k) = (kernel.shape()[0], kernel.shape()[1]);
    check_input(x, ch, k, padding)?;
    let (b, _, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oh, ow) = (out_dim(h, k, stride, padding), out_dim(w, k, stride, padding));
    let (ph, pw) = (
        pad_before(h, k, stride, padding),
        pad_before(w, k, stride, padding),
    );
    let xd = x.data();
    let kd = kernel.data();
    let bd = bias.data();

    let mut out = vec![E::zero(); b * ch * oh * ow];
    out.par_chunks_mut(oh * ow).enumerate().for_each(|(bc, map)| {
        let (bi, c) = (bc / ch, bc % ch);
        let xbase = ((bi * ch + c) * h) * w;
        let kbase = c * k * k;
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = bd[c];
                for u in 0..k {
                    let ih = (i * stride + u).wrapping_sub(ph);
                    if ih >= h {
                        continue;
                    }
                    for v in 0..k {
                        let iw = (j * stride + v).wrapping_sub(pw);
                        if iw < w {
                            acc = acc + xd[xbase + ih * w + iw] * kd[kbase + u * k + v];
                        }
                    }
                }
                map[i * ow + j] = acc;
            }
        }
    });

    Tensor::from_vec(&[b, ch, oh, ow], out)
}

pub fn depthwise_backward<E: Element>(
    x: &Tensor<E>,
    kernel: &Tensor<E>,
    stride: usize,
    padding: Padding,
    grad_y: &Tensor<E>,
) -> Result<(Tensor<E>, Tensor<E>, Tensor<E>)> {
    let (ch, k) = (kernel.shape()[0], kernel.shape()[1]);
    let (b, _, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oh, ow) = (grad_y.shape()[2], grad_y.shape()[3]);
    let (ph, pw) = (
        pad_before(h, k, stride, padding),
        pad_before(w, k, stride, padding),
    );
    let xd = x.data();
    let kd = kernel.data();
    let gd = grad_y.data();

    let mut grad_x = vec![E::zero(); x.len()];
    let mut grad_k = vec![E::zero(); ch * k * k];
    let mut grad_b = vec![E::zero(); ch];

    for bi in 0..b {
        for c in 0..ch {
            let xbase = ((bi * ch + c) * h) * w;
            let gbase = ((bi * ch + c) * oh) * ow;
            let kbase = c * k * k;
            for i in 0..oh {
                for j in 0..ow {
                    let g = gd[gbase + i * ow + j];
                    grad_b[c] = grad_b[c] + g;
                    for u in 0..k {
                        let ih = (i * stride + u).wrapping_sub(ph);
                        if ih >= h {
                            continue;
                        }
                        for v in 0..k {
                            let iw = (j * stride + v).wrapping_sub(pw);
                            if iw < w {
                                grad_k[kbase + u * k + v] =
                                    grad_k[kbase + u * k + v] + g * xd[xbase + ih * w + iw];
                                grad_x[xbase + ih * w + iw] =
                                    grad_x[xbase + ih * w + iw] + g * kd[kbase + u * k + v];
                            }
                        }
                    }
                }
            }
        }
    }

    Ok((
        Tensor::from_vec(x.shape(), grad_x)?,
        Tensor::from_vec(kernel.shape(), grad_k)?,
        Tensor::from_vec(&[ch], grad_b)?,
    ))
}
