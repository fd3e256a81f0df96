//! Dense, activation, flatten, softmax, and the merge layers (add/concat).

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// `y = x W + b` with `x: [B, I]`, `W: [I, O]`, `b: [O]`.
pub fn dense_forward<E: Element>(
    x: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
) -> Result<Tensor<E>> {
    let mut y = x.matmul(weight)?;
    let o = bias.len();
    for row in y.data_mut().chunks_mut(o) {
        for (v, b) in row.iter_mut().zip(bias.data()) {
            *v = *v + *b;
        }
    }
    Ok(y)
}

pub fn dense_backward<E: Element>(
    x: &Tensor<E>,
    weight: &Tensor<E>,
    grad_y: &Tensor<E>,
) -> Result<(Tensor<E>, Tensor<E>, Tensor<E>)> {
    let grad_x = grad_y.matmul(&weight.transpose()?)?;
    let grad_w = x.transpose()?.matmul(grad_y)?;
    let grad_b = grad_y.sum_axis(0)?;
    Ok((grad_x, grad_w, grad_b))
}

pub fn relu_forward<E: Element>(x: &Tensor<E>) -> Tensor<E> {
    x.maximum_scalar(E::zero())
}

pub fn relu_backward<E: Element>(x: &Tensor<E>, grad_y: &Tensor<E>) -> Result<Tensor<E>> {
    let mut grad = grad_y.clone();
    for (g, &v) in grad.data_mut().iter_mut().zip(x.data()) {
        if v <= E::zero() {
            *g = E::zero();
        }
    }
    Ok(grad)
}

/// Row-wise softmax of `[B, K]`, computed with max subtraction.
pub fn softmax_forward<E: Element>(x: &Tensor<E>) -> Result<Tensor<E>> {
    if x.shape().len() != 2 {
        return Err(Error::InvalidShape(format!(
            "softmax expects 2-D logits, got {:?}",
            x.shape()
        )));
    }
    let k = x.shape()[1];
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(k) {
        let m = row.iter().fold(E::neg_infinity(), |a, &b| if b > a { b } else { a });
        let mut sum = E::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    Ok(out)
}

/// Unfused softmax backward: `dx_i = y_i * (g_i - sum_j g_j y_j)` per row.
pub fn softmax_backward<E: Element>(y: &Tensor<E>, grad_y: &Tensor<E>) -> Result<Tensor<E>> {
    let k = y.shape()[1];
    let mut out = y.zeros_like();
    for ((orow, yrow), grow) in out
        .data_mut()
        .chunks_mut(k)
        .zip(y.data().chunks(k))
        .zip(grad_y.data().chunks(k))
    {
        let dot = yrow
            .iter()
            .zip(grow)
            .fold(E::zero(), |acc, (&yv, &gv)| acc + yv * gv);
        for i in 0..k {
            orow[i] = yrow[i] * (grow[i] - dot);
        }
    }
    Ok(out)
}

/// Elementwise residual sum; shapes must already match.
pub fn add_forward<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    a.add(b)
}

/// Channel-axis concatenation of 4-D feature maps with equal `[B, H, W]`.
pub fn concat_forward<E: Element>(branches: &[&Tensor<E>]) -> Result<Tensor<E>> {
    if branches.is_empty() {
        return Err(Error::InvalidShape("concat of zero branches".into()));
    }
    let first = branches[0].shape();
    if first.len() != 4 {
        return Err(Error::InvalidShape(format!(
            "concat expects 4-D inputs, got {first:?}"
        )));
    }
    let (b, h, w) = (first[0], first[2], first[3]);
    let mut c_total = 0;
    for t in branches {
        let s = t.shape();
        if s[0] != b || s[2] != h || s[3] != w {
            return Err(Error::ShapeMismatch(format!(
                "concat branch {s:?} vs [{b}, _, {h}, {w}]"
            )));
        }
        c_total += s[1];
    }
    let plane = h * w;
    let mut out = vec![E::zero(); b * c_total * plane];
    for bi in 0..b {
        let mut c_off = 0;
        for t in branches {
            let c = t.shape()[1];
            let src = &t.data()[bi * c * plane..(bi + 1) * c * plane];
            let dst_start = (bi * c_total + c_off) * plane;
            out[dst_start..dst_start + c * plane].copy_from_slice(src);
            c_off += c;
        }
    }
    Tensor::from_vec(&[b, c_total, h, w], out)
}

/// Splits the concatenated gradient back into per-branch gradients.
pub fn concat_backward<E: Element>(
    branch_channels: &[usize],
    grad_y: &Tensor<E>,
) -> Result<Vec<Tensor<E>>> {
    let s = grad_y.shape();
    let (b, h, w) = (s[0], s[2], s[3]);
    let c_total: usize = branch_channels.iter().sum();
    let plane = h * w;
    let mut grads = Vec::with_capacity(branch_channels.len());
    let mut c_off = 0;
    for &c in branch_channels {
        let mut g = vec![E::zero(); b * c * plane];
        for bi in 0..b {
            let src_start = (bi * c_total + c_off) * plane;
            g[bi * c * plane..(bi + 1) * c * plane]
                .copy_from_slice(&grad_y.data()[src_start..src_start + c * plane]);
        }
        grads.push(Tensor::from_vec(&[b, c, h, w], g)?);
        c_off += c;
    }
    Ok(grads)
}
