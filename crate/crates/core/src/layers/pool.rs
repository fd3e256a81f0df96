//! Max pooling with an argmax mask for the backward pass.
//!
//! The standard use is 2x2/stride-2 (odd trailing rows/columns are
//! truncated); inception blocks use 3x3/stride-1 with same padding.

use super::{out_dim, pad_before, Padding};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Returns the pooled tensor and, per output element, the flat input index of
/// the winning element (lowest index on ties).
pub fn maxpool_forward<E: Element>(
    x: &Tensor<E>,
    size: usize,
    stride: usize,
    padding: Padding,
) -> Result<(Tensor<E>, Vec<usize>)> {
    if x.shape().len() != 4 {
        return Err(Error::InvalidShape(format!(
            "maxpool input must be 4-D, got {:?}",
            x.shape()
        )));
    }
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oh, ow) = match padding {
        // Valid pooling floors: a trailing odd row/column is dropped.
        Padding::Valid => (h / stride, w / stride),
        Padding::Same => (out_dim(h, size, stride, padding), out_dim(w, size, stride, padding)),
    };
    if oh == 0 || ow == 0 {
        return Err(Error::ShapeMismatch(format!(
            "input {h}x{w} too small for {size}x{size} pool"
        )));
    }
    let (ph, pw) = (
        pad_before(h, size, stride, padding),
        pad_before(w, size, stride, padding),
    );
    let xd = x.data();
    let mut out = vec![E::zero(); b * c * oh * ow];
    let mut mask = vec![0usize; b * c * oh * ow];

    for bi in 0..b {
        for ci in 0..c {
            let xbase = ((bi * c + ci) * h) * w;
            let obase = ((bi * c + ci) * oh) * ow;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = E::neg_infinity();
                    let mut best_idx = usize::MAX;
                    for u in 0..size {
                        let ih = (i * stride + u).wrapping_sub(ph);
                        if ih >= h {
                            continue;
                        }
                        for v in 0..size {
                            let iw = (j * stride + v).wrapping_sub(pw);
                            if iw >= w {
                                continue;
                            }
                            let idx = xbase + ih * w + iw;
                            if xd[idx] > best {
                                best = xd[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[obase + i * ow + j] = best;
                    mask[obase + i * ow + j] = best_idx;
                }
            }
        }
    }

    Ok((Tensor::from_vec(&[b, c, oh, ow], out)?, mask))
}

/// Routes each output gradient to the argmax position recorded in `mask`.
pub fn maxpool_backward<E: Element>(
    input_shape: &[usize],
    mask: &[usize],
    grad_y: &Tensor<E>,
) -> Result<Tensor<E>> {
    let mut grad_x = Tensor::zeros(input_shape)?;
    let gx = grad_x.data_mut();
    for (g, &idx) in grad_y.data().iter().zip(mask) {
        gx[idx] = gx[idx] + *g;
    }
    Ok(grad_x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_window() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, mask) = maxpool_forward(&x, 2, 2, Padding::Valid).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(mask, vec![3]);
    }

    #[test]
    fn constant_halves_dims() {
        let x = Tensor::<f64>::full(&[1, 2, 4, 6], 0.7).unwrap();
        let (y, _) = maxpool_forward(&x, 2, 2, Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 3]);
        assert!(y.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn odd_dims_truncate() {
        let x = Tensor::<f64>::zeros(&[1, 1, 5, 7]).unwrap();
        let (y, _) = maxpool_forward(&x, 2, 2, Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 3]);
    }

    #[test]
    fn matches_window_scan_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::from_vec(
            &[1, 1, 4, 6],
            (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let (y, _) = maxpool_forward(&x, 2, 2, Padding::Valid).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                let mut m = f64::NEG_INFINITY;
                for u in 0..2 {
                    for v in 0..2 {
                        m = m.max(x.data()[x.idx4(0, 0, 2 * i + u, 2 * j + v)]);
                    }
                }
                assert_eq!(y.data()[y.idx4(0, 0, i, j)], m);
            }
        }
    }

    #[test]
    fn backward_routes_to_argmax_only() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 4], vec![1.0, 2.0, 5.0, 5.0, 3.0, 0.0, 1.0, 1.0])
            .unwrap();
        let (_, mask) = maxpool_forward(&x, 2, 2, Padding::Valid).unwrap();
        // tie in the second window resolves to the lowest index
        assert_eq!(mask, vec![4, 2]);
        let gy = Tensor::<f64>::from_vec(&[1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let gx = maxpool_backward(&[1, 1, 2, 4], &mask, &gy).unwrap();
        assert_eq!(gx.data(), &[0.0, 0.0, 2.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn stride1_same_preserves_dims() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 3, 3], (0..9).map(|v| v as f64).collect()).unwrap();
        let (y, _) = maxpool_forward(&x, 3, 1, Padding::Same).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert_eq!(y.data()[y.idx4(0, 0, 1, 1)], 8.0);
    }
}
