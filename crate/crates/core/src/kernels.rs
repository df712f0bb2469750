//! Forward and backward kernels for the differentiable primitives.
//!
//! These are plain functions over tensors and slices; [`crate::tape::Tape`]
//! strings them together and handles gradient bookkeeping. Layout is NHWC
//! throughout, convolution weights are `[kh, kw, cin, cout]`.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Spatial padding mode for convolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Padding {
    /// Output size `ceil(in / stride)`, zero padding split evenly with the
    /// extra row/column (if any) at the bottom/right.
    Same,
    /// No padding, output size `floor((in - k) / stride) + 1`.
    Valid,
}

/// Resolved sizes of one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

fn same_padding(size: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = size.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(size);
    (out, total / 2)
}

impl ConvGeometry {
    pub fn new(
        input: &[usize],
        weight: &[usize],
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let (&[batch, height, width, in_channels], &[kernel_h, kernel_w, w_in, out_channels]) =
            (input, weight)
        else {
            return Err(Error::shape("conv2d", input, weight));
        };
        if w_in != in_channels {
            return Err(Error::shape("conv2d", input, weight));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be positive".into()));
        }
        let ((out_h, pad_top), (out_w, pad_left)) = match padding {
            Padding::Same => (
                same_padding(height, kernel_h, stride),
                same_padding(width, kernel_w, stride),
            ),
            Padding::Valid => {
                if kernel_h > height || kernel_w > width {
                    return Err(Error::WindowExceedsInput {
                        op: "conv2d",
                        kernel: kernel_h,
                        kernel_w,
                        height,
                        width,
                    });
                }
                (
                    ((height - kernel_h) / stride + 1, 0),
                    ((width - kernel_w) / stride + 1, 0),
                )
            }
        };
        Ok(Self {
            batch,
            height,
            width,
            in_channels,
            kernel_h,
            kernel_w,
            out_channels,
            stride,
            pad_top,
            pad_left,
            out_h,
            out_w,
        })
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.out_h, self.out_w, self.out_channels]
    }

    fn patch_len(&self) -> usize {
        self.kernel_h * self.kernel_w * self.in_channels
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    fn image_len(&self) -> usize {
        self.height * self.width * self.in_channels
    }

    fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1 && self.stride == 1
    }

    fn source_row(&self, out_y: usize, ky: usize) -> Option<usize> {
        (out_y * self.stride + ky)
            .checked_sub(self.pad_top)
            .filter(|&y| y < self.height)
    }

    fn source_col(&self, out_x: usize, kx: usize) -> Option<usize> {
        (out_x * self.stride + kx)
            .checked_sub(self.pad_left)
            .filter(|&x| x < self.width)
    }
}

/// Unfolds one image into a `[positions, kh*kw*cin]` patch matrix.
fn im2col<T: Element>(g: &ConvGeometry, image: &[T], cols: &mut [T]) {
    let cin = g.in_channels;
    let k = g.patch_len();
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &mut cols[(oy * g.out_w + ox) * k..][..k];
            for ky in 0..g.kernel_h {
                for kx in 0..g.kernel_w {
                    let dst = &mut row[(ky * g.kernel_w + kx) * cin..][..cin];
                    match (g.source_row(oy, ky), g.source_col(ox, kx)) {
                        (Some(y), Some(x)) => {
                            dst.copy_from_slice(&image[(y * g.width + x) * cin..][..cin])
                        }
                        _ => dst.fill(T::zero()),
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the image.
fn col2im<T: Element>(g: &ConvGeometry, cols: &[T], image: &mut [T]) {
    let cin = g.in_channels;
    let k = g.patch_len();
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &cols[(oy * g.out_w + ox) * k..][..k];
            for ky in 0..g.kernel_h {
                let Some(y) = g.source_row(oy, ky) else { continue };
                for kx in 0..g.kernel_w {
                    let Some(x) = g.source_col(ox, kx) else { continue };
                    let src = &row[(ky * g.kernel_w + kx) * cin..][..cin];
                    let dst = &mut image[(y * g.width + x) * cin..][..cin];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d = *d + *s;
                    }
                }
            }
        }
    }
}

pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(input.shape(), weight.shape(), stride, padding)?;
    if bias.shape() != [g.out_channels] {
        return Err(Error::shape("conv2d bias", bias.shape(), &[g.out_channels]));
    }
    let (p, k, cout) = (g.positions(), g.patch_len(), g.out_channels);
    let mut out = Vec::with_capacity(g.batch * p * cout);
    for _ in 0..g.batch * p {
        out.extend_from_slice(bias.data());
    }
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); p * k] };
    for n in 0..g.batch {
        let image = &input.data()[n * g.image_len()..][..g.image_len()];
        let patches: &[T] = if g.is_pointwise() {
            image
        } else {
            im2col(&g, image, &mut cols);
            &cols
        };
        T::gemm(
            p,
            k,
            cout,
            T::one(),
            (patches, k as isize, 1),
            (weight.data(), cout as isize, 1),
            T::one(),
            (&mut out[n * p * cout..][..p * cout], cout as isize, 1),
        );
    }
    Tensor::new(&g.output_shape(), out)
}

/// Gradients of a convolution: `(d_input, d_weight, d_bias)`. The input
/// gradient is skipped when `need_input` is false.
pub fn conv2d_backward<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: Padding,
    grad_out: &[T],
    need_input: bool,
) -> Result<(Option<Vec<T>>, Vec<T>, Vec<T>)> {
    let g = ConvGeometry::new(input.shape(), weight.shape(), stride, padding)?;
    let (p, k, cout) = (g.positions(), g.patch_len(), g.out_channels);
    if grad_out.len() != g.batch * p * cout {
        return Err(Error::shape("conv2d backward", &[grad_out.len()], &g.output_shape()));
    }
    let mut d_weight = vec![T::zero(); k * cout];
    let mut d_bias = vec![T::zero(); cout];
    let mut d_input = need_input.then(|| vec![T::zero(); input.len()]);
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); p * k] };
    let mut d_cols = vec![T::zero(); if need_input { p * k } else { 0 }];

    for n in 0..g.batch {
        let image = &input.data()[n * g.image_len()..][..g.image_len()];
        let dy = &grad_out[n * p * cout..][..p * cout];
        for row in dy.chunks_exact(cout) {
            for (b, v) in d_bias.iter_mut().zip(row) {
                *b = *b + *v;
            }
        }
        let patches: &[T] = if g.is_pointwise() {
            image
        } else {
            im2col(&g, image, &mut cols);
            &cols
        };
        // dW += patches^T * dy
        T::gemm(
            k,
            p,
            cout,
            T::one(),
            (patches, 1, k as isize),
            (dy, cout as isize, 1),
            T::one(),
            (&mut d_weight, cout as isize, 1),
        );
        if let Some(d_input) = d_input.as_mut() {
            let d_image = &mut d_input[n * g.image_len()..][..g.image_len()];
            if g.is_pointwise() {
                // d_image = dy * W^T directly
                T::gemm(
                    p,
                    cout,
                    k,
                    T::one(),
                    (dy, cout as isize, 1),
                    (weight.data(), 1, cout as isize),
                    T::zero(),
                    (d_image, k as isize, 1),
                );
            } else {
                T::gemm(
                    p,
                    cout,
                    k,
                    T::one(),
                    (dy, cout as isize, 1),
                    (weight.data(), 1, cout as isize),
                    T::zero(),
                    (&mut d_cols, k as isize, 1),
                );
                col2im(&g, &d_cols, d_image);
            }
        }
    }
    Ok((d_input, d_weight, d_bias))
}

/// `max(x, 0)`; NaN passes through so it can be caught downstream.
pub fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    map(x, |v| if v <= T::zero() { T::zero() } else { v })
}

/// Upstream gradient masked by `x > 0`; the subgradient at 0 is 0 and a NaN
/// input yields a NaN gradient.
pub fn relu_backward<T: Element>(x: &[T], grad_out: &[T]) -> Vec<T> {
    x.iter()
        .zip(grad_out)
        .map(|(&v, &g)| if v <= T::zero() { T::zero() } else if v.is_nan() { v } else { g })
        .collect()
}

/// Output shape of a `k x k` / stride `s` max-pool over `[n, h, w, c]`.
pub fn maxpool_output_shape(shape: &[usize], k: usize, s: usize) -> Result<[usize; 4]> {
    let &[n, h, w, c] = shape else {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "maxpool2d expects rank 4".into(),
        });
    };
    if k == 0 || s == 0 {
        return Err(Error::InvalidArgument("maxpool2d window and stride must be positive".into()));
    }
    if h < k || w < k {
        return Err(Error::WindowExceedsInput {
            op: "maxpool2d",
            kernel: k,
            kernel_w: k,
            height: h,
            width: w,
        });
    }
    Ok([n, (h - k) / s + 1, (w - k) / s + 1, c])
}

/// Max-pool forward. Also returns, for each output element, the flat input
/// index of the winning element (first in row-major window order on ties).
pub fn maxpool2d<T: Element>(x: &Tensor<T>, k: usize, s: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let out_shape = maxpool_output_shape(x.shape(), k, s)?;
    let [n, h, w, c] = x.dims4()?;
    let [_, oh, ow, _] = out_shape;
    let data = x.data();
    let mut out = Vec::with_capacity(n * oh * ow * c);
    let mut argmax = Vec::with_capacity(out.capacity());
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best_idx = ((b * h + oy * s) * w + ox * s) * c + ch;
                    let mut best = data[best_idx];
                    for ky in 0..k {
                        for kx in 0..k {
                            let idx = ((b * h + oy * s + ky) * w + ox * s + kx) * c + ch;
                            if data[idx] > best {
                                best = data[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx);
                }
            }
        }
    }
    Ok((Tensor::new(&out_shape, out)?, argmax))
}

pub fn maxpool2d_backward<T: Element>(input_len: usize, argmax: &[usize], grad_out: &[T]) -> Vec<T> {
    let mut dx = vec![T::zero(); input_len];
    for (&idx, &g) in argmax.iter().zip(grad_out) {
        dx[idx] = dx[idx] + g;
    }
    dx
}

pub fn dense<T: Element>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, din] = x.dims2()?;
    let [w_in, dout] = weight.dims2()?;
    if w_in != din {
        return Err(Error::shape("dense", x.shape(), weight.shape()));
    }
    if bias.shape() != [dout] {
        return Err(Error::shape("dense bias", bias.shape(), &[dout]));
    }
    let mut out = Vec::with_capacity(n * dout);
    for _ in 0..n {
        out.extend_from_slice(bias.data());
    }
    T::gemm(
        n,
        din,
        dout,
        T::one(),
        (x.data(), din as isize, 1),
        (weight.data(), dout as isize, 1),
        T::one(),
        (&mut out, dout as isize, 1),
    );
    Tensor::new(&[n, dout], out)
}

/// Gradients of `x * W + b`: `(d_x, d_W, d_b)`.
pub fn dense_backward<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &[T],
    need_input: bool,
) -> Result<(Option<Vec<T>>, Vec<T>, Vec<T>)> {
    let [n, din] = x.dims2()?;
    let [_, dout] = weight.dims2()?;
    let mut d_weight = vec![T::zero(); din * dout];
    T::gemm(
        din,
        n,
        dout,
        T::one(),
        (x.data(), 1, din as isize),
        (grad_out, dout as isize, 1),
        T::zero(),
        (&mut d_weight, dout as isize, 1),
    );
    let mut d_bias = vec![T::zero(); dout];
    for row in grad_out.chunks_exact(dout) {
        for (b, v) in d_bias.iter_mut().zip(row) {
            *b = *b + *v;
        }
    }
    let d_x = need_input.then(|| {
        let mut d_x = vec![T::zero(); n * din];
        T::gemm(
            n,
            dout,
            din,
            T::one(),
            (grad_out, dout as isize, 1),
            (weight.data(), 1, dout as isize),
            T::zero(),
            (&mut d_x, din as isize, 1),
        );
        d_x
    });
    Ok((d_x, d_weight, d_bias))
}

/// Logistic function in the sign-branched form, which never evaluates
/// `exp` of a positive argument.
#[inline]
pub fn sigmoid_scalar<T: Element>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    map(x, sigmoid_scalar)
}

pub fn sigmoid_backward<T: Element>(y: &[T], grad_out: &[T]) -> Vec<T> {
    y.iter()
        .zip(grad_out)
        .map(|(&s, &g)| g * s * (T::one() - s))
        .collect()
}

pub fn softmax<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, c] = x.dims2()?;
    if c < 2 {
        return Err(Error::InvalidArgument("softmax needs at least 2 classes".into()));
    }
    let mut out = x.data().to_vec();
    for row in out.chunks_exact_mut(c) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total = total + *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    Tensor::new(x.shape(), out)
}

pub fn softmax_backward<T: Element>(y: &[T], grad_out: &[T], classes: usize) -> Vec<T> {
    let mut dx = Vec::with_capacity(y.len());
    for (s, g) in y.chunks_exact(classes).zip(grad_out.chunks_exact(classes)) {
        let dot: T = s.iter().zip(g).map(|(&a, &b)| a * b).sum();
        dx.extend(s.iter().zip(g).map(|(&si, &gi)| si * (gi - dot)));
    }
    dx
}

/// Clamp applied to probabilities before taking logarithms.
pub const PROB_EPSILON: f64 = 1e-7;

fn check_one_hot<T: Element>(probs: &Tensor<T>, labels: &Tensor<T>) -> Result<[usize; 2]> {
    let dims = probs.dims2()?;
    if labels.shape() != probs.shape() {
        return Err(Error::shape("cross_entropy", probs.shape(), labels.shape()));
    }
    for (i, row) in labels.data().chunks_exact(dims[1]).enumerate() {
        let ones = row.iter().filter(|&&v| v == T::one()).count();
        let zeros = row.iter().filter(|&&v| v == T::zero()).count();
        if ones != 1 || zeros != dims[1] - 1 {
            return Err(Error::InvalidArgument(format!("label row {i} is not one-hot")));
        }
    }
    Ok(dims)
}

fn clamp_prob<T: Element>(p: T) -> (T, bool) {
    let eps = T::of(PROB_EPSILON);
    if p < eps {
        (eps, true)
    } else if p > T::one() - eps {
        (T::one() - eps, true)
    } else {
        (p, false)
    }
}

/// Categorical cross-entropy, averaged over the batch.
pub fn cross_entropy<T: Element>(probs: &Tensor<T>, labels: &Tensor<T>) -> Result<T> {
    let [n, _] = check_one_hot(probs, labels)?;
    let total: T = probs
        .data()
        .iter()
        .zip(labels.data())
        .filter(|(_, &y)| y == T::one())
        .map(|(&p, _)| -clamp_prob(p).0.ln())
        .sum();
    Ok(total / T::of(n as f64))
}

pub fn cross_entropy_backward<T: Element>(probs: &[T], labels: &[T], batch: usize, grad_out: T) -> Vec<T> {
    let scale = grad_out / T::of(batch as f64);
    probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| match clamp_prob(p) {
            (_, true) => T::zero(),
            (pc, false) => -scale * y / pc,
        })
        .collect()
}

/// Element-wise binary cross-entropy averaged over batch and units.
pub fn binary_cross_entropy<T: Element>(probs: &Tensor<T>, labels: &Tensor<T>) -> Result<T> {
    check_one_hot(probs, labels)?;
    let total: T = probs
        .data()
        .iter()
        .zip(labels.data())
        .map(|(&p, &y)| {
            let pc = clamp_prob(p).0;
            -(y * pc.ln() + (T::one() - y) * (T::one() - pc).ln())
        })
        .sum();
    Ok(total / T::of(probs.len() as f64))
}

pub fn binary_cross_entropy_backward<T: Element>(probs: &[T], labels: &[T], grad_out: T) -> Vec<T> {
    let scale = grad_out / T::of(probs.len() as f64);
    probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| match clamp_prob(p) {
            (_, true) => T::zero(),
            (pc, false) => scale * (-y / pc + (T::one() - y) / (T::one() - pc)),
        })
        .collect()
}

/// Samples an inverted-dropout keep mask.
pub fn dropout_mask(len: usize, p: f64, rng: &mut crate::rng::Rng) -> Vec<bool> {
    (0..len).map(|_| rng.uniform() >= p).collect()
}

pub fn apply_mask<T: Element>(x: &[T], mask: &[bool], scale: T) -> Vec<T> {
    x.iter()
        .zip(mask)
        .map(|(&v, &keep)| if keep { v * scale } else { T::zero() })
        .collect()
}

pub fn add<T: Element>(x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    zip(x, y, "add", |a, b| a + b)
}

pub fn mul<T: Element>(x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    zip(x, y, "mul", |a, b| a * b)
}

fn map<T: Element>(x: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor::new(x.shape(), x.data().iter().map(|&v| f(v)).collect())
        .expect("shape preserved by map")
}

fn zip<T: Element>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    op: &'static str,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if x.shape() != y.shape() {
        return Err(Error::shape(op, x.shape(), y.shape()));
    }
    Tensor::new(
        x.shape(),
        x.data().iter().zip(y.data()).map(|(&a, &b)| f(a, b)).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn degenerate_conv_is_affine() {
        let out = conv2d(
            &t(&[1, 1, 1, 1], &[3.0]),
            &t(&[1, 1, 1, 1], &[2.0]),
            &t(&[1], &[0.5]),
            1,
            Padding::Same,
        )
        .unwrap();
        assert_eq!(out.data(), &[6.5]);
    }

    #[test]
    fn zero_input_leaves_bias() {
        let x = Tensor::<f64>::zeros(&[1, 4, 4, 1]).unwrap();
        let w = Tensor::from_fn(&[3, 3, 1, 1], |i| i as f64 - 4.0).unwrap();
        let out = conv2d(&x, &w, &t(&[1], &[0.5]), 1, Padding::Same).unwrap();
        assert_eq!(out.shape(), &[1, 4, 4, 1]);
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn conv_output_sizes() {
        let g = ConvGeometry::new(&[1, 7, 7, 2], &[3, 3, 2, 4], 2, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.out_w), (4, 4));
        let g = ConvGeometry::new(&[1, 7, 6, 2], &[3, 3, 2, 4], 2, Padding::Valid).unwrap();
        assert_eq!((g.out_h, g.out_w), (3, 2));
    }

    #[test]
    fn conv_errors() {
        let err = ConvGeometry::new(&[1, 4, 4, 2], &[3, 3, 3, 4], 1, Padding::Same).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 4, 4, 2]") && msg.contains("[3, 3, 3, 4]"), "{msg}");
        assert!(matches!(
            ConvGeometry::new(&[1, 2, 2, 1], &[3, 3, 1, 1], 1, Padding::Valid),
            Err(Error::WindowExceedsInput { .. })
        ));
    }

    #[test]
    fn relu_cases() {
        let y = relu(&t(&[3], &[-1.0, 0.0, 2.0]));
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        assert_eq!(relu_backward(&[-1.0, 0.0, 2.0], &[1.0, 1.0, 1.0]), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn maxpool_basic_and_errors() {
        let (y, arg) = maxpool2d(&t(&[1, 2, 2, 1], &[1.0, 2.0, 3.0, 4.0]), 2, 2).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
        assert!(matches!(
            maxpool2d(&t(&[1, 1, 3, 1], &[1.0, 2.0, 3.0]), 2, 2),
            Err(Error::WindowExceedsInput { .. })
        ));
    }

    #[test]
    fn maxpool_ties_route_to_first() {
        let (_, arg) = maxpool2d(&t(&[1, 2, 2, 1], &[5.0; 4]), 2, 2).unwrap();
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn dense_cases() {
        let y = dense(
            &t(&[1, 2], &[1.0, 2.0]),
            &t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]),
            &t(&[2], &[0.0, 0.0]),
        )
        .unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
        let y = dense(&t(&[1, 2], &[1.0, 1.0]), &t(&[2, 1], &[1.0, 1.0]), &t(&[1], &[1.0])).unwrap();
        assert_eq!(y.data(), &[3.0]);
        assert!(dense(&t(&[1, 3], &[1.0; 3]), &t(&[2, 1], &[1.0; 2]), &t(&[1], &[0.0])).is_err());
    }

    #[test]
    fn sigmoid_is_stable_and_symmetric() {
        assert_eq!(sigmoid_scalar(0.0f64), 0.5);
        for &x in &[-800.0f64, -30.0, -1.5, 0.3, 31.0, 800.0] {
            let s = sigmoid_scalar(x);
            assert!(s.is_finite() && (0.0..=1.0).contains(&s));
            assert!((s + sigmoid_scalar(-x) - 1.0).abs() < 1e-15);
        }
        assert!(sigmoid_scalar(-800.0f32) >= 0.0);
    }

    #[test]
    fn softmax_cases() {
        let y = softmax(&t(&[1, 3], &[0.0, 0.0, 0.0])).unwrap();
        for v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = t(&[2, 3], &[0.1, -2.0, 3.0, 1000.0, 999.0, -5.0]);
        let shifted = t(&[2, 3], &x.data().iter().map(|v| v + 17.5).collect::<Vec<_>>());
        let (a, b) = (softmax(&x).unwrap(), softmax(&shifted).unwrap());
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() <= 1e-7);
        }
        assert!(softmax(&t(&[1, 1], &[1.0])).is_err());
    }

    #[test]
    fn cross_entropy_cases() {
        let labels = t(&[1, 2], &[1.0, 0.0]);
        let perfect = cross_entropy(&labels.clone(), &labels).unwrap();
        assert!((perfect - -(1.0 - PROB_EPSILON).ln()).abs() < 1e-15);
        let uniform = cross_entropy(&t(&[1, 2], &[0.5, 0.5]), &labels).unwrap();
        assert!((uniform - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(cross_entropy(&t(&[1, 2], &[0.5, 0.5]), &t(&[1, 2], &[1.0, 1.0])).is_err());
        assert!(cross_entropy(&t(&[1, 2], &[0.5, 0.5]), &t(&[1, 2], &[0.3, 0.7])).is_err());
    }

    #[test]
    fn dropout_mask_rate() {
        let mut rng = crate::rng::Rng::new(11);
        assert!(dropout_mask(1000, 0.0, &mut rng).iter().all(|&k| k));
    }
}
