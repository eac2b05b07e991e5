//! Minimal CPU neural-network kernels: convolution via im2col + GEMM,
//! pointwise activations, nearest-neighbor upsampling, and the two
//! optimizers used by the trainers. Everything is f32, single-threaded
//! and deterministic given a seeded RNG.

use ndarray::{Array2, Array3, Array4, ArrayD, ArrayView3, Axis};
use rand::Rng;

pub type T4 = Array4<f32>;

/// A named trainable tensor with its gradient and optimizer state.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: ArrayD<f32>,
    pub grad: ArrayD<f32>,
    pub m: ArrayD<f32>,
    pub v: ArrayD<f32>,
}

impl Param {
    pub fn new(name: impl Into<String>, value: ArrayD<f32>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        let m = ArrayD::zeros(value.raw_dim());
        let v = ArrayD::zeros(value.raw_dim());
        Param {
            name: name.into(),
            value,
            grad,
            m,
            v,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// 3x3-style convolution with same-padding for odd kernels.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: Param,
    pub b: Param,
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(
        rng: &mut impl Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
    ) -> Self {
        let fan_in = (in_ch * k * k) as f32;
        let gain = 2.0f32.sqrt();
        let limit = (3.0f32).sqrt() * gain / fan_in.sqrt();
        let w = ArrayD::from_shape_fn(
            ndarray::IxDyn(&[out_ch, in_ch, k, k]),
            |_| rng.gen_range(-limit..limit),
        );
        let b = ArrayD::zeros(ndarray::IxDyn(&[out_ch]));
        Conv2d {
            w: Param::new(format!("{name}.w"), w),
            b: Param::new(format!("{name}.b"), b),
            in_ch,
            out_ch,
            k,
            stride,
            pad: (k - 1) / 2,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    pub fn forward(&self, x: &T4) -> T4 {
        let (n, c, h, w) = x.dim();
        debug_assert_eq!(c, self.in_ch);
        let (oh, ow) = self.out_hw(h, w);
        let wmat = self
            .w
            .value
            .view()
            .into_shape_with_order((self.out_ch, self.in_ch * self.k * self.k))
            .expect("contiguous weights");
        let bias = self
            .b
            .value
            .view()
            .into_shape_with_order(self.out_ch)
            .expect("contiguous bias");
        let mut y = T4::zeros((n, self.out_ch, oh, ow));
        for ni in 0..n {
            let col = im2col(x.index_axis(Axis(0), ni), self.k, self.stride, self.pad);
            let mut ymat = wmat.dot(&col);
            for (oc, mut row) in ymat.rows_mut().into_iter().enumerate() {
                row += bias[oc];
            }
            y.index_axis_mut(Axis(0), ni).assign(
                &ymat
                    .into_shape_with_order((self.out_ch, oh, ow))
                    .expect("shape"),
            );
        }
        y
    }

    /// Accumulates parameter gradients and returns dL/dx. `x` must be the
    /// same tensor passed to the matching `forward`.
    pub fn backward(&mut self, x: &T4, dy: &T4) -> T4 {
        let (n, ..) = x.dim();
        let (_, _, oh, ow) = dy.dim();
        let ckk = self.in_ch * self.k * self.k;
        let wmat = self
            .w
            .value
            .view()
            .into_shape_with_order((self.out_ch, ckk))
            .expect("contiguous weights");
        let mut gw = self
            .w
            .grad
            .view_mut()
            .into_shape_with_order((self.out_ch, ckk))
            .expect("contiguous grads");
        let mut gb = self
            .b
            .grad
            .view_mut()
            .into_shape_with_order(self.out_ch)
            .expect("contiguous grads");
        let mut dx = T4::zeros(x.raw_dim());
        for ni in 0..n {
            let col = im2col(x.index_axis(Axis(0), ni), self.k, self.stride, self.pad);
            let dymat = dy
                .index_axis(Axis(0), ni)
                .into_shape_with_order((self.out_ch, oh * ow))
                .expect("contiguous dy");
            gw += &dymat.dot(&col.t());
            gb += &dymat.sum_axis(Axis(1));
            let dcol = wmat.t().dot(&dymat);
            col2im(
                &dcol,
                dx.index_axis_mut(Axis(0), ni),
                self.k,
                self.stride,
                self.pad,
            );
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.w, &self.b]
    }
}

/// Unfold one image [C,H,W] into a [C*k*k, OH*OW] patch matrix.
fn im2col(x: ArrayView3<f32>, k: usize, stride: usize, pad: usize) -> Array2<f32> {
    let (c, h, w) = x.dim();
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut col = Array2::zeros((c * k * k, oh * ow));
    for ci in 0..c {
        let plane = x.index_axis(Axis(0), ci);
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let mut out_row = col.row_mut(row);
                let out = out_row.as_slice_mut().expect("row contiguous");
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = plane.row(iy as usize);
                    let src = src.as_slice().expect("plane contiguous");
                    let base = oy * ow;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            out[base + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Fold a patch-gradient matrix back onto the (unpadded) image gradient.
fn col2im(
    dcol: &Array2<f32>,
    mut dx: ndarray::ArrayViewMut3<f32>,
    k: usize,
    stride: usize,
    pad: usize,
) {
    let (c, h, w) = dx.dim();
    let ow = (w + 2 * pad - k) / stride + 1;
    let oh = (h + 2 * pad - k) / stride + 1;
    for ci in 0..c {
        let mut plane = dx.index_axis_mut(Axis(0), ci);
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src_row = dcol.row(row);
                let src = src_row.as_slice().expect("row contiguous");
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let mut dst = plane.row_mut(iy as usize);
                    let dst = dst.as_slice_mut().expect("plane contiguous");
                    let base = oy * ow;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += src[base + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Leaky ReLU with fixed negative slope.
#[derive(Debug, Clone, Copy)]
pub struct LeakyRelu {
    pub slope: f32,
}

impl LeakyRelu {
    pub fn new(slope: f32) -> Self {
        LeakyRelu { slope }
    }

    pub fn forward(&self, x: &T4) -> T4 {
        x.mapv(|v| if v > 0.0 { v } else { self.slope * v })
    }

    pub fn backward(&self, x: &T4, dy: &T4) -> T4 {
        let mut dx = dy.clone();
        dx.zip_mut_with(x, |d, &xv| {
            if xv <= 0.0 {
                *d *= self.slope;
            }
        });
        dx
    }
}

/// Maps activations to (0,1) via 0.5*(tanh(x)+1); used as image output head.
#[derive(Debug, Clone, Copy)]
pub struct Tanh01;

impl Tanh01 {
    pub fn forward(&self, x: &T4) -> T4 {
        x.mapv(|v| 0.5 * (v.tanh() + 1.0))
    }

    /// `y` is this layer's cached forward output.
    pub fn backward(&self, y: &T4, dy: &T4) -> T4 {
        let mut dx = dy.clone();
        dx.zip_mut_with(y, |d, &yv| {
            let t = 2.0 * yv - 1.0;
            *d *= 0.5 * (1.0 - t * t);
        });
        dx
    }
}

/// Nearest-neighbor 2x upsampling.
#[derive(Debug, Clone, Copy)]
pub struct Upsample2x;

impl Upsample2x {
    pub fn forward(&self, x: &T4) -> T4 {
        let (n, c, h, w) = x.dim();
        let mut y = T4::zeros((n, c, h * 2, w * 2));
        for ni in 0..n {
            for ci in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        let v = x[[ni, ci, i, j]];
                        y[[ni, ci, 2 * i, 2 * j]] = v;
                        y[[ni, ci, 2 * i, 2 * j + 1]] = v;
                        y[[ni, ci, 2 * i + 1, 2 * j]] = v;
                        y[[ni, ci, 2 * i + 1, 2 * j + 1]] = v;
                    }
                }
            }
        }
        y
    }

    pub fn backward(&self, dy: &T4) -> T4 {
        let (n, c, h2, w2) = dy.dim();
        let (h, w) = (h2 / 2, w2 / 2);
        let mut dx = T4::zeros((n, c, h, w));
        for ni in 0..n {
            for ci in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        dx[[ni, ci, i, j]] = dy[[ni, ci, 2 * i, 2 * j]]
                            + dy[[ni, ci, 2 * i, 2 * j + 1]]
                            + dy[[ni, ci, 2 * i + 1, 2 * j]]
                            + dy[[ni, ci, 2 * i + 1, 2 * j + 1]];
                    }
                }
            }
        }
        dx
    }
}

/// Adam with bias correction and optional decoupled weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    t: u64,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            t: 0,
        }
    }

    pub fn with_betas(lr: f32, beta1: f32, beta2: f32) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay: 0.0,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [&mut Param]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for p in params.iter_mut() {
            let (b1, b2, eps, lr, wd) = (self.beta1, self.beta2, self.eps, self.lr, self.weight_decay);
            ndarray::azip!((m in &mut p.m, v in &mut p.v, val in &mut p.value, &g in &p.grad) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *val -= lr * (mhat / (vhat.sqrt() + eps) + wd * *val);
            });
        }
    }
}

/// Plain momentum gradient descent; `lr` is mutable so trainers can decay it.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub lr: f32,
    pub momentum: f32,
}

impl SgdMomentum {
    pub fn new(lr: f32, momentum: f32) -> Self {
        SgdMomentum { lr, momentum }
    }

    pub fn step(&mut self, params: &mut [&mut Param]) {
        for p in params.iter_mut() {
            let (mu, lr) = (self.momentum, self.lr);
            ndarray::azip!((m in &mut p.m, val in &mut p.value, &g in &p.grad) {
                *m = mu * *m + g;
                *val -= lr * *m;
            });
        }
    }
}

pub fn zero_grads(params: &mut [&mut Param]) {
    for p in params.iter_mut() {
        p.zero_grad();
    }
}

/// Stack H×W×3 images (values [0,1]) into an N×3×H×W batch.
pub fn to_nchw(images: &[&Array3<f32>]) -> T4 {
    let (h, w) = (images[0].shape()[0], images[0].shape()[1]);
    let mut out = T4::zeros((images.len(), 3, h, w));
    for (ni, img) in images.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    out[[ni, c, y, x]] = img[[y, x, c]];
                }
            }
        }
    }
    out
}

/// Single N=1 CHW tensor back to H×W×3.
pub fn to_hwc(x: &T4) -> Array3<f32> {
    let (_, c, h, w) = x.dim();
    debug_assert_eq!(c, 3);
    let mut out = Array3::zeros((h, w, 3));
    for y in 0..h {
        for xx in 0..w {
            for ci in 0..3 {
                out[[y, xx, ci]] = x[[0, ci, y, xx]];
            }
        }
    }
    out
}

/// Row-wise softmax of a logits matrix; each row sums to 1 within f32
/// accumulation error.
pub fn softmax_rows(logits: &Array2<f32>) -> Array2<f32> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean of all elements.
pub fn mean(x: &T4) -> f32 {
    x.sum() / x.len() as f32
}

/// Mean squared error against a constant target plus its input gradient
/// (d/dx of the mean); the least-squares adversarial objective.
pub fn mse_const(x: &T4, target: f32) -> (f32, T4) {
    let n = x.len() as f32;
    let mut grad = x.clone();
    let mut loss = 0.0;
    grad.mapv_inplace(|v| {
        let d = v - target;
        loss += d * d;
        2.0 * d
    });
    grad.mapv_inplace(|g| g / n);
    (loss / n, grad)
}

/// Mean absolute difference plus gradients w.r.t. the first argument.
pub fn l1_loss(x: &T4, target: &T4) -> (f32, T4) {
    let n = x.len() as f32;
    let mut grad = T4::zeros(x.raw_dim());
    let mut loss = 0.0;
    ndarray::azip!((g in &mut grad, &a in x, &b in target) {
        let d = a - b;
        loss += d.abs();
        let sign = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        *g = sign / n;
    });
    (loss / n, grad)
}

pub fn param_count(params: &[&Param]) -> usize {
    params.iter().map(|p| p.len()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central-difference check of dL/dx and dL/dw for a scalar loss
    /// L = sum(f(x) * coeffs). f32 noise bounds the achievable tolerance;
    /// index or sign errors blow past it by orders of magnitude.
    fn check_conv_grads(k: usize, stride: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut conv = Conv2d::new(&mut rng, "c", 2, 3, k, stride);
        let x = T4::from_shape_fn((1, 2, 7, 6), |_| rng.gen_range(-1.0..1.0f32));
        let (oh, ow) = conv.out_hw(7, 6);
        let coeffs = T4::from_shape_fn((1, 3, oh, ow), |_| rng.gen_range(-1.0..1.0f32));

        let loss = |conv: &Conv2d, x: &T4| -> f32 { (&conv.forward(x) * &coeffs).sum() };

        zero_grads(&mut conv.params_mut());
        let dx = conv.backward(&x, &coeffs);

        let eps = 1e-2f32;
        // dL/dx at a few positions
        for &(ci, yy, xx) in &[(0usize, 0usize, 0usize), (1, 3, 2), (0, 6, 5)] {
            let mut xp = x.clone();
            xp[[0, ci, yy, xx]] += eps;
            let mut xm = x.clone();
            xm[[0, ci, yy, xx]] -= eps;
            let num = (loss(&conv, &xp) - loss(&conv, &xm)) / (2.0 * eps);
            let ana = dx[[0, ci, yy, xx]];
            assert!(
                (num - ana).abs() <= 1e-3 + 0.02 * num.abs().max(ana.abs()),
                "dx mismatch at {ci},{yy},{xx}: num {num} vs ana {ana}"
            );
        }
        // dL/dw at a few positions
        for flat in [0usize, 5, 11] {
            let idx: Vec<usize> = {
                let dims = conv.w.value.shape().to_vec();
                let mut rem = flat;
                let mut out = vec![0; 4];
                for d in (0..4).rev() {
                    out[d] = rem % dims[d];
                    rem /= dims[d];
                }
                out
            };
            let orig = conv.w.value[idx.as_slice()];
            conv.w.value[idx.as_slice()] = orig + eps;
            let lp = loss(&conv, &x);
            conv.w.value[idx.as_slice()] = orig - eps;
            let lm = loss(&conv, &x);
            conv.w.value[idx.as_slice()] = orig;
            let num = (lp - lm) / (2.0 * eps);
            let ana = conv.w.grad[idx.as_slice()];
            assert!(
                (num - ana).abs() <= 1e-3 + 0.02 * num.abs().max(ana.abs()),
                "dw mismatch at {idx:?}: num {num} vs ana {ana}"
            );
        }
    }

    #[test]
    fn conv_gradcheck_stride1() {
        check_conv_grads(3, 1);
    }

    #[test]
    fn conv_gradcheck_stride2() {
        check_conv_grads(3, 2);
    }

    #[test]
    fn conv_matches_direct_computation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Conv2d::new(&mut rng, "c", 1, 1, 3, 1);
        let x = T4::from_shape_fn((1, 1, 4, 4), |_| rng.gen_range(-1.0..1.0f32));
        let y = conv.forward(&x);
        assert_eq!(y.dim(), (1, 1, 4, 4));
        // Direct dot at an interior position.
        let mut expect = conv.b.value[[0]];
        for ky in 0..3 {
            for kx in 0..3 {
                expect += conv.w.value[[0, 0, ky, kx]] * x[[0, 0, 1 + ky - 1, 1 + kx - 1]];
            }
        }
        assert!((y[[0, 0, 1, 1]] - expect).abs() < 1e-5);
    }

    #[test]
    fn upsample_roundtrip_grad() {
        let up = Upsample2x;
        let x = T4::from_shape_fn((1, 2, 3, 3), |(_, c, i, j)| (c * 9 + i * 3 + j) as f32);
        let y = up.forward(&x);
        assert_eq!(y.dim(), (1, 2, 6, 6));
        assert_eq!(y[[0, 1, 5, 5]], x[[0, 1, 2, 2]]);
        let dy = T4::ones((1, 2, 6, 6));
        let dx = up.backward(&dy);
        assert!(dx.iter().all(|&v| v == 4.0));
    }

    #[test]
    fn leaky_relu_grad() {
        let act = LeakyRelu::new(0.2);
        let x = T4::from_shape_fn((1, 1, 2, 2), |(_, _, i, j)| {
            [[1.5f32, -0.5], [0.0, 2.0]][i][j]
        });
        let dy = T4::ones((1, 1, 2, 2));
        let dx = act.backward(&x, &dy);
        assert_eq!(dx[[0, 0, 0, 0]], 1.0);
        assert_eq!(dx[[0, 0, 0, 1]], 0.2);
        assert_eq!(dx[[0, 0, 1, 0]], 0.2);
    }

    #[test]
    fn tanh01_range_and_grad() {
        let act = Tanh01;
        let x = T4::from_shape_fn((1, 1, 1, 3), |(_, _, _, j)| [-5.0f32, 0.0, 5.0][j]);
        let y = act.forward(&x);
        assert!(y.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!((y[[0, 0, 0, 1]] - 0.5).abs() < 1e-7);
        let eps = 1e-2f32;
        let xp = x.mapv(|v| v + eps);
        let xm = x.mapv(|v| v - eps);
        let num = (&act.forward(&xp) - &act.forward(&xm)) / (2.0 * eps);
        let dx = act.backward(&y, &T4::ones(x.raw_dim()));
        for (a, b) in dx.iter().zip(num.iter()) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits = Array2::from_shape_fn((5, 4), |(i, j)| (i * j) as f32 - 3.0);
        let p = softmax_rows(&logits);
        for row in p.rows() {
            let s: f32 = row.sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn adam_reduces_quadratic() {
        let mut p = Param::new("x", ArrayD::from_elem(ndarray::IxDyn(&[2]), 3.0f32));
        let mut opt = Adam::new(0.1);
        for _ in 0..200 {
            p.grad.assign(&(&p.value * 2.0));
            opt.step(&mut [&mut p]);
        }
        assert!(p.value.iter().all(|v| v.abs() < 0.05));
    }

    #[test]
    fn sgd_momentum_reduces_quadratic() {
        let mut p = Param::new("x", ArrayD::from_elem(ndarray::IxDyn(&[2]), 3.0f32));
        let mut opt = SgdMomentum::new(0.05, 0.9);
        for _ in 0..200 {
            p.grad.assign(&(&p.value * 2.0));
            opt.step(&mut [&mut p]);
        }
        assert!(p.value.iter().all(|v| v.abs() < 0.05));
    }

    #[test]
    fn l1_and_mse_gradients() {
        let x = T4::from_shape_fn((1, 1, 2, 2), |(_, _, i, j)| [[0.3f32, -0.7], [0.0, 1.2]][i][j]);
        let t = T4::zeros((1, 1, 2, 2));
        let (loss, g) = l1_loss(&x, &t);
        assert!((loss - (0.3 + 0.7 + 0.0 + 1.2) / 4.0).abs() < 1e-6);
        assert_eq!(g[[0, 0, 0, 0]], 0.25);
        assert_eq!(g[[0, 0, 0, 1]], -0.25);

        let (mloss, mg) = mse_const(&x, 1.0);
        let expect = ((0.3f32 - 1.0).powi(2) + (1.7f32).powi(2) + 1.0 + (0.2f32).powi(2)) / 4.0;
        assert!((mloss - expect).abs() < 1e-6);
        assert!((mg[[0, 0, 1, 1]] - 2.0 * 0.2 / 4.0).abs() < 1e-6);
    }
}
