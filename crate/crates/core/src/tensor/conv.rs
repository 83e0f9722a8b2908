use super::{Float, Tensor};
use crate::error::{Error, Result};

/// Test hook for the self-test negative control: corrupts conv2d weight
/// gradients while enabled.
pub mod fault {
    use std::sync::atomic::{AtomicBool, Ordering};

    static CONV_GRAD: AtomicBool = AtomicBool::new(false);

    pub fn set_conv_grad_fault(on: bool) {
        CONV_GRAD.store(on, Ordering::SeqCst);
    }

    pub fn conv_grad_fault() -> bool {
        CONV_GRAD.load(Ordering::SeqCst)
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

fn im2col<T: Float>(x: &[T], g: &Geometry, cols: &mut [T]) {
    let p = g.cols();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oh in 0..g.ho {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oh * g.wo..(oh + 1) * g.wo];
                    if ih < 0 || ih >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for (ow, v) in line.iter_mut().enumerate() {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        *v = if iw < 0 || iw >= g.w as isize { T::zero() } else { src[iw as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Float>(cols: &[T], g: &Geometry, x: &mut [T]) {
    let p = g.cols();
    for c in 0..g.c {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oh in 0..g.ho {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    for ow in 0..g.wo {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        if iw >= 0 && iw < g.w as isize {
                            plane[ih as usize * g.w + iw as usize] += src[oh * g.wo + ow];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Float> Tensor<T> {
    /// 2-D cross-correlation with zero padding. `weight` is `[outc, inc, kh, kw]`,
    /// `bias` is `[outc]`.
    pub fn conv2d(
        &self,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor<T>> {
        let (n, c, h, w) = self.dims4("conv2d")?;
        let (oc, ic, kh, kw) = weight.dims4("conv2d")?;
        if ic != c {
            return Err(Error::shape(
                "conv2d",
                format!("input has {c} channels, weight expects {ic}"),
            ));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d", "stride must be at least 1"));
        }
        if let Some(b) = bias {
            if b.shape() != [oc] {
                return Err(Error::shape("conv2d", format!("bias shape {:?} != [{oc}]", b.shape())));
            }
        }
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kh}x{kw} exceeds padded input {}x{}", h + 2 * pad, w + 2 * pad),
            ));
        }
        let g = Geometry {
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (w + 2 * pad - kw) / stride + 1,
        };
        let (rows, p) = (g.rows(), g.cols());
        let mut out = vec![T::zero(); n * oc * p];
        let mut saved_cols = Vec::with_capacity(n);
        for b in 0..n {
            let mut cols = vec![T::zero(); rows * p];
            im2col(&self.data()[b * c * h * w..(b + 1) * c * h * w], &g, &mut cols);
            let dst = &mut out[b * oc * p..(b + 1) * oc * p];
            T::gemm(oc, rows, p, weight.data(), rows as isize, 1, &cols, p as isize, 1, T::zero(), dst);
            if let Some(bias) = bias {
                for (o, &bv) in bias.data().iter().enumerate() {
                    dst[o * p..(o + 1) * p].iter_mut().for_each(|v| *v += bv);
                }
            }
            saved_cols.push(cols);
        }
        let (xc, wc) = (self.clone(), weight.clone());
        let bias_tracked = bias.is_some_and(|b| b.is_tracked());
        let mut inputs = vec![self, weight];
        if let Some(b) = bias {
            inputs.push(b);
        }
        let has_bias = bias.is_some();
        Tensor::from_op("conv2d", vec![n, oc, g.ho, g.wo], out, &inputs, move |grad| {
            let mut gx = xc.is_tracked().then(|| vec![T::zero(); n * c * h * w]);
            let mut gw = wc.is_tracked().then(|| vec![T::zero(); oc * rows]);
            let mut dcols = vec![T::zero(); rows * p];
            for b in 0..n {
                let gb = &grad[b * oc * p..(b + 1) * oc * p];
                if let Some(gw) = gw.as_mut() {
                    // dW += g_b · colsᵀ
                    let cols = &saved_cols[b];
                    T::gemm(oc, p, rows, gb, p as isize, 1, cols, 1, p as isize, T::one(), gw);
                }
                if let Some(gx) = gx.as_mut() {
                    // dcols = Wᵀ · g_b
                    T::gemm(rows, oc, p, wc.data(), 1, rows as isize, gb, p as isize, 1, T::zero(), &mut dcols);
                    col2im(&dcols, &g, &mut gx[b * c * h * w..(b + 1) * c * h * w]);
                }
            }
            if fault::conv_grad_fault() {
                if let Some(gw) = gw.as_mut() {
                    gw.iter_mut().for_each(|v| *v *= T::lit(1.5));
                }
            }
            let mut result = vec![gx, gw];
            if has_bias {
                result.push(bias_tracked.then(|| {
                    let mut gbias = vec![T::zero(); oc];
                    for b in 0..n {
                        for (o, acc) in gbias.iter_mut().enumerate() {
                            let base = (b * oc + o) * p;
                            *acc += grad[base..base + p].iter().copied().sum::<T>();
                        }
                    }
                    gbias
                }));
            }
            result
        })
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample_nearest(&self, factor: usize) -> Result<Tensor<T>> {
        let (n, c, h, w) = self.dims4("upsample_nearest")?;
        if factor == 0 {
            return Err(Error::shape("upsample_nearest", "factor must be at least 1"));
        }
        let (ho, wo) = (h * factor, w * factor);
        let mut out = Vec::with_capacity(n * c * ho * wo);
        for plane in self.data().chunks(h * w) {
            for i in 0..ho {
                let row = &plane[(i / factor) * w..(i / factor + 1) * w];
                for j in 0..wo {
                    out.push(row[j / factor]);
                }
            }
        }
        Tensor::from_op("upsample_nearest", vec![n, c, ho, wo], out, &[self], move |g| {
            let mut gx = vec![T::zero(); n * c * h * w];
            for (gp, xp) in g.chunks(ho * wo).zip(gx.chunks_mut(h * w)) {
                for i in 0..ho {
                    for j in 0..wo {
                        xp[(i / factor) * w + j / factor] += gp[i * wo + j];
                    }
                }
            }
            vec![Some(gx)]
        })
    }

    /// Nearest-neighbour decimation (keeps the top-left sample of each block).
    pub fn downsample_nearest(&self, factor: usize) -> Result<Tensor<T>> {
        let (n, c, h, w) = self.dims4("downsample_nearest")?;
        if factor == 0 {
            return Err(Error::shape("downsample_nearest", "factor must be at least 1"));
        }
        if h % factor != 0 || w % factor != 0 {
            return Err(Error::shape(
                "downsample_nearest",
                format!("extent {h}x{w} not divisible by {factor}"),
            ));
        }
        let (ho, wo) = (h / factor, w / factor);
        let mut out = Vec::with_capacity(n * c * ho * wo);
        for plane in self.data().chunks(h * w) {
            for i in 0..ho {
                for j in 0..wo {
                    out.push(plane[i * factor * w + j * factor]);
                }
            }
        }
        Tensor::from_op("downsample_nearest", vec![n, c, ho, wo], out, &[self], move |g| {
            let mut gx = vec![T::zero(); n * c * h * w];
            for (gp, xp) in g.chunks(ho * wo).zip(gx.chunks_mut(h * w)) {
                for i in 0..ho {
                    for j in 0..wo {
                        xp[i * factor * w + j * factor] = gp[i * wo + j];
                    }
                }
            }
            vec![Some(gx)]
        })
    }

    /// Mean over non-overlapping `factor x factor` blocks.
    pub fn avg_pool(&self, factor: usize) -> Result<Tensor<T>> {
        let (n, c, h, w) = self.dims4("avg_pool")?;
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(Error::shape(
                "avg_pool",
                format!("extent {h}x{w} not divisible by {factor}"),
            ));
        }
        let (ho, wo) = (h / factor, w / factor);
        let scale = T::lit(1.0 / (factor * factor) as f64);
        let mut out = vec![T::zero(); n * c * ho * wo];
        for (plane, op) in self.data().chunks(h * w).zip(out.chunks_mut(ho * wo)) {
            for i in 0..h {
                for j in 0..w {
                    op[(i / factor) * wo + j / factor] += plane[i * w + j];
                }
            }
            op.iter_mut().for_each(|v| *v *= scale);
        }
        Tensor::from_op("avg_pool", vec![n, c, ho, wo], out, &[self], move |g| {
            let mut gx = vec![T::zero(); n * c * h * w];
            for (gp, xp) in g.chunks(ho * wo).zip(gx.chunks_mut(h * w)) {
                for i in 0..h {
                    for j in 0..w {
                        xp[i * w + j] = gp[(i / factor) * wo + j / factor] * scale;
                    }
                }
            }
            vec![Some(gx)]
        })
    }
}
