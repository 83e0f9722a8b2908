use std::sync::Arc;

use super::{numel, Float, Tensor};
use crate::error::{Error, Result};

/// Result shape of trailing-dimension broadcasting.
pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i < nd - a.len() { 1 } else { a[i - (nd - a.len())] };
        let db = if i < nd - b.len() { 1 } else { b[i - (nd - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::shape(op, format!("cannot broadcast {a:?} with {b:?}")));
            }
        };
    }
    Ok(out)
}

/// For each element of `out_shape` (row-major), the flat offset of the
/// element of `in_shape` that broadcasts onto it.
pub(crate) fn broadcast_offsets(out_shape: &[usize], in_shape: &[usize]) -> Vec<usize> {
    let nd = out_shape.len();
    let pad = nd - in_shape.len();
    let mut strides = vec![0usize; nd];
    let mut s = 1;
    for d in (0..in_shape.len()).rev() {
        if in_shape[d] != 1 {
            strides[d + pad] = s;
        }
        s *= in_shape[d];
    }
    let mut offs = Vec::with_capacity(numel(out_shape));
    offs.push(0usize);
    for d in 0..nd {
        let mut next = Vec::with_capacity(offs.len() * out_shape[d]);
        for &o in &offs {
            for i in 0..out_shape[d] {
                next.push(o + i * strides[d]);
            }
        }
        offs = next;
    }
    offs
}

type Binary<T> = fn(T, T) -> T;
type BinaryGrad<T> = fn(T, T, T) -> T;

fn binary<T: Float>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: Binary<T>,
    da: BinaryGrad<T>,
    db: BinaryGrad<T>,
) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        let data: Vec<T> = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        let (ac, bc) = (a.clone(), b.clone());
        return Tensor::from_op(op, a.shape().to_vec(), data, &[a, b], move |g| {
            let ga = ac.is_tracked().then(|| {
                g.iter().zip(ac.data()).zip(bc.data()).map(|((&g, &x), &y)| da(x, y, g)).collect()
            });
            let gb = bc.is_tracked().then(|| {
                g.iter().zip(ac.data()).zip(bc.data()).map(|((&g, &x), &y)| db(x, y, g)).collect()
            });
            vec![ga, gb]
        });
    }
    let shape = broadcast_shape(op, a.shape(), b.shape())?;
    let oa = Arc::new(broadcast_offsets(&shape, a.shape()));
    let ob = Arc::new(broadcast_offsets(&shape, b.shape()));
    let (ad, bd) = (a.data(), b.data());
    let data: Vec<T> = oa.iter().zip(ob.iter()).map(|(&i, &j)| f(ad[i], bd[j])).collect();
    let (ac, bc) = (a.clone(), b.clone());
    Tensor::from_op(op, shape, data, &[a, b], move |g| {
        let (ad, bd) = (ac.data(), bc.data());
        let ga = ac.is_tracked().then(|| {
            let mut ga = vec![T::zero(); ad.len()];
            for ((&gi, &i), &j) in g.iter().zip(oa.iter()).zip(ob.iter()) {
                ga[i] += da(ad[i], bd[j], gi);
            }
            ga
        });
        let gb = bc.is_tracked().then(|| {
            let mut gb = vec![T::zero(); bd.len()];
            for ((&gi, &i), &j) in g.iter().zip(oa.iter()).zip(ob.iter()) {
                gb[j] += db(ad[i], bd[j], gi);
            }
            gb
        });
        vec![ga, gb]
    })
}

fn unary<T: Float>(
    op: &'static str,
    x: &Tensor<T>,
    f: impl Fn(T) -> T,
    df: impl Fn(T, T) -> T + Send + Sync + 'static,
) -> Result<Tensor<T>> {
    let data: Vec<T> = x.data().iter().map(|&v| f(v)).collect();
    let xc = x.clone();
    // The backward closure needs the output values for tanh/sqrt; keep a copy.
    let out = Arc::new(data.clone());
    Tensor::from_op(op, x.shape().to_vec(), data, &[x], move |g| {
        let gx = g
            .iter()
            .zip(xc.data())
            .zip(out.iter())
            .map(|((&g, &x), &y)| g * df(x, y))
            .collect();
        vec![Some(gx)]
    })
}

fn check_axes(op: &'static str, shape: &[usize], axes: &[usize]) -> Result<Vec<usize>> {
    if axes.is_empty() {
        return Err(Error::shape(op, "empty reduction axis list"));
    }
    let mut kept = shape.to_vec();
    for (i, &ax) in axes.iter().enumerate() {
        if ax >= shape.len() {
            return Err(Error::shape(op, format!("axis {ax} out of range for {shape:?}")));
        }
        if axes[..i].contains(&ax) {
            return Err(Error::shape(op, format!("axis {ax} repeated")));
        }
        kept[ax] = 1;
    }
    Ok(kept)
}

impl<T: Float> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary("add", self, other, |x, y| x + y, |_, _, g| g, |_, _, g| g)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary("sub", self, other, |x, y| x - y, |_, _, g| g, |_, _, g| -g)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary("mul", self, other, |x, y| x * y, |_, y, g| g * y, |x, _, g| g * x)
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary("div", self, other, |x, y| x / y, |_, y, g| g / y, |x, y, g| -g * x / (y * y))
    }

    pub fn add_scalar(&self, s: f64) -> Result<Tensor<T>> {
        let s = T::lit(s);
        unary("add_scalar", self, move |x| x + s, |_, _| T::one())
    }

    pub fn mul_scalar(&self, s: f64) -> Result<Tensor<T>> {
        let s = T::lit(s);
        unary("mul_scalar", self, move |x| x * s, move |_, _| s)
    }

    pub fn neg(&self) -> Result<Tensor<T>> {
        unary("neg", self, |x| -x, |_, _| -T::one())
    }

    pub fn leaky_relu(&self, slope: f64) -> Result<Tensor<T>> {
        let s = T::lit(slope);
        unary(
            "leaky_relu",
            self,
            move |x| if x > T::zero() { x } else { x * s },
            move |x, _| if x > T::zero() { T::one() } else { s },
        )
    }

    pub fn relu(&self) -> Result<Tensor<T>> {
        unary(
            "relu",
            self,
            |x| if x > T::zero() { x } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn tanh(&self) -> Result<Tensor<T>> {
        unary("tanh", self, |x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn sqrt(&self) -> Result<Tensor<T>> {
        unary("sqrt", self, |x| x.sqrt(), |_, y| T::lit(0.5) / y)
    }

    pub fn square(&self) -> Result<Tensor<T>> {
        unary("square", self, |x| x * x, |x, _| T::lit(2.0) * x)
    }

    pub fn abs(&self) -> Result<Tensor<T>> {
        unary(
            "abs",
            self,
            |x| x.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    /// Sum over `axes`; reduced axes are kept with extent 1 when `keepdim`.
    pub fn sum_axes(&self, axes: &[usize], keepdim: bool) -> Result<Tensor<T>> {
        let kept = check_axes("sum", self.shape(), axes)?;
        let offs = Arc::new(broadcast_offsets(self.shape(), &kept));
        let mut data = vec![T::zero(); numel(&kept)];
        for (&o, &v) in offs.iter().zip(self.data()) {
            data[o] += v;
        }
        let shape = if keepdim {
            kept
        } else {
            let s: Vec<usize> = self
                .shape()
                .iter()
                .enumerate()
                .filter(|(i, _)| !axes.contains(i))
                .map(|(_, &d)| d)
                .collect();
            if s.is_empty() {
                vec![1]
            } else {
                s
            }
        };
        Tensor::from_op("sum", shape, data, &[self], move |g| {
            vec![Some(offs.iter().map(|&o| g[o]).collect())]
        })
    }

    pub fn mean_axes(&self, axes: &[usize], keepdim: bool) -> Result<Tensor<T>> {
        check_axes("mean", self.shape(), axes)?;
        let count: usize = axes.iter().map(|&a| self.shape()[a]).product();
        self.sum_axes(axes, keepdim)?.mul_scalar(1.0 / count as f64)
    }

    /// Population variance (divisor = element count) over `axes`.
    pub fn variance(&self, axes: &[usize], keepdim: bool) -> Result<Tensor<T>> {
        let mu = self.mean_axes(axes, true)?;
        self.sub(&mu)?.square()?.mean_axes(axes, keepdim)
    }

    pub fn sum_all(&self) -> Result<Tensor<T>> {
        let total: T = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op("sum_all", vec![1], vec![total], &[self], move |g| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean_all(&self) -> Result<Tensor<T>> {
        self.sum_all()?.mul_scalar(1.0 / self.numel() as f64)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape()),
            ));
        }
        Tensor::from_op("reshape", shape.to_vec(), self.to_vec(), &[self], |g| {
            vec![Some(g.to_vec())]
        })
    }

    /// 2-D matrix product.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (m, k) = match *self.shape() {
            [m, k] => (m, k),
            ref s => return Err(Error::shape("matmul", format!("lhs must be 2-D, got {s:?}"))),
        };
        let (k2, n) = match *other.shape() {
            [k2, n] => (k2, n),
            ref s => return Err(Error::shape("matmul", format!("rhs must be 2-D, got {s:?}"))),
        };
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner dimensions differ: {m}x{k} · {k2}x{n}"),
            ));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.data(), k as isize, 1, other.data(), n as isize, 1, T::zero(), &mut out);
        let (a, b) = (self.clone(), other.clone());
        Tensor::from_op("matmul", vec![m, n], out, &[self, other], move |g| {
            let ga = a.is_tracked().then(|| {
                // g · bᵀ
                let mut ga = vec![T::zero(); m * k];
                T::gemm(m, n, k, g, n as isize, 1, b.data(), 1, n as isize, T::zero(), &mut ga);
                ga
            });
            let gb = b.is_tracked().then(|| {
                // aᵀ · g
                let mut gb = vec![T::zero(); k * n];
                T::gemm(k, m, n, a.data(), 1, k as isize, g, n as isize, 1, T::zero(), &mut gb);
                gb
            });
            vec![ga, gb]
        })
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let nd = first.ndim();
        if axis >= nd {
            return Err(Error::shape("concat", format!("axis {axis} out of range")));
        }
        for p in parts {
            let ok = p.ndim() == nd
                && (0..nd).all(|d| d == axis || p.shape()[d] == first.shape()[d]);
            if !ok {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} does not match {:?} off axis {axis}", p.shape(), first.shape()),
                ));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
        let tracked: Vec<bool> = parts.iter().map(|p| p.is_tracked()).collect();
        Tensor::from_op("concat", shape, data, parts, move |g| {
            let mut grads: Vec<Option<Vec<T>>> = widths
                .iter()
                .zip(&tracked)
                .map(|(&w, &t)| t.then(|| Vec::with_capacity(outer * w)))
                .collect();
            for o in 0..outer {
                let mut start = o * total;
                for (gp, &w) in grads.iter_mut().zip(&widths) {
                    if let Some(gp) = gp {
                        gp.extend_from_slice(&g[start..start + w]);
                    }
                    start += w;
                }
            }
            grads
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn elementwise_hand_values() {
        let a = t(&[2], &[1.0, 2.0]);
        let b = t(&[2], &[3.0, 4.0]);
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(a.sub(&b).unwrap().data(), &[-2.0, -2.0]);
        assert_eq!(a.mul(&t(&[2], &[1.0, 1.0])).unwrap().data(), a.data());
        assert_eq!(b.div(&a).unwrap().data(), &[3.0, 2.0]);
    }

    #[test]
    fn broadcasting_shapes_and_errors() {
        assert_eq!(broadcast_shape("t", &[2, 3, 4], &[3, 1]).unwrap(), vec![2, 3, 4]);
        assert_eq!(broadcast_shape("t", &[1, 3, 1, 1], &[2, 3, 4, 4]).unwrap(), vec![2, 3, 4, 4]);
        assert!(broadcast_shape("t", &[2, 3], &[4]).is_err());
        let a = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        let b = t(&[3], &[10., 20., 30.]);
        assert_eq!(a.add(&b).unwrap().data(), &[11., 22., 33., 14., 25., 36.]);
        assert!(a.add(&t(&[2], &[1., 2.])).is_err());
    }

    #[test]
    fn broadcast_gradient_has_leaf_shape() {
        let a = Tensor::<f64>::parameter(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::<f64>::parameter(&[1, 3], vec![1., 1., 2.]).unwrap();
        let g = a.mul(&b).unwrap().sum_all().unwrap().backward().unwrap();
        assert_eq!(g.wrt(&b).shape(), &[1, 3]);
        assert_eq!(g.get(&b).unwrap(), &[5., 7., 9.]);
        assert_eq!(g.get(&a).unwrap(), &[1., 1., 2., 1., 1., 2.]);
    }

    #[test]
    fn matmul_hand_product_and_identity() {
        let a = t(&[2, 2], &[1., 2., 3., 4.]);
        let b = t(&[2, 2], &[5., 6., 7., 8.]);
        assert_eq!(a.matmul(&b).unwrap().data(), &[19., 22., 43., 50.]);
        let eye = t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        let x = t(&[3, 2], &[1., -2., 3.5, 4., 0.5, 6.]);
        assert_eq!(eye.matmul(&x).unwrap().data(), x.data());
        assert!(a.matmul(&x).is_err());
    }

    #[test]
    fn reductions() {
        assert_eq!(t(&[1], &[-1.0]).leaky_relu(0.2).unwrap().data(), &[-0.2]);
        let c = t(&[2, 2], &[3.0; 4]);
        assert_eq!(c.variance(&[0, 1], false).unwrap().data(), &[0.0]);
        let x = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        assert_eq!(x.sum_axes(&[0], false).unwrap().data(), &[5., 7., 9.]);
        assert_eq!(x.sum_axes(&[1], true).unwrap().shape(), &[2, 1]);
        assert_eq!(x.mean_axes(&[1], false).unwrap().data(), &[2., 5.]);
        assert!(x.sum_axes(&[], false).is_err());
        assert!(x.sum_axes(&[2], false).is_err());
        assert!(x.sum_axes(&[1, 1], false).is_err());
    }

    #[test]
    fn concat_along_channels() {
        let a = t(&[1, 1, 1, 2], &[1., 2.]);
        let b = t(&[1, 2, 1, 2], &[3., 4., 5., 6.]);
        let c = Tensor::concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[1, 3, 1, 2]);
        assert_eq!(c.data(), &[1., 2., 3., 4., 5., 6.]);
        assert!(Tensor::concat(&[&a, &t(&[1, 1, 2, 1], &[0., 0.])], 1).is_err());
    }
}
