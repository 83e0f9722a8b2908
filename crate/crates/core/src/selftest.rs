//! Gradient-check, loop-oracle and invariant suites, shared by the `selftest`
//! command and the acceptance tests.
//!
//! Oracles here are written as plain index loops over `f64` copies of the
//! inputs and never call the tensor ops they check.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::evaluation::{fit_gaussian, frechet_distance, inception_score, jacobi_eigen, GaussianFit};
use crate::gradcheck::{check, project};
use crate::layers::{BatchNorm, ConvLayer, ConvSpec, Init, InstanceNorm, Module, StateKind, NORM_EPS};
use crate::losses::{
    feature_matching_loss, hinge_d_loss, hinge_g_loss, perceptual_loss, ConvFeatureExtractor, Distance,
    PERCEPTUAL_WEIGHTS,
};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::{Float, Tensor};
use crate::transforms::{fadain, FadeModule};

/// Finite-difference step of the gradient suite.
pub const GRAD_STEP: f64 = 1e-4;
/// Largest accepted relative error of the gradient suite.
pub const GRAD_TOL: f64 = 1e-4;
/// Oracle tolerance for `f64`, relative to `max(1, |reference|)`.
pub const ORACLE_TOL_F64: f64 = 1e-10;
/// Oracle tolerance for `f32`, relative to `max(1, |reference|)`.
pub const ORACLE_TOL_F32: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct CaseResult {
    /// `op/detail`; the part before `/` groups cases per operation.
    pub name: String,
    pub ok: bool,
    pub detail: String,
}

impl CaseResult {
    pub fn op(&self) -> &str {
        self.name.split('/').next().unwrap_or(&self.name)
    }
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: Vec<CaseResult>,
}

impl SuiteReport {
    fn new(name: &'static str) -> Self {
        SuiteReport { name, cases: Vec::new() }
    }

    fn record(&mut self, name: String, outcome: Result<(bool, String)>) {
        let (ok, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        self.cases.push(CaseResult { name, ok, detail });
    }

    pub fn passed(&self) -> usize {
        self.cases.iter().filter(|c| c.ok).count()
    }

    pub fn failures(&self) -> impl Iterator<Item = &CaseResult> {
        self.cases.iter().filter(|c| !c.ok)
    }

    pub fn all_passed(&self) -> bool {
        self.cases.iter().all(|c| c.ok)
    }

    /// Number of cases per operation group.
    pub fn counts_by_op(&self) -> std::collections::BTreeMap<String, usize> {
        let mut m = std::collections::BTreeMap::new();
        for c in &self.cases {
            *m.entry(c.op().to_string()).or_insert(0) += 1;
        }
        m
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}: {} passed, {} failed", self.name, self.passed(), self.cases.len() - self.passed())?;
        for c in self.failures() {
            writeln!(f, "  FAILED {}: {}", c.name, c.detail)?;
        }
        Ok(())
    }
}

fn uniform(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn rand_t<T: Float>(shape: &[usize], seed: u64) -> Tensor<T> {
    Tensor::from_f64(shape, &uniform(shape.iter().product(), -1.0, 1.0, seed)).expect("valid shape")
}

/// Values bounded away from zero, for denominators and square roots.
fn positive_t(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::from_f64(shape, &uniform(shape.iter().product(), 0.5, 1.5, seed)).expect("valid shape")
}

// ---------------------------------------------------------------- gradients

const SHAPES: [[usize; 4]; 5] = [[1, 1, 3, 3], [2, 3, 4, 4], [1, 2, 5, 3], [2, 1, 6, 6], [3, 2, 2, 4]];
const EVEN_SHAPES: [[usize; 4]; 5] = [[1, 1, 2, 2], [2, 3, 4, 4], [1, 2, 6, 4], [2, 1, 8, 8], [3, 2, 2, 6]];

fn grad_case<F>(suite: &mut SuiteReport, name: String, inputs: Vec<Tensor<f64>>, f: F)
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let seed = suite.cases.len() as u64;
    let outcome = check(|xs| project(&f(xs)?, seed), &inputs, GRAD_STEP).map(|r| {
        let ok = r.checked > 0 && r.passes(GRAD_TOL);
        (ok, format!("{} elements, max rel err {:.3e} at {:?}", r.checked, r.max_rel_err, r.worst))
    });
    suite.record(name, outcome);
}

/// First input drawn from `seed`, `seed + 1000`, ... whose extractor
/// pre-activations all lie at least `10 * GRAD_STEP` from the ReLU kink, so
/// central differences never straddle it.
fn clear_of_kinks(fx: &ConvFeatureExtractor<f64>, shape: &[usize], seed: u64) -> Tensor<f64> {
    let margin = 10.0 * GRAD_STEP;
    (0..100)
        .map(|attempt| rand_t(shape, seed + 1000 * attempt))
        .find(|x| {
            let mut h = x.clone();
            fx.stages.iter().enumerate().all(|(i, (w, b))| {
                let Ok(pre) = h.conv2d(w, Some(b), if i == 0 { 1 } else { 2 }, 1) else { return false };
                let clear = pre.data().iter().all(|v| v.abs() >= margin);
                h = pre.relu().expect("finite");
                clear
            })
        })
        .unwrap_or_else(|| rand_t(shape, seed))
}

type Unary = fn(&Tensor<f64>) -> Result<Tensor<f64>>;

/// Central finite differences against autodiff for every differentiable op,
/// both feature transforms and the losses, on five shapes each.
pub fn gradient_suite() -> SuiteReport {
    let mut s = SuiteReport::new("gradient");
    let unary: [(&str, Unary, bool); 13] = [
        ("neg", |x| x.neg(), false),
        ("add_scalar", |x| x.add_scalar(0.7), false),
        ("mul_scalar", |x| x.mul_scalar(-1.3), false),
        ("leaky_relu", |x| x.leaky_relu(0.2), false),
        ("relu", |x| x.relu(), false),
        ("tanh", |x| x.tanh(), false),
        ("sqrt", |x| x.sqrt(), true),
        ("square", |x| x.square(), false),
        ("abs", |x| x.abs(), false),
        ("sum_axes", |x| x.sum_axes(&[0, 2, 3], true), false),
        ("mean_axes", |x| x.mean_axes(&[2, 3], false), false),
        ("variance", |x| x.variance(&[0, 2, 3], true), false),
        ("mean_all", |x| x.mean_all(), false),
    ];
    for (name, op, positive) in unary {
        for (i, shape) in SHAPES.iter().enumerate() {
            let x = if positive { positive_t(shape, 100 + i as u64) } else { rand_t(shape, 100 + i as u64) };
            grad_case(&mut s, format!("{name}/{shape:?}"), vec![x], |xs| op(&xs[0]));
        }
    }
    for (i, shape) in SHAPES.iter().enumerate() {
        let seed = 200 + i as u64;
        grad_case(&mut s, format!("sum_all/{shape:?}"), vec![rand_t(shape, seed)], |xs| xs[0].sum_all()?.mul_scalar(0.5));
        grad_case(&mut s, format!("reshape/{shape:?}"), vec![rand_t(shape, seed)], |xs| {
            xs[0].reshape(&[shape[0], shape[1] * shape[2] * shape[3]])
        });
        // odd cases broadcast a per-channel operand
        let other = if i % 2 == 0 { shape.to_vec() } else { vec![1, shape[1], 1, 1] };
        type Binary = fn(&Tensor<f64>, &Tensor<f64>) -> Result<Tensor<f64>>;
        let binary: [(&str, Binary); 4] =
            [("add", |a, b| a.add(b)), ("sub", |a, b| a.sub(b)), ("mul", |a, b| a.mul(b)), ("div", |a, b| a.div(b))];
        for (name, op) in binary {
            let b = if name == "div" { positive_t(&other, seed + 1) } else { rand_t(&other, seed + 1) };
            grad_case(&mut s, format!("{name}/{shape:?}x{other:?}"), vec![rand_t(shape, seed), b], |xs| op(&xs[0], &xs[1]));
        }
        let extra = [shape[0], i + 1, shape[2], shape[3]];
        grad_case(&mut s, format!("concat/{shape:?}+{extra:?}"), vec![rand_t(shape, seed), rand_t(&extra, seed + 2)], |xs| {
            Tensor::concat(&[&xs[0], &xs[1]], 1)
        });
    }
    for (i, &(m, k, n)) in [(1, 1, 1), (2, 3, 4), (5, 2, 3), (3, 4, 1), (4, 4, 4)].iter().enumerate() {
        let seed = 300 + i as u64;
        grad_case(&mut s, format!("matmul/{m}x{k}x{n}"), vec![rand_t(&[m, k], seed), rand_t(&[k, n], seed + 1)], |xs| {
            xs[0].matmul(&xs[1])
        });
    }
    let convs = [
        (1, 1, 3, 3, 1, 1, 1, 0),
        (2, 2, 5, 5, 3, 3, 1, 1),
        (1, 3, 6, 6, 2, 4, 2, 2),
        (1, 2, 7, 5, 2, 3, 2, 1),
        (2, 1, 4, 4, 2, 7, 1, 3),
    ];
    for (i, &(n, c, h, w, oc, k, stride, pad)) in convs.iter().enumerate() {
        let seed = 400 + 3 * i as u64;
        let inputs = vec![rand_t(&[n, c, h, w], seed), rand_t(&[oc, c, k, k], seed + 1), rand_t(&[oc], seed + 2)];
        grad_case(&mut s, format!("conv2d/x[{n},{c},{h},{w}] k{k} s{stride} p{pad}"), inputs, move |xs| {
            xs[0].conv2d(&xs[1], Some(&xs[2]), stride, pad)
        });
    }
    for (i, shape) in EVEN_SHAPES.iter().enumerate() {
        let seed = 500 + i as u64;
        grad_case(&mut s, format!("upsample_nearest/{shape:?}"), vec![rand_t(shape, seed)], |xs| xs[0].upsample_nearest(2));
        grad_case(&mut s, format!("downsample_nearest/{shape:?}"), vec![rand_t(shape, seed)], |xs| {
            xs[0].downsample_nearest(2)
        });
        grad_case(&mut s, format!("avg_pool/{shape:?}"), vec![rand_t(shape, seed)], |xs| xs[0].avg_pool(2));
    }
    for (i, shape) in SHAPES.iter().enumerate() {
        let seed = 600 + i as u64;
        grad_case(&mut s, format!("instance_norm/{shape:?}"), vec![rand_t(shape, seed)], |xs| {
            InstanceNorm::default().forward(&xs[0])
        });
        grad_case(&mut s, format!("batch_norm/{shape:?}"), vec![rand_t(shape, seed)], |xs| {
            BatchNorm::new(xs[0].shape()[1])?.forward(&xs[0], true)
        });
    }
    let sn_specs = [(1, 1, 1), (2, 3, 3), (4, 2, 3), (3, 1, 4), (2, 2, 1)];
    for (i, &(oc, ic, k)) in sn_specs.iter().enumerate() {
        let seed = 700 + i as u64;
        let spec = ConvSpec::new(ic, oc, k, 1, k / 2);
        let inputs = vec![rand_t(&[oc, ic, k, k], seed), rand_t(&[1, ic, 4, 4], seed + 1)];
        grad_case(&mut s, format!("spectral_norm/w[{oc},{ic},{k},{k}]"), inputs, move |xs| {
            let mut layer = ConvLayer::<f64>::new(spec, true, Init::default(), &mut ChaCha8Rng::seed_from_u64(seed))?;
            layer.weight = xs[0].clone();
            layer.apply(&xs[1])
        });
    }
    let fades = [(1, 1, 1, 3, 3), (2, 2, 3, 4, 4), (2, 3, 2, 3, 5), (1, 2, 2, 5, 5), (3, 1, 2, 2, 2)];
    for (i, &(n, normc, featc, h, w)) in fades.iter().enumerate() {
        let seed = 800 + 4 * i as u64;
        let inputs = vec![
            rand_t(&[n, normc, h, w], seed),
            rand_t(&[n, featc, h, w], seed + 1),
            rand_t(&[normc, featc, 3, 3], seed + 2),
            rand_t(&[normc, featc, 3, 3], seed + 3),
        ];
        grad_case(&mut s, format!("fade/z[{n},{normc},{h},{w}] f{featc}"), inputs, move |xs| {
            let mut m = FadeModule::<f64>::new(normc, featc, false, &mut ChaCha8Rng::seed_from_u64(seed))?;
            m.gamma_conv.weight = xs[2].clone();
            m.beta_conv.weight = xs[3].clone();
            m.forward(&xs[0], &xs[1], true)
        });
    }
    let fadains = [(1, 1, 3, 3, 3, 3), (2, 3, 4, 4, 2, 2), (1, 2, 5, 3, 4, 6), (2, 2, 2, 2, 3, 3), (3, 1, 4, 2, 2, 4)];
    for (i, &(n, c, zh, zw, sh, sw)) in fadains.iter().enumerate() {
        let seed = 900 + i as u64;
        let inputs = vec![rand_t(&[n, c, zh, zw], seed), rand_t(&[n, c, sh, sw], seed + 1)];
        grad_case(&mut s, format!("fadain/z[{n},{c},{zh},{zw}] s[{sh},{sw}]"), inputs, |xs| {
            fadain(&xs[0], &xs[1], NORM_EPS)
        });
    }
    for (i, shape) in SHAPES.iter().enumerate() {
        let seed = 1000 + i as u64;
        let scales = 1 + i % 3;
        let fakes: Vec<Tensor<f64>> = (0..scales).map(|j| rand_t(shape, seed + 10 * j as u64)).collect();
        let reals: Vec<Tensor<f64>> = (0..scales).map(|j| rand_t(shape, seed + 10 * j as u64 + 5)).collect();
        let (r, k) = (reals.clone(), scales);
        grad_case(&mut s, format!("hinge_d/{scales}x{shape:?}"), fakes.clone(), move |xs| hinge_d_loss(&r[..k], xs));
        grad_case(&mut s, format!("hinge_g/{scales}x{shape:?}"), fakes.clone(), hinge_g_loss);
        let real_taps: Vec<Vec<Tensor<f64>>> = reals.iter().map(|t| vec![t.clone(), t.mul_scalar(0.5).unwrap()]).collect();
        grad_case(&mut s, format!("feature_matching/{scales}x{shape:?}"), fakes, move |xs| {
            let fake_taps: Vec<Vec<Tensor<f64>>> =
                xs.iter().map(|t| Ok(vec![t.clone(), t.square()?])).collect::<Result<_>>()?;
            feature_matching_loss(&fake_taps, &real_taps, Distance::L1)
        });
    }
    let fx = ConvFeatureExtractor::<f64>::seeded(3).expect("seeded extractor");
    for (i, &(h, w)) in [(4, 4), (8, 8), (6, 10), (5, 7), (8, 4)].iter().enumerate() {
        let seed = 1100 + i as u64;
        let target = rand_t(&[1, 3, h, w], seed + 1);
        let input = clear_of_kinks(&fx, &[1, 3, h, w], seed);
        for dist in [Distance::L1, Distance::L2] {
            let t = target.clone();
            let fx = &fx;
            grad_case(&mut s, format!("perceptual/{dist:?} [1,3,{h},{w}]"), vec![input.clone()], move |xs| {
                perceptual_loss(fx, &xs[0], &t, dist)
            });
        }
    }
    s
}

// ------------------------------------------------------------------ oracles

#[derive(Clone, Copy)]
struct Dims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
}

impl Dims {
    fn of<T: Float>(t: &Tensor<T>) -> Self {
        let s = t.shape();
        Dims { n: s[0], c: s[1], h: s[2], w: s[3] }
    }

    fn at(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }
}

/// Zero-padded cross-correlation in plain loops.
fn conv_loop(x: &[f64], d: Dims, wt: &[f64], oc: usize, k: usize, b: &[f64], stride: usize, pad: usize) -> (Vec<f64>, Dims) {
    let ho = (d.h + 2 * pad - k) / stride + 1;
    let wo = (d.w + 2 * pad - k) / stride + 1;
    let od = Dims { n: d.n, c: oc, h: ho, w: wo };
    let mut out = vec![0.0; d.n * oc * ho * wo];
    for n in 0..d.n {
        for o in 0..oc {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = b[o];
                    for c in 0..d.c {
                        for di in 0..k {
                            for dj in 0..k {
                                let (y, xx) = ((i * stride + di) as isize - pad as isize, (j * stride + dj) as isize - pad as isize);
                                if y >= 0 && xx >= 0 && (y as usize) < d.h && (xx as usize) < d.w {
                                    acc += wt[((o * d.c + c) * k + di) * k + dj] * x[d.at(n, c, y as usize, xx as usize)];
                                }
                            }
                        }
                    }
                    out[od.at(n, o, i, j)] = acc;
                }
            }
        }
    }
    (out, od)
}

fn fade_oracle(z: &[f64], zd: Dims, f: &[f64], fd: Dims, gw: &[f64], gb: &[f64], bw: &[f64], bb: &[f64]) -> Vec<f64> {
    let (gamma, _) = conv_loop(f, fd, gw, zd.c, 3, gb, 1, 1);
    let (beta, _) = conv_loop(f, fd, bw, zd.c, 3, bb, 1, 1);
    let mut out = vec![0.0; z.len()];
    let count = (zd.n * zd.h * zd.w) as f64;
    for l in 0..zd.c {
        let mut mu = 0.0;
        for n in 0..zd.n {
            for h in 0..zd.h {
                for w in 0..zd.w {
                    mu += z[zd.at(n, l, h, w)];
                }
            }
        }
        mu /= count;
        let mut var = 0.0;
        for n in 0..zd.n {
            for h in 0..zd.h {
                for w in 0..zd.w {
                    var += (z[zd.at(n, l, h, w)] - mu).powi(2);
                }
            }
        }
        let sigma = (var / count + NORM_EPS).sqrt();
        for n in 0..zd.n {
            for h in 0..zd.h {
                for w in 0..zd.w {
                    let i = zd.at(n, l, h, w);
                    out[i] = gamma[i] * (z[i] - mu) / sigma + beta[i];
                }
            }
        }
    }
    out
}

fn instance_moments(x: &[f64], d: Dims, n: usize, c: usize) -> (f64, f64) {
    let count = (d.h * d.w) as f64;
    let mut mu = 0.0;
    for h in 0..d.h {
        for w in 0..d.w {
            mu += x[d.at(n, c, h, w)];
        }
    }
    mu /= count;
    let mut var = 0.0;
    for h in 0..d.h {
        for w in 0..d.w {
            var += (x[d.at(n, c, h, w)] - mu).powi(2);
        }
    }
    (mu, (var / count + NORM_EPS).sqrt())
}

fn fadain_oracle(z: &[f64], zd: Dims, s: &[f64], sd: Dims) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    for n in 0..zd.n {
        for c in 0..zd.c {
            let (mz, sz) = instance_moments(z, zd, n, c);
            let (ms, ss) = instance_moments(s, sd, n, c);
            for h in 0..zd.h {
                for w in 0..zd.w {
                    let i = zd.at(n, c, h, w);
                    out[i] = (z[i] - mz) / sz * ss + ms;
                }
            }
        }
    }
    out
}

fn mean_of(v: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    v.iter().map(|&x| f(x)).sum::<f64>() / v.len() as f64
}

fn mean_dist(a: &[f64], b: &[f64], dist: Distance) -> f64 {
    let total: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| match dist {
            Distance::L1 => (x - y).abs(),
            Distance::L2 => (x - y).powi(2),
        })
        .sum();
    total / a.len() as f64
}

fn extractor_oracle(stages: &[(Vec<f64>, usize, usize, Vec<f64>)], image: &[f64], d: Dims) -> Vec<Vec<f64>> {
    let mut h = image.to_vec();
    let mut hd = d;
    let mut levels = Vec::new();
    for (i, (w, oc, _ic, b)) in stages.iter().enumerate() {
        let (mut out, od) = conv_loop(&h, hd, w, *oc, 3, b, if i == 0 { 1 } else { 2 }, 1);
        out.iter_mut().for_each(|v| *v = v.max(0.0));
        levels.push(out.clone());
        h = out;
        hd = od;
    }
    levels
}

/// Largest deviation from the oracle, relative to `max(1, |reference|)`.
fn deviation(got: &[f64], want: &[f64]) -> f64 {
    if got.len() != want.len() {
        return f64::INFINITY;
    }
    got.iter().zip(want).map(|(g, w)| (g - w).abs() / w.abs().max(1.0)).fold(0.0, f64::max)
}

fn oracle_case(suite: &mut SuiteReport, name: String, tol: f64, outcome: Result<(Vec<f64>, Vec<f64>)>) {
    suite.record(
        name,
        outcome.map(|(got, want)| {
            let dev = deviation(&got, &want);
            (dev <= tol, format!("max deviation {dev:.3e} (tol {tol:.0e})"))
        }),
    );
}

fn oracle_instances<T: Float>(suite: &mut SuiteReport, tol: f64, base: u64) {
    let ty = std::any::type_name::<T>();
    for i in 0..10u64 {
        let seed = base + 100 * i;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, normc, featc) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
        let (h, w) = (rng.random_range(2..6), rng.random_range(2..6));

        oracle_case(suite, format!("fade/{ty}#{i}"), tol, (|| {
            let z = rand_t::<T>(&[n, normc, h, w], seed + 1);
            let f = rand_t::<T>(&[n, featc, h, w], seed + 2);
            let mut m = FadeModule::<T>::new(normc, featc, false, &mut ChaCha8Rng::seed_from_u64(seed + 3))?;
            m.gamma_conv.bias = rand_t(&[normc], seed + 4);
            m.beta_conv.bias = rand_t(&[normc], seed + 5);
            let got = m.forward(&z, &f, true)?.to_f64_vec();
            let want = fade_oracle(
                &z.to_f64_vec(),
                Dims::of(&z),
                &f.to_f64_vec(),
                Dims::of(&f),
                &m.gamma_conv.weight.to_f64_vec(),
                &m.gamma_conv.bias.to_f64_vec(),
                &m.beta_conv.weight.to_f64_vec(),
                &m.beta_conv.bias.to_f64_vec(),
            );
            Ok((got, want))
        })());

        oracle_case(suite, format!("fadain/{ty}#{i}"), tol, (|| {
            let z = rand_t::<T>(&[n, normc, h, w], seed + 6);
            let st = rand_t::<T>(&[n, normc, w + 1, h + 2], seed + 7).mul_scalar(2.0)?.add_scalar(0.3)?;
            let got = fadain(&z, &st, NORM_EPS)?.to_f64_vec();
            Ok((got, fadain_oracle(&z.to_f64_vec(), Dims::of(&z), &st.to_f64_vec(), Dims::of(&st))))
        })());

        let scales = 1 + (i as usize) % 3;
        let reals: Vec<Tensor<T>> = (0..scales).map(|s| rand_t::<T>(&[n, 1, h, w], seed + 10 + s as u64).mul_scalar(2.0).unwrap()).collect();
        let fakes: Vec<Tensor<T>> = (0..scales).map(|s| rand_t::<T>(&[n, 1, h, w], seed + 20 + s as u64).mul_scalar(2.0).unwrap()).collect();
        oracle_case(suite, format!("hinge_d/{ty}#{i}"), tol, (|| {
            let got = hinge_d_loss(&reals, &fakes)?.item().as_f64();
            let want: f64 = reals
                .iter()
                .zip(&fakes)
                .map(|(r, f)| mean_of(&r.to_f64_vec(), |x| (1.0 - x).max(0.0)) + mean_of(&f.to_f64_vec(), |x| (1.0 + x).max(0.0)))
                .sum();
            Ok((vec![got], vec![want]))
        })());
        oracle_case(suite, format!("hinge_g/{ty}#{i}"), tol, (|| {
            let got = hinge_g_loss(&fakes)?.item().as_f64();
            let want: f64 = -fakes.iter().map(|f| mean_of(&f.to_f64_vec(), |x| x)).sum::<f64>();
            Ok((vec![got], vec![want]))
        })());

        let dist = if i % 2 == 0 { Distance::L1 } else { Distance::L2 };
        oracle_case(suite, format!("feature_matching/{ty}#{i}"), tol, (|| {
            let taps = 1 + (i as usize) % 3;
            let mk = |off: u64| -> Vec<Vec<Tensor<T>>> {
                (0..scales)
                    .map(|s| (0..taps).map(|t| rand_t::<T>(&[n, t + 1, h, w], seed + off + 7 * s as u64 + t as u64)).collect())
                    .collect()
            };
            let (fake, real) = (mk(30), mk(60));
            let got = feature_matching_loss(&fake, &real, dist)?.item().as_f64();
            let want: f64 = fake
                .iter()
                .zip(&real)
                .map(|(fs, rs)| {
                    fs.iter().zip(rs).map(|(a, b)| mean_dist(&a.to_f64_vec(), &b.to_f64_vec(), dist)).sum::<f64>() / fs.len() as f64
                })
                .sum();
            Ok((vec![got], vec![want]))
        })());

        oracle_case(suite, format!("perceptual/{ty}#{i}"), tol, (|| {
            let fx = ConvFeatureExtractor::<T>::seeded(seed)?;
            let (ph, pw) = (4 + 2 * (i as usize % 3), 4 + 4 * (i as usize % 2));
            let g = rand_t::<T>(&[1, 3, ph, pw], seed + 40);
            let t = rand_t::<T>(&[1, 3, ph, pw], seed + 41);
            let got = perceptual_loss(&fx, &g, &t, dist)?.item().as_f64();
            let stages: Vec<(Vec<f64>, usize, usize, Vec<f64>)> = fx
                .stages
                .iter()
                .map(|(w, b)| (w.to_f64_vec(), w.shape()[0], w.shape()[1], b.to_f64_vec()))
                .collect();
            let d = Dims::of(&g);
            let (lg, lt) = (extractor_oracle(&stages, &g.to_f64_vec(), d), extractor_oracle(&stages, &t.to_f64_vec(), d));
            let want: f64 = lg.iter().zip(&lt).zip(PERCEPTUAL_WEIGHTS).map(|((a, b), wt)| wt * mean_dist(a, b, dist)).sum();
            Ok((vec![got], vec![want]))
        })());
    }
}

/// FADE, FAdaIN, hinge, feature-matching and perceptual losses against loop
/// oracles: ten random instances each in `f32` and `f64`.
pub fn oracle_suite() -> SuiteReport {
    let mut s = SuiteReport::new("oracle");
    oracle_instances::<f64>(&mut s, ORACLE_TOL_F64, 7);
    oracle_instances::<f32>(&mut s, ORACLE_TOL_F32, 13);
    s
}

// --------------------------------------------------------------- invariants

/// Largest singular value of a row-major `rows x cols` matrix via the
/// eigenvalues of `A A^T`.
pub fn largest_singular_value(a: &[f64], rows: usize, cols: usize) -> Result<f64> {
    let mut gram = vec![0.0; rows * rows];
    for i in 0..rows {
        for j in 0..rows {
            gram[i * rows + j] = (0..cols).map(|k| a[i * cols + k] * a[j * cols + k]).sum();
        }
    }
    let (vals, _) = jacobi_eigen(&gram, rows)?;
    Ok(vals.into_iter().fold(0.0, f64::max).sqrt())
}

/// Shapes of the ten spectral-norm instances; reshaped to `outc x inc*k*k`,
/// each is at most 128 x 128.
pub const SN_SHAPES: [(usize, usize, usize); 10] =
    [(8, 3, 3), (16, 8, 3), (32, 3, 4), (64, 16, 1), (128, 14, 3), (12, 12, 3), (100, 25, 2), (5, 9, 3), (48, 32, 2), (128, 128, 1)];

/// Power-iteration estimate and SVD value for instance `i` after `steps`.
pub fn spectral_norm_instance(i: usize, steps: usize) -> Result<(f64, f64)> {
    let (oc, ic, k) = SN_SHAPES[i];
    let mut layer = ConvLayer::<f64>::new(ConvSpec::new(ic, oc, k, 1, 0), true, Init::default(), &mut ChaCha8Rng::seed_from_u64(i as u64))?;
    for _ in 0..steps {
        layer.power_iteration()?;
    }
    let exact = largest_singular_value(&layer.weight.to_f64_vec(), oc, ic * k * k)?;
    Ok((layer.sigma_estimate(), exact))
}

fn exact(suite: &mut SuiteReport, name: &str, got: f64, want: f64, tol: f64) {
    let dev = (got - want).abs();
    suite.record(name.to_string(), Ok((dev <= tol, format!("got {got}, expected {want}, tol {tol:e}"))));
}

struct Param(Tensor<f64>);

impl Module<f64> for Param {
    fn visit_state(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &mut Tensor<f64>)) {
        f(&crate::layers::join(prefix, "w"), StateKind::Param, &mut self.0);
    }
}

/// Hand values, normalization invariants, spectral-norm accuracy and
/// metric closed forms.
pub fn invariant_suite() -> SuiteReport {
    let mut s = SuiteReport::new("invariant");
    let t = |v: f64| Tensor::<f64>::full(&[1, 1, 2, 2], v).expect("shape");
    let hd = |r: f64, f: f64| hinge_d_loss(&[t(r)], &[t(f)]).map(|l| l.item()).unwrap_or(f64::NAN);
    exact(&mut s, "hinge_d/(1,-1)", hd(1.0, -1.0), 0.0, 0.0);
    exact(&mut s, "hinge_d/(0,0)", hd(0.0, 0.0), 2.0, 0.0);

    for i in 0..3u64 {
        let z = rand_t::<f64>(&[2, 3, 4, 5], 40 + i).mul_scalar(3.0).unwrap();
        let same = fadain(&z, &z, NORM_EPS).unwrap();
        s.record(format!("fadain_self/#{i}"), Ok({
            let d = same.max_abs_diff(&z);
            (d <= 1e-5, format!("max |FAdaIN(z,z) - z| = {d:.3e}"))
        }));

        let f = rand_t::<f64>(&[2, 2, 4, 5], 50 + i);
        let mut fade = FadeModule::<f64>::new(3, 2, false, &mut ChaCha8Rng::seed_from_u64(i)).unwrap();
        fade.gamma_conv.set_weights(vec![0.0; 3 * 2 * 9], vec![1.0; 3]).unwrap();
        fade.beta_conv.set_weights(vec![0.0; 3 * 2 * 9], vec![0.0; 3]).unwrap();
        let out = fade.forward(&z, &f, true).unwrap();
        let bn = BatchNorm::new(3).unwrap().forward(&z, true).unwrap();
        let d = out.max_abs_diff(&bn);
        s.record(format!("fade_identity_is_bn/#{i}"), Ok((d <= 1e-6, format!("max diff {d:.3e}"))));

        let check_moments = |x: &Tensor<f64>, per_sample: bool| -> (bool, String) {
            let d = Dims::of(x);
            let v = x.to_f64_vec();
            let mut worst: f64 = 0.0;
            for c in 0..d.c {
                let groups: Vec<Vec<f64>> = if per_sample {
                    (0..d.n).map(|n| (0..d.h * d.w).map(|p| v[d.at(n, c, p / d.w, p % d.w)]).collect()).collect()
                } else {
                    vec![(0..d.n * d.h * d.w).map(|p| v[d.at(p / (d.h * d.w), c, (p / d.w) % d.h, p % d.w)]).collect()]
                };
                for g in groups {
                    let mu = mean_of(&g, |x| x);
                    let var = mean_of(&g, |x| (x - mu).powi(2));
                    worst = worst.max(mu.abs()).max((var - 1.0).abs());
                }
            }
            (worst <= 1e-3, format!("worst |mean| or |var - 1| = {worst:.3e}"))
        };
        s.record(format!("batch_norm_moments/#{i}"), Ok(check_moments(&bn, false)));
        let inorm = InstanceNorm::default().forward(&z).unwrap();
        s.record(format!("instance_norm_moments/#{i}"), Ok(check_moments(&inorm, true)));
    }

    let lr = 1e-3;
    let mut p = Param(Tensor::parameter(&[6], uniform(6, -3.0, 3.0, 9)).unwrap());
    let before = p.0.to_vec();
    let step = (|| -> Result<f64> {
        let grads = p.0.square()?.mul_scalar(0.5)?.sum_all()?.backward()?;
        Adam::new(AdamConfig::new(lr))?.step(&mut p, &grads)?;
        Ok(p.0.data().iter().zip(&before).map(|(a, b)| (a - b).abs()).fold(f64::INFINITY, f64::min))
    })();
    s.record("adam_first_step/lr=1e-3".into(), step.map(|_| {
        let ok = p.0.data().iter().zip(&before).all(|(a, b)| (0.99 * lr..=lr).contains(&(a - b).abs()));
        (ok, format!("per-element steps {:?}", p.0.data().iter().zip(&before).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>()))
    }));

    for i in 0..SN_SHAPES.len() {
        s.record(format!("spectral_norm/{:?}", SN_SHAPES[i]), spectral_norm_instance(i, 25).map(|(est, sv)| {
            let rel = (est - sv).abs() / sv;
            (rel <= 0.02, format!("estimate {est:.6}, SVD {sv:.6}, rel err {rel:.3e}"))
        }));
    }

    let fit1 = |mu: f64, sd: f64| GaussianFit { dim: 1, mean: vec![mu], cov: vec![sd * sd] };
    exact(&mut s, "fid/1d_mean_shift", frechet_distance(&fit1(0.0, 1.0), &fit1(3.0, 1.0)).unwrap_or(f64::NAN), 9.0, 1e-8);
    exact(&mut s, "fid/1d_scale", frechet_distance(&fit1(1.0, 2.0), &fit1(1.0, 5.0)).unwrap_or(f64::NAN), 9.0, 1e-8);
    let pts: Vec<Vec<f64>> = (0..20).map(|i| uniform(6, -1.0, 1.0, 60 + i)).collect();
    let g = fit_gaussian(&pts).expect("fit");
    exact(&mut s, "fid/identical", frechet_distance(&g, &g).unwrap_or(f64::NAN), 0.0, 1e-6);
    let same = vec![vec![0.25, 0.25, 0.5]; 6];
    exact(&mut s, "inception_score/identical", inception_score(&same, 2).map(|r| r.0).unwrap_or(f64::NAN), 1.0, 1e-6);
    let k = 5;
    let onehot: Vec<Vec<f64>> = (0..2 * k).map(|i| (0..k).map(|c| if c == i % k { 1.0 } else { 0.0 }).collect()).collect();
    exact(&mut s, "inception_score/one_hot", inception_score(&onehot, 2).map(|r| r.0).unwrap_or(f64::NAN), k as f64, 1e-6);
    s
}

/// All three suites in order.
pub fn run_all() -> Vec<SuiteReport> {
    vec![gradient_suite(), oracle_suite(), invariant_suite()]
}
