//! Fréchet distance and inception score over pooled features of a fixed
//! extractor, with a small softmax classifier trained on procedural data.
//!
//! Scores depend on the extractor and classifier; reports name both, and
//! they are not comparable with numbers from other feature networks.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{list_images, random_layout, read_image, render, ImageRecord, Palette, SYNTHETIC_CLASSES};
use crate::error::{Error, Result};
use crate::losses::FeatureExtractor;
use crate::tensor::{no_grad, Tensor};

/// Eigenvalues below this are treated as zero in matrix square roots.
pub const EIG_CLAMP: f64 = 1e-10;

/// Mean and covariance of a feature set; `cov` is row-major `dim x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFit {
    pub dim: usize,
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
}

/// Sample mean and unbiased covariance, symmetrized.
pub fn fit_gaussian(features: &[Vec<f64>]) -> Result<GaussianFit> {
    let n = features.len();
    if n < 2 {
        return Err(Error::Numeric(format!("a Gaussian fit needs at least 2 samples, got {n}")));
    }
    let dim = features[0].len();
    if dim == 0 || features.iter().any(|f| f.len() != dim) {
        return Err(Error::Numeric("feature vectors must share a positive length".into()));
    }
    let mut mean = vec![0.0; dim];
    for f in features {
        for (m, x) in mean.iter_mut().zip(f) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; dim * dim];
    for f in features {
        for i in 0..dim {
            let di = f[i] - mean[i];
            for j in 0..dim {
                cov[i * dim + j] += di * (f[j] - mean[j]);
            }
        }
    }
    for i in 0..dim {
        for j in 0..=i {
            let s = 0.5 * (cov[i * dim + j] + cov[j * dim + i]) / (n - 1) as f64;
            cov[i * dim + j] = s;
            cov[j * dim + i] = s;
        }
    }
    Ok(GaussianFit { dim, mean, cov })
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and row-major eigenvectors (column `k` pairs with
/// eigenvalue `k`).
pub fn jacobi_eigen(a: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.len() != n * n {
        return Err(Error::Numeric(format!("matrix has {} entries, expected {n}x{n}", a.len())));
    }
    let mut a = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let total: f64 = a.iter().map(|x| x * x).sum();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i * n + j].powi(2)).sum();
        if off <= 1e-30 * total.max(f64::MIN_POSITIVE) {
            return Ok(((0..n).map(|i| a[i * n + i]).collect(), v));
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    Err(Error::Numeric("Jacobi eigensolver did not converge in 100 sweeps".into()))
}

fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            for j in 0..n {
                c[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    c
}

/// Square root of a symmetric positive semi-definite matrix.
pub fn sqrtm_psd(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let (vals, vecs) = jacobi_eigen(a, n)?;
    let roots: Vec<f64> = vals.iter().map(|&l| if l < EIG_CLAMP { 0.0 } else { l.sqrt() }).collect();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = (0..n).map(|k| vecs[i * n + k] * roots[k] * vecs[j * n + k]).sum();
        }
    }
    Ok(out)
}

/// `|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))`, with the trace of
/// the root taken from the symmetric `S_a^(1/2) S_b S_a^(1/2)`.
pub fn frechet_distance(a: &GaussianFit, b: &GaussianFit) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::Numeric(format!("dimension mismatch {} vs {}", a.dim, b.dim)));
    }
    let n = a.dim;
    let root_a = sqrtm_psd(&a.cov, n)?;
    let mut m = matmul(&matmul(&root_a, &b.cov, n), &root_a, n);
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (m[i * n + j] + m[j * n + i]);
            m[i * n + j] = s;
            m[j * n + i] = s;
        }
    }
    let (vals, _) = jacobi_eigen(&m, n)?;
    let tr_root: f64 = vals.iter().map(|&l| if l < EIG_CLAMP { 0.0 } else { l.sqrt() }).sum();
    let mu: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).powi(2)).sum();
    let tr: f64 = (0..n).map(|i| a.cov[i * n + i] + b.cov[i * n + i]).sum();
    Ok((mu + tr - 2.0 * tr_root).max(0.0))
}

/// Mean and population standard deviation over `splits` contiguous splits
/// of `exp(E_x KL(p(y|x) || p(y)))`.
pub fn inception_score(probs: &[Vec<f64>], splits: usize) -> Result<(f64, f64)> {
    if probs.is_empty() || splits == 0 || splits > probs.len() {
        return Err(Error::Numeric(format!("{} distributions cannot form {splits} splits", probs.len())));
    }
    let k = probs[0].len();
    for p in probs {
        let sum: f64 = p.iter().sum();
        if p.len() != k || p.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Numeric(format!("invalid class distribution {p:?}")));
        }
    }
    let n = probs.len();
    let scores: Vec<f64> = (0..splits)
        .map(|s| {
            let part = &probs[s * n / splits..(s + 1) * n / splits];
            let mut marginal = vec![0.0; k];
            for p in part {
                for (m, x) in marginal.iter_mut().zip(p) {
                    *m += x / part.len() as f64;
                }
            }
            let kl: f64 = part
                .iter()
                .map(|p| p.iter().zip(&marginal).filter(|(&x, _)| x > 0.0).map(|(x, m)| x * (x / m).ln()).sum::<f64>())
                .sum::<f64>()
                / part.len() as f64;
            kl.exp()
        })
        .collect();
    let mean = scores.iter().sum::<f64>() / splits as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / splits as f64;
    Ok((mean, var.sqrt()))
}

/// Per-channel spatial means of every extractor level, concatenated.
pub fn pooled_features(fx: &dyn FeatureExtractor<f32>, image: &Tensor<f32>) -> Result<Vec<f64>> {
    let (n, _, _, _) = image.dims4("pooled_features")?;
    if n != 1 {
        return Err(Error::shape("pooled_features", format!("one image at a time, got batch {n}")));
    }
    let levels = no_grad(|| fx.extract(image))?;
    let mut out = Vec::new();
    for l in levels {
        let (_, c, h, w) = l.dims4("pooled_features")?;
        let d = l.data();
        out.extend((0..c).map(|ch| d[ch * h * w..(ch + 1) * h * w].iter().map(|&v| v as f64).sum::<f64>() / (h * w) as f64));
    }
    Ok(out)
}

/// Multinomial logistic regression on pooled features.
#[derive(Debug, Clone)]
pub struct SoftmaxClassifier {
    pub classes: usize,
    pub dim: usize,
    /// Row-major `classes x dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    /// Per-feature standardization learned from the training set.
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
    pub label: String,
}

/// Label of a procedural image for the classifier: which of the shape
/// classes covers the most pixels.
pub fn dominant_shape(labels: &[u8]) -> usize {
    let mut counts = [0usize; SYNTHETIC_CLASSES];
    for &l in labels {
        counts[l as usize] += 1;
    }
    (1..SYNTHETIC_CLASSES).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).expect("non-empty") - 1
}

impl SoftmaxClassifier {
    /// Full-batch gradient descent on cross-entropy; deterministic.
    pub fn fit(features: &[Vec<f64>], labels: &[usize], classes: usize, epochs: usize, lr: f64) -> Result<Self> {
        let n = features.len();
        if n == 0 || labels.len() != n || labels.iter().any(|&l| l >= classes) {
            return Err(Error::Numeric("classifier needs matching, in-range labels".into()));
        }
        let dim = features[0].len();
        let mut shift = vec![0.0; dim];
        let mut scale = vec![0.0; dim];
        for f in features {
            for i in 0..dim {
                shift[i] += f[i] / n as f64;
            }
        }
        for f in features {
            for i in 0..dim {
                scale[i] += (f[i] - shift[i]).powi(2) / n as f64;
            }
        }
        scale.iter_mut().for_each(|s| *s = 1.0 / (s.sqrt() + 1e-8));
        let mut clf = SoftmaxClassifier {
            classes,
            dim,
            weights: vec![0.0; classes * dim],
            bias: vec![0.0; classes],
            shift,
            scale,
            label: String::new(),
        };
        let xs: Vec<Vec<f64>> = features.iter().map(|f| clf.standardize(f)).collect();
        for _ in 0..epochs {
            let mut gw = vec![0.0; classes * dim];
            let mut gb = vec![0.0; classes];
            for (x, &y) in xs.iter().zip(labels) {
                let p = clf.softmax_std(x);
                for c in 0..classes {
                    let d = (p[c] - if c == y { 1.0 } else { 0.0 }) / n as f64;
                    gb[c] += d;
                    for i in 0..dim {
                        gw[c * dim + i] += d * x[i];
                    }
                }
            }
            clf.weights.iter_mut().zip(&gw).for_each(|(w, g)| *w -= lr * g);
            clf.bias.iter_mut().zip(&gb).for_each(|(b, g)| *b -= lr * g);
        }
        Ok(clf)
    }

    fn standardize(&self, f: &[f64]) -> Vec<f64> {
        f.iter().zip(&self.shift).zip(&self.scale).map(|((x, m), s)| (x - m) * s).collect()
    }

    fn softmax_std(&self, x: &[f64]) -> Vec<f64> {
        let logits: Vec<f64> = (0..self.classes)
            .map(|c| self.bias[c] + self.weights[c * self.dim..(c + 1) * self.dim].iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| v / z).collect()
    }

    pub fn probabilities(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.dim {
            return Err(Error::Numeric(format!("classifier expects {} features, got {}", self.dim, features.len())));
        }
        Ok(self.softmax_std(&self.standardize(features)))
    }

    /// Trained on `n` procedural renderings to predict [`dominant_shape`].
    pub fn train_synthetic(fx: &dyn FeatureExtractor<f32>, n: usize, extent: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut feats = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let layout = random_layout(&mut rng, extent, extent, "cls");
            let palette = if rng.random_bool(0.5) { Palette::content() } else { Palette::random(&mut rng) };
            let img = render(&layout, &palette, &format!("cls/{i}"))?;
            feats.push(pooled_features(fx, &img.pixels)?);
            labels.push(dominant_shape(&layout.labels));
        }
        let mut clf = Self::fit(&feats, &labels, SYNTHETIC_CLASSES - 1, 300, 0.5)?;
        clf.label = format!("softmax-dominant-shape/n={n}/extent={extent}/seed={seed}");
        Ok(clf)
    }

    pub fn accuracy(&self, features: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
        let mut hits = 0;
        for (f, &y) in features.iter().zip(labels) {
            let p = self.probabilities(f)?;
            let arg = (0..self.classes).max_by(|&a, &b| p[a].total_cmp(&p[b])).expect("classes > 0");
            hits += usize::from(arg == y);
        }
        Ok(hits as f64 / labels.len().max(1) as f64)
    }
}

/// Result of comparing a generated image set with a reference set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub fid: f64,
    pub is_mean: f64,
    pub is_std: f64,
    pub n_generated: usize,
    pub n_reference: usize,
    pub extractor: String,
    pub classifier: String,
}

impl EvalReport {
    /// Human summary followed by one `key=value` line. Whitespace inside
    /// identities becomes `_` so the line splits unambiguously.
    pub fn to_text(&self) -> String {
        let token = |s: &str| s.split_whitespace().collect::<Vec<_>>().join("_");
        let mut s = String::new();
        let _ = writeln!(s, "generated images: {}", self.n_generated);
        let _ = writeln!(s, "reference images: {}", self.n_reference);
        let _ = writeln!(s, "feature extractor: {}", self.extractor);
        let _ = writeln!(s, "classifier: {}", self.classifier);
        let _ = writeln!(s, "FID: {:.6}", self.fid);
        let _ = writeln!(s, "IS: {:.6} +/- {:.6}", self.is_mean, self.is_std);
        let _ = writeln!(s, "note: desk-scale features; not comparable with Inception-based scores");
        let _ = writeln!(
            s,
            "fid={} is_mean={} is_std={} n_generated={} n_reference={} extractor={} classifier={}",
            self.fid, self.is_mean, self.is_std, self.n_generated,
            self.n_reference,
            token(&self.extractor),
            token(&self.classifier)
        );
        s
    }

    /// Reads the `key=value` line of [`EvalReport::to_text`].
    pub fn parse(text: &str) -> Result<Self> {
        let line = text
            .lines()
            .find(|l| l.starts_with("fid="))
            .ok_or_else(|| Error::Data("report has no fid= line".into()))?;
        let mut map = std::collections::BTreeMap::new();
        for pair in line.split_whitespace() {
            let (k, v) = pair.split_once('=').ok_or_else(|| Error::Data(format!("malformed pair {pair:?}")))?;
            map.insert(k, v);
        }
        let get = |k: &str| map.get(k).copied().ok_or_else(|| Error::Data(format!("report lacks {k}")));
        let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| Error::Data(format!("{k} is not a number"))) };
        let count = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| Error::Data(format!("{k} is not a count"))) };
        Ok(EvalReport {
            fid: num("fid")?,
            is_mean: num("is_mean")?,
            is_std: num("is_std")?,
            n_generated: count("n_generated")?,
            n_reference: count("n_reference")?,
            extractor: get("extractor")?.to_string(),
            classifier: get("classifier")?.to_string(),
        })
    }
}

/// Split count for `n` generated images: up to ten, with at least ten images
/// per split so each marginal is estimated from more than one sample.
pub fn is_splits(n: usize) -> usize {
    (n / 10).clamp(1, 10)
}

/// FID between feature fits of two image sets, and IS of the first.
pub fn evaluate_images(
    generated: &[ImageRecord],
    reference: &[ImageRecord],
    fx: &dyn FeatureExtractor<f32>,
    clf: &SoftmaxClassifier,
) -> Result<EvalReport> {
    if generated.is_empty() || reference.is_empty() {
        return Err(Error::Data("evaluation needs non-empty image sets".into()));
    }
    let feats = |set: &[ImageRecord]| set.iter().map(|r| pooled_features(fx, &r.pixels)).collect::<Result<Vec<_>>>();
    let (fg, fr) = (feats(generated)?, feats(reference)?);
    let fid = frechet_distance(&fit_gaussian(&fg)?, &fit_gaussian(&fr)?)?;
    let probs = fg.iter().map(|f| clf.probabilities(f)).collect::<Result<Vec<_>>>()?;
    let (is_mean, is_std) = inception_score(&probs, is_splits(probs.len()))?;
    Ok(EvalReport {
        fid,
        is_mean,
        is_std,
        n_generated: generated.len(),
        n_reference: reference.len(),
        extractor: fx.identity(),
        classifier: clf.label.clone(),
    })
}

/// [`evaluate_images`] over the images of two directories.
pub fn evaluate_run(
    generated_dir: &Path,
    reference_dir: &Path,
    fx: &dyn FeatureExtractor<f32>,
    clf: &SoftmaxClassifier,
) -> Result<EvalReport> {
    let load = |d: &Path| list_images(d)?.iter().map(|p| read_image(p)).collect::<Result<Vec<_>>>();
    evaluate_images(&load(generated_dir)?, &load(reference_dir)?, fx, clf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::ConvFeatureExtractor;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn random_points(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
    }

    #[test]
    fn hand_covariance() {
        let g = fit_gaussian(&[vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!(g.mean, vec![1.0, 1.0]);
        assert_eq!(g.cov, vec![2.0, 2.0, 2.0, 2.0]);
        let same = fit_gaussian(&vec![vec![1.5, -1.0]; 4]).unwrap();
        assert!(same.cov.iter().all(|&c| c == 0.0));
        assert!(fit_gaussian(&[vec![1.0]]).is_err());
    }

    #[test]
    fn covariance_matches_loop_oracle() {
        let pts = random_points(100, 4, 1);
        let g = fit_gaussian(&pts).unwrap();
        for i in 0..4 {
            let mi: f64 = pts.iter().map(|p| p[i]).sum::<f64>() / 100.0;
            assert!((g.mean[i] - mi).abs() < 1e-12);
            for j in 0..4 {
                let mj: f64 = pts.iter().map(|p| p[j]).sum::<f64>() / 100.0;
                let c: f64 = pts.iter().map(|p| (p[i] - mi) * (p[j] - mj)).sum::<f64>() / 99.0;
                assert!((g.cov[i * 4 + j] - c).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn jacobi_reconstructs() {
        let pts = random_points(20, 6, 2);
        let g = fit_gaussian(&pts).unwrap();
        let (vals, vecs) = jacobi_eigen(&g.cov, 6).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let r: f64 = (0..6).map(|k| vecs[i * 6 + k] * vals[k] * vecs[j * 6 + k]).sum();
                assert!((r - g.cov[i * 6 + j]).abs() < 1e-10);
            }
        }
        let root = sqrtm_psd(&g.cov, 6).unwrap();
        let sq = matmul(&root, &root, 6);
        assert!(sq.iter().zip(&g.cov).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    fn fit1(mu: f64, sigma: f64) -> GaussianFit {
        GaussianFit { dim: 1, mean: vec![mu], cov: vec![sigma * sigma] }
    }

    #[test]
    fn closed_form_cases() {
        assert!((frechet_distance(&fit1(0.0, 1.5), &fit1(3.0, 1.5)).unwrap() - 9.0).abs() < 1e-8);
        assert!((frechet_distance(&fit1(1.0, 2.0), &fit1(1.0, 5.0)).unwrap() - 9.0).abs() < 1e-8);
        let g = fit_gaussian(&random_points(30, 5, 3)).unwrap();
        assert!(frechet_distance(&g, &g).unwrap() < 1e-8);
        assert!(frechet_distance(&g, &fit1(0.0, 1.0)).is_err());
    }

    #[test]
    fn inception_score_cases() {
        let same = vec![vec![0.2, 0.3, 0.5]; 12];
        let (m, s) = inception_score(&same, 3).unwrap();
        assert!((m - 1.0).abs() < 1e-12 && s.abs() < 1e-12);
        let k = 4;
        let onehot: Vec<Vec<f64>> = (0..8).map(|i| (0..k).map(|c| if c == i % k { 1.0 } else { 0.0 }).collect()).collect();
        let (m, _) = inception_score(&onehot, 2).unwrap();
        assert!((m - k as f64).abs() < 1e-6);
        assert!(inception_score(&[vec![0.5, 0.6]], 1).is_err());
        assert!(inception_score(&same, 13).is_err());
    }

    #[test]
    fn inception_score_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let probs: Vec<Vec<f64>> = (0..30)
            .map(|_| {
                let raw: Vec<f64> = (0..5).map(|_| rng.random_range(0.01..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / s).collect()
            })
            .collect();
        let (m, s) = inception_score(&probs, 3).unwrap();
        let mut scores = Vec::new();
        for split in probs.chunks(10) {
            let mut py = [0.0; 5];
            for p in split {
                for c in 0..5 {
                    py[c] += p[c] / 10.0;
                }
            }
            let mut kl = 0.0;
            for p in split {
                for c in 0..5 {
                    kl += p[c] * (p[c].ln() - py[c].ln());
                }
            }
            scores.push((kl / 10.0).exp());
        }
        let om = scores.iter().sum::<f64>() / 3.0;
        let os = (scores.iter().map(|v| (v - om).powi(2)).sum::<f64>() / 3.0).sqrt();
        assert!((m - om).abs() < 1e-8 && (s - os).abs() < 1e-8);
    }

    #[test]
    fn classifier_learns_synthetic_labels() {
        let fx = ConvFeatureExtractor::<f32>::seeded(0).unwrap();
        let clf = SoftmaxClassifier::train_synthetic(&fx, 120, 32, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (mut feats, mut labels) = (Vec::new(), Vec::new());
        for _ in 0..60 {
            let l = random_layout(&mut rng, 32, 32, "t");
            feats.push(pooled_features(&fx, &render(&l, &Palette::content(), "t").unwrap().pixels).unwrap());
            labels.push(dominant_shape(&l.labels));
        }
        let acc = clf.accuracy(&feats, &labels).unwrap();
        assert!(acc > 0.5, "held-out accuracy {acc}");
    }

    #[test]
    fn report_round_trip() {
        let r = EvalReport {
            fid: 1.5e-7,
            is_mean: 2.25,
            is_std: 0.125,
            n_generated: 8,
            n_reference: 9,
            extractor: "random-conv5/seed=0".into(),
            classifier: "softmax/n=1".into(),
        };
        assert_eq!(EvalReport::parse(&r.to_text()).unwrap(), r);
        assert!(EvalReport::parse("FID: 3").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn frechet_symmetric_and_zero_on_self(seed in 0u64..1000, n in 3usize..12, d in 1usize..5) {
            let a = fit_gaussian(&random_points(n, d, seed)).unwrap();
            let b = fit_gaussian(&random_points(n + 2, d, seed + 7)).unwrap();
            let ab = frechet_distance(&a, &b).unwrap();
            let ba = frechet_distance(&b, &a).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() < 1e-8 * (1.0 + ab));
            prop_assert!(frechet_distance(&a, &a).unwrap() < 1e-8);
        }

        #[test]
        fn inception_score_bounded(seed in 0u64..1000, k in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let probs: Vec<Vec<f64>> = (0..10).map(|_| {
                let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0f64).powi(4)).collect();
                let s: f64 = raw.iter().sum::<f64>().max(1e-12);
                raw.into_iter().map(|v| v / s).collect()
            }).collect();
            let (m, _) = inception_score(&probs, 2).unwrap();
            prop_assert!(m >= 1.0 - 1e-12 && m <= k as f64 + 1e-9);
        }
    }
}
