//! Procedural datasets: random shape layouts are the content, per-item
//! colour palettes are the style.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::codec::{ImageRecord, LabelMap};
use super::dataset::{DataMode, Dataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Background plus three shapes.
pub const SYNTHETIC_CLASSES: usize = 4;

/// Content intensity of each class.
pub const CONTENT_LEVELS: [f32; SYNTHETIC_CLASSES] = [-0.8, -0.2, 0.35, 0.9];

/// One RGB colour per class, values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Palette {
    pub colors: [[f32; 3]; SYNTHETIC_CLASSES],
}

impl Palette {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut colors = [[0f32; 3]; SYNTHETIC_CLASSES];
        for c in colors.iter_mut().flatten() {
            *c = rng.random_range(-0.9f32..0.9);
        }
        Palette { colors }
    }

    /// The content levels under a random global gain and per-channel tint,
    /// the way a change of lighting recolours a scene without moving it.
    pub fn shifted<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let gain = rng.random_range(0.8f32..1.0);
        let tint: [f32; 3] = std::array::from_fn(|_| rng.random_range(-0.15f32..0.15));
        Palette { colors: CONTENT_LEVELS.map(|v| tint.map(|t| (gain * v + t).clamp(-1.0, 1.0))) }
    }

    /// Gray palette giving each class its [`CONTENT_LEVELS`] intensity.
    pub fn content() -> Self {
        Palette { colors: CONTENT_LEVELS.map(|v| [v; 3]) }
    }
}

/// Background with a rectangle, a disc and a second rectangle drawn in
/// order (later shapes occlude earlier ones).
pub fn random_layout<R: Rng + ?Sized>(rng: &mut R, h: usize, w: usize, id: &str) -> LabelMap {
    let mut labels = vec![0u8; h * w];
    let extent = |rng: &mut R, n: usize| rng.random_range((n / 4).max(1)..=(n / 2).max(1));
    for class in 1..SYNTHETIC_CLASSES as u8 {
        let (sh, sw) = (extent(rng, h), extent(rng, w));
        let (top, left) = (rng.random_range(0..=h - sh), rng.random_range(0..=w - sw));
        let disc = class == 2;
        let (cy, cx) = (top as f64 + sh as f64 / 2.0, left as f64 + sw as f64 / 2.0);
        for i in top..top + sh {
            for j in left..left + sw {
                let inside = !disc || {
                    let dy = (i as f64 + 0.5 - cy) / (sh as f64 / 2.0);
                    let dx = (j as f64 + 0.5 - cx) / (sw as f64 / 2.0);
                    dy * dy + dx * dx <= 1.0
                };
                if inside {
                    labels[i * w + j] = class;
                }
            }
        }
    }
    LabelMap { h, w, labels, source: id.to_string() }
}

/// Paints each pixel with its class colour.
pub fn render(layout: &LabelMap, palette: &Palette, id: &str) -> Result<ImageRecord> {
    let hw = layout.h * layout.w;
    let mut data = vec![0f32; 3 * hw];
    for (p, &l) in layout.labels.iter().enumerate() {
        let color = palette
            .colors
            .get(l as usize)
            .ok_or_else(|| Error::Data(format!("{}: label {l} has no palette colour", layout.source)))?;
        for c in 0..3 {
            data[c * hw + p] = color[c];
        }
    }
    ImageRecord::new(Tensor::from_vec(&[1, 3, layout.h, layout.w], data)?, id)
}

/// `n` items of extent `h x w`. Paired/unpaired: content is the gray
/// rendering of layout `i`, style its rendering under a shifted palette.
/// Semantic: labels are the layouts, images their random-palette renderings.
pub fn make_synthetic_dataset(mode: DataMode, n: usize, h: usize, w: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || h < 2 || w < 2 {
        return Err(Error::Data(format!("synthetic dataset needs n >= 1 and extent >= 2x2, got {n} x {h}x{w}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layouts: Vec<LabelMap> = Vec::with_capacity(n);
    while layouts.len() < n {
        let id = format!("synthetic/{:04}", layouts.len());
        let l = random_layout(&mut rng, h, w, &id);
        if layouts.iter().all(|o| o.labels != l.labels) {
            layouts.push(l);
        }
    }
    let palettes: Vec<Palette> = (0..n)
        .map(|_| if mode == DataMode::Semantic { Palette::random(&mut rng) } else { Palette::shifted(&mut rng) })
        .collect();
    let style = layouts
        .iter()
        .zip(&palettes)
        .map(|(l, p)| render(l, p, &l.source))
        .collect::<Result<Vec<_>>>()?;
    match mode {
        DataMode::Semantic => Dataset::new(mode, Vec::new(), style, layouts, SYNTHETIC_CLASSES),
        _ => {
            let gray = Palette::content();
            let content = layouts.iter().map(|l| render(l, &gray, &l.source)).collect::<Result<Vec<_>>>()?;
            Dataset::new(mode, content, style, Vec::new(), 0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_and_deterministic() {
        let a = make_synthetic_dataset(DataMode::Paired, 8, 32, 32, 1).unwrap();
        let b = make_synthetic_dataset(DataMode::Paired, 8, 32, 32, 1).unwrap();
        for i in 0..8 {
            assert!(a.content[i].pixels.bit_eq(&b.content[i].pixels));
            assert!(a.style[i].pixels.bit_eq(&b.style[i].pixels));
            for j in 0..i {
                let d: f64 = a.content[i]
                    .pixels
                    .data()
                    .iter()
                    .zip(a.content[j].pixels.data())
                    .map(|(x, y)| ((x - y) as f64).powi(2))
                    .sum();
                assert!(d > 0.0, "{i} vs {j}");
            }
        }
        let c = make_synthetic_dataset(DataMode::Paired, 8, 32, 32, 2).unwrap();
        assert!(!a.content[0].pixels.bit_eq(&c.content[0].pixels));
        let all = a.content.iter().chain(&a.style).flat_map(|r| r.pixels.data().iter());
        assert!(all.into_iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn palette_variants_share_structure() {
        // two palettes over one layout: per class, each rendering is the
        // palette colour; the partition into classes is shared
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let layout = random_layout(&mut rng, 16, 16, "x");
        let (p, q) = (Palette::random(&mut rng), Palette::random(&mut rng));
        let (a, b) = (render(&layout, &p, "a").unwrap(), render(&layout, &q, "b").unwrap());
        for (pix, &l) in layout.labels.iter().enumerate() {
            for c in 0..3 {
                assert_eq!(a.pixels.data()[c * 256 + pix], p.colors[l as usize][c]);
                assert_eq!(b.pixels.data()[c * 256 + pix], q.colors[l as usize][c]);
            }
        }
        let means = |r: &ImageRecord| -> Vec<f64> {
            (0..3).map(|c| r.pixels.data()[c * 256..(c + 1) * 256].iter().map(|&v| v as f64).sum::<f64>() / 256.0).collect()
        };
        assert!(means(&a).iter().zip(means(&b)).any(|(x, y)| (x - y).abs() > 1e-3));
    }

    #[test]
    fn layouts_use_several_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            let l = random_layout(&mut rng, 32, 32, "x");
            let distinct: std::collections::BTreeSet<u8> = l.labels.iter().copied().collect();
            assert!(distinct.len() >= 2);
        }
    }
}
