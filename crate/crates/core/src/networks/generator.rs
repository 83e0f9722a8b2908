use rand::Rng;

use super::stream::StreamOutputs;
use crate::blocks::FadeResBlock;
use crate::error::{Error, Result};
use crate::layers::{instance_stats, join, ConvLayer, ConvSpec, Init, Module, StateKind, LRELU_SLOPE, NORM_EPS};
use crate::tensor::{Float, Tensor};
use crate::transforms::{fadain, ConcatInject};

/// How style reaches the generator before each FADE block.
pub enum StyleSite<T: Float> {
    /// Feature adaptive instance normalization from the style stream.
    FAdaIn,
    /// Ablation: concatenation injection of the style feature.
    Concat(ConcatInject<T>),
    /// Ablation: AdaIN from the resized style image; image channel `l mod C`
    /// supplies the moments for generator channel `l`.
    ImageAdaIn,
    /// Ablation: no style injection.
    Severed,
}

impl<T: Float> StyleSite<T> {
    fn apply(&mut self, z: &Tensor<T>, style: Option<&Tensor<T>>, training: bool) -> Result<Tensor<T>> {
        let need = || style.ok_or_else(|| Error::shape("generator", "style features required but not supplied"));
        match self {
            StyleSite::Severed => Ok(z.clone()),
            StyleSite::FAdaIn => fadain(z, need()?, NORM_EPS),
            StyleSite::Concat(c) => c.forward(z, need()?, training),
            StyleSite::ImageAdaIn => image_adain(z, need()?),
        }
    }
}

fn image_adain<T: Float>(z: &Tensor<T>, image: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, l, _, _) = z.dims4("image_adain")?;
    let (ni, ci, _, _) = image.dims4("image_adain")?;
    if n != ni {
        return Err(Error::shape("image_adain", format!("batch {n} vs {ni}")));
    }
    let (mu_s, sigma_s) = instance_stats(&image.detach(), NORM_EPS)?;
    let tile = |t: &Tensor<T>| -> Result<Tensor<T>> {
        let data = (0..n * l).map(|i| t.data()[(i / l) * ci + (i % l) % ci]).collect();
        Tensor::from_vec(&[n, l, 1, 1], data)
    };
    let (mu_z, sigma_z) = instance_stats(z, NORM_EPS)?;
    z.sub(&mu_z)?.div(&sigma_z)?.mul(&tile(&sigma_s)?)?.add(&tile(&mu_s)?)
}

/// Generator: 3x3 head on the noise map, then for each level `i = k..1` a
/// style site followed by a FADE residual block reading content level `i`,
/// then `LReLU -> Conv3x3(-> 3) -> tanh`.
pub struct GeneratorNet<T: Float> {
    pub head: ConvLayer<T>,
    pub style_sites: Vec<StyleSite<T>>,
    pub blocks: Vec<FadeResBlock<T>>,
    pub out_conv: ConvLayer<T>,
}

/// Construction parameters for [`GeneratorNet`].
pub struct GeneratorLayout {
    /// Stream widths `[f_0, ..., f_k]`.
    pub widths: Vec<usize>,
    /// Channels of the content feature read at each level `1..=k`.
    pub content_channels: Vec<usize>,
    /// Channels of the style input (concat site) at each level `1..=k`.
    pub style_channels: Vec<usize>,
    pub style_mode: StyleMode,
    pub concat_for_fade: bool,
    pub sn: bool,
    pub fade_sn: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StyleMode {
    FAdaIn,
    Concat,
    ImageAdaIn,
    Severed,
}

impl<T: Float> GeneratorNet<T> {
    pub fn new<R: Rng + ?Sized>(layout: &GeneratorLayout, rng: &mut R) -> Result<Self> {
        let k = layout.widths.len() - 1;
        let widest = layout.widths[k];
        let head = ConvLayer::new(ConvSpec::same3(widest, widest), layout.sn, Init::default(), rng)?;
        let mut style_sites = Vec::with_capacity(k);
        let mut blocks = Vec::with_capacity(k);
        for level in (1..=k).rev() {
            let inc = layout.widths[level];
            style_sites.push(match layout.style_mode {
                StyleMode::FAdaIn => StyleSite::FAdaIn,
                StyleMode::Severed => StyleSite::Severed,
                StyleMode::ImageAdaIn => StyleSite::ImageAdaIn,
                StyleMode::Concat => {
                    StyleSite::Concat(ConcatInject::new(inc, layout.style_channels[level - 1], layout.sn, rng)?)
                }
            });
            blocks.push(FadeResBlock::new_with_sn(
                inc,
                layout.widths[level - 1],
                layout.content_channels[level - 1],
                layout.concat_for_fade,
                layout.sn,
                layout.fade_sn,
                rng,
            )?);
        }
        let out_conv = ConvLayer::new(ConvSpec::same3(layout.widths[0], 3), layout.sn, Init::default(), rng)?;
        Ok(GeneratorNet { head, style_sites, blocks, out_conv })
    }

    pub fn k(&self) -> usize {
        self.blocks.len()
    }

    pub fn forward(
        &mut self,
        z0: &Tensor<T>,
        content: &StreamOutputs<T>,
        style: Option<&StreamOutputs<T>>,
        training: bool,
    ) -> Result<Tensor<T>> {
        let k = self.k();
        if content.features.len() != k + 1 || style.is_some_and(|s| s.features.len() != k + 1) {
            return Err(Error::shape("generator", format!("stream ladders must have {} levels", k + 1)));
        }
        let (_, _, zh, zw) = z0.dims4("generator")?;
        let (_, _, ch, cw) = content.level(k).dims4("generator")?;
        if (zh, zw) != (ch, cw) {
            return Err(Error::shape(
                "generator",
                format!("noise extent {zh}x{zw} does not match coarsest content level {ch}x{cw}"),
            ));
        }
        let mut z = self.head.forward(z0, training)?;
        for (j, (site, block)) in self.style_sites.iter_mut().zip(&mut self.blocks).enumerate() {
            let level = k - j;
            z = site.apply(&z, style.map(|s| s.level(level)), training)?;
            z = block.forward(&z, content.level(level), training)?;
        }
        let out = self.out_conv.forward(&z.leaky_relu(LRELU_SLOPE)?, training)?;
        out.tanh()
    }
}

impl<T: Float> Module<T> for GeneratorNet<T> {
    fn visit_state(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &mut Tensor<T>)) {
        self.head.visit_state(&join(prefix, "head"), f);
        let k = self.blocks.len();
        for (j, (site, block)) in self.style_sites.iter_mut().zip(&mut self.blocks).enumerate() {
            let level = k - j;
            if let StyleSite::Concat(c) = site {
                c.visit_state(&join(prefix, &format!("style{level}")), f);
            }
            block.visit_state(&join(prefix, &format!("block{level}")), f);
        }
        self.out_conv.visit_state(&join(prefix, "out"), f);
    }
}
