//! The four translation components: content stream, style stream,
//! generator, and multi-scale patch discriminators.

mod config;
mod discriminator;
mod generator;
mod plan;
mod stream;

pub use config::{default_schedule, Ablations, NetConfig};
pub use discriminator::{DiscOutput, MultiScaleDiscriminator, PatchDiscriminator, MIN_COARSE_EXTENT};
pub use generator::{GeneratorLayout, GeneratorNet, StyleMode, StyleSite};
pub use plan::{ArchPlan, FeatShape, GeneratorSite};
pub use stream::{Stream, StreamOutputs};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::layers::{join, Module, StateKind};
use crate::tensor::{Float, Tensor};

/// Gaussian noise map with i.i.d. standard normal entries.
pub fn sample_noise<T: Float>(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Result<Tensor<T>> {
    sample_noise_with(&[n, c, h, w], &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn sample_noise_with<T: Float, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Result<Tensor<T>> {
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::shape("sample_noise", format!("non-positive extent in {shape:?}")));
    }
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| T::lit(rng.sample(StandardNormal))).collect())
}

/// Generator side of the model: both streams and the generator proper.
/// The optimizer for this struct updates all three.
pub struct Translator<T: Float> {
    pub config: NetConfig,
    pub content_stream: Option<Stream<T>>,
    pub style_stream: Option<Stream<T>>,
    pub generator: GeneratorNet<T>,
}

impl<T: Float> Translator<T> {
    pub fn new<R: Rng + ?Sized>(config: &NetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let widths = config.stream_widths();
        let sn = config.spectral_norm;
        let ab = &config.ablations;
        let content_stream = if config.uses_content_stream() {
            Some(Stream::new(config.content_channels, &widths, sn, rng)?)
        } else {
            None
        };
        let style_stream =
            if config.uses_style_stream() { Some(Stream::new(config.style_channels, &widths, sn, rng)?) } else { None };
        let k = config.k;
        let content_channels: Vec<usize> = (1..=k)
            .map(|i| if config.content_from_image() { config.content_channels } else { widths[i] })
            .collect();
        let style_channels: Vec<usize> = (1..=k)
            .map(|i| if ab.image_level_injection { config.style_channels } else { widths[i] })
            .collect();
        let style_mode = if ab.no_ss {
            StyleMode::Severed
        } else if ab.image_level_injection {
            StyleMode::ImageAdaIn
        } else if ab.concat_for_fadain {
            StyleMode::Concat
        } else {
            StyleMode::FAdaIn
        };
        let layout = GeneratorLayout {
            widths,
            content_channels,
            style_channels,
            style_mode,
            concat_for_fade: ab.concat_for_fade,
            sn,
            fade_sn: sn && config.fade_spectral_norm,
        };
        Ok(Translator {
            config: config.clone(),
            content_stream,
            style_stream,
            generator: GeneratorNet::new(&layout, rng)?,
        })
    }

    pub fn from_seed(config: &NetConfig, seed: u64) -> Result<Self> {
        Self::new(config, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Shape of `z0` for a batch of `n` images of extent `h x w`.
    pub fn noise_shape(&self, n: usize, h: usize, w: usize) -> Result<[usize; 4]> {
        Ok(self.config.plan(h, w)?.z0.with_batch(n))
    }

    /// Content-side features consumed by the FADE sites.
    pub fn content_features(&mut self, content: &Tensor<T>, training: bool) -> Result<StreamOutputs<T>> {
        match &mut self.content_stream {
            Some(s) => s.forward(content, training),
            None => StreamOutputs::image_pyramid(content, self.config.k),
        }
    }

    /// Style-side features consumed by the style sites, if any.
    pub fn style_features(&mut self, style: &Tensor<T>, training: bool) -> Result<Option<StreamOutputs<T>>> {
        if self.config.ablations.no_ss {
            return Ok(None);
        }
        match &mut self.style_stream {
            Some(s) => s.forward(style, training).map(Some),
            None => StreamOutputs::image_pyramid(style, self.config.k).map(Some),
        }
    }

    /// `G(z0, content, style)`: images in `[-1, 1]`.
    pub fn forward(
        &mut self,
        z0: &Tensor<T>,
        content: &Tensor<T>,
        style: &Tensor<T>,
        training: bool,
    ) -> Result<Tensor<T>> {
        let (_, cc, h, w) = content.dims4("translator")?;
        let (_, sc, sh, sw) = style.dims4("translator")?;
        if cc != self.config.content_channels || sc != self.config.style_channels {
            return Err(Error::shape(
                "translator",
                format!(
                    "content/style channels {cc}/{sc}, config expects {}/{}",
                    self.config.content_channels, self.config.style_channels
                ),
            ));
        }
        self.config.plan(h, w)?;
        self.config.plan(sh, sw)?;
        let cf = self.content_features(content, training)?;
        let sf = self.style_features(style, training)?;
        self.generator.forward(z0, &cf, sf.as_ref(), training)
    }
}

impl<T: Float> Module<T> for Translator<T> {
    fn visit_state(&mut self, prefix: &str, f: &mut dyn FnMut(&str, StateKind, &mut Tensor<T>)) {
        if let Some(s) = &mut self.content_stream {
            s.visit_state(&join(prefix, "cs"), f);
        }
        if let Some(s) = &mut self.style_stream {
            s.visit_state(&join(prefix, "ss"), f);
        }
        self.generator.visit_state(&join(prefix, "g"), f);
    }
}

/// Builds the discriminator described by `config`.
pub fn build_discriminator<T: Float, R: Rng + ?Sized>(
    config: &NetConfig,
    rng: &mut R,
) -> Result<MultiScaleDiscriminator<T>> {
    config.validate()?;
    let in_channels = 3 + if config.d_conditional { config.content_channels } else { 0 };
    MultiScaleDiscriminator::new(in_channels, &config.discriminator_widths(), config.d_scales, config.spectral_norm, rng)
}
