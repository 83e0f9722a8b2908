use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture switches used by the ablation studies.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablations {
    /// Drop the content stream; FADE sites read the resized content image.
    pub no_cs: bool,
    /// Drop the style stream and every FAdaIN site.
    pub no_ss: bool,
    /// Normalize then concatenate content features instead of FADE.
    pub concat_for_fade: bool,
    /// Concatenate style features instead of FAdaIN.
    pub concat_for_fadain: bool,
    /// Inject resized images instead of stream features at every site.
    pub image_level_injection: bool,
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    /// Residual blocks per stream (and FADE blocks in the generator).
    pub k: usize,
    /// Channels after the stream input layer.
    pub base_width: usize,
    /// Channels after each stream block; length `k`.
    pub schedule: Vec<usize>,
    /// Divides every stream/generator/discriminator width.
    #[serde(default = "one")]
    pub width_divisor: usize,
    /// Channels of the content input (3 for images, class count for label maps).
    #[serde(default = "three")]
    pub content_channels: usize,
    #[serde(default = "three")]
    pub style_channels: usize,
    #[serde(default = "yes")]
    pub spectral_norm: bool,
    /// Whether FADE's modulation convolutions are spectrally normalized too.
    #[serde(default = "yes")]
    pub fade_spectral_norm: bool,
    #[serde(default)]
    pub ablations: Ablations,
    #[serde(default = "three")]
    pub d_scales: usize,
    /// Stride-2 convolutions per patch discriminator; each is a feature tap.
    #[serde(default = "three")]
    pub d_layers: usize,
    /// Width of the first discriminator convolution.
    #[serde(default = "sixty_four")]
    pub d_base_width: usize,
    /// Concatenate the content input to the discriminator input.
    #[serde(default)]
    pub d_conditional: bool,
}

fn one() -> usize {
    1
}
fn three() -> usize {
    3
}
fn sixty_four() -> usize {
    64
}
fn yes() -> bool {
    true
}

/// Channel ladder doubling from `base`, capped at `16 * base`.
pub fn default_schedule(k: usize, base: usize) -> Vec<usize> {
    (1..=k).map(|i| base * (1usize << i.min(4))).collect()
}

impl NetConfig {
    /// Full-size architecture: k = 7, 64 base channels.
    pub fn paper() -> Self {
        Self::desk(7, 64)
    }

    /// Architecture with the default channel ladder for `k` blocks.
    pub fn desk(k: usize, base_width: usize) -> Self {
        NetConfig {
            k,
            base_width,
            schedule: default_schedule(k, base_width),
            width_divisor: 1,
            content_channels: 3,
            style_channels: 3,
            spectral_norm: true,
            fade_spectral_norm: true,
            ablations: Ablations::default(),
            d_scales: 3,
            d_layers: 3,
            d_base_width: if base_width >= 64 { 64 } else { base_width },
            d_conditional: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.schedule.len() != self.k {
            return bad(format!("schedule has {} entries, k = {}", self.schedule.len(), self.k));
        }
        if ![1, 2, 4].contains(&self.width_divisor) {
            return bad(format!("width_divisor must be 1, 2 or 4, got {}", self.width_divisor));
        }
        let widths = std::iter::once(&self.base_width).chain(&self.schedule).chain(std::iter::once(&self.d_base_width));
        for &w in widths {
            if w == 0 || w % self.width_divisor != 0 {
                return bad(format!("width {w} is not a positive multiple of width_divisor {}", self.width_divisor));
            }
        }
        if self.content_channels == 0 || self.style_channels == 0 {
            return bad("input channel counts must be positive".into());
        }
        if self.d_scales == 0 || self.d_layers == 0 {
            return bad("d_scales and d_layers must be at least 1".into());
        }
        Ok(())
    }

    /// Stream feature widths `[f_0, f_1, ..., f_k]` after the divisor.
    pub fn stream_widths(&self) -> Vec<usize> {
        std::iter::once(self.base_width)
            .chain(self.schedule.iter().copied())
            .map(|w| w / self.width_divisor)
            .collect()
    }

    /// Discriminator conv widths: `d_layers` strided convs plus one stride-1 conv.
    pub fn discriminator_widths(&self) -> Vec<usize> {
        let base = self.d_base_width / self.width_divisor;
        (0..=self.d_layers).map(|i| base * (1usize << i.min(3))).collect()
    }

    /// Extents must be divisible by this.
    pub fn spatial_multiple(&self) -> usize {
        1 << self.k
    }

    /// Whether FADE sites read images rather than content-stream features.
    pub fn content_from_image(&self) -> bool {
        self.ablations.no_cs || self.ablations.image_level_injection
    }

    /// Whether the style stream is built at all.
    pub fn uses_style_stream(&self) -> bool {
        !self.ablations.no_ss && !self.ablations.image_level_injection
    }

    pub fn uses_content_stream(&self) -> bool {
        !self.content_from_image()
    }
}
