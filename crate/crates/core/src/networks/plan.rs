use super::NetConfig;
use crate::error::{Error, Result};

/// Channels and spatial extent of a feature map (batch omitted).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatShape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl FeatShape {
    pub fn new(c: usize, h: usize, w: usize) -> Self {
        FeatShape { c, h, w }
    }

    pub fn with_batch(&self, n: usize) -> [usize; 4] {
        [n, self.c, self.h, self.w]
    }
}

/// One generator stage: optional FAdaIN site, then a FADE residual block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratorSite {
    /// Stream level `i` consumed by this stage (k down to 1).
    pub level: usize,
    pub z_in: FeatShape,
    /// Style feature read by the FAdaIN (or concat) site; `None` when severed.
    pub style_feature: Option<FeatShape>,
    /// Feature read by every FADE in the block.
    pub content_feature: FeatShape,
    pub z_out: FeatShape,
}

/// Every shape in the translation network for one input extent, derived from
/// the config alone (no weights are allocated).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchPlan {
    pub content_stream: Vec<FeatShape>,
    pub style_stream: Vec<FeatShape>,
    pub z0: FeatShape,
    pub sites: Vec<GeneratorSite>,
    pub output: FeatShape,
}

impl NetConfig {
    /// Shape ladder for an `h x w` input.
    pub fn plan(&self, h: usize, w: usize) -> Result<ArchPlan> {
        self.validate()?;
        let m = self.spatial_multiple();
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::shape(
                "plan",
                format!("input extent {h}x{w} is not divisible by 2^k = {m}"),
            ));
        }
        let widths = self.stream_widths();
        let ladder: Vec<FeatShape> =
            widths.iter().enumerate().map(|(i, &c)| FeatShape::new(c, h >> i, w >> i)).collect();
        let image_ladder = |channels: usize| -> Vec<FeatShape> {
            (0..=self.k).map(|i| FeatShape::new(channels, h >> i, w >> i)).collect()
        };
        let content_stream =
            if self.content_from_image() { image_ladder(self.content_channels) } else { ladder.clone() };
        let style_stream = if self.ablations.image_level_injection {
            image_ladder(self.style_channels)
        } else {
            ladder.clone()
        };

        let mut sites = Vec::with_capacity(self.k);
        let mut z = ladder[self.k];
        let z0 = z;
        for level in (1..=self.k).rev() {
            let z_out = FeatShape::new(ladder[level - 1].c, z.h * 2, z.w * 2);
            sites.push(GeneratorSite {
                level,
                z_in: z,
                style_feature: (!self.ablations.no_ss).then_some(style_stream[level]),
                content_feature: content_stream[level],
                z_out,
            });
            z = z_out;
        }
        Ok(ArchPlan {
            content_stream,
            style_stream,
            z0,
            sites,
            output: FeatShape::new(3, z.h, z.w),
        })
    }
}
