use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// How the density-derived tokens are merged into the learned queries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QueryMode {
    /// `W_Q + tokens`
    Add,
    /// Linear projection of `[W_Q ; tokens]` back to the token width.
    Concat,
}

impl QueryMode {
    pub fn as_str(self) -> &'static str {
        match self {
            QueryMode::Add => "add",
            QueryMode::Concat => "concat",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "add" => Ok(QueryMode::Add),
            "concat" => Ok(QueryMode::Concat),
            other => Err(Error::Config(format!("unknown query mode '{other}' (expected add or concat)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub crop_size: usize,
    pub downsample_factor: usize,
    /// One 3x3 conv stage per entry; the first `log2(downsample_factor)`
    /// stages have stride 2.
    pub backbone_channels: Vec<usize>,
    pub token_dim: usize,
    pub density_feature_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub attention_heads: usize,
    pub num_queries: usize,
    pub frames: usize,
    /// Defaults to the middle frame when `None`.
    pub reference_frame: Option<usize>,
    pub query_mode: QueryMode,
    pub sigma: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            crop_size: 64,
            downsample_factor: 8,
            backbone_channels: vec![32, 64, 128],
            token_dim: 64,
            density_feature_dim: 64,
            encoder_layers: 2,
            decoder_layers: 2,
            attention_heads: 4,
            num_queries: 16,
            frames: 5,
            reference_frame: None,
            query_mode: QueryMode::Concat,
            sigma: 4.0,
        }
    }
}

fn config_err(msg: String) -> Error {
    Error::Config(msg)
}

impl ModelConfig {
    /// Configuration used for end-to-end gradient checks: crop 16, `d = 8`,
    /// one encoder layer, four queries, two frames.
    pub fn miniature() -> Self {
        ModelConfig {
            crop_size: 16,
            downsample_factor: 4,
            backbone_channels: vec![4, 6],
            token_dim: 8,
            density_feature_dim: 8,
            encoder_layers: 1,
            decoder_layers: 1,
            attention_heads: 2,
            num_queries: 4,
            frames: 2,
            reference_frame: None,
            query_mode: QueryMode::Concat,
            sigma: 2.0,
        }
    }

    pub fn reference(&self) -> usize {
        self.reference_frame.unwrap_or(self.frames / 2)
    }

    /// Side of the token grid, `crop_size / downsample_factor`.
    pub fn grid_side(&self) -> usize {
        self.crop_size / self.downsample_factor
    }

    pub fn tokens(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    /// Side `g` of the query grid, `num_queries = g^2`.
    pub fn query_side(&self) -> usize {
        libm::round(libm::sqrt(self.num_queries as f64)) as usize
    }

    pub fn downsample_stages(&self) -> usize {
        self.downsample_factor.trailing_zeros() as usize
    }

    /// Kernel and stride of the strided conv mapping the token grid onto the
    /// query grid.
    pub fn query_conv_geometry(&self) -> (usize, usize) {
        let (side, g) = (self.grid_side(), self.query_side());
        let stride = (side / g).max(1);
        (side - (g - 1) * stride, stride)
    }

    pub fn validate(&self) -> Result<()> {
        if self.crop_size == 0 || self.downsample_factor == 0 || self.crop_size % self.downsample_factor != 0 {
            return Err(config_err(format!(
                "crop size {} must be a positive multiple of downsample factor {}",
                self.crop_size, self.downsample_factor
            )));
        }
        if !self.downsample_factor.is_power_of_two() {
            return Err(config_err(format!("downsample factor {} must be a power of two", self.downsample_factor)));
        }
        if self.backbone_channels.len() < self.downsample_stages() || self.backbone_channels.contains(&0) {
            return Err(config_err(format!(
                "backbone needs at least {} non-zero stages for factor {}, got {:?}",
                self.downsample_stages(),
                self.downsample_factor,
                self.backbone_channels
            )));
        }
        let g = self.query_side();
        if self.num_queries == 0 || g * g != self.num_queries {
            return Err(config_err(format!("num_queries {} is not a perfect square", self.num_queries)));
        }
        if g > self.grid_side() {
            return Err(config_err(format!(
                "query grid {g}x{g} is finer than the {0}x{0} token grid",
                self.grid_side()
            )));
        }
        if self.token_dim == 0 || self.attention_heads == 0 || self.token_dim % self.attention_heads != 0 {
            return Err(config_err(format!(
                "token dim {} must be divisible by {} heads",
                self.token_dim, self.attention_heads
            )));
        }
        if self.density_feature_dim == 0 || self.encoder_layers == 0 || self.decoder_layers == 0 {
            return Err(config_err("feature dims and layer counts must be positive".into()));
        }
        if self.frames == 0 || self.reference() >= self.frames {
            return Err(config_err(format!(
                "reference frame {} outside clip of {} frames",
                self.reference(),
                self.frames
            )));
        }
        if !(self.sigma > 0.0) {
            return Err(config_err(format!("sigma {} must be positive", self.sigma)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.reference(), 2);
        assert_eq!(c.tokens(), 64);
        assert_eq!(c.query_conv_geometry(), (2, 2));
        ModelConfig::miniature().validate().unwrap();
        assert_eq!(ModelConfig::miniature().query_conv_geometry(), (2, 2));
    }

    #[test]
    fn rejects_inconsistent_configs() {
        let bad = [
            ModelConfig { crop_size: 60, ..Default::default() },
            ModelConfig { num_queries: 15, ..Default::default() },
            ModelConfig { num_queries: 81, ..Default::default() },
            ModelConfig { token_dim: 62, ..Default::default() },
            ModelConfig { reference_frame: Some(5), ..Default::default() },
            ModelConfig { backbone_channels: vec![8, 8], ..Default::default() },
            ModelConfig { downsample_factor: 6, crop_size: 60, ..Default::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        }
    }

    #[test]
    fn query_geometry_covers_grid() {
        for side in 1..12usize {
            for g in 1..=side {
                let c = ModelConfig {
                    crop_size: side * 4,
                    downsample_factor: 4,
                    backbone_channels: vec![2, 2],
                    num_queries: g * g,
                    ..Default::default()
                };
                let (k, s) = c.query_conv_geometry();
                assert!(k >= 1);
                assert_eq!((side - k) / s + 1, g);
            }
        }
    }

    #[test]
    fn parses_modes() {
        assert_eq!(QueryMode::parse("add").unwrap(), QueryMode::Add);
        assert_eq!(QueryMode::parse("concat").unwrap(), QueryMode::Concat);
        assert!(QueryMode::parse("mul").is_err());
    }
}
