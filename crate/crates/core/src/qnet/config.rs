use serde::{Deserialize, Serialize};

use crate::tensor::conv_output_size;
use crate::{Error, Result};

/// One conv layer of the tower: SAME conv, bias, ReLU, then optional
/// non-overlapping average pooling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvStage {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pool: usize,
}

impl ConvStage {
    pub const fn new(channels: usize, kernel: usize, stride: usize, pool: usize) -> Self {
        Self {
            channels,
            kernel,
            stride,
            pool,
        }
    }
}

/// Shape of the conv tower and the action pathway.
///
/// Stage 0 is the stem; the dilated branches read its output. Fusion site
/// `i` (1-based) sits after stage `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub image_size: usize,
    pub image_channels: usize,
    /// Action features plus the low-dimensional state scalars.
    pub action_dim: usize,
    pub num_fusion_sites: usize,
    /// Site that carries the single `add` merge in the baseline network.
    pub baseline_site: usize,
    pub dilated_branch_rates: Vec<usize>,
    pub dilated_channels: usize,
    pub dilated_stride: usize,
    pub head_hidden: usize,
    pub stages: Vec<ConvStage>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            image_channels: 3,
            action_dim: 9,
            num_fusion_sites: 5,
            baseline_site: 3,
            dilated_branch_rates: vec![2, 4],
            dilated_channels: 4,
            dilated_stride: 8,
            head_hidden: 32,
            stages: vec![
                ConvStage::new(32, 3, 1, 2),
                ConvStage::new(16, 3, 1, 4),
                ConvStage::new(16, 3, 2, 1),
                ConvStage::new(16, 3, 1, 1),
                ConvStage::new(16, 3, 1, 1),
                ConvStage::new(16, 3, 1, 1),
            ],
        }
    }
}

/// `(height, width, channels)` of a feature map.
pub type MapShape = (usize, usize, usize);

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.image_size == 0 || self.image_channels == 0 {
            return bad("image_size and image_channels must be positive".into());
        }
        if self.action_dim == 0 {
            return bad("action_dim must be positive".into());
        }
        if self.num_fusion_sites == 0 {
            return bad("num_fusion_sites must be at least 1".into());
        }
        if self.stages.len() != self.num_fusion_sites + 1 {
            return bad(format!(
                "{} conv stages given, need num_fusion_sites + 1 = {}",
                self.stages.len(),
                self.num_fusion_sites + 1
            ));
        }
        if !(1..=self.num_fusion_sites).contains(&self.baseline_site) {
            return bad(format!("baseline_site {} out of range", self.baseline_site));
        }
        if self.head_hidden == 0 {
            return bad("head_hidden must be positive".into());
        }
        if let Some(r) = self.dilated_branch_rates.iter().find(|&&r| r < 2) {
            return bad(format!("dilation rate {r} must be at least 2"));
        }
        if !self.dilated_branch_rates.is_empty() && (self.dilated_channels == 0 || self.dilated_stride == 0) {
            return bad("dilated_channels and dilated_stride must be positive".into());
        }
        let mut size = self.image_size;
        for (i, s) in self.stages.iter().enumerate() {
            if s.channels == 0 || s.kernel == 0 || s.kernel % 2 == 0 || s.stride == 0 || s.pool == 0 {
                return bad(format!(
                    "stage {i}: channels, stride and pool must be positive and kernel odd"
                ));
            }
            size = conv_output_size(size, s.stride);
            if size % s.pool != 0 {
                return bad(format!("stage {i}: pool {} does not divide {size}", s.pool));
            }
            size /= s.pool;
        }
        Ok(())
    }

    /// Output map of every stage, stem first.
    pub fn stage_shapes(&self) -> Vec<MapShape> {
        let mut size = self.image_size;
        self.stages
            .iter()
            .map(|s| {
                size = conv_output_size(size, s.stride) / s.pool;
                (size, size, s.channels)
            })
            .collect()
    }

    pub fn stem_shape(&self) -> MapShape {
        self.stage_shapes()[0]
    }

    /// Map entering/leaving fusion site `i` (1-based).
    pub fn site_shape(&self, site: usize) -> MapShape {
        self.stage_shapes()[site]
    }

    pub fn dilated_shape(&self) -> MapShape {
        let (h, w, _) = self.stem_shape();
        (
            conv_output_size(h, self.dilated_stride),
            conv_output_size(w, self.dilated_stride),
            self.dilated_channels,
        )
    }
}
