use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture variants: the full model and its baselines/ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelVariant {
    /// Additive top-down modulation, trained with the contrastive term.
    #[serde(rename = "monet")]
    MoNet,
    /// Multiplicative top-down modulation.
    #[serde(rename = "monet-mul")]
    MoNetMul,
    /// Planning module replaced by a truncating identity.
    #[serde(rename = "monet-iden")]
    MoNetIden,
    /// Same architecture as `MoNet`, trained without the contrastive term.
    #[serde(rename = "monet-nolgc")]
    MoNetNoLgc,
    /// Perception and control only.
    #[serde(rename = "vitnet")]
    ViTNet,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 5] = [
        ModelVariant::MoNet,
        ModelVariant::MoNetMul,
        ModelVariant::MoNetIden,
        ModelVariant::MoNetNoLgc,
        ModelVariant::ViTNet,
    ];

    /// Whether the variant owns trainable planning parameters.
    pub fn has_planning_params(self) -> bool {
        matches!(self, Self::MoNet | Self::MoNetMul | Self::MoNetNoLgc)
    }

    /// Whether the variant emits a latent decision `h^d`.
    pub fn has_latent_decision(self) -> bool {
        !matches!(self, Self::ViTNet)
    }

    /// Whether the contrastive loss applies during training.
    pub fn uses_lgc(self) -> bool {
        matches!(self, Self::MoNet | Self::MoNetMul | Self::MoNetIden)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::MoNet => "monet",
            Self::MoNetMul => "monet-mul",
            Self::MoNetIden => "monet-iden",
            Self::MoNetNoLgc => "monet-nolgc",
            Self::ViTNet => "vitnet",
        }
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

/// Network dimensions. Every stage in the CNN stacks halves the spatial
/// size; the last image stage and the last map stage both emit
/// `token_dim` channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub image_size: usize,
    pub map_size: usize,
    pub image_stages: Vec<usize>,
    pub map_stages: Vec<usize>,
    /// Side of the image token grid (`N = grid²`).
    pub grid: usize,
    /// Perception token width `D_p`.
    pub token_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub mlp_hidden: usize,
    /// Width each fused-feature scalar is expanded to in planning.
    pub plan_embed: usize,
    /// Latent decision width `N_d`.
    pub latent_dim: usize,
    pub control_hidden: usize,
    /// Disables layer norms in both encoders (linearity tests only).
    #[serde(default)]
    pub bypass_norm: bool,
}

impl NetworkConfig {
    /// 224×224 camera, 64-channel tokens, 64-wide decisions.
    pub fn paper() -> Self {
        Self {
            image_size: 224,
            map_size: 64,
            image_stages: vec![8, 16, 32, 64, 64],
            map_stages: vec![8, 16, 32, 64, 64, 64],
            grid: 6,
            token_dim: 64,
            heads: 4,
            head_dim: 16,
            mlp_hidden: 128,
            plan_embed: 64,
            latent_dim: 64,
            control_hidden: 128,
            bypass_norm: false,
        }
    }

    /// Scaled-down profile for single-core CPU training.
    pub fn desk() -> Self {
        Self {
            image_size: 96,
            map_size: 64,
            image_stages: vec![4, 8, 16, 16],
            map_stages: vec![4, 8, 8, 16, 16, 16],
            grid: 6,
            token_dim: 16,
            heads: 2,
            head_dim: 8,
            mlp_hidden: 32,
            plan_embed: 16,
            latent_dim: 16,
            control_hidden: 32,
            bypass_norm: false,
        }
    }

    /// Very small network used by gradient checks.
    pub fn tiny() -> Self {
        Self {
            image_size: 16,
            map_size: 16,
            image_stages: vec![3, 4],
            map_stages: vec![2, 3, 4],
            grid: 2,
            token_dim: 4,
            heads: 2,
            head_dim: 2,
            mlp_hidden: 6,
            plan_embed: 3,
            latent_dim: 8,
            control_hidden: 6,
            bypass_norm: false,
        }
    }

    pub fn tokens(&self) -> usize {
        self.grid * self.grid
    }

    /// Width of `z^att_I` (token width plus the positional column).
    pub fn attended_dim(&self) -> usize {
        self.token_dim + 1
    }

    /// Length of the fused feature `z^p`.
    pub fn fused_dim(&self) -> usize {
        self.attended_dim() + self.token_dim
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.image_stages.is_empty() || self.map_stages.is_empty() {
            return fail("CNN stage lists must be non-empty".into());
        }
        if self.image_stages.last() != Some(&self.token_dim) {
            return fail(format!("last image stage must have token_dim={} channels", self.token_dim));
        }
        if self.map_stages.last() != Some(&self.token_dim) {
            return fail(format!("last map stage must have token_dim={} channels", self.token_dim));
        }
        if self.heads == 0 || self.head_dim == 0 {
            return fail("attention heads and head_dim must be positive".into());
        }
        if self.grid == 0 || self.latent_dim == 0 || self.plan_embed == 0 {
            return fail("grid, latent_dim and plan_embed must be positive".into());
        }
        let pre_pool = self
            .image_stages
            .iter()
            .fold(self.image_size, |s, _| (s - 1) / 2 + 1);
        if pre_pool < self.grid {
            return fail(format!(
                "image stages reduce {} to {pre_pool}, smaller than grid {}",
                self.image_size, self.grid
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in ModelVariant::ALL {
            assert_eq!(v.name().parse::<ModelVariant>().unwrap(), v);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{}\"", v.name()));
        }
        assert!("resnet".parse::<ModelVariant>().is_err());
    }

    #[test]
    fn profiles_validate() {
        for cfg in [NetworkConfig::paper(), NetworkConfig::desk(), NetworkConfig::tiny()] {
            cfg.validate().unwrap();
        }
        assert_eq!(NetworkConfig::paper().fused_dim(), 129);
        assert_eq!(NetworkConfig::paper().tokens(), 36);
    }
}
