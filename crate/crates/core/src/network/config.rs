use serde::{Deserialize, Serialize};

use crate::adaptive::AdaptiveConfig;
use crate::structconv::KernelMode;
use crate::{AscnError, Result};

/// One block of the layer stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Structural convolution with `kernels` kernel pairs; its output width
    /// equals `kernels`.
    Conv { kernels: usize },
    /// Graph max-pooling followed by random subsampling.
    Pool,
}

/// How each point's neighbourhood size is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Neighborhood {
    /// Minimum eigenentropy over `[m_min, m_max]`.
    #[default]
    Adaptive,
    /// The same size for every point (padded to `m_max` slots).
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub stages: Vec<Stage>,
    /// Supports per kernel (`S`).
    pub supports: usize,
    pub adaptive: AdaptiveConfig,
    #[serde(default)]
    pub neighborhood: Neighborhood,
    #[serde(default)]
    pub kernel_mode: KernelMode,
    pub pool_rate: usize,
    /// Width of the classifier's hidden layer.
    pub hidden: usize,
    pub num_classes: usize,
    #[serde(default)]
    pub class_names: Vec<String>,
    pub seed: u64,
}

impl ModelConfig {
    /// Five convolutions and three poolings:
    /// `Conv16, Pool, Conv32, Pool, Conv64, Pool, Conv128, Conv128`.
    pub fn standard(num_classes: usize) -> Self {
        let conv = |kernels| Stage::Conv { kernels };
        ModelConfig {
            stages: vec![
                conv(16),
                Stage::Pool,
                conv(32),
                Stage::Pool,
                conv(64),
                Stage::Pool,
                conv(128),
                conv(128),
            ],
            supports: 4,
            adaptive: AdaptiveConfig::default(),
            neighborhood: Neighborhood::Adaptive,
            kernel_mode: KernelMode::StrConv,
            pool_rate: 4,
            hidden: 128,
            num_classes,
            class_names: Vec::new(),
            seed: 0,
        }
    }

    /// A two-convolution stack small enough for finite-difference checks.
    pub fn toy(num_classes: usize) -> Self {
        ModelConfig {
            stages: vec![Stage::Conv { kernels: 4 }, Stage::Pool, Stage::Conv { kernels: 4 }],
            supports: 2,
            pool_rate: 2,
            hidden: 5,
            ..ModelConfig::standard(num_classes)
        }
    }

    pub fn with_classes(mut self, names: &[String]) -> Self {
        self.num_classes = names.len();
        self.class_names = names.to_vec();
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn conv_widths(&self) -> Vec<usize> {
        self.stages
            .iter()
            .filter_map(|s| match s {
                Stage::Conv { kernels } => Some(*kernels),
                Stage::Pool => None,
            })
            .collect()
    }

    pub fn pool_count(&self) -> usize {
        self.stages.iter().filter(|s| matches!(s, Stage::Pool)).count()
    }

    /// Slots per receptive field (`M_max`).
    pub fn slots(&self) -> usize {
        self.adaptive.m_max
    }

    /// Whether the stack has the full five-convolution, three-pool shape.
    pub fn is_standard_stack(&self) -> bool {
        self.conv_widths().len() == 5 && self.pool_count() == 3
    }

    /// Smallest neighbourhood any point asks for.
    pub fn min_neighbors(&self) -> usize {
        match self.neighborhood {
            Neighborhood::Adaptive => self.adaptive.m_min,
            Neighborhood::Fixed(m) => m,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(AscnError::Config(m));
        self.adaptive.validate().map_err(|e| AscnError::Config(e.to_string()))?;
        if self.conv_widths().is_empty() {
            return err("the stack needs at least one convolution".into());
        }
        if self.stages.iter().any(|s| matches!(s, Stage::Conv { kernels: 0 })) {
            return err("convolutions need at least one kernel".into());
        }
        if self.supports == 0 {
            return err("supports must be at least 1".into());
        }
        if self.pool_rate == 0 {
            return err("pool_rate must be at least 1".into());
        }
        if self.hidden == 0 {
            return err("hidden width must be at least 1".into());
        }
        if self.num_classes < 2 {
            return err(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if !self.class_names.is_empty() && self.class_names.len() != self.num_classes {
            return err(format!(
                "{} class names for {} classes",
                self.class_names.len(),
                self.num_classes
            ));
        }
        if let Neighborhood::Fixed(m) = self.neighborhood {
            if m == 0 || m > self.adaptive.m_max {
                return err(format!("fixed neighbourhood {m} must be in 1..={}", self.adaptive.m_max));
            }
        }
        Ok(())
    }

    /// Smallest input size whose every convolution stage still has two
    /// points after pooling.
    pub fn min_points(&self) -> usize {
        (self.min_neighbors() + 1..)
            .find(|&n| {
                let mut n = n;
                for s in &self.stages {
                    match s {
                        Stage::Pool => n = n.div_ceil(self.pool_rate),
                        Stage::Conv { .. } if n < 2 => return false,
                        Stage::Conv { .. } => {}
                    }
                }
                true
            })
            .expect("some size always suffices")
    }
}
