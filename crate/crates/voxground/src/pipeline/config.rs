//! Model configuration and its flat key=value file format.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionMode {
    /// Concat-fused upsampling (the plain baseline).
    Concat,
    /// Self/cross attention on the full grid, no pruning.
    Attention,
    /// Original pruning block: subsampled probe, interaction after pruning.
    Tgp,
    /// Simplified pruning block: one interaction before pruning.
    SimplifiedTgp,
}

impl FusionMode {
    pub fn is_pruning(self) -> bool {
        matches!(self, FusionMode::Tgp | FusionMode::SimplifiedTgp)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Concat => "concat",
            FusionMode::Attention => "attention",
            FusionMode::Tgp => "tgp",
            FusionMode::SimplifiedTgp => "simplified_tgp",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdditionMode {
    Full,
    PruningAware,
    Cba,
}

impl AdditionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AdditionMode::Full => "full",
            AdditionMode::PruningAware => "pruning_aware",
            AdditionMode::Cba => "cba",
        }
    }
}

/// Full pipeline configuration. The config file is `key=value` lines with
/// exactly these field names; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub levels: usize,
    /// Channel widths: stem output (level 0) then levels 1..3.
    pub channels: Vec<usize>,
    pub base_voxel_size: f64,
    pub sigma_sce: f64,
    pub sigma_tar: f64,
    pub tau: f64,
    /// Side of the supervision cube (odd).
    pub cube_l: usize,
    /// Side of the positive-assignment cube (odd).
    pub l_pos: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub fusion_mode: FusionMode,
    pub addition_mode: AdditionMode,
    /// Levels (subset of {1,2}) where completion-based addition runs.
    pub cba_levels: Vec<usize>,
    pub k_min: usize,
    pub fps_k: usize,
    pub heads: usize,
    pub token_dim: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            channels: vec![16, 32, 64, 128],
            base_voxel_size: 0.01,
            sigma_sce: 0.7,
            sigma_tar: 0.3,
            tau: 0.15,
            cube_l: 7,
            l_pos: 3,
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            lambda4: 1.0,
            fusion_mode: FusionMode::SimplifiedTgp,
            addition_mode: AdditionMode::Cba,
            cba_levels: vec![1],
            k_min: 32,
            fps_k: 512,
            heads: 4,
            token_dim: 64,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Baseline configuration: concat fusion with full addition.
    pub fn baseline() -> Self {
        Self {
            fusion_mode: FusionMode::Concat,
            addition_mode: AdditionMode::Full,
            cba_levels: vec![],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels != 3 {
            return Err(Error::InvalidConfig("levels is fixed at 3".into()));
        }
        if self.channels.len() != 4 {
            return Err(Error::InvalidConfig(
                "channels must list 4 widths (stem, level1..3)".into(),
            ));
        }
        for (name, v) in [
            ("sigma_sce", self.sigma_sce),
            ("sigma_tar", self.sigma_tar),
            ("tau", self.tau),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name}={v} outside [0,1]")));
            }
        }
        if self.base_voxel_size <= 0.0 {
            return Err(Error::InvalidConfig("base_voxel_size must be positive".into()));
        }
        if self.cube_l % 2 == 0 || self.l_pos % 2 == 0 {
            return Err(Error::InvalidConfig("cube_l and l_pos must be odd".into()));
        }
        if self.cba_levels.iter().any(|&l| l != 1 && l != 2) {
            return Err(Error::InvalidConfig("cba_levels must be a subset of {1,2}".into()));
        }
        for (name, c) in [("level1", self.channels[1]), ("level2", self.channels[2]), ("level3", self.channels[3])] {
            if c % self.heads != 0 {
                return Err(Error::InvalidConfig(format!(
                    "{name} width {c} not divisible by {} heads",
                    self.heads
                )));
            }
        }
        if self.token_dim % self.heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "token_dim {} not divisible by {} heads",
                self.token_dim, self.heads
            )));
        }
        Ok(())
    }

    /// Fused feature width entering the upsample from `level`.
    pub fn fused_width(&self, level: usize) -> usize {
        match self.fusion_mode {
            FusionMode::Concat => self.channels[level] + self.token_dim,
            _ => self.channels[level],
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!("line {}: expected key=value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| Error::Parse(format!("line {}: bad {what}: {value}", lineno + 1));
            match key {
                "levels" => cfg.levels = value.parse().map_err(|_| bad("levels"))?,
                "channels" => {
                    cfg.channels = value
                        .split(',')
                        .map(|s| s.trim().parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad("channels"))?;
                }
                "base_voxel_size" => cfg.base_voxel_size = value.parse().map_err(|_| bad("base_voxel_size"))?,
                "sigma_sce" => cfg.sigma_sce = value.parse().map_err(|_| bad("sigma_sce"))?,
                "sigma_tar" => cfg.sigma_tar = value.parse().map_err(|_| bad("sigma_tar"))?,
                "tau" => cfg.tau = value.parse().map_err(|_| bad("tau"))?,
                "cube_l" => cfg.cube_l = value.parse().map_err(|_| bad("cube_l"))?,
                "l_pos" => cfg.l_pos = value.parse().map_err(|_| bad("l_pos"))?,
                "lambda1" => cfg.lambda1 = value.parse().map_err(|_| bad("lambda1"))?,
                "lambda2" => cfg.lambda2 = value.parse().map_err(|_| bad("lambda2"))?,
                "lambda3" => cfg.lambda3 = value.parse().map_err(|_| bad("lambda3"))?,
                "lambda4" => cfg.lambda4 = value.parse().map_err(|_| bad("lambda4"))?,
                "fusion_mode" => {
                    cfg.fusion_mode = match value {
                        "concat" => FusionMode::Concat,
                        "attention" => FusionMode::Attention,
                        "tgp" => FusionMode::Tgp,
                        "simplified_tgp" => FusionMode::SimplifiedTgp,
                        _ => return Err(bad("fusion_mode")),
                    }
                }
                "addition_mode" => {
                    cfg.addition_mode = match value {
                        "full" => AdditionMode::Full,
                        "pruning_aware" => AdditionMode::PruningAware,
                        "cba" => AdditionMode::Cba,
                        _ => return Err(bad("addition_mode")),
                    }
                }
                "cba_levels" => {
                    cfg.cba_levels = if value.is_empty() {
                        vec![]
                    } else {
                        value
                            .split(',')
                            .map(|s| s.trim().parse::<usize>())
                            .collect::<std::result::Result<_, _>>()
                            .map_err(|_| bad("cba_levels"))?
                    };
                }
                "k_min" => cfg.k_min = value.parse().map_err(|_| bad("k_min"))?,
                "fps_k" => cfg.fps_k = value.parse().map_err(|_| bad("fps_k"))?,
                "heads" => cfg.heads = value.parse().map_err(|_| bad("heads"))?,
                "token_dim" => cfg.token_dim = value.parse().map_err(|_| bad("token_dim"))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad("seed"))?,
                other => {
                    return Err(Error::Parse(format!("line {}: unknown key {other}", lineno + 1)))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_string())?;
        Ok(())
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let channels: Vec<String> = self.channels.iter().map(|c| c.to_string()).collect();
        let cba: Vec<String> = self.cba_levels.iter().map(|l| l.to_string()).collect();
        writeln!(f, "levels={}", self.levels)?;
        writeln!(f, "channels={}", channels.join(","))?;
        writeln!(f, "base_voxel_size={}", self.base_voxel_size)?;
        writeln!(f, "sigma_sce={}", self.sigma_sce)?;
        writeln!(f, "sigma_tar={}", self.sigma_tar)?;
        writeln!(f, "tau={}", self.tau)?;
        writeln!(f, "cube_l={}", self.cube_l)?;
        writeln!(f, "l_pos={}", self.l_pos)?;
        writeln!(f, "lambda1={}", self.lambda1)?;
        writeln!(f, "lambda2={}", self.lambda2)?;
        writeln!(f, "lambda3={}", self.lambda3)?;
        writeln!(f, "lambda4={}", self.lambda4)?;
        writeln!(f, "fusion_mode={}", self.fusion_mode.as_str())?;
        writeln!(f, "addition_mode={}", self.addition_mode.as_str())?;
        writeln!(f, "cba_levels={}", cba.join(","))?;
        writeln!(f, "k_min={}", self.k_min)?;
        writeln!(f, "fps_k={}", self.fps_k)?;
        writeln!(f, "heads={}", self.heads)?;
        writeln!(f, "token_dim={}", self.token_dim)?;
        writeln!(f, "seed={}", self.seed)
    }
}
