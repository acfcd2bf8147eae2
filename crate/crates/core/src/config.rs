//! Run configuration shared by the command-line tools.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::FitConfig;
use crate::loss::{BoxLossKind, IouKind, LossWeights, REiouOptions};
use crate::post::NmsOptions;
use crate::repr::DEFAULT_LAMBDA_THR;

/// Dataset presets for the obliquity threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Dota,
    Hrsc,
    Ucas,
    Icdar,
}

impl Profile {
    pub const ALL: [Profile; 4] = [Profile::Dota, Profile::Hrsc, Profile::Ucas, Profile::Icdar];

    pub fn lambda_thr(self) -> f64 {
        match self {
            Profile::Dota => 0.94,
            Profile::Hrsc => 0.92,
            Profile::Ucas => 0.96,
            Profile::Icdar => 0.91,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Profile::Dota => "dota",
            Profile::Hrsc => "hrsc",
            Profile::Ucas => "ucas",
            Profile::Icdar => "icdar",
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Profile::ALL
            .into_iter()
            .find(|p| p.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown profile `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub lambda_thr: f64,
    pub nms_iou: f64,
    pub match_iou: f64,
    pub score_thr: f64,
    pub box_loss: BoxLossKind,
    pub iou: IouKind,
    pub weights: LossWeights,
    pub fit: FitConfig,
    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            lambda_thr: DEFAULT_LAMBDA_THR,
            nms_iou: 0.5,
            match_iou: 0.5,
            score_thr: 0.0,
            box_loss: BoxLossKind::default(),
            iou: IouKind::default(),
            weights: LossWeights::default(),
            fit: FitConfig::default(),
            seed: 42,
        }
    }
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config =
            serde_json::from_str(text).map_err(|e| Error::parse(e.line(), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is serializable")
    }

    pub fn with_profile(mut self, profile: Profile) -> Self {
        self.lambda_thr = profile.lambda_thr();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let unit_open = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!(
                    "{name} must lie in (0, 1], got {v}"
                )))
            }
        };
        unit_open("lambda_thr", self.lambda_thr)?;
        unit_open("nms_iou", self.nms_iou)?;
        unit_open("match_iou", self.match_iou)?;
        if !(0.0..=1.0).contains(&self.score_thr) {
            return Err(Error::InvalidArgument(format!(
                "score_thr must lie in [0, 1], got {}",
                self.score_thr
            )));
        }
        self.weights.validate()?;
        if !(self.fit.lr >= 0.0 && self.fit.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "fit.lr must be >= 0, got {}",
                self.fit.lr
            )));
        }
        if !(self.fit.fd_step > 0.0 && self.fit.fd_step.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "fit.fd_step must be positive, got {}",
                self.fit.fd_step
            )));
        }
        Ok(())
    }

    pub fn reiou(&self) -> REiouOptions {
        REiouOptions {
            iou: self.iou,
            lambda_thr: self.lambda_thr,
        }
    }

    pub fn nms(&self) -> NmsOptions {
        NmsOptions {
            iou_thr: self.nms_iou,
            score_thr: self.score_thr,
            per_class: true,
            lambda_thr: self.lambda_thr,
        }
    }
}
