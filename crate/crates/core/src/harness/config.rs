use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::{Constellation, ConstellationKind, PilotPattern};
use crate::detectors::{DetectorKind, DetectorParams};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelMode {
    /// All gains equal to 1.
    #[default]
    Unit,
    /// I.i.d. CN(0, 1) gains redrawn per frame and known to the receiver.
    RayleighKnown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodedConfig {
    /// alist file; relative paths are resolved against the config file.
    pub code: PathBuf,
    #[serde(default = "default_n_global")]
    pub n_global: usize,
    #[serde(default)]
    pub interleaver_seed: u64,
}

fn default_n_global() -> usize {
    2
}

fn default_n_iters() -> usize {
    2
}

fn default_min_frame_errors() -> u64 {
    200
}

fn default_min_bit_errors() -> u64 {
    2000
}

fn default_max_frames() -> u64 {
    100_000
}

fn default_pilots() -> String {
    "1/20".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub nt: usize,
    pub nr: usize,
    pub constellation: ConstellationKind,
    #[serde(default = "default_pilots")]
    pub pilots: String,
    /// Frame length in symbols. Required uncoded; coded runs default to the
    /// shortest frame holding one codeword.
    #[serde(default)]
    pub len: Option<usize>,
    pub sigma_t_deg: f64,
    pub sigma_r_deg: f64,
    pub ebn0_db: Vec<f64>,
    pub detectors: Vec<DetectorKind>,
    #[serde(default)]
    pub channel: ChannelMode,
    #[serde(default)]
    pub coded: Option<CodedConfig>,
    /// Smoother/detector rounds for the smoother-based receivers.
    #[serde(default = "default_n_iters")]
    pub n_iters: usize,
    /// A point stops once it has this many frame errors ...
    #[serde(default = "default_min_frame_errors")]
    pub min_frame_errors: u64,
    /// ... or this many bit errors ...
    #[serde(default = "default_min_bit_errors")]
    pub min_bit_errors: u64,
    /// ... but never before this many frames ...
    #[serde(default)]
    pub min_frames: u64,
    /// ... and always at this many.
    #[serde(default = "default_max_frames")]
    pub max_frames: u64,
    /// Per-point wall-clock budget; a point cut short is flagged partial.
    #[serde(default)]
    pub max_seconds: Option<f64>,
    pub seed: u64,
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: SimConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut c = Self::from_json(&std::fs::read_to_string(path)?)?;
        if let (Some(coded), Some(dir)) = (c.coded.as_mut(), path.parent()) {
            if coded.code.is_relative() {
                coded.code = dir.join(&coded.code);
            }
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.nt == 0 || self.nr == 0 {
            return bad(format!("antenna counts must be positive, got {}x{}", self.nt, self.nr));
        }
        // The joint detectors enumerate size^nt candidates.
        let size = Constellation::new(self.constellation).size();
        if size.checked_pow(self.nt as u32).is_none_or(|c| c > 1 << 16) {
            return bad(format!("{} candidates per symbol vector is too many", size.pow(self.nt.min(8) as u32)));
        }
        let pattern = PilotPattern::from_name(&self.pilots)?;
        for (name, s) in [("sigma_t_deg", self.sigma_t_deg), ("sigma_r_deg", self.sigma_r_deg)] {
            if !(s.is_finite() && s >= 0.0) {
                return bad(format!("{name} must be finite and nonnegative, got {s}"));
            }
        }
        if self.ebn0_db.is_empty() || self.ebn0_db.iter().any(|x| !x.is_finite()) {
            return bad("ebn0_db must be a nonempty list of finite values".into());
        }
        if self.detectors.is_empty() {
            return bad("no detectors selected".into());
        }
        let mut d = self.detectors.clone();
        d.sort();
        d.dedup();
        if d.len() != self.detectors.len() {
            return bad("duplicate detector".into());
        }
        if self.n_iters == 0 {
            return bad("n_iters must be at least 1".into());
        }
        if self.max_frames == 0 || self.min_frames > self.max_frames {
            return bad(format!("frame limits min {} max {}", self.min_frames, self.max_frames));
        }
        if let Some(t) = self.max_seconds {
            if !(t > 0.0) {
                return bad(format!("max_seconds must be positive, got {t}"));
            }
        }
        if let Some(c) = &self.coded {
            if c.n_global == 0 {
                return bad("n_global must be at least 1".into());
            }
        }
        match (self.len, &self.coded) {
            (None, None) => return bad("uncoded runs need a frame length".into()),
            (Some(len), _) if len <= pattern.preamble => {
                return bad(format!("frame length {len} leaves no data after the preamble"))
            }
            _ => {}
        }
        if pattern.preamble == 0 && d.iter().any(|k| k.uses_smoother()) {
            return bad("smoother-based detectors need a pilot preamble".into());
        }
        Ok(())
    }

    pub fn pattern(&self) -> Result<PilotPattern> {
        PilotPattern::from_name(&self.pilots)
    }

    pub fn detector_params(&self) -> Result<DetectorParams> {
        let rad = |deg: f64| (deg.to_radians()).powi(2);
        Ok(DetectorParams {
            var_t: rad(self.sigma_t_deg),
            var_r: rad(self.sigma_r_deg),
            n_iters: self.n_iters,
            preamble: self.pattern()?.preamble,
            zero_symbol_variance: false,
        })
    }

    /// Canonical JSON, the input to the config hash.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
