use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Seed of the fixed pilot sequence; reported in run metadata.
pub const PILOT_SEED: u64 = 0x9E37_79B9_7F4A_7C15;

/// Pilot placement: `preamble` pilots, then repeating cycles of
/// `period - burst` data symbols followed by `burst` pilots. `burst = 0`
/// disables periodic pilots; `all` marks every position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PilotPattern {
    pub preamble: usize,
    pub period: usize,
    pub burst: usize,
    #[serde(default)]
    pub all: bool,
}

impl PilotPattern {
    pub fn new(preamble: usize, period: usize, burst: usize) -> Result<Self> {
        let p = PilotPattern { preamble, period, burst, all: false };
        p.validate()?;
        Ok(p)
    }

    pub fn none() -> Self {
        PilotPattern { preamble: 0, period: 0, burst: 0, all: false }
    }

    pub fn all() -> Self {
        PilotPattern { preamble: 0, period: 0, burst: 0, all: true }
    }

    pub fn preamble_only(preamble: usize) -> Self {
        PilotPattern { preamble, period: 0, burst: 0, all: false }
    }

    /// Named layouts: `none`, `all`, `1/20` (10-symbol preamble, one pilot
    /// per 20 symbols), `5/100` (10-symbol preamble, a burst of 5 per 100),
    /// or `P:period:burst`.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "none" => Ok(Self::none()),
            "all" => Ok(Self::all()),
            "1/20" => Self::new(10, 20, 1),
            "5/100" => Self::new(10, 100, 5),
            _ => {
                let parts: Vec<&str> = name.split(':').collect();
                let parse = |s: &str| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::Config(format!("bad pilot pattern {name:?}")))
                };
                if parts.len() != 3 {
                    return Err(Error::Config(format!("unknown pilot pattern {name:?}")));
                }
                Self::new(parse(parts[0])?, parse(parts[1])?, parse(parts[2])?)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.burst > 0 && self.period <= self.burst {
            return Err(Error::Config(format!(
                "pilot period {} must exceed burst {}",
                self.period, self.burst
            )));
        }
        Ok(())
    }

    pub fn is_pilot(&self, k: usize) -> bool {
        if self.all || k < self.preamble {
            return true;
        }
        if self.burst == 0 {
            return false;
        }
        (k - self.preamble) % self.period >= self.period - self.burst
    }

    pub fn mask(&self, len: usize) -> Vec<bool> {
        (0..len).map(|k| self.is_pilot(k)).collect()
    }

    /// `preamble/L + (L - preamble) burst / (period L)`.
    pub fn nominal_density(&self, len: usize) -> f64 {
        if self.all {
            return 1.0;
        }
        let l = len as f64;
        let pre = self.preamble.min(len) as f64;
        let periodic = if self.burst == 0 {
            0.0
        } else {
            (l - pre) * self.burst as f64 / (self.period as f64 * l)
        };
        pre / l + periodic
    }
}

#[inline]
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Point index of the pilot at time `k` on transmit antenna `m`.
pub fn pilot_index(k: usize, m: usize, constellation_size: usize) -> usize {
    let h = splitmix64(PILOT_SEED ^ splitmix64(((k as u64) << 8) | m as u64));
    (h % constellation_size as u64) as usize
}
