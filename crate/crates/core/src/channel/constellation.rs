use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConstellationKind {
    #[serde(rename = "bpsk")]
    Bpsk,
    #[serde(rename = "qpsk")]
    Qpsk,
    #[serde(rename = "16qam")]
    Qam16,
}

impl std::str::FromStr for ConstellationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bpsk" => Ok(ConstellationKind::Bpsk),
            "qpsk" => Ok(ConstellationKind::Qpsk),
            "16qam" | "qam16" | "16-qam" => Ok(ConstellationKind::Qam16),
            _ => Err(Error::Config(format!("unknown constellation {s:?}"))),
        }
    }
}

/// Unit average energy constellation. The point at index `i` carries the
/// bit label `i`, most significant bit first; QAM labels are Gray coded
/// per axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Constellation {
    kind: ConstellationKind,
    points: Vec<Complex64>,
    bits: usize,
}

// Gray-coded 4-PAM levels indexed by the two-bit label.
const PAM4: [f64; 4] = [-3.0, -1.0, 3.0, 1.0];

impl Constellation {
    pub fn new(kind: ConstellationKind) -> Self {
        let points = match kind {
            ConstellationKind::Bpsk => vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)],
            ConstellationKind::Qpsk => (0..4)
                .map(|i| {
                    let re = if i & 2 == 0 { 1.0 } else { -1.0 };
                    let im = if i & 1 == 0 { 1.0 } else { -1.0 };
                    Complex64::new(re, im) * FRAC_1_SQRT_2
                })
                .collect(),
            ConstellationKind::Qam16 => {
                let s = 1.0 / 10f64.sqrt();
                (0..16).map(|i| Complex64::new(PAM4[i >> 2] * s, PAM4[i & 3] * s)).collect()
            }
        };
        let bits = points.len().trailing_zeros() as usize;
        Constellation { kind, points, bits }
    }

    pub fn kind(&self) -> ConstellationKind {
        self.kind
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Complex64 {
        self.points[i]
    }

    pub fn size(&self) -> usize {
        self.points.len()
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits
    }

    /// Bit `j` (0 = most significant) of the label of point `i`.
    #[inline]
    pub fn bit(&self, i: usize, j: usize) -> u8 {
        ((i >> (self.bits - 1 - j)) & 1) as u8
    }

    /// Point index carrying the given bits, most significant first.
    pub fn index_of_bits(&self, bits: &[u8]) -> usize {
        debug_assert_eq!(bits.len(), self.bits);
        bits.iter().fold(0, |acc, b| (acc << 1) | (*b as usize & 1))
    }

    /// Index of the nearest point, lowest index on ties.
    pub fn nearest(&self, x: Complex64) -> usize {
        let mut best = 0;
        let mut bd = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (x - p).norm_sqr();
            if d < bd {
                bd = d;
                best = i;
            }
        }
        best
    }
}
