//! Conversions between joint symbol beliefs, bit LLRs and symbol priors.

use crate::channel::{Constellation, FrameLayout};
use crate::circmath::logsumexp;
use crate::spa::{JointSymbolBelief, SymbolPrior};
use crate::{Error, Result};

use super::LLR_CLAMP;

/// Log marginal pmf of antenna `m`.
fn log_marginal(b: &JointSymbolBelief, m: usize) -> Vec<f64> {
    let size = b.size;
    let div = size.pow(m as u32);
    let mut buckets: Vec<Vec<f64>> = vec![Vec::with_capacity(b.candidates() / size); size];
    for (idx, lp) in b.log_pmf().iter().enumerate() {
        buckets[(idx / div) % size].push(*lp);
    }
    buckets.iter().map(|v| logsumexp(v)).collect()
}

/// Bit LLRs `ln P(0)/P(1)` of one antenna's symbol from its log pmf.
fn symbol_bit_llrs(logp: &[f64], constellation: &Constellation, out: &mut Vec<f64>) {
    let bps = constellation.bits_per_symbol();
    let mut zero = Vec::with_capacity(logp.len() / 2);
    let mut one = Vec::with_capacity(logp.len() / 2);
    for j in 0..bps {
        zero.clear();
        one.clear();
        for (i, lp) in logp.iter().enumerate() {
            if constellation.bit(i, j) == 0 {
                zero.push(*lp);
            } else {
                one.push(*lp);
            }
        }
        let l = logsumexp(&zero) - logsumexp(&one);
        out.push(if l.is_nan() { 0.0 } else { l.clamp(-LLR_CLAMP, LLR_CLAMP) });
    }
}

/// Payload-order bit LLRs (data positions in time order, antenna by
/// antenna, MSB first) from per-index beliefs; pilots are skipped.
pub fn belief_to_bit_llrs(
    beliefs: &[JointSymbolBelief],
    layout: &FrameLayout,
    constellation: &Constellation,
) -> Result<Vec<f64>> {
    if beliefs.len() != layout.len {
        return Err(Error::Dimension(format!("{} beliefs for {} symbols", beliefs.len(), layout.len)));
    }
    let mut out = Vec::with_capacity(layout.payload_bits(constellation.bits_per_symbol()));
    for k in layout.data_positions() {
        for m in 0..layout.nt {
            symbol_bit_llrs(&log_marginal(&beliefs[k], m), constellation, &mut out);
        }
    }
    Ok(out)
}

/// `ln P(bit = b)` from `L = ln P(0)/P(1)`.
#[inline]
fn log_bit_prob(l: f64, b: u8) -> f64 {
    let x = if b == 0 { -l } else { l };
    // -ln(1 + e^x)
    if x > 0.0 {
        -x - (-x).exp().ln_1p()
    } else {
        -x.exp().ln_1p()
    }
}

/// Per-index symbol priors: point masses at pilots, independent-bit
/// products of `llrs` (payload order) at data positions.
pub fn llrs_to_symbol_priors(
    llrs: &[f64],
    layout: &FrameLayout,
    constellation: &Constellation,
) -> Result<Vec<SymbolPrior>> {
    let bps = constellation.bits_per_symbol();
    let size = constellation.size();
    let nt = layout.nt;
    if llrs.len() != layout.payload_bits(bps) {
        return Err(Error::Dimension(format!(
            "{} LLRs for {} payload bits",
            llrs.len(),
            layout.payload_bits(bps)
        )));
    }
    let mut chunks = llrs.chunks(bps);
    let mut out = Vec::with_capacity(layout.len);
    for k in 0..layout.len {
        if layout.pilot_mask[k] {
            out.push(SymbolPrior::delta(&layout.pilots[k * nt..(k + 1) * nt], size));
            continue;
        }
        let mut p = Vec::with_capacity(nt * size);
        for _ in 0..nt {
            let l = chunks.next().expect("length checked");
            let logs: Vec<f64> = (0..size)
                .map(|i| (0..bps).map(|j| log_bit_prob(l[j], constellation.bit(i, j))).sum())
                .collect();
            let z = logsumexp(&logs);
            p.extend(logs.iter().map(|v| (v - z).exp()));
        }
        out.push(SymbolPrior::from_rows(nt, size, p)?);
    }
    Ok(out)
}

/// Priors with pilots fixed and every data symbol uniform.
pub fn pilot_priors(layout: &FrameLayout, constellation: &Constellation) -> Vec<SymbolPrior> {
    let size = constellation.size();
    (0..layout.len)
        .map(|k| {
            if layout.pilot_mask[k] {
                SymbolPrior::delta(&layout.pilots[k * layout.nt..(k + 1) * layout.nt], size)
            } else {
                SymbolPrior::uniform(layout.nt, size)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ConstellationKind, PilotPattern};
    use proptest::prelude::*;

    fn layout(nt: usize, c: &Constellation) -> FrameLayout {
        FrameLayout::new(&PilotPattern::new(2, 4, 1).unwrap(), 12, nt, c).unwrap()
    }

    #[test]
    fn bpsk_examples() {
        let c = Constellation::new(ConstellationKind::Bpsk);
        let b = JointSymbolBelief::from_log(1, 2, vec![0.9f64.ln(), 0.1f64.ln()]);
        let mut out = Vec::new();
        symbol_bit_llrs(&log_marginal(&b, 0), &c, &mut out);
        assert!((out[0] - 9f64.ln()).abs() < 1e-12);
        out.clear();
        symbol_bit_llrs(&log_marginal(&JointSymbolBelief::uniform(1, 2), 0), &c, &mut out);
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn qam_delta_clamps_with_label_signs() {
        let c = Constellation::new(ConstellationKind::Qam16);
        for s in 0..16 {
            let b = JointSymbolBelief::delta(&[s], 16);
            let mut out = Vec::new();
            symbol_bit_llrs(&log_marginal(&b, 0), &c, &mut out);
            for (j, l) in out.iter().enumerate() {
                let want = if c.bit(s, j) == 0 { LLR_CLAMP } else { -LLR_CLAMP };
                assert_eq!(*l, want);
            }
        }
    }

    #[test]
    fn zero_llrs_give_uniform_priors_and_pilots_stay_fixed() {
        let c = Constellation::new(ConstellationKind::Qpsk);
        let lay = layout(2, &c);
        let pri = llrs_to_symbol_priors(&vec![0.0; lay.payload_bits(2)], &lay, &c).unwrap();
        for k in 0..lay.len {
            if lay.pilot_mask[k] {
                assert_eq!(pri[k], SymbolPrior::delta(&lay.pilots[2 * k..2 * k + 2], 4));
            } else {
                assert!(pri[k].is_uniform());
            }
        }
        assert_eq!(pri, pilot_priors(&lay, &c));
    }

    #[test]
    fn clamped_llrs_give_near_deltas() {
        let c = Constellation::new(ConstellationKind::Qam16);
        let lay = layout(1, &c);
        let bits: Vec<u8> = (0..lay.payload_bits(4)).map(|i| (i * 7 % 3 == 0) as u8).collect();
        let l: Vec<f64> = bits.iter().map(|&b| if b == 0 { LLR_CLAMP } else { -LLR_CLAMP }).collect();
        let pri = llrs_to_symbol_priors(&l, &lay, &c).unwrap();
        for (d, k) in lay.data_positions().enumerate() {
            let want = c.index_of_bits(&bits[4 * d..4 * d + 4]);
            assert!(pri[k].row(0)[want] > 1.0 - 1e-15);
        }
    }

    proptest! {
        #[test]
        fn bpsk_round_trip(l in proptest::collection::vec(-40.0f64..40.0, 8)) {
            let c = Constellation::new(ConstellationKind::Bpsk);
            let lay = layout(1, &c);
            let pri = llrs_to_symbol_priors(&l, &lay, &c).unwrap();
            let beliefs: Vec<JointSymbolBelief> = pri
                .iter()
                .map(|p| JointSymbolBelief::from_log(1, 2, p.p.iter().map(|x| x.ln()).collect()))
                .collect();
            let back = belief_to_bit_llrs(&beliefs, &lay, &c).unwrap();
            for (a, b) in l.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
            }
        }
    }
}
