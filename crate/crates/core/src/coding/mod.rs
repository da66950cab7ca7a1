//! LDPC-coded transmission: parity-check matrices, decoding, bit/symbol
//! soft conversions and the detector/decoder loop.

pub mod alist;
pub mod decoder;
pub mod llr;
pub mod peg;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use alist::{gf2_rank, parse_alist, Encoder, ParityCheckMatrix};
pub use decoder::{bp_decode, bp_decode_graph, DecodeOutput, DecoderGraph};
pub use llr::{belief_to_bit_llrs, llrs_to_symbol_priors, pilot_priors};
pub use peg::{girth, peg_construct};

use crate::channel::{Constellation, FrameLayout, ReceivedFrame};
use crate::detectors::{detect, DetectorDiagnostics, DetectorKind, DetectorParams};
use crate::spa::JointSymbolBelief;
use crate::{Error, Result};

/// Bound on every LLR and decoder message.
pub const LLR_CLAMP: f64 = 50.0;
pub const DEFAULT_BP_ITERS: usize = 50;

/// A parity-check matrix with its decoder graph and systematic encoder.
#[derive(Clone, Debug)]
pub struct LdpcCode {
    pub h: ParityCheckMatrix,
    pub graph: DecoderGraph,
    pub encoder: Encoder,
}

impl LdpcCode {
    pub fn new(h: ParityCheckMatrix) -> Self {
        let encoder = Encoder::new(&h);
        let graph = DecoderGraph::new(&h);
        LdpcCode { h, graph, encoder }
    }

    pub fn from_alist_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::new(parse_alist(&text)?))
    }

    pub fn n(&self) -> usize {
        self.h.n
    }

    pub fn k(&self) -> usize {
        self.encoder.k
    }

    pub fn rate(&self) -> f64 {
        self.k() as f64 / self.n() as f64
    }
}

/// Column weight and check count of the shipped desk-scale codes.
pub fn code_shape(rate: &str, length: usize) -> Result<(usize, usize)> {
    match rate {
        "1/2" => Ok((3, length / 2)),
        "4/5" => Ok((3, length / 5)),
        _ => Err(Error::Config(format!("unsupported code rate {rate:?} (1/2 or 4/5)"))),
    }
}

/// Construction seed of the shipped code fixtures.
pub const DEFAULT_CODE_SEED: u64 = 1;

/// Seeded PEG code of the given rate and length.
pub fn generate_code(rate: &str, length: usize, seed: u64) -> Result<ParityCheckMatrix> {
    let (w, m) = code_shape(rate, length)?;
    peg_construct(length, m, w, seed)
}

/// Seeded pseudo-random bit permutation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Interleaver {
    perm: Vec<usize>,
}

impl Interleaver {
    pub fn new(len: usize, seed: u64) -> Self {
        let mut perm: Vec<usize> = (0..len).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Interleaver { perm }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    /// `out[i] = x[perm[i]]`.
    pub fn interleave<T: Copy>(&self, x: &[T]) -> Vec<T> {
        self.perm.iter().map(|&p| x[p]).collect()
    }

    pub fn deinterleave<T: Copy + Default>(&self, y: &[T]) -> Vec<T> {
        let mut x = vec![T::default(); y.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = y[i];
        }
        x
    }
}

/// Smallest frame length whose payload holds `bits`.
pub fn coded_frame_len(
    pattern: &crate::channel::PilotPattern,
    nt: usize,
    bits_per_symbol: usize,
    bits: usize,
) -> usize {
    let per = nt * bits_per_symbol;
    let mut len = bits.div_ceil(per);
    while crate::channel::payload_bits(pattern, len, nt, bits_per_symbol) < bits {
        len += 1;
    }
    len
}

#[derive(Clone, Debug, PartialEq)]
pub struct TurboOutput {
    /// Decoded information bits after the final global iteration.
    pub info: Vec<u8>,
    /// Decoded information bits after each global iteration.
    pub per_iteration: Vec<Vec<u8>>,
    pub converged: bool,
    /// Detector posteriors (beliefs times priors) of the final round.
    pub beliefs: Vec<JointSymbolBelief>,
    pub diagnostics: DetectorDiagnostics,
}

/// Detector/decoder loop. The codeword is interleaved onto the first
/// `n` payload bits; remaining payload bits are filler the receiver treats
/// as unknown. Each round runs the detector with the current priors,
/// converts the posterior to bit LLRs, removes the a priori part, decodes,
/// and feeds the decoder extrinsics back as symbol priors.
#[allow(clippy::too_many_arguments)]
pub fn turbo_run(
    rx: &ReceivedFrame,
    kind: DetectorKind,
    code: &LdpcCode,
    interleaver: &Interleaver,
    layout: &FrameLayout,
    constellation: &Constellation,
    params: &DetectorParams,
    n_global: usize,
    truth: Option<&[usize]>,
) -> Result<TurboOutput> {
    let n = code.n();
    let payload = layout.payload_bits(constellation.bits_per_symbol());
    if interleaver.len() != n || payload < n {
        return Err(Error::Dimension(format!(
            "code length {n}, interleaver {}, payload {payload}",
            interleaver.len()
        )));
    }
    let mut la = vec![0.0; payload];
    let mut diag = DetectorDiagnostics::default();
    let mut per_iteration = Vec::with_capacity(n_global);
    let mut last = None;
    let mut last_app = Vec::new();
    for _ in 0..n_global.max(1) {
        let priors = llrs_to_symbol_priors(&la, layout, constellation)?;
        let (beliefs, d) = detect(kind, rx, &priors, constellation, params, truth)?;
        diag += d;
        let app: Vec<_> = beliefs.iter().zip(&priors).map(|(b, p)| b.with_prior(p)).collect();
        let l_app = belief_to_bit_llrs(&app, layout, constellation)?;
        let le: Vec<f64> = l_app.iter().zip(&la).map(|(a, p)| (a - p).clamp(-LLR_CLAMP, LLR_CLAMP)).collect();
        let chan = interleaver.deinterleave(&le[..n]);
        let dec = bp_decode_graph(&chan, &code.graph, DEFAULT_BP_ITERS);
        per_iteration.push(code.encoder.extract_info(&dec.bits));
        let ext: Vec<f64> =
            dec.posterior.iter().zip(&chan).map(|(p, c)| (p - c).clamp(-LLR_CLAMP, LLR_CLAMP)).collect();
        la[..n].copy_from_slice(&interleaver.interleave(&ext));
        last = Some(dec);
        last_app = app;
    }
    let dec = last.expect("at least one round");
    Ok(TurboOutput {
        info: per_iteration.last().cloned().unwrap_or_default(),
        per_iteration,
        converged: dec.converged,
        beliefs: last_app,
        diagnostics: diag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{
        apply_channel, build_frame, sample_phase_trajectories, ConstellationKind, Gains, PilotPattern,
    };
    use rand::Rng;

    #[test]
    fn interleaver_is_a_seeded_bijection() {
        let a = Interleaver::new(1000, 9);
        assert_eq!(a, Interleaver::new(1000, 9));
        assert_ne!(a, Interleaver::new(1000, 10));
        let x: Vec<u32> = (0..1000).collect();
        let y = a.interleave(&x);
        let mut s = y.clone();
        s.sort_unstable();
        assert_eq!(s, x);
        assert_eq!(a.deinterleave(&y), x);
    }

    #[test]
    fn frame_len_fits_payload() {
        let p = PilotPattern::from_name("1/20").unwrap();
        let len = coded_frame_len(&p, 2, 1, 2000);
        assert!(crate::channel::payload_bits(&p, len, 2, 1) >= 2000);
        assert!(crate::channel::payload_bits(&p, len - 1, 2, 1) < 2000);
    }

    fn noiseless_turbo(kind: DetectorKind, nt: usize, seed: u64) {
        let c = Constellation::new(ConstellationKind::Bpsk);
        let code = LdpcCode::new(peg_construct(200, 100, 3, 1).unwrap());
        let pattern = PilotPattern::from_name("1/20").unwrap();
        let len = coded_frame_len(&pattern, nt, 1, code.n());
        let layout = FrameLayout::new(&pattern, len, nt, &c).unwrap();
        let il = Interleaver::new(code.n(), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = DetectorParams { var_t: 0.0, var_r: 0.0, n_iters: 2, preamble: 10, zero_symbol_variance: false };
        for _ in 0..3 {
            let info: Vec<u8> = (0..code.k()).map(|_| rng.random_range(0..2)).collect();
            let cw = code.encoder.encode(&info).unwrap();
            let mut payload = il.interleave(&cw);
            payload.extend((code.n()..layout.payload_bits(1)).map(|_| rng.random_range(0..2u8)));
            let frame = build_frame(&payload, &c, &pattern, len, nt).unwrap();
            let traj = sample_phase_trajectories(len, nt, 1, 0.0, 0.0, &mut rng);
            let rx = apply_channel(&frame, &c, &traj, &Gains::unit(nt, 1), 1e-4, &mut rng).unwrap();
            let out = turbo_run(&rx, kind, &code, &il, &layout, &c, &params, 2, None).unwrap();
            assert_eq!(out.info, info, "{kind}");
            assert!(out.converged);
        }
    }

    #[test]
    fn noiseless_turbo_decodes_exactly() {
        for kind in [DetectorKind::SpaMap, DetectorKind::EucMap, DetectorKind::GaussMap, DetectorKind::VbMap] {
            noiseless_turbo(kind, 2, 2);
        }
        noiseless_turbo(DetectorKind::SpaMap, 1, 5);
    }
}

