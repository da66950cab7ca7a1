use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ChannelMode, SimConfig};
use super::seed::derive_frame_seed;
use super::stats::{rate, wilson_interval, Z95};
use crate::channel::{
    apply_channel, build_frame, n0_from_ebn0, rayleigh_gains, sample_phase_trajectories, Constellation, Frame,
    FrameLayout, Gains, PilotPattern,
};
use crate::coding::{coded_frame_len, pilot_priors, turbo_run, Interleaver, LdpcCode};
use crate::detectors::{detect, DetectorDiagnostics, DetectorKind, DetectorParams};
use crate::spa::JointSymbolBelief;
use crate::{Error, Result};

/// One CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub detector: DetectorKind,
    pub ebn0_db: f64,
    pub bits: u64,
    pub bit_errors: u64,
    pub symbols: u64,
    pub symbol_errors: u64,
    pub frames: u64,
    pub frame_errors: u64,
    pub ber: f64,
    pub ser: f64,
    pub fer: f64,
    pub ber_lo: f64,
    pub ber_hi: f64,
    pub ser_lo: f64,
    pub ser_hi: f64,
    pub fer_lo: f64,
    pub fer_hi: f64,
    pub partial: bool,
    pub error: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub bits: u64,
    pub bit_errors: u64,
    pub symbols: u64,
    pub symbol_errors: u64,
    pub frames: u64,
    pub frame_errors: u64,
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Self) {
        self.bits += o.bits;
        self.bit_errors += o.bit_errors;
        self.symbols += o.symbols;
        self.symbol_errors += o.symbol_errors;
        self.frames += o.frames;
        self.frame_errors += o.frame_errors;
    }
}

impl SweepRow {
    pub fn new(detector: DetectorKind, ebn0_db: f64, c: &Counts, partial: bool, error: String) -> Self {
        let (ber_lo, ber_hi) = wilson_interval(c.bit_errors, c.bits, Z95);
        let (ser_lo, ser_hi) = wilson_interval(c.symbol_errors, c.symbols, Z95);
        let (fer_lo, fer_hi) = wilson_interval(c.frame_errors, c.frames, Z95);
        SweepRow {
            detector,
            ebn0_db,
            bits: c.bits,
            bit_errors: c.bit_errors,
            symbols: c.symbols,
            symbol_errors: c.symbol_errors,
            frames: c.frames,
            frame_errors: c.frame_errors,
            ber: rate(c.bit_errors, c.bits),
            ser: rate(c.symbol_errors, c.symbols),
            fer: rate(c.frame_errors, c.frames),
            ber_lo,
            ber_hi,
            ser_lo,
            ser_hi,
            fer_lo,
            fer_hi,
            partial,
            error,
        }
    }
}

/// A row plus what does not belong in the byte-stable CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct PointResult {
    pub row: SweepRow,
    pub n0: f64,
    pub wall_seconds: f64,
    pub diagnostics: DetectorDiagnostics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub points: Vec<PointResult>,
    pub wall_seconds: f64,
}

impl SweepResult {
    pub fn rows(&self) -> impl Iterator<Item = &SweepRow> {
        self.points.iter().map(|p| &p.row)
    }

    pub fn row(&self, detector: DetectorKind, ebn0_db: f64) -> Option<&SweepRow> {
        self.rows().find(|r| r.detector == detector && r.ebn0_db == ebn0_db)
    }
}

struct Coded {
    code: LdpcCode,
    interleaver: Interleaver,
    n_global: usize,
}

#[derive(Debug, Default)]
struct FrameOutcome {
    counts: Counts,
    diagnostics: DetectorDiagnostics,
}

/// Everything derived once from a validated config.
pub struct Simulator {
    pub config: SimConfig,
    constellation: Constellation,
    pattern: PilotPattern,
    layout: FrameLayout,
    params: DetectorParams,
    coded: Option<Coded>,
    /// Information bits per frame over payload bits, the `code_rate` of the
    /// N0 conversion (filler bits count as overhead).
    code_rate: f64,
}

impl Simulator {
    pub fn new(config: &SimConfig) -> Result<Self> {
        config.validate()?;
        let constellation = Constellation::new(config.constellation);
        let bps = constellation.bits_per_symbol();
        let pattern = config.pattern()?;
        let coded = match &config.coded {
            Some(c) => {
                let code = LdpcCode::from_alist_file(&c.code)?;
                let interleaver = Interleaver::new(code.n(), c.interleaver_seed);
                Some(Coded { code, interleaver, n_global: c.n_global })
            }
            None => None,
        };
        let len = match (&coded, config.len) {
            (None, Some(len)) => len,
            (Some(c), len) => {
                let min = coded_frame_len(&pattern, config.nt, bps, c.code.n());
                match len {
                    Some(l) if l < min => {
                        return Err(Error::Config(format!("frame length {l} cannot hold the codeword (needs {min})")))
                    }
                    Some(l) => l,
                    None => min,
                }
            }
            (None, None) => unreachable!("validated"),
        };
        let layout = FrameLayout::new(&pattern, len, config.nt, &constellation)?;
        if layout.data_len() == 0 {
            return Err(Error::Config("frame has no data symbols".into()));
        }
        let payload = layout.payload_bits(bps);
        let code_rate = coded.as_ref().map_or(1.0, |c| c.code.k() as f64 / payload as f64);
        Ok(Simulator { params: config.detector_params()?, config: config.clone(), constellation, pattern, layout, coded, code_rate })
    }

    pub fn frame_len(&self) -> usize {
        self.layout.len
    }

    pub fn n0(&self, ebn0_db: f64) -> f64 {
        let data_fraction = self.layout.data_len() as f64 / self.layout.len as f64;
        n0_from_ebn0(ebn0_db, self.constellation.bits_per_symbol(), self.code_rate, data_fraction)
    }

    fn gains<R: Rng + ?Sized>(&self, rng: &mut R) -> Gains {
        match self.config.channel {
            ChannelMode::Unit => Gains::unit(self.config.nt, self.config.nr),
            ChannelMode::RayleighKnown => rayleigh_gains(self.config.nt, self.config.nr, rng),
        }
    }

    /// Symbol and bit errors of the decisions at data positions.
    fn count_symbols(&self, frame: &Frame, beliefs: &[JointSymbolBelief], counts: &mut Counts) {
        let bps = self.constellation.bits_per_symbol();
        for k in frame.data_positions() {
            let d = beliefs[k].decision();
            for (m, &s) in d.iter().enumerate() {
                let t = frame.symbol(k, m);
                counts.symbols += 1;
                if s != t {
                    counts.symbol_errors += 1;
                    counts.bit_errors +=
                        (0..bps).filter(|&j| self.constellation.bit(s, j) != self.constellation.bit(t, j)).count() as u64;
                }
            }
        }
    }

    fn simulate_frame(&self, kind: DetectorKind, n0: f64, seed: u64) -> Result<FrameOutcome> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (nt, nr, len) = (self.config.nt, self.config.nr, self.layout.len);
        let payload = self.layout.payload_bits(self.constellation.bits_per_symbol());
        let gains = self.gains(&mut rng);
        let mut out = FrameOutcome::default();
        let info: Vec<u8>;
        let bits = match &self.coded {
            Some(c) => {
                info = (0..c.code.k()).map(|_| rng.random_range(0..2u8)).collect();
                let mut b = c.interleaver.interleave(&c.code.encoder.encode(&info)?);
                b.extend((c.code.n()..payload).map(|_| rng.random_range(0..2u8)));
                b
            }
            None => {
                info = Vec::new();
                (0..payload).map(|_| rng.random_range(0..2u8)).collect()
            }
        };
        let frame = build_frame(&bits, &self.constellation, &self.pattern, len, nt)?;
        let traj = sample_phase_trajectories(len, nt, nr, self.params.var_t, self.params.var_r, &mut rng);
        let rx = apply_channel(&frame, &self.constellation, &traj, &gains, n0, &mut rng)?;
        let priors = pilot_priors(&self.layout, &self.constellation);
        let truth = Some(frame.symbols.as_slice());
        match &self.coded {
            None => {
                let (beliefs, diag) = detect(kind, &rx, &priors, &self.constellation, &self.params, truth)?;
                self.count_symbols(&frame, &beliefs, &mut out.counts);
                out.counts.bits = payload as u64;
                out.diagnostics = diag;
            }
            Some(c) => {
                let t = turbo_run(
                    &rx,
                    kind,
                    &c.code,
                    &c.interleaver,
                    &self.layout,
                    &self.constellation,
                    &self.params,
                    c.n_global,
                    truth,
                )?;
                self.count_symbols(&frame, &t.beliefs, &mut out.counts);
                out.counts.bits = info.len() as u64;
                out.counts.bit_errors = t.info.iter().zip(&info).filter(|(a, b)| a != b).count() as u64;
                out.diagnostics = t.diagnostics;
            }
        }
        out.counts.frames = 1;
        out.counts.frame_errors = (out.counts.bit_errors > 0) as u64;
        Ok(out)
    }

    fn done(&self, c: &Counts) -> bool {
        let cfg = &self.config;
        c.frames >= cfg.max_frames
            || (c.frames >= cfg.min_frames && (c.frame_errors >= cfg.min_frame_errors || c.bit_errors >= cfg.min_bit_errors))
    }

    /// Simulates frames `0, 1, ...` of point `point` until a stop rule
    /// fires. Frames run in parallel batches but are folded in index order,
    /// and frames past the stopping one are discarded, so the counts do not
    /// depend on the number of workers. Only the wall-clock budget can cut
    /// a point short nondeterministically; such rows are flagged partial.
    pub fn run_point(&self, kind: DetectorKind, point: usize, ebn0_db: f64) -> PointResult {
        let start = Instant::now();
        let n0 = self.n0(ebn0_db);
        let batch = (2 * rayon::current_num_threads()).max(2) as u64;
        let mut counts = Counts::default();
        let mut diagnostics = DetectorDiagnostics::default();
        let mut error = String::new();
        let mut partial = false;
        'outer: while !self.done(&counts) {
            if let Some(t) = self.config.max_seconds {
                if start.elapsed().as_secs_f64() > t {
                    partial = true;
                    break;
                }
            }
            let first = counts.frames;
            let last = (first + batch).min(self.config.max_frames);
            let outcomes: Vec<Result<FrameOutcome>> = (first..last)
                .into_par_iter()
                .map(|f| self.simulate_frame(kind, n0, derive_frame_seed(self.config.seed, f, point as u64)))
                .collect();
            for o in outcomes {
                match o {
                    Ok(o) => {
                        counts += o.counts;
                        diagnostics += o.diagnostics;
                    }
                    Err(e) => {
                        error = e.to_string();
                        break 'outer;
                    }
                }
                if self.done(&counts) {
                    break 'outer;
                }
            }
        }
        if !error.is_empty() {
            log::warn!("{kind} at {ebn0_db} dB failed after {} frames: {error}", counts.frames);
        }
        log::info!(
            "{kind} {ebn0_db} dB: {} frames, {} bit errors, {} frame errors",
            counts.frames,
            counts.bit_errors,
            counts.frame_errors
        );
        PointResult {
            row: SweepRow::new(kind, ebn0_db, &counts, partial, error),
            n0,
            wall_seconds: start.elapsed().as_secs_f64(),
            diagnostics,
        }
    }

    /// Every (detector, E_b/N_0) pair, rows sorted by detector name then
    /// E_b/N_0. A point's index is its position in the E_b/N_0 grid, so all
    /// detectors see the same frames at a given point.
    pub fn run_sweep(&self) -> SweepResult {
        let start = Instant::now();
        let jobs: Vec<(DetectorKind, usize, f64)> = self
            .config
            .detectors
            .iter()
            .flat_map(|&d| self.config.ebn0_db.iter().enumerate().map(move |(i, &e)| (d, i, e)))
            .collect();
        let mut points: Vec<PointResult> = jobs.into_par_iter().map(|(d, i, e)| self.run_point(d, i, e)).collect();
        points.sort_by(|a, b| {
            a.row.detector.name().cmp(b.row.detector.name()).then(a.row.ebn0_db.total_cmp(&b.row.ebn0_db))
        });
        SweepResult { points, wall_seconds: start.elapsed().as_secs_f64() }
    }
}

pub fn run_sweep(config: &SimConfig) -> Result<SweepResult> {
    Ok(Simulator::new(config)?.run_sweep())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ConstellationKind;

    fn config(detectors: Vec<DetectorKind>, ebn0: Vec<f64>) -> SimConfig {
        SimConfig {
            nt: 1,
            nr: 1,
            constellation: ConstellationKind::Bpsk,
            pilots: "1/20".into(),
            len: Some(200),
            sigma_t_deg: 2.0,
            sigma_r_deg: 2.0,
            ebn0_db: ebn0,
            detectors,
            channel: ChannelMode::Unit,
            coded: None,
            n_iters: 2,
            min_frame_errors: 20,
            min_bit_errors: 50,
            min_frames: 0,
            max_frames: 40,
            max_seconds: None,
            seed: 3,
        }
    }

    #[test]
    fn one_point_one_row_within_limits() {
        let r = run_sweep(&config(vec![DetectorKind::EucMap], vec![3.0])).unwrap();
        assert_eq!(r.points.len(), 1);
        let row = &r.points[0].row;
        assert!(row.error.is_empty() && !row.partial);
        assert!(row.frames <= 40 && row.frames > 0);
        assert!(row.bit_errors <= row.bits && row.symbol_errors <= row.symbols && row.frame_errors <= row.frames);
        assert!(row.ber_lo <= row.ber && row.ber <= row.ber_hi);
        let data = PilotPattern::from_name("1/20").unwrap().mask(200).iter().filter(|p| !**p).count() as u64;
        assert_eq!(row.symbols, row.frames * data);
        assert_eq!(row.bits, row.symbols);
        let stopped_by_errors = row.frame_errors >= 20 || row.bit_errors >= 50;
        assert!(stopped_by_errors || row.frames == 40);
    }

    #[test]
    fn same_seed_same_rows_and_sorted() {
        let c = config(vec![DetectorKind::SpaMap, DetectorKind::EucMap], vec![6.0, 2.0]);
        let a = run_sweep(&c).unwrap();
        let b = run_sweep(&c).unwrap();
        assert_eq!(a.rows().collect::<Vec<_>>(), b.rows().collect::<Vec<_>>());
        let keys: Vec<(&str, f64)> = a.rows().map(|r| (r.detector.name(), r.ebn0_db)).collect();
        assert_eq!(keys, vec![("euc-map", 2.0), ("euc-map", 6.0), ("spa-map", 2.0), ("spa-map", 6.0)]);
    }

    #[test]
    fn min_frames_is_respected() {
        let mut c = config(vec![DetectorKind::EucMap], vec![0.0]);
        c.min_frames = 30;
        let r = run_sweep(&c).unwrap();
        assert_eq!(r.points[0].row.frames, 30);
    }

    #[test]
    fn wall_clock_budget_marks_partial() {
        let mut c = config(vec![DetectorKind::EucMap], vec![30.0]);
        c.max_frames = 1_000_000;
        c.max_seconds = Some(1e-9);
        let r = run_sweep(&c).unwrap();
        assert!(r.points[0].row.partial);
    }
}
