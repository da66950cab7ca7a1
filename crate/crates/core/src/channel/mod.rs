//! Transmit framing, oscillator phase noise and the received-signal model.

mod constellation;
mod frame;
mod phase;
mod pilots;

pub use constellation::{Constellation, ConstellationKind};
pub use frame::{
    apply_channel, build_frame, payload_bits, rayleigh_gains, Frame, FrameLayout, Gains, ReceivedFrame,
};
pub use phase::{sample_phase_trajectories, PhaseTrajectory};
pub use pilots::{pilot_index, splitmix64, PilotPattern, PILOT_SEED};

/// Noise variance for a target `E_b/N_0` with unit-energy symbols per
/// transmit antenna: `N_0 = 1 / (bits_per_symbol · code_rate ·
/// data_fraction · 10^(ebn0_db/10))`.
pub fn n0_from_ebn0(ebn0_db: f64, bits_per_symbol: usize, code_rate: f64, data_fraction: f64) -> f64 {
    1.0 / (bits_per_symbol as f64 * code_rate * data_fraction * 10f64.powf(ebn0_db / 10.0))
}

pub const N0_FORMULA: &str =
    "N0 = 1 / (bits_per_symbol * code_rate * data_fraction * 10^(EbN0_dB/10)), Es = 1 per transmit antenna";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn n0_conversion() {
        assert!((n0_from_ebn0(0.0, 1, 1.0, 1.0) - 1.0).abs() < 1e-15);
        assert!((n0_from_ebn0(10.0, 2, 0.5, 1.0) - 0.1).abs() < 1e-15);
    }
}
