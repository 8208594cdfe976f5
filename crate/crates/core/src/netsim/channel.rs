//! SINR link capacity with log-distance path loss.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelModel {
    pub path_loss_exponent: f64,
    /// Power gain at 1 m.
    pub reference_gain: f64,
    pub noise_floor_mw: f64,
    /// Use `log2(SINR)` in place of `log2(1 + SINR)`.
    pub high_snr_approx: bool,
    /// Fraction of the Shannon rate a real radio achieves.
    pub rate_efficiency: f64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        ChannelModel {
            path_loss_exponent: 3.0,
            reference_gain: 1e-3,
            noise_floor_mw: 3e-7,
            high_snr_approx: false,
            rate_efficiency: 0.01,
        }
    }
}

impl ChannelModel {
    pub fn gain(&self, distance_m: f64) -> f64 {
        self.reference_gain * distance_m.max(1.0).powf(-self.path_loss_exponent)
    }
}

pub fn db_to_mw(gain_db: f64) -> f64 {
    10f64.powf(gain_db / 10.0)
}

const DB: f64 = std::f64::consts::LN_10 / 10.0;

/// Static propagation between every link transmitter and every link receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkGeometry {
    /// `gain[i][j]`: power gain from the transmitter of link `i` to the receiver of link `j`.
    pub gain: Vec<Vec<f64>>,
    pub band: Vec<usize>,
    /// Packets/s per bit/s/Hz: `eta * W / packet_size * (1 - fec)`, per link.
    pub scale: Vec<f64>,
    pub model: ChannelModel,
}

impl LinkGeometry {
    pub fn len(&self) -> usize {
        self.band.len()
    }

    pub fn is_empty(&self) -> bool {
        self.band.is_empty()
    }

    /// Received power at link `l`'s receiver from link `j`'s transmitter.
    pub fn received(&self, j: usize, l: usize, gains_db: &[f64]) -> f64 {
        db_to_mw(gains_db[j]) * self.gain[j][l]
    }

    /// Noise plus same-band interference at link `l`'s receiver.
    pub fn noise_plus_interference(&self, l: usize, gains_db: &[f64], active: &[bool]) -> f64 {
        let mut n = self.model.noise_floor_mw;
        for j in 0..self.len() {
            if j != l && active[j] && self.band[j] == self.band[l] {
                n += self.received(j, l, gains_db);
            }
        }
        n
    }

    pub fn sinr(&self, l: usize, gains_db: &[f64], active: &[bool]) -> f64 {
        self.received(l, l, gains_db) / self.noise_plus_interference(l, gains_db, active)
    }

    fn spectral(&self, s: f64) -> f64 {
        if self.model.high_snr_approx {
            s.max(f64::MIN_POSITIVE).log2()
        } else {
            (1.0 + s).log2()
        }
    }

    fn d_spectral(&self, s: f64) -> f64 {
        // d/ds of the spectral efficiency, times s.
        if self.model.high_snr_approx {
            1.0 / std::f64::consts::LN_2
        } else {
            s / (1.0 + s) / std::f64::consts::LN_2
        }
    }

    /// Capacity in packets/s for a receiver seeing `sinr`.
    pub fn capacity_at(&self, l: usize, sinr: f64) -> f64 {
        self.scale[l] * self.spectral(sinr)
    }

    pub fn capacity(&self, l: usize, gains_db: &[f64], active: &[bool]) -> f64 {
        self.capacity_at(l, self.sinr(l, gains_db, active))
    }

    /// `d c_l / d g_l` with the interference held fixed, given the receiver's noise plus interference.
    pub fn own_slope(&self, l: usize, gain_db: f64, n_plus_i: f64) -> (f64, f64) {
        let s = db_to_mw(gain_db) * self.gain[l][l] / n_plus_i;
        (self.capacity_at(l, s), self.scale[l] * self.d_spectral(s) * DB)
    }

    /// `d c_l / d g_j` (gains in dB).
    pub fn capacity_gradient(&self, l: usize, j: usize, gains_db: &[f64], active: &[bool]) -> f64 {
        let ni = self.noise_plus_interference(l, gains_db, active);
        let s = self.received(l, l, gains_db) / ni;
        let k = self.scale[l] * self.d_spectral(s) * DB;
        if j == l {
            k
        } else if active[j] && self.band[j] == self.band[l] {
            -k * self.received(j, l, gains_db) / ni
        } else {
            0.0
        }
    }
}
