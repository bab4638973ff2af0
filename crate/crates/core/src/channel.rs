//! Uplink channel and latency model.
//!
//! OFDMA uplink: UE `k` gets a fraction `alpha` of the band `B` and achieves
//! `alpha * B * log2(1 + g P / (alpha B N0))` bits/s. A scheduled UE must
//! finish local training and the upload of an `s`-bit update within the
//! round deadline `T`.

use rand::Rng;
use rand_distr::Exp1;

use crate::config::SimulationConfig;
use crate::rng::RngStream;

/// Absolute tolerance of the bisection on the bandwidth fraction.
pub const ALPHA_TOLERANCE: f64 = 1e-9;

/// One UE's channel in one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelRealization {
    /// Distance to the base station in meters.
    pub distance_m: f64,
    /// Small-scale fading power `|h|^2`, exponential with unit mean.
    pub fading_sq: f64,
    pub pathloss_exponent: f64,
    /// Composite power gain `|g|^2 = d^-exponent * |h|^2`.
    pub gain_sq: f64,
}

impl ChannelRealization {
    pub fn new(distance_m: f64, fading_sq: f64, pathloss_exponent: f64) -> Self {
        Self {
            distance_m,
            fading_sq,
            pathloss_exponent,
            gain_sq: distance_m.powf(-pathloss_exponent) * fading_sq,
        }
    }
}

/// Draws a fresh Rayleigh fading realization for a UE at `distance_m`.
///
/// Distances below one meter are clamped to one so the pathloss never
/// becomes an amplification.
pub fn draw_channel(distance_m: f64, pathloss_exponent: f64, rng: &mut RngStream) -> ChannelRealization {
    let mut fading_sq: f64 = rng.sample(Exp1);
    // Exp1 can in principle return exactly zero; keep the gain positive.
    if fading_sq <= 0.0 {
        fading_sq = f64::MIN_POSITIVE;
    }
    ChannelRealization::new(distance_m.max(1.0), fading_sq, pathloss_exponent)
}

/// Achievable rate in bits/s for bandwidth fraction `alpha`.
///
/// `rate(0)` is defined as 0, the limit as `alpha -> 0`.
pub fn rate(alpha: f64, bandwidth_hz: f64, gain_sq: f64, power_w: f64, noise_psd: f64) -> f64 {
    if alpha <= 0.0 {
        return 0.0;
    }
    let band = alpha * bandwidth_hz;
    band * (gain_sq * power_w / (band * noise_psd)).ln_1p() / std::f64::consts::LN_2
}

/// Local training time in seconds: `epochs * dataset_size * zeta / f`.
pub fn training_time(epochs: u32, dataset_size: f64, zeta: f64, cpu_hz: f64) -> f64 {
    epochs as f64 * dataset_size * zeta / cpu_hz
}

/// Upload time of `bits` at `rate_bps`; infinite at zero rate.
pub fn upload_time(bits: f64, rate_bps: f64) -> f64 {
    if rate_bps <= 0.0 {
        f64::INFINITY
    } else {
        bits / rate_bps
    }
}

/// Whether a UE can meet the deadline, and at what minimum bandwidth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Feasibility {
    Feasible {
        training_time: f64,
        min_alpha: f64,
        upload_time: f64,
    },
    Infeasible {
        training_time: f64,
    },
}

impl Feasibility {
    pub fn min_alpha(&self) -> Option<f64> {
        match self {
            Feasibility::Feasible { min_alpha, .. } => Some(*min_alpha),
            Feasibility::Infeasible { .. } => None,
        }
    }

    pub fn training_time(&self) -> f64 {
        match self {
            Feasibility::Feasible { training_time, .. } | Feasibility::Infeasible { training_time } => {
                *training_time
            }
        }
    }
}

/// Link parameters shared by every UE of a cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    pub deadline_s: f64,
    pub bandwidth_hz: f64,
    pub model_size_bits: f64,
    pub noise_psd: f64,
}

impl LinkBudget {
    pub fn from_config(config: &SimulationConfig) -> Self {
        Self {
            deadline_s: config.deadline_s,
            bandwidth_hz: config.bandwidth_hz,
            model_size_bits: config.model_size_bits,
            noise_psd: config.noise_psd_w_per_hz,
        }
    }

    pub fn rate(&self, alpha: f64, gain_sq: f64, power_w: f64) -> f64 {
        rate(alpha, self.bandwidth_hz, gain_sq, power_w, self.noise_psd)
    }

    /// Smallest bandwidth fraction that lets the UE finish by the deadline.
    ///
    /// The returned fraction is the upper end of the final bisection
    /// bracket, so its rate is never below the required one.
    pub fn min_bandwidth_fraction(&self, training_time: f64, gain_sq: f64, power_w: f64) -> Feasibility {
        let budget = self.deadline_s - training_time;
        if budget.is_nan() || budget <= 0.0 {
            return Feasibility::Infeasible { training_time };
        }
        let required = self.model_size_bits / budget;
        let full = self.rate(1.0, gain_sq, power_w);
        if full < required {
            return Feasibility::Infeasible { training_time };
        }
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        if full > required {
            while hi - lo > ALPHA_TOLERANCE {
                let mid = 0.5 * (lo + hi);
                if self.rate(mid, gain_sq, power_w) >= required {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
        }
        Feasibility::Feasible {
            training_time,
            min_alpha: hi,
            upload_time: upload_time(self.model_size_bits, self.rate(hi, gain_sq, power_w)),
        }
    }
}
