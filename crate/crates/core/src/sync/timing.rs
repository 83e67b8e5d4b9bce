//! Pilot cross-correlation timing metric and offset detection.

use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::Cplx;

/// Correlation magnitude per lag, averaged over the `N` slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingMetric {
    pub values: Vec<f64>,
}

impl TimingMetric {
    pub fn argmax(&self) -> usize {
        self.values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `p[τ] = (1/N) Σ_n (1/M) |Σ_i r[(nM + i + τ) mod MN] t*[nM + i]|` over the pilot rows `i`.
///
/// `received` is one user's separated stream and `template` its delay-time pilot.
pub fn timing_correlate(received: &[Cplx], template: &[Cplx], cfg: &SystemConfig) -> Result<TimingMetric> {
    let (m, n) = (cfg.delay_bins, cfg.doppler_bins);
    let mn = m * n;
    if received.len() != mn || template.len() != mn {
        return Err(Error::Dimension(format!(
            "timing inputs have {} and {} samples, expected {mn}",
            received.len(),
            template.len()
        )));
    }
    let rows = cfg.pilot_rows();
    let values = (0..m)
        .map(|tau| {
            let total: f64 = (0..n)
                .map(|slot| {
                    rows.clone()
                        .map(|i| {
                            let t = slot * m + i;
                            received[(t + tau) % mn] * template[t].conj()
                        })
                        .sum::<Cplx>()
                        .norm()
                        / m as f64
                })
                .sum();
            total / n as f64
        })
        .collect();
    Ok(TimingMetric { values })
}

/// Earliest lag whose metric reaches `threshold * max`.
///
/// With `replica_rejection` a lag also has to be at least as strong as the lag
/// `L_p` later. The cyclic prefix makes every path produce a sidelobe `L_p` lags
/// before its true position, and this test discards those.
pub fn estimate_to(metric: &TimingMetric, threshold: f64, zc_len: usize, replica_rejection: bool) -> usize {
    let m = metric.values.len();
    let floor = threshold * metric.max();
    let p = &metric.values;
    (0..m)
        .find(|&tau| p[tau] >= floor && (!replica_rejection || p[tau] >= p[(tau + zc_len) % m]))
        .unwrap_or_else(|| metric.argmax())
}

/// Lag with the largest metric.
pub fn max_peak(metric: &TimingMetric) -> usize {
    metric.argmax()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modem::{add_cp, OtfsModem};
    use crate::pilot::{make_pcp, pilot_frame, pilot_placements};

    fn metric(values: &[f64]) -> TimingMetric {
        TimingMetric { values: values.to_vec() }
    }

    #[test]
    fn first_peak_rules() {
        let p = metric(&[0.1, 0.3, 1.0, 0.2, 0.5, 0.0]);
        assert_eq!(estimate_to(&p, 0.25, 2, false), 1);
        assert_eq!(estimate_to(&p, 1.0, 2, false), 2);
        assert_eq!(max_peak(&p), 2);
        // Lag 1 is weaker than lag 3 so it is treated as a replica.
        let p = metric(&[0.1, 0.45, 0.2, 1.0, 0.1, 0.0]);
        assert_eq!(estimate_to(&p, 0.25, 2, false), 1);
        assert_eq!(estimate_to(&p, 0.25, 2, true), 3);
    }

    #[test]
    fn clean_single_path_peaks_at_offset() {
        let cfg = SystemConfig {
            delay_bins: 32,
            doppler_bins: 4,
            cp_len: 18,
            users: 1,
            ..SystemConfig::default()
        };
        let modem = OtfsModem::new(32, 4);
        let pcp = make_pcp(cfg.zc_len, 1, 1.0).unwrap();
        let place = &pilot_placements(&cfg).unwrap()[0];
        let frame = pilot_frame(&cfg, &pcp, place).unwrap();
        let x = modem.modulate(&frame).unwrap().serialize();
        let s = add_cp(&modem.modulate(&frame).unwrap(), cfg.cp_len).unwrap();
        for theta in 0..=cfg.theta_max {
            // Delayed by θ, CP stripped at L_cp.
            let y: Vec<Cplx> = (0..cfg.mn()).map(|j| s[cfg.cp_len + j - theta]).collect();
            let p = timing_correlate(&y, &x, &cfg).unwrap();
            assert_eq!(max_peak(&p), theta);
            assert_eq!(estimate_to(&p, 0.25, cfg.zc_len, true), theta);
        }
    }
}
