//! Linear time-varying multipath channels with per-user timing and carrier offsets.
//!
//! The sample-level model is
//! `r[κ] = Σ_q e^{j2π ε_q κ / N_s} Σ_ℓ s_q[κ − ℓ − θ_q] h_q[ℓ, κ]` with
//! `h_q[ℓ, κ] = Σ_i h_i e^{j2π ν_i (κ − ℓ)} δ[ℓ − ℓ_i]`. Doppler shifts are kept
//! in cycles per sample and CFOs in units of the Doppler spacing.

mod compound;

pub use compound::{build_compound_channel, joint_compensate, CompoundChannel};

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{ChannelModel, SystemConfig};
use crate::error::{Error, Result};
use crate::Cplx;

/// EVA excess tap delays in nanoseconds.
pub const EVA_DELAYS_NS: [f64; 9] = [0.0, 30.0, 150.0, 310.0, 370.0, 710.0, 1090.0, 1730.0, 2510.0];
/// EVA relative tap powers in dB.
pub const EVA_POWERS_DB: [f64; 9] = [0.0, -1.5, -1.4, -3.6, -0.6, -9.1, -7.0, -12.0, -16.9];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub gain: Cplx,
    /// Delay in samples.
    pub delay: usize,
    /// Doppler shift in cycles per sample.
    pub doppler: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PathSet {
    pub paths: Vec<Path>,
}

impl PathSet {
    pub fn single(gain: Cplx, delay: usize, doppler: f64) -> Self {
        PathSet {
            paths: vec![Path { gain, delay, doppler }],
        }
    }

    /// Channel length `L_ch`: one past the largest path delay.
    pub fn len(&self) -> usize {
        self.paths.iter().map(|p| p.delay + 1).max().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// `h[ℓ, κ]`.
    pub fn tap(&self, delay: usize, kappa: usize) -> Cplx {
        self.paths
            .iter()
            .filter(|p| p.delay == delay)
            .map(|p| p.gain * Cplx::from_polar(1.0, 2.0 * PI * p.doppler * (kappa as f64 - delay as f64)))
            .sum()
    }
}

/// Channel, timing offset and CFO of one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserChannel {
    pub paths: PathSet,
    /// Timing offset in samples.
    pub to: usize,
    /// CFO in Doppler-spacing units.
    pub cfo: f64,
}

impl UserChannel {
    /// `δ = ε / N_s`, the CFO in cycles per sample.
    pub fn cfo_per_sample(&self, n_s: usize) -> f64 {
        self.cfo / n_s as f64
    }
}

/// Ground truth for one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub users: Vec<UserChannel>,
}

impl ChannelRealization {
    /// Checks the timing bound and the quasi-synchronous CP condition.
    pub fn check(&self, theta_max: usize, cp_len: usize) -> Result<()> {
        for (q, u) in self.users.iter().enumerate() {
            if u.to > theta_max {
                return Err(Error::Realization(format!(
                    "user {q} has TO {} > θ_max = {theta_max}",
                    u.to
                )));
            }
            if u.paths.len() + u.to > cp_len + 1 {
                return Err(Error::Realization(format!(
                    "user {q}: L_ch + θ = {} exceeds L_cp + 1 = {}",
                    u.paths.len() + u.to,
                    cp_len + 1
                )));
            }
        }
        Ok(())
    }

    /// Writes one JSON record per line.
    pub fn write_record<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        serde_json::to_writer(&mut *out, self)?;
        writeln!(out)
    }

    pub fn read_record<R: BufRead>(input: &mut R) -> Result<Self> {
        let mut line = String::new();
        input
            .read_line(&mut line)
            .map_err(|e| Error::io("<channel record>", e))?;
        serde_json::from_str(line.trim())
            .map_err(|e| Error::Realization(format!("bad channel record: {e}")))
    }
}

/// Circular complex Gaussian with the given variance.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Cplx {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Cplx::new(re * s, im * s)
}

/// EVA delays rounded to the sample grid, before any length cap.
pub fn quantized_eva_delays(sample_rate_hz: f64) -> Vec<usize> {
    EVA_DELAYS_NS
        .iter()
        .map(|ns| (ns * 1e-9 * sample_rate_hz).round() as usize)
        .collect()
}

/// Quantised EVA delays with taps beyond the cap folded onto the last allowed delay.
fn capped_eva_delays(sample_rate_hz: f64, l_ch_cap: usize) -> Vec<usize> {
    quantized_eva_delays(sample_rate_hz)
        .into_iter()
        .map(|d| d.min(l_ch_cap - 1))
        .collect()
}

fn eva_linear_powers() -> Vec<f64> {
    let p: Vec<f64> = EVA_POWERS_DB.iter().map(|db| 10f64.powf(db / 10.0)).collect();
    let total: f64 = p.iter().sum();
    p.into_iter().map(|v| v / total).collect()
}

/// Power-delay profile on the sample grid: `(delay, power)` with co-located taps
/// merged by power addition and total power one.
pub fn eva_tap_profile(sample_rate_hz: f64, l_ch_cap: usize) -> Vec<(usize, f64)> {
    let mut merged: Vec<(usize, f64)> = Vec::new();
    for (d, p) in capped_eva_delays(sample_rate_hz, l_ch_cap)
        .into_iter()
        .zip(eva_linear_powers())
    {
        match merged.iter_mut().find(|(md, _)| *md == d) {
            Some(slot) => slot.1 += p,
            None => merged.push((d, p)),
        }
    }
    merged
}

/// Draws an EVA realisation. Each standard tap becomes one Rayleigh path with
/// Doppler `ν_max cos ψ`, `ψ ~ U[0, 2π)`.
pub fn generate_eva_channel<R: Rng + ?Sized>(
    rng: &mut R,
    nu_max_t: f64,
    l_ch_cap: usize,
    sample_rate_hz: f64,
    n_s: usize,
) -> PathSet {
    let nu_max = nu_max_t / n_s as f64;
    let paths = capped_eva_delays(sample_rate_hz, l_ch_cap)
        .into_iter()
        .zip(eva_linear_powers())
        .map(|(delay, power)| {
            let gain = complex_gaussian(rng, power);
            let psi: f64 = rng.random_range(0.0..2.0 * PI);
            Path {
                gain,
                delay,
                doppler: nu_max * psi.cos(),
            }
        })
        .collect();
    PathSet { paths }
}

/// One Rayleigh path at delay zero.
pub fn generate_single_tap<R: Rng + ?Sized>(rng: &mut R, nu_max_t: f64, n_s: usize) -> PathSet {
    let gain = complex_gaussian(rng, 1.0);
    let psi: f64 = rng.random_range(0.0..2.0 * PI);
    PathSet::single(gain, 0, nu_max_t / n_s as f64 * psi.cos())
}

/// Draws channels, TOs and CFOs for every user.
pub fn draw_realization<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> ChannelRealization {
    let n_s = cfg.n_s();
    let users = (0..cfg.users)
        .map(|_| {
            let paths = match cfg.channel_model {
                ChannelModel::Eva => {
                    generate_eva_channel(rng, cfg.nu_max_t, cfg.l_ch_cap, cfg.sample_rate_hz, n_s)
                }
                ChannelModel::SingleTap => generate_single_tap(rng, cfg.nu_max_t, n_s),
            };
            let to = rng.random_range(0..=cfg.theta_max);
            let cfo = match cfg.fixed_cfo {
                Some(v) => v,
                None if cfg.cfo_draw_max > 0.0 => rng.random_range(-cfg.cfo_draw_max..=cfg.cfo_draw_max),
                None => 0.0,
            };
            UserChannel { paths, to, cfo }
        })
        .collect();
    ChannelRealization { users }
}

/// Sums every user's stream after its channel, TO and CFO. No noise is added.
pub fn apply_channel(streams: &[Vec<Cplx>], real: &ChannelRealization, theta_max: usize) -> Result<Vec<Cplx>> {
    if streams.len() != real.users.len() {
        return Err(Error::Dimension(format!(
            "{} streams for {} users",
            streams.len(),
            real.users.len()
        )));
    }
    let n_s = streams.first().map_or(0, Vec::len);
    let mut out = vec![Cplx::new(0.0, 0.0); n_s];
    for (q, (s, user)) in streams.iter().zip(&real.users).enumerate() {
        if s.len() != n_s {
            return Err(Error::Dimension(format!(
                "stream {q} has {} samples, expected {n_s}",
                s.len()
            )));
        }
        if user.to > theta_max {
            return Err(Error::Realization(format!(
                "user {q} has TO {} > θ_max = {theta_max}",
                user.to
            )));
        }
        let delta = user.cfo_per_sample(n_s);
        for (kappa, o) in out.iter_mut().enumerate() {
            let mut acc = Cplx::new(0.0, 0.0);
            for p in &user.paths.paths {
                let shift = p.delay + user.to;
                if kappa < shift {
                    continue;
                }
                let phase = p.doppler * (kappa as f64 - p.delay as f64);
                acc += s[kappa - shift] * p.gain * Cplx::from_polar(1.0, 2.0 * PI * phase);
            }
            *o += acc * Cplx::from_polar(1.0, 2.0 * PI * delta * kappa as f64);
        }
    }
    Ok(out)
}

/// Noise variance for a data-symbol SNR; `None` for an infinite SNR.
pub fn noise_variance_for_snr(snr_db: f64) -> Option<f64> {
    (snr_db != f64::INFINITY).then(|| 10f64.powf(-snr_db / 10.0))
}

/// Adds circular white Gaussian noise of the given variance in place.
pub fn add_awgn<R: Rng + ?Sized>(stream: &mut [Cplx], noise_var: Option<f64>, rng: &mut R) {
    if let Some(var) = noise_var {
        for v in stream.iter_mut() {
            *v += complex_gaussian(rng, var);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_stream(rng: &mut ChaCha8Rng, len: usize) -> Vec<Cplx> {
        (0..len).map(|_| complex_gaussian(rng, 1.0)).collect()
    }

    #[test]
    fn static_profile_has_zero_doppler() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ps = generate_eva_channel(&mut rng, 0.0, 10, 3.84e6, 4114);
        assert!(ps.paths.iter().all(|p| p.doppler == 0.0));
        assert_eq!(ps.paths[0].delay, 0);
    }

    #[test]
    fn eva_quantisation_and_merge() {
        assert_eq!(quantized_eva_delays(3.84e6), vec![0, 0, 1, 1, 1, 3, 4, 7, 10]);
        let profile = eva_tap_profile(3.84e6, 10);
        let delays: Vec<usize> = profile.iter().map(|t| t.0).collect();
        assert_eq!(delays, vec![0, 1, 3, 4, 7, 9]);
        // Oracle: linear powers merged by hand.
        let lin = |db: f64| 10f64.powf(db / 10.0);
        let total: f64 = EVA_POWERS_DB.iter().map(|&d| lin(d)).sum();
        let expect = [
            lin(0.0) + lin(-1.5),
            lin(-1.4) + lin(-3.6) + lin(-0.6),
            lin(-9.1),
            lin(-7.0),
            lin(-12.0),
            lin(-16.9),
        ];
        for ((_, p), e) in profile.iter().zip(expect) {
            assert!((p - e / total).abs() < 1e-14);
        }
    }

    #[test]
    fn eva_mean_power_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let trials = 100_000;
        let total: f64 = (0..trials)
            .map(|_| {
                generate_eva_channel(&mut rng, 2.91, 10, 3.84e6, 4114)
                    .paths
                    .iter()
                    .map(|p| p.gain.norm_sqr())
                    .sum::<f64>()
            })
            .sum();
        let mean = total / trials as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean power {mean}");
    }

    #[test]
    fn identity_channel_passes_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_stream(&mut rng, 50);
        let real = ChannelRealization {
            users: vec![UserChannel {
                paths: PathSet::single(Cplx::new(1.0, 0.0), 0, 0.0),
                to: 0,
                cfo: 0.0,
            }],
        };
        assert_eq!(apply_channel(std::slice::from_ref(&s), &real, 0).unwrap(), s);
    }

    #[test]
    fn pure_cfo_rotates() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_stream(&mut rng, 64);
        let eps = 0.37;
        let real = ChannelRealization {
            users: vec![UserChannel {
                paths: PathSet::single(Cplx::new(1.0, 0.0), 0, 0.0),
                to: 0,
                cfo: eps,
            }],
        };
        let r = apply_channel(std::slice::from_ref(&s), &real, 0).unwrap();
        for (k, (a, b)) in r.iter().zip(&s).enumerate() {
            let expect = b * Cplx::from_polar(1.0, 2.0 * PI * eps * k as f64 / 64.0);
            assert!((a - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn timing_beyond_bound_rejected() {
        let real = ChannelRealization {
            users: vec![UserChannel {
                paths: PathSet::single(Cplx::new(1.0, 0.0), 0, 0.0),
                to: 4,
                cfo: 0.0,
            }],
        };
        assert!(matches!(
            apply_channel(&[vec![Cplx::new(0.0, 0.0); 8]], &real, 3),
            Err(Error::Realization(_))
        ));
        assert!(real.check(3, 10).is_err());
        assert!(real.check(4, 10).is_ok());
    }

    #[test]
    fn awgn_variance_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut z = vec![Cplx::new(0.0, 0.0); 1_000_000];
        add_awgn(&mut z, Some(1.0), &mut rng);
        let var = z.iter().map(|v| v.norm_sqr()).sum::<f64>() / z.len() as f64;
        assert!((var - 1.0).abs() < 0.01, "variance {var}");

        let noisy = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let mut v = vec![Cplx::new(1.0, 0.0); 32];
            add_awgn(&mut v, noise_variance_for_snr(10.0), &mut r);
            v
        };
        assert_eq!(noisy(9), noisy(9));

        let mut v = vec![Cplx::new(1.0, 2.0); 8];
        add_awgn(&mut v, noise_variance_for_snr(f64::INFINITY), &mut rng);
        assert!(v.iter().all(|x| *x == Cplx::new(1.0, 2.0)));
    }

    #[test]
    fn record_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = SystemConfig::default();
        let real = draw_realization(&cfg, &mut rng);
        let mut buf = Vec::new();
        real.write_record(&mut buf).unwrap();
        let back = ChannelRealization::read_record(&mut buf.as_slice()).unwrap();
        assert_eq!(back, real);
    }

    #[test]
    fn draws_respect_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = SystemConfig::default();
        for _ in 0..200 {
            let real = draw_realization(&cfg, &mut rng);
            real.check(cfg.theta_max, cfg.cp_len).unwrap();
            for u in &real.users {
                assert!(u.cfo.abs() <= cfg.cfo_draw_max);
            }
        }
    }
}
