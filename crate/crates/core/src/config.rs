//! System dimensioning and experiment parameters.
//!
//! Configs are flat TOML documents whose keys mirror the field names of
//! [`SystemConfig`] (`M`, `N`, `Q`, `L_cp`, ...). Nested search settings use
//! dotted keys such as `cfo_search.step = 0.01`, and the same dotted form is
//! accepted by [`SystemConfig::apply_override`].

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest BEM order used by the default order rule.
pub const MAX_BEM_ORDER: usize = 12;

/// How delay-Doppler bins are split between users.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AllocationScheme {
    /// Contiguous blocks of delay bins; every user spans all Doppler bins.
    ContiguousDelay,
    /// Contiguous blocks of Doppler bins; every user spans all delay bins.
    ContiguousDoppler,
    /// Doppler bins dealt round-robin; every user spans all delay bins.
    Interleaved,
}

/// Doppler column of each user's pilot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PilotLayout {
    /// `k_p + q * floor(N / Q)`, one pilot per filter-bank band.
    Banded,
    /// `q * floor(N / (2Q))`.
    HalfSpaced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelModel {
    /// Extended Vehicular A power-delay profile.
    Eva,
    /// One Rayleigh path at delay zero.
    SingleTap,
}

/// One-dimensional CFO search settings, in Doppler-spacing units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CfoSearch {
    /// Half-width of the search interval centred on zero.
    pub range: f64,
    /// Coarse grid step.
    pub step: f64,
    /// Golden-section refinement tolerance.
    pub tol: f64,
}

impl Default for CfoSearch {
    fn default() -> Self {
        CfoSearch {
            range: 2.0,
            step: 0.02,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    /// Delay bins.
    #[serde(rename = "M")]
    pub delay_bins: usize,
    /// Doppler bins (time slots).
    #[serde(rename = "N")]
    pub doppler_bins: usize,
    /// Users.
    #[serde(rename = "Q")]
    pub users: usize,
    /// Cyclic prefix length in samples.
    #[serde(rename = "L_cp")]
    pub cp_len: usize,
    /// Largest timing offset in samples.
    pub theta_max: usize,
    /// Zadoff-Chu length.
    #[serde(rename = "L_p")]
    pub zc_len: usize,
    /// Delay index where the ZC body of the pilot starts. Defaults to `M - L_p`.
    #[serde(rename = "l_p", skip_serializing_if = "Option::is_none")]
    pub pilot_delay: Option<usize>,
    pub snr_db: f64,
    pub pilot_power_db: f64,
    /// Maximum Doppler normalised by the Doppler spacing.
    #[serde(rename = "nu_max_T")]
    pub nu_max_t: f64,
    /// BEM order. Defaults to the order rule applied to `nu_max_T`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<usize>,
    /// Relative threshold for the first-peak timing rule.
    pub threshold: f64,
    pub cfo_search: CfoSearch,
    pub rng_seed: u64,

    pub allocation: AllocationScheme,
    pub pilot_layout: PilotLayout,
    /// Base Doppler bin for the banded layout. Defaults to `floor(N / (2Q))`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_p: Option<usize>,
    pub zc_root: usize,
    pub channel_model: ChannelModel,
    /// Upper bound on the channel length in samples.
    pub l_ch_cap: usize,
    pub sample_rate_hz: f64,
    pub carrier_hz: f64,
    /// CFOs are drawn uniformly from `[-cfo_draw_max, cfo_draw_max]`.
    pub cfo_draw_max: f64,
    /// When set, every user gets this CFO instead of a random draw.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_cfo: Option<f64>,
    /// Use the true TO to locate the pilot region.
    pub genie_to: bool,
    /// Drop timing-metric lags that are a PCP period replica of a stronger lag.
    pub replica_rejection: bool,
    /// Allow the pilot region of the last time slot to wrap to the frame start.
    pub pilot_wrap: bool,
    /// Diagonal loading for the BEM least-squares system.
    pub bem_loading: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            delay_bins: 128,
            doppler_bins: 32,
            users: 2,
            cp_len: 18,
            theta_max: 9,
            zc_len: 10,
            pilot_delay: None,
            snr_db: 20.0,
            pilot_power_db: 40.0,
            nu_max_t: 2.91,
            beta: None,
            threshold: 0.25,
            cfo_search: CfoSearch::default(),
            rng_seed: 1,
            allocation: AllocationScheme::ContiguousDoppler,
            pilot_layout: PilotLayout::Banded,
            k_p: None,
            zc_root: 1,
            channel_model: ChannelModel::Eva,
            l_ch_cap: 10,
            sample_rate_hz: 3.84e6,
            carrier_hz: 5.9e9,
            cfo_draw_max: 0.5,
            fixed_cfo: None,
            genie_to: false,
            replica_rejection: true,
            pilot_wrap: true,
            bem_loading: 0.0,
        }
    }
}

/// Every key accepted in a config file or override.
pub const VALID_KEYS: &[&str] = &[
    "M",
    "N",
    "Q",
    "L_cp",
    "theta_max",
    "L_p",
    "l_p",
    "snr_db",
    "pilot_power_db",
    "nu_max_T",
    "beta",
    "threshold",
    "cfo_search.range",
    "cfo_search.step",
    "cfo_search.tol",
    "rng_seed",
    "allocation",
    "pilot_layout",
    "k_p",
    "zc_root",
    "channel_model",
    "l_ch_cap",
    "sample_rate_hz",
    "carrier_hz",
    "cfo_draw_max",
    "fixed_cfo",
    "genie_to",
    "replica_rejection",
    "pilot_wrap",
    "bem_loading",
];

/// Smallest odd integer `>= ceil(2 * nu + 1)`, capped at [`MAX_BEM_ORDER`].
pub fn bem_order_rule(nu_max_t: f64) -> usize {
    let mut order = (2.0 * nu_max_t.abs() + 1.0 - 1e-12).ceil().max(1.0) as usize;
    if order.is_multiple_of(2) {
        order += 1;
    }
    order.min(MAX_BEM_ORDER)
}

/// The order lower bound `ceil(2 * nu + 1)`.
pub fn bem_order_bound(nu_max_t: f64) -> usize {
    (2.0 * nu_max_t.abs() + 1.0 - 1e-12).ceil().max(1.0) as usize
}

impl SystemConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(format!("malformed config: {e}")))?;
        Self::from_table(table, &[])
    }

    /// Reads a config file, applies `key=value` overrides and validates.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table: toml::Table = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("malformed config {}: {e}", path.display())))?;
        Self::from_table(table, overrides)
    }

    /// Builds a validated config from defaults plus overrides.
    pub fn from_overrides(overrides: &[String]) -> Result<Self> {
        Self::from_table(toml::Table::new(), overrides)
    }

    /// Builds a validated config from a TOML table with overrides applied on top.
    pub fn from_table(mut table: toml::Table, overrides: &[String]) -> Result<Self> {
        for kv in overrides {
            insert_override(&mut table, kv)?;
        }
        check_keys(&table, "")?;
        let cfg: SystemConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `key=value` override and revalidates.
    pub fn apply_override(&self, kv: &str) -> Result<Self> {
        let mut table = toml::Table::try_from(self)
            .map_err(|e| Error::Config(format!("cannot serialise config: {e}")))?;
        insert_override(&mut table, kv)?;
        Self::from_table(table, &[])
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config always serialises")
    }

    /// Samples per frame including the CP.
    pub fn n_s(&self) -> usize {
        self.delay_bins * self.doppler_bins + self.cp_len
    }

    /// Samples per frame without the CP.
    pub fn mn(&self) -> usize {
        self.delay_bins * self.doppler_bins
    }

    /// CP samples left after the receiver drops the first `theta_max` samples.
    pub fn post_cp_len(&self) -> usize {
        self.cp_len.saturating_sub(self.theta_max)
    }

    pub fn pilot_delay(&self) -> usize {
        self.pilot_delay
            .unwrap_or_else(|| self.delay_bins.saturating_sub(self.zc_len))
    }

    /// Width of one filter-bank band in Doppler bins.
    pub fn band_width(&self) -> usize {
        self.doppler_bins / self.users.max(1)
    }

    pub fn beta(&self) -> usize {
        self.beta.unwrap_or_else(|| bem_order_rule(self.nu_max_t))
    }

    pub fn noise_variance(&self) -> f64 {
        10f64.powf(-self.snr_db / 10.0)
    }

    pub fn pilot_amplitude(&self) -> f64 {
        10f64.powf(self.pilot_power_db / 20.0)
    }

    /// Frame duration in seconds.
    pub fn frame_duration(&self) -> f64 {
        self.n_s() as f64 / self.sample_rate_hz
    }

    /// Delay rows covered by the PCP, CP included.
    pub fn pilot_rows(&self) -> std::ops::RangeInclusive<usize> {
        let lp = self.pilot_delay();
        (lp + 1 - self.zc_len)..=(lp + self.zc_len - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.delay_bins;
        let n = self.doppler_bins;
        let q = self.users;
        let err = |msg: String| Err(Error::Config(msg));

        if m == 0 || n == 0 {
            return err("M and N must be positive".into());
        }
        if q == 0 {
            return err("Q must be at least 1".into());
        }
        if q > m || q > n {
            return err(format!("Q = {q} exceeds M = {m} or N = {n}"));
        }
        if self.cp_len >= m * n {
            return err(format!("L_cp = {} must be below M*N = {}", self.cp_len, m * n));
        }
        if self.cp_len + 1 < self.l_ch_cap + self.theta_max {
            return err(format!(
                "CP rule violated: L_cp ≥ max L_ch + θ_max − 1 requires L_cp ≥ {} (L_ch cap {}, θ_max {}), got {}",
                self.l_ch_cap + self.theta_max - 1,
                self.l_ch_cap,
                self.theta_max,
                self.cp_len
            ));
        }
        if self.theta_max > self.cp_len {
            return err(format!(
                "post-CP guard L_cp − θ_max is negative (L_cp {}, θ_max {})",
                self.cp_len, self.theta_max
            ));
        }
        if self.zc_len == 0 {
            return err("L_p must be positive".into());
        }
        if 2 * self.zc_len - 1 > m {
            return err(format!(
                "PCP length 2L_p − 1 = {} exceeds M = {m}",
                2 * self.zc_len - 1
            ));
        }
        let lp = self.pilot_delay();
        if lp + 1 < self.zc_len || lp + self.zc_len > m {
            return err(format!(
                "pilot span l_p ± (L_p − 1) = [{}, {}] leaves the delay axis 0..{}",
                lp as i64 - self.zc_len as i64 + 1,
                lp + self.zc_len - 1,
                m - 1
            ));
        }
        if self.l_ch_cap == 0 || self.l_ch_cap > self.zc_len {
            return err(format!(
                "channel length cap {} must lie in 1..=L_p ({}) so the PCP absorbs the delay spread",
                self.l_ch_cap, self.zc_len
            ));
        }
        if !(self.nu_max_t >= 0.0 && self.nu_max_t.is_finite()) {
            return err(format!("nu_max_T must be finite and ≥ 0, got {}", self.nu_max_t));
        }
        let beta = self.beta();
        if beta == 0 || beta < bem_order_bound(self.nu_max_t) {
            return err(format!(
                "BEM order β = {beta} is below the bound ⌈2 nu_max_T + 1⌉ = {}",
                bem_order_bound(self.nu_max_t)
            ));
        }
        if beta * self.zc_len > n * self.zc_len {
            return err(format!("BEM order β = {beta} exceeds N = {n}; the LS system is underdetermined"));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return err(format!("threshold must satisfy 0 < T ≤ 1, got {}", self.threshold));
        }
        let s = &self.cfo_search;
        if !(s.range > 0.0 && s.step > 0.0 && s.tol > 0.0) {
            return err("cfo_search range, step and tol must be positive".into());
        }
        if s.step > 2.0 * s.range {
            return err("cfo_search grid is empty: step exceeds the search width".into());
        }
        if s.range >= self.band_width() as f64 / 2.0 {
            return err(format!(
                "cfo_search.range {} reaches outside the filter-bank band half-width {}",
                s.range,
                self.band_width() as f64 / 2.0
            ));
        }
        if self.cfo_draw_max.is_nan() || self.cfo_draw_max < 0.0 {
            return err("cfo_draw_max must be ≥ 0".into());
        }
        if !(self.snr_db.is_finite() || self.snr_db == f64::INFINITY) {
            return err("snr_db must be a number or +inf".into());
        }
        if self.zc_root == 0 || gcd(self.zc_root, self.zc_len) != 1 {
            return err(format!(
                "ZC root {} is not coprime with L_p = {}",
                self.zc_root, self.zc_len
            ));
        }
        if let Some(kp) = self.k_p {
            if self.pilot_layout == PilotLayout::Banded && kp >= self.band_width() {
                return err(format!(
                    "k_p = {kp} must lie inside the first band 0..{}",
                    self.band_width()
                ));
            }
        }
        if self.bem_loading.is_nan() || self.bem_loading < 0.0 {
            return err("bem_loading must be ≥ 0".into());
        }
        Ok(())
    }
}

pub(crate) fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn parse_value(raw: &str) -> toml::Value {
    let raw = raw.trim();
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

pub(crate) fn insert_override(table: &mut toml::Table, kv: &str) -> Result<()> {
    let (key, value) = kv
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{kv}` is not of the form key=value")))?;
    let key = key.trim();
    if !VALID_KEYS.contains(&key) {
        return Err(unknown_key(key));
    }
    let mut parts: Vec<&str> = key.split('.').collect();
    let leaf = parts.pop().expect("split yields one part");
    let mut cursor = table;
    for part in parts {
        let entry = cursor
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{part}` is not a table")))?;
    }
    cursor.insert(leaf.to_string(), parse_value(value));
    Ok(())
}

fn check_keys(table: &toml::Table, prefix: &str) -> Result<()> {
    for (k, v) in table {
        let full = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            toml::Value::Table(inner) if full == "cfo_search" => check_keys(inner, &full)?,
            _ if VALID_KEYS.contains(&full.as_str()) => {}
            _ => return Err(unknown_key(&full)),
        }
    }
    Ok(())
}

fn unknown_key(key: &str) -> Error {
    Error::Config(format!(
        "unknown key `{key}`; valid keys are: {}",
        VALID_KEYS.join(", ")
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = SystemConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.n_s(), 128 * 32 + 18);
        assert_eq!(cfg.pilot_delay(), 118);
        assert_eq!(cfg.post_cp_len(), 9);
        assert_eq!(cfg.beta(), 7);
    }

    #[test]
    fn order_rule_rounds_to_odd_and_caps() {
        assert_eq!(bem_order_rule(0.0), 1);
        assert_eq!(bem_order_rule(0.5), 3);
        assert_eq!(bem_order_rule(1.0), 3);
        assert_eq!(bem_order_rule(1.2), 5);
        assert_eq!(bem_order_rule(2.91), 7);
        assert_eq!(bem_order_rule(9.0), MAX_BEM_ORDER);
    }

    #[test]
    fn cp_rule_violation_is_reported() {
        let err = SystemConfig::from_overrides(&["L_cp=12".into()]).unwrap_err();
        assert!(err.to_string().contains("L_cp ≥ max L_ch + θ_max − 1"), "{err}");
    }

    #[test]
    fn unknown_keys_list_valid_keys() {
        let err = SystemConfig::from_toml_str("bogus = 3").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus") && msg.contains("nu_max_T"), "{msg}");
        let err = SystemConfig::from_overrides(&["cfo_search.width=1".into()]).unwrap_err();
        assert!(err.to_string().contains("cfo_search.width"));
    }

    #[test]
    fn overrides_and_file_round_trip() {
        let cfg = SystemConfig::from_overrides(&[
            "Q=4".into(),
            "cfo_search.step=0.01".into(),
            "channel_model=single-tap".into(),
            "snr_db=10".into(),
        ])
        .unwrap();
        assert_eq!(cfg.users, 4);
        assert_eq!(cfg.cfo_search.step, 0.01);
        assert_eq!(cfg.channel_model, ChannelModel::SingleTap);
        assert_eq!(cfg.snr_db, 10.0);
        let back = SystemConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn invariants_rejected() {
        for bad in [
            "threshold=0",
            "threshold=1.5",
            "beta=3",
            "L_p=70",
            "l_p=125",
            "zc_root=5",
            "Q=64",
            "cfo_search.range=8",
        ] {
            assert!(
                SystemConfig::from_overrides(&[bad.to_string()]).is_err(),
                "{bad} should be rejected"
            );
        }
    }
}
