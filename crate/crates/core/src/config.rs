//! Scenario parameters, derived frame geometry and the configuration file.
//!
//! A configuration file is TOML with the sections `[primary]`, `[secondary]`,
//! `[mac]`, `[analysis]` and `[experiment]`. Every section is optional and
//! every key falls back to the defaults below; unknown keys are rejected.
//! Durations are given in seconds.
//!
//! ```toml
//! [primary]
//! t_frame = 0.005
//! n_subchannels = 30
//! k_sym_dl = 26
//! ratio_r = "13/12"
//! lambda_p = 25.0
//! striping = "horizontal"
//!
//! [secondary]
//! n_s = 10
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase::PhaseRule;
use crate::txtime::EntryRule;

/// Allocation policy used by the primary base station to lay bursts out on
/// the downlink slot grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Striping {
    Horizontal,
    Vertical,
    Rectangular,
}

impl Striping {
    pub fn as_str(self) -> &'static str {
        match self {
            Striping::Horizontal => "horizontal",
            Striping::Vertical => "vertical",
            Striping::Rectangular => "rectangular",
        }
    }
}

impl fmt::Display for Striping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Striping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "horizontal" | "h" => Ok(Striping::Horizontal),
            "vertical" | "v" => Ok(Striping::Vertical),
            "rectangular" | "r" => Ok(Striping::Rectangular),
            other => Err(Error::config(format!("unknown striping policy `{other}`"))),
        }
    }
}

/// Positive rational number, used for the DL:UL duration ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ratio {
    num: u64,
    den: u64,
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::config(format!("ratio {num}/{den} must be positive")));
        }
        let g = gcd(num, den);
        Ok(Ratio {
            num: num / g,
            den: den / g,
        })
    }

    pub fn num(self) -> u64 {
        self.num
    }

    pub fn den(self) -> u64 {
        self.den
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Ratio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config(format!("cannot parse ratio `{s}` (expected e.g. `13/12` or `4`)"));
        let s = s.trim();
        match s.split_once('/') {
            Some((n, d)) => Ratio::new(
                n.trim().parse().map_err(|_| bad())?,
                d.trim().parse().map_err(|_| bad())?,
            ),
            None => Ratio::new(s.parse().map_err(|_| bad())?, 1),
        }
    }
}

impl Serialize for Ratio {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

/// Controls how the analytical model discretises time into frame phases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisOptions {
    /// Phase classes per OFDM symbol (1 tracks whole symbols).
    pub ticks_per_symbol: usize,
    pub phase_rule: PhaseRule,
    pub entry_rule: EntryRule,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            ticks_per_symbol: 1,
            phase_rule: PhaseRule::Uniform,
            entry_rule: EntryRule::Channel,
        }
    }
}

/// Complete parameter set of one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    /// Frame duration (s).
    pub t_frame: f64,
    /// Subchannels per downlink subframe (rows of the slot grid).
    pub n_subchannels: usize,
    /// OFDM symbols in the downlink subframe.
    pub k_sym_dl: usize,
    /// Downlink to uplink duration ratio.
    pub ratio_r: Ratio,
    /// Symbols per slot.
    pub nu: usize,
    /// Slots per primary packet.
    pub s_p: usize,
    /// Slots per secondary packet.
    pub s_s: usize,
    /// Base-station buffer capacity (packets).
    pub c_b: usize,
    /// Mean primary arrivals per frame.
    pub lambda_p: f64,
    /// Number of secondary nodes.
    pub n_s: usize,
    pub w0: usize,
    pub m_stages: usize,
    pub t_rts: f64,
    pub t_cts: f64,
    pub t_ack: f64,
    /// Duration of an idle backoff slot (s).
    pub t_idle: f64,
    /// Duration of a collided handshake as seen by every node (s).
    pub t_coll: f64,
    pub striping: Striping,
    pub analysis: AnalysisOptions,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            t_frame: 5e-3,
            n_subchannels: 30,
            k_sym_dl: 26,
            ratio_r: Ratio { num: 13, den: 12 },
            nu: 2,
            s_p: 10,
            s_s: 60,
            c_b: 55,
            lambda_p: 25.0,
            n_s: 10,
            w0: 4,
            m_stages: 4,
            t_rts: 50e-6,
            t_cts: 50e-6,
            t_ack: 50e-6,
            t_idle: 20e-6,
            t_coll: 100e-6,
            striping: Striping::Horizontal,
            analysis: AnalysisOptions::default(),
        }
    }
}

/// Quantities derived from a validated [`ScenarioConfig`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameGeometry {
    /// Symbols per frame.
    pub k_sym: usize,
    pub k_sym_dl: usize,
    pub t_frame: f64,
    pub t_sym: f64,
    pub t_dl: f64,
    /// Slots in the downlink subframe.
    pub m_slots: usize,
    /// Highest buffer state, in slots (`c_b * s_p`).
    pub n_states: usize,
    /// Slot columns in the downlink subframe.
    pub cols_dl: usize,
    /// Slot rows (subchannels).
    pub rows: usize,
    pub nu: usize,
}

impl FrameGeometry {
    /// True when symbol index `x` (1-based) lies in the uplink subframe.
    pub fn is_uplink(&self, x: usize) -> bool {
        x > self.k_sym_dl
    }
}

pub fn derive_geometry(cfg: &ScenarioConfig) -> Result<FrameGeometry> {
    cfg.validate()?;
    let num = cfg.ratio_r.num() as u128;
    let den = cfg.ratio_r.den() as u128;
    let scaled = cfg.k_sym_dl as u128 * (num + den);
    if !scaled.is_multiple_of(num) {
        return Err(Error::config(format!(
            "K_sym = {} * ({}+1) / {} is not an integer",
            cfg.k_sym_dl, cfg.ratio_r, cfg.ratio_r
        )));
    }
    let k_sym = (scaled / num) as usize;
    let t_sym = cfg.t_frame / k_sym as f64;
    let cols_dl = cfg.k_sym_dl / cfg.nu;
    Ok(FrameGeometry {
        k_sym,
        k_sym_dl: cfg.k_sym_dl,
        t_frame: cfg.t_frame,
        t_sym,
        t_dl: cfg.k_sym_dl as f64 * t_sym,
        m_slots: cfg.n_subchannels * cols_dl,
        n_states: cfg.c_b * cfg.s_p,
        cols_dl,
        rows: cfg.n_subchannels,
        nu: cfg.nu,
    })
}

// Ratios of durations that should be whole numbers come out as e.g.
// 2.9999999999999996; snap those before rounding.
pub(crate) const SNAP: f64 = 1e-9;

/// Duration in whole symbols, rounded up.
pub fn to_symbols(t: f64, geometry: &FrameGeometry) -> usize {
    if t <= 0.0 {
        return 0;
    }
    (t / geometry.t_sym - SNAP).ceil().max(0.0) as usize
}

/// Moves a 1-based symbol index forward by `delta`, wrapping over the frame.
pub fn advance_symbol(i: usize, delta: usize, k_sym: usize) -> usize {
    debug_assert!((1..=k_sym).contains(&i));
    (i - 1 + delta) % k_sym + 1
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(Error::config(format!("{name} must be at least 1")))
            } else {
                Ok(())
            }
        };
        positive("n_subchannels", self.n_subchannels)?;
        positive("k_sym_dl", self.k_sym_dl)?;
        positive("nu", self.nu)?;
        positive("s_p", self.s_p)?;
        positive("s_s", self.s_s)?;
        positive("c_b", self.c_b)?;
        positive("n_s", self.n_s)?;
        positive("m_stages", self.m_stages)?;
        positive("analysis.ticks_per_symbol", self.analysis.ticks_per_symbol)?;
        if self.w0 < 2 {
            return Err(Error::config("w0 must be at least 2"));
        }
        if self.m_stages > 20 {
            return Err(Error::config("m_stages above 20 is not supported"));
        }
        if !self.k_sym_dl.is_multiple_of(self.nu) {
            return Err(Error::config(format!(
                "k_sym_dl ({}) must be divisible by nu ({})",
                self.k_sym_dl, self.nu
            )));
        }
        if !(self.t_frame.is_finite() && self.t_frame > 0.0) {
            return Err(Error::config("t_frame must be positive"));
        }
        if !(self.lambda_p.is_finite() && self.lambda_p >= 0.0) {
            return Err(Error::config("lambda_p must be a non-negative number"));
        }
        for (name, v) in [
            ("t_rts", self.t_rts),
            ("t_cts", self.t_cts),
            ("t_ack", self.t_ack),
            ("t_idle", self.t_idle),
            ("t_coll", self.t_coll),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("{name} must be a non-negative duration")));
            }
        }
        if self.t_idle <= 0.0 {
            return Err(Error::config("t_idle must be positive"));
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<FrameGeometry> {
        derive_geometry(self)
    }

    /// Changes the DL:UL ratio while keeping the frame's symbol count, which
    /// moves the DL/UL boundary: `k_sym_dl = K_sym * R / (R + 1)`.
    pub fn with_ratio(&self, ratio: Ratio) -> Result<ScenarioConfig> {
        let k_sym = self.geometry()?.k_sym as u128;
        let num = ratio.num() as u128;
        let den = ratio.den() as u128;
        if !(k_sym * num).is_multiple_of(num + den) {
            return Err(Error::config(format!(
                "ratio {ratio} does not split a {k_sym}-symbol frame into whole symbols"
            )));
        }
        let mut out = self.clone();
        out.k_sym_dl = (k_sym * num / (num + den)) as usize;
        out.ratio_r = ratio;
        out.validate()?;
        Ok(out)
    }

    pub fn from_toml_str(text: &str) -> Result<ScenarioConfig> {
        ConfigFile::from_toml_str(text)?.scenario()
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
        ConfigFile::from_path(path)?.scenario()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrimarySection {
    pub t_frame: f64,
    pub n_subchannels: usize,
    pub k_sym_dl: usize,
    pub ratio_r: Ratio,
    pub nu: usize,
    pub s_p: usize,
    pub c_b: usize,
    pub lambda_p: f64,
    pub striping: Striping,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SecondarySection {
    pub s_s: usize,
    pub n_s: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacSection {
    pub w0: usize,
    pub m_stages: usize,
    pub t_rts: f64,
    pub t_cts: f64,
    pub t_ack: f64,
    pub t_idle: f64,
    pub t_coll: f64,
}

/// `[experiment]` section: what the CLI runs on top of the base scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub mode: Option<String>,
    pub lambda_p: Vec<f64>,
    pub n_s: Vec<usize>,
    pub ratio_r: Vec<Ratio>,
    pub striping: Vec<Striping>,
    pub seed: u64,
    pub frames: u64,
    pub warmup_frames: Option<u64>,
    pub gate: f64,
    pub max_grid: usize,
    pub output: Option<String>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            mode: None,
            lambda_p: Vec::new(),
            n_s: Vec::new(),
            ratio_r: Vec::new(),
            striping: Vec::new(),
            seed: 1,
            frames: 200_000,
            warmup_frames: None,
            gate: 0.03,
            max_grid: 10_000,
            output: None,
        }
    }
}

/// Parsed configuration file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub primary: PrimarySection,
    pub secondary: SecondarySection,
    pub mac: MacSection,
    pub analysis: AnalysisOptions,
    pub experiment: ExperimentSection,
}

impl Default for PrimarySection {
    fn default() -> Self {
        let d = ScenarioConfig::default();
        PrimarySection {
            t_frame: d.t_frame,
            n_subchannels: d.n_subchannels,
            k_sym_dl: d.k_sym_dl,
            ratio_r: d.ratio_r,
            nu: d.nu,
            s_p: d.s_p,
            c_b: d.c_b,
            lambda_p: d.lambda_p,
            striping: d.striping,
        }
    }
}

impl Default for SecondarySection {
    fn default() -> Self {
        let d = ScenarioConfig::default();
        SecondarySection { s_s: d.s_s, n_s: d.n_s }
    }
}

impl Default for MacSection {
    fn default() -> Self {
        let d = ScenarioConfig::default();
        MacSection {
            w0: d.w0,
            m_stages: d.m_stages,
            t_rts: d.t_rts,
            t_cts: d.t_cts,
            t_ack: d.t_ack,
            t_idle: d.t_idle,
            t_coll: d.t_coll,
        }
    }
}

impl ConfigFile {
    pub fn from_toml_str(text: &str) -> Result<ConfigFile> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<ConfigFile> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn scenario(&self) -> Result<ScenarioConfig> {
        let (p, s, m) = (&self.primary, &self.secondary, &self.mac);
        let cfg = ScenarioConfig {
            t_frame: p.t_frame,
            n_subchannels: p.n_subchannels,
            k_sym_dl: p.k_sym_dl,
            ratio_r: p.ratio_r,
            nu: p.nu,
            s_p: p.s_p,
            s_s: s.s_s,
            c_b: p.c_b,
            lambda_p: p.lambda_p,
            n_s: s.n_s,
            w0: m.w0,
            m_stages: m.m_stages,
            t_rts: m.t_rts,
            t_cts: m.t_cts,
            t_ack: m.t_ack,
            t_idle: m.t_idle,
            t_coll: m.t_coll,
            striping: p.striping,
            analysis: self.analysis,
        };
        derive_geometry(&cfg)?;
        Ok(cfg)
    }
}
