//! Flat `key=value` simulation configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::airlink::{Constellation, ConstellationKind};
use crate::detect::{fsb_patterns, DetectorConfig, Ordering};
use crate::error::{Error, Result};
use crate::fec::{ConvCode, MaxStar};
use crate::idd::{CancelSource, FirstStage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    UncodedBer,
    CodedIdd,
    SacStats,
    Complexity,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::UncodedBer => "uncoded-ber",
            Self::CodedIdd => "coded-idd",
            Self::SacStats => "sac-stats",
            Self::Complexity => "complexity",
        })
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "uncoded-ber" => Ok(Self::UncodedBer),
            "coded-idd" => Ok(Self::CodedIdd),
            "sac-stats" => Ok(Self::SacStats),
            "complexity" => Ok(Self::Complexity),
            other => Err(format!("unknown scenario `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChannelEstimation {
    Perfect,
    Rls { lambda: f64, n_train: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fading {
    /// One channel per trial (per frame when coded).
    Block,
    /// A fresh channel at every symbol time.
    PerSymbol,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorKind {
    Mmse,
    Sic,
    MfSic,
    MbMfSic,
    Ml,
    Sd,
    /// Turbo receiver with the given first pass.
    Idd(FirstStage),
}

impl DetectorKind {
    pub fn is_coded(self) -> bool {
        matches!(self, Self::Idd(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IddOptions {
    pub cancel_source: CancelSource,
    pub averaged_filter: bool,
    pub max_star: MaxStar,
}

/// One detector of a sweep. `label` is the spec string as written, and is
/// what appears in the report.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorSpec {
    pub label: String,
    pub kind: DetectorKind,
    pub config: DetectorConfig,
    pub idd: IddOptions,
}

impl DetectorSpec {
    /// Parses `name[:key=value]*`, e.g. `mf-sic:d_th=0.5:m=4` or `mb-mf-sic:l=4`.
    pub fn parse(spec: &str, users: usize) -> std::result::Result<Self, String> {
        let label = spec.trim().to_string();
        let mut parts = label.split(':');
        let name = parts.next().unwrap_or_default();
        let kind = match name {
            "mmse" => DetectorKind::Mmse,
            "sic" => DetectorKind::Sic,
            "mf-sic" => DetectorKind::MfSic,
            "mb-mf-sic" => DetectorKind::MbMfSic,
            "ml" => DetectorKind::Ml,
            "sd" => DetectorKind::Sd,
            "sc" => DetectorKind::Idd(FirstStage::Sc),
            "sic-sc" => DetectorKind::Idd(FirstStage::Sic),
            "mf-sic-sc" => DetectorKind::Idd(FirstStage::MfSic),
            "mb-mf-sic-sc" => DetectorKind::Idd(FirstStage::MbMfSic),
            other => return Err(format!("unknown detector `{other}`")),
        };
        let mut config = DetectorConfig::new(users);
        let mut idd = IddOptions {
            cancel_source: CancelSource::DecoderSoftSymbols,
            averaged_filter: false,
            max_star: MaxStar::Exact,
        };
        let mut branches = None;
        for part in parts {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| format!("detector `{label}`: option `{part}` is not key=value"))?;
            let bad = || format!("detector `{label}`: bad value `{value}` for `{key}`");
            match key {
                "d_th" => config.d_th = parse_float(value).ok_or_else(bad)?,
                "m" => config.m = value.parse().map_err(|_| bad())?,
                "l" => branches = Some(value.parse::<usize>().map_err(|_| bad())?),
                "radius" => config.sd_radius_scale = parse_float(value).ok_or_else(bad)?,
                "ordering" => {
                    config.ordering = match value {
                        "norm" => Ordering::DescendingColumnNorm,
                        "none" => Ordering::None,
                        _ => return Err(bad()),
                    }
                }
                "cancel" => {
                    idd.cancel_source = match value {
                        "decoder" => CancelSource::DecoderSoftSymbols,
                        "detector" => CancelSource::DetectorOutputs,
                        _ => return Err(bad()),
                    }
                }
                "avg" => idd.averaged_filter = value.parse().map_err(|_| bad())?,
                "maxlog" => {
                    idd.max_star = if value.parse().map_err(|_| bad())? {
                        MaxStar::MaxLog
                    } else {
                        MaxStar::Exact
                    }
                }
                _ => return Err(format!("detector `{label}`: unknown option `{key}`")),
            }
        }
        let multi_branch = matches!(kind, DetectorKind::MbMfSic | DetectorKind::Idd(FirstStage::MbMfSic));
        match (branches, multi_branch) {
            (Some(l), true) => config.patterns = fsb_patterns(users, l).map_err(|e| format!("detector `{label}`: {e}"))?,
            (None, true) => config.patterns = fsb_patterns(users, 4.min(factorial(users))).map_err(|e| e.to_string())?,
            (Some(_), false) => return Err(format!("detector `{label}`: `l` applies to multi-branch detectors only")),
            (None, false) => {}
        }
        Ok(Self {
            label,
            kind,
            config,
            idd,
        })
    }
}

fn factorial(n: usize) -> usize {
    (1..=n).try_fold(1usize, |a, b| a.checked_mul(b)).unwrap_or(usize::MAX)
}

fn parse_float(s: &str) -> Option<f64> {
    match s {
        "inf" | "+inf" | "infinity" => Some(f64::INFINITY),
        _ => s.parse().ok().filter(|v: &f64| !v.is_nan()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub scenario: Scenario,
    pub users: usize,
    pub rx_antennas: usize,
    pub constellation: ConstellationKind,
    pub eb_n0_db: Vec<f64>,
    pub detectors: Vec<DetectorSpec>,
    pub min_bit_errors: u64,
    /// Cap on trials per Eb/N0 point: symbol vectors when uncoded, frames when coded.
    pub max_trials: u64,
    /// Trials per deterministic batch; the stopping rule is checked between batches.
    pub batch_size: u64,
    pub master_seed: u64,
    pub n_iters: usize,
    pub message_bits: usize,
    pub channel_estimation: ChannelEstimation,
    pub fading: Fading,
    pub plot: bool,
    /// Normalized key/value pairs, echoed into the run manifest.
    pub echo: BTreeMap<String, String>,
}

const KEYS: &[&str] = &[
    "scenario",
    "users",
    "rx_antennas",
    "constellation",
    "eb_n0_db",
    "detectors",
    "min_bit_errors",
    "max_trials",
    "batch_size",
    "master_seed",
    "n_iters",
    "message_bits",
    "channel_estimation",
    "fading",
    "plot",
];

fn canonical_key(key: &str) -> &str {
    match key {
        "K" | "k" => "users",
        "N_R" | "n_r" | "nr" => "rx_antennas",
        "seed" => "master_seed",
        "modulation" => "constellation",
        other => other,
    }
}

impl SimConfig {
    /// Parses the text of a config file. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_pairs(parse_pairs(text)?)
    }

    /// Builds and validates a config from key/value pairs. Every problem is
    /// reported, not just the first.
    pub fn from_pairs(pairs: BTreeMap<String, String>) -> Result<Self> {
        let mut errs = Vec::new();
        for key in pairs.keys() {
            if !KEYS.contains(&key.as_str()) {
                errs.push(format!("unknown key `{key}`"));
            }
        }
        let get = |k: &str| pairs.get(k).map(String::as_str);
        fn field<T: FromStr>(errs: &mut Vec<String>, key: &str, raw: Option<&str>, default: Option<T>) -> Option<T> {
            match raw {
                None if default.is_some() => default,
                None => {
                    errs.push(format!("missing required key `{key}`"));
                    None
                }
                Some(v) => match v.parse() {
                    Ok(x) => Some(x),
                    Err(_) => {
                        errs.push(format!("`{key}`: cannot parse `{v}`"));
                        None
                    }
                },
            }
        }
        let scenario = match get("scenario").map(str::parse::<Scenario>) {
            Some(Ok(s)) => Some(s),
            Some(Err(e)) => {
                errs.push(e);
                None
            }
            None => {
                errs.push("missing required key `scenario`".into());
                None
            }
        };
        let users: Option<usize> = field(&mut errs, "users", get("users"), None);
        let rx: Option<usize> = field(&mut errs, "rx_antennas", get("rx_antennas"), None);
        // coded frames default to anti-Gray QPSK, uncoded runs to Gray
        let default_constellation = if scenario == Some(Scenario::CodedIdd) { "qpsk-antigray" } else { "qpsk" };
        let constellation = match get("constellation").unwrap_or(default_constellation).parse::<ConstellationKind>() {
            Ok(c) => Some(c),
            Err(e) => {
                errs.push(format!("`constellation`: {e}"));
                None
            }
        };
        let min_bit_errors: Option<u64> = field(&mut errs, "min_bit_errors", get("min_bit_errors"), Some(100));
        let max_trials: Option<u64> = field(&mut errs, "max_trials", get("max_trials"), Some(100_000));
        let batch_size: Option<u64> = field(&mut errs, "batch_size", get("batch_size"), Some(1000));
        let master_seed: Option<u64> = field(&mut errs, "master_seed", get("master_seed"), Some(1));
        let n_iters: Option<usize> = field(&mut errs, "n_iters", get("n_iters"), Some(1));
        let message_bits: Option<usize> = field(&mut errs, "message_bits", get("message_bits"), Some(497));
        let plot: Option<bool> = field(&mut errs, "plot", get("plot"), Some(false));

        if users == Some(0) {
            errs.push("`users` must be ≥ 1".into());
        }
        if rx == Some(0) {
            errs.push("`rx_antennas` must be ≥ 1".into());
        }
        if min_bit_errors == Some(0) {
            errs.push("`min_bit_errors` must be ≥ 1".into());
        }
        if max_trials == Some(0) {
            errs.push("`max_trials` must be ≥ 1".into());
        }
        if batch_size == Some(0) {
            errs.push("`batch_size` must be ≥ 1".into());
        }
        if n_iters == Some(0) {
            errs.push("`n_iters` must be ≥ 1".into());
        }

        let mut eb_n0_db = Vec::new();
        match get("eb_n0_db") {
            None => errs.push("missing required key `eb_n0_db`".into()),
            Some(list) => {
                for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    match item.parse::<f64>() {
                        Ok(v) if v.is_finite() => eb_n0_db.push(v),
                        _ => errs.push(format!("`eb_n0_db`: bad value `{item}`")),
                    }
                }
                if eb_n0_db.is_empty() {
                    errs.push("`eb_n0_db` must list at least one value".into());
                }
            }
        }

        let channel_estimation = match get("channel_estimation").unwrap_or("perfect") {
            "perfect" => Some(ChannelEstimation::Perfect),
            s if s.starts_with("rls") => parse_rls(s).map_err(|e| errs.push(e)).ok(),
            other => {
                errs.push(format!("`channel_estimation`: unknown value `{other}`"));
                None
            }
        };
        let fading = match get("fading").unwrap_or("block") {
            "block" => Some(Fading::Block),
            "per-symbol" => Some(Fading::PerSymbol),
            other => {
                errs.push(format!("`fading`: unknown value `{other}`"));
                None
            }
        };

        let mut detectors = Vec::new();
        if let (Some(k), Some(c)) = (users.filter(|&k| k > 0), constellation) {
            let alphabet = Constellation::new(c);
            match get("detectors") {
                None => errs.push("missing required key `detectors`".into()),
                Some(list) => {
                    for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                        match DetectorSpec::parse(item, k) {
                            Ok(d) => {
                                if let Err(Error::Config(e)) = d.config.validate(k, &alphabet) {
                                    errs.extend(e.into_iter().map(|m| format!("detector `{}`: {m}", d.label)));
                                }
                                detectors.push(d);
                            }
                            Err(e) => errs.push(e),
                        }
                    }
                    if detectors.is_empty() && !errs.iter().any(|e| e.starts_with("detector")) {
                        errs.push("`detectors` must list at least one detector".into());
                    }
                    let mut seen = std::collections::BTreeSet::new();
                    for d in &detectors {
                        if !seen.insert(d.label.as_str()) {
                            errs.push(format!("detector `{}` is listed twice", d.label));
                        }
                    }
                }
            }
        }

        if let Some(s) = scenario {
            let coded = s == Scenario::CodedIdd;
            for d in &detectors {
                if d.kind.is_coded() != coded {
                    errs.push(format!("detector `{}` does not apply to scenario {s}", d.label));
                }
            }
            if s == Scenario::SacStats && detectors.iter().any(|d| d.kind != DetectorKind::MfSic) {
                errs.push("scenario sac-stats runs MF-SIC detectors only".into());
            }
            if !coded {
                if matches!(channel_estimation, Some(ChannelEstimation::Rls { .. })) {
                    errs.push("RLS channel estimation applies to coded-idd only".into());
                }
                if n_iters.is_some_and(|n| n != 1) {
                    errs.push("`n_iters` applies to coded-idd only".into());
                }
            } else {
                if let (Some(ChannelEstimation::Rls { .. }), Some(Fading::PerSymbol)) = (channel_estimation, fading) {
                    errs.push("RLS channel estimation needs block fading".into());
                }
                if let (Some(mb), Some(c)) = (message_bits, constellation) {
                    let coded_len = ConvCode::default().coded_len(mb);
                    let bps = Constellation::new(c).bits_per_symbol();
                    if mb == 0 || coded_len % bps != 0 {
                        errs.push(format!(
                            "`message_bits` = {mb} gives {coded_len} coded bits, not a whole number of {bps}-bit symbols"
                        ));
                    }
                }
            }
        }
        if let (Some(Scenario::CodedIdd), Some(k), Some(ChannelEstimation::Rls { n_train, .. })) =
            (scenario, users, channel_estimation)
        {
            if n_train < k {
                errs.push(format!("RLS needs at least {k} pilots, got {n_train}"));
            }
        }

        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let echo = pairs;
        Ok(Self {
            scenario: scenario.expect("validated"),
            users: users.expect("validated"),
            rx_antennas: rx.expect("validated"),
            constellation: constellation.expect("validated"),
            eb_n0_db,
            detectors,
            min_bit_errors: min_bit_errors.expect("validated"),
            max_trials: max_trials.expect("validated"),
            batch_size: batch_size.expect("validated"),
            master_seed: master_seed.expect("validated"),
            n_iters: n_iters.expect("validated"),
            message_bits: message_bits.expect("validated"),
            channel_estimation: channel_estimation.expect("validated"),
            fading: fading.expect("validated"),
            plot: plot.expect("validated"),
            echo,
        })
    }
}

fn parse_rls(s: &str) -> std::result::Result<ChannelEstimation, String> {
    let mut lambda = 0.998;
    let mut n_train = 40;
    for part in s.split(':').skip(1) {
        let (k, v) = part.split_once('=').ok_or_else(|| format!("`channel_estimation`: bad option `{part}`"))?;
        let bad = || format!("`channel_estimation`: bad value `{v}` for `{k}`");
        match k {
            "lambda" => lambda = v.parse().map_err(|_| bad())?,
            "n_train" => n_train = v.parse().map_err(|_| bad())?,
            _ => return Err(format!("`channel_estimation`: unknown option `{k}`")),
        }
    }
    if s.split(':').next() != Some("rls") {
        return Err(format!("`channel_estimation`: unknown value `{s}`"));
    }
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(format!("`channel_estimation`: lambda must lie in (0, 1], got {lambda}"));
    }
    Ok(ChannelEstimation::Rls { lambda, n_train })
}

/// Splits config text into normalized key/value pairs.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut errs = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) => {
                let key = canonical_key(k.trim()).to_string();
                if out.insert(key.clone(), v.trim().to_string()).is_some() {
                    errs.push(format!("line {}: `{key}` given twice", no + 1));
                }
            }
            None => errs.push(format!("line {}: expected key=value, got `{line}`", no + 1)),
        }
    }
    if errs.is_empty() {
        Ok(out)
    } else {
        Err(Error::Config(errs))
    }
}
