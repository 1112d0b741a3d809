//! Monte-Carlo link simulation.
//!
//! Every trial draws its own RNG from `(master_seed, Eb/N0 index, trial index)`,
//! and all detectors of a sweep see the same channel and noise in a trial.
//! Trials run in fixed-size batches and the stopping rule is only checked
//! between batches, so the result does not depend on how batches are scheduled.

mod config;
mod report;

pub use config::{parse_pairs, ChannelEstimation, DetectorKind, DetectorSpec, Fading, IddOptions, Scenario, SimConfig};
pub use report::{csv_text, emit_report, git_describe, parse_csv, CsvRow, Emitted, CSV_HEADER};

use std::time::Instant;

use rand::Rng;

use crate::airlink::{
    gen_channel_with, modulate_indices, pilot_block, rls_channel_estimate, seeded_rng, transmit_with,
    ChannelRealization, Constellation, NoiseBudget,
};
use crate::detect::{mb_mf_sic_detect, mf_sic_detect, ml_detect_capped, mmse_lin_detect, sic_detect, sphere_decode};
use crate::error::{contract, Result};
use crate::fec::{conv_encode, ConvCode, Interleaver};
use crate::idd::{idd_receive_fading, CodedLink, IddConfig};
use crate::numerics::{ComplexMatrix, ComplexVector};
use crate::par::map_indexed;

/// z for a two-sided 95% interval.
pub const Z95: f64 = 1.959_963_984_540_054;

/// One `(detector, Eb/N0, iteration)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellReport {
    pub detector: String,
    pub eb_n0_db: f64,
    pub iteration: usize,
    pub trials: u64,
    pub bits: u64,
    pub errors: u64,
    pub ber: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Mean complex multiplications per detected vector.
    pub cmults: f64,
    /// Fraction of SAC-flagged decisions over all layers.
    pub sac_rate: f64,
    /// Per detection layer.
    pub sac_layer_rates: Vec<f64>,
    /// Bit errors of every trial, in trial order.
    pub trial_errors: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub scenario: Scenario,
    pub master_seed: u64,
    pub cells: Vec<CellReport>,
    pub wall_time_s: f64,
}

impl SimReport {
    pub fn cell(&self, detector: &str, eb_n0_db: f64, iteration: usize) -> Option<&CellReport> {
        self.cells
            .iter()
            .find(|c| c.detector == detector && c.eb_n0_db == eb_n0_db && c.iteration == iteration)
    }
}

/// 95% normal-approximation interval; the spread uses at least one error.
pub fn ber_interval(errors: u64, bits: u64) -> (f64, f64) {
    if bits == 0 {
        return (0.0, 1.0);
    }
    let n = bits as f64;
    let ber = errors as f64 / n;
    let p = errors.max(1) as f64 / n;
    let half = Z95 * (p * (1.0 - p) / n).sqrt();
    ((ber - half).max(0.0), (ber + half).min(1.0))
}

/// Paired BER difference `A − B` with its standard error, from per-trial errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedDiff {
    pub diff: f64,
    pub se: f64,
}

impl PairedDiff {
    /// `A ≤ B` is not rejected at 95%.
    pub fn not_worse(&self) -> bool {
        self.diff <= Z95 * self.se
    }

    /// `A < B` at 95%.
    pub fn strictly_better(&self) -> bool {
        -self.diff > Z95 * self.se
    }
}

pub fn paired_diff(a: &CellReport, b: &CellReport) -> Result<PairedDiff> {
    if a.trial_errors.len() != b.trial_errors.len() || a.trials == 0 || a.bits != b.bits {
        return Err(contract(format!("cells `{}` and `{}` are not paired", a.detector, b.detector)));
    }
    let n = a.trial_errors.len() as f64;
    let per_trial = a.bits as f64 / n;
    let d: Vec<f64> = a
        .trial_errors
        .iter()
        .zip(&b.trial_errors)
        .map(|(&x, &y)| (x as f64 - y as f64) / per_trial)
        .collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = if n > 1.0 {
        d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(PairedDiff {
        diff: mean,
        se: (var / n).sqrt(),
    })
}

/// What one detector produced in one trial.
#[derive(Debug, Clone, Default)]
struct Outcome {
    /// Bit errors per iteration (one entry when uncoded).
    errors: Vec<u32>,
    cmults: u64,
    triggers: Vec<bool>,
}

#[derive(Debug, Clone)]
struct Accum {
    trials: u64,
    errors: Vec<u64>,
    cmults: u64,
    vectors: u64,
    triggers: Vec<u64>,
    trial_errors: Vec<Vec<u32>>,
}

impl Accum {
    fn new(iters: usize, layers: usize) -> Self {
        Self {
            trials: 0,
            errors: vec![0; iters],
            cmults: 0,
            vectors: 0,
            triggers: vec![0; layers],
            trial_errors: vec![Vec::new(); iters],
        }
    }
}

fn trial_stream(snr_index: usize, trial: u64) -> u64 {
    ((snr_index as u64) << 40) | trial
}

fn sigma_v2(cfg: &SimConfig, eb_n0_db: f64, c: &Constellation) -> f64 {
    let code_rate = if cfg.scenario == Scenario::CodedIdd {
        let code = ConvCode::default();
        cfg.message_bits as f64 / code.coded_len(cfg.message_bits) as f64
    } else {
        1.0
    };
    crate::airlink::noise_variance(&NoiseBudget {
        eb_n0_db,
        bits_per_symbol: c.bits_per_symbol(),
        code_rate,
    })
}

fn detect_once(spec: &DetectorSpec, r: &[num_complex::Complex64], h: &ComplexMatrix, sigma: f64, c: &Constellation, eb_n0_db: f64) -> Result<crate::detect::DetectionResult> {
    let dcfg = spec.config.at_snr(eb_n0_db);
    match spec.kind {
        DetectorKind::Mmse => mmse_lin_detect(r, h, sigma, c),
        DetectorKind::Sic => sic_detect(r, h, sigma, c, dcfg.ordering),
        DetectorKind::MfSic => mf_sic_detect(r, h, sigma, c, &dcfg),
        DetectorKind::MbMfSic => mb_mf_sic_detect(r, h, sigma, c, &dcfg),
        DetectorKind::Ml => ml_detect_capped(r, h, c, dcfg.ml_cap),
        DetectorKind::Sd => sphere_decode(r, h, c, sigma, &dcfg),
        DetectorKind::Idd(_) => Err(contract("turbo receivers need the coded scenario")),
    }
}

fn uncoded_trial(cfg: &SimConfig, c: &Constellation, snr_index: usize, trial: u64) -> Result<Vec<Outcome>> {
    let eb_n0_db = cfg.eb_n0_db[snr_index];
    let sigma = sigma_v2(cfg, eb_n0_db, c);
    let mut rng = seeded_rng(cfg.master_seed, trial_stream(snr_index, trial));
    let h = gen_channel_with(cfg.users, cfg.rx_antennas, &mut rng)?;
    let tx: Vec<usize> = (0..cfg.users).map(|_| rng.random_range(0..c.len())).collect();
    let s: ComplexVector = tx.iter().map(|&i| c.point(i)).collect();
    let ch = ChannelRealization::new(h, sigma)?;
    let r = transmit_with(&s, &ch, &mut rng)?;
    cfg.detectors
        .iter()
        .map(|spec| {
            let det = detect_once(spec, &r, &ch.h, sigma, c, eb_n0_db)?;
            // indices are the bit labels
            let errors: u32 = tx
                .iter()
                .zip(&det.indices)
                .map(|(&a, &b)| (a ^ b).count_ones())
                .sum();
            Ok(Outcome {
                errors: vec![errors],
                cmults: det.complex_mults,
                triggers: det.sac_triggers,
            })
        })
        .collect()
}

fn coded_link(cfg: &SimConfig, c: &Constellation) -> CodedLink {
    let code = ConvCode::default();
    let coded_len = code.coded_len(cfg.message_bits);
    CodedLink {
        code,
        interleavers: (0..cfg.users)
            .map(|u| Interleaver::random(coded_len, cfg.master_seed.wrapping_add(0x9e37_79b9 * (u as u64 + 1))))
            .collect(),
        constellation: c.clone(),
    }
}

fn coded_trial(cfg: &SimConfig, link: &CodedLink, snr_index: usize, trial: u64) -> Result<Vec<Outcome>> {
    let c = &link.constellation;
    let eb_n0_db = cfg.eb_n0_db[snr_index];
    let sigma = sigma_v2(cfg, eb_n0_db, c);
    let mut rng = seeded_rng(cfg.master_seed, trial_stream(snr_index, trial));
    let n_sym = link.symbols_per_frame();
    let channels: Vec<ComplexMatrix> = match cfg.fading {
        Fading::Block => vec![gen_channel_with(cfg.users, cfg.rx_antennas, &mut rng)?],
        Fading::PerSymbol => (0..n_sym)
            .map(|_| gen_channel_with(cfg.users, cfg.rx_antennas, &mut rng))
            .collect::<Result<_>>()?,
    };

    let mut messages = Vec::with_capacity(cfg.users);
    let mut streams = Vec::with_capacity(cfg.users);
    for user in 0..cfg.users {
        let msg: Vec<u8> = (0..cfg.message_bits).map(|_| rng.random_range(0..2u8)).collect();
        let coded = link.interleavers[user].interleave(&conv_encode(&msg, &link.code)?)?;
        streams.push(modulate_indices(&coded, c)?);
        messages.push(msg);
    }
    let r_block: Vec<ComplexVector> = (0..n_sym)
        .map(|i| {
            let ch = ChannelRealization::new(channels[if channels.len() == 1 { 0 } else { i }].clone(), sigma)?;
            let s: ComplexVector = streams.iter().map(|st| c.point(st[i])).collect();
            transmit_with(&s, &ch, &mut rng)
        })
        .collect::<Result<_>>()?;

    let rx_channels = match cfg.channel_estimation {
        ChannelEstimation::Perfect => channels,
        ChannelEstimation::Rls { lambda, n_train } => {
            let ch = ChannelRealization::new(channels[0].clone(), sigma)?;
            let pilots = pilot_block(&ch, c, n_train, &mut rng)?;
            vec![rls_channel_estimate(&pilots, lambda)?]
        }
    };

    cfg.detectors
        .iter()
        .map(|spec| {
            let DetectorKind::Idd(first_stage) = spec.kind else {
                return Err(contract(format!("detector `{}` is not a turbo receiver", spec.label)));
            };
            let icfg = IddConfig {
                detector: spec.config.at_snr(eb_n0_db),
                n_iters: cfg.n_iters,
                first_stage,
                cancel_source: spec.idd.cancel_source,
                averaged_filter: spec.idd.averaged_filter,
                max_star: spec.idd.max_star,
            };
            let out = idd_receive_fading(&r_block, &rx_channels, sigma, link, &icfg)?;
            let errors = out
                .iterations
                .iter()
                .map(|it| {
                    it.decisions
                        .iter()
                        .zip(&messages)
                        .map(|(d, m)| d.iter().zip(m).filter(|(a, b)| a != b).count() as u32)
                        .sum()
                })
                .collect();
            Ok(Outcome {
                errors,
                cmults: 0,
                triggers: Vec::new(),
            })
        })
        .collect()
}

fn check_scenario(cfg: &SimConfig, want: &[Scenario]) -> Result<()> {
    if want.contains(&cfg.scenario) {
        Ok(())
    } else {
        Err(contract(format!("scenario {} cannot be run here", cfg.scenario)))
    }
}

/// Whether the sweep stops as soon as every cell has enough errors.
fn error_driven(s: Scenario) -> bool {
    matches!(s, Scenario::UncodedBer | Scenario::CodedIdd)
}

fn simulate(cfg: &SimConfig) -> Result<SimReport> {
    let start = Instant::now();
    let c = Constellation::new(cfg.constellation);
    let coded = cfg.scenario == Scenario::CodedIdd;
    let link = coded.then(|| coded_link(cfg, &c));
    let iters = if coded { cfg.n_iters } else { 1 };
    let bits_per_trial = if coded {
        (cfg.users * cfg.message_bits) as u64
    } else {
        (cfg.users * c.bits_per_symbol()) as u64
    };
    let mut cells = Vec::new();
    for (snr_index, &eb_n0_db) in cfg.eb_n0_db.iter().enumerate() {
        let mut acc: Vec<Accum> = cfg.detectors.iter().map(|_| Accum::new(iters, cfg.users)).collect();
        let mut done = 0u64;
        while done < cfg.max_trials {
            let batch = cfg.batch_size.min(cfg.max_trials - done);
            let results = map_indexed(batch as usize, |i| {
                let trial = done + i as u64;
                match &link {
                    Some(link) => coded_trial(cfg, link, snr_index, trial),
                    None => uncoded_trial(cfg, &c, snr_index, trial),
                }
            });
            for outcome in results {
                for (a, o) in acc.iter_mut().zip(outcome?) {
                    a.trials += 1;
                    for (it, &e) in o.errors.iter().enumerate() {
                        a.errors[it] += e as u64;
                        a.trial_errors[it].push(e);
                    }
                    a.cmults += o.cmults;
                    a.vectors += 1;
                    for (layer, &t) in o.triggers.iter().enumerate() {
                        a.triggers[layer] += t as u64;
                    }
                }
            }
            done += batch;
            if error_driven(cfg.scenario) && acc.iter().all(|a| a.errors.iter().all(|&e| e >= cfg.min_bit_errors)) {
                break;
            }
        }
        for (spec, a) in cfg.detectors.iter().zip(acc) {
            let vectors = a.vectors.max(1) as f64;
            let layer_rates: Vec<f64> = a.triggers.iter().map(|&t| t as f64 / vectors).collect();
            let sac_rate = if coded {
                0.0
            } else {
                a.triggers.iter().sum::<u64>() as f64 / (vectors * cfg.users as f64)
            };
            for (it, trial_errors) in a.trial_errors.into_iter().enumerate() {
                let bits = a.trials * bits_per_trial;
                let errors = a.errors[it];
                let (ci_low, ci_high) = ber_interval(errors, bits);
                cells.push(CellReport {
                    detector: spec.label.clone(),
                    eb_n0_db,
                    iteration: it + 1,
                    trials: a.trials,
                    bits,
                    errors,
                    ber: if bits == 0 { 0.0 } else { errors as f64 / bits as f64 },
                    ci_low,
                    ci_high,
                    cmults: a.cmults as f64 / vectors,
                    sac_rate,
                    sac_layer_rates: if coded { Vec::new() } else { layer_rates.clone() },
                    trial_errors,
                });
            }
        }
    }
    Ok(SimReport {
        scenario: cfg.scenario,
        master_seed: cfg.master_seed,
        cells,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Uncoded BER sweep over paired channel and noise realizations.
pub fn run_uncoded(cfg: &SimConfig) -> Result<SimReport> {
    check_scenario(cfg, &[Scenario::UncodedBer])?;
    simulate(cfg)
}

/// Coded turbo-receiver sweep; one cell per detector, Eb/N0 and iteration.
pub fn run_coded(cfg: &SimConfig) -> Result<SimReport> {
    check_scenario(cfg, &[Scenario::CodedIdd])?;
    simulate(cfg)
}

/// SAC trigger rates of MF-SIC over exactly `max_trials` vectors per point.
pub fn run_sac_stats(cfg: &SimConfig) -> Result<SimReport> {
    check_scenario(cfg, &[Scenario::SacStats])?;
    simulate(cfg)
}

/// Mean complex-multiplication counts over exactly `max_trials` vectors per point.
pub fn count_complexity(cfg: &SimConfig) -> Result<SimReport> {
    check_scenario(cfg, &[Scenario::Complexity])?;
    simulate(cfg)
}

/// Dispatches on the configured scenario.
pub fn run(cfg: &SimConfig) -> Result<SimReport> {
    match cfg.scenario {
        Scenario::UncodedBer => run_uncoded(cfg),
        Scenario::CodedIdd => run_coded(cfg),
        Scenario::SacStats => run_sac_stats(cfg),
        Scenario::Complexity => count_complexity(cfg),
    }
}
