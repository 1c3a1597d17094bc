use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sixdma_core::beamform::{centralized_mmse, local_receivers, BeamformerSet};
use sixdma_core::channel::{
    assemble_channel, generate_paths, place_users, sample_fading, FadingSample, PathSet, Scenario,
};
use sixdma_core::cssca::{run, run_baseline, CsscaState, Scheme, TraceRecord};
use sixdma_core::objective::per_user_rates;
use sixdma_core::rng::{stream_rng, Stream};

use crate::config::{ExperimentConfig, SweepAxis};
use crate::error::Result;

/// Ergodic rate of one scheme on one realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scheme: Scheme,
    pub sweep_axis: SweepAxis,
    pub sweep_value: f64,
    pub realization: usize,
    /// Bits/s/Hz; `None` when the run failed.
    pub sum_rate: Option<f64>,
    pub per_user_rates: Vec<f64>,
    pub wall_time_s: Option<f64>,
    pub error: Option<String>,
}

/// One optimizer iteration of one scheme on one realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub scheme: Scheme,
    pub sweep_value: f64,
    pub realization: usize,
    #[serde(flatten)]
    pub record: TraceRecord,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub traces: Vec<TraceRow>,
}

/// Users and propagation paths shared by every scheme of a realization.
#[derive(Debug, Clone)]
pub struct Realization {
    pub index: usize,
    pub scenario: Scenario,
    pub paths: PathSet,
}

impl Realization {
    /// Hash of the user positions and path statistics.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for u in &self.scenario.user_positions {
            u.iter().for_each(|x| x.to_bits().hash(&mut h));
        }
        for link in self.paths.links() {
            for (a, b) in link.angles.iter().zip(&link.variances) {
                a.phi.to_bits().hash(&mut h);
                a.theta.to_bits().hash(&mut h);
                b.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

/// Users and paths of realization `index` at one sweep value. User
/// positions do not depend on the sweep value.
pub fn prepare_realization(
    config: &ExperimentConfig,
    sweep_value: f64,
    index: usize,
) -> Result<Realization> {
    let cfg = config.sweep.axis.apply(&config.scenario, sweep_value);
    let mut scenario = Scenario::from_config(&cfg)?;
    if cfg.user_positions_m.is_none() {
        let mut rng = stream_rng(config.master_seed, index as u64, Stream::Users);
        let users = place_users(config.user_distribution, &scenario, &mut rng);
        scenario = scenario.with_users(users)?;
    }
    let mut rng = stream_rng(config.master_seed, index as u64, Stream::Paths);
    let paths = generate_paths(&scenario, &mut rng)?;
    Ok(Realization {
        index,
        scenario,
        paths,
    })
}

/// Fading draws used to score every scheme of a realization.
pub fn evaluation_draws(config: &ExperimentConfig, realization: &Realization) -> Vec<FadingSample> {
    let mut rng = stream_rng(
        config.master_seed,
        realization.index as u64,
        Stream::Evaluation,
    );
    (0..config.eval_samples)
        .map(|_| sample_fading(&realization.paths, &mut rng))
        .collect()
}

/// Mean per-user rates of a finished design over `draws`.
pub fn score(
    scheme: Scheme,
    realization: &Realization,
    state: &CsscaState,
    draws: &[FadingSample],
) -> sixdma_core::Result<Vec<f64>> {
    let scenario = &realization.scenario;
    let layouts = state.layouts(scenario)?;
    let orientations = state.orientations();
    let mut totals = vec![0.0; scenario.num_users];
    for fading in draws {
        let h = assemble_channel(
            &realization.paths,
            fading,
            &layouts,
            &orientations,
            scenario.wavelength,
        )?;
        let stacked = h.stacked();
        let w = if scheme == Scheme::CentralizedMmse {
            centralized_mmse(&stacked, scenario.noise_power)?
        } else {
            BeamformerSet::decentralized(&local_receivers(&h, scenario.noise_power)?, &state.c)
        };
        let report = per_user_rates(&stacked, &w, scenario.noise_power)?;
        for (t, r) in totals.iter_mut().zip(&report.per_user_rate) {
            *t += r;
        }
    }
    Ok(totals.into_iter().map(|t| t / draws.len() as f64).collect())
}

fn run_scheme(
    config: &ExperimentConfig,
    scheme: Scheme,
    realization: &Realization,
    draws: &[FadingSample],
    keep_trace: bool,
) -> sixdma_core::Result<(Vec<f64>, Vec<TraceRecord>)> {
    let scenario = &realization.scenario;
    let mut rng = stream_rng(
        config.master_seed,
        realization.index as u64,
        Stream::Optimizer,
    );
    let outcome = if scheme == Scheme::CentralizedMmse {
        if keep_trace {
            run_baseline(
                scheme,
                scenario,
                &realization.paths,
                &config.optimizer,
                &mut rng,
            )?
        } else {
            sixdma_core::cssca::CsscaOutcome {
                state: CsscaState::initial(scenario, &config.optimizer, None)?,
                trace: Vec::new(),
            }
        }
    } else {
        run(
            scenario,
            &realization.paths,
            &config.optimizer.for_scheme(scheme),
            &mut rng,
        )?
    };
    let rates = score(scheme, realization, &outcome.state, draws)?;
    Ok((
        rates,
        if keep_trace {
            outcome.trace
        } else {
            Vec::new()
        },
    ))
}

fn run_realization(
    config: &ExperimentConfig,
    sweep_value: f64,
    index: usize,
    keep_traces: bool,
) -> ExperimentOutput {
    let mut out = ExperimentOutput::default();
    let failed = |scheme, err: String| ResultRow {
        scheme,
        sweep_axis: config.sweep.axis,
        sweep_value,
        realization: index,
        sum_rate: None,
        per_user_rates: Vec::new(),
        wall_time_s: None,
        error: Some(err),
    };
    let realization = match prepare_realization(config, sweep_value, index) {
        Ok(r) => r,
        Err(e) => {
            out.rows = config
                .schemes
                .iter()
                .map(|&s| failed(s, e.to_string()))
                .collect();
            return out;
        }
    };
    let draws = evaluation_draws(config, &realization);
    for &scheme in &config.schemes {
        let start = Instant::now();
        match run_scheme(config, scheme, &realization, &draws, keep_traces) {
            Ok((rates, trace)) => {
                out.rows.push(ResultRow {
                    scheme,
                    sweep_axis: config.sweep.axis,
                    sweep_value,
                    realization: index,
                    sum_rate: Some(rates.iter().sum()),
                    per_user_rates: rates,
                    wall_time_s: config.record_timings.then(|| start.elapsed().as_secs_f64()),
                    error: None,
                });
                out.traces.extend(trace.into_iter().map(|record| TraceRow {
                    scheme,
                    sweep_value,
                    realization: index,
                    record,
                }));
            }
            Err(e) => out.rows.push(failed(scheme, e.to_string())),
        }
    }
    out
}

/// Runs every scheme on every (sweep value, realization) pair. Rows are
/// ordered by sweep value, realization and the configured scheme order.
pub fn run_experiment_detailed(
    config: &ExperimentConfig,
    keep_traces: bool,
) -> Result<ExperimentOutput> {
    config.validate()?;
    let jobs: Vec<(f64, usize)> = config
        .sweep
        .values
        .iter()
        .flat_map(|&v| (0..config.num_realizations).map(move |i| (v, i)))
        .collect();
    let parts: Vec<ExperimentOutput> = jobs
        .par_iter()
        .map(|&(v, i)| run_realization(config, v, i, keep_traces))
        .collect();
    let mut out = ExperimentOutput::default();
    for p in parts {
        out.rows.extend(p.rows);
        out.traces.extend(p.traces);
    }
    Ok(out)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    Ok(run_experiment_detailed(config, false)?.rows)
}
