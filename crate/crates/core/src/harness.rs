//! Metrics, experiment drivers and result files behind the `nfswipt` CLI.
//!
//! Every experiment expands into independent (grid point, seed, algorithm) tasks. The
//! tasks run on a small thread pool, and rows are sorted before writing, so output files
//! depend only on the configuration.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{
    assemble_channels, assemble_far_field_channels, los_channel, propagation_phase, sample_scenario, ChannelError,
    ChannelSet, PolarPoint, Scenario, SystemConfig,
};
use crate::cplx::gain;
use crate::digital_sdr::{max_min_energy, EffectiveChannels, QosSpec};
use crate::ptl::{run_ptl, run_ptl_maxmin_energy, PtlConfig, PtlError, TraceRow};
use crate::two_stage::{
    analog_alignment, analog_alignment_far_field, fully_digital_design, hybrid_for_analog, random_analog,
    two_stage_design, two_stage_iea_design, two_stage_zf_design, two_stage_zf_with_analog, DesignError,
    HybridBeamformer, FULLY_DIGITAL, PTL, TWO_STAGE, TWO_STAGE_IEA, TWO_STAGE_ZF,
};
use crate::CVector;

/// Relative slack allowed when checking a design against its targets.
pub const QOS_SLACK: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// `log2(1 + SINR_k)` for every ID, counting energy beams as interference.
pub fn rate_of(bf: &HybridBeamformer, channels: &ChannelSet, sigma2: f64) -> Vec<f64> {
    let info = bf.info_beams();
    let energy = bf.energy_beams_antenna();
    channels
        .h_id
        .iter()
        .enumerate()
        .map(|(k, h)| {
            let sig = info.get(k).map_or(0.0, |w| gain(h, w));
            let total: f64 = info.iter().chain(&energy).map(|w| gain(h, w)).sum();
            (1.0 + sig / (total - sig + sigma2)).log2()
        })
        .collect()
}

/// Harvested power `eta * sum |g_l^H x|^2` over all information and energy beams.
pub fn harvested_of(bf: &HybridBeamformer, channels: &ChannelSet, eta: f64) -> Vec<f64> {
    let beams: Vec<CVector> = bf.info_beams().into_iter().chain(bf.energy_beams_antenna()).collect();
    channels.h_eh.iter().map(|g| eta * beams.iter().map(|x| gain(g, x)).sum::<f64>()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    FullyDigital,
    Ptl,
    TwoStage,
    TwoStageZf,
    TwoStageIea,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] =
        [Algorithm::FullyDigital, Algorithm::Ptl, Algorithm::TwoStage, Algorithm::TwoStageZf, Algorithm::TwoStageIea];

    pub fn label(self) -> &'static str {
        match self {
            Algorithm::FullyDigital => FULLY_DIGITAL,
            Algorithm::Ptl => PTL,
            Algorithm::TwoStage => TWO_STAGE,
            Algorithm::TwoStageZf => TWO_STAGE_ZF,
            Algorithm::TwoStageIea => TWO_STAGE_IEA,
        }
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Algorithm::ALL.into_iter().find(|a| a.label() == s.trim()).ok_or_else(|| {
            let names: Vec<_> = Algorithm::ALL.iter().map(|a| a.label()).collect();
            format!("unknown algorithm {s:?} (expected one of {})", names.join(", "))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Convergence,
    SweepQos,
    SweepEnergy,
    EnergyBeamPower,
    ReRegion,
    Spectrum,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::SweepQos => "sweep_qos",
            ExperimentKind::SweepEnergy => "sweep_energy",
            ExperimentKind::EnergyBeamPower => "energy_beam_power",
            ExperimentKind::ReRegion => "re_region",
            ExperimentKind::Spectrum => "spectrum",
        }
    }
}

/// Cartesian sampling grid, endpoints included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub x_min_m: f64,
    pub x_max_m: f64,
    pub y_min_m: f64,
    pub y_max_m: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { x_min_m: 0.0, x_max_m: 30.0, y_min_m: -25.0, y_max_m: 25.0, nx: 200, ny: 200 }
    }
}

impl GridSpec {
    fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![0.5 * (lo + hi)];
        }
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    pub fn xs(&self) -> Vec<f64> {
        Self::axis(self.x_min_m, self.x_max_m, self.nx)
    }

    pub fn ys(&self) -> Vec<f64> {
        Self::axis(self.y_min_m, self.y_max_m, self.ny)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub system: SystemConfig,
    /// Rate targets swept by `sweep_qos` and `re_region`.
    pub rate_grid_bps_hz: Vec<f64>,
    /// Energy targets swept by `sweep_energy` and `energy_beam_power`.
    pub energy_grid_w: Vec<f64>,
    /// Fixed rate target where the rate is not swept.
    pub rate_bps_hz: f64,
    /// Fixed energy target where the energy is not swept.
    pub energy_w: f64,
    pub id_radius_m: f64,
    pub eh_radius_m: f64,
    pub cluster_radius_m: f64,
    pub seeds: Vec<u64>,
    pub algorithms: Vec<Algorithm>,
    pub ptl: PtlConfig,
    /// Transmit budget of the rate-energy experiment.
    pub budget_w: f64,
    pub grid: GridSpec,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::for_kind(ExperimentKind::SweepQos)
    }
}

impl ExperimentConfig {
    /// Settings from the corresponding figure captions, at desk scale.
    pub fn for_kind(kind: ExperimentKind) -> Self {
        let base = ExperimentConfig {
            kind,
            system: SystemConfig::default(),
            rate_grid_bps_hz: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0],
            energy_grid_w: vec![0.01, 0.02, 0.03, 0.04],
            rate_bps_hz: 1.0,
            energy_w: 0.02,
            id_radius_m: 20.0,
            eh_radius_m: 20.0,
            cluster_radius_m: 30.0,
            seeds: (0..20).collect(),
            algorithms: Algorithm::ALL.to_vec(),
            ptl: PtlConfig::default(),
            budget_w: 1.0,
            grid: GridSpec::default(),
            out_dir: PathBuf::from("results"),
        };
        match kind {
            ExperimentKind::Convergence => ExperimentConfig { seeds: (0..5).collect(), algorithms: vec![Algorithm::Ptl], ..base },
            ExperimentKind::SweepQos | ExperimentKind::SweepEnergy => base,
            ExperimentKind::EnergyBeamPower => {
                ExperimentConfig { algorithms: vec![Algorithm::TwoStage, Algorithm::TwoStageZf], ..base }
            }
            ExperimentKind::ReRegion => ExperimentConfig {
                rate_grid_bps_hz: vec![0.1, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
                seeds: (0..5).collect(),
                algorithms: vec![Algorithm::Ptl, Algorithm::TwoStage],
                ..base
            },
            ExperimentKind::Spectrum => ExperimentConfig {
                rate_bps_hz: 3.0,
                eh_radius_m: 10.0,
                seeds: vec![0],
                algorithms: vec![Algorithm::TwoStage],
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        self.system.validate()?;
        let grid = match self.kind {
            ExperimentKind::SweepQos | ExperimentKind::ReRegion => &self.rate_grid_bps_hz,
            ExperimentKind::SweepEnergy | ExperimentKind::EnergyBeamPower => &self.energy_grid_w,
            _ => &vec![0.0],
        };
        if grid.is_empty() {
            return bad("the swept grid is empty".into());
        }
        let positive = |v: &f64| v.is_finite() && *v > 0.0;
        if !self.rate_grid_bps_hz.iter().chain(&self.energy_grid_w).all(positive) {
            return bad("grid values must be positive".into());
        }
        let scalars = [self.rate_bps_hz, self.energy_w, self.id_radius_m, self.eh_radius_m, self.cluster_radius_m, self.budget_w];
        if !scalars.iter().all(positive) {
            return bad("targets, radii and budget must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return bad("seeds must be distinct".into());
        }
        if self.algorithms.is_empty() {
            return bad("at least one algorithm is required".into());
        }
        if self.grid.nx == 0 || self.grid.ny == 0 {
            return bad("spectrum grid is empty".into());
        }
        if !(self.grid.x_min_m <= self.grid.x_max_m && self.grid.y_min_m <= self.grid.y_max_m) {
            return bad("spectrum grid extents are reversed".into());
        }
        let ptl = PtlConfig { num_rf_chains: self.system.num_rf_chains, ..self.ptl.clone() };
        ptl.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }

    fn ptl_config(&self, seed: u64) -> PtlConfig {
        PtlConfig { num_rf_chains: self.system.num_rf_chains, seed, ..self.ptl.clone() }
    }

    fn sigma2(&self) -> f64 {
        self.system.noise_power_w
    }

    fn eta(&self) -> f64 {
        self.system.harvesting_efficiency
    }

    fn qos(&self, rate: f64, energy: f64) -> QosSpec {
        QosSpec::uniform(self.system.num_ids, self.system.num_ehs, rate, energy)
    }

    pub fn scenario(&self, seed: u64) -> Result<Scenario, HarnessError> {
        Ok(sample_scenario(&self.system, self.id_radius_m, self.eh_radius_m, self.cluster_radius_m, seed)?)
    }
}

/// Recursive merge of `patch` into `base`: objects merge key by key, anything else replaces.
pub fn merge_json(base: &mut serde_json::Value, patch: &serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                merge_json(b.entry(k.clone()).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// Defaults for `kind`, overridden by whatever fields `json` sets.
pub fn config_from_json(kind: ExperimentKind, json: &str) -> Result<ExperimentConfig, HarnessError> {
    let patch: serde_json::Value = serde_json::from_str(json).map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut value = serde_json::to_value(ExperimentConfig::for_kind(kind))?;
    merge_json(&mut value, &patch);
    let cfg: ExperimentConfig = serde_json::from_value(value).map_err(|e| HarnessError::Config(e.to_string()))?;
    if cfg.kind != kind {
        return Err(HarnessError::Config(format!("config is for {}, not {}", cfg.kind.name(), kind.name())));
    }
    Ok(cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Infeasible,
    Failed,
}

/// One design evaluated on one scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    /// Swept value (rate in bps/Hz or energy in W); the fixed target otherwise.
    pub grid_value: f64,
    pub seed: u64,
    pub algorithm: String,
    pub status: RunStatus,
    /// Designed and meets every target within [`QOS_SLACK`].
    pub feasible: bool,
    pub rates_bps_hz: Vec<f64>,
    pub harvested_w: Vec<f64>,
    pub tx_power_w: f64,
    pub info_power_w: f64,
    pub energy_power_w: f64,
    pub message: String,
}

impl MetricsRecord {
    fn evaluate(
        grid_value: f64,
        seed: u64,
        algorithm: &str,
        bf: &HybridBeamformer,
        channels: &ChannelSet,
        qos: &QosSpec,
        sigma2: f64,
        eta: f64,
    ) -> Self {
        let rates = rate_of(bf, channels, sigma2);
        let harvested = harvested_of(bf, channels, eta);
        let meets = rates.iter().zip(&qos.rate_targets_bps_hz).all(|(r, t)| *r >= t * (1.0 - QOS_SLACK))
            && harvested.iter().zip(&qos.energy_targets_w).all(|(e, t)| *e >= t * (1.0 - QOS_SLACK));
        MetricsRecord {
            grid_value,
            seed,
            algorithm: algorithm.to_string(),
            status: RunStatus::Ok,
            feasible: meets,
            rates_bps_hz: rates,
            harvested_w: harvested,
            tx_power_w: bf.tx_power(),
            info_power_w: bf.info_power(),
            energy_power_w: bf.energy_power(),
            message: String::new(),
        }
    }

    fn failure(grid_value: f64, seed: u64, algorithm: &str, infeasible: bool, message: String) -> Self {
        MetricsRecord {
            grid_value,
            seed,
            algorithm: algorithm.to_string(),
            status: if infeasible { RunStatus::Infeasible } else { RunStatus::Failed },
            feasible: false,
            rates_bps_hz: vec![],
            harvested_w: vec![],
            tx_power_w: f64::NAN,
            info_power_w: f64::NAN,
            energy_power_w: f64::NAN,
            message,
        }
    }

    pub fn min_rate(&self) -> f64 {
        self.rates_bps_hz.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn min_harvested(&self) -> f64 {
        self.harvested_w.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Normalized received power over a Cartesian grid, `values[iy][ix]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumGrid {
    pub label: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl SpectrumGrid {
    /// Cells at least as large as all of their (up to eight) neighbours.
    pub fn local_maxima(&self) -> Vec<[f64; 2]> {
        let (ny, nx) = (self.ys.len(), self.xs.len());
        let mut out = Vec::new();
        for iy in 0..ny {
            for ix in 0..nx {
                let v = self.values[iy][ix];
                let mut peak = true;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (y, x) = (iy as i64 + dy, ix as i64 + dx);
                        if (dy, dx) != (0, 0) && y >= 0 && x >= 0 && (y as usize) < ny && (x as usize) < nx {
                            peak &= self.values[y as usize][x as usize] <= v;
                        }
                    }
                }
                if peak {
                    out.push([self.xs[ix], self.ys[iy]]);
                }
            }
        }
        out
    }

    pub fn has_peak_near(&self, point: [f64; 2], radius_m: f64) -> bool {
        self.local_maxima().iter().any(|p| (p[0] - point[0]).hypot(p[1] - point[1]) <= radius_m)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().flatten().cloned().fold(0.0, f64::max)
    }
}

/// `sum_k |h(x, y)^H P w_k|^2` with `h(x, y)` the free-space LoS channel of each cell,
/// divided by its largest value.
pub fn spectrum(bf: &HybridBeamformer, grid: &GridSpec, config: &SystemConfig) -> Result<SpectrumGrid, HarnessError> {
    if grid.nx == 0 || grid.ny == 0 {
        return Err(HarnessError::Config("spectrum grid is empty".into()));
    }
    let beams = bf.info_beams();
    let (xs, ys) = (grid.xs(), grid.ys());
    let mut values = Vec::with_capacity(ys.len());
    for &y in &ys {
        let mut row = Vec::with_capacity(xs.len());
        for &x in &xs {
            let p = PolarPoint::from_cartesian(x, y);
            let h = los_channel(&p, propagation_phase(p.distance_m, config), config)?;
            row.push(beams.iter().map(|w| gain(&h, w)).sum::<f64>());
        }
        values.push(row);
    }
    let max = values.iter().flatten().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        values.iter_mut().flatten().for_each(|v| *v /= max);
    }
    Ok(SpectrumGrid { label: bf.label.clone(), xs, ys, values })
}

/// Convergence trace of one seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeededTrace {
    pub seed: u64,
    pub rows: Vec<TraceRow>,
}

/// Rate target against the smallest harvested power at a fixed budget.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrontierPoint {
    pub algorithm: String,
    pub rate_bps_hz: f64,
    /// Median over the seeds with a design; `None` marks a gap.
    pub min_harvested_w: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub metrics: Vec<MetricsRecord>,
    pub traces: Vec<SeededTrace>,
    pub spectra: Vec<SpectrumGrid>,
    pub frontier: Vec<FrontierPoint>,
}

impl ExperimentOutput {
    /// Median transmit power of the successful runs, per (grid value, algorithm).
    pub fn median_power(&self) -> Vec<(f64, String, Option<f64>)> {
        self.medians(|r| (r.status == RunStatus::Ok).then_some(r.tx_power_w))
    }

    fn medians(&self, value: impl Fn(&MetricsRecord) -> Option<f64>) -> Vec<(f64, String, Option<f64>)> {
        let mut keys: Vec<(f64, String)> = self.metrics.iter().map(|r| (r.grid_value, r.algorithm.clone())).collect();
        keys.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        keys.dedup();
        keys.into_iter()
            .map(|(g, a)| {
                let vals: Vec<f64> =
                    self.metrics.iter().filter(|r| r.grid_value == g && r.algorithm == a).filter_map(&value).collect();
                (g, a, median(&vals))
            })
            .collect()
    }

    pub fn all_infeasible(&self) -> bool {
        !self.metrics.is_empty() && self.metrics.iter().all(|r| !r.feasible)
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().cloned().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Runs `job` over `tasks` on up to `available_parallelism` threads, keeping task order.
fn run_pool<T: Sync, R: Send>(tasks: &[T], job: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(tasks.len()).max(1);
    if workers == 1 {
        return tasks.iter().map(job).collect();
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<R>>> = Mutex::new((0..tasks.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= tasks.len() {
                    break;
                }
                let r = job(&tasks[i]);
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    results.into_inner().unwrap().into_iter().map(|r| r.expect("every task ran")).collect()
}

fn design_failure(grid: f64, seed: u64, alg: &str, e: &DesignError) -> MetricsRecord {
    MetricsRecord::failure(grid, seed, alg, e.is_infeasible(), e.to_string())
}

fn ptl_failure(grid: f64, seed: u64, e: &PtlError) -> MetricsRecord {
    let infeasible = matches!(e, PtlError::Infeasible { .. }) || matches!(e, PtlError::Design(d) if d.is_infeasible());
    MetricsRecord::failure(grid, seed, PTL, infeasible, e.to_string())
}

/// Designs `alg` for one scenario and evaluates it.
pub fn run_algorithm(
    cfg: &ExperimentConfig,
    alg: Algorithm,
    scenario: &Scenario,
    channels: &ChannelSet,
    qos: &QosSpec,
    grid_value: f64,
) -> MetricsRecord {
    let (s2, eta, sys) = (cfg.sigma2(), cfg.eta(), &cfg.system);
    let seed = scenario.seed;
    let design = match alg {
        Algorithm::FullyDigital => fully_digital_design(channels, qos, s2, eta),
        Algorithm::TwoStage => two_stage_design(scenario, channels, qos, s2, eta, sys),
        Algorithm::TwoStageIea => two_stage_iea_design(scenario, channels, qos, s2, eta, sys),
        Algorithm::TwoStageZf => two_stage_zf_design(scenario, channels, qos, s2, eta, sys, true),
        Algorithm::Ptl => {
            return match run_ptl(channels, qos, s2, eta, &cfg.ptl_config(seed)) {
                Ok(run) => MetricsRecord::evaluate(grid_value, seed, PTL, &run.beamformer, channels, qos, s2, eta),
                Err(e) => ptl_failure(grid_value, seed, &e),
            };
        }
    };
    match design {
        Ok(bf) => MetricsRecord::evaluate(grid_value, seed, alg.label(), &bf, channels, qos, s2, eta),
        Err(e) => design_failure(grid_value, seed, alg.label(), &e),
    }
}

fn sort_metrics(rows: &mut [MetricsRecord]) {
    rows.sort_by(|a, b| a.grid_value.total_cmp(&b.grid_value).then(a.seed.cmp(&b.seed)).then(a.algorithm.cmp(&b.algorithm)));
}

/// Scenarios and channels for every seed, built once.
fn draws(cfg: &ExperimentConfig) -> Result<Vec<(Scenario, ChannelSet)>, HarnessError> {
    cfg.seeds
        .iter()
        .map(|&s| {
            let sc = cfg.scenario(s)?;
            let ch = assemble_channels(&sc, &cfg.system)?;
            Ok((sc, ch))
        })
        .collect()
}

/// Every (grid value, draw index, algorithm) combination.
fn grid_tasks(grid: &[f64], num_draws: usize, algs: &[Algorithm]) -> Vec<(f64, usize, Algorithm)> {
    let mut tasks = Vec::new();
    for &g in grid {
        for d in 0..num_draws {
            tasks.extend(algs.iter().map(|&a| (g, d, a)));
        }
    }
    tasks
}

fn sweep(cfg: &ExperimentConfig, grid: &[f64], qos_at: impl Fn(f64) -> QosSpec + Sync) -> Result<ExperimentOutput, HarnessError> {
    let draws = draws(cfg)?;
    let tasks = grid_tasks(grid, draws.len(), &cfg.algorithms);
    let mut metrics = run_pool(&tasks, |&(g, d, a)| {
        let (sc, ch) = &draws[d];
        run_algorithm(cfg, a, sc, ch, &qos_at(g), g)
    });
    sort_metrics(&mut metrics);
    Ok(ExperimentOutput { metrics, ..Default::default() })
}

fn convergence(cfg: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    let draws = draws(cfg)?;
    let qos = cfg.qos(cfg.rate_bps_hz, cfg.energy_w);
    let (s2, eta) = (cfg.sigma2(), cfg.eta());
    let runs = run_pool(&draws, |(sc, ch)| match run_ptl(ch, &qos, s2, eta, &cfg.ptl_config(sc.seed)) {
        Ok(run) => {
            let m = MetricsRecord::evaluate(cfg.rate_bps_hz, sc.seed, PTL, &run.beamformer, ch, &qos, s2, eta);
            (m, SeededTrace { seed: sc.seed, rows: run.trace.rows })
        }
        Err(e) => {
            let rows = match &e {
                PtlError::Infeasible { trace } => trace.rows.clone(),
                _ => vec![],
            };
            (ptl_failure(cfg.rate_bps_hz, sc.seed, &e), SeededTrace { seed: sc.seed, rows })
        }
    });
    let (mut metrics, mut traces): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    sort_metrics(&mut metrics);
    traces.sort_by_key(|t| t.seed);
    Ok(ExperimentOutput { metrics, traces, ..Default::default() })
}

/// Information versus energy-beam power with a random analog precoder: the optimal digital
/// stage (labelled two-stage) against zero-forcing with energy beams.
fn energy_beam_power(cfg: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    let draws = draws(cfg)?;
    let (s2, eta) = (cfg.sigma2(), cfg.eta());
    let algs: Vec<Algorithm> =
        cfg.algorithms.iter().cloned().filter(|a| matches!(a, Algorithm::TwoStage | Algorithm::TwoStageZf)).collect();
    if algs.is_empty() {
        return Err(HarnessError::Config("energy_beam_power compares two-stage and two-stage-zf".into()));
    }
    let tasks = grid_tasks(&cfg.energy_grid_w, draws.len(), &algs);
    let mut metrics = run_pool(&tasks, |&(g, d, a)| {
        let (sc, ch) = &draws[d];
        let qos = cfg.qos(cfg.rate_bps_hz, g);
        let p = random_analog(cfg.system.num_antennas, cfg.system.num_rf_chains, sc.seed);
        let design = match a {
            Algorithm::TwoStageZf => two_stage_zf_with_analog(p, ch, &qos, s2, eta, true).map(|z| z.beamformer),
            _ => hybrid_for_analog(p, ch, &qos, s2, eta, TWO_STAGE).map(|(bf, _)| bf),
        };
        match design {
            Ok(bf) => MetricsRecord::evaluate(g, sc.seed, a.label(), &bf, ch, &qos, s2, eta),
            Err(e) => design_failure(g, sc.seed, a.label(), &e),
        }
    });
    sort_metrics(&mut metrics);
    Ok(ExperimentOutput { metrics, ..Default::default() })
}

fn re_region(cfg: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    let draws = draws(cfg)?;
    let (s2, eta, k) = (cfg.sigma2(), cfg.eta(), cfg.system.num_ids);
    let algs: Vec<Algorithm> =
        cfg.algorithms.iter().cloned().filter(|a| matches!(a, Algorithm::Ptl | Algorithm::TwoStage)).collect();
    if algs.is_empty() {
        return Err(HarnessError::Config("re_region compares ptl and two-stage".into()));
    }
    let tasks = grid_tasks(&cfg.rate_grid_bps_hz, draws.len(), &algs);
    let mut metrics = run_pool(&tasks, |&(g, d, a)| {
        let (sc, ch) = &draws[d];
        let rates = vec![g; k];
        let label = a.label();
        let result = match a {
            Algorithm::Ptl => run_ptl_maxmin_energy(ch, &rates, cfg.budget_w, s2, eta, &cfg.ptl_config(sc.seed))
                .map(|(bf, _, _)| bf)
                .map_err(|e| ptl_failure(g, sc.seed, &e)),
            _ => analog_alignment(sc, &cfg.system)
                .and_then(|p| {
                    let eff = EffectiveChannels::from_analog(ch, &p);
                    let (beams, _) = max_min_energy(&eff, &rates, cfg.budget_w, s2, eta)?;
                    Ok(HybridBeamformer::new(p, &beams.w, beams.v_list, TWO_STAGE))
                })
                .map_err(|e| design_failure(g, sc.seed, label, &e)),
        };
        match result {
            Ok(bf) => {
                let qos = QosSpec { rate_targets_bps_hz: rates.clone(), energy_targets_w: vec![0.0; ch.h_eh.len()] };
                MetricsRecord::evaluate(g, sc.seed, label, &bf, ch, &qos, s2, eta)
            }
            Err(rec) => rec,
        }
    });
    sort_metrics(&mut metrics);
    let mut out = ExperimentOutput { metrics, ..Default::default() };
    out.frontier = out
        .medians(|r| (r.status == RunStatus::Ok).then(|| r.min_harvested()))
        .into_iter()
        .map(|(g, a, v)| FrontierPoint { algorithm: a, rate_bps_hz: g, min_harvested_w: v })
        .collect();
    Ok(out)
}

/// Label of the far-field design in spectrum outputs.
pub const FAR_FIELD: &str = "far-field";

/// Two-stage design built from planar-wave channels and a planar-wave alignment precoder.
pub fn far_field_design(
    scenario: &Scenario,
    qos: &QosSpec,
    sigma2: f64,
    eta: f64,
    config: &SystemConfig,
) -> Result<HybridBeamformer, DesignError> {
    let planar = assemble_far_field_channels(scenario, config)?;
    let p = analog_alignment_far_field(scenario, config)?;
    Ok(hybrid_for_analog(p, &planar, qos, sigma2, eta, FAR_FIELD)?.0)
}

/// Near-field and far-field designs for every seed, both evaluated on the near-field
/// channels; spectra are drawn for the first seed.
fn spectrum_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    let draws = draws(cfg)?;
    let qos = cfg.qos(cfg.rate_bps_hz, cfg.energy_w);
    let (s2, eta) = (cfg.sigma2(), cfg.eta());
    let near_alg = cfg.algorithms[0];
    let tasks: Vec<(usize, bool)> = (0..draws.len()).flat_map(|d| [(d, false), (d, true)]).collect();
    let results = run_pool(&tasks, |&(d, far)| {
        let (sc, ch) = &draws[d];
        let g = cfg.rate_bps_hz;
        if far {
            match far_field_design(sc, &qos, s2, eta, &cfg.system) {
                Ok(bf) => (MetricsRecord::evaluate(g, sc.seed, FAR_FIELD, &bf, ch, &qos, s2, eta), Some(bf)),
                Err(e) => (design_failure(g, sc.seed, FAR_FIELD, &e), None),
            }
        } else {
            let (s2, eta, sys) = (cfg.sigma2(), cfg.eta(), &cfg.system);
            let design = match near_alg {
                Algorithm::Ptl => run_ptl(ch, &qos, s2, eta, &cfg.ptl_config(sc.seed)).map(|r| r.beamformer).map_err(|e| e.to_string()),
                Algorithm::FullyDigital => fully_digital_design(ch, &qos, s2, eta).map_err(|e| e.to_string()),
                Algorithm::TwoStageZf => two_stage_zf_design(sc, ch, &qos, s2, eta, sys, true).map_err(|e| e.to_string()),
                Algorithm::TwoStageIea => two_stage_iea_design(sc, ch, &qos, s2, eta, sys).map_err(|e| e.to_string()),
                Algorithm::TwoStage => two_stage_design(sc, ch, &qos, s2, eta, sys).map_err(|e| e.to_string()),
            };
            match design {
                Ok(bf) => (MetricsRecord::evaluate(g, sc.seed, near_alg.label(), &bf, ch, &qos, s2, eta), Some(bf)),
                Err(m) => (MetricsRecord::failure(g, sc.seed, near_alg.label(), false, m), None),
            }
        }
    });
    let mut spectra = Vec::new();
    for ((d, _), (_, bf)) in tasks.iter().zip(&results) {
        if *d == 0 {
            if let Some(bf) = bf {
                spectra.push(spectrum(bf, &cfg.grid, &cfg.system)?);
            }
        }
    }
    let mut metrics: Vec<MetricsRecord> = results.into_iter().map(|(m, _)| m).collect();
    sort_metrics(&mut metrics);
    Ok(ExperimentOutput { metrics, spectra, ..Default::default() })
}

/// Runs the experiment in memory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    cfg.validate()?;
    match cfg.kind {
        ExperimentKind::Convergence => convergence(cfg),
        ExperimentKind::SweepQos => sweep(cfg, &cfg.rate_grid_bps_hz, |g| cfg.qos(g, cfg.energy_w)),
        ExperimentKind::SweepEnergy => sweep(cfg, &cfg.energy_grid_w, |g| cfg.qos(cfg.rate_bps_hz, g)),
        ExperimentKind::EnergyBeamPower => energy_beam_power(cfg),
        ExperimentKind::ReRegion => re_region(cfg),
        ExperimentKind::Spectrum => spectrum_experiment(cfg),
    }
}

fn fmt(v: f64) -> String {
    if v.is_finite() {
        // Adding zero turns -0 into 0.
        format!("{:e}", v + 0.0)
    } else {
        String::new()
    }
}

/// Metrics CSV: `grid_value,seed,algorithm,status,feasible,tx_power_w,info_power_w,
/// energy_power_w,rate_1..rate_K,harvested_1..harvested_L,message`.
pub fn write_metrics_csv<W: std::io::Write>(rows: &[MetricsRecord], num_ids: usize, num_ehs: usize, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["grid_value", "seed", "algorithm", "status", "feasible", "tx_power_w", "info_power_w", "energy_power_w"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((1..=num_ids).map(|k| format!("rate_{k}")));
    header.extend((1..=num_ehs).map(|l| format!("harvested_{l}")));
    header.push("message".into());
    w.write_record(&header)?;
    for r in rows {
        let status = match r.status {
            RunStatus::Ok => "ok",
            RunStatus::Infeasible => "infeasible",
            RunStatus::Failed => "failed",
        };
        let mut rec = vec![
            fmt(r.grid_value),
            r.seed.to_string(),
            r.algorithm.clone(),
            status.to_string(),
            r.feasible.to_string(),
            fmt(r.tx_power_w),
            fmt(r.info_power_w),
            fmt(r.energy_power_w),
        ];
        rec.extend((0..num_ids).map(|k| r.rates_bps_hz.get(k).map_or(String::new(), |v| fmt(*v))));
        rec.extend((0..num_ehs).map(|l| r.harvested_w.get(l).map_or(String::new(), |v| fmt(*v))));
        rec.push(r.message.clone());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    experiment: &'a str,
    version: &'a str,
    config: &'a ExperimentConfig,
    seeds: &'a [u64],
    files: Vec<String>,
    rows: usize,
    feasible_rows: usize,
    medians: Vec<MedianRow>,
    wall_time_s: f64,
}

#[derive(Debug, Serialize)]
struct MedianRow {
    grid_value: f64,
    algorithm: String,
    median_tx_power_w: Option<f64>,
}

/// Writes `<kind>.csv` (plus the trace, spectrum or frontier file of the experiment)
/// and `<kind>_manifest.json` into `dir`; returns the paths written.
pub fn write_outputs(
    cfg: &ExperimentConfig,
    out: &ExperimentOutput,
    dir: &Path,
    wall_time_s: f64,
) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir)?;
    let name = cfg.kind.name();
    let mut files = Vec::new();
    let metrics_path = dir.join(format!("{name}.csv"));
    write_metrics_csv(&out.metrics, cfg.system.num_ids, cfg.system.num_ehs, fs::File::create(&metrics_path)?)?;
    files.push(metrics_path);

    if !out.traces.is_empty() {
        let path = dir.join(format!("{name}_trace.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["seed", "outer_iter", "inner_iter", "objective", "penalty_residual", "tx_power_w", "rho"])?;
        for t in &out.traces {
            for r in &t.rows {
                w.write_record([
                    t.seed.to_string(),
                    r.outer_iter.to_string(),
                    r.inner_iter.to_string(),
                    fmt(r.objective),
                    fmt(r.penalty_residual),
                    fmt(r.tx_power_w),
                    fmt(r.rho),
                ])?;
            }
        }
        w.flush()?;
        files.push(path);
    }
    if !out.spectra.is_empty() {
        let path = dir.join(format!("{name}_grid.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["design", "x_m", "y_m", "normalized_power"])?;
        for s in &out.spectra {
            for (iy, y) in s.ys.iter().enumerate() {
                for (ix, x) in s.xs.iter().enumerate() {
                    w.write_record([s.label.clone(), fmt(*x), fmt(*y), fmt(s.values[iy][ix])])?;
                }
            }
        }
        w.flush()?;
        files.push(path);
    }
    if !out.frontier.is_empty() {
        let path = dir.join(format!("{name}_frontier.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["algorithm", "rate_bps_hz", "median_min_harvested_w"])?;
        for p in &out.frontier {
            w.write_record([p.algorithm.clone(), fmt(p.rate_bps_hz), p.min_harvested_w.map_or(String::new(), fmt)])?;
        }
        w.flush()?;
        files.push(path);
    }

    let manifest_path = dir.join(format!("{name}_manifest.json"));
    let manifest = Manifest {
        experiment: name,
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        seeds: &cfg.seeds,
        files: files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect(),
        rows: out.metrics.len(),
        feasible_rows: out.metrics.iter().filter(|r| r.feasible).count(),
        medians: out
            .median_power()
            .into_iter()
            .map(|(g, a, m)| MedianRow { grid_value: g, algorithm: a, median_tx_power_w: m })
            .collect(),
        wall_time_s,
    };
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    files.push(manifest_path);
    Ok(files)
}

/// Runs the experiment and writes its files into `cfg.out_dir`.
pub fn run_and_write(cfg: &ExperimentConfig) -> Result<(ExperimentOutput, Vec<PathBuf>), HarnessError> {
    let start = Instant::now();
    let out = run_experiment(cfg)?;
    let files = write_outputs(cfg, &out, &cfg.out_dir, start.elapsed().as_secs_f64())?;
    Ok((out, files))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::array_response;
    use crate::cplx::{c, cr};
    use crate::CMatrix;

    fn one_beam(h: &CVector, amp: f64) -> HybridBeamformer {
        let m = h.len();
        HybridBeamformer::new(CMatrix::identity(m, m), &[h / cr(h.norm()) * cr(amp)], vec![], "test")
    }

    #[test]
    fn rate_is_one_bit_at_unit_snr() {
        let h = CVector::from_vec(vec![c(0.3, 0.4), c(0.0, 0.0)]);
        let sigma2 = 0.01;
        // |h^H w|^2 = |h|^2 amp^2 = sigma2.
        let bf = one_beam(&h, (sigma2 / h.norm_squared()).sqrt());
        let ch = ChannelSet { h_id: vec![h], h_eh: vec![] };
        assert!((rate_of(&bf, &ch, sigma2)[0] - 1.0).abs() < 1e-12);
        let zero = HybridBeamformer::new(CMatrix::identity(2, 2), &[CVector::zeros(2)], vec![], "zero");
        assert_eq!(rate_of(&zero, &ch, sigma2)[0], 0.0);
    }

    #[test]
    fn rate_matches_a_scalar_evaluation() {
        let h1 = CVector::from_vec(vec![c(1.0, 0.2), c(-0.3, 0.5)]);
        let h2 = CVector::from_vec(vec![c(0.1, -0.4), c(0.8, 0.0)]);
        let w1 = CVector::from_vec(vec![c(0.5, 0.1), c(0.2, 0.0)]);
        let w2 = CVector::from_vec(vec![c(-0.1, 0.3), c(0.6, -0.2)]);
        let v = CVector::from_vec(vec![c(0.05, 0.0), c(0.0, 0.05)]);
        let bf = HybridBeamformer::new(CMatrix::identity(2, 2), &[w1.clone(), w2.clone()], vec![v.clone()], "x");
        let ch = ChannelSet { h_id: vec![h1.clone(), h2.clone()], h_eh: vec![] };
        let sigma2 = 0.02;
        // Written out term by term with explicit conjugates.
        let ip = |a: &CVector, b: &CVector| -> f64 {
            let z = a[0].conj() * b[0] + a[1].conj() * b[1];
            z.re * z.re + z.im * z.im
        };
        let r1 = (1.0 + ip(&h1, &w1) / (ip(&h1, &w2) + ip(&h1, &v) + sigma2)).log2();
        let r2 = (1.0 + ip(&h2, &w2) / (ip(&h2, &w1) + ip(&h2, &v) + sigma2)).log2();
        let got = rate_of(&bf, &ch, sigma2);
        assert!((got[0] - r1).abs() < 1e-12 && (got[1] - r2).abs() < 1e-12);
    }

    #[test]
    fn harvested_scales_with_efficiency() {
        let g = CVector::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0)]);
        // Bracket of 40 mW.
        let bf = one_beam(&g, 0.04f64.sqrt());
        let ch = ChannelSet { h_id: vec![], h_eh: vec![g] };
        assert!((harvested_of(&bf, &ch, 0.5)[0] - 0.02).abs() < 1e-15);
        assert!((harvested_of(&bf, &ch, 1.0)[0] - 0.04).abs() < 1e-15);
        let none = HybridBeamformer::new(CMatrix::identity(2, 2), &[], vec![], "none");
        assert_eq!(harvested_of(&none, &ch, 0.5)[0], 0.0);
    }

    #[test]
    fn spectrum_peaks_at_the_focused_cell() {
        let sys = SystemConfig { num_antennas: 128, num_rf_chains: 8, ..Default::default() };
        let grid = GridSpec { x_min_m: 2.0, x_max_m: 8.0, y_min_m: -3.0, y_max_m: 3.0, nx: 31, ny: 31 };
        let target = PolarPoint::from_cartesian(grid.xs()[17], grid.ys()[9]);
        let bf = one_beam(&array_response(&target, &sys), 1.0);
        let s = spectrum(&bf, &grid, &sys).unwrap();
        assert_eq!(s.values[9][17], 1.0);
        assert_eq!(s.max_value(), 1.0);
        assert!(s.has_peak_near(target.cartesian(), 1e-9));
        let empty = GridSpec { nx: 0, ..grid };
        assert!(spectrum(&bf, &empty, &sys).is_err());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[f64::NAN]), None);
    }

    #[test]
    fn json_overrides_merge_into_kind_defaults() {
        let cfg = config_from_json(ExperimentKind::Spectrum, r#"{"system": {"num_antennas": 32}, "seeds": [4, 5]}"#).unwrap();
        assert_eq!(cfg.system.num_antennas, 32);
        assert_eq!(cfg.system.num_rf_chains, 8);
        assert_eq!(cfg.seeds, vec![4, 5]);
        assert_eq!(cfg.rate_bps_hz, 3.0);
        assert!(config_from_json(ExperimentKind::Spectrum, r#"{"bogus": 1}"#).is_err());
        assert!(config_from_json(ExperimentKind::Spectrum, r#"{"kind": "sweep_qos"}"#).is_err());
        let dup = ExperimentConfig { seeds: vec![1, 1], ..ExperimentConfig::for_kind(ExperimentKind::SweepQos) };
        assert!(matches!(dup.validate(), Err(HarnessError::Config(_))));
        let empty = ExperimentConfig { rate_grid_bps_hz: vec![], ..ExperimentConfig::for_kind(ExperimentKind::SweepQos) };
        assert!(matches!(run_experiment(&empty), Err(HarnessError::Config(_))));
    }

    #[test]
    fn algorithm_labels_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.label().parse::<Algorithm>().unwrap(), a);
            assert_eq!(serde_json::to_string(&a).unwrap(), format!("\"{}\"", a.label()));
        }
        assert!("nope".parse::<Algorithm>().is_err());
    }

    fn tiny(kind: ExperimentKind) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::for_kind(kind);
        cfg.system.num_antennas = 16;
        cfg.system.num_rf_chains = 6;
        cfg.seeds = vec![0, 1];
        cfg.rate_grid_bps_hz = vec![1.0, 2.0];
        cfg.energy_grid_w = vec![1e-4];
        cfg.energy_w = 1e-4;
        cfg.grid = GridSpec { nx: 12, ny: 10, ..GridSpec::default() };
        cfg
    }

    #[test]
    fn rerun_writes_identical_csv() {
        let dir = std::env::temp_dir().join(format!("nfswipt-harness-{}", std::process::id()));
        let cfg = ExperimentConfig {
            algorithms: vec![Algorithm::TwoStage, Algorithm::TwoStageZf, Algorithm::FullyDigital],
            out_dir: dir.clone(),
            ..tiny(ExperimentKind::SweepQos)
        };
        let (first, files) = run_and_write(&cfg).unwrap();
        let a = fs::read(&files[0]).unwrap();
        let (_, again) = run_and_write(&cfg).unwrap();
        assert_eq!(a, fs::read(&again[0]).unwrap());
        assert_eq!(first.metrics.len(), 2 * 2 * 3);
        // Rows sorted by grid value, seed, then label.
        let keys: Vec<(f64, u64, String)> = first.metrics.iter().map(|r| (r.grid_value, r.seed, r.algorithm.clone())).collect();
        let mut sorted = keys.clone();
        sorted.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        assert_eq!(keys, sorted);
        let text = String::from_utf8(a).unwrap();
        assert_eq!(text.lines().count(), 13);
        let manifest: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("sweep_qos_manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["rows"], 12);
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn feasible_rows_meet_their_targets() {
        let cfg = ExperimentConfig { algorithms: Algorithm::ALL.to_vec(), ..tiny(ExperimentKind::SweepQos) };
        let out = run_experiment(&cfg).unwrap();
        for r in out.metrics.iter().filter(|r| r.feasible) {
            assert!(r.rates_bps_hz.iter().all(|c| *c >= r.grid_value * (1.0 - QOS_SLACK)));
            assert!(r.harvested_w.iter().all(|q| *q >= cfg.energy_w * (1.0 - QOS_SLACK)));
        }
        assert!(out.metrics.iter().all(|r| r.feasible), "{:?}", out.metrics);
    }

    #[test]
    fn infeasible_points_are_recorded_not_fatal() {
        let cfg = ExperimentConfig { rate_grid_bps_hz: vec![1.0, 60.0], algorithms: vec![Algorithm::TwoStage], ..tiny(ExperimentKind::SweepQos) };
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.metrics.len(), 4);
        assert!(out.metrics.iter().filter(|r| r.grid_value == 60.0).all(|r| r.status != RunStatus::Ok && !r.feasible));
        assert!(!out.all_infeasible());
    }

    #[test]
    fn every_experiment_runs_at_tiny_scale() {
        for kind in [ExperimentKind::Convergence, ExperimentKind::EnergyBeamPower, ExperimentKind::ReRegion, ExperimentKind::Spectrum] {
            let out = run_experiment(&tiny(kind)).unwrap();
            assert!(!out.metrics.is_empty(), "{kind:?}");
            match kind {
                ExperimentKind::Convergence => assert_eq!(out.traces.len(), 2),
                ExperimentKind::ReRegion => assert_eq!(out.frontier.len(), 4),
                ExperimentKind::Spectrum => {
                    assert_eq!(out.spectra.len(), 2);
                    assert!(out.spectra.iter().all(|s| s.max_value() == 1.0));
                }
                _ => {}
            }
        }
    }
}
