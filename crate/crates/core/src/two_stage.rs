//! Alignment-based two-stage hybrid design and the comparison schemes: fully digital,
//! zero-forcing with power allocation, and information-energy alignment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{array_response, planar_response, ChannelError, ChannelSet, PolarPoint, Scenario, SystemConfig};
use crate::cplx::{self, cr, expj, outer, quad, CMatrix, CVector};
use crate::digital_sdr::{
    design_digital, eigen_beams, global_scale, reduced_basis, DigitalDesign, EffectiveChannels, QosSpec, SdrError,
    RANK_TOL,
};
use crate::sdp::{HermitianProgram, Row};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Sdr(#[from] SdrError),
    #[error("effective ID channel matrix is rank deficient")]
    RankDeficient,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl DesignError {
    pub fn is_infeasible(&self) -> bool {
        matches!(self, DesignError::Sdr(SdrError::Infeasible))
    }
}

pub const FULLY_DIGITAL: &str = "fully-digital";
pub const TWO_STAGE: &str = "two-stage";
pub const TWO_STAGE_ZF: &str = "two-stage-zf";
pub const TWO_STAGE_IEA: &str = "two-stage-iea";
pub const PTL: &str = "ptl";

/// Analog precoder `P` (antennas x RF chains), digital information beams as the
/// columns of `digital`, and optional dedicated energy beams in the RF-chain domain.
///
/// The fully-digital scheme is stored with `P = I`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HybridBeamformer {
    #[serde(with = "cplx::matrix")]
    pub analog: CMatrix,
    #[serde(with = "cplx::matrix")]
    pub digital: CMatrix,
    #[serde(with = "cplx::vector_vec")]
    pub energy_beams: Vec<CVector>,
    pub label: String,
}

impl HybridBeamformer {
    pub fn new(analog: CMatrix, w: &[CVector], energy_beams: Vec<CVector>, label: &str) -> Self {
        let digital = cplx::from_columns(w, analog.ncols());
        HybridBeamformer { analog, digital, energy_beams, label: label.to_string() }
    }

    /// Antenna-domain information beams `P w_k`.
    pub fn info_beams(&self) -> Vec<CVector> {
        (0..self.digital.ncols()).map(|k| &self.analog * self.digital.column(k)).collect()
    }

    pub fn energy_beams_antenna(&self) -> Vec<CVector> {
        self.energy_beams.iter().map(|v| &self.analog * v).collect()
    }

    pub fn info_power(&self) -> f64 {
        self.info_beams().iter().map(|x| x.norm_squared()).sum()
    }

    pub fn energy_power(&self) -> f64 {
        self.energy_beams_antenna().iter().map(|x| x.norm_squared()).sum()
    }

    pub fn tx_power(&self) -> f64 {
        self.info_power() + self.energy_power()
    }

    /// Largest deviation of `|P_ij|` from one.
    pub fn modulus_error(&self) -> f64 {
        self.analog.iter().map(|z| (z.norm() - 1.0).abs()).fold(0.0, f64::max)
    }
}

fn unit_modulus_column(c: &CVector) -> CVector {
    c.map(|z| if z.norm() > 0.0 { z / cr(z.norm()) } else { cr(1.0) })
}

fn aligned_analog(
    scenario: &Scenario,
    config: &SystemConfig,
    response: &dyn Fn(&PolarPoint) -> CVector,
    include_ids_in_sum: bool,
) -> Result<CMatrix, DesignError> {
    scenario.check(config)?;
    let (k, l, mrf) = (scenario.ids.len(), scenario.ehs.len(), config.num_rf_chains);
    if k + l > mrf {
        return Err(DesignError::InvalidInput("K + L exceeds the RF chains".into()));
    }
    let m = config.num_antennas;
    let mut p = CMatrix::zeros(m, mrf);
    let mut sum = CVector::zeros(m);
    for (j, u) in scenario.ids.iter().enumerate() {
        let a = response(u);
        if include_ids_in_sum {
            sum += &a;
        }
        p.set_column(j, &a);
    }
    for (j, u) in scenario.ehs.iter().enumerate() {
        let b = response(u);
        sum += &b;
        p.set_column(k + j, &b);
    }
    let tail = unit_modulus_column(&sum);
    for j in k + l..mrf {
        p.set_column(j, &tail);
    }
    Ok(p)
}

/// Columns aimed at each ID and EH location, remaining columns at the normalized sum of
/// the EH responses.
pub fn analog_alignment(scenario: &Scenario, config: &SystemConfig) -> Result<CMatrix, DesignError> {
    aligned_analog(scenario, config, &|p| array_response(p, config), false)
}

/// Like [`analog_alignment`], with the trailing columns aimed at all users.
pub fn analog_iea(scenario: &Scenario, config: &SystemConfig) -> Result<CMatrix, DesignError> {
    aligned_analog(scenario, config, &|p| array_response(p, config), true)
}

/// Alignment built from planar-wave steering vectors (angle only).
pub fn analog_alignment_far_field(scenario: &Scenario, config: &SystemConfig) -> Result<CMatrix, DesignError> {
    aligned_analog(scenario, config, &|p| planar_response(p.angle_rad, config), false)
}

/// Unit-modulus precoder with independent uniform phases.
pub fn random_analog(num_antennas: usize, num_rf_chains: usize, seed: u64) -> CMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CMatrix::from_fn(num_antennas, num_rf_chains, |_, _| expj(rng.gen_range(0.0..std::f64::consts::TAU)))
}

/// Optimal digital stage for a given analog precoder.
pub fn hybrid_for_analog(
    analog: CMatrix,
    channels: &ChannelSet,
    qos: &QosSpec,
    sigma2: f64,
    eta: f64,
    label: &str,
) -> Result<(HybridBeamformer, DigitalDesign), DesignError> {
    let eff = EffectiveChannels::from_analog(channels, &analog);
    let design = design_digital(&eff, qos, sigma2, eta)?;
    let bf = HybridBeamformer::new(analog, &design.beamformers.w, design.beamformers.v_list.clone(), label);
    Ok((bf, design))
}

pub fn two_stage_design(
    scenario: &Scenario,
    channels: &ChannelSet,
    qos: &QosSpec,
    sigma2: f64,
    eta: f64,
    config: &SystemConfig,
) -> Result<HybridBeamformer, DesignError> {
    let p = analog_alignment(scenario, config)?;
    Ok(hybrid_for_analog(p, channels, qos, sigma2, eta, TWO_STAGE)?.0)
}

pub fn two_stage_iea_design(
    scenario: &Scenario,
    channels: &ChannelSet,
    qos: &QosSpec,
    sigma2: f64,
    eta: f64,
    config: &SystemConfig,
) -> Result<HybridBeamformer, DesignError> {
    let p = analog_iea(scenario, config)?;
    Ok(hybrid_for_analog(p, channels, qos, sigma2, eta, TWO_STAGE_IEA)?.0)
}

/// One RF chain per antenna; the covariance program is solved in the span of the
/// channels, so any array size is tractable.
pub fn fully_digital_design(channels: &ChannelSet, qos: &QosSpec, sigma2: f64, eta: f64) -> Result<HybridBeamformer, DesignError> {
    let m = channels.num_antennas();
    Ok(hybrid_for_analog(CMatrix::identity(m, m), channels, qos, sigma2, eta, FULLY_DIGITAL)?.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerAllocation {
    /// Received signal power per ID (the squared diagonal of the ZF gain matrix).
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ZfDesign {
    pub beamformer: HybridBeamformer,
    pub allocation: PowerAllocation,
}

/// Zero-forcing information beams `P^H H (H^H P P^H H)^{-1}` with optimized per-ID
/// powers; optionally a dedicated energy covariance on the RF chains after the first K.
pub fn two_stage_zf_with_analog(
    analog: CMatrix,
    channels: &ChannelSet,
    qos: &QosSpec,
    sigma2: f64,
    eta: f64,
    allow_energy_beams: bool,
) -> Result<ZfDesign, DesignError> {
    let eff = EffectiveChannels::from_analog(channels, &analog);
    let (k, l, mrf) = (eff.num_ids(), eff.num_ehs(), eff.dim());
    qos.validate(k, l)?;
    if k == 0 {
        return Err(DesignError::InvalidInput("zero-forcing needs at least one ID".into()));
    }
    let hbar = cplx::from_columns(&eff.id, mrf);
    let g = hbar.adjoint() * &hbar;
    let (gv, _) = cplx::herm_eig(&g);
    if !(gv[k - 1] > 1e-12 * gv[0]) {
        return Err(DesignError::RankDeficient);
    }
    let ginv = g.try_inverse().ok_or(DesignError::RankDeficient)?;
    let wt = &hbar * ginv;
    let wcols = cplx::columns(&wt);
    let gam = qos.sinr_targets();
    let cost: Vec<f64> = wcols.iter().map(|w| quad(&eff.gram, w)).collect();

    // Energy covariance lives on the trailing RF chains, reduced to the channel span.
    let tail = mrf - k;
    let basis = if allow_energy_beams && tail > 0 {
        let sel = |h: &CVector| h.rows(k, tail).into_owned();
        let sub = EffectiveChannels {
            id: eff.id.iter().map(sel).collect(),
            eh: eff.eh.iter().map(sel).collect(),
            gram: eff.gram.view((k, k), (tail, tail)).into_owned(),
        };
        let t = reduced_basis(&sub);
        let mut full = CMatrix::zeros(mrf, t.ncols());
        full.view_mut((k, 0), (tail, t.ncols())).copy_from(&t);
        Some(full)
    } else {
        None
    };
    let q = basis.as_ref().map_or(0, |t| t.ncols());
    let proj = |h: &CVector| -> CMatrix { outer(&(basis.as_ref().unwrap().adjoint() * h)) };

    let mut rows = Vec::new();
    for kk in 0..k {
        let mut row = Row { scalars: vec![(kk, 1.0)], rhs: gam[kk] * sigma2, ..Default::default() };
        if q > 0 {
            row.blocks.push((0, proj(&eff.id[kk]) * cr(-gam[kk])));
        }
        rows.push(row);
    }
    for (ll, gl) in eff.eh.iter().enumerate() {
        let scalars = wcols.iter().enumerate().map(|(i, w)| (i, gl.dotc(w).norm_sqr())).collect();
        let mut row = Row { scalars, rhs: qos.energy_targets_w[ll] / eta, ..Default::default() };
        if q > 0 {
            row.blocks.push((0, proj(gl)));
        }
        rows.push(row);
    }
    let program = HermitianProgram {
        block_dims: if q > 0 { vec![q] } else { vec![] },
        num_scalars: k,
        objective_blocks: if q > 0 { vec![Some(CMatrix::identity(q, q))] } else { vec![] },
        objective_scalars: cost,
        rows,
    };
    let sol = program.solve(1e-9).map_err(SdrError::from)?;
    let lambda: Vec<f64> = sol.scalars.iter().map(|v| v.max(0.0)).collect();
    let w: Vec<CVector> = wcols.iter().zip(&lambda).map(|(w, lam)| w * cr(lam.sqrt())).collect();
    let energy_beams = match &basis {
        Some(t) if q > 0 => {
            let v = cplx::hermitian_part(&(t * &sol.blocks[0] * t.adjoint()));
            let info: Vec<CMatrix> = w.iter().map(outer).collect();
            let mut all: Vec<&CMatrix> = info.iter().collect();
            all.push(&v);
            eigen_beams(&v, RANK_TOL * global_scale(&all))
        }
        _ => vec![],
    };
    Ok(ZfDesign {
        beamformer: HybridBeamformer::new(analog, &w, energy_beams, TWO_STAGE_ZF),
        allocation: PowerAllocation { lambda },
    })
}

pub fn two_stage_zf_design(
    scenario: &Scenario,
    channels: &ChannelSet,
    qos: &QosSpec,
    sigma2: f64,
    eta: f64,
    config: &SystemConfig,
    allow_energy_beams: bool,
) -> Result<HybridBeamformer, DesignError> {
    let p = analog_alignment(scenario, config)?;
    Ok(two_stage_zf_with_analog(p, channels, qos, sigma2, eta, allow_energy_beams)?.beamformer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{assemble_channels, sample_scenario};
    use crate::cplx::gain;

    fn small_config(m: usize, mrf: usize) -> SystemConfig {
        SystemConfig { num_antennas: m, num_rf_chains: mrf, ..Default::default() }
    }

    fn sized(m: usize, mrf: usize, k: usize, l: usize) -> SystemConfig {
        SystemConfig { num_ids: k, num_ehs: l, ..small_config(m, mrf) }
    }

    fn user(d: f64, deg: f64) -> PolarPoint {
        PolarPoint::new(d, deg.to_radians())
    }

    #[test]
    fn single_id_single_chain_is_its_response() {
        let cfg = sized(16, 1, 1, 0);
        let sc = Scenario::line_of_sight(vec![user(6.0, 10.0)], vec![], &cfg);
        let p = analog_alignment(&sc, &cfg).unwrap();
        assert!((p.column(0) - array_response(&sc.ids[0], &cfg)).norm() < 1e-15);
    }

    #[test]
    fn single_eh_sum_column_is_its_response() {
        let cfg = sized(16, 4, 1, 1);
        let sc = Scenario::line_of_sight(vec![user(6.0, 10.0)], vec![user(4.0, -20.0)], &cfg);
        let p = analog_alignment(&sc, &cfg).unwrap();
        let b = array_response(&sc.ehs[0], &cfg);
        for j in 1..4 {
            assert!((p.column(j) - &b).norm() < 1e-12, "column {j}");
        }
    }

    #[test]
    fn trailing_columns_repeat_and_are_unit_modulus() {
        let cfg = small_config(64, 8);
        let sc = sample_scenario(&cfg, 20.0, 20.0, 30.0, 3).unwrap();
        for p in [analog_alignment(&sc, &cfg).unwrap(), analog_iea(&sc, &cfg).unwrap()] {
            assert_eq!(p.column(6), p.column(7));
            assert!(p.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        }
        let a = analog_alignment(&sc, &cfg).unwrap();
        let i = analog_iea(&sc, &cfg).unwrap();
        assert_eq!(a.columns(0, 6), i.columns(0, 6));
        assert!((a.column(7) - i.column(7)).norm() > 1e-3);
    }

    #[test]
    fn iea_without_ids_matches_alignment() {
        let cfg = sized(16, 4, 0, 2);
        let sc = Scenario::line_of_sight(vec![], vec![user(4.0, -20.0), user(7.0, 30.0)], &cfg);
        assert_eq!(analog_alignment(&sc, &cfg).unwrap(), analog_iea(&sc, &cfg).unwrap());
    }

    #[test]
    fn too_many_users_for_the_chains() {
        let cfg = sized(16, 1, 1, 1);
        let sc = Scenario::line_of_sight(vec![user(6.0, 10.0)], vec![user(4.0, -20.0)], &cfg);
        assert!(matches!(analog_alignment(&sc, &cfg), Err(DesignError::InvalidInput(_))));
    }

    #[test]
    fn random_analog_is_seeded_and_unit_modulus() {
        let a = random_analog(8, 3, 11);
        assert_eq!(a, random_analog(8, 3, 11));
        assert_ne!(a, random_analog(8, 3, 12));
        assert!(a.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn fully_digital_single_user_is_mrt() {
        let cfg = sized(16, 16, 1, 0);
        let sc = Scenario::line_of_sight(vec![user(5.0, 15.0)], vec![], &cfg);
        let ch = assemble_channels(&sc, &cfg).unwrap();
        let qos = QosSpec { rate_targets_bps_hz: vec![2.0], energy_targets_w: vec![] };
        let sigma2 = cfg.noise_power_w;
        let bf = fully_digital_design(&ch, &qos, sigma2, 0.5).unwrap();
        let h = &ch.h_id[0];
        let expected = 3.0 * sigma2 / h.norm_squared();
        assert!((bf.tx_power() - expected).abs() <= 1e-6 * expected);
        let w = &bf.info_beams()[0];
        assert!(gain(h, w) / (h.norm_squared() * w.norm_squared()) > 1.0 - 1e-9);
        assert!(bf.energy_beams.is_empty());
    }

    #[test]
    fn two_stage_is_feasible_and_never_beats_fully_digital() {
        let cfg = small_config(32, 8);
        let sc = sample_scenario(&cfg, 10.0, 10.0, 15.0, 1).unwrap();
        let ch = assemble_channels(&sc, &cfg).unwrap();
        let qos = QosSpec::uniform(3, 3, 1.0, 1e-3);
        let (s2, eta) = (cfg.noise_power_w, cfg.harvesting_efficiency);
        let ts = two_stage_design(&sc, &ch, &qos, s2, eta, &cfg).unwrap();
        let fd = fully_digital_design(&ch, &qos, s2, eta).unwrap();
        assert!(ts.energy_beams.is_empty());
        assert!(ts.modulus_error() < 1e-12);
        assert!(fd.tx_power() <= ts.tx_power() * (1.0 + 1e-6));
        let eff = EffectiveChannels::from_analog(&ch, &ts.analog);
        let w: Vec<CMatrix> = ts.digital.column_iter().map(|c| outer(&c.into_owned())).collect();
        let v = CMatrix::zeros(8, 8);
        assert!(eff.violation(&qos, &w, &v, s2, eta) < 1e-6);
    }

    #[test]
    fn zero_forcing_diagonalizes_the_effective_channel() {
        let cfg = small_config(32, 8);
        let sc = sample_scenario(&cfg, 10.0, 10.0, 15.0, 2).unwrap();
        let ch = assemble_channels(&sc, &cfg).unwrap();
        let qos = QosSpec::uniform(3, 3, 2.0, 1e-3);
        let (s2, eta) = (cfg.noise_power_w, cfg.harvesting_efficiency);
        for energy in [false, true] {
            let zf = two_stage_zf_design(&sc, &ch, &qos, s2, eta, &cfg, energy).unwrap();
            let beams = zf.info_beams();
            let mut diag: f64 = 0.0;
            let mut off: f64 = 0.0;
            for (k, h) in ch.h_id.iter().enumerate() {
                for (i, w) in beams.iter().enumerate() {
                    let g = h.dotc(w).norm();
                    if i == k {
                        diag = diag.max(g);
                    } else {
                        off = off.max(g);
                    }
                }
            }
            assert!(off <= 1e-8 * diag, "energy {energy}: {off:e} vs {diag:e}");
            if !energy {
                assert!(zf.energy_beams.is_empty());
            }
        }
    }

    #[test]
    fn zero_forcing_single_user_is_effective_mrt() {
        let cfg = sized(16, 2, 1, 0);
        let sc = Scenario::line_of_sight(vec![user(5.0, 15.0)], vec![], &cfg);
        let ch = assemble_channels(&sc, &cfg).unwrap();
        let qos = QosSpec { rate_targets_bps_hz: vec![1.0], energy_targets_w: vec![] };
        let p = random_analog(16, 2, 4);
        let zf = two_stage_zf_with_analog(p.clone(), &ch, &qos, cfg.noise_power_w, 0.5, false).unwrap();
        let heff = p.adjoint() * &ch.h_id[0];
        let w = zf.beamformer.digital.column(0).into_owned();
        let cos = heff.dotc(&w).norm() / (heff.norm() * w.norm());
        assert!(cos > 1.0 - 1e-12);
        // SINR lambda / sigma^2 sits exactly on the target.
        assert!((zf.allocation.lambda[0] / cfg.noise_power_w - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_forcing_needs_independent_channels() {
        let cfg = sized(16, 2, 2, 0);
        let u = user(5.0, 15.0);
        let sc = Scenario::line_of_sight(vec![u, u], vec![], &cfg);
        let ch = assemble_channels(&sc, &cfg).unwrap();
        let qos = QosSpec::uniform(2, 0, 1.0, 0.0);
        let r = two_stage_zf_design(&sc, &ch, &qos, cfg.noise_power_w, 0.5, &cfg, false);
        assert_eq!(r.unwrap_err(), DesignError::RankDeficient);
    }

    #[test]
    fn beamformer_json_round_trip() {
        let cfg = sized(8, 2, 1, 0);
        let sc = Scenario::line_of_sight(vec![user(5.0, 15.0)], vec![], &cfg);
        let ch = assemble_channels(&sc, &cfg).unwrap();
        let qos = QosSpec { rate_targets_bps_hz: vec![1.0], energy_targets_w: vec![] };
        let bf = two_stage_design(&sc, &ch, &qos, cfg.noise_power_w, 0.5, &cfg).unwrap();
        let back: HybridBeamformer = serde_json::from_str(&serde_json::to_string(&bf).unwrap()).unwrap();
        assert_eq!(back.analog, bf.analog);
        assert_eq!(back.digital, bf.digital);
        assert_eq!(back.label, TWO_STAGE);
    }
}
