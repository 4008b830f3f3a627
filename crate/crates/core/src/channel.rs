//! Uniform linear array geometry, spherical-wave responses and LoS + scattering channels.
//!
//! The array lies on the y axis centred at the origin; users sit in the half plane
//! `x >= 0` and are described by polar coordinates `(distance, angle)`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cplx::{self, cr, expj, CVector, C64};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("invalid system configuration: {0}")]
    InvalidConfig(String),
    #[error("zero distance gives a singular free-space gain")]
    ZeroDistance,
    #[error("scenario does not match the configuration: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub carrier_frequency_hz: f64,
    /// `None` means half a wavelength.
    pub antenna_spacing_m: Option<f64>,
    pub num_antennas: usize,
    pub num_rf_chains: usize,
    pub num_ids: usize,
    pub num_ehs: usize,
    pub num_clusters: usize,
    pub noise_power_w: f64,
    pub harvesting_efficiency: f64,
    pub tx_gain_db: f64,
    pub rx_gain_db: f64,
    /// Apply the `1/sqrt(C)` scattering normalization to ID channels as well as EH channels.
    pub normalize_id_nlos: bool,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            carrier_frequency_hz: 28e9,
            antenna_spacing_m: None,
            num_antennas: 64,
            num_rf_chains: 8,
            num_ids: 3,
            num_ehs: 3,
            num_clusters: 3,
            noise_power_w: dbm_to_w(-55.0),
            harvesting_efficiency: 0.5,
            tx_gain_db: 0.0,
            rx_gain_db: 0.0,
            normalize_id_nlos: false,
        }
    }
}

pub fn dbm_to_w(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

impl SystemConfig {
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency_hz
    }

    pub fn spacing(&self) -> f64 {
        self.antenna_spacing_m.unwrap_or(0.5 * self.wavelength())
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI * self.carrier_frequency_hz / SPEED_OF_LIGHT
    }

    /// Amplitude factor `sqrt(G_t G_r)`.
    pub fn antenna_gain_amplitude(&self) -> f64 {
        10f64.powf((self.tx_gain_db + self.rx_gain_db) / 20.0)
    }

    /// Free-space amplitude gain `c0 / (4 pi f d)`.
    pub fn free_space_gain(&self, distance: f64) -> f64 {
        SPEED_OF_LIGHT / (4.0 * PI * self.carrier_frequency_hz * distance)
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        let bad = |s: &str| Err(ChannelError::InvalidConfig(s.to_string()));
        if !(self.carrier_frequency_hz.is_finite() && self.carrier_frequency_hz > 0.0) {
            return bad("carrier frequency must be positive");
        }
        if !(self.spacing().is_finite() && self.spacing() > 0.0) {
            return bad("antenna spacing must be positive");
        }
        if self.num_antennas == 0 || self.num_rf_chains == 0 {
            return bad("antenna and RF chain counts must be at least 1");
        }
        if self.num_ids + self.num_ehs == 0 {
            return bad("at least one user is required");
        }
        if self.num_ids + self.num_ehs > self.num_rf_chains {
            return bad("K + L must not exceed the number of RF chains");
        }
        if self.num_rf_chains > self.num_antennas {
            return bad("RF chains must not exceed antennas");
        }
        if !(self.noise_power_w.is_finite() && self.noise_power_w > 0.0) {
            return bad("noise power must be positive");
        }
        if !(self.harvesting_efficiency > 0.0 && self.harvesting_efficiency <= 1.0) {
            return bad("harvesting efficiency must lie in (0, 1]");
        }
        if !(self.tx_gain_db.is_finite() && self.rx_gain_db.is_finite()) {
            return bad("antenna gains must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarPoint {
    pub distance_m: f64,
    pub angle_rad: f64,
}

impl PolarPoint {
    pub fn new(distance_m: f64, angle_rad: f64) -> Self {
        PolarPoint { distance_m, angle_rad }
    }

    pub fn cartesian(&self) -> [f64; 2] {
        [self.distance_m * self.angle_rad.cos(), self.distance_m * self.angle_rad.sin()]
    }

    pub fn from_cartesian(x: f64, y: f64) -> Self {
        PolarPoint { distance_m: x.hypot(y), angle_rad: y.atan2(x) }
    }

    pub fn distance_to(&self, other: &PolarPoint) -> f64 {
        let a = self.cartesian();
        let b = other.cartesian();
        (a[0] - b[0]).hypot(a[1] - b[1])
    }
}

/// Symmetric half-integer element index `M/2 - m + 1/2` for the 1-based element `m`.
pub fn element_offset(m: usize, num_antennas: usize) -> f64 {
    num_antennas as f64 / 2.0 - m as f64 + 0.5
}

pub fn antenna_positions(config: &SystemConfig) -> Vec<[f64; 2]> {
    let d = config.spacing();
    (1..=config.num_antennas)
        .map(|m| [0.0, element_offset(m, config.num_antennas) * d])
        .collect()
}

/// Distance from element `m` (1-based) to `p`.
pub fn element_distance(p: &PolarPoint, m: usize, config: &SystemConfig) -> f64 {
    let y = element_offset(m, config.num_antennas) * config.spacing();
    let r = p.distance_m;
    (r * r + y * y - 2.0 * y * r * p.angle_rad.sin()).max(0.0).sqrt()
}

/// Spherical-wave response, entry `m` equal to `exp(-j k (d_m - d))`.
pub fn array_response(p: &PolarPoint, config: &SystemConfig) -> CVector {
    let k = config.wavenumber();
    let r = p.distance_m;
    CVector::from_fn(config.num_antennas, |i, _| {
        // d_m - d computed as (d_m^2 - d^2)/(d_m + d) to avoid cancellation far away.
        let y = element_offset(i + 1, config.num_antennas) * config.spacing();
        let dm = element_distance(p, i + 1, config);
        let diff = (y * y - 2.0 * y * r * p.angle_rad.sin()) / (dm + r);
        expj(-k * diff)
    })
}

/// Planar-wave steering vector, entry `m` equal to `exp(+j k m~ d sin(theta))`.
pub fn planar_response(angle_rad: f64, config: &SystemConfig) -> CVector {
    let k = config.wavenumber();
    let d = config.spacing();
    CVector::from_fn(config.num_antennas, |i, _| {
        expj(k * element_offset(i + 1, config.num_antennas) * d * angle_rad.sin())
    })
}

/// Free-space propagation phase `exp(-j 2 pi d / lambda)`.
pub fn propagation_phase(distance_m: f64, config: &SystemConfig) -> C64 {
    expj(-2.0 * PI * (distance_m / config.wavelength()).fract())
}

pub fn los_channel(p: &PolarPoint, phase: C64, config: &SystemConfig) -> Result<CVector, ChannelError> {
    if !(p.distance_m > 0.0) {
        return Err(ChannelError::ZeroDistance);
    }
    let g = phase * cr(config.free_space_gain(p.distance_m) * config.antenna_gain_amplitude());
    Ok(array_response(p, config) * g)
}

pub fn rayleigh_distance(config: &SystemConfig) -> f64 {
    let aperture = (config.num_antennas as f64 - 1.0) * config.spacing();
    2.0 * aperture * aperture / config.wavelength()
}

/// Scattering gains indexed `[cluster][user]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkGains {
    #[serde(with = "cplx::pair_vec")]
    pub los_ids: Vec<C64>,
    #[serde(with = "cplx::pair_vec")]
    pub los_ehs: Vec<C64>,
    #[serde(with = "cplx::pair_vec2")]
    pub nlos_ids: Vec<Vec<C64>>,
    #[serde(with = "cplx::pair_vec2")]
    pub nlos_ehs: Vec<Vec<C64>>,
}

/// One fixed placement of users and scatterers with all per-link gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub ids: Vec<PolarPoint>,
    pub ehs: Vec<PolarPoint>,
    pub clusters: Vec<PolarPoint>,
    pub seed: u64,
    pub gains: LinkGains,
}

impl Scenario {
    /// Scenario with no scatterers and free-space LoS phases.
    pub fn line_of_sight(ids: Vec<PolarPoint>, ehs: Vec<PolarPoint>, config: &SystemConfig) -> Self {
        let gains = LinkGains {
            los_ids: ids.iter().map(|p| propagation_phase(p.distance_m, config)).collect(),
            los_ehs: ehs.iter().map(|p| propagation_phase(p.distance_m, config)).collect(),
            nlos_ids: vec![],
            nlos_ehs: vec![],
        };
        Scenario { ids, ehs, clusters: vec![], seed: 0, gains }
    }

    pub fn check(&self, config: &SystemConfig) -> Result<(), ChannelError> {
        let mis = |s: String| Err(ChannelError::Mismatch(s));
        if self.ids.len() != config.num_ids || self.ehs.len() != config.num_ehs {
            return mis(format!(
                "{} IDs / {} EHs, configuration expects {} / {}",
                self.ids.len(),
                self.ehs.len(),
                config.num_ids,
                config.num_ehs
            ));
        }
        let g = &self.gains;
        if g.los_ids.len() != self.ids.len() || g.los_ehs.len() != self.ehs.len() {
            return mis("LoS phase count".into());
        }
        if g.los_ids.iter().chain(&g.los_ehs).any(|z| (z.norm() - 1.0).abs() > 1e-9) {
            return mis("LoS phases must have unit modulus".into());
        }
        let nc = self.clusters.len();
        if g.nlos_ids.len() != nc || g.nlos_ehs.len() != nc {
            return mis("scattering gain rows must match the cluster count".into());
        }
        if g.nlos_ids.iter().any(|r| r.len() != self.ids.len()) || g.nlos_ehs.iter().any(|r| r.len() != self.ehs.len()) {
            return mis("scattering gain columns must match the user count".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub h_id: Vec<CVector>,
    pub h_eh: Vec<CVector>,
}

impl ChannelSet {
    pub fn num_antennas(&self) -> usize {
        self.h_id.first().or(self.h_eh.first()).map_or(0, |h| h.len())
    }

    pub fn is_finite(&self) -> bool {
        self.h_id.iter().chain(&self.h_eh).all(|h| h.iter().all(|z| z.re.is_finite() && z.im.is_finite()))
    }
}

fn assemble_with(
    scenario: &Scenario,
    config: &SystemConfig,
    response: &dyn Fn(&PolarPoint) -> CVector,
) -> Result<ChannelSet, ChannelError> {
    scenario.check(config)?;
    let amp = config.antenna_gain_amplitude();
    let cluster_resp: Vec<CVector> = scenario.clusters.iter().map(response).collect();
    let nc = scenario.clusters.len();
    let norm = if nc > 0 { 1.0 / (nc as f64).sqrt() } else { 0.0 };
    let build = |users: &[PolarPoint], los: &[C64], nlos: &[Vec<C64>], scale: f64| -> Result<Vec<CVector>, ChannelError> {
        users
            .iter()
            .enumerate()
            .map(|(u, p)| {
                if !(p.distance_m > 0.0) {
                    return Err(ChannelError::ZeroDistance);
                }
                let mut h = response(p) * (los[u] * cr(config.free_space_gain(p.distance_m) * amp));
                for c in 0..nc {
                    h += &cluster_resp[c] * (nlos[c][u] * cr(scale));
                }
                Ok(h)
            })
            .collect()
    };
    let g = &scenario.gains;
    let id_scale = if config.normalize_id_nlos { norm } else { 1.0 };
    Ok(ChannelSet {
        h_id: build(&scenario.ids, &g.los_ids, &g.nlos_ids, id_scale)?,
        h_eh: build(&scenario.ehs, &g.los_ehs, &g.nlos_ehs, norm)?,
    })
}

/// LoS plus scattered components with spherical-wave responses.
pub fn assemble_channels(scenario: &Scenario, config: &SystemConfig) -> Result<ChannelSet, ChannelError> {
    assemble_with(scenario, config, &|p| array_response(p, config))
}

/// Same gains, but every response replaced by its planar-wave approximation.
pub fn assemble_far_field_channels(scenario: &Scenario, config: &SystemConfig) -> Result<ChannelSet, ChannelError> {
    assemble_with(scenario, config, &|p| planar_response(p.angle_rad, config))
}

/// Minimum distance of a scatterer from the array centre.
pub const MIN_CLUSTER_DISTANCE_M: f64 = 1.0;

pub fn sample_scenario(
    config: &SystemConfig,
    r_i_m: f64,
    r_e_m: f64,
    cluster_radius_m: f64,
    seed: u64,
) -> Result<Scenario, ChannelError> {
    config.validate()?;
    if !(r_i_m > 0.0 && r_e_m > 0.0 && cluster_radius_m > 0.0) {
        return Err(ChannelError::InvalidConfig("radii must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let angle = |rng: &mut ChaCha8Rng| rng.gen_range(-PI / 2.0..=PI / 2.0);
    let ids: Vec<PolarPoint> = (0..config.num_ids).map(|_| PolarPoint::new(r_i_m, angle(&mut rng))).collect();
    let ehs: Vec<PolarPoint> = (0..config.num_ehs).map(|_| PolarPoint::new(r_e_m, angle(&mut rng))).collect();
    // Area-uniform over the half disc, keeping scatterers off the array itself.
    let r0 = MIN_CLUSTER_DISTANCE_M.min(0.5 * cluster_radius_m);
    let clusters: Vec<PolarPoint> = (0..config.num_clusters)
        .map(|_| {
            let u: f64 = rng.gen();
            let r = (r0 * r0 + u * (cluster_radius_m * cluster_radius_m - r0 * r0)).sqrt();
            PolarPoint::new(r, angle(&mut rng))
        })
        .collect();
    let lambda = config.wavelength();
    let nlos = |users: &[PolarPoint], rng: &mut ChaCha8Rng| -> Vec<Vec<C64>> {
        clusters
            .iter()
            .map(|c| {
                users
                    .iter()
                    .map(|u| {
                        let d_cu = c.distance_to(u).max(lambda);
                        let mag = config.free_space_gain(c.distance_m) * config.free_space_gain(d_cu) * config.antenna_gain_amplitude();
                        expj(rng.gen_range(0.0..2.0 * PI)) * cr(mag)
                    })
                    .collect()
            })
            .collect()
    };
    let nlos_ids = nlos(&ids, &mut rng);
    let nlos_ehs = nlos(&ehs, &mut rng);
    let gains = LinkGains {
        los_ids: ids.iter().map(|p| propagation_phase(p.distance_m, config)).collect(),
        los_ehs: ehs.iter().map(|p| propagation_phase(p.distance_m, config)).collect(),
        nlos_ids,
        nlos_ehs,
    };
    Ok(Scenario { ids, ehs, clusters, seed, gains })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(m: usize) -> SystemConfig {
        SystemConfig { num_antennas: m, num_rf_chains: m.min(8), num_ids: 1, num_ehs: 0, ..Default::default() }
    }

    #[test]
    fn positions_are_symmetric_with_exact_spacing() {
        let c = SystemConfig { antenna_spacing_m: Some(3.0 / 560.0), ..cfg(4) };
        let p = antenna_positions(&c);
        let d = 3.0 / 560.0;
        for (got, want) in p.iter().zip([1.5, 0.5, -0.5, -1.5]) {
            assert!((got[1] - want * d).abs() < 1e-15);
        }
        let c1 = cfg(1);
        assert_eq!(antenna_positions(&c1), vec![[0.0, 0.0]]);
        let c2 = cfg(2);
        let lam = c2.wavelength();
        let p2 = antenna_positions(&c2);
        assert!((p2[0][1] - lam / 4.0).abs() < 1e-15 && (p2[1][1] + lam / 4.0).abs() < 1e-15);
    }

    #[test]
    fn half_wavelength_pitch_at_28_ghz() {
        let c = SystemConfig::default();
        assert!((c.spacing() - 0.5 * SPEED_OF_LIGHT / 28e9).abs() < 1e-15);
        // Table value 3/560 m uses c0 = 3e8.
        assert!((c.spacing() - 3.0 / 560.0).abs() < 1e-5);
    }

    #[test]
    fn element_distance_matches_cartesian() {
        let c = SystemConfig { antenna_spacing_m: Some(3.0 / 560.0), ..cfg(4) };
        let p = PolarPoint::new(20.0, PI / 6.0);
        let r = p.cartesian();
        for (m, s) in antenna_positions(&c).iter().enumerate() {
            let want = (r[0] - s[0]).hypot(r[1] - s[1]);
            let got = element_distance(&p, m + 1, &c);
            assert!((got - want).abs() <= 1e-12 * want);
        }
    }

    #[test]
    fn broadside_pair_is_symmetric() {
        let c = cfg(2);
        let p = PolarPoint::new(7.0, 0.0);
        let lam = c.wavelength();
        let want = (49.0 + lam * lam / 16.0).sqrt();
        assert!((element_distance(&p, 1, &c) - want).abs() < 1e-13);
        assert!((element_distance(&p, 2, &c) - want).abs() < 1e-13);
        let a = array_response(&p, &c);
        assert!((a[0] - a[1]).norm() < 1e-12);
        assert_eq!(array_response(&p, &cfg(1))[0], cr(1.0));
    }

    #[test]
    fn free_space_gain_value() {
        let c = SystemConfig::default();
        let g = c.free_space_gain(20.0);
        assert!((g - SPEED_OF_LIGHT / (4.0 * PI * 28e9 * 20.0)).abs() < 1e-18);
        assert!((g - 4.26e-5).abs() < 1e-7);
        let h = los_channel(&PolarPoint::new(20.0, 0.3), cr(1.0), &c).unwrap();
        assert!((h.norm() - g * 8.0).abs() < 1e-15);
        assert_eq!(los_channel(&PolarPoint::new(0.0, 0.3), cr(1.0), &c), Err(ChannelError::ZeroDistance));
    }

    #[test]
    fn rayleigh_distance_values() {
        let c2 = cfg(2);
        assert!((rayleigh_distance(&c2) - c2.wavelength() / 2.0).abs() < 1e-15);
        let c512 = SystemConfig { num_antennas: 512, ..Default::default() };
        let lam = c512.wavelength();
        let want = 2.0 * (511.0 * lam / 2.0f64).powi(2) / lam;
        assert!((rayleigh_distance(&c512) - want).abs() <= 1e-9 * want);
        assert!((rayleigh_distance(&c512) - 1.40e3).abs() < 5.0);
        let c128 = SystemConfig { num_antennas: 128, ..Default::default() };
        assert!((rayleigh_distance(&c128) - 86.4).abs() < 0.1);
    }

    #[test]
    fn pure_los_without_clusters() {
        let c = SystemConfig { num_clusters: 0, num_ehs: 1, ..cfg(16) };
        let s = sample_scenario(&c, 20.0, 10.0, 30.0, 5).unwrap();
        let ch = assemble_channels(&s, &c).unwrap();
        let los = los_channel(&s.ids[0], s.gains.los_ids[0], &c).unwrap();
        assert!((&ch.h_id[0] - los).norm() == 0.0);
    }

    #[test]
    fn zero_gain_cluster_leaves_los() {
        let c = SystemConfig { num_clusters: 1, ..cfg(8) };
        let mut s = sample_scenario(&c, 20.0, 10.0, 30.0, 5).unwrap();
        s.clusters[0] = s.ids[0];
        s.gains.nlos_ids[0][0] = cr(0.0);
        let ch = assemble_channels(&s, &c).unwrap();
        let los = los_channel(&s.ids[0], s.gains.los_ids[0], &c).unwrap();
        assert!((&ch.h_id[0] - los).norm() < 1e-20);
    }

    #[test]
    fn scattered_power_is_minuscule() {
        let c = SystemConfig::default();
        let s = sample_scenario(&c, 20.0, 20.0, 30.0, 11).unwrap();
        let ch = assemble_channels(&s, &c).unwrap();
        let los_only = assemble_channels(&Scenario { clusters: vec![], gains: LinkGains { nlos_ids: vec![], nlos_ehs: vec![], ..s.gains.clone() }, ..s.clone() }, &c).unwrap();
        for (h, l) in ch.h_id.iter().zip(&los_only.h_id).chain(ch.h_eh.iter().zip(&los_only.h_eh)) {
            let ratio = (h - l).norm_squared() / l.norm_squared();
            assert!(ratio < 1e-2, "NLoS/LoS power ratio {ratio}");
        }
    }

    #[test]
    fn sampling_is_deterministic_and_respects_radii() {
        let c = SystemConfig::default();
        let a = sample_scenario(&c, 20.0, 20.0, 30.0, 42).unwrap();
        let b = sample_scenario(&c, 20.0, 20.0, 30.0, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.ids.iter().chain(&a.ehs).all(|p| p.distance_m == 20.0));
        assert!(a.ids.iter().chain(&a.ehs).chain(&a.clusters).all(|p| p.angle_rad.abs() <= PI / 2.0));
        assert!(a.clusters.iter().all(|p| p.distance_m <= 30.0));
        assert_eq!(a.clusters.len(), 3);
    }

    #[test]
    fn scenario_json_round_trip() {
        let c = SystemConfig::default();
        let s = sample_scenario(&c, 20.0, 10.0, 30.0, 3).unwrap();
        let js = s.to_json();
        let v: serde_json::Value = serde_json::from_str(&js).unwrap();
        for key in ["ids", "ehs", "clusters", "seed", "gains"] {
            assert!(v.get(key).is_some(), "missing key {key}");
        }
        assert!(v["gains"]["los_ids"][0].as_array().unwrap().len() == 2);
        let back: Scenario = serde_json::from_str(&js).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn config_validation() {
        assert!(SystemConfig::default().validate().is_ok());
        let bad = SystemConfig { num_rf_chains: 5, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SystemConfig { harvesting_efficiency: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SystemConfig { num_rf_chains: 100, ..Default::default() };
        assert!(bad.validate().is_err());
        let cfg: SystemConfig = serde_json::from_str(r#"{"num_antennas": 128}"#).unwrap();
        assert_eq!(cfg.num_antennas, 128);
        assert!(serde_json::from_str::<SystemConfig>(r#"{"antennas": 128}"#).is_err());
    }
}
