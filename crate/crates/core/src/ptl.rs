//! Penalty-based two-layer joint design of the analog and digital precoders.
//!
//! The coupling `U = P W` between the combined precoder and its hybrid factorization
//! moves into the objective as the penalty `||P W - U||^2 / (2 rho)`. The inner layer
//! cycles through three blocks: `U` by successive convex approximation of the QoS
//! constraints, `W` by least squares, and `P` entry by entry on the unit circle. The
//! outer layer shrinks `rho` geometrically.
//!
//! Internally, received amplitudes are measured in noise standard deviations and
//! powers in units of the initial design power, so the tolerances are relative.

use nalgebra::{DMatrix, DVector};
use nfswipt_conic::{solve_with, Cone, ConicProblem, Settings, Status};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::ChannelSet;
use crate::cplx::{self, c, cr, CMatrix, CVector, C64};
use crate::digital_sdr::{max_min_energy, EffectiveChannels, QosSpec, SdrError};
use crate::two_stage::{hybrid_for_analog, random_analog, DesignError, HybridBeamformer, PTL};

/// Initial points get this much headroom over every target.
const INIT_SLACK: f64 = 1.1;
const SURROGATE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PtlConfig {
    pub num_rf_chains: usize,
    /// Starting penalty factor; `None` balances the two objective terms at the start.
    pub initial_penalty: Option<f64>,
    /// Factor by which the penalty shrinks per outer iteration (> 1).
    pub penalty_decrease: f64,
    /// Relative change that ends the convex-approximation loop.
    pub sca_tol: f64,
    /// Relative change that ends an inner layer.
    pub inner_tol: f64,
    /// The outer layer stops once the penalty factor is at or below this value...
    pub penalty_tol: f64,
    /// ...and `||P W - U|| / ||U||` is at or below this one.
    pub residual_target: f64,
    pub max_sca_iter: usize,
    pub max_inner_iter: usize,
    pub max_outer_iter: usize,
    /// Seed of the random initial analog phases.
    pub seed: u64,
}

impl Default for PtlConfig {
    fn default() -> Self {
        PtlConfig {
            num_rf_chains: 8,
            initial_penalty: None,
            penalty_decrease: 4.0 / 3.0,
            sca_tol: 1e-3,
            inner_tol: 1e-2,
            penalty_tol: 1e-2,
            residual_target: 1e-2,
            max_sca_iter: 50,
            max_inner_iter: 100,
            max_outer_iter: 60,
            seed: 0,
        }
    }
}

impl PtlConfig {
    pub fn validate(&self) -> Result<(), PtlError> {
        let bad = |m: &str| Err(PtlError::InvalidInput(m.into()));
        if !(self.penalty_decrease > 1.0) {
            return bad("penalty decrease factor must exceed one");
        }
        let tols = [self.sca_tol, self.inner_tol, self.penalty_tol, self.residual_target];
        if tols.iter().any(|t| !(*t > 0.0)) {
            return bad("tolerances must be positive");
        }
        if matches!(self.initial_penalty, Some(r) if !(r > 0.0 && r.is_finite())) {
            return bad("initial penalty must be positive");
        }
        if self.num_rf_chains == 0 || self.max_sca_iter == 0 || self.max_inner_iter == 0 || self.max_outer_iter == 0 {
            return bad("RF chains and iteration caps must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone)]
pub enum PtlError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no feasible starting point: the targets cannot be met")]
    Infeasible { trace: Box<ConvergenceTrace> },
    #[error(transparent)]
    Design(#[from] DesignError),
}

impl From<SdrError> for PtlError {
    fn from(e: SdrError) -> Self {
        PtlError::Design(e.into())
    }
}

/// Iterate of the two-layer loop, in normalized units.
#[derive(Debug, Clone)]
pub struct PtlState {
    /// Combined precoder `U` (antennas x IDs).
    pub combined: CMatrix,
    pub analog: CMatrix,
    pub digital: CMatrix,
    /// Row `h_k^H U` for each ID.
    pub id_slack: Vec<CVector>,
    /// Row `g_l^H U` for each EH.
    pub eh_slack: Vec<CVector>,
    pub penalty: f64,
    pub inner_iter: usize,
    pub outer_iter: usize,
}

impl PtlState {
    /// `||P W - U||_F`.
    pub fn residual(&self) -> f64 {
        (&self.analog * &self.digital - &self.combined).norm()
    }

    pub fn relative_residual(&self) -> f64 {
        self.residual() / self.combined.norm().max(f64::MIN_POSITIVE)
    }

    /// `||U||^2 + ||P W - U||^2 / (2 rho)`.
    pub fn objective(&self) -> f64 {
        self.combined.norm_squared() + self.residual().powi(2) / (2.0 * self.penalty)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub outer_iter: usize,
    pub inner_iter: usize,
    /// Penalized objective in watts.
    pub objective: f64,
    /// `||P W - U||_F` in square-root watts.
    pub penalty_residual: f64,
    /// `||P W||_F^2` in watts.
    pub tx_power_w: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Block {
    Combined,
    Digital,
    Analog,
}

/// Objective right after one block update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockStep {
    pub outer_iter: usize,
    pub inner_iter: usize,
    pub block: Block,
    pub objective: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    /// One row per inner iteration.
    pub rows: Vec<TraceRow>,
    pub steps: Vec<BlockStep>,
    /// Convex-approximation calls that had to re-expand at the current point.
    pub restorations: usize,
}

impl ConvergenceTrace {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Objective values of each inner layer, in order.
    pub fn inner_sequences(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = Vec::new();
        let mut current = None;
        for s in &self.steps {
            if current != Some(s.outer_iter) {
                out.push(Vec::new());
                current = Some(s.outer_iter);
            }
            out.last_mut().unwrap().push(s.objective);
        }
        out
    }

    /// Largest relative increase between consecutive block steps of one inner layer.
    pub fn worst_increase(&self) -> f64 {
        self.inner_sequences()
            .iter()
            .flat_map(|seq| seq.windows(2).map(|w| (w[1] - w[0]) / w[0].abs().max(f64::MIN_POSITIVE)))
            .fold(0.0, f64::max)
    }
}

/// Channels and targets in normalized units: amplitudes over the noise standard
/// deviation, precoders over the square root of `power_scale`.
#[derive(Debug, Clone)]
pub struct PtlProblem {
    pub power_scale: f64,
    pub sinr_targets: Vec<f64>,
    /// `Q_l / (eta sigma^2)`, the required sum of squared EH slacks.
    pub energy_targets: Vec<f64>,
    pub id: Vec<CVector>,
    pub eh: Vec<CVector>,
    /// Orthonormal basis of the span of all channels.
    pub basis: CMatrix,
    id_coords: Vec<CVector>,
    eh_coords: Vec<CVector>,
}

impl PtlProblem {
    pub fn new(channels: &ChannelSet, qos: &QosSpec, sigma2: f64, eta: f64, power_scale: f64) -> Result<Self, PtlError> {
        let (k, l) = (channels.h_id.len(), channels.h_eh.len());
        qos.validate(k, l)?;
        if !(sigma2 > 0.0 && eta > 0.0 && eta <= 1.0 && power_scale > 0.0) {
            return Err(PtlError::InvalidInput("noise power, efficiency and scale must be positive".into()));
        }
        let f = cr(power_scale.sqrt() / sigma2.sqrt());
        let id: Vec<CVector> = channels.h_id.iter().map(|h| h * f).collect();
        let eh: Vec<CVector> = channels.h_eh.iter().map(|h| h * f).collect();
        let energy_targets = qos.energy_targets_w.iter().map(|q| q / (eta * sigma2)).collect();
        let basis = span_basis(id.iter().chain(&eh), channels.num_antennas());
        let bh = basis.adjoint();
        let id_coords = id.iter().map(|h| &bh * h).collect();
        let eh_coords = eh.iter().map(|h| &bh * h).collect();
        Ok(PtlProblem { power_scale, sinr_targets: qos.sinr_targets(), energy_targets, id, eh, basis, id_coords, eh_coords })
    }

    pub fn num_ids(&self) -> usize {
        self.id.len()
    }

    fn slacks(&self, u: &CMatrix) -> (Vec<CVector>, Vec<CVector>) {
        let rows = |hs: &[CVector]| hs.iter().map(|h| u.adjoint() * h).map(|r| r.map(|z| z.conj())).collect();
        (rows(&self.id), rows(&self.eh))
    }

    /// Largest relative shortfall of `U` against the (normalized) targets.
    pub fn violation(&self, u: &CMatrix) -> f64 {
        let (p, q) = self.slacks(u);
        let mut worst: f64 = 0.0;
        for (k, pk) in p.iter().enumerate() {
            let sig = pk[k].norm_sqr();
            let sinr = sig / (pk.norm_squared() - sig + 1.0);
            worst = worst.max((self.sinr_targets[k] - sinr) / self.sinr_targets[k]);
        }
        for (l, ql) in q.iter().enumerate() {
            worst = worst.max((self.energy_targets[l] - ql.norm_squared()) / self.energy_targets[l]);
        }
        worst.max(0.0)
    }
}

fn span_basis<'a>(vs: impl Iterator<Item = &'a CVector>, m: usize) -> CMatrix {
    let cols: Vec<CVector> = vs.cloned().collect();
    let a = cplx::from_columns(&cols, m);
    let svd = a.svd(true, false);
    let u = svd.u.unwrap();
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > 1e-12 * smax).collect();
    CMatrix::from_fn(m, keep.len(), |i, j| u[(i, keep[j])])
}

/// Feasible starting precoder with `INIT_SLACK` headroom: maximum-ratio directions
/// with SINR-balancing powers, or zero-forcing directions when those cannot reach the
/// targets, then scaled up until every EH is served.
pub fn initial_combined(prob: &PtlProblem) -> Result<CMatrix, PtlError> {
    let k = prob.num_ids();
    let m = prob.basis.nrows();
    let gam = &prob.sinr_targets;
    let powers_for = |dirs: &[CVector]| -> Option<Vec<f64>> {
        let a = DMatrix::from_fn(k, k, |r, i| {
            let g = prob.id[r].dotc(&dirs[i]).norm_sqr();
            if r == i {
                g / gam[r]
            } else {
                -g
            }
        });
        let lam = a.lu().solve(&DVector::from_element(k, INIT_SLACK))?;
        lam.iter().all(|v| *v > 0.0 && v.is_finite()).then(|| lam.iter().copied().collect())
    };
    let mrt: Vec<CVector> = prob.id.iter().map(|h| h / cr(h.norm())).collect();
    let (dirs, lam) = match powers_for(&mrt) {
        Some(lam) => (mrt, lam),
        None => {
            let h = cplx::from_columns(&prob.id, m);
            let g = h.adjoint() * &h;
            let inv = g.try_inverse().ok_or_else(|| PtlError::Infeasible { trace: Box::default() })?;
            let zf = cplx::columns(&(&h * inv)).into_iter().map(|d| &d / cr(d.norm())).collect::<Vec<_>>();
            let lam = powers_for(&zf).ok_or_else(|| PtlError::Infeasible { trace: Box::default() })?;
            (zf, lam)
        }
    };
    let cols: Vec<CVector> = dirs.iter().zip(&lam).map(|(d, l)| d * cr(l.sqrt())).collect();
    let mut u = cplx::from_columns(&cols, m);
    let (_, q) = prob.slacks(&u);
    let mut boost: f64 = 1.0;
    for (ql, e) in q.iter().zip(&prob.energy_targets) {
        let got = ql.norm_squared();
        if !(got > 0.0) {
            return Err(PtlError::Infeasible { trace: Box::default() });
        }
        boost = boost.max(INIT_SLACK * e / got);
    }
    u *= cr(boost.sqrt());
    Ok(u)
}

/// Least-squares digital precoder `(P^H P)^{-1} P^H U`, with a small ridge when
/// `P^H P` is numerically singular.
pub fn update_digital(analog: &CMatrix, combined: &CMatrix) -> CMatrix {
    let g = analog.adjoint() * analog;
    let rhs = analog.adjoint() * combined;
    let (vals, _) = cplx::herm_eig(&g);
    let singular = vals.last().map_or(true, |&v| !(v > 1e-12 * vals[0]));
    let g = if singular { g + CMatrix::identity(analog.ncols(), analog.ncols()) * cr(1e-10 * analog.nrows() as f64) } else { g };
    match g.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => g.lu().solve(&rhs).unwrap_or_else(|| CMatrix::zeros(analog.ncols(), combined.ncols())),
    }
}

/// Best unit-modulus value of entry `(i, j)` with the rest of `P` fixed, for the fit
/// `||P W - U||^2` written through `Y = W W^H` and `Z = U W^H`.
pub fn update_analog_entry(analog: &mut CMatrix, y: &CMatrix, z: &CMatrix, i: usize, j: usize) {
    let mut py = C64::new(0.0, 0.0);
    for t in 0..analog.ncols() {
        py += analog[(i, t)] * y[(t, j)];
    }
    let psi = z[(i, j)] - py + analog[(i, j)] * y[(j, j)];
    let r = psi.norm();
    if r > 0.0 {
        analog[(i, j)] = psi / cr(r);
    }
}

/// One row-major sweep of [`update_analog_entry`] over all entries.
pub fn update_analog_elementwise(analog: &CMatrix, digital: &CMatrix, combined: &CMatrix) -> CMatrix {
    let y = digital * digital.adjoint();
    let z = combined * digital.adjoint();
    let mut p = analog.clone();
    for i in 0..p.nrows() {
        for j in 0..p.ncols() {
            update_analog_entry(&mut p, &y, &z, i, j);
        }
    }
    p
}

/// Dense affine expression `c0 + a . x`.
#[derive(Clone)]
struct Affine {
    c0: f64,
    a: Vec<f64>,
}

impl Affine {
    fn constant(n: usize, c0: f64) -> Self {
        Affine { c0, a: vec![0.0; n] }
    }

    fn var(n: usize, i: usize, coef: f64) -> Self {
        let mut e = Affine::constant(n, 0.0);
        e.a[i] = coef;
        e
    }

    fn add(mut self, o: &Affine, s: f64) -> Self {
        self.c0 += s * o.c0;
        self.a.iter_mut().zip(&o.a).for_each(|(x, y)| *x += s * y);
        self
    }

    fn scale(mut self, s: f64) -> Self {
        self.c0 *= s;
        self.a.iter_mut().for_each(|x| *x *= s);
        self
    }
}

/// Coordinates `X` (basis dimension x IDs) of the in-span part of `U`, laid out after
/// `offset` leading scalar variables as interleaved real and imaginary parts.
struct CoordLayout {
    offset: usize,
    r: usize,
    k: usize,
}

impl CoordLayout {
    fn n(&self) -> usize {
        self.offset + 2 * self.r * self.k
    }

    fn re(&self, i: usize, j: usize) -> usize {
        self.offset + 2 * (j * self.r + i)
    }

    /// Real and imaginary parts of `g^H X[:, j]`.
    fn inner(&self, g: &CVector, j: usize) -> (Affine, Affine) {
        let n = self.n();
        let mut re = Affine::constant(n, 0.0);
        let mut im = Affine::constant(n, 0.0);
        for i in 0..self.r {
            let (gr, gi) = (g[i].re, g[i].im);
            let (xr, xi) = (self.re(i, j), self.re(i, j) + 1);
            re.a[xr] += gr;
            re.a[xi] += gi;
            im.a[xr] -= gi;
            im.a[xi] += gr;
        }
        (re, im)
    }

    /// `2 Re(conj(d) v) - |d|^2` for `v = g^H X[:, j]`: the tangent lower bound of `|v|^2` at `d`.
    fn tangent(&self, g: &CVector, j: usize, d: C64) -> Affine {
        let (re, im) = self.inner(g, j);
        re.scale(2.0 * d.re).add(&im, 2.0 * d.im).add(&Affine::constant(self.n(), -d.norm_sqr()), 1.0)
    }

    fn unpack(&self, x: &[f64]) -> CMatrix {
        CMatrix::from_fn(self.r, self.k, |i, j| c(x[self.re(i, j)], x[self.re(i, j) + 1]))
    }
}

struct ConeBuilder {
    n: usize,
    nonneg: Vec<Affine>,
    socs: Vec<Vec<Affine>>,
}

impl ConeBuilder {
    fn new(n: usize) -> Self {
        ConeBuilder { n, nonneg: Vec::new(), socs: Vec::new() }
    }

    /// `||p||^2 + 1 <= a` as a rotated cone, with `p` given by its real parts and
    /// expected to have magnitude around `m`; entries are scaled to order one.
    fn squared_norm_below(&mut self, parts: Vec<Affine>, a: Affine, m: f64) {
        let n = self.n;
        let m = m.max(1.0);
        let a = a.scale(1.0 / (m * m));
        let mut cone = vec![a.clone().add(&Affine::constant(n, 1.0), 1.0), a.add(&Affine::constant(n, -1.0), 1.0)];
        cone.extend(parts.into_iter().map(|p| p.scale(2.0 / m)));
        cone.push(Affine::constant(n, 2.0 / m));
        self.socs.push(cone);
    }

    fn solve(self, cost: Vec<f64>) -> Result<Vec<f64>, Status> {
        let n = self.n;
        let rows: Vec<&Affine> = self.nonneg.iter().chain(self.socs.iter().flatten()).collect();
        let m = rows.len();
        let mut g = DMatrix::zeros(m, n);
        let mut h = DVector::zeros(m);
        for (r, e) in rows.iter().enumerate() {
            h[r] = e.c0;
            for (j, v) in e.a.iter().enumerate() {
                g[(r, j)] = -v;
            }
        }
        let mut cones = Vec::new();
        if !self.nonneg.is_empty() {
            cones.push(Cone::NonNeg(self.nonneg.len()));
        }
        cones.extend(self.socs.iter().map(|s| Cone::Soc(s.len())));
        let problem = ConicProblem { c: DVector::from_vec(cost), a: DMatrix::zeros(0, n), b: DVector::zeros(0), g, h, cones };
        let settings = Settings { tol: SURROGATE_TOL, ..Default::default() };
        let sol = solve_with(&problem, &settings).map_err(|_| Status::MaxIter)?;
        let loose = 1e3 * SURROGATE_TOL;
        match sol.status {
            Status::Optimal => Ok(sol.x.iter().copied().collect()),
            Status::MaxIter if sol.primal_res <= loose && sol.dual_res <= loose && sol.gap_res <= loose => {
                Ok(sol.x.iter().copied().collect())
            }
            s => Err(s),
        }
    }
}

/// Adds the linearized SINR cones around `id_exp`.
fn add_sinr_surrogates(b: &mut ConeBuilder, lay: &CoordLayout, prob: &PtlProblem, id_exp: &[CVector]) {
    for (kk, g) in prob.id_coords.iter().enumerate() {
        let gam = prob.sinr_targets[kk];
        let a = lay.tangent(g, kk, id_exp[kk][kk]).scale((1.0 + gam) / gam);
        let parts = (0..lay.k).flat_map(|j| {
            let (re, im) = lay.inner(g, j);
            [re, im]
        });
        b.squared_norm_below(parts.collect(), a, id_exp[kk].norm());
    }
}

/// Linearized harvested power of EH `l`, divided by `norm`.
fn energy_surrogate(lay: &CoordLayout, g: &CVector, exp: &CVector, norm: f64) -> Affine {
    let mut e = Affine::constant(lay.n(), 0.0);
    for j in 0..lay.k {
        e = e.add(&lay.tangent(g, j, exp[j]), 1.0 / norm);
    }
    e
}

/// Power-minimization surrogate: minimize `||X - X0||` over the linearized constraints.
fn solve_power_surrogate(prob: &PtlProblem, x0: &CMatrix, id_exp: &[CVector], eh_exp: &[CVector]) -> Result<CMatrix, Status> {
    let lay = CoordLayout { offset: 1, r: x0.nrows(), k: x0.ncols() };
    let n = lay.n();
    let mut b = ConeBuilder::new(n);
    for (l, g) in prob.eh_coords.iter().enumerate() {
        let e = energy_surrogate(&lay, g, &eh_exp[l], prob.energy_targets[l]);
        b.nonneg.push(e.add(&Affine::constant(n, -1.0), 1.0));
    }
    let mut obj = vec![Affine::var(n, 0, 1.0)];
    for j in 0..lay.k {
        for i in 0..lay.r {
            obj.push(Affine::var(n, lay.re(i, j), 1.0).add(&Affine::constant(n, -x0[(i, j)].re), 1.0));
            obj.push(Affine::var(n, lay.re(i, j) + 1, 1.0).add(&Affine::constant(n, -x0[(i, j)].im), 1.0));
        }
    }
    b.socs.push(obj);
    add_sinr_surrogates(&mut b, &lay, prob, id_exp);
    let mut cost = vec![0.0; n];
    cost[0] = 1.0;
    let x = b.solve(cost)?;
    Ok(lay.unpack(&x))
}

fn ones_expansion(k: usize, l: usize) -> (Vec<CVector>, Vec<CVector>) {
    (vec![CVector::from_element(k, cr(1.0)); k], vec![CVector::from_element(k, cr(1.0)); l])
}

/// Result of one convex-approximation run.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScaReport {
    pub iterations: usize,
    pub restored: bool,
}

/// Update of `U` (and its slacks) by successive convex approximation with `P`, `W`
/// fixed. The in-span part of `U` solves a small cone program; the orthogonal part has
/// the closed form `c/(1+c) (I - Q Q^H) P W` with `c = 1/(2 rho)`.
///
/// With `from_ones` the first expansion point is all-ones; if that surrogate is
/// infeasible or does not improve on the current point, it re-expands at the current
/// point. A candidate is accepted only if it lowers the objective, so the objective
/// never increases.
pub fn sca_update_u(state: &mut PtlState, prob: &PtlProblem, tol: f64, max_iter: usize, from_ones: bool) -> ScaReport {
    let c = 1.0 / (2.0 * state.penalty);
    let shrink = c / (1.0 + c);
    let target = &state.analog * &state.digital;
    let q = &prob.basis;
    let x0 = q.adjoint() * &target * cr(shrink);
    let orth = (&target - q * (q.adjoint() * &target)) * cr(shrink);

    let mut best = state.objective();
    let (mut id_exp, mut eh_exp) = if from_ones {
        ones_expansion(prob.num_ids(), prob.eh.len())
    } else {
        (state.id_slack.clone(), state.eh_slack.clone())
    };
    let mut report = ScaReport::default();
    let mut expanded_here = !from_ones;
    while report.iterations < max_iter {
        report.iterations += 1;
        let cand = solve_power_surrogate(prob, &x0, &id_exp, &eh_exp).ok().map(|x| q * x + &orth);
        let accepted = cand.and_then(|u| {
            let mut trial = state.clone();
            trial.combined = u;
            let f = trial.objective();
            (f <= best).then_some((trial, f))
        });
        match accepted {
            Some((trial, f)) => {
                let gain = best - f;
                state.combined = trial.combined;
                (state.id_slack, state.eh_slack) = prob.slacks(&state.combined);
                id_exp = state.id_slack.clone();
                eh_exp = state.eh_slack.clone();
                best = f;
                if gain <= tol * f.abs() {
                    break;
                }
            }
            None if !expanded_here => {
                expanded_here = true;
                report.restored = true;
                id_exp = state.id_slack.clone();
                eh_exp = state.eh_slack.clone();
            }
            None => break,
        }
    }
    report
}

fn balanced_penalty(u: &CMatrix, p: &CMatrix, w: &CMatrix) -> f64 {
    let r = (p * w - u).norm_squared();
    if r > 0.0 {
        u.norm_squared() / r
    } else {
        1.0
    }
}

/// Inner and outer layers shared by both objectives. `u_step` performs the `U` block and
/// returns whether it had to restore; `objective` evaluates the penalized objective.
fn two_layer_loop(
    state: &mut PtlState,
    config: &PtlConfig,
    trace: &mut ConvergenceTrace,
    scale: f64,
    objective: &dyn Fn(&PtlState) -> f64,
    u_step: &mut dyn FnMut(&mut PtlState, bool) -> bool,
) {
    let mut first = true;
    for outer in 0..config.max_outer_iter {
        state.outer_iter = outer;
        let mut prev = objective(state);
        for inner in 0..config.max_inner_iter {
            state.inner_iter = inner;
            let mut record = |s: &PtlState, block| {
                trace.steps.push(BlockStep { outer_iter: outer, inner_iter: inner, block, objective: scale * objective(s) })
            };
            if u_step(state, first) {
                trace.restorations += 1;
            }
            first = false;
            record(state, Block::Combined);
            state.digital = update_digital(&state.analog, &state.combined);
            record(state, Block::Digital);
            state.analog = update_analog_elementwise(&state.analog, &state.digital, &state.combined);
            record(state, Block::Analog);
            let f = objective(state);
            trace.rows.push(TraceRow {
                outer_iter: outer,
                inner_iter: inner,
                objective: scale * f,
                penalty_residual: scale.sqrt() * state.residual(),
                tx_power_w: scale * (&state.analog * &state.digital).norm_squared(),
                rho: state.penalty,
            });
            let done = (prev - f).abs() <= config.inner_tol * f.abs();
            prev = f;
            if done {
                break;
            }
        }
        if state.penalty <= config.penalty_tol && state.relative_residual() <= config.residual_target {
            break;
        }
        if outer + 1 < config.max_outer_iter {
            state.penalty /= config.penalty_decrease;
        }
    }
}

fn check_dims(channels: &ChannelSet, config: &PtlConfig, need_ids: bool) -> Result<(), PtlError> {
    config.validate()?;
    let (m, k, l) = (channels.num_antennas(), channels.h_id.len(), channels.h_eh.len());
    if need_ids && k == 0 {
        return Err(PtlError::InvalidInput("the joint design needs at least one ID".into()));
    }
    if k + l > config.num_rf_chains || config.num_rf_chains > m {
        return Err(PtlError::InvalidInput("need K + L <= RF chains <= antennas".into()));
    }
    if !channels.is_finite() {
        return Err(PtlError::InvalidInput("channels must be finite".into()));
    }
    Ok(())
}

fn start_state(prob: &PtlProblem, u: CMatrix, config: &PtlConfig) -> PtlState {
    let analog = random_analog(u.nrows(), config.num_rf_chains, config.seed);
    let digital = update_digital(&analog, &u);
    let penalty = config.initial_penalty.unwrap_or_else(|| balanced_penalty(&u, &analog, &digital));
    let (id_slack, eh_slack) = prob.slacks(&u);
    PtlState { combined: u, analog, digital, id_slack, eh_slack, penalty, inner_iter: 0, outer_iter: 0 }
}

/// Outcome of [`run_ptl`].
#[derive(Debug, Clone)]
pub struct PtlRun {
    /// Analog precoder from the loop with the optimal digital stage for it.
    pub beamformer: HybridBeamformer,
    pub trace: ConvergenceTrace,
    /// Final iterate, scaled back to watts.
    pub state: PtlState,
    pub relative_residual: f64,
    /// Power of the loop's own `P W` before the digital stage is re-optimized.
    pub loop_power_w: f64,
}

/// Transmit power minimization. The returned beamformer keeps the loop's analog
/// precoder and re-optimizes the digital stage for it, so the constraints hold exactly
/// instead of up to the penalty residual.
pub fn run_ptl(channels: &ChannelSet, qos: &QosSpec, sigma2: f64, eta: f64, config: &PtlConfig) -> Result<PtlRun, PtlError> {
    check_dims(channels, config, true)?;
    let unit = PtlProblem::new(channels, qos, sigma2, eta, 1.0)?;
    let u0 = initial_combined(&unit)?;
    let scale = u0.norm_squared();
    let prob = PtlProblem::new(channels, qos, sigma2, eta, scale)?;
    let mut state = start_state(&prob, u0 / cr(scale.sqrt()), config);
    let mut trace = ConvergenceTrace::default();
    let objective = |s: &PtlState| s.objective();
    let mut u_step = |s: &mut PtlState, first: bool| sca_update_u(s, &prob, config.sca_tol, config.max_sca_iter, first).restored;
    two_layer_loop(&mut state, config, &mut trace, scale, &objective, &mut u_step);

    let relative_residual = state.relative_residual();
    let loop_power_w = scale * (&state.analog * &state.digital).norm_squared();
    let beamformer = match hybrid_for_analog(state.analog.clone(), channels, qos, sigma2, eta, PTL) {
        Ok((bf, _)) => bf,
        Err(e) if e.is_infeasible() => return Err(PtlError::Infeasible { trace: Box::new(trace) }),
        Err(e) => return Err(e.into()),
    };
    let s = cr(scale.sqrt());
    state.combined *= s;
    state.digital *= s;
    state.id_slack.iter_mut().chain(state.eh_slack.iter_mut()).for_each(|v| *v *= s);
    Ok(PtlRun { beamformer, trace, state, relative_residual, loop_power_w })
}

/// Max-min surrogate over `[t, s, beta, X]`: maximize the common normalized harvest `t`
/// minus `c s`, where `s` bounds `||X - Q^H B||^2 + (1 - beta)^2 ||B_perp||^2` and the
/// budget bounds `||X||^2 + beta^2 ||B_perp||^2`. The orthogonal part of `U` is
/// `beta B_perp`, which is optimal for any split of the budget.
fn solve_maxmin_surrogate(
    prob: &PtlProblem,
    level_ref: f64,
    c_pen: f64,
    xb: &CMatrix,
    perp_norm: f64,
    id_exp: &[CVector],
    eh_exp: &[CVector],
) -> Result<(CMatrix, f64), Status> {
    let lay = CoordLayout { offset: 3, r: xb.nrows(), k: xb.ncols() };
    let n = lay.n();
    let mut b = ConeBuilder::new(n);
    for (l, g) in prob.eh_coords.iter().enumerate() {
        b.nonneg.push(energy_surrogate(&lay, g, &eh_exp[l], level_ref).add(&Affine::var(n, 0, 1.0), -1.0));
    }
    let coords = || {
        (0..lay.k).flat_map(move |j| (0..lay.r).flat_map(move |i| [(i, j, false), (i, j, true)])).collect::<Vec<_>>()
    };
    // Budget: ||(X, beta |B_perp|)|| <= 1.
    let mut budget = vec![Affine::constant(n, 1.0)];
    budget.extend(coords().into_iter().map(|(i, j, im)| Affine::var(n, lay.re(i, j) + usize::from(im), 1.0)));
    budget.push(Affine::var(n, 2, perp_norm));
    b.socs.push(budget);
    // Penalty epigraph: ||y||^2 <= s.
    let mut parts: Vec<Affine> = coords()
        .into_iter()
        .map(|(i, j, im)| {
            let v = if im { xb[(i, j)].im } else { xb[(i, j)].re };
            Affine::var(n, lay.re(i, j) + usize::from(im), 1.0).add(&Affine::constant(n, -v), 1.0)
        })
        .collect();
    parts.push(Affine::constant(n, perp_norm).add(&Affine::var(n, 2, perp_norm), -1.0));
    let s = Affine::var(n, 1, 1.0);
    let mut pen = vec![s.clone().add(&Affine::constant(n, 1.0), 1.0), s.add(&Affine::constant(n, -1.0), 1.0)];
    pen.extend(parts.into_iter().map(|p| p.scale(2.0)));
    b.socs.push(pen);
    add_sinr_surrogates(&mut b, &lay, prob, id_exp);
    let mut cost = vec![0.0; n];
    cost[0] = -1.0;
    cost[1] = c_pen;
    let x = b.solve(cost)?;
    Ok((lay.unpack(&x), x[2]))
}

/// Common harvested power across EHs, relative to `level_ref`.
fn common_level(prob: &PtlProblem, u: &CMatrix, level_ref: f64) -> f64 {
    let (_, q) = prob.slacks(u);
    q.iter().map(|v| v.norm_squared() / level_ref).fold(f64::INFINITY, f64::min)
}

/// Tops up a rate-feasible `U` (norm at most one) to unit norm with a common component
/// aimed at the EHs inside the null space of the ID channels, so every SINR is kept.
/// Starting from beams that leak next to nothing to the EHs would leave the harvested
/// power at a flat point of its surrogate.
fn spend_budget_on_ehs(prob: &PtlProblem, u: CMatrix) -> CMatrix {
    let (m, k) = (u.nrows(), u.ncols());
    let ids = span_basis(prob.id.iter(), m);
    let cols: Vec<CVector> = (0..k)
        .map(|j| {
            let g = &prob.eh[j % prob.eh.len()];
            let e = g - &ids * (ids.adjoint() * g);
            let n = e.norm();
            if n > 1e-12 * g.norm() {
                e / cr(n * (k as f64).sqrt())
            } else {
                CVector::zeros(m)
            }
        })
        .collect();
    let dir = cplx::from_columns(&cols, m);
    if !(dir.norm() > 0.0) {
        return &u / cr(u.norm());
    }
    let dir = &dir / cr(dir.norm());
    // ||U + b D||^2 = 1 with ||D|| = 1.
    let cross = u.iter().zip(dir.iter()).map(|(a, d)| (d.conj() * a).re).sum::<f64>();
    let rest = 1.0 - u.norm_squared();
    let b = -cross + (cross * cross + rest.max(0.0)).sqrt();
    u + dir * cr(b)
}

/// Maximizes the smallest harvested power under a transmit budget with the rate
/// targets met. The loop's analog precoder is kept and the digital stage re-optimized
/// for it; returns the beamformer and its smallest harvested power in watts.
pub fn run_ptl_maxmin_energy(
    channels: &ChannelSet,
    rate_targets_bps_hz: &[f64],
    budget_w: f64,
    sigma2: f64,
    eta: f64,
    config: &PtlConfig,
) -> Result<(HybridBeamformer, f64, ConvergenceTrace), PtlError> {
    check_dims(channels, config, true)?;
    let l = channels.h_eh.len();
    if l == 0 || !(budget_w > 0.0) {
        return Err(PtlError::InvalidInput("need at least one EH and a positive budget".into()));
    }
    let qos = QosSpec { rate_targets_bps_hz: rate_targets_bps_hz.to_vec(), energy_targets_w: vec![1.0; l] };
    // Precoders in units of the square root of the budget.
    let prob = PtlProblem::new(channels, &qos, sigma2, eta, budget_w)?;
    let level_ref = prob.eh.iter().map(|g| g.norm_squared()).fold(0.0, f64::max);
    let rate_only = PtlProblem { energy_targets: vec![f64::MIN_POSITIVE; l], ..prob.clone() };
    let u0 = initial_combined(&rate_only)?;
    if u0.norm_squared() > 1.0 {
        return Err(PtlError::Infeasible { trace: Box::default() });
    }
    let u0 = spend_budget_on_ehs(&prob, u0);
    let mut state = start_state(&prob, u0, config);
    let mut trace = ConvergenceTrace::default();
    let objective = |s: &PtlState| -common_level(&prob, &s.combined, level_ref) + s.residual().powi(2) / (2.0 * s.penalty);
    let mut u_step = |s: &mut PtlState, first: bool| -> bool {
        let c_pen = 1.0 / (2.0 * s.penalty);
        let target = &s.analog * &s.digital;
        let q = &prob.basis;
        let xb = q.adjoint() * &target;
        let perp = &target - q * &xb;
        let perp_norm = perp.norm();
        let mut best = objective(s);
        let (mut id_exp, mut eh_exp) = if first { ones_expansion(prob.num_ids(), l) } else { (s.id_slack.clone(), s.eh_slack.clone()) };
        let mut restored = !first;
        let mut used_restore = false;
        for _ in 0..config.max_sca_iter {
            let cand = solve_maxmin_surrogate(&prob, level_ref, c_pen, &xb, perp_norm, &id_exp, &eh_exp)
                .ok()
                .map(|(x, beta)| q * x + &perp * cr(beta));
            let accepted = cand.and_then(|u| {
                let mut trial = s.clone();
                trial.combined = u;
                let f = objective(&trial);
                (f <= best && prob.violation(&trial.combined) <= 1e-6).then_some((trial.combined, f))
            });
            match accepted {
                Some((u, f)) => {
                    let gain = best - f;
                    s.combined = u;
                    (s.id_slack, s.eh_slack) = prob.slacks(&s.combined);
                    id_exp = s.id_slack.clone();
                    eh_exp = s.eh_slack.clone();
                    best = f;
                    if gain <= config.sca_tol * f.abs().max(1e-12) {
                        break;
                    }
                }
                None if !restored => {
                    restored = true;
                    used_restore = true;
                    id_exp = s.id_slack.clone();
                    eh_exp = s.eh_slack.clone();
                }
                None => break,
            }
        }
        used_restore
    };
    two_layer_loop(&mut state, config, &mut trace, 1.0, &objective, &mut u_step);

    let eff = EffectiveChannels::from_analog(channels, &state.analog);
    let (beams, harvested) = match max_min_energy(&eff, rate_targets_bps_hz, budget_w, sigma2, eta) {
        Ok(v) => v,
        Err(SdrError::Infeasible) => return Err(PtlError::Infeasible { trace: Box::new(trace) }),
        Err(e) => return Err(e.into()),
    };
    let bf = HybridBeamformer::new(state.analog, &beams.w, beams.v_list, PTL);
    Ok((bf, harvested, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{assemble_channels, sample_scenario, SystemConfig};
    use crate::cplx::gain;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(r: usize, k: usize, seed: u64) -> CMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CMatrix::from_fn(r, k, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    fn fit(p: &CMatrix, w: &CMatrix, u: &CMatrix) -> f64 {
        (p * w - u).norm_squared()
    }

    fn small_setup(m: usize, seed: u64) -> (ChannelSet, QosSpec, SystemConfig) {
        let cfg = SystemConfig { num_antennas: m, num_rf_chains: 4, num_ids: 2, num_ehs: 1, ..Default::default() };
        let sc = sample_scenario(&cfg, 10.0, 10.0, 15.0, seed).unwrap();
        (assemble_channels(&sc, &cfg).unwrap(), QosSpec::uniform(2, 1, 1.0, 1e-4), cfg)
    }

    #[test]
    fn tangent_touches_and_underestimates() {
        let lay = CoordLayout { offset: 1, r: 3, k: 2 };
        let g = rand_matrix(3, 1, 1).column(0).into_owned();
        let d = c(0.7, -0.4);
        let eval = |e: &Affine, x: &[f64]| e.c0 + e.a.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
        for seed in 0..20 {
            let xm = rand_matrix(3, 2, seed + 10);
            let mut x = vec![0.0; lay.n()];
            for j in 0..2 {
                for i in 0..3 {
                    x[lay.re(i, j)] = xm[(i, j)].re;
                    x[lay.re(i, j) + 1] = xm[(i, j)].im;
                }
            }
            let v = g.dotc(&xm.column(1));
            let t = eval(&lay.tangent(&g, 1, d), &x);
            assert!(t <= v.norm_sqr() + 1e-12);
            // At v = d the bound is tight.
            let t_at = eval(&lay.tangent(&g, 1, v), &x);
            assert!((t_at - v.norm_sqr()).abs() < 1e-12);
        }
    }

    #[test]
    fn digital_update_hand_cases() {
        let p = CMatrix::from_column_slice(2, 1, &[cr(1.0), cr(1.0)]);
        let u = CMatrix::from_column_slice(2, 1, &[cr(2.0), cr(0.0)]);
        assert!((update_digital(&p, &u)[(0, 0)] - cr(1.0)).norm() < 1e-14);

        // Orthogonal columns: each entry is a separate projection.
        let p = CMatrix::from_row_slice(2, 2, &[cr(1.0), cr(1.0), cr(1.0), cr(-1.0)]);
        let u = CMatrix::from_column_slice(2, 1, &[c(3.0, 1.0), c(1.0, 0.0)]);
        let w = update_digital(&p, &u);
        assert!((w[(0, 0)] - c(2.0, 0.5)).norm() < 1e-14);
        assert!((w[(1, 0)] - c(1.0, 0.5)).norm() < 1e-14);

        let p = random_analog(6, 3, 2);
        let w0 = rand_matrix(3, 2, 3);
        assert!((update_digital(&p, &(&p * &w0)) - w0).norm() < 1e-12);
    }

    #[test]
    fn digital_update_survives_repeated_columns() {
        let col = random_analog(5, 1, 4);
        let p = CMatrix::from_fn(5, 2, |i, _| col[(i, 0)]);
        let u = rand_matrix(5, 1, 5);
        let w = update_digital(&p, &u);
        assert!(w.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
        // Any split across the copies fits as well as the projection onto the column.
        let a = col.column(0).into_owned();
        let best = (&u - &a * (a.dotc(&u.column(0)) / cr(5.0))).norm_squared();
        assert!(fit(&p, &w, &u) <= best * (1.0 + 1e-6) + 1e-12);
    }

    #[test]
    fn entry_update_normalizes_psi() {
        let mut p = CMatrix::from_element(1, 1, cr(1.0));
        let y = CMatrix::from_element(1, 1, cr(2.0));
        let z = CMatrix::from_element(1, 1, c(3.0, 4.0));
        update_analog_entry(&mut p, &y, &z, 0, 0);
        assert!((p[(0, 0)] - c(0.6, 0.8)).norm() < 1e-15);
    }

    #[test]
    fn single_chain_aligns_phases() {
        let u = rand_matrix(6, 2, 7);
        let w = rand_matrix(1, 2, 8);
        let p = update_analog_elementwise(&random_analog(6, 1, 9), &w, &u);
        for i in 0..6 {
            let z: C64 = (0..2).map(|k| u[(i, k)] * w[(0, k)].conj()).sum();
            assert!((p[(i, 0)] - z / cr(z.norm())).norm() < 1e-12);
        }
    }

    #[test]
    fn analog_sweep_never_increases_the_fit() {
        for seed in 0..10 {
            let u = rand_matrix(8, 3, seed);
            let w = rand_matrix(4, 3, seed + 100);
            let mut p = random_analog(8, 4, seed);
            let mut last = fit(&p, &w, &u);
            for _ in 0..5 {
                p = update_analog_elementwise(&p, &w, &u);
                let f = fit(&p, &w, &u);
                assert!(f <= last * (1.0 + 1e-12), "seed {seed}: {f} > {last}");
                last = f;
            }
            assert!(p.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn fit_gradient_matches_finite_differences() {
        let u = rand_matrix(5, 2, 1);
        let w = rand_matrix(3, 2, 2);
        let p = random_analog(5, 3, 3);
        let d = rand_matrix(5, 3, 4);
        let grad = &p * (&w * w.adjoint()) - &u * w.adjoint();
        let predicted = 2.0 * d.iter().zip(grad.iter()).map(|(a, b)| (a.conj() * b).re).sum::<f64>();
        let h = 1e-6;
        let numeric = (fit(&(&p + &d * cr(h)), &w, &u) - fit(&(&p - &d * cr(h)), &w, &u)) / (2.0 * h);
        assert!((numeric - predicted).abs() <= 1e-6 * predicted.abs().max(1.0));
    }

    #[test]
    fn huge_penalty_single_id_is_mrt_at_the_target() {
        let h = CVector::from_vec(vec![c(1.0, 0.2), c(-0.5, 0.3), c(0.1, 0.9), c(0.0, -0.4)]) * cr(1e-4);
        let ch = ChannelSet { h_id: vec![h.clone()], h_eh: vec![] };
        let qos = QosSpec { rate_targets_bps_hz: vec![2.0], energy_targets_w: vec![] };
        let sigma2 = 1e-10;
        let prob = PtlProblem::new(&ch, &qos, sigma2, 0.5, 1.0).unwrap();
        let u0 = initial_combined(&prob).unwrap();
        let analog = random_analog(4, 1, 0);
        let digital = update_digital(&analog, &u0);
        let (id_slack, eh_slack) = prob.slacks(&u0);
        let mut s = PtlState { combined: u0, analog, digital, id_slack, eh_slack, penalty: 1e12, inner_iter: 0, outer_iter: 0 };
        sca_update_u(&mut s, &prob, 1e-12, 200, true);
        let u = s.combined.column(0).into_owned();
        let hn = &prob.id[0];
        assert!(gain(hn, &u) / (hn.norm_squared() * u.norm_squared()) > 1.0 - 1e-6);
        let want = 3.0 / hn.norm_squared();
        assert!((u.norm_squared() - want).abs() <= 1e-5 * want, "{} vs {want}", u.norm_squared());
        assert!(prob.violation(&s.combined) <= 1e-6);
    }

    #[test]
    fn sca_step_never_increases_the_objective() {
        let (ch, qos, cfg) = small_setup(16, 3);
        let prob = PtlProblem::new(&ch, &qos, cfg.noise_power_w, 0.5, 1.0).unwrap();
        let u0 = initial_combined(&prob).unwrap();
        let scale = u0.norm_squared();
        let prob = PtlProblem::new(&ch, &qos, cfg.noise_power_w, 0.5, scale).unwrap();
        let mut s = start_state(&prob, u0 / cr(scale.sqrt()), &PtlConfig { num_rf_chains: 4, ..Default::default() });
        for first in [true, false, false] {
            let before = s.objective();
            sca_update_u(&mut s, &prob, 1e-3, 50, first);
            assert!(s.objective() <= before);
            assert!(prob.violation(&s.combined) <= 1e-6);
        }
    }

    #[test]
    fn run_is_deterministic_and_feasible() {
        let (ch, qos, cfg) = small_setup(16, 1);
        let pc = PtlConfig { num_rf_chains: 4, seed: 3, ..Default::default() };
        let a = run_ptl(&ch, &qos, cfg.noise_power_w, 0.5, &pc).unwrap();
        let b = run_ptl(&ch, &qos, cfg.noise_power_w, 0.5, &pc).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.beamformer.analog, b.beamformer.analog);
        assert!(a.beamformer.modulus_error() < 1e-12);
        assert!(a.trace.worst_increase() <= 1e-9);
        let fd = crate::two_stage::fully_digital_design(&ch, &qos, cfg.noise_power_w, 0.5).unwrap();
        assert!(a.beamformer.tx_power() >= fd.tx_power() * (1.0 - 1e-6));
        let eff = EffectiveChannels::from_analog(&ch, &a.beamformer.analog);
        let w: Vec<CMatrix> = a.beamformer.digital.column_iter().map(|x| cplx::outer(&x.into_owned())).collect();
        let v = a.beamformer.energy_beams.iter().fold(CMatrix::zeros(4, 4), |acc, e| acc + cplx::outer(e));
        assert!(eff.violation(&qos, &w, &v, cfg.noise_power_w, 0.5) <= 1e-6);
        let mut csv = Vec::new();
        a.trace.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("outer_iter,inner_iter,objective,penalty_residual,tx_power_w,rho"));
        assert_eq!(text.lines().count(), a.trace.rows.len() + 1);
    }

    #[test]
    fn rejects_bad_dimensions_and_config() {
        let (ch, qos, cfg) = small_setup(16, 1);
        let s2 = cfg.noise_power_w;
        let few = PtlConfig { num_rf_chains: 2, ..Default::default() };
        assert!(matches!(run_ptl(&ch, &qos, s2, 0.5, &few), Err(PtlError::InvalidInput(_))));
        let bad = PtlConfig { num_rf_chains: 4, penalty_decrease: 1.0, ..Default::default() };
        assert!(matches!(run_ptl(&ch, &qos, s2, 0.5, &bad), Err(PtlError::InvalidInput(_))));
        let no_ids = ChannelSet { h_id: vec![], h_eh: ch.h_eh.clone() };
        let qos0 = QosSpec::uniform(0, 1, 1.0, 1e-4);
        let ok = PtlConfig { num_rf_chains: 4, ..Default::default() };
        assert!(matches!(run_ptl(&no_ids, &qos0, s2, 0.5, &ok), Err(PtlError::InvalidInput(_))));
        let parsed: Result<PtlConfig, _> = serde_json::from_str(r#"{"num_rf_chains": 4, "bogus": 1}"#);
        assert!(parsed.is_err());
    }

    #[test]
    fn max_min_respects_budget_and_fully_digital_bound() {
        let (ch, _, cfg) = small_setup(16, 2);
        let s2 = cfg.noise_power_w;
        let pc = PtlConfig { num_rf_chains: 4, ..Default::default() };
        let (bf, got, _) = run_ptl_maxmin_energy(&ch, &[1.0, 1.0], 1.0, s2, 0.5, &pc).unwrap();
        assert!(bf.tx_power() <= 1.0 + 1e-6);
        assert!(got > 0.0);
        let (_, bound) = max_min_energy(&EffectiveChannels::fully_digital(&ch), &[1.0, 1.0], 1.0, s2, 0.5).unwrap();
        assert!(got <= bound * (1.0 + 1e-6), "{got} above {bound}");
    }
}
