//! Optimal digital beamformers for a fixed analog precoder.
//!
//! The covariance relaxation is solved as a small SDP, then turned back into one
//! beam per ID: a rank-one construction per ID, absorption of the leftover energy
//! covariance into the information covariances, and rank reduction where needed.
//! The end result carries no dedicated energy beams.

use nalgebra::{DMatrix, SVD};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::ChannelSet;
use crate::cplx::{self, cr, gain, herm_eig, outer, quad, trace_prod, CMatrix, CVector};
use crate::sdp::{HermitianProgram, ProgramFailure, Row};
use nfswipt_conic::{hermitian_from_params, trace_coefficients};

/// Relative eigenvalue threshold used for every numerical rank decision.
pub const RANK_TOL: f64 = 1e-6;
/// Relative tolerance at which constraints count as satisfied.
pub const FEASIBILITY_TOL: f64 = 1e-6;
const SOLVER_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdrError {
    #[error("QoS and energy targets cannot be met")]
    Infeasible,
    #[error("conic solver did not converge")]
    NotConverged,
    #[error("ID {0} receives no signal from its covariance")]
    DegenerateDirection(usize),
    #[error("absorption weights must be nonnegative and sum to one")]
    InvalidWeights,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl From<ProgramFailure> for SdrError {
    fn from(f: ProgramFailure) -> Self {
        match f {
            ProgramFailure::Infeasible | ProgramFailure::Unbounded => SdrError::Infeasible,
            ProgramFailure::NotConverged => SdrError::NotConverged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QosSpec {
    pub rate_targets_bps_hz: Vec<f64>,
    pub energy_targets_w: Vec<f64>,
}

impl QosSpec {
    pub fn uniform(num_ids: usize, num_ehs: usize, rate_bps_hz: f64, energy_w: f64) -> Self {
        QosSpec { rate_targets_bps_hz: vec![rate_bps_hz; num_ids], energy_targets_w: vec![energy_w; num_ehs] }
    }

    pub fn sinr_targets(&self) -> Vec<f64> {
        self.rate_targets_bps_hz.iter().map(|c| 2f64.powf(*c) - 1.0).collect()
    }

    pub fn validate(&self, num_ids: usize, num_ehs: usize) -> Result<(), SdrError> {
        if self.rate_targets_bps_hz.len() != num_ids || self.energy_targets_w.len() != num_ehs {
            return Err(SdrError::InvalidInput("target counts do not match the channels".into()));
        }
        if self.rate_targets_bps_hz.iter().chain(&self.energy_targets_w).any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(SdrError::InvalidInput("targets must be positive".into()));
        }
        Ok(())
    }
}

/// Channels seen through the analog precoder, plus its Gram matrix.
#[derive(Debug, Clone)]
pub struct EffectiveChannels {
    pub id: Vec<CVector>,
    pub eh: Vec<CVector>,
    pub gram: CMatrix,
}

impl EffectiveChannels {
    pub fn from_analog(ch: &ChannelSet, p: &CMatrix) -> Self {
        let ph = p.adjoint();
        EffectiveChannels {
            id: ch.h_id.iter().map(|h| &ph * h).collect(),
            eh: ch.h_eh.iter().map(|h| &ph * h).collect(),
            gram: &ph * p,
        }
    }

    /// One RF chain per antenna: identity precoder.
    pub fn fully_digital(ch: &ChannelSet) -> Self {
        let m = ch.num_antennas();
        EffectiveChannels { id: ch.h_id.clone(), eh: ch.h_eh.clone(), gram: CMatrix::identity(m, m) }
    }

    pub fn dim(&self) -> usize {
        self.gram.nrows()
    }

    pub fn num_ids(&self) -> usize {
        self.id.len()
    }

    pub fn num_ehs(&self) -> usize {
        self.eh.len()
    }

    fn check(&self) -> Result<(), SdrError> {
        let n = self.dim();
        if self.gram.ncols() != n || self.id.iter().chain(&self.eh).any(|h| h.len() != n) {
            return Err(SdrError::InvalidInput("channel and Gram dimensions differ".into()));
        }
        let finite = |m: &CMatrix| m.iter().all(|z| z.re.is_finite() && z.im.is_finite());
        if !finite(&self.gram) || self.id.iter().chain(&self.eh).any(|h| h.iter().any(|z| !(z.re.is_finite() && z.im.is_finite()))) {
            return Err(SdrError::InvalidInput("non-finite channel data".into()));
        }
        Ok(())
    }

    /// Coefficient matrices of the constraints seen by covariance `k` once the energy
    /// covariance is gone: SINR rows first, then harvested-power rows.
    pub fn constraint_matrices(&self, sinr: &[f64], k: usize) -> Vec<CMatrix> {
        let mut out = Vec::with_capacity(self.num_ids() + self.num_ehs());
        for (n, h) in self.id.iter().enumerate() {
            let hh = outer(h);
            out.push(if n == k { hh * cr(1.0 / sinr[n]) } else { -hh });
        }
        for g in &self.eh {
            out.push(outer(g));
        }
        out
    }

    pub fn sinr(&self, w: &[CMatrix], v: &CMatrix, sigma2: f64) -> Vec<f64> {
        self.id
            .iter()
            .enumerate()
            .map(|(k, h)| {
                let sig = quad(&w[k], h);
                let total: f64 = w.iter().map(|x| quad(x, h)).sum::<f64>() + quad(v, h);
                sig / (total - sig + sigma2)
            })
            .collect()
    }

    pub fn harvested(&self, w: &[CMatrix], v: &CMatrix, eta: f64) -> Vec<f64> {
        self.eh.iter().map(|g| eta * (w.iter().map(|x| quad(x, g)).sum::<f64>() + quad(v, g))).collect()
    }

    /// Largest relative shortfall over all SINR and harvested-power targets (0 when met).
    pub fn violation(&self, qos: &QosSpec, w: &[CMatrix], v: &CMatrix, sigma2: f64, eta: f64) -> f64 {
        let gam = qos.sinr_targets();
        let s = self.sinr(w, v, sigma2);
        let e = self.harvested(w, v, eta);
        let a = s.iter().zip(&gam).map(|(s, g)| ((g - s) / g).max(0.0));
        let b = e.iter().zip(&qos.energy_targets_w).map(|(e, q)| ((q - e) / q).max(0.0));
        a.chain(b).fold(0.0, f64::max)
    }

    pub fn power(&self, w: &[CMatrix], v: &CMatrix) -> f64 {
        w.iter().map(|x| trace_prod(&self.gram, x)).sum::<f64>() + trace_prod(&self.gram, v)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovarianceSolution {
    #[serde(with = "cplx::matrix_vec")]
    pub w: Vec<CMatrix>,
    #[serde(with = "cplx::matrix")]
    pub v: CMatrix,
    pub objective_w: f64,
}

impl CovarianceSolution {
    fn with_objective(w: Vec<CMatrix>, v: CMatrix, ch: &EffectiveChannels) -> Self {
        let objective_w = ch.power(&w, &v);
        CovarianceSolution { w, v, objective_w }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DigitalBeamformers {
    #[serde(with = "cplx::vector_vec")]
    pub w: Vec<CVector>,
    #[serde(with = "cplx::vector_vec")]
    pub v_list: Vec<CVector>,
}

impl DigitalBeamformers {
    pub fn covariances(&self) -> (Vec<CMatrix>, CMatrix) {
        let n = self.w.first().or(self.v_list.first()).map_or(0, |x| x.len());
        let w = self.w.iter().map(outer).collect();
        let mut v = CMatrix::zeros(n, n);
        for x in &self.v_list {
            v += outer(x);
        }
        (w, v)
    }
}

/// Orthonormal-in-Gram coordinates: columns `T` with `T^H P T = I` spanning the
/// whitened channel directions. Optimal covariances live in this span.
pub(crate) fn reduced_basis(ch: &EffectiveChannels) -> CMatrix {
    let (vals, vecs) = herm_eig(&ch.gram);
    let lmax = vals.first().copied().unwrap_or(0.0).max(0.0);
    let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > 1e-10 * lmax).collect();
    let mut b = CMatrix::zeros(ch.dim(), keep.len());
    for (c, &i) in keep.iter().enumerate() {
        b.set_column(c, &(vecs.column(i) * cr(1.0 / vals[i].sqrt())));
    }
    let bh = b.adjoint();
    let g: Vec<CVector> = ch.id.iter().chain(&ch.eh).map(|h| &bh * h).collect();
    if g.is_empty() || keep.is_empty() {
        return CMatrix::zeros(ch.dim(), 0);
    }
    let gm = cplx::from_columns(&g, keep.len());
    let svd = SVD::new(gm, true, false);
    let u = svd.u.expect("left vectors requested");
    let smax = svd.singular_values.iter().fold(0.0f64, |a, &s| a.max(s));
    let cols: Vec<usize> = (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > 1e-10 * smax).collect();
    let mut q = CMatrix::zeros(keep.len(), cols.len());
    for (c, &i) in cols.iter().enumerate() {
        q.set_column(c, &u.column(i));
    }
    b * q
}

/// Nearest PSD matrix in Frobenius norm: negative eigenvalues set to zero.
fn psd_part(x: &CMatrix) -> CMatrix {
    let (vals, vecs) = herm_eig(x);
    let d = CVector::from_iterator(vals.len(), vals.iter().map(|&l| cr(l.max(0.0))));
    &vecs * CMatrix::from_diagonal(&d) * vecs.adjoint()
}

fn solve_relaxed(
    ch: &EffectiveChannels,
    qos: &QosSpec,
    sigma2: f64,
    eta: f64,
    with_energy: bool,
) -> Result<CovarianceSolution, SdrError> {
    ch.check()?;
    qos.validate(ch.num_ids(), ch.num_ehs())?;
    if !(sigma2 > 0.0 && eta > 0.0 && eta <= 1.0) {
        return Err(SdrError::InvalidInput("noise power and efficiency must be positive".into()));
    }
    let k_ids = ch.num_ids();
    let with_energy = with_energy || k_ids == 0;
    let t = reduced_basis(ch);
    let q = t.ncols();
    let th = t.adjoint();
    let e_id: Vec<CMatrix> = ch.id.iter().map(|h| outer(&(&th * h))).collect();
    let e_eh: Vec<CMatrix> = ch.eh.iter().map(|h| outer(&(&th * h))).collect();
    let nblocks = k_ids + usize::from(with_energy);
    let gam = qos.sinr_targets();

    let mut rows = Vec::new();
    for k in 0..k_ids {
        let mut blocks = Vec::with_capacity(nblocks);
        for b in 0..nblocks {
            let coef = if b == k { 1.0 / gam[k] } else { -1.0 };
            blocks.push((b, &e_id[k] * cr(coef)));
        }
        rows.push(Row { blocks, rhs: sigma2, ..Default::default() });
    }
    for (l, e) in e_eh.iter().enumerate() {
        let blocks = (0..nblocks).map(|b| (b, e.clone())).collect();
        rows.push(Row { blocks, rhs: qos.energy_targets_w[l] / eta, ..Default::default() });
    }
    let program = HermitianProgram {
        block_dims: vec![q; nblocks],
        num_scalars: 0,
        objective_blocks: vec![Some(CMatrix::identity(q, q)); nblocks],
        objective_scalars: vec![],
        rows,
    };
    let sol = program.solve(SOLVER_TOL)?;
    // The solver's primal blocks can sit a hair outside the cone; clip before lifting.
    let lift = |x: &CMatrix| cplx::hermitian_part(&(&t * psd_part(x) * &th));
    let w: Vec<CMatrix> = sol.blocks[..k_ids].iter().map(lift).collect();
    let v = if with_energy { lift(&sol.blocks[k_ids]) } else { CMatrix::zeros(ch.dim(), ch.dim()) };
    Ok(CovarianceSolution::with_objective(w, v, ch))
}

/// Covariance relaxation with a free energy covariance.
pub fn solve_relaxed_p12(ch: &EffectiveChannels, qos: &QosSpec, sigma2: f64, eta: f64) -> Result<CovarianceSolution, SdrError> {
    solve_relaxed(ch, qos, sigma2, eta, true)
}

/// Same relaxation with the energy covariance pinned to zero.
pub fn solve_relaxed_without_energy(
    ch: &EffectiveChannels,
    qos: &QosSpec,
    sigma2: f64,
    eta: f64,
) -> Result<CovarianceSolution, SdrError> {
    solve_relaxed(ch, qos, sigma2, eta, false)
}

/// Rank-one beam per ID: `w_k = W_k h_k / sqrt(h_k^H W_k h_k)`.
pub fn rank_one_beams(sol: &CovarianceSolution, ch: &EffectiveChannels) -> Result<Vec<CVector>, SdrError> {
    sol.w
        .iter()
        .zip(&ch.id)
        .enumerate()
        .map(|(k, (w, h))| {
            let t = w * h;
            let s = h.dotc(&t).re;
            if !(s > 1e-14 * w.norm() * h.norm_squared()) {
                return Err(SdrError::DegenerateDirection(k));
            }
            Ok(t * cr(1.0 / s.sqrt()))
        })
        .collect()
}

/// Replaces each `W_k` by its rank-one counterpart and moves the remainder into `V`.
pub fn construct_rank_one_prop1(sol: &CovarianceSolution, ch: &EffectiveChannels) -> Result<CovarianceSolution, SdrError> {
    let beams = rank_one_beams(sol, ch)?;
    let mut v = sol.v.clone();
    let mut w = Vec::with_capacity(beams.len());
    for (wk, b) in sol.w.iter().zip(&beams) {
        let hat = outer(b);
        v += wk - &hat;
        w.push(hat);
    }
    Ok(CovarianceSolution::with_objective(w, cplx::hermitian_part(&v), ch))
}

/// Folds the energy covariance into the information covariances with weights `alpha`.
pub fn absorb_energy_beams_prop2(sol: &CovarianceSolution, alpha: &[f64]) -> Result<CovarianceSolution, SdrError> {
    if alpha.len() != sol.w.len() || alpha.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
        return Err(SdrError::InvalidWeights);
    }
    if (alpha.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(SdrError::InvalidWeights);
    }
    let w = sol.w.iter().zip(alpha).map(|(wk, a)| wk + &sol.v * cr(*a)).collect();
    let n = sol.v.nrows();
    Ok(CovarianceSolution { w, v: CMatrix::zeros(n, n), objective_w: sol.objective_w })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankReductionReport {
    pub steps: usize,
    pub ranks_before: Vec<usize>,
    pub ranks_after: Vec<usize>,
    /// Some covariance kept rank above one because no rank-reducing direction exists.
    pub stalled: bool,
}

pub(crate) fn global_scale(mats: &[&CMatrix]) -> f64 {
    mats.iter().map(|m| herm_eig(m).0.first().copied().unwrap_or(0.0)).fold(0.0, f64::max)
}

fn numerical_rank(m: &CMatrix, thresh: f64) -> usize {
    herm_eig(m).0.iter().filter(|&&l| l > thresh).count()
}

/// Real nullspace basis of `rows` (each of length `n`), relative tolerance `tol`.
fn nullspace(rows: &[Vec<f64>], n: usize, tol: f64) -> Vec<Vec<f64>> {
    let m = rows.len().max(n);
    let mut a = DMatrix::zeros(m, n);
    for (i, r) in rows.iter().enumerate() {
        for j in 0..n {
            a[(i, j)] = r[j];
        }
    }
    let svd = SVD::new(a, false, true);
    let vt = svd.v_t.expect("right vectors requested");
    let smax = svd.singular_values.iter().fold(0.0f64, |a, &s| a.max(s));
    (0..n)
        .filter(|&i| svd.singular_values[i] <= tol * smax.max(1e-300))
        .map(|i| vt.row(i).iter().copied().collect())
        .collect()
}

/// Lowers the rank of every information covariance while keeping all constraint
/// values fixed.
pub fn rank_reduce_prop3(
    sol: &CovarianceSolution,
    ch: &EffectiveChannels,
    qos: &QosSpec,
) -> Result<(CovarianceSolution, RankReductionReport), SdrError> {
    let gam = qos.sinr_targets();
    let scale = global_scale(&sol.w.iter().collect::<Vec<_>>());
    let thresh = RANK_TOL * scale;
    let mut report = RankReductionReport::default();
    let mut out = sol.w.clone();
    for (k, wk) in out.iter_mut().enumerate() {
        let mats = ch.constraint_matrices(&gam, k);
        report.ranks_before.push(numerical_rank(wk, thresh));
        loop {
            let (vals, vecs) = herm_eig(wk);
            let b = vals.iter().filter(|&&l| l > thresh).count();
            if b <= 1 {
                break;
            }
            let mut t = CMatrix::zeros(wk.nrows(), b);
            for c in 0..b {
                t.set_column(c, &(vecs.column(c) * cr(vals[c].sqrt())));
            }
            let th = t.adjoint();
            let rows: Vec<Vec<f64>> = mats
                .iter()
                .filter_map(|a| {
                    let r = trace_coefficients(&(&th * a * &t));
                    let nrm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                    (nrm > 0.0).then(|| r.into_iter().map(|v| v / nrm).collect())
                })
                .collect();
            let basis = nullspace(&rows, b * b, 1e-9);
            let best = basis
                .iter()
                .map(|x| {
                    let m = hermitian_from_params(x, b);
                    let ev = herm_eig(&m).0;
                    let delta = ev.iter().copied().fold(0.0f64, |a, e| if e.abs() > a.abs() { e } else { a });
                    (m, delta)
                })
                .fold(None::<(CMatrix, f64)>, |acc, (m, d)| match acc {
                    Some((_, bd)) if bd.abs() >= d.abs() => acc,
                    _ => Some((m, d)),
                });
            let Some((m, delta)) = best.filter(|(_, d)| d.abs() > 0.0) else {
                report.stalled = true;
                break;
            };
            // Keep the sub-threshold tail so constraint values are untouched.
            let tail = &*wk - &t * &th;
            let step = CMatrix::identity(b, b) - m * cr(1.0 / delta);
            *wk = cplx::hermitian_part(&(&t * step * &th + tail));
            report.steps += 1;
        }
        report.ranks_after.push(numerical_rank(wk, thresh));
    }
    let n = sol.v.nrows();
    Ok((CovarianceSolution::with_objective(out, CMatrix::zeros(n, n), ch), report))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DigitalDesign {
    pub beamformers: DigitalBeamformers,
    pub relaxed_objective: f64,
    /// `sum ||P w_k||^2 + sum ||P v||^2` of the returned beams.
    pub tx_power: f64,
    /// Rank of the energy covariance left after the rank-one construction.
    pub energy_rank: usize,
    /// Trace of that energy covariance.
    pub energy_trace: f64,
    /// Its transmit power `Tr(P^H P V)`.
    pub energy_power: f64,
    pub reduction: RankReductionReport,
    /// Rank reduction stalled and the energy covariance was returned as beams.
    pub used_energy_beams: bool,
    pub violation: f64,
}

pub(crate) fn eigen_beams(m: &CMatrix, thresh: f64) -> Vec<CVector> {
    let (vals, vecs) = herm_eig(m);
    (0..vals.len()).filter(|&i| vals[i] > thresh).map(|i| vecs.column(i) * cr(vals[i].sqrt())).collect()
}

/// Relaxation, rank-one construction, absorption with uniform weights, rank reduction
/// and beam extraction.
pub fn design_digital(ch: &EffectiveChannels, qos: &QosSpec, sigma2: f64, eta: f64) -> Result<DigitalDesign, SdrError> {
    let relaxed = solve_relaxed_p12(ch, qos, sigma2, eta)?;
    let k = ch.num_ids();
    let prop1 = if k > 0 { construct_rank_one_prop1(&relaxed, ch)? } else { relaxed.clone() };
    let mut blocks: Vec<&CMatrix> = prop1.w.iter().collect();
    blocks.push(&prop1.v);
    let thresh = RANK_TOL * global_scale(&blocks);
    let energy_rank = numerical_rank(&prop1.v, thresh);
    let energy_trace = prop1.v.trace().re;
    let energy_power = trace_prod(&ch.gram, &prop1.v);

    let (beamformers, reduction, used_energy_beams) = if k == 0 {
        let v_list = eigen_beams(&prop1.v, thresh);
        (DigitalBeamformers { w: vec![], v_list }, RankReductionReport::default(), true)
    } else {
        let mut prop1 = prop1;
        if energy_rank == 0 {
            // Below the rank threshold the energy covariance is solver noise.
            prop1.v.fill(cr(0.0));
        }
        let alpha = vec![1.0 / k as f64; k];
        let absorbed = absorb_energy_beams_prop2(&prop1, &alpha)?;
        let (reduced, report) = rank_reduce_prop3(&absorbed, ch, qos)?;
        if report.ranks_after.iter().all(|&r| r <= 1) {
            // Same formula as the rank-one construction: keeps each ID's signal exact
            // where an eigenvector would blur a weak component.
            let mut w = rank_one_beams(&reduced, ch)?;
            restore_dropped_tail(ch, qos, &mut w, sigma2, eta);
            (DigitalBeamformers { w, v_list: vec![] }, report, false)
        } else {
            let w = rank_one_beams(&relaxed, ch)?;
            let v_list = eigen_beams(&prop1.v, thresh);
            (DigitalBeamformers { w, v_list }, report, true)
        }
    };
    let (w, v) = beamformers.covariances();
    let v = if v.nrows() == 0 { CMatrix::zeros(ch.dim(), ch.dim()) } else { v };
    let tx_power = ch.power(&w, &v);
    let violation = ch.violation(qos, &w, &v, sigma2, eta);
    Ok(DigitalDesign {
        beamformers,
        relaxed_objective: relaxed.objective_w,
        tx_power,
        energy_rank,
        energy_trace,
        energy_power,
        reduction,
        used_energy_beams,
        violation,
    })
}

/// Largest common harvested power under a transmit power budget with the rate targets
/// met, for a fixed effective channel. The relaxation gives the optimal level; the
/// beams come from [`design_digital`] at that level, scaled up to spend the budget.
pub fn max_min_energy(
    ch: &EffectiveChannels,
    rate_targets_bps_hz: &[f64],
    budget_w: f64,
    sigma2: f64,
    eta: f64,
) -> Result<(DigitalBeamformers, f64), SdrError> {
    ch.check()?;
    let (k_ids, l_ehs) = (ch.num_ids(), ch.num_ehs());
    if rate_targets_bps_hz.len() != k_ids || l_ehs == 0 {
        return Err(SdrError::InvalidInput("need one rate per ID and at least one EH".into()));
    }
    if !(budget_w > 0.0 && sigma2 > 0.0 && eta > 0.0 && eta <= 1.0) {
        return Err(SdrError::InvalidInput("budget, noise power and efficiency must be positive".into()));
    }
    let probe = QosSpec { rate_targets_bps_hz: rate_targets_bps_hz.to_vec(), energy_targets_w: vec![1.0; l_ehs] };
    probe.validate(k_ids, l_ehs)?;
    let gam = probe.sinr_targets();
    let t = reduced_basis(ch);
    let q = t.ncols();
    let th = t.adjoint();
    let e_id: Vec<CMatrix> = ch.id.iter().map(|h| outer(&(&th * h))).collect();
    let e_eh: Vec<CMatrix> = ch.eh.iter().map(|h| outer(&(&th * h))).collect();
    let nblocks = k_ids + 1;
    // The common level is measured against the best single-EH harvest within budget.
    let level_ref = eta * budget_w * e_eh.iter().map(|e| e.trace().re).fold(0.0, f64::max);
    if !(level_ref > 0.0) {
        return Err(SdrError::Infeasible);
    }

    let mut rows = Vec::new();
    for k in 0..k_ids {
        let blocks = (0..nblocks).map(|b| (b, &e_id[k] * cr(if b == k { 1.0 / gam[k] } else { -1.0 }))).collect();
        rows.push(Row { blocks, rhs: sigma2, ..Default::default() });
    }
    for e in &e_eh {
        let blocks = (0..nblocks).map(|b| (b, e * cr(eta / level_ref))).collect();
        rows.push(Row { blocks, scalars: vec![(0, -1.0)], rhs: 0.0 });
    }
    let blocks = (0..nblocks).map(|b| (b, CMatrix::identity(q, q) * cr(-1.0))).collect();
    rows.push(Row { blocks, rhs: -budget_w, ..Default::default() });
    let program = HermitianProgram {
        block_dims: vec![q; nblocks],
        num_scalars: 1,
        objective_blocks: vec![None; nblocks],
        objective_scalars: vec![-1.0],
        rows,
    };
    let sol = program.solve(SOLVER_TOL)?;
    let level = sol.scalars[0] * level_ref;
    if !(level > 0.0) {
        return Err(SdrError::Infeasible);
    }
    // Back off slightly so the power-minimal design lands inside the budget.
    let qos = QosSpec { energy_targets_w: vec![level * (1.0 - 1e-6); l_ehs], ..probe };
    let design = design_digital(ch, &qos, sigma2, eta)?;
    let mut beams = design.beamformers;
    let scale = cr((budget_w / design.tx_power).sqrt());
    beams.w.iter_mut().chain(beams.v_list.iter_mut()).for_each(|x| *x *= scale);
    let (w, v) = beams.covariances();
    let v = if v.nrows() == 0 { CMatrix::zeros(ch.dim(), ch.dim()) } else { v };
    let harvested = ch.harvested(&w, &v, eta).into_iter().fold(f64::INFINITY, f64::min);
    Ok((beams, harvested))
}

/// Dropping the sub-threshold tail of the covariances loses a sliver of harvested
/// power. A common rescale of all beams hands that power back: harvested power grows
/// with the scale and no SINR can fall. Only corrections below `MAX_RESCALE` are applied,
/// and only when some target is missed by more than `FEASIBILITY_TOL`: where interference
/// dominates the noise, lifting an SINR by a relative 1e-9 through a common scale costs
/// around 1e-4 of the power.
const MAX_RESCALE: f64 = 1e-4;

fn restore_dropped_tail(ch: &EffectiveChannels, qos: &QosSpec, w: &mut [CVector], sigma2: f64, eta: f64) {
    let covs: Vec<CMatrix> = w.iter().map(outer).collect();
    let n = ch.dim();
    if ch.violation(qos, &covs, &CMatrix::zeros(n, n), sigma2, eta) <= FEASIBILITY_TOL {
        return;
    }
    let mut need: f64 = 1.0;
    for (g, q) in ch.eh.iter().zip(&qos.energy_targets_w) {
        let e = eta * w.iter().map(|x| gain(g, x)).sum::<f64>();
        if e > 0.0 {
            need = need.max(q / e);
        }
    }
    for ((k, h), gam) in ch.id.iter().enumerate().zip(qos.sinr_targets()) {
        let sig = gain(h, &w[k]);
        let interf = w.iter().map(|x| gain(h, x)).sum::<f64>() - sig;
        let margin = sig - gam * interf;
        if margin > 0.0 {
            need = need.max(gam * sigma2 / margin);
        }
    }
    if need > 1.0 && need - 1.0 <= MAX_RESCALE {
        let s = cr(need.sqrt());
        w.iter_mut().for_each(|x| *x *= s);
    }
}
