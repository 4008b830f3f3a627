//! Homogeneous self-dual embedding, Mehrotra predictor-corrector.

use nalgebra::DVector;

use crate::cones::{self, Cone, Scaling};
use crate::kkt::{KktSolver, Scalings};
use crate::{ConicProblem, ConicSolution, IterLog, Settings, Status};

struct Blocks<'a> {
    cones: &'a [Cone],
    offsets: Vec<usize>,
}

impl<'a> Blocks<'a> {
    fn new(cones: &'a [Cone]) -> Self {
        let mut offsets = Vec::with_capacity(cones.len());
        let mut off = 0;
        for k in cones {
            offsets.push(off);
            off += k.dim();
        }
        Blocks { cones, offsets }
    }

    fn iter(&self) -> impl Iterator<Item = (&Cone, std::ops::Range<usize>)> {
        self.cones
            .iter()
            .zip(&self.offsets)
            .map(|(k, &o)| (k, o..o + k.dim()))
    }

    fn identity_scalings(&self) -> Scalings {
        Scalings {
            blocks: self
                .iter()
                .map(|(k, r)| (*k, Scaling::identity(k), r.start))
                .collect(),
        }
    }

    fn nt(&self, s: &DVector<f64>, z: &DVector<f64>) -> Option<(Scalings, DVector<f64>)> {
        let mut blocks = Vec::with_capacity(self.cones.len());
        let mut lam = DVector::zeros(s.len());
        for (k, r) in self.iter() {
            let (w, l) = cones::nt_scaling(k, &s.as_slice()[r.clone()], &z.as_slice()[r.clone()])?;
            lam.as_mut_slice()[r.clone()].copy_from_slice(&l);
            blocks.push((*k, w, r.start));
        }
        Some((Scalings { blocks }, lam))
    }

    /// Moves `v` into the interior if needed, as in the CVXOPT starting point.
    fn push_interior(&self, v: &mut DVector<f64>) {
        let mut worst = f64::NEG_INFINITY;
        for (k, r) in self.iter() {
            worst = worst.max(-cones::min_eig(k, &v.as_slice()[r]));
        }
        if worst >= -1e-8 {
            let shift = 1.0 + worst.max(0.0);
            for (k, r) in self.iter() {
                cones::add_identity(k, &mut v.as_mut_slice()[r], shift);
            }
        }
    }

    fn jordan_product(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(u.len());
        for (k, r) in self.iter() {
            cones::jordan_product(k, &u.as_slice()[r.clone()], &v.as_slice()[r.clone()], &mut out.as_mut_slice()[r]);
        }
        out
    }

    fn jordan_div(&self, lam: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(x.len());
        for (k, r) in self.iter() {
            cones::jordan_div(k, &lam.as_slice()[r.clone()], &x.as_slice()[r.clone()], &mut out.as_mut_slice()[r]);
        }
        out
    }

    fn identity(&self, len: usize) -> DVector<f64> {
        let mut e = DVector::zeros(len);
        for (k, r) in self.iter() {
            cones::identity(k, &mut e.as_mut_slice()[r]);
        }
        e
    }

    fn max_step(&self, lam: &DVector<f64>, d: &DVector<f64>) -> f64 {
        let mut a = f64::INFINITY;
        for (k, r) in self.iter() {
            a = a.min(cones::max_step(k, &lam.as_slice()[r.clone()], &d.as_slice()[r]));
        }
        a
    }
}

#[derive(Clone)]
struct Iterate {
    x: DVector<f64>,
    y: DVector<f64>,
    z: DVector<f64>,
    s: DVector<f64>,
    tau: f64,
    kappa: f64,
}

struct Residuals {
    rx: DVector<f64>,
    ry: DVector<f64>,
    rz: DVector<f64>,
    rtau: f64,
}

fn residuals(p: &ConicProblem, it: &Iterate) -> Residuals {
    let has_eq = p.b.len() > 0;
    let mut rx = p.g.transpose() * &it.z + &p.c * it.tau;
    let mut ry = DVector::zeros(p.b.len());
    if has_eq {
        rx += p.a.transpose() * &it.y;
        ry = &p.a * &it.x - &p.b * it.tau;
    }
    let rz = &p.g * &it.x + &it.s - &p.h * it.tau;
    let rtau = it.kappa + p.c.dot(&it.x) + p.b.dot(&it.y) + p.h.dot(&it.z);
    Residuals { rx, ry, rz, rtau }
}

struct Direction {
    x: DVector<f64>,
    y: DVector<f64>,
    z: DVector<f64>,
    s: DVector<f64>,
    tau: f64,
    kappa: f64,
}

#[allow(clippy::too_many_arguments)]
fn newton_direction(
    p: &ConicProblem,
    it: &Iterate,
    res: &Residuals,
    kkt: &KktSolver,
    scal: &Scalings,
    blocks: &Blocks,
    lam: &DVector<f64>,
    u1: &(DVector<f64>, DVector<f64>, DVector<f64>),
    phi1: f64,
    feas: f64,
    rc: &DVector<f64>,
    rc_tau: f64,
) -> Direction {
    let ldiv = blocks.jordan_div(lam, rc);
    let wt_ldiv = scal.apply_vec(&ldiv, false, true);
    let d1 = -&res.rx * feas;
    let d2 = -&res.ry * feas;
    let d3 = -&res.rz * feas - &wt_ldiv;
    let (x0, y0, z0) = kkt.solve(&d1, &d2, &d3);
    let phi0 = p.c.dot(&x0) + p.b.dot(&y0) + p.h.dot(&z0);
    let dtau = (rc_tau + it.tau * (feas * res.rtau + phi0)) / (it.kappa - it.tau * phi1);
    let dx = x0 + &u1.0 * dtau;
    let dy = y0 + &u1.1 * dtau;
    let dz = z0 + &u1.2 * dtau;
    let dkappa = -feas * res.rtau - p.c.dot(&dx) - p.b.dot(&dy) - p.h.dot(&dz);
    // ds = W^T (lambda \ rc - W dz)
    let wdz = scal.apply_vec(&dz, false, false);
    let ds = scal.apply_vec(&(ldiv - wdz), false, true);
    Direction {
        x: dx,
        y: dy,
        z: dz,
        s: ds,
        tau: dtau,
        kappa: dkappa,
    }
}

fn step_length(it: &Iterate, d: &Direction, scal: &Scalings, blocks: &Blocks, lam: &DVector<f64>) -> f64 {
    let ds_t = scal.apply_vec(&d.s, true, true);
    let dz_t = scal.apply_vec(&d.z, false, false);
    let mut a = blocks.max_step(lam, &ds_t).min(blocks.max_step(lam, &dz_t));
    if d.tau < 0.0 {
        a = a.min(-it.tau / d.tau);
    }
    if d.kappa < 0.0 {
        a = a.min(-it.kappa / d.kappa);
    }
    a
}

/// Iterations without a new best merit before giving up.
const STAGNATION_ITERS: usize = 10;

pub fn run(p: &ConicProblem, settings: &Settings) -> ConicSolution {
    let n = p.num_vars();
    let m = p.cone_dim();
    let blocks = Blocks::new(&p.cones);
    let degree = p.degree() as f64;
    let has_eq = p.b.len() > 0;

    let bnorm = p.b.norm().max(1.0);
    let hnorm = p.h.norm().max(1.0);
    let cnorm = p.c.norm().max(1.0);

    // Starting point: least-norm primal slack and dual multiplier, pushed inside K.
    let ident = blocks.identity_scalings();
    let mut it = match KktSolver::new(&p.a, &p.g, &ident) {
        Some(kkt0) => {
            let (x, _, zp) = kkt0.solve(&DVector::zeros(n), &p.b, &p.h);
            let (_, y, zd) = kkt0.solve(&(-&p.c), &DVector::zeros(p.b.len()), &DVector::zeros(m));
            let mut s = -zp;
            let mut z = zd;
            blocks.push_interior(&mut s);
            blocks.push_interior(&mut z);
            Iterate { x, y, z, s, tau: 1.0, kappa: 1.0 }
        }
        None => Iterate {
            x: DVector::zeros(n),
            y: DVector::zeros(p.b.len()),
            z: blocks.identity(m),
            s: blocks.identity(m),
            tau: 1.0,
            kappa: 1.0,
        },
    };

    let e = blocks.identity(m);
    let mut log = Vec::new();
    let mut status = Status::MaxIter;
    let mut iterations = 0;
    let mut stalls = 0;
    // Best iterate seen so far, returned if the path degrades before converging.
    let mut best: Option<(f64, Iterate)> = None;
    let mut best_iter = 0;

    for iter in 0..=settings.max_iter {
        iterations = iter;
        let res = residuals(p, &it);
        let mu = (it.s.dot(&it.z) + it.tau * it.kappa) / (degree + 1.0);

        // Normalised quantities for the stopping test.
        let tau = it.tau;
        let pobj = p.c.dot(&it.x) / tau;
        let dobj = -(p.b.dot(&it.y) + p.h.dot(&it.z)) / tau;
        let gap = it.s.dot(&it.z) / (tau * tau);
        let pres_g = res.rz.norm() / tau / hnorm;
        let pres_a = if has_eq { res.ry.norm() / tau / bnorm } else { 0.0 };
        let pres = pres_g.max(pres_a);
        let dres = res.rx.norm() / tau / cnorm;
        let gap_res = gap / pobj.abs().min(dobj.abs()).max(1.0);

        if settings.record_log {
            let slack = (res.rx.norm() / tau) * (it.x.norm() / tau)
                + (res.ry.norm() / tau) * (it.y.norm() / tau)
                + (res.rz.norm() / tau) * (it.z.norm() / tau);
            log.push(IterLog { primal_obj: pobj, dual_obj: dobj, gap, infeasibility_slack: slack, mu });
        }

        let merit = pres.max(dres).max(gap_res);
        if merit.is_finite() && best.as_ref().is_none_or(|(b, _)| merit < *b) {
            best = Some((merit, it.clone()));
            best_iter = iter;
        }

        if pres <= settings.tol && dres <= settings.tol && gap_res <= settings.tol {
            status = Status::Optimal;
            break;
        }
        // Infeasibility certificates.
        let hz_by = p.h.dot(&it.z) + p.b.dot(&it.y);
        if hz_by < 0.0 {
            let mut gz = p.g.transpose() * &it.z;
            if has_eq {
                gz += p.a.transpose() * &it.y;
            }
            if gz.norm() / cnorm / (-hz_by) <= settings.tol {
                status = Status::Infeasible;
                break;
            }
        }
        let cx = p.c.dot(&it.x);
        if cx < 0.0 {
            let mut r = (&p.g * &it.x + &it.s).norm() / hnorm;
            if has_eq {
                r = r.max((&p.a * &it.x).norm() / bnorm);
            }
            if r / (-cx) <= settings.tol {
                status = Status::Unbounded;
                break;
            }
        }
        // Past the attainable accuracy the iterates only wander; stop early.
        if iter == settings.max_iter || iter > best_iter + STAGNATION_ITERS {
            break;
        }

        let Some((scal, lam)) = blocks.nt(&it.s, &it.z) else { break };
        let Some(kkt) = KktSolver::new(&p.a, &p.g, &scal) else { break };
        let u1 = kkt.solve(&(-&p.c), &p.b, &p.h);
        let phi1 = p.c.dot(&u1.0) + p.b.dot(&u1.1) + p.h.dot(&u1.2);

        // Predictor.
        let ll = blocks.jordan_product(&lam, &lam);
        let rc_aff = -&ll;
        let aff = newton_direction(
            p, &it, &res, &kkt, &scal, &blocks, &lam, &u1, phi1, 1.0, &rc_aff, -it.tau * it.kappa,
        );
        let a_aff = step_length(&it, &aff, &scal, &blocks, &lam).min(1.0);
        let sigma = (1.0 - a_aff).powi(3).clamp(0.0, 1.0);

        // Corrector.
        let ds_t = scal.apply_vec(&aff.s, true, true);
        let dz_t = scal.apply_vec(&aff.z, false, false);
        let corr = blocks.jordan_product(&ds_t, &dz_t);
        let rc = -ll + &e * (sigma * mu) - corr;
        let rc_tau = -it.tau * it.kappa + sigma * mu - aff.tau * aff.kappa;
        let dir = newton_direction(
            p, &it, &res, &kkt, &scal, &blocks, &lam, &u1, phi1, 1.0 - sigma, &rc, rc_tau,
        );
        let a = (0.99 * step_length(&it, &dir, &scal, &blocks, &lam)).min(1.0);
        if a < 1e-12 {
            stalls += 1;
            if stalls > 3 {
                break;
            }
        }
        it.x += &dir.x * a;
        it.y += &dir.y * a;
        it.z += &dir.z * a;
        it.s += &dir.s * a;
        it.tau += dir.tau * a;
        it.kappa += dir.kappa * a;

        // Rescale the homogeneous iterate to keep magnitudes moderate.
        let scale = it.tau.max(it.kappa);
        if !(1e-8..=1e8).contains(&scale) {
            let f = 1.0 / scale;
            it.x *= f;
            it.y *= f;
            it.z *= f;
            it.s *= f;
            it.tau *= f;
            it.kappa *= f;
        }
    }

    if status == Status::MaxIter {
        if let Some((_, b)) = best {
            it = b;
        }
    }
    let tau = it.tau;
    let finish = |v: &DVector<f64>| -> DVector<f64> {
        match status {
            Status::Infeasible | Status::Unbounded => v.clone(),
            _ => v / tau,
        }
    };
    let x = finish(&it.x);
    let y = finish(&it.y);
    let z = finish(&it.z);
    let s = finish(&it.s);
    let res = residuals(p, &it);
    let primal_obj = p.c.dot(&x);
    let dual_obj = -(p.b.dot(&y) + p.h.dot(&z));
    let pres = {
        let a = if has_eq { (&p.a * &x - &p.b).norm() / bnorm } else { 0.0 };
        a.max((&p.g * &x + &s - &p.h).norm() / hnorm)
    };
    let _ = res;
    let mut rd = &p.c + p.g.transpose() * &z;
    if has_eq {
        rd += p.a.transpose() * &y;
    }
    ConicSolution {
        status,
        primal_res: pres,
        dual_res: rd.norm() / cnorm,
        gap_res: s.dot(&z) / primal_obj.abs().min(dual_obj.abs()).max(1.0),
        primal_obj,
        dual_obj,
        x,
        s,
        y,
        z,
        iterations,
        log,
    }
}
