//! Reduced KKT solves for
//!
//! ```text
//! [ 0  A^T  G^T    ] [x]   [r1]
//! [ A  0    0      ] [y] = [r2]
//! [ G  0   -W^T W  ] [z]   [r3]
//! ```
//!
//! by eliminating `z` and factoring the dense saddle-point matrix.

use nalgebra::{DMatrix, DVector, LU};

use crate::cones::{Cone, Scaling};

pub struct Scalings {
    pub blocks: Vec<(Cone, Scaling, usize)>,
}

impl Scalings {
    pub fn apply(&self, x: &[f64], out: &mut [f64], inverse: bool, transpose: bool) {
        for (_, w, off) in &self.blocks {
            let d = match w {
                Scaling::NonNeg { d } => d.len(),
                Scaling::Soc { w, .. } => w.len(),
                Scaling::Psd { n, .. } => n * (n + 1) / 2,
            };
            w.apply(&x[*off..off + d], &mut out[*off..off + d], inverse, transpose);
        }
    }

    pub fn apply_vec(&self, x: &DVector<f64>, inverse: bool, transpose: bool) -> DVector<f64> {
        let mut out = DVector::zeros(x.len());
        self.apply(x.as_slice(), out.as_mut_slice(), inverse, transpose);
        out
    }
}

enum Factor {
    Chol(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Lu(LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

pub struct KktSolver<'a> {
    a: &'a DMatrix<f64>,
    g: &'a DMatrix<f64>,
    scal: &'a Scalings,
    gt: DMatrix<f64>,
    factor: Factor,
    n: usize,
    p: usize,
}

impl<'a> KktSolver<'a> {
    pub fn new(a: &'a DMatrix<f64>, g: &'a DMatrix<f64>, scal: &'a Scalings) -> Option<Self> {
        let n = g.ncols();
        let p = a.nrows();
        let m = g.nrows();
        // G~ = W^{-T} G, column by column.
        let mut gt = DMatrix::zeros(m, n);
        let mut col = vec![0.0; m];
        for j in 0..n {
            scal.apply(g.column(j).as_slice(), &mut col, true, true);
            gt.column_mut(j).copy_from_slice(&col);
        }
        let mut h = gt.transpose() * &gt;
        let diag_max = (0..n).map(|i| h[(i, i)]).fold(0.0, f64::max).max(1e-300);
        let reg = 1e-14 * diag_max;
        for i in 0..n {
            h[(i, i)] += reg;
        }
        let factor = if p == 0 {
            Factor::Chol(h.cholesky()?)
        } else {
            let mut k = DMatrix::zeros(n + p, n + p);
            k.view_mut((0, 0), (n, n)).copy_from(&h);
            k.view_mut((n, 0), (p, n)).copy_from(a);
            k.view_mut((0, n), (n, p)).copy_from(&a.transpose());
            for i in 0..p {
                k[(n + i, n + i)] = -reg;
            }
            let lu = k.lu();
            if !lu.is_invertible() {
                return None;
            }
            Factor::Lu(lu)
        };
        Some(KktSolver {
            a,
            g,
            scal,
            gt,
            factor,
            n,
            p,
        })
    }

    fn solve_once(
        &self,
        r1: &DVector<f64>,
        r2: &DVector<f64>,
        r3: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let r3t = self.scal.apply_vec(r3, true, true);
        let rhs_x = r1 + self.gt.transpose() * &r3t;
        let (x, y) = match &self.factor {
            Factor::Chol(c) => (c.solve(&rhs_x), DVector::zeros(0)),
            Factor::Lu(lu) => {
                let mut rhs = DVector::zeros(self.n + self.p);
                rhs.rows_mut(0, self.n).copy_from(&rhs_x);
                rhs.rows_mut(self.n, self.p).copy_from(r2);
                let sol = lu.solve(&rhs).unwrap_or_else(|| DVector::zeros(self.n + self.p));
                (
                    sol.rows(0, self.n).into_owned(),
                    sol.rows(self.n, self.p).into_owned(),
                )
            }
        };
        let zt = &self.gt * &x - r3t;
        let z = self.scal.apply_vec(&zt, true, false);
        (x, y, z)
    }

    /// Solves with a few rounds of iterative refinement against the unreduced system.
    pub fn solve(
        &self,
        r1: &DVector<f64>,
        r2: &DVector<f64>,
        r3: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let (mut x, mut y, mut z) = self.solve_once(r1, r2, r3);
        let scale = r1.norm() + r2.norm() + r3.norm();
        for _ in 0..3 {
            let (e1, e2, e3) = self.residual(&x, &y, &z, r1, r2, r3);
            let err = e1.norm() + e2.norm() + e3.norm();
            if err <= 1e-15 * scale.max(1e-300) {
                break;
            }
            let (dx, dy, dz) = self.solve_once(&e1, &e2, &e3);
            x -= dx;
            y -= dy;
            z -= dz;
        }
        (x, y, z)
    }

    fn residual(
        &self,
        x: &DVector<f64>,
        y: &DVector<f64>,
        z: &DVector<f64>,
        r1: &DVector<f64>,
        r2: &DVector<f64>,
        r3: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let mut e1 = self.g.transpose() * z - r1;
        let mut e2 = -r2.clone();
        if self.p > 0 {
            e1 += self.a.transpose() * y;
            e2 += self.a * x;
        }
        let wz = self.scal.apply_vec(z, false, false);
        let wtwz = self.scal.apply_vec(&wz, false, true);
        let e3 = self.g * x - wtwz - r3;
        (e1, e2, e3)
    }
}
