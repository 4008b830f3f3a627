//! Small complex semidefinite programs with linear inequality rows, solved through the
//! real conic solver.
//!
//! ```text
//! minimize   sum_b Re Tr(C_b X_b) + sum_i c_i s_i
//! subject to sum_b Re Tr(A_rb X_b) + sum_i a_ri s_i >= rhs_r
//!            X_b Hermitian PSD, s_i >= 0
//! ```
//!
//! Rows are rescaled to unit coefficient norm and all variables by a common factor so
//! that the largest right-hand side is one; the solver sees well-scaled data whatever
//! the physical units.

use nalgebra::{DMatrix, DVector};
use nfswipt_conic::{
    hermitian_from_params, lifted_psd_columns, solve_with, trace_coefficients, Cone, ConicProblem, Settings,
    Status,
};

use crate::cplx::CMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProgramFailure {
    Infeasible,
    Unbounded,
    NotConverged,
}

#[derive(Debug, Clone, Default)]
pub struct Row {
    pub blocks: Vec<(usize, CMatrix)>,
    pub scalars: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default)]
pub struct HermitianProgram {
    pub block_dims: Vec<usize>,
    pub num_scalars: usize,
    pub objective_blocks: Vec<Option<CMatrix>>,
    pub objective_scalars: Vec<f64>,
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone)]
pub struct ProgramSolution {
    pub blocks: Vec<CMatrix>,
    pub scalars: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

impl HermitianProgram {
    fn offsets(&self) -> (Vec<usize>, usize) {
        let mut off = Vec::with_capacity(self.block_dims.len());
        let mut n = 0;
        for &d in &self.block_dims {
            off.push(n);
            n += d * d;
        }
        (off, n)
    }

    fn row_coefficients(&self, row: &Row, off: &[usize], nvar: usize) -> Vec<f64> {
        let mut coef = vec![0.0; nvar];
        for (b, a) in &row.blocks {
            for (i, v) in trace_coefficients(a).into_iter().enumerate() {
                coef[off[*b] + i] += v;
            }
        }
        let sb = nvar - self.num_scalars;
        for &(i, a) in &row.scalars {
            coef[sb + i] += a;
        }
        coef
    }

    pub fn solve(&self, tol: f64) -> Result<ProgramSolution, ProgramFailure> {
        let (off, nblk) = self.offsets();
        let nvar = nblk + self.num_scalars;
        // Scalars with a positive cost are measured in cost units.
        let col_scale: Vec<f64> = (0..self.num_scalars)
            .map(|i| match self.objective_scalars.get(i) {
                Some(&c) if c > 0.0 => 1.0 / c,
                _ => 1.0,
            })
            .collect();

        let mut coefs = Vec::with_capacity(self.rows.len());
        let mut rhs = Vec::with_capacity(self.rows.len());
        for row in &self.rows {
            let mut c = self.row_coefficients(row, &off, nvar);
            for (i, f) in col_scale.iter().enumerate() {
                c[nblk + i] *= f;
            }
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                if row.rhs > 0.0 {
                    return Err(ProgramFailure::Infeasible);
                }
                continue;
            }
            coefs.push(c.into_iter().map(|v| v / norm).collect::<Vec<_>>());
            rhs.push(row.rhs / norm);
        }
        let var_scale = rhs.iter().fold(0.0f64, |a, r| a.max(r.abs()));
        let var_scale = if var_scale > 0.0 { var_scale } else { 1.0 };
        let rhs: Vec<f64> = rhs.iter().map(|r| r / var_scale).collect();

        let mut cvec = vec![0.0; nvar];
        for (b, cb) in self.objective_blocks.iter().enumerate() {
            if let Some(cb) = cb {
                for (i, v) in trace_coefficients(cb).into_iter().enumerate() {
                    cvec[off[b] + i] = v;
                }
            }
        }
        for (i, &v) in self.objective_scalars.iter().enumerate() {
            cvec[nblk + i] = v * col_scale[i];
        }
        let obj_scale = cvec.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let obj_scale = if obj_scale > 0.0 { obj_scale } else { 1.0 };
        let cnorm: Vec<f64> = cvec.iter().map(|v| v / obj_scale).collect();

        let ones = vec![1.0; coefs.len()];
        let (mut x, mut iterations) = self.run_conic(&coefs, &rhs, &ones, &cnorm, &off, tol)?;

        // A row whose terms are tiny next to the others is only resolved to the solver's
        // absolute accuracy. Weight rows by their magnitude at the first solution and
        // solve again so every row is met to relative accuracy.
        let mags: Vec<f64> = coefs.iter().zip(&rhs).map(|(c, r)| self.row_magnitude(c, &x, &off) + r.abs()).collect();
        let mmax = mags.iter().fold(0.0f64, |a, &m| a.max(m));
        if mags.iter().any(|&m| m < 1e-3 * mmax) {
            let weights: Vec<f64> = mags.iter().map(|&m| mmax / m.max(1e-300)).collect();
            if let Ok((x2, it2)) = self.run_conic(&coefs, &rhs, &weights, &cnorm, &off, tol) {
                x = x2;
                iterations += it2;
            }
        }

        let mut x: Vec<f64> = x.iter().map(|v| v * var_scale).collect();
        let objective = cvec.iter().zip(&x).map(|(a, b)| a * b).sum();
        for (i, f) in col_scale.iter().enumerate() {
            x[nblk + i] *= f;
        }
        let blocks: Vec<CMatrix> = self
            .block_dims
            .iter()
            .enumerate()
            .map(|(b, &d)| hermitian_from_params(&x[off[b]..off[b] + d * d], d))
            .collect();
        let scalars = x[nblk..].to_vec();
        Ok(ProgramSolution { blocks, scalars, objective, iterations })
    }

    /// Sum over blocks and scalars of the absolute contribution to a row.
    fn row_magnitude(&self, coef: &[f64], x: &[f64], off: &[usize]) -> f64 {
        let mut total = 0.0;
        for (b, &d) in self.block_dims.iter().enumerate() {
            let r = off[b]..off[b] + d * d;
            total += coef[r.clone()].iter().zip(&x[r]).map(|(a, v)| a * v).sum::<f64>().abs();
        }
        let sb = x.len() - self.num_scalars;
        total + coef[sb..].iter().zip(&x[sb..]).map(|(a, v)| (a * v).abs()).sum::<f64>()
    }

    fn run_conic(
        &self,
        coefs: &[Vec<f64>],
        rhs: &[f64],
        weights: &[f64],
        c: &[f64],
        off: &[usize],
        tol: f64,
    ) -> Result<(Vec<f64>, usize), ProgramFailure> {
        let nvar = c.len();
        let nblk = nvar - self.num_scalars;
        let lin = coefs.len() + self.num_scalars;
        let psd_rows: usize = self.block_dims.iter().map(|&d| (2 * d) * (2 * d + 1) / 2).sum();
        let m = lin + psd_rows;
        let mut g = DMatrix::zeros(m, nvar);
        let mut h = DVector::zeros(m);
        for (r, row) in coefs.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                g[(r, j)] = -v * weights[r];
            }
            h[r] = -rhs[r] * weights[r];
        }
        for i in 0..self.num_scalars {
            g[(coefs.len() + i, nblk + i)] = -1.0;
        }
        let mut cones = Vec::new();
        if lin > 0 {
            cones.push(Cone::NonNeg(lin));
        }
        let mut r0 = lin;
        for (b, &d) in self.block_dims.iter().enumerate() {
            let cols = lifted_psd_columns(d);
            for i in 0..cols.nrows() {
                for j in 0..cols.ncols() {
                    if cols[(i, j)] != 0.0 {
                        g[(r0 + i, off[b] + j)] = -cols[(i, j)];
                    }
                }
            }
            cones.push(Cone::Psd(2 * d));
            r0 += cols.nrows();
        }
        let problem = ConicProblem {
            c: DVector::from_column_slice(c),
            a: DMatrix::zeros(0, nvar),
            b: DVector::zeros(0),
            g,
            h,
            cones,
        };
        let settings = Settings { tol, ..Default::default() };
        let sol = solve_with(&problem, &settings).map_err(|_| ProgramFailure::NotConverged)?;
        match sol.status {
            Status::Optimal => {}
            Status::Infeasible => return Err(ProgramFailure::Infeasible),
            Status::Unbounded => return Err(ProgramFailure::Unbounded),
            Status::MaxIter => {
                let loose = 1e3 * tol;
                if !(sol.primal_res <= loose && sol.dual_res <= loose && sol.gap_res <= loose) {
                    return Err(ProgramFailure::NotConverged);
                }
            }
        }
        Ok((sol.x.iter().copied().collect(), sol.iterations))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cplx::{c, cr, outer, CVector};

    #[test]
    fn trace_at_least_one() {
        let p = HermitianProgram {
            block_dims: vec![2],
            objective_blocks: vec![Some(CMatrix::identity(2, 2))],
            rows: vec![Row { blocks: vec![(0, CMatrix::identity(2, 2))], rhs: 1.0, ..Default::default() }],
            ..Default::default()
        };
        let s = p.solve(1e-9).unwrap();
        assert!((s.objective - 1.0).abs() < 1e-7);
    }

    #[test]
    fn tiny_units_are_rescaled() {
        // minimize Tr(X) s.t. h^H X h >= 1e-12 with |h|^2 = 2e-10: optimum 5e-3.
        let h = CVector::from_vec(vec![c(1e-5, 0.0), c(0.0, 1e-5)]);
        let p = HermitianProgram {
            block_dims: vec![2],
            objective_blocks: vec![Some(CMatrix::identity(2, 2))],
            rows: vec![Row { blocks: vec![(0, outer(&h))], rhs: 1e-12, ..Default::default() }],
            ..Default::default()
        };
        let s = p.solve(1e-9).unwrap();
        assert!((s.objective - 5e-3).abs() < 1e-9);
    }

    #[test]
    fn scalar_and_block_mix() {
        // minimize s + Tr(X) s.t. s + X_11 >= 2, s >= 0: cost 2 either way, equality holds.
        let e = CMatrix::from_diagonal(&CVector::from_vec(vec![cr(1.0), cr(0.0)]));
        let p = HermitianProgram {
            block_dims: vec![2],
            num_scalars: 1,
            objective_blocks: vec![Some(CMatrix::identity(2, 2))],
            objective_scalars: vec![2.0],
            rows: vec![Row { blocks: vec![(0, e)], scalars: vec![(0, 1.0)], rhs: 2.0 }],
        };
        let s = p.solve(1e-9).unwrap();
        assert!((s.objective - 2.0).abs() < 1e-7);
        assert!(s.scalars[0].abs() < 1e-6);
    }

    #[test]
    fn zero_row_with_positive_rhs_is_infeasible() {
        let p = HermitianProgram {
            block_dims: vec![1],
            objective_blocks: vec![Some(CMatrix::identity(1, 1))],
            rows: vec![Row { blocks: vec![(0, CMatrix::zeros(1, 1))], rhs: 1.0, ..Default::default() }],
            ..Default::default()
        };
        assert_eq!(p.solve(1e-8).unwrap_err(), ProgramFailure::Infeasible);
    }
}
