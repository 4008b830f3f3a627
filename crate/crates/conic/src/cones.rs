//! Cone blocks, Nesterov-Todd scalings and Jordan-algebra helpers.
//!
//! PSD blocks are stored as `svec` (upper triangle, column by column, off-diagonal
//! entries scaled by sqrt(2)) so that the Euclidean inner product on the vector matches
//! the trace inner product on matrices.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// One block of the product cone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cone {
    /// `n` nonnegative scalars.
    NonNeg(usize),
    /// Second-order cone `{(t, x) : t >= |x|}` of total dimension `n`.
    Soc(usize),
    /// Symmetric PSD matrices of order `n`, stored as `n(n+1)/2` svec entries.
    Psd(usize),
}

impl Cone {
    pub fn dim(&self) -> usize {
        match *self {
            Cone::NonNeg(n) | Cone::Soc(n) => n,
            Cone::Psd(n) => n * (n + 1) / 2,
        }
    }

    /// Barrier degree.
    pub fn degree(&self) -> usize {
        match *self {
            Cone::NonNeg(n) => n,
            Cone::Soc(_) => 1,
            Cone::Psd(n) => n,
        }
    }
}

pub fn svec_index(i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    j * (j + 1) / 2 + i
}

pub fn svec_to_mat(v: &[f64], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        for i in 0..=j {
            if i == j {
                m[(i, i)] = v[k];
            } else {
                let x = v[k] / SQRT2;
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
            k += 1;
        }
    }
    m
}

pub fn mat_to_svec(m: &DMatrix<f64>, out: &mut [f64]) {
    let n = m.nrows();
    let mut k = 0;
    for j in 0..n {
        for i in 0..=j {
            out[k] = if i == j {
                m[(i, i)]
            } else {
                0.5 * (m[(i, j)] + m[(j, i)]) * SQRT2
            };
            k += 1;
        }
    }
}

/// Smallest "eigenvalue" of `x` with respect to the cone: `x - t e` is on the boundary.
pub fn min_eig(cone: &Cone, x: &[f64]) -> f64 {
    match *cone {
        Cone::NonNeg(_) => x.iter().cloned().fold(f64::INFINITY, f64::min),
        Cone::Soc(_) => x[0] - norm(&x[1..]),
        Cone::Psd(n) => {
            let m = svec_to_mat(x, n);
            SymmetricEigen::new(m).eigenvalues.min()
        }
    }
}

/// `x += a e` where `e` is the cone identity.
pub fn add_identity(cone: &Cone, x: &mut [f64], a: f64) {
    match *cone {
        Cone::NonNeg(_) => x.iter_mut().for_each(|v| *v += a),
        Cone::Soc(_) => x[0] += a,
        Cone::Psd(n) => {
            for i in 0..n {
                x[svec_index(i, i)] += a;
            }
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Nesterov-Todd scaling of one cone block: `W z = W^{-T} s = lambda`.
#[derive(Debug, Clone)]
pub enum Scaling {
    NonNeg {
        d: Vec<f64>,
    },
    Soc {
        beta: f64,
        w: Vec<f64>,
    },
    /// `W(u) = R^T U R`.
    Psd {
        n: usize,
        r: DMatrix<f64>,
        rinv: DMatrix<f64>,
    },
}

/// Returns the scaling and the scaled point `lambda` (for PSD blocks, the diagonal of
/// the scaled matrix), or `None` when `s` or `z` is not strictly interior.
pub fn nt_scaling(cone: &Cone, s: &[f64], z: &[f64]) -> Option<(Scaling, Vec<f64>)> {
    match *cone {
        Cone::NonNeg(_) => {
            if s.iter().chain(z).any(|&v| !(v > 0.0)) {
                return None;
            }
            let d: Vec<f64> = s.iter().zip(z).map(|(a, b)| (a / b).sqrt()).collect();
            let lam: Vec<f64> = s.iter().zip(z).map(|(a, b)| (a * b).sqrt()).collect();
            Some((Scaling::NonNeg { d }, lam))
        }
        Cone::Soc(n) => {
            let sres = s[0] * s[0] - dot(&s[1..], &s[1..]);
            let zres = z[0] * z[0] - dot(&z[1..], &z[1..]);
            if !(sres > 0.0 && zres > 0.0 && s[0] > 0.0 && z[0] > 0.0) {
                return None;
            }
            let snorm = sres.sqrt();
            let znorm = zres.sqrt();
            let sb: Vec<f64> = s.iter().map(|v| v / snorm).collect();
            let zb: Vec<f64> = z.iter().map(|v| v / znorm).collect();
            let gamma = ((1.0 + dot(&sb, &zb)) / 2.0).sqrt();
            let mut w = vec![0.0; n];
            w[0] = (sb[0] + zb[0]) / (2.0 * gamma);
            for i in 1..n {
                w[i] = (sb[i] - zb[i]) / (2.0 * gamma);
            }
            let beta = (snorm / znorm).sqrt();
            let sc = Scaling::Soc { beta, w };
            let mut lam = vec![0.0; n];
            sc.apply(z, &mut lam, false, false);
            Some((sc, lam))
        }
        Cone::Psd(n) => {
            let sm = svec_to_mat(s, n);
            let zm = svec_to_mat(z, n);
            let ls = sm.cholesky()?.unpack();
            let lz = zm.cholesky()?.unpack();
            let prod = lz.transpose() * &ls;
            let svd = prod.svd(true, true);
            let u = svd.u?;
            let vt = svd.v_t?;
            let sv = svd.singular_values;
            if sv.iter().any(|&x| !(x > 0.0)) {
                return None;
            }
            let isq = DVector::from_iterator(n, sv.iter().map(|x| 1.0 / x.sqrt()));
            // R = Ls V Lambda^{-1/2};  R^{-1} = Lambda^{-1/2} U^T Lz^T.
            let mut r = ls * vt.transpose();
            for j in 0..n {
                r.column_mut(j).scale_mut(isq[j]);
            }
            let mut rinv = u.transpose() * lz.transpose();
            for i in 0..n {
                rinv.row_mut(i).scale_mut(isq[i]);
            }
            let mut lam = vec![0.0; n * (n + 1) / 2];
            for i in 0..n {
                lam[svec_index(i, i)] = sv[i];
            }
            Some((Scaling::Psd { n, r, rinv }, lam))
        }
    }
}

impl Scaling {
    /// Identity scaling for a cone block.
    pub fn identity(cone: &Cone) -> Scaling {
        match *cone {
            Cone::NonNeg(n) => Scaling::NonNeg { d: vec![1.0; n] },
            Cone::Soc(n) => {
                let mut w = vec![0.0; n];
                w[0] = 1.0;
                Scaling::Soc { beta: 1.0, w }
            }
            Cone::Psd(n) => Scaling::Psd {
                n,
                r: DMatrix::identity(n, n),
                rinv: DMatrix::identity(n, n),
            },
        }
    }

    /// `out = W x`, `W^T x`, `W^{-1} x` or `W^{-T} x`.
    pub fn apply(&self, x: &[f64], out: &mut [f64], inverse: bool, transpose: bool) {
        match self {
            Scaling::NonNeg { d } => {
                for i in 0..x.len() {
                    out[i] = if inverse { x[i] / d[i] } else { x[i] * d[i] };
                }
            }
            Scaling::Soc { beta, w } => {
                // W = beta [[w0, w1^T], [w1, I + w1 w1^T/(1 + w0)]] is symmetric;
                // its inverse flips the sign of w1 and divides by beta.
                let sgn = if inverse { -1.0 } else { 1.0 };
                let scale = if inverse { 1.0 / beta } else { *beta };
                let w0 = w[0];
                let w1 = &w[1..];
                let x1 = &x[1..];
                let wx = dot(w1, x1);
                out[0] = scale * (w0 * x[0] + sgn * wx);
                let c = sgn * x[0] + wx / (1.0 + w0);
                for i in 1..x.len() {
                    out[i] = scale * (x[i] + c * w[i]);
                }
            }
            Scaling::Psd { n, r, rinv } => {
                let u = svec_to_mat(x, *n);
                let m = match (inverse, transpose) {
                    (false, false) => r.transpose() * u * r,
                    (false, true) => r * u * r.transpose(),
                    (true, false) => rinv.transpose() * u * rinv,
                    (true, true) => rinv * u * rinv.transpose(),
                };
                mat_to_svec(&m, out);
            }
        }
    }
}

/// Jordan product `u o v`.
pub fn jordan_product(cone: &Cone, u: &[f64], v: &[f64], out: &mut [f64]) {
    match *cone {
        Cone::NonNeg(_) => {
            for i in 0..u.len() {
                out[i] = u[i] * v[i];
            }
        }
        Cone::Soc(_) => {
            out[0] = dot(u, v);
            for i in 1..u.len() {
                out[i] = u[0] * v[i] + v[0] * u[i];
            }
        }
        Cone::Psd(n) => {
            let um = svec_to_mat(u, n);
            let vm = svec_to_mat(v, n);
            let p = &um * &vm;
            let sym = (&p + p.transpose()) * 0.5;
            mat_to_svec(&sym, out);
        }
    }
}

/// Solves `lambda o y = x` for `y`, with `lambda` a scaled point (diagonal for PSD).
pub fn jordan_div(cone: &Cone, lam: &[f64], x: &[f64], out: &mut [f64]) {
    match *cone {
        Cone::NonNeg(_) => {
            for i in 0..x.len() {
                out[i] = x[i] / lam[i];
            }
        }
        Cone::Soc(_) => {
            let l0 = lam[0];
            let det = l0 * l0 - dot(&lam[1..], &lam[1..]);
            let y0 = (l0 * x[0] - dot(&lam[1..], &x[1..])) / det;
            out[0] = y0;
            for i in 1..x.len() {
                out[i] = (x[i] - y0 * lam[i]) / l0;
            }
        }
        Cone::Psd(n) => {
            let mut k = 0;
            for j in 0..n {
                for i in 0..=j {
                    let li = lam[svec_index(i, i)];
                    let lj = lam[svec_index(j, j)];
                    out[k] = 2.0 * x[k] / (li + lj);
                    k += 1;
                }
            }
        }
    }
}

/// Largest `a` with `lambda + a d` in the cone (`f64::INFINITY` if unbounded).
pub fn max_step(cone: &Cone, lam: &[f64], d: &[f64]) -> f64 {
    match *cone {
        Cone::NonNeg(_) => {
            let mut a = f64::INFINITY;
            for i in 0..d.len() {
                if d[i] < 0.0 {
                    a = a.min(-lam[i] / d[i]);
                }
            }
            a
        }
        Cone::Soc(_) => {
            // q(a) = (l0 + a d0)^2 - |l1 + a d1|^2 with q(0) > 0.
            let qa = d[0] * d[0] - dot(&d[1..], &d[1..]);
            let qb = lam[0] * d[0] - dot(&lam[1..], &d[1..]);
            let qc = lam[0] * lam[0] - dot(&lam[1..], &lam[1..]);
            let mut a = f64::INFINITY;
            if d[0] < 0.0 {
                a = a.min(-lam[0] / d[0]);
            }
            let root = smallest_positive_root(qa, qb, qc);
            a.min(root)
        }
        Cone::Psd(n) => {
            let mut m = svec_to_mat(d, n);
            for i in 0..n {
                let li = lam[svec_index(i, i)].sqrt();
                m.row_mut(i).scale_mut(1.0 / li);
                m.column_mut(i).scale_mut(1.0 / li);
            }
            let e = SymmetricEigen::new(m).eigenvalues.min();
            if e < 0.0 {
                -1.0 / e
            } else {
                f64::INFINITY
            }
        }
    }
}

/// Smallest positive root of `a t^2 + 2 b t + c` given `c > 0`.
fn smallest_positive_root(a: f64, b: f64, c: f64) -> f64 {
    if a.abs() <= 1e-300 {
        return if b < 0.0 { -c / (2.0 * b) } else { f64::INFINITY };
    }
    let disc = b * b - a * c;
    if disc < 0.0 {
        return f64::INFINITY;
    }
    let sq = disc.sqrt();
    // Stable roots of a t^2 + 2 b t + c.
    let q = -(b + b.signum() * sq);
    let mut best = f64::INFINITY;
    for r in [q / a, if q != 0.0 { c / q } else { f64::INFINITY }] {
        if r > 0.0 && r < best {
            best = r;
        }
    }
    best
}

/// Cone identity element.
pub fn identity(cone: &Cone, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    add_identity(cone, out, 1.0);
}
