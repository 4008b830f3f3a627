//! Plain-text dump of a problem for offline inspection.
//!
//! Lines: a header `conic n p m`, one `cone <kind> <size>` line per block, then
//! nonzero triplets `A i j v` and `G i j v` and vector entries `c i v`, `b i v`, `h i v`.

use std::io::{self, Write};

use crate::{Cone, ConicProblem};

pub fn write_sparse_text<W: Write>(problem: &ConicProblem, mut out: W) -> io::Result<()> {
    writeln!(out, "conic {} {} {}", problem.num_vars(), problem.b.len(), problem.cone_dim())?;
    for k in &problem.cones {
        match k {
            Cone::NonNeg(n) => writeln!(out, "cone nonneg {n}")?,
            Cone::Soc(n) => writeln!(out, "cone soc {n}")?,
            Cone::Psd(n) => writeln!(out, "cone psd {n}")?,
        }
    }
    for (name, m) in [("A", &problem.a), ("G", &problem.g)] {
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                let v = m[(i, j)];
                if v != 0.0 {
                    writeln!(out, "{name} {i} {j} {v:e}")?;
                }
            }
        }
    }
    for (name, v) in [("c", &problem.c), ("b", &problem.b), ("h", &problem.h)] {
        for (i, x) in v.iter().enumerate() {
            if *x != 0.0 {
                writeln!(out, "{name} {i} {x:e}")?;
            }
        }
    }
    Ok(())
}
