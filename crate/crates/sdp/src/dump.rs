//! Text format:
//!
//! ```text
//! sdp-dump 1
//! scalars <m>
//! var <name> <rows> <cols> <sym|rect> <offset> <count>
//! objective <k> <c_k>            (nonzero entries only)
//! constraint <name> <n> <margin>
//! f0 <row-major n*n values>
//! f <k> <i> <j> <value>          (upper triangle, i <= j)
//! end
//! ```
//!
//! Symmetric variables are vectorized over their upper triangle in row-major
//! order; rectangular variables row-major.

use std::fmt::Write;

use crate::error::SdpError;
use crate::problem::{Compiled, Problem, Structure};

pub(crate) fn render(problem: &Problem, compiled: &Compiled) -> Result<String, SdpError> {
    let mut out = String::new();
    let w = &mut out;
    let _ = writeln!(w, "sdp-dump 1");
    let _ = writeln!(w, "scalars {}", compiled.scalars);
    for v in problem.variables() {
        let kind = match v.structure {
            Structure::Symmetric => "sym",
            Structure::Rectangular => "rect",
        };
        let _ = writeln!(w, "var {} {} {} {} {} {}", v.name, v.rows, v.cols, kind, v.offset, v.scalar_count());
    }
    for (k, c) in compiled.objective.iter().enumerate() {
        if *c != 0.0 {
            let _ = writeln!(w, "objective {k} {c:e}");
        }
    }
    for (con, blk) in problem.constraints().iter().zip(&compiled.blocks) {
        let _ = writeln!(w, "constraint {} {} {:e}", con.name, blk.size, blk.margin);
        let f0: Vec<String> = (0..blk.size)
            .flat_map(|i| (0..blk.size).map(move |j| (i, j)))
            .map(|(i, j)| format!("{:e}", blk.constant[(i, j)]))
            .collect();
        let _ = writeln!(w, "f0 {}", f0.join(" "));
        for (k, trip) in &blk.coeffs {
            for &(i, j, v) in trip.iter().filter(|t| t.0 <= t.1) {
                let _ = writeln!(w, "f {k} {i} {j} {v:e}");
            }
        }
        let _ = writeln!(w, "end");
    }
    Ok(out)
}
