//! Infeasible-start primal-dual path-following method with the HKM search
//! direction and a Mehrotra predictor-corrector.
//!
//! A user problem `min cᵀy s.t. F₀ʲ + Σ_k y_k F_kʲ ⪰ εʲ I` is the dual of the
//! standard pair
//!
//! ```text
//!   (P)  min ⟨C, X⟩  s.t. ⟨A_k, X⟩ = b_k,  X ⪰ 0
//!   (D)  max bᵀy     s.t. Σ_k y_k A_k + Z = C,  Z ⪰ 0
//! ```
//!
//! with `C = F₀ - εI`, `A_k = -F_k` and `b = -c`, all block diagonal.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::SdpError;
use crate::problem::{Compiled, Triplets};
use crate::solution::Status;

#[derive(Clone, Debug)]
pub struct SolverOptions {
    /// Strictness margin ε: constraints are enforced as `F(y) ⪰ εI`.
    pub margin: f64,
    /// Relative duality gap and residual tolerance.
    pub tol: f64,
    pub max_iter: usize,
    /// Threshold on the normalized Farkas residual for declaring
    /// infeasibility or unboundedness.
    pub infeasibility_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            margin: 1e-8,
            tol: 1e-7,
            max_iter: 100,
            infeasibility_tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct RawSolution {
    pub status: Status,
    pub y: Vec<f64>,
    pub iterations: usize,
    pub relative_gap: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    /// Normalized primal matrix when the problem was found infeasible.
    pub certificate: Option<Vec<DMatrix<f64>>>,
}

struct Block {
    n: usize,
    c: DMatrix<f64>,
    /// (active scalar index, A_k = -F_k)
    a: Vec<(usize, Triplets)>,
}

struct Data {
    m: usize,
    b: DVector<f64>,
    blocks: Vec<Block>,
}

impl Data {
    fn a_op(&self, mats: &[DMatrix<f64>]) -> DVector<f64> {
        let mut out = DVector::zeros(self.m);
        for (blk, mat) in self.blocks.iter().zip(mats) {
            for (k, trip) in &blk.a {
                out[*k] += trip.iter().map(|&(r, c, v)| v * mat[(r, c)]).sum::<f64>();
            }
        }
        out
    }

    fn at_op(&self, y: &DVector<f64>) -> Vec<DMatrix<f64>> {
        self.blocks
            .iter()
            .map(|blk| {
                let mut s = DMatrix::zeros(blk.n, blk.n);
                for (k, trip) in &blk.a {
                    let yk = y[*k];
                    if yk != 0.0 {
                        for &(r, c, v) in trip {
                            s[(r, c)] += yk * v;
                        }
                    }
                }
                s
            })
            .collect()
    }

    /// Schur complement `M_kl = ⟨A_l, X A_k Z⁻¹⟩`.
    fn schur(&self, x: &[DMatrix<f64>], zinv: &[DMatrix<f64>]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.m, self.m);
        for (j, blk) in self.blocks.iter().enumerate() {
            let n = blk.n;
            let mut g = DMatrix::zeros(n, n);
            for (idx, (k, trip)) in blk.a.iter().enumerate() {
                g.fill(0.0);
                for &(r, c, v) in trip {
                    g.ger(v, &x[j].column(r), &zinv[j].column(c), 1.0);
                }
                for (l, trip_l) in &blk.a[idx..] {
                    let val: f64 = trip_l.iter().map(|&(s, t, v)| v * g[(s, t)]).sum();
                    m[(*k, *l)] += val;
                    if k != l {
                        m[(*l, *k)] += val;
                    }
                }
            }
        }
        m
    }
}

fn inner(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn fro(a: &[DMatrix<f64>]) -> f64 {
    a.iter().map(|x| x.norm_squared()).sum::<f64>().sqrt()
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}

/// Largest α with `x + α dx ⪰ 0` (infinite if dx ⪰ 0). `x` must be PD.
fn max_step(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> Option<f64> {
    let l = Cholesky::new(x.clone())?.unpack();
    let t = l.solve_lower_triangular(dx)?;
    let t = l.solve_lower_triangular(&t.transpose())?;
    let lam = SymmetricEigen::new(sym(&t)).eigenvalues.min();
    Some(if lam >= 0.0 { f64::INFINITY } else { -1.0 / lam })
}

fn steps(x: &[DMatrix<f64>], dx: &[DMatrix<f64>]) -> f64 {
    x.iter()
        .zip(dx)
        .map(|(a, d)| max_step(a, d).unwrap_or(0.0))
        .fold(f64::INFINITY, f64::min)
}

struct Factor {
    m: DMatrix<f64>,
    chol: Option<Cholesky<f64, nalgebra::Dyn>>,
    lu: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

impl Factor {
    fn new(m: DMatrix<f64>) -> Self {
        let scale = m.diagonal().amax().max(1e-300);
        let mut work = m.clone();
        let mut delta = 0.0;
        for _ in 0..6 {
            if let Some(ch) = Cholesky::new(work.clone()) {
                return Self {
                    m,
                    chol: Some(ch),
                    lu: None,
                };
            }
            let next = if delta == 0.0 { 1e-14 * scale } else { delta * 100.0 };
            for i in 0..work.nrows() {
                work[(i, i)] += next - delta;
            }
            delta = next;
        }
        Self {
            lu: Some(work.lu()),
            m,
            chol: None,
        }
    }

    fn raw_solve(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        match (&self.chol, &self.lu) {
            (Some(ch), _) => Some(ch.solve(rhs)),
            (None, Some(lu)) => lu.solve(rhs),
            _ => None,
        }
    }

    /// Solve with a few rounds of iterative refinement against the
    /// unregularized matrix.
    fn solve(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        let mut x = self.raw_solve(rhs)?;
        let mut res = rhs - &self.m * &x;
        let mut res_norm = res.norm();
        for _ in 0..3 {
            if res_norm <= 1e-15 * rhs.norm() {
                break;
            }
            let cand = &x + self.raw_solve(&res)?;
            let cand_res = rhs - &self.m * &cand;
            let n = cand_res.norm();
            if n >= res_norm {
                break;
            }
            x = cand;
            res = cand_res;
            res_norm = n;
        }
        Some(x)
    }
}

pub(crate) fn solve(problem: &Compiled, opts: &SolverOptions) -> Result<RawSolution, SdpError> {
    // Scalars that appear in no constraint are either fixed at zero or make
    // the objective unbounded.
    let mut used = vec![false; problem.scalars];
    for blk in &problem.blocks {
        for (k, _) in &blk.coeffs {
            used[*k] = true;
        }
    }
    let mut active_of = vec![usize::MAX; problem.scalars];
    let mut active = Vec::new();
    for k in 0..problem.scalars {
        if used[k] {
            active_of[k] = active.len();
            active.push(k);
        } else if problem.objective[k] != 0.0 {
            return Ok(RawSolution {
                status: Status::Unbounded,
                y: vec![0.0; problem.scalars],
                iterations: 0,
                relative_gap: f64::NAN,
                primal_infeasibility: f64::NAN,
                dual_infeasibility: f64::NAN,
                certificate: None,
            });
        }
    }
    let m = active.len();

    let embed = |y: &DVector<f64>| {
        let mut full = vec![0.0; problem.scalars];
        for (i, &k) in active.iter().enumerate() {
            full[k] = y[i];
        }
        full
    };

    if problem.blocks.is_empty() || m == 0 {
        // Nothing to optimize; feasibility of constant blocks decides.
        let feasible = problem.blocks.iter().all(|b| {
            SymmetricEigen::new(b.constant.clone()).eigenvalues.min() >= b.margin
        });
        return Ok(RawSolution {
            status: if feasible { Status::Optimal } else { Status::Infeasible },
            y: vec![0.0; problem.scalars],
            iterations: 0,
            relative_gap: 0.0,
            primal_infeasibility: 0.0,
            dual_infeasibility: 0.0,
            certificate: None,
        });
    }

    let b_raw = DVector::from_iterator(m, active.iter().map(|&k| -problem.objective[k]));
    let c_raw: Vec<DMatrix<f64>> = problem
        .blocks
        .iter()
        .map(|b| &b.constant - DMatrix::identity(b.size, b.size) * b.margin)
        .collect();

    let b_scale = b_raw.norm().max(1.0);
    let c_scale = fro(&c_raw).max(1.0);

    let data = Data {
        m,
        b: &b_raw / b_scale,
        blocks: problem
            .blocks
            .iter()
            .zip(&c_raw)
            .map(|(blk, c)| Block {
                n: blk.size,
                c: c / c_scale,
                a: blk
                    .coeffs
                    .iter()
                    .map(|(k, t)| (active_of[*k], t.iter().map(|&(r, c, v)| (r, c, -v)).collect()))
                    .collect(),
            })
            .collect(),
    };

    let n_total: usize = data.blocks.iter().map(|b| b.n).sum();
    let norm_b = data.b.norm();
    let norm_c = fro(&data.blocks.iter().map(|b| b.c.clone()).collect::<Vec<_>>());

    // Starting point scaled to the data.
    let mut x: Vec<DMatrix<f64>> = Vec::new();
    let mut z: Vec<DMatrix<f64>> = Vec::new();
    for blk in &data.blocks {
        let n = blk.n as f64;
        let mut xi: f64 = 10f64.max(n.sqrt());
        let mut eta: f64 = 10f64.max(n.sqrt()).max(blk.c.norm());
        for (k, trip) in &blk.a {
            let na = trip.iter().map(|t| t.2 * t.2).sum::<f64>().sqrt();
            xi = xi.max(n * (1.0 + data.b[*k].abs()) / (1.0 + na));
            eta = eta.max(na);
        }
        x.push(DMatrix::identity(blk.n, blk.n) * xi);
        z.push(DMatrix::identity(blk.n, blk.n) * eta);
    }
    let mut y = DVector::zeros(m);

    let mut status = Status::MaxIterations;
    let mut iterations = 0;
    let mut relgap = f64::INFINITY;
    let mut pinf = f64::INFINITY;
    let mut dinf = f64::INFINITY;
    let mut certificate = None;
    let mut tiny_steps = 0;
    // best (merit, y, relgap, pinf, dinf) seen so far
    let mut best: Option<(f64, DVector<f64>, f64, f64, f64)> = None;
    let mut since_best = 0;
    let mut farkas_primal = f64::INFINITY;
    let mut farkas_dual = f64::INFINITY;
    let mut last_pobj = 0.0;

    for iter in 0..=opts.max_iter {
        iterations = iter;
        let ax = data.a_op(&x);
        let rp = &data.b - &ax;
        let aty = data.at_op(&y);
        let rd: Vec<DMatrix<f64>> = data
            .blocks
            .iter()
            .zip(&z)
            .zip(&aty)
            .map(|((blk, zj), aj)| &blk.c - zj - aj)
            .collect();

        let pobj: f64 = data.blocks.iter().zip(&x).map(|(b, xj)| b.c.dot(xj)).sum();
        let dobj = data.b.dot(&y);
        let gap = inner(&x, &z);
        let mu = gap / n_total as f64;

        relgap = gap.max((pobj - dobj).abs()) / (1.0 + pobj.abs() + dobj.abs());
        pinf = rp.norm() / (1.0 + norm_b);
        dinf = fro(&rd) / (1.0 + norm_c);

        if !(relgap.is_finite() && pinf.is_finite() && dinf.is_finite()) {
            break;
        }
        if relgap <= opts.tol && pinf <= opts.tol && dinf <= opts.tol {
            status = Status::Optimal;
            break;
        }
        // At fallback time the primal residual gets 100× slack, and the
        // objective difference it induces is judged through the
        // complementarity gap instead.
        let compl = gap / (1.0 + pobj.abs() + dobj.abs());
        let merit = compl.max(pinf / 100.0).max(dinf);
        if best.as_ref().is_none_or(|b| merit < b.0) {
            best = Some((merit, y.clone(), relgap, pinf, dinf));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= 8 {
                break;
            }
        }
        // Farkas-type certificates from the diverging iterate.
        last_pobj = pobj;
        farkas_primal = if pobj < 0.0 { ax.norm() / pobj.abs() } else { f64::INFINITY };
        if farkas_primal < opts.infeasibility_tol {
            status = Status::Infeasible;
            certificate = Some(x.iter().map(|xj| xj / pobj.abs()).collect());
            break;
        }
        farkas_dual = f64::INFINITY;
        if dobj > 0.0 {
            let resid: Vec<DMatrix<f64>> = aty.iter().zip(&z).map(|(a, zj)| a + zj).collect();
            farkas_dual = fro(&resid) / dobj;
            if farkas_dual < opts.infeasibility_tol {
                status = Status::Unbounded;
                break;
            }
        }
        if iter == opts.max_iter {
            break;
        }


        let zinv: Vec<DMatrix<f64>> = match z
            .iter()
            .map(|zj| Cholesky::new(zj.clone()).map(|c| sym(&c.inverse())))
            .collect::<Option<Vec<_>>>()
        {
            Some(v) => v,
            None => break,
        };
        let factor = Factor::new(data.schur(&x, &zinv));

        let x_rd_zinv: Vec<DMatrix<f64>> = x
            .iter()
            .zip(&rd)
            .zip(&zinv)
            .map(|((xj, rj), zi)| xj * rj * zi)
            .collect();
        let base_rhs = &data.b + data.a_op(&x_rd_zinv);

        let direction = |rhs: &DVector<f64>| -> Option<(DVector<f64>, Vec<DMatrix<f64>>)> {
            let dy = factor.solve(rhs)?;
            let atdy = data.at_op(&dy);
            let dz = rd.iter().zip(&atdy).map(|(r, a)| r - a).collect();
            Some((dy, dz))
        };

        // Predictor (affine scaling).
        let Some((_, dz_p)) = direction(&base_rhs) else { break };
        let dx_p: Vec<DMatrix<f64>> = x
            .iter()
            .zip(&dz_p)
            .zip(&zinv)
            .map(|((xj, dzj), zi)| -xj - sym(&(xj * dzj * zi)))
            .collect();
        let ap = steps(&x, &dx_p).min(1.0);
        let ad = steps(&z, &dz_p).min(1.0);
        let xn: Vec<_> = x.iter().zip(&dx_p).map(|(a, d)| a + d * ap).collect();
        let zn: Vec<_> = z.iter().zip(&dz_p).map(|(a, d)| a + d * ad).collect();
        let expon = 1f64.max(3.0 * ap.min(ad).powi(2));
        let sigma = (inner(&xn, &zn) / gap).max(0.0).powf(expon).min(1.0);

        // Corrector.
        let second: Vec<DMatrix<f64>> = dx_p
            .iter()
            .zip(&dz_p)
            .zip(&zinv)
            .map(|((dx, dz), zi)| dx * dz * zi)
            .collect();
        let rhs = &base_rhs - data.a_op(&zinv) * (sigma * mu) + data.a_op(&second);
        let Some((dy, dz)) = direction(&rhs) else { break };
        let dx: Vec<DMatrix<f64>> = x
            .iter()
            .zip(&dz)
            .zip(&zinv)
            .zip(&second)
            .map(|(((xj, dzj), zi), s)| zi * (sigma * mu) - xj - sym(&(xj * dzj * zi)) - sym(s))
            .collect();

        let gamma = 0.9 + 0.09 * ap.min(ad);
        let alpha_p = (gamma * steps(&x, &dx)).min(1.0);
        let alpha_d = (gamma * steps(&z, &dz)).min(1.0);

        if alpha_p.min(alpha_d) < 1e-10 {
            tiny_steps += 1;
            if tiny_steps >= 3 {
                break;
            }
        } else {
            tiny_steps = 0;
        }

        for (xj, d) in x.iter_mut().zip(&dx) {
            *xj += d * alpha_p;
            *xj = sym(xj);
        }
        for (zj, d) in z.iter_mut().zip(&dz) {
            *zj += d * alpha_d;
            *zj = sym(zj);
        }
        y += dy * alpha_d;
    }

    // Near the optimum the primal residual can stall above `tol` while the
    // dual iterate (the user's variables) stays feasible; fall back to the
    // best iterate and accept it if only the primal residual is loose.
    if status == Status::MaxIterations {
        if let Some((best_merit, by, bg, bp, bd)) = best {
            y = by;
            relgap = bg;
            pinf = bp;
            dinf = bd;
            if best_merit <= opts.tol {
                status = Status::Optimal;
            }
        }
    }
    // A stalled iterate that is already a good Farkas ray is reported as
    // such rather than as a solver failure.
    if status == Status::MaxIterations {
        let loose = opts.infeasibility_tol.sqrt();
        if farkas_primal < loose {
            status = Status::Infeasible;
            certificate = Some(x.iter().map(|xj| xj / last_pobj.abs()).collect());
        } else if farkas_dual < loose {
            status = Status::Unbounded;
        }
    }
    let y_user = embed(&(y * c_scale));
    Ok(RawSolution {
        status,
        y: y_user,
        iterations,
        relative_gap: relgap,
        primal_infeasibility: pinf,
        dual_infeasibility: dinf,
        certificate,
    })
}
