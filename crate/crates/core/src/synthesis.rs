//! Extended H2 state-feedback synthesis on lifted linear models.
//!
//! For `g⁺ = A g + B u + B_w w`, `z = C_z g + D_zu u` and `u = S g`, the
//! closed loop has `‖H_wz‖₂² < tr W` whenever there are `P, W, X, L` with
//!
//! ```text
//! M₁ = [ W   C_z X + D_zu L ]          M₂ = [ P   A X + B L   B_w ]
//!      [ *   X + Xᵀ − P     ] ≻ 0           [ *   X + Xᵀ − P  0   ] ≻ 0
//!                                           [ *   *           I   ]
//! ```
//!
//! and then `S = L X⁻¹`. `X` and `L` do not multiply the Lyapunov matrix,
//! so one `(X, L)` can be shared by all vertices of a polytope while each
//! vertex keeps its own `(P_i, W_i)`.
//!
//! Strict inequalities are enforced as `⪰ εI`; every certificate is checked
//! again at `ε/2` outside the solver.

use dense_sdp::{min_eig, AffineExpr, Problem, SdpError, SdpSolution, SolverOptions, Status};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edmd::LinearPredictor;
use crate::linalg::{all_finite, matrix_serde, spectral_radius};
use crate::polytope::{PolytopeModel, Vertex};

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("synthesis infeasible ({0})")]
    Infeasible(SolverReport),
    #[error("closed loop is unstable (spectral radius {0:.6})")]
    Unstable(f64),
    #[error("solver did not converge ({0})")]
    SolverFailure(SolverReport),
    #[error("X is numerically singular (reciprocal condition {0:e})")]
    SingularX(f64),
    #[error("certificate `{name}` fails re-check: min eigenvalue {min_eig:e} < {required:e}")]
    Certificate { name: String, min_eig: f64, required: f64 },
    #[error("vertex {vertex} closed loop has spectral radius {radius:.6} >= 1")]
    VertexUnstable { vertex: usize, radius: f64 },
    #[error("Riccati iteration failed: {0}")]
    Riccati(String),
    #[error(transparent)]
    Sdp(#[from] SdpError),
}

/// Solver outcome summary kept with every result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub status: String,
    pub objective: f64,
    pub iterations: usize,
    pub relative_gap: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub min_slack: f64,
}

impl From<&SdpSolution> for SolverReport {
    fn from(s: &SdpSolution) -> Self {
        Self {
            status: s.status.to_string(),
            objective: s.objective,
            iterations: s.diagnostics.iterations,
            relative_gap: s.diagnostics.relative_gap,
            primal_infeasibility: s.diagnostics.primal_infeasibility,
            dual_infeasibility: s.diagnostics.dual_infeasibility,
            min_slack: s.diagnostics.min_slack,
        }
    }
}

impl std::fmt::Display for SolverReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "status {}, {} iterations, gap {:.2e}, primal res {:.2e}, dual res {:.2e}",
            self.status, self.iterations, self.relative_gap, self.primal_infeasibility, self.dual_infeasibility
        )
    }
}

/// Performance output `z = C_z g + D_zu u`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedPlant {
    #[serde(with = "matrix_serde")]
    pub c_z: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub d_zu: DMatrix<f64>,
}

impl GeneralizedPlant {
    pub fn new(c_z: DMatrix<f64>, d_zu: DMatrix<f64>) -> Result<Self, SynthesisError> {
        if c_z.nrows() != d_zu.nrows() {
            return Err(SynthesisError::Dimension(format!(
                "C_z has {} rows, D_zu has {}",
                c_z.nrows(),
                d_zu.nrows()
            )));
        }
        if !all_finite(&c_z) || !all_finite(&d_zu) {
            return Err(SynthesisError::Dimension("non-finite C_z or D_zu".into()));
        }
        Ok(Self { c_z, d_zu })
    }

    pub fn outputs(&self) -> usize {
        self.c_z.nrows()
    }

    fn check(&self, n: usize, p: usize) -> Result<(), SynthesisError> {
        if self.c_z.ncols() != n || self.d_zu.ncols() != p {
            return Err(SynthesisError::Dimension(format!(
                "C_z is {}x{} and D_zu is {}x{}, model has N={n}, p={p}",
                self.c_z.nrows(),
                self.c_z.ncols(),
                self.d_zu.nrows(),
                self.d_zu.ncols()
            )));
        }
        Ok(())
    }
}

fn check_square(name: &str, m: &DMatrix<f64>, n: usize) -> Result<(), SynthesisError> {
    if m.shape() != (n, n) {
        return Err(SynthesisError::Dimension(format!("{name} is {}x{}, expected {n}x{n}", m.nrows(), m.ncols())));
    }
    Ok(())
}

fn check_shape(name: &str, m: &DMatrix<f64>, r: usize, c: usize) -> Result<(), SynthesisError> {
    if m.shape() != (r, c) {
        return Err(SynthesisError::Dimension(format!(
            "{name} is {}x{}, expected {r}x{c}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn stack(blocks: &[&[&DMatrix<f64>]]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|r| r[0].nrows()).sum();
    let cols: usize = blocks[0].iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r0 = 0;
    for row in blocks {
        let mut c0 = 0;
        for b in row.iter() {
            out.view_mut((r0, c0), b.shape()).copy_from(b);
            c0 += b.ncols();
        }
        r0 += row[0].nrows();
    }
    out
}

/// `[W, C_z X + D_zu L; *, X + Xᵀ − P]`
pub fn build_m1(
    w: &DMatrix<f64>,
    x: &DMatrix<f64>,
    l: &DMatrix<f64>,
    p: &DMatrix<f64>,
    c_z: &DMatrix<f64>,
    d_zu: &DMatrix<f64>,
) -> Result<DMatrix<f64>, SynthesisError> {
    let n = x.nrows();
    let d = w.nrows();
    check_square("X", x, n)?;
    check_square("P", p, n)?;
    check_square("W", w, d)?;
    check_shape("C_z", c_z, d, n)?;
    check_shape("D_zu", d_zu, d, l.nrows())?;
    check_shape("L", l, d_zu.ncols(), n)?;
    let off = c_z * x + d_zu * l;
    let low = x + x.transpose() - p;
    Ok(stack(&[&[w, &off], &[&off.transpose(), &low]]))
}

/// `[P, A X + B L, B_w; *, X + Xᵀ − P, 0; *, *, I]`
pub fn build_m2(
    p: &DMatrix<f64>,
    x: &DMatrix<f64>,
    l: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    b_w: &DMatrix<f64>,
) -> Result<DMatrix<f64>, SynthesisError> {
    let n = x.nrows();
    check_square("X", x, n)?;
    check_square("P", p, n)?;
    check_square("A", a, n)?;
    check_shape("B", b, n, l.nrows())?;
    check_shape("L", l, b.ncols(), n)?;
    if b_w.nrows() != n {
        return Err(SynthesisError::Dimension(format!("B_w has {} rows, expected {n}", b_w.nrows())));
    }
    let q = b_w.ncols();
    let off = a * x + b * l;
    let mid = x + x.transpose() - p;
    let z = DMatrix::zeros(n, q);
    let i = DMatrix::identity(q, q);
    Ok(stack(&[
        &[p, &off, b_w],
        &[&off.transpose(), &mid, &z],
        &[&b_w.transpose(), &z.transpose(), &i],
    ]))
}

/// Symbolic `M₁` with closed-loop output map `C_z X + D_zu L` supplied.
fn m1_expr(w: AffineExpr, cx: AffineExpr, x: &AffineExpr, p: &AffineExpr) -> AffineExpr {
    let low = x.clone() + x.transpose() - p.clone();
    AffineExpr::symmetric_blocks(vec![vec![Some(w), Some(cx)], vec![None, Some(low)]])
}

/// Symbolic `M₂` with closed-loop term `A X + B L` supplied.
fn m2_expr(p: &AffineExpr, ax: AffineExpr, x: &AffineExpr, b_w: &DMatrix<f64>) -> AffineExpr {
    let q = b_w.ncols();
    let mid = x.clone() + x.transpose() - p.clone();
    AffineExpr::symmetric_blocks(vec![
        vec![Some(p.clone()), Some(ax), Some(AffineExpr::constant(b_w.clone()))],
        vec![None, Some(mid), None],
        vec![None, None, Some(AffineExpr::identity(q))],
    ])
}

#[derive(Clone, Debug, Default)]
pub struct SynthesisOptions {
    pub solver: SolverOptions,
    /// One Lyapunov matrix `P` (and `W`) for all vertices instead of one per
    /// vertex.
    pub shared_lyapunov: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Robust,
    Nominal,
    Lqr,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Robust => "robust",
            Method::Nominal => "nominal",
            Method::Lqr => "lqr",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub method: Method,
    #[serde(with = "matrix_serde")]
    pub gain: DMatrix<f64>,
    /// `max_i tr(W_i)`
    pub j_syn: f64,
    #[serde(with = "matrix_serde")]
    pub x: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub l: DMatrix<f64>,
    #[serde(with = "matrix_serde::vec")]
    pub p: Vec<DMatrix<f64>>,
    #[serde(with = "matrix_serde::vec")]
    pub w: Vec<DMatrix<f64>>,
    pub vertex_traces: Vec<f64>,
    /// `ρ(Ã_i + B̃_i S)` per vertex, computed outside the solver.
    pub spectral_radii: Vec<f64>,
    pub solver: SolverReport,
}

struct System<'a> {
    a: &'a DMatrix<f64>,
    b: &'a DMatrix<f64>,
    b_w: &'a DMatrix<f64>,
}

/// The robust synthesis SDP for a list of systems, without solving it.
fn synthesis_problem(
    systems: &[System],
    plant: &GeneralizedPlant,
    shared: bool,
) -> Result<(Problem, Handles), SynthesisError> {
    let first = systems.first().ok_or_else(|| SynthesisError::Dimension("no vertices".into()))?;
    let (n, p) = (first.a.nrows(), first.b.ncols());
    for (i, s) in systems.iter().enumerate() {
        check_square(&format!("A[{i}]"), s.a, n)?;
        check_shape(&format!("B[{i}]"), s.b, n, p)?;
        check_shape(&format!("B_w[{i}]"), s.b_w, n, first.b_w.ncols())?;
        if !(all_finite(s.a) && all_finite(s.b) && all_finite(s.b_w)) {
            return Err(SynthesisError::Dimension(format!("vertex {i} has non-finite entries")));
        }
    }
    plant.check(n, p)?;
    let d = plant.outputs();

    let mut prob = Problem::new();
    let x = prob.rectangular("X", n, n);
    let l = prob.rectangular("L", p, n);
    let count = if shared { 1 } else { systems.len() };
    let ps: Vec<_> = (0..count).map(|i| prob.symmetric(format!("P{}", i + 1), n)).collect();
    let ws: Vec<_> = (0..count).map(|i| prob.symmetric(format!("W{}", i + 1), d)).collect();
    let mu = prob.scalar("mu");

    let xe = prob.var(x);
    let le = prob.var(l);
    let cx = xe.premul(&plant.c_z) + le.premul(&plant.d_zu);
    for i in 0..count {
        let pe = prob.var(ps[i]);
        prob.add_lmi(format!("M1[{}]", i + 1), m1_expr(prob.var(ws[i]), cx.clone(), &xe, &pe))?;
        let mut trace = AffineExpr::zeros(1, 1);
        for k in 0..d {
            let mut e = DMatrix::zeros(1, d);
            e[(0, k)] = 1.0;
            trace = trace + prob.var(ws[i]).premul(&e).postmul(&e.transpose());
        }
        prob.add_lmi_with_margin(format!("epigraph[{}]", i + 1), prob.var(mu) - trace, 0.0)?;
    }
    for (i, s) in systems.iter().enumerate() {
        let pe = prob.var(ps[if shared { 0 } else { i }]);
        let ax = xe.premul(s.a) + le.premul(s.b);
        prob.add_lmi(format!("M2[{}]", i + 1), m2_expr(&pe, ax, &xe, s.b_w))?;
    }
    prob.minimize(mu, DMatrix::identity(1, 1));
    Ok((prob, Handles { x, l, ps, ws }))
}

struct Handles {
    x: dense_sdp::VarId,
    l: dense_sdp::VarId,
    ps: Vec<dense_sdp::VarId>,
    ws: Vec<dense_sdp::VarId>,
}

fn classify(sol: &SdpSolution) -> Result<(), SynthesisError> {
    match sol.status {
        Status::Optimal => Ok(()),
        Status::Infeasible => Err(SynthesisError::Infeasible(sol.into())),
        Status::Unbounded | Status::MaxIterations => Err(SynthesisError::SolverFailure(sol.into())),
    }
}

fn recheck(prob: &Problem, sol: &SdpSolution, margin: f64) -> Result<(), SynthesisError> {
    for (c, f) in prob.constraints().iter().zip(sol.constraint_values()) {
        let required = c.margin.unwrap_or(margin) / 2.0;
        let sym = (f + f.transpose()) * 0.5;
        let e = min_eig(&sym)?;
        if e < required {
            return Err(SynthesisError::Certificate {
                name: c.name.clone(),
                min_eig: e,
                required,
            });
        }
    }
    Ok(())
}

fn run(
    method: Method,
    systems: &[System],
    plant: &GeneralizedPlant,
    opts: &SynthesisOptions,
) -> Result<SynthesisResult, SynthesisError> {
    let (prob, h) = synthesis_problem(systems, plant, opts.shared_lyapunov)?;
    let sol = prob.solve(&opts.solver)?;
    classify(&sol)?;
    recheck(&prob, &sol, opts.solver.margin)?;

    let x = sol.value(h.x).clone();
    let l = sol.value(h.l).clone();
    let sv = x.singular_values();
    let rcond = sv.min() / sv.max();
    if !(rcond > 1e-13) {
        return Err(SynthesisError::SingularX(rcond));
    }
    let x_inv = x.clone().try_inverse().ok_or(SynthesisError::SingularX(rcond))?;
    let gain = &l * x_inv;

    let w: Vec<DMatrix<f64>> = h.ws.iter().map(|&id| sol.value(id).clone()).collect();
    let vertex_traces: Vec<f64> = w.iter().map(|m| m.trace()).collect();
    let j_syn = vertex_traces.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut spectral_radii = Vec::with_capacity(systems.len());
    for (vertex, s) in systems.iter().enumerate() {
        let radius = spectral_radius(&(s.a + s.b * &gain));
        if !(radius < 1.0) {
            return Err(SynthesisError::VertexUnstable { vertex, radius });
        }
        spectral_radii.push(radius);
    }
    Ok(SynthesisResult {
        method,
        gain,
        j_syn,
        x,
        l,
        p: h.ps.iter().map(|&id| sol.value(id).clone()).collect(),
        w,
        vertex_traces,
        spectral_radii,
        solver: (&sol).into(),
    })
}

fn vertex_systems(vertices: &[Vertex]) -> Vec<System<'_>> {
    vertices
        .iter()
        .map(|v| System {
            a: &v.a,
            b: &v.b,
            b_w: &v.b_w,
        })
        .collect()
}

/// Common gain minimizing the worst vertex bound `max_i tr(W_i)`.
pub fn robust_synthesis(
    poly: &PolytopeModel,
    plant: &GeneralizedPlant,
    opts: &SynthesisOptions,
) -> Result<SynthesisResult, SynthesisError> {
    run(Method::Robust, &vertex_systems(&poly.vertices), plant, opts)
}

/// Same as [`robust_synthesis`] for an explicit list of vertices.
pub fn robust_synthesis_vertices(
    vertices: &[Vertex],
    plant: &GeneralizedPlant,
    opts: &SynthesisOptions,
) -> Result<SynthesisResult, SynthesisError> {
    run(Method::Robust, &vertex_systems(vertices), plant, opts)
}

pub fn nominal_synthesis(
    model: &LinearPredictor,
    plant: &GeneralizedPlant,
    opts: &SynthesisOptions,
) -> Result<SynthesisResult, SynthesisError> {
    let sys = [System {
        a: &model.a,
        b: &model.b,
        b_w: &model.b_w,
    }];
    run(Method::Nominal, &sys, plant, opts)
}

/// Plain-text dump of the robust synthesis SDP.
pub fn robust_problem_dump(
    poly: &PolytopeModel,
    plant: &GeneralizedPlant,
    opts: &SynthesisOptions,
) -> Result<String, SynthesisError> {
    let (prob, _) = synthesis_problem(&vertex_systems(&poly.vertices), plant, opts.shared_lyapunov)?;
    Ok(prob.dump(opts.solver.margin)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct H2Certificate {
    /// `tr(W)`
    pub j: f64,
    #[serde(with = "matrix_serde")]
    pub p: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub w: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub x: DMatrix<f64>,
    pub spectral_radius: f64,
    pub solver: SolverReport,
}

/// Smallest certified `tr(W)` for the fixed gain `S` on one model.
pub fn evaluate_h2_bound(
    model: &LinearPredictor,
    plant: &GeneralizedPlant,
    gain: &DMatrix<f64>,
    solver: &SolverOptions,
) -> Result<H2Certificate, SynthesisError> {
    let (n, p) = (model.a.nrows(), model.b.ncols());
    check_square("A", &model.a, n)?;
    check_shape("B", &model.b, n, p)?;
    check_shape("S", gain, p, n)?;
    plant.check(n, p)?;
    let a_cl = &model.a + &model.b * gain;
    let c_cl = &plant.c_z + &plant.d_zu * gain;
    let radius = spectral_radius(&a_cl);
    if !(radius < 1.0) {
        return Err(SynthesisError::Unstable(radius));
    }

    // The bound is homogeneous: scaling C by 1/s_c and B_w by 1/s_w maps a
    // feasible (P, X, W) to (P/s_w², X/s_w², W/(s_c s_w)²) by congruence.
    // Solving the normalized problem keeps the strictness margin relative.
    let unit = |m: &DMatrix<f64>| {
        let s = m.norm();
        if s > 0.0 && s.is_finite() {
            s
        } else {
            1.0
        }
    };
    let (s_c, s_w) = (unit(&c_cl), unit(&model.b_w));
    let d = plant.outputs();
    let mut prob = Problem::new();
    let pv = prob.symmetric("P", n);
    let wv = prob.symmetric("W", d);
    let xv = prob.rectangular("X", n, n);
    let xe = prob.var(xv);
    let pe = prob.var(pv);
    prob.add_lmi("M3", m1_expr(prob.var(wv), xe.premul(&(&c_cl / s_c)), &xe, &pe))?;
    prob.add_lmi("M4", m2_expr(&pe, xe.premul(&a_cl), &xe, &(&model.b_w / s_w)))?;
    prob.minimize_trace(wv);
    let sol = prob.solve(solver)?;
    if sol.status != Status::Optimal {
        // a stable loop is always feasible, so anything else is numerical
        return Err(SynthesisError::SolverFailure((&sol).into()));
    }
    recheck(&prob, &sol, solver.margin)?;
    let w = sol.value(wv) * (s_c * s_w).powi(2);
    Ok(H2Certificate {
        j: w.trace(),
        p: sol.value(pv) * s_w.powi(2),
        w,
        x: sol.value(xv) * s_w.powi(2),
        spectral_radius: radius,
        solver: (&sol).into(),
    })
}

/// `‖C (zI − A)⁻¹ B_w‖₂` from the controllability Gramian
/// `P = A P Aᵀ + B_w B_wᵀ`, summed by doubling.
pub fn h2_lyapunov(a_cl: &DMatrix<f64>, b_w: &DMatrix<f64>, c_cl: &DMatrix<f64>) -> Result<f64, SynthesisError> {
    let n = a_cl.nrows();
    check_square("A_cl", a_cl, n)?;
    if b_w.nrows() != n || c_cl.ncols() != n {
        return Err(SynthesisError::Dimension("B_w rows and C columns must match A".into()));
    }
    let radius = spectral_radius(a_cl);
    if !(radius < 1.0) {
        return Err(SynthesisError::Unstable(radius));
    }
    let gram = lyapunov_sum(a_cl, &(b_w * b_w.transpose()));
    Ok((c_cl * gram * c_cl.transpose()).trace().max(0.0).sqrt())
}

/// `Σ_k A^k Q (Aᵀ)^k` for stable `A`.
pub fn lyapunov_sum(a: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = q.clone();
    let mut ak = a.clone();
    for _ in 0..200 {
        let inc = &ak * &p * ak.transpose();
        let done = inc.norm() <= 1e-12 * p.norm().max(f64::MIN_POSITIVE);
        p += inc;
        if done {
            break;
        }
        ak = &ak * &ak;
    }
    p
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LqrResult {
    /// `u = S g`
    #[serde(with = "matrix_serde")]
    pub gain: DMatrix<f64>,
    /// Stabilizing DARE solution.
    #[serde(with = "matrix_serde")]
    pub riccati: DMatrix<f64>,
    pub iterations: usize,
    pub spectral_radius: f64,
}

/// Infinite-horizon discrete LQR by the structured doubling algorithm.
pub fn lqr_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<LqrResult, SynthesisError> {
    let (n, p) = (a.nrows(), b.ncols());
    check_square("A", a, n)?;
    check_shape("B", b, n, p)?;
    check_square("Q", q, n)?;
    check_square("R", r, p)?;
    if (q - q.transpose()).amax() > 1e-12 * q.amax().max(1.0) || (r - r.transpose()).amax() > 1e-12 * r.amax().max(1.0) {
        return Err(SynthesisError::Dimension("Q and R must be symmetric".into()));
    }
    if n > 0 && min_eig(q)? < -1e-12 * q.amax().max(1.0) {
        return Err(SynthesisError::Dimension("Q must be positive semidefinite".into()));
    }
    let r_chol = r
        .clone()
        .cholesky()
        .ok_or_else(|| SynthesisError::Dimension("R must be positive definite".into()))?;

    let mut ak = a.clone();
    let mut gk = b * r_chol.solve(&b.transpose());
    let mut hk = q.clone();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=100 {
        iterations = it;
        let m = (&eye + &gk * &hk)
            .lu()
            .try_inverse()
            .ok_or_else(|| SynthesisError::Riccati("singular I + G H".into()))?;
        let a_next = &ak * &m * &ak;
        let g_next = &gk + &ak * &m * &gk * ak.transpose();
        let h_next = &hk + ak.transpose() * &hk * &m * &ak;
        let step = (&h_next - &hk).norm();
        ak = a_next;
        gk = (&g_next + g_next.transpose()) * 0.5;
        hk = (&h_next + h_next.transpose()) * 0.5;
        if !all_finite(&hk) {
            return Err(SynthesisError::Riccati("iterates diverged".into()));
        }
        if step <= 1e-12 * hk.norm().max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(SynthesisError::Riccati(format!("no convergence after {iterations} doubling steps")));
    }
    let x = hk;
    let btx = b.transpose() * &x;
    let gain = -(r + &btx * b)
        .lu()
        .solve(&(&btx * a))
        .ok_or_else(|| SynthesisError::Riccati("singular R + BᵀXB".into()))?;
    let radius = spectral_radius(&(a + b * &gain));
    if !(radius < 1.0) {
        return Err(SynthesisError::Riccati(format!(
            "gain is not stabilizing (spectral radius {radius:.6})"
        )));
    }
    Ok(LqrResult {
        gain,
        riccati: x,
        iterations,
        spectral_radius: radius,
    })
}
