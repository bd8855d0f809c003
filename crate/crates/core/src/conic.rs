//! Interior-point machinery for the semidefinite subproblems: linear
//! objectives over the positive cone intersected with the moment
//! constraints, the box-relaxed dual program used for certification, and
//! a feasibility projection.
//!
//! The cone is one dense Hermitian PSD block (Alice tensor Bob) plus an
//! optional nonnegative orthant for slack variables. Constraints are kept
//! in block-sparse form — a short list of `(row_block, col_block, block)`
//! entries — which the Schur-complement assembly exploits; the solver is
//! an infeasible primal-dual method with the HKM direction and Mehrotra
//! predictor-corrector steps.

use ndarray::{Array1, Array2, ArrayView2};
use ndarray_linalg::c64;

use crate::error::{Error, Result};
use crate::linalg::{
    add_to_block, block, eigh, eigvalsh, frob_inner, hermitize, identity, reconstruct, trace,
    tr_prod,
};

/// The PSD block factors as `n_blocks` copies of a `block_dim`-dimensional
/// space (Alice's classical register times Bob's mode).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockStructure {
    pub n_blocks: usize,
    pub block_dim: usize,
}

impl BlockStructure {
    pub fn new(n_blocks: usize, block_dim: usize) -> Self {
        Self { n_blocks, block_dim }
    }

    pub fn dim(&self) -> usize {
        self.n_blocks * self.block_dim
    }
}

/// One `block_dim x block_dim` block of a constraint matrix.
#[derive(Debug, Clone)]
pub enum Block {
    /// `c * I` on the block.
    ScaledIdentity(c64),
    Dense(Array2<c64>),
}

impl Block {
    fn frob_sq(&self, b: usize) -> f64 {
        match self {
            Block::ScaledIdentity(c) => c.norm_sqr() * b as f64,
            Block::Dense(d) => d.iter().map(|z| z.norm_sqr()).sum(),
        }
    }
}

/// `Tr[B N]`.
fn block_tr(blk: &Block, n: &ArrayView2<c64>) -> c64 {
    match blk {
        Block::ScaledIdentity(c) => *c * trace(n),
        Block::Dense(d) => tr_prod(&d.view(), n),
    }
}

/// `Tr[B^dag N]` (elementwise `conj(B) . N`).
fn block_tr_adj(blk: &Block, n: &ArrayView2<c64>) -> c64 {
    match blk {
        Block::ScaledIdentity(c) => c.conj() * trace(n),
        Block::Dense(d) => d.iter().zip(n.iter()).map(|(x, y)| x.conj() * y).sum(),
    }
}

/// Hermitian constraint matrix in block-sparse form. Entries are stored
/// for `row_block <= col_block`; the adjoint partner at the mirrored
/// position is implied. Diagonal entries must themselves be Hermitian.
#[derive(Debug, Clone)]
pub struct ConstraintMatrix {
    pub blocks: Vec<(usize, usize, Block)>,
}

impl ConstraintMatrix {
    pub fn new(blocks: Vec<(usize, usize, Block)>) -> Self {
        debug_assert!(blocks.iter().all(|(r, c, _)| r <= c));
        Self { blocks }
    }

    /// Single dense matrix as a one-block constraint.
    pub fn dense(m: Array2<c64>) -> Self {
        Self { blocks: vec![(0, 0, Block::Dense(m))] }
    }

    /// `Re Tr(Gamma M)` for arbitrary (not necessarily Hermitian) `M`.
    pub fn apply(&self, m: &Array2<c64>, st: &BlockStructure) -> f64 {
        let b = st.block_dim;
        let mut acc = c64::new(0.0, 0.0);
        for (r, c, blk) in &self.blocks {
            acc += block_tr(blk, &block(m, *c, *r, b));
            if r != c {
                acc += block_tr_adj(blk, &block(m, *r, *c, b));
            }
        }
        acc.re
    }

    /// `out += coeff * Gamma`.
    pub fn add_scaled_to(&self, out: &mut Array2<c64>, coeff: f64, st: &BlockStructure) {
        let b = st.block_dim;
        let cf = c64::new(coeff, 0.0);
        for (r, c, blk) in &self.blocks {
            match blk {
                Block::ScaledIdentity(s) => {
                    let eye = identity(b);
                    add_to_block(out, *r, *c, b, cf * s, &eye.view());
                    if r != c {
                        add_to_block(out, *c, *r, b, cf * s.conj(), &eye.view());
                    }
                }
                Block::Dense(d) => {
                    add_to_block(out, *r, *c, b, cf, &d.view());
                    if r != c {
                        let adj = d.t().mapv(|z| z.conj());
                        add_to_block(out, *c, *r, b, cf, &adj.view());
                    }
                }
            }
        }
    }

    pub fn to_dense(&self, st: &BlockStructure) -> Array2<c64> {
        let mut out = Array2::zeros((st.dim(), st.dim()));
        self.add_scaled_to(&mut out, 1.0, st);
        out
    }

    pub fn frob_norm(&self, st: &BlockStructure) -> f64 {
        let b = st.block_dim;
        let mut acc = 0.0;
        for (r, c, blk) in &self.blocks {
            let f = blk.frob_sq(b);
            acc += if r == c { f } else { 2.0 * f };
        }
        acc.sqrt()
    }

    pub fn scale(&mut self, f: f64) {
        for (_, _, blk) in &mut self.blocks {
            match blk {
                Block::ScaledIdentity(c) => *c *= f,
                Block::Dense(d) => d.mapv_inplace(|z| z * f),
            }
        }
    }

    /// `Re <Gamma_a, Gamma_b>` (Frobenius).
    pub fn frob_inner(&self, other: &Self, st: &BlockStructure) -> f64 {
        let b = st.block_dim;
        let mut acc = 0.0;
        for (r1, c1, b1) in &self.blocks {
            for (r2, c2, b2) in &other.blocks {
                if r1 == r2 && c1 == c2 {
                    let v = match (b1, b2) {
                        (Block::ScaledIdentity(s), Block::ScaledIdentity(t)) => {
                            (s.conj() * t).re * b as f64
                        }
                        (Block::ScaledIdentity(s), Block::Dense(d)) => (s.conj() * trace(&d.view())).re,
                        (Block::Dense(d), Block::ScaledIdentity(s)) => (s * trace(&d.view()).conj()).re,
                        (Block::Dense(d), Block::Dense(e)) => frob_inner(&d.view(), &e.view()),
                    };
                    acc += if r1 == c1 { v } else { 2.0 * v };
                }
            }
        }
        acc
    }
}

/// Result of constraint preprocessing: unit-norm rows, with linearly
/// dependent rows removed (consistency of their right-hand sides checked).
#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub constraints: Vec<ConstraintMatrix>,
    pub rhs: Array1<f64>,
    /// Indices into the original list.
    pub kept: Vec<usize>,
    /// Scale applied to each kept row (`Gamma' = scale * Gamma`).
    pub scales: Vec<f64>,
}

/// Rescales every row to unit Frobenius norm and drops rows that are
/// linear combinations of earlier ones (sequential Gram-Cholesky rank
/// test). A dropped row whose right-hand side contradicts the implied
/// combination is an inconsistency error.
pub fn preprocess_constraints(
    constraints: &[ConstraintMatrix],
    rhs: &[f64],
    st: &BlockStructure,
) -> Result<Preprocessed> {
    let m = constraints.len();
    if rhs.len() != m {
        return Err(Error::InvalidArgument(
            "constraint and rhs lengths differ".into(),
        ));
    }
    let mut kept: Vec<usize> = Vec::with_capacity(m);
    let mut out_cons: Vec<ConstraintMatrix> = Vec::with_capacity(m);
    let mut out_rhs: Vec<f64> = Vec::with_capacity(m);
    let mut scales: Vec<f64> = Vec::with_capacity(m);
    // growing lower-triangular Cholesky factor of the Gram matrix
    let mut chol: Vec<Vec<f64>> = Vec::with_capacity(m);
    const RANK_TOL: f64 = 1e-10;

    for i in 0..m {
        let norm = constraints[i].frob_norm(st);
        if norm <= 1e-300 {
            if rhs[i].abs() > 1e-10 {
                return Err(Error::InvalidArgument(format!(
                    "zero constraint row {i} with nonzero rhs {}",
                    rhs[i]
                )));
            }
            continue;
        }
        let mut cand = constraints[i].clone();
        cand.scale(1.0 / norm);
        let b_i = rhs[i] / norm;

        // inner products with the kept rows, then forward substitution
        let k = kept.len();
        let mut g: Vec<f64> = (0..k).map(|j| out_cons[j].frob_inner(&cand, st)).collect();
        for j in 0..k {
            let mut v = g[j];
            for l in 0..j {
                v -= chol[j][l] * g[l];
            }
            g[j] = v / chol[j][j];
        }
        let res_sq = 1.0 - g.iter().map(|w| w * w).sum::<f64>();
        if res_sq > RANK_TOL {
            let mut row = g;
            row.push(res_sq.sqrt());
            chol.push(row);
            kept.push(i);
            out_cons.push(cand);
            out_rhs.push(b_i);
            scales.push(1.0 / norm);
        } else {
            // back substitution gives the coefficients of the dependency
            let mut coeffs = g;
            for j in (0..k).rev() {
                let mut v = coeffs[j];
                for l in (j + 1)..k {
                    v -= chol[l][j] * coeffs[l];
                }
                coeffs[j] = v / chol[j][j];
            }
            let implied: f64 = coeffs.iter().zip(out_rhs.iter()).map(|(c, b)| c * b).sum();
            if (implied - b_i).abs() > 1e-7 * (1.0 + b_i.abs()) {
                return Err(Error::InvalidArgument(format!(
                    "dependent constraint row {i} has inconsistent rhs: {b_i} vs implied {implied}"
                )));
            }
        }
    }
    Ok(Preprocessed {
        constraints: out_cons,
        rhs: Array1::from(out_rhs),
        kept,
        scales,
    })
}

/// Nonnegative slack variables coupled linearly into the equality rows.
#[derive(Debug, Clone)]
pub struct OrthantPart {
    pub dim: usize,
    /// Objective coefficients on the slacks.
    pub objective: Array1<f64>,
    /// `rows[i]` holds the sparse slack coefficients of constraint `i`.
    pub rows: Vec<Vec<(usize, f64)>>,
}

#[derive(Debug, Clone)]
pub struct SdpProblem {
    pub structure: BlockStructure,
    /// Dense Hermitian objective `C`; minimizes `Re Tr(C X)`.
    pub objective: Array2<c64>,
    pub constraints: Vec<ConstraintMatrix>,
    pub rhs: Array1<f64>,
    pub orthant: Option<OrthantPart>,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Relative duality-gap target.
    pub gap_tol: f64,
    /// Relative primal/dual residual target.
    pub feas_tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { gap_tol: 1e-8, feas_tol: 1e-8, max_iter: 150 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    SlowProgress,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub iterations: usize,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub relative_gap: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    /// Primal PSD variable.
    pub x: Array2<c64>,
    /// Slack values, if an orthant was present.
    pub slacks: Array1<f64>,
    /// Dual multipliers, one per constraint row of the problem as given.
    pub y: Array1<f64>,
    /// Dual slack `S = C - A*(y)` on the PSD block.
    pub s: Array2<c64>,
    pub report: SolveReport,
}

/// Classification used by the structured Schur assembly.
enum ConKind {
    /// All blocks are scaled identities; expanded entries including the
    /// implied adjoint partners.
    Scaled(Vec<(usize, usize, c64)>),
    /// A single Hermitian dense block on the diagonal.
    DiagDense { x: usize, f: Array2<c64> },
    General,
}

fn classify(c: &ConstraintMatrix) -> ConKind {
    if c.blocks.iter().all(|(_, _, b)| matches!(b, Block::ScaledIdentity(_))) {
        let mut entries = Vec::new();
        for (r, cc, b) in &c.blocks {
            if let Block::ScaledIdentity(s) = b {
                entries.push((*r, *cc, *s));
                if r != cc {
                    entries.push((*cc, *r, s.conj()));
                }
            }
        }
        return ConKind::Scaled(entries);
    }
    if c.blocks.len() == 1 {
        if let (r, cc, Block::Dense(d)) = &c.blocks[0] {
            if r == cc {
                return ConKind::DiagDense { x: *r, f: d.clone() };
            }
        }
    }
    ConKind::General
}

/// `M_ij = Re Tr(Gamma_i X Gamma_j S^{-1})` for all pairs, exploiting the
/// block sparsity of the constraints.
fn assemble_schur(
    kinds: &[ConKind],
    dense: &[Array2<c64>],
    cons: &[ConstraintMatrix],
    x: &Array2<c64>,
    sinv: &Array2<c64>,
    st: &BlockStructure,
) -> Array2<f64> {
    let m = kinds.len();
    let structured = kinds.iter().all(|k| !matches!(k, ConKind::General));
    let mut out = Array2::zeros((m, m));
    if !structured {
        // fallback: W_j = X Gamma_j S^{-1} dense, then entrywise traces
        for j in 0..m {
            let w = x.dot(&dense[j]).dot(sinv);
            for i in 0..m {
                out[(i, j)] = cons[i].apply(&w, st);
            }
        }
        return out;
    }

    let nb = st.n_blocks;
    let b = st.block_dim;
    // all-pairs block trace table: tp[a][bb][c][dd] = Tr[X[a,bb] Sinv[c,dd]]
    let idx = |a: usize, bb: usize, c: usize, dd: usize| ((a * nb + bb) * nb + c) * nb + dd;
    let mut tp = vec![c64::new(0.0, 0.0); nb * nb * nb * nb];
    for a in 0..nb {
        for bb in 0..nb {
            let xab = block(x, a, bb, b);
            for c in 0..nb {
                for dd in 0..nb {
                    tp[idx(a, bb, c, dd)] = tr_prod(&xab, &block(sinv, c, dd, b));
                }
            }
        }
    }

    // per dense-diagonal constraint: P_a = F X[x,a], Q_a = F Sinv[x,a],
    // g[a][bb] = Tr[X[a,x] F Sinv[x,bb]], h[a][bb] = Tr[F X[x,a] Sinv[bb,x]]
    struct DenseTables {
        x_blk: usize,
        p: Vec<Array2<c64>>,
        q: Vec<Array2<c64>>,
        g: Vec<c64>,
        h: Vec<c64>,
    }
    let mut tables: Vec<Option<DenseTables>> = Vec::with_capacity(m);
    for kind in kinds {
        if let ConKind::DiagDense { x: xb, f } = kind {
            let p: Vec<Array2<c64>> = (0..nb).map(|a| f.dot(&block(x, *xb, a, b))).collect();
            let q: Vec<Array2<c64>> = (0..nb).map(|a| f.dot(&block(sinv, *xb, a, b))).collect();
            let mut g = vec![c64::new(0.0, 0.0); nb * nb];
            let mut h = vec![c64::new(0.0, 0.0); nb * nb];
            for a in 0..nb {
                for bb in 0..nb {
                    let sxb = block(sinv, *xb, bb, b);
                    // X[a,x] F = (F X[x,a])^dag, so
                    // Tr[X[a,x] F Sinv[x,bb]] = Tr[P_a^dag Sinv[x,bb]]
                    g[a * nb + bb] = p[a]
                        .iter()
                        .zip(sxb.iter())
                        .map(|(u, v)| u.conj() * v)
                        .sum();
                    // Sinv[bb,x] = Sinv[x,bb]^dag, so
                    // Tr[P_a Sinv[bb,x]] = sum P_a .* conj(Sinv[x,bb])
                    h[a * nb + bb] = p[a]
                        .iter()
                        .zip(sxb.iter())
                        .map(|(u, v)| u * v.conj())
                        .sum();
                }
            }
            tables.push(Some(DenseTables { x_blk: *xb, p, q, g, h }));
        } else {
            tables.push(None);
        }
    }

    for i in 0..m {
        for j in 0..m {
            let v = match (&kinds[i], &kinds[j]) {
                (ConKind::Scaled(ei), ConKind::Scaled(ej)) => {
                    let mut acc = c64::new(0.0, 0.0);
                    for (r1, c1, s1) in ei {
                        for (r2, c2, s2) in ej {
                            acc += s1 * s2 * tp[idx(*c1, *r2, *c2, *r1)];
                        }
                    }
                    acc.re
                }
                (ConKind::Scaled(ei), ConKind::DiagDense { .. }) => {
                    let t = tables[j].as_ref().expect("dense tables");
                    let mut acc = c64::new(0.0, 0.0);
                    for (r1, c1, s1) in ei {
                        acc += s1 * t.g[*c1 * nb + *r1];
                    }
                    acc.re
                }
                (ConKind::DiagDense { .. }, ConKind::Scaled(ej)) => {
                    let t = tables[i].as_ref().expect("dense tables");
                    let mut acc = c64::new(0.0, 0.0);
                    for (r2, c2, s2) in ej {
                        acc += s2 * t.h[*r2 * nb + *c2];
                    }
                    acc.re
                }
                (ConKind::DiagDense { .. }, ConKind::DiagDense { .. }) => {
                    let ti = tables[i].as_ref().expect("dense tables");
                    let tj = tables[j].as_ref().expect("dense tables");
                    // Tr[F_i X[x_i,x_j] F_j Sinv[x_j,x_i]] = Tr[P_i[x_j] Q_j[x_i]]
                    let p = &ti.p[tj.x_blk];
                    let q = &tj.q[ti.x_blk];
                    tr_prod(&p.view(), &q.view()).re
                }
                _ => unreachable!("structured path"),
            };
            out[(i, j)] = v;
        }
    }
    out
}

/// Hermitian inverse and a whitening factor `X = W W^dag` via the
/// eigendecomposition; also returns the smallest eigenvalue.
struct HermFactor {
    vals: Array1<f64>,
    vecs: Array2<c64>,
}

impl HermFactor {
    fn new(m: &Array2<c64>) -> Result<Self> {
        let (vals, vecs) = eigh(m)?;
        Ok(Self { vals, vecs })
    }

    fn min_eig(&self) -> f64 {
        self.vals.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    fn inverse(&self) -> Array2<c64> {
        reconstruct(&self.vals.mapv(|v| 1.0 / v), &self.vecs)
    }

    /// Largest `alpha` with `M + alpha * D` PSD (up to `cap`).
    fn max_step(&self, d: &Array2<c64>, cap: f64) -> f64 {
        // whiten: lambda_min(Lambda^{-1/2} U^dag D U Lambda^{-1/2})
        let ut_d_u = self
            .vecs
            .t()
            .mapv(|z| z.conj())
            .dot(d)
            .dot(&self.vecs);
        let scale = self.vals.mapv(|v| 1.0 / v.max(1e-300).sqrt());
        let mut w = ut_d_u;
        for i in 0..w.nrows() {
            for j in 0..w.ncols() {
                w[(i, j)] *= c64::new(scale[i] * scale[j], 0.0);
            }
        }
        hermitize(&mut w);
        match eigvalsh(&w) {
            Ok(ev) => {
                let lam = ev.iter().cloned().fold(f64::INFINITY, f64::min);
                if lam >= 0.0 {
                    cap
                } else {
                    cap.min(-1.0 / lam)
                }
            }
            Err(_) => 0.0,
        }
    }
}

fn orth_max_step(x: &Array1<f64>, d: &Array1<f64>, cap: f64) -> f64 {
    let mut a = cap;
    for (xi, di) in x.iter().zip(d.iter()) {
        if *di < 0.0 {
            a = a.min(-xi / di);
        }
    }
    a
}

/// Solves `min Re Tr(C X) + c.s` over `A(X) + B s = b, X >= 0, s >= 0`.
pub fn solve_sdp(problem: &SdpProblem, opts: &SolveOptions) -> Result<SdpSolution> {
    let st = problem.structure;
    let d = st.dim();
    let m = problem.constraints.len();
    if problem.rhs.len() != m {
        return Err(Error::InvalidArgument("rhs length mismatch".into()));
    }
    let (p, c_lin, rows) = match &problem.orthant {
        Some(o) => {
            if o.rows.len() != m || o.objective.len() != o.dim {
                return Err(Error::InvalidArgument("orthant shape mismatch".into()));
            }
            (o.dim, o.objective.clone(), o.rows.clone())
        }
        None => (0, Array1::zeros(0), vec![Vec::new(); m]),
    };
    // column view of the slack coefficients
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); p];
    for (i, row) in rows.iter().enumerate() {
        for (k, a) in row {
            cols[*k].push((i, *a));
        }
    }

    let kinds: Vec<ConKind> = problem.constraints.iter().map(classify).collect();
    let structured = kinds.iter().all(|k| !matches!(k, ConKind::General));
    let dense: Vec<Array2<c64>> = if structured {
        Vec::new()
    } else {
        problem.constraints.iter().map(|c| c.to_dense(&st)).collect()
    };
    let dense_for_schur: &[Array2<c64>] = &dense;

    let apply_all = |xm: &Array2<c64>, xs: &Array1<f64>| -> Array1<f64> {
        let mut v = Array1::zeros(m);
        for i in 0..m {
            let mut val = problem.constraints[i].apply(xm, &st);
            for (k, a) in &rows[i] {
                val += a * xs[*k];
            }
            v[i] = val;
        }
        v
    };
    let apply_psd = |xm: &Array2<c64>| -> Array1<f64> {
        Array1::from_iter((0..m).map(|i| problem.constraints[i].apply(xm, &st)))
    };
    let adjoint = |y: &Array1<f64>| -> Array2<c64> {
        let mut out = Array2::zeros((d, d));
        for i in 0..m {
            problem.constraints[i].add_scaled_to(&mut out, y[i], &st);
        }
        out
    };
    let adjoint_lin = |y: &Array1<f64>| -> Array1<f64> {
        let mut out = Array1::zeros(p);
        for (k, col) in cols.iter().enumerate() {
            out[k] = col.iter().map(|(i, a)| y[*i] * a).sum();
        }
        out
    };

    // initial point
    let norm_b = problem.rhs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let norm_c = crate::linalg::frob_norm(&problem.objective.view())
        .max(c_lin.iter().fold(0.0f64, |a, v| a.max(v.abs())));
    let tau_p = (10.0f64).max((d as f64).sqrt()).max((d as f64) * (1.0 + norm_b) / (d as f64).sqrt());
    let tau_d = (10.0f64).max((d as f64).sqrt()).max(1.0 + norm_c);
    let mut x = identity(d).mapv(|z| z * c64::new(tau_p, 0.0));
    let mut xs = Array1::from_elem(p, tau_p);
    let mut y: Array1<f64> = Array1::zeros(m);
    let mut s = identity(d).mapv(|z| z * c64::new(tau_d, 0.0));
    let mut zs = Array1::from_elem(p, tau_d);

    let total_deg = d as f64 + p as f64;
    let mut best: Option<(f64, SdpSolution)> = None;
    let mut slow_count = 0usize;
    let mut status = SolveStatus::IterationLimit;
    let mut iters = 0usize;

    for it in 0..opts.max_iter {
        iters = it + 1;
        // residuals
        let ax = apply_all(&x, &xs);
        let rp = &problem.rhs - &ax;
        let at_y = adjoint(&y);
        let mut rd = &problem.objective - &at_y - &s;
        hermitize(&mut rd);
        let rd_lin = &c_lin - &adjoint_lin(&y) - &zs;

        let pobj = frob_inner(&problem.objective.view(), &x.view()) + c_lin.dot(&xs);
        let dobj = problem.rhs.dot(&y);
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        let p_res = rp.iter().fold(0.0f64, |a, v| a.max(v.abs())) / (1.0 + norm_b);
        let d_res = crate::linalg::max_abs(&rd.view())
            .max(rd_lin.iter().fold(0.0f64, |a, v| a.max(v.abs())))
            / (1.0 + norm_c);

        let merit = gap.max(p_res).max(d_res);
        let is_better = best.as_ref().map(|(bm, _)| merit < *bm).unwrap_or(true);
        if is_better {
            best = Some((
                merit,
                SdpSolution {
                    x: x.clone(),
                    slacks: xs.clone(),
                    y: y.clone(),
                    s: s.clone(),
                    report: SolveReport {
                        status: SolveStatus::IterationLimit,
                        iterations: iters,
                        primal_objective: pobj,
                        dual_objective: dobj,
                        relative_gap: gap,
                        primal_residual: p_res,
                        dual_residual: d_res,
                    },
                },
            ));
        }
        if gap < opts.gap_tol && p_res < opts.feas_tol && d_res < opts.feas_tol {
            status = SolveStatus::Converged;
            break;
        }

        let mu = (frob_inner(&x.view(), &s.view()) + xs.dot(&zs)) / total_deg;

        let s_fac = HermFactor::new(&s)?;
        if s_fac.min_eig() <= 0.0 {
            status = SolveStatus::SlowProgress;
            break;
        }
        let sinv = s_fac.inverse();
        let x_fac = HermFactor::new(&x)?;

        // Schur matrix (same for predictor and corrector)
        let mut schur = assemble_schur(&kinds, dense_for_schur, &problem.constraints, &x, &sinv, &st);
        for (k, col) in cols.iter().enumerate() {
            let w = xs[k] / zs[k];
            for (i, ai) in col {
                for (j, aj) in col {
                    schur[(*i, *j)] += ai * aj * w;
                }
            }
        }
        use ndarray_linalg::FactorizeInto;
        let lu = match schur.factorize_into() {
            Ok(f) => f,
            Err(_) => {
                status = SolveStatus::SlowProgress;
                break;
            }
        };
        use ndarray_linalg::Solve;

        // shared pieces: A(X Rd Sinv), lin analog
        let x_rd_sinv = x.dot(&rd).dot(&sinv);
        let a_xrs = apply_psd(&x_rd_sinv);
        let mut lin_part: Array1<f64> = Array1::zeros(m);
        for i in 0..m {
            for (k, a) in &rows[i] {
                lin_part[i] += a * (xs[*k] / zs[*k]) * rd_lin[*k];
            }
        }

        // predictor (affine scaling)
        let rhs_aff = &problem.rhs + &a_xrs + &lin_part;
        let dy_aff = match lu.solve(&rhs_aff) {
            Ok(v) => v,
            Err(_) => {
                status = SolveStatus::SlowProgress;
                break;
            }
        };
        let ds_aff = {
            let mut t = &rd - &adjoint(&dy_aff);
            hermitize(&mut t);
            t
        };
        let dzs_aff = &rd_lin - &adjoint_lin(&dy_aff);
        let mut dx_aff = -&x - &x.dot(&ds_aff).dot(&sinv);
        hermitize(&mut dx_aff);
        let dxs_aff = Array1::from_iter(
            (0..p).map(|k| -xs[k] - xs[k] / zs[k] * dzs_aff[k]),
        );

        let ap_aff = x_fac
            .max_step(&dx_aff, 1.0)
            .min(orth_max_step(&xs, &dxs_aff, 1.0));
        let ad_aff = s_fac
            .max_step(&ds_aff, 1.0)
            .min(orth_max_step(&zs, &dzs_aff, 1.0));
        let mu_aff = {
            let xa = &x + &dx_aff.mapv(|z| z * c64::new(0.995 * ap_aff, 0.0));
            let sa = &s + &ds_aff.mapv(|z| z * c64::new(0.995 * ad_aff, 0.0));
            let xsa = &xs + &dxs_aff.mapv(|v| v * 0.995 * ap_aff);
            let zsa = &zs + &dzs_aff.mapv(|v| v * 0.995 * ad_aff);
            (frob_inner(&xa.view(), &sa.view()) + xsa.dot(&zsa)).max(0.0) / total_deg
        };
        let sigma = ((mu_aff / mu).powi(3)).clamp(1e-8, 1.0);

        // corrector
        let dxds = dx_aff.dot(&ds_aff).dot(&sinv);
        let a_dxds = apply_psd(&dxds);
        let a_sinv = apply_psd(&sinv);
        let mut lin_center: Array1<f64> = Array1::zeros(m);
        let mut lin_corr: Array1<f64> = Array1::zeros(m);
        for i in 0..m {
            for (k, a) in &rows[i] {
                lin_center[i] += a / zs[*k];
                lin_corr[i] += a * dxs_aff[*k] * dzs_aff[*k] / zs[*k];
            }
        }
        let rhs_cor =
            &(&rhs_aff - &(&a_sinv + &lin_center).mapv(|v| v * sigma * mu)) + &(&a_dxds + &lin_corr);
        let dy = match lu.solve(&rhs_cor) {
            Ok(v) => v,
            Err(_) => {
                status = SolveStatus::SlowProgress;
                break;
            }
        };
        let ds = {
            let mut t = &rd - &adjoint(&dy);
            hermitize(&mut t);
            t
        };
        let dzs = &rd_lin - &adjoint_lin(&dy);
        let mut dx = &sinv.mapv(|z| z * c64::new(sigma * mu, 0.0)) - &x
            - &dxds
            - &x.dot(&ds).dot(&sinv);
        hermitize(&mut dx);
        let dxs = Array1::from_iter((0..p).map(|k| {
            sigma * mu / zs[k] - xs[k] - dxs_aff[k] * dzs_aff[k] / zs[k] - xs[k] / zs[k] * dzs[k]
        }));

        let gamma = 0.98;
        let ap = (gamma * x_fac.max_step(&dx, 1.0 / gamma))
            .min(gamma * orth_max_step(&xs, &dxs, 1.0 / gamma))
            .min(1.0);
        let ad = (gamma * s_fac.max_step(&ds, 1.0 / gamma))
            .min(gamma * orth_max_step(&zs, &dzs, 1.0 / gamma))
            .min(1.0);

        if ap < 1e-4 && ad < 1e-4 {
            slow_count += 1;
            if slow_count >= 3 {
                status = SolveStatus::SlowProgress;
                break;
            }
        } else {
            slow_count = 0;
        }

        x = &x + &dx.mapv(|z| z * c64::new(ap, 0.0));
        xs = &xs + &dxs.mapv(|v| v * ap);
        y = &y + &dy.mapv(|v| v * ad);
        s = &s + &ds.mapv(|z| z * c64::new(ad, 0.0));
        zs = &zs + &dzs.mapv(|v| v * ad);
        hermitize(&mut x);
        hermitize(&mut s);
    }

    let (_, mut sol) = best.ok_or_else(|| Error::NumericalFailure("no iterate produced".into()))?;
    sol.report.status = status;
    sol.report.iterations = iters;
    Ok(sol)
}

/// Linear SDP over the preprocessed moment constraints:
/// `min Re Tr(C X)` subject to `A(X) = b`, `X >= 0`.
///
/// The constraints are preprocessed internally; multipliers are mapped
/// back to the original row indexing (dropped rows get zero).
pub fn solve_linear_sdp(
    objective: &Array2<c64>,
    constraints: &[ConstraintMatrix],
    rhs: &[f64],
    st: &BlockStructure,
    opts: &SolveOptions,
) -> Result<SdpSolution> {
    let prep = preprocess_constraints(constraints, rhs, st)?;
    let problem = SdpProblem {
        structure: *st,
        objective: objective.clone(),
        constraints: prep.constraints.clone(),
        rhs: prep.rhs.clone(),
        orthant: None,
    };
    let mut sol = solve_sdp(&problem, opts)?;
    let mut y_full = Array1::zeros(constraints.len());
    for (j, &i) in prep.kept.iter().enumerate() {
        y_full[i] = sol.y[j] * prep.scales[j];
    }
    sol.y = y_full;
    Ok(sol)
}

/// Certified value of the box-relaxed dual program
/// `min Re Tr(C rho)` over `|Tr(Gamma_i rho) - gamma_i| <= eps, rho >= 0`.
#[derive(Debug, Clone)]
pub struct DualOutcome {
    /// Certified lower bound `gamma.v - eps * sum|v|` from a verified
    /// dual-feasible point.
    pub certified_value: f64,
    /// Multipliers of the verified dual-feasible point.
    pub v: Array1<f64>,
    pub report: SolveReport,
}

/// Solves the box-relaxed program by encoding the two-sided bounds with
/// nonnegative slacks `u, w`:
/// `Tr(Gamma_i rho) - u_i = gamma_i - eps`, `u_i + w_i = 2 eps`.
///
/// The returned value is computed from the dual multipliers `v` after
/// verifying `C - sum v_i Gamma_i >= 0`; if the verification fails by a
/// margin `delta`, the multipliers are shifted along `identity_combo`
/// (coefficients `lambda` with `sum lambda_i Gamma_i = I`) to restore
/// exact feasibility, so the reported value is always a true lower bound
/// (up to the eigenvalue tolerance of the final check).
pub fn solve_dual_program(
    objective: &Array2<c64>,
    constraints: &[ConstraintMatrix],
    gamma: &[f64],
    eps: f64,
    identity_combo: &[(usize, f64)],
    st: &BlockStructure,
    opts: &SolveOptions,
) -> Result<DualOutcome> {
    let m = constraints.len();
    if gamma.len() != m {
        return Err(Error::InvalidArgument("gamma length mismatch".into()));
    }
    if eps <= 0.0 {
        return Err(Error::InvalidArgument("relaxation eps must be positive".into()));
    }
    // verify the identity combination
    {
        let mut acc = Array2::zeros((st.dim(), st.dim()));
        for (i, lam) in identity_combo {
            constraints[*i].add_scaled_to(&mut acc, *lam, st);
        }
        let dev = crate::linalg::max_abs(&(&acc - &identity(st.dim())).view());
        if dev > 1e-8 {
            return Err(Error::InvalidArgument(format!(
                "identity_combo does not reproduce the identity (deviation {dev:.3e})"
            )));
        }
    }

    let mut all_cons: Vec<ConstraintMatrix> = Vec::with_capacity(2 * m);
    let mut all_rhs: Vec<f64> = Vec::with_capacity(2 * m);
    let mut lin_rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(2 * m);
    for i in 0..m {
        all_cons.push(constraints[i].clone());
        all_rhs.push(gamma[i] - eps);
        lin_rows.push(vec![(i, -1.0)]); // -u_i
    }
    for i in 0..m {
        all_cons.push(ConstraintMatrix::new(Vec::new())); // zero PSD part
        all_rhs.push(2.0 * eps);
        lin_rows.push(vec![(i, 1.0), (m + i, 1.0)]); // u_i + w_i
    }
    let problem = SdpProblem {
        structure: *st,
        objective: objective.clone(),
        constraints: all_cons,
        rhs: Array1::from(all_rhs),
        orthant: Some(OrthantPart {
            dim: 2 * m,
            objective: Array1::zeros(2 * m),
            rows: lin_rows,
        }),
    };
    let sol = solve_sdp(&problem, opts)?;
    let mut v: Array1<f64> = sol.y.slice(ndarray::s![..m]).to_owned();

    // repair dual feasibility exactly
    let feas_margin = |v: &Array1<f64>| -> Result<f64> {
        let mut s_mat = objective.clone();
        for i in 0..m {
            constraints[i].add_scaled_to(&mut s_mat, -v[i], st);
        }
        hermitize(&mut s_mat);
        crate::linalg::min_eigvalsh(&s_mat)
    };
    let min_eig = feas_margin(&v)?;
    if min_eig < 0.0 {
        let delta = -min_eig * (1.0 + 1e-10) + 1e-14;
        for (i, lam) in identity_combo {
            v[*i] -= delta * lam;
        }
        let check = feas_margin(&v)?;
        if check < -1e-10 {
            return Err(Error::NumericalFailure(format!(
                "dual feasibility repair failed (min eigenvalue {check:.3e})"
            )));
        }
    }
    let certified: f64 = (0..m).map(|i| gamma[i] * v[i] - eps * v[i].abs()).sum();
    Ok(DualOutcome {
        certified_value: certified,
        v,
        report: sol.report,
    })
}

/// Projects `x0` toward the affine-PSD intersection by alternating the
/// exact affine projection (through the Gram factor of the preprocessed
/// rows) with the PSD projection, using Dykstra's correction on the cone
/// side. Returns the projected point and the residual
/// `max(|A(x)-b|_inf, negative-eigenvalue magnitude)`.
pub fn nearest_feasible(
    x0: &Array2<c64>,
    constraints: &[ConstraintMatrix],
    rhs: &[f64],
    st: &BlockStructure,
    max_iter: usize,
    tol: f64,
) -> Result<(Array2<c64>, f64)> {
    let prep = preprocess_constraints(constraints, rhs, st)?;
    let mk = prep.constraints.len();
    let mut gram = Array2::zeros((mk, mk));
    for i in 0..mk {
        for j in 0..mk {
            gram[(i, j)] = prep.constraints[i].frob_inner(&prep.constraints[j], st);
        }
    }
    use ndarray_linalg::FactorizeInto;
    use ndarray_linalg::Solve;
    let lu = gram
        .factorize_into()
        .map_err(|e| Error::NumericalFailure(format!("gram factorization failed: {e}")))?;

    let project_affine = |m: &Array2<c64>| -> Result<Array2<c64>> {
        let r = Array1::from_iter(
            (0..mk).map(|i| prep.constraints[i].apply(m, st) - prep.rhs[i]),
        );
        let coeff = lu
            .solve(&r)
            .map_err(|e| Error::NumericalFailure(format!("gram solve failed: {e}")))?;
        let mut out = m.clone();
        for i in 0..mk {
            prep.constraints[i].add_scaled_to(&mut out, -coeff[i], st);
        }
        hermitize(&mut out);
        Ok(out)
    };

    let mut xa = project_affine(x0)?;
    let mut corr: Array2<c64> = Array2::zeros(xa.dim());
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let shifted = &xa + &corr;
        let projected = crate::linalg::psd_projection(&shifted)?;
        corr = &shifted - &projected;
        xa = project_affine(&projected)?;
        let min_eig = crate::linalg::min_eigvalsh(&xa)?;
        residual = (-min_eig).max(0.0);
        if residual <= tol {
            break;
        }
    }
    // affine part holds exactly by construction; fold in for reporting
    let aff_res = (0..mk)
        .map(|i| (prep.constraints[i].apply(&xa, st) - prep.rhs[i]).abs())
        .fold(0.0f64, f64::max);
    residual = residual.max(aff_res);
    if residual > 1e-4 {
        return Err(Error::InfeasibleAtCutoff { residual });
    }
    Ok((xa, residual))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use ndarray_linalg::QR;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> c64 {
        c64::new(re, im)
    }

    fn trace_constraint(st: &BlockStructure) -> ConstraintMatrix {
        ConstraintMatrix::new(
            (0..st.n_blocks)
                .map(|i| (i, i, Block::ScaledIdentity(c(1.0, 0.0))))
                .collect(),
        )
    }

    #[test]
    fn min_eigenvalue_sdp() {
        // min Tr(C X) s.t. Tr X = 1, X >= 0 equals the smallest eigenvalue
        let st = BlockStructure::new(1, 3);
        let obj = array![
            [c(2.0, 0.0), c(0.0, -1.0), c(0.0, 0.0)],
            [c(0.0, 1.0), c(2.0, 0.0), c(0.0, 0.0)],
            [c(0.0, 0.0), c(0.0, 0.0), c(5.0, 0.0)]
        ];
        let cons = vec![trace_constraint(&st)];
        let sol =
            solve_linear_sdp(&obj, &cons, &[1.0], &st, &SolveOptions::default()).unwrap();
        assert_eq!(sol.report.status, SolveStatus::Converged);
        assert!((sol.report.primal_objective - 1.0).abs() < 1e-7);
        assert!((trace(&sol.x.view()).re - 1.0).abs() < 1e-7);
    }

    #[test]
    fn orthant_linear_program() {
        // 1x1 PSD block fixed to zero influence; pure LP on 2 slacks:
        // min s2 s.t. s1 + s2 = 1 -> 0 at s = (1, 0)
        let st = BlockStructure::new(1, 1);
        let obj = array![[c(1.0, 0.0)]];
        let cons = vec![
            ConstraintMatrix::new(vec![(0, 0, Block::ScaledIdentity(c(1.0, 0.0)))]),
            ConstraintMatrix::new(Vec::new()),
        ];
        let problem = SdpProblem {
            structure: st,
            objective: obj,
            constraints: cons,
            rhs: array![0.5, 1.0],
            orthant: Some(OrthantPart {
                dim: 2,
                objective: array![0.0, 1.0],
                rows: vec![vec![], vec![(0, 1.0), (1, 1.0)]],
            }),
        };
        let sol = solve_sdp(&problem, &SolveOptions::default()).unwrap();
        assert_eq!(sol.report.status, SolveStatus::Converged);
        // X block is forced to 0.5; objective = 0.5 + min over slacks = 0.5
        assert!((sol.report.primal_objective - 0.5).abs() < 1e-7);
        assert!((sol.slacks[0] - 1.0).abs() < 1e-6);
        assert!(sol.slacks[1].abs() < 1e-6);
    }

    /// Brute-force LP oracle: min c.x s.t. A x = b, x >= 0 by vertex
    /// enumeration over size-`m` supports.
    fn lp_oracle(c_vec: &[f64], a: &Array2<f64>, b: &Array1<f64>) -> f64 {
        let m = a.nrows();
        let n = a.ncols();
        let mut best = f64::INFINITY;
        let mut support = vec![0usize; m];
        fn rec(
            start: usize,
            k: usize,
            support: &mut Vec<usize>,
            m: usize,
            n: usize,
            a: &Array2<f64>,
            b: &Array1<f64>,
            c_vec: &[f64],
            best: &mut f64,
        ) {
            if k == m {
                let mut sub = Array2::zeros((m, m));
                for (col, &j) in support.iter().enumerate() {
                    for row in 0..m {
                        sub[(row, col)] = a[(row, j)];
                    }
                }
                use ndarray_linalg::Solve;
                if let Ok(xs) = sub.solve(b) {
                    if xs.iter().all(|v| *v >= -1e-9) {
                        let obj: f64 =
                            support.iter().zip(xs.iter()).map(|(&j, v)| c_vec[j] * v).sum();
                        if obj < *best {
                            *best = obj;
                        }
                    }
                }
                return;
            }
            for j in start..n {
                support[k] = j;
                rec(j + 1, k + 1, support, m, n, a, b, c_vec, best);
            }
        }
        rec(0, 0, &mut support, m, n, a, b, c_vec, &mut best);
        best
    }

    #[test]
    fn random_diagonal_family_matches_lp_oracle() {
        // diagonal data commutes, so the SDP optimum equals the LP optimum;
        // conjugating everything by a fixed unitary exercises the complex
        // path without changing the value
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..4 {
            let d = 6;
            let st = BlockStructure::new(1, d);
            let c_diag: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a1: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a2: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let xf: Vec<f64> = {
                let raw: Vec<f64> = (0..d).map(|_| rng.gen_range(0.05..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|v| v / s).collect()
            };
            let b1: f64 = a1.iter().zip(xf.iter()).map(|(a, x)| a * x).sum();
            let b2: f64 = a2.iter().zip(xf.iter()).map(|(a, x)| a * x).sum();

            let mut a_mat = Array2::zeros((3, d));
            for j in 0..d {
                a_mat[(0, j)] = 1.0;
                a_mat[(1, j)] = a1[j];
                a_mat[(2, j)] = a2[j];
            }
            let b_vec = array![1.0, b1, b2];
            let oracle = lp_oracle(&c_diag, &a_mat, &b_vec);
            assert!(oracle.is_finite());

            // random unitary from the QR of a complex Gaussian-ish matrix
            let raw = Array2::from_shape_fn((d, d), |_| {
                c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            });
            let (u, _) = raw.qr().unwrap();
            let rotate = |diag: &[f64]| -> Array2<c64> {
                let lam = Array2::from_diag(&Array1::from_iter(
                    diag.iter().map(|v| c(*v, 0.0)),
                ));
                let mut m = u.dot(&lam).dot(&u.t().mapv(|z| z.conj()));
                hermitize(&mut m);
                m
            };
            let obj = rotate(&c_diag);
            let cons = vec![
                ConstraintMatrix::dense(rotate(&vec![1.0; d])),
                ConstraintMatrix::dense(rotate(&a1)),
                ConstraintMatrix::dense(rotate(&a2)),
            ];
            let sol = solve_linear_sdp(
                &obj,
                &cons,
                &[1.0, b1, b2],
                &st,
                &SolveOptions::default(),
            )
            .unwrap();
            assert_eq!(sol.report.status, SolveStatus::Converged, "trial {trial}");
            assert!(
                (sol.report.primal_objective - oracle).abs() < 1e-6,
                "trial {trial}: sdp {} vs lp oracle {}",
                sol.report.primal_objective,
                oracle
            );
        }
    }

    #[test]
    fn structured_and_dense_schur_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let st = BlockStructure::new(3, 2);
        let d = st.dim();
        let rand_herm = |rng: &mut ChaCha8Rng, n: usize| {
            let raw = Array2::from_shape_fn((n, n), |_| {
                c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            });
            let mut h = &raw + &raw.t().mapv(|z| z.conj());
            hermitize(&mut h);
            h
        };
        // PD matrices X, Sinv
        let make_pd = |rng: &mut ChaCha8Rng| {
            let h = rand_herm(rng, d);
            let mut m = h.dot(&h);
            for i in 0..d {
                m[(i, i)] += c(0.5, 0.0);
            }
            hermitize(&mut m);
            m
        };
        let x = make_pd(&mut rng);
        let sinv = make_pd(&mut rng);
        let cons = vec![
            ConstraintMatrix::new(vec![(0, 0, Block::ScaledIdentity(c(1.0, 0.0)))]),
            ConstraintMatrix::new(vec![(0, 2, Block::ScaledIdentity(c(0.3, -0.7)))]),
            ConstraintMatrix::new(vec![(1, 1, Block::Dense(rand_herm(&mut rng, 2)))]),
            ConstraintMatrix::new(vec![
                (0, 1, Block::ScaledIdentity(c(0.0, 1.0))),
                (2, 2, Block::ScaledIdentity(c(-0.4, 0.0))),
            ]),
        ];
        let kinds: Vec<ConKind> = cons.iter().map(classify).collect();
        assert!(kinds.iter().all(|k| !matches!(k, ConKind::General)));
        let m_structured = assemble_schur(&kinds, &[], &cons, &x, &sinv, &st);
        let dense: Vec<Array2<c64>> = cons.iter().map(|cm| cm.to_dense(&st)).collect();
        let general = vec![ConKind::General, ConKind::General, ConKind::General, ConKind::General];
        let m_dense = assemble_schur(&general, &dense, &cons, &x, &sinv, &st);
        for (a, b) in m_structured.iter().zip(m_dense.iter()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn preprocessing_drops_dependent_rows() {
        let st = BlockStructure::new(2, 2);
        // diagonal rows plus their sum (the trace row)
        let cons = vec![
            ConstraintMatrix::new(vec![(0, 0, Block::ScaledIdentity(c(1.0, 0.0)))]),
            ConstraintMatrix::new(vec![(1, 1, Block::ScaledIdentity(c(1.0, 0.0)))]),
            trace_constraint(&st),
        ];
        let prep = preprocess_constraints(&cons, &[0.4, 0.6, 1.0], &st).unwrap();
        assert_eq!(prep.kept, vec![0, 1]);
        // inconsistent version must error
        let err = preprocess_constraints(&cons, &[0.4, 0.6, 2.0], &st);
        assert!(err.is_err());
    }

    #[test]
    fn constraint_scaling_covariance() {
        let st = BlockStructure::new(1, 3);
        let obj = array![
            [c(1.0, 0.0), c(0.2, 0.1), c(0.0, 0.0)],
            [c(0.2, -0.1), c(-0.5, 0.0), c(0.3, 0.0)],
            [c(0.0, 0.0), c(0.3, 0.0), c(2.0, 0.0)]
        ];
        let mut con2 = trace_constraint(&st);
        let base = vec![trace_constraint(&st)];
        let sol1 =
            solve_linear_sdp(&obj, &base, &[1.0], &st, &SolveOptions::default()).unwrap();
        con2.scale(250.0);
        let sol2 =
            solve_linear_sdp(&obj, &[con2], &[250.0], &st, &SolveOptions::default()).unwrap();
        assert!((sol1.report.primal_objective - sol2.report.primal_objective).abs() < 1e-8);
        for (a, b) in sol1.x.iter().zip(sol2.x.iter()) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn solver_is_deterministic() {
        let st = BlockStructure::new(1, 2);
        let obj = array![[c(1.0, 0.0), c(0.3, 0.4)], [c(0.3, -0.4), c(-1.0, 0.0)]];
        let cons = vec![trace_constraint(&st)];
        let a = solve_linear_sdp(&obj, &cons, &[1.0], &st, &SolveOptions::default()).unwrap();
        let b = solve_linear_sdp(&obj, &cons, &[1.0], &st, &SolveOptions::default()).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
    }

    #[test]
    fn dual_program_trace_box() {
        // min Tr(C rho) over |Tr rho - 1| <= eps, rho >= 0 equals
        // (1 - eps) * lambda_min(C) for lambda_min > 0
        let st = BlockStructure::new(1, 2);
        let obj = array![[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(2.0, 0.0)]];
        let cons = vec![trace_constraint(&st)];
        let eps = 0.01;
        let out = solve_dual_program(
            &obj,
            &cons,
            &[1.0],
            eps,
            &[(0, 1.0)],
            &st,
            &SolveOptions::default(),
        )
        .unwrap();
        assert!((out.certified_value - 0.99).abs() < 1e-6);
        // certificate must never exceed the true relaxed optimum
        assert!(out.certified_value <= 0.99 + 1e-9);
    }

    #[test]
    fn dual_program_weak_duality_random() {
        // certified value must lower-bound the objective at any point of
        // the relaxed feasible set
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let st = BlockStructure::new(1, 4);
        let d = 4;
        let raw = Array2::from_shape_fn((d, d), |_| {
            c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let mut obj = &raw + &raw.t().mapv(|z| z.conj());
        hermitize(&mut obj);
        let herm = |rng: &mut ChaCha8Rng| {
            let raw = Array2::from_shape_fn((d, d), |_| {
                c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            });
            let mut h = &raw + &raw.t().mapv(|z| z.conj());
            hermitize(&mut h);
            h
        };
        let g1 = herm(&mut rng);
        let cons = vec![trace_constraint(&st), ConstraintMatrix::dense(g1.clone())];
        // reference feasible point: maximally mixed state
        let rho = identity(d).mapv(|z| z * c(0.25, 0.0));
        let gamma = vec![1.0, frob_inner(&g1.view(), &rho.view())];
        let eps = 1e-4;
        let out = solve_dual_program(
            &obj,
            &cons,
            &gamma,
            eps,
            &[(0, 1.0)],
            &st,
            &SolveOptions::default(),
        )
        .unwrap();
        let obj_at_rho = frob_inner(&obj.view(), &rho.view());
        assert!(
            out.certified_value <= obj_at_rho + 1e-9,
            "certificate {} exceeds feasible value {}",
            out.certified_value,
            obj_at_rho
        );
        // and the repaired multipliers are exactly dual feasible
        let mut s_mat = obj.clone();
        for (i, cn) in cons.iter().enumerate() {
            cn.add_scaled_to(&mut s_mat, -out.v[i], &st);
        }
        hermitize(&mut s_mat);
        assert!(crate::linalg::min_eigvalsh(&s_mat).unwrap() >= -1e-10);
    }

    #[test]
    fn nearest_feasible_projects_onto_constraints() {
        let st = BlockStructure::new(1, 3);
        let cons = vec![trace_constraint(&st)];
        // start from a non-normalized, indefinite matrix
        let x0 = array![
            [c(2.0, 0.0), c(0.5, 0.2), c(0.0, 0.0)],
            [c(0.5, -0.2), c(-1.0, 0.0), c(0.0, 0.0)],
            [c(0.0, 0.0), c(0.0, 0.0), c(0.3, 0.0)]
        ];
        let (x, res) = nearest_feasible(&x0, &cons, &[1.0], &st, 300, 1e-10).unwrap();
        assert!(res < 1e-8);
        assert!((trace(&x.view()).re - 1.0).abs() < 1e-10);
        assert!(crate::linalg::min_eigvalsh(&x).unwrap() >= -1e-9);
    }

    #[test]
    fn nearest_feasible_reports_infeasibility() {
        // Tr rho = -1 with rho >= 0 has no solution
        let st = BlockStructure::new(1, 2);
        let cons = vec![trace_constraint(&st)];
        let x0 = identity(2);
        let err = nearest_feasible(&x0, &cons, &[-1.0], &st, 100, 1e-10);
        match err {
            Err(Error::InfeasibleAtCutoff { residual }) => assert!(residual > 1e-4),
            other => panic!("expected infeasibility, got {other:?}"),
        }
    }
}
