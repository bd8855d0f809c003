//! The rate engine: minimizes the quantum relative entropy
//! `f(rho) = D(G(rho) || Z[G(rho)])` over the moment-constrained state
//! set with Frank-Wolfe iterations whose linearized subproblems are
//! SDPs, then converts the approximate minimizer into a certified lower
//! bound through the dual of a box-relaxed linearization.
//!
//! The postselection map `G` is represented through its Kraus operator
//! `K = sum_z |z> (x) (I_A (x) sqrt(R_z))`; because
//! `K^dag K = I_A (x) M` with `M = sum_z R_z`, the spectrum of `G(rho)`
//! equals the spectrum of the d x d matrix
//! `A = (I (x) sqrt(M)) rho (I (x) sqrt(M))` plus zeros, and
//! `Z[G(rho)]` is block diagonal with blocks
//! `Z_z = (I (x) sqrt(R_z)) rho (I (x) sqrt(R_z))`. Objective and
//! gradient therefore need only `n_z + 1` eigendecompositions of d x d
//! matrices rather than anything on the `n_z d`-dimensional output
//! space.

use ndarray::{Array1, Array2};
use ndarray_linalg::c64;

use crate::conic::{
    nearest_feasible, solve_dual_program, solve_linear_sdp, SolveOptions, SolveStatus,
};
use crate::constellation::{Constellation, RegionPartition};
use crate::error::{Error, Result};
use crate::fock::{cached_bob_operators, DetectorModel, FockCutoff, RegionOperatorSet};
use crate::linalg::{
    block, eigh, eigvalsh, hermitize, psd_sqrt, reconstruct, sandwich_blockwise, tr_prod,
};
use crate::statistics::{
    build_constraints, discretized_distribution, ec_leakage, sifting_probability,
    simulated_state, ChannelModel, ConstraintSet,
};

/// The key map `G` as Bob-side operators: square roots of the region
/// operators and of their sum.
#[derive(Debug, Clone)]
pub struct PostprocessingMap {
    sqrt_r: Vec<Array2<c64>>,
    m_sum: Array2<c64>,
    sqrt_m: Array2<c64>,
    n_a: usize,
    b: usize,
}

impl PostprocessingMap {
    pub fn new(regions: &RegionOperatorSet, n_a: usize) -> Result<Self> {
        if regions.regions.is_empty() {
            return Err(Error::InvalidArgument("no region operators".into()));
        }
        let b = regions.regions[0].dim();
        let mut m_sum = Array2::<c64>::zeros((b, b));
        let mut sqrt_r = Vec::with_capacity(regions.regions.len());
        for r in &regions.regions {
            m_sum = &m_sum + r.mat();
            sqrt_r.push(psd_sqrt(r.mat())?);
        }
        hermitize(&mut m_sum);
        let sqrt_m = psd_sqrt(&m_sum)?;
        Ok(Self { sqrt_r, m_sum, sqrt_m, n_a, b })
    }

    /// Number of key outcomes `n_z`.
    pub fn num_outcomes(&self) -> usize {
        self.sqrt_r.len()
    }

    /// Input dimension `d = n_A * n_B`.
    pub fn dim(&self) -> usize {
        self.n_a * self.b
    }

    /// Output dimension `d' = n_z * d`.
    pub fn output_dim(&self) -> usize {
        self.num_outcomes() * self.dim()
    }

    /// `I_A (x) M` with `M = sum_z R_z` (equals the identity exactly when
    /// there is no discard region).
    pub fn kraus_gram(&self) -> Array2<c64> {
        let d = self.dim();
        let mut out = Array2::zeros((d, d));
        for i in 0..self.n_a {
            crate::linalg::add_to_block(
                &mut out,
                i,
                i,
                self.b,
                c64::new(1.0, 0.0),
                &self.m_sum.view(),
            );
        }
        out
    }

    /// Dense `G(rho) = K rho K^dag` on the full output space; intended
    /// for oracle tests, not the hot path.
    pub fn apply_g_dense(&self, rho: &Array2<c64>) -> Array2<c64> {
        let d = self.dim();
        let nz = self.num_outcomes();
        let mut out = Array2::<c64>::zeros((nz * d, nz * d));
        for z in 0..nz {
            for zp in 0..nz {
                // block (z, zp) = (I (x) sqrt(R_z)) rho (I (x) sqrt(R_zp))
                for i in 0..self.n_a {
                    for j in 0..self.n_a {
                        let rij = block(rho, i, j, self.b);
                        let blk = self.sqrt_r[z].dot(&rij).dot(&self.sqrt_r[zp]);
                        let (ro, co) = (z * d + i * self.b, zp * d + j * self.b);
                        out.slice_mut(ndarray::s![
                            ro..ro + self.b,
                            co..co + self.b
                        ])
                        .assign(&blk);
                    }
                }
            }
        }
        hermitize(&mut out);
        out
    }

    /// The pinching `Z` on the output space: zeroes every off-diagonal
    /// key block.
    pub fn pinch_dense(&self, g: &Array2<c64>) -> Array2<c64> {
        let d = self.dim();
        let nz = self.num_outcomes();
        let mut out = Array2::zeros(g.dim());
        for z in 0..nz {
            let blk = g.slice(ndarray::s![z * d..(z + 1) * d, z * d..(z + 1) * d]);
            out.slice_mut(ndarray::s![z * d..(z + 1) * d, z * d..(z + 1) * d])
                .assign(&blk);
        }
        out
    }
}

/// Per-state data sufficient to evaluate the objective along a line
/// segment with eigenvalue computations only. All entries are linear
/// in the underlying matrix, so segment combinations are exact.
#[derive(Debug, Clone)]
pub struct SupportDecomposition {
    /// `(I (x) sqrt(M)) rho (I (x) sqrt(M))` — carries the spectrum of `G(rho)`.
    pub a: Array2<c64>,
    /// `Z_z(rho)` for each key outcome.
    pub zs: Vec<Array2<c64>>,
    /// `Tr G(rho)`.
    pub tr_g: f64,
}

/// The smoothed relative-entropy objective
/// `f_eps(rho) = Tr[G_eps log2 G_eps] - Tr[G_eps log2 Z_eps]` with
/// `G_eps = (1 - eps) G(rho) + (eps Tr G(rho) / d') I`.
#[derive(Debug, Clone)]
pub struct EntropyObjective<'a> {
    map: &'a PostprocessingMap,
    pub eps: f64,
}

fn xlog2(x: f64) -> f64 {
    if x > 0.0 {
        x * x.log2()
    } else {
        0.0
    }
}

fn safe_log2(x: f64) -> f64 {
    x.max(1e-300).log2()
}

impl<'a> EntropyObjective<'a> {
    pub fn new(map: &'a PostprocessingMap, eps: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&eps) || eps == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "smoothing eps must be in (0, 1), got {eps}"
            )));
        }
        Ok(Self { map, eps })
    }

    pub fn map(&self) -> &PostprocessingMap {
        self.map
    }

    /// Smoothing penalty `zeta_eps` bounding `|f - f_eps|`.
    pub fn zeta(&self) -> f64 {
        let dp = self.map.output_dim() as f64;
        2.0 * self.eps * (dp - 1.0) * (dp / (self.eps * (dp - 1.0))).log2()
    }

    pub fn decompose(&self, rho: &Array2<c64>) -> SupportDecomposition {
        let n_a = self.map.n_a;
        let a = sandwich_blockwise(&self.map.sqrt_m, rho, n_a);
        let zs: Vec<Array2<c64>> = self
            .map
            .sqrt_r
            .iter()
            .map(|s| sandwich_blockwise(s, rho, n_a))
            .collect();
        let tr_g = crate::linalg::trace(&a.view()).re;
        SupportDecomposition { a, zs, tr_g }
    }

    fn value_from_eigs(
        &self,
        eig_a: &Array1<f64>,
        eig_zs: &[Array1<f64>],
        tr_g: f64,
    ) -> f64 {
        let d = self.map.dim() as f64;
        let dp = self.map.output_dim() as f64;
        let eps = self.eps;
        let nu = eps * tr_g / dp;
        let shift = |lam: f64| (1.0 - eps) * lam + nu;
        let term1: f64 = eig_a.iter().map(|&l| xlog2(shift(l))).sum::<f64>()
            + (dp - d) * xlog2(nu);
        let term2: f64 = eig_zs
            .iter()
            .map(|ez| ez.iter().map(|&l| xlog2(shift(l))).sum::<f64>())
            .sum();
        term1 - term2
    }

    /// Objective value from a precomputed decomposition (eigenvalues only).
    pub fn value_of(&self, dec: &SupportDecomposition) -> Result<f64> {
        let eig_a = eigvalsh(&dec.a)?;
        let eig_zs: Vec<Array1<f64>> =
            dec.zs.iter().map(eigvalsh).collect::<Result<_>>()?;
        Ok(self.value_from_eigs(&eig_a, &eig_zs, dec.tr_g))
    }

    pub fn value(&self, rho: &Array2<c64>) -> Result<f64> {
        self.value_of(&self.decompose(rho))
    }

    /// Objective along the segment `rho_0 + s * delta` from the two
    /// linear decompositions; each call costs `n_z + 1` eigenvalue
    /// computations.
    pub fn segment_value(
        &self,
        d0: &SupportDecomposition,
        d1: &SupportDecomposition,
        s: f64,
    ) -> Result<f64> {
        let sc = c64::new(s, 0.0);
        let a = &d0.a + &d1.a.mapv(|z| z * sc);
        let eig_a = eigvalsh(&a)?;
        let mut eig_zs = Vec::with_capacity(d0.zs.len());
        for (z0, z1) in d0.zs.iter().zip(d1.zs.iter()) {
            eig_zs.push(eigvalsh(&(z0 + &z1.mapv(|z| z * sc)))?);
        }
        Ok(self.value_from_eigs(&eig_a, &eig_zs, d0.tr_g + s * d1.tr_g))
    }

    /// Value and gradient. The gradient is
    /// `(1-eps) [ (I(x)sqrtM) L_A (I(x)sqrtM) - sum_z (I(x)sqrtR_z) L_z (I(x)sqrtR_z) ]
    ///  + (eps/d') (Tr log2 G_eps - Tr log2 Z_eps) (I (x) M)`
    /// with `L_A = log2((1-eps) A + nu I)` and
    /// `L_z = log2((1-eps) Z_z + nu I)`.
    pub fn value_and_gradient(&self, rho: &Array2<c64>) -> Result<(f64, Array2<c64>)> {
        let dec = self.decompose(rho);
        let d = self.map.dim() as f64;
        let dp = self.map.output_dim() as f64;
        let eps = self.eps;
        let nu = eps * dec.tr_g / dp;
        let shift = |lam: f64| (1.0 - eps) * lam + nu;
        let n_a = self.map.n_a;

        let (va, ua) = eigh(&dec.a)?;
        let la = va.mapv(|l| safe_log2(shift(l)));
        let log_a = reconstruct(&la, &ua);
        let g_part = sandwich_blockwise(&self.map.sqrt_m, &log_a, n_a);

        let mut z_part = Array2::<c64>::zeros(rho.dim());
        let mut eig_zs = Vec::with_capacity(dec.zs.len());
        let mut tr_log_z = 0.0;
        for (zmat, srz) in dec.zs.iter().zip(self.map.sqrt_r.iter()) {
            let (vz, uz) = eigh(zmat)?;
            let lz = vz.mapv(|l| safe_log2(shift(l)));
            tr_log_z += lz.sum();
            z_part = &z_part + &sandwich_blockwise(srz, &reconstruct(&lz, &uz), n_a);
            eig_zs.push(vz);
        }

        let tr_log_g = la.sum() + (dp - d) * safe_log2(nu);
        let f = self.value_from_eigs(&va, &eig_zs, dec.tr_g);

        let coeff = c64::new(1.0 - eps, 0.0);
        let mut grad = (&g_part - &z_part).mapv(|z| z * coeff);
        let trace_coeff = eps / dp * (tr_log_g - tr_log_z);
        for i in 0..n_a {
            crate::linalg::add_to_block(
                &mut grad,
                i,
                i,
                self.map.b,
                c64::new(trace_coeff, 0.0),
                &self.map.m_sum.view(),
            );
        }
        hermitize(&mut grad);
        Ok((f, grad))
    }
}

/// Frank-Wolfe controls. The linearized subproblems (LMO) run at the
/// given solver tolerances; the line search is golden-section on `[0, 1]`.
#[derive(Debug, Clone)]
pub struct FrankWolfeOptions {
    pub gap_tol: f64,
    pub max_iter: usize,
    pub lmo: SolveOptions,
    pub line_search_iters: usize,
}

impl Default for FrankWolfeOptions {
    fn default() -> Self {
        Self {
            gap_tol: 1e-4,
            max_iter: 300,
            lmo: SolveOptions {
                gap_tol: 1e-7,
                feas_tol: 1e-7,
                max_iter: 100,
            },
            line_search_iters: 36,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FrankWolfeOutcome {
    pub rho: Array2<c64>,
    pub objective: f64,
    /// Final linearization gap `Tr[grad (rho - sigma)]`.
    pub gap: f64,
    pub iterations: usize,
}

/// Minimizes the objective over the constraint set by Frank-Wolfe with
/// exact (golden-section) line search.
pub fn frank_wolfe(
    obj: &EntropyObjective,
    cons: &ConstraintSet,
    rho0: Array2<c64>,
    opts: &FrankWolfeOptions,
) -> Result<FrankWolfeOutcome> {
    let mut rho = rho0;
    let mut f_cur = obj.value(&rho)?;
    let mut gap = f64::INFINITY;
    let mut iterations = 0;
    for it in 0..opts.max_iter {
        iterations = it;
        let (f, grad) = obj.value_and_gradient(&rho)?;
        f_cur = f;
        let lmo = solve_linear_sdp(
            &grad,
            &cons.constraints,
            &cons.rhs,
            &cons.structure,
            &opts.lmo,
        )?;
        let sigma = lmo.x;
        gap = tr_prod(&grad.view(), &(&rho - &sigma).view()).re;
        if gap <= opts.gap_tol {
            break;
        }
        let delta = &sigma - &rho;
        let d0 = obj.decompose(&rho);
        let d1 = obj.decompose(&delta);
        // golden-section over s in [0, 1]
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let mut s1 = hi - phi * (hi - lo);
        let mut s2 = lo + phi * (hi - lo);
        let mut f1 = obj.segment_value(&d0, &d1, s1)?;
        let mut f2 = obj.segment_value(&d0, &d1, s2)?;
        for _ in 0..opts.line_search_iters {
            if f1 <= f2 {
                hi = s2;
                s2 = s1;
                f2 = f1;
                s1 = hi - phi * (hi - lo);
                f1 = obj.segment_value(&d0, &d1, s1)?;
            } else {
                lo = s1;
                s1 = s2;
                f1 = f2;
                s2 = lo + phi * (hi - lo);
                f2 = obj.segment_value(&d0, &d1, s2)?;
            }
        }
        let (s_best, f_best) = if f1 <= f2 { (s1, f1) } else { (s2, f2) };
        if f_best >= f_cur || s_best <= 1e-14 {
            // stalled: the linearization gap already bounds the remaining
            // suboptimality, so stop here
            break;
        }
        rho = &rho + &delta.mapv(|z| z * c64::new(s_best, 0.0));
        hermitize(&mut rho);
        f_cur = f_best;
    }
    Ok(FrankWolfeOutcome {
        rho,
        objective: f_cur,
        gap,
        iterations: iterations + 1,
    })
}

/// Outcome of the dual certification step.
#[derive(Debug, Clone)]
pub struct CertifiedBound {
    /// Upper bound on the entropy minimum (value at the iterate plus the
    /// smoothing penalty).
    pub upper: f64,
    /// Certified lower bound on the entropy minimum.
    pub lower: f64,
    pub eps_prime: f64,
    pub zeta: f64,
    pub dual_status: SolveStatus,
}

/// Converts the Frank-Wolfe iterate into a certified lower bound:
/// linearize at `rho_1`, relax every constraint into a box of half-width
/// `eps'` around the iterate's own values, and price the relaxed
/// program through a verified dual-feasible point.
pub fn certified_lower_bound(
    obj: &EntropyObjective,
    cons: &ConstraintSet,
    rho1: &Array2<c64>,
    cert_opts: &SolveOptions,
) -> Result<CertifiedBound> {
    let (f1, grad) = obj.value_and_gradient(rho1)?;
    let m = cons.constraints.len();
    let mut gamma = Vec::with_capacity(m);
    let mut resid: f64 = 0.0;
    let mut gamma_inf: f64 = 0.0;
    for (c, &bi) in cons.constraints.iter().zip(cons.rhs.iter()) {
        let gi = c.apply(rho1, &cons.structure);
        resid = resid.max((gi - bi).abs());
        gamma_inf = gamma_inf.max(gi.abs());
        gamma.push(gi);
    }
    let eps_prime = resid.max(1e-10) * (1.0 + gamma_inf);
    let dual = solve_dual_program(
        &grad,
        &cons.constraints,
        &gamma,
        eps_prime,
        &cons.identity_combo,
        &cons.structure,
        cert_opts,
    )?;
    let lin_at_rho1 = tr_prod(&grad.view(), &rho1.view()).re;
    let zeta = obj.zeta();
    Ok(CertifiedBound {
        upper: f1 + zeta,
        lower: f1 - lin_at_rho1 + dual.certified_value - zeta,
        eps_prime,
        zeta,
        dual_status: dual.report.status,
    })
}

/// Controls for a full rate computation.
///
/// Two smoothing levels are used: a larger `eps_run` keeps the objective
/// well-conditioned during the Frank-Wolfe phase, and a smaller
/// `eps_cert` makes the smoothing penalty `zeta` negligible in the final
/// certificate (which only needs the iterate as a linearization point,
/// not the optimizer of the same smoothed objective).
#[derive(Debug, Clone)]
pub struct RateOptions {
    /// Smoothing during Frank-Wolfe.
    pub eps_run: f64,
    /// Smoothing for the certificate; `None` selects
    /// `max(1e-9, 1e-12 d' / Tr G(rho_0))`.
    pub eps_cert: Option<f64>,
    /// Weight of the strictly interior point blended into the feasible
    /// initial state so early gradients stay bounded.
    pub interior_blend: f64,
    pub fw: FrankWolfeOptions,
    /// Solver tolerances for the final certification SDP.
    pub cert: SolveOptions,
}

impl Default for RateOptions {
    fn default() -> Self {
        Self {
            eps_run: 1e-7,
            eps_cert: None,
            interior_blend: 0.05,
            fw: FrankWolfeOptions::default(),
            cert: SolveOptions {
                gap_tol: 1e-9,
                feas_tol: 1e-9,
                max_iter: 200,
            },
        }
    }
}

/// Everything a single rate point produces.
#[derive(Debug, Clone)]
pub struct RateReport {
    /// Upper bound on the entropy term (bits per channel use).
    pub upper_bound: f64,
    /// Certified lower bound on the entropy term.
    pub lower_bound: f64,
    /// Error-correction leakage per passed round (bits).
    pub delta_ec: f64,
    pub p_pass: f64,
    /// `max(0, lower_bound - p_pass * delta_ec)`.
    pub key_rate: f64,
    pub epsilon: f64,
    pub eps_prime: f64,
    pub fw_iterations: usize,
    pub fw_gap: f64,
}

/// Builds a strictly feasible, strictly positive initial state: the
/// simulated channel output projected onto the constraint set, blended
/// with a zero-objective interior-point solution. A rank-deficient start
/// makes the smoothed gradient pick up `log(nu)`-sized terms wherever
/// the pinched output has support the unpinched one lacks, which
/// inflates the curvature seen by Frank-Wolfe and stalls it; the blend
/// keeps every eigenvalue safely above the smoothing floor.
pub fn feasible_interior_start(
    constellation: &Constellation,
    channel: &ChannelModel,
    cutoff: &FockCutoff,
    set: &ConstraintSet,
    blend: f64,
) -> Result<Array2<c64>> {
    let rho_sim = simulated_state(constellation, channel, cutoff)?;
    let (proj, residual) = nearest_feasible(
        rho_sim.mat(),
        &set.constraints,
        &set.rhs,
        &set.structure,
        400,
        1e-9,
    )?;
    if residual > 1e-4 {
        return Err(Error::InfeasibleAtCutoff { residual });
    }
    if blend <= 0.0 {
        return Ok(proj);
    }
    let d = set.structure.dim();
    let zero = Array2::<c64>::zeros((d, d));
    let interior = solve_linear_sdp(
        &zero,
        &set.constraints,
        &set.rhs,
        &set.structure,
        &SolveOptions {
            gap_tol: 1e-6,
            feas_tol: 1e-9,
            max_iter: 60,
        },
    )?
    .x;
    let mut rho0 = &proj.mapv(|z| z * c64::new(1.0 - blend, 0.0))
        + &interior.mapv(|z| z * c64::new(blend, 0.0));
    hermitize(&mut rho0);
    Ok(rho0)
}

/// Computes the asymptotic key rate for one protocol configuration.
pub fn key_rate(
    constellation: &Constellation,
    partition: &RegionPartition,
    channel: &ChannelModel,
    det: &DetectorModel,
    cutoff: &FockCutoff,
    beta: f64,
    opts: &RateOptions,
) -> Result<RateReport> {
    let ops = cached_bob_operators(partition, det, cutoff)?;
    let set = build_constraints(constellation, channel, det, &ops.moments);
    let map = PostprocessingMap::new(&ops.regions, constellation.len())?;

    let rho0 = feasible_interior_start(
        constellation,
        channel,
        cutoff,
        &set,
        opts.interior_blend,
    )?;

    let eps_cert = match opts.eps_cert {
        Some(e) => e,
        None => {
            let tr_g = {
                let probe = EntropyObjective::new(&map, 1e-9)?;
                probe.decompose(&rho0).tr_g
            };
            (1e-12 * map.output_dim() as f64 / tr_g.max(1e-12)).max(1e-9)
        }
    };

    let obj_run = EntropyObjective::new(&map, opts.eps_run)?;
    let fw = frank_wolfe(&obj_run, &set, rho0, &opts.fw)?;
    let obj_cert = EntropyObjective::new(&map, eps_cert)?;
    let cert = certified_lower_bound(&obj_cert, &set, &fw.rho, &opts.cert)?;

    let dist = discretized_distribution(constellation, partition, channel, det);
    let probs = constellation.probabilities();
    let p_pass = sifting_probability(&dist, &probs);
    let delta_ec = ec_leakage(&dist, &probs, beta)?;

    Ok(RateReport {
        upper_bound: cert.upper,
        lower_bound: cert.lower,
        delta_ec,
        p_pass,
        key_rate: (cert.lower - p_pass * delta_ec).max(0.0),
        epsilon: eps_cert,
        eps_prime: cert.eps_prime,
        fw_iterations: fw.iterations,
        fw_gap: fw.gap,
    })
}

/// Independent reference implementations for the verification suite.
#[doc(hidden)]
pub mod oracle {
    use super::*;
    use crate::linalg::max_abs;

    /// Penalized projected-gradient oracle for the constrained entropy
    /// minimum: minimize `f(rho) + mu sum_i (Tr(Gamma_i rho) - b_i)^2`
    /// over the PSD cone (exact eigenvalue-clipping projection) with a
    /// ramped penalty weight, then project the result exactly onto the
    /// affine-PSD intersection and report the objective there.
    pub fn projected_gradient_minimum(
        obj: &EntropyObjective,
        set: &ConstraintSet,
        rho0: &Array2<c64>,
    ) -> f64 {
        let penalized = |rho: &Array2<c64>, mu: f64| -> f64 {
            let pen: f64 = set
                .constraints
                .iter()
                .zip(set.rhs.iter())
                .map(|(c, &b)| (c.apply(rho, &set.structure) - b).powi(2))
                .sum();
            obj.value(rho).unwrap() + mu * pen
        };
        let mut rho = rho0.clone();
        for mu in [1e2, 1e3, 1e4, 1e5, 1e6] {
            let mut step = 0.1;
            let mut cur = penalized(&rho, mu);
            for _ in 0..300 {
                let (_, mut grad) = obj.value_and_gradient(&rho).unwrap();
                for (c, &b) in set.constraints.iter().zip(set.rhs.iter()) {
                    let r = c.apply(&rho, &set.structure) - b;
                    c.add_scaled_to(&mut grad, 2.0 * mu * r, &set.structure);
                }
                let scale = max_abs(&grad.view()).max(1e-12);
                let trial = &rho - &grad.mapv(|z| z * c64::new(step / scale, 0.0));
                let proj = crate::linalg::psd_projection(&trial).unwrap();
                let f_new = penalized(&proj, mu);
                if f_new < cur {
                    rho = proj;
                    cur = f_new;
                    step = (step * 1.3).min(0.5);
                } else {
                    step *= 0.5;
                    if step < 1e-9 {
                        break;
                    }
                }
            }
        }
        // land exactly on the feasible set before evaluating
        let (feasible, res) = nearest_feasible(
            &rho,
            &set.constraints,
            &set.rhs,
            &set.structure,
            30000,
            1e-11,
        )
        .unwrap();
        assert!(res < 1e-7, "oracle final residual {res}");
        obj.value(&feasible).unwrap()
    }
}
