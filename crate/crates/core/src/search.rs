//! Parameter search utilities: batch evaluation of rate points (with
//! bounded parallelism), coordinate-descent optimization of the
//! two-ring constellation, and the Gaussian-modulation covariance
//! baseline used as a reference curve.

use ndarray::Array2;
use rayon::prelude::*;

use crate::constellation::{build_psk, build_two_ring, Constellation, RegionPartition};
use crate::error::{Error, Result};
use crate::fock::{DetectorModel, FockCutoff};
use crate::rate::{key_rate, RateOptions, RateReport};
use crate::statistics::ChannelModel;

/// Constellation selector for a rate point.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstellationSpec {
    Psk {
        points: usize,
        alpha: f64,
    },
    TwoRing {
        alpha1: f64,
        alpha2: f64,
        p1: f64,
        /// Radius separating inner- and outer-ring key regions.
        alpha_c: f64,
    },
}

/// One fully specified rate computation.
#[derive(Debug, Clone, PartialEq)]
pub struct RatePoint {
    pub spec: ConstellationSpec,
    /// Postselection disc radius (0 disables postselection).
    pub alpha0: f64,
    pub distance_km: f64,
    pub loss_db_per_km: f64,
    pub xi: f64,
    pub eta: f64,
    pub v_el: f64,
    pub n_c: usize,
    pub beta: f64,
}

impl RatePoint {
    pub fn constellation(&self) -> Result<Constellation> {
        match &self.spec {
            ConstellationSpec::Psk { points, alpha } => build_psk(*points, *alpha),
            ConstellationSpec::TwoRing { alpha1, alpha2, p1, .. } => {
                build_two_ring(*alpha1, *alpha2, *p1)
            }
        }
    }

    pub fn partition(&self) -> Result<RegionPartition> {
        match &self.spec {
            ConstellationSpec::Psk { points, .. } => {
                RegionPartition::psk_sectors(*points, self.alpha0)
            }
            ConstellationSpec::TwoRing { alpha_c, .. } => {
                RegionPartition::two_ring(*alpha_c, self.alpha0)
            }
        }
    }

    pub fn channel(&self) -> Result<ChannelModel> {
        ChannelModel::new(self.distance_km, self.loss_db_per_km, self.xi)
    }

    pub fn detector(&self) -> Result<DetectorModel> {
        DetectorModel::new(self.eta, self.v_el)
    }

    pub fn evaluate(&self, opts: &RateOptions) -> Result<RateReport> {
        let cons = self.constellation()?;
        let part = self.partition()?;
        let ch = self.channel()?;
        let det = self.detector()?;
        let cutoff = FockCutoff::new(self.n_c)?;
        key_rate(&cons, &part, &ch, &det, &cutoff, self.beta, opts)
    }
}

/// Thread budget: `DMCV_THREADS` if set and valid, otherwise the rayon
/// default.
pub fn thread_budget() -> Option<usize> {
    std::env::var("DMCV_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n >= 1)
}

/// Evaluates every point, in parallel when the thread budget allows,
/// returning results in input order.
pub fn evaluate_many(
    points: &[RatePoint],
    opts: &RateOptions,
) -> Vec<Result<RateReport>> {
    let run = || {
        points
            .par_iter()
            .map(|p| p.evaluate(opts))
            .collect::<Vec<_>>()
    };
    match thread_budget() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(run))
            .unwrap_or_else(|_| run()),
        None => run(),
    }
}

/// Which scalar field a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParameter {
    Alpha,
    Alpha1,
    Alpha2,
    AlphaC,
    P1,
    Alpha0,
    Distance,
}

impl SweepParameter {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "alpha" => Self::Alpha,
            "alpha1" => Self::Alpha1,
            "alpha2" => Self::Alpha2,
            "alpha_c" => Self::AlphaC,
            "p1" => Self::P1,
            "alpha0" => Self::Alpha0,
            "distance" | "distance_km" => Self::Distance,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown sweep parameter '{other}'"
                )))
            }
        })
    }
}

/// A one-dimensional grid sweep around a base point.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub base: RatePoint,
    pub parameter: SweepParameter,
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl SweepSpec {
    pub fn grid(&self) -> Result<Vec<f64>> {
        if self.step <= 0.0 || self.stop < self.start {
            return Err(Error::InvalidArgument(
                "sweep grid needs step > 0 and stop >= start".into(),
            ));
        }
        Ok(linspace_inclusive(self.start, self.stop, self.step))
    }

    /// The base point with the swept parameter replaced by `v`.
    pub fn point_at(&self, v: f64) -> Result<RatePoint> {
        let mut pt = self.base.clone();
        match (self.parameter, &mut pt.spec) {
            (SweepParameter::Alpha, ConstellationSpec::Psk { alpha, .. }) => *alpha = v,
            (SweepParameter::Alpha1, ConstellationSpec::TwoRing { alpha1, .. }) => {
                *alpha1 = v
            }
            (SweepParameter::Alpha2, ConstellationSpec::TwoRing { alpha2, .. }) => {
                *alpha2 = v
            }
            (SweepParameter::AlphaC, ConstellationSpec::TwoRing { alpha_c, .. }) => {
                *alpha_c = v
            }
            (SweepParameter::P1, ConstellationSpec::TwoRing { p1, .. }) => *p1 = v,
            (SweepParameter::Alpha0, _) => pt.alpha0 = v,
            (SweepParameter::Distance, _) => pt.distance_km = v,
            (param, _) => {
                return Err(Error::InvalidArgument(format!(
                    "sweep parameter {param:?} does not apply to this protocol"
                )))
            }
        }
        Ok(pt)
    }
}

/// Runs the sweep; per-point failures are recorded without aborting.
/// Errors only when the grid is invalid or every point failed.
pub fn sweep(
    spec: &SweepSpec,
    opts: &RateOptions,
) -> Result<Vec<(f64, Result<RateReport>)>> {
    let grid = spec.grid()?;
    let points: Vec<RatePoint> = grid
        .iter()
        .map(|&v| spec.point_at(v))
        .collect::<Result<_>>()?;
    let results = evaluate_many(&points, opts);
    if results.iter().all(|r| r.is_err()) {
        return Err(Error::NumericalFailure(
            "every sweep point failed".into(),
        ));
    }
    Ok(grid.into_iter().zip(results).collect())
}

/// One evaluated candidate during the two-ring coordinate descent.
#[derive(Debug, Clone)]
pub struct TwoRingCandidate {
    pub alpha1: f64,
    pub alpha2: f64,
    pub p1: f64,
    pub alpha_c: f64,
    /// `None` when the evaluation failed at this grid point.
    pub report: Option<RateReport>,
}

/// Result of the two-ring coordinate descent. The optimum is the
/// maximum key rate over `visited`.
#[derive(Debug, Clone)]
pub struct TwoRingOptimum {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha_c: f64,
    pub p1: f64,
    pub report: RateReport,
    /// Number of rate evaluations spent.
    pub evaluations: usize,
    /// Every candidate evaluated, in evaluation order.
    pub visited: Vec<TwoRingCandidate>,
}

/// Coordinate descent over the two-ring constellation parameters on the
/// grids `alpha1 in [0.5, 0.9]`, `alpha2 in [1.45, 1.85]`,
/// `alpha_c in [0.75, 1.10]` (step 0.05) and `p1 in {4..11}/48`,
/// starting from the given point and sweeping one coordinate at a time
/// until no move improves the key rate.
pub fn optimize_two_ring(
    base: &RatePoint,
    opts: &RateOptions,
    max_rounds: usize,
) -> Result<TwoRingOptimum> {
    let (mut a1, mut a2, mut p1, mut ac) = match &base.spec {
        ConstellationSpec::TwoRing { alpha1, alpha2, p1, alpha_c } => {
            (*alpha1, *alpha2, *p1, *alpha_c)
        }
        _ => {
            return Err(Error::InvalidArgument(
                "two-ring optimization needs a two-ring base point".into(),
            ))
        }
    };
    let grid = |lo: f64, hi: f64, step: f64| -> Vec<f64> {
        let n = ((hi - lo) / step).round() as usize;
        (0..=n).map(|i| lo + i as f64 * step).collect()
    };
    let a1_grid = grid(0.5, 0.9, 0.05);
    let a2_grid = grid(1.45, 1.85, 0.05);
    let ac_grid = grid(0.75, 1.10, 0.05);
    let p1_grid: Vec<f64> = (4..=11).map(|k| k as f64 / 48.0).collect();

    let mut evaluations = 0usize;
    let mut visited: Vec<TwoRingCandidate> = Vec::new();
    let eval = |a1: f64,
                a2: f64,
                p1: f64,
                ac: f64,
                evals: &mut usize,
                visited: &mut Vec<TwoRingCandidate>|
     -> Result<RateReport> {
        *evals += 1;
        let mut pt = base.clone();
        pt.spec = ConstellationSpec::TwoRing { alpha1: a1, alpha2: a2, p1, alpha_c: ac };
        let res = pt.evaluate(opts);
        visited.push(TwoRingCandidate {
            alpha1: a1,
            alpha2: a2,
            p1,
            alpha_c: ac,
            report: res.as_ref().ok().cloned(),
        });
        res
    };

    let mut best_report = eval(a1, a2, p1, ac, &mut evaluations, &mut visited)?;
    let mut best_rate = best_report.key_rate;
    for _ in 0..max_rounds {
        let mut improved = false;
        // one coordinate at a time; each pass scans the neighbors of the
        // incumbent on that grid
        for coord in 0..4 {
            let candidates: Vec<(f64, f64, f64, f64)> = match coord {
                0 => a1_grid.iter().map(|&v| (v, a2, p1, ac)).collect(),
                1 => a2_grid.iter().map(|&v| (a1, v, p1, ac)).collect(),
                2 => p1_grid.iter().map(|&v| (a1, a2, v, ac)).collect(),
                _ => ac_grid.iter().map(|&v| (a1, a2, p1, v)).collect(),
            };
            for (c1, c2, cp, cc) in candidates {
                if (c1, c2, cp, cc) == (a1, a2, p1, ac) {
                    continue;
                }
                if let Ok(rep) = eval(c1, c2, cp, cc, &mut evaluations, &mut visited) {
                    if rep.key_rate > best_rate {
                        best_rate = rep.key_rate;
                        best_report = rep;
                        (a1, a2, p1, ac) = (c1, c2, cp, cc);
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            break;
        }
    }
    Ok(TwoRingOptimum {
        alpha1: a1,
        alpha2: a2,
        alpha_c: ac,
        p1,
        report: best_report,
        evaluations,
        visited,
    })
}

// ---------------------------------------------------------------------------
// Gaussian-modulation baseline via the covariance-matrix formalism
// ---------------------------------------------------------------------------

/// Von Neumann entropy contribution of one symplectic eigenvalue.
fn g_entropy(nu: f64) -> f64 {
    let nu = nu.max(1.0);
    let p = (nu + 1.0) / 2.0;
    let m = (nu - 1.0) / 2.0;
    let mp = p * p.log2();
    let mm = if m > 0.0 { m * m.log2() } else { 0.0 };
    mp - mm
}

/// Symplectic eigenvalues of a (2n x 2n) covariance matrix in the
/// `(q1, p1, q2, p2, ...)` ordering, from the spectrum of `Omega gamma`.
fn symplectic_eigenvalues(gamma: &Array2<f64>) -> Result<Vec<f64>> {
    use ndarray_linalg::Eig;
    let n2 = gamma.nrows();
    if n2 % 2 != 0 || gamma.ncols() != n2 {
        return Err(Error::InvalidArgument("covariance matrix must be 2n x 2n".into()));
    }
    let mut omega = Array2::<f64>::zeros((n2, n2));
    for k in 0..n2 / 2 {
        omega[(2 * k, 2 * k + 1)] = 1.0;
        omega[(2 * k + 1, 2 * k)] = -1.0;
    }
    let m = omega.dot(gamma);
    let (vals, _) = m
        .eig()
        .map_err(|e| Error::NumericalFailure(format!("symplectic spectrum failed: {e}")))?;
    let mut mags: Vec<f64> = vals.iter().map(|z| z.norm()).collect();
    mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // eigenvalues come in +-(i nu) pairs
    Ok(mags.chunks(2).map(|c| 0.5 * (c[0] + c[1])).collect())
}

fn total_entropy(gamma: &Array2<f64>) -> Result<f64> {
    Ok(symplectic_eigenvalues(gamma)?.into_iter().map(g_entropy).sum())
}

/// Conditional covariance of the remaining modes after an (ideal)
/// heterodyne measurement of the last mode:
/// `gamma_N - sigma (gamma_B + I)^-1 sigma^T`.
fn heterodyne_condition(gamma: &Array2<f64>) -> Result<Array2<f64>> {
    use ndarray_linalg::Inverse;
    let n2 = gamma.nrows();
    let k = n2 - 2;
    let gn = gamma.slice(ndarray::s![..k, ..k]).to_owned();
    let sigma = gamma.slice(ndarray::s![..k, k..]).to_owned();
    let mut gb = gamma.slice(ndarray::s![k.., k..]).to_owned();
    gb[(0, 0)] += 1.0;
    gb[(1, 1)] += 1.0;
    let gb_inv = gb
        .inv()
        .map_err(|e| Error::NumericalFailure(format!("conditioning inverse failed: {e}")))?;
    Ok(&gn - &sigma.dot(&gb_inv).dot(&sigma.t()))
}

/// One evaluated point of the Gaussian-modulation baseline.
#[derive(Debug, Clone)]
pub struct GmReport {
    pub v_a: f64,
    pub mutual_information: f64,
    pub holevo_bound: f64,
    pub key_rate: f64,
}

/// Key rate of the Gaussian-modulation heterodyne protocol with a
/// trusted detector, for modulation variance `v_a` (shot-noise units).
///
/// The trusted detector is modeled as a beamsplitter of transmittance
/// `eta` mixing Bob's mode with one half of an EPR state whose variance
/// `v = 1 + 2 v_el / (1 - eta)` reproduces the electronic noise; the
/// detector ancillas are held by Bob, not Eve.
pub fn gm_key_rate(
    channel: &ChannelModel,
    det: &DetectorModel,
    beta: f64,
    v_a: f64,
) -> Result<GmReport> {
    if v_a <= 0.0 {
        return Err(Error::InvalidArgument("modulation variance must be positive".into()));
    }
    let t = channel.transmittance();
    let eta = det.eta();
    let v_el = det.v_el();
    let v = v_a + 1.0;
    let b = t * (v - 1.0) + 1.0 + t * channel.xi;
    let c = (t * (v * v - 1.0)).sqrt();

    // gamma_AB in (qA, pA, qB, pB) ordering
    let mut gamma_ab = Array2::<f64>::zeros((4, 4));
    for i in 0..2 {
        gamma_ab[(i, i)] = v;
        gamma_ab[(2 + i, 2 + i)] = b;
    }
    gamma_ab[(0, 2)] = c;
    gamma_ab[(2, 0)] = c;
    gamma_ab[(1, 3)] = -c;
    gamma_ab[(3, 1)] = -c;

    // Eve purifies (A, B) before the trusted detector
    let s_e = total_entropy(&gamma_ab)?;

    // extend with the detector EPR pair (F0, F1) and apply the
    // beamsplitter to (B, F0); mode order (A, B, F0, F1)
    let v_d = if eta < 1.0 { 1.0 + 2.0 * v_el / (1.0 - eta) } else { 1.0 };
    let mut gamma = Array2::<f64>::zeros((8, 8));
    gamma.slice_mut(ndarray::s![..4, ..4]).assign(&gamma_ab);
    for i in 0..2 {
        gamma[(4 + i, 4 + i)] = v_d;
        gamma[(6 + i, 6 + i)] = v_d;
    }
    let cf = (v_d * v_d - 1.0).max(0.0).sqrt();
    gamma[(4, 6)] = cf;
    gamma[(6, 4)] = cf;
    gamma[(5, 7)] = -cf;
    gamma[(7, 5)] = -cf;

    let mut s_bs = Array2::<f64>::eye(8);
    let (sq, sr) = (eta.sqrt(), (1.0 - eta).sqrt());
    for i in 0..2 {
        s_bs[(2 + i, 2 + i)] = sq;
        s_bs[(2 + i, 4 + i)] = sr;
        s_bs[(4 + i, 2 + i)] = -sr;
        s_bs[(4 + i, 4 + i)] = sq;
    }
    let gamma_out = s_bs.dot(&gamma).dot(&s_bs.t());

    // reorder to (A, F0', F1, B') so the measured mode comes last
    let perm = [0usize, 1, 4, 5, 6, 7, 2, 3];
    let mut gp = Array2::<f64>::zeros((8, 8));
    for (i, &pi) in perm.iter().enumerate() {
        for (j, &pj) in perm.iter().enumerate() {
            gp[(i, j)] = gamma_out[(pi, pj)];
        }
    }
    let gamma_cond = heterodyne_condition(&gp)?;
    let s_cond = total_entropy(&gamma_cond)?;
    let holevo = (s_e - s_cond).max(0.0);

    // heterodyne mutual information: complex AWGN with signal power
    // eta T v_a / 2 and total complex noise 1 + eta T xi / 2 + v_el
    let sigma2 = 1.0 + 0.5 * eta * t * channel.xi + v_el;
    let i_ab = (1.0 + eta * t * v_a / (2.0 * sigma2)).log2();

    Ok(GmReport {
        v_a,
        mutual_information: i_ab,
        holevo_bound: holevo,
        key_rate: beta * i_ab - holevo,
    })
}

/// Maximizes the Gaussian-modulation key rate over the modulation
/// variance by golden-section search on `[v_lo, v_hi]`.
pub fn gm_baseline(
    channel: &ChannelModel,
    det: &DetectorModel,
    beta: f64,
    v_lo: f64,
    v_hi: f64,
) -> Result<GmReport> {
    if !(v_lo > 0.0 && v_hi > v_lo) {
        return Err(Error::InvalidArgument("invalid modulation-variance bracket".into()));
    }
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (v_lo, v_hi);
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = gm_key_rate(channel, det, beta, x1)?.key_rate;
    let mut f2 = gm_key_rate(channel, det, beta, x2)?.key_rate;
    for _ in 0..80 {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = gm_key_rate(channel, det, beta, x1)?.key_rate;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = gm_key_rate(channel, det, beta, x2)?.key_rate;
        }
    }
    let v_best = if f1 >= f2 { x1 } else { x2 };
    gm_key_rate(channel, det, beta, v_best)
}

/// Maximizes the Gaussian-modulation key rate over an explicit grid of
/// modulation variances; the best grid point is returned.
pub fn gm_baseline_grid(
    channel: &ChannelModel,
    det: &DetectorModel,
    beta: f64,
    grid: &[f64],
) -> Result<GmReport> {
    let mut best: Option<GmReport> = None;
    for &v in grid {
        if v <= 0.0 {
            return Err(Error::InvalidArgument(
                "modulation variance grid must be positive".into(),
            ));
        }
        let rep = gm_key_rate(channel, det, beta, v)?;
        if best.as_ref().map_or(true, |b| rep.key_rate > b.key_rate) {
            best = Some(rep);
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("empty modulation variance grid".into()))
}

/// Evenly spaced values from `lo` to `hi` inclusive (within round-off).
pub fn linspace_inclusive(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    if step <= 0.0 || hi < lo {
        return vec![lo];
    }
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}
