//! Channel statistics: expected heterodyne moments, the observable
//! constraint set, the discretized outcome distribution with
//! postselection, error-correction leakage, and the simulated channel
//! output state used as an initial point.
//!
//! Everything is driven by the Gaussian channel model: transmittance
//! `T = 10^(-loss * L / 10)`, excess noise `xi`, and the trusted detector
//! `(eta, v_el)`, under which the outcome density for signal `x` is a
//! complex Gaussian centered at `sqrt(eta T) alpha_x` with total variance
//! `sigma^2 = 1 + eta T xi / 2 + v_el`.

use ndarray::{s, Array1, Array2};
use ndarray_linalg::c64;
use statrs::function::erf::erf;
use std::f64::consts::PI;

use crate::conic::{Block, BlockStructure, ConstraintMatrix};
use crate::constellation::{Constellation, RegionPartition};
use crate::error::{Error, Result};
use crate::fock::{coherent_vector_padded, displacement, DetectorModel, FockCutoff, MomentObservables};
use crate::linalg::{conj_transpose, hermitize, DensityOperator};
use crate::quad::gauss_legendre_on;

/// Loss channel with excess noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelModel {
    pub distance_km: f64,
    pub loss_db_per_km: f64,
    /// Excess noise in shot-noise units, referred to the channel input.
    pub xi: f64,
}

impl ChannelModel {
    pub fn new(distance_km: f64, loss_db_per_km: f64, xi: f64) -> Result<Self> {
        if distance_km < 0.0 || loss_db_per_km < 0.0 || xi < 0.0 {
            return Err(Error::InvalidArgument(
                "channel parameters must be nonnegative".into(),
            ));
        }
        Ok(Self { distance_km, loss_db_per_km, xi })
    }

    pub fn transmittance(&self) -> f64 {
        10f64.powf(-self.loss_db_per_km * self.distance_km / 10.0)
    }

    /// Mean thermal photons the noise insertion adds at the channel output.
    pub fn noise_photons(&self) -> f64 {
        self.transmittance() * self.xi / 2.0
    }
}

/// Expected first and second heterodyne moments for one signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentTargets {
    pub f_q: f64,
    pub f_p: f64,
    pub s_q: f64,
    pub s_p: f64,
}

/// Per-signal expected moments of the trusted detector outcomes.
pub fn expected_moments(
    constellation: &Constellation,
    channel: &ChannelModel,
    det: &DetectorModel,
) -> Vec<MomentTargets> {
    let t = channel.transmittance();
    let eta = det.eta();
    let noise = 1.0 + 0.5 * eta * t * channel.xi + det.v_el();
    constellation
        .states()
        .iter()
        .map(|st| {
            let mu = st.amplitude * c64::new((eta * t).sqrt(), 0.0);
            MomentTargets {
                f_q: 2f64.sqrt() * mu.re,
                f_p: 2f64.sqrt() * mu.im,
                s_q: 2.0 * mu.re * mu.re + noise,
                s_p: 2.0 * mu.im * mu.im + noise,
            }
        })
        .collect()
}

/// The observable constraint set defining the feasible states.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    pub structure: BlockStructure,
    pub constraints: Vec<ConstraintMatrix>,
    pub rhs: Vec<f64>,
    /// Coefficients reproducing the identity from the rows (the reduced-
    /// state diagonal rows), needed by the dual-program certification.
    pub identity_combo: Vec<(usize, f64)>,
}

/// Builds the full constraint list: for every signal the four moment
/// rows `Tr[rho (|x><x| (x) F)] = p_x <F>_x`, then the reduced-state rows
/// fixing `Tr_B rho = rho_A`, then the unit-trace row (linearly dependent
/// on the diagonal rows; the solver's preprocessing removes it).
pub fn build_constraints(
    constellation: &Constellation,
    channel: &ChannelModel,
    det: &DetectorModel,
    moments: &MomentObservables,
) -> ConstraintSet {
    let n = constellation.len();
    let b = moments.f_q.dim();
    let structure = BlockStructure::new(n, b);
    let targets = expected_moments(constellation, channel, det);
    let probs = constellation.probabilities();
    let rho_a = constellation.rho_a();

    let mut constraints = Vec::with_capacity(4 * n + n * n + 1);
    let mut rhs = Vec::with_capacity(4 * n + n * n + 1);

    for x in 0..n {
        let obs = [
            (&moments.f_q, targets[x].f_q),
            (&moments.f_p, targets[x].f_p),
            (&moments.s_q, targets[x].s_q),
            (&moments.s_p, targets[x].s_p),
        ];
        for (op, val) in obs {
            constraints.push(ConstraintMatrix::new(vec![(
                x,
                x,
                Block::Dense(op.mat().clone()),
            )]));
            rhs.push(probs[x] * val);
        }
    }

    let mut identity_combo = Vec::with_capacity(n);
    for i in 0..n {
        identity_combo.push((constraints.len(), 1.0));
        constraints.push(ConstraintMatrix::new(vec![(
            i,
            i,
            Block::ScaledIdentity(c64::new(1.0, 0.0)),
        )]));
        rhs.push(rho_a.mat()[(i, i)].re);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let elem = rho_a.mat()[(i, j)];
            constraints.push(ConstraintMatrix::new(vec![(
                i,
                j,
                Block::ScaledIdentity(c64::new(1.0, 0.0)),
            )]));
            rhs.push(2.0 * elem.re);
            constraints.push(ConstraintMatrix::new(vec![(
                i,
                j,
                Block::ScaledIdentity(c64::new(0.0, 1.0)),
            )]));
            rhs.push(2.0 * elem.im);
        }
    }
    // unit trace
    constraints.push(ConstraintMatrix::new(
        (0..n)
            .map(|i| (i, i, Block::ScaledIdentity(c64::new(1.0, 0.0))))
            .collect(),
    ));
    rhs.push(1.0);

    ConstraintSet { structure, constraints, rhs, identity_combo }
}

/// Outcome density `P(y|x)` of the trusted heterodyne measurement.
pub fn conditional_density(
    y: c64,
    x: usize,
    constellation: &Constellation,
    channel: &ChannelModel,
    det: &DetectorModel,
) -> f64 {
    let t = channel.transmittance();
    let mu = constellation.states()[x].amplitude * c64::new((det.eta() * t).sqrt(), 0.0);
    let sigma2 = 1.0 + 0.5 * det.eta() * t * channel.xi + det.v_el();
    (-(y - mu).norm_sqr() / sigma2).exp() / (PI * sigma2)
}

/// Discretized outcome distribution: `key[(x, z)] = P(z|x)` over key
/// regions plus the per-signal discard probability.
#[derive(Debug, Clone)]
pub struct DiscretizedDistribution {
    pub key: Array2<f64>,
    pub discard: Array1<f64>,
}

impl DiscretizedDistribution {
    pub fn num_signals(&self) -> usize {
        self.key.nrows()
    }

    pub fn num_outcomes(&self) -> usize {
        self.key.ncols()
    }
}

/// `int_rlo^rhi r exp(-(r-b)^2/sigma2) dr` in closed form.
fn radial_gaussian_integral(b: f64, sigma2: f64, r_lo: f64, r_hi: f64) -> f64 {
    let s = sigma2.sqrt();
    let lo = (r_lo - b) / s;
    let (e_hi, erf_hi) = if r_hi.is_finite() {
        let hi = (r_hi - b) / s;
        ((-hi * hi).exp(), erf(hi))
    } else {
        (0.0, 1.0)
    };
    let e_lo = (-lo * lo).exp();
    0.5 * sigma2 * (e_lo - e_hi) + b * s * PI.sqrt() / 2.0 * (erf_hi - erf(lo))
}

/// Integrates the outcome Gaussian over every key region analytically in
/// the radius and with Gauss-Legendre quadrature in the angle.
pub fn discretized_distribution(
    constellation: &Constellation,
    partition: &RegionPartition,
    channel: &ChannelModel,
    det: &DetectorModel,
) -> DiscretizedDistribution {
    let t = channel.transmittance();
    let sigma2 = 1.0 + 0.5 * det.eta() * t * channel.xi + det.v_el();
    let scale = (det.eta() * t).sqrt();
    let regions = partition.regions();
    let n = constellation.len();
    let nz = regions.len();
    let mut key = Array2::zeros((n, nz));
    let mut discard = Array1::zeros(n);

    let region_prob = |mu: c64, spec: &crate::constellation::RegionSpec| -> f64 {
        let (nodes, weights) = gauss_legendre_on(64, spec.theta_lo, spec.theta_hi);
        let mut acc = 0.0;
        for (theta, w) in nodes.iter().zip(weights.iter()) {
            let b = mu.re * theta.cos() + mu.im * theta.sin();
            let env = (-(mu.norm_sqr() - b * b) / sigma2).exp();
            acc += w * env * radial_gaussian_integral(b, sigma2, spec.r_lo, spec.r_hi);
        }
        acc / (PI * sigma2)
    };

    for (x, st) in constellation.states().iter().enumerate() {
        let mu = st.amplitude * c64::new(scale, 0.0);
        for (z, spec) in regions.iter().enumerate() {
            key[(x, z)] = region_prob(mu, spec);
        }
        if let Some(d) = partition.discard_region() {
            discard[x] = region_prob(mu, &d);
        }
    }
    DiscretizedDistribution { key, discard }
}

/// Probability that an outcome survives postselection.
pub fn sifting_probability(dist: &DiscretizedDistribution, probs: &[f64]) -> f64 {
    probs
        .iter()
        .enumerate()
        .map(|(x, p)| p * dist.key.row(x).sum())
        .sum()
}

fn h_term(p: f64) -> f64 {
    if p > 0.0 {
        -p * p.log2()
    } else {
        0.0
    }
}

/// Error-correction leakage per retained symbol:
/// `delta_EC = (1 - beta) H(Z) + beta H(Z|X)`, both entropies computed on
/// the distribution conditioned on passing postselection.
pub fn ec_leakage(dist: &DiscretizedDistribution, probs: &[f64], beta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidArgument(format!(
            "reconciliation efficiency must be in [0, 1], got {beta}"
        )));
    }
    let p_pass = sifting_probability(dist, probs);
    if p_pass <= 0.0 {
        return Err(Error::InvalidArgument(
            "postselection removes all outcomes".into(),
        ));
    }
    let nz = dist.num_outcomes();
    let mut pz = vec![0.0; nz];
    let mut h_joint = 0.0;
    let mut h_x = 0.0;
    for (x, p) in probs.iter().enumerate() {
        let mut px_pass = 0.0;
        for z in 0..nz {
            let joint = p * dist.key[(x, z)] / p_pass;
            pz[z] += joint;
            h_joint += h_term(joint);
            px_pass += joint;
        }
        h_x += h_term(px_pass);
    }
    let h_z: f64 = pz.iter().map(|p| h_term(*p)).sum();
    let h_z_given_x = h_joint - h_x;
    Ok((1.0 - beta) * h_z + beta * h_z_given_x)
}

/// Simulated joint state of Alice's register and the channel output:
/// the loss channel acts on coherent-state dyads in closed form,
/// `E_T(|a><a'|) = <a'|a>^{1-T} |sqrt(T) a><sqrt(T) a'|`, and the excess
/// noise is a Gaussian displacement average (two-dimensional
/// Gauss-Hermite, exact for the first and second moments). Built on the
/// padded space and truncated.
pub fn simulated_state(
    constellation: &Constellation,
    channel: &ChannelModel,
    cutoff: &FockCutoff,
) -> Result<DensityOperator> {
    let n = constellation.len();
    let b = cutoff.dim();
    let pad = cutoff.pad_dim();
    let t = channel.transmittance();
    let sqrt_t = t.sqrt();
    let probs = constellation.probabilities();
    let amps = constellation.amplitudes();

    let kept: Vec<Array1<c64>> = amps
        .iter()
        .map(|a| coherent_vector_padded(a * c64::new(sqrt_t, 0.0), pad))
        .collect();

    // Gauss-Hermite smearing of the excess noise
    let n_ch = channel.noise_photons();
    let smear: Vec<(f64, Array2<c64>)> = if n_ch > 0.0 {
        let (nodes, weights) = crate::quad::gauss_hermite(6);
        // gamma = sqrt(n_ch) (u + i v) with u, v standard-normal halves:
        // each real component has variance n_ch / 2
        let s = (n_ch / 2.0).sqrt() * 2f64.sqrt();
        let mut out = Vec::with_capacity(36);
        let norm: f64 = weights.iter().sum::<f64>().powi(2);
        for (u, wu) in nodes.iter().zip(weights.iter()) {
            for (v, wv) in nodes.iter().zip(weights.iter()) {
                let gamma = c64::new(s * u, s * v);
                out.push((wu * wv / norm, displacement(gamma, pad)));
            }
        }
        out
    } else {
        Vec::new()
    };

    let mut rho = Array2::<c64>::zeros((n * b, n * b));
    for i in 0..n {
        for j in i..n {
            // <a_j|a_i>^{1-T} from the explicit overlap exponent
            let ai = amps[i];
            let aj = amps[j];
            let exponent = (1.0 - t)
                * (c64::new(-0.5 * (ai.norm_sqr() + aj.norm_sqr()), 0.0) + aj.conj() * ai);
            let factor = exponent.exp() * c64::new((probs[i] * probs[j]).sqrt(), 0.0);
            let dyad = {
                let vi = kept[i].clone().insert_axis(ndarray::Axis(1));
                let vj = kept[j].mapv(|z| z.conj()).insert_axis(ndarray::Axis(0));
                vi.dot(&vj)
            };
            let smeared = if smear.is_empty() {
                dyad
            } else {
                let mut acc = Array2::<c64>::zeros((pad, pad));
                for (w, d) in &smear {
                    let m = d.dot(&dyad).dot(&conj_transpose(&d.view()));
                    acc = &acc + &m.mapv(|z| z * c64::new(*w, 0.0));
                }
                acc
            };
            let blk = smeared.slice(s![..b, ..b]).mapv(|z| z * factor);
            rho.slice_mut(s![i * b..(i + 1) * b, j * b..(j + 1) * b])
                .assign(&blk);
            if i != j {
                let adj = conj_transpose(&blk.view());
                rho.slice_mut(s![j * b..(j + 1) * b, i * b..(i + 1) * b])
                    .assign(&adj);
            }
        }
    }
    hermitize(&mut rho);
    Ok(DensityOperator::from_unchecked(rho))
}

/// Mean photon number reaching Bob's detector input for the brightest
/// signal — the quantity the default-cutoff rule consumes.
pub fn bob_mean_photons(constellation: &Constellation, channel: &ChannelModel) -> f64 {
    let t = channel.transmittance();
    t * constellation.max_amplitude().powi(2) + channel.noise_photons()
}

/// Independent brute-force reference implementations for the
/// verification suite. They share nothing with the production
/// polar/closed-form integration path.
#[doc(hidden)]
pub mod oracle {
    use super::*;
    use crate::constellation::KeyOutcome;

    /// Scalar adaptive Simpson with an absolute error floor, so that the
    /// square-root kinks the slice integrals develop at circle tangencies
    /// terminate instead of chasing a tolerance that halves forever.
    #[allow(clippy::too_many_arguments)]
    fn adaptive_scalar(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: usize,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let flm = f(0.5 * (a + m));
        let frm = f(0.5 * (m + b));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let err = (left + right - whole).abs() / 15.0;
        if err <= tol.max(5e-14) || depth == 0 {
            return left + right + (left + right - whole) / 15.0;
        }
        adaptive_scalar(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + adaptive_scalar(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }

    fn integrate_scalar(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        adaptive_scalar(f, a, b, fa, fm, fb, whole, tol, 48)
    }

    /// Cartesian iterated-integration oracle. Region membership comes
    /// only from the key map: each vertical slice of the target region is
    /// decomposed into exact intervals by a scan plus bisection on the
    /// classification, then both directions are integrated adaptively.
    pub fn brute_force_region_prob(
        part: &RegionPartition,
        target: i64, // key index, or -1 for discard
        dens: &dyn Fn(c64) -> f64,
        half: f64,
    ) -> f64 {
        let classify = |re: f64, im: f64| -> i64 {
            match part.key_map(c64::new(re, im)) {
                KeyOutcome::Key(z) => z as i64,
                KeyOutcome::Discard => -1,
            }
        };
        let inner = |x: f64| -> f64 {
            let n_scan = 1600usize;
            let step = 2.0 * half / n_scan as f64;
            let mut bounds = vec![-half];
            let mut prev = classify(x, -half);
            let mut classes = vec![prev];
            for k in 1..=n_scan {
                let y = -half + k as f64 * step;
                let cur = classify(x, y);
                if cur != prev {
                    let (mut lo, mut hi) = (y - step, y);
                    for _ in 0..60 {
                        let mid = 0.5 * (lo + hi);
                        if classify(x, mid) == prev {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    bounds.push(0.5 * (lo + hi));
                    classes.push(cur);
                    prev = cur;
                }
            }
            bounds.push(half);
            let mut acc = 0.0;
            for (seg, cls) in classes.iter().enumerate() {
                if *cls == target {
                    let f = |y: f64| dens(c64::new(x, y));
                    acc += integrate_scalar(&f, bounds[seg], bounds[seg + 1], 1e-13);
                }
            }
            acc
        };
        // split the outer integral at every x where the slice topology can
        // change: circle extremes, the origin, and the abscissas where the
        // sector rays meet the circles (kinks of the inner integral)
        let mut cuts = vec![-half, 0.0, half];
        let a0 = part.alpha0();
        let (n_sectors, circles): (usize, Vec<f64>) = match part.kind() {
            crate::constellation::PartitionKind::PskSectors(n) => (n, vec![a0]),
            crate::constellation::PartitionKind::TwoRing { alpha_c } => {
                (12, vec![a0, alpha_c])
            }
        };
        for r in circles {
            if r <= 0.0 {
                continue;
            }
            cuts.extend([r, -r]);
            for j in 0..n_sectors {
                let theta = (2.0 * j as f64 - 1.0) * PI / n_sectors as f64;
                let x = r * theta.cos();
                if x.abs() < half {
                    cuts.push(x);
                }
            }
        }
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        let mut total = 0.0;
        for w in cuts.windows(2) {
            total += integrate_scalar(&inner, w[0], w[1], 1e-9);
        }
        total
    }
}
