//! Bob-side operators on the truncated Fock space: the trusted
//! noisy-heterodyne POVM density, first/second-moment observables, and
//! key-map region operators.
//!
//! Everything is constructed on a padded space of dimension `n_pad + 1`
//! and truncated to `n_c + 1` afterwards, so products and exponentials do
//! not leak truncation error into the retained block. The detector model
//! is `G_y = (1/(pi eta)) D(y/sqrt(eta)) rho_th(nbar) D^dag(y/sqrt(eta))`
//! with `nbar = (1 - eta + v_el)/eta`, which reproduces the simulated
//! first and second moments of the trusted-noise scenario.

use ndarray::{s, Array1, Array2};
use ndarray_linalg::c64;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::{Arc, OnceLock, RwLock};

use crate::constellation::{RegionPartition, RegionSpec};
use crate::error::{Error, Result};
use crate::linalg::{conj_transpose, eigh, hermitize, identity, max_abs, HermitianOperator};
use crate::quad::adaptive_simpson_mat;

/// Photon-number cutoff: retained dimension `n_c + 1`, construction
/// dimension `n_pad + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FockCutoff {
    n_c: usize,
    n_pad: usize,
}

impl FockCutoff {
    /// Cutoff with the default padding `n_pad = n_c + 12`.
    pub fn new(n_c: usize) -> Result<Self> {
        Self::with_padding(n_c, n_c + 12)
    }

    pub fn with_padding(n_c: usize, n_pad: usize) -> Result<Self> {
        if n_c < 1 {
            return Err(Error::InvalidArgument("cutoff n_c must be >= 1".into()));
        }
        if n_pad < n_c + 8 {
            return Err(Error::InvalidArgument(format!(
                "padding n_pad = {n_pad} must be at least n_c + 8 = {}",
                n_c + 8
            )));
        }
        Ok(Self { n_c, n_pad })
    }

    pub fn n_c(&self) -> usize {
        self.n_c
    }

    pub fn n_pad(&self) -> usize {
        self.n_pad
    }

    /// Retained Hilbert dimension `n_c + 1`.
    pub fn dim(&self) -> usize {
        self.n_c + 1
    }

    /// Construction dimension `n_pad + 1`.
    pub fn pad_dim(&self) -> usize {
        self.n_pad + 1
    }
}

/// Trusted detector: efficiency `eta` and electronic noise `v_el` in
/// shot-noise units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorModel {
    eta: f64,
    v_el: f64,
}

impl DetectorModel {
    pub fn new(eta: f64, v_el: f64) -> Result<Self> {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "detection efficiency must be in (0, 1], got {eta}"
            )));
        }
        if v_el < 0.0 || !v_el.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "electronic noise must be nonnegative, got {v_el}"
            )));
        }
        Ok(Self { eta, v_el })
    }

    /// Noiseless unit-efficiency heterodyne.
    pub fn ideal() -> Self {
        Self { eta: 1.0, v_el: 0.0 }
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn v_el(&self) -> f64 {
        self.v_el
    }

    /// Mean thermal photon number of the equivalent POVM smearing.
    pub fn nbar(&self) -> f64 {
        (1.0 - self.eta + self.v_el) / self.eta
    }
}

/// `P[X > n]` for `X ~ Poisson(lambda)`, summed from the upper tail so
/// small values keep full relative accuracy.
pub fn poisson_tail(lambda: f64, n: usize) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    // term for k = n+1
    let mut log_term = -lambda + (n as f64 + 1.0) * lambda.ln() - ln_factorial(n + 1);
    let mut term = log_term.exp();
    if term == 0.0 {
        // recompute in log space to avoid underflow of the first term only
        log_term = log_term.max(-745.0);
        term = log_term.exp();
    }
    let mut sum = 0.0;
    let mut k = n + 1;
    loop {
        sum += term;
        k += 1;
        term *= lambda / k as f64;
        if term < sum * 1e-18 + 1e-320 {
            break;
        }
    }
    sum
}

fn ln_factorial(n: usize) -> f64 {
    statrs::function::gamma::ln_gamma(n as f64 + 1.0)
}

/// Default cutoff rule: smallest `n_c` whose Poisson tail for the largest
/// received mean photon number stays below 1e-6, clamped to `[10, 22]`.
pub fn default_cutoff(max_received_mean_photons: f64) -> FockCutoff {
    let lambda = max_received_mean_photons.max(0.0);
    let mut n_c = 10;
    while n_c < 22 && poisson_tail(lambda, n_c) >= 1e-6 {
        n_c += 1;
    }
    FockCutoff::new(n_c).expect("clamped cutoff is valid")
}

/// Annihilation operator `a` on a `dim`-dimensional truncation.
pub fn ladder(dim: usize) -> Array2<c64> {
    let mut a = Array2::zeros((dim, dim));
    for n in 1..dim {
        a[(n - 1, n)] = c64::new((n as f64).sqrt(), 0.0);
    }
    a
}

/// Truncated coherent state: components `e^{-|alpha|^2/2} alpha^n / sqrt(n!)`.
pub fn coherent_vector(alpha: c64, cutoff: &FockCutoff) -> Array1<c64> {
    coherent_vector_dim(alpha, cutoff.dim())
}

/// Truncated coherent state on an explicit dimension (for padded
/// constructions).
pub fn coherent_vector_padded(alpha: c64, dim: usize) -> Array1<c64> {
    coherent_vector_dim(alpha, dim)
}

fn coherent_vector_dim(alpha: c64, dim: usize) -> Array1<c64> {
    let mut v = Array1::zeros(dim);
    let mut c = c64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
    v[0] = c;
    for n in 1..dim {
        c *= alpha / c64::new((n as f64).sqrt(), 0.0);
        v[n] = c;
    }
    v
}

/// Norm deficiency of the truncated coherent state (the Poisson tail).
pub fn coherent_truncation_tail(alpha: c64, n_c: usize) -> f64 {
    poisson_tail(alpha.norm_sqr(), n_c)
}

/// Displacement operator `D(beta) = exp(beta a^dag - conj(beta) a)` by
/// exponentiating the truncated generator.
pub fn displacement(beta: c64, dim: usize) -> Array2<c64> {
    // H = -i (beta a^dag - conj(beta) a) is Hermitian; D = exp(iH)
    let mut h = Array2::<c64>::zeros((dim, dim));
    let mi = c64::new(0.0, -1.0);
    for n in 1..dim {
        let amp = (n as f64).sqrt();
        h[(n, n - 1)] = mi * beta * amp;
        h[(n - 1, n)] = (mi * beta * amp).conj();
    }
    let (vals, vecs) = eigh(&h).expect("eigendecomposition of displacement generator");
    let phases = vals.mapv(|l| c64::from_polar(1.0, l));
    let scaled = &vecs * &phases.insert_axis(ndarray::Axis(0));
    scaled.dot(&conj_transpose(&vecs.view()))
}

/// Diagonal of the thermal state with mean photon number `nbar`.
pub fn thermal_diag(nbar: f64, dim: usize) -> Array1<f64> {
    let mut d = Array1::zeros(dim);
    if nbar <= 0.0 {
        d[0] = 1.0;
        return d;
    }
    let ratio = nbar / (nbar + 1.0);
    let mut p = 1.0 / (nbar + 1.0);
    for n in 0..dim {
        d[n] = p;
        p *= ratio;
    }
    d
}

/// POVM evaluator built on the exact matrix elements of a displaced
/// thermal state,
/// `<m| D(beta) rho_th D^dag(beta) |n> =
///   E sqrt(m! n!) sum_j c^j b^{m-j} conj(b)^{n-j} / (j! (m-j)! (n-j)!)`
/// with `b = beta/(nbar+1)`, `c = nbar/(nbar+1)`,
/// `E = e^{-|beta|^2/(nbar+1)}/(nbar+1)` (from the Gaussian generating
/// function of the P representation). All terms share a sign for real
/// `beta`, so the sum is stable at any radius — unlike exponentiating the
/// truncated displacement generator, which breaks down once
/// `|beta|^2` exceeds the padding.
struct RadialPovm {
    nbar: f64,
    eta: f64,
    dim: usize,
    /// `sqrt(m! n!)` table.
    sqrt_fact: Vec<f64>,
}

impl RadialPovm {
    fn new(det: &DetectorModel, cutoff: &FockCutoff) -> Self {
        let dim = cutoff.dim();
        let sqrt_fact = (0..dim).map(|n| (0.5 * ln_factorial(n)).exp()).collect();
        RadialPovm {
            nbar: det.nbar(),
            eta: det.eta(),
            dim,
            sqrt_fact,
        }
    }

    /// `G_y` entries for `y = r >= 0` on the positive real axis.
    fn eval(&self, r: f64) -> Array2<c64> {
        let beta = r / self.eta.sqrt();
        let b = beta / (self.nbar + 1.0);
        let c = self.nbar / (self.nbar + 1.0);
        let envelope = (-beta * beta / (self.nbar + 1.0)).exp() / ((self.nbar + 1.0) * PI * self.eta);
        let dim = self.dim;
        // pow_b[k] = b^k / k!
        let mut pow_b = vec![0.0; dim];
        pow_b[0] = 1.0;
        for k in 1..dim {
            pow_b[k] = pow_b[k - 1] * b / k as f64;
        }
        let mut out = Array2::zeros((dim, dim));
        for m in 0..dim {
            for n in 0..=m {
                let mut sum = 0.0;
                let mut cj = 1.0; // c^j / j!
                for j in 0..=n.min(m) {
                    sum += cj * pow_b[m - j] * pow_b[n - j];
                    cj *= c / (j + 1) as f64;
                }
                let v = envelope * self.sqrt_fact[m] * self.sqrt_fact[n] * sum;
                out[(m, n)] = c64::new(v, 0.0);
                out[(n, m)] = c64::new(v, 0.0);
            }
        }
        out
    }
}

/// POVM density `G_y` on the retained space, from the exact
/// displaced-thermal matrix elements. PSD by construction.
pub fn povm_density(y: c64, det: &DetectorModel, cutoff: &FockCutoff) -> HermitianOperator {
    let dim = cutoff.dim();
    let nbar = det.nbar();
    let beta = y / c64::new(det.eta().sqrt(), 0.0);
    let b = beta / c64::new(nbar + 1.0, 0.0);
    let c = nbar / (nbar + 1.0);
    let envelope = (-beta.norm_sqr() / (nbar + 1.0)).exp() / ((nbar + 1.0) * PI * det.eta());
    let mut pow_b = vec![c64::new(1.0, 0.0); dim];
    for k in 1..dim {
        pow_b[k] = pow_b[k - 1] * b / c64::new(k as f64, 0.0);
    }
    let sqrt_fact: Vec<f64> = (0..dim).map(|n| (0.5 * ln_factorial(n)).exp()).collect();
    let mut m_out = Array2::zeros((dim, dim));
    for m in 0..dim {
        for n in 0..=m {
            let mut sum = c64::new(0.0, 0.0);
            let mut cj = 1.0; // c^j / j!
            for j in 0..=n {
                sum += pow_b[m - j] * pow_b[n - j].conj() * cj;
                cj *= c / (j + 1) as f64;
            }
            let v = sum * c64::new(envelope * sqrt_fact[m] * sqrt_fact[n], 0.0);
            m_out[(m, n)] = v;
            m_out[(n, m)] = v.conj();
        }
    }
    HermitianOperator::from_unchecked(m_out)
}

/// First- and second-moment observables of the trusted detector.
#[derive(Debug, Clone)]
pub struct MomentObservables {
    pub f_q: HermitianOperator,
    pub f_p: HermitianOperator,
    pub s_q: HermitianOperator,
    pub s_p: HermitianOperator,
}

/// Builds `F_Q, F_P, S_Q, S_P` from the closed relations
/// `F_Q = sqrt(eta) (a + a^dag)/sqrt(2)`,
/// `S_Q = eta S_Q^ideal + (1 - eta + v_el) I`, etc., on the padded space.
pub fn moment_observables(det: &DetectorModel, cutoff: &FockCutoff) -> MomentObservables {
    let pad = cutoff.pad_dim();
    let b = cutoff.dim();
    let a = ladder(pad);
    let adag = conj_transpose(&a.view());
    let sqrt_eta = c64::new(det.eta().sqrt(), 0.0);
    let inv_sqrt2 = c64::new(1.0 / 2.0_f64.sqrt(), 0.0);
    let i = c64::new(0.0, 1.0);

    let f_q = (&a + &adag).mapv(|z| z * sqrt_eta * inv_sqrt2);
    let f_p = (&adag - &a).mapv(|z| z * i * sqrt_eta * inv_sqrt2);

    let a2 = a.dot(&a);
    let adag2 = adag.dot(&adag);
    let n_op = adag.dot(&a);
    let two_i = identity(pad).mapv(|z| z * c64::new(2.0, 0.0));
    let s_q_ideal = (&(&a2 + &adag2) + &(&n_op.mapv(|z| z * c64::new(2.0, 0.0)) + &two_i))
        .mapv(|z| z * c64::new(0.5, 0.0));
    let s_p_ideal = (&(&n_op.mapv(|z| z * c64::new(2.0, 0.0)) + &two_i) - &(&a2 + &adag2))
        .mapv(|z| z * c64::new(0.5, 0.0));
    let shift = c64::new(1.0 - det.eta() + det.v_el(), 0.0);
    let eta_c = c64::new(det.eta(), 0.0);
    let s_q = &s_q_ideal.mapv(|z| z * eta_c) + &identity(pad).mapv(|z| z * shift);
    let s_p = &s_p_ideal.mapv(|z| z * eta_c) + &identity(pad).mapv(|z| z * shift);

    let cut = |m: &Array2<c64>| {
        let mut t = m.slice(s![..b, ..b]).to_owned();
        hermitize(&mut t);
        HermitianOperator::from_unchecked(t)
    };
    MomentObservables {
        f_q: cut(&f_q),
        f_p: cut(&f_p),
        s_q: cut(&s_q),
        s_p: cut(&s_p),
    }
}

/// Region operators for one key-map partition, plus the discard operator
/// when a postselection disc is present.
#[derive(Debug, Clone)]
pub struct RegionOperatorSet {
    pub regions: Vec<HermitianOperator>,
    pub discard: Option<HermitianOperator>,
    /// Magnitude estimate of the neglected radial tail beyond `r_max`.
    pub radial_tail_bound: f64,
    pub r_max: f64,
}

/// Analytic angular factor `int_{lo}^{hi} e^{i k theta} d theta`.
fn angular_factor(k: i64, lo: f64, hi: f64) -> c64 {
    if k == 0 {
        c64::new(hi - lo, 0.0)
    } else {
        let ik = c64::new(0.0, k as f64);
        (c64::from_polar(1.0, k as f64 * hi) - c64::from_polar(1.0, k as f64 * lo)) / ik
    }
}

/// `R_j = int_{R_j} G_y d^2 y`, exploiting phase covariance:
/// `<m|R_j|n> = [int e^{i theta (m-n)} d theta] . [int g_mn(r) r dr]`.
pub fn region_operators(
    partition: &RegionPartition,
    det: &DetectorModel,
    cutoff: &FockCutoff,
) -> Result<RegionOperatorSet> {
    let b = cutoff.dim();
    let povm = RadialPovm::new(det, cutoff);
    let r_max = radial_cutoff(det, cutoff);

    let mut specs: Vec<RegionSpec> = partition.regions();
    let discard_spec = partition.discard_region();
    if let Some(d) = discard_spec {
        specs.push(d);
    }

    // one radial integral per distinct band
    let mut bands: Vec<(f64, f64)> = specs.iter().map(|s| (s.r_lo, s.r_hi)).collect();
    bands.sort_by(|a, b| a.partial_cmp(b).expect("finite radial bounds"));
    bands.dedup();
    let mut band_integrals: HashMap<(u64, u64), Array2<c64>> = HashMap::new();
    for &(lo, hi) in &bands {
        let hi_eff = hi.min(r_max);
        let mat = if hi_eff <= lo {
            Array2::zeros((b, b))
        } else {
            let mut f = |r: f64| povm.eval(r).mapv(|z| z * c64::new(r, 0.0));
            adaptive_simpson_mat(&mut f, lo, hi_eff, 1e-10, 40)?
        };
        band_integrals.insert((lo.to_bits(), hi.to_bits()), mat);
    }

    let assemble = |spec: &RegionSpec| -> HermitianOperator {
        let radial = &band_integrals[&(spec.r_lo.to_bits(), spec.r_hi.to_bits())];
        let mut m = Array2::<c64>::zeros((b, b));
        for i in 0..b {
            for j in 0..b {
                let k = i as i64 - j as i64;
                m[(i, j)] = angular_factor(k, spec.theta_lo, spec.theta_hi) * radial[(i, j)];
            }
        }
        hermitize(&mut m);
        HermitianOperator::from_unchecked(m)
    };

    let n_regions = partition.num_regions();
    let regions: Vec<HermitianOperator> = specs[..n_regions].iter().map(assemble).collect();
    let discard = discard_spec.map(|d| assemble(&d));

    let tail = max_abs(&povm.eval(r_max).view()) * r_max * 2.0 * PI;
    Ok(RegionOperatorSet {
        regions,
        discard,
        radial_tail_bound: tail,
        r_max,
    })
}

/// Default radial truncation for region integrals.
fn radial_cutoff(det: &DetectorModel, cutoff: &FockCutoff) -> f64 {
    (cutoff.n_pad() as f64).sqrt() * 1.5 + 5.0 * ((det.nbar() + 1.0) / 2.0).sqrt()
}

/// All Bob-side operators for one partition/detector/cutoff triple.
#[derive(Debug)]
pub struct BobOperators {
    pub moments: MomentObservables,
    pub regions: RegionOperatorSet,
    pub det: DetectorModel,
    pub cutoff: FockCutoff,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct CacheKey {
    partition_kind: u8,
    sectors: usize,
    alpha_c_bits: u64,
    alpha0_bits: u64,
    eta_bits: u64,
    v_el_bits: u64,
    n_c: usize,
    n_pad: usize,
}

fn cache_key(partition: &RegionPartition, det: &DetectorModel, cutoff: &FockCutoff) -> CacheKey {
    use crate::constellation::PartitionKind;
    let (kind, sectors, alpha_c) = match partition.kind() {
        PartitionKind::PskSectors(n) => (0u8, n, 0.0),
        PartitionKind::TwoRing { alpha_c } => (1u8, 12, alpha_c),
    };
    CacheKey {
        partition_kind: kind,
        sectors,
        alpha_c_bits: alpha_c.to_bits(),
        alpha0_bits: partition.alpha0().to_bits(),
        eta_bits: det.eta().to_bits(),
        v_el_bits: det.v_el().to_bits(),
        n_c: cutoff.n_c(),
        n_pad: cutoff.n_pad(),
    }
}

type CacheCell = Arc<OnceLock<std::result::Result<Arc<BobOperators>, String>>>;
static OPERATOR_CACHE: OnceLock<RwLock<HashMap<CacheKey, CacheCell>>> = OnceLock::new();

/// Cached operator construction: at most one build per key; concurrent
/// readers share the result.
pub fn cached_bob_operators(
    partition: &RegionPartition,
    det: &DetectorModel,
    cutoff: &FockCutoff,
) -> Result<Arc<BobOperators>> {
    let key = cache_key(partition, det, cutoff);
    let cache = OPERATOR_CACHE.get_or_init(|| RwLock::new(HashMap::new()));
    let cell = {
        let read = cache.read().expect("operator cache poisoned");
        read.get(&key).cloned()
    };
    let cell = match cell {
        Some(c) => c,
        None => {
            let mut write = cache.write().expect("operator cache poisoned");
            write.entry(key).or_insert_with(|| Arc::new(OnceLock::new())).clone()
        }
    };
    let built = cell.get_or_init(|| {
        build_bob_operators(partition, det, cutoff)
            .map(Arc::new)
            .map_err(|e| e.to_string())
    });
    match built {
        Ok(ops) => Ok(ops.clone()),
        Err(msg) => Err(Error::NumericalFailure(msg.clone())),
    }
}

fn build_bob_operators(
    partition: &RegionPartition,
    det: &DetectorModel,
    cutoff: &FockCutoff,
) -> Result<BobOperators> {
    Ok(BobOperators {
        moments: moment_observables(det, cutoff),
        regions: region_operators(partition, det, cutoff)?,
        det: *det,
        cutoff: *cutoff,
    })
}

const DUMP_MAGIC: &[u8; 4] = b"DMCV";

/// Writes an operator set as a flat little-endian array of complex
/// doubles, row-major, preceded by a 16-byte header (magic, dim, count).
pub fn dump_operators<W: Write>(mut w: W, ops: &[HermitianOperator]) -> Result<()> {
    let dim = match ops.first() {
        Some(op) => op.dim(),
        None => 0,
    };
    if ops.iter().any(|op| op.dim() != dim) {
        return Err(Error::InvalidArgument(
            "operator dump requires uniform dimensions".into(),
        ));
    }
    w.write_all(DUMP_MAGIC)?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    w.write_all(&(ops.len() as u32).to_le_bytes())?;
    w.write_all(&0u32.to_le_bytes())?;
    for op in ops {
        for z in op.mat().iter() {
            w.write_all(&z.re.to_le_bytes())?;
            w.write_all(&z.im.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a dump produced by [`dump_operators`].
pub fn read_operator_dump<R: Read>(mut r: R) -> Result<Vec<Array2<c64>>> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if &header[0..4] != DUMP_MAGIC {
        return Err(Error::InvalidArgument("bad operator dump magic".into()));
    }
    let dim = u32::from_le_bytes(header[4..8].try_into().expect("header slice")) as usize;
    let count = u32::from_le_bytes(header[8..12].try_into().expect("header slice")) as usize;
    let mut out = Vec::with_capacity(count);
    let mut buf = vec![0u8; dim * dim * 16];
    for _ in 0..count {
        r.read_exact(&mut buf)?;
        let mut m = Array2::zeros((dim, dim));
        for (idx, chunk) in buf.chunks_exact(16).enumerate() {
            let re = f64::from_le_bytes(chunk[0..8].try_into().expect("chunk"));
            let im = f64::from_le_bytes(chunk[8..16].try_into().expect("chunk"));
            m[(idx / dim, idx % dim)] = c64::new(re, im);
        }
        out.push(m);
    }
    Ok(out)
}
