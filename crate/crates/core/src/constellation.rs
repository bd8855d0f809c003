//! Signal constellations, key-map region partitions, and Alice's reduced
//! state `rho_A`.
//!
//! Supported geometries are the single-ring n-PSK layouts (n = 4, 8, 12)
//! and the two-ring 12-state layout with four inner and eight outer states.

use ndarray::Array2;
use ndarray_linalg::c64;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{hermitize, DensityOperator};

/// One coherent signal state with its selection probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalState {
    /// Dimensionless coherent amplitude `alpha_x`.
    pub amplitude: c64,
    /// Selection probability, in (0, 1].
    pub probability: f64,
    /// Contiguous index starting at 0.
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Geometry {
    /// Single ring of `n` equally likely, equally spaced states.
    Psk(usize),
    /// Four inner states (amplitude `alpha1`) and eight outer states
    /// (amplitude `alpha2`); `p1 + 2 p2 = 1/4`.
    TwoRing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    states: Vec<SignalState>,
    geometry: Geometry,
}

impl Constellation {
    pub fn states(&self) -> &[SignalState] {
        &self.states
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.probability).collect()
    }

    pub fn amplitudes(&self) -> Vec<c64> {
        self.states.iter().map(|s| s.amplitude).collect()
    }

    /// Largest `|alpha_x|` in the constellation.
    pub fn max_amplitude(&self) -> f64 {
        self.states
            .iter()
            .map(|s| s.amplitude.norm())
            .fold(0.0, f64::max)
    }

    /// Alice's reduced state: entries `sqrt(p_i p_j) <alpha_j | alpha_i>`.
    pub fn rho_a(&self) -> DensityOperator {
        let n = self.states.len();
        let mut m = Array2::<c64>::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                let si = &self.states[i];
                let sj = &self.states[j];
                m[(i, j)] = (si.probability * sj.probability).sqrt()
                    * coherent_overlap(sj.amplitude, si.amplitude);
            }
        }
        hermitize(&mut m);
        DensityOperator::from_unchecked(m)
    }
}

/// `<beta | alpha> = exp(-(|alpha|^2 + |beta|^2)/2 + conj(beta) alpha)`.
pub fn coherent_overlap(beta: c64, alpha: c64) -> c64 {
    let exponent = -0.5 * (alpha.norm_sqr() + beta.norm_sqr()) + (beta.conj() * alpha).re;
    let phase = (beta.conj() * alpha).im;
    c64::from_polar(exponent.exp(), phase)
}

/// Single-ring PSK: `n` states at phases `x * 2 pi / n`, each with
/// probability `1/n`.
pub fn build_psk(n: usize, amplitude: f64) -> Result<Constellation> {
    if !matches!(n, 4 | 8 | 12) {
        return Err(Error::InvalidArgument(format!(
            "unsupported PSK order {n}; expected 4, 8, or 12"
        )));
    }
    if amplitude <= 0.0 || !amplitude.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "PSK amplitude must be positive, got {amplitude}"
        )));
    }
    let states = (0..n)
        .map(|x| SignalState {
            amplitude: c64::from_polar(amplitude, x as f64 * 2.0 * PI / n as f64),
            probability: 1.0 / n as f64,
            label: x,
        })
        .collect();
    Ok(Constellation {
        states,
        geometry: Geometry::Psk(n),
    })
}

/// Two-ring layout: inner states `x in {0..3}` at phases `x pi / 2` with
/// amplitude `alpha1` and probability `p1`; outer states `x in {4..11}` at
/// phases `(x - 4) pi / 4` with amplitude `alpha2` and probability
/// `p2 = (1/4 - p1) / 2`.
pub fn build_two_ring(alpha1: f64, alpha2: f64, p1: f64) -> Result<Constellation> {
    if !(alpha1 > 0.0 && alpha2 > 0.0 && alpha1.is_finite() && alpha2.is_finite()) {
        return Err(Error::InvalidArgument(
            "two-ring amplitudes must be positive".into(),
        ));
    }
    if alpha1 >= alpha2 {
        return Err(Error::InvalidArgument(format!(
            "two-ring requires alpha1 < alpha2, got {alpha1} >= {alpha2}"
        )));
    }
    if !(p1 > 0.0 && p1 < 0.25) {
        return Err(Error::InvalidArgument(format!(
            "two-ring requires 0 < p1 < 1/4 so that p2 > 0, got {p1}"
        )));
    }
    let p2 = (0.25 - p1) / 2.0;
    let mut states = Vec::with_capacity(12);
    for x in 0..4 {
        states.push(SignalState {
            amplitude: c64::from_polar(alpha1, x as f64 * PI / 2.0),
            probability: p1,
            label: x,
        });
    }
    for x in 4..12 {
        states.push(SignalState {
            amplitude: c64::from_polar(alpha2, (x as f64 - 4.0) * PI / 4.0),
            probability: p2,
            label: x,
        });
    }
    Ok(Constellation {
        states,
        geometry: Geometry::TwoRing,
    })
}

/// One key-map region in polar coordinates: half-open angular and radial
/// intervals. Angles are taken modulo `2 pi`; `theta_hi` may exceed `pi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionSpec {
    pub theta_lo: f64,
    pub theta_hi: f64,
    pub r_lo: f64,
    /// `f64::INFINITY` for unbounded regions.
    pub r_hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PartitionKind {
    /// `n` angular sectors of width `2 pi / n` centered on the state phases.
    PskSectors(usize),
    /// Four inner sectors below `alpha_c`, eight outer sectors above.
    TwoRing { alpha_c: f64 },
}

/// Outcome of the key map for one heterodyne result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyOutcome {
    Key(usize),
    Discard,
}

/// Partition of the outcome plane into key regions plus an optional
/// central discard disc of radius `alpha0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionPartition {
    kind: PartitionKind,
    alpha0: f64,
}

impl RegionPartition {
    pub fn psk_sectors(n: usize, alpha0: f64) -> Result<Self> {
        if !matches!(n, 4 | 8 | 12) {
            return Err(Error::InvalidArgument(format!(
                "unsupported sector count {n}"
            )));
        }
        if alpha0 < 0.0 || !alpha0.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "postselection radius must be finite and nonnegative, got {alpha0}"
            )));
        }
        Ok(Self {
            kind: PartitionKind::PskSectors(n),
            alpha0,
        })
    }

    pub fn two_ring(alpha_c: f64, alpha0: f64) -> Result<Self> {
        if !(alpha_c > 0.0 && alpha_c.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "ring boundary alpha_c must be positive, got {alpha_c}"
            )));
        }
        if alpha0 < 0.0 || alpha0 >= alpha_c {
            return Err(Error::InvalidArgument(format!(
                "postselection radius must satisfy 0 <= alpha0 < alpha_c, got {alpha0}"
            )));
        }
        Ok(Self {
            kind: PartitionKind::TwoRing { alpha_c },
            alpha0,
        })
    }

    pub fn kind(&self) -> PartitionKind {
        self.kind
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }

    pub fn has_discard(&self) -> bool {
        self.alpha0 > 0.0
    }

    /// Number of key regions (excluding the discard disc).
    pub fn num_regions(&self) -> usize {
        match self.kind {
            PartitionKind::PskSectors(n) => n,
            PartitionKind::TwoRing { .. } => 12,
        }
    }

    /// Region descriptors, index-aligned with the key values.
    pub fn regions(&self) -> Vec<RegionSpec> {
        match self.kind {
            PartitionKind::PskSectors(n) => {
                let half = PI / n as f64;
                (0..n)
                    .map(|j| {
                        let center = j as f64 * 2.0 * half;
                        RegionSpec {
                            theta_lo: center - half,
                            theta_hi: center + half,
                            r_lo: self.alpha0,
                            r_hi: f64::INFINITY,
                        }
                    })
                    .collect()
            }
            PartitionKind::TwoRing { alpha_c } => {
                let mut out = Vec::with_capacity(12);
                for j in 0..4 {
                    let center = j as f64 * PI / 2.0;
                    out.push(RegionSpec {
                        theta_lo: center - PI / 4.0,
                        theta_hi: center + PI / 4.0,
                        r_lo: self.alpha0,
                        r_hi: alpha_c,
                    });
                }
                for j in 4..12 {
                    let center = (j as f64 - 4.0) * PI / 4.0;
                    out.push(RegionSpec {
                        theta_lo: center - PI / 8.0,
                        theta_hi: center + PI / 8.0,
                        r_lo: alpha_c,
                        r_hi: f64::INFINITY,
                    });
                }
                out
            }
        }
    }

    /// The discard region, present when `alpha0 > 0`.
    pub fn discard_region(&self) -> Option<RegionSpec> {
        if self.has_discard() {
            Some(RegionSpec {
                theta_lo: -PI,
                theta_hi: PI,
                r_lo: 0.0,
                r_hi: self.alpha0,
            })
        } else {
            None
        }
    }

    /// Maps an outcome to its key value; total function. Boundary ties go
    /// to the higher-index region (half-open sectors, lower edge inclusive).
    pub fn key_map(&self, y: c64) -> KeyOutcome {
        let r = y.norm();
        if r < self.alpha0 {
            return KeyOutcome::Discard;
        }
        match self.kind {
            PartitionKind::PskSectors(n) => KeyOutcome::Key(sector_index(y, n)),
            PartitionKind::TwoRing { alpha_c } => {
                if r < alpha_c {
                    KeyOutcome::Key(sector_index(y, 4))
                } else {
                    KeyOutcome::Key(4 + sector_index(y, 8))
                }
            }
        }
    }
}

/// Index of the sector of width `2 pi / n` whose center is `j * 2 pi / n`.
/// The test is a single floor division on the half-sector-shifted angle.
fn sector_index(y: c64, n: usize) -> usize {
    let width = 2.0 * PI / n as f64;
    let shifted = y.arg() + 0.5 * width;
    let mut j = (shifted / width).floor() as i64;
    j = j.rem_euclid(n as i64);
    j as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{eigvalsh, trace};
    use ndarray_linalg::c64;
    use proptest::prelude::*;

    #[test]
    fn psk8_amplitude_09() {
        let c = build_psk(8, 0.9).unwrap();
        assert_eq!(c.len(), 8);
        for (x, s) in c.states().iter().enumerate() {
            assert_eq!(s.label, x);
            assert!((s.probability - 0.125).abs() < 1e-15);
            assert!((s.amplitude.norm() - 0.9).abs() < 1e-12);
            let expected_phase = x as f64 * PI / 4.0;
            let dev = (s.amplitude - c64::from_polar(0.9, expected_phase)).norm();
            assert!(dev < 1e-12);
        }
        let total: f64 = c.probabilities().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psk4_unit_amplitude_states() {
        let c = build_psk(4, 1.0).unwrap();
        let expected = [
            c64::new(1.0, 0.0),
            c64::new(0.0, 1.0),
            c64::new(-1.0, 0.0),
            c64::new(0.0, -1.0),
        ];
        for (s, e) in c.states().iter().zip(expected) {
            assert!((s.amplitude - e).norm() < 1e-12);
            assert!((s.probability - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn psk12_phases() {
        let c = build_psk(12, 0.92).unwrap();
        assert_eq!(c.len(), 12);
        for (x, s) in c.states().iter().enumerate() {
            let dev = (s.amplitude - c64::from_polar(0.92, x as f64 * PI / 6.0)).norm();
            assert!(dev < 1e-12);
        }
    }

    #[test]
    fn psk_rejects_bad_order() {
        assert!(build_psk(6, 1.0).is_err());
        assert!(build_psk(4, 0.0).is_err());
        assert!(build_psk(4, -1.0).is_err());
    }

    #[test]
    fn two_ring_reference_point() {
        let c = build_two_ring(0.7, 1.6, 7.0 / 48.0).unwrap();
        assert_eq!(c.len(), 12);
        let p2 = c.states()[4].probability;
        assert!((p2 - 5.0 / 96.0).abs() < 1e-15);
        let total: f64 = c.probabilities().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_ring_probability_bookkeeping() {
        let c = build_two_ring(0.5, 1.0, 1.0 / 12.0).unwrap();
        let p2 = c.states()[4].probability;
        assert!((p2 - 1.0 / 12.0).abs() < 1e-15);
        let total: f64 = c.probabilities().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_ring_boundary_p1() {
        // p1 just below 1/4 leaves a tiny but positive p2
        let c = build_two_ring(0.7, 1.6, 0.25 - 1e-9).unwrap();
        let p2 = c.states()[4].probability;
        assert!(p2 > 0.0 && (p2 - 5e-10).abs() < 1e-12);
    }

    #[test]
    fn two_ring_rejects_invalid() {
        assert!(build_two_ring(0.7, 1.6, 0.25).is_err());
        assert!(build_two_ring(1.6, 0.7, 0.1).is_err());
        assert!(build_two_ring(0.7, 0.7, 0.1).is_err());
    }

    #[test]
    fn key_map_sector_centers() {
        let p = RegionPartition::psk_sectors(8, 0.0).unwrap();
        assert_eq!(p.key_map(c64::new(1.0, 0.0)), KeyOutcome::Key(0));
        for j in 0..8 {
            let y = c64::from_polar(1.3, j as f64 * PI / 4.0);
            assert_eq!(p.key_map(y), KeyOutcome::Key(j));
        }
    }

    #[test]
    fn key_map_two_ring_inner() {
        let p = RegionPartition::two_ring(0.85, 0.0).unwrap();
        let y = c64::from_polar(0.3, PI / 2.0);
        assert_eq!(p.key_map(y), KeyOutcome::Key(1));
        // same angle, outside the boundary: outer ring sector 4 + 2
        let y = c64::from_polar(1.2, PI / 2.0);
        assert_eq!(p.key_map(y), KeyOutcome::Key(6));
    }

    #[test]
    fn key_map_postselection_discards_small_outcomes() {
        let p = RegionPartition::psk_sectors(8, 0.55).unwrap();
        assert_eq!(p.key_map(c64::new(0.4, 0.0)), KeyOutcome::Discard);
        assert_eq!(p.key_map(c64::new(0.6, 0.0)), KeyOutcome::Key(0));
    }

    #[test]
    fn boundary_ties_go_up() {
        let p = RegionPartition::psk_sectors(4, 0.0).unwrap();
        // theta = pi/4 is the lower edge of sector 1
        let y = c64::from_polar(1.0, PI / 4.0);
        assert_eq!(p.key_map(y), KeyOutcome::Key(1));
    }

    #[test]
    fn rho_a_diagonal_is_probabilities() {
        let c = build_two_ring(0.7, 1.6, 7.0 / 48.0).unwrap();
        let rho = c.rho_a();
        for (x, s) in c.states().iter().enumerate() {
            assert!((rho.mat()[(x, x)].re - s.probability).abs() < 1e-14);
        }
    }

    #[test]
    fn rho_a_antipodal_overlap() {
        // 4-PSK: alpha_2 = -alpha_0, so entry (0,2) = p exp(-2 alpha^2)
        let alpha = 0.8;
        let c = build_psk(4, alpha).unwrap();
        let rho = c.rho_a();
        let expected = 0.25 * (-2.0 * alpha * alpha).exp();
        assert!((rho.mat()[(0, 2)].re - expected).abs() < 1e-14);
        assert!(rho.mat()[(0, 2)].im.abs() < 1e-14);
    }

    #[test]
    fn rho_a_is_a_valid_state() {
        for c in [
            build_psk(4, 1.0).unwrap(),
            build_psk(8, 0.9).unwrap(),
            build_two_ring(0.7, 1.6, 7.0 / 48.0).unwrap(),
        ] {
            let rho = c.rho_a();
            let tr = trace(&rho.mat().view());
            assert!((tr.re - 1.0).abs() < 1e-12);
            assert!(tr.im.abs() < 1e-12);
            let evs = eigvalsh(rho.mat()).unwrap();
            assert!(evs.iter().all(|&v| v >= -1e-12));
        }
    }

    #[test]
    fn rho_a_global_phase_invariance() {
        // overlaps depend only on phase differences
        let base = build_psk(8, 0.9).unwrap();
        let rho0 = base.rho_a();
        let phase = c64::from_polar(1.0, 0.37);
        let rotated = Constellation {
            states: base
                .states()
                .iter()
                .map(|s| SignalState {
                    amplitude: s.amplitude * phase,
                    ..*s
                })
                .collect(),
            geometry: base.geometry(),
        };
        let rho1 = rotated.rho_a();
        for (a, b) in rho0.mat().iter().zip(rho1.mat().iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn two_ring_radial_intervals_share_alpha_c() {
        let p = RegionPartition::two_ring(0.85, 0.0).unwrap();
        let regions = p.regions();
        for inner in &regions[..4] {
            assert_eq!(inner.r_hi, 0.85);
        }
        for outer in &regions[4..] {
            assert_eq!(outer.r_lo, 0.85);
        }
    }

    proptest! {
        #[test]
        fn partition_totality(re in -3.0f64..3.0, im in -3.0f64..3.0) {
            let y = c64::new(re, im);
            for p in [
                RegionPartition::psk_sectors(8, 0.0).unwrap(),
                RegionPartition::psk_sectors(8, 0.55).unwrap(),
                RegionPartition::psk_sectors(12, 0.0).unwrap(),
                RegionPartition::two_ring(0.85, 0.0).unwrap(),
            ] {
                // the key map is total and the claimed region is unique:
                // check the outcome against the region descriptors
                let outcome = p.key_map(y);
                let r = y.norm();
                let claims: Vec<usize> = p
                    .regions()
                    .iter()
                    .enumerate()
                    .filter(|(_, reg)| {
                        let in_radial = r >= reg.r_lo && r < reg.r_hi;
                        let width = reg.theta_hi - reg.theta_lo;
                        let rel = (y.arg() - reg.theta_lo).rem_euclid(2.0 * PI);
                        in_radial && rel < width
                    })
                    .map(|(j, _)| j)
                    .collect();
                match outcome {
                    KeyOutcome::Key(z) => prop_assert_eq!(claims, vec![z]),
                    KeyOutcome::Discard => {
                        prop_assert!(claims.is_empty());
                        prop_assert!(r < p.alpha0());
                    }
                }
            }
        }

        #[test]
        fn rotational_relabeling(re in -3.0f64..3.0, im in -3.0f64..3.0, n in prop::sample::select(vec![4usize, 8, 12])) {
            let y = c64::new(re, im);
            prop_assume!(y.norm() > 1e-6);
            let p = RegionPartition::psk_sectors(n, 0.0).unwrap();
            let rot = y * c64::from_polar(1.0, 2.0 * PI / n as f64);
            if let (KeyOutcome::Key(a), KeyOutcome::Key(b)) = (p.key_map(y), p.key_map(rot)) {
                prop_assert_eq!((a + 1) % n, b);
            } else {
                prop_assert!(false, "psk partition without postselection never discards");
            }
        }
    }
}
