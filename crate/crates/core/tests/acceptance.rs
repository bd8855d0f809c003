//! Acceptance suite: one test per acceptance criterion, each printing a
//! single `[PASS]`/`[FAIL]` line (visible with `--nocapture`; on failure
//! the line appears in the captured output).
//!
//! Criteria 1-6 check the headline key-rate numbers at 50 km against
//! their references; 7 is the fast property suite at small cutoffs; 8
//! checks the production pipeline against independent brute-force
//! oracles. Expensive shared results are computed once via `OnceLock`.

use std::sync::OnceLock;

use ndarray::{Array1, Array2};
use ndarray_linalg::c64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dmcv_core::conic::solve_linear_sdp;
use dmcv_core::constellation::{build_psk, RegionPartition};
use dmcv_core::fock::{
    cached_bob_operators, coherent_vector, moment_observables, povm_density, DetectorModel,
    FockCutoff,
};
use dmcv_core::linalg::{conj_transpose, eigvalsh, hermitize, max_abs, tr_prod, trace};
use dmcv_core::quad::gauss_legendre_on;
use dmcv_core::rate::{
    frank_wolfe, key_rate, oracle::projected_gradient_minimum, EntropyObjective,
    FrankWolfeOptions, PostprocessingMap, RateOptions, RateReport,
};
use dmcv_core::search::{
    gm_baseline_grid, linspace_inclusive, ConstellationSpec, GmReport, RatePoint,
};
use dmcv_core::statistics::{
    build_constraints, conditional_density, discretized_distribution,
    oracle::brute_force_region_prob, ChannelModel,
};

const REF_PSK4: f64 = 0.00602;
const REF_PSK8: f64 = 0.00966;
const REF_PSK12: f64 = 0.01008;
const REF_TWO_RING: f64 = 0.01459;
const REF_GM: f64 = 0.02103;

fn verdict(criterion: usize, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("[{tag}] criterion {criterion}: {detail}");
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn point(spec: ConstellationSpec, alpha0: f64, n_c: usize) -> RatePoint {
    RatePoint {
        spec,
        alpha0,
        distance_km: 50.0,
        loss_db_per_km: 0.2,
        xi: 0.01,
        eta: 0.552,
        v_el: 0.015,
        n_c,
        beta: 0.95,
    }
}

fn psk(points: usize, alpha: f64, alpha0: f64, n_c: usize) -> RatePoint {
    point(ConstellationSpec::Psk { points, alpha }, alpha0, n_c)
}

fn rel_dev(value: f64, reference: f64) -> f64 {
    (value - reference) / reference
}

/// 4-PSK at 50 km with alpha optimized over a coarse grid, n_c = 12.
fn psk4_best() -> &'static (f64, RateReport) {
    static CELL: OnceLock<(f64, RateReport)> = OnceLock::new();
    CELL.get_or_init(|| {
        let opts = RateOptions::default();
        let mut best: Option<(f64, RateReport)> = None;
        for alpha in [0.60, 0.65, 0.70, 0.75, 0.80] {
            let rep = psk(4, alpha, 0.0, 12).evaluate(&opts).expect("4-PSK point");
            if best.as_ref().map_or(true, |(_, b)| rep.key_rate > b.key_rate) {
                best = Some((alpha, rep));
            }
        }
        best.unwrap()
    })
}

fn psk8_report() -> &'static RateReport {
    static CELL: OnceLock<RateReport> = OnceLock::new();
    CELL.get_or_init(|| psk(8, 0.9, 0.0, 12).evaluate(&RateOptions::default()).expect("8-PSK"))
}

fn psk12_report() -> &'static RateReport {
    static CELL: OnceLock<RateReport> = OnceLock::new();
    CELL.get_or_init(|| {
        psk(12, 0.92, 0.0, 12).evaluate(&RateOptions::default()).expect("12-PSK")
    })
}

fn two_ring_report() -> &'static RateReport {
    static CELL: OnceLock<RateReport> = OnceLock::new();
    CELL.get_or_init(|| {
        let spec = ConstellationSpec::TwoRing {
            alpha1: 0.7,
            alpha2: 1.6,
            p1: 7.0 / 48.0,
            alpha_c: 0.85,
        };
        point(spec, 0.0, 12).evaluate(&RateOptions::default()).expect("two-ring")
    })
}

fn gm_report() -> &'static GmReport {
    static CELL: OnceLock<GmReport> = OnceLock::new();
    CELL.get_or_init(|| {
        let ch = ChannelModel::new(50.0, 0.2, 0.01).unwrap();
        let det = DetectorModel::new(0.552, 0.015).unwrap();
        let grid = linspace_inclusive(0.05, 20.0, 0.05);
        gm_baseline_grid(&ch, &det, 0.95, &grid).expect("GM baseline")
    })
}

#[test]
fn criterion_1_psk4_optimized_alpha() {
    let (alpha, rep) = psk4_best();
    let dev = rel_dev(rep.key_rate, REF_PSK4);
    verdict(
        1,
        dev.abs() <= 0.15,
        &format!(
            "4-PSK 50 km optimized alpha={alpha:.2}, n_c=12: key rate {:.6e} \
             vs reference {REF_PSK4:.3e} ({:+.1}%)",
            rep.key_rate,
            100.0 * dev
        ),
    );
}

#[test]
fn criterion_2_psk8() {
    let rep = psk8_report();
    let (_, psk4) = psk4_best();
    let dev = rel_dev(rep.key_rate, REF_PSK8);
    let ratio = rep.key_rate / psk4.key_rate;
    verdict(
        2,
        dev.abs() <= 0.15 && (1.4..=1.8).contains(&ratio),
        &format!(
            "8-PSK 50 km alpha=0.9: key rate {:.6e} vs reference {REF_PSK8:.3e} \
             ({:+.1}%), ratio to 4-PSK {ratio:.2} (need [1.4, 1.8])",
            rep.key_rate,
            100.0 * dev
        ),
    );
}

#[test]
fn criterion_3_psk12() {
    let rep = psk12_report();
    let psk8 = psk8_report();
    // reduced cutoff (n_c = 12 <= 14) justifies the widened +-20% band;
    // cutoff stability is checked separately in criterion 7
    let dev = rel_dev(rep.key_rate, REF_PSK12);
    let ratio = rep.key_rate / psk8.key_rate;
    verdict(
        3,
        dev.abs() <= 0.20 && (1.00..=1.12).contains(&ratio),
        &format!(
            "12-PSK 50 km alpha=0.92, n_c=12: key rate {:.6e} vs reference \
             {REF_PSK12:.3e} ({:+.1}%), ratio to 8-PSK {ratio:.3} (need [1.00, 1.12])",
            rep.key_rate,
            100.0 * dev
        ),
    );
}

#[test]
fn criterion_4_two_ring() {
    let rep = two_ring_report();
    let (_, psk4) = psk4_best();
    let dev = rel_dev(rep.key_rate, REF_TWO_RING);
    let ratio = rep.key_rate / psk4.key_rate;
    verdict(
        4,
        dev.abs() <= 0.20 && (2.1..=2.7).contains(&ratio),
        &format!(
            "two-ring 50 km (0.7, 1.6, 0.85, 7/48), n_c=12: key rate {:.6e} vs \
             reference {REF_TWO_RING:.3e} ({:+.1}%), ratio to 4-PSK {ratio:.2} \
             (need [2.1, 2.7])",
            rep.key_rate,
            100.0 * dev
        ),
    );
}

#[test]
fn criterion_5_gm_baseline() {
    let gm = gm_report();
    let trc = two_ring_report();
    let dev = rel_dev(gm.key_rate, REF_GM);
    let ratio = trc.key_rate / gm.key_rate;
    verdict(
        5,
        dev.abs() <= 0.15 && ratio >= 0.65,
        &format!(
            "GM baseline 50 km: key rate {:.6e} vs reference {REF_GM:.3e} \
             ({:+.1}%), two-ring/GM ratio {ratio:.3} (need >= 0.65)",
            gm.key_rate,
            100.0 * dev
        ),
    );
}

#[test]
fn criterion_6_postselection() {
    let opts = RateOptions::default();
    // 8-PSK alpha0 sweep at a slightly reduced cutoff for speed; the
    // sweep compares points to each other, so a common cutoff suffices
    let grid = linspace_inclusive(0.0, 0.7, 0.05);
    let reports: Vec<RateReport> = grid
        .iter()
        .map(|&a0| psk(8, 0.9, a0, 10).evaluate(&opts).expect("postselected 8-PSK"))
        .collect();
    let (best_idx, best) = reports
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.key_rate.partial_cmp(&b.1.key_rate).unwrap())
        .unwrap();
    let best_a0 = grid[best_idx];
    let idx_055 = grid.iter().position(|&a| (a - 0.55).abs() < 1e-9).unwrap();
    let gain = reports[idx_055].key_rate / reports[0].key_rate - 1.0;
    let p_pass = reports[idx_055].p_pass;

    // two-ring: postselection should not help (optimum at alpha0 = 0)
    let tr_spec = ConstellationSpec::TwoRing {
        alpha1: 0.7,
        alpha2: 1.6,
        p1: 7.0 / 48.0,
        alpha_c: 0.85,
    };
    let tr_rates: Vec<f64> = [0.0, 0.2, 0.4]
        .iter()
        .map(|&a0| {
            point(tr_spec.clone(), a0, 10)
                .evaluate(&opts)
                .expect("postselected two-ring")
                .key_rate
        })
        .collect();
    // "optimal alpha0 = 0" within solver resolution: key-rate differences
    // here sit below the certification slack (the FW gap tolerance is
    // 1e-4 bits), so require that no alpha0 gives a material (>1%) gain,
    // in contrast to the ~8% gain for 8-PSK
    let tr_gain = tr_rates.iter().cloned().fold(f64::MIN, f64::max) / tr_rates[0] - 1.0;
    let tr_best_at_zero = tr_gain <= 0.01;

    let peak_ok = (best_a0 - 0.55).abs() <= 0.05 + 1e-9;
    let gain_ok = (0.04..=0.12).contains(&gain);
    let p_pass_ok = (p_pass - 0.75).abs() <= 0.02;
    verdict(
        6,
        peak_ok && gain_ok && p_pass_ok && tr_best_at_zero,
        &format!(
            "8-PSK alpha0 sweep peaks at {best_a0:.2} (best {:.6e}), gain at 0.55 = \
             {:+.1}% (need 8 +- 4), p_pass(0.55) = {p_pass:.4} (need 0.75 +- 0.02), \
             two-ring postselection gain {:+.2}% (need <= 1%): {tr_best_at_zero}",
            best.key_rate,
            100.0 * gain,
            100.0 * tr_gain
        ),
    );
}

// --- criterion 7 helpers ---------------------------------------------------

fn min_eig(m: &Array2<c64>) -> f64 {
    eigvalsh(m).unwrap().iter().cloned().fold(f64::INFINITY, f64::min)
}

fn random_density(rng: &mut ChaCha8Rng, d: usize) -> Array2<c64> {
    let g = Array2::from_shape_fn((d, d), |_| {
        c64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
    });
    let mut m = g.dot(&conj_transpose(&g.view()));
    let tr = trace(&m.view()).re;
    m.mapv_inplace(|z| z / c64::new(tr, 0.0));
    hermitize(&mut m);
    m
}

fn random_hermitian(rng: &mut ChaCha8Rng, d: usize) -> Array2<c64> {
    let g = Array2::from_shape_fn((d, d), |_| {
        c64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
    });
    let mut h = &g + &conj_transpose(&g.view());
    hermitize(&mut h);
    h
}

#[test]
fn criterion_7_property_suite() {
    let det = DetectorModel::new(0.552, 0.015).unwrap();
    let ch = ChannelModel::new(50.0, 0.2, 0.01).unwrap();
    let mut checks: Vec<(String, bool)> = Vec::new();
    let mut check = |name: &str, ok: bool, detail: String| {
        checks.push((format!("{name} ({detail})"), ok));
    };

    // region-operator completeness, PSD, and P-tilde row sums at n_c = 6
    {
        let cutoff = FockCutoff::new(6).unwrap();
        let part = RegionPartition::psk_sectors(8, 0.3).unwrap();
        let ops = cached_bob_operators(&part, &det, &cutoff).unwrap();
        let b = cutoff.dim();
        let mut sum = Array2::<c64>::zeros((b, b));
        let mut min_e = f64::INFINITY;
        for r in &ops.regions.regions {
            sum = &sum + r.mat();
            min_e = min_e.min(min_eig(r.mat()));
        }
        if let Some(d) = &ops.regions.discard {
            sum = &sum + d.mat();
            min_e = min_e.min(min_eig(d.mat()));
        }
        let eye = Array2::from_diag(&Array1::from_elem(b, c64::new(1.0, 0.0)));
        let dev = max_abs(&(&sum - &eye).view());
        check("completeness", dev <= 1e-6, format!("max dev {dev:.2e}"));
        check("region PSD", min_e >= -1e-9, format!("min eig {min_e:.2e}"));

        let cons = build_psk(8, 0.9).unwrap();
        let dist = discretized_distribution(&cons, &part, &ch, &det);
        let mut worst = 0.0f64;
        for x in 0..8 {
            let total = dist.key.row(x).sum() + dist.discard[x];
            worst = worst.max((total - 1.0).abs());
        }
        check("P-tilde row sums", worst <= 1e-9, format!("max |sum-1| {worst:.2e}"));
    }

    // reduced state of the constellation: unit trace, PSD
    for (name, cons) in [
        ("psk4", build_psk(4, 0.7).unwrap()),
        ("psk12", build_psk(12, 0.92).unwrap()),
    ] {
        let rho_a = cons.rho_a();
        let tr = trace(&rho_a.mat().view()).re;
        let me = min_eig(rho_a.mat());
        check(
            "rho_A",
            (tr - 1.0).abs() <= 1e-9 && me >= -1e-9,
            format!("{name}: trace dev {:.2e}, min eig {me:.2e}", (tr - 1.0).abs()),
        );
    }

    // gradient vs central finite differences on the smoothed objective
    {
        let cutoff = FockCutoff::new(3).unwrap();
        let part = RegionPartition::psk_sectors(4, 0.4).unwrap();
        let ops = cached_bob_operators(&part, &det, &cutoff).unwrap();
        let map = PostprocessingMap::new(&ops.regions, 4).unwrap();
        let obj = EntropyObjective::new(&map, 1e-6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // blend with the maximally mixed state: small eigenvalues make
        // the third derivative (~1/lambda^2) dominate the FD error
        let d = map.dim();
        let raw = random_density(&mut rng, d);
        let eye = Array2::from_diag(&Array1::from_elem(d, c64::new(1.0 / d as f64, 0.0)));
        let rho = &raw.mapv(|z| z * c64::new(0.7, 0.0)) + &eye.mapv(|z| z * c64::new(0.3, 0.0));
        let (_, grad) = obj.value_and_gradient(&rho).unwrap();
        let mut worst = 0.0f64;
        for _ in 0..3 {
            let dir = random_hermitian(&mut rng, map.dim());
            let h = 1e-5;
            let fp = obj.value(&(&rho + &dir.mapv(|z| z * c64::new(h, 0.0)))).unwrap();
            let fm = obj.value(&(&rho - &dir.mapv(|z| z * c64::new(h, 0.0)))).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            let lin = tr_prod(&grad.view(), &dir.view()).re;
            worst = worst.max((fd - lin).abs() / (1.0 + lin.abs()));
        }
        check("gradient vs FD", worst <= 1e-4, format!("max rel dev {worst:.2e}"));
    }

    // certified bounds bracket, and cutoff stability n_c vs n_c + 2
    {
        let opts = RateOptions::default();
        let r6 = psk(4, 0.7, 0.0, 6).evaluate(&opts).unwrap();
        let r8 = psk(4, 0.7, 0.0, 8).evaluate(&opts).unwrap();
        let bracket_ok = r6.lower_bound <= r6.upper_bound + 1e-12
            && r8.lower_bound <= r8.upper_bound + 1e-12;
        check(
            "lower <= upper",
            bracket_ok,
            format!("gaps {:.2e} / {:.2e}", r6.upper_bound - r6.lower_bound,
                r8.upper_bound - r8.lower_bound),
        );
        let stab = (r6.key_rate - r8.key_rate).abs() / r8.key_rate;
        check("cutoff stability", stab < 0.01, format!("rel change {stab:.2e}"));

        // postselected pipeline at alpha0 -> 0 equals the plain pipeline
        let r_ps = psk(4, 0.7, 1e-6, 6).evaluate(&opts).unwrap();
        let diff = (r_ps.key_rate - r6.key_rate).abs();
        check("alpha0=0 equality", diff <= 1e-6, format!("|dK| {diff:.2e}"));
    }

    // weak duality on a conic solve with a realistic objective
    {
        let cutoff = FockCutoff::new(3).unwrap();
        let cons = build_psk(4, 0.85).unwrap();
        let part = RegionPartition::psk_sectors(4, 0.0).unwrap();
        let ops = cached_bob_operators(&part, &det, &cutoff).unwrap();
        let set = build_constraints(&cons, &ch, &det, &ops.moments);
        let map = PostprocessingMap::new(&ops.regions, 4).unwrap();
        let obj = EntropyObjective::new(&map, 1e-6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rho = random_density(&mut rng, map.dim());
        let (_, objective) = obj.value_and_gradient(&rho).unwrap();
        let sol = solve_linear_sdp(
            &objective,
            &set.constraints,
            &set.rhs,
            &set.structure,
            &Default::default(),
        )
        .unwrap();
        let scale = sol.report.primal_objective.abs().max(1.0);
        let ok = sol.report.dual_objective <= sol.report.primal_objective + 1e-6 * scale;
        check(
            "weak duality",
            ok,
            format!(
                "primal {:.6e}, dual {:.6e}",
                sol.report.primal_objective, sol.report.dual_objective
            ),
        );
    }

    // noisy second-moment operator vs 2D quadrature of the POVM
    {
        let cutoff = FockCutoff::new(5).unwrap();
        let alpha = c64::new(0.4, 0.2);
        let v = coherent_vector(alpha, &cutoff);
        let s_q = moment_observables(&det, &cutoff).s_q;
        let closed = v
            .iter()
            .enumerate()
            .map(|(i, &vi)| {
                v.iter()
                    .enumerate()
                    .map(|(j, &vj)| (vi.conj() * s_q.mat()[(i, j)] * vj).re)
                    .sum::<f64>()
            })
            .sum::<f64>();
        let (nodes, weights) = gauss_legendre_on(90, -9.0, 9.0);
        let mut quad = 0.0;
        for (&qx, &wx) in nodes.iter().zip(&weights) {
            for (&qy, &wy) in nodes.iter().zip(&weights) {
                let g = povm_density(c64::new(qx, qy), &det, &cutoff);
                let p: f64 = v
                    .iter()
                    .enumerate()
                    .map(|(i, &vi)| {
                        v.iter()
                            .enumerate()
                            .map(|(j, &vj)| (vi.conj() * g.mat()[(i, j)] * vj).re)
                            .sum::<f64>()
                    })
                    .sum();
                quad += wx * wy * 2.0 * qx * qx * p;
            }
        }
        let dev = (quad - closed).abs();
        check("noisy moment vs quadrature", dev <= 1e-6, format!("|dev| {dev:.2e}"));
    }

    let all_ok = checks.iter().all(|(_, ok)| *ok);
    let detail = checks
        .iter()
        .map(|(name, ok)| format!("{}{name}", if *ok { "" } else { "FAILED: " }))
        .collect::<Vec<_>>()
        .join("; ");
    verdict(7, all_ok, &format!("property suite: {detail}"));
}

#[test]
fn criterion_8_oracle_equivalence() {
    let det = DetectorModel::new(0.552, 0.015).unwrap();
    let ch = ChannelModel::new(50.0, 0.2, 0.01).unwrap();

    // Frank-Wolfe vs the penalized projected-gradient oracle, 4-PSK n_c=3
    let cons = build_psk(4, 0.85).unwrap();
    let part = RegionPartition::psk_sectors(4, 0.0).unwrap();
    let cutoff = FockCutoff::new(3).unwrap();
    let ops = cached_bob_operators(&part, &det, &cutoff).unwrap();
    let set = build_constraints(&cons, &ch, &det, &ops.moments);
    let map = PostprocessingMap::new(&ops.regions, 4).unwrap();
    let obj = EntropyObjective::new(&map, 1e-7).unwrap();
    let rho0 =
        dmcv_core::rate::feasible_interior_start(&cons, &ch, &cutoff, &set, 0.05).unwrap();
    let fw_opts = FrankWolfeOptions { gap_tol: 1e-6, max_iter: 200, ..Default::default() };
    let fw = frank_wolfe(&obj, &set, rho0.clone(), &fw_opts).unwrap();
    let pg = projected_gradient_minimum(&obj, &set, &rho0);
    let fw_ok = (fw.objective - pg).abs() < 1e-4;

    // discretized distribution vs the brute-force Cartesian oracle
    let ps_part = RegionPartition::psk_sectors(4, 0.4).unwrap();
    let dist = discretized_distribution(&cons, &ps_part, &ch, &det);
    let x = 1usize;
    let dens = |y: c64| conditional_density(y, x, &cons, &ch, &det);
    let mut worst = 0.0f64;
    for z in 0..4 {
        let oracle = brute_force_region_prob(&ps_part, z as i64, &dens, 6.5);
        worst = worst.max((oracle - dist.key[(x, z)]).abs());
    }
    let oracle_discard = brute_force_region_prob(&ps_part, -1, &dens, 6.5);
    worst = worst.max((oracle_discard - dist.discard[x]).abs());
    let dist_ok = worst <= 1e-6;

    verdict(
        8,
        fw_ok && dist_ok,
        &format!(
            "FW {:.8} vs projected-gradient {pg:.8} (|dev| {:.2e}, need < 1e-4); \
             discretized vs brute-force quadrature max dev {worst:.2e} (need <= 1e-6)",
            fw.objective,
            (fw.objective - pg).abs()
        ),
    );
}
