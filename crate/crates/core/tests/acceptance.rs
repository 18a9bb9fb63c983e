//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any criterion fails.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;
use std::time::{Duration, Instant};

use modalform::decomposition::{
    decompose, pearson_correlation, residual_report, DeviationField, Projector,
};
use modalform::geometry::{build_profile, build_spherical_cap, Geometry, SampleSet};
use modalform::interpolation::{run_sweep, SweepConfig, SweepResult};
use modalform::linalg::LeastSquares;
use modalform::modal_basis::{
    assemble_operators, build_basis, enrich_basis, rigid_and_size_fields, solve_modes, ModeClass,
};
use modalform::pipeline::{
    run_subcommand, GeometryConfig, PipelineConfig, SweepSection, Subcommand,
};
use modalform::plan::{build_plan, emit_dmis, order_tour, path_length, TourMethod};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn hemisphere() -> Geometry {
    build_spherical_cap(1.0, FRAC_PI_2, 321).unwrap()
}

fn within_time(o: Outcome, elapsed: Duration, limit: Duration) -> Outcome {
    if elapsed > limit {
        outcome(
            false,
            format!("{}; took {elapsed:.2?}, limit {limit:.0?}", o.detail),
        )
    } else {
        o
    }
}

fn field(g: &Geometry, v: &DVector<f64>) -> DeviationField {
    DeviationField::full(&g.id(), v.iter().cloned().collect()).unwrap()
}

/// Roots of cos(x) cosh(x) = 1 by bisection, written as cos(x) - 1/cosh(x).
fn free_free_roots(count: usize) -> Vec<f64> {
    let f = |x: f64| x.cos() - 1.0 / x.cosh();
    (1..=count)
        .map(|k| {
            let mid = (k as f64 + 0.5) * PI;
            let (mut a, mut b) = (mid - 0.2, mid + 0.2);
            assert!(f(a) * f(b) < 0.0);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if f(a) * f(m) <= 0.0 {
                    b = m;
                } else {
                    a = m;
                }
            }
            0.5 * (a + b)
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let g = build_profile(1.0, 201).unwrap();
    let ops = assemble_operators(&g).unwrap();
    let basis = solve_modes(&ops, 7).unwrap();
    let lam = basis.eigenvalues();
    let rigid_ok = lam[0].abs() <= 1e-8 * lam[2] && lam[1].abs() <= 1e-8 * lam[2];
    let mut worst: f64 = 0.0;
    for (k, beta) in free_free_roots(5).into_iter().enumerate() {
        // unit length, stiffness and mass per length: omega = beta^2
        let omega = lam[k + 2].sqrt();
        worst = worst.max((omega / (beta * beta) - 1.0).abs());
    }
    let pass = rigid_ok && worst <= 0.01;
    within_time(
        outcome(
            pass,
            format!(
                "rigid ratios {:.1e}, {:.1e}; worst frequency error {:.3}%",
                lam[0].abs() / lam[2],
                lam[1].abs() / lam[2],
                100.0 * worst
            ),
        ),
        t.elapsed(),
        Duration::from_secs(5),
    )
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let g = hemisphere();
    let basis = build_basis(&g, 50, true).unwrap();
    let proj = Projector::new(&basis).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let truth = DVector::from_fn(basis.mode_count(), |_, _| rng.gen_range(-1.0..1.0));
        let v = basis.modes() * &truth;
        let sig = proj.decompose(&field(&g, &v)).unwrap();
        let got = DVector::from_vec(sig.coefficients);
        worst = worst.max((got - &truth).norm() / truth.norm());
    }
    within_time(
        outcome(
            worst <= 1e-9,
            format!("{} modes, worst relative error {worst:.2e} over 100 trials", basis.mode_count()),
        ),
        t.elapsed(),
        Duration::from_secs(10),
    )
}

fn criterion_3() -> Outcome {
    let g = hemisphere();
    let basis = build_basis(&g, 50, true).unwrap();
    let proj = Projector::new(&basis).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..basis.mode_count() {
        for c in [-1.0, 0.5, 2.0] {
            let v = basis.mode(i) * c;
            let sig = proj.decompose(&field(&g, &v)).unwrap();
            worst = worst.max((sig.coefficients[i] - c).abs());
        }
    }
    outcome(
        worst <= 1e-10,
        format!("{} modes x 3 amplitudes, worst |lambda_i - c| {worst:.2e}", basis.mode_count()),
    )
}

fn criterion_4() -> Outcome {
    let g = hemisphere();
    let basis = build_basis(&g, 50, true).unwrap();
    let n = basis.mode_count();
    let p = g.node_count() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut monotone = true;
    let mut worst_end: f64 = 0.0;
    let mut worst_prefix: f64 = 0.0;
    for trial in 0..20 {
        let v = DVector::from_fn(g.node_count(), |_, _| rng.gen_range(-1.0..1.0));
        let f = field(&g, &v);
        let sig = decompose(&f, &basis).unwrap();
        let report = residual_report(&f, &sig, &basis).unwrap();
        let e = &report.e_curve;
        monotone &= e.len() == n && e.windows(2).all(|w| w[1] <= w[0]);
        let phi = DVector::from_column_slice(report.residual_field.values());
        let expected = phi.norm() / p.sqrt();
        worst_end = worst_end.max((e[n - 1] - expected).abs() / expected);
        if trial < 3 {
            // independent refit of every prefix
            for m in 1..=n {
                let sub = basis.modes().columns(0, m).into_owned();
                let ls = LeastSquares::new(&sub).unwrap();
                let coef = ls.solve(&v).unwrap();
                let r = (&v - sub * coef).norm() / p.sqrt();
                worst_prefix = worst_prefix.max((e[m - 1] - r).abs() / r);
            }
        }
    }
    outcome(
        monotone && worst_end <= 1e-10 && worst_prefix <= 1e-10,
        format!(
            "non-increasing: {monotone}; e_n vs |phi|/sqrt(p) {worst_end:.1e}; prefix refits {worst_prefix:.1e}"
        ),
    )
}

fn criterion_5() -> Outcome {
    let g = hemisphere();
    let basis = build_basis(&g, 50, false).unwrap();
    let proj = Projector::new(&basis).unwrap();
    let p = g.node_count();
    let size = DVector::from_element(p, 0.01);
    let size_rms = 0.01;
    let pure = proj.decompose(&field(&g, &size)).unwrap();
    let mut worst: f64 = 1.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let coeffs = DVector::from_fn(15, |_, _| rng.gen_range(-1.0..1.0));
        let form = basis.modes().columns(1, 15) * coeffs;
        let rms = form.norm() / (p as f64).sqrt();
        let noisy = &size + form * (0.1 * size_rms / rms);
        let sig = proj.decompose(&field(&g, &noisy)).unwrap();
        worst = worst.min(pearson_correlation(&pure, &sig).unwrap());
    }
    outcome(worst >= 0.95, format!("lowest r over 20 trials {worst:.4}"))
}

fn criterion_6() -> Outcome {
    let g = hemisphere();
    let c = g.reference_point();
    let mut rot_max: f64 = 0.0;
    for axis in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] {
        for (r, n) in g.nodes().iter().zip(g.normals()) {
            let d = [r[0] - c[0], r[1] - c[1], r[2] - c[2]];
            let w = [
                axis[1] * d[2] - axis[2] * d[1],
                axis[2] * d[0] - axis[0] * d[2],
                axis[0] * d[1] - axis[1] * d[0],
            ];
            rot_max = rot_max.max((w[0] * n[0] + w[1] * n[1] + w[2] * n[2]).abs());
        }
    }
    let extra = rigid_and_size_fields(&g);
    let labels: Vec<&str> = extra.iter().map(|f| f.label.as_str()).collect();
    let no_rotations = labels.iter().all(|l| !l.starts_with("rotation"));
    let natural = solve_modes(&assemble_operators(&g).unwrap(), 50).unwrap();
    let enriched = enrich_basis(&natural, &extra).unwrap();
    let b = &enriched.basis;
    let k = extra.len();
    let inj: Vec<DVector<f64>> = (0..k).map(|i| b.mode(i)).collect();
    let q = DMatrix::from_columns(&inj).qr().q();
    let mut worst: f64 = 0.0;
    for j in k..b.mode_count() {
        let col = b.mode(j);
        worst = worst.max((q.transpose() * &col).amax() / col.norm());
    }
    let classes_ok = b.mode_class()[..k]
        .iter()
        .filter(|c| matches!(c, ModeClass::Rigid | ModeClass::Size))
        .count()
        == 4;
    let pass = rot_max <= 1e-12
        && no_rotations
        && k == 4
        && classes_ok
        && enriched.dropped.len() == 1
        && worst <= 1e-10;
    outcome(
        pass,
        format!(
            "rotation fields max {rot_max:.1e}; kept {labels:?}; dropped natural {:?}; residual orthogonality {worst:.1e}",
            enriched.dropped
        ),
    )
}

fn profile_sweep(complexities: Vec<usize>, sample_counts: Vec<usize>, trials: usize) -> SweepResult {
    let g = build_profile(10.0, 250).unwrap();
    let basis = build_basis(&g, 60, false).unwrap();
    let cfg = SweepConfig {
        complexities,
        sample_counts,
        trials,
        noise_sigma: 0.0,
        seed: 2007,
        defect_range: 3.0,
        max_modes: Some(40),
        ..SweepConfig::default()
    };
    run_sweep(&g, &basis, &cfg).unwrap()
}

fn criterion_7() -> Outcome {
    let t = Instant::now();
    let good = profile_sweep(vec![5, 10, 15, 20], vec![50], 20);
    let bad = profile_sweep(vec![40, 45, 50, 55, 60], vec![15], 20);
    let good_max = good
        .rms_grid
        .iter()
        .map(|r| r[0].unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max);
    let bad_min = bad
        .rms_grid
        .iter()
        .map(|r| r[0].unwrap_or(f64::INFINITY))
        .fold(f64::INFINITY, f64::min);
    within_time(
        outcome(
            good_max < 0.01 && bad_min > 0.1,
            format!("q=50, c<=20: worst mean RMS {good_max:.2e}; q=15, c>=40: best mean RMS {bad_min:.3}"),
        ),
        t.elapsed(),
        Duration::from_secs(30),
    )
}

fn criterion_8() -> Outcome {
    let t = Instant::now();
    let complexities: Vec<usize> = (1..=10).map(|k| 6 * k).collect();
    let sample_counts: Vec<usize> = (0..10).map(|k| 70 + 20 * k).collect();
    let r = profile_sweep(complexities, sample_counts, 6);
    // cells at or below the exact-recovery tolerance count as equal
    const FLOOR: f64 = 1e-9;
    let mut violations = Vec::new();
    let mut missing = 0;
    let (nc, nq) = (r.complexities.len(), r.sample_counts.len());
    for ci in 0..nc {
        for qi in 0..nq {
            let (Some(x), Some(sx)) = (r.rms_grid[ci][qi], r.stderr_grid[ci][qi]) else {
                missing += 1;
                continue;
            };
            let mut check = |y: Option<f64>, sy: Option<f64>, increasing: bool, what: &str| {
                if let (Some(y), Some(sy)) = (y, sy) {
                    let slack = (sx * sx + sy * sy).sqrt() + FLOOR;
                    let ok = if increasing { y >= x - slack } else { y <= x + slack };
                    if !ok {
                        violations.push(format!(
                            "{what} at c={} q={}",
                            r.complexities[ci], r.sample_counts[qi]
                        ));
                    }
                }
            };
            if qi + 1 < nq {
                check(r.rms_grid[ci][qi + 1], r.stderr_grid[ci][qi + 1], false, "rise in q");
            }
            if ci + 1 < nc {
                check(r.rms_grid[ci + 1][qi], r.stderr_grid[ci + 1][qi], true, "drop in c");
            }
        }
    }
    let sims = nc * nq * r.trials_per_cell;
    within_time(
        outcome(
            violations.is_empty() && missing == 0 && sims > 500,
            format!(
                "{nc}x{nq} grid, {sims} simulations, {missing} failed cells, violations {violations:?}"
            ),
        ),
        t.elapsed(),
        Duration::from_secs(300),
    )
}

fn brute_force_open_path(points: &[[f64; 3]]) -> f64 {
    fn go(pts: &[[f64; 3]], path: &mut Vec<usize>, used: &mut [bool], len: f64, best: &mut f64) {
        if path.len() == pts.len() {
            *best = best.min(len);
            return;
        }
        for j in 0..pts.len() {
            if used[j] {
                continue;
            }
            // fix the orientation: the first endpoint has the lower index
            if path.len() + 1 == pts.len() && j < path[0] {
                continue;
            }
            let step = path.last().map_or(0.0, |&l| {
                let d = [pts[l][0] - pts[j][0], pts[l][1] - pts[j][1], pts[l][2] - pts[j][2]];
                (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
            });
            used[j] = true;
            path.push(j);
            go(pts, path, used, len + step, best);
            path.pop();
            used[j] = false;
        }
    }
    let mut best = f64::INFINITY;
    go(points, &mut Vec::new(), &mut vec![false; points.len()], 0.0, &mut best);
    best
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut cube = |n: usize| -> Vec<[f64; 3]> { (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect() };
    let mut improves = true;
    for _ in 0..100 {
        let pts = cube(40);
        let nn = order_tour(&pts, TourMethod::NearestNeighbor, 50).unwrap();
        let two = order_tour(&pts, TourMethod::NnPlus2opt, 50).unwrap();
        improves &= two.length <= nn.length;
        improves &= (path_length(&pts, &two.order) - two.length).abs() <= 1e-9 * two.length;
    }
    let mut ratios = Vec::new();
    for _ in 0..20 {
        let pts = cube(8);
        let two = order_tour(&pts, TourMethod::NnPlus2opt, 50).unwrap();
        ratios.push(two.length / brute_force_open_path(&pts));
    }
    let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = ratios.iter().cloned().fold(0.0, f64::max);
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    outcome(
        improves && min >= 1.0 - 1e-12,
        format!("2-opt <= NN on 100 instances: {improves}; 8-point 2-opt/optimal ratio min {min:.4} mean {mean:.4} max {max:.4}"),
    )
}

fn criterion_10() -> Outcome {
    let g = hemisphere();
    let plan = build_plan(&g, &SampleSet::full(&g), TourMethod::NnPlus2opt, 50).unwrap();
    let doc = emit_dmis(&plan, "HEMI").unwrap();
    let golden_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/hemisphere_321.dmis");
    let golden = std::fs::read(&golden_path).unwrap_or_default();
    let count = doc.lines().filter(|l| l.starts_with("PTMEAS/")).count();
    outcome(
        doc.as_bytes() == golden.as_slice() && count == 321,
        format!(
            "{count} PTMEAS lines; {} bytes vs golden {} bytes",
            doc.len(),
            golden.len()
        ),
    )
}

fn run_pipeline(dir: &Path) {
    let full = PipelineConfig {
        geometry: GeometryConfig::SphericalCap {
            radius: 1.0,
            half_angle: FRAC_PI_2,
            node_count: 321,
        },
        sweep: SweepSection {
            complexities: Some(vec![5, 15, 30]),
            sample_counts: Some(vec![60, 120, 321]),
            trials: 3,
            noise_sigma: 1e-4,
            max_modes: Some(30),
            ..SweepSection::default()
        },
        ..PipelineConfig::default()
    };
    let mut full = full;
    full.paths.output_dir = dir.join("full");
    for cmd in [
        Subcommand::Plan,
        Subcommand::Simulate,
        Subcommand::Decompose,
        Subcommand::Reconstruct,
        Subcommand::Interpolate,
        Subcommand::Sweep,
    ] {
        run_subcommand(cmd, &full).unwrap();
    }
    let mut sparse = full.clone();
    sparse.paths.output_dir = dir.join("sparse");
    sparse.sampling.q = Some(80);
    sparse.sampling.max_modes = Some(30);
    for cmd in [Subcommand::Plan, Subcommand::Simulate, Subcommand::Interpolate] {
        run_subcommand(cmd, &sparse).unwrap();
    }
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["full", "sparse"] {
        let mut names: Vec<_> = std::fs::read_dir(dir.join(sub))
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        for n in names {
            let bytes = std::fs::read(dir.join(sub).join(&n)).unwrap();
            out.push((format!("{sub}/{n}"), bytes));
        }
    }
    out
}

fn criterion_11() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_pipeline(a.path());
    run_pipeline(b.path());
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    let differing: Vec<&str> = ta
        .iter()
        .zip(&tb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    outcome(
        ta.len() == tb.len() && differing.is_empty() && ta.len() >= 15,
        format!("{} artifacts compared, differing {differing:?}", ta.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("eigen correctness", criterion_1),
        ("exact recovery", criterion_2),
        ("metric coefficients", criterion_3),
        ("residual curve", criterion_4),
        ("signature correlation", criterion_5),
        ("rigid/size structure", criterion_6),
        ("interpolation order of magnitude", criterion_7),
        ("sweep trends", criterion_8),
        ("tour heuristics", criterion_9),
        ("DMIS golden file", criterion_10),
        ("determinism", criterion_11),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let label = format!("criterion {:>2} {name}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| label.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let result = std::panic::catch_unwind(run)
            .unwrap_or_else(|_| outcome(false, "panicked"));
        let status = if result.pass { "PASS" } else { "FAIL" };
        println!("{status} {label} ({:.2?}): {}", t.elapsed(), result.detail);
        failed += usize::from(!result.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
