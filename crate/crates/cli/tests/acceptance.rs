//! Acceptance checks: one PASS/FAIL line per criterion, non-zero exit when
//! any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use coropve_cli::case::{generate_case, Suite};
use coropve_cli::config::PipelineConfig;
use coropve_cli::pipeline::{calibrate_model, run_case, run_cases, train, CaseOutcome, ModeOutcome};
use coropve_core::flowsim::{
    build_network, outlet_resistances, poiseuille_resistance, segment_resistance, simulate_tree, solve_flow,
    FlowConfig, Segment, VesselTree,
};
use coropve_core::graphcut::{solve_min_cut, unary_cost, SegmentationGraph, UnaryCost};
use coropve_core::io::TreeSide;
use coropve_core::likelihood::{knn_lumen_probability, RayDatabase};
use coropve_core::metrics::{delong_test, roc_auc, Direction};
use coropve_core::phantom::{axial_cross_profile, fwhm_radius, generate_phantom, PhantomSpec, RadiusProfile};
use coropve_core::pve::{detect_pve, estimate_radius, IntensityProfile};
use coropve_core::Point3;

type Check = Result<String, String>;

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Check + 'a>);

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, format!("took {:.1} s, limit {limit_s} s", elapsed.as_secs_f64()))
}

fn vessel(profile: RadiusProfile, length_mm: f64, noise_sigma_hu: f64) -> PhantomSpec {
    PhantomSpec {
        length_mm,
        radius_profile: profile,
        plaque_segments: vec![],
        lumen_hu: 400.0,
        background_hu: 0.0,
        psf_sigma_mm: 0.6,
        voxel_spacing_mm: [0.5; 3],
        noise_sigma_hu,
    }
}

// ---------------------------------------------------------------- 1

fn fwhm_overestimation() -> Check {
    let t0 = Instant::now();
    let fwhm = |r: f64| {
        let mut spec = vessel(RadiusProfile::constant(r), 1.0, 0.0);
        spec.voxel_spacing_mm = [0.1; 3];
        let t = generate_phantom(&spec, 0).unwrap();
        let (profile, spacing) = axial_cross_profile(&t.volume, 0.5);
        fwhm_radius(&profile, spacing, spec.background_hu).unwrap()
    };
    let mut detail = Vec::new();
    for r in [0.4, 0.6, 0.8] {
        let f = fwhm(r);
        detail.push(format!("r {r}: {f:.3}"));
        ensure(f > r, format!("fwhm {f} does not exceed radius {r}"))?;
    }
    let big = fwhm(3.0);
    detail.push(format!("r 3: {big:.3}"));
    ensure((big - 3.0).abs() / 3.0 < 0.05, format!("fwhm {big} not within 5% of 3 mm"))?;
    within(t0.elapsed(), 5.0)?;
    Ok(detail.join(", "))
}

// ---------------------------------------------------------------- 2

fn radius_model_recovery() -> Check {
    let t0 = Instant::now();
    let (model, _) = calibrate_model(&[0.8, 1.2, 1.6, 2.0], 400.0, 0.0, 0.6).map_err(|e| e.to_string())?;
    let held_out = [0.6, 1.0, 1.4];
    let mut sq = 0.0;
    for d in held_out {
        let mut spec = vessel(RadiusProfile::constant(d / 2.0), 3.0, 0.0);
        spec.voxel_spacing_mm = [0.2; 3];
        let t = generate_phantom(&spec, 0).unwrap();
        let center = t.volume.sample_trilinear(&Point3::new(0.0, 0.0, 1.5));
        let r = estimate_radius(&model, center / spec.lumen_hu);
        sq += (r - d / 2.0).powi(2);
    }
    let rmse = (sq / held_out.len() as f64).sqrt();
    ensure(rmse <= 0.15, format!("rmse {rmse:.4} mm > 0.15 mm"))?;
    within(t0.elapsed(), 30.0)?;
    Ok(format!("alpha {:.4} mm, beta {:.4} mm, held-out rmse {rmse:.4} mm", model.alpha_mm, model.beta_mm))
}

// ---------------------------------------------------------------- 3

fn robust_fit() -> Check {
    let t0 = Instant::now();
    let mut rng = rng(2024);
    let mut removed = 0;
    for trial in 0..100 {
        let n = rng.random_range(80..200);
        let dip_len = rng.random_range(3..10);
        let sigma: f64 = rng.random_range(5.0..20.0);
        let (c0, c1, c2) = (rng.random_range(300.0..500.0), rng.random_range(-2.0..2.0), rng.random_range(-0.02..0.02));
        let start = rng.random_range(5..n - dip_len - 5);
        let s: Vec<f64> = (0..n).map(|i| i as f64 * 0.5).collect();
        let truth: Vec<bool> = (0..n).map(|i| (start..start + dip_len).contains(&i)).collect();
        // +-sigma sign noise: standard deviation sigma, bounded inside the 2-sigma band
        let y: Vec<f64> = s
            .iter()
            .zip(&truth)
            .map(|(&x, &dip)| {
                let noise = if rng.random::<bool>() { sigma } else { -sigma };
                c0 + c1 * x + c2 * x * x + noise - if dip { 5.0 * sigma } else { 0.0 }
            })
            .collect();
        let m = detect_pve(&IntensityProfile::new(s, y).unwrap()).map_err(|e| e.to_string())?;
        ensure(m.pve_mask == truth, format!("instance {trial}: flagged set differs from the dip"))?;
        if let Some(s1) = m.phase1_sigma {
            removed += 1;
            ensure(m.sigma <= s1, format!("instance {trial}: phase-2 sigma {} > phase-1 {s1}", m.sigma))?;
        }
    }
    within(t0.elapsed(), 5.0)?;
    Ok(format!("100/100 exact, {removed} refits with sigma non-increasing"))
}

// ---------------------------------------------------------------- 4

fn knn_likelihood() -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let mut rng = rng(seed);
        let n_radii = 8;
        let radii: Vec<f64> = (1..=n_radii).map(|k| k as f64 * 0.5).collect();
        let mut db = RayDatabase::new(radii, rng.random_range(0.2..2.0), 10).unwrap();
        for _ in 0..50 {
            let ray: Vec<f64> = (0..n_radii).map(|_| rng.random_range(-1.0..1.0)).collect();
            let cut = rng.random_range(0..=n_radii);
            let labels: Vec<bool> = (0..n_radii).map(|j| j < cut).collect();
            db.push(&ray, &labels).unwrap();
        }
        for _ in 0..5 {
            let test: Vec<f64> = (0..n_radii).map(|_| rng.random_range(-1.0..1.0)).collect();
            let got = knn_lumen_probability(&db, &test, 10).map_err(|e| e.to_string())?;
            // exhaustive scan: every ray sorted by (distance, index), first 10 kept
            let mut d: Vec<(f64, usize)> = (0..db.n_rays())
                .map(|r| (db.intensity_ray(r).iter().zip(&test).map(|(a, b)| (a - b) * (a - b)).sum(), r))
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let nearest = &d[..10];
            let w: Vec<f64> = nearest.iter().map(|&(dist, _)| (-db.kernel_lambda * dist).exp()).collect();
            let total: f64 = w.iter().sum();
            for (j, g) in got.iter().enumerate() {
                let want =
                    nearest.iter().zip(&w).filter(|((_, r), _)| db.label_ray(*r)[j]).map(|(_, w)| w).sum::<f64>()
                        / total;
                worst = worst.max((g - want).abs());
            }
        }
    }
    ensure(worst <= 1e-12, format!("max deviation {worst:e} > 1e-12"))?;
    Ok(format!("100 databases, max deviation {worst:.1e}"))
}

// ---------------------------------------------------------------- 5

fn random_graph(
    rng: &mut ChaCha8Rng,
    n_rays: usize,
    ray_len: usize,
    pair_prob: f64,
) -> (SegmentationGraph, Vec<Vec<usize>>) {
    let n = n_rays * ray_len;
    let unary = (0..n)
        .map(|_| {
            if rng.random_bool(0.5) {
                unary_cost(rng.random())
            } else {
                UnaryCost { lumen: rng.random_range(0.0..4.0), background: rng.random_range(0.0..4.0) }
            }
        })
        .collect();
    let mut g = SegmentationGraph::new(unary, rng.random_range(0.1..3.0));
    let rays: Vec<Vec<usize>> = (0..n_rays).map(|r| (r * ray_len..(r + 1) * ray_len).collect()).collect();
    for ray in &rays {
        for j in 1..ray.len() {
            g.add_star(ray[j], ray[j - 1]);
        }
    }
    for p in 0..n {
        for q in p + 1..n {
            if rng.random_bool(pair_prob) {
                g.add_pair(p, q, rng.random_range(0.0..2.0));
            }
        }
    }
    (g, rays)
}

fn min_cut_optimality() -> Check {
    let t0 = Instant::now();
    let mut rng = rng(8);
    for trial in 0..200 {
        let n_rays = rng.random_range(1..=4);
        let ray_len = rng.random_range(1..=12 / n_rays);
        let (g, _) = random_graph(&mut rng, n_rays, ray_len, 0.4);
        let n = g.n_vertices();
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << n) {
            let labels: Vec<bool> = (0..n).map(|v| mask >> v & 1 == 1).collect();
            if g.is_star_feasible(&labels) {
                best = best.min(g.energy(&labels));
            }
        }
        let solved = solve_min_cut(&g);
        ensure(g.is_star_feasible(&solved.labels), format!("small graph {trial}: infeasible labeling"))?;
        ensure(solved.energy == best, format!("small graph {trial}: energy {} vs brute force {best}", solved.energy))?;
    }
    for trial in 0..20 {
        let (g, rays) = random_graph(&mut rng, 12, 10, 0.02);
        let solved = solve_min_cut(&g);
        ensure(g.is_star_feasible(&solved.labels), format!("mid-size graph {trial}: infeasible labeling"))?;
        for _ in 0..1000 {
            let mut labels = vec![false; g.n_vertices()];
            for ray in &rays {
                for &v in &ray[..rng.random_range(0..=ray.len())] {
                    labels[v] = true;
                }
            }
            let e = g.energy(&labels);
            ensure(solved.energy <= e, format!("mid-size graph {trial}: random labeling {e} beats {}", solved.energy))?;
        }
    }
    within(t0.elapsed(), 60.0)?;
    Ok("200 small graphs exact, 20 mid-size graphs below 1000 random labelings each".into())
}

// ---------------------------------------------------------------- 6

fn clean_cylinder(suite: &Suite) -> Check {
    let cfg = PipelineConfig::default();
    let training = train(&cfg, &suite.training).map_err(|e| e.to_string())?;
    let truth = generate_case(&vessel(RadiusProfile::constant(2.0), 15.0, 0.0), 0).map_err(|e| e.to_string())?;
    let case = run_case("cylinder", truth, &training, &cfg).map_err(|e| e.to_string())?;
    let step = cfg.grid.radii_mm[1] - cfg.grid.radii_mm[0];
    let mut detail = Vec::new();
    for (name, m) in [("on", &case.on), ("off", &case.off)] {
        let s = m.score;
        detail.push(format!("{name}: dice {:.4} maxsd {:.3} mm", s.dice, s.maxsd_mm));
        ensure(s.dice >= 0.95, format!("pve {name}: dice {} < 0.95", s.dice))?;
        ensure(s.maxsd_mm <= 2.0 * step + 1e-9, format!("pve {name}: maxsd {} > {} mm", s.maxsd_mm, 2.0 * step))?;
    }
    let planes = case.on.segmentation.pve_planes();
    if planes == 0 {
        let bytes = |m: &ModeOutcome| serde_json::to_vec(&m.segmentation.surface).unwrap();
        ensure(bytes(&case.on) == bytes(&case.off), "no partial-volume planes but surfaces differ")?;
        detail.push("no partial-volume planes, surfaces bit-identical".into());
    } else {
        detail.push(format!("{planes} partial-volume planes, bit-identity not applicable"));
    }
    Ok(detail.join("; "))
}

// ---------------------------------------------------------------- 7

fn ablation_direction(suite: &Suite) -> Check {
    let t0 = Instant::now();
    let cfg = PipelineConfig::default();
    let training = train(&cfg, &suite.training).map_err(|e| e.to_string())?;
    let outcomes = run_cases(&cfg, suite, &training).map_err(|e| e.to_string())?;
    let n = outcomes.len();
    let narrower: Vec<_> = outcomes.iter().filter(|c| c.on.min_diameter_mm() <= c.off.min_diameter_mm()).collect();
    let frac = narrower.len() as f64 / n as f64;
    ensure(frac >= 0.9, format!("pve-on diameter <= pve-off in {}/{n} cases", narrower.len()))?;
    for c in &narrower {
        ensure(c.on.ffr() <= c.off.ffr(), format!("{}: ffr on {:.4} > off {:.4}", c.id, c.on.ffr(), c.off.ffr()))?;
    }
    within(t0.elapsed(), 300.0)?;
    let mean = |f: &dyn Fn(&CaseOutcome) -> f64| outcomes.iter().map(f).sum::<f64>() / n as f64;
    Ok(format!(
        "diameter on <= off in {}/{n}, ffr on <= off in all of them; mean min diameter on {:.3} off {:.3} truth {:.3} mm, \
         mean ffr on {:.3} off {:.3} truth {:.3}",
        narrower.len(),
        mean(&|c| c.on.min_diameter_mm()),
        mean(&|c| c.off.min_diameter_mm()),
        mean(&|c| c.truth_surface.min_effective_diameter()),
        mean(&|c| c.on.ffr()),
        mean(&|c| c.off.ffr()),
        mean(&|c| c.truth_flow.min_outlet_ffr),
    ))
}

// ---------------------------------------------------------------- 8

fn uniform(branch: usize, start: f64, end: f64, d: f64, parent: usize, child: usize) -> Segment {
    Segment {
        branch,
        start_mm: start,
        end_mm: end,
        profile: vec![[start, d], [end, d]],
        parent_node: parent,
        child_node: child,
    }
}

fn tree(segments: Vec<Segment>) -> VesselTree {
    VesselTree { n_nodes: segments.len() + 1, segments, tree_side: TreeSide::Left }
}

fn flow_solver() -> Check {
    let err = |e: coropve_core::flowsim::FlowError| e.to_string();
    // voltage divider
    let cfg = FlowConfig { outlet_scale: Some(30.0), ..FlowConfig::default() };
    let t = tree(vec![uniform(0, 0.0, 40.0, 2.0, 0, 1)]);
    let r = poiseuille_resistance(cfg.viscosity_pa_s, 40.0, 2.0);
    let res = solve_flow(&build_network(&t, &cfg).map_err(err)?).map_err(err)?;
    let oracle = 100.0 * 30.0 / (r + 30.0);
    let divider = (res.node_pressures[1] - oracle).abs() / oracle;
    ensure(divider < 1e-9, format!("voltage divider relative error {divider:e}"))?;

    // bifurcation
    let cfg = FlowConfig::default();
    let t = tree(vec![
        uniform(0, 0.0, 30.0, 3.0, 0, 1),
        uniform(0, 30.0, 60.0, 2.0, 1, 2),
        uniform(1, 0.0, 30.0, 2.5, 1, 3),
    ]);
    let q = solve_flow(&build_network(&t, &cfg).map_err(err)?).map_err(err)?.edge_flows;
    let conservation = (q[0] - q[1] - q[2]).abs();
    ensure(conservation < 1e-9, format!("bifurcation imbalance {conservation:e} mL/s"))?;

    // nonlinear single edge against bisection
    let profile: Vec<[f64; 2]> = (0..=40)
        .map(|k| {
            let s = k as f64;
            let w = if (s - 20.0).abs() < 6.0 {
                0.5 * (1.0 + (std::f64::consts::PI * (s - 20.0) / 6.0).cos())
            } else {
                0.0
            };
            [s, 3.0 - 2.0 * w]
        })
        .collect();
    let seg = Segment { branch: 0, start_mm: 0.0, end_mm: 40.0, profile, parent_node: 0, child_node: 1 };
    let (r_lin, r_quad) = segment_resistance(&seg, &cfg);
    let r_out = cfg.resolved_outlet_scale();
    let f = |q: f64| r_lin * q + r_quad * q * q + r_out * q - 100.0;
    let (mut lo, mut hi) = (0.0, 100.0 / r_out);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let q_oracle = 0.5 * (lo + hi);
    let q = solve_flow(&build_network(&tree(vec![seg]), &cfg).map_err(err)?).map_err(err)?.edge_flows[0];
    let bisection = (q - q_oracle).abs();
    ensure(r_quad > 0.0 && bisection < 1e-9, format!("nonlinear edge off by {bisection:e} mL/s"))?;

    // healthy tree
    let t = tree(vec![
        uniform(0, 0.0, 50.0, 3.0, 0, 1),
        uniform(0, 50.0, 90.0, 3.0, 1, 2),
        uniform(1, 0.0, 40.0, 3.0, 1, 3),
    ]);
    let healthy = simulate_tree(&t, &cfg).map_err(err)?.min_outlet_ffr;
    ensure(healthy >= 0.97, format!("healthy tree ffr {healthy} < 0.97"))?;

    // outlet resistance ratio
    let r = outlet_resistances(&[1.0, 8.0], -1.0 / 3.0, 10.0);
    ensure(r[1] / r[0] == 0.5, format!("diameter ratio 8 gives resistance ratio {}", r[1] / r[0]))?;

    Ok(format!(
        "divider {divider:.1e}, conservation {conservation:.1e} mL/s, bisection {bisection:.1e} mL/s, \
         healthy ffr {healthy:.4}, ratio 0.5"
    ))
}

// ---------------------------------------------------------------- 9

fn all_pairs_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut half_units, mut pairs) = (0u64, 0u64);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1;
                half_units += if si > sj {
                    2
                } else if si == sj {
                    1
                } else {
                    0
                };
            }
        }
    }
    (half_units as f64 / 2.0) / pairs as f64
}

fn permutation_p(a: &[f64], b: &[f64], labels: &[bool], resamples: usize, seed: u64) -> f64 {
    let observed = (all_pairs_auc(a, labels) - all_pairs_auc(b, labels)).abs();
    let mut rng = rng(seed);
    let (mut pa, mut pb) = (a.to_vec(), b.to_vec());
    let mut extreme = 0usize;
    for _ in 0..resamples {
        for k in 0..a.len() {
            (pa[k], pb[k]) = if rng.random::<bool>() { (b[k], a[k]) } else { (a[k], b[k]) };
        }
        if (all_pairs_auc(&pa, labels) - all_pairs_auc(&pb, labels)).abs() >= observed - 1e-12 {
            extreme += 1;
        }
    }
    extreme as f64 / resamples as f64
}

fn statistics() -> Check {
    let auc =
        |s: &[f64], l: &[bool]| roc_auc(s, l, Direction::HigherIsPositive).map(|r| r.auc).map_err(|e| e.to_string());
    let mut rng = self::rng(21);
    for trial in 0..100 {
        let n = rng.random_range(2..80);
        let labels: Vec<bool> = loop {
            let l: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            if l.iter().any(|&x| x) && l.iter().any(|&x| !x) {
                break l;
            }
        };
        // whole-number scores: ties are common and every transform below
        // is exact and strictly increasing on them
        let scores: Vec<f64> =
            labels.iter().map(|&l| ((rng.random::<f64>() + if l { 0.3 } else { 0.0 }) * 20.0).round()).collect();
        let a = auc(&scores, &labels)?;
        ensure(
            a == all_pairs_auc(&scores, &labels),
            format!("instance {trial}: auc {a} differs from all-pairs count"),
        )?;
        for (name, f) in
            [("affine", (|x: f64| 3.0 * x - 7.0) as fn(f64) -> f64), ("cube", |x| x * x * x), ("exp", f64::exp)]
        {
            let t: Vec<f64> = scores.iter().map(|&x| f(x)).collect();
            ensure(auc(&t, &labels)? == a, format!("instance {trial}: {name} transform changes auc"))?;
        }
    }

    let normal = Normal::new(0.0, 1.0).unwrap();
    let results: Vec<(f64, f64)> = (0..10u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + k);
            let (shift_a, shift_b) = (1.2 + 0.05 * k as f64, 0.9 + 0.03 * k as f64);
            let labels: Vec<bool> = (0..60).map(|i| i % 2 == 0).collect();
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for &l in &labels {
                let shared = normal.sample(&mut rng);
                let y = if l { 1.0 } else { 0.0 };
                a.push(y * shift_a + 0.7 * shared + 0.7 * normal.sample(&mut rng));
                b.push(y * shift_b + 0.7 * shared + 0.7 * normal.sample(&mut rng));
            }
            let p = delong_test(&a, &b, &labels, Direction::HigherIsPositive).map(|d| d.p_value).unwrap_or(f64::NAN);
            (p, permutation_p(&a, &b, &labels, 100_000, 100 + k))
        })
        .collect();
    let mut worst: f64 = 0.0;
    for (k, (p, oracle)) in results.iter().enumerate() {
        let d = (p - oracle).abs();
        ensure(d <= 0.05, format!("dataset {k}: delong p {p:.4} vs permutation {oracle:.4}"))?;
        worst = worst.max(d);
    }
    Ok(format!("100 instances exact and transform-invariant; delong vs permutation max |dp| {worst:.4}"))
}

// ---------------------------------------------------------------- 10

fn coropve(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_coropve"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
}

fn sweep_dice(path: &Path) -> Result<Vec<(String, f64)>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            Ok((f[0].to_string(), f[1].parse::<f64>().map_err(|e| e.to_string())?))
        })
        .collect()
}

fn parameter_sensitivity(suite_dir: &Path, out: &Path) -> Check {
    let mut detail = Vec::new();
    for (param, values) in [("lambda", "0.875,1.75,3.5"), ("k", "50,100,200")] {
        let csv = out.join(format!("sweep-{param}.csv"));
        coropve(&[
            "sweep",
            "--param",
            param,
            "--values",
            values,
            "--cases",
            path_str(suite_dir),
            "--out",
            path_str(&csv),
        ])?;
        let rows = sweep_dice(&csv)?;
        ensure(rows.len() == 3, format!("{param}: expected 3 rows, got {}", rows.len()))?;
        let lo = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
        let hi = rows.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
        let cells: Vec<String> = rows.iter().map(|(v, d)| format!("{v}: {d:.4}")).collect();
        detail.push(format!("{param} [{}] spread {:.4}", cells.join(", "), hi - lo));
        ensure(hi - lo <= 0.05, format!("{param}: mean dice changes by {:.4} > 0.05", hi - lo))?;
    }
    detail.push(format!("csv in {}", out.display()));
    Ok(detail.join("; "))
}

// ---------------------------------------------------------------- 11

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn tree_bytes(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism(suite_dir: &Path, out: &Path) -> Check {
    let (a, b) = (out.join("run-a"), out.join("run-b"));
    coropve(&["pipeline", "run", "--cases", path_str(suite_dir), "--out", path_str(&a)])?;
    coropve(&["pipeline", "run", "--cases", path_str(suite_dir), "--out", path_str(&b)])?;
    let (ta, tb) = (tree_bytes(&a), tree_bytes(&b));
    ensure(!ta.is_empty(), "empty output tree")?;
    let names = |t: &[(PathBuf, Vec<u8>)]| t.iter().map(|(p, _)| p.clone()).collect::<Vec<_>>();
    ensure(names(&ta) == names(&tb), "output trees list different files")?;
    let total: usize = ta.iter().map(|(_, b)| b.len()).sum();
    for ((p, x), (_, y)) in ta.iter().zip(&tb) {
        ensure(x == y, format!("{} differs", p.display()))?;
    }
    Ok(format!("{} files, {total} bytes identical", ta.len()))
}

// ----------------------------------------------------------------

/// Cylinders for training; stenoses with minimum radii 0.40..0.70 mm for
/// testing.
fn stenosis_suite() -> Suite {
    let training = [1.0, 1.5, 2.0, 2.5]
        .iter()
        .map(|&r| (format!("cyl-{r:.1}"), vessel(RadiusProfile::constant(r), 20.0, 10.0)))
        .collect();
    let test = (0..11)
        .map(|k| {
            let min_r = 0.40 + 0.03 * k as f64;
            let center = 14.0 + (k % 3) as f64 * 2.0;
            let half_width = 5.0 + (k % 2) as f64;
            let profile = RadiusProfile::cosine_stenosis(1.5, min_r, center, half_width, 0.5);
            (format!("sten-{min_r:.2}"), vessel(profile, 30.0, 10.0))
        })
        .collect();
    Suite { training, test }
}

fn main() {
    let out = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = std::fs::remove_dir_all(&out);
    let suite = stenosis_suite();
    let suite_dir = out.join("suite");
    suite.save(&suite_dir).expect("suite written");

    let criteria: Vec<Criterion> = vec![
        ("FWHM overestimates sub-resolution radii", Box::new(fwhm_overestimation)),
        ("radius model recovers held-out diameters", Box::new(radius_model_recovery)),
        ("robust fit flags injected dips exactly", Box::new(robust_fit)),
        ("KNN likelihood matches exhaustive scan", Box::new(knn_likelihood)),
        ("min-cut is optimal", Box::new(min_cut_optimality)),
        ("clean cylinder segmented in both modes", Box::new(|| clean_cylinder(&suite))),
        ("partial-volume override narrows stenoses", Box::new(|| ablation_direction(&suite))),
        ("flow solver analytic cases", Box::new(flow_solver)),
        ("AUC and DeLong statistics", Box::new(statistics)),
        ("parameter sensitivity of mean Dice", Box::new(|| parameter_sensitivity(&suite_dir, &out))),
        ("pipeline runs are byte-identical", Box::new(|| determinism(&suite_dir, &out))),
    ];

    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t0.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {:>2} {name} ({secs:.1} s): {detail}", k + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name} ({secs:.1} s): {why}", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
