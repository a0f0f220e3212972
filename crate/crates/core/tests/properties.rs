use coropve_core::flowsim::{build_network, solve_flow, FlowConfig, Segment, VesselTree};
use coropve_core::graphcut::{solve_min_cut, SegmentationGraph, UnaryCost};
use coropve_core::io::{
    load_cylindrical, load_volume, plane_frames, save_cylindrical, save_volume, warp_to_cylindrical, Centerline,
    CenterlineTree, Dtype, GridSpec, TreeSide, Volume, VolumeGeometry, DEFAULT_MAX_POINT_SPACING_MM,
};
use coropve_core::likelihood::{combine_probability, knn_lumen_probability, RayDatabase};
use coropve_core::metrics::{confusion, dice, roc_auc, Direction};
use coropve_core::phantom::{fwhm_radius, gaussian_blur, hu_reduction_curve};
use coropve_core::pve::{detect_pve, estimate_radius, IntensityProfile, RadiusModel};
use coropve_core::Point3;
use proptest::collection::vec;
use proptest::prelude::*;

mod common;

fn point() -> impl Strategy<Value = Point3> {
    (-20.0f64..20.0, -20.0f64..20.0, -20.0f64..20.0).prop_map(|(x, y, z)| Point3::new(x, y, z))
}

/// Polyline with steps of 0.2 to 3 mm and bounded turning.
fn centerline() -> impl Strategy<Value = Centerline> {
    (point(), vec((0.2f64..3.0, -0.6f64..0.6, -0.6f64..0.6), 1..25)).prop_map(|(start, steps)| {
        let mut pts = vec![start];
        let mut dir = Point3::new(0.0, 0.0, 1.0);
        for (len, a, b) in steps {
            dir = (dir + Point3::new(a, b, 0.3 * a * b)).normalize();
            let last = *pts.last().unwrap();
            pts.push(last + dir * len);
        }
        Centerline::new(pts).unwrap()
    })
}

fn small_volume() -> impl Strategy<Value = Volume<f64>> {
    (1usize..7, 1usize..7, 1usize..7, 0.3f64..2.0).prop_flat_map(|(nx, ny, nz, h)| {
        vec(-1000.0f64..3000.0, nx * ny * nz).prop_map(move |values| {
            let g = VolumeGeometry::new([nx, ny, nz], [h, h * 1.1, h * 0.9], [-1.0, 2.0, 3.0]).unwrap();
            Volume::new(g, values).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn plane_count_and_orthonormal_frames(cl in centerline(), spacing in 0.2f64..2.0) {
        let frames = plane_frames(&cl, spacing);
        prop_assert_eq!(frames.len(), (cl.length() / spacing + 1e-9).floor() as usize + 1);
        for f in &frames {
            for (a, b) in [(f.u, f.v), (f.u, f.normal), (f.v, f.normal)] {
                prop_assert!(a.dot(&b).abs() < 1e-10);
            }
            for w in [f.u, f.v, f.normal] {
                prop_assert!((w.norm() - 1.0).abs() < 1e-10);
            }
            prop_assert!((f.normal - cl.tangent_at(f.arc_length)).norm() < 1e-10);
        }
    }

    #[test]
    fn centerline_arc_length_is_strictly_increasing(cl in centerline()) {
        let s = cl.arc_length();
        prop_assert_eq!(s[0], 0.0);
        prop_assert!(s.windows(2).all(|w| w[1] > w[0]));
        let dense = cl.resampled(DEFAULT_MAX_POINT_SPACING_MM);
        prop_assert!(dense.arc_length().windows(2).all(|w| w[1] - w[0] <= DEFAULT_MAX_POINT_SPACING_MM + 1e-9));
        prop_assert!((dense.length() - cl.length()).abs() < 1e-9);
    }

    #[test]
    fn centerline_tree_round_trip(cl in centerline()) {
        let tree = CenterlineTree::single(cl.resampled(DEFAULT_MAX_POINT_SPACING_MM), TreeSide::Left);
        let back = CenterlineTree::from_json_slice(&tree.to_json(), DEFAULT_MAX_POINT_SPACING_MM).unwrap();
        prop_assert_eq!(back.branches.len(), 1);
        for (a, b) in back.branches[0].points().iter().zip(tree.branches[0].points()) {
            prop_assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn volume_round_trip(vol in small_volume()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.vol.json");
        save_volume(&path, &vol, Dtype::Float64).unwrap();
        prop_assert_eq!(&load_volume(&path).unwrap(), &vol);
        let rounded = vol.map(|v| v.round());
        save_volume(&path, &rounded, Dtype::Int16).unwrap();
        prop_assert_eq!(load_volume(&path).unwrap(), rounded);
    }

    #[test]
    fn cylindrical_round_trip(vol in small_volume(), n_angles in 3usize..9) {
        let g = *vol.geometry();
        let a = g.voxel_center(0, 0, 0);
        let b = g.voxel_center(g.dims[0] - 1, g.dims[1] - 1, g.dims[2] - 1) + Point3::new(0.5, 0.0, 0.5);
        let cl = Centerline::straight(a, b, 0.5).unwrap();
        let spec = GridSpec { plane_spacing_mm: 0.5, n_angles, radii_mm: vec![0.2, 0.5, 1.0] };
        let grid = warp_to_cylindrical(&vol, &cl, &spec).unwrap();
        prop_assert!(grid.intensities.iter().all(|v| v.is_finite()));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.cyl.json");
        save_cylindrical(&path, &grid).unwrap();
        let back = load_cylindrical(&path).unwrap();
        prop_assert_eq!(back.radii(), grid.radii());
        for (x, y) in back.intensities.iter().zip(&grid.intensities) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn blur_conserves_total(vol in small_volume(), sigma in 0.1f64..1.5) {
        let vol = vol.map(|v| v.abs() + 1.0);
        let (a, b) = (gaussian_blur(&vol, sigma).sum(), vol.sum());
        prop_assert!(((a - b) / b).abs() < 1e-3);
    }

    #[test]
    fn reduction_decreases_with_diameter(d in 0.2f64..6.0, step in 0.05f64..2.0, psf in 0.3f64..1.0) {
        let c = hu_reduction_curve(&[d, d + step], 400.0, 0.0, psf);
        prop_assert!(c[1].1 < c[0].1 || c[1].1 < 1e-9);
    }

    #[test]
    fn fwhm_never_underestimates_blurred_tube(r in 0.2f64..1.2, s in 0.3f64..0.9) {
        use statrs::function::erf::erf;
        let h = 0.01;
        let k = std::f64::consts::SQRT_2 * s;
        let profile: Vec<f64> = (-600..=600).map(|i| { let x = i as f64 * h; 200.0 * (erf((x + r) / k) - erf((x - r) / k)) }).collect();
        prop_assert!(fwhm_radius(&profile, h, 0.0).unwrap() >= r - h);
    }

    #[test]
    fn robust_phase_never_inflates_sigma(
        c in (300.0f64..500.0, -2.0f64..2.0, -0.02f64..0.02),
        noise in vec(-15.0f64..15.0, 40..120),
        dip in (0usize..30, 1usize..8, 0.0f64..120.0),
    ) {
        let n = noise.len();
        let s: Vec<f64> = (0..n).map(|i| i as f64 * 0.5).collect();
        let y: Vec<f64> = s.iter().zip(&noise).enumerate()
            .map(|(i, (&x, e))| c.0 + c.1 * x + c.2 * x * x + e - if (dip.0..dip.0 + dip.1).contains(&i) { dip.2 } else { 0.0 })
            .collect();
        let m = detect_pve(&IntensityProfile::new(s, y).unwrap()).unwrap();
        prop_assert!(m.sigma <= m.phase1_sigma.unwrap() + 1e-9);
    }

    #[test]
    fn estimated_radius_is_monotone(alpha in -4.0f64..-0.1, beta in 0.1f64..4.0, a in 0.0f64..1.5, b in 0.0f64..1.5) {
        let m = RadiusModel::new(alpha, beta).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(estimate_radius(&m, lo) <= estimate_radius(&m, hi));
        prop_assert!(estimate_radius(&m, lo) >= 0.25);
    }

    #[test]
    fn knn_probability_is_bounded_and_duplication_invariant(
        rays in vec((vec(-200.0f64..600.0, 5), 0usize..=5), 3..30),
        test in vec(-200.0f64..600.0, 5),
        k in 1usize..10,
    ) {
        let radii = vec![0.5, 1.0, 1.5, 2.0, 2.5];
        let mut db = RayDatabase::new(radii.clone(), 1e-4, k).unwrap();
        let mut twice = RayDatabase::new(radii, 1e-4, 2 * k).unwrap();
        for (ray, cut) in &rays {
            let labels: Vec<bool> = (0..5).map(|j| j < *cut).collect();
            db.push(ray, &labels).unwrap();
        }
        for _ in 0..2 {
            for (ray, cut) in &rays {
                let labels: Vec<bool> = (0..5).map(|j| j < *cut).collect();
                twice.push(ray, &labels).unwrap();
            }
        }
        let k = k.min(rays.len());
        let p = knn_lumen_probability(&db, &test, k).unwrap();
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        let q = knn_lumen_probability(&twice, &test, 2 * k).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        // labels are prefixes, so the vote cannot increase outward
        prop_assert!(p.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn plain_combination_is_the_data_term(pr_d in vec(0.0f64..=1.0, 24)) {
        let f = combine_probability(&pr_d, &[1.0, 2.0, 3.0], 4, &[None, None], &[false; 24], 0.01).unwrap();
        prop_assert_eq!(f.prob, pr_d);
    }
}

fn graph_strategy() -> impl Strategy<Value = SegmentationGraph> {
    (1usize..4, 1usize..5, 0.0f64..3.0).prop_flat_map(|(rays, len, lambda)| {
        let n = rays * len;
        (vec((0.0f64..5.0, 0.0f64..5.0), n), vec((0..n, 0..n, 0.0f64..2.0), 0..2 * n)).prop_map(
            move |(unary, pairs)| {
                let mut g = SegmentationGraph::new(
                    unary.into_iter().map(|(l, b)| UnaryCost { lumen: l, background: b }).collect(),
                    lambda,
                );
                for (p, q, w) in pairs {
                    if p != q {
                        g.add_pair(p, q, w);
                    }
                }
                for r in 0..rays {
                    for j in 1..len {
                        g.add_star(r * len + j, r * len + j - 1);
                    }
                }
                g
            },
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn min_cut_is_feasible_optimal_and_scale_free(g in graph_strategy(), c in 0.1f64..20.0) {
        let sol = solve_min_cut(&g);
        prop_assert!(g.is_star_feasible(&sol.labels));
        let (unary, pairs): (Vec<_>, _) = (g.unary.iter().map(|u| (u.lumen, u.background)).collect(), g.pairs.clone());
        let (best, _) = common::brute_force_energy(&unary, &pairs, &g.star, g.graph_lambda);
        prop_assert!((sol.energy - best).abs() < 1e-9);
        prop_assert!((common::labeling_energy(&unary, &pairs, g.graph_lambda, &sol.labels) - sol.energy).abs() < 1e-9);
        let mut scaled = g.clone();
        scaled.unary.iter_mut().for_each(|u| { u.lumen *= c; u.background *= c; });
        scaled.pairs.iter_mut().for_each(|p| p.2 *= c);
        let s2 = solve_min_cut(&scaled);
        prop_assert!((g.energy(&s2.labels) - sol.energy).abs() < 1e-9 * (1.0 + sol.energy.abs()));
        prop_assert_eq!(solve_min_cut(&g), sol);
    }
}

/// Random tree with stenosed or uniform segments; node `k + 1` hangs off a
/// random earlier node.
fn vessel_tree() -> impl Strategy<Value = VesselTree> {
    vec((any::<prop::sample::Index>(), 5.0f64..40.0, 1.5f64..4.0, 0.2f64..1.0), 1..7).prop_map(|specs| {
        let segments = specs
            .iter()
            .enumerate()
            .map(|(k, (parent, len, d, narrow))| {
                let parent = if k == 0 { 0 } else { 1 + parent.index(k) };
                let profile = vec![[0.0, *d], [len / 2.0, d * narrow], [*len, *d]];
                Segment { branch: k, start_mm: 0.0, end_mm: *len, profile, parent_node: parent, child_node: k + 1 }
            })
            .collect::<Vec<_>>();
        VesselTree { n_nodes: segments.len() + 1, segments, tree_side: TreeSide::Left }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn flow_is_conserved_and_pressure_falls(t in vessel_tree()) {
        let cfg = FlowConfig::default();
        let net = build_network(&t, &cfg).unwrap();
        let res = solve_flow(&net).unwrap();
        let mut balance = vec![0.0; t.n_nodes];
        for (e, q) in net.edges.iter().zip(&res.edge_flows) {
            balance[e.from] -= q;
            if let Some(to) = e.to {
                balance[to] += q;
            }
        }
        prop_assert!(balance[1..].iter().all(|b| b.abs() < 1e-9));
        for s in &t.segments {
            prop_assert!(res.node_pressures[s.child_node] <= res.node_pressures[s.parent_node] + 1e-9);
        }
        for n in 0..t.n_nodes {
            let f = res.ffr_at_node(n);
            prop_assert!((0.0..=1.0 + 1e-9).contains(&f));
        }
    }

    #[test]
    fn narrowing_a_segment_never_raises_ffr(t in vessel_tree(), which in any::<prop::sample::Index>(), factor in 0.3f64..0.95) {
        let cfg = FlowConfig { outlet_scale: Some(40.0), ..FlowConfig::default() };
        let base = solve_flow(&build_network(&t, &cfg).unwrap()).unwrap();
        let mut narrowed = t.clone();
        let k = which.index(t.segments.len());
        // shrink the interior sample only: the distal diameter (and thus the
        // outlet split) is unchanged
        narrowed.segments[k].profile[1][1] *= factor;
        let after = solve_flow(&build_network(&narrowed, &cfg).unwrap()).unwrap();
        let mut downstream = vec![false; t.n_nodes];
        downstream[t.segments[k].child_node] = true;
        for s in &t.segments {
            // segments are listed parent-first
            if downstream[s.parent_node] {
                downstream[s.child_node] = true;
            }
        }
        for (n, &down) in downstream.iter().enumerate() {
            if down {
                prop_assert!(after.ffr_at_node(n) <= base.ffr_at_node(n) + 1e-9);
            }
        }
    }
}

fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    // integer-valued scores keep the transforms below exact, so they can
    // neither create nor break ties
    vec((-1000i32..1000, any::<bool>()), 2..60).prop_filter_map("both classes", |v| {
        let (s, l): (Vec<f64>, Vec<bool>) = v.into_iter().map(|(s, l)| (s as f64, l)).unzip();
        (l.iter().any(|&x| x) && l.iter().any(|&x| !x)).then_some((s, l))
    })
}

proptest! {
    #[test]
    fn auc_is_invariant_under_monotone_transforms((s, l) in scored_labels(), a in 1i32..6, b in -50i32..50) {
        let base = roc_auc(&s, &l, Direction::HigherIsPositive).unwrap();
        let transforms: [&dyn Fn(f64) -> f64; 3] =
            [&|x| a as f64 * x + b as f64, &|x| x.powi(3) + b as f64, &|x| (x / 100.0).exp()];
        for f in transforms {
            let t: Vec<f64> = s.iter().map(|&x| f(x)).collect();
            prop_assert_eq!(roc_auc(&t, &l, Direction::HigherIsPositive).unwrap().auc, base.auc);
        }
    }

    #[test]
    fn roc_curve_is_monotone_and_integrates_to_auc((s, l) in scored_labels()) {
        let roc = roc_auc(&s, &l, Direction::LowerIsPositive).unwrap();
        let p = &roc.points;
        prop_assert_eq!((p[0].fpr, p[0].tpr), (0.0, 0.0));
        prop_assert_eq!((p[p.len() - 1].fpr, p[p.len() - 1].tpr), (1.0, 1.0));
        prop_assert!(p.windows(2).all(|w| w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr));
        // ties become diagonal segments, so the trapezoid area is exact
        prop_assert!((roc.trapezoid_area() - roc.auc).abs() < 1e-12);
    }

    #[test]
    fn confusion_counts_are_consistent((s, l) in scored_labels(), thr in -1000.0f64..1000.0) {
        let c = confusion(&s, &l, thr, Direction::LowerIsPositive).unwrap();
        let pos = l.iter().filter(|&&x| x).count();
        prop_assert_eq!(c.tp + c.fn_, pos);
        prop_assert_eq!(c.tn + c.fp, l.len() - pos);
        prop_assert_eq!(c.sensitivity, Some(c.tp as f64 / pos as f64));
    }

    #[test]
    fn dice_is_symmetric(a in vec(any::<bool>(), 27), b in vec(any::<bool>(), 27)) {
        let g = VolumeGeometry::new([3, 3, 3], [1.0; 3], [0.0; 3]).unwrap();
        let (va, vb) = (Volume::new(g, a).unwrap(), Volume::new(g, b).unwrap());
        let d = dice(&va, &vb).unwrap();
        prop_assert_eq!(d, dice(&vb, &va).unwrap());
        prop_assert!((0.0..=1.0).contains(&d));
    }
}
