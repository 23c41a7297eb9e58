//! End-to-end acceptance checks. Every test writes one verdict line straight
//! to stderr, so the lines show up even when output capture is on, and then
//! asserts.
//!
//! The desk-scale pipeline behind criteria 8 to 10 is built once and shared.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use articulate::config::{RunConfig, Tier};
use articulate::datagen::{adaptive_collect, observe, prepare_entry, CollectConfig, SensingConfig};
use articulate::eval::{metric_modes_ratio, metric_norm_entropy, metric_ssr, PolicyKind, Trial, TrialOutcome};
use articulate::geom::{Pose, Quat, Vec3};
use articulate::gmm::fit_gmm;
use articulate::kinematics::*;
use articulate::model::{action_losses, cvae_rows, loss_action, GOAL_PREFIX};
use articulate::perception::{query_local_feature, train_depth_autoencoder, AutoencoderConfig, PlaneExtent, TriPlaneFeature, PLANE_AXES};
use articulate::pipeline::*;
use articulate::render::{default_views, render_depth, tsdf_fuse, CameraConfig, DepthImage, GridConfig};
use articulate::rng;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tensor::gradcheck::{check, primitive_cases, OpFn, Spec};
use tensor::nn::bce_with_logits;
use tensor::Tensor;

fn verdict(n: u32, title: &str, ok: bool, detail: &str) {
    let tag = if ok { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr().lock(), "[{tag}] criterion {n:>2}: {title} ({detail})");
    assert!(ok, "criterion {n} failed: {title} ({detail})");
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(4)
}

// ---------------------------------------------------------------- 1

fn random_unit_quats(rows: usize, rng: &mut impl Rng) -> Vec<f32> {
    (0..rows)
        .flat_map(|_| {
            let q = articulate::datagen::random_rotation::<f64, _>(rng);
            [q.w as f32, q.x as f32, q.y as f32, q.z as f32]
        })
        .collect()
}

fn composite_cases(rng: &mut impl Rng) -> Vec<(&'static str, Spec, OpFn<f32>)> {
    let mut v: Vec<(&'static str, Spec, OpFn<f32>)> = Vec::new();
    v.push((
        "cvae",
        Spec::new(&[&[3, 5], &[3, 5], &[3, 2], &[3, 2]]),
        Box::new(|g, x| {
            let rows = cvae_rows(g, x[0], x[1], x[2], x[3], 0.1).unwrap();
            g.sum(rows)
        }),
    ));
    let targets: Vec<f32> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
    v.push((
        "bce",
        Spec::new(&[&[4, 1]]),
        Box::new(move |g, x| {
            let y = g.constant(Tensor::new(&[4, 1], targets.clone()).unwrap());
            bce_with_logits(g, x[0], y).unwrap()
        }),
    ));
    let r_t = random_unit_quats(3, rng);
    let f_t: Vec<f32> = (0..3)
        .flat_map(|_| {
            let d = articulate::datagen::random_direction::<f64, _>(rng);
            [d.x as f32, d.y as f32, d.z as f32]
        })
        .collect();
    let mut action = Spec::new(&[&[3, 7]]);
    action.avoid_zero = 0.1;
    v.push((
        "action",
        action,
        Box::new(move |g, x| {
            let rt = g.constant(Tensor::new(&[3, 4], r_t.clone()).unwrap());
            let ft = g.constant(Tensor::new(&[3, 3], f_t.clone()).unwrap());
            let (rot, force) = action_losses(g, x[0], rt, ft).unwrap();
            g.add(rot, force).unwrap()
        }),
    ));
    v
}

#[test]
fn c01_gradients_match_finite_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut cases = primitive_cases::<f32>();
    cases.extend(composite_cases(&mut rng));
    let mut worst = (0.0f64, "");
    let count = cases.len();
    for (i, (name, spec, op)) in cases.into_iter().enumerate() {
        let err = check::<f32, _>(&spec, 10, 1e-3, &mut ChaCha8Rng::seed_from_u64(500 + i as u64), op);
        if err > worst.0 || !err.is_finite() {
            worst = (err, name);
        }
    }
    let elapsed = start.elapsed();
    let ok = worst.0 < 1e-3 && elapsed < Duration::from_secs(30);
    verdict(
        1,
        "autodiff agrees with central differences in f32",
        ok,
        &format!("{count} ops x 10 points, worst rel err {:.2e} in {}, {:.1}s", worst.0, worst.1, elapsed.as_secs_f64()),
    );
}

// ---------------------------------------------------------------- 2

fn box_object(half: f64) -> ArticulatedObject<f64> {
    ArticulatedObject {
        category: Category::Switch,
        seed: 0,
        base: Pose::identity(),
        links: vec![LinkGeometry {
            name: "base".into(),
            shapes: vec![Shape::Box { half: Vec3::splat(half), pose: Pose::identity() }],
            handle: None,
        }],
        joints: vec![],
    }
}

/// Face of an axis-aligned cube centered at the origin, as (axis, sign).
type Face = (usize, f64);

/// Nearest face to `p` and the distance to it, when the foot of the
/// perpendicular lies at least `margin` inside the face's edges.
fn face_interior(p: [f64; 3], half: f64, margin: f64) -> Option<(Face, f64)> {
    let axis = (0..3).max_by(|&a, &b| (p[a].abs() - half).total_cmp(&(p[b].abs() - half))).unwrap();
    let sign = p[axis].signum();
    let inside = (0..3).filter(|&a| a != axis).all(|a| p[a].abs() <= half - margin);
    inside.then_some(((axis, sign), (p[axis].abs() - half).abs()))
}

#[test]
fn c02_fused_tsdf_crosses_zero_at_the_surface() {
    let half = 0.25;
    let obj = box_object(half);
    let views = default_views(Vec3::zero(), &CameraConfig::default()).unwrap();
    let depths: Vec<DepthImage<f64>> = views.iter().map(|c| render_depth(&obj, c)).collect();
    let grid = GridConfig::cube(Vec3::zero(), 1.2, 48, 4.0);
    let pairs: Vec<_> = depths.iter().zip(&views).collect();
    let vol = tsdf_fuse(&pairs, &grid).unwrap();
    let reversed: Vec<_> = pairs.iter().rev().copied().collect();
    let rev = tsdf_fuse(&reversed, &grid).unwrap();
    let order_gap = vol.tsdf.iter().zip(&rev.tsdf).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let weights_equal = vol.weight == rev.weight;

    // A face is directly observed when some camera lies on its outer side.
    let faces: Vec<Face> = (0..3).flat_map(|a| [(a, -1.0), (a, 1.0)]).collect();
    let observed: Vec<Face> = faces
        .into_iter()
        .filter(|&(a, s)| views.iter().any(|c| [c.pose.trans.x, c.pose.trans.y, c.pose.trans.z][a] * s > half))
        .collect();
    // Projective distances are unreliable within a truncation band of a
    // silhouette edge, so only face interiors are scored.
    let margin = vol.trunc;

    let n = vol.dims;
    let mut per_face = vec![0usize; observed.len()];
    let mut worst = 0.0f64;
    for i in 0..n[0] {
        for j in 0..n[1] {
            for k in 0..n[2] {
                let a = vol.index(i, j, k);
                for step in [[1, 0, 0], [0, 1, 0], [0, 0, 1]] {
                    let (i2, j2, k2) = (i + step[0], j + step[1], k + step[2]);
                    if i2 >= n[0] || j2 >= n[1] || k2 >= n[2] {
                        continue;
                    }
                    let b = vol.index(i2, j2, k2);
                    let (va, vb) = (vol.tsdf[a], vol.tsdf[b]);
                    if vol.weight[a] == 0.0 || vol.weight[b] == 0.0 || (va > 0.0) == (vb > 0.0) {
                        continue;
                    }
                    let t = va / (va - vb);
                    let (pa, pb) = (vol.voxel_center(i, j, k), vol.voxel_center(i2, j2, k2));
                    let p = pa + (pb - pa) * t;
                    let Some((face, dist)) = face_interior([p.x, p.y, p.z], half, margin) else { continue };
                    let Some(f) = observed.iter().position(|&o| o == face) else { continue };
                    per_face[f] += 1;
                    worst = worst.max(dist);
                }
            }
        }
    }
    let covered = per_face.iter().all(|&c| c >= 20);
    let ok = covered && worst <= vol.voxel_size && order_gap < 1e-6 && weights_equal;
    verdict(
        2,
        "fused TSDF of a box is zero on its observed faces and order independent",
        ok,
        &format!(
            "{} observed faces with {per_face:?} crossings, worst {:.3} voxels off, reversed order gap {order_gap:.1e}",
            observed.len(),
            worst / vol.voxel_size
        ),
    );
}

// ---------------------------------------------------------------- 3

#[test]
fn c03_triplane_query_is_bilinear() {
    let (g, ch) = (7usize, 3usize);
    let side = 1.4f32;
    let extent = PlaneExtent { origin: [-0.7; 3], size: [side; 3], resolution: g };
    let node = |i: f32| -0.7 + (i + 0.5) / g as f32 * side;
    let grid = |x: f32| (x + 0.7) / side * g as f32 - 0.5;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_node = 0.0f32;
    let mut worst_affine = 0.0f32;
    for _ in 0..20 {
        // Arbitrary stored values for node exactness.
        let data: Vec<f32> = (0..3 * ch * g * g).map(|_| rng.random_range(-2.0..2.0)).collect();
        let feat = TriPlaneFeature { planes: data.clone(), channels: ch, extent: extent.clone() };
        for _ in 0..20 {
            let idx: [usize; 3] = std::array::from_fn(|_| rng.random_range(0..g));
            let q = query_local_feature(&feat, Vec3::new(node(idx[0] as f32), node(idx[1] as f32), node(idx[2] as f32)));
            for (k, &(ra, ca)) in PLANE_AXES.iter().enumerate() {
                for c in 0..ch {
                    let stored = data[((k * ch + c) * g + idx[ra]) * g + idx[ca]];
                    worst_node = worst_node.max((q.values[k * ch + c] - stored).abs());
                }
            }
        }
        // Affine planes are reproduced everywhere inside the node hull.
        let coef: Vec<[f32; 3]> = (0..3 * ch).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect();
        let mut planes = Vec::with_capacity(3 * ch * g * g);
        for kc in &coef {
            for r in 0..g {
                for c in 0..g {
                    planes.push(kc[0] + kc[1] * r as f32 + kc[2] * c as f32);
                }
            }
        }
        let feat = TriPlaneFeature { planes, channels: ch, extent: extent.clone() };
        for _ in 0..50 {
            let p: [f32; 3] = std::array::from_fn(|_| rng.random_range(node(0.0)..node((g - 1) as f32)));
            let q = query_local_feature(&feat, Vec3::new(p[0], p[1], p[2]));
            for (k, &(ra, ca)) in PLANE_AXES.iter().enumerate() {
                for c in 0..ch {
                    let kc = coef[k * ch + c];
                    let expected = kc[0] + kc[1] * grid(p[ra]) + kc[2] * grid(p[ca]);
                    worst_affine = worst_affine.max((q.values[k * ch + c] - expected).abs());
                }
            }
        }
    }
    let ok = worst_node < 1e-5 && worst_affine < 1e-5;
    verdict(
        3,
        "tri-plane query reproduces nodes and affine fields",
        ok,
        &format!("node err {worst_node:.1e}, affine err {worst_affine:.1e}"),
    );
}

// ---------------------------------------------------------------- 4

#[test]
fn c04_gmm_recovers_separated_clusters() {
    let mut worst = 0.0f64;
    let mut monotone = true;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for k in [2usize, 3] {
            let dim = 4;
            // Centers on a ring of radius 4, far apart relative to sigma.
            let truth: Vec<Vec<f64>> = (0..k)
                .map(|c| {
                    let a = std::f64::consts::TAU * c as f64 / k as f64 + rng.random_range(0.0..1.0);
                    let mut m: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.5..0.5)).collect();
                    m[0] += 4.0 * a.cos();
                    m[1] += 4.0 * a.sin();
                    m
                })
                .collect();
            let noise = Normal::new(0.0, 0.2).unwrap();
            let data: Vec<Vec<f64>> = truth
                .iter()
                .flat_map(|m| (0..200).map(|_| m.iter().map(|&x| x + noise.sample(&mut rng)).collect::<Vec<_>>()).collect::<Vec<_>>())
                .collect();
            let fit = fit_gmm(&data, k, &mut rng).unwrap();
            for t in &truth {
                let d = fit
                    .gmm
                    .means
                    .iter()
                    .map(|m| m.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
                    .fold(f64::INFINITY, f64::min);
                worst = worst.max(d);
            }
            monotone &= fit.log_likelihood.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0));
        }
    }
    verdict(
        4,
        "GMM recovers 2 and 3 separated clusters over 10 seeds",
        worst < 0.1 && monotone,
        &format!("worst center error {worst:.3}, log-likelihood monotone: {monotone}"),
    );
}

// ---------------------------------------------------------------- 5

#[test]
fn c05_metric_identities() {
    let a = ModeId { joint: 0, dir: Direction::Increase };
    let b = ModeId { joint: 1, dir: Direction::Increase };
    let mut split = vec![TrialOutcome::new(false, None); 10];
    split.extend((0..5).map(|_| TrialOutcome::new(true, Some(a))));
    split.extend((0..5).map(|_| TrialOutcome::new(true, Some(b))));
    let ssr = metric_ssr(&split).unwrap();
    let eta = metric_modes_ratio(&split, 2).unwrap();
    let h = metric_norm_entropy(&split, 2, false).unwrap();
    let mut single = vec![TrialOutcome::new(false, None); 5];
    single.extend((0..5).map(|_| TrialOutcome::new(true, Some(a))));
    let h_single = metric_norm_entropy(&single, 2, false).unwrap();
    let identities = (ssr - 0.5).abs() < 1e-12 && (eta - 0.5).abs() < 1e-12 && (h - 0.5).abs() < 1e-12 && h_single == 0.0;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut bounded = 0;
    for _ in 0..1000 {
        let gt = rng.random_range(1..5usize);
        let modes: Vec<ModeId> = (0..gt)
            .map(|j| ModeId { joint: j / 2, dir: if j % 2 == 0 { Direction::Increase } else { Direction::Decrease } })
            .collect();
        let n = rng.random_range(1..60);
        let log: Vec<TrialOutcome> = (0..n)
            .map(|_| {
                if rng.random_bool(0.4) {
                    TrialOutcome::new(true, Some(modes[rng.random_range(0..gt)]))
                } else {
                    TrialOutcome::new(false, None)
                }
            })
            .collect();
        let s = metric_ssr(&log).unwrap();
        let e = metric_modes_ratio(&log, gt).unwrap();
        let hs = metric_norm_entropy(&log, gt, false).unwrap();
        let ha = metric_norm_entropy(&log, gt, true).unwrap();
        if [e, hs, ha].iter().all(|&m| (0.0..=s + 1e-12).contains(&m)) {
            bounded += 1;
        }
    }
    verdict(
        5,
        "metric identities and bounds",
        identities && bounded == 1000,
        &format!("split ssr {ssr} eta {eta} entropy {h}, single-mode entropy {h_single}, {bounded}/1000 random logs bounded by ssr"),
    );
}

// ---------------------------------------------------------------- 6

#[test]
fn c06_action_loss_is_sign_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut worst_sym, mut worst_zero) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let r: Quat<f64> = articulate::datagen::random_rotation(&mut rng);
        let rt: Quat<f64> = articulate::datagen::random_rotation(&mut rng);
        let f: Vec3<f64> = articulate::datagen::random_direction(&mut rng);
        let ft: Vec3<f64> = articulate::datagen::random_direction(&mut rng);
        let neg = Quat::new(-r.w, -r.x, -r.y, -r.z);
        worst_sym = worst_sym.max((loss_action(r, f, rt, ft).unwrap() - loss_action(neg, f, rt, ft).unwrap()).abs());
        worst_zero = worst_zero.max(loss_action(rt, ft, rt, ft).unwrap().abs());
    }
    verdict(
        6,
        "action loss ignores quaternion sign and vanishes at the target",
        worst_sym < 1e-12 && worst_zero < 1e-12,
        &format!("1000 quaternions, max |L(q)-L(-q)| {worst_sym:.1e}, max L at target {worst_zero:.1e}"),
    );
}

// ---------------------------------------------------------------- 7

#[test]
fn c07_adaptive_sampling_finds_the_rare_mode() {
    let start = Instant::now();
    let sensing = SensingConfig::default();
    let styles = [HandleStyle::Bar, HandleStyle::Recessed];
    let ae_cfg = AutoencoderConfig::default();
    let mut r = rng::stream(0, "acceptance/ae", &[]);
    let mut corpus = Vec::new();
    for _ in 0..60 {
        let f: Vec<f64> = (0..2).map(|_| if r.random_bool(0.3) { 0.0 } else { r.random_range(0.0..1.0) }).collect();
        let obj = make_drawer_cabinet::<f64>(3, styles, &f).unwrap();
        corpus.extend(observe(&obj, &sensing).unwrap().depths.iter().map(|d| d.cast::<f32>()));
    }
    let (ae, _) = train_depth_autoencoder(&corpus, &ae_cfg, &mut r).unwrap();
    let entry = prepare_entry(make_drawer_cabinet::<f64>(3, styles, &[0.0, 0.0]).unwrap(), &sensing, &ae).unwrap();
    let contact = ContactParams::default();

    // Share of ground-truth successes that open the recessed drawer (joint 1).
    let rare_share = |epsilon: f64, seed: u64| {
        let cfg = CollectConfig { epsilon, ..Default::default() };
        let col = adaptive_collect(std::slice::from_ref(&entry), &ae, &cfg, &contact, seed, jobs()).unwrap();
        let succ: Vec<_> = col.records.iter().filter(|r| r.gt_success).collect();
        let rare = succ.iter().filter(|r| r.gt_mode.is_some_and(|m| m.joint == 1)).count();
        rare as f64 / succ.len().max(1) as f64
    };
    let (mut wins, mut losses) = (0u32, 0u32);
    let (mut adaptive_sum, mut random_sum) = (0.0, 0.0);
    for seed in 0..10 {
        let (a, b) = (rare_share(0.3, seed), rare_share(1.0, seed));
        adaptive_sum += a;
        random_sum += b;
        if a > b {
            wins += 1;
        } else if a < b {
            losses += 1;
        }
    }
    // One-sided sign test over the untied seeds.
    let n = wins + losses;
    let choose = |n: u32, k: u32| (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
    let p: f64 = (wins..=n).map(|k| choose(n, k)).sum::<f64>() / 2f64.powi(n as i32);
    let ok = p < 0.05 && adaptive_sum >= random_sum;
    verdict(
        7,
        "adaptive sampling raises the rare-mode share over pure random",
        ok,
        &format!(
            "mean share {:.3} vs {:.3}, {wins} wins / {losses} losses, sign test p = {p:.4}, {:.0}s",
            adaptive_sum / 10.0,
            random_sum / 10.0,
            start.elapsed().as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------- 8 to 10

struct DeskRun {
    records: usize,
    train_time: Duration,
    trained: Trained,
    evals: Vec<Evaluation>,
}

fn desk() -> &'static DeskRun {
    static RUN: OnceLock<DeskRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let cfg = RunConfig::load(configs_dir().join("desk.toml")).unwrap();
        let data = generate_dataset(&cfg, jobs()).unwrap();
        let start = Instant::now();
        let trained = train_model(&cfg, &data.dataset).unwrap();
        let train_time = start.elapsed();
        let objects = eval_objects(&cfg, Some(&trained.checkpoint), jobs()).unwrap();
        let evals = (0..10).map(|seed| evaluate(&cfg, Some(&trained.checkpoint), &objects, seed, jobs()).unwrap()).collect();
        DeskRun { records: data.dataset.records.len(), train_time, trained, evals }
    })
}

/// Trial-weighted ssr and normalized entropy over the rows of one tier.
fn tier_metrics(evals: &[Evaluation], tier: Tier, policy: PolicyKind) -> (f64, f64) {
    let (mut n, mut ssr, mut ent) = (0.0, 0.0, 0.0);
    for ev in evals {
        for row in ev.rows.iter().filter(|r| r.tier == tier && r.policy == policy) {
            let w = row.metrics.trials as f64;
            n += w;
            ssr += w * row.metrics.ssr;
            ent += w * row.metrics.entropy;
        }
    }
    (ssr / n, ent / n)
}

#[test]
fn c08_model_beats_random_on_unseen_objects() {
    let run = desk();
    let evals = &run.evals[..5];
    let (m_ssr, m_h) = tier_metrics(evals, Tier::UnseenStates, PolicyKind::Model);
    let (r_ssr, r_h) = tier_metrics(evals, Tier::UnseenStates, PolicyKind::Random);
    let (m_sw, _) = tier_metrics(evals, Tier::UnseenCategories, PolicyKind::Model);
    let (r_sw, _) = tier_metrics(evals, Tier::UnseenCategories, PolicyKind::Random);
    let fast = run.train_time < Duration::from_secs(30 * 60);
    let ok = m_ssr >= 2.0 * r_ssr && m_h > r_h && m_sw > r_sw && fast;
    verdict(
        8,
        "trained model beats random on unseen states and categories",
        ok,
        &format!(
            "{} records, trained in {:.0}s; unseen states ssr {m_ssr:.3} vs {r_ssr:.3}, entropy {m_h:.3} vs {r_h:.3}; switch ssr {m_sw:.3} vs {r_sw:.3}",
            run.records,
            run.train_time.as_secs_f64()
        ),
    );
}

#[test]
fn c09_model_points_land_on_movable_parts() {
    let run = desk();
    let draws: Vec<&Trial> = run.evals[0].log.iter().filter(|t| t.policy == PolicyKind::Model).collect();
    let random: Vec<&Trial> = run.evals[0].log.iter().filter(|t| t.policy == PolicyKind::Random).collect();
    let share = |v: &[&Trial]| v.iter().filter(|t| t.on_movable).count() as f64 / v.len() as f64;
    let ok = draws.len() >= 200 && share(&draws) >= 0.7;
    verdict(
        9,
        "sampled contact points fall on movable links",
        ok,
        &format!("{} model draws, {:.3} on movable links (random {:.3})", draws.len(), share(&draws), share(&random)),
    );
}

#[test]
fn c10_goal_conditioning_reaches_more_goals() {
    let run = desk();
    let reached = |ev: &Evaluation, p: PolicyKind| {
        let goals: Vec<&Trial> = ev.log.iter().filter(|t| t.policy == p && t.goal.is_some()).collect();
        goals.iter().filter(|t| t.outcome.goal_reached == Some(true)).count() as f64 / goals.len().max(1) as f64
    };
    let margins: Vec<f64> = run.evals.iter().map(|ev| reached(ev, PolicyKind::ModelGoal) - reached(ev, PolicyKind::Model)).collect();
    let mean = margins.iter().sum::<f64>() / margins.len() as f64;
    let frozen = run.trained.checkpoint.model.checksum_excluding(GOAL_PREFIX) == run.trained.base_checksum;
    let curve = &run.trained.goal_curve;
    let tenth = (curve.len() / 10).max(1);
    let avg = |s: &[articulate::model::LossRow]| s.iter().map(|r| r.total).sum::<f32>() / s.len() as f32;
    let ok = mean > 0.0 && frozen;
    verdict(
        10,
        "goal-conditioned policy reaches goals more often than the unconditioned one",
        ok,
        &format!(
            "mean margin {mean:.3} over {} seeds (min {:.3}, max {:.3}); base weights frozen: {frozen}; fine-tune loss {:.3} -> {:.3}",
            margins.len(),
            margins.iter().copied().fold(f64::INFINITY, f64::min),
            margins.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            avg(&curve[..tenth]),
            avg(&curve[curve.len() - tenth..])
        ),
    );
}

// ---------------------------------------------------------------- 11

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn c11_pipeline_is_bitwise_reproducible() {
    let cfg = RunConfig::load(configs_dir().join("tiny.toml")).unwrap();
    let run = |jobs: usize| {
        let dir = tempfile::tempdir().unwrap();
        let (data, model, eval) = (dir.path().join("data"), dir.path().join("model"), dir.path().join("eval"));
        cmd_gen_data(&cfg, &data, jobs).unwrap();
        cmd_train(&cfg, &data.join(DATASET_FILE), &model).unwrap();
        cmd_eval(&cfg, Some(&model.join(CHECKPOINT_FILE)), &eval, jobs).unwrap();
        let all = files(dir.path());
        drop(dir);
        all
    };
    let (a, b) = (run(1), run(3));
    let names: Vec<String> = a.iter().map(|(p, _)| p.display().to_string()).collect();
    let differing: Vec<String> =
        a.iter().zip(&b).filter(|(x, y)| x != y).map(|(x, _)| x.0.display().to_string()).collect();
    let ok = a.len() == b.len() && differing.is_empty() && names.iter().any(|n| n.ends_with(REPORT_FILE));
    verdict(
        11,
        "same seed gives byte-identical artifacts across thread counts",
        ok,
        &format!("{} files compared, differing: {differing:?}", a.len()),
    );
}
