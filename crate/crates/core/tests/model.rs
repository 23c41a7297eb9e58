use articulate::datagen::{random_direction, random_rotation};
use articulate::geom::{Quat, Vec3};
use articulate::kinematics::ActionPrimitive;
use articulate::model::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensor::{Graph, Tensor};

mod common;

use common::{synthetic_set, tiny, train_cfg};

fn quat(rng: &mut impl Rng) -> Quat<f64> {
    random_rotation(rng)
}

#[test]
fn cvae_loss_examples() {
    assert_eq!(loss_cvae(&[0.5, -1.0], &[0.5, -1.0], &[0.0; 2], &[1.0; 2], 0.1), 0.0);
    // A unit mean shift costs KL 0.5, weighted by beta.
    assert!((loss_cvae(&[0.0], &[0.0], &[1.0], &[1.0], 0.1) - 0.05).abs() < 1e-7);
    assert!((loss_cvae(&[1.0, 1.0], &[0.0, 0.0], &[0.0; 2], &[1.0; 2], 0.1) - 2.0).abs() < 1e-7);
    assert!(kl_divergence(&[0.3, -0.2], &[0.7, 1.4]) > 0.0);
}

#[test]
fn graph_losses_match_scalar_definitions() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (b, e, l) = (3, 5, 2);
    let mut draw = |n: usize| -> Vec<f32> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let (e1_hat, e1, mu, ls) = (draw(b * e), draw(b * e), draw(b * l), draw(b * l));
    let mut g = Graph::<f32>::new();
    let v = |g: &mut Graph<f32>, d: &[f32], c: usize| g.constant(Tensor::new(&[b, c], d.to_vec()).unwrap());
    let (a, t, m, s) = (v(&mut g, &e1_hat, e), v(&mut g, &e1, e), v(&mut g, &mu, l), v(&mut g, &ls, l));
    let rows = cvae_rows(&mut g, a, t, m, s, 0.1).unwrap();
    for i in 0..b {
        let sigma: Vec<f32> = ls[i * l..(i + 1) * l].iter().map(|x| x.exp()).collect();
        let expected = loss_cvae(&e1_hat[i * e..(i + 1) * e], &e1[i * e..(i + 1) * e], &mu[i * l..(i + 1) * l], &sigma, 0.1);
        assert!((g.value(rows).data()[i] - expected).abs() < 1e-5);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (r, f) = (quat(&mut rng), random_direction::<f64, _>(&mut rng));
    let (rt, ft) = (quat(&mut rng), random_direction::<f64, _>(&mut rng));
    // Raw logits whose normalized quaternion is `r` and whose tanh is `f`.
    let raw: Vec<f32> = [2.0 * r.w, 2.0 * r.x, 2.0 * r.y, 2.0 * r.z, f.x.atanh(), f.y.atanh(), f.z.atanh()]
        .iter()
        .map(|&x| x as f32)
        .collect();
    let mut g = Graph::<f32>::new();
    let raw = g.constant(Tensor::new(&[1, 7], raw).unwrap());
    let r_t = g.constant(Tensor::new(&[1, 4], vec![rt.w as f32, rt.x as f32, rt.y as f32, rt.z as f32]).unwrap());
    let f_t = g.constant(Tensor::new(&[1, 3], vec![ft.x as f32, ft.y as f32, ft.z as f32]).unwrap());
    let (rot, force) = action_losses(&mut g, raw, r_t, f_t).unwrap();
    let total = g.value(rot).item() + g.value(force).item();
    assert!((total as f64 - loss_action(r, f, rt, ft).unwrap()).abs() < 1e-4);
}

#[test]
fn action_loss_rejects_non_unit_orientation() {
    let r = Quat::new(1.0, 0.0, 0.0, 0.0);
    let f = Vec3::new(0.0, 1.0, 0.0);
    assert!(loss_action(Quat::new(1.1, 0.0, 0.0, 0.0), f, r, f).is_err());
    assert!(loss_action(r, f, Quat::new(0.0, 0.0, 0.0, 0.0), f).is_err());
    assert_eq!(loss_action(r, f, r, f).unwrap(), 0.0);
}

proptest! {
    #[test]
    fn action_loss_respects_double_cover(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r, rh) = (quat(&mut rng), quat(&mut rng));
        let (f, fh) = (random_direction::<f64, _>(&mut rng), random_direction::<f64, _>(&mut rng));
        let neg = Quat::new(-r.w, -r.x, -r.y, -r.z);
        prop_assert_eq!(loss_action(neg, f, rh, fh).unwrap(), loss_action(r, f, rh, fh).unwrap());
        prop_assert!(loss_action(r, f, rh, fh).unwrap() >= 0.0);
        prop_assert!(loss_action(rh, fh, rh, fh).unwrap().abs() < 1e-12);
    }
}

#[test]
fn scores_are_probabilities() {
    let m = tiny(1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dv = m.feature_dim();
    for _ in 0..50 {
        let v: Vec<f32> = (0..dv).map(|_| rng.random_range(-3.0..3.0)).collect();
        let z = sample_prior(m.latent(), &mut rng);
        let a: [f32; 10] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let q = m.q_score(&v, &z, &a);
        let qp = m.point_score(&v, &z);
        assert!(q > 0.0 && q < 1.0 && qp > 0.0 && qp < 1.0);
    }
}

#[test]
fn point_label_is_a_max_over_draws() {
    let m = tiny(3);
    let v = vec![0.2f32; m.feature_dim()];
    let z = vec![0.5f32; m.latent()];
    let p = Vec3::new(0.1, -0.2, 0.3);
    // With one draw the label is that draw's score.
    let mut r = ChaCha8Rng::seed_from_u64(7);
    let single = m.point_label(&v, &z, p, 1, &mut r.clone());
    let a = ActionPrimitive { point: p, rot: random_rotation(&mut r), dir: random_direction(&mut r) };
    assert_eq!(single, m.q_score(&v, &z, &a.to_vec().map(|x| x as f32)));
    // More draws from the same stream extend the set being maximized.
    let few = m.point_label(&v, &z, p, 10, &mut ChaCha8Rng::seed_from_u64(8));
    let many = m.point_label(&v, &z, p, 50, &mut ChaCha8Rng::seed_from_u64(8));
    assert!(many >= few && many < 1.0);
}

#[test]
fn inference_is_seeded_and_draws_from_the_cloud() {
    let m = tiny(4);
    let set = synthetic_set(4, 0);
    let feat = m.encode_scene(&set.planes[0]).unwrap();
    let cloud: Vec<Vec3<f64>> = (0..40).map(|i| Vec3::new(0.02 * i as f64 - 0.4, 0.1, 0.0)).collect();
    let cfg = InferConfig { candidates: 16, temperature: 0.1 };
    let a = m.infer_action(&feat, &cloud, None, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = m.infer_action(&feat, &cloud, None, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a.action, b.action);
    assert_eq!(a.z, b.z);
    assert_eq!(a.candidates.len(), 16);
    assert!(a.candidates.iter().all(|c| cloud.contains(c)));
    assert_eq!(a.action.point, a.candidates[a.chosen]);
    assert!((a.action.rot.dot(a.action.rot) - 1.0).abs() < 1e-9);

    let fixed = vec![0.3f32; m.latent()];
    let c = m.infer_action(&feat, &cloud, Some(&fixed), &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(c.z, fixed);
    assert!(m.infer_action(&feat, &[], None, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    let none = InferConfig { candidates: 0, ..cfg };
    assert!(m.infer_action(&feat, &cloud, None, &none, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
}

#[test]
fn goal_matching_uses_relative_distance() {
    let e0 = [0.0f32, 0.0];
    assert!(reaches_goal(&e0, &[1.0, 0.1], &[1.0, 0.0]));
    assert!(!reaches_goal(&e0, &[0.0, 1.0], &[1.0, 0.0]));
    // Standing still never reaches a goal that moved.
    assert!(!reaches_goal(&e0, &e0, &[1.0, 0.0]));
}

#[test]
fn training_lowers_the_loss_and_is_deterministic() {
    let set = synthetic_set(160, 1);
    let cfg = train_cfg(300);
    let mut m = tiny(5);
    let before = m.evaluate_losses(&set, &cfg, false, 8, 99).unwrap();
    let curve = m.train(&set, &cfg, 11).unwrap();
    let after = m.evaluate_losses(&set, &cfg, false, 8, 99).unwrap();
    assert_eq!(curve.len(), 300);
    assert!(after.total < 0.7 * before.total, "{before:?} -> {after:?}");
    assert!(after.score < before.score);

    let mut again = tiny(5);
    again.train(&set, &cfg, 11).unwrap();
    assert_eq!(again.checksum_excluding("none"), m.checksum_excluding("none"));
}

#[test]
fn training_rejects_an_empty_set() {
    let mut set = synthetic_set(4, 2);
    set.records.clear();
    set.by_scene = vec![Vec::new(); 2];
    assert!(tiny(6).train(&set, &train_cfg(5), 0).is_err());
}

#[test]
fn loss_csv_has_a_row_per_step() {
    let rows: Vec<LossRow> = (0..3).map(|step| LossRow { step, total: 1.0, ..LossRow::default() }).collect();
    let csv = loss_csv(&rows);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], LossRow::CSV_HEADER);
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("2,"));
}
