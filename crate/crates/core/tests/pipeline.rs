use std::path::PathBuf;
use std::sync::OnceLock;

use articulate::config::{RosterItem, RunConfig, Tier};
use articulate::dataset::Dataset;
use articulate::eval::{report_csv, PolicyKind, REPORT_HEADER};
use articulate::kinematics::Category;
use articulate::pipeline::*;
use articulate::Error;
use tensor::container::Container;

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn tiny() -> RunConfig {
    RunConfig::load(config_path("tiny.toml")).unwrap()
}

struct Run {
    data: Dataset,
    trained: Trained,
}

fn run() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| {
        let cfg = tiny();
        let data = generate_dataset(&cfg, 2).unwrap().dataset;
        let trained = train_model(&cfg, &data).unwrap();
        Run { data, trained }
    })
}

#[test]
fn shipped_configs_validate() {
    for name in ["tiny.toml", "desk.toml"] {
        RunConfig::load(config_path(name)).unwrap();
    }
    let desk = RunConfig::load(config_path("desk.toml")).unwrap();
    assert_eq!(desk.data.episodes_per_round, 100);
    assert_eq!(desk.roster.training_items().len(), 8);
}

#[test]
fn config_roundtrips_through_toml() {
    let cfg = RunConfig::default();
    assert_eq!(RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    let t = tiny();
    assert_eq!(RunConfig::from_toml(&t.to_toml().unwrap()).unwrap(), t);
}

#[test]
fn bad_configs_are_config_errors() {
    let unknown = format!("{}\nbogus = 1\n", RunConfig::default().to_toml().unwrap());
    let bad_lr = RunConfig::default().to_toml().unwrap().replace("lr = 0.001", "lr = -1.0");
    let bad_grid = tiny().to_toml().unwrap().replace("grid_voxels = 24", "grid_voxels = 25");
    for text in [unknown, bad_lr, bad_grid, "seed = \"x\"".to_string()] {
        let err = RunConfig::from_toml(&text).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert_eq!(err.exit_code(), 2);
    }
    assert_eq!(Error::Data("x".into()).exit_code(), 3);
    assert_eq!(Error::Numeric("x".into()).exit_code(), 4);
}

#[test]
fn dataset_roundtrip_is_stable_after_quantization() {
    let data = &run().data;
    assert_eq!(data.records.len(), 2 * 60);
    let bytes = data.to_container().unwrap().to_bytes();
    let back = Dataset::from_container(&Container::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(back.manifest, data.manifest);
    for (a, b) in data.records.iter().zip(&back.records) {
        assert_eq!((a.entry, a.camera, a.round, a.source), (b.entry, b.camera, b.round, b.source));
        assert_eq!((a.action, &a.e1, a.effect, a.label), (b.action, &b.e1, b.effect, b.label));
        assert_eq!((a.gt_success, a.gt_mode), (b.gt_success, b.gt_mode));
        assert_eq!(a.d1.is_some(), b.d1.is_some());
        if let (Some(x), Some(y)) = (&a.d1, &b.d1) {
            assert!(x.data.iter().zip(&y.data).all(|(u, v)| (u - v).abs() <= 5e-4));
        }
    }
    // Stored depths are already quantized: a second pass is exact.
    assert_eq!(back.to_container().unwrap().to_bytes(), bytes);
}

#[test]
fn stored_labels_match_stored_embeddings() {
    let data = &run().data;
    for r in &data.records {
        let effect = data.recomputed_effect(r);
        assert!((effect - r.effect).abs() < 1e-6);
        assert_eq!(r.label, effect >= data.manifest.lambda);
    }
    assert_eq!(data.manifest.labelled_successes, data.labelled().len());
}

#[test]
fn rounds_csv_has_a_row_per_round() {
    let m = &run().data.manifest;
    assert_eq!(rounds_csv(m).lines().count(), 1 + m.rounds.len());
    assert_eq!(m.rounds.len(), 2);
}

#[test]
fn checkpoint_roundtrip_and_missing_sections() {
    let ckpt = &run().trained.checkpoint;
    assert!(ckpt.model.goal_selector.is_some(), "the tiny corpus has labelled successes");
    let bytes = ckpt.to_container().unwrap().to_bytes();
    let back = Checkpoint::from_container(&Container::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(back.to_container().unwrap().to_bytes(), bytes);

    let mut partial = ckpt.clone();
    partial.model.goal_selector = None;
    let c = partial.to_container().unwrap();
    assert!(Checkpoint::from_container(&c).unwrap().model.goal_selector.is_none());

    let full = Container::from_bytes(&bytes).unwrap();
    let mut cut = Container::new();
    for e in full.entries().iter().filter(|e| !e.name.starts_with("heads/")) {
        cut.push(e.name.clone(), &e.shape, e.payload.clone()).unwrap();
    }
    let err = Checkpoint::from_container(&cut).unwrap_err().to_string();
    assert!(err.contains("heads"), "{err}");
}

#[test]
fn report_has_a_row_per_tier_category_and_policy() {
    let cfg = tiny();
    let ckpt = &run().trained.checkpoint;
    let objects = eval_objects(&cfg, Some(ckpt), 2).unwrap();
    let ev = evaluate(&cfg, Some(ckpt), &objects, 3, 2).unwrap();
    let groups: usize = Tier::ALL.iter().map(|&t| cfg.roster.tier_categories(t).len()).sum();
    assert_eq!(ev.rows.len(), groups * 3);
    assert!(ev.rows.iter().any(|r| r.policy == PolicyKind::ModelGoal));
    let csv = report_csv(&ev.rows);
    assert_eq!(csv.lines().next(), Some(REPORT_HEADER));
    assert_eq!(csv.lines().count(), 1 + ev.rows.len());
    let trials: usize = ev.rows.iter().map(|r| r.metrics.trials).sum();
    assert_eq!(trials, ev.log.len());

    let random_only = evaluate(&cfg, None, &eval_objects(&cfg, None, 1).unwrap(), 3, 1).unwrap();
    assert_eq!(random_only.rows.len(), groups);
}

#[test]
fn inference_is_reproducible_and_checks_goals() {
    let cfg = tiny();
    let ckpt = &run().trained.checkpoint;
    let item = RosterItem { category: Category::CabinetPrismatic, instance: 0, fractions: vec![0.3] };
    let a = infer_once(&cfg, ckpt, &item, None, 5).unwrap();
    let b = infer_once(&cfg, ckpt, &item, None, 5).unwrap();
    assert_eq!(a.describe(), b.describe());
    let q = a.inference.action.rot;
    assert!((q.dot(q).sqrt() - 1.0).abs() < 1e-6);
    assert_eq!(a.pixels.len(), a.inference.candidates.len());

    let goal = a.depth.cast::<f32>();
    assert!(infer_once(&cfg, ckpt, &item, Some(&goal), 5).is_ok());
    let mut bare = ckpt.clone();
    bare.model.goal_selector = None;
    let err = infer_once(&cfg, &bare, &item, Some(&goal), 5).unwrap_err();
    assert!(err.to_string().contains("goal selector"), "{err}");
}
