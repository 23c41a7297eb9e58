//! End-to-end commands: dataset generation, training, evaluation and
//! single-shot inference. Each writes its resolved configuration next to its
//! outputs.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use tensor::container::Container;

use crate::config::{RosterItem, RunConfig, Tier};
use crate::datagen::{adaptive_collect, observe, prepare_entry, Collection, SceneEntry};
use crate::dataset::{Dataset, EntryInfo, Manifest, DATASET_FORMAT};
use crate::eval::{
    report_csv, report_rows, run_trials, scene_scores, score_heatmap, EvalObject, GoalSpec, PolicyKind, ReportRow,
    Trial, TrialContext,
};
use crate::goalcond::finetune_goal;
use crate::io::{read_pgm16, write_ppm, write_text};
use crate::kinematics::{classify_outcome, execute_primitive, ModeId};
use crate::model::{loss_csv, InferConfig, Inference, InteractionModel, LossRow, TrainingSet, GOAL_PREFIX};
use crate::perception::{train_depth_autoencoder, DepthAutoencoder};
use crate::render::DepthImage;
use crate::{rng, Error, Result};

pub const DATASET_FILE: &str = "dataset.aaim";
pub const ROUNDS_FILE: &str = "rounds.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.aaim";
pub const LOSS_FILE: &str = "loss.csv";
pub const GOAL_LOSS_FILE: &str = "goal_loss.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const CONFIG_FILE: &str = "config.toml";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn echo_config(cfg: &RunConfig, dir: &Path) -> Result<String> {
    let text = cfg.to_toml()?;
    write_text(dir.join(CONFIG_FILE), &text)?;
    Ok(text)
}

/// Renders of every training instance in random joint states plus the
/// roster states, from every camera.
pub fn autoencoder_corpus(cfg: &RunConfig) -> Result<Vec<DepthImage<f32>>> {
    let items = cfg.roster.training_items();
    let instances: BTreeSet<_> = items.iter().map(|i| (i.category, i.instance)).collect();
    let mut states: Vec<RosterItem> = items.clone();
    for &(category, instance) in &instances {
        let mut r = rng::stream(cfg.seed, "data/ae-corpus", &[category as u64, instance]);
        for _ in 0..cfg.autoencoder.states_per_instance {
            let fractions = (0..category.joint_count())
                .map(|_| if r.random_bool(0.3) { 0.0 } else { r.random_range(0.0..1.0) })
                .collect();
            states.push(RosterItem { category, instance, fractions });
        }
    }
    let mut corpus = Vec::new();
    for item in &states {
        let obs = observe(&item.build()?, &cfg.sensing)?;
        corpus.extend(obs.depths.iter().map(|d| d.cast()));
    }
    Ok(corpus)
}

pub struct GenData {
    pub dataset: Dataset,
    pub scenes: Vec<SceneEntry>,
}

/// Pretrains the depth encoder, runs adaptive collection on the training
/// roster and assembles the dataset in memory.
pub fn generate_dataset(cfg: &RunConfig, jobs: usize) -> Result<GenData> {
    cfg.validate()?;
    let corpus = autoencoder_corpus(cfg)?;
    let mut r = rng::stream(cfg.seed, "data/ae", &[]);
    let (ae, losses) = train_depth_autoencoder(&corpus, &cfg.autoencoder.net(), &mut r)?;
    let ae_loss = *losses.last().unwrap_or(&f32::NAN);
    if !ae_loss.is_finite() {
        return Err(Error::Numeric("depth autoencoder loss is not finite".into()));
    }
    log::info!("depth autoencoder: {} images, final loss {ae_loss:.5}", corpus.len());
    let items = cfg.roster.training_items();
    let scenes = items
        .iter()
        .map(|item| prepare_entry(item.build()?, &cfg.sensing, &ae))
        .collect::<Result<Vec<_>>>()?;
    let collection = adaptive_collect(&scenes, &ae, &cfg.data, &cfg.contact, cfg.seed, jobs)?;
    let manifest = manifest(cfg, &items, &collection, &ae, ae_loss)?;
    let dataset = Dataset::assemble(manifest, ae, &scenes, collection);
    Ok(GenData { dataset, scenes })
}

fn manifest(cfg: &RunConfig, items: &[RosterItem], col: &Collection, ae: &DepthAutoencoder, ae_loss: f32) -> Result<Manifest> {
    Ok(Manifest {
        format: DATASET_FORMAT,
        seed: cfg.seed,
        lambda: col.lambda,
        embed_dim: ae.embed_dim,
        image_width: ae.width,
        image_height: ae.height,
        cameras: crate::render::VIEW_YAWS_DEG.len(),
        records: col.records.len(),
        labelled_successes: col.records.iter().filter(|r| r.label).count(),
        gt_successes: col.records.iter().filter(|r| r.gt_success).count(),
        autoencoder_final_loss: ae_loss,
        entries: items
            .iter()
            .map(|i| EntryInfo { category: i.category, instance: i.instance, fractions: i.fractions.clone() })
            .collect(),
        rounds: col.rounds.clone(),
        config: cfg.to_toml()?,
    })
}

/// Per-round source counts and mode balance, one row per round.
pub fn rounds_csv(m: &Manifest) -> String {
    let mut s = String::from("round,random,mixture,labelled_successes,gt_successes,modes\n");
    for r in &m.rounds {
        let modes: Vec<String> = r.modes.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.round,
            r.random,
            r.mixture,
            r.labelled_successes,
            r.gt_successes,
            modes.join(" ")
        );
    }
    s
}

/// Text rendering of the per-round mode balance.
pub fn rounds_summary(m: &Manifest) -> String {
    let mut s = format!("lambda = {:.5}\n", m.lambda);
    for r in &m.rounds {
        let total: usize = r.modes.values().sum();
        let _ = write!(
            s,
            "round {}: {} random + {} mixture, {} labelled, {} true successes",
            r.round, r.random, r.mixture, r.labelled_successes, r.gt_successes
        );
        for (k, v) in &r.modes {
            let _ = write!(s, " | {k} {:.0}%", 100.0 * *v as f64 / total.max(1) as f64);
        }
        s.push('\n');
    }
    s
}

pub fn cmd_gen_data(cfg: &RunConfig, out: &Path, jobs: usize) -> Result<Dataset> {
    create_dir(out)?;
    echo_config(cfg, out)?;
    let data = generate_dataset(cfg, jobs)?.dataset;
    data.write(out.join(DATASET_FILE))?;
    write_text(out.join(ROUNDS_FILE), &rounds_csv(&data.manifest))?;
    Ok(data)
}

/// Trained networks with the configuration that produced them.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: InteractionModel,
    pub ae: DepthAutoencoder,
    pub config: String,
}

impl Checkpoint {
    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new();
        c.push_text("checkpoint/config", &self.config)?;
        c.push_text(
            "checkpoint/depth",
            &format!("{} {} {}", self.ae.width, self.ae.height, self.ae.embed_dim),
        )?;
        self.ae.save(&mut c)?;
        self.model.save(&mut c)?;
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let missing = |s: &str| Error::Data(format!("missing checkpoint section `{s}`"));
        let config = c.text("checkpoint/config").map_err(|_| missing("checkpoint"))?.to_string();
        let dims: Vec<usize> = c
            .text("checkpoint/depth")
            .map_err(|_| missing("checkpoint"))?
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| Error::Data("malformed depth encoder shape".into())))
            .collect::<Result<_>>()?;
        if dims.len() != 3 {
            return Err(Error::Data("malformed depth encoder shape".into()));
        }
        for s in ["enc_depth", "dec_depth"] {
            if !c.has_section(s) {
                return Err(missing(s));
            }
        }
        let ae = DepthAutoencoder::load(c, dims[0], dims[1], dims[2])?;
        let model = InteractionModel::load(c)?;
        Ok(Self { model, ae, config })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(self.to_container()?.write(path)?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let c = Container::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        Self::from_container(&c)
    }
}

pub struct Trained {
    pub checkpoint: Checkpoint,
    /// Checksum of every non-selector parameter right after joint training.
    pub base_checksum: u64,
    pub curve: Vec<LossRow>,
    pub goal_curve: Vec<LossRow>,
}

fn check_dims(cfg: &RunConfig, data: &Dataset) -> Result<()> {
    let m = &data.manifest;
    let cam = &cfg.sensing.camera;
    let mismatch = |what: &str, a: usize, b: usize| Error::Data(format!("dataset {what} is {a}, config says {b}"));
    if m.embed_dim != cfg.autoencoder.embed_dim {
        return Err(mismatch("embedding size", m.embed_dim, cfg.autoencoder.embed_dim));
    }
    if m.image_width != cam.width || m.image_height != cam.image_height {
        return Err(mismatch("image width", m.image_width, cam.width));
    }
    for e in &data.entries {
        if e.tsdf.dims.iter().any(|&d| d % cfg.model.planes.resolution != 0) {
            return Err(Error::Data(format!(
                "dataset grid {:?} is not divisible by plane resolution {}",
                e.tsdf.dims, cfg.model.planes.resolution
            )));
        }
    }
    Ok(())
}

/// Joint training followed, when budgeted, by goal-selector fine-tuning.
pub fn train_model(cfg: &RunConfig, data: &Dataset) -> Result<Trained> {
    cfg.validate()?;
    check_dims(cfg, data)?;
    let set = TrainingSet::from_dataset(data, cfg.model.planes.resolution)?;
    let mut init = rng::stream(cfg.seed, "train/init", &[]);
    let mut model = InteractionModel::new(&cfg.model, data.manifest.embed_dim, &mut init);
    let curve = model.train(&set, &cfg.train, cfg.seed)?;
    let base_checksum = model.checksum_excluding(GOAL_PREFIX);
    let goal_curve = if cfg.train.goal_fraction > 0.0 && set.successes() > 0 {
        finetune_goal(&mut model, &set, &cfg.train, cfg.seed)?
    } else {
        Vec::new()
    };
    let checkpoint = Checkpoint { model, ae: data.ae.clone(), config: cfg.to_toml()? };
    Ok(Trained { checkpoint, base_checksum, curve, goal_curve })
}

pub fn cmd_train(cfg: &RunConfig, dataset: &Path, out: &Path) -> Result<Trained> {
    create_dir(out)?;
    echo_config(cfg, out)?;
    let data = Dataset::read(dataset)?;
    let trained = train_model(cfg, &data)?;
    trained.checkpoint.write(out.join(CHECKPOINT_FILE))?;
    write_text(out.join(LOSS_FILE), &loss_csv(&trained.curve))?;
    if !trained.goal_curve.is_empty() {
        write_text(out.join(GOAL_LOSS_FILE), &loss_csv(&trained.goal_curve))?;
    }
    Ok(trained)
}

pub struct Evaluation {
    pub objects: Vec<EvalObject>,
    pub log: Vec<Trial>,
    pub rows: Vec<ReportRow>,
}

pub fn infer_config(cfg: &RunConfig) -> InferConfig {
    InferConfig { candidates: cfg.eval.candidates, temperature: cfg.eval.temperature }
}

/// Evaluation objects of every tier, prepared for the given networks.
pub fn eval_objects(cfg: &RunConfig, ckpt: Option<&Checkpoint>, jobs: usize) -> Result<Vec<EvalObject>> {
    let mut items = Vec::new();
    for tier in Tier::ALL {
        items.extend(cfg.roster.tier_items(tier).into_iter().map(|i| (tier, i)));
    }
    let prepared = crate::parallel::par_map(&items, jobs, |_, (tier, item)| {
        EvalObject::prepare(item, *tier, &cfg.sensing, ckpt.map(|c| &c.ae), ckpt.map(|c| &c.model))
    });
    prepared.into_iter().collect()
}

/// Runs every available policy on every tier. Each (tier, category,
/// policy) group gets at least `eval.trials` trials spread over its objects.
pub fn evaluate(cfg: &RunConfig, ckpt: Option<&Checkpoint>, objects: &[EvalObject], seed: u64, jobs: usize) -> Result<Evaluation> {
    let mut policies = vec![PolicyKind::Random];
    if let Some(c) = ckpt {
        policies.push(PolicyKind::Model);
        if c.model.goal_selector.is_some() {
            policies.push(PolicyKind::ModelGoal);
        }
    }
    let ctx = TrialContext {
        model: ckpt.map(|c| &c.model),
        ae: ckpt.map(|c| &c.ae),
        infer: infer_config(cfg),
        contact: cfg.contact,
        goals: Some(GoalSpec::PreferIncrease),
    };
    let mut log = Vec::new();
    for tier in Tier::ALL {
        for category in cfg.roster.tier_categories(tier) {
            let group: Vec<EvalObject> =
                objects.iter().filter(|o| o.tier == tier && o.item.category == category).cloned().collect();
            let n = cfg.eval.trials.div_ceil(group.len().max(1));
            let offset = objects.iter().position(|o| o.tier == tier && o.item.category == category).unwrap_or(0);
            for &p in &policies {
                let mut trials = run_trials(p, &group, n, &ctx, seed, jobs)?;
                for t in &mut trials {
                    t.object += offset;
                }
                log.extend(trials);
            }
        }
    }
    let rows = report_rows(&log, objects, cfg.eval.entropy_over_all)?;
    Ok(Evaluation { objects: objects.to_vec(), log, rows })
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>, out: &Path, jobs: usize) -> Result<Evaluation> {
    cfg.validate()?;
    create_dir(out)?;
    echo_config(cfg, out)?;
    let ckpt = checkpoint.map(Checkpoint::read).transpose()?;
    let objects = eval_objects(cfg, ckpt.as_ref(), jobs)?;
    let ev = evaluate(cfg, ckpt.as_ref(), &objects, cfg.seed, jobs)?;
    write_text(out.join(REPORT_FILE), &report_csv(&ev.rows))?;
    if let Some(c) = &ckpt {
        let dir = out.join("heatmaps");
        create_dir(&dir)?;
        for (k, obj) in ev.objects.iter().enumerate() {
            let mut r = rng::stream(cfg.seed, "eval/heatmap", &[k as u64]);
            let (pixels, scores) = scene_scores(&c.model, obj, 0, &mut r)?;
            let depth = &obj.obs.depths[0];
            let rgb = score_heatmap(depth, &pixels, &scores);
            let name = format!("{}_{}.ppm", obj.tier.name(), heatmap_name(&obj.item));
            write_ppm(dir.join(name), depth.width, depth.height, &rgb)?;
        }
    }
    Ok(ev)
}

fn heatmap_name(item: &RosterItem) -> String {
    let f: Vec<String> = item.fractions.iter().map(|v| format!("{v}")).collect();
    format!("{}_{}_{}", item.category, item.instance, f.join("-"))
}

/// Result of a single inference with its simulated outcome.
#[derive(Clone, Debug)]
pub struct InferOutcome {
    pub inference: Inference,
    pub camera: usize,
    pub success: bool,
    pub mode: Option<ModeId>,
    pub depth: DepthImage<f64>,
    pub pixels: Vec<usize>,
}

impl InferOutcome {
    /// Human-readable action and outcome.
    pub fn describe(&self) -> String {
        let a = &self.inference.action;
        let (p, q, f) = (a.point, a.rot, a.dir);
        let mode = self.mode.map_or_else(|| "none".to_string(), |m| m.to_string());
        format!(
            "point     = [{:.6}, {:.6}, {:.6}]\nrotation  = [{:.6}, {:.6}, {:.6}, {:.6}]\ndirection = [{:.6}, {:.6}, {:.6}]\nsuccess   = {}\nmode      = {mode}\n",
            p.x, p.y, p.z, q.w, q.x, q.y, q.z, f.x, f.y, f.z, self.success
        )
    }

    /// `x,y,z,score` for every scored candidate.
    pub fn scores_csv(&self) -> String {
        let mut s = String::from("x,y,z,score\n");
        for (p, v) in self.inference.candidates.iter().zip(&self.inference.scores) {
            let _ = writeln!(s, "{:.6},{:.6},{:.6},{:.6}", p.x, p.y, p.z, v);
        }
        s
    }
}

/// One action for `item` seen from camera 0, optionally toward a goal image.
pub fn infer_once(cfg: &RunConfig, ckpt: &Checkpoint, item: &RosterItem, goal: Option<&DepthImage<f32>>, seed: u64) -> Result<InferOutcome> {
    let obj = EvalObject::prepare(item, Tier::UnseenStates, &cfg.sensing, Some(&ckpt.ae), Some(&ckpt.model))?;
    let camera = 0;
    let feat = obj.feature.as_ref().expect("prepared with a model");
    let mut r = rng::stream(seed, "infer", &[]);
    let infer = infer_config(cfg);
    let inference = match goal {
        Some(img) => {
            if ckpt.model.goal_selector.is_none() {
                return Err(Error::Data("a goal image needs a checkpoint with a trained goal selector".into()));
            }
            if img.width != ckpt.ae.width || img.height != ckpt.ae.height {
                return Err(Error::Data(format!(
                    "goal image is {}x{}, expected {}x{}",
                    img.width, img.height, ckpt.ae.width, ckpt.ae.height
                )));
            }
            let e0 = &obj.e0.as_ref().expect("prepared with an encoder")[camera];
            let g = ckpt.ae.embed(img)?;
            crate::goalcond::infer_goal_action(&ckpt.model, feat, &obj.clouds[camera], e0, &g, &infer, &mut r)?
        }
        None => ckpt.model.infer_action(feat, &obj.clouds[camera], None, &infer, &mut r)?,
    };
    let (after, _) = execute_primitive(&obj.object, &inference.action, &cfg.contact)?;
    let (success, mode) = classify_outcome(&obj.object, &after)?;
    let pixels = inference
        .candidates
        .iter()
        .map(|p| {
            obj.obs.clouds[camera]
                .iter()
                .find(|(_, q)| q == p)
                .map(|&(px, _)| px)
                .expect("candidates come from the cloud")
        })
        .collect();
    Ok(InferOutcome { inference, camera, success, mode, depth: obj.obs.depths[camera].clone(), pixels })
}

pub fn cmd_infer(
    cfg: &RunConfig,
    checkpoint: &Path,
    item: &RosterItem,
    goal: Option<&Path>,
    out: Option<&Path>,
) -> Result<InferOutcome> {
    cfg.validate()?;
    let ckpt = Checkpoint::read(checkpoint)?;
    let goal = goal.map(read_pgm16::<f32>).transpose()?;
    let res = infer_once(cfg, &ckpt, item, goal.as_ref(), cfg.seed)?;
    if let Some(dir) = out {
        create_dir(dir)?;
        echo_config(cfg, dir)?;
        write_text(dir.join("scores.csv"), &res.scores_csv())?;
        write_text(dir.join("action.txt"), &res.describe())?;
        let rgb = score_heatmap(&res.depth, &res.pixels, &res.inference.scores);
        write_ppm(dir.join("heatmap.ppm"), res.depth.width, res.depth.height, &rgb)?;
    }
    Ok(res)
}
