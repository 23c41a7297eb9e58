//! Run configuration: object roster, sensing, collection, model, training
//! and evaluation settings, serialized as TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::{CollectConfig, SensingConfig};
use crate::kinematics::{make_object, ArticulatedObject, Category, ContactParams};
use crate::perception::{AutoencoderConfig, PlaneConfig};
use crate::{Error, Result};

/// Instances of one category, each placed in every listed state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSet {
    pub category: Category,
    pub instances: Vec<u64>,
    /// Joint fractions per state; a single value applies to every joint.
    pub states: Vec<Vec<f64>>,
}

/// Where an evaluated object sits relative to the training roster.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tier {
    UnseenStates,
    UnseenInstances,
    UnseenCategories,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::UnseenStates, Tier::UnseenInstances, Tier::UnseenCategories];

    pub fn name(self) -> &'static str {
        match self {
            Tier::UnseenStates => "unseen-states",
            Tier::UnseenInstances => "unseen-instances",
            Tier::UnseenCategories => "unseen-categories",
        }
    }
}

/// A concrete object in a concrete state.
#[derive(Clone, Debug, PartialEq)]
pub struct RosterItem {
    pub category: Category,
    pub instance: u64,
    pub fractions: Vec<f64>,
}

impl RosterItem {
    pub fn build(&self) -> Result<ArticulatedObject<f64>> {
        make_object(self.category, self.instance, &self.fractions)
    }

    pub fn label(&self) -> String {
        let f: Vec<String> = self.fractions.iter().map(|v| format!("{v}")).collect();
        format!("{}#{}@{}", self.category, self.instance, f.join("/"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roster {
    pub train: Vec<ObjectSet>,
    #[serde(default)]
    pub unseen_states: Vec<ObjectSet>,
    #[serde(default)]
    pub unseen_instances: Vec<ObjectSet>,
    #[serde(default)]
    pub unseen_categories: Vec<ObjectSet>,
}

fn expand(sets: &[ObjectSet]) -> Vec<RosterItem> {
    let mut out = Vec::new();
    for s in sets {
        for &instance in &s.instances {
            for f in &s.states {
                out.push(RosterItem { category: s.category, instance, fractions: f.clone() });
            }
        }
    }
    out
}

impl Roster {
    pub fn training_items(&self) -> Vec<RosterItem> {
        expand(&self.train)
    }

    pub fn tier_items(&self, tier: Tier) -> Vec<RosterItem> {
        expand(match tier {
            Tier::UnseenStates => &self.unseen_states,
            Tier::UnseenInstances => &self.unseen_instances,
            Tier::UnseenCategories => &self.unseen_categories,
        })
    }

    /// Categories present in a tier, in first-appearance order.
    pub fn tier_categories(&self, tier: Tier) -> Vec<Category> {
        let mut out = Vec::new();
        for item in self.tier_items(tier) {
            if !out.contains(&item.category) {
                out.push(item.category);
            }
        }
        out
    }
}

impl Default for Roster {
    fn default() -> Self {
        let set = |category, instances: &[u64], states: &[f64]| ObjectSet {
            category,
            instances: instances.to_vec(),
            states: states.iter().map(|&s| vec![s]).collect(),
        };
        Self {
            train: vec![
                set(Category::CabinetPrismatic, &[0, 1], &[0.0, 0.6]),
                set(Category::CabinetRevolute, &[0, 1], &[0.0, 0.6]),
            ],
            unseen_states: vec![
                set(Category::CabinetPrismatic, &[0, 1], &[0.3, 0.9]),
                set(Category::CabinetRevolute, &[0, 1], &[0.3, 0.9]),
            ],
            unseen_instances: vec![
                set(Category::CabinetPrismatic, &[10, 11], &[0.0, 0.6]),
                set(Category::CabinetRevolute, &[10, 11], &[0.0, 0.6]),
            ],
            unseen_categories: vec![set(Category::Switch, &[0, 1], &[0.0, 1.0])],
        }
    }
}

/// Depth autoencoder settings and the renders it is pretrained on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub embed_dim: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Random joint configurations rendered per training instance.
    pub states_per_instance: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        let net = AutoencoderConfig::default();
        Self { embed_dim: net.embed_dim, steps: net.steps, batch: net.batch, lr: net.lr, states_per_instance: 12 }
    }
}

impl PretrainConfig {
    pub fn net(&self) -> AutoencoderConfig {
        AutoencoderConfig { embed_dim: self.embed_dim, steps: self.steps, batch: self.batch, lr: self.lr }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Mode latent size.
    pub latent: usize,
    /// Hidden width of every MLP.
    pub width: usize,
    pub planes: PlaneConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { latent: 8, width: 128, planes: PlaneConfig::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    /// KL weight of the mode selector.
    pub beta: f64,
    /// Records per scene in a batch.
    pub records_per_scene: usize,
    /// Scenes drawn per batch.
    pub scenes_per_batch: usize,
    /// Rotation/direction draws behind each point label.
    pub point_samples: usize,
    /// Fine-tuning budget of the goal selector relative to `steps`.
    pub goal_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            lr: 1e-3,
            beta: 0.1,
            records_per_scene: 8,
            scenes_per_batch: 4,
            point_samples: 100,
            goal_fraction: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Trials per (tier, category, policy).
    pub trials: usize,
    pub temperature: f64,
    /// Candidate points scored per inference.
    pub candidates: usize,
    /// Mode shares over all trials instead of over successes.
    pub entropy_over_all: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { trials: 200, temperature: 0.1, candidates: 512, entropy_over_all: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub roster: Roster,
    #[serde(default)]
    pub sensing: SensingConfig,
    #[serde(default)]
    pub contact: ContactParams,
    #[serde(default)]
    pub data: CollectConfig,
    #[serde(default)]
    pub autoencoder: PretrainConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            roster: Roster::default(),
            sensing: SensingConfig::default(),
            contact: ContactParams::default(),
            data: CollectConfig::default(),
            autoencoder: PretrainConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn check(ok: bool, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(msg.into()))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        check(!self.roster.training_items().is_empty(), "roster.train lists no objects")?;
        for set in self.roster.train.iter().chain(&self.roster.unseen_states).chain(&self.roster.unseen_instances).chain(&self.roster.unseen_categories) {
            check(!set.instances.is_empty() && !set.states.is_empty(), "every object set needs instances and states")?;
            for f in &set.states {
                let n = set.category.joint_count();
                check(f.len() == 1 || f.len() == n, "state fractions must list one value or one per joint")?;
                check(f.iter().all(|v| (0.0..=1.0).contains(v)), "state fractions must lie in [0, 1]")?;
            }
        }
        let cam = &self.sensing.camera;
        check(cam.width % 8 == 0 && cam.image_height % 8 == 0 && cam.width > 0 && cam.image_height > 0, "camera resolution must be a positive multiple of 8")?;
        check(cam.fov_deg > 0.0 && cam.fov_deg < 180.0, "camera fov must lie in (0, 180)")?;
        check(self.sensing.grid_voxels % self.model.planes.resolution == 0, "grid voxels must be divisible by the plane resolution")?;
        check(self.sensing.grid_side > 0.0 && self.sensing.trunc_voxels > 0.0, "grid side and truncation must be positive")?;
        let d = &self.data;
        check(d.rounds >= 1 && d.episodes_per_round >= 1, "data.rounds and data.episodes_per_round must be >= 1")?;
        check((0.0..=1.0).contains(&d.epsilon), "data.epsilon must lie in [0, 1]")?;
        check(d.components >= 1, "data.components must be >= 1")?;
        check((0.0..=100.0).contains(&d.lambda_percentile), "data.lambda_percentile must lie in [0, 100]")?;
        check(d.jitter >= 0.0, "data.jitter must be non-negative")?;
        let c = &self.contact;
        check(c.contact_radius > 0.0 && c.move_distance > 0.0, "contact radius and move distance must be positive")?;
        let a = &self.autoencoder;
        check(a.embed_dim >= 1 && a.batch >= 1 && a.lr > 0.0, "autoencoder settings must be positive")?;
        check(a.states_per_instance >= 1, "autoencoder.states_per_instance must be >= 1")?;
        let m = &self.model;
        check(m.latent >= 1 && m.width >= 1 && m.planes.channels >= 1 && m.planes.resolution >= 2, "model sizes must be positive")?;
        let t = &self.train;
        check(t.lr > 0.0 && t.beta >= 0.0, "train.lr must be positive and train.beta non-negative")?;
        check(t.records_per_scene >= 1 && t.scenes_per_batch >= 1 && t.point_samples >= 1, "train batch settings must be >= 1")?;
        check((0.0..=1.0).contains(&t.goal_fraction), "train.goal_fraction must lie in [0, 1]")?;
        let e = &self.eval;
        check(e.trials >= 1 && e.candidates >= 1, "eval.trials and eval.candidates must be >= 1")?;
        check(e.temperature >= 0.0, "eval.temperature must be non-negative")?;
        Ok(())
    }
}
