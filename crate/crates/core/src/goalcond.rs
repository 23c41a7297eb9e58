//! Goal-conditioned variant: a deterministic selector maps the current and
//! goal embeddings to the mode latent, fine-tuned with everything else
//! frozen.

use rand::Rng;

use crate::config::TrainConfig;
use crate::datagen::Observation;
use crate::kinematics::{ArticulatedObject, Direction, ModeId};
use crate::model::{InferConfig, Inference, InteractionModel, LatentSource, LossRow, TrainingSet, GOAL_PREFIX};
use crate::perception::{DepthAutoencoder, TriPlaneFeature};
use crate::render::{render_scene, DepthImage};
use crate::kinematics::Scene;
use crate::{rng, Error, Result};

/// Joint displacement of a constructed goal, as a fraction of the range.
pub const GOAL_STEP: f64 = 0.3;

/// Fits a fresh goal selector on labelled successes, each record using its
/// own final embedding as the goal. Every other parameter stays frozen.
pub fn finetune_goal(model: &mut InteractionModel, set: &TrainingSet, cfg: &TrainConfig, seed: u64) -> Result<Vec<LossRow>> {
    let pool = set.success_pool();
    if pool.iter().all(Vec::is_empty) {
        return Err(Error::Data("goal fine-tuning needs labelled successes".into()));
    }
    init_goal_selector(model, seed);
    model.store.set_frozen("", true);
    model.store.set_frozen(GOAL_PREFIX, false);
    let steps = ((cfg.steps as f64 * cfg.goal_fraction).round() as usize).max(1);
    let curve = model.run_steps(set, &pool, cfg, steps, LatentSource::Goal, "goal/step", seed);
    model.store.set_frozen("", false);
    curve
}

/// Attaches the untrained selector that [`finetune_goal`] starts from.
pub fn init_goal_selector(model: &mut InteractionModel, seed: u64) {
    model.add_goal_selector(&mut rng::stream(seed, "goal/init", &[]));
}

/// Mean fine-tuning loss of the current selector over fixed batches of
/// labelled successes.
pub fn goal_loss(model: &InteractionModel, set: &TrainingSet, cfg: &TrainConfig, batches: usize, seed: u64) -> Result<LossRow> {
    model.evaluate_losses(set, cfg, true, batches, seed)
}

/// As [`InteractionModel::infer_action`] with the latent taken from the
/// goal selector instead of the prior.
pub fn infer_goal_action<R: Rng + ?Sized>(
    model: &InteractionModel,
    feat: &TriPlaneFeature,
    cloud: &[crate::geom::Vec3<f64>],
    e0: &[f32],
    goal: &[f32],
    cfg: &InferConfig,
    rng: &mut R,
) -> Result<Inference> {
    let z = model.goal_latent(e0, goal)?;
    model.infer_action(feat, cloud, Some(&z), cfg, rng)
}

/// The object after moving `mode`'s joint by [`GOAL_STEP`] of its range,
/// or `None` when the joint is already at that limit.
pub fn goal_state(obj: &ArticulatedObject<f64>, mode: ModeId) -> Option<ArticulatedObject<f64>> {
    let j = obj.joints.get(mode.joint)?;
    let step = GOAL_STEP * j.range();
    let target = match mode.dir {
        Direction::Increase => (j.value + step).min(j.hi),
        Direction::Decrease => (j.value - step).max(j.lo),
    };
    if (target - j.value).abs() < 1e-9 {
        return None;
    }
    let mut next = obj.clone();
    next.joints[mode.joint].value = target;
    Some(next)
}

/// Goal depth image for `mode` seen from the observation's `camera`.
pub fn goal_image(obs: &Observation, obj: &ArticulatedObject<f64>, mode: ModeId, camera: usize) -> Option<DepthImage<f32>> {
    let next = goal_state(obj, mode)?;
    Some(render_scene(&Scene::new(&next), &obs.cameras[camera]).cast())
}

/// Goal image embedded by the depth encoder.
pub fn goal_embedding(ae: &DepthAutoencoder, image: &DepthImage<f32>) -> Result<Vec<f32>> {
    ae.embed(image)
}
