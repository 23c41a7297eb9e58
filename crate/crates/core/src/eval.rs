//! Trial runner and discovery metrics.
//!
//! Metrics over a log of trials on one object state with `k` ground-truth
//! modes:
//!
//! * `ssr`: successes / trials
//! * `eta`: `ssr * distinct successful modes / k`
//! * `entropy`: `ssr * H / ln k`, `H` the natural-log entropy of the mode
//!   shares among successes (a ratio of 1 when `k = 1`)
//! * `ssr_goal`: trials whose mode matched the requested goal / trials

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{RosterItem, Tier};
use crate::datagen::{observe, random_policy, Observation, SensingConfig};
use crate::geom::Vec3;
use crate::goalcond::goal_image;
use crate::kinematics::{
    classify_outcome, enumerate_gt_modes, execute_in_scene, ActionPrimitive, ArticulatedObject, Category,
    ContactParams, Direction, ModeId, Scene,
};
use crate::model::{InferConfig, InteractionModel};
use crate::parallel::par_map;
use crate::perception::{project_volume, DepthAutoencoder, TriPlaneFeature};
use crate::render::DepthImage;
use crate::{rng, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Random,
    /// Learned model with prior-sampled mode latents.
    Model,
    /// Learned model with goal-selected latents.
    ModelGoal,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Random => "random",
            PolicyKind::Model => "model",
            PolicyKind::ModelGoal => "model-goal",
        }
    }
}

/// What happened in one trial, as the metrics see it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrialOutcome {
    pub success: bool,
    pub mode: Option<ModeId>,
    pub goal_reached: Option<bool>,
}

impl TrialOutcome {
    pub fn new(success: bool, mode: Option<ModeId>) -> Self {
        Self { success, mode, goal_reached: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    /// Index into the evaluated object list.
    pub object: usize,
    pub tier: Tier,
    pub category: Category,
    pub policy: PolicyKind,
    pub index: usize,
    pub camera: usize,
    pub action: ActionPrimitive<f64>,
    /// The chosen point lies on a link that can move.
    pub on_movable: bool,
    pub goal: Option<ModeId>,
    pub outcome: TrialOutcome,
}

/// An evaluation object state with everything the policies need.
#[derive(Clone, Debug)]
pub struct EvalObject {
    pub item: RosterItem,
    pub tier: Tier,
    pub object: ArticulatedObject<f64>,
    pub obs: Observation,
    pub clouds: Vec<Vec<Vec3<f64>>>,
    /// Initial embeddings per camera; required by goal-conditioned trials.
    pub e0: Option<Vec<Vec<f32>>>,
    /// Tri-plane features; required by learned policies.
    pub feature: Option<TriPlaneFeature>,
}

impl EvalObject {
    pub fn prepare(
        item: &RosterItem,
        tier: Tier,
        sensing: &SensingConfig,
        ae: Option<&DepthAutoencoder>,
        model: Option<&InteractionModel>,
    ) -> Result<Self> {
        let object = item.build()?;
        let obs = observe(&object, sensing)?;
        let clouds = (0..obs.cameras.len()).map(|c| obs.cloud_points(c)).collect();
        let e0 = match ae {
            Some(ae) => {
                let d: Vec<DepthImage<f32>> = obs.depths.iter().map(|d| d.cast()).collect();
                Some(ae.embed_batch(&d.iter().collect::<Vec<_>>())?)
            }
            None => None,
        };
        let feature = match model {
            Some(m) => {
                let tsdf = obs.fused_tsdf(&sensing.grid(object.centroid()))?;
                Some(m.encode_scene(&project_volume(&tsdf, m.cfg.planes.resolution)?)?)
            }
            None => None,
        };
        Ok(Self { item: item.clone(), tier, object, obs, clouds, e0, feature })
    }
}

/// Shared settings and networks for a batch of trials.
#[derive(Clone, Copy)]
pub struct TrialContext<'a> {
    pub model: Option<&'a InteractionModel>,
    pub ae: Option<&'a DepthAutoencoder>,
    pub infer: InferConfig,
    pub contact: ContactParams,
    /// Goal direction per trial; `None` disables goals.
    pub goals: Option<GoalSpec>,
}

/// Which ground-truth modes are requested as goals.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GoalSpec {
    /// Increase modes when the state has any, otherwise every mode.
    PreferIncrease,
    Any,
}

fn goal_modes(obj: &ArticulatedObject<f64>, spec: GoalSpec) -> Vec<ModeId> {
    let all = enumerate_gt_modes(obj);
    if spec == GoalSpec::PreferIncrease {
        let inc: Vec<ModeId> = all.iter().copied().filter(|m| m.dir == Direction::Increase).collect();
        if !inc.is_empty() {
            return inc;
        }
    }
    all
}

fn need<'a, T>(v: Option<&'a T>, what: &str) -> Result<&'a T> {
    v.ok_or_else(|| Error::invalid("run_trials", format!("policy needs {what}")))
}

fn run_one(
    policy: PolicyKind,
    obj: &EvalObject,
    ctx: &TrialContext,
    seed: u64,
    path: [u64; 4],
) -> Result<(usize, ActionPrimitive<f64>, Option<ModeId>)> {
    let mut goal_rng = rng::stream(seed, "eval/goal", &path);
    let goal = ctx.goals.and_then(|spec| {
        let modes = goal_modes(&obj.object, spec);
        (!modes.is_empty()).then(|| modes[goal_rng.random_range(0..modes.len())])
    });
    let mut r = rng::stream(seed, "eval/trial", &[path[0], path[1], path[2], path[3], policy as u64]);
    let camera = r.random_range(0..obj.clouds.len());
    let cloud = &obj.clouds[camera];
    let action = match policy {
        PolicyKind::Random => random_policy(cloud, 0.0, &mut r)?,
        PolicyKind::Model => {
            let m = need(ctx.model, "a trained model")?;
            m.infer_action(need(obj.feature.as_ref(), "scene features")?, cloud, None, &ctx.infer, &mut r)?.action
        }
        PolicyKind::ModelGoal => {
            let m = need(ctx.model, "a trained model")?;
            let ae = need(ctx.ae, "the depth encoder")?;
            let e0 = &need(obj.e0.as_ref(), "initial embeddings")?[camera];
            let mode = goal.ok_or_else(|| Error::invalid("run_trials", "goal policy needs goals"))?;
            let img = goal_image(&obj.obs, &obj.object, mode, camera)
                .ok_or_else(|| Error::invalid("run_trials", "goal mode is not reachable"))?;
            let g = ae.embed(&img)?;
            let feat = need(obj.feature.as_ref(), "scene features")?;
            crate::goalcond::infer_goal_action(m, feat, cloud, e0, &g, &ctx.infer, &mut r)?.action
        }
    };
    Ok((camera, action, goal))
}

/// Runs `n` trials of `policy` on every object; per-trial seeds make the log
/// independent of `jobs`.
pub fn run_trials(
    policy: PolicyKind,
    objects: &[EvalObject],
    n: usize,
    ctx: &TrialContext,
    seed: u64,
    jobs: usize,
) -> Result<Vec<Trial>> {
    if n == 0 {
        return Err(Error::invalid("run_trials", "at least one trial per object is required"));
    }
    let per_object = par_map(objects, jobs, |k, obj| -> Result<Vec<Trial>> {
        let scene = Scene::new(&obj.object);
        let tier = obj.tier as u64;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let (camera, action, goal) = run_one(policy, obj, ctx, seed, [tier, obj.item.category as u64, k as u64, i as u64])?;
            let (after, _) = execute_in_scene(&obj.object, &scene, &action, &ctx.contact)?;
            let (success, mode) = classify_outcome(&obj.object, &after)?;
            let (dist, owner) = scene.sdf(action.point);
            let on_movable =
                owner.is_some_and(|l| obj.object.is_movable(l)) && dist.abs() <= ctx.contact.contact_radius;
            out.push(Trial {
                object: k,
                tier: obj.tier,
                category: obj.item.category,
                policy,
                index: i,
                camera,
                action,
                on_movable,
                goal,
                outcome: TrialOutcome { success, mode, goal_reached: goal.map(|g| mode == Some(g)) },
            });
        }
        Ok(out)
    });
    let mut log = Vec::with_capacity(objects.len() * n);
    for r in per_object {
        log.extend(r?);
    }
    Ok(log)
}

pub fn metric_ssr(log: &[TrialOutcome]) -> Result<f64> {
    if log.is_empty() {
        return Err(Error::invalid("metric_ssr", "empty trial log"));
    }
    Ok(log.iter().filter(|t| t.success).count() as f64 / log.len() as f64)
}

fn mode_counts(log: &[TrialOutcome]) -> BTreeMap<ModeId, usize> {
    let mut counts = BTreeMap::new();
    for t in log.iter().filter(|t| t.success) {
        if let Some(m) = t.mode {
            *counts.entry(m).or_insert(0) += 1;
        }
    }
    counts
}

pub fn metric_modes_ratio(log: &[TrialOutcome], gt_modes: usize) -> Result<f64> {
    if gt_modes == 0 {
        return Err(Error::invalid("metric_modes_ratio", "no ground-truth modes"));
    }
    let ssr = metric_ssr(log)?;
    Ok(ssr * (mode_counts(log).len().min(gt_modes) as f64 / gt_modes as f64))
}

/// Normalized entropy weighted by `ssr`. Mode shares are taken over
/// successes, or over every trial when `over_all` is set.
pub fn metric_norm_entropy(log: &[TrialOutcome], gt_modes: usize, over_all: bool) -> Result<f64> {
    if gt_modes == 0 {
        return Err(Error::invalid("metric_norm_entropy", "no ground-truth modes"));
    }
    let ssr = metric_ssr(log)?;
    let counts = mode_counts(log);
    let successes: usize = counts.values().sum();
    if successes == 0 {
        return Ok(0.0);
    }
    if gt_modes == 1 {
        return Ok(ssr);
    }
    let denom = if over_all { log.len() } else { successes } as f64;
    let h: f64 = counts
        .values()
        .map(|&c| {
            let p = c as f64 / denom;
            -p * p.ln()
        })
        .sum();
    // Adding 0.0 turns the -0.0 of a single mode into 0.0.
    Ok(ssr * (h / (gt_modes as f64).ln()).clamp(0.0, 1.0) + 0.0)
}

pub fn metric_ssr_goal(log: &[TrialOutcome]) -> Result<f64> {
    if log.is_empty() {
        return Err(Error::invalid("metric_ssr_goal", "empty trial log"));
    }
    let mut reached = 0;
    for t in log {
        match t.goal_reached {
            Some(true) => reached += 1,
            Some(false) => {}
            None => return Err(Error::invalid("metric_ssr_goal", "trial without a goal flag")),
        }
    }
    Ok(reached as f64 / log.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub trials: usize,
    pub successes: usize,
    pub ssr: f64,
    pub eta: f64,
    pub entropy: f64,
    pub ssr_goal: Option<f64>,
    /// Successful trials per mode label.
    pub modes: BTreeMap<String, usize>,
    pub gt_modes: usize,
}

/// Metrics for one object state.
pub fn report(log: &[TrialOutcome], gt_modes: usize, over_all: bool) -> Result<MetricReport> {
    let goals = log.iter().all(|t| t.goal_reached.is_some());
    Ok(MetricReport {
        trials: log.len(),
        successes: log.iter().filter(|t| t.success).count(),
        ssr: metric_ssr(log)?,
        eta: metric_modes_ratio(log, gt_modes)?,
        entropy: metric_norm_entropy(log, gt_modes, over_all)?,
        ssr_goal: if goals { Some(metric_ssr_goal(log)?) } else { None },
        modes: mode_counts(log).into_iter().map(|(m, c)| (m.to_string(), c)).collect(),
        gt_modes,
    })
}

/// Trial-weighted mean of per-state reports.
pub fn aggregate(parts: &[MetricReport]) -> Result<MetricReport> {
    let trials: usize = parts.iter().map(|r| r.trials).sum();
    if trials == 0 {
        return Err(Error::invalid("aggregate", "no trials"));
    }
    let mean = |f: &dyn Fn(&MetricReport) -> f64| parts.iter().map(|r| f(r) * r.trials as f64).sum::<f64>() / trials as f64;
    let mut modes = BTreeMap::new();
    for r in parts {
        for (k, v) in &r.modes {
            *modes.entry(k.clone()).or_insert(0) += v;
        }
    }
    Ok(MetricReport {
        trials,
        successes: parts.iter().map(|r| r.successes).sum(),
        ssr: mean(&|r| r.ssr),
        eta: mean(&|r| r.eta),
        entropy: mean(&|r| r.entropy),
        ssr_goal: if parts.iter().all(|r| r.ssr_goal.is_some()) {
            Some(mean(&|r| r.ssr_goal.unwrap_or(0.0)))
        } else {
            None
        },
        modes,
        gt_modes: parts.iter().map(|r| r.gt_modes).max().unwrap_or(0),
    })
}

/// One report row per (tier, category, policy).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub tier: Tier,
    pub category: Category,
    pub policy: PolicyKind,
    pub metrics: MetricReport,
}

/// Groups a log by (tier, category, policy), computing metrics per object
/// state and averaging them by trial count.
pub fn report_rows(log: &[Trial], objects: &[EvalObject], over_all: bool) -> Result<Vec<ReportRow>> {
    let mut groups: BTreeMap<(Tier, Category, PolicyKind), BTreeMap<usize, Vec<TrialOutcome>>> = BTreeMap::new();
    for t in log {
        groups.entry((t.tier, t.category, t.policy)).or_default().entry(t.object).or_default().push(t.outcome);
    }
    groups
        .into_iter()
        .map(|((tier, category, policy), per_object)| {
            let parts = per_object
                .iter()
                .map(|(&k, outs)| report(outs, enumerate_gt_modes(&objects[k].object).len(), over_all))
                .collect::<Result<Vec<_>>>()?;
            Ok(ReportRow { tier, category, policy, metrics: aggregate(&parts)? })
        })
        .collect()
}

pub const REPORT_HEADER: &str = "tier,category,policy,trials,successes,ssr,eta,entropy,ssr_goal";

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut s = String::from(REPORT_HEADER);
    s.push('\n');
    for r in rows {
        let m = &r.metrics;
        let goal = m.ssr_goal.map(|g| format!("{g:.6}")).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.6},{:.6},{:.6},{}",
            r.tier.name(),
            r.category,
            r.policy.name(),
            m.trials,
            m.successes,
            m.ssr,
            m.eta,
            m.entropy,
            goal
        );
    }
    s
}

/// Point-score heatmap over a camera image: background in gray by depth,
/// scored cloud pixels from blue (0) to red (1).
pub fn score_heatmap(depth: &DepthImage<f64>, pixels: &[usize], scores: &[f32]) -> Vec<[u8; 3]> {
    let (lo, hi) = depth
        .data
        .iter()
        .filter(|&&d| d > 0.0)
        .fold((f64::INFINITY, 0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    let mut rgb: Vec<[u8; 3]> = depth
        .data
        .iter()
        .map(|&d| {
            if d <= 0.0 {
                [0, 0, 0]
            } else {
                let t = if hi > lo { (d - lo) / (hi - lo) } else { 0.0 };
                let g = (200.0 - 120.0 * t) as u8;
                [g, g, g]
            }
        })
        .collect();
    let (smin, smax) = scores.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &s| (a.min(s), b.max(s)));
    for (&px, &s) in pixels.iter().zip(scores) {
        let t = if smax > smin { (s - smin) / (smax - smin) } else { 0.5 };
        rgb[px] = [(255.0 * t) as u8, 0, (255.0 * (1.0 - t)) as u8];
    }
    rgb
}

/// Point scores for every cloud pixel of `camera` under one prior latent.
pub fn scene_scores<R: Rng + ?Sized>(
    model: &InteractionModel,
    obj: &EvalObject,
    camera: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<f32>)> {
    let feat = need(obj.feature.as_ref(), "scene features")?;
    let z = crate::model::sample_prior(model.latent(), rng);
    let cloud = &obj.obs.clouds[camera];
    let pixels = cloud.iter().map(|&(px, _)| px).collect();
    let feats: Vec<f32> = cloud.iter().flat_map(|&(_, p)| model.local_feature(feat, p)).collect();
    Ok((pixels, model.point_scores(&feats, &z, cloud.len())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::Direction::*;

    fn ok(joint: usize, dir: Direction) -> TrialOutcome {
        TrialOutcome::new(true, Some(ModeId::new(joint, dir)))
    }

    #[test]
    fn split_over_two_modes_is_uniform() {
        let mut log = vec![TrialOutcome::new(false, None); 10];
        log.extend(std::iter::repeat_n(ok(0, Increase), 5));
        log.extend(std::iter::repeat_n(ok(1, Increase), 5));
        assert_eq!(metric_ssr(&log).unwrap(), 0.5);
        assert!((metric_modes_ratio(&log, 2).unwrap() - 0.5).abs() < 1e-12);
        assert!((metric_norm_entropy(&log, 2, false).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_logs_and_missing_goals_are_rejected() {
        assert!(metric_ssr(&[]).is_err());
        assert!(metric_ssr_goal(&[TrialOutcome::new(true, None)]).is_err());
    }
}
