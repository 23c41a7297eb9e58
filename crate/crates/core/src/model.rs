//! Generative interaction model: a conditional VAE over effect embeddings
//! whose latent selects an interaction mode, plus three mode-conditioned
//! heads over local tri-plane features.
//!
//! * score head: `v ⊕ z ⊕ a -> logit` (success of a full action)
//! * point head: `v ⊕ z -> logit` (is this a good point to interact at)
//! * policy head: `v ⊕ z ⊕ p -> (R raw, F raw)`

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use tensor::container::Container;
use tensor::nn::{bce_with_logits, matrix, Mlp};
use tensor::{Adam, Graph, ParamStore, Var};

use crate::config::{ModelConfig, TrainConfig};
use crate::datagen::{random_direction, random_rotation};
use crate::dataset::Dataset;
use crate::geom::{Quat, Vec3};
use crate::kinematics::{ActionPrimitive, ACTION_DIM};
use crate::perception::{project_volume, query_local_feature, PlaneInput, TriPlaneEncoder, TriPlaneFeature};
use crate::{rng, Error, Result};

/// Allowed deviation of a quaternion norm from 1 in [`loss_action`].
pub const UNIT_TOLERANCE: f64 = 1e-4;

pub const SECTION_TRI_PLANE: &str = "tri_plane";
pub const SECTION_CVAE: &str = "cvae";
pub const SECTION_HEADS: &str = "heads";
pub const SECTION_GOAL: &str = "goal_selector";
/// Name prefix of the goal selector's parameters.
pub const GOAL_PREFIX: &str = "goal_selector.";

/// Closed-form `KL(N(mu, sigma^2) || N(0, I))`.
pub fn kl_divergence(mu: &[f32], sigma: &[f32]) -> f32 {
    mu.iter()
        .zip(sigma)
        .map(|(&m, &s)| 0.5 * (m * m + s * s - 1.0 - (s * s).ln()))
        .sum()
}

/// `|e1_hat - e1|^2 + beta * KL` for one sample.
pub fn loss_cvae(e1_hat: &[f32], e1: &[f32], mu: &[f32], sigma: &[f32], beta: f32) -> f32 {
    let rec: f32 = e1_hat.iter().zip(e1).map(|(a, b)| (a - b) * (a - b)).sum();
    rec + beta * kl_divergence(mu, sigma)
}

/// `|F - F_hat|^2 + (1 - |R . R_hat|)`; both orientations must be unit
/// quaternions.
pub fn loss_action(rot: Quat<f64>, dir: Vec3<f64>, rot_hat: Quat<f64>, dir_hat: Vec3<f64>) -> Result<f64> {
    if !rot.is_unit(UNIT_TOLERANCE) || !rot_hat.is_unit(UNIT_TOLERANCE) {
        return Err(Error::invalid("loss_action", "orientation is not a unit quaternion"));
    }
    let d = dir - dir_hat;
    Ok(d.dot(d) + (1.0 - rot.dot(rot_hat).abs()))
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

fn normal_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f32> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Samples the mode prior `N(0, I)`.
pub fn sample_prior<R: Rng + ?Sized>(latent: usize, rng: &mut R) -> Vec<f32> {
    normal_vec(latent, rng)
}

/// Output of a tape-free mode-selector pass.
#[derive(Clone, Debug, PartialEq)]
pub struct CvaeOutput {
    pub z: Vec<f32>,
    pub e1_hat: Vec<f32>,
    pub mu: Vec<f32>,
    pub sigma: Vec<f32>,
}

/// A predicted action together with the point-score map it was drawn from.
#[derive(Clone, Debug)]
pub struct Inference {
    pub action: ActionPrimitive<f64>,
    pub z: Vec<f32>,
    pub candidates: Vec<Vec3<f64>>,
    pub scores: Vec<f32>,
    pub chosen: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InferConfig {
    pub candidates: usize,
    pub temperature: f64,
}

/// One row of the training loss curve.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: usize,
    pub total: f32,
    pub cvae: f32,
    pub score: f32,
    pub point: f32,
    pub rotation: f32,
    pub force: f32,
}

impl LossRow {
    pub const CSV_HEADER: &'static str = "step,total,cvae,score,point,rotation,force";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step, self.total, self.cvae, self.score, self.point, self.rotation, self.force
        )
    }

    fn components(&self) -> [f32; 6] {
        [self.total, self.cvae, self.score, self.point, self.rotation, self.force]
    }
}

pub fn loss_csv(rows: &[LossRow]) -> String {
    let mut s = String::from(LossRow::CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv());
        s.push('\n');
    }
    s
}

#[derive(Clone, Debug)]
pub struct InteractionModel {
    pub cfg: ModelConfig,
    pub embed_dim: usize,
    pub store: ParamStore<f32>,
    pub tri_plane: TriPlaneEncoder,
    pub mode_encoder: Mlp,
    pub mode_decoder: Mlp,
    pub score_head: Mlp,
    pub point_head: Mlp,
    pub policy_head: Mlp,
    pub goal_selector: Option<Mlp>,
}

impl InteractionModel {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, embed_dim: usize, rng: &mut R) -> Self {
        let mut store = ParamStore::new();
        let tri_plane = TriPlaneEncoder::new(&mut store, &cfg.planes, rng);
        let (w, l, e) = (cfg.width, cfg.latent, embed_dim);
        let v = 3 * cfg.planes.channels;
        let mode_encoder = Mlp::new(&mut store, "cvae.encoder", &[2 * e, w, w, 2 * l], rng);
        let mode_decoder = Mlp::new(&mut store, "cvae.decoder", &[l + e, w, w, e], rng);
        let score_head = Mlp::new(&mut store, "heads.score", &[v + l + ACTION_DIM, w, w, 1], rng);
        let point_head = Mlp::new(&mut store, "heads.point", &[v + l, w, w, 1], rng);
        let policy_head = Mlp::new(&mut store, "heads.policy", &[v + l + 3, w, w, 7], rng);
        Self {
            cfg: *cfg,
            embed_dim,
            store,
            tri_plane,
            mode_encoder,
            mode_decoder,
            score_head,
            point_head,
            policy_head,
            goal_selector: None,
        }
    }

    pub fn latent(&self) -> usize {
        self.cfg.latent
    }

    pub fn feature_dim(&self) -> usize {
        3 * self.cfg.planes.channels
    }

    /// Adds a freshly initialized goal selector, replacing any existing one.
    pub fn add_goal_selector<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let (w, l, e) = (self.cfg.width, self.cfg.latent, self.embed_dim);
        let dims = [2 * e, w, w, l];
        match &self.goal_selector {
            None => self.goal_selector = Some(Mlp::new(&mut self.store, &format!("{GOAL_PREFIX}net"), &dims, rng)),
            Some(sel) => {
                let mut fresh = ParamStore::new();
                let init = Mlp::new(&mut fresh, &format!("{GOAL_PREFIX}net"), &dims, rng);
                for (old, new) in sel.param_ids().into_iter().zip(init.param_ids()) {
                    self.store.get_mut(old).value = fresh.get(new).value.clone();
                }
            }
        }
    }

    /// Tri-plane features of a fused volume.
    pub fn encode_scene(&self, input: &PlaneInput) -> Result<TriPlaneFeature> {
        self.tri_plane.encode_planes(&self.store, input)
    }

    pub fn local_feature(&self, feat: &TriPlaneFeature, p: Vec3<f64>) -> Vec<f32> {
        query_local_feature(feat, p.cast()).values
    }

    /// Mode selector with an explicit reparameterization noise `eta`.
    pub fn cvae_forward(&self, e0: &[f32], e1: &[f32], eta: &[f32]) -> CvaeOutput {
        let l = self.latent();
        let x: Vec<f32> = e0.iter().chain(e1).copied().collect();
        let h = self.mode_encoder.apply(&self.store, &x, 1);
        let mu = h[..l].to_vec();
        let sigma: Vec<f32> = h[l..].iter().map(|v| v.exp()).collect();
        let z: Vec<f32> = (0..l).map(|i| mu[i] + sigma[i] * eta[i]).collect();
        let d: Vec<f32> = z.iter().chain(e0).copied().collect();
        let e1_hat = self.mode_decoder.apply(&self.store, &d, 1);
        CvaeOutput { z, e1_hat, mu, sigma }
    }

    pub fn q_score(&self, v: &[f32], z: &[f32], action: &[f32; ACTION_DIM]) -> f32 {
        let x: Vec<f32> = v.iter().chain(z).chain(action).copied().collect();
        sigmoid(self.score_head.apply(&self.store, &x, 1)[0])
    }

    pub fn point_score(&self, v: &[f32], z: &[f32]) -> f32 {
        self.point_scores(v, z, 1)[0]
    }

    /// Point scores for `rows` stacked feature vectors under one latent.
    pub fn point_scores(&self, features: &[f32], z: &[f32], rows: usize) -> Vec<f32> {
        let dv = features.len() / rows.max(1);
        let mut x = Vec::with_capacity(rows * (dv + z.len()));
        for v in features.chunks(dv) {
            x.extend_from_slice(v);
            x.extend_from_slice(z);
        }
        self.point_head.apply(&self.store, &x, rows).into_iter().map(sigmoid).collect()
    }

    /// Orientation (unit, `w >= 0`) and direction (in `(-1, 1)^3`) at `p`.
    pub fn policy(&self, v: &[f32], z: &[f32], p: Vec3<f64>) -> (Quat<f64>, Vec3<f64>) {
        let x: Vec<f32> = v.iter().chain(z).copied().chain([p.x as f32, p.y as f32, p.z as f32]).collect();
        let out = self.policy_head.apply(&self.store, &x, 1);
        let o: Vec<f64> = out.iter().map(|&v| v as f64).collect();
        let raw = Quat::new(o[0], o[1], o[2], o[3]);
        let rot = if raw.dot(raw) > 1e-12 { raw.normalized().canonical() } else { Quat::new(1.0, 0.0, 0.0, 0.0) };
        (rot, Vec3::new(o[4].tanh(), o[5].tanh(), o[6].tanh()))
    }

    /// Max of the score head over `n` uniform orientation/direction draws
    /// at `p`. Used as a constant target for the point head.
    pub fn point_label<R: Rng + ?Sized>(&self, v: &[f32], z: &[f32], p: Vec3<f64>, n: usize, rng: &mut R) -> f32 {
        let rows = self.label_rows(v, z, p, n, rng);
        self.score_head.apply(&self.store, &rows, n).into_iter().map(sigmoid).fold(0.0, f32::max)
    }

    fn label_rows<R: Rng + ?Sized>(&self, v: &[f32], z: &[f32], p: Vec3<f64>, n: usize, rng: &mut R) -> Vec<f32> {
        let mut rows = Vec::with_capacity(n * (v.len() + z.len() + ACTION_DIM));
        for _ in 0..n {
            let a = ActionPrimitive { point: p, rot: random_rotation(rng), dir: random_direction(rng) };
            rows.extend_from_slice(v);
            rows.extend_from_slice(z);
            rows.extend(a.to_vec().iter().map(|&x| x as f32));
        }
        rows
    }

    /// Goal-conditioned latent; requires a goal selector.
    pub fn goal_latent(&self, e0: &[f32], goal: &[f32]) -> Result<Vec<f32>> {
        let sel = self
            .goal_selector
            .as_ref()
            .ok_or_else(|| Error::Data(format!("checkpoint has no `{SECTION_GOAL}` section")))?;
        let x: Vec<f32> = e0.iter().chain(goal).copied().collect();
        Ok(sel.apply(&self.store, &x, 1))
    }

    /// Samples an action for a scene: scores up to `cfg.candidates` cloud
    /// points under `z` (a prior draw when `None`), picks one by softmax at
    /// `cfg.temperature`, then asks the policy head for `(R, F)`.
    pub fn infer_action<R: Rng + ?Sized>(
        &self,
        feat: &TriPlaneFeature,
        cloud: &[Vec3<f64>],
        z: Option<&[f32]>,
        cfg: &InferConfig,
        rng: &mut R,
    ) -> Result<Inference> {
        if cloud.is_empty() {
            return Err(Error::invalid("infer_action", "empty point cloud"));
        }
        if cfg.candidates == 0 {
            return Err(Error::invalid("infer_action", "no candidate points requested"));
        }
        let z = match z {
            Some(z) => z.to_vec(),
            None => sample_prior(self.latent(), rng),
        };
        let candidates: Vec<Vec3<f64>> = if cloud.len() > cfg.candidates {
            let mut idx = sample_indices(rng, cloud.len(), cfg.candidates).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| cloud[i]).collect()
        } else {
            cloud.to_vec()
        };
        let feats: Vec<f32> = candidates.iter().flat_map(|&p| self.local_feature(feat, p)).collect();
        let scores = self.point_scores(&feats, &z, candidates.len());
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Numeric("non-finite point score".into()));
        }
        let chosen = softmax_pick(&scores, cfg.temperature, rng);
        let p = candidates[chosen];
        let dv = self.feature_dim();
        let (rot, dir) = self.policy(&feats[chosen * dv..(chosen + 1) * dv], &z, p);
        Ok(Inference { action: ActionPrimitive { point: p, rot, dir }, z, candidates, scores, chosen })
    }

    /// Checkpoint sections for every trained network plus the model shape.
    pub fn save(&self, c: &mut Container) -> Result<()> {
        let meta = ModelMeta { embed_dim: self.embed_dim, model: self.cfg };
        let text = toml::to_string(&meta).map_err(|e| Error::Data(format!("model meta: {e}")))?;
        c.push_text("model/meta", &text)?;
        c.put_params(SECTION_TRI_PLANE, &self.store, "tri_plane.")?;
        c.put_params(SECTION_CVAE, &self.store, "cvae.")?;
        c.put_params(SECTION_HEADS, &self.store, "heads.")?;
        if self.goal_selector.is_some() {
            c.put_params(SECTION_GOAL, &self.store, GOAL_PREFIX)?;
        }
        Ok(())
    }

    pub fn load(c: &Container) -> Result<Self> {
        let text = c.text("model/meta").map_err(|_| Error::Data("missing checkpoint section `model`".into()))?;
        let meta: ModelMeta = toml::from_str(text).map_err(|e| Error::Data(format!("model meta: {e}")))?;
        let mut rng = rng::stream(0, "model/load", &[]);
        let mut m = Self::new(&meta.model, meta.embed_dim, &mut rng);
        for (section, prefix) in [(SECTION_TRI_PLANE, "tri_plane."), (SECTION_CVAE, "cvae."), (SECTION_HEADS, "heads.")] {
            c.get_params(section, &mut m.store, prefix).map_err(|e| Error::Data(e.to_string()))?;
        }
        if c.has_section(SECTION_GOAL) {
            m.add_goal_selector(&mut rng);
            c.get_params(SECTION_GOAL, &mut m.store, GOAL_PREFIX).map_err(|e| Error::Data(e.to_string()))?;
        }
        Ok(m)
    }

    /// Bit-level digest of every parameter outside `prefix`.
    pub fn checksum_excluding(&self, prefix: &str) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (_, p) in self.store.iter().filter(|(_, p)| !p.name.starts_with(prefix)) {
            for b in p.name.bytes().chain(p.value.data().iter().flat_map(|v| v.to_bits().to_le_bytes())) {
                h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    embed_dim: usize,
    model: ModelConfig,
}

/// Index drawn from `softmax(scores / temperature)`; a zero temperature
/// takes the first maximum.
pub fn softmax_pick<R: Rng + ?Sized>(scores: &[f32], temperature: f64, rng: &mut R) -> usize {
    let argmax = scores
        .iter()
        .enumerate()
        .fold(0, |best, (i, &s)| if s > scores[best] { i } else { best });
    if temperature <= 0.0 {
        return argmax;
    }
    let mx = scores[argmax] as f64;
    let w: Vec<f64> = scores.iter().map(|&s| ((s as f64 - mx) / temperature).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &wi) in w.iter().enumerate() {
        if u < wi {
            return i;
        }
        u -= wi;
    }
    argmax
}

/// Per-scene training inputs and per-record targets.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub planes: Vec<PlaneInput>,
    pub e0: Vec<Vec<Vec<f32>>>,
    pub records: Vec<TrainingRecord>,
    /// Record indices grouped by scene.
    pub by_scene: Vec<Vec<usize>>,
}

#[derive(Clone, Debug)]
pub struct TrainingRecord {
    pub scene: usize,
    pub camera: usize,
    pub action: [f32; ACTION_DIM],
    pub e1: Vec<f32>,
    pub label: bool,
}

impl TrainingSet {
    pub fn from_dataset(data: &Dataset, plane_resolution: usize) -> Result<Self> {
        if data.records.is_empty() {
            return Err(Error::Data("dataset has no records".into()));
        }
        let planes = data
            .entries
            .iter()
            .map(|e| project_volume(&e.tsdf, plane_resolution))
            .collect::<Result<Vec<_>>>()?;
        let e0 = data.entries.iter().map(|e| e.e0.clone()).collect();
        let mut by_scene = vec![Vec::new(); data.entries.len()];
        let records = data
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                by_scene[r.entry as usize].push(i);
                TrainingRecord {
                    scene: r.entry as usize,
                    camera: r.camera as usize,
                    action: r.action,
                    e1: r.e1.clone(),
                    label: r.label,
                }
            })
            .collect();
        Ok(Self { planes, e0, records, by_scene })
    }

    /// Labelled-success record indices grouped by scene.
    pub fn success_pool(&self) -> Vec<Vec<usize>> {
        self.by_scene
            .iter()
            .map(|recs| recs.iter().copied().filter(|&i| self.records[i].label).collect())
            .collect()
    }

    pub fn successes(&self) -> usize {
        self.records.iter().filter(|r| r.label).count()
    }

    fn scenes_with_records(&self) -> Vec<usize> {
        (0..self.by_scene.len()).filter(|&s| !self.by_scene[s].is_empty()).collect()
    }
}

/// Which latent feeds the heads during a step.
#[derive(Clone, Copy, PartialEq, Eq)]
pub(crate) enum LatentSource {
    Posterior,
    Goal,
}

struct StepLosses {
    total: Var,
    row: LossRow,
}

fn point(a: &[f32; ACTION_DIM]) -> Vec3<f64> {
    Vec3::new(a[0] as f64, a[1] as f64, a[2] as f64)
}

/// Per-row `||e1_hat - e1||^2 + beta * KL(N(mu, sigma^2) || N(0, I))`
/// with `sigma = exp(log_sigma)`.
pub fn cvae_rows(g: &mut Graph<f32>, e1_hat: Var, e1: Var, mu: Var, log_sigma: Var, beta: f32) -> Result<Var> {
    let rec = sq_row_sum(g, e1_hat, e1)?;
    let sigma = g.exp(log_sigma);
    // KL = 0.5 * sum(mu^2 + sigma^2 - 1 - 2 log sigma)
    let mu2 = g.mul(mu, mu)?;
    let s2 = g.mul(sigma, sigma)?;
    let a = g.add(mu2, s2)?;
    let two_log = g.scale(log_sigma, 2.0);
    let a = g.sub(a, two_log)?;
    let a = g.add_scalar(a, -1.0);
    let kl = g.row_sum(a)?;
    let kl = g.scale(kl, 0.5 * beta);
    Ok(g.add(rec, kl)?)
}

/// Batch-mean orientation and direction losses from raw policy outputs
/// (4 quaternion logits, then 3 direction logits) against unit quaternion
/// and direction targets. The orientation term is `1 - |<r, r_t>|`.
pub fn action_losses(g: &mut Graph<f32>, raw: Var, r_t: Var, f_t: Var) -> Result<(Var, Var)> {
    let r_raw = g.slice(raw, 1, 0, 4)?;
    let r = g.normalize_rows(r_raw)?;
    let f_raw = g.slice(raw, 1, 4, 3)?;
    let f = g.tanh(f_raw);
    let fsq = sq_row_sum(g, f, f_t)?;
    let force = g.mean(fsq);
    let prod = g.mul(r, r_t)?;
    let dot = g.row_sum(prod)?;
    let adot = g.abs(dot);
    let m = g.mean(adot);
    let neg = g.scale(m, -1.0);
    let rot = g.add_scalar(neg, 1.0);
    Ok((rot, force))
}

/// An outcome reaches a goal effect when it lies within this fraction of
/// the goal's effect size from the goal.
pub const GOAL_MATCH_RATIO: f32 = 0.5;

fn dist(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f32>().sqrt()
}

/// True when final embedding `e1` reaches the effect `e0 -> goal`.
pub fn reaches_goal(e0: &[f32], e1: &[f32], goal: &[f32]) -> bool {
    dist(e1, goal) < GOAL_MATCH_RATIO * dist(goal, e0)
}

/// For each row, the latent row it is scored under (`b + i` selects the
/// prior draw for row `i` when its group has no success) and whether it
/// hits that latent's goal.
fn pair_with_goals<R: Rng + ?Sized>(
    batch: &[(usize, Vec<usize>)],
    rows: &[&TrainingRecord],
    e0: &[Vec<Vec<f32>>],
    rng: &mut R,
) -> (Vec<usize>, Vec<bool>) {
    let b = rows.len();
    let (mut src, mut hits) = (Vec::with_capacity(b), Vec::with_capacity(b));
    let mut start = 0;
    for (_, recs) in batch {
        let group: Vec<usize> = (start..start + recs.len()).filter(|&i| rows[i].label).collect();
        for i in start..start + recs.len() {
            if group.is_empty() {
                src.push(b + i);
                hits.push(false);
                continue;
            }
            let j = group[rng.random_range(0..group.len())];
            let r = rows[i];
            src.push(j);
            hits.push(r.label && (i == j || reaches_goal(&e0[r.scene][r.camera], &r.e1, &rows[j].e1)));
        }
        start += recs.len();
    }
    (src, hits)
}

fn sq_row_sum(g: &mut Graph<f32>, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let sq = g.mul(d, d)?;
    Ok(g.row_sum(sq)?)
}

impl InteractionModel {
    /// Builds the loss graph for one batch of `(scene, records)` groups.
    fn step_graph<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<f32>,
        set: &TrainingSet,
        batch: &[(usize, Vec<usize>)],
        cfg: &TrainConfig,
        source: LatentSource,
        rng: &mut R,
    ) -> Result<StepLosses> {
        let (l, e) = (self.latent(), self.embed_dim);
        let mut feats = Vec::with_capacity(batch.len());
        let mut rows: Vec<&TrainingRecord> = Vec::new();
        for (scene, recs) in batch {
            let planes = self.tri_plane.encode_graph(g, &self.store, &set.planes[*scene])?;
            let extent = set.planes[*scene].extent;
            let coords: Vec<f32> = recs
                .iter()
                .flat_map(|&i| extent.coords(point(&set.records[i].action).cast()).0)
                .collect();
            feats.push(g.bilinear(planes, coords)?);
            rows.extend(recs.iter().map(|&i| &set.records[i]));
        }
        let b = rows.len();
        let v = g.concat(&feats, 0)?;
        let e0_data: Vec<f32> = rows.iter().flat_map(|r| set.e0[r.scene][r.camera].iter().copied()).collect();
        let e1_data: Vec<f32> = rows.iter().flat_map(|r| r.e1.iter().copied()).collect();
        let e0 = matrix(g, e0_data, b, e)?;
        let e1 = matrix(g, e1_data, b, e)?;
        let pair = g.concat(&[e0, e1], 1)?;

        let mut row = LossRow::default();
        let mut terms = Vec::new();
        let ok: Vec<usize> = (0..b).filter(|&i| rows[i].label).collect();
        let own = match source {
            LatentSource::Posterior => {
                let h = self.mode_encoder.forward(g, &self.store, pair)?;
                let mu = g.slice(h, 1, 0, l)?;
                let log_sigma = g.slice(h, 1, l, l)?;
                let sigma = g.exp(log_sigma);
                let eta = matrix(g, normal_vec(b * l, rng), b, l)?;
                let noise = g.mul(sigma, eta)?;
                let z = g.add(mu, noise)?;
                if !ok.is_empty() {
                    let dec_in = g.concat(&[z, e0], 1)?;
                    let e1_hat = self.mode_decoder.forward(g, &self.store, dec_in)?;
                    let per = cvae_rows(g, e1_hat, e1, mu, log_sigma, cfg.beta as f32)?;
                    let per = g.gather_rows(per, &ok)?;
                    let cvae = g.mean(per);
                    row.cvae = g.value(cvae).item();
                    terms.push(cvae);
                }
                z
            }
            LatentSource::Goal => {
                let sel = self.goal_selector.as_ref().ok_or_else(|| Error::invalid("finetune_goal", "no goal selector"))?;
                sel.forward(g, &self.store, pair)?
            }
        };
        // Every row is scored under the latent of a success from its own
        // group, and counts as a hit only if its outcome reaches that
        // success's effect. A record's own latent would encode its outcome
        // and leak the label into the heads.
        let (src, hits) = pair_with_goals(batch, &rows, &set.e0, rng);
        let prior = matrix(g, normal_vec(b * l, rng), b, l)?;
        let pooled = g.concat(&[own, prior], 0)?;
        let z = g.gather_rows(pooled, &src)?;

        let labels: Vec<f32> = hits.iter().map(|&h| h as u8 as f32).collect();
        let actions: Vec<f32> = rows.iter().flat_map(|r| r.action).collect();
        let a = matrix(g, actions, b, ACTION_DIM)?;
        let q_in = g.concat(&[v, z, a], 1)?;
        let q_logit = self.score_head.forward(g, &self.store, q_in)?;
        let y = matrix(g, labels, b, 1)?;
        let score = bce_with_logits(g, q_logit, y)?;
        row.score = g.value(score).item();
        terms.push(score);

        // Point targets from the current score head, held constant.
        let dv = self.feature_dim();
        let v_vals = g.value(v).data().to_vec();
        let z_vals = g.value(z).data().to_vec();
        let targets: Vec<f32> = (0..b)
            .map(|i| {
                let vi = &v_vals[i * dv..(i + 1) * dv];
                let zi = &z_vals[i * l..(i + 1) * l];
                self.point_label(vi, zi, point(&rows[i].action), cfg.point_samples, rng)
            })
            .collect();
        let qp_in = g.concat(&[v, z], 1)?;
        let qp_logit = self.point_head.forward(g, &self.store, qp_in)?;
        let yp = matrix(g, targets, b, 1)?;
        let pt = bce_with_logits(g, qp_logit, yp)?;
        row.point = g.value(pt).item();
        terms.push(pt);

        let ok: Vec<usize> = (0..b).filter(|&i| hits[i]).collect();
        if !ok.is_empty() {
            let k = ok.len();
            let vs = g.gather_rows(v, &ok)?;
            let zs = g.gather_rows(z, &ok)?;
            let ps: Vec<f32> = ok.iter().flat_map(|&i| rows[i].action[..3].to_vec()).collect();
            let ps = matrix(g, ps, k, 3)?;
            let pi_in = g.concat(&[vs, zs, ps], 1)?;
            let out = self.policy_head.forward(g, &self.store, pi_in)?;
            let r_t: Vec<f32> = ok.iter().flat_map(|&i| rows[i].action[3..7].to_vec()).collect();
            let f_t: Vec<f32> = ok.iter().flat_map(|&i| rows[i].action[7..].to_vec()).collect();
            let r_t = matrix(g, r_t, k, 4)?;
            let f_t = matrix(g, f_t, k, 3)?;
            let (rot, force) = action_losses(g, out, r_t, f_t)?;
            row.force = g.value(force).item();
            row.rotation = g.value(rot).item();
            terms.push(force);
            terms.push(rot);
        }
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = g.add(total, t)?;
        }
        row.total = g.value(total).item();
        Ok(StepLosses { total, row })
    }

    /// Groups of records sharing a scene and a camera, so that their final
    /// embeddings are comparable.
    pub(crate) fn sample_batch<R: Rng + ?Sized>(
        set: &TrainingSet,
        pool: &[Vec<usize>],
        cfg: &TrainConfig,
        rng: &mut R,
    ) -> Vec<(usize, Vec<usize>)> {
        let scenes: Vec<usize> = (0..pool.len()).filter(|&s| !pool[s].is_empty()).collect();
        (0..cfg.scenes_per_batch)
            .map(|_| {
                let s = scenes[rng.random_range(0..scenes.len())];
                let camera = set.records[pool[s][rng.random_range(0..pool[s].len())]].camera;
                let view: Vec<usize> = pool[s].iter().copied().filter(|&i| set.records[i].camera == camera).collect();
                let recs = (0..cfg.records_per_scene).map(|_| view[rng.random_range(0..view.len())]).collect();
                (s, recs)
            })
            .collect()
    }

    pub(crate) fn run_steps(
        &mut self,
        set: &TrainingSet,
        pool: &[Vec<usize>],
        cfg: &TrainConfig,
        steps: usize,
        source: LatentSource,
        stream: &str,
        seed: u64,
    ) -> Result<Vec<LossRow>> {
        let adam = Adam::new(cfg.lr);
        let mut curve = Vec::with_capacity(steps);
        for step in 0..steps {
            let mut r = rng::stream(seed, stream, &[step as u64]);
            let batch = Self::sample_batch(set, pool, cfg, &mut r);
            let mut g = Graph::new();
            let losses = self.step_graph(&mut g, set, &batch, cfg, source, &mut r)?;
            let mut row = losses.row;
            row.step = step;
            if row.components().iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite loss at step {step}: {row:?}")));
            }
            let grads = g.backward(losses.total)?;
            self.store.zero_grad();
            self.store.accumulate(&g, &grads);
            adam.step(&mut self.store)?;
            if step % 100 == 0 || step + 1 == steps {
                log::debug!("{stream} step {step}: {}", row.csv());
            }
            curve.push(row);
        }
        Ok(curve)
    }

    /// Joint training of the tri-plane encoder, mode selector and heads.
    pub fn train(&mut self, set: &TrainingSet, cfg: &TrainConfig, seed: u64) -> Result<Vec<LossRow>> {
        if set.scenes_with_records().is_empty() {
            return Err(Error::Data("dataset has no records".into()));
        }
        if set.successes() == 0 {
            log::warn!("no labelled successes: the policy head receives no training signal");
        }
        self.store.set_frozen("", false);
        if self.goal_selector.is_some() {
            self.store.set_frozen(GOAL_PREFIX, true);
        }
        self.run_steps(set, &set.by_scene, cfg, cfg.steps, LatentSource::Posterior, "train/step", seed)
    }

    /// Mean losses over fixed evaluation batches, without updating.
    pub fn evaluate_losses(&self, set: &TrainingSet, cfg: &TrainConfig, goal: bool, batches: usize, seed: u64) -> Result<LossRow> {
        let pool: Vec<Vec<usize>> = if goal {
            set.success_pool()
        } else {
            set.by_scene.clone()
        };
        let source = if goal { LatentSource::Goal } else { LatentSource::Posterior };
        let mut acc = LossRow::default();
        for k in 0..batches {
            let mut r = rng::stream(seed, "train/probe", &[k as u64]);
            let batch = Self::sample_batch(set, &pool, cfg, &mut r);
            let mut g = Graph::new();
            let row = self.step_graph(&mut g, set, &batch, cfg, source, &mut r)?.row;
            acc.total += row.total / batches as f32;
            acc.cvae += row.cvae / batches as f32;
            acc.score += row.score / batches as f32;
            acc.point += row.point / batches as f32;
            acc.rotation += row.rotation / batches as f32;
            acc.force += row.force / batches as f32;
        }
        Ok(acc)
    }
}
