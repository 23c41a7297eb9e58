//! Self-supervised interaction collection: random and mixture-guided
//! actions, effect labels from depth embeddings, per-scene mixture refits.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geom::{Quat, Vec3};
use crate::gmm::{fit_gmm, Gmm};
use crate::kinematics::{
    classify_outcome, execute_in_scene, ActionPrimitive, ArticulatedObject, ContactParams, ModeId, Scene,
};
use crate::parallel::par_map;
use crate::perception::DepthAutoencoder;
use crate::render::{
    default_views, depth_to_pointcloud_indexed, render_scene, tsdf_fuse, Camera, CameraConfig, DepthImage,
    GridConfig, TsdfVolume,
};
use crate::{rng, Error, Real, Result};

/// Uniform rotation as a unit quaternion with non-negative scalar part.
pub fn random_rotation<T: Real, R: Rng + ?Sized>(rng: &mut R) -> Quat<T> {
    loop {
        let v: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return Quat::new(T::c(v[0] / n), T::c(v[1] / n), T::c(v[2] / n), T::c(v[3] / n)).canonical();
        }
    }
}

/// Uniform direction in `[-1, 1]^3` with norm at least 0.1.
pub fn random_direction<T: Real, R: Rng + ?Sized>(rng: &mut R) -> Vec3<T> {
    loop {
        let f: Vec3<f64> = Vec3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        );
        if f.norm() >= 0.1 {
            return f.cast();
        }
    }
}

/// Cloud point with Gaussian jitter, uniform rotation, uniform direction.
pub fn random_policy<T: Real, R: Rng + ?Sized>(
    cloud: &[Vec3<T>],
    jitter: f64,
    rng: &mut R,
) -> Result<ActionPrimitive<T>> {
    if cloud.is_empty() {
        return Err(Error::invalid("random_policy", "empty point cloud"));
    }
    let base = cloud[rng.random_range(0..cloud.len())];
    let noise = Normal::new(0.0, jitter).map_err(|e| Error::invalid("random_policy", e.to_string()))?;
    let point = base + Vec3::new(T::c(noise.sample(rng)), T::c(noise.sample(rng)), T::c(noise.sample(rng)));
    Ok(ActionPrimitive { point, rot: random_rotation(rng), dir: random_direction(rng) })
}

/// Effect vector `e1 - e0` and the label `|effect| >= lambda`.
pub fn label_effect(e0: &[f32], e1: &[f32], lambda: f32) -> (Vec<f32>, bool) {
    assert_eq!(e0.len(), e1.len(), "embedding dimensions differ");
    let tau: Vec<f32> = e1.iter().zip(e0).map(|(a, b)| a - b).collect();
    let norm = tau.iter().map(|v| v * v).sum::<f32>().sqrt();
    (tau, norm >= lambda)
}

pub fn effect_norm(e0: &[f32], e1: &[f32]) -> f32 {
    e1.iter().zip(e0).map(|(a, b)| (a - b) * (a - b)).sum::<f32>().sqrt()
}

/// Draw from a mixture over flattened actions; the rotation is renormalized
/// and the direction clamped to the unit cube.
pub fn sample_gmm<T: Real, R: Rng + ?Sized>(gmm: &Gmm<T>, rng: &mut R) -> ActionPrimitive<T> {
    loop {
        let (_, x) = gmm.sample(rng);
        let mut a = ActionPrimitive::from_slice(&x);
        let qn = a.rot.norm();
        let dir = a.dir.to_array().map(|c| c.max(-T::one()).min(T::one()));
        a.dir = Vec3::new(dir[0], dir[1], dir[2]);
        if qn > T::c(1e-9) && a.dir.norm() > T::c(1e-9) {
            a.rot = a.rot.normalized().canonical();
            return a;
        }
    }
}

/// Linear-interpolated percentile (`q` in [0, 100]) of a non-empty sample.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (q / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (i, t) = (pos.floor() as usize, pos.fract());
    Some(if i + 1 < v.len() { v[i] * (1.0 - t) + v[i + 1] * t } else { v[i] })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensingConfig {
    pub camera: CameraConfig,
    pub grid_side: f64,
    pub grid_voxels: usize,
    pub trunc_voxels: f64,
}

impl Default for SensingConfig {
    fn default() -> Self {
        Self { camera: CameraConfig::default(), grid_side: 1.2, grid_voxels: 48, trunc_voxels: 4.0 }
    }
}

impl SensingConfig {
    pub fn grid(&self, center: Vec3<f64>) -> GridConfig<f64> {
        GridConfig::cube(center, self.grid_side, self.grid_voxels, self.trunc_voxels)
    }
}

/// Depth views of an object from the default camera arc.
#[derive(Clone, Debug)]
pub struct Observation {
    pub cameras: Vec<Camera<f64>>,
    pub depths: Vec<DepthImage<f64>>,
    /// Back-projected hits with pixel indices, per camera.
    pub clouds: Vec<Vec<(usize, Vec3<f64>)>>,
}

pub fn observe(obj: &ArticulatedObject<f64>, sensing: &SensingConfig) -> Result<Observation> {
    let cameras = default_views(obj.centroid(), &sensing.camera)?;
    let scene = Scene::new(obj);
    let depths: Vec<_> = cameras.iter().map(|c| render_scene(&scene, c)).collect();
    let clouds = depths.iter().zip(&cameras).map(|(d, c)| depth_to_pointcloud_indexed(d, c)).collect();
    Ok(Observation { cameras, depths, clouds })
}

impl Observation {
    /// Multi-view fused TSDF in network precision.
    pub fn fused_tsdf(&self, grid: &GridConfig<f64>) -> Result<TsdfVolume<f32>> {
        let views: Vec<_> = self.depths.iter().zip(&self.cameras).collect();
        Ok(cast_volume(&tsdf_fuse(&views, grid)?))
    }

    pub fn cloud_points(&self, camera: usize) -> Vec<Vec3<f64>> {
        self.clouds[camera].iter().map(|&(_, p)| p).collect()
    }
}

pub fn cast_volume(v: &TsdfVolume<f64>) -> TsdfVolume<f32> {
    TsdfVolume {
        origin: v.origin.cast(),
        voxel_size: v.voxel_size as f32,
        dims: v.dims,
        trunc: v.trunc as f32,
        tsdf: v.tsdf.iter().map(|&x| x as f32).collect(),
        weight: v.weight.iter().map(|&x| x as f32).collect(),
    }
}

/// One (instance, initial state) of the collection roster.
#[derive(Clone, Debug)]
pub struct SceneEntry {
    pub object: ArticulatedObject<f64>,
    pub obs: Observation,
    /// Initial-state embedding per camera.
    pub e0: Vec<Vec<f32>>,
    pub tsdf: TsdfVolume<f32>,
}

pub fn prepare_entry(
    object: ArticulatedObject<f64>,
    sensing: &SensingConfig,
    ae: &DepthAutoencoder,
) -> Result<SceneEntry> {
    let obs = observe(&object, sensing)?;
    let tsdf = obs.fused_tsdf(&sensing.grid(object.centroid()))?;
    let d32: Vec<DepthImage<f32>> = obs.depths.iter().map(DepthImage::cast).collect();
    let e0 = ae.embed_batch(&d32.iter().collect::<Vec<_>>())?;
    Ok(SceneEntry { object, obs, e0, tsdf })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollectConfig {
    pub rounds: usize,
    pub episodes_per_round: usize,
    pub epsilon: f64,
    pub components: usize,
    /// Percentile of the nonzero round-0 effect norms used as threshold.
    pub lambda_percentile: f64,
    /// Fixed threshold overriding the percentile rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub jitter: f64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            rounds: 4,
            episodes_per_round: 400,
            epsilon: 0.3,
            components: 6,
            lambda_percentile: 80.0,
            lambda: None,
            jitter: 0.005,
        }
    }
}

impl CollectConfig {
    /// Random and mixture episode counts for a round.
    pub fn split(&self, round: usize) -> (usize, usize) {
        let m = self.episodes_per_round;
        if round == 0 {
            return (m, 0);
        }
        let random = ((self.epsilon * m as f64).round() as usize).min(m);
        (random, m - random)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Random,
    Mixture,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub entry: u32,
    pub camera: u32,
    pub round: u32,
    pub source: Source,
    pub action: [f32; 10],
    pub e1: Vec<f32>,
    pub effect: f32,
    pub label: bool,
    pub gt_success: bool,
    pub gt_mode: Option<ModeId>,
    /// Final depth, present only when the state changed.
    pub d1: Option<DepthImage<f32>>,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub random: usize,
    pub mixture: usize,
    pub labelled_successes: usize,
    pub gt_successes: usize,
    /// Ground-truth successes per `entry:mode`.
    pub modes: BTreeMap<String, usize>,
}

#[derive(Clone, Debug)]
pub struct Collection {
    pub lambda: f32,
    pub records: Vec<Record>,
    pub rounds: Vec<RoundSummary>,
}

struct Outcome {
    camera: usize,
    source: Source,
    action: ActionPrimitive<f64>,
    gt_success: bool,
    gt_mode: Option<ModeId>,
    d1: Option<DepthImage<f32>>,
}

fn run_round(
    entry: &SceneEntry,
    scene: &Scene<f64>,
    gmm: Option<&Gmm<f64>>,
    cfg: &CollectConfig,
    contact: &ContactParams,
    seed: u64,
    path: [u64; 2],
) -> Result<Vec<Outcome>> {
    let (mut n_random, mut n_mix) = cfg.split(path[1] as usize);
    if gmm.is_none() {
        n_random += n_mix;
        n_mix = 0;
    }
    let cams = entry.obs.cameras.len();
    let clouds: Vec<Vec<Vec3<f64>>> = (0..cams).map(|c| entry.obs.cloud_points(c)).collect();
    let mut out = Vec::with_capacity(n_random + n_mix);
    for i in 0..n_random + n_mix {
        let mut r = rng::stream(seed, "data/episode", &[path[0], path[1], i as u64]);
        let camera = r.random_range(0..cams);
        let (source, action) = match gmm {
            Some(g) if i >= n_random => (Source::Mixture, sample_gmm(g, &mut r)),
            _ => (Source::Random, random_policy(&clouds[camera], cfg.jitter, &mut r)?),
        };
        let (after, _) = execute_in_scene(&entry.object, scene, &action, contact)?;
        let (gt_success, gt_mode) = classify_outcome(&entry.object, &after)?;
        let d1 = if after.joint_values() != entry.object.joint_values() {
            Some(render_scene(&Scene::new(&after), &entry.obs.cameras[camera]).cast())
        } else {
            None
        };
        out.push(Outcome { camera, source, action, gt_success, gt_mode, d1 });
    }
    Ok(out)
}

fn flat(a: &ActionPrimitive<f64>) -> [f32; 10] {
    a.to_vec().map(|v| v as f32)
}

/// Round 0 is all random; later rounds mix `epsilon * M` random episodes
/// with mixture draws fitted to the cumulative labelled successes of each
/// entry. The threshold comes from round 0 unless fixed in the config.
pub fn adaptive_collect(
    entries: &[SceneEntry],
    ae: &DepthAutoencoder,
    cfg: &CollectConfig,
    contact: &ContactParams,
    seed: u64,
    jobs: usize,
) -> Result<Collection> {
    if cfg.rounds == 0 || !(0.0..=1.0).contains(&cfg.epsilon) {
        return Err(Error::Config("rounds must be >= 1 and epsilon in [0, 1]".into()));
    }
    let scenes: Vec<Scene<f64>> = entries.iter().map(|e| Scene::new(&e.object)).collect();
    let mut gmms: Vec<Option<Gmm<f64>>> = vec![None; entries.len()];
    let mut successes: Vec<Vec<Vec<f64>>> = vec![Vec::new(); entries.len()];
    let mut records: Vec<Record> = Vec::new();
    let mut rounds = Vec::new();
    let mut lambda = cfg.lambda.map(|l| l as f32);
    for round in 0..cfg.rounds {
        let idx: Vec<usize> = (0..entries.len()).collect();
        let results = par_map(&idx, jobs, |_, &e| -> Result<Vec<Record>> {
            let entry = &entries[e];
            let outcomes = run_round(
                entry,
                &scenes[e],
                gmms[e].as_ref(),
                cfg,
                contact,
                seed,
                [e as u64, round as u64],
            )?;
            let changed: Vec<&DepthImage<f32>> = outcomes.iter().filter_map(|o| o.d1.as_ref()).collect();
            let mut embedded = Vec::with_capacity(changed.len());
            for chunk in changed.chunks(32) {
                embedded.extend(ae.embed_batch(chunk)?);
            }
            let mut embedded = embedded.into_iter();
            Ok(outcomes
                .into_iter()
                .map(|o| {
                    let e0 = &entry.e0[o.camera];
                    let e1 = if o.d1.is_some() { embedded.next().expect("one embedding per change") } else { e0.clone() };
                    Record {
                        entry: e as u32,
                        camera: o.camera as u32,
                        round: round as u32,
                        source: o.source,
                        action: flat(&o.action),
                        effect: effect_norm(e0, &e1),
                        e1,
                        label: false,
                        gt_success: o.gt_success,
                        gt_mode: o.gt_mode,
                        d1: o.d1,
                    }
                })
                .collect())
        });
        let mut batch = Vec::new();
        for r in results {
            batch.extend(r?);
        }
        let lam = *lambda.get_or_insert_with(|| {
            let nonzero: Vec<f64> = batch.iter().filter(|r| r.effect > 0.0).map(|r| r.effect as f64).collect();
            match percentile(&nonzero, cfg.lambda_percentile) {
                Some(v) => v as f32,
                None => {
                    log::warn!("no action changed any observation in round 0; nothing will be labelled a success");
                    f32::INFINITY
                }
            }
        });
        let mut summary = RoundSummary { round, ..Default::default() };
        for rec in &mut batch {
            rec.label = rec.effect >= lam;
            match rec.source {
                Source::Random => summary.random += 1,
                Source::Mixture => summary.mixture += 1,
            }
            if rec.label {
                summary.labelled_successes += 1;
                successes[rec.entry as usize].push(rec.action.iter().map(|&v| v as f64).collect());
            }
            if let Some(m) = rec.gt_mode {
                summary.gt_successes += 1;
                *summary.modes.entry(format!("{}:{}", rec.entry, m)).or_default() += 1;
            }
        }
        log::info!(
            "round {round}: {} random, {} mixture, {} labelled successes, {} true successes",
            summary.random,
            summary.mixture,
            summary.labelled_successes,
            summary.gt_successes
        );
        rounds.push(summary);
        records.extend(batch);
        if round + 1 < cfg.rounds {
            for (e, pts) in successes.iter().enumerate() {
                if !pts.is_empty() {
                    let mut r = rng::stream(seed, "data/gmm", &[e as u64, round as u64]);
                    gmms[e] = Some(fit_gmm(pts, cfg.components, &mut r)?.gmm);
                }
            }
        }
    }
    Ok(Collection { lambda: lambda.unwrap_or(f32::INFINITY), records, rounds })
}
