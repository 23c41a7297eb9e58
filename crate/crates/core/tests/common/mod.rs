//! Small synthetic models and training sets shared by the model tests.

use articulate::config::{ModelConfig, TrainConfig};
use articulate::datagen::{random_direction, random_rotation};
use articulate::geom::Vec3;
use articulate::kinematics::ActionPrimitive;
use articulate::model::{InteractionModel, TrainingRecord, TrainingSet};
use articulate::perception::{project_volume, PlaneConfig};
use articulate::render::{GridConfig, TsdfVolume};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EMBED: usize = 4;

pub fn tiny(seed: u64) -> InteractionModel {
    let cfg = ModelConfig { latent: 2, width: 16, planes: PlaneConfig { channels: 2, resolution: 4 } };
    InteractionModel::new(&cfg, EMBED, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Two scenes over a blank volume. Acting at `x > 0.1` moves the first
/// embedding axis, at `x < -0.2` the second; anything else fails.
pub fn synthetic_set(records: usize, seed: u64) -> TrainingSet {
    let vol = TsdfVolume::<f32>::new(&GridConfig::cube(Vec3::new(0.0, 0.0, 0.0), 1.2, 8, 4.0)).unwrap();
    let planes = vec![project_volume(&vol, 4).unwrap(); 2];
    let e0 = vec![vec![vec![0.0f32; EMBED]]; 2];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = TrainingSet { planes, e0, records: Vec::new(), by_scene: vec![Vec::new(); 2] };
    for i in 0..records {
        let scene = i % 2;
        let p = Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
        let a = ActionPrimitive { point: p, rot: random_rotation(&mut rng), dir: random_direction(&mut rng) };
        let mut e1 = vec![0.0f32; EMBED];
        let label = if p.x > 0.1 {
            e1[0] = 1.0;
            true
        } else if p.x < -0.2 {
            e1[1] = 1.0;
            true
        } else {
            false
        };
        let action = a.to_vec().map(|v| v as f32);
        set.by_scene[scene].push(set.records.len());
        set.records.push(TrainingRecord { scene, camera: 0, action, e1, label });
    }
    set
}

pub fn train_cfg(steps: usize) -> TrainConfig {
    TrainConfig { steps, lr: 3e-3, records_per_scene: 8, scenes_per_batch: 2, point_samples: 8, ..TrainConfig::default() }
}
