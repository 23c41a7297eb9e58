//! On-disk interaction dataset: a manifest, the frozen depth encoder, one
//! block per scene, and fixed-stride record tables.
//!
//! Record tables:
//!
//! ```text
//! records/meta    u32 [N, 8]      entry, camera, round, source, label,
//!                                 gt_success, gt_mode (MAX = none),
//!                                 d1 slot (MAX = none)
//! records/values  f32 [N, 11+E]   action (10), effect norm, e1 (E)
//! records/d1      u16 [K, H, W]   final depth in mm for changed episodes
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use tensor::container::{Container, Payload};

use crate::config::RosterItem;
use crate::datagen::{Collection, Record, RoundSummary, SceneEntry, Source};
use crate::io::depth_to_mm;
use crate::kinematics::{ArticulatedObject, Category, ModeId};
use crate::perception::DepthAutoencoder;
use crate::render::{DepthImage, TsdfVolume};
use crate::{Error, Result};

pub const DATASET_FORMAT: u32 = 1;
const META_COLS: usize = 8;
const NONE: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryInfo {
    pub category: Category,
    pub instance: u64,
    pub fractions: Vec<f64>,
}

impl EntryInfo {
    pub fn item(&self) -> RosterItem {
        RosterItem { category: self.category, instance: self.instance, fractions: self.fractions.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub seed: u64,
    pub lambda: f32,
    pub embed_dim: usize,
    pub image_width: usize,
    pub image_height: usize,
    pub cameras: usize,
    pub records: usize,
    pub labelled_successes: usize,
    pub gt_successes: usize,
    pub autoencoder_final_loss: f32,
    pub entries: Vec<EntryInfo>,
    pub rounds: Vec<RoundSummary>,
    /// Resolved run configuration, verbatim.
    pub config: String,
}

/// A collection scene as stored: the object, its initial views and
/// embeddings, and the fused volume.
#[derive(Clone, Debug)]
pub struct StoredEntry {
    pub object: ArticulatedObject<f64>,
    pub d0: Vec<DepthImage<f32>>,
    pub e0: Vec<Vec<f32>>,
    pub tsdf: TsdfVolume<f32>,
}

impl StoredEntry {
    pub fn from_scene(entry: &SceneEntry) -> Self {
        Self {
            object: entry.object.clone(),
            d0: entry.obs.depths.iter().map(|d| d.cast()).collect(),
            e0: entry.e0.clone(),
            tsdf: entry.tsdf.clone(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub ae: DepthAutoencoder,
    pub entries: Vec<StoredEntry>,
    pub records: Vec<Record>,
}

fn data_err(msg: impl Into<String>) -> Error {
    Error::Data(msg.into())
}

fn depth_mm(d: &DepthImage<f32>) -> impl Iterator<Item = u16> + '_ {
    d.data.iter().map(|&v| depth_to_mm(v))
}

fn depth_from_mm(w: usize, h: usize, mm: &[u16]) -> DepthImage<f32> {
    DepthImage { width: w, height: h, data: mm.iter().map(|&v| v as f32 / 1000.0).collect() }
}

impl Dataset {
    pub fn assemble(
        manifest: Manifest,
        ae: DepthAutoencoder,
        scenes: &[SceneEntry],
        collection: Collection,
    ) -> Self {
        let entries = scenes.iter().map(StoredEntry::from_scene).collect();
        Self { manifest, ae, entries, records: collection.records }
    }

    /// Indices of records with `label == true`.
    pub fn labelled(&self) -> Vec<usize> {
        (0..self.records.len()).filter(|&i| self.records[i].label).collect()
    }

    pub fn to_container(&self) -> Result<Container> {
        let m = &self.manifest;
        let mut c = Container::new();
        let text = toml::to_string(m).map_err(|e| data_err(format!("manifest: {e}")))?;
        c.push_text("manifest/toml", &text)?;
        self.ae.save(&mut c)?;
        let (w, h) = (m.image_width, m.image_height);
        for (i, e) in self.entries.iter().enumerate() {
            let obj = e.object.to_toml()?;
            c.push_text(format!("entries/{i}/object"), &obj)?;
            let d0: Vec<u16> = e.d0.iter().flat_map(depth_mm).collect();
            c.push(format!("entries/{i}/d0"), &[e.d0.len(), h, w], Payload::U16(d0))?;
            let e0: Vec<f32> = e.e0.iter().flatten().copied().collect();
            c.push_f32(format!("entries/{i}/e0"), &[e.e0.len(), m.embed_dim], e0)?;
            e.tsdf.to_container(&mut c, &format!("entries/{i}/tsdf"))?;
        }
        let n = self.records.len();
        let stride = 11 + m.embed_dim;
        let mut meta = Vec::with_capacity(n * META_COLS);
        let mut values = Vec::with_capacity(n * stride);
        let mut d1 = Vec::new();
        let mut slots = 0u32;
        for r in &self.records {
            if r.e1.len() != m.embed_dim {
                return Err(data_err("record embedding size differs from the manifest"));
            }
            let slot = match &r.d1 {
                Some(d) => {
                    d1.extend(depth_mm(d));
                    slots += 1;
                    slots - 1
                }
                None => NONE,
            };
            meta.extend_from_slice(&[
                r.entry,
                r.camera,
                r.round,
                (r.source == Source::Mixture) as u32,
                r.label as u32,
                r.gt_success as u32,
                r.gt_mode.map_or(NONE, ModeId::index),
                slot,
            ]);
            values.extend_from_slice(&r.action);
            values.push(r.effect);
            values.extend_from_slice(&r.e1);
        }
        c.push("records/meta", &[n, META_COLS], Payload::U32(meta))?;
        c.push_f32("records/values", &[n, stride], values)?;
        c.push("records/d1", &[slots as usize, h, w], Payload::U16(d1))?;
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let text = c.text("manifest/toml").map_err(|e| data_err(e.to_string()))?;
        let manifest: Manifest = toml::from_str(text).map_err(|e| data_err(format!("manifest: {e}")))?;
        if manifest.format != DATASET_FORMAT {
            return Err(data_err(format!("dataset format {} (expected {DATASET_FORMAT})", manifest.format)));
        }
        let (w, h, e_dim) = (manifest.image_width, manifest.image_height, manifest.embed_dim);
        let ae = DepthAutoencoder::load(c, w, h, e_dim)?;
        let mut entries = Vec::with_capacity(manifest.entries.len());
        for i in 0..manifest.entries.len() {
            let object = ArticulatedObject::from_toml(c.text(&format!("entries/{i}/object"))?)?;
            let (shape, d0) = c.u16(&format!("entries/{i}/d0"))?;
            if shape != [manifest.cameras, h, w] {
                return Err(data_err(format!("entry {i}: depth block {shape:?}")));
            }
            let d0 = d0.chunks(w * h).map(|mm| depth_from_mm(w, h, mm)).collect();
            let (shape, e0) = c.f32(&format!("entries/{i}/e0"))?;
            if shape != [manifest.cameras, e_dim] {
                return Err(data_err(format!("entry {i}: embedding block {shape:?}")));
            }
            let e0 = e0.chunks(e_dim).map(<[f32]>::to_vec).collect();
            let tsdf = TsdfVolume::from_container(c, &format!("entries/{i}/tsdf"))?;
            entries.push(StoredEntry { object, d0, e0, tsdf });
        }
        let (mshape, meta) = c.u32("records/meta")?;
        let (vshape, values) = c.f32("records/values")?;
        let (dshape, d1) = c.u16("records/d1")?;
        let stride = 11 + e_dim;
        let n = manifest.records;
        if mshape != [n, META_COLS] || vshape != [n, stride] || dshape.len() != 3 || dshape[1..] != [h, w] {
            return Err(data_err("record tables do not match the manifest"));
        }
        let mut records = Vec::with_capacity(n);
        for (m, v) in meta.chunks(META_COLS).zip(values.chunks(stride)) {
            if m[0] as usize >= entries.len() || m[1] as usize >= manifest.cameras {
                return Err(data_err("record refers to a missing entry or camera"));
            }
            let d1 = match m[7] {
                NONE => None,
                s if (s as usize) < dshape[0] => {
                    let k = s as usize * w * h;
                    Some(depth_from_mm(w, h, &d1[k..k + w * h]))
                }
                _ => return Err(data_err("record refers to a missing final depth")),
            };
            records.push(Record {
                entry: m[0],
                camera: m[1],
                round: m[2],
                source: if m[3] == 1 { Source::Mixture } else { Source::Random },
                label: m[4] == 1,
                gt_success: m[5] == 1,
                gt_mode: (m[6] != NONE).then(|| ModeId::from_index(m[6])),
                action: v[..10].try_into().expect("ten action values"),
                effect: v[10],
                e1: v[11..].to_vec(),
                d1,
            });
        }
        Ok(Self { manifest, ae, entries, records })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(self.to_container()?.write(path)?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let c = Container::read(path).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
        Self::from_container(&c)
    }

    /// Effect norm recomputed from the stored embeddings.
    pub fn recomputed_effect(&self, r: &Record) -> f32 {
        crate::datagen::effect_norm(&self.entries[r.entry as usize].e0[r.camera as usize], &r.e1)
    }
}
