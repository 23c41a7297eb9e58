//! Depth autoencoder and tri-plane geometry features.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use tensor::container::Container;
use tensor::nn::{mse, Conv, Linear};
use tensor::{Adam, Graph, ParamStore, Tensor, Var};

use crate::geom::Vec3;
use crate::render::{DepthImage, TsdfVolume};
use crate::{Error, Result};

/// Depth values are scaled by this factor before entering the network.
const DEPTH_SCALE: f32 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderConfig {
    pub embed_dim: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self { embed_dim: 64, steps: 800, batch: 16, lr: 2e-3 }
    }
}

/// Convolutional depth autoencoder: three conv+pool stages and a dense
/// bottleneck, mirrored by upsampling stages in the decoder.
#[derive(Clone, Debug)]
pub struct DepthAutoencoder {
    pub store: ParamStore<f32>,
    pub width: usize,
    pub height: usize,
    pub embed_dim: usize,
    enc: [Conv; 3],
    enc_fc: Linear,
    dec_fc: Linear,
    dec: [Conv; 3],
}

const ENC_CHANNELS: [usize; 4] = [1, 4, 8, 8];

impl DepthAutoencoder {
    pub fn new<R: Rng + ?Sized>(width: usize, height: usize, embed_dim: usize, rng: &mut R) -> Result<Self> {
        if width % 8 != 0 || height % 8 != 0 || width == 0 || height == 0 {
            return Err(Error::Config(format!("depth resolution {width}x{height} must be a multiple of 8")));
        }
        let mut store = ParamStore::new();
        let c = ENC_CHANNELS;
        let enc = [0, 1, 2].map(|i| Conv::new(&mut store, &format!("enc_depth.conv{i}"), c[i], c[i + 1], 3, 1, rng));
        let flat = c[3] * (width / 8) * (height / 8);
        let enc_fc = Linear::new(&mut store, "enc_depth.fc", flat, embed_dim, rng);
        let dec_fc = Linear::new(&mut store, "dec_depth.fc", embed_dim, flat, rng);
        let dec = [0, 1, 2].map(|i| {
            Conv::new(&mut store, &format!("dec_depth.conv{i}"), c[3 - i], c[2 - i], 3, 1, rng)
        });
        Ok(Self { store, width, height, embed_dim, enc, enc_fc, dec_fc, dec })
    }

    fn check(&self, d: &DepthImage<f32>) -> Result<()> {
        if d.width != self.width || d.height != self.height {
            return Err(Error::invalid(
                "embed_depth",
                format!("image is {}x{}, encoder expects {}x{}", d.width, d.height, self.width, self.height),
            ));
        }
        Ok(())
    }

    fn input(&self, g: &mut Graph<f32>, batch: &[&DepthImage<f32>]) -> Result<Var> {
        let mut data = Vec::with_capacity(batch.len() * self.width * self.height);
        for d in batch {
            self.check(d)?;
            data.extend(d.data.iter().map(|v| v * DEPTH_SCALE));
        }
        Ok(g.input(Tensor::new(&[batch.len(), 1, self.height, self.width], data)?))
    }

    fn encode_graph(&self, g: &mut Graph<f32>, x: Var) -> Result<Var> {
        let n = g.shape(x)[0];
        let mut h = x;
        for conv in &self.enc {
            h = conv.forward(g, &self.store, h)?;
            h = g.relu(h);
            h = g.avgpool2(h)?;
        }
        let flat = self.enc_fc.fan_in;
        let h = g.reshape(h, &[n, flat])?;
        Ok(self.enc_fc.forward(g, &self.store, h)?)
    }

    fn decode_graph(&self, g: &mut Graph<f32>, z: Var) -> Result<Var> {
        let n = g.shape(z)[0];
        let h = self.dec_fc.forward(g, &self.store, z)?;
        let h = g.relu(h);
        let mut h = g.reshape(h, &[n, ENC_CHANNELS[3], self.height / 8, self.width / 8])?;
        for (i, conv) in self.dec.iter().enumerate() {
            h = g.upsample2(h)?;
            h = conv.forward(g, &self.store, h)?;
            if i + 1 < self.dec.len() {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    pub fn embed_batch(&self, batch: &[&DepthImage<f32>]) -> Result<Vec<Vec<f32>>> {
        let mut g = Graph::new();
        let x = self.input(&mut g, batch)?;
        let z = self.encode_graph(&mut g, x)?;
        Ok(g.value(z).data().chunks(self.embed_dim).map(<[f32]>::to_vec).collect())
    }

    pub fn embed(&self, d: &DepthImage<f32>) -> Result<Vec<f32>> {
        Ok(self.embed_batch(&[d])?.remove(0))
    }

    /// Mean squared reconstruction error in network input units.
    pub fn reconstruction_mse(&self, batch: &[&DepthImage<f32>]) -> Result<f32> {
        let mut g = Graph::new();
        let x = self.input(&mut g, batch)?;
        let z = self.encode_graph(&mut g, x)?;
        let y = self.decode_graph(&mut g, z)?;
        let l = mse(&mut g, y, x)?;
        Ok(g.value(l).item())
    }

    pub fn save(&self, c: &mut Container) -> Result<()> {
        c.put_params("enc_depth", &self.store, "enc_depth.")?;
        c.put_params("dec_depth", &self.store, "dec_depth.")?;
        Ok(())
    }

    pub fn load(c: &Container, width: usize, height: usize, embed_dim: usize) -> Result<Self> {
        let mut ae = Self::new(width, height, embed_dim, &mut crate::rng::stream(0, "load", &[]))?;
        c.get_params("enc_depth", &mut ae.store, "enc_depth.")?;
        c.get_params("dec_depth", &mut ae.store, "dec_depth.")?;
        Ok(ae)
    }
}

/// Minimizes mean squared reconstruction error over `corpus`; returns the
/// trained autoencoder and the per-step loss.
pub fn train_depth_autoencoder<R: Rng + ?Sized>(
    corpus: &[DepthImage<f32>],
    cfg: &AutoencoderConfig,
    rng: &mut R,
) -> Result<(DepthAutoencoder, Vec<f32>)> {
    let first = corpus.first().ok_or_else(|| Error::invalid("train_depth_autoencoder", "empty corpus"))?;
    let mut ae = DepthAutoencoder::new(first.width, first.height, cfg.embed_dim, rng)?;
    let adam = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut cursor = order.len();
    let mut losses = Vec::with_capacity(cfg.steps);
    let batch = cfg.batch.clamp(1, corpus.len());
    for _ in 0..cfg.steps {
        let mut picked = Vec::with_capacity(batch);
        while picked.len() < batch {
            if cursor == order.len() {
                order.shuffle(rng);
                cursor = 0;
            }
            picked.push(&corpus[order[cursor]]);
            cursor += 1;
        }
        let mut g = Graph::new();
        let x = ae.input(&mut g, &picked)?;
        let z = ae.encode_graph(&mut g, x)?;
        let y = ae.decode_graph(&mut g, z)?;
        let loss = mse(&mut g, y, x)?;
        let grads = g.backward(loss)?;
        ae.store.accumulate(&g, &grads);
        adam.step(&mut ae.store)?;
        losses.push(g.value(loss).item());
    }
    Ok((ae, losses))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneConfig {
    pub channels: usize,
    pub resolution: usize,
}

impl Default for PlaneConfig {
    fn default() -> Self {
        Self { channels: 16, resolution: 24 }
    }
}

/// Axis pairs `(row, col)` of the three canonical planes: xy, yz, zx.
pub const PLANE_AXES: [(usize, usize); 3] = [(0, 1), (1, 2), (2, 0)];
/// Per-cell inputs: mean TSDF and mean observed fraction.
pub const PLANE_INPUTS: usize = 2;

/// Axis-aligned square extent shared by the three planes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneExtent {
    pub origin: [f32; 3],
    pub size: [f32; 3],
    pub resolution: usize,
}

impl PlaneExtent {
    pub fn of_volume(vol: &TsdfVolume<f32>, resolution: usize) -> Self {
        let o = vol.origin;
        let e = vol.extent_max() - o;
        Self { origin: [o.x, o.y, o.z], size: [e.x, e.y, e.z], resolution }
    }

    /// Continuous `(row, col)` grid coordinates of `p` on every plane,
    /// clamped to the grid, plus whether clamping was needed. Node `i` sits
    /// at the center of cell `i`.
    pub fn coords(&self, p: Vec3<f32>) -> ([f32; 6], bool) {
        let g = self.resolution as f32;
        let lim = g - 1.0;
        let p = p.to_array();
        let mut clamped = false;
        let mut axis = [0f32; 3];
        for a in 0..3 {
            let c = (p[a] - self.origin[a]) / self.size[a] * g - 0.5;
            let cc = c.clamp(0.0, lim);
            clamped |= cc != c || !c.is_finite();
            axis[a] = if cc.is_finite() { cc } else { 0.0 };
        }
        let mut out = [0f32; 6];
        for (k, &(r, c)) in PLANE_AXES.iter().enumerate() {
            out[2 * k] = axis[r];
            out[2 * k + 1] = axis[c];
        }
        (out, clamped)
    }
}

/// Plane-projected TSDF input `[3, PLANE_INPUTS, G, G]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneInput {
    pub data: Vec<f32>,
    pub extent: PlaneExtent,
}

/// Average-projects (tsdf, min(weight, 1)) along each axis onto the three
/// planes, then block-averages to `resolution`.
pub fn project_volume(vol: &TsdfVolume<f32>, resolution: usize) -> Result<PlaneInput> {
    let d = vol.dims;
    if d.iter().any(|&n| n % resolution != 0) {
        return Err(Error::Config(format!("grid {d:?} is not divisible by plane resolution {resolution}")));
    }
    let g = resolution;
    let plane = PLANE_INPUTS * g * g;
    let mut data = vec![0f32; 3 * plane];
    for (k, &(ra, ca)) in PLANE_AXES.iter().enumerate() {
        let da = 3 - ra - ca;
        let (br, bc) = (d[ra] / g, d[ca] / g);
        let norm = 1.0 / (br * bc * d[da]) as f32;
        let base = k * plane;
        for i in 0..d[0] {
            for j in 0..d[1] {
                for l in 0..d[2] {
                    let idx = [i, j, l];
                    let cell = (idx[ra] / br) * g + idx[ca] / bc;
                    let v = vol.index(i, j, l);
                    data[base + cell] += vol.tsdf[v] * norm;
                    data[base + g * g + cell] += vol.weight[v].min(1.0) * norm;
                }
            }
        }
    }
    Ok(PlaneInput { data, extent: PlaneExtent::of_volume(vol, resolution) })
}

/// Three feature planes `[3, C, G, G]` with their extent.
#[derive(Clone, Debug, PartialEq)]
pub struct TriPlaneFeature {
    pub planes: Vec<f32>,
    pub channels: usize,
    pub extent: PlaneExtent,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalFeature {
    pub values: Vec<f32>,
    /// The query point lay outside the plane extent and was clamped.
    pub clamped: bool,
}

/// Bilinear interpolation of every channel at the projections of `p`,
/// concatenated in plane order xy, yz, zx.
pub fn query_local_feature(feat: &TriPlaneFeature, p: Vec3<f32>) -> LocalFeature {
    let (coords, clamped) = feat.extent.coords(p);
    let g = feat.extent.resolution;
    let c = feat.channels;
    let mut values = Vec::with_capacity(3 * c);
    for k in 0..3 {
        let (r0, r1, tr) = tensor::kernels::lerp_cell(coords[2 * k], g);
        let (c0, c1, tc) = tensor::kernels::lerp_cell(coords[2 * k + 1], g);
        for ch in 0..c {
            let base = (k * c + ch) * g * g;
            let at = |r: usize, cc: usize| feat.planes[base + r * g + cc];
            values.push(
                (1.0 - tr) * (1.0 - tc) * at(r0, c0)
                    + (1.0 - tr) * tc * at(r0, c1)
                    + tr * (1.0 - tc) * at(r1, c0)
                    + tr * tc * at(r1, c1),
            );
        }
    }
    LocalFeature { values, clamped }
}

/// Shared three-layer convolution stack applied to every plane.
#[derive(Clone, Debug)]
pub struct TriPlaneEncoder {
    convs: [Conv; 3],
    pub channels: usize,
    pub resolution: usize,
}

impl TriPlaneEncoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore<f32>, cfg: &PlaneConfig, rng: &mut R) -> Self {
        let c = cfg.channels;
        let dims = [PLANE_INPUTS, c, c, c];
        let convs = [0, 1, 2].map(|i| Conv::new(store, &format!("tri_plane.conv{i}"), dims[i], dims[i + 1], 3, 1, rng));
        Self { convs, channels: c, resolution: cfg.resolution }
    }

    /// Feature planes as a graph node `[3, C, G, G]`.
    pub fn encode_graph(&self, g: &mut Graph<f32>, store: &ParamStore<f32>, input: &PlaneInput) -> Result<Var> {
        let r = self.resolution;
        let mut h = g.input(Tensor::new(&[3, PLANE_INPUTS, r, r], input.data.clone())?);
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(g, store, h)?;
            if i + 1 < self.convs.len() {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    pub fn encode_planes(&self, store: &ParamStore<f32>, input: &PlaneInput) -> Result<TriPlaneFeature> {
        let mut g = Graph::new();
        let h = self.encode_graph(&mut g, store, input)?;
        Ok(TriPlaneFeature { planes: g.value(h).data().to_vec(), channels: self.channels, extent: input.extent })
    }
}
