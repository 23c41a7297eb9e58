//! Sphere-traced depth rendering, back-projection and TSDF fusion.

use serde::{Deserialize, Serialize};
use tensor::container::Container;

use crate::geom::{Affine, Pose, Quat, Vec3};
use crate::kinematics::{ArticulatedObject, Scene};
use crate::{Error, Real, Result};

pub const MAX_MARCH_STEPS: usize = 128;
pub const HIT_TOLERANCE: f64 = 1e-4;
pub const FAR_PLANE: f64 = 10.0;

/// Pinhole camera; `pose` maps camera coordinates (x right, y down,
/// z forward) to world coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera<T> {
    pub pose: Pose<T>,
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
}

impl<T: Real> Camera<T> {
    pub fn new(pose: Pose<T>, fov_deg: f64, width: usize, height: usize) -> Result<Self> {
        let f = T::c(width as f64 / 2.0 / (fov_deg.to_radians() / 2.0).tan());
        let cam = Self {
            pose,
            fx: f,
            fy: f,
            cx: T::c(width as f64 / 2.0),
            cy: T::c(height as f64 / 2.0),
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` aimed at `target` with world z up.
    pub fn look_at(eye: Vec3<T>, target: Vec3<T>, fov_deg: f64, width: usize, height: usize) -> Result<Self> {
        let forward = (target - eye).normalized();
        let right = forward.cross(Vec3::unit_z()).normalized();
        let down = forward.cross(right);
        let rot = Quat::from_columns(right, down, forward);
        Self::new(Pose::new(rot, eye), fov_deg, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > T::zero()
            && self.fy > T::zero()
            && self.cx >= T::zero()
            && self.cx < T::c(self.width as f64)
            && self.cy >= T::zero()
            && self.cy < T::c(self.height as f64);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("camera", "intrinsics outside the image"))
        }
    }

    pub fn optical_axis(&self) -> Vec3<T> {
        self.pose.apply_vec(Vec3::unit_z())
    }

    /// Unit ray direction in camera coordinates and its z component.
    fn ray(&self, u: usize, v: usize) -> (Vec3<T>, T) {
        let d = Vec3::new(
            (T::c(u as f64) - self.cx) / self.fx,
            (T::c(v as f64) - self.cy) / self.fy,
            T::one(),
        );
        let n = d.norm();
        (d * (T::one() / n), T::one() / n)
    }

    /// Projection of a world point to continuous pixel coordinates and depth.
    pub fn project(&self, world_to_cam: &Affine<T>, p: Vec3<T>) -> Option<(T, T, T)> {
        let q = world_to_cam.apply(p);
        if q.z <= T::zero() {
            return None;
        }
        Some((self.fx * q.x / q.z + self.cx, self.fy * q.y / q.z + self.cy, q.z))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    pub radius: f64,
    pub height: f64,
    pub fov_deg: f64,
    pub width: usize,
    pub image_height: usize,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self { radius: 1.1, height: 0.45, fov_deg: 50.0, width: 96, image_height: 96 }
    }
}

pub const VIEW_YAWS_DEG: [f64; 5] = [-45.0, -22.5, 0.0, 22.5, 45.0];

/// Five cameras on a frontal arc around `centroid`, all aimed at it.
pub fn default_views<T: Real>(centroid: Vec3<T>, cfg: &CameraConfig) -> Result<Vec<Camera<T>>> {
    VIEW_YAWS_DEG
        .iter()
        .map(|yaw| {
            let a = yaw.to_radians();
            let eye = centroid + Vec3::c(cfg.radius * a.sin(), -cfg.radius * a.cos(), cfg.height);
            Camera::look_at(eye, centroid, cfg.fov_deg, cfg.width, cfg.image_height)
        })
        .collect()
}

/// Per-pixel z-depth in meters, row-major; 0 marks a miss.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Real> DepthImage<T> {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![T::zero(); width * height] }
    }

    pub fn at(&self, u: usize, v: usize) -> T {
        self.data[v * self.width + u]
    }

    pub fn hits(&self) -> usize {
        self.data.iter().filter(|&&d| d > T::zero()).count()
    }

    pub fn cast<U: Real>(&self) -> DepthImage<U> {
        DepthImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|d| U::c(d.as_f64())).collect(),
        }
    }
}

fn slab<T: Real>(o: Vec3<T>, d: Vec3<T>, lo: Vec3<T>, hi: Vec3<T>) -> Option<(T, T)> {
    let mut t0 = T::zero();
    let mut t1 = T::c(FAR_PLANE);
    for ((oi, di), (l, h)) in o.to_array().into_iter().zip(d.to_array()).zip(lo.to_array().into_iter().zip(hi.to_array())) {
        if di.abs() < T::c(1e-12) {
            if oi < l || oi > h {
                return None;
            }
            continue;
        }
        let (a, b) = ((l - oi) / di, (h - oi) / di);
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        t0 = t0.max(a);
        t1 = t1.min(b);
        if t0 > t1 {
            return None;
        }
    }
    Some((t0, t1))
}

/// Sphere-traces every pixel against a prebuilt scene.
pub fn render_scene<T: Real>(scene: &Scene<T>, cam: &Camera<T>) -> DepthImage<T> {
    let mut img = DepthImage::zeros(cam.width, cam.height);
    if scene.is_empty() {
        return img;
    }
    let (lo, hi) = scene.bounds();
    let pad = Vec3::splat(T::c(1e-3));
    let (lo, hi) = (lo - pad, hi + pad);
    let origin = cam.pose.trans;
    let tol = T::c(HIT_TOLERANCE);
    for v in 0..cam.height {
        for u in 0..cam.width {
            let (local, zscale) = cam.ray(u, v);
            let dir = cam.pose.apply_vec(local);
            let Some((t0, t1)) = slab(origin, dir, lo, hi) else { continue };
            let mut t = t0;
            for _ in 0..MAX_MARCH_STEPS {
                let d = scene.distance(origin + dir * t);
                if d < tol {
                    img.data[v * cam.width + u] = t * zscale;
                    break;
                }
                t += d;
                if t > t1 {
                    break;
                }
            }
        }
    }
    img
}

pub fn render_depth<T: Real>(obj: &ArticulatedObject<T>, cam: &Camera<T>) -> DepthImage<T> {
    render_scene(&Scene::new(obj), cam)
}

/// Back-projected hits with their pixel index.
pub fn depth_to_pointcloud_indexed<T: Real>(depth: &DepthImage<T>, cam: &Camera<T>) -> Vec<(usize, Vec3<T>)> {
    let mut out = Vec::new();
    for v in 0..depth.height {
        for u in 0..depth.width {
            let z = depth.at(u, v);
            if z <= T::zero() {
                continue;
            }
            let local = Vec3::new(
                (T::c(u as f64) - cam.cx) / cam.fx * z,
                (T::c(v as f64) - cam.cy) / cam.fy * z,
                z,
            );
            out.push((v * depth.width + u, cam.pose.apply(local)));
        }
    }
    out
}

pub fn depth_to_pointcloud<T: Real>(depth: &DepthImage<T>, cam: &Camera<T>) -> Vec<Vec3<T>> {
    depth_to_pointcloud_indexed(depth, cam).into_iter().map(|(_, p)| p).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridConfig<T> {
    pub origin: Vec3<T>,
    pub voxel_size: T,
    pub dims: [usize; 3],
    /// Truncation distance in voxels.
    pub trunc_voxels: T,
}

impl<T: Real> GridConfig<T> {
    /// Cubic grid of `n` voxels per side and edge `side` centered on `center`.
    pub fn cube(center: Vec3<T>, side: f64, n: usize, trunc_voxels: f64) -> Self {
        Self {
            origin: center - Vec3::splat(T::c(side / 2.0)),
            voxel_size: T::c(side / n as f64),
            dims: [n, n, n],
            trunc_voxels: T::c(trunc_voxels),
        }
    }
}

/// Truncated signed distances normalized to [-1, 1], x-major layout
/// `(i * ny + j) * nz + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct TsdfVolume<T> {
    pub origin: Vec3<T>,
    pub voxel_size: T,
    pub dims: [usize; 3],
    pub trunc: T,
    pub tsdf: Vec<T>,
    pub weight: Vec<T>,
}

impl<T: Real> TsdfVolume<T> {
    pub fn new(grid: &GridConfig<T>) -> Result<Self> {
        if !(grid.voxel_size > T::zero()) {
            return Err(Error::invalid("tsdf_fuse", "voxel size must be positive"));
        }
        if grid.dims.contains(&0) || !(grid.trunc_voxels > T::zero()) {
            return Err(Error::invalid("tsdf_fuse", "grid extents and truncation must be positive"));
        }
        let n = grid.dims.iter().product();
        Ok(Self {
            origin: grid.origin,
            voxel_size: grid.voxel_size,
            dims: grid.dims,
            trunc: grid.trunc_voxels * grid.voxel_size,
            tsdf: vec![T::one(); n],
            weight: vec![T::zero(); n],
        })
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3<T> {
        let h = T::c(0.5);
        self.origin
            + Vec3::new(
                (T::c(i as f64) + h) * self.voxel_size,
                (T::c(j as f64) + h) * self.voxel_size,
                (T::c(k as f64) + h) * self.voxel_size,
            )
    }

    /// Far corner of the grid.
    pub fn extent_max(&self) -> Vec3<T> {
        self.origin
            + Vec3::new(
                T::c(self.dims[0] as f64),
                T::c(self.dims[1] as f64),
                T::c(self.dims[2] as f64),
            ) * self.voxel_size
    }

    /// Fuses one depth view by projective running average.
    pub fn integrate(&mut self, depth: &DepthImage<T>, cam: &Camera<T>) {
        let to_cam = Affine::from_pose(&cam.pose.inverse());
        let half = T::c(0.5);
        for i in 0..self.dims[0] {
            for j in 0..self.dims[1] {
                for k in 0..self.dims[2] {
                    let c = self.voxel_center(i, j, k);
                    let Some((u, v, z)) = cam.project(&to_cam, c) else { continue };
                    let (u, v) = ((u + half).floor(), (v + half).floor());
                    if u < T::zero() || v < T::zero() {
                        continue;
                    }
                    let (u, v) = (u.as_f64() as usize, v.as_f64() as usize);
                    if u >= depth.width || v >= depth.height {
                        continue;
                    }
                    let d = depth.at(u, v);
                    if d <= T::zero() {
                        continue;
                    }
                    let sdf = d - z;
                    if sdf < -self.trunc {
                        continue;
                    }
                    let value = sdf.min(self.trunc) / self.trunc;
                    let idx = self.index(i, j, k);
                    let w = self.weight[idx];
                    self.tsdf[idx] = (self.tsdf[idx] * w + value) / (w + T::one());
                    self.weight[idx] = w + T::one();
                }
            }
        }
    }

    pub fn to_container(&self, c: &mut Container, section: &str) -> Result<()> {
        let dims = &self.dims;
        let o = self.origin;
        c.push_f32(
            format!("{section}/meta"),
            &[5],
            [o.x, o.y, o.z, self.voxel_size, self.trunc].iter().map(|v| v.as_f64() as f32).collect(),
        )?;
        c.push_f32(format!("{section}/values"), dims, self.tsdf.iter().map(|v| v.as_f64() as f32).collect())?;
        c.push_f32(format!("{section}/weights"), dims, self.weight.iter().map(|v| v.as_f64() as f32).collect())?;
        Ok(())
    }

    pub fn from_container(c: &Container, section: &str) -> Result<Self> {
        let (_, meta) = c.f32(&format!("{section}/meta"))?;
        let (shape, values) = c.f32(&format!("{section}/values"))?;
        let (wshape, weights) = c.f32(&format!("{section}/weights"))?;
        if meta.len() != 5 || shape.len() != 3 || shape != wshape {
            return Err(Error::Data(format!("malformed TSDF section `{section}`")));
        }
        let t = |v: f32| T::c(v as f64);
        Ok(Self {
            origin: Vec3::new(t(meta[0]), t(meta[1]), t(meta[2])),
            voxel_size: t(meta[3]),
            dims: [shape[0], shape[1], shape[2]],
            trunc: t(meta[4]),
            tsdf: values.iter().map(|&v| t(v)).collect(),
            weight: weights.iter().map(|&v| t(v)).collect(),
        })
    }
}

pub fn tsdf_fuse<T: Real>(views: &[(&DepthImage<T>, &Camera<T>)], grid: &GridConfig<T>) -> Result<TsdfVolume<T>> {
    if views.is_empty() {
        return Err(Error::invalid("tsdf_fuse", "at least one view is required"));
    }
    let mut vol = TsdfVolume::new(grid)?;
    for (depth, cam) in views {
        vol.integrate(depth, cam);
    }
    Ok(vol)
}

pub fn tsdf_single_view<T: Real>(depth: &DepthImage<T>, cam: &Camera<T>, grid: &GridConfig<T>) -> Result<TsdfVolume<T>> {
    tsdf_fuse(&[(depth, cam)], grid)
}
