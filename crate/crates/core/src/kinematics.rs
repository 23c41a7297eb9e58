//! Procedural articulated objects and a quasi-static contact model.
//!
//! Objects are kinematic trees of links built from box and cylinder SDF
//! primitives. Link 0 is the fixed root; every other link hangs off exactly
//! one joint whose axis and anchor are expressed in the parent link's frame.
//! The world is z-up and every object faces `-y`.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::geom::{Affine, Pose, Quat, Vec3};
use crate::{rng, Error, Real, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    CabinetPrismatic,
    CabinetRevolute,
    Faucet,
    Switch,
    Fridge,
    Window,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::CabinetPrismatic,
        Category::CabinetRevolute,
        Category::Faucet,
        Category::Switch,
        Category::Fridge,
        Category::Window,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::CabinetPrismatic => "cabinet-prismatic",
            Category::CabinetRevolute => "cabinet-revolute",
            Category::Faucet => "faucet",
            Category::Switch => "switch",
            Category::Fridge => "fridge",
            Category::Window => "window",
        }
    }

    pub fn joint_count(self) -> usize {
        match self {
            Category::Faucet | Category::Switch | Category::Window => 1,
            _ => 2,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid("make_object", format!("unknown object category `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Shape<T> {
    Box { half: Vec3<T>, pose: Pose<T> },
    /// Cylinder along the local z axis.
    Cylinder { radius: T, half_height: T, pose: Pose<T> },
}

impl<T: Real> Shape<T> {
    pub fn pose(&self) -> &Pose<T> {
        match self {
            Shape::Box { pose, .. } | Shape::Cylinder { pose, .. } => pose,
        }
    }

    fn extents_positive(&self) -> bool {
        match *self {
            Shape::Box { half, .. } => half.x > T::zero() && half.y > T::zero() && half.z > T::zero(),
            Shape::Cylinder { radius, half_height, .. } => radius > T::zero() && half_height > T::zero(),
        }
    }

    fn local_half(&self) -> Vec3<T> {
        match *self {
            Shape::Box { half, .. } => half,
            Shape::Cylinder { radius, half_height, .. } => Vec3::new(radius, radius, half_height),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandleRegion<T> {
    /// Center in the link frame.
    pub center: Vec3<T>,
    pub radius: T,
    /// Approach direction of a gripper grasping the handle, in the link frame.
    pub grasp_normal: Vec3<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Deserialize<'de>"))]
pub struct LinkGeometry<T> {
    pub name: String,
    pub shapes: Vec<Shape<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub handle: Option<HandleRegion<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JointKind {
    Revolute,
    Prismatic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointSpec<T> {
    pub kind: JointKind,
    pub parent: usize,
    pub child: usize,
    pub axis: Vec3<T>,
    pub anchor: Vec3<T>,
    pub lo: T,
    pub hi: T,
    pub value: T,
}

impl<T: Real> JointSpec<T> {
    pub fn range(&self) -> T {
        self.hi - self.lo
    }

    /// Motion of the child relative to the parent at the current value.
    pub fn transform(&self) -> Pose<T> {
        match self.kind {
            JointKind::Prismatic => Pose::translation(self.axis * self.value),
            JointKind::Revolute => Pose::rotation_about(self.axis, self.anchor, self.value),
        }
    }

    /// Current position as a fraction of the range.
    pub fn fraction(&self) -> T {
        if self.range() > T::zero() {
            (self.value - self.lo) / self.range()
        } else {
            T::zero()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArticulatedObject<T> {
    pub category: Category,
    pub seed: u64,
    pub base: Pose<T>,
    pub links: Vec<LinkGeometry<T>>,
    pub joints: Vec<JointSpec<T>>,
}

impl<T: Real> ArticulatedObject<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid("object", msg));
        let n = self.links.len();
        if n == 0 {
            return bad("object has no links".into());
        }
        if self.joints.len() + 1 != n {
            return bad(format!("{} links need {} joints, found {}", n, n - 1, self.joints.len()));
        }
        let mut owner = vec![None; n];
        for (j, joint) in self.joints.iter().enumerate() {
            if joint.child >= n || joint.parent >= n {
                return bad(format!("joint {j} references a missing link"));
            }
            if owner[joint.child].replace(j).is_some() {
                return bad(format!("link {} has more than one joint", joint.child));
            }
            if (joint.axis.norm() - T::one()).abs() > T::c(1e-6) {
                return bad(format!("joint {j} axis is not unit length"));
            }
            if !(joint.lo <= joint.value && joint.value <= joint.hi) {
                return bad(format!("joint {j} value outside its limits"));
            }
        }
        let roots: Vec<_> = (0..n).filter(|&l| owner[l].is_none()).collect();
        if roots != [0] {
            return bad(format!("expected link 0 as the single root, roots are {roots:?}"));
        }
        for start in 1..n {
            let mut link = start;
            let mut steps = 0;
            while let Some(j) = owner[link] {
                link = self.joints[j].parent;
                steps += 1;
                if steps > n {
                    return bad(format!("cycle through link {start}"));
                }
            }
        }
        for (l, link) in self.links.iter().enumerate() {
            if link.shapes.iter().any(|s| !s.extents_positive()) {
                return bad(format!("link {l} has a primitive with non-positive extent"));
            }
            if link.handle.as_ref().is_some_and(|h| h.radius <= T::zero()) {
                return bad(format!("link {l} handle radius must be positive"));
            }
        }
        Ok(())
    }

    /// Joint driving `link`, if any.
    pub fn joint_of(&self, link: usize) -> Option<usize> {
        self.joints.iter().position(|j| j.child == link)
    }

    pub fn joint_values(&self) -> Vec<T> {
        self.joints.iter().map(|j| j.value).collect()
    }

    pub fn joint_fractions(&self) -> Vec<T> {
        self.joints.iter().map(|j| j.fraction()).collect()
    }

    /// Links whose pose depends on at least one joint.
    pub fn is_movable(&self, link: usize) -> bool {
        link != 0 && link < self.links.len()
    }

    /// Center of the root link's bounding box; independent of joint state.
    pub fn centroid(&self) -> Vec3<T> {
        let (lo, hi) = shapes_bounds(self.links[0].shapes.iter().map(|s| (s, self.base)));
        (lo + hi) * T::c(0.5)
    }

    pub fn to_toml(&self) -> Result<String>
    where
        T: Serialize,
    {
        toml::to_string(self).map_err(|e| Error::Data(format!("object serialization: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self>
    where
        T: for<'de> Deserialize<'de>,
    {
        let obj: Self = toml::from_str(text).map_err(|e| Error::Config(format!("object spec: {e}")))?;
        obj.validate()?;
        Ok(obj)
    }
}

fn shapes_bounds<'a, T: Real + 'a>(
    shapes: impl Iterator<Item = (&'a Shape<T>, Pose<T>)>,
) -> (Vec3<T>, Vec3<T>) {
    let mut lo = Vec3::splat(T::infinity());
    let mut hi = Vec3::splat(T::neg_infinity());
    for (shape, link_pose) in shapes {
        let pose = link_pose.compose(shape.pose());
        let h = shape.local_half();
        for corner in 0..8 {
            let sx = if corner & 1 == 0 { -h.x } else { h.x };
            let sy = if corner & 2 == 0 { -h.y } else { h.y };
            let sz = if corner & 4 == 0 { -h.z } else { h.z };
            let w = pose.apply(Vec3::new(sx, sy, sz));
            lo = lo.min(w);
            hi = hi.max(w);
        }
    }
    (lo, hi)
}

/// World pose of every link.
pub fn forward_kinematics<T: Real>(obj: &ArticulatedObject<T>) -> Vec<Pose<T>> {
    let n = obj.links.len();
    let mut poses: Vec<Option<Pose<T>>> = vec![None; n];
    poses[0] = Some(obj.base);
    let mut remaining = n - 1;
    while remaining > 0 {
        let before = remaining;
        for j in &obj.joints {
            if poses[j.child].is_none() {
                if let Some(parent) = poses[j.parent] {
                    poses[j.child] = Some(parent.compose(&j.transform()));
                    remaining -= 1;
                }
            }
        }
        assert!(remaining < before, "kinematic tree is disconnected");
    }
    poses.into_iter().map(|p| p.unwrap()).collect()
}

#[derive(Clone, Copy, Debug)]
enum Prim<T> {
    Box(Vec3<T>),
    Cylinder(T, T),
}

#[derive(Clone, Debug)]
struct Item<T> {
    to_local: Affine<T>,
    prim: Prim<T>,
    link: usize,
}

/// Posed primitives of an object, ready for repeated SDF queries.
#[derive(Clone, Debug)]
pub struct Scene<T> {
    items: Vec<Item<T>>,
    lo: Vec3<T>,
    hi: Vec3<T>,
}

#[inline]
fn box_sdf<T: Real>(q: Vec3<T>, half: Vec3<T>) -> T {
    let d = q.abs() - half;
    d.max(Vec3::zero()).norm() + d.max_elem().min(T::zero())
}

#[inline]
fn cylinder_sdf<T: Real>(q: Vec3<T>, radius: T, half_height: T) -> T {
    let dr = (q.x * q.x + q.y * q.y).sqrt() - radius;
    let dz = q.z.abs() - half_height;
    let outside = (dr.max(T::zero()).powi(2) + dz.max(T::zero()).powi(2)).sqrt();
    outside + dr.max(dz).min(T::zero())
}

impl<T: Real> Scene<T> {
    pub fn new(obj: &ArticulatedObject<T>) -> Self {
        let poses = forward_kinematics(obj);
        let mut items = Vec::new();
        for (l, link) in obj.links.iter().enumerate() {
            for shape in &link.shapes {
                let world = poses[l].compose(shape.pose());
                let prim = match *shape {
                    Shape::Box { half, .. } => Prim::Box(half),
                    Shape::Cylinder { radius, half_height, .. } => Prim::Cylinder(radius, half_height),
                };
                items.push(Item { to_local: Affine::from_pose(&world.inverse()), prim, link: l });
            }
        }
        let (lo, hi) = shapes_bounds(
            obj.links
                .iter()
                .enumerate()
                .flat_map(|(l, link)| link.shapes.iter().map(move |s| (s, l)))
                .map(|(s, l)| (s, poses[l])),
        );
        Self { items, lo, hi }
    }

    pub fn empty() -> Self {
        Self {
            items: Vec::new(),
            lo: Vec3::splat(T::infinity()),
            hi: Vec3::splat(T::neg_infinity()),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Axis-aligned world bounds of all primitives.
    pub fn bounds(&self) -> (Vec3<T>, Vec3<T>) {
        (self.lo, self.hi)
    }

    #[inline]
    fn item_sdf(item: &Item<T>, p: Vec3<T>) -> T {
        let q = item.to_local.apply(p);
        match item.prim {
            Prim::Box(half) => box_sdf(q, half),
            Prim::Cylinder(r, h) => cylinder_sdf(q, r, h),
        }
    }

    /// Signed distance and owning link; `(inf, None)` for an empty scene.
    pub fn sdf(&self, p: Vec3<T>) -> (T, Option<usize>) {
        let mut best = T::infinity();
        let mut owner = None;
        for item in &self.items {
            let d = Self::item_sdf(item, p);
            if d < best {
                best = d;
                owner = Some(item.link);
            }
        }
        (best, owner)
    }

    pub fn distance(&self, p: Vec3<T>) -> T {
        self.items.iter().fold(T::infinity(), |m, it| m.min(Self::item_sdf(it, p)))
    }

    pub fn link_distance(&self, p: Vec3<T>, link: usize) -> T {
        self.items
            .iter()
            .filter(|it| it.link == link)
            .fold(T::infinity(), |m, it| m.min(Self::item_sdf(it, p)))
    }

    /// Outward surface normal of one link at `p` by central differences.
    pub fn link_normal(&self, p: Vec3<T>, link: usize) -> Vec3<T> {
        let h = T::c(1e-3);
        let f = |d: Vec3<T>| self.link_distance(p + d, link) - self.link_distance(p - d, link);
        let g = Vec3::new(
            f(Vec3::new(h, T::zero(), T::zero())),
            f(Vec3::new(T::zero(), h, T::zero())),
            f(Vec3::new(T::zero(), T::zero(), h)),
        );
        let n = g.norm();
        if n > T::zero() {
            g * (T::one() / n)
        } else {
            Vec3::zero()
        }
    }
}

pub fn scene_sdf<T: Real>(obj: &ArticulatedObject<T>, p: Vec3<T>) -> (T, Option<usize>) {
    Scene::new(obj).sdf(p)
}

/// Reach-grasp-move primitive: contact point, gripper orientation and move
/// direction. The move distance is a fixed contact parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionPrimitive<T> {
    pub point: Vec3<T>,
    pub rot: Quat<T>,
    pub dir: Vec3<T>,
}

pub const ACTION_DIM: usize = 10;

impl<T: Real> ActionPrimitive<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::invalid("execute_primitive", msg));
        if !self.point.is_finite() || !self.dir.is_finite() {
            return bad("non-finite action");
        }
        if !self.rot.is_unit(T::c(1e-6)) {
            return bad("gripper orientation is not a unit quaternion");
        }
        if self.dir.to_array().iter().any(|c| c.abs() > T::one()) {
            return bad("move direction component outside [-1, 1]");
        }
        if self.dir.norm() == T::zero() {
            return bad("move direction is the zero vector");
        }
        Ok(())
    }

    /// `p(3), R(4: w x y z), F(3)`.
    pub fn to_vec(&self) -> [T; ACTION_DIM] {
        let (p, r, f) = (self.point, self.rot, self.dir);
        [p.x, p.y, p.z, r.w, r.x, r.y, r.z, f.x, f.y, f.z]
    }

    pub fn from_slice(v: &[T]) -> Self {
        Self {
            point: Vec3::new(v[0], v[1], v[2]),
            rot: Quat::new(v[3], v[4], v[5], v[6]),
            dir: Vec3::new(v[7], v[8], v[9]),
        }
    }

    /// Gripper approach axis: the rotated z axis.
    pub fn approach(&self) -> Vec3<T> {
        self.rot.rotate(Vec3::unit_z())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactParams {
    pub contact_radius: f64,
    pub grasp_cone_deg: f64,
    pub move_distance: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self { contact_radius: 0.015, grasp_cone_deg: 60.0, move_distance: 0.12 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Grip {
    None,
    Touch,
    Firm,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactReport<T> {
    pub grip: Grip,
    pub link: Option<usize>,
    pub joint: Option<usize>,
    /// Applied joint change after clamping.
    pub delta: T,
}

impl<T: Real> ContactReport<T> {
    fn none() -> Self {
        Self { grip: Grip::None, link: None, joint: None, delta: T::zero() }
    }
}

pub fn execute_primitive<T: Real>(
    obj: &ArticulatedObject<T>,
    action: &ActionPrimitive<T>,
    params: &ContactParams,
) -> Result<(ArticulatedObject<T>, ContactReport<T>)> {
    let scene = Scene::new(obj);
    execute_in_scene(obj, &scene, action, params)
}

/// As [`execute_primitive`], reusing a prebuilt scene of `obj`.
pub fn execute_in_scene<T: Real>(
    obj: &ArticulatedObject<T>,
    scene: &Scene<T>,
    action: &ActionPrimitive<T>,
    params: &ContactParams,
) -> Result<(ArticulatedObject<T>, ContactReport<T>)> {
    action.validate()?;
    let p = action.point;
    let (dist, owner) = scene.sdf(p);
    let link = match owner {
        Some(l) if dist.abs() <= T::c(params.contact_radius) => l,
        _ => return Ok((obj.clone(), ContactReport::none())),
    };
    let poses = forward_kinematics(obj);
    let firm = obj.links[link].handle.as_ref().is_some_and(|h| {
        let center = poses[link].apply(h.center);
        let normal = poses[link].apply_vec(h.grasp_normal);
        let cos = action.approach().dot(normal);
        (p - center).norm() <= h.radius && cos >= T::c(params.grasp_cone_deg.to_radians().cos())
    });
    let grip = if firm { Grip::Firm } else { Grip::Touch };
    let mut report = ContactReport { grip, link: Some(link), joint: None, delta: T::zero() };
    let Some(j) = obj.joint_of(link) else {
        return Ok((obj.clone(), report));
    };
    report.joint = Some(j);

    let mut disp = action.dir.normalized() * T::c(params.move_distance);
    if !firm {
        let n = scene.link_normal(p, link);
        let press = disp.dot(n);
        disp = if press < T::zero() { n * press } else { Vec3::zero() };
    }
    let joint = &obj.joints[j];
    let parent = poses[joint.parent];
    let axis = parent.apply_vec(joint.axis);
    let raw = match joint.kind {
        JointKind::Prismatic => disp.dot(axis),
        JointKind::Revolute => {
            let anchor = parent.apply(joint.anchor);
            let rel = p - anchor;
            let radial = rel - axis * rel.dot(axis);
            let lever = radial.norm();
            if lever < T::c(1e-6) {
                T::zero()
            } else {
                let tangent = axis.cross(radial) * (T::one() / lever);
                disp.dot(tangent) / lever
            }
        }
    };
    let mut next = obj.clone();
    let jt = &mut next.joints[j];
    let new_value = (jt.value + raw).max(jt.lo).min(jt.hi);
    report.delta = new_value - jt.value;
    jt.value = new_value;
    Ok((next, report))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Increase,
    Decrease,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModeId {
    pub joint: usize,
    pub dir: Direction,
}

impl ModeId {
    pub fn new(joint: usize, dir: Direction) -> Self {
        Self { joint, dir }
    }

    /// Dense index `2 * joint + (0 increase | 1 decrease)`.
    pub fn index(self) -> u32 {
        2 * self.joint as u32 + (self.dir == Direction::Decrease) as u32
    }

    pub fn from_index(i: u32) -> Self {
        let dir = if i % 2 == 0 { Direction::Increase } else { Direction::Decrease };
        Self::new((i / 2) as usize, dir)
    }
}

impl fmt::Display for ModeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = if self.dir == Direction::Increase { '+' } else { '-' };
        write!(f, "j{}{}", self.joint, s)
    }
}

pub fn enumerate_gt_modes<T: Real>(obj: &ArticulatedObject<T>) -> Vec<ModeId> {
    let mut modes = Vec::new();
    for (j, joint) in obj.joints.iter().enumerate() {
        if joint.value < joint.hi {
            modes.push(ModeId::new(j, Direction::Increase));
        }
        if joint.value > joint.lo {
            modes.push(ModeId::new(j, Direction::Decrease));
        }
    }
    modes
}

/// Success flag and mode of the largest joint change (relative to range).
pub fn classify_outcome<T: Real>(
    before: &ArticulatedObject<T>,
    after: &ArticulatedObject<T>,
) -> Result<(bool, Option<ModeId>)> {
    let same = before.joints.len() == after.joints.len()
        && before.links.len() == after.links.len()
        && before.joints.iter().zip(&after.joints).all(|(a, b)| {
            a.kind == b.kind && a.parent == b.parent && a.child == b.child && a.lo == b.lo && a.hi == b.hi
        });
    if !same {
        return Err(Error::invalid("classify_outcome", "objects differ in topology"));
    }
    let mut best: Option<(usize, T, T)> = None;
    for (j, (a, b)) in before.joints.iter().zip(&after.joints).enumerate() {
        let delta = b.value - a.value;
        let range = a.range();
        if range <= T::zero() || delta.abs() < T::c(0.1) * range {
            continue;
        }
        let rel = delta.abs() / range;
        if best.is_none_or(|(_, r, _)| rel > r) {
            best = Some((j, rel, delta));
        }
    }
    Ok(match best {
        Some((j, _, delta)) => {
            let dir = if delta > T::zero() { Direction::Increase } else { Direction::Decrease };
            (true, Some(ModeId::new(j, dir)))
        }
        None => (false, None),
    })
}

/// Handle style of a drawer front.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HandleStyle {
    Bar,
    Recessed,
}

/// Grasp region radius around bar handles.
pub const BAR_HANDLE_RADIUS: f64 = 0.12;
/// Grasp region radius around the full-width pull bar of a drawer.
pub const DRAWER_BAR_RADIUS: f64 = 0.2;
/// Grasp region radius of a recessed finger pull.
pub const RECESSED_HANDLE_RADIUS: f64 = 0.12;

struct Builder<T> {
    links: Vec<LinkGeometry<T>>,
    joints: Vec<JointSpec<T>>,
}

fn cuboid<T: Real>(center: [f64; 3], half: [f64; 3]) -> Shape<T> {
    Shape::Box {
        half: Vec3::c(half[0], half[1], half[2]),
        pose: Pose::translation(Vec3::c(center[0], center[1], center[2])),
    }
}

fn upright_cylinder<T: Real>(center: [f64; 3], radius: f64, half_height: f64) -> Shape<T> {
    Shape::Cylinder {
        radius: T::c(radius),
        half_height: T::c(half_height),
        pose: Pose::translation(Vec3::c(center[0], center[1], center[2])),
    }
}

fn handle<T: Real>(center: [f64; 3], radius: f64) -> Option<HandleRegion<T>> {
    Some(HandleRegion {
        center: Vec3::c(center[0], center[1], center[2]),
        radius: T::c(radius),
        grasp_normal: Vec3::unit_y(),
    })
}

impl<T: Real> Builder<T> {
    fn new(root: Vec<Shape<T>>) -> Self {
        Self {
            links: vec![LinkGeometry { name: "base".into(), shapes: root, handle: None }],
            joints: Vec::new(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn link(
        &mut self,
        name: &str,
        shapes: Vec<Shape<T>>,
        handle: Option<HandleRegion<T>>,
        kind: JointKind,
        axis: [f64; 3],
        anchor: [f64; 3],
        limits: (f64, f64),
    ) {
        let child = self.links.len();
        self.links.push(LinkGeometry { name: name.into(), shapes, handle });
        self.joints.push(JointSpec {
            kind,
            parent: 0,
            child,
            axis: Vec3::c(axis[0], axis[1], axis[2]),
            anchor: Vec3::c(anchor[0], anchor[1], anchor[2]),
            lo: T::c(limits.0),
            hi: T::c(limits.1),
            value: T::c(limits.0),
        });
    }

    fn finish(self, category: Category, seed: u64) -> ArticulatedObject<T> {
        ArticulatedObject { category, seed, base: Pose::identity(), links: self.links, joints: self.joints }
    }
}

fn drawer_cabinet<T: Real>(seed: u64, styles: [HandleStyle; 2]) -> ArticulatedObject<T> {
    let mut r = rng::stream(seed, "object/cabinet-prismatic", &[]);
    let w = r.random_range(0.50..0.62);
    let d = r.random_range(0.34..0.42);
    let h = r.random_range(0.50..0.60);
    let bar_half = r.random_range(0.08..0.12);
    let y0 = -d / 2.0;
    let mut b = Builder::new(vec![cuboid([0.0, 0.0, h / 2.0], [w / 2.0, d / 2.0, h / 2.0])]);
    let dh = (h - 0.06) / 2.0;
    for (i, style) in styles.into_iter().enumerate() {
        let zc = h - 0.03 - dh / 2.0 - i as f64 * dh;
        let mut shapes = vec![
            cuboid([0.0, y0 - 0.015, zc], [w / 2.0 - 0.03, 0.015, dh / 2.0 - 0.01]),
            cuboid([0.0, y0 + 0.4 * d, zc], [w / 2.0 - 0.05, 0.4 * d, dh / 2.0 - 0.03]),
        ];
        let grip = match style {
            HandleStyle::Bar => {
                let c = [0.0, y0 - 0.045, zc];
                shapes.push(cuboid(c, [bar_half, 0.015, 0.012]));
                handle(c, DRAWER_BAR_RADIUS)
            }
            HandleStyle::Recessed => {
                handle([0.0, y0 - 0.03, zc + dh / 2.0 - 0.1], RECESSED_HANDLE_RADIUS)
            }
        };
        b.link(
            &format!("drawer{i}"),
            shapes,
            grip,
            JointKind::Prismatic,
            [0.0, -1.0, 0.0],
            [0.0, y0, zc],
            (0.0, 0.25),
        );
    }
    b.finish(Category::CabinetPrismatic, seed)
}

/// Hinged panels on the front face; `hinges` gives (hinge x, free-edge
/// direction, z center, half height, limit) per panel.
fn hinged_doors<T: Real>(
    b: &mut Builder<T>,
    y0: f64,
    door_w: f64,
    hinges: &[(f64, f64, f64, f64, f64)],
) {
    for (i, &(hx, side, zc, hh, hi)) in hinges.iter().enumerate() {
        let xc = hx + side * door_w / 2.0;
        let bar = [hx + side * (door_w - 0.05), y0 - 0.045, zc];
        let shapes = vec![
            cuboid([xc, y0 - 0.015, zc], [door_w / 2.0 - 0.005, 0.015, hh]),
            cuboid(bar, [0.012, 0.015, hh.min(0.2) * 0.5]),
        ];
        // Opening swings the free edge toward -y.
        let axis = [0.0, 0.0, -side];
        b.link(
            &format!("door{i}"),
            shapes,
            handle(bar, BAR_HANDLE_RADIUS),
            JointKind::Revolute,
            axis,
            [hx, y0 - 0.03, zc],
            (0.0, hi),
        );
    }
}

fn door_cabinet<T: Real>(seed: u64) -> ArticulatedObject<T> {
    let mut r = rng::stream(seed, "object/cabinet-revolute", &[]);
    let w = r.random_range(0.50..0.60);
    let d = r.random_range(0.34..0.40);
    let h = r.random_range(0.50..0.60);
    let y0 = -d / 2.0;
    let mut b = Builder::new(vec![cuboid([0.0, 0.0, h / 2.0], [w / 2.0, d / 2.0, h / 2.0])]);
    let hh = h / 2.0 - 0.03;
    hinged_doors(
        &mut b,
        y0,
        w / 2.0,
        &[(-w / 2.0, 1.0, h / 2.0, hh, 1.4), (w / 2.0, -1.0, h / 2.0, hh, 1.4)],
    );
    b.finish(Category::CabinetRevolute, seed)
}

fn fridge<T: Real>(seed: u64) -> ArticulatedObject<T> {
    let mut r = rng::stream(seed, "object/fridge", &[]);
    let w = r.random_range(0.40..0.46);
    let d = r.random_range(0.34..0.40);
    let h = r.random_range(0.85..0.95);
    let split = r.random_range(0.32..0.40) * h;
    let y0 = -d / 2.0;
    let mut b = Builder::new(vec![cuboid([0.0, 0.0, h / 2.0], [w / 2.0, d / 2.0, h / 2.0])]);
    let top_hh = split / 2.0 - 0.015;
    let low_hh = (h - split) / 2.0 - 0.015;
    hinged_doors(
        &mut b,
        y0,
        w,
        &[
            (-w / 2.0, 1.0, h - split / 2.0, top_hh, 1.2),
            (-w / 2.0, 1.0, (h - split) / 2.0, low_hh, 1.2),
        ],
    );
    b.finish(Category::Fridge, seed)
}

fn faucet<T: Real>(seed: u64) -> ArticulatedObject<T> {
    let mut r = rng::stream(seed, "object/faucet", &[]);
    let base_r = r.random_range(0.05..0.07);
    let base_h = r.random_range(0.26..0.32);
    let spout = r.random_range(0.14..0.20);
    let lever = r.random_range(0.16..0.22);
    let mut b = Builder::new(vec![
        upright_cylinder([0.0, 0.0, base_h / 2.0], base_r, base_h / 2.0),
        cuboid([0.0, -spout / 2.0, base_h - 0.04], [0.025, spout / 2.0, 0.025]),
    ]);
    let zl = base_h + 0.03;
    let tip = [0.0, -lever + 0.02, zl];
    b.link(
        "lever",
        vec![
            upright_cylinder([0.0, 0.0, base_h + 0.015], 0.03, 0.015),
            cuboid([0.0, -lever / 2.0 + 0.02, zl], [0.018, lever / 2.0, 0.018]),
        ],
        Some(HandleRegion {
            center: Vec3::c(tip[0], tip[1], tip[2]),
            radius: T::c(0.08),
            grasp_normal: -Vec3::unit_z(),
        }),
        JointKind::Revolute,
        [0.0, 0.0, 1.0],
        [0.0, 0.0, zl],
        (-0.8, 0.8),
    );
    b.finish(Category::Faucet, seed)
}

fn switch<T: Real>(seed: u64) -> ArticulatedObject<T> {
    let mut r = rng::stream(seed, "object/switch", &[]);
    let pw = r.random_range(0.14..0.18);
    let ph = r.random_range(0.18..0.24);
    let zc = 0.3;
    let mut b = Builder::new(vec![cuboid([0.0, 0.0, zc], [pw + 0.06, 0.02, ph + 0.06])]);
    b.link(
        "rocker",
        vec![cuboid([0.0, -0.045, zc], [pw, 0.025, ph])],
        None,
        JointKind::Revolute,
        [1.0, 0.0, 0.0],
        [0.0, -0.03, zc],
        (-0.3, 0.3),
    );
    b.finish(Category::Switch, seed)
}

fn window<T: Real>(seed: u64) -> ArticulatedObject<T> {
    let mut r = rng::stream(seed, "object/window", &[]);
    let w = r.random_range(0.60..0.72);
    let h = r.random_range(0.50..0.62);
    let t = 0.04;
    let (iw, ih) = (w - 2.0 * t, h - 2.0 * t);
    let zc = h / 2.0;
    let mut b = Builder::new(vec![
        cuboid([0.0, 0.0, t / 2.0], [w / 2.0, 0.03, t / 2.0]),
        cuboid([0.0, 0.0, h - t / 2.0], [w / 2.0, 0.03, t / 2.0]),
        cuboid([-w / 2.0 + t / 2.0, 0.0, zc], [t / 2.0, 0.03, ih / 2.0]),
        cuboid([w / 2.0 - t / 2.0, 0.0, zc], [t / 2.0, 0.03, ih / 2.0]),
        cuboid([iw / 4.0, 0.012, zc], [iw / 4.0, 0.01, ih / 2.0]),
    ]);
    let bar = [-iw / 2.0 + 0.05, -0.035, zc];
    b.link(
        "sash",
        vec![
            cuboid([-iw / 4.0, -0.012, zc], [iw / 4.0, 0.01, ih / 2.0]),
            cuboid(bar, [0.012, 0.013, 0.08]),
        ],
        handle(bar, BAR_HANDLE_RADIUS),
        JointKind::Prismatic,
        [1.0, 0.0, 0.0],
        [-iw / 4.0, -0.012, zc],
        (0.0, iw / 2.0 - 0.03),
    );
    b.finish(Category::Window, seed)
}

fn set_state<T: Real>(obj: &mut ArticulatedObject<T>, fractions: &[T]) -> Result<()> {
    let n = obj.joints.len();
    if fractions.len() != n && fractions.len() != 1 {
        return Err(Error::invalid(
            "make_object",
            format!("{} has {n} joints but {} state fractions were given", obj.category, fractions.len()),
        ));
    }
    for (j, joint) in obj.joints.iter_mut().enumerate() {
        let f = fractions[if fractions.len() == 1 { 0 } else { j }];
        if !(T::zero() <= f && f <= T::one()) {
            return Err(Error::invalid("make_object", format!("state fraction {f} outside [0, 1]")));
        }
        joint.value = (joint.lo + f * joint.range()).min(joint.hi);
    }
    Ok(())
}

/// Deterministic object for `(category, seed)` with joints placed at
/// `lo + fraction * (hi - lo)`. A single fraction applies to every joint.
pub fn make_object<T: Real>(category: Category, seed: u64, fractions: &[T]) -> Result<ArticulatedObject<T>> {
    let mut obj = match category {
        Category::CabinetPrismatic => drawer_cabinet(seed, [HandleStyle::Bar, HandleStyle::Bar]),
        Category::CabinetRevolute => door_cabinet(seed),
        Category::Faucet => faucet(seed),
        Category::Switch => switch(seed),
        Category::Fridge => fridge(seed),
        Category::Window => window(seed),
    };
    set_state(&mut obj, fractions)?;
    Ok(obj)
}

pub fn make_object_named<T: Real>(name: &str, seed: u64, fractions: &[T]) -> Result<ArticulatedObject<T>> {
    make_object(name.parse()?, seed, fractions)
}

/// Two-drawer cabinet whose drawers carry the given handle styles.
pub fn make_drawer_cabinet<T: Real>(
    seed: u64,
    styles: [HandleStyle; 2],
    fractions: &[T],
) -> Result<ArticulatedObject<T>> {
    let mut obj = drawer_cabinet(seed, styles);
    set_state(&mut obj, fractions)?;
    Ok(obj)
}
