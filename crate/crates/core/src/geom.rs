//! Small fixed-size vector, quaternion and rigid-transform types.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T> From<[T; 3]> for Vec3<T> {
    fn from([x, y, z]: [T; 3]) -> Self {
        Self { x, y, z }
    }
}

impl<T> From<Vec3<T>> for [T; 3] {
    fn from(v: Vec3<T>) -> Self {
        [v.x, v.y, v.z]
    }
}

impl<T: Serialize> Serialize for Vec3<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [&self.x, &self.y, &self.z].serialize(s)
    }
}

impl<'de, T: Deserialize<'de>> Deserialize<'de> for Vec3<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        <[T; 3]>::deserialize(d).map(Self::from)
    }
}

impl<T: Real> Vec3<T> {
    pub const fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn zero() -> Self {
        Self::splat(T::zero())
    }

    pub fn splat(v: T) -> Self {
        Self::new(v, v, v)
    }

    pub fn unit_x() -> Self {
        Self::new(T::one(), T::zero(), T::zero())
    }

    pub fn unit_y() -> Self {
        Self::new(T::zero(), T::one(), T::zero())
    }

    pub fn unit_z() -> Self {
        Self::new(T::zero(), T::zero(), T::one())
    }

    /// Lossy conversion from `f64` components.
    pub fn c(x: f64, y: f64, z: f64) -> Self {
        Self::new(T::c(x), T::c(y), T::c(z))
    }

    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Self {
        self * (T::one() / self.norm())
    }

    pub fn abs(self) -> Self {
        Self::new(self.x.abs(), self.y.abs(), self.z.abs())
    }

    pub fn max(self, o: Self) -> Self {
        Self::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    pub fn min(self, o: Self) -> Self {
        Self::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn max_elem(self) -> T {
        self.x.max(self.y).max(self.z)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    pub fn cast<U: Real>(self) -> Vec3<U> {
        Vec3::new(U::c(self.x.as_f64()), U::c(self.y.as_f64()), U::c(self.z.as_f64()))
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> AddAssign for Vec3<T> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

/// Quaternion `w + xi + yj + zk`. Rotations use unit quaternions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quat<T> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T> From<[T; 4]> for Quat<T> {
    fn from([w, x, y, z]: [T; 4]) -> Self {
        Self { w, x, y, z }
    }
}

impl<T> From<Quat<T>> for [T; 4] {
    fn from(q: Quat<T>) -> Self {
        [q.w, q.x, q.y, q.z]
    }
}

impl<T: Serialize> Serialize for Quat<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [&self.w, &self.x, &self.y, &self.z].serialize(s)
    }
}

impl<'de, T: Deserialize<'de>> Deserialize<'de> for Quat<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        <[T; 4]>::deserialize(d).map(Self::from)
    }
}

impl<T: Real> Default for Quat<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> Quat<T> {
    pub const fn new(w: T, x: T, y: T, z: T) -> Self {
        Self { w, x, y, z }
    }

    pub fn identity() -> Self {
        Self::new(T::one(), T::zero(), T::zero(), T::zero())
    }

    /// Rotation by `angle` radians about the unit vector `axis`.
    pub fn from_axis_angle(axis: Vec3<T>, angle: T) -> Self {
        let h = angle * T::c(0.5);
        let s = h.sin();
        Self::new(h.cos(), axis.x * s, axis.y * s, axis.z * s)
    }

    /// From a rotation matrix given by its columns.
    pub fn from_columns(c0: Vec3<T>, c1: Vec3<T>, c2: Vec3<T>) -> Self {
        let (m00, m11, m22) = (c0.x, c1.y, c2.z);
        let one = T::one();
        let quarter = T::c(0.25);
        let trace = m00 + m11 + m22;
        let q = if trace > T::zero() {
            let s = (trace + one).sqrt() * T::c(2.0);
            Self::new(quarter * s, (c1.z - c2.y) / s, (c2.x - c0.z) / s, (c0.y - c1.x) / s)
        } else if m00 > m11 && m00 > m22 {
            let s = (one + m00 - m11 - m22).sqrt() * T::c(2.0);
            Self::new((c1.z - c2.y) / s, quarter * s, (c1.x + c0.y) / s, (c2.x + c0.z) / s)
        } else if m11 > m22 {
            let s = (one + m11 - m00 - m22).sqrt() * T::c(2.0);
            Self::new((c2.x - c0.z) / s, (c1.x + c0.y) / s, quarter * s, (c2.y + c1.z) / s)
        } else {
            let s = (one + m22 - m00 - m11).sqrt() * T::c(2.0);
            Self::new((c0.y - c1.x) / s, (c2.x + c0.z) / s, (c2.y + c1.z) / s, quarter * s)
        };
        q.normalized()
    }

    pub fn dot(self, o: Self) -> T {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Self {
        let n = T::one() / self.norm();
        Self::new(self.w * n, self.x * n, self.y * n, self.z * n)
    }

    pub fn conj(self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn neg(self) -> Self {
        Self::new(-self.w, -self.x, -self.y, -self.z)
    }

    /// Representative with `w >= 0` (the same rotation).
    pub fn canonical(self) -> Self {
        if self.w < T::zero() {
            self.neg()
        } else {
            self
        }
    }

    pub fn rotate(self, v: Vec3<T>) -> Vec3<T> {
        let u = Vec3::new(self.x, self.y, self.z);
        let two = T::c(2.0);
        let t = u.cross(v) * two;
        v + t * self.w + u.cross(t)
    }

    pub fn to_array(self) -> [T; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn is_unit(self, tol: T) -> bool {
        (self.norm() - T::one()).abs() <= tol
    }
}

impl<T: Real> Mul for Quat<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }
}

/// Rigid transform `p -> rot * p + trans`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose<T> {
    pub rot: Quat<T>,
    pub trans: Vec3<T>,
}

impl<T: Real> Default for Pose<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> Pose<T> {
    pub fn new(rot: Quat<T>, trans: Vec3<T>) -> Self {
        Self { rot, trans }
    }

    pub fn identity() -> Self {
        Self::new(Quat::identity(), Vec3::zero())
    }

    pub fn translation(t: Vec3<T>) -> Self {
        Self::new(Quat::identity(), t)
    }

    /// Rotation by `angle` about the line through `anchor` along `axis`.
    pub fn rotation_about(axis: Vec3<T>, anchor: Vec3<T>, angle: T) -> Self {
        let rot = Quat::from_axis_angle(axis, angle);
        Self::new(rot, anchor - rot.rotate(anchor))
    }

    pub fn apply(&self, p: Vec3<T>) -> Vec3<T> {
        self.rot.rotate(p) + self.trans
    }

    pub fn apply_vec(&self, v: Vec3<T>) -> Vec3<T> {
        self.rot.rotate(v)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self::new(self.rot * other.rot, self.apply(other.trans))
    }

    pub fn inverse(&self) -> Self {
        let inv = self.rot.conj();
        Self::new(inv, -inv.rotate(self.trans))
    }
}

/// Row-major 3x3 rotation matrix with translation, for hot loops.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine<T> {
    pub m: [[T; 3]; 3],
    pub t: Vec3<T>,
}

impl<T: Real> Affine<T> {
    pub fn from_pose(p: &Pose<T>) -> Self {
        let c0 = p.rot.rotate(Vec3::unit_x());
        let c1 = p.rot.rotate(Vec3::unit_y());
        let c2 = p.rot.rotate(Vec3::unit_z());
        Self {
            m: [[c0.x, c1.x, c2.x], [c0.y, c1.y, c2.y], [c0.z, c1.z, c2.z]],
            t: p.trans,
        }
    }

    #[inline]
    pub fn apply(&self, p: Vec3<T>) -> Vec3<T> {
        let m = &self.m;
        Vec3::new(
            m[0][0] * p.x + m[0][1] * p.y + m[0][2] * p.z + self.t.x,
            m[1][0] * p.x + m[1][1] * p.y + m[1][2] * p.z + self.t.y,
            m[2][0] * p.x + m[2][1] * p.y + m[2][2] * p.z + self.t.z,
        )
    }
}
