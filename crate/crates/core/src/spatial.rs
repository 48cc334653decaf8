//! Spatial (6-D) vector algebra in Featherstone's conventions.
//!
//! Spatial vectors are stored as `[angular; linear]`. Whether a vector is a
//! motion (velocity, acceleration) or a force is tracked by usage: motion
//! vectors go through [`SpatialTransform::apply_motion`] and
//! [`cross_motion`], forces through [`SpatialTransform::apply_force`] and
//! [`cross_force`].
//!
//! Transforms are kept as a rotation/translation pair rather than a dense
//! 6×6 matrix; every application costs a handful of 3-D products.

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vec3<S> {
    pub x: S,
    pub y: S,
    pub z: S,
}

impl<S: Scalar> Vec3<S> {
    pub fn new(x: S, y: S, z: S) -> Self {
        Self { x, y, z }
    }

    pub fn zeros() -> Self {
        Self::new(S::zero(), S::zero(), S::zero())
    }

    pub fn from_f64(v: [f64; 3]) -> Self {
        Self::new(S::from_f64(v[0]), S::from_f64(v[1]), S::from_f64(v[2]))
    }

    pub fn to_f64(&self) -> [f64; 3] {
        [self.x.value(), self.y.value(), self.z.value()]
    }

    pub fn dot(&self, o: &Self) -> S {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(&self, o: &Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn scale(&self, s: S) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn norm(&self) -> S {
        self.dot(self).sqrt()
    }
}

impl<S: Scalar> Add for Vec3<S> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<S: Scalar> Sub for Vec3<S> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<S: Scalar> Neg for Vec3<S> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

/// Row-major 3×3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3<S> {
    pub m: [[S; 3]; 3],
}

impl<S: Scalar> Mat3<S> {
    pub fn identity() -> Self {
        let (o, z) = (S::one(), S::zero());
        Self {
            m: [[o, z, z], [z, o, z], [z, z, o]],
        }
    }

    pub fn zeros() -> Self {
        Self {
            m: [[S::zero(); 3]; 3],
        }
    }

    pub fn from_f64(m: [[f64; 3]; 3]) -> Self {
        Self {
            m: m.map(|row| row.map(S::from_f64)),
        }
    }

    pub fn to_f64(&self) -> [[f64; 3]; 3] {
        self.m.map(|row| row.map(|v| v.value()))
    }

    /// Skew-symmetric matrix with `skew(a) * b == a × b`.
    pub fn skew(a: &Vec3<S>) -> Self {
        let z = S::zero();
        Self {
            m: [[z, -a.z, a.y], [a.z, z, -a.x], [-a.y, a.x, z]],
        }
    }

    pub fn transpose(&self) -> Self {
        let m = &self.m;
        Self {
            m: [
                [m[0][0], m[1][0], m[2][0]],
                [m[0][1], m[1][1], m[2][1]],
                [m[0][2], m[1][2], m[2][2]],
            ],
        }
    }

    pub fn mul_vec(&self, v: &Vec3<S>) -> Vec3<S> {
        let m = &self.m;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    /// `selfᵀ * v` without forming the transpose.
    pub fn tr_mul_vec(&self, v: &Vec3<S>) -> Vec3<S> {
        let m = &self.m;
        Vec3::new(
            m[0][0] * v.x + m[1][0] * v.y + m[2][0] * v.z,
            m[0][1] * v.x + m[1][1] * v.y + m[2][1] * v.z,
            m[0][2] * v.x + m[1][2] * v.y + m[2][2] * v.z,
        )
    }

    pub fn mul_mat(&self, o: &Self) -> Self {
        let mut out = Self::zeros();
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] =
                    self.m[i][0] * o.m[0][j] + self.m[i][1] * o.m[1][j] + self.m[i][2] * o.m[2][j];
            }
        }
        out
    }

    pub fn add_mat(&self, o: &Self) -> Self {
        let mut out = *self;
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] += o.m[i][j];
            }
        }
        out
    }

    pub fn scale(&self, s: S) -> Self {
        Self {
            m: self.m.map(|row| row.map(|v| v * s)),
        }
    }
}

/// Six-component spatial vector, `[angular; linear]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpatialVec<S> {
    pub ang: Vec3<S>,
    pub lin: Vec3<S>,
}

impl<S: Scalar> SpatialVec<S> {
    pub fn new(ang: Vec3<S>, lin: Vec3<S>) -> Self {
        Self { ang, lin }
    }

    pub fn zeros() -> Self {
        Self::new(Vec3::zeros(), Vec3::zeros())
    }

    pub fn from_array(a: [S; 6]) -> Self {
        Self::new(Vec3::new(a[0], a[1], a[2]), Vec3::new(a[3], a[4], a[5]))
    }

    pub fn to_array(&self) -> [S; 6] {
        [
            self.ang.x, self.ang.y, self.ang.z, self.lin.x, self.lin.y, self.lin.z,
        ]
    }

    pub fn from_f64(a: [f64; 6]) -> Self {
        Self::from_array(a.map(S::from_f64))
    }

    pub fn to_f64(&self) -> [f64; 6] {
        self.to_array().map(|v| v.value())
    }

    pub fn dot(&self, o: &Self) -> S {
        self.ang.dot(&o.ang) + self.lin.dot(&o.lin)
    }

    pub fn scale(&self, s: S) -> Self {
        Self::new(self.ang.scale(s), self.lin.scale(s))
    }
}

impl<S: Scalar> Add for SpatialVec<S> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.ang + o.ang, self.lin + o.lin)
    }
}

impl<S: Scalar> AddAssign for SpatialVec<S> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<S: Scalar> Sub for SpatialVec<S> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.ang - o.ang, self.lin - o.lin)
    }
}

impl<S: Scalar> SubAssign for SpatialVec<S> {
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<S: Scalar> Neg for SpatialVec<S> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.ang, -self.lin)
    }
}

/// Motion cross product `v × m`.
pub fn cross_motion<S: Scalar>(v: &SpatialVec<S>, m: &SpatialVec<S>) -> SpatialVec<S> {
    SpatialVec::new(
        v.ang.cross(&m.ang),
        v.ang.cross(&m.lin) + v.lin.cross(&m.ang),
    )
}

/// Force cross product `v ×* f = -(v ×)ᵀ f`.
pub fn cross_force<S: Scalar>(v: &SpatialVec<S>, f: &SpatialVec<S>) -> SpatialVec<S> {
    SpatialVec::new(
        v.ang.cross(&f.ang) + v.lin.cross(&f.lin),
        v.ang.cross(&f.lin),
    )
}

/// Plücker coordinate transform from frame A to frame B.
///
/// `rot` maps A coordinates to B coordinates and `trans` is the position of
/// B's origin expressed in A.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpatialTransform<S> {
    pub rot: Mat3<S>,
    pub trans: Vec3<S>,
}

impl<S: Scalar> SpatialTransform<S> {
    pub fn identity() -> Self {
        Self {
            rot: Mat3::identity(),
            trans: Vec3::zeros(),
        }
    }

    pub fn new(rot: Mat3<S>, trans: Vec3<S>) -> Self {
        Self { rot, trans }
    }

    /// Pure translation to a frame whose origin sits at `r`.
    pub fn translation(r: Vec3<S>) -> Self {
        Self::new(Mat3::identity(), r)
    }

    /// Coordinate rotation by `angle` about the unit `axis`: the transform
    /// into a frame that is rotated by `angle` relative to the current one.
    pub fn rotation(axis: &Vec3<S>, angle: S) -> Self {
        let (s, c) = angle.sin_cos();
        let one_c = S::one() - c;
        let a = axis;
        // cos·1 + (1 - cos)·aaᵀ - sin·[a]×
        let mut e = Mat3::zeros();
        let av = [a.x, a.y, a.z];
        for i in 0..3 {
            for j in 0..3 {
                e.m[i][j] = one_c * av[i] * av[j];
            }
            e.m[i][i] += c;
        }
        e.m[0][1] += s * a.z;
        e.m[0][2] -= s * a.y;
        e.m[1][0] -= s * a.z;
        e.m[1][2] += s * a.x;
        e.m[2][0] += s * a.y;
        e.m[2][1] -= s * a.x;
        Self::new(e, Vec3::zeros())
    }

    pub fn from_f64(rot: [[f64; 3]; 3], trans: [f64; 3]) -> Self {
        Self::new(Mat3::from_f64(rot), Vec3::from_f64(trans))
    }

    pub fn lift<T: Scalar>(&self) -> SpatialTransform<T> {
        SpatialTransform::from_f64(self.rot.to_f64(), self.trans.to_f64())
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn compose(&self, first: &Self) -> Self {
        Self::new(
            self.rot.mul_mat(&first.rot),
            first.trans + first.rot.tr_mul_vec(&self.trans),
        )
    }

    pub fn inverse(&self) -> Self {
        Self::new(self.rot.transpose(), -self.rot.mul_vec(&self.trans))
    }

    pub fn apply_motion(&self, m: &SpatialVec<S>) -> SpatialVec<S> {
        let ang = self.rot.mul_vec(&m.ang);
        let lin = self.rot.mul_vec(&(m.lin - self.trans.cross(&m.ang)));
        SpatialVec::new(ang, lin)
    }

    pub fn apply_force(&self, f: &SpatialVec<S>) -> SpatialVec<S> {
        let ang = self.rot.mul_vec(&(f.ang - self.trans.cross(&f.lin)));
        let lin = self.rot.mul_vec(&f.lin);
        SpatialVec::new(ang, lin)
    }

    /// `Xᵀ f`: carries a force expressed in B back into A.
    pub fn apply_transpose_force(&self, f: &SpatialVec<S>) -> SpatialVec<S> {
        let lin = self.rot.tr_mul_vec(&f.lin);
        let ang = self.rot.tr_mul_vec(&f.ang) + self.trans.cross(&lin);
        SpatialVec::new(ang, lin)
    }

    /// `X⁻¹ m`: carries a motion expressed in B back into A.
    pub fn apply_inverse_motion(&self, m: &SpatialVec<S>) -> SpatialVec<S> {
        let ang = self.rot.tr_mul_vec(&m.ang);
        let lin = self.rot.tr_mul_vec(&m.lin) + self.trans.cross(&ang);
        SpatialVec::new(ang, lin)
    }

    /// Rigid-body inertia expressed in A, re-expressed in B (`X* I X⁻¹`).
    pub fn apply_inertia(&self, inertia: &SpatialInertia<S>) -> SpatialInertia<S> {
        let m = inertia.mass;
        let r = &self.trans;
        let h = inertia.h;
        let h_shift = h - r.scale(m);
        let rx = Mat3::skew(r);
        let about_b = inertia
            .ibar
            .add_mat(&rx.mul_mat(&Mat3::skew(&h)))
            .add_mat(&Mat3::skew(&h_shift).mul_mat(&rx));
        let e = &self.rot;
        SpatialInertia {
            mass: m,
            h: e.mul_vec(&h_shift),
            ibar: e.mul_mat(&about_b).mul_mat(&e.transpose()),
        }
    }

    /// `Xᵀ I X` for a symmetric 6×6 inertia expressed in B; the result is the
    /// same inertia expressed in A.
    pub fn congruence_transpose(&self, inertia: &Mat6<S>) -> Mat6<S> {
        // Y = Xᵀ I column by column; the result is Xᵀ Yᵀ = Xᵀ (I X).
        let mut y = Mat6::zeros();
        for c in 0..6 {
            let col = self.apply_transpose_force(&inertia.col(c));
            y.set_col(c, &col);
        }
        let mut out = Mat6::zeros();
        for c in 0..6 {
            let col = self.apply_transpose_force(&y.row(c));
            out.set_col(c, &col);
        }
        out
    }
}

/// Rigid-body spatial inertia about a frame origin, stored compactly as
/// mass, first mass moment `h = m·c`, and rotational inertia about the origin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpatialInertia<S> {
    pub mass: S,
    pub h: Vec3<S>,
    pub ibar: Mat3<S>,
}

impl<S: Scalar> SpatialInertia<S> {
    /// From mass, centre of mass and rotational inertia about the centre of mass.
    pub fn from_com(mass: S, com: Vec3<S>, inertia_com: Mat3<S>) -> Self {
        let cx = Mat3::skew(&com);
        // Ī = I_c + m·cx·cxᵀ
        let ibar = inertia_com.add_mat(&cx.mul_mat(&cx.transpose()).scale(mass));
        Self {
            mass,
            h: com.scale(mass),
            ibar,
        }
    }

    pub fn com(&self) -> Vec3<S> {
        self.h.scale(S::one() / self.mass)
    }

    /// Rotational inertia about the centre of mass.
    pub fn inertia_com(&self) -> Mat3<S> {
        let cx = Mat3::skew(&self.com());
        self.ibar
            .add_mat(&cx.mul_mat(&cx).scale(self.mass))
    }

    pub fn lift<T: Scalar>(&self) -> SpatialInertia<T> {
        SpatialInertia {
            mass: T::from_f64(self.mass.value()),
            h: Vec3::from_f64(self.h.to_f64()),
            ibar: Mat3::from_f64(self.ibar.to_f64()),
        }
    }

    /// Momentum `I v`.
    pub fn mul_motion(&self, v: &SpatialVec<S>) -> SpatialVec<S> {
        SpatialVec::new(
            self.ibar.mul_vec(&v.ang) + self.h.cross(&v.lin),
            v.lin.scale(self.mass) - self.h.cross(&v.ang),
        )
    }

    pub fn to_mat6(&self) -> Mat6<S> {
        let hx = Mat3::skew(&self.h);
        let mut out = Mat6::zeros();
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] = self.ibar.m[i][j];
                out.m[i][j + 3] = hx.m[i][j];
                out.m[i + 3][j] = hx.m[j][i];
            }
            out.m[i + 3][i + 3] = self.mass;
        }
        out
    }
}

/// Dense 6×6 matrix, used for articulated-body and composite inertias.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat6<S> {
    pub m: [[S; 6]; 6],
}

impl<S: Scalar> Mat6<S> {
    pub fn zeros() -> Self {
        Self {
            m: [[S::zero(); 6]; 6],
        }
    }

    pub fn col(&self, c: usize) -> SpatialVec<S> {
        SpatialVec::from_array(std::array::from_fn(|r| self.m[r][c]))
    }

    pub fn row(&self, r: usize) -> SpatialVec<S> {
        SpatialVec::from_array(self.m[r])
    }

    pub fn set_col(&mut self, c: usize, v: &SpatialVec<S>) {
        for (r, x) in v.to_array().into_iter().enumerate() {
            self.m[r][c] = x;
        }
    }

    pub fn mul_vec(&self, v: &SpatialVec<S>) -> SpatialVec<S> {
        let a = v.to_array();
        SpatialVec::from_array(std::array::from_fn(|r| {
            let mut acc = S::zero();
            for (c, &x) in a.iter().enumerate() {
                acc += self.m[r][c] * x;
            }
            acc
        }))
    }

    /// `self - u uᵀ / d`
    pub fn sub_outer(&self, u: &SpatialVec<S>, d: S) -> Self {
        let a = u.to_array();
        let scaled: [S; 6] = std::array::from_fn(|i| a[i] / d);
        let mut out = *self;
        for (i, row) in out.m.iter_mut().enumerate() {
            for (j, x) in row.iter_mut().enumerate() {
                *x -= scaled[i] * a[j];
            }
        }
        out
    }
}

impl<S: Scalar> Add for Mat6<S> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut out = self;
        for i in 0..6 {
            for j in 0..6 {
                out.m[i][j] += o.m[i][j];
            }
        }
        out
    }
}

impl<S: Scalar> AddAssign for Mat6<S> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<S: Scalar> Mul<SpatialVec<S>> for Mat6<S> {
    type Output = SpatialVec<S>;
    fn mul(self, v: SpatialVec<S>) -> SpatialVec<S> {
        self.mul_vec(&v)
    }
}
