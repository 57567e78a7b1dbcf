//! Small fixed-size vector helpers used by every module.
//!
//! Director values, gradients and far-field coefficients are plain `[f64; 3]`
//! so hot loops stay allocation-free and auto-vectorize.

pub type Vec3 = [f64; 3];

pub const ZERO: Vec3 = [0.0, 0.0, 0.0];
pub const EX: Vec3 = [1.0, 0.0, 0.0];
pub const EY: Vec3 = [0.0, 1.0, 0.0];
pub const EZ: Vec3 = [0.0, 0.0, 1.0];

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm2(a: Vec3) -> f64 {
    dot(a, a)
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    norm2(a).sqrt()
}

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// a + s*b, the only fused form the hot loops need.
#[inline]
pub fn axpy(a: Vec3, s: f64, b: Vec3) -> Vec3 {
    [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]]
}

/// None when |a| is too small to define a direction.
#[inline]
pub fn normalize(a: Vec3) -> Option<Vec3> {
    let n = norm(a);
    if n < 1e-300 {
        None
    } else {
        Some(scale(a, 1.0 / n))
    }
}

/// Component of `a` orthogonal to the unit vector `u`.
#[inline]
pub fn reject(a: Vec3, u: Vec3) -> Vec3 {
    axpy(a, -dot(a, u), u)
}

/// Deterministic orthonormal tangent pair (e_a, e_b) with e_a × e_b = u.
/// Branches on the smallest component so the pair is well-conditioned.
pub fn tangent_basis(u: Vec3) -> (Vec3, Vec3) {
    let pick = if u[0].abs() <= u[1].abs() && u[0].abs() <= u[2].abs() {
        EX
    } else if u[1].abs() <= u[2].abs() {
        EY
    } else {
        EZ
    };
    let ea = normalize(reject(pick, u)).expect("tangent seed parallel to axis");
    let eb = cross(u, ea);
    (ea, eb)
}

/// Rodrigues rotation of `v` by `angle` about the unit `axis`.
pub fn rotate_about(v: Vec3, axis: Vec3, angle: f64) -> Vec3 {
    let (s, c) = angle.sin_cos();
    let k = cross(axis, v);
    let a = axpy(scale(v, c), s, k);
    axpy(a, dot(axis, v) * (1.0 - c), axis)
}

/// 3×3 matrix-vector product with `m` in row-major layout.
#[inline]
pub fn mat_vec(m: &[[f64; 3]; 3], v: Vec3) -> Vec3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

/// Neumaier compensated accumulator. Energy sums over 10^5..10^6 nodes need
/// the extra ~1e-16 relative accuracy for finite-difference gradient checks.
#[derive(Clone, Copy, Debug, Default)]
pub struct Accumulator {
    sum: f64,
    comp: f64,
}

impl Accumulator {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Compensated sum of an iterator; the summation order is the iterator order,
/// so callers control determinism.
pub fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = Accumulator::new();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}
