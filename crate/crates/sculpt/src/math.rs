//! Small fixed-size vector/matrix helpers shared by the geometry modules.
//!
//! Everything here is plain `f64` arrays; the mesh pipeline never needs more
//! than 3-vectors, 3x3 rotations and 3x4 affine transforms.

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

/// Affine transform: rotation/scale part plus translation, acting as
/// `y = linear * x + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine3 {
    pub linear: Mat3,
    pub translation: Vec3,
}

pub const IDENTITY3: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

impl Affine3 {
    pub const IDENTITY: Affine3 = Affine3 {
        linear: IDENTITY3,
        translation: [0.0; 3],
    };

    pub fn new(linear: Mat3, translation: Vec3) -> Self {
        Affine3 {
            linear,
            translation,
        }
    }

    pub fn from_rotation_about(rot: Mat3, center: Vec3) -> Self {
        // y = R (x - c) + c
        let t = sub3(center, mat3_mul_vec(&rot, center));
        Affine3::new(rot, t)
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        add3(mat3_mul_vec(&self.linear, p), self.translation)
    }

    /// Composition: apply `other` first, then `self`.
    pub fn compose(&self, other: &Affine3) -> Affine3 {
        Affine3 {
            linear: mat3_mul(&self.linear, &other.linear),
            translation: add3(mat3_mul_vec(&self.linear, other.translation), self.translation),
        }
    }

    /// Inverse of the affine transform, or `None` when the linear part is
    /// singular (determinant magnitude below `eps`).
    pub fn inverse(&self, eps: f64) -> Option<Affine3> {
        let inv = mat3_inverse(&self.linear, eps)?;
        let t = mat3_mul_vec(&inv, self.translation);
        Some(Affine3 {
            linear: inv,
            translation: [-t[0], -t[1], -t[2]],
        })
    }

    /// Weighted blend of transforms, entrywise.
    pub fn blend(transforms: &[Affine3], weights: &[f64]) -> Affine3 {
        let mut linear = [[0.0; 3]; 3];
        let mut translation = [0.0; 3];
        for (tf, &w) in transforms.iter().zip(weights) {
            for r in 0..3 {
                for c in 0..3 {
                    linear[r][c] += w * tf.linear[r][c];
                }
                translation[r] += w * tf.translation[r];
            }
        }
        Affine3 {
            linear,
            translation,
        }
    }
}

pub fn add3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale3(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross3(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm3(a: Vec3) -> f64 {
    dot3(a, a).sqrt()
}

pub fn mat3_mul_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn mat3_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = a[r][0] * b[0][c] + a[r][1] * b[1][c] + a[r][2] * b[2][c];
        }
    }
    out
}

pub fn mat3_transpose(m: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = m[c][r];
        }
    }
    out
}

pub fn mat3_det(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

pub fn mat3_inverse(m: &Mat3, eps: f64) -> Option<Mat3> {
    let det = mat3_det(m);
    if det.abs() < eps {
        return None;
    }
    let inv_det = 1.0 / det;
    let mut out = [[0.0; 3]; 3];
    out[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_det;
    out[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det;
    out[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det;
    out[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_det;
    out[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det;
    out[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det;
    out[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_det;
    out[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det;
    out[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det;
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_inverse_roundtrip() {
        let rot = [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        let tf = Affine3::new(rot, [0.3, -1.2, 2.0]);
        let inv = tf.inverse(1e-12).unwrap();
        let p = [0.7, 0.1, -0.4];
        let q = inv.apply(tf.apply(p));
        for i in 0..3 {
            assert!((q[i] - p[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_inverse_is_none() {
        let m = [[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(Affine3::new(m, [0.0; 3]).inverse(1e-12).is_none());
    }

    #[test]
    fn blend_of_identical_transforms_with_unit_weights() {
        let rot = [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        let tf = Affine3::new(rot, [1.0, 2.0, 3.0]);
        let blended = Affine3::blend(&[tf, tf, tf], &[0.2, 0.3, 0.5]);
        let p = [0.5, -0.5, 1.5];
        let a = blended.apply(p);
        let b = tf.apply(p);
        for i in 0..3 {
            assert!((a[i] - b[i]).abs() < 1e-12);
        }
    }
}
