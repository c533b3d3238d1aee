//! Minimal fixed-size matrix helpers for the four-state plant and the
//! two-channel detector. Row-major arrays; no allocation.

use crate::scalar::Scalar;

pub type Vec2<S> = [S; 2];
pub type Vec4<S> = [S; 4];
pub type Mat2<S> = [[S; 2]; 2];
pub type Mat4<S> = [[S; 4]; 4];
pub type Mat4x2<S> = [[S; 2]; 4];

pub fn mat4_mul_vec4<S: Scalar>(m: &Mat4<S>, v: &Vec4<S>) -> Vec4<S> {
    let mut out = [S::zero(); 4];
    for (r, row) in m.iter().enumerate() {
        let mut acc = S::zero();
        for (c, &mrc) in row.iter().enumerate() {
            acc += mrc * v[c];
        }
        out[r] = acc;
    }
    out
}

pub fn mat4x2_mul_vec2<S: Scalar>(m: &Mat4x2<S>, v: &Vec2<S>) -> Vec4<S> {
    let mut out = [S::zero(); 4];
    for (r, row) in m.iter().enumerate() {
        out[r] = row[0] * v[0] + row[1] * v[1];
    }
    out
}

pub fn mat2_mul_vec2<S: Scalar>(m: &Mat2<S>, v: &Vec2<S>) -> Vec2<S> {
    [
        m[0][0] * v[0] + m[0][1] * v[1],
        m[1][0] * v[0] + m[1][1] * v[1],
    ]
}

pub fn vec4_add<S: Scalar>(a: &Vec4<S>, b: &Vec4<S>) -> Vec4<S> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]]
}

pub fn vec2_sub<S: Scalar>(a: &Vec2<S>, b: &Vec2<S>) -> Vec2<S> {
    [a[0] - b[0], a[1] - b[1]]
}

/// Euclidean norm of a two-channel vector.
pub fn vec2_norm<S: Scalar>(v: &Vec2<S>) -> S {
    (v[0] * v[0] + v[1] * v[1]).sqrt()
}

/// Real parts of the eigenvalues of a 2x2 matrix, from the characteristic
/// polynomial. For a complex pair both entries hold `trace / 2`.
pub fn mat2_eigen_real_parts<S: Scalar>(m: &Mat2<S>) -> [S; 2] {
    let two = S::of(2.0);
    let four = S::of(4.0);
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = tr * tr - four * det;
    if disc >= S::zero() {
        let root = disc.sqrt();
        [(tr - root) / two, (tr + root) / two]
    } else {
        [tr / two, tr / two]
    }
}
