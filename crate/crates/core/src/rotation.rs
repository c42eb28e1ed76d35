//! Angle-axis rotation helpers for the scalar (non-differentiated) path.

use crate::scalar::Real;

/// Squared rotation angle below which the Rodrigues formula is replaced by
/// its second-order Taylor expansion.
pub const SMALL_ANGLE_SQ: f64 = 1e-12;

#[inline]
pub fn cross<T: Real>(a: &[T; 3], b: &[T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn dot3<T: Real>(a: &[T; 3], b: &[T; 3]) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Rotates `x` by the angle-axis vector `aa` (Rodrigues formula).
pub fn rotate_point<T: Real>(aa: &[T; 3], x: &[T; 3]) -> [T; 3] {
    let theta_sq = dot3(aa, aa);
    if theta_sq.as_f64() < SMALL_ANGLE_SQ {
        let wx = cross(aa, x);
        let wwx = cross(aa, &wx);
        let half = T::of(0.5);
        return [
            x[0] + wx[0] + half * wwx[0],
            x[1] + wx[1] + half * wwx[1],
            x[2] + wx[2] + half * wwx[2],
        ];
    }
    let theta = theta_sq.sqrt();
    let (s, c) = theta.sin_cos();
    let w = [aa[0] / theta, aa[1] / theta, aa[2] / theta];
    let wx = cross(&w, x);
    let k = dot3(&w, x) * (T::one() - c);
    [
        x[0] * c + wx[0] * s + w[0] * k,
        x[1] * c + wx[1] * s + w[1] * k,
        x[2] * c + wx[2] * s + w[2] * k,
    ]
}

/// Row-major rotation matrix of an angle-axis vector.
pub fn angle_axis_to_matrix(aa: &[f64; 3]) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    for col in 0..3 {
        let mut e = [0.0; 3];
        e[col] = 1.0;
        let r = rotate_point(aa, &e);
        for row in 0..3 {
            m[row][col] = r[row];
        }
    }
    m
}

/// Angle-axis vector of a proper rotation matrix (row-major), via the unit
/// quaternion so the angle near pi is handled.
pub fn matrix_to_angle_axis(m: &[[f64; 3]; 3]) -> [f64; 3] {
    let trace = m[0][0] + m[1][1] + m[2][2];
    let (w, x, y, z);
    if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        w = 0.25 * s;
        x = (m[2][1] - m[1][2]) / s;
        y = (m[0][2] - m[2][0]) / s;
        z = (m[1][0] - m[0][1]) / s;
    } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
        let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
        w = (m[2][1] - m[1][2]) / s;
        x = 0.25 * s;
        y = (m[0][1] + m[1][0]) / s;
        z = (m[0][2] + m[2][0]) / s;
    } else if m[1][1] > m[2][2] {
        let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
        w = (m[0][2] - m[2][0]) / s;
        x = (m[0][1] + m[1][0]) / s;
        y = 0.25 * s;
        z = (m[1][2] + m[2][1]) / s;
    } else {
        let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
        w = (m[1][0] - m[0][1]) / s;
        x = (m[0][2] + m[2][0]) / s;
        y = (m[1][2] + m[2][1]) / s;
        z = 0.25 * s;
    }
    // keep the scalar part non-negative so the angle lands in [0, pi]
    let (w, x, y, z) = if w < 0.0 {
        (-w, -x, -y, -z)
    } else {
        (w, x, y, z)
    };
    let sin_half = (x * x + y * y + z * z).sqrt();
    if sin_half < 1e-15 {
        return [2.0 * x, 2.0 * y, 2.0 * z];
    }
    let angle = 2.0 * sin_half.atan2(w);
    let k = angle / sin_half;
    [x * k, y * k, z * k]
}
