//! Small dense-vector helpers. Vectors are plain `f64` slices; matrices are
//! `nalgebra::DMatrix` and only show up inside [`crate::costs`].

use nalgebra::DMatrix;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `‖a‖_p` for `p ∈ [1, ∞]`.
pub fn norm_p(a: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    } else if p == 1.0 {
        a.iter().map(|v| v.abs()).sum()
    } else if p == 2.0 {
        norm2(a)
    } else {
        // scale by the max entry so |v|^p cannot overflow or flush to zero
        let scale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        scale * a.iter().map(|v| (v.abs() / scale).powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(a: &[f64], k: f64) -> Vec<f64> {
    a.iter().map(|x| x * k).collect()
}

/// `a + k·b`
pub fn axpy(a: &[f64], k: f64, b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + k * y).collect()
}

/// `M·v`
pub fn mat_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)] * v[j]).sum())
        .collect()
}

/// `Mᵀ·v`
pub fn mat_t_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (0..m.ncols())
        .map(|j| (0..m.nrows()).map(|i| m[(i, j)] * v[i]).sum())
        .collect()
}

/// Euclidean projection onto the centered ℓ₂ ball of the given radius.
pub fn project_ball(v: &[f64], radius: f64) -> Vec<f64> {
    let n = norm2(v);
    if n <= radius {
        v.to_vec()
    } else {
        v.iter().map(|x| x / n * radius).collect()
    }
}
