//! Orthonormal symmetric vectorization.
//!
//! Basis element `p = (a, b)`, `a <= b`, is `E_p = alpha_p (e_a e_b' + e_b e_a')`
//! with `alpha_p = 1/2` on the diagonal and `1/sqrt(2)` off it, so that
//! `<E_p, E_q> = delta_pq`.

use nalgebra::{DMatrix, DVector};

pub fn len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// `(a, b, alpha)` for every basis element, column-major upper triangle.
pub fn index(d: usize) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::with_capacity(len(d));
    for b in 0..d {
        for a in 0..=b {
            let alpha = if a == b { 0.5 } else { std::f64::consts::FRAC_1_SQRT_2 };
            out.push((a, b, alpha));
        }
    }
    out
}

/// Coordinates `<E_p, S>` of the symmetric part of `s`.
pub fn svec(s: &DMatrix<f64>) -> DVector<f64> {
    let d = s.nrows();
    DVector::from_iterator(
        len(d),
        index(d)
            .into_iter()
            .map(|(a, b, alpha)| alpha * (s[(a, b)] + s[(b, a)])),
    )
}

/// Inverse of [`svec`].
pub fn smat(v: &[f64], d: usize) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(d, d);
    for (p, (a, b, alpha)) in index(d).into_iter().enumerate() {
        if a == b {
            s[(a, a)] = v[p];
        } else {
            s[(a, b)] = v[p] * alpha;
            s[(b, a)] = v[p] * alpha;
        }
    }
    s
}
