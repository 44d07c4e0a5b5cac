//! Dense real polynomials in ascending coefficient order, plus the
//! orthonormal Hermite basis used to condition the surrogate fit.

/// Horner evaluation of `c[0] + c[1] x + ... + c[d] x^d`.
#[inline]
pub fn eval(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// `Σ |c_k| |x|^k`, the scale of the rounding error in [`eval`].
#[inline]
pub fn eval_abs(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x.abs() + c.abs())
}

pub fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[i + j] += ai * bj;
        }
    }
    out
}

/// Rewrites `p(u)` with `u = (x - shift) / scale` as a polynomial in `x`.
pub fn compose_affine(p_of_u: &[f64], shift: f64, scale: f64) -> Vec<f64> {
    let lin = [-shift / scale, 1.0 / scale];
    let mut acc: Vec<f64> = vec![0.0];
    for &c in p_of_u.iter().rev() {
        acc = mul(&acc, &lin);
        acc[0] += c;
    }
    acc.resize(p_of_u.len().max(1), 0.0);
    acc
}

/// Coefficients (in `u`) of the orthonormal probabilists' Hermite
/// polynomials `He_k(u) / sqrt(k!)` for `k = 0..=degree`.
pub fn hermite_orthonormal(degree: usize) -> Vec<Vec<f64>> {
    let mut he: Vec<Vec<f64>> = Vec::with_capacity(degree + 1);
    he.push(vec![1.0]);
    if degree >= 1 {
        he.push(vec![0.0, 1.0]);
    }
    for k in 1..degree {
        let mut next = vec![0.0; k + 2];
        for (i, &c) in he[k].iter().enumerate() {
            next[i + 1] += c;
        }
        for (i, &c) in he[k - 1].iter().enumerate() {
            next[i] -= k as f64 * c;
        }
        he.push(next);
    }
    let mut fact = 1.0;
    he.into_iter()
        .enumerate()
        .map(|(k, c)| {
            if k > 0 {
                fact *= k as f64;
            }
            let norm = fact.sqrt();
            c.into_iter().map(|v| v / norm).collect()
        })
        .collect()
}

/// Values of the orthonormal Hermite functions at `u` via the three-term
/// recurrence, written into `out[0..=degree]`.
#[inline]
pub fn hermite_values(u: f64, out: &mut [f64]) {
    let degree = out.len() - 1;
    // He_{k+1} = u He_k - k He_{k-1}; track normalized values directly.
    let mut prev = 1.0;
    out[0] = 1.0;
    if degree == 0 {
        return;
    }
    let mut cur = u;
    out[1] = u;
    for k in 1..degree {
        let kf = k as f64;
        let next = (u * cur - kf.sqrt() * prev) / (kf + 1.0).sqrt();
        prev = cur;
        cur = next;
        out[k + 1] = next;
    }
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}
