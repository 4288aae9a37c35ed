//! Dense helpers on top of faer: matrix exponential, balancing, norms.

use faer::prelude::*;
use faer::{Mat, MatRef};

use crate::error::{NeelError, Result};

pub fn matvec(a: MatRef<'_, f64>, v: &[f64]) -> Vec<f64> {
    assert_eq!(a.ncols(), v.len());
    let mut out = vec![0.0; a.nrows()];
    for j in 0..a.ncols() {
        let vj = v[j];
        if vj == 0.0 {
            continue;
        }
        let col = a.col(j);
        for (i, o) in out.iter_mut().enumerate() {
            *o += col[i] * vj;
        }
    }
    out
}

pub fn transpose_matvec(a: MatRef<'_, f64>, v: &[f64]) -> Vec<f64> {
    assert_eq!(a.nrows(), v.len());
    (0..a.ncols())
        .map(|j| {
            let col = a.col(j);
            (0..a.nrows()).map(|i| col[i] * v[i]).sum()
        })
        .collect()
}

pub fn one_norm(a: MatRef<'_, f64>) -> f64 {
    (0..a.ncols())
        .map(|j| {
            let col = a.col(j);
            (0..a.nrows()).map(|i| col[i].abs()).sum::<f64>()
        })
        .fold(0.0, f64::max)
}

pub fn max_abs(a: MatRef<'_, f64>) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max(a[(i, j)].abs());
        }
    }
    m
}

/// max |a_ij - a_ji|.
pub fn asymmetry(a: MatRef<'_, f64>) -> f64 {
    let n = a.nrows();
    let mut m = 0.0f64;
    for j in 0..n {
        for i in 0..j {
            m = m.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    m
}

/// Spectral norm by power iteration on AᵀA, started from a fixed vector.
pub fn norm2_estimate(a: MatRef<'_, f64>) -> f64 {
    let n = a.ncols();
    if n == 0 {
        return 0.0;
    }
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 7919) % 13) as f64 / 13.0).collect();
    let mut est = 0.0;
    for _ in 0..300 {
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nv == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|x| *x /= nv);
        let av = matvec(a, &v);
        let new = av.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = transpose_matvec(a, &av);
        if (new - est).abs() <= 1e-10 * new {
            return new;
        }
        est = new;
    }
    est
}

/// Parlett–Reinsch balancing by powers of two. Returns the similar matrix D⁻¹AD.
pub fn balance(a: MatRef<'_, f64>) -> Mat<f64> {
    let n = a.nrows();
    let mut b = a.to_owned();
    let radix = 2.0f64;
    loop {
        let mut converged = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += b[(j, i)].abs();
                    r += b[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut c2 = c;
            while c2 < r / radix {
                f *= radix;
                c2 *= radix * radix;
            }
            while c2 > r * radix {
                f /= radix;
                c2 /= radix * radix;
            }
            if (c2 + r) / f < 0.95 * s {
                converged = false;
                for j in 0..n {
                    b[(i, j)] /= f;
                }
                for j in 0..n {
                    b[(j, i)] *= f;
                }
            }
        }
        if converged {
            return b;
        }
    }
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// e^A by the degree-13 Padé approximant with scaling and squaring.
pub fn expm(a: MatRef<'_, f64>) -> Result<Mat<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(NeelError::Dimension {
            expected: "square matrix".into(),
            found: format!("{}x{}", a.nrows(), a.ncols()),
        });
    }
    let norm = one_norm(a);
    if !norm.is_finite() {
        return Err(NeelError::Numerical("non-finite matrix in expm".into()));
    }
    const THETA13: f64 = 5.371920351148152;
    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let scale = 0.5f64.powi(s);
    let a = Mat::from_fn(n, n, |i, j| a[(i, j)] * scale);
    let ident = Mat::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &PADE13;
    let lin = |c6: f64, c4: f64, c2: f64, c0: f64| {
        Mat::from_fn(n, n, |i, j| {
            c6 * a6[(i, j)] + c4 * a4[(i, j)] + c2 * a2[(i, j)] + c0 * ident[(i, j)]
        })
    };
    let u_inner = &a6 * &lin(b[13], b[11], b[9], 0.0);
    let u_poly = Mat::from_fn(n, n, |i, j| {
        u_inner[(i, j)] + b[7] * a6[(i, j)] + b[5] * a4[(i, j)] + b[3] * a2[(i, j)] + b[1] * ident[(i, j)]
    });
    let u = &a * &u_poly;
    let v_inner = &a6 * &lin(b[12], b[10], b[8], 0.0);
    let v = Mat::from_fn(n, n, |i, j| {
        v_inner[(i, j)] + b[6] * a6[(i, j)] + b[4] * a4[(i, j)] + b[2] * a2[(i, j)] + b[0] * ident[(i, j)]
    });
    let p = Mat::from_fn(n, n, |i, j| v[(i, j)] + u[(i, j)]);
    let q = Mat::from_fn(n, n, |i, j| v[(i, j)] - u[(i, j)]);
    let mut r = q.partial_piv_lu().solve(&p);
    for _ in 0..s {
        r = &r * &r;
    }
    if r.col_iter().any(|c| c.iter().any(|x| !x.is_finite())) {
        return Err(NeelError::Numerical("matrix exponential overflowed".into()));
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expm_of_rotation_generator() {
        let t = 1.3;
        let a = Mat::from_fn(2, 2, |i, j| match (i, j) {
            (0, 1) => -t,
            (1, 0) => t,
            _ => -0.5,
        });
        let e = expm(a.as_ref()).unwrap();
        let d = (-0.5f64).exp();
        assert!((e[(0, 0)] - d * t.cos()).abs() < 1e-14);
        assert!((e[(1, 0)] - d * t.sin()).abs() < 1e-14);
        assert!((e[(0, 1)] + d * t.sin()).abs() < 1e-14);
    }

    #[test]
    fn expm_large_norm_diagonal() {
        let a = Mat::from_fn(3, 3, |i, j| if i == j { -(i as f64 + 1.0) * 20.0 } else { 0.0 });
        let e = expm(a.as_ref()).unwrap();
        for i in 0..3 {
            let exact = (-(i as f64 + 1.0) * 20.0).exp();
            assert!((e[(i, i)] - exact).abs() <= 1e-12 * exact);
        }
    }

    #[test]
    fn expm_nilpotent() {
        let a = Mat::from_fn(3, 3, |i, j| if j == i + 1 { 2.0 } else { 0.0 });
        let e = expm(a.as_ref()).unwrap();
        assert!((e[(0, 2)] - 2.0).abs() < 1e-14);
        assert!((e[(0, 1)] - 2.0).abs() < 1e-14);
        assert!((e[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn balancing_preserves_eigenvalues() {
        let a = Mat::from_fn(3, 3, |i, j| [[1.0, 1e6, 0.0], [1e-6, 2.0, 1e4], [0.0, 1e-4, 3.0]][i][j]);
        let b = balance(a.as_ref());
        let mut ea: Vec<f64> = a.eigenvalues().unwrap().iter().map(|z| z.re).collect();
        let mut eb: Vec<f64> = b.eigenvalues().unwrap().iter().map(|z| z.re).collect();
        ea.sort_by(f64::total_cmp);
        eb.sort_by(f64::total_cmp);
        for (x, y) in ea.iter().zip(&eb) {
            assert!((x - y).abs() < 1e-9);
        }
        assert!(max_abs(b.as_ref()) < 1e6);
    }

    #[test]
    fn norm_estimate_diagonal() {
        let a = Mat::from_fn(4, 4, |i, j| if i == j { [1.0, -5.0, 2.0, 0.5][i] } else { 0.0 });
        assert!((norm2_estimate(a.as_ref()) - 5.0).abs() < 1e-8);
    }
}
