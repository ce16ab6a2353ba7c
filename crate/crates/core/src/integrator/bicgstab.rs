//! Unpreconditioned BiCGSTAB for the nonsymmetric systems `(I - dt L) x = b`.

/// Outcome of a solve; `converged` is false when the iteration cap was hit
/// or the recurrence broke down.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves `A x = b` in place, starting from the given `x`. Stops when
/// `|b - A x| <= tol |b|`.
pub fn bicgstab(
    apply: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> SolveStats {
    let n = b.len();
    let b_norm = norm(b);
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return SolveStats {
            iterations: 0,
            residual: 0.0,
            converged: true,
        };
    }
    let target = tol * b_norm;
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut res = norm(&r);
    if res <= target {
        return SolveStats {
            iterations: 0,
            residual: res / b_norm,
            converged: true,
        };
    }
    let r_hat = r.clone();
    let mut p = r.clone();
    let mut v = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut rho = dot(&r_hat, &r);
    for it in 1..=max_iter {
        apply(&p, &mut v);
        let denom = dot(&r_hat, &v);
        if denom == 0.0 || !denom.is_finite() {
            return SolveStats {
                iterations: it,
                residual: res / b_norm,
                converged: false,
            };
        }
        let alpha = rho / denom;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        let s_norm = norm(&s);
        if s_norm <= target {
            for i in 0..n {
                x[i] += alpha * p[i];
            }
            return SolveStats {
                iterations: it,
                residual: s_norm / b_norm,
                converged: true,
            };
        }
        apply(&s, &mut t);
        let tt = dot(&t, &t);
        if tt == 0.0 {
            return SolveStats {
                iterations: it,
                residual: s_norm / b_norm,
                converged: false,
            };
        }
        let omega = dot(&t, &s) / tt;
        for i in 0..n {
            x[i] += alpha * p[i] + omega * s[i];
            r[i] = s[i] - omega * t[i];
        }
        res = norm(&r);
        if res <= target {
            return SolveStats {
                iterations: it,
                residual: res / b_norm,
                converged: true,
            };
        }
        let rho_next = dot(&r_hat, &r);
        if rho_next == 0.0 || omega == 0.0 {
            return SolveStats {
                iterations: it,
                residual: res / b_norm,
                converged: false,
            };
        }
        let beta = (rho_next / rho) * (alpha / omega);
        rho = rho_next;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
    }
    SolveStats {
        iterations: max_iter,
        residual: res / b_norm,
        converged: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_nonsymmetric_tridiagonal() {
        // (I - dt L) with an upwind-biased periodic L
        let n = 50;
        let (lo, di, up) = (-0.3, 1.9, -0.5);
        let apply = |x: &[f64], y: &mut [f64]| {
            for i in 0..n {
                y[i] = di * x[i] + lo * x[(i + n - 1) % n] + up * x[(i + 1) % n];
            }
        };
        let want: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut b = vec![0.0; n];
        apply(&want, &mut b);
        let mut x = b.clone();
        let stats = bicgstab(apply, &b, &mut x, 1e-13, 200);
        assert!(stats.converged);
        for (a, w) in x.iter().zip(&want) {
            assert!((a - w).abs() < 1e-11);
        }
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let mut x = vec![1.0; 4];
        let stats = bicgstab(|a, b| b.copy_from_slice(a), &[0.0; 4], &mut x, 1e-12, 10);
        assert!(stats.converged);
        assert_eq!(x, vec![0.0; 4]);
    }

    #[test]
    fn identity_converges_immediately() {
        let b = [1.0, -2.0, 3.0];
        let mut x = b.to_vec();
        let stats = bicgstab(|a, y| y.copy_from_slice(a), &b, &mut x, 1e-12, 10);
        assert_eq!(stats.iterations, 0);
        assert_eq!(x, b.to_vec());
    }
}
