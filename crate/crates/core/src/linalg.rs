//! Small dense/banded direct solvers and restarted GMRES.

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// Banded matrix with `kl` sub- and `ku` super-diagonals, factorized in place by
/// Gaussian elimination with partial pivoting.
pub(crate) struct Banded<T> {
    n: usize,
    kl: usize,
    ku: usize,
    // row i holds columns i-kl ..= i+kl+ku (room for pivoting fill)
    data: Vec<T>,
    piv: Vec<usize>,
    factored: bool,
}

impl<T: Real> Banded<T> {
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        let w = 2 * kl + ku + 1;
        Banded {
            n,
            kl,
            ku,
            data: vec![T::zero(); n * w],
            piv: (0..n).collect(),
            factored: false,
        }
    }

    #[inline]
    fn width(&self) -> usize {
        2 * self.kl + self.ku + 1
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku, "({i},{j}) outside band");
        i * self.width() + (j + self.kl - i)
    }

    pub fn add(&mut self, i: usize, j: usize, v: T) {
        assert!(
            j + self.kl >= i && j <= i + self.ku,
            "entry ({i},{j}) outside band kl={} ku={}",
            self.kl,
            self.ku
        );
        let s = self.slot(i, j);
        self.data[s] = self.data[s] + v;
    }

    pub fn factor(&mut self) -> Result<()> {
        let n = self.n;
        let kl = self.kl;
        let reach = kl + self.ku;
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.slot(k, k)].abs();
            for i in k + 1..=last {
                let v = self.data[self.slot(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == T::zero() || !best.is_finite() {
                return Err(Error::LinearSolver(format!("singular banded matrix at column {k}")));
            }
            self.piv[k] = p;
            let cmax = (k + reach).min(n - 1);
            if p != k {
                for j in k..=cmax {
                    let a = self.slot(k, j);
                    let b = self.slot(p, j);
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.slot(k, k)];
            for i in k + 1..=last {
                let si = self.slot(i, k);
                let f = self.data[si] / pivot;
                self.data[si] = f;
                if f == T::zero() {
                    continue;
                }
                for j in k + 1..=cmax {
                    let a = self.slot(i, j);
                    let b = self.slot(k, j);
                    self.data[a] = self.data[a] - f * self.data[b];
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    pub fn solve(&self, rhs: &mut [T]) {
        assert!(self.factored);
        let n = self.n;
        let kl = self.kl;
        let reach = kl + self.ku;
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                rhs.swap(k, p);
            }
            let last = (k + kl).min(n - 1);
            for i in k + 1..=last {
                rhs[i] = rhs[i] - self.data[self.slot(i, k)] * rhs[k];
            }
        }
        for k in (0..n).rev() {
            let cmax = (k + reach).min(n - 1);
            let mut s = rhs[k];
            for j in k + 1..=cmax {
                s = s - self.data[self.slot(k, j)] * rhs[j];
            }
            rhs[k] = s / self.data[self.slot(k, k)];
        }
    }
}

/// Dense LU with partial pivoting.
pub(crate) struct DenseLu<T> {
    n: usize,
    a: Vec<T>,
    piv: Vec<usize>,
}

impl<T: Real> DenseLu<T> {
    pub fn factor(n: usize, mut a: Vec<T>) -> Result<Self> {
        let mut piv = vec![0; n];
        for k in 0..n {
            let mut p = k;
            let mut best = a[k * n + k].abs();
            for i in k + 1..n {
                let v = a[i * n + k].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == T::zero() || !best.is_finite() {
                return Err(Error::LinearSolver(format!("singular dense matrix at column {k}")));
            }
            piv[k] = p;
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
            }
            let pivot = a[k * n + k];
            for i in k + 1..n {
                let f = a[i * n + k] / pivot;
                a[i * n + k] = f;
                if f != T::zero() {
                    for j in k + 1..n {
                        a[i * n + j] = a[i * n + j] - f * a[k * n + j];
                    }
                }
            }
        }
        Ok(DenseLu { n, a, piv })
    }

    pub fn solve(&self, b: &mut [T]) {
        let n = self.n;
        for k in 0..n {
            b.swap(k, self.piv[k]);
        }
        for k in 0..n {
            for i in k + 1..n {
                b[i] = b[i] - self.a[i * n + k] * b[k];
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for j in k + 1..n {
                s = s - self.a[k * n + j] * b[j];
            }
            b[k] = s / self.a[k * n + k];
        }
    }
}

pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

pub(crate) fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

#[cfg_attr(not(test), allow(dead_code))]
pub(crate) struct GmresInfo<T> {
    pub iterations: usize,
    pub residual: T,
}

/// Restarted GMRES with right preconditioning. Stops when the true residual
/// falls below `tol * |b|`.
pub(crate) fn gmres<T: Real>(
    apply: impl Fn(&[T], &mut [T]),
    precond: impl Fn(&[T], &mut [T]),
    b: &[T],
    tol: T,
    restart: usize,
    max_iter: usize,
) -> Result<(Vec<T>, GmresInfo<T>)> {
    let n = b.len();
    let bnorm = norm(b);
    let mut x = vec![T::zero(); n];
    if bnorm == T::zero() {
        return Ok((
            x,
            GmresInfo {
                iterations: 0,
                residual: T::zero(),
            },
        ));
    }
    let target = tol * bnorm;
    let m = restart.max(1);
    let mut total = 0;
    let mut r = b.to_vec();
    let mut w = vec![T::zero(); n];
    let mut z = vec![T::zero(); n];
    loop {
        let beta = norm(&r);
        if beta <= target {
            return Ok((x, GmresInfo { iterations: total, residual: beta / bnorm }));
        }
        if total >= max_iter {
            if beta <= target * lit(1e3) {
                return Ok((x, GmresInfo { iterations: total, residual: beta / bnorm }));
            }
            return Err(Error::LinearSolver(format!(
                "gmres stalled at relative residual {:e}",
                crate::scalar::to_f64(beta / bnorm)
            )));
        }
        let mut v: Vec<Vec<T>> = vec![r.iter().map(|&q| q / beta).collect()];
        let mut h = vec![vec![T::zero(); m]; m + 1];
        let mut cs = vec![T::zero(); m];
        let mut sn = vec![T::zero(); m];
        let mut g = vec![T::zero(); m + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            precond(&v[k], &mut z);
            apply(&z, &mut w);
            for i in 0..=k {
                let hik = dot(&w, &v[i]);
                h[i][k] = hik;
                for (wj, &vj) in w.iter_mut().zip(&v[i]) {
                    *wj = *wj - hik * vj;
                }
            }
            let hn = norm(&w);
            h[k + 1][k] = hn;
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let den = (h[k][k] * h[k][k] + h[k + 1][k] * h[k + 1][k]).sqrt();
            if den == T::zero() {
                cs[k] = T::one();
                sn[k] = T::zero();
            } else {
                cs[k] = h[k][k] / den;
                sn[k] = h[k + 1][k] / den;
            }
            h[k][k] = cs[k] * h[k][k] + sn[k] * h[k + 1][k];
            h[k + 1][k] = T::zero();
            g[k + 1] = -sn[k] * g[k];
            g[k] = cs[k] * g[k];
            k_used = k + 1;
            total += 1;
            let lucky = hn <= lit::<T>(1e-300).max(T::min_positive_value());
            if g[k + 1].abs() <= target * lit(0.5) || lucky || total >= max_iter {
                break;
            }
            v.push(w.iter().map(|&q| q / hn).collect());
        }
        let mut y = vec![T::zero(); k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s = s - h[i][j] * y[j];
            }
            y[i] = s / h[i][i];
        }
        let mut u = vec![T::zero(); n];
        for (j, &yj) in y.iter().enumerate() {
            for (ui, &vi) in u.iter_mut().zip(&v[j]) {
                *ui = *ui + yj * vi;
            }
        }
        precond(&u, &mut z);
        for (xi, &zi) in x.iter_mut().zip(&z) {
            *xi = *xi + zi;
        }
        apply(&x, &mut w);
        for i in 0..n {
            r[i] = b[i] - w[i];
        }
    }
}
