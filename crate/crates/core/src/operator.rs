//! Linearized Monge-Ampere operators L d = <C, dd^c d> + kappa d and their solvers.

use crate::error::Result;
use crate::geometry::{ddc_data, for_each_index4, torus2_symbol, FormData, Herm, ModelGeometry, ModelKind};
use crate::linalg::{gmres, Banded};
use crate::scalar::{lit, Real};
use num_complex::Complex;

/// Contraction of dd^c against a coefficient form. On the blow-up model the first
/// and last rows are replaced by the Neumann conditions d'(+-R) = 0. When
/// `bordered`, an extra unknown mu is added to every equation row and the extra
/// equation fixes the mean of the solution.
pub(crate) struct LinearOp<'g, T: Real> {
    pub g: &'g ModelGeometry<T>,
    pub c: FormData<T>,
    pub kappa: Vec<T>,
    pub bordered: bool,
}

pub(crate) fn pair_data<T: Real>(g: &ModelGeometry<T>, c: &FormData<T>, d: &FormData<T>) -> Vec<T> {
    match (c, d) {
        (FormData::Matrix(p), FormData::Matrix(q)) if g.dim() == 1 => {
            p.iter().zip(q).map(|(x, y)| x.a11 * y.a11).collect()
        }
        (FormData::Matrix(p), FormData::Matrix(q)) => p.iter().zip(q).map(|(x, y)| x.pair(y)).collect(),
        (FormData::Radial { a, b }, FormData::Radial { a: c, b: d }) => {
            (0..a.len()).map(|i| a[i] * c[i] + b[i] * d[i]).collect()
        }
        _ => panic!("form representations differ"),
    }
}

/// Pointwise inverse of a positive form, as a contraction coefficient.
pub(crate) fn inverse_data<T: Real>(g: &ModelGeometry<T>, x: &FormData<T>) -> FormData<T> {
    match x {
        FormData::Matrix(m) if g.dim() == 1 => {
            FormData::Matrix(m.iter().map(|h| Herm::diag(T::one() / h.a11, T::zero())).collect())
        }
        FormData::Matrix(m) => FormData::Matrix(m.iter().map(|h| h.inverse()).collect()),
        FormData::Radial { a, b } => FormData::Radial {
            a: a.iter().map(|&v| T::one() / v).collect(),
            b: b.iter().map(|&v| T::one() / v).collect(),
        },
    }
}

pub(crate) fn has_bc_rows<T: Real>(g: &ModelGeometry<T>) -> bool {
    g.kind() == ModelKind::BlowupCalabi
}

impl<'g, T: Real> LinearOp<'g, T> {
    pub fn apply(&self, x: &[T], y: &mut [T]) {
        let g = self.g;
        let n = g.len();
        let d = ddc_data(g, &x[..n]);
        let p = pair_data(g, &self.c, &d);
        for i in 0..n {
            y[i] = p[i] + self.kappa[i] * x[i];
        }
        if has_bc_rows(g) {
            y[0] = g.fd1[0].apply(x);
            y[n - 1] = g.fd1[n - 1].apply(x);
        }
        if self.bordered {
            let mu = x[n];
            let (lo, hi) = if has_bc_rows(g) { (1, n - 1) } else { (0, n) };
            for yi in &mut y[lo..hi] {
                *yi = *yi + mu;
            }
            y[n] = x[..n].iter().fold(T::zero(), |s, &v| s + v) / lit(n as f64);
        }
    }

    fn equation_indicator(&self) -> Vec<T> {
        let n = self.g.len();
        let mut e = vec![T::one(); n];
        if has_bc_rows(self.g) {
            e[0] = T::zero();
            e[n - 1] = T::zero();
        }
        e
    }

    /// Finite-difference banded approximation (exact on the blow-up model).
    fn banded(&self) -> Result<BandedPrecond<T>> {
        let g = self.g;
        let n = g.len();
        let h = g.spacing();
        let two = lit::<T>(2.0);
        let periodic = g.kind() != ModelKind::BlowupCalabi;
        let mut rows: Vec<Vec<(usize, T)>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut row: Vec<(usize, T)> = Vec::new();
            if periodic {
                let (ca, cb) = match &self.c {
                    FormData::Matrix(m) => (T::zero(), m[i].a11 * lit(0.5)),
                    FormData::Radial { a, b } => (a[i], b[i]),
                };
                let lower = -ca / (two * h) + cb / (h * h);
                let upper = ca / (two * h) + cb / (h * h);
                row.push(((i + n - 1) % n, lower));
                row.push((i, -two * cb / (h * h) + self.kappa[i]));
                row.push(((i + 1) % n, upper));
            } else if i == 0 || i == n - 1 {
                let s = &g.fd1[i];
                row.extend(s.w.iter().enumerate().map(|(k, &w)| (s.start + k, w)));
            } else {
                let (ca, cb) = match &self.c {
                    FormData::Radial { a, b } => (a[i], b[i]),
                    FormData::Matrix(_) => unreachable!(),
                };
                let s1 = &g.fd1[i];
                let s2 = &g.fd2[i];
                let lo = s1.start.min(s2.start);
                let hi = (s1.start + s1.w.len()).max(s2.start + s2.w.len());
                let mut dense = vec![T::zero(); hi - lo];
                for (k, &w) in s1.w.iter().enumerate() {
                    dense[s1.start + k - lo] = dense[s1.start + k - lo] + ca * w;
                }
                for (k, &w) in s2.w.iter().enumerate() {
                    dense[s2.start + k - lo] = dense[s2.start + k - lo] + cb * w;
                }
                dense[i - lo] = dense[i - lo] + self.kappa[i];
                row.extend(dense.into_iter().enumerate().map(|(k, w)| (lo + k, w)));
            }
            rows.push(row);
        }
        // periodic rows are folded so that the cyclic matrix becomes banded
        let pos: Vec<usize> = if periodic {
            (0..n)
                .map(|k| if 2 * k < n { 2 * k } else { 2 * (n - 1 - k) + 1 })
                .collect()
        } else {
            (0..n).collect()
        };
        let (mut kl, mut ku) = (0usize, 0usize);
        for (i, row) in rows.iter().enumerate() {
            for &(j, _) in row {
                let (pi, pj) = (pos[i], pos[j]);
                if pj < pi {
                    kl = kl.max(pi - pj);
                } else {
                    ku = ku.max(pj - pi);
                }
            }
        }
        let diag_scale = rows
            .iter()
            .enumerate()
            .map(|(i, r)| r.iter().find(|e| e.0 == i).map_or(T::zero(), |e| e.1.abs()))
            .fold(T::zero(), |m, v| m.max(v));
        let shift = if self.bordered {
            T::epsilon().sqrt() * diag_scale.max(T::one())
        } else {
            T::zero()
        };
        let mut m = Banded::new(n, kl, ku);
        for (i, row) in rows.iter().enumerate() {
            for &(j, w) in row {
                m.add(pos[i], pos[j], w);
            }
            if self.bordered && self.equation_indicator()[i] != T::zero() {
                m.add(pos[i], pos[i], -shift);
            }
        }
        m.factor()?;
        let mut pre = BandedPrecond {
            lu: m,
            pos,
            border: None,
        };
        if self.bordered {
            let y2 = pre.solve_plain(&self.equation_indicator());
            let m2 = y2.iter().fold(T::zero(), |s, &v| s + v) / lit(n as f64);
            pre.border = Some((y2, m2));
        }
        Ok(pre)
    }

    /// Constant-coefficient Fourier inverse from the averaged coefficients (4-torus).
    fn fourier(&self) -> FourierPrecond<T> {
        let g = self.g;
        let n = g.len();
        let nn = lit::<T>(n as f64);
        let mean_c = match &self.c {
            FormData::Matrix(m) => m.iter().fold(Herm::default(), |s, h| s.add(h)).scale(T::one() / nn),
            FormData::Radial { .. } => unreachable!("fourier preconditioner is for tori"),
        };
        let kappa = self.kappa.iter().fold(T::zero(), |s, &v| s + v) / nn;
        let mut inv = vec![T::zero(); n];
        for_each_index4(g.shape(), |i, j| {
            let (s11, s22, s12) = torus2_symbol(g, j);
            let sym = mean_c.pair(&Herm {
                a11: s11,
                a22: s22,
                a12: s12,
            }) + kappa;
            inv[i] = if sym.abs() > T::epsilon() * lit(1e3) {
                T::one() / sym
            } else {
                T::zero()
            };
        });
        FourierPrecond {
            inv,
            bordered: self.bordered,
        }
    }
}

struct BandedPrecond<T: Real> {
    lu: Banded<T>,
    pos: Vec<usize>,
    border: Option<(Vec<T>, T)>,
}

impl<T: Real> BandedPrecond<T> {
    fn solve_plain(&self, r: &[T]) -> Vec<T> {
        let mut tmp = vec![T::zero(); r.len()];
        for (i, &v) in r.iter().enumerate() {
            tmp[self.pos[i]] = v;
        }
        self.lu.solve(&mut tmp);
        self.pos.iter().map(|&p| tmp[p]).collect()
    }

    fn apply(&self, r: &[T], out: &mut [T]) {
        let n = self.pos.len();
        let y1 = self.solve_plain(&r[..n]);
        match &self.border {
            None => out[..n].copy_from_slice(&y1),
            Some((y2, m2)) => {
                let m1 = y1.iter().fold(T::zero(), |s, &v| s + v) / lit(n as f64);
                let mu = (m1 - r[n]) / *m2;
                for i in 0..n {
                    out[i] = y1[i] - mu * y2[i];
                }
                out[n] = mu;
            }
        }
    }
}

struct FourierPrecond<T: Real> {
    inv: Vec<T>,
    bordered: bool,
}

impl<T: Real> FourierPrecond<T> {
    fn apply(&self, g: &ModelGeometry<T>, r: &[T], out: &mut [T]) {
        let n = g.len();
        let sp = g.spectral.as_ref().expect("spectral data");
        let mut hat: Vec<Complex<T>> = r[..n].iter().map(|&x| Complex::new(x, T::zero())).collect();
        sp.transform(g.shape(), &mut hat, false);
        let mu = hat[0].re / lit(n as f64);
        for (z, &s) in hat.iter_mut().zip(&self.inv) {
            *z = z.scale(s);
        }
        if self.bordered {
            hat[0] = Complex::new(r[n] * lit(n as f64), T::zero());
        }
        sp.transform(g.shape(), &mut hat, true);
        for i in 0..n {
            out[i] = hat[i].re;
        }
        if self.bordered {
            out[n] = mu;
        }
    }
}

/// Solves L x = rhs to relative accuracy `tol` with preconditioned GMRES.
pub(crate) fn solve_linear<T: Real>(op: &LinearOp<'_, T>, rhs: &[T], tol: T) -> Result<Vec<T>> {
    let tol = tol.max(T::epsilon() * lit(100.0));
    let (x, _info) = match op.g.kind() {
        ModelKind::Torus2 => {
            let pre = op.fourier();
            gmres(|x, y| op.apply(x, y), |r, z| pre.apply(op.g, r, z), rhs, tol, 60, 600)?
        }
        _ => {
            let pre = op.banded()?;
            gmres(|x, y| op.apply(x, y), |r, z| pre.apply(r, z), rhs, tol, 60, 600)?
        }
    };
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{GeometryConfig, ModelGeometry};

    fn check(cfg: GeometryConfig, bordered: bool) {
        let g = ModelGeometry::<f64>::new(&cfg).unwrap();
        let n = g.len();
        let x = |i: usize| g.coords()[i % g.coords().len()];
        let c = if g.kind().is_radial() {
            FormData::Radial {
                a: (0..n).map(|i| 1.0 + 0.3 * x(i).sin()).collect(),
                b: (0..n).map(|i| 2.0 + 0.5 * x(i).cos()).collect(),
            }
        } else {
            FormData::Matrix(
                (0..n)
                    .map(|i| Herm {
                        a11: 1.0 + 0.2 * (6.28 * x(i)).sin(),
                        a22: 1.5,
                        a12: Complex::new(0.1, 0.05),
                    })
                    .collect(),
            )
        };
        let kappa = vec![if bordered { 0.0 } else { -3.0 }; n];
        let op = LinearOp {
            g: &g,
            c,
            kappa,
            bordered,
        };
        let m = n + usize::from(bordered);
        let mut rhs: Vec<f64> = (0..m).map(|i| ((i * 37) % 17) as f64 / 17.0 - 0.4).collect();
        if bordered {
            rhs[n] = 0.25;
        }
        let sol = solve_linear(&op, &rhs, 1e-12).unwrap();
        let mut y = vec![0.0; m];
        op.apply(&sol, &mut y);
        let err = y.iter().zip(&rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-8 * scale.max(1.0) * (n as f64).sqrt(), "{:?} err {err}", cfg.kind);
    }

    #[test]
    fn linear_solves_on_every_model() {
        for bordered in [false, true] {
            check(GeometryConfig::torus1(64), bordered);
            check(GeometryConfig::hopf(64), bordered);
            check(GeometryConfig::blowup(64, 6.0, 0.2, 4.0), bordered);
            check(GeometryConfig::torus2(8), bordered);
        }
    }
}
