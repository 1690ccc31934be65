//! Column-incremental Householder QR with in-order rank screening.

use std::borrow::Cow;

#[derive(Debug, Clone)]
pub(crate) struct Reflector {
    /// Row at which the reflector starts acting.
    start: usize,
    v: Vec<f64>,
    /// `2 / (v . v)`
    tau: f64,
}

impl Reflector {
    fn apply(&self, x: &mut [f64]) {
        let tail = &mut x[self.start..];
        let dot: f64 = self.v.iter().zip(tail.iter()).map(|(a, b)| a * b).sum();
        let s = self.tau * dot;
        for (t, v) in tail.iter_mut().zip(&self.v) {
            *t -= s * v;
        }
    }
}

/// QR factorization built one column at a time. Reflectors of a base
/// factorization can be borrowed by extensions, so a fixed block of control
/// columns is factored once and reused across many fits.
#[derive(Debug, Clone)]
pub(crate) struct Qr<'a> {
    n: usize,
    reflectors: Vec<Cow<'a, Reflector>>,
    /// Column `j` of R holds `j + 1` entries.
    r: Vec<Vec<f64>>,
}

impl<'a> Qr<'a> {
    pub fn new(n: usize) -> Self {
        Qr { n, reflectors: Vec::new(), r: Vec::new() }
    }

    pub fn rank(&self) -> usize {
        self.r.len()
    }

    /// A factorization sharing this one's reflectors, ready for more columns.
    pub fn extend(&'a self) -> Qr<'a> {
        Qr {
            n: self.n,
            reflectors: self.reflectors.iter().map(|r| Cow::Borrowed(r.as_ref())).collect(),
            r: self.r.clone(),
        }
    }

    /// Append a column unless its component orthogonal to the current span
    /// has norm at most `tol * reference_norm`. Returns whether it was kept.
    pub fn push(&mut self, col: &[f64], reference_norm: f64, tol: f64) -> bool {
        assert_eq!(col.len(), self.n);
        let k = self.rank();
        if k >= self.n {
            return false;
        }
        let mut x = col.to_vec();
        for h in &self.reflectors {
            h.apply(&mut x);
        }
        let norm = x[k..].iter().map(|t| t * t).sum::<f64>().sqrt();
        if !(norm > tol * reference_norm) || norm == 0.0 {
            return false;
        }
        let alpha = if x[k] > 0.0 { -norm } else { norm };
        let mut v = x[k..].to_vec();
        v[0] -= alpha;
        let vv: f64 = v.iter().map(|t| t * t).sum();
        self.reflectors.push(Cow::Owned(Reflector { start: k, v, tau: 2.0 / vv }));
        let mut rcol = x[..k].to_vec();
        rcol.push(alpha);
        self.r.push(rcol);
        true
    }

    /// Overwrite `y` with `Qᵀ y`.
    pub fn apply_qt(&self, y: &mut [f64]) {
        for h in &self.reflectors {
            h.apply(y);
        }
    }

    /// Apply only the reflectors from index `from` on; used to bring a
    /// vector already reduced by a base factorization up to date.
    pub fn apply_qt_from(&self, from: usize, y: &mut [f64]) {
        for h in &self.reflectors[from..] {
            h.apply(y);
        }
    }

    /// Solve `R b = rhs[..rank]` by back substitution.
    pub fn solve_r(&self, rhs: &[f64]) -> Vec<f64> {
        let k = self.rank();
        let mut b = rhs[..k].to_vec();
        for j in (0..k).rev() {
            b[j] /= self.r[j][j];
            let bj = b[j];
            for (i, bi) in b.iter_mut().enumerate().take(j) {
                *bi -= self.r[j][i] * bj;
            }
        }
        b
    }

    /// `R⁻¹` as dense row-major rows (upper triangular).
    pub fn r_inverse(&self) -> Vec<Vec<f64>> {
        let k = self.rank();
        let mut inv = vec![vec![0.0; k]; k];
        for (c, row) in (0..k).map(|c| {
            let mut e = vec![0.0; k];
            e[c] = 1.0;
            (c, self.solve_r(&e))
        }) {
            for (i, v) in row.into_iter().enumerate() {
                inv[i][c] = v;
            }
        }
        inv
    }
}
