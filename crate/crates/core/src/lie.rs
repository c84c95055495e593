//! Small-matrix arithmetic on the Lie algebra u(n) and the group U(n).
//!
//! Elements are stored as dense row-major `n x n` complex matrices. The
//! lattice code works directly on flat slices through the `raw` helpers; the
//! owned [`LieElement`] / [`GroupElement`] types are the checked public face.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Tolerance for algebraic identities on u(n).
pub const LIE_TOL: f64 = 1e-12;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// An `n x n` skew-Hermitian matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LieElement {
    n: usize,
    entries: Vec<Complex64>,
}

/// An `n x n` unitary matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupElement {
    n: usize,
    entries: Vec<Complex64>,
}

fn check_square(n: usize, len: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("matrix dimension must be positive".into()));
    }
    if len != n * n {
        return Err(Error::ShapeMismatch(format!(
            "{len} entries cannot form a {n}x{n} matrix"
        )));
    }
    Ok(())
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            expected: a,
            actual: b,
        });
    }
    Ok(())
}

impl LieElement {
    pub fn zero(n: usize) -> Self {
        Self {
            n,
            entries: vec![ZERO; n * n],
        }
    }

    /// Validated constructor: entries must be skew-Hermitian within [`LIE_TOL`].
    pub fn new(n: usize, entries: Vec<Complex64>) -> Result<Self> {
        check_square(n, entries.len())?;
        let dev = raw::skew_deviation(n, &entries);
        if dev > LIE_TOL {
            return Err(Error::InvalidArgument(format!(
                "matrix is not skew-Hermitian (max |M + M*| = {dev:e})"
            )));
        }
        Ok(Self { n, entries })
    }

    /// `i * c * I_n`, a central element.
    pub fn imaginary_identity(n: usize, c: f64) -> Self {
        let mut e = Self::zero(n);
        for i in 0..n {
            e.entries[i * n + i] = Complex64::new(0.0, c);
        }
        e
    }

    pub(crate) fn from_raw(n: usize, entries: Vec<Complex64>) -> Self {
        debug_assert_eq!(entries.len(), n * n);
        Self { n, entries }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.entries[row * self.n + col]
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::from_raw(self.n, self.entries.iter().map(|z| z * s).collect())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_dims(self.n, other.n)?;
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self::from_raw(self.n, entries))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scaled(-1.0))
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.entries.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

impl GroupElement {
    pub fn identity(n: usize) -> Self {
        let mut entries = vec![ZERO; n * n];
        for i in 0..n {
            entries[i * n + i] = Complex64::new(1.0, 0.0);
        }
        Self { n, entries }
    }

    /// Validated constructor: `g g*` must equal the identity within [`LIE_TOL`] per entry.
    pub fn new(n: usize, entries: Vec<Complex64>) -> Result<Self> {
        check_square(n, entries.len())?;
        let mut prod = vec![ZERO; n * n];
        raw::mul_adjoint_right(n, &entries, &entries, &mut prod);
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                let d = (prod[i * n + j] - Complex64::new(target, 0.0)).norm();
                if d > LIE_TOL {
                    return Err(Error::InvalidArgument(format!(
                        "matrix is not unitary (|g g* - I| = {d:e} at ({i},{j}))"
                    )));
                }
            }
        }
        Ok(Self { n, entries })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }
}

/// Killing-form inner product `<B, C> = -trace(BC)`.
///
/// The trace is real on u(n); the imaginary part is checked (debug builds)
/// and discarded.
pub fn killing_inner(b: &LieElement, c: &LieElement) -> Result<f64> {
    check_dims(b.n, c.n)?;
    let tr = raw::trace_product(b.n, &b.entries, &c.entries);
    debug_assert!(
        tr.im.abs() <= LIE_TOL * (1.0 + b.max_abs() * c.max_abs() * (b.n * b.n) as f64),
        "imaginary Killing residual {:e}",
        tr.im
    );
    Ok(-tr.re)
}

/// `BC - CB`.
pub fn commutator(b: &LieElement, c: &LieElement) -> Result<LieElement> {
    check_dims(b.n, c.n)?;
    let mut out = vec![ZERO; b.n * b.n];
    raw::commutator_add(b.n, &b.entries, &c.entries, 1.0, &mut out);
    Ok(LieElement::from_raw(b.n, out))
}

/// `g B g*`.
pub fn gauge_conjugate(b: &LieElement, g: &GroupElement) -> Result<LieElement> {
    check_dims(g.n, b.n)?;
    let mut out = vec![ZERO; b.n * b.n];
    raw::conjugate(b.n, &g.entries, &b.entries, &mut out);
    Ok(LieElement::from_raw(b.n, out))
}

/// Skew-Hermitian part `(M - M*) / 2` of a square matrix.
///
/// # Panics
/// If `entries.len() != n * n`.
pub fn project_skew(n: usize, entries: &[Complex64]) -> LieElement {
    assert_eq!(entries.len(), n * n, "project_skew expects a square matrix");
    let mut out = entries.to_vec();
    raw::project_skew_in_place(n, &mut out);
    LieElement::from_raw(n, out)
}

/// Real basis of the algebra used for random data: `{i}` for n = 1, and a
/// traceless (su(n)) basis of dimension `n^2 - 1` otherwise.
pub fn algebra_basis(n: usize) -> Vec<LieElement> {
    if n == 1 {
        return vec![LieElement::imaginary_identity(1, 1.0)];
    }
    let mut basis = Vec::with_capacity(n * n - 1);
    let i_unit = Complex64::new(0.0, 1.0);
    for a in 0..n {
        for b in (a + 1)..n {
            let mut sym = vec![ZERO; n * n];
            sym[a * n + b] = i_unit;
            sym[b * n + a] = i_unit;
            basis.push(LieElement::from_raw(n, sym));
            let mut anti = vec![ZERO; n * n];
            anti[a * n + b] = Complex64::new(1.0, 0.0);
            anti[b * n + a] = Complex64::new(-1.0, 0.0);
            basis.push(LieElement::from_raw(n, anti));
        }
    }
    for d in 1..n {
        // i * diag(1, .., 1, -d, 0, ..) / sqrt(d (d + 1) / 2)
        let norm = ((d * (d + 1)) as f64 / 2.0).sqrt();
        let mut diag = vec![ZERO; n * n];
        for j in 0..d {
            diag[j * n + j] = Complex64::new(0.0, 1.0 / norm);
        }
        diag[d * n + d] = Complex64::new(0.0, -(d as f64) / norm);
        basis.push(LieElement::from_raw(n, diag));
    }
    basis
}

/// Random element of u(n) with independent Gaussian entries before projection.
pub fn random_lie<R: Rng + ?Sized>(n: usize, rng: &mut R) -> LieElement {
    let entries: Vec<Complex64> = (0..n * n)
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    project_skew(n, &entries)
}

/// Random unitary from Gram-Schmidt on a complex Gaussian matrix.
pub fn random_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> GroupElement {
    loop {
        let mut cols: Vec<Vec<Complex64>> = (0..n)
            .map(|_| {
                (0..n)
                    .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
                    .collect()
            })
            .collect();
        let mut ok = true;
        for j in 0..n {
            for p in 0..j {
                let proj: Complex64 = (0..n).map(|i| cols[p][i].conj() * cols[j][i]).sum();
                for i in 0..n {
                    let v = cols[p][i];
                    cols[j][i] -= proj * v;
                }
            }
            let norm = cols[j].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            cols[j].iter_mut().for_each(|z| *z /= norm);
        }
        if !ok {
            continue;
        }
        let mut entries = vec![ZERO; n * n];
        for (j, col) in cols.iter().enumerate() {
            for (i, z) in col.iter().enumerate() {
                entries[i * n + j] = *z;
            }
        }
        return GroupElement { n, entries };
    }
}

/// Flat-slice kernels shared with the lattice code. All matrices are
/// row-major `n x n`.
pub mod raw {
    use num_complex::Complex64;

    pub fn trace_product(n: usize, b: &[Complex64], c: &[Complex64]) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                acc += b[i * n + j] * c[j * n + i];
            }
        }
        acc
    }

    /// Real Killing pairing `-Re trace(BC)`.
    #[inline]
    pub fn killing(n: usize, b: &[Complex64], c: &[Complex64]) -> f64 {
        if n == 1 {
            return -(b[0] * c[0]).re;
        }
        -trace_product(n, b, c).re
    }

    /// `out += s * (BC - CB)`.
    #[inline]
    pub fn commutator_add(n: usize, b: &[Complex64], c: &[Complex64], s: f64, out: &mut [Complex64]) {
        if n == 1 {
            return;
        }
        for i in 0..n {
            for j in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..n {
                    acc += b[i * n + k] * c[k * n + j] - c[i * n + k] * b[k * n + j];
                }
                out[i * n + j] += acc * s;
            }
        }
    }

    /// `out = a * b^*`.
    pub fn mul_adjoint_right(n: usize, a: &[Complex64], b: &[Complex64], out: &mut [Complex64]) {
        for i in 0..n {
            for j in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..n {
                    acc += a[i * n + k] * b[j * n + k].conj();
                }
                out[i * n + j] = acc;
            }
        }
    }

    /// `out = g b g^*`.
    pub fn conjugate(n: usize, g: &[Complex64], b: &[Complex64], out: &mut [Complex64]) {
        let mut gb = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..n {
                    acc += g[i * n + k] * b[k * n + j];
                }
                gb[i * n + j] = acc;
            }
        }
        mul_adjoint_right(n, &gb, g, out);
    }

    pub fn project_skew_in_place(n: usize, m: &mut [Complex64]) {
        for i in 0..n {
            for j in i..n {
                let a = m[i * n + j];
                let b = m[j * n + i];
                let v = (a - b.conj()) * 0.5;
                m[i * n + j] = v;
                m[j * n + i] = -v.conj();
            }
        }
    }

    /// `max |M + M*|` over entries.
    pub fn skew_deviation(n: usize, m: &[Complex64]) -> f64 {
        let mut dev: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                dev = dev.max((m[i * n + j] + m[j * n + i].conj()).norm());
            }
        }
        dev
    }
}
