//! Discrete differential operators on periodic grids.
//!
//! All spatial derivatives are second-order central differences
//! `D_mu f(x) = (f(x + h e_mu) - f(x - h e_mu)) / 2h`, which are exactly
//! skew-adjoint on a periodic lattice. Covariant derivatives act through the
//! adjoint representation, `nabla_mu B = D_mu B + [A_mu, B]`.

use num_complex::Complex64;
use rayon::prelude::*;

use super::fields::{pair_count, pair_index};
use super::{CurvatureField, GaugePotential, LieField, ScalarField};
use crate::error::{Error, Result};
use crate::lie::{raw, GroupElement};

/// `+ D_mu` of component `comp` of `f` at `site`, accumulated into `out` with weight `s`.
#[inline]
fn add_central_difference(
    f: &LieField,
    site: usize,
    axis: usize,
    comp: usize,
    s: f64,
    out: &mut [Complex64],
) {
    let g = f.grid();
    let w = s / (2.0 * g.h());
    let fwd = f.block(g.neighbor(site, axis, true), comp);
    let bwd = f.block(g.neighbor(site, axis, false), comp);
    for ((o, a), b) in out.iter_mut().zip(fwd).zip(bwd) {
        *o += (a - b) * w;
    }
}

fn check_potential_compat(a: &GaugePotential, f: &LieField) -> Result<()> {
    if a.n() != f.n() {
        return Err(Error::DimensionMismatch {
            expected: a.n(),
            actual: f.n(),
        });
    }
    if !a.grid().same_shape(f.grid()) {
        return Err(Error::ShapeMismatch("fields live on different grids".into()));
    }
    Ok(())
}

/// `F_{mu nu} = D_mu A_nu - D_nu A_mu + [A_mu, A_nu]` for `mu < nu`.
pub fn curvature(a: &GaugePotential) -> CurvatureField {
    let grid = a.grid().clone();
    let m = grid.m();
    let n = a.n();
    let nn = n * n;
    let pairs = pair_count(m);
    let af = a.as_field();
    let mut out = CurvatureField::zeros(&grid, n);
    out.as_field_mut()
        .data_mut()
        .par_chunks_mut(pairs * nn)
        .enumerate()
        .for_each(|(site, blocks)| {
            for mu in 0..m {
                for nu in (mu + 1)..m {
                    let p = pair_index(m, mu, nu);
                    let dst = &mut blocks[p * nn..(p + 1) * nn];
                    add_central_difference(af, site, mu, nu, 1.0, dst);
                    add_central_difference(af, site, nu, mu, -1.0, dst);
                    raw::commutator_add(n, af.block(site, mu), af.block(site, nu), 1.0, dst);
                }
            }
        });
    out
}

/// `(nabla_mu B)(x) = D_mu B(x) + [A_mu(x), B(x)]` for a one-component field `B`.
pub fn covariant_derivative(a: &GaugePotential, b: &LieField, mu: usize) -> Result<LieField> {
    let m = a.grid().m();
    if mu >= m {
        return Err(Error::InvalidArgument(format!(
            "axis {mu} out of range for an m={m} grid"
        )));
    }
    if b.components() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "covariant_derivative expects a one-component field, got {}",
            b.components()
        )));
    }
    check_potential_compat(a, b)?;
    let n = a.n();
    let mut out = LieField::zeros(b.grid(), n, 1);
    out.data_mut()
        .par_chunks_mut(n * n)
        .enumerate()
        .for_each(|(site, dst)| {
            add_central_difference(b, site, mu, 0, 1.0, dst);
            raw::commutator_add(n, a.component(site, mu), b.block(site, 0), 1.0, dst);
        });
    Ok(out)
}

/// Full covariant gradient of a potential-shaped field: component
/// `mu * m + nu` holds `nabla_mu B_nu`.
pub fn covariant_gradient(a: &GaugePotential, b: &LieField) -> Result<LieField> {
    let m = a.grid().m();
    if b.components() != m {
        return Err(Error::ShapeMismatch(format!(
            "covariant_gradient expects {m} components, got {}",
            b.components()
        )));
    }
    check_potential_compat(a, b)?;
    let n = a.n();
    let nn = n * n;
    let mut out = LieField::zeros(b.grid(), n, m * m);
    out.data_mut()
        .par_chunks_mut(m * m * nn)
        .enumerate()
        .for_each(|(site, blocks)| {
            for mu in 0..m {
                for nu in 0..m {
                    let c = mu * m + nu;
                    let dst = &mut blocks[c * nn..(c + 1) * nn];
                    add_central_difference(b, site, mu, nu, 1.0, dst);
                    raw::commutator_add(n, a.component(site, mu), b.block(site, nu), 1.0, dst);
                }
            }
        });
    Ok(out)
}

/// `(nabla^* S)_nu = -sum_mu (D_mu S_{mu nu} + [A_mu, S_{mu nu}])`, the exact
/// discrete adjoint of [`covariant_gradient`] under [`field_inner`].
pub fn divergence_star(a: &GaugePotential, s: &CurvatureField) -> Result<GaugePotential> {
    check_potential_compat(a, s.as_field())?;
    let grid = a.grid();
    let m = grid.m();
    let n = a.n();
    let nn = n * n;
    let sf = s.as_field();
    let mut out = GaugePotential::zeros(grid, n);
    out.as_field_mut()
        .data_mut()
        .par_chunks_mut(m * nn)
        .enumerate()
        .for_each(|(site, blocks)| {
            for nu in 0..m {
                let dst = &mut blocks[nu * nn..(nu + 1) * nn];
                for mu in 0..m {
                    if mu == nu {
                        continue;
                    }
                    // S_{mu nu} = sign * stored(min, max)
                    let (slot, sign) = if mu < nu {
                        (pair_index(m, mu, nu), 1.0)
                    } else {
                        (pair_index(m, nu, mu), -1.0)
                    };
                    add_central_difference(sf, site, mu, slot, -sign, dst);
                    raw::commutator_add(n, a.component(site, mu), sf.block(site, slot), -sign, dst);
                }
            }
        });
    Ok(out)
}

/// `(B, C) = h^m sum_x sum_mu <B_mu(x), C_mu(x)>`.
pub fn field_inner(b: &LieField, c: &LieField) -> Result<f64> {
    b.check_shape(c)?;
    let n = b.n();
    let nn = n * n;
    let sum: f64 = b
        .data()
        .chunks_exact(nn)
        .zip(c.data().chunks_exact(nn))
        .map(|(x, y)| raw::killing(n, x, y))
        .sum();
    Ok(b.grid().cell_volume() * sum)
}

/// `|F(x)|^2 = sum over ordered pairs mu != nu of <F_{mu nu}, F_{mu nu}>`.
pub fn energy_density(f: &CurvatureField) -> ScalarField {
    let grid = f.grid();
    let n = f.n();
    let ff = f.as_field();
    let pairs = ff.components();
    let values: Vec<f64> = (0..grid.sites())
        .into_par_iter()
        .map(|site| {
            let mut acc = 0.0;
            for p in 0..pairs {
                let blk = ff.block(site, p);
                acc += raw::killing(n, blk, blk);
            }
            (2.0 * acc).max(0.0)
        })
        .collect();
    ScalarField::new(grid, values).expect("Killing norms are nonnegative")
}

/// `YM = h^m sum_x |F(x)|^2`.
pub fn ym_energy(f: &CurvatureField) -> f64 {
    energy_density(f).integral()
}

/// `A_mu -> g A_mu g^*` site by site, for a constant `g`.
pub fn gauge_transform_constant(a: &GaugePotential, g: &GroupElement) -> Result<GaugePotential> {
    conjugate_field(a.as_field(), g).and_then(GaugePotential::from_field)
}

/// Pointwise conjugation of every component of a field.
pub fn conjugate_field(f: &LieField, g: &GroupElement) -> Result<LieField> {
    let n = f.n();
    if g.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: g.n(),
        });
    }
    let mut out = f.clone();
    out.data_mut()
        .par_chunks_mut(n * n)
        .zip(f.data().par_chunks(n * n))
        .for_each(|(dst, src)| raw::conjugate(n, g.entries(), src, dst));
    Ok(out)
}
