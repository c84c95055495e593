use crate::error::{Error, Result};

/// Periodic m-dimensional lattice. Site `(i_0, .., i_{m-1})` sits at
/// `origin + h * i`; the last axis is contiguous in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    m: usize,
    extents: Vec<usize>,
    h: f64,
    origin: Vec<f64>,
    strides: Vec<usize>,
    sites: usize,
}

impl Grid {
    pub fn new(extents: Vec<usize>, h: f64, origin: Vec<f64>) -> Result<Self> {
        let m = extents.len();
        if m < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid dimension must be >= 2 (got {m})"
            )));
        }
        if let Some(e) = extents.iter().find(|&&e| e < 4) {
            return Err(Error::InvalidArgument(format!(
                "every extent must be >= 4 (got {e})"
            )));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidArgument(format!("spacing h must be positive (got {h})")));
        }
        if origin.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                actual: origin.len(),
            });
        }
        let mut strides = vec![1usize; m];
        for a in (0..m - 1).rev() {
            strides[a] = strides[a + 1] * extents[a + 1];
        }
        let sites = extents.iter().product();
        Ok(Self {
            m,
            extents,
            h,
            origin,
            strides,
            sites,
        })
    }

    /// Cubic grid with `extent` sites per axis and origin at zero.
    pub fn cubic(m: usize, extent: usize, h: f64) -> Result<Self> {
        Self::new(vec![extent; m], h, vec![0.0; m])
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    /// Cell volume `h^m`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.m as i32)
    }

    pub fn period(&self, axis: usize) -> f64 {
        self.extents[axis] as f64 * self.h
    }

    pub fn min_half_period(&self) -> f64 {
        (0..self.m).map(|a| self.period(a)).fold(f64::INFINITY, f64::min) / 2.0
    }

    pub fn volume(&self) -> f64 {
        (0..self.m).map(|a| self.period(a)).product()
    }

    #[inline]
    pub fn coord(&self, site: usize, axis: usize) -> usize {
        (site / self.strides[axis]) % self.extents[axis]
    }

    pub fn coords(&self, site: usize) -> Vec<usize> {
        (0..self.m).map(|a| self.coord(site, a)).collect()
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords
            .iter()
            .zip(&self.strides)
            .zip(&self.extents)
            .map(|((&c, &s), &e)| (c % e) * s)
            .sum()
    }

    /// Index of the site at wrapped integer coordinates.
    pub fn index_wrapped(&self, coords: &[i64]) -> usize {
        coords
            .iter()
            .zip(&self.strides)
            .zip(&self.extents)
            .map(|((&c, &s), &e)| (c.rem_euclid(e as i64) as usize) * s)
            .sum()
    }

    /// Neighbor one step forward (`forward = true`) or backward along `axis`.
    #[inline]
    pub fn neighbor(&self, site: usize, axis: usize, forward: bool) -> usize {
        let c = self.coord(site, axis);
        let e = self.extents[axis];
        let s = self.strides[axis];
        if forward {
            if c + 1 == e {
                site + s - e * s
            } else {
                site + s
            }
        } else if c == 0 {
            site + (e - 1) * s
        } else {
            site - s
        }
    }

    pub fn position(&self, site: usize) -> Vec<f64> {
        (0..self.m)
            .map(|a| self.origin[a] + self.h * self.coord(site, a) as f64)
            .collect()
    }

    /// Nearest-image displacement `to - from` on the torus.
    pub fn displacement(&self, from: &[f64], to: &[f64]) -> Vec<f64> {
        (0..self.m)
            .map(|a| {
                let l = self.period(a);
                let d = to[a] - from[a];
                d - l * (d / l).round()
            })
            .collect()
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self == other
    }
}
