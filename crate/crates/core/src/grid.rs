//! Space-time grid, staggered index sets and the flat block-vector layout.
//!
//! All indices are zero-based. Cell `(i, j)` has center
//! `(x_lo + (i + 1/2) dx, y_lo + (j + 1/2) dy)`. Interior x-face `f` sits
//! between cells `f` and `f + 1` at `x_lo + (f + 1) dx`; interior y-face `g`
//! sits between rows `g` and `g + 1`. Boundary faces are never stored: their
//! flux is identically zero.
//!
//! Time levels: density lives on levels `0..=nt`, fluxes and the multiplier
//! on levels `1..=nt`. Every field is stored time-major, and inside one time
//! block x runs fastest, then y.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::scalar::Real;

/// Physical extent of the space-time box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extents<T> {
    pub x_lo: T,
    pub x_hi: T,
    pub y_lo: T,
    pub y_hi: T,
    pub t_final: T,
}

impl<T: Real> Extents<T> {
    /// `[0, 1]^2 x [0, 1]`.
    pub fn unit() -> Self {
        Self {
            x_lo: T::zero(),
            x_hi: T::one(),
            y_lo: T::zero(),
            y_hi: T::one(),
            t_final: T::one(),
        }
    }

    /// Square `[lo, hi]^2` with final time `t_final`.
    pub fn square(lo: T, hi: T, t_final: T) -> Self {
        Self {
            x_lo: lo,
            x_hi: hi,
            y_lo: lo,
            y_hi: hi,
            t_final,
        }
    }
}

/// Which staggered family a flat vector belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FieldKind {
    Density,
    FluxX,
    FluxY,
    Multiplier,
}

impl FieldKind {
    pub const ALL: [FieldKind; 4] = [
        FieldKind::Density,
        FieldKind::FluxX,
        FieldKind::FluxY,
        FieldKind::Multiplier,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FieldKind::Density => "density",
            FieldKind::FluxX => "flux_x",
            FieldKind::FluxY => "flux_y",
            FieldKind::Multiplier => "multiplier",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec<T> {
    nx: usize,
    ny: usize,
    nt: usize,
    extents: Extents<T>,
    dx: T,
    dy: T,
    dt: T,
}

impl<T: Real> GridSpec<T> {
    pub fn new(nx: usize, ny: usize, nt: usize, extents: Extents<T>) -> Result<Self> {
        if nx == 0 || ny == 0 || nt == 0 {
            return Err(Error::InvalidGrid(format!(
                "cell and step counts must be positive, got nx={nx}, ny={ny}, nt={nt}"
            )));
        }
        let Extents {
            x_lo,
            x_hi,
            y_lo,
            y_hi,
            t_final,
        } = extents;
        let finite = [x_lo, x_hi, y_lo, y_hi, t_final].iter().all(|v| v.is_finite());
        if !finite || x_hi <= x_lo || y_hi <= y_lo || t_final <= T::zero() {
            return Err(Error::InvalidGrid(format!(
                "extents must be finite and increasing, got x=[{x_lo}, {x_hi}], y=[{y_lo}, {y_hi}], T={t_final}"
            )));
        }
        Ok(Self {
            nx,
            ny,
            nt,
            extents,
            dx: (x_hi - x_lo) / T::count(nx),
            dy: (y_hi - y_lo) / T::count(ny),
            dt: t_final / T::count(nt),
        })
    }

    /// Grid on the unit box `[0, 1]^2 x [0, 1]`.
    pub fn unit(nx: usize, ny: usize, nt: usize) -> Result<Self> {
        Self::new(nx, ny, nt, Extents::unit())
    }

    /// One-dimensional grid on `[x_lo, x_hi] x [0, t_final]`; the dummy y
    /// direction has one cell of unit width so masses are plain x-integrals.
    pub fn one_d(nx: usize, nt: usize, x_lo: T, x_hi: T, t_final: T) -> Result<Self> {
        Self::new(
            nx,
            1,
            nt,
            Extents {
                x_lo,
                x_hi,
                y_lo: T::zero(),
                y_hi: T::one(),
                t_final,
            },
        )
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.nx
    }
    #[inline]
    pub fn ny(&self) -> usize {
        self.ny
    }
    #[inline]
    pub fn nt(&self) -> usize {
        self.nt
    }
    #[inline]
    pub fn extents(&self) -> &Extents<T> {
        &self.extents
    }
    #[inline]
    pub fn dx(&self) -> T {
        self.dx
    }
    #[inline]
    pub fn dy(&self) -> T {
        self.dy
    }
    #[inline]
    pub fn dt(&self) -> T {
        self.dt
    }
    #[inline]
    pub fn is_1d(&self) -> bool {
        self.ny == 1
    }

    /// Number of spatial cells, `nx * ny`.
    #[inline]
    pub fn sites(&self) -> usize {
        self.nx * self.ny
    }

    /// `dx * dy`
    #[inline]
    pub fn cell_area(&self) -> T {
        self.dx * self.dy
    }

    /// Space-time cell volume `dx * dy * dt`, the weight of the discrete L2 norm.
    #[inline]
    pub fn cell_volume(&self) -> T {
        self.dx * self.dy * self.dt
    }

    #[inline]
    pub fn x_center(&self, i: usize) -> T {
        self.extents.x_lo + (T::count(i) + T::lit(0.5)) * self.dx
    }
    #[inline]
    pub fn y_center(&self, j: usize) -> T {
        self.extents.y_lo + (T::count(j) + T::lit(0.5)) * self.dy
    }

    /// x-coordinate of cell edge `k` for `k` in `0..=nx` (edge 0 is `x_lo`).
    #[inline]
    pub fn x_edge(&self, k: usize) -> T {
        self.extents.x_lo + T::count(k) * self.dx
    }
    #[inline]
    pub fn y_edge(&self, k: usize) -> T {
        self.extents.y_lo + T::count(k) * self.dy
    }
    #[inline]
    pub fn time(&self, n: usize) -> T {
        T::count(n) * self.dt
    }

    /// Cells per time block for `kind`, as `(extent along x, extent along y)`.
    pub fn block_shape(&self, kind: FieldKind) -> (usize, usize) {
        match kind {
            FieldKind::Density | FieldKind::Multiplier => (self.nx, self.ny),
            FieldKind::FluxX => (self.nx - 1, self.ny),
            FieldKind::FluxY => (self.nx, self.ny - 1),
        }
    }

    /// First stored time level and number of stored levels.
    pub fn time_range(&self, kind: FieldKind) -> (usize, usize) {
        match kind {
            FieldKind::Density => (0, self.nt + 1),
            _ => (1, self.nt),
        }
    }

    pub fn block_len(&self, kind: FieldKind) -> usize {
        let (a, b) = self.block_shape(kind);
        a * b
    }

    pub fn field_len(&self, kind: FieldKind) -> usize {
        self.block_len(kind) * self.time_range(kind).1
    }

    /// Total primal unknowns `(P, Mx, My)`.
    pub fn unknown_count(&self) -> usize {
        self.field_len(FieldKind::Density)
            + self.field_len(FieldKind::FluxX)
            + self.field_len(FieldKind::FluxY)
    }

    /// Flat offset of `(i, j, n)` in a `kind` vector. `n` is the physical
    /// time level.
    pub fn index(&self, kind: FieldKind, i: usize, j: usize, n: usize) -> Result<usize> {
        let (ni, nj) = self.block_shape(kind);
        let (n0, count) = self.time_range(kind);
        if i >= ni || j >= nj || n < n0 || n >= n0 + count {
            return Err(Error::IndexOutOfRange {
                kind: kind.name(),
                i,
                j,
                n,
            });
        }
        Ok((n - n0) * ni * nj + j * ni + i)
    }

    /// Inverse of [`GridSpec::index`].
    pub fn unindex(&self, kind: FieldKind, offset: usize) -> Result<(usize, usize, usize)> {
        let (ni, nj) = self.block_shape(kind);
        let (n0, _) = self.time_range(kind);
        if offset >= self.field_len(kind) {
            return Err(Error::IndexOutOfRange {
                kind: kind.name(),
                i: offset,
                j: 0,
                n: 0,
            });
        }
        let block = ni * nj;
        let n = offset / block;
        let rem = offset % block;
        Ok((rem % ni, rem / ni, n + n0))
    }
}

/// The discrete unknowns in block layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSet<T> {
    pub p: Vec<T>,
    pub mx: Vec<T>,
    pub my: Vec<T>,
    pub phi: Vec<T>,
}

impl<T: Real> FieldSet<T> {
    pub fn zeros(grid: &GridSpec<T>) -> Self {
        Self {
            p: vec![T::zero(); grid.field_len(FieldKind::Density)],
            mx: vec![T::zero(); grid.field_len(FieldKind::FluxX)],
            my: vec![T::zero(); grid.field_len(FieldKind::FluxY)],
            phi: vec![T::zero(); grid.field_len(FieldKind::Multiplier)],
        }
    }

    pub fn check_shape(&self, grid: &GridSpec<T>) -> Result<()> {
        check_len("density", grid.field_len(FieldKind::Density), self.p.len())?;
        check_len("x-flux", grid.field_len(FieldKind::FluxX), self.mx.len())?;
        check_len("y-flux", grid.field_len(FieldKind::FluxY), self.my.len())?;
        check_len("multiplier", grid.field_len(FieldKind::Multiplier), self.phi.len())
    }

    pub fn field(&self, kind: FieldKind) -> &[T] {
        match kind {
            FieldKind::Density => &self.p,
            FieldKind::FluxX => &self.mx,
            FieldKind::FluxY => &self.my,
            FieldKind::Multiplier => &self.phi,
        }
    }

    /// One time level of `kind` as a slice (`n` is the physical level).
    pub fn level(&self, grid: &GridSpec<T>, kind: FieldKind, n: usize) -> &[T] {
        level_slice(grid, kind, self.field(kind), n)
    }
}

/// Slice of time level `n` inside a flat `kind` vector.
pub fn level_slice<'a, T: Real>(
    grid: &GridSpec<T>,
    kind: FieldKind,
    data: &'a [T],
    n: usize,
) -> &'a [T] {
    let block = grid.block_len(kind);
    let (n0, _) = grid.time_range(kind);
    &data[(n - n0) * block..(n - n0 + 1) * block]
}
