//! Neumann eigenbasis of the unit interval and the operators built on it.
//!
//! The second-derivative operator with zero-flux boundary conditions on
//! (0,1) diagonalizes over the cosine family
//!
//! ```text
//! e_0(x) = 1,   e_k(x) = sqrt(2) cos(k pi x),   mu_0 = 0,  mu_k = -(k pi)^2.
//! ```
//!
//! Working in coefficients over this basis turns the heat semigroup, its
//! fractional powers, and the boundary influence operators into diagonal
//! arithmetic. Pointwise nonlinearities are evaluated pseudo-spectrally on a
//! midpoint grid sized for dealiasing (`grid_size >= 2 * n_modes`), where the
//! sampled basis is exactly orthonormal under uniform quadrature weights.
//!
//! Boundary influence: flux actuation at an endpoint enters the dynamics
//! through `(lambda - A) d`, where `d` solves the stationary problem
//! `lambda d - d'' = 0` with unit inward flux at the chosen endpoint. The
//! modal coefficients of the composite map,
//!
//! ```text
//! b_k = (lambda - mu_k) <d, e_k>,
//! ```
//!
//! collapse to endpoint values of the eigenfunctions: `b_k = -e_k(0)` for the
//! left endpoint and `b_k = e_k(1)` for the right, independent of `lambda`.
//! Their non-decay in `k` is what makes the boundary forcing rougher than any
//! interior forcing, and
//!
//! ```text
//! smoothing_norm(t) = sqrt( sum_k b_k^2 exp(2 mu_k t) )  ~  t^(-1/4)
//! ```
//!
//! quantifies exactly how much of that roughness the semigroup absorbs.

use crate::error::Error;
use crate::Result;

/// Which endpoint of (0,1) a boundary map acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Left, Side::Right];

    /// Stable index used for arrays and CSV columns: left = 0, right = 1.
    pub fn index(self) -> usize {
        match self {
            Side::Left => 0,
            Side::Right => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

/// Coefficient vector over the Neumann eigenbasis.
///
/// The Euclidean norm of the coefficients equals the L2(0,1) norm of the
/// represented function (the basis is orthonormal), so no weights appear
/// anywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalVector {
    pub coeffs: Vec<f64>,
}

impl ModalVector {
    pub fn zeros(n_modes: usize) -> Self {
        ModalVector {
            coeffs: vec![0.0; n_modes],
        }
    }

    pub fn from_coeffs(coeffs: Vec<f64>) -> Self {
        ModalVector { coeffs }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// L2(0,1) norm of the represented function.
    pub fn h_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &ModalVector) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a * b)
            .sum()
    }
}

/// Modal representation of one endpoint's influence on the dynamics.
#[derive(Debug, Clone)]
pub struct BoundaryMap {
    pub side: Side,
    pub lambda: f64,
    /// Modal coefficients of the stationary unit-flux profile `d`.
    pub d_coeffs: Vec<f64>,
    /// `b_k = (lambda - mu_k) * d_k`; the form the dynamics consume.
    pub b_coeffs: Vec<f64>,
}

/// Truncated Neumann eigenbasis plus the dealiased evaluation grid.
///
/// Transform tables are dense and row-major; at the mode counts this crate
/// targets (N <= 512) the matrix transforms stay cache-resident and beat FFT
/// setup overhead.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    n_modes: usize,
    grid_size: usize,
    lambda: f64,
    eigenvalues: Vec<f64>,
    grid_points: Vec<f64>,
    /// `grid_from_modal[m * n_modes + k] = e_k(x_m)`.
    grid_from_modal: Vec<f64>,
    /// `modal_from_grid[k * grid_size + m] = e_k(x_m) / grid_size`.
    modal_from_grid: Vec<f64>,
}

impl SpectralBasis {
    /// Builds the basis. `grid_size >= 2 * n_modes` keeps quadratic and cubic
    /// pointwise operations alias-free after projection back onto the first
    /// `n_modes` modes.
    pub fn new(n_modes: usize, lambda: f64, grid_size: usize) -> Result<Self> {
        if n_modes < 2 {
            return Err(Error::InvalidBasis(format!(
                "n_modes = {n_modes}, need at least 2"
            )));
        }
        if !(lambda > 0.0) {
            return Err(Error::InvalidBasis(format!(
                "lambda = {lambda}, need lambda > 0"
            )));
        }
        if grid_size < 2 * n_modes {
            return Err(Error::InvalidBasis(format!(
                "grid_size = {grid_size} < 2 * n_modes = {}",
                2 * n_modes
            )));
        }

        let eigenvalues: Vec<f64> = (0..n_modes)
            .map(|k| {
                let kpi = k as f64 * std::f64::consts::PI;
                -kpi * kpi
            })
            .collect();

        let grid_points: Vec<f64> = (0..grid_size)
            .map(|m| (m as f64 + 0.5) / grid_size as f64)
            .collect();

        let mut grid_from_modal = vec![0.0; grid_size * n_modes];
        let mut modal_from_grid = vec![0.0; n_modes * grid_size];
        let sqrt2 = std::f64::consts::SQRT_2;
        for (m, &x) in grid_points.iter().enumerate() {
            for k in 0..n_modes {
                let e = if k == 0 {
                    1.0
                } else {
                    sqrt2 * (k as f64 * std::f64::consts::PI * x).cos()
                };
                grid_from_modal[m * n_modes + k] = e;
                modal_from_grid[k * grid_size + m] = e / grid_size as f64;
            }
        }

        Ok(SpectralBasis {
            n_modes,
            grid_size,
            lambda,
            eigenvalues,
            grid_points,
            grid_from_modal,
            modal_from_grid,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvalue(&self, k: usize) -> f64 {
        self.eigenvalues[k]
    }

    /// Midpoint quadrature nodes `(m + 1/2) / grid_size`.
    pub fn grid_points(&self) -> &[f64] {
        &self.grid_points
    }

    /// Eigenfunction value `e_k(x)` at an arbitrary point.
    pub fn eigenfunction(&self, k: usize, x: f64) -> f64 {
        if k == 0 {
            1.0
        } else {
            std::f64::consts::SQRT_2 * (k as f64 * std::f64::consts::PI * x).cos()
        }
    }

    fn check_len(&self, v: &ModalVector) -> Result<()> {
        if v.len() != self.n_modes {
            return Err(Error::DimensionMismatch(format!(
                "modal vector has {} coefficients, basis has {} modes",
                v.len(),
                self.n_modes
            )));
        }
        Ok(())
    }

    /// Applies the heat semigroup `exp(tA)`: mode k scales by `exp(mu_k t)`.
    pub fn semigroup_apply(&self, t: f64, v: &ModalVector) -> Result<ModalVector> {
        self.check_len(v)?;
        if !(t >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "semigroup time t = {t}, need t >= 0"
            )));
        }
        let coeffs = v
            .coeffs
            .iter()
            .zip(&self.eigenvalues)
            .map(|(c, mu)| c * (mu * t).exp())
            .collect();
        Ok(ModalVector::from_coeffs(coeffs))
    }

    /// Applies `(lambda - A)^sigma`: mode k scales by `(lambda - mu_k)^sigma`.
    /// Negative `sigma` smooths, positive roughens.
    pub fn fractional_apply(&self, sigma: f64, v: &ModalVector) -> Result<ModalVector> {
        self.check_len(v)?;
        let coeffs = v
            .coeffs
            .iter()
            .zip(&self.eigenvalues)
            .map(|(c, mu)| c * (self.lambda - mu).powf(sigma))
            .collect();
        Ok(ModalVector::from_coeffs(coeffs))
    }

    /// Modal coefficients -> grid samples. `grid` must have `grid_size` slots.
    pub fn to_grid(&self, modal: &[f64], grid: &mut [f64]) {
        debug_assert_eq!(modal.len(), self.n_modes);
        debug_assert_eq!(grid.len(), self.grid_size);
        let n = self.n_modes;
        for (m, g) in grid.iter_mut().enumerate() {
            let row = &self.grid_from_modal[m * n..(m + 1) * n];
            *g = dot_unrolled(row, modal);
        }
    }

    /// Grid samples -> modal coefficients of the projection onto the first
    /// `n_modes` modes. Exact for band-limited samples below the grid's
    /// aliasing threshold.
    pub fn to_modal(&self, grid: &[f64], modal: &mut [f64]) {
        debug_assert_eq!(grid.len(), self.grid_size);
        debug_assert_eq!(modal.len(), self.n_modes);
        let mm = self.grid_size;
        for (k, c) in modal.iter_mut().enumerate() {
            let row = &self.modal_from_grid[k * mm..(k + 1) * mm];
            *c = dot_unrolled(row, grid);
        }
    }

    /// Composition with a pointwise map: samples `v` on the grid, applies
    /// `f` at each node, projects back onto the first `n_modes` modes.
    pub fn nemytskii_apply(&self, f: impl Fn(f64) -> f64, v: &ModalVector) -> Result<ModalVector> {
        self.check_len(v)?;
        let mut grid = vec![0.0; self.grid_size];
        self.to_grid(&v.coeffs, &mut grid);
        for g in grid.iter_mut() {
            *g = f(*g);
        }
        let mut out = ModalVector::zeros(self.n_modes);
        self.to_modal(&grid, &mut out.coeffs);
        Ok(out)
    }

    /// Stationary unit-flux influence map for one endpoint.
    ///
    /// `d_coeffs` hold the modal coefficients of the profile
    /// `d(x) = -cosh(sqrt(lambda)(1-x)) / (sqrt(lambda) sinh(sqrt(lambda)))`
    /// (left; mirrored for right), obtained in closed form from the
    /// flux-pairing identity `(lambda - mu_k) <d, e_k> = -+ e_k(endpoint)`.
    /// `b_coeffs = (lambda - mu_k) * d_coeffs` exactly, by construction.
    pub fn neumann_map(&self, side: Side) -> BoundaryMap {
        let mut d_coeffs = vec![0.0; self.n_modes];
        let mut b_coeffs = vec![0.0; self.n_modes];
        for k in 0..self.n_modes {
            let b = match side {
                Side::Left => -self.eigenfunction(k, 0.0),
                Side::Right => self.eigenfunction(k, 1.0),
            };
            b_coeffs[k] = b;
            d_coeffs[k] = b / (self.lambda - self.eigenvalues[k]);
        }
        BoundaryMap {
            side,
            lambda: self.lambda,
            d_coeffs,
            b_coeffs,
        }
    }

    /// Hilbert-Schmidt-type size of the smoothed boundary map,
    /// `sqrt(sum_k b_k^2 exp(2 mu_k t))`. Diverges like `t^(-1/4)` as t -> 0
    /// (at fixed truncation the divergence saturates once the grid of modes
    /// is exhausted).
    pub fn smoothing_norm(&self, map: &BoundaryMap, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "smoothing_norm time t = {t}, need t >= 0"
            )));
        }
        if map.b_coeffs.len() != self.n_modes {
            return Err(Error::DimensionMismatch(format!(
                "boundary map has {} modes, basis has {}",
                map.b_coeffs.len(),
                self.n_modes
            )));
        }
        let sum: f64 = map
            .b_coeffs
            .iter()
            .zip(&self.eigenvalues)
            .map(|(b, mu)| b * b * (2.0 * mu * t).exp())
            .sum();
        Ok(sum.sqrt())
    }
}

/// Dot product over four independent accumulator chains. The transform
/// matrices are applied row-by-row in hot per-step loops; breaking the
/// serial dependency of a naive reduction lets the chains pipeline, at the
/// cost of a fixed (deterministic) reassociation of the sum.
#[inline]
fn dot_unrolled(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ac = a.chunks_exact(4);
    let bc = b.chunks_exact(4);
    let (ar, br) = (ac.remainder(), bc.remainder());
    for (ca, cb) in ac.zip(bc) {
        acc[0] += ca[0] * cb[0];
        acc[1] += ca[1] * cb[1];
        acc[2] += ca[2] * cb[2];
        acc[3] += ca[3] * cb[3];
    }
    let mut tail = 0.0;
    for (x, y) in ar.iter().zip(br) {
        tail += x * y;
    }
    ((acc[0] + acc[2]) + (acc[1] + acc[3])) + tail
}

/// Exact step integrals of the semigroup used by the exponential-Euler
/// schemes: `phi(mu, h) = (exp(mu h) - 1) / mu`, continuous at `mu = 0`
/// where it equals `h`.
pub fn phi_step(mu: f64, h: f64) -> f64 {
    if mu == 0.0 {
        h
    } else {
        (mu * h).exp_m1() / mu
    }
}

/// Variance integral of the semigroup over one step:
/// `psi(mu, h) = (exp(2 mu h) - 1) / (2 mu)`, continuous at `mu = 0` where it
/// equals `h`.
pub fn psi_step(mu: f64, h: f64) -> f64 {
    if mu == 0.0 {
        h
    } else {
        (2.0 * mu * h).exp_m1() / (2.0 * mu)
    }
}
