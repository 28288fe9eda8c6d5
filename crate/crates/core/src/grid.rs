//! Grids, fields and finite-difference stencils for torus-invariant geometry.
//!
//! Every invariant object on the fibred surfaces lives on a 2D grid indexed by
//! `(fibre latitude, base coordinate)`. A `P^1` factor is parametrised by the
//! latitude `theta = 2 arctan(e^{rho/2})` of the log chart `rho = log|z|^2`;
//! a flat torus factor by a periodic coordinate. Derivatives with respect to
//! `rho` convert via `d/drho = s(theta) d/dtheta` with `s = sin(theta)/2` on a
//! latitude axis and `s = 1/2` on the periodic axis.
//!
//! Invariant smooth functions have vanishing normal derivative at the poles,
//! so pole nodes use even-reflection ghosts. The "normalized Hessian" `H`
//! computed here is the chart Hessian with both `s` factors divided out:
//! `Hess_rho(f) = S H(f) S` with `S = diag(s_f, s_b)`. Its entries stay finite
//! at the poles, where `H_ff = 2 f_theta_theta` (the axisymmetric pole rule).

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Finite-difference order of accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StencilOrder {
    Two,
    Four,
}

impl StencilOrder {
    pub fn as_f64(self) -> f64 {
        match self {
            StencilOrder::Two => 2.0,
            StencilOrder::Four => 4.0,
        }
    }
}

/// Axis geometry: latitude segment with pole endpoints, or a full period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AxisKind {
    /// `theta in [0, pi]`, endpoints exactly on the poles, even reflection.
    PolarLatitude,
    /// Periodic coordinate on `[0, 2*pi)`, chart factor `s = 1/2`.
    Periodic,
}

/// One grid axis with its chart factors and quadrature weights.
#[derive(Debug, Clone)]
pub struct Axis {
    pub kind: AxisKind,
    pub n: usize,
    pub h: f64,
    pub order: StencilOrder,
    /// Node coordinates (latitude or periodic coordinate).
    pub theta: Vec<f64>,
    /// Chart factor `s = dtheta/drho` per node.
    pub s: Vec<f64>,
    /// `cot(theta)` at interior latitude nodes (unused entries are 0).
    cot: Vec<f64>,
    /// Trapezoid (or periodic) weights in `theta`.
    pub w: Vec<f64>,
}

impl Axis {
    pub fn latitude(n: usize, order: StencilOrder) -> Result<Self, ModelError> {
        if n < 16 {
            return Err(ModelError::InvalidGrid {
                why: format!("latitude axis needs >= 16 nodes, got {n}"),
            });
        }
        let h = std::f64::consts::PI / (n - 1) as f64;
        let theta: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
        let s: Vec<f64> = theta.iter().map(|t| t.sin() / 2.0).collect();
        let cot: Vec<f64> = theta
            .iter()
            .enumerate()
            .map(|(i, t)| if i == 0 || i == n - 1 { 0.0 } else { t.cos() / t.sin() })
            .collect();
        let mut w = vec![h; n];
        w[0] = h / 2.0;
        w[n - 1] = h / 2.0;
        Ok(Axis { kind: AxisKind::PolarLatitude, n, h, order, theta, s, cot, w })
    }

    pub fn periodic(n: usize, order: StencilOrder) -> Result<Self, ModelError> {
        if n < 16 {
            return Err(ModelError::InvalidGrid {
                why: format!("periodic axis needs >= 16 nodes, got {n}"),
            });
        }
        let h = 2.0 * std::f64::consts::PI / n as f64;
        let theta: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
        Ok(Axis {
            kind: AxisKind::Periodic,
            n,
            h,
            order,
            theta,
            s: vec![0.5; n],
            cot: vec![0.0; n],
            w: vec![h; n],
        })
    }

    pub fn is_pole(&self, i: usize) -> bool {
        self.kind == AxisKind::PolarLatitude && (i == 0 || i == self.n - 1)
    }

    /// Sample with even reflection (latitude) or wrap-around (periodic).
    #[inline]
    fn at(&self, f: &[f64], i: isize) -> f64 {
        let n = self.n as isize;
        let j = match self.kind {
            AxisKind::Periodic => i.rem_euclid(n),
            AxisKind::PolarLatitude => {
                if i < 0 {
                    -i
                } else if i >= n {
                    2 * (n - 1) - i
                } else {
                    i
                }
            }
        };
        f[j as usize]
    }

    /// First derivative in `theta`. Exactly 0 at latitude poles.
    pub fn d1(&self, f: &[f64], i: usize) -> f64 {
        if self.is_pole(i) {
            return 0.0;
        }
        let i = i as isize;
        match self.order {
            StencilOrder::Two => (self.at(f, i + 1) - self.at(f, i - 1)) / (2.0 * self.h),
            StencilOrder::Four => {
                (self.at(f, i - 2) - 8.0 * self.at(f, i - 1) + 8.0 * self.at(f, i + 1)
                    - self.at(f, i + 2))
                    / (12.0 * self.h)
            }
        }
    }

    /// Second derivative in `theta` with reflection/wrap ghosts.
    pub fn d2(&self, f: &[f64], i: usize) -> f64 {
        let i = i as isize;
        match self.order {
            StencilOrder::Two => {
                (self.at(f, i - 1) - 2.0 * self.at(f, i) + self.at(f, i + 1)) / (self.h * self.h)
            }
            StencilOrder::Four => {
                (-self.at(f, i - 2) + 16.0 * self.at(f, i - 1) - 30.0 * self.at(f, i)
                    + 16.0 * self.at(f, i + 1)
                    - self.at(f, i + 2))
                    / (12.0 * self.h * self.h)
            }
        }
    }

    /// Normalized `drho^2` entry: `f_tt + cot(theta) f_t`, with the pole rule
    /// `2 f_tt` on latitude endpoints and plain `f_tt` on a periodic axis.
    pub fn h_diag(&self, f: &[f64], i: usize) -> f64 {
        match self.kind {
            AxisKind::Periodic => self.d2(f, i),
            AxisKind::PolarLatitude => {
                if self.is_pole(i) {
                    2.0 * self.d2(f, i)
                } else {
                    self.d2(f, i) + self.cot[i] * self.d1(f, i)
                }
            }
        }
    }

    /// Dense matrix of `h_diag` acting on axis slices (for linear solves).
    pub fn h_matrix(&self) -> nalgebra::DMatrix<f64> {
        let n = self.n;
        let mut m = nalgebra::DMatrix::zeros(n, n);
        let mut basis = vec![0.0; n];
        for j in 0..n {
            basis[j] = 1.0;
            for i in 0..n {
                m[(i, j)] = self.h_diag(&basis, i);
            }
            basis[j] = 0.0;
        }
        m
    }

    /// One-sided first derivative at a latitude pole; the even-extension
    /// residual of a pole-regular field.
    pub fn one_sided_d1(&self, f: &[f64], i: usize) -> f64 {
        debug_assert!(self.is_pole(i));
        if i == 0 {
            (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * self.h)
        } else {
            (3.0 * f[self.n - 1] - 4.0 * f[self.n - 2] + f[self.n - 3]) / (2.0 * self.h)
        }
    }
}

/// Scalar field on the `(fibre, base)` grid, row-major with base fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub nf: usize,
    pub nb: usize,
    pub data: Vec<f64>,
}

impl Field {
    pub fn zeros(nf: usize, nb: usize) -> Self {
        Field { nf, nb, data: vec![0.0; nf * nb] }
    }

    pub fn constant(nf: usize, nb: usize, c: f64) -> Self {
        Field { nf, nb, data: vec![c; nf * nb] }
    }

    pub fn from_fn(nf: usize, nb: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(nf * nb);
        for i in 0..nf {
            for j in 0..nb {
                data.push(f(i, j));
            }
        }
        Field { nf, nb, data }
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.nb + j
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.nb + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.nb + j] = v;
    }

    pub fn fibre_slice(&self, j: usize) -> Vec<f64> {
        (0..self.nf).map(|i| self.at(i, j)).collect()
    }

    pub fn base_slice(&self, i: usize) -> &[f64] {
        &self.data[i * self.nb..(i + 1) * self.nb]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field { nf: self.nf, nb: self.nb, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        debug_assert_eq!(self.data.len(), other.data.len());
        Field {
            nf: self.nf,
            nb: self.nb,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn sup(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn inf(&self) -> f64 {
        self.data.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn sup_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn axpy(&mut self, a: f64, x: &Field) {
        for (d, &xv) in self.data.iter_mut().zip(&x.data) {
            *d += a * xv;
        }
    }
}

/// The 2D grid: fibre axis is always a latitude axis; the base axis is a
/// latitude axis (sphere base) or periodic (flat torus base).
#[derive(Debug, Clone)]
pub struct Grid {
    pub fibre: Axis,
    pub base: Axis,
    pub order: StencilOrder,
}

impl Grid {
    pub fn new(fibre: Axis, base: Axis) -> Self {
        let order = fibre.order;
        Grid { fibre, base, order }
    }

    pub fn nf(&self) -> usize {
        self.fibre.n
    }

    pub fn nb(&self) -> usize {
        self.base.n
    }

    pub fn zeros(&self) -> Field {
        Field::zeros(self.nf(), self.nb())
    }

    pub fn field_from_fn(&self, mut f: impl FnMut(f64, f64) -> f64) -> Field {
        Field::from_fn(self.nf(), self.nb(), |i, j| f(self.fibre.theta[i], self.base.theta[j]))
    }

    /// d/dtheta_f at a node.
    pub fn d1_f(&self, f: &Field, i: usize, j: usize) -> f64 {
        let col = f.fibre_slice(j);
        self.fibre.d1(&col, i)
    }

    /// d/dtheta_b at a node.
    pub fn d1_b(&self, f: &Field, i: usize, j: usize) -> f64 {
        self.base.d1(f.base_slice(i), j)
    }

    /// Normalized Hessian `H(f) = (H_ff, H_fb, H_bb)` over the grid.
    ///
    /// `Hess_rho(f) = S H S`, `S = diag(s_f, s_b)`; entries are pole-regular.
    pub fn hessian(&self, f: &Field) -> [Field; 3] {
        let (nf, nb) = (self.nf(), self.nb());
        let mut hff = Field::zeros(nf, nb);
        let mut hfb = Field::zeros(nf, nb);
        let mut hbb = Field::zeros(nf, nb);
        // Fibre-direction derivatives act on columns.
        let mut dtheta_f = Field::zeros(nf, nb);
        for j in 0..nb {
            let col = f.fibre_slice(j);
            for i in 0..nf {
                hff.set(i, j, self.fibre.h_diag(&col, i));
                dtheta_f.set(i, j, self.fibre.d1(&col, i));
            }
        }
        for i in 0..nf {
            let row = f.base_slice(i).to_vec();
            let drow = dtheta_f.base_slice(i).to_vec();
            for j in 0..nb {
                hbb.set(i, j, self.base.h_diag(&row, j));
                hfb.set(i, j, self.base.d1(&drow, j));
            }
        }
        [hff, hfb, hbb]
    }

    /// Normalized gradient `(f_theta_f, f_theta_b)` over the grid.
    pub fn gradient(&self, f: &Field) -> [Field; 2] {
        let (nf, nb) = (self.nf(), self.nb());
        let mut gf = Field::zeros(nf, nb);
        let mut gb = Field::zeros(nf, nb);
        for j in 0..nb {
            let col = f.fibre_slice(j);
            for i in 0..nf {
                gf.set(i, j, self.fibre.d1(&col, i));
            }
        }
        for i in 0..nf {
            let row = f.base_slice(i);
            for j in 0..nb {
                gb.set(i, j, self.base.d1(row, j));
            }
        }
        [gf, gb]
    }

    /// Chart-volume quadrature weight: integrates densities given w.r.t. the
    /// normalized convention (`F = s_f^2 s_b^2 F_hat`), i.e.
    /// `int F drho_f dalpha_f drho_b dalpha_b = sum F_hat * vol_weight`.
    pub fn vol_weight(&self, i: usize, j: usize) -> f64 {
        let two_pi = 2.0 * std::f64::consts::PI;
        two_pi * two_pi * self.fibre.s[i] * self.fibre.w[i] * self.base.s[j] * self.base.w[j]
    }

    /// Fibre quadrature weight for normalized (1,1)-densities:
    /// `int beta drho_f dalpha_f = sum beta_hat * fibre_weight`.
    pub fn fibre_weight(&self, i: usize) -> f64 {
        2.0 * std::f64::consts::PI * self.fibre.s[i] * self.fibre.w[i]
    }

    /// Base quadrature weight, same convention along the base axis.
    pub fn base_weight(&self, j: usize) -> f64 {
        2.0 * std::f64::consts::PI * self.base.s[j] * self.base.w[j]
    }

    /// Sup over latitude poles of the even-extension residual |f_theta|.
    pub fn pole_evenness_residual(&self, f: &Field) -> f64 {
        let mut r: f64 = 0.0;
        for j in 0..self.nb() {
            let col = f.fibre_slice(j);
            r = r.max(self.fibre.one_sided_d1(&col, 0).abs());
            r = r.max(self.fibre.one_sided_d1(&col, self.nf() - 1).abs());
        }
        if self.base.kind == AxisKind::PolarLatitude {
            for i in 0..self.nf() {
                let row = f.base_slice(i);
                r = r.max(self.base.one_sided_d1(row, 0).abs());
                r = r.max(self.base.one_sided_d1(row, self.nb() - 1).abs());
            }
        }
        r
    }
}
