//! The two symmetry-reduced Fano fibrations and their invariant-chart kernels.
//!
//! Both models are total spaces of complex dimension 2 fibred over a curve:
//!
//! * `ProductFlat`  — `P^1 x (flat torus)`, projection to the torus. The
//!   anticanonical class lives entirely in the fibre factor.
//! * `SphereBase`   — `P^1 x P^1`, projection to the second factor. The fibre
//!   class must vanish strictly first, which forces `b0 > a0`.
//!
//! Invariant Kahler forms are encoded by their normalized coefficient matrix
//! `N` (see [`crate::grid`]): the raw chart matrix is `A = S N S`, the volume
//! density against chart volume is `2 det A = 2 s_f^2 s_b^2 det N`, and the
//! round fibre form `omega_rnd = i ddbar log(1 + e^rho)` has `N_ff = 1`
//! (area `2 pi`, `Ric = 2 omega_rnd`).

use serde::{Deserialize, Serialize};

use crate::cohomology::{class_data, ClassData};
use crate::error::{FlowError, ModelError};
use crate::grid::{Axis, Field, Grid, StencilOrder};

pub const TOTAL_DIM: usize = 2;
pub const BASE_DIM: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    ProductFlat,
    SphereBase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationProfile {
    Zero,
    FibreBump,
    CoupledBump,
}

/// Smooth invariant initial perturbation `psi0`, built from `cos(latitude)`
/// (resp. `cos` of the periodic coordinate) so pole evenness is automatic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialPerturbation {
    pub profile: PerturbationProfile,
    pub amplitude: f64,
    /// Bump centre in the fibre moment coordinate `cos(theta_f) in (-1,1)`.
    pub centre: f64,
    pub width: f64,
    pub base_centre: f64,
    pub base_width: f64,
}

impl InitialPerturbation {
    pub fn zero() -> Self {
        InitialPerturbation {
            profile: PerturbationProfile::Zero,
            amplitude: 0.0,
            centre: 0.0,
            width: 1.0,
            base_centre: 0.0,
            base_width: 1.0,
        }
    }

    pub fn fibre_bump(amplitude: f64, centre: f64, width: f64) -> Self {
        InitialPerturbation {
            profile: PerturbationProfile::FibreBump,
            amplitude,
            centre,
            width,
            base_centre: 0.0,
            base_width: 1.0,
        }
    }

    pub fn coupled_bump(
        amplitude: f64,
        centre: f64,
        width: f64,
        base_centre: f64,
        base_width: f64,
    ) -> Self {
        InitialPerturbation {
            profile: PerturbationProfile::CoupledBump,
            amplitude,
            centre,
            width,
            base_centre,
            base_width,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.profile == PerturbationProfile::Zero || self.amplitude == 0.0
    }

    /// Does `psi0` vary along the base direction?
    pub fn couples_base(&self) -> bool {
        self.profile == PerturbationProfile::CoupledBump && !self.is_zero()
    }

    fn validate(&self) -> Result<(), ModelError> {
        if !self.is_zero() && (self.width <= 0.0 || self.base_width <= 0.0) {
            return Err(ModelError::InvalidGrid {
                why: "perturbation widths must be positive".into(),
            });
        }
        Ok(())
    }

    /// Evaluate at `(theta_f, theta_b)`.
    pub fn eval(&self, theta_f: f64, theta_b: f64) -> f64 {
        match self.profile {
            PerturbationProfile::Zero => 0.0,
            PerturbationProfile::FibreBump => {
                let x = (theta_f.cos() - self.centre) / self.width;
                self.amplitude * (-0.5 * x * x).exp()
            }
            PerturbationProfile::CoupledBump => {
                let x = (theta_f.cos() - self.centre) / self.width;
                let y = (theta_b.cos() - self.base_centre) / self.base_width;
                self.amplitude * (-0.5 * (x * x + y * y)).exp()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_fibre: usize,
    pub n_base: usize,
    pub stencil_order: StencilOrder,
}

impl GridSpec {
    pub fn square(n: usize, order: StencilOrder) -> Self {
        GridSpec { n_fibre: n, n_base: n, stencil_order: order }
    }
}

/// Declarative description of a model fibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Initial fibre class coefficient (of the round fibre form), > 0.
    pub a0: f64,
    /// Initial base class coefficient (of the unit base form), > 0.
    pub b0: f64,
    pub psi0: InitialPerturbation,
    pub grid: GridSpec,
}

impl ModelSpec {
    pub fn n(&self) -> usize {
        TOTAL_DIM
    }

    pub fn m(&self) -> usize {
        BASE_DIM
    }
}

/// Invariant Kahler form on the total space: normalized coefficients and the
/// cached determinant `det N` (the volume density is `2 s_f^2 s_b^2 det N`).
#[derive(Debug, Clone)]
pub struct MetricField {
    pub n_ff: Field,
    pub n_fb: Field,
    pub n_bb: Field,
    pub det: Field,
}

impl MetricField {
    fn from_coeffs(n_ff: Field, n_fb: Field, n_bb: Field) -> Self {
        let det = Field::from_fn(n_ff.nf, n_ff.nb, |i, j| {
            n_ff.at(i, j) * n_bb.at(i, j) - n_fb.at(i, j) * n_fb.at(i, j)
        });
        MetricField { n_ff, n_fb, n_bb, det }
    }

    /// First node violating Kahler positivity, if any.
    pub fn positivity_violation(&self) -> Option<(usize, usize, f64, f64)> {
        for i in 0..self.n_ff.nf {
            for j in 0..self.n_ff.nb {
                let ff = self.n_ff.at(i, j);
                let det = self.det.at(i, j);
                if !(ff > 0.0 && det > 0.0) {
                    return Some((i, j, det, ff));
                }
            }
        }
        None
    }

    /// Smallest eigenvalue of `N` over the grid (sets the explicit time step).
    pub fn min_eigenvalue(&self) -> f64 {
        let mut lo = f64::INFINITY;
        for ((&a, &c), &b) in self.n_ff.data.iter().zip(&self.n_fb.data).zip(&self.n_bb.data) {
            let mid = 0.5 * (a + b);
            let rad = (0.5 * (a - b)).hypot(c);
            lo = lo.min(mid - rad);
        }
        lo
    }

    /// Largest inverse-metric diagonal entries `(N^{-1}_ff, N^{-1}_bb)` over
    /// the grid, the per-direction diffusion scales.
    pub fn max_inverse_diag(&self) -> (f64, f64) {
        let mut ff: f64 = 0.0;
        let mut bb: f64 = 0.0;
        for idx in 0..self.det.data.len() {
            let d = self.det.data[idx];
            ff = ff.max(self.n_bb.data[idx] / d);
            bb = bb.max(self.n_ff.data[idx] / d);
        }
        (ff, bb)
    }
}

/// A built model: grids, class data, perturbation fields, and the normalized
/// coefficients of `omega_0` and of the pullback `f* eta`.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub grid: Grid,
    pub class: ClassData,
    /// `psi0` sampled on the grid.
    pub psi0: Field,
    /// Normalized Hessian of `psi0`.
    pub h_psi0: [Field; 3],
    /// Normalized coefficients of `omega_0 = a0 w_rnd + b0 unit + i ddbar psi0`.
    pub n0: [Field; 3],
    /// Normalized density of the unit base form (1 on a sphere base, 4 on the
    /// flat torus with the half-period chart).
    pub unit_base_density: f64,
    /// Area of the unit base form (2 pi sphere, 8 pi^2 flat torus).
    pub unit_base_area: f64,
}

impl Model {
    pub fn nf(&self) -> usize {
        self.grid.nf()
    }

    pub fn nb(&self) -> usize {
        self.grid.nb()
    }

    /// Normalized coefficient matrix of `f* eta = c_B * unit`.
    pub fn eta_bb(&self) -> f64 {
        self.class.base_limit_coeff * self.unit_base_density
    }

    /// Normalized reference coefficients of `omega_REF(t)` at a node.
    pub fn reference_at(&self, t: f64, i: usize, j: usize) -> [f64; 3] {
        let e = self.class.e_factor_unchecked(t);
        [
            e * self.n0[0].at(i, j),
            e * self.n0[1].at(i, j),
            e * self.n0[2].at(i, j) + (1.0 - e) * self.eta_bb(),
        ]
    }
}

/// Build and validate a model.
pub fn build_model(spec: &ModelSpec) -> Result<Model, ModelError> {
    if !(spec.a0 > 0.0) || !(spec.b0 > 0.0) {
        return Err(ModelError::InvalidClass {
            why: format!("class coefficients must be positive (a0={}, b0={})", spec.a0, spec.b0),
        });
    }
    spec.psi0.validate()?;
    let class = class_data(spec)?;

    let order = spec.grid.stencil_order;
    let fibre = Axis::latitude(spec.grid.n_fibre, order)?;
    let base = match spec.kind {
        ModelKind::SphereBase => Axis::latitude(spec.grid.n_base, order)?,
        ModelKind::ProductFlat => Axis::periodic(spec.grid.n_base, order)?,
    };
    let grid = Grid::new(fibre, base);

    let (unit_base_density, unit_base_area) = match spec.kind {
        ModelKind::SphereBase => (1.0, 2.0 * std::f64::consts::PI),
        // Flat unit form i dw \wedge dwbar over x,y in [0,2pi): A_bb = 1, so
        // the normalized density is 1/s_b^2 = 4 and the area is 8 pi^2.
        ModelKind::ProductFlat => (4.0, 8.0 * std::f64::consts::PI.powi(2)),
    };

    let psi0 = grid.field_from_fn(|tf, tb| spec.psi0.eval(tf, tb));
    let h_psi0 = grid.hessian(&psi0);
    let n0 = [
        h_psi0[0].map(|h| spec.a0 + h),
        h_psi0[1].clone(),
        h_psi0[2].map(|h| spec.b0 * unit_base_density + h),
    ];

    let model = Model {
        spec: spec.clone(),
        grid,
        class,
        psi0,
        h_psi0,
        n0,
        unit_base_density,
        unit_base_area,
    };

    // omega_0 positivity on the grid.
    let omega0 =
        MetricField::from_coeffs(model.n0[0].clone(), model.n0[1].clone(), model.n0[2].clone());
    if let Some((i, j, det, ff)) = omega0.positivity_violation() {
        return Err(ModelError::NonPositiveInitialMetric { i, j, det, ff });
    }
    Ok(model)
}

/// Assemble `omega(t) = omega_REF(t) + i ddbar phi` as a [`MetricField`].
pub fn assemble_metric(model: &Model, phi: &Field, t: f64) -> Result<MetricField, FlowError> {
    if !phi.is_finite() {
        return Err(FlowError::NonFinite { t });
    }
    let h = model.grid.hessian(phi);
    let e = model.class.e_factor_unchecked(t);
    let eta_bb = model.eta_bb();
    let n_ff = Field::from_fn(model.nf(), model.nb(), |i, j| {
        e * model.n0[0].at(i, j) + h[0].at(i, j)
    });
    let n_fb = Field::from_fn(model.nf(), model.nb(), |i, j| {
        e * model.n0[1].at(i, j) + h[1].at(i, j)
    });
    let n_bb = Field::from_fn(model.nf(), model.nb(), |i, j| {
        e * model.n0[2].at(i, j) + (1.0 - e) * eta_bb + h[2].at(i, j)
    });
    let metric = MetricField::from_coeffs(n_ff, n_fb, n_bb);
    if let Some((i, j, det, ff)) = metric.positivity_violation() {
        return Err(FlowError::PositivityLoss { i, j, t, det, ff });
    }
    Ok(metric)
}

/// `Delta_omega f = tr(omega^{-1} i ddbar f)` in the complex convention.
pub fn laplacian(model: &Model, metric: &MetricField, f: &Field) -> Field {
    let h = model.grid.hessian(f);
    contract_with_inverse(metric, &h)
}

/// `tr_omega beta` for a form with normalized coefficients `beta`.
pub fn trace_form(metric: &MetricField, beta: &[Field; 3]) -> Field {
    contract_with_inverse(metric, beta)
}

fn contract_with_inverse(metric: &MetricField, b: &[Field; 3]) -> Field {
    Field::from_fn(metric.det.nf, metric.det.nb, |i, j| {
        (metric.n_bb.at(i, j) * b[0].at(i, j) - 2.0 * metric.n_fb.at(i, j) * b[1].at(i, j)
            + metric.n_ff.at(i, j) * b[2].at(i, j))
            / metric.det.at(i, j)
    })
}

/// `|nabla f|^2_omega = g^{j kbar} f_j f_kbar` (complex convention).
pub fn gradient_norm_sq(model: &Model, metric: &MetricField, f: &Field) -> Field {
    let [gf, gb] = model.grid.gradient(f);
    Field::from_fn(metric.det.nf, metric.det.nb, |i, j| {
        let df = gf.at(i, j);
        let db = gb.at(i, j);
        (metric.n_bb.at(i, j) * df * df - 2.0 * metric.n_fb.at(i, j) * df * db
            + metric.n_ff.at(i, j) * db * db)
            / metric.det.at(i, j)
    })
}
