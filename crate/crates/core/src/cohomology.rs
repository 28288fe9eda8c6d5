//! Class-level bookkeeping: singular time, collapse factor `E(t)`, reference
//! coefficients, predicted volumes, and the normalized volume form `Omega`.
//!
//! Conventions: the round fibre form has `Ric = 2 w_rnd` and area `2 pi`, so
//! `2 pi c1(P^1) = [2 w_rnd]` and the anticanonical coefficients are small
//! integers. `Omega` is pinned by `Ric Omega = lambda w_0 - f*eta/(1-e^{-T})`
//! together with `int Omega = int binom(n,m) w_0^{n-m} ^ f*eta^m`, and is
//! stored as a log-density to stay well conditioned near the singular time.

use serde::{Deserialize, Serialize};

use crate::error::{CohomologyError, ModelError};
use crate::grid::{AxisKind, Field};
use crate::models::{Model, ModelKind, ModelSpec};

/// Closed-form class data of a model flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassData {
    pub kind: ModelKind,
    pub a0: f64,
    pub b0: f64,
    /// Singular time `T = log((a0+2)/2)`.
    pub t_singular: f64,
    /// `lambda = e^{-T}/(1-e^{-T}) = 2/a0`.
    pub lambda: f64,
    /// Fibre class coefficient at `T` (identically zero).
    pub fibre_limit_coeff: f64,
    /// Base class coefficient `c_B` of the limit class `[f* eta]`.
    pub base_limit_coeff: f64,
    /// Area of the unit base form.
    pub unit_base_area: f64,
}

impl ClassData {
    /// `E(t) = (e^{-t} - e^{-T})/(1 - e^{-T})`, assuming `t` in range.
    pub fn e_factor_unchecked(&self, t: f64) -> f64 {
        let et = (-self.t_singular).exp();
        ((-t).exp() - et) / (1.0 - et)
    }

    pub fn e_factor(&self, t: f64) -> Result<f64, CohomologyError> {
        e_factor(t, self.t_singular)
    }
}

/// `E(t)` for a flow with singular time `t_singular`.
pub fn e_factor(t: f64, t_singular: f64) -> Result<f64, CohomologyError> {
    if !(0.0..=t_singular).contains(&t) {
        return Err(CohomologyError::OutOfRange { t, t_max: t_singular });
    }
    let et = (-t_singular).exp();
    Ok(((-t).exp() - et) / (1.0 - et))
}

/// Compute the class data of a model; fails if the limit class degenerates.
pub fn class_data(spec: &ModelSpec) -> Result<ClassData, ModelError> {
    let t_singular = ((spec.a0 + 2.0) / 2.0).ln();
    let et = (-t_singular).exp();
    let lambda = et / (1.0 - et);
    let base_limit_coeff = match spec.kind {
        ModelKind::ProductFlat => et * spec.b0,
        ModelKind::SphereBase => et * spec.b0 - 2.0 * (1.0 - et),
    };
    if base_limit_coeff <= 0.0 {
        return Err(ModelError::InvalidClass {
            why: format!(
                "base limit coefficient c_B = {base_limit_coeff:.6} <= 0 (need b0 > a0 on the sphere base)"
            ),
        });
    }
    let unit_base_area = match spec.kind {
        ModelKind::SphereBase => 2.0 * std::f64::consts::PI,
        ModelKind::ProductFlat => 8.0 * std::f64::consts::PI.powi(2),
    };
    Ok(ClassData {
        kind: spec.kind,
        a0: spec.a0,
        b0: spec.b0,
        t_singular,
        lambda,
        fibre_limit_coeff: 0.0,
        base_limit_coeff,
        unit_base_area,
    })
}

/// Class coefficients of `omega_REF(t)`: `(fibre, cross, base)`.
pub fn reference_coefficients(class: &ClassData, t: f64) -> (f64, f64, f64) {
    let e = class.e_factor_unchecked(t);
    (e * class.a0, 0.0, e * class.b0 + (1.0 - e) * class.base_limit_coeff)
}

/// `int_X omega(t)^2` from class arithmetic (exact polynomial in `E(t)`).
pub fn predicted_volume(class: &ClassData, t: f64) -> f64 {
    let (fc, _, bc) = reference_coefficients(class, t);
    2.0 * fc * bc * 2.0 * std::f64::consts::PI * class.unit_base_area
}

/// Closed-form `int Omega_{w0,eta} = 2 a0 c_B (2 pi) A_B`.
pub fn omega0_eta_integral_exact(class: &ClassData) -> f64 {
    2.0 * class.a0
        * class.base_limit_coeff
        * 2.0
        * std::f64::consts::PI
        * class.unit_base_area
}

/// The normalized volume form `Omega`.
#[derive(Debug, Clone)]
pub struct ReferenceVolume {
    /// Normalization constant fixed by the integral condition.
    pub kappa: f64,
    /// Normalized density `D = Omega / (s_f^2 s_b^2 chart volume)`.
    pub density: Field,
    /// Cached `log D`.
    pub log_density: Field,
    /// Sup-norm residual of `Ric Omega = lambda w_0 - f*eta/(1-e^{-T})`.
    pub ric_residual_sup: f64,
    /// Quadrature value of `int Omega = int Omega_{w0,eta}`.
    pub total_mass: f64,
}

/// Build `Omega` on a model: `D = kappa * u_b * e^{-lambda psi0}`, with
/// `kappa` fixed so the grid quadratures of `Omega` and `Omega_{w0,eta}`
/// match exactly.
pub fn reference_volume_form(
    model: &Model,
    class: &ClassData,
) -> Result<ReferenceVolume, CohomologyError> {
    let grid = &model.grid;
    let u_b = model.unit_base_density;
    let eta_bb = model.eta_bb();

    // Target: quadrature of 2 w_0 ^ f*eta. Only the ff x bb wedge survives.
    let mut target = 0.0;
    let mut denom = 0.0;
    for i in 0..model.nf() {
        for j in 0..model.nb() {
            let w = grid.vol_weight(i, j);
            target += 2.0 * model.n0[0].at(i, j) * eta_bb * w;
            denom += u_b * (-class.lambda * model.psi0.at(i, j)).exp() * w;
        }
    }
    if !(denom.is_finite() && denom > 0.0) {
        return Err(CohomologyError::NormalizationFailure { integral: denom });
    }
    let kappa = target / denom;
    let log_density = model.psi0.map(|p| (kappa * u_b).ln() - class.lambda * p);
    let density = log_density.map(f64::exp);

    // Ric Omega residual against lambda w_0 - f*eta / (1 - e^{-T}).
    let h = grid.hessian(&log_density);
    let fibre_curv = 2.0;
    let base_curv = if grid.base.kind == AxisKind::PolarLatitude { 2.0 } else { 0.0 };
    let inv_one_minus = 1.0 / (1.0 - (-class.t_singular).exp());
    let mut ric_residual_sup: f64 = 0.0;
    for i in 0..model.nf() {
        for j in 0..model.nb() {
            let ric = [
                fibre_curv - h[0].at(i, j),
                -h[1].at(i, j),
                base_curv - h[2].at(i, j),
            ];
            let chi = [
                class.lambda * model.n0[0].at(i, j),
                class.lambda * model.n0[1].at(i, j),
                class.lambda * model.n0[2].at(i, j) - inv_one_minus * eta_bb,
            ];
            for k in 0..3 {
                ric_residual_sup = ric_residual_sup.max((ric[k] - chi[k]).abs());
            }
        }
    }

    Ok(ReferenceVolume { kappa, density, log_density, ric_residual_sup, total_mass: target })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::StencilOrder;
    use crate::models::{build_model, GridSpec, InitialPerturbation, ModelSpec};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pf_spec(n: usize) -> ModelSpec {
        ModelSpec {
            kind: ModelKind::ProductFlat,
            a0: 2.0,
            b0: 1.0,
            psi0: InitialPerturbation::zero(),
            grid: GridSpec::square(n, StencilOrder::Two),
        }
    }

    fn sb_spec(n: usize) -> ModelSpec {
        ModelSpec {
            kind: ModelKind::SphereBase,
            a0: 2.0,
            b0: 6.0,
            psi0: InitialPerturbation::zero(),
            grid: GridSpec::square(n, StencilOrder::Two),
        }
    }

    #[test]
    fn class_data_frozen_values() {
        let c = class_data(&pf_spec(32)).unwrap();
        assert_abs_diff_eq!(c.t_singular, 0.693147180559945, epsilon = 1e-12);
        assert_abs_diff_eq!(c.lambda, 1.0, epsilon = 1e-14);
        // Fano-fibre identity lambda a0 = 2 in both models.
        assert_abs_diff_eq!(c.lambda * c.a0, 2.0, epsilon = 1e-14);
        let cs = class_data(&sb_spec(32)).unwrap();
        assert_abs_diff_eq!(cs.base_limit_coeff, 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(cs.lambda * cs.a0, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn degenerate_class_limit() {
        let mut spec = pf_spec(32);
        spec.a0 = 1e-8;
        let c = class_data(&spec).unwrap();
        assert!(c.t_singular > 0.0 && c.t_singular < 1e-7);
    }

    #[test]
    fn e_factor_endpoints_and_midpoint() {
        let t_sing = 2.0f64.ln();
        assert_abs_diff_eq!(e_factor(0.0, t_sing).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e_factor(t_sing, t_sing).unwrap(), 0.0, epsilon = 1e-15);
        // (2^{-1/2} - 1/2)/(1/2) = sqrt(2) - 1
        assert_abs_diff_eq!(
            e_factor(t_sing / 2.0, t_sing).unwrap(),
            0.414214,
            epsilon = 1e-6
        );
        assert_abs_diff_eq!(
            e_factor(t_sing / 2.0, t_sing).unwrap(),
            2.0f64.sqrt() - 1.0,
            epsilon = 1e-15
        );
        assert!(e_factor(-0.1, t_sing).is_err());
        assert!(e_factor(t_sing + 0.1, t_sing).is_err());
    }

    proptest! {
        #[test]
        fn e_factor_mean_value_bounds(a0 in 0.5f64..8.0, frac in 0.0f64..1.0) {
            let mut spec = pf_spec(32);
            spec.a0 = a0;
            let c = class_data(&spec).unwrap();
            let t_sing = c.t_singular;
            let t = frac * t_sing;
            let e = c.e_factor_unchecked(t);
            let et = (-t_sing).exp();
            let lo = (t_sing - t) * et / (1.0 - et);
            let hi = (t_sing - t) / (1.0 - et);
            prop_assert!(e >= lo - 1e-12 && e <= hi + 1e-12);
        }
    }

    #[test]
    fn e_factor_monotone_on_thousand_points() {
        let c = class_data(&sb_spec(32)).unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..=1000 {
            let t = c.t_singular * k as f64 / 1000.0;
            let e = c.e_factor_unchecked(t);
            assert!(e < prev);
            prev = e;
        }
    }

    #[test]
    fn reference_coefficients_match_class_evolution() {
        for spec in [pf_spec(32), sb_spec(32)] {
            let c = class_data(&spec).unwrap();
            for k in 0..50 {
                let t = c.t_singular * k as f64 / 50.0;
                let (fc, cross, bc) = reference_coefficients(&c, t);
                assert_eq!(cross, 0.0);
                // e^{-t}[w_0] - (1-e^{-t}) 2 pi c_1, componentwise
                let fibre_class = (-t).exp() * (spec.a0 + 2.0) - 2.0;
                assert_abs_diff_eq!(fc, fibre_class, epsilon = 1e-13);
                let base_class = match spec.kind {
                    ModelKind::ProductFlat => (-t).exp() * spec.b0,
                    ModelKind::SphereBase => (-t).exp() * (spec.b0 + 2.0) - 2.0,
                };
                assert_abs_diff_eq!(bc, base_class, epsilon = 1e-13);
            }
            let (f0, _, b0) = reference_coefficients(&c, 0.0);
            assert_abs_diff_eq!(f0, spec.a0, epsilon = 1e-14);
            assert_abs_diff_eq!(b0, spec.b0, epsilon = 1e-13);
            let (ft, _, bt) = reference_coefficients(&c, c.t_singular);
            assert_abs_diff_eq!(ft, 0.0, epsilon = 1e-14);
            assert_abs_diff_eq!(bt, c.base_limit_coeff, epsilon = 1e-13);
        }
    }

    #[test]
    fn predicted_volume_limits() {
        let c = class_data(&pf_spec(32)).unwrap();
        let two_pi = 2.0 * std::f64::consts::PI;
        assert_abs_diff_eq!(
            predicted_volume(&c, 0.0),
            2.0 * 2.0 * 1.0 * two_pi * c.unit_base_area,
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(predicted_volume(&c, c.t_singular), 0.0, epsilon = 1e-12);
        // E^{-1} Vol near T approaches int Omega_{w0,eta} to 1e-4 relative
        let t = c.t_singular - 1e-6;
        let e = c.e_factor_unchecked(t);
        let lim = omega0_eta_integral_exact(&c);
        assert!((predicted_volume(&c, t) / e - lim).abs() / lim < 1e-4);
    }

    #[test]
    fn volume_over_e_monotone_to_limit() {
        for spec in [pf_spec(32), sb_spec(32)] {
            let c = class_data(&spec).unwrap();
            let lim = omega0_eta_integral_exact(&c);
            let mut prev = f64::INFINITY;
            for k in 0..200 {
                let t = (c.t_singular - 1e-9) * k as f64 / 199.0;
                let v = predicted_volume(&c, t) / c.e_factor_unchecked(t);
                assert!(v <= prev + 1e-9);
                prev = v;
            }
            assert!((prev - lim).abs() / lim < 1e-6);
        }
    }

    #[test]
    fn volume_form_product_flat_zero() {
        let model = build_model(&pf_spec(48)).unwrap();
        let c = model.class;
        let rv = reference_volume_form(&model, &c).unwrap();
        // D_Omega = 2 a0 e^{-T} b0 x (round x flat density): kappa = 2 a0 c_B
        // exactly (the quadrature factors cancel).
        assert_abs_diff_eq!(rv.kappa, 2.0 * c.a0 * c.base_limit_coeff, epsilon = 1e-12);
        // chart density at a node: kappa * u_b * s_f^2 * s_b^2 = kappa * h''(rho_f)
        let i = 11;
        let s = model.grid.fibre.s[i];
        let chart = rv.density.at(i, 3) * s * s * 0.25;
        assert_abs_diff_eq!(chart, rv.kappa * s * s, epsilon = 1e-12);
        assert!(rv.ric_residual_sup < 1e-10);
    }

    #[test]
    fn volume_form_sphere_base_mass() {
        let model = build_model(&sb_spec(64)).unwrap();
        let c = model.class;
        let rv = reference_volume_form(&model, &c).unwrap();
        assert_abs_diff_eq!(rv.kappa, 2.0 * c.a0 * c.base_limit_coeff, epsilon = 1e-12);
        // int Omega = 2 a0 c_B (2 pi)^2, analytic, up to quadrature error
        let exact = omega0_eta_integral_exact(&c);
        assert!((rv.total_mass - exact).abs() / exact < 2e-3);
        // quadrature self-consistency is exact
        let mut q = 0.0;
        for i in 0..model.nf() {
            for j in 0..model.nb() {
                q += rv.density.at(i, j) * model.grid.vol_weight(i, j);
            }
        }
        assert_abs_diff_eq!(q, rv.total_mass, epsilon = 1e-9 * exact);
    }

    #[test]
    fn ric_identity_holds_for_perturbed_models() {
        let mut spec = sb_spec(48);
        spec.psi0 = InitialPerturbation::coupled_bump(0.08, 0.25, 0.6, -0.3, 0.6);
        let model = build_model(&spec).unwrap();
        let rv = reference_volume_form(&model, &model.class).unwrap();
        assert!(rv.ric_residual_sup < 1e-9, "residual {}", rv.ric_residual_sup);
    }
}
