//! Elliptic Monge-Ampere problems on the model geometries.
//!
//! Everything here reduces to 1D problems along a single axis: the fibre
//! problems (`rho_SPR`, `rho_SKE`) are independent per base node, and the base
//! problems (`rho_B`, `rho'_B`) live on the base axis. Dense LU on the axis
//! stencil matrix does all the linear algebra.
//!
//! The fibre Kahler-Einstein equation has a one-parameter family of invariant
//! solutions (the pullbacks of the round form under `z -> c z`), and the
//! linearization `Delta + 2` annihilates `cos(theta)` exactly on that family.
//! Newton is therefore run on a bordered system that pins the conformal gauge
//! with the area moment `int cos(theta) dA = 0`; the multiplier vanishes at
//! the centred solution.

use nalgebra::{DMatrix, DVector};

use crate::cohomology::ReferenceVolume;
use crate::error::EllipticError;
use crate::grid::Field;
use crate::models::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Additive constant fixed by a zero mean against the declared weight.
    MeanZero,
    /// No free constant; the zeroth-order term of the equation pins it.
    EquationPinned,
}

/// Where an elliptic potential lives.
#[derive(Debug, Clone)]
pub enum Potential {
    OnTotalSpace(Field),
    OnBase(Vec<f64>),
}

impl Potential {
    pub fn field(&self) -> &Field {
        match self {
            Potential::OnTotalSpace(f) => f,
            Potential::OnBase(_) => panic!("base potential, not a total-space field"),
        }
    }

    pub fn base(&self) -> &[f64] {
        match self {
            Potential::OnBase(v) => v,
            Potential::OnTotalSpace(_) => panic!("total-space potential, not a base field"),
        }
    }
}

/// A solved elliptic potential with solver metadata.
#[derive(Debug, Clone)]
pub struct EllipticSolution {
    pub potential: Potential,
    /// Sup-norm of the defining equation's residual.
    pub residual_sup: f64,
    pub iterations: usize,
    /// Residual sup-norms per Newton iteration (representative solve).
    pub residual_history: Vec<f64>,
    pub normalization: Normalization,
}

/// Pushforward density `G' = f_* Omega / (V eta^m)` on the base grid.
#[derive(Debug, Clone)]
pub struct PushforwardDensity {
    pub values: Vec<f64>,
    /// `V = binom(n,m) int_{X_b} omega_{0,b}^{n-m}`.
    pub fibre_volume_v: f64,
}

impl PushforwardDensity {
    /// `int_B G' V eta`, which must equal the pushed-forward mass.
    pub fn total_mass(&self, model: &Model) -> f64 {
        let eta_bb = model.eta_bb();
        (0..model.nb())
            .map(|j| {
                self.values[j] * self.fibre_volume_v * eta_bb / model.unit_base_density
                    * model.grid.base_weight(j)
            })
            .sum()
    }
}

/// Weight selecting which pushforward feeds the base equations.
pub enum PushforwardWeight<'a> {
    /// `G' = f_* Omega / (V eta^m)` (prescribed-Ricci route).
    Plain,
    /// `G' = f_*(e^{-lambda rho_SKE} Omega) / (V eta^m)`.
    SkeWeighted(&'a Field),
}

/// Which base twisted Kahler-Einstein equation to solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseTkeVariant {
    /// `(eta + i ddbar rho)^m = G' e^rho eta^m` -> `rho_B`.
    Eta,
    /// Same with `eta/(1-e^{-T})` -> `rho'_B`.
    EtaScaled,
}

const NEWTON_TOL: f64 = 1e-12;
const NEWTON_MAX_ITER: usize = 60;

/// Solve `i ddbar rho = rhs` fibre-by-fibre with zero mean against the round
/// measure. `rhs` carries the normalized fibre-fibre coefficient.
pub fn poisson_fibre(model: &Model, rhs: &Field) -> Result<EllipticSolution, EllipticError> {
    let axis = &model.grid.fibre;
    let n = axis.n;
    let lmat = axis.h_matrix();
    let mut bordered = DMatrix::zeros(n + 1, n + 1);
    bordered.view_mut((0, 0), (n, n)).copy_from(&lmat);
    for i in 0..n {
        bordered[(i, n)] = 1.0;
        bordered[(n, i)] = axis.s[i] * axis.w[i];
    }
    let lu = bordered.lu();

    let mut rho = Field::zeros(model.nf(), model.nb());
    let mut residual_sup: f64 = 0.0;
    for j in 0..model.nb() {
        let col = rhs.fibre_slice(j);
        // Continuum solvability check at quadrature tolerance; the bordered
        // multiplier absorbs the O(h^order) discrete incompatibility.
        let mass: f64 = (0..n).map(|i| col[i] * model.grid.fibre_weight(i)).sum();
        let scale: f64 =
            (0..n).map(|i| col[i].abs() * model.grid.fibre_weight(i)).sum::<f64>() + 1.0;
        if mass.abs() > 1e-3 * scale {
            return Err(EllipticError::NonZeroMass { mass, tol: 1e-3 * scale });
        }
        let mut b = DVector::zeros(n + 1);
        for i in 0..n {
            b[i] = col[i];
        }
        let sol = lu
            .solve(&b)
            .ok_or_else(|| EllipticError::LinearSolve { context: "fibre Poisson".into() })?;
        let slice: Vec<f64> = (0..n).map(|i| sol[i]).collect();
        for i in 0..n {
            rho.set(i, j, slice[i]);
            residual_sup = residual_sup.max((axis.h_diag(&slice, i) - col[i]).abs());
        }
    }
    Ok(EllipticSolution {
        potential: Potential::OnTotalSpace(rho),
        residual_sup,
        iterations: 0,
        residual_history: Vec::new(),
        normalization: Normalization::MeanZero,
    })
}

/// Fibre-wise prescribed-Ricci potential: on each fibre,
/// `Ric(omega_0,b + i ddbar rho) = lambda omega_0,b`.
///
/// The solution form is `c_b e^{-lambda psi0} w_rnd` with `c_b` fixed by the
/// fibre area; the potential is recovered by a fibre Poisson solve.
pub fn solve_spr(model: &Model) -> Result<EllipticSolution, EllipticError> {
    let lambda = model.class.lambda;
    let (nf, nb) = (model.nf(), model.nb());
    let mut target = Field::zeros(nf, nb);
    for j in 0..nb {
        let mut area0 = 0.0;
        let mut wmass = 0.0;
        for i in 0..nf {
            let q = model.grid.fibre_weight(i);
            area0 += model.n0[0].at(i, j) * q;
            wmass += (-lambda * model.psi0.at(i, j)).exp() * q;
        }
        let c_b = area0 / wmass;
        for i in 0..nf {
            target.set(i, j, c_b * (-lambda * model.psi0.at(i, j)).exp());
        }
    }
    let rhs = target.zip(&model.n0[0], |t, f0| t - f0);
    let mut sol = poisson_fibre(model, &rhs)?;
    sol.residual_sup = spr_ricci_residual(model, sol.potential.field());
    Ok(sol)
}

/// Finite-difference Ricci residual
/// `sup |Ric(omega_0,b + i ddbar rho) - lambda omega_0,b|` along fibres;
/// the independent oracle for [`solve_spr`].
pub fn spr_ricci_residual(model: &Model, rho: &Field) -> f64 {
    let h = model.grid.hessian(rho);
    let density = model.n0[0].zip(&h[0], |f0, hr| f0 + hr);
    fibre_ricci_residual(model, &density, |i, j| model.class.lambda * model.n0[0].at(i, j))
}

/// `sup |(2 - H(log density)) - target|` over the grid, fibre direction only.
fn fibre_ricci_residual(
    model: &Model,
    density: &Field,
    target: impl Fn(usize, usize) -> f64,
) -> f64 {
    let log_density = density.map(f64::ln);
    let axis = &model.grid.fibre;
    let mut sup: f64 = 0.0;
    for j in 0..model.nb() {
        let col = log_density.fibre_slice(j);
        for i in 0..model.nf() {
            let ric = 2.0 - axis.h_diag(&col, i);
            sup = sup.max((ric - target(i, j)).abs());
        }
    }
    sup
}

/// Fibre-wise Kahler-Einstein potential: `Ric omega_SKE,b = lambda omega_SKE,b`.
///
/// Newton on `H(w) - 2 + 2 e^w = 0` (density `a0 e^w` relative to the round
/// form) with the conformal moment gauge; `rho_SKE` then comes from a fibre
/// Poisson solve, mean-zero per fibre.
pub fn solve_ske(model: &Model) -> Result<EllipticSolution, EllipticError> {
    let axis = &model.grid.fibre;
    let n = axis.n;
    let a0 = model.spec.a0;
    let lmat = axis.h_matrix();
    let cos_th: Vec<f64> = axis.theta.iter().map(|t| t.cos()).collect();
    let moment_w: Vec<f64> = (0..n).map(|i| cos_th[i] * axis.s[i] * axis.w[i]).collect();

    let (nf, nb) = (model.nf(), model.nb());
    let mut density = Field::zeros(nf, nb);
    let mut iterations = 0usize;
    let mut history: Vec<f64> = Vec::new();

    for j in 0..nb {
        // initial guess: density of omega_0,b relative to a0 * w_rnd
        let mut w: DVector<f64> =
            DVector::from_fn(n, |i, _| (model.n0[0].at(i, j) / a0).max(1e-8).ln());
        let mut mu = 0.0f64;

        let eval = |w: &DVector<f64>, mu: f64| -> (DVector<f64>, f64) {
            let ws: Vec<f64> = w.iter().cloned().collect();
            let mut f = DVector::zeros(n + 1);
            let mut sup: f64 = 0.0;
            for i in 0..n {
                let r = axis.h_diag(&ws, i) - 2.0 + 2.0 * w[i].exp() + mu * cos_th[i];
                f[i] = r;
                sup = sup.max(r.abs());
            }
            let m: f64 = (0..n).map(|i| moment_w[i] * w[i].exp()).sum();
            f[n] = m;
            (f, sup.max(m.abs()))
        };

        let (mut f, mut res) = eval(&w, mu);
        let mut trace = vec![res];
        let mut iters = 0usize;
        while res > NEWTON_TOL {
            iters += 1;
            if iters > NEWTON_MAX_ITER {
                return Err(EllipticError::NewtonDivergence { iterations: iters, trace });
            }
            let mut jac = DMatrix::zeros(n + 1, n + 1);
            jac.view_mut((0, 0), (n, n)).copy_from(&lmat);
            for i in 0..n {
                jac[(i, i)] += 2.0 * w[i].exp();
                jac[(i, n)] = cos_th[i];
                jac[(n, i)] = moment_w[i] * w[i].exp();
            }
            let step = jac.lu().solve(&f).ok_or_else(|| EllipticError::LinearSolve {
                context: "fibre Kahler-Einstein Newton".into(),
            })?;
            // step halving on residual increase
            let mut alpha = 1.0;
            loop {
                let w_new = DVector::from_fn(n, |i, _| w[i] - alpha * step[i]);
                let mu_new = mu - alpha * step[n];
                let (f_new, res_new) = eval(&w_new, mu_new);
                if res_new < res {
                    w = w_new;
                    mu = mu_new;
                    f = f_new;
                    res = res_new;
                    break;
                }
                alpha *= 0.5;
                if alpha < 1e-9 {
                    return Err(EllipticError::NewtonDivergence { iterations: iters, trace });
                }
            }
            trace.push(res);
        }
        let _ = f;
        for i in 0..n {
            density.set(i, j, a0 * w[i].exp());
        }
        if trace.len() > history.len() {
            history = trace;
        }
        iterations = iterations.max(iters);
    }

    let rhs = density.zip(&model.n0[0], |d, f0| d - f0);
    let mut sol = poisson_fibre(model, &rhs)?;
    sol.iterations = iterations;
    sol.residual_history = history;
    sol.residual_sup = {
        let h = model.grid.hessian(sol.potential.field());
        let assembled = model.n0[0].zip(&h[0], |f0, hr| f0 + hr);
        fibre_ricci_residual(model, &assembled, |i, j| model.class.lambda * assembled.at(i, j))
    };
    Ok(sol)
}

/// Pushforward density `G'` by fibre quadrature.
pub fn pushforward_g(
    model: &Model,
    refvol: &ReferenceVolume,
    weight: PushforwardWeight,
) -> PushforwardDensity {
    let (nf, nb) = (model.nf(), model.nb());
    // V is a class quantity; average the per-fibre quadratures.
    let mut v_sum = 0.0;
    for j in 0..nb {
        for i in 0..nf {
            v_sum += 2.0 * model.n0[0].at(i, j) * model.grid.fibre_weight(i);
        }
    }
    let v = v_sum / nb as f64;

    // normalized eta density on the base is c_B u_b; the ratio against the
    // pushforward drops the shared s_b^2 chart factor
    let eta_norm = model.eta_bb() / model.unit_base_density;
    let mut values = Vec::with_capacity(nb);
    for j in 0..nb {
        let mut p = 0.0;
        for i in 0..nf {
            let w = match &weight {
                PushforwardWeight::Plain => 1.0,
                PushforwardWeight::SkeWeighted(rho) => {
                    (-model.class.lambda * rho.at(i, j)).exp()
                }
            };
            p += w * refvol.density.at(i, j) / model.unit_base_density
                * model.grid.fibre_weight(i);
        }
        values.push(p / (v * eta_norm));
    }
    PushforwardDensity { values, fibre_volume_v: v }
}

/// Solve the base twisted Kahler-Einstein equation
/// `1 + Delta_{c eta} rho = G' e^rho` by damped Newton from `rho = -log G'`.
pub fn solve_base_tke(
    model: &Model,
    g: &PushforwardDensity,
    variant: BaseTkeVariant,
) -> Result<EllipticSolution, EllipticError> {
    solve_base_tke_from(model, g, variant, None)
}

/// Same as [`solve_base_tke`] with an explicit initial guess (the pinned
/// equation has a unique solution; see the uniqueness tests).
pub fn solve_base_tke_from(
    model: &Model,
    g: &PushforwardDensity,
    variant: BaseTkeVariant,
    initial: Option<Vec<f64>>,
) -> Result<EllipticSolution, EllipticError> {
    let axis = &model.grid.base;
    let n = axis.n;
    let c_eta = match variant {
        BaseTkeVariant::Eta => model.class.base_limit_coeff,
        BaseTkeVariant::EtaScaled => {
            model.class.base_limit_coeff / (1.0 - (-model.class.t_singular).exp())
        }
    };
    let scale = c_eta * model.unit_base_density;
    let lmat = axis.h_matrix() / scale;

    let mut rho = DVector::from_fn(n, |j, _| match &initial {
        Some(v) => v[j],
        None => -g.values[j].ln(),
    });

    let eval = |rho: &DVector<f64>| -> (DVector<f64>, f64, f64) {
        let lap = &lmat * rho;
        let mut f = DVector::zeros(n);
        let mut sup: f64 = 0.0;
        let mut min_density = f64::INFINITY;
        for j in 0..n {
            let density = 1.0 + lap[j];
            min_density = min_density.min(density);
            let r = density - g.values[j] * rho[j].exp();
            f[j] = r;
            sup = sup.max(r.abs());
        }
        (f, sup, min_density)
    };

    let (mut f, mut res, density0) = eval(&rho);
    if density0 <= 0.0 {
        return Err(EllipticError::PositivityLoss { iteration: 0 });
    }
    let mut trace = vec![res];
    let mut iters = 0usize;
    while res > NEWTON_TOL {
        iters += 1;
        if iters > NEWTON_MAX_ITER {
            return Err(EllipticError::NewtonDivergence { iterations: iters, trace });
        }
        let mut jac = lmat.clone();
        for j in 0..n {
            jac[(j, j)] -= g.values[j] * rho[j].exp();
        }
        let step = jac.lu().solve(&f).ok_or_else(|| EllipticError::LinearSolve {
            context: "base twisted Kahler-Einstein Newton".into(),
        })?;
        let mut alpha = 1.0;
        loop {
            let rho_new = &rho - alpha * &step;
            let (f_new, res_new, min_density) = eval(&rho_new);
            if min_density > 0.0 && res_new < res {
                rho = rho_new;
                f = f_new;
                res = res_new;
                break;
            }
            alpha *= 0.5;
            if alpha < 1e-12 {
                return Err(EllipticError::PositivityLoss { iteration: iters });
            }
        }
        trace.push(res);
    }
    let _ = f;
    Ok(EllipticSolution {
        potential: Potential::OnBase(rho.iter().cloned().collect()),
        residual_sup: res,
        iterations: iters,
        residual_history: trace,
        normalization: Normalization::EquationPinned,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohomology::reference_volume_form;
    use crate::grid::StencilOrder;
    use crate::models::{build_model, GridSpec, InitialPerturbation, ModelKind, ModelSpec};
    use approx::assert_abs_diff_eq;

    fn pf(n: usize, psi0: InitialPerturbation, order: StencilOrder) -> Model {
        build_model(&ModelSpec {
            kind: ModelKind::ProductFlat,
            a0: 2.0,
            b0: 1.0,
            psi0,
            grid: GridSpec::square(n, order),
        })
        .unwrap()
    }

    fn sb(n: usize, psi0: InitialPerturbation, order: StencilOrder) -> Model {
        build_model(&ModelSpec {
            kind: ModelKind::SphereBase,
            a0: 2.0,
            b0: 6.0,
            psi0,
            grid: GridSpec::square(n, order),
        })
        .unwrap()
    }

    #[test]
    fn poisson_zero_rhs_gives_zero() {
        let model = pf(32, InitialPerturbation::zero(), StencilOrder::Two);
        let sol = poisson_fibre(&model, &model.grid.zeros()).unwrap();
        assert!(sol.potential.field().sup_abs() < 1e-12);
    }

    #[test]
    fn poisson_recovers_manufactured_bump() {
        let model = pf(48, InitialPerturbation::zero(), StencilOrder::Two);
        let bump = model.grid.field_from_fn(|tf, _| (-(tf.cos() - 0.3).powi(2) / 0.18).exp());
        let h = model.grid.hessian(&bump);
        let sol = poisson_fibre(&model, &h[0]).unwrap();
        // recovered = bump minus its round mean, to LU precision
        let rho = sol.potential.field();
        let mean: f64 = (0..model.nf())
            .map(|i| bump.at(i, 0) * model.grid.fibre_weight(i))
            .sum::<f64>()
            / (0..model.nf()).map(|i| model.grid.fibre_weight(i)).sum::<f64>();
        for i in 0..model.nf() {
            assert_abs_diff_eq!(rho.at(i, 0), bump.at(i, 0) - mean, epsilon = 1e-9);
        }
    }

    #[test]
    fn poisson_converges_at_stencil_order() {
        // analytic rhs H(cos^3) = 6c - 12c^3, solution cos^3 (round mean 0)
        let mut errs = Vec::new();
        for n in [33usize, 65, 129] {
            let model = pf(n, InitialPerturbation::zero(), StencilOrder::Two);
            let rhs = model.grid.field_from_fn(|tf, _| {
                let c = tf.cos();
                6.0 * c - 12.0 * c * c * c
            });
            let sol = poisson_fibre(&model, &rhs).unwrap();
            let rho = sol.potential.field();
            let e = (0..n)
                .map(|i| (rho.at(i, 0) - model.grid.fibre.theta[i].cos().powi(3)).abs())
                .fold(0.0f64, f64::max);
            errs.push(e);
        }
        let r1 = (errs[0] / errs[1]).log2();
        let r2 = (errs[1] / errs[2]).log2();
        assert!(r1 > 1.8 && r2 > 1.8, "rates {r1:.2} {r2:.2}");
    }

    #[test]
    fn poisson_rejects_nonzero_mass() {
        let model = pf(32, InitialPerturbation::zero(), StencilOrder::Two);
        let rhs = Field::constant(model.nf(), model.nb(), 1.0);
        assert!(matches!(poisson_fibre(&model, &rhs), Err(EllipticError::NonZeroMass { .. })));
    }

    #[test]
    fn spr_trivial_for_zero_perturbation() {
        let model = pf(32, InitialPerturbation::zero(), StencilOrder::Two);
        let sol = solve_spr(&model).unwrap();
        assert!(sol.potential.field().sup_abs() < 1e-12);
        assert!(sol.residual_sup < 1e-10);
    }

    #[test]
    fn spr_prescribed_ricci_residual_small_on_fine_grid() {
        let model =
            pf(129, InitialPerturbation::fibre_bump(0.12, 0.25, 0.55), StencilOrder::Four);
        let sol = solve_spr(&model).unwrap();
        assert!(sol.residual_sup < 1e-5, "residual {}", sol.residual_sup);
    }

    #[test]
    fn spr_preserves_fibre_areas() {
        let model = sb(
            48,
            InitialPerturbation::coupled_bump(0.08, 0.25, 0.6, -0.3, 0.6),
            StencilOrder::Two,
        );
        let sol = solve_spr(&model).unwrap();
        let h = model.grid.hessian(sol.potential.field());
        for j in 0..model.nb() {
            let mut area = 0.0;
            let mut area0 = 0.0;
            for i in 0..model.nf() {
                let q = model.grid.fibre_weight(i);
                area += (model.n0[0].at(i, j) + h[0].at(i, j)) * q;
                area0 += model.n0[0].at(i, j) * q;
            }
            // cohomology preserved to quadrature tolerance
            assert_abs_diff_eq!(area, area0, epsilon = 1e-4 * area0);
        }
    }

    #[test]
    fn spr_and_ske_forms_are_psi0_gauge_invariant() {
        let model = sb(
            40,
            InitialPerturbation::coupled_bump(0.06, 0.2, 0.6, -0.2, 0.7),
            StencilOrder::Two,
        );
        let mut shifted = model.clone();
        shifted.psi0 = shifted.psi0.map(|p| p + 3.7); // i ddbar of constants is 0
        for (a, b) in [
            (solve_spr(&model).unwrap(), solve_spr(&shifted).unwrap()),
            (solve_ske(&model).unwrap(), solve_ske(&shifted).unwrap()),
        ] {
            let ha = model.grid.hessian(a.potential.field());
            let hb = model.grid.hessian(b.potential.field());
            let gap = ha[0].zip(&hb[0], |x, y| x - y).sup_abs();
            assert!(gap < 1e-8, "form gap {gap}");
        }
    }

    #[test]
    fn ske_trivial_for_zero_perturbation() {
        let model = pf(32, InitialPerturbation::zero(), StencilOrder::Two);
        let sol = solve_ske(&model).unwrap();
        assert!(sol.potential.field().sup_abs() < 1e-10);
    }

    #[test]
    fn ske_lands_on_round_metric_uniqueness_oracle() {
        // Uniqueness of the centred Kahler-Einstein form forces
        // omega_SKE,b = a0 w_rnd, i.e. rho_SKE + psi0 fibre-wise constant.
        let model = sb(
            48,
            InitialPerturbation::coupled_bump(0.08, 0.3, 0.6, -0.25, 0.65),
            StencilOrder::Two,
        );
        let sol = solve_ske(&model).unwrap();
        let total = sol.potential.field().zip(&model.psi0, |r, p| r + p);
        for j in 0..model.nb() {
            let col = total.fibre_slice(j);
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(hi - lo < 1e-6, "fibre {j}: variation {}", hi - lo);
        }
    }

    #[test]
    fn ske_newton_converges_quadratically() {
        let model = pf(64, InitialPerturbation::fibre_bump(0.15, 0.35, 0.5), StencilOrder::Two);
        let sol = solve_ske(&model).unwrap();
        let tr = &sol.residual_history;
        assert!(tr.len() >= 3, "trace {tr:?}");
        // residual ratios above the fp floor contract faster than r^1.7
        for k in 0..tr.len() - 1 {
            if tr[k] < 1e-2 && tr[k + 1] > 1e-14 {
                assert!(tr[k + 1] < 10.0 * tr[k].powf(1.7), "trace not quadratic: {tr:?}");
            }
        }
    }

    #[test]
    fn pushforward_is_one_for_unperturbed_models() {
        for model in [
            pf(48, InitialPerturbation::zero(), StencilOrder::Two),
            sb(48, InitialPerturbation::zero(), StencilOrder::Two),
        ] {
            let rv = reference_volume_form(&model, &model.class).unwrap();
            let g = pushforward_g(&model, &rv, PushforwardWeight::Plain);
            for v in &g.values {
                assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn pushforward_mass_conservation() {
        let model = sb(
            48,
            InitialPerturbation::coupled_bump(0.08, 0.25, 0.6, -0.3, 0.6),
            StencilOrder::Two,
        );
        let rv = reference_volume_form(&model, &model.class).unwrap();
        let g = pushforward_g(&model, &rv, PushforwardWeight::Plain);
        assert!(g.values.iter().all(|&v| v > 0.0));
        // nonconstant for a base-coupled perturbation
        let spread = g.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - g.values.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread > 1e-3, "G' unexpectedly flat: spread {spread}");
        let mass = g.total_mass(&model);
        assert_abs_diff_eq!(mass, rv.total_mass, epsilon = 1e-10 * rv.total_mass);
    }

    #[test]
    fn pushforward_matches_fine_grid_oracle() {
        let psi = InitialPerturbation::coupled_bump(0.08, 0.25, 0.6, -0.3, 0.6);
        let coarse = sb(49, psi, StencilOrder::Two);
        let fine = sb(193, psi, StencilOrder::Two); // 4x refinement, shared nodes
        let gc = pushforward_g(
            &coarse,
            &reference_volume_form(&coarse, &coarse.class).unwrap(),
            PushforwardWeight::Plain,
        );
        let gf = pushforward_g(
            &fine,
            &reference_volume_form(&fine, &fine.class).unwrap(),
            PushforwardWeight::Plain,
        );
        for j in 0..49 {
            assert!((gc.values[j] - gf.values[4 * j]).abs() < 5e-4, "node {j}");
        }
    }

    #[test]
    fn base_tke_constant_input_closed_form() {
        let model = sb(48, InitialPerturbation::zero(), StencilOrder::Two);
        let g = PushforwardDensity { values: vec![3.5; model.nb()], fibre_volume_v: 1.0 };
        let sol = solve_base_tke(&model, &g, BaseTkeVariant::Eta).unwrap();
        for v in sol.potential.base() {
            assert_abs_diff_eq!(*v, -(3.5f64.ln()), epsilon = 1e-12);
        }
        assert_eq!(sol.iterations, 0);
        assert!(sol.residual_sup < 1e-12);
    }

    #[test]
    fn base_tke_zero_for_unperturbed() {
        let model = sb(48, InitialPerturbation::zero(), StencilOrder::Two);
        let rv = reference_volume_form(&model, &model.class).unwrap();
        let g = pushforward_g(&model, &rv, PushforwardWeight::Plain);
        for variant in [BaseTkeVariant::Eta, BaseTkeVariant::EtaScaled] {
            let sol = solve_base_tke(&model, &g, variant).unwrap();
            assert!(sol.potential.base().iter().all(|v| v.abs() < 1e-9));
        }
    }

    #[test]
    fn base_tke_unique_from_different_guesses() {
        let model = sb(
            48,
            InitialPerturbation::coupled_bump(0.08, 0.25, 0.6, -0.3, 0.6),
            StencilOrder::Two,
        );
        let rv = reference_volume_form(&model, &model.class).unwrap();
        let g = pushforward_g(&model, &rv, PushforwardWeight::Plain);
        let reference = solve_base_tke(&model, &g, BaseTkeVariant::Eta).unwrap();
        for guess in [vec![0.0; model.nb()], vec![0.7; model.nb()]] {
            let sol = solve_base_tke_from(&model, &g, BaseTkeVariant::Eta, Some(guess)).unwrap();
            let gap = sol
                .potential
                .base()
                .iter()
                .zip(reference.potential.base())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(gap < 10.0 * NEWTON_TOL, "gap {gap}");
        }
    }

    #[test]
    fn base_tke_maximum_principle() {
        let model = sb(
            64,
            InitialPerturbation::coupled_bump(0.08, 0.25, 0.6, -0.3, 0.6),
            StencilOrder::Two,
        );
        let rv = reference_volume_form(&model, &model.class).unwrap();
        let g = pushforward_g(&model, &rv, PushforwardWeight::Plain);
        let sol = solve_base_tke(&model, &g, BaseTkeVariant::Eta).unwrap();
        let neg_log_g: Vec<f64> = g.values.iter().map(|v| -v.ln()).collect();
        let lo = neg_log_g.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = neg_log_g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for v in sol.potential.base() {
            assert!(*v >= lo - 1e-8 && *v <= hi + 1e-8);
        }
    }
}
