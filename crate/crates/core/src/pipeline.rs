//! End-to-end driver: build the model, solve the elliptic problems, run the
//! flow, measure, and evaluate the registry.

use serde::{Deserialize, Serialize};

use crate::cohomology::{reference_volume_form, ClassData, ReferenceVolume};
use crate::elliptic::{
    pushforward_g, solve_base_tke, solve_ske, solve_spr, BaseTkeVariant, EllipticSolution,
    PushforwardDensity, PushforwardWeight,
};
use crate::error::PipelineError;
use crate::estimators::{build_series, SeriesBundle};
use crate::flow::{run, SnapshotSeries, StepSchedule};
use crate::models::{build_model, Model, ModelSpec};
use crate::verdicts::{run_registry, TheoremId, TheoremVerdict, Tolerances};

/// Which fibre construction feeds the pushforward density `G'`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Spr,
    Ske,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Spr => "spr",
            Mode::Ske => "ske",
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub model: ModelSpec,
    pub schedule: StepSchedule,
    pub mode: Mode,
    pub registry: Option<Vec<TheoremId>>,
    pub tolerances: Tolerances,
    pub estimator_keys: Option<Vec<String>>,
}

/// The four solved potentials plus the pushforward of the configured mode.
#[derive(Debug)]
pub struct EllipticBundle {
    pub spr: EllipticSolution,
    pub ske: EllipticSolution,
    pub g_prime: PushforwardDensity,
    pub rho_b: EllipticSolution,
    pub rho_b_prime: EllipticSolution,
}

/// Residual metadata of the elliptic stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EllipticSummary {
    pub spr_residual: f64,
    pub ske_residual: f64,
    pub rho_b_residual: f64,
    pub rho_b_prime_residual: f64,
    pub rho_b_iterations: usize,
    /// Relative mass-conservation error of `G'`.
    pub g_mass_rel_err: f64,
    pub ric_identity_residual: f64,
}

#[derive(Debug)]
pub struct PipelineResult {
    pub class: ClassData,
    pub elliptic: EllipticSummary,
    pub bundle: SeriesBundle,
    pub verdicts: Vec<TheoremVerdict>,
    pub series: SnapshotSeries,
    pub flow_failure: Option<String>,
    pub wall_clock_secs: f64,
}

impl PipelineResult {
    pub fn failures(&self) -> usize {
        self.verdicts.iter().filter(|v| v.outcome == crate::verdicts::Outcome::Fail).count()
    }
}

/// Solve every elliptic problem on a model; `mode` selects the `G'` route.
pub fn solve_elliptic(
    model: &Model,
    refvol: &ReferenceVolume,
    mode: Mode,
) -> Result<EllipticBundle, PipelineError> {
    let spr = solve_spr(model)?;
    let ske = solve_ske(model)?;
    let g_prime = match mode {
        Mode::Spr => pushforward_g(model, refvol, PushforwardWeight::Plain),
        Mode::Ske => {
            pushforward_g(model, refvol, PushforwardWeight::SkeWeighted(ske.potential.field()))
        }
    };
    let rho_b = solve_base_tke(model, &g_prime, BaseTkeVariant::Eta)?;
    let rho_b_prime = solve_base_tke(model, &g_prime, BaseTkeVariant::EtaScaled)?;
    Ok(EllipticBundle { spr, ske, g_prime, rho_b, rho_b_prime })
}

fn summarize(
    model: &Model,
    refvol: &ReferenceVolume,
    mode: Mode,
    elliptic: &EllipticBundle,
) -> EllipticSummary {
    let pushed_mass = match mode {
        Mode::Spr => refvol.total_mass,
        Mode::Ske => {
            let rho = elliptic.ske.potential.field();
            let mut mass = 0.0;
            for i in 0..model.nf() {
                for j in 0..model.nb() {
                    mass += (-model.class.lambda * rho.at(i, j)).exp()
                        * refvol.density.at(i, j)
                        * model.grid.vol_weight(i, j);
                }
            }
            mass
        }
    };
    let g_mass = elliptic.g_prime.total_mass(model);
    EllipticSummary {
        spr_residual: elliptic.spr.residual_sup,
        ske_residual: elliptic.ske.residual_sup,
        rho_b_residual: elliptic.rho_b.residual_sup,
        rho_b_prime_residual: elliptic.rho_b_prime.residual_sup,
        rho_b_iterations: elliptic.rho_b.iterations,
        g_mass_rel_err: (g_mass - pushed_mass).abs() / pushed_mass.abs().max(1e-300),
        ric_identity_residual: refvol.ric_residual_sup,
    }
}

/// Run the full pipeline for one configuration.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineResult, PipelineError> {
    let started = std::time::Instant::now();
    let model = build_model(&cfg.model)?;
    let refvol = reference_volume_form(&model, &model.class)?;
    let elliptic = solve_elliptic(&model, &refvol, cfg.mode)?;
    let summary = summarize(&model, &refvol, cfg.mode, &elliptic);

    let outcome = run(&model, &refvol, &cfg.schedule);
    let flow_failure = outcome.failure.as_ref().map(|e| e.to_string());
    let series = outcome.series;
    if series.snapshots.len() < 2 {
        return Err(PipelineError::Flow(crate::error::FlowError::NonFinite { t: 0.0 }));
    }

    let mut bundle =
        build_series(&model, &refvol, &series, Some(elliptic.rho_b_prime.potential.base()))?;
    if let Some(keys) = &cfg.estimator_keys {
        bundle.retain_keys(keys);
    }
    let verdicts = run_registry(&bundle, cfg.registry.as_deref(), cfg.tolerances);

    Ok(PipelineResult {
        class: model.class,
        elliptic: summary,
        bundle,
        verdicts,
        series,
        flow_failure,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::StencilOrder;
    use crate::models::{GridSpec, InitialPerturbation, ModelKind};
    use crate::verdicts::Outcome;

    #[test]
    fn product_zero_pipeline_all_verdicts_evaluated() {
        let cfg = PipelineConfig {
            model: ModelSpec {
                kind: ModelKind::ProductFlat,
                a0: 2.0,
                b0: 1.0,
                psi0: InitialPerturbation::zero(),
                grid: GridSpec::square(32, StencilOrder::Two),
            },
            schedule: StepSchedule::reference(1e-3),
            mode: Mode::Spr,
            registry: None,
            tolerances: Tolerances::default(),
            estimator_keys: None,
        };
        let result = run_pipeline(&cfg).unwrap();
        assert!(result.flow_failure.is_none());
        assert_eq!(result.verdicts.len(), crate::verdicts::REGISTRY.len());
        for v in &result.verdicts {
            assert_ne!(v.outcome, Outcome::Skip, "{} skipped: {}", v.theorem_id, v.notes);
        }
        let failed: Vec<_> =
            result.verdicts.iter().filter(|v| v.outcome == Outcome::Fail).collect();
        assert!(failed.is_empty(), "failed: {failed:?}");
        assert!(result.elliptic.rho_b_residual < 1e-10);
        assert!(result.elliptic.g_mass_rel_err < 1e-10);
    }

    #[test]
    fn restricted_estimator_keys_skip_dependent_verdicts() {
        let cfg = PipelineConfig {
            model: ModelSpec {
                kind: ModelKind::ProductFlat,
                a0: 2.0,
                b0: 1.0,
                psi0: InitialPerturbation::zero(),
                grid: GridSpec::square(24, StencilOrder::Two),
            },
            schedule: StepSchedule::reference(1e-2),
            mode: Mode::Spr,
            registry: None,
            tolerances: Tolerances::default(),
            estimator_keys: Some(vec!["fibre_diam_max".into(), "fibre_diam_min".into()]),
        };
        let result = run_pipeline(&cfg).unwrap();
        let diam =
            result.verdicts.iter().find(|v| v.theorem_id == TheoremId::DiamFibre).unwrap();
        assert_eq!(diam.outcome, Outcome::Pass);
        let sub =
            result.verdicts.iter().find(|v| v.theorem_id == TheoremId::SubmersionRate).unwrap();
        assert_eq!(sub.outcome, Outcome::Skip);
    }
}
