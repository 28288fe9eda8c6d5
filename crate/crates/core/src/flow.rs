//! Time integration of the complex Monge-Ampere flow
//! `d phi/dt = log(E(t)^{-(n-m)} omega(t)^n / Omega) - phi`, `phi(0) = 0`.
//!
//! Stepping is explicit (Euler/RK2/RK4) with an adaptive step bounded by the
//! stiffest diffusion scale of `Delta_omega`, which grows like `1/E(t)` in
//! the collapsing fibre direction; `dt` therefore shrinks proportionally to
//! `E(t) * dtheta^2`. Runs are single-threaded and bitwise deterministic.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohomology::ReferenceVolume;
use crate::error::FlowError;
use crate::grid::Field;
use crate::models::{assemble_metric, MetricField, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Euler,
    Rk2,
    Rk4,
}

/// Step-size and stopping policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    /// Fraction of the explicit stability limit, in (0, 0.9].
    pub cfl_safety: f64,
    /// Final gap `T - t_end`.
    pub eps_stop: f64,
    /// Steps per stored snapshot.
    pub snapshot_stride: usize,
    pub max_steps: usize,
    pub scheme: Scheme,
}

impl StepSchedule {
    pub fn reference(eps_stop: f64) -> Self {
        StepSchedule {
            cfl_safety: 0.6,
            eps_stop,
            snapshot_stride: 20,
            max_steps: 2_000_000,
            scheme: Scheme::Rk4,
        }
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 0.9) || !(self.eps_stop > 0.0) {
            return Err(FlowError::NonFinite { t: f64::NAN });
        }
        Ok(())
    }
}

/// The potential field at a fixed time.
#[derive(Debug, Clone)]
pub struct PotentialField {
    pub values: Field,
    pub t: f64,
}

/// Working state of the integrator with coherent caches.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub phi: PotentialField,
    pub metric: MetricField,
    /// Cached `d phi/dt` (the analytically evaluated flow right-hand side).
    pub rhs: Field,
    pub dt_last: f64,
}

/// A stored snapshot: the potential, its time, and the analytic `d phi/dt`.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    pub dt_last: f64,
    pub phi: Field,
    pub rhs: Field,
}

/// Strided snapshot record of one run.
#[derive(Debug, Clone)]
pub struct SnapshotSeries {
    pub snapshots: Vec<Snapshot>,
    pub schedule: StepSchedule,
    pub steps_taken: usize,
    /// `(t, dt)` at every stored snapshot.
    pub dt_history: Vec<(f64, f64)>,
    /// Min `det N` seen over the run (positivity margin).
    pub min_det_seen: f64,
    /// Sup of the pole even-extension residual seen at snapshots.
    pub pole_residual_sup: f64,
}

/// Outcome of a run; on failure the partial series is still returned.
#[derive(Debug)]
pub struct RunOutcome {
    pub series: SnapshotSeries,
    pub failure: Option<FlowError>,
}

/// Flow right-hand side `log(2 det N / (E(t) D)) - phi` at time `t`.
pub fn cma_rhs(
    model: &Model,
    refvol: &ReferenceVolume,
    phi: &Field,
    t: f64,
) -> Result<Field, FlowError> {
    let metric = assemble_metric(model, phi, t)?;
    Ok(cma_rhs_with_metric(model, refvol, phi, t, &metric))
}

/// Same as [`cma_rhs`] for a pre-assembled (positive) metric.
pub fn cma_rhs_with_metric(
    model: &Model,
    refvol: &ReferenceVolume,
    phi: &Field,
    t: f64,
    metric: &MetricField,
) -> Field {
    let log_e = model.class.e_factor_unchecked(t).ln();
    Field::from_fn(model.nf(), model.nb(), |i, j| {
        (2.0 * metric.det.at(i, j)).ln() - log_e - refvol.log_density.at(i, j) - phi.at(i, j)
    })
}

/// Explicit stability step from the current metric.
fn stable_dt(model: &Model, metric: &MetricField, schedule: &StepSchedule) -> f64 {
    let (inv_ff, inv_bb) = metric.max_inverse_diag();
    let hf = model.grid.fibre.h;
    let hb = model.grid.base.h;
    let rate = 4.0 * inv_ff / (hf * hf) + 4.0 * inv_bb / (hb * hb) + 1.0;
    schedule.cfl_safety * 2.0 / rate
}

/// Initial state at `t = 0`, `phi = 0`.
pub fn initial_state(model: &Model, refvol: &ReferenceVolume) -> Result<FlowState, FlowError> {
    state_at(model, refvol, model.grid.zeros(), 0.0, 0.0)
}

/// Rebuild a coherent state from a stored potential (resume path).
pub fn state_at(
    model: &Model,
    refvol: &ReferenceVolume,
    phi: Field,
    t: f64,
    dt_last: f64,
) -> Result<FlowState, FlowError> {
    let metric = assemble_metric(model, &phi, t)?;
    let rhs = cma_rhs_with_metric(model, refvol, &phi, t, &metric);
    Ok(FlowState { phi: PotentialField { values: phi, t }, metric, rhs, dt_last })
}

/// Advance one adaptive explicit step; caches are refreshed on return.
pub fn step(
    model: &Model,
    refvol: &ReferenceVolume,
    state: &FlowState,
    schedule: &StepSchedule,
) -> Result<FlowState, FlowError> {
    let t = state.phi.t;
    let t_end = model.class.t_singular - schedule.eps_stop;
    let mut dt = stable_dt(model, &state.metric, schedule);
    if t + dt > t_end {
        dt = t_end - t;
    }
    if dt < 1e-14 {
        return Err(FlowError::StepSizeUnderflow { t, dt });
    }

    let phi0 = &state.phi.values;
    let next = match schedule.scheme {
        Scheme::Euler => {
            let mut phi = phi0.clone();
            phi.axpy(dt, &state.rhs);
            phi
        }
        Scheme::Rk2 => {
            // midpoint rule
            let mut phi_half = phi0.clone();
            phi_half.axpy(0.5 * dt, &state.rhs);
            let k2 = cma_rhs(model, refvol, &phi_half, t + 0.5 * dt)?;
            let mut phi = phi0.clone();
            phi.axpy(dt, &k2);
            phi
        }
        Scheme::Rk4 => {
            let k1 = &state.rhs;
            let mut p2 = phi0.clone();
            p2.axpy(0.5 * dt, k1);
            let k2 = cma_rhs(model, refvol, &p2, t + 0.5 * dt)?;
            let mut p3 = phi0.clone();
            p3.axpy(0.5 * dt, &k2);
            let k3 = cma_rhs(model, refvol, &p3, t + 0.5 * dt)?;
            let mut p4 = phi0.clone();
            p4.axpy(dt, &k3);
            let k4 = cma_rhs(model, refvol, &p4, t + dt)?;
            let mut phi = phi0.clone();
            phi.axpy(dt / 6.0, k1);
            phi.axpy(dt / 3.0, &k2);
            phi.axpy(dt / 3.0, &k3);
            phi.axpy(dt / 6.0, &k4);
            phi
        }
    };
    let mut new_state = state_at(model, refvol, next, t + dt, dt)?;
    new_state.dt_last = dt;
    Ok(new_state)
}

fn record(series: &mut SnapshotSeries, model: &Model, state: &FlowState) {
    series.snapshots.push(Snapshot {
        t: state.phi.t,
        dt_last: state.dt_last,
        phi: state.phi.values.clone(),
        rhs: state.rhs.clone(),
    });
    series.dt_history.push((state.phi.t, state.dt_last));
    series.min_det_seen = series.min_det_seen.min(state.metric.det.inf());
    series.pole_residual_sup = series
        .pole_residual_sup
        .max(model.grid.pole_evenness_residual(&state.phi.values));
}

/// Integrate from `t = 0` to `T - eps_stop`, emitting strided snapshots.
pub fn run(model: &Model, refvol: &ReferenceVolume, schedule: &StepSchedule) -> RunOutcome {
    let mut series = SnapshotSeries {
        snapshots: Vec::new(),
        schedule: *schedule,
        steps_taken: 0,
        dt_history: Vec::new(),
        min_det_seen: f64::INFINITY,
        pole_residual_sup: 0.0,
    };
    if let Err(e) = schedule.validate() {
        return RunOutcome { series, failure: Some(e) };
    }
    let state = match initial_state(model, refvol) {
        Ok(s) => s,
        Err(e) => return RunOutcome { series, failure: Some(e) },
    };
    run_from(model, refvol, schedule, state, 0, series)
}

/// Continue a run from a stored snapshot.
pub fn resume(
    model: &Model,
    refvol: &ReferenceVolume,
    schedule: &StepSchedule,
    from: &Snapshot,
) -> RunOutcome {
    let series = SnapshotSeries {
        snapshots: Vec::new(),
        schedule: *schedule,
        steps_taken: 0,
        dt_history: Vec::new(),
        min_det_seen: f64::INFINITY,
        pole_residual_sup: 0.0,
    };
    match state_at(model, refvol, from.phi.clone(), from.t, from.dt_last) {
        Ok(state) => run_from(model, refvol, schedule, state, 0, series),
        Err(e) => RunOutcome { series, failure: Some(e) },
    }
}

fn run_from(
    model: &Model,
    refvol: &ReferenceVolume,
    schedule: &StepSchedule,
    mut state: FlowState,
    mut steps: usize,
    mut series: SnapshotSeries,
) -> RunOutcome {
    let t_end = model.class.t_singular - schedule.eps_stop;
    record(&mut series, model, &state);
    let stride = schedule.snapshot_stride.max(1);
    loop {
        if state.phi.t >= t_end {
            break;
        }
        if steps >= schedule.max_steps {
            series.steps_taken = steps;
            return RunOutcome {
                series,
                failure: Some(FlowError::MaxStepsExceeded {
                    max_steps: schedule.max_steps,
                    t: state.phi.t,
                }),
            };
        }
        match step(model, refvol, &state, schedule) {
            Ok(next) => state = next,
            Err(e) => {
                series.steps_taken = steps;
                return RunOutcome { series, failure: Some(e) };
            }
        }
        steps += 1;
        if steps % stride == 0 || state.phi.t >= t_end {
            record(&mut series, model, &state);
        }
    }
    series.steps_taken = steps;
    RunOutcome { series, failure: None }
}

// ---------------------------------------------------------------------------
// Snapshot container: versioned, self-describing, resumable.
//
//   magic "KRFSNAP1" | u32 header length | header JSON | frames
//   frame = t (f64 le), dt_last (f64 le), phi values, rhs values
// ---------------------------------------------------------------------------

const SNAPSHOT_MAGIC: &[u8; 8] = b"KRFSNAP1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub version: u32,
    pub model: crate::models::ModelSpec,
    pub schedule: StepSchedule,
    pub nf: usize,
    pub nb: usize,
}

pub fn save_series(
    path: &Path,
    model: &crate::models::ModelSpec,
    series: &SnapshotSeries,
) -> std::io::Result<()> {
    let header = SnapshotHeader {
        version: 1,
        model: model.clone(),
        schedule: series.schedule,
        nf: model.grid.n_fibre,
        nb: model.grid.n_base,
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for snap in &series.snapshots {
        w.write_all(&snap.t.to_le_bytes())?;
        w.write_all(&snap.dt_last.to_le_bytes())?;
        for v in snap.phi.data.iter().chain(snap.rhs.data.iter()) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn load_series(path: &Path) -> std::io::Result<(SnapshotHeader, Vec<Snapshot>)> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            "not a snapshot container (bad magic)",
        ));
    }
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes)?;
    let mut header_bytes = vec![0u8; u32::from_le_bytes(len_bytes) as usize];
    r.read_exact(&mut header_bytes)?;
    let header: SnapshotHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
    let n = header.nf * header.nb;
    let mut snaps = Vec::new();
    loop {
        let mut scalar = [0u8; 8];
        match r.read_exact(&mut scalar) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e),
        }
        let t = f64::from_le_bytes(scalar);
        r.read_exact(&mut scalar)?;
        let dt_last = f64::from_le_bytes(scalar);
        let mut read_field = |r: &mut dyn Read| -> std::io::Result<Field> {
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            Ok(Field { nf: header.nf, nb: header.nb, data })
        };
        let phi = read_field(&mut r)?;
        let rhs = read_field(&mut r)?;
        snaps.push(Snapshot { t, dt_last, phi, rhs });
    }
    Ok((header, snaps))
}
