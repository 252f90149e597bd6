//! Gate synthesis by Krotov's monotonic sequential-update scheme on the
//! lower-byte operator basis.
//!
//! Work happens in the real Hermitian coordinates of [`crate::dynamics`]:
//! basis operators are pushed forward by the one-step propagators, targets
//! backward by their transposes, and the objective is the sum of the
//! overlaps at the final time.

use crate::dynamics::{ControlField, Generator, HermitianCoords, Stepper, SystemModel};
use crate::error::{Error, Result};
use crate::linalg::DenseOp;
use crate::operators::{conjugate_by_gate, hs_inner, ComplexMatrix, GateTarget, OperatorBasis};

/// Floor applied to `1 - F/4` before taking the logarithm.
pub const INFIDELITY_FLOOR: f64 = 1e-16;
/// Allowed decrease of the objective between accepted sweeps.
pub const MONOTONICITY_SLACK: f64 = 1e-12;
/// Smallest value of the update envelope.
pub const ENVELOPE_FLOOR: f64 = 1e-6;

/// Objective value at perfect gate realization on the two-level byte.
pub const FIDELITY_CEILING: f64 = 4.0;

#[derive(Clone, Debug, PartialEq)]
pub struct KrotovSettings {
    /// Step-size (strategy) parameter of the update.
    pub lambda: f64,
    /// Width of the Gaussian update envelope, centred on the pulse.
    pub sigma: f64,
    pub guess_amplitude: f64,
    pub max_iterations: usize,
    pub target_log_infidelity: f64,
    pub dt: f64,
    pub tau_trans: f64,
}

impl KrotovSettings {
    /// Defaults for a pulse of length `tau_trans` on a grid of step `dt`.
    pub fn new(tau_trans: f64, dt: f64) -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            sigma: tau_trans / 6.0,
            guess_amplitude: DEFAULT_GUESS_AMPLITUDE,
            max_iterations: 5000,
            target_log_infidelity: -4.0,
            dt,
            tau_trans,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::InvalidInput(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidInput(format!("envelope width must be positive, got {}", self.sigma)));
        }
        if !self.guess_amplitude.is_finite() {
            return Err(Error::InvalidInput("guess amplitude must be finite".into()));
        }
        self.steps().map(|_| ())
    }

    /// Number of grid steps spanning the pulse.
    pub fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.tau_trans > 0.0) {
            return Err(Error::InvalidInput("pulse length and time step must be positive".into()));
        }
        let n = (self.tau_trans / self.dt).round();
        if n < 1.0 || (n * self.dt - self.tau_trans).abs() > 1e-9 * self.tau_trans {
            return Err(Error::InvalidInput(format!(
                "time step {} does not divide the pulse length {}",
                self.dt, self.tau_trans
            )));
        }
        Ok(n as usize)
    }

    /// Gaussian envelope at time `t`, floored so no sample is frozen.
    pub fn envelope(&self, t: f64) -> f64 {
        let z = (t - 0.5 * self.tau_trans) / self.sigma;
        (-0.5 * z * z).exp().max(ENVELOPE_FLOOR)
    }
}

/// Default step-size parameter, tuned on the swap problem.
pub const DEFAULT_LAMBDA: f64 = 2e-5;
/// Default peak amplitude of the initial guess (atomic units).
pub const DEFAULT_GUESS_AMPLITUDE: f64 = 1e-4;

/// Basis operators and their images under the desired gate.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetSet {
    pub basis: OperatorBasis,
    pub targets: Vec<ComplexMatrix>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizationRecord {
    pub field: ControlField,
    /// Objective after each accepted sweep; entry 0 is the initial field.
    pub f_history: Vec<f64>,
    pub iterations_used: usize,
    pub converged: bool,
    /// Step-size parameter in force at the end of the run.
    pub lambda: f64,
}

impl OptimizationRecord {
    pub fn fidelity(&self) -> f64 {
        self.f_history.last().copied().unwrap_or(f64::NAN)
    }

    pub fn log_infidelity(&self) -> f64 {
        log_infidelity(self.fidelity())
    }
}

/// `O G_j O^dagger` for every basis operator.
pub fn make_targets(basis: &OperatorBasis, gate: &GateTarget) -> Result<TargetSet> {
    let gate = if gate.dim() < basis.dim() { gate.extended(basis.dim()) } else { gate.clone() };
    let targets = basis.ops.iter().map(|g| conjugate_by_gate(&gate, g)).collect::<Result<Vec<_>>>()?;
    Ok(TargetSet { basis: basis.clone(), targets })
}

pub fn log_infidelity(f: f64) -> f64 {
    (1.0 - f / FIDELITY_CEILING).max(INFIDELITY_FLOOR).log10()
}

/// `eps(t_k) = A cos(delta t_k) C(t_k)` on the pulse grid.
pub fn initial_guess(settings: &KrotovSettings, delta: f64) -> Result<ControlField> {
    if !(delta > 0.0) {
        return Err(Error::InvalidInput(format!("carrier frequency must be positive, got {delta}")));
    }
    let n = settings.steps()?;
    let samples = (0..n)
        .map(|k| {
            let t = k as f64 * settings.dt;
            settings.guess_amplitude * (delta * t).cos() * settings.envelope(t)
        })
        .collect();
    ControlField::new(samples, settings.dt)
}

/// Objective `sum_j (G_j^0 . G_j(0))` with each target carried back to
/// `t = 0` by the adjoint dynamics.
pub fn fidelity(targets: &TargetSet, field: &ControlField, model: &SystemModel) -> Result<f64> {
    let mut total = 0.0;
    for (g0, target) in targets.basis.ops.iter().zip(&targets.targets) {
        let back = crate::dynamics::propagate_adjoint_backward(target, model, field, field.duration(), field.len())?;
        total += hs_inner(g0, &back.states[0])?.re;
    }
    Ok(total)
}

/// Field-direction series degree for the optimizer's one-step propagators.
const FIELD_ORDER: usize = 10;
/// Local step halvings tried before an update sample is left unchanged.
const MAX_LOCAL_HALVINGS: usize = 40;

/// Sweep state: stored one-step propagators for the current field and the
/// coordinates of the basis and target operators.
struct Sweeper {
    stepper: Stepper,
    envelope: Vec<f64>,
    basis: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    field: Vec<f64>,
    props: Vec<DenseOp>,
    fidelity: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Sweeper {
    fn new(targets: &TargetSet, model: &SystemModel, settings: &KrotovSettings, field: &ControlField) -> Result<Self> {
        settings.validate()?;
        let n = settings.steps()?;
        if field.len() != n || (field.dt - settings.dt).abs() > 1e-12 * settings.dt {
            return Err(Error::InvalidInput(format!(
                "field has {} samples at dt = {}, expected {n} at dt = {}",
                field.len(),
                field.dt,
                settings.dt
            )));
        }
        if targets.basis.dim() != model.dim() {
            return Err(Error::DimensionMismatch { left: targets.basis.dim(), right: model.dim() });
        }
        let stepper = Stepper::new(Generator::new(model), settings.dt, FIELD_ORDER, 0)?;
        let coords = HermitianCoords::new(model.dim());
        let basis: Vec<_> = targets.basis.ops.iter().map(|b| coords.to_coords(b)).collect();
        let target_coords: Vec<_> = targets.targets.iter().map(|t| coords.to_coords(t)).collect();
        let envelope = (0..n).map(|k| settings.envelope(k as f64 * settings.dt)).collect();
        let props = field
            .samples
            .iter()
            .map(|&e| stepper.matrix(e, 0.0).map(|m| DenseOp::from_matrix(&m)))
            .collect::<Result<Vec<_>>>()?;
        let mut s = Self {
            stepper,
            envelope,
            basis,
            targets: target_coords,
            field: field.samples.clone(),
            props,
            fidelity: 0.0,
        };
        s.fidelity = s.evaluate();
        Ok(s)
    }

    fn dim(&self) -> usize {
        self.basis[0].len()
    }

    /// Objective for the stored propagators.
    fn evaluate(&self) -> f64 {
        let n = self.dim();
        let mut total = 0.0;
        let mut next = vec![0.0; n];
        for (b, t) in self.basis.iter().zip(&self.targets) {
            let mut x = b.clone();
            for p in &self.props {
                next.iter_mut().for_each(|v| *v = 0.0);
                p.mul_add(1.0, &x, &mut next);
                std::mem::swap(&mut x, &mut next);
            }
            total += dot(t, &x);
        }
        total
    }

    /// One backward/forward sweep with step-size `lambda`; returns the new
    /// objective. The state is updated in place.
    fn sweep(&mut self, lambda: f64) -> Result<f64> {
        let n = self.dim();
        let steps = self.props.len();
        let jn = self.targets.len();
        // Backward pass: costates at the right edge of every step.
        let mut costates = vec![0.0; steps * jn * n];
        let mut y: Vec<Vec<f64>> = self.targets.clone();
        let mut tmp = vec![0.0; n];
        for k in (0..steps).rev() {
            for (j, yj) in y.iter_mut().enumerate() {
                costates[(k * jn + j) * n..(k * jn + j + 1) * n].copy_from_slice(yj);
                tmp.iter_mut().for_each(|v| *v = 0.0);
                self.props[k].mul_add_transpose(1.0, yj, &mut tmp);
                yj.copy_from_slice(&tmp);
            }
        }
        // Forward pass with sequential updates.
        let mut x: Vec<Vec<f64>> = self.basis.clone();
        let mut old_img = vec![vec![0.0; n]; jn];
        let mut new_img = vec![vec![0.0; n]; jn];
        for k in 0..steps {
            let ys = |j: usize| &costates[(k * jn + j) * n..(k * jn + j + 1) * n];
            let deriv = DenseOp::from_matrix(&self.stepper.field_derivative(self.field[k], 0.0)?);
            let mut gradient = 0.0;
            for (j, xj) in x.iter().enumerate() {
                tmp.iter_mut().for_each(|v| *v = 0.0);
                deriv.mul_add(1.0, xj, &mut tmp);
                gradient += dot(ys(j), &tmp);
            }
            for (j, xj) in x.iter().enumerate() {
                old_img[j].iter_mut().for_each(|v| *v = 0.0);
                self.props[k].mul_add(1.0, xj, &mut old_img[j]);
            }
            let old_gain: f64 = (0..jn).map(|j| dot(ys(j), &old_img[j])).sum();
            // Shrink the local change until this step's contribution to the
            // objective change is non-negative.
            let mut change = lambda * self.envelope[k] * gradient;
            let mut accepted = None;
            for _ in 0..=MAX_LOCAL_HALVINGS {
                if change == 0.0 {
                    break;
                }
                let p = DenseOp::from_matrix(&self.stepper.matrix(self.field[k] + change, 0.0)?);
                for (j, xj) in x.iter().enumerate() {
                    new_img[j].iter_mut().for_each(|v| *v = 0.0);
                    p.mul_add(1.0, xj, &mut new_img[j]);
                }
                let new_gain: f64 = (0..jn).map(|j| dot(ys(j), &new_img[j])).sum();
                if new_gain >= old_gain {
                    accepted = Some(p);
                    break;
                }
                change *= 0.5;
            }
            match accepted {
                Some(p) => {
                    self.field[k] += change;
                    self.props[k] = p;
                    for (xj, img) in x.iter_mut().zip(&new_img) {
                        xj.copy_from_slice(img);
                    }
                }
                None => {
                    for (xj, img) in x.iter_mut().zip(&old_img) {
                        xj.copy_from_slice(img);
                    }
                }
            }
        }
        if x.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite state in forward sweep".into()));
        }
        self.fidelity = self.targets.iter().zip(&x).map(|(t, xj)| dot(t, xj)).sum();
        Ok(self.fidelity)
    }

    fn field(&self, dt: f64) -> Result<ControlField> {
        ControlField::new(self.field.clone(), dt)
    }
}

/// One sweep with the monotonicity guard: a decrease beyond the slack
/// halves `lambda` and retries once from the same starting point.
fn guarded_sweep(sweeper: &mut Sweeper, lambda: &mut f64) -> Result<f64> {
    let before = sweeper.fidelity;
    let saved_field = sweeper.field.clone();
    let saved_props = sweeper.props.clone();
    let after = sweeper.sweep(*lambda)?;
    if after >= before - MONOTONICITY_SLACK {
        return Ok(after);
    }
    sweeper.field = saved_field;
    sweeper.props = saved_props;
    sweeper.fidelity = before;
    *lambda *= 0.5;
    let retry = sweeper.sweep(*lambda)?;
    if retry >= before - MONOTONICITY_SLACK {
        Ok(retry)
    } else {
        Err(Error::NonMonotone { before, after: retry, lambda: *lambda })
    }
}

/// A single Krotov iteration starting from `record.field`.
pub fn krotov_sweep(
    record: &OptimizationRecord,
    targets: &TargetSet,
    model: &SystemModel,
    settings: &KrotovSettings,
) -> Result<OptimizationRecord> {
    let mut sweeper = Sweeper::new(targets, model, settings, &record.field)?;
    let mut lambda = settings.lambda;
    let f = guarded_sweep(&mut sweeper, &mut lambda)?;
    let mut history = record.f_history.clone();
    if history.is_empty() {
        history.push(Sweeper::new(targets, model, settings, &record.field)?.fidelity);
    }
    history.push(f);
    Ok(OptimizationRecord {
        field: sweeper.field(settings.dt)?,
        f_history: history,
        iterations_used: record.iterations_used + 1,
        converged: log_infidelity(f) <= settings.target_log_infidelity,
        lambda,
    })
}

/// Iterate sweeps from `guess` until the log-infidelity target or the
/// iteration cap is reached.
pub fn optimize_from(
    targets: &TargetSet,
    model: &SystemModel,
    settings: &KrotovSettings,
    guess: &ControlField,
    mut progress: impl FnMut(usize, f64),
) -> Result<OptimizationRecord> {
    let mut sweeper = Sweeper::new(targets, model, settings, guess)?;
    let mut lambda = settings.lambda;
    let mut history = vec![sweeper.fidelity];
    progress(0, sweeper.fidelity);
    let mut iterations = 0;
    while log_infidelity(sweeper.fidelity) > settings.target_log_infidelity && iterations < settings.max_iterations {
        let f = guarded_sweep(&mut sweeper, &mut lambda)?;
        iterations += 1;
        history.push(f);
        progress(iterations, f);
    }
    Ok(OptimizationRecord {
        field: sweeper.field(settings.dt)?,
        converged: log_infidelity(sweeper.fidelity) <= settings.target_log_infidelity,
        f_history: history,
        iterations_used: iterations,
        lambda,
    })
}

/// Optimize a field realizing `gate` from the carrier guess at the upper
/// byte's gap.
pub fn optimize(
    gate: &GateTarget,
    basis: &OperatorBasis,
    model: &SystemModel,
    settings: &KrotovSettings,
    carrier: f64,
) -> Result<OptimizationRecord> {
    let targets = make_targets(basis, gate)?;
    let guess = initial_guess(settings, carrier)?;
    optimize_from(&targets, model, settings, &guess, |_, _| {})
}
