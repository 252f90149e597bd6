//! Lindblad dynamics of the four- (or five-) level system: generator and
//! adjoint generator, a real superoperator representation, stepping and
//! propagation, and the seeded noise drive.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::linalg::{expm, SeriesPropagator};
use crate::operators::{BasisLayout, ComplexMatrix, C64, HERMITIAN_TOL};

const I: C64 = C64::new(0.0, 1.0);

/// Truncation tolerance for the series propagators.
pub const SERIES_TOL: f64 = 1e-15;

/// Lindblad jump operator with its rate (inverse atomic time units).
#[derive(Clone, Debug, PartialEq)]
pub struct JumpChannel {
    pub operator: ComplexMatrix,
    pub rate: f64,
}

impl JumpChannel {
    pub fn new(operator: ComplexMatrix, rate: f64) -> Result<Self> {
        if !rate.is_finite() || rate < 0.0 {
            return Err(Error::InvalidInput(format!("jump rate must be finite and >= 0, got {rate}")));
        }
        if operator.max_abs() == 0.0 || !operator.is_finite() {
            return Err(Error::InvalidInput("jump operator must be finite and nonzero".into()));
        }
        Ok(Self { operator, rate })
    }

    /// `|to><from|` on a space of dimension `dim`.
    pub fn decay(dim: usize, from: usize, to: usize, rate: f64) -> Result<Self> {
        Self::new(ComplexMatrix::unit(dim, to, from), rate)
    }
}

/// Free Hamiltonian, control dipole, noise coupling and dissipators.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemModel {
    pub h0: ComplexMatrix,
    pub control_dipole: ComplexMatrix,
    pub noise_coupling: ComplexMatrix,
    pub channels: Vec<JumpChannel>,
    pub layout: BasisLayout,
}

impl SystemModel {
    pub fn new(
        h0: ComplexMatrix,
        control_dipole: ComplexMatrix,
        noise_coupling: ComplexMatrix,
        channels: Vec<JumpChannel>,
        layout: BasisLayout,
    ) -> Result<Self> {
        let dim = layout.dim();
        for m in [&h0, &control_dipole, &noise_coupling]
            .into_iter()
            .chain(channels.iter().map(|c| &c.operator))
        {
            if m.dim() != dim {
                return Err(Error::DimensionMismatch { left: m.dim(), right: dim });
            }
        }
        for i in 0..dim {
            for j in 0..dim {
                let z = h0.get(i, j);
                if (i != j && z.norm() != 0.0) || z.im != 0.0 {
                    return Err(Error::InvalidInput("free Hamiltonian must be real diagonal".into()));
                }
            }
        }
        if !control_dipole.is_hermitian(HERMITIAN_TOL) || !noise_coupling.is_hermitian(HERMITIAN_TOL) {
            return Err(Error::InvalidInput("dipole and noise coupling must be Hermitian".into()));
        }
        Ok(Self { h0, control_dipole, noise_coupling, channels, layout })
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    /// `H0 + f V + eps mu`.
    pub fn hamiltonian(&self, epsilon: f64, noise: f64) -> ComplexMatrix {
        &(&self.h0 + &self.noise_coupling.scale_real(noise)) + &self.control_dipole.scale_real(epsilon)
    }

    /// Same model with every dissipator removed.
    pub fn without_dissipation(&self) -> Self {
        Self { channels: Vec::new(), ..self.clone() }
    }
}

/// `-i[H, rho] + sum_c G_c (L rho L^+ - {L^+ L, rho}/2)`.
pub fn liouvillian_apply(model: &SystemModel, epsilon: f64, noise: f64, rho: &ComplexMatrix) -> ComplexMatrix {
    let h = model.hamiltonian(epsilon, noise);
    let mut out = h.commutator(rho).scale(-I);
    for c in &model.channels {
        let l = &c.operator;
        let ld = l.adjoint();
        let jump = &(l * rho) * &ld;
        let loss = (&ld * l).anticommutator(rho).scale_real(0.5);
        out = &out + &(&jump - &loss).scale_real(c.rate);
    }
    out
}

/// `+i[H, G] + sum_c G_c (L^+ G L - {L^+ L, G}/2)`, the Heisenberg-picture
/// generator dual to [`liouvillian_apply`] under the Hilbert-Schmidt product.
pub fn adjoint_liouvillian_apply(model: &SystemModel, epsilon: f64, noise: f64, g: &ComplexMatrix) -> ComplexMatrix {
    let h = model.hamiltonian(epsilon, noise);
    let mut out = h.commutator(g).scale(I);
    for c in &model.channels {
        let l = &c.operator;
        let ld = l.adjoint();
        let jump = &(&ld * g) * l;
        let loss = (&ld * l).anticommutator(g).scale_real(0.5);
        out = &out + &(&jump - &loss).scale_real(c.rate);
    }
    out
}

/// Coordinates of Hermitian operators in the orthonormal basis
/// `{E_ii} ∪ {(E_ij + E_ji)/√2} ∪ {i(E_ij - E_ji)/√2}` (i < j).
///
/// In these coordinates the Hilbert-Schmidt product of two Hermitian
/// operators is the Euclidean dot product, so adjoint superoperators are
/// plain transposes.
#[derive(Clone, Debug)]
pub struct HermitianCoords {
    dim: usize,
    pairs: Vec<(usize, usize)>,
}

impl HermitianCoords {
    pub fn new(dim: usize) -> Self {
        let pairs = (0..dim).flat_map(|i| (i + 1..dim).map(move |j| (i, j))).collect();
        Self { dim, pairs }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of real coordinates, `dim^2`.
    pub fn len(&self) -> usize {
        self.dim * self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.dim == 0
    }

    /// Coordinates of the Hermitian part of `m`.
    pub fn to_coords(&self, m: &ComplexMatrix) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.len());
        x.extend((0..self.dim).map(|i| m.get(i, i).re));
        let s = std::f64::consts::SQRT_2;
        for &(i, j) in &self.pairs {
            let z = (m.get(i, j) + m.get(j, i).conj()) * 0.5;
            x.push(s * z.re);
            x.push(s * z.im);
        }
        x
    }

    pub fn from_coords(&self, x: &[f64]) -> ComplexMatrix {
        assert_eq!(x.len(), self.len(), "coordinate vector length");
        let mut m = ComplexMatrix::zeros(self.dim);
        for i in 0..self.dim {
            m.set(i, i, C64::new(x[i], 0.0));
        }
        let h = std::f64::consts::FRAC_1_SQRT_2;
        for (p, &(i, j)) in self.pairs.iter().enumerate() {
            let z = C64::new(x[self.dim + 2 * p], x[self.dim + 2 * p + 1]) * h;
            m.set(i, j, z);
            m.set(j, i, z.conj());
        }
        m
    }

    pub fn basis_element(&self, k: usize) -> ComplexMatrix {
        let mut x = vec![0.0; self.len()];
        x[k] = 1.0;
        self.from_coords(&x)
    }

    /// Real matrix of a Hermiticity-preserving linear map.
    pub fn superoperator(&self, map: impl Fn(&ComplexMatrix) -> ComplexMatrix) -> DMatrix<f64> {
        let n = self.len();
        let mut s = DMatrix::zeros(n, n);
        for l in 0..n {
            let image = self.to_coords(&map(&self.basis_element(l)));
            s.column_mut(l).copy_from_slice(&image);
        }
        s
    }
}

/// The generator split as `drift + eps control + f noise` in Hermitian
/// coordinates.
#[derive(Clone, Debug)]
pub struct Generator {
    pub coords: HermitianCoords,
    pub drift: DMatrix<f64>,
    pub control: DMatrix<f64>,
    pub noise: DMatrix<f64>,
}

impl Generator {
    pub fn new(model: &SystemModel) -> Self {
        let coords = HermitianCoords::new(model.dim());
        let drift = coords.superoperator(|r| liouvillian_apply(model, 0.0, 0.0, r));
        let control = coords.superoperator(|r| model.control_dipole.commutator(r).scale(-I));
        let noise = coords.superoperator(|r| model.noise_coupling.commutator(r).scale(-I));
        Self { coords, drift, control, noise }
    }

    pub fn matrix(&self, epsilon: f64, noise: f64) -> DMatrix<f64> {
        &self.drift + &self.control * epsilon + &self.noise * noise
    }
}

/// One-step propagator for piecewise-constant field and noise values,
/// backed by a precomputed series in both scalars with a dense-exponential
/// fallback outside the series' range.
#[derive(Clone, Debug)]
pub struct Stepper {
    generator: Generator,
    dt: f64,
    series: SeriesPropagator,
}

/// Work buffers for [`Stepper::advance`].
#[derive(Clone, Debug)]
pub struct StepBuffers {
    out: Vec<f64>,
    scratch: Vec<f64>,
}

impl StepBuffers {
    pub fn new(len: usize) -> Self {
        Self { out: vec![0.0; len], scratch: vec![0.0; len] }
    }
}

impl Stepper {
    /// `field_order` and `noise_order` cap the series degree in each scalar.
    pub fn new(generator: Generator, dt: f64, field_order: usize, noise_order: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
        }
        let series = SeriesPropagator::new(
            &generator.drift,
            &generator.control,
            &generator.noise,
            dt,
            field_order,
            noise_order,
            SERIES_TOL,
        )?;
        Ok(Self { generator, dt, series })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    /// `x <- exp(L(eps, f) dt) x`.
    pub fn advance(&self, epsilon: f64, noise: f64, x: &mut [f64], buf: &mut StepBuffers) -> Result<()> {
        if self.series.apply(epsilon, noise, x, &mut buf.out, &mut buf.scratch) {
            x.copy_from_slice(&buf.out);
        } else {
            let p = self.dense(epsilon, noise)?;
            let y = &p * nalgebra::DVector::from_column_slice(x);
            x.copy_from_slice(y.as_slice());
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite state after step (eps = {epsilon:e}, f = {noise:e})")));
        }
        Ok(())
    }

    /// Propagator matrix for one step.
    pub fn matrix(&self, epsilon: f64, noise: f64) -> Result<DMatrix<f64>> {
        match self.series.matrix(epsilon, noise) {
            Some(m) => Ok(m.to_matrix()),
            None => self.dense(epsilon, noise),
        }
    }

    /// Derivative of the one-step propagator with respect to the field.
    pub fn field_derivative(&self, epsilon: f64, noise: f64) -> Result<DMatrix<f64>> {
        if let Some(d) = self.series.derivative_x(epsilon, noise) {
            return Ok(d.to_matrix());
        }
        // Upper-right block of exp([[M, K], [0, M]] dt).
        let n = self.generator.drift.nrows();
        let m = self.generator.matrix(epsilon, noise) * self.dt;
        let mut big = DMatrix::zeros(2 * n, 2 * n);
        big.view_mut((0, 0), (n, n)).copy_from(&m);
        big.view_mut((n, n), (n, n)).copy_from(&m);
        big.view_mut((0, n), (n, n)).copy_from(&(&self.generator.control * self.dt));
        Ok(expm(&big)?.view((0, n), (n, n)).into_owned())
    }

    fn dense(&self, epsilon: f64, noise: f64) -> Result<DMatrix<f64>> {
        expm(&(self.generator.matrix(epsilon, noise) * self.dt))
    }
}

/// `exp(L dt) rho` for frozen field and noise values, by a dense exponential.
pub fn step(rho: &ComplexMatrix, model: &SystemModel, epsilon: f64, noise: f64, dt: f64) -> Result<ComplexMatrix> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
    }
    if rho.dim() != model.dim() {
        return Err(Error::DimensionMismatch { left: rho.dim(), right: model.dim() });
    }
    let generator = Generator::new(model);
    let p = expm(&(generator.matrix(epsilon, noise) * dt))?;
    let x = nalgebra::DVector::from_vec(generator.coords.to_coords(rho));
    let y = &p * x;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite state after step".into()));
    }
    Ok(generator.coords.from_coords(y.as_slice()))
}

/// Real control field sampled on a uniform grid, one value per step.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlField {
    pub samples: Vec<f64>,
    pub dt: f64,
}

impl ControlField {
    pub fn new(samples: Vec<f64>, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidInput(format!("field time step must be positive, got {dt}")));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("field samples must be finite".into()));
        }
        Ok(Self { samples, dt })
    }

    pub fn zeros(n: usize, dt: f64) -> Result<Self> {
        Self::new(vec![0.0; n], dt)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 * self.dt
    }

    /// Left edge of step `k`.
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Uniform white-noise drive: one draw `f = N (u - 1/2)` per step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseProcess {
    pub amplitude: f64,
    pub seed: u64,
    pub dt: f64,
}

impl NoiseProcess {
    pub fn new(amplitude: f64, seed: u64, dt: f64) -> Result<Self> {
        if !(amplitude >= 0.0 && amplitude.is_finite()) {
            return Err(Error::InvalidInput(format!("noise amplitude must be >= 0, got {amplitude}")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidInput(format!("noise time step must be positive, got {dt}")));
        }
        Ok(Self { amplitude, seed, dt })
    }

    /// Delta-correlation strength of the piecewise-constant draws,
    /// `N^2 dt / 12`.
    pub fn effective_intensity(&self) -> f64 {
        self.amplitude * self.amplitude * self.dt / 12.0
    }

    pub fn stream(&self) -> NoiseStream {
        NoiseStream { rng: ChaCha12Rng::seed_from_u64(self.seed), amplitude: self.amplitude }
    }
}

/// Draw sequence of a [`NoiseProcess`].
#[derive(Clone, Debug)]
pub struct NoiseStream {
    rng: ChaCha12Rng,
    amplitude: f64,
}

impl NoiseStream {
    pub fn next_value(&mut self) -> f64 {
        let u: f64 = self.rng.gen();
        self.amplitude * (u - 0.5)
    }
}

pub fn sample_noise(process: &NoiseProcess, n_steps: usize) -> Vec<f64> {
    let mut stream = process.stream();
    (0..n_steps).map(|_| stream.next_value()).collect()
}

/// Snapshots of a propagation, in increasing time order.
#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<ComplexMatrix>,
}

impl Trajectory {
    pub fn last(&self) -> Option<&ComplexMatrix> {
        self.states.last()
    }
}

fn step_count(duration: f64, dt: f64) -> Result<usize> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::InvalidInput(format!("duration must be positive, got {duration}")));
    }
    let n = (duration / dt).round();
    if (n * dt - duration).abs() > 1e-9 * duration {
        return Err(Error::InvalidInput(format!("duration {duration} is not a multiple of dt = {dt}")));
    }
    Ok(n as usize)
}

fn grid_step(field: Option<&ControlField>, noise: Option<&NoiseProcess>) -> Result<f64> {
    match (field, noise) {
        (Some(f), Some(n)) if f.dt != n.dt => {
            Err(Error::InvalidInput(format!("field dt {} differs from noise dt {}", f.dt, n.dt)))
        }
        (Some(f), _) => Ok(f.dt),
        (None, Some(n)) => Ok(n.dt),
        (None, None) => Err(Error::InvalidInput("propagation needs a field or noise grid".into())),
    }
}

/// Series degrees adequate for the field amplitudes met in practice;
/// larger values fall back to dense exponentials.
const FIELD_ORDER: usize = 8;
const NOISE_ORDER: usize = 3;

/// Forward propagation of `rho0` for `duration`, recording every
/// `record_stride` steps (and always the final state).
///
/// The field applies to the first `field.len()` steps and is zero after;
/// the noise stream advances by exactly one draw per step.
pub fn propagate(
    rho0: &ComplexMatrix,
    model: &SystemModel,
    field: Option<&ControlField>,
    noise: Option<&NoiseProcess>,
    duration: f64,
    record_stride: usize,
) -> Result<Trajectory> {
    let dt = grid_step(field, noise)?;
    let n = step_count(duration, dt)?;
    let stride = record_stride.max(1);
    let stepper = Stepper::new(Generator::new(model), dt, FIELD_ORDER, NOISE_ORDER)?;
    let coords = &stepper.generator.coords;
    let mut x = coords.to_coords(rho0);
    let mut buf = StepBuffers::new(x.len());
    let mut stream = noise.map(NoiseProcess::stream);
    let mut traj = Trajectory { times: vec![0.0], states: vec![coords.from_coords(&x)] };
    for k in 0..n {
        let eps = field.and_then(|f| f.samples.get(k).copied()).unwrap_or(0.0);
        let f = stream.as_mut().map_or(0.0, NoiseStream::next_value);
        stepper.advance(eps, f, &mut x, &mut buf)?;
        if (k + 1) % stride == 0 || k + 1 == n {
            traj.times.push((k + 1) as f64 * dt);
            traj.states.push(coords.from_coords(&x));
        }
    }
    Ok(traj)
}

/// Backward propagation of an observable under the adjoint generator from
/// `G(duration) = g_final` down to `t = 0`, noise-free.
pub fn propagate_adjoint_backward(
    g_final: &ComplexMatrix,
    model: &SystemModel,
    field: &ControlField,
    duration: f64,
    record_stride: usize,
) -> Result<Trajectory> {
    let n = step_count(duration, field.dt)?;
    let stride = record_stride.max(1);
    let stepper = Stepper::new(Generator::new(model), field.dt, FIELD_ORDER, 0)?;
    let coords = &stepper.generator.coords;
    let mut y = nalgebra::DVector::from_vec(coords.to_coords(g_final));
    let mut times = vec![duration];
    let mut states = vec![coords.from_coords(y.as_slice())];
    for k in (0..n).rev() {
        let eps = field.samples.get(k).copied().unwrap_or(0.0);
        let p = stepper.matrix(eps, 0.0)?;
        y = p.tr_mul(&y);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite observable in backward propagation".into()));
        }
        if k % stride == 0 {
            times.push(k as f64 * field.dt);
            states.push(coords.from_coords(y.as_slice()));
        }
    }
    times.reverse();
    states.reverse();
    Ok(Trajectory { times, states })
}
