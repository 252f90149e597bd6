//! The cyclic protection protocol: a distilling pulse followed by free
//! evolution with selective decay, repeated every cycle, together with the
//! deviation metrics and per-run summaries.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::dynamics::{ControlField, Generator, JumpChannel, NoiseProcess, NoiseStream, StepBuffers, Stepper, SystemModel};
use crate::error::{Error, Result};
use crate::krotov::{initial_guess, make_targets, optimize_from, KrotovSettings, OptimizationRecord};
use crate::operators::{
    build_general_distiller, build_scrambled_distiller, build_swap, hs_inner, hs_norm, make_basis,
    rotated_states, superposition_amplitudes, BasisLayout, ComplexMatrix, DensityMatrix, GateTarget, C64,
};
use crate::units::{ps_to_au, rate_from_lifetime_ps};

/// Lifetime ratio between the slow and fast channel in the
/// different-rates scenario.
pub const DIFFERENT_RATES_FACTOR: f64 = 10.0 * PI;

/// Superposition coefficient of the general target byte.
pub const GENERAL_TARGET_BN: f64 = 0.231_138_513_574_29;

/// Which protocol variant is run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScenarioKind {
    Uncontrolled,
    PartialNoDecay,
    FullEqualRates,
    DifferentRates,
    ExchangedChannels,
    DrainChannel,
    NondegenerateUpper,
    ScrambledGate,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 8] = [
        ScenarioKind::Uncontrolled,
        ScenarioKind::PartialNoDecay,
        ScenarioKind::FullEqualRates,
        ScenarioKind::DifferentRates,
        ScenarioKind::ExchangedChannels,
        ScenarioKind::DrainChannel,
        ScenarioKind::NondegenerateUpper,
        ScenarioKind::ScrambledGate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Uncontrolled => "uncontrolled",
            ScenarioKind::PartialNoDecay => "partial_no_decay",
            ScenarioKind::FullEqualRates => "full_equal_rates",
            ScenarioKind::DifferentRates => "different_rates",
            ScenarioKind::ExchangedChannels => "exchanged_channels",
            ScenarioKind::DrainChannel => "drain_channel",
            ScenarioKind::NondegenerateUpper => "nondegenerate_upper",
            ScenarioKind::ScrambledGate => "scrambled_gate",
        }
    }

    pub fn is_controlled(self) -> bool {
        self != ScenarioKind::Uncontrolled
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown scenario '{s}'")))
    }
}

/// State protected by the protocol.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TargetByte {
    /// `|1>_g`, with non-degenerate bytes.
    Ground,
    /// `(|1>_g - i b_n |2>_g)/sqrt(1 + b_n^2)`, with degenerate bytes.
    General { b_n: f64 },
}

impl TargetByte {
    pub fn general() -> Self {
        TargetByte::General { b_n: GENERAL_TARGET_BN }
    }

    pub fn name(self) -> &'static str {
        match self {
            TargetByte::Ground => "ground",
            TargetByte::General { .. } => "general",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub target: TargetByte,
}

impl Scenario {
    pub fn new(kind: ScenarioKind, target: TargetByte) -> Self {
        Self { kind, target }
    }
}

/// Gate (and therefore optimized field) a scenario relies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GateVariant {
    Swap,
    Distiller,
    Scrambled,
}

impl GateVariant {
    pub fn name(self) -> &'static str {
        match self {
            GateVariant::Swap => "swap",
            GateVariant::Distiller => "distiller",
            GateVariant::Scrambled => "scrambled",
        }
    }
}

/// Physical and numerical parameters of a protocol run, in atomic units.
#[derive(Clone, Debug, PartialEq)]
pub struct GovernorConfig {
    pub delta: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub tau_trans: f64,
    pub tau_free: f64,
    /// Rate of the selective decay channels.
    pub gamma: f64,
    pub cycles: usize,
    pub noise_amplitude: f64,
    /// Nominal integration step; each segment uses the closest step that
    /// divides it exactly.
    pub dt: f64,
    pub samples_per_segment: usize,
    /// Keep the selective decay channels active while synthesizing pulses.
    pub decay_during_synthesis: bool,
    pub dipole: DipoleChoice,
}

/// Shape of the control dipole.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DipoleChoice {
    /// Unit coupling on every lower/upper pair.
    Block,
    /// Couples only the lower-byte state orthogonal to the target with its
    /// image under the gate.
    GateAdapted,
}

impl DipoleChoice {
    pub fn name(self) -> &'static str {
        match self {
            DipoleChoice::Block => "block",
            DipoleChoice::GateAdapted => "gate_adapted",
        }
    }
}

impl FromStr for DipoleChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "block" => Ok(DipoleChoice::Block),
            "gate_adapted" => Ok(DipoleChoice::GateAdapted),
            other => Err(Error::InvalidInput(format!("unknown dipole '{other}' (expected block or gate_adapted)"))),
        }
    }
}

impl GovernorConfig {
    /// Parameters of the sodium-dimer model, no noise.
    pub fn table1() -> Self {
        Self {
            delta: 0.06601,
            omega1: 7.244_971_626_8e-4,
            omega2: 5.374_631_315_5e-4,
            tau_trans: ps_to_au(1.08),
            tau_free: ps_to_au(241.0),
            gamma: rate_from_lifetime_ps(10.0),
            cycles: 20,
            noise_amplitude: 0.0,
            dt: 5.0,
            samples_per_segment: 64,
            decay_during_synthesis: false,
            dipole: DipoleChoice::GateAdapted,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("delta", self.delta),
            ("tau_trans", self.tau_trans),
            ("tau_free", self.tau_free),
            ("dt", self.dt),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("omega1", self.omega1), ("omega2", self.omega2), ("gamma", self.gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.noise_amplitude >= 0.0 && self.noise_amplitude.is_finite()) {
            return Err(Error::InvalidInput(format!("noise amplitude must be >= 0, got {}", self.noise_amplitude)));
        }
        if self.cycles == 0 {
            return Err(Error::InvalidInput("at least one cycle is required".into()));
        }
        if self.samples_per_segment == 0 {
            return Err(Error::InvalidInput("samples_per_segment must be >= 1".into()));
        }
        if self.tau_free <= self.tau_trans {
            return Err(Error::InvalidInput("the cycle period must exceed the pulse length".into()));
        }
        Ok(())
    }

    /// True when the pulse is short against the cycle period.
    pub fn timescales_separated(&self) -> bool {
        self.tau_free >= 10.0 * self.tau_trans
    }

    /// Step count and step of the pulse segment.
    pub fn pulse_grid(&self) -> (usize, f64) {
        segment_grid(self.tau_trans, self.dt)
    }

    /// Step count and step of the free segment.
    pub fn free_grid(&self) -> (usize, f64) {
        segment_grid(self.tau_free - self.tau_trans, self.dt)
    }
}

fn segment_grid(length: f64, dt: f64) -> (usize, f64) {
    let n = (length / dt).round().max(1.0) as usize;
    (n, length / n as f64)
}

/// Model, gate and initial state of a scenario.
#[derive(Clone, Debug)]
pub struct ScenarioSetup {
    pub model: SystemModel,
    pub gate: Option<GateTarget>,
    pub variant: Option<GateVariant>,
    /// Target state on the full model space.
    pub target_state: ComplexMatrix,
    /// Four-level model the pulse is designed for; decay channels only
    /// when `decay_during_synthesis` is set.
    pub synthesis_model: SystemModel,
}

fn block_ones(dim: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(dim, |i, j| {
        let lower = |k: usize| k < 2;
        let upper = |k: usize| k == 2 || k == 3;
        if (lower(i) && upper(j)) || (upper(i) && lower(j)) {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// Noise coupling on the lower byte, embedded in dimension `dim`.
fn noise_coupling(target: TargetByte, dim: usize) -> ComplexMatrix {
    let rows: [[f64; 2]; 2] = match target {
        TargetByte::Ground => [[0.0, 1.0], [1.0, 0.0]],
        TargetByte::General { .. } => [[-1.0, 1.0], [1.0, 1.0]],
    };
    ComplexMatrix::from_fn(dim, |i, j| if i < 2 && j < 2 { C64::new(rows[i][j], 0.0) } else { C64::new(0.0, 0.0) })
}

/// Dipole coupling `state` with its image under the gate.
fn gate_adapted_dipole(gate: &GateTarget, state: &[C64]) -> ComplexMatrix {
    let image = gate.matrix.apply(state);
    let m = ComplexMatrix::outer(state, &image);
    &m + &m.adjoint()
}

/// Model and gate for a scenario.
pub fn build_scenario(scenario: Scenario, config: &GovernorConfig) -> Result<ScenarioSetup> {
    config.validate()?;
    let kind = scenario.kind;
    let layout = if kind == ScenarioKind::DrainChannel { BasisLayout::with_sink() } else { BasisLayout::four_level() };
    let dim = layout.dim();
    let (delta, w1, w2) = (config.delta, config.omega1, config.omega2);
    let (h0_design, h0, variant, gate, dipole, target_vec) = match scenario.target {
        TargetByte::Ground => {
            if kind == ScenarioKind::NondegenerateUpper {
                return Err(Error::InvalidInput(
                    "nondegenerate_upper applies to the general target; the ground-state model is already non-degenerate"
                        .into(),
                ));
            }
            let h = ComplexMatrix::diagonal(&[0.0, w1, delta, delta + w2]);
            let (variant, gate) = if kind == ScenarioKind::ScrambledGate {
                let swap = build_swap();
                let scramble = hadamard_upper();
                (GateVariant::Scrambled, GateTarget::custom("scrambled swap", &scramble * &swap.matrix))
            } else {
                (GateVariant::Swap, build_swap())
            };
            let mut psi = vec![C64::new(0.0, 0.0); 4];
            psi[BasisLayout::G1] = C64::new(1.0, 0.0);
            let mut orth = vec![C64::new(0.0, 0.0); 4];
            orth[BasisLayout::G2] = C64::new(1.0, 0.0);
            let dipole = match config.dipole {
                DipoleChoice::Block => block_ones(4),
                DipoleChoice::GateAdapted => gate_adapted_dipole(&gate, &orth),
            };
            (h.clone(), h, variant, gate, dipole, psi)
        }
        TargetByte::General { b_n } => {
            let (a, b) = superposition_amplitudes(b_n);
            let degenerate = ComplexMatrix::diagonal(&[0.0, 0.0, delta, delta]);
            let h = if kind == ScenarioKind::NondegenerateUpper {
                ComplexMatrix::diagonal(&[0.0, 0.0, delta, delta + w2])
            } else {
                degenerate.clone()
            };
            let (variant, gate) = if kind == ScenarioKind::ScrambledGate {
                (GateVariant::Scrambled, build_scrambled_distiller(a, b)?)
            } else {
                (GateVariant::Distiller, build_general_distiller(a, b)?)
            };
            let states = rotated_states(a, b)?;
            let dipole = match config.dipole {
                DipoleChoice::Block => block_ones(4),
                DipoleChoice::GateAdapted => gate_adapted_dipole(&gate, &states[1]),
            };
            (degenerate, h, variant, gate, dipole, states[0].clone())
        }
    };
    let g = config.gamma;
    let (g1, g2, e1, e2) = (BasisLayout::G1, BasisLayout::G2, BasisLayout::E1, BasisLayout::E2);
    let channels = match kind {
        ScenarioKind::Uncontrolled | ScenarioKind::PartialNoDecay => vec![],
        ScenarioKind::FullEqualRates | ScenarioKind::NondegenerateUpper | ScenarioKind::ScrambledGate => {
            vec![JumpChannel::decay(dim, e1, g1, g)?, JumpChannel::decay(dim, e2, g2, g)?]
        }
        ScenarioKind::DifferentRates => {
            vec![JumpChannel::decay(dim, e1, g1, g)?, JumpChannel::decay(dim, e2, g2, g / DIFFERENT_RATES_FACTOR)?]
        }
        ScenarioKind::ExchangedChannels => {
            vec![JumpChannel::decay(dim, e1, g2, g)?, JumpChannel::decay(dim, e2, g1, g)?]
        }
        ScenarioKind::DrainChannel => {
            let sink = BasisLayout::SINK;
            vec![JumpChannel::decay(dim, e1, sink, g)?, JumpChannel::decay(dim, e2, sink, g)?]
        }
    };
    let synthesis_channels = if config.decay_during_synthesis {
        vec![JumpChannel::decay(4, e1, g1, g)?, JumpChannel::decay(4, e2, g2, g)?]
    } else {
        vec![]
    };
    let synthesis_model = SystemModel::new(
        h0_design,
        dipole.clone(),
        noise_coupling(scenario.target, 4),
        synthesis_channels,
        BasisLayout::four_level(),
    )?;
    let model = SystemModel::new(h0.embed(dim), dipole.embed(dim), noise_coupling(scenario.target, dim), channels, layout)?;
    let mut psi = target_vec;
    psi.resize(dim, C64::new(0.0, 0.0));
    let target_state = DensityMatrix::pure(&psi)?.into_matrix();
    let controlled = kind.is_controlled();
    Ok(ScenarioSetup {
        model,
        gate: controlled.then(|| gate.extended(dim)),
        variant: controlled.then_some(variant),
        target_state,
        synthesis_model,
    })
}

fn hadamard_upper() -> ComplexMatrix {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    ComplexMatrix::from_real_rows(&[
        &[1.0, 0.0, 0.0, 0.0],
        &[0.0, 1.0, 0.0, 0.0],
        &[0.0, 0.0, h, h],
        &[0.0, 0.0, h, -h],
    ])
    .expect("static matrix")
}

/// Optimize the distilling pulse a scenario needs, on its dissipation-free
/// design model.
pub fn synthesize_field(
    setup: &ScenarioSetup,
    config: &GovernorConfig,
    settings: &KrotovSettings,
    progress: impl FnMut(usize, f64),
) -> Result<OptimizationRecord> {
    let gate = setup
        .gate
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("the uncontrolled scenario has no gate to synthesize".into()))?;
    let four = GateTarget { matrix: gate.matrix.leading_block(4), label: gate.label.clone() };
    let targets = make_targets(&make_basis(BasisLayout::four_level()), &four)?;
    let guess = initial_guess(settings, config.delta)?;
    optimize_from(&targets, &setup.synthesis_model, settings, &guess, progress)
}

/// Krotov settings matching the protocol's pulse grid.
pub fn pulse_settings(config: &GovernorConfig) -> KrotovSettings {
    let (n, dt) = config.pulse_grid();
    KrotovSettings::new(n as f64 * dt, dt)
}

/// `1 - (rho0 . rho)`.
pub fn deviation_r(rho0: &ComplexMatrix, rho: &ComplexMatrix) -> Result<f64> {
    Ok(1.0 - hs_inner(rho0, rho)?.re)
}

/// `1 - (rho0 . rho)/|rho|` with `|rho| = sqrt(rho . rho)`.
pub fn deviation_rn(rho0: &ComplexMatrix, rho: &ComplexMatrix) -> Result<f64> {
    let norm = hs_norm(rho);
    if !(norm > 0.0) {
        return Err(Error::InvalidInput("normalized deviation of a zero-norm state".into()));
    }
    Ok(1.0 - hs_inner(rho0, rho)?.re / norm)
}

/// Recorded metrics of one protocol run. Metrics refer to the four-level
/// block; `trace` and `min_eigenvalue` refer to the full state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DeviationSeries {
    pub times: Vec<f64>,
    pub r: Vec<f64>,
    pub rn: Vec<f64>,
    pub purity: Vec<f64>,
    pub hs_norm: Vec<f64>,
    /// Level populations, one row per sample (four or five entries).
    pub populations: Vec<Vec<f64>>,
    /// Samples taken inside a distilling-pulse segment.
    pub in_pulse: Vec<bool>,
    pub trace: Vec<f64>,
    pub min_eigenvalue: Vec<f64>,
    pub hermiticity_error: Vec<f64>,
}

impl DeviationSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn record(&mut self, t: f64, in_pulse: bool, target: &ComplexMatrix, rho: &ComplexMatrix) -> Result<()> {
        let block = rho.leading_block(4);
        let target4 = target.leading_block(4);
        self.times.push(t);
        self.r.push(deviation_r(&target4, &block)?);
        self.rn.push(deviation_rn(&target4, &block)?);
        let norm = hs_norm(&block);
        self.hs_norm.push(norm);
        self.purity.push(norm * norm);
        self.populations.push((0..rho.dim()).map(|i| rho.get(i, i).re).collect());
        self.in_pulse.push(in_pulse);
        self.trace.push(rho.trace().re);
        self.min_eigenvalue.push(rho.hermitian_eigenvalues()[0]);
        self.hermiticity_error.push(rho.hermiticity_error());
        Ok(())
    }
}

/// Maxima and time averages of the deviations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScenarioSummary {
    pub r_max: f64,
    pub rn_max: f64,
    pub mean_r: f64,
    pub mean_rn: f64,
}

impl ScenarioSummary {
    pub fn columns(&self) -> [f64; 4] {
        [self.r_max, self.rn_max, self.mean_r, self.mean_rn]
    }
}

/// Summary over the samples outside the distilling pulses.
pub fn summarize(series: &DeviationSeries) -> Result<ScenarioSummary> {
    let keep: Vec<usize> = (0..series.len()).filter(|&i| !series.in_pulse.get(i).copied().unwrap_or(false)).collect();
    summarize_samples(&keep.iter().map(|&i| series.r[i]).collect::<Vec<_>>(), &keep.iter().map(|&i| series.rn[i]).collect::<Vec<_>>())
}

/// Maxima and arithmetic means of two equally long sample lists.
pub fn summarize_samples(r: &[f64], rn: &[f64]) -> Result<ScenarioSummary> {
    if r.is_empty() || r.len() != rn.len() {
        return Err(Error::InvalidInput("cannot summarize an empty series".into()));
    }
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(ScenarioSummary { r_max: max(r), rn_max: max(rn), mean_r: mean(r), mean_rn: mean(rn) })
}

/// Series order used by the protocol steppers.
const PULSE_FIELD_ORDER: usize = 7;
const NOISE_ORDER: usize = 3;

/// Prepared propagators for one scenario and configuration.
pub struct Protocol {
    setup: ScenarioSetup,
    config: GovernorConfig,
    field: Option<ControlField>,
    pulse: Stepper,
    free: Stepper,
    pulse_steps: usize,
    free_steps: usize,
}

impl Protocol {
    pub fn new(scenario: Scenario, config: &GovernorConfig, field: Option<&ControlField>) -> Result<Self> {
        let setup = build_scenario(scenario, config)?;
        Self::from_setup(setup, config, field)
    }

    pub fn from_setup(setup: ScenarioSetup, config: &GovernorConfig, field: Option<&ControlField>) -> Result<Self> {
        config.validate()?;
        let (pulse_steps, pulse_dt) = config.pulse_grid();
        let (free_steps, free_dt) = config.free_grid();
        let field = match (setup.gate.is_some(), field) {
            (false, _) => None,
            (true, None) => {
                return Err(Error::InvalidInput("a controlled scenario needs a distilling field".into()));
            }
            (true, Some(f)) => {
                if f.len() != pulse_steps || (f.dt - pulse_dt).abs() > 1e-9 * pulse_dt {
                    return Err(Error::InvalidInput(format!(
                        "field grid ({} samples, dt = {}) does not match the pulse grid ({pulse_steps} samples, dt = {pulse_dt})",
                        f.len(),
                        f.dt
                    )));
                }
                Some(f.clone())
            }
        };
        let generator = Generator::new(&setup.model);
        let pulse = Stepper::new(generator.clone(), pulse_dt, PULSE_FIELD_ORDER, NOISE_ORDER)?;
        let free = Stepper::new(generator, free_dt, 0, NOISE_ORDER)?;
        Ok(Self { setup, config: config.clone(), field, pulse, free, pulse_steps, free_steps })
    }

    pub fn setup(&self) -> &ScenarioSetup {
        &self.setup
    }

    fn coords(&self) -> &crate::dynamics::HermitianCoords {
        &self.pulse.generator().coords
    }

    /// One cycle on Hermitian coordinates: the pulse segment (zero field in
    /// the uncontrolled scenario) followed by the free segment. `record`
    /// receives the elapsed time within the cycle, whether the sample is in
    /// the pulse, and the state.
    fn cycle(
        &self,
        x: &mut [f64],
        stream: &mut NoiseStream,
        buf: &mut StepBuffers,
        mut record: impl FnMut(f64, bool, &[f64]) -> Result<()>,
    ) -> Result<()> {
        let per = self.config.samples_per_segment;
        let marks = |n: usize| -> Vec<usize> {
            let mut m: Vec<usize> = (1..=per).map(|i| ((i * n) as f64 / per as f64).round() as usize).collect();
            m.dedup();
            m
        };
        let mut next = marks(self.pulse_steps).into_iter().peekable();
        for k in 0..self.pulse_steps {
            let eps = self.field.as_ref().map_or(0.0, |f| f.samples[k]);
            let f = stream.next_value();
            self.pulse.advance(eps, f, x, buf)?;
            if next.peek() == Some(&(k + 1)) {
                next.next();
                record((k + 1) as f64 * self.pulse.dt(), true, x)?;
            }
        }
        let t0 = self.pulse_steps as f64 * self.pulse.dt();
        let mut next = marks(self.free_steps).into_iter().peekable();
        for k in 0..self.free_steps {
            let f = stream.next_value();
            self.free.advance(0.0, f, x, buf)?;
            if next.peek() == Some(&(k + 1)) {
                next.next();
                record(t0 + (k + 1) as f64 * self.free.dt(), false, x)?;
            }
        }
        Ok(())
    }

    /// Cycle duration on the discrete grid.
    pub fn cycle_duration(&self) -> f64 {
        self.pulse_steps as f64 * self.pulse.dt() + self.free_steps as f64 * self.free.dt()
    }

    /// Apply one cycle to a state.
    pub fn run_cycle(&self, rho: &ComplexMatrix, stream: &mut NoiseStream) -> Result<ComplexMatrix> {
        let mut x = self.coords().to_coords(rho);
        let mut buf = StepBuffers::new(x.len());
        self.cycle(&mut x, stream, &mut buf, |_, _, _| Ok(()))?;
        Ok(self.coords().from_coords(&x))
    }

    /// All cycles from the target state with a seeded noise stream.
    pub fn run(&self, seed: u64) -> Result<DeviationSeries> {
        let noise = NoiseProcess::new(self.config.noise_amplitude, seed, self.free.dt())?;
        let mut stream = noise.stream();
        let target = self.setup.target_state.clone();
        let coords = self.coords().clone();
        let mut x = coords.to_coords(&target);
        let mut buf = StepBuffers::new(x.len());
        let mut series = DeviationSeries::default();
        series.record(0.0, false, &target, &target)?;
        let period = self.cycle_duration();
        for c in 0..self.config.cycles {
            let start = c as f64 * period;
            self.cycle(&mut x, &mut stream, &mut buf, |t, in_pulse, state| {
                series.record(start + t, in_pulse, &target, &coords.from_coords(state))
            })?;
        }
        Ok(series)
    }
}

/// Run one scenario for `config.cycles` cycles.
pub fn run_protocol(
    scenario: Scenario,
    config: &GovernorConfig,
    field: Option<&ControlField>,
    seed: u64,
) -> Result<DeviationSeries> {
    Protocol::new(scenario, config, field)?.run(seed)
}

/// Outcome of the noise calibration.
#[derive(Clone, Debug)]
pub struct Calibration {
    pub amplitude: f64,
    /// Seed-averaged uncontrolled maximum deviation at `amplitude`.
    pub mean_r_max: f64,
    /// Uncontrolled runs at the final amplitude, one per seed.
    pub runs: Vec<DeviationSeries>,
}

/// Relative accuracy demanded of the calibrated seed-averaged maximum.
pub const CALIBRATION_TOLERANCE: f64 = 0.2;

/// Find the noise amplitude whose seed-averaged uncontrolled maximum
/// deviation matches `target_r_max`.
///
/// The deviation grows as the square of the amplitude for weak noise, so
/// the search is a secant iteration on log-log axes, safeguarded by a
/// bracket that is widened until it encloses the target.
pub fn calibrate_noise(
    target: TargetByte,
    config: &GovernorConfig,
    target_r_max: f64,
    seeds: &[u64],
) -> Result<Calibration> {
    if !(target_r_max > 0.0 && target_r_max.is_finite()) {
        return Err(Error::InvalidInput(format!("calibration target must be positive, got {target_r_max}")));
    }
    if seeds.is_empty() {
        return Err(Error::InvalidInput("calibration needs at least one seed".into()));
    }
    let measure = |amplitude: f64| -> Result<(f64, Vec<DeviationSeries>)> {
        let cfg = GovernorConfig { noise_amplitude: amplitude, ..config.clone() };
        let runs = uncontrolled_runs(target, &cfg, seeds)?;
        let mut total = 0.0;
        for s in &runs {
            total += summarize(s)?.r_max;
        }
        Ok((total / runs.len() as f64, runs))
    };
    // Diffusive estimate: R ~ N^2 dt t / 12 over the run.
    let duration = config.cycles as f64 * config.tau_free;
    let mut amplitude = (12.0 * target_r_max / (config.dt * duration)).sqrt();
    let mut lo: Option<(f64, f64)> = None;
    let mut hi: Option<(f64, f64)> = None;
    for _ in 0..40 {
        let (value, runs) = measure(amplitude)?;
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::Numerical(format!("calibration produced R_max = {value} at N = {amplitude:e}")));
        }
        if (value / target_r_max - 1.0).abs() <= CALIBRATION_TOLERANCE * 0.25 {
            return Ok(Calibration { amplitude, mean_r_max: value, runs });
        }
        if value < target_r_max {
            lo = Some((amplitude, value));
        } else {
            hi = Some((amplitude, value));
        }
        // Local log-log slope from the bracket when available, else 2.
        let slope = match (lo, hi) {
            (Some((a0, v0)), Some((a1, v1))) if a1 != a0 => ((v1 / v0).ln() / (a1 / a0).ln()).clamp(0.5, 4.0),
            _ => 2.0,
        };
        let mut next = amplitude * (target_r_max / value).powf(1.0 / slope);
        if let (Some((a0, _)), Some((a1, _))) = (lo, hi) {
            let (l, h) = (a0.min(a1), a0.max(a1));
            if !(next > l && next < h) {
                next = (l * h).sqrt();
            }
        }
        amplitude = next;
    }
    Err(Error::Numerical(format!("noise calibration did not bracket R_max = {target_r_max:e}")))
}

/// Uncontrolled runs for each seed, in seed order.
pub fn uncontrolled_runs(target: TargetByte, cfg: &GovernorConfig, seeds: &[u64]) -> Result<Vec<DeviationSeries>> {
    let protocol = Protocol::new(Scenario::new(ScenarioKind::Uncontrolled, target), cfg, None)?;
    run_seeds(&protocol, seeds)
}

/// Independent runs of one protocol, collected in seed order.
pub fn run_seeds(protocol: &Protocol, seeds: &[u64]) -> Result<Vec<DeviationSeries>> {
    seeds.par_iter().map(|&s| protocol.run(s)).collect()
}
