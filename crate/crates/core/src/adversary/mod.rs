//! Pluggable attack programs constrained by the causality validator.
//!
//! An [`AttackStrategy`] is a per-tick program over the adversary's causal
//! support: channel positions, her own hold slots, and the ancilla. The
//! runner pulls actions one at a time so a program can branch on the
//! outcome of a measurement it made earlier in the same tick. Programs see
//! the clock, the causal support and their own past outcomes; the sending
//! time is visible only to strategies constructed with the oracle flag.

pub mod probe;
pub mod suite;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qcore::{
    apply_unitary, measure_projective, MeasureOutcome, Mode, PureState, Segment, StateError,
    UnitaryOp,
};
use crate::timeline::{
    causal_support, validate_adversary_op, Bit, CausalSupport, Event, Geometry, Layout,
    RegisterId, Tick, TimelineError, WorldState,
};

/// Errors from attack construction and execution.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttackError {
    #[error("this strategy needs the sending-time oracle")]
    RequiresTsOracle,
    #[error(transparent)]
    Causality(#[from] TimelineError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("attack disturbs the transmission: {0}")]
    DisturbingAttack(String),
    #[error("attack program is not a deterministic unitary schedule ({0})")]
    NonlinearAttack(String),
    #[error("adversary program emitted too many actions in one tick")]
    ProgramDiverged,
    #[error("injected state uses ancilla dimension {got}, world uses {want}")]
    InjectDimMismatch { got: u16, want: u16 },
}

/// Which channel an intercept targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelSide {
    Upper,
    Lower,
}

/// One adversary action.
#[derive(Debug, Clone)]
pub enum AdversaryAction {
    /// Mode-local optics (swaps, phases, splitters). Linear optics are
    /// register-blind, so this applies to every live register.
    ApplyOptics(UnitaryOp),
    /// Ancilla-coupled unitary. The ancilla is Eve's single auxiliary
    /// system and tracks Alice's register only.
    ApplyCoupled(UnitaryOp),
    /// Unitary on the ancilla factor alone (`d x d`, row-major). Always
    /// causally legal.
    RotateAncilla(Vec<Complex64>),
    /// Projective occupancy measurement of a mode subset.
    Measure(Vec<Mode>),
    /// Release a fresh particle register with the given state on channel
    /// and hold modes.
    Inject(PureState),
}

impl AdversaryAction {
    /// Particle modes this action touches (empty for ancilla rotations).
    pub fn touched_modes(&self) -> Vec<Mode> {
        match self {
            AdversaryAction::ApplyOptics(op) | AdversaryAction::ApplyCoupled(op) => {
                op.support_modes()
            }
            AdversaryAction::RotateAncilla(_) => Vec::new(),
            AdversaryAction::Measure(modes) => modes.clone(),
            AdversaryAction::Inject(state) => state.occupied_modes(),
        }
    }
}

/// What a program sees when asked for its next action.
pub struct TickView<'a> {
    pub clock: Tick,
    pub support: &'a CausalSupport,
    pub geometry: &'a Geometry,
    pub layout: Layout,
    pub ancilla_dim: u16,
    /// Present only when the strategy was granted the sending-time oracle.
    pub ts_oracle: Option<Tick>,
}

/// The adversary's classical memory across ticks of one trial.
#[derive(Debug, Clone, Default)]
pub struct EveMemory {
    pub outcomes: Vec<(Tick, MeasureOutcome)>,
    pub injected: Vec<RegisterId>,
}

impl EveMemory {
    fn saw_inside(&self) -> bool {
        self.outcomes
            .iter()
            .any(|(_, o)| *o == MeasureOutcome::Inside)
    }
}

/// A unitary scheduled for a fixed tick.
#[derive(Debug, Clone)]
pub struct ScheduledOp {
    pub tick: Tick,
    pub action: ScheduledAction,
}

/// Deterministic actions available to a unitary schedule.
#[derive(Debug, Clone)]
pub enum ScheduledAction {
    Coupled(UnitaryOp),
    Optics(UnitaryOp),
    RotateAncilla(Vec<Complex64>),
}

impl ScheduledAction {
    fn to_action(&self) -> AdversaryAction {
        match self {
            ScheduledAction::Coupled(op) => AdversaryAction::ApplyCoupled(op.clone()),
            ScheduledAction::Optics(op) => AdversaryAction::ApplyOptics(op.clone()),
            ScheduledAction::RotateAncilla(m) => AdversaryAction::RotateAncilla(m.clone()),
        }
    }

    fn touched_modes(&self) -> Vec<Mode> {
        match self {
            ScheduledAction::Coupled(op) | ScheduledAction::Optics(op) => op.support_modes(),
            ScheduledAction::RotateAncilla(_) => Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
enum ProgramKind {
    Passive,
    InterceptResend { channel: ChannelSide },
    UnitarySchedule { ops: Vec<ScheduledOp> },
    DummyParticle,
}

/// A named adversary program plus its ancilla dimension and privileges.
#[derive(Debug, Clone)]
pub struct AttackStrategy {
    name: String,
    ancilla_dim: u16,
    knows_ts: bool,
    unconstrained: bool,
    kind: ProgramKind,
}

impl AttackStrategy {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn ancilla_dim(&self) -> u16 {
        self.ancilla_dim
    }

    pub fn knows_ts(&self) -> bool {
        self.knows_ts
    }

    /// True for didactic strategies that bypass the causality validator.
    /// Such runs are labeled and excluded from security statistics.
    pub fn unconstrained(&self) -> bool {
        self.unconstrained
    }

    /// True when the program is a deterministic unitary schedule (no
    /// measurements, no injections), so linear-response analysis applies.
    pub fn is_deterministic_unitary(&self) -> bool {
        matches!(
            self.kind,
            ProgramKind::Passive | ProgramKind::UnitarySchedule { .. }
        )
    }

    /// The `idx`-th action this tick, or `None` when the program is done
    /// for the tick. `mem` already contains outcomes of earlier actions.
    pub fn next_action(
        &self,
        view: &TickView<'_>,
        mem: &EveMemory,
        idx: usize,
    ) -> Option<AdversaryAction> {
        match &self.kind {
            ProgramKind::Passive => None,
            ProgramKind::InterceptResend { channel } => {
                if idx > 0 {
                    return None;
                }
                let segment = match channel {
                    ChannelSide::Upper => Segment::UpperChannel,
                    ChannelSide::Lower => Segment::LowerChannel,
                };
                let modes: Vec<Mode> = view
                    .support
                    .modes()
                    .filter(|m| m.segment == segment)
                    .copied()
                    .collect();
                if modes.is_empty() {
                    return None;
                }
                Some(AdversaryAction::Measure(modes))
            }
            ProgramKind::UnitarySchedule { ops } => ops
                .iter()
                .filter(|op| op.tick == view.clock)
                .nth(idx)
                .map(|op| op.action.to_action()),
            ProgramKind::DummyParticle => dummy_particle_action(view, mem, idx),
        }
    }

    /// The strategy's classical bit guess at the end of a trial, when it
    /// declares a guess rule.
    pub fn finalize_guess(&self, mem: &EveMemory) -> Option<Bit> {
        match &self.kind {
            ProgramKind::Passive | ProgramKind::UnitarySchedule { .. } => None,
            // Occupancy carries no phase information; the rule is fixed and
            // independent of the bit.
            ProgramKind::InterceptResend { .. } => Some(Bit::from_bool(mem.saw_inside())),
            ProgramKind::DummyParticle => {
                // The replica splitter routes bit 0 onto the first hold slot.
                mem.outcomes.last().map(|(_, o)| match o {
                    MeasureOutcome::Inside => Bit::Zero,
                    MeasureOutcome::Outside => Bit::One,
                })
            }
        }
    }
}

/// Hold-slot roles used by the dummy-particle program.
const HOLD_DIRECT: u16 = 0;
const HOLD_DELAYED: u16 = 1;
const HOLD_DUMMY: u16 = 2;

/// Choreography of the sending-time-oracle attack on the two-channel
/// layout. At the emission tick Eve captures the direct wavepacket and
/// releases her own particle, pre-split between the channel and a hold
/// slot. When the delayed wavepacket leaves Alice's ring she captures it,
/// interferes both captured wavepackets through a replica splitter,
/// reads the bit, phase-corrects her particle's held half and releases it
/// on schedule.
fn dummy_particle_action(
    view: &TickView<'_>,
    mem: &EveMemory,
    idx: usize,
) -> Option<AdversaryAction> {
    let t_s = view.ts_oracle.expect("construction requires the oracle");
    let d = view.ancilla_dim;
    let tau = view.geometry.tau() as Tick;
    let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    if view.clock == t_s {
        match idx {
            0 => Some(AdversaryAction::ApplyOptics(UnitaryOp::mode_swap(
                Mode::upper(0),
                Mode::eve_hold(HOLD_DIRECT),
                d,
            ))),
            1 => {
                let dummy = PureState::make_state_with_dim(
                    &[
                        ((Mode::upper(0), 0), h),
                        ((Mode::eve_hold(HOLD_DUMMY), 0), h),
                    ],
                    d,
                )
                .expect("dummy state is well formed");
                Some(AdversaryAction::Inject(dummy))
            }
            _ => None,
        }
    } else if view.clock == t_s + tau {
        match idx {
            0 => Some(AdversaryAction::ApplyOptics(UnitaryOp::mode_swap(
                Mode::lower(0),
                Mode::eve_hold(HOLD_DELAYED),
                d,
            ))),
            1 => Some(AdversaryAction::ApplyOptics(UnitaryOp::beam_splitter_pair(
                Mode::eve_hold(HOLD_DIRECT),
                Mode::eve_hold(HOLD_DELAYED),
                d,
            ))),
            2 => Some(AdversaryAction::Measure(vec![Mode::eve_hold(HOLD_DIRECT)])),
            rest => {
                let bit_one = matches!(mem.outcomes.last(), Some((_, MeasureOutcome::Outside)));
                let release = AdversaryAction::ApplyOptics(UnitaryOp::mode_swap(
                    Mode::eve_hold(HOLD_DUMMY),
                    Mode::lower(0),
                    d,
                ));
                match (rest, bit_one) {
                    (3, true) => Some(AdversaryAction::ApplyOptics(UnitaryOp::mode_phase(
                        Mode::eve_hold(HOLD_DUMMY),
                        std::f64::consts::PI,
                        d,
                    ))),
                    (3, false) | (4, true) => Some(release),
                    _ => None,
                }
            }
        }
    } else {
        None
    }
}

/// Baseline strategy: never acts.
pub fn passive() -> AttackStrategy {
    AttackStrategy {
        name: "passive".into(),
        ancilla_dim: 1,
        knows_ts: false,
        unconstrained: false,
        kind: ProgramKind::Passive,
    }
}

/// Measures occupancy of one channel every tick; a found particle is
/// collapsed in place, which preserves its timing but erases the encoding
/// phase.
pub fn intercept_resend(channel: ChannelSide) -> AttackStrategy {
    let name = match channel {
        ChannelSide::Upper => "intercept_resend_upper",
        ChannelSide::Lower => "intercept_resend_lower",
    };
    AttackStrategy {
        name: name.into(),
        ancilla_dim: 1,
        knows_ts: false,
        unconstrained: false,
        kind: ProgramKind::InterceptResend { channel },
    }
}

/// A deterministic unitary program: the given operators fire at their
/// ticks, the ancilla starting in basis state 0.
///
/// Construction fails with `CausalityViolation` when an operator touches a
/// site segment (sources, storage rings, splitters, detectors).
pub fn ancilla_unitary_attack(
    name: impl Into<String>,
    ops: Vec<ScheduledOp>,
    ancilla_dim: u16,
) -> Result<AttackStrategy, AttackError> {
    for op in &ops {
        for mode in op.action.touched_modes() {
            if !matches!(
                mode.segment,
                Segment::UpperChannel | Segment::LowerChannel | Segment::EveHold
            ) {
                return Err(TimelineError::CausalityViolation(mode).into());
            }
        }
    }
    Ok(AttackStrategy {
        name: name.into(),
        ancilla_dim,
        knows_ts: false,
        unconstrained: false,
        kind: ProgramKind::UnitarySchedule { ops },
    })
}

/// A unitary schedule that bypasses the causality validator. Exists only
/// to demonstrate the probe identity on physically impossible operations;
/// such runs are labeled and excluded from security statistics.
pub fn unconstrained_demo(
    name: impl Into<String>,
    ops: Vec<ScheduledOp>,
    ancilla_dim: u16,
) -> AttackStrategy {
    AttackStrategy {
        name: name.into(),
        ancilla_dim,
        knows_ts: false,
        unconstrained: true,
        kind: ProgramKind::UnitarySchedule { ops },
    }
}

/// The sending-time-oracle attack. Refused without the oracle: the
/// injection schedule cannot be computed from public information.
pub fn dummy_particle(knows_ts: bool) -> Result<AttackStrategy, AttackError> {
    if !knows_ts {
        return Err(AttackError::RequiresTsOracle);
    }
    Ok(AttackStrategy {
        name: "dummy_particle".into(),
        ancilla_dim: 1,
        knows_ts: true,
        unconstrained: false,
        kind: ProgramKind::DummyParticle,
    })
}

/// Runs one tick of the adversary program against the world, sampling
/// measurements from `rng`.
pub(crate) fn step_adversary<R: Rng + ?Sized>(
    world: &mut WorldState,
    strategy: &AttackStrategy,
    mem: &mut EveMemory,
    ts_oracle: Option<Tick>,
    rng: &mut R,
) -> Result<(), AttackError> {
    let support = causal_support(world);
    let mut idx = 0usize;
    loop {
        if idx > 64 {
            return Err(AttackError::ProgramDiverged);
        }
        let view = TickView {
            clock: world.clock(),
            support: &support,
            geometry: world.geometry(),
            layout: world.layout(),
            ancilla_dim: world.ancilla_dim(),
            ts_oracle,
        };
        let Some(action) = strategy.next_action(&view, mem, idx) else {
            return Ok(());
        };
        if !strategy.unconstrained {
            validate_adversary_op(&action.touched_modes(), &support)?;
        }
        apply_action(world, &action, mem, rng)?;
        idx += 1;
    }
}

/// Deterministic variant for linear-response analysis: measurements and
/// injections are rejected.
pub(crate) fn step_adversary_deterministic(
    world: &mut WorldState,
    strategy: &AttackStrategy,
    ts_oracle: Option<Tick>,
) -> Result<(), AttackError> {
    if !strategy.is_deterministic_unitary() {
        return Err(AttackError::NonlinearAttack(strategy.name.clone()));
    }
    let mut mem = EveMemory::default();
    let mut sink = NoRng;
    step_adversary(world, strategy, &mut mem, ts_oracle, &mut sink)
}

/// Panicking RNG for code paths that must never sample.
struct NoRng;

impl rand::RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("deterministic path consumed randomness")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("deterministic path consumed randomness")
    }
    fn fill_bytes(&mut self, _dest: &mut [u8]) {
        unreachable!("deterministic path consumed randomness")
    }
    fn try_fill_bytes(&mut self, _dest: &mut [u8]) -> Result<(), rand::Error> {
        unreachable!("deterministic path consumed randomness")
    }
}

fn apply_action<R: Rng + ?Sized>(
    world: &mut WorldState,
    action: &AdversaryAction,
    mem: &mut EveMemory,
    rng: &mut R,
) -> Result<(), AttackError> {
    let clock = world.clock();
    match action {
        AdversaryAction::ApplyOptics(op) => {
            for id in world.live_register_ids() {
                let reg = world.register_mut(id).expect("live register");
                reg.state = apply_unitary(&reg.state, op)?;
            }
            world.push_event(Event::AdversaryUnitary { tick: clock });
        }
        AdversaryAction::ApplyCoupled(op) => {
            if let Some(reg) = world.register_mut(0) {
                if !reg.absorbed {
                    reg.state = apply_unitary(&reg.state, op)?;
                }
            }
            world.push_event(Event::AdversaryUnitary { tick: clock });
        }
        AdversaryAction::RotateAncilla(matrix) => {
            if let Some(reg) = world.register_mut(0) {
                if !reg.absorbed {
                    reg.state = reg.state.apply_ancilla_unitary(matrix)?;
                }
            }
            world.push_event(Event::AdversaryUnitary { tick: clock });
        }
        AdversaryAction::Measure(modes) => {
            // Registers are mutually unentangled products, so a joint
            // occupancy measurement is sampled register by register.
            let mut inside_any = false;
            for id in world.live_register_ids() {
                let reg = world.register_mut(id).expect("live register");
                let (outcome, _p, collapsed) = measure_projective(&reg.state, modes, rng);
                reg.state = collapsed;
                if outcome == MeasureOutcome::Inside {
                    inside_any = true;
                }
            }
            let outcome = if inside_any {
                MeasureOutcome::Inside
            } else {
                MeasureOutcome::Outside
            };
            mem.outcomes.push((clock, outcome));
            world.push_event(Event::AdversaryMeasurement {
                tick: clock,
                inside: inside_any,
            });
        }
        AdversaryAction::Inject(state) => {
            if state.ancilla_dim() != world.ancilla_dim() {
                return Err(AttackError::InjectDimMismatch {
                    got: state.ancilla_dim(),
                    want: world.ancilla_dim(),
                });
            }
            let id = world.add_register(state.clone());
            mem.injected.push(id);
            world.push_event(Event::AdversaryInjection {
                register: id,
                tick: clock,
            });
        }
    }
    Ok(())
}

/// The ancilla data Eve keeps from one trial: the reduced density matrix
/// of her auxiliary system (row-major `d x d`), when the strategy uses one.
#[derive(Debug, Clone)]
pub struct EveRecord {
    pub trial: u64,
    pub outcomes: Vec<(Tick, MeasureOutcome)>,
    pub final_ancilla: Option<Vec<Complex64>>,
    pub guessed_bit: Option<Bit>,
}
