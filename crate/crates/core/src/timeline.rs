//! Discrete global clock, interferometer geometry and free evolution.
//!
//! One tick is one lattice step. A trial's wavepackets move through the
//! segments as a fixed shift network: the direct wavepacket crosses the
//! upper channel and waits in Bob's storage ring, the delayed wavepacket
//! waits in Alice's storage ring and then crosses; both meet at the
//! receiving splitter exactly `tau + theta` ticks after emission. The
//! receiving splitter is folded into the evolution step, so amplitude
//! reaching it lands directly on the detector modes.

use std::collections::BTreeSet;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qcore::{
    Mode, PureState, Segment, UnitaryOp, EVE_HOLD_SLOTS, NORM_TOL, PRUNE_TOL,
};

/// Discrete simulation time.
pub type Tick = u64;

/// Identifier of a particle register; register 0 is Alice's particle.
pub type RegisterId = u32;

/// A transmitted bit value. Serializes as the integer 0 or 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Bit {
    Zero,
    One,
}

impl Serialize for Bit {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u8(self.as_u8())
    }
}

impl<'de> Deserialize<'de> for Bit {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        match u8::deserialize(deserializer)? {
            0 => Ok(Bit::Zero),
            1 => Ok(Bit::One),
            other => Err(serde::de::Error::custom(format!(
                "bit must be 0 or 1, got {other}"
            ))),
        }
    }
}

impl Bit {
    pub fn sign(self) -> f64 {
        match self {
            Bit::Zero => 1.0,
            Bit::One => -1.0,
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Bit::Zero => 0,
            Bit::One => 1,
        }
    }

    pub fn from_bool(one: bool) -> Self {
        if one {
            Bit::One
        } else {
            Bit::Zero
        }
    }
}

/// Which detector fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Detector {
    D0,
    D1,
}

impl Detector {
    pub fn mode(self) -> Mode {
        match self {
            Detector::D0 => Mode::detector_d0(),
            Detector::D1 => Mode::detector_d1(),
        }
    }

    /// The bit value this detector announces.
    pub fn bit(self) -> Bit {
        match self {
            Detector::D0 => Bit::Zero,
            Detector::D1 => Bit::One,
        }
    }
}

/// Channel layout variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layout {
    /// Two separated channels, one per wavepacket.
    TwoChannel,
    /// Both wavepackets share the upper channel as time bins; recombiner
    /// splitters at Alice's exit and Bob's entry waste half the amplitude
    /// at each site.
    SingleChannel,
}

/// Errors from clock and geometry operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TimelineError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("emission at tick {0} is outside the emission window")]
    OutOfWindow(Tick),
    #[error("a particle is already scheduled or in flight")]
    OverlappingEmission,
    #[error("adversary operation touches site mode {0}")]
    CausalityViolation(Mode),
}

/// Transit time `theta`, storage delay `tau` and the sending-time window.
///
/// `tau > theta` keeps the two wavepackets out of the channels at the same
/// time. Sending times are drawn uniformly from the window; the window may
/// have length one, which pins the sending time for deterministic runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    theta: u16,
    tau: u16,
    window_start: Tick,
    window_end: Tick,
}

impl Geometry {
    pub fn new(theta: u16, tau: u16, window: (Tick, Tick)) -> Result<Self, TimelineError> {
        if theta < 1 {
            return Err(TimelineError::InvalidGeometry(
                "theta must be at least 1".into(),
            ));
        }
        if tau <= theta {
            return Err(TimelineError::InvalidGeometry(
                "tau must exceed theta".into(),
            ));
        }
        if window.0 < 1 || window.1 < window.0 {
            return Err(TimelineError::InvalidGeometry(
                "emission window must be nonempty and start at tick 1 or later".into(),
            ));
        }
        Ok(Geometry {
            theta,
            tau,
            window_start: window.0,
            window_end: window.1,
        })
    }

    pub fn theta(&self) -> u16 {
        self.theta
    }

    pub fn tau(&self) -> u16 {
        self.tau
    }

    pub fn window(&self) -> (Tick, Tick) {
        (self.window_start, self.window_end)
    }

    pub fn contains_sending_tick(&self, t_s: Tick) -> bool {
        t_s >= self.window_start && t_s <= self.window_end
    }

    /// The only receive tick an honest particle can have.
    pub fn receive_tick(&self, t_s: Tick) -> Tick {
        t_s + self.tau as Tick + self.theta as Tick
    }

    /// The tick at which the wavepackets sit just before the receiving
    /// splitter: direct packet at the storage-ring exit, delayed packet at
    /// the last channel position.
    pub fn arrival_tick(&self, t_s: Tick) -> Tick {
        self.receive_tick(t_s) - 1
    }

    /// Last tick worth simulating for a trial emitted in the window.
    pub fn horizon(&self) -> Tick {
        self.window_end + self.tau as Tick + self.theta as Tick
    }

    /// Mode of the direct wavepacket just before the receiving splitter.
    pub fn direct_arrival_mode(&self) -> Mode {
        Mode::sr2(self.tau - 1)
    }

    /// Mode of the delayed wavepacket just before the receiving splitter.
    pub fn delayed_arrival_mode(&self, layout: Layout) -> Mode {
        match layout {
            Layout::TwoChannel => Mode::lower(self.theta - 1),
            Layout::SingleChannel => Mode::upper(self.theta - 1),
        }
    }

    /// Capacity of a segment under this geometry.
    pub fn capacity(&self, segment: Segment) -> u16 {
        match segment {
            Segment::UpperChannel | Segment::LowerChannel => self.theta,
            Segment::Sr1 | Segment::Sr2 => self.tau,
            Segment::EveHold => EVE_HOLD_SLOTS,
            Segment::Lost => crate::qcore::LOST_SLOTS,
            _ => 1,
        }
    }

    /// Checks a mode against segment capacities.
    pub fn mode_in_range(&self, mode: Mode) -> bool {
        mode.position < self.capacity(mode.segment)
    }
}

/// Modes the adversary may touch. A deterministic function of geometry and
/// layout: every channel position plus every hold slot, and never the
/// sources, storage rings, splitters or detectors. The ancilla is always
/// within reach and needs no entry here.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CausalSupport {
    modes: BTreeSet<Mode>,
}

impl CausalSupport {
    pub fn contains(&self, mode: Mode) -> bool {
        self.modes.contains(&mode)
    }

    pub fn modes(&self) -> impl Iterator<Item = &Mode> {
        self.modes.iter()
    }
}

/// Returns the channel-resident and adversary-owned modes at the world's
/// current tick.
pub fn causal_support(world: &WorldState) -> CausalSupport {
    support_for(&world.geometry, world.layout)
}

pub(crate) fn support_for(geometry: &Geometry, layout: Layout) -> CausalSupport {
    let mut modes = BTreeSet::new();
    for p in 0..geometry.theta {
        modes.insert(Mode::upper(p));
        if layout == Layout::TwoChannel {
            modes.insert(Mode::lower(p));
        }
    }
    for slot in 0..EVE_HOLD_SLOTS {
        modes.insert(Mode::eve_hold(slot));
    }
    CausalSupport { modes }
}

/// Checks that every particle mode touched by an adversary operation lies
/// in the causal support. Ancilla indices are always allowed.
pub fn validate_adversary_op(
    touched_modes: &[Mode],
    support: &CausalSupport,
) -> Result<(), TimelineError> {
    for &mode in touched_modes {
        if !support.contains(mode) {
            return Err(TimelineError::CausalityViolation(mode));
        }
    }
    Ok(())
}

/// Which wavepacket just entered a channel (noise hooks key off this).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryKind {
    /// The wavepacket that leaves Alice's site immediately at emission.
    Direct,
    /// The wavepacket released from Alice's storage ring after `tau` ticks.
    Delayed,
}

/// A wavepacket of some register crossing into a channel this tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelEntry {
    pub register: RegisterId,
    pub mode: Mode,
    pub kind: EntryKind,
}

/// Simulation event with its timestamp.
#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Emission {
        register: RegisterId,
        bit: Bit,
        tick: Tick,
    },
    Detection {
        register: Option<RegisterId>,
        detector: Detector,
        tick: Tick,
        dark: bool,
    },
    AdversaryUnitary {
        tick: Tick,
    },
    AdversaryMeasurement {
        tick: Tick,
        inside: bool,
    },
    AdversaryInjection {
        register: RegisterId,
        tick: Tick,
    },
}

impl Event {
    pub fn tick(&self) -> Tick {
        match self {
            Event::Emission { tick, .. }
            | Event::Detection { tick, .. }
            | Event::AdversaryUnitary { tick }
            | Event::AdversaryMeasurement { tick, .. }
            | Event::AdversaryInjection { tick, .. } => *tick,
        }
    }
}

/// One particle and its entanglement with the adversary ancilla.
#[derive(Debug, Clone)]
pub struct Register {
    pub id: RegisterId,
    pub state: PureState,
    /// Set once the particle has been detected; absorbed registers no
    /// longer evolve.
    pub absorbed: bool,
}

#[derive(Debug, Clone, Copy)]
struct PendingEmission {
    bit: Bit,
    t_s: Tick,
}

/// Global clock, registers and event log.
///
/// Evolved by value through pure step functions; detector amplitude left
/// unmeasured across an evolution step is a caller bug (the protocol layer
/// measures detectors every tick).
#[derive(Debug, Clone)]
pub struct WorldState {
    clock: Tick,
    geometry: Geometry,
    layout: Layout,
    ancilla_dim: u16,
    registers: Vec<Register>,
    next_register: RegisterId,
    pending: Option<PendingEmission>,
    emitted: bool,
    events: Vec<Event>,
    entries: Vec<ChannelEntry>,
}

impl WorldState {
    pub fn new(geometry: Geometry, layout: Layout, ancilla_dim: u16) -> Self {
        WorldState {
            clock: 0,
            geometry,
            layout,
            ancilla_dim,
            registers: Vec::new(),
            next_register: 0,
            pending: None,
            emitted: false,
            events: Vec::new(),
            entries: Vec::new(),
        }
    }

    pub fn clock(&self) -> Tick {
        self.clock
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn ancilla_dim(&self) -> u16 {
        self.ancilla_dim
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn registers(&self) -> &[Register] {
        &self.registers
    }

    pub fn register(&self, id: RegisterId) -> Option<&Register> {
        self.registers.iter().find(|r| r.id == id)
    }

    /// Channel entries produced by the most recent evolution step.
    pub fn channel_entries(&self) -> &[ChannelEntry] {
        &self.entries
    }

    pub(crate) fn push_event(&mut self, event: Event) {
        self.events.push(event);
    }

    pub(crate) fn register_mut(&mut self, id: RegisterId) -> Option<&mut Register> {
        self.registers.iter_mut().find(|r| r.id == id)
    }

    pub(crate) fn live_register_ids(&self) -> Vec<RegisterId> {
        self.registers
            .iter()
            .filter(|r| !r.absorbed)
            .map(|r| r.id)
            .collect()
    }

    /// Adds a new register holding `state`; returns its id.
    pub(crate) fn add_register(&mut self, state: PureState) -> RegisterId {
        let id = self.next_register;
        self.next_register += 1;
        self.registers.push(Register {
            id,
            state,
            absorbed: false,
        });
        id
    }

    fn materialize_emission(&mut self, bit: Bit, t_s: Tick) {
        let state = emission_state(&self.geometry, self.layout, bit, self.ancilla_dim);
        let id = self.add_register(state);
        debug_assert_eq!(id, 0, "Alice's particle is register 0");
        self.events.push(Event::Emission {
            register: id,
            bit,
            tick: t_s,
        });
        self.entries.push(ChannelEntry {
            register: id,
            mode: Mode::upper(0),
            kind: EntryKind::Direct,
        });
        self.emitted = true;
    }
}

/// The post-splitter state at the emission tick: direct wavepacket on the
/// first upper-channel position, delayed wavepacket in the storage ring.
/// Under the single-channel layout the direct wavepacket additionally
/// passes the recombiner, wasting half its amplitude into a loss sink.
fn emission_state(geometry: &Geometry, layout: Layout, bit: Bit, d: u16) -> PureState {
    let _ = geometry;
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let sign = bit.sign();
    let entries: Vec<((Mode, u16), Complex64)> = match layout {
        Layout::TwoChannel => vec![
            ((Mode::upper(0), 0), Complex64::new(h, 0.0)),
            ((Mode::sr1(0), 0), Complex64::new(sign * h, 0.0)),
        ],
        Layout::SingleChannel => vec![
            ((Mode::upper(0), 0), Complex64::new(0.5, 0.0)),
            ((Mode::lost(1), 0), Complex64::new(0.5, 0.0)),
            ((Mode::sr1(0), 0), Complex64::new(sign * h, 0.0)),
        ],
    };
    PureState::make_state_with_dim(&entries, d).expect("emission state is well formed")
}

/// Schedules (or immediately performs, when `t_s` equals the clock) the
/// emission of one bit at sending time `t_s`.
pub fn schedule_emission(
    mut world: WorldState,
    bit: Bit,
    t_s: Tick,
) -> Result<WorldState, TimelineError> {
    if !world.geometry.contains_sending_tick(t_s) {
        return Err(TimelineError::OutOfWindow(t_s));
    }
    if t_s < world.clock {
        return Err(TimelineError::OutOfWindow(t_s));
    }
    if world.pending.is_some() || world.emitted {
        return Err(TimelineError::OverlappingEmission);
    }
    if t_s == world.clock {
        world.materialize_emission(bit, t_s);
    } else {
        world.pending = Some(PendingEmission { bit, t_s });
    }
    Ok(world)
}

/// One tick of free evolution for every live register.
///
/// Channel positions advance by one, storage-ring slots cycle and release
/// after `tau` ticks, and amplitude reaching the receiving splitter is
/// interfered onto the detector modes (Hadamard convention: the direct
/// input maps to `(D0+D1)/sqrt(2)`, the delayed input to `(D0-D1)/sqrt(2)`).
/// A register arriving on a single detector with probability one is
/// collapsed there and logged; partial arrivals are left for the caller's
/// detector measurement.
pub fn advance_tick(mut world: WorldState) -> WorldState {
    world.clock += 1;
    world.entries.clear();
    let theta = world.geometry.theta;
    let tau = world.geometry.tau;
    let layout = world.layout;
    let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let half = Complex64::new(0.5, 0.0);
    let one = Complex64::new(1.0, 0.0);

    let mut new_entries: Vec<ChannelEntry> = Vec::new();
    for reg in world.registers.iter_mut().filter(|r| !r.absorbed) {
        debug_assert!(
            reg.state.prob_on(&[Mode::detector_d0(), Mode::detector_d1()]) < PRUNE_TOL,
            "unmeasured detector amplitude carried into an evolution step"
        );
        let mut entered_delayed = false;
        let id = reg.id;
        reg.state = reg.state.relabel(|(mode, anc)| {
            let key = |m: Mode| ((m, anc), one);
            match (mode.segment, layout) {
                (Segment::UpperChannel, Layout::TwoChannel) => {
                    if mode.position + 1 < theta {
                        vec![key(Mode::upper(mode.position + 1))]
                    } else {
                        vec![key(Mode::sr2(0))]
                    }
                }
                (Segment::UpperChannel, Layout::SingleChannel) => {
                    if mode.position + 1 < theta {
                        vec![key(Mode::upper(mode.position + 1))]
                    } else {
                        // Bob's recombiner: half toward the storage ring,
                        // half straight through the receiving splitter.
                        vec![
                            ((Mode::sr2(0), anc), h),
                            ((Mode::detector_d0(), anc), half),
                            ((Mode::detector_d1(), anc), -half),
                        ]
                    }
                }
                (Segment::LowerChannel, _) => {
                    if mode.position + 1 < theta {
                        vec![key(Mode::lower(mode.position + 1))]
                    } else {
                        vec![
                            ((Mode::detector_d0(), anc), h),
                            ((Mode::detector_d1(), anc), -h),
                        ]
                    }
                }
                (Segment::Sr1, _) => {
                    if mode.position + 1 < tau {
                        vec![key(Mode::sr1(mode.position + 1))]
                    } else {
                        entered_delayed = true;
                        match layout {
                            Layout::TwoChannel => vec![key(Mode::lower(0))],
                            Layout::SingleChannel => vec![
                                ((Mode::upper(0), anc), h),
                                ((Mode::lost(2), anc), h),
                            ],
                        }
                    }
                }
                (Segment::Sr2, _) => {
                    if mode.position + 1 < tau {
                        vec![key(Mode::sr2(mode.position + 1))]
                    } else {
                        vec![
                            ((Mode::detector_d0(), anc), h),
                            ((Mode::detector_d1(), anc), h),
                        ]
                    }
                }
                // Hold slots, loss sinks and formal nodes do not move.
                _ => vec![key(mode)],
            }
        });
        if entered_delayed {
            let mode = match layout {
                Layout::TwoChannel => Mode::lower(0),
                Layout::SingleChannel => Mode::upper(0),
            };
            new_entries.push(ChannelEntry {
                register: id,
                mode,
                kind: EntryKind::Delayed,
            });
        }
    }
    world.entries = new_entries;

    if let Some(pending) = world.pending {
        if pending.t_s == world.clock {
            world.pending = None;
            world.materialize_emission(pending.bit, pending.t_s);
        }
    }

    // Deterministic full-probability arrivals collapse without randomness.
    let clock = world.clock;
    let mut detections = Vec::new();
    for reg in world.registers.iter_mut().filter(|r| !r.absorbed) {
        for detector in [Detector::D0, Detector::D1] {
            if reg.state.prob_at(detector.mode()) > 1.0 - NORM_TOL {
                reg.state = reg
                    .state
                    .collapse_inside(&[detector.mode()])
                    .expect("full-probability arrival");
                reg.absorbed = true;
                detections.push(Event::Detection {
                    register: Some(reg.id),
                    detector,
                    tick: clock,
                    dark: false,
                });
            }
        }
    }
    world.events.extend(detections);
    world
}

/// Convenience: a splitter-pair operator for the adversary's replica optics.
pub fn replica_splitter(m1: Mode, m2: Mode, d: u16) -> UnitaryOp {
    UnitaryOp::beam_splitter_pair(m1, m2, d)
}
