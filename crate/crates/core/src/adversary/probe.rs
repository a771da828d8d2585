//! Linear-response probe for deterministic unitary attacks.
//!
//! The probe evolves three inputs through the same attack program: both
//! bit encodings and the delayed-wavepacket-only input, which is their
//! normalized difference. An attack that delivers both bits exactly as
//! the honest evolution does (times a pure ancilla state) can route the
//! difference input onto the direct arrival mode only with probability
//! fixed by the gap between the two conditional ancilla states. A
//! causality-valid program can never reach that mode in time with the
//! delayed input, which forces the two ancilla states to coincide: the
//! security argument, run as an executable check.

use num_complex::Complex64;

use crate::adversary::{passive, step_adversary_deterministic, AttackError, AttackStrategy};
use crate::qcore::{ancilla_distance, BasisKey, Mode, PureState, PRUNE_TOL};
use crate::timeline::{
    advance_tick, schedule_emission, Bit, Detector, Geometry, Layout, Tick, WorldState,
};

use std::collections::{BTreeMap, BTreeSet};

/// Tolerance for declaring an attack disturbance-free in the probe.
pub const PROBE_TOL: f64 = 1e-9;

/// Input fed to the probe evolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeInput {
    Encoded(Bit),
    /// The delayed wavepacket alone, sitting in Alice's storage ring at
    /// the emission tick.
    DelayedOnly,
}

/// An exact first-click probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Click {
    pub tick: Tick,
    pub detector: Detector,
    pub prob: f64,
}

/// Result of a draining evolution: the surviving branch, its amplitude
/// weight, every click probability routed off along the way, and the
/// exact reduced ancilla density over all branches.
#[derive(Debug, Clone)]
pub struct DrainedRun {
    pub state: Option<PureState>,
    pub weight: f64,
    pub clicks: Vec<Click>,
    pub ancilla_density: Vec<Complex64>,
}

impl DrainedRun {
    /// Joint probability of a click on `detector` at exactly `tick`.
    pub fn click_prob(&self, tick: Tick, detector: Detector) -> f64 {
        let p: f64 = self
            .clicks
            .iter()
            .filter(|c| c.tick == tick && c.detector == detector)
            .map(|c| c.prob)
            .sum();
        // an empty float sum is negative zero; keep probabilities plain
        if p == 0.0 {
            0.0
        } else {
            p
        }
    }

    /// Probability that no detector ever fires.
    pub fn no_click_prob(&self) -> f64 {
        self.weight * self.weight
    }

    /// Weight-scaled raw amplitude map of the surviving branch.
    pub fn raw_amplitudes(&self) -> BTreeMap<BasisKey, Complex64> {
        let mut out = BTreeMap::new();
        if let Some(state) = &self.state {
            let w = Complex64::new(self.weight, 0.0);
            for (&key, &amp) in state.iter() {
                out.insert(key, w * amp);
            }
        }
        out
    }

    /// Total variation distance between two click-plus-no-click
    /// distributions.
    pub fn distribution_distance(&self, other: &DrainedRun) -> f64 {
        let mut keys: BTreeSet<(Tick, Detector)> = BTreeSet::new();
        for c in self.clicks.iter().chain(&other.clicks) {
            keys.insert((c.tick, c.detector));
        }
        let mut tv = (self.no_click_prob() - other.no_click_prob()).abs();
        for (tick, detector) in keys {
            tv += (self.click_prob(tick, detector) - other.click_prob(tick, detector)).abs();
        }
        tv / 2.0
    }
}

fn seed_world(
    geometry: &Geometry,
    layout: Layout,
    d: u16,
    input: ProbeInput,
    t_s: Tick,
) -> Result<WorldState, AttackError> {
    let world = WorldState::new(*geometry, layout, d);
    match input {
        ProbeInput::Encoded(bit) => Ok(schedule_emission(world, bit, t_s)?),
        ProbeInput::DelayedOnly => {
            let mut world = world;
            while world.clock() < t_s {
                world = advance_tick(world);
            }
            world.add_register(PureState::basis(Mode::sr1(0), 0, d));
            Ok(world)
        }
    }
}

/// Evolves one input through a deterministic unitary attack up to `stop`,
/// removing detector amplitude each tick and tracking the branch weight.
///
/// Removal with renormalization is exact: the no-click branch of a
/// tick-by-tick detector measurement evolves identically to the unmeasured
/// off-detector amplitude, so the recorded click probabilities are the
/// true joint first-click probabilities.
pub fn evolve_draining(
    attack: &AttackStrategy,
    geometry: &Geometry,
    layout: Layout,
    d: u16,
    input: ProbeInput,
    stop: Tick,
) -> Result<DrainedRun, AttackError> {
    if !attack.is_deterministic_unitary() {
        return Err(AttackError::NonlinearAttack(attack.name().to_string()));
    }
    let t_s = geometry.window().0;
    let ts_oracle = attack.knows_ts().then_some(t_s);
    let mut world = seed_world(geometry, layout, d, input, t_s)?;
    let mut weight = 1.0f64;
    let mut clicks = Vec::new();
    let mut rho = vec![Complex64::new(0.0, 0.0); d as usize * d as usize];
    let mut finished = false;

    if world.clock() >= t_s && world.register(0).is_some() {
        step_adversary_deterministic(&mut world, attack, ts_oracle)?;
        drain(&mut world, &mut weight, &mut clicks, &mut rho, &mut finished);
    }
    while world.clock() < stop && !finished {
        world = advance_tick(world);
        // A full-probability arrival was collapsed and logged by the
        // evolution step itself.
        if let Some(reg) = world.register(0) {
            if reg.absorbed {
                let detector = if reg.state.prob_at(Mode::detector_d0()) > 0.5 {
                    Detector::D0
                } else {
                    Detector::D1
                };
                record_click(
                    &reg.state,
                    world.clock(),
                    detector,
                    weight * weight,
                    &mut clicks,
                    &mut rho,
                    world.ancilla_dim(),
                );
                weight = 0.0;
                finished = true;
                continue;
            }
        } else {
            continue;
        }
        step_adversary_deterministic(&mut world, attack, ts_oracle)?;
        drain(&mut world, &mut weight, &mut clicks, &mut rho, &mut finished);
    }

    let state = if finished {
        None
    } else {
        world.register(0).map(|r| r.state.clone())
    };
    if let Some(s) = &state {
        let w2 = weight * weight;
        let tail = s.ancilla_density();
        let dd = d as usize;
        for i in 0..dd * dd {
            rho[i] += Complex64::new(w2, 0.0) * tail[i];
        }
    }
    Ok(DrainedRun {
        state,
        weight,
        clicks,
        ancilla_density: rho,
    })
}

fn record_click(
    state: &PureState,
    tick: Tick,
    detector: Detector,
    prob_scale: f64,
    clicks: &mut Vec<Click>,
    rho: &mut [Complex64],
    d: u16,
) {
    let dd = d as usize;
    let amps: Vec<Complex64> = (0..d).map(|anc| state.amp(detector.mode(), anc)).collect();
    let p: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
    if p * prob_scale < PRUNE_TOL {
        return;
    }
    clicks.push(Click {
        tick,
        detector,
        prob: p * prob_scale,
    });
    for i in 0..dd {
        for j in 0..dd {
            rho[i * dd + j] += Complex64::new(prob_scale, 0.0) * amps[i] * amps[j].conj();
        }
    }
}

fn drain(
    world: &mut WorldState,
    weight: &mut f64,
    clicks: &mut Vec<Click>,
    rho: &mut [Complex64],
    finished: &mut bool,
) {
    let clock = world.clock();
    let d = world.ancilla_dim();
    let Some(reg) = world.register_mut(0) else {
        return;
    };
    if reg.absorbed {
        return;
    }
    let w2 = *weight * *weight;
    let mut drained = 0.0;
    for detector in [Detector::D0, Detector::D1] {
        let p = reg.state.prob_at(detector.mode());
        if p < PRUNE_TOL {
            continue;
        }
        record_click(&reg.state, clock, detector, w2, clicks, rho, d);
        drained += p;
    }
    if drained < PRUNE_TOL {
        return;
    }
    let residual = 1.0 - drained;
    if residual < PRUNE_TOL {
        *weight = 0.0;
        *finished = true;
        reg.absorbed = true;
        return;
    }
    reg.state = reg
        .state
        .collapse_outside(&[Mode::detector_d0(), Mode::detector_d1()])
        .expect("residual branch has positive probability");
    *weight *= residual.sqrt();
}

/// Report of the delayed-input probe.
#[derive(Debug, Clone)]
pub struct ProbeReport {
    /// Measured probability of finding the delayed-only input on the
    /// direct arrival mode at the arrival tick.
    pub direct_path_prob: f64,
    /// The same probability predicted from the ancilla gap: the honest
    /// direct-arrival probability times `|phi0 - phi1|^2 / 2` (which is
    /// `|phi0 - phi1|^2 / 4` on the two-channel layout).
    pub predicted_direct_path_prob: f64,
    /// Conditional ancilla state after delivering bit 0, evolved phase.
    pub ancilla_bit0: Vec<Complex64>,
    /// Conditional ancilla state after delivering bit 1, evolved phase.
    pub ancilla_bit1: Vec<Complex64>,
}

impl ProbeReport {
    pub fn ancilla_gap(&self) -> f64 {
        ancilla_distance(&self.ancilla_bit0, &self.ancilla_bit1)
    }
}

/// Runs the attack on both bit encodings and on the delayed-wavepacket
/// input. The bit runs are compared against the honest evolution of the
/// same layout: a disturbance-free run must equal the honest run times a
/// pure ancilla state, which is extracted. The delayed run's probability
/// on the direct arrival mode is measured and compared with the ancilla
/// gap prediction.
///
/// Errors with `DisturbingAttack` when a bit run deviates from the honest
/// evolution, and with `NonlinearAttack` for programs containing
/// measurements or injections.
pub fn probe_delayed_input(
    attack: &AttackStrategy,
    geometry: &Geometry,
    layout: Layout,
    d: u16,
) -> Result<ProbeReport, AttackError> {
    let t_s = geometry.window().0;
    let t2 = geometry.arrival_tick(t_s);
    let reference = passive();
    let ref0 = evolve_draining(&reference, geometry, layout, 1, ProbeInput::Encoded(Bit::Zero), t2)?;
    let ref1 = evolve_draining(&reference, geometry, layout, 1, ProbeInput::Encoded(Bit::One), t2)?;
    let run0 = evolve_draining(attack, geometry, layout, d, ProbeInput::Encoded(Bit::Zero), t2)?;
    let run1 = evolve_draining(attack, geometry, layout, d, ProbeInput::Encoded(Bit::One), t2)?;
    let runb = evolve_draining(attack, geometry, layout, d, ProbeInput::DelayedOnly, t2)?;

    let direct_mode = geometry.direct_arrival_mode();
    let phi0 = extract_clean_ancilla(&run0, &ref0, direct_mode, d)?;
    let phi1 = extract_clean_ancilla(&run1, &ref1, direct_mode, d)?;

    let direct_path_prob = match &runb.state {
        Some(state) => runb.weight * runb.weight * state.prob_at(direct_mode),
        None => 0.0,
    };
    // The honest raw amplitude on the direct arrival mode is the same for
    // both bits; the delayed input is their normalized difference.
    let alpha = ref0.weight
        * ref0
            .state
            .as_ref()
            .map(|s| s.amp(direct_mode, 0).norm())
            .unwrap_or(0.0);
    let gap = ancilla_distance(&phi0, &phi1);
    Ok(ProbeReport {
        direct_path_prob,
        predicted_direct_path_prob: alpha * alpha * gap * gap / 2.0,
        ancilla_bit0: phi0,
        ancilla_bit1: phi1,
    })
}

/// Requires the attacked run to equal the honest reference run times a
/// pure ancilla vector (same branch weight, same click history, every
/// raw amplitude proportional through one vector) and returns that
/// vector, carrying the evolved phase.
fn extract_clean_ancilla(
    run: &DrainedRun,
    reference: &DrainedRun,
    anchor_mode: Mode,
    d: u16,
) -> Result<Vec<Complex64>, AttackError> {
    if (run.weight - reference.weight).abs() > PROBE_TOL {
        return Err(AttackError::DisturbingAttack(
            "branch weight deviates from the honest run".into(),
        ));
    }
    if run.distribution_distance(reference) > PROBE_TOL {
        return Err(AttackError::DisturbingAttack(
            "click history deviates from the honest run".into(),
        ));
    }
    let raw = run.raw_amplitudes();
    let raw_ref = reference.raw_amplitudes();
    let anchor = raw_ref
        .get(&(anchor_mode, 0))
        .copied()
        .ok_or_else(|| AttackError::DisturbingAttack("honest run misses the anchor mode".into()))?;
    let phi: Vec<Complex64> = (0..d)
        .map(|anc| raw.get(&(anchor_mode, anc)).copied().unwrap_or_default() / anchor)
        .collect();
    let norm: f64 = phi.iter().map(|c| c.norm_sqr()).sum();
    if (norm - 1.0).abs() > PROBE_TOL {
        return Err(AttackError::DisturbingAttack(format!(
            "anchor-mode weight deviates from the honest run by {:.3e}",
            (norm - 1.0).abs()
        )));
    }
    // every attacked amplitude must factor through the same vector
    let mut keys: BTreeSet<BasisKey> = raw.keys().copied().collect();
    for (mode, _) in raw_ref.keys() {
        for anc in 0..d {
            keys.insert((*mode, anc));
        }
    }
    for (mode, anc) in keys {
        let got = raw.get(&(mode, anc)).copied().unwrap_or_default();
        let want = raw_ref
            .get(&(mode, 0))
            .copied()
            .unwrap_or_default()
            * phi[anc as usize];
        if (got - want).norm() > PROBE_TOL {
            return Err(AttackError::DisturbingAttack(format!(
                "amplitude on {mode} deviates from the honest product form"
            )));
        }
    }
    Ok(phi)
}

/// Exact first-click distribution and no-click probability for one bit
/// under a deterministic unitary attack.
pub fn click_distribution(
    attack: &AttackStrategy,
    geometry: &Geometry,
    layout: Layout,
    d: u16,
    bit: Bit,
) -> Result<DrainedRun, AttackError> {
    let t_s = geometry.window().0;
    let stop = geometry.receive_tick(t_s) + 2 * geometry.tau() as Tick + 2;
    evolve_draining(attack, geometry, layout, d, ProbeInput::Encoded(bit), stop)
}

/// Maximum amplitude deviation between the evolved delayed-only input and
/// the normalized difference of the evolved bit inputs, at the arrival
/// tick. Zero (to rounding) for every deterministic unitary program.
pub fn superposition_consistency(
    attack: &AttackStrategy,
    geometry: &Geometry,
    layout: Layout,
    d: u16,
) -> Result<f64, AttackError> {
    let t_s = geometry.window().0;
    let t2 = geometry.arrival_tick(t_s);
    let run0 = evolve_draining(attack, geometry, layout, d, ProbeInput::Encoded(Bit::Zero), t2)?;
    let run1 = evolve_draining(attack, geometry, layout, d, ProbeInput::Encoded(Bit::One), t2)?;
    let runb = evolve_draining(attack, geometry, layout, d, ProbeInput::DelayedOnly, t2)?;
    let raw0 = run0.raw_amplitudes();
    let raw1 = run1.raw_amplitudes();
    let rawb = runb.raw_amplitudes();
    let h = 1.0 / std::f64::consts::SQRT_2;
    let mut dev: f64 = 0.0;
    let keys: BTreeSet<BasisKey> = raw0
        .keys()
        .chain(raw1.keys())
        .chain(rawb.keys())
        .copied()
        .collect();
    for key in keys {
        let get = |m: &BTreeMap<BasisKey, Complex64>| m.get(&key).copied().unwrap_or_default();
        let expect = (get(&raw0) - get(&raw1)) * Complex64::new(h, 0.0);
        dev = dev.max((get(&rawb) - expect).norm());
    }
    Ok(dev)
}
