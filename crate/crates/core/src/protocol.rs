//! Per-trial protocol execution and the users' verification tests.
//!
//! A trial draws a random sending time, emits one encoded particle,
//! interleaves free evolution with channel noise and adversary actions,
//! and measures the detectors every tick (single-shot: the first click is
//! the trial's detection). The users then compare sending and receiving
//! times and a sampled portion of the bits; a timing mismatch or an
//! anticorrelated bit exposes the intervention.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{step_adversary, AttackError, AttackStrategy, EveMemory, EveRecord};
use crate::qcore::{Mode, PureState, NORM_TOL, PRUNE_TOL};
use crate::timeline::{
    advance_tick, schedule_emission, Bit, Detector, EntryKind, Event, Geometry, Layout, Tick,
    TimelineError, WorldState,
};

/// Errors from trial execution and the verification tests.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Timeline(#[from] TimelineError),
    #[error("no accepted records to sample from")]
    EmptyAcceptedSet,
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Channel and detector imperfections. All parameters default to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Std deviation of a random phase picked up by the delayed wavepacket
    /// once per transit (radians).
    pub phase_noise_sigma: f64,
    /// Per-transit probability that the particle is erased into a loss
    /// sink at the channel entrance.
    pub loss_prob: f64,
    /// Per-tick probability that each detector fires spuriously.
    pub dark_count_rate: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            phase_noise_sigma: 0.0,
            loss_prob: 0.0,
            dark_count_rate: 0.0,
        }
    }
}

impl NoiseModel {
    pub fn is_off(&self) -> bool {
        self.phase_noise_sigma == 0.0 && self.loss_prob == 0.0 && self.dark_count_rate == 0.0
    }

    fn validate(&self) -> Result<(), ProtocolError> {
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return Err(ProtocolError::Config("loss_prob must lie in [0,1]".into()));
        }
        if !(0.0..=1.0).contains(&self.dark_count_rate) {
            return Err(ProtocolError::Config(
                "dark_count_rate must lie in [0,1]".into(),
            ));
        }
        if self.phase_noise_sigma < 0.0 {
            return Err(ProtocolError::Config(
                "phase_noise_sigma must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// A registered detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detection {
    pub detector: Detector,
    pub t_r: Tick,
}

/// One trial's ledger entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmissionRecord {
    pub trial: u64,
    pub bit_sent: Bit,
    pub t_s: Tick,
    pub detection: Option<Detection>,
    /// True when at least one dark count fired during the trial.
    pub dark_count_injected: bool,
    pub accepted: bool,
    pub bit_received: Option<Bit>,
}

impl TransmissionRecord {
    /// Machine check of the record invariants.
    pub fn check_invariants(&self, geometry: &Geometry) -> Result<(), String> {
        if self.accepted {
            let det = self
                .detection
                .ok_or("accepted record without detection")?;
            if det.t_r != geometry.receive_tick(self.t_s) {
                return Err(format!(
                    "accepted record with t_r {} != t_s + tau + theta",
                    det.t_r
                ));
            }
        }
        match (self.detection, self.bit_received) {
            (Some(det), Some(bit)) if det.detector.bit() != bit => {
                Err("bit_received disagrees with detector".into())
            }
            (Some(_), None) | (None, Some(_)) => {
                Err("detection and bit_received must be present together".into())
            }
            _ => Ok(()),
        }
    }
}

/// Outcome of the two verification tests over a record batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub timing_violations: usize,
    pub sampled_bits: usize,
    pub bit_errors: usize,
    pub qber: f64,
    pub eavesdropper_detected: bool,
}

/// Counts of the timing comparison: detections at the wrong tick are
/// violations, missing detections are erasures (discarded, not errors).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub violations: usize,
    pub erasures: usize,
}

/// Compares the registered receiving time of each record against
/// `t_s + tau + theta`.
pub fn timing_test(records: &[TransmissionRecord], geometry: &Geometry) -> TimingSummary {
    let mut violations = 0;
    let mut erasures = 0;
    for record in records {
        match record.detection {
            Some(det) if det.t_r != geometry.receive_tick(record.t_s) => violations += 1,
            Some(_) => {}
            None => erasures += 1,
        }
    }
    TimingSummary {
        violations,
        erasures,
    }
}

/// Samples a portion of the accepted records (without replacement, the
/// sampled bits are consumed) and compares sent against received bits.
pub fn bit_comparison_test<R: Rng + ?Sized>(
    records: &[TransmissionRecord],
    geometry: &Geometry,
    sample_fraction: f64,
    threshold: f64,
    rng: &mut R,
) -> Result<VerificationReport, ProtocolError> {
    if !(0.0..=1.0).contains(&sample_fraction) || sample_fraction == 0.0 {
        return Err(ProtocolError::Config(
            "sample_fraction must lie in (0, 1]".into(),
        ));
    }
    let accepted: Vec<&TransmissionRecord> = records.iter().filter(|r| r.accepted).collect();
    if accepted.is_empty() {
        return Err(ProtocolError::EmptyAcceptedSet);
    }
    let k = ((sample_fraction * accepted.len() as f64).ceil() as usize).max(1);
    let k = k.min(accepted.len());
    let mut indices: Vec<usize> = (0..accepted.len()).collect();
    for i in 0..k {
        let j = rng.gen_range(i..indices.len());
        indices.swap(i, j);
    }
    let bit_errors = indices[..k]
        .iter()
        .filter(|&&i| accepted[i].bit_received != Some(accepted[i].bit_sent))
        .count();
    let qber = bit_errors as f64 / k as f64;
    let timing_violations = timing_test(records, geometry).violations;
    Ok(VerificationReport {
        timing_violations,
        sampled_bits: k,
        bit_errors,
        qber,
        eavesdropper_detected: timing_violations > 0 || qber > threshold,
    })
}

/// Erases a register's particle into the loss sink, keeping the ancilla
/// branch magnitudes (the environment absorbed the particle; phases
/// relative to it are gone).
fn erase_register(state: &PureState) -> PureState {
    let d = state.ancilla_dim();
    let mut entries = Vec::new();
    for anc in 0..d {
        let weight: f64 = state
            .occupied_modes()
            .iter()
            .map(|m| state.amp(*m, anc).norm_sqr())
            .sum();
        if weight > PRUNE_TOL {
            entries.push(((Mode::lost(0), anc), Complex64::new(weight.sqrt(), 0.0)));
        }
    }
    PureState::make_state_with_dim(&entries, d).expect("erased state is well formed")
}

/// Applies one tick of channel noise: entry losses and the delayed-path
/// phase kick, driven by the channel entries of the last evolution step.
pub fn apply_noise<R: Rng + ?Sized>(
    mut world: WorldState,
    noise: &NoiseModel,
    rng: &mut R,
) -> WorldState {
    if noise.is_off() {
        return world;
    }
    let entries = world.channel_entries().to_vec();
    for entry in entries {
        let Some(reg) = world.register_mut(entry.register) else {
            continue;
        };
        if reg.absorbed {
            continue;
        }
        if noise.loss_prob > 0.0 && rng.gen::<f64>() < noise.loss_prob {
            reg.state = erase_register(&reg.state);
            continue;
        }
        if entry.kind == EntryKind::Delayed && noise.phase_noise_sigma > 0.0 {
            let normal = Normal::new(0.0, noise.phase_noise_sigma).expect("sigma checked");
            let phi: f64 = normal.sample(rng);
            reg.state = crate::qcore::apply_phase(&reg.state, entry.mode, phi);
        }
    }
    world
}

/// Single-shot detector measurement across all live registers, after the
/// evolution step and the adversary's actions of the current tick.
/// Returns the detector that clicked, if any.
fn measure_detectors<R: Rng + ?Sized>(world: &mut WorldState, rng: &mut R) -> Option<Detector> {
    let clock = world.clock();
    // Full-probability arrivals were already collapsed by the evolution step.
    for event in world.events().iter().rev() {
        if event.tick() < clock {
            break;
        }
        if let Event::Detection {
            detector,
            dark: false,
            ..
        } = event
        {
            return Some(*detector);
        }
    }
    let detectors = [Mode::detector_d0(), Mode::detector_d1()];
    for id in world.live_register_ids() {
        let reg = world.register_mut(id).expect("live register");
        let p0 = reg.state.prob_at(detectors[0]);
        let p1 = reg.state.prob_at(detectors[1]);
        let p_in = p0 + p1;
        if p_in < PRUNE_TOL {
            continue;
        }
        let inside = p_in > 1.0 - NORM_TOL || rng.gen::<f64>() < p_in;
        if !inside {
            reg.state = reg
                .state
                .collapse_outside(&detectors)
                .expect("outside branch has positive probability");
            continue;
        }
        let frac0 = p0 / p_in;
        let detector = if frac0 > 1.0 - NORM_TOL {
            Detector::D0
        } else if frac0 < NORM_TOL {
            Detector::D1
        } else if rng.gen::<f64>() < frac0 {
            Detector::D0
        } else {
            Detector::D1
        };
        reg.state = reg
            .state
            .collapse_inside(&[detector.mode()])
            .expect("inside branch has positive probability");
        reg.absorbed = true;
        world.push_event(Event::Detection {
            register: Some(id),
            detector,
            tick: clock,
            dark: false,
        });
        return Some(detector);
    }
    None
}

fn trial_stop(geometry: &Geometry, layout: Layout) -> Tick {
    match layout {
        Layout::TwoChannel => geometry.horizon(),
        // the recombiner's late leak passes the storage ring twice
        Layout::SingleChannel => geometry.horizon() + geometry.tau() as Tick + 1,
    }
}

/// Runs one protocol trial on the two-channel layout.
pub fn run_trial<R: Rng + ?Sized>(
    trial: u64,
    geometry: &Geometry,
    noise: &NoiseModel,
    attack: &AttackStrategy,
    bit: Bit,
    rng: &mut R,
) -> Result<(TransmissionRecord, EveRecord), ProtocolError> {
    run_trial_in_layout(trial, geometry, Layout::TwoChannel, noise, attack, bit, rng)
}

/// Trial runner generic over the channel layout.
pub fn run_trial_in_layout<R: Rng + ?Sized>(
    trial: u64,
    geometry: &Geometry,
    layout: Layout,
    noise: &NoiseModel,
    attack: &AttackStrategy,
    bit: Bit,
    rng: &mut R,
) -> Result<(TransmissionRecord, EveRecord), ProtocolError> {
    noise.validate()?;
    let (w0, w1) = geometry.window();
    let t_s: Tick = rng.gen_range(w0..=w1);
    let ts_oracle = attack.knows_ts().then_some(t_s);
    let world = WorldState::new(*geometry, layout, attack.ancilla_dim());
    let mut world = schedule_emission(world, bit, t_s)?;
    let mut mem = EveMemory::default();
    let stop = trial_stop(geometry, layout);

    let mut detection: Option<Detection> = None;
    let mut dark_fired = false;
    while world.clock() < stop && detection.is_none() {
        world = advance_tick(world);
        world = apply_noise(world, noise, rng);
        step_adversary(&mut world, attack, &mut mem, ts_oracle, rng)?;
        let real = measure_detectors(&mut world, rng);
        let mut dark: Option<Detector> = None;
        if noise.dark_count_rate > 0.0 {
            for detector in [Detector::D0, Detector::D1] {
                if rng.gen::<f64>() < noise.dark_count_rate {
                    dark_fired = true;
                    if dark.is_none() {
                        dark = Some(detector);
                    }
                    world.push_event(Event::Detection {
                        register: None,
                        detector,
                        tick: world.clock(),
                        dark: true,
                    });
                }
            }
        }
        // Within one tick a real click wins; across ticks the earlier
        // event won by ending the trial.
        detection = real.or(dark).map(|detector| Detection {
            detector,
            t_r: world.clock(),
        });
    }

    let accepted =
        detection.map(|d| d.t_r == geometry.receive_tick(t_s)) == Some(true);
    let record = TransmissionRecord {
        trial,
        bit_sent: bit,
        t_s,
        detection,
        dark_count_injected: dark_fired,
        accepted,
        bit_received: detection.map(|d| d.detector.bit()),
    };
    debug_assert_eq!(record.check_invariants(geometry), Ok(()));

    let final_ancilla = (attack.ancilla_dim() > 1)
        .then(|| world.register(0).map(|r| r.state.ancilla_density()))
        .flatten();
    let guessed_bit = attack.finalize_guess(&mem);
    let eve = EveRecord {
        trial,
        outcomes: mem.outcomes,
        final_ancilla,
        guessed_bit,
    };
    Ok((record, eve))
}

/// How the sent bit of each trial is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BitChoice {
    /// A fresh fair coin per trial, drawn from the trial's stream.
    Random,
    /// The same bit every trial.
    Fixed(Bit),
    /// Strict alternation by trial index (balanced ensembles).
    Alternate,
}

impl BitChoice {
    fn draw<R: Rng + ?Sized>(&self, trial: u64, rng: &mut R) -> Bit {
        match self {
            BitChoice::Random => Bit::from_bool(rng.gen_bool(0.5)),
            BitChoice::Fixed(bit) => *bit,
            BitChoice::Alternate => Bit::from_bool(trial % 2 == 1),
        }
    }
}

/// Runs an ensemble of independent trials in parallel. Every trial draws
/// from its own stream keyed by `(seed, trial index)`, so the result is
/// identical regardless of scheduling.
pub fn run_ensemble(
    geometry: &Geometry,
    layout: Layout,
    noise: &NoiseModel,
    attack: &AttackStrategy,
    trials: usize,
    bits: BitChoice,
    seed: u64,
) -> Result<(Vec<TransmissionRecord>, Vec<EveRecord>), ProtocolError> {
    use rayon::prelude::*;
    let results: Result<Vec<_>, ProtocolError> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = crate::trial_stream(seed, trial);
            let bit = bits.draw(trial, &mut rng);
            run_trial_in_layout(trial, geometry, layout, noise, attack, bit, &mut rng)
        })
        .collect();
    let pairs = results?;
    Ok(pairs.into_iter().unzip())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::passive;
    use crate::trial_stream;

    fn geometry() -> Geometry {
        Geometry::new(3, 5, (1, 16)).unwrap()
    }

    #[test]
    fn honest_trials_are_exact() {
        let geom = geometry();
        let noise = NoiseModel::default();
        let attack = passive();
        for trial in 0..200u64 {
            let bit = if trial % 2 == 0 { Bit::Zero } else { Bit::One };
            let mut rng = trial_stream(7, trial);
            let (record, _) = run_trial(trial, &geom, &noise, &attack, bit, &mut rng).unwrap();
            assert!(record.accepted);
            assert_eq!(record.bit_received, Some(bit));
            let det = record.detection.unwrap();
            assert_eq!(det.t_r, geom.receive_tick(record.t_s));
        }
    }

    #[test]
    fn certain_loss_means_no_detection() {
        let geom = geometry();
        let noise = NoiseModel {
            loss_prob: 1.0,
            ..NoiseModel::default()
        };
        let mut rng = trial_stream(3, 0);
        let (record, _) = run_trial(0, &geom, &noise, &passive(), Bit::Zero, &mut rng).unwrap();
        assert!(record.detection.is_none());
        assert!(!record.accepted);
    }

    #[test]
    fn half_loss_per_transit_accepts_a_quarter() {
        // independent Bernoulli product: both transits must survive
        let geom = geometry();
        let noise = NoiseModel {
            loss_prob: 0.5,
            ..NoiseModel::default()
        };
        let n = 20_000u64;
        let mut accepted = 0usize;
        for trial in 0..n {
            let mut rng = trial_stream(11, trial);
            let (record, _) =
                run_trial(trial, &geom, &noise, &passive(), Bit::Zero, &mut rng).unwrap();
            if record.accepted {
                assert_eq!(record.bit_received, Some(Bit::Zero));
                accepted += 1;
            }
        }
        let rate = accepted as f64 / n as f64;
        // 3 sigma around 0.25 at n = 20000 is about 0.0092
        assert!((rate - 0.25).abs() < 0.01, "acceptance rate {rate}");
    }

    #[test]
    fn dark_counts_without_particle_land_at_wrong_times() {
        // with the particle always lost, a detection must come from a dark
        // count; hitting the single valid tick is rare, so acceptance is
        // bounded by the direct probability computation
        let geom = geometry();
        let noise = NoiseModel {
            loss_prob: 1.0,
            dark_count_rate: 0.01,
            ..NoiseModel::default()
        };
        let n = 20_000u64;
        let mut accepted = 0usize;
        let mut detections = 0usize;
        for trial in 0..n {
            let mut rng = trial_stream(13, trial);
            let (record, _) =
                run_trial(trial, &geom, &noise, &passive(), Bit::Zero, &mut rng).unwrap();
            if record.detection.is_some() {
                detections += 1;
            }
            if record.accepted {
                accepted += 1;
            }
        }
        assert!(detections > n as usize / 20, "dark counts should fire");
        // acceptance requires the first dark count to land exactly at the
        // valid tick: bounded by 2 * rate per trial
        let bound = 2.0 * noise.dark_count_rate + 3.0 * (2.0 * noise.dark_count_rate / n as f64).sqrt();
        assert!(
            (accepted as f64 / n as f64) < bound,
            "accepted {accepted} of {n}"
        );
    }

    #[test]
    fn phase_noise_flips_detectors_at_the_interferometer_rate() {
        // closed form: wrong-detector probability averaged over the phase
        // kick is (1 - exp(-sigma^2 / 2)) / 2
        let geom = geometry();
        let sigma = 0.6f64;
        let noise = NoiseModel {
            phase_noise_sigma: sigma,
            ..NoiseModel::default()
        };
        let n = 20_000u64;
        let mut wrong = 0usize;
        for trial in 0..n {
            let mut rng = trial_stream(17, trial);
            let (record, _) =
                run_trial(trial, &geom, &noise, &passive(), Bit::Zero, &mut rng).unwrap();
            assert!(record.accepted, "phase noise must not break timing");
            if record.bit_received != Some(Bit::Zero) {
                wrong += 1;
            }
        }
        let expected = 0.5 * (1.0 - (-sigma * sigma / 2.0).exp());
        let rate = wrong as f64 / n as f64;
        let slack = 3.0 * (expected * (1.0 - expected) / n as f64).sqrt();
        assert!(
            (rate - expected).abs() < slack + 0.003,
            "wrong rate {rate}, expected {expected}"
        );
    }

    #[test]
    fn timing_test_counts_violations_and_erasures() {
        let geom = geometry();
        let honest = TransmissionRecord {
            trial: 0,
            bit_sent: Bit::Zero,
            t_s: 2,
            detection: Some(Detection {
                detector: Detector::D0,
                t_r: geom.receive_tick(2),
            }),
            dark_count_injected: false,
            accepted: true,
            bit_received: Some(Bit::Zero),
        };
        let late = TransmissionRecord {
            trial: 1,
            detection: Some(Detection {
                detector: Detector::D0,
                t_r: geom.receive_tick(2) + 1,
            }),
            accepted: false,
            ..honest.clone()
        };
        let erased = TransmissionRecord {
            trial: 2,
            detection: None,
            bit_received: None,
            accepted: false,
            ..honest.clone()
        };
        let summary = timing_test(&[honest, late, erased], &geom);
        assert_eq!(summary.violations, 1);
        assert_eq!(summary.erasures, 1);
    }

    #[test]
    fn bit_comparison_detects_inverted_bits() {
        let geom = geometry();
        let mut records = Vec::new();
        for trial in 0..100u64 {
            let flip = trial % 2 == 0;
            records.push(TransmissionRecord {
                trial,
                bit_sent: Bit::Zero,
                t_s: 2,
                detection: Some(Detection {
                    detector: if flip { Detector::D1 } else { Detector::D0 },
                    t_r: geom.receive_tick(2),
                }),
                dark_count_injected: false,
                accepted: true,
                bit_received: Some(if flip { Bit::One } else { Bit::Zero }),
            });
        }
        let mut rng = trial_stream(23, 0);
        let report = bit_comparison_test(&records, &geom, 1.0, 0.0, &mut rng).unwrap();
        assert_eq!(report.sampled_bits, 100);
        assert!((report.qber - 0.5).abs() < 1e-12);
        assert!(report.eavesdropper_detected);

        let empty: Vec<TransmissionRecord> = records
            .into_iter()
            .map(|mut r| {
                r.accepted = false;
                r
            })
            .collect();
        assert!(matches!(
            bit_comparison_test(&empty, &geom, 0.2, 0.0, &mut rng),
            Err(ProtocolError::EmptyAcceptedSet)
        ));
    }

    #[test]
    fn honest_verification_is_clean() {
        let geom = geometry();
        let noise = NoiseModel::default();
        let attack = passive();
        let records: Vec<TransmissionRecord> = (0..500u64)
            .map(|trial| {
                let mut rng = trial_stream(29, trial);
                let bit = if trial % 2 == 0 { Bit::Zero } else { Bit::One };
                run_trial(trial, &geom, &noise, &attack, bit, &mut rng)
                    .unwrap()
                    .0
            })
            .collect();
        let mut rng = trial_stream(29, u64::MAX);
        let report = bit_comparison_test(&records, &geom, 0.2, 0.0, &mut rng).unwrap();
        assert_eq!(report.timing_violations, 0);
        assert_eq!(report.bit_errors, 0);
        assert!(!report.eavesdropper_detected);
    }
}
