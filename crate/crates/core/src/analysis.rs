//! Statistics over trial ensembles: rates with Wilson intervals, the
//! empirical mutual information between Alice's bits and Eve's guesses,
//! the optimal-measurement guess rule for ancilla attacks, and the
//! probe's measured-versus-predicted comparison table.

use nalgebra::{Complex, DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::probe::{click_distribution, probe_delayed_input, ProbeReport};
use crate::adversary::{AttackError, AttackStrategy, EveRecord};
use crate::protocol::{timing_test, TransmissionRecord};
use crate::timeline::{Bit, Geometry, Layout};

/// 95% normal quantile for Wilson intervals.
pub const Z_95: f64 = 1.959963984540054;
/// 99% normal quantile for Wilson intervals.
pub const Z_99: f64 = 2.5758293035489004;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("record lists are misaligned (lengths or trial ids differ)")]
    MisalignedRecords,
}

/// A Wilson score interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilsonCi {
    pub low: f64,
    pub high: f64,
}

/// Wilson score interval for `successes` out of `n` at quantile `z`.
/// Behaves sensibly at rates of exactly zero or one.
pub fn wilson_interval(successes: usize, n: usize, z: f64) -> WilsonCi {
    if n == 0 {
        return WilsonCi {
            low: 0.0,
            high: 1.0,
        };
    }
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = (z / denom) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    // the bounds are exactly 0 and 1 at the extremes; keep them there
    // despite rounding
    WilsonCi {
        low: if successes == 0 {
            0.0
        } else {
            (center - half).max(0.0)
        },
        high: if successes == n as usize {
            1.0
        } else {
            (center + half).min(1.0)
        },
    }
}

/// Aggregate rates of one trial ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub trials: usize,
    pub accepted: usize,
    pub qber: f64,
    pub timing_violation_rate: f64,
    pub acceptance_rate: f64,
    pub mi_bits: f64,
    pub qber_ci: WilsonCi,
    pub timing_violation_ci: WilsonCi,
    pub acceptance_ci: WilsonCi,
}

/// Rates over aligned transmission and adversary records. The error rate
/// here is over every accepted bit, not a sampled portion.
pub fn compute_stats(
    records: &[TransmissionRecord],
    eve: &[EveRecord],
    geometry: &Geometry,
) -> Result<EnsembleStats, AnalysisError> {
    if records.len() != eve.len() {
        return Err(AnalysisError::MisalignedRecords);
    }
    if records
        .iter()
        .zip(eve)
        .any(|(r, e)| r.trial != e.trial)
    {
        return Err(AnalysisError::MisalignedRecords);
    }
    let trials = records.len();
    let accepted: Vec<&TransmissionRecord> = records.iter().filter(|r| r.accepted).collect();
    let errors = accepted
        .iter()
        .filter(|r| r.bit_received != Some(r.bit_sent))
        .count();
    let violations = timing_test(records, geometry).violations;
    let bits: Vec<Bit> = records.iter().map(|r| r.bit_sent).collect();
    let guesses: Vec<Option<Bit>> = eve.iter().map(|e| e.guessed_bit).collect();
    let qber = if accepted.is_empty() {
        0.0
    } else {
        errors as f64 / accepted.len() as f64
    };
    Ok(EnsembleStats {
        trials,
        accepted: accepted.len(),
        qber,
        timing_violation_rate: if trials == 0 {
            0.0
        } else {
            violations as f64 / trials as f64
        },
        acceptance_rate: if trials == 0 {
            0.0
        } else {
            accepted.len() as f64 / trials as f64
        },
        mi_bits: mutual_information(&bits, &guesses),
        qber_ci: wilson_interval(errors, accepted.len(), Z_95),
        timing_violation_ci: wilson_interval(violations, trials, Z_95),
        acceptance_ci: wilson_interval(accepted.len(), trials, Z_95),
    })
}

/// Plug-in mutual information (bits) between Alice's bits and Eve's
/// guesses from the joint empirical distribution; an absent guess counts
/// as a third symbol.
pub fn mutual_information(alice_bits: &[Bit], eve_guesses: &[Option<Bit>]) -> f64 {
    assert_eq!(alice_bits.len(), eve_guesses.len(), "misaligned lists");
    let n = alice_bits.len();
    if n == 0 {
        return 0.0;
    }
    let mut joint = [[0usize; 3]; 2];
    for (bit, guess) in alice_bits.iter().zip(eve_guesses) {
        let g = match guess {
            Some(Bit::Zero) => 0,
            Some(Bit::One) => 1,
            None => 2,
        };
        joint[bit.as_u8() as usize][g] += 1;
    }
    let n = n as f64;
    let mut mi = 0.0;
    for a in 0..2 {
        let pa: f64 = joint[a].iter().sum::<usize>() as f64 / n;
        if pa == 0.0 {
            continue;
        }
        for g in 0..3 {
            let pg: f64 = (joint[0][g] + joint[1][g]) as f64 / n;
            let pag = joint[a][g] as f64 / n;
            if pag > 0.0 {
                mi += pag * (pag / (pa * pg)).log2();
            }
        }
    }
    mi.max(0.0)
}

/// Eve's fixed ancilla measurement: the eigenbasis of the difference of
/// the two conditional ancilla densities, each outcome mapped to the
/// likelier bit.
#[derive(Debug, Clone)]
pub struct GuessRule {
    dim: usize,
    vectors: Vec<Vec<Complex64>>,
    guesses: Vec<Bit>,
}

/// Builds the guess rule from the exact per-bit ancilla densities
/// (row-major `d x d`).
pub fn guess_rule(rho0: &[Complex64], rho1: &[Complex64], d: u16) -> GuessRule {
    let dim = d as usize;
    assert_eq!(rho0.len(), dim * dim);
    assert_eq!(rho1.len(), dim * dim);
    let delta: Vec<Complex<f64>> = rho0
        .iter()
        .zip(rho1)
        .map(|(a, b)| Complex::new(a.re - b.re, a.im - b.im))
        .collect();
    let matrix = DMatrix::from_row_slice(dim, dim, &delta);
    // enforce exact hermiticity against rounding before decomposing
    let herm = (matrix.clone() + matrix.adjoint()) * Complex::new(0.5, 0.0);
    let eig = SymmetricEigen::new(herm);
    let mut vectors = Vec::with_capacity(dim);
    let mut guesses = Vec::with_capacity(dim);
    for k in 0..dim {
        let col: Vec<Complex64> = (0..dim)
            .map(|i| {
                let v = eig.eigenvectors[(i, k)];
                Complex64::new(v.re, v.im)
            })
            .collect();
        vectors.push(col);
        guesses.push(if eig.eigenvalues[k] >= 0.0 {
            Bit::Zero
        } else {
            Bit::One
        });
    }
    GuessRule {
        dim,
        vectors,
        guesses,
    }
}

impl GuessRule {
    /// Samples the measurement on one trial's conditional ancilla density
    /// and returns the mapped guess.
    pub fn sample<R: Rng + ?Sized>(&self, rho: &[Complex64], rng: &mut R) -> Bit {
        assert_eq!(rho.len(), self.dim * self.dim);
        let mut probs = Vec::with_capacity(self.dim);
        let mut total = 0.0;
        for v in &self.vectors {
            let mut p = 0.0;
            for i in 0..self.dim {
                for j in 0..self.dim {
                    p += (v[i].conj() * rho[i * self.dim + j] * v[j]).re;
                }
            }
            let p = p.max(0.0);
            probs.push(p);
            total += p;
        }
        if total <= 0.0 {
            return self.guesses[0];
        }
        let mut u: f64 = rng.gen::<f64>() * total;
        for (p, guess) in probs.iter().zip(&self.guesses) {
            if u < *p {
                return *guess;
            }
            u -= p;
        }
        *self.guesses.last().expect("rule has outcomes")
    }
}

/// Per-bit disturbance of a deterministic unitary attack, computed from
/// the exact click distribution against the honest run of the same layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceStats {
    /// Probability of the wrong detector firing at the valid tick,
    /// maximized over the two bits. Zero for the honest run on both
    /// layouts.
    pub wrong_detector_prob: f64,
    /// Total variation distance between the attacked and honest click
    /// distributions (over ticks, detectors and no-click), maximized over
    /// the two bits. On the two-channel layout this is one minus the
    /// correct on-time click probability.
    pub distribution_shift: f64,
}

impl DisturbanceStats {
    /// Exact zero disturbance within rounding.
    pub fn is_zero(&self) -> bool {
        self.distribution_shift < 1e-12
    }
}

/// Exact disturbance of a deterministic unitary attack on one layout.
pub fn disturbance_stats(
    attack: &AttackStrategy,
    geometry: &Geometry,
    layout: Layout,
) -> Result<DisturbanceStats, AttackError> {
    let d = attack.ancilla_dim();
    let reference = crate::adversary::passive();
    let t_r = geometry.receive_tick(geometry.window().0);
    let mut wrong: f64 = 0.0;
    let mut shift: f64 = 0.0;
    for bit in [Bit::Zero, Bit::One] {
        let run = click_distribution(attack, geometry, layout, d, bit)?;
        let honest = click_distribution(&reference, geometry, layout, 1, bit)?;
        let other = match bit {
            Bit::Zero => crate::timeline::Detector::D1,
            Bit::One => crate::timeline::Detector::D0,
        };
        wrong = wrong.max(run.click_prob(t_r, other));
        shift = shift.max(run.distribution_distance(&honest));
    }
    Ok(DisturbanceStats {
        wrong_detector_prob: wrong,
        distribution_shift: shift,
    })
}

/// One row of the attack-suite comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackEvaluation {
    pub attack: String,
    pub causality_valid: bool,
    pub uses_ts_oracle: bool,
    /// "exact" for deterministic unitary programs (amplitudes), "sampled"
    /// for measuring programs (trial frequencies).
    pub evaluation: String,
    pub disturbance: DisturbanceStats,
    pub zero_disturbance: bool,
    /// Euclidean gap between the two conditional ancilla states; absent
    /// when the attack disturbed the encodings.
    pub ancilla_gap: Option<f64>,
    /// Measured direct-path probability of the delayed-input probe.
    pub direct_path_prob: Option<f64>,
    pub mi_bits: Option<f64>,
}

/// Evaluates one deterministic unitary attack: exact disturbance, the
/// delayed-input probe, and (optionally) empirical mutual information
/// from `mi_trials` sampled trials with the optimal ancilla measurement.
pub fn evaluate_attack(
    attack: &AttackStrategy,
    geometry: &Geometry,
    layout: Layout,
    mi_trials: usize,
    seed: u64,
) -> Result<AttackEvaluation, AttackError> {
    let d = attack.ancilla_dim();
    let disturbance = disturbance_stats(attack, geometry, layout)?;
    let probe = match probe_delayed_input(attack, geometry, layout, d) {
        Ok(report) => Some(report),
        Err(AttackError::DisturbingAttack(_)) => None,
        Err(other) => return Err(other),
    };
    let mi_bits = if mi_trials > 0 {
        Some(sampled_attack_mi(attack, geometry, layout, mi_trials, seed)?)
    } else {
        None
    };
    Ok(AttackEvaluation {
        attack: attack.name().to_string(),
        causality_valid: !attack.unconstrained(),
        uses_ts_oracle: attack.knows_ts(),
        evaluation: "exact".into(),
        disturbance,
        zero_disturbance: disturbance.is_zero(),
        ancilla_gap: probe.as_ref().map(ProbeReport::ancilla_gap),
        direct_path_prob: probe.as_ref().map(|p| p.direct_path_prob),
        mi_bits,
    })
}

/// Evaluates a measuring strategy from sampled trials: the disturbance
/// columns become trial frequencies (wrong accepted bits; timing
/// violations plus erasures plus wrong bits per trial).
pub fn evaluate_attack_empirical(
    attack: &AttackStrategy,
    geometry: &Geometry,
    layout: Layout,
    trials: usize,
    seed: u64,
) -> Result<AttackEvaluation, crate::protocol::ProtocolError> {
    let noise = crate::protocol::NoiseModel::default();
    let (records, eves) = crate::protocol::run_ensemble(
        geometry,
        layout,
        &noise,
        attack,
        trials,
        crate::protocol::BitChoice::Alternate,
        seed,
    )?;
    let stats = compute_stats(&records, &eves, geometry).expect("aligned by construction");
    let wrong = records
        .iter()
        .filter(|r| r.accepted && r.bit_received != Some(r.bit_sent))
        .count();
    let erasures = records.iter().filter(|r| r.detection.is_none()).count();
    let violations = timing_test(&records, geometry).violations;
    let shift = (wrong + erasures + violations) as f64 / records.len().max(1) as f64;
    let disturbance = DisturbanceStats {
        wrong_detector_prob: stats.qber,
        distribution_shift: shift,
    };
    Ok(AttackEvaluation {
        attack: attack.name().to_string(),
        causality_valid: !attack.unconstrained(),
        uses_ts_oracle: attack.knows_ts(),
        evaluation: "sampled".into(),
        disturbance,
        zero_disturbance: disturbance.is_zero(),
        ancilla_gap: None,
        direct_path_prob: None,
        mi_bits: Some(stats.mi_bits),
    })
}

/// Empirical mutual information of an attack over sampled trials. Eve's
/// guess comes from her strategy's own rule when it has one, otherwise
/// from the optimal measurement on her ancilla.
pub fn sampled_attack_mi(
    attack: &AttackStrategy,
    geometry: &Geometry,
    layout: Layout,
    trials: usize,
    seed: u64,
) -> Result<f64, AttackError> {
    let d = attack.ancilla_dim();
    let rule = if d > 1 && attack.is_deterministic_unitary() {
        let run0 = click_distribution(attack, geometry, layout, d, Bit::Zero)?;
        let run1 = click_distribution(attack, geometry, layout, d, Bit::One)?;
        Some(guess_rule(&run0.ancilla_density, &run1.ancilla_density, d))
    } else {
        None
    };
    let noise = crate::protocol::NoiseModel::default();
    let mut bits = Vec::with_capacity(trials);
    let mut guesses = Vec::with_capacity(trials);
    let mut sampler = crate::trial_stream(seed, u64::MAX);
    for trial in 0..trials as u64 {
        let mut rng = crate::trial_stream(seed, trial);
        let bit = if rng.gen_bool(0.5) { Bit::One } else { Bit::Zero };
        let (_, eve) =
            crate::protocol::run_trial_in_layout(trial, geometry, layout, &noise, attack, bit, &mut rng)
                .map_err(|e| match e {
                    crate::protocol::ProtocolError::Attack(a) => a,
                    other => AttackError::NonlinearAttack(other.to_string()),
                })?;
        let guess = eve.guessed_bit.or_else(|| {
            match (&rule, &eve.final_ancilla) {
                (Some(rule), Some(rho)) => Some(rule.sample(rho, &mut sampler)),
                _ => None,
            }
        });
        bits.push(bit);
        guesses.push(guess);
    }
    Ok(mutual_information(&bits, &guesses))
}

/// One row of the probe comparison: measured direct-path probability
/// against the prediction from the ancilla gap.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeComparison {
    pub attack: String,
    pub causality_valid: bool,
    pub measured: f64,
    pub predicted: f64,
    pub difference: f64,
    pub flagged: bool,
}

/// Probes every attack and tabulates measured against predicted
/// direct-path probabilities, flagging differences above `1e-9`.
pub fn probe_comparison_table(
    attacks: &[AttackStrategy],
    geometry: &Geometry,
    layout: Layout,
) -> Result<Vec<ProbeComparison>, AttackError> {
    attacks
        .iter()
        .map(|attack| {
            let report = probe_delayed_input(attack, geometry, layout, attack.ancilla_dim())?;
            let difference = (report.direct_path_prob - report.predicted_direct_path_prob).abs();
            Ok(ProbeComparison {
                attack: attack.name().to_string(),
                causality_valid: !attack.unconstrained(),
                measured: report.direct_path_prob,
                predicted: report.predicted_direct_path_prob,
                difference,
                flagged: difference > 1e-9,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::{dummy_particle, passive};
    use crate::protocol::{run_trial, NoiseModel};
    use crate::trial_stream;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn geometry() -> Geometry {
        Geometry::new(3, 5, (1, 8)).unwrap()
    }

    #[test]
    fn mi_of_perfect_correlation_is_one_bit() {
        let bits: Vec<Bit> = (0..64).map(|i| Bit::from_bool(i % 2 == 0)).collect();
        let guesses: Vec<Option<Bit>> = bits.iter().map(|b| Some(*b)).collect();
        assert!((mutual_information(&bits, &guesses) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mi_of_absent_guesses_is_zero() {
        let bits: Vec<Bit> = (0..64).map(|i| Bit::from_bool(i % 2 == 0)).collect();
        let guesses = vec![None; bits.len()];
        assert_eq!(mutual_information(&bits, &guesses), 0.0);
    }

    #[test]
    fn mi_matches_direct_formula_on_a_fixed_table() {
        // joint counts: (0,0)=30, (0,1)=10, (1,0)=10, (1,1)=50
        let mut bits = Vec::new();
        let mut guesses = Vec::new();
        for (a, g, n) in [(0, 0, 30), (0, 1, 10), (1, 0, 10), (1, 1, 50)] {
            for _ in 0..n {
                bits.push(Bit::from_bool(a == 1));
                guesses.push(Some(Bit::from_bool(g == 1)));
            }
        }
        // oracle: direct plug-in computation on the counts
        let n = 100.0f64;
        let p: [[f64; 2]; 2] = [[30.0 / n, 10.0 / n], [10.0 / n, 50.0 / n]];
        let pa = [0.4f64, 0.6];
        let pg = [0.4f64, 0.6];
        let mut expect = 0.0f64;
        for a in 0..2 {
            for g in 0..2 {
                expect += p[a][g] * (p[a][g] / (pa[a] * pg[g])).log2();
            }
        }
        assert!((mutual_information(&bits, &guesses) - expect).abs() < 1e-12);
    }

    #[test]
    fn mi_of_independent_coin_is_small_at_ten_thousand() {
        // plug-in bias is about 1/(2 n ln 2) plus sampling noise
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        let n = 10_000;
        let bits: Vec<Bit> = (0..n).map(|_| Bit::from_bool(rng.gen_bool(0.5))).collect();
        let guesses: Vec<Option<Bit>> = (0..n)
            .map(|_| Some(Bit::from_bool(rng.gen_bool(0.5))))
            .collect();
        assert!(mutual_information(&bits, &guesses) <= 0.02);
    }

    #[test]
    fn wilson_interval_contains_the_point_estimate() {
        for (s, n) in [(0usize, 10usize), (10, 10), (3, 10), (500, 1000), (0, 0)] {
            let ci = wilson_interval(s, n, Z_95);
            if n > 0 {
                let p = s as f64 / n as f64;
                assert!(ci.low <= p && p <= ci.high, "{s}/{n}: {ci:?}");
            }
            assert!(ci.low >= 0.0 && ci.high <= 1.0);
        }
    }

    #[test]
    fn stats_on_honest_ensemble_are_clean() {
        let geom = geometry();
        let noise = NoiseModel::default();
        let attack = passive();
        let mut records = Vec::new();
        let mut eves = Vec::new();
        for trial in 0..300u64 {
            let mut rng = trial_stream(41, trial);
            let bit = Bit::from_bool(trial % 2 == 1);
            let (r, e) = run_trial(trial, &geom, &noise, &attack, bit, &mut rng).unwrap();
            records.push(r);
            eves.push(e);
        }
        let stats = compute_stats(&records, &eves, &geom).unwrap();
        assert_eq!(stats.accepted, 300);
        assert_eq!(stats.qber, 0.0);
        assert_eq!(stats.timing_violation_rate, 0.0);
        assert_eq!(stats.acceptance_rate, 1.0);
        assert_eq!(stats.mi_bits, 0.0);
        assert!(stats.qber_ci.low <= stats.qber && stats.qber <= stats.qber_ci.high);
    }

    #[test]
    fn stats_reject_misaligned_lists() {
        let geom = geometry();
        let noise = NoiseModel::default();
        let attack = passive();
        let mut rng = trial_stream(43, 0);
        let (r, mut e) = run_trial(0, &geom, &noise, &attack, Bit::Zero, &mut rng).unwrap();
        e.trial = 5;
        assert_eq!(
            compute_stats(&[r], &[e], &geom),
            Err(AnalysisError::MisalignedRecords)
        );
    }

    #[test]
    fn guess_rule_separates_orthogonal_ancillas() {
        // rho0 = |0><0|, rho1 = |1><1| in d = 2: perfectly distinguishable
        let z = Complex64::new(0.0, 0.0);
        let o = Complex64::new(1.0, 0.0);
        let rho0 = vec![o, z, z, z];
        let rho1 = vec![z, z, z, o];
        let rule = guess_rule(&rho0, &rho1, 2);
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..32 {
            assert_eq!(rule.sample(&rho0, &mut rng), Bit::Zero);
            assert_eq!(rule.sample(&rho1, &mut rng), Bit::One);
        }
    }

    #[test]
    fn passive_evaluation_is_null() {
        let geom = Geometry::new(3, 5, (2, 2)).unwrap();
        let eval = evaluate_attack(&passive(), &geom, Layout::TwoChannel, 400, 7).unwrap();
        assert!(eval.zero_disturbance);
        assert_eq!(eval.ancilla_gap, Some(0.0));
        assert_eq!(eval.direct_path_prob, Some(0.0));
        assert!(eval.mi_bits.unwrap() <= 0.02);
    }

    #[test]
    fn dummy_attack_extracts_everything_cleanly() {
        let geom = geometry();
        let noise = NoiseModel::default();
        let attack = dummy_particle(true).unwrap();
        let mut records = Vec::new();
        let mut eves = Vec::new();
        for trial in 0..400u64 {
            let mut rng = trial_stream(47, trial);
            // balanced bits: plug-in MI under perfect guessing equals the
            // empirical entropy of the sent bits
            let bit = Bit::from_bool(trial % 2 == 1);
            let (r, e) = run_trial(trial, &geom, &noise, &attack, bit, &mut rng).unwrap();
            assert!(r.accepted, "trial {trial} not accepted");
            assert_eq!(r.bit_received, Some(bit));
            assert_eq!(e.guessed_bit, Some(bit));
            records.push(r);
            eves.push(e);
        }
        let stats = compute_stats(&records, &eves, &geom).unwrap();
        assert_eq!(stats.qber, 0.0);
        assert!((stats.mi_bits - 1.0).abs() < 1e-9);
    }
}
