//! Exact single-excitation state engine: labeled spatial modes, sparse
//! complex amplitudes over (mode, ancilla) pairs, local unitaries and
//! projective measurement.
//!
//! A `PureState` describes one particle spread over the interferometer
//! modes, optionally entangled with an eavesdropper ancilla of dimension
//! `d`. All arithmetic is plain `Complex64`; there are no stochastic
//! wavefunction approximations.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Normalization tolerance for state vectors.
pub const NORM_TOL: f64 = 1e-12;
/// Unitarity tolerance for operator matrices.
pub const UNITARY_TOL: f64 = 1e-10;
/// Amplitudes below this magnitude are dropped from the sparse map.
pub const PRUNE_TOL: f64 = 1e-15;
/// Tolerance for the product-state check in ancilla extraction.
pub const PRODUCT_TOL: f64 = 1e-10;

/// Spatial segment of the interferometer lattice.
///
/// `Source0/Source1`, `AliceBs1` and `BobBs2` are formal nodes: emission
/// materializes directly on the post-splitter modes and the receiving
/// splitter is folded into the free-evolution step, so these segments are
/// never occupied. They exist so site boundaries are nameable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Segment {
    Source0,
    Source1,
    AliceBs1,
    /// Upper transmission channel, one position per transit tick.
    UpperChannel,
    /// Lower transmission channel, one position per transit tick.
    LowerChannel,
    /// Alice's storage ring: delays the lower-path wavepacket.
    Sr1,
    /// Bob's storage ring: delays the upper-path wavepacket.
    Sr2,
    BobBs2,
    DetectorD0,
    DetectorD1,
    /// Eavesdropper-owned hold slots.
    EveHold,
    /// Absorbing sinks for erased or discarded amplitude.
    Lost,
}

/// Number of hold slots available to the adversary.
pub const EVE_HOLD_SLOTS: u16 = 8;
/// Number of distinct loss sinks (entry loss, recombiner waste ports).
pub const LOST_SLOTS: u16 = 4;

/// A single-photon spatial slot: segment plus position index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Mode {
    pub segment: Segment,
    pub position: u16,
}

impl Mode {
    pub const fn new(segment: Segment, position: u16) -> Self {
        Mode { segment, position }
    }

    pub const fn upper(position: u16) -> Self {
        Mode::new(Segment::UpperChannel, position)
    }

    pub const fn lower(position: u16) -> Self {
        Mode::new(Segment::LowerChannel, position)
    }

    pub const fn sr1(slot: u16) -> Self {
        Mode::new(Segment::Sr1, slot)
    }

    pub const fn sr2(slot: u16) -> Self {
        Mode::new(Segment::Sr2, slot)
    }

    pub const fn detector_d0() -> Self {
        Mode::new(Segment::DetectorD0, 0)
    }

    pub const fn detector_d1() -> Self {
        Mode::new(Segment::DetectorD1, 0)
    }

    pub const fn eve_hold(slot: u16) -> Self {
        Mode::new(Segment::EveHold, slot)
    }

    pub const fn lost(slot: u16) -> Self {
        Mode::new(Segment::Lost, slot)
    }

    /// True for detector modes.
    pub fn is_detector(&self) -> bool {
        matches!(self.segment, Segment::DetectorD0 | Segment::DetectorD1)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.segment {
            Segment::DetectorD0 => write!(f, "D0"),
            Segment::DetectorD1 => write!(f, "D1"),
            seg => write!(f, "{:?}:{}", seg, self.position),
        }
    }
}

/// Index into the adversary's auxiliary system, `0..d`.
pub type AncillaIndex = u16;

/// Basis element of the joint particle + ancilla space.
pub type BasisKey = (Mode, AncillaIndex);

/// Errors from state-engine operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum StateError {
    #[error("state entries have zero total norm")]
    ZeroNorm,
    #[error("duplicate basis key {0:?}")]
    DuplicateKey(BasisKey),
    #[error("beam splitter ports clash on mode {0}")]
    ModeClash(Mode),
    #[error("matrix is not unitary (deviation {0:.3e})")]
    NonUnitary(f64),
    #[error("no single conditional ancilla state: particle and ancilla are entangled")]
    Entangled,
    #[error("mode {0} carries no amplitude")]
    UnoccupiedMode(Mode),
    #[error("ancilla index {index} out of range for dimension {dim}")]
    AncillaOutOfRange { index: AncillaIndex, dim: u16 },
}

/// Normalized sparse amplitude map over (mode, ancilla) basis elements.
///
/// Invariants: the squared amplitudes sum to one within [`NORM_TOL`] and no
/// stored amplitude has magnitude below [`PRUNE_TOL`]. Equality of physical
/// states is up to a global phase; see [`PureState::approx_eq_global_phase`].
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    amps: BTreeMap<BasisKey, Complex64>,
    ancilla_dim: u16,
}

impl PureState {
    /// Builds a normalized state from amplitude entries, inferring the
    /// ancilla dimension from the largest index used.
    pub fn make_state(entries: &[(BasisKey, Complex64)]) -> Result<Self, StateError> {
        let dim = entries
            .iter()
            .map(|((_, anc), _)| anc + 1)
            .max()
            .unwrap_or(1);
        Self::make_state_with_dim(entries, dim)
    }

    /// Builds a normalized state with an explicit ancilla dimension.
    pub fn make_state_with_dim(
        entries: &[(BasisKey, Complex64)],
        ancilla_dim: u16,
    ) -> Result<Self, StateError> {
        if entries.is_empty() {
            return Err(StateError::ZeroNorm);
        }
        let mut amps = BTreeMap::new();
        for &(key, amp) in entries {
            if key.1 >= ancilla_dim {
                return Err(StateError::AncillaOutOfRange {
                    index: key.1,
                    dim: ancilla_dim,
                });
            }
            if amps.insert(key, amp).is_some() {
                return Err(StateError::DuplicateKey(key));
            }
        }
        let mut state = PureState { amps, ancilla_dim };
        state.renormalize()?;
        Ok(state)
    }

    /// Single basis element with amplitude one.
    pub fn basis(mode: Mode, anc: AncillaIndex, ancilla_dim: u16) -> Self {
        let mut amps = BTreeMap::new();
        amps.insert((mode, anc), Complex64::new(1.0, 0.0));
        PureState { amps, ancilla_dim }
    }

    pub fn ancilla_dim(&self) -> u16 {
        self.ancilla_dim
    }

    /// Amplitude on a basis element (zero if absent).
    pub fn amp(&self, mode: Mode, anc: AncillaIndex) -> Complex64 {
        self.amps
            .get(&(mode, anc))
            .copied()
            .unwrap_or(Complex64::new(0.0, 0.0))
    }

    /// Iterates stored (key, amplitude) pairs in deterministic order.
    pub fn iter(&self) -> impl Iterator<Item = (&BasisKey, &Complex64)> {
        self.amps.iter()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.values().map(|a| a.norm_sqr()).sum()
    }

    /// Total probability of finding the particle in any of `modes`.
    pub fn prob_on<'a, I>(&self, modes: I) -> f64
    where
        I: IntoIterator<Item = &'a Mode>,
    {
        let mut p = 0.0;
        for mode in modes {
            for anc in 0..self.ancilla_dim {
                p += self.amp(*mode, anc).norm_sqr();
            }
        }
        p
    }

    /// Probability of finding the particle at one mode.
    pub fn prob_at(&self, mode: Mode) -> f64 {
        self.prob_on(std::iter::once(&mode))
    }

    /// Set of modes carrying amplitude.
    pub fn occupied_modes(&self) -> Vec<Mode> {
        let mut modes: Vec<Mode> = self.amps.keys().map(|(m, _)| *m).collect();
        modes.dedup();
        modes
    }

    fn renormalize(&mut self) -> Result<(), StateError> {
        let n = self.norm_sqr();
        if n < PRUNE_TOL {
            return Err(StateError::ZeroNorm);
        }
        let scale = 1.0 / n.sqrt();
        for amp in self.amps.values_mut() {
            *amp *= scale;
        }
        self.prune();
        Ok(())
    }

    fn prune(&mut self) {
        self.amps.retain(|_, a| a.norm() >= PRUNE_TOL);
    }

    /// Rebuilds the state by mapping every basis key to a list of weighted
    /// target keys. The map must be an isometry on the occupied support;
    /// used by the free-evolution step.
    pub(crate) fn relabel<F>(&self, mut f: F) -> PureState
    where
        F: FnMut(BasisKey) -> Vec<(BasisKey, Complex64)>,
    {
        let mut amps: BTreeMap<BasisKey, Complex64> = BTreeMap::new();
        for (&key, &amp) in &self.amps {
            for (target, coeff) in f(key) {
                *amps.entry(target).or_insert(Complex64::new(0.0, 0.0)) += amp * coeff;
            }
        }
        let mut out = PureState {
            amps,
            ancilla_dim: self.ancilla_dim,
        };
        out.prune();
        debug_assert!((out.norm_sqr() - 1.0).abs() < 1e-9, "relabel lost norm");
        out
    }

    /// Linear combination `c1*s1 + c2*s2`, renormalized.
    pub fn lin_comb(
        c1: Complex64,
        s1: &PureState,
        c2: Complex64,
        s2: &PureState,
    ) -> Result<PureState, StateError> {
        let dim = s1.ancilla_dim.max(s2.ancilla_dim);
        let mut amps: BTreeMap<BasisKey, Complex64> = BTreeMap::new();
        for (&k, &a) in &s1.amps {
            *amps.entry(k).or_insert(Complex64::new(0.0, 0.0)) += c1 * a;
        }
        for (&k, &a) in &s2.amps {
            *amps.entry(k).or_insert(Complex64::new(0.0, 0.0)) += c2 * a;
        }
        let mut out = PureState {
            amps,
            ancilla_dim: dim,
        };
        out.renormalize()?;
        Ok(out)
    }

    /// Like [`PureState::lin_comb`] but without renormalizing; returns the raw
    /// (possibly sub-normalized) amplitude map for oracle-style comparisons.
    pub fn lin_comb_raw(
        c1: Complex64,
        s1: &PureState,
        c2: Complex64,
        s2: &PureState,
    ) -> BTreeMap<BasisKey, Complex64> {
        let mut amps: BTreeMap<BasisKey, Complex64> = BTreeMap::new();
        for (&k, &a) in &s1.amps {
            *amps.entry(k).or_insert(Complex64::new(0.0, 0.0)) += c1 * a;
        }
        for (&k, &a) in &s2.amps {
            *amps.entry(k).or_insert(Complex64::new(0.0, 0.0)) += c2 * a;
        }
        amps.retain(|_, a| a.norm() >= PRUNE_TOL);
        amps
    }

    /// True if the states differ only by a global phase, within `tol` in
    /// amplitude magnitude.
    pub fn approx_eq_global_phase(&self, other: &PureState, tol: f64) -> bool {
        let overlap = inner_product(self, other);
        (overlap.norm() - 1.0).abs() <= tol
    }

    /// Maximum amplitude deviation against a raw amplitude map.
    pub fn max_deviation(&self, reference: &BTreeMap<BasisKey, Complex64>) -> f64 {
        let mut dev: f64 = 0.0;
        for (&k, &a) in &self.amps {
            let r = reference.get(&k).copied().unwrap_or_default();
            dev = dev.max((a - r).norm());
        }
        for (&k, &r) in reference {
            if !self.amps.contains_key(&k) {
                dev = dev.max(r.norm());
            }
        }
        dev
    }

    /// Collapses onto the given mode subset (keep amplitudes inside,
    /// renormalize). Errors if the subset carries no amplitude.
    pub fn collapse_inside(&self, modes: &[Mode]) -> Result<PureState, StateError> {
        let mut out = self.clone();
        out.amps.retain(|(m, _), _| modes.contains(m));
        out.renormalize()
            .map_err(|_| StateError::UnoccupiedMode(modes[0]))?;
        Ok(out)
    }

    /// Collapses onto the complement of the mode subset.
    pub fn collapse_outside(&self, modes: &[Mode]) -> Result<PureState, StateError> {
        let mut out = self.clone();
        out.amps.retain(|(m, _), _| !modes.contains(m));
        out.renormalize().map_err(|_| StateError::ZeroNorm)?;
        Ok(out)
    }

    /// Applies a unitary to the ancilla factor alone, uniformly over every
    /// occupied mode. `matrix` is row-major `d x d`. This is always within
    /// the adversary's power: it touches no particle mode.
    pub fn apply_ancilla_unitary(&self, matrix: &[Complex64]) -> Result<PureState, StateError> {
        let d = self.ancilla_dim as usize;
        check_unitary(matrix, d)?;
        let mut amps: BTreeMap<BasisKey, Complex64> = BTreeMap::new();
        let modes = self.occupied_modes();
        for mode in modes {
            for row in 0..d {
                let mut acc = Complex64::new(0.0, 0.0);
                for col in 0..d {
                    acc += matrix[row * d + col] * self.amp(mode, col as u16);
                }
                if acc.norm() >= PRUNE_TOL {
                    amps.insert((mode, row as u16), acc);
                }
            }
        }
        Ok(PureState {
            amps,
            ancilla_dim: self.ancilla_dim,
        })
    }

    /// Reduced ancilla density matrix (row-major `d x d`), tracing out the
    /// particle modes.
    pub fn ancilla_density(&self) -> Vec<Complex64> {
        let d = self.ancilla_dim as usize;
        let mut rho = vec![Complex64::new(0.0, 0.0); d * d];
        for mode in self.occupied_modes() {
            for i in 0..d {
                let ci = self.amp(mode, i as u16);
                if ci.norm() < PRUNE_TOL {
                    continue;
                }
                for j in 0..d {
                    let cj = self.amp(mode, j as u16);
                    rho[i * d + j] += ci * cj.conj();
                }
            }
        }
        rho
    }
}

/// Builds the normalized bit-encoding superposition `(|m0> + sign |m1>)/sqrt(2)`.
pub fn superposition(m0: Mode, m1: Mode, sign: f64, ancilla_dim: u16) -> PureState {
    let one = Complex64::new(1.0, 0.0);
    PureState::make_state_with_dim(
        &[((m0, 0), one), ((m1, 0), Complex64::new(sign, 0.0))],
        ancilla_dim,
    )
    .expect("two-element superposition is well formed")
}

fn check_unitary(matrix: &[Complex64], dim: usize) -> Result<(), StateError> {
    assert_eq!(matrix.len(), dim * dim, "matrix shape mismatch");
    let mut max_dev: f64 = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..dim {
                acc += matrix[k * dim + i].conj() * matrix[k * dim + j];
            }
            let expect = if i == j { 1.0 } else { 0.0 };
            max_dev = max_dev.max((acc - expect).norm());
        }
    }
    if max_dev > UNITARY_TOL {
        return Err(StateError::NonUnitary(max_dev));
    }
    Ok(())
}

/// A unitary acting on an explicit list of basis elements; identity
/// elsewhere. The matrix is row-major over the support ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitaryOp {
    support: Vec<BasisKey>,
    matrix: Vec<Complex64>,
}

impl UnitaryOp {
    /// Builds an operator from its support and matrix, verifying unitarity.
    pub fn from_matrix(support: Vec<BasisKey>, matrix: Vec<Complex64>) -> Result<Self, StateError> {
        let dim = support.len();
        assert!(dim > 0, "empty support");
        assert_eq!(matrix.len(), dim * dim, "matrix shape mismatch");
        for (i, a) in support.iter().enumerate() {
            for b in support.iter().skip(i + 1) {
                if a == b {
                    return Err(StateError::DuplicateKey(*a));
                }
            }
        }
        check_unitary(&matrix, dim)?;
        Ok(UnitaryOp { support, matrix })
    }

    /// Operator over `modes x ancilla(0..d)` with a mode-major matrix:
    /// basis index `mode_idx * d + anc`.
    pub fn on_modes(modes: &[Mode], d: u16, matrix: Vec<Complex64>) -> Result<Self, StateError> {
        let mut support = Vec::with_capacity(modes.len() * d as usize);
        for &m in modes {
            for anc in 0..d {
                support.push((m, anc));
            }
        }
        Self::from_matrix(support, matrix)
    }

    /// Swap of two modes, uniform over the ancilla.
    pub fn mode_swap(m1: Mode, m2: Mode, d: u16) -> Self {
        let n = 2 * d as usize;
        let mut matrix = vec![Complex64::new(0.0, 0.0); n * n];
        for anc in 0..d as usize {
            matrix[anc * n + (d as usize + anc)] = Complex64::new(1.0, 0.0);
            matrix[(d as usize + anc) * n + anc] = Complex64::new(1.0, 0.0);
        }
        Self::on_modes(&[m1, m2], d, matrix).expect("swap is unitary")
    }

    /// Phase `e^{i phi}` on one mode, uniform over the ancilla.
    pub fn mode_phase(mode: Mode, phi: f64, d: u16) -> Self {
        let n = d as usize;
        let mut matrix = vec![Complex64::new(0.0, 0.0); n * n];
        let phase = Complex64::from_polar(1.0, phi);
        for anc in 0..n {
            matrix[anc * n + anc] = phase;
        }
        Self::on_modes(&[mode], d, matrix).expect("phase is unitary")
    }

    /// Balanced splitter between two modes in place (Hadamard convention),
    /// uniform over the ancilla: `|m1> -> (|m1>+|m2>)/sqrt(2)`,
    /// `|m2> -> (|m1>-|m2>)/sqrt(2)`.
    pub fn beam_splitter_pair(m1: Mode, m2: Mode, d: u16) -> Self {
        let n = 2 * d as usize;
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut matrix = vec![Complex64::new(0.0, 0.0); n * n];
        for anc in 0..d as usize {
            let i1 = anc;
            let i2 = d as usize + anc;
            matrix[i1 * n + i1] = Complex64::new(h, 0.0);
            matrix[i1 * n + i2] = Complex64::new(h, 0.0);
            matrix[i2 * n + i1] = Complex64::new(h, 0.0);
            matrix[i2 * n + i2] = Complex64::new(-h, 0.0);
        }
        Self::on_modes(&[m1, m2], d, matrix).expect("splitter is unitary")
    }

    pub fn support(&self) -> &[BasisKey] {
        &self.support
    }

    /// Particle modes the operator touches (deduplicated).
    pub fn support_modes(&self) -> Vec<Mode> {
        let mut modes: Vec<Mode> = self.support.iter().map(|(m, _)| *m).collect();
        modes.sort();
        modes.dedup();
        modes
    }

    pub fn matrix(&self) -> &[Complex64] {
        &self.matrix
    }
}

/// Applies `op` on its support, identity elsewhere.
pub fn apply_unitary(state: &PureState, op: &UnitaryOp) -> Result<PureState, StateError> {
    let dim = op.support.len();
    let mut input = vec![Complex64::new(0.0, 0.0); dim];
    for (i, key) in op.support.iter().enumerate() {
        input[i] = state.amp(key.0, key.1);
    }
    let mut out = state.clone();
    for key in &op.support {
        out.amps.remove(key);
    }
    for row in 0..dim {
        let mut acc = Complex64::new(0.0, 0.0);
        for col in 0..dim {
            acc += op.matrix[row * dim + col] * input[col];
        }
        if acc.norm() >= PRUNE_TOL {
            *out.amps
                .entry(op.support[row])
                .or_insert(Complex64::new(0.0, 0.0)) += acc;
        }
    }
    out.prune();
    debug_assert!((out.norm_sqr() - 1.0).abs() < 1e-9);
    Ok(out)
}

/// Balanced beam splitter routing `in1, in2` to `out1, out2` (Hadamard
/// convention), uniform over the ancilla. Output ports must be free unless
/// they coincide with the input ports.
pub fn apply_beam_splitter(
    state: &PureState,
    in1: Mode,
    in2: Mode,
    out1: Mode,
    out2: Mode,
) -> Result<PureState, StateError> {
    if in1 == in2 {
        return Err(StateError::ModeClash(in1));
    }
    if out1 == out2 {
        return Err(StateError::ModeClash(out1));
    }
    let inputs = [in1, in2];
    for out in [out1, out2] {
        if !inputs.contains(&out) && state.prob_at(out) > 0.0 {
            return Err(StateError::ModeClash(out));
        }
    }
    let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let mut out = state.clone();
    for anc in 0..state.ancilla_dim {
        let a1 = state.amp(in1, anc);
        let a2 = state.amp(in2, anc);
        if a1.norm() < PRUNE_TOL && a2.norm() < PRUNE_TOL {
            continue;
        }
        out.amps.remove(&(in1, anc));
        out.amps.remove(&(in2, anc));
        let b1 = h * (a1 + a2);
        let b2 = h * (a1 - a2);
        if b1.norm() >= PRUNE_TOL {
            *out.amps
                .entry((out1, anc))
                .or_insert(Complex64::new(0.0, 0.0)) += b1;
        }
        if b2.norm() >= PRUNE_TOL {
            *out.amps
                .entry((out2, anc))
                .or_insert(Complex64::new(0.0, 0.0)) += b2;
        }
    }
    out.prune();
    Ok(out)
}

/// Phase `e^{i phi}` on every ancilla branch of one mode.
pub fn apply_phase(state: &PureState, mode: Mode, phi: f64) -> PureState {
    let phase = Complex64::from_polar(1.0, phi);
    let mut out = state.clone();
    for (key, amp) in out.amps.iter_mut() {
        if key.0 == mode {
            *amp *= phase;
        }
    }
    out
}

/// Outcome of a projective mode-subset measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeasureOutcome {
    Inside,
    Outside,
}

/// Projective measurement of "is the particle in `subset`?".
///
/// Returns the sampled outcome, the probability of `Inside`, and the
/// collapsed renormalized state. Probability-zero and probability-one
/// branches are taken deterministically without consuming randomness.
pub fn measure_projective<R: Rng + ?Sized>(
    state: &PureState,
    subset: &[Mode],
    rng: &mut R,
) -> (MeasureOutcome, f64, PureState) {
    assert!(!subset.is_empty(), "measurement subset must be nonempty");
    let p_inside = state.prob_on(subset.iter());
    let outcome = if p_inside < PRUNE_TOL {
        MeasureOutcome::Outside
    } else if p_inside > 1.0 - NORM_TOL {
        MeasureOutcome::Inside
    } else if rng.gen::<f64>() < p_inside {
        MeasureOutcome::Inside
    } else {
        MeasureOutcome::Outside
    };
    let collapsed = match outcome {
        MeasureOutcome::Inside => state
            .collapse_inside(subset)
            .expect("inside branch has positive probability"),
        MeasureOutcome::Outside => {
            if p_inside < PRUNE_TOL {
                state.clone()
            } else {
                state
                    .collapse_outside(subset)
                    .expect("outside branch has positive probability")
            }
        }
    };
    (outcome, p_inside, collapsed)
}

/// Sesquilinear inner product, conjugate-linear in the first argument.
pub fn inner_product(s1: &PureState, s2: &PureState) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (key, a1) in s1.iter() {
        let a2 = s2.amp(key.0, key.1);
        acc += a1.conj() * a2;
    }
    acc
}

/// Extracts the normalized conditional ancilla vector at `mode`.
///
/// Verifies that the state factorizes as particle times ancilla: the
/// normalized conditional ancilla vectors on every occupied mode must agree
/// up to a phase within [`PRODUCT_TOL`], otherwise `Entangled` is returned.
/// The returned vector keeps the phase as stored at `mode`.
pub fn extract_ancilla_state(state: &PureState, mode: Mode) -> Result<Vec<Complex64>, StateError> {
    let d = state.ancilla_dim as usize;
    let at = |m: Mode| -> Option<Vec<Complex64>> {
        let v: Vec<Complex64> = (0..d).map(|anc| state.amp(m, anc as u16)).collect();
        let n: f64 = v.iter().map(|c| c.norm_sqr()).sum();
        if n < PRUNE_TOL {
            return None;
        }
        let scale = 1.0 / n.sqrt();
        Some(v.into_iter().map(|c| c * scale).collect())
    };
    let reference = at(mode).ok_or(StateError::UnoccupiedMode(mode))?;
    for other in state.occupied_modes() {
        if other == mode {
            continue;
        }
        let candidate = at(other).expect("occupied mode has amplitude");
        let overlap: Complex64 = candidate
            .iter()
            .zip(&reference)
            .map(|(c, r)| c.conj() * r)
            .sum();
        if (overlap.norm() - 1.0).abs() > PRODUCT_TOL {
            return Err(StateError::Entangled);
        }
    }
    Ok(reference)
}

/// Euclidean distance between two ancilla vectors.
pub fn ancilla_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt()
}
