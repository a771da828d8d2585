//! Direct message transmission on top of the bit protocol.
//!
//! The sender builds a longer string: the message is block-encoded with
//! redundancy, and extra random test bits are interleaved at seeded
//! positions for error estimation. The receiver learns the test layout
//! first; only when the estimated error rate stays within the agreed
//! threshold is the block-coding description released and the message
//! decoded. On abort the description is withheld and nothing decodes.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::AttackStrategy;
use crate::protocol::{run_trial_in_layout, NoiseModel, ProtocolError};
use crate::timeline::{Bit, Geometry, Layout};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MessageError {
    #[error("invalid message plan: {0}")]
    BadPlan(String),
    #[error("block-coding description withheld after abort")]
    MetadataWithheld,
    #[error("bit retransmission cap exhausted")]
    RetryExhausted,
    #[error("received string has wrong length: got {got}, want {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// Block code selection. Pluggable: every variant must state its codeword
/// length and the number of errors it corrects per block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CodeSpec {
    /// Repeat each data bit `r` times, decode by majority (`r` odd).
    Repetition { r: u16 },
}

impl CodeSpec {
    pub fn codeword_len(&self) -> usize {
        match self {
            CodeSpec::Repetition { r } => *r as usize,
        }
    }

    /// Errors corrected per block.
    pub fn correctable(&self) -> usize {
        match self {
            CodeSpec::Repetition { r } => (*r as usize - 1) / 2,
        }
    }

    fn validate(&self) -> Result<(), MessageError> {
        match self {
            CodeSpec::Repetition { r } => {
                if *r == 0 || r % 2 == 0 {
                    return Err(MessageError::BadPlan(
                        "repetition factor must be odd and positive".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    fn encode_bit(&self, bit: Bit) -> Vec<Bit> {
        match self {
            CodeSpec::Repetition { r } => vec![bit; *r as usize],
        }
    }

    /// Majority decode of one block; the flag reports detectable excess
    /// errors (a repetition block cannot tell one flip from a majority
    /// flip, so it never raises it).
    fn decode_block(&self, block: &[Bit]) -> (Bit, bool) {
        match self {
            CodeSpec::Repetition { .. } => {
                let ones = block.iter().filter(|b| **b == Bit::One).count();
                (Bit::from_bool(2 * ones > block.len()), false)
            }
        }
    }
}

/// Parameters of one message transmission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessagePlan {
    /// Message length in bits.
    pub n: usize,
    /// Number of interleaved error-estimation bits.
    pub k: usize,
    pub code: CodeSpec,
    /// Seed of the permutation interleaving test bits among code bits.
    pub permutation_seed: u64,
    /// Tolerable estimated error rate; abort strictly above it.
    pub threshold: f64,
    /// Retransmissions allowed per bit before giving up.
    pub retry_cap: u32,
}

impl MessagePlan {
    pub fn new(n: usize, k: usize, code: CodeSpec, permutation_seed: u64, threshold: f64) -> Self {
        MessagePlan {
            n,
            k,
            code,
            permutation_seed,
            threshold,
            retry_cap: 16,
        }
    }

    /// Total transmitted length: test bits plus codeword bits.
    pub fn transmitted_len(&self) -> usize {
        self.k + self.n * self.code.codeword_len()
    }

    fn validate(&self) -> Result<(), MessageError> {
        if self.n == 0 {
            return Err(MessageError::BadPlan("message must be nonempty".into()));
        }
        if self.k == 0 {
            return Err(MessageError::BadPlan(
                "at least one error-estimation bit is required".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(MessageError::BadPlan("threshold must lie in [0,1]".into()));
        }
        self.code.validate()
    }

    /// Positions of the test bits within the transmitted string, drawn
    /// from the permutation seed.
    fn test_positions(&self) -> Vec<usize> {
        let total = self.transmitted_len();
        let mut rng = ChaCha12Rng::seed_from_u64(self.permutation_seed);
        let mut indices: Vec<usize> = (0..total).collect();
        for i in 0..self.k {
            let j = rng.gen_range(i..total);
            indices.swap(i, j);
        }
        let mut positions: Vec<usize> = indices[..self.k].to_vec();
        positions.sort_unstable();
        positions
    }
}

/// Private side information of one encoding: the test layout (disclosed
/// first) and the block-coding description (disclosed only when the
/// error estimate stays within threshold).
#[derive(Debug, Clone, PartialEq)]
pub struct MessageMetadata {
    pub test_positions: Vec<usize>,
    pub test_values: Vec<Bit>,
    plan: MessagePlan,
    code_withheld: bool,
}

impl MessageMetadata {
    /// Blocks the block-coding description from ever being disclosed.
    pub fn withhold_code(&mut self) {
        self.code_withheld = true;
    }

    pub fn is_withheld(&self) -> bool {
        self.code_withheld
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageStatus {
    Delivered,
    Aborted,
    Corrupted,
}

/// Result of one message transmission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageOutcome {
    pub status: MessageStatus,
    pub decoded: Option<Vec<Bit>>,
    pub estimated_error_rate: f64,
}

/// Block-encodes the message and interleaves `k` random test bits at the
/// seeded positions. Returns the transmitted string and the private
/// metadata.
pub fn encode_message<R: Rng + ?Sized>(
    msg: &[Bit],
    plan: &MessagePlan,
    rng: &mut R,
) -> Result<(Vec<Bit>, MessageMetadata), MessageError> {
    plan.validate()?;
    if msg.len() != plan.n {
        return Err(MessageError::BadPlan(format!(
            "message length {} does not match plan length {}",
            msg.len(),
            plan.n
        )));
    }
    let mut code_bits: Vec<Bit> = Vec::with_capacity(plan.n * plan.code.codeword_len());
    for &bit in msg {
        code_bits.extend(plan.code.encode_bit(bit));
    }
    let positions = plan.test_positions();
    let test_values: Vec<Bit> = (0..plan.k).map(|_| Bit::from_bool(rng.gen_bool(0.5))).collect();
    let total = plan.transmitted_len();
    let mut transmitted = Vec::with_capacity(total);
    let mut code_iter = code_bits.into_iter();
    let mut test_iter = positions.iter().zip(&test_values).peekable();
    for index in 0..total {
        match test_iter.peek() {
            Some(&(&pos, value)) if pos == index => {
                transmitted.push(*value);
                test_iter.next();
            }
            _ => transmitted.push(code_iter.next().expect("length bookkeeping")),
        }
    }
    Ok((
        transmitted,
        MessageMetadata {
            test_positions: positions,
            test_values,
            plan: plan.clone(),
            code_withheld: false,
        },
    ))
}

/// Error-rate estimate over the disclosed test bits; abort strictly above
/// the threshold.
pub fn estimate_and_decide(sent: &[Bit], received: &[Bit], threshold: f64) -> (f64, bool) {
    assert_eq!(sent.len(), received.len(), "misaligned test bits");
    assert!(!sent.is_empty(), "no test bits to compare");
    let mismatches = sent.iter().zip(received).filter(|(a, b)| a != b).count();
    let rate = mismatches as f64 / sent.len() as f64;
    (rate, rate > threshold)
}

/// Strips the test bits and block-decodes the remainder, correcting up to
/// the code's bound per block. Fails when the block-coding description
/// was withheld after an abort.
pub fn decode_message(
    received: &[Bit],
    metadata: &MessageMetadata,
) -> Result<MessageOutcome, MessageError> {
    if metadata.code_withheld {
        return Err(MessageError::MetadataWithheld);
    }
    let plan = &metadata.plan;
    if received.len() != plan.transmitted_len() {
        return Err(MessageError::LengthMismatch {
            got: received.len(),
            want: plan.transmitted_len(),
        });
    }
    let received_tests: Vec<Bit> = metadata
        .test_positions
        .iter()
        .map(|&pos| received[pos])
        .collect();
    let (rate, _) = estimate_and_decide(&metadata.test_values, &received_tests, plan.threshold);

    let mut code_bits = Vec::with_capacity(plan.n * plan.code.codeword_len());
    let mut test_iter = metadata.test_positions.iter().peekable();
    for (index, &bit) in received.iter().enumerate() {
        match test_iter.peek() {
            Some(&&pos) if pos == index => {
                test_iter.next();
            }
            _ => code_bits.push(bit),
        }
    }
    let mut decoded = Vec::with_capacity(plan.n);
    let mut corrupted = false;
    for block in code_bits.chunks(plan.code.codeword_len()) {
        let (bit, excess) = plan.code.decode_block(block);
        corrupted |= excess;
        decoded.push(bit);
    }
    Ok(MessageOutcome {
        status: if corrupted {
            MessageStatus::Corrupted
        } else {
            MessageStatus::Delivered
        },
        decoded: if corrupted { None } else { Some(decoded) },
        estimated_error_rate: rate,
    })
}

/// Full message session: one protocol trial per transmitted bit (erased
/// bits are retransmitted up to the cap), error estimation over the test
/// bits, then conditional disclosure and decode.
pub fn transmit_message<R: Rng + ?Sized>(
    msg: &[Bit],
    plan: &MessagePlan,
    geometry: &Geometry,
    noise: &NoiseModel,
    attack: &AttackStrategy,
    rng: &mut R,
) -> Result<MessageOutcome, MessageError> {
    transmit_message_in_layout(msg, plan, geometry, Layout::TwoChannel, noise, attack, rng)
}

pub fn transmit_message_in_layout<R: Rng + ?Sized>(
    msg: &[Bit],
    plan: &MessagePlan,
    geometry: &Geometry,
    layout: Layout,
    noise: &NoiseModel,
    attack: &AttackStrategy,
    rng: &mut R,
) -> Result<MessageOutcome, MessageError> {
    let (transmitted, mut metadata) = encode_message(msg, plan, rng)?;
    let mut received = Vec::with_capacity(transmitted.len());
    let mut trial: u64 = 0;
    for &bit in &transmitted {
        let mut delivered = None;
        for _ in 0..=plan.retry_cap {
            let (record, _) =
                run_trial_in_layout(trial, geometry, layout, noise, attack, bit, rng)?;
            trial += 1;
            if record.accepted {
                delivered = record.bit_received;
                break;
            }
        }
        match delivered {
            Some(bit) => received.push(bit),
            None => return Err(MessageError::RetryExhausted),
        }
    }
    let received_tests: Vec<Bit> = metadata
        .test_positions
        .iter()
        .map(|&pos| received[pos])
        .collect();
    let (rate, abort) = estimate_and_decide(&metadata.test_values, &received_tests, plan.threshold);
    if abort {
        metadata.withhold_code();
        return Ok(MessageOutcome {
            status: MessageStatus::Aborted,
            decoded: None,
            estimated_error_rate: rate,
        });
    }
    decode_message(&received, &metadata)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::{intercept_resend, passive, ChannelSide};
    use crate::trial_stream;
    use proptest::prelude::*;

    fn geometry() -> Geometry {
        Geometry::new(3, 5, (1, 4)).unwrap()
    }

    fn bits(pattern: &[u8]) -> Vec<Bit> {
        pattern.iter().map(|&b| Bit::from_bool(b == 1)).collect()
    }

    fn plan(n: usize, k: usize) -> MessagePlan {
        MessagePlan::new(n, k, CodeSpec::Repetition { r: 3 }, 99, 0.0)
    }

    #[test]
    fn transmitted_length_adds_up() {
        let plan = plan(8, 4);
        assert_eq!(plan.transmitted_len(), 28);
        let msg = bits(&[1, 0, 1, 1, 0, 0, 1, 0]);
        let mut rng = trial_stream(1, 0);
        let (transmitted, metadata) = encode_message(&msg, &plan, &mut rng).unwrap();
        assert_eq!(transmitted.len(), 28);
        assert_eq!(metadata.test_positions.len(), 4);
    }

    #[test]
    fn zero_test_bits_is_a_bad_plan() {
        let plan = plan(8, 0);
        let mut rng = trial_stream(1, 0);
        assert!(matches!(
            encode_message(&bits(&[0; 8]), &plan, &mut rng),
            Err(MessageError::BadPlan(_))
        ));
    }

    #[test]
    fn even_repetition_is_a_bad_plan() {
        let plan = MessagePlan::new(4, 2, CodeSpec::Repetition { r: 2 }, 7, 0.0);
        let mut rng = trial_stream(1, 0);
        assert!(matches!(
            encode_message(&bits(&[0; 4]), &plan, &mut rng),
            Err(MessageError::BadPlan(_))
        ));
    }

    #[test]
    fn noiseless_round_trip_is_identity() {
        let plan = plan(8, 4);
        let msg = bits(&[1, 0, 1, 1, 0, 0, 1, 0]);
        let mut rng = trial_stream(2, 0);
        let (transmitted, metadata) = encode_message(&msg, &plan, &mut rng).unwrap();
        let outcome = decode_message(&transmitted, &metadata).unwrap();
        assert_eq!(outcome.status, MessageStatus::Delivered);
        assert_eq!(outcome.decoded, Some(msg));
        assert_eq!(outcome.estimated_error_rate, 0.0);
    }

    #[test]
    fn single_flip_is_corrected_two_flips_decode_wrong() {
        // majority-vote oracle on a repetition-3 block
        let plan = plan(4, 2);
        let msg = bits(&[1, 0, 0, 1]);
        let mut rng = trial_stream(3, 0);
        let (transmitted, metadata) = encode_message(&msg, &plan, &mut rng).unwrap();
        // locate the first code position (not a test position)
        let code_positions: Vec<usize> = (0..transmitted.len())
            .filter(|i| !metadata.test_positions.contains(i))
            .collect();

        let mut one_flip = transmitted.clone();
        let p = code_positions[0];
        one_flip[p] = Bit::from_bool(one_flip[p] == Bit::Zero);
        let outcome = decode_message(&one_flip, &metadata).unwrap();
        assert_eq!(outcome.decoded, Some(msg.clone()));

        let mut two_flips = transmitted.clone();
        for &p in &code_positions[0..2] {
            two_flips[p] = Bit::from_bool(two_flips[p] == Bit::Zero);
        }
        let outcome = decode_message(&two_flips, &metadata).unwrap();
        // the first block decodes to the wrong value by majority
        let decoded = outcome.decoded.unwrap();
        assert_ne!(decoded[0], msg[0]);
        assert_eq!(decoded[1..], msg[1..]);
    }

    #[test]
    fn estimation_boundary_is_strict() {
        let sent = bits(&[0, 0, 0, 0]);
        assert_eq!(estimate_and_decide(&sent, &sent, 0.0), (0.0, false));
        let received = bits(&[1, 0, 0, 0]);
        let (rate, abort) = estimate_and_decide(&sent, &received, 0.25);
        assert_eq!(rate, 0.25);
        assert!(!abort, "rate exactly at threshold must not abort");
        let (_, abort) = estimate_and_decide(&sent, &received, 0.2);
        assert!(abort);
    }

    #[test]
    fn abort_withholds_the_code() {
        let plan = plan(4, 2);
        let msg = bits(&[1, 0, 0, 1]);
        let mut rng = trial_stream(5, 0);
        let (transmitted, mut metadata) = encode_message(&msg, &plan, &mut rng).unwrap();
        metadata.withhold_code();
        assert!(matches!(
            decode_message(&transmitted, &metadata),
            Err(MessageError::MetadataWithheld)
        ));
    }

    #[test]
    fn honest_session_delivers_the_exact_message() {
        let geom = geometry();
        let plan = plan(8, 4);
        let msg = bits(&[0, 1, 1, 0, 1, 0, 0, 1]);
        let mut rng = trial_stream(7, 0);
        let outcome = transmit_message(
            &msg,
            &plan,
            &geom,
            &NoiseModel::default(),
            &passive(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(outcome.status, MessageStatus::Delivered);
        assert_eq!(outcome.decoded, Some(msg));
        assert_eq!(outcome.estimated_error_rate, 0.0);
    }

    #[test]
    fn lossy_channel_retransmits_erasures() {
        let geom = geometry();
        let plan = plan(6, 3);
        let msg = bits(&[1, 1, 0, 0, 1, 0]);
        let noise = NoiseModel {
            loss_prob: 0.4,
            ..NoiseModel::default()
        };
        let mut rng = trial_stream(9, 0);
        let outcome =
            transmit_message(&msg, &plan, &geom, &noise, &passive(), &mut rng).unwrap();
        assert_eq!(outcome.status, MessageStatus::Delivered);
        assert_eq!(outcome.decoded, Some(msg));
    }

    #[test]
    fn intercepting_sessions_abort_at_the_binomial_rate() {
        // per test bit the intercept flips a fair coin; at threshold 0.25
        // and k = 8 the no-abort probability is the binomial tail
        // P(at most 2 mismatches) = (1 + 8 + 28) / 256
        let geom = geometry();
        let plan = MessagePlan::new(4, 8, CodeSpec::Repetition { r: 3 }, 21, 0.25);
        let msg = bits(&[0, 1, 1, 0]);
        let attack = intercept_resend(ChannelSide::Lower);
        let sessions = 400;
        let mut aborts = 0;
        for s in 0..sessions {
            let mut rng = trial_stream(1000 + s as u64, 0);
            let outcome = transmit_message(
                &msg,
                &plan,
                &geom,
                &NoiseModel::default(),
                &attack,
                &mut rng,
            )
            .unwrap();
            if outcome.status == MessageStatus::Aborted {
                assert!(outcome.decoded.is_none());
                aborts += 1;
            }
        }
        let expect = 1.0 - 37.0 / 256.0;
        let rate = aborts as f64 / sessions as f64;
        let sigma = (expect * (1.0 - expect) / sessions as f64).sqrt();
        assert!(
            (rate - expect).abs() < 3.0 * sigma + 0.01,
            "abort rate {rate}, expected {expect}"
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn prop_decode_encode_is_identity(
            msg_bits in prop::collection::vec(prop::bool::ANY, 1..=64),
            k in 1usize..6,
            r in prop::sample::select(vec![1u16, 3, 5]),
            seed in 0u64..1000,
        ) {
            let msg: Vec<Bit> = msg_bits.iter().map(|&b| Bit::from_bool(b)).collect();
            let plan = MessagePlan::new(msg.len(), k, CodeSpec::Repetition { r }, seed, 0.0);
            let mut rng = trial_stream(seed, 1);
            let (transmitted, metadata) = encode_message(&msg, &plan, &mut rng).unwrap();
            let outcome = decode_message(&transmitted, &metadata).unwrap();
            prop_assert_eq!(outcome.decoded, Some(msg));
        }
    }
}
