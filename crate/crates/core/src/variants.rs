//! Single-channel variant: both wavepackets share one channel as time
//! bins, with recombiner splitters at Alice's exit and Bob's entry. Half
//! the photons never enter the channel and half of the arrivals land at
//! invalid times, so a quarter are usable; those interfere perfectly.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::{AttackStrategy, EveRecord};
use crate::analysis::{wilson_interval, WilsonCi, Z_99};
use crate::protocol::{run_trial_in_layout, NoiseModel, ProtocolError, TransmissionRecord};
use crate::timeline::{Bit, Geometry, Layout};

/// Geometry of the recombined layout; the extra splitter and mirror
/// nodes at Alice's exit and Bob's entry are implied by the layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SingleChannelGeometry {
    pub base: Geometry,
}

impl SingleChannelGeometry {
    pub fn new(base: Geometry) -> Self {
        SingleChannelGeometry { base }
    }
}

/// Where an unusable photon was wasted (honest-run attribution).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSite {
    /// Never detected: wasted at Alice's recombiner.
    AliceExit,
    /// Detected at an invalid time: wasted at Bob's recombiner.
    BobEntry,
}

/// A single-channel trial record with its usability verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleChannelRecord {
    pub record: TransmissionRecord,
    pub usable: bool,
    pub loss_site: Option<LossSite>,
}

/// Runs one trial on the recombined layout. Usable means detected at
/// exactly the valid receive tick; unusable trials carry a loss-site
/// attribution (exact for honest noiseless runs).
pub fn single_channel_trial<R: Rng + ?Sized>(
    trial: u64,
    geom: &SingleChannelGeometry,
    noise: &NoiseModel,
    attack: &AttackStrategy,
    bit: Bit,
    rng: &mut R,
) -> Result<(SingleChannelRecord, EveRecord), ProtocolError> {
    let (record, eve) = run_trial_in_layout(
        trial,
        &geom.base,
        Layout::SingleChannel,
        noise,
        attack,
        bit,
        rng,
    )?;
    let usable = record.accepted;
    let loss_site = if usable {
        None
    } else if record.detection.is_some() {
        Some(LossSite::BobEntry)
    } else {
        Some(LossSite::AliceExit)
    };
    Ok((
        SingleChannelRecord {
            record,
            usable,
            loss_site,
        },
        eve,
    ))
}

/// Usable fraction with its Wilson interval (99%).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UsableFraction {
    pub fraction: f64,
    pub ci: WilsonCi,
}

pub fn usable_fraction(records: &[SingleChannelRecord]) -> UsableFraction {
    assert!(!records.is_empty(), "no records");
    let usable = records.iter().filter(|r| r.usable).count();
    UsableFraction {
        fraction: usable as f64 / records.len() as f64,
        ci: wilson_interval(usable, records.len(), Z_99),
    }
}
