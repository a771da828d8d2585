//! Scenario configuration: TOML sections for geometry, noise, attack,
//! suite and message parameters, with validation and the attack registry.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use orthoqkd_core::adversary::suite::generate_attack_suite;
use orthoqkd_core::adversary::{
    ancilla_unitary_attack, dummy_particle, intercept_resend, passive, AttackStrategy,
    ChannelSide, ScheduledAction, ScheduledOp,
};
use orthoqkd_core::protocol::BitChoice;
use orthoqkd_core::qcore::{Mode, UnitaryOp};
use orthoqkd_core::timeline::{Bit, Geometry, Layout, Tick};
use orthoqkd_core::NoiseModel;

use num_complex::Complex64;

/// Names accepted in `[attack] name`.
pub const REGISTERED_ATTACKS: &[&str] = &[
    "passive",
    "intercept_resend",
    "dummy_particle",
    "controlled_phase",
    "random_unitary",
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("validation error: {0}")]
    Validation(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Validation(msg.into())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub theta: u16,
    pub tau: u16,
    pub window: (Tick, Tick),
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    pub name: String,
    pub channel: Option<String>,
    pub knows_ts: bool,
    pub phi: Option<f64>,
    pub attack_seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteSection {
    /// Number of generated causality-valid attacks.
    pub size: usize,
    pub seed: u64,
    /// Trials per attack for the sampled mutual information.
    pub mi_trials: usize,
    /// Number of unconstrained demo attacks added to probe tables.
    pub unconstrained_demos: usize,
    /// Named attacks prepended to the generated ones.
    pub include: Vec<String>,
}

impl Default for SuiteSection {
    fn default() -> Self {
        SuiteSection {
            size: 50,
            seed: 7,
            mi_trials: 2000,
            unconstrained_demos: 8,
            include: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MessageSection {
    pub n: usize,
    pub k: usize,
    pub repetition: u16,
    pub threshold: f64,
    pub permutation_seed: u64,
    pub retry_cap: u32,
    /// Message bits as a hex string (big-endian nibbles, `n` bits used);
    /// random bits when absent.
    pub bits_hex: Option<String>,
}

impl Default for MessageSection {
    fn default() -> Self {
        MessageSection {
            n: 16,
            k: 20,
            repetition: 3,
            threshold: 0.0,
            permutation_seed: 1,
            retry_cap: 16,
            bits_hex: None,
        }
    }
}

/// The whole scenario file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_variant")]
    pub variant: String,
    #[serde(default = "default_sample_fraction")]
    pub sample_fraction: f64,
    #[serde(default)]
    pub qber_threshold: f64,
    #[serde(default = "default_ancilla_dim")]
    pub ancilla_dim: u16,
    #[serde(default = "default_bits")]
    pub bits: String,
    pub geometry: GeometrySection,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default = "default_attack")]
    pub attack: AttackSection,
    #[serde(default)]
    pub suite: SuiteSection,
    #[serde(default)]
    pub message: MessageSection,
}

fn default_seed() -> u64 {
    42
}
fn default_trials() -> usize {
    1000
}
fn default_variant() -> String {
    "two_channel".into()
}
fn default_sample_fraction() -> f64 {
    0.2
}
fn default_ancilla_dim() -> u16 {
    4
}
fn default_bits() -> String {
    "random".into()
}
fn default_attack() -> AttackSection {
    AttackSection {
        name: "passive".into(),
        ..AttackSection::default()
    }
}

impl ScenarioConfig {
    /// Parses and validates a scenario file.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: ScenarioConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        self.geometry()?;
        if self.trials == 0 {
            return Err(invalid("trials must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.sample_fraction) || self.sample_fraction == 0.0 {
            return Err(invalid("sample_fraction must lie in (0, 1]"));
        }
        if self.ancilla_dim == 0 {
            return Err(invalid("ancilla_dim must be at least 1"));
        }
        self.layout()?;
        self.bit_choice()?;
        if !REGISTERED_ATTACKS.contains(&self.attack.name.as_str()) {
            return Err(invalid(format!(
                "unknown attack '{}'; registered attacks: {}",
                self.attack.name,
                REGISTERED_ATTACKS.join(", ")
            )));
        }
        self.build_attack()?;
        Ok(())
    }

    pub fn geometry(&self) -> Result<Geometry, ConfigError> {
        Geometry::new(self.geometry.theta, self.geometry.tau, self.geometry.window)
            .map_err(|e| invalid(e.to_string()))
    }

    pub fn layout(&self) -> Result<Layout, ConfigError> {
        match self.variant.as_str() {
            "two_channel" => Ok(Layout::TwoChannel),
            "single_channel" => Ok(Layout::SingleChannel),
            other => Err(invalid(format!(
                "unknown variant '{other}'; use two_channel or single_channel"
            ))),
        }
    }

    pub fn bit_choice(&self) -> Result<BitChoice, ConfigError> {
        match self.bits.as_str() {
            "random" => Ok(BitChoice::Random),
            "zero" => Ok(BitChoice::Fixed(Bit::Zero)),
            "one" => Ok(BitChoice::Fixed(Bit::One)),
            "alternate" => Ok(BitChoice::Alternate),
            other => Err(invalid(format!(
                "unknown bits source '{other}'; use random, zero, one or alternate"
            ))),
        }
    }

    fn require_pinned_window(&self, attack: &str) -> Result<(), ConfigError> {
        let (w0, w1) = self.geometry.window;
        if w0 != w1 {
            return Err(invalid(format!(
                "attack '{attack}' is a fixed-tick schedule and needs an \
                 emission window of length one"
            )));
        }
        Ok(())
    }

    /// Builds the configured attack strategy.
    pub fn build_attack(&self) -> Result<AttackStrategy, ConfigError> {
        let geometry = self.geometry()?;
        let layout = self.layout()?;
        let d = self.ancilla_dim;
        let section = &self.attack;
        if section.knows_ts && section.name != "dummy_particle" {
            return Err(invalid(format!(
                "attack '{}' does not take the sending-time oracle",
                section.name
            )));
        }
        match section.name.as_str() {
            "passive" => Ok(passive()),
            "intercept_resend" => {
                let channel = match section.channel.as_deref() {
                    Some("upper") => ChannelSide::Upper,
                    Some("lower") | None => ChannelSide::Lower,
                    Some(other) => {
                        return Err(invalid(format!(
                            "unknown channel '{other}'; use upper or lower"
                        )))
                    }
                };
                if layout == Layout::SingleChannel && channel == ChannelSide::Lower {
                    return Ok(intercept_resend(ChannelSide::Upper));
                }
                Ok(intercept_resend(channel))
            }
            "dummy_particle" => {
                if layout == Layout::SingleChannel {
                    return Err(invalid(
                        "dummy_particle targets the two-channel layout",
                    ));
                }
                dummy_particle(section.knows_ts).map_err(|e| invalid(e.to_string()))
            }
            "controlled_phase" => {
                self.require_pinned_window("controlled_phase")?;
                if d < 2 {
                    return Err(invalid("controlled_phase needs ancilla_dim >= 2"));
                }
                let phi = section.phi.unwrap_or(std::f64::consts::FRAC_PI_2);
                controlled_phase_attack(phi, d, &geometry, layout).map_err(invalid)
            }
            "random_unitary" => {
                self.require_pinned_window("random_unitary")?;
                let seed = section.attack_seed.unwrap_or(self.seed);
                Ok(generate_attack_suite(seed, 1, d, &geometry, layout)
                    .pop()
                    .expect("suite of size one"))
            }
            other => Err(invalid(format!("unknown attack '{other}'"))),
        }
    }
}

/// Phase-kickback demo: rotate the ancilla into a superposition at the
/// emission tick, then couple a controlled phase to the delayed wavepacket
/// during its transit. Extracts phase information at the cost of a
/// computable disturbance.
fn controlled_phase_attack(
    phi: f64,
    d: u16,
    geometry: &Geometry,
    layout: Layout,
) -> Result<AttackStrategy, String> {
    let t0 = geometry.window().0;
    let delayed_entry = match layout {
        Layout::TwoChannel => Mode::lower(0),
        Layout::SingleChannel => Mode::upper(0),
    };
    // balanced rotation on the first two ancilla levels
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let dd = d as usize;
    let mut rotate = vec![Complex64::new(0.0, 0.0); dd * dd];
    rotate[0] = Complex64::new(h, 0.0);
    rotate[1] = Complex64::new(h, 0.0);
    rotate[dd] = Complex64::new(h, 0.0);
    rotate[dd + 1] = Complex64::new(-h, 0.0);
    for i in 2..dd {
        rotate[i * dd + i] = Complex64::new(1.0, 0.0);
    }
    // phase on (delayed mode, ancilla level 1) only
    let mut cp = vec![Complex64::new(0.0, 0.0); dd * dd];
    for i in 0..dd {
        cp[i * dd + i] = if i == 1 {
            Complex64::from_polar(1.0, phi)
        } else {
            Complex64::new(1.0, 0.0)
        };
    }
    let op = UnitaryOp::on_modes(&[delayed_entry], d, cp).map_err(|e| e.to_string())?;
    ancilla_unitary_attack(
        format!("controlled_phase_{phi:.3}"),
        vec![
            ScheduledOp {
                tick: t0,
                action: ScheduledAction::RotateAncilla(rotate),
            },
            ScheduledOp {
                tick: t0 + geometry.tau() as Tick,
                action: ScheduledAction::Coupled(op),
            },
        ],
        d,
    )
    .map_err(|e| e.to_string())
}

/// Named attacks available to suite `include` lists.
pub fn build_named_attack(
    name: &str,
    config: &ScenarioConfig,
) -> Result<AttackStrategy, ConfigError> {
    let mut alt = config.clone();
    alt.attack = AttackSection {
        name: name.into(),
        knows_ts: name == "dummy_particle",
        ..AttackSection::default()
    };
    alt.build_attack()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[geometry]
theta = 3
tau = 5
window = [1, 16]
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let config = ScenarioConfig::parse(MINIMAL).unwrap();
        assert_eq!(config.ancilla_dim, 4);
        assert_eq!(config.sample_fraction, 0.2);
        assert_eq!(config.attack.name, "passive");
        assert_eq!(config.trials, 1000);
    }

    #[test]
    fn tau_must_exceed_theta() {
        let text = r#"
[geometry]
theta = 5
tau = 5
window = [1, 16]
"#;
        let err = ScenarioConfig::parse(text).unwrap_err();
        assert!(err.to_string().contains("tau must exceed theta"), "{err}");
    }

    #[test]
    fn unknown_attack_lists_registered_names() {
        let text = r#"
[geometry]
theta = 3
tau = 5
window = [1, 16]

[attack]
name = "mitm"
"#;
        let err = ScenarioConfig::parse(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("unknown attack"), "{msg}");
        for name in REGISTERED_ATTACKS {
            assert!(msg.contains(name), "{msg} missing {name}");
        }
    }

    #[test]
    fn dummy_particle_needs_the_oracle_flag() {
        let text = r#"
[geometry]
theta = 3
tau = 5
window = [1, 16]

[attack]
name = "dummy_particle"
"#;
        let err = ScenarioConfig::parse(text).unwrap_err();
        assert!(err.to_string().contains("sending-time oracle"), "{err}");
    }

    #[test]
    fn schedule_attacks_need_a_pinned_window() {
        let text = r#"
ancilla_dim = 2

[geometry]
theta = 3
tau = 5
window = [1, 16]

[attack]
name = "controlled_phase"
phi = 0.7
"#;
        let err = ScenarioConfig::parse(text).unwrap_err();
        assert!(err.to_string().contains("window of length one"), "{err}");
        let pinned = text.replace("window = [1, 16]", "window = [2, 2]");
        assert!(ScenarioConfig::parse(&pinned).is_ok());
    }

    #[test]
    fn parse_errors_carry_position_info() {
        let err = ScenarioConfig::parse("geometry = ").unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)));
    }
}
