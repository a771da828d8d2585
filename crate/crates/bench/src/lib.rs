//! Shared scenario builders for the benchmarks.

use orthoqkd_core::adversary::suite::generate_unconstrained_demos;
use orthoqkd_core::adversary::{dummy_particle, intercept_resend, passive, AttackStrategy, ChannelSide};
use orthoqkd_core::timeline::Geometry;

pub fn bench_geometry() -> Geometry {
    Geometry::new(3, 5, (1, 32)).unwrap()
}

pub fn pinned_geometry() -> Geometry {
    Geometry::new(3, 5, (2, 2)).unwrap()
}

pub fn honest_attack() -> AttackStrategy {
    passive()
}

pub fn intercept_attack() -> AttackStrategy {
    intercept_resend(ChannelSide::Lower)
}

pub fn oracle_attack() -> AttackStrategy {
    dummy_particle(true).expect("oracle granted")
}

pub fn demo_attack(d: u16) -> AttackStrategy {
    generate_unconstrained_demos(5, 1, d, &pinned_geometry())
        .pop()
        .expect("one demo")
}
