//! Scenario runner: configured batches of protocol trials, attack-suite
//! comparisons, probe tables and direct message sessions, reported as
//! deterministic JSON.
//!
//! Exit codes: 0 on a clean run, 2 when the verification tests flag an
//! eavesdropper (or a message session aborts), 1 on errors.

mod config;
mod report;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use orthoqkd_core::adversary::suite::{generate_attack_suite, generate_unconstrained_demos};
use orthoqkd_core::adversary::{AttackError, AttackStrategy};
use orthoqkd_core::analysis::{
    compute_stats, evaluate_attack, evaluate_attack_empirical, probe_comparison_table,
    AttackEvaluation, ProbeComparison,
};
use orthoqkd_core::msglayer::{
    transmit_message_in_layout, CodeSpec, MessagePlan, MessageStatus,
};
use orthoqkd_core::protocol::{bit_comparison_test, run_ensemble, ProtocolError};
use orthoqkd_core::timeline::Bit;
use orthoqkd_core::trial_stream;

use config::{build_named_attack, ScenarioConfig};
use report::{records_to_json_lines, ProbeTable, RunReport};

/// Environment variable naming the default scenario file.
const CONFIG_ENV: &str = "ORTHOQKD_CONFIG";

#[derive(Parser)]
#[command(
    name = "orthoqkd",
    about = "Discrete-time simulator of an orthogonal-state QKD protocol with timing verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch of protocol trials and the verification tests.
    Run(CommonArgs),
    /// Evaluate an attack suite: disturbance, ancilla gap, leaked bits.
    Suite(CommonArgs),
    /// Tabulate the delayed-input probe over valid and demo attacks.
    Probe(CommonArgs),
    /// Transmit a block-coded message with interleaved test bits.
    Message(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario file (TOML); defaults to $ORTHOQKD_CONFIG.
    config: Option<PathBuf>,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the trial count.
    #[arg(long)]
    trials: Option<usize>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write per-trial records here as JSON lines.
    #[arg(long)]
    records: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    let (args, command): (&CommonArgs, fn(&ScenarioConfig, &CommonArgs) -> Result<(RunReport, u8)>) =
        match &cli.command {
            Command::Run(args) => (args, run_command),
            Command::Suite(args) => (args, suite_command),
            Command::Probe(args) => (args, probe_command),
            Command::Message(args) => (args, message_command),
        };
    let config = load_config(args)?;
    let (report, code) = command(&config, args)?;
    let json = report.to_json();
    match &args.out {
        Some(path) => fs::write(path, json).with_context(|| format!("writing {path:?}"))?,
        None => print!("{json}"),
    }
    Ok(ExitCode::from(code))
}

fn load_config(args: &CommonArgs) -> Result<ScenarioConfig> {
    let path = match &args.config {
        Some(path) => path.clone(),
        None => match std::env::var_os(CONFIG_ENV) {
            Some(path) => PathBuf::from(path),
            None => bail!("no scenario file given and {CONFIG_ENV} is unset"),
        },
    };
    let text = fs::read_to_string(&path).with_context(|| format!("reading {path:?}"))?;
    let mut config = ScenarioConfig::parse(&text)
        .with_context(|| format!("invalid scenario {path:?}"))?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(trials) = args.trials {
        config.trials = trials;
    }
    // re-validate after overrides
    let text = toml::to_string(&config).expect("config reserializes");
    ScenarioConfig::parse(&text).context("invalid after overrides")?;
    Ok(config)
}

fn run_command(config: &ScenarioConfig, args: &CommonArgs) -> Result<(RunReport, u8)> {
    let geometry = config.geometry()?;
    let layout = config.layout()?;
    let attack = config.build_attack()?;
    let bits = config.bit_choice()?;
    let (records, eves) = run_ensemble(
        &geometry,
        layout,
        &config.noise,
        &attack,
        config.trials,
        bits,
        config.seed,
    )?;
    if let Some(path) = &args.records {
        fs::write(path, records_to_json_lines(&records))
            .with_context(|| format!("writing {path:?}"))?;
    }
    let stats = compute_stats(&records, &eves, &geometry)?;
    let mut verification_rng = trial_stream(config.seed, u64::MAX);
    let verification = match bit_comparison_test(
        &records,
        &geometry,
        config.sample_fraction,
        config.qber_threshold,
        &mut verification_rng,
    ) {
        Ok(v) => Some(v),
        Err(ProtocolError::EmptyAcceptedSet) => None,
        Err(e) => return Err(e.into()),
    };
    let detected = verification
        .as_ref()
        .map(|v| v.eavesdropper_detected)
        .unwrap_or(false);
    let mut report = RunReport::new("run", config.clone());
    report.stats = Some(stats);
    report.verification = verification;
    Ok((report, if detected { 2 } else { 0 }))
}

fn suite_attacks(config: &ScenarioConfig) -> Result<Vec<AttackStrategy>> {
    let geometry = config.geometry()?;
    let layout = config.layout()?;
    let mut attacks = Vec::new();
    for name in &config.suite.include {
        attacks.push(build_named_attack(name, config)?);
    }
    attacks.extend(generate_attack_suite(
        config.suite.seed,
        config.suite.size,
        config.ancilla_dim,
        &geometry,
        layout,
    ));
    Ok(attacks)
}

fn suite_command(config: &ScenarioConfig, _args: &CommonArgs) -> Result<(RunReport, u8)> {
    let geometry = config.geometry()?;
    let layout = config.layout()?;
    let mut rows: Vec<AttackEvaluation> = Vec::new();
    for attack in suite_attacks(config)? {
        let row = if attack.is_deterministic_unitary() {
            evaluate_attack(&attack, &geometry, layout, config.suite.mi_trials, config.seed)?
        } else {
            evaluate_attack_empirical(
                &attack,
                &geometry,
                layout,
                config.suite.mi_trials.max(1),
                config.seed,
            )?
        };
        rows.push(row);
    }
    rows.sort_by(|a, b| {
        b.mi_bits
            .unwrap_or(0.0)
            .partial_cmp(&a.mi_bits.unwrap_or(0.0))
            .unwrap()
            .then_with(|| a.attack.cmp(&b.attack))
    });
    let mut report = RunReport::new("suite", config.clone());
    report.suite = Some(rows);
    Ok((report, 0))
}

fn probe_command(config: &ScenarioConfig, _args: &CommonArgs) -> Result<(RunReport, u8)> {
    let geometry = config.geometry()?;
    let layout = config.layout()?;
    let mut attacks = suite_attacks(config)?;
    attacks.extend(generate_unconstrained_demos(
        config.suite.seed,
        config.suite.unconstrained_demos,
        config.ancilla_dim,
        &geometry,
    ));
    let mut rows: Vec<ProbeComparison> = Vec::new();
    let mut skipped = 0usize;
    for attack in &attacks {
        match probe_comparison_table(std::slice::from_ref(attack), &geometry, layout) {
            Ok(mut row) => rows.append(&mut row),
            Err(AttackError::DisturbingAttack(_)) | Err(AttackError::NonlinearAttack(_)) => {
                skipped += 1;
            }
            Err(e) => return Err(e.into()),
        }
    }
    let mut report = RunReport::new("probe", config.clone());
    report.probe = Some(ProbeTable {
        rows,
        skipped_disturbing: skipped,
    });
    Ok((report, 0))
}

fn message_command(config: &ScenarioConfig, _args: &CommonArgs) -> Result<(RunReport, u8)> {
    let geometry = config.geometry()?;
    let layout = config.layout()?;
    let attack = config.build_attack()?;
    let section = &config.message;
    let mut plan = MessagePlan::new(
        section.n,
        section.k,
        CodeSpec::Repetition {
            r: section.repetition,
        },
        section.permutation_seed,
        section.threshold,
    );
    plan.retry_cap = section.retry_cap;
    let msg = message_bits(config)?;
    let mut rng = trial_stream(config.seed, 1);
    let outcome =
        transmit_message_in_layout(&msg, &plan, &geometry, layout, &config.noise, &attack, &mut rng)?;
    let aborted = outcome.status == MessageStatus::Aborted;
    let mut report = RunReport::new("message", config.clone());
    report.message = Some(outcome);
    Ok((report, if aborted { 2 } else { 0 }))
}

fn message_bits(config: &ScenarioConfig) -> Result<Vec<Bit>> {
    let n = config.message.n;
    match &config.message.bits_hex {
        Some(hex) => {
            let mut bits = Vec::with_capacity(hex.len() * 4);
            for ch in hex.chars() {
                let nibble = ch
                    .to_digit(16)
                    .with_context(|| format!("bad hex digit '{ch}' in message bits"))?;
                for shift in (0..4).rev() {
                    bits.push(Bit::from_bool((nibble >> shift) & 1 == 1));
                }
            }
            if bits.len() < n {
                bail!("bits_hex provides {} bits, message needs {n}", bits.len());
            }
            bits.truncate(n);
            Ok(bits)
        }
        None => {
            use rand::Rng;
            let mut rng = trial_stream(config.seed, 0);
            Ok((0..n).map(|_| Bit::from_bool(rng.gen_bool(0.5))).collect())
        }
    }
}
