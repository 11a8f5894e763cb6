//! Reference run configurations for the four benchmark datasets.
//!
//! Each preset carries the reference hyperparameters, query sizes (1% of the
//! train pool for TriviaQA and GSM8K, 10 texts for RACE and AESLC), and the
//! dataset's main metric. Running them for real needs the dataset files, an
//! inference server and a fine-tuning service; [`dry_run_config`] rewires a
//! preset to the mock backend, the oracle and the no-op trainer so the whole
//! loop can be exercised on a generated stand-in dataset.

use std::path::Path;

use crate::config::{AdapterKind, ConfigError, DataConfig, LabellerKind, RunConfig};
use crate::gateway::BackendKind;
use crate::orchestrator::{run, RunDeps, RunError, RunOutcome};
use crate::pool::Instance;

pub const PRESET_NAMES: [&str; 4] = ["triviaqa", "gsm8k", "race", "aeslc"];

/// Stand-in pool size for dry runs; 1% of it is 10 texts, matching the fixed-size presets.
pub const DRY_RUN_SIZE: usize = 1000;

fn source(name: &str) -> Option<&'static str> {
    Some(match name {
        "triviaqa" => include_str!("../configs/triviaqa.toml"),
        "gsm8k" => include_str!("../configs/gsm8k.toml"),
        "race" => include_str!("../configs/race.toml"),
        "aeslc" => include_str!("../configs/aeslc.toml"),
        _ => return None,
    })
}

pub fn preset(name: &str) -> Result<RunConfig, ConfigError> {
    let src = source(name).ok_or_else(|| {
        ConfigError::field("preset", format!("unknown preset `{name}` (known: {})", PRESET_NAMES.join(", ")))
    })?;
    RunConfig::from_toml_str(src)
}

/// The dataset section and main metric of a preset, used by the `data=<name>` override.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPreset {
    pub data: DataConfig,
    pub metrics: Vec<String>,
}

pub fn data_preset(name: &str) -> Option<DataPreset> {
    let c = preset(name).ok()?;
    Some(DataPreset { data: c.data, metrics: c.evaluation.metrics })
}

/// `config` with every external dependency replaced by an in-process stand-in.
pub fn dry_run_config(mut config: RunConfig) -> RunConfig {
    config.model.backend = BackendKind::Mock;
    config.model.base_url = None;
    config.model.api_key_env = None;
    config.labeller.kind = LabellerKind::Oracle;
    config.training.adapter = AdapterKind::Noop;
    config.data.path = None;
    config.data.test_path = None;
    config
}

/// Runs preset `name` end to end under [`dry_run_config`] on `n` stand-in instances.
pub fn dry_run(name: &str, n: usize, run_dir: Option<&Path>) -> Result<RunOutcome, RunError> {
    let config = dry_run_config(preset(name)?);
    let data = stand_in_dataset(name, n, config.seed);
    let deps = RunDeps::from_config(&config, run_dir)?;
    run(config, data, Vec::new(), deps, run_dir)
}

/// Synthetic instances shaped like the preset's dataset (input and reference
/// fields only), `n` of them, deterministic per seed.
pub fn stand_in_dataset(name: &str, n: usize, seed: u64) -> Vec<Instance> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    const WORDS: [&str; 16] = [
        "river", "capital", "planet", "author", "number", "battle", "element", "museum", "ocean", "king", "bridge",
        "language", "mountain", "painter", "city", "season",
    ];
    let width = n.to_string().len();
    (0..n)
        .map(|i| {
            let a = WORDS[rng.random_range(0..WORDS.len())];
            let b = WORDS[rng.random_range(0..WORDS.len())];
            let k: u32 = rng.random_range(2..100);
            let (input, reference) = match name {
                "gsm8k" => (format!("a {a} has {k} {b}s and gets {k} more; how many {b}s now?"), (2 * k).to_string()),
                "race" => (format!("passage about the {a} and the {b}. which option fits? A) {a} B) {b}"), "A".to_string()),
                "aeslc" => (format!("hi team, notes on the {a} {b} meeting number {k} are attached."), format!("{a} {b} notes")),
                _ => (format!("which {a} is linked to the {b} number {k}?"), format!("the {a} {k}")),
            };
            Instance::new(format!("{i:0width$}"), input).with_references([reference])
        })
        .collect()
}
