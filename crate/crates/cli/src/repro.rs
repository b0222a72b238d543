//! The S1–S5 reproducibility ladder.
//!
//! A matrix file holds shared run settings and one `[[scenario]]` per
//! comparison; each scenario lists the phases of its two runs:
//!
//! ```toml
//! seed = 7
//! max_p = 4
//!
//! [[scenario]]
//! level = "S4"
//! a = [{ steps = 200, executors = ["v100:1", "v100:1", "v100:1", "v100:1"] }]
//! b = [
//!     { steps = 100, executors = ["v100:1", "v100:1", "v100:1", "v100:1"] },
//!     { steps = 100, executors = ["v100:2", "v100:2"] },
//! ]
//! ```

use std::fmt::{self, Write};
use std::str::FromStr;
use std::time::{Duration, Instant};

use anyhow::{bail, Result};
use serde::Deserialize;

use crate::runlog::{bitdiff, state_bytes, Diff};
use crate::train::{self, DataSection, Phase, TrainSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Level {
    S1,
    S2,
    S3,
    S4,
    S5,
}

impl FromStr for Level {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_uppercase().as_str() {
            "S1" => Level::S1,
            "S2" => Level::S2,
            "S3" => Level::S3,
            "S4" => Level::S4,
            "S5" => Level::S5,
            _ => bail!("unknown level `{s}`"),
        })
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    D0,
    D1,
    D1D2,
}

impl FromStr for Mode {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "d0" => Mode::D0,
            "d1" => Mode::D1,
            "d1d2" => Mode::D1D2,
            _ => bail!("mode must be d0, d1 or d1d2, got `{s}`"),
        })
    }
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::D0 => "d0",
            Mode::D1 => "d1",
            Mode::D1D2 => "d1d2",
        }
    }

    pub fn guarantees(self, level: Level) -> bool {
        match self {
            Mode::D0 => matches!(level, Level::S1 | Level::S2),
            Mode::D1 => matches!(level, Level::S1 | Level::S2 | Level::S4),
            Mode::D1D2 => true,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub level: String,
    #[serde(default)]
    pub name: String,
    pub a: Vec<Phase>,
    pub b: Vec<Phase>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Matrix {
    pub seed: u64,
    pub max_p: usize,
    #[serde(default)]
    pub data: DataSection,
    pub scenario: Vec<Scenario>,
}

impl Matrix {
    pub fn from_toml(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text)?;
        for s in &m.scenario {
            s.level.parse::<Level>()?;
        }
        Ok(m)
    }

    fn spec(&self, mode: Mode, phases: &[Phase]) -> TrainSpec {
        TrainSpec {
            seed: self.seed,
            max_p: self.max_p,
            determinism: mode.as_str().to_string(),
            lr: None,
            momentum: None,
            dropout: None,
            bucket_cap: None,
            collective: None,
            autotune_nonce: 0,
            dump_every: 0,
            data: self.data.clone(),
            phase: phases.to_vec(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub level: Level,
    pub name: String,
    pub guaranteed: bool,
    pub diff: Diff,
    pub elapsed: Duration,
}

impl ScenarioResult {
    pub fn equal(&self) -> bool {
        self.diff == Diff::Identical
    }

    pub fn violated(&self) -> bool {
        self.guaranteed && !self.equal()
    }
}

pub fn run_scenario(matrix: &Matrix, scenario: &Scenario, mode: Mode) -> Result<ScenarioResult> {
    let level: Level = scenario.level.parse()?;
    let t0 = Instant::now();
    let a = train::run(&matrix.spec(mode, &scenario.a))?;
    let b = train::run(&matrix.spec(mode, &scenario.b))?;
    let mut diff = bitdiff(&a.log, &b.log)?;
    if diff == Diff::Identical && state_bytes(&a.state) != state_bytes(&b.state) {
        // Only reachable through a hash collision.
        diff = Diff::Diverged { step: a.state.global_step, field: crate::runlog::Field::Params };
    }
    Ok(ScenarioResult {
        level,
        name: scenario.name.clone(),
        guaranteed: mode.guarantees(level),
        diff,
        elapsed: t0.elapsed(),
    })
}

pub fn run_matrix(matrix: &Matrix, mode: Mode) -> Result<Vec<ScenarioResult>> {
    matrix.scenario.iter().map(|s| run_scenario(matrix, s, mode)).collect()
}

pub fn render(results: &[ScenarioResult]) -> String {
    let mut out = String::from("level  guaranteed  scenario                          result\n");
    for r in results {
        let res = match &r.diff {
            Diff::Identical => "BITWISE-EQUAL".to_string(),
            d => d.to_string(),
        };
        let _ = writeln!(
            out,
            "{:<6} {:<11} {:<33} {}",
            r.level.to_string(),
            if r.guaranteed { "yes" } else { "no" },
            r.name,
            res
        );
    }
    out
}
