//! Line-delimited training logs and their bitwise comparison.

use std::fmt;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use detscale::estrt::TrainingState;
use detscale::fnv1a64;

/// One record per mini-batch. Floats are carried as the hex of their
/// IEEE-754 bits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub losses: Vec<String>,
    /// FNV-1a 64 over the parameter bytes followed by the momentum bytes.
    pub hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<Vec<String>>,
}

pub fn hex_f64(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

pub fn parse_hex_f64(s: &str) -> Result<f64> {
    if s.len() != 16 {
        bail!("`{s}` is not a 16-digit hex float");
    }
    Ok(f64::from_bits(u64::from_str_radix(s, 16).with_context(|| format!("`{s}` is not hex"))?))
}

pub fn state_bytes(ts: &TrainingState) -> Vec<u8> {
    ts.model()
        .params()
        .iter()
        .chain(&ts.opt().velocity)
        .flat_map(|v| v.to_le_bytes())
        .collect()
}

pub fn state_hash(ts: &TrainingState) -> u64 {
    fnv1a64(&state_bytes(ts))
}

impl StepRecord {
    pub fn capture(ts: &TrainingState, losses: &[f64], dump: bool) -> Self {
        Self {
            step: ts.global_step,
            losses: losses.iter().map(|&l| hex_f64(l)).collect(),
            hash: format!("{:016x}", state_hash(ts)),
            params: dump.then(|| ts.model().params().iter().map(|&p| hex_f64(p)).collect()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunLog {
    pub records: Vec<StepRecord>,
}

impl RunLog {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("line {}", i + 1)))
            .collect::<Result<Vec<StepRecord>>>()?;
        for r in &records {
            for l in &r.losses {
                parse_hex_f64(l).with_context(|| format!("step {}", r.step))?;
            }
        }
        Ok(Self { records })
    }

    pub fn final_hash(&self) -> Option<&str> {
        self.records.last().map(|r| r.hash.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Field {
    Loss { est: usize },
    Hash,
    Params,
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Field::Loss { est } => write!(f, "est {est} field loss"),
            Field::Hash => write!(f, "field hash"),
            Field::Params => write!(f, "field params"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Diff {
    Identical,
    Diverged { step: u64, field: Field },
}

impl fmt::Display for Diff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diff::Identical => write!(f, "IDENTICAL"),
            Diff::Diverged { step, field } => write!(f, "DIVERGED at step {step}, {field}"),
        }
    }
}

/// First record where the logs disagree. Logs of different length or EST
/// count do not describe the same workload and are rejected.
pub fn bitdiff(a: &RunLog, b: &RunLog) -> Result<Diff> {
    if a.records.len() != b.records.len() {
        bail!("logs have {} and {} records", a.records.len(), b.records.len());
    }
    for (ra, rb) in a.records.iter().zip(&b.records) {
        if ra.step != rb.step {
            bail!("step numbers disagree: {} vs {}", ra.step, rb.step);
        }
        if ra.losses.len() != rb.losses.len() {
            bail!("step {}: {} vs {} ESTs", ra.step, ra.losses.len(), rb.losses.len());
        }
        if let Some(est) = ra.losses.iter().zip(&rb.losses).position(|(x, y)| x != y) {
            return Ok(Diff::Diverged { step: ra.step, field: Field::Loss { est } });
        }
        if ra.hash != rb.hash {
            return Ok(Diff::Diverged { step: ra.step, field: Field::Hash });
        }
        if let (Some(pa), Some(pb)) = (&ra.params, &rb.params) {
            if pa != pb {
                return Ok(Diff::Diverged { step: ra.step, field: Field::Params });
            }
        }
    }
    Ok(Diff::Identical)
}
