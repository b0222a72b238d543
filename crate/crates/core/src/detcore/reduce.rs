//! Floating-point reduction kernels.
//!
//! A real accelerator picks its reduction shape from hardware parameters
//! (SM count, warp width), so the same sum can round differently on two
//! device kinds. `Tree(fanin)` stands in for that: `fanin` plays the role of
//! the device-specific parameter. `Sequential` is the device-agnostic kernel.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReduceVariant {
    /// Strict left-to-right accumulation.
    Sequential,
    /// Bottom-up tree with `fanin` children per node, children combined
    /// left to right.
    Tree(usize),
}

impl fmt::Display for ReduceVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReduceVariant::Sequential => write!(f, "seq"),
            ReduceVariant::Tree(k) => write!(f, "tree{k}"),
        }
    }
}

impl std::str::FromStr for ReduceVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "seq" || s == "sequential" {
            return Ok(ReduceVariant::Sequential);
        }
        let fanin = s
            .strip_prefix("tree")
            .and_then(|n| n.parse::<usize>().ok())
            .ok_or_else(|| Error::Config(format!("unknown reduce variant `{s}`")))?;
        if fanin < 2 {
            return Err(Error::Config(format!("tree fan-in must be >= 2, got {fanin}")));
        }
        Ok(ReduceVariant::Tree(fanin))
    }
}

/// Sum `values` with the given kernel shape. Pure; empty input sums to 0.
pub fn reduce_sum(values: &[f64], variant: ReduceVariant) -> f64 {
    match variant {
        ReduceVariant::Sequential => sequential_sum(values),
        ReduceVariant::Tree(fanin) => tree_sum(values, fanin.max(2)),
    }
}

fn sequential_sum(values: &[f64]) -> f64 {
    let mut acc = 0.0;
    for &v in values {
        acc += v;
    }
    acc
}

fn tree_sum(values: &[f64], fanin: usize) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut level: Vec<f64> = values.to_vec();
    while level.len() > 1 {
        level = level
            .chunks(fanin)
            .map(|group| {
                let mut acc = group[0];
                for &v in &group[1..] {
                    acc += v;
                }
                acc
            })
            .collect();
    }
    level[0]
}

/// Built-in device kinds and the tree fan-in their native kernels use.
pub const DEVICE_KINDS: &[(&str, usize)] = &[
    ("v100", 4),
    ("p100", 3),
    ("t4", 2),
    ("a100", 5),
    ("a10", 6),
];

/// Kernel selection for one executor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelProfile {
    pub device_kind: String,
    pub reduce: ReduceVariant,
}

impl KernelProfile {
    /// The device's native (hardware-dependent) kernel.
    pub fn native(device_kind: &str) -> Result<Self> {
        let fanin = DEVICE_KINDS
            .iter()
            .find(|(k, _)| *k == device_kind)
            .map(|(_, f)| *f)
            .ok_or_else(|| Error::Config(format!("unknown device kind `{device_kind}`")))?;
        Ok(Self {
            device_kind: device_kind.to_string(),
            reduce: ReduceVariant::Tree(fanin),
        })
    }

    /// The hardware-agnostic kernel, identical on every device kind.
    pub fn agnostic(device_kind: &str) -> Result<Self> {
        let mut kp = Self::native(device_kind)?;
        kp.reduce = ReduceVariant::Sequential;
        Ok(kp)
    }

    pub fn for_device(device_kind: &str, hardware_agnostic: bool) -> Result<Self> {
        if hardware_agnostic {
            Self::agnostic(device_kind)
        } else {
            Self::native(device_kind)
        }
    }
}
