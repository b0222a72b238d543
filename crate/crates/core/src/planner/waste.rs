//! The analytical waste/performance model.
//!
//! For GPU type `i` with `N_i` devices, capability `C_i` (mini-batches per
//! second for one CU) and `A_i` CUs per device:
//!
//! ```text
//! CU_capacity = Σ N_i·A_i                     (must be ≥ maxP)
//! f_overload  = max_{N_i>0} A_i / C_i
//! waste       = Σ_{N_i>0} N_i·(C_i − A_i/f) + (CU_capacity − maxP)/f
//! waste_norm  = 100 · waste / Σ N_i·C_i
//! perf        = Σ N_i·C_i − waste
//! ```
//!
//! A type whose `A_i/C_i` equals `f` contributes exactly zero, and rounding
//! never makes a per-type gap negative.
//!
//! The per-type gap is weighted by `N_i`, so `perf` equals `maxP / f`: every
//! device waits for the most overloaded one under synchronous SGD.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WasteEval {
    pub cu_capacity: usize,
    pub f_overload: f64,
    pub waste: f64,
    /// Percent of the aggregate capability of the used devices.
    pub waste_norm: f64,
    pub perf: f64,
}

pub fn waste_model(nums: &[usize], cus: &[usize], caps: &[f64], max_p: usize) -> Result<WasteEval> {
    if nums.len() != cus.len() || nums.len() != caps.len() {
        return Err(Error::Input("nums, CU and capability vectors differ in length".into()));
    }
    let cu_capacity: usize = nums.iter().zip(cus).map(|(n, a)| n * a).sum();
    if !nums.iter().zip(cus).any(|(&n, &a)| n > 0 && a > 0) {
        return Err(Error::Config("no device type has both GPUs and CUs assigned".into()));
    }
    if cu_capacity < max_p {
        return Err(Error::Constraint(format!("CU capacity {cu_capacity} < maxP {max_p}")));
    }
    let mut f = 0.0f64;
    for i in 0..nums.len() {
        if nums[i] > 0 {
            if caps[i] <= 0.0 {
                return Err(Error::Config(format!("type {i} is used but has capability {}", caps[i])));
            }
            f = f.max(cus[i] as f64 / caps[i]);
        }
    }
    let mut waste = 0.0;
    let mut total = 0.0;
    for i in 0..nums.len() {
        if nums[i] > 0 {
            let n = nums[i] as f64;
            // The most loaded types are exactly balanced by definition of f.
            if cus[i] as f64 / caps[i] != f {
                waste += n * (caps[i] - cus[i] as f64 / f).max(0.0);
            }
            total += n * caps[i];
        }
    }
    waste += (cu_capacity - max_p) as f64 / f;
    Ok(WasteEval {
        cu_capacity,
        f_overload: f,
        waste,
        waste_norm: waste / total * 100.0,
        perf: total - waste,
    })
}

/// Capability and CU count of `m` executors sharing one device:
/// `MC = m·C·I(m)`, `MA = m·A`. `interference[k]` holds `I(k + 1)`.
pub fn multi_executor_adjust(m: usize, cap: f64, interference: &[f64], cus: usize) -> Result<(f64, usize)> {
    if m == 0 {
        return Err(Error::Input("executor count must be >= 1".into()));
    }
    let i = *interference.get(m - 1).ok_or_else(|| {
        Error::Constraint(format!(
            "{m} executors exceed the {} the device can hold",
            interference.len()
        ))
    })?;
    if !(i > 0.0 && i <= 1.0) {
        return Err(Error::Input(format!("interference factor {i} outside (0, 1]")));
    }
    Ok((m as f64 * cap * i, m * cus))
}
