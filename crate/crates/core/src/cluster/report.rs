//! CSV renderings of simulation results.

use std::fmt::Write;

use super::SimMetrics;

pub const METRICS_HEADER: &str = "job_id,arrival_s,start_s,finish_s,jct_s,preemptions,reconfigurations";

/// One row per completed job and a closing `summary` row holding the first
/// arrival, the last finish, the mean JCT and preemption/reconfiguration
/// totals in the same columns.
pub fn metrics_csv(m: &SimMetrics) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for j in &m.jobs {
        let _ = writeln!(
            out,
            "{},{:.3},{:.3},{:.3},{:.3},{},{}",
            j.job_id, j.arrival_s, j.start_s, j.finish_s, j.jct_s, j.preemptions, j.reconfigurations
        );
    }
    let first = m.jobs.iter().map(|j| j.arrival_s).fold(f64::INFINITY, f64::min);
    let first = if first.is_finite() { first } else { 0.0 };
    let _ = writeln!(
        out,
        "summary,{:.3},,{:.3},{:.3},{},{}",
        first,
        first + m.makespan_s,
        m.mean_jct_s,
        m.preemptions,
        m.jobs.iter().map(|j| j.reconfigurations).sum::<u32>()
    );
    out
}

pub fn timeline_csv(m: &SimMetrics) -> String {
    let mut out = String::from("time_s,gpus_allocated\n");
    for (t, g) in &m.timeline {
        let _ = writeln!(out, "{t:.3},{g}");
    }
    out
}

/// `mode,mean_jct_s,makespan_s,mean_gpus_allocated,completed,rejected`
/// for a set of runs.
pub fn summary_csv(runs: &[SimMetrics]) -> String {
    let mut out = String::from("mode,mean_jct_s,makespan_s,mean_gpus_allocated,completed,rejected\n");
    for m in runs {
        let _ = writeln!(
            out,
            "{},{:.3},{:.3},{:.3},{},{}",
            m.mode,
            m.mean_jct_s,
            m.makespan_s,
            m.mean_allocated(),
            m.jobs.len(),
            m.rejected.len()
        );
    }
    out
}
