//! Text and JSON reports.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use crate::accounting::format_report;
use crate::sim::engine::RunResult;
use crate::sim::metrics::BUCKET_LABELS;

pub const SUMMARY_FILE: &str = "summary.txt";
pub const HISTOGRAM_FILE: &str = "histogram.txt";
pub const UTILIZATION_FILE: &str = "utilization.txt";
pub const METRICS_FILE: &str = "metrics.json";
pub const TRACE_FILE: &str = "trace.log";

fn path_width<'a>(paths: impl Iterator<Item = &'a String>) -> usize {
    paths.map(String::len).max().unwrap_or(0).max(6)
}

/// One row per entity with throughput, latency and queue time.
pub fn summary(r: &RunResult) -> String {
    let secs = r.measured_s();
    let w = path_width(r.entities.keys());
    let mut out = format!(
        "# scenario {} seed {} scheduler {} measured {:.3}s\n",
        r.scenario, r.seed, r.scheduler, secs
    );
    let _ = writeln!(
        out,
        "{:<w$}  {:>10}  {:>10}  {:>10}  {:>12}  {:>12}  {:>12}  {:>8}  {:>8}",
        "entity", "completed", "ops/s", "MB/s", "mean_us", "stddev_us", "queue_us", "promoted", "thr_disp"
    );
    for (path, m) in &r.entities {
        let _ = writeln!(
            out,
            "{:<w$}  {:>10}  {:>10.1}  {:>10.2}  {:>12.1}  {:>12.1}  {:>12.3}  {:>8}  {:>8}",
            path,
            m.completed,
            m.ops_per_sec(secs),
            m.mb_per_sec(secs),
            m.latency_us.mean(),
            m.latency_us.stddev(),
            m.queue_us.mean(),
            m.promotions,
            m.throttled_dispatches
        );
    }
    out
}

/// Percent of each entity's requests per latency bucket.
pub fn histogram(r: &RunResult) -> String {
    let w = path_width(r.entities.keys());
    let mut out = format!("{:<w$}", "entity");
    for l in BUCKET_LABELS {
        let _ = write!(out, "  {l:>8}");
    }
    out.push('\n');
    for (path, m) in &r.entities {
        let total = m.histogram.total().max(1) as f64;
        let _ = write!(out, "{path:<w$}");
        for c in m.histogram.counts {
            let _ = write!(out, "  {:>7.3}%", 100.0 * c as f64 / total);
        }
        out.push('\n');
    }
    out
}

/// Measured utilization after warmup, then every closed frame.
pub fn utilization(r: &RunResult) -> String {
    let w = path_width(r.utilization.keys());
    let mut out = format!("{:<w$}  {:>10}\n", "node", "util%");
    for (path, u) in &r.utilization {
        let _ = writeln!(out, "{path:<w$}  {:>10.4}", u * 100.0);
    }
    for frame in &r.intervals {
        let _ = writeln!(out, "\n# frame ending {:.3}s", frame.end_s);
        out.push_str(&format_report(&frame.rows));
    }
    out
}

pub fn metrics_json(r: &RunResult) -> String {
    serde_json::to_string_pretty(r).expect("run result serializes")
}

/// Writes every report into `dir`, creating it if needed.
pub fn write_reports(r: &RunResult, dir: &Path) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(SUMMARY_FILE), summary(r))?;
    std::fs::write(dir.join(HISTOGRAM_FILE), histogram(r))?;
    std::fs::write(dir.join(UTILIZATION_FILE), utilization(r))?;
    std::fs::write(dir.join(METRICS_FILE), metrics_json(r))?;
    if let Some(t) = &r.trace {
        std::fs::write(dir.join(TRACE_FILE), t)?;
    }
    Ok(())
}

/// Side-by-side throughput and latency of two runs.
pub fn compare(a: &RunResult, b: &RunResult) -> String {
    let mut paths: Vec<&String> = a.entities.keys().chain(b.entities.keys()).collect();
    paths.sort();
    paths.dedup();
    let w = path_width(paths.iter().copied());
    let mut out = format!(
        "{:<w$}  {:>10}  {:>10}  {:>9}  {:>10}  {:>10}  {:>9}\n",
        "entity", "A ops/s", "B ops/s", "change%", "A mean_us", "B mean_us", "B/A lat"
    );
    for p in &paths {
        let ea = a.entities.get(*p);
        let eb = b.entities.get(*p);
        let oa = ea.map_or(0.0, |m| m.ops_per_sec(a.measured_s()));
        let ob = eb.map_or(0.0, |m| m.ops_per_sec(b.measured_s()));
        let la = ea.map_or(0.0, |m| m.latency_us.mean());
        let lb = eb.map_or(0.0, |m| m.latency_us.mean());
        let change = if oa > 0.0 { format!("{:+.1}", 100.0 * (ob - oa) / oa) } else { "-".to_owned() };
        let lat = if la > 0.0 { format!("{:.2}", lb / la) } else { "-".to_owned() };
        let _ = writeln!(out, "{p:<w$}  {oa:>10.1}  {ob:>10.1}  {change:>9}  {la:>10.1}  {lb:>10.1}  {lat:>9}");
    }
    out.push_str(&share_table("A", a));
    out.push_str(&share_table("B", b));
    out
}

/// Throughput of each entity relative to the slowest non-idle one.
fn share_table(label: &str, r: &RunResult) -> String {
    let secs = r.measured_s();
    let rates: Vec<(&String, f64)> = r.entities.iter().map(|(p, m)| (p, m.mb_per_sec(secs))).collect();
    let min = rates.iter().map(|(_, v)| *v).filter(|v| *v > 0.0).fold(f64::INFINITY, f64::min);
    let w = path_width(rates.iter().map(|(p, _)| *p));
    let mut out = format!("\n# {label}: throughput ratio\n{:<w$}  {:>10}  {:>8}\n", "entity", "MB/s", "ratio");
    for (p, v) in rates {
        let ratio = if min.is_finite() { v / min } else { 0.0 };
        let _ = writeln!(out, "{p:<w$}  {v:>10.2}  {ratio:>8.2}");
    }
    out
}
