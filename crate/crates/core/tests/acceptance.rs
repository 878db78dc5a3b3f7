//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use iorm::accounting::{format_report, AccountingConfig, Ledger};
use iorm::scheduler::Lottery;
use iorm::sim::report::{histogram, metrics_json, summary, utilization};
use iorm::sim::{builtin, path_matches, run_scenario, RunOptions, RunResult, ScenarioConfig, CATALOG};
use iorm::{build_plan, Level, NodeSpec, PlanSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use statrs::distribution::{ChiSquared, ContinuousCDF};

const SEED: u64 = 1;

/// Relative error allowed between measured and configured share ratios.
const SHARE_RATIO_TOL: f64 = 0.15;
/// Band around a binding cap that measured utilization must fall in.
const CAP_BAND: (f64, f64) = (0.7, 1.1);
/// Ceiling for an entity whose effective limit is 0.01%.
const GRANULARITY_CEILING: f64 = 0.0002;
const BYPASS_TAIL_MIN: f64 = 0.001;
const IORM_TAIL_MAX: f64 = 0.0001;
const IORM_UNDER_4MS_MIN: f64 = 0.95;
const MEAN_LATENCY_GAIN_MIN: f64 = 3.0;
/// IORM degradation must be at most this fraction of bypass degradation.
const DEGRADATION_FACTOR: f64 = 0.5;
const OLTP_QUEUE_MAX_US: f64 = 1.0;
const QUEUE_RATIO_MIN: f64 = 10.0;
/// Floor on the OLTP queue time when forming the ratio.
const QUEUE_FLOOR_US: f64 = 1.0;
const SWAP_INVERSION_S: usize = 10;
const SWAP_SYMMETRY_TOL: f64 = 0.02;
const DEADLINE_BOUND_US: u64 = 1_200_000;
const BACKLOG_AGE_US: f64 = 1_000_000.0;
const CACHE_GAIN_MIN: f64 = 10.0;
const EXCLUSION_TOL: f64 = 0.05;
const NO_EXCLUSION_MEAN_GAIN: f64 = 2.0;
const NO_EXCLUSION_STDDEV_GAIN: f64 = 5.0;
const LOTTERY_DRAWS: u64 = 100_000;
const CHI_SQUARE_ALPHA: f64 = 0.01;
const STRADDLE_THROTTLE_MAX: f64 = 0.01;
const CARRY_CLAMP: f64 = 0.03;
/// Shortened duration for the repeat runs.
const REPEAT_DURATION_S: f64 = 8.0;

type Verdict = Result<String, String>;
type Check = Box<dyn FnOnce(&mut Runs) -> Verdict>;

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

#[derive(Default)]
struct Runs(HashMap<String, Arc<RunResult>>);

impl Runs {
    fn get(&mut self, name: &str) -> Arc<RunResult> {
        if let Some(r) = self.0.get(name) {
            return r.clone();
        }
        let cfg = builtin(name).unwrap_or_else(|| panic!("unknown scenario {name}"));
        let r = Arc::new(run_scenario(&cfg, SEED, RunOptions::default()).unwrap_or_else(|e| panic!("{name}: {e}")));
        self.0.insert(name.to_owned(), r.clone());
        r
    }
}

fn in_band(u: f64, cap: f64) -> bool {
    u >= CAP_BAND.0 * cap && u <= CAP_BAND.1 * cap
}

fn share_ratios(runs: &mut Runs) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for r in [1u32, 2, 5, 10] {
        let res = runs.get(&format!("share-ratios:{r}"));
        let got = res.mb_per_sec("CDB-A") / res.mb_per_sec("CDB-B");
        ok &= (got / r as f64 - 1.0).abs() <= SHARE_RATIO_TOL;
        parts.push(format!("{r}:1->{got:.3}"));
    }
    verdict(ok, parts.join(" "))
}

fn limit_cases(runs: &mut Runs) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    let baseline_b = runs.get("limit-cases:1").utilization_of("CDB-B");
    let cases: [(u32, &[(&str, f64)]); 5] = [
        (2, &[("CDB-A", 0.10)]),
        (3, &[("CDB-A", 0.10), ("PDB5", 0.02)]),
        (4, &[("PDB5", 0.01)]),
        (5, &[("CDB-A", 0.01), ("PDB5", 0.001)]),
        (6, &[("CDB-A", 0.01), ("PDB5", 0.0001)]),
    ];
    for (case, caps) in cases {
        let r = runs.get(&format!("limit-cases:{case}"));
        for (node, cap) in caps {
            let u = r.utilization_of(node);
            ok &= in_band(u, *cap);
            parts.push(format!("c{case}.{node}={:.4}%", u * 100.0));
        }
        if caps.iter().any(|(n, _)| *n == "CDB-A") {
            let b = r.utilization_of("CDB-B");
            ok &= b > baseline_b;
            parts.push(format!("c{case}.CDB-B={:.2}%", b * 100.0));
        }
    }
    let rows: [(u32, [f64; 3]); 4] = [
        (1, [0.05, 0.0025, 0.10]),
        (2, [0.01, 0.0001, 0.10]),
        (3, [0.001, 0.00001, 0.10]),
        (4, [0.10, 0.10, 0.10]),
    ];
    for (row, caps) in rows {
        let r = runs.get(&format!("three-level-limits:{row}"));
        for (leaf, cap) in ["W1", "W5", "W6"].iter().zip(caps) {
            let u = r.utilization_of(leaf);
            ok &= in_band(u, cap);
            parts.push(format!("r{row}.{leaf}={:.5}%", u * 100.0));
        }
    }
    parts.insert(0, format!("c1.CDB-B={:.2}%", baseline_b * 100.0));
    verdict(ok, parts.join(" "))
}

fn min_granularity(runs: &mut Runs) -> Verdict {
    let r = runs.get("three-level-limits:2");
    let u = r.utilization_of("W5");
    verdict(
        u <= GRANULARITY_CEILING && r.measured_s() >= 60.0,
        format!("W5 {:.5}% over {:.0}s", u * 100.0, r.measured_s()),
    )
}

fn noisy_neighbor(runs: &mut Runs) -> Verdict {
    let iorm = runs.get("noisy-neighbor:mixed");
    let bypass = runs.get("noisy-neighbor:bypass");
    let (i, b) = (iorm.entity("OLTP").expect("oltp"), bypass.entity("OLTP").expect("oltp"));
    let b_tail = b.histogram.fraction_at_least(7);
    let i_tail = i.histogram.fraction_at_least(7);
    let i_fast = i.histogram.fraction_below(3);
    let gain = b.latency_us.mean() / i.latency_us.mean();
    verdict(
        b_tail >= BYPASS_TAIL_MIN && i_tail <= IORM_TAIL_MAX && i_fast >= IORM_UNDER_4MS_MIN && gain >= MEAN_LATENCY_GAIN_MIN,
        format!(
            "bypass >=32ms {:.3}%, iorm >=32ms {:.4}%, iorm <4ms {:.2}%, mean {:.0}us vs {:.0}us ({gain:.2}x)",
            b_tail * 100.0,
            i_tail * 100.0,
            i_fast * 100.0,
            b.latency_us.mean(),
            i.latency_us.mean()
        ),
    )
}

fn degradation(runs: &mut Runs) -> Verdict {
    let deg = |alone: &RunResult, mixed: &RunResult| 1.0 - mixed.ops_per_sec("OLTP") / alone.ops_per_sec("OLTP");
    let iorm = deg(&runs.get("noisy-neighbor:alone"), &runs.get("noisy-neighbor:mixed"));
    let bypass = deg(&runs.get("noisy-neighbor:bypass-alone"), &runs.get("noisy-neighbor:bypass"));
    verdict(
        bypass > 0.0 && iorm <= DEGRADATION_FACTOR * bypass,
        format!("iorm {:.2}% vs bypass {:.2}%", iorm * 100.0, bypass * 100.0),
    )
}

fn queue_depth(runs: &mut Runs) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    let mut last_scan = f64::INFINITY;
    for t in [8u32, 16, 32, 64] {
        let r = runs.get(&format!("queue-depth-sweep:{t}"));
        let oltp = r.entity("OLTP").expect("oltp").queue_us.mean();
        let scan = r.entity("SCAN").expect("scan").queue_us.mean();
        let ratio = scan / oltp.max(QUEUE_FLOOR_US);
        ok &= oltp < OLTP_QUEUE_MAX_US && scan < last_scan && ratio >= QUEUE_RATIO_MIN;
        last_scan = scan;
        parts.push(format!("t{t}: oltp {oltp:.3}us scan {scan:.0}us ratio>={ratio:.0}x"));
    }
    verdict(ok, parts.join(", "))
}

fn mean(xs: &[u64]) -> f64 {
    xs.iter().sum::<u64>() as f64 / xs.len().max(1) as f64
}

fn share_switch(runs: &mut Runs) -> Verdict {
    let r = runs.get("share-switch");
    let swap = 30usize;
    let end = r.duration_s as usize;
    let (a, b) = (r.bytes_per_second_of("CDB-A"), r.bytes_per_second_of("CDB-B"));
    let at = |v: &[u64], s: usize| v.get(s).copied().unwrap_or(0);
    let Some(flip) = (swap..end).find(|&s| (s..end).all(|t| at(a, t) < at(b, t))) else {
        return Err("ratio never inverted".to_owned());
    };
    let (a_pre, b_pre) = (mean(&a[1..swap]), mean(&b[1..swap]));
    let post = flip + 1..end;
    let (a_post, b_post) = (mean(&a[post.clone()]), mean(&b[post]));
    let sym = (b_post / a_pre - 1.0).abs().max((a_post / b_pre - 1.0).abs());
    verdict(
        flip - swap < SWAP_INVERSION_S && sym <= SWAP_SYMMETRY_TOL,
        format!(
            "inverted {}s after swap, pre {:.0}/{:.0} MB/s, post {:.0}/{:.0} MB/s, asymmetry {:.2}%",
            flip - swap,
            a_pre / 1e6,
            b_pre / 1e6,
            a_post / 1e6,
            b_post / 1e6,
            sym * 100.0
        ),
    )
}

fn deadline(runs: &mut Runs) -> Verdict {
    let adv = runs.get("deadline:adversarial");
    let healthy = runs.get("deadline:healthy");
    verdict(
        adv.max_unlimited_wait_us <= DEADLINE_BOUND_US && adv.promotions > 0 && healthy.promotions == 0,
        format!(
            "max wait {:.3}s, promotions {} adversarial / {} healthy",
            adv.max_unlimited_wait_us as f64 / 1e6,
            adv.promotions,
            healthy.promotions
        ),
    )
}

fn limits_dominate(runs: &mut Runs) -> Verdict {
    let r = runs.get("deadline:limited");
    let f = r.entity("FLOOD").expect("flood");
    verdict(
        f.throttled_dispatches == 0 && f.queue_us.max > BACKLOG_AGE_US && f.completed > 0,
        format!(
            "throttled dispatches {}, oldest wait {:.2}s, completed {}, util {:.3}%",
            f.throttled_dispatches,
            f.queue_us.max / 1e6,
            f.completed,
            r.utilization_of("FLOOD") * 100.0
        ),
    )
}

fn cache_governance(runs: &mut Runs) -> Verdict {
    let oltp = |runs: &mut Runs, v: &str| runs.get(&format!("cache-governance:{v}")).entity("OLTP").expect("oltp").latency_us.clone();
    let sweep: Vec<_> = ["0", "50", "75", "100"].iter().map(|v| oltp(runs, v)).collect();
    let means: Vec<f64> = sweep.iter().map(|m| m.mean()).collect();
    let monotone = means.windows(2).all(|w| w[1] < w[0]);
    let gain = means[0] / means[3];
    let bg = oltp(runs, "bg");
    let noexcl = oltp(runs, "bg-noexcl");
    let full = &sweep[3];
    let bg_shift = (bg.mean() / full.mean() - 1.0).abs();
    let mean_gain = noexcl.mean() / full.mean();
    let sd_gain = noexcl.stddev() / full.stddev();
    verdict(
        monotone
            && gain >= CACHE_GAIN_MIN
            && bg_shift < EXCLUSION_TOL
            && mean_gain >= NO_EXCLUSION_MEAN_GAIN
            && sd_gain >= NO_EXCLUSION_STDDEV_GAIN,
        format!(
            "means {:.0}/{:.0}/{:.0}/{:.0}us ({gain:.1}x), +bg shift {:.2}%, no exclusion mean {mean_gain:.1}x stddev {sd_gain:.1}x",
            means[0],
            means[1],
            means[2],
            means[3],
            bg_shift * 100.0
        ),
    )
}

fn lottery_fairness() -> Verdict {
    // (leaf, parent, shares) plus the share of every interior node.
    let interior = [("CDB-A", None, 3u32), ("CDB-B", None, 1), ("PDB1", Some("CDB-A"), 2), ("PDB2", Some("CDB-A"), 1), ("PDB3", Some("CDB-B"), 1)];
    let leaves = [("W1", "PDB1", 1u32), ("W2", "PDB1", 3), ("W3", "PDB2", 1), ("W4", "PDB2", 1), ("W5", "PDB3", 5), ("W6", "PDB3", 2), ("W7", "PDB3", 1)];
    let other_shares = 1u32;
    let mut nodes: Vec<NodeSpec> = interior
        .iter()
        .map(|(n, p, s)| NodeSpec::new(*n, if p.is_some() { Level::Pdb } else { Level::Cdb }, *p).shares(*s))
        .collect();
    nodes.extend(leaves.iter().map(|(n, p, s)| NodeSpec::new(*n, Level::Workload, Some(p)).shares(*s)));
    nodes.push(NodeSpec::new("OTHER", Level::Cdb, None).shares(other_shares).default_leaf());
    let plan = build_plan(PlanSpec::new(1, nodes)).map_err(|e| e.to_string())?;

    let shares: BTreeMap<&str, u32> = interior.iter().map(|(n, _, s)| (*n, *s)).chain(leaves.iter().map(|(n, _, s)| (*n, *s))).collect();
    let parent: BTreeMap<&str, Option<&str>> =
        interior.iter().map(|(n, p, _)| (*n, *p)).chain(leaves.iter().map(|(n, p, _)| (*n, Some(*p)))).collect();
    let sibling_total = |p: Option<&str>| -> u32 {
        let s: u32 = parent.iter().filter(|(_, q)| **q == p).map(|(n, _)| shares[n]).sum();
        s + if p.is_none() { other_shares } else { 0 }
    };
    let mut expected: Vec<(&str, f64)> = leaves
        .iter()
        .map(|(leaf, _, _)| {
            let mut p = 1.0;
            let mut cur = Some(*leaf);
            while let Some(n) = cur {
                p *= shares[n] as f64 / sibling_total(parent[n]) as f64;
                cur = parent[n];
            }
            (*leaf, p)
        })
        .collect();
    expected.push(("OTHER", other_shares as f64 / sibling_total(None) as f64));

    let mut lottery = Lottery::new(&plan);
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for _ in 0..LOTTERY_DRAWS {
        let leaf = lottery.draw(&plan, plan.leaves(), &mut rng).ok_or("no leaf drawn")?;
        let path = plan.path(leaf);
        let name = expected.iter().map(|(n, _)| *n).find(|n| path_matches(&path, n)).ok_or(format!("unexpected leaf {path}"))?;
        *counts.entry(name).or_default() += 1;
    }
    let n = LOTTERY_DRAWS as f64;
    let mut chi2 = 0.0;
    let mut within_3sigma = true;
    for (leaf, p) in &expected {
        let observed = counts.get(*leaf).copied().unwrap_or(0) as f64;
        let e = n * p;
        chi2 += (observed - e).powi(2) / e;
        within_3sigma &= (observed - e).abs() <= 3.0 * (n * p * (1.0 - p)).sqrt();
    }
    let critical = ChiSquared::new((expected.len() - 1) as f64).map_err(|e| e.to_string())?.inverse_cdf(1.0 - CHI_SQUARE_ALPHA);
    verdict(
        chi2 < critical && within_3sigma,
        format!("chi2 {chi2:.2} < {critical:.2} over {} leaves, 3-sigma {within_3sigma}", expected.len()),
    )
}

fn accounting_straddle(runs: &mut Runs) -> Verdict {
    let r = runs.get("accounting-straddle");
    let stats = &r.limits["CDB-A"];
    let frame_carry = r
        .intervals
        .iter()
        .flat_map(|f| f.rows.iter())
        .map(|row| row.carry_forward.abs())
        .fold(0.0, f64::max);
    verdict(
        stats.throttled_fraction() < STRADDLE_THROTTLE_MAX
            && stats.max_abs_carry <= CARRY_CLAMP + 1e-12
            && frame_carry <= CARRY_CLAMP + 1e-12
            && r.intervals.len() >= 100,
        format!(
            "throttled {}/{} quanta, max carry {:.4}pp over {} intervals, util {:.3}%",
            stats.throttled_quanta,
            stats.evaluated_quanta,
            stats.max_abs_carry.max(frame_carry) * 100.0,
            r.intervals.len(),
            r.utilization_of("CDB-A") * 100.0
        ),
    )
}

fn shortened(mut cfg: ScenarioConfig) -> ScenarioConfig {
    cfg.warmup_s = cfg.warmup_s.min(1.0);
    cfg.duration_s = REPEAT_DURATION_S;
    for s in &mut cfg.plan_swaps {
        s.at_s = REPEAT_DURATION_S / 2.0;
    }
    cfg
}

fn report_digest(r: &RunResult) -> String {
    let mut h = Sha256::new();
    for part in [summary(r), histogram(r), utilization(r), metrics_json(r), r.trace.clone().unwrap_or_default()] {
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}

fn audit_trace(r: &RunResult) -> Result<(), String> {
    r.audit.check()?;
    let trace = r.trace.as_deref().ok_or("no trace")?;
    let (mut arrived, mut dispatched, mut completed) = (HashSet::new(), HashSet::new(), HashSet::new());
    for line in trace.lines() {
        let mut f = line.split(' ');
        let kind = f.nth(1).ok_or("short line")?;
        let id: u64 = f.next().and_then(|s| s.parse().ok()).ok_or("bad id")?;
        let fresh = match kind {
            "ARR" => arrived.insert(id),
            "DSP" | "DSP*" => dispatched.insert(id),
            "CMP" => arrived.contains(&id) && completed.insert(id),
            other => return Err(format!("unknown event {other}")),
        };
        if !fresh {
            return Err(format!("{kind} repeated or orphaned for request {id}"));
        }
    }
    let a = &r.audit;
    if arrived.len() as u64 != a.generated || completed.len() as u64 != a.completed || dispatched.len() as u64 != a.pieces_dispatched {
        return Err("trace disagrees with audit counters".to_owned());
    }
    Ok(())
}

fn determinism() -> Verdict {
    let mut checked = 0;
    for entry in CATALOG {
        for variant in entry.variants {
            let name = format!("{}:{variant}", entry.name);
            let cfg = shortened(builtin(&name).ok_or(format!("unknown {name}"))?);
            let opts = RunOptions { trace: true };
            let a = run_scenario(&cfg, SEED, opts).map_err(|e| format!("{name}: {e}"))?;
            let b = run_scenario(&cfg, SEED, opts).map_err(|e| format!("{name}: {e}"))?;
            if report_digest(&a) != report_digest(&b) {
                return Err(format!("{name}: reports differ between runs"));
            }
            audit_trace(&a).map_err(|e| format!("{name}: {e}"))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} scenarios repeated byte-identically, traces audited"))
}

fn effective_allocation() -> Verdict {
    let plan = build_plan(PlanSpec::new(
        1,
        vec![
            NodeSpec::new("CDB-Prod", Level::Cdb, None).shares(60).limit(0.5),
            NodeSpec::new("CDB-Other", Level::Cdb, None).shares(40).default_leaf(),
            NodeSpec::new("PDB-Sales", Level::Pdb, Some("CDB-Prod")).shares(25).limit(0.4),
            NodeSpec::new("PDB-HR", Level::Pdb, Some("CDB-Prod")).shares(75),
            NodeSpec::new("BATCH", Level::Workload, Some("PDB-Sales")).shares(20).limit(0.5),
            NodeSpec::new("OLTP", Level::Workload, Some("PDB-Sales")).shares(80),
        ],
    ))
    .map_err(|e| e.to_string())?;
    let batch = plan.lookup("BATCH").map_err(|e| e.to_string())?;
    let alloc = plan.effective_allocation(batch).map_err(|e| e.to_string())?;
    let ledger = Ledger::new(AccountingConfig::default(), 1, &plan);
    let text = format_report(&ledger.report(&plan));
    let row = text.lines().find(|l| l.starts_with("CDB-Prod/PDB-Sales/BATCH ")).unwrap_or_default();
    let budget = row.split_whitespace().nth(2).unwrap_or("-");
    verdict(
        alloc.share_fraction == 0.03 && budget == "10.000",
        format!("share_fraction {}, reported budget {budget}%", alloc.share_fraction),
    )
}

fn main() -> ExitCode {
    std::panic::set_hook(Box::new(|_| {}));
    let mut runs = Runs::default();
    let criteria: Vec<(&str, Check)> = vec![
        ("proportional shares", Box::new(share_ratios)),
        ("hierarchical limit enforcement", Box::new(limit_cases)),
        ("minimum limit granularity", Box::new(min_granularity)),
        ("noisy-neighbor tail elimination", Box::new(noisy_neighbor)),
        ("throughput degradation reduction", Box::new(degradation)),
        ("per-tenant queue-time separation", Box::new(queue_depth)),
        ("live share swap", Box::new(share_switch)),
        ("deadline bound", Box::new(deadline)),
        ("limits dominate deadlines", Box::new(limits_dominate)),
        ("cache governance", Box::new(cache_governance)),
        ("lottery statistical fairness", Box::new(|_| lottery_fairness())),
        ("accounting reconciliation", Box::new(accounting_straddle)),
        ("determinism and conservation", Box::new(|_| determinism())),
        ("effective-allocation arithmetic", Box::new(|_| effective_allocation())),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| check(&mut runs)))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".to_owned())));
        let secs = started.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {:>2} {name} [{secs:.1}s]: {detail}", i + 1);
    }
    println!("{} of 14 criteria passed", 14 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
