use std::collections::BTreeMap;

use iorm::scheduler::Lottery;
use iorm::{build_plan, Level, NodeId, NodeSpec, PlanSpec, ResourcePlan};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// (name, parent, shares, limit) in spec order.
type Row = (String, Option<String>, u32, Option<f64>);

fn tree() -> impl Strategy<Value = Vec<Row>> {
    let limit = prop::option::of(0.01f64..=1.0);
    let workload = (1u32..100, limit.clone());
    let pdb = (1u32..100, limit.clone(), prop::collection::vec(workload, 0..3));
    let cdb = (1u32..100, limit, prop::collection::vec(pdb, 0..3));
    prop::collection::vec(cdb, 1..4).prop_map(|cdbs| {
        let mut rows = Vec::new();
        for (c, (cs, cl, pdbs)) in cdbs.into_iter().enumerate() {
            let cname = format!("C{c}");
            rows.push((cname.clone(), None, cs, cl));
            for (p, (ps, pl, wls)) in pdbs.into_iter().enumerate() {
                let pname = format!("C{c}P{p}");
                rows.push((pname.clone(), Some(cname.clone()), ps, pl));
                for (w, (ws, wl)) in wls.into_iter().enumerate() {
                    rows.push((format!("C{c}P{p}W{w}"), Some(pname.clone()), ws, wl));
                }
            }
        }
        rows
    })
}

fn plan_of(rows: &[Row]) -> ResourcePlan {
    let mut nodes: Vec<NodeSpec> = rows
        .iter()
        .map(|(name, parent, shares, limit)| {
            let level = match name.matches(['P', 'W']).count() {
                0 => Level::Cdb,
                1 => Level::Pdb,
                _ => Level::Workload,
            };
            let mut n = NodeSpec::new(name, level, parent.as_deref()).shares(*shares);
            n.limit = *limit;
            n
        })
        .collect();
    nodes.push(NodeSpec::new("OTHER", Level::Cdb, None).shares(1).default_leaf());
    build_plan(PlanSpec::new(1, nodes)).expect("generated plan is valid")
}

/// Share fraction and limit product computed straight from the rows.
fn oracle(rows: &[Row], name: &str) -> (f64, f64) {
    let by_name: BTreeMap<&str, &Row> = rows.iter().map(|r| (r.0.as_str(), r)).collect();
    let sibling_total = |parent: &Option<String>| -> u32 {
        let s: u32 = rows.iter().filter(|r| &r.1 == parent).map(|r| r.2).sum();
        s + if parent.is_none() { 1 } else { 0 }
    };
    let (mut share, mut limit) = (1.0, 1.0);
    let mut cur = Some(name);
    while let Some(n) = cur {
        let r = by_name[n];
        share *= r.2 as f64 / sibling_total(&r.1) as f64;
        limit *= r.3.unwrap_or(1.0);
        cur = r.1.as_deref();
    }
    (share, limit)
}

proptest! {
    #[test]
    fn allocations_match_path_products(rows in tree()) {
        let plan = plan_of(&rows);
        for r in &rows {
            let id = plan.lookup(&r.0).unwrap();
            let a = plan.effective_allocation(id).unwrap();
            let (share, limit) = oracle(&rows, &r.0);
            prop_assert!((a.share_fraction - share).abs() < 1e-12);
            prop_assert!((a.effective_limit - limit).abs() < 1e-12);
            let (s, l) = plan.compose_bottom_up(id).unwrap();
            prop_assert!((s - a.share_fraction).abs() < 1e-12 && (l - a.effective_limit).abs() < 1e-12);
        }
    }

    #[test]
    fn leaf_fractions_sum_to_one_and_limits_shrink(rows in tree()) {
        let plan = plan_of(&rows);
        let total: f64 = plan.leaves().iter().map(|l| plan.effective_allocation(*l).unwrap().share_fraction).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        for n in plan.nodes().filter(|n| n.id != NodeId::ROOT) {
            let parent = n.parent.unwrap();
            if parent != NodeId::ROOT {
                let (c, p) = (plan.effective_allocation(n.id).unwrap(), plan.effective_allocation(parent).unwrap());
                prop_assert!(c.effective_limit <= p.effective_limit + 1e-15);
            }
        }
    }

    #[test]
    fn lottery_only_draws_eligible_leaves(rows in tree(), mask in any::<u64>(), seed in any::<u64>()) {
        let plan = plan_of(&rows);
        let mut lottery = Lottery::new(&plan);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chosen: Vec<NodeId> = plan.leaves().iter().enumerate().filter(|(i, _)| mask >> (i % 64) & 1 == 1).map(|(_, l)| *l).collect();
        for _ in 0..20 {
            match lottery.draw(&plan, &chosen, &mut rng) {
                Some(leaf) => prop_assert!(chosen.contains(&leaf)),
                None => prop_assert!(chosen.is_empty()),
            }
        }
    }
}
