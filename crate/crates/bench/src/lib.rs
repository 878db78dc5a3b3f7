//! Fixtures shared by the benchmarks under `benches/`.

use iorm::{build_plan, Level, NodeSpec, PlanSpec, ResourcePlan};

/// A CDB/PDB/workload tree with `fanout` children per node and varied shares.
pub fn plan(fanout: usize) -> ResourcePlan {
    let mut nodes = Vec::new();
    for c in 0..fanout {
        let cdb = format!("C{c}");
        nodes.push(NodeSpec::new(&cdb, Level::Cdb, None).shares(1 + c as u32));
        for p in 0..fanout {
            let pdb = format!("{cdb}P{p}");
            nodes.push(NodeSpec::new(&pdb, Level::Pdb, Some(&cdb)).shares(1 + p as u32 * 2));
            for w in 0..fanout {
                nodes.push(NodeSpec::new(format!("{pdb}W{w}"), Level::Workload, Some(&pdb)).shares(1 + w as u32 * 3));
            }
        }
    }
    nodes.push(NodeSpec::new("OTHER", Level::Cdb, None).default_leaf());
    build_plan(PlanSpec::new(1, nodes)).expect("fixture plan is valid")
}
