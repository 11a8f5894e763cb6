use std::collections::HashSet;

use alnlg_core::bench::{run_benchmark, BenchmarkSpec, LearningCurve, SyntheticTask, COVERAGE_METRIC};
use alnlg_core::orchestrator::run;
use alnlg_core::strategy::{select_facility_location, StrategyContext, UnlabeledView};

fn small(strategies: &[&str], seeds: &[u64]) -> BenchmarkSpec {
    let mut spec = BenchmarkSpec::synthetic(strategies, seeds);
    spec.task = alnlg_core::bench::BenchTask::Synthetic { clusters: 6, per_cluster: 4 };
    spec.base.al.num_iterations = 3;
    spec
}

#[test]
fn paired_splits_per_seed() {
    let spec = small(&["random", "coreset"], &[1, 2]);
    let result = run_benchmark(&spec).unwrap();
    assert!(result.complete);
    assert_eq!(result.curves.values().map(Vec::len).sum::<usize>(), 4);
    for seed in [1, 2] {
        let grids: HashSet<Vec<usize>> =
            result.curves.values().flatten().filter(|c| c.seed == seed).map(LearningCurve::grid).collect();
        assert_eq!(grids.len(), 1);
    }
}

#[test]
fn single_run_matches_direct_orchestrator_run() {
    let spec = small(&["facility_location"], &[9]);
    let result = run_benchmark(&spec).unwrap();
    let task = SyntheticTask::new(6, 4, 9).unwrap();
    let mut config = spec.base.clone();
    config.al.strategy = "facility_location".into();
    config.seed = 9;
    let deps = task.deps();
    let direct = run(config, task.instances, Vec::new(), deps, None).unwrap();
    let curve = LearningCurve::from_records("facility_location", 9, &direct.records).unwrap();
    assert_eq!(result.curves["facility_location"], vec![curve]);
}

#[test]
fn seed_order_does_not_matter() {
    let a = run_benchmark(&small(&["random"], &[1, 2])).unwrap();
    let b = run_benchmark(&small(&["random"], &[2, 1])).unwrap();
    assert_eq!(a.curves, b.curves);
}

#[test]
fn facility_location_picks_distinct_clusters() {
    for seed in 0..5 {
        let task = SyntheticTask::new(20, 10, seed).unwrap();
        let gw = task.gateway();
        let texts: Vec<String> = task.instances.iter().map(|i| i.input.clone()).collect();
        let vectors = gw.embed(&texts).unwrap();
        let mut ctx = StrategyContext::new(
            task.instances.iter().map(|i| UnlabeledView { id: i.id.clone(), input: i.input.clone() }).collect(),
            Vec::new(),
        );
        for (inst, v) in task.instances.iter().zip(vectors) {
            ctx.embeddings.insert(inst.id.clone(), v.values);
        }
        for k in [1, 5, 12, 20] {
            let picked = select_facility_location(&ctx, k, true).unwrap().ids;
            let clusters: HashSet<usize> = picked.iter().map(|id| task.membership[id]).collect();
            assert_eq!(clusters.len(), k, "seed {seed}, k {k}");
        }
    }
}

#[test]
fn report_files_written() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = small(&["random", "idds"], &[1, 2]);
    spec.out_dir = Some(dir.path().to_path_buf());
    let result = run_benchmark(&spec).unwrap();
    assert_eq!(result.files.len(), 3);
    assert!(dir.path().join("runs/idds_seed2/curve.jsonl").exists());
    assert!(result.mean_final("random", COVERAGE_METRIC).is_some());
}
