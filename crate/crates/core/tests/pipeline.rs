//! End-to-end offline pipeline through the harness commands.

use dualmem_core::backend::{ActorDouble, OracleBackend};
use dualmem_core::feasibility::load_bank;
use dualmem_core::harness::{
    cmd_build_memory, cmd_build_pool, cmd_collect, cmd_distill, cmd_eval, cmd_induce, cmd_metrics, report_path, Config,
};

#[test]
fn collect_induce_distill_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);

    let mut cfg = Config { seed: 1000, ..Config::default() };
    cfg.tasks.count = 20;
    cfg.backend.actor = ActorDouble::Noisy { p: 0.3, seed: 1 };
    let noisy = OracleBackend::new(cfg.backend.actor);
    let (episodes, successes) = cmd_collect(&cfg, &noisy, &p("train/trajectories.jsonl")).unwrap();
    assert_eq!(episodes, 20);
    assert!(successes > 0);

    let pool = cmd_build_pool(&p("train/trajectories.jsonl"), &p("train/pool.json")).unwrap();
    assert!(!pool.positives.is_empty() && !pool.negatives.is_empty());

    let report = cmd_induce(&cfg, &p("train/pool.json"), &noisy, &p("mem/rules.json")).unwrap();
    assert!(report.selected >= 1 && report.selected <= report.zero_fp);
    assert!(report_path(&p("mem/rules.json")).exists());
    assert_eq!(load_bank(&p("mem/rules.json")).unwrap().len(), report.selected);

    let (written, _) = cmd_distill(&cfg, &p("train/trajectories.jsonl"), &noisy, &p("mem/blueprints.jsonl")).unwrap();
    assert_eq!(written, successes);
    let memory = cmd_build_memory(&cfg, &p("mem/blueprints.jsonl"), &p("mem/progress.json")).unwrap();
    assert_eq!(memory.len(), written);

    let mut eval = cfg.clone();
    eval.seed = 0;
    eval.tasks.count = 10;
    eval.memory.progress = Some(p("mem/progress.json"));
    eval.memory.bank = Some(p("mem/rules.json"));
    let with = cmd_eval(&eval, &noisy, &p("eval/full")).unwrap();
    let mut ablated = eval.clone();
    ablated.ablate(false, true);
    let without = cmd_eval(&ablated, &noisy, &p("eval/no_rules")).unwrap();
    assert!(with.metrics.invalid_action_rate < without.metrics.invalid_action_rate);
    assert_eq!(cmd_metrics(&with.results_path).unwrap(), with.metrics);
}

#[test]
fn eval_reports_threshold_misses() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = Config::default();
    cfg.tasks.count = 3;
    cfg.backend.actor = ActorDouble::Noisy { p: 1.0, seed: 3 };
    cfg.eval.min_success_rate = 0.9;
    let out = cmd_eval(&cfg, &OracleBackend::new(cfg.backend.actor), dir.path()).unwrap();
    assert!(out.below_threshold);
}

#[test]
fn missing_memory_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = Config::default();
    cfg.tasks.count = 1;
    cfg.memory.bank = Some(dir.path().join("absent.json"));
    let err = cmd_eval(&cfg, &OracleBackend::default(), dir.path()).unwrap_err();
    assert!(err.is_config());
}
