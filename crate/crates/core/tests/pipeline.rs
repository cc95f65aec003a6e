use tapd_core::a2c::{evaluate, Acting};
use tapd_core::columns::Role;
use tapd_core::consolidation::{EwcConfig, FisherConfig};
use tapd_core::env::{EnvConfig, TaskId, TaskKind, VectorEnv};
use tapd_core::metrics::{MetricEvent, MetricRecord, NullSink, PhaseKind};
use tapd_core::rng::rng_from;
use tapd_core::schedule::{check_template, expected_total_steps, Algorithm, Experiment, ExperimentConfig};

fn micro(alg: Algorithm) -> ExperimentConfig {
    ExperimentConfig {
        algorithm: alg,
        num_processes: 2,
        num_steps: 5,
        steps_active: 60,
        steps_agnostic: 20,
        steps_agnostic_compress: 20,
        steps_compress: 20,
        agnostic_samples: 2,
        visits: 2,
        tasks: vec![TaskKind::Chase, TaskKind::Raid],
        fisher: FisherConfig { steps: 2, batch: 5 },
        env: EnvConfig { max_episode_steps: 8, ..EnvConfig::default() },
        ewc: EwcConfig { start: 50, ..EwcConfig::default() },
        eval_window: 3,
        ..ExperimentConfig::toy()
    }
}

#[test]
fn every_algorithm_runs_its_template() {
    for alg in Algorithm::ALL {
        let cfg = micro(alg);
        let mut exp = Experiment::new(cfg.clone()).unwrap();
        let mut sink: Vec<MetricRecord> = Vec::new();
        exp.run(&mut sink).unwrap();
        assert!(exp.is_finished());
        check_template(&cfg, exp.records()).unwrap();
        assert_eq!(exp.global_step(), expected_total_steps(&cfg), "{alg}");
        assert!(sink.windows(2).all(|w| w[0].step <= w[1].step), "{alg}: steps go backwards");
        let episodes = sink.iter().filter(|r| matches!(r.event, MetricEvent::Episode { .. })).count();
        assert!(episodes > 0, "{alg}");
        let intrinsic = sink.iter().any(|r| matches!(r.event, MetricEvent::Intrinsic { .. }));
        assert_eq!(intrinsic, alg == Algorithm::Tapd);
    }
}

#[test]
fn laterals_follow_the_column_roles() {
    let mut tapd = Experiment::new(micro(Algorithm::Tapd)).unwrap();
    assert!(!tapd.assembly().lateral_enabled());
    tapd.run_next(&mut NullSink).unwrap();
    assert!(tapd.assembly().lateral_enabled());

    let mut ewc = Experiment::new(micro(Algorithm::OnlineEwcBaseline)).unwrap();
    ewc.run(&mut NullSink).unwrap();
    assert!(!ewc.assembly().lateral_enabled());
    assert!(ewc.ewc().tasks_compressed as usize == 4);
}

#[test]
fn penalty_starts_after_the_first_consolidation() {
    let cfg = micro(Algorithm::PncBaseline);
    let mut sink: Vec<MetricRecord> = Vec::new();
    let mut exp = Experiment::new(cfg.clone()).unwrap();
    exp.run(&mut sink).unwrap();
    let distills: Vec<(u64, bool)> = sink
        .iter()
        .filter(|r| r.phase == PhaseKind::Compress)
        .filter_map(|r| match r.event {
            MetricEvent::Distill { penalty_active, .. } => Some((r.step, penalty_active)),
            _ => None,
        })
        .collect();
    let first = exp.records().iter().find(|r| r.kind == PhaseKind::Compress).unwrap();
    for (step, active) in distills {
        if step <= first.end_step {
            assert!(!active, "penalty active during the first compress");
        }
    }
    assert!(exp.records().iter().filter(|r| r.kind == PhaseKind::Compress).skip(1).all(|r| r.summary["penalty_active"] == 1.0));
}

#[test]
fn identical_configs_give_identical_runs() {
    let run = || {
        let mut exp = Experiment::new(micro(Algorithm::Tapd)).unwrap();
        let mut sink: Vec<MetricRecord> = Vec::new();
        exp.run(&mut sink).unwrap();
        (sink, exp.assembly().kb().checksum(), exp.assembly().active().checksum())
    };
    assert_eq!(run(), run());
    let mut other = micro(Algorithm::Tapd);
    other.seed = 1;
    let mut exp = Experiment::new(other).unwrap();
    exp.run(&mut NullSink).unwrap();
    assert_ne!(exp.assembly().kb().checksum(), run().1);
}

#[test]
fn evaluation_is_seeded() {
    let cfg = micro(Algorithm::PncBaseline);
    let mut exp = Experiment::new(cfg.clone()).unwrap();
    exp.run(&mut NullSink).unwrap();
    let policy = Acting { asm: exp.assembly(), role: Role::KnowledgeBase };
    let id = TaskId::new(TaskKind::Chase, 3);
    let a = evaluate(&policy, id, cfg.env, 5, &mut rng_from(1, &[])).unwrap();
    let b = evaluate(&policy, id, cfg.env, 5, &mut rng_from(1, &[])).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 5);
}

#[test]
fn vector_env_workers_are_independent_but_seeded() {
    let cfg = EnvConfig::default();
    let mut a = VectorEnv::for_task(TaskKind::Swarm, 9, 3, cfg).unwrap();
    let mut b = VectorEnv::for_task(TaskKind::Swarm, 9, 3, cfg).unwrap();
    for t in 0..30 {
        let acts = [t % 4, (t + 1) % 4, (t + 2) % 4];
        assert_eq!(a.step(&acts).unwrap(), b.step(&acts).unwrap());
    }
    let l = a.obs_len();
    let obs = a.observations();
    assert_ne!(&obs[..l], &obs[l..2 * l]);
}
