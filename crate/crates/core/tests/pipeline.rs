use std::path::Path;

use dair_core::config::ExperimentConfig;
use dair_core::experiment::{run_eval, run_plot_data, run_train, EvalRequest};
use dair_core::metrics::Thresholds;
use dair_core::train::{seed_dir, train_seed, FINAL_CHECKPOINT, METRICS_FILE, NONFINITE_DUMP};
use dair_core::DairError;

fn tiny(task: &str, extra: &[&str]) -> ExperimentConfig {
    let mut o: Vec<String> = [
        "network.embed_dim=8",
        "sac.batch_size=16",
        "sac.lr=0.001",
        "curriculum.desk_scale=1.0",
        "curriculum.stage_budgets=[300]",
        "run.eval_episodes=2",
        "run.seeds=[1]",
        "run.checkpoint_every=2",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    o.extend(extra.iter().map(|s| s.to_string()));
    ExperimentConfig::from_toml_str(&format!("task = \"{task}\"\n"), &o).unwrap()
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn metrics_are_identical_across_reruns_and_worker_counts() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny("push-door", &[]);
    let a = d.path().join("a");
    let b = d.path().join("b");
    let c = d.path().join("c");
    train_seed(&cfg, 1, Some(&a), false).unwrap();
    train_seed(&cfg, 1, Some(&b), false).unwrap();
    let par = tiny("push-door", &["sac.rollout_workers=2"]);
    train_seed(&par, 1, Some(&c), false).unwrap();
    let ma = read(&a.join(METRICS_FILE));
    assert!(ma.lines().count() > 3);
    assert_eq!(ma, read(&b.join(METRICS_FILE)));
    assert_eq!(ma, read(&c.join(METRICS_FILE)));

    let other = d.path().join("other");
    train_seed(&cfg, 2, Some(&other), false).unwrap();
    assert_ne!(ma, read(&other.join(METRICS_FILE)));
}

#[test]
fn resume_continues_progress_and_appends_metrics() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("r");
    let first = train_seed(&tiny("reach", &[]), 1, Some(&out), false).unwrap();
    let longer = tiny("reach", &["curriculum.stage_budgets=[600]"]);
    let second = train_seed(&longer, 1, Some(&out), true).unwrap();
    assert!(second.progress.env_steps >= 600);
    assert!(second.progress.episodes > first.progress.episodes);
    assert!(second.progress.updates > first.progress.updates);
    let csv = read(&out.join(METRICS_FILE));
    assert_eq!(csv.lines().filter(|l| l.starts_with("episode,")).count(), 1);
    let rows = csv.lines().count() - 1;
    assert_eq!(rows as u64, second.progress.episodes);
}

#[test]
fn curriculum_advances_object_count() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny("rearrange", &["curriculum.stage_budgets=[200, 200, 200]"]);
    let out = d.path().join("cur");
    let o = train_seed(&cfg, 1, Some(&out), false).unwrap();
    assert_eq!(o.objects, 3);
    assert_eq!(o.progress.stage, 2);
    let objects: Vec<usize> = read(&out.join(METRICS_FILE))
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(objects.first(), Some(&1));
    assert_eq!(objects.last(), Some(&3));
    assert!(objects.windows(2).all(|w| w[0] <= w[1]));

    // The trained attention policy evaluates on more objects than it saw.
    for m in [4, 8] {
        let r = run_eval(&EvalRequest {
            checkpoint: out.join(FINAL_CHECKPOINT),
            overrides: vec![format!("env.objects={m}")],
            episodes: 2,
            seed: None,
            deterministic: true,
            dump: None,
        })
        .unwrap();
        assert_eq!(r.objects, m);
        assert_eq!(r.episodes[0].trace[0].objects.len(), m);
    }
}

#[test]
fn mlp_checkpoint_rejects_other_object_counts() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny("rearrange", &["method=\"mlp\"", "env.objects=2"]);
    let out = d.path().join("m");
    train_seed(&cfg, 1, Some(&out), false).unwrap();
    let req = |m: usize| EvalRequest {
        checkpoint: out.join(FINAL_CHECKPOINT),
        overrides: vec![format!("env.objects={m}")],
        episodes: 1,
        seed: None,
        deterministic: true,
        dump: None,
    };
    assert!(run_eval(&req(2)).is_ok());
    for m in [1, 3, 8] {
        assert!(matches!(run_eval(&req(m)), Err(DairError::Incompatible(_))));
    }
}

#[test]
fn nonfinite_loss_dumps_batch_and_stops() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny("reach", &["sac.lr=1e300"]);
    let out = d.path().join("nf");
    let err = train_seed(&cfg, 1, Some(&out), false).unwrap_err();
    assert!(matches!(err, DairError::NonFinite { .. }), "{err}");
    let dump: serde_json::Value = serde_json::from_str(&read(&out.join(NONFINITE_DUMP))).unwrap();
    assert!(dump["batch"].as_array().is_some_and(|b| !b.is_empty()));
}

#[test]
fn plot_data_groups_runs_by_method() {
    let d = tempfile::tempdir().unwrap();
    let mut dirs = Vec::new();
    for method in ["dair", "attention"] {
        let mut cfg = tiny("push-door", &[&format!("method=\"{method}\""), "run.seeds=[1, 2]"]);
        let out = d.path().join(method);
        cfg.run.out_dir = out.to_string_lossy().into_owned();
        let runs = run_train(&cfg, false).unwrap();
        assert_eq!(runs.len(), 2);
        assert!(seed_dir(&out, 2).join(FINAL_CHECKPOINT).is_file());
        dirs.push(out);
    }
    let merged = run_plot_data(
        &dirs,
        &d.path().join("plots"),
        Thresholds {
            interaction: 0.05,
            conflict: 0.06,
        },
    )
    .unwrap();
    let methods: Vec<&str> = merged.iter().map(|s| s.method.as_str()).collect();
    assert_eq!(methods, ["attention", "dair"]);
    let text = read(&d.path().join("plots/plot_data.csv"));
    assert!(text.lines().any(|l| l.starts_with("success_rate,dair,")));
    assert!(text.lines().any(|l| l.starts_with("success_rate,attention,")));
}
