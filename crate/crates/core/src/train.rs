//! Training loop: collect episodes, relabel, update, log, checkpoint,
//! advance the curriculum.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::env::Env;
use crate::error::{DairError, Result};
use crate::metrics::{aggregate, EpisodeMetrics, Summary};
use crate::nn::{Checkpoint, Network};
use crate::rollout::{run_episode, ActionMode, EpisodeResult};
use crate::sac::{her_relabel, Batch, ReplayBuffer, TrainerState, Transition, UpdateStats};

pub const METRICS_FILE: &str = "metrics.csv";
pub const LAST_CHECKPOINT: &str = "checkpoint_last.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const RESOLVED_CONFIG: &str = "config.resolved.toml";
pub const MANIFEST: &str = "manifest.json";
pub const EVAL_SUMMARY: &str = "eval_summary.json";
pub const NONFINITE_DUMP: &str = "nonfinite_batch.json";

const STREAM_INIT: u64 = u64::MAX;
const STREAM_UPDATE: u64 = u64::MAX - 1;
const STREAM_EVAL_BASE: u64 = 1 << 62;

/// RNG for episode `index` of `seed`; independent of which worker runs it.
pub fn episode_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(index);
    r
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Learner plus environment built from a config; initialisation is a pure
/// function of `(config, seed)`.
pub fn build_state(cfg: &ExperimentConfig, seed: u64) -> Result<TrainerState> {
    let env0 = cfg.stage_env(0);
    let mut rng = stream_rng(seed, STREAM_INIT);
    TrainerState::new(
        cfg.sac.clone(),
        cfg.dair,
        cfg.method.arch(),
        cfg.network.embed_dim,
        env0.agents,
        env0.n_regions(),
        &mut rng,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub episodes: u64,
    pub env_steps: u64,
    pub stage: usize,
    pub stage_steps: u64,
    pub updates: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub episodes: Vec<EpisodeMetrics>,
    pub eval: Option<Summary>,
    pub state: TrainerState,
    pub progress: Progress,
    /// Objects in the final stage's environment.
    pub objects: usize,
}

/// Header of the metrics CSV for `n_agents` temperatures.
pub fn metrics_header(n_agents: usize) -> String {
    let mut cols = vec![
        "episode",
        "objects",
        "env_steps",
        "success",
        "domination_rate",
        "conflict_rate",
        "finish_steps",
        "attention_overlap",
        "critic_loss",
        "actor_loss",
        "q_overlap",
        "policy_overlap",
        "temperature_loss",
    ]
    .into_iter()
    .map(String::from)
    .collect::<Vec<_>>();
    cols.extend((0..n_agents).map(|i| format!("tau_{i}")));
    cols.join(",")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn metrics_row(ep: u64, objects: usize, env_steps: u64, m: &EpisodeMetrics, stats: Option<&UpdateStats>, taus: &[f64]) -> String {
    let mut f = vec![
        ep.to_string(),
        objects.to_string(),
        env_steps.to_string(),
        u8::from(m.success).to_string(),
        m.domination_rate.to_string(),
        m.conflict_rate.to_string(),
        m.finish_steps.to_string(),
        opt(m.mean_overlap),
        opt(stats.map(|s| s.critic_loss)),
        opt(stats.map(|s| s.actor_loss)),
        opt(stats.map(|s| s.q_overlap)),
        opt(stats.map(|s| s.policy_overlap)),
        opt(stats.map(|s| s.temperature_loss)),
    ];
    f.extend(taus.iter().map(|t| t.to_string()));
    f.join(",")
}

fn mean_stats(all: &[UpdateStats]) -> Option<UpdateStats> {
    if all.is_empty() {
        return None;
    }
    let n = all.len() as f64;
    let sum = |f: fn(&UpdateStats) -> f64| all.iter().map(f).sum::<f64>() / n;
    Some(UpdateStats {
        critic_loss: sum(|s| s.critic_loss),
        q_overlap: sum(|s| s.q_overlap),
        actor_loss: sum(|s| s.actor_loss),
        policy_overlap: sum(|s| s.policy_overlap),
        temperature_loss: sum(|s| s.temperature_loss),
    })
}

/// Collects episodes `first .. first + count`, spread over `workers`
/// threads. Results come back in episode order.
fn collect(env: &Env, policies: &[Network], seed: u64, first: u64, count: usize, workers: usize, her_k: usize) -> Result<Vec<(EpisodeResult, Vec<Transition>)>> {
    let job = |idx: u64| -> Result<(EpisodeResult, Vec<Transition>)> {
        let mut rng = episode_rng(seed, idx);
        let ep = run_episode(env, policies, ActionMode::Sample, &mut rng, false)?;
        let relabeled = her_relabel(env, &ep.transitions, her_k, &mut rng);
        Ok((ep, relabeled))
    };
    if workers <= 1 || count <= 1 {
        return (0..count as u64).map(|i| job(first + i)).collect();
    }
    let mut slots: Vec<Option<Result<(EpisodeResult, Vec<Transition>)>>> = (0..count).map(|_| None).collect();
    std::thread::scope(|s| {
        for chunk in slots.chunks_mut(count.div_ceil(workers)).enumerate() {
            let (ci, chunk) = chunk;
            let base = ci * count.div_ceil(workers);
            let job = &job;
            s.spawn(move || {
                for (j, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(job(first + (base + j) as u64));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every slot filled")).collect()
}

fn checkpoint(cfg: &ExperimentConfig, seed: u64, state: &TrainerState, progress: &Progress, objects: usize) -> Result<Checkpoint> {
    let meta = serde_json::json!({
        "config": serde_json::to_value(cfg).map_err(|e| DairError::Checkpoint(e.to_string()))?,
        "seed": seed,
        "progress": serde_json::to_value(progress).map_err(|e| DairError::Checkpoint(e.to_string()))?,
        "objects": objects,
    });
    let mut ck = Checkpoint::new(meta);
    state.add_to_checkpoint(&mut ck);
    Ok(ck)
}

/// Build identifier recorded in manifests.
pub fn build_id() -> String {
    format!(
        "{}-{}",
        env!("CARGO_PKG_VERSION"),
        option_env!("DAIR_BUILD_ID").unwrap_or("local")
    )
}

fn write_nonfinite_dump(out: &Path, batch: &[&Transition], err: &DairError) -> Result<()> {
    let doc = serde_json::json!({ "error": err.to_string(), "batch": batch });
    std::fs::write(out.join(NONFINITE_DUMP), serde_json::to_vec_pretty(&doc).unwrap_or_default())?;
    Ok(())
}

/// Deterministic-action evaluation of `policies`.
pub fn evaluate(env: &Env, policies: &[Network], seed: u64, episodes: usize, mode: ActionMode, method: &str) -> Result<(Summary, Vec<EpisodeResult>)> {
    if episodes == 0 {
        return Err(DairError::Empty("evaluation episodes"));
    }
    let mut results = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let mut rng = stream_rng(seed, STREAM_EVAL_BASE + i as u64);
        results.push(run_episode(env, policies, mode, &mut rng, true)?);
    }
    let metrics: Vec<EpisodeMetrics> = results.iter().map(|r| r.metrics.clone()).collect();
    Ok((aggregate(method, &metrics)?, results))
}

/// Trains one seed. With `out` set, writes the metrics CSV, checkpoints,
/// resolved config and manifest there. `resume` continues from the last
/// checkpoint in `out` (replay buffer and optimiser moments start empty).
pub fn train_seed(cfg: &ExperimentConfig, seed: u64, out: Option<&Path>, resume: bool) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut state = build_state(cfg, seed)?;
    let budgets = cfg.curriculum.scaled();
    let mut progress = Progress {
        episodes: 0,
        env_steps: 0,
        stage: 0,
        stage_steps: 0,
        updates: 0,
    };
    if resume {
        let dir = out.ok_or_else(|| DairError::Config("resume requested without an output directory".into()))?;
        let path = dir.join(LAST_CHECKPOINT);
        if !path.exists() {
            return Err(DairError::Checkpoint(format!(
                "resume requested but no checkpoint at {}",
                path.display()
            )));
        }
        let ck = Checkpoint::load(&path)?;
        state.load_checkpoint(&ck)?;
        progress = serde_json::from_value(ck.meta["progress"].clone())
            .map_err(|e| DairError::Checkpoint(format!("progress metadata: {e}")))?;
        state.updates = progress.updates;
    }

    let mut csv: Option<BufWriter<File>> = None;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(RESOLVED_CONFIG), cfg.to_toml())?;
        let manifest = serde_json::json!({
            "seed": seed,
            "build": build_id(),
            "method": cfg.method.name(),
            "task": cfg.task.name(),
            "resumed": resume,
        });
        std::fs::write(dir.join(MANIFEST), serde_json::to_vec_pretty(&manifest).unwrap_or_default())?;
        let path = dir.join(METRICS_FILE);
        let f = if resume && path.exists() {
            OpenOptions::new().append(true).open(&path)?
        } else {
            let mut f = File::create(&path)?;
            writeln!(f, "{}", metrics_header(state.n_agents()))?;
            f
        };
        csv = Some(BufWriter::new(f));
    }

    let mut env = Env::new(cfg.stage_env(progress.stage))?;
    let mut buffer = ReplayBuffer::new(cfg.sac.buffer_capacity);
    // A resumed run draws from a fresh stream; it is not bit-identical to an
    // uninterrupted one.
    let mut update_rng = stream_rng(seed, STREAM_UPDATE - progress.updates);
    let mut history = Vec::new();
    let per_collection = cfg.sac.episodes_per_collection;

    loop {
        let budget = budgets[progress.stage];
        if progress.stage_steps >= budget {
            if progress.stage + 1 < budgets.len() {
                // Curriculum advance: one more object, same parameters, fresh buffer.
                progress.stage += 1;
                progress.stage_steps = 0;
                env = Env::new(cfg.stage_env(progress.stage))?;
                buffer.clear();
                continue;
            }
            break;
        }
        let policies = state.policies();
        let results = collect(&env, &policies, seed, progress.episodes, per_collection, cfg.sac.rollout_workers, cfg.sac.her_k)?;
        let mut collected = 0usize;
        let mut finished = Vec::with_capacity(results.len());
        for (ep, relabeled) in results {
            collected += ep.steps;
            progress.env_steps += ep.steps as u64;
            progress.stage_steps += ep.steps as u64;
            progress.episodes += 1;
            buffer.push_episode(relabeled);
            finished.push((progress.episodes - 1, progress.env_steps, ep.metrics));
        }

        let n_updates = (cfg.sac.updates_per_step * collected as f64).round() as usize;
        let mut stats = Vec::with_capacity(n_updates);
        for _ in 0..n_updates {
            let Some(items) = buffer.sample(cfg.sac.batch_size, &mut update_rng) else {
                break;
            };
            let batch = Batch::from_transitions(&items)?;
            match state.update(&batch, &mut update_rng) {
                Ok(s) => stats.push(s),
                Err(e @ DairError::NonFinite { .. }) => {
                    if let Some(dir) = out {
                        write_nonfinite_dump(dir, &items, &e)?;
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            }
        }
        progress.updates = state.updates;
        let phase = mean_stats(&stats);
        let taus = state.taus();
        for (idx, steps, m) in finished {
            if let Some(w) = csv.as_mut() {
                writeln!(w, "{}", metrics_row(idx, env.config().n_regions(), steps, &m, phase.as_ref(), &taus))?;
            }
            history.push(m);
        }
        if let Some(dir) = out {
            let every = cfg.run.checkpoint_every as u64;
            if every > 0 && progress.episodes / every != (progress.episodes - per_collection as u64) / every {
                if let Some(w) = csv.as_mut() {
                    w.flush()?;
                }
                checkpoint(cfg, seed, &state, &progress, env.config().n_regions())?.save(&dir.join(LAST_CHECKPOINT))?;
            }
        }
    }

    if let Some(w) = csv.as_mut() {
        w.flush()?;
    }
    let objects = env.config().n_regions();
    let eval = if cfg.run.eval_episodes > 0 {
        let (s, _) = evaluate(&env, &state.policies(), seed, cfg.run.eval_episodes, ActionMode::Mean, cfg.method.name())?;
        Some(s)
    } else {
        None
    };
    if let Some(dir) = out {
        let ck = checkpoint(cfg, seed, &state, &progress, objects)?;
        ck.save(&dir.join(FINAL_CHECKPOINT))?;
        ck.save(&dir.join(LAST_CHECKPOINT))?;
        if let Some(s) = &eval {
            std::fs::write(dir.join(EVAL_SUMMARY), serde_json::to_vec_pretty(s).unwrap_or_default())?;
        }
    }
    Ok(TrainOutcome {
        episodes: history,
        eval,
        state,
        progress,
        objects,
    })
}

/// Output directory of one seed.
pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}
