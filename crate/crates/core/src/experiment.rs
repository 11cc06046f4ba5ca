//! Multi-seed orchestration behind the command-line subcommands.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{apply_override, ExperimentConfig, Method};
use crate::env::{Env, Task, ACTION_DIM, AGENT_FEATURES, REGION_FEATURES};
use crate::error::{DairError, Result};
use crate::metrics::{across_seeds, write_plot_data, write_summary_csv, Summary, Thresholds};
use crate::nn::{Checkpoint, HeadKind, NetConfig, Network};
use crate::rollout::{ActionMode, EpisodeResult};
use crate::sac::load_policies;
use crate::train::{evaluate, seed_dir, train_seed, TrainOutcome, EVAL_SUMMARY};
use crate::trajectory::{read_dump, write_alpha_csv, write_dump, write_trace_csv};

pub const SUMMARY_CSV: &str = "summary.csv";
pub const PLOT_DATA: &str = "plot_data.csv";
pub const ALPHA_CSV: &str = "alpha_heatmap.csv";
pub const TRACE_CSV: &str = "trajectory.csv";

fn thresholds(cfg: &ExperimentConfig) -> Thresholds {
    Thresholds {
        interaction: cfg.env.interaction_threshold,
        conflict: cfg.env.conflict_threshold,
    }
}

fn write_tables(dir: &Path, summaries: &[Summary], th: Thresholds) -> Result<()> {
    write_summary_csv(BufWriter::new(File::create(dir.join(SUMMARY_CSV))?), summaries, th)?;
    write_plot_data(BufWriter::new(File::create(dir.join(PLOT_DATA))?), summaries)?;
    Ok(())
}

/// Trains every seed in `cfg.run.seeds` (sequentially) under
/// `cfg.run.out_dir/seed_<s>` and writes the across-seed summary.
pub fn run_train(cfg: &ExperimentConfig, resume: bool) -> Result<Vec<(u64, TrainOutcome)>> {
    cfg.validate()?;
    let out = PathBuf::from(&cfg.run.out_dir);
    std::fs::create_dir_all(&out)?;
    let mut outcomes = Vec::with_capacity(cfg.run.seeds.len());
    for &seed in &cfg.run.seeds {
        let o = train_seed(cfg, seed, Some(&seed_dir(&out, seed)), resume)?;
        outcomes.push((seed, o));
    }
    let evals: Vec<Summary> = outcomes.iter().filter_map(|(_, o)| o.eval.clone()).collect();
    if !evals.is_empty() {
        let agg = across_seeds(cfg.method.name(), &evals)?;
        write_tables(&out, &[agg], thresholds(cfg))?;
    }
    Ok(outcomes)
}

#[derive(Debug, Clone)]
pub struct EvalRequest {
    pub checkpoint: PathBuf,
    /// Dotted `key=value` overrides applied to the stored config, e.g.
    /// `env.objects=8`.
    pub overrides: Vec<String>,
    pub episodes: usize,
    pub seed: Option<u64>,
    /// Use the distribution mean instead of sampling.
    pub deterministic: bool,
    pub dump: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub config: ExperimentConfig,
    pub objects: usize,
    pub summary: Summary,
    pub episodes: Vec<EpisodeResult>,
}

/// Config stored in a checkpoint, with overrides applied on top.
fn checkpoint_config(ck: &Checkpoint, overrides: &[String]) -> Result<(ExperimentConfig, usize, u64)> {
    let stored: ExperimentConfig = serde_json::from_value(ck.meta["config"].clone())
        .map_err(|e| DairError::Checkpoint(format!("config metadata: {e}")))?;
    let trained_regions = ck.meta["objects"]
        .as_u64()
        .ok_or_else(|| DairError::Checkpoint("missing objects metadata".into()))? as usize;
    let seed = ck.meta["seed"].as_u64().unwrap_or(0);
    let mut root: toml::Table = stored
        .to_toml()
        .parse()
        .map_err(|e: toml::de::Error| DairError::Checkpoint(e.to_string()))?;
    // Evaluate the final curriculum stage unless told otherwise.
    if stored.task == Task::Rearrange {
        apply_override(&mut root, &format!("env.objects={trained_regions}"))?;
    }
    for o in overrides {
        apply_override(&mut root, o)?;
    }
    let text = toml::to_string(&root).map_err(|e| DairError::Config(e.to_string()))?;
    let cfg = ExperimentConfig::from_toml_str(&text, &[])?;
    Ok((cfg, trained_regions, seed))
}

/// Frozen-policy evaluation of a checkpoint, optionally on a different
/// object count. MLP policies only accept the count they were trained on.
pub fn run_eval(req: &EvalRequest) -> Result<EvalReport> {
    if req.episodes == 0 {
        return Err(DairError::Empty("evaluation episodes"));
    }
    let ck = Checkpoint::load(&req.checkpoint)?;
    let (cfg, trained_regions, stored_seed) = checkpoint_config(&ck, &req.overrides)?;
    let env = Env::new(cfg.env.clone())?;
    if cfg.method == Method::Mlp && env.n_regions() != trained_regions {
        return Err(DairError::Incompatible(format!(
            "mlp policy was trained with {trained_regions} regions and cannot take {}; \
             its input width is fixed",
            env.n_regions()
        )));
    }
    let net = NetConfig {
        arch: cfg.method.arch(),
        head: HeadKind::Policy,
        embed_dim: cfg.network.embed_dim,
        agent_features: AGENT_FEATURES,
        region_features: REGION_FEATURES,
        action_dim: ACTION_DIM,
        n_agents: env.n_agents(),
        mlp_regions: trained_regions,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut policies: Vec<Network> = (0..env.n_agents()).map(|_| Network::new(net.clone(), &mut rng)).collect();
    load_policies(&ck, &mut policies)?;
    let mode = if req.deterministic { ActionMode::Mean } else { ActionMode::Sample };
    let seed = req.seed.unwrap_or(stored_seed);
    let (summary, episodes) = evaluate(&env, &policies, seed, req.episodes, mode, cfg.method.name())?;
    if let Some(path) = &req.dump {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        write_dump(
            BufWriter::new(File::create(path)?),
            cfg.task,
            cfg.method.name(),
            env.n_agents(),
            env.n_regions(),
            &episodes,
        )?;
    }
    Ok(EvalReport {
        objects: env.config().objects,
        config: cfg,
        summary,
        episodes,
    })
}

/// Converts a trajectory dump into the attention heat-map and trace CSVs.
pub fn run_replay(dump: &Path, out: &Path) -> Result<(PathBuf, PathBuf)> {
    let d = read_dump(BufReader::new(File::open(dump)?))?;
    std::fs::create_dir_all(out)?;
    let alpha = out.join(ALPHA_CSV);
    let trace = out.join(TRACE_CSV);
    write_alpha_csv(BufWriter::new(File::create(&alpha)?), &d)?;
    write_trace_csv(BufWriter::new(File::create(&trace)?), &d)?;
    Ok((alpha, trace))
}

fn collect_summaries(dir: &Path, found: &mut Vec<Summary>) -> Result<()> {
    let direct = dir.join(EVAL_SUMMARY);
    if direct.is_file() {
        let s: Summary = serde_json::from_reader(BufReader::new(File::open(&direct)?))
            .map_err(|e| DairError::Config(format!("{}: {e}", direct.display())))?;
        found.push(s);
    }
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    for p in entries {
        collect_summaries(&p, found)?;
    }
    Ok(())
}

/// Gathers `eval_summary.json` files under each run directory, groups them
/// by method, and writes seed-averaged tables to `out`.
pub fn run_plot_data(runs: &[PathBuf], out: &Path, th: Thresholds) -> Result<Vec<Summary>> {
    let mut found = Vec::new();
    for r in runs {
        if !r.is_dir() {
            return Err(DairError::Config(format!("{} is not a run directory", r.display())));
        }
        collect_summaries(r, &mut found)?;
    }
    if found.is_empty() {
        return Err(DairError::Empty("evaluation summaries"));
    }
    let mut groups: BTreeMap<String, Vec<Summary>> = BTreeMap::new();
    for s in found {
        groups.entry(s.method.clone()).or_default().push(s);
    }
    let merged = groups
        .iter()
        .map(|(m, v)| across_seeds(m, v))
        .collect::<Result<Vec<_>>>()?;
    std::fs::create_dir_all(out)?;
    write_tables(out, &merged, th)?;
    Ok(merged)
}
