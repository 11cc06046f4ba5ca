//! Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails. `ACCEPTANCE_ONLY=1,2,8` restricts the run.
//!
//! Training criteria run at desk budgets (see `STEPS`), far below the
//! multi-million-step runs the directional comparisons are modelled on.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use dair_core::autodiff::gradcheck::relative_error;
use dair_core::autodiff::Tape;
use dair_core::config::ExperimentConfig;
use dair_core::dair::{attn_overlap_loss, overlap_value, DairConfig};
use dair_core::env::{Env, EnvConfig, Task, ACTION_DIM, AGENT_FEATURES, REGION_FEATURES};
use dair_core::experiment::{run_eval, EvalRequest};
use dair_core::metrics::{EpisodeMetrics, NEUTRAL_DOMINATION};
use dair_core::nn::{draw_noise, Architecture, AttentionWeights, EntityBatch, HeadKind, NetConfig, Network};
use dair_core::rollout::ActionMode;
use dair_core::sac::{Batch, SacConfig, TrainerState, Transition};
use dair_core::train::{evaluate, train_seed, FINAL_CHECKPOINT, METRICS_FILE};
use dair_core::DairError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Environment steps per training run for the A/B comparisons.
const STEPS: u64 = 20_000;
const REACH_STEPS: u64 = 20_000;
const CURRICULUM_STEPS: u64 = 20_000;
const SEEDS: [u64; 3] = [0, 1, 2];
const EVAL_EPISODES: usize = 100;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- gradients

fn random_batch(n: usize, r: &mut ChaCha8Rng) -> Batch {
    let mut c = EnvConfig::new(Task::Rearrange);
    c.objects = 2;
    c.agents = 2;
    let env = Env::new(c).unwrap();
    let mut s = env.reset(r).unwrap();
    let mut ts = Vec::with_capacity(n);
    for _ in 0..n {
        let acts: Vec<[f64; 2]> = (0..2).map(|_| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]).collect();
        let o = env.step(&s, &acts).unwrap();
        ts.push(Transition {
            obs: env.observe(&s),
            actions: acts.iter().map(|a| a.to_vec()).collect(),
            reward: f64::from(r.random_bool(0.3) as u8),
            extra_reward: 0.0,
            next_obs: env.observe(&o.state),
            achieved_goals: env.achieved_goals(&o.state),
            desired_goals: o.state.goals.clone(),
            done: r.random_bool(0.2),
        });
        s = if o.done { env.reset(r).unwrap() } else { o.state };
    }
    let refs: Vec<&Transition> = ts.iter().collect();
    Batch::from_transitions(&refs).unwrap()
}

#[derive(Clone, Copy, PartialEq)]
enum Loss {
    ActorSac,
    ActorOverlap,
    ActorJoint,
    CriticBellman,
    CriticOverlap,
    CriticJoint,
}

const LOSSES: [(Loss, &str); 6] = [
    (Loss::ActorSac, "policy sac"),
    (Loss::ActorOverlap, "policy overlap"),
    (Loss::ActorJoint, "policy joint"),
    (Loss::CriticBellman, "critic bellman"),
    (Loss::CriticOverlap, "critic overlap"),
    (Loss::CriticJoint, "critic joint"),
];

fn is_actor(l: Loss) -> bool {
    matches!(l, Loss::ActorSac | Loss::ActorOverlap | Loss::ActorJoint)
}

/// Flat parameters the loss differentiates: every policy for actor losses,
/// every critic for critic losses.
fn flat_params(st: &TrainerState, actor: bool) -> Vec<f64> {
    let mut out = Vec::new();
    for ag in &st.agents {
        if actor {
            out.extend(ag.policy.params().flat());
        } else {
            for q in &ag.q {
                out.extend(q.params().flat());
            }
        }
    }
    out
}

fn set_params(st: &mut TrainerState, actor: bool, flat: &[f64]) {
    let mut off = 0;
    for ag in &mut st.agents {
        let nets: Vec<&mut Network> = if actor { vec![&mut ag.policy] } else { ag.q.iter_mut().collect() };
        for net in nets {
            let n = net.params().numel();
            net.params_mut().set_flat(&flat[off..off + n]);
            off += n;
        }
    }
}

/// Loss value and, with `grad`, its gradient in `flat_params` order.
fn loss_and_grad(
    st: &TrainerState,
    l: Loss,
    batch: &Batch,
    noise: &[Vec<f64>],
    targets: &[Vec<f64>],
    grad: bool,
) -> (f64, Vec<f64>) {
    let mut tape = Tape::new();
    let actor = is_actor(l);
    let pb: Vec<_> = st.agents.iter().map(|a| a.policy.bind(&mut tape, grad && actor)).collect();
    let qb: Vec<Vec<_>> = st
        .agents
        .iter()
        .map(|a| a.q.iter().map(|q| q.bind(&mut tape, grad && !actor)).collect())
        .collect();
    let var = if actor {
        let g = st.actor_graph(&mut tape, &pb, &qb, batch, noise).unwrap();
        match l {
            Loss::ActorSac => g.sac_loss,
            Loss::ActorOverlap => g.overlap.unwrap(),
            _ => g.loss,
        }
    } else {
        let g = st.critic_graph(&mut tape, &qb, batch, targets).unwrap();
        match l {
            Loss::CriticBellman => g.bellman,
            Loss::CriticOverlap => g.overlap.unwrap(),
            _ => g.loss,
        }
    };
    let value = tape.value(var)[0];
    if !grad {
        return (value, Vec::new());
    }
    let grads = tape.backward(var).unwrap();
    let mut out = Vec::new();
    for (i, ag) in st.agents.iter().enumerate() {
        let pairs: Vec<(&Network, &dair_core::nn::BoundParams)> = if actor {
            vec![(&ag.policy, &pb[i])]
        } else {
            ag.q.iter().zip(&qb[i]).collect()
        };
        for (net, bound) in pairs {
            let mut ps = net.params().clone();
            ps.zero_grads();
            ps.accumulate_grads(bound, &grads);
            out.extend(ps.flat_grads());
        }
    }
    (value, out)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-10)
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

/// Directional central differences along random unit directions.
fn gradient_suite() -> Outcome {
    const DRAWS: u64 = 100;
    const DIRECTIONS: usize = 2;
    const H: f64 = 1e-5;
    const COORDS: usize = 16;
    let start = Instant::now();
    let mut worst = vec![0.0f64; LOSSES.len() + 1];
    for draw in 0..DRAWS {
        let mut r = rng(10_000 + draw);
        let sac = SacConfig {
            batch_size: 8,
            ..SacConfig::default()
        };
        let dair = DairConfig {
            lambda: 0.05,
            ..DairConfig::default()
        };
        let mut st = TrainerState::new(sac, dair, Architecture::Attention, 16, 2, 2, &mut r).unwrap();
        for ag in &mut st.agents {
            ag.log_tau = dair_core::autodiff::Tensor::scalar(r.random_range(-3.0..0.0));
        }
        let batch = random_batch(8, &mut r);
        let noise: Vec<Vec<f64>> = (0..2).map(|_| draw_noise(&mut r, 8 * ACTION_DIM)).collect();
        let targets = st.critic_targets(&batch, &noise).unwrap();

        for (k, (l, _)) in LOSSES.iter().enumerate() {
            let actor = is_actor(*l);
            let theta = flat_params(&st, actor);
            let (_, g) = loss_and_grad(&st, *l, &batch, &noise, &targets, true);
            for _ in 0..DIRECTIONS {
                // Random direction tilted toward the gradient: a purely random
                // one is nearly orthogonal to sparse gradients and the
                // difference quotient drowns in roundoff.
                let noise_dir = unit(draw_noise(&mut r, theta.len()));
                let g_dir = unit(g.clone());
                let u = unit(g_dir.iter().zip(&noise_dir).map(|(a, b)| a + b).collect());
                let analytic: f64 = g.iter().zip(&u).map(|(a, b)| a * b).sum();
                let shifted = |s: f64| theta.iter().zip(&u).map(|(t, d)| t + s * d).collect::<Vec<f64>>();
                let mut probe = st.clone();
                set_params(&mut probe, actor, &shifted(H));
                let up = loss_and_grad(&probe, *l, &batch, &noise, &targets, false).0;
                set_params(&mut probe, actor, &shifted(-H));
                let down = loss_and_grad(&probe, *l, &batch, &noise, &targets, false).0;
                let numeric = (up - down) / (2.0 * H);
                worst[k] = worst[k].max(rel(analytic, numeric));
            }
            // Coordinate partials on a sample of parameters, compared as a vector.
            let picks: Vec<usize> = (0..COORDS).map(|_| r.random_range(0..theta.len())).collect();
            let mut probe = st.clone();
            let numeric: Vec<f64> = picks
                .iter()
                .map(|&j| {
                    let mut t = theta.clone();
                    t[j] += H;
                    set_params(&mut probe, actor, &t);
                    let up = loss_and_grad(&probe, *l, &batch, &noise, &targets, false).0;
                    t[j] -= 2.0 * H;
                    set_params(&mut probe, actor, &t);
                    let down = loss_and_grad(&probe, *l, &batch, &noise, &targets, false).0;
                    (up - down) / (2.0 * H)
                })
                .collect();
            let analytic: Vec<f64> = picks.iter().map(|&j| g[j]).collect();
            worst[k] = worst[k].max(relative_error(&analytic, &numeric, 1e-8));
        }

        // Temperature loss against each agent's log tau.
        let mut tape = Tape::new();
        let pb: Vec<_> = st.agents.iter().map(|a| a.policy.bind(&mut tape, false)).collect();
        let qb: Vec<Vec<_>> = st.agents.iter().map(|a| a.q.iter().map(|q| q.bind(&mut tape, false)).collect()).collect();
        let g = st.actor_graph(&mut tape, &pb, &qb, &batch, &noise).unwrap();
        for lp in &g.log_probs {
            let log_probs = tape.value(*lp).to_vec();
            let target_entropy = r.random_range(-3.0..1.0);
            let at = |x: f64, grad: bool| {
                let mut t = Tape::new();
                let v = t.leaf(1, 1, vec![x]);
                let loss = TrainerState::temperature_graph(&mut t, v, &log_probs, target_entropy).unwrap();
                let val = t.value(loss)[0];
                let d = if grad { t.backward(loss).unwrap().get(v).unwrap()[0] } else { 0.0 };
                (val, d)
            };
            let x = r.random_range(-4.0..1.0);
            let analytic = at(x, true).1;
            let numeric = (at(x + H, false).0 - at(x - H, false).0) / (2.0 * H);
            let k = LOSSES.len();
            worst[k] = worst[k].max(rel(analytic, numeric));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let max = worst.iter().cloned().fold(0.0, f64::max);
    let names: Vec<String> = LOSSES
        .iter()
        .map(|(_, n)| *n)
        .chain(std::iter::once("temperature"))
        .zip(&worst)
        .map(|(n, w)| format!("{n}={w:.1e}"))
        .collect();
    outcome(
        max < 1e-4 && secs < 120.0,
        format!("{DRAWS} draws, max rel err {max:.2e} ({}), {secs:.1}s", names.join(" ")),
    )
}

// ------------------------------------------------------------- simplex/DAIR

fn random_simplex(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    // Mix of dense draws and sparse supports so disjoint pairs occur.
    let keep: Vec<bool> = (0..n).map(|_| r.random_bool(0.5)).collect();
    let sparse = r.random_bool(0.5);
    let mut v: Vec<f64> = (0..n)
        .map(|i| if sparse && !keep[i] { 0.0 } else { -r.random_range(1e-12f64..1.0).ln() })
        .collect();
    if v.iter().all(|x| *x == 0.0) {
        v[r.random_range(0..n)] = 1.0;
    }
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

fn tape_overlap(alphas: &[Vec<f64>], agent: usize) -> f64 {
    let mut tape = Tape::new();
    let n = alphas[0].len();
    let vars: Vec<_> = alphas.iter().map(|a| tape.constant(1, n, a.clone())).collect();
    let l = attn_overlap_loss(&mut tape, &vars, agent, false).unwrap();
    tape.value(l)[0]
}

fn simplex_properties() -> Outcome {
    let mut r = rng(77);
    let mut failures = Vec::new();

    // Attention rows produced by random networks on random states.
    let mut c = EnvConfig::new(Task::Rearrange);
    c.objects = 2;
    c.agents = 2;
    let env = Env::new(c).unwrap();
    let mut rows = 0;
    let mut attn: Vec<Vec<f64>> = Vec::new();
    for _ in 0..100 {
        let net = Network::new(
            NetConfig {
                arch: Architecture::Attention,
                head: HeadKind::Policy,
                embed_dim: 16,
                agent_features: AGENT_FEATURES,
                region_features: REGION_FEATURES,
                action_dim: ACTION_DIM,
                n_agents: 2,
                mlp_regions: 2,
            },
            &mut r,
        );
        let states: Vec<_> = (0..50).map(|_| env.observe(&env.reset(&mut r).unwrap())).collect();
        let batch = EntityBatch::from_states(states.iter().map(|s| s.as_slice()), AGENT_FEATURES, REGION_FEATURES).unwrap();
        for agent in 0..2 {
            let mut tape = Tape::new();
            let p = net.bind(&mut tape, false);
            let (_, _, alpha) = net.forward_policy(&mut tape, &p, &batch, agent).unwrap();
            let a = AttentionWeights::from_rows(tape.value(alpha.unwrap()), batch.n_entities());
            for w in a {
                rows += 1;
                if !w.is_simplex(1e-9) || w.probs.iter().any(|x| *x < 0.0) {
                    failures.push("network attention row is not a simplex".to_string());
                }
                attn.push(w.probs);
            }
        }
    }

    let draws = 10_000;
    let (mut disjoint_pairs, mut zero_pairs) = (0, 0);
    for i in 0..draws {
        let n = 4;
        let (a, b) = if i % 2 == 0 {
            (attn[r.random_range(0..attn.len())].clone(), attn[r.random_range(0..attn.len())].clone())
        } else {
            (random_simplex(&mut r, n), random_simplex(&mut r, n))
        };
        let pair = vec![a.clone(), b.clone()];
        let l0 = tape_overlap(&pair, 0);
        let l1 = tape_overlap(&pair, 1);
        let plain = overlap_value(&[AttentionWeights::new(a.clone()), AttentionWeights::new(b.clone())], 0).unwrap();
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        if !(0.0..=1.0).contains(&l0) {
            failures.push(format!("two-agent overlap {l0} outside [0,1]"));
        }
        if l0 != l1 {
            failures.push(format!("asymmetric overlap {l0} vs {l1}"));
        }
        if (l0 - dot * dot).abs() > 1e-12 || (plain - l0).abs() > 1e-12 {
            failures.push(format!("overlap {l0} differs from squared dot {}", dot * dot));
        }
        let disjoint = a.iter().zip(&b).all(|(x, y)| *x == 0.0 || *y == 0.0);
        if disjoint {
            disjoint_pairs += 1;
            if l0 != 0.0 {
                failures.push(format!("disjoint supports gave {l0}"));
            }
        }
        if l0 < 1e-12 {
            zero_pairs += 1;
            let prod: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            if prod >= 1e-6 {
                failures.push(format!("near-zero loss {l0} with product sum {prod}"));
            }
        }
        // Three agents: each agent's loss lies in [0, N-1].
        let third = random_simplex(&mut r, n);
        let trio = vec![a, b, third];
        for k in 0..3 {
            let l = tape_overlap(&trio, k);
            if !(0.0..=2.0).contains(&l) {
                failures.push(format!("three-agent overlap {l} outside [0,2]"));
            }
        }
    }
    failures.dedup();
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{rows} network rows, {draws} pairs ({disjoint_pairs} disjoint, {zero_pairs} near-zero)")
        } else {
            format!("{} violations, first: {}", failures.len(), failures[0])
        },
    )
}

// ----------------------------------------------------------------- training

fn config(task: &str, steps: u64, extra: &[String]) -> ExperimentConfig {
    let mut o: Vec<String> = vec![
        "network.embed_dim=32".into(),
        "sac.batch_size=64".into(),
        "sac.lr=0.001".into(),
        "curriculum.desk_scale=1.0".into(),
        format!("curriculum.stage_budgets=[{steps}]"),
        "run.eval_episodes=1".into(),
        "run.checkpoint_every=100000".into(),
    ];
    o.extend(extra.iter().cloned());
    ExperimentConfig::from_toml_str(&format!("task = \"{task}\"\nenv.reward_mode = \"sparse\"\n"), &o).unwrap()
}

/// Seed-level eval numbers for one trained run.
struct SeedEval {
    success: f64,
    conflict: f64,
    overlap: Option<f64>,
    /// Domination over episodes where some agent manipulated.
    domination: Option<f64>,
    manipulating: usize,
    env_steps: u64,
}

fn domination_excluding_neutral(eps: &[EpisodeMetrics]) -> (Option<f64>, usize) {
    let active: Vec<f64> = eps.iter().filter(|m| !m.no_manipulation).map(|m| m.domination_rate).collect();
    if active.is_empty() {
        (None, 0)
    } else {
        (Some(active.iter().sum::<f64>() / active.len() as f64), active.len())
    }
}

fn train_and_eval(cfg: &ExperimentConfig, seed: u64, out: Option<&Path>) -> SeedEval {
    let label = format!("{} {} seed {seed}", cfg.task.name(), cfg.method.name());
    let t = Instant::now();
    let o = train_seed(cfg, seed, out, false).unwrap_or_else(|e| panic!("{label}: {e}"));
    let env = Env::new(cfg.stage_env(o.progress.stage)).unwrap();
    let (s, results) = evaluate(&env, &o.state.policies(), seed, EVAL_EPISODES, ActionMode::Mean, cfg.method.name()).unwrap();
    let eps: Vec<EpisodeMetrics> = results.into_iter().map(|r| r.metrics).collect();
    let (domination, manipulating) = domination_excluding_neutral(&eps);
    eprintln!(
        "  {label}: {} steps in {:.0}s, success {:.1}% conflict {:.3} domination {} overlap {}",
        o.progress.env_steps,
        t.elapsed().as_secs_f64(),
        s.success_rate.mean,
        s.conflict_rate.mean,
        domination.map(|d| format!("{d:.1} over {manipulating}")).unwrap_or_else(|| "-".into()),
        s.overlap.map(|x| format!("{:.4}", x.mean)).unwrap_or_else(|| "-".into()),
    );
    SeedEval {
        success: s.success_rate.mean,
        conflict: s.conflict_rate.mean,
        overlap: s.overlap.map(|x| x.mean),
        domination,
        manipulating,
        env_steps: o.progress.env_steps,
    }
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

struct MethodEval {
    success: f64,
    conflict: f64,
    overlap: f64,
    /// Mean over seeds that had manipulating episodes.
    domination: Option<f64>,
    manipulating: usize,
}

fn run_method(task: &str, method: &str, extra: &[&str]) -> MethodEval {
    let mut o: Vec<String> = vec![format!("method=\"{method}\"")];
    o.extend(extra.iter().map(|s| s.to_string()));
    let cfg = config(task, STEPS, &o);
    let seeds: Vec<SeedEval> = SEEDS.iter().map(|s| train_and_eval(&cfg, *s, None)).collect();
    let doms: Vec<f64> = seeds.iter().filter_map(|s| s.domination).collect();
    MethodEval {
        success: mean(seeds.iter().map(|s| s.success)),
        conflict: mean(seeds.iter().map(|s| s.conflict)),
        overlap: mean(seeds.iter().map(|s| s.overlap.unwrap_or(f64::NAN))),
        domination: if doms.is_empty() { None } else { Some(mean(doms)) },
        manipulating: seeds.iter().map(|s| s.manipulating).sum(),
    }
}

fn fmt_dom(d: Option<f64>) -> String {
    d.map(|x| format!("{x:.1}")).unwrap_or_else(|| "undefined".into())
}

fn reach() -> Outcome {
    let start = Instant::now();
    let cfg = config("reach", REACH_STEPS, &["method=\"attention\"".into()]);
    let runs: Vec<SeedEval> = SEEDS.iter().map(|s| train_and_eval(&cfg, *s, None)).collect();
    let mins = start.elapsed().as_secs_f64() / 60.0;
    let ok = runs.iter().all(|r| r.success >= 90.0 && r.env_steps <= 200_000);
    let rates: Vec<String> = runs.iter().map(|r| format!("{:.0}%", r.success)).collect();
    outcome(
        ok && mins < 30.0,
        format!("success {} after {} steps per seed, {mins:.1} min", rates.join("/"), runs[0].env_steps),
    )
}

/// A/B on one task: (conflict lower, domination closer to 50, overlap 30% lower).
fn ab_checks(task: &str, extra: &[&str], dair: &MethodEval, att: &MethodEval) -> (bool, bool, bool, String) {
    let conflict = dair.conflict < att.conflict;
    let domination = match (dair.domination, att.domination) {
        (Some(d), Some(a)) => (d - NEUTRAL_DOMINATION).abs() < (a - NEUTRAL_DOMINATION).abs(),
        _ => false,
    };
    let overlap = dair.overlap <= 0.7 * att.overlap;
    let detail = format!(
        "{task}{}: conflict {:.3} vs {:.3}, domination {} vs {} ({} / {} manipulating eps), overlap {:.4} vs {:.4}, success {:.1}% vs {:.1}%",
        if extra.is_empty() { String::new() } else { format!(" [{}]", extra.join(" ")) },
        dair.conflict,
        att.conflict,
        fmt_dom(dair.domination),
        fmt_dom(att.domination),
        dair.manipulating,
        att.manipulating,
        dair.overlap,
        att.overlap,
        dair.success,
        att.success,
    );
    (conflict, domination, overlap, detail)
}

fn curriculum() -> Outcome {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("dair");
    let cfg = config(
        "rearrange",
        CURRICULUM_STEPS,
        &[
            "method=\"dair\"".into(),
            format!("curriculum.stage_budgets=[{0}, {0}, {0}]", CURRICULUM_STEPS),
        ],
    );
    let trained = train_and_eval(&cfg, 0, Some(&out));
    let mut notes = vec![format!("M=3 success {:.0}%", trained.success)];
    let mut ok = true;
    let mut success4 = 0.0;
    for m in [4, 8] {
        match run_eval(&EvalRequest {
            checkpoint: out.join(FINAL_CHECKPOINT),
            overrides: vec![format!("env.objects={m}")],
            episodes: EVAL_EPISODES,
            seed: None,
            deterministic: true,
            dump: None,
        }) {
            Ok(r) => {
                notes.push(format!("M={m} success {:.0}%", r.summary.success_rate.mean));
                if m == 4 {
                    success4 = r.summary.success_rate.mean;
                }
            }
            Err(e) => {
                ok = false;
                notes.push(format!("M={m} error: {e}"));
            }
        }
    }
    let nonzero = success4 > 0.0;

    let mlp_out = d.path().join("mlp");
    let mlp = config("rearrange", 500, &["method=\"mlp\"".into(), "env.objects=3".into()]);
    train_seed(&mlp, 0, Some(&mlp_out), false).unwrap();
    let mut mlp_ok = true;
    for m in [1, 2, 4, 8] {
        let r = run_eval(&EvalRequest {
            checkpoint: mlp_out.join(FINAL_CHECKPOINT),
            overrides: vec![format!("env.objects={m}")],
            episodes: 1,
            seed: None,
            deterministic: true,
            dump: None,
        });
        mlp_ok &= matches!(r, Err(DairError::Incompatible(_)));
    }
    notes.push(format!("mlp rejects M in {{1,2,4,8}}: {mlp_ok}"));
    outcome(ok && nonzero && mlp_ok, notes.join(", "))
}

fn determinism() -> Outcome {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("cfg.toml");
    std::fs::write(
        &cfg,
        "task = \"push-door\"\nmethod = \"dair\"\n[network]\nembed_dim = 8\n[sac]\nbatch_size = 16\nrollout_workers = 1\n\
         [curriculum]\nstage_budgets = [2000]\ndesk_scale = 1.0\n[run]\nseeds = [5]\neval_episodes = 2\n",
    )
    .unwrap();
    let mut texts = Vec::new();
    for run in ["a", "b"] {
        let out = d.path().join(run);
        let o = Command::new(env!("CARGO_BIN_EXE_dair"))
            .args(["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
            .output()
            .unwrap();
        if !o.status.success() {
            return outcome(false, format!("train failed: {}", String::from_utf8_lossy(&o.stderr)));
        }
        texts.push(std::fs::read(out.join("seed_5").join(METRICS_FILE)).unwrap());
    }
    let rows = texts[0].iter().filter(|b| **b == b'\n').count();
    outcome(texts[0] == texts[1], format!("two `dair train` runs, {rows} metrics lines, byte-identical: {}", texts[0] == texts[1]))
}

fn main() -> ExitCode {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let want = |n: u32| only.as_ref().is_none_or(|o| o.contains(&n));
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |n: u32, name: &'static str, o: Outcome| {
        println!("ACCEPTANCE {n} {}: {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };

    if want(1) {
        report(1, "gradient suite", gradient_suite());
    }
    if want(2) {
        report(2, "simplex and overlap properties", simplex_properties());
    }
    if want(8) {
        report(8, "determinism", determinism());
    }
    if want(3) {
        report(3, "single-agent reach", reach());
    }

    let door_dair = (want(4) || want(7)).then(|| run_method("push-door", "dair", &[]));
    if want(4) {
        let box_extra = ["env.cover_latch=true"];
        let box_dair = run_method("push-door", "dair", &box_extra);
        let box_att = run_method("push-door", "attention", &box_extra);
        let door_att = run_method("push-door", "attention", &[]);
        let (bc, bd, bo, bdet) = ab_checks("box", &[], &box_dair, &box_att);
        let (dc, dd, dov, ddet) = ab_checks("door", &[], door_dair.as_ref().unwrap(), &door_att);
        let pass = bc && bd && bo && dc && dd && dov;
        let flags = format!(
            "box conflict/domination/overlap {bc}/{bd}/{bo}, door {dc}/{dd}/{dov}"
        );
        report(4, "dair vs attention on box and door", outcome(pass, format!("{flags}; {bdet}; {ddet}")));
    }
    if want(5) {
        let extra = ["env.collision_penalty=true"];
        let dair = run_method("push-door", "dair", &extra);
        let att = run_method("push-door", "attention", &extra);
        let (c, _, _, det) = ab_checks("door", &extra, &dair, &att);
        report(5, "collision penalty keeps conflict lower", outcome(c, det));
    }
    if want(7) {
        let mut rates: Vec<(f64, f64)> = vec![(0.05, door_dair.as_ref().unwrap().success)];
        for lambda in [0.02, 0.2] {
            let e = format!("dair.lambda={lambda}");
            rates.push((lambda, run_method("push-door", "dair", &[e.as_str()]).success));
        }
        rates.sort_by(|a, b| a.0.total_cmp(&b.0));
        let hi = rates.iter().map(|r| r.1).fold(f64::MIN, f64::max);
        let lo = rates.iter().map(|r| r.1).fold(f64::MAX, f64::min);
        let list: Vec<String> = rates.iter().map(|(l, s)| format!("{l}: {s:.1}%")).collect();
        report(
            7,
            "lambda robustness",
            outcome(hi - lo <= 15.0, format!("success {} (spread {:.1} pp)", list.join(", "), hi - lo)),
        );
    }
    if want(9) {
        let dair = run_method("adjust-bar", "dair", &[]);
        let att = run_method("adjust-bar", "attention", &[]);
        let pass = match (dair.domination, att.domination) {
            (Some(d), Some(a)) => d <= 60.0 && d < a,
            _ => false,
        };
        report(
            9,
            "bar domination",
            outcome(
                pass,
                format!(
                    "domination {} vs attention {} ({} / {} manipulating eps), success {:.1}% vs {:.1}%",
                    fmt_dom(dair.domination),
                    fmt_dom(att.domination),
                    dair.manipulating,
                    att.manipulating,
                    dair.success,
                    att.success
                ),
            ),
        );
    }
    if want(6) {
        report(6, "rearrangement curriculum generalization", curriculum());
    }

    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "ACCEPTANCE SUMMARY: {}/{} passed{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() { String::new() } else { format!(", failed {failed:?}") }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
