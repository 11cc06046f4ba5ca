use super::*;
use crate::env::{Env, EnvConfig, Task, P2};
use crate::nn::{EntityKind, EntityState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn tiny_cfg() -> SacConfig {
    SacConfig {
        batch_size: 8,
        buffer_capacity: 1000,
        lr: 1e-3,
        ..SacConfig::default()
    }
}

fn trainer(dair: DairConfig, n_agents: usize, seed: u64) -> TrainerState {
    TrainerState::new(tiny_cfg(), dair, Architecture::Attention, 16, n_agents, 2, &mut rng(seed)).unwrap()
}

/// Random transitions from a two-object rearrangement world.
fn random_transitions(n: usize, n_agents: usize, seed: u64) -> Vec<Transition> {
    let mut c = EnvConfig::new(Task::Rearrange);
    c.objects = 2;
    c.agents = n_agents;
    let env = Env::new(c).unwrap();
    let mut r = rng(seed);
    let mut out = Vec::new();
    let mut s = env.reset(&mut r).unwrap();
    for i in 0..n {
        let acts: Vec<P2> = (0..n_agents).map(|_| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]).collect();
        let o = env.step(&s, &acts).unwrap();
        out.push(Transition {
            obs: env.observe(&s),
            actions: acts.iter().map(|a| a.to_vec()).collect(),
            reward: if i % 3 == 0 { 1.0 } else { 0.0 },
            extra_reward: 0.0,
            next_obs: env.observe(&o.state),
            achieved_goals: env.achieved_goals(&o.state),
            desired_goals: o.state.goals.clone(),
            done: i % 5 == 0,
        });
        s = o.state;
    }
    out
}

fn batch_of(ts: &[Transition]) -> Batch {
    let refs: Vec<&Transition> = ts.iter().collect();
    Batch::from_transitions(&refs).unwrap()
}

fn reach_env() -> Env {
    let mut c = EnvConfig::new(Task::Reach);
    c.agents = 1;
    Env::new(c).unwrap()
}

/// Ten-step reach episode whose achieved goal at step `t` is `(0.01 t, 0)`.
fn ten_step_episode() -> Vec<Transition> {
    (0..10)
        .map(|t| {
            let ag = [0.01 * t as f64, 0.0];
            let obs = vec![
                EntityState::agent(vec![0.0; 4]),
                EntityState::region(vec![0.0, 0.0, 0.0, 0.0, 0.6, 0.6]),
            ];
            Transition {
                obs: obs.clone(),
                actions: vec![vec![0.1, 0.2]],
                reward: 0.0,
                extra_reward: 0.0,
                next_obs: obs,
                achieved_goals: vec![ag],
                desired_goals: vec![[0.3, 0.3]],
                done: false,
            }
        })
        .collect()
}

#[test]
fn her_size_and_last_step() {
    let env = reach_env();
    let ep = ten_step_episode();
    let out = her_relabel(&env, &ep, 4, &mut rng(0));
    assert!(out.len() <= 5 * ep.len());
    // Steps 0..=8 get 4 copies each, step 9 none.
    assert_eq!(out.len(), 10 + 9 * 4);
    assert_eq!(out.last().unwrap(), ep.last().unwrap());
}

#[test]
fn her_only_changes_goals_reward_and_terminal() {
    let env = reach_env();
    let ep = ten_step_episode();
    let out = her_relabel(&env, &ep, 4, &mut rng(1));
    let mut i = 0;
    for (t, orig) in ep.iter().enumerate() {
        assert_eq!(&out[i], orig);
        let copies = if t == 9 { 0 } else { 4 };
        for c in &out[i + 1..i + 1 + copies] {
            assert_eq!(c.actions, orig.actions);
            assert_eq!(c.achieved_goals, orig.achieved_goals);
            assert_eq!(c.extra_reward, orig.extra_reward);
            for (a, b) in c.obs.iter().zip(&orig.obs) {
                assert_eq!(a.features[..4], b.features[..4]);
            }
            for (a, b) in c.next_obs.iter().zip(&orig.next_obs) {
                assert_eq!(a.features[..4], b.features[..4]);
            }
            let g = c.desired_goals[0];
            let region = c.obs.iter().find(|e| e.kind == EntityKind::Region).unwrap();
            assert_eq!(region.features[4..6], [2.0 * g[0], 2.0 * g[1]]);
        }
        i += 1 + copies;
    }
}

#[test]
fn relabel_to_own_achieved_goal_pays_success() {
    let env = reach_env();
    let ep = ten_step_episode();
    let tr = relabel_one(&env, &ep[3], &ep[3].achieved_goals, &[false]);
    assert_eq!(tr.reward, 1.0);
    assert!(tr.done);
    let far = relabel_one(&env, &ep[3], &ep[9].achieved_goals, &[false]);
    assert_eq!(far.reward, 0.0);
}

#[test]
fn her_future_indices_are_uniform() {
    // Pearson chi-square per source step against the p = 0.01 critical
    // value for (candidates - 1) degrees of freedom.
    const CRIT: [f64; 9] = [0.0, 6.635, 9.210, 11.345, 13.277, 15.086, 16.812, 18.475, 20.090];
    let env = reach_env();
    let ep = ten_step_episode();
    let mut counts = vec![vec![0usize; 10]; 10];
    let mut r = rng(7);
    let mut total = 0;
    while total < 10_000 {
        let out = her_relabel(&env, &ep, 4, &mut r);
        let mut i = 0;
        for t in 0..10 {
            let copies = if t == 9 { 0 } else { 4 };
            for c in &out[i + 1..i + 1 + copies] {
                let f = (c.desired_goals[0][0] / 0.01).round() as usize;
                assert!(f > t && f < 10, "future index {f} for step {t}");
                counts[t][f] += 1;
                total += 1;
            }
            i += 1 + copies;
        }
    }
    for t in 0..8 {
        let k = 9 - t;
        let n: usize = counts[t].iter().sum();
        let expected = n as f64 / k as f64;
        let chi2: f64 = counts[t][t + 1..].iter().map(|c| (*c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < CRIT[k - 1], "step {t}: chi2 {chi2} over {k} bins");
    }
    assert_eq!(counts[8][9], counts[8].iter().sum::<usize>());
}

#[test]
fn informative_relabel_respects_latches() {
    let mut c = EnvConfig::new(Task::Reach);
    c.agents = 1;
    c.reward_mode = crate::env::RewardMode::Informative;
    let env = Env::new(c).unwrap();
    let ep = ten_step_episode();
    let goal = ep[2].achieved_goals.clone();
    // Goal (0.02, 0) is within the success radius of steps 0..=7.
    let fresh = relabel_one(&env, &ep[0], &goal, &[false]);
    assert_eq!(fresh.reward, 1.0);
    let paid = relabel_one(&env, &ep[1], &goal, &[true]);
    assert_eq!(paid.reward, 0.0);
}

#[test]
fn buffer_evicts_whole_episodes() {
    let ep = ten_step_episode();
    let mut b = ReplayBuffer::new(25);
    b.push_episode(ep.clone());
    b.push_episode(ep.clone());
    assert_eq!(b.len(), 20);
    b.push_episode(ep[..7].to_vec());
    assert_eq!(b.len(), 17);
    assert_eq!(b.episodes(), 2);
    assert!(b.sample(18, &mut rng(0)).is_none());
    assert_eq!(b.sample(17, &mut rng(0)).unwrap().len(), 17);
    b.clear();
    assert!(b.is_empty() && b.sample(1, &mut rng(0)).is_none());
}

#[test]
fn terminal_target_is_reward() {
    let st = trainer(DairConfig::default(), 2, 0);
    let mut ts = random_transitions(4, 2, 1);
    for t in &mut ts {
        t.reward = 1.0;
        t.done = true;
    }
    let b = batch_of(&ts);
    let noise = vec![vec![0.3; 8]; 2];
    for per_agent in st.critic_targets(&b, &noise).unwrap() {
        assert!(per_agent.iter().all(|v| *v == 1.0));
    }
}

#[test]
fn nonterminal_target_matches_recomputation() {
    let st = trainer(DairConfig::default(), 2, 3);
    let mut ts = random_transitions(5, 2, 4);
    for t in &mut ts {
        t.reward = 0.0;
        t.done = false;
    }
    let b = batch_of(&ts);
    let mut r = rng(5);
    let noise: Vec<Vec<f64>> = (0..2).map(|_| crate::nn::draw_noise(&mut r, 10)).collect();
    let targets = st.critic_targets(&b, &noise).unwrap();
    for (i, ag) in st.agents.iter().enumerate() {
        for row in 0..5 {
            // Independent single-row recomputation.
            let one = batch_of(&ts[row..row + 1]);
            let eps = &noise[i][2 * row..2 * row + 2];
            let mut t = Tape::new();
            let pp = ag.policy.bind(&mut t, false);
            let (mean, log_std, _) = ag.policy.forward_policy(&mut t, &pp, &one.next_obs, i).unwrap();
            let (m, ls) = (t.value(mean).to_vec(), t.value(log_std).to_vec());
            let u: Vec<f64> = (0..2).map(|k| m[k] + ls[k].exp() * eps[k]).collect();
            let a: Vec<f64> = u.iter().map(|x| x.tanh()).collect();
            let logp: f64 = (0..2)
                .map(|k| {
                    -0.5 * eps[k] * eps[k] - ls[k] - 0.5 * (2.0 * std::f64::consts::PI).ln() - (1.0 - a[k] * a[k]).ln()
                })
                .sum();
            let av = t.constant(1, 2, a.clone());
            let qs: Vec<f64> = ag
                .q_target
                .iter()
                .map(|q| {
                    let qp = q.bind(&mut t, false);
                    let (v, _) = q.forward_q(&mut t, &qp, &one.next_obs, i, av).unwrap();
                    t.scalar(v)
                })
                .collect();
            let qmin = qs[0].min(qs[1]);
            let expected = 0.98 * (qmin - ag.tau() * logp);
            assert!((targets[i][row] - expected).abs() < 1e-9, "{} vs {expected}", targets[i][row]);
        }
    }
}

#[test]
fn entropy_flag_drops_log_prob_term() {
    let mut st = trainer(DairConfig::default(), 2, 3);
    st.cfg.entropy_in_target = false;
    let ts = random_transitions(3, 2, 4);
    let b = batch_of(&ts);
    let noise = vec![vec![0.0; 6]; 2];
    let with_flag = st.critic_targets(&b, &noise).unwrap();
    st.cfg.entropy_in_target = true;
    let normal = st.critic_targets(&b, &noise).unwrap();
    assert_ne!(with_flag, normal);
}

#[test]
fn temperature_stays_positive_and_targets_lag() {
    let mut st = trainer(DairConfig::default(), 2, 8);
    let ts = random_transitions(16, 2, 9);
    let b = batch_of(&ts);
    let mut r = rng(10);
    for _ in 0..20 {
        st.update(&b, &mut r).unwrap();
        assert!(st.taus().iter().all(|t| *t > 0.0));
    }
    // Frozen online critics: the gap to the targets shrinks every update.
    let ag = &mut st.agents[0];
    let mut prev = ag.q_target[0].params().max_abs_diff(ag.q[0].params());
    assert!(prev > 0.0);
    for _ in 0..5 {
        let src = ag.q[0].params().clone();
        ag.q_target[0].params_mut().polyak_from(&src, 0.995);
        let now = ag.q_target[0].params().max_abs_diff(ag.q[0].params());
        assert!(now < prev);
        prev = now;
    }
}

#[test]
fn zero_lambda_matches_attention_baseline_bitwise() {
    let off_flags = DairConfig {
        apply_to_policy: false,
        apply_to_q: false,
        ..DairConfig::default()
    };
    let mut a = trainer(DairConfig::disabled(), 2, 11);
    let mut b = trainer(off_flags, 2, 11);
    let mut c = trainer(DairConfig::default(), 2, 11);
    let ts = random_transitions(16, 2, 12);
    let batch = batch_of(&ts);
    let (mut ra, mut rb, mut rc) = (rng(13), rng(13), rng(13));
    for _ in 0..5 {
        a.update(&batch, &mut ra).unwrap();
        b.update(&batch, &mut rb).unwrap();
        c.update(&batch, &mut rc).unwrap();
    }
    for (x, y) in a.agents.iter().zip(&b.agents) {
        assert_eq!(x.policy.params().flat(), y.policy.params().flat());
        assert_eq!(x.q[0].params().flat(), y.q[0].params().flat());
        assert_eq!(x.log_tau, y.log_tau);
    }
    assert_ne!(a.agents[0].policy.params().flat(), c.agents[0].policy.params().flat());
}

#[test]
fn single_agent_actor_loss_is_plain_sac() {
    let st = trainer(DairConfig::default(), 1, 14);
    let mut c = EnvConfig::new(Task::Reach);
    c.agents = 1;
    let env = Env::new(c).unwrap();
    let mut r = rng(15);
    let s = env.reset(&mut r).unwrap();
    let obs = env.observe(&s);
    // Two-region network fed a one-region state is still valid for attention.
    let tr = Transition {
        obs: obs.clone(),
        actions: vec![vec![0.0, 0.0]],
        reward: 0.0,
        extra_reward: 0.0,
        next_obs: obs,
        achieved_goals: vec![],
        desired_goals: vec![],
        done: false,
    };
    let b = batch_of(&[tr]);
    let noise = vec![vec![0.4, -0.7]];
    let mut t = Tape::new();
    let pb: Vec<_> = st.agents.iter().map(|a| a.policy.bind(&mut t, true)).collect();
    let qb: Vec<Vec<_>> = st.agents.iter().map(|a| a.q.iter().map(|q| q.bind(&mut t, false)).collect()).collect();
    let g = st.actor_graph(&mut t, &pb, &qb, &b, &noise).unwrap();
    assert!(g.overlap.is_none());
    assert_eq!(t.scalar(g.loss), t.scalar(g.sac_loss));
    // Recompute tau * log pi - min Q from separate forwards.
    let ag = &st.agents[0];
    let logp = t.scalar(g.log_probs[0]);
    let mut t2 = Tape::new();
    let pp = ag.policy.bind(&mut t2, false);
    let (m, ls, _) = ag.policy.forward_policy(&mut t2, &pp, &b.obs, 0).unwrap();
    let (a, _) = sample_with_noise(&mut t2, m, ls, &noise[0]).unwrap();
    let qmin = ag
        .q
        .iter()
        .map(|q| {
            let qp = q.bind(&mut t2, false);
            let (v, _) = q.forward_q(&mut t2, &qp, &b.obs, 0, a).unwrap();
            t2.scalar(v)
        })
        .fold(f64::INFINITY, f64::min);
    assert!((t.scalar(g.loss) - (ag.tau() * logp - qmin)).abs() < 1e-12);
}

#[test]
fn bandit_actor_gradient_matches_reference() {
    // One-dimensional bandit with Q(a) = -(a - 0.5)^2 and a free Gaussian
    // head (mu, log sigma). The reference gradient of
    // mean[tau log pi(a) - Q(a)], a = tanh(mu + sigma eps), is derived by hand.
    let tau = 0.2;
    let (mu, log_sigma) = (0.3, -0.4);
    let eps = [0.5, -1.2, 0.1, 2.0];
    let sigma = f64::exp(log_sigma);
    let n = eps.len() as f64;
    let (mut g_mu, mut g_ls, mut loss) = (0.0, 0.0, 0.0);
    for e in eps {
        let a = (mu + sigma * e).tanh();
        let logp = -0.5 * e * e - log_sigma - 0.5 * (2.0 * std::f64::consts::PI).ln() - (1.0 - a * a).ln();
        loss += (tau * logp + (a - 0.5).powi(2)) / n;
        let dq = 2.0 * (a - 0.5) * (1.0 - a * a);
        g_mu += (tau * 2.0 * a + dq) / n;
        g_ls += (tau * (-1.0 + 2.0 * a * sigma * e) + dq * sigma * e) / n;
    }
    let mut t = Tape::new();
    let m = t.leaf(1, 1, vec![mu]);
    let ls = t.leaf(1, 1, vec![log_sigma]);
    let ones = t.constant(4, 1, vec![1.0; 4]);
    let mb = t.mul_scalar_var(ones, m).unwrap();
    let lsb = t.mul_scalar_var(ones, ls).unwrap();
    let (a, logp) = sample_with_noise(&mut t, mb, lsb, &eps).unwrap();
    let shifted = t.add_scalar(a, -0.5);
    let q = t.square(shifted);
    let ent = t.scale(logp, tau);
    let per = t.add(ent, q).unwrap();
    let l = t.mean(per).unwrap();
    assert!((t.scalar(l) - loss).abs() < 1e-12);
    let grads = t.backward(l).unwrap();
    assert!((grads.get(m).unwrap()[0] - g_mu).abs() < 1e-12);
    assert!((grads.get(ls).unwrap()[0] - g_ls).abs() < 1e-12);
}

#[test]
fn temperature_gradient_sign() {
    // Entropy below target (log pi high) must push log tau up.
    let mut t = Tape::new();
    let v = t.leaf(1, 1, vec![0.0]);
    let l = TrainerState::temperature_graph(&mut t, v, &[3.0, 4.0], -2.0).unwrap();
    let g = t.backward(l).unwrap();
    assert!(g.get(v).unwrap()[0] < 0.0);
    assert!((t.scalar(l) + 1.5).abs() < 1e-12);
}

#[test]
fn underfull_buffer_skips_update() {
    let b = ReplayBuffer::new(100);
    assert!(b.sample(8, &mut rng(0)).is_none());
}

#[test]
fn curriculum_reuses_parameters() {
    // A network trained at M = 1 runs unchanged at M = 2 and M = 8.
    let st = trainer(DairConfig::default(), 2, 20);
    let before = st.agents[0].policy.params().numel();
    for m in [1, 2, 8] {
        let mut c = EnvConfig::new(Task::Rearrange);
        c.objects = m;
        let env = Env::new(c).unwrap();
        let s = env.reset(&mut rng(m as u64)).unwrap();
        let (acts, alpha) = crate::rollout::act(&st.policies(), &env.observe(&s), crate::rollout::ActionMode::Mean, &mut rng(0)).unwrap();
        assert_eq!(acts.len(), 2);
        assert_eq!(alpha.unwrap()[0].len(), 2 + m);
    }
    assert_eq!(st.agents[0].policy.params().numel(), before);
}
