//! End-to-end acceptance checks. Runs without the libtest harness so that
//! every check prints exactly one PASS/FAIL line.

use std::collections::HashSet;
use std::f64::consts::{E, PI};
use std::panic::{self, AssertUnwindSafe};
use std::process::Command;
use std::thread;
use std::time::Instant;

use aircombat::dynamics::{AircraftType, ControlInput};
use aircombat::environment::{
    Combat, CombatConfig, Event, Team, GLOBAL_FEATURES, HIGH_OBS_DIM, LOW_OBS_DIM, OWN_FEATURES, REL_FEATURES,
};
use aircombat::evalcli::{self, BlueModel, EvalConfig, ModelKind};
use aircombat::geometry::{attitude_axis, Pose, Vec3};
use aircombat::hierarchy::{
    commander_step, fixed_policy, high_spec, low_spec, maneuver_option, option_maneuver, option_to_policy, run_option,
    OptionConfig, PolicyBank, Role, Termination, TOKEN_WIDTH,
};
use aircombat::netlib::{zeros_like, Action, ActorCritic, NetInput, Parameters, SampleMode};
use aircombat::optim::{gae, ppo_surrogate, ppo_surrogate_grad, spo_surrogate, spo_surrogate_grad, Schedule, SpoConfig};
use aircombat::rewards::{kill_reward, Maneuver, Rewards, StepSignals};
use aircombat::training::{
    gather, BlueActor, CurriculumConfig, FlatRollout, NetConfig, Pi0Config, Pi0Variant, RedPlan, RunConfig, Stage, Trainer,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn main() {
    let checks: [(usize, &str, Check); 10] = [
        (1, "reward ranges under fuzzing", reward_ranges),
        (2, "reward point values", reward_points),
        (3, "SPO/PPO surrogate analytics", surrogate_analytics),
        (4, "GAE against brute-force oracle", gae_oracle),
        (5, "network gradient check", gradient_check),
        (6, "WEZ kill frequency", wez_statistics),
        (7, "CLI training determinism", cli_determinism),
        (8, "smoke training gain", smoke_training),
        (9, "hierarchy contract", hierarchy_contract),
        (10, "evaluation harness", evaluation_harness),
    ];
    panic::set_hook(Box::new(|_| {}));
    let handles: Vec<_> = checks
        .iter()
        .map(|&(id, name, f)| {
            thread::spawn(move || {
                let start = Instant::now();
                let r = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
                    let msg = e
                        .downcast_ref::<String>()
                        .cloned()
                        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                        .unwrap_or_else(|| "panicked".into());
                    Err(format!("panic: {msg}"))
                });
                (id, name, r, start.elapsed().as_secs_f64())
            })
        })
        .collect();
    let mut failed = 0;
    for h in handles {
        let (id, name, r, secs) = h.join().expect("check thread");
        match r {
            Ok(detail) => println!("PASS criterion {id:>2} ({name}, {secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {id:>2} ({name}, {secs:.1}s): {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 10 acceptance criteria passed");
}

fn reward_ranges() -> Result<String, String> {
    const N: usize = 1_000_000;
    let r = Rewards::<f64>::default();
    let map = 50_000.0;
    // one decision step cannot move a pair more than a tenth of the map
    let max_step = 0.1 * map;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let families: [(Maneuver, f64, f64); 3] =
        [(Maneuver::Engage, -5.1, 0.05), (Maneuver::Attack, -5.1, 10.05), (Maneuver::Defend, -5.1, 0.1)];
    let mut report = Vec::new();
    for (m, lo, hi) in families {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for _ in 0..N {
            let posture = rng.random_bool(0.9).then(|| {
                (
                    rng.random_range(0.0..=PI),
                    rng.random_range(0.0..=PI),
                    rng.random_range(-PI..=PI),
                    rng.random_range(0.0..1.5 * map),
                )
            });
            let d_prev = rng.random_range(0.0..map * 2f64.sqrt());
            let d_next = (d_prev + rng.random_range(-max_step..=max_step)).max(0.0);
            let s = StepSignals {
                shot: rng.random_bool(0.5),
                event: rng.random_bool(0.3),
                kill_antenna_train: rng.random_bool(0.3).then(|| rng.random_range(0.0..=PI)),
                posture,
                distance_change: rng.random_bool(0.95).then_some((d_prev, d_next)),
                map_size: map,
            };
            let v = r.step_reward(m, &s);
            ensure(v.is_finite() && (lo..=hi).contains(&v), || format!("{m} reward {v} outside [{lo}, {hi}] for {s:?}"))?;
            min = min.min(v);
            max = max.max(v);
        }
        report.push(format!("{m} [{min:.4}, {max:.4}]"));
    }
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..N {
        let kill = rng.random_bool(0.5).then(|| rng.random_range(0.0..=PI));
        let v = r.commander_reward(rng.random_bool(0.5), kill);
        ensure((-5.0..=5.0).contains(&v), || format!("commander reward {v} outside [-5, 5]"))?;
        min = min.min(v);
        max = max.max(v);
    }
    report.push(format!("commander [{min:.4}, {max:.4}]"));
    Ok(format!("0 violations in 4x{N}; {}", report.join(", ")))
}

fn reward_points() -> Result<String, String> {
    let r = Rewards::<f64>::default();
    let ten = 10f64.to_radians();
    let b = r.posture_components(ten, ten, 0.0, 0.0);
    ensure((b.aspect - E.recip()).abs() <= 1e-12, || format!("b_a(10deg) = {}", b.aspect))?;
    ensure((b.antenna - E.recip()).abs() <= 1e-12, || format!("b_t(10deg) = {}", b.antenna))?;
    let front = kill_reward(0.0, 1.0, 10.0);
    let back = kill_reward(PI, 1.0, 10.0);
    ensure(front == 10.0, || format!("r_k(0) = {front}"))?;
    ensure(back == 1.0, || format!("r_k(180deg) = {back}"))?;
    Ok(format!("b_a = {:.15}, b_t = {:.15}, r_k(0) = {front}, r_k(180) = {back}", b.aspect, b.antenna))
}

fn surrogate_analytics() -> Result<String, String> {
    let eps = 0.25;
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for _ in 0..1_000 {
        let a: f64 = rng.random_range(-10.0..10.0);
        let (s, p) = (spo_surrogate(1.0, a, eps), ppo_surrogate(1.0, a, eps));
        ensure(s == p, || format!("r = 1, A = {a}: spo {s} != ppo {p}"))?;
    }
    let step = 1e-4;
    let mut worst = 0.0f64;
    for a in [-3.0, -0.4, 0.7, 2.5] {
        let expected = 1.0 + eps * f64::signum(a);
        let best = (0..=20_000)
            .map(|i| i as f64 * step)
            .min_by(|x, y| spo_surrogate(*x, a, eps).total_cmp(&spo_surrogate(*y, a, eps)))
            .expect("non-empty grid");
        ensure((best - expected).abs() <= step, || format!("A = {a}: optimum at {best}, expected {expected}"))?;
        worst = worst.max((best - expected).abs());
    }
    let mut clipped = 0;
    for _ in 0..1_000 {
        let a: f64 = rng.random_range(0.01..10.0);
        let (adv, ratio) = if rng.random_bool(0.5) {
            (a, rng.random_range(1.0 + eps + 1e-6..3.0))
        } else {
            (-a, rng.random_range(0.0..1.0 - eps - 1e-6))
        };
        let g_ppo = ppo_surrogate_grad(ratio, adv, eps);
        let g_spo = spo_surrogate_grad(ratio, adv, eps);
        ensure(g_ppo == 0.0, || format!("PPO gradient {g_ppo} at r = {ratio}, A = {adv}"))?;
        ensure(g_spo != 0.0, || format!("SPO gradient vanished at r = {ratio}, A = {adv}"))?;
        clipped += 1;
    }
    Ok(format!(
        "equal at r=1 (1000 draws), optimum within {worst:.1e} of 1±0.25, {clipped} clipped points: PPO grad 0, SPO grad nonzero"
    ))
}

/// Each advantage as an explicit finite sum of discounted TD errors.
fn brute_gae(r: &[f64], v: &[f64], d: &[bool], last: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = r.len();
    (0..n)
        .map(|t| {
            let mut total = 0.0;
            let mut weight = 1.0;
            for k in t..n {
                let next = if k + 1 < n { v[k + 1] } else { last };
                let live = if d[k] { 0.0 } else { 1.0 };
                total += weight * (r[k] + gamma * next * live - v[k]);
                if d[k] {
                    break;
                }
                weight *= gamma * lambda;
            }
            total
        })
        .collect()
}

fn gae_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    for case in 0..1_000 {
        let n = rng.random_range(1..=64);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let d: Vec<bool> = (0..n).map(|_| rng.random_bool(0.1)).collect();
        let last = rng.random_range(-5.0..5.0);
        let gamma = rng.random_range(0.0..=1.0);
        let lambda = rng.random_range(0.0..=1.0);
        let got = gae(&r, &v, &d, last, gamma, lambda).map_err(|e| e.to_string())?;
        let want = brute_gae(&r, &v, &d, last, gamma, lambda);
        for t in 0..n {
            let err = (got.advantages[t] - want[t]).abs();
            worst = worst.max(err);
            ensure(err <= 1e-10, || format!("case {case}, t = {t}: {} vs {}", got.advantages[t], want[t]))?;
            ensure(got.returns[t] == v[t] + got.advantages[t], || format!("case {case}: return target mismatch"))?;
        }
    }
    Ok(format!("1000 sequences, max |error| {worst:.2e}"))
}

fn random_actor_input(rng: &mut ChaCha8Rng, dim: usize) -> NetInput<f64> {
    let obs: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    NetInput::from_blocks(obs, OWN_FEATURES, REL_FEATURES, TOKEN_WIDTH)
}

fn random_critic_input(rng: &mut ChaCha8Rng) -> NetInput<f64> {
    let blocks: Vec<Vec<f64>> = (0..6).map(|_| (0..GLOBAL_FEATURES).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let q = rng.random_range(0..6);
    NetInput::with_query(blocks[q].clone(), blocks, q)
}

// touches every head output and both trunks
fn probe_loss(net: &ActorCritic<f64>, a: &NetInput<f64>, c: &NetInput<f64>, act: &Action<f64>) -> f64 {
    let (lp, h) = net.actor.log_prob_entropy(a, act).expect("actor forward");
    let v = net.critic.value(c).expect("critic forward");
    0.7 * lp - 0.3 * h + 0.5 * v * v
}

fn probe_grad(net: &ActorCritic<f64>, a: &NetInput<f64>, c: &NetInput<f64>, act: &Action<f64>) -> ActorCritic<f64> {
    let mut g = zeros_like(net);
    let fwd = net.actor.forward(a).expect("actor forward");
    net.actor.backward(a, &fwd, act, 0.7, -0.3, &mut g.actor);
    let (cache, v) = net.critic.forward(c).expect("critic forward");
    net.critic.backward(c, &cache, v, &mut g.critic);
    g
}

fn gradient_check() -> Result<String, String> {
    let h = 1e-5;
    let (mut coords, mut worst) = (0usize, 0.0f64);
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        for (spec, dim) in [(low_spec(12, -0.5), LOW_OBS_DIM), (high_spec(12), HIGH_OBS_DIM)] {
            let net = ActorCritic::new(spec, &mut rng);
            let a = random_actor_input(&mut rng, dim);
            let c = random_critic_input(&mut rng);
            let act = net.actor.sample(&a, &mut rng, SampleMode::Stochastic).map_err(|e| e.to_string())?.action;
            let grad = probe_grad(&net, &a, &c, &act);
            for ti in 0..net.tensors().len() {
                let len = net.tensors()[ti].len();
                let mut picked = HashSet::new();
                while picked.len() < len.min(10) {
                    picked.insert(rng.random_range(0..len));
                }
                for idx in picked {
                    let mut plus = net.clone();
                    plus.tensors_mut()[ti].data[idx] += h;
                    let mut minus = net.clone();
                    minus.tensors_mut()[ti].data[idx] -= h;
                    let fd = (probe_loss(&plus, &a, &c, &act) - probe_loss(&minus, &a, &c, &act)) / (2.0 * h);
                    let an = grad.tensors()[ti].data[idx];
                    let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
                    worst = worst.max(rel);
                    coords += 1;
                    ensure(rel < 1e-4, || format!("seed {seed}, tensor {ti}[{idx}]: analytic {an} vs numeric {fd}"))?;
                }
            }
        }
    }
    Ok(format!("{coords} coordinates over 20 seeds x 2 heads, max relative error {worst:.2e}"))
}

fn level(x: f64, y: f64, heading: f64, speed: f64) -> Pose<f64> {
    Pose { position: Vec3::new(x, y, 5_000.0), velocity: attitude_axis(heading, 0.0) * speed, roll: 0.0, pitch: 0.0, heading }
}

fn wez_statistics() -> Result<String, String> {
    let combat = Combat::new(CombatConfig::versus(1, 1)).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut start = combat.reset(&mut rng);
    for a in &mut start.aircraft {
        a.params = combat.config.f16;
    }
    start.aircraft[0].pose = level(25_000.0, 20_000.0, 0.0, 250.0);
    start.aircraft[1].pose = level(25_000.0, 21_000.0, 0.0, 250.0);
    let trim = combat.config.f16.trim_throttle(250.0);
    let fire = ControlInput { shoot: true, ..ControlInput::neutral(trim) };
    let actions = [Some(fire), Some(ControlInput::neutral(trim))];
    let trials = 100_000;
    let mut kills = 0usize;
    for _ in 0..trials {
        let mut s = start.clone();
        let events = combat.step(&mut s, &actions, &mut rng).map_err(|e| e.to_string())?;
        ensure(combat.config.wez().contains(&s.aircraft[0].pose, &s.aircraft[1].pose), || "target left the WEZ".into())?;
        kills += events.iter().filter(|e| matches!(e, Event::Kill { shooter: 0, victim: 1, .. })).count();
    }
    let freq = kills as f64 / trials as f64;
    ensure((freq - 0.8).abs() <= 0.01, || format!("kill frequency {freq}"))?;
    Ok(format!("{kills}/{trials} = {freq:.4}"))
}

const TINY_CONFIG: &str = r#"
[env]
horizon = 80

[net]
hidden = 16

[spo]
batch_low = 200
minibatch = 64
epochs = 2

[curriculum]
maneuvers = ["engage", "attack"]
"#;

fn cli_determinism() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, TINY_CONFIG).map_err(|e| e.to_string())?;
    let run = |name: &str| -> Result<Vec<u8>, String> {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_aircombat"))
            .args(["--seed", "9", "--workers", "1", "--out"])
            .arg(&out)
            .args(["train", "--stage", "L1", "--iterations", "10", "--config"])
            .arg(&cfg)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), || String::from_utf8_lossy(&status.stderr).into_owned())?;
        ensure(out.join("checkpoint.bin").exists(), || "no checkpoint written".into())?;
        std::fs::read(out.join("metrics.jsonl")).map_err(|e| e.to_string())
    };
    let a = run("a")?;
    let b = run("b")?;
    let iterations: HashSet<u64> = String::from_utf8_lossy(&a)
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).ok().and_then(|v| v["iteration"].as_u64()).unwrap_or(u64::MAX))
        .collect();
    ensure(iterations == (0..10).collect(), || format!("iterations logged: {iterations:?}"))?;
    ensure(a == b, || "metrics files differ".into())?;
    Ok(format!("two runs, 10 iterations, {} identical bytes", a.len()))
}

fn smoke_config() -> RunConfig {
    let curriculum = CurriculumConfig { maneuvers: vec![Maneuver::Engage], ..CurriculumConfig::default() };
    RunConfig { seed: 11, workers: 4, net: NetConfig { hidden: 64, ..NetConfig::default() }, curriculum, ..RunConfig::default() }
}

/// Mean of the first and last tenth of a per-batch series.
fn ends(series: &[f64]) -> (f64, f64) {
    let k = (series.len() / 10).max(1);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    (mean(&series[..k]), mean(&series[series.len() - k..]))
}

fn smoke_training() -> Result<String, String> {
    const ITERATIONS: usize = 50;
    let cfg = smoke_config();
    let batch = cfg.spo.batch_low;

    // random policy: the initial networks, never updated
    let baseline = Trainer::new(cfg.clone()).map_err(|e| e.to_string())?;
    let combat = Combat::new(cfg.env.clone()).map_err(|e| e.to_string())?;
    let rewards = Rewards::new(&cfg.rewards);
    let pi0 = Pi0Config::default();
    let nets = [
        baseline.bank.low(AircraftType::F16, Maneuver::Engage).net(),
        baseline.bank.low(AircraftType::A4, Maneuver::Engage).net(),
    ];
    let mut random = Vec::with_capacity(ITERATIONS);
    for it in 0..ITERATIONS as u64 {
        let rollout = FlatRollout {
            combat: &combat,
            rewards: &rewards,
            blue: BlueActor::Maneuver { nets, maneuver: Maneuver::Engage },
            red: RedPlan::Scripted(Pi0Variant::RandomWaypoints, &pi0),
            gamma: cfg.spo.gamma,
            seed: [cfg.seed, it, 99],
        };
        let b = gather(batch, cfg.workers, |i, cap| rollout.episode(i, cap)).map_err(|e| e.to_string())?;
        random.push(b.mean_reward());
    }

    let mut trainer = Trainer::new(cfg).map_err(|e| e.to_string())?;
    let mut trained = Vec::with_capacity(ITERATIONS);
    for _ in 0..ITERATIONS {
        let recs = trainer.iterate(Some(Stage::L1)).map_err(|e| e.to_string())?;
        let n: usize = recs.iter().map(|r| r.update.samples).sum();
        ensure(n == batch, || format!("iteration used {n} samples"))?;
        trained.push(recs.iter().map(|r| r.update.mean_step_reward * r.update.samples as f64).sum::<f64>() / n as f64);
    }
    let (t0, t1) = ends(&trained);
    let (r0, r1) = ends(&random);
    let (gain, drift) = (t1 - t0, r1 - r0);
    let detail = format!(
        "{} samples: trained {t0:.5} -> {t1:.5} (gain {gain:+.5}), random {r0:.5} -> {r1:.5} (change {drift:+.5})",
        ITERATIONS * batch
    );
    ensure(gain >= 0.01 && drift < 0.01, || detail.clone())?;
    Ok(detail)
}

fn hierarchy_contract() -> Result<String, String> {
    let mut seen = HashSet::new();
    for ty in AircraftType::ALL {
        for o in 0..3 {
            let h = option_to_policy(o, ty).map_err(|e| e.to_string())?;
            ensure(h.aircraft == ty && maneuver_option(h.maneuver) == o, || format!("option {o} for {ty} maps to {h:?}"))?;
            ensure(option_maneuver(o).ok() == Some(h.maneuver), || "maneuver lookup disagrees".into())?;
            seen.insert(h);
        }
    }
    ensure(seen.len() == 6, || "option mapping is not injective".into())?;
    ensure(option_to_policy(3, AircraftType::F16).is_err(), || "option 3 accepted".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let banks: Vec<PolicyBank> = (0..8).map(|_| PolicyBank::new(8, rng.random_range(-2.0..0.5), &mut rng)).collect();
    let rewards = Rewards::<f64>::default();
    let (mut epochs, mut by_cause) = (0usize, std::collections::BTreeMap::<String, usize>::new());
    for ep in 0..1_000 {
        let env = CombatConfig {
            horizon: rng.random_range(10..300),
            spawn_depth: Some(rng.random_range(500.0..6_000.0)),
            ..CombatConfig::versus(3, 3)
        };
        let combat = Combat::new(env).map_err(|e| e.to_string())?;
        let blue = &banks[rng.random_range(0..banks.len())];
        let red = &banks[rng.random_range(0..banks.len())];
        let ocfg = OptionConfig {
            low_mode: if rng.random_bool(0.5) { SampleMode::Stochastic } else { SampleMode::Deterministic },
            ..OptionConfig::default()
        };
        let mut state = combat.reset(&mut rng);
        while !state.is_terminal() {
            let mut options = vec![None; state.aircraft.len()];
            for (bank, team) in [(blue, Team::Blue), (red, Team::Red)] {
                for d in
                    commander_step(bank, &combat, &state, team, SampleMode::Stochastic, &mut rng).map_err(|e| e.to_string())?
                {
                    options[d.agent] = Some(d.option);
                }
            }
            let alive_before = state.alive_ids().count();
            let out =
                run_option(&combat, &mut state, &options, [blue, red], &rewards, &ocfg, &mut rng).map_err(|e| e.to_string())?;
            ensure(out.records.len() == alive_before, || {
                format!("episode {ep}: {} records for {alive_before} agents", out.records.len())
            })?;
            for rec in &out.records {
                ensure((1..=15).contains(&rec.duration), || format!("episode {ep}: duration {}", rec.duration))?;
                ensure(rec.duration == out.steps, || {
                    format!("episode {ep}: duration {} in a {}-step epoch", rec.duration, out.steps)
                })?;
                ensure(rec.cause != Termination::DurationExpired || rec.duration == 15, || "early expiry".into())?;
                *by_cause.entry(format!("{:?}", rec.cause)).or_default() += 1;
            }
            epochs += 1;
        }
    }

    let cfg = RunConfig {
        env: CombatConfig { horizon: 60, ..CombatConfig::versus(3, 3) },
        net: NetConfig { hidden: 8, ..NetConfig::default() },
        spo: SpoConfig {
            batch_high: 40,
            minibatch: 16,
            epochs: 2,
            learning_rate: Schedule::constant(1e-3),
            ..SpoConfig::default()
        },
        ..RunConfig::default()
    };
    let mut trainer = Trainer::new(cfg).map_err(|e| e.to_string())?;
    let low = trainer.bank.low_checksum();
    let commanders: Vec<u64> = AircraftType::ALL.iter().map(|&t| trainer.bank.commander(t).learner.checksum()).collect();
    for _ in 0..5 {
        trainer.iterate(Some(Stage::Commander)).map_err(|e| e.to_string())?;
        ensure(trainer.bank.low_checksum() == low, || "low-level parameters changed during commander training".into())?;
    }
    let after: Vec<u64> = AircraftType::ALL.iter().map(|&t| trainer.bank.commander(t).learner.checksum()).collect();
    ensure(after.iter().zip(&commanders).all(|(a, b)| a != b), || "commanders did not train".into())?;
    Ok(format!("{epochs} epochs, all tau in [1, 15], causes {by_cause:?}; 5 commander iterations kept low-level checksum; 2x3 mapping bijective"))
}

/// Circles without firing; commanders pick the argmax of `logits`.
fn loiter_bank(logits: [f64; 3]) -> PolicyBank {
    PolicyBank::from_fn(|role, _| match role {
        Role::Commander => fixed_policy(high_spec(4), [0.0; 4], -100.0, logits),
        _ => fixed_policy(low_spec(4, -5.0), [0.0, 0.0, 15.0, 0.0], -100.0, logits),
    })
}

/// Noses over into the ground.
fn dive_bank() -> PolicyBank {
    PolicyBank::from_fn(|role, _| match role {
        Role::Commander => fixed_policy(high_spec(4), [0.0; 4], -100.0, [0.0; 3]),
        _ => fixed_policy(low_spec(4, -5.0), [0.0, -15.0, 0.0, 15.0], -100.0, [0.0; 3]),
    })
}

fn evaluation_harness() -> Result<String, String> {
    let base = CombatConfig { horizon: 100, ..CombatConfig::default() };
    let cfg = EvalConfig {
        episodes: 40,
        seed: 7,
        workers: 4,
        low_mode: SampleMode::Deterministic,
        ..EvalConfig::new(&base, "3v3".parse().map_err(|e: evalcli::EvalError| e.to_string())?)
    };
    let blue = loiter_bank([-100.0, -100.0, 100.0]);
    let model = BlueModel::Hierarchical { bank: &blue, kind: ModelKind::MaSpo };
    let mut export = Vec::new();
    let win = evalcli::evaluate_into(model, &dive_bank(), &cfg, Some(&mut export)).map_err(|e| e.to_string())?;
    ensure((win.win_pct, win.draw_pct, win.loss_pct) == (100.0, 0.0, 0.0), || format!("rigged win gave {win:?}"))?;
    let f = win.frequencies.ok_or("no option frequencies")?;
    ensure((f.attack, f.engage, f.defend) == (1.0, 0.0, 0.0), || format!("forced attack gave {f:?}"))?;
    let again = evalcli::retabulate(export.as_slice()).map_err(|e| e.to_string())?;
    ensure(again == win, || format!("re-tabulated {again:?} != {win:?}"))?;

    let draw = evalcli::evaluate(model, &blue, &cfg).map_err(|e| e.to_string())?;
    ensure(draw.draw_pct == 100.0, || format!("never-meet stubs gave {draw:?}"))?;

    let mixed = loiter_bank([0.2, -0.1, 0.0]);
    let mut export = Vec::new();
    let m = evalcli::evaluate_into(
        BlueModel::Hierarchical { bank: &mixed, kind: ModelKind::MaSpo },
        &dive_bank(),
        &cfg,
        Some(&mut export),
    )
    .map_err(|e| e.to_string())?;
    let again = evalcli::retabulate(export.as_slice()).map_err(|e| e.to_string())?;
    ensure(again == m, || "re-tabulation of a mixed-option run differs".into())?;
    Ok(format!(
        "win/draw/loss {}/{}/{}, forced pi_a {:.0}%, never-meet draw {:.0}%, re-tabulation exact ({} export bytes)",
        win.win_pct,
        win.draw_pct,
        win.loss_pct,
        100.0 * f.attack,
        draw.draw_pct,
        export.len()
    ))
}
