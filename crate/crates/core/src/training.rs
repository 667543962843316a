//! Curriculum training: scripted opponents (L1, L2), self-play (L3),
//! league play (L4) and commander training against mixed strategies, plus
//! run configuration and checkpoints.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{AircraftType, ControlInput};
use crate::environment::{Combat, CombatConfig, EnvError, SimState, Team};
use crate::geometry::Vec3;
use crate::hierarchy::{
    commander_step, control_from_action, critic_input, fc_input, fc_spec, low_input, maneuver_option, run_option, smdp_discount,
    HierarchyError, OptionConfig, PolicyBank, PolicySlot, Role,
};
use crate::netlib::{Action, ActorCritic, NetError, SampleMode};
use crate::num::wrap_angle;
use crate::optim::{ma_spo_update, spo_update, Learner, OptimError, RolloutBatch, Sample, SpoConfig, Trajectory, UpdateMetrics};
use crate::rewards::{Maneuver, RewardConstants, Rewards};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("empty opponent pool")]
    EmptyPool,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    L1,
    L2,
    L3,
    L4,
    Commander,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::L1, Stage::L2, Stage::L3, Stage::L4, Stage::Commander];

    pub fn next(self) -> Option<Stage> {
        match self {
            Stage::L1 => Some(Stage::L2),
            Stage::L2 => Some(Stage::L3),
            Stage::L3 => Some(Stage::L4),
            Stage::L4 => Some(Stage::Commander),
            Stage::Commander => None,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::L1 => "L1",
            Stage::L2 => "L2",
            Stage::L3 => "L3",
            Stage::L4 => "L4",
            Stage::Commander => "commander",
        })
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Stage::L1),
            "l2" => Ok(Stage::L2),
            "l3" => Ok(Stage::L3),
            "l4" => Ok(Stage::L4),
            "commander" | "c" => Ok(Stage::Commander),
            _ => Err(format!("unknown stage `{s}` (expected L1, L2, L3, L4 or commander)")),
        }
    }
}

/// Probabilities of flying the attack, engage and defend policies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixedStrategy {
    pub attack: f64,
    pub engage: f64,
    pub defend: f64,
}

impl MixedStrategy {
    /// Opponent mix while training commanders.
    pub const TRAINING: MixedStrategy = MixedStrategy { attack: 0.4, engage: 0.4, defend: 0.2 };
    /// More aggressive evaluation mix.
    pub const AGGRESSIVE: MixedStrategy = MixedStrategy { attack: 0.7, engage: 0.2, defend: 0.1 };

    pub fn new(attack: f64, engage: f64, defend: f64) -> Result<Self, String> {
        let m = Self { attack, engage, defend };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), String> {
        let w = [self.attack, self.engage, self.defend];
        if w.iter().any(|&x| !(x >= 0.0)) {
            return Err("weights must be non-negative".into());
        }
        let s: f64 = w.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(format!("weights must sum to 1, got {s}"));
        }
        Ok(())
    }

    pub fn weight(&self, m: Maneuver) -> f64 {
        match m {
            Maneuver::Attack => self.attack,
            Maneuver::Engage => self.engage,
            Maneuver::Defend => self.defend,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Maneuver {
        let u: f64 = rng.random();
        if u < self.attack {
            Maneuver::Attack
        } else if u < self.attack + self.engage || self.defend == 0.0 {
            if self.engage == 0.0 && self.defend == 0.0 {
                Maneuver::Attack
            } else {
                Maneuver::Engage
            }
        } else {
            Maneuver::Defend
        }
    }
}

impl FromStr for MixedStrategy {
    type Err = String;

    /// `"attack,engage,defend"`, e.g. `0.7,0.2,0.1`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("bad weight `{}`: {e}", p.trim())))
            .collect::<Result<_, _>>()?;
        match parts[..] {
            [a, e, d] => MixedStrategy::new(a, e, d),
            _ => Err(format!("expected three comma-separated weights, got {}", parts.len())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pi0Variant {
    /// Flies between random waypoints, never reads the opponent.
    RandomWaypoints,
    /// Chases the nearest enemy through noisy waypoints and fires in the WEZ.
    Pursuit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Pi0Config {
    /// Waypoint lifetime range, seconds.
    pub waypoint_interval_s: (f64, f64),
    /// Per-axis waypoint noise in pursuit, meters.
    pub pursuit_sigma: f64,
    pub throttle: f64,
    pub max_bank_deg: f64,
    /// Below this altitude the controller always climbs.
    pub floor_altitude: f64,
}

impl Default for Pi0Config {
    fn default() -> Self {
        Self {
            waypoint_interval_s: (20.0, 40.0),
            pursuit_sigma: 500.0,
            throttle: 0.8,
            max_bank_deg: 60.0,
            floor_altitude: 1_000.0,
        }
    }
}

/// Per-aircraft memory of the scripted opponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScriptedPilot {
    pub variant: Pi0Variant,
    pub waypoint: Vec3<f64>,
    /// Decision step at which the next random waypoint is drawn.
    pub next_resample: u32,
}

impl ScriptedPilot {
    pub fn new(variant: Pi0Variant) -> Self {
        Self { variant, waypoint: Vec3::zero(), next_resample: 0 }
    }
}

/// Scripted baseline controller.
pub fn scripted_pi0<R: Rng + ?Sized>(
    pilot: &mut ScriptedPilot,
    combat: &Combat,
    state: &SimState,
    agent: usize,
    cfg: &Pi0Config,
    rng: &mut R,
) -> Result<ControlInput<f64>, EnvError> {
    let me = state.get(agent)?;
    if !me.alive {
        return Err(EnvError::DeadAgent(agent));
    }
    let c = &combat.config;
    let mut shoot = false;
    match pilot.variant {
        Pi0Variant::RandomWaypoints => {
            if state.step >= pilot.next_resample {
                let m = c.spawn_margin;
                pilot.waypoint = Vec3::new(
                    rng.random_range(m..c.map_size - m),
                    rng.random_range(m..c.map_size - m),
                    rng.random_range(c.spawn_altitude.0..c.spawn_altitude.1),
                );
                let (lo, hi) = cfg.waypoint_interval_s;
                let secs = if hi > lo { rng.random_range(lo..hi) } else { lo };
                let per_step = c.dt * c.action_repeat as f64;
                pilot.next_resample = state.step + (secs / per_step).round().max(1.0) as u32;
            }
        }
        Pi0Variant::Pursuit => match state.nearest_enemy(agent) {
            Some((id, _)) => {
                let target = &state.aircraft[id];
                let noise = Normal::new(0.0, cfg.pursuit_sigma.max(0.0)).expect("finite sigma");
                pilot.waypoint = target.pose.position + Vec3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng));
                shoot = c.wez().contains(&me.pose, &target.pose);
            }
            None => pilot.waypoint = me.pose.position + me.pose.forward() * 1_000.0,
        },
    }
    Ok(steer(me.pose.position, &me.pose, &me.params, pilot.waypoint, cfg, shoot))
}

fn steer(
    pos: Vec3<f64>,
    pose: &crate::geometry::Pose<f64>,
    p: &crate::dynamics::AircraftParams<f64>,
    waypoint: Vec3<f64>,
    cfg: &Pi0Config,
    shoot: bool,
) -> ControlInput<f64> {
    let d = waypoint - pos;
    let heading_err = wrap_angle(d.x.atan2(d.y) - pose.heading);
    let max_bank = cfg.max_bank_deg.to_radians();
    let roll_cmd = (2.0 * heading_err).clamp(-max_bank, max_bank);
    let aileron = (3.0 * (roll_cmd - pose.roll) / p.max_roll_rate).clamp(-1.0, 1.0);
    let mut pitch_cmd = d.z.atan2(d.x.hypot(d.y)).clamp(-0.35, 0.35);
    if pos.z < cfg.floor_altitude {
        pitch_cmd = pitch_cmd.max(0.2);
    }
    let elevator = (3.0 * (pitch_cmd - pose.pitch) / p.max_pitch_rate).clamp(-1.0, 1.0);
    let rudder = 0.5 * heading_err.clamp(-1.0, 1.0);
    let ch = |x: f64| 0.5 + 0.5 * x;
    ControlInput { aileron: ch(aileron), elevator: ch(elevator), rudder: ch(rudder), throttle: cfg.throttle, shoot }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Opponent {
    Scripted(Pi0Variant),
    /// Frozen copy of the learner, refreshed every iteration.
    SelfPlay,
    /// Uniform draw per aircraft per episode from the L3 pool.
    League,
    Mixed(MixedStrategy),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Trains {
    Maneuvers,
    Commanders,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurriculumStage {
    pub stage: Stage,
    pub opponent: Opponent,
    /// Samples per trained policy before the stage completes.
    pub budget: u64,
    pub trains: Trains,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumConfig {
    pub l1_samples: u64,
    pub l2_samples: u64,
    pub l3_samples: u64,
    pub l4_samples: u64,
    pub commander_samples: u64,
    /// Maneuver policies trained in L1-L4.
    pub maneuvers: Vec<Maneuver>,
    pub commander_mix: MixedStrategy,
    pub pi0: Pi0Config,
    /// Also train the fully connected baseline during L1-L4.
    pub train_fc: bool,
    pub option_duration: u32,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            l1_samples: 2_000_000,
            l2_samples: 2_000_000,
            l3_samples: 2_000_000,
            l4_samples: 2_000_000,
            commander_samples: 1_000_000,
            maneuvers: Maneuver::ALL.to_vec(),
            commander_mix: MixedStrategy::TRAINING,
            pi0: Pi0Config::default(),
            train_fc: false,
            option_duration: crate::hierarchy::MAX_OPTION_DURATION,
        }
    }
}

impl CurriculumStage {
    pub fn of(stage: Stage, cfg: &CurriculumConfig) -> Self {
        let (opponent, budget, trains) = match stage {
            Stage::L1 => (Opponent::Scripted(Pi0Variant::RandomWaypoints), cfg.l1_samples, Trains::Maneuvers),
            Stage::L2 => (Opponent::Scripted(Pi0Variant::Pursuit), cfg.l2_samples, Trains::Maneuvers),
            Stage::L3 => (Opponent::SelfPlay, cfg.l3_samples, Trains::Maneuvers),
            Stage::L4 => (Opponent::League, cfg.l4_samples, Trains::Maneuvers),
            Stage::Commander => (Opponent::Mixed(cfg.commander_mix), cfg.commander_samples, Trains::Commanders),
        };
        Self { stage, opponent, budget, trains }
    }
}

/// Position in the curriculum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cursor {
    pub stage: Stage,
    /// Samples per trained policy consumed in the current stage.
    pub stage_samples: u64,
    pub iteration: u64,
}

impl Default for Cursor {
    fn default() -> Self {
        Self { stage: Stage::L1, stage_samples: 0, iteration: 0 }
    }
}

/// Stage to train next: the current one until its budget is consumed, then
/// its successor. The commander stage is final.
pub fn curriculum_advance(cursor: &Cursor, cfg: &CurriculumConfig) -> CurriculumStage {
    let current = CurriculumStage::of(cursor.stage, cfg);
    match cursor.stage.next() {
        Some(next) if cursor.stage_samples >= current.budget => CurriculumStage::of(next, cfg),
        _ => current,
    }
}

/// Uniform pick of one pool entry.
pub fn league_sample<R: Rng + ?Sized>(pool: &[PolicySlot], rng: &mut R) -> Result<usize, TrainError> {
    if pool.is_empty() {
        return Err(TrainError::EmptyPool);
    }
    Ok(rng.random_range(0..pool.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub hidden: usize,
    pub init_log_std: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { hidden: 200, init_log_std: -0.5 }
    }
}

/// Everything a training run reads from its config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    /// Iterations per `train` invocation; unbounded when absent.
    pub iterations: Option<u64>,
    pub env: CombatConfig,
    pub rewards: RewardConstants,
    pub spo: SpoConfig,
    pub net: NetConfig,
    pub curriculum: CurriculumConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            iterations: None,
            env: CombatConfig::default(),
            rewards: RewardConstants::default(),
            spo: SpoConfig::default(),
            net: NetConfig::default(),
            curriculum: CurriculumConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.workers == 0 {
            return bad("workers must be >= 1".into());
        }
        self.env.validate().map_err(|e| TrainError::Config(format!("env: {e}")))?;
        self.spo.validate().map_err(|e| TrainError::Config(format!("spo: {e}")))?;
        if self.net.hidden == 0 {
            return bad("net.hidden must be >= 1".into());
        }
        let c = &self.curriculum;
        for (k, v) in [
            ("l1_samples", c.l1_samples),
            ("l2_samples", c.l2_samples),
            ("l3_samples", c.l3_samples),
            ("l4_samples", c.l4_samples),
            ("commander_samples", c.commander_samples),
        ] {
            if v == 0 {
                return bad(format!("curriculum.{k} must be > 0"));
            }
        }
        if c.maneuvers.is_empty() {
            return bad("curriculum.maneuvers must name at least one maneuver".into());
        }
        if c.option_duration == 0 {
            return bad("curriculum.option_duration must be >= 1".into());
        }
        c.commander_mix.validate().map_err(|e| TrainError::Config(format!("curriculum.commander_mix: {e}")))?;
        let (lo, hi) = c.pi0.waypoint_interval_s;
        if !(lo > 0.0 && hi >= lo) {
            return bad("curriculum.pi0.waypoint_interval_s must be a positive increasing pair".into());
        }
        if !(c.pi0.pursuit_sigma >= 0.0) {
            return bad("curriculum.pi0.pursuit_sigma must be >= 0".into());
        }
        Ok(())
    }
}

/// One line of the metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: u64,
    pub stage: Stage,
    /// `<role>/<aircraft type>`, e.g. `engage/F16`.
    pub policy: String,
    /// Samples consumed by this policy so far.
    pub samples: u64,
    pub episodes: usize,
    pub mean_trajectory_reward: f64,
    pub update: UpdateMetrics,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream for one episode, keyed by run seed and indices.
pub fn episode_rng(parts: &[u64]) -> ChaCha8Rng {
    let seed = parts.iter().fold(0x6a09_e667_f3bc_c908u64, |h, &p| splitmix(h ^ p));
    ChaCha8Rng::seed_from_u64(seed)
}

/// Samples of one episode, with the sample count of every step.
#[derive(Debug, Clone, Default)]
pub struct EpisodeSamples {
    pub trajectories: Vec<Trajectory>,
    pub step_sizes: Vec<usize>,
}

impl EpisodeSamples {
    fn len(&self) -> usize {
        self.trajectories.iter().map(|t| t.samples.len()).sum()
    }

    fn truncate_to(&mut self, need: usize) {
        let mut acc = 0;
        let mut steps = 0u32;
        for &s in &self.step_sizes {
            acc += s;
            steps += 1;
            if acc >= need {
                break;
            }
        }
        for t in &mut self.trajectories {
            t.truncate_steps(steps);
        }
    }
}

/// Runs episodes `0, 1, ...` (each called with the samples still missing)
/// until `target` samples exist. Episodes run `workers` at a time; results
/// are merged in index order, and the last one is cut at a whole step, so
/// the batch does not depend on `workers`.
pub fn gather<F>(target: usize, workers: usize, run: F) -> Result<RolloutBatch, TrainError>
where
    F: Fn(u64, usize) -> Result<EpisodeSamples, TrainError> + Sync,
{
    let w = workers.max(1) as u64;
    let mut batch = RolloutBatch::default();
    let mut collected = 0usize;
    let mut next = 0u64;
    while collected < target {
        let cap = target - collected;
        let results: Vec<Result<EpisodeSamples, TrainError>> = if w == 1 {
            vec![run(next, cap)]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = (next..next + w)
                    .map(|i| {
                        let run = &run;
                        s.spawn(move || run(i, cap))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("rollout worker panicked")).collect()
            })
        };
        next += w;
        for r in results {
            if collected >= target {
                break;
            }
            let mut ep = r?;
            let need = target - collected;
            if ep.len() > need {
                ep.truncate_to(need);
            }
            collected += ep.len();
            batch.episodes += 1;
            batch.trajectories.extend(ep.trajectories.into_iter().filter(|t| !t.samples.is_empty()));
        }
    }
    Ok(batch)
}

/// Who flies the blue aircraft in flat (non-hierarchical) rollouts.
#[derive(Clone, Copy)]
pub enum BlueActor<'a> {
    /// Per-type maneuver policies, indexed by [`AircraftType::index`].
    Maneuver { nets: [&'a ActorCritic<f64>; 2], maneuver: Maneuver },
    /// Full-observability baseline, rewarded like the attack policy.
    FullyConnected(&'a ActorCritic<f64>),
}

/// How red aircraft are chosen in flat rollouts.
#[derive(Clone, Copy)]
pub enum RedPlan<'a> {
    Scripted(Pi0Variant, &'a Pi0Config),
    /// Each red aircraft flies `nets[type]`.
    Fixed([&'a ActorCritic<f64>; 2]),
    League(&'a [PolicySlot]),
}

enum RedPilot<'a> {
    Scripted(ScriptedPilot),
    Net(&'a ActorCritic<f64>),
}

/// Shared read-only context of one collection phase.
pub struct FlatRollout<'a> {
    pub combat: &'a Combat,
    pub rewards: &'a Rewards<f64>,
    pub blue: BlueActor<'a>,
    pub red: RedPlan<'a>,
    pub gamma: f64,
    pub seed: [u64; 3],
}

impl FlatRollout<'_> {
    fn blue_net(&self, ty: AircraftType) -> &ActorCritic<f64> {
        match self.blue {
            BlueActor::Maneuver { nets, .. } => nets[ty.index()],
            BlueActor::FullyConnected(n) => n,
        }
    }

    fn blue_input(&self, state: &SimState, id: usize) -> Result<crate::netlib::NetInput<f64>, EnvError> {
        Ok(match self.blue {
            BlueActor::Maneuver { .. } => low_input(self.combat.observe_low(state, id)?),
            BlueActor::FullyConnected(_) => fc_input(self.combat, state, id),
        })
    }

    fn reward_maneuver(&self) -> Maneuver {
        match self.blue {
            BlueActor::Maneuver { maneuver, .. } => maneuver,
            BlueActor::FullyConnected(_) => Maneuver::Attack,
        }
    }

    /// One episode, stopped once `cap` blue samples exist.
    pub fn episode(&self, index: u64, cap: usize) -> Result<EpisodeSamples, TrainError> {
        let mut rng = episode_rng(&[self.seed[0], self.seed[1], self.seed[2], index]);
        let combat = self.combat;
        let mut state = combat.reset(&mut rng);
        let n = state.aircraft.len();
        let mut pilots: Vec<Option<RedPilot>> = Vec::with_capacity(n);
        for a in &state.aircraft {
            pilots.push(if a.team == Team::Red {
                Some(match self.red {
                    RedPlan::Scripted(v, _) => RedPilot::Scripted(ScriptedPilot::new(v)),
                    RedPlan::Fixed(nets) => RedPilot::Net(nets[a.kind().index()]),
                    RedPlan::League(pool) => RedPilot::Net(pool[league_sample(pool, &mut rng)?].net()),
                })
            } else {
                None
            });
        }
        let mut trajs: Vec<Trajectory> = vec![Trajectory::default(); n];
        let mut ep = EpisodeSamples::default();
        let mut count = 0usize;
        let maneuver = self.reward_maneuver();
        while !state.is_terminal() && count < cap {
            let mut actions: Vec<Option<ControlInput<f64>>> = vec![None; n];
            let mut pending = Vec::new();
            for id in 0..n {
                let a = &state.aircraft[id];
                if !a.alive {
                    continue;
                }
                match &mut pilots[id] {
                    None => {
                        let net = self.blue_net(a.kind());
                        let input = self.blue_input(&state, id)?;
                        let s = net.actor.sample(&input, &mut rng, SampleMode::Stochastic)?;
                        let ci = critic_input(combat, &state, id);
                        let value = net.critic.value(&ci)?;
                        let u = control_from_action(&s.action);
                        actions[id] = Some(u);
                        pending.push((id, state.nearest_enemy(id), input, ci, s.action, s.log_prob, value, u.shoot));
                    }
                    Some(RedPilot::Scripted(p)) => {
                        let cfg = match self.red {
                            RedPlan::Scripted(_, c) => c,
                            _ => unreachable!("scripted pilots come from a scripted plan"),
                        };
                        actions[id] = Some(scripted_pi0(p, combat, &state, id, cfg, &mut rng)?);
                    }
                    Some(RedPilot::Net(net)) => {
                        let input = low_input(combat.observe_low(&state, id)?);
                        let s = net.actor.sample(&input, &mut rng, SampleMode::Stochastic)?;
                        actions[id] = Some(control_from_action(&s.action));
                    }
                }
            }
            let step = state.step;
            let events = combat.step(&mut state, &actions, &mut rng)?;
            let terminal = state.is_terminal();
            ep.step_sizes.push(pending.len());
            for (id, tracked, input, ci, action, log_prob, value, shot) in pending {
                let signals = combat.step_signals(tracked, &state, id, shot, &events);
                trajs[id].samples.push(Sample {
                    agent: id,
                    aircraft: state.aircraft[id].kind(),
                    step,
                    input,
                    critic_input: ci,
                    action,
                    log_prob,
                    reward: self.rewards.step_reward(maneuver, &signals),
                    value,
                    done: signals.event || terminal,
                    discount: self.gamma,
                });
                count += 1;
            }
        }
        for (id, t) in trajs.iter_mut().enumerate() {
            if let Some(last) = t.samples.last() {
                if !last.done {
                    let net = self.blue_net(state.aircraft[id].kind());
                    t.bootstrap = net.critic.value(&critic_input(combat, &state, id))?;
                }
            }
        }
        ep.trajectories = trajs;
        Ok(ep)
    }
}

/// Commander rollouts: blue commanders choose options, red flies fixed
/// maneuvers drawn per episode from `mix`.
pub struct CommanderRollout<'a> {
    pub combat: &'a Combat,
    pub rewards: &'a Rewards<f64>,
    pub bank: &'a PolicyBank,
    pub mix: MixedStrategy,
    pub options: OptionConfig,
    pub seed: [u64; 3],
}

impl CommanderRollout<'_> {
    /// One episode, stopped once `cap` decision epochs exist.
    pub fn episode(&self, index: u64, cap: usize) -> Result<EpisodeSamples, TrainError> {
        let mut rng = episode_rng(&[self.seed[0], self.seed[1], self.seed[2], index]);
        let combat = self.combat;
        let mut state = combat.reset(&mut rng);
        let n = state.aircraft.len();
        let red: Vec<Option<usize>> =
            state.aircraft.iter().map(|a| (a.team == Team::Red).then(|| maneuver_option(self.mix.sample(&mut rng)))).collect();
        let mut trajs: Vec<Trajectory> = vec![Trajectory::default(); n];
        let mut ep = EpisodeSamples::default();
        let mut count = 0usize;
        let mut epoch = 0u32;
        while !state.is_terminal() && count < cap {
            let decisions = commander_step(self.bank, combat, &state, Team::Blue, SampleMode::Stochastic, &mut rng)?;
            let mut options: Vec<Option<usize>> = (0..n).map(|i| if state.aircraft[i].alive { red[i] } else { None }).collect();
            let mut pending = Vec::with_capacity(decisions.len());
            for d in decisions {
                options[d.agent] = Some(d.option);
                let ci = critic_input(combat, &state, d.agent);
                let value = self.bank.commander(d.aircraft).net().critic.value(&ci)?;
                pending.push((d, ci, value));
            }
            let result = run_option(combat, &mut state, &options, [self.bank, self.bank], self.rewards, &self.options, &mut rng)?;
            let returns = smdp_discount(&result.records, self.options.gamma);
            let terminal = state.is_terminal();
            ep.step_sizes.push(pending.len());
            for (d, ci, value) in pending {
                let k = result.records.iter().position(|r| r.agent == d.agent).expect("record per decision");
                trajs[d.agent].samples.push(Sample {
                    agent: d.agent,
                    aircraft: d.aircraft,
                    step: epoch,
                    input: d.input,
                    critic_input: ci,
                    action: Action::Option(d.option),
                    log_prob: d.log_prob,
                    reward: returns[k].reward,
                    value,
                    done: !state.aircraft[d.agent].alive || terminal,
                    discount: returns[k].discount,
                });
                count += 1;
            }
            epoch += 1;
        }
        for (id, t) in trajs.iter_mut().enumerate() {
            if let Some(last) = t.samples.last() {
                if !last.done {
                    let net = self.bank.commander(state.aircraft[id].kind()).net();
                    t.bootstrap = net.critic.value(&critic_input(combat, &state, id))?;
                }
            }
        }
        ep.trajectories = trajs;
        Ok(ep)
    }
}

/// Owns a run: policies, curriculum position and the update stream.
pub struct Trainer {
    pub config: RunConfig,
    pub bank: PolicyBank,
    pub cursor: Cursor,
    pub rng: ChaCha8Rng,
    combat: Combat,
    rewards: Rewards<f64>,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut bank = PolicyBank::new(config.net.hidden, config.net.init_log_std, &mut rng);
        if config.curriculum.train_fc {
            let spec = fc_spec(config.env.n_aircraft(), config.net.hidden, config.net.init_log_std);
            bank.fc = Some(PolicySlot {
                role: Role::FullyConnected,
                aircraft: AircraftType::F16,
                learner: Learner::new(ActorCritic::new(spec, &mut rng)),
            });
        }
        Self::assemble(config, bank, Cursor::default(), rng)
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self, TrainError> {
        ckpt.config.validate()?;
        Self::assemble(ckpt.config, ckpt.bank, ckpt.cursor, ckpt.rng)
    }

    fn assemble(config: RunConfig, bank: PolicyBank, cursor: Cursor, rng: ChaCha8Rng) -> Result<Self, TrainError> {
        let combat = Combat::new(config.env.clone())?;
        let rewards = Rewards::new(&config.rewards);
        Ok(Self { config, bank, cursor, rng, combat, rewards })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint { config: self.config.clone(), bank: self.bank.clone(), cursor: self.cursor, rng: self.rng.clone() }
    }

    fn enter(&mut self, stage: Stage) {
        if stage == self.cursor.stage {
            return;
        }
        self.cursor.stage = stage;
        self.cursor.stage_samples = 0;
        if stage == Stage::L4 {
            self.bank.league = self.bank.low.clone();
        }
    }

    /// One collect-and-update round at the current (or `pinned`) stage.
    pub fn iterate(&mut self, pinned: Option<Stage>) -> Result<Vec<MetricsRecord>, TrainError> {
        let stage = match pinned {
            Some(s) => CurriculumStage::of(s, &self.config.curriculum),
            None => curriculum_advance(&self.cursor, &self.config.curriculum),
        };
        self.enter(stage.stage);
        if stage.stage == Stage::L4 && self.bank.league.is_empty() {
            self.bank.league = self.bank.low.clone();
        }
        let (records, consumed) = match stage.trains {
            Trains::Maneuvers => self.maneuver_iteration(&stage)?,
            Trains::Commanders => self.commander_iteration(&stage)?,
        };
        self.cursor.stage_samples += consumed;
        self.cursor.iteration += 1;
        Ok(records)
    }

    fn seed(&self, stream: u64) -> [u64; 3] {
        [self.config.seed, self.cursor.iteration, stream]
    }

    fn record(&self, stage: Stage, policy: String, samples: u64, batch: &RolloutBatch, update: UpdateMetrics) -> MetricsRecord {
        MetricsRecord {
            iteration: self.cursor.iteration,
            stage,
            policy,
            samples,
            episodes: batch.episodes,
            mean_trajectory_reward: batch.mean_trajectory_reward(),
            update,
        }
    }

    fn maneuver_iteration(&mut self, stage: &CurriculumStage) -> Result<(Vec<MetricsRecord>, u64), TrainError> {
        let spo = self.config.spo.clone();
        let pi0 = self.config.curriculum.pi0;
        let workers = self.config.workers;
        let mut records = Vec::new();
        for m in self.config.curriculum.maneuvers.clone() {
            let bank = &self.bank;
            let nets = [bank.low(AircraftType::F16, m).net(), bank.low(AircraftType::A4, m).net()];
            let red = match stage.opponent {
                Opponent::Scripted(v) => RedPlan::Scripted(v, &pi0),
                Opponent::SelfPlay => RedPlan::Fixed(nets),
                Opponent::League => RedPlan::League(&bank.league),
                Opponent::Mixed(_) => unreachable!("maneuver stages never use mixed opponents"),
            };
            let rollout = FlatRollout {
                combat: &self.combat,
                rewards: &self.rewards,
                blue: BlueActor::Maneuver { nets, maneuver: m },
                red,
                gamma: spo.gamma,
                seed: self.seed(maneuver_option(m) as u64),
            };
            let batch = gather(spo.batch_low, workers, |i, cap| rollout.episode(i, cap))?;
            let out = ma_spo_update(self.bank.maneuver_learners_mut(m), &batch, &spo, &mut self.rng)?;
            for (ty, u) in out {
                let samples = self.bank.low(ty, m).learner.samples;
                records.push(self.record(stage.stage, format!("{m}/{ty}"), samples, &batch, u));
            }
        }
        if self.config.curriculum.train_fc {
            if let Some(fc) = &self.bank.fc {
                let red = match stage.opponent {
                    Opponent::Scripted(v) => RedPlan::Scripted(v, &pi0),
                    Opponent::SelfPlay => RedPlan::Fixed([
                        self.bank.low(AircraftType::F16, Maneuver::Attack).net(),
                        self.bank.low(AircraftType::A4, Maneuver::Attack).net(),
                    ]),
                    Opponent::League => RedPlan::League(&self.bank.league),
                    Opponent::Mixed(_) => unreachable!("maneuver stages never use mixed opponents"),
                };
                let rollout = FlatRollout {
                    combat: &self.combat,
                    rewards: &self.rewards,
                    blue: BlueActor::FullyConnected(fc.net()),
                    red,
                    gamma: spo.gamma,
                    seed: self.seed(7),
                };
                let batch = gather(spo.batch_low, workers, |i, cap| rollout.episode(i, cap))?;
                let refs: Vec<&Trajectory> = batch.trajectories.iter().collect();
                let fc = self.bank.fc.as_mut().expect("checked above");
                let u = spo_update(&mut fc.learner, &refs, &spo, &mut self.rng)?;
                let samples = fc.learner.samples;
                records.push(self.record(stage.stage, "fc/all".to_string(), samples, &batch, u));
            }
        }
        Ok((records, spo.batch_low as u64))
    }

    fn commander_iteration(&mut self, stage: &CurriculumStage) -> Result<(Vec<MetricsRecord>, u64), TrainError> {
        let spo = self.config.spo.clone();
        let mix = match stage.opponent {
            Opponent::Mixed(m) => m,
            _ => self.config.curriculum.commander_mix,
        };
        let rollout = CommanderRollout {
            combat: &self.combat,
            rewards: &self.rewards,
            bank: &self.bank,
            mix,
            options: OptionConfig {
                max_duration: self.config.curriculum.option_duration,
                gamma: spo.gamma,
                ..OptionConfig::default()
            },
            seed: self.seed(10),
        };
        let batch = gather(spo.batch_high, self.config.workers, |i, cap| rollout.episode(i, cap))?;
        let out = ma_spo_update(self.bank.commander_learners_mut(), &batch, &spo, &mut self.rng)?;
        let mut records = Vec::new();
        for (ty, u) in out {
            let samples = self.bank.commander(ty).learner.samples;
            records.push(self.record(stage.stage, format!("commander/{ty}"), samples, &batch, u));
        }
        Ok((records, spo.batch_high as u64))
    }
}

const MAGIC: [u8; 8] = *b"ACMBCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Everything needed to resume a run bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub bank: PolicyBank,
    pub cursor: Cursor,
    pub rng: ChaCha8Rng,
}

fn fnv(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

impl Checkpoint {
    /// Layout: magic, version (u32 LE), payload checksum (u64 LE), bincode payload.
    pub fn to_bytes(&self) -> Vec<u8> {
        let payload = bincode::serialize(self).expect("checkpoint serializes");
        let mut out = Vec::with_capacity(payload.len() + 20);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&fnv(&payload).to_le_bytes());
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 20 || bytes[..8] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version { found: version, expected: CHECKPOINT_VERSION });
        }
        let sum = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let payload = &bytes[20..];
        if fnv(payload) != sum {
            return Err(CheckpointError::Corrupt("checksum mismatch".into()));
        }
        bincode::deserialize(payload).map_err(|e| CheckpointError::Corrupt(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
