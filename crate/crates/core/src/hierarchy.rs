//! Options-based control: commanders pick one of three maneuver options per
//! agent, the matching low-level policy flies until a termination fires, and
//! commander rewards are accumulated over the option.
//!
//! All agents share epoch boundaries: when any agent's termination fires,
//! every agent re-decides.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{AircraftType, ControlInput};
use crate::environment::{
    Combat, EnvError, Event, SimState, Team, GLOBAL_FEATURES, HIGH_OBS_DIM, LOW_OBS_DIM, OWN_FEATURES, REL_FEATURES,
};
use crate::geometry::Pose;
use crate::netlib::{Action, ActorCritic, HeadKind, InputSpec, NetError, NetInput, NetSpec, Parameters, PolicyHead, SampleMode};
use crate::optim::{Learner, Sample};
use crate::rewards::{Maneuver, Rewards};

/// Upper bound on low-level executions per option.
pub const MAX_OPTION_DURATION: u32 = 15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HierarchyError {
    #[error("option index {0} out of range (expected 0, 1 or 2)")]
    InvalidOption(usize),
    #[error("no option supplied for alive agent {0}")]
    MissingOption(usize),
    #[error("aircraft type mismatch: slot expects {expected}, policy is tagged {found}")]
    TypeTag { expected: AircraftType, found: AircraftType },
    #[error("role mismatch in slot {slot}")]
    Role { slot: usize },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Entity-token width shared by actor inputs.
pub const TOKEN_WIDTH: usize = OWN_FEATURES;

pub fn low_input(obs: Vec<f64>) -> NetInput<f64> {
    NetInput::from_blocks(obs, OWN_FEATURES, REL_FEATURES, TOKEN_WIDTH)
}

pub fn high_input(obs: Vec<f64>) -> NetInput<f64> {
    NetInput::from_blocks(obs, OWN_FEATURES, REL_FEATURES, TOKEN_WIDTH)
}

fn global_blocks(global: &[f64]) -> Vec<Vec<f64>> {
    global.chunks(GLOBAL_FEATURES).map(<[f64]>::to_vec).collect()
}

/// Critic view: own global block as flat input, every aircraft's block as a
/// token, own block first.
pub fn critic_input(combat: &Combat, state: &SimState, agent: usize) -> NetInput<f64> {
    let blocks = global_blocks(&combat.global_state(state));
    NetInput::with_query(blocks[agent].clone(), blocks, agent)
}

/// Full-observability actor view: the whole global state as flat input.
pub fn fc_input(combat: &Combat, state: &SimState, agent: usize) -> NetInput<f64> {
    let global = combat.global_state(state);
    let blocks = global_blocks(&global);
    NetInput::with_query(global, blocks, agent)
}

const CRITIC_SPEC: InputSpec = InputSpec { flat_dim: GLOBAL_FEATURES, token_dim: GLOBAL_FEATURES };

pub fn low_spec(hidden: usize, init_log_std: f64) -> NetSpec {
    NetSpec {
        actor: InputSpec { flat_dim: LOW_OBS_DIM, token_dim: TOKEN_WIDTH },
        critic: CRITIC_SPEC,
        hidden,
        head: HeadKind::Control,
        init_log_std,
    }
}

pub fn high_spec(hidden: usize) -> NetSpec {
    NetSpec {
        actor: InputSpec { flat_dim: HIGH_OBS_DIM, token_dim: TOKEN_WIDTH },
        critic: CRITIC_SPEC,
        hidden,
        head: HeadKind::Options,
        init_log_std: 0.0,
    }
}

pub fn fc_spec(n_aircraft: usize, hidden: usize, init_log_std: f64) -> NetSpec {
    NetSpec {
        actor: InputSpec { flat_dim: n_aircraft * GLOBAL_FEATURES, token_dim: GLOBAL_FEATURES },
        critic: CRITIC_SPEC,
        hidden,
        head: HeadKind::Control,
        init_log_std,
    }
}

/// Maps a control-head sample onto stick inputs.
pub fn control_from_action(action: &Action<f64>) -> ControlInput<f64> {
    let ch = action.channels().unwrap_or([0.5; 4]);
    ControlInput::from_channels(ch, action.shoot())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Low(Maneuver),
    Commander,
    FullyConnected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySlot {
    pub role: Role,
    pub aircraft: AircraftType,
    pub learner: Learner,
}

impl PolicySlot {
    pub fn net(&self) -> &ActorCritic<f64> {
        &self.learner.net
    }
}

/// Resolved low-level policy for an (option, aircraft type) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PolicyHandle {
    pub aircraft: AircraftType,
    pub maneuver: Maneuver,
}

/// 0 → defend, 1 → engage, 2 → attack.
pub fn option_maneuver(option: usize) -> Result<Maneuver, HierarchyError> {
    match option {
        0 => Ok(Maneuver::Defend),
        1 => Ok(Maneuver::Engage),
        2 => Ok(Maneuver::Attack),
        _ => Err(HierarchyError::InvalidOption(option)),
    }
}

pub fn maneuver_option(m: Maneuver) -> usize {
    match m {
        Maneuver::Defend => 0,
        Maneuver::Engage => 1,
        Maneuver::Attack => 2,
    }
}

pub fn option_to_policy(option: usize, aircraft: AircraftType) -> Result<PolicyHandle, HierarchyError> {
    Ok(PolicyHandle { aircraft, maneuver: option_maneuver(option)? })
}

/// Six maneuver policies and two commanders, one triple and one commander
/// per aircraft type. `low` is ordered type-major as
/// `[F16 defend, F16 engage, F16 attack, A4 defend, ...]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyBank {
    pub low: Vec<PolicySlot>,
    pub commanders: Vec<PolicySlot>,
    /// Full-observability baseline, if one was built.
    pub fc: Option<PolicySlot>,
    /// Frozen maneuver policies used as league opponents.
    pub league: Vec<PolicySlot>,
}

fn low_index(aircraft: AircraftType, m: Maneuver) -> usize {
    aircraft.index() * 3 + maneuver_option(m)
}

impl PolicyBank {
    pub fn new<R: Rng + ?Sized>(hidden: usize, init_log_std: f64, rng: &mut R) -> Self {
        Self::from_fn(|role, _| {
            let spec = if role == Role::Commander { high_spec(hidden) } else { low_spec(hidden, init_log_std) };
            ActorCritic::new(spec, rng)
        })
    }

    /// Same layout, every network produced by `make`.
    pub fn from_fn(mut make: impl FnMut(Role, AircraftType) -> ActorCritic<f64>) -> Self {
        let mut low = Vec::with_capacity(6);
        for aircraft in AircraftType::ALL {
            for m in Maneuver::ALL {
                low.push(PolicySlot { role: Role::Low(m), aircraft, learner: Learner::new(make(Role::Low(m), aircraft)) });
            }
        }
        let commanders = AircraftType::ALL
            .into_iter()
            .map(|aircraft| PolicySlot {
                role: Role::Commander,
                aircraft,
                learner: Learner::new(make(Role::Commander, aircraft)),
            })
            .collect();
        Self { low, commanders, fc: None, league: Vec::new() }
    }

    pub fn low(&self, aircraft: AircraftType, m: Maneuver) -> &PolicySlot {
        &self.low[low_index(aircraft, m)]
    }

    pub fn low_mut(&mut self, aircraft: AircraftType, m: Maneuver) -> &mut PolicySlot {
        &mut self.low[low_index(aircraft, m)]
    }

    pub fn get(&self, h: PolicyHandle) -> &PolicySlot {
        self.low(h.aircraft, h.maneuver)
    }

    pub fn commander(&self, aircraft: AircraftType) -> &PolicySlot {
        &self.commanders[aircraft.index()]
    }

    /// Both types' learners for one maneuver, in [`AircraftType::ALL`] order.
    pub fn maneuver_learners_mut(&mut self, m: Maneuver) -> [&mut Learner; 2] {
        let k = maneuver_option(m);
        let (f16, a4) = self.low.split_at_mut(3);
        [&mut f16[k].learner, &mut a4[k].learner]
    }

    pub fn commander_learners_mut(&mut self) -> [&mut Learner; 2] {
        let (f16, a4) = self.commanders.split_at_mut(1);
        [&mut f16[0].learner, &mut a4[0].learner]
    }

    /// Combined checksum over the six maneuver policies.
    pub fn low_checksum(&self) -> u64 {
        self.low.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, s| (h ^ s.learner.checksum()).wrapping_mul(0x0100_0000_01b3))
    }

    /// Replaces the maneuver triple of `aircraft`. The triple must be tagged
    /// with that type and ordered defend, engage, attack.
    pub fn install_triple(&mut self, aircraft: AircraftType, triple: Vec<PolicySlot>) -> Result<(), HierarchyError> {
        if triple.len() != 3 {
            return Err(HierarchyError::Role { slot: triple.len() });
        }
        for (k, s) in triple.iter().enumerate() {
            if s.aircraft != aircraft {
                return Err(HierarchyError::TypeTag { expected: aircraft, found: s.aircraft });
            }
            if s.role != Role::Low(Maneuver::ALL[k]) {
                return Err(HierarchyError::Role { slot: k });
            }
        }
        for (k, s) in triple.into_iter().enumerate() {
            self.low[aircraft.index() * 3 + k] = s;
        }
        Ok(())
    }

    /// Tags maneuver slots, for export as a triple.
    pub fn triple(&self, aircraft: AircraftType) -> Vec<PolicySlot> {
        self.low[aircraft.index() * 3..aircraft.index() * 3 + 3].to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The agent itself was destroyed, crashed or left the map.
    Destroyed,
    /// The nearest enemy at option start was removed.
    TargetDestroyed,
    DurationExpired,
    EpisodeEnd,
    /// Another agent's termination closed the joint epoch.
    Preempted,
}

/// One semi-Markov decision of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionRecord {
    pub agent: usize,
    pub team: Team,
    pub aircraft: AircraftType,
    pub option: usize,
    pub start_step: u32,
    pub duration: u32,
    /// Undiscounted sum of per-step commander rewards.
    pub reward: f64,
    pub step_rewards: Vec<f64>,
    pub cause: Termination,
}

/// One low-level transition collected during an option.
#[derive(Debug, Clone, PartialEq)]
pub struct LowTransition {
    pub team: Team,
    pub maneuver: Maneuver,
    pub sample: Sample,
}

/// One agent at one decision step, for trajectory export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: u32,
    pub agent: usize,
    pub team: Team,
    pub aircraft: AircraftType,
    pub option: Option<usize>,
    pub pose: Pose<f64>,
    pub control: ControlInput<f64>,
    /// Reward of the active maneuver policy.
    pub reward: f64,
    pub commander_reward: f64,
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptionConfig {
    pub max_duration: u32,
    pub low_mode: SampleMode,
    /// Collect low-level samples with critic values.
    pub record_low: bool,
    pub trace: bool,
    pub gamma: f64,
}

impl Default for OptionConfig {
    fn default() -> Self {
        Self {
            max_duration: MAX_OPTION_DURATION,
            low_mode: SampleMode::Stochastic,
            record_low: false,
            trace: false,
            gamma: 0.995,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpochResult {
    pub records: Vec<OptionRecord>,
    pub transitions: Vec<LowTransition>,
    pub trace: Vec<TraceRow>,
    pub steps: u32,
}

/// Flies one joint decision epoch. `options[id]` must be `Some` for every
/// live aircraft; `banks[0]` serves blue, `banks[1]` red.
#[allow(clippy::too_many_arguments)]
pub fn run_option<R: Rng + ?Sized>(
    combat: &Combat,
    state: &mut SimState,
    options: &[Option<usize>],
    banks: [&PolicyBank; 2],
    rewards: &Rewards<f64>,
    cfg: &OptionConfig,
    rng: &mut R,
) -> Result<EpochResult, HierarchyError> {
    if state.is_terminal() {
        return Err(EnvError::Terminated.into());
    }
    let mut records = Vec::new();
    let mut handles = Vec::new();
    let mut targets = Vec::new();
    for id in state.alive_ids().collect::<Vec<_>>() {
        let a = &state.aircraft[id];
        let option = options.get(id).copied().flatten().ok_or(HierarchyError::MissingOption(id))?;
        handles.push((id, option_to_policy(option, a.kind())?));
        targets.push(state.nearest_enemy(id).map(|(t, _)| t));
        records.push(OptionRecord {
            agent: id,
            team: a.team,
            aircraft: a.kind(),
            option,
            start_step: state.step,
            duration: 0,
            reward: 0.0,
            step_rewards: Vec::new(),
            cause: Termination::Preempted,
        });
    }
    let bank_of = |team: Team| if team == Team::Blue { banks[0] } else { banks[1] };

    let mut out = EpochResult::default();
    for k in 1..=cfg.max_duration {
        let mut actions: Vec<Option<ControlInput<f64>>> = vec![None; state.aircraft.len()];
        let mut pending = Vec::with_capacity(handles.len());
        for &(id, h) in &handles {
            let a = &state.aircraft[id];
            if !a.alive {
                continue;
            }
            let slot = bank_of(a.team).get(h);
            let input = low_input(combat.observe_low(state, id)?);
            let s = slot.net().actor.sample(&input, rng, cfg.low_mode)?;
            let u = control_from_action(&s.action);
            actions[id] = Some(u);
            let recorded = if cfg.record_low {
                let ci = critic_input(combat, state, id);
                let value = slot.net().critic.value(&ci)?;
                Some((input, ci, value))
            } else {
                None
            };
            pending.push((id, h, state.nearest_enemy(id), s, recorded, u, a.pose));
        }
        let events = combat.step(state, &actions, rng)?;
        let terminal = state.is_terminal();

        for (id, h, tracked, s, recorded, u, pose) in pending {
            let signals = combat.step_signals(tracked, state, id, u.shoot, &events);
            let low_reward = rewards.step_reward(h.maneuver, &signals);
            let cmd = rewards.commander_reward(signals.event, signals.kill_antenna_train);
            let rec = records.iter_mut().find(|r| r.agent == id).expect("record per handle");
            rec.step_rewards.push(cmd);
            rec.reward += cmd;
            rec.duration = k;
            let team = state.aircraft[id].team;
            if let Some((input, critic_input, value)) = recorded {
                out.transitions.push(LowTransition {
                    team,
                    maneuver: h.maneuver,
                    sample: Sample {
                        agent: id,
                        aircraft: h.aircraft,
                        step: state.step - 1,
                        input,
                        critic_input,
                        action: s.action,
                        log_prob: s.log_prob,
                        reward: low_reward,
                        value,
                        done: signals.event || terminal,
                        discount: cfg.gamma,
                    },
                });
            }
            if cfg.trace {
                out.trace.push(TraceRow {
                    step: state.step - 1,
                    agent: id,
                    team,
                    aircraft: h.aircraft,
                    option: Some(maneuver_option(h.maneuver)),
                    pose,
                    control: u,
                    reward: low_reward,
                    commander_reward: cmd,
                    events: events.iter().filter(|e| e.involves(id)).copied().collect(),
                });
            }
        }
        out.steps = k;

        let mut fired = false;
        for (rec, target) in records.iter_mut().zip(&targets) {
            let own_dead = !state.aircraft[rec.agent].alive;
            let target_dead = target.is_some_and(|t| !state.aircraft[t].alive);
            let cause = if own_dead {
                Some(Termination::Destroyed)
            } else if target_dead {
                Some(Termination::TargetDestroyed)
            } else if terminal {
                Some(Termination::EpisodeEnd)
            } else if k == cfg.max_duration {
                Some(Termination::DurationExpired)
            } else {
                None
            };
            if let Some(c) = cause {
                rec.cause = c;
                fired = true;
            }
        }
        if fired || terminal {
            break;
        }
    }
    out.records = records;
    Ok(out)
}

/// One commander decision.
#[derive(Debug, Clone, PartialEq)]
pub struct CommanderDecision {
    pub agent: usize,
    pub aircraft: AircraftType,
    pub option: usize,
    pub log_prob: f64,
    pub entropy: f64,
    pub input: NetInput<f64>,
}

/// Samples an option for every live member of `team` from its type's
/// commander.
pub fn commander_step<R: Rng + ?Sized>(
    bank: &PolicyBank,
    combat: &Combat,
    state: &SimState,
    team: Team,
    mode: SampleMode,
    rng: &mut R,
) -> Result<Vec<CommanderDecision>, HierarchyError> {
    let ids: Vec<usize> = state.team_ids(team).filter(|&i| state.aircraft[i].alive).collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let aircraft = state.aircraft[id].kind();
        let input = high_input(combat.observe_high(state, id)?);
        let s = bank.commander(aircraft).net().actor.sample(&input, rng, mode)?;
        let option = s.action.option().ok_or(NetError::HeadMismatch)?;
        out.push(CommanderDecision { agent: id, aircraft, option, log_prob: s.log_prob, entropy: s.entropy, input });
    }
    Ok(out)
}

/// Epoch-level reward and discount to the next epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochReturn {
    pub reward: f64,
    pub discount: f64,
}

/// `Σ_j γ^j r_j` over each option's steps, with discount `γ^τ`.
pub fn smdp_discount(records: &[OptionRecord], gamma: f64) -> Vec<EpochReturn> {
    records
        .iter()
        .map(|r| {
            let mut w = 1.0;
            let mut reward = 0.0;
            for &x in &r.step_rewards {
                reward += w * x;
                w *= gamma;
            }
            EpochReturn { reward, discount: gamma.powi(r.duration as i32) }
        })
        .collect()
}

/// Network whose output ignores its input: zero weights, the given head
/// biases and a near-deterministic log-std. Used for rigged opponents.
pub fn fixed_policy(spec: NetSpec, mean: [f64; 4], shoot: f64, logits: [f64; 3]) -> ActorCritic<f64> {
    let mut net = ActorCritic::new(spec, &mut ChaCha8Rng::seed_from_u64(0));
    net.zero();
    match &mut net.actor.head {
        PolicyHead::Control { mean: m, log_std, shoot: s } => {
            m.bias.data.copy_from_slice(&mean);
            log_std.fill(-5.0);
            s.bias.data[0] = shoot;
        }
        PolicyHead::Options { logits: l } => l.bias.data.copy_from_slice(&logits),
    }
    net
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::CombatConfig;
    use crate::geometry::Vec3;

    fn stub_bank(mean: [f64; 4], shoot: f64, logits: [f64; 3]) -> PolicyBank {
        PolicyBank::from_fn(|role, _| match role {
            Role::Commander => fixed_policy(high_spec(8), mean, shoot, logits),
            _ => fixed_policy(low_spec(8, -5.0), mean, shoot, logits),
        })
    }

    #[test]
    fn option_mapping() {
        assert_eq!(
            option_to_policy(0, AircraftType::F16).unwrap(),
            PolicyHandle { aircraft: AircraftType::F16, maneuver: Maneuver::Defend }
        );
        assert_eq!(
            option_to_policy(2, AircraftType::A4).unwrap(),
            PolicyHandle { aircraft: AircraftType::A4, maneuver: Maneuver::Attack }
        );
        assert_eq!(option_to_policy(3, AircraftType::A4), Err(HierarchyError::InvalidOption(3)));
        let mut seen = std::collections::HashSet::new();
        for ty in AircraftType::ALL {
            for o in 0..3 {
                let h = option_to_policy(o, ty).unwrap();
                assert_eq!(maneuver_option(h.maneuver), o);
                assert!(seen.insert(h));
            }
        }
        let bank = PolicyBank::new(8, -0.5, &mut ChaCha8Rng::seed_from_u64(1));
        for ty in AircraftType::ALL {
            for o in 0..3 {
                let s = bank.get(option_to_policy(o, ty).unwrap());
                assert_eq!((s.aircraft, s.role), (ty, Role::Low(option_maneuver(o).unwrap())));
            }
        }
    }

    #[test]
    fn triple_type_tags() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut bank = PolicyBank::new(8, -0.5, &mut rng);
        let f16 = bank.triple(AircraftType::F16);
        assert!(matches!(bank.install_triple(AircraftType::A4, f16.clone()), Err(HierarchyError::TypeTag { .. })));
        bank.install_triple(AircraftType::F16, f16).unwrap();
    }

    fn duel() -> (Combat, SimState) {
        let combat = Combat::new(CombatConfig::versus(1, 1)).unwrap();
        let mut state = combat.reset(&mut ChaCha8Rng::seed_from_u64(3));
        state.aircraft[0].pose = Pose {
            position: Vec3::new(20_000.0, 20_000.0, 5_000.0),
            velocity: Vec3::new(0.0, 250.0, 0.0),
            roll: 0.0,
            pitch: 0.0,
            heading: 0.0,
        };
        state.aircraft[1].pose = Pose { position: Vec3::new(20_000.0, 21_000.0, 5_000.0), ..state.aircraft[0].pose };
        (combat, state)
    }

    #[test]
    fn quiet_epoch_runs_full_duration() {
        let (combat, mut state) = duel();
        let bank = stub_bank([0.0; 4], -100.0, [0.0; 3]);
        let cfg = OptionConfig { low_mode: SampleMode::Deterministic, ..OptionConfig::default() };
        let r = run_option(
            &combat,
            &mut state,
            &[Some(1), Some(1)],
            [&bank, &bank],
            &Rewards::default(),
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(r.steps, 15);
        for rec in &r.records {
            assert_eq!(rec.duration, 15);
            assert_eq!(rec.cause, Termination::DurationExpired);
            assert_eq!(rec.reward, 0.0);
        }
        assert!(run_option(
            &combat,
            &mut state,
            &[Some(1), None],
            [&bank, &bank],
            &Rewards::default(),
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(0)
        )
        .is_err());
    }

    #[test]
    fn rear_kill_scores_full_commander_reward() {
        let (combat, mut state) = duel();
        let blue = stub_bank([0.0; 4], 100.0, [0.0; 3]);
        let red = stub_bank([0.0; 4], -100.0, [0.0; 3]);
        let cfg = OptionConfig { low_mode: SampleMode::Deterministic, record_low: true, ..OptionConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = run_option(&combat, &mut state, &[Some(2), Some(1)], [&blue, &red], &Rewards::default(), &cfg, &mut rng).unwrap();
        let b = &r.records[0];
        let victim = &r.records[1];
        assert_eq!(b.cause, Termination::TargetDestroyed);
        assert!((b.reward - 5.0).abs() < 1e-6, "{}", b.reward);
        assert_eq!(victim.cause, Termination::Destroyed);
        assert_eq!(victim.duration, b.duration);
        assert_eq!(victim.reward, -5.0);
        assert!(r.transitions.iter().all(|t| t.sample.log_prob.is_finite()));
        assert!(r.transitions.last().unwrap().sample.done);
    }

    #[test]
    fn death_sets_duration() {
        let (combat, mut state) = duel();
        // both dive; raise red so blue crashes first
        state.aircraft[0].pose.position.z = 60.0;
        state.aircraft[0].pose.pitch = -0.5;
        let bank = stub_bank([0.0, -15.0, 0.0, 0.0], -100.0, [0.0; 3]);
        let cfg = OptionConfig { low_mode: SampleMode::Deterministic, ..OptionConfig::default() };
        let r = run_option(
            &combat,
            &mut state,
            &[Some(0), Some(0)],
            [&bank, &bank],
            &Rewards::default(),
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(r.records[0].cause, Termination::Destroyed);
        assert!(r.records[0].duration < 15);
        assert_eq!(r.records[0].step_rewards.len() as u32, r.records[0].duration);
        assert_eq!(r.records[1].cause, Termination::TargetDestroyed);
    }

    #[test]
    fn commander_sampling() {
        let combat = Combat::new(CombatConfig::versus(3, 3)).unwrap();
        let state = combat.reset(&mut ChaCha8Rng::seed_from_u64(2));
        let uniform = stub_bank([0.0; 4], 0.0, [0.0; 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut counts = [0usize; 3];
        let n = 100_000 / 3 + 1;
        for _ in 0..n {
            for d in commander_step(&uniform, &combat, &state, Team::Blue, SampleMode::Stochastic, &mut rng).unwrap() {
                counts[d.option] += 1;
            }
        }
        let total = counts.iter().sum::<usize>() as f64;
        let sigma = (total * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for c in counts {
            assert!((c as f64 - total / 3.0).abs() < 3.0 * sigma, "{counts:?}");
        }
        let forced = stub_bank([0.0; 4], 0.0, [-1.0, 3.0, 0.5]);
        let d = commander_step(&forced, &combat, &state, Team::Blue, SampleMode::Deterministic, &mut rng).unwrap();
        assert!(d.iter().all(|d| d.option == 1));
        assert_eq!(d.len(), 3);
    }

    fn record(duration: u32, rewards: Vec<f64>) -> OptionRecord {
        OptionRecord {
            agent: 0,
            team: Team::Blue,
            aircraft: AircraftType::F16,
            option: 0,
            start_step: 0,
            duration,
            reward: rewards.iter().sum(),
            step_rewards: rewards,
            cause: Termination::DurationExpired,
        }
    }

    #[test]
    fn semi_markov_discounting() {
        let g = 0.9;
        let e = smdp_discount(&[record(1, vec![2.0])], g);
        assert_eq!(e[0].reward, 2.0);
        assert_eq!(e[0].discount, g);
        let two = [record(2, vec![1.0, 2.0]), record(3, vec![0.0, 0.0, 4.0])];
        let e = smdp_discount(&two, g);
        assert!((e[0].reward - (1.0 + 0.9 * 2.0)).abs() < 1e-15);
        assert!((e[1].reward - 0.81 * 4.0).abs() < 1e-15);
        // total return from the first epoch: r0 + γ^τ0 r1
        let total = e[0].reward + e[0].discount * e[1].reward;
        let flat: f64 = [1.0, 2.0, 0.0, 0.0, 4.0].iter().enumerate().map(|(j, r)| g.powi(j as i32) * r).sum();
        assert!((total - flat).abs() < 1e-12);
        assert_eq!(smdp_discount(&[record(3, vec![0.0; 3])], g)[0].reward, 0.0);
        let e = smdp_discount(&two, 1.0);
        for (x, r) in e.iter().zip(&two) {
            assert_eq!(x.reward, r.reward);
        }
    }
}
