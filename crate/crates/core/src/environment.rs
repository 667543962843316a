//! The n-vs-n combat engine: episode setup, physics and cannon resolution,
//! observations, and outcome accounting.
//!
//! Agents decide every `action_repeat` physics substeps. Cannon kills are
//! drawn once per decision step per shooter.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{default_params, step_dynamics, AircraftParams, AircraftType, ControlInput};
use crate::geometry::{attack_angles, attitude_axis, normalize_feature, relative_distance, relative_geometry, Pose, Vec3, Wez};
use crate::num::wrap_angle;
use crate::rewards::StepSignals;

/// Own-aircraft block: x, y, altitude, speed, acceleration, roll, pitch, sin/cos heading.
pub const OWN_FEATURES: usize = 9;
/// Relative block: distance, aspect, antenna train, heading difference, closure, altitude delta.
pub const REL_FEATURES: usize = 6;
pub const LOW_OBS_DIM: usize = OWN_FEATURES + REL_FEATURES;
/// Own block, two closest opponents, nearest friendly.
pub const HIGH_OBS_DIM: usize = OWN_FEATURES + 3 * REL_FEATURES;
/// Per-aircraft block of the global state.
pub const GLOBAL_FEATURES: usize = 11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("episode already terminated")]
    Terminated,
    #[error("action supplied for dead agent {0}")]
    DeadAgentAction(usize),
    #[error("no action supplied for alive agent {0}")]
    MissingAction(usize),
    #[error("expected {expected} action slots, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("agent {0} is dead")]
    DeadAgent(usize),
    #[error("unknown agent {0}")]
    UnknownAgent(usize),
    #[error("invalid config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Team {
    Blue,
    Red,
}

impl Team {
    pub fn opponent(self) -> Team {
        match self {
            Team::Blue => Team::Red,
            Team::Red => Team::Blue,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CombatConfig {
    pub n_blue: usize,
    pub n_red: usize,
    /// Edge length of the square map, meters.
    pub map_size: f64,
    /// Decision steps per episode.
    pub horizon: u32,
    /// Physics substeps per decision step.
    pub action_repeat: u32,
    /// Physics step, seconds.
    pub dt: f64,
    pub rng_seed: u64,
    pub wez_kill_prob: f64,
    pub wez_range: f64,
    pub wez_span_deg: f64,
    /// Depth of each team's spawn region measured from the center line.
    pub spawn_depth: Option<f64>,
    /// Distance from the map edge kept free at spawn.
    pub spawn_margin: f64,
    pub spawn_altitude: (f64, f64),
    pub f16: AircraftParams<f64>,
    pub a4: AircraftParams<f64>,
}

impl Default for CombatConfig {
    fn default() -> Self {
        Self {
            n_blue: 1,
            n_red: 1,
            map_size: 50_000.0,
            horizon: 2_000,
            action_repeat: 10,
            dt: 0.01,
            rng_seed: 0,
            wez_kill_prob: 0.8,
            wez_range: 3_500.0,
            wez_span_deg: 8.0,
            spawn_depth: None,
            spawn_margin: 2_500.0,
            spawn_altitude: (2_000.0, 8_000.0),
            f16: default_params(AircraftType::F16),
            a4: default_params(AircraftType::A4),
        }
    }
}

impl CombatConfig {
    pub fn versus(n_blue: usize, n_red: usize) -> Self {
        Self { n_blue, n_red, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::Config(m));
        if self.n_blue == 0 || self.n_red == 0 {
            return bad("team sizes must be >= 1".into());
        }
        if self.horizon == 0 {
            return bad("horizon must be >= 1".into());
        }
        if self.action_repeat == 0 {
            return bad("action_repeat must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.wez_kill_prob) {
            return bad(format!("wez_kill_prob must lie in [0, 1], got {}", self.wez_kill_prob));
        }
        if !(self.dt > 0.0) || !(self.map_size > 0.0) {
            return bad("dt and map_size must be positive".into());
        }
        if !(self.spawn_margin >= 0.0 && 2.0 * self.spawn_margin < self.map_size / 2.0) {
            return bad("spawn_margin must leave room inside each map half".into());
        }
        let (lo, hi) = self.spawn_altitude;
        if !(lo < hi) {
            return bad("spawn_altitude must be an increasing pair".into());
        }
        for p in [&self.f16, &self.a4] {
            p.validate().map_err(|e| EnvError::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn params(&self, ty: AircraftType) -> &AircraftParams<f64> {
        match ty {
            AircraftType::F16 => &self.f16,
            AircraftType::A4 => &self.a4,
        }
    }

    pub fn wez(&self) -> Wez<f64> {
        Wez { range: self.wez_range, span: self.wez_span_deg.to_radians() }
    }

    pub fn n_aircraft(&self) -> usize {
        self.n_blue + self.n_red
    }

    fn max_speed(&self) -> f64 {
        self.f16.v_max.max(self.a4.v_max)
    }

    fn max_altitude(&self) -> f64 {
        self.f16.max_altitude.max(self.a4.max_altitude)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aircraft {
    pub id: usize,
    pub team: Team,
    pub params: AircraftParams<f64>,
    pub pose: Pose<f64>,
    pub alive: bool,
    /// Mean longitudinal acceleration over the last decision step.
    pub accel: f64,
}

impl Aircraft {
    pub fn kind(&self) -> AircraftType {
        self.params.type_tag
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Event {
    ShotFired { shooter: usize },
    Kill { shooter: usize, victim: usize, antenna_train: f64 },
    Crash { agent: usize },
    BoundaryExit { agent: usize },
}

impl Event {
    /// Agent removed from play by this event, if any.
    pub fn casualty(&self) -> Option<usize> {
        match *self {
            Event::Kill { victim, .. } => Some(victim),
            Event::Crash { agent } | Event::BoundaryExit { agent } => Some(agent),
            Event::ShotFired { .. } => None,
        }
    }

    /// Whether `id` is the shooter, victim or casualty.
    pub fn involves(&self, id: usize) -> bool {
        match *self {
            Event::ShotFired { shooter } => shooter == id,
            Event::Kill { shooter, victim, .. } => shooter == id || victim == id,
            Event::Crash { agent } | Event::BoundaryExit { agent } => agent == id,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoggedEvent {
    pub step: u32,
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub aircraft: Vec<Aircraft>,
    pub step: u32,
    pub horizon: u32,
    pub log: Vec<LoggedEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Win,
    Loss,
    Draw,
    Ongoing,
}

impl SimState {
    pub fn get(&self, id: usize) -> Result<&Aircraft, EnvError> {
        self.aircraft.get(id).ok_or(EnvError::UnknownAgent(id))
    }

    pub fn alive_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.aircraft.iter().filter(|a| a.alive).map(|a| a.id)
    }

    pub fn team_ids(&self, team: Team) -> impl Iterator<Item = usize> + '_ {
        self.aircraft.iter().filter(move |a| a.team == team).map(|a| a.id)
    }

    pub fn alive_count(&self, team: Team) -> usize {
        self.aircraft.iter().filter(|a| a.alive && a.team == team).count()
    }

    /// Blue's point of view. Mutual extinction scores as a loss.
    pub fn outcome(&self) -> Outcome {
        if self.alive_count(Team::Blue) == 0 {
            Outcome::Loss
        } else if self.alive_count(Team::Red) == 0 {
            Outcome::Win
        } else if self.step >= self.horizon {
            Outcome::Draw
        } else {
            Outcome::Ongoing
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.outcome() != Outcome::Ongoing
    }

    /// Live aircraft of `team` sorted by ascending distance from `from`.
    pub fn nearest(&self, from: usize, team: Team) -> Vec<(usize, f64)> {
        let origin = &self.aircraft[from].pose;
        let mut v: Vec<(usize, f64)> = self
            .aircraft
            .iter()
            .filter(|a| a.alive && a.team == team && a.id != from)
            .map(|a| (a.id, relative_distance(origin, &a.pose)))
            .collect();
        v.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        v
    }

    pub fn nearest_enemy(&self, from: usize) -> Option<(usize, f64)> {
        let team = self.aircraft[from].team.opponent();
        self.nearest(from, team).into_iter().next()
    }
}

/// Stateless combat engine; all episode state lives in [`SimState`].
#[derive(Debug, Clone)]
pub struct Combat {
    pub config: CombatConfig,
}

impl Combat {
    pub fn new(config: CombatConfig) -> Result<Self, EnvError> {
        config.validate()?;
        Ok(Self { config })
    }

    /// Random episode start. Blue takes a random half of the map.
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> SimState {
        self.reset_with_types(rng, None, None)
    }

    /// As [`Combat::reset`], with optional fixed aircraft types per team.
    pub fn reset_with_types<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        blue_types: Option<&[AircraftType]>,
        red_types: Option<&[AircraftType]>,
    ) -> SimState {
        let c = &self.config;
        let blue_west = rng.random_bool(0.5);
        let mut aircraft = Vec::with_capacity(c.n_aircraft());
        for (team, n, fixed) in [(Team::Blue, c.n_blue, blue_types), (Team::Red, c.n_red, red_types)] {
            let types = match fixed {
                Some(t) if t.len() == n => t.to_vec(),
                _ => draw_team_types(n, rng),
            };
            let west = (team == Team::Blue) == blue_west;
            for ty in types {
                let id = aircraft.len();
                aircraft.push(self.spawn(id, team, ty, west, rng));
            }
        }
        SimState { aircraft, step: 0, horizon: c.horizon, log: Vec::new() }
    }

    fn spawn<R: Rng + ?Sized>(&self, id: usize, team: Team, ty: AircraftType, west: bool, rng: &mut R) -> Aircraft {
        let c = &self.config;
        let half = c.map_size / 2.0;
        let depth = c.spawn_depth.unwrap_or(half - c.spawn_margin).clamp(1.0, half - c.spawn_margin);
        let offset = rng.random_range(0.0..depth);
        let x = if west { half - offset } else { half + offset };
        let y = rng.random_range(c.spawn_margin..c.map_size - c.spawn_margin);
        let z = rng.random_range(c.spawn_altitude.0..c.spawn_altitude.1);
        let heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let params = *c.params(ty);
        let speed = rng.random_range(
            params.v_min + 0.25 * (params.v_max - params.v_min)..params.v_min + 0.6 * (params.v_max - params.v_min),
        );
        let pose =
            Pose { position: Vec3::new(x, y, z), velocity: attitude_axis(heading, 0.0) * speed, roll: 0.0, pitch: 0.0, heading };
        Aircraft { id, team, params, pose, alive: true, accel: 0.0 }
    }

    /// Advances one decision step. `actions[id]` must be `Some` exactly for
    /// live aircraft.
    pub fn step<R: Rng + ?Sized>(
        &self,
        state: &mut SimState,
        actions: &[Option<ControlInput<f64>>],
        rng: &mut R,
    ) -> Result<Vec<Event>, EnvError> {
        if state.is_terminal() {
            return Err(EnvError::Terminated);
        }
        if actions.len() != state.aircraft.len() {
            return Err(EnvError::ActionCount { expected: state.aircraft.len(), got: actions.len() });
        }
        for (a, act) in state.aircraft.iter().zip(actions) {
            match (a.alive, act.is_some()) {
                (false, true) => return Err(EnvError::DeadAgentAction(a.id)),
                (true, false) => return Err(EnvError::MissingAction(a.id)),
                _ => {}
            }
        }

        let c = &self.config;
        let mut events = Vec::new();
        let start_speed: Vec<f64> = state.aircraft.iter().map(|a| a.pose.speed()).collect();
        for _ in 0..c.action_repeat {
            for a in state.aircraft.iter_mut().filter(|a| a.alive) {
                let u = actions[a.id].as_ref().expect("validated above");
                a.pose = step_dynamics(&a.pose, &a.params, u, c.dt);
                let p = a.pose.position;
                if p.z < a.params.min_altitude {
                    a.alive = false;
                    events.push(Event::Crash { agent: a.id });
                } else if p.x < 0.0 || p.x > c.map_size || p.y < 0.0 || p.y > c.map_size || p.z > a.params.max_altitude {
                    a.alive = false;
                    events.push(Event::BoundaryExit { agent: a.id });
                }
            }
        }
        let elapsed = c.dt * c.action_repeat as f64;
        for a in state.aircraft.iter_mut() {
            a.accel = if a.alive { (a.pose.speed() - start_speed[a.id]) / elapsed } else { 0.0 };
        }

        // cannon fire resolves simultaneously against the post-physics snapshot
        let wez = c.wez();
        let mut victims: Vec<usize> = Vec::new();
        for shooter in state.aircraft.iter().filter(|a| a.alive) {
            let fired = actions[shooter.id].is_some_and(|u| u.shoot);
            if !fired {
                continue;
            }
            events.push(Event::ShotFired { shooter: shooter.id });
            let target = state
                .aircraft
                .iter()
                .filter(|t| t.alive && t.team != shooter.team)
                .filter_map(|t| {
                    let d = relative_distance(&shooter.pose, &t.pose);
                    let (aspect, _) = attack_angles(&shooter.pose, &t.pose).ok()?;
                    wez.admits(d, aspect).then_some((t.id, d))
                })
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            if let Some((victim, _)) = target {
                let draw: f64 = rng.random();
                if draw < c.wez_kill_prob {
                    let (_, ata) = attack_angles(&shooter.pose, &state.aircraft[victim].pose).expect("distinct positions");
                    events.push(Event::Kill { shooter: shooter.id, victim, antenna_train: ata });
                    victims.push(victim);
                }
            }
        }
        for v in victims {
            let a = &mut state.aircraft[v];
            a.alive = false;
            a.accel = 0.0;
        }

        state.step += 1;
        let step = state.step;
        state.log.extend(events.iter().map(|&event| LoggedEvent { step, event }));
        Ok(events)
    }

    fn own_block(&self, a: &Aircraft, out: &mut Vec<f64>) {
        let c = &self.config;
        let p = &a.params;
        let n = |x, lo, hi| normalize_feature(x, lo, hi).expect("valid bounds");
        out.push(n(a.pose.position.x, 0.0, c.map_size));
        out.push(n(a.pose.position.y, 0.0, c.map_size));
        out.push(n(a.pose.position.z, p.min_altitude, p.max_altitude));
        out.push(n(a.pose.speed(), p.v_min, p.v_max));
        out.push(n(a.accel, -p.max_decel, p.max_accel));
        out.push((a.pose.roll / std::f64::consts::PI).clamp(-1.0, 1.0));
        out.push((a.pose.pitch / std::f64::consts::FRAC_PI_2).clamp(-1.0, 1.0));
        out.push(a.pose.heading.sin());
        out.push(a.pose.heading.cos());
    }

    fn relative_block(&self, from: &Aircraft, to: Option<&Aircraft>, out: &mut Vec<f64>) {
        let Some(to) = to else {
            out.extend([0.0; REL_FEATURES]);
            return;
        };
        let c = &self.config;
        let pi = std::f64::consts::PI;
        let n = |x, lo, hi| normalize_feature(x, lo, hi).expect("valid bounds");
        match relative_geometry(&from.pose, &to.pose) {
            Ok(g) => {
                let vmax = 2.0 * c.max_speed();
                let hmax = c.max_altitude();
                out.push(n(g.distance, 0.0, c.map_size));
                out.push(n(g.aspect, 0.0, pi));
                out.push(n(g.antenna_train, 0.0, pi));
                out.push(wrap_angle(to.pose.heading - from.pose.heading) / pi);
                out.push(n(g.closure_rate, -vmax, vmax));
                out.push(n(g.altitude_delta, -hmax, hmax));
            }
            Err(_) => out.extend([0.0; REL_FEATURES]),
        }
    }

    /// Own block followed by the nearest live enemy's relative block.
    pub fn observe_low(&self, state: &SimState, agent: usize) -> Result<Vec<f64>, EnvError> {
        let a = state.get(agent)?;
        if !a.alive {
            return Err(EnvError::DeadAgent(agent));
        }
        let mut out = Vec::with_capacity(LOW_OBS_DIM);
        self.own_block(a, &mut out);
        let enemy = state.nearest_enemy(agent).map(|(id, _)| &state.aircraft[id]);
        self.relative_block(a, enemy, &mut out);
        Ok(out)
    }

    /// Own block, two closest opponents, nearest friendly; absent entities zero.
    pub fn observe_high(&self, state: &SimState, agent: usize) -> Result<Vec<f64>, EnvError> {
        let a = state.get(agent)?;
        if !a.alive {
            return Err(EnvError::DeadAgent(agent));
        }
        let mut out = Vec::with_capacity(HIGH_OBS_DIM);
        self.own_block(a, &mut out);
        let enemies = state.nearest(agent, a.team.opponent());
        for k in 0..2 {
            self.relative_block(a, enemies.get(k).map(|(id, _)| &state.aircraft[*id]), &mut out);
        }
        let friend = state.nearest(agent, a.team).into_iter().next();
        self.relative_block(a, friend.map(|(id, _)| &state.aircraft[id]), &mut out);
        Ok(out)
    }

    /// One block per aircraft in id order, dead aircraft zero-filled.
    pub fn global_state(&self, state: &SimState) -> Vec<f64> {
        let c = &self.config;
        let mut out = Vec::with_capacity(state.aircraft.len() * GLOBAL_FEATURES);
        for a in &state.aircraft {
            if !a.alive {
                out.extend([0.0; GLOBAL_FEATURES]);
                continue;
            }
            let p = &a.params;
            let n = |x, lo, hi| normalize_feature(x, lo, hi).expect("valid bounds");
            out.push(1.0);
            out.push(if a.team == Team::Blue { 1.0 } else { -1.0 });
            out.push(if a.kind() == AircraftType::F16 { 1.0 } else { -1.0 });
            out.push(n(a.pose.position.x, 0.0, c.map_size));
            out.push(n(a.pose.position.y, 0.0, c.map_size));
            out.push(n(a.pose.position.z, p.min_altitude, p.max_altitude));
            out.push(n(a.pose.speed(), p.v_min, p.v_max));
            out.push((a.pose.roll / std::f64::consts::PI).clamp(-1.0, 1.0));
            out.push((a.pose.pitch / std::f64::consts::FRAC_PI_2).clamp(-1.0, 1.0));
            out.push(a.pose.heading.sin());
            out.push(a.pose.heading.cos());
        }
        out
    }

    /// Reward inputs for `agent` across one decision step.
    ///
    /// `tracked` is the enemy that was nearest before the step; the defend
    /// potential follows it while it survives.
    pub fn step_signals(
        &self,
        tracked: Option<(usize, f64)>,
        after: &SimState,
        agent: usize,
        shot: bool,
        events: &[Event],
    ) -> StepSignals<f64> {
        let event = events.iter().any(|e| e.casualty() == Some(agent));
        let kill_antenna_train = events.iter().find_map(|e| match *e {
            Event::Kill { shooter, antenna_train, .. } if shooter == agent => Some(antenna_train),
            _ => None,
        });
        let me = &after.aircraft[agent];
        let posture = if me.alive || event {
            after.nearest_enemy(agent).and_then(|(id, d)| {
                let (aa, ata) = attack_angles(&me.pose, &after.aircraft[id].pose).ok()?;
                Some((aa, ata, me.pose.roll, d))
            })
        } else {
            None
        };
        let distance_change = tracked.and_then(|(id, d_prev)| {
            let target = &after.aircraft[id];
            if target.alive {
                Some((d_prev, relative_distance(&me.pose, &target.pose)))
            } else {
                None
            }
        });
        StepSignals { shot, event, kill_antenna_train, posture, distance_change, map_size: self.config.map_size }
    }
}

/// At least one of each type when the team has two or more members.
fn draw_team_types<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<AircraftType> {
    let random = |rng: &mut R| if rng.random_bool(0.5) { AircraftType::F16 } else { AircraftType::A4 };
    if n < 2 {
        return (0..n).map(|_| random(rng)).collect();
    }
    let mut types = vec![AircraftType::F16, AircraftType::A4];
    types.extend((2..n).map(|_| random(rng)));
    // Fisher-Yates so the guaranteed pair lands in random slots
    for i in (1..types.len()).rev() {
        let j = rng.random_range(0..=i);
        types.swap(i, j);
    }
    types
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Every uniform draw is exactly 0.0.
    struct ZeroRng;

    impl rand::RngCore for ZeroRng {
        fn next_u32(&mut self) -> u32 {
            0
        }
        fn next_u64(&mut self) -> u64 {
            0
        }
        fn fill_bytes(&mut self, dst: &mut [u8]) {
            dst.fill(0);
        }
    }

    fn combat(n: usize) -> Combat {
        Combat::new(CombatConfig::versus(n, n)).unwrap()
    }

    fn place(a: &mut Aircraft, x: f64, y: f64, z: f64, heading: f64, speed: f64) {
        a.pose =
            Pose { position: Vec3::new(x, y, z), velocity: attitude_axis(heading, 0.0) * speed, roll: 0.0, pitch: 0.0, heading };
    }

    fn trim_actions(state: &SimState) -> Vec<Option<ControlInput<f64>>> {
        state.aircraft.iter().map(|a| a.alive.then(|| ControlInput::neutral(a.params.trim_throttle(a.pose.speed())))).collect()
    }

    #[test]
    fn reset_mixes_types() {
        let env = combat(3);
        for seed in 0..50 {
            let s = env.reset(&mut ChaCha8Rng::seed_from_u64(seed));
            for team in [Team::Blue, Team::Red] {
                let kinds: Vec<_> = s.team_ids(team).map(|i| s.aircraft[i].kind()).collect();
                assert!(kinds.contains(&AircraftType::F16) && kinds.contains(&AircraftType::A4));
            }
        }
    }

    #[test]
    fn reset_one_v_one_sides() {
        let env = combat(1);
        for seed in 0..20 {
            let s = env.reset(&mut ChaCha8Rng::seed_from_u64(seed));
            assert_eq!(s.aircraft.len(), 2);
            let half = env.config.map_size / 2.0;
            let bw = s.aircraft[0].pose.position.x < half;
            let rw = s.aircraft[1].pose.position.x < half;
            assert_ne!(bw, rw);
            assert!(s.aircraft.iter().all(|a| a.alive));
        }
        let a = env.reset(&mut ChaCha8Rng::seed_from_u64(5));
        let b = env.reset(&mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn quiet_step_has_no_events() {
        let env = combat(1);
        let mut s = env.reset(&mut ChaCha8Rng::seed_from_u64(1));
        let acts = trim_actions(&s);
        let ev = env.step(&mut s, &acts, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(ev.is_empty());
        assert_eq!(s.step, 1);
    }

    #[test]
    fn forced_kill_records_antenna_train() {
        let env = combat(1);
        let mut s = env.reset(&mut ChaCha8Rng::seed_from_u64(1));
        place(&mut s.aircraft[0], 20_000.0, 20_000.0, 5_000.0, 0.0, 200.0);
        place(&mut s.aircraft[1], 20_000.0, 21_500.0, 5_000.0, 0.0, 200.0);
        let mut acts = trim_actions(&s);
        acts[0].as_mut().unwrap().shoot = true;
        let mut zero = ZeroRng;
        let ev = env.step(&mut s, &acts, &mut zero).unwrap();
        assert!(matches!(ev[0], Event::ShotFired { shooter: 0 }));
        match ev[1] {
            Event::Kill { shooter, victim, antenna_train } => {
                assert_eq!((shooter, victim), (0, 1));
                assert!(antenna_train.abs() < 1e-9);
            }
            other => panic!("expected kill, got {other:?}"),
        }
        assert!(!s.aircraft[1].alive);
        assert_eq!(s.outcome(), Outcome::Win);
        assert_eq!(env.step(&mut s, &[None, None], &mut zero), Err(EnvError::Terminated));
    }

    #[test]
    fn ground_contact_crashes() {
        let env = combat(1);
        let mut s = env.reset(&mut ChaCha8Rng::seed_from_u64(1));
        place(&mut s.aircraft[0], 20_000.0, 20_000.0, 60.0, 0.0, 200.0);
        let mut acts = trim_actions(&s);
        acts[0].as_mut().unwrap().elevator = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut crashed = false;
        for _ in 0..20 {
            let ev = env.step(&mut s, &acts, &mut rng).unwrap();
            if ev.contains(&Event::Crash { agent: 0 }) {
                crashed = true;
                break;
            }
        }
        assert!(crashed);
        assert!(!s.aircraft[0].alive);
        let acts = trim_actions(&s);
        let mut bad = acts.clone();
        bad[0] = Some(ControlInput::neutral(0.5));
        if !s.is_terminal() {
            assert_eq!(env.step(&mut s, &bad, &mut rng), Err(EnvError::DeadAgentAction(0)));
        }
        assert_eq!(s.outcome(), Outcome::Loss);
    }

    #[test]
    fn missing_action_rejected() {
        let env = combat(1);
        let mut s = env.reset(&mut ChaCha8Rng::seed_from_u64(1));
        let acts = vec![Some(ControlInput::neutral(0.5)), None];
        assert_eq!(env.step(&mut s, &acts, &mut ZeroRng), Err(EnvError::MissingAction(1)));
    }

    #[test]
    fn observation_blocks() {
        let env = combat(1);
        let mut s = env.reset(&mut ChaCha8Rng::seed_from_u64(1));
        place(&mut s.aircraft[0], 25_000.0, 20_000.0, 5_000.0, 0.0, 200.0);
        place(&mut s.aircraft[1], 25_000.0, 30_000.0, 5_000.0, -std::f64::consts::PI, 200.0);
        let o0 = env.observe_low(&s, 0).unwrap();
        let o1 = env.observe_low(&s, 1).unwrap();
        assert_eq!(o0.len(), LOW_OBS_DIM);
        for k in 0..3 {
            assert!((o0[OWN_FEATURES + k] - o1[OWN_FEATURES + k]).abs() < 1e-12);
        }
        s.aircraft[1].alive = false;
        let o0 = env.observe_low(&s, 0).unwrap();
        assert!(o0[OWN_FEATURES..].iter().all(|&x| x == 0.0));
        assert_eq!(env.observe_low(&s, 1), Err(EnvError::DeadAgent(1)));
    }

    #[test]
    fn high_observation_layout() {
        let env = combat(3);
        let s = env.reset(&mut ChaCha8Rng::seed_from_u64(4));
        let z = env.observe_high(&s, 0).unwrap();
        assert_eq!(z.len(), HIGH_OBS_DIM);
        for k in 0..3 {
            let block = &z[OWN_FEATURES + k * REL_FEATURES..OWN_FEATURES + (k + 1) * REL_FEATURES];
            assert!(block.iter().any(|&x| x != 0.0));
        }
        let env1 = combat(1);
        let s = env1.reset(&mut ChaCha8Rng::seed_from_u64(4));
        let z = env1.observe_high(&s, 0).unwrap();
        assert!(z[OWN_FEATURES + REL_FEATURES..].iter().all(|&x| x == 0.0));
        assert!(z[OWN_FEATURES..OWN_FEATURES + REL_FEATURES].iter().any(|&x| x != 0.0));
    }

    #[test]
    fn global_state_zero_fills_dead() {
        let env = combat(2);
        let mut s = env.reset(&mut ChaCha8Rng::seed_from_u64(4));
        let g = env.global_state(&s);
        assert_eq!(g.len(), 4 * GLOBAL_FEATURES);
        s.aircraft[2].alive = false;
        let g2 = env.global_state(&s);
        assert_eq!(g2.len(), g.len());
        assert!(g2[2 * GLOBAL_FEATURES..3 * GLOBAL_FEATURES].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn outcome_rules() {
        let env = combat(2);
        let mut s = env.reset(&mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(s.outcome(), Outcome::Ongoing);
        s.step = s.horizon;
        assert_eq!(s.outcome(), Outcome::Draw);
        s.step = 0;
        for id in [2, 3] {
            s.aircraft[id].alive = false;
        }
        assert_eq!(s.outcome(), Outcome::Win);
        for id in [0, 1] {
            s.aircraft[id].alive = false;
        }
        assert_eq!(s.outcome(), Outcome::Loss);
    }

    #[test]
    fn invalid_config_rejected() {
        let c = CombatConfig { wez_kill_prob: 1.5, ..CombatConfig::default() };
        assert!(Combat::new(c).is_err());
        let c = CombatConfig { n_red: 0, ..CombatConfig::default() };
        assert!(Combat::new(c).is_err());
    }
}
