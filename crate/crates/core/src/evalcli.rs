//! Batch evaluation, win/draw/loss tables, trajectory export and metrics
//! reports.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::ControlInput;
use crate::environment::{Combat, CombatConfig, EnvError, Outcome, SimState, Team};
use crate::hierarchy::{
    commander_step, control_from_action, fc_input, low_input, maneuver_option, run_option, HierarchyError, OptionConfig,
    OptionRecord, PolicyBank, PolicySlot, Role, TraceRow, MAX_OPTION_DURATION,
};
use crate::netlib::{ActorCritic, HeadKind, NetError, SampleMode};
use crate::optim::Surrogate;
use crate::rewards::{Maneuver, RewardConstants, Rewards};
use crate::training::{episode_rng, MetricsRecord, MixedStrategy};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("bad scenario `{0}` (expected e.g. 3v3)")]
    Scenario(String),
    #[error("policy is not a full-observability controller")]
    NotFullyConnected,
    #[error("export file has no header record")]
    MissingHeader,
    #[error("malformed record on line {line}: {message}")]
    Record { line: usize, message: String },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Team sizes, written `NvM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scenario {
    pub blue: usize,
    pub red: usize,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}v{}", self.blue, self.red)
    }
}

impl FromStr for Scenario {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || EvalError::Scenario(s.to_string());
        let (a, b) = s.to_ascii_lowercase().split_once('v').map(|(a, b)| (a.to_string(), b.to_string())).ok_or_else(bad)?;
        let blue: usize = a.trim().parse().map_err(|_| bad())?;
        let red: usize = b.trim().parse().map_err(|_| bad())?;
        if blue == 0 || red == 0 {
            return Err(bad());
        }
        Ok(Scenario { blue, red })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "MA-SPO")]
    MaSpo,
    #[serde(rename = "MA-PPO")]
    MaPpo,
    #[serde(rename = "FC")]
    Fc,
}

impl ModelKind {
    pub fn hierarchical(surrogate: Surrogate) -> Self {
        match surrogate {
            Surrogate::Spo => ModelKind::MaSpo,
            Surrogate::Ppo => ModelKind::MaPpo,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::MaSpo => "MA-SPO",
            ModelKind::MaPpo => "MA-PPO",
            ModelKind::Fc => "FC",
        })
    }
}

/// Non-hierarchical controller acting on the full global state.
#[derive(Debug, Clone, Copy)]
pub struct FcController<'a> {
    pub net: &'a ActorCritic<f64>,
}

impl FcController<'_> {
    /// Input width the controller expects.
    pub fn observation_len(&self) -> usize {
        self.net.spec.actor.flat_dim
    }

    pub fn act<R: Rng + ?Sized>(
        &self,
        combat: &Combat,
        state: &SimState,
        agent: usize,
        mode: SampleMode,
        rng: &mut R,
    ) -> Result<ControlInput<f64>, EvalError> {
        if !state.get(agent)?.alive {
            return Err(EnvError::DeadAgent(agent).into());
        }
        let s = self.net.actor.sample(&fc_input(combat, state, agent), rng, mode)?;
        Ok(control_from_action(&s.action))
    }
}

/// Wraps a trained full-observability policy as a blue controller.
pub fn fc_baseline_wrapper(slot: &PolicySlot) -> Result<FcController<'_>, EvalError> {
    if slot.role != Role::FullyConnected || slot.net().spec.head != HeadKind::Control {
        return Err(EvalError::NotFullyConnected);
    }
    Ok(FcController { net: slot.net() })
}

/// What flies the blue team.
#[derive(Debug, Clone, Copy)]
pub enum BlueModel<'a> {
    Hierarchical { bank: &'a PolicyBank, kind: ModelKind },
    Fc(FcController<'a>),
}

impl BlueModel<'_> {
    pub fn kind(&self) -> ModelKind {
        match self {
            BlueModel::Hierarchical { kind, .. } => *kind,
            BlueModel::Fc(_) => ModelKind::Fc,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// Environment with the scenario's team sizes and evaluation horizon.
    pub env: CombatConfig,
    pub rewards: RewardConstants,
    pub episodes: usize,
    /// Red maneuver mix, drawn per aircraft per episode.
    pub mix: MixedStrategy,
    pub seed: u64,
    pub workers: usize,
    /// Sampling mode of the low-level policies. Commanders always sample.
    pub low_mode: SampleMode,
    pub max_option_duration: u32,
}

/// Horizon multiplier applied to the training horizon.
pub const EVAL_HORIZON_FACTOR: u32 = 10;

impl EvalConfig {
    pub fn new(base: &CombatConfig, scenario: Scenario) -> Self {
        let env = CombatConfig {
            n_blue: scenario.blue,
            n_red: scenario.red,
            horizon: base.horizon.saturating_mul(EVAL_HORIZON_FACTOR),
            ..base.clone()
        };
        Self {
            env,
            rewards: RewardConstants::default(),
            episodes: 1_000,
            mix: MixedStrategy::AGGRESSIVE,
            seed: 0,
            workers: 1,
            low_mode: SampleMode::Stochastic,
            max_option_duration: MAX_OPTION_DURATION,
        }
    }

    pub fn scenario(&self) -> Scenario {
        Scenario { blue: self.env.n_blue, red: self.env.n_red }
    }
}

/// Mean share of blue option activations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionFrequencies {
    pub attack: f64,
    pub engage: f64,
    pub defend: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: Scenario,
    pub model: ModelKind,
    pub episodes: usize,
    pub wins: usize,
    pub draws: usize,
    pub losses: usize,
    pub win_pct: f64,
    pub draw_pct: f64,
    pub loss_pct: f64,
    /// Absent for models without options.
    pub frequencies: Option<OptionFrequencies>,
}

/// Per-episode tally, the only input of [`tabulate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode: u64,
    pub outcome: Outcome,
    pub steps: u32,
    /// Blue activations per aircraft type (by index) and option.
    pub option_counts: [[u64; 3]; 2],
}

/// Win/draw/loss shares and option frequencies. Frequencies are averaged
/// over (episode, aircraft type) pairs with at least one activation.
pub fn tabulate(summaries: &[EpisodeSummary], scenario: Scenario, model: ModelKind) -> EvalReport {
    let count = |o: Outcome| summaries.iter().filter(|s| s.outcome == o).count();
    let (wins, draws, losses) = (count(Outcome::Win), count(Outcome::Draw), count(Outcome::Loss));
    let n = summaries.len();
    let pct = |k: usize| if n == 0 { 0.0 } else { 100.0 * k as f64 / n as f64 };
    let mut sums = [0.0f64; 3];
    let mut pairs = 0usize;
    for s in summaries {
        for counts in &s.option_counts {
            let total: u64 = counts.iter().sum();
            if total == 0 {
                continue;
            }
            for (acc, &c) in sums.iter_mut().zip(counts) {
                *acc += c as f64 / total as f64;
            }
            pairs += 1;
        }
    }
    let frequencies = (pairs > 0).then(|| {
        let p = pairs as f64;
        OptionFrequencies {
            defend: sums[maneuver_option(Maneuver::Defend)] / p,
            engage: sums[maneuver_option(Maneuver::Engage)] / p,
            attack: sums[maneuver_option(Maneuver::Attack)] / p,
        }
    });
    EvalReport {
        scenario,
        model,
        episodes: n,
        wins,
        draws,
        losses,
        win_pct: pct(wins),
        draw_pct: pct(draws),
        loss_pct: pct(losses),
        frequencies,
    }
}

/// One line of a trajectory export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExportRecord {
    Header {
        scenario: Scenario,
        model: ModelKind,
        episodes: usize,
        seed: u64,
        mix: MixedStrategy,
    },
    Step {
        episode: u64,
        #[serde(flatten)]
        row: TraceRow,
    },
    Option {
        episode: u64,
        #[serde(flatten)]
        record: OptionRecord,
    },
    Episode {
        episode: u64,
        outcome: Outcome,
        steps: u32,
    },
}

struct EpisodeRun {
    summary: EpisodeSummary,
    records: Vec<ExportRecord>,
}

fn count_option(counts: &mut [[u64; 3]; 2], rec: &OptionRecord) {
    if rec.team == Team::Blue {
        counts[rec.aircraft.index()][rec.option] += 1;
    }
}

fn run_episode(
    blue: &BlueModel,
    red_bank: &PolicyBank,
    cfg: &EvalConfig,
    combat: &Combat,
    rewards: &Rewards<f64>,
    index: u64,
    trace: bool,
) -> Result<EpisodeRun, EvalError> {
    let mut rng = episode_rng(&[cfg.seed, 0xe7a1, index]);
    let mut state = combat.reset(&mut rng);
    let n = state.aircraft.len();
    let red_options: Vec<Option<usize>> =
        state.aircraft.iter().map(|a| (a.team == Team::Red).then(|| maneuver_option(cfg.mix.sample(&mut rng)))).collect();
    let mut counts = [[0u64; 3]; 2];
    let mut records = Vec::new();
    match *blue {
        BlueModel::Hierarchical { bank, .. } => {
            let ocfg = OptionConfig {
                max_duration: cfg.max_option_duration,
                low_mode: cfg.low_mode,
                record_low: false,
                trace,
                gamma: 1.0,
            };
            while !state.is_terminal() {
                let mut options: Vec<Option<usize>> =
                    (0..n).map(|i| if state.aircraft[i].alive { red_options[i] } else { None }).collect();
                for d in commander_step(bank, combat, &state, Team::Blue, SampleMode::Stochastic, &mut rng)? {
                    options[d.agent] = Some(d.option);
                }
                let epoch = run_option(combat, &mut state, &options, [bank, red_bank], rewards, &ocfg, &mut rng)?;
                for rec in &epoch.records {
                    count_option(&mut counts, rec);
                }
                if trace {
                    records.extend(epoch.trace.into_iter().map(|row| ExportRecord::Step { episode: index, row }));
                    records.extend(epoch.records.into_iter().map(|record| ExportRecord::Option { episode: index, record }));
                }
            }
        }
        BlueModel::Fc(fc) => {
            let red_nets: Vec<Option<&ActorCritic<f64>>> = state
                .aircraft
                .iter()
                .zip(&red_options)
                .map(|(a, o)| {
                    o.map(|o| red_bank.low(a.kind(), crate::hierarchy::option_maneuver(o).expect("valid option")).net())
                })
                .collect();
            while !state.is_terminal() {
                let mut actions = vec![None; n];
                let mut pending = Vec::new();
                for id in state.alive_ids().collect::<Vec<_>>() {
                    let u = match red_nets[id] {
                        Some(net) => {
                            let s = net.actor.sample(&low_input(combat.observe_low(&state, id)?), &mut rng, cfg.low_mode)?;
                            control_from_action(&s.action)
                        }
                        None => fc.act(combat, &state, id, cfg.low_mode, &mut rng)?,
                    };
                    actions[id] = Some(u);
                    pending.push((id, state.nearest_enemy(id), u, state.aircraft[id].pose));
                }
                let step = state.step;
                let events = combat.step(&mut state, &actions, &mut rng)?;
                if trace {
                    for (id, tracked, u, pose) in pending {
                        let signals = combat.step_signals(tracked, &state, id, u.shoot, &events);
                        let option = red_options[id];
                        let maneuver =
                            option.map_or(Maneuver::Attack, |o| crate::hierarchy::option_maneuver(o).expect("valid option"));
                        let a = &state.aircraft[id];
                        records.push(ExportRecord::Step {
                            episode: index,
                            row: TraceRow {
                                step,
                                agent: id,
                                team: a.team,
                                aircraft: a.kind(),
                                option,
                                pose,
                                control: u,
                                reward: rewards.step_reward(maneuver, &signals),
                                commander_reward: rewards.commander_reward(signals.event, signals.kill_antenna_train),
                                events: events.iter().filter(|e| e.involves(id)).copied().collect(),
                            },
                        });
                    }
                }
            }
        }
    }
    let summary = EpisodeSummary { episode: index, outcome: state.outcome(), steps: state.step, option_counts: counts };
    if trace {
        records.push(ExportRecord::Episode { episode: index, outcome: summary.outcome, steps: summary.steps });
    }
    Ok(EpisodeRun { summary, records })
}

/// Runs `cfg.episodes` episodes and tabulates them. With `export`, every
/// episode's records are written as JSON lines after a header, in episode
/// order.
pub fn evaluate_into(
    blue: BlueModel,
    red_bank: &PolicyBank,
    cfg: &EvalConfig,
    mut export: Option<&mut dyn Write>,
) -> Result<EvalReport, EvalError> {
    let combat = Combat::new(cfg.env.clone())?;
    let rewards = Rewards::new(&cfg.rewards);
    let trace = export.is_some();
    if let Some(w) = export.as_deref_mut() {
        let header = ExportRecord::Header {
            scenario: cfg.scenario(),
            model: blue.kind(),
            episodes: cfg.episodes,
            seed: cfg.seed,
            mix: cfg.mix,
        };
        write_record(w, &header)?;
    }
    let workers = cfg.workers.max(1) as u64;
    let total = cfg.episodes as u64;
    let mut summaries = Vec::with_capacity(cfg.episodes);
    let mut start = 0u64;
    while start < total {
        let end = (start + workers).min(total);
        let run = |i: u64| run_episode(&blue, red_bank, cfg, &combat, &rewards, i, trace);
        let chunk: Vec<Result<EpisodeRun, EvalError>> = if end - start == 1 {
            vec![run(start)]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = (start..end).map(|i| s.spawn(move || run(i))).collect();
                handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
            })
        };
        for r in chunk {
            let r = r?;
            if let Some(w) = export.as_deref_mut() {
                for rec in &r.records {
                    write_record(w, rec)?;
                }
            }
            summaries.push(r.summary);
        }
        start = end;
    }
    Ok(tabulate(&summaries, cfg.scenario(), blue.kind()))
}

pub fn evaluate(blue: BlueModel, red_bank: &PolicyBank, cfg: &EvalConfig) -> Result<EvalReport, EvalError> {
    evaluate_into(blue, red_bank, cfg, None)
}

fn write_record(w: &mut dyn Write, rec: &ExportRecord) -> Result<(), EvalError> {
    let line = serde_json::to_string(rec).map_err(|e| EvalError::Record { line: 0, message: e.to_string() })?;
    writeln!(w, "{line}")?;
    Ok(())
}

/// Rebuilds the report of an export from its episode and option records.
pub fn retabulate<R: BufRead>(reader: R) -> Result<EvalReport, EvalError> {
    let mut header = None;
    let mut order: Vec<u64> = Vec::new();
    let mut summaries: BTreeMap<u64, EpisodeSummary> = BTreeMap::new();
    let mut counts: BTreeMap<u64, [[u64; 3]; 2]> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ExportRecord =
            serde_json::from_str(&line).map_err(|e| EvalError::Record { line: i + 1, message: e.to_string() })?;
        match rec {
            ExportRecord::Header { scenario, model, .. } => header = Some((scenario, model)),
            ExportRecord::Step { .. } => {}
            ExportRecord::Option { episode, record } => count_option(counts.entry(episode).or_default(), &record),
            ExportRecord::Episode { episode, outcome, steps } => {
                order.push(episode);
                summaries.insert(episode, EpisodeSummary { episode, outcome, steps, option_counts: [[0; 3]; 2] });
            }
        }
    }
    let (scenario, model) = header.ok_or(EvalError::MissingHeader)?;
    let list: Vec<EpisodeSummary> = order
        .iter()
        .map(|e| {
            let mut s = summaries[e].clone();
            s.option_counts = counts.get(e).copied().unwrap_or_default();
            s
        })
        .collect();
    Ok(tabulate(&list, scenario, model))
}

/// Fixed-width table of win, draw and loss rates with option frequencies. FC
/// rows show 100 under the attack/FC column and dashes elsewhere.
pub fn format_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8} {:<7} {:>8} {:>8} {:>8} {:>10} {:>8} {:>8} {:>9}",
        "scenario", "model", "win%", "draw%", "loss%", "pi_a/fc%", "pi_e%", "pi_d%", "episodes"
    );
    for r in reports {
        let (a, e, d) = match (r.model, r.frequencies) {
            (_, Some(f)) => {
                (format!("{:.1}", 100.0 * f.attack), format!("{:.1}", 100.0 * f.engage), format!("{:.1}", 100.0 * f.defend))
            }
            (ModelKind::Fc, None) => ("100.0".to_string(), "-".to_string(), "-".to_string()),
            (_, None) => ("-".to_string(), "-".to_string(), "-".to_string()),
        };
        let _ = writeln!(
            out,
            "{:<8} {:<7} {:>8.1} {:>8.1} {:>8.1} {:>10} {:>8} {:>8} {:>9}",
            r.scenario.to_string(),
            r.model.to_string(),
            r.win_pct,
            r.draw_pct,
            r.loss_pct,
            a,
            e,
            d,
            r.episodes
        );
    }
    out
}

/// Summary table plus a CSV series of reward against samples.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub summary: String,
    pub series: String,
}

pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRecord>, EvalError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| EvalError::Record { line: i + 1, message: e.to_string() }))
        .collect()
}

/// Pure function of the metrics file contents.
pub fn report(text: &str) -> Result<MetricsReport, EvalError> {
    let records = parse_metrics(text)?;
    let mut series = String::from("policy,stage,iteration,samples,mean_step_reward,mean_trajectory_reward,total_loss\n");
    let mut by_policy: BTreeMap<&str, Vec<&MetricsRecord>> = BTreeMap::new();
    for r in &records {
        let _ = writeln!(
            series,
            "{},{},{},{},{},{},{}",
            r.policy, r.stage, r.iteration, r.samples, r.update.mean_step_reward, r.mean_trajectory_reward, r.update.total_loss
        );
        by_policy.entry(r.policy.as_str()).or_default().push(r);
    }
    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "{:<16} {:>10} {:>6} {:>10} {:>14} {:>14} {:>14}",
        "policy", "stage", "iters", "samples", "first_reward", "last_reward", "best_reward"
    );
    for (policy, rs) in &by_policy {
        let first = rs.first().expect("non-empty group");
        let last = rs.last().expect("non-empty group");
        let best = rs.iter().map(|r| r.update.mean_step_reward).fold(f64::NEG_INFINITY, f64::max);
        let _ = writeln!(
            summary,
            "{:<16} {:>10} {:>6} {:>10} {:>14.6} {:>14.6} {:>14.6}",
            policy,
            last.stage.to_string(),
            rs.len(),
            last.samples,
            first.update.mean_step_reward,
            last.update.mean_step_reward,
            best
        );
    }
    Ok(MetricsReport { summary, series })
}
