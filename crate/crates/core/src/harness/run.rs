//! Episode loop shared by training, evaluation and the rule-based controllers.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use log::info;
use rayon::prelude::*;

use super::output::{
    content_hash, write_atomic, write_csv, AmendTotals, AuditCsvRow, CsvSink, MetricsRow, RunManifest, RunStatus,
    ScoreRow, TraceRow, AUDIT_HEADER, METRICS_HEADER, SCORE_HEADER, TRACE_HEADER,
};
use super::{ExperimentConfig, HarnessError, Method, ScenarioConfig};
use crate::agent::checkpoint::{load_matching, write_checkpoint};
use crate::agent::{
    act, sync_target, train_step, EpsilonSchedule, LocalView, OptimizerState, QArch, QFunction, TargetQFunction,
    Transition,
};
use crate::attention::score_row;
use crate::baselines::{fixed_time_act, max_pressure_act, FixedTimePlan};
use crate::coordination::{amend, AmendedBuffer, CoordinationError, RawBuffer, RawEntry, ScoreSource, UnitWeights};
use crate::rng::{stream, StreamRng};
use crate::roadnet::{flows_to_json, generate_synthetic, parse_flow, parse_roadnet, FlowSpec, RoadNetwork};
use crate::simulator::SimState;

/// A loaded network with its demand.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub network: Arc<RoadNetwork>,
    pub flows: Vec<FlowSpec>,
    pub label: String,
}

pub fn load_scenario(scenario: &ScenarioConfig) -> Result<Scenario, HarnessError> {
    match scenario {
        ScenarioConfig::Files { roadnet, flow } => {
            let net_bytes = std::fs::read(roadnet).map_err(|e| HarnessError::io(roadnet, e))?;
            let flow_bytes = std::fs::read(flow).map_err(|e| HarnessError::io(flow, e))?;
            let network = parse_roadnet(&net_bytes)?;
            let flows = parse_flow(&flow_bytes, &network)?;
            let label = roadnet
                .file_stem()
                .map(|s| s.to_string_lossy().trim_end_matches(".roadnet").to_string())
                .unwrap_or_else(|| "scenario".into());
            Ok(Scenario {
                network: Arc::new(network),
                flows,
                label,
            })
        }
        ScenarioConfig::Synthetic(spec) => {
            let s = generate_synthetic(spec)?;
            Ok(Scenario {
                network: Arc::new(s.network),
                flows: s.flows,
                label: spec.label(),
            })
        }
    }
}

/// Static per-run layout: which intersection each agent controls, who its
/// neighbours are and how wide its inputs are.
struct Env {
    scenario: Scenario,
    initial: SimState,
    agents: Vec<usize>,
    ids: Vec<String>,
    neighbors: Vec<Vec<usize>>,
    own_dims: Vec<usize>,
    pad_dim: usize,
    actions: Vec<usize>,
    attention: bool,
    count_scale: f64,
}

impl Env {
    fn new(cfg: &ExperimentConfig, scenario: Scenario) -> Result<Self, HarnessError> {
        let initial = SimState::with_horizon(
            Arc::clone(&scenario.network),
            &scenario.flows,
            cfg.seed,
            cfg.sim,
            cfg.episode_seconds,
        )?;
        let net = &scenario.network;
        let agents = initial.agents().to_vec();
        let ids = agents.iter().map(|&x| net.intersections[x].id.clone()).collect();
        let neighbors = agents
            .iter()
            .map(|&x| {
                net.neighbors(x)
                    .iter()
                    .map(|&y| initial.agent_of(y).expect("neighbours are signalized"))
                    .collect()
            })
            .collect();
        let own_dims: Vec<usize> = agents.iter().map(|&x| initial.observe(x).dim()).collect();
        let pad_dim = own_dims.iter().copied().max().unwrap_or(0);
        let actions = agents.iter().map(|&x| net.intersections[x].phases.len()).collect();
        Ok(Env {
            scenario,
            initial,
            agents,
            ids,
            neighbors,
            own_dims,
            pad_dim,
            actions,
            attention: cfg.method.uses_attention(),
            count_scale: cfg.agent.count_scale,
        })
    }

    fn arch(&self, cfg: &ExperimentConfig, k: usize) -> QArch {
        if self.attention {
            QArch::with_attention(self.pad_dim, cfg.agent.hidden.clone(), self.actions[k], cfg.agent.attention_dim)
        } else {
            QArch::plain(self.own_dims[k], cfg.agent.hidden.clone(), self.actions[k])
        }
    }

    fn features(&self, sim: &SimState) -> Vec<Arc<[f64]>> {
        self.agents
            .iter()
            .map(|&x| {
                let mut f = sim.observe(x).to_features(self.count_scale);
                if self.attention {
                    f.resize(self.pad_dim, 0.0);
                }
                f.into()
            })
            .collect()
    }

    fn views(&self, feats: &[Arc<[f64]>]) -> Vec<LocalView> {
        (0..self.agents.len())
            .map(|k| {
                let mut slots = vec![Arc::clone(&feats[k])];
                if self.attention {
                    slots.extend(self.neighbors[k].iter().map(|&j| Arc::clone(&feats[j])));
                }
                LocalView::new(slots)
            })
            .collect()
    }

    fn input_hash(&self, cfg: &ExperimentConfig) -> String {
        let config = serde_json::to_vec(cfg).expect("config serializes");
        let net = self.scenario.network.to_json();
        let flows = flows_to_json(&self.scenario.flows);
        content_hash(&[&config, net.as_bytes(), flows.as_bytes()])
    }

    fn step(&self, sim: &mut SimState, actions: &[usize], cfg: &ExperimentConfig) -> Result<(), HarnessError> {
        for _ in 0..cfg.ticks_per_step() {
            sim.step(actions, cfg.tick)?;
        }
        Ok(())
    }

    fn finish_episode(&self, sim: &SimState, episode: usize) -> Result<MetricsRow, HarnessError> {
        let census = sim.census();
        if !census.conserved() {
            return Err(HarnessError::Conservation { episode, census });
        }
        let m = sim.metrics();
        Ok(MetricsRow {
            episode,
            avg_travel_time_s: m.avg_travel_time,
            throughput: m.throughput,
            mean_queue: m.mean_queue,
        })
    }

    fn trace(&self, sim: &SimState, rows: &mut Vec<TraceRow>) {
        for (k, &x) in self.agents.iter().enumerate() {
            rows.push(TraceRow {
                t: sim.clock(),
                intersection: self.ids[k].clone(),
                phase: sim.current_phase(x),
                waiting_total: (-sim.raw_reward(x)) as usize,
            });
        }
    }
}

/// Everything one learning agent owns.
struct Learner {
    eval: QFunction,
    target: TargetQFunction,
    opt: OptimizerState,
    explore: StreamRng,
    sample: StreamRng,
}

/// Target attention of each sender, read inside the amendment barrier.
struct TargetScores<'a> {
    learners: &'a [Learner],
}

impl ScoreSource for TargetScores<'_> {
    fn row(&self, j: usize, entry: &RawEntry) -> Result<Option<Vec<f64>>, CoordinationError> {
        score_row(self.learners[j].target.as_q(), &entry.transition.obs)
            .map_err(|e| CoordinationError::Contract(e.to_string()))
    }
}

/// Sinks for optional per-run artefacts.
struct Sinks {
    audit: Option<CsvSink>,
    scores: Option<CsvSink>,
}

impl Sinks {
    fn open(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Self, HarnessError> {
        let Some(out) = out else {
            return Ok(Sinks {
                audit: None,
                scores: None,
            });
        };
        let audit = if cfg.output.audit && cfg.method.is_learned() {
            Some(CsvSink::create(&out.join("audit.csv"), &AUDIT_HEADER)?)
        } else {
            None
        };
        let scores = if cfg.output.scores && cfg.method.uses_attention() {
            Some(CsvSink::create(&out.join("scores.csv"), &SCORE_HEADER)?)
        } else {
            None
        };
        Ok(Sinks { audit, scores })
    }

    fn finish(self, files: &mut Vec<String>) -> Result<(), HarnessError> {
        if let Some(s) = self.audit {
            s.finish()?;
            files.push("audit.csv".into());
        }
        if let Some(s) = self.scores {
            s.finish()?;
            files.push("scores.csv".into());
        }
        Ok(())
    }
}

/// Result of a training run together with the trained networks.
pub struct TrainOutcome {
    pub manifest: RunManifest,
    /// `(intersection id, eval network)` per agent; empty for rule-based methods.
    pub networks: Vec<(String, QFunction)>,
    pub trace: Vec<TraceRow>,
}

/// Runs the configured method for `episodes` episodes, then one greedy
/// evaluation episode. With `out`, writes the metrics CSV, optional audit,
/// score and trace CSVs, a checkpoint and the manifest.
pub fn train(config: &ExperimentConfig, out: Option<&Path>) -> Result<RunManifest, HarnessError> {
    train_full(config, out).map(|o| o.manifest)
}

pub fn train_full(config: &ExperimentConfig, out: Option<&Path>) -> Result<TrainOutcome, HarnessError> {
    let cfg = config.resolved();
    cfg.validate()?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let started = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let result = pool.install(|| run(&cfg, out));
    match result {
        Ok(mut outcome) => {
            outcome.manifest.wall_clock_s = started.elapsed().as_secs_f64();
            if let Some(dir) = out {
                write_outputs(dir, &mut outcome)?;
            }
            Ok(outcome)
        }
        Err(e) => {
            if let Some(dir) = out {
                let manifest = RunManifest {
                    status: RunStatus::Failed,
                    method: cfg.method.to_string(),
                    scenario: String::new(),
                    coordination_enabled: cfg.coordination_enabled(),
                    config: cfg.clone(),
                    input_hash: String::new(),
                    wall_clock_s: started.elapsed().as_secs_f64(),
                    episodes: Vec::new(),
                    final_evaluation: None,
                    amendment: AmendTotals::default(),
                    files: Vec::new(),
                    error: Some(e.to_string()),
                };
                write_manifest(dir, &manifest)?;
            }
            Err(e)
        }
    }
}

fn write_outputs(dir: &Path, outcome: &mut TrainOutcome) -> Result<(), HarnessError> {
    let m = &mut outcome.manifest;
    write_csv(&dir.join("metrics.csv"), &METRICS_HEADER, &m.episodes)?;
    m.files.insert(0, "metrics.csv".into());
    if m.config.output.trace {
        write_csv(&dir.join("trace.csv"), &TRACE_HEADER, &outcome.trace)?;
        m.files.push("trace.csv".into());
    }
    if m.config.output.checkpoint && !outcome.networks.is_empty() {
        let nets: Vec<(&str, &QFunction)> = outcome.networks.iter().map(|(l, q)| (l.as_str(), q)).collect();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &nets)?;
        write_atomic(&dir.join("checkpoint.bin"), &buf)?;
        m.files.push("checkpoint.bin".into());
    }
    let text = m.config.to_toml();
    write_atomic(&dir.join("config.toml"), text.as_bytes())?;
    m.files.push("config.toml".into());
    write_manifest(dir, m)
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<(), HarnessError> {
    let json = serde_json::to_vec_pretty(manifest).map_err(|e| HarnessError::Config(e.to_string()))?;
    write_atomic(&dir.join("manifest.json"), &json)
}

fn run(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<TrainOutcome, HarnessError> {
    let env = Env::new(cfg, load_scenario(&cfg.scenario)?)?;
    let mut sinks = Sinks::open(cfg, out)?;
    let mut manifest = RunManifest {
        status: RunStatus::Completed,
        method: cfg.method.to_string(),
        scenario: env.scenario.label.clone(),
        coordination_enabled: cfg.coordination_enabled(),
        config: cfg.clone(),
        input_hash: env.input_hash(cfg),
        wall_clock_s: 0.0,
        episodes: Vec::with_capacity(cfg.episodes),
        final_evaluation: None,
        amendment: AmendTotals::default(),
        files: Vec::new(),
        error: None,
    };
    let (networks, trace) = if cfg.method.is_learned() {
        let mut learners = init_learners(cfg, &env)?;
        train_learners(cfg, &env, &mut learners, &mut manifest, &mut sinks)?;
        let nets: Vec<QFunction> = learners.into_iter().map(|l| l.eval).collect();
        let mut trace = Vec::new();
        let row = greedy_episode(cfg, &env, &nets, cfg.episodes + 1, Some(&mut trace))?;
        manifest.final_evaluation = Some(row);
        (env.ids.iter().cloned().zip(nets).collect(), trace)
    } else {
        let mut trace = Vec::new();
        for episode in 1..=cfg.episodes {
            let row = rule_episode(cfg, &env, episode, None)?;
            info!("{} episode {episode}: {:.2} s", cfg.method, row.avg_travel_time_s);
            manifest.episodes.push(row);
        }
        let row = rule_episode(cfg, &env, cfg.episodes + 1, Some(&mut trace))?;
        manifest.final_evaluation = Some(row);
        (Vec::new(), trace)
    };
    sinks.finish(&mut manifest.files)?;
    Ok(TrainOutcome {
        manifest,
        networks,
        trace,
    })
}

fn init_learners(cfg: &ExperimentConfig, env: &Env) -> Result<Vec<Learner>, HarnessError> {
    (0..env.agents.len())
        .map(|k| {
            let eval = QFunction::random(env.arch(cfg, k), &mut stream(cfg.seed, &format!("init/{k}")))?;
            let target = TargetQFunction::from_eval(&eval);
            let opt = OptimizerState::new(eval.params().len(), cfg.agent.adam);
            Ok(Learner {
                eval,
                target,
                opt,
                explore: stream(cfg.seed, &format!("explore/{k}")),
                sample: stream(cfg.seed, &format!("sample/{k}")),
            })
        })
        .collect()
}

/// The coordinated learning loop: act, store raw experience, amend when the
/// update gate opens, train every step once enough amended data exists, and
/// refresh the targets every few amendment rounds.
fn train_learners(
    cfg: &ExperimentConfig,
    env: &Env,
    learners: &mut [Learner],
    manifest: &mut RunManifest,
    sinks: &mut Sinks,
) -> Result<(), HarnessError> {
    let n_agents = learners.len();
    let steps = cfg.steps_per_episode();
    let total_steps = (cfg.episodes * steps) as u64;
    let schedule = EpsilonSchedule {
        start: cfg.agent.epsilon_start,
        end: cfg.agent.epsilon_end,
        decay_steps: (cfg.agent.epsilon_decay_fraction * total_steps as f64).round() as u64,
    };
    let capacity = cfg.agent.buffer_capacity;
    let mut raw: Vec<RawBuffer> = (0..n_agents).map(|_| RawBuffer::new(capacity + cfg.coordination.n)).collect();
    let mut amended: Vec<AmendedBuffer> = (0..n_agents).map(|_| AmendedBuffer::new(capacity)).collect();
    let gate = cfg.coordination.min_steps_per_update + cfg.coordination.n;
    let mut t_update = 0usize;
    let mut steps_since_amend = 0usize;
    let mut global_step = 0u64;
    let totals = &mut manifest.amendment;
    let batch = cfg.agent.batch_size;
    let gamma_prime = cfg.agent.gamma_prime;

    for episode in 1..=cfg.episodes {
        let mut sim = env.initial.clone();
        let mut views = env.views(&env.features(&sim));
        for _ in 0..steps {
            let eps = schedule.value(global_step);
            let actions = learners
                .par_iter_mut()
                .zip(views.par_iter())
                .map(|(l, v)| act(&l.eval, v, eps, &mut l.explore))
                .collect::<Result<Vec<usize>, _>>()?;
            env.step(&mut sim, &actions, cfg)?;
            let next = env.views(&env.features(&sim));
            for (k, buf) in raw.iter_mut().enumerate() {
                buf.record(
                    Transition {
                        obs: views[k].clone(),
                        action: actions[k],
                        reward: sim.raw_reward(env.agents[k]),
                        next: next[k].clone(),
                        terminal: false,
                    },
                    episode as u32,
                );
            }
            views = next;
            global_step += 1;
            t_update += n_agents;
            steps_since_amend += 1;

            if t_update >= gate && steps_since_amend >= cfg.coordination.n {
                let report = if env.attention {
                    let source = TargetScores { learners };
                    amend(&mut raw, &mut amended, &env.neighbors, &cfg.coordination, &source, sinks.audit.is_some())?
                } else {
                    amend(&mut raw, &mut amended, &env.neighbors, &cfg.coordination, &UnitWeights, sinks.audit.is_some())?
                };
                totals.rounds += 1;
                totals.amended += report.amended;
                totals.skipped_missing += report.skipped_missing;
                totals.skipped_boundary += report.skipped_boundary;
                totals.stale_terms += report.stale_terms;
                if let Some(sink) = sinks.audit.as_mut() {
                    for a in &report.audit {
                        sink.write(&AuditCsvRow {
                            episode: a.episode,
                            agent: env.ids[a.agent].clone(),
                            t: a.t,
                            r: a.raw,
                            amended: a.amended,
                            neighbor: a.neighbor.map(|j| env.ids[j].clone()),
                            ratio: a.ratio,
                            weight: a.weight,
                            stale: a.stale,
                        })?;
                    }
                }
                if totals.rounds.is_multiple_of(cfg.agent.target_sync_rounds) {
                    for l in learners.iter_mut() {
                        sync_target(&l.eval, &mut l.target)?;
                    }
                    totals.target_syncs += 1;
                }
                t_update = 0;
                steps_since_amend = 0;
            }

            learners
                .par_iter_mut()
                .zip(amended.par_iter())
                .try_for_each(|(l, buf)| -> Result<(), HarnessError> {
                    if buf.len() >= batch {
                        let sample = buf.sample(batch, &mut l.sample);
                        train_step(&mut l.eval, &l.target, &mut l.opt, &sample, gamma_prime)?;
                    }
                    Ok(())
                })?;
        }
        let row = env.finish_episode(&sim, episode)?;
        info!(
            "{} episode {episode}: {:.2} s, throughput {}",
            cfg.method, row.avg_travel_time_s, row.throughput
        );
        manifest.episodes.push(row);
        if let Some(sink) = sinks.scores.as_mut() {
            for (k, l) in learners.iter().enumerate() {
                let alpha = score_row(&l.eval, &views[k])?.expect("attention network");
                let alpha_hat = score_row(l.target.as_q(), &views[k])?.expect("attention network");
                let members = std::iter::once(k).chain(env.neighbors[k].iter().copied());
                for ((j, a), ah) in members.zip(alpha).zip(alpha_hat) {
                    sink.write(&ScoreRow {
                        episode,
                        i: env.ids[k].clone(),
                        j: env.ids[j].clone(),
                        alpha_ij: a,
                        alpha_hat_ij: ah,
                    })?;
                }
            }
        }
    }
    Ok(())
}

/// One epsilon-free episode with fixed networks.
fn greedy_episode(
    cfg: &ExperimentConfig,
    env: &Env,
    nets: &[QFunction],
    episode: usize,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> Result<MetricsRow, HarnessError> {
    let mut sim = env.initial.clone();
    for _ in 0..cfg.steps_per_episode() {
        let views = env.views(&env.features(&sim));
        let actions = nets
            .par_iter()
            .zip(views.par_iter())
            .map(|(q, v)| Ok(crate::agent::greedy(&crate::agent::q_values(q, v)?)))
            .collect::<Result<Vec<usize>, HarnessError>>()?;
        env.step(&mut sim, &actions, cfg)?;
        if let Some(rows) = trace.as_deref_mut() {
            env.trace(&sim, rows);
        }
    }
    env.finish_episode(&sim, episode)
}

fn rule_episode(
    cfg: &ExperimentConfig,
    env: &Env,
    episode: usize,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> Result<MetricsRow, HarnessError> {
    let plans = env
        .actions
        .iter()
        .map(|&p| FixedTimePlan::equal_split(p, cfg.fixed_time_green, cfg.sim.min_green))
        .collect::<Result<Vec<_>, _>>()?;
    let mut sim = env.initial.clone();
    for _ in 0..cfg.steps_per_episode() {
        let actions: Vec<usize> = match cfg.method {
            Method::FixedTime => plans.iter().map(|p| fixed_time_act(p, sim.clock())).collect(),
            Method::MaxPressure => env.agents.iter().map(|&x| max_pressure_act(&sim, x)).collect(),
            m => unreachable!("{m} is a learned method"),
        };
        env.step(&mut sim, &actions, cfg)?;
        if let Some(rows) = trace.as_deref_mut() {
            env.trace(&sim, rows);
        }
    }
    env.finish_episode(&sim, episode)
}

/// One greedy episode: rule-based methods need no checkpoint, learned ones
/// load their networks from `checkpoint` and must match the configured
/// architecture.
pub fn evaluate(config: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<MetricsRow, HarnessError> {
    let cfg = config.resolved();
    cfg.validate()?;
    let env = Env::new(&cfg, load_scenario(&cfg.scenario)?)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    pool.install(|| {
        if !cfg.method.is_learned() {
            return rule_episode(&cfg, &env, 1, None);
        }
        let path = checkpoint.ok_or_else(|| HarnessError::Config(format!("{} needs a checkpoint", cfg.method)))?;
        let file = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
        let expected: Vec<(String, QArch)> = (0..env.agents.len())
            .map(|k| (env.ids[k].clone(), env.arch(&cfg, k)))
            .collect();
        let nets = load_matching(std::io::BufReader::new(file), &expected)?;
        greedy_episode(&cfg, &env, &nets, 1, None)
    })
}
