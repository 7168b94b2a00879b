use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::agents::{build_agent, Agent, AgentSettings, UpdateStats};
use super::evaluate::{evaluate, TaskMetrics};
use crate::config::ExperimentConfig;
use crate::envs::{make_env, Environment, TaskSpec};
use crate::error::{Error, Result};
use crate::nets::Checkpoint;
use crate::replay::{Batch, ReplayMemory, Transition};

pub const LOG_HEADER: [&str; 10] = [
    "step",
    "algo",
    "seed",
    "task",
    "avg_return",
    "final_distance",
    "entropy",
    "alpha",
    "q_loss",
    "pi_loss",
];

pub const CONFIG_SNAPSHOT: &str = "config.cfg";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const FINAL_METRICS: &str = "final_metrics.json";
pub const DIVERGENCE_DUMP: &str = "divergence_dump.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// Seed offset for evaluation start states, so that evaluating never draws
/// from the training stream.
const EVAL_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogRow {
    pub step: u64,
    pub algo: String,
    pub seed: u64,
    pub task: String,
    pub avg_return: f64,
    pub final_distance: f64,
    pub entropy: f64,
    pub alpha: f64,
    pub q_loss: f64,
    pub pi_loss: f64,
}

impl LogRow {
    pub fn fields(&self) -> [String; 10] {
        [
            self.step.to_string(),
            self.algo.clone(),
            self.seed.to_string(),
            self.task.clone(),
            self.avg_return.to_string(),
            self.final_distance.to_string(),
            self.entropy.to_string(),
            self.alpha.to_string(),
            self.q_loss.to_string(),
            self.pi_loss.to_string(),
        ]
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FinalMetrics {
    pub env: String,
    pub algo: String,
    pub seed: u64,
    pub step: u64,
    pub episodes: usize,
    pub tasks: Vec<TaskMetrics>,
    pub alphas: BTreeMap<String, f64>,
    pub clipped_actions: u64,
}

#[derive(Default)]
struct LossWindow {
    q: BTreeMap<usize, (f64, usize)>,
    pi: BTreeMap<usize, (f64, usize)>,
}

impl LossWindow {
    fn add(&mut self, stats: &UpdateStats) {
        for (map, src) in [(&mut self.q, &stats.q_loss), (&mut self.pi, &stats.pi_loss)] {
            for (&j, &v) in src {
                let e = map.entry(j).or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            }
        }
    }

    fn mean(map: &BTreeMap<usize, (f64, usize)>, task: usize) -> f64 {
        map.get(&task).map(|&(s, n)| s / n as f64).unwrap_or(f64::NAN)
    }
}

/// Training loop state: one environment, one learner, one replay memory and
/// one random stream.
pub struct Trainer {
    config: ExperimentConfig,
    spec: TaskSpec,
    env: Box<dyn Environment>,
    agent: Box<dyn Agent>,
    memory: ReplayMemory,
    rng: ChaCha8Rng,
    state: Vec<f64>,
    step: u64,
    window: LossWindow,
    last_stats: Option<UpdateStats>,
}

impl Trainer {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        let mut env = make_env(&config.env)?;
        let spec = env.spec().clone();
        let mut settings = AgentSettings::new(&spec);
        settings.hidden = config.hidden_units;
        settings.gamma = config.gamma;
        settings.rho = config.rho;
        settings.lr_q = config.lr_q;
        settings.lr_pi = config.lr_pi;
        settings.lr_alpha = config.lr_alpha;
        settings.task = spec.task_index(&config.task)?;
        if let Some(h) = config.entropy_target {
            settings.entropy_targets = vec![h; spec.num_tasks()];
        }
        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let agent = build_agent(&config.algo, &settings, &spec, &mut init_rng)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        let state = env.reset(&mut rng);
        Ok(Self {
            config: config.clone(),
            spec,
            env,
            agent,
            memory: ReplayMemory::new(config.buffer_size),
            rng,
            state,
            step: 0,
            window: LossWindow::default(),
            last_stats: None,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn agent(&self) -> &dyn Agent {
        self.agent.as_ref()
    }

    pub fn memory(&self) -> &ReplayMemory {
        &self.memory
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    /// One environment interaction with the behavior policy, one push, and
    /// after warmup `gradient_steps` learner updates.
    pub fn train_step(&mut self) -> Result<Option<UpdateStats>> {
        let action = self.agent.act(&self.state, &mut self.rng)?;
        let result = self.env.step(&action)?;
        self.memory.push(Transition {
            state: std::mem::take(&mut self.state),
            action,
            rewards: result.rewards,
            next_state: result.next_state.clone(),
            done: result.done,
        })?;
        self.step += 1;
        self.state = if result.done {
            self.env.reset(&mut self.rng)
        } else {
            result.next_state
        };
        if self.step <= self.config.warmup_steps {
            return Ok(None);
        }
        let mut last = None;
        for _ in 0..self.config.gradient_steps {
            let items = match self.memory.sample_minibatch(self.config.batch_size, &mut self.rng) {
                Ok(items) => items,
                Err(Error::NotReady { .. }) => return Ok(last),
                Err(e) => return Err(e),
            };
            let batch = Batch::from_transitions(&items)?;
            let stats = self.agent.update(&batch, &mut self.rng)?;
            self.window.add(&stats);
            self.last_stats = Some(stats.clone());
            last = Some(stats);
        }
        Ok(last)
    }

    pub fn evaluate(&self) -> Result<Vec<TaskMetrics>> {
        let mut env = make_env(&self.config.env)?;
        evaluate(
            self.agent.actor(),
            env.as_mut(),
            self.config.eval_episodes,
            self.config.seed ^ EVAL_SEED_SALT,
        )
    }

    /// Log rows for one evaluation event; resets the loss window.
    pub fn log_rows(&mut self, metrics: &[TaskMetrics]) -> Vec<LogRow> {
        let alphas = self.agent.alphas();
        let rows = metrics
            .iter()
            .map(|m| {
                let j = self.spec.task_index(&m.task).expect("metrics use spec labels");
                LogRow {
                    step: self.step,
                    algo: self.config.algo.clone(),
                    seed: self.config.seed,
                    task: m.task.clone(),
                    avg_return: m.avg_return,
                    final_distance: m.final_distance,
                    entropy: m.entropy,
                    alpha: alphas.get(&j).copied().unwrap_or(f64::NAN),
                    q_loss: LossWindow::mean(&self.window.q, j),
                    pi_loss: LossWindow::mean(&self.window.pi, j),
                }
            })
            .collect();
        self.window = LossWindow::default();
        rows
    }

    pub fn checkpoint(&self) -> Checkpoint {
        self.agent.checkpoint(&self.config.env, self.step, self.config.seed)
    }

    fn final_metrics(&self, tasks: Vec<TaskMetrics>) -> FinalMetrics {
        FinalMetrics {
            env: self.config.env.clone(),
            algo: self.config.algo.clone(),
            seed: self.config.seed,
            step: self.step,
            episodes: self.config.eval_episodes,
            tasks,
            alphas: self
                .agent
                .alphas()
                .into_iter()
                .map(|(j, a)| (self.spec.label(j).to_string(), a))
                .collect(),
            clipped_actions: self.env.clipped_actions(),
        }
    }

    fn divergence_dump(&self, error: &Error) -> serde_json::Value {
        let labelled = |m: &BTreeMap<usize, f64>| -> BTreeMap<String, f64> {
            m.iter().map(|(&j, &v)| (self.spec.label(j).to_string(), v)).collect()
        };
        serde_json::json!({
            "error": error.to_string(),
            "step": self.step,
            "algo": self.config.algo,
            "seed": self.config.seed,
            "state": self.state,
            "replay_size": self.memory.len(),
            "alphas": labelled(&self.agent.alphas()),
            "last_update": self.last_stats.as_ref().map(|s| serde_json::json!({
                "q_loss": labelled(&s.q_loss),
                "pi_loss": labelled(&s.pi_loss),
                "alpha_loss": labelled(&s.alpha_loss),
            })),
        })
    }
}

/// Output of a finished run.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub rows: Vec<LogRow>,
    pub final_metrics: Vec<TaskMetrics>,
}

/// Trains to `total_steps`, writing the config snapshot, `train_log.csv`,
/// checkpoints and final metrics under `config.out_dir`.
///
/// On divergence a diagnostic dump is written before the error is returned.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunSummary> {
    let out = config.out_dir.clone();
    fs::create_dir_all(out.join(CHECKPOINT_DIR))?;
    fs::write(out.join(CONFIG_SNAPSHOT), config.to_config_string())?;
    let mut trainer = Trainer::new(config)?;
    let mut log = csv::Writer::from_path(out.join(TRAIN_LOG)).map_err(csv_error)?;
    log.write_record(LOG_HEADER).map_err(csv_error)?;

    let mut rows = Vec::new();
    while trainer.step < config.total_steps {
        if let Err(e) = trainer.train_step() {
            if matches!(e, Error::Divergence(_)) {
                let dump = serde_json::to_string_pretty(&trainer.divergence_dump(&e))?;
                fs::write(out.join(DIVERGENCE_DUMP), dump)?;
            }
            return Err(e);
        }
        if trainer.step % config.eval_interval == 0 {
            let metrics = trainer.evaluate()?;
            for row in trainer.log_rows(&metrics) {
                log.write_record(row.fields()).map_err(csv_error)?;
                rows.push(row);
            }
            log.flush()?;
            if config.checkpoint_interval > 0 && trainer.step % config.checkpoint_interval == 0 {
                trainer.checkpoint().save(&checkpoint_path(&out, trainer.step))?;
            }
        }
    }
    log.flush()?;
    trainer.checkpoint().save(&out.join(CHECKPOINT_DIR).join("final.json"))?;
    let final_metrics = trainer.evaluate()?;
    let doc = trainer.final_metrics(final_metrics.clone());
    fs::write(out.join(FINAL_METRICS), serde_json::to_string_pretty(&doc)?)?;
    Ok(RunSummary {
        out_dir: out,
        rows,
        final_metrics,
    })
}

pub fn checkpoint_path(out_dir: &Path, step: u64) -> PathBuf {
    out_dir.join(CHECKPOINT_DIR).join(format!("step_{step:07}.json"))
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidInput(format!("csv: {other:?}")),
    }
}
