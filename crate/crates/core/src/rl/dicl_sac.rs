//! SAC whose replay data is augmented with forecaster-generated transitions.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::buffer::ReplayBuffer;
use super::sac::{llm_batch_size, SacAgent, SacConfig};
use crate::dicl::{DiclMethod, MethodKind};
use crate::envs::Env;
use crate::error::{DiclError, Result};
use crate::stats::mix_seed;
use crate::trajdata::Trajectory;

/// Flat trainer configuration; key names follow the usual hyperparameter
/// tables. Defaults are the pendulum settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiclSacConfig {
    /// Proportion α of forecaster data per minibatch.
    pub llm_proportion: f64,
    pub batch_size: usize,
    /// Environment steps between update rounds.
    pub update_frequency: usize,
    /// Gradient steps per update round; defaults to `update_frequency`.
    pub gradient_steps: Option<usize>,
    pub learning_starts: usize,
    pub llm_learning_starts: usize,
    pub llm_learning_frequency: usize,
    /// Minimal context length T: synthetic transitions start at index T.
    pub min_context: usize,
    /// Maximal context length T_max.
    pub max_context: usize,
    pub total_steps: usize,
    pub buffer_size: usize,
    pub gamma: f64,
    pub tau: f64,
    pub policy_lr: f64,
    pub q_lr: f64,
    pub policy_frequency: u64,
    pub target_network_frequency: u64,
    pub hidden: Vec<usize>,
    pub autotune: bool,
    pub entropy_alpha: f64,
    pub seed: u64,
}

impl Default for DiclSacConfig {
    fn default() -> Self {
        let sac = SacConfig::default();
        Self {
            llm_proportion: 0.05,
            batch_size: 64,
            update_frequency: 200,
            gradient_steps: None,
            learning_starts: 1000,
            llm_learning_starts: 2000,
            llm_learning_frequency: 16,
            min_context: 1,
            max_context: 198,
            total_steps: 10_000,
            buffer_size: 1_000_000,
            gamma: sac.gamma,
            tau: sac.tau,
            policy_lr: sac.policy_lr,
            q_lr: sac.q_lr,
            policy_frequency: sac.policy_frequency,
            target_network_frequency: sac.target_network_frequency,
            hidden: sac.hidden,
            autotune: sac.autotune,
            entropy_alpha: sac.alpha,
            seed: 0,
        }
    }
}

impl DiclSacConfig {
    pub fn sac(&self) -> SacConfig {
        SacConfig {
            hidden: self.hidden.clone(),
            gamma: self.gamma,
            tau: self.tau,
            policy_lr: self.policy_lr,
            q_lr: self.q_lr,
            policy_frequency: self.policy_frequency,
            target_network_frequency: self.target_network_frequency,
            autotune: self.autotune,
            alpha: self.entropy_alpha,
        }
    }

    pub fn llm_batch_size(&self) -> usize {
        llm_batch_size(self.llm_proportion, self.batch_size)
    }

    pub fn gradient_steps(&self) -> usize {
        self.gradient_steps.unwrap_or(self.update_frequency)
    }

    pub fn validate(&self) -> Result<()> {
        self.sac().validate()?;
        if !(0.0..=1.0).contains(&self.llm_proportion) {
            return Err(DiclError::schema(format!(
                "llm_proportion must be in [0, 1], got {}",
                self.llm_proportion
            )));
        }
        if self.min_context > self.max_context {
            return Err(DiclError::schema(format!(
                "min_context ({}) must not exceed max_context ({})",
                self.min_context, self.max_context
            )));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("update_frequency", self.update_frequency),
            ("llm_learning_frequency", self.llm_learning_frequency),
            ("buffer_size", self.buffer_size),
        ] {
            if v == 0 {
                return Err(DiclError::schema(format!("{name} must be ≥ 1")));
            }
        }
        Ok(())
    }
}

/// One row per environment step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub episode: usize,
    /// Set on the step that ends an episode.
    pub episodic_return: Option<f64>,
    /// Losses of the most recent gradient step, if any.
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub alpha: f64,
    pub llm_transitions: usize,
}

/// Provenance of one synthetic transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    /// Environment step of the real state `s_i`.
    pub source_step: usize,
    /// Environment step at which the auxiliary action was drawn.
    pub aux_sampled_at: usize,
    /// Index `i` inside the forecast context.
    pub context_index: usize,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub log: Vec<LogRow>,
    pub episode_returns: Vec<f64>,
    pub audit: Vec<AuditEntry>,
    pub generation_rounds: usize,
    pub failed_rounds: usize,
    /// LLM minibatches skipped because the LLM buffer was still empty.
    pub skipped_llm_batches: usize,
    pub agent: SacAgent,
}

impl TrainingOutcome {
    /// Mean of the last `n` completed episode returns.
    pub fn final_mean_return(&self, n: usize) -> Option<f64> {
        let k = n.min(self.episode_returns.len());
        (k > 0).then(|| {
            self.episode_returns[self.episode_returns.len() - k..]
                .iter()
                .sum::<f64>()
                / k as f64
        })
    }

    pub fn write_log_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "step",
            "episode",
            "episodic_return",
            "critic_loss",
            "actor_loss",
            "alpha",
            "llm_transitions",
        ])
        .map_err(csv_err)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.log {
            w.write_record([
                r.step.to_string(),
                r.episode.to_string(),
                opt(r.episodic_return),
                opt(r.critic_loss),
                opt(r.actor_loss),
                r.alpha.to_string(),
                r.llm_transitions.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_log_csv(&self, path: &Path) -> Result<()> {
        self.write_log_csv(std::fs::File::create(path)?)
    }
}

fn csv_err(e: csv::Error) -> DiclError {
    DiclError::Io(std::io::Error::other(e))
}

#[derive(Debug, Default)]
struct EpisodeRecord {
    observations: Vec<Vec<f64>>,
    aux_actions: Vec<Vec<f64>>,
    rewards: Vec<f64>,
    steps: Vec<usize>,
    aux_steps: Vec<usize>,
}

impl EpisodeRecord {
    fn len(&self) -> usize {
        self.rewards.len()
    }
}

mod stream {
    pub const INIT: u64 = 1;
    pub const ENV: u64 = 2;
    pub const ACT: u64 = 3;
    pub const UPDATE: u64 = 4;
    pub const AUX: u64 = 5;
    pub const GENERATE: u64 = 6;
    pub const LLM_BATCH: u64 = 7;
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, stream))
}

/// Plain SAC: the same loop without a forecaster.
pub fn sac_train<E: Env>(env: &mut E, config: &DiclSacConfig) -> Result<TrainingOutcome> {
    dicl_sac_train(env, config, None)
}

/// Run the training loop. Generation is active only when a method is given
/// and `llm_proportion > 0`.
pub fn dicl_sac_train<E: Env>(
    env: &mut E,
    config: &DiclSacConfig,
    method: Option<&DiclMethod>,
) -> Result<TrainingOutcome> {
    config.validate()?;
    if let Some(m) = method {
        let c = m.config();
        if c.kind == MethodKind::DiclSa || c.include_reward {
            return Err(DiclError::schema(
                "the trainer forecasts states only: use vicl or dicl_s without reward",
            ));
        }
    }
    let (obs_dim, act_dim, bound) = (env.observation_dim(), env.action_dim(), env.action_bound());
    let generating = method.is_some() && config.llm_proportion > 0.0;
    let llm_batch = if generating { config.llm_batch_size() } else { 0 };
    let window = config.max_context + 1;

    let mut agent = SacAgent::new(
        obs_dim,
        act_dim,
        bound,
        config.sac(),
        &mut stream_rng(config.seed, stream::INIT),
    )?;
    let mut env_rng = stream_rng(config.seed, stream::ENV);
    let mut act_rng = stream_rng(config.seed, stream::ACT);
    let mut update_rng = stream_rng(config.seed, stream::UPDATE);
    let mut aux_rng = stream_rng(config.seed, stream::AUX);
    let mut gen_rng = stream_rng(config.seed, stream::GENERATE);
    let mut llm_rng = stream_rng(config.seed, stream::LLM_BATCH);

    let mut buffer = ReplayBuffer::new(obs_dim, act_dim, config.buffer_size)?;
    let mut llm_buffer = ReplayBuffer::new(obs_dim, act_dim, config.buffer_size)?;
    let mut episodes: Vec<EpisodeRecord> = vec![EpisodeRecord::default()];
    let mut out = TrainingOutcome {
        log: Vec::with_capacity(config.total_steps),
        episode_returns: Vec::new(),
        audit: Vec::new(),
        generation_rounds: 0,
        failed_rounds: 0,
        skipped_llm_batches: 0,
        agent: agent.clone(),
    };

    let mut obs = env.reset(&mut env_rng);
    let mut episode_return = 0.0;
    let (mut critic_loss, mut actor_loss) = (None, None);
    for step in 0..config.total_steps {
        let action = if step < config.learning_starts {
            (0..act_dim).map(|_| act_rng.random_range(-bound..=bound)).collect()
        } else {
            agent.act(&obs, &mut act_rng)?
        };
        let outcome = env.step(&action);
        buffer.push(&obs, &action, outcome.reward, &outcome.observation, outcome.terminated)?;
        episode_return += outcome.reward;
        if generating {
            let aux = agent.act(&obs, &mut aux_rng)?;
            let ep = episodes.last_mut().expect("current episode");
            ep.observations.push(obs.clone());
            ep.aux_actions.push(aux);
            ep.rewards.push(outcome.reward);
            ep.steps.push(step);
            ep.aux_steps.push(step);
        }
        obs = outcome.observation;
        let mut finished = None;
        if outcome.terminated || outcome.truncated {
            finished = Some(episode_return);
            out.episode_returns.push(episode_return);
            episode_return = 0.0;
            obs = env.reset(&mut env_rng);
            if generating {
                episodes.push(EpisodeRecord::default());
            }
        }

        let done_steps = step + 1;
        if generating && done_steps >= config.llm_learning_starts && done_steps % config.llm_learning_frequency == 0 {
            let method = method.expect("generating implies a method");
            match generate(
                &episodes,
                window,
                config.min_context,
                method,
                &mut gen_rng,
                &mut llm_buffer,
                &mut out.audit,
            ) {
                Ok(true) => out.generation_rounds += 1,
                Ok(false) => {}
                Err(e) => {
                    log::warn!("generation round at step {step} failed: {e}");
                    out.failed_rounds += 1;
                }
            }
        }

        if done_steps >= config.learning_starts && done_steps % config.update_frequency == 0 {
            for _ in 0..config.gradient_steps() {
                let batch = buffer.sample(config.batch_size, &mut update_rng)?;
                let extra = if llm_batch == 0 {
                    None
                } else if llm_buffer.is_empty() {
                    out.skipped_llm_batches += 1;
                    None
                } else {
                    Some(llm_buffer.sample(llm_batch, &mut llm_rng)?)
                };
                let stats = agent.update(&batch, extra.as_ref(), &mut update_rng)?;
                critic_loss = Some(stats.critic_loss);
                if stats.actor_loss.is_some() {
                    actor_loss = stats.actor_loss;
                }
            }
        }

        out.log.push(LogRow {
            step,
            episode: out.episode_returns.len() - usize::from(finished.is_some()),
            episodic_return: finished,
            critic_loss,
            actor_loss,
            alpha: agent.alpha(),
            llm_transitions: llm_buffer.len(),
        });
    }
    out.agent = agent;
    Ok(out)
}

/// One generation round: forecast a stored window of states and push the
/// synthetic transitions for indices `min_context..window`. Returns `false`
/// when no stored episode is long enough yet.
fn generate(
    episodes: &[EpisodeRecord],
    window: usize,
    min_context: usize,
    method: &DiclMethod,
    rng: &mut ChaCha8Rng,
    llm_buffer: &mut ReplayBuffer,
    audit: &mut Vec<AuditEntry>,
) -> Result<bool> {
    let eligible: Vec<&EpisodeRecord> = episodes.iter().filter(|e| e.len() >= window).collect();
    if eligible.is_empty() {
        return Ok(false);
    }
    let ep = eligible[rng.random_range(0..eligible.len())];
    let start = rng.random_range(0..=ep.len() - window);
    let obs_dim = ep.observations[0].len();
    let states = Array2::from_shape_fn((window, obs_dim), |(i, j)| ep.observations[start + i][j]);
    let predictions = method.predict_all(&Trajectory::from_states(states)?)?;
    if predictions.ncols() != obs_dim {
        return Err(DiclError::DimMismatch {
            expected: obs_dim,
            got: predictions.ncols(),
        });
    }
    if predictions.iter().any(|v| !v.is_finite()) {
        return Err(DiclError::Numerical("non-finite forecast".into()));
    }
    for i in min_context..window {
        let at = start + i;
        let next = predictions.row(i).to_vec();
        llm_buffer.push(&ep.observations[at], &ep.aux_actions[at], ep.rewards[at], &next, false)?;
        audit.push(AuditEntry {
            source_step: ep.steps[at],
            aux_sampled_at: ep.aux_steps[at],
            context_index: i,
        });
    }
    Ok(true)
}
