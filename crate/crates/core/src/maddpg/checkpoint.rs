use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AgentLearner;
use crate::error::{input_err, Result};
use crate::harness::write_atomic;
use crate::neural::{AdamRecord, Mlp, MlpRecord};

pub const CHECKPOINT_SCHEMA: u32 = 1;
const MANIFEST: &str = "manifest.json";

/// Everything needed to resume or deploy one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub schema_version: u32,
    pub agent: usize,
    pub episode: usize,
    pub seed: u64,
    pub lambda: f64,
    /// Actor used for deployment (the selected policy).
    pub policy: MlpRecord,
    pub actor: MlpRecord,
    pub actor_target: MlpRecord,
    pub q_reward: MlpRecord,
    pub q_reward_target: MlpRecord,
    pub q_cost: MlpRecord,
    pub q_cost_target: MlpRecord,
    pub actor_opt: AdamRecord,
    pub q_reward_opt: AdamRecord,
    pub q_cost_opt: AdamRecord,
}

impl AgentCheckpoint {
    pub fn learner(&self) -> Result<AgentLearner> {
        Ok(AgentLearner {
            actor: self.actor.to_mlp()?,
            actor_target: self.actor_target.to_mlp()?,
            q_reward: self.q_reward.to_mlp()?,
            q_reward_target: self.q_reward_target.to_mlp()?,
            q_cost: self.q_cost.to_mlp()?,
            q_cost_target: self.q_cost_target.to_mlp()?,
            actor_opt: self.actor_opt.to_state()?,
            q_reward_opt: self.q_reward_opt.to_state()?,
            q_cost_opt: self.q_cost_opt.to_state()?,
            lambda: self.lambda,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub schema_version: u32,
    pub n_agents: usize,
    /// Training episodes completed.
    pub episode: usize,
    pub seed: u64,
    pub config_hash: String,
    /// Episode whose actors are stored as `policy`; `None` means the final actors.
    pub policy_episode: Option<usize>,
    /// Per-agent NPV of the stored policy when it was saved, $M.
    pub policy_npv: Vec<f64>,
    pub files: Vec<String>,
}

/// Writes one JSON file per agent plus a manifest into `dir`.
pub fn save_checkpoint(
    dir: &Path,
    learners: &[AgentLearner],
    policy: &[Mlp],
    manifest: CheckpointManifest,
) -> Result<CheckpointManifest> {
    if policy.len() != learners.len() || manifest.n_agents != learners.len() {
        return input_err("checkpoint needs one policy and one learner per agent");
    }
    fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(learners.len());
    for (i, (l, p)) in learners.iter().zip(policy).enumerate() {
        let ck = AgentCheckpoint {
            schema_version: CHECKPOINT_SCHEMA,
            agent: i,
            episode: manifest.episode,
            seed: manifest.seed,
            lambda: l.lambda,
            policy: p.into(),
            actor: (&l.actor).into(),
            actor_target: (&l.actor_target).into(),
            q_reward: (&l.q_reward).into(),
            q_reward_target: (&l.q_reward_target).into(),
            q_cost: (&l.q_cost).into(),
            q_cost_target: (&l.q_cost_target).into(),
            actor_opt: (&l.actor_opt).into(),
            q_reward_opt: (&l.q_reward_opt).into(),
            q_cost_opt: (&l.q_cost_opt).into(),
        };
        let name = format!("agent_{i}.json");
        write_atomic(&dir.join(&name), serde_json::to_string(&ck)?.as_bytes())?;
        files.push(name);
    }
    let manifest = CheckpointManifest { schema_version: CHECKPOINT_SCHEMA, files, ..manifest };
    write_atomic(&dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(dir: &Path) -> Result<(CheckpointManifest, Vec<AgentCheckpoint>)> {
    let manifest: CheckpointManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST))?)?;
    if manifest.schema_version != CHECKPOINT_SCHEMA {
        return input_err(format!("unsupported checkpoint schema {}", manifest.schema_version));
    }
    if manifest.files.len() != manifest.n_agents {
        return input_err("manifest lists the wrong number of agent files");
    }
    let mut agents = Vec::with_capacity(manifest.n_agents);
    for (i, f) in manifest.files.iter().enumerate() {
        if Path::new(f).components().count() != 1 {
            return input_err(format!("agent file `{f}` must be a bare file name"));
        }
        let ck: AgentCheckpoint = serde_json::from_slice(&fs::read(dir.join(f))?)?;
        if ck.agent != i {
            return input_err(format!("file `{f}` holds agent {} where {i} was expected", ck.agent));
        }
        agents.push(ck);
    }
    Ok((manifest, agents))
}
