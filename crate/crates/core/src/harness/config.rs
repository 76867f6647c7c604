use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::econ::{CoalitionStructure, EconomicParams, PenaltyMode, PenaltyParams};
use crate::env::{desk_scale, read_permeability_csv, EnvConfig, SolverKind, DESK_PERMEABILITY_SEED};
use crate::error::{ConfigIssue, Error, Result};
use crate::game::CmgSpec;
use crate::maddpg::TrainConfig;
use crate::moo::Nsga2Config;

pub const CONFIG_SCHEMA: u32 = 1;

/// Named scenarios understood by [`EnvSection::build`].
pub const SCENARIOS: [&str; 1] = ["desk"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub permeability_seed: u64,
    /// Optional `i,j,perm_mD` file replacing the generated field; relative
    /// paths resolve against the config file's directory.
    pub permeability_csv: Option<PathBuf>,
    pub solver: SolverKind,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self { permeability_seed: DESK_PERMEABILITY_SEED, permeability_csv: None, solver: SolverKind::Propagator }
    }
}

impl EnvSection {
    pub fn build(&self, scenario: &str, base_dir: &Path) -> Result<EnvConfig> {
        let mut env = match scenario {
            "desk" => desk_scale(self.permeability_seed),
            other => {
                return Err(Error::Config(vec![ConfigIssue {
                    key: "scenario".into(),
                    message: format!("unknown scenario `{other}` (known: {})", SCENARIOS.join(", ")),
                }]))
            }
        };
        if let Some(path) = &self.permeability_csv {
            let path = if path.is_relative() { base_dir.join(path) } else { path.clone() };
            let f = fs::File::open(&path)?;
            env.grid.permeability = read_permeability_csv(f, env.grid.nx, env.grid.ny)?;
        }
        env.solver = self.solver;
        Ok(env)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PenaltySection {
    pub mode: PenaltyMode,
    /// `None` picks the mode's default (5000 per well cell, 50 per area cell).
    pub unit_penalty: Option<f64>,
    pub d: f64,
    pub strict: bool,
}

impl Default for PenaltySection {
    fn default() -> Self {
        Self { mode: PenaltyMode::Well, unit_penalty: None, d: 0.0, strict: true }
    }
}

impl PenaltySection {
    pub fn params(&self) -> PenaltyParams {
        PenaltyParams {
            mode: self.mode,
            unit_penalty: self.unit_penalty.unwrap_or(self.mode.default_unit_penalty()),
            d: self.d,
            strict: self.strict,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoalitionName {
    /// Every agent on its own.
    Competitive,
    /// One coalition of all agents.
    Cooperative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoalitionChoice {
    Named(CoalitionName),
    Blocks(CoalitionStructure),
}

impl CoalitionChoice {
    pub fn structure(&self, n_agents: usize) -> CoalitionStructure {
        match self {
            CoalitionChoice::Named(CoalitionName::Competitive) => CoalitionStructure::singletons(n_agents),
            CoalitionChoice::Named(CoalitionName::Cooperative) => CoalitionStructure::grand(n_agents),
            CoalitionChoice::Blocks(s) => s.clone(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            CoalitionChoice::Named(CoalitionName::Competitive) => "competitive".into(),
            CoalitionChoice::Named(CoalitionName::Cooperative) => "cooperative".into(),
            CoalitionChoice::Blocks(s) => s.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GameSection {
    pub coalition: CoalitionChoice,
    pub horizon: usize,
    pub reward_scale: f64,
    pub cost_scale: f64,
    pub share_costs: bool,
}

impl Default for GameSection {
    fn default() -> Self {
        Self {
            coalition: CoalitionChoice::Named(CoalitionName::Competitive),
            horizon: 25,
            reward_scale: 0.01,
            cost_scale: 0.001,
            share_costs: false,
        }
    }
}

/// The whole experiment description, as stored in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub scenario: String,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub env: EnvSection,
    pub econ: EconomicParams,
    pub penalty: PenaltySection,
    pub game: GameSection,
    pub train: TrainConfig,
    pub moo: Nsga2Config,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA,
            scenario: "desk".into(),
            output_dir: PathBuf::from("runs"),
            seeds: vec![1, 2, 3, 4, 5],
            env: EnvSection::default(),
            econ: EconomicParams::default(),
            penalty: PenaltySection::default(),
            game: GameSection::default(),
            train: TrainConfig::default(),
            moo: Nsga2Config::default(),
        }
    }
}

fn issue(key: impl Into<String>, message: impl Into<String>) -> ConfigIssue {
    ConfigIssue { key: key.into(), message: message.into() }
}

impl ExperimentConfig {
    /// Every problem, keyed by dotted path.
    pub fn issues(&self) -> Vec<ConfigIssue> {
        let mut out = Vec::new();
        if self.schema_version != CONFIG_SCHEMA {
            out.push(issue("schema_version", format!("expected {CONFIG_SCHEMA}, got {}", self.schema_version)));
        }
        if !SCENARIOS.contains(&self.scenario.as_str()) {
            out.push(issue("scenario", format!("unknown scenario `{}` (known: {})", self.scenario, SCENARIOS.join(", "))));
        }
        if self.seeds.is_empty() {
            out.push(issue("seeds", "at least one seed is required"));
        }
        if self.output_dir.as_os_str().is_empty() {
            out.push(issue("output_dir", "must not be empty"));
        }
        let e = &self.econ;
        if !(e.gamma > 0.0 && e.gamma < 1.0) {
            out.push(issue("econ.gamma", format!("must lie in (0,1), got {}", e.gamma)));
        }
        for (key, v) in [
            ("econ.r_credit", e.r_credit),
            ("econ.r_op", e.r_op),
            ("econ.r_water", e.r_water),
            ("econ.r_co2_reextract", e.r_co2_reextract),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                out.push(issue(key, format!("must be a non-negative price, got {v}")));
            }
        }
        if let Some(u) = self.penalty.unit_penalty {
            if !(u > 0.0 && u.is_finite()) {
                out.push(issue("penalty.unit_penalty", format!("must be positive, got {u}")));
            }
        }
        if !(self.penalty.d >= 0.0 && self.penalty.d.is_finite()) {
            out.push(issue("penalty.d", format!("must be non-negative, got {}", self.penalty.d)));
        }
        let g = &self.game;
        if g.horizon == 0 {
            out.push(issue("game.horizon", "must be at least 1"));
        }
        for (key, v) in [("game.reward_scale", g.reward_scale), ("game.cost_scale", g.cost_scale)] {
            if !(v > 0.0 && v.is_finite()) {
                out.push(issue(key, format!("must be positive, got {v}")));
            }
        }
        out.extend(self.train.issues().into_iter().map(|i| issue(format!("train.{}", i.key), i.message)));
        out.extend(self.moo.issues().into_iter().map(|i| issue(format!("moo.{}", i.key), i.message)));
        out
    }

    pub fn validate(&self) -> Result<()> {
        let issues = self.issues();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(issues))
        }
    }

    /// Instantiates the game description; `base_dir` resolves relative paths.
    pub fn game_spec(&self, base_dir: &Path) -> Result<CmgSpec> {
        let env = self.env.build(&self.scenario, base_dir)?;
        let n = env.n_agents();
        let spec = CmgSpec {
            coalition: self.game.coalition.structure(n),
            env,
            econ: self.econ.clone(),
            penalty: self.penalty.params(),
            horizon: self.game.horizon,
            reward_scale: self.game.reward_scale,
            cost_scale: self.game.cost_scale,
            share_costs: self.game.share_costs,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Collects keys of `user` that have no counterpart in `reference`.
fn unknown_keys(user: &Value, reference: &Value, prefix: &str, out: &mut Vec<ConfigIssue>) {
    let (Value::Object(u), Value::Object(r)) = (user, reference) else {
        return;
    };
    for (k, v) in u {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match r.get(k) {
            None => out.push(issue(path, "unknown key")),
            Some(rv) => unknown_keys(v, rv, &path, out),
        }
    }
}

/// Overlays `user` on `base`, recursing into objects present on both sides.
fn merge(base: &mut Value, user: &Value) {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            for (k, v) in u {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, u) => *b = u.clone(),
    }
}

/// Parses, default-fills and validates a config document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let user: Value = serde_json::from_str(text)?;
    if !user.is_object() {
        return Err(Error::Config(vec![issue("<root>", "config must be a JSON object")]));
    }
    let mut resolved = serde_json::to_value(ExperimentConfig::default())?;
    let mut issues = Vec::new();
    unknown_keys(&user, &resolved, "", &mut issues);
    if !issues.is_empty() {
        return Err(Error::Config(issues));
    }
    merge(&mut resolved, &user);
    let cfg: ExperimentConfig = serde_json::from_value(resolved)
        .map_err(|e| Error::Config(vec![issue("<document>", e.to_string())]))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    parse_config(&fs::read_to_string(path)?)
}

/// The fully resolved config as pretty JSON.
pub fn config_json(cfg: &ExperimentConfig) -> Result<String> {
    Ok(serde_json::to_string_pretty(cfg)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        let cfg = parse_config(r#"{"train": {"episodes": 7}, "penalty": {"mode": "region"}}"#).unwrap();
        assert_eq!(cfg.train.episodes, 7);
        assert_eq!(cfg.train.batch_size, 256);
        assert_eq!(cfg.penalty.params().unit_penalty, 50.0);
    }

    #[test]
    fn bad_gamma_is_named() {
        let err = parse_config(r#"{"econ": {"gamma": 1.2}}"#).unwrap_err();
        match err {
            Error::Config(issues) => assert_eq!(issues[0].key, "econ.gamma"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn every_offending_key_is_reported() {
        let err = parse_config(r#"{"econ": {"gamma": 0}, "train": {"tau": 2}, "seeds": [], "moo": {"population": 3}}"#)
            .unwrap_err();
        let Error::Config(issues) = err else { panic!() };
        let keys: Vec<_> = issues.iter().map(|i| i.key.as_str()).collect();
        for k in ["econ.gamma", "train.tau", "seeds", "moo.population"] {
            assert!(keys.contains(&k), "{k} missing from {keys:?}");
        }
    }

    #[test]
    fn unknown_keys_rejected_at_any_depth() {
        let Error::Config(issues) = parse_config(r#"{"trian": {}, "train": {"epochs": 3}}"#).unwrap_err() else {
            panic!()
        };
        let keys: Vec<_> = issues.iter().map(|i| i.key.as_str()).collect();
        assert_eq!(keys, vec!["train.epochs", "trian"]);
    }

    #[test]
    fn coalition_forms() {
        let cfg = parse_config(r#"{"game": {"coalition": "cooperative"}}"#).unwrap();
        assert_eq!(cfg.game.coalition.structure(3), CoalitionStructure::grand(3));
        let cfg = parse_config(r#"{"game": {"coalition": [[0, 2], [1]]}}"#).unwrap();
        assert_eq!(cfg.game.coalition.label(), "{A,C}{B}");
        assert!(parse_config(r#"{"game": {"coalition": "friendly"}}"#).is_err());
    }

    #[test]
    fn roundtrip_and_hash() {
        let mut cfg = ExperimentConfig::default();
        cfg.train.episodes = 11;
        cfg.game.coalition = CoalitionChoice::Named(CoalitionName::Cooperative);
        let text = config_json(&cfg).unwrap();
        let back = parse_config(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_ne!(ExperimentConfig::default().hash(), cfg.hash());
    }

    #[test]
    fn game_spec_builds_desk_scale() {
        let spec = ExperimentConfig::default().game_spec(Path::new(".")).unwrap();
        assert_eq!(spec.n_agents(), 3);
        assert_eq!(spec.horizon, 25);
    }
}
