use std::collections::BTreeSet;

use crate::game::{AgentCharacter, GameKind, TdParams};
use crate::xml::{self, fmt_f64, Element, XmlError, XmlWriter};

use super::TournamentError;

/// Everything needed to run one round-robin experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentManifest {
    pub experiment_id: String,
    pub game_id: String,
    pub agents: Vec<AgentCharacter>,
    pub games_per_match: u32,
    pub max_attempts: u32,
    pub seed: u64,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

pub const DEFAULT_MAX_ATTEMPTS: u32 = 3;

/// Ids end up in file names and match ids, so keep them boring.
pub fn is_safe_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && !id.starts_with(['.', '-'])
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

impl ExperimentManifest {
    pub fn new(experiment_id: impl Into<String>, game_id: impl Into<String>) -> Self {
        Self {
            experiment_id: experiment_id.into(),
            game_id: game_id.into(),
            agents: Vec::new(),
            games_per_match: 100,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            seed: 0,
            created_at: 0,
        }
    }

    /// All rule violations, empty when the manifest is valid.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !is_safe_id(&self.experiment_id) {
            out.push(format!(
                "experiment id {:?} must be 1-64 characters of [A-Za-z0-9_.-]",
                self.experiment_id
            ));
        }
        if let Err(e) = self.game_id.parse::<GameKind>() {
            out.push(e.to_string());
        }
        if self.agents.len() < 2 {
            out.push(format!(
                "an experiment needs >= 2 agents, found {}",
                self.agents.len()
            ));
        }
        if self.games_per_match == 0 {
            out.push("games_per_match must be >= 1".into());
        }
        if self.max_attempts == 0 {
            out.push("max_attempts must be >= 1".into());
        }
        let mut seen = BTreeSet::new();
        for agent in &self.agents {
            if !is_safe_id(&agent.agent_id) {
                out.push(format!(
                    "agent id {:?} must be 1-64 characters of [A-Za-z0-9_.-]",
                    agent.agent_id
                ));
            }
            if !seen.insert(agent.agent_id.as_str()) {
                out.push(format!("duplicate agent id {:?}", agent.agent_id));
            }
            if let Err(e) = agent.td_params.validate() {
                out.push(format!("agent {:?}: {e}", agent.agent_id));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), TournamentError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(TournamentError::Invalid(v))
        }
    }

    pub fn agent(&self, id: &str) -> Option<&AgentCharacter> {
        self.agents.iter().find(|a| a.agent_id == id)
    }

    pub fn agent_ids(&self) -> Vec<&str> {
        self.agents.iter().map(|a| a.agent_id.as_str()).collect()
    }

    pub fn to_xml(&self) -> String {
        let mut w = XmlWriter::new();
        w.open(
            "experiment",
            &[
                ("id", self.experiment_id.clone()),
                ("game", self.game_id.clone()),
                ("games_per_match", self.games_per_match.to_string()),
                ("max_attempts", self.max_attempts.to_string()),
                ("seed", self.seed.to_string()),
                ("created_at", self.created_at.to_string()),
            ],
        );
        if self.agents.is_empty() {
            w.empty("agents", &[]);
        } else {
            w.open("agents", &[]);
            for a in &self.agents {
                w.empty("agent", &agent_attrs(a));
            }
            w.close("agents");
        }
        w.close("experiment");
        w.finish()
    }

    /// Parses without validating; call [`validate`](Self::validate) to
    /// enforce the experiment rules.
    pub fn from_xml(doc: &str) -> Result<Self, XmlError> {
        let root = xml::parse(doc)?;
        root.expect_name("experiment")?;
        let agents = root
            .child("agents")?
            .children_named("agent")
            .map(agent_from_element)
            .collect::<Result<_, _>>()?;
        Ok(Self {
            experiment_id: root.attr("id")?.to_string(),
            game_id: root.attr("game")?.to_string(),
            agents,
            games_per_match: root.parse_attr("games_per_match")?,
            max_attempts: root.parse_attr("max_attempts")?,
            seed: root.parse_attr("seed")?,
            created_at: root.parse_attr_opt("created_at")?.unwrap_or(0),
        })
    }
}

pub(crate) fn agent_attrs(a: &AgentCharacter) -> Vec<(&'static str, String)> {
    vec![
        ("id", a.agent_id.clone()),
        ("name", a.display_name.clone()),
        ("seed", a.network_seed.to_string()),
        ("alpha", fmt_f64(a.td_params.alpha)),
        ("gamma", fmt_f64(a.td_params.gamma)),
        ("lambda", fmt_f64(a.td_params.lambda)),
        ("epsilon", fmt_f64(a.td_params.epsilon)),
    ]
}

pub(crate) fn agent_from_element(e: &Element) -> Result<AgentCharacter, XmlError> {
    e.expect_name("agent")?;
    Ok(AgentCharacter {
        agent_id: e.attr("id")?.to_string(),
        display_name: e.attr("name")?.to_string(),
        network_seed: e.parse_attr("seed")?,
        td_params: TdParams {
            alpha: e.parse_attr("alpha")?,
            gamma: e.parse_attr("gamma")?,
            lambda: e.parse_attr("lambda")?,
            epsilon: e.parse_attr("epsilon")?,
        },
    })
}
