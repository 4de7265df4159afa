//! On-disk experiment workspace.
//!
//! ```text
//! <root>/manifest.xml
//! <root>/agents/<agent_id>.xml   character + initial artifact
//! <root>/status.xml              status map
//! <root>/results/<match_id>.xml  collected match results (written by runs)
//! <root>/store/<hex>             persisted central storage blobs
//! <root>/logs/<job_id>-a<n>.log  per-job logs
//! <root>/events.log              orchestrator event stream
//! <root>/report.xml, report.txt
//! ```

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use super::manifest::{agent_attrs, agent_from_element};
use super::{ExperimentManifest, TournamentError};
use crate::game::{workload_for, AgentCharacter};
use crate::gridsim::BlobRef;
use crate::orchestrator::StatusMap;
use crate::xml::{self, XmlWriter};

/// An agent's configuration file: who it is and the artifact it starts with.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub character: AgentCharacter,
    pub artifact: Vec<u8>,
}

impl AgentConfig {
    pub fn to_xml(&self) -> String {
        let mut w = XmlWriter::new();
        w.open("agent", &agent_attrs(&self.character));
        let digest = BlobRef::of(&self.artifact).to_string();
        match std::str::from_utf8(&self.artifact) {
            Ok(text) => w.text(
                "artifact",
                &[("encoding", "utf-8".into()), ("digest", digest)],
                text,
            ),
            Err(_) => w.text(
                "artifact",
                &[("encoding", "hex".into()), ("digest", digest)],
                &hex::encode(&self.artifact),
            ),
        }
        w.close("agent");
        w.finish()
    }

    pub fn from_xml(doc: &str) -> Result<Self, TournamentError> {
        let root = xml::parse(doc)?;
        let character = agent_from_element(&root)?;
        let art = root.child("artifact")?;
        let artifact = match art.attr("encoding")? {
            "utf-8" => art.text.clone().into_bytes(),
            "hex" => hex::decode(art.text.trim())
                .map_err(|_| art.invalid("encoding", "hex (undecodable body)"))?,
            other => return Err(art.invalid("encoding", other).into()),
        };
        let declared = art.attr("digest")?;
        if BlobRef::of(&artifact).as_str() != declared {
            return Err(TournamentError::Corrupt(format!(
                "artifact of agent {:?} does not match its digest",
                character.agent_id
            )));
        }
        Ok(Self {
            character,
            artifact,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workspace {
    root: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TournamentError + '_ {
    move |source| TournamentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes via a temporary sibling and a rename so readers never see a
/// half-written file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), TournamentError> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(contents).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    drop(f);
    fs::rename(&tmp, path).map_err(io_err(path))
}

impl Workspace {
    pub fn at(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.xml")
    }

    pub fn agents_dir(&self) -> PathBuf {
        self.root.join("agents")
    }

    pub fn agent_path(&self, agent_id: &str) -> PathBuf {
        self.agents_dir().join(format!("{agent_id}.xml"))
    }

    pub fn status_path(&self) -> PathBuf {
        self.root.join("status.xml")
    }

    pub fn results_dir(&self) -> PathBuf {
        self.root.join("results")
    }

    pub fn result_path(&self, match_id: &str) -> PathBuf {
        self.results_dir().join(format!("{match_id}.xml"))
    }

    pub fn store_dir(&self) -> PathBuf {
        self.root.join("store")
    }

    pub fn logs_dir(&self) -> PathBuf {
        self.root.join("logs")
    }

    pub fn events_path(&self) -> PathBuf {
        self.root.join("events.log")
    }

    pub fn report_xml_path(&self) -> PathBuf {
        self.root.join("report.xml")
    }

    pub fn report_text_path(&self) -> PathBuf {
        self.root.join("report.txt")
    }

    pub fn read_manifest(&self) -> Result<ExperimentManifest, TournamentError> {
        let path = self.manifest_path();
        let doc = fs::read_to_string(&path).map_err(io_err(&path))?;
        Ok(ExperimentManifest::from_xml(&doc)?)
    }

    /// Reads and cross-checks the manifest and every agent file.
    pub fn load(&self) -> Result<(ExperimentManifest, Vec<AgentConfig>), TournamentError> {
        let manifest = self.read_manifest()?;
        manifest.validate()?;
        let mut configs = Vec::with_capacity(manifest.agents.len());
        for agent in &manifest.agents {
            let path = self.agent_path(&agent.agent_id);
            let doc = fs::read_to_string(&path).map_err(io_err(&path))?;
            let cfg = AgentConfig::from_xml(&doc)?;
            if &cfg.character != agent {
                return Err(TournamentError::Corrupt(format!(
                    "{} disagrees with manifest.xml",
                    path.display()
                )));
            }
            configs.push(cfg);
        }
        Ok((manifest, configs))
    }
}

/// Writes a fresh workspace for `manifest` under `root`. The output is a
/// pure function of the manifest.
pub fn generate_experiment(
    manifest: &ExperimentManifest,
    root: impl Into<PathBuf>,
) -> Result<Workspace, TournamentError> {
    manifest.validate()?;
    let workload = workload_for(&manifest.game_id)?;
    let ws = Workspace::at(root);
    let agents = ws.agents_dir();
    fs::create_dir_all(&agents).map_err(io_err(&agents))?;
    write_atomic(&ws.manifest_path(), manifest.to_xml().as_bytes())?;
    for agent in &manifest.agents {
        let cfg = AgentConfig {
            character: agent.clone(),
            artifact: workload.initial_artifact(agent),
        };
        write_atomic(&ws.agent_path(&agent.agent_id), cfg.to_xml().as_bytes())?;
    }
    write_atomic(
        &ws.status_path(),
        StatusMap::created(&manifest.experiment_id)
            .to_xml()
            .as_bytes(),
    )?;
    Ok(ws)
}
