//! Core of the grid tournament platform.
//!
//! * [`game`] and [`rlgame`] define the match workloads.
//! * [`tournament`] turns an experiment manifest into round-robin rounds and
//!   match jobs.
//! * [`gridsim`] models the grid the jobs run on.
//! * [`orchestrator`] drives an experiment from launch to final report.

pub mod game;
pub mod gridsim;
pub mod orchestrator;
pub mod rlgame;
pub mod seed;
pub mod tournament;
pub mod xml;

pub use game::{AgentCharacter, GameWorkload, MatchResult, TdParams};
pub use xml::{XmlError, XmlWriter};
