//! Extracts version-compatibility knowledge from developer Q&A posts into a
//! weighted knowledge graph, and uses that graph to find version
//! incompatibilities between a project's required stack and a local machine.
//!
//! The pipeline runs in two halves:
//!
//! * knowledge extraction: [`ingest`] → [`recognize`] → [`matching`] →
//!   [`qa`] → [`kg`], wired together by [`pipeline`];
//! * detection: [`project`] and [`env`] build the required and local stacks,
//!   and [`detect`] searches the graph for conflicts and fix versions.

pub mod conllu;
pub mod detect;
pub mod env;
pub mod ingest;
pub mod kg;
pub mod lexicon;
pub mod matching;
pub mod model;
pub mod pipeline;
pub mod project;
pub mod qa;
pub mod recognize;

pub use model::{
    compare_versions, parse_version, version_satisfies, version_unifies, ComponentSpec, KnowledgeGraph, Relation,
    StackLayer, Version, VersionConstraint, VersionedComponent,
};
