//! Blinded, persona-conditioned multi-judge evaluation of competing translations,
//! with rank-based agreement and paired-difference statistics.

pub mod blinding;
pub mod corpus;
pub mod dimension;
pub mod fixture;
pub mod judge;
pub mod parse;
pub mod persona;
pub mod provider;
pub mod report;
pub mod rng;
pub mod run;
pub mod scaffold;
pub mod stats;

pub use dimension::Dimension;

/// Compiles and runs the guide's code samples as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/run-directory.md")]
    pub struct RunDirectory;
    #[doc = include_str!("../../../book/src/blinding.md")]
    pub struct Blinding;
    #[doc = include_str!("../../../book/src/prompts.md")]
    pub struct Prompts;
    #[doc = include_str!("../../../book/src/scaffolding.md")]
    pub struct Scaffolding;
    #[doc = include_str!("../../../book/src/parsing.md")]
    pub struct Parsing;
    #[doc = include_str!("../../../book/src/statistics.md")]
    pub struct Statistics;
    #[doc = include_str!("../../../book/src/reports.md")]
    pub struct Reports;
}
