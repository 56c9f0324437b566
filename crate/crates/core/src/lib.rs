//! Deception detection over affidavit-grounded multiparty conversations.
//!
//! [`corpus`] loads and segments sessions, [`provider`] talks to text-generation backends,
//! [`prompting`] renders and parses prompts, [`pipeline`] runs the detection variants,
//! [`evaluation`] scores them, [`runner`] drives whole experiments and [`study`] serves the
//! human study.

pub mod corpus;
pub mod evaluation;
pub mod pipeline;
pub mod prompting;
pub mod provider;
pub mod runner;
pub mod study;
