//! Measurement of sociolinguistic lexical variables in labeled social-media
//! corpora.
//!
//! The pipeline runs [`corpus`] ingestion, [`variables`] extraction of
//! context-restricted variant uses, and then one of the analyses:
//! grouped and longitudinal rates ([`estimation`]), staggered event studies
//! around dated policy changes ([`eventstudy`]), or embedding-based
//! semantic shift of single words ([`embedshift`]).

pub mod corpus;
pub mod embedshift;
pub mod estimation;
pub mod eventstudy;
pub mod plot;
pub mod synth;
pub mod variables;
