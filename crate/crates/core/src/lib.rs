//! Pairwise image-preference benchmarking.
//!
//! Generated images from several models are paired up per prompt, shown to
//! crowd annotators under one of three criteria, screened by timing and
//! attention checks, and aggregated into per-model Bradley-Terry scores that
//! sum to 100.

pub mod analytics;
pub mod domain;
pub mod platform;
pub mod qa;
pub mod ranking;
pub mod scheduler;
pub mod sim;
pub mod store;

/// Book chapters, compiled so their listings run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/ranking.md")]
    mod ranking {}
    #[doc = include_str!("../../../book/src/scheduling.md")]
    mod scheduling {}
    #[doc = include_str!("../../../book/src/quality-control.md")]
    mod quality_control {}
    #[doc = include_str!("../../../book/src/event-log.md")]
    mod event_log {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/http-api.md")]
    mod http_api {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
}
