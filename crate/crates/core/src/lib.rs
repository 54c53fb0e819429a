//! Human-inspired adaptive cruise control as a six-mode hybrid automaton,
//! with variance-driven time headways and a multi-hop V2V channel.

pub mod channel;
pub mod control;
pub mod metrics;
pub mod model;
pub mod properties;
pub mod scenario;
pub mod sim;
pub mod trace;
pub mod vdt;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/vdt.md")]
    mod vdt {}
    #[doc = include_str!("../../../book/src/channel.md")]
    mod channel {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
    #[doc = include_str!("../../../book/src/checks.md")]
    mod checks {}
}
