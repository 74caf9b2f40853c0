//! Controllable microscopic traffic simulation.
//!
//! The crate is organised around the simulation pipeline:
//!
//! * [`scenario`]: the scenario data model, canonical file format and a
//!   synthetic grid generator.
//! * [`router`]: lane graph, A* routing and reference-route expansion.
//! * [`sim`]: the discrete-time engine with its prepare/update stages and
//!   geometry services (collision, off-road, lane association).
//! * [`policy`]: expert replay, bicycle tracking, lane IDM with MOBIL,
//!   trajectory IDM and external control.
//! * [`planner`]: the diffusion motion planner (scene encoder, denoiser,
//!   guided sampler, guide costs, training).
//! * [`rl_env`]: single-agent reinforcement learning environment.
//! * [`metrics`]: evaluation battery over rollout records.

pub mod geometry;
pub mod planner;
pub mod router;
pub mod policy;
pub mod scenario;
pub mod sim;
pub mod metrics;
pub mod config;
pub mod rl_env;
pub mod render;
