//! Serverless orchestration for unmodified networked programs.
//!
//! Host functions are named programs that start on the first connection to
//! their hostname, sleep when idle and are released after a time-to-live.
//! The pieces:
//!
//! - [`config`]: mapping rules, timing, limits and the config file format.
//! - [`lifecycle`]: the per-host state machine, as a pure function.
//! - [`orchestrator`]: the function manager driving records, timers and a backend.
//! - [`gateway`]: the connection table and socket-operation interception.
//! - [`sim`]: a deterministic discrete-event backend for scripted apps.
//! - [`process`]: a backend that runs real OS processes behind loopback proxies.
//! - [`trace`]: the trace format, diffing and metrics.

pub mod config;
pub mod gateway;
pub mod lifecycle;
pub mod orchestrator;
pub mod process;
pub mod sim;
pub mod time;
pub mod trace;
