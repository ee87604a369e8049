//! Live sessions: a human balances the pendulum from a browser while the
//! server runs the authoritative 200 Hz simulation, gates assistant cues
//! and records everything needed to replay the session.
//!
//! The wire protocol is JSON text over a websocket. The client sends
//! `ready` to start each trial, then `joystick` messages whose deflection
//! is held until the next one arrives. The server answers with
//! `trial_start`, 60 Hz `frame`s, `trial_end` and finally `session_end`.

pub mod engine;
pub mod outbox;
pub mod protocol;
pub mod record;
pub mod script;
pub mod server;

pub use engine::{replay, run_loop, verify_replay, Inbound, Pacing, SessionRecord};
pub use protocol::{ClientMessage, Frame, ServerMessage, SessionSummary};
pub use record::{load_record, record_session};
pub use script::{Mode, SessionModels, SessionScript, SessionSettings, TaskSpec};
pub use server::{run_session, LiveServer, ServeError, ServerOptions};
