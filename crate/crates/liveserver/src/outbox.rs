use std::collections::VecDeque;
use std::sync::Mutex;

use tokio::sync::Notify;

use crate::protocol::ServerMessage;

/// Ordered queue from the simulation loop to the socket writer. Frames past
/// `frame_capacity` push out the oldest queued frame; control messages are
/// never dropped.
#[derive(Debug)]
pub struct Outbox {
    state: Mutex<State>,
    notify: Notify,
    frame_capacity: usize,
}

#[derive(Debug, Default)]
struct State {
    queue: VecDeque<ServerMessage>,
    frames: usize,
    dropped: u64,
    closed: bool,
}

impl Outbox {
    pub fn new(frame_capacity: usize) -> Self {
        Outbox {
            state: Mutex::new(State::default()),
            notify: Notify::new(),
            frame_capacity: frame_capacity.max(1),
        }
    }

    pub fn push(&self, msg: ServerMessage) {
        let mut s = self.state.lock().unwrap();
        if s.closed {
            return;
        }
        if msg.is_frame() {
            if s.frames >= self.frame_capacity {
                if let Some(i) = s.queue.iter().position(ServerMessage::is_frame) {
                    s.queue.remove(i);
                    s.frames -= 1;
                    s.dropped += 1;
                }
            }
            s.frames += 1;
        }
        s.queue.push_back(msg);
        drop(s);
        self.notify.notify_one();
    }

    pub fn close(&self) {
        self.state.lock().unwrap().closed = true;
        self.notify.notify_one();
    }

    pub fn dropped(&self) -> u64 {
        self.state.lock().unwrap().dropped
    }

    /// Takes everything queued. `None` once closed and drained.
    pub fn drain(&self) -> Option<Vec<ServerMessage>> {
        let mut s = self.state.lock().unwrap();
        if s.queue.is_empty() {
            return if s.closed { None } else { Some(Vec::new()) };
        }
        s.frames = 0;
        Some(s.queue.drain(..).collect())
    }

    pub async fn next_batch(&self) -> Option<Vec<ServerMessage>> {
        loop {
            match self.drain() {
                Some(b) if b.is_empty() => self.notify.notified().await,
                other => return other,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{Frame, SessionSummary};

    fn frame(i: usize) -> ServerMessage {
        ServerMessage::Frame(Frame {
            t: i as f64,
            theta: 0.0,
            omega: 0.0,
            coherence_seed: 0,
            cue: 0,
            crash_flag: false,
            trial_index: 0,
        })
    }

    #[test]
    fn slow_reader_loses_oldest_frames_only() {
        let o = Outbox::new(3);
        o.push(frame(0));
        o.push(ServerMessage::SessionEnd {
            summary: SessionSummary::default(),
        });
        for i in 1..6 {
            o.push(frame(i));
        }
        let got = o.drain().unwrap();
        let ts: Vec<f64> = got
            .iter()
            .filter_map(|m| match m {
                ServerMessage::Frame(f) => Some(f.t),
                _ => None,
            })
            .collect();
        assert_eq!(ts, vec![3.0, 4.0, 5.0]);
        assert!(matches!(got[0], ServerMessage::SessionEnd { .. }));
        assert_eq!(o.dropped(), 3);
        o.close();
        assert!(o.drain().is_none());
    }
}
