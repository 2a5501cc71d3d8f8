use super::messages::{Download, Upload, WireSize};
use std::collections::{BTreeMap, VecDeque};

/// Bytes moved for one client since the counters were last taken.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Traffic {
    pub up: usize,
    pub down: usize,
}

/// In-memory message queues between clients and the server.
///
/// Uploads are delivered to the server sorted by client id, so the order
/// in which clients send has no effect on what the server sees.
#[derive(Debug, Default)]
pub struct InMemoryTransport {
    up: Vec<Upload>,
    down: BTreeMap<usize, VecDeque<Download>>,
    traffic: BTreeMap<usize, Traffic>,
    messages_up: usize,
    messages_down: usize,
}

impl InMemoryTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn send_up(&mut self, msg: Upload) {
        self.traffic.entry(msg.client()).or_default().up += msg.wire_bytes();
        self.messages_up += 1;
        self.up.push(msg);
    }

    /// Everything uploaded since the last call, in client id order.
    pub fn drain_up(&mut self) -> Vec<Upload> {
        let mut out = std::mem::take(&mut self.up);
        out.sort_by_key(Upload::client);
        out
    }

    pub fn send_down(&mut self, client: usize, msg: Download) {
        self.traffic.entry(client).or_default().down += msg.wire_bytes();
        self.messages_down += 1;
        self.down.entry(client).or_default().push_back(msg);
    }

    pub fn recv_down(&mut self, client: usize) -> Option<Download> {
        self.down.get_mut(&client).and_then(VecDeque::pop_front)
    }

    /// Returns and resets the traffic counter of `client`.
    pub fn take_traffic(&mut self, client: usize) -> Traffic {
        self.traffic.remove(&client).unwrap_or_default()
    }

    /// Total messages sent in each direction.
    pub fn message_counts(&self) -> (usize, usize) {
        (self.messages_up, self.messages_down)
    }
}
