//! In-process message bus. Messages are serialized on send and decoded on
//! receive so that byte counts reflect the wire format.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Mutex;

use serde::Serialize;

use crate::error::{Error, Result};

use super::message::{share_size, Message, FRAME_OVERHEAD};
use super::RunId;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct KindStats {
    pub messages: u64,
    pub bytes: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct BusStats {
    pub messages: u64,
    pub bytes: u64,
    pub by_kind: BTreeMap<&'static str, KindStats>,
    /// Packed segment bits inside segment messages.
    pub segment_payload_bytes: u64,
    /// Pseudonyms and block keys inside segment messages.
    pub segment_metadata_bytes: u64,
}

struct Envelope {
    from: usize,
    frame: Vec<u8>,
}

pub struct MessageBus {
    run: RunId,
    mailboxes: Vec<Mutex<VecDeque<Envelope>>>,
    stats: Mutex<BusStats>,
}

impl MessageBus {
    pub fn new(run: RunId, parties: usize) -> Self {
        Self {
            run,
            mailboxes: (0..parties).map(|_| Mutex::new(VecDeque::new())).collect(),
            stats: Mutex::new(BusStats::default()),
        }
    }

    pub fn run_id(&self) -> RunId {
        self.run
    }

    pub fn parties(&self) -> usize {
        self.mailboxes.len()
    }

    pub fn send(&self, from: usize, to: usize, msg: &Message) -> Result<()> {
        if from == to || to >= self.mailboxes.len() || from >= self.mailboxes.len() {
            return Err(Error::protocol("bus", format!("invalid route {from} -> {to}")));
        }
        let frame = msg.encode(&self.run);
        {
            let mut st = self.stats.lock().expect("bus stats poisoned");
            st.messages += 1;
            st.bytes += frame.len() as u64;
            let k = st.by_kind.entry(msg.kind()).or_default();
            k.messages += 1;
            k.bytes += frame.len() as u64;
            if let Message::Segments(batch) = msg {
                let (payload, meta) = batch.shares.iter().map(share_size).fold((0, 0), |a, s| (a.0 + s.0, a.1 + s.1));
                st.segment_payload_bytes += payload as u64;
                st.segment_metadata_bytes += meta as u64;
            }
        }
        debug_assert!(frame.len() >= FRAME_OVERHEAD);
        self.mailboxes[to]
            .lock()
            .expect("mailbox poisoned")
            .push_back(Envelope { from, frame });
        Ok(())
    }

    /// Next message for `to`, with its sender.
    pub fn recv(&self, to: usize) -> Result<Option<(usize, Message)>> {
        let env = self.mailboxes[to].lock().expect("mailbox poisoned").pop_front();
        let Some(env) = env else {
            return Ok(None);
        };
        let (run, msg) = Message::decode(&env.frame)?;
        if run != self.run {
            return Err(Error::protocol("bus", "message from a different run"));
        }
        Ok(Some((env.from, msg)))
    }

    /// Receives exactly one message, failing if the mailbox is empty.
    pub fn expect(&self, to: usize, step: &'static str) -> Result<(usize, Message)> {
        self.recv(to)?
            .ok_or_else(|| Error::protocol(step, format!("party {} expected a message", to + 1)))
    }

    pub fn drain(&self, to: usize) -> Result<Vec<(usize, Message)>> {
        let mut out = Vec::new();
        while let Some(m) = self.recv(to)? {
            out.push(m);
        }
        Ok(out)
    }

    pub fn stats(&self) -> BusStats {
        self.stats.lock().expect("bus stats poisoned").clone()
    }
}
