//! In-process message fabric. Delivery is restricted to graph edges and each
//! inbox is drained in sender order, so results never depend on scheduling.

use std::collections::HashSet;
use std::sync::Arc;

use serde::Serialize;

use crate::graph::Graph;
use crate::model::ParamVector;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub enum Message {
    Params {
        from: usize,
        params: Arc<ParamVector>,
    },
    Loss {
        from: usize,
        to: usize,
        value: f64,
    },
    Centrality {
        from: usize,
        value: f64,
    },
}

impl Message {
    pub fn sender(&self) -> usize {
        match *self {
            Message::Params { from, .. }
            | Message::Loss { from, .. }
            | Message::Centrality { from, .. } => from,
        }
    }

    fn kind(&self) -> u8 {
        match self {
            Message::Params { .. } => 0,
            Message::Loss { .. } => 1,
            Message::Centrality { .. } => 2,
        }
    }
}

/// Running message counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct MessageStats {
    pub params: usize,
    pub losses: usize,
    pub centralities: usize,
}

impl std::ops::Sub for MessageStats {
    type Output = MessageStats;

    fn sub(self, rhs: MessageStats) -> MessageStats {
        MessageStats {
            params: self.params - rhs.params,
            losses: self.losses - rhs.losses,
            centralities: self.centralities - rhs.centralities,
        }
    }
}

#[derive(Debug)]
pub struct Mailbox {
    graph: Graph,
    inboxes: Vec<Vec<Message>>,
    sent_this_phase: HashSet<(usize, usize, u8)>,
    stats: MessageStats,
}

impl Mailbox {
    pub fn new(graph: &Graph) -> Self {
        Self {
            graph: graph.clone(),
            inboxes: vec![Vec::new(); graph.n()],
            sent_this_phase: HashSet::new(),
            stats: MessageStats::default(),
        }
    }

    /// Starts a new phase: at most one message of each kind per directed
    /// edge is allowed until the next call.
    pub fn begin_phase(&mut self) {
        self.sent_this_phase.clear();
    }

    pub fn stats(&self) -> MessageStats {
        self.stats
    }

    pub fn send(&mut self, to: usize, msg: Message) -> Result<()> {
        let from = msg.sender();
        if !self.graph.is_adjacent(from, to) {
            return Err(Error::ProtocolDesync {
                server: from,
                detail: format!("attempted to message non-neighbor {to}"),
            });
        }
        if !self.sent_this_phase.insert((from, to, msg.kind())) {
            return Err(Error::ProtocolDesync {
                server: from,
                detail: format!("duplicate message of the same kind to {to} within a phase"),
            });
        }
        match msg {
            Message::Params { .. } => self.stats.params += 1,
            Message::Loss { .. } => self.stats.losses += 1,
            Message::Centrality { .. } => self.stats.centralities += 1,
        }
        self.inboxes[to].push(msg);
        Ok(())
    }

    /// Sends `msg` to every neighbor of its sender.
    pub fn broadcast(&mut self, msg: Message) -> Result<()> {
        let from = msg.sender();
        let neighbors = self.graph.neighbors(from).to_vec();
        for to in neighbors {
            self.send(to, msg.clone())?;
        }
        Ok(())
    }

    /// Removes and returns the inbox of `node`, ordered by sender id.
    pub fn drain(&mut self, node: usize) -> Vec<Message> {
        let mut msgs = std::mem::take(&mut self.inboxes[node]);
        msgs.sort_by_key(Message::sender);
        msgs
    }

    pub fn is_empty(&self) -> bool {
        self.inboxes.iter().all(Vec::is_empty)
    }
}
