use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Channel, ChatMessage, DirectPeer, Mention, MessageLog, Sender};
use crate::ids::AgentId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RoutingError {
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
}

/// Who sees a message and who processes it.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DeliveryPlan {
    pub display: BTreeSet<AgentId>,
    pub context: BTreeSet<AgentId>,
    pub assistant_context: bool,
}

/// Group messages are displayed to every agent but only enter the context
/// of mentioned agents (`@all` mentions everyone). Direct messages reach
/// only their target. A robot never receives its own message as input.
pub fn route(msg: &ChatMessage, roster: &BTreeSet<AgentId>) -> Result<DeliveryPlan, RoutingError> {
    for mention in &msg.mentions {
        if let Mention::Agent(agent) = mention {
            if !roster.contains(agent) {
                return Err(RoutingError::UnknownAgent(agent.to_string()));
            }
        }
    }
    let mut plan = match &msg.channel {
        Channel::Direct { peer, target } => {
            if !roster.contains(target) {
                return Err(RoutingError::UnknownAgent(target.to_string()));
            }
            let only: BTreeSet<AgentId> = [target.clone()].into();
            DeliveryPlan {
                display: only.clone(),
                context: only,
                assistant_context: *peer == DirectPeer::Assistant,
            }
        }
        Channel::Group => {
            let context = if msg.mentions.contains(&Mention::Broadcast) {
                roster.clone()
            } else {
                msg.mentions
                    .iter()
                    .filter_map(|m| match m {
                        Mention::Agent(a) => Some(a.clone()),
                        _ => None,
                    })
                    .collect()
            };
            DeliveryPlan {
                display: roster.clone(),
                context,
                assistant_context: true,
            }
        }
    };
    if let Sender::Robot(own) = &msg.sender {
        plan.context.remove(own);
    }
    Ok(plan)
}

/// Session chat: the log plus per-agent display and processing contexts.
///
/// All appends go through [`ChatRoom::post`], the single ordering point.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChatRoom {
    roster: BTreeSet<AgentId>,
    log: MessageLog,
    contexts: BTreeMap<AgentId, Vec<u64>>,
    displays: BTreeMap<AgentId, Vec<u64>>,
    assistant_context: Vec<u64>,
}

impl ChatRoom {
    pub fn new(roster: impl IntoIterator<Item = AgentId>) -> Self {
        let roster: BTreeSet<AgentId> = roster.into_iter().collect();
        Self {
            contexts: roster.iter().map(|a| (a.clone(), Vec::new())).collect(),
            displays: roster.iter().map(|a| (a.clone(), Vec::new())).collect(),
            roster,
            ..Self::default()
        }
    }

    pub fn roster(&self) -> &BTreeSet<AgentId> {
        &self.roster
    }

    pub fn log(&self) -> &MessageLog {
        &self.log
    }

    /// Routes and appends. Mentions and agent ids inside the structured
    /// record must all belong to the roster.
    pub fn post(&mut self, msg: ChatMessage) -> Result<u64, RoutingError> {
        for agent in msg.kind.agents() {
            if !self.roster.contains(agent) {
                return Err(RoutingError::UnknownAgent(agent.to_string()));
            }
        }
        if let Some(agent) = msg.sender_agent() {
            if !self.roster.contains(agent) {
                return Err(RoutingError::UnknownAgent(agent.to_string()));
            }
        }
        let plan = route(&msg, &self.roster)?;
        let seq = self.log.append(msg);
        for agent in &plan.display {
            self.displays.entry(agent.clone()).or_default().push(seq);
        }
        for agent in &plan.context {
            self.contexts.entry(agent.clone()).or_default().push(seq);
        }
        if plan.assistant_context {
            self.assistant_context.push(seq);
        }
        Ok(seq)
    }

    /// Sequence numbers an agent processes.
    pub fn context_of(&self, agent: &AgentId) -> &[u64] {
        self.contexts.get(agent).map_or(&[], Vec::as_slice)
    }

    /// Sequence numbers shown in an agent's chat view.
    pub fn display_of(&self, agent: &AgentId) -> &[u64] {
        self.displays.get(agent).map_or(&[], Vec::as_slice)
    }

    pub fn assistant_context(&self) -> &[u64] {
        &self.assistant_context
    }

    pub fn context_messages(&self, agent: &AgentId) -> Vec<&ChatMessage> {
        self.context_of(agent)
            .iter()
            .filter_map(|seq| self.log.get(*seq))
            .collect()
    }
}
