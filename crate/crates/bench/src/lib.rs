//! Fixtures shared by the benchmarks.

use fleet_core::messaging::ChatRoom;
use fleet_core::planner::CostMatrix;
use fleet_core::{AgentId, Channel, ChatMessage, MessageKind, Sender};

pub const ROSTER: [&str; 5] = ["Rover1", "Rover2", "Dog1", "Dog2", "Drone1"];

/// Deterministic `tasks x robots` matrix with roughly one infeasible pair
/// in seven.
pub fn cost_matrix(tasks: usize, robots: usize, salt: u32) -> CostMatrix {
    (0..tasks)
        .map(|t| {
            (0..robots)
                .map(|r| {
                    let h = (t as u32 * 31 + r as u32 * 17 + salt * 13) % 97;
                    (!h.is_multiple_of(7)).then_some(h % 40)
                })
                .collect()
        })
        .collect()
}

/// A mixed stream of group, mention, broadcast and direct messages.
pub fn message_batch(len: usize) -> Vec<ChatMessage> {
    (0..len)
        .map(|i| {
            let who = AgentId::new(ROSTER[i % ROSTER.len()]).expect("valid id");
            let (sender, channel, body) = match i % 4 {
                0 => (Sender::Assistant, Channel::Group, format!("@{who} next step")),
                1 => (Sender::Robot(who.clone()), Channel::Group, "@all done".to_string()),
                2 => (Sender::Human, Channel::Group, "status?".to_string()),
                _ => (
                    Sender::Human,
                    Channel::Direct {
                        peer: fleet_core::messaging::DirectPeer::Human,
                        target: who,
                    },
                    "hold position".to_string(),
                ),
            };
            ChatMessage::new(sender, channel, MessageKind::Info, body).expect("valid mentions")
        })
        .collect()
}

pub fn room() -> ChatRoom {
    ChatRoom::new(ROSTER.iter().map(|n| AgentId::new(*n).expect("valid id")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_valid() {
        let costs = cost_matrix(4, 3, 1);
        assert_eq!((costs.len(), costs[0].len()), (4, 3));
        assert!(cost_matrix(8, 8, 3).iter().flatten().any(Option::is_none));
        let mut room = room();
        for msg in message_batch(40) {
            room.post(msg).unwrap();
        }
        assert_eq!(room.log().len(), 40);
    }
}
