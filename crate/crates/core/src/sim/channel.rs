use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::topology::NodeId;

/// Per-round link behaviour shared by every microgrid of a scenario.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelModel {
    /// Probability that an edge is dropped for a whole round, both directions.
    #[serde(default)]
    pub loss_probability: f64,
    /// Rounds between sending and receiving a value.
    #[serde(default)]
    pub delay_rounds: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Delivery {
    pub delivered: Vec<(NodeId, NodeId)>,
    pub lost: Vec<(NodeId, NodeId)>,
}

impl Delivery {
    /// Messages delivered this round; each edge carries one in each direction.
    pub fn messages_delivered(&self) -> u64 {
        2 * self.delivered.len() as u64
    }

    pub fn messages_lost(&self) -> u64 {
        2 * self.lost.len() as u64
    }

    pub fn is_delivered(&self, i: NodeId, j: NodeId) -> bool {
        let key = if i < j { (i, j) } else { (j, i) };
        self.delivered.binary_search(&key).is_ok()
    }
}

/// Decides which edges carry traffic this round.
///
/// One uniform draw per edge in the given order, whatever the loss
/// probability, so the random stream does not depend on channel settings.
/// Edges are expected as `(i, j)` with `i < j`, ascending.
pub fn deliver_round<R: Rng + ?Sized>(
    edges: &[(NodeId, NodeId)],
    channel: &ChannelModel,
    rng: &mut R,
) -> Delivery {
    let mut delivery = Delivery::default();
    for &edge in edges {
        if rng.gen::<f64>() < channel.loss_probability {
            delivery.lost.push(edge);
        } else {
            delivery.delivered.push(edge);
        }
    }
    delivery
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn edges() -> Vec<(NodeId, NodeId)> {
        vec![(NodeId(0), NodeId(1)), (NodeId(1), NodeId(2))]
    }

    fn channel(p: f64) -> ChannelModel {
        ChannelModel {
            loss_probability: p,
            delay_rounds: 0,
        }
    }

    #[test]
    fn extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let all = deliver_round(&edges(), &channel(0.0), &mut rng);
        assert_eq!(all.delivered, edges());
        assert_eq!(all.messages_delivered(), 4);
        let none = deliver_round(&edges(), &channel(1.0), &mut rng);
        assert!(none.delivered.is_empty());
        assert_eq!(none.messages_lost(), 4);
    }

    #[test]
    fn seeded_losses_repeat() {
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20)
                .map(|_| deliver_round(&edges(), &channel(0.3), &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(11), run(11));
        assert!(run(11).iter().any(|d| !d.lost.is_empty()));
    }
}
