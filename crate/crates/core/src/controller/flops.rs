//! Forward-pass FLOPs of the actor network.
//!
//! A linear layer `in -> out` costs `2*in*out + out` (multiply-add per
//! weight plus bias add) and tanh costs 4 per unit. Every actor layer,
//! including the output, is followed by tanh. The critic is not counted.

use serde::{Deserialize, Serialize};

/// FLOPs per tanh evaluation.
pub const TANH_FLOPS: u64 = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerFlops {
    pub label: String,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsReport {
    /// Linear layers only.
    pub per_layer: Vec<LayerFlops>,
    pub activation_flops: u64,
    pub total: u64,
}

pub fn linear_flops(inputs: usize, outputs: usize) -> u64 {
    let (i, o) = (inputs as u64, outputs as u64);
    2 * i * o + o
}

/// `layer_sizes` is `[obs_dim, hidden.., act_dim]`; every entry must be >= 1.
pub fn count_flops(layer_sizes: &[usize]) -> FlopsReport {
    assert!(layer_sizes.len() >= 2, "need at least input and output sizes");
    assert!(layer_sizes.iter().all(|&n| n >= 1), "layer sizes must be >= 1");
    let last = layer_sizes.len() - 2;
    let per_layer: Vec<LayerFlops> = layer_sizes
        .windows(2)
        .enumerate()
        .map(|(k, w)| LayerFlops {
            label: if k == last {
                "actor_head".to_string()
            } else {
                format!("hidden{}", k + 1)
            },
            flops: linear_flops(w[0], w[1]),
        })
        .collect();
    let activation_flops = layer_sizes[1..].iter().map(|&n| n as u64).sum::<u64>() * TANH_FLOPS;
    let total = per_layer.iter().map(|l| l.flops).sum::<u64>() + activation_flops;
    FlopsReport {
        per_layer,
        activation_flops,
        total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Closed form for the 4-size case: sum over the three layers of
    /// (2*a*b + b) + 4*b.
    fn symbolic(s: [u64; 4]) -> u64 {
        let [o, h1, h2, a] = s;
        2 * (o * h1 + h1 * h2 + h2 * a) + 5 * (h1 + h2 + a)
    }

    #[test]
    fn reference_network() {
        let r = count_flops(&[10, 64, 64, 4]);
        assert_eq!(r.total, 10644);
        assert_eq!(
            r.per_layer.iter().map(|l| l.flops).collect::<Vec<_>>(),
            vec![1344, 8256, 516]
        );
        assert_eq!(r.activation_flops, 528);
    }

    #[test]
    fn unit_network_follows_convention() {
        // (2+1)+4 per layer, three layers
        assert_eq!(count_flops(&[1, 1, 1, 1]).total, 21);
    }

    #[test]
    fn monotone_in_observation_size() {
        let mut prev = 0;
        for obs in 1..50 {
            let t = count_flops(&[obs, 64, 64, 4]).total;
            assert!(t > prev);
            prev = t;
        }
    }

    proptest! {
        #[test]
        fn matches_symbolic_recount(o in 1u64..300, h1 in 1u64..300, h2 in 1u64..300, a in 1u64..30) {
            let r = count_flops(&[o as usize, h1 as usize, h2 as usize, a as usize]);
            prop_assert_eq!(r.total, symbolic([o, h1, h2, a]));
            prop_assert_eq!(r.total, r.per_layer.iter().map(|l| l.flops).sum::<u64>() + r.activation_flops);
        }
    }
}
