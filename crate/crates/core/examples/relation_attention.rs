//! Per-channel neighbour weights of an untrained relation encoder on a
//! small graph. Every node's weights sum to one in every channel.
//!
//! cargo run --example relation_attention

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ramcg::graph::Csr;
use ramcg::relation::{EncoderConfig, RelationEncoder};
use ramcg::tensor::{ParamStore, Tensor};

fn main() -> ramcg::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let csr = Csr::build(&[(0, 1), (0, 2), (0, 3), (3, 4)], 5)?;
    let x = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.5, 0.5], [-1.0, 0.2], [0.3, -0.6]])?;
    let mut store = ParamStore::new();
    let enc = RelationEncoder::new(
        &mut store,
        &mut rng,
        &EncoderConfig {
            input_dim: 2,
            channels: 3,
            channel_dim: 4,
            hidden_dim: 4,
            output_dim: 4,
            layers: 1,
            slope: 0.2,
            bias: false,
        },
    )?;
    let layers = enc.attention_weights(&store, &x, &csr)?;
    for (ch, alpha) in layers[0].iter().enumerate() {
        println!("channel {ch}");
        for u in 0..csr.num_nodes() {
            let start = csr.offsets()[u];
            let row: Vec<String> = csr
                .neighbors(u)
                .iter()
                .enumerate()
                .map(|(k, v)| format!("{v}:{:.3}", alpha.data()[start + k]))
                .collect();
            println!("  node {u} <- {}", row.join("  "));
        }
    }
    Ok(())
}
