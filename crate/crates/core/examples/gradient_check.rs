//! Compares tape gradients of a relation encoder with central differences.
//!
//! cargo run --example gradient_check

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ramcg::graph::Csr;
use ramcg::relation::{EncoderConfig, RelationEncoder};
use ramcg::tensor::{fd_gradient, max_relative_error, ParamStore, Tape, Tensor, Var};

fn loss(enc: &RelationEncoder, store: &ParamStore, x: &Tensor, csr: &Csr) -> (Tape, Var) {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let h = enc.forward(&mut tape, store, xv, csr).unwrap();
    let l = tape.sum(h);
    (tape, l)
}

fn main() -> ramcg::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let csr = Csr::build(&[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (1, 3)], 5)?;
    let x = Tensor::from_rows(&[[0.3, -1.0, 0.5], [1.2, 0.1, -0.4], [-0.7, 0.8, 0.2], [0.0, 0.4, 1.1], [0.9, -0.3, -0.8]])?;
    let mut store = ParamStore::new();
    let enc = RelationEncoder::new(
        &mut store,
        &mut rng,
        &EncoderConfig {
            input_dim: 3,
            channels: 4,
            channel_dim: 3,
            hidden_dim: 4,
            output_dim: 4,
            layers: 2,
            slope: 0.2,
            bias: false,
        },
    )?;

    let mut analytic = store.clone();
    let (tape, l) = loss(&enc, &analytic, &x, &csr);
    tape.backward(l, &mut analytic)?;

    for (id, p) in store.iter() {
        let numeric = fd_gradient(
            |theta| {
                let mut s = store.clone();
                s.get_mut(id).value = theta.clone();
                let (t, l) = loss(&enc, &s, &x, &csr);
                t.value(l).data()[0]
            },
            &p.value,
            1e-6,
        );
        let err = max_relative_error(analytic.grad(id).data(), numeric.data(), 1e-3);
        println!("{:<24} {:>4} entries  max relative error {err:.2e}", p.name, p.value.len());
    }
    Ok(())
}
