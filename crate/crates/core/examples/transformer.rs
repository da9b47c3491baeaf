//! The responder-set actor: one probability row over depots per responder,
//! unchanged by reordering the responders, trainable with plain gradients.

use erm_core::nn::{Adam, Matrix, Trxl, TrxlConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> erm_core::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = Trxl::new(TrxlConfig::for_depots(4), &mut rng)?;
    let x = Matrix::from_vec(3, 8, (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let p = net.predict(&x)?;
    for r in 0..p.rows() {
        println!("responder {r}: {:?}", p.row(r).iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());
    }

    let mut perm = vec![0, 1, 2];
    perm.shuffle(&mut rng);
    let shuffled = net.predict(&x.permute_rows(&perm))?;
    let gap = p.permute_rows(&perm).data().iter().zip(shuffled.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("rows reordered by {perm:?}: largest output change {gap:.1e}");

    // push every responder towards depot 2
    let mut adam = Adam::new(net.n_params(), 1e-2);
    for step in 0..=60 {
        let (probs, cache) = net.forward(&x, None)?;
        let loss: f64 = (0..3).map(|r| -probs.get(r, 2).ln()).sum();
        if step % 20 == 0 {
            println!("step {step:>2}: loss {loss:.4}");
        }
        let mut dp = Matrix::zeros(3, 4);
        for r in 0..3 {
            dp.set(r, 2, -1.0 / probs.get(r, 2));
        }
        let (_, grads) = net.backward(&cache, &dp);
        adam.step(net.params_mut(), &grads);
    }
    Ok(())
}
