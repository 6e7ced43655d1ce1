//! Tape gradients of the ELBO and IWELBO against central differences.

use degm::nnkit::gradcheck::{compare, max_error, numeric_gradients, DEFAULT_STEP};
use degm::nnkit::{Rng, Tape, Tensor};
use degm::vae::{GenerativeModel, Likelihood, VaeComponent, VaeShape};

fn main() -> degm::Result<()> {
    let mut rng = Rng::new(2);
    let x = Tensor::matrix(4, 6, (0..24).map(|_| rng.uniform()).collect())?;
    for lik in [Likelihood::Bernoulli, Likelihood::unit_square_loss_gaussian()] {
        let m = VaeComponent::new(VaeShape::new(6, 5, 3)?, lik, &mut Rng::new(1))?;
        for k in [1, 5] {
            let mut tape = Tape::new();
            let obj = m.objective_on(&mut tape, &x, k, &mut Rng::new(3))?;
            let mean = tape.mean(obj);
            let loss = tape.scale(mean, -1.0);
            let grads = tape.backprop(loss)?;
            let numeric = numeric_gradients(&m, DEFAULT_STEP, |mm| {
                let b = mm.iwelbo(&x, k, &mut Rng::new(3)).unwrap();
                -b.iter().sum::<f64>() / b.len() as f64
            });
            println!("{lik:?} K = {k}: max relative error {:.2e}", max_error(&compare(&grads, &numeric)));
        }
    }
    Ok(())
}
