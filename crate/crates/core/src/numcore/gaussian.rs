use rand::Rng;

use super::{NumError, Tape, Tensor, Var};

/// Diagonal Gaussian over per-node latent vectors, both `n x d`.
#[derive(Clone, Copy, Debug)]
pub struct GaussianPosterior {
    pub mu: Var,
    pub sigma: Var,
}

impl GaussianPosterior {
    /// Draws `mu + sigma * eps` with `eps ~ N(0, I)` held constant, so
    /// gradients reach `mu` and `sigma` only.
    pub fn sample<R: Rng + ?Sized>(&self, tape: &mut Tape, rng: &mut R) -> Result<Var, NumError> {
        reparam_sample(tape, self.mu, self.sigma, rng)
    }

    pub fn kl(&self, tape: &mut Tape) -> Result<Var, NumError> {
        tape.gaussian_kl(self.mu, self.sigma)
    }
}

pub fn reparam_sample<R: Rng + ?Sized>(tape: &mut Tape, mu: Var, sigma: Var, rng: &mut R) -> Result<Var, NumError> {
    let [r, c] = tape.shape(mu);
    if tape.shape(sigma) != [r, c] {
        return Err(NumError::Shape {
            op: "reparam_sample",
            left: [r, c],
            right: tape.shape(sigma),
        });
    }
    if tape.value(sigma).data().iter().any(|&s| s <= 0.0) {
        return Err(NumError::Domain {
            op: "reparam_sample",
            msg: "sigma must be strictly positive".into(),
        });
    }
    let eps = tape.constant(Tensor::randn(r, c, rng));
    let noise = tape.mul(sigma, eps)?;
    tape.add(mu, noise)
}

/// Reference closed form used by tests and diagnostics.
pub fn gaussian_kl_value(mu: &Tensor, sigma: &Tensor) -> f64 {
    mu.data()
        .iter()
        .zip(sigma.data())
        .map(|(&m, &s)| 0.5 * (m * m + s * s - 1.0 - 2.0 * s.ln()))
        .sum()
}
