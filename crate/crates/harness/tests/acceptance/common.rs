use crl_core::Tensor2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type Outcome = Result<String, String>;

/// Fails the enclosing check with a formatted message.
#[macro_export]
macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

pub fn random_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor2 {
    Tensor2::new(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn dot(a: &Tensor2, b: &Tensor2) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}
