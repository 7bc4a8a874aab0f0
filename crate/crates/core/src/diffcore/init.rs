use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};
use crate::rng;

/// Glorot-uniform bound `sqrt(6 / (fan_in + fan_out))`.
///
/// For a matrix `[rows, cols]` the fans are `cols` and `rows`; a vector of
/// length `n` uses `n` for both.
pub fn xavier_bound(shape: &[usize]) -> Result<f64> {
    let (fan_out, fan_in) = match shape {
        [n] => (*n, *n),
        [r, c] => (*r, *c),
        _ => return Err(Error::Shape(format!("xavier_init needs 1 or 2 dims, got {shape:?}"))),
    };
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::Shape(format!("zero-sized dimension in {shape:?}")));
    }
    Ok((6.0 / (fan_in + fan_out) as f64).sqrt())
}

pub fn xavier_init(shape: &[usize], seed: u64) -> Result<Tensor> {
    let bound = xavier_bound(shape)?;
    let n: usize = shape.iter().product();
    let mut rng = rng::stream(seed, "xavier", 0, 0);
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_shape_bound_is_sqrt3() {
        for seed in [0, 1, 99, u64::MAX] {
            let t = xavier_init(&[1, 1], seed).unwrap();
            assert!(t.item().abs() <= 3f64.sqrt());
        }
        assert_eq!(xavier_bound(&[1, 1]).unwrap(), 3f64.sqrt());
    }

    #[test]
    fn bound_for_32_by_96() {
        let b = xavier_bound(&[32, 96]).unwrap();
        assert!((b - 0.216_506_350_946_109_66).abs() < 1e-15);
        let t = xavier_init(&[32, 96], 7).unwrap();
        assert_eq!(t.numel(), 3072);
        assert!(t.data().iter().all(|x| x.abs() <= b));
        // the draw should actually use the range
        let max = t.data().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(max > 0.9 * b);
    }

    #[test]
    fn deterministic() {
        let a = xavier_init(&[4, 4], 7).unwrap();
        let b = xavier_init(&[4, 4], 7).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_ne!(a, xavier_init(&[4, 4], 8).unwrap());
    }

    #[test]
    fn zero_dim_rejected() {
        assert!(matches!(xavier_init(&[0, 3], 1), Err(Error::Shape(_))));
        assert!(xavier_init(&[2, 2, 2], 1).is_err());
    }
}
