//! History buffer of generated images for discriminator updates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_POOL_CAPACITY: usize = 50;

/// Bounded store of past generator outputs with its own seeded RNG.
///
/// While filling, every query is stored and returned as is. Once full, a
/// query swaps with a uniformly chosen slot half of the time and passes
/// through unchanged otherwise.
#[derive(Clone, Debug)]
pub struct ImagePool {
    capacity: usize,
    storage: Vec<Tensor>,
    rng: ChaCha8Rng,
}

impl ImagePool {
    pub fn new(capacity: usize, seed: u64) -> Self {
        ImagePool {
            capacity,
            storage: Vec::with_capacity(capacity),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn stored(&self) -> &[Tensor] {
        &self.storage
    }

    /// Returns the image the discriminator should see in place of `img`.
    pub fn query(&mut self, img: Tensor) -> Result<Tensor> {
        if let Some(first) = self.storage.first() {
            if first.shape() != img.shape() {
                return Err(Error::PoolShape {
                    expected: first.shape(),
                    got: img.shape(),
                });
            }
        }
        if self.capacity == 0 {
            return Ok(img);
        }
        if self.storage.len() < self.capacity {
            self.storage.push(img.clone());
            return Ok(img);
        }
        let u: f64 = self.rng.random();
        if u < 0.5 {
            let slot = self.rng.random_range(0..self.capacity);
            Ok(std::mem::replace(&mut self.storage[slot], img))
        } else {
            Ok(img)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn img(v: f32) -> Tensor {
        Tensor::full(Shape::new(1, 3, 2, 2).unwrap(), v)
    }

    #[test]
    fn fill_phase_is_identity() {
        let mut pool = ImagePool::new(DEFAULT_POOL_CAPACITY, 7);
        for i in 0..DEFAULT_POOL_CAPACITY {
            let out = pool.query(img(i as f32)).unwrap();
            assert_eq!(out, img(i as f32));
            assert_eq!(pool.len(), i + 1);
        }
    }

    #[test]
    fn rejects_shape_change() {
        let mut pool = ImagePool::new(4, 0);
        pool.query(img(1.0)).unwrap();
        let other = Tensor::zeros(Shape::new(1, 3, 4, 4).unwrap());
        assert!(matches!(pool.query(other), Err(Error::PoolShape { .. })));
    }

    #[test]
    fn same_seed_same_sequence() {
        let run = |seed| {
            let mut pool = ImagePool::new(5, seed);
            (0..200).map(|i| pool.query(img(i as f32)).unwrap().data()[0]).collect::<Vec<_>>()
        };
        assert_eq!(run(11), run(11));
        assert_ne!(run(11), run(12));
    }

    #[test]
    fn zero_capacity_passes_through() {
        let mut pool = ImagePool::new(0, 0);
        assert_eq!(pool.query(img(2.0)).unwrap(), img(2.0));
        assert!(pool.is_empty());
    }
}
