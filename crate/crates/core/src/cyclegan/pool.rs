//! History buffer of generated images for discriminator updates.

use rand::Rng;

use crate::nn::Tensor;

/// Stores up to `capacity` past fakes. Once full, each query returns the
/// incoming image or, with probability ½, a stored one that the incoming
/// image then replaces.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePool {
    capacity: usize,
    images: Vec<Tensor>,
}

impl ImagePool {
    pub fn new(capacity: usize) -> Self {
        ImagePool {
            capacity,
            images: Vec::with_capacity(capacity),
        }
    }

    pub fn from_parts(capacity: usize, mut images: Vec<Tensor>) -> Self {
        images.truncate(capacity);
        ImagePool { capacity, images }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Tensor] {
        &self.images
    }

    /// Per-item pool query over a batch.
    pub fn query(&mut self, batch: &Tensor, rng: &mut impl Rng) -> Tensor {
        if self.capacity == 0 {
            return batch.clone();
        }
        let items: Vec<Tensor> = (0..batch.n).map(|i| self.query_one(batch.item(i), rng)).collect();
        Tensor::stack(&items).expect("items share the batch shape")
    }

    fn query_one(&mut self, image: Tensor, rng: &mut impl Rng) -> Tensor {
        if self.images.len() < self.capacity {
            self.images.push(image.clone());
            return image;
        }
        if rng.random::<f64>() < 0.5 {
            let slot = rng.random_range(0..self.capacity);
            std::mem::replace(&mut self.images[slot], image)
        } else {
            image
        }
    }
}
