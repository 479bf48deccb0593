use crate::real::Real;

/// Inverted dropout whose keep/drop decision for element `(vertex, j)` is a
/// pure function of `(seed, epoch, slot, vertex, j)`.
///
/// Keying on the vertex rather than on a chunk or worker makes the mask
/// identical however the vertices are split across workers and chunks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dropout {
    pub rate: f64,
    pub seed: u64,
    pub epoch: u64,
    /// Which layer input this mask belongs to.
    pub slot: u64,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Dropout {
    #[inline]
    fn row_key(&self, vertex: usize) -> u64 {
        let mut k = splitmix64(self.seed);
        k = splitmix64(k ^ self.epoch);
        k = splitmix64(k ^ self.slot);
        splitmix64(k ^ vertex as u64)
    }

    #[inline]
    fn keep_with_key(&self, row_key: u64, j: usize) -> bool {
        let bits = splitmix64(row_key ^ (j as u64).wrapping_mul(0xd6e8_feb8_6659_fd93)) >> 11;
        let u = bits as f64 / (1u64 << 53) as f64;
        u >= self.rate
    }

    pub fn keep(&self, vertex: usize, j: usize) -> bool {
        self.keep_with_key(self.row_key(vertex), j)
    }

    /// `out = input ⊙ mask / (1 − rate)`. Also used for the backward pass,
    /// which applies the same scaled mask to the incoming gradient.
    pub fn apply_row<T: Real>(&self, vertex: usize, input: &[T], out: &mut [T]) {
        if self.rate <= 0.0 {
            out.copy_from_slice(input);
            return;
        }
        let scale = T::from_f64(1.0 / (1.0 - self.rate));
        let key = self.row_key(vertex);
        for (j, (o, &x)) in out.iter_mut().zip(input).enumerate() {
            *o = if self.keep_with_key(key, j) {
                x * scale
            } else {
                T::zero()
            };
        }
    }
}

/// Dropout settings for one epoch; hands out the mask of each slot.
/// Slot 0 is the input projection, `1..=L` the graph layers, `L+1` the head.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutPlan {
    pub rate: f64,
    pub seed: u64,
    pub epoch: u64,
}

impl DropoutPlan {
    pub fn slot(&self, slot: usize) -> Option<Dropout> {
        (self.rate > 0.0).then_some(Dropout {
            rate: self.rate,
            seed: self.seed,
            epoch: self.epoch,
            slot: slot as u64,
        })
    }
}

/// Applies `mask` if present, otherwise copies.
#[inline]
pub fn maybe_drop_row<T: Real>(mask: Option<&Dropout>, vertex: usize, input: &[T], out: &mut [T]) {
    match mask {
        Some(d) => d.apply_row(vertex, input, out),
        None => out.copy_from_slice(input),
    }
}
