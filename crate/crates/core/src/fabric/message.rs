use crate::fabric::groups::WorkerId;
use crate::fabric::ledger::Tag;
use crate::real::Real;
use crate::tensor::Matrix;

/// Bytes of vertex-id framing per id.
pub const ID_BYTES: u64 = 8;

/// A unit of inter-worker traffic, moved by value.
#[derive(Clone, Debug, PartialEq)]
pub struct Message<T> {
    pub src: WorkerId,
    pub dst: WorkerId,
    pub tag: Tag,
    /// Vertex ids of the rows in `block`.
    pub ids: Vec<usize>,
    pub block: Matrix<T>,
    /// Simulated time at which the payload is available at `dst`.
    pub ready_at: f64,
}

impl<T: Real> Message<T> {
    pub fn new(src: WorkerId, dst: WorkerId, tag: Tag, ids: Vec<usize>, block: Matrix<T>) -> Self {
        Self {
            src,
            dst,
            tag,
            ids,
            block,
            ready_at: 0.0,
        }
    }

    /// A barrier token: no ids, no values, zero bytes.
    pub fn control(src: WorkerId, dst: WorkerId) -> Self {
        Self::new(src, dst, Tag::Control, Vec::new(), Matrix::zeros(0, 0))
    }

    pub fn at(mut self, ready_at: f64) -> Self {
        self.ready_at = ready_at;
        self
    }

    /// Accounted payload: 4 bytes per value; always 0 for `Control`.
    pub fn data_bytes(&self) -> u64 {
        if self.tag == Tag::Control {
            0
        } else {
            self.block.len() as u64 * T::WIRE_BYTES
        }
    }

    pub fn framing_bytes(&self) -> u64 {
        if self.tag == Tag::Control {
            0
        } else {
            self.ids.len() as u64 * ID_BYTES
        }
    }

    /// Payload plus framing.
    pub fn byte_size(&self) -> u64 {
        self.data_bytes() + self.framing_bytes()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_vertices_of_width_four() {
        let m = Message::new(0, 1, Tag::ForwardEmb, (0..10).collect(), Matrix::<f32>::zeros(10, 4));
        assert_eq!(m.data_bytes(), 160);
        assert_eq!(m.framing_bytes(), 80);
        assert_eq!(m.byte_size(), 240);
    }

    #[test]
    fn control_is_free() {
        assert_eq!(Message::<f32>::control(0, 1).byte_size(), 0);
    }
}
