use crate::engine::config::StalenessConfig;
use crate::real::Real;
use crate::tensor::Matrix;

/// Per-layer values of one worker for the current epoch, plus the frozen
/// historical snapshot read for vertices not yet processed this epoch.
#[derive(Clone, Debug)]
pub struct EmbeddingStore<T> {
    current: Matrix<T>,
    snapshot: Option<Matrix<T>>,
    snapshot_version: u64,
    expected_version: u64,
    processed: Vec<bool>,
}

impl<T: Real> EmbeddingStore<T> {
    /// `with_snapshot = false` when no read can ever miss the current
    /// epoch (one chunk, or synchronous execution).
    pub fn new(rows: usize, cols: usize, with_snapshot: bool) -> Self {
        Self {
            current: Matrix::zeros(rows, cols),
            snapshot: with_snapshot.then(|| Matrix::zeros(rows, cols)),
            snapshot_version: 0,
            expected_version: 0,
            processed: vec![false; rows],
        }
    }

    /// Clears the processed set for 1-based epoch `t`.
    pub fn begin_epoch(&mut self, t: u64, staleness: &StalenessConfig) {
        self.processed.iter_mut().for_each(|p| *p = false);
        self.expected_version = staleness.snapshot_version(t);
    }

    pub fn write(&mut self, v: usize, row: &[T]) {
        self.current.row_mut(v).copy_from_slice(row);
        self.processed[v] = true;
    }

    /// Writable current row; marks `v` processed.
    pub fn row_mut(&mut self, v: usize) -> &mut [T] {
        self.processed[v] = true;
        self.current.row_mut(v)
    }

    pub fn is_processed(&self, v: usize) -> bool {
        self.processed[v]
    }

    /// Current value if `v` was processed this epoch, otherwise the
    /// historical one, otherwise nothing.
    #[inline]
    pub fn read(&self, v: usize) -> Option<&[T]> {
        if self.processed[v] {
            return Some(self.current.row(v));
        }
        let snap = self.snapshot.as_ref()?;
        debug_assert_eq!(
            self.snapshot_version, self.expected_version,
            "historical read of version {} where {} is due",
            self.snapshot_version, self.expected_version
        );
        Some(snap.row(v))
    }

    /// Current value only.
    #[inline]
    pub fn current(&self, v: usize) -> Option<&[T]> {
        self.processed[v].then(|| self.current.row(v))
    }

    pub fn current_matrix(&self) -> &Matrix<T> {
        &self.current
    }

    pub fn snapshot_version(&self) -> u64 {
        self.snapshot_version
    }

    pub fn has_snapshot(&self) -> bool {
        self.snapshot.is_some()
    }

    /// Refreshes the snapshot at the end of 1-based epoch `t` when due.
    pub fn end_epoch(&mut self, t: u64, staleness: &StalenessConfig) {
        if let Some(snap) = self.snapshot.as_mut() {
            if staleness.refresh_after(t) {
                snap.as_mut_slice().copy_from_slice(self.current.as_slice());
                self.snapshot_version = t;
            }
        }
    }
}
