use crate::geometry::Point;

/// Read access to the driving noise observed up to some time.
///
/// Implementations never expose values after [`NoiseHistory::time`], which
/// makes every functional evaluated through this trait non-anticipative.
pub trait NoiseHistory {
    /// Latest time covered by the history.
    fn time(&self) -> f64;

    /// Brownian value at the last observation time `<= t`; `None` when `t`
    /// lies beyond the history or the history carries no Brownian path.
    fn brownian_at(&self, t: f64) -> Option<Point>;

    /// Jump counters per mark at the last observation time `<= t`.
    fn jump_counts_at(&self, t: f64) -> Option<Vec<u32>>;
}

/// History that carries no noise at all. Deterministic functionals accept it
/// at any time; noise functionals reject it.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoHistory;

impl NoiseHistory for NoHistory {
    fn time(&self) -> f64 {
        f64::INFINITY
    }

    fn brownian_at(&self, _t: f64) -> Option<Point> {
        None
    }

    fn jump_counts_at(&self, _t: f64) -> Option<Vec<u32>> {
        None
    }
}

/// An explicit observed path on increasing times.
#[derive(Clone, Debug, PartialEq)]
pub struct PathHistory {
    times: Vec<f64>,
    brownian: Vec<Point>,
    jump_counts: Vec<Vec<u32>>,
}

impl PathHistory {
    /// `times` must be increasing and start at 0; all lists have equal length.
    pub fn new(times: Vec<f64>, brownian: Vec<Point>, jump_counts: Vec<Vec<u32>>) -> Self {
        assert_eq!(times.len(), brownian.len());
        assert_eq!(times.len(), jump_counts.len());
        assert!(times.windows(2).all(|w| w[0] < w[1]), "times must increase");
        Self {
            times,
            brownian,
            jump_counts,
        }
    }

    /// A path without jump counters.
    pub fn brownian_only(times: Vec<f64>, brownian: Vec<Point>) -> Self {
        let n = times.len();
        Self::new(times, brownian, vec![Vec::new(); n])
    }

    fn index_at(&self, t: f64) -> Option<usize> {
        let last = *self.times.last()?;
        if t > last + 1e-12 * (1.0 + last.abs()) {
            return None;
        }
        let pos = self.times.partition_point(|&s| s <= t + 1e-12 * (1.0 + t.abs()));
        pos.checked_sub(1)
    }
}

impl NoiseHistory for PathHistory {
    fn time(&self) -> f64 {
        self.times.last().copied().unwrap_or(f64::NEG_INFINITY)
    }

    fn brownian_at(&self, t: f64) -> Option<Point> {
        self.index_at(t).map(|i| self.brownian[i].clone())
    }

    fn jump_counts_at(&self, t: f64) -> Option<Vec<u32>> {
        self.index_at(t).map(|i| self.jump_counts[i].clone())
    }
}
