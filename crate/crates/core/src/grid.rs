//! Dense channel-major raster used for images, target maps and network tensors.

use serde::{Deserialize, Serialize};

use crate::scalar::{cast, Scalar};

/// `channels × rows × cols` array stored channel-major, row-major within a channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    channels: usize,
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(channels: usize, rows: usize, cols: usize, value: T) -> Self {
        Self {
            channels,
            rows,
            cols,
            data: vec![value; channels * rows * cols],
        }
    }
}

impl<T: Clone + Default> Grid<T> {
    pub fn new(channels: usize, rows: usize, cols: usize) -> Self {
        Self::filled(channels, rows, cols, T::default())
    }
}

impl<T> Grid<T> {
    pub fn from_vec(channels: usize, rows: usize, cols: usize, data: Vec<T>) -> Option<Self> {
        (data.len() == channels * rows * cols).then_some(Self {
            channels,
            rows,
            cols,
            data,
        })
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// `(channels, rows, cols)`.
    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.rows, self.cols)
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn index(&self, c: usize, r: usize, col: usize) -> usize {
        debug_assert!(c < self.channels && r < self.rows && col < self.cols);
        (c * self.rows + r) * self.cols + col
    }

    #[inline]
    pub fn get(&self, c: usize, r: usize, col: usize) -> &T {
        &self.data[self.index(c, r, col)]
    }

    #[inline]
    pub fn get_mut(&mut self, c: usize, r: usize, col: usize) -> &mut T {
        let i = self.index(c, r, col);
        &mut self.data[i]
    }

    #[inline]
    pub fn set(&mut self, c: usize, r: usize, col: usize, v: T) {
        let i = self.index(c, r, col);
        self.data[i] = v;
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn same_spatial<U>(&self, other: &Grid<U>) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            channels: self.channels,
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<S: Scalar> Grid<S> {
    pub fn zeros(channels: usize, rows: usize, cols: usize) -> Self {
        Self::filled(channels, rows, cols, S::zero())
    }

    pub fn cast<T: Scalar>(&self) -> Grid<T> {
        self.map(|&v| cast(v))
    }

    /// Stacks the channels of several grids sharing one spatial shape.
    pub fn concat_channels(parts: &[&Grid<S>]) -> Option<Grid<S>> {
        let first = parts.first()?;
        if parts.iter().any(|p| !p.same_spatial(first)) {
            return None;
        }
        let channels = parts.iter().map(|p| p.channels).sum();
        let mut data = Vec::with_capacity(channels * first.plane_len());
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Some(Grid {
            channels,
            rows: first.rows,
            cols: first.cols,
            data,
        })
    }

    /// Copies channels `[start, start + count)` into a new grid.
    pub fn channel_slice(&self, start: usize, count: usize) -> Grid<S> {
        let n = self.plane_len();
        Grid {
            channels: count,
            rows: self.rows,
            cols: self.cols,
            data: self.data[start * n..(start + count) * n].to_vec(),
        }
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample_nearest(&self, factor: usize) -> Grid<S> {
        let mut out = Grid::zeros(self.channels, self.rows * factor, self.cols * factor);
        for c in 0..self.channels {
            for r in 0..out.rows {
                for col in 0..out.cols {
                    out.set(c, r, col, *self.get(c, r / factor, col / factor));
                }
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Grid<S>) -> S {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(S::zero(), S::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_channel_major() {
        let mut g = Grid::<f64>::zeros(2, 3, 4);
        g.set(1, 2, 3, 5.0);
        assert_eq!(g.data()[g.data().len() - 1], 5.0);
        assert_eq!(g.index(1, 0, 0), 12);
    }

    #[test]
    fn concat_rejects_mismatched_shapes() {
        let a = Grid::<f32>::zeros(1, 2, 2);
        let b = Grid::<f32>::zeros(1, 3, 2);
        assert!(Grid::concat_channels(&[&a, &b]).is_none());
        let c = Grid::concat_channels(&[&a, &a]).unwrap();
        assert_eq!(c.shape(), (2, 2, 2));
    }

    #[test]
    fn upsample_repeats_cells() {
        let g = Grid::from_vec(1, 1, 2, vec![1.0f64, 2.0]).unwrap();
        let u = g.upsample_nearest(2);
        assert_eq!(u.shape(), (1, 2, 4));
        assert_eq!(u.data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }
}
