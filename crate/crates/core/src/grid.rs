//! Dense row-major 2D rasters shared by the depth, label and color paths.

/// A dense `height x width` raster stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// Depth map in meters.
pub type DepthMap = Grid2<f64>;
/// Per-pixel class ids.
pub type LabelMap = Grid2<u16>;
/// Per-pixel RGB triplets.
pub type ColorMap = Grid2<[u8; 3]>;

impl<T: Clone> Grid2<T> {
    /// Grid filled with a constant value.
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Grid2<T> {
    /// Wraps an existing row-major buffer. Returns `None` when the buffer
    /// length does not match `width * height`.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Option<Self> {
        if data.len() != width * height {
            return None;
        }
        Some(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value at column `x`, row `y`.
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> &T {
        debug_assert!(x < self.width && y < self.height);
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, x: usize, y: usize) -> &mut T {
        debug_assert!(x < self.width && y < self.height);
        &mut self.data[y * self.width + x]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// True when `other` has the same width and height.
    pub fn same_shape<U>(&self, other: &Grid2<U>) -> bool {
        self.width == other.width && self.height == other.height
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_major_indexing() {
        let g = Grid2::from_vec(3, 2, vec![0, 1, 2, 10, 11, 12]).unwrap();
        assert_eq!(*g.at(0, 0), 0);
        assert_eq!(*g.at(2, 0), 2);
        assert_eq!(*g.at(0, 1), 10);
        assert_eq!(*g.at(2, 1), 12);
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Grid2::from_vec(3, 2, vec![0; 5]).is_none());
    }
}
