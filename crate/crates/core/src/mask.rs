//! Binary and instance-ID masks.

use crate::geometry::BBox;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { height, width, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    pub fn intersection(&self, other: &Self) -> usize {
        assert_eq!((self.height, self.width), (other.height, other.width), "mask size mismatch");
        self.data.iter().zip(&other.data).filter(|(&a, &b)| a && b).count()
    }

    pub fn union(&self, other: &Self) -> usize {
        assert_eq!((self.height, self.width), (other.height, other.width), "mask size mismatch");
        self.data.iter().zip(&other.data).filter(|(&a, &b)| a || b).count()
    }

    /// Tight box in continuous pixel coordinates, `None` for an empty mask.
    pub fn bbox(&self) -> Option<BBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        (x0 != usize::MAX).then(|| BBox::new(x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64))
    }

    /// Mean pixel position (pixel centres at `x + 0.5`).
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    sx += x as f64 + 0.5;
                    sy += y as f64 + 0.5;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }
}

/// Per-pixel instance ids, `0` is background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InstanceMask {
    pub height: usize,
    pub width: usize,
    pub ids: Vec<u16>,
}

impl InstanceMask {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            ids: vec![0; height * width],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.ids[y * self.width + x]
    }

    pub fn binary(&self, id: u16) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            data: self.ids.iter().map(|&v| v == id).collect(),
        }
    }

    /// Distinct non-zero ids in ascending order.
    pub fn ids_present(&self) -> Vec<u16> {
        let mut seen: Vec<u16> = self.ids.iter().copied().filter(|&v| v != 0).collect();
        seen.sort_unstable();
        seen.dedup();
        seen
    }
}
