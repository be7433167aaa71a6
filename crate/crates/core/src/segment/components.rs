use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::image::{BinaryMask, GrayImage};

/// An 8-connected foreground object.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub label: u32,
    /// Member pixels in row-major order.
    pub pixels: Vec<(usize, usize)>,
    pub centroid: (f64, f64),
}

impl Component {
    /// Builds a component, computing the centroid. `pixels` must be non-empty.
    pub fn from_pixels(label: u32, mut pixels: Vec<(usize, usize)>) -> Self {
        assert!(!pixels.is_empty(), "component without pixels");
        pixels.sort_by_key(|&(x, y)| (y, x));
        let n = pixels.len() as f64;
        let (sx, sy) = pixels.iter().fold((0.0, 0.0), |(ax, ay), &(x, y)| (ax + x as f64, ay + y as f64));
        Component { label, pixels, centroid: (sx / n, sy / n) }
    }

    #[inline]
    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    /// Length of the marching-squares contour separating member from
    /// non-member pixel centers.
    pub fn perimeter(&self) -> f64 {
        let (x0, y0, x1, y1) = self.bbox();
        let w = x1 - x0 + 3;
        let h = y1 - y0 + 3;
        let mut grid = vec![false; w * h];
        for &(x, y) in &self.pixels {
            grid[(y - y0 + 1) * w + (x - x0 + 1)] = true;
        }
        let half_diag = core::f64::consts::SQRT_2 / 2.0;
        let mut len = 0.0;
        for y in 0..h - 1 {
            for x in 0..w - 1 {
                let i = y * w + x;
                let (a, b, c, d) = (grid[i], grid[i + 1], grid[i + w + 1], grid[i + w]);
                len += match a as u8 + b as u8 + c as u8 + d as u8 {
                    1 | 3 => half_diag,
                    2 if a == c => 2.0 * half_diag,
                    2 => 1.0,
                    _ => 0.0,
                };
            }
        }
        len
    }

    /// `4 pi area / perimeter^2`, close to 1 for discs.
    pub fn circularity(&self) -> f64 {
        let p = self.perimeter();
        4.0 * core::f64::consts::PI * self.area() as f64 / (p * p)
    }

    /// Inclusive bounding box `(x_min, y_min, x_max, y_max)`.
    pub fn bbox(&self) -> (usize, usize, usize, usize) {
        self.pixels.iter().fold((usize::MAX, usize::MAX, 0, 0), |(a, b, c, d), &(x, y)| {
            (a.min(x), b.min(y), c.max(x), d.max(y))
        })
    }

    pub fn to_mask(&self, width: usize, height: usize) -> BinaryMask {
        let mut m = BinaryMask::empty(width, height);
        for &(x, y) in &self.pixels {
            m.set(x, y, true);
        }
        m
    }
}

/// Foreground is every pixel at or below `g_thresh`: vessel lumens are dark.
pub fn binarize(img: &GrayImage, g_thresh: f32) -> BinaryMask {
    let (w, h) = img.dims();
    BinaryMask::new(w, h, img.pixels().iter().map(|&v| v <= g_thresh).collect()).unwrap()
}

pub(crate) const NEIGHBORS_8: [(isize, isize); 8] =
    [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

/// 8-connected labeling. Labels start at 1 and follow the row-major order
/// of each component's first pixel.
pub fn connected_components(mask: &BinaryMask) -> Vec<Component> {
    let (w, h) = mask.dims();
    let mut labels = vec![0u32; w * h];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask.bits()[start] || labels[start] != 0 {
            continue;
        }
        let label = out.len() as u32 + 1;
        labels[start] = label;
        queue.push_back(start);
        let mut pixels = Vec::new();
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            pixels.push((x, y));
            for (dx, dy) in NEIGHBORS_8 {
                let nx = x as isize + dx;
                let ny = y as isize + dy;
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if mask.bits()[j] && labels[j] == 0 {
                    labels[j] = label;
                    queue.push_back(j);
                }
            }
        }
        out.push(Component::from_pixels(label, pixels));
    }
    out
}

/// The `n` largest components, largest first; equal areas keep the smaller label.
pub fn keep_n_largest(components: &[Component], n: usize) -> Vec<Component> {
    let mut sorted: Vec<&Component> = components.iter().collect();
    sorted.sort_by(|a, b| b.area().cmp(&a.area()).then(a.label.cmp(&b.label)));
    sorted.into_iter().take(n).cloned().collect()
}

/// Union of the components' pixels as a mask.
pub fn components_mask(components: &[Component], width: usize, height: usize) -> BinaryMask {
    let mut m = BinaryMask::empty(width, height);
    for c in components {
        for &(x, y) in &c.pixels {
            m.set(x, y, true);
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn squares() -> BinaryMask {
        BinaryMask::from_fn(12, 6, |x, y| (x < 3 && y < 3) || ((6..9).contains(&x) && (2..5).contains(&y)))
    }

    #[test]
    fn empty_mask_has_no_components() {
        assert!(connected_components(&BinaryMask::empty(5, 5)).is_empty());
    }

    #[test]
    fn two_squares() {
        let cc = connected_components(&squares());
        assert_eq!(cc.len(), 2);
        assert!(cc.iter().all(|c| c.area() == 9));
        assert_eq!(cc[0].centroid, (1.0, 1.0));
        assert_eq!(cc[1].centroid, (7.0, 3.0));
    }

    #[test]
    fn diagonal_pixels_connect() {
        let m = BinaryMask::from_fn(3, 3, |x, y| x == y);
        assert_eq!(connected_components(&m).len(), 1);
    }

    #[test]
    fn binarize_extremes() {
        assert_eq!(binarize(&GrayImage::filled(4, 4, 0.0), 0.5).count(), 16);
        assert_eq!(binarize(&GrayImage::filled(4, 4, 1.0), 0.5).count(), 0);
    }

    fn comp(label: u32, area: usize) -> Component {
        Component::from_pixels(label, (0..area).map(|i| (i, label as usize)).collect())
    }

    #[test]
    fn keep_largest_orders_by_area() {
        let cs = [comp(1, 5), comp(2, 9), comp(3, 2)];
        let kept = keep_n_largest(&cs, 2);
        assert_eq!(kept.iter().map(Component::area).collect::<Vec<_>>(), vec![9, 5]);
    }

    #[test]
    fn keep_largest_tie_prefers_smaller_label() {
        let cs = [comp(4, 4), comp(2, 4)];
        assert_eq!(keep_n_largest(&cs, 1)[0].label, 2);
        assert_eq!(keep_n_largest(&cs, 5).len(), 2);
    }

    #[test]
    fn disc_is_more_circular_than_ellipse() {
        let m = BinaryMask::from_fn(40, 40, |x, y| {
            let dx = x as f64 - 20.0;
            let dy = y as f64 - 20.0;
            dx * dx + dy * dy <= 144.0
        });
        let disc = connected_components(&m)[0].circularity();
        let e = BinaryMask::from_fn(60, 40, |x, y| {
            let dx = (x as f64 - 30.0) / 24.0;
            let dy = (y as f64 - 20.0) / 8.0;
            dx * dx + dy * dy <= 1.0
        });
        let elongated = connected_components(&e)[0].circularity();
        assert!(disc > 0.85 && disc < 1.05, "{disc}");
        assert!(elongated < disc - 0.1, "{elongated}");
    }
}
