//! Marker-controlled watershed on the distance transform of a binary mask.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Reverse;

use num_traits::Float;

use crate::image::BinaryMask;

use super::components::{connected_components, Component, NEIGHBORS_8};

/// Exact squared Euclidean distance from every foreground pixel to the
/// nearest background pixel; pixels outside the image count as background.
/// Background pixels get 0.
pub fn squared_distance_transform(mask: &BinaryMask) -> Vec<u64> {
    let (w, h) = mask.dims();
    // Padded grid so that the image border acts as background.
    let pw = w + 2;
    let ph = h + 2;
    let inf = f64::INFINITY;
    let mut grid = vec![0.0f64; pw * ph];
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                grid[(y + 1) * pw + x + 1] = inf;
            }
        }
    }
    let mut line = vec![0.0; pw.max(ph)];
    let mut out = vec![0.0; pw.max(ph)];
    for x in 0..pw {
        for y in 0..ph {
            line[y] = grid[y * pw + x];
        }
        edt_1d(&line[..ph], &mut out[..ph]);
        for y in 0..ph {
            grid[y * pw + x] = out[y];
        }
    }
    for y in 0..ph {
        line[..pw].copy_from_slice(&grid[y * pw..(y + 1) * pw]);
        edt_1d(&line[..pw], &mut out[..pw]);
        grid[y * pw..(y + 1) * pw].copy_from_slice(&out[..pw]);
    }
    let mut d = vec![0u64; w * h];
    for y in 0..h {
        for x in 0..w {
            d[y * w + x] = grid[(y + 1) * pw + x + 1] as u64;
        }
    }
    d
}

/// Lower envelope of parabolas (Felzenszwalb & Huttenlocher).
fn edt_1d(f: &[f64], d: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    // The first finite sample seeds the envelope; all-infinite lines stay infinite.
    let Some(first) = f.iter().position(|v| v.is_finite()) else {
        d.copy_from_slice(f);
        return;
    };
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            // z[0] is -inf, so k never underflows.
            if s <= z[k] {
                k -= 1;
                continue;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    let mut k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        *out = dq * dq + f[p];
    }
}

/// A regional maximum of the distance transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Marker {
    /// Representative pixel (plateau pixel closest to the plateau centroid).
    pub seed: (usize, usize),
    pub plateau: Vec<usize>,
    pub sq_dist: u64,
    /// Connected component of the mask this maximum belongs to.
    pub component: usize,
}

/// Regional maxima of the distance transform. A maximum is dropped when its
/// dynamic (height in pixels above the saddle joining it to a higher
/// maximum) is below `min_dynamic`, or when it lies closer than `r_min` to a
/// stronger maximum of the same connected component.
pub fn find_markers(mask: &BinaryMask, dist: &[u64], r_min: f64, min_dynamic: f64) -> Vec<Marker> {
    let (w, h) = mask.dims();
    let mut comp_of = vec![usize::MAX; w * h];
    for (ci, c) in connected_components(mask).iter().enumerate() {
        for &(x, y) in &c.pixels {
            comp_of[y * w + x] = ci;
        }
    }

    let mut visited = vec![false; w * h];
    let mut candidates = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if visited[start] || dist[start] == 0 {
            continue;
        }
        let value = dist[start];
        let mut plateau = Vec::new();
        let mut is_max = true;
        visited[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            plateau.push(i);
            let (x, y) = (i % w, i / w);
            for (dx, dy) in NEIGHBORS_8 {
                let nx = x as isize + dx;
                let ny = y as isize + dy;
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if dist[j] > value {
                    is_max = false;
                } else if dist[j] == value && !visited[j] {
                    visited[j] = true;
                    stack.push(j);
                }
            }
        }
        if is_max {
            plateau.sort_unstable();
            let n = plateau.len() as f64;
            let (sx, sy) = plateau.iter().fold((0.0, 0.0), |(a, b), &i| (a + (i % w) as f64, b + (i / w) as f64));
            let (mx, my) = (sx / n, sy / n);
            let seed = *plateau
                .iter()
                .min_by(|&&i, &&j| {
                    let di = sq((i % w) as f64 - mx) + sq((i / w) as f64 - my);
                    let dj = sq((j % w) as f64 - mx) + sq((j / w) as f64 - my);
                    di.total_cmp(&dj).then(i.cmp(&j))
                })
                .unwrap();
            candidates.push(Marker { seed: (seed % w, seed / w), component: comp_of[seed], plateau, sq_dist: value });
        }
    }

    let dynamics = dynamics(dist, w, h, &candidates);
    let mut candidates: Vec<Marker> =
        candidates.into_iter().zip(dynamics).filter(|(_, d)| *d >= min_dynamic).map(|(c, _)| c).collect();
    candidates.sort_by(|a, b| b.sq_dist.cmp(&a.sq_dist).then((a.seed.1, a.seed.0).cmp(&(b.seed.1, b.seed.0))));
    let mut accepted: Vec<Marker> = Vec::new();
    for c in candidates {
        let close = accepted.iter().any(|m| {
            m.component == c.component
                && sq(m.seed.0 as f64 - c.seed.0 as f64) + sq(m.seed.1 as f64 - c.seed.1 as f64) < r_min * r_min
        });
        if !close {
            accepted.push(c);
        }
    }
    accepted.sort_by_key(|m| (m.seed.1, m.seed.0));
    accepted
}

/// Dynamic of every candidate maximum, found by merging upper level sets in
/// decreasing distance order. The highest maximum of each component gets
/// infinity.
fn dynamics(dist: &[u64], w: usize, h: usize, candidates: &[Marker]) -> Vec<f64> {
    const NONE: usize = usize::MAX;
    let mut cand_of = vec![NONE; w * h];
    for (k, c) in candidates.iter().enumerate() {
        for &i in &c.plateau {
            cand_of[i] = k;
        }
    }
    let mut order: Vec<usize> = (0..w * h).filter(|&i| dist[i] > 0).collect();
    order.sort_by(|&a, &b| dist[b].cmp(&dist[a]).then(a.cmp(&b)));

    let mut parent: Vec<usize> = (0..w * h).collect();
    // Per root: candidate owning the set's peak (NONE if not yet known).
    let mut owner = vec![NONE; w * h];
    let mut active = vec![false; w * h];
    let mut out = vec![f64::INFINITY; candidates.len()];

    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }

    for &i in &order {
        active[i] = true;
        owner[i] = cand_of[i];
        let level = Float::sqrt(dist[i] as f64);
        let (x, y) = (i % w, i / w);
        for (dx, dy) in NEIGHBORS_8 {
            let nx = x as isize + dx;
            let ny = y as isize + dy;
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                continue;
            }
            let j = ny as usize * w + nx as usize;
            if !active[j] {
                continue;
            }
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
            if ri == rj {
                continue;
            }
            let (oi, oj) = (owner[ri], owner[rj]);
            let merged = match (oi, oj) {
                (NONE, o) | (o, NONE) => o,
                (a, b) if a == b => a,
                (a, b) => {
                    let (ca, cb) = (&candidates[a], &candidates[b]);
                    let a_wins = (ca.sq_dist, Reverse((ca.seed.1, ca.seed.0))) >= (cb.sq_dist, Reverse((cb.seed.1, cb.seed.0)));
                    let (winner, loser) = if a_wins { (a, b) } else { (b, a) };
                    out[loser] = Float::sqrt(candidates[loser].sq_dist as f64) - level;
                    winner
                }
            };
            parent[rj] = ri;
            owner[ri] = merged;
        }
    }
    out
}

#[inline]
fn sq(v: f64) -> f64 {
    v * v
}

/// Splits touching objects: floods the negated distance transform from its
/// (suppressed) maxima. Every foreground pixel ends up in exactly one
/// returned component; labels start at 1 in row-major marker order.
pub fn watershed(mask: &BinaryMask, r_min: f64, min_dynamic: f64) -> Vec<Component> {
    let (w, h) = mask.dims();
    let dist = squared_distance_transform(mask);
    let markers = find_markers(mask, &dist, r_min, min_dynamic);
    let mut labels = vec![0u32; w * h];
    let mut heap = BinaryHeap::new();
    let mut counter = 0u64;
    for (k, m) in markers.iter().enumerate() {
        let label = k as u32 + 1;
        for &i in &m.plateau {
            labels[i] = label;
        }
        for &i in &m.plateau {
            heap.push((dist[i], Reverse(counter), i));
            counter += 1;
        }
    }
    while let Some((_, _, i)) = heap.pop() {
        let (x, y) = (i % w, i / w);
        let label = labels[i];
        for (dx, dy) in NEIGHBORS_8 {
            let nx = x as isize + dx;
            let ny = y as isize + dy;
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                continue;
            }
            let j = ny as usize * w + nx as usize;
            if mask.bits()[j] && labels[j] == 0 {
                labels[j] = label;
                heap.push((dist[j], Reverse(counter), j));
                counter += 1;
            }
        }
    }

    let mut buckets: Vec<Vec<(usize, usize)>> = vec![Vec::new(); markers.len()];
    let mut leftover = BinaryMask::empty(w, h);
    for (i, &l) in labels.iter().enumerate() {
        if l > 0 {
            buckets[l as usize - 1].push((i % w, i / w));
        } else if mask.bits()[i] {
            leftover.set(i % w, i / w, true);
        }
    }
    let mut out: Vec<Component> = buckets
        .into_iter()
        .enumerate()
        .filter(|(_, px)| !px.is_empty())
        .map(|(k, px)| Component::from_pixels(k as u32 + 1, px))
        .collect();
    // Unreachable pixels cannot occur (each component owns its global
    // maximum), but keep the partition total regardless.
    let next = out.len() as u32;
    for (k, c) in connected_components(&leftover).into_iter().enumerate() {
        out.push(Component { label: next + k as u32 + 1, ..c });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_sq_dt(mask: &BinaryMask) -> Vec<u64> {
        let (w, h) = mask.dims();
        let mut out = vec![0; w * h];
        for y in 0..h {
            for x in 0..w {
                if !mask.get(x, y) {
                    continue;
                }
                let mut best = u64::MAX;
                for by in -1..=h as i64 {
                    for bx in -1..=w as i64 {
                        let inside = bx >= 0 && by >= 0 && bx < w as i64 && by < h as i64;
                        if inside && mask.get(bx as usize, by as usize) {
                            continue;
                        }
                        let d = ((bx - x as i64).pow(2) + (by - y as i64).pow(2)) as u64;
                        best = best.min(d);
                    }
                }
                out[y * w + x] = best;
            }
        }
        out
    }

    #[test]
    fn distance_transform_matches_brute_force() {
        let mut state = 12345u64;
        let mask = BinaryMask::from_fn(17, 13, |_, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 33) % 10 < 7
        });
        assert_eq!(squared_distance_transform(&mask), brute_sq_dt(&mask));
    }

    #[test]
    fn single_disc_one_label() {
        let m = BinaryMask::from_fn(40, 40, |x, y| {
            let dx = x as f64 - 20.0;
            let dy = y as f64 - 19.5;
            dx * dx + dy * dy <= 100.0
        });
        let ws = watershed(&m, 5.0, 1.0);
        assert_eq!(ws.len(), 1);
        assert_eq!(ws[0].area(), m.count());
    }

    #[test]
    fn empty_mask_yields_nothing() {
        assert!(watershed(&BinaryMask::empty(8, 8), 5.0, 1.0).is_empty());
    }
}
