//! Binary morphology and connected-component labeling on masks.

use crate::model::{BinaryMask, GeoRaster, LabeledMask};

/// Offsets `(dx, dy)` of a diamond structuring element of odd `size`: all
/// pixels within L1 distance `(size - 1) / 2` of the center.
pub fn diamond(size: usize) -> Vec<(i64, i64)> {
    assert!(size % 2 == 1 && size >= 1, "structuring element size must be odd");
    let r = (size as i64 - 1) / 2;
    let mut offsets = Vec::new();
    for dy in -r..=r {
        let w = r - dy.abs();
        for dx in -w..=w {
            offsets.push((dx, dy));
        }
    }
    offsets
}

/// Diamond is symmetric, so each row of the element is a contiguous span
/// `[-w, w]`. Both passes below work on those spans with a per-row running
/// count, which keeps the cost at O(pixels * rows-of-element).
fn span_counts(mask: &BinaryMask) -> Vec<u32> {
    // prefix sums along each row, width + 1 entries per row
    let w = mask.width;
    let mut pre = vec![0u32; (w + 1) * mask.height];
    for row in 0..mask.height {
        let base = row * (w + 1);
        for col in 0..w {
            pre[base + col + 1] = pre[base + col] + u32::from(mask.data[row * w + col] != 0);
        }
    }
    pre
}

/// Erosion with a diamond; pixels outside the raster count as 0.
pub fn erode(mask: &BinaryMask, se_size: usize) -> BinaryMask {
    let r = (se_size as i64 - 1) / 2;
    let (w, h) = (mask.width as i64, mask.height as i64);
    let pre = span_counts(mask);
    let mut out = mask.clone();
    for row in 0..h {
        'px: for col in 0..w {
            for dy in -r..=r {
                let half = r - dy.abs();
                let y = row + dy;
                let (x0, x1) = (col - half, col + half);
                if y < 0 || y >= h || x0 < 0 || x1 >= w {
                    out.data[(row * w + col) as usize] = 0;
                    continue 'px;
                }
                let base = (y * (w + 1)) as usize;
                let count = pre[base + x1 as usize + 1] - pre[base + x0 as usize];
                if count as i64 != x1 - x0 + 1 {
                    out.data[(row * w + col) as usize] = 0;
                    continue 'px;
                }
            }
            out.data[(row * w + col) as usize] = 1;
        }
    }
    out
}

/// Dilation with a diamond.
pub fn dilate(mask: &BinaryMask, se_size: usize) -> BinaryMask {
    let r = (se_size as i64 - 1) / 2;
    let (w, h) = (mask.width as i64, mask.height as i64);
    let pre = span_counts(mask);
    let mut out = mask.clone();
    for row in 0..h {
        'px: for col in 0..w {
            for dy in -r..=r {
                let half = r - dy.abs();
                let y = row + dy;
                if y < 0 || y >= h {
                    continue;
                }
                let x0 = (col - half).max(0);
                let x1 = (col + half).min(w - 1);
                let base = (y * (w + 1)) as usize;
                if pre[base + x1 as usize + 1] > pre[base + x0 as usize] {
                    out.data[(row * w + col) as usize] = 1;
                    continue 'px;
                }
            }
            out.data[(row * w + col) as usize] = 0;
        }
    }
    out
}

/// Morphological opening (erosion then dilation) with a diamond element of
/// odd `se_size >= 3`.
pub fn morphological_open(mask: &BinaryMask, se_size: usize) -> BinaryMask {
    assert!(se_size >= 3 && se_size % 2 == 1, "structuring element size must be odd and >= 3");
    dilate(&erode(mask, se_size), se_size)
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new() -> Self {
        Self { parent: vec![0] }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // keep the smaller root so provisional order follows scan order
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Two-pass 8-connected labeling of pixels for which `same(a, b)` joins
/// neighbours `a` and `b` (indices into the raster). Pixels with
/// `foreground(i) == false` get label 0.
pub(crate) fn label_with<F, S>(width: usize, height: usize, foreground: F, same: S) -> Vec<u32>
where
    F: Fn(usize) -> bool,
    S: Fn(usize, usize) -> bool,
{
    let mut labels = vec![0u32; width * height];
    let mut sets = DisjointSet::new();
    for row in 0..height {
        for col in 0..width {
            let i = row * width + col;
            if !foreground(i) {
                continue;
            }
            let mut current = 0u32;
            // previously visited neighbours: W, NW, N, NE
            let mut neighbours = [usize::MAX; 4];
            if col > 0 {
                neighbours[0] = i - 1;
            }
            if row > 0 {
                if col > 0 {
                    neighbours[1] = i - width - 1;
                }
                neighbours[2] = i - width;
                if col + 1 < width {
                    neighbours[3] = i - width + 1;
                }
            }
            for &n in &neighbours {
                if n == usize::MAX || labels[n] == 0 || !same(i, n) {
                    continue;
                }
                if current == 0 {
                    current = labels[n];
                } else {
                    sets.union(current, labels[n]);
                }
            }
            labels[i] = if current == 0 { sets.make() } else { current };
        }
    }
    // resolve, then number roots by first appearance in scan order
    let mut final_id = vec![0u32; sets.parent.len()];
    let mut next = 0u32;
    for l in labels.iter_mut() {
        if *l == 0 {
            continue;
        }
        let root = sets.find(*l);
        if final_id[root as usize] == 0 {
            next += 1;
            final_id[root as usize] = next;
        }
        *l = final_id[root as usize];
    }
    labels
}

/// 8-connected component labeling; labels `1..=n` follow the raster-scan
/// order of each component's first pixel.
pub fn label_connected(mask: &BinaryMask) -> LabeledMask {
    let data = label_with(mask.width, mask.height, |i| mask.data[i] != 0, |_, _| true);
    let count = data.iter().copied().max().unwrap_or(0);
    LabeledMask {
        raster: GeoRaster {
            width: mask.width,
            height: mask.height,
            bands: 1,
            geo: mask.geo,
            data,
        },
        count,
    }
}

/// Splits every label of `mask` into its 8-connected pieces.
pub fn split_connected(mask: &LabeledMask) -> LabeledMask {
    let d = &mask.raster.data;
    let data = label_with(
        mask.raster.width,
        mask.raster.height,
        |i| d[i] != 0,
        |a, b| d[a] == d[b],
    );
    let count = data.iter().copied().max().unwrap_or(0);
    LabeledMask {
        raster: GeoRaster {
            data,
            ..mask.raster.clone()
        },
        count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GeoTransform;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask_from(rows: &[&str]) -> BinaryMask {
        let h = rows.len();
        let w = rows[0].len();
        let data = rows
            .iter()
            .flat_map(|r| r.bytes().map(|b| u8::from(b == b'#')))
            .collect();
        GeoRaster::from_data(w, h, 1, GeoTransform::identity(), data).unwrap()
    }

    fn square(size: usize, side: usize, at: usize) -> BinaryMask {
        let mut m = BinaryMask::new(size, size, 1, GeoTransform::identity());
        for r in at..at + side {
            for c in at..at + side {
                m.set(c, r, 0, 1);
            }
        }
        m
    }

    // direct double-loop reference
    fn brute_open(mask: &BinaryMask, se: usize) -> BinaryMask {
        let offs = diamond(se);
        let (w, h) = (mask.width as i64, mask.height as i64);
        let at = |m: &BinaryMask, x: i64, y: i64| {
            x >= 0 && y >= 0 && x < w && y < h && m.data[(y * w + x) as usize] != 0
        };
        let mut er = mask.clone();
        for y in 0..h {
            for x in 0..w {
                er.data[(y * w + x) as usize] = u8::from(offs.iter().all(|&(dx, dy)| at(mask, x + dx, y + dy)));
            }
        }
        let mut out = mask.clone();
        for y in 0..h {
            for x in 0..w {
                out.data[(y * w + x) as usize] = u8::from(offs.iter().any(|&(dx, dy)| at(&er, x - dx, y - dy)));
            }
        }
        out
    }

    #[test]
    fn diamond_sizes() {
        assert_eq!(diamond(3).len(), 5);
        assert_eq!(diamond(5).len(), 13);
        assert_eq!(diamond(7).len(), 25);
    }

    #[test]
    fn isolated_pixel_is_removed() {
        let mut m = BinaryMask::new(11, 11, 1, GeoTransform::identity());
        m.set(5, 5, 0, 1);
        assert!(morphological_open(&m, 5).data.iter().all(|&v| v == 0));
    }

    #[test]
    fn large_square_loses_only_its_corners() {
        // the diamond cannot reach into a right-angle corner: three pixels
        // per corner go, everything else stays
        let m = square(40, 20, 10);
        let o = morphological_open(&m, 5);
        assert_eq!(m.data.iter().filter(|&&v| v == 1).count() - o.data.iter().filter(|&&v| v == 1).count(), 12);
        for (c, r) in [(10, 10), (11, 10), (10, 11), (29, 29), (28, 29), (29, 28)] {
            assert_eq!(o.get(c, r, 0), 0);
        }
        for (c, r) in [(12, 10), (11, 11), (10, 12), (20, 10), (10, 20), (20, 20)] {
            assert_eq!(o.get(c, r, 0), 1);
        }
    }

    #[test]
    fn large_diamond_survives_opening() {
        let mut m = BinaryMask::new(40, 40, 1, GeoTransform::identity());
        for (dx, dy) in diamond(21) {
            m.set((20 + dx) as usize, (20 + dy) as usize, 0, 1);
        }
        assert_eq!(morphological_open(&m, 5), m);
        assert_eq!(morphological_open(&m, 7), m);
    }

    #[test]
    fn opening_matches_reference_and_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..20 {
            let p = 0.4 + 0.05 * (trial % 8) as f64;
            let data = (0..64 * 64).map(|_| u8::from(rng.gen_bool(p))).collect();
            let m = GeoRaster::from_data(64, 64, 1, GeoTransform::identity(), data).unwrap();
            for se in [3, 5, 7] {
                let o = morphological_open(&m, se);
                assert_eq!(o, brute_open(&m, se));
                assert_eq!(morphological_open(&o, se), o);
                assert!(o.data.iter().zip(&m.data).all(|(a, b)| a <= b));
            }
        }
    }

    #[test]
    fn diagonal_pixels_share_a_label() {
        let lm = label_connected(&mask_from(&["#.", ".#"]));
        assert_eq!(lm.count, 1);
        assert_eq!(lm.raster.data, vec![1, 0, 0, 1]);
    }

    #[test]
    fn zero_row_separates_components() {
        let lm = label_connected(&mask_from(&["###", "...", ".#."]));
        assert_eq!(lm.count, 2);
        assert_eq!(lm.raster.data, vec![1, 1, 1, 0, 0, 0, 0, 2, 0]);
    }

    #[test]
    fn labels_follow_scan_order_of_first_pixel() {
        // U shape: the right arm is seen first as its own provisional label
        let lm = label_connected(&mask_from(&["#.#.#", "#.#..", "###.."]));
        assert_eq!(lm.count, 2);
        assert_eq!(lm.raster.data[0], 1);
        assert_eq!(lm.raster.data[2], 1);
        assert_eq!(lm.raster.data[4], 2);
    }

    #[test]
    fn split_separates_same_label_islands() {
        let raw = GeoRaster::from_data(5, 1, 1, GeoTransform::identity(), vec![3, 3, 0, 3, 4]).unwrap();
        let split = split_connected(&LabeledMask { raster: raw, count: 4 });
        assert_eq!(split.raster.data, vec![1, 1, 0, 2, 3]);
        assert_eq!(split.count, 3);
    }
}
