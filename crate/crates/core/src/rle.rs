//! COCO uncompressed run-length encoding.
//!
//! Runs are taken in column-major order and alternate background/foreground,
//! starting with background; `size` is `[height, width]`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    pub size: [u32; 2],
    pub counts: Vec<u32>,
}

impl Rle {
    pub fn from_pixels(width: u32, height: u32, pixels: &[(u32, u32)]) -> Rle {
        let mut idx: Vec<u64> = pixels
            .iter()
            .map(|&(x, y)| x as u64 * height as u64 + y as u64)
            .collect();
        idx.sort_unstable();
        idx.dedup();
        let total = width as u64 * height as u64;
        let mut counts = Vec::new();
        let mut pos = 0u64;
        let mut i = 0;
        while i < idx.len() {
            counts.push((idx[i] - pos) as u32);
            let start = idx[i];
            let mut end = start + 1;
            i += 1;
            while i < idx.len() && idx[i] == end {
                end += 1;
                i += 1;
            }
            counts.push((end - start) as u32);
            pos = end;
        }
        if pos < total || counts.is_empty() {
            counts.push((total - pos) as u32);
        }
        Rle {
            size: [height, width],
            counts,
        }
    }

    /// Foreground pixels as `(x, y)` in row-major order.
    pub fn to_pixels(&self) -> Vec<(u32, u32)> {
        let h = self.size[0] as u64;
        let mut out = Vec::new();
        let mut pos = 0u64;
        for (i, &c) in self.counts.iter().enumerate() {
            if i % 2 == 1 {
                for p in pos..pos + c as u64 {
                    out.push(((p / h) as u32, (p % h) as u32));
                }
            }
            pos += c as u64;
        }
        out.sort_unstable_by_key(|&(x, y)| (y, x));
        out
    }

    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as u64).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_example() {
        // 2x2 image, foreground at (x=1, y=0): column-major index 2
        let r = Rle::from_pixels(2, 2, &[(1, 0)]);
        assert_eq!(r.counts, vec![2, 1, 1]);
        assert_eq!(r.area(), 1);
        assert_eq!(Rle::from_pixels(2, 2, &[]).counts, vec![4]);
    }

    proptest! {
        #[test]
        fn pixels_roundtrip(w in 1u32..12, h in 1u32..12, bits in proptest::collection::vec(any::<bool>(), 144)) {
            let mut px = Vec::new();
            for y in 0..h { for x in 0..w { if bits[(y * 12 + x) as usize] { px.push((x, y)); } } }
            let r = Rle::from_pixels(w, h, &px);
            prop_assert_eq!(r.counts.iter().map(|&c| c as u64).sum::<u64>(), (w * h) as u64);
            prop_assert_eq!(r.to_pixels(), px);
        }
    }
}
