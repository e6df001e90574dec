use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::EncoderError;
use crate::audio::FPS;

/// Sizes of the left context, center and right look-ahead sub-blocks, in frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub n_left: usize,
    pub n_center: usize,
    pub n_right: usize,
}

impl Default for BlockConfig {
    fn default() -> Self {
        BlockConfig {
            n_left: 256,
            n_center: 16,
            n_right: 16,
        }
    }
}

impl BlockConfig {
    pub fn new(n_left: usize, n_center: usize, n_right: usize) -> Result<Self, EncoderError> {
        if n_center == 0 {
            return Err(EncoderError::Config(
                "center block must hold at least one frame".into(),
            ));
        }
        Ok(BlockConfig {
            n_left,
            n_center,
            n_right,
        })
    }

    pub fn block_len(&self) -> usize {
        self.n_left + self.n_center + self.n_right
    }

    /// Algorithmic latency: a center frame waits for the rest of its block and
    /// the look-ahead.
    pub fn latency_frames(&self) -> usize {
        self.n_center + self.n_right
    }

    pub fn latency_s(&self) -> f64 {
        self.latency_frames() as f64 / FPS
    }
}

/// Frame ranges of one contextual block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSpan {
    pub index: usize,
    pub left: Range<usize>,
    pub center: Range<usize>,
    pub right: Range<usize>,
}

/// Tiles `[0, total)` with center blocks of `n_center` frames; left and right
/// context are truncated at the stream boundaries.
pub fn chunk_blocks(total: usize, cfg: &BlockConfig) -> Vec<BlockSpan> {
    (0..total.div_ceil(cfg.n_center))
        .map(|b| {
            let cs = b * cfg.n_center;
            let ce = (cs + cfg.n_center).min(total);
            BlockSpan {
                index: b,
                left: cs.saturating_sub(cfg.n_left)..cs,
                center: cs..ce,
                right: ce..(ce + cfg.n_right).min(total),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hundred_frames_by_sixteen() {
        let cfg = BlockConfig::new(256, 16, 16).unwrap();
        let b = chunk_blocks(100, &cfg);
        assert_eq!(b.len(), 7);
        assert_eq!(b[6].center, 96..100);
        assert_eq!(b[6].right, 100..100);
        assert_eq!(b[0].left, 0..0);
        assert_eq!(b[5].right, 96..100);
    }

    #[test]
    fn degenerate_single_block() {
        let cfg = BlockConfig::new(0, 16, 0).unwrap();
        let b = chunk_blocks(16, &cfg);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].center, 0..16);
        assert!(b[0].left.is_empty() && b[0].right.is_empty());
    }

    #[test]
    fn zero_center_rejected() {
        assert!(BlockConfig::new(4, 0, 4).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn centers_partition_the_stream(t in 1usize..400, l in 0usize..40, c in 1usize..40, r in 0usize..40) {
            let cfg = BlockConfig::new(l, c, r).unwrap();
            let blocks = chunk_blocks(t, &cfg);
            let mut owner = vec![0u32; t];
            for b in &blocks {
                for f in b.center.clone() { owner[f] += 1; }
                prop_assert!(b.left.len() <= l && b.right.len() <= r);
                prop_assert_eq!(b.left.end, b.center.start);
                prop_assert_eq!(b.right.start, b.center.end);
            }
            prop_assert!(owner.iter().all(|&n| n == 1));
        }
    }
}
