//! Row-major run-length encoding of binary masks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

/// Alternating background/foreground run lengths, starting with background.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub counts: Vec<u32>,
    /// `(height, width)`.
    pub size: (usize, usize),
}

pub fn encode_rle(mask: &BinaryMask) -> RleMask {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for &v in &mask.data {
        if v != current {
            counts.push(run);
            run = 0;
            current = v;
        }
        run += 1;
    }
    counts.push(run);
    RleMask {
        counts,
        size: (mask.height, mask.width),
    }
}

pub fn decode_rle(rle: &RleMask) -> Result<BinaryMask> {
    let (h, w) = rle.size;
    let total: u64 = rle.counts.iter().map(|&c| c as u64).sum();
    if total != (h * w) as u64 {
        return Err(Error::Format(format!(
            "RLE counts sum to {total}, expected {h}x{w} = {}",
            h * w
        )));
    }
    let mut data = Vec::with_capacity(h * w);
    for (i, &c) in rle.counts.iter().enumerate() {
        let v = i % 2 == 1;
        data.extend(std::iter::repeat_n(v, c as usize));
    }
    Ok(BinaryMask {
        height: h,
        width: w,
        data,
    })
}
