//! Synthetic rectified pairs with known disparity: random right-image
//! texture, a piecewise-constant disparity field in horizontal stripes,
//! and a left image sampled from the right at the true shift. Pixels whose
//! source column would fall outside the right image have no valid match
//! and are flagged out of the mask.

use super::{DisparityMap, GrayImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct SyntheticPair {
    pub left: GrayImage,
    pub right: GrayImage,
    pub truth: DisparityMap,
    /// Pixels with an in-frame match in the right image.
    pub valid: Vec<bool>,
}

/// Builds a pair whose true disparity is constant within horizontal
/// stripes of `stripe_height` rows, cycling through `disparities`.
pub fn shifted_stripes(
    width: usize,
    height: usize,
    stripe_height: usize,
    disparities: &[u16],
    seed: u64,
) -> SyntheticPair {
    assert!(width > 0 && height > 0 && stripe_height > 0);
    assert!(!disparities.is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let right = GrayImage {
        width,
        height,
        maxval: 255,
        data: (0..width * height).map(|_| rng.gen_range(0..=255)).collect(),
    };
    let mut left_data = vec![0u16; width * height];
    let mut truth = vec![0u16; width * height];
    let mut valid = vec![false; width * height];
    for r in 0..height {
        let d = disparities[(r / stripe_height) % disparities.len()];
        for c in 0..width {
            let v = r * width + c;
            truth[v] = d;
            if c >= usize::from(d) {
                left_data[v] = right.at(r, c - usize::from(d));
                valid[v] = true;
            } else {
                // no in-frame correspondence: fill with fresh noise
                left_data[v] = rng.gen_range(0..=255);
            }
        }
    }
    SyntheticPair {
        left: GrayImage {
            width,
            height,
            maxval: 255,
            data: left_data,
        },
        right,
        truth: DisparityMap {
            width,
            height,
            labels: truth,
            scale: 1,
        },
        valid,
    }
}
