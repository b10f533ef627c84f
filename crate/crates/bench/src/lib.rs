//! Seeded fixtures shared by the benchmarks.

use mdsyn_core::augment::{sample_homography, warp_image, WarpConfig};
use mdsyn_core::estimators::{homography_from_points, image_corners};
use mdsyn_core::synth::textured_image;
use mdsyn_core::{Homography, Match, MatchSet, Pixel, Raster};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` correspondences under a random homography on a 640x480 frame,
/// the last `outliers` of them replaced by random pairs.
pub fn planar_matches(seed: u64, n: usize, outliers: usize) -> (Homography, MatchSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let corners = image_corners(640, 480);
    let moved: Vec<Pixel> = corners.iter().map(|c| Pixel::new(c.x + rng.random_range(-60.0..60.0), c.y + rng.random_range(-60.0..60.0))).collect();
    let h = homography_from_points(&corners, &moved).expect("well-conditioned corners");
    let mut point = || Pixel::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
    let matches = (0..n)
        .map(|i| {
            let p = point();
            let q = if i + outliers >= n { point() } else { h.apply(&p).expect("finite") };
            Match::new(p.x, p.y, q.x, q.y, 1.0)
        })
        .collect();
    (h, MatchSet::new("a", "b", matches))
}

/// A textured image and a warped copy with the warp that relates them.
pub fn image_pair(seed: u64, width: u32, height: u32) -> (Raster, Raster, Homography) {
    let a = textured_image(seed, width, height);
    let h = sample_homography(&WarpConfig::default().with_seed(seed), width, height).expect("default warp");
    let b = warp_image(&a, &h, width, height);
    (a, b, h)
}
