//! Seeded synthetic scenes: textured RGB images and planar two-view setups.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::raster::Raster;

struct Shape {
    kind: u8,
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    cos: f64,
    sin: f64,
    color: [f64; 3],
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (self.cos * dx + self.sin * dy) / self.rx;
        let v = (-self.sin * dx + self.cos * dy) / self.ry;
        match self.kind {
            0 => u.abs() <= 1.0 && v.abs() <= 1.0,
            1 => u * u + v * v <= 1.0,
            _ => v.abs() <= 1.0 && u.abs() <= (1.0 - v) / 2.0,
        }
    }
}

/// A 3-channel image of overlapping rotated rectangles, ellipses and
/// triangles over a smooth gradient, 2×2 supersampled. Corner-rich and
/// fully determined by `seed`.
pub fn textured_image(seed: u64, width: u32, height: u32) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = width.min(height) as f64;
    let n = (width as f64 * height as f64 / 150.0).clamp(30.0, 4000.0) as usize;
    let shapes: Vec<Shape> = (0..n)
        .map(|_| {
            let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
            Shape {
                kind: rng.random_range(0..3),
                cx: rng.random_range(-0.05..1.05) * width as f64,
                cy: rng.random_range(-0.05..1.05) * height as f64,
                rx: rng.random_range(0.015..0.08) * scale,
                ry: rng.random_range(0.015..0.08) * scale,
                cos: angle.cos(),
                sin: angle.sin(),
                color: [rng.random_range(10.0..245.0), rng.random_range(10.0..245.0), rng.random_range(10.0..245.0)],
            }
        })
        .collect();
    let base: [f64; 3] = [rng.random_range(60.0..190.0), rng.random_range(60.0..190.0), rng.random_range(60.0..190.0)];
    let (gx, gy) = (rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0));

    // Supersampled canvas: sample (i, j) sits at pixel ((i - 0.5) / 2, (j - 0.5) / 2).
    let (sw, sh) = (2 * width as usize, 2 * height as usize);
    let pos = |i: usize| (i as f64 - 0.5) / 2.0;
    let mut canvas: Vec<[f64; 3]> = (0..sw * sh)
        .map(|k| {
            let (px, py) = (pos(k % sw), pos(k / sw));
            std::array::from_fn(|c| base[c] + gx * px / width as f64 + gy * py / height as f64)
        })
        .collect();
    for s in &shapes {
        let r = s.rx.max(s.ry) * 1.5;
        let lo_x = ((s.cx - r) * 2.0 + 0.5).floor().max(0.0) as usize;
        let hi_x = (((s.cx + r) * 2.0 + 0.5).ceil().max(0.0) as usize).min(sw);
        let lo_y = ((s.cy - r) * 2.0 + 0.5).floor().max(0.0) as usize;
        let hi_y = (((s.cy + r) * 2.0 + 0.5).ceil().max(0.0) as usize).min(sh);
        for j in lo_y..hi_y {
            for i in lo_x..hi_x {
                if s.contains(pos(i), pos(j)) {
                    canvas[j * sw + i] = s.color;
                }
            }
        }
    }
    let mut img = Raster::zeros(width, height, 3);
    for y in 0..height as usize {
        for x in 0..width as usize {
            let (top, bottom) = (2 * y * sw + 2 * x, (2 * y + 1) * sw + 2 * x);
            let quad = [canvas[top], canvas[top + 1], canvas[bottom], canvas[bottom + 1]];
            for c in 0..3 {
                let v = quad.iter().map(|s| s[c]).sum::<f64>() / 4.0;
                img.set(x as u32, y as u32, c, v.clamp(0.0, 255.0).round());
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_textured() {
        let a = textured_image(3, 80, 60);
        assert_eq!(a, textured_image(3, 80, 60));
        assert_ne!(a, textured_image(4, 80, 60));
        assert_eq!(a.channels(), 3);
        let g = a.to_gray();
        let mean = g.data().iter().sum::<f64>() / g.data().len() as f64;
        let var = g.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / g.data().len() as f64;
        assert!(var > 100.0);
    }
}
