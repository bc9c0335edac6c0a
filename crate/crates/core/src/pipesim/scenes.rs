use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::REC601;
use crate::image::Image;

// Linear colors of common scene content (sky, foliage, skin, soil, neutral).
const PALETTE: [[f64; 3]; 7] = [
    [0.20, 0.35, 0.70],
    [0.10, 0.30, 0.06],
    [0.55, 0.33, 0.25],
    [0.30, 0.20, 0.10],
    [0.45, 0.45, 0.45],
    [0.70, 0.62, 0.45],
    [0.60, 0.12, 0.08],
];

const TARGET_LUMA: f64 = 0.2;

/// A canonical linear test scene: a two-color gradient background with
/// rectangles and discs of palette colors under smooth shading, exposed so
/// that its mean luminance is close to a fixed level.
pub fn synthetic_scene(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = |rng: &mut ChaCha8Rng, c: [f64; 3]| c.map(|v| (v * rng.gen_range(0.75..1.25)).min(1.0));
    let pick = |rng: &mut ChaCha8Rng| PALETTE[rng.gen_range(0..PALETTE.len())];
    let base = pick(&mut rng);
    let top = jitter(&mut rng, base);
    let base = pick(&mut rng);
    let bottom = jitter(&mut rng, base);

    enum Shape {
        Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
        Disc { cx: f64, cy: f64, r: f64 },
    }
    let n_shapes = rng.gen_range(4..9);
    let shapes: Vec<(Shape, [f64; 3])> = (0..n_shapes)
        .map(|i| {
            // Always include one neutral object.
            let base = if i == 0 { PALETTE[4] } else { pick(&mut rng) };
            let color = jitter(&mut rng, base);
            let shape = if rng.gen_bool(0.5) {
                let (w, h) = (rng.gen_range(0.1..0.4), rng.gen_range(0.1..0.4));
                let (x0, y0) = (rng.gen_range(0.0..1.0 - w), rng.gen_range(0.0..1.0 - h));
                Shape::Rect { x0, y0, x1: x0 + w, y1: y0 + h }
            } else {
                Shape::Disc { cx: rng.gen(), cy: rng.gen(), r: rng.gen_range(0.06..0.2) }
            };
            (shape, color)
        })
        .collect();
    let (fx, fy, phase) = (rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0), rng.gen_range(0.0..6.28));

    let mut img = Image::from_fn(width, height, |x, y| {
        let u = (x as f64 + 0.5) / width as f64;
        let v = (y as f64 + 0.5) / height as f64;
        let mut c = [0.0; 3];
        for k in 0..3 {
            c[k] = top[k] + (bottom[k] - top[k]) * v;
        }
        for (shape, color) in &shapes {
            let inside = match *shape {
                Shape::Rect { x0, y0, x1, y1 } => (x0..x1).contains(&u) && (y0..y1).contains(&v),
                Shape::Disc { cx, cy, r } => (u - cx).powi(2) + (v - cy).powi(2) < r * r,
            };
            if inside {
                c = *color;
            }
        }
        let shade = 0.8 + 0.2 * (fx * u * 6.28 + fy * v * 6.28 + phase).sin();
        c.map(|v| (v * shade) as f32)
    });

    let luma: f64 = img.pixels().map(|p| (0..3).map(|k| REC601[k] * p[k] as f64).sum::<f64>()).sum::<f64>()
        / img.pixel_count() as f64;
    let exposure = TARGET_LUMA / luma.max(1e-6);
    for v in img.data_mut() {
        *v = ((*v as f64) * exposure).clamp(0.0, 1.0) as f32;
    }
    img
}
