use nightglow_core::renderer::{render_pixel, RenderConfig};
use nightglow_core::synthworld::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    for (label, scale) in [("x1.0", 1.0), ("x0.5", 0.5), ("x0.25", 0.25), ("x0.125", 0.125)] {
        let mut scene = preset("warm-sphere-night").unwrap();
        for p in scene.primitives.iter_mut() {
            p.density *= scale;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut conv = 0.0f64;
        let mut a2 = 0.0f64;
        let hook = AnalyticSampleField { medium: &scene, heads: 1 };
        for _ in 0..100 {
            let ray = random_scene_ray(&mut rng);
            let (c1, h1) = oracle_render(&scene, &ray, 4096);
            let (c2, h2) = oracle_render(&scene, &ray, 8192);
            for a in 0..3 { conv = conv.max((c1[a] - c2[a]).abs()); }
            conv = conv.max((h1 - h2).abs());
            let out = render_pixel(&hook, &ray, &RenderConfig { samples_per_ray: 2048 }).unwrap();
            for a in 0..3 { a2 = a2.max((out.color_pointwise[a] - c2[a]).abs()); }
            a2 = a2.max((out.thermal - h2).abs());
        }
        println!("{label}: density {:.1}: conv(4096 vs 8192) = {conv:.2e}, render2048 vs oracle8192 = {a2:.2e}",
                 60.0 * scale);
    }
}
