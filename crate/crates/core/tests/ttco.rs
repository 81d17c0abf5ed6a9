use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simloop_core::raster::{Raster, RgbRaster};
use simloop_core::ttco::{descend_on_pixels, eval_loss, loss_gradient, WarpTarget};

const W: usize = 12;
const H: usize = 9;

fn random_rgb(rng: &mut ChaCha8Rng) -> RgbRaster {
    let data = (0..W * H).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
    Raster::from_vec(W, H, data)
}

fn random_targets(rng: &mut ChaCha8Rng, frames: usize) -> Vec<WarpTarget> {
    (1..frames)
        .map(|frame| {
            let source: Vec<u8> = (0..W * H).map(|_| rng.random_range(0..3u8)).collect();
            WarpTarget {
                frame,
                rgb: random_rgb(rng),
                mask: Raster::from_vec(W, H, source.iter().map(|&s| s != 0).collect()),
                source: Raster::from_vec(W, H, source),
            }
        })
        .collect()
}

/// Independent per-pixel, per-channel evaluation of the masked texture loss.
fn naive_loss(video: &[RgbRaster], target: &WarpTarget) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in 0..H {
        for x in 0..W {
            if *target.source.get(x, y) == 0 {
                continue;
            }
            let c = video[target.frame].get(x, y);
            let t = target.rgb.get(x, y);
            let mut px = 0.0;
            for k in 0..3 {
                px += (c[k] - t[k]) * (c[k] - t[k]);
            }
            sum += px;
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / (3 * count) as f64
    }
}

#[test]
fn loss_matches_naive_oracle_bit_for_bit() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let targets = random_targets(&mut rng, 6);
        let video: Vec<_> = (0..6).map(|_| random_rgb(&mut rng)).collect();
        let rep = eval_loss(&video, &targets).unwrap();
        let mut total = 0.0;
        for (f, t) in rep.per_frame.iter().zip(&targets) {
            assert_eq!(f.l_tex.to_bits(), naive_loss(&video, t).to_bits());
            total += f.l_tex;
        }
        assert_eq!(rep.l_ttco.to_bits(), total.to_bits());
        for t in &targets {
            let single = eval_loss(&video, std::slice::from_ref(t)).unwrap();
            assert_eq!(single.l_ttco.to_bits(), naive_loss(&video, t).to_bits());
        }
    }
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let targets = random_targets(&mut rng, 4);
    let video: Vec<_> = (0..4).map(|_| random_rgb(&mut rng)).collect();
    let grad = loss_gradient(&video, &targets).unwrap();
    let h = 1e-4;
    for frame in 0..4 {
        for i in (0..W * H).step_by(5) {
            for k in 0..3 {
                let mut plus = video.clone();
                plus[frame].data[i][k] += h;
                let mut minus = video.clone();
                minus[frame].data[i][k] -= h;
                let fd = (eval_loss(&plus, &targets).unwrap().l_ttco - eval_loss(&minus, &targets).unwrap().l_ttco) / (2.0 * h);
                assert!((fd - grad[frame].data[i][k]).abs() < 1e-6, "frame {frame} px {i} ch {k}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn invalid_pixels_do_not_matter(seed in any::<u64>(), noise in prop::collection::vec(-1.0f64..1.0, W * H)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let targets = random_targets(&mut rng, 3);
        let video: Vec<_> = (0..3).map(|_| random_rgb(&mut rng)).collect();
        let mut perturbed = video.clone();
        // Frame 0 has no target; other frames change only where the source map is invalid.
        for (i, n) in noise.iter().enumerate() {
            perturbed[0].data[i][0] += n;
            for t in &targets {
                if t.source.data[i] == 0 {
                    perturbed[t.frame].data[i][1] += n;
                }
            }
        }
        let a = eval_loss(&video, &targets).unwrap();
        let b = eval_loss(&perturbed, &targets).unwrap();
        prop_assert_eq!(a.l_ttco.to_bits(), b.l_ttco.to_bits());

        let d = descend_on_pixels(&perturbed, &targets, 3, 10.0).unwrap();
        for i in 0..W * H {
            prop_assert_eq!(d.video[0].data[i], perturbed[0].data[i]);
            for t in &targets {
                if t.source.data[i] == 0 {
                    prop_assert_eq!(d.video[t.frame].data[i], perturbed[t.frame].data[i]);
                }
            }
        }
    }

    #[test]
    fn loss_is_nonnegative_and_zero_on_targets(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let targets = random_targets(&mut rng, 4);
        let mut video: Vec<_> = (0..4).map(|_| random_rgb(&mut rng)).collect();
        prop_assert!(eval_loss(&video, &targets).unwrap().l_ttco >= 0.0);
        for t in &targets {
            video[t.frame] = t.rgb.clone();
        }
        prop_assert_eq!(eval_loss(&video, &targets).unwrap().l_ttco, 0.0);
    }

    #[test]
    fn descent_curve_never_increases(seed in any::<u64>(), lr in 0.1f64..500.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let targets = random_targets(&mut rng, 3);
        let video: Vec<_> = (0..3).map(|_| random_rgb(&mut rng)).collect();
        let d = descend_on_pixels(&video, &targets, 20, lr).unwrap();
        prop_assert_eq!(d.losses.len(), 21);
        for w in d.losses.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
    }
}
