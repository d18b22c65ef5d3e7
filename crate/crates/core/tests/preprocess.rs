use drowsy_core::classifier::{preprocess, FramePixels};
use proptest::prelude::*;

/// Independent bilinear resize: half-pixel centres, edge clamping, f64.
fn oracle(px: &FramePixels, out: usize) -> Vec<f64> {
    let (w, h) = (px.width(), px.height());
    let at = |x: usize, y: usize, c: usize| px.data()[(y * w + x) * 3 + c] as f64;
    let coord = |d: usize, src: usize| {
        let s = (((d as f64) + 0.5) * src as f64 / out as f64 - 0.5).clamp(0.0, (src - 1) as f64);
        let i = s.floor() as usize;
        (i, (i + 1).min(src - 1), s - i as f64)
    };
    let mut v = Vec::with_capacity(out * out * 3);
    for oy in 0..out {
        let (y0, y1, fy) = coord(oy, h);
        for ox in 0..out {
            let (x0, x1, fx) = coord(ox, w);
            for c in 0..3 {
                let val = at(x0, y0, c) * (1.0 - fx) * (1.0 - fy)
                    + at(x1, y0, c) * fx * (1.0 - fy)
                    + at(x0, y1, c) * (1.0 - fx) * fy
                    + at(x1, y1, c) * fx * fy;
                v.push(val / 255.0);
            }
        }
    }
    v
}

fn assert_close(px: &FramePixels) {
    let got = preprocess(px);
    let want = oracle(px, 224);
    assert_eq!(got.as_slice().len(), want.len());
    for (i, (&g, &w)) in got.as_slice().iter().zip(&want).enumerate() {
        assert!((g as f64 - w).abs() < 1e-5, "element {i}: {g} vs {w}");
    }
}

#[test]
fn checkerboard_downscale_by_two_averages_blocks() {
    // 448 -> 224 samples exactly between four source pixels.
    let px = FramePixels::from_fn(448, 448, |x, y| if (x + y) % 2 == 0 { [255, 0, 128] } else { [0, 255, 128] }).unwrap();
    let out = preprocess(&px);
    for &(x, y) in &[(0, 0), (1, 0), (100, 57), (223, 223)] {
        assert!((out.get(x, y, 0) - 0.5).abs() < 1e-6);
        assert!((out.get(x, y, 1) - 0.5).abs() < 1e-6);
        assert!((out.get(x, y, 2) - 128.0 / 255.0).abs() < 1e-6);
    }
    assert_close(&px);
}

#[test]
fn upscale_matches_oracle() {
    assert_close(&FramePixels::from_fn(7, 5, |x, y| [(x * 36) as u8, (y * 50) as u8, ((x + y) * 20) as u8]).unwrap());
}

#[test]
fn single_pixel_fills_output() {
    let out = preprocess(&FramePixels::new(1, 1, vec![51, 102, 204]).unwrap());
    for y in [0, 111, 223] {
        assert_eq!(out.get(y, 223 - y, 0), 0.2);
        assert_eq!(out.get(y, 223 - y, 2), 0.8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_images_match_oracle(w in 1usize..300, h in 1usize..300, seed in any::<u64>()) {
        let px = FramePixels::from_fn(w, h, |x, y| {
            let v = (x as u64).wrapping_mul(2654435761) ^ (y as u64).wrapping_mul(40503) ^ seed;
            [v as u8, (v >> 8) as u8, (v >> 16) as u8]
        }).unwrap();
        assert_close(&px);
        prop_assert!(preprocess(&px).as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
