use state_vad::synth::{
    build_stcc, flow_oracle, generate_clip, generate_split, AnomalyKind, BoxPx, Clip, GenConfig, Split, Sprite, Track,
};
use state_vad::Tensor;

fn pixel(frames: &Tensor<f32>, t: usize, c: usize, y: usize, x: usize) -> f32 {
    frames.at(&[t, c, y, x])
}

#[test]
fn oracle_flow_warps_frame_to_next() {
    let cfg = GenConfig::default();
    let margin = 8;
    for index in [0, 1, 3, 6] {
        let clip = generate_clip(&cfg, 21, Split::Test, index).unwrap();
        let (h, w) = clip.frame_size();
        for t in 0..clip.len() - 1 {
            let flow = flow_oracle(&clip, t);
            // forward warp; unassigned pixels keep frame t
            let mut warped: Vec<f32> = (0..3 * h * w).map(|i| clip.frames.data()[t * 3 * h * w + i]).collect();
            for y in 0..h {
                for x in 0..w {
                    let (dx, dy) = (flow.at(&[0, y, x]), flow.at(&[1, y, x]));
                    if dx == 0.0 && dy == 0.0 {
                        continue;
                    }
                    let (tx, ty) = (x as i64 + dx as i64, y as i64 + dy as i64);
                    if tx < 0 || ty < 0 || tx >= w as i64 || ty >= h as i64 {
                        continue;
                    }
                    for c in 0..3 {
                        warped[(c * h + ty as usize) * w + tx as usize] = pixel(&clip.frames, t, c, y, x);
                    }
                }
            }
            let mut err = 0.0f64;
            let mut n = 0usize;
            for c in 0..3 {
                for y in margin..h - margin {
                    for x in margin..w - margin {
                        err += (warped[(c * h + y) * w + x] - pixel(&clip.frames, t + 1, c, y, x)).abs() as f64;
                        n += 1;
                    }
                }
            }
            let mae = err / n as f64;
            assert!(mae < 0.05, "clip {index} frame {t}: MAE {mae}");
        }
    }
}

fn at_border(tr: &Track, k: usize, cfg: &GenConfig) -> bool {
    let (x, y) = tr.positions[k];
    let (mx, my) = (cfg.frame_width - tr.size, cfg.frame_height - tr.size);
    let reach = tr.velocity.0.unsigned_abs().max(tr.velocity.1.unsigned_abs()) as usize;
    x < reach || y < reach || x + reach > mx || y + reach > my
}

#[test]
fn trajectories_follow_configured_velocity() {
    let cfg = GenConfig::default();
    let mut checked = 0;
    for index in 0..cfg.test_clips {
        let clip = generate_clip(&cfg, 5, Split::Test, index).unwrap();
        for tr in &clip.tracks {
            let (vx, vy) = tr.velocity;
            let speed = vx.abs().max(vy.abs());
            let range = if tr.anomalous && tr.sprite != Sprite::Triangle { cfg.fast_speed } else { cfg.normal_speed };
            assert!(speed >= range[0] && speed <= range[1]);
            assert!(vx == 0 || vy == 0 || vx.abs() == vy.abs());
            for k in 0..tr.positions.len() - 1 {
                let (x0, y0) = tr.positions[k];
                let (x1, y1) = tr.positions[k + 1];
                let step = (x1 as i32 - x0 as i32, y1 as i32 - y0 as i32);
                assert_eq!(step, tr.displacements[k]);
                if !at_border(tr, k, &cfg) {
                    assert_eq!((step.0.abs(), step.1.abs()), (vx.abs(), vy.abs()), "clip {index} step {k}");
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 1000);
}

#[test]
fn fast_mover_flow_magnitude() {
    let cfg = GenConfig {
        fast_speed: [6, 6],
        ..GenConfig::default()
    };
    let mut frames_checked = 0;
    for index in 0..cfg.test_clips {
        let clip = generate_clip(&cfg, 9, Split::Test, index).unwrap();
        let Some(tr) = clip.tracks.iter().find(|t| t.anomalous && t.sprite != Sprite::Triangle) else { continue };
        for k in 0..tr.positions.len() - 1 {
            let t = tr.start + k;
            if at_border(tr, k, &cfg) || t + 1 >= clip.len() {
                continue;
            }
            let flow = flow_oracle(&clip, t);
            let b = tr.bbox(t).unwrap();
            let (mut sum, mut n) = (0.0f64, 0usize);
            for y in b.y0..b.y1 {
                for x in b.x0..b.x1 {
                    if tr.covers(t, x, y) {
                        sum += (flow.at(&[0, y, x]) as f64).hypot(flow.at(&[1, y, x]) as f64);
                        n += 1;
                    }
                }
            }
            // the anomalous sprite is drawn last, so nothing occludes it
            assert!(sum / n as f64 >= 6.0, "clip {index} frame {t}: {}", sum / n as f64);
            frames_checked += 1;
        }
    }
    assert!(frames_checked > 50);
}

fn square_clip(len: usize, size: usize, start: (usize, usize), v: (i32, i32)) -> Clip {
    let positions: Vec<(usize, usize)> = (0..len)
        .map(|k| ((start.0 as i32 + v.0 * k as i32) as usize, (start.1 as i32 + v.1 * k as i32) as usize))
        .collect();
    let track = Track {
        object_id: 0,
        sprite: Sprite::Square,
        size,
        color: [0.9; 3],
        anomalous: false,
        start: 0,
        positions,
        displacements: vec![v; len],
        velocity: v,
    };
    // frame t is filled with t / 10
    let frames = Tensor::from_fn(&[len, 3, 128, 128], |i| (i / (3 * 128 * 128)) as f32 / 10.0);
    Clip {
        id: "manual".into(),
        frames,
        tracks: vec![track],
        labels: vec![0; len],
    }
}

#[test]
fn downscaled_crop_halves_flow() {
    let clip = square_clip(4, 60, (20, 30), (2, -4));
    let bbox = BoxPx {
        x0: 10,
        y0: 20,
        x1: 74,
        y1: 84,
    };
    let cube = build_stcc(&clip, 0, 0, bbox, 1, 1, (32, 32)).unwrap();
    // patch pixel (16, 16) maps to frame pixel (42, 52), well inside the square
    for j in 0..3 {
        assert!((cube.flows.at(&[j, 0, 16, 16]) - 1.0).abs() < 1e-6);
        assert!((cube.flows.at(&[j, 1, 16, 16]) + 2.0).abs() < 1e-6);
    }
    // a 16x16 crop doubles it instead
    let small = BoxPx {
        x0: 40,
        y0: 50,
        x1: 56,
        y1: 66,
    };
    let cube = build_stcc(&clip, 0, 0, small, 1, 1, (32, 32)).unwrap();
    assert!((cube.flows.at(&[1, 0, 10, 10]) - 4.0).abs() < 1e-6);
    assert!((cube.flows.at(&[1, 1, 10, 10]) + 8.0).abs() < 1e-6);
}

#[test]
fn temporal_clamping_at_clip_edges() {
    let clip = square_clip(10, 20, (30, 30), (1, 1));
    let bbox = BoxPx {
        x0: 30,
        y0: 30,
        x1: 50,
        y1: 50,
    };
    let frame_of = |t: usize| -> Vec<usize> {
        let cube = build_stcc(&clip, 0, 0, bbox, t, 3, (32, 32)).unwrap();
        (0..7).map(|j| (cube.patches.at(&[j, 0, 0, 0]) * 10.0).round() as usize).collect()
    };
    assert_eq!(frame_of(0), vec![0, 0, 0, 0, 1, 2, 3]);
    assert_eq!(frame_of(5), vec![2, 3, 4, 5, 6, 7, 8]);
    assert_eq!(frame_of(9), vec![6, 7, 8, 9, 9, 9, 9]);
}

#[test]
fn generation_is_deterministic() {
    let cfg = GenConfig {
        test_clips: 6,
        train_clips: 3,
        ..GenConfig::default()
    };
    for split in [Split::Train, Split::Test] {
        let a = generate_split(&cfg, 77, split).unwrap();
        let b = generate_split(&cfg, 77, split).unwrap();
        assert_eq!(a, b);
        let c = generate_split(&cfg, 78, split).unwrap();
        assert_ne!(a[0].frames, c[0].frames);
    }
}

#[test]
fn default_split_composition() {
    let cfg = GenConfig::default();
    let test = generate_split(&cfg, 3, Split::Test).unwrap();
    let frames: usize = test.iter().map(Clip::len).sum();
    let anomalous: usize = test.iter().map(|c| c.labels.iter().map(|&l| l as usize).sum::<usize>()).sum();
    let frac = anomalous as f64 / frames as f64;
    assert!((frac - cfg.anomaly_fraction).abs() <= 0.05, "anomalous fraction {frac}");
    let mut kinds = [0usize; 2];
    for c in &test {
        for tr in c.tracks.iter().filter(|t| t.anomalous) {
            let kind = if tr.sprite == Sprite::Triangle { AnomalyKind::Triangle } else { AnomalyKind::FastMover };
            kinds[(kind == AnomalyKind::Triangle) as usize] += 1;
        }
    }
    assert!(kinds[0] > 0 && kinds[1] > 0);
    assert_eq!(test[0].frames.shape(), &[48, 3, 128, 128]);
}
