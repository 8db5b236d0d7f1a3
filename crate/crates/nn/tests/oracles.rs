use langnav_nn::io::{load_into, read_weights, write_weights, WeightFileError};
use langnav_nn::layers::{Conv3d, Linear, MultiHeadAttention};
use langnav_nn::loss::{combo_loss, LossConfig};
use langnav_nn::optim::{AdamW, AdamWConfig};
use langnav_nn::{Graph, ParamSet, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn set(ps: &mut ParamSet<f64>, name: &str, data: Vec<f64>) {
    let id = ps.find(name).unwrap();
    ps.value_mut(id).data = data;
}

#[test]
fn conv3d_matches_nested_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (cin, cout, d, h, w) = (2, 3, 4, 5, 6);
    let (kd, kh, kw) = (2, 3, 3);
    let (pd, ph, pw) = (1, 1, 0);
    let mut ps = ParamSet::new();
    let conv = Conv3d::new(&mut ps, "c", cin, cout, [kd, kh, kw], [pd, ph, pw], &mut rng);
    set(&mut ps, "c.b", vec![0.1, -0.2, 0.3]);
    let x = random(&[cin, d, h, w], &mut rng);
    let wt = ps.value(conv.w).clone();
    let mut g = Graph::new(&ps);
    let xv = g.input(x.clone());
    let y = conv.forward(&mut g, xv).unwrap();
    let out = g.value(y).clone();
    let (od, oh, ow) = (d + 2 * pd - kd + 1, h + 2 * ph - kh + 1, w + 2 * pw - kw + 1);
    assert_eq!(out.shape, vec![cout, od, oh, ow]);
    let bias = [0.1, -0.2, 0.3];
    for o in 0..cout {
        for z in 0..od {
            for yy in 0..oh {
                for xx in 0..ow {
                    let mut acc = bias[o];
                    for c in 0..cin {
                        for a in 0..kd {
                            for b in 0..kh {
                                for e in 0..kw {
                                    let (iz, iy, ix) = (
                                        z as isize + a as isize - pd as isize,
                                        yy as isize + b as isize - ph as isize,
                                        xx as isize + e as isize - pw as isize,
                                    );
                                    if iz < 0 || iy < 0 || ix < 0 || iz >= d as isize || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    let xi = ((c * d + iz as usize) * h + iy as usize) * w + ix as usize;
                                    let wi = (((o * cin + c) * kd + a) * kh + b) * kw + e;
                                    acc += x.data[xi] * wt.data[wi];
                                }
                            }
                        }
                    }
                    let got = out.data[((o * od + z) * oh + yy) * ow + xx];
                    assert!((got - acc).abs() < 1e-12, "{got} vs {acc}");
                }
            }
        }
    }
}

#[test]
fn conv3d_identity_and_temporal_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut ps = ParamSet::new();
    let id = Conv3d::new(&mut ps, "id", 1, 1, [1, 1, 1], [0, 0, 0], &mut rng);
    set(&mut ps, "id.w", vec![1.0]);
    let t = 8;
    let sum = Conv3d::new(&mut ps, "sum", 1, 1, [t + 1, 1, 1], [0, 0, 0], &mut rng);
    set(&mut ps, "sum.w", vec![1.0; t + 1]);
    let x = random(&[1, t + 1, 3, 3], &mut rng);
    let mut g = Graph::new(&ps);
    let xv = g.input(x.clone());
    let y = id.forward(&mut g, xv).unwrap();
    assert_eq!(g.value(y), &x);
    let ones = g.input(Tensor::full(&[1, t + 1, 3, 3], 1.0));
    let s = sum.forward(&mut g, ones).unwrap();
    assert_eq!(g.shape(s), &[1, 1, 3, 3]);
    assert!(g.value(s).data.iter().all(|&v| v == (t + 1) as f64));
}

#[test]
fn attention_singleton_and_symmetry() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut ps = ParamSet::new();
    let att = MultiHeadAttention::new(&mut ps, "a", 4, 2, true, &mut rng).unwrap();
    let mut g = Graph::new(&ps);
    let x = g.input(random(&[1, 4], &mut rng));
    let out = att.forward(&mut g, x, None).unwrap();
    assert_eq!(g.value(out.weights).data, vec![1.0]);
    let v = att.v.as_ref().unwrap().forward(&mut g, x).unwrap();
    let expect = att.o.as_ref().unwrap().forward(&mut g, v).unwrap();
    assert!(g.value(out.output.unwrap()).max_abs_diff(g.value(expect)) < 1e-15);

    let row = random(&[1, 4], &mut rng);
    let mut same = row.data.clone();
    same.extend_from_slice(&row.data);
    same.extend_from_slice(&row.data);
    let x3 = g.input(Tensor::new(&[3, 4], same).unwrap());
    let out = att.forward(&mut g, x3, None).unwrap();
    for &w in &g.value(out.weights).data {
        assert!((w - 1.0 / 3.0).abs() < 1e-15);
    }
    assert!(MultiHeadAttention::new(&mut ParamSet::<f64>::new(), "bad", 5, 2, true, &mut rng).is_err());
}

#[test]
fn attention_matches_scalar_computation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ps = ParamSet::new();
    let att = MultiHeadAttention::new(&mut ps, "a", 2, 1, true, &mut rng).unwrap();
    set(&mut ps, "a.q.w", vec![1.0, 0.5, -0.5, 2.0]);
    set(&mut ps, "a.q.b", vec![0.1, 0.0]);
    set(&mut ps, "a.k.w", vec![0.3, -1.0, 1.0, 0.2]);
    set(&mut ps, "a.k.b", vec![0.0, -0.1]);
    set(&mut ps, "a.v.w", vec![2.0, 0.0, 1.0, -1.0]);
    set(&mut ps, "a.v.b", vec![0.0, 0.5]);
    set(&mut ps, "a.o.w", vec![1.0, 0.0, 0.0, 1.0]);
    set(&mut ps, "a.o.b", vec![0.0, 0.0]);
    let x = [[0.5, -1.0], [1.5, 0.25]];
    let lin = |w: [f64; 4], b: [f64; 2], r: [f64; 2]| {
        [r[0] * w[0] + r[1] * w[2] + b[0], r[0] * w[1] + r[1] * w[3] + b[1]]
    };
    let q: Vec<[f64; 2]> = x.iter().map(|&r| lin([1.0, 0.5, -0.5, 2.0], [0.1, 0.0], r)).collect();
    let k: Vec<[f64; 2]> = x.iter().map(|&r| lin([0.3, -1.0, 1.0, 0.2], [0.0, -0.1], r)).collect();
    let v: Vec<[f64; 2]> = x.iter().map(|&r| lin([2.0, 0.0, 1.0, -1.0], [0.0, 0.5], r)).collect();
    let scale = 1.0 / 2f64.sqrt();
    let mut want_w = [[0.0; 2]; 2];
    let mut want_o = [[0.0; 2]; 2];
    for i in 0..2 {
        let s: Vec<f64> = (0..2).map(|j| (q[i][0] * k[j][0] + q[i][1] * k[j][1]) * scale).collect();
        let e: Vec<f64> = s.iter().map(|v| v.exp()).collect();
        let z = e[0] + e[1];
        for j in 0..2 {
            want_w[i][j] = e[j] / z;
            for c in 0..2 {
                want_o[i][c] += want_w[i][j] * v[j][c];
            }
        }
    }
    let mut g = Graph::new(&ps);
    let xv = g.input(Tensor::new(&[2, 2], vec![0.5, -1.0, 1.5, 0.25]).unwrap());
    let out = att.forward(&mut g, xv, None).unwrap();
    let w = &g.value(out.weights).data;
    let o = &g.value(out.output.unwrap()).data;
    for i in 0..2 {
        for j in 0..2 {
            assert!((w[i * 2 + j] - want_w[i][j]).abs() < 1e-14);
            assert!((o[i * 2 + j] - want_o[i][j]).abs() < 1e-14);
        }
    }
}

#[test]
fn adamw_matches_hand_unrolled_recurrence() {
    let cfg = AdamWConfig {
        lr0: 0.1,
        weight_decay: 0.01,
        max_iters: 0,
        ..Default::default()
    };
    let mut ps = ParamSet::new();
    let id = ps.add("x", Tensor::scalar(1.0f64));
    let mut opt = AdamW::new(cfg, &ps);
    let (mut theta, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
    for t in 1..=3 {
        ps.entries[0].grad[0] = 1.0;
        opt.step(&mut ps);
        m = 0.9 * m + 0.1;
        v = 0.999 * v + 0.001;
        let mh = m / (1.0 - 0.9f64.powi(t));
        let vh = v / (1.0 - 0.999f64.powi(t));
        theta = theta * (1.0 - 0.1 * 0.01) - 0.1 * mh / (vh.sqrt() + 1e-8);
        assert!((ps.value(id).data[0] - theta).abs() < 1e-15);
    }
}

#[test]
fn weight_file_round_trip_and_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ps = ParamSet::<f32>::new();
    Linear::new(&mut ps, "l", 3, 2, &mut rng);
    let mut bytes = Vec::new();
    write_weights(&ps, &mut bytes).unwrap();
    assert_eq!(&bytes[..8], b"NNW1\x02\x00\x00\x00");
    assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
    assert_eq!(&bytes[12..15], b"l.w");
    let stored = read_weights(&mut bytes.as_slice()).unwrap();
    let mut other = ParamSet::<f32>::new();
    Linear::new(&mut other, "l", 3, 2, &mut ChaCha8Rng::seed_from_u64(99));
    load_into(&mut other, &stored).unwrap();
    assert_eq!(other, ps);
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(read_weights(&mut bad.as_slice()), Err(WeightFileError::BadMagic(_))));
    assert!(read_weights(&mut &bytes[..bytes.len() - 1]).is_err());
    let mut wrong = ParamSet::<f32>::new();
    Linear::new(&mut wrong, "l", 2, 3, &mut rng);
    assert!(matches!(load_into(&mut wrong, &stored), Err(WeightFileError::Mismatch(_))));
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(vals in prop::collection::vec(-30.0f64..30.0, 12)) {
        let ps = ParamSet::<f64>::new();
        let mut g = Graph::new(&ps);
        let x = g.input(Tensor::new(&[3, 4], vals).unwrap());
        let y = g.softmax_rows(x, None).unwrap();
        for row in g.value(y).data.chunks(4) {
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn combo_loss_is_permutation_invariant(
        pred in prop::collection::vec(0.001f64..0.999, 16),
        gt in prop::collection::vec(prop::bool::ANY, 16),
        seed in 0u64..1000,
    ) {
        let gt: Vec<f64> = gt.into_iter().map(|b| b as u8 as f64).collect();
        let mut idx: Vec<usize> = (0..16).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..16).rev() {
            idx.swap(i, rng.gen_range(0..=i));
        }
        let cfg = LossConfig::default();
        let a = combo_loss(&pred, &gt, &cfg);
        let pp: Vec<f64> = idx.iter().map(|&i| pred[i]).collect();
        let gp: Vec<f64> = idx.iter().map(|&i| gt[i]).collect();
        let b = combo_loss(&pp, &gp, &cfg);
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        prop_assert!(a > -0.7 - 1e-9);
    }
}
