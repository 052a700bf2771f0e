use proptest::prelude::*;

use mam2_core::data::{TensorData, TensorValues, VideoClip};
use mam2_core::losses::{alignment_loss, hybrid_loss};
use mam2_core::masking::{cube_mask, masked_count, tube_mask};
use mam2_core::numerics::Tensor;
use mam2_core::patch_embed::{add_pos, patchify, unpatchify, PatchGeometry};
use mam2_core::training::{lr_at, Schedule};

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1..=max_rows, 1..=max_cols)
        .prop_flat_map(|(r, c)| (Just(r), Just(c), prop::collection::vec(-20.0f64..20.0, r * c)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions((r, c, v) in matrix(6, 9)) {
        let s = Tensor::new(&[r, c], v).unwrap().softmax_lastdim().unwrap();
        for row in s.data().chunks(c) {
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_ignores_row_shifts((r, c, v) in matrix(4, 6), shift in -50.0f64..50.0) {
        let a = Tensor::new(&[r, c], v.clone()).unwrap().softmax_lastdim().unwrap();
        let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
        let b = Tensor::new(&[r, c], shifted).unwrap().softmax_lastdim().unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn tensor_file_round_trips(shape in prop::collection::vec(1usize..5, 0..4), seed in any::<u64>(), kind in 0u8..3) {
        let count: usize = shape.iter().product();
        let ints: Vec<i64> = (0..count as u64).map(|i| (seed.wrapping_mul(i + 1) >> 3) as i64).collect();
        let values = match kind {
            0 => TensorValues::F32(ints.iter().map(|&x| x as f32 * 0.37).collect()),
            1 => TensorValues::F64(ints.iter().map(|&x| x as f64 * -1.3e-7).collect()),
            _ => TensorValues::I64(ints),
        };
        let data = TensorData { shape, values };
        let bytes = data.encode().unwrap();
        prop_assert_eq!(TensorData::decode(&bytes).unwrap(), data);
    }

    #[test]
    fn truncated_tensor_files_are_rejected(len in 1usize..6, cut in 1usize..20) {
        let data = TensorData { shape: vec![len], values: TensorValues::F64(vec![1.5; len]) };
        let bytes = data.encode().unwrap();
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(TensorData::decode(&bytes[..keep]).is_err());
    }

    #[test]
    fn tube_masks_share_one_set(n in 1usize..300, t in 1usize..10, rho in 0.0f64..=1.0, seed in any::<u64>()) {
        let m = tube_mask(n, t, rho, seed).unwrap();
        let set = m.masked_spatial().unwrap().to_vec();
        prop_assert_eq!(set.len(), masked_count(n, rho));
        prop_assert!(set.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(set.iter().all(|&j| j < n));
        for f in 0..t {
            prop_assert_eq!(m.frame_set(f), &set[..]);
        }
        prop_assert_eq!(m.num_masked(), t * set.len());
        prop_assert_eq!(m.masked_positions_except_last().len(), (t - 1) * set.len());
    }

    #[test]
    fn cube_masks_cover_the_target(side in 4usize..16, t in 1usize..6, rho in 0.05f64..0.95, block in 1usize..4, seed in any::<u64>()) {
        let n = side * side;
        let m = cube_mask(side, side, t, rho, block, seed).unwrap();
        prop_assert!(m.is_tube_structured());
        let count = m.masked_spatial().unwrap().len();
        prop_assert!(count as f64 >= rho * n as f64 - 1e-9);
        prop_assert!(count < (rho * n as f64).ceil() as usize + block * block);
    }

    #[test]
    fn positions_add_separably(t in 1usize..4, n in 1usize..5, d in 1usize..4, seed in any::<u32>()) {
        let val = |i: usize, salt: u32| ((seed as usize * 31 + i * 17 + salt as usize) % 97) as f64 / 13.0 - 3.0;
        let grid: Vec<f64> = (0..t * n * d).map(|i| val(i, 1)).collect();
        let et: Vec<f64> = (0..t * d).map(|i| val(i, 2)).collect();
        let es: Vec<f64> = (0..n * d).map(|i| val(i, 3)).collect();
        let out = add_pos(
            &Tensor::new(&[t, n, d], grid.clone()).unwrap(),
            &Tensor::new(&[t, d], et.clone()).unwrap(),
            &Tensor::new(&[n, d], es.clone()).unwrap(),
        )
        .unwrap();
        for a in 0..t {
            for j in 0..n {
                for k in 0..d {
                    let i = (a * n + j) * d + k;
                    prop_assert_eq!(out.data()[i], grid[i] + (et[a * d + k] + es[j * d + k]));
                }
            }
        }
    }

    #[test]
    fn patchify_preserves_pixels(t in 1usize..3, c in 1usize..4, gh in 1usize..4, gw in 1usize..4, p in 1usize..5, seed in any::<u16>()) {
        let (h, w) = (gh * p, gw * p);
        let frames: Vec<f32> = (0..t * c * h * w).map(|i| ((i * 7 + seed as usize) % 23) as f32 / 22.0).collect();
        let clip = VideoClip::new(frames.clone(), t, c, h, w).unwrap();
        let patches = patchify::<f64>(&clip, p).unwrap();
        prop_assert_eq!(patches.shape(), &[t, gh * gw, c * p * p][..]);
        // Patchify is a permutation: same multiset of values, hence same energy.
        let mut moved = patches.to_vec();
        let mut original: Vec<f64> = frames.iter().map(|&x| x as f64).collect();
        moved.sort_by(f64::total_cmp);
        original.sort_by(f64::total_cmp);
        prop_assert_eq!(moved, original);
        let g = PatchGeometry::new(t, c, h, w, p).unwrap();
        let back = unpatchify(&patches, &g).unwrap();
        prop_assert!(back.iter().zip(&frames).all(|(&a, &b)| a == b as f64));
    }

    #[test]
    fn alignment_loss_is_mean_squared_distance((m, d, v) in matrix(5, 6), offset in -3.0f64..3.0) {
        let r = Tensor::new(&[m, d], v.clone()).unwrap();
        let shifted: Vec<f64> = v.iter().map(|x| x + offset).collect();
        let r_hat = Tensor::new(&[m, d], shifted).unwrap();
        let loss = alignment_loss(&r, &r_hat).unwrap().item().unwrap();
        prop_assert!((loss - d as f64 * offset * offset).abs() < 1e-9 * (1.0 + loss));
        prop_assert_eq!(alignment_loss(&r, &r).unwrap().item().unwrap(), 0.0);
    }

    #[test]
    fn hybrid_total_matches_the_weighted_sum(a in 0.0f64..20.0, m in 0.0f64..20.0, l in 0.0f64..20.0, alpha in 0.0f64..4.0) {
        let b = hybrid_loss(a, m, l, alpha).unwrap();
        prop_assert_eq!(b.total, a + m + alpha * l);
    }

    #[test]
    fn schedule_stays_within_peak(step in 0usize..2000, warmup in 1usize..100, extra in 1usize..1000, peak in 1e-6f64..1.0) {
        let s = Schedule { peak, warmup_steps: warmup, total_steps: warmup + extra };
        let lr = lr_at(step, &s);
        prop_assert!((0.0..=peak * (1.0 + 1e-12)).contains(&lr));
        if step > 0 && step <= warmup + extra {
            prop_assert!(lr_at(step - 1, &s) <= lr || step > warmup);
        }
    }
}
