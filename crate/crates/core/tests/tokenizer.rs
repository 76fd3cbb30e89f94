use proptest::prelude::*;
use simvos::numkern::{Graph, Tensor};
use simvos::tokenizer::*;

fn frame_from(h: usize, w: usize, seed: u64) -> Frame {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
    let px = (0..3 * h * w)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 40) % 256) as f32 / 255.0
        })
        .collect();
    Frame::new(h, w, px).unwrap()
}

#[test]
fn token_counts_for_reference_sizes() {
    let f = Frame::zeros(480, 960);
    assert_eq!(patchify::<f32>(&f, 16).unwrap().dims(), &[1800, 768]);
    let f = Frame::zeros(384, 384);
    assert_eq!(patchify::<f32>(&f, 16).unwrap().rows(), 576);
    assert!(patchify::<f32>(&Frame::zeros(20, 16), 16).is_err());
}

#[test]
fn zero_rows_give_positional_table() {
    let grid = Grid::of(16, 16, 4).unwrap();
    let mut g = Graph::<f64>::new();
    let rows = g.constant(Tensor::zeros(&[16, 48]));
    let e = g.constant(Tensor::from_fn(&[48, 8], |i| i as f64 * 0.01));
    let pos_t = sinusoidal_table::<f64>(grid, 8).unwrap();
    let pos = g.constant(pos_t.clone());
    let seq = embed_patches(&mut g, rows, e, pos, FrameTag::Search, grid).unwrap();
    assert!(g.value(seq.tokens).bit_eq(&pos_t));
}

#[test]
fn one_hot_row_selects_projection_row() {
    let grid = Grid::of(4, 4, 4).unwrap();
    let mut g = Graph::<f64>::new();
    let mut r = Tensor::zeros(&[1, 48]);
    r.data_mut()[13] = 1.0;
    let et = Tensor::from_fn(&[48, 8], |i| (i as f64).sin());
    let pos_t = sinusoidal_table::<f64>(grid, 8).unwrap();
    let (rows, e, pos) = (g.constant(r), g.constant(et.clone()), g.constant(pos_t.clone()));
    let seq = embed_patches(&mut g, rows, e, pos, FrameTag::Mem1, grid).unwrap();
    for j in 0..8 {
        assert_eq!(g.value(seq.tokens).data()[j], et.data()[13 * 8 + j] + pos_t.data()[j]);
    }
}

#[test]
fn mask_encoding_is_additive_and_linear() {
    let grid = Grid::of(8, 8, 4).unwrap();
    let mut mask = MaskMap::empty(8, 8);
    let em_t = Tensor::from_fn(&[16, 6], |i| (i as f64 * 0.37).cos());
    let h_t = Tensor::from_fn(&[4, 6], |i| i as f64 * 0.1);
    let run = |mask: &MaskMap, scale: f64| {
        let mut g = Graph::<f64>::new();
        let h = g.constant(h_t.clone());
        let m = g.constant(flatten_mask::<f64>(mask, 4).unwrap());
        let em = g.constant(em_t.scale(scale));
        let seq = encode_mask_into_memory(&mut g, TokenSeq::single(h, FrameTag::Mem1, grid), m, em).unwrap();
        g.value(seq.tokens).clone()
    };
    assert!(run(&mask, 1.0).bit_eq(&h_t));
    mask.data.iter_mut().for_each(|v| *v = 1);
    let col_sums: Vec<f64> = (0..6).map(|j| (0..16).map(|i| em_t.data()[i * 6 + j]).sum()).collect();
    let full = run(&mask, 1.0);
    for i in 0..4 {
        for j in 0..6 {
            approx::assert_abs_diff_eq!(full.data()[i * 6 + j], h_t.data()[i * 6 + j] + col_sums[j], epsilon = 1e-12);
        }
    }
    let double = run(&mask, 2.0);
    for k in 0..24 {
        approx::assert_abs_diff_eq!(double.data()[k] - h_t.data()[k], 2.0 * (full.data()[k] - h_t.data()[k]), epsilon = 1e-12);
    }
}

#[test]
fn joint_sequence_layout() {
    let grid = Grid::of(8, 8, 4).unwrap();
    let mut g = Graph::<f64>::new();
    let parts: Vec<TokenSeq> = [FrameTag::Mem1, FrameTag::Mem2, FrameTag::Search]
        .iter()
        .enumerate()
        .map(|(k, &t)| TokenSeq::single(g.constant(Tensor::from_fn(&[4, 3], |i| (k * 100 + i) as f64)), t, grid))
        .collect();
    let joint = build_joint_sequence(&mut g, &parts[0], &parts[1], &parts[2]).unwrap();
    let ranges: Vec<_> = joint.segments.iter().map(|s| s.range.clone()).collect();
    assert_eq!(ranges, vec![0..4, 4..8, 8..12]);
    assert_eq!(joint.tags()[..], [[FrameTag::Mem1; 4], [FrameTag::Mem2; 4], [FrameTag::Search; 4]].concat()[..]);
    let search = g.value(joint.tokens).slice_rows(8, 12).unwrap();
    assert!(search.bit_eq(g.value(parts[2].tokens)));

    let bad = TokenSeq::single(g.constant(Tensor::zeros(&[4, 5])), FrameTag::Search, grid);
    assert!(build_joint_sequence(&mut g, &parts[0], &parts[1], &bad).is_err());
}

#[test]
fn positional_table_is_deterministic() {
    let grid = Grid::of(32, 48, 8).unwrap();
    let a = sinusoidal_table::<f32>(grid, 16).unwrap();
    let b = sinusoidal_table::<f32>(grid, 16).unwrap();
    assert!(a.bit_eq(&b));
    assert_eq!(a.dims(), &[24, 16]);
}

proptest! {
    #[test]
    fn patchify_round_trip(rows in 1usize..5, cols in 1usize..5, p in 1usize..6, seed in any::<u64>()) {
        let f = frame_from(rows * p, cols * p, seed);
        let t = patchify::<f32>(&f, p).unwrap();
        let back = unpatchify(&t, Grid::of(f.height, f.width, p).unwrap(), p).unwrap();
        prop_assert_eq!(back.pixels, f.pixels);
    }

    #[test]
    fn flatten_mask_keeps_count(rows in 1usize..5, cols in 1usize..5, p in 1usize..6, bits in proptest::collection::vec(any::<bool>(), 400)) {
        let (h, w) = (rows * p, cols * p);
        let m = MaskMap::new(h, w, bits[..h * w].iter().map(|&b| b as u8).collect()).unwrap();
        let t = flatten_mask::<f64>(&m, p).unwrap();
        prop_assert_eq!(t.data().iter().sum::<f64>() as usize, m.foreground_count());
        prop_assert!(t.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }
}
