use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simvos::numkern::{Graph, ParamSet, Tensor};
use simvos::refine::*;
use simvos::tokenizer::{Grid, MaskMap};

const P: usize = 4;

fn random(dims: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| rng.gen_range(-1.0..1.0))
}

fn random_mask(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> MaskMap {
    let density = rng.gen_range(0.05..0.95);
    let data = (0..rows * cols * P * P).map(|_| rng.gen_bool(density) as u8).collect();
    MaskMap::new(rows * P, cols * P, data).unwrap()
}

/// Checks one assignment and its prototypes against the token matrix.
fn check_convex(a: &AssignmentMatrix<f64>, eligible: &[bool], h: &Tensor<f64>, protos: &Tensor<f64>) -> Result<(), TestCaseError> {
    let (n, k) = (a.weights.rows(), a.weights.cols());
    let c = h.cols();
    for j in 0..k {
        let mut col = 0.0;
        for i in 0..n {
            let w = a.weights.data()[i * k + j];
            prop_assert!((0.0..=1.0).contains(&w));
            if eligible[i] {
                prop_assert!(!a.suppressed[i]);
            } else {
                prop_assert!(a.suppressed[i]);
                prop_assert_eq!(w, 0.0);
            }
            col += w;
        }
        prop_assert!((col - 1.0).abs() <= 1e-6);
        for d in 0..c {
            let (mut lo, mut hi, mut mix) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
            for i in (0..n).filter(|&i| eligible[i]) {
                let v = h.data()[i * c + d];
                lo = lo.min(v);
                hi = hi.max(v);
                mix += a.weights.data()[i * k + j] * v;
            }
            let p = protos.data()[j * c + d];
            prop_assert!((p - mix).abs() < 1e-12);
            prop_assert!(p >= lo - 1e-12 && p <= hi + 1e-12);
        }
    }
    Ok(())
}

#[test]
fn logits_shape_zero_and_linearity() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut ps = ParamSet::<f64>::new();
    let tr = TrWeights::register(&mut ps, 8, 4, 4, &mut rng);
    let grid = Grid { rows: 4, cols: 4 };
    let h_t = random(&[16, 8], &mut rng);
    let frac = Tensor::from_fn(&[16, 1], |i| (i % 3) as f64 / 2.0);
    let logits = |ps: &ParamSet<f64>| {
        let mut g = Graph::new();
        let h = g.constant(h_t.clone());
        let l = cluster_logits(&mut g, ps, h, &frac, grid, tr.conv, tr.fc_fg).unwrap();
        g.value(l).clone()
    };
    let base = logits(&ps);
    assert_eq!(base.dims(), &[16, 4]);
    let mut doubled = ps.clone();
    doubled.get_mut(tr.fc_fg).value = ps.value(tr.fc_fg).scale(2.0);
    let two = logits(&doubled);
    for (a, b) in base.data().iter().zip(two.data()) {
        assert!((2.0 * a - b).abs() < 1e-12);
    }
    let mut zero = ps.clone();
    zero.get_mut(tr.conv).value = Tensor::zeros(&[2, 9, 3, 3]);
    assert!(logits(&zero).data().iter().all(|&v| v == 0.0));

    let mut bad = ParamSet::<f64>::new();
    let tr6 = TrWeights::register(&mut bad, 6, 2, 2, &mut rng);
    let mut g = Graph::new();
    let h = g.constant(Tensor::zeros(&[16, 6]));
    assert!(cluster_logits(&mut g, &bad, h, &frac, grid, tr6.conv, tr6.fc_fg).is_err());
}

#[test]
fn closed_form_assignments() {
    let one = Tensor::<f64>::new(&[3, 2], vec![9.0, 1.0, 0.5, -2.0, 3.0, 4.0]).unwrap();
    let target = [false, true, false];
    let a = assign(&suppress_nontarget(&one, &target).unwrap(), &target).unwrap();
    assert_eq!(a.weights.data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);

    let even = Tensor::<f64>::new(&[2, 3], vec![0.7; 6]).unwrap();
    let a = assign(&suppress_nontarget(&even, &[true, true]).unwrap(), &[true, true]).unwrap();
    assert!(a.weights.data().iter().all(|&w| w == 0.5));

    let h = Tensor::<f64>::new(&[2, 2], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
    let protos = pool_prototypes(&a, &h).unwrap();
    assert_eq!(protos.data(), &[2.0, 4.0, 2.0, 4.0, 2.0, 4.0]);

    let all = suppress_nontarget(&one, &[true; 3]).unwrap();
    assert!(all.bit_eq(&one));
}

#[test]
fn reference_prototype_counts() {
    let n = 1800;
    assert!(((n as f64 / (256.0 + 256.0)) - 3.52).abs() < 0.01);
    let mut ps = ParamSet::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tr = TrWeights::register(&mut ps, 768, 384, 384, &mut rng);
    assert!(tr.fc_bg.is_none());
    assert_eq!(ps.value(tr.fc_fg).dims(), &[192, 384]);
    assert_eq!(ps.value(tr.conv).dims(), &[192, 769, 3, 3]);
}

#[test]
fn half_mask_with_zero_weights_pools_means() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut ps = ParamSet::<f64>::new();
    let tr = TrWeights::register(&mut ps, 8, 3, 3, &mut rng);
    for p in ps.iter_mut() {
        p.value = Tensor::zeros(p.value.dims());
    }
    let grid = Grid { rows: 2, cols: 2 };
    let mut mask = MaskMap::empty(8, 8);
    for y in 0..4 {
        for x in 0..8 {
            mask.set(y, x, 1);
        }
    }
    let h_t = random(&[4, 8], &mut rng);
    let mut g = Graph::new();
    let h = g.constant(h_t.clone());
    let r = refine_memory(&mut g, &ps, h, grid, &mask, &tr, P).unwrap();
    let (fg, bg) = (g.value(r.fg.protos), g.value(r.bg.protos));
    for k in 0..3 {
        for d in 0..8 {
            let top = (h_t.data()[d] + h_t.data()[8 + d]) / 2.0;
            let bottom = (h_t.data()[16 + d] + h_t.data()[24 + d]) / 2.0;
            assert!((fg.data()[k * 8 + d] - top).abs() < 1e-12);
            assert!((bg.data()[k * 8 + d] - bottom).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn assignments_are_column_stochastic_and_convex(seed in any::<u64>(), rows in 1usize..5, cols in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::<f64>::new();
        let tr = TrWeights::register(&mut ps, 8, 3, 2, &mut rng);
        for p in ps.iter_mut() {
            p.value = random(p.value.dims(), &mut rng).scale(3.0);
        }
        let grid = Grid { rows, cols };
        let mask = random_mask(rows, cols, &mut rng);
        let h_t = random(&[rows * cols, 8], &mut rng);
        let mut g = Graph::new();
        let h = g.constant(h_t.clone());
        let r = refine_memory(&mut g, &ps, h, grid, &mask, &tr, P).unwrap();
        let (frac, fg_ok) = downsample_mask::<f64>(&mask, P).unwrap();
        let bg_ok: Vec<bool> = frac.data().iter().map(|&f| f < 1.0).collect();
        match &r.a_fg {
            Some(a) => check_convex(a, &fg_ok, &h_t, g.value(r.fg.protos))?,
            None => prop_assert!(r.fg.inert && !fg_ok.contains(&true)),
        }
        match &r.a_bg {
            Some(a) => check_convex(a, &bg_ok, &h_t, g.value(r.bg.protos))?,
            None => prop_assert!(r.bg.inert && !bg_ok.contains(&true)),
        }
    }

    #[test]
    fn complement_swaps_foreground_and_background(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pa = ParamSet::<f64>::new();
        let a = TrWeights::register(&mut pa, 8, 3, 2, &mut rng);
        for p in pa.iter_mut() {
            p.value = random(p.value.dims(), &mut rng);
        }
        let mut pb = ParamSet::<f64>::new();
        let b = TrWeights::register(&mut pb, 8, 2, 3, &mut rng);
        pb.get_mut(b.conv).value = pa.value(a.conv).clone();
        pb.get_mut(b.fc_fg).value = pa.value(a.fc_bg.unwrap()).clone();
        pb.get_mut(b.fc_bg.unwrap()).value = pa.value(a.fc_fg).clone();
        let grid = Grid { rows: 3, cols: 3 };
        let mask = random_mask(3, 3, &mut rng);
        let h_t = random(&[9, 8], &mut rng);
        let mut g = Graph::new();
        let h = g.constant(h_t);
        let ra = refine_memory(&mut g, &pa, h, grid, &mask, &a, P).unwrap();
        let rb = refine_memory(&mut g, &pb, h, grid, &mask.complement(), &b, P).unwrap();
        prop_assert!(g.value(ra.fg.protos).bit_eq(g.value(rb.bg.protos)));
        prop_assert!(g.value(ra.bg.protos).bit_eq(g.value(rb.fg.protos)));
    }
}
