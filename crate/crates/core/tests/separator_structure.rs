use proptest::prelude::*;
use tse_core::separator::{Preset, SeparatorConfig, SeparatorModel};
use tse_core::tensor::{ChunkLayout, Tape, Tensor};

fn wave(n: usize, f: f64) -> Vec<f64> {
    (0..n).map(|i| (f * i as f64).sin() * 0.5 + (0.31 * i as f64).cos() * 0.2).collect()
}

fn mask_bits(m: &SeparatorModel, mix: &[f64], cue: Option<&[f64]>) -> (Vec<u64>, usize) {
    let mut tape = Tape::new();
    let p = m.params().bind(&mut tape, false);
    let f = m.forward(&mut tape, &p, mix, cue).unwrap();
    let bits = tape.value(f.estimate).unwrap().data().iter().map(|v| v.to_bits()).collect();
    (bits, f.fusion_sites)
}

#[test]
fn zeroed_cue_projections_reduce_to_cue_free_network() {
    let mut m = SeparatorModel::new(SeparatorConfig::preset(Preset::Desk, 6), 11).unwrap();
    let mix = wave(700, 0.05);
    let cue = [0.4, -1.2, 0.3, 0.9, -0.1, 2.0];
    let (with_cue, _) = mask_bits(&m, &mix, Some(&cue));
    let (free, sites) = mask_bits(&m, &mix, None);
    assert_eq!(sites, 0);
    assert_ne!(with_cue, free);
    m.zero_cue_projections();
    let (ablated, sites) = mask_bits(&m, &mix, Some(&cue));
    assert_eq!(sites, 2);
    assert_eq!(ablated, mask_bits(&m, &mix, None).0);
}

#[test]
fn fusion_sites_are_two_per_block() {
    for n in 1..=3 {
        let cfg = SeparatorConfig { n_blocks: n, ..SeparatorConfig::preset(Preset::Desk, 3) };
        let m = SeparatorModel::new(cfg, 1).unwrap();
        assert_eq!(mask_bits(&m, &wave(120, 0.1), Some(&[1.0, 0.0, -1.0])).1, 2 * n);
    }
}

#[test]
fn paper_preset_has_eight_fusion_sites() {
    let m = SeparatorModel::new(SeparatorConfig::preset(Preset::Paper, 512), 0).unwrap();
    let cue: Vec<f64> = (0..512).map(|i| (i as f64 * 0.01).sin()).collect();
    let mut tape = Tape::new();
    let p = m.params().bind(&mut tape, false);
    let h = m.encode(&mut tape, &p, &wave(88, 0.2)).unwrap();
    let e = m.project_cue(&mut tape, &p, &cue).unwrap();
    let (mask, sites) = m.masking_forward(&mut tape, &p, h, Some(e)).unwrap();
    assert_eq!(sites, 8);
    assert_eq!(tape.shape(mask).unwrap(), &[10, 256]);
}

#[test]
fn every_parameter_receives_gradient() {
    let m = SeparatorModel::new(SeparatorConfig::preset(Preset::Desk, 5), 2).unwrap();
    let mut tape = Tape::new();
    let p = m.params().bind(&mut tape, true);
    let f = m.forward(&mut tape, &p, &wave(400, 0.07), Some(&[0.5, -0.3, 0.8, 0.1, -0.6])).unwrap();
    let target = tape.constant(Tensor::vector(wave(400, 0.013)));
    let prod = tape.mul(f.estimate, target).unwrap();
    let loss = tape.sum(prod).unwrap();
    tape.backward(loss).unwrap();
    for (id, (name, _)) in m.params().ids().zip(m.params().iter()) {
        let g = tape.grad(p[id]).unwrap().expect(name);
        assert!(g.data().iter().any(|&v| v != 0.0), "dead parameter {name}");
    }
}

#[test]
fn output_is_sensitive_to_the_cue() {
    let m = SeparatorModel::new(SeparatorConfig::preset(Preset::Desk, 4), 8).unwrap();
    let mix = wave(300, 0.09);
    let cue = vec![0.2, 0.7, -0.4, 1.1];
    let loss_at = |c: &[f64]| {
        let mut tape = Tape::new();
        let p = m.params().bind(&mut tape, false);
        let f = m.forward(&mut tape, &p, &mix, Some(c)).unwrap();
        tape.value(f.estimate).unwrap().data().iter().map(|v| v * v).sum::<f64>()
    };
    let h = 1e-5;
    let mut total = 0.0;
    for i in 0..4 {
        let (mut a, mut b) = (cue.clone(), cue.clone());
        a[i] += h;
        b[i] -= h;
        total += ((loss_at(&a) - loss_at(&b)) / (2.0 * h)).abs();
    }
    assert!(total > 1e-8, "cue sensitivity {total}");
}

#[test]
fn chunk_counts() {
    let l = ChunkLayout::new(500, 250, 0.5).unwrap();
    assert_eq!((l.hop, l.chunks, l.padding), (125, 3, 0));
    let l = ChunkLayout::new(250, 250, 0.5).unwrap();
    assert_eq!(l.chunks, 1);
}

proptest! {
    #[test]
    fn chunk_overlap_add_round_trip(t in 1usize..120, k in 2usize..20, d in 1usize..4, seed in 0u64..1000) {
        let data: Vec<f64> = (0..t * d).map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 37.0 - 13.0).collect();
        let layout = ChunkLayout::new(t, k, 0.5).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![t, d], data.clone()).unwrap());
        let c = tape.chunk(x, layout).unwrap();
        prop_assert_eq!(tape.shape(c).unwrap(), &[layout.chunks, k, d]);
        let y = tape.overlap_add(c, layout).unwrap();
        let back = tape.value(y).unwrap().data();
        for (a, b) in back.iter().zip(&data) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_chunks_overlap_add_to_constant(t in 1usize..80, k in 2usize..12, v in -3.0f64..3.0) {
        let layout = ChunkLayout::new(t, k, 0.5).unwrap();
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::full(&[layout.chunks, k, 2], v));
        let y = tape.overlap_add(c, layout).unwrap();
        prop_assert!(tape.value(y).unwrap().data().iter().all(|&x| (x - v).abs() < 1e-12));
    }
}
