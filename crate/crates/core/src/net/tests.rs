use super::*;
use crate::geom::ObjectSpec;
use rand::Rng;

fn random_objects(rng: &mut ChaCha8Rng, n: usize) -> Vec<ObjectSpec<f64>> {
    (0..n)
        .map(|_| ObjectSpec::new(rng.random_range(0.01..0.05), rng.random_range(0.01..0.05)).unwrap())
        .collect()
}

fn random_record(rng: &mut ChaCha8Rng, n: usize) -> ScenarioRecord<f64> {
    let objects = random_objects(rng, n);
    let targets = (0..n)
        .map(|_| [rng.random_range(0.0..0.3), rng.random_range(0.0..0.3)])
        .collect();
    ScenarioRecord::new(objects, targets)
}

fn tiny(kind: ModelKind) -> ModelConfig {
    match kind {
        ModelKind::Transformer => ModelConfig {
            d_model: 8,
            num_heads: 2,
            feedforward_dim: 12,
            ..ModelConfig::transformer()
        },
        ModelKind::Lstm => ModelConfig {
            d_model: 6,
            ..ModelConfig::lstm()
        },
        ModelKind::Mlp => ModelConfig {
            d_model: 6,
            ..ModelConfig::mlp()
        },
    }
}

#[test]
fn parameter_budgets_within_ten_percent() {
    for kind in [ModelKind::Transformer, ModelKind::Lstm, ModelKind::Mlp] {
        let m = KnollingModel::<f32>::new(ModelConfig::for_kind(kind), 0).unwrap();
        let count = m.count_params() as f64;
        let budget = kind.budget() as f64;
        assert!(
            (count - budget).abs() <= 0.1 * budget,
            "{kind}: {count} vs {budget}"
        );
    }
}

#[test]
fn transformer_count_is_exact() {
    for cfg in [
        ModelConfig::transformer(),
        ModelConfig {
            d_model: 32,
            num_encoder_layers: 2,
            num_decoder_layers: 3,
            feedforward_dim: 50,
            ..ModelConfig::transformer()
        },
    ] {
        let (d, f, k) = (cfg.d_model, cfg.feedforward_dim, cfg.num_mixtures);
        let feat = 22;
        let (norm, attn, ff) = (2 * d, 4 * (d * d + d), d * f + f + f * d + d);
        let inputs = (feat * d + d) * 2 + (2 * feat * d + d) + d;
        let enc = cfg.num_encoder_layers * (2 * norm + attn + ff) + norm;
        let dec = cfg.num_decoder_layers * (3 * norm + 2 * attn + ff) + norm;
        let head = d * 5 * k + 5 * k;
        let m = KnollingModel::<f32>::new(cfg, 0).unwrap();
        assert_eq!(m.count_params(), inputs + enc + dec + head);
    }
    assert_eq!(KnollingModel::<f32>::new(ModelConfig::transformer(), 0).unwrap().count_params(), 87_353);
}

#[test]
fn config_validation() {
    let bad = ModelConfig {
        num_heads: 3,
        ..ModelConfig::transformer()
    };
    assert!(KnollingModel::<f32>::new(bad, 0).is_err());
}

#[test]
fn object_count_bounds() {
    let m = KnollingModel::<f64>::new(tiny(ModelKind::Transformer), 1).unwrap();
    let none: Vec<ObjectSpec<f64>> = vec![];
    assert!(matches!(m.forward_encoder(&[&none]), Err(Error::ObjectCount { .. })));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let eleven = random_objects(&mut rng, 11);
    assert!(m.predict_layout(&eleven, &SamplerConfig::deterministic()).is_err());
}

#[test]
fn single_object_memory_is_finite() {
    let m = KnollingModel::<f64>::new(ModelConfig::transformer(), 1).unwrap();
    let objs = vec![ObjectSpec::new(0.02, 0.03).unwrap()];
    let mem = m.forward_encoder(&[&objs]).unwrap();
    assert_eq!(mem.value.nrows(), 1);
    assert!(mem.value.iter().all(|x| x.is_finite()));
}

#[test]
fn identical_objects_give_consistent_memory() {
    let m = KnollingModel::<f64>::new(ModelConfig::transformer(), 2).unwrap();
    let a = ObjectSpec::new(0.02, 0.03).unwrap();
    let b = ObjectSpec::new(0.04, 0.01).unwrap();
    let first = m.forward_encoder(&[&[a, a, b]]).unwrap();
    let swapped = m.forward_encoder(&[&[a, a, b]]).unwrap();
    assert_eq!(first.value, swapped.value);
    // rows differ only through the index encoding
    assert_ne!(first.value.row(0), first.value.row(1));
}

#[test]
fn padding_slots_do_not_leak_into_encoder() {
    let m = KnollingModel::<f64>::new(ModelConfig::transformer(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let short = random_objects(&mut rng, 3);
    let long_a = random_objects(&mut rng, 7);
    let mut long_b = long_a.clone();
    long_b[6] = ObjectSpec::new(0.049, 0.011).unwrap();
    // the short scenario is padded to the batch length of its neighbour
    let ma = m.forward_encoder(&[&short, &long_a]).unwrap();
    let mb = m.forward_encoder(&[&short, &long_b]).unwrap();
    let alone = m.forward_encoder(&[&short]).unwrap();
    for t in 0..3 {
        for c in 0..ma.value.ncols() {
            assert!((ma.value[[t, c]] - mb.value[[t, c]]).abs() <= 1e-12);
            assert!((ma.value[[t, c]] - alone.value[[t, c]]).abs() <= 1e-12);
        }
    }
}

#[test]
fn decode_is_causal() {
    let m = KnollingModel::<f64>::new(ModelConfig::transformer(), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let objs = random_objects(&mut rng, 6);
    let mem = m.forward_encoder(&[&objs]).unwrap();
    for step in 0..6 {
        let mut a: Vec<Option<[f64; 2]>> = (0..6).map(|_| Some([rng.random_range(0.0..0.3), 0.1])).collect();
        let base = m.decode_step(&mem, &[a.clone()], step).unwrap();
        for later in a.iter_mut().skip(step) {
            *later = Some([rng.random_range(0.0..0.3), rng.random_range(0.0..0.3)]);
        }
        let after = m.decode_step(&mem, &[a], step).unwrap();
        for (x, y) in base[0].means.iter().zip(&after[0].means) {
            assert!((x[0] - y[0]).abs() <= 1e-12 && (x[1] - y[1]).abs() <= 1e-12);
        }
        for (x, y) in base[0].weights.iter().zip(&after[0].weights) {
            assert!((x - y).abs() <= 1e-12);
        }
    }
}

#[test]
fn decode_uses_earlier_slots() {
    let m = KnollingModel::<f64>::new(ModelConfig::transformer(), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let objs = random_objects(&mut rng, 3);
    let mem = m.forward_encoder(&[&objs]).unwrap();
    let a = m.decode_step(&mem, &[vec![Some([0.01, 0.01]), None, None]], 1).unwrap();
    let b = m.decode_step(&mem, &[vec![Some([0.2, 0.15]), None, None]], 1).unwrap();
    assert_ne!(a[0].means, b[0].means);
}

#[test]
fn step_zero_mixture_is_valid_and_step_bounds_checked() {
    let m = KnollingModel::<f64>::new(ModelConfig::transformer(), 5).unwrap();
    let objs = random_objects(&mut ChaCha8Rng::seed_from_u64(1), 4);
    let mem = m.forward_encoder(&[&objs]).unwrap();
    let g = m.decode_step(&mem, &[vec![None; 4]], 0).unwrap();
    assert!(g[0].is_valid(1e-6));
    assert_eq!(g[0].components(), 5);
    assert!(matches!(
        m.decode_step(&mem, &[vec![None; 4]], 4),
        Err(Error::StepOutOfRange { .. })
    ));
}

#[test]
fn zero_temperature_prediction_is_deterministic() {
    for kind in [ModelKind::Transformer, ModelKind::Lstm, ModelKind::Mlp] {
        let m = KnollingModel::<f32>::new(ModelConfig::for_kind(kind), 9).unwrap();
        let objs = random_objects(&mut ChaCha8Rng::seed_from_u64(2), 3);
        let a = m.predict_layout(&objs, &SamplerConfig::deterministic()).unwrap();
        let b = m.predict_layout(&objs, &SamplerConfig::deterministic()).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a, b);
    }
}

#[test]
fn sampling_is_seeded() {
    let m = KnollingModel::<f32>::new(ModelConfig::transformer(), 9).unwrap();
    let objs = random_objects(&mut ChaCha8Rng::seed_from_u64(2), 4);
    let s = SamplerConfig {
        temperature: 1.0,
        seed: 17,
    };
    assert_eq!(m.predict_layout(&objs, &s).unwrap(), m.predict_layout(&objs, &s).unwrap());
}

#[test]
fn mlp_emits_twenty_coordinates() {
    let m = KnollingModel::<f32>::new(ModelConfig::mlp(), 9).unwrap();
    let objs = random_objects(&mut ChaCha8Rng::seed_from_u64(2), 3);
    let out = m.mlp_coordinates(&objs).unwrap();
    assert_eq!(out.len(), 20);
    assert!(out[6..].iter().all(|&v| v == 0.0));
    let pred = m.predict_layout(&objs, &SamplerConfig::deterministic()).unwrap();
    for i in 0..3 {
        assert_eq!([out[2 * i], out[2 * i + 1]], pred[i]);
    }
}

#[test]
fn lstm_scores_one_row_per_step() {
    let m = KnollingModel::<f64>::new(ModelConfig::lstm(), 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rec = random_record(&mut rng, 4);
    let batch = Batch::<f64>::teacher(&[&rec], &[0]).unwrap();
    let mut tape = Tape::new();
    let p = m.bind(&mut tape, false);
    let raw = m.head_rows(&mut tape, &p, &batch);
    assert_eq!(tape.value(raw).nrows(), 4);
}

#[test]
fn teacher_forcing_matches_stepwise_decoding() {
    let m = KnollingModel::<f64>::new(ModelConfig::transformer(), 10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let rec = random_record(&mut rng, 5);
    let batch = Batch::<f64>::teacher(&[&rec], &[0]).unwrap();
    let mut tape = Tape::new();
    let p = m.bind(&mut tape, false);
    let raw = m.head_rows(&mut tape, &p, &batch);
    let rows = tape.value(raw).clone();
    let mem = m.forward_encoder(&[&rec.objects]).unwrap();
    let placed: Vec<Option<[f64; 2]>> = rec.targets.iter().copied().map(Some).collect();
    for step in 0..5 {
        let g = &m.decode_step(&mem, &[placed.clone()], step).unwrap()[0];
        let from_rows = GmmParams::from_raw(&rows.row(step).to_vec(), 5, POSITION_SCALE);
        for (a, b) in g.means.iter().zip(&from_rows.means) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }
}

fn finite_difference_check(kind: ModelKind) {
    let mut m = KnollingModel::<f64>::new(tiny(kind), 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let recs: Vec<_> = [3, 2, 4].iter().map(|&n| random_record(&mut rng, n)).collect();
    let refs: Vec<&ScenarioRecord<f64>> = recs.iter().collect();
    let batch = Batch::<f64>::teacher(&refs, &[0, 1, 0]).unwrap();
    let eval = |m: &KnollingModel<f64>| {
        let mut tape = Tape::new();
        let p = m.bind(&mut tape, false);
        let l = m.loss(&mut tape, &p, &batch);
        tape.value(l)[[0, 0]]
    };
    let mut tape = Tape::new();
    let p = m.bind(&mut tape, true);
    let loss = m.loss(&mut tape, &p, &batch);
    let grads = tape.backward(loss, m.params.len());
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..m.params.len() {
        let g = grads[i].clone().unwrap_or_else(|| Array2::zeros(m.params.values[i].dim()));
        for j in 0..m.params.values[i].len() {
            let (r, c) = (j / m.params.values[i].ncols(), j % m.params.values[i].ncols());
            let orig = m.params.values[i][[r, c]];
            m.params.values[i][[r, c]] = orig + h;
            let up = eval(&m);
            m.params.values[i][[r, c]] = orig - h;
            let down = eval(&m);
            m.params.values[i][[r, c]] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = g[[r, c]];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
            assert!(rel < 1e-4, "{kind} `{}`[{r},{c}]: analytic {an} fd {fd}", m.params.names[i]);
        }
    }
    assert!(worst < 1e-4);
}

#[test]
fn transformer_gradients_match_finite_differences() {
    finite_difference_check(ModelKind::Transformer);
}

#[test]
fn lstm_gradients_match_finite_differences() {
    finite_difference_check(ModelKind::Lstm);
}

#[test]
fn mlp_gradients_match_finite_differences() {
    finite_difference_check(ModelKind::Mlp);
}

#[test]
fn model_file_roundtrip() {
    for kind in [ModelKind::Transformer, ModelKind::Lstm, ModelKind::Mlp] {
        let m = KnollingModel::<f32>::new(ModelConfig::for_kind(kind), 31).unwrap();
        let mut buf = Vec::new();
        save_model(&m, &mut buf).unwrap();
        assert_eq!(&buf[..8], MODEL_MAGIC);
        let back: KnollingModel<f32> = load_model(&mut buf.as_slice()).unwrap();
        assert_eq!(back.config, m.config);
        assert_eq!(back.params, m.params);
    }
}

#[test]
fn corrupt_model_file_rejected() {
    let m = KnollingModel::<f32>::new(ModelConfig::mlp(), 31).unwrap();
    let mut buf = Vec::new();
    save_model(&m, &mut buf).unwrap();
    buf[0] = b'X';
    assert!(load_model::<f32>(&mut buf.as_slice()).is_err());
    let mut buf2 = Vec::new();
    save_model(&m, &mut buf2).unwrap();
    buf2.truncate(buf2.len() - 3);
    assert!(load_model::<f32>(&mut buf2.as_slice()).is_err());
}
