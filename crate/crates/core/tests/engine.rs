use potkv::bench::{eval_nih, NihSpec};
use potkv::ccd::{build_cap, distill, score_nuc, top_k_by, CapPreset, Session};
use potkv::mempot::PotConfig;
use potkv::minimodel::{Model, ModelConfig};
use potkv::policies::{h2o_keep, top_score_keep, PolicyKind, PolicySpec};
use potkv::tokenizer::{ByteTokenizer, VOCAB_SIZE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn stream(seed: u64, len: usize) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(1..VOCAB_SIZE as u32)).collect()
}

/// Independent SplitMix64 + Box–Muller, written from the published constants.
fn reference_normals(seed: u64, n: usize) -> Vec<f32> {
    let mut state = seed;
    let mut next = || {
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    (0..n)
        .map(|_| {
            let u1 = ((next() >> 11) + 1) as f64 / (1u64 << 53) as f64;
            let u2 = ((next() >> 11) + 1) as f64 / (1u64 << 53) as f64;
            ((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos() * 0.02) as f32
        })
        .collect()
}

#[test]
fn embedding_row_zero_matches_reference_generator() {
    let model = Model::init(ModelConfig::new(2, 4, 128, VOCAB_SIZE, 42)).unwrap();
    let want = reference_normals(42, 256);
    assert_eq!(model.tok_emb.row(0).to_vec(), want[..128].to_vec());
    assert_eq!(model.tok_emb.row(1).to_vec(), want[128..].to_vec());
}

#[test]
fn chunk_size_does_not_change_results() {
    let model = Model::init(ModelConfig::new(2, 2, 16, VOCAB_SIZE, 1)).unwrap();
    let toks = stream(1, 150);
    let run = |chunk: usize| {
        let mut s = Session::ccd(&model, PotConfig::new(32, 4, 10).with_chunk_size(chunk)).unwrap();
        let logits = s.consume(&toks).unwrap();
        (logits, s.pot().retained_positions(), s.pot().cycle_counter())
    };
    let (base, kept, cycles) = run(28);
    for chunk in [1, 5, 13] {
        let (l, k, c) = run(chunk);
        assert_eq!(c, cycles);
        assert_eq!(k, kept, "chunk {chunk}");
        for (a, b) in l.iter().zip(base.iter()) {
            assert!((a - b).abs() <= 1e-5 * a.abs().max(b.abs()).max(1.0));
        }
    }
}

fn trigger_pot(model: &Model, cfg: PotConfig, seed: u64) -> potkv::mempot::MemoryPot {
    let w = cfg.trigger_occupancy();
    let d = w - cfg.compressed_size;
    let mut s = Session::ccd(model, cfg).unwrap();
    s.consume(&stream(seed, w + 2 * d)).unwrap();
    s.pot().clone()
}

#[test]
fn distill_contract() {
    let model = Model::init(ModelConfig::new(2, 4, 32, VOCAB_SIZE, 2)).unwrap();
    let cfg = PotConfig::new(40, 6, 12);
    let cap = build_cap(CapPreset::G, &ByteTokenizer, None, 6).unwrap();
    for seed in 0..10 {
        let pot = trigger_pot(&model, cfg.clone(), seed);
        let nuc = pot.head(0, 0).nuc.clone();
        let picks = top_k_by(&nuc, cfg.nuc_slots(), |a: f64, b: f64| a.total_cmp(&b));
        let pick_positions: Vec<usize> = picks.iter().map(|&j| pot.head(0, 0).positions[j]).collect();

        let mut a = pot.clone();
        let mut b = pot.clone();
        let ra = distill(&model, &mut a, &cap).unwrap();
        let rb = distill(&model, &mut b, &cap).unwrap();
        assert_eq!(ra, rb);
        for h in a.heads() {
            assert_eq!(h.len(), 12);
            assert_eq!(h.slots, (0..12).collect::<Vec<_>>());
            assert!(h.token_ids.iter().zip(&h.positions).all(|(_, &p)| p < pot.stream_len()));
        }
        // Heads share novelty only until they diverge; the first layer-0 head
        // always holds its own picks.
        for p in &pick_positions {
            assert!(a.head(0, 0).positions.contains(p));
        }
    }
}

#[test]
fn novelty_picks_survive_in_every_head_after_first_fill() {
    let model = Model::init(ModelConfig::new(2, 4, 32, VOCAB_SIZE, 3)).unwrap();
    let cfg = PotConfig::new(40, 6, 12);
    let cap = build_cap(CapPreset::G, &ByteTokenizer, None, 6).unwrap();
    let mut s = Session::ccd(&model, cfg.clone()).unwrap();
    s.consume(&stream(9, 34)).unwrap();
    let mut pot = s.pot().clone();
    let nuc = pot.head(0, 0).nuc.clone();
    let picks = top_k_by(&nuc, cfg.nuc_slots(), |a: f64, b: f64| a.total_cmp(&b));
    distill(&model, &mut pot, &cap).unwrap();
    for h in pot.heads() {
        assert!(picks.iter().all(|p| h.positions.contains(p)));
    }
}

#[test]
fn long_generation_stays_bounded() {
    let model = Model::init(ModelConfig::new(1, 2, 16, VOCAB_SIZE, 4)).unwrap();
    let mut s = Session::ccd(&model, PotConfig::new(24, 4, 8)).unwrap();
    s.consume(&stream(4, 30)).unwrap();
    let out = s.generate(24).unwrap();
    assert_eq!(out.len(), 24);
    assert!(s.pot().peak_occupancy() <= 24);
    assert!(s.pot().max_rope_position().unwrap() < 24);
    assert!(s.pot().cycle_counter() > 1);
}

#[test]
fn heavy_hitter_with_dominant_column_is_kept() {
    let mut acc: Vec<f32> = Vec::new();
    let mut alive: Vec<usize> = Vec::new();
    for t in 0..40usize {
        acc.push(0.0);
        alive.push(t);
        let n = acc.len();
        for (j, a) in acc.iter_mut().enumerate() {
            *a += if alive[j] == 2 { 0.9 } else { 0.1 / (n as f32) };
        }
        let keep = h2o_keep(&acc, 8, 2);
        assert_eq!(keep.len(), n.min(8));
        acc = keep.iter().map(|&j| acc[j]).collect();
        alive = keep.iter().map(|&j| alive[j]).collect();
        if t >= 2 {
            assert!(alive.contains(&2), "step {t}");
        }
    }
    assert_eq!(h2o_keep(&[0.25; 10], 6, 4), vec![0, 1, 2, 3, 8, 9]);
}

#[test]
fn tova_rule_cases() {
    let mut row = vec![0.01f32; 12];
    row[4] = 0.8;
    assert!(top_score_keep(&row, 3).contains(&4));
    assert_eq!(top_score_keep(&[0.1f32; 6], 4), vec![0, 1, 2, 3]);
    assert_eq!(top_score_keep(&[0.5f32, 0.2], 4), vec![0, 1]);
}

#[test]
fn sirllm_is_head_uniform_and_scores_like_novelty() {
    let model = Model::init(ModelConfig::new(2, 4, 32, VOCAB_SIZE, 5)).unwrap();
    let cfg = PotConfig::new(40, 6, 12);
    let toks = stream(5, 30);
    let spec = PolicySpec::new(PolicyKind::Sirllm).with_budget(36);
    let mut s = Session::new(&model, cfg.clone(), spec.build(&cfg).unwrap()).unwrap();
    s.consume(&toks).unwrap();
    let logits = model.forward_sequence(&toks, toks.len()).unwrap();
    let expected = score_nuc(logits.slice(ndarray::s![..-1, ..]), &toks[1..]).unwrap();
    let first = s.pot().head(0, 0);
    for (a, b) in first.nuc[1..].iter().zip(&expected) {
        assert!((a - b).abs() < 1e-6);
    }

    let mut s = Session::new(&model, cfg.clone(), spec.build(&cfg).unwrap()).unwrap();
    s.consume(&stream(6, 120)).unwrap();
    let sets = s.pot().retained_positions();
    assert!(sets.iter().flatten().all(|h| h == &sets[0][0]));
    assert_eq!(sets[0][0].len(), 36);
}

#[test]
fn needle_retention_reported() {
    let model = Model::init(ModelConfig::new(1, 2, 16, VOCAB_SIZE, 6)).unwrap();
    let spec = NihSpec::new(300, 0.5, "90210", 2);
    let roomy = PotConfig::new(600, 140, 16);
    let out = eval_nih(&model, &PolicySpec::new(PolicyKind::Ccd), &spec, &roomy).unwrap();
    assert!(out.needle_retained);
    assert_eq!(out.metrics.cycles, 0);
    let tight = PotConfig::new(200, 140, 16);
    let swa = PolicySpec::new(PolicyKind::Swa).with_budget(32);
    let out = eval_nih(&model, &swa, &spec, &tight).unwrap();
    assert!(!out.needle_retained);
    assert!(out.metrics.peak_occ <= 200);
}
