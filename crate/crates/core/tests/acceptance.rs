//! Acceptance suite. Prints one `[PASS]`/`[FAIL]` line per criterion.
//!
//! Run a subset by name: `cargo test -p treadmatch --test acceptance -- metric`.
//! Failing criteria make the process exit non-zero when
//! `TREADMATCH_ACCEPTANCE_STRICT=1`; otherwise the summary line reports them.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use treadmatch::augment::{augment, erase, make_gaussian, make_perlin, AugmentConfig, DegradationRecipe};
use treadmatch::dataset::{generate_synthetic, GroundTruthMap, SyntheticSpec};
use treadmatch::encoder::{mask_features, CellMask, EncoderError, MaskedFeatures};
use treadmatch::exec::Execution;
use treadmatch::index::{build_index, build_index_from_images};
use treadmatch::metrics::{ap_at_k, evaluate, hit_at_k, MetricConfig};
use treadmatch::queryset::{build_query_set, QuerySetConfig};
use treadmatch::retrieval::{aggregate, batch_query, query, score_entries, RankedEntry, RetrievalConfig};
use treadmatch::training::{supcon_loss, supcon_objective, TrainConfig, Trainer, TrainingSet};
use treadmatch::{
    Channel, Encoder, EncoderConfig, FeatureIndex, Frame, Image, QuerySpec, RankedResult, SpatialFeatureMap,
    VisibilityMask,
};

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(name: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { name, pass, detail }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAIL"
    }
}

// ---------------------------------------------------------------------------
// Independent oracles

/// AP@K straight from the definition: mean over the first K ranks of
/// precision-at-rank times relevance, divided by min(total, K).
fn naive_ap(ranking: &[String], positives: &BTreeSet<String>, k: usize, total: usize) -> f64 {
    let n = total.min(k);
    let mut sum = 0.0;
    for rank in 1..=k.min(ranking.len()) {
        if positives.contains(&ranking[rank - 1]) {
            let mut hits = 0;
            for item in &ranking[..rank] {
                if positives.contains(item) {
                    hits += 1;
                }
            }
            sum += hits as f64 / rank as f64;
        }
    }
    sum / n as f64
}

fn naive_hit(ranking: &[String], positives: &BTreeSet<String>, k: usize) -> bool {
    ranking.iter().take(k).any(|m| positives.contains(m))
}

/// Summed supervised contrastive loss as a literal double loop, no stabilization.
fn naive_supcon(z: &[Vec<f64>], labels: &[usize], tau: f64) -> f64 {
    let n = z.len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut total = 0.0;
    for i in 0..n {
        let mut denom = 0.0;
        for a in 0..n {
            if a != i {
                denom += (dot(&z[i], &z[a]) / tau).exp();
            }
        }
        let pos: Vec<usize> = (0..n).filter(|&p| p != i && labels[p] == labels[i]).collect();
        let mut inner = 0.0;
        for &p in &pos {
            inner += ((dot(&z[i], &z[p]) / tau).exp() / denom).ln();
        }
        total += -inner / pos.len() as f64;
    }
    total
}

/// Masked, normalized feature vector computed directly from the definition.
fn naive_mask(z: &SpatialFeatureMap, cells: &[bool]) -> Option<Vec<f64>> {
    let plane = z.hf * z.wf;
    let v: Vec<f64> = (0..z.values.len()).map(|i| if cells[i % plane] { z.values[i] as f64 } else { 0.0 }).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (norm > 0.0).then(|| v.into_iter().map(|x| x / norm).collect())
}

/// Brute-force ranking: score every entry, keep each model's best, sort.
fn naive_rank(index: &FeatureIndex, q: &[f64], cells: &[bool], k: usize) -> Vec<(String, String, f64)> {
    let mut best: BTreeMap<String, (f64, String)> = BTreeMap::new();
    for i in 0..index.len() {
        let e = index.entry(i);
        let s = match naive_mask(&index.feature_map(i), cells) {
            Some(v) => v.iter().zip(q).map(|(a, b)| a * b).sum(),
            None => 0.0,
        };
        let slot = best.entry(e.model_id.clone()).or_insert((f64::NEG_INFINITY, String::new()));
        if s > slot.0 || (s == slot.0 && e.instance_id < slot.1) {
            *slot = (s, e.instance_id.clone());
        }
    }
    let mut out: Vec<_> = best.into_iter().map(|(m, (s, i))| (m, i, s)).collect();
    out.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.0.cmp(&b.0)));
    out.truncate(k);
    out
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn random_map(rng: &mut ChaCha8Rng, c: usize, hf: usize, wf: usize) -> SpatialFeatureMap {
    SpatialFeatureMap { c, hf, wf, values: (0..c * hf * wf).map(|_| rng.gen_range(-1.0f32..1.0)).collect() }
}

// ---------------------------------------------------------------------------
// Criteria

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let universe: Vec<String> = (0..400).map(|i| format!("M{i:03}")).collect();
    let mut hit_mismatch = 0usize;
    let mut worst = 0.0f64;
    let mut map_worst = 0.0f64;
    let mut cases = 0;
    for k in [1usize, 5, 100] {
        let mut results = Vec::new();
        let mut gt = GroundTruthMap::default();
        let (mut naive_hits, mut naive_aps) = (0.0, 0.0);
        for q in 0..1000 {
            let mut pool = universe.clone();
            pool.shuffle(&mut rng);
            let len = rng.gen_range(0..=150);
            let ranking: Vec<String> = pool[..len].to_vec();
            let n_pos = rng.gen_range(1..=12);
            let positives: BTreeSet<String> = universe.choose_multiple(&mut rng, n_pos).cloned().collect();
            let ap = ap_at_k(&ranking, &positives, k, positives.len()).unwrap();
            let naive = naive_ap(&ranking, &positives, k, positives.len());
            worst = worst.max((ap - naive).abs());
            if hit_at_k(&ranking, &positives, k) != naive_hit(&ranking, &positives, k) {
                hit_mismatch += 1;
            }
            naive_hits += naive_hit(&ranking, &positives, k) as u8 as f64;
            naive_aps += naive;
            let id = format!("q{q}");
            gt.insert(id.clone(), positives.iter().cloned());
            let results_k: Vec<RankedEntry> = ranking
                .iter()
                .enumerate()
                .map(|(i, m)| RankedEntry { model_id: m.clone(), best_instance_id: m.clone(), score: -(i as f64) })
                .collect();
            results.push(RankedResult { query_id: id, k, results: results_k });
            cases += 1;
        }
        let report = evaluate(&results, &gt, &MetricConfig { k }, None, Execution::Parallel).unwrap();
        map_worst = map_worst.max((report.map_at_k - naive_aps / 1000.0).abs());
        if (report.hit_at_k - naive_hits / 1000.0).abs() > 0.0 {
            hit_mismatch += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = hit_mismatch == 0 && worst <= 1e-9 && map_worst <= 1e-9 && secs < 10.0;
    outcome(
        "metric oracle equivalence",
        pass,
        format!(
            "{cases} rankings over K in {{1,5,100}}: hit mismatches {hit_mismatch} (exact), max |dAP| {worst:.1e}, max |dmAP| {map_worst:.1e} (tol 1e-9), {secs:.2} s (limit 10 s)"
        ),
    )
}

fn hand_ap_cases() -> Outcome {
    let r = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let p = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
    let cases = [
        (ap_at_k(&r(&["A", "B", "C"]), &p(&["A"]), 5, 1).unwrap(), 1.0),
        (ap_at_k(&r(&["A", "X", "B", "Y"]), &p(&["A", "B"]), 5, 2).unwrap(), 0.5 * (1.0 + 2.0 / 3.0)),
        (ap_at_k(&r(&["X", "A", "Y"]), &p(&["A", "B", "C"]), 5, 3).unwrap(), 0.5 / 3.0),
    ];
    let expected = [1.0, 0.8333, 0.1667];
    let worst = cases.iter().zip(expected).map(|((got, _), e)| (got - e).abs()).fold(0.0, f64::max);
    outcome(
        "hand-derived AP cases",
        worst <= 1e-4,
        format!(
            "got {:.4}, {:.4}, {:.4}; expected 1.0, 0.8333, 0.1667; max error {worst:.1e} (tol 1e-4)",
            cases[0].0, cases[1].0, cases[2].0
        ),
    )
}

fn loss_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for b in 0..100 {
        let tau = [0.05, 0.07, 0.1][b % 3];
        let n_models = rng.gen_range(2..=4);
        let per = rng.gen_range(2..=16 / n_models).min(4);
        let dim = rng.gen_range(4..=32);
        let labels: Vec<usize> = (0..n_models).flat_map(|m| std::iter::repeat(m).take(per)).collect();
        let z: Vec<Vec<f64>> = labels.iter().map(|_| unit(&mut rng, dim)).collect();
        let got = supcon_loss(&z, &labels, tau).unwrap();
        worst = worst.max((got - naive_supcon(&z, &labels, tau)).abs());
    }
    let mut closed = 0.0f64;
    for two_n in [4usize, 8, 16] {
        let f = vec![vec![0.6, 0.8]; two_n];
        let labels: Vec<usize> = (0..two_n).map(|i| i / 2).collect();
        let got = supcon_loss(&f, &labels, 0.07).unwrap();
        closed = closed.max((got - two_n as f64 * ((two_n - 1) as f64).ln()).abs());
    }
    outcome(
        "loss oracle",
        worst <= 1e-6 && closed <= 1e-6,
        format!("100 batches (2N <= 16, tau in {{0.05,0.07,0.1}}): max |dL| {worst:.1e}; identical-features closed form max error {closed:.1e} (tol 1e-6)"),
    )
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let n_models = rng.gen_range(2..=4);
        let dim = rng.gen_range(3..=12);
        let tau = 0.07;
        let labels: Vec<usize> = (0..n_models).flat_map(|m| [m, m]).collect();
        let z: Vec<Vec<f64>> = labels.iter().map(|_| unit(&mut rng, dim)).collect();
        let (_, grad) = supcon_objective(&z, &labels, tau).unwrap();
        let h = 1e-6;
        let (mut diff, mut scale) = (0.0f64, 0.0f64);
        for i in 0..z.len() {
            for d in 0..dim {
                let mut up = z.clone();
                up[i][d] += h;
                let mut down = z.clone();
                down[i][d] -= h;
                let fd = (supcon_objective(&up, &labels, tau).unwrap().0 - supcon_objective(&down, &labels, tau).unwrap().0)
                    / (2.0 * h);
                diff = diff.max((fd - grad[i][d]).abs());
                scale = scale.max(fd.abs());
            }
        }
        worst = worst.max(diff / scale);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        "gradient check",
        worst < 1e-3 && secs < 30.0,
        format!("10 batches, central differences: max relative error {worst:.1e} (limit 1e-3), {secs:.2} s (limit 30 s)"),
    )
}

fn masking_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut outside_nonzero, mut norm_err, mut variant, mut empty_ok, mut empty_seen) = (0usize, 0.0f64, 0usize, true, 0);
    for t in 0..100 {
        let (c, hf, wf, s) = (rng.gen_range(1..=8), rng.gen_range(1..=6), rng.gen_range(1..=4), rng.gen_range(2..=6));
        let frame = Frame::new(hf * s, wf * s);
        let z = random_map(&mut rng, c, hf, wf);
        let mask = if t % 10 == 0 {
            // Sparse pixels: every cell stays below half coverage.
            VisibilityMask::from_pixels(frame, (0..frame.area()).map(|i| i % 3 == 0 && rng.gen_bool(0.9)).collect())
        } else {
            let (w, h) = (rng.gen_range(1..=frame.width), rng.gen_range(1..=frame.height));
            VisibilityMask::from_rect(frame, rng.gen_range(0..=frame.width - w), rng.gen_range(0..=frame.height - h), w, h)
        };
        let cells = mask.cells(hf, wf).unwrap();
        match mask_features(&z, &mask) {
            Err(EncoderError::EmptyMask) => {
                empty_seen += 1;
                empty_ok &= cells.covered() == 0;
            }
            Err(e) => panic!("unexpected error {e}"),
            Ok(m) => {
                empty_ok &= cells.covered() > 0;
                let plane = hf * wf;
                outside_nonzero += (0..m.values.len()).filter(|&i| !cells.cells[i % plane] && m.values[i] != 0.0).count();
                let n: f64 = m.values.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
                norm_err = norm_err.max((n - 1.0).abs());
                // Perturb outside the mask on both sides.
                let mut z2 = z.clone();
                let mut e = random_map(&mut rng, c, hf, wf);
                let mut idx = FeatureIndex::new((c, hf, wf), [0; 32]);
                idx.push("a", "A", &e).unwrap();
                for i in 0..z2.values.len() {
                    if !cells.cells[i % plane] {
                        z2.values[i] += rng.gen_range(-5.0..5.0);
                        e.values[i] = rng.gen_range(-5.0..5.0);
                    }
                }
                idx.push("b", "B", &e).unwrap();
                let m2 = mask_features(&z2, &mask).unwrap();
                let s = score_entries(&idx, &m, &cells, Execution::Sequential);
                let s2 = score_entries(&idx, &m2, &cells, Execution::Sequential);
                if m2 != m || s[0].to_bits() != s[1].to_bits() || s[0].to_bits() != s2[0].to_bits() {
                    variant += 1;
                }
            }
        }
    }
    let pass = outside_nonzero == 0 && norm_err <= 1e-6 && variant == 0 && empty_ok && empty_seen > 0;
    outcome(
        "masking invariants",
        pass,
        format!(
            "100 (z, m): {outside_nonzero} non-zero values outside masks, max |norm-1| {norm_err:.1e} (tol 1e-6), {variant} cases changed by out-of-mask perturbation, EmptyMask raised {empty_seen} times exactly for zero-cell masks: {}",
            verdict(empty_ok)
        ),
    )
}

fn brute_force_retrieval() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut order_mismatch, mut worst) = (0usize, 0.0f64);
    let mut trials = 0;
    // Random feature indices.
    for _ in 0..30 {
        let (c, hf, wf) = (rng.gen_range(1..=16), rng.gen_range(1..=6), rng.gen_range(1..=4));
        let n_models = rng.gen_range(2..=40);
        let n_entries = rng.gen_range(n_models..=200);
        let mut idx = FeatureIndex::new((c, hf, wf), [0; 32]);
        for i in 0..n_entries {
            let model = if i < n_models { i } else { rng.gen_range(0..n_models) };
            let mut z = random_map(&mut rng, c, hf, wf);
            if rng.gen_bool(0.05) {
                z.values.iter_mut().for_each(|v| *v = 0.0);
            }
            idx.push(&format!("i{i:03}"), &format!("M{model:02}"), &z).unwrap();
        }
        let cells: Vec<bool> = (0..hf * wf).map(|_| rng.gen_bool(0.6)).collect();
        if !cells.contains(&true) {
            continue;
        }
        let q = random_map(&mut rng, c, hf, wf);
        let cm = CellMask { hf, wf, cells: cells.clone() };
        let Some(qn) = naive_mask(&q, &cells) else { continue };
        let qm = MaskedFeatures { values: qn.iter().map(|&v| v as f32).collect(), norm: 1.0 };
        let qd: Vec<f64> = qm.values.iter().map(|&v| v as f64).collect();
        let k = rng.gen_range(1..=n_models + 2);
        let got = aggregate(&idx, &score_entries(&idx, &qm, &cm, Execution::Parallel), k);
        let want = naive_rank(&idx, &qd, &cells, k);
        trials += 1;
        if got.iter().map(|r| (&r.model_id, &r.best_instance_id)).ne(want.iter().map(|w| (&w.0, &w.1))) {
            order_mismatch += 1;
        }
        for (g, w) in got.iter().zip(&want) {
            worst = worst.max((g.score - w.2).abs());
        }
    }
    // Full query path with a real encoder.
    let enc = Encoder::new(common::tiny_encoder_config(5)).unwrap();
    let inst = common::tiny_instances(12, 5);
    let items: Vec<_> = inst.iter().map(|s| (s.instance_id.clone(), s.model_id.clone(), s.depth.clone())).collect();
    let idx = build_index_from_images(&items, &enc, Channel::Depth, Execution::Parallel).unwrap();
    let (_, hf, wf) = enc.feature_shape();
    let rc = RetrievalConfig { k: 6, ..RetrievalConfig::default() };
    for (qi, s) in inst.iter().enumerate().take(8) {
        let mask = VisibilityMask::from_rect(common::TINY_FRAME, 0, qi * 8, 64, 64);
        let spec = QuerySpec { query_id: s.instance_id.clone(), print: s.print.clone(), mask: mask.clone(), k: 6 };
        let got = query(&idx, &enc, &spec, &rc, Execution::Parallel).unwrap();
        let cells = mask.cells(hf, wf).unwrap().cells;
        let qz = enc.encode(&treadmatch::augment::apply_pixel_mask(&s.print, &mask), Channel::Print).unwrap();
        let qd: Vec<f64> = mask_features(&qz, &mask).unwrap().values.iter().map(|&v| v as f64).collect();
        let want = naive_rank(&idx, &qd, &cells, 6);
        trials += 1;
        if got.results.iter().map(|r| (&r.model_id, &r.best_instance_id)).ne(want.iter().map(|w| (&w.0, &w.1))) {
            order_mismatch += 1;
        }
        for (g, w) in got.results.iter().zip(&want) {
            worst = worst.max((g.score - w.2).abs());
        }
    }
    outcome(
        "brute-force retrieval equivalence",
        order_mismatch == 0 && worst <= 1e-6,
        format!("{trials} queries on indices of <= 200 entries: {order_mismatch} ranking mismatches (exact), max |dscore| {worst:.1e} (tol 1e-6)"),
    )
}

fn augmentation_suite() -> Outcome {
    let inst = common::tiny_instances(3, 6);
    let config = AugmentConfig { p_occlusion: 0.8, p_erasure: 0.8, p_noise: 0.8, ..AugmentConfig::default() };
    let (mut nondet, mut replay_bad, mut erase_up, mut identity_bad) = (0, 0, 0usize, 0);
    for seed in 0..40u64 {
        let print = &inst[seed as usize % inst.len()].print;
        let (a, ra) = augment(print, &config, &mut ChaCha8Rng::seed_from_u64(seed));
        let (b, rb) = augment(print, &config, &mut ChaCha8Rng::seed_from_u64(seed));
        let bits = |i: &Image| i.pixels().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        if bits(&a) != bits(&b) || ra != rb {
            nondet += 1;
        }
        let replay: DegradationRecipe = serde_json::from_str(&serde_json::to_string(&ra).unwrap()).unwrap();
        if bits(&replay.apply(print)) != bits(&a) {
            replay_bad += 1;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let field = if seed % 2 == 0 {
            make_perlin(print.height(), print.width(), 4, 32.0, &mut rng)
        } else {
            make_gaussian(print.height(), print.width(), 2, &mut rng)
        };
        let depth = &inst[seed as usize % inst.len()].depth;
        for src in [print, depth] {
            let out = erase(src, &field, rng.gen_range(0.0..1.0));
            erase_up += out.pixels().iter().zip(src.pixels()).filter(|(o, i)| o > i).count();
        }
        let (same, recipe) = augment(print, &AugmentConfig::disabled(), &mut ChaCha8Rng::seed_from_u64(seed));
        if &same != print || !recipe.is_identity() {
            identity_bad += 1;
        }
    }
    outcome(
        "augmentation suite",
        nondet == 0 && replay_bad == 0 && erase_up == 0 && identity_bad == 0,
        format!(
            "40 seeds: {nondet} non-deterministic, {replay_bad} recipe replays differ (bit-exact), {erase_up} pixels raised by erasure, {identity_bad} non-identity outputs with all probabilities 0"
        ),
    )
}

fn index_round_trip() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec { frame: common::TINY_FRAME, ..SyntheticSpec::new(8, 2, 9) };
    let manifest = generate_synthetic(&spec, dir.path()).unwrap();
    let enc = Encoder::new(common::tiny_encoder_config(9)).unwrap();
    let index = build_index(&manifest, &enc, Channel::Depth, Execution::Parallel).unwrap();
    let path = dir.path().join("db.idx");
    index.save(&path).unwrap();
    let back = FeatureIndex::load(&path).unwrap();
    let bits = |i: &FeatureIndex| i.all_features().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let features_same = bits(&back) == bits(&index) && back.entries() == index.entries();
    let qs = QuerySetConfig { queries_per_instance: 1, k: 5, seed: 9, ..QuerySetConfig::default() };
    let (specs, _) = build_query_set(&manifest, &qs).unwrap();
    let rc = RetrievalConfig { k: 5, ..RetrievalConfig::default() };
    let a: Vec<_> = batch_query(&index, &enc, &specs, &rc, Execution::Parallel).into_iter().map(Result::unwrap).collect();
    let b: Vec<_> = batch_query(&back, &enc, &specs, &rc, Execution::Parallel).into_iter().map(Result::unwrap).collect();
    outcome(
        "index round-trip",
        features_same && a == b,
        format!(
            "{} entries: features bit-identical {}, {} post-reload query results identical {}",
            index.len(),
            verdict(features_same),
            specs.len(),
            verdict(a == b)
        ),
    )
}

// ---------------------------------------------------------------------------
// End-to-end toy benchmark and ablations

const DATASET_SEED: u64 = 7;
const TRAIN_STEPS: u64 = 2000;
/// Shared budget of the ablation arms (each arm trains this many steps).
const ABLATION_STEPS: u64 = 500;
const E2E_K: usize = 5;

struct Bench {
    _dir: tempfile::TempDir,
    manifest: treadmatch::dataset::DatasetManifest,
    specs: Vec<QuerySpec>,
    gt: GroundTruthMap,
    set: TrainingSet,
}

impl Bench {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate_synthetic(&SyntheticSpec::new(16, 2, DATASET_SEED), dir.path()).unwrap();
        let qs = QuerySetConfig {
            queries_per_instance: 2,
            mask_area_fraction_range: [0.4, 1.0],
            augment: AugmentConfig::default(),
            k: E2E_K,
            seed: 0,
        };
        let (specs, gt) = build_query_set(&manifest, &qs).unwrap();
        let set = TrainingSet::from_manifest(&manifest).unwrap();
        Self { _dir: dir, manifest, specs, gt, set }
    }

    /// (hit@5, mAP@5) of `encoder` with an index over `modality`.
    fn score(&self, encoder: &Encoder, modality: Channel, feature_masking: bool) -> (f64, f64) {
        let index = build_index(&self.manifest, encoder, modality, Execution::Parallel).unwrap();
        let rc = RetrievalConfig { k: E2E_K, feature_masking, query_print_masking: true };
        let results: Vec<_> =
            batch_query(&index, encoder, &self.specs, &rc, Execution::Parallel).into_iter().map(Result::unwrap).collect();
        let report = evaluate(&results, &self.gt, &MetricConfig { k: E2E_K }, None, Execution::Parallel).unwrap();
        (report.hit_at_k, report.map_at_k)
    }
}

fn trainer(config: TrainConfig) -> Trainer {
    Trainer::new(Encoder::new(EncoderConfig::small()).unwrap(), config, Execution::Parallel).unwrap()
}

fn run_steps(t: &mut Trainer, set: &TrainingSet, until: u64) {
    while t.step_count() < until {
        t.step(set).unwrap();
    }
}

fn end_to_end() -> Vec<Outcome> {
    let bench = Bench::new();
    let start = Instant::now();
    let mut main = trainer(TrainConfig { steps: TRAIN_STEPS, ..TrainConfig::default() });
    run_steps(&mut main, &bench.set, ABLATION_STEPS);
    let snapshot = main.encoder().clone();
    run_steps(&mut main, &bench.set, TRAIN_STEPS);
    let train_secs = start.elapsed().as_secs_f64();
    let (hit, map) = bench.score(main.encoder(), Channel::Depth, true);
    let (_, map_unmasked) = bench.score(main.encoder(), Channel::Depth, false);
    let gain = map - map_unmasked;
    let e2e = outcome(
        "end-to-end toy benchmark",
        hit >= 0.9 && map >= 0.6 && gain >= 0.05,
        format!(
            "16x2 synthetic, small_cnn {TRAIN_STEPS} steps ({train_secs:.0} s on {} threads), {} queries: hit@5 {hit:.3} (>= 0.9 {}), mAP@5 {map:.3} (>= 0.6 {}), masking gain {gain:+.3} = {map:.3} - {map_unmasked:.3} (>= 0.05 {})",
            rayon_threads(),
            bench.specs.len(),
            verdict(hit >= 0.9),
            verdict(map >= 0.6),
            verdict(gain >= 0.05)
        ),
    );

    let (_, depth_map) = bench.score(&snapshot, Channel::Depth, true);
    let mut print_arm = trainer(TrainConfig { steps: ABLATION_STEPS, database_modality: Channel::Print, ..TrainConfig::default() });
    run_steps(&mut print_arm, &bench.set, ABLATION_STEPS);
    let (_, print_map) = bench.score(print_arm.encoder(), Channel::Print, true);
    let mut noaug_arm = trainer(TrainConfig { steps: ABLATION_STEPS, augment: AugmentConfig::disabled(), ..TrainConfig::default() });
    run_steps(&mut noaug_arm, &bench.set, ABLATION_STEPS);
    let (_, noaug_map) = bench.score(noaug_arm.encoder(), Channel::Depth, true);
    let ablation = outcome(
        "ablation toggles",
        depth_map >= print_map && depth_map >= noaug_map,
        format!(
            "{ABLATION_STEPS} steps per arm, mAP@5: depth database {depth_map:.3} vs print database {print_map:.3} (depth >= print {}); full augmentation {depth_map:.3} vs none {noaug_map:.3} (full >= none {})",
            verdict(depth_map >= print_map),
            verdict(depth_map >= noaug_map)
        ),
    );
    vec![e2e, ablation]
}

fn rayon_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

// ---------------------------------------------------------------------------

type Criterion = (&'static str, fn() -> Vec<Outcome>);

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [Criterion; 9] = [
        ("metric", || vec![metric_oracle()]),
        ("ap", || vec![hand_ap_cases()]),
        ("loss", || vec![loss_oracle()]),
        ("gradient", || vec![gradient_check()]),
        ("masking", || vec![masking_invariants()]),
        ("retrieval", || vec![brute_force_retrieval()]),
        ("augmentation", || vec![augmentation_suite()]),
        ("index", || vec![index_round_trip()]),
        ("e2e", end_to_end),
    ];
    let mut failed = Vec::new();
    let mut total = 0;
    for (key, run) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| key.contains(f.as_str())) {
            continue;
        }
        for o in run() {
            total += 1;
            println!("[{}] {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.name, o.detail);
            if !o.pass {
                failed.push(o.name);
            }
        }
    }
    println!("acceptance: {} of {total} criteria pass{}", total - failed.len(), if failed.is_empty() {
        String::new()
    } else {
        format!("; failing: {}", failed.join(", "))
    });
    if !failed.is_empty() && std::env::var("TREADMATCH_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
