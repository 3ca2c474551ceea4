//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line. Run with `cargo test -p clusterlm-cli --test acceptance`
//! (add `-- --nocapture` to see the summary lines).

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use clusterlm_cli::{
    cmd_cluster, cmd_datagen, cmd_eval, cmd_train_baseline, cmd_train_clusters, PipelineConfig,
};
use clusterlm_core::clustering::{assign, calinski_harabasz, elbow_scan, fit_minibatch_kmeans};
use clusterlm_core::corpus::{product_sentence, ProductRecord};
use clusterlm_core::encoder::{
    cosine_similarity, encode, featurize, tokenize, EncoderParams, FeaturizerConfig,
};
use clusterlm_core::evaluation::{ndcg_at_k, recall_at_k, RelevanceList};
use clusterlm_core::retrieval::{
    build_index, load_registry, refine_top_products, save_registry, top_k_search, ProductLookup,
    ScoredProduct, TopProductSet,
};
use clusterlm_core::trainer::{contrastive_loss, pair_loss_and_gradient, LabeledPair};

// ---------------------------------------------------------------------------
// shared helpers

const WORDS: &[&str] = &[
    "washer", "pressure", "electric", "cordless", "drill", "battery", "garden", "hose", "nozzle",
    "paint", "brush", "roller", "ladder", "steel", "bracket", "hinge", "cabinet", "kitchen",
    "faucet", "chrome", "light", "bulb", "dimmer", "switch", "outdoor", "patio", "heater",
    "filter", "vacuum", "saw",
];

fn random_text(rng: &mut ChaCha8Rng, min_tokens: usize, max_tokens: usize) -> String {
    let n = rng.random_range(min_tokens..=max_tokens);
    (0..n)
        .map(|_| WORDS[rng.random_range(0..WORDS.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

fn run_pipeline(cfg: &PipelineConfig) {
    cmd_datagen(cfg).unwrap();
    cmd_train_baseline(cfg).unwrap();
    let elbow: Vec<usize> = (2..=6).collect();
    cmd_cluster(cfg, Some(&elbow)).unwrap();
    cmd_train_clusters(cfg).unwrap();
    cmd_eval(cfg).unwrap();
}

fn reduced_config(home: &Path, seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        seed,
        embed_dim: 32,
        n_clusters: 4,
        k_top: 50,
        featurizer: FeaturizerConfig {
            n_buckets: 4096,
            ..FeaturizerConfig::default()
        },
        ..PipelineConfig::default()
    };
    cfg.synth.n_intents = 4;
    cfg.synth.products_per_intent = 50;
    cfg.synth.train_queries_per_intent = 100;
    cfg.synth.test_queries_per_intent = 25;
    cfg.resolved(home)
}

fn parse_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let raw = fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let mut lines = raw.lines();
    let header: Vec<String> = lines
        .next()
        .expect("empty csv")
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    (header, rows)
}

/// Reduced pipeline artifacts shared by the timing and report-shape checks.
struct Fixture {
    _home: tempfile::TempDir,
    cfg: PipelineConfig,
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let home = tempfile::tempdir().unwrap();
        let cfg = reduced_config(home.path(), 424242);
        run_pipeline(&cfg);
        Fixture { _home: home, cfg }
    })
}

fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let comb2 = |m: u64| (m * m.saturating_sub(1)) as f64 / 2.0;
    let sum_ij: f64 = table.values().map(|&v| comb2(v)).sum();
    let sum_a: f64 = rows.values().map(|&v| comb2(v)).sum();
    let sum_b: f64 = cols.values().map(|&v| comb2(v)).sum();
    let total = comb2(a.len() as u64);
    let expected = sum_a * sum_b / total;
    (sum_ij - expected) / (0.5 * (sum_a + sum_b) - expected)
}

// ---------------------------------------------------------------------------
// criterion 1: exact gradients against central finite differences

#[test]
fn criterion_01_gradient_correctness() {
    let started = Instant::now();
    let fz = FeaturizerConfig {
        n_buckets: 512,
        ..FeaturizerConfig::default()
    };
    let dim = 8;
    let margin = 0.5;
    let h = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_9701);
    let mut checked_draws = 0usize;
    let mut checked_entries = 0usize;
    let mut max_rel = 0.0f64;
    let mut attempts = 0usize;
    while checked_draws < 100 {
        attempts += 1;
        assert!(attempts < 1000, "too many degenerate draws");
        let params = EncoderParams::random(fz.clone(), dim, rng.random()).unwrap();
        let pair = LabeledPair {
            query: random_text(&mut rng, 1, 4),
            product: random_text(&mut rng, 2, 8),
            label: u8::from(rng.random::<bool>()),
        };
        let (_, grad) = pair_loss_and_gradient(&pair, &params, margin).unwrap();
        // Stay away from the hinge kink where finite differences straddle a
        // nondifferentiable point.
        let dq = encode(&pair.query, &params).unwrap();
        let dp = encode(&pair.product, &params).unwrap();
        let d = clusterlm_core::encoder::euclidean_distance(&dq, &dp).unwrap();
        if pair.label == 0 && (d - margin).abs() < 1e-3 {
            continue;
        }
        // Candidate columns: the pair's own feature support.
        let mut cols: Vec<u32> = Vec::new();
        for text in [&pair.query, &pair.product] {
            let feats = featurize(&tokenize(text, fz.max_tokens), &fz);
            cols.extend(feats.indices);
        }
        cols.sort_unstable();
        cols.dedup();
        for _ in 0..32 {
            let col = cols[rng.random_range(0..cols.len())] as usize;
            let row = rng.random_range(0..dim);
            let analytic = grad.entry(row, col as u32);
            let base = params.weight(row, col);
            let mut plus = params.clone();
            plus.set_weight(row, col, base + h).unwrap();
            let mut minus = params.clone();
            minus.set_weight(row, col, base - h).unwrap();
            let (lp, _) = pair_loss_and_gradient(&pair, &plus, margin).unwrap();
            let (lm, _) = pair_loss_and_gradient(&pair, &minus, margin).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let denom = analytic.abs().max(fd.abs());
            if denom > 1e-8 {
                let rel = ((analytic - fd) / denom).abs();
                max_rel = max_rel.max(rel);
                assert!(
                    rel < 1e-5,
                    "draw {checked_draws}, entry ({row},{col}): analytic {analytic} vs fd {fd}"
                );
            } else {
                assert!((analytic - fd).abs() < 1e-7);
            }
            checked_entries += 1;
        }
        checked_draws += 1;
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "gradient check took {elapsed:.1}s");
    println!(
        "ACCEPTANCE 1 PASS: gradient vs finite differences on {checked_draws} draws / {checked_entries} entries, max rel err {max_rel:.2e}, {elapsed:.2}s"
    );
}

// ---------------------------------------------------------------------------
// criterion 2: loss semantics

#[test]
fn criterion_02_loss_semantics() {
    let cases = [
        (0.3, 1u8, 0.5, 0.045),
        (0.5, 0, 0.5, 0.0),
        (0.75, 0, 0.5, 0.0),
        (2.0, 0, 0.5, 0.0),
        (0.3, 0, 0.5, 0.02),
    ];
    for (d, label, m, expected) in cases {
        let got = contrastive_loss(d, label, m);
        assert!(
            (got - expected).abs() < 1e-12,
            "loss(d={d}, label={label}, m={m}) = {got}, want {expected}"
        );
    }
    println!("ACCEPTANCE 2 PASS: contrastive loss table exact to 1e-12");
}

// ---------------------------------------------------------------------------
// criterion 3: metric oracles

/// Brute-force NDCG reference: direct DCG sums, IDCG from an explicitly
/// sorted ideal list.
fn ndcg_reference(rels: &[u8], total_purchased: usize, k: usize) -> f64 {
    let dcg = |list: &[u8]| -> f64 {
        list.iter()
            .take(k)
            .enumerate()
            .map(|(i, &r)| r as f64 / ((i + 2) as f64).log2())
            .sum()
    };
    // The ideal list over the whole judged set: total_purchased ones, then
    // zeros, sorted descending.
    let mut ideal = vec![1u8; total_purchased];
    ideal.extend(vec![0u8; k.saturating_sub(total_purchased)]);
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    dcg(rels) / dcg(&ideal)
}

#[test]
fn criterion_03_metric_oracles() {
    let mut cases = 0usize;
    for len in 1..=6usize {
        for bits in 0..(1u32 << len) {
            let rels: Vec<u8> = (0..len).map(|i| ((bits >> i) & 1) as u8).collect();
            let ones = rels.iter().filter(|&&r| r == 1).count();
            for total in ones.max(1)..=ones + 3 {
                let rel = RelevanceList::new(rels.clone(), total).unwrap();
                for k in 1..=len {
                    let got = ndcg_at_k(&rel, k).unwrap();
                    let want = ndcg_reference(&rels, total, k);
                    assert!(
                        (got - want).abs() < 1e-12,
                        "ndcg rels={rels:?} total={total} k={k}: {got} vs {want}"
                    );
                    cases += 1;
                }
            }
        }
    }
    // Recall hand values, including the capped denominator.
    let rel = RelevanceList::new(vec![1, 0, 1, 0], 3).unwrap();
    assert!((recall_at_k(&rel, 4).unwrap() - 0.6667).abs() < 1e-4);
    assert!((recall_at_k(&rel, 4).unwrap() - 2.0 / 3.0).abs() < 1e-9);
    let rel = RelevanceList::new(vec![1, 0, 0], 5).unwrap();
    assert!((recall_at_k(&rel, 1).unwrap() - 1.0).abs() < 1e-12);
    let rel = RelevanceList::new(vec![0, 0], 2).unwrap();
    assert_eq!(recall_at_k(&rel, 2).unwrap(), 0.0);
    println!("ACCEPTANCE 3 PASS: NDCG matches brute-force reference on {cases} exhaustive cases; recall hand values exact");
}

// ---------------------------------------------------------------------------
// criterion 4: labeling oracle

#[test]
fn criterion_04_labeling_oracle() {
    use clusterlm_core::corpus::{EngagementType, Judgment};
    use clusterlm_core::retrieval::label_top_products;

    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_9704);
    for fixture_no in 0..10_000 {
        let n = rng.random_range(1..=100usize);
        let universe = n + rng.random_range(0..20usize);
        // Ranked list of distinct product ids.
        let mut ids: Vec<usize> = (0..universe).collect();
        for i in (1..ids.len()).rev() {
            ids.swap(i, rng.random_range(0..=i));
        }
        ids.truncate(n);
        let purchased: HashSet<usize> = (0..universe)
            .filter(|_| rng.random::<f64>() < 0.08)
            .collect();
        let top = TopProductSet {
            query_id: "q".into(),
            entries: ids
                .iter()
                .enumerate()
                .map(|(i, id)| ScoredProduct {
                    omsid: format!("p{id}"),
                    score: 1.0 - i as f64 * 1e-4,
                })
                .collect(),
        };
        let judgments: Vec<Judgment> = purchased
            .iter()
            .map(|id| Judgment {
                omsid: format!("p{id}"),
                engagement: EngagementType::Purchased,
            })
            .collect();

        let out = label_top_products(&top, &judgments);

        // Independent reference (ten lines).
        let purchased_ids: HashSet<String> = purchased.iter().map(|id| format!("p{id}")).collect();
        let ranked: Vec<&str> = top.entries.iter().map(|e| e.omsid.as_str()).collect();
        let reference: (Vec<(usize, String, u8)>, usize) =
            match ranked.iter().rposition(|o| purchased_ids.contains(*o)) {
                None => (vec![], ranked.len()),
                Some(k) => (
                    ranked[..=k]
                        .iter()
                        .enumerate()
                        .map(|(i, o)| (i, o.to_string(), u8::from(purchased_ids.contains(*o))))
                        .collect(),
                    ranked.len() - (k + 1),
                ),
            };

        let got: Vec<(usize, String, u8)> = out
            .entries
            .iter()
            .map(|e| (e.rank, e.omsid.clone(), e.label))
            .collect();
        assert_eq!(got, reference.0, "fixture {fixture_no}");
        assert_eq!(out.discarded_count, reference.1, "fixture {fixture_no}");

        // Invariants.
        if let Some(last) = out.entries.last() {
            assert_eq!(last.label, 1, "fixture {fixture_no}: last label not 1");
        }
        for e in &out.entries {
            assert_eq!(
                e.label == 1,
                purchased_ids.contains(&e.omsid),
                "fixture {fixture_no}: label mismatch at rank {}",
                e.rank
            );
        }
        let last_purchase = ranked.iter().rposition(|o| purchased_ids.contains(*o));
        for e in &out.entries {
            assert!(e.rank <= last_purchase.unwrap());
        }
    }
    println!("ACCEPTANCE 4 PASS: labeling matches the reference on 10000 randomized fixtures");
}

// ---------------------------------------------------------------------------
// criterion 5: clustering

#[test]
fn criterion_05_clustering() {
    // (a) Calinski-Harabasz hand case.
    let points = vec![
        vec![0.0, 0.0],
        vec![0.0, 1.0],
        vec![10.0, 0.0],
        vec![10.0, 1.0],
    ];
    let ch = calinski_harabasz(&points, &[0, 0, 1, 1]).unwrap();
    assert!((ch - 200.0).abs() < 1e-9, "CH hand case: {ch}");

    // (b) Three planted separated blobs recovered for every seed.
    let blob_centers = [[0.0, 0.0, 0.0], [15.0, 0.0, 5.0], [0.0, 15.0, -5.0]];
    let mut data_rng = ChaCha8Rng::seed_from_u64(0xACCE_9705);
    let mut points = Vec::new();
    let mut planted = Vec::new();
    for _ in 0..120 {
        let b = data_rng.random_range(0..3);
        points.push(
            blob_centers[b]
                .iter()
                .map(|c| c + data_rng.random_range(-0.8..0.8))
                .collect::<Vec<f64>>(),
        );
        planted.push(b);
    }
    let mut min_ari = f64::INFINITY;
    for seed in 0..10u64 {
        let model = fit_minibatch_kmeans(&points, 3, 32, 100, seed).unwrap();
        let found: Vec<usize> = points.iter().map(|p| assign(p, &model).unwrap()).collect();
        let ari = adjusted_rand_index(&planted, &found);
        min_ari = min_ari.min(ari);
        assert!(ari >= 0.9, "seed {seed}: ARI {ari}");
    }

    // (c) The elbow scan peaks at the planted cluster count.
    let rows = elbow_scan(&points, &(2..=8).collect::<Vec<_>>(), 32, 100, 99).unwrap();
    let best = rows
        .iter()
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .unwrap();
    assert_eq!(best.0, 3, "elbow argmax: {rows:?}");
    println!(
        "ACCEPTANCE 5 PASS: CH hand case 200, blob ARI >= {min_ari:.3} over 10 seeds, elbow argmax 3"
    );
}

// ---------------------------------------------------------------------------
// criterion 6: retrieval exactness

#[test]
fn criterion_06_retrieval_exactness() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_9706);
    let fz = FeaturizerConfig {
        n_buckets: 1024,
        ..FeaturizerConfig::default()
    };
    for trial in 0..100 {
        let n = rng.random_range(1..=1000usize);
        let params = EncoderParams::random(fz.clone(), 16, rng.random()).unwrap();
        let catalog: Vec<ProductRecord> = (0..n)
            .map(|i| ProductRecord {
                omsid: format!("r{i}"),
                title: random_text(&mut rng, 1, 5),
                brand: String::new(),
                color_finish: String::new(),
                leaf: String::new(),
            })
            .collect();
        let index = build_index(&catalog, &params).unwrap();
        let query = random_text(&mut rng, 1, 4);
        let k_top = rng.random_range(1..=n + 5);
        let got = top_k_search("q", &query, &params, &index, k_top).unwrap();

        // Oracle: score all, stable sort by descending score (stable keeps
        // catalog order on ties), truncate.
        let q = encode(&query, &params).unwrap();
        let mut scored: Vec<(String, f64)> = catalog
            .iter()
            .map(|p| {
                let e = encode(&product_sentence(p), &params).unwrap();
                (p.omsid.clone(), cosine_similarity(&q, &e))
            })
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        scored.truncate(k_top);
        assert_eq!(got.entries.len(), scored.len(), "trial {trial}");
        for (g, (omsid, score)) in got.entries.iter().zip(&scored) {
            assert_eq!(&g.omsid, omsid, "trial {trial} ordering");
            assert_eq!(g.score, *score, "trial {trial} score bits");
        }

        // Refinement is always a permutation of its input.
        let other = EncoderParams::random(fz.clone(), 16, rng.random()).unwrap();
        let lookup = ProductLookup::new(&catalog);
        let refined = refine_top_products(&query, &got, &other, &lookup).unwrap();
        let mut before: Vec<&str> = got.entries.iter().map(|e| e.omsid.as_str()).collect();
        let mut after: Vec<&str> = refined.entries.iter().map(|e| e.omsid.as_str()).collect();
        before.sort_unstable();
        after.sort_unstable();
        assert_eq!(before, after, "trial {trial} refinement not a permutation");
    }

    // Tie rule: constant weights collapse every embedding onto the same
    // point, so all scores tie exactly and search must return catalog order.
    let constant = vec![0.5; fz.n_buckets * 4];
    let tied_params = EncoderParams::from_row_major(&constant, 4, fz.clone()).unwrap();
    let catalog: Vec<ProductRecord> = (0..50)
        .map(|i| ProductRecord {
            omsid: format!("tie{i}"),
            title: format!("item {i}"),
            brand: String::new(),
            color_finish: String::new(),
            leaf: String::new(),
        })
        .collect();
    let index = build_index(&catalog, &tied_params).unwrap();
    let top = top_k_search("q", "anything at all", &tied_params, &index, 20).unwrap();
    for (rank, entry) in top.entries.iter().enumerate() {
        assert_eq!(
            entry.omsid,
            format!("tie{rank}"),
            "tie broken out of catalog order"
        );
        assert_eq!(entry.score, top.entries[0].score);
    }
    println!("ACCEPTANCE 6 PASS: top-k search equals the exhaustive oracle on 100 randomized catalogs (tie rule included); refinement always permutes");
}

// ---------------------------------------------------------------------------
// criterion 7: end-to-end directional reproduction

#[test]
fn criterion_07_end_to_end_directional() {
    let seeds = [1u64, 2, 3, 4, 5];
    let mut passes = 0usize;
    let mut summaries = Vec::new();
    for &seed in &seeds {
        let home = tempfile::tempdir().unwrap();
        let mut cfg = PipelineConfig::default().resolved(home.path());
        cfg.seed = seed;
        let started = Instant::now();
        run_pipeline(&cfg);
        let elapsed = started.elapsed().as_secs_f64();
        assert!(
            elapsed < 600.0,
            "seed {seed}: pipeline took {elapsed:.0}s (budget 600s on 4 cores)"
        );

        let (header, rows) = parse_csv(&cfg.report_dir.join("eval_report.csv"));
        assert_eq!(header[0], "threshold");
        let mut ok = true;
        let mut recall1 = (0.0, 0.0);
        for row in &rows {
            let k: usize = row[0].parse().unwrap();
            let rb: f64 = row[1].parse().unwrap();
            let rc: f64 = row[2].parse().unwrap();
            let nb: f64 = row[3].parse().unwrap();
            let nc: f64 = row[4].parse().unwrap();
            if [1, 2, 4, 8].contains(&k) && nc < nb {
                ok = false;
            }
            if k == 1 {
                recall1 = (rb, rc);
                if rc < rb {
                    ok = false;
                }
            }
        }
        summaries.push(format!(
            "seed {seed}: {} ({elapsed:.0}s, recall@1 {:.4}->{:.4})",
            if ok { "ok" } else { "MISS" },
            recall1.0,
            recall1.1
        ));
        if ok {
            passes += 1;
        }
    }
    assert!(
        passes >= 4,
        "directional improvement held for only {passes}/5 seeds: {summaries:?}"
    );
    println!(
        "ACCEPTANCE 7 PASS: refined >= baseline (NDCG@1,2,4,8 and recall@1) for {passes}/5 seeds [{}]",
        summaries.join("; ")
    );
}

// ---------------------------------------------------------------------------
// criterion 8: timing structure

#[test]
fn criterion_08_timing_structure() {
    let fx = fixture();
    let (header, rows) = parse_csv(&fx.cfg.report_dir.join("timing_report.csv"));
    assert_eq!(header, ["stage", "queries", "total_s", "ms_per_query"]);
    let names: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(names, ["assign", "embed_query", "top100_search", "refine"]);
    let ms: HashMap<&str, f64> = rows
        .iter()
        .map(|r| (r[0].as_str(), r[3].parse().unwrap()))
        .collect();
    assert!(
        ms["refine"] > ms["top100_search"],
        "refine {} <= search {}",
        ms["refine"],
        ms["top100_search"]
    );
    assert!(ms["refine"] > ms["embed_query"]);
    println!(
        "ACCEPTANCE 8 PASS: refine {:.3} ms/query dominates top-k search {:.3} ms/query",
        ms["refine"], ms["top100_search"]
    );
}

// ---------------------------------------------------------------------------
// criterion 9: determinism & persistence

#[test]
fn criterion_09_determinism_and_persistence() {
    let home_a = tempfile::tempdir().unwrap();
    let home_b = tempfile::tempdir().unwrap();
    let cfg_a = reduced_config(home_a.path(), 777);
    let cfg_b = reduced_config(home_b.path(), 777);
    run_pipeline(&cfg_a);
    run_pipeline(&cfg_b);

    // Registries byte-identical.
    let mut registry_files: Vec<String> = fs::read_dir(&cfg_a.registry_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    registry_files.sort();
    assert!(registry_files.contains(&"manifest.json".to_string()));
    for name in &registry_files {
        let a = fs::read(cfg_a.registry_dir.join(name)).unwrap();
        let b = fs::read(cfg_b.registry_dir.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between runs");
    }

    // Metric CSVs byte-identical (timing and wall-clock reports excluded).
    for name in [
        "eval_report.csv",
        "cluster_report.csv",
        "cluster_diagnostics.csv",
        "center_distances.csv",
        "recall24_by_cluster.csv",
        "elbow.csv",
    ] {
        let a = fs::read(cfg_a.report_dir.join(name)).unwrap();
        let b = fs::read(cfg_b.report_dir.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between runs");
    }

    // Registry round trip is bit-exact on every tensor.
    let registry = load_registry(&cfg_a.registry_dir).unwrap();
    let copy_dir = tempfile::tempdir().unwrap();
    save_registry(&registry, copy_dir.path()).unwrap();
    for name in &registry_files {
        let a = fs::read(cfg_a.registry_dir.join(name)).unwrap();
        let b = fs::read(copy_dir.path().join(name)).unwrap();
        assert_eq!(a, b, "round trip changed {name}");
    }
    let reloaded = load_registry(copy_dir.path()).unwrap();
    assert_eq!(registry.baseline, reloaded.baseline);
    assert_eq!(registry.clusters, reloaded.clusters);
    assert_eq!(registry.kmeans.centers, reloaded.kmeans.centers);
    println!("ACCEPTANCE 9 PASS: two runs byte-identical; registry round trip bit-exact");
}

// ---------------------------------------------------------------------------
// criterion 10: report-shape conformance

#[test]
fn criterion_10_report_shapes() {
    let fx = fixture();
    let dir = &fx.cfg.report_dir;

    let (header, rows) = parse_csv(&dir.join("eval_report.csv"));
    assert_eq!(
        header,
        [
            "threshold",
            "recall_baseline",
            "recall_cluster",
            "ndcg_baseline",
            "ndcg_cluster"
        ]
    );
    assert_eq!(rows.len(), fx.cfg.thresholds.len());
    for row in &rows {
        for cell in &row[1..] {
            let v: f64 = cell.parse().unwrap();
            assert!((0.0..=1.0).contains(&v), "metric out of range: {row:?}");
        }
    }

    let (header, rows) = parse_csv(&dir.join("cluster_report.csv"));
    assert_eq!(
        header,
        [
            "cluster_id",
            "train_share_pct",
            "occurrence_pct",
            "mean_l2",
            "recall24_baseline",
            "recall24_cluster"
        ]
    );
    assert_eq!(rows.len(), fx.cfg.n_clusters);
    let mut share_sum = 0.0;
    for row in &rows {
        let share: f64 = row[1].parse().unwrap();
        assert!((0.0..=100.0).contains(&share));
        share_sum += share;
        if !row[2].is_empty() {
            let occ: f64 = row[2].parse().unwrap();
            assert!((0.0..=100.0).contains(&occ));
        }
        let mean_l2: f64 = row[3].parse().unwrap();
        assert!(mean_l2 >= 0.0);
        for cell in &row[4..] {
            if !cell.is_empty() {
                let v: f64 = cell.parse().unwrap();
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }
    assert!(
        (share_sum - 100.0).abs() < 0.01,
        "shares sum to {share_sum}"
    );

    let (header, rows) = parse_csv(&dir.join("elbow.csv"));
    assert_eq!(header, ["k", "ch_score"]);
    assert_eq!(rows.len(), 5); // fixture scans 2..=6
    for row in &rows {
        let _: usize = row[0].parse().unwrap();
        let score: f64 = row[1].parse().unwrap();
        assert!(score >= 0.0);
    }

    let (header, rows) = parse_csv(&dir.join("center_distances.csv"));
    assert_eq!(header[0], "cluster_id");
    assert_eq!(header.len(), fx.cfg.n_clusters + 1);
    let matrix: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r[1..].iter().map(|c| c.parse().unwrap()).collect())
        .collect();
    assert_eq!(matrix.len(), fx.cfg.n_clusters);
    for (i, row) in matrix.iter().enumerate() {
        assert_eq!(row[i], 0.0, "nonzero diagonal at {i}");
        for (j, &v) in row.iter().enumerate() {
            assert_eq!(v, matrix[j][i], "asymmetry at ({i},{j})");
            assert!(v >= 0.0);
        }
    }

    let (header, rows) = parse_csv(&dir.join("recall24_by_cluster.csv"));
    assert_eq!(
        header,
        ["cluster_id", "recall24_baseline", "recall24_cluster"]
    );
    assert_eq!(rows.len(), fx.cfg.n_clusters);

    let (header, _) = parse_csv(&dir.join("timing_report.csv"));
    assert_eq!(header, ["stage", "queries", "total_s", "ms_per_query"]);

    let (header, rows) = parse_csv(&dir.join("train_baseline.csv"));
    assert_eq!(header, ["epoch", "mean_loss", "pairs", "seconds"]);
    assert_eq!(rows.len(), fx.cfg.train.epochs_baseline);
    for row in &rows {
        let loss: f64 = row[1].parse().unwrap();
        assert!(loss.is_finite() && loss >= 0.0);
    }
    println!("ACCEPTANCE 10 PASS: all report CSVs parse with documented headers and satisfy range invariants");
}
