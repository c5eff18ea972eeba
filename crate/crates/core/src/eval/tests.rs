use std::collections::BTreeMap;

use proptest::prelude::*;

use super::*;
use crate::diffusion::LatentImage;
use crate::error::Error;
use crate::prompt::Prompt;
use crate::rewards::{ScorerBackend, StubClipScorer};
use crate::util::rng_stream;

fn toy_set(n: usize) -> PromptSet {
    let colours = ["red", "blue", "green", "yellow"];
    let things = ["car", "book", "cat", "pen"];
    let prompts = (0..n)
        .map(|i| {
            Prompt::new(
                format!("p{i:02}"),
                format!(
                    "a {} {} and a {} {}",
                    colours[i % 4],
                    things[i / 4 % 4],
                    colours[(i + 1) % 4],
                    things[(i + 2) % 4]
                ),
            )
            .unwrap()
        })
        .collect();
    PromptSet::from_prompts(DatasetName::Custom, prompts).unwrap()
}

fn toy_images(set: &PromptSet) -> BTreeMap<String, LatentImage> {
    set.prompts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let img = LatentImage::standard_normal([4, 4, 4], &mut rng_stream(7, 0xe7a1, i as u64));
            (p.id.clone(), img)
        })
        .collect()
}

struct Failing;

impl PromptMetric for Failing {
    fn id(&self) -> &str {
        "failing-tifa"
    }
    fn metric(&self) -> MetricName {
        MetricName::Tifa
    }
    fn score(&self, _: &LatentImage, p: &Prompt) -> crate::Result<f64> {
        if p.id == "p03" {
            Err(Error::Client {
                client: "vqa".into(),
                attempts: 3,
                message: "timeout".into(),
            })
        } else {
            Ok(0.5)
        }
    }
}

fn stub_clients() -> MetricClients {
    let clip = StubClipScorer::new(ScorerBackend::Clip, 32);
    let reference: Vec<LatentImage> = (0..8)
        .map(|i| LatentImage::standard_normal([4, 4, 4], &mut rng_stream(1, 0xfe, i)))
        .collect();
    let refs: Vec<&LatentImage> = reference.iter().collect();
    MetricClients {
        per_prompt: vec![
            Box::new(ClipScoreMetric::new(clip.clone())),
            Box::new(StubTifa::new(clip)),
        ],
        per_set: vec![Box::new(StubFid::new(
            FeatureStats::from_images(&refs).unwrap(),
            "toy-ref",
        ))],
    }
}

#[test]
fn constant_clients_are_echoed() {
    let set = toy_set(5);
    let clients = MetricClients {
        per_prompt: vec![
            Box::new(ConstantMetric::new(MetricName::ClipScore, 0.25)),
            Box::new(ConstantMetric::new(MetricName::Tifa, 0.75)),
        ],
        per_set: vec![Box::new(ConstantMetric::new(MetricName::Fid, 12.5))],
    };
    let r = evaluate(&toy_images(&set), &set, &clients, "cfg").unwrap();
    assert_eq!(r.value(MetricName::ClipScore), Some(0.25));
    assert_eq!(r.value(MetricName::Tifa), Some(0.75));
    assert_eq!(r.value(MetricName::Fid), Some(12.5));
    assert!(r.metric(MetricName::Fid).unwrap().lower_is_better);
    assert!(r.metrics.iter().filter(|m| m.lower_is_better).count() == 1);
    assert_eq!(r.records.len(), 5);
    assert!(r
        .records
        .iter()
        .all(|rec| rec.scores[&MetricName::Tifa] == 0.75));
}

#[test]
fn evaluation_is_deterministic() {
    let set = toy_set(9);
    let images = toy_images(&set);
    let a = evaluate(&images, &set, &stub_clients(), "cfg").unwrap();
    let b = evaluate(&images, &set, &stub_clients(), "cfg").unwrap();
    assert!(a.timings.is_some());
    assert_eq!(a.clone().without_timings(), b.without_timings());
    let json = serde_json::to_string(&a.clone().without_timings()).unwrap();
    let back: EvalReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, a.without_timings());
}

#[test]
fn failing_client_is_marked_unavailable() {
    let set = toy_set(6);
    let clients = MetricClients {
        per_prompt: vec![
            Box::new(Failing),
            Box::new(ConstantMetric::new(MetricName::ClipScore, 0.3)),
        ],
        per_set: vec![],
    };
    let r = evaluate(&toy_images(&set), &set, &clients, "cfg").unwrap();
    let tifa = r.metric(MetricName::Tifa).unwrap();
    assert_eq!(tifa.value, None);
    assert!(tifa.unavailable.as_deref().unwrap().contains("timeout"));
    assert!(r
        .records
        .iter()
        .all(|rec| !rec.scores.contains_key(&MetricName::Tifa)));
    assert_eq!(r.value(MetricName::ClipScore), Some(0.3));
    assert_eq!(r.recompute(), r.metrics);
}

#[test]
fn missing_pairing_names_the_prompt() {
    let set = toy_set(4);
    let mut images = toy_images(&set);
    images.remove("p02");
    match evaluate(&images, &set, &MetricClients::none(), "cfg") {
        Err(Error::Consistency(msg)) => assert!(msg.contains("`p02`"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn no_metrics_gives_counts_only() {
    let set = toy_set(3);
    let r = evaluate(&toy_images(&set), &set, &MetricClients::none(), "cfg").unwrap();
    assert!(r.metrics.is_empty());
    assert_eq!(r.counts.prompts, 3);
    assert_eq!(r.counts.images, 3);
}

#[test]
fn duplicate_metric_is_a_config_error() {
    let set = toy_set(2);
    let clients = MetricClients {
        per_prompt: vec![
            Box::new(ConstantMetric::new(MetricName::ClipScore, 0.1)),
            Box::new(ConstantMetric::new(MetricName::ClipScore, 0.2)),
        ],
        per_set: vec![],
    };
    assert!(matches!(
        evaluate(&toy_images(&set), &set, &clients, "cfg"),
        Err(Error::Config { .. })
    ));
}

#[test]
fn golden_sixteen_images_aggregate() {
    let set = toy_set(16);
    let images = toy_images(&set);
    let clip = StubClipScorer::new(ScorerBackend::Clip, 32);
    let clients = MetricClients {
        per_prompt: vec![Box::new(ClipScoreMetric::new(clip.clone()))],
        per_set: vec![],
    };
    let r = evaluate(&images, &set, &clients, "cfg").unwrap();

    // independent: hand cosine on the raw embeddings, pairwise summation
    let per_prompt: Vec<f64> = set
        .prompts
        .iter()
        .map(|p| {
            let a = clip.image_embedding(&images[&p.id]);
            let b = clip.text_embedding(&p.text).unwrap();
            let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (na * nb)
        })
        .collect();
    fn pairwise(v: &[f64]) -> f64 {
        if v.len() == 1 {
            v[0]
        } else {
            let (a, b) = v.split_at(v.len() / 2);
            pairwise(a) + pairwise(b)
        }
    }
    let oracle = pairwise(&per_prompt) / 16.0;
    let got = r.value(MetricName::ClipScore).unwrap();
    assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
    for (rec, v) in r.records.iter().zip(&per_prompt) {
        assert!((rec.scores[&MetricName::ClipScore] - v).abs() < 1e-12);
    }
    assert_eq!(r.recompute(), r.metrics);
}

fn report_with(values: &[(MetricName, Option<f64>)], digest: &str) -> EvalReport {
    EvalReport {
        prompt_set: "custom".into(),
        prompt_set_digest: digest.into(),
        images_digest: "x".into(),
        config_hash: "c".into(),
        counts: EvalCounts {
            prompts: 0,
            images: 0,
            duplicates_removed: 0,
        },
        metrics: values
            .iter()
            .map(|&(metric, value)| MetricSummary {
                metric,
                client_id: "stub".into(),
                scope: MetricScope::Set,
                lower_is_better: metric.lower_is_better(),
                value,
                unavailable: value.is_none().then(|| "down".into()),
            })
            .collect(),
        records: vec![],
        timings: None,
    }
}

#[test]
fn compare_marks_direction() {
    let a = report_with(
        &[
            (MetricName::Fid, Some(7.0)),
            (MetricName::ClipScore, Some(0.3767)),
        ],
        "d",
    );
    let b = report_with(
        &[
            (MetricName::Fid, Some(8.0)),
            (MetricName::ClipScore, Some(0.3578)),
        ],
        "d",
    );
    let t = compare(&[("ours".into(), a.clone()), ("base".into(), b)]).unwrap();
    assert_eq!(t.columns, vec![MetricName::Fid, MetricName::ClipScore]);
    assert!(t.rows[0].cells.iter().all(|c| c.best));
    assert!(t.rows[1].cells.iter().all(|c| !c.best));
    assert!(t.render().contains("7.0000*"));

    let single = compare(&[("ours".into(), a.clone())]).unwrap();
    assert!(single.rows[0].cells.iter().all(|c| !c.best));

    let other = report_with(&[(MetricName::Fid, Some(1.0))], "other");
    assert!(matches!(
        compare(&[("a".into(), a), ("b".into(), other)]),
        Err(Error::Consistency(_))
    ));
    assert!(compare(&[]).is_err());
}

proptest! {
    #[test]
    fn best_marking_matches_brute_force(
        cols in proptest::collection::vec(
            proptest::collection::vec(proptest::option::weighted(0.8, (0u8..20).prop_map(|v| v as f64 / 4.0)), 3),
            2..6,
        )
    ) {
        let names = [MetricName::Fid, MetricName::ClipScore, MetricName::Tifa];
        let reports: Vec<(String, EvalReport)> = cols
            .iter()
            .enumerate()
            .map(|(i, vals)| {
                let v: Vec<_> = names.iter().copied().zip(vals.iter().copied()).collect();
                (format!("m{i}"), report_with(&v, "same"))
            })
            .collect();
        let t = compare(&reports).unwrap();
        for (j, name) in t.columns.iter().enumerate() {
            let k = names.iter().position(|n| n == name).unwrap();
            let mut best_idx: Option<usize> = None;
            for (i, vals) in cols.iter().enumerate() {
                if let Some(v) = vals[k] {
                    let better = match best_idx {
                        None => true,
                        Some(b) => {
                            let bv: f64 = cols[b][k].unwrap();
                            if name.lower_is_better() { v < bv } else { v > bv }
                        }
                    };
                    if better {
                        best_idx = Some(i);
                    }
                }
            }
            for (i, row) in t.rows.iter().enumerate() {
                let expect = best_idx.is_some_and(|b| cols[i][k] == cols[b][k]);
                prop_assert_eq!(row.cells[j].best, expect);
            }
        }
    }
}

#[test]
fn paired_images_from_directory_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let set = toy_set(3);
    let images = toy_images(&set);
    for (id, img) in &images {
        crate::io::write_latent(&dir.path().join(format!("{id}.npy")), img).unwrap();
    }
    assert_eq!(load_paired_images(dir.path(), &set).unwrap(), images);

    let manifest = PairingManifest {
        pairs: vec![
            PairingEntry {
                prompt_id: "p00".into(),
                image: "p01.npy".into(),
            },
            PairingEntry {
                prompt_id: "p01".into(),
                image: "p00.npy".into(),
            },
        ],
    };
    std::fs::write(
        dir.path().join(PairingManifest::FILE_NAME),
        serde_json::to_string(&manifest).unwrap(),
    )
    .unwrap();
    match load_paired_images(dir.path(), &set) {
        Err(Error::Consistency(msg)) => assert!(msg.contains("`p02`")),
        other => panic!("{other:?}"),
    }
    let two = PromptSet::from_prompts(DatasetName::Custom, set.prompts[..2].to_vec()).unwrap();
    let loaded = load_paired_images(dir.path(), &two).unwrap();
    assert_eq!(loaded["p00"], images["p01"]);
}
