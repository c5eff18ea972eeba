mod common;

use common::*;
use semalign_core::eval::EvalReport;
use semalign_core::io::{read_latent, write_latent};
use semalign_core::LatentImage;

const PROMPT: &str = "a red book and a yellow pen";

#[test]
fn finetune_zero_iterations_keeps_the_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "toy.toml", TOY_CONFIG);
    let cfg = cfg.to_str().unwrap();
    let first = ok(&semalign(
        tmp.path(),
        &[
            "--stub-clients",
            "--config",
            cfg,
            "finetune",
            "--max-iterations",
            "0",
        ],
    ));
    let ckpt = first.join("final.ckpt");
    let again = ok(&semalign(
        tmp.path(),
        &[
            "--stub-clients",
            "--config",
            cfg,
            "finetune",
            "--max-iterations",
            "0",
            "--checkpoint",
            ckpt.to_str().unwrap(),
        ],
    ));
    assert_eq!(read(&ckpt), read(again.join("final.ckpt")));
}

#[test]
fn finetune_negative_lambda_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", "[refl]\nlambda = -0.5\n");
    let o = semalign(tmp.path(), &["--config", cfg.to_str().unwrap(), "finetune"]);
    assert_eq!(o.code, 3, "{}", o.stderr);
    assert!(o.stderr.contains("`lambda`"), "{}", o.stderr);
    let rec = last_record(tmp.path()).unwrap();
    assert_eq!(rec["exit_code"], 3);
}

#[test]
fn refine_reports_worked_example_scores() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = ok(&semalign(
        tmp.path(),
        &["--stub-clients", "refine", "--prompt", PROMPT],
    ));
    let report: serde_json::Value =
        serde_json::from_slice(&read(dir.join("annotations.json"))).unwrap();
    let scores: Vec<(String, f64)> = serde_json::from_value(report["scores"].clone()).unwrap();
    let expect = [
        ("banana", 0.0),
        ("book", 2.0),
        ("desk", 0.5),
        ("pen", 2.0),
        ("sign", 0.0),
    ];
    assert_eq!(scores.len(), expect.len());
    for ((tag, s), (etag, es)) in scores.iter().zip(expect) {
        assert_eq!((tag.as_str(), *s), (etag, es));
    }
    assert!(report["skipped"].is_null());
    for sub in [
        "traces/before/manifest.json",
        "traces/after/manifest.json",
        "coarse.npy",
        "refined.npy",
        "grid.png",
    ] {
        assert!(dir.join(sub).exists(), "{sub}");
    }
    let rec = last_record(tmp.path()).unwrap();
    assert!(rec["annotations_digest"].is_string());
}

#[test]
fn refine_without_modulation_reproduces_the_coarse_image() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = ok(&semalign(
        tmp.path(),
        &[
            "--stub-clients",
            "refine",
            "--prompt",
            PROMPT,
            "--lambda-0",
            "0",
        ],
    ));
    assert_eq!(read(dir.join("coarse.npy")), read(dir.join("refined.npy")));
}

#[test]
fn refine_with_nothing_to_modulate_says_so() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.toml",
        "[stubs]\nextra_tags = []\nempty_mask_tags = [\"book\", \"pen\"]\n",
    );
    let o = semalign(
        tmp.path(),
        &[
            "--stub-clients",
            "--config",
            cfg.to_str().unwrap(),
            "refine",
            "--prompt",
            PROMPT,
        ],
    );
    let dir = ok(&o);
    assert!(
        o.stdout.contains("notice: refinement skipped"),
        "{}",
        o.stdout
    );
    assert_eq!(read(dir.join("coarse.npy")), read(dir.join("refined.npy")));
}

#[test]
fn refine_an_existing_image() {
    let tmp = tempfile::tempdir().unwrap();
    let gen = ok(&semalign(
        tmp.path(),
        &["--stub-clients", "generate", "--prompt", PROMPT],
    ));
    let listing: serde_json::Value =
        serde_json::from_slice(&read(gen.join("generate.json"))).unwrap();
    let image = gen.join(listing[0]["image"].as_str().unwrap());
    let from_file = ok(&semalign(
        tmp.path(),
        &[
            "--stub-clients",
            "refine",
            "--prompt",
            PROMPT,
            "--image",
            image.to_str().unwrap(),
        ],
    ));
    let direct = ok(&semalign(
        tmp.path(),
        &["--stub-clients", "refine", "--prompt", PROMPT],
    ));
    assert_eq!(read(from_file.join("coarse.npy")), read(&image));
    assert_eq!(
        read(from_file.join("refined.npy")),
        read(direct.join("refined.npy"))
    );
}

#[test]
fn score_caption_with_echo_captioner_is_one() {
    let tmp = tempfile::tempdir().unwrap();
    let o = semalign(
        tmp.path(),
        &[
            "--stub-clients",
            "score",
            "--prompt",
            PROMPT,
            "--reward",
            "caption",
        ],
    );
    ok(&o);
    assert!(
        o.stdout.contains("reward caption: 1.000000"),
        "{}",
        o.stdout
    );
    assert!(o.stdout.contains(&format!("caption: {PROMPT}")));
}

#[test]
fn score_fixture_embeddings_give_inverse_sqrt_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.toml",
        r#"
        [stubs]
        captioner = { fixed = "a red book" }
        [stubs.encoder_table]
        "a red book" = [1.0, 1.0, 0.0]
        "a red book and a yellow pen" = [1.0, 0.0, 0.0]
        "#,
    );
    let dir = ok(&semalign(
        tmp.path(),
        &[
            "--stub-clients",
            "--config",
            cfg.to_str().unwrap(),
            "score",
            "--prompt",
            PROMPT,
            "--reward",
            "caption",
        ],
    ));
    let score: serde_json::Value = serde_json::from_slice(&read(dir.join("score.json"))).unwrap();
    let v = score["value"].as_f64().unwrap();
    assert!((v - 1.0 / 2f64.sqrt()).abs() < 1e-6, "{v}");
}

#[test]
fn unknown_reward_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = semalign(
        tmp.path(),
        &[
            "--stub-clients",
            "score",
            "--prompt",
            PROMPT,
            "--reward",
            "aesthetic",
        ],
    );
    assert_eq!(o.code, 2);
    for name in ["caption", "clip", "blip", "imagereward"] {
        assert!(o.stderr.contains(name), "{}", o.stderr);
    }
}

#[test]
fn image_text_rewards_score_in_range() {
    let tmp = tempfile::tempdir().unwrap();
    for reward in ["clip", "blip", "imagereward"] {
        let dir = ok(&semalign(
            tmp.path(),
            &[
                "--stub-clients",
                "score",
                "--prompt",
                PROMPT,
                "--reward",
                reward,
            ],
        ));
        let score: serde_json::Value =
            serde_json::from_slice(&read(dir.join("score.json"))).unwrap();
        assert_eq!(score["reward_name"], reward);
        assert!(score["value"].as_f64().unwrap().abs() <= 1.0);
    }
}

fn generated_set(tmp: &std::path::Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let prompts = tmp.join("prompts.txt");
    std::fs::write(
        &prompts,
        "a red car and a pink elephant\na cat on a mat\na blue bird on a branch\na green apple\n",
    )
    .unwrap();
    let gen = ok(&semalign(
        tmp,
        &[
            "--stub-clients",
            "generate",
            "--prompts",
            prompts.to_str().unwrap(),
        ],
    ));
    (prompts, gen.join("images"))
}

#[test]
fn eval_with_stub_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let (prompts, images) = generated_set(tmp.path());
    let dir = ok(&semalign(
        tmp.path(),
        &[
            "--stub-clients",
            "eval",
            "--images",
            images.to_str().unwrap(),
            "--prompts",
            prompts.to_str().unwrap(),
        ],
    ));
    let report: EvalReport = serde_json::from_slice(&read(dir.join("eval_report.json"))).unwrap();
    assert_eq!(report.counts.prompts, 4);
    assert_eq!(report.metrics.len(), 3);
    assert!(report.metrics.iter().all(|m| m.value.is_some()));
    assert_eq!(report.recompute(), report.metrics);
    assert!(dir.join("eval_table.txt").exists());
}

#[test]
fn eval_metrics_none_reports_counts_and_timings() {
    let tmp = tempfile::tempdir().unwrap();
    let (prompts, images) = generated_set(tmp.path());
    let dir = ok(&semalign(
        tmp.path(),
        &[
            "eval",
            "--images",
            images.to_str().unwrap(),
            "--prompts",
            prompts.to_str().unwrap(),
            "--metrics",
            "none",
        ],
    ));
    let report: EvalReport = serde_json::from_slice(&read(dir.join("eval_report.json"))).unwrap();
    assert!(report.metrics.is_empty());
    assert_eq!(report.counts.images, 4);
    assert!(report.timings.is_none());
    assert!(last_record(tmp.path()).unwrap()["eval_ms"]
        .as_f64()
        .is_some());
}

#[test]
fn eval_missing_pairing_names_the_prompt() {
    let tmp = tempfile::tempdir().unwrap();
    let (prompts, images) = generated_set(tmp.path());
    let mut text = std::fs::read_to_string(&prompts).unwrap();
    text.push_str("an orange fox\n");
    std::fs::write(&prompts, text).unwrap();
    let missing = semalign_core::Prompt::from_text("an orange fox")
        .unwrap()
        .id;
    let o = semalign(
        tmp.path(),
        &[
            "--stub-clients",
            "eval",
            "--images",
            images.to_str().unwrap(),
            "--prompts",
            prompts.to_str().unwrap(),
        ],
    );
    assert_eq!(o.code, 7, "{}", o.stderr);
    assert!(o.stderr.contains(&format!("`{missing}`")), "{}", o.stderr);
}

#[test]
fn compare_two_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let (prompts, images) = generated_set(tmp.path());
    let args = [
        "--stub-clients",
        "eval",
        "--images",
        images.to_str().unwrap(),
        "--prompts",
        prompts.to_str().unwrap(),
    ];
    let a = ok(&semalign(tmp.path(), &args)).join("eval_report.json");
    let b = ok(&semalign(tmp.path(), &args)).join("eval_report.json");
    let o = semalign(
        tmp.path(),
        &[
            "compare",
            "--report",
            &format!("a={}", a.display()),
            "--report",
            &format!("b={}", b.display()),
        ],
    );
    let dir = ok(&o);
    assert!(o.stdout.contains("clip_score"));
    assert!(dir.join("comparison.json").exists());
}

#[test]
fn exit_codes_by_failure_class() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();

    // configuration
    let o = semalign(t, &["score", "--prompt", PROMPT, "--reward", "caption"]);
    assert_eq!(o.code, 3, "{}", o.stderr);
    assert!(o.stderr.contains("clients.captioner"));

    // client: configured program does not exist
    let cfg = write_config(
        t,
        "client.toml",
        "[clients.scorer]\nid = \"gone\"\nprogram = \"/nonexistent/scorer\"\n[clients.scorer.retry]\nmax_attempts = 1\n",
    );
    let img = t.join("img.npy");
    write_latent(&img, &LatentImage::filled([4, 8, 8], 0.5)).unwrap();
    let o = semalign(
        t,
        &[
            "--config",
            cfg.to_str().unwrap(),
            "score",
            "--prompt",
            PROMPT,
            "--reward",
            "clip",
            "--image",
            img.to_str().unwrap(),
        ],
    );
    assert_eq!(o.code, 4, "{}", o.stderr);

    // numeric: non-finite input image
    let nan = t.join("nan.npy");
    let mut data = flat_image();
    data[3] = f64::NAN;
    std::fs::write(&nan, semalign_core::io::encode_npy(&[4, 8, 8], data)).unwrap();
    let o = semalign(
        t,
        &[
            "--stub-clients",
            "score",
            "--prompt",
            PROMPT,
            "--reward",
            "caption",
            "--image",
            nan.to_str().unwrap(),
        ],
    );
    assert_eq!(o.code, 5, "{}", o.stderr);

    // I/O
    let o = semalign(
        t,
        &[
            "--stub-clients",
            "score",
            "--prompt",
            PROMPT,
            "--reward",
            "caption",
            "--image",
            t.join("absent.npy").to_str().unwrap(),
        ],
    );
    assert_eq!(o.code, 6, "{}", o.stderr);

    // data: an image paired with nothing on disk
    let prompts = write_config(t, "p.txt", "a lonely prompt\n");
    let empty = t.join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let o = semalign(
        t,
        &[
            "eval",
            "--images",
            empty.to_str().unwrap(),
            "--prompts",
            prompts.to_str().unwrap(),
            "--metrics",
            "none",
        ],
    );
    assert_eq!(o.code, 7, "{}", o.stderr);

    // one record per invocation, failures included
    assert_eq!(records(t).len(), 5);
    assert_eq!(
        read_latent(&img).unwrap(),
        LatentImage::filled([4, 8, 8], 0.5)
    );
}

fn flat_image() -> Vec<f64> {
    vec![0.25; 4 * 8 * 8]
}

#[test]
fn eval_matches_golden_report() {
    let tmp = tempfile::tempdir().unwrap();
    let fixtures = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let prompts = fixtures.join("golden_prompts.txt");
    let gen = ok(&semalign(
        tmp.path(),
        &[
            "--stub-clients",
            "generate",
            "--prompts",
            prompts.to_str().unwrap(),
        ],
    ));
    let dir = ok(&semalign(
        tmp.path(),
        &[
            "--stub-clients",
            "eval",
            "--images",
            gen.join("images").to_str().unwrap(),
            "--prompts",
            prompts.to_str().unwrap(),
        ],
    ));
    let got: EvalReport = serde_json::from_slice(&read(dir.join("eval_report.json"))).unwrap();
    let golden: EvalReport =
        serde_json::from_slice(&read(fixtures.join("eval_golden.json"))).unwrap();
    assert_eq!(got.without_timings(), golden);
}
