use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::*;
use crate::diffusion::{
    BackboneConfig, Denoiser, LatentImage, NoiseSchedule, ScheduleSpec, ToyBackbone,
    TrainableDenoiser,
};
use crate::error::{Error, Result};
use crate::prompt::Prompt;
use crate::rewards::{ChannelTargetReward, ConstantReward, DifferentiableReward};
use crate::util::rng_stream;
use rand::Rng;

fn prompts() -> Vec<Prompt> {
    [
        "a red book",
        "a yellow pen",
        "two cats on a sofa",
        "a blue car",
    ]
    .iter()
    .map(|t| Prompt::from_text(*t).unwrap())
    .collect()
}

fn setup(
    cfg: &ReFLConfig,
    seed: u64,
) -> (TrainState<ToyBackbone>, NoiseSchedule, ProceduralPretrain) {
    let bb = ToyBackbone::new(BackboneConfig::default()).unwrap();
    let sched = NoiseSchedule::new(&ScheduleSpec::default()).unwrap();
    let pre = ProceduralPretrain::new(
        PromptCycler::new(prompts(), seed).unwrap(),
        bb.latent_shape(),
        seed,
    );
    (
        TrainState::new(bb, cfg.learning_rate, cfg.momentum, seed),
        sched,
        pre,
    )
}

fn toy_cfg() -> ReFLConfig {
    ReFLConfig {
        lambda: 1.0,
        learning_rate: 1e-3,
        batch_size: 2,
        pretrain_batch_size: Some(2),
        max_iterations: 4,
        validation_interval: 2,
        ..Default::default()
    }
}

#[test]
fn zero_lambda_matches_pretrain_step_bitwise() {
    let cfg = ReFLConfig {
        lambda: 0.0,
        ..toy_cfg()
    };
    let (mut a, sched, pre) = setup(&cfg, 5);
    let mut b = a.clone();
    for it in 0..3 {
        let pairs = pre.batch(it, 2);
        refl_step(
            &mut a,
            &cfg,
            &sched,
            &ChannelTargetReward::default(),
            &prompts()[..2],
            &pairs,
        )
        .unwrap();
        pretrain_step(&mut b, &cfg, &sched, &pairs).unwrap();
        assert_eq!(a.model.params(), b.model.params());
        assert_eq!(a.optimizer, b.optimizer);
    }
    assert_eq!(a.iteration, 3);
}

#[test]
fn total_loss_gradient_matches_finite_differences() {
    let cfg = toy_cfg();
    let (state, sched, pre) = setup(&cfg, 11);
    let reward = ChannelTargetReward::default();
    let prep = prepare_step(
        &state.model,
        &sched,
        &cfg,
        11,
        0,
        &prompts()[..2],
        &pre.batch(0, 2),
    )
    .unwrap();
    let mut grads = vec![0.0; state.model.params().len()];
    loss_and_grad(&state.model, &sched, &cfg, &reward, &prep, Some(&mut grads)).unwrap();
    let mut rng = rng_stream(3, 3, 3);
    let segs = state.model.param_segments();
    for seg in segs.iter().take(8) {
        let i = seg.offset + rng.random_range(0..seg.len());
        let h = 1e-5;
        let eval = |d: f64| {
            let mut m = state.model.clone();
            m.params_mut()[i] += d;
            loss_and_grad(&m, &sched, &cfg, &reward, &prep, None)
                .unwrap()
                .l_total
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        let rel = (fd - grads[i]).abs() / fd.abs().max(grads[i].abs()).max(1e-8);
        assert!(
            rel <= 1e-4,
            "{} [{i}]: fd={fd} analytic={}",
            seg.name,
            grads[i]
        );
    }
}

#[test]
fn drawn_steps_are_uniform() {
    let cfg = ReFLConfig::default();
    let k = cfg.t_max() - cfg.t_min + 1;
    let mut counts = vec![0usize; k];
    let n = 10_000;
    for it in 0..n {
        let t = draw_t(&cfg, 17, it);
        assert!((cfg.t_min..=cfg.t_max()).contains(&t));
        counts[t - cfg.t_min] += 1;
    }
    let e = n as f64 / k as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    let p = 1.0 - ChiSquared::new((k - 1) as f64).unwrap().cdf(chi2);
    assert!(p > 0.01, "chi2={chi2} p={p}");
}

#[test]
fn only_the_step_t_evaluation_is_tracked() {
    let cfg = toy_cfg();
    let (state, sched, _) = setup(&cfg, 2);
    let reward = ChannelTargetReward::default();
    let mut losses = Vec::new();
    for seed in [1, 2, 3] {
        let prep = prepare_step(&state.model, &sched, &cfg, seed, 0, &prompts()[..3], &[]).unwrap();
        let parts = loss_and_grad(&state.model, &sched, &cfg, &reward, &prep, None).unwrap();
        assert_eq!(parts.tracked_evaluations, 3, "t = {}", prep.t);
        losses.push(parts.l_total);
    }
    assert!(losses[0] != losses[1] && losses[1] != losses[2]);
}

#[test]
fn reward_ascent_on_toy_backbone() {
    let cfg = ReFLConfig {
        lambda: 1.0,
        learning_rate: 1e-4,
        batch_size: 2,
        pretrain_batch_size: Some(1),
        ..Default::default()
    };
    let (mut state, sched, pre) = setup(&cfg, 42);
    let data = PromptCycler::new(prompts(), 42).unwrap();
    let reward = ChannelTargetReward::default();
    let mut means = Vec::new();
    for it in 0..200 {
        let m = refl_step(
            &mut state,
            &cfg,
            &sched,
            &reward,
            &data.batch(it, 2),
            &pre.batch(it, 1),
        )
        .unwrap();
        means.push(m.reward_mean.unwrap());
    }
    let first: f64 = means[..20].iter().sum::<f64>() / 20.0;
    let last: f64 = means[180..].iter().sum::<f64>() / 20.0;
    assert!(last - first >= 0.1, "first {first} last {last}");
}

struct FailingReward;

impl DifferentiableReward for FailingReward {
    fn name(&self) -> &str {
        "failing"
    }
    fn evaluate(&self, _: &Prompt, _: &LatentImage) -> Result<(f64, LatentImage)> {
        Err(Error::Client {
            client: "captioner".into(),
            attempts: 3,
            message: "timed out".into(),
        })
    }
}

#[test]
fn client_failure_skips_the_update() {
    let cfg = toy_cfg();
    let (mut state, sched, pre) = setup(&cfg, 1);
    let before = state.model.params().to_vec();
    let m = refl_step(
        &mut state,
        &cfg,
        &sched,
        &FailingReward,
        &prompts()[..1],
        &pre.batch(0, 1),
    )
    .unwrap();
    assert!(m.skipped.as_deref().unwrap().contains("timed out"));
    assert_eq!(state.model.params(), &before[..]);
    assert_eq!(state.iteration, 1);
}

#[test]
fn schedule_mismatch_is_a_config_error() {
    let cfg = ReFLConfig {
        steps: 40,
        t_max: Some(40),
        ..toy_cfg()
    };
    let (mut state, sched, _) = setup(&cfg, 1);
    let r = refl_step(
        &mut state,
        &cfg,
        &sched,
        &ConstantReward { value: 0.0 },
        &prompts(),
        &[],
    );
    assert!(matches!(r, Err(Error::Config { field, .. }) if field == "steps"));
}

fn run(
    cfg: &ReFLConfig,
    seed: u64,
    reward: &dyn DifferentiableReward,
) -> (TrainState<ToyBackbone>, TrainReport, Vec<Vec<u8>>) {
    let (mut state, sched, pre) = setup(cfg, seed);
    let data = PromptCycler::new(prompts(), seed).unwrap();
    let validation = prompts()[..2].to_vec();
    let inputs = TrainInputs {
        cfg,
        schedule: &sched,
        reward,
        dataset: &data,
        pretrain: &pre,
        validation: &validation,
        config_hash: crate::util::config_hash(cfg),
    };
    let mut saved = Vec::new();
    let spec = sched.spec().clone();
    let report = train(&mut state, &inputs, &mut |s| {
        saved.push(Checkpoint::from_state(s, &spec, &inputs.config_hash).to_bytes());
        Ok(())
    })
    .unwrap();
    (state, report, saved)
}

#[test]
fn zero_iterations_is_a_no_op() {
    let cfg = ReFLConfig {
        max_iterations: 0,
        ..toy_cfg()
    };
    let (fresh, _, _) = setup(&cfg, 8);
    let (state, report, saved) = run(&cfg, 8, &ChannelTargetReward::default());
    assert_eq!(state.model.params(), fresh.model.params());
    assert_eq!(state.iteration, 0);
    assert!(report.steps.is_empty() && saved.is_empty());
}

#[test]
fn constant_reward_stops_at_first_plateau() {
    let cfg = ReFLConfig {
        early_stop_patience: 1,
        max_iterations: 20,
        ..toy_cfg()
    };
    let (_, report, saved) = run(&cfg, 3, &ConstantReward { value: 0.25 });
    assert!(report.stopped_early);
    assert_eq!(report.validations.len(), 2);
    assert!(report.validations[0].improved && !report.validations[1].improved);
    assert_eq!(report.steps.len(), 4);
    assert_eq!(saved.len(), 1);
}

#[test]
fn training_is_deterministic_and_checkpoints_round_trip() {
    let cfg = toy_cfg();
    let (s1, r1, c1) = run(&cfg, 21, &ChannelTargetReward::default());
    let (_, r2, c2) = run(&cfg, 21, &ChannelTargetReward::default());
    assert_eq!(c1, c2);
    assert_eq!(r1.to_jsonl(), r2.to_jsonl());
    assert!(!c1.is_empty());

    let spec = ScheduleSpec::default();
    let bytes = Checkpoint::from_state(&s1, &spec, "abc").to_bytes();
    let back = Checkpoint::from_bytes(&bytes, "mem").unwrap();
    assert_eq!(back.to_bytes(), bytes);
    let state = back.to_state().unwrap();
    assert_eq!(state.model.params(), s1.model.params());
    assert_eq!(state.optimizer, s1.optimizer);
    assert_eq!(state.best_validation_reward, s1.best_validation_reward);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.bin");
    back.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert!(matches!(
        Checkpoint::from_bytes(&bytes[..bytes.len() - 3], "cut"),
        Err(Error::Parse { .. })
    ));
}

#[test]
fn report_lines_are_tagged() {
    let (_, report, _) = run(&toy_cfg(), 4, &ChannelTargetReward::default());
    let text = report.to_jsonl();
    let kinds: Vec<String> = text
        .lines()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["kind"]
                .as_str()
                .unwrap()
                .to_string()
        })
        .collect();
    assert_eq!(
        kinds,
        [
            "step",
            "step",
            "validation",
            "step",
            "step",
            "validation",
            "summary"
        ]
    );
    assert_eq!(report.timings.len(), 4);
    assert!(!text.contains("wall_ms"));
}
