mod common;

use common::{random_pair, random_params, random_task};
use scmcts_core::env::{candidate_actions, EnvConfig, ReasoningState, TaskIndex};
use scmcts_core::pipeline::{evaluate, run_variant, AblationVariant, RunConfig};
use scmcts_core::policy::{self_eval, step_feature, CheckpointTag, EvalPrompt, PolicyConfig, PolicyParams, Role};
use scmcts_core::prefopt::{dpo_loss_grad, train_round, DpoConfig};
use scmcts_core::optim::{Optimizer, OptimizerKind};
use scmcts_core::rng::SeededRng;
use scmcts_core::selfcorrect::{
    eval_examples, fit_eval_head, fit_logistic, generate_episode, run_stage1, Stage1Config, EVAL_RIDGE,
};
use scmcts_core::Error;


fn quick_stage1() -> Stage1Config {
    Stage1Config {
        iterations: 20,
        eval_refit_interval: 10,
        eval_fit_episodes: 64,
        ..Stage1Config::default()
    }
}

#[test]
fn dpo_loss_is_log_two_at_reference() {
    let mut rng = SeededRng::new(1).split("dpo-ref");
    for _ in 0..200 {
        let params = random_params(&mut rng, 1.0);
        let task = random_task(&mut rng, 2, 6);
        let pair = random_pair(&mut rng, &task, 4);
        let beta = 0.01 + 3.0 * rng.next_f64();
        let (loss, grad) = dpo_loss_grad(&params, &params, &pair, &task, beta).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(grad.iter().all(|g| g.is_finite()));
    }
}

#[test]
fn dpo_loss_ignores_shared_logit_shifts() {
    let mut rng = SeededRng::new(2).split("dpo-shift");
    for _ in 0..200 {
        let params = random_params(&mut rng, 1.0);
        let reference = random_params(&mut rng, 1.0);
        let task = random_task(&mut rng, 2, 6);
        let pair = random_pair(&mut rng, &task, 4);
        let (loss, _) = dpo_loss_grad(&params, &reference, &pair, &task, 0.5).unwrap();
        // The bias feature is 1 for every candidate, so its weight shifts all
        // logits together.
        let (mut p2, mut r2) = (params.clone(), reference.clone());
        p2.step_weights[step_feature::BIAS] += 10.0 * rng.next_f64() - 5.0;
        r2.step_weights[step_feature::BIAS] += 10.0 * rng.next_f64() - 5.0;
        let (shifted, _) = dpo_loss_grad(&p2, &r2, &pair, &task, 0.5).unwrap();
        assert!((loss - shifted).abs() < 1e-12);
    }
}

#[test]
fn train_round_lowers_loss_on_its_pairs() {
    let mut rng = SeededRng::new(3).split("round");
    let reference = random_params(&mut rng, 0.3);
    let mut index = TaskIndex::new();
    let pairs: Vec<_> = (0..48)
        .map(|_| {
            let task = random_task(&mut rng, 2, 4);
            index.insert(task.clone());
            random_pair(&mut rng, &task, 4)
        })
        .collect();
    let config = DpoConfig {
        learning_rate: 0.05,
        ..DpoConfig::default()
    };
    let loss = |p: &PolicyParams| -> f64 {
        pairs
            .iter()
            .map(|pair| dpo_loss_grad(p, &reference, pair, index.get(pair.task_id).unwrap(), config.beta).unwrap().0)
            .sum::<f64>()
    };
    let mut opt = Optimizer::new(OptimizerKind::Adam, config.learning_rate);
    let mut params = reference.clone();
    for _ in 0..5 {
        params = train_round(&params, &reference, &pairs, &index, &config, &mut opt).unwrap().params;
    }
    assert!(loss(&params) < loss(&reference));
}

#[test]
fn logistic_fit_separates_separable_data() {
    let mut rng = SeededRng::new(4);
    let examples: Vec<_> = (0..200)
        .map(|_| {
            let mut x = [0.0; 8];
            x[0] = 1.0;
            for v in x.iter_mut().skip(1) {
                *v = rng.next_f64();
            }
            let label = x[1] + 0.5 * x[2] > 0.8;
            (x, label)
        })
        .collect();
    let w = fit_logistic(&examples, EVAL_RIDGE).unwrap();
    let correct = examples
        .iter()
        .filter(|(x, y)| (x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() > 0.0) == *y)
        .count();
    assert!(correct as f64 / examples.len() as f64 > 0.97);
    let single: Vec<_> = examples.iter().map(|(x, _)| (*x, true)).collect();
    assert!(matches!(fit_logistic(&single, EVAL_RIDGE), Err(Error::DegenerateData(_))));
}

#[test]
fn eval_head_is_calibrated_on_held_out_episodes() {
    let mut rng = SeededRng::new(5).split("calibration");
    let params = PolicyParams::initial(7, &PolicyConfig::default());
    let config = Stage1Config::default();
    let mut batch = |n: usize| {
        let mut index = TaskIndex::new();
        let episodes: Vec<_> = (0..n)
            .map(|_| {
                let task = random_task(&mut rng, 2, 4);
                index.insert(task.clone());
                generate_episode(&params, &task, &config, 4, rng.next_u64()).unwrap()
            })
            .collect();
        (episodes, index)
    };
    let (train, train_index) = batch(256);
    let (held, held_index) = batch(256);
    let fitted = fit_eval_head(&params, &train, &train_index).unwrap();
    assert_eq!(fitted.step_weights, params.step_weights);

    let (mut good, mut bad) = (Vec::new(), Vec::new());
    for trace in &held {
        let task = held_index.get(trace.task_id).unwrap();
        for attempt in &trace.attempts {
            for d in 1..=attempt.steps.len() {
                let prefix = ReasoningState {
                    task_id: task.id(),
                    claimed: attempt.steps[..d].iter().map(|a| a.value).collect(),
                };
                let c = self_eval(&fitted, EvalPrompt::StepCheck, task, &prefix);
                if task.oracle_chain()[..d] == prefix.claimed[..] {
                    good.push(c);
                } else {
                    bad.push(c);
                }
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(!good.is_empty() && !bad.is_empty());
    assert!(mean(&good) > mean(&bad) + 0.2, "{} vs {}", mean(&good), mean(&bad));

    let examples = eval_examples(&held, &held_index).unwrap();
    assert!(examples.iter().any(|e| e.1) && examples.iter().any(|e| !e.1));
}

#[test]
fn stage1_leaves_the_fixed_model_alone() {
    let initial = PolicyParams::initial(3, &PolicyConfig::default());
    let checksum = initial.checksum();
    let out = run_stage1(&initial, &quick_stage1(), &EnvConfig::default(), 3).unwrap();
    assert_eq!(initial.checksum(), checksum);
    assert_eq!(out.metrics.len(), 20);
    assert_eq!(out.metrics[0].kl, 0.0);
    assert!(out.metrics.iter().all(|m| m.kl < 0.5));
    assert_ne!(out.params.step_weights, initial.step_weights);
}

#[test]
fn zero_iterations_only_fit_the_eval_head() {
    let initial = PolicyParams::initial(4, &PolicyConfig::default());
    let config = Stage1Config {
        iterations: 0,
        ..quick_stage1()
    };
    let out = run_stage1(&initial, &config, &EnvConfig::default(), 4).unwrap();
    assert!(out.metrics.is_empty());
    assert_eq!(out.params.step_weights, initial.step_weights);
    assert_ne!(out.params.eval_weights, initial.eval_weights);
}

#[test]
fn stage2_consumption_never_perturbs_stage1() {
    let mut config = RunConfig {
        selfcorrect: quick_stage1(),
        ..RunConfig::default()
    };
    config.prefopt.rounds = 2;
    config.prefopt.trees_per_round = 8;
    let heldout = config.benchmark().unwrap()[..20].to_vec();
    let isc = run_variant(&AblationVariant::IscOnly.apply(&config), 2, &heldout).unwrap();
    let mut more = AblationVariant::Ours.apply(&config);
    more.prefopt.trees_per_round = 24;
    let ours = run_variant(&more, 2, &heldout).unwrap();
    assert_eq!(isc.stage1, ours.stage1);
    assert!(isc.stage2.is_none() && ours.stage2.is_some());
}

#[test]
fn uniform_policy_scores_near_chance() {
    let uniform = PolicyParams::zeros(CheckpointTag {
        role: Role::Initial,
        seed: 0,
        revision: 0,
    });
    let mut accs = Vec::new();
    for benchmark_seed in 0..10 {
        let mut config = RunConfig::default();
        config.env.min_difficulty = 2;
        config.env.max_difficulty = 2;
        config.pipeline.benchmark_seed = benchmark_seed;
        let tasks = config.benchmark().unwrap();
        assert_eq!(candidate_actions(&tasks[0], &ReasoningState::root(tasks[0].id()), 4).unwrap().len(), 4);
        accs.push(evaluate(&uniform, &tasks, 4).unwrap());
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((mean - 0.25).abs() <= 0.02, "{accs:?}");
}
