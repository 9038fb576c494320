//! One test per acceptance criterion; each prints a single PASS/FAIL line.
//! Run with `cargo test -p dicl-core --test acceptance -- --nocapture` to see them.

use std::time::Instant;

use dicl_core::boundlab::{lemma_b2_check, theorem1_sweep, ModelPair, SweepConfig};
use dicl_core::dicl::{DiclConfig, DiclMethod, MethodKind};
use dicl_core::disentangle::{covariance_matrix, FeatureMap, PcaMap};
use dicl_core::envs::{PendulumEnv, PendulumParams, TabularPolicy};
use dicl_core::forecaster::{icl_forecast, ForecastBackendSpec, GaussianContext, NextValueDistribution, Positions};
use dicl_core::metrics::{default_grid, multistep_mse, reliability_diagram, CalibrationReport, RolloutPair};
use dicl_core::policyeval::{hybrid_value, oracle_method, HybridEvalSpec};
use dicl_core::rl::{
    actor_loss_grads, balancing_coefficient, critic_loss_grads, dicl_sac_train, llm_batch_size, mse_loss, q_network,
    sac_train, standard_normal, temperature_loss_grad, Actor, DiclSacConfig, Mlp, TrainingOutcome,
};
use dicl_core::stats::sign_test_p_value;
use dicl_core::tokenizer::{decode_series, encode_series, fit_rescale, NumericEncoding, SeriesRescale};
use dicl_core::trajdata::{ScalerPipeline, Trajectory};
use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

fn verdict(id: u8, name: &str, pass: bool, detail: String) {
    println!(
        "criterion {id:>2} [{name}]: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {id} [{name}] failed: {detail}");
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn criterion_01_tokenizer() {
    let start = Instant::now();
    let enc = NumericEncoding::default();
    let text = encode_series(&[1.5, 5.16, 8.5], &SeriesRescale::identity(&enc), &enc).text;

    let mut r = rng(1);
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..10_000 {
        let len = r.random_range(2..40);
        let scale = 10f64.powf(r.random_range(-3.0..3.0));
        let offset = r.random_range(-100.0..100.0);
        let series: Vec<f64> = (0..len).map(|_| offset + scale * r.random::<f64>()).collect();
        let rescale = fit_rescale(&series, &enc).unwrap();
        let decoded = decode_series(&encode_series(&series, &rescale, &enc).text, &rescale, &enc).unwrap();
        for (a, b) in series.iter().zip(&decoded) {
            worst_ratio = worst_ratio.max((a - b).abs() / (0.5 * rescale.bin_width()));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = text == "150,516,850" && worst_ratio <= 1.0 + 1e-9 && secs < 1.0;
    verdict(
        1,
        "tokenizer",
        pass,
        format!("text {text:?}, max error / half bin {worst_ratio:.6}, {secs:.3}s"),
    );
}

#[test]
fn criterion_02_theorem1_sweep() {
    let start = Instant::now();
    let cfg = SweepConfig::default();
    let cells = theorem1_sweep(&cfg).unwrap();
    let mut failures = 0;
    let mut min_slack = f64::INFINITY;
    for c in &cells {
        let r = &c.report;
        let rhs = 2.0 * cfg.gamma.powi(c.min_context as i32) / (1.0 - cfg.gamma)
            * cfg.r_max
            * (c.k * c.k) as f64
            * c.p
            * r.eps_llm;
        assert!((rhs - r.rhs).abs() <= 1e-12 * rhs.max(1.0), "rhs {} vs {rhs}", r.rhs);
        if r.lhs - 3.0 * r.stderr > rhs {
            failures += 1;
        }
        min_slack = min_slack.min(rhs - (r.lhs - 3.0 * r.stderr));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = cells.len() == 400 && failures == 0 && secs < 600.0;
    verdict(
        2,
        "theorem-1 sweep",
        pass,
        format!(
            "{} cells, {failures} violations, min slack {min_slack:.5}, {secs:.0}s",
            cells.len()
        ),
    );
}

/// `μ0 P^t` from the raw kernel rows, independent of the library's matrices.
fn marginals(mdp: &dicl_core::envs::TabularMdp, pi: &TabularPolicy, t_max: usize) -> Vec<Vec<f64>> {
    let n = mdp.n_states();
    let step = |d: &[f64]| {
        let mut out = vec![0.0; n];
        for (s, &ds) in d.iter().enumerate() {
            for a in 0..mdp.n_actions() {
                let w = ds * pi.prob(s, a);
                for (o, p) in out.iter_mut().zip(mdp.next_dist(s, a)) {
                    *o += w * p;
                }
            }
        }
        out
    };
    let mut out = vec![mdp.mu0().to_vec()];
    for t in 0..t_max {
        let next = step(&out[t]);
        out.push(next);
    }
    out
}

fn tv(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[test]
fn criterion_03_lemma_b2() {
    let start = Instant::now();
    let t_max = 30;
    let mut violations = 0;
    let mut max_dev: f64 = 0.0;
    for seed in 0..100u64 {
        let pair = ModelPair::random(5, 2, 0.9, 1.0, &mut rng(1000 + seed)).unwrap();
        let pi = TabularPolicy::random(5, 2, &mut rng(2000 + seed));
        let report = lemma_b2_check(&pair, &pi, pair.truth.mu0(), t_max).unwrap();

        let mp = marginals(&pair.truth, &pi, t_max);
        let mq = marginals(&pair.model, &pi, t_max);
        let one_step: Vec<f64> = (0..5)
            .map(|s| {
                let row = |m: &dicl_core::envs::TabularMdp| {
                    let mut out = vec![0.0; 5];
                    for a in 0..2 {
                        for (o, p) in out.iter_mut().zip(m.next_dist(s, a)) {
                            *o += pi.prob(s, a) * p;
                        }
                    }
                    out
                };
                tv(&row(&pair.truth), &row(&pair.model))
            })
            .collect();
        let mut cum = 0.0;
        for t in 0..=t_max {
            let eps = tv(&mp[t], &mq[t]);
            if t > 0 {
                cum += mp[t - 1].iter().zip(&one_step).map(|(d, v)| d * v).sum::<f64>();
            }
            max_dev = max_dev.max((eps - report.eps[t]).abs());
            if eps > cum + 1e-12 {
                violations += 1;
            }
        }
        if !report.holds {
            violations += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = violations == 0 && max_dev < 1e-12 && secs < 30.0;
    verdict(
        3,
        "lemma B.2",
        pass,
        format!("100 pairs, t <= {t_max}, {violations} violations, library/oracle gap {max_dev:.1e}, {secs:.2}s"),
    );
}

fn correlated_data(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    let mix = Array2::from_shape_fn((d, d), |_| r.sample::<f64, _>(StandardNormal));
    let z = Array2::from_shape_fn((n, d), |(_, j)| r.sample::<f64, _>(StandardNormal) * (1.0 + j as f64));
    z.dot(&mix) + 3.0
}

#[test]
fn criterion_04_pca() {
    let mut worst_offdiag: f64 = 0.0;
    let mut worst_full: f64 = 0.0;
    let mut worst_rel: f64 = 0.0;
    for seed in 0..50u64 {
        let d = 2 + (seed as usize % 5);
        let data = correlated_data(40 + 10 * seed as usize, d, seed);
        for standardize in [false, true] {
            let full = PcaMap::fit(data.view(), d, standardize).unwrap();
            let z = full.transform(data.view()).unwrap();
            let cov = covariance_matrix(z.view()).unwrap();
            for i in 0..d {
                for j in 0..d {
                    if i != j {
                        worst_offdiag = worst_offdiag.max(cov[[i, j]].abs());
                    }
                }
            }
            let rec = full.inverse(z.view()).unwrap();
            worst_full = worst_full.max((&rec - &data).iter().fold(0.0, |m, v| m.max(v.abs())));
        }
        let full = PcaMap::fit(data.view(), d, false).unwrap();
        let c = d / 2;
        let part = PcaMap::fit(data.view(), c, false).unwrap();
        let rec = part.inverse(part.transform(data.view()).unwrap().view()).unwrap();
        let n = data.nrows() as f64;
        let mse = (&rec - &data).mapv(|v| v * v).sum() / (n - 1.0);
        let discarded: f64 = full.explained_variance().iter().skip(c).sum();
        worst_rel = worst_rel.max((mse - discarded).abs() / discarded);
    }
    let pass = worst_offdiag < 1e-8 && worst_full < 1e-8 && worst_rel <= 1e-6;
    verdict(
        4,
        "PCA",
        pass,
        format!("off-diagonal {worst_offdiag:.1e}, c=d error {worst_full:.1e}, c<d relative gap {worst_rel:.1e}"),
    );
}

fn ar1(len: usize, phi: f64, r: &mut ChaCha8Rng) -> Vec<f64> {
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut x = noise.sample(r) / (1.0 - phi * phi).sqrt();
    (0..len)
        .map(|_| {
            let v = x;
            x = phi * x + noise.sample(r);
            v
        })
        .collect()
}

fn calibration_summary(report: &CalibrationReport) -> String {
    let worst = report
        .grid
        .iter()
        .zip(&report.frequencies)
        .map(|(&p, &f)| (f - p).abs() / report.band(p, 3.0))
        .fold(0.0, f64::max);
    format!("KS {:.4}, worst |freq - p| / 3-sigma band {worst:.2}", report.ks)
}

#[test]
fn criterion_05_calibration() {
    let n = 10_000;
    let enc = NumericEncoding::default();
    let backend = GaussianContext::new(GaussianContext::default_prior_weight()).unwrap();
    let mut r = rng(5);
    let mut dists: Vec<NextValueDistribution> = Vec::with_capacity(n);
    let mut ar_truths = Vec::with_capacity(n);
    for _ in 0..n {
        let series = ar1(301, 0.5, &mut r);
        let d = icl_forecast(&series[..300], &enc, &backend, &Positions::Last)
            .unwrap()
            .remove(0);
        dists.push(d);
        ar_truths.push(series[300]);
    }
    let grid = default_grid();
    let simulated: Vec<f64> = dists.iter().map(|d| d.sample(&mut r)).collect();
    let own = reliability_diagram(&dists, &simulated, &grid).unwrap();
    let ar = reliability_diagram(&dists, &ar_truths, &grid).unwrap();
    let pass = own.within_band(3.0) && own.ks < 0.03 && ar.within_band(3.0);
    verdict(
        5,
        "calibration",
        pass,
        format!(
            "own-distribution truths: {}; AR(1) truths: {}",
            calibration_summary(&own),
            calibration_summary(&ar)
        ),
    );
}

/// Latent rotation with period 12 plus an i.i.d. channel, mixed so that the
/// first two states correlate at 0.99.
fn correlated_linear_system(seed: u64, len: usize) -> Array2<f64> {
    let mut r = rng(seed);
    let theta0 = r.random::<f64>() * std::f64::consts::TAU;
    let step = std::f64::consts::TAU / 12.0;
    // var(z1) = 1/2, so mix² = 0.5·0.01/1.99 gives corr 0.99
    let mix = (0.5 * 0.01 / 1.99f64).sqrt();
    let mut states = Array2::zeros((len, 3));
    for t in 0..len {
        let th = theta0 + step * t as f64;
        let w: f64 = r.sample(StandardNormal);
        states[[t, 0]] = th.cos() + mix * w;
        states[[t, 1]] = th.cos() - mix * w;
        states[[t, 2]] = th.sin();
    }
    states
}

fn average_mse(kind: MethodKind, states: &Array2<f64>, context: usize, horizon: usize) -> f64 {
    let cfg = DiclConfig {
        backend: ForecastBackendSpec::MarkovBin { smoothing: 0.0 },
        ..DiclConfig::new(kind)
    };
    let method = DiclMethod::from_config(cfg).unwrap();
    let traj = Trajectory::from_states(states.clone()).unwrap();
    let out = method.rollout(&traj.slice(0..context).unwrap(), horizon, None).unwrap();
    let prediction = Array2::from_shape_fn((horizon, states.ncols()), |(i, j)| out[i].state()[j]);
    let truth = states.slice(s![context..context + horizon, ..]).to_owned();
    let scaler = ScalerPipeline::fit(states).unwrap();
    let horizons: Vec<usize> = (1..=horizon).collect();
    multistep_mse(&[RolloutPair { prediction, truth }], &scaler, &horizons)
        .unwrap()
        .average()
}

#[test]
fn criterion_06_disentangling() {
    let (context, horizon) = (200, 20);
    let mut wins = 0;
    let mut corr_range = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_v, mut sum_d) = (0.0, 0.0);
    for seed in 0..20u64 {
        let states = correlated_linear_system(seed, context + horizon);
        let c = dicl_core::disentangle::correlation_matrix(states.view()).unwrap()[[0, 1]];
        corr_range = (corr_range.0.min(c), corr_range.1.max(c));
        let v = average_mse(MethodKind::Vicl, &states, context, horizon);
        let d = average_mse(MethodKind::DiclS, &states, context, horizon);
        sum_v += v;
        sum_d += d;
        wins += (d < v) as usize;
    }
    let p = sign_test_p_value(wins, 20);
    let pass = p < 0.05 && wins > 10;
    verdict(
        6,
        "disentangling",
        pass,
        format!(
            "corr {:.4}..{:.4}, dicl_s better in {wins}/20, sign test p {p:.2e}, mean MSE vicl {:.4} dicl_s {:.4}",
            corr_range.0,
            corr_range.1,
            sum_v / 20.0,
            sum_d / 20.0
        ),
    );
}

fn log_bytes(o: &TrainingOutcome) -> Vec<u8> {
    let mut buf = Vec::new();
    o.write_log_csv(&mut buf).unwrap();
    buf
}

#[test]
fn criterion_07_identity_ablation() {
    let cfg = DiclSacConfig {
        total_steps: 1500,
        learning_starts: 300,
        llm_learning_starts: 300,
        llm_proportion: 0.0,
        hidden: vec![32, 32],
        ..DiclSacConfig::default()
    };
    let method = DiclMethod::from_config(DiclConfig::new(MethodKind::Vicl)).unwrap();
    let plain = sac_train(&mut PendulumEnv::new(PendulumParams::default()), &cfg).unwrap();
    let zero = dicl_sac_train(&mut PendulumEnv::new(PendulumParams::default()), &cfg, Some(&method)).unwrap();
    let identical = log_bytes(&plain) == log_bytes(&zero)
        && plain.agent.actor().net().flatten() == zero.agent.actor().net().flatten()
        && plain.episode_returns == zero.episode_returns;

    let sizes: Vec<usize> = [0.05, 0.10, 0.25].iter().map(|&a| llm_batch_size(a, 128)).collect();
    let coefficients_exact = (0..=64).all(|l| balancing_coefficient(l, 64) == l as f64 / 64.0)
        && sizes.iter().all(|&l| balancing_coefficient(l, 128) == l as f64 / 128.0);
    let pass = identical && sizes == [7, 13, 32] && coefficients_exact;
    verdict(
        7,
        "alpha=0 identity",
        pass,
        format!("bit-identical {identical}, batch sizes {sizes:?}, coefficient exact {coefficients_exact}"),
    );
}

#[test]
fn criterion_08_pendulum_training() {
    let cfg = DiclSacConfig::default();
    let start = Instant::now();
    let sac = sac_train(&mut PendulumEnv::new(PendulumParams::default()), &cfg).unwrap();
    let sac_secs = start.elapsed().as_secs_f64();

    let dicl_cfg = DiclSacConfig {
        llm_proportion: 0.05,
        ..cfg.clone()
    };
    let method = DiclMethod::from_config(DiclConfig {
        backend: ForecastBackendSpec::MarkovBin { smoothing: 0.0 },
        ..DiclConfig::new(MethodKind::Vicl)
    })
    .unwrap();
    let start = Instant::now();
    let dicl = dicl_sac_train(
        &mut PendulumEnv::new(PendulumParams::default()),
        &dicl_cfg,
        Some(&method),
    )
    .unwrap();
    let dicl_secs = start.elapsed().as_secs_f64();

    let sac_final = sac.final_mean_return(10).unwrap();
    let dicl_final = dicl.final_mean_return(10).unwrap();
    let early = |o: &TrainingOutcome| o.episode_returns.iter().take(20).sum::<f64>() / 20.0;
    let pass = sac_final > -400.0 && dicl_final > -400.0 && sac_secs + dicl_secs < 1800.0;
    verdict(
        8,
        "pendulum",
        pass,
        format!(
            "final 10-episode mean SAC {sac_final:.1} ({sac_secs:.0}s), DICL-SAC {dicl_final:.1} ({dicl_secs:.0}s, \
             {} generation rounds, {} failed); first-20-episode mean SAC {:.1} DICL-SAC {:.1}",
            dicl.generation_rounds,
            dicl.failed_rounds,
            early(&sac),
            early(&dicl)
        ),
    );
}

/// Largest relative error between `analytic` and central differences of `loss`.
fn fd_error<F: Fn(&Mlp) -> f64>(net: &Mlp, analytic: &[f64], loss: F) -> f64 {
    let h = 1e-6;
    let base = net.flatten();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let mut p = base.clone();
        p[i] = base[i] + h;
        probe.set_flat(&p).unwrap();
        let up = loss(&probe);
        p[i] = base[i] - h;
        probe.set_flat(&p).unwrap();
        let down = loss(&probe);
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0));
    }
    worst
}

#[test]
fn criterion_09_gradients() {
    let mut worst = [0.0f64; 4];
    for seed in 0..10u64 {
        let mut r = rng(900 + seed);
        let (obs_dim, act_dim, n) = (3, 2, 6);
        let obs = standard_normal(n, obs_dim, &mut r);
        let act = standard_normal(n, act_dim, &mut r).mapv(f64::tanh);
        let targets = Array1::from_shape_fn(n, |_| r.random_range(-2.0..2.0));

        let net = Mlp::new(&[obs_dim, 7, 5, 2], &mut r).unwrap();
        let y = standard_normal(n, 2, &mut r);
        let (out, cache) = net.forward_cached(obs.view()).unwrap();
        let (_, d_out) = mse_loss(out.view(), y.view());
        let g = net.backward(&cache, d_out.view()).0;
        let mse = |m: &Mlp| mse_loss(m.forward(obs.view()).unwrap().view(), y.view()).0;
        worst[0] = worst[0].max(fd_error(&net, &g.flatten(), mse));

        let q1 = q_network(obs_dim, act_dim, &[8, 6], &mut r).unwrap();
        let q2 = q_network(obs_dim, act_dim, &[8, 6], &mut r).unwrap();
        let (_, g1, g2) = critic_loss_grads(&q1, &q2, obs.view(), act.view(), targets.view()).unwrap();
        let c1 = |q: &Mlp| {
            critic_loss_grads(q, &q2, obs.view(), act.view(), targets.view())
                .unwrap()
                .0
        };
        let c2 = |q: &Mlp| {
            critic_loss_grads(&q1, q, obs.view(), act.view(), targets.view())
                .unwrap()
                .0
        };
        worst[1] = worst[1]
            .max(fd_error(&q1, &g1.flatten(), c1))
            .max(fd_error(&q2, &g2.flatten(), c2));

        let actor = Actor::new(obs_dim, &[-2.0, -1.0], &[2.0, 1.0], &[8, 6], &mut r).unwrap();
        let noise = standard_normal(n, act_dim, &mut r);
        let alpha = r.random_range(0.05..0.5);
        let (_, ga, _) = actor_loss_grads(&actor, &q1, &q2, obs.view(), noise.clone(), alpha).unwrap();
        let actor_loss = |net: &Mlp| {
            let mut a = actor.clone();
            *a.net_mut() = net.clone();
            actor_loss_grads(&a, &q1, &q2, obs.view(), noise.clone(), alpha)
                .unwrap()
                .0
        };
        worst[2] = worst[2].max(fd_error(actor.net(), &ga.flatten(), actor_loss));

        let (log_alpha, gap) = (r.random_range(-3.0..1.0), r.random_range(-2.0..2.0));
        let (_, analytic) = temperature_loss_grad(log_alpha, gap);
        let h = 1e-6;
        let numeric =
            (temperature_loss_grad(log_alpha + h, gap).0 - temperature_loss_grad(log_alpha - h, gap).0) / (2.0 * h);
        worst[3] = worst[3].max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0));
    }
    let pass = worst.iter().all(|&w| w < 1e-4);
    verdict(
        9,
        "gradients",
        pass,
        format!(
            "max relative error mse {:.1e}, critic {:.1e}, actor {:.1e}, temperature {:.1e}",
            worst[0], worst[1], worst[2], worst[3]
        ),
    );
}

fn synthetic_episode(len: usize, seed: u64) -> Trajectory {
    let mut r = rng(seed);
    let phase: f64 = r.random_range(0.0..6.0);
    let freq: f64 = r.random_range(0.05..0.4);
    let states = Array2::from_shape_fn((len, 2), |(t, j)| (t as f64 * freq + phase + j as f64).sin());
    let actions = Array2::from_shape_fn((len, 1), |(t, _)| (t as f64 * freq + phase).cos());
    let rewards = Array1::from_shape_fn(len, |t| -1.0 - (t as f64 * freq + phase).sin().powi(2));
    Trajectory::new(states, Some(actions), Some(rewards)).unwrap()
}

#[test]
fn criterion_10_hybrid_policy_evaluation() {
    let context = 500;
    let cfg = DiclConfig {
        include_reward: true,
        ..DiclConfig::new(MethodKind::Vicl)
    };
    let mut k0_exact = true;
    let mut worst_ratio: f64 = 0.0;
    for seed in 0..5u64 {
        let ep = synthetic_episode(1000, seed);
        let plain = DiclMethod::from_config(cfg.clone()).unwrap();
        let r0 = hybrid_value(&ep, &HybridEvalSpec::new(context, 0), &plain).unwrap();
        k0_exact &= r0.rel_err == Some(0.0);

        let (oracle, widths) = oracle_method(&ep, context, cfg.clone()).unwrap();
        let half_bin = 0.5 * widths.last().unwrap();
        for k in [1, 2, 5, 10, 50, 100, 250, 400, 500] {
            let r = hybrid_value(&ep, &HybridEvalSpec::new(context, k), &oracle).unwrap();
            let bound = k as f64 * half_bin / r.v_true.abs();
            worst_ratio = worst_ratio.max(r.rel_err.unwrap() / bound);
        }
    }
    let pass = k0_exact && worst_ratio <= 1.0 + 1e-9;
    verdict(
        10,
        "hybrid policy evaluation",
        pass,
        format!("k=0 exact {k0_exact}, max rel_err / quantization bound {worst_ratio:.4}"),
    );
}
