use super::*;
use crate::data::synth_torus_target;
use crate::manifold::{FrameScheme, Manifold};
use crate::nn::{ScoreField, ScoreNet};
use crate::sde::{NoiseSchedule, ProcessKind};
use crate::util::TAU;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Time at which the schedule has integrated to `u`.
fn time_for(s: &NoiseSchedule, u: f64) -> f64 {
    let (a, b) = (s.beta_min, s.beta_max - s.beta_min);
    (-a + (a * a + 2.0 * b * u).sqrt()) / b
}

fn small_net(m: Manifold, scheme: FrameScheme, width: usize) -> NetworkSpec {
    NetworkSpec::new(m, scheme).unwrap().with_hidden(2, width).unwrap()
}

#[test]
fn adam_zero_gradients_keep_params() {
    let mut a = Adam::new(3, 0.9, 0.999);
    let mut p = vec![1.0, -2.0, 0.5];
    for _ in 0..100 {
        a.step(&mut p, &[0.0; 3], 0.1).unwrap();
    }
    assert_eq!(p, vec![1.0, -2.0, 0.5]);
    assert!(a.step(&mut p, &[0.0; 2], 0.1).is_err());
}

#[test]
fn adam_first_step_moves_by_lr() {
    let mut a = Adam::new(3, 0.9, 0.999);
    let mut p = vec![0.0; 3];
    a.step(&mut p, &[0.5, -3.0, 1e-3], 0.01).unwrap();
    for (v, s) in p.iter().zip([-1.0, 1.0, -1.0]) {
        assert!((v - s * 0.01).abs() < 1e-7, "{v}");
    }
}

#[test]
fn adam_minimises_quadratic() {
    let mut a = Adam::new(1, 0.9, 0.999);
    let mut w = vec![0.0];
    for _ in 0..500 {
        let g = 2.0 * (w[0] - 3.0);
        a.step(&mut w, &[g], 0.1).unwrap();
    }
    assert!((w[0] - 3.0).abs() < 1e-3, "{}", w[0]);
}

#[test]
fn learning_rate_schedule() {
    let cfg = TrainConfig { iters: 3000, warmup: 1000, learning_rate: 1.0, ..Default::default() };
    assert!((cfg.learning_rate_at(0) - 1e-3).abs() < 1e-15);
    assert!((cfg.learning_rate_at(499) - 0.5).abs() < 1e-15);
    assert!((cfg.learning_rate_at(1000) - 1.0).abs() < 1e-15);
    assert!((cfg.learning_rate_at(2000) - 0.5).abs() < 1e-12);
    assert!(cfg.learning_rate_at(2999) < 1e-5);
    let none = TrainConfig { warmup: 0, iters: 10, learning_rate: 1.0, ..Default::default() };
    assert_eq!(none.learning_rate_at(0), 1.0);
}

#[test]
fn zero_network_dsm_value() {
    let t1 = Manifold::Torus(1);
    let p = NoisingProcess::brownian(t1, NoiseSchedule::default()).unwrap();
    let t = time_for(&p.schedule, 0.1);
    assert!((p.schedule.u(t) - 0.1).abs() < 1e-12);
    // Varadhan target log_{0.2}(0) / 0.1 = -2
    let s = Sample::new(vec![0.0], t, vec![0.2]);
    let loss = LossSpec::new(LossKind::DsmVaradhan).with_weighting(Weighting::Unit);
    let target = dsm_target(&loss, &p, &s).unwrap().unwrap();
    assert!((target[0] + 2.0).abs() < 1e-12);
    let net = small_net(t1, FrameScheme::Coordinates, 4);
    let out = dsm_loss(&ParamVector::zeros(&net), &net, &loss, &p, &[s]).unwrap();
    assert!((out.value - 2.0).abs() < 1e-12);
    assert_eq!((out.used, out.dropped), (1, 0));
}

#[test]
fn zero_network_ism_value() {
    let s2 = Manifold::Sphere(2);
    let p = NoisingProcess::brownian(s2, NoiseSchedule::default()).unwrap();
    let net = small_net(s2, FrameScheme::Projected, 4);
    let batch = vec![Sample::new(vec![0.0, 0.0, 1.0], 0.5, vec![1.0, 0.0, 0.0])];
    for kind in [LossKind::IsmExact, LossKind::IsmHutchinson] {
        let mut b = batch.clone();
        b[0].probes = vec![vec![0.0, 1.0, 0.0]];
        let out = ism_loss(&ParamVector::zeros(&net), &net, &LossSpec::new(kind), &p, &b).unwrap();
        assert_eq!(out.value, 0.0);
    }
}

#[test]
fn cut_locus_items_are_dropped() {
    let s2 = Manifold::Sphere(2);
    let p = NoisingProcess::brownian(s2, NoiseSchedule::default()).unwrap();
    let net = small_net(s2, FrameScheme::Projected, 4);
    let params = ParamVector::init(&net, &mut rng(1));
    let loss = LossSpec::new(LossKind::DsmVaradhan);
    let good = Sample::new(vec![0.0, 0.0, 1.0], 0.3, vec![1.0, 0.0, 0.0]);
    let bad = Sample::new(vec![0.0, 0.0, 1.0], 0.3, vec![0.0, 0.0, -1.0]);
    let both = dsm_loss(&params, &net, &loss, &p, &[good.clone(), bad]).unwrap();
    let one = dsm_loss(&params, &net, &loss, &p, &[good]).unwrap();
    assert_eq!((both.used, both.dropped), (1, 1));
    assert_eq!(both.value, one.value);
    assert_eq!(both.grad, one.grad);
}

#[test]
fn exact_and_truncated_targets_agree_on_torus() {
    let t2 = Manifold::Torus(2);
    let p = NoisingProcess::brownian(t2, NoiseSchedule::default()).unwrap();
    let mut r = rng(2);
    for _ in 0..50 {
        let x0 = t2.sample_uniform(&mut r).unwrap();
        let t = r.gen_range(0.01..1.0);
        let xt = forward_sample(&p, &x0, t, 10, &mut r).unwrap();
        let s = Sample::new(x0, t, xt);
        let a = dsm_target(&LossSpec::new(LossKind::DsmExact), &p, &s).unwrap().unwrap();
        let b = dsm_target(&LossSpec::new(LossKind::DsmTruncated), &p, &s).unwrap().unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-8));
    }
}

#[test]
fn ou_exact_target() {
    let p = NoisingProcess::new(Manifold::Euclidean(1), ProcessKind::EuclideanOU, NoiseSchedule::default()).unwrap();
    let t = 0.4;
    let u = p.schedule.u(t);
    let s = Sample::new(vec![2.0], t, vec![0.5]);
    let target = dsm_target(&LossSpec::new(LossKind::DsmExact), &p, &s).unwrap().unwrap();
    let want = -(0.5 - 2.0 * (-u / 2.0).exp()) / (1.0 - (-u).exp());
    assert!((target[0] - want).abs() < 1e-12);
}

#[test]
fn segmented_target_uses_intermediate_point() {
    let t1 = Manifold::Torus(1);
    let p = NoisingProcess::brownian(t1, NoiseSchedule::default()).unwrap();
    let loss = LossSpec::new(LossKind::DsmVaradhanSegmented);
    let t = 0.8;
    let s = loss.segment_start(&p, t);
    assert!((s - (0.8 - loss.heat_kernel.tau)).abs() < 1e-15);
    assert_eq!(loss.segment_start(&p, 0.1), p.schedule.eps);
    let sample = Sample { xs: Some((s, vec![1.0])), ..Sample::new(vec![3.0], t, vec![1.1]) };
    let target = dsm_target(&loss, &p, &sample).unwrap().unwrap();
    let want = -0.1 / (p.schedule.u(t) - p.schedule.u(s));
    assert!((target[0] - want).abs() < 1e-12);
    assert!(dsm_target(&loss, &p, &Sample::new(vec![3.0], t, vec![1.1])).is_err());
}

#[test]
fn unit_weighting_only_changes_target_times() {
    let s2 = Manifold::Sphere(2);
    let a = NoisingProcess::brownian(s2, NoiseSchedule::new(0.1, 5.0).unwrap()).unwrap();
    let b = NoisingProcess::brownian(s2, NoiseSchedule::new(0.01, 20.0).unwrap()).unwrap();
    let loss = LossSpec::new(LossKind::DsmVaradhan).with_weighting(Weighting::Unit);
    let (x0, xt) = (vec![0.0, 0.0, 1.0], vec![0.6, 0.0, 0.8]);
    for u in [0.05, 0.3, 1.2] {
        let ta = time_for(&a.schedule, u);
        let tb = time_for(&b.schedule, u);
        let ya = dsm_target(&loss, &a, &Sample::new(x0.clone(), ta, xt.clone())).unwrap().unwrap();
        let yb = dsm_target(&loss, &b, &Sample::new(x0.clone(), tb, xt.clone())).unwrap().unwrap();
        assert!(ya.iter().zip(&yb).all(|(p, q)| (p - q).abs() < 1e-9 * p.abs().max(1.0)));
        assert_eq!(loss.weight(&a, ta), loss.weight(&b, tb));
    }
}

#[test]
fn loss_spec_validation() {
    let so3 = NoisingProcess::brownian(Manifold::SpecialOrthogonal, NoiseSchedule::default()).unwrap();
    assert!(LossSpec::new(LossKind::DsmTruncated).validate(&so3).is_err());
    assert!(LossSpec::new(LossKind::DsmExact).validate(&so3).is_err());
    assert!(LossSpec::new(LossKind::DsmVaradhan).validate(&so3).is_ok());
    let mut h = LossSpec::new(LossKind::IsmHutchinson);
    h.hutchinson_probes = 0;
    assert!(h.validate(&so3).is_err());
    assert_eq!(LossSpec::new(LossKind::IsmExact).weighting, Weighting::BetaT);
    assert_eq!(LossSpec::new(LossKind::DsmVaradhan).weighting, Weighting::VarProxy);
}

#[test]
fn batch_loss_matches_direct_evaluation() {
    let s2 = Manifold::Sphere(2);
    let p = NoisingProcess::brownian(s2, NoiseSchedule::default()).unwrap();
    let net = small_net(s2, FrameScheme::Projected, 8);
    let params = ParamVector::random(&net, 1.0, &mut rng(3));
    let sn = ScoreNet::new(net, params.clone()).unwrap();
    let mut r = rng(4);
    let batch: Vec<Sample> = (0..37)
        .map(|_| {
            let x0 = s2.sample_uniform(&mut r).unwrap();
            draw_sample(&x0, &p, &LossSpec::new(LossKind::DsmTruncated), 5, &mut r).unwrap()
        })
        .collect();
    for kind in [LossKind::DsmTruncated, LossKind::IsmExact] {
        let loss = LossSpec::new(kind);
        let got = batch_loss(&params, &net, &loss, &p, &batch).unwrap().value;
        let mut want = 0.0;
        for s in &batch {
            let score = sn.score(s.t, &s.xt).unwrap();
            let lam = loss.weight(&p, s.t);
            want += lam
                * if kind.is_dsm() {
                    let tgt = dsm_target(&loss, &p, s).unwrap().unwrap();
                    let d: Vec<f64> = score.iter().zip(&tgt).map(|(a, b)| a - b).collect();
                    0.5 * s2.inner(&s.xt, &d, &d)
                } else {
                    0.5 * s2.inner(&s.xt, &score, &score) + sn.divergence_exact(s.t, &s.xt).unwrap()
                };
        }
        want /= batch.len() as f64;
        assert!((got - want).abs() < 1e-10 * want.abs().max(1.0), "{kind:?}: {got} vs {want}");
    }
}

#[test]
fn dsm_ism_identity_on_circle() {
    // ½E‖s - ∇log p_{t|0}‖² = E[½‖s‖² + div s] + ½E‖∇log p_{t|0}‖²
    let t1 = Manifold::Torus(1);
    let p = NoisingProcess::brownian(t1, NoiseSchedule::default()).unwrap();
    let net = small_net(t1, FrameScheme::Coordinates, 16);
    let sn = ScoreNet::new(net, ParamVector::random(&net, 1.0, &mut rng(5))).unwrap();
    let target = synth_torus_target(1, 0.2, 1).unwrap();
    let loss = LossSpec::new(LossKind::DsmExact);
    let mut r = rng(6);
    for t in [0.1, 0.5] {
        let u = p.schedule.u(t);
        let n = 100_000;
        let diffs: Vec<f64> = (0..n)
            .map(|_| {
                let x0 = target.sample(&mut r);
                let z: f64 = r.sample(StandardNormal);
                let xt = vec![crate::util::wrap_angle(x0[0] + u.sqrt() * z)];
                let s = Sample::new(x0, t, xt);
                let g = dsm_target(&loss, &p, &s).unwrap().unwrap()[0];
                let v = sn.score(t, &s.xt).unwrap()[0];
                let div = sn.divergence_exact(t, &s.xt).unwrap();
                0.5 * (v - g).powi(2) - (0.5 * v * v + div) - 0.5 * g * g
            })
            .collect();
        let mean = diffs.iter().sum::<f64>() / n as f64;
        let se = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0) / n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "t = {t}: {mean} ± {se}");
    }
}

#[test]
fn hutchinson_loss_approaches_exact() {
    let s2 = Manifold::Sphere(2);
    let p = NoisingProcess::brownian(s2, NoiseSchedule::default()).unwrap();
    let net = small_net(s2, FrameScheme::Projected, 8);
    let params = ParamVector::random(&net, 1.0, &mut rng(7));
    let sn = ScoreNet::new(net, params.clone()).unwrap();
    let (t, xt) = (0.4, vec![0.48, 0.6, 0.64]);
    let k = 10_000;
    let mut r = rng(8);
    let basis = s2.tangent_basis(&xt);
    let probes: Vec<Vec<f64>> = (0..k).map(|_| draw_probe(&basis, Probe::Rademacher, &mut r)).collect();
    let sample = Sample { probes: probes.clone(), ..Sample::new(xt.clone(), t, xt.clone()) };
    let hutch = ism_loss(&params, &net, &LossSpec::new(LossKind::IsmHutchinson), &p, std::slice::from_ref(&sample)).unwrap();
    let exact = ism_loss(&params, &net, &LossSpec::new(LossKind::IsmExact), &p, &[sample]).unwrap();
    let lam = p.schedule.beta(t);
    let terms: Vec<f64> = probes.iter().map(|e| s2.inner(&xt, e, &sn.jvp(t, &xt, e).unwrap())).collect();
    let mean = terms.iter().sum::<f64>() / k as f64;
    let se = (terms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k as f64 - 1.0) / k as f64).sqrt();
    assert!((hutch.value - exact.value).abs() < 3.0 * lam * se + 1e-12, "{} vs {} (se {se})", hutch.value, exact.value);
}

#[test]
fn dsm_is_nonnegative() {
    let s2 = Manifold::Sphere(2);
    let p = NoisingProcess::brownian(s2, NoiseSchedule::default()).unwrap();
    let net = small_net(s2, FrameScheme::Projected, 8);
    let mut r = rng(9);
    for seed in 0..20 {
        let params = ParamVector::random(&net, 2.0, &mut rng(seed));
        let x0 = s2.sample_uniform(&mut r).unwrap();
        let batch: Vec<Sample> = (0..8).map(|_| draw_sample(&x0, &p, &LossSpec::new(LossKind::DsmVaradhan), 5, &mut r).unwrap()).collect();
        assert!(dsm_loss(&params, &net, &LossSpec::new(LossKind::DsmVaradhan), &p, &batch).unwrap().value >= 0.0);
    }
}

#[test]
fn small_step_decreases_frozen_batch_loss() {
    let t2 = Manifold::Torus(2);
    let p = NoisingProcess::brownian(t2, NoiseSchedule::default()).unwrap();
    let net = small_net(t2, FrameScheme::Coordinates, 16);
    let loss = LossSpec::new(LossKind::DsmExact);
    let target = synth_torus_target(2, 0.2, 3).unwrap();
    let mut r = rng(10);
    let batch: Vec<Sample> = (0..64).map(|_| draw_sample(&target.sample(&mut r), &p, &loss, 10, &mut r).unwrap()).collect();
    for seed in 0..5 {
        let mut params = ParamVector::random(&net, 1.0, &mut rng(100 + seed));
        let before = dsm_loss(&params, &net, &loss, &p, &batch).unwrap();
        let mut adam = Adam::new(params.len(), 0.9, 0.999);
        adam.step(&mut params.data, &before.grad, 1e-5).unwrap();
        let after = dsm_loss(&params, &net, &loss, &p, &batch).unwrap();
        assert!(after.value < before.value, "{} -> {}", before.value, after.value);
    }
}

#[test]
fn training_edge_cases_and_determinism() {
    let t2 = Manifold::Torus(2);
    let p = NoisingProcess::brownian(t2, NoiseSchedule::default()).unwrap();
    let net = small_net(t2, FrameScheme::Coordinates, 8);
    let target = synth_torus_target(2, 0.2, 4).unwrap();
    let mut r = rng(11);
    let data: Vec<Vec<f64>> = (0..100).map(|_| target.sample(&mut r)).collect();
    let loss = LossSpec::new(LossKind::DsmExact);
    let init = init_params(&net, 5);

    let zero = TrainConfig { iters: 0, ..Default::default() };
    let out = train(&data, &p, &net, init.clone(), &loss, &zero, |_, _| {}).unwrap();
    assert_eq!(out.params, init);
    assert!(out.trace.is_empty());

    let cfg = TrainConfig { iters: 20, batch_size: 32, warmup: 5, seed: 9, ..Default::default() };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| train(&data, &p, &net, init.clone(), &loss, &cfg, |_, _| {}).unwrap())
    };
    let (a, b) = (run(1), run(3));
    assert_eq!(a, b);
    assert_eq!(a.trace.len(), 20);
    assert_ne!(a.params, init);

    assert!(train(&[], &p, &net, init.clone(), &loss, &cfg, |_, _| {}).is_err());
    let bad_lr = TrainConfig { learning_rate: 0.0, ..cfg };
    assert!(train(&data, &p, &net, init.clone(), &loss, &bad_lr, |_, _| {}).is_err());
    let wrong = small_net(Manifold::Torus(1), FrameScheme::Coordinates, 8);
    assert!(train(&data, &p, &wrong, init_params(&wrong, 0), &loss, &cfg, |_, _| {}).is_err());
}

#[test]
fn every_loss_trains_without_error() {
    let s2 = Manifold::Sphere(2);
    let p = NoisingProcess::brownian(s2, NoiseSchedule::default()).unwrap();
    let net = small_net(s2, FrameScheme::Projected, 8);
    let mut r = rng(12);
    let data: Vec<Vec<f64>> = (0..20).map(|_| s2.sample_uniform(&mut r).unwrap()).collect();
    let cfg = TrainConfig { iters: 3, batch_size: 16, warmup: 1, ..Default::default() };
    for kind in [LossKind::DsmTruncated, LossKind::DsmVaradhan, LossKind::DsmVaradhanSegmented, LossKind::IsmExact, LossKind::IsmHutchinson]
    {
        let out = train(&data, &p, &net, init_params(&net, 1), &LossSpec::new(kind), &cfg, |_, _| {}).unwrap();
        assert!(out.trace.iter().all(|v| v.is_finite()), "{kind:?}");
    }
}

#[test]
fn smoke_training_reduces_loss() {
    let t2 = Manifold::Torus(2);
    let p = NoisingProcess::brownian(t2, NoiseSchedule::default()).unwrap();
    let net = NetworkSpec::new(t2, FrameScheme::Coordinates).unwrap().with_hidden(3, 64).unwrap();
    let target = synth_torus_target(2, 0.2, 0).unwrap();
    let mut r = rng(13);
    let data: Vec<Vec<f64>> = (0..2000).map(|_| target.sample(&mut r)).collect();
    let cfg = TrainConfig { iters: 2000, batch_size: 128, learning_rate: 1e-3, warmup: 100, ..Default::default() };
    let out = train(&data, &p, &net, init_params(&net, 0), &LossSpec::new(LossKind::DsmExact), &cfg, |_, _| {}).unwrap();
    let head = out.trace[..100].iter().sum::<f64>() / 100.0;
    let tail = out.trace[out.trace.len() - 100..].iter().sum::<f64>() / 100.0;
    assert!(tail < head, "{head} -> {tail}");
}

#[test]
fn config_application() {
    let kv =
        KeyValues::parse("iters = 7\nlr = 0.01\nbatch_size = 3\nloss = ism_hutchinson\nprobes = 4\nhk_tau = 0.1\nunrelated = x\n").unwrap();
    let mut cfg = TrainConfig::default();
    cfg.apply(&kv).unwrap();
    assert_eq!((cfg.iters, cfg.batch_size, cfg.learning_rate), (7, 3, 0.01));
    let mut loss = LossSpec::new(LossKind::DsmVaradhan);
    loss.apply(&kv).unwrap();
    assert_eq!(loss.kind, LossKind::IsmHutchinson);
    assert_eq!(loss.weighting, Weighting::BetaT);
    assert_eq!((loss.hutchinson_probes, loss.heat_kernel.tau), (4, 0.1));
    assert!(cfg.apply(&KeyValues::parse("batch_size = 0").unwrap()).is_err());
    assert!(cfg.apply(&KeyValues::parse("iters = many").unwrap()).is_err());
    assert!(loss.apply(&KeyValues::parse("loss = magic").unwrap()).is_err());
}

#[test]
fn trace_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.txt");
    let trace = vec![1.5, 0.25, -3.0e-7, TAU];
    write_trace(&path, &trace).unwrap();
    assert_eq!(read_trace(&path).unwrap(), trace);
    std::fs::write(&path, "0 1.0\n1\n").unwrap();
    assert!(read_trace(&path).is_err());
}
