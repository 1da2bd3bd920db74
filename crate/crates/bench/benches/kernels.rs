use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use rsgm_core::data::{mmd, MmdConfig};
use rsgm_core::heat_kernel::{hk_log_density, hk_score_truncated, HeatKernelConfig};
use rsgm_core::likelihood::{log_likelihood, OdeConfig};
use rsgm_core::nn::{NetworkSpec, ParamVector, ScoreField, ScoreNet};
use rsgm_core::sde::{grw_path, NoiseSchedule, NoisingProcess};
use rsgm_core::train::{batch_loss, draw_sample, LossKind, LossSpec};
use rsgm_core::{stream_rng, FrameScheme, Manifold};

const S2: Manifold = Manifold::Sphere(2);

fn geometry(c: &mut Criterion) {
    let mut rng = stream_rng(0, 0);
    let (x, y) = (S2.sample_uniform(&mut rng).unwrap(), S2.sample_uniform(&mut rng).unwrap());
    c.bench_function("sphere_exp_log", |b| b.iter(|| S2.exp_unchecked(&x, &S2.log(black_box(&x), black_box(&y)).unwrap())));
    let so3 = Manifold::SpecialOrthogonal;
    let (p, q) = (so3.sample_uniform(&mut rng).unwrap(), so3.sample_uniform(&mut rng).unwrap());
    c.bench_function("so3_log", |b| b.iter(|| so3.log(black_box(&p), black_box(&q))));
}

fn heat_kernel(c: &mut Criterion) {
    let x0 = [0.0, 0.0, 1.0];
    let x = [0.6, 0.0, 0.8];
    let cfg = HeatKernelConfig::truncated(30);
    c.bench_function("sphere_hk_log_density_j30", |b| b.iter(|| hk_log_density(&S2, &x0, black_box(&x), 0.1, &cfg)));
    c.bench_function("sphere_hk_score_j30", |b| b.iter(|| hk_score_truncated(&S2, &x0, black_box(&x), 0.1, &cfg)));
}

fn random_walk(c: &mut Criterion) {
    let x0 = vec![0.0, 0.0, 1.0];
    c.bench_function("grw_100_steps", |b| {
        b.iter_batched(
            || stream_rng(1, 0),
            |mut r| grw_path(&S2, &x0, |_, x| Ok(vec![0.0; x.len()]), |_| 1.0, 0.5, 100, &mut r),
            BatchSize::SmallInput,
        )
    });
}

fn network(c: &mut Criterion) {
    let spec = NetworkSpec::new(S2, FrameScheme::Projected).unwrap().with_hidden(3, 64).unwrap();
    let params = ParamVector::random(&spec, 0.5, &mut stream_rng(2, 0));
    let net = ScoreNet::new(spec, params.clone()).unwrap();
    let x = [0.6, 0.0, 0.8];
    c.bench_function("score_net_forward_w64", |b| b.iter(|| net.score(0.3, black_box(&x))));
    c.bench_function("score_net_divergence_w64", |b| b.iter(|| net.divergence_exact(0.3, black_box(&x))));

    let process = NoisingProcess::brownian(S2, NoiseSchedule::default()).unwrap();
    let loss = LossSpec::new(LossKind::DsmTruncated);
    let mut rng = stream_rng(3, 0);
    let batch: Vec<_> = (0..64)
        .map(|_| {
            let x0 = S2.sample_uniform(&mut rng).unwrap();
            draw_sample(&x0, &process, &loss, 10, &mut rng).unwrap()
        })
        .collect();
    c.bench_function("dsm_batch64_loss_and_grad_w64", |b| b.iter(|| batch_loss(&params, &spec, &loss, &process, black_box(&batch))));
}

fn metrics_and_ode(c: &mut Criterion) {
    let mut rng = stream_rng(4, 0);
    let a: Vec<Vec<f64>> = (0..500).map(|_| S2.sample_uniform(&mut rng).unwrap()).collect();
    let b: Vec<Vec<f64>> = (0..500).map(|_| S2.sample_uniform(&mut rng).unwrap()).collect();
    c.bench_function("mmd_500x500", |bch| bch.iter(|| mmd(&S2, &a, &b, &MmdConfig::default())));

    let spec = NetworkSpec::new(S2, FrameScheme::Projected).unwrap().with_hidden(2, 32).unwrap();
    let net = ScoreNet::new(spec, ParamVector::random(&spec, 0.5, &mut rng)).unwrap();
    let process = NoisingProcess::brownian(S2, NoiseSchedule::default()).unwrap();
    let mut g = c.benchmark_group("ode");
    g.sample_size(20);
    g.bench_function("log_likelihood_w32", |bch| bch.iter(|| log_likelihood(&process, &net, black_box(&a[0]), &OdeConfig::default())));
    g.finish();
}

criterion_group!(benches, geometry, heat_kernel, random_walk, network, metrics_and_ode);
criterion_main!(benches);
