use super::*;
use crate::manifold::tests::{random_point, random_tangent};
use crate::quadrature::sphere_grid;
use crate::util::{dot, norm, sub};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn configs() -> Vec<(Manifold, FrameScheme)> {
    vec![
        (Manifold::Sphere(2), FrameScheme::Projected),
        (Manifold::Torus(2), FrameScheme::Coordinates),
        (Manifold::Torus(1), FrameScheme::LieFrame),
        (Manifold::SpecialOrthogonal, FrameScheme::LieFrame),
        (Manifold::SpecialOrthogonal, FrameScheme::Projected),
        (Manifold::Hyperbolic(2), FrameScheme::Projected),
        (Manifold::Hyperbolic(2), FrameScheme::Coordinates),
        (Manifold::Euclidean(2), FrameScheme::Projected),
    ]
}

fn small_net(m: Manifold, scheme: FrameScheme, layers: usize, width: usize, seed: u64) -> ScoreNet {
    let spec = NetworkSpec::new(m, scheme).unwrap().with_hidden(layers, width).unwrap();
    let params = ParamVector::random(&spec, 1.5, &mut rng(seed));
    ScoreNet::new(spec, params).unwrap()
}

#[test]
fn spec_shapes() {
    let spec = NetworkSpec::new(Manifold::Sphere(2), FrameScheme::Projected).unwrap();
    assert_eq!(spec.hidden_layers, 3);
    assert_eq!(spec.hidden_width, 512);
    assert_eq!(spec.input_dim(), 12);
    assert_eq!(spec.output_dim(), 3);
    assert_eq!(spec.layer_shapes(), vec![(512, 12), (512, 512), (512, 512), (3, 512)]);
    let t = NetworkSpec::new(Manifold::Torus(2), FrameScheme::Coordinates).unwrap();
    assert_eq!(t.input_dim(), 13);
    assert_eq!(t.output_dim(), 2);
    assert_eq!(NetworkSpec::new(Manifold::SpecialOrthogonal, FrameScheme::LieFrame).unwrap().output_dim(), 3);
    assert!(spec.with_hidden(0, 8).is_err());
    assert!(NetworkSpec::new(Manifold::Sphere(2), FrameScheme::LieFrame).is_err());
    let p = ParamVector::zeros(&spec);
    assert_eq!(p.len(), spec.num_params());
    assert_eq!(p.layout.last().unwrap().end(), p.len());
}

#[test]
fn spec_hash_distinguishes_architectures() {
    let a = NetworkSpec::new(Manifold::Sphere(2), FrameScheme::Projected).unwrap();
    let b = a.with_hidden(3, 256).unwrap();
    assert_ne!(a.hash(), b.hash());
    assert_eq!(a.hash(), a.clone().hash());
    assert_eq!(a.hash_hex().len(), 64);
}

#[test]
fn time_features() {
    let spec = NetworkSpec::new(Manifold::Sphere(2), FrameScheme::Projected).unwrap();
    let f = spec.features(0.25, &[0.0, 0.6, 0.8]);
    assert_eq!(f.len(), 12);
    assert_eq!(f[0], 0.25);
    assert!((f[1] - (PI / 4.0).sin()).abs() < 1e-15);
    assert!((f[8] - (2.0 * PI).cos()).abs() < 1e-15);
    assert_eq!(&f[9..], &[0.0, 0.6, 0.8]);
    // torus features do not see the chart seam
    let t = NetworkSpec::new(Manifold::Torus(1), FrameScheme::LieFrame).unwrap();
    let a = t.features(0.5, &[1e-12]);
    let b = t.features(0.5, &[2.0 * PI - 1e-12]);
    assert!(norm(&sub(&a, &b)) < 1e-11);
}

#[test]
fn init_zeroes_output_layer() {
    let spec = NetworkSpec::new(Manifold::Sphere(2), FrameScheme::Projected).unwrap().with_hidden(3, 32).unwrap();
    let p = ParamVector::init(&spec, &mut rng(1));
    let last = *p.layout.last().unwrap();
    assert!(p.data[last.offset..last.end()].iter().all(|v| *v == 0.0));
    for l in &p.layout[..3] {
        let a = (6.0 / l.cols as f64).sqrt();
        assert!(p.data[l.offset..l.end()].iter().all(|v| v.abs() <= a));
        assert!(p.data[l.offset..l.end()].iter().any(|v| *v != 0.0));
    }
    let net = ScoreNet::new(spec, p).unwrap();
    let s = net.score(0.4, &[0.0, 0.6, 0.8]).unwrap();
    assert_eq!(s, vec![0.0; 3]);
}

#[test]
fn zero_params_give_zero_everything() {
    let mut r = rng(2);
    for (m, scheme) in configs() {
        let net = ScoreNet::zeros(NetworkSpec::new(m, scheme).unwrap().with_hidden(2, 8).unwrap());
        let x = random_point(&m, &mut r);
        let v = random_tangent(&m, &x, 1.0, &mut r);
        assert!(net.score(0.3, &x).unwrap().iter().all(|c| *c == 0.0));
        assert!(net.jvp(0.3, &x, &v).unwrap().iter().all(|c| *c == 0.0));
        assert_eq!(net.divergence_exact(0.3, &x).unwrap(), 0.0);
        assert_eq!(divergence_hutchinson(&net, 0.3, &x, 5, Probe::Rademacher, &mut r).unwrap(), 0.0);
    }
}

#[test]
fn score_is_tangent_and_deterministic() {
    let mut r = rng(3);
    for (m, scheme) in configs() {
        let net = small_net(m, scheme, 2, 16, 7);
        for _ in 0..1000 / configs().len() {
            let x = random_point(&m, &mut r);
            let t: f64 = r.gen();
            let s = net.score(t, &x).unwrap();
            let residual = norm(&sub(&m.project(&x, &s), &s));
            assert!(residual < 1e-10 * (1.0 + norm(&s)), "{m}/{scheme}: {residual}");
            assert_eq!(s, net.score(t, &x).unwrap());
        }
    }
}

#[test]
fn jvp_matches_retracted_differences() {
    let mut r = rng(4);
    for (m, scheme) in configs() {
        let net = small_net(m, scheme, 2, 16, 11);
        for _ in 0..30 {
            let x = random_point(&m, &mut r);
            let v = random_tangent(&m, &x, 1.0, &mut r);
            let t: f64 = r.gen();
            let h = 1e-5;
            let xp = m.project_point(&m.exp_unchecked(&x, &crate::util::scale(&v, h)));
            let xm = m.project_point(&m.exp_unchecked(&x, &crate::util::scale(&v, -h)));
            let fd = crate::util::scale(&sub(&net.score(t, &xp).unwrap(), &net.score(t, &xm).unwrap()), 0.5 / h);
            let an = net.jvp(t, &x, &v).unwrap();
            let err = norm(&sub(&fd, &an)) / norm(&an).max(1e-3);
            assert!(err < 1e-3, "{m}/{scheme}: rel err {err}");
        }
        let x = random_point(&m, &mut r);
        assert!(net.jvp(0.2, &x, &vec![0.0; x.len()]).unwrap().iter().all(|c| *c == 0.0));
    }
}

#[test]
fn tape_matches_direct_evaluation() {
    let mut r = rng(5);
    for (m, scheme) in configs() {
        let net = small_net(m, scheme, 3, 8, 13);
        let x = random_point(&m, &mut r);
        let basis = m.tangent_basis(&x);
        let (s, jv) = net.score_with_jvps(0.6, &x, &basis).unwrap();
        let mut tape = Tape::new(&net.params);
        let rec = record_score(&net.spec, &mut tape, 0.6, &x, &basis).unwrap();
        assert!(norm(&sub(tape.value(rec.score), &s)) < 1e-13);
        for (a, b) in rec.jvps.iter().zip(&jv) {
            assert!(norm(&sub(tape.value(*a), b)) < 1e-13);
        }
    }
}

#[test]
fn single_weight_quadratic() {
    let params = ParamVector { data: vec![0.5, 0.0], layout: vec![LayerSlice { offset: 0, rows: 1, cols: 1 }] };
    let (v, g) = loss_grad(&params, |tape| {
        let one = tape.leaf(vec![1.0]);
        let w = tape.affine(0, one);
        let three = tape.leaf(vec![3.0]);
        let d = tape.sub(w, three);
        Ok(tape.dot(d, d, None))
    })
    .unwrap();
    assert_eq!(v, 6.25);
    assert_eq!(g[0], 2.0 * (0.5 - 3.0));
}

#[test]
fn zero_network_has_zero_gradient_for_score_norm() {
    let spec = NetworkSpec::new(Manifold::Sphere(2), FrameScheme::Projected).unwrap().with_hidden(2, 8).unwrap();
    let params = ParamVector::zeros(&spec);
    let (v, g) = loss_grad(&params, |tape| {
        let rec = record_score(&spec, tape, 0.5, &[0.0, 0.6, 0.8], &[])?;
        let n = tape.dot(rec.score, rec.score, None);
        Ok(tape.scale(n, 0.5))
    })
    .unwrap();
    assert_eq!(v, 0.0);
    assert!(g.iter().all(|c| *c == 0.0));
}

/// Central differences over every parameter.
fn fd_gradient(params: &ParamVector, h: f64, f: impl Fn(&ParamVector) -> f64) -> Vec<f64> {
    let mut p = params.clone();
    (0..p.len())
        .map(|i| {
            let w = p.data[i];
            p.data[i] = w + h;
            let a = f(&p);
            p.data[i] = w - h;
            let b = f(&p);
            p.data[i] = w;
            (a - b) / (2.0 * h)
        })
        .collect()
}

fn assert_grad_close(g: &[f64], fd: &[f64], tol: f64, what: &str) {
    let scale = norm(fd).max(1e-8);
    for (i, (a, b)) in g.iter().zip(fd).enumerate() {
        let err = (a - b).abs() / a.abs().max(b.abs()).max(1e-3 * scale);
        assert!(err < tol, "{what}: param {i}: {a} vs {b}");
    }
}

#[test]
fn two_four_two_network_gradient() {
    let layout = vec![LayerSlice { offset: 0, rows: 4, cols: 2 }, LayerSlice { offset: 12, rows: 2, cols: 4 }];
    let mut r = rng(6);
    let params = ParamVector { data: (0..22).map(|_| r.gen_range(-1.0..1.0)).collect(), layout };
    let x = vec![0.3, -0.7];
    let target = vec![r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)];
    let build = |tape: &mut Tape| {
        let f = tape.leaf(x.clone());
        let out = record_mlp(tape, 2, f, &[]).coeffs;
        let tg = tape.leaf(target.clone());
        let d = tape.sub(out, tg);
        let sq = tape.dot(d, d, None);
        let c = tape.cos(out);
        let s = tape.sum(c);
        Ok(tape.add(sq, s))
    };
    let (_, g) = loss_grad(&params, build).unwrap();
    let fd = fd_gradient(&params, 1e-4, |p| loss_grad(p, build).unwrap().0);
    assert_grad_close(&g, &fd, 1e-4, "2-4-2");
}

/// DSM-style and divergence-based losses on a 2-layer width-8 network.
#[test]
fn network_gradients_match_finite_differences() {
    for seed in 0..10 {
        let mut r = rng(100 + seed);
        for (m, scheme) in [
            (Manifold::Sphere(2), FrameScheme::Projected),
            (Manifold::SpecialOrthogonal, FrameScheme::LieFrame),
            (Manifold::Torus(2), FrameScheme::Coordinates),
        ] {
            let net = small_net(m, scheme, 2, 8, 200 + seed);
            let x = random_point(&m, &mut r);
            let target = random_tangent(&m, &x, 2.0, &mut r);
            let t: f64 = r.gen();
            let basis = m.tangent_basis(&x);
            let w = m.metric_weights();
            let build = |tape: &mut Tape| {
                let rec = record_score(&net.spec, tape, t, &x, &basis)?;
                let tg = tape.leaf(target.clone());
                let d = tape.sub(rec.score, tg);
                let dsm = tape.dot(d, d, Some(&w));
                let mut acc = tape.scale(dsm, 0.5);
                for (e, j) in basis.iter().zip(&rec.jvps) {
                    let ge: Vec<f64> = e.iter().zip(&w).map(|(a, b)| a * b).collect();
                    let term = tape.dot_const(*j, &ge);
                    acc = tape.add(acc, term);
                }
                Ok(acc)
            };
            let (_, g) = loss_grad(&net.params, build).unwrap();
            let fd = fd_gradient(&net.params, 1e-4, |p| loss_grad(p, build).unwrap().0);
            assert_grad_close(&g, &fd, 1e-4, &format!("{m} seed {seed}"));
        }
    }
}

#[test]
fn every_tape_op_backpropagates_to_inputs() {
    let params = ParamVector { data: vec![0.3, -0.2, 0.5, 0.1, 0.7, -0.4], layout: vec![LayerSlice { offset: 0, rows: 2, cols: 2 }] };
    let m = [0.5, -1.0, 2.0, 0.25, 1.5, -0.5];
    let f = |x: &[f64]| {
        let mut tape = Tape::new(&params);
        let a = tape.leaf(x.to_vec());
        let b = tape.affine(0, a);
        let c = tape.linear(0, b);
        let s = tape.sin(c);
        let co = tape.cos(b);
        let p = tape.mul(s, co);
        let q = tape.sub(p, a);
        let r = tape.scale(q, 1.7);
        let u = tape.matvec(&m, r);
        let v = tape.dot(u, u, Some(&[1.0, -0.5, 2.0]));
        let w = tape.dot_const(r, &[0.3, 0.9]);
        let z = tape.add(v, w);
        let sm = tape.sum(a);
        let out = tape.add(z, sm);
        (tape.scalar(out), tape.backward(out).wrt(a).to_vec())
    };
    let x = [0.4, -1.1];
    let (_, g) = f(&x);
    for i in 0..2 {
        let h = 1e-6;
        let mut xp = x;
        let mut xm = x;
        xp[i] += h;
        xm[i] -= h;
        let fd = (f(&xp).0 - f(&xm).0) / (2.0 * h);
        assert!((fd - g[i]).abs() < 1e-7 * (1.0 + fd.abs()), "{i}: {fd} vs {}", g[i]);
    }
}

/// `⟨∇_feat L, v⟩` by reverse mode equals the forward tangent of `L`.
#[test]
fn jvp_and_gradient_are_consistent() {
    let mut r = rng(7);
    for seed in 0..5 {
        let net = small_net(Manifold::Sphere(2), FrameScheme::Projected, 2, 8, seed);
        let feat: Vec<f64> = (0..12).map(|_| r.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..12).map(|_| r.gen_range(-1.0..1.0)).collect();
        let mut tape = Tape::new(&net.params);
        let f = tape.leaf(feat.clone());
        let fv = tape.leaf(v.clone());
        let rec = record_mlp(&mut tape, 3, f, &[fv]);
        let n = tape.dot(rec.coeffs, rec.coeffs, None);
        let loss = tape.scale(n, 0.5);
        let reverse = dot(tape.backward(loss).wrt(f), &v);
        let forward = dot(tape.value(rec.coeffs), tape.value(rec.tangents[0]));
        assert!((reverse - forward).abs() < 1e-10, "{reverse} vs {forward}");
    }
}

#[test]
fn divergence_of_functional_fields() {
    let t1 = Manifold::Torus(1);
    let f = FnField::new(t1, |_, x: &[f64]| Ok(vec![x[0].sin()]));
    for th in [0.0, 0.7, 2.5, 5.0] {
        assert!((f.divergence(0.0, &[th]).unwrap() - th.cos()).abs() < 1e-9);
    }
    assert_eq!(ZeroField(Manifold::Sphere(2)).divergence(0.1, &[0.0, 0.0, 1.0]).unwrap(), 0.0);
    // generic finite-difference divergence agrees with the network's exact one
    let mut r = rng(8);
    for (m, scheme) in configs() {
        let net = std::sync::Arc::new(small_net(m, scheme, 2, 8, 21));
        let n2 = net.clone();
        let g = FnField::new(m, move |t, x| n2.score(t, x));
        for _ in 0..10 {
            let x = random_point(&m, &mut r);
            let a = net.divergence_exact(0.4, &x).unwrap();
            let b = g.divergence(0.4, &x).unwrap();
            assert!((a - b).abs() < 1e-5 * (1.0 + a.abs()), "{m}/{scheme}: {a} vs {b}");
        }
    }
}

/// `∫ div(s) f = -∫ ⟨s, ∇f⟩` for `f` a degree-one harmonic.
#[test]
fn stokes_on_sphere() {
    let s2 = Manifold::Sphere(2);
    for seed in 0..3 {
        let net = small_net(s2, FrameScheme::Projected, 2, 16, 30 + seed);
        let (mut lhs, mut rhs) = (0.0, 0.0);
        for (x, w) in sphere_grid(64, 128) {
            let f = 3f64.sqrt() * x[2];
            let grad_f = crate::util::scale(&s2.project(&x, &[0.0, 0.0, 1.0]), 3f64.sqrt());
            lhs += w * net.divergence_exact(0.5, &x).unwrap() * f;
            rhs -= w * dot(&net.score(0.5, &x).unwrap(), &grad_f);
        }
        assert!((lhs - rhs).abs() < 1e-3, "{lhs} vs {rhs}");
    }
}

#[test]
fn hutchinson_is_unbiased() {
    let mut r = rng(9);
    let s2 = Manifold::Sphere(2);
    let net = small_net(s2, FrameScheme::Projected, 2, 8, 40);
    let k = 100_000;
    for _ in 0..20 {
        let x = random_point(&s2, &mut r);
        let exact = net.divergence_exact(0.3, &x).unwrap();
        let basis = s2.tangent_basis(&x);
        let vals: Vec<f64> = (0..k)
            .map(|_| {
                let e = draw_probe(&basis, Probe::Rademacher, &mut r);
                dot(&e, &net.jvp(0.3, &x, &e).unwrap())
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / k as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k as f64 - 1.0);
        let se = (var / k as f64).sqrt();
        assert!((mean - exact).abs() <= 3.0 * se + 1e-12, "{mean} vs {exact} (se {se})");
    }
}

#[test]
fn rademacher_probes_have_lower_variance() {
    let mut r = rng(10);
    let s2 = Manifold::Sphere(2);
    let net = small_net(s2, FrameScheme::Projected, 2, 8, 41);
    let var = |probe: Probe, x: &[f64], r: &mut ChaCha8Rng| {
        let vals: Vec<f64> = (0..20_000).map(|_| divergence_hutchinson(&net, 0.3, x, 1, probe, r).unwrap()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() as f64 - 1.0)
    };
    for _ in 0..5 {
        let x = random_point(&s2, &mut r);
        let (vr, vg) = (var(Probe::Rademacher, &x, &mut r), var(Probe::Gaussian, &x, &mut r));
        assert!(vr <= vg, "{vr} vs {vg}");
    }
}

#[test]
fn hutchinson_rejects_zero_probes() {
    let z = ZeroField(Manifold::Sphere(2));
    assert!(divergence_hutchinson(&z, 0.1, &[0.0, 0.0, 1.0], 0, Probe::Rademacher, &mut rng(0)).is_err());
}

#[test]
fn non_finite_output_is_an_error() {
    let mut net = small_net(Manifold::Sphere(2), FrameScheme::Projected, 1, 4, 1);
    let last = *net.params.layout.last().unwrap();
    net.params.data[last.bias_offset()] = f64::NAN;
    assert!(matches!(net.score(0.1, &[0.0, 0.0, 1.0]), Err(Error::NonFinite(_))));
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let net = small_net(Manifold::Torus(2), FrameScheme::Coordinates, 2, 8, 3);
    write_checkpoint(&path, &net.spec, &net.params).unwrap();
    let back = read_checkpoint(&path, &net.spec).unwrap();
    assert_eq!(back, net.params);
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..8], b"RSGMCKPT");
    assert_eq!(bytes.len(), 8 + 4 + 32 + 4 + 3 * 8 + 8 + 8 * net.params.len());

    let other = net.spec.with_hidden(2, 9).unwrap();
    assert!(matches!(read_checkpoint(&path, &other), Err(Error::SpecHashMismatch { .. })));
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(read_checkpoint(&path, &net.spec), Err(Error::Checkpoint(_))));
    std::fs::write(&path, b"garbage").unwrap();
    assert!(read_checkpoint(&path, &net.spec).is_err());
}
