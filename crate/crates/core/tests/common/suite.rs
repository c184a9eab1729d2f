//! Library-versus-oracle comparison over random instances.

use rand::Rng;

use semcross::fusion::{cam_forward_with_attention, init_cam};
use semcross::metric::{compute_prototypes, posterior};
use semcross::params::ParamStore;
use semcross::rng;
use semcross::semantics::{aux_loss_graph, AuxLossKind};
use semcross::tensor::{Graph, Tensor};

pub const TOLERANCE: f64 = 1e-10;

/// Largest absolute deviation per operation across `instances` random draws.
pub fn oracle_errors(instances: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let mut worst = vec![
        ("matmul", 0.0),
        ("conv2d", 0.0),
        ("softmax", 0.0),
        ("cam", 0.0),
        ("prototypes", 0.0),
        ("sq_dist", 0.0),
        ("posterior", 0.0),
        ("kl", 0.0),
        ("mse", 0.0),
    ];
    for i in 0..instances {
        let mut r = rng::child(seed, i as u64);
        let errs = [
            check_matmul(&mut r),
            check_conv(&mut r),
            check_softmax(&mut r),
            check_cam(&mut r, seed ^ i as u64),
            check_prototypes(&mut r),
            check_sq_dist(&mut r),
            check_posterior(&mut r),
            check_aux(&mut r, AuxLossKind::Kl),
            check_aux(&mut r, AuxLossKind::Mse),
        ];
        for (w, e) in worst.iter_mut().zip(errs) {
            w.1 = f64::max(w.1, e);
        }
    }
    worst
}

fn rand_t<R: Rng>(shape: &[usize], r: &mut R) -> Tensor<f64> {
    Tensor::uniform(shape, -1.0, 1.0, r)
}

fn check_matmul<R: Rng>(r: &mut R) -> f64 {
    let (m, k, n) = (r.random_range(1..8), r.random_range(1..8), r.random_range(1..8));
    let (a, b) = (rand_t(&[m, k], r), rand_t(&[k, n], r));
    let mut g = Graph::new();
    let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
    let c = g.matmul(va, vb).unwrap();
    super::max_abs_diff(g.value(c).data(), &super::matmul(a.data(), b.data(), m, k, n))
}

fn check_conv<R: Rng>(r: &mut R) -> f64 {
    let (b, ci, co) = (r.random_range(1..3), r.random_range(1..4), r.random_range(1..4));
    let (h, w) = (r.random_range(1..7), r.random_range(1..7));
    let x = rand_t(&[b, ci, h, w], r);
    let k = rand_t(&[co, ci, 3, 3], r);
    let bias = rand_t(&[co], r);
    let mut g = Graph::new();
    let (vx, vk, vb) = (g.constant(x.clone()), g.constant(k.clone()), g.constant(bias.clone()));
    let y = g.conv2d(vx, vk, vb).unwrap();
    let expect = super::conv2d(x.data(), k.data(), bias.data(), b, ci, co, h, w);
    super::max_abs_diff(g.value(y).data(), &expect)
}

fn check_softmax<R: Rng>(r: &mut R) -> f64 {
    let (m, n) = (r.random_range(1..6), r.random_range(1..10));
    let tau = r.random_range(0.1..3.0);
    let x = Tensor::<f64>::uniform(&[m, n], -20.0, 20.0, r);
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let s = g.softmax(v, 1, tau).unwrap();
    let expect: Vec<f64> = x
        .data()
        .chunks(n)
        .flat_map(|row| super::softmax(&row.iter().map(|z| z / tau).collect::<Vec<_>>()))
        .collect();
    super::max_abs_diff(g.value(s).data(), &expect)
}

fn check_cam<R: Rng>(r: &mut R, seed: u64) -> f64 {
    let (c, l) = (r.random_range(1..5), r.random_range(1..5));
    let (h, w) = (r.random_range(1..4), r.random_range(1..4));
    let scale = r.random_range(0.1..2.0);
    let mut store = ParamStore::new();
    init_cam(&mut store, c, l, &mut rng::child(seed, 7));
    for role in ["key", "value"] {
        *store.param_mut(&format!("cam.{role}.b")).unwrap() = rand_t(&[l], r);
    }
    let visual = rand_t(&[c, h, w], r);
    let queries = rand_t(&[h * w, l], r);
    let mut g = Graph::new();
    let bound = store.bind(&mut g, false);
    let (vm, va) = (g.constant(visual.clone()), g.constant(queries.clone()));
    let out = cam_forward_with_attention(&mut g, &bound, vm, va, scale).unwrap();
    let p = |n: &str| store.param(n).unwrap().data().to_vec();
    let (o, a) = super::cam(
        visual.data(),
        queries.data(),
        &p("cam.key.w"),
        &p("cam.key.b"),
        &p("cam.value.w"),
        &p("cam.value.b"),
        c,
        h,
        w,
        l,
        scale,
    );
    f64::max(
        super::max_abs_diff(g.value(out.out).data(), &o),
        super::max_abs_diff(g.value(out.attention).data(), &a),
    )
}

fn check_prototypes<R: Rng>(r: &mut R) -> f64 {
    let (k, n, d) = (r.random_range(1..6), r.random_range(1..6), r.random_range(1..10));
    let s = rand_t(&[k * n, d], r);
    let mut g = Graph::new();
    let v = g.constant(s.clone());
    let p = compute_prototypes(&mut g, v, k).unwrap();
    super::max_abs_diff(g.value(p).data(), &super::prototypes(s.data(), k, n, d))
}

fn check_sq_dist<R: Rng>(r: &mut R) -> f64 {
    let (m, k, d) = (r.random_range(1..8), r.random_range(1..6), r.random_range(1..10));
    let (q, p) = (rand_t(&[m, d], r), rand_t(&[k, d], r));
    let mut g = Graph::new();
    let (vq, vp) = (g.constant(q.clone()), g.constant(p.clone()));
    let dist = g.sq_dist(vq, vp).unwrap();
    super::max_abs_diff(g.value(dist).data(), &super::sq_distances(q.data(), p.data(), m, k, d))
}

fn check_posterior<R: Rng>(r: &mut R) -> f64 {
    let (m, k) = (r.random_range(1..8), r.random_range(1..6));
    let d = Tensor::<f64>::uniform(&[m, k], 0.0, 30.0, r);
    let mut g = Graph::new();
    let v = g.constant(d.clone());
    let p = posterior(&mut g, v).unwrap();
    super::max_abs_diff(g.value(p).data(), &super::posterior(d.data(), k))
}

fn distribution_rows<R: Rng>(b: usize, l: usize, r: &mut R) -> Tensor<f64> {
    let raw = Tensor::<f64>::uniform(&[b, l], -4.0, 4.0, r);
    let data = raw.data().chunks(l).flat_map(super::softmax).collect();
    Tensor::new(&[b, l], data).unwrap()
}

fn check_aux<R: Rng>(r: &mut R, kind: AuxLossKind) -> f64 {
    let (b, l) = (r.random_range(1..5), r.random_range(2..10));
    let (p, t) = (distribution_rows(b, l, r), distribution_rows(b, l, r));
    let mut g = Graph::new();
    let vp = g.constant(p.clone());
    let loss = aux_loss_graph(&mut g, vp, &t, kind).unwrap();
    let rows = p.data().chunks(l).zip(t.data().chunks(l));
    let expect = match kind {
        AuxLossKind::Kl => rows.map(|(p, t)| super::kl(t, p)).sum::<f64>() / b as f64,
        AuxLossKind::Mse => rows.map(|(p, t)| super::mse(t, p)).sum::<f64>() / b as f64,
    };
    (g.value(loss).data()[0] - expect).abs()
}
