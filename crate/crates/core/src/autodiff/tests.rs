use super::*;
use crate::rng::rng_from_seed;
use crate::AscnError;
use rand::Rng;

fn random_tensor(rng: &mut crate::rng::Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn check<F>(store: &ParamStore, build: F)
where
    F: Fn(&ParamStore) -> crate::Result<(Tape, NodeId)>,
{
    let report = grad_check(&build, store, &GradCheckConfig::default()).unwrap();
    assert!(report.passed(), "{:?}", report.failures);
    assert!(report.total_checked() > 0);
}

#[test]
fn constant_and_composite_forward() {
    let mut t = Tape::new();
    let c = t.constant(Tensor::scalar(4.5));
    assert_eq!(t.value(c).item(), 4.5);

    let mut s = ParamStore::new();
    let a = s.add("a", Tensor::scalar(2.0));
    let b = s.add("b", Tensor::scalar(3.0));
    let mut t = Tape::new();
    let (na, nb) = (t.param(&s, a), t.param(&s, b));
    let nc = t.constant(Tensor::scalar(4.0));
    let ab = t.mul(na, nb).unwrap();
    let out = t.add(ab, nc).unwrap();
    assert_eq!(t.value(out).item(), 10.0);

    let g = t.backward(ab).unwrap();
    assert_eq!(g.get(na).unwrap().item(), 3.0);
    assert_eq!(g.get(nb).unwrap().item(), 2.0);
    assert!(g.get(nc).is_none());
}

#[test]
fn max_routes_to_argmax_and_lowest_tie() {
    let mut s = ParamStore::new();
    let x = s.add("x", Tensor::new(2, 1, vec![5.0, 1.0]).unwrap());
    let mut t = Tape::new();
    let nx = t.param(&s, x);
    let m = t.max_rows(nx).unwrap();
    assert_eq!(t.value(m).item(), 5.0);
    let g = t.backward(m).unwrap();
    assert_eq!(g.get(nx).unwrap().data, vec![1.0, 0.0]);

    let y = s.add("y", Tensor::new(3, 1, vec![2.0, 7.0, 7.0]).unwrap());
    let mut t = Tape::new();
    let ny = t.param(&s, y);
    let m = t.max_rows(ny).unwrap();
    let g = t.backward(m).unwrap();
    assert_eq!(g.get(ny).unwrap().data, vec![0.0, 1.0, 0.0]);
}

#[test]
fn replay_is_deterministic() {
    let mut rng = rng_from_seed(1);
    let mut s = ParamStore::new();
    let w = s.add("w", random_tensor(&mut rng, 4, 3));
    let x = random_tensor(&mut rng, 5, 4);
    let run = |s: &ParamStore| {
        let mut t = Tape::new();
        let nx = t.constant(x.clone());
        let nw = t.param(s, w);
        let y = t.matmul(nx, nw).unwrap();
        let r = t.relu(y);
        let o = t.sum(r);
        (t.value(o).item(), t.backward(o).unwrap().get(nw).unwrap().clone())
    };
    let (a, ga) = run(&s);
    let (b, gb) = run(&s);
    assert_eq!(a.to_bits(), b.to_bits());
    assert_eq!(ga, gb);
}

#[test]
fn affine_relu_concat_gradients() {
    let mut rng = rng_from_seed(2);
    let mut s = ParamStore::new();
    let x = s.add("x", random_tensor(&mut rng, 4, 3));
    let w = s.add("w", random_tensor(&mut rng, 3, 5));
    let b = s.add("b", random_tensor(&mut rng, 1, 5));
    let z = s.add("z", random_tensor(&mut rng, 4, 2));
    let u = s.add("u", random_tensor(&mut rng, 7, 1));
    check(&s, |s| {
        let mut t = Tape::new();
        let (nx, nw, nb, nz, nu) = (t.param(s, x), t.param(s, w), t.param(s, b), t.param(s, z), t.param(s, u));
        let h = t.affine(nx, nw, nb)?;
        let r = t.relu(h);
        let cat = t.concat_cols(r, nz)?;
        let y = t.matmul(cat, nu)?;
        let sq = t.mul(y, y)?;
        let o = t.sum(sq);
        Ok((t, o))
    });
}

#[test]
fn gather_segment_max_group_sum_gradients() {
    let mut rng = rng_from_seed(3);
    let mut s = ParamStore::new();
    let f = s.add("f", random_tensor(&mut rng, 5, 6));
    let c = s.add("c", random_tensor(&mut rng, 1, 3));
    let rows = vec![0, 2, 4, 1, 1, 3, 4, 0, 2];
    check(&s, |s| {
        let mut t = Tape::new();
        let nf = t.param(s, f);
        let g = t.gather_rows(nf, rows.clone())?;
        let m = t.segment_max(g, 3)?;
        let gs = t.col_group_sum(m, 2)?;
        let nc = t.param(s, c);
        let biased = t.add_row_bias(gs, nc)?;
        let sc = t.scale(biased, 0.7);
        let sq = t.mul(sc, sc)?;
        let o = t.sum(sq);
        Ok((t, o))
    });
}

#[test]
fn cosine_and_norm_gradients() {
    let mut rng = rng_from_seed(4);
    let mut s = ParamStore::new();
    let a = s.add("a", random_tensor(&mut rng, 6, 3));
    let k = s.add("k", random_tensor(&mut rng, 4, 3));
    let wt = s.add("wt", random_tensor(&mut rng, 6, 4));
    check(&s, |s| {
        let mut t = Tape::new();
        let (na, nk, nw) = (t.param(s, a), t.param(s, k), t.param(s, wt));
        let cos = t.cosine(na, nk)?;
        let weighted = t.mul(cos, nw)?;
        let n = t.norm_rows(na);
        let o1 = t.sum(weighted);
        let o2 = t.sum(n);
        let o = t.add(o1, o2)?;
        Ok((t, o))
    });
}

#[test]
fn cosine_zero_norm_guard() {
    let mut s = ParamStore::new();
    let k = s.add("k", Tensor::new(1, 3, vec![1.0, 0.0, 0.0]).unwrap());
    let mut t = Tape::new();
    let d = t.constant(Tensor::new(2, 3, vec![0.0, 0.0, 0.0, 2.0, 0.0, 0.0]).unwrap());
    let nk = t.param(&s, k);
    let c = t.cosine(d, nk).unwrap();
    assert_eq!(t.value(c).data, vec![0.0, 1.0]);
    let o = t.sum(c);
    let g = t.backward(o).unwrap();
    assert!(g.get(nk).unwrap().data.iter().all(|v| v.abs() < 1e-15));
}

#[test]
fn cross_entropy_values_and_gradient() {
    let mut t = Tape::new();
    let l = t.constant(Tensor::row_vector(vec![0.3, 0.3, 0.3]));
    let ce = t.cross_entropy(l, 1).unwrap();
    assert!((t.value(ce).item() - 3f64.ln()).abs() < 1e-15);

    let l = t.constant(Tensor::row_vector(vec![1000.0, 0.0, 0.0]));
    let ce = t.cross_entropy(l, 0).unwrap();
    assert!(t.value(ce).item().abs() < 1e-300 + 1e-12);
    let ce = t.cross_entropy(l, 1).unwrap();
    assert!((t.value(ce).item() - 1000.0).abs() < 1e-9);
    assert!(t.cross_entropy(l, 3).is_err());

    let mut rng = rng_from_seed(5);
    for _ in 0..50 {
        let logits: Vec<f64> = (0..5).map(|_| rng.random_range(-20.0..20.0)).collect();
        let label = rng.random_range(0..5);
        let mut t = Tape::new();
        let l = t.constant(Tensor::row_vector(logits.clone()));
        let ce = t.cross_entropy(l, label).unwrap();
        let naive = -(logits[label].exp() / logits.iter().map(|x| x.exp()).sum::<f64>()).ln();
        assert!((t.value(ce).item() - naive).abs() < 1e-10);
    }

    let mut s = ParamStore::new();
    let p = s.add("logits", random_tensor(&mut rng, 1, 4));
    check(&s, |s| {
        let mut t = Tape::new();
        let n = t.param(s, p);
        let o = t.cross_entropy(n, 2)?;
        Ok((t, o))
    });
}

#[test]
fn linear_model_is_exact() {
    let mut rng = rng_from_seed(6);
    let mut s = ParamStore::new();
    let w = s.add("w", random_tensor(&mut rng, 3, 2));
    let b = s.add("b", random_tensor(&mut rng, 1, 2));
    let x = random_tensor(&mut rng, 4, 3);
    let build = |s: &ParamStore| {
        let mut t = Tape::new();
        let nx = t.constant(x.clone());
        let (nw, nb) = (t.param(s, w), t.param(s, b));
        let y = t.affine(nx, nw, nb)?;
        let o = t.sum(y);
        Ok((t, o))
    };
    let report = grad_check(&build, &s, &GradCheckConfig::default()).unwrap();
    assert!(report.passed());
    assert!(report.max_rel_error() < 1e-9, "{}", report.max_rel_error());
}

#[test]
fn corrupted_gradient_is_reported() {
    let mut rng = rng_from_seed(7);
    let mut s = ParamStore::new();
    let w = s.add("w", random_tensor(&mut rng, 2, 2));
    let build = |s: &ParamStore| {
        let mut t = Tape::new();
        let nw = t.param(s, w);
        let sq = t.mul(nw, nw)?;
        let o = t.sum(sq);
        Ok((t, o))
    };
    let mut analytic = analytic_gradients(&build, &s).unwrap();
    analytic[0].data[3] += 0.5;
    let report = compare_gradients(&build, &s, &analytic, &GradCheckConfig::default()).unwrap();
    assert!(!report.passed());
    assert_eq!(report.failures.len(), 1);
    assert_eq!(report.failures[0].index, 3);
}

#[test]
fn kinks_are_skipped_not_failed() {
    // max(x, y) with x == y: any ±h perturbation changes the winner.
    let mut s = ParamStore::new();
    let x = s.add("x", Tensor::new(2, 1, vec![1.0, 1.0]).unwrap());
    let build = |s: &ParamStore| {
        let mut t = Tape::new();
        let n = t.param(s, x);
        let o = t.max_rows(n)?;
        Ok((t, o))
    };
    let report = grad_check(&build, &s, &GradCheckConfig::default()).unwrap();
    assert!(report.passed());
    assert!(report.total_skipped() >= 1);
}

#[test]
fn nan_gradient_is_an_error() {
    let mut s = ParamStore::new();
    let p = s.add("p", Tensor::scalar(1.0));
    let mut t = Tape::new();
    let n = t.param(&s, p);
    let bad = t.scale(n, f64::NAN);
    assert!(matches!(t.backward(bad), Err(AscnError::Numerical(_))));
}

#[test]
fn shape_errors() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::zeros(2, 3));
    let b = t.constant(Tensor::zeros(2, 2));
    assert!(t.add(a, b).is_err());
    assert!(t.matmul(a, b).is_err());
    assert!(t.segment_max(a, 3).is_err());
    assert!(t.col_group_sum(a, 2).is_err());
    assert!(t.gather_rows(a, vec![2]).is_err());
    assert!(t.backward(a).is_err());
}
