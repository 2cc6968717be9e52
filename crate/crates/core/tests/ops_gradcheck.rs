//! Finite-difference check of every differentiable graph op in isolation.

use p2c_core::numerics::gradcheck::check_store;
use p2c_core::numerics::{Graph, ParamStore, Tensor, Var, TOLERANCES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Build = fn(&mut Graph, &[Var]) -> Var;

/// Loss = Σ op(inputs) ⊙ R for a fixed random R, so every output entry matters.
fn loss_of(store: &ParamStore, shapes: usize, build: Build, probe: &mut Option<Var>) -> (Graph, Var) {
    let mut g = Graph::new();
    let inputs: Vec<Var> = (0..shapes).map(|i| g.param(store, store.id(&format!("x{i}")).unwrap())).collect();
    let out = build(&mut g, &inputs);
    let shape = g.value(out).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = shape.iter().product();
    let r = g.constant(Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap());
    let weighted = g.mul(out, r).unwrap();
    let loss = g.sum(weighted);
    *probe = Some(out);
    (g, loss)
}

fn check(name: &str, shapes: &[(usize, usize)], build: Build) {
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64);
    let mut store = ParamStore::new();
    for (i, &(r, c)) in shapes.iter().enumerate() {
        store.add(&format!("x{i}"), Tensor::new(vec![r, c], (0..r * c).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap());
    }
    let mut probe = None;
    let (mut g, loss) = loss_of(&store, shapes.len(), build, &mut probe);
    g.backward(loss).unwrap();
    g.accumulate_param_grads(&mut store);
    let report = check_store(
        &mut store,
        |s| {
            let (g, l) = loss_of(s, shapes.len(), build, &mut None);
            g.value(l).data()[0]
        },
        |_| true,
        TOLERANCES.fd_step,
    );
    assert!(report.checked > 0);
    assert!(report.passes(TOLERANCES.grad_rel_err), "{name}: {report:?}");
}

#[test]
fn binary_ops() {
    check("matmul", &[(2, 3), (3, 4)], |g, x| g.matmul(x[0], x[1]).unwrap());
    check("add", &[(2, 3), (2, 3)], |g, x| g.add(x[0], x[1]).unwrap());
    check("sub", &[(2, 3), (2, 3)], |g, x| g.sub(x[0], x[1]).unwrap());
    check("mul", &[(2, 3), (2, 3)], |g, x| g.mul(x[0], x[1]).unwrap());
    check("add_row", &[(3, 4), (1, 4)], |g, x| g.add_row(x[0], x[1]).unwrap());
}

#[test]
fn unary_ops() {
    check("sigmoid", &[(2, 3)], |g, x| g.sigmoid(x[0]));
    check("tanh", &[(2, 3)], |g, x| g.tanh(x[0]));
    check("softmax", &[(3, 4)], |g, x| g.softmax(x[0]));
    check("log_softmax", &[(3, 4)], |g, x| g.log_softmax(x[0]));
    check("transpose", &[(2, 3)], |g, x| g.transpose(x[0]));
    check("sum", &[(2, 3)], |g, x| g.sum(x[0]));
    check("scale", &[(2, 3)], |g, x| g.scale(x[0], -0.7));
    check("rms_norm_rows", &[(3, 4)], |g, x| g.rms_norm_rows(x[0], 1e-12));
}

#[test]
fn structural_ops() {
    check("cross_entropy", &[(1, 5)], |g, x| g.cross_entropy(x[0], 2).unwrap());
    check("concat_cols", &[(2, 3), (2, 1)], |g, x| g.concat_cols(&[x[0], x[1]]).unwrap());
    check("stack_rows", &[(1, 3), (2, 3)], |g, x| g.stack_rows(&[x[0], x[1]]).unwrap());
    check("slice_cols", &[(2, 5)], |g, x| g.slice_cols(x[0], 1, 3).unwrap());
    check("gather_rows", &[(4, 3)], |g, x| g.gather_rows(x[0], &[2, 0, 2]).unwrap());
}

#[test]
fn composed_gated_attention() {
    check("gated_attention", &[(3, 4), (2, 4)], |g, x| {
        let c = g.rms_norm_rows(x[1], 1e-12);
        p2c_core::model::gated_attention(g, x[0], Some(c), 2).unwrap().output
    });
}
