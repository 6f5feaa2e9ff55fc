//! Properties of the autodiff tape: every primitive against central
//! differences, linearity of adjoints, and run-to-run determinism.

use proptest::prelude::*;

use ranklab::grad::{grad_check, GradError, Tape, Value};

type Built = Result<Value, GradError>;
type Primitive = fn(&mut Tape, Value) -> Built;

fn part(tape: &mut Tape, x: Value, from: usize, to: usize) -> Built {
    let items = (from..to)
        .map(|k| tape.index(x, k))
        .collect::<Result<Vec<_>, _>>()?;
    tape.stack(&items)
}

/// Reduce a vector to a scalar with unequal weights so every component
/// gets a distinct adjoint.
fn reduce(tape: &mut Tape, v: Value) -> Built {
    let n = tape.payload(v).len();
    if n == 1 && tape.payload(v).as_scalar().is_some() {
        return tape.scale(v, 1.3);
    }
    let w = tape.constant((0..n).map(|k| 0.5 + 0.25 * k as f64).collect::<Vec<_>>())?;
    tape.dot(v, w)
}

macro_rules! unary {
    ($name:ident, $op:ident $(, $arg:expr)?) => {
        fn $name(t: &mut Tape, x: Value) -> Built {
            let a = part(t, x, 0, 3)?;
            let y = t.$op(a $(, $arg)?)?;
            reduce(t, y)
        }
    };
}

macro_rules! binary {
    ($name:ident, $op:ident) => {
        fn $name(t: &mut Tape, x: Value) -> Built {
            let a = part(t, x, 0, 3)?;
            let b = part(t, x, 3, 6)?;
            let y = t.$op(a, b)?;
            reduce(t, y)
        }
    };
}

unary!(p_neg, neg);
unary!(p_scale, scale, 1.7);
unary!(p_shift, shift, 0.3);
unary!(p_div_const, div_const, 2.5);
unary!(p_exp, exp);
unary!(p_log, log);
unary!(p_tanh, tanh);
unary!(p_sigmoid, sigmoid);
unary!(p_abs, abs);
unary!(p_relu, relu);
unary!(p_pow, pow, 2.5);
unary!(p_clamp_min, clamp_min, 0.0);
unary!(p_sum, sum);
unary!(p_mean, mean);
binary!(p_add, add);
binary!(p_sub, sub);
binary!(p_mul, mul);
binary!(p_div, div);
binary!(p_dot, dot);

fn p_broadcast(t: &mut Tape, x: Value) -> Built {
    let a = part(t, x, 0, 3)?;
    let s = t.index(x, 4)?;
    let y = t.mul(a, s)?;
    let z = t.sub(s, y)?;
    reduce(t, z)
}

fn p_matvec(t: &mut Tape, x: Value) -> Built {
    let m = part(t, x, 0, 6)?;
    let v = part(t, x, 6, 9)?;
    let y = t.matvec(m, 2, 3, v)?;
    reduce(t, y)
}

fn p_index_stack(t: &mut Tape, x: Value) -> Built {
    let a = t.index(x, 2)?;
    let b = t.index(x, 7)?;
    let s = t.stack(&[b, a, b])?;
    reduce(t, s)
}

/// Primitives defined on all of R (away from kinks at 0).
const SIGNED: [(&str, Primitive); 17] = [
    ("neg", p_neg),
    ("scale", p_scale),
    ("shift", p_shift),
    ("div_const", p_div_const),
    ("exp", p_exp),
    ("tanh", p_tanh),
    ("sigmoid", p_sigmoid),
    ("abs", p_abs),
    ("relu", p_relu),
    ("clamp_min", p_clamp_min),
    ("sum", p_sum),
    ("mean", p_mean),
    ("add", p_add),
    ("sub", p_sub),
    ("mul", p_mul),
    ("dot", p_dot),
    ("broadcast", p_broadcast),
];

/// Primitives needing positive arguments somewhere.
const POSITIVE: [(&str, Primitive); 5] = [
    ("log", p_log),
    ("pow", p_pow),
    ("div", p_div),
    ("matvec", p_matvec),
    ("index_stack", p_index_stack),
];

fn point() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (
        prop::collection::vec(0.3f64..2.0, 9),
        prop::collection::vec(any::<bool>(), 9),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn primitives_match_finite_differences((mags, signs) in point()) {
        let signed: Vec<f64> = mags.iter().zip(&signs).map(|(m, &s)| if s { -m } else { *m }).collect();
        for (name, f) in SIGNED {
            let err = grad_check(f, &signed, 1e-6).unwrap();
            prop_assert!(err < 1e-6, "{name}: {err}");
        }
        for (name, f) in POSITIVE {
            let err = grad_check(f, &mags, 1e-6).unwrap();
            prop_assert!(err < 1e-6, "{name}: {err}");
        }
    }
}

/// Grow a random graph of total (domain-free) operations over three leaves;
/// returns the leaves and every node built.
fn random_graph(tape: &mut Tape, leaves: &[f64], ops: &[(u8, usize, usize)]) -> (Vec<Value>, Vec<Value>) {
    let params: Vec<Value> = leaves.iter().map(|&x| tape.param(x).unwrap()).collect();
    let mut nodes = params.clone();
    for &(op, i, j) in ops {
        let a = nodes[i % nodes.len()];
        let b = nodes[j % nodes.len()];
        let v = match op % 8 {
            0 => tape.add(a, b),
            1 => tape.sub(a, b),
            2 => {
                let ta = tape.tanh(a).unwrap();
                tape.mul(ta, b)
            }
            3 => tape.tanh(a),
            4 => tape.sigmoid(a),
            5 => tape.scale(a, -0.7),
            6 => {
                let ta = tape.tanh(a).unwrap();
                tape.exp(ta)
            }
            _ => tape.shift(a, 0.25),
        }
        .unwrap();
        nodes.push(v);
    }
    (params, nodes)
}

fn ops_strategy() -> impl Strategy<Value = Vec<(u8, usize, usize)>> {
    prop::collection::vec((any::<u8>(), 0usize..64, 0usize..64), 1..25)
}

proptest! {
    #[test]
    fn adjoints_are_linear(
        leaves in prop::collection::vec(-1.5f64..1.5, 3),
        ops in ops_strategy(),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        pick in 0usize..64,
    ) {
        let mut tape = Tape::new();
        let (params, nodes) = random_graph(&mut tape, &leaves, &ops);
        let f = *nodes.last().unwrap();
        let g = nodes[pick % nodes.len()];
        let fa = tape.scale(f, a).unwrap();
        let gb = tape.scale(g, b).unwrap();
        let h = tape.add(fa, gb).unwrap();
        let df = tape.backward(f).unwrap();
        let dg = tape.backward(g).unwrap();
        let dh = tape.backward(h).unwrap();
        for p in params {
            let lhs = dh.scalar_wrt(p).unwrap();
            let rhs = a * df.scalar_wrt(p).unwrap() + b * dg.scalar_wrt(p).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn forward_and_backward_are_deterministic(
        leaves in prop::collection::vec(-1.5f64..1.5, 3),
        ops in ops_strategy(),
    ) {
        let run = || {
            let mut tape = Tape::new();
            let (params, nodes) = random_graph(&mut tape, &leaves, &ops);
            let out = *nodes.last().unwrap();
            let grads = tape.backward(out).unwrap();
            let mut bits = vec![tape.scalar(out).to_bits()];
            bits.extend(params.iter().map(|&p| grads.scalar_wrt(p).unwrap().to_bits()));
            bits
        };
        prop_assert_eq!(run(), run());
    }
}
