use super::*;
use crate::autodiff::{finite_difference_grad, stable_sigmoid, Tape};
use proptest::prelude::*;

fn state(vars: &[(&str, f64)]) -> State {
    vars.iter()
        .map(|(k, v)| (k.to_string(), Tensor::scalar(*v)))
        .collect()
}

fn val(s: &State, k: &str) -> f64 {
    s[k].item()
}

fn count_to(limit: f64, max_iter: usize) -> Statement {
    Statement::while_loop(
        Condition::lt(Expr::var("x"), Expr::constant(limit)),
        Statement::assign("x", Expr::var("x").add_const(1.0)),
        max_iter,
    )
}

/// `if x < c: y := 3 else y := 5`
fn midpoint_program() -> Statement {
    Statement::if_else(
        Condition::lt(Expr::var("x"), Expr::var("c")),
        Statement::assign("y", Expr::constant(3.0)),
        Statement::assign("y", Expr::constant(5.0)),
    )
}

#[test]
fn empty_sequence_is_identity() {
    let s = state(&[("a", 1.5), ("b", -2.0)]);
    for mode in [Mode::Relaxed, Mode::Hard] {
        let (out, report) = run(&Statement::seq(vec![]), &s, 3.0, mode).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|(k, v)| v.same_as(&s[k])));
        assert!(report.warnings.is_empty());
    }
}

#[test]
fn if_blends_branches() {
    let s = state(&[("x", 1.0), ("c", 1.0), ("y", 0.0)]);
    let (out, _) = run(&midpoint_program(), &s, 2.0, Mode::Relaxed).unwrap();
    assert_eq!(val(&out, "y"), 4.0);

    let s = state(&[("x", 0.0), ("c", 1.0), ("y", 0.0)]);
    let (out, _) = run(&midpoint_program(), &s, 1e6, Mode::Relaxed).unwrap();
    assert_eq!(val(&out, "y"), 3.0);
    let (out, _) = run(&midpoint_program(), &s, 1e6, Mode::Hard).unwrap();
    assert_eq!(val(&out, "y"), 3.0);
}

#[test]
fn if_gradient_wrt_condition_operand() {
    // out = s y + (1 - s) z with s = sigma(beta (c - x)); d out / d x = (z - y) beta s (1 - s)
    let beta = 1.3;
    let (y, z) = (3.0, 5.0);
    for x0 in [-1.0, 0.2, 0.9, 2.5] {
        let c = 0.7;
        let f = |x: &Tensor| -> Result<Tensor> {
            let mut s = state(&[("c", c), ("y", 0.0)]);
            s.insert("x".into(), x.clone());
            let (out, _) = run(&midpoint_program(), &s, beta, Mode::Relaxed)?;
            Ok(out["y"].clone())
        };
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(x0));
        let g = f(&x).unwrap().backward().unwrap().wrt(&x)[0];
        let sg = stable_sigmoid(beta * (c - x0));
        let closed = (z - y) * beta * sg * (1.0 - sg);
        let fd = finite_difference_grad(|t| Ok(f(t)?.item()), &Tensor::scalar(x0), 1e-5).unwrap()[0];
        assert!((g - closed).abs() < 1e-12);
        assert!((g - fd).abs() < 1e-6);
    }
}

#[test]
fn if_without_else_is_identity_on_false() {
    let p = Statement::if_then(
        Condition::gt(Expr::var("x"), Expr::constant(0.0)),
        Statement::assign("y", Expr::constant(10.0)),
    );
    let s = state(&[("x", 0.0), ("y", 2.0)]);
    let (out, _) = run(&p, &s, 1.0, Mode::Relaxed).unwrap();
    assert_eq!(val(&out, "y"), 6.0);
    let (out, _) = run(&p, &s, 1.0, Mode::Hard).unwrap();
    assert_eq!(val(&out, "y"), 2.0);
}

#[test]
fn branch_purity() {
    let s = state(&[("x", 0.3), ("c", 1.0), ("y", -7.0)]);
    let before: Vec<(String, Vec<f64>)> = s.iter().map(|(k, v)| (k.clone(), v.to_vec())).collect();
    let _ = run(&midpoint_program(), &s, 2.0, Mode::Relaxed).unwrap();
    let after: Vec<(String, Vec<f64>)> = s.iter().map(|(k, v)| (k.clone(), v.to_vec())).collect();
    assert_eq!(before, after);
}

#[test]
fn branch_variable_sets_must_match() {
    let p = Statement::if_then(
        Condition::lt(Expr::var("x"), Expr::constant(1.0)),
        Statement::assign("fresh", Expr::constant(1.0)),
    );
    let err = run(&p, &state(&[("x", 0.0)]), 1.0, Mode::Relaxed).unwrap_err();
    assert!(matches!(err, Error::Structural(_)), "{err}");
}

#[test]
fn unbound_variable_is_reported() {
    let err = run(&count_to(3.0, 10), &State::new(), 1.0, Mode::Relaxed).unwrap_err();
    assert_eq!(err, Error::Unbound("x".into()));
    let c = Statement::compute(&["nope"], &[], |_, _| Ok(vec![]));
    assert_eq!(
        run(&c, &State::new(), 1.0, Mode::Hard).unwrap_err(),
        Error::Unbound("nope".into())
    );
}

#[test]
fn per_access_independence() {
    let p = Statement::if_else(
        Condition::lt(Expr::var("x"), Expr::var("x")),
        Statement::assign("t", Expr::constant(1.0)),
        Statement::assign("t", Expr::constant(0.0)),
    );
    for (x, beta) in [(0.0, 1.0), (3.7, 1e-3), (-12.0, 1e6)] {
        let (out, _) = run(&p, &state(&[("x", x), ("t", 0.0)]), beta, Mode::Relaxed).unwrap();
        assert_eq!(val(&out, "t"), 0.5);
    }
}

#[test]
fn while_examples() {
    let (out, r) = run(&count_to(3.0, 50), &state(&[("x", 10.0)]), 1e6, Mode::Relaxed).unwrap();
    assert_eq!(val(&out, "x"), 10.0);
    assert!(r.warnings.is_empty());

    let (out, _) = run(&count_to(3.0, 50), &state(&[("x", 0.0)]), 1e6, Mode::Hard).unwrap();
    assert_eq!(val(&out, "x"), 3.0);
    let (out, _) = run(&count_to(2.5, 50), &state(&[("x", 0.0)]), 1e6, Mode::Relaxed).unwrap();
    assert!((val(&out, "x") - 3.0).abs() < 1e-9);
}

#[test]
fn while_series_matches_closed_form() {
    // Stopping after exactly i increments has probability prod_{j<i} c_j (1 - c_i)
    // with c_j = sigma(beta (3 - j)).
    let beta = 2.0;
    let (out, _) = run(&count_to(3.0, 200), &state(&[("x", 0.0)]), beta, Mode::Relaxed).unwrap();
    let mut reach = 1.0;
    let mut expect = 0.0;
    for i in 0..200 {
        let c = stable_sigmoid(beta * (3.0 - i as f64));
        expect += reach * (1.0 - c) * i as f64;
        reach *= c;
    }
    assert!((val(&out, "x") - expect).abs() < 1e-9, "{} vs {expect}", val(&out, "x"));
}

#[test]
fn while_weights_sum_to_one() {
    let body = Statement::compute(&["x", "one"], &["x", "one"], |v, _| {
        Ok(vec![v[0].add_scalar(0.5), v[1].mul_scalar(1.0)])
    });
    let prog = Statement::while_with(
        Condition::lt(Expr::var("x"), Expr::constant(2.0)),
        body,
        40,
        1e-6,
    );
    for beta in [0.3, 1.0, 4.0, 30.0] {
        let tape = Tape::new();
        let mut s = state(&[("x", 0.0)]);
        s.insert("one".into(), tape.leaf(&Tensor::scalar(1.0)));
        let (out, _) = run(&prog, &s, beta, Mode::Relaxed).unwrap();
        assert!((val(&out, "one") - 1.0).abs() < 1e-9, "beta {beta}");
    }
}

#[test]
fn while_truncation_warns() {
    let never_ends = Statement::while_loop(
        Condition::lt(Expr::var("x"), Expr::constant(1e9)),
        Statement::assign("x", Expr::var("x").add_const(1.0)),
        5,
    );
    for (mode, beta) in [(Mode::Relaxed, 1.0), (Mode::Hard, 1.0)] {
        let (out, r) = run(&never_ends, &state(&[("x", 0.0)]), beta, mode).unwrap();
        assert_eq!(val(&out, "x"), 5.0);
        assert_eq!(r.warnings.len(), 1, "{mode:?}");
    }
    let bad = Statement::while_with(Condition::prob(Expr::constant(0.5)), Statement::seq(vec![]), 0, 1e-6);
    assert!(matches!(run(&bad, &State::new(), 1.0, Mode::Relaxed), Err(Error::Parameter(_))));
}

#[test]
fn raw_probability_condition() {
    // while swapped: swapped = swapped * 0.5 ; k = k + 1
    let prog = Statement::while_with(
        Condition::prob(Expr::var("p")),
        Statement::seq(vec![
            Statement::assign("k", Expr::var("k").add_const(1.0)),
            Statement::compute(&["p"], &["p"], |v, _| Ok(vec![v[0].mul_scalar(0.5)])),
        ]),
        100,
        1e-12,
    );
    let (out, _) = run(&prog, &state(&[("p", 1.0), ("k", 0.0)]), 1.0, Mode::Relaxed).unwrap();
    // P[stop after i] = prod_{j<i} 2^-j (1 - 2^-i)
    let mut reach = 1.0;
    let mut expect = 0.0;
    for i in 0..60 {
        let c = 0.5f64.powi(i);
        expect += reach * (1.0 - c) * i as f64;
        reach *= c;
    }
    assert!((val(&out, "k") - expect).abs() < 1e-12);
    let (out, _) = run(&prog, &state(&[("p", 1.0), ("k", 0.0)]), 1.0, Mode::Hard).unwrap();
    assert_eq!(val(&out, "k"), 1.0);
}

#[test]
fn for_examples() {
    let inc = Statement::assign("x", Expr::var("x").add_const(1.0));
    let zero = Statement::for_loop("i", Expr::constant(0.0), inc.clone());
    let (out, _) = run(&zero, &state(&[("x", 0.0)]), 1.0, Mode::Relaxed).unwrap();
    assert_eq!(val(&out, "x"), 0.0);

    let three = Statement::for_loop("i", Expr::constant(3.0), inc.clone());
    let (out, _) = run(&three, &state(&[("x", 0.0)]), 1.0, Mode::Relaxed).unwrap();
    assert_eq!(val(&out, "x"), 3.0);
    assert!(!out.contains_key("i"));

    let nested = Statement::for_loop(
        "i",
        Expr::var("n"),
        Statement::for_loop("j", Expr::var("m"), inc.clone()),
    );
    let (out, _) = run(&nested, &state(&[("x", 0.0), ("n", 4.0), ("m", 3.0)]), 1.0, Mode::Hard).unwrap();
    assert_eq!(val(&out, "x"), 12.0);

    let sum_counter = Statement::for_loop(
        "i",
        Expr::constant(5.0),
        Statement::compute(&["x", "i"], &["x"], |v, _| Ok(vec![v[0].add(&v[1])?])),
    );
    let (out, _) = run(&sum_counter, &state(&[("x", 0.0), ("i", 99.0)]), 1.0, Mode::Relaxed).unwrap();
    assert_eq!(val(&out, "x"), 10.0);
    assert_eq!(val(&out, "i"), 99.0);

    let frac = Statement::for_loop("i", Expr::constant(2.5), inc);
    assert!(matches!(
        run(&frac, &state(&[("x", 0.0)]), 1.0, Mode::Hard),
        Err(Error::Structural(_))
    ));
}

#[test]
fn merge_examples() {
    let a = state(&[("v", 0.0)]);
    let b = state(&[("v", 4.0)]);
    let one = merge_states(&[Probability::constant(1.0)], std::slice::from_ref(&a)).unwrap();
    assert_eq!(val(&one, "v"), 0.0);
    let same = merge_states(
        &[Probability::constant(0.3), Probability::constant(0.7)],
        &[b.clone(), b.clone()],
    )
    .unwrap();
    assert_eq!(val(&same, "v"), 4.0);
    let mixed = merge_states(
        &[Probability::constant(0.25), Probability::constant(0.75)],
        &[a.clone(), b.clone()],
    )
    .unwrap();
    assert_eq!(val(&mixed, "v"), 3.0);

    let c = state(&[("w", 1.0)]);
    assert!(matches!(
        merge_states(&[Probability::constant(0.5), Probability::constant(0.5)], &[a.clone(), c]),
        Err(Error::Structural(_))
    ));
    assert!(matches!(
        merge_states(&[Probability::constant(0.5), Probability::constant(0.2)], &[a, b]),
        Err(Error::Parameter(_))
    ));
}

#[test]
fn lane_conditions_blend_per_lane() {
    // y[k] = x[k] > 0 ? 1 : -1, per lane.
    let prog = Statement::if_else(
        Condition::gt(Expr::var("x"), Expr::constant(0.0)),
        Statement::assign("y", Expr::new(|s| Ok(Tensor::full(get(s, "x")?.shape(), 1.0)))),
        Statement::assign("y", Expr::new(|s| Ok(Tensor::full(get(s, "x")?.shape(), -1.0)))),
    );
    let mut s = State::new();
    s.insert("x".into(), Tensor::vector(vec![-2.0, 0.0, 3.0]));
    s.insert("y".into(), Tensor::zeros(&[3]));
    let (out, _) = run(&prog, &s, 1e6, Mode::Hard).unwrap();
    assert_eq!(out["y"].to_vec(), vec![-1.0, -1.0, 1.0]);
    let (out, _) = run(&prog, &s, 1.0, Mode::Relaxed).unwrap();
    let y = out["y"].to_vec();
    assert_eq!(y[1], 0.0);
    assert!((y[2] - (2.0 * stable_sigmoid(3.0) - 1.0)).abs() < 1e-12);

    let mut bad = s.clone();
    bad.insert("y".into(), Tensor::scalar(0.0));
    let scalar_y = Statement::if_then(
        Condition::gt(Expr::var("x"), Expr::constant(0.0)),
        Statement::assign("y", Expr::constant(1.0)),
    );
    assert!(run(&scalar_y, &bad, 1.0, Mode::Relaxed).is_err());
}

#[test]
fn tagged_conditions_are_recorded() {
    let prog = Statement::for_loop(
        "i",
        Expr::constant(3.0),
        Statement::if_then(
            Condition::lt(Expr::var("i"), Expr::constant(1.0)).tagged("small"),
            Statement::seq(vec![]),
        ),
    );
    let (_, r) = run(&prog, &State::new(), 1.0, Mode::Relaxed).unwrap();
    let p: Vec<f64> = r.probabilities("small").iter().map(Tensor::item).collect();
    assert_eq!(p.len(), 3);
    assert_eq!(p[1], 0.5);
    assert!(r.probabilities("other").is_empty());
}

#[test]
fn composite_conditions() {
    let both = Condition::lt(Expr::var("a"), Expr::constant(0.0)).and(Condition::gt(Expr::var("b"), Expr::constant(0.0)));
    let either = Condition::lt(Expr::var("a"), Expr::constant(0.0)).or(Condition::gt(Expr::var("b"), Expr::constant(0.0)).not());
    let s = state(&[("a", 0.0), ("b", 0.0), ("y", 0.0)]);
    let flag = |c: Condition| Statement::if_then(c, Statement::assign("y", Expr::constant(1.0)));
    let (out, _) = run(&flag(both), &s, 1.0, Mode::Relaxed).unwrap();
    assert_eq!(val(&out, "y"), 0.25);
    let (out, _) = run(&flag(either), &s, 1.0, Mode::Relaxed).unwrap();
    assert_eq!(val(&out, "y"), 0.75);
}

#[test]
fn categorical_condition_and_index_statements() {
    let mut s = State::new();
    s.insert("a".into(), Tensor::vector(vec![0.0, 1.0, 0.0]));
    s.insert("b".into(), Tensor::vector(vec![0.2, 0.7, 0.1]));
    s.insert("arr".into(), Tensor::vector(vec![10.0, 20.0, 30.0]));
    s.insert("y".into(), Tensor::scalar(0.0));
    let prog = Statement::seq(vec![
        Statement::if_then(
            Condition::CatEq {
                x: Expr::var("b"),
                y: Expr::var("a"),
                y_one_hot: true,
            },
            Statement::assign("y", Expr::constant(1.0)),
        ),
        Statement::IndexRead {
            target: "r".into(),
            source: "arr".into(),
            index: vec![Expr::var("b")],
            mode: IndexMode::Categorical,
        },
        Statement::IndexAssign {
            source: "arr".into(),
            index: vec![Expr::var("a")],
            value: Expr::constant(0.0),
            mode: IndexMode::Categorical,
        },
    ]);
    let (out, _) = run(&prog, &s, 1.0, Mode::Relaxed).unwrap();
    assert!((val(&out, "y") - 0.7).abs() < 1e-15);
    assert!((val(&out, "r") - 19.0).abs() < 1e-12);
    assert_eq!(out["arr"].to_vec(), vec![10.0, 0.0, 30.0]);
    let (out, _) = run(&prog, &s, 1.0, Mode::Hard).unwrap();
    assert_eq!(val(&out, "y"), 1.0);
    assert_eq!(val(&out, "r"), 20.0);

    let real = Statement::IndexRead {
        target: "r".into(),
        source: "arr".into(),
        index: vec![Expr::constant(1.5)],
        mode: IndexMode::Real { beta: Some(2.0) },
    };
    let (out, _) = run(&real, &s, 1.0, Mode::Relaxed).unwrap();
    let k: Vec<f64> = [-1.5f64, -0.5, 0.5].iter().map(|t| 1.0 / t.cosh().powi(2)).collect();
    let expect = (10.0 * k[0] + 20.0 * k[1] + 30.0 * k[2]) / k.iter().sum::<f64>();
    assert!((val(&out, "r") - expect).abs() < 1e-12);
    let (out, _) = run(&real, &s, 1.0, Mode::Hard).unwrap();
    assert_eq!(val(&out, "r"), 30.0);

    let bad = Statement::IndexAssign {
        source: "arr".into(),
        index: vec![Expr::constant(1.5)],
        value: Expr::constant(0.0),
        mode: IndexMode::Hard,
    };
    assert!(run(&bad, &s, 1.0, Mode::Hard).is_err());
}

#[test]
fn beta_heuristic_counts_comparator_accesses() {
    // Three loop checks (two true, one false) with two operands each.
    let b = beta_heuristic(&count_to(2.0, 10), &state(&[("x", 0.0)])).unwrap();
    assert_eq!(b, 6f64.sqrt());
    assert!(beta_heuristic(&Statement::seq(vec![]), &State::new()).is_err());
}

/// max(x, y) via a relaxed If, nested inside a second If on z.
fn nested_corpus_program() -> Statement {
    Statement::if_else(
        Condition::lt(Expr::var("x"), Expr::var("y")),
        Statement::if_else(
            Condition::gt(Expr::var("z"), Expr::var("y")),
            Statement::assign("out", Expr::var("z")),
            Statement::assign("out", Expr::var("y")),
        ),
        Statement::assign("out", Expr::var("x")),
    )
}

#[test]
fn beta_monotone_convergence() {
    let s = state(&[("x", 0.3), ("y", 1.1), ("z", 0.8), ("out", 0.0)]);
    let (hard, _) = run(&nested_corpus_program(), &s, 1.0, Mode::Hard).unwrap();
    let mut last = f64::INFINITY;
    for beta in [1.0, 10.0, 100.0, 1e4, 1e6] {
        let (soft, _) = run(&nested_corpus_program(), &s, beta, Mode::Relaxed).unwrap();
        let gap = (val(&soft, "out") - val(&hard, "out")).abs();
        assert!(gap <= last, "beta {beta}: {gap} > {last}");
        last = gap;
    }
    assert!(last < 1e-6);
}

proptest! {
    #[test]
    fn merge_of_identical_states_is_fixed_point(v in -1e3f64..1e3, w in 0.0f64..1.0) {
        let s = state(&[("v", v)]);
        let out = merge_states(
            &[Probability::constant(w), Probability::constant(1.0 - w)],
            &[s.clone(), s],
        ).unwrap();
        prop_assert_eq!(val(&out, "v"), v);
    }

    #[test]
    fn relaxed_if_stays_between_branches(x in -5.0f64..5.0, c in -5.0f64..5.0, beta in 0.01f64..100.0) {
        let s = state(&[("x", x), ("c", c), ("y", 0.0)]);
        let (out, _) = run(&midpoint_program(), &s, beta, Mode::Relaxed).unwrap();
        let y = val(&out, "y");
        prop_assert!((3.0..=5.0).contains(&y));
    }
}
