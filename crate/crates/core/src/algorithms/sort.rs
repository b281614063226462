use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::program::{beta_heuristic, run, Condition, Expr, IndexMode, Mode, RunReport, State, Statement};
use crate::relax::Probability;

/// Output of a bubble-sort run.
#[derive(Debug, Clone)]
pub struct SortResult {
    pub relaxed_sequence: Tensor,
    /// `1 - prod (1 - p)` over every swap probability evaluated.
    pub unsorted_probability: Probability,
    /// The `loss` variable of the program, set to 1 inside the swap branch and
    /// blended like any other variable.
    pub blended_loss: Tensor,
    pub swap_probabilities: Vec<Tensor>,
    pub report: RunReport,
}

fn index_plus(counter: &str, k: f64) -> Expr {
    Expr::var(counter).add_const(k)
}

/// The bubble-sort program over variable `A`.
///
/// `a_1`, `a_2` and `loss` must be bound before the run since the swap
/// branch writes them.
pub fn bubble_sort_program(len: usize) -> Statement {
    let swap = Statement::seq(vec![
        Statement::IndexRead {
            target: "a_1".into(),
            source: "A".into(),
            index: vec![index_plus("i", 1.0)],
            mode: IndexMode::Hard,
        },
        Statement::IndexRead {
            target: "a_2".into(),
            source: "A".into(),
            index: vec![Expr::var("i")],
            mode: IndexMode::Hard,
        },
        Statement::IndexAssign {
            source: "A".into(),
            index: vec![Expr::var("i")],
            value: Expr::var("a_1"),
            mode: IndexMode::Hard,
        },
        Statement::IndexAssign {
            source: "A".into(),
            index: vec![index_plus("i", 1.0)],
            value: Expr::var("a_2"),
            mode: IndexMode::Hard,
        },
        Statement::assign("swapped", Expr::constant(1.0)),
        Statement::assign("loss", Expr::constant(1.0)),
    ]);
    let pass = Statement::seq(vec![
        Statement::assign("swapped", Expr::constant(0.0)),
        Statement::for_loop(
            "i",
            Expr::var("n"),
            Statement::if_then(
                Condition::gt(Expr::elem("A", Expr::var("i")), Expr::elem("A", index_plus("i", 1.0)))
                    .tagged("swap"),
                swap,
            ),
        ),
        Statement::assign("n", index_plus("n", -1.0)),
    ]);
    // Each pass shortens the unsorted prefix by one, so `len` passes plus the
    // final check always suffice.
    Statement::while_with(Condition::prob(Expr::var("swapped")), pass, len + 1, 1e-12)
}

fn initial_state(scores: &Tensor) -> State {
    let n = scores.len().saturating_sub(1);
    let mut s = State::new();
    s.insert("A".into(), scores.clone());
    s.insert("n".into(), Tensor::scalar(n as f64));
    s.insert("swapped".into(), Tensor::scalar(1.0));
    s.insert("a_1".into(), Tensor::scalar(0.0));
    s.insert("a_2".into(), Tensor::scalar(0.0));
    s.insert("loss".into(), Tensor::scalar(0.0));
    s
}

/// Runs relaxed (or hard) bubble sort on a vector of scores.
pub fn bubble_sort(scores: &Tensor, beta: f64, mode: Mode) -> Result<SortResult> {
    if scores.rank() != 1 || scores.is_empty() {
        return Err(Error::structural("bubble sort needs a nonempty vector"));
    }
    let program = bubble_sort_program(scores.len());
    let (out, report) = run(&program, &initial_state(scores), beta, mode)?;
    let swaps = report.probabilities("swap").to_vec();
    let mut stay = Tensor::scalar(1.0);
    for p in &swaps {
        stay = stay.mul(&p.one_minus())?;
    }
    Ok(SortResult {
        relaxed_sequence: out["A"].clone(),
        unsorted_probability: Probability::new(stay.one_minus()),
        blended_loss: out["loss"].clone(),
        swap_probabilities: swaps,
        report,
    })
}

/// The square-root access-count heuristic for sorting `scores`.
pub fn heuristic_beta(scores: &Tensor) -> Result<f64> {
    beta_heuristic(&bubble_sort_program(scores.len()), &initial_state(scores))
}

/// Swaps made by exact bubble sort, counted from the hard-mode program.
pub fn swap_count_hard(scores: &[f64]) -> Result<usize> {
    let r = bubble_sort(&Tensor::vector(scores.to_vec()), 1.0, Mode::Hard)?;
    Ok(r.swap_probabilities.iter().filter(|p| p.item() == 1.0).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::reference;
    use crate::autodiff::stable_sigmoid;

    #[test]
    fn sorted_input_has_zero_loss() {
        let r = bubble_sort(&Tensor::vector(vec![1.0, 2.0, 5.0]), 1.0, Mode::Hard).unwrap();
        assert_eq!(r.unsorted_probability.value(), 0.0);
        assert_eq!(r.relaxed_sequence.to_vec(), vec![1.0, 2.0, 5.0]);
        assert_eq!(r.blended_loss.item(), 0.0);
    }

    #[test]
    fn reversed_three() {
        let r = bubble_sort(&Tensor::vector(vec![3.0, 2.0, 1.0]), 1.0, Mode::Hard).unwrap();
        assert_eq!(r.relaxed_sequence.to_vec(), vec![1.0, 2.0, 3.0]);
        assert_eq!(r.unsorted_probability.value(), 1.0);
        assert_eq!(swap_count_hard(&[3.0, 2.0, 1.0]).unwrap(), 3);
        assert_eq!(swap_count_hard(&[4.0, 3.0, 2.0, 1.0]).unwrap(), 6);
        assert_eq!(swap_count_hard(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 0);
    }

    #[test]
    fn two_element_loss_closed_form() {
        // Pass 1 compares once with p = sigma(a0 - a1). If it swapped, pass 2
        // runs with n = 0 and compares nothing.
        let l = |a: f64, b: f64| {
            bubble_sort(&Tensor::vector(vec![a, b]), 1.0, Mode::Relaxed)
                .unwrap()
                .unsorted_probability
                .value()
        };
        assert!((l(1.0, 2.0) - stable_sigmoid(-1.0)).abs() < 1e-15);
        assert!((l(2.0, 1.0) - stable_sigmoid(1.0)).abs() < 1e-15);
        assert!(l(1.0, 2.0) < l(2.0, 1.0));
    }

    #[test]
    fn blended_loss_agrees_with_product_formula_in_the_hard_limit() {
        for v in [vec![2.0, 1.0, 3.0], vec![1.0, 2.0, 3.0], vec![3.0, 1.0, 2.0, 0.5]] {
            let r = bubble_sort(&Tensor::vector(v), 1e6, Mode::Relaxed).unwrap();
            assert_eq!(r.blended_loss.item(), r.unsorted_probability.value());
        }
    }

    #[test]
    fn relaxed_sequence_is_a_convex_mix() {
        let v = vec![0.3, -1.0, 2.0, 0.9, 0.1];
        let r = bubble_sort(&Tensor::vector(v.clone()), 2.0, Mode::Relaxed).unwrap();
        let total: f64 = r.relaxed_sequence.value().iter().sum();
        assert!((total - v.iter().sum::<f64>()).abs() < 1e-9);
        assert!((0.0..=1.0).contains(&r.unsorted_probability.value()));
    }

    #[test]
    fn hard_mode_matches_plain_bubble_sort() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let n = rng.random_range(1..9);
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let (sorted, swaps) = reference::bubble_sort(&v);
            let r = bubble_sort(&Tensor::vector(v.clone()), 1.0, Mode::Hard).unwrap();
            assert_eq!(r.relaxed_sequence.to_vec(), sorted);
            assert_eq!(swap_count_hard(&v).unwrap(), swaps);
        }
    }
}
