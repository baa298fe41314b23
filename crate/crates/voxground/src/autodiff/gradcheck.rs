//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::store::ParamStore;
use super::tape::{NodeId, Tape};

/// Worst relative error observed for one tensor.
#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub entries_checked: usize,
    /// Entries excluded because the loss is locally non-smooth there
    /// (thresholded pruning or a ReLU kink inside the probe interval).
    pub entries_skipped: usize,
    pub max_rel_err: f64,
    pub worst_entry: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_err: f64,
    pub worst_tensor: String,
    pub total_skipped: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Relative error with a floor so that near-zero gradients compare on an
/// absolute scale instead of amplifying finite-difference noise.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-4);
    (analytic - numeric).abs() / denom
}

/// Compares tape gradients of `f` against central finite differences.
///
/// `f` builds a forward pass on the given tape from the given store and
/// returns the scalar loss node. Up to `entries_per_tensor` entries are
/// checked per tensor, chosen by a seeded draw.
pub fn grad_check<F>(
    f: F,
    store: &mut ParamStore,
    eps: f64,
    entries_per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<NodeId>,
{
    if eps <= 0.0 {
        return Err(Error::InvalidEps);
    }

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = f(&mut tape, store)?;
        tape.check_finite()?;
        tape.value(loss).as_scalar()
    };

    // Two unperturbed evaluations must agree bit-for-bit.
    let base_a = eval(store)?;
    let base_b = eval(store)?;
    if base_a.to_bits() != base_b.to_bits() {
        return Err(Error::DeterminismError(format!(
            "two forward passes returned {base_a} and {base_b}"
        )));
    }

    // Analytic gradients.
    {
        let mut tape = Tape::new();
        let loss = f(&mut tape, store)?;
        tape.backward(loss, store)?;
    }
    let analytic: Vec<(String, Vec<f64>)> = store
        .iter()
        .map(|t| (t.name.clone(), t.grad.data().to_vec()))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport::default();
    for (name, grad) in &analytic {
        let n = grad.len();
        let count = entries_per_tensor.min(n);
        let picks: Vec<usize> = if count == n {
            (0..n).collect()
        } else {
            sample(&mut rng, n, count).into_vec()
        };
        let mut check = TensorCheck {
            name: name.clone(),
            entries_checked: count,
            entries_skipped: 0,
            max_rel_err: 0.0,
            worst_entry: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for &k in &picks {
            let mut central = |h: f64| -> Result<f64> {
                let original = store.get(name)?.values.data()[k];
                store.get_mut(name)?.values.data_mut()[k] = original + h;
                let plus = eval(store)?;
                store.get_mut(name)?.values.data_mut()[k] = original - h;
                let minus = eval(store)?;
                store.get_mut(name)?.values.data_mut()[k] = original;
                Ok((plus - minus) / (2.0 * h))
            };
            let numeric = central(eps)?;
            let err = rel_err(grad[k], numeric);
            if err > 1e-6 {
                // Probe smoothness: a halved step must reproduce the
                // estimate. Hard pruning thresholds and ReLU kinks inside
                // the interval make central differences meaningless at
                // this entry; a wrong backward would stay self-consistent
                // and still be caught below.
                let finer = central(eps * 0.5)?;
                if rel_err(numeric, finer) > 1e-5 {
                    check.entries_skipped += 1;
                    continue;
                }
            }
            if err > check.max_rel_err {
                check.max_rel_err = err;
                check.worst_entry = k;
                check.analytic = grad[k];
                check.numeric = numeric;
            }
        }
        report.total_skipped += check.entries_skipped;
        if check.max_rel_err > report.max_rel_err {
            report.max_rel_err = check.max_rel_err;
            report.worst_tensor = name.clone();
        }
        report.tensors.push(check);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;

    #[test]
    fn linear_layer_is_exact() {
        let mut store = ParamStore::new(11);
        store.init_uniform("w", 3, 2, 3);
        store.init_uniform("b", 1, 2, 3);
        let x = Matrix::from_vec(4, 3, (0..12).map(|i| i as f64 * 0.3 - 1.0).collect()).unwrap();
        let report = grad_check(
            move |tape, store| {
                let xn = tape.constant(x.clone());
                let w = tape.param(store, "w")?;
                let b = tape.param(store, "b")?;
                let y = tape.matmul(xn, w)?;
                let y = tape.add_row(y, b)?;
                Ok(tape.mean_all(y))
            },
            &mut store,
            1e-5,
            64,
            0,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-8, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn mlp_with_relu_matches_finite_differences() {
        let mut store = ParamStore::new(5);
        store.init_uniform("w0", 4, 8, 4);
        store.init_uniform("b0", 1, 8, 4);
        store.init_uniform("w1", 8, 1, 8);
        let x = Matrix::from_vec(6, 4, (0..24).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let report = grad_check(
            move |tape, store| {
                let xn = tape.constant(x.clone());
                let w0 = tape.param(store, "w0")?;
                let b0 = tape.param(store, "b0")?;
                let w1 = tape.param(store, "w1")?;
                let h = tape.matmul(xn, w0)?;
                let h = tape.add_row(h, b0)?;
                let h = tape.relu(h);
                let y = tape.matmul(h, w1)?;
                let s = tape.sigmoid(y);
                Ok(tape.mean_all(s))
            },
            &mut store,
            1e-5,
            64,
            1,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-6, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn zero_eps_rejected() {
        let mut store = ParamStore::new(0);
        store.insert("w", Matrix::scalar(1.0));
        let err = grad_check(
            |tape, store| {
                let w = tape.param(store, "w")?;
                Ok(tape.sum_all(w))
            },
            &mut store,
            0.0,
            8,
            0,
        );
        assert!(matches!(err, Err(Error::InvalidEps)));
    }

    #[test]
    fn nondeterministic_forward_detected() {
        use std::cell::Cell;
        let counter = Cell::new(0.0_f64);
        let mut store = ParamStore::new(0);
        store.insert("w", Matrix::scalar(1.0));
        let err = grad_check(
            move |tape, store| {
                counter.set(counter.get() + 1.0);
                let w = tape.param(store, "w")?;
                let c = tape.scalar(counter.get());
                let p = tape.mul(w, c)?;
                Ok(tape.sum_all(p))
            },
            &mut store,
            1e-5,
            8,
            0,
        );
        assert!(matches!(err, Err(Error::DeterminismError(_))));
    }
}
