use super::{NodeId, ParamStore, Result, Tape};

/// Outcome of comparing tape gradients against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub compared: usize,
    /// Coordinates skipped because a perturbation crossed a ReLU kink.
    pub excluded: usize,
}

/// Denominator floor for the relative error, so that coordinates whose true
/// gradient is ~0 are judged on absolute error instead.
const REL_FLOOR: f64 = 1e-6;

/// Checks every scalar parameter in `store` with central differences
/// `(f(θ+h) − f(θ−h)) / 2h` against the gradient from one backward pass.
///
/// `forward` must be deterministic (no dropout). Coordinates where either
/// perturbation changes the ReLU activation pattern are excluded: the
/// function is not differentiable across that kink.
pub fn finite_diff_check<F>(store: &mut ParamStore, h: f64, mut forward: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape) -> Result<NodeId>,
{
    let (analytic, base_sig) = {
        let mut tape = Tape::new(store);
        let loss = forward(&mut tape)?;
        let sig = tape.relu_signature();
        (tape.backward(loss)?, sig)
    };

    let mut eval = |store: &ParamStore| -> Result<(f64, u64)> {
        let mut tape = Tape::new(store);
        let loss = forward(&mut tape)?;
        Ok((tape.value(loss).item()?, tape.relu_signature()))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        compared: 0,
        excluded: 0,
    };
    for p in 0..store.len() {
        let id = store.params()[p].id;
        for k in 0..store.value(id).len() {
            let orig = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = orig + h;
            let (plus, sig_plus) = eval(store)?;
            store.value_mut(id).data_mut()[k] = orig - h;
            let (minus, sig_minus) = eval(store)?;
            store.value_mut(id).data_mut()[k] = orig;
            if sig_plus != base_sig || sig_minus != base_sig {
                report.excluded += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.get(id).data()[k];
            let denom = a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.max_rel_error = report.max_rel_error.max((a - numeric).abs() / denom);
            report.compared += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn linear_loss_is_exact() {
        let mut store = ParamStore::new();
        let w = store.add(Tensor::from_rows(&[[0.3, -1.2, 2.0]]));
        let x = Tensor::from_rows(&[[1.0], [2.0], [-0.5]]);
        let report = finite_diff_check(&mut store, 1e-5, |tape| {
            let wn = tape.param(w);
            let xn = tape.constant(x.clone());
            let y = tape.matmul(wn, xn)?;
            Ok(tape.sum(y))
        })
        .unwrap();
        assert_eq!(report.compared, 3);
        assert!(report.max_rel_error < 1e-10, "{report:?}");
    }

    #[test]
    fn relu_kink_is_excluded() {
        let mut store = ParamStore::new();
        let p = store.add(Tensor::from_rows(&[[0.0, 1.0]]));
        let report = finite_diff_check(&mut store, 1e-5, |tape| {
            let n = tape.param(p);
            let r = tape.relu(n);
            Ok(tape.sum(r))
        })
        .unwrap();
        assert_eq!(report.excluded, 1);
        assert_eq!(report.compared, 1);
        assert!(report.max_rel_error < 1e-9);
    }

    #[test]
    fn every_op_matches_finite_differences() {
        use crate::tensor::SparseRows;
        let mut store = ParamStore::new();
        let a = store.add(Tensor::from_rows(&[[0.2, -0.4, 0.9], [1.1, 0.3, -0.7]]));
        let b = store.add(Tensor::from_rows(&[[0.5, -0.1, 0.2], [0.05, 0.6, -0.3]]));
        let w = store.add(Tensor::from_rows(&[[0.4, -0.2], [0.1, 0.3], [-0.5, 0.25], [0.7, 0.1]]));
        let bias = store.add(Tensor::from_rows(&[[0.05, -0.15]]));
        let report = finite_diff_check(&mut store, 1e-5, |tape| {
            let an = tape.param(a);
            let bn = tape.param(b);
            let logits = tape.matmul_nt(an, bn)?;
            let lsm = tape.log_softmax_rows(logits);
            let d = tape.diag(lsm)?;
            let ce = tape.sum(d);
            let sq = tape.sum_squares(an);
            let sq = tape.scale(sq, 0.3);
            let mut rows = SparseRows::new(4);
            rows.push_row(&[0, 3], &[1.0, 1.0])?;
            rows.push_row(&[1, 2], &[1.0, 2.0])?;
            let wn = tape.param(w);
            let h = tape.sparse_matmul(rows, wn)?;
            let bn2 = tape.param(bias);
            let h = tape.add_row(h, bn2)?;
            let h = tape.relu(h);
            let bt = tape.constant(Tensor::from_rows(&[[1.0], [-2.0]]));
            let z = tape.matmul(h, bt)?;
            let bce = tape.bce_with_logits(z, vec![1.0, 0.0])?;
            let s = tape.add(ce, sq)?;
            tape.add(s, bce)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
        assert!(report.compared > 20);
    }
}
