//! N-pairs loss and its bidirectional JCCE sum.
//!
//! For row-aligned pairs `(x_i, y_i)`:
//!
//! ```text
//! L(X, Y) = (1/N) Σ_i [ −log( exp(x_i·y_i) / Σ_j exp(x_i·y_j) ) + λ(‖x_i‖² + ‖y_i‖²) ]
//! ```
//!
//! Every `y_j` with `j ≠ i` acts as a negative for anchor `x_i`. The JCCE
//! objective is `L(content, context) + L(context, content)`.

use serde::{Deserialize, Serialize};

use super::{ModelError, Result};
use crate::tensor::{NodeId, ParamStore, Tape, Tensor};

/// Whether the L2 term is averaged over pairs with the softmax term
/// (`mean`, default) or summed over pairs outside the average (`sum`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegScope {
    #[default]
    Mean,
    Sum,
}

pub fn npairs_loss(tape: &mut Tape, x: NodeId, y: NodeId, lambda: f64, scope: RegScope) -> Result<NodeId> {
    let (xs, ys) = (tape.value(x).shape(), tape.value(y).shape());
    if xs != ys {
        return Err(ModelError::Shape { left: xs, right: ys });
    }
    let n = xs.0 as f64;
    let logits = tape.matmul_nt(x, y)?;
    let log_probs = tape.log_softmax_rows(logits);
    let positives = tape.diag(log_probs)?;
    let total = tape.sum(positives);
    let ce = tape.scale(total, -1.0 / n);
    if lambda == 0.0 {
        return Ok(ce);
    }
    let sx = tape.sum_squares(x);
    let sy = tape.sum_squares(y);
    let norms = tape.add(sx, sy)?;
    let reg = tape.scale(
        norms,
        match scope {
            RegScope::Mean => lambda / n,
            RegScope::Sum => lambda,
        },
    );
    Ok(tape.add(ce, reg)?)
}

pub fn jcce_loss(tape: &mut Tape, content: NodeId, context: NodeId, lambda: f64, scope: RegScope) -> Result<NodeId> {
    let a = npairs_loss(tape, content, context, lambda, scope)?;
    let b = npairs_loss(tape, context, content, lambda, scope)?;
    Ok(tape.add(a, b)?)
}

/// [`npairs_loss`] on plain embedding matrices.
pub fn npairs_loss_value(x: &Tensor, y: &Tensor, lambda: f64, scope: RegScope) -> Result<f64> {
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let (xn, yn) = (tape.constant(x.clone()), tape.constant(y.clone()));
    let l = npairs_loss(&mut tape, xn, yn, lambda, scope)?;
    Ok(tape.value(l).item()?)
}

/// [`jcce_loss`] on plain embedding matrices.
pub fn jcce_loss_value(content: &Tensor, context: &Tensor, lambda: f64, scope: RegScope) -> Result<f64> {
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let (a, b) = (tape.constant(content.clone()), tape.constant(context.clone()));
    let l = jcce_loss(&mut tape, a, b, lambda, scope)?;
    Ok(tape.value(l).item()?)
}
