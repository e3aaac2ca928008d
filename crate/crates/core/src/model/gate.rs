use rand::Rng;

use crate::error::Result;
use crate::lstm::INIT_SCALE;
use crate::param::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Shape;

/// A global gating unit `g = σ(W_g x + U_g h + b_g)` with output in `(0,1)^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct GateParams {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
}

impl GateParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        hidden: usize,
        input: usize,
        source: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.add_uniform(format!("{prefix}.w"), Shape::Matrix(hidden, input), INIT_SCALE, rng);
        Self::init_with_input(store, prefix, w, hidden, source, rng)
    }

    /// Reuses an existing input matrix `w`.
    pub fn init_with_input(
        store: &mut ParamStore,
        prefix: &str,
        w: ParamId,
        hidden: usize,
        source: usize,
        rng: &mut impl Rng,
    ) -> Self {
        GateParams {
            w,
            u: store.add_uniform(format!("{prefix}.u"), Shape::Matrix(hidden, source), INIT_SCALE, rng),
            b: store.add_filled(format!("{prefix}.b"), Shape::Vector(hidden), 0.0),
        }
    }
}

/// `σ(W x + U h + b)` with the three matrices given separately, so that the
/// coupled model can pair one task's `W`/`b` with another task's `U`.
pub(crate) fn gate(
    tape: &mut Tape,
    store: &ParamStore,
    (w, u, b): (ParamId, ParamId, ParamId),
    x: Var,
    h: Var,
) -> Result<Var> {
    let w = tape.param(store, w);
    let u = tape.param(store, u);
    let b = tape.param(store, b);
    let wx = tape.matmul(w, x)?;
    let uh = tape.matmul(u, h)?;
    let pre = tape.add(wx, uh)?;
    let pre = tape.add(pre, b)?;
    Ok(tape.sigmoid(pre))
}

/// `g ⊙ (U h)`
pub(crate) fn gated(tape: &mut Tape, store: &ParamStore, g: Var, u: ParamId, h: Var) -> Result<Var> {
    let u = tape.param(store, u);
    let uh = tape.matmul(u, h)?;
    tape.mul(g, uh)
}
