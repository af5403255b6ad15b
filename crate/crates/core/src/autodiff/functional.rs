//! Differentiation entry points over flat parameter vectors.
//!
//! A [`ScalarFn`] builds a scalar loss on a fresh tape from the named
//! segments of a parameter vector and a batch. [`value`], [`grad`] and
//! [`hvp`] evaluate it, differentiate it once, and form Hessian-vector
//! products, either exactly (by differentiating the recorded gradient
//! computation) or by central differences of two gradient calls.

use std::sync::Arc;

use crate::autodiff::params::{Layout, ParamVector};
use crate::autodiff::tape::{Tape, Var};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// The parameter segments of one evaluation, as tape variables.
pub struct SegmentVars<S: Scalar> {
    names: Vec<String>,
    vars: Vec<Var<S>>,
}

impl<S: Scalar> SegmentVars<S> {
    fn from_params(tape: &Tape<S>, p: &ParamVector<S>) -> Self {
        let mut names = Vec::new();
        let mut vars = Vec::new();
        for seg in p.layout().segments() {
            names.push(seg.name.clone());
            vars.push(tape.leaf(p.segment_tensor(seg)));
        }
        SegmentVars { names, vars }
    }

    /// The variable holding segment `name`. Panics on unknown names;
    /// builders only ask for segments of their own layout.
    pub fn var(&self, name: &str) -> &Var<S> {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("no segment `{name}`"));
        &self.vars[i]
    }

    pub fn all(&self) -> &[Var<S>] {
        &self.vars
    }
}

/// A differentiable scalar function of a parameter vector and a batch.
///
/// `build` must be deterministic: the same parameters and batch always
/// record the same trace and produce bit-identical values.
pub trait ScalarFn<S: Scalar> {
    /// The parameter layout this function expects.
    fn layout(&self) -> &Arc<Layout>;

    /// Records the loss on `tape` and returns the scalar output variable.
    fn build(&self, tape: &Tape<S>, params: &SegmentVars<S>, batch: &Batch<S>) -> Result<Var<S>>;
}

/// How [`hvp`] forms the Hessian-vector product.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HvpBackend<S> {
    /// Differentiate the recorded gradient computation (double backprop).
    Exact,
    /// Central difference of two gradient evaluations; `None` picks
    /// `1e-4 * (1 + |p|_inf)`.
    FiniteDifference { epsilon: Option<S> },
}

/// The default perturbation scale for finite-difference products.
pub fn fd_epsilon_default<S: Scalar>(p: &ParamVector<S>) -> S {
    S::from_f64_lossy(1e-4) * (S::one() + p.inf_norm())
}

fn check_layout<S: Scalar>(f: &dyn ScalarFn<S>, p: &ParamVector<S>) -> Result<()> {
    if !Arc::ptr_eq(f.layout(), p.layout()) && !f.layout().same_as(p.layout()) {
        return Err(Error::LayoutMismatch {
            expected: f.layout().describe(),
            found: p.layout().describe(),
        });
    }
    Ok(())
}

fn build_on_tape<S: Scalar>(
    f: &dyn ScalarFn<S>,
    p: &ParamVector<S>,
    batch: &Batch<S>,
) -> Result<(Tape<S>, SegmentVars<S>, Var<S>)> {
    check_layout(f, p)?;
    let tape = Tape::new();
    let params = SegmentVars::from_params(&tape, p);
    let loss = f.build(&tape, &params, batch)?;
    if loss.shape() != [1] {
        return Err(Error::DimensionMismatch {
            what: "scalar function output",
            expected: 1,
            found: loss.shape().iter().product(),
        });
    }
    Ok((tape, params, loss))
}

fn collect_grads<S: Scalar>(
    layout: &Arc<Layout>,
    grads: &[Var<S>],
) -> ParamVector<S> {
    let mut out = ParamVector::zeros(Arc::clone(layout));
    for (seg, grad) in layout.segments().iter().zip(grads) {
        let tensor = grad.value();
        out.values_mut()[seg.offset..seg.offset + seg.len()]
            .copy_from_slice(tensor.data());
    }
    out
}

/// Evaluates `f(p, batch)`.
pub fn value<S: Scalar>(f: &dyn ScalarFn<S>, p: &ParamVector<S>, batch: &Batch<S>) -> Result<S> {
    let (_tape, _params, loss) = build_on_tape(f, p, batch)?;
    Ok(loss.item())
}

/// Evaluates `f` and its gradient in one recorded pass.
pub fn value_and_grad<S: Scalar>(
    f: &dyn ScalarFn<S>,
    p: &ParamVector<S>,
    batch: &Batch<S>,
) -> Result<(S, ParamVector<S>)> {
    let (tape, params, loss) = build_on_tape(f, p, batch)?;
    let grads = tape.gradients(&loss, params.all());
    Ok((loss.item(), collect_grads(p.layout(), &grads)))
}

/// The gradient of `f` at `p`, with `p`'s layout.
pub fn grad<S: Scalar>(
    f: &dyn ScalarFn<S>,
    p: &ParamVector<S>,
    batch: &Batch<S>,
) -> Result<ParamVector<S>> {
    value_and_grad(f, p, batch).map(|(_, g)| g)
}

/// The Hessian-vector product `H(p) · v` of `f` at `p`.
///
/// The exact backend backpropagates once to record the gradient as a
/// tape expression, dots it with the constant `v`, and backpropagates
/// again; the Hessian itself is never materialized.
pub fn hvp<S: Scalar>(
    f: &dyn ScalarFn<S>,
    p: &ParamVector<S>,
    batch: &Batch<S>,
    v: &ParamVector<S>,
    backend: HvpBackend<S>,
) -> Result<ParamVector<S>> {
    check_layout(f, p)?;
    if !Arc::ptr_eq(v.layout(), p.layout()) && !v.layout().same_as(p.layout()) {
        return Err(Error::LayoutMismatch {
            expected: p.layout().describe(),
            found: v.layout().describe(),
        });
    }
    match backend {
        HvpBackend::Exact => {
            let (tape, params, loss) = build_on_tape(f, p, batch)?;
            tape.check_second_order(&loss)?;
            let grads = tape.gradients(&loss, params.all());
            let mut g_dot_v: Option<Var<S>> = None;
            for (seg, grad) in p.layout().segments().iter().zip(&grads) {
                let direction = tape.leaf(v.segment_tensor(seg));
                let term = grad.dot(&direction);
                g_dot_v = Some(match g_dot_v {
                    Some(acc) => acc.add(&term),
                    None => term,
                });
            }
            let g_dot_v = g_dot_v.expect("layout has at least one segment");
            let hv = tape.gradients(&g_dot_v, params.all());
            Ok(collect_grads(p.layout(), &hv))
        }
        HvpBackend::FiniteDifference { epsilon } => {
            let eps = epsilon.unwrap_or_else(|| fd_epsilon_default(p));
            let mut plus = p.clone();
            plus.axpy(eps, v);
            let mut minus = p.clone();
            minus.axpy(-eps, v);
            let g_plus = grad(f, &plus, batch)?;
            let g_minus = grad(f, &minus, batch)?;
            let two_eps = eps + eps;
            Ok(g_plus.sub(&g_minus).scale(S::one() / two_eps))
        }
    }
}
