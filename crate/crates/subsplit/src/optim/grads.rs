//! Update directions and step rules.
//!
//! Weight gradients come in two roles: a hidden subnetwork pulls its output
//! toward the coupling target (the output block for the ADMM trainer, the
//! next activation block for the penalty trainer), the last subnetwork
//! descends the data loss. Activation gradients add the coupling terms that
//! tie a block to its neighbors. The output blocks have an exact
//! minimizer, and the duals take a fixed ascent step.

use super::{BatchVars, InnerOpt};
use crate::error::{Error, Result};
use crate::network::{
    backward_from_trace, forward, forward_trace, loss_and_grad, LayerGrads, LossKind, NetworkSpec,
    Subnetwork,
};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightRole {
    /// Match a fixed target block at the subnetwork output.
    Hidden,
    /// Feed the data loss directly.
    Last,
}

/// Gradient of the subnetwork's share of the objective with respect to its
/// own weights. `target` is the output block (or next activation block)
/// for `Hidden`, the label rows for `Last`; `alpha` scales only the hidden
/// penalty.
pub fn weight_gradients(
    loss: LossKind,
    sub: &Subnetwork,
    p: &Tensor,
    target: &Tensor,
    role: WeightRole,
    alpha: f64,
) -> Result<Vec<LayerGrads>> {
    let m = p.rows() as f64;
    let trace = forward_trace(sub, p)?;
    let g = match role {
        WeightRole::Hidden => trace.output.sub(target)?.scale(alpha / m)?,
        WeightRole::Last => loss_and_grad(loss, &trace.output, target)?.1,
    };
    Ok(backward_from_trace(sub, &trace, &g)?.0)
}

/// Gradient of the batch augmented Lagrangian with respect to activation
/// block `i` (so `1 <= i < n`): the subnetwork's own output penalty (or the
/// data loss for the last block) plus the scaled coupling to the upstream
/// output block, `(u[i-1] + rho (p[i] - q[i-1])) / m`.
pub fn p_gradient_admm(
    net: &NetworkSpec,
    vars: &BatchVars,
    i: usize,
    alpha: f64,
    rho: f64,
) -> Result<Tensor> {
    let n = net.splits();
    check_block_index(i, n)?;
    if vars.q.len() + 1 != n || vars.u.len() + 1 != n {
        return Err(Error::Mode {
            op: "p_gradient_admm",
            required: "admm",
            actual: "am",
        });
    }
    let m = vars.rows() as f64;
    let own = own_term(net, vars, i, alpha, |k| &vars.q[k])?;
    let gap = vars.p[i].sub(&vars.q[i - 1])?;
    let coupling = vars.u[i - 1].add(&gap.scale(rho)?)?.scale(1.0 / m)?;
    own.add(&coupling)
}

/// Gradient of the batch penalty objective with respect to activation
/// block `i`: the pull toward the upstream output `f_{i-1}(p[i-1])` plus
/// the subnetwork's own output penalty (or the data loss for the last
/// block). In the sequential sweep `vars.p[i-1]` has already been updated,
/// and this gradient deliberately sees that fresh value.
pub fn p_gradient_am(net: &NetworkSpec, vars: &BatchVars, i: usize, alpha: f64) -> Result<Tensor> {
    let n = net.splits();
    check_block_index(i, n)?;
    if !vars.q.is_empty() || !vars.u.is_empty() {
        return Err(Error::Mode {
            op: "p_gradient_am",
            required: "am",
            actual: "admm",
        });
    }
    let m = vars.rows() as f64;
    let f_prev = forward(&net.subnetworks[i - 1], &vars.p[i - 1])?;
    let pull = vars.p[i].sub(&f_prev)?.scale(alpha / m)?;
    let own = own_term(net, vars, i, alpha, |k| &vars.p[k + 1])?;
    pull.add(&own)
}

fn check_block_index(i: usize, n: usize) -> Result<()> {
    if i == 0 {
        return Err(Error::Contract(
            "activation block 0 is the frozen network input".to_string(),
        ));
    }
    if i >= n {
        return Err(Error::Contract(format!(
            "activation block {i} out of range for {n} subnetworks"
        )));
    }
    Ok(())
}

/// Shared core of both activation gradients: derivative through
/// subnetwork `i` of its own output penalty, or of the data loss when `i`
/// is the last block. `out_target` maps a hidden index to its target.
fn own_term<'a>(
    net: &NetworkSpec,
    vars: &'a BatchVars,
    i: usize,
    alpha: f64,
    out_target: impl Fn(usize) -> &'a Tensor,
) -> Result<Tensor> {
    let n = net.splits();
    let m = vars.rows() as f64;
    let sub = &net.subnetworks[i];
    let trace = forward_trace(sub, &vars.p[i])?;
    let g = if i + 1 < n {
        trace.output.sub(out_target(i))?.scale(alpha / m)?
    } else {
        loss_and_grad(net.loss, &trace.output, &vars.y)?.1
    };
    Ok(backward_from_trace(sub, &trace, &g)?.1)
}

/// Exact minimizer of the output block given everything else:
/// `q = (alpha f + rho m p_next + m u) / (rho m + alpha)`, elementwise,
/// where `m` is the batch row count and `f = f_i(p[i])`.
pub fn update_q_closed_form(
    f: &Tensor,
    p_next: &Tensor,
    u: &Tensor,
    alpha: f64,
    rho: f64,
    m_scale: f64,
) -> Result<Tensor> {
    if f.shape() != p_next.shape() || f.shape() != u.shape() {
        return Err(Error::Dimension {
            op: "update_q_closed_form",
            left: f.shape().to_vec(),
            right: p_next.shape().to_vec(),
        });
    }
    let denom = rho * m_scale + alpha;
    let data = f
        .data()
        .iter()
        .zip(p_next.data())
        .zip(u.data())
        .map(|((&fv, &pv), &uv)| (alpha * fv + rho * m_scale * pv + m_scale * uv) / denom)
        .collect();
    Tensor::from_vec(f.shape(), data)
}

/// Fixed-step dual ascent: `u + rho (p_next - q)`.
pub fn update_duals(u: &Tensor, p_next: &Tensor, q: &Tensor, rho: f64) -> Result<Tensor> {
    u.add(&p_next.sub(q)?.scale(rho)?)
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct LayerMoments {
    m_w: Tensor,
    v_w: Tensor,
    m_b: Tensor,
    v_b: Tensor,
}

/// Adam moments for one subnetwork. The step counter is shared by every
/// layer of the subnetwork and increments once per `apply_step` call.
/// Moment tensors are allocated on the first Adam step so plain SGD runs
/// carry no dead weight copies.
#[derive(Clone, Debug)]
pub struct SubnetAdam {
    t: u64,
    layers: Vec<LayerMoments>,
}

impl SubnetAdam {
    pub fn empty() -> SubnetAdam {
        SubnetAdam {
            t: 0,
            layers: Vec::new(),
        }
    }

    fn ensure(&mut self, sub: &Subnetwork) {
        if self.layers.len() == sub.layers().len() {
            return;
        }
        self.layers = sub
            .layers()
            .iter()
            .map(|l| LayerMoments {
                m_w: Tensor::zeros(l.weight.shape()),
                v_w: Tensor::zeros(l.weight.shape()),
                m_b: Tensor::zeros(l.bias.shape()),
                v_b: Tensor::zeros(l.bias.shape()),
            })
            .collect();
    }
}

/// Applies one weight step to every layer of the subnetwork. Both rules
/// read the step size as `1 / tau1`.
pub fn apply_step(
    sub: &mut Subnetwork,
    grads: &[LayerGrads],
    inner: InnerOpt,
    adam: &mut SubnetAdam,
    tau1: f64,
) -> Result<()> {
    if grads.len() != sub.layers().len() {
        return Err(Error::Parameter {
            op: "apply_step",
            msg: format!("{} gradients for {} layers", grads.len(), sub.layers().len()),
        });
    }
    let lr = 1.0 / tau1;
    match inner {
        InnerOpt::Sgd => {
            for (layer, g) in sub.layers_mut().iter_mut().zip(grads) {
                layer.weight = layer.weight.sub(&g.d_weight.scale(lr)?)?;
                layer.bias = layer.bias.sub(&g.d_bias.scale(lr)?)?;
            }
        }
        InnerOpt::Adam => {
            adam.ensure(sub);
            adam.t += 1;
            let t = adam.t;
            for ((layer, g), mom) in sub.layers_mut().iter_mut().zip(grads).zip(&mut adam.layers) {
                layer.weight = adam_one(&layer.weight, &g.d_weight, &mut mom.m_w, &mut mom.v_w, t, lr)?;
                layer.bias = adam_one(&layer.bias, &g.d_bias, &mut mom.m_b, &mut mom.v_b, t, lr)?;
            }
        }
    }
    Ok(())
}

fn adam_one(
    param: &Tensor,
    grad: &Tensor,
    m: &mut Tensor,
    v: &mut Tensor,
    t: u64,
    lr: f64,
) -> Result<Tensor> {
    let bias1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let bias2 = 1.0 - ADAM_BETA2.powi(t as i32);
    let mut new_m = Vec::with_capacity(param.len());
    let mut new_v = Vec::with_capacity(param.len());
    let mut new_p = Vec::with_capacity(param.len());
    for ((&p, &g), (&mo, &vo)) in param
        .data()
        .iter()
        .zip(grad.data())
        .zip(m.data().iter().zip(v.data()))
    {
        let mn = ADAM_BETA1 * mo + (1.0 - ADAM_BETA1) * g;
        let vn = ADAM_BETA2 * vo + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = mn / bias1;
        let v_hat = vn / bias2;
        new_m.push(mn);
        new_v.push(vn);
        new_p.push(p - lr * m_hat / (v_hat.sqrt() + ADAM_EPS));
    }
    *m = Tensor::from_vec(param.shape(), new_m)?;
    *v = Tensor::from_vec(param.shape(), new_v)?;
    Tensor::from_vec(param.shape(), new_p)
}
