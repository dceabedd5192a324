//! Feed-forward building blocks: dense layers, contiguous subnetworks, the
//! two losses, reverse-mode vector-Jacobian products, and a per-subnetwork
//! Lipschitz upper bound from layer spectral norms.
//!
//! Data layout: activations are rank-2 tensors with one sample per row, so
//! a layer with weight `W` of shape `[d_out, d_in]` maps `X` to
//! `act(X * W^T + bias)`. Hidden layers use ReLU; the final layer of a
//! network emits raw scores through the identity activation. The ReLU
//! derivative at exactly zero is taken to be zero.

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Identity => x,
        }
    }

    fn slope_at(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weight: Tensor, bias: Tensor, activation: Activation) -> Result<DenseLayer> {
        let (d_out, _) = weight.dims2("DenseLayer::new")?;
        if bias.rank() != 1 || bias.len() != d_out {
            return Err(Error::Dimension {
                op: "DenseLayer::new",
                left: weight.shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        Ok(DenseLayer {
            weight,
            bias,
            activation,
        })
    }

    /// Uniform init in +-sqrt(6 / (d_in + d_out)), zero bias.
    pub fn glorot(d_in: usize, d_out: usize, activation: Activation, rng: &mut RngState) -> DenseLayer {
        let bound = (6.0 / (d_in + d_out) as f64).sqrt();
        let data = (0..d_in * d_out).map(|_| rng.uniform(-bound, bound)).collect();
        DenseLayer {
            weight: Tensor::from_vec(&[d_out, d_in], data).expect("finite init"),
            bias: Tensor::zeros(&[d_out]),
            activation,
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn d_out(&self) -> usize {
        self.weight.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// A contiguous stack of dense layers with matching extents.
#[derive(Clone, Debug, PartialEq)]
pub struct Subnetwork {
    layers: Vec<DenseLayer>,
}

impl Subnetwork {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Subnetwork> {
        if layers.is_empty() {
            return Err(Error::Parameter {
                op: "Subnetwork::new",
                msg: "a subnetwork needs at least one layer".to_string(),
            });
        }
        for pair in layers.windows(2) {
            if pair[0].d_out() != pair[1].d_in() {
                return Err(Error::Dimension {
                    op: "Subnetwork::new",
                    left: pair[0].weight.shape().to_vec(),
                    right: pair[1].weight.shape().to_vec(),
                });
            }
        }
        Ok(Subnetwork { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].d_in()
    }

    pub fn d_out(&self) -> usize {
        self.layers[self.layers.len() - 1].d_out()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    SoftmaxCrossEntropy,
    LeastSquares,
}

/// A network split into consecutive subnetworks plus the training loss.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub subnetworks: Vec<Subnetwork>,
    pub loss: LossKind,
}

impl NetworkSpec {
    pub fn new(subnetworks: Vec<Subnetwork>, loss: LossKind) -> Result<NetworkSpec> {
        if subnetworks.is_empty() {
            return Err(Error::Parameter {
                op: "NetworkSpec::new",
                msg: "a network needs at least one subnetwork".to_string(),
            });
        }
        for pair in subnetworks.windows(2) {
            if pair[0].d_out() != pair[1].d_in() {
                return Err(Error::Dimension {
                    op: "NetworkSpec::new",
                    left: vec![pair[0].d_in(), pair[0].d_out()],
                    right: vec![pair[1].d_in(), pair[1].d_out()],
                });
            }
        }
        Ok(NetworkSpec { subnetworks, loss })
    }

    /// Builds an MLP over `layer_widths` = [d_in, hidden..., d_out] and cuts
    /// it into subnetworks starting at the layer indices in `boundaries`
    /// (strictly increasing, each in 1..layer_count). Hidden layers are
    /// ReLU; the final layer is identity.
    pub fn mlp(
        layer_widths: &[usize],
        boundaries: &[usize],
        loss: LossKind,
        rng: &mut RngState,
    ) -> Result<NetworkSpec> {
        if layer_widths.len() < 2 {
            return Err(Error::Parameter {
                op: "NetworkSpec::mlp",
                msg: "need at least input and output widths".to_string(),
            });
        }
        if layer_widths.iter().any(|&w| w == 0) {
            return Err(Error::Parameter {
                op: "NetworkSpec::mlp",
                msg: format!("zero width in {layer_widths:?}"),
            });
        }
        let layer_count = layer_widths.len() - 1;
        let mut starts = vec![0];
        for &b in boundaries {
            if b == 0 || b >= layer_count || *starts.last().unwrap() >= b {
                return Err(Error::Config(format!(
                    "split boundary {b} invalid; boundaries must be strictly increasing layer \
                     indices in 1..={}",
                    layer_count - 1
                )));
            }
            starts.push(b);
        }
        starts.push(layer_count);
        let mut subnetworks = Vec::with_capacity(starts.len() - 1);
        for group in starts.windows(2) {
            let mut layers = Vec::with_capacity(group[1] - group[0]);
            for li in group[0]..group[1] {
                let act = if li + 1 == layer_count {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                layers.push(DenseLayer::glorot(layer_widths[li], layer_widths[li + 1], act, rng));
            }
            subnetworks.push(Subnetwork::new(layers)?);
        }
        NetworkSpec::new(subnetworks, loss)
    }

    pub fn d_in(&self) -> usize {
        self.subnetworks[0].d_in()
    }

    pub fn d_out(&self) -> usize {
        self.subnetworks[self.subnetworks.len() - 1].d_out()
    }

    pub fn splits(&self) -> usize {
        self.subnetworks.len()
    }

    /// Runs the whole chain on `x`.
    pub fn composed_forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut cur = forward(&self.subnetworks[0], x)?;
        for sub in &self.subnetworks[1..] {
            cur = forward(sub, &cur)?;
        }
        Ok(cur)
    }
}

/// Boundary layer indices that cut `layer_widths` into `n` contiguous
/// groups minimizing the largest per-group parameter count.
pub fn balanced_boundaries(layer_widths: &[usize], n: usize) -> Result<Vec<usize>> {
    let layer_count = layer_widths.len().saturating_sub(1);
    if n == 0 || n > layer_count {
        return Err(Error::Config(format!(
            "cannot split {layer_count} layers into {n} subnetworks; valid range is 1..={layer_count}"
        )));
    }
    let costs: Vec<usize> = (0..layer_count)
        .map(|i| layer_widths[i] * layer_widths[i + 1] + layer_widths[i + 1])
        .collect();
    let prefix: Vec<usize> = std::iter::once(0)
        .chain(costs.iter().scan(0, |acc, &c| {
            *acc += c;
            Some(*acc)
        }))
        .collect();
    let seg = |a: usize, b: usize| prefix[b] - prefix[a];
    // best[g][i]: minimal possible maximum group cost when the first i
    // layers are covered by g groups.
    let inf = usize::MAX;
    let mut best = vec![vec![inf; layer_count + 1]; n + 1];
    let mut cut = vec![vec![0usize; layer_count + 1]; n + 1];
    best[0][0] = 0;
    for g in 1..=n {
        for i in g..=layer_count {
            for j in (g - 1)..i {
                if best[g - 1][j] == inf {
                    continue;
                }
                let cand = best[g - 1][j].max(seg(j, i));
                if cand < best[g][i] {
                    best[g][i] = cand;
                    cut[g][i] = j;
                }
            }
        }
    }
    let mut boundaries = Vec::with_capacity(n - 1);
    let mut i = layer_count;
    for g in (2..=n).rev() {
        i = cut[g][i];
        boundaries.push(i);
    }
    boundaries.reverse();
    Ok(boundaries)
}

/// Per-layer inputs and pre-activations of one subnetwork pass.
pub(crate) struct ForwardTrace {
    pub inputs: Vec<Tensor>,
    pub preacts: Vec<Tensor>,
    pub output: Tensor,
}

pub(crate) fn forward_trace(sub: &Subnetwork, p: &Tensor) -> Result<ForwardTrace> {
    let (_, c) = p.dims2("forward")?;
    if c != sub.d_in() {
        return Err(Error::Dimension {
            op: "forward",
            left: p.shape().to_vec(),
            right: vec![sub.d_in()],
        });
    }
    let mut inputs = Vec::with_capacity(sub.layers().len());
    let mut preacts = Vec::with_capacity(sub.layers().len());
    let mut cur = p.clone();
    for layer in sub.layers() {
        let z = cur.matmul_bt(&layer.weight)?.add_row_bias(&layer.bias)?;
        let a = z.map(|v| layer.activation.apply(v))?;
        inputs.push(cur);
        preacts.push(z);
        cur = a;
    }
    Ok(ForwardTrace {
        inputs,
        preacts,
        output: cur,
    })
}

/// Applies one subnetwork to a batch (rows are samples).
pub fn forward(sub: &Subnetwork, p: &Tensor) -> Result<Tensor> {
    Ok(forward_trace(sub, p)?.output)
}

/// Smallest |pre-activation| over all layers of one pass; large values mean
/// the pass is safely away from the ReLU kink, which matters for finite
/// difference checks.
pub fn min_abs_preact(sub: &Subnetwork, p: &Tensor) -> Result<f64> {
    let trace = forward_trace(sub, p)?;
    let mut best = f64::INFINITY;
    for (z, layer) in trace.preacts.iter().zip(sub.layers()) {
        if layer.activation == Activation::Relu {
            for &v in z.data() {
                best = best.min(v.abs());
            }
        }
    }
    Ok(best)
}

#[derive(Clone, Debug)]
pub struct LayerGrads {
    pub d_weight: Tensor,
    pub d_bias: Tensor,
}

/// Reverse pass through one subnetwork: given the cotangent of the output,
/// returns per-layer parameter gradients (in layer order) and the cotangent
/// of the input. `vjp_weights` and `vjp_input` are views of this single
/// engine, so every caller shares one arithmetic path.
pub fn backward(sub: &Subnetwork, p: &Tensor, g_out: &Tensor) -> Result<(Vec<LayerGrads>, Tensor)> {
    let trace = forward_trace(sub, p)?;
    backward_from_trace(sub, &trace, g_out)
}

pub(crate) fn backward_from_trace(
    sub: &Subnetwork,
    trace: &ForwardTrace,
    g_out: &Tensor,
) -> Result<(Vec<LayerGrads>, Tensor)> {
    if g_out.shape() != trace.output.shape() {
        return Err(Error::Dimension {
            op: "backward",
            left: g_out.shape().to_vec(),
            right: trace.output.shape().to_vec(),
        });
    }
    let mut grads_rev = Vec::with_capacity(sub.layers().len());
    let mut g = g_out.clone();
    for (li, layer) in sub.layers().iter().enumerate().rev() {
        let z = &trace.preacts[li];
        let mut g_pre = g;
        {
            // scale the cotangent by the activation slope at the preactivation
            let gp = g_pre.data().to_vec();
            let slopes = z.map(|v| layer.activation.slope_at(v))?;
            let mixed: Vec<f64> = gp.iter().zip(slopes.data()).map(|(&a, &s)| a * s).collect();
            g_pre = Tensor::from_vec(z.shape(), mixed)?;
        }
        let d_weight = g_pre.matmul_at(&trace.inputs[li])?;
        let d_bias = g_pre.col_sums()?;
        g = g_pre.matmul(&layer.weight)?;
        grads_rev.push(LayerGrads { d_weight, d_bias });
    }
    grads_rev.reverse();
    Ok((grads_rev, g))
}

/// Gradient of `sum(g . forward(sub, p))` with respect to `p`.
pub fn vjp_input(sub: &Subnetwork, p: &Tensor, g: &Tensor) -> Result<Tensor> {
    Ok(backward(sub, p, g)?.1)
}

/// Gradient of `sum(g . forward(sub, p))` with respect to every weight and
/// bias, in layer order.
pub fn vjp_weights(sub: &Subnetwork, p: &Tensor, g: &Tensor) -> Result<Vec<LayerGrads>> {
    Ok(backward(sub, p, g)?.0)
}

/// Mean loss over the rows of `z` and its gradient with respect to `z`.
///
/// Cross entropy expects strictly one-hot targets and uses the shifted
/// softmax for stability; least squares is `sum((z - y)^2) / (2 rows)`.
pub fn loss_and_grad(kind: LossKind, z: &Tensor, y: &Tensor) -> Result<(f64, Tensor)> {
    let (rows, cols) = z.dims2("loss_and_grad")?;
    if y.shape() != z.shape() {
        return Err(Error::Dimension {
            op: "loss_and_grad",
            left: z.shape().to_vec(),
            right: y.shape().to_vec(),
        });
    }
    if rows == 0 {
        return Err(Error::Parameter {
            op: "loss_and_grad",
            msg: "empty batch".to_string(),
        });
    }
    let m = rows as f64;
    match kind {
        LossKind::LeastSquares => {
            let diff = z.sub(y)?;
            let loss = diff.frobenius_sq() / (2.0 * m);
            let grad = diff.scale(1.0 / m)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite { op: "loss_and_grad" });
            }
            Ok((loss, grad))
        }
        LossKind::SoftmaxCrossEntropy => {
            let mut grad = vec![0.0; rows * cols];
            let mut total = 0.0;
            for i in 0..rows {
                let zr = z.row(i);
                let yr = y.row(i);
                let mut label = None;
                for (j, &v) in yr.iter().enumerate() {
                    if v == 1.0 {
                        if label.is_some() {
                            return Err(Error::Parameter {
                                op: "loss_and_grad",
                                msg: format!("row {i}: more than one active class"),
                            });
                        }
                        label = Some(j);
                    } else if v != 0.0 {
                        return Err(Error::Parameter {
                            op: "loss_and_grad",
                            msg: format!("row {i}: target is not one-hot"),
                        });
                    }
                }
                let label = label.ok_or_else(|| Error::Parameter {
                    op: "loss_and_grad",
                    msg: format!("row {i}: no active class"),
                })?;
                let max = zr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum_exp: f64 = zr.iter().map(|&v| (v - max).exp()).sum();
                let lse = max + sum_exp.ln();
                total += lse - zr[label];
                for j in 0..cols {
                    let soft = (zr[j] - lse).exp();
                    grad[i * cols + j] = (soft - yr[j]) / m;
                }
            }
            let loss = total / m;
            if !loss.is_finite() {
                return Err(Error::NonFinite { op: "loss_and_grad" });
            }
            Ok((loss, Tensor::from_vec(&[rows, cols], grad)?))
        }
    }
}

/// Largest singular value by power iteration on `W^T W`, run for at least
/// 30 rounds and until the estimate moves by less than 1e-10 relative.
pub fn spectral_norm(w: &Tensor) -> f64 {
    let (rows, cols) = match w.dims2("spectral_norm") {
        Ok(d) => d,
        Err(_) => return 0.0,
    };
    if w.data().iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    // deterministic pseudo-random start vector, biased away from any axis
    let mut state = 0x9E37_79B9_7F4A_7C15u64 ^ ((rows as u64) << 32) ^ cols as u64;
    let mut v: Vec<f64> = (0..cols)
        .map(|_| {
            state = state
                .wrapping_mul(0xD129_0C3A_87F1_D2CD)
                .wrapping_add(0x1234_5678_9ABC_DEF1);
            0.5 + (state >> 11) as f64 * (0.5 / (1u64 << 53) as f64)
        })
        .collect();
    normalize(&mut v);
    let mut sigma = 0.0;
    let mut u = vec![0.0; rows];
    for iter in 0..300 {
        // u = W v
        for i in 0..rows {
            let row = w.row(i);
            u[i] = row.iter().zip(&v).map(|(&a, &b)| a * b).sum();
        }
        let new_sigma = u.iter().map(|&x| x * x).sum::<f64>().sqrt();
        if new_sigma == 0.0 {
            // v landed in the null space; nudge it and keep going
            for (k, x) in v.iter_mut().enumerate() {
                *x += 1.0 / (k + 1) as f64;
            }
            normalize(&mut v);
            continue;
        }
        // v = W^T u, renormalized
        for x in v.iter_mut() {
            *x = 0.0;
        }
        for i in 0..rows {
            let row = w.row(i);
            for (vx, &a) in v.iter_mut().zip(row) {
                *vx += a * u[i];
            }
        }
        normalize(&mut v);
        let rel = (new_sigma - sigma).abs() / new_sigma.max(1e-300);
        sigma = new_sigma;
        if iter >= 29 && rel <= 1e-10 {
            break;
        }
    }
    sigma
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|&x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}

/// Upper bound on the Lipschitz constant of `p -> forward(sub, p)`: the
/// product over layers of the spectral norm of each weight matrix, each
/// inflated by 1.001 to absorb power-iteration convergence error. ReLU and
/// identity are 1-Lipschitz, and biases do not affect the constant.
pub fn lipschitz_upper_bound(sub: &Subnetwork) -> f64 {
    sub.layers()
        .iter()
        .map(|l| spectral_norm(&l.weight) * 1.001)
        .product()
}
