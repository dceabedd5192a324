//! Training state and objectives for the splitting trainers.
//!
//! Index convention: a network of `n` subnetworks keeps one activation
//! block per cut plus the input. `p[i]` is the input fed to subnetwork
//! `i`; `p[0]` is the training data and is never updated. The ADMM-style
//! trainer additionally keeps an output block `q[i]` and a dual block
//! `u[i]` attached to the output of subnetwork `i` for `i < n - 1`. All
//! blocks span the full training set; an epoch samples row indices and
//! reads/writes just those rows.

pub mod epochs;
pub mod grads;

use crate::error::{Error, Result};
use crate::network::{forward, loss_and_grad, NetworkSpec};
use crate::rng::RngState;
use crate::tensor::Tensor;
use grads::SubnetAdam;

/// Penalty and step-size knobs shared by every trainer. `tau1` and `tau2`
/// are inverse step sizes: weight steps move by `grad / tau1`, activation
/// steps by `grad / tau2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyperparams {
    pub alpha: f64,
    pub rho: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub batch: usize,
}

impl Default for Hyperparams {
    fn default() -> Hyperparams {
        Hyperparams {
            alpha: 1.0,
            rho: 1.0,
            tau1: 100.0,
            tau2: 100.0,
            batch: 120,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("rho", self.rho),
            ("tau1", self.tau1),
            ("tau2", self.tau2),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.batch == 0 {
            return Err(Error::Config("batch size must be at least 1".to_string()));
        }
        Ok(())
    }
}

/// Weight step rule used inside the W phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InnerOpt {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AuxMode {
    /// Augmented-Lagrangian splitting with output and dual blocks.
    Admm,
    /// Penalty-only alternating minimization; only activation blocks.
    Am,
}

impl AuxMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AuxMode::Admm => "admm",
            AuxMode::Am => "am",
        }
    }
}

/// Full-dataset auxiliary variables of one training run.
#[derive(Clone, Debug)]
pub struct AuxState {
    mode: AuxMode,
    /// `p[i]` is the input block of subnetwork `i`; `p[0]` is frozen.
    pub p: Vec<Tensor>,
    /// `q[i]` is the output block of subnetwork `i` (`Admm` only).
    pub q: Vec<Tensor>,
    /// `u[i]` is the dual block paired with `q[i]` (`Admm` only).
    pub u: Vec<Tensor>,
}

impl AuxState {
    /// Chains the data through the network so every residual starts at
    /// zero: `p[i+1] = f_i(p[i])`, `q[i] = p[i+1]`, duals zero.
    pub fn warm_start(net: &NetworkSpec, inputs: &Tensor, mode: AuxMode) -> Result<AuxState> {
        let n = net.splits();
        let mut p = Vec::with_capacity(n);
        p.push(inputs.clone());
        for i in 0..n - 1 {
            let next = forward(&net.subnetworks[i], &p[i])?;
            p.push(next);
        }
        let (q, u) = match mode {
            AuxMode::Admm => {
                let q: Vec<Tensor> = p[1..].to_vec();
                let u = q.iter().map(|t| Tensor::zeros(t.shape())).collect();
                (q, u)
            }
            AuxMode::Am => (Vec::new(), Vec::new()),
        };
        Ok(AuxState { mode, p, q, u })
    }

    pub fn mode(&self) -> AuxMode {
        self.mode
    }

    pub fn splits(&self) -> usize {
        self.p.len()
    }

    pub fn rows(&self) -> usize {
        self.p[0].rows()
    }

    /// Copies the batch rows of every block, plus the batch labels.
    pub fn gather(&self, labels: &Tensor, idx: &[usize]) -> Result<BatchVars> {
        let p = self.p.iter().map(|t| t.gather_rows(idx)).collect::<Result<Vec<_>>>()?;
        let q = self.q.iter().map(|t| t.gather_rows(idx)).collect::<Result<Vec<_>>>()?;
        let u = self.u.iter().map(|t| t.gather_rows(idx)).collect::<Result<Vec<_>>>()?;
        let y = labels.gather_rows(idx)?;
        Ok(BatchVars { p, q, u, y })
    }

    /// Writes the batch rows back. The input block `p[0]` stays untouched.
    pub fn scatter(&mut self, vars: &BatchVars, idx: &[usize]) -> Result<()> {
        for (dst, src) in self.p.iter_mut().zip(&vars.p).skip(1) {
            dst.set_rows(idx, src)?;
        }
        for (dst, src) in self.q.iter_mut().zip(&vars.q) {
            dst.set_rows(idx, src)?;
        }
        for (dst, src) in self.u.iter_mut().zip(&vars.u) {
            dst.set_rows(idx, src)?;
        }
        Ok(())
    }
}

/// One batch worth of auxiliary rows, in the same block layout as
/// `AuxState`, plus the matching label rows.
#[derive(Clone, Debug)]
pub struct BatchVars {
    pub p: Vec<Tensor>,
    pub q: Vec<Tensor>,
    pub u: Vec<Tensor>,
    pub y: Tensor,
}

impl BatchVars {
    pub fn rows(&self) -> usize {
        self.y.rows()
    }
}

/// Per-run mutable trainer state: epoch counter, the batch index stream,
/// and per-subnetwork Adam moments (empty until the first Adam step).
#[derive(Clone, Debug)]
pub struct TrainState {
    pub epoch: usize,
    pub rng: RngState,
    pub adam: Vec<SubnetAdam>,
}

impl TrainState {
    pub fn new(net: &NetworkSpec, rng: RngState) -> TrainState {
        TrainState {
            epoch: 0,
            rng,
            adam: (0..net.splits()).map(|_| SubnetAdam::empty()).collect(),
        }
    }
}

/// Draws `batch` distinct row indices by partial Fisher-Yates; a batch
/// covering the whole set comes back as the identity order with no draws.
pub fn sample_batch(rng: &mut RngState, total: usize, batch: usize) -> Vec<usize> {
    if batch >= total {
        return (0..total).collect();
    }
    let mut idx: Vec<usize> = (0..total).collect();
    for i in 0..batch {
        let j = i + rng.below(total - i);
        idx.swap(i, j);
    }
    idx.truncate(batch);
    idx
}

/// Shuffles the full index range and cuts it into consecutive batches;
/// the last one may be short. One pass over these visits every row once.
pub fn permuted_batches(rng: &mut RngState, total: usize, batch: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..total).collect();
    rng.shuffle(&mut idx);
    idx.chunks(batch.max(1)).map(|c| c.to_vec()).collect()
}

/// Penalty-form objective on one batch: data loss at the head plus
/// `alpha / (2 m)` times each squared chain residual `p[i+1] - f_i(p[i])`.
pub fn penalty_objective(net: &NetworkSpec, vars: &BatchVars, alpha: f64) -> Result<f64> {
    let n = net.splits();
    let m = vars.rows() as f64;
    let head = forward(&net.subnetworks[n - 1], &vars.p[n - 1])?;
    let mut total = loss_and_grad(net.loss, &head, &vars.y)?.0;
    for i in 0..n - 1 {
        let f = forward(&net.subnetworks[i], &vars.p[i])?;
        total += vars.p[i + 1].sub(&f)?.frobenius_sq() * alpha / (2.0 * m);
    }
    Ok(total)
}

/// Augmented Lagrangian on one batch: data loss, `alpha / (2 m)` times the
/// squared output residuals `q[i] - f_i(p[i])`, the dual pairing
/// `(1 / m) <u[i], p[i+1] - q[i]>`, and `rho / (2 m)` times the squared
/// primal gaps.
pub fn augmented_lagrangian(net: &NetworkSpec, vars: &BatchVars, alpha: f64, rho: f64) -> Result<f64> {
    let n = net.splits();
    if vars.q.len() != n - 1 || vars.u.len() != n - 1 {
        return Err(Error::Mode {
            op: "augmented_lagrangian",
            required: "admm",
            actual: "am",
        });
    }
    let m = vars.rows() as f64;
    let head = forward(&net.subnetworks[n - 1], &vars.p[n - 1])?;
    let mut total = loss_and_grad(net.loss, &head, &vars.y)?.0;
    for i in 0..n - 1 {
        let f = forward(&net.subnetworks[i], &vars.p[i])?;
        let gap = vars.p[i + 1].sub(&vars.q[i])?;
        total += vars.q[i].sub(&f)?.frobenius_sq() * alpha / (2.0 * m);
        total += vars.u[i].dot(&gap)? / m;
        total += gap.frobenius_sq() * rho / (2.0 * m);
    }
    Ok(total)
}

const EVAL_CHUNK: usize = 1024;

/// The run objective over the whole training set, assembled from fixed-size
/// row chunks so large sets never get copied wholesale. Chunk order is
/// fixed, so the result is reproducible bit for bit.
pub fn objective_full(net: &NetworkSpec, aux: &AuxState, labels: &Tensor, hp: &Hyperparams) -> Result<f64> {
    let total_rows = aux.rows();
    let mut acc = 0.0;
    let mut start = 0;
    while start < total_rows {
        let end = (start + EVAL_CHUNK).min(total_rows);
        let idx: Vec<usize> = (start..end).collect();
        let vars = aux.gather(labels, &idx)?;
        let chunk = match aux.mode() {
            AuxMode::Admm => augmented_lagrangian(net, &vars, hp.alpha, hp.rho)?,
            AuxMode::Am => penalty_objective(net, &vars, hp.alpha)?,
        };
        acc += chunk * (end - start) as f64;
        start = end;
    }
    Ok(acc / total_rows as f64)
}

/// Mean loss and argmax accuracy of the composed network, computed in
/// fixed-size chunks. Argmax ties resolve to the lowest index on both the
/// prediction and the label side.
pub fn evaluate(net: &NetworkSpec, inputs: &Tensor, labels: &Tensor) -> Result<(f64, f64)> {
    let total_rows = inputs.rows();
    if total_rows == 0 {
        return Err(Error::Parameter {
            op: "evaluate",
            msg: "empty dataset".to_string(),
        });
    }
    let mut loss_acc = 0.0;
    let mut correct = 0usize;
    let mut start = 0;
    while start < total_rows {
        let end = (start + EVAL_CHUNK).min(total_rows);
        let idx: Vec<usize> = (start..end).collect();
        let x = inputs.gather_rows(&idx)?;
        let y = labels.gather_rows(&idx)?;
        let z = net.composed_forward(&x)?;
        let (loss, _) = loss_and_grad(net.loss, &z, &y)?;
        loss_acc += loss * (end - start) as f64;
        for r in 0..z.rows() {
            if argmax(z.row(r)) == argmax(y.row(r)) {
                correct += 1;
            }
        }
        start = end;
    }
    Ok((loss_acc / total_rows as f64, correct as f64 / total_rows as f64))
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Largest per-cut normalized residual over the full set:
/// `max_i ||p[i+1] - q[i]||_F / sqrt(rows * cols)` for the ADMM trainer and
/// `max_i ||p[i+1] - f_i(p[i])||_F / sqrt(rows * cols)` for the penalty
/// trainer. A single-piece network reports zero.
pub fn residual_metric(net: &NetworkSpec, aux: &AuxState) -> Result<f64> {
    let n = aux.splits();
    let rows = aux.rows();
    let mut worst = 0.0f64;
    for i in 0..n - 1 {
        let sq = match aux.mode() {
            AuxMode::Admm => aux.p[i + 1].sub(&aux.q[i])?.frobenius_sq(),
            AuxMode::Am => {
                let mut acc = 0.0;
                let mut start = 0;
                while start < rows {
                    let end = (start + EVAL_CHUNK).min(rows);
                    let idx: Vec<usize> = (start..end).collect();
                    let f = forward(&net.subnetworks[i], &aux.p[i].gather_rows(&idx)?)?;
                    acc += aux.p[i + 1].gather_rows(&idx)?.sub(&f)?.frobenius_sq();
                    start = end;
                }
                acc
            }
        };
        let scale = (rows * aux.p[i + 1].cols()) as f64;
        worst = worst.max((sq / scale).sqrt());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::LossKind;

    fn tiny_net(rng: &mut RngState) -> NetworkSpec {
        NetworkSpec::mlp(&[3, 4, 4, 2], &[1, 2], LossKind::LeastSquares, rng).unwrap()
    }

    fn tiny_labels(rows: usize) -> Tensor {
        Tensor::from_vec(&[rows, 2], (0..rows * 2).map(|k| (k % 3) as f64 * 0.25).collect()).unwrap()
    }

    #[test]
    fn warm_start_has_zero_residuals_and_lagrangian_equals_loss() {
        let mut rng = RngState::new(11);
        let net = tiny_net(&mut rng);
        let inputs = Tensor::from_vec(&[6, 3], (0..18).map(|_| rng.uniform(0.0, 1.0)).collect()).unwrap();
        let labels = tiny_labels(6);
        let aux = AuxState::warm_start(&net, &inputs, AuxMode::Admm).unwrap();
        assert_eq!(residual_metric(&net, &aux).unwrap(), 0.0);
        let idx: Vec<usize> = (0..6).collect();
        let vars = aux.gather(&labels, &idx).unwrap();
        let head = forward(&net.subnetworks[2], &vars.p[2]).unwrap();
        let (loss, _) = loss_and_grad(net.loss, &head, &labels).unwrap();
        let lagr = augmented_lagrangian(&net, &vars, 1.0, 1.0).unwrap();
        assert!((lagr - loss).abs() < 1e-15);
        let pen = penalty_objective(
            &net,
            &AuxState::warm_start(&net, &inputs, AuxMode::Am)
                .unwrap()
                .gather(&labels, &idx)
                .unwrap(),
            1.0,
        )
        .unwrap();
        assert!((pen - loss).abs() < 1e-15);
    }

    #[test]
    fn gather_scatter_roundtrip_keeps_input_block_frozen() {
        let mut rng = RngState::new(5);
        let net = tiny_net(&mut rng);
        let inputs = Tensor::from_vec(&[5, 3], (0..15).map(|_| rng.uniform(0.0, 1.0)).collect()).unwrap();
        let labels = tiny_labels(5);
        let mut aux = AuxState::warm_start(&net, &inputs, AuxMode::Admm).unwrap();
        let before_p0 = aux.p[0].clone();
        let idx = [3usize, 1];
        let mut vars = aux.gather(&labels, &idx).unwrap();
        vars.p[1] = vars.p[1].scale(2.0).unwrap();
        vars.p[0] = vars.p[0].scale(7.0).unwrap(); // must be ignored by scatter
        aux.scatter(&vars, &idx).unwrap();
        assert_eq!(aux.p[0], before_p0);
        let regathered = aux.gather(&labels, &idx).unwrap();
        assert_eq!(regathered.p[1], vars.p[1]);
    }

    #[test]
    fn sample_batch_draws_distinct_indices() {
        let mut rng = RngState::new(8);
        for _ in 0..50 {
            let idx = sample_batch(&mut rng, 37, 12);
            assert_eq!(idx.len(), 12);
            let mut seen = idx.clone();
            seen.sort_unstable();
            seen.dedup();
            assert_eq!(seen.len(), 12);
            assert!(idx.iter().all(|&i| i < 37));
        }
        // full-set batch is the identity with no rng consumption
        let before = rng.draws();
        assert_eq!(sample_batch(&mut rng, 5, 9), vec![0, 1, 2, 3, 4]);
        assert_eq!(rng.draws(), before);
    }

    #[test]
    fn permuted_batches_cover_every_row_once() {
        let mut rng = RngState::new(8);
        let batches = permuted_batches(&mut rng, 23, 5);
        assert_eq!(batches.len(), 5);
        assert_eq!(batches.last().unwrap().len(), 3);
        let mut all: Vec<usize> = batches.into_iter().flatten().collect();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
    }

    #[test]
    fn evaluate_counts_argmax_matches_with_low_index_ties() {
        // identity single layer so logits == inputs
        let net = NetworkSpec::new(
            vec![crate::network::Subnetwork::new(vec![crate::network::DenseLayer::new(
                Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
                Tensor::zeros(&[2]),
                crate::network::Activation::Identity,
            )
            .unwrap()])
            .unwrap()],
            LossKind::LeastSquares,
        )
        .unwrap();
        let inputs = Tensor::from_rows(&[
            vec![0.9, 0.1], // predicts 0
            vec![0.2, 0.8], // predicts 1
            vec![0.5, 0.5], // tie, predicts 0
        ])
        .unwrap();
        let labels = Tensor::from_rows(&[
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![1.0, 0.0],
        ])
        .unwrap();
        let (_, acc) = evaluate(&net, &inputs, &labels).unwrap();
        assert!((acc - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[2.0, 2.0]), 0);
        assert_eq!(argmax(&[0.5]), 0);
    }

    #[test]
    fn residual_metric_reports_largest_normalized_gap() {
        let mut rng = RngState::new(11);
        let net = tiny_net(&mut rng);
        let inputs = Tensor::from_vec(&[4, 3], (0..12).map(|_| rng.uniform(0.0, 1.0)).collect()).unwrap();
        let mut aux = AuxState::warm_start(&net, &inputs, AuxMode::Admm).unwrap();
        // push one q block off by a constant 0.5: norm = sqrt(rows*cols*0.25)
        aux.q[0] = aux.q[0].map(|v| v + 0.5).unwrap();
        let r = residual_metric(&net, &aux).unwrap();
        assert!((r - 0.5).abs() < 1e-12);
    }

    #[test]
    fn objective_full_matches_single_gather() {
        let mut rng = RngState::new(17);
        let net = tiny_net(&mut rng);
        let inputs = Tensor::from_vec(&[9, 3], (0..27).map(|_| rng.uniform(0.0, 1.0)).collect()).unwrap();
        let labels = tiny_labels(9);
        let mut aux = AuxState::warm_start(&net, &inputs, AuxMode::Admm).unwrap();
        for q in aux.q.iter_mut() {
            *q = q.map(|v| v + 0.1).unwrap();
        }
        let hp = Hyperparams::default();
        let idx: Vec<usize> = (0..9).collect();
        let direct = augmented_lagrangian(&net, &aux.gather(&labels, &idx).unwrap(), hp.alpha, hp.rho).unwrap();
        let chunked = objective_full(&net, &aux, &labels, &hp).unwrap();
        assert!((direct - chunked).abs() < 1e-12);
    }
}
