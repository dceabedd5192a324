//! Epoch drivers.
//!
//! One epoch samples a batch of rows (or, in full-shuffle mode, walks a
//! shuffled partition of all rows) and runs the update phases on those
//! rows. Every phase snapshots the state it reads before any task writes,
//! so the tasks inside a phase are order-free and the worker count cannot
//! change results. The one deliberate exception is the penalty trainer's
//! activation sweep, which is sequential from input side to output side
//! and feeds each freshly updated block into the next gradient.
//!
//! Update order per batch:
//!
//! * `gsadmm`: weights (parallel) -> activations (parallel) -> outputs
//!   (parallel, closed form) -> duals (parallel).
//! * `gsam`: weights (parallel) -> activations (sequential sweep).
//! * `baseline`: one loss-gradient step on the single subnetwork; shares
//!   the gradient and step code with the split trainers so a one-piece
//!   `gsam` run reproduces it bit for bit.

use super::grads::{
    apply_step, p_gradient_admm, p_gradient_am, update_duals, update_q_closed_form,
    weight_gradients, WeightRole,
};
use super::{permuted_batches, sample_batch, AuxMode, AuxState, Hyperparams, InnerOpt, TrainState};
use crate::error::{Error, Result};
use crate::network::{forward, NetworkSpec};
use crate::runtime::{run_phase, PhaseTimings, Task};
use crate::tensor::Tensor;
use std::time::Instant;

fn check_epoch_args(
    op: &'static str,
    net: &NetworkSpec,
    aux: &AuxState,
    labels: &Tensor,
    hp: &Hyperparams,
    state: &TrainState,
    required: AuxMode,
) -> Result<()> {
    hp.validate()?;
    if aux.mode() != required {
        return Err(Error::Mode {
            op,
            required: required.as_str(),
            actual: aux.mode().as_str(),
        });
    }
    if aux.splits() != net.splits() || state.adam.len() != net.splits() {
        return Err(Error::Contract(format!(
            "{op}: state built for a different split count"
        )));
    }
    if labels.rows() != aux.rows() {
        return Err(Error::Dimension {
            op,
            left: vec![aux.rows()],
            right: labels.shape().to_vec(),
        });
    }
    Ok(())
}

fn epoch_batches(state: &mut TrainState, rows: usize, hp: &Hyperparams, full_shuffle: bool) -> Vec<Vec<usize>> {
    if full_shuffle {
        permuted_batches(&mut state.rng, rows, hp.batch)
    } else {
        vec![sample_batch(&mut state.rng, rows, hp.batch)]
    }
}

/// One augmented-Lagrangian epoch. Returns wall time per phase, summed
/// over the epoch's batches.
pub fn gsadmm_epoch(
    net: &mut NetworkSpec,
    aux: &mut AuxState,
    labels: &Tensor,
    hp: &Hyperparams,
    inner: InnerOpt,
    state: &mut TrainState,
    workers: usize,
    full_shuffle: bool,
) -> Result<PhaseTimings> {
    check_epoch_args("gsadmm_epoch", net, aux, labels, hp, state, AuxMode::Admm)?;
    let mut timings = PhaseTimings::default();
    for idx in epoch_batches(state, aux.rows(), hp, full_shuffle) {
        gsadmm_step(net, aux, labels, &idx, hp, inner, state, workers, &mut timings)?;
    }
    state.epoch += 1;
    Ok(timings)
}

#[allow(clippy::too_many_arguments)]
fn gsadmm_step(
    net: &mut NetworkSpec,
    aux: &mut AuxState,
    labels: &Tensor,
    idx: &[usize],
    hp: &Hyperparams,
    inner: InnerOpt,
    state: &mut TrainState,
    workers: usize,
    timings: &mut PhaseTimings,
) -> Result<()> {
    let n = net.splits();
    let loss = net.loss;
    let m_scale = idx.len() as f64;
    let mut vars = aux.gather(labels, idx)?;

    // weights: each subnetwork chases its output block, the last one the loss
    {
        let vars = &vars;
        let mut tasks: Vec<Task> = Vec::with_capacity(n);
        for (i, (sub, adam)) in net.subnetworks.iter_mut().zip(state.adam.iter_mut()).enumerate() {
            let (target, role) = if i + 1 < n {
                (&vars.q[i], WeightRole::Hidden)
            } else {
                (&vars.y, WeightRole::Last)
            };
            let p_i = &vars.p[i];
            tasks.push(Box::new(move || {
                let grads = weight_gradients(loss, sub, p_i, target, role, hp.alpha)?;
                apply_step(sub, &grads, inner, adam, hp.tau1)
            }));
        }
        timings.w_s += run_phase("w-update", workers, tasks)?;
    }

    // activations: every block steps off the pre-phase snapshot
    if n > 1 {
        let mut new_p: Vec<Option<Tensor>> = vec![None; n - 1];
        {
            let net = &*net;
            let vars = &vars;
            let mut tasks: Vec<Task> = Vec::with_capacity(n - 1);
            for (k, slot) in new_p.iter_mut().enumerate() {
                let i = k + 1;
                tasks.push(Box::new(move || {
                    let g = p_gradient_admm(net, vars, i, hp.alpha, hp.rho)?;
                    *slot = Some(vars.p[i].sub(&g.scale(1.0 / hp.tau2)?)?);
                    Ok(())
                }));
            }
            timings.p_s += run_phase("p-update", workers, tasks)?;
        }
        for (k, t) in new_p.into_iter().enumerate() {
            vars.p[k + 1] = t.expect("phase ran every task");
        }

        // outputs: exact minimizer given fresh weights and activations
        let mut new_q: Vec<Option<Tensor>> = vec![None; n - 1];
        {
            let net = &*net;
            let vars = &vars;
            let mut tasks: Vec<Task> = Vec::with_capacity(n - 1);
            for (i, slot) in new_q.iter_mut().enumerate() {
                tasks.push(Box::new(move || {
                    let f = forward(&net.subnetworks[i], &vars.p[i])?;
                    *slot = Some(update_q_closed_form(
                        &f,
                        &vars.p[i + 1],
                        &vars.u[i],
                        hp.alpha,
                        hp.rho,
                        m_scale,
                    )?);
                    Ok(())
                }));
            }
            timings.q_s += run_phase("q-update", workers, tasks)?;
        }
        for (i, t) in new_q.into_iter().enumerate() {
            vars.q[i] = t.expect("phase ran every task");
        }

        // duals: fixed ascent step on the fresh primal gap
        let mut new_u: Vec<Option<Tensor>> = vec![None; n - 1];
        {
            let vars = &vars;
            let mut tasks: Vec<Task> = Vec::with_capacity(n - 1);
            for (i, slot) in new_u.iter_mut().enumerate() {
                tasks.push(Box::new(move || {
                    *slot = Some(update_duals(&vars.u[i], &vars.p[i + 1], &vars.q[i], hp.rho)?);
                    Ok(())
                }));
            }
            timings.u_s += run_phase("u-update", workers, tasks)?;
        }
        for (i, t) in new_u.into_iter().enumerate() {
            vars.u[i] = t.expect("phase ran every task");
        }
    }

    aux.scatter(&vars, idx)
}

/// One penalty epoch: parallel weight phase, then the sequential
/// activation sweep.
pub fn gsam_epoch(
    net: &mut NetworkSpec,
    aux: &mut AuxState,
    labels: &Tensor,
    hp: &Hyperparams,
    inner: InnerOpt,
    state: &mut TrainState,
    workers: usize,
    full_shuffle: bool,
) -> Result<PhaseTimings> {
    check_epoch_args("gsam_epoch", net, aux, labels, hp, state, AuxMode::Am)?;
    let mut timings = PhaseTimings::default();
    for idx in epoch_batches(state, aux.rows(), hp, full_shuffle) {
        gsam_step(net, aux, labels, &idx, hp, inner, state, workers, &mut timings)?;
    }
    state.epoch += 1;
    Ok(timings)
}

#[allow(clippy::too_many_arguments)]
fn gsam_step(
    net: &mut NetworkSpec,
    aux: &mut AuxState,
    labels: &Tensor,
    idx: &[usize],
    hp: &Hyperparams,
    inner: InnerOpt,
    state: &mut TrainState,
    workers: usize,
    timings: &mut PhaseTimings,
) -> Result<()> {
    let n = net.splits();
    let loss = net.loss;
    let mut vars = aux.gather(labels, idx)?;

    {
        let vars = &vars;
        let mut tasks: Vec<Task> = Vec::with_capacity(n);
        for (i, (sub, adam)) in net.subnetworks.iter_mut().zip(state.adam.iter_mut()).enumerate() {
            let (target, role) = if i + 1 < n {
                (&vars.p[i + 1], WeightRole::Hidden)
            } else {
                (&vars.y, WeightRole::Last)
            };
            let p_i = &vars.p[i];
            tasks.push(Box::new(move || {
                let grads = weight_gradients(loss, sub, p_i, target, role, hp.alpha)?;
                apply_step(sub, &grads, inner, adam, hp.tau1)
            }));
        }
        timings.w_s += run_phase("w-update", workers, tasks)?;
    }

    // ascending sweep; block i sees the block i-1 updated moments ago
    let sweep = Instant::now();
    for i in 1..n {
        let g = p_gradient_am(net, &vars, i, hp.alpha)?;
        vars.p[i] = vars.p[i].sub(&g.scale(1.0 / hp.tau2)?)?;
    }
    timings.p_s += sweep.elapsed().as_secs_f64();

    aux.scatter(&vars, idx)
}

/// One plain-SGD (or Adam) epoch on an unsplit network. Runs the same
/// gradient and step code as the last-subnetwork task of the split
/// trainers.
pub fn baseline_epoch(
    net: &mut NetworkSpec,
    inputs: &Tensor,
    labels: &Tensor,
    hp: &Hyperparams,
    inner: InnerOpt,
    state: &mut TrainState,
    full_shuffle: bool,
) -> Result<PhaseTimings> {
    hp.validate()?;
    if net.splits() != 1 {
        return Err(Error::Contract(
            "baseline_epoch: expected an unsplit network".to_string(),
        ));
    }
    if labels.rows() != inputs.rows() {
        return Err(Error::Dimension {
            op: "baseline_epoch",
            left: inputs.shape().to_vec(),
            right: labels.shape().to_vec(),
        });
    }
    let mut timings = PhaseTimings::default();
    for idx in epoch_batches(state, inputs.rows(), hp, full_shuffle) {
        let x = inputs.gather_rows(&idx)?;
        let y = labels.gather_rows(&idx)?;
        let start = Instant::now();
        let grads = weight_gradients(net.loss, &net.subnetworks[0], &x, &y, WeightRole::Last, hp.alpha)?;
        apply_step(&mut net.subnetworks[0], &grads, inner, &mut state.adam[0], hp.tau1)?;
        timings.w_s += start.elapsed().as_secs_f64();
    }
    state.epoch += 1;
    Ok(timings)
}
