//! Distributed recursive estimator.
//!
//! Each identification node `i` owns the estimate `theta_i`, the local gain
//! `Sigma_i` and its inverse, and sees only its own input window `phi_i`.
//! A round consists of
//!
//! 1. every node sending `phi_i^T theta_i` and `phi_i^T Sigma_i phi_i` to
//!    the fusion center,
//! 2. the fusion center measuring `y`, forming the prediction error
//!    `eps = y - sum_i phi_i^T theta_i` and the shared gain
//!    `alpha_B = 1 / (sigma^2 + sum_i phi_i^T Sigma_i phi_i)`, and
//!    broadcasting both,
//! 3. every node applying
//!    `theta_i += alpha_B Sigma_i phi_i eps` and
//!    `Sigma_i^{-1} += phi_i phi_i^T / gamma_i^2`
//!    from its pre-round state.
//!
//! Only scalars cross the node boundary: `2m` upstream, two broadcast.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, ProtocolError, Result};
use crate::fir::RegressorBank;
use crate::linalg::{
    add_outer, block_diag, ensure_finite_matrix, ensure_finite_vector, rank_one_inverse_update,
    symmetrize,
};
use crate::scalar::Scalar;

/// Local identification module.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeState<T: Scalar> {
    index: usize,
    theta_hat: DVector<T>,
    sigma: DMatrix<T>,
    info: DMatrix<T>,
    gamma: T,
}

impl<T: Scalar> NodeState<T> {
    /// Node `index` (zero-based) with `theta_i = 0` and `Sigma_i = c I`.
    pub fn new(index: usize, order: usize, c: T, gamma: T) -> Result<Self> {
        if order == 0 {
            return Err(Error::Parameter("node order must be >= 1".into()));
        }
        if !(c > T::zero()) || !c.finite() {
            return Err(Error::Parameter(format!("initial gain scale c must be > 0, got {c}")));
        }
        check_gamma(gamma)?;
        Ok(Self {
            index,
            theta_hat: DVector::zeros(order),
            sigma: DMatrix::identity(order, order) * c,
            info: DMatrix::identity(order, order) * (T::one() / c),
            gamma,
        })
    }

    pub fn with_estimate(mut self, theta_hat: DVector<T>) -> Result<Self> {
        if theta_hat.len() != self.order() {
            return Err(Error::Dimension {
                context: "node estimate",
                expected: self.order(),
                found: theta_hat.len(),
            });
        }
        self.theta_hat = theta_hat;
        Ok(self)
    }

    /// Replaces `Sigma_i` (and recomputes its inverse).
    pub fn with_gain(mut self, sigma: DMatrix<T>) -> Result<Self> {
        let n = self.order();
        if sigma.nrows() != n || sigma.ncols() != n {
            return Err(Error::Dimension {
                context: "node gain matrix",
                expected: n,
                found: sigma.nrows(),
            });
        }
        let chol = sigma
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Parameter("node gain matrix must be positive definite".into()))?;
        let mut info = chol.inverse();
        symmetrize(&mut info);
        self.sigma = sigma;
        self.info = info;
        Ok(self)
    }

    pub fn set_gamma(&mut self, gamma: T) -> Result<()> {
        check_gamma(gamma)?;
        self.gamma = gamma;
        Ok(())
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn order(&self) -> usize {
        self.theta_hat.len()
    }

    pub fn theta_hat(&self) -> &DVector<T> {
        &self.theta_hat
    }

    pub fn sigma(&self) -> &DMatrix<T> {
        &self.sigma
    }

    pub fn info(&self) -> &DMatrix<T> {
        &self.info
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    fn check_phi(&self, phi_i: &DVector<T>) -> Result<()> {
        if phi_i.len() != self.order() {
            return Err(Error::Dimension {
                context: "local regressor",
                expected: self.order(),
                found: phi_i.len(),
            });
        }
        Ok(())
    }

    /// `phi_i^T theta_i`.
    pub fn local_prediction(&self, phi_i: &DVector<T>) -> Result<T> {
        self.check_phi(phi_i)?;
        Ok(phi_i.dot(&self.theta_hat))
    }

    /// `phi_i^T Sigma_i phi_i`.
    pub fn local_gain(&self, phi_i: &DVector<T>) -> Result<T> {
        self.check_phi(phi_i)?;
        Ok(phi_i.dot(&(&self.sigma * phi_i)))
    }

    /// Step (i): the message this node sends to the fusion center.
    pub fn uplink(&self, phi_i: &DVector<T>) -> Result<RoundMessageUp<T>> {
        Ok(RoundMessageUp {
            node: self.index,
            local_prediction: self.local_prediction(phi_i)?,
            local_gain: self.local_gain(phi_i)?,
        })
    }

    /// Step (iii), in place.
    pub fn apply(&mut self, phi_i: &DVector<T>, down: &RoundMessageDown<T>) -> Result<()> {
        self.check_phi(phi_i)?;
        if !(down.alpha > T::zero()) || !down.alpha.finite() {
            return Err(Error::Parameter(format!(
                "broadcast gain must be > 0, got {}",
                down.alpha
            )));
        }
        let sphi = &self.sigma * phi_i;
        self.theta_hat
            .axpy(down.alpha * down.prediction_error, &sphi, T::one());
        let g2 = self.gamma * self.gamma;
        rank_one_inverse_update(&mut self.sigma, phi_i, g2)?;
        symmetrize(&mut self.sigma);
        add_outer(&mut self.info, phi_i, T::one() / g2);
        symmetrize(&mut self.info);
        ensure_finite_vector(&self.theta_hat, "local estimate")?;
        ensure_finite_matrix(&self.sigma, "local gain matrix")?;
        ensure_finite_matrix(&self.info, "local information matrix")?;
        Ok(())
    }

    /// Step (iii), returning the updated node.
    pub fn local_update(&self, phi_i: &DVector<T>, down: &RoundMessageDown<T>) -> Result<Self> {
        let mut next = self.clone();
        next.apply(phi_i, down)?;
        Ok(next)
    }
}

fn check_gamma<T: Scalar>(gamma: T) -> Result<()> {
    if !(gamma > T::zero()) || !gamma.finite() {
        return Err(Error::Parameter(format!("gamma must be > 0, got {gamma}")));
    }
    Ok(())
}

/// Upstream message: two scalars plus the sender's index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundMessageUp<T> {
    pub node: usize,
    pub local_prediction: T,
    /// `phi_i^T Sigma_i phi_i`, needed for the shared gain.
    pub local_gain: T,
}

impl<T> RoundMessageUp<T> {
    pub const SCALARS: usize = 2;
}

/// Broadcast from the fusion center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundMessageDown<T> {
    pub prediction_error: T,
    pub alpha: T,
}

impl<T> RoundMessageDown<T> {
    pub const SCALARS: usize = 2;
}

/// The static fusion module.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionCenter<T> {
    noise_var: T,
    nodes: usize,
}

impl<T: Scalar> FusionCenter<T> {
    pub fn new(noise_var: T, nodes: usize) -> Result<Self> {
        if nodes == 0 {
            return Err(Error::Parameter("fusion center needs at least one node".into()));
        }
        if noise_var < T::zero() || !noise_var.finite() {
            return Err(Error::Parameter(format!(
                "noise variance must be finite and >= 0, got {noise_var}"
            )));
        }
        Ok(Self { noise_var, nodes })
    }

    pub fn noise_var(&self) -> T {
        self.noise_var
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    /// Step (ii). Messages may arrive in any order; sums are taken in node
    /// index order so the result does not depend on arrival order.
    pub fn fuse(&self, y: T, ups: &[RoundMessageUp<T>]) -> Result<RoundMessageDown<T>> {
        let mut slots: Vec<Option<&RoundMessageUp<T>>> = vec![None; self.nodes];
        for up in ups {
            let slot = slots.get_mut(up.node).ok_or(ProtocolError::UnknownNode {
                index: up.node,
                nodes: self.nodes,
            })?;
            if slot.is_some() {
                return Err(ProtocolError::DuplicateNode(up.node).into());
            }
            *slot = Some(up);
        }
        let mut prediction = T::zero();
        let mut gain = T::zero();
        for (i, slot) in slots.iter().enumerate() {
            let up = slot.ok_or(ProtocolError::MissingNode(i))?;
            prediction += up.local_prediction;
            gain += up.local_gain;
        }
        let denom = self.noise_var + gain;
        if denom <= T::zero() {
            return Err(Error::DivisionByZero("fusion gain alpha_B"));
        }
        Ok(RoundMessageDown {
            prediction_error: y - prediction,
            alpha: T::one() / denom,
        })
    }
}

/// Everything exchanged in one round plus the resulting stacked estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundTrace<T: Scalar> {
    pub k: usize,
    /// Upstream messages ordered by node index.
    pub ups: Vec<RoundMessageUp<T>>,
    pub down: RoundMessageDown<T>,
    pub theta_b: DVector<T>,
}

impl<T: Scalar> RoundTrace<T> {
    pub fn upstream_scalars(&self) -> usize {
        self.ups.len() * RoundMessageUp::<T>::SCALARS
    }

    pub fn downstream_scalars(&self) -> usize {
        RoundMessageDown::<T>::SCALARS
    }
}

/// Column header for round trace CSV files: `k,eps,alpha,pred_1..pred_m,gain_1..gain_m`.
pub fn round_csv_header(m: usize) -> Vec<String> {
    let mut h = vec!["k".to_string(), "eps".into(), "alpha".into()];
    h.extend((1..=m).map(|i| format!("pred_{i}")));
    h.extend((1..=m).map(|i| format!("gain_{i}")));
    h
}

/// Writes round traces as CSV with 17 significant digits.
pub fn write_round_csv<T: Scalar, W: Write>(m: usize, traces: &[RoundTrace<T>], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(round_csv_header(m))?;
    for t in traces {
        let mut row = vec![
            t.k.to_string(),
            crate::fmt_real(t.down.prediction_error),
            crate::fmt_real(t.down.alpha),
        ];
        row.extend(t.ups.iter().map(|u| crate::fmt_real(u.local_prediction)));
        row.extend(t.ups.iter().map(|u| crate::fmt_real(u.local_gain)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Stacked view of all nodes: `theta_B = col(theta_i)`,
/// `Sigma_B = blockdiag(Sigma_i)` and `Gamma_B = diag(gamma_i I_{n_i})`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockState<T: Scalar> {
    pub theta_b: DVector<T>,
    pub sigma_b: DMatrix<T>,
    pub info_b: DMatrix<T>,
    /// Diagonal of `Gamma_B`.
    pub gamma_b: DVector<T>,
    pub block_sizes: Vec<usize>,
}

impl<T: Scalar> BlockState<T> {
    /// `phi_B = blockdiag(phi_i phi_i^T)` for a stacked regressor.
    pub fn phi_b(&self, phi: &DVector<T>) -> DMatrix<T> {
        phi_blocks(&self.block_sizes, phi)
    }

    /// `A_B = alpha I`: all nodes share the fusion gain.
    pub fn a_b(&self, alpha: T) -> DMatrix<T> {
        let n = self.theta_b.len();
        DMatrix::identity(n, n) * alpha
    }
}

/// `blockdiag(phi_1 phi_1^T, ..., phi_m phi_m^T)`.
pub fn phi_blocks<T: Scalar>(block_sizes: &[usize], phi: &DVector<T>) -> DMatrix<T> {
    let n = phi.len();
    let mut out = DMatrix::zeros(n, n);
    let mut offset = 0;
    for &k in block_sizes {
        let seg = phi.rows(offset, k);
        out.view_mut((offset, offset), (k, k))
            .copy_from(&(seg * seg.transpose()));
        offset += k;
    }
    out
}

pub fn stack<T: Scalar>(nodes: &[NodeState<T>]) -> BlockState<T> {
    let block_sizes: Vec<usize> = nodes.iter().map(NodeState::order).collect();
    let n: usize = block_sizes.iter().sum();
    let theta_b = DVector::from_iterator(n, nodes.iter().flat_map(|s| s.theta_hat.iter().copied()));
    let gamma_b = DVector::from_iterator(
        n,
        nodes
            .iter()
            .flat_map(|s| std::iter::repeat(s.gamma).take(s.order())),
    );
    let sigmas: Vec<&DMatrix<T>> = nodes.iter().map(|s| &s.sigma).collect();
    let infos: Vec<&DMatrix<T>> = nodes.iter().map(|s| &s.info).collect();
    BlockState {
        theta_b,
        sigma_b: block_diag(&sigmas),
        info_b: block_diag(&infos),
        gamma_b,
        block_sizes,
    }
}

/// Owns all node states and the fusion center between round barriers.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributedEstimator<T: Scalar> {
    nodes: Vec<NodeState<T>>,
    center: FusionCenter<T>,
    rounds: usize,
}

impl<T: Scalar> DistributedEstimator<T> {
    /// Nodes for the given orders, all with `theta_i = 0`, `Sigma_i = c I`
    /// and the same `gamma`.
    pub fn new(orders: &[usize], c: T, gamma: T, noise_var: T) -> Result<Self> {
        let nodes = orders
            .iter()
            .enumerate()
            .map(|(i, &n)| NodeState::new(i, n, c, gamma))
            .collect::<Result<Vec<_>>>()?;
        Self::from_nodes(nodes, FusionCenter::new(noise_var, orders.len())?)
    }

    pub fn from_nodes(nodes: Vec<NodeState<T>>, center: FusionCenter<T>) -> Result<Self> {
        if nodes.len() != center.nodes() {
            return Err(Error::Dimension {
                context: "node count",
                expected: center.nodes(),
                found: nodes.len(),
            });
        }
        for (i, node) in nodes.iter().enumerate() {
            if node.index != i {
                return Err(Error::Parameter(format!(
                    "node at position {i} carries index {}",
                    node.index
                )));
            }
        }
        Ok(Self {
            nodes,
            center,
            rounds: 0,
        })
    }

    pub fn nodes(&self) -> &[NodeState<T>] {
        &self.nodes
    }

    pub fn nodes_mut(&mut self) -> &mut [NodeState<T>] {
        &mut self.nodes
    }

    pub fn center(&self) -> &FusionCenter<T> {
        &self.center
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn orders(&self) -> Vec<usize> {
        self.nodes.iter().map(NodeState::order).collect()
    }

    pub fn theta_b(&self) -> DVector<T> {
        let n = self.nodes.iter().map(NodeState::order).sum();
        DVector::from_iterator(n, self.nodes.iter().flat_map(|s| s.theta_hat.iter().copied()))
    }

    pub fn stack(&self) -> BlockState<T> {
        stack(&self.nodes)
    }

    /// One synchronous round on regressors already advanced to the new
    /// sample, with output `y`.
    pub fn run_round(&mut self, bank: &RegressorBank<T>, y: T) -> Result<RoundTrace<T>> {
        let order: Vec<usize> = (0..self.nodes.len()).collect();
        self.run_round_ordered(bank, y, &order)
    }

    /// As [`run_round`](Self::run_round) but visiting nodes in `order` for
    /// both the uplink and the update phase. The result does not depend on
    /// the order.
    pub fn run_round_ordered(
        &mut self,
        bank: &RegressorBank<T>,
        y: T,
        order: &[usize],
    ) -> Result<RoundTrace<T>> {
        let m = self.nodes.len();
        if bank.inputs() != m {
            return Err(Error::Dimension {
                context: "regressor bank module count",
                expected: m,
                found: bank.inputs(),
            });
        }
        let mut seen = vec![false; m];
        if order.len() != m || !order.iter().all(|&i| i < m && !std::mem::replace(&mut seen[i], true)) {
            return Err(Error::Parameter("node order must be a permutation".into()));
        }

        let phis: Vec<DVector<T>> = (0..m).map(|i| bank.phi(i)).collect();
        let ups = order
            .iter()
            .map(|&i| self.nodes[i].uplink(&phis[i]))
            .collect::<Result<Vec<_>>>()?;
        let down = self.center.fuse(y, &ups)?;

        // every node updates from its own pre-round state; nothing read
        // from other nodes after the barrier
        let mut next = self.nodes.clone();
        for &i in order {
            next[i].apply(&phis[i], &down)?;
        }
        self.nodes = next;

        let mut ups = ups;
        ups.sort_by_key(|u| u.node);
        let k = self.rounds;
        self.rounds += 1;
        Ok(RoundTrace {
            k,
            ups,
            down,
            theta_b: self.theta_b(),
        })
    }
}
