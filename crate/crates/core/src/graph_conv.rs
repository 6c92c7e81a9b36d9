//! Per-image directed adjacency and the single graph-convolution step shared
//! by the spatial and channel reasoning modules.

use crate::tensor::{Graph, Real, Result, Var};

/// Row-stochastic adjacency over node features `z: [N,D]`:
/// `A[i,j] = softmax_j( (z_i Θ) · (z_j Θ′) )` with bias-free `[D,D]` embeddings.
pub fn adjacency<T: Real>(g: &mut Graph<T>, z: Var, theta: Var, theta_prime: Var) -> Result<Var> {
    let left = g.matmul(z, theta)?;
    let right = g.matmul(z, theta_prime)?;
    let right_t = g.transpose(right)?;
    let logits = g.matmul(left, right_t)?;
    g.softmax(logits, 1)
}

/// `ReLU(A × Z × W)`.
pub fn graph_convolution<T: Real>(g: &mut Graph<T>, z: Var, a: Var, w: Var) -> Result<Var> {
    let diffused = g.matmul(a, z)?;
    let mixed = g.matmul(diffused, w)?;
    g.relu(mixed)
}
