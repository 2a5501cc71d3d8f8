use super::LocalGraph;
use crate::numcore::{DenseMatrix, NumError};

/// `L = I − D^{-1/2} A D^{-1/2}` as a dense matrix.
///
/// Isolated nodes use `D^{-1/2} = 0`, so their row is `e_i`.
pub fn normalized_laplacian(g: &LocalGraph) -> DenseMatrix {
    let n = g.node_count();
    let inv_sqrt: Vec<f64> = g
        .degrees()
        .iter()
        .map(|&d| if d == 0 { 0.0 } else { 1.0 / (d as f64).sqrt() })
        .collect();
    let mut l = DenseMatrix::identity(n);
    for &(u, v) in g.edges() {
        let w = -(inv_sqrt[u] * inv_sqrt[v]);
        l.set(u, v, w);
        l.set(v, u, w);
    }
    l
}

/// `[X, LX, L²X, …, L^K X]`, each power computed from the previous one.
pub fn laplacian_powers(g: &LocalGraph, k_max: usize) -> Result<Vec<DenseMatrix>, NumError> {
    let l = normalized_laplacian(g);
    let mut out = Vec::with_capacity(k_max + 1);
    out.push(g.features().clone());
    for k in 1..=k_max {
        let next = l.matmul(&out[k - 1])?;
        out.push(next);
    }
    Ok(out)
}
