use super::messages::{ClientUpload, ParamMessage, ServerBroadcast};
use super::FederationError;
use crate::models::SpectralEnergy;
use crate::numcore::DenseMatrix;
use crate::rng::SeedStream;
use crate::semantic::{build_semantic_map, ClientClasses, ClusterFeature, SemanticClusterMap};
use crate::structural::{build_structural_map, StructuralClusterMap};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServerConfig {
    pub num_classes: usize,
    pub k_node: usize,
    pub k_struct: usize,
    pub cluster_feature: ClusterFeature,
}

/// Broadcasts for every client plus the cluster maps behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerOutput {
    /// One per client, in ascending client id order.
    pub broadcasts: Vec<ServerBroadcast>,
    pub semantic: SemanticClusterMap,
    pub structural: StructuralClusterMap,
}

/// Checks that `ids` holds each of `expected` exactly once.
fn check_roster(ids: &[usize], expected: &[usize]) -> Result<(), FederationError> {
    for &e in expected {
        match ids.iter().filter(|&&i| i == e).count() {
            0 => {
                return Err(FederationError::Protocol {
                    client: e,
                    detail: "no upload received".into(),
                })
            }
            1 => {}
            _ => {
                return Err(FederationError::Protocol {
                    client: e,
                    detail: "more than one upload received".into(),
                })
            }
        }
    }
    if let Some(&x) = ids.iter().find(|i| !expected.contains(i)) {
        return Err(FederationError::Protocol {
            client: x,
            detail: "upload from a client outside the federation".into(),
        });
    }
    Ok(())
}

/// Clusters the uploads and routes each client its own cluster artifacts.
///
/// Semantic and structural clusters are recomputed from scratch.
pub fn server_round(
    uploads: &[ClientUpload],
    expected: &[usize],
    cfg: &ServerConfig,
    seed: &SeedStream,
) -> Result<ServerOutput, FederationError> {
    let ids: Vec<usize> = uploads.iter().map(|u| u.client).collect();
    check_roster(&ids, expected)?;
    let mut sorted: Vec<&ClientUpload> = uploads.iter().collect();
    sorted.sort_by_key(|u| u.client);

    let classes: Vec<ClientClasses<'_>> = sorted
        .iter()
        .map(|u| (u.client, u.class_gaussians.as_slice()))
        .collect();
    let semantic = build_semantic_map(
        &classes,
        cfg.num_classes,
        cfg.k_node,
        cfg.cluster_feature,
        &seed.named("semantic"),
    )?;
    let energies: Vec<&SpectralEnergy> = sorted.iter().map(|u| &u.energy).collect();
    let coeffs: Vec<(usize, &[f64])> = sorted.iter().map(|u| (u.client, u.coeffs.as_slice())).collect();
    let structural = build_structural_map(&energies, &coeffs, cfg.k_struct, &seed.named("structural"))?;

    let broadcasts = sorted
        .iter()
        .map(|u| {
            let representatives = u
                .class_gaussians
                .iter()
                .map(|g| {
                    semantic.representative(u.client, g.class).cloned().ok_or_else(|| {
                        FederationError::Protocol {
                            client: u.client,
                            detail: format!("class {} was not clustered", g.class),
                        }
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let k = structural.cluster_of(u.client).expect("every upload is clustered");
            Ok(ServerBroadcast {
                client: u.client,
                representatives,
                coeff_mean: structural.means[k].clone(),
            })
        })
        .collect::<Result<Vec<_>, FederationError>>()?;
    Ok(ServerOutput {
        broadcasts,
        semantic,
        structural,
    })
}

/// Uniform average of every parameter tensor.
pub fn average_params(msgs: &[ParamMessage], expected: &[usize]) -> Result<Vec<DenseMatrix>, FederationError> {
    let ids: Vec<usize> = msgs.iter().map(|m| m.client).collect();
    check_roster(&ids, expected)?;
    let mut sorted: Vec<&ParamMessage> = msgs.iter().collect();
    sorted.sort_by_key(|m| m.client);
    let first = &sorted
        .first()
        .ok_or_else(|| FederationError::Config("averaging needs at least one client".into()))?
        .tensors;
    let mut out: Vec<DenseMatrix> = first
        .iter()
        .map(|t| DenseMatrix::zeros(t.rows(), t.cols()))
        .collect();
    for m in &sorted {
        if m.tensors.len() != out.len() {
            return Err(FederationError::Protocol {
                client: m.client,
                detail: "parameter list has the wrong length".into(),
            });
        }
        for (acc, t) in out.iter_mut().zip(&m.tensors) {
            *acc = acc.add(t)?;
        }
    }
    let count = sorted.len() as f64;
    Ok(out.into_iter().map(|t| t.map(|v| v / count)).collect())
}
