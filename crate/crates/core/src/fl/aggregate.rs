use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modality::Modality;
use crate::nn::DenseNet;

/// Encoders trained by one node and how many samples each saw.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderUpdate {
    pub node_id: u32,
    pub encoders: BTreeMap<Modality, DenseNet>,
    pub counts: BTreeMap<Modality, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub modality: Modality,
    pub nodes: Vec<u32>,
    pub samples: usize,
}

/// Σ_k w_k · params_k with weights normalized to sum to one, accumulated in the
/// given order.
pub fn weighted_average(nets: &[(&DenseNet, f64)]) -> Result<DenseNet> {
    let (first, _) = nets.first().ok_or_else(|| Error::Data("nothing to average".into()))?;
    if nets.iter().any(|(n, _)| !n.same_architecture(first)) {
        return Err(Error::shape("cannot average networks of different architecture"));
    }
    let total: f64 = nets.iter().map(|(_, w)| w).sum();
    if !(total > 0.0) {
        return Err(Error::Count("aggregation weights sum to zero".into()));
    }
    let mut acc = vec![0.0; first.param_count()];
    for (net, w) in nets {
        let share = w / total;
        for (a, p) in acc.iter_mut().zip(net.params()) {
            *a += share * p;
        }
    }
    let mut out = (*first).clone();
    out.set_params(&acc)?;
    Ok(out)
}

/// Count-weighted FedAvg applied separately to each modality's encoder. Updates
/// are reduced in node_id order; modalities nobody submitted keep `previous`.
pub fn modality_wise_fedavg(
    previous: &BTreeMap<Modality, DenseNet>,
    updates: &[EncoderUpdate],
) -> Result<(BTreeMap<Modality, DenseNet>, Vec<Contribution>)> {
    if updates.is_empty() {
        return Err(Error::Data("no updates to aggregate".into()));
    }
    let mut ordered: Vec<&EncoderUpdate> = updates.iter().collect();
    ordered.sort_by_key(|u| u.node_id);
    let mut out = previous.clone();
    let mut contributions = Vec::new();
    for m in Modality::ALL {
        let mut members = Vec::new();
        let mut nodes = Vec::new();
        let mut samples = 0;
        for u in &ordered {
            if let Some(net) = u.encoders.get(&m) {
                let n = u.counts.get(&m).copied().unwrap_or(0);
                members.push((net, n as f64));
                nodes.push(u.node_id);
                samples += n;
            }
        }
        if members.is_empty() {
            continue;
        }
        if samples == 0 {
            return Err(Error::Count(format!("{m} submitted with zero total samples")));
        }
        out.insert(m, weighted_average(&members)?);
        contributions.push(Contribution {
            modality: m,
            nodes,
            samples,
        });
    }
    Ok((out, contributions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Dense};

    fn scalar_net(w: [f64; 2]) -> DenseNet {
        DenseNet::new(vec![Dense::new(1, 1, vec![w[0]], vec![w[1]], Activation::Identity).unwrap()]).unwrap()
    }

    fn update(id: u32, m: Modality, w: [f64; 2], n: usize) -> EncoderUpdate {
        EncoderUpdate {
            node_id: id,
            encoders: [(m, scalar_net(w))].into_iter().collect(),
            counts: [(m, n)].into_iter().collect(),
        }
    }

    #[test]
    fn hand_weighted_average() {
        let prev: BTreeMap<_, _> = [(Modality::Depth, scalar_net([9.0, 9.0]))].into_iter().collect();
        let ups = [update(0, Modality::Depth, [0.0, 2.0], 1), update(1, Modality::Depth, [4.0, 6.0], 3)];
        let (agg, _) = modality_wise_fedavg(&prev, &ups).unwrap();
        assert_eq!(agg[&Modality::Depth].params(), vec![3.0, 5.0]);
    }

    #[test]
    fn single_contributor_passes_through() {
        let prev: BTreeMap<_, _> = [
            (Modality::Depth, scalar_net([9.0, 9.0])),
            (Modality::Audio, scalar_net([7.0, 7.0])),
            (Modality::Radar, scalar_net([5.0, 5.0])),
        ]
        .into_iter()
        .collect();
        let ups = [
            update(0, Modality::Depth, [0.0, 2.0], 4),
            update(1, Modality::Audio, [1.25, -3.5], 2),
        ];
        let (agg, contrib) = modality_wise_fedavg(&prev, &ups).unwrap();
        assert_eq!(agg[&Modality::Audio], ups[1].encoders[&Modality::Audio]);
        assert_eq!(agg[&Modality::Radar], prev[&Modality::Radar]);
        assert_eq!(contrib.len(), 2);
    }

    #[test]
    fn errors() {
        assert!(modality_wise_fedavg(&BTreeMap::new(), &[]).is_err());
        let ups = [update(0, Modality::Depth, [0.0, 2.0], 0)];
        assert!(matches!(modality_wise_fedavg(&BTreeMap::new(), &ups), Err(Error::Count(_))));
    }
}
