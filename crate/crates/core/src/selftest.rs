//! Quick runtime checks of the numerical building blocks against independent
//! reference computations. Used by `fedmark selftest`.

use std::collections::BTreeMap;

use rand::Rng;

use crate::datagen::{select_data, MultiModalSample, SelectionPolicy};
use crate::error::Result;
use crate::fl::{modality_wise_fedavg, EncoderUpdate};
use crate::losses::{balanced_ce, contrastive_fusion_loss, cross_entropy, kd_loss, ClassCounts, FusedFeatureSet, KdConfig};
use crate::modality::Modality;
use crate::nn::{Activation, Dense, DenseNet, Tensor};
use crate::rng::rng_for;
use crate::stats::{f_cdf, levene_test, oneway_anova};
use crate::sysim::{default_bands, pipeline_throughput, select_band, transmission_time, Direction, PipelineMode, PipelineSpec};
use crate::weak::permutation_ce_loss;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> Check {
    match f() {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = rng_for(seed, &[]);
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("finite")
}

/// Worst relative L2 error between `grad` and central differences of `f`.
fn fd_error(x: &Tensor, grad: &Tensor, f: impl Fn(&Tensor) -> Result<f64>) -> Result<f64> {
    const H: f64 = 1e-6;
    let mut num = Vec::with_capacity(x.values().len());
    for k in 0..x.values().len() {
        let mut hi = x.clone();
        hi.values_mut()[k] += H;
        let mut lo = x.clone();
        lo.values_mut()[k] -= H;
        num.push((f(&hi)? - f(&lo)?) / (2.0 * H));
    }
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let diff: Vec<f64> = num.iter().zip(grad.values()).map(|(a, b)| a - b).collect();
    Ok(norm(&diff) / norm(&num).max(norm(grad.values())).max(1e-12))
}

fn gradients() -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let v = random_matrix(6, 4, seed);
        let fs = FusedFeatureSet::new(v.clone(), vec![0, 0, 1, 1, 2, 2], 2)?;
        let (_, g) = contrastive_fusion_loss(&fs, 0.5)?;
        worst = worst.max(fd_error(&v, &g, |x| Ok(contrastive_fusion_loss(&fs.with_features(x.clone())?, 0.5)?.0))?);

        let logits = random_matrix(5, 3, seed + 100);
        let y = [0, 1, 2, 0, 0];
        let counts = ClassCounts::new(vec![7, 2, 1])?;
        let (_, g) = balanced_ce(&logits, &y, &counts)?;
        worst = worst.max(fd_error(&logits, &g, |x| Ok(balanced_ce(x, &y, &counts)?.0))?);

        let teacher = random_matrix(5, 3, seed + 200);
        let kd = KdConfig::new(2.0, 0.5)?;
        let (_, g) = kd_loss(&logits, &teacher, &kd)?;
        worst = worst.max(fd_error(&logits, &g, |x| Ok(kd_loss(x, &teacher, &kd)?.0))?);
    }
    Ok((worst <= 1e-4, format!("max relative error {worst:.2e}")))
}

fn contrastive_reference() -> Result<(bool, String)> {
    let fs = FusedFeatureSet::new(Tensor::from_rows(&vec![vec![1.0, 0.0]; 4])?, vec![0, 0, 1, 1], 2)?;
    let (loss, _) = contrastive_fusion_loss(&fs, 0.1)?;
    let want = 4.0 * 3f64.ln();
    let mut ok = (loss - want).abs() <= 1e-9;
    // against the formula written out directly
    let v = random_matrix(6, 3, 7);
    let ids = [0, 0, 0, 1, 1, 1];
    let fs = FusedFeatureSet::new(v.clone(), ids.to_vec(), 3)?;
    let (loss2, _) = contrastive_fusion_loss(&fs, 0.5)?;
    let dot = |a: usize, b: usize| v.row(a).iter().zip(v.row(b)).map(|(x, y)| x * y).sum::<f64>() / 0.5;
    let mut direct = 0.0;
    for s in 0..6 {
        let denom: f64 = (0..6).filter(|&a| a != s).map(|a| dot(s, a).exp()).sum();
        let pos: Vec<usize> = (0..6).filter(|&a| a != s && ids[a] == ids[s]).collect();
        direct -= pos.iter().map(|&p| (dot(s, p).exp() / denom).ln()).sum::<f64>() / pos.len() as f64;
    }
    ok &= (loss2 - direct).abs() <= 1e-9;
    Ok((ok, format!("identical views {loss:.12} (want {want:.12}); random set diff {:.1e}", (loss2 - direct).abs())))
}

fn fedavg_reference() -> Result<(bool, String)> {
    let net = |w: f64, b: f64| DenseNet::new(vec![Dense::new(1, 1, vec![w], vec![b], Activation::Identity)?]);
    let update = |id: u32, w: f64, b: f64, n: usize| -> Result<EncoderUpdate> {
        Ok(EncoderUpdate {
            node_id: id,
            encoders: [(Modality::Depth, net(w, b)?)].into_iter().collect(),
            counts: [(Modality::Depth, n)].into_iter().collect(),
        })
    };
    let previous: BTreeMap<Modality, DenseNet> = [(Modality::Depth, net(9.0, 9.0)?), (Modality::Audio, net(1.0, 1.0)?)].into_iter().collect();
    let (agg, _) = modality_wise_fedavg(&previous, &[update(0, 0.0, 2.0, 1)?, update(1, 4.0, 6.0, 3)?])?;
    let got = agg[&Modality::Depth].params();
    let ok = got == vec![3.0, 5.0] && agg[&Modality::Audio] == previous[&Modality::Audio];
    Ok((ok, format!("aggregate {got:?}")))
}

fn permutation_reference() -> Result<(bool, String)> {
    let logits = random_matrix(4, 3, 11);
    let labels = [0, 1, 2, 2];
    let pl = permutation_ce_loss(&logits, &labels, 0, &mut rng_for(0, &[]))?;
    let mut best = f64::INFINITY;
    // all 4! orderings by index
    for a in 0..4 {
        for b in (0..4).filter(|&b| b != a) {
            for c in (0..4).filter(|&c| c != a && c != b) {
                let d = 6 - a - b - c;
                let y = [labels[a], labels[b], labels[c], labels[d]];
                best = best.min(cross_entropy(&logits, &y)?.0);
            }
        }
    }
    let identity = cross_entropy(&logits, &labels)?.0;
    Ok((
        (pl.loss - best).abs() <= 1e-12 && pl.loss <= identity,
        format!("min {:.6} exhaustive {best:.6} identity {identity:.6}", pl.loss),
    ))
}

fn statistics_reference() -> Result<(bool, String)> {
    let cdf = f_cdf(3.0, 2.0, 6.0)?;
    let g = vec![1.0, 3.0, 4.0, 8.0];
    let lev = levene_test(&[g.clone(), g.clone()])?;
    // a 2 × 2 layout small enough to work out by hand: F = 8, df (1, 2)
    let a = oneway_anova(&[vec![1.0, 3.0], vec![5.0, 7.0]])?;
    let ok = (cdf - 0.875).abs() <= 1e-4 && lev.w == 0.0 && lev.p_value == 1.0 && (a.f - 8.0).abs() < 1e-12;
    Ok((ok, format!("F cdf {cdf:.6}, Levene W {} p {}, ANOVA F {}", lev.w, lev.p_value, a.f)))
}

fn system_reference() -> Result<(bool, String)> {
    let t = transmission_time(75_000_000, 6.0)?;
    let bands = default_bands();
    let up = &select_band(Direction::Upload, &bands)?.name;
    let down = &select_band(Direction::Download, &bands)?.name;
    let fps = pipeline_throughput(&PipelineSpec::default(), PipelineMode::Pipelined)?;
    let ok = (t - 100.0).abs() < 1e-9 && up == "B3" && down == "B40" && (fps - 9.45).abs() <= 0.01;
    Ok((ok, format!("75 MB at 6 Mbps {t} s; upload {up}, download {down}; {fps:.3} FPS")))
}

fn selection_reference() -> Result<(bool, String)> {
    let samples: Vec<MultiModalSample> = (0..10_000)
        .map(|i| MultiModalSample {
            timestamp: i as f64,
            modality_data: BTreeMap::new(),
            human_present: true,
            fine_label: None,
            coarse_label: None,
            activity: None,
        })
        .collect();
    let policy = SelectionPolicy {
        window_start_h: 0.0,
        window_end_h: 24.0,
        rate: 0.01,
        drop_absent: true,
    };
    let kept = select_data(&samples, &policy);
    let ordered = kept.windows(2).all(|w| w[0].timestamp < w[1].timestamp);
    Ok((kept.len() == 100 && ordered, format!("{} of 10000 kept", kept.len())))
}

pub fn run_all() -> Vec<Check> {
    vec![
        check("loss gradients vs finite differences", gradients),
        check("contrastive loss reference values", contrastive_reference),
        check("modality-wise FedAvg hand example", fedavg_reference),
        check("permutation loss vs exhaustive search", permutation_reference),
        check("F distribution, Levene, ANOVA", statistics_reference),
        check("network and pipeline model", system_reference),
        check("data reduction", selection_reference),
    ]
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for c in super::run_all() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
