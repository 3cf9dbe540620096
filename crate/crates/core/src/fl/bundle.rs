//! The unit of exchange: one encoder per modality plus a classifier head.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::MultiModalSample;
use crate::error::{Error, Result};
use crate::modality::Modality;
use crate::nn::{l2_normalize, l2_normalize_backward, Activation, DenseNet, ForwardTrace, NetGrads, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub embed_dim: usize,
    pub encoder_hidden: usize,
    pub classifier_hidden: usize,
    #[serde(skip)]
    pub num_classes: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            encoder_hidden: 32,
            classifier_hidden: 32,
            num_classes: 8,
        }
    }
}

impl ModelSpec {
    /// The classifier sees every modality's embedding side by side, with zeros
    /// for modalities a sample lacks.
    pub fn classifier_input(&self) -> usize {
        self.embed_dim * Modality::ALL.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.encoder_hidden == 0 || self.classifier_hidden == 0 || self.num_classes < 2 {
            return Err(Error::Config("model dimensions must be positive and classes >= 2".into()));
        }
        Ok(())
    }
}

pub type Inputs = BTreeMap<Modality, Tensor>;

/// Stacks the requested modalities of `samples` into per-modality matrices.
pub fn batch_inputs(samples: &[&MultiModalSample], modalities: &[Modality]) -> Result<Inputs> {
    if samples.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    modalities
        .iter()
        .map(|&m| {
            let mut values = Vec::with_capacity(samples.len() * m.input_dim());
            for s in samples {
                let x = s
                    .modality_data
                    .get(&m)
                    .ok_or_else(|| Error::Modality(format!("sample at t={} has no {m} data", s.timestamp)))?;
                if x.len() != m.input_dim() {
                    return Err(Error::shape(format!("{m} sample has {} values", x.len())));
                }
                values.extend_from_slice(x);
            }
            Ok((m, Tensor::matrix(samples.len(), m.input_dim(), values)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub encoders: BTreeMap<Modality, DenseNet>,
    pub classifier: DenseNet,
    pub version: u64,
}

#[derive(Debug, Clone)]
pub struct EncoderTrace {
    pub trace: ForwardTrace,
    pub normalized: Tensor,
}

#[derive(Debug, Clone)]
pub struct BundleTrace {
    pub encoders: BTreeMap<Modality, EncoderTrace>,
    pub classifier: ForwardTrace,
}

impl BundleTrace {
    pub fn logits(&self) -> &Tensor {
        self.classifier.output()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BundleGrads {
    pub encoders: BTreeMap<Modality, NetGrads>,
    pub classifier: NetGrads,
}

pub fn init_encoder<R: Rng + ?Sized>(spec: &ModelSpec, m: Modality, rng: &mut R) -> Result<DenseNet> {
    DenseNet::init(
        &[m.input_dim(), spec.encoder_hidden, spec.embed_dim],
        Activation::Relu,
        Activation::Identity,
        rng,
    )
}

impl ModelBundle {
    pub fn init<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut encoders = BTreeMap::new();
        for m in Modality::ALL {
            encoders.insert(m, init_encoder(spec, m, rng)?);
        }
        let classifier = DenseNet::init(
            &[spec.classifier_input(), spec.classifier_hidden, spec.num_classes],
            Activation::Relu,
            Activation::Identity,
            rng,
        )?;
        Ok(Self {
            encoders,
            classifier,
            version: 0,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.classifier.input_dim() / Modality::ALL.len()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.output_dim()
    }

    fn encoder(&self, m: Modality) -> Result<&DenseNet> {
        self.encoders.get(&m).ok_or_else(|| Error::Modality(format!("bundle has no {m} encoder")))
    }

    /// Unit-norm embeddings of each supplied modality.
    pub fn encode(&self, inputs: &Inputs) -> Result<BTreeMap<Modality, EncoderTrace>> {
        inputs
            .iter()
            .map(|(&m, x)| {
                let trace = self.encoder(m)?.forward_trace(x)?;
                let normalized = l2_normalize(trace.output())?;
                Ok((m, EncoderTrace { trace, normalized }))
            })
            .collect()
    }

    pub fn forward_trace(&self, inputs: &Inputs) -> Result<BundleTrace> {
        let encoders = self.encode(inputs)?;
        let rows = inputs.values().next().map(Tensor::rows).ok_or_else(|| Error::Modality("no inputs".into()))?;
        let d = self.embed_dim();
        let zeros = Tensor::zeros(rows, d);
        let parts: Vec<&Tensor> = Modality::ALL
            .iter()
            .map(|m| encoders.get(m).map_or(&zeros, |e| &e.normalized))
            .collect();
        let joined = Tensor::hconcat(&parts)?;
        let classifier = self.classifier.forward_trace(&joined)?;
        Ok(BundleTrace { encoders, classifier })
    }

    pub fn logits(&self, inputs: &Inputs) -> Result<Tensor> {
        Ok(self.forward_trace(inputs)?.classifier.output().clone())
    }

    /// Gradients of every parameter that took part in the traced forward pass.
    pub fn backward(&self, trace: &BundleTrace, grad_logits: &Tensor) -> Result<BundleGrads> {
        let (classifier, grad_in) = self.classifier.backward_trace(&trace.classifier, grad_logits)?;
        let d = self.embed_dim();
        let parts = grad_in.hsplit(&[d; 3])?;
        let mut encoders = BTreeMap::new();
        for (m, et) in &trace.encoders {
            let g_raw = l2_normalize_backward(et.trace.output(), &parts[m.index()])?;
            let (g, _) = self.encoder(*m)?.backward_trace(&et.trace, &g_raw)?;
            encoders.insert(*m, g);
        }
        Ok(BundleGrads { encoders, classifier })
    }

    pub fn apply(&mut self, grads: &BundleGrads, learning_rate: f64) -> Result<()> {
        for (m, g) in &grads.encoders {
            self.encoders
                .get_mut(m)
                .ok_or_else(|| Error::Modality(format!("bundle has no {m} encoder")))?
                .apply_gradients(g, learning_rate)?;
        }
        self.classifier.apply_gradients(&grads.classifier, learning_rate)
    }

    /// Parameters in manifest order: encoders in canonical modality order, then
    /// the classifier; each layer weights (row-major) then bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for net in self.encoders.values() {
            out.extend(net.params());
        }
        out.extend(self.classifier.params());
        out
    }

    /// Little-endian f64 serialization in manifest order.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.flat_params().iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    /// Reads parameters written by [`to_bytes`](Self::to_bytes) into a bundle of
    /// the same architecture as `template`.
    pub fn from_bytes(template: &ModelBundle, bytes: &[u8]) -> Result<Self> {
        let expected = template.flat_params().len() * 8;
        if bytes.len() != expected {
            return Err(Error::shape(format!("payload has {} bytes, expected {expected}", bytes.len())));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("payload holds non-finite parameters".into()));
        }
        let mut out = template.clone();
        let mut offset = 0;
        for net in out.encoders.values_mut() {
            let n = net.param_count();
            net.set_params(&values[offset..offset + n])?;
            offset += n;
        }
        out.classifier.set_params(&values[offset..])?;
        Ok(out)
    }

    pub fn payload_bytes(&self) -> u64 {
        self.flat_params().len() as u64 * 8
    }

    pub fn encoder_payload_bytes(&self, modalities: &[Modality]) -> u64 {
        modalities
            .iter()
            .filter_map(|m| self.encoders.get(m))
            .map(|n| n.param_count() as u64 * 8)
            .sum()
    }
}
