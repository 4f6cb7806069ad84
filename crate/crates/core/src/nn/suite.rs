//! Finite-difference checks of every trainable part, in f64.

use ndarray::Array2;
use rand::{Rng, SeedableRng};

use super::{
    backprop_check, softmax_cross_entropy, BatchInput, GinEncoder, GradientReport, GraphControlModel, Linear, Params, Trainable,
    NUM_LAYERS,
};
use crate::error::Result;
use crate::graph::Graph;
use crate::rng::Rng64;
use crate::sampler::{induce_structure, Subgraph};

/// Sizes of the probe models; narrow so the suite stays fast.
#[derive(Debug, Clone, Copy)]
pub struct SuiteDims {
    pub k: usize,
    pub width: usize,
    pub classes: usize,
    pub attr_dim: usize,
}

impl Default for SuiteDims {
    fn default() -> Self {
        SuiteDims {
            k: 6,
            width: 16,
            classes: 3,
            attr_dim: 5,
        }
    }
}

fn random_subgraph(n: usize, rng: &mut Rng64) -> Result<Subgraph> {
    let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (rng.random_range(0..v), v)).collect();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(0.3) {
                edges.push((u, v));
            }
        }
    }
    let g = Graph::from_edges(n, &edges)?;
    induce_structure(&g, &(0..n).collect::<Vec<_>>(), 0)
}

fn random_matrix(r: usize, c: usize, rng: &mut Rng64) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
}

fn randomize(params: Vec<&mut [f64]>, rng: &mut Rng64) {
    for p in params {
        for v in p {
            *v = rng.random_range(-0.3..0.3);
        }
    }
}

fn probe(dims: SuiteDims, rng: &mut Rng64) -> Result<(BatchInput<f64>, Vec<u32>)> {
    let subs = [5, 4, 6].iter().map(|&n| random_subgraph(n, rng)).collect::<Result<Vec<_>>>()?;
    let mats: Vec<_> = subs
        .iter()
        .map(|s| {
            (
                random_matrix(s.len(), dims.k, rng),
                random_matrix(s.len(), dims.k, rng),
                random_matrix(s.len(), dims.attr_dim, rng),
            )
        })
        .collect();
    let input = BatchInput::from_parts(
        subs.iter()
            .zip(&mats)
            .map(|(s, (p, pc, x))| (s.csr(), p.view(), pc.view(), Some(x.view()))),
    )?;
    let labels = (0..subs.len()).map(|i| (i % dims.classes) as u32).collect();
    Ok((input, labels))
}

/// Check one model configuration through the classification loss.
pub fn check_model(model: &mut GraphControlModel<f64>, input: &BatchInput<f64>, labels: &[u32], prompts: bool) -> Result<GradientReport> {
    backprop_check(
        model,
        |m| Ok(softmax_cross_entropy(m.logits(input, prompts)?.view(), labels)?.0),
        |m| {
            let (h, tape) = m.forward_tape(input, prompts)?;
            let (_, dl) = softmax_cross_entropy(m.classifier.forward(h.view()).view(), labels)?;
            let g = m.backward(input, &tape, dl.view());
            Ok(g.trainable_params().into_iter().map(|(_, s)| s.to_vec()).collect())
        },
        |m| {
            let names: Vec<String> = m.trainable_params().into_iter().map(|(n, _)| n).collect();
            names.into_iter().zip(m.trainable_params_mut()).collect()
        },
    )
}

/// Gradient reports for the classifier, the GIN encoder, the zero MLPs, the
/// prompts, the attribute encoder and the fine-tuning, prompt-tuning and
/// from-scratch compositions.
pub fn gradient_suite(seed: u64, dims: SuiteDims) -> Result<Vec<(String, GradientReport)>> {
    let mut rng = Rng64::seed_from_u64(seed);
    let (input, labels) = probe(dims, &mut rng)?;
    let mut out = Vec::new();

    let h = random_matrix(6, dims.width, &mut rng);
    let hl: Vec<u32> = (0..6).map(|i| (i % dims.classes) as u32).collect();
    let mut lin = Linear::<f64>::glorot(dims.width, dims.classes, &mut rng);
    let report = backprop_check(
        &mut lin,
        |l| Ok(softmax_cross_entropy(l.forward(h.view()).view(), &hl)?.0),
        |l| {
            let (_, dl) = softmax_cross_entropy(l.forward(h.view()).view(), &hl)?;
            let (g, _) = l.backward(h.view(), dl.view());
            Ok(g.params("").into_iter().map(|(_, s)| s.to_vec()).collect())
        },
        |l| {
            let names: Vec<String> = l.params("classifier").into_iter().map(|(n, _)| n).collect();
            names.into_iter().zip(l.params_mut()).collect()
        },
    )?;
    out.push(("classifier".to_string(), report));

    let encoder = GinEncoder::new(dims.k, dims.width, NUM_LAYERS, &mut rng);
    let base = || -> GraphControlModel<f64> {
        let mut rng = Rng64::seed_from_u64(seed ^ 0x5eed);
        let mut m = GraphControlModel::new(&encoder, dims.classes, &mut rng);
        for l in &mut m.copy.as_mut().unwrap().layers {
            l.eps[0] = 0.2;
        }
        randomize(m.z1.as_mut().unwrap().params_mut(), &mut rng);
        randomize(m.z2.as_mut().unwrap().params_mut(), &mut rng);
        m
    };
    let mut m = GraphControlModel::structure_only(&encoder, dims.classes, &mut rng);
    m.trainable = Trainable {
        frozen: true,
        ..Trainable::default()
    };
    out.push(("gin".to_string(), check_model(&mut m, &input, &labels, false)?));

    let mut m = base();
    m.trainable = Trainable {
        zero: true,
        ..Trainable::default()
    };
    out.push(("zero_mlps".to_string(), check_model(&mut m, &input, &labels, false)?));

    let mut m = base();
    m.enable_prompts(&mut rng);
    m.trainable = Trainable {
        prompts: true,
        ..Trainable::default()
    };
    out.push(("prompts".to_string(), check_model(&mut m, &input, &labels, true)?));

    let mut m = GraphControlModel::structure_only(&encoder, dims.classes, &mut rng);
    m.attr_encoder = Some(GinEncoder::new(dims.attr_dim, dims.width, NUM_LAYERS, &mut rng));
    m.trainable = Trainable {
        attr: true,
        ..Trainable::default()
    };
    out.push(("attribute_encoder".to_string(), check_model(&mut m, &input, &labels, false)?));

    let mut m = base();
    out.push(("finetune_composition".to_string(), check_model(&mut m, &input, &labels, false)?));

    let mut m = base();
    m.enable_prompts(&mut rng);
    out.push(("prompt_composition".to_string(), check_model(&mut m, &input, &labels, true)?));

    let mut m = base();
    m.trainable = Trainable {
        frozen: true,
        copy: true,
        zero: true,
        ..Trainable::default()
    };
    out.push(("scratch_composition".to_string(), check_model(&mut m, &input, &labels, false)?));
    Ok(out)
}
