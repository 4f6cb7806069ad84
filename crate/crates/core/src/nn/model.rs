//! Controlled composition of a frozen encoder, a trainable copy linked by
//! zero MLPs, optional input prompts, and a linear classifier.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::batch::GraphBatch;
use super::gin::{GinEncoder, GinTape};
use super::linear::Linear;
use super::Params;
use crate::error::{Error, Result};
use crate::real::{c, Real};
use crate::sampler::Subgraph;

pub const HIDDEN_DIM: usize = 64;
pub const NUM_LAYERS: usize = 4;
const PROMPT_INIT: f64 = 0.01;

/// Square affine map constructed with every entry exactly zero.
pub type ZeroMlp<T> = Linear<T>;

/// Additive input prompts `q` (positional branch) and `q'` (condition branch).
#[derive(Debug, Clone, PartialEq)]
pub struct Prompts<T> {
    pub q: Array1<T>,
    pub q_cond: Array1<T>,
}

/// Which parameter groups receive updates. The classifier always does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Trainable {
    pub frozen: bool,
    pub copy: bool,
    pub zero: bool,
    pub attr: bool,
    pub prompts: bool,
}

/// `H = readout(frozen(P + q)) + Z2(readout(copy(P + q + Z1(P' + q'))))`,
/// followed by a linear classifier. Each branch is optional so the ablation
/// variants share one implementation.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphControlModel<T> {
    pub frozen: Option<GinEncoder<T>>,
    pub copy: Option<GinEncoder<T>>,
    pub z1: Option<ZeroMlp<T>>,
    pub z2: Option<ZeroMlp<T>>,
    /// Encoder over raw node attributes, summed into `H`.
    pub attr_encoder: Option<GinEncoder<T>>,
    pub classifier: Linear<T>,
    pub prompts: Option<Prompts<T>>,
    pub trainable: Trainable,
}

/// Stacked inputs of a batch of subgraphs.
#[derive(Debug, Clone)]
pub struct BatchInput<T> {
    pub batch: GraphBatch,
    /// Positional embeddings, one row per node.
    pub pos: Array2<T>,
    /// Condition embeddings, one row per node.
    pub cond: Array2<T>,
    pub attrs: Option<Array2<T>>,
}

impl<T: Real> BatchInput<T> {
    /// Stack per-subgraph `(csr, P, P', attributes)` parts.
    pub fn from_parts<'a>(
        parts: impl IntoIterator<Item = ((&'a [usize], &'a [u32]), ArrayView2<'a, T>, ArrayView2<'a, T>, Option<ArrayView2<'a, T>>)>,
    ) -> Result<Self> {
        let mut csrs = Vec::new();
        let (mut pos, mut cond, mut attrs) = (Vec::new(), Vec::new(), Vec::new());
        let mut all_attrs = true;
        for (csr, p, pc, x) in parts {
            let n = csr.0.len() - 1;
            if p.nrows() != n || pc.nrows() != n {
                return Err(Error::Shape(format!(
                    "embeddings have {} and {} rows for a {n}-node subgraph",
                    p.nrows(),
                    pc.nrows()
                )));
            }
            csrs.push(csr);
            pos.push(p);
            cond.push(pc);
            match x {
                Some(x) if x.nrows() == n => attrs.push(x),
                Some(x) => return Err(Error::Shape(format!("{} attribute rows for a {n}-node subgraph", x.nrows()))),
                None => all_attrs = false,
            }
        }
        if csrs.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        let stack = |v: &[ArrayView2<T>]| ndarray::concatenate(Axis(0), v).map_err(|e| Error::Shape(e.to_string()));
        Ok(BatchInput {
            batch: GraphBatch::from_csrs(csrs),
            pos: stack(&pos)?,
            cond: stack(&cond)?,
            attrs: if all_attrs { Some(stack(&attrs)?) } else { None },
        })
    }

    pub fn from_subgraph(subgraph: &Subgraph, pos: ArrayView2<T>, cond: ArrayView2<T>) -> Result<Self> {
        let attrs = subgraph.local_attributes.as_ref().map(|x| x.mapv(|v| c::<T>(v)));
        BatchInput::from_parts([(subgraph.csr(), pos, cond, attrs.as_ref().map(|a| a.view()))])
    }
}

/// Values saved by [`GraphControlModel::forward_tape`].
pub struct ModelTape<T> {
    use_prompts: bool,
    frozen: Option<GinTape<T>>,
    copy: Option<GinTape<T>>,
    copy_readout: Option<Array2<T>>,
    x_cond: Option<Array2<T>>,
    attr: Option<GinTape<T>>,
    /// Subgraph representations `H`, one row per graph.
    pub h: Array2<T>,
}

fn map_opt<A, B>(x: &Option<A>, f: impl FnOnce(&A) -> B) -> Option<B> {
    x.as_ref().map(f)
}

impl<T: Real> GraphControlModel<T> {
    /// Frozen pre-trained encoder, exact trainable copy, zero MLPs, fresh classifier.
    pub fn new(pretrained: &GinEncoder<T>, num_classes: usize, rng: &mut impl Rng) -> Self {
        let k = pretrained.input_dim();
        let l = pretrained.output_dim();
        GraphControlModel {
            frozen: Some(pretrained.clone()),
            copy: Some(pretrained.clone()),
            z1: Some(Linear::zeros(k, k)),
            z2: Some(Linear::zeros(l, l)),
            attr_encoder: None,
            classifier: Linear::glorot(l, num_classes, rng),
            prompts: None,
            trainable: Trainable {
                copy: true,
                zero: true,
                ..Trainable::default()
            },
        }
    }

    /// Frozen encoder and classifier only.
    pub fn structure_only(pretrained: &GinEncoder<T>, num_classes: usize, rng: &mut impl Rng) -> Self {
        GraphControlModel {
            frozen: Some(pretrained.clone()),
            copy: None,
            z1: None,
            z2: None,
            attr_encoder: None,
            classifier: Linear::glorot(pretrained.output_dim(), num_classes, rng),
            prompts: None,
            trainable: Trainable::default(),
        }
    }

    /// Attach uniform(-0.01, 0.01) prompts and freeze the trainable copy.
    pub fn enable_prompts(&mut self, rng: &mut impl Rng) {
        let k = self.input_dim();
        let mut draw = || Array1::from_shape_fn(k, |_| c::<T>(rng.random_range(-PROMPT_INIT..PROMPT_INIT)));
        self.prompts = Some(Prompts {
            q: draw(),
            q_cond: draw(),
        });
        self.trainable.prompts = true;
        self.trainable.copy = false;
        self.trainable.frozen = false;
    }

    pub fn input_dim(&self) -> usize {
        self.frozen
            .as_ref()
            .or(self.copy.as_ref())
            .map(|e| e.input_dim())
            .unwrap_or(0)
    }

    pub fn embedding_dim(&self) -> usize {
        self.classifier.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.output_dim()
    }

    /// Structural consistency of the branches.
    pub fn validate(&self) -> Result<()> {
        let l = self.embedding_dim();
        let control = [self.copy.is_some(), self.z1.is_some(), self.z2.is_some()];
        if control.iter().any(|&b| b != control[0]) {
            return Err(Error::Shape("trainable copy and zero MLPs must be present together".into()));
        }
        if self.frozen.is_none() && self.copy.is_none() && self.attr_encoder.is_none() {
            return Err(Error::Shape("model has no encoder branch".into()));
        }
        for enc in [&self.frozen, &self.copy, &self.attr_encoder].into_iter().flatten() {
            if enc.output_dim() != l {
                return Err(Error::Shape(format!("encoder width {} != classifier input {l}", enc.output_dim())));
            }
        }
        let k = self.input_dim();
        if let (Some(f), Some(cp)) = (&self.frozen, &self.copy) {
            if f.input_dim() != cp.input_dim() {
                return Err(Error::Shape("frozen encoder and copy disagree on input width".into()));
            }
        }
        if let (Some(z1), Some(z2)) = (&self.z1, &self.z2) {
            if z1.input_dim() != k || z1.output_dim() != k || z2.input_dim() != l || z2.output_dim() != l {
                return Err(Error::Shape("zero MLP shapes do not match k/l".into()));
            }
        }
        if let Some(p) = &self.prompts {
            if p.q.len() != k || p.q_cond.len() != k {
                return Err(Error::Shape(format!("prompts must have length {k}")));
            }
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        GraphControlModel {
            frozen: map_opt(&self.frozen, |e| e.zeros_like()),
            copy: map_opt(&self.copy, |e| e.zeros_like()),
            z1: map_opt(&self.z1, |z| z.zeros_like()),
            z2: map_opt(&self.z2, |z| z.zeros_like()),
            attr_encoder: map_opt(&self.attr_encoder, |e| e.zeros_like()),
            classifier: self.classifier.zeros_like(),
            prompts: map_opt(&self.prompts, |p| Prompts {
                q: Array1::zeros(p.q.len()),
                q_cond: Array1::zeros(p.q_cond.len()),
            }),
            trainable: self.trainable,
        }
    }

    pub fn cast<U: Real>(&self) -> GraphControlModel<U> {
        GraphControlModel {
            frozen: map_opt(&self.frozen, |e| e.cast()),
            copy: map_opt(&self.copy, |e| e.cast()),
            z1: map_opt(&self.z1, |z| z.cast()),
            z2: map_opt(&self.z2, |z| z.cast()),
            attr_encoder: map_opt(&self.attr_encoder, |e| e.cast()),
            classifier: self.classifier.cast(),
            prompts: map_opt(&self.prompts, |p| Prompts {
                q: p.q.mapv(|v| c(v.to_f64())),
                q_cond: p.q_cond.mapv(|v| c(v.to_f64())),
            }),
            trainable: self.trainable,
        }
    }

    /// Trainable tensors in optimizer order.
    pub fn trainable_params(&self) -> Vec<(String, &[T])> {
        let t = self.trainable;
        let mut out = Vec::new();
        if let (true, Some(p)) = (t.prompts, &self.prompts) {
            out.push(("prompts.q".to_string(), p.q.as_slice().unwrap()));
            out.push(("prompts.q_cond".to_string(), p.q_cond.as_slice().unwrap()));
        }
        if let (true, Some(e)) = (t.frozen, &self.frozen) {
            out.extend(e.params("frozen"));
        }
        if let (true, Some(e)) = (t.copy, &self.copy) {
            out.extend(e.params("copy"));
        }
        if t.zero {
            for (name, z) in [("z1", &self.z1), ("z2", &self.z2)] {
                if let Some(z) = z {
                    out.extend(z.params(name));
                }
            }
        }
        if let (true, Some(e)) = (t.attr, &self.attr_encoder) {
            out.extend(e.params("attr"));
        }
        out.extend(self.classifier.params("classifier"));
        out
    }

    /// Mutable views matching [`trainable_params`](Self::trainable_params).
    pub fn trainable_params_mut(&mut self) -> Vec<&mut [T]> {
        let t = self.trainable;
        let mut out = Vec::new();
        if let (true, Some(p)) = (t.prompts, &mut self.prompts) {
            out.push(p.q.as_slice_mut().unwrap());
            out.push(p.q_cond.as_slice_mut().unwrap());
        }
        if let (true, Some(e)) = (t.frozen, &mut self.frozen) {
            out.extend(e.params_mut());
        }
        if let (true, Some(e)) = (t.copy, &mut self.copy) {
            out.extend(e.params_mut());
        }
        if t.zero {
            for z in [&mut self.z1, &mut self.z2].into_iter().flatten() {
                out.extend(z.params_mut());
            }
        }
        if let (true, Some(e)) = (t.attr, &mut self.attr_encoder) {
            out.extend(e.params_mut());
        }
        out.extend(self.classifier.params_mut());
        out
    }

    pub fn num_trainable(&self) -> usize {
        self.trainable_params().iter().map(|(_, p)| p.len()).sum()
    }

    /// Subgraph representations `H` (one row per graph) and the tape.
    pub fn forward_tape(&self, input: &BatchInput<T>, use_prompts: bool) -> Result<(Array2<T>, ModelTape<T>)> {
        let k = self.input_dim();
        let n = input.batch.num_nodes();
        if input.pos.dim() != (n, k) || input.cond.dim() != (n, k) {
            return Err(Error::Shape(format!(
                "P is {:?} and P' is {:?}, expected ({n}, {k})",
                input.pos.dim(),
                input.cond.dim()
            )));
        }
        let prompts = if use_prompts {
            Some(self.prompts.as_ref().ok_or_else(|| Error::Shape("model has no prompts".into()))?)
        } else {
            None
        };
        let x_main = match prompts {
            Some(p) => &input.pos + &p.q,
            None => input.pos.clone(),
        };
        let batch = &input.batch;
        let mut h = Array2::zeros((batch.num_graphs(), self.embedding_dim()));

        let frozen = self.frozen.as_ref().map(|enc| {
            let (out, tape) = enc.forward_tape(batch, x_main.view());
            h += &batch.readout(out.view());
            tape
        });

        let (mut copy, mut copy_readout, mut x_cond) = (None, None, None);
        if let (Some(enc), Some(z1), Some(z2)) = (&self.copy, &self.z1, &self.z2) {
            let xc = match prompts {
                Some(p) => &input.cond + &p.q_cond,
                None => input.cond.clone(),
            };
            let u = &x_main + &z1.forward(xc.view());
            let (out, tape) = enc.forward_tape(batch, u.view());
            let r = batch.readout(out.view());
            h += &z2.forward(r.view());
            copy = Some(tape);
            copy_readout = Some(r);
            x_cond = Some(xc);
        }

        let attr = match &self.attr_encoder {
            Some(enc) => {
                let x = input
                    .attrs
                    .as_ref()
                    .ok_or_else(|| Error::Shape("attribute encoder needs node attributes".into()))?;
                if x.ncols() != enc.input_dim() {
                    return Err(Error::Shape(format!(
                        "attribute width {} != encoder input {}",
                        x.ncols(),
                        enc.input_dim()
                    )));
                }
                let (out, tape) = enc.forward_tape(batch, x.view());
                h += &batch.readout(out.view());
                Some(tape)
            }
            None => None,
        };

        let tape = ModelTape {
            use_prompts,
            frozen,
            copy,
            copy_readout,
            x_cond,
            attr,
            h: h.clone(),
        };
        Ok((h, tape))
    }

    pub fn logits(&self, input: &BatchInput<T>, use_prompts: bool) -> Result<Array2<T>> {
        let (h, _) = self.forward_tape(input, use_prompts)?;
        Ok(self.classifier.forward(h.view()))
    }

    /// Gradients of all trainable groups given `dL/dlogits`.
    ///
    /// The result has this model's shape; non-trainable groups stay zero.
    pub fn backward(&self, input: &BatchInput<T>, tape: &ModelTape<T>, d_logits: ArrayView2<T>) -> GraphControlModel<T> {
        let t = self.trainable;
        let batch = &input.batch;
        let mut g = self.zeros_like();
        let (gc, dh) = self.classifier.backward(tape.h.view(), d_logits);
        g.classifier = gc;

        let want_prompts = tape.use_prompts && t.prompts && self.prompts.is_some();
        let mut dx_main = want_prompts.then(|| Array2::<T>::zeros(input.pos.raw_dim()));
        let mut dx_cond = None;

        if let (Some(enc), Some(ft)) = (&self.frozen, &tape.frozen) {
            if t.frozen || want_prompts {
                let dn = batch.readout_backward(dh.view());
                let (pg, dx) = enc.backward(batch, ft, dn.view(), t.frozen);
                if let Some(pg) = pg {
                    g.frozen = Some(pg);
                }
                if let Some(acc) = dx_main.as_mut() {
                    *acc += &dx;
                }
            }
        }

        if let (Some(enc), Some(z1), Some(z2), Some(ct)) = (&self.copy, &self.z1, &self.z2, &tape.copy) {
            let r = tape.copy_readout.as_ref().unwrap();
            let (gz2, dr) = z2.backward(r.view(), dh.view());
            if t.zero {
                g.z2 = Some(gz2);
            }
            if t.copy || t.zero || want_prompts {
                let dn = batch.readout_backward(dr.view());
                let (pg, du) = enc.backward(batch, ct, dn.view(), t.copy);
                if let Some(pg) = pg {
                    g.copy = Some(pg);
                }
                let xc = tape.x_cond.as_ref().unwrap();
                let (gz1, dxc) = z1.backward(xc.view(), du.view());
                if t.zero {
                    g.z1 = Some(gz1);
                }
                if let Some(acc) = dx_main.as_mut() {
                    *acc += &du;
                }
                dx_cond = Some(dxc);
            }
        }

        if let (true, Some(enc), Some(at)) = (t.attr, &self.attr_encoder, &tape.attr) {
            let dn = batch.readout_backward(dh.view());
            let (pg, _) = enc.backward(batch, at, dn.view(), true);
            g.attr_encoder = pg;
        }

        if let (Some(gp), Some(dm)) = (g.prompts.as_mut(), dx_main) {
            gp.q = dm.sum_axis(Axis(0));
            if let Some(dc) = dx_cond {
                gp.q_cond = dc.sum_axis(Axis(0));
            }
        }
        g
    }
}

impl<T: Real> Params<T> for GraphControlModel<T> {
    /// Every tensor, trainable or not.
    fn params(&self, prefix: &str) -> Vec<(String, &[T])> {
        let p = |s: &str| if prefix.is_empty() { s.to_string() } else { format!("{prefix}.{s}") };
        let mut out = Vec::new();
        if let Some(pr) = &self.prompts {
            out.push((p("prompts.q"), pr.q.as_slice().unwrap()));
            out.push((p("prompts.q_cond"), pr.q_cond.as_slice().unwrap()));
        }
        for (name, enc) in [("frozen", &self.frozen), ("copy", &self.copy)] {
            if let Some(e) = enc {
                out.extend(e.params(&p(name)));
            }
        }
        for (name, z) in [("z1", &self.z1), ("z2", &self.z2)] {
            if let Some(z) = z {
                out.extend(z.params(&p(name)));
            }
        }
        if let Some(e) = &self.attr_encoder {
            out.extend(e.params(&p("attr")));
        }
        out.extend(self.classifier.params(&p("classifier")));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        if let Some(pr) = &mut self.prompts {
            out.push(pr.q.as_slice_mut().unwrap());
            out.push(pr.q_cond.as_slice_mut().unwrap());
        }
        for e in [&mut self.frozen, &mut self.copy].into_iter().flatten() {
            out.extend(e.params_mut());
        }
        for z in [&mut self.z1, &mut self.z2].into_iter().flatten() {
            out.extend(z.params_mut());
        }
        if let Some(e) = &mut self.attr_encoder {
            out.extend(e.params_mut());
        }
        out.extend(self.classifier.params_mut());
        out
    }
}

fn single<T: Real>(model: &GraphControlModel<T>, subgraph: &Subgraph, pos: ArrayView2<T>, cond: ArrayView2<T>, prompts: bool) -> Result<Array1<T>> {
    let input = BatchInput::from_subgraph(subgraph, pos, cond)?;
    let (h, _) = model.forward_tape(&input, prompts)?;
    Ok(h.row(0).to_owned())
}

/// Subgraph representation without prompts.
pub fn graphcontrol_forward<T: Real>(
    model: &GraphControlModel<T>,
    subgraph: &Subgraph,
    pos: ArrayView2<T>,
    cond: ArrayView2<T>,
) -> Result<Array1<T>> {
    single(model, subgraph, pos, cond, false)
}

/// Subgraph representation with `q`, `q'` added to every row of `P`, `P'`.
pub fn prompt_forward<T: Real>(
    model: &GraphControlModel<T>,
    subgraph: &Subgraph,
    pos: ArrayView2<T>,
    cond: ArrayView2<T>,
) -> Result<Array1<T>> {
    if model.prompts.is_none() {
        return Err(Error::Shape("prompt_forward needs prompts".into()));
    }
    single(model, subgraph, pos, cond, true)
}
