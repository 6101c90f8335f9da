//! Pair classification head: four holistic branches, object-guided part
//! attention, the human-to-object and object-to-human part branches, and
//! joint interactiveness/action outputs with hand-written backpropagation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::NUM_KEYPOINTS;

/// Probability clamp applied before taking logarithms in the loss.
pub const PROB_EPS: f64 = 1e-7;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Widths and resolutions that fix every tensor shape in the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadDims {
    /// Feature-map channels `D`.
    pub channels: usize,
    /// Holistic crop resolution `D_h`.
    pub holistic_res: usize,
    /// Part crop resolution `D_p`.
    pub part_res: usize,
    /// Side of the pairwise spatial maps.
    pub spatial_res: usize,
    /// Object part grid `R`.
    pub object_grid: usize,
    pub branch_width: usize,
    pub ho_width: usize,
    pub oh_width: usize,
    pub attention_hidden: usize,
    pub inter_hidden: usize,
    pub num_actions: usize,
}

impl HeadDims {
    pub fn holistic_len(&self) -> usize {
        self.channels * self.holistic_res * self.holistic_res
    }
    pub fn spatial_len(&self) -> usize {
        3 * self.spatial_res * self.spatial_res
    }
    pub fn part_appearance_len(&self) -> usize {
        self.channels * self.part_res * self.part_res
    }
    pub fn part_offset_len(&self) -> usize {
        2 * self.part_res * self.part_res
    }
    /// Appearance crop followed by the offset crop.
    pub fn part_len(&self) -> usize {
        self.part_appearance_len() + self.part_offset_len()
    }
    pub fn object_parts(&self) -> usize {
        self.object_grid * self.object_grid
    }
    fn ho_input_len(&self) -> usize {
        (NUM_KEYPOINTS + 1) * self.part_len()
    }
    fn oh_input_len(&self) -> usize {
        (self.object_parts() + 1) * self.part_offset_len()
    }
    fn holistic_width(&self) -> usize {
        4 * self.branch_width
    }
    fn action_input_len(&self) -> usize {
        self.holistic_width() + self.ho_width + self.oh_width
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("channels", self.channels),
            ("holistic_res", self.holistic_res),
            ("part_res", self.part_res),
            ("spatial_res", self.spatial_res),
            ("object_grid", self.object_grid),
            ("branch_width", self.branch_width),
            ("ho_width", self.ho_width),
            ("oh_width", self.oh_width),
            ("attention_hidden", self.attention_hidden),
            ("inter_hidden", self.inter_hidden),
            ("num_actions", self.num_actions),
        ];
        match fields.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(Error::validation(format!("head dimension {name} must be positive"))),
            None => Ok(()),
        }
    }
}

/// Raw per-pair inputs to the head, before any learned layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFeatures {
    pub human: Vec<f64>,
    pub object: Vec<f64>,
    pub union: Vec<f64>,
    pub spatial: Vec<f64>,
    /// Per keypoint: appearance crop then offsets to the object center.
    /// Invisible keypoints are all zeros.
    pub human_parts: Vec<Vec<f64>>,
    /// Object appearance crop then object-box offsets to the object center.
    pub object_ho: Vec<f64>,
    /// Per object part: offsets to the human center. Invalid parts are all zeros.
    pub object_parts: Vec<Vec<f64>>,
    /// Human-box offsets to the human center.
    pub human_oh: Vec<f64>,
}

impl PairFeatures {
    pub fn zeros(dims: &HeadDims) -> Self {
        PairFeatures {
            human: vec![0.0; dims.holistic_len()],
            object: vec![0.0; dims.holistic_len()],
            union: vec![0.0; dims.holistic_len()],
            spatial: vec![0.0; dims.spatial_len()],
            human_parts: vec![vec![0.0; dims.part_len()]; NUM_KEYPOINTS],
            object_ho: vec![0.0; dims.part_len()],
            object_parts: vec![vec![0.0; dims.part_offset_len()]; dims.object_parts()],
            human_oh: vec![0.0; dims.part_offset_len()],
        }
    }

    /// Named segments and their lengths, in `flatten` order.
    pub fn layout(dims: &HeadDims) -> Vec<(String, usize)> {
        let mut out = vec![
            ("human".to_string(), dims.holistic_len()),
            ("object".to_string(), dims.holistic_len()),
            ("union".to_string(), dims.holistic_len()),
            ("spatial".to_string(), dims.spatial_len()),
        ];
        out.extend((0..NUM_KEYPOINTS).map(|k| (format!("human_part.{k}"), dims.part_len())));
        out.push(("object_ho".to_string(), dims.part_len()));
        out.extend((0..dims.object_parts()).map(|k| (format!("object_part.{k}"), dims.part_offset_len())));
        out.push(("human_oh".to_string(), dims.part_offset_len()));
        out
    }

    pub fn flat_len(dims: &HeadDims) -> usize {
        Self::layout(dims).iter().map(|(_, n)| n).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for seg in [&self.human, &self.object, &self.union, &self.spatial] {
            out.extend_from_slice(seg);
        }
        for p in &self.human_parts {
            out.extend_from_slice(p);
        }
        out.extend_from_slice(&self.object_ho);
        for p in &self.object_parts {
            out.extend_from_slice(p);
        }
        out.extend_from_slice(&self.human_oh);
        out
    }

    pub fn unflatten(dims: &HeadDims, flat: &[f64]) -> Result<Self> {
        if flat.len() != Self::flat_len(dims) {
            return Err(Error::Shape(format!(
                "flat pair features have {} values, expected {}",
                flat.len(),
                Self::flat_len(dims)
            )));
        }
        let mut rest = flat;
        let mut take = |n: usize| {
            let (head, tail) = rest.split_at(n);
            rest = tail;
            head.to_vec()
        };
        let human = take(dims.holistic_len());
        let object = take(dims.holistic_len());
        let union = take(dims.holistic_len());
        let spatial = take(dims.spatial_len());
        let human_parts = (0..NUM_KEYPOINTS).map(|_| take(dims.part_len())).collect();
        let object_ho = take(dims.part_len());
        let object_parts = (0..dims.object_parts()).map(|_| take(dims.part_offset_len())).collect();
        let human_oh = take(dims.part_offset_len());
        Ok(PairFeatures {
            human,
            object,
            union,
            spatial,
            human_parts,
            object_ho,
            object_parts,
            human_oh,
        })
    }

    fn check(&self, dims: &HeadDims) -> Result<()> {
        let mismatch = |what: &str, got: usize, want: usize| {
            Err(Error::Shape(format!("{what} has length {got}, expected {want}")))
        };
        for (what, seg, want) in [
            ("human", &self.human, dims.holistic_len()),
            ("object", &self.object, dims.holistic_len()),
            ("union", &self.union, dims.holistic_len()),
            ("spatial", &self.spatial, dims.spatial_len()),
            ("object_ho", &self.object_ho, dims.part_len()),
            ("human_oh", &self.human_oh, dims.part_offset_len()),
        ] {
            if seg.len() != want {
                return mismatch(what, seg.len(), want);
            }
        }
        if self.human_parts.len() != NUM_KEYPOINTS {
            return mismatch("human_parts", self.human_parts.len(), NUM_KEYPOINTS);
        }
        if let Some(p) = self.human_parts.iter().find(|p| p.len() != dims.part_len()) {
            return mismatch("human part", p.len(), dims.part_len());
        }
        if self.object_parts.len() != dims.object_parts() {
            return mismatch("object_parts", self.object_parts.len(), dims.object_parts());
        }
        if let Some(p) = self.object_parts.iter().find(|p| p.len() != dims.part_offset_len()) {
            return mismatch("object part", p.len(), dims.part_offset_len());
        }
        Ok(())
    }

    /// Object appearance crop that drives the part attention.
    fn object_appearance<'a>(&'a self, dims: &HeadDims) -> &'a [f64] {
        &self.object_ho[..dims.part_appearance_len()]
    }
}

/// Multi-hot action target and the derived interactiveness target.
#[derive(Debug, Clone, PartialEq)]
pub struct PairLabels {
    actions: Vec<bool>,
}

impl PairLabels {
    pub fn new(actions: Vec<bool>) -> Self {
        PairLabels { actions }
    }

    pub fn from_action_ids(num_actions: usize, ids: &[usize]) -> Result<Self> {
        let mut actions = vec![false; num_actions];
        for &a in ids {
            *actions
                .get_mut(a)
                .ok_or_else(|| Error::validation(format!("action id {a} out of range")))? = true;
        }
        Ok(PairLabels { actions })
    }

    pub fn actions(&self) -> &[bool] {
        &self.actions
    }

    /// True iff any action is labeled.
    pub fn interactive(&self) -> bool {
        self.actions.iter().any(|&a| a)
    }
}

/// Fully connected layer with a row-major `out x in` weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn uniform(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut draw = |n: usize| (0..n).map(|_| rng.gen_range(-bound..bound)).collect::<Vec<_>>();
        let weight = draw(in_dim * out_dim);
        let bias = draw(out_dim);
        Dense {
            in_dim,
            out_dim,
            weight,
            bias,
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        self.weight
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    /// Accumulates parameter gradients into `grad` and returns the input gradient when asked.
    fn backward(&self, x: &[f64], dz: &[f64], grad: &mut Dense, want_dx: bool) -> Option<Vec<f64>> {
        for (o, &d) in dz.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grad.bias[o] += d;
            let row = &mut grad.weight[o * self.in_dim..(o + 1) * self.in_dim];
            for (g, &v) in row.iter_mut().zip(x) {
                *g += d * v;
            }
        }
        want_dx.then(|| {
            let mut dx = vec![0.0; self.in_dim];
            for (o, &d) in dz.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
                for (g, &w) in dx.iter_mut().zip(row) {
                    *g += d * w;
                }
            }
            dx
        })
    }
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

fn relu_backward(activated: &[f64], grad: &[f64]) -> Vec<f64> {
    activated
        .iter()
        .zip(grad)
        .map(|(&a, &g)| if a > 0.0 { g } else { 0.0 })
        .collect()
}

/// Two stacked fully connected layers, each followed by a rectifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Embed {
    pub fc1: Dense,
    pub fc2: Dense,
}

struct EmbedCache {
    hidden: Vec<f64>,
    out: Vec<f64>,
}

impl Embed {
    fn zeros(input: usize, width: usize) -> Self {
        Embed {
            fc1: Dense::zeros(input, width),
            fc2: Dense::zeros(width, width),
        }
    }

    fn uniform(input: usize, width: usize, rng: &mut impl Rng) -> Self {
        Embed {
            fc1: Dense::uniform(input, width, rng),
            fc2: Dense::uniform(width, width, rng),
        }
    }

    fn forward(&self, x: &[f64]) -> EmbedCache {
        let hidden = relu(self.fc1.forward(x));
        let out = relu(self.fc2.forward(&hidden));
        EmbedCache { hidden, out }
    }

    fn backward(
        &self,
        x: &[f64],
        cache: &EmbedCache,
        d_out: &[f64],
        grad: &mut Embed,
        want_dx: bool,
    ) -> Option<Vec<f64>> {
        let dz2 = relu_backward(&cache.out, d_out);
        let d_hidden = self.fc2.backward(&cache.hidden, &dz2, &mut grad.fc2, true)?;
        let dz1 = relu_backward(&cache.hidden, &d_hidden);
        self.fc1.backward(x, &dz1, &mut grad.fc1, want_dx)
    }
}

/// All learned tensors of the head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub dims: HeadDims,
    pub human: Embed,
    pub object: Embed,
    pub union: Embed,
    pub spatial: Embed,
    /// Hidden layer (rectified) then one sigmoid output per keypoint.
    pub attention: Embed,
    pub ho: Embed,
    pub oh: Embed,
    /// Hidden layer (rectified) then a single sigmoid output.
    pub inter: Embed,
    pub action: Dense,
}

/// Head outputs for one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairScores {
    pub action: Vec<f64>,
    pub interactiveness: f64,
    pub attention: Vec<f64>,
}

struct ForwardCache {
    human: EmbedCache,
    object: EmbedCache,
    union: EmbedCache,
    spatial: EmbedCache,
    holistic: Vec<f64>,
    att_hidden: Vec<f64>,
    alpha: Vec<f64>,
    ho_input: Vec<f64>,
    ho: EmbedCache,
    oh_input: Vec<f64>,
    oh: EmbedCache,
    inter_hidden: Vec<f64>,
    action_input: Vec<f64>,
    scores: PairScores,
}

impl HeadParams {
    pub fn zeros(dims: HeadDims) -> Result<Self> {
        dims.validate()?;
        let bw = dims.branch_width;
        Ok(HeadParams {
            dims,
            human: Embed::zeros(dims.holistic_len(), bw),
            object: Embed::zeros(dims.holistic_len(), bw),
            union: Embed::zeros(dims.holistic_len(), bw),
            spatial: Embed::zeros(dims.spatial_len(), bw),
            attention: Embed {
                fc1: Dense::zeros(dims.part_appearance_len(), dims.attention_hidden),
                fc2: Dense::zeros(dims.attention_hidden, NUM_KEYPOINTS),
            },
            ho: Embed::zeros(dims.ho_input_len(), dims.ho_width),
            oh: Embed::zeros(dims.oh_input_len(), dims.oh_width),
            inter: Embed {
                fc1: Dense::zeros(dims.holistic_width(), dims.inter_hidden),
                fc2: Dense::zeros(dims.inter_hidden, 1),
            },
            action: Dense::zeros(dims.action_input_len(), dims.num_actions),
        })
    }

    /// Seeded uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init(dims: HeadDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let bw = dims.branch_width;
        Ok(HeadParams {
            dims,
            human: Embed::uniform(dims.holistic_len(), bw, rng),
            object: Embed::uniform(dims.holistic_len(), bw, rng),
            union: Embed::uniform(dims.holistic_len(), bw, rng),
            spatial: Embed::uniform(dims.spatial_len(), bw, rng),
            attention: Embed {
                fc1: Dense::uniform(dims.part_appearance_len(), dims.attention_hidden, rng),
                fc2: Dense::uniform(dims.attention_hidden, NUM_KEYPOINTS, rng),
            },
            ho: Embed::uniform(dims.ho_input_len(), dims.ho_width, rng),
            oh: Embed::uniform(dims.oh_input_len(), dims.oh_width, rng),
            inter: Embed {
                fc1: Dense::uniform(dims.holistic_width(), dims.inter_hidden, rng),
                fc2: Dense::uniform(dims.inter_hidden, 1, rng),
            },
            action: Dense::uniform(dims.action_input_len(), dims.num_actions, rng),
        })
    }

    pub fn zeros_like(&self) -> Self {
        HeadParams::zeros(self.dims).expect("dims already validated")
    }

    /// Every layer with its stable name, in serialization order.
    pub fn layers(&self) -> Vec<(&'static str, &Dense)> {
        vec![
            ("human.fc1", &self.human.fc1),
            ("human.fc2", &self.human.fc2),
            ("object.fc1", &self.object.fc1),
            ("object.fc2", &self.object.fc2),
            ("union.fc1", &self.union.fc1),
            ("union.fc2", &self.union.fc2),
            ("spatial.fc1", &self.spatial.fc1),
            ("spatial.fc2", &self.spatial.fc2),
            ("attention.fc1", &self.attention.fc1),
            ("attention.fc2", &self.attention.fc2),
            ("ho.fc1", &self.ho.fc1),
            ("ho.fc2", &self.ho.fc2),
            ("oh.fc1", &self.oh.fc1),
            ("oh.fc2", &self.oh.fc2),
            ("inter.fc1", &self.inter.fc1),
            ("inter.fc2", &self.inter.fc2),
            ("action.fc", &self.action),
        ]
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Dense> {
        vec![
            &mut self.human.fc1,
            &mut self.human.fc2,
            &mut self.object.fc1,
            &mut self.object.fc2,
            &mut self.union.fc1,
            &mut self.union.fc2,
            &mut self.spatial.fc1,
            &mut self.spatial.fc2,
            &mut self.attention.fc1,
            &mut self.attention.fc2,
            &mut self.ho.fc1,
            &mut self.ho.fc2,
            &mut self.oh.fc1,
            &mut self.oh.fc2,
            &mut self.inter.fc1,
            &mut self.inter.fc2,
            &mut self.action,
        ]
    }

    /// Named tensors (`<layer>.weight` with shape `[out, in]`, `<layer>.bias` with shape `[out]`).
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        self.layers()
            .into_iter()
            .flat_map(|(name, d)| {
                [
                    (format!("{name}.weight"), vec![d.out_dim, d.in_dim], d.weight.as_slice()),
                    (format!("{name}.bias"), vec![d.out_dim], d.bias.as_slice()),
                ]
            })
            .collect()
    }

    /// Mutable views in the same order as [`HeadParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers_mut()
            .into_iter()
            .flat_map(|d| [d.weight.as_mut_slice(), d.bias.as_mut_slice()])
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &HeadParams, scale: f64) {
        for (dst, (_, _, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, t)| t.iter().all(|v| v.is_finite()))
    }

    pub fn forward(&self, features: &PairFeatures) -> Result<PairScores> {
        Ok(self.forward_cached(features)?.scores)
    }

    /// Same as [`HeadParams::forward`] but with the attention values supplied
    /// instead of predicted.
    pub fn forward_with_attention(&self, features: &PairFeatures, alpha: &[f64]) -> Result<PairScores> {
        if alpha.len() != NUM_KEYPOINTS {
            return Err(Error::Shape(format!(
                "{} attention values, expected {NUM_KEYPOINTS}",
                alpha.len()
            )));
        }
        Ok(self.run(features, Some(alpha))?.scores)
    }

    /// Rectifier on/off states of every hidden unit; used to detect kinks.
    pub fn activation_pattern(&self, features: &PairFeatures) -> Result<Vec<bool>> {
        let c = self.forward_cached(features)?;
        let mut out = Vec::new();
        for e in [&c.human, &c.object, &c.union, &c.spatial, &c.ho, &c.oh] {
            out.extend(e.hidden.iter().chain(&e.out).map(|&v| v > 0.0));
        }
        out.extend(c.att_hidden.iter().chain(&c.inter_hidden).map(|&v| v > 0.0));
        Ok(out)
    }

    fn forward_cached(&self, f: &PairFeatures) -> Result<ForwardCache> {
        self.run(f, None)
    }

    fn run(&self, f: &PairFeatures, alpha_override: Option<&[f64]>) -> Result<ForwardCache> {
        let dims = &self.dims;
        f.check(dims)?;

        let human = self.human.forward(&f.human);
        let object = self.object.forward(&f.object);
        let union = self.union.forward(&f.union);
        let spatial = self.spatial.forward(&f.spatial);
        let holistic: Vec<f64> = [&human.out, &object.out, &union.out, &spatial.out]
            .into_iter()
            .flatten()
            .copied()
            .collect();

        let att_hidden = relu(self.attention.fc1.forward(f.object_appearance(dims)));
        let alpha: Vec<f64> = match alpha_override {
            Some(a) => a.to_vec(),
            None => self
                .attention
                .fc2
                .forward(&att_hidden)
                .into_iter()
                .map(sigmoid)
                .collect(),
        };

        let mut ho_input = Vec::with_capacity(dims.ho_input_len());
        for (part, &a) in f.human_parts.iter().zip(&alpha) {
            ho_input.extend(part.iter().map(|v| a * v));
        }
        ho_input.extend_from_slice(&f.object_ho);
        let ho = self.ho.forward(&ho_input);

        let mut oh_input = Vec::with_capacity(dims.oh_input_len());
        for part in &f.object_parts {
            oh_input.extend_from_slice(part);
        }
        oh_input.extend_from_slice(&f.human_oh);
        let oh = self.oh.forward(&oh_input);

        let inter_hidden = relu(self.inter.fc1.forward(&holistic));
        let interactiveness = sigmoid(self.inter.fc2.forward(&inter_hidden)[0]);

        let action_input: Vec<f64> = holistic.iter().chain(&ho.out).chain(&oh.out).copied().collect();
        let action: Vec<f64> = self.action.forward(&action_input).into_iter().map(sigmoid).collect();

        if !interactiveness.is_finite() || action.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("head forward pass"));
        }
        Ok(ForwardCache {
            human,
            object,
            union,
            spatial,
            holistic,
            att_hidden,
            alpha: alpha.clone(),
            ho_input,
            ho,
            oh_input,
            oh,
            inter_hidden,
            action_input,
            scores: PairScores {
                action,
                interactiveness,
                attention: alpha,
            },
        })
    }

    /// Loss for one labeled pair and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, f: &PairFeatures, labels: &PairLabels, lambda: f64) -> Result<(f64, HeadParams)> {
        let dims = &self.dims;
        if labels.actions().len() != dims.num_actions {
            return Err(Error::Shape(format!(
                "{} action labels for a head with {} actions",
                labels.actions().len(),
                dims.num_actions
            )));
        }
        let c = self.forward_cached(f)?;
        let loss = pair_loss(&c.scores, labels, lambda)?;
        let mut g = self.zeros_like();

        let d_action: Vec<f64> = c
            .scores
            .action
            .iter()
            .zip(labels.actions())
            .map(|(&s, &y)| logit_grad(s, y))
            .collect();
        let d_inter = lambda * logit_grad(c.scores.interactiveness, labels.interactive());

        let d_action_input = self
            .action
            .backward(&c.action_input, &d_action, &mut g.action, true)
            .expect("requested");
        let hw = dims.holistic_width();
        let (d_hol_action, rest) = d_action_input.split_at(hw);
        let (d_ho, d_oh) = rest.split_at(dims.ho_width);

        let d_inter_hidden = self
            .inter
            .fc2
            .backward(&c.inter_hidden, &[d_inter], &mut g.inter.fc2, true)
            .expect("requested");
        let dz = relu_backward(&c.inter_hidden, &d_inter_hidden);
        let d_hol_inter = self
            .inter
            .fc1
            .backward(&c.holistic, &dz, &mut g.inter.fc1, true)
            .expect("requested");
        let d_hol: Vec<f64> = d_hol_action.iter().zip(&d_hol_inter).map(|(a, b)| a + b).collect();

        let bw = dims.branch_width;
        self.human
            .backward(&f.human, &c.human, &d_hol[..bw], &mut g.human, false);
        self.object
            .backward(&f.object, &c.object, &d_hol[bw..2 * bw], &mut g.object, false);
        self.union
            .backward(&f.union, &c.union, &d_hol[2 * bw..3 * bw], &mut g.union, false);
        self.spatial
            .backward(&f.spatial, &c.spatial, &d_hol[3 * bw..], &mut g.spatial, false);

        self.oh.backward(&c.oh_input, &c.oh, d_oh, &mut g.oh, false);
        let d_ho_input = self
            .ho
            .backward(&c.ho_input, &c.ho, d_ho, &mut g.ho, true)
            .expect("requested");

        // Gating: d(alpha_k) = <d f_{h_k}, raw part feature>.
        let part_len = dims.part_len();
        let d_att_logit: Vec<f64> = f
            .human_parts
            .iter()
            .enumerate()
            .map(|(k, part)| {
                let seg = &d_ho_input[k * part_len..(k + 1) * part_len];
                let d_alpha: f64 = seg.iter().zip(part).map(|(a, b)| a * b).sum();
                d_alpha * c.alpha[k] * (1.0 - c.alpha[k])
            })
            .collect();
        let d_att_hidden = self
            .attention
            .fc2
            .backward(&c.att_hidden, &d_att_logit, &mut g.attention.fc2, true)
            .expect("requested");
        let dz = relu_backward(&c.att_hidden, &d_att_hidden);
        self.attention
            .fc1
            .backward(f.object_appearance(dims), &dz, &mut g.attention.fc1, false);

        if !g.is_finite() {
            return Err(Error::NonFinite("loss gradient"));
        }
        Ok((loss, g))
    }
}

/// Derivative of the clamped cross-entropy with respect to the logit.
fn logit_grad(s: f64, y: bool) -> f64 {
    if s <= PROB_EPS || s >= 1.0 - PROB_EPS {
        0.0
    } else {
        s - if y { 1.0 } else { 0.0 }
    }
}

/// Binary cross-entropy with the probability clamped to `[eps, 1 - eps]`.
pub fn binary_cross_entropy(y: bool, s: f64) -> f64 {
    let s = s.clamp(PROB_EPS, 1.0 - PROB_EPS);
    if y {
        -s.ln()
    } else {
        -(1.0 - s).ln()
    }
}

/// Sum of per-action cross-entropies plus `lambda` times the interactiveness cross-entropy.
pub fn pair_loss(scores: &PairScores, labels: &PairLabels, lambda: f64) -> Result<f64> {
    if scores.action.len() != labels.actions().len() {
        return Err(Error::Shape(format!(
            "{} action scores for {} labels",
            scores.action.len(),
            labels.actions().len()
        )));
    }
    let cls: f64 = scores
        .action
        .iter()
        .zip(labels.actions())
        .map(|(&s, &y)| binary_cross_entropy(y, s))
        .sum();
    let loss = cls + lambda * binary_cross_entropy(labels.interactive(), scores.interactiveness);
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPair {
    pub features: PairFeatures,
    pub labels: PairLabels,
}

/// Momentum SGD settings for desk-scale training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Negatives drawn per positive in each batch.
    pub negatives_per_positive: usize,
    pub loss_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.04,
            momentum: 0.9,
            weight_decay: 1e-4,
            steps: 2000,
            batch_size: 8,
            negatives_per_positive: 3,
            loss_weight: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: HeadParams,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Mean loss over a dataset.
pub fn dataset_loss(params: &HeadParams, data: &[LabeledPair], lambda: f64) -> Result<f64> {
    let mut total = 0.0;
    for pair in data {
        total += pair_loss(&params.forward(&pair.features)?, &pair.labels, lambda)?;
    }
    Ok(total / data.len().max(1) as f64)
}

/// Fraction of pairs whose thresholded interactiveness and every thresholded
/// action score match the labels.
pub fn pair_accuracy(params: &HeadParams, data: &[LabeledPair]) -> Result<f64> {
    let mut correct = 0usize;
    for pair in data {
        let s = params.forward(&pair.features)?;
        let inter_ok = (s.interactiveness > 0.5) == pair.labels.interactive();
        let actions_ok = s
            .action
            .iter()
            .zip(pair.labels.actions())
            .all(|(&v, &y)| (v > 0.5) == y);
        if inter_ok && actions_ok {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len().max(1) as f64)
}

/// Trains a freshly initialized head with momentum SGD. Each batch mixes
/// positives and negatives at `1 : negatives_per_positive`, sampled with
/// replacement from a seeded generator.
pub fn train_toy(data: &[LabeledPair], dims: HeadDims, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::validation("training set is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::validation("batch size must be positive"));
    }
    let mut params = HeadParams::init(dims, cfg.seed)?;
    let initial_loss = dataset_loss(&params, data, cfg.loss_weight)?;

    let positives: Vec<usize> = (0..data.len()).filter(|&i| data[i].labels.interactive()).collect();
    let negatives: Vec<usize> = (0..data.len()).filter(|&i| !data[i].labels.interactive()).collect();
    let group = cfg.negatives_per_positive + 1;
    let pos_per_batch = cfg.batch_size.div_ceil(group);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5ee_d0fb_a7c4);
    let mut velocity = params.zeros_like();
    for _ in 0..cfg.steps {
        let mut grad = params.zeros_like();
        for slot in 0..cfg.batch_size {
            let pool = match (positives.is_empty(), negatives.is_empty()) {
                (true, _) => &negatives,
                (_, true) => &positives,
                _ if slot < pos_per_batch => &positives,
                _ => &negatives,
            };
            let pair = &data[pool[rng.gen_range(0..pool.len())]];
            let (_, g) = params.loss_and_grad(&pair.features, &pair.labels, cfg.loss_weight)?;
            grad.add_scaled(&g, 1.0 / cfg.batch_size as f64);
        }
        if cfg.weight_decay != 0.0 {
            grad.add_scaled(&params, cfg.weight_decay);
        }
        for (v, (_, _, g)) in velocity.tensors_mut().into_iter().zip(grad.tensors()) {
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi = cfg.momentum * *vi + gi;
            }
        }
        if cfg.learning_rate != 0.0 {
            params.add_scaled(&velocity, -cfg.learning_rate);
        }
        if !params.is_finite() {
            return Err(Error::NonFinite("training parameters"));
        }
    }
    let final_loss = dataset_loss(&params, data, cfg.loss_weight)?;
    Ok(TrainOutcome {
        params,
        initial_loss,
        final_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dims(num_actions: usize) -> HeadDims {
        HeadDims {
            channels: 2,
            holistic_res: 2,
            part_res: 2,
            spatial_res: 3,
            object_grid: 2,
            branch_width: 3,
            ho_width: 4,
            oh_width: 3,
            attention_hidden: 3,
            inter_hidden: 3,
            num_actions,
        }
    }

    fn random_features(dims: &HeadDims, rng: &mut impl Rng) -> PairFeatures {
        let flat: Vec<f64> = (0..PairFeatures::flat_len(dims))
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        PairFeatures::unflatten(dims, &flat).unwrap()
    }

    // Plain dense evaluation, written independently of `Dense::forward`.
    fn oracle_dense(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
        let n_in = x.len();
        (0..b.len())
            .map(|o| {
                let mut acc = b[o];
                for i in 0..n_in {
                    acc += w[o * n_in + i] * x[i];
                }
                acc
            })
            .collect()
    }

    fn oracle_mlp(e: &Embed, x: &[f64]) -> Vec<f64> {
        let h: Vec<f64> = oracle_dense(&e.fc1.weight, &e.fc1.bias, x)
            .iter()
            .map(|v| v.max(0.0))
            .collect();
        oracle_dense(&e.fc2.weight, &e.fc2.bias, &h)
            .iter()
            .map(|v| v.max(0.0))
            .collect()
    }

    fn oracle_sigmoid(v: f64) -> f64 {
        1.0 / (1.0 + (-v).exp())
    }

    fn oracle_attention(p: &HeadParams, f: &PairFeatures) -> Vec<f64> {
        let app = &f.object_ho[..p.dims.part_appearance_len()];
        let h: Vec<f64> = oracle_dense(&p.attention.fc1.weight, &p.attention.fc1.bias, app)
            .iter()
            .map(|v| v.max(0.0))
            .collect();
        oracle_dense(&p.attention.fc2.weight, &p.attention.fc2.bias, &h)
            .into_iter()
            .map(oracle_sigmoid)
            .collect()
    }

    fn oracle_forward(p: &HeadParams, f: &PairFeatures) -> (Vec<f64>, f64) {
        let mut hol = oracle_mlp(&p.human, &f.human);
        hol.extend(oracle_mlp(&p.object, &f.object));
        hol.extend(oracle_mlp(&p.union, &f.union));
        hol.extend(oracle_mlp(&p.spatial, &f.spatial));
        let alpha = oracle_attention(p, f);
        let mut ho_in = vec![];
        for k in 0..NUM_KEYPOINTS {
            ho_in.extend(f.human_parts[k].iter().map(|v| v * alpha[k]));
        }
        ho_in.extend(&f.object_ho);
        let fho = oracle_mlp(&p.ho, &ho_in);
        let oh_in: Vec<f64> = f.object_parts.iter().flatten().chain(&f.human_oh).copied().collect();
        let foh = oracle_mlp(&p.oh, &oh_in);
        let ih: Vec<f64> = oracle_dense(&p.inter.fc1.weight, &p.inter.fc1.bias, &hol)
            .iter()
            .map(|v| v.max(0.0))
            .collect();
        let si = oracle_sigmoid(oracle_dense(&p.inter.fc2.weight, &p.inter.fc2.bias, &ih)[0]);
        let mut act_in = hol.clone();
        act_in.extend(fho);
        act_in.extend(foh);
        let sa = oracle_dense(&p.action.weight, &p.action.bias, &act_in)
            .into_iter()
            .map(oracle_sigmoid)
            .collect();
        (sa, si)
    }

    #[test]
    fn zero_params_give_half() {
        let dims = tiny_dims(4);
        let p = HeadParams::zeros(dims).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = p.forward(&random_features(&dims, &mut rng)).unwrap();
        assert!(s.action.iter().all(|&v| v == 0.5));
        assert_eq!(s.interactiveness, 0.5);
        assert!(s.attention.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn forward_matches_oracle() {
        let dims = tiny_dims(3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for seed in 0..5 {
            let p = HeadParams::init(dims, seed).unwrap();
            let f = random_features(&dims, &mut rng);
            let s = p.forward(&f).unwrap();
            let (sa, si) = oracle_forward(&p, &f);
            assert!((s.interactiveness - si).abs() < 1e-12);
            for (a, b) in s.action.iter().zip(&sa) {
                assert!((a - b).abs() < 1e-12);
            }
            let alpha = oracle_attention(&p, &f);
            for (a, b) in s.attention.iter().zip(&alpha) {
                assert!((a - b).abs() < 1e-12);
                assert!(*a > 0.0 && *a < 1.0);
            }
        }
    }

    #[test]
    fn zero_attention_equals_zeroed_parts() {
        let dims = tiny_dims(3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = HeadParams::init(dims, 11).unwrap();
        let f = random_features(&dims, &mut rng);
        let gated = p.forward_with_attention(&f, &[0.0; NUM_KEYPOINTS]).unwrap();
        let mut blank = f.clone();
        for part in blank.human_parts.iter_mut() {
            part.iter_mut().for_each(|v| *v = 0.0);
        }
        let alpha = p.forward(&blank).unwrap().attention;
        let zeroed = p.forward_with_attention(&blank, &alpha).unwrap();
        assert_eq!(gated.action, zeroed.action);
        assert_eq!(gated.interactiveness, zeroed.interactiveness);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let dims = tiny_dims(3);
        let p = HeadParams::zeros(dims).unwrap();
        let mut f = PairFeatures::zeros(&dims);
        f.union.pop();
        assert!(matches!(p.forward(&f), Err(Error::Shape(_))));
        assert!(PairFeatures::unflatten(&dims, &[0.0; 3]).is_err());
    }

    #[test]
    fn uniform_prediction_loss() {
        let a = 5;
        let scores = PairScores {
            action: vec![0.5; a],
            interactiveness: 0.5,
            attention: vec![],
        };
        let labels = PairLabels::from_action_ids(a, &[1, 3]).unwrap();
        let l = pair_loss(&scores, &labels, 0.1).unwrap();
        assert!((l - (a as f64 + 0.1) * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn near_perfect_prediction_loss() {
        let a = 4;
        let labels = PairLabels::from_action_ids(a, &[2]).unwrap();
        let mut action = vec![0.0; a];
        action[2] = 1.0;
        let scores = PairScores {
            action,
            interactiveness: 1.0,
            attention: vec![],
        };
        let l = pair_loss(&scores, &labels, 0.1).unwrap();
        let expected = -(a as f64) * (1.0 - PROB_EPS).ln() - 0.1 * (1.0 - PROB_EPS).ln();
        assert!((l - expected).abs() < 1e-15);
        assert!(l >= 0.0);
    }

    #[test]
    fn labels_derive_interactiveness() {
        assert!(!PairLabels::from_action_ids(3, &[]).unwrap().interactive());
        assert!(PairLabels::from_action_ids(3, &[0]).unwrap().interactive());
        assert!(PairLabels::from_action_ids(3, &[3]).is_err());
    }

    #[test]
    fn flatten_roundtrip() {
        let dims = tiny_dims(2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = random_features(&dims, &mut rng);
        assert_eq!(PairFeatures::unflatten(&dims, &f.flatten()).unwrap(), f);
        let total: usize = PairFeatures::layout(&dims).iter().map(|(_, n)| n).sum();
        assert_eq!(total, f.flatten().len());
    }

    #[test]
    fn gradient_spot_check() {
        let dims = tiny_dims(3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = HeadParams::init(dims, 3).unwrap();
        let f = random_features(&dims, &mut rng);
        let labels = PairLabels::from_action_ids(3, &[1]).unwrap();
        let (_, g) = p.loss_and_grad(&f, &labels, 0.1).unwrap();
        let h = 1e-5;
        let eval = |q: &HeadParams| pair_loss(&q.forward(&f).unwrap(), &labels, 0.1).unwrap();
        for (t, (_, _, gt)) in g.tensors().iter().enumerate() {
            let mut plus = p.clone();
            plus.tensors_mut()[t][0] += h;
            let mut minus = p.clone();
            minus.tensors_mut()[t][0] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            assert!(
                (fd - gt[0]).abs() < 1e-6 + 1e-4 * fd.abs(),
                "tensor {t}: {fd} vs {}",
                gt[0]
            );
        }
    }

    #[test]
    fn training_requires_data_and_is_deterministic() {
        let dims = tiny_dims(2);
        assert!(train_toy(&[], dims, &TrainConfig::default()).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data: Vec<LabeledPair> = (0..8)
            .map(|i| LabeledPair {
                features: random_features(&dims, &mut rng),
                labels: PairLabels::from_action_ids(2, if i % 4 == 0 { &[0] } else { &[] }).unwrap(),
            })
            .collect();
        let cfg = TrainConfig {
            steps: 20,
            batch_size: 4,
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train_toy(&data, dims, &cfg).unwrap();
        let b = train_toy(&data, dims, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert!(a.final_loss < a.initial_loss);

        let frozen = train_toy(
            &data,
            dims,
            &TrainConfig {
                learning_rate: 0.0,
                ..cfg
            },
        )
        .unwrap();
        assert_eq!(frozen.params, HeadParams::init(dims, cfg.seed).unwrap());
    }
}
