//! Encoder, causal attention over the domain sequence, and the LSTM
//! hypernetwork that emits classifier weights.
//!
//! Forward passes are written against a [`Graph`]: call [`AirlState::bind`]
//! once per step to get the parameter handles, then compose the pieces.

mod classifier;

pub use classifier::{devectorize_classifier, vectorize_classifier, Classifier, ClassifierLayout, ClassifierVec};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Checkpoint, Graph, ParamId, ParamSet, RunningStats, Tensor, Var, LEAKY_SLOPE};

const BN_MEAN_KEY: &str = "trans.bn.running_mean";
const BN_VAR_KEY: &str = "trans.bn.running_var";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AirlConfig {
    pub input_dim: usize,
    pub repr_dim: usize,
    pub n_classes: usize,
    pub encoder_layers: usize,
    pub lstm_hidden: usize,
    pub classifier_hidden: usize,
    /// Normalize attention scores with a softmax over positions.
    pub attention_softmax: bool,
    /// Without attention the representation passed to the classifier is `z_t` itself.
    pub use_attention: bool,
    /// Without the hypernetwork one shared classifier is trained for every step.
    pub use_hypernetwork: bool,
}

impl Default for AirlConfig {
    fn default() -> Self {
        Self::new(2, 2)
    }
}

impl AirlConfig {
    pub fn new(input_dim: usize, n_classes: usize) -> Self {
        Self {
            input_dim,
            repr_dim: 32,
            n_classes,
            encoder_layers: 4,
            lstm_hidden: 128,
            classifier_hidden: 32,
            attention_softmax: false,
            use_attention: true,
            use_hypernetwork: true,
        }
    }

    /// One logit for binary tasks, one per class otherwise.
    pub fn n_output(&self) -> usize {
        if self.n_classes == 2 {
            1
        } else {
            self.n_classes
        }
    }

    pub fn classifier_len(&self) -> usize {
        ClassifierLayout::of(self).len()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_dim", self.input_dim),
            ("repr_dim", self.repr_dim),
            ("encoder_layers", self.encoder_layers),
            ("lstm_hidden", self.lstm_hidden),
            ("classifier_hidden", self.classifier_hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::param(format!("{name} must be positive")));
        }
        if self.n_classes < 2 {
            return Err(Error::param("at least two classes are required"));
        }
        Ok(())
    }
}

type Linear = (ParamId, ParamId);

#[derive(Debug, Clone)]
struct AttentionIds {
    q: Linear,
    k: Linear,
    v: Linear,
    u: Linear,
    post: Linear,
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Debug, Clone)]
struct HyperIds {
    input: Linear,
    w_ih: ParamId,
    w_hh: ParamId,
    b: ParamId,
    output: Linear,
}

#[derive(Debug, Clone)]
struct Ids {
    encoder: Vec<Linear>,
    attention: Option<AttentionIds>,
    hyper: Option<HyperIds>,
    /// `h1` with the hypernetwork, the shared classifier without it.
    first: ParamId,
}

/// Trainable parameters plus the running statistics of the attention block's
/// batch normalization.
#[derive(Debug, Clone)]
pub struct AirlState {
    pub config: AirlConfig,
    pub params: ParamSet,
    pub bn: RunningStats,
    ids: Ids,
}

fn uniform(rng: &mut rng::Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

fn linear(ps: &mut ParamSet, rng: &mut rng::Rng, name: &str, fan_in: usize, fan_out: usize) -> Linear {
    let w = ps.add(format!("{name}.w"), uniform(rng, &[fan_in, fan_out], 1.0 / (fan_in as f64).sqrt()));
    let b = ps.add(format!("{name}.b"), Tensor::zeros(&[1, fan_out]));
    (w, b)
}

/// A classifier vector initialized like two fresh affine layers.
fn init_classifier(rng: &mut rng::Rng, lay: &ClassifierLayout) -> Tensor {
    let mut flat = vec![0.0; lay.len()];
    let [w1, _, w2, _] = lay.blocks();
    let b1 = 1.0 / (lay.d as f64).sqrt();
    flat[w1.0..w1.0 + w1.1].iter_mut().for_each(|v| *v = rng.random_range(-b1..b1));
    let b2 = 1.0 / (lay.hidden as f64).sqrt();
    flat[w2.0..w2.0 + w2.1].iter_mut().for_each(|v| *v = rng.random_range(-b2..b2));
    Tensor::row(&flat)
}

impl AirlState {
    /// Weights ~ Uniform(+-1/sqrt(fan_in)), biases 0, LSTM forget-gate bias 1.
    pub fn new(config: AirlConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, rng::streams::INIT);
        let mut ps = ParamSet::new();
        let d = config.repr_dim;
        let encoder = (0..config.encoder_layers)
            .map(|i| {
                let fan_in = if i == 0 { config.input_dim } else { d };
                linear(&mut ps, &mut rng, &format!("enc.{i}"), fan_in, d)
            })
            .collect();
        let attention = config.use_attention.then(|| AttentionIds {
            q: linear(&mut ps, &mut rng, "trans.q", d, d),
            k: linear(&mut ps, &mut rng, "trans.k", d, d),
            v: linear(&mut ps, &mut rng, "trans.v", d, d),
            u: linear(&mut ps, &mut rng, "trans.u", d, d),
            post: linear(&mut ps, &mut rng, "trans.post", d, d),
            gamma: ps.add("trans.bn.gamma", Tensor::full(&[1, d], 1.0)),
            beta: ps.add("trans.bn.beta", Tensor::zeros(&[1, d])),
        });
        let lay = ClassifierLayout::of(&config);
        let l = lay.len();
        let hyper = config.use_hypernetwork.then(|| {
            let hd = config.lstm_hidden;
            let input = linear(&mut ps, &mut rng, "lstm.in", l, hd);
            let bound = 1.0 / (hd as f64).sqrt();
            let w_ih = ps.add("lstm.cell.w_ih", uniform(&mut rng, &[hd, 4 * hd], bound));
            let w_hh = ps.add("lstm.cell.w_hh", uniform(&mut rng, &[hd, 4 * hd], bound));
            let mut bias = Tensor::zeros(&[1, 4 * hd]);
            bias.data_mut()[hd..2 * hd].iter_mut().for_each(|v| *v = 1.0);
            let b = ps.add("lstm.cell.b", bias);
            let output = linear(&mut ps, &mut rng, "lstm.out", hd, l);
            HyperIds { input, w_ih, w_hh, b, output }
        });
        let first_name = if config.use_hypernetwork { "h1" } else { "classifier" };
        let first = ps.add(first_name, init_classifier(&mut rng, &lay));
        Ok(Self {
            bn: RunningStats::new(d),
            config,
            params: ps,
            ids: Ids {
                encoder,
                attention,
                hyper,
                first,
            },
        })
    }

    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.params.bind(g)
    }

    /// Binds the parameters as constants (no gradients).
    pub fn bind_frozen(&self, g: &mut Graph) -> Vec<Var> {
        self.params.ids().map(|id| g.constant(self.params.get(id).clone())).collect()
    }

    fn affine(g: &mut Graph, vars: &[Var], x: Var, (w, b): Linear) -> Result<Var> {
        g.affine(x, vars[w.index()], vars[b.index()])
    }

    /// `Enc(x)`: affine layers with ReLU between them, `n x input_dim -> n x d`.
    pub fn encode(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        let width = g.value(x).cols();
        if g.value(x).ndim() != 2 || width != self.config.input_dim {
            return Err(Error::dim(
                "encode",
                format!("input width {width}, expected {}", self.config.input_dim),
            ));
        }
        let mut h = x;
        let last = self.ids.encoder.len() - 1;
        for (i, &layer) in self.ids.encoder.iter().enumerate() {
            h = Self::affine(g, vars, h, layer)?;
            if i < last {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Attention output before the post block for steps `1..=upto`.
    ///
    /// `z_all` stacks the domain representations row-block-wise, `n` rows per
    /// domain. Row `j` of step `t` attends to row `j` of steps `1..=t`:
    /// `sum_s a_s V(z_s) + U(z_t)` with `a_s = K(z_s) . Q(z_t) / sqrt(d)`.
    pub fn attention_raw(&self, g: &mut Graph, vars: &[Var], z_all: Var, n: usize, upto: usize) -> Result<Vec<Var>> {
        let ids = self
            .ids
            .attention
            .as_ref()
            .ok_or_else(|| Error::usage("model was built without attention"))?;
        let (rows, d) = g.value(z_all).as_2d();
        if n == 0 || upto == 0 || rows < n * upto || rows % n != 0 {
            return Err(Error::dim("attend", format!("{rows} rows cannot hold {upto} steps of {n}")));
        }
        let q = Self::affine(g, vars, z_all, ids.q)?;
        let k = Self::affine(g, vars, z_all, ids.k)?;
        let v = Self::affine(g, vars, z_all, ids.v)?;
        let u = Self::affine(g, vars, z_all, ids.u)?;
        let scale = 1.0 / (d as f64).sqrt();
        let mut out = Vec::with_capacity(upto);
        for t in 1..=upto {
            let u_t = g.slice(u, 0, (t - 1) * n, n)?;
            let reps: Vec<usize> = (0..t).flat_map(|_| (t - 1) * n..t * n).collect();
            let q_rep = g.gather_rows(q, &reps)?;
            let k_past = g.slice(k, 0, 0, t * n)?;
            let prod = g.mul(k_past, q_rep)?;
            let dots = g.sum_axis(prod, 1)?;
            let mut scores = g.scale(dots, scale)?;
            if self.config.attention_softmax {
                let grid = g.reshape(scores, &[t, n])?;
                let norm = g.softmax(grid, 0)?;
                scores = g.reshape(norm, &[t * n, 1])?;
            }
            let v_past = g.slice(v, 0, 0, t * n)?;
            let weighted = g.mul_col(v_past, scores)?;
            let blocks = g.reshape(weighted, &[t, n * d])?;
            let summed = g.sum_axis(blocks, 0)?;
            let mixed = g.reshape(summed, &[n, d])?;
            out.push(g.add(mixed, u_t)?);
        }
        Ok(out)
    }

    /// `affine -> batchnorm -> leaky relu`. With `stats` the batch statistics
    /// are used and folded into `stats`; without, the stored running statistics.
    pub fn post_block(&self, g: &mut Graph, vars: &[Var], x: Var, stats: Option<&mut RunningStats>) -> Result<Var> {
        let ids = self
            .ids
            .attention
            .as_ref()
            .ok_or_else(|| Error::usage("model was built without attention"))?;
        let h = Self::affine(g, vars, x, ids.post)?;
        let (gamma, beta) = (vars[ids.gamma.index()], vars[ids.beta.index()]);
        let h = match stats {
            Some(s) => g.batchnorm_1d(h, gamma, beta, s, true)?,
            None => {
                let mut frozen = self.bn.clone();
                g.batchnorm_1d(h, gamma, beta, &mut frozen, false)?
            }
        };
        g.leaky_relu(h, LEAKY_SLOPE)
    }

    /// `Trans(z_{<=t})` for every `t` in `1..=upto`; see [`Self::attention_raw`].
    /// Without attention this returns the blocks of `z_all` unchanged.
    pub fn attend_sequence(
        &self,
        g: &mut Graph,
        vars: &[Var],
        z_all: Var,
        n: usize,
        upto: usize,
        mut stats: Option<&mut RunningStats>,
    ) -> Result<Vec<Var>> {
        if !self.config.use_attention {
            return (0..upto).map(|t| g.slice(z_all, 0, t * n, n)).collect();
        }
        let raw = self.attention_raw(g, vars, z_all, n, upto)?;
        raw.into_iter()
            .map(|r| self.post_block(g, vars, r, stats.as_deref_mut()))
            .collect()
    }

    /// `Trans(z_{<=t})` for the last element of `z_seq`.
    pub fn attend(&self, g: &mut Graph, vars: &[Var], z_seq: &[Var], stats: Option<&mut RunningStats>) -> Result<Var> {
        let first = z_seq.first().ok_or_else(|| Error::usage("attend needs at least one step"))?;
        let shape = g.value(*first).shape().to_vec();
        if z_seq.iter().any(|z| g.value(*z).shape() != shape.as_slice()) {
            return Err(Error::dim("attend", "steps differ in shape"));
        }
        let stacked = g.concat(z_seq, 0)?;
        let out = self.attend_sequence(g, vars, stacked, shape[0], z_seq.len(), stats)?;
        Ok(*out.last().expect("nonempty"))
    }

    fn lstm_step(&self, g: &mut Graph, vars: &[Var], h_prev: Var, state: Option<(Var, Var)>) -> Result<(Var, (Var, Var))> {
        let ids = self
            .ids
            .hyper
            .as_ref()
            .ok_or_else(|| Error::usage("model was built without the hypernetwork"))?;
        let x = Self::affine(g, vars, h_prev, ids.input)?;
        let (hs, cs) = match state {
            Some(s) => s,
            None => {
                let zeros = Tensor::zeros(&[1, self.config.lstm_hidden]);
                (g.constant(zeros.clone()), g.constant(zeros))
            }
        };
        let (hs, cs) = g.lstm_cell(x, hs, cs, vars[ids.w_ih.index()], vars[ids.w_hh.index()], vars[ids.b.index()])?;
        let out = Self::affine(g, vars, hs, ids.output)?;
        Ok((out, (hs, cs)))
    }

    /// `h_t = LSTM(h_{<t})`: reads the history in order with carried state and
    /// projects the final hidden state to a classifier vector.
    pub fn generate_classifier(&self, g: &mut Graph, vars: &[Var], history: &[Var]) -> Result<Var> {
        if history.is_empty() {
            return Err(Error::usage("classifier history is empty"));
        }
        let mut state = None;
        let mut out = None;
        for &h in history {
            let (o, s) = self.lstm_step(g, vars, h, state)?;
            out = Some(o);
            state = Some(s);
        }
        Ok(out.expect("nonempty history"))
    }

    /// `h_1..h_count`: the trainable `h_1` followed by LSTM outputs, each fed
    /// back as the next input. Without the hypernetwork every entry is the
    /// shared classifier.
    pub fn classifier_sequence(&self, g: &mut Graph, vars: &[Var], count: usize) -> Result<Vec<Var>> {
        let first = vars[self.ids.first.index()];
        let mut out = vec![first];
        if !self.config.use_hypernetwork {
            out.resize(count, first);
            return Ok(out);
        }
        let mut state = None;
        while out.len() < count {
            let (h, s) = self.lstm_step(g, vars, *out.last().expect("nonempty"), state)?;
            out.push(h);
            state = Some(s);
        }
        out.truncate(count.max(1));
        Ok(out)
    }

    /// Logits `relu(z W1 + b1) W2 + b2` for a `1 x L` classifier vector.
    pub fn classify(&self, g: &mut Graph, h: Var, z: Var) -> Result<Var> {
        let lay = ClassifierLayout::of(&self.config);
        if g.value(h).len() != lay.len() {
            return Err(Error::dim("classify", format!("classifier of length {}, expected {}", g.value(h).len(), lay.len())));
        }
        if g.value(z).cols() != lay.d {
            return Err(Error::dim("classify", format!("representation width {}, expected {}", g.value(z).cols(), lay.d)));
        }
        let h = g.reshape(h, &[1, lay.len()])?;
        let [w1, b1, w2, b2] = lay.blocks();
        let w1 = g.slice(h, 1, w1.0, w1.1)?;
        let w1 = g.reshape(w1, &[lay.d, lay.hidden])?;
        let b1 = g.slice(h, 1, b1.0, b1.1)?;
        let w2 = g.slice(h, 1, w2.0, w2.1)?;
        let w2 = g.reshape(w2, &[lay.hidden, lay.n_output])?;
        let b2 = g.slice(h, 1, b2.0, b2.1)?;
        let hidden = g.affine(z, w1, b1)?;
        let hidden = g.relu(hidden)?;
        g.affine(hidden, w2, b2)
    }

    /// Numeric `h_1..h_count` without gradients.
    pub fn classifiers(&self, count: usize) -> Result<Vec<ClassifierVec>> {
        let mut g = Graph::new();
        let vars = self.bind_frozen(&mut g);
        let hs = self.classifier_sequence(&mut g, &vars, count)?;
        Ok(hs.iter().map(|&h| ClassifierVec::from_tensor(g.value(h))).collect())
    }

    /// `Enc(x)` without gradients.
    pub fn represent(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.bind_frozen(&mut g);
        let xv = g.constant(x.clone());
        let z = self.encode(&mut g, &vars, xv)?;
        Ok(g.value(z).clone())
    }

    /// Logits of `h(Enc(x))` without gradients.
    pub fn logits(&self, h: &ClassifierVec, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.bind_frozen(&mut g);
        let xv = g.constant(x.clone());
        let z = self.encode(&mut g, &vars, xv)?;
        let hv = g.constant(h.as_row());
        let out = self.classify(&mut g, hv, z)?;
        Ok(g.value(out).clone())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = self.params.to_named();
        ck.insert(BN_MEAN_KEY.into(), Tensor::row(&self.bn.mean));
        ck.insert(BN_VAR_KEY.into(), Tensor::row(&self.bn.var));
        ck
    }

    /// Rebuilds a state for `config` and overwrites every tensor from `ck`.
    pub fn from_checkpoint(config: AirlConfig, ck: &Checkpoint) -> Result<Self> {
        let mut state = Self::new(config, 0)?;
        let mut named = ck.clone();
        let mean = named.remove(BN_MEAN_KEY).ok_or_else(|| Error::format("checkpoint lacks BN running mean"))?;
        let var = named.remove(BN_VAR_KEY).ok_or_else(|| Error::format("checkpoint lacks BN running variance"))?;
        if mean.len() != state.bn.mean.len() || var.len() != state.bn.var.len() {
            return Err(Error::format("BN running statistics have the wrong width"));
        }
        state.bn.mean = mean.into_data();
        state.bn.var = var.into_data();
        state.params.load_named(&named)?;
        Ok(state)
    }

    /// Every parameter tensor is finite.
    pub fn is_finite(&self) -> bool {
        self.params.all_finite() && self.bn.mean.iter().chain(&self.bn.var).all(|v| v.is_finite())
    }

    /// Id of `h_1` (or of the shared classifier).
    pub fn first_classifier(&self) -> ParamId {
        self.ids.first
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(d: usize) -> AirlConfig {
        AirlConfig {
            repr_dim: d,
            classifier_hidden: 3,
            lstm_hidden: 4,
            encoder_layers: 2,
            ..AirlConfig::new(2, 2)
        }
    }

    fn set(state: &mut AirlState, name: &str, t: Tensor) {
        let id = state.params.find(name).unwrap_or_else(|| panic!("no {name}"));
        *state.params.get_mut(id) = t;
    }

    fn eye(d: usize) -> Tensor {
        let mut t = Tensor::zeros(&[d, d]);
        for i in 0..d {
            t.data_mut()[i * d + i] = 1.0;
        }
        t
    }

    #[test]
    fn default_encoder_width_is_32() {
        let s = AirlState::new(AirlConfig::new(2, 2), 0).unwrap();
        let z = s.represent(&Tensor::zeros(&[5, 2])).unwrap();
        assert_eq!(z.shape(), &[5, 32]);
    }

    #[test]
    fn zero_encoder_gives_zero_representation() {
        let mut s = AirlState::new(tiny(3), 1).unwrap();
        for id in s.params.ids().collect::<Vec<_>>() {
            if s.params.name(id).starts_with("enc.") {
                let shape = s.params.get(id).shape().to_vec();
                *s.params.get_mut(id) = Tensor::zeros(&shape);
            }
        }
        let x = Tensor::from_rows(&[vec![3.0, -1.0], vec![0.5, 9.0]]).unwrap();
        assert!(s.represent(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_attention_single_step() {
        let mut s = AirlState::new(tiny(2), 0).unwrap();
        for p in ["q", "k", "v", "u"] {
            set(&mut s, &format!("trans.{p}.w"), eye(2));
        }
        let mut g = Graph::new();
        let vars = s.bind(&mut g);
        let z = g.constant(Tensor::row(&[1.0, 0.0]));
        let out = s.attention_raw(&mut g, &vars, z, 1, 1).unwrap();
        let v = g.value(out[0]).data();
        assert!((v[0] - (1.0 + 1.0 / 2f64.sqrt())).abs() < 1e-15);
        assert_eq!(v[1], 0.0);
    }

    #[test]
    fn zero_value_map_passes_current_step_through() {
        let mut s = AirlState::new(tiny(3), 2).unwrap();
        set(&mut s, "trans.v.w", Tensor::zeros(&[3, 3]));
        set(&mut s, "trans.u.w", eye(3));
        let mut g = Graph::new();
        let vars = s.bind(&mut g);
        let z = g.constant(Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 0.0], vec![4.0, 4.0, -2.0]]).unwrap());
        let out = s.attention_raw(&mut g, &vars, z, 1, 3).unwrap();
        assert_eq!(g.value(out[2]).data(), &[4.0, 4.0, -2.0]);
    }

    #[test]
    fn zero_hypernetwork_emits_zero_classifier() {
        let mut s = AirlState::new(tiny(3), 3).unwrap();
        for id in s.params.ids().collect::<Vec<_>>() {
            if s.params.name(id).starts_with("lstm.") {
                let shape = s.params.get(id).shape().to_vec();
                *s.params.get_mut(id) = Tensor::zeros(&shape);
            }
        }
        let hs = s.classifiers(3).unwrap();
        assert_eq!(hs.len(), 3);
        assert_eq!(hs[1].len(), s.config.classifier_len());
        assert!(hs[1].flat.iter().chain(&hs[2].flat).all(|&v| v == 0.0));
    }

    #[test]
    fn zero_classifier_gives_zero_logits_with_right_width() {
        let s = AirlState::new(tiny(3), 0).unwrap();
        let zero = ClassifierVec { flat: vec![0.0; s.config.classifier_len()] };
        let l = s.logits(&zero, &Tensor::full(&[4, 2], 1.0)).unwrap();
        assert_eq!(l.shape(), &[4, 1]);
        assert!(l.data().iter().all(|&v| v == 0.0));

        let ten = AirlState::new(AirlConfig { n_classes: 10, ..tiny(3) }, 0).unwrap();
        let zero = ClassifierVec { flat: vec![0.0; ten.config.classifier_len()] };
        assert_eq!(ten.logits(&zero, &Tensor::zeros(&[2, 2])).unwrap().shape(), &[2, 10]);
    }

    #[test]
    fn generate_classifier_rejects_empty_history() {
        let s = AirlState::new(tiny(2), 0).unwrap();
        let mut g = Graph::new();
        let vars = s.bind(&mut g);
        assert!(matches!(s.generate_classifier(&mut g, &vars, &[]), Err(Error::Usage(_))));
    }

    #[test]
    fn encode_rejects_wrong_width() {
        let s = AirlState::new(tiny(2), 0).unwrap();
        assert!(matches!(s.represent(&Tensor::zeros(&[2, 3])), Err(Error::Dimension { .. })));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut s = AirlState::new(tiny(3), 5).unwrap();
        s.bn.mean = vec![0.1, 0.2, 0.3];
        let ck = s.to_checkpoint();
        let back = AirlState::from_checkpoint(s.config.clone(), &ck).unwrap();
        assert_eq!(back.to_checkpoint(), ck);
    }

    #[test]
    fn config_json_rejects_unknown_keys() {
        let text = serde_json::to_string(&AirlConfig::new(2, 2)).unwrap();
        let back: AirlConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, AirlConfig::new(2, 2));
        assert!(serde_json::from_str::<AirlConfig>(r#"{"repr_dim": 4, "bogus": 1}"#).is_err());
    }

    #[test]
    fn forget_gate_bias_starts_at_one() {
        let s = AirlState::new(tiny(2), 0).unwrap();
        let b = s.params.get(s.params.find("lstm.cell.b").unwrap());
        assert_eq!(&b.data()[..4], &[0.0; 4]);
        assert_eq!(&b.data()[4..8], &[1.0; 4]);
    }
}
