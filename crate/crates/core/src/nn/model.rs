//! Risk models: a per-row MLP and a partial-convolution encoder-decoder,
//! each with one of three output heads.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Result, RiskError};
use crate::grid::RiskGrid;
use crate::losses::{self, FiniteDifference};
use crate::synth::mixture::norm_pdf;

use super::conv::ConvGeom;
use super::graph::{softplus, Activation, Graph, Var};
use super::init::xavier_init;
use super::tensor::Tensor;

/// Largest α accepted by the Gaussian head (its CVaR diverges at 1).
pub const GAUSSIAN_ALPHA_LIMIT: f64 = 0.995;

/// The Gaussian head's log-std is squashed into `(−B, B)`.
pub const LOG_SIGMA_BOUND: f64 = 4.0;

/// Maps the raw log-std channel to `B·tanh(raw / B)`.
pub fn bounded_log_sigma(raw: f64) -> f64 {
    LOG_SIGMA_BOUND * (raw / LOG_SIGMA_BOUND).tanh()
}

/// α input value fed to heads that do not condition on α.
const NEUTRAL_ALPHA: f64 = 0.5;

/// What the raw network outputs mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// `V` and a softplus-rectified residual `Ĉ`, with `C = V + Ĉ`.
    Risk,
    /// A single point prediction used for both `V` and `C`.
    Single,
    /// Mean and raw log standard deviation of a Gaussian, squashed by
    /// [`bounded_log_sigma`].
    Gaussian,
}

impl HeadKind {
    pub fn arity(self) -> usize {
        match self {
            HeadKind::Single => 1,
            HeadKind::Risk | HeadKind::Gaussian => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// Fully connected network on `[state…, α]` rows.
    Mlp {
        state_dim: usize,
        hidden: usize,
        /// Number of hidden layers; the output layer is extra.
        hidden_layers: usize,
        activation: Activation,
    },
    /// U-shaped partial-convolution network on `[features…, α]` planes.
    EncDec {
        in_channels: usize,
        width: usize,
        depth: usize,
        activation: Activation,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Architecture,
    pub head: HeadKind,
    /// Per-input standardization; fitted on the training split when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_norm: Option<InputNorm>,
}

/// `x ↦ (x − shift)/scale` per state dimension or feature plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputNorm {
    pub fn identity(n: usize) -> Self {
        InputNorm { shift: vec![0.0; n], scale: vec![1.0; n] }
    }

    /// Mean and standard deviation per input from `(input, value)` pairs;
    /// near-constant inputs keep unit scale.
    pub fn fit(n: usize, rows: impl Iterator<Item = (usize, f64)>) -> Self {
        let mut acc = vec![(0.0f64, 0.0f64, 0usize); n];
        for (k, v) in rows {
            let a = &mut acc[k];
            a.0 += v;
            a.1 += v * v;
            a.2 += 1;
        }
        let mut norm = InputNorm::identity(n);
        for (k, &(s, q, c)) in acc.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let mean = s / c as f64;
            let sd = (q / c as f64 - mean * mean).max(0.0).sqrt();
            norm.shift[k] = mean;
            norm.scale[k] = if sd > 1e-9 { sd } else { 1.0 };
        }
        norm
    }

    pub fn len(&self) -> usize {
        self.shift.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shift.is_empty()
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.shift.len() != n || self.scale.len() != n {
            return Err(RiskError::invalid(format!("input norm has {} entries, model takes {n}", self.shift.len())));
        }
        if self.scale.iter().chain(&self.shift).any(|v| !v.is_finite()) || self.scale.iter().any(|&v| v <= 0.0) {
            return Err(RiskError::invalid("input norm needs finite shifts and positive scales"));
        }
        Ok(())
    }

    pub fn apply(&self, k: usize, v: f64) -> f64 {
        (v - self.shift[k]) / self.scale[k]
    }
}

impl ModelConfig {
    /// Three-layer MLP for one-dimensional states.
    pub fn toy_mlp(head: HeadKind) -> Self {
        ModelConfig {
            arch: Architecture::Mlp {
                state_dim: 1,
                hidden: 64,
                hidden_layers: 2,
                activation: Activation::Tanh,
            },
            head,
            input_norm: None,
        }
    }

    /// Four-level encoder-decoder for the ten-channel feature stack.
    pub fn grid_default(head: HeadKind) -> Self {
        ModelConfig {
            arch: Architecture::EncDec {
                in_channels: 10,
                width: 8,
                depth: 4,
                activation: Activation::Elu,
            },
            head,
            input_norm: None,
        }
    }

    /// `(name, shape)` of every parameter tensor in storage order.
    /// Number of normalized inputs: state dimensions or feature planes.
    pub fn input_count(&self) -> usize {
        match self.arch {
            Architecture::Mlp { state_dim, .. } => state_dim,
            Architecture::EncDec { in_channels, .. } => in_channels,
        }
    }

    pub fn layer_specs(&self) -> Result<Vec<(String, Vec<usize>)>> {
        if let Some(n) = &self.input_norm {
            n.validate(self.input_count())?;
        }
        let out = self.head.arity();
        let mut specs = Vec::new();
        match &self.arch {
            Architecture::Mlp { state_dim, hidden, hidden_layers, .. } => {
                if *hidden == 0 || *hidden_layers == 0 {
                    return Err(RiskError::invalid("MLP needs hidden units and layers"));
                }
                let mut fan_in = state_dim + 1;
                for l in 0..*hidden_layers {
                    specs.push((format!("fc{l}.weight"), vec![fan_in, *hidden]));
                    specs.push((format!("fc{l}.bias"), vec![*hidden]));
                    fan_in = *hidden;
                }
                specs.push(("head.weight".into(), vec![fan_in, out]));
                specs.push(("head.bias".into(), vec![out]));
            }
            Architecture::EncDec { in_channels, width, depth, .. } => {
                if *width == 0 || *depth == 0 {
                    return Err(RiskError::invalid("encoder-decoder needs width and depth"));
                }
                let ch = |l: usize| width << l;
                let mut cin = in_channels + 1;
                for l in 0..*depth {
                    specs.push((format!("enc{l}.weight"), vec![ch(l), cin, 3, 3]));
                    specs.push((format!("enc{l}.bias"), vec![ch(l)]));
                    cin = ch(l);
                }
                for l in (0..depth - 1).rev() {
                    specs.push((format!("dec{l}.weight"), vec![ch(l), ch(l + 1) + ch(l), 3, 3]));
                    specs.push((format!("dec{l}.bias"), vec![ch(l)]));
                }
                specs.push(("head.weight".into(), vec![out, ch(0), 1, 1]));
                specs.push(("head.bias".into(), vec![out]));
            }
        }
        Ok(specs)
    }
}

/// A parameterized predictor of `(V, C)` from state and α.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskModel {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
}

/// Gradient routing of the risk head's C channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Routing {
    /// `IsolateCvar` for row models, `Joint` for grid models.
    #[default]
    Auto,
    /// Every output back-propagates into the shared layers.
    Joint,
    /// C reads a gradient-stopped copy of the last shared layer, so losses on
    /// C train only the C output weights. Values are unchanged.
    IsolateCvar,
}

/// Output nodes of one forward pass before head interpretation.
pub struct RawOutput {
    /// One node per head channel: `[N]` rows or `[H, W]` planes.
    pub channels: Vec<Var>,
    /// Propagated known-mask (all ones for row models).
    pub mask: Vec<f64>,
}

impl RiskModel {
    /// Xavier-initialized weights and zero biases.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        let specs = config.layer_specs()?;
        let mut names = Vec::with_capacity(specs.len());
        let mut params = Vec::with_capacity(specs.len());
        for (name, shape) in specs {
            let t = if name.ends_with("bias") {
                Tensor::zeros(shape)
            } else {
                xavier_init(&shape, rng)?
            };
            names.push(name);
            params.push(t);
        }
        Ok(RiskModel { config, names, params })
    }

    /// Builds a model from explicit parameters (e.g. a checkpoint).
    pub fn from_params(config: ModelConfig, params: Vec<Tensor>) -> Result<Self> {
        let specs = config.layer_specs()?;
        if specs.len() != params.len() {
            return Err(RiskError::Format(format!("expected {} tensors, got {}", specs.len(), params.len())));
        }
        for ((name, shape), p) in specs.iter().zip(&params) {
            if p.shape() != &shape[..] {
                return Err(RiskError::Format(format!("{name}: shape {:?} != {shape:?}", p.shape())));
            }
        }
        Ok(RiskModel {
            config,
            names: specs.into_iter().map(|(n, _)| n).collect(),
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn set_input_norm(&mut self, norm: Option<InputNorm>) -> Result<()> {
        if let Some(n) = &norm {
            n.validate(self.config.input_count())?;
        }
        self.config.input_norm = norm;
        Ok(())
    }

    pub fn head(&self) -> HeadKind {
        self.config.head
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Only the risk head reads its α input; the baselines see a constant.
    pub fn conditions_on_alpha(&self) -> bool {
        self.config.head == HeadKind::Risk
    }

    pub fn is_grid(&self) -> bool {
        matches!(self.config.arch, Architecture::EncDec { .. })
    }

    /// Records an MLP forward pass on `x: [N, state_dim + 1]`.
    pub fn forward_rows(&self, g: &mut Graph<'_>, x: &Tensor) -> Result<RawOutput> {
        self.forward_rows_routed(g, x, Routing::Joint)
    }

    fn isolates(&self, routing: Routing) -> bool {
        let on = match routing {
            Routing::Auto => !self.is_grid(),
            Routing::Joint => false,
            Routing::IsolateCvar => true,
        };
        on && self.config.head == HeadKind::Risk
    }

    pub fn forward_rows_routed(&self, g: &mut Graph<'_>, x: &Tensor, routing: Routing) -> Result<RawOutput> {
        let Architecture::Mlp { state_dim, hidden_layers, activation, .. } = self.config.arch else {
            return Err(RiskError::invalid("row forward on a grid model"));
        };
        let s = x.shape();
        if s.len() != 2 || s[1] != state_dim + 1 {
            return Err(RiskError::invalid(format!("MLP input {s:?}, expected [N, {}]", state_dim + 1)));
        }
        if x.data().chunks(s[1]).any(|r| !(0.0..=1.0).contains(&r[state_dim])) {
            return Err(RiskError::invalid("alpha column outside [0,1]"));
        }
        let n = s[0];
        let mut x = x.clone();
        if let Some(norm) = &self.config.input_norm {
            for r in x.data_mut().chunks_mut(state_dim + 1) {
                for k in 0..state_dim {
                    r[k] = norm.apply(k, r[k]);
                }
            }
        }
        if !self.conditions_on_alpha() {
            let d = state_dim + 1;
            x.data_mut().chunks_mut(d).for_each(|r| r[state_dim] = NEUTRAL_ALPHA);
        }
        let mut h = g.input(x);
        for l in 0..hidden_layers {
            let w = g.param(2 * l)?;
            let b = g.param(2 * l + 1)?;
            let z = g.matmul(h, w)?;
            let z = g.add_row_bias(z, b)?;
            h = g.act(z, activation);
        }
        let w = g.param(2 * hidden_layers)?;
        let b = g.param(2 * hidden_layers + 1)?;
        let z = g.matmul(h, w)?;
        let out = g.add_row_bias(z, b)?;
        let mut channels = (0..self.config.head.arity())
            .map(|j| g.column(out, j))
            .collect::<Result<Vec<_>>>()?;
        if self.isolates(routing) {
            let hd = g.detach(h);
            let z = g.matmul(hd, w)?;
            let out = g.add_row_bias(z, b)?;
            channels[1] = g.column(out, 1)?;
        }
        Ok(RawOutput { channels, mask: vec![1.0; n] })
    }

    /// Records an encoder-decoder forward pass.
    ///
    /// `features` are `in_channels` planes; `alpha` and `mask` are `[H, W]`.
    pub fn forward_grid(&self, g: &mut Graph<'_>, features: &[RiskGrid], alpha: &RiskGrid, mask: &RiskGrid) -> Result<RawOutput> {
        self.forward_grid_routed(g, features, alpha, mask, Routing::Joint)
    }

    pub fn forward_grid_routed(
        &self,
        g: &mut Graph<'_>,
        features: &[RiskGrid],
        alpha: &RiskGrid,
        mask: &RiskGrid,
        routing: Routing,
    ) -> Result<RawOutput> {
        let Architecture::EncDec { in_channels, width, depth, activation } = self.config.arch else {
            return Err(RiskError::invalid("grid forward on a row model"));
        };
        if features.len() != in_channels {
            return Err(RiskError::invalid(format!("expected {in_channels} feature planes, got {}", features.len())));
        }
        let (w, h) = alpha.shape();
        for f in features.iter().chain([alpha, mask]) {
            if f.shape() != (w, h) {
                return Err(RiskError::invalid("feature planes differ in shape"));
            }
        }
        let div = 1usize << (depth - 1);
        if w % div != 0 || h % div != 0 {
            return Err(RiskError::invalid(format!("grid {w}x{h} not divisible by {div}")));
        }
        if alpha.data().iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(RiskError::invalid("alpha field outside [0,1]"));
        }
        let mut data = Vec::with_capacity((in_channels + 1) * w * h);
        for (k, f) in features.iter().enumerate() {
            match &self.config.input_norm {
                Some(norm) => data.extend(f.data().iter().map(|&v| norm.apply(k, v))),
                None => data.extend_from_slice(f.data()),
            }
        }
        if self.conditions_on_alpha() {
            data.extend_from_slice(alpha.data());
        } else {
            data.extend(std::iter::repeat(NEUTRAL_ALPHA).take(w * h));
        }
        let x = g.input(Tensor::new(vec![in_channels + 1, h, w], data)?);

        let ch = |l: usize| width << l;
        let mut skips: Vec<(Var, Vec<f64>)> = Vec::with_capacity(depth);
        let mut cur = x;
        let mut cur_mask = mask.data().to_vec();
        let mut cin = in_channels + 1;
        let mut p = 0;
        for l in 0..depth {
            let geom = ConvGeom {
                in_ch: cin,
                out_ch: ch(l),
                kernel: 3,
                stride: if l == 0 { 1 } else { 2 },
                padding: 1,
            };
            let (wv, bv) = (g.param(p)?, g.param(p + 1)?);
            p += 2;
            let (y, m) = g.partial_conv(cur, wv, bv, &cur_mask, geom)?;
            cur = g.act(y, activation);
            cur_mask = m;
            skips.push((cur, cur_mask.clone()));
            cin = ch(l);
        }
        for l in (0..depth - 1).rev() {
            let up = g.upsample2x(cur)?;
            let lh = h >> l;
            let lw = w >> l;
            let up_mask = upsample_mask(&cur_mask, lh / 2, lw / 2);
            let (skip, skip_mask) = &skips[l];
            let cat = g.concat(&[up, *skip])?;
            let joint: Vec<f64> = up_mask.iter().zip(skip_mask).map(|(&a, &b)| a.max(b)).collect();
            let geom = ConvGeom {
                in_ch: ch(l + 1) + ch(l),
                out_ch: ch(l),
                kernel: 3,
                stride: 1,
                padding: 1,
            };
            let (wv, bv) = (g.param(p)?, g.param(p + 1)?);
            p += 2;
            let (y, m) = g.partial_conv(cat, wv, bv, &joint, geom)?;
            cur = g.act(y, activation);
            cur_mask = m;
        }
        let out_ch = self.config.head.arity();
        let geom = ConvGeom { in_ch: ch(0), out_ch, kernel: 1, stride: 1, padding: 0 };
        let (wv, bv) = (g.param(p)?, g.param(p + 1)?);
        let (y, m) = g.partial_conv(cur, wv, bv, &cur_mask, geom)?;
        let mut channels = (0..out_ch).map(|c| g.slice0(y, c)).collect::<Result<Vec<_>>>()?;
        if self.isolates(routing) {
            let cd = g.detach(cur);
            let (y, _) = g.partial_conv(cd, wv, bv, &cur_mask, geom)?;
            channels[1] = g.slice0(y, 1)?;
        }
        Ok(RawOutput { channels, mask: m })
    }

    /// Evaluates the network without keeping the graph.
    fn raw_grid(&self, features: &[RiskGrid], alpha: &RiskGrid, mask: &RiskGrid) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let mut g = Graph::new(&self.params);
        let out = self.forward_grid(&mut g, features, alpha, mask)?;
        let chans = out.channels.iter().map(|&v| g.value(v).data().to_vec()).collect();
        Ok((chans, out.mask))
    }

    fn raw_rows(&self, states: &[f64], alpha: &[f64]) -> Result<Vec<Vec<f64>>> {
        let Architecture::Mlp { state_dim, .. } = self.config.arch else {
            return Err(RiskError::invalid("row prediction on a grid model"));
        };
        if states.len() != alpha.len() * state_dim {
            return Err(RiskError::invalid("state/alpha lengths differ"));
        }
        let x = rows_input(states, alpha, state_dim)?;
        let mut g = Graph::new(&self.params);
        let out = self.forward_rows(&mut g, &x)?;
        Ok(out.channels.iter().map(|&v| g.value(v).data().to_vec()).collect())
    }

    /// Encoder-decoder outputs `(V, Ĉ, mask_out)` for the risk head; for other
    /// heads `Ĉ = C − V`.
    pub fn encdec_forward(&self, features: &[RiskGrid], alpha: &RiskGrid, mask: &RiskGrid) -> Result<(RiskGrid, RiskGrid, RiskGrid)> {
        let (v, c, m) = self.predict_costmap(features, alpha, mask)?;
        let c_hat = c.zip_map(&v, |c, v| c - v)?;
        Ok((v, c_hat, m))
    }

    /// `(V, C, mask_out)` for a (possibly spatially varying) α field.
    pub fn predict_costmap(&self, features: &[RiskGrid], alpha: &RiskGrid, mask: &RiskGrid) -> Result<(RiskGrid, RiskGrid, RiskGrid)> {
        let (w, h) = alpha.shape();
        let (chans, m) = self.raw_grid(features, alpha, mask)?;
        let (v, c) = interpret(self.config.head, &chans, alpha.data())?;
        Ok((
            RiskGrid::from_vec(w, h, v)?,
            RiskGrid::from_vec(w, h, c)?,
            RiskGrid::from_vec(w, h, m)?,
        ))
    }

    /// `(V, C)` for row-major states (`state_dim` values per row).
    pub fn predict_rows(&self, states: &[f64], alpha: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let chans = self.raw_rows(states, alpha)?;
        interpret(self.config.head, &chans, alpha)
    }

    /// Negative parts of the finite-difference α-derivatives of `V` and `C`.
    pub fn alpha_derivative(
        &self,
        features: &[RiskGrid],
        alpha: &RiskGrid,
        mask: &RiskGrid,
        delta: f64,
        scheme: FiniteDifference,
    ) -> Result<(RiskGrid, RiskGrid)> {
        losses::alpha_derivative(
            |a| {
                let (v, c, _) = self.predict_costmap(features, a, mask)?;
                Ok((v, c))
            },
            alpha,
            delta,
            scheme,
        )
    }
}

pub(crate) fn rows_input(states: &[f64], alpha: &[f64], state_dim: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(alpha.len() * (state_dim + 1));
    for (i, &a) in alpha.iter().enumerate() {
        data.extend_from_slice(&states[i * state_dim..(i + 1) * state_dim]);
        data.push(a);
    }
    Tensor::new(vec![alpha.len(), state_dim + 1], data)
}

fn upsample_mask(mask: &[f64], h: usize, w: usize) -> Vec<f64> {
    super::graph::upsample_nearest(mask, 1, h, w)
}

/// Maps raw head channels to `(V, C)` at the given α values.
fn interpret(head: HeadKind, chans: &[Vec<f64>], alpha: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    match head {
        HeadKind::Risk => {
            let v = chans[0].clone();
            let c = v.iter().zip(&chans[1]).map(|(&v, &r)| v + softplus(r)).collect();
            Ok((v, c))
        }
        HeadKind::Single => Ok((chans[0].clone(), chans[0].clone())),
        HeadKind::Gaussian => {
            let mut v = Vec::with_capacity(alpha.len());
            let mut c = Vec::with_capacity(alpha.len());
            for i in 0..alpha.len() {
                let (vi, ci) = gaussian_var_cvar(chans[0][i], bounded_log_sigma(chans[1][i]).exp(), alpha[i])?;
                v.push(vi);
                c.push(ci);
            }
            Ok((v, c))
        }
    }
}

/// VaR and CVaR of `N(μ, σ²)` at level α.
pub fn gaussian_var_cvar(mu: f64, sigma: f64, alpha: f64) -> Result<(f64, f64)> {
    if !(0.0..GAUSSIAN_ALPHA_LIMIT).contains(&alpha) {
        return Err(RiskError::invalid(format!("alpha {alpha} outside [0, {GAUSSIAN_ALPHA_LIMIT})")));
    }
    if !(sigma >= 0.0) {
        return Err(RiskError::invalid("negative sigma"));
    }
    if sigma == 0.0 {
        return Ok((mu, mu));
    }
    let z = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(alpha);
    Ok((mu + sigma * z, mu + sigma * norm_pdf(z) / (1.0 - alpha)))
}

/// Gaussian VaR / CVaR fields from mean and log-std fields.
pub fn gaussian_nll_heads(mu: &RiskGrid, log_sigma: &RiskGrid, alpha: f64) -> Result<(RiskGrid, RiskGrid)> {
    mu.check_same_shape(log_sigma)?;
    let mut v = Vec::with_capacity(mu.len());
    let mut c = Vec::with_capacity(mu.len());
    for (&m, &ls) in mu.data().iter().zip(log_sigma.data()) {
        let (vi, ci) = gaussian_var_cvar(m, ls.exp(), alpha)?;
        v.push(vi);
        c.push(ci);
    }
    Ok((RiskGrid::from_vec(mu.width(), mu.height(), v)?, RiskGrid::from_vec(mu.width(), mu.height(), c)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(17)
    }

    #[test]
    fn head_arity() {
        for (h, n) in [(HeadKind::Risk, 2), (HeadKind::Single, 1), (HeadKind::Gaussian, 2)] {
            let m = RiskModel::new(ModelConfig::toy_mlp(h), &mut rng()).unwrap();
            let specs = m.config().layer_specs().unwrap();
            assert_eq!(specs.last().unwrap().1, vec![n]);
        }
    }

    #[test]
    fn zero_model_documents_rectification() {
        let mut m = RiskModel::new(ModelConfig::toy_mlp(HeadKind::Risk), &mut rng()).unwrap();
        for p in m.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let (v, c) = m.predict_rows(&[0.3, -1.0], &[0.2, 0.9]).unwrap();
        assert_eq!(v, vec![0.0, 0.0]);
        for ci in c {
            assert_relative_eq!(ci, std::f64::consts::LN_2, epsilon = 1e-12);
        }
    }

    #[test]
    fn rows_deterministic_and_ordered() {
        let m = RiskModel::new(ModelConfig::toy_mlp(HeadKind::Risk), &mut rng()).unwrap();
        let (v, c) = m.predict_rows(&[0.5; 4], &[0.3; 4]).unwrap();
        assert!(v.windows(2).all(|w| w[0] == w[1]));
        assert!(c.iter().zip(&v).all(|(c, v)| c >= v));
        assert!(m.predict_rows(&[0.5], &[1.2]).is_err());
    }

    #[test]
    fn c_dominates_v_for_random_rows() {
        let m = RiskModel::new(ModelConfig::toy_mlp(HeadKind::Risk), &mut rng()).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let states: Vec<f64> = (0..1000).map(|_| r.gen_range(-3.0..3.0)).collect();
        let alpha: Vec<f64> = (0..1000).map(|_| r.gen()).collect();
        let (v, c) = m.predict_rows(&states, &alpha).unwrap();
        assert!(c.iter().zip(&v).all(|(c, v)| c >= v));
    }

    #[test]
    fn isolated_cvar_trains_only_c_weights() {
        let m = RiskModel::new(ModelConfig::toy_mlp(HeadKind::Risk), &mut rng()).unwrap();
        let x = Tensor::new(vec![3, 2], vec![-1.0, 0.2, 0.5, 0.6, 2.0, 0.9]).unwrap();
        let run = |routing| {
            let mut g = Graph::new(m.params());
            let out = m.forward_rows_routed(&mut g, &x, routing).unwrap();
            let values: Vec<Vec<f64>> = out.channels.iter().map(|&c| g.value(c).data().to_vec()).collect();
            let loss = g.masked_mean(out.channels[1], &out.mask).unwrap();
            (values, g.backward(loss).unwrap())
        };
        let (joint, joint_grads) = run(Routing::Joint);
        let (iso, grads) = run(Routing::IsolateCvar);
        assert_eq!(joint, iso);
        let last = grads.len() - 2;
        assert!(joint_grads[..last].iter().flatten().any(|&v| v != 0.0));
        assert!(grads[..last].iter().flatten().all(|&v| v == 0.0));
        // output weights are [hidden, 2]: column 0 feeds V
        assert!(grads[last].iter().step_by(2).all(|&v| v == 0.0));
        assert!(grads[last].iter().skip(1).step_by(2).any(|&v| v != 0.0));
        assert_eq!(grads[last + 1][0], 0.0);
        assert_eq!(run(Routing::Auto).1, grads);
    }

    fn small_grid_model(head: HeadKind) -> RiskModel {
        let cfg = ModelConfig {
            arch: Architecture::EncDec { in_channels: 3, width: 4, depth: 3, activation: Activation::Elu },
            head,
            input_norm: None,
        };
        RiskModel::new(cfg, &mut rng()).unwrap()
    }

    fn planes(seed: u64, n: usize, w: usize, h: usize) -> Vec<RiskGrid> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| RiskGrid::from_fn(w, h, |_, _| r.gen_range(-1.0..1.0))).collect()
    }

    #[test]
    fn encdec_shapes_and_rectification() {
        let m = small_grid_model(HeadKind::Risk);
        let f = planes(3, 3, 16, 8);
        let alpha = RiskGrid::filled(16, 8, 0.4);
        let mask = RiskGrid::filled(16, 8, 1.0);
        let (v, c_hat, mo) = m.encdec_forward(&f, &alpha, &mask).unwrap();
        assert_eq!(v.shape(), (16, 8));
        assert!(c_hat.data().iter().all(|&x| x >= 0.0 && x.is_finite()));
        assert!(mo.data().iter().all(|&x| x == 1.0));
        let first = v.data()[0];
        assert!(v.data().iter().any(|&x| (x - first).abs() > 1e-9));

        let bad = RiskGrid::filled(10, 8, 0.4);
        let f12 = planes(3, 3, 10, 8);
        assert!(m.encdec_forward(&f12, &bad, &RiskGrid::filled(10, 8, 1.0)).is_err());
    }

    #[test]
    fn encdec_per_sample_independence() {
        let m = small_grid_model(HeadKind::Risk);
        let a = planes(5, 3, 8, 8);
        let b = planes(6, 3, 8, 8);
        let alpha = RiskGrid::filled(8, 8, 0.5);
        let mask = RiskGrid::filled(8, 8, 1.0);
        let out_a = m.predict_costmap(&a, &alpha, &mask).unwrap();
        let out_b = m.predict_costmap(&b, &alpha, &mask).unwrap();
        let batch = [&b, &a].map(|f| m.predict_costmap(f, &alpha, &mask).unwrap());
        assert_eq!(batch[0], out_b);
        assert_eq!(batch[1], out_a);
    }

    #[test]
    fn gaussian_head_values() {
        let (v, c) = gaussian_var_cvar(0.0, 1.0, 0.5).unwrap();
        assert!(v.abs() < 1e-12);
        assert_relative_eq!(c, 0.797885, epsilon = 1e-6);
        let (v, c) = gaussian_var_cvar(0.0, 1.0, 0.9).unwrap();
        assert_relative_eq!(v, 1.28155, epsilon = 1e-5);
        assert_relative_eq!(c, 1.754983, epsilon = 1e-5);
        assert_eq!(gaussian_var_cvar(3.0, 0.0, 0.7).unwrap(), (3.0, 3.0));
        assert!(gaussian_var_cvar(0.0, 1.0, 0.995).is_err());
        let mu = RiskGrid::filled(2, 2, 3.0);
        let ls = RiskGrid::filled(2, 2, -800.0);
        let (v, c) = gaussian_nll_heads(&mu, &ls, 0.6).unwrap();
        assert!(v.data().iter().chain(c.data()).all(|&x| (x - 3.0).abs() < 1e-12));
    }

    #[test]
    fn log_sigma_is_bounded() {
        assert_eq!(bounded_log_sigma(0.0), 0.0);
        assert!((bounded_log_sigma(0.01) - 0.01).abs() < 1e-6);
        assert!(bounded_log_sigma(1e6) <= LOG_SIGMA_BOUND);
        assert!(bounded_log_sigma(-1e6) >= -LOG_SIGMA_BOUND);
    }
}
