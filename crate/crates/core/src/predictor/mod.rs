//! Feedforward heatmap predictor.
//!
//! The scene is flattened in the target's agent frame into
//! `(1 + k_sv) * t_obs * 4` features, passed through tanh hidden layers and
//! mapped to one logit per grid cell. Gradients are computed by a layer-wise
//! reverse pass over the cached activations.

mod adam;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::Scene;
use crate::error::{Error, Result};
use crate::grid::{GridSpec, Heatmap};
use crate::losses::{BaseKind, Target};

/// Meters per unit of input feature for positions.
pub const POSITION_SCALE: f64 = 10.0;
/// Meters/second per unit of input feature for velocities.
pub const VELOCITY_SCALE: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub t_obs: usize,
    pub k_sv: usize,
    pub hidden_dims: Vec<usize>,
    pub grid: GridSpec,
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            t_obs: 10,
            k_sv: 4,
            hidden_dims: vec![128, 128],
            grid: GridSpec::default(),
            seed: 0,
        }
    }
}

impl PredictorConfig {
    pub fn input_dim(&self) -> usize {
        (1 + self.k_sv) * self.t_obs * 4
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.t_obs == 0 {
            return Err(Error::Config("t_obs must be positive".into()));
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(Error::Config(
                "at least one non-empty hidden layer is required".into(),
            ));
        }
        Ok(())
    }
}

/// Flat parameter vector: per layer, row-major weights `[out][in]` then
/// biases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(n: usize) -> Self {
        ParamVector {
            values: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Gradient in the same layout as [`ParamVector`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradVector {
    pub values: Vec<f64>,
}

impl GradVector {
    pub fn zeros(n: usize) -> Self {
        GradVector {
            values: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dot(&self, other: &GradVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Cosine similarity; zero when either vector has zero norm.
    pub fn cosine(&self, other: &GradVector) -> f64 {
        let denom = self.norm() * other.norm();
        if denom == 0.0 || !denom.is_finite() {
            return 0.0;
        }
        (self.dot(other) / denom).clamp(-1.0, 1.0)
    }

    pub fn scale(&mut self, k: f64) {
        self.values.iter_mut().for_each(|v| *v *= k);
    }

    pub fn add_scaled(&mut self, other: &GradVector, k: f64) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += k * b;
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    w_off: usize,
    b_off: usize,
}

#[derive(Clone, Debug)]
pub struct Predictor {
    config: PredictorConfig,
    layers: Vec<Layer>,
    n_params: usize,
}

impl Predictor {
    pub fn new(config: PredictorConfig) -> Result<Self> {
        config.validate()?;
        let mut dims = vec![config.input_dim()];
        dims.extend(&config.hidden_dims);
        dims.push(config.grid.len());
        let mut layers = Vec::with_capacity(dims.len() - 1);
        let mut off = 0;
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            layers.push(Layer {
                fan_in,
                fan_out,
                w_off: off,
                b_off: off + fan_in * fan_out,
            });
            off += fan_in * fan_out + fan_out;
        }
        Ok(Predictor {
            config,
            layers,
            n_params: off,
        })
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.config
    }

    pub fn grid(&self) -> &GridSpec {
        &self.config.grid
    }

    pub fn num_params(&self) -> usize {
        self.n_params
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn init_params(&self) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut values = vec![0.0; self.n_params];
        for layer in &self.layers {
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            let end = layer.b_off + layer.fan_out;
            for v in &mut values[layer.w_off..end] {
                *v = rng.random_range(-bound..=bound);
            }
        }
        ParamVector { values }
    }

    /// Agent-frame input features for a scene.
    pub fn features(&self, scene: &Scene) -> Result<Vec<f64>> {
        if scene.t_obs() != self.config.t_obs {
            return Err(Error::Shape {
                what: "scene history length",
                expected: self.config.t_obs,
                actual: scene.t_obs(),
            });
        }
        if scene.k_sv() != self.config.k_sv {
            return Err(Error::Shape {
                what: "neighbor slots",
                expected: self.config.k_sv,
                actual: scene.k_sv(),
            });
        }
        let frame = scene.agent_frame();
        let mut out = Vec::with_capacity(self.config.input_dim());
        let tracks = std::iter::once((scene.tv_history(), true)).chain(
            scene
                .sv_histories()
                .iter()
                .zip(scene.sv_mask())
                .map(|(h, m)| (h.as_slice(), *m)),
        );
        for (track, valid) in tracks {
            for s in track {
                if valid {
                    let p = frame.to_local(s.position());
                    let v = frame.rotate_to_local(s.velocity());
                    out.extend_from_slice(&[
                        p[0] / POSITION_SCALE,
                        p[1] / POSITION_SCALE,
                        v[0] / VELOCITY_SCALE,
                        v[1] / VELOCITY_SCALE,
                    ]);
                } else {
                    out.extend_from_slice(&[0.0; 4]);
                }
            }
        }
        Ok(out)
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.len() != self.n_params {
            return Err(Error::Shape {
                what: "parameter vector",
                expected: self.n_params,
                actual: params.len(),
            });
        }
        Ok(())
    }

    /// Activations of every layer, input first, logits last.
    fn activations(&self, params: &[f64], input: Vec<f64>) -> Result<Vec<Vec<f64>>> {
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteActivation { layer: 0 });
        }
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input);
        for (l, layer) in self.layers.iter().enumerate() {
            let a = &acts[l];
            let w = &params[layer.w_off..layer.b_off];
            let b = &params[layer.b_off..layer.b_off + layer.fan_out];
            let mut z: Vec<f64> = w
                .chunks_exact(layer.fan_in)
                .zip(b)
                .map(|(row, bias)| bias + row.iter().zip(a).map(|(w, x)| w * x).sum::<f64>())
                .collect();
            if l < last {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteActivation { layer: l + 1 });
            }
            acts.push(z);
        }
        Ok(acts)
    }

    pub fn forward(&self, params: &ParamVector, scene: &Scene) -> Result<Heatmap> {
        self.check_params(params)?;
        let mut acts = self.activations(&params.values, self.features(scene)?)?;
        let logits = acts.pop().expect("at least one layer");
        Heatmap::new(logits, self.config.grid)
    }

    /// Adds `d(loss)/d(params)` to `grad` given `dlogits = d(loss)/d(logits)`.
    fn backward(&self, params: &[f64], acts: &[Vec<f64>], dlogits: Vec<f64>, grad: &mut [f64]) {
        let mut delta = dlogits;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let a_in = &acts[l];
            {
                let (gw, gb) = grad[layer.w_off..layer.b_off + layer.fan_out]
                    .split_at_mut(layer.fan_in * layer.fan_out);
                for ((row, gbias), d) in gw.chunks_exact_mut(layer.fan_in).zip(gb).zip(&delta) {
                    *gbias += d;
                    for (g, x) in row.iter_mut().zip(a_in) {
                        *g += d * x;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = &params[layer.w_off..layer.b_off];
            let mut prev = vec![0.0; layer.fan_in];
            for (row, d) in w.chunks_exact(layer.fan_in).zip(&delta) {
                for (p, wv) in prev.iter_mut().zip(row) {
                    *p += wv * d;
                }
            }
            for (p, a) in prev.iter_mut().zip(a_in) {
                *p *= 1.0 - a * a;
            }
            delta = prev;
        }
    }

    /// Evaluates one per-sample loss and adds `weight` times its gradient to
    /// `grad`. Returns the unweighted loss.
    pub fn accumulate(
        &self,
        params: &ParamVector,
        scene: &Scene,
        target: &Target<'_>,
        kind: BaseKind,
        weight: f64,
        grad: &mut GradVector,
    ) -> Result<f64> {
        self.check_params(params)?;
        if grad.len() != self.n_params {
            return Err(Error::Shape {
                what: "gradient vector",
                expected: self.n_params,
                actual: grad.len(),
            });
        }
        let acts = self.activations(&params.values, self.features(scene)?)?;
        let logits = acts.last().expect("at least one layer");
        let (loss, mut dlogits) = target.loss_and_dlogits(logits, &self.config.grid, kind)?;
        if weight != 1.0 {
            dlogits.iter_mut().for_each(|d| *d *= weight);
        }
        self.backward(&params.values, &acts, dlogits, &mut grad.values);
        Ok(loss)
    }

    /// Mean loss over `batch` and its gradient.
    pub fn loss_and_grad(
        &self,
        params: &ParamVector,
        batch: &[(&Scene, Target<'_>)],
        kind: BaseKind,
    ) -> Result<(f64, GradVector)> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let mut grad = GradVector::zeros(self.n_params);
        let w = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for (scene, target) in batch {
            loss += w * self.accumulate(params, scene, target, kind, w, &mut grad)?;
        }
        Ok((loss, grad))
    }

    /// Mean loss only.
    pub fn loss(
        &self,
        params: &ParamVector,
        batch: &[(&Scene, Target<'_>)],
        kind: BaseKind,
    ) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        self.check_params(params)?;
        let w = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for (scene, target) in batch {
            let hm = self.forward(params, scene)?;
            loss += w * target.loss_and_dlogits(&hm.logits, &self.config.grid, kind)?.0;
        }
        Ok(loss)
    }
}
