//! LSTM and GRU branches run side by side over the same input window; their
//! hidden states are concatenated and mapped by a fully connected head to
//! the future window. Forward and backward passes are written out by hand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::PoseFeature;
use super::{MotionPredictor, RelativePoseSeq};
use crate::error::{Error, Result};

pub const FEATURES: usize = 6;

/// What the fully connected head reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    /// One layer from the final concatenated state to all `l1 × 6` outputs.
    #[default]
    FinalState,
    /// A shared `2H → 6` layer applied to each of the last `l1` states.
    LastFrames,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    pub hidden: usize,
    pub input_frames: usize,
    pub output_frames: usize,
    pub frequency: f64,
    pub head: HeadMode,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl PredictorConfig {
    /// 200 Hz, 1 s in, 0.5 s out, 64 hidden units per branch.
    pub fn paper() -> Self {
        Self {
            hidden: 64,
            input_frames: super::DEFAULT_INPUT_FRAMES,
            output_frames: super::DEFAULT_OUTPUT_FRAMES,
            frequency: super::DEFAULT_POSE_HZ,
            head: HeadMode::FinalState,
        }
    }

    /// 50 Hz, 1 s in, 0.5 s out, 32 hidden units: seconds-level training.
    pub fn desk() -> Self {
        Self {
            hidden: 32,
            input_frames: 50,
            output_frames: 25,
            frequency: 50.0,
            head: HeadMode::FinalState,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.input_frames == 0 || self.output_frames == 0 {
            return Err(Error::Config("predictor dimensions must be positive".into()));
        }
        if !(self.frequency > 0.0) {
            return Err(Error::Config("predictor frequency must be positive".into()));
        }
        if self.head == HeadMode::LastFrames && self.input_frames < self.output_frames {
            return Err(Error::Config(
                "last_frames head needs input_frames >= output_frames".into(),
            ));
        }
        Ok(())
    }

    fn head_outputs(&self) -> usize {
        match self.head {
            HeadMode::FinalState => FEATURES * self.output_frames,
            HeadMode::LastFrames => FEATURES,
        }
    }

    /// Named parameter tensors in storage order.
    pub fn layout(&self) -> Vec<TensorSpec> {
        let h = self.hidden;
        let o = self.head_outputs();
        let shapes: [(&str, Vec<usize>); 9] = [
            ("lstm.w_ih", vec![4 * h, FEATURES]),
            ("lstm.w_hh", vec![4 * h, h]),
            ("lstm.b", vec![4 * h]),
            ("gru.w_ih", vec![3 * h, FEATURES]),
            ("gru.w_hh", vec![3 * h, h]),
            ("gru.b_ih", vec![3 * h]),
            ("gru.b_hh", vec![3 * h]),
            ("head.w", vec![o, 2 * h]),
            ("head.b", vec![o]),
        ];
        let mut offset = 0;
        shapes
            .into_iter()
            .map(|(name, shape)| {
                let len = shape.iter().product();
                let spec = TensorSpec {
                    name: name.to_string(),
                    shape,
                    offset,
                    len,
                };
                offset += len;
                spec
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layout().iter().map(|t| t.len).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// Offsets of each tensor inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Offsets {
    lstm_wih: usize,
    lstm_whh: usize,
    lstm_b: usize,
    gru_wih: usize,
    gru_whh: usize,
    gru_bih: usize,
    gru_bhh: usize,
    head_w: usize,
    head_b: usize,
}

impl Offsets {
    fn new(cfg: &PredictorConfig) -> Self {
        let l = cfg.layout();
        Self {
            lstm_wih: l[0].offset,
            lstm_whh: l[1].offset,
            lstm_b: l[2].offset,
            gru_wih: l[3].offset,
            gru_whh: l[4].offset,
            gru_bih: l[5].offset,
            gru_bhh: l[6].offset,
            head_w: l[7].offset,
            head_b: l[8].offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorModel {
    pub config: PredictorConfig,
    /// All trainable parameters, laid out per [`PredictorConfig::layout`].
    pub params: Vec<f64>,
    /// Input features are divided by this before entering the network.
    pub input_scale: PoseFeature,
    /// Network outputs are multiplied by this to give features.
    pub output_scale: PoseFeature,
}

/// Activations kept from the forward pass for backpropagation.
struct Cache {
    x: Vec<f64>,
    // LSTM: gates [i f g o] per step, cell and hidden per step (index 0 = initial)
    l_gates: Vec<f64>,
    l_c: Vec<f64>,
    l_h: Vec<f64>,
    // GRU: gates [r z n] per step, hidden-side candidate pre-activation, hidden per step
    g_gates: Vec<f64>,
    g_hn: Vec<f64>,
    g_h: Vec<f64>,
    out: Vec<f64>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out += W x` for row-major `W` of shape `rows × x.len()`.
#[inline]
fn matvec_acc(out: &mut [f64], w: &[f64], x: &[f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += Wᵀ v` for row-major `W` of shape `v.len() × out.len()`.
#[inline]
fn matvec_t_acc(out: &mut [f64], w: &[f64], v: &[f64]) {
    let cols = out.len();
    for (row, &vr) in w.chunks_exact(cols).zip(v) {
        if vr != 0.0 {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * vr;
            }
        }
    }
}

/// `G += v xᵀ`.
#[inline]
fn outer_acc(g: &mut [f64], v: &[f64], x: &[f64]) {
    let cols = x.len();
    for (row, &vr) in g.chunks_exact_mut(cols).zip(v) {
        if vr != 0.0 {
            for (gi, xi) in row.iter_mut().zip(x) {
                *gi += vr * xi;
            }
        }
    }
}

impl PredictorModel {
    pub fn zeros(config: PredictorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            params: vec![0.0; config.parameter_count()],
            config,
            input_scale: [1.0; FEATURES],
            output_scale: [1.0; FEATURES],
        })
    }

    /// Uniform `±1/√fan` initialization from a seeded stream.
    pub fn random(config: PredictorConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rec = 1.0 / (config.hidden as f64).sqrt();
        let head = 1.0 / (2.0 * config.hidden as f64).sqrt();
        for spec in config.layout() {
            let bound = if spec.name.starts_with("head") { head } else { rec };
            for p in &mut model.params[spec.offset..spec.offset + spec.len] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(model)
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.config
            .layout()
            .into_iter()
            .find(|t| t.name == name)
            .map(|t| &self.params[t.offset..t.offset + t.len])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let spec = self.config.layout().into_iter().find(|t| t.name == name)?;
        Some(&mut self.params[spec.offset..spec.offset + spec.len])
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
            && self.input_scale.iter().chain(&self.output_scale).all(|s| s.is_finite() && *s > 0.0)
    }

    fn check_input(&self, x: &[PoseFeature]) -> Result<()> {
        if x.len() != self.config.input_frames {
            return Err(Error::DimensionMismatch {
                expected: self.config.input_frames,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn run(&self, x: &[PoseFeature], keep: bool) -> Cache {
        let h = self.config.hidden;
        let steps = x.len();
        let off = Offsets::new(&self.config);
        let p = &self.params;
        let lw_ih = &p[off.lstm_wih..off.lstm_wih + 4 * h * FEATURES];
        let lw_hh = &p[off.lstm_whh..off.lstm_whh + 4 * h * h];
        let lb = &p[off.lstm_b..off.lstm_b + 4 * h];
        let gw_ih = &p[off.gru_wih..off.gru_wih + 3 * h * FEATURES];
        let gw_hh = &p[off.gru_whh..off.gru_whh + 3 * h * h];
        let gb_ih = &p[off.gru_bih..off.gru_bih + 3 * h];
        let gb_hh = &p[off.gru_bhh..off.gru_bhh + 3 * h];

        let mut xs = Vec::with_capacity(steps * FEATURES);
        for frame in x {
            for (v, s) in frame.iter().zip(&self.input_scale) {
                xs.push(v / s);
            }
        }

        let keep_steps = if keep { steps } else { 1 };
        let mut cache = Cache {
            x: xs,
            l_gates: vec![0.0; keep_steps * 4 * h],
            l_c: vec![0.0; (keep_steps + 1) * h],
            l_h: vec![0.0; (steps + 1) * h],
            g_gates: vec![0.0; keep_steps * 3 * h],
            g_hn: vec![0.0; keep_steps * h],
            g_h: vec![0.0; (steps + 1) * h],
            out: Vec::new(),
        };

        let mut z = vec![0.0; 4 * h];
        let mut a = vec![0.0; 3 * h];
        let mut b = vec![0.0; 3 * h];
        let mut c_prev = vec![0.0; h];
        for t in 0..steps {
            let xt = &cache.x[t * FEATURES..(t + 1) * FEATURES];
            let slot = if keep { t } else { 0 };

            // LSTM
            z.copy_from_slice(lb);
            matvec_acc(&mut z, lw_ih, xt);
            matvec_acc(&mut z, lw_hh, &cache.l_h[t * h..(t + 1) * h]);
            let gates = &mut cache.l_gates[slot * 4 * h..(slot + 1) * 4 * h];
            for j in 0..h {
                let i_g = sigmoid(z[j]);
                let f_g = sigmoid(z[h + j]);
                let g_g = z[2 * h + j].tanh();
                let o_g = sigmoid(z[3 * h + j]);
                gates[j] = i_g;
                gates[h + j] = f_g;
                gates[2 * h + j] = g_g;
                gates[3 * h + j] = o_g;
                let c = f_g * c_prev[j] + i_g * g_g;
                c_prev[j] = c;
                cache.l_h[(t + 1) * h + j] = o_g * c.tanh();
            }
            if keep {
                cache.l_c[(t + 1) * h..(t + 2) * h].copy_from_slice(&c_prev);
            }

            // GRU
            a.copy_from_slice(gb_ih);
            matvec_acc(&mut a, gw_ih, xt);
            b.copy_from_slice(gb_hh);
            let (h_before, h_after) = cache.g_h.split_at_mut((t + 1) * h);
            let h_prev = &h_before[t * h..];
            matvec_acc(&mut b, gw_hh, h_prev);
            let gates = &mut cache.g_gates[slot * 3 * h..(slot + 1) * 3 * h];
            for j in 0..h {
                let r = sigmoid(a[j] + b[j]);
                let zg = sigmoid(a[h + j] + b[h + j]);
                let n = (a[2 * h + j] + r * b[2 * h + j]).tanh();
                gates[j] = r;
                gates[h + j] = zg;
                gates[2 * h + j] = n;
                cache.g_hn[slot * h + j] = b[2 * h + j];
                h_after[j] = (1.0 - zg) * n + zg * h_prev[j];
            }
        }

        // head
        let o = self.config.head_outputs();
        let hw = &p[off.head_w..off.head_w + o * 2 * h];
        let hb = &p[off.head_b..off.head_b + o];
        let mut state = vec![0.0; 2 * h];
        let mut out = Vec::with_capacity(FEATURES * self.config.output_frames);
        let frames: Vec<usize> = match self.config.head {
            HeadMode::FinalState => vec![steps],
            HeadMode::LastFrames => {
                (steps + 1 - self.config.output_frames..=steps).collect()
            }
        };
        for t in frames {
            state[..h].copy_from_slice(&cache.l_h[t * h..(t + 1) * h]);
            state[h..].copy_from_slice(&cache.g_h[t * h..(t + 1) * h]);
            let mut y = hb.to_vec();
            matvec_acc(&mut y, hw, &state);
            out.extend(y);
        }
        cache.out = out;
        cache
    }

    /// Network output in normalized units, `l1 × 6` flattened.
    fn raw_output(&self, x: &[PoseFeature]) -> Vec<f64> {
        self.run(x, false).out
    }

    pub fn forward_features(&self, x: &[PoseFeature]) -> Result<Vec<PoseFeature>> {
        self.check_input(x)?;
        let out = self.raw_output(x);
        Ok(out
            .chunks_exact(FEATURES)
            .map(|c| {
                let mut f = [0.0; FEATURES];
                for k in 0..FEATURES {
                    f[k] = c[k] * self.output_scale[k];
                }
                f
            })
            .collect())
    }

    pub fn forward(&self, input: &RelativePoseSeq) -> Result<RelativePoseSeq> {
        let x = input.encode()?;
        let y = self.forward_features(&x)?;
        RelativePoseSeq::decode(input.base_time, input.frequency, 1, &y)
    }

    fn normalized_target(&self, target: &[PoseFeature]) -> Vec<f64> {
        target
            .iter()
            .flat_map(|f| (0..FEATURES).map(move |k| f[k] / self.output_scale[k]))
            .collect()
    }

    /// Mean squared error in normalized output units.
    pub fn loss(&self, x: &[PoseFeature], target: &[PoseFeature]) -> Result<f64> {
        self.check_input(x)?;
        self.check_target(target)?;
        let y = self.raw_output(x);
        let t = self.normalized_target(target);
        Ok(y.iter().zip(&t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64)
    }

    fn check_target(&self, target: &[PoseFeature]) -> Result<()> {
        if target.len() != self.config.output_frames {
            return Err(Error::DimensionMismatch {
                expected: self.config.output_frames,
                got: target.len(),
            });
        }
        Ok(())
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, x: &[PoseFeature], target: &[PoseFeature]) -> Result<(f64, Vec<f64>)> {
        self.check_input(x)?;
        self.check_target(target)?;
        let cache = self.run(x, true);
        let t = self.normalized_target(target);
        let n = cache.out.len() as f64;
        let loss = cache.out.iter().zip(&t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
        let dy: Vec<f64> = cache.out.iter().zip(&t).map(|(a, b)| 2.0 * (a - b) / n).collect();
        Ok((loss, self.backward(&cache, &dy)))
    }

    fn backward(&self, cache: &Cache, dy: &[f64]) -> Vec<f64> {
        let h = self.config.hidden;
        let steps = cache.x.len() / FEATURES;
        let off = Offsets::new(&self.config);
        let p = &self.params;
        let mut grad = vec![0.0; p.len()];

        // head: inject dL/dstate into per-step hidden gradients
        let o = self.config.head_outputs();
        let hw = &p[off.head_w..off.head_w + o * 2 * h];
        let mut dh_l = vec![0.0; (steps + 1) * h];
        let mut dh_g = vec![0.0; (steps + 1) * h];
        let frames: Vec<usize> = match self.config.head {
            HeadMode::FinalState => vec![steps],
            HeadMode::LastFrames => (steps + 1 - self.config.output_frames..=steps).collect(),
        };
        let mut state = vec![0.0; 2 * h];
        for (fi, &t) in frames.iter().enumerate() {
            let dyt = &dy[fi * o..(fi + 1) * o];
            state[..h].copy_from_slice(&cache.l_h[t * h..(t + 1) * h]);
            state[h..].copy_from_slice(&cache.g_h[t * h..(t + 1) * h]);
            outer_acc(&mut grad[off.head_w..off.head_w + o * 2 * h], dyt, &state);
            for (g, d) in grad[off.head_b..off.head_b + o].iter_mut().zip(dyt) {
                *g += d;
            }
            let mut ds = vec![0.0; 2 * h];
            matvec_t_acc(&mut ds, hw, dyt);
            for j in 0..h {
                dh_l[t * h + j] += ds[j];
                dh_g[t * h + j] += ds[h + j];
            }
        }

        // LSTM backward
        {
            let w_hh = &p[off.lstm_whh..off.lstm_whh + 4 * h * h];
            let mut dh = vec![0.0; h];
            let mut dc = vec![0.0; h];
            let mut dz = vec![0.0; 4 * h];
            for t in (0..steps).rev() {
                for j in 0..h {
                    dh[j] += dh_l[(t + 1) * h + j];
                }
                let gates = &cache.l_gates[t * 4 * h..(t + 1) * 4 * h];
                let c = &cache.l_c[(t + 1) * h..(t + 2) * h];
                let c_prev = &cache.l_c[t * h..(t + 1) * h];
                for j in 0..h {
                    let (i_g, f_g, g_g, o_g) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                    let tc = c[j].tanh();
                    let d_o = dh[j] * tc;
                    let dcj = dc[j] + dh[j] * o_g * (1.0 - tc * tc);
                    dz[j] = dcj * g_g * i_g * (1.0 - i_g);
                    dz[h + j] = dcj * c_prev[j] * f_g * (1.0 - f_g);
                    dz[2 * h + j] = dcj * i_g * (1.0 - g_g * g_g);
                    dz[3 * h + j] = d_o * o_g * (1.0 - o_g);
                    dc[j] = dcj * f_g;
                }
                let xt = &cache.x[t * FEATURES..(t + 1) * FEATURES];
                let h_prev = &cache.l_h[t * h..(t + 1) * h];
                outer_acc(&mut grad[off.lstm_wih..off.lstm_wih + 4 * h * FEATURES], &dz, xt);
                outer_acc(&mut grad[off.lstm_whh..off.lstm_whh + 4 * h * h], &dz, h_prev);
                for (g, d) in grad[off.lstm_b..off.lstm_b + 4 * h].iter_mut().zip(&dz) {
                    *g += d;
                }
                dh.iter_mut().for_each(|v| *v = 0.0);
                matvec_t_acc(&mut dh, w_hh, &dz);
            }
        }

        // GRU backward
        {
            let w_hh = &p[off.gru_whh..off.gru_whh + 3 * h * h];
            let mut dh = vec![0.0; h];
            let mut da = vec![0.0; 3 * h];
            let mut db = vec![0.0; 3 * h];
            let mut dh_prev = vec![0.0; h];
            for t in (0..steps).rev() {
                for j in 0..h {
                    dh[j] += dh_g[(t + 1) * h + j];
                }
                let gates = &cache.g_gates[t * 3 * h..(t + 1) * 3 * h];
                let hn = &cache.g_hn[t * h..(t + 1) * h];
                let h_prev = &cache.g_h[t * h..(t + 1) * h];
                for j in 0..h {
                    let (r, z, n) = (gates[j], gates[h + j], gates[2 * h + j]);
                    let dn = dh[j] * (1.0 - z);
                    let dzg = dh[j] * (h_prev[j] - n);
                    dh_prev[j] = dh[j] * z;
                    let dpre_n = dn * (1.0 - n * n);
                    let dr = dpre_n * hn[j];
                    let dpre_r = dr * r * (1.0 - r);
                    let dpre_z = dzg * z * (1.0 - z);
                    da[j] = dpre_r;
                    da[h + j] = dpre_z;
                    da[2 * h + j] = dpre_n;
                    db[j] = dpre_r;
                    db[h + j] = dpre_z;
                    db[2 * h + j] = dpre_n * r;
                }
                let xt = &cache.x[t * FEATURES..(t + 1) * FEATURES];
                outer_acc(&mut grad[off.gru_wih..off.gru_wih + 3 * h * FEATURES], &da, xt);
                for (g, d) in grad[off.gru_bih..off.gru_bih + 3 * h].iter_mut().zip(&da) {
                    *g += d;
                }
                outer_acc(&mut grad[off.gru_whh..off.gru_whh + 3 * h * h], &db, h_prev);
                for (g, d) in grad[off.gru_bhh..off.gru_bhh + 3 * h].iter_mut().zip(&db) {
                    *g += d;
                }
                matvec_t_acc(&mut dh_prev, w_hh, &db);
                dh.copy_from_slice(&dh_prev);
            }
        }
        grad
    }
}

impl MotionPredictor for PredictorModel {
    fn input_frames(&self) -> usize {
        self.config.input_frames
    }

    fn output_frames(&self) -> usize {
        self.config.output_frames
    }

    fn predict(&self, input: &RelativePoseSeq) -> Result<RelativePoseSeq> {
        self.forward(input)
    }
}
