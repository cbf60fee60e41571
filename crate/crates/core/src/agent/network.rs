//! Recurrent Q-network: affine embedding of the observation bits, one LSTM
//! cell, affine head to one Q-value per action.
//!
//! Parameters live in one flat `f64` vector so the optimiser, the target
//! copy, checkpointing and finite-difference checks all see the same
//! layout. Blocks, in order, all row-major:
//!
//! | block | shape                   |
//! |-------|-------------------------|
//! | `w_embed` | inputs x embed      |
//! | `b_embed` | embed               |
//! | `w_x`     | embed x 4·units     |
//! | `w_h`     | units x 4·units     |
//! | `b_gate`  | 4·units             |
//! | `w_q`     | units x actions     |
//! | `b_q`     | actions             |
//!
//! Gate columns are ordered input, forget, cell, output.
//!
//! Observations are bit vectors that are mostly zero, so the embedding is
//! computed from the indices of the set bits only.

use crate::rng::RngStream;
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QNetDims {
    pub inputs: usize,
    pub embed: usize,
    pub units: usize,
    pub actions: usize,
}

#[derive(Clone, Copy, Debug)]
struct Layout {
    w_embed: usize,
    b_embed: usize,
    w_x: usize,
    w_h: usize,
    b_gate: usize,
    w_q: usize,
    b_q: usize,
    total: usize,
}

impl QNetDims {
    fn layout(&self) -> Layout {
        let g = 4 * self.units;
        let w_embed = 0;
        let b_embed = w_embed + self.inputs * self.embed;
        let w_x = b_embed + self.embed;
        let w_h = w_x + self.embed * g;
        let b_gate = w_h + self.units * g;
        let w_q = b_gate + g;
        let b_q = w_q + self.units * self.actions;
        let total = b_q + self.actions;
        Layout {
            w_embed,
            b_embed,
            w_x,
            w_h,
            b_gate,
            w_q,
            b_q,
            total,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }

    /// `(name, offset, rows, cols)` for each parameter block.
    pub fn blocks(&self) -> [(&'static str, usize, usize, usize); 7] {
        let l = self.layout();
        let g = 4 * self.units;
        [
            ("w_embed", l.w_embed, self.inputs, self.embed),
            ("b_embed", l.b_embed, 1, self.embed),
            ("w_x", l.w_x, self.embed, g),
            ("w_h", l.w_h, self.units, g),
            ("b_gate", l.b_gate, 1, g),
            ("w_q", l.w_q, self.units, self.actions),
            ("b_q", l.b_q, 1, self.actions),
        ]
    }
}

/// LSTM hidden and cell state.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl RecurrentState {
    pub fn zeros(units: usize) -> Self {
        Self {
            h: vec![0.0; units],
            c: vec![0.0; units],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QNetwork {
    dims: QNetDims,
    params: Vec<f64>,
}

/// Everything one forward step needs to be differentiated.
#[derive(Clone, Debug)]
pub struct StepCache {
    active: Vec<u32>,
    embed: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Post-activation gates `[i, f, g, o]`.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
    pub q: Vec<f64>,
    pub state: RecurrentState,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl QNetwork {
    pub fn zeros(dims: QNetDims) -> Self {
        Self {
            dims,
            params: vec![0.0; dims.param_count()],
        }
    }

    /// Each weight uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`; biases
    /// use the fan-in of the block they feed.
    pub fn init(dims: QNetDims, rng: &mut RngStream) -> Self {
        let mut net = Self::zeros(dims);
        let fan_ins = [
            dims.inputs,
            dims.inputs,
            dims.embed + dims.units,
            dims.embed + dims.units,
            dims.embed + dims.units,
            dims.units,
            dims.units,
        ];
        for ((_, off, rows, cols), fan_in) in dims.blocks().into_iter().zip(fan_ins) {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            for p in &mut net.params[off..off + rows * cols] {
                *p = rng.uniform(-bound, bound);
            }
        }
        net
    }

    pub fn from_params(dims: QNetDims, params: Vec<f64>) -> Result<Self, Error> {
        if params.len() != dims.param_count() {
            return Err(Error::Dimension(format!(
                "{} parameters for dims needing {}",
                params.len(),
                dims.param_count()
            )));
        }
        Ok(Self { dims, params })
    }

    pub fn dims(&self) -> QNetDims {
        self.dims
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn zero_state(&self) -> RecurrentState {
        RecurrentState::zeros(self.dims.units)
    }

    fn check(&self, active: &[u32], state: &RecurrentState) -> Result<(), Error> {
        if let Some(&bad) = active.iter().find(|&&i| i as usize >= self.dims.inputs) {
            return Err(Error::Dimension(format!(
                "input bit {bad} outside {} inputs",
                self.dims.inputs
            )));
        }
        if state.h.len() != self.dims.units || state.c.len() != self.dims.units {
            return Err(Error::Dimension(format!(
                "recurrent state of width {} for {} units",
                state.h.len(),
                self.dims.units
            )));
        }
        Ok(())
    }

    /// One step: Q-values and the updated recurrent state.
    pub fn forward(&self, active: &[u32], state: &RecurrentState) -> Result<StepCache, Error> {
        self.check(active, state)?;
        Ok(self.forward_unchecked(active, state))
    }

    pub(crate) fn forward_unchecked(&self, active: &[u32], state: &RecurrentState) -> StepCache {
        let d = self.dims;
        let l = d.layout();
        let p = &self.params;
        let (e_n, u, a_n) = (d.embed, d.units, d.actions);
        let g_n = 4 * u;

        let mut embed = p[l.b_embed..l.b_embed + e_n].to_vec();
        for &j in active {
            let row = &p[l.w_embed + j as usize * e_n..][..e_n];
            for (e, w) in embed.iter_mut().zip(row) {
                *e += w;
            }
        }

        let mut z = p[l.b_gate..l.b_gate + g_n].to_vec();
        for (k, &ek) in embed.iter().enumerate() {
            if ek != 0.0 {
                let row = &p[l.w_x + k * g_n..][..g_n];
                for (zz, w) in z.iter_mut().zip(row) {
                    *zz += ek * w;
                }
            }
        }
        for (k, &hk) in state.h.iter().enumerate() {
            if hk != 0.0 {
                let row = &p[l.w_h + k * g_n..][..g_n];
                for (zz, w) in z.iter_mut().zip(row) {
                    *zz += hk * w;
                }
            }
        }
        let mut gates = z;
        for (idx, v) in gates.iter_mut().enumerate() {
            *v = if idx / u == 2 { v.tanh() } else { sigmoid(*v) };
        }
        let mut c = vec![0.0; u];
        let mut h = vec![0.0; u];
        let mut tanh_c = vec![0.0; u];
        for k in 0..u {
            let (i, f, g, o) = (gates[k], gates[u + k], gates[2 * u + k], gates[3 * u + k]);
            c[k] = f * state.c[k] + i * g;
            tanh_c[k] = c[k].tanh();
            h[k] = o * tanh_c[k];
        }
        let mut q = p[l.b_q..l.b_q + a_n].to_vec();
        for (k, &hk) in h.iter().enumerate() {
            let row = &p[l.w_q + k * a_n..][..a_n];
            for (qq, w) in q.iter_mut().zip(row) {
                *qq += hk * w;
            }
        }
        StepCache {
            active: active.to_vec(),
            embed,
            h_prev: state.h.clone(),
            c_prev: state.c.clone(),
            gates,
            tanh_c,
            q,
            state: RecurrentState { h, c },
        }
    }

    /// Backpropagate one step.
    ///
    /// `dq` is dLoss/dq for this step, `dh_next`/`dc_next` the gradient
    /// flowing back from later steps. Accumulates into `grad` and returns
    /// the gradient with respect to this step's incoming state.
    pub fn backward_step(
        &self,
        cache: &StepCache,
        dq: &[f64],
        dh_next: &[f64],
        dc_next: &[f64],
        grad: &mut [f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let d = self.dims;
        let l = d.layout();
        let p = &self.params;
        let (e_n, u, a_n) = (d.embed, d.units, d.actions);
        let g_n = 4 * u;
        let h = &cache.state.h;

        for (gb, &x) in grad[l.b_q..l.b_q + a_n].iter_mut().zip(dq) {
            *gb += x;
        }
        let mut dh = dh_next.to_vec();
        for k in 0..u {
            let row = &p[l.w_q + k * a_n..][..a_n];
            let grow = &mut grad[l.w_q + k * a_n..][..a_n];
            let mut acc = 0.0;
            for a in 0..a_n {
                grow[a] += h[k] * dq[a];
                acc += row[a] * dq[a];
            }
            dh[k] += acc;
        }

        let gates = &cache.gates;
        let mut dz = vec![0.0; g_n];
        let mut dc_prev = vec![0.0; u];
        for k in 0..u {
            let (i, f, g, o) = (gates[k], gates[u + k], gates[2 * u + k], gates[3 * u + k]);
            let tc = cache.tanh_c[k];
            let d_o = dh[k] * tc;
            let dc = dh[k] * o * (1.0 - tc * tc) + dc_next[k];
            let d_i = dc * g;
            let d_g = dc * i;
            let d_f = dc * cache.c_prev[k];
            dc_prev[k] = dc * f;
            dz[k] = d_i * i * (1.0 - i);
            dz[u + k] = d_f * f * (1.0 - f);
            dz[2 * u + k] = d_g * (1.0 - g * g);
            dz[3 * u + k] = d_o * o * (1.0 - o);
        }

        for (gb, &x) in grad[l.b_gate..l.b_gate + g_n].iter_mut().zip(&dz) {
            *gb += x;
        }
        let mut de = vec![0.0; e_n];
        for k in 0..e_n {
            let row = &p[l.w_x + k * g_n..][..g_n];
            let grow = &mut grad[l.w_x + k * g_n..][..g_n];
            let ek = cache.embed[k];
            let mut acc = 0.0;
            for j in 0..g_n {
                grow[j] += ek * dz[j];
                acc += row[j] * dz[j];
            }
            de[k] = acc;
        }
        let mut dh_prev = vec![0.0; u];
        for k in 0..u {
            let row = &p[l.w_h + k * g_n..][..g_n];
            let grow = &mut grad[l.w_h + k * g_n..][..g_n];
            let hk = cache.h_prev[k];
            let mut acc = 0.0;
            for j in 0..g_n {
                grow[j] += hk * dz[j];
                acc += row[j] * dz[j];
            }
            dh_prev[k] = acc;
        }

        for (gb, &x) in grad[l.b_embed..l.b_embed + e_n].iter_mut().zip(&de) {
            *gb += x;
        }
        for &j in &cache.active {
            let grow = &mut grad[l.w_embed + j as usize * e_n..][..e_n];
            for (g, &x) in grow.iter_mut().zip(&de) {
                *g += x;
            }
        }
        (dh_prev, dc_prev)
    }

    /// Squared-error loss over a sequence and its full gradient (BPTT).
    ///
    /// `targets[t]` is `Some((action, target, weight))` when step `t`
    /// carries the loss term `weight * 0.5 * (q_t[action] - target)^2`.
    pub fn sequence_loss_grad(
        &self,
        inputs: &[Vec<u32>],
        targets: &[Option<(usize, f64, f64)>],
        initial: &RecurrentState,
        grad: &mut [f64],
    ) -> Result<f64, Error> {
        assert_eq!(inputs.len(), targets.len());
        assert_eq!(grad.len(), self.params.len());
        let mut state = initial.clone();
        let mut caches = Vec::with_capacity(inputs.len());
        for x in inputs {
            let cache = self.forward(x, &state)?;
            state = cache.state.clone();
            caches.push(cache);
        }
        let u = self.dims.units;
        let mut loss = 0.0;
        let mut dh = vec![0.0; u];
        let mut dc = vec![0.0; u];
        for (cache, t) in caches.iter().zip(targets).rev() {
            let mut dq = vec![0.0; self.dims.actions];
            if let Some((a, y, w)) = *t {
                if a >= self.dims.actions {
                    return Err(Error::Dimension(format!("action {a} out of range")));
                }
                let err = cache.q[a] - y;
                loss += 0.5 * w * err * err;
                dq[a] = w * err;
            }
            let (dhp, dcp) = self.backward_step(cache, &dq, &dh, &dc, grad);
            dh = dhp;
            dc = dcp;
        }
        Ok(loss)
    }

    /// Loss only, for finite differences.
    pub fn sequence_loss(
        &self,
        inputs: &[Vec<u32>],
        targets: &[Option<(usize, f64, f64)>],
        initial: &RecurrentState,
    ) -> Result<f64, Error> {
        let mut state = initial.clone();
        let mut loss = 0.0;
        for (x, t) in inputs.iter().zip(targets) {
            let cache = self.forward(x, &state)?;
            if let Some((a, y, w)) = *t {
                let err = cache.q[a] - y;
                loss += 0.5 * w * err * err;
            }
            state = cache.state;
        }
        Ok(loss)
    }
}

/// Adam over the flat parameter vector.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let step = self.lr * bc2.sqrt() / bc1;
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if g == 0.0 && *m == 0.0 {
                // Moments stay zero; the update would be zero anyway.
                continue;
            }
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= step * *m / (v.sqrt() + self.eps);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(format!("unknown optimizer {s:?}")),
        }
    }
}

/// Parameter update rule.
#[derive(Clone, Debug)]
pub enum Optimizer {
    /// Plain gradient descent: `p -= lr * g`.
    Sgd { lr: f64 },
    Adam(Adam),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, n: usize, lr: f64) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(n, lr)),
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        match self {
            Optimizer::Sgd { lr } => {
                for (p, &g) in params.iter_mut().zip(grad) {
                    *p -= *lr * g;
                }
            }
            Optimizer::Adam(a) => a.step(params, grad),
        }
    }
}
