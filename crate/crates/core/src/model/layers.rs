//! Trainable building blocks with explicit forward caches and backward passes.
//!
//! Sequences are laid out time-major as `(T, B, D)` so that input projections
//! for every step run as one matrix product.

use ndarray::{s, Array2, Array3, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;

/// A named weight matrix with its accumulated gradient. Biases are `1 x n`.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Array2<f64>) -> Self {
        let grad = Array2::zeros(value.dim());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self::new(name, Array2::zeros((rows, cols)))
    }

    pub fn glorot<R: Rng>(name: impl Into<String>, rows: usize, cols: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        Self::new(
            name,
            Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit)),
        )
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Random orthogonal `n x n` matrix (Gram-Schmidt on a Gaussian draw).
pub fn orthogonal<R: Rng>(n: usize, rng: &mut R) -> Array2<f64> {
    loop {
        let mut q = Array2::<f64>::from_shape_fn((n, n), |_| rng.sample(StandardNormal));
        let mut ok = true;
        for j in 0..n {
            for k in 0..j {
                let proj = q.column(j).dot(&q.column(k));
                let prev = q.column(k).to_owned();
                q.column_mut(j).scaled_add(-proj, &prev);
            }
            let norm = q.column(j).dot(&q.column(j)).sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            q.column_mut(j).mapv_inplace(|v| v / norm);
        }
        if ok {
            return q;
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// Fully connected layer `y = act(x W + b)` over rows of `x`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
    pub activation: Activation,
}

impl Dense {
    pub fn new<R: Rng>(prefix: &str, input: usize, output: usize, activation: Activation, rng: &mut R) -> Self {
        Self {
            weight: Param::glorot(format!("{prefix}.weight"), input, output, rng),
            bias: Param::zeros(format!("{prefix}.bias"), 1, output),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.ncols()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let act = self.activation;
        let mut y = x.dot(&self.weight.value) + &self.bias.value;
        if act != Activation::Identity {
            y.mapv_inplace(|v| act.apply(v));
        }
        y
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. `x`.
    pub fn backward(&mut self, x: &Array2<f64>, y: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        let act = self.activation;
        let mut dz = dy.clone();
        if act != Activation::Identity {
            Zip::from(&mut dz)
                .and(y)
                .for_each(|d, &out| *d *= act.derivative_from_output(out));
        }
        self.weight.grad += &x.t().dot(&dz);
        self.bias.grad += &dz.sum_axis(Axis(0)).insert_axis(Axis(0));
        dz.dot(&self.weight.value.t())
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// One direction of an LSTM with gates ordered `[input, forget, cell, output]`.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub w_input: Param,
    pub w_hidden: Param,
    pub bias: Param,
    pub reverse: bool,
}

/// Activations saved by [`Lstm::forward`] for the backward pass, indexed by time.
#[derive(Debug, Clone)]
pub struct LstmCache {
    gates: Array3<f64>,
    cells: Array3<f64>,
    hidden: Array3<f64>,
}

impl Lstm {
    pub fn new<R: Rng>(prefix: &str, input: usize, hidden: usize, reverse: bool, rng: &mut R) -> Self {
        let mut w_hidden = Array2::zeros((hidden, 4 * hidden));
        for g in 0..4 {
            let q = orthogonal(hidden, rng);
            w_hidden
                .slice_mut(s![.., g * hidden..(g + 1) * hidden])
                .assign(&q);
        }
        let mut bias = Array2::zeros((1, 4 * hidden));
        bias.slice_mut(s![.., hidden..2 * hidden]).fill(1.0);
        Self {
            w_input: Param::glorot(format!("{prefix}.w_input"), input, 4 * hidden, rng),
            w_hidden: Param::new(format!("{prefix}.w_hidden"), w_hidden),
            bias: Param::new(format!("{prefix}.bias"), bias),
            reverse,
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hidden.value.nrows()
    }

    fn step_order(&self, steps: usize) -> Vec<usize> {
        if self.reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        }
    }

    /// Runs the sequence `(T, B, D)` and returns hidden states `(T, B, H)`.
    pub fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, LstmCache) {
        let (steps, batch, dim) = x.dim();
        let h = self.hidden_size();
        let x = x.as_standard_layout();
        let flat = x
            .view()
            .into_shape_with_order((steps * batch, dim))
            .expect("contiguous input");
        let proj = flat.dot(&self.w_input.value) + &self.bias.value;
        let proj = proj
            .into_shape_with_order((steps, batch, 4 * h))
            .expect("projection reshape");

        let mut gates = Array3::zeros((steps, batch, 4 * h));
        let mut cells = Array3::zeros((steps, batch, h));
        let mut hidden = Array3::zeros((steps, batch, h));
        let mut h_prev = Array2::<f64>::zeros((batch, h));
        let mut c_prev = Array2::<f64>::zeros((batch, h));
        for t in self.step_order(steps) {
            let mut z = h_prev.dot(&self.w_hidden.value);
            z += &proj.index_axis(Axis(0), t);
            let mut c_new = Array2::zeros((batch, h));
            let mut h_new = Array2::zeros((batch, h));
            for b in 0..batch {
                for j in 0..h {
                    let i = sigmoid(z[[b, j]]);
                    let f = sigmoid(z[[b, h + j]]);
                    let g = z[[b, 2 * h + j]].tanh();
                    let o = sigmoid(z[[b, 3 * h + j]]);
                    let c = f * c_prev[[b, j]] + i * g;
                    z[[b, j]] = i;
                    z[[b, h + j]] = f;
                    z[[b, 2 * h + j]] = g;
                    z[[b, 3 * h + j]] = o;
                    c_new[[b, j]] = c;
                    h_new[[b, j]] = o * c.tanh();
                }
            }
            gates.index_axis_mut(Axis(0), t).assign(&z);
            cells.index_axis_mut(Axis(0), t).assign(&c_new);
            hidden.index_axis_mut(Axis(0), t).assign(&h_new);
            h_prev = h_new;
            c_prev = c_new;
        }
        let cache = LstmCache {
            gates,
            cells,
            hidden: hidden.clone(),
        };
        (hidden, cache)
    }

    /// Backpropagation through time. Accumulates parameter gradients and
    /// returns the gradient w.r.t. the input sequence.
    pub fn backward(&mut self, x: &Array3<f64>, cache: &LstmCache, dh_out: &Array3<f64>) -> Array3<f64> {
        let (steps, batch, dim) = x.dim();
        let h = self.hidden_size();
        let order = self.step_order(steps);

        let mut dz_all = Array3::<f64>::zeros((steps, batch, 4 * h));
        let mut h_prev_all = Array3::<f64>::zeros((steps, batch, h));
        let mut dh_next = Array2::<f64>::zeros((batch, h));
        let mut dc_next = Array2::<f64>::zeros((batch, h));
        let w_hidden_t = self.w_hidden.value.t().to_owned();

        for (pos, &t) in order.iter().enumerate().rev() {
            let prev = if pos > 0 { Some(order[pos - 1]) } else { None };
            let g = cache.gates.index_axis(Axis(0), t);
            let c = cache.cells.index_axis(Axis(0), t);
            let dh_t = dh_out.index_axis(Axis(0), t);
            let mut dz = dz_all.index_axis_mut(Axis(0), t);
            for b in 0..batch {
                for j in 0..h {
                    let (i, f, gg, o) = (g[[b, j]], g[[b, h + j]], g[[b, 2 * h + j]], g[[b, 3 * h + j]]);
                    let c_prev = prev.map_or(0.0, |p| cache.cells[[p, b, j]]);
                    let tc = c[[b, j]].tanh();
                    let dh = dh_t[[b, j]] + dh_next[[b, j]];
                    let dc = dh * o * (1.0 - tc * tc) + dc_next[[b, j]];
                    dz[[b, j]] = dc * gg * i * (1.0 - i);
                    dz[[b, h + j]] = dc * c_prev * f * (1.0 - f);
                    dz[[b, 2 * h + j]] = dc * i * (1.0 - gg * gg);
                    dz[[b, 3 * h + j]] = dh * tc * o * (1.0 - o);
                    dc_next[[b, j]] = dc * f;
                }
            }
            dh_next = dz.dot(&w_hidden_t);
            if let Some(p) = prev {
                h_prev_all
                    .index_axis_mut(Axis(0), t)
                    .assign(&cache.hidden.index_axis(Axis(0), p));
            }
        }

        let dz_flat = dz_all
            .into_shape_with_order((steps * batch, 4 * h))
            .expect("contiguous grads");
        let h_prev_flat = h_prev_all
            .into_shape_with_order((steps * batch, h))
            .expect("contiguous states");
        let x = x.as_standard_layout();
        let x_flat = x
            .view()
            .into_shape_with_order((steps * batch, dim))
            .expect("contiguous input");
        self.w_hidden.grad += &h_prev_flat.t().dot(&dz_flat);
        self.w_input.grad += &x_flat.t().dot(&dz_flat);
        self.bias.grad += &dz_flat.sum_axis(Axis(0)).insert_axis(Axis(0));
        dz_flat
            .dot(&self.w_input.value.t())
            .into_shape_with_order((steps, batch, dim))
            .expect("input grad reshape")
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.w_input, &self.w_hidden, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w_input, &mut self.w_hidden, &mut self.bias]
    }
}

/// Forward and backward LSTMs whose outputs are concatenated to `(T, B, 2H)`.
#[derive(Debug, Clone)]
pub struct Blstm {
    pub forward: Lstm,
    pub backward: Lstm,
}

#[derive(Debug, Clone)]
pub struct BlstmCache {
    input: Array3<f64>,
    fwd: LstmCache,
    bwd: LstmCache,
}

impl Blstm {
    pub fn new<R: Rng>(prefix: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            forward: Lstm::new(&format!("{prefix}.fwd"), input, hidden, false, rng),
            backward: Lstm::new(&format!("{prefix}.bwd"), input, hidden, true, rng),
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.forward.hidden_size()
    }

    pub fn run(&self, x: Array3<f64>) -> (Array3<f64>, BlstmCache) {
        let (hf, cf) = self.forward.forward(&x);
        let (hb, cb) = self.backward.forward(&x);
        let h = self.forward.hidden_size();
        let mut out = Array3::zeros((hf.dim().0, hf.dim().1, 2 * h));
        out.slice_mut(s![.., .., ..h]).assign(&hf);
        out.slice_mut(s![.., .., h..]).assign(&hb);
        (
            out,
            BlstmCache {
                input: x,
                fwd: cf,
                bwd: cb,
            },
        )
    }

    pub fn backprop(&mut self, cache: &BlstmCache, dy: &Array3<f64>) -> Array3<f64> {
        let h = self.forward.hidden_size();
        let dyf = dy.slice(s![.., .., ..h]).to_owned();
        let dyb = dy.slice(s![.., .., h..]).to_owned();
        let mut dx = self.forward.backward(&cache.input, &cache.fwd, &dyf);
        dx += &self.backward.backward(&cache.input, &cache.bwd, &dyb);
        dx
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut p = self.forward.params();
        p.extend(self.backward.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.forward.params_mut();
        p.extend(self.backward.params_mut());
        p
    }
}

/// Stack of bidirectional LSTM layers.
#[derive(Debug, Clone)]
pub struct RecurrentStack {
    pub layers: Vec<Blstm>,
}

impl RecurrentStack {
    pub fn new<R: Rng>(input: usize, hidden: usize, num_layers: usize, rng: &mut R) -> Self {
        let layers = (0..num_layers)
            .map(|l| {
                let d = if l == 0 { input } else { 2 * hidden };
                Blstm::new(&format!("blstm{l}"), d, hidden, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].forward.w_input.value.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Blstm::output_dim)
    }

    pub fn run(&self, x: Array3<f64>) -> (Array3<f64>, Vec<BlstmCache>) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x;
        for layer in &self.layers {
            let (out, cache) = layer.run(h);
            caches.push(cache);
            h = out;
        }
        (h, caches)
    }

    pub fn backprop(&mut self, caches: &[BlstmCache], dy: Array3<f64>) -> Array3<f64> {
        let mut d = dy;
        for (layer, cache) in self.layers.iter_mut().zip(caches).rev() {
            d = layer.backprop(cache, &d);
        }
        d
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(Blstm::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(Blstm::params_mut).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn loss(y: &Array3<f64>, probe: &Array3<f64>) -> f64 {
        (y * probe).sum()
    }

    #[test]
    fn orthogonal_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = orthogonal(6, &mut rng);
        let g = q.t().dot(&q);
        for i in 0..6 {
            for j in 0..6 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g[[i, j]] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stack_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut stack = RecurrentStack::new(3, 4, 2, &mut rng);
        let x = Array3::from_shape_fn((5, 2, 3), |_| rng.random_range(-1.0..1.0));
        let (y, _) = stack.run(x.clone());
        let probe = Array3::from_shape_fn(y.dim(), |_| rng.random_range(-1.0..1.0));

        let (y, caches) = stack.run(x.clone());
        let dx = stack.backprop(&caches, probe.clone());
        let _ = y;

        let eps = 1e-6;
        let n_params = stack.params().len();
        for p in 0..n_params {
            let shape = stack.params()[p].value.dim();
            for idx in [(0, 0), (shape.0 - 1, shape.1 - 1), (shape.0 / 2, shape.1 / 2)] {
                let analytic = stack.params()[p].grad[idx];
                let orig = stack.params()[p].value[idx];
                stack.params_mut()[p].value[idx] = orig + eps;
                let lp = loss(&stack.run(x.clone()).0, &probe);
                stack.params_mut()[p].value[idx] = orig - eps;
                let lm = loss(&stack.run(x.clone()).0, &probe);
                stack.params_mut()[p].value[idx] = orig;
                let numeric = (lp - lm) / (2.0 * eps);
                let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8);
                assert!(rel < 1e-5, "param {p} {idx:?}: {analytic} vs {numeric}");
            }
        }
        for idx in [(0, 0, 0), (4, 1, 2), (2, 0, 1)] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let mut xm = x.clone();
            xm[idx] -= eps;
            let numeric = (loss(&stack.run(xp).0, &probe) - loss(&stack.run(xm).0, &probe)) / (2.0 * eps);
            assert!((dx[idx] - numeric).abs() < 1e-6 * (1.0 + numeric.abs()));
        }
    }

    #[test]
    fn batch_entries_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let stack = RecurrentStack::new(3, 4, 1, &mut rng);
        let x = Array3::from_shape_fn((6, 3, 3), |_| rng.random_range(-1.0..1.0));
        let (y, _) = stack.run(x.clone());
        let mut perm = x.clone();
        perm.index_axis_mut(Axis(1), 0).assign(&x.index_axis(Axis(1), 2));
        perm.index_axis_mut(Axis(1), 2).assign(&x.index_axis(Axis(1), 0));
        let (yp, _) = stack.run(perm);
        assert_eq!(y.index_axis(Axis(1), 0), yp.index_axis(Axis(1), 2));
        assert_eq!(y.index_axis(Axis(1), 1), yp.index_axis(Axis(1), 1));
    }

    #[test]
    fn dense_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut d = Dense::new("d", 3, 2, Activation::Sigmoid, &mut rng);
        let x = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let y = d.forward(&x);
        let dy = Array2::ones(y.dim());
        let dx = d.backward(&x, &y, &dy);
        let eps = 1e-6;
        for i in 0..4 {
            for j in 0..3 {
                let mut xp = x.clone();
                xp[[i, j]] += eps;
                let mut xm = x.clone();
                xm[[i, j]] -= eps;
                let num = (d.forward(&xp).sum() - d.forward(&xm).sum()) / (2.0 * eps);
                assert!((num - dx[[i, j]]).abs() < 1e-8);
            }
        }
    }
}
