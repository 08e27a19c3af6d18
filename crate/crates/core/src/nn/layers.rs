use rand::Rng;

use super::dist::sigmoid;
use super::kernels::{matvec_acc, matvec_t_acc, outer_acc};
use super::params::{ParamId, ParameterStore};
use crate::error::{Error, Result};

/// `y = W x + b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DenseLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl DenseLayer {
    /// Register a layer initialised uniformly in `±1/√input`.
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let bound = 1.0 / (input as f64).sqrt();
        let weight = store.add_uniform(&format!("{name}.weight"), output, input, bound, rng)?;
        let bias = store.add_uniform(&format!("{name}.bias"), output, 1, bound, rng)?;
        Ok(DenseLayer {
            weight,
            bias,
            input,
            output,
        })
    }

    pub(crate) fn forward_into(&self, store: &ParameterStore, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(store.value(self.bias));
        matvec_acc(store.value(self.weight), x, out);
    }
}

pub fn dense_forward(store: &ParameterStore, layer: &DenseLayer, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != layer.input {
        return Err(Error::DimensionMismatch {
            expected: layer.input,
            got: x.len(),
        });
    }
    let mut out = vec![0.0; layer.output];
    layer.forward_into(store, x, &mut out);
    Ok(out)
}

/// One layer of gated memory cells. Gate rows are stacked in the order
/// input, forget, candidate, output.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LstmLayer {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmLayer {
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let bound_in = 1.0 / (input as f64).sqrt();
        let bound_h = 1.0 / (hidden as f64).sqrt();
        let w_ih = store.add_uniform(&format!("{name}.w_ih"), 4 * hidden, input, bound_in, rng)?;
        let w_hh = store.add_uniform(&format!("{name}.w_hh"), 4 * hidden, hidden, bound_h, rng)?;
        let bias = store.add_uniform(&format!("{name}.bias"), 4 * hidden, 1, bound_h, rng)?;
        Ok(LstmLayer {
            w_ih,
            w_hh,
            bias,
            input,
            hidden,
        })
    }

    /// Cell update. `gates` receives the post-activation gate values
    /// `[i, f, g, o]`; `h_out`, `c_out` the new hidden and cell vectors.
    pub(crate) fn cell_forward(
        &self,
        store: &ParameterStore,
        x: &[f64],
        h: &[f64],
        c: &[f64],
        gates: &mut [f64],
        h_out: &mut [f64],
        c_out: &mut [f64],
    ) {
        let n = self.hidden;
        gates.copy_from_slice(store.value(self.bias));
        matvec_acc(store.value(self.w_ih), x, gates);
        matvec_acc(store.value(self.w_hh), h, gates);
        for k in 0..n {
            let i = sigmoid(gates[k]);
            let f = sigmoid(gates[n + k]);
            let g = gates[2 * n + k].tanh();
            let o = sigmoid(gates[3 * n + k]);
            gates[k] = i;
            gates[n + k] = f;
            gates[2 * n + k] = g;
            gates[3 * n + k] = o;
            let cn = f * c[k] + i * g;
            c_out[k] = cn;
            h_out[k] = o * cn.tanh();
        }
    }

    /// Backward through one cell given upstream gradients on `h'` and `c'`.
    /// Accumulates parameter gradients and returns `(dx, dh, dc)`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn cell_backward(
        &self,
        store: &ParameterStore,
        x: &[f64],
        h: &[f64],
        c: &[f64],
        gates: &[f64],
        c_new: &[f64],
        dh_new: &[f64],
        dc_new: &[f64],
        grads: &mut LstmGrads<'_>,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.hidden;
        let mut dz = vec![0.0; 4 * n];
        let mut dc = vec![0.0; n];
        for k in 0..n {
            let (i, f, g, o) = (gates[k], gates[n + k], gates[2 * n + k], gates[3 * n + k]);
            let tc = c_new[k].tanh();
            let d_o = dh_new[k] * tc;
            let dct = dc_new[k] + dh_new[k] * o * (1.0 - tc * tc);
            let d_i = dct * g;
            let d_g = dct * i;
            let d_f = dct * c[k];
            dc[k] = dct * f;
            dz[k] = d_i * i * (1.0 - i);
            dz[n + k] = d_f * f * (1.0 - f);
            dz[2 * n + k] = d_g * (1.0 - g * g);
            dz[3 * n + k] = d_o * o * (1.0 - o);
        }
        if let Some(gw) = grads.w_ih.as_deref_mut() {
            outer_acc(&dz, x, gw);
        }
        if let Some(gw) = grads.w_hh.as_deref_mut() {
            outer_acc(&dz, h, gw);
        }
        if let Some(gb) = grads.bias.as_deref_mut() {
            gb.iter_mut().zip(&dz).for_each(|(a, b)| *a += b);
        }
        let mut dx = vec![0.0; x.len()];
        matvec_t_acc(store.value(self.w_ih), &dz, &mut dx);
        let mut dh = vec![0.0; n];
        matvec_t_acc(store.value(self.w_hh), &dz, &mut dh);
        (dx, dh, dc)
    }
}

pub(crate) struct LstmGrads<'a> {
    pub w_ih: Option<&'a mut [f64]>,
    pub w_hh: Option<&'a mut [f64]>,
    pub bias: Option<&'a mut [f64]>,
}

/// Per-layer hidden and cell vectors of a recurrent stack.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentState {
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

impl RecurrentState {
    pub fn zeros(layers: usize, hidden: usize) -> Self {
        RecurrentState {
            h: vec![vec![0.0; hidden]; layers],
            c: vec![vec![0.0; hidden]; layers],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.h
            .iter()
            .chain(&self.c)
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Layers of gated memory cells stacked on top of each other.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmStack {
    pub layers: Vec<LstmLayer>,
}

impl LstmStack {
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        input: usize,
        hidden: usize,
        depth: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(depth);
        for l in 0..depth {
            let in_dim = if l == 0 { input } else { hidden };
            layers.push(LstmLayer::new(store, &format!("{name}.lstm{l}"), in_dim, hidden, rng)?);
        }
        Ok(LstmStack { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].hidden
    }

    pub fn zero_state(&self) -> RecurrentState {
        RecurrentState::zeros(self.layers.len(), self.hidden())
    }

    /// Advance `state` in place by one input; returns the top hidden vector.
    pub fn step_in_place(
        &self,
        store: &ParameterStore,
        x: &[f64],
        state: &mut RecurrentState,
    ) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        if !state.is_finite() {
            return Err(Error::NonFinite("recurrent state".into()));
        }
        let n = self.hidden();
        let mut gates = vec![0.0; 4 * n];
        let mut input = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut h_new = vec![0.0; n];
            let mut c_new = vec![0.0; n];
            layer.cell_forward(
                store,
                &input,
                &state.h[l],
                &state.c[l],
                &mut gates,
                &mut h_new,
                &mut c_new,
            );
            state.c[l] = c_new;
            state.h[l] = h_new.clone();
            input = h_new;
        }
        Ok(input)
    }

    /// Pure form: returns the top hidden vector and the successor state.
    pub fn step(
        &self,
        store: &ParameterStore,
        x: &[f64],
        state: &RecurrentState,
    ) -> Result<(Vec<f64>, RecurrentState)> {
        let mut next = state.clone();
        let out = self.step_in_place(store, x, &mut next)?;
        Ok((out, next))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Scalar-loop reference for one cell, written straight from the gate
    /// equations without the kernels.
    fn reference_cell(
        w_ih: &[f64],
        w_hh: &[f64],
        b: &[f64],
        x: &[f64],
        h: &[f64],
        c: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let n = h.len();
        let pre = |row: usize| {
            let mut s = b[row];
            for j in 0..x.len() {
                s += w_ih[row * x.len() + j] * x[j];
            }
            for j in 0..n {
                s += w_hh[row * n + j] * h[j];
            }
            s
        };
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut h2 = vec![0.0; n];
        let mut c2 = vec![0.0; n];
        for k in 0..n {
            let i = sig(pre(k));
            let f = sig(pre(n + k));
            let g = pre(2 * n + k).tanh();
            let o = sig(pre(3 * n + k));
            c2[k] = f * c[k] + i * g;
            h2[k] = o * c2[k].tanh();
        }
        (h2, c2)
    }

    #[test]
    fn dense_identity_and_bias() {
        let mut store = ParameterStore::new();
        let w = store.add("w", 2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = store.add("b", 2, 1, vec![0.0, 0.0]).unwrap();
        let layer = DenseLayer { weight: w, bias: b, input: 2, output: 2 };
        assert_eq!(dense_forward(&store, &layer, &[3.0, -4.0]).unwrap(), vec![3.0, -4.0]);

        store.get_mut(w).value.iter_mut().for_each(|v| *v = 0.0);
        store.get_mut(b).value = vec![0.5, -0.25];
        assert_eq!(dense_forward(&store, &layer, &[3.0, -4.0]).unwrap(), vec![0.5, -0.25]);
        assert!(dense_forward(&store, &layer, &[1.0]).is_err());
    }

    #[test]
    fn dense_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParameterStore::new();
        let layer = DenseLayer::new(&mut store, "d", 2, 3, &mut rng).unwrap();
        let x = [0.7, -1.3];
        let got = dense_forward(&store, &layer, &x).unwrap();
        let w = store.value(layer.weight);
        let b = store.value(layer.bias);
        for r in 0..3 {
            let mut s = 0.0;
            for c in 0..2 {
                s += w[r * 2 + c] * x[c];
            }
            assert!((got[r] - (s + b[r])).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_everything_stays_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParameterStore::new();
        let stack = LstmStack::new(&mut store, "s", 4, 5, 3, &mut rng).unwrap();
        store.iter_mut().for_each(|p| p.value.iter_mut().for_each(|v| *v = 0.0));
        let (out, next) = stack.step(&store, &[0.0; 4], &stack.zero_state()).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
        assert!(next.h.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn cell_matches_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParameterStore::new();
        let stack = LstmStack::new(&mut store, "s", 3, 4, 3, &mut rng).unwrap();
        let mut state = stack.zero_state();
        for l in 0..3 {
            for k in 0..4 {
                state.h[l][k] = rng.random_range(-0.9..0.9);
                state.c[l][k] = rng.random_range(-2.0..2.0);
            }
        }
        let x = [0.3, -0.8, 1.7];
        let (out, next) = stack.step(&store, &x, &state).unwrap();

        let mut input = x.to_vec();
        for (l, layer) in stack.layers.iter().enumerate() {
            let (h2, c2) = reference_cell(
                store.value(layer.w_ih),
                store.value(layer.w_hh),
                store.value(layer.bias),
                &input,
                &state.h[l],
                &state.c[l],
            );
            for k in 0..4 {
                assert!((next.h[l][k] - h2[k]).abs() < 1e-10);
                assert!((next.c[l][k] - c2[k]).abs() < 1e-10);
            }
            input = h2;
        }
        assert_eq!(out, next.h[2]);
    }

    #[test]
    fn deterministic_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParameterStore::new();
        let stack = LstmStack::new(&mut store, "s", 2, 6, 3, &mut rng).unwrap();
        let mut a = stack.zero_state();
        let mut b = stack.zero_state();
        for t in 0..20 {
            let x = [t as f64 * 10.0, -50.0];
            let oa = stack.step_in_place(&store, &x, &mut a).unwrap();
            let ob = stack.step_in_place(&store, &x, &mut b).unwrap();
            assert_eq!(oa, ob);
            assert!(a.h.iter().flatten().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn non_finite_state_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParameterStore::new();
        let stack = LstmStack::new(&mut store, "s", 2, 2, 1, &mut rng).unwrap();
        let mut state = stack.zero_state();
        state.c[0][1] = f64::NAN;
        assert!(matches!(stack.step(&store, &[0.0, 0.0], &state), Err(Error::NonFinite(_))));
    }
}
