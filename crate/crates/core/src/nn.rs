//! Recurrent cells shared by the generator and the inference network.

use rand::Rng;

use crate::tape::{Graph, Matrix, ParamId, ParamSet, SetHandle, Var};

#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros(g: &mut Graph, hidden: usize) -> Self {
        LstmState {
            h: g.constant(Matrix::zeros(1, hidden)),
            c: g.constant(Matrix::zeros(1, hidden)),
        }
    }
}

/// A single LSTM layer without peepholes. Gates are laid out `[i, f, g, o]`
/// along the columns of one `(input + hidden) × 4·hidden` weight.
#[derive(Clone, Copy, Debug)]
pub struct LstmLayer {
    weight: ParamId,
    bias: ParamId,
    input: usize,
    hidden: usize,
}

impl LstmLayer {
    pub fn register<R: Rng + ?Sized>(
        set: &mut ParamSet,
        prefix: &str,
        input: usize,
        hidden: usize,
        init_scale: f64,
        rng: &mut R,
    ) -> Self {
        let weight = set.add(
            format!("{prefix}.weight"),
            Matrix::uniform(input + hidden, 4 * hidden, init_scale, rng),
        );
        let mut b = Matrix::zeros(1, 4 * hidden);
        b.data_mut()[hidden..2 * hidden].fill(1.0);
        let bias = set.add(format!("{prefix}.bias"), b);
        LstmLayer {
            weight,
            bias,
            input,
            hidden,
        }
    }

    /// Rebinds a layer to parameters already present in `set`.
    pub fn find(set: &ParamSet, prefix: &str) -> Option<Self> {
        let weight = set.find(&format!("{prefix}.weight"))?;
        let bias = set.find(&format!("{prefix}.bias"))?;
        let (rows, cols) = set.get(weight).shape();
        let hidden = cols / 4;
        Some(LstmLayer {
            weight,
            bias,
            input: rows - hidden,
            hidden,
        })
    }

    pub fn input_size(&self) -> usize {
        self.input
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn step(&self, g: &mut Graph, params: SetHandle, x: Var, state: LstmState) -> LstmState {
        let w = g.param(params, self.weight);
        let b = g.param(params, self.bias);
        let xh = g.concat(&[x, state.h]);
        let z = g.matmul(xh, w);
        let z = g.add(z, b);
        let hs = self.hidden;
        let i = g.slice(z, 0, hs);
        let f = g.slice(z, hs, hs);
        let c_hat = g.slice(z, 2 * hs, hs);
        let o = g.slice(z, 3 * hs, hs);
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let c_hat = g.tanh(c_hat);
        let o = g.sigmoid(o);
        let keep = g.mul(f, state.c);
        let write = g.mul(i, c_hat);
        let c = g.add(keep, write);
        let tc = g.tanh(c);
        let h = g.mul(o, tc);
        LstmState { h, c }
    }
}

/// A stack of LSTM layers.
#[derive(Clone, Debug)]
pub struct LstmStack {
    layers: Vec<LstmLayer>,
}

impl LstmStack {
    pub fn register<R: Rng + ?Sized>(
        set: &mut ParamSet,
        prefix: &str,
        input: usize,
        hidden: usize,
        depth: usize,
        init_scale: f64,
        rng: &mut R,
    ) -> Self {
        let layers = (0..depth)
            .map(|l| {
                let inp = if l == 0 { input } else { hidden };
                LstmLayer::register(set, &format!("{prefix}.{l}"), inp, hidden, init_scale, rng)
            })
            .collect();
        LstmStack { layers }
    }

    pub fn find(set: &ParamSet, prefix: &str) -> Option<Self> {
        let mut layers = Vec::new();
        while let Some(layer) = LstmLayer::find(set, &format!("{prefix}.{}", layers.len())) {
            layers.push(layer);
        }
        (!layers.is_empty()).then_some(LstmStack { layers })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn hidden_size(&self) -> usize {
        self.layers[0].hidden
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].input
    }

    pub fn zero_state(&self, g: &mut Graph) -> Vec<LstmState> {
        self.layers
            .iter()
            .map(|l| LstmState::zeros(g, l.hidden))
            .collect()
    }

    /// Advances every layer by one step. `dropout` holds one optional
    /// inverted-dropout mask per layer boundary.
    pub fn step(
        &self,
        g: &mut Graph,
        params: SetHandle,
        x: Var,
        states: &[LstmState],
        dropout: Option<&[Var]>,
    ) -> Vec<LstmState> {
        let mut input = x;
        let mut next = Vec::with_capacity(self.layers.len());
        for (l, (layer, &state)) in self.layers.iter().zip(states).enumerate() {
            if l > 0 {
                if let Some(masks) = dropout {
                    input = g.mul(input, masks[l - 1]);
                }
            }
            let s = layer.step(g, params, input, state);
            input = s.h;
            next.push(s);
        }
        next
    }
}

/// Inverted-dropout masks for the boundaries between stacked layers.
pub fn dropout_masks<R: Rng + ?Sized>(
    g: &mut Graph,
    rate: f64,
    hidden: usize,
    boundaries: usize,
    rng: &mut R,
) -> Vec<Var> {
    let keep = 1.0 - rate;
    (0..boundaries)
        .map(|_| {
            let data = (0..hidden)
                .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            g.constant(Matrix::row_vector(data))
        })
        .collect()
}
