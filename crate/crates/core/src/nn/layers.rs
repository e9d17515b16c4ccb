use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::{NnError, Tensor};
use crate::rng::SplitRng;

/// Uniform entries in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn init_uniform(rng: &mut SplitRng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.range(-bound, bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// Named parameter tensors in a fixed canonical order.
pub trait ParamSet {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor));

    fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        self.visit("", &mut |_, t| out.push(t));
        out
    }

    fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit("", &mut |n, _| out.push(n));
        out
    }

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Registers every tensor on `g` in canonical order.
    fn bind_all(&self, g: &mut Graph) -> Vec<Var> {
        self.tensors().into_iter().map(|t| g.param(t)).collect()
    }
}

pub(crate) fn name(prefix: &str, field: &str) -> String {
    if prefix.is_empty() {
        field.to_string()
    } else {
        format!("{prefix}.{field}")
    }
}

macro_rules! param_set {
    ($ty:ty { $($field:ident),* $(,)? } $( nested { $($sub:ident),* $(,)? } )?) => {
        impl ParamSet for $ty {
            fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
                $( f(name(prefix, stringify!($field)), &self.$field); )*
                $( $( self.$sub.visit(&name(prefix, stringify!($sub)), f); )* )?
            }
            fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
                $( f(name(prefix, stringify!($field)), &mut self.$field); )*
                $( $( self.$sub.visit_mut(&name(prefix, stringify!($sub)), f); )* )?
            }
        }
    };
}

/// LSTM cell over the concatenation `[h; s]`.
///
/// ```text
/// f = sigmoid(W_f [h; s] + b_f)     r = sigmoid(W_r [h; s] + b_r)
/// g = tanh(W_c [h; s] + b_c)        c' = f * c + r * g
/// o = sigmoid(W_o [h; s] + b_o)     h' = o * tanh(c')
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmCellParams {
    pub w_f: Tensor,
    pub w_r: Tensor,
    pub w_c: Tensor,
    pub w_o: Tensor,
    pub b_f: Tensor,
    pub b_r: Tensor,
    pub b_c: Tensor,
    pub b_o: Tensor,
}

param_set!(LstmCellParams { w_f, w_r, w_c, w_o, b_f, b_r, b_c, b_o });

impl LstmCellParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        let w = Tensor::zeros(&[hidden, hidden + input]);
        let b = Tensor::zeros(&[hidden]);
        Self {
            w_f: w.clone(),
            w_r: w.clone(),
            w_c: w.clone(),
            w_o: w,
            b_f: b.clone(),
            b_r: b.clone(),
            b_c: b.clone(),
            b_o: b,
        }
    }

    /// Uniform `1/sqrt(H + E)` initialization with forget bias 1.
    pub fn init(rng: &mut SplitRng, hidden: usize, input: usize) -> Self {
        let fan = hidden + input;
        Self {
            w_f: init_uniform(rng, &[hidden, fan], fan),
            w_r: init_uniform(rng, &[hidden, fan], fan),
            w_c: init_uniform(rng, &[hidden, fan], fan),
            w_o: init_uniform(rng, &[hidden, fan], fan),
            b_f: Tensor::filled(&[hidden], 1.0),
            b_r: init_uniform(rng, &[hidden], fan),
            b_c: init_uniform(rng, &[hidden], fan),
            b_o: init_uniform(rng, &[hidden], fan),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_f.rows()
    }

    pub fn input(&self) -> usize {
        self.w_f.cols() - self.hidden()
    }

    pub fn check(&self) -> Result<(), NnError> {
        let (h, fan) = (self.hidden(), self.w_f.cols());
        for w in [&self.w_f, &self.w_r, &self.w_c, &self.w_o] {
            if w.shape() != [h, fan] {
                return Err(NnError::ShapeMismatch(format!(
                    "LSTM weight {:?}, expected [{h}, {fan}]",
                    w.shape()
                )));
            }
        }
        for b in [&self.b_f, &self.b_r, &self.b_c, &self.b_o] {
            if b.shape() != [h] {
                return Err(NnError::ShapeMismatch(format!(
                    "LSTM bias {:?}, expected [{h}]",
                    b.shape()
                )));
            }
        }
        if fan <= h {
            return Err(NnError::ShapeMismatch("LSTM input width is zero".into()));
        }
        Ok(())
    }

    pub fn bind(&self, g: &mut Graph) -> LstmVars {
        let v = self.bind_all(g);
        LstmVars {
            w_f: v[0],
            w_r: v[1],
            w_c: v[2],
            w_o: v[3],
            b_f: v[4],
            b_r: v[5],
            b_c: v[6],
            b_o: v[7],
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w_f: Var,
    pub w_r: Var,
    pub w_c: Var,
    pub w_o: Var,
    pub b_f: Var,
    pub b_r: Var,
    pub b_c: Var,
    pub b_o: Var,
}

impl LstmVars {
    pub fn step(&self, g: &mut Graph, h: Var, c: Var, s: Var) -> (Var, Var) {
        let hs = g.concat(&[h, s]);
        let gate = |g: &mut Graph, w: Var, b: Var| {
            let z = g.matvec(w, hs);
            g.add(z, b)
        };
        let zf = gate(g, self.w_f, self.b_f);
        let f = g.sigmoid(zf);
        let zr = gate(g, self.w_r, self.b_r);
        let r = g.sigmoid(zr);
        let zc = gate(g, self.w_c, self.b_c);
        let cand = g.tanh(zc);
        let zo = gate(g, self.w_o, self.b_o);
        let o = g.sigmoid(zo);
        let keep = g.mul(f, c);
        let write = g.mul(r, cand);
        let c_next = g.add(keep, write);
        let tc = g.tanh(c_next);
        let h_next = g.mul(o, tc);
        (h_next, c_next)
    }
}

/// One LSTM step on plain vectors.
pub fn lstm_step(
    params: &LstmCellParams,
    h_prev: &[f64],
    c_prev: &[f64],
    s: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), NnError> {
    params.check()?;
    let (hid, inp) = (params.hidden(), params.input());
    if h_prev.len() != hid || c_prev.len() != hid || s.len() != inp {
        return Err(NnError::ShapeMismatch(format!(
            "lstm_step expects h, c of {hid} and s of {inp}; got {}, {}, {}",
            h_prev.len(),
            c_prev.len(),
            s.len()
        )));
    }
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let h = g.input(Tensor::vector(h_prev.to_vec()));
    let c = g.input(Tensor::vector(c_prev.to_vec()));
    let x = g.input(Tensor::vector(s.to_vec()));
    let (h2, c2) = vars.step(&mut g, h, c, x);
    Ok((g.value(h2).data().to_vec(), g.value(c2).data().to_vec()))
}

/// Additive attention `score_k = v_a . tanh(w_1 h_t + w_2 hbar_k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub v_a: Tensor,
    pub w_1: Tensor,
    pub w_2: Tensor,
}

param_set!(AttentionParams { v_a, w_1, w_2 });

impl AttentionParams {
    pub fn init(rng: &mut SplitRng, hidden: usize) -> Self {
        Self {
            v_a: init_uniform(rng, &[hidden], hidden),
            w_1: init_uniform(rng, &[hidden, hidden], hidden),
            w_2: init_uniform(rng, &[hidden, hidden], hidden),
        }
    }

    pub fn zeros(hidden: usize) -> Self {
        Self {
            v_a: Tensor::zeros(&[hidden]),
            w_1: Tensor::zeros(&[hidden, hidden]),
            w_2: Tensor::zeros(&[hidden, hidden]),
        }
    }

    pub fn check(&self, hidden: usize) -> Result<(), NnError> {
        if self.v_a.shape() != [hidden]
            || self.w_1.shape() != [hidden, hidden]
            || self.w_2.shape() != [hidden, hidden]
        {
            return Err(NnError::ShapeMismatch(format!(
                "attention params do not match hidden size {hidden}"
            )));
        }
        Ok(())
    }

    pub fn bind(&self, g: &mut Graph) -> AttentionVars {
        let v = self.bind_all(g);
        AttentionVars {
            v_a: v[0],
            w_1: v[1],
            w_2: v[2],
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub v_a: Var,
    pub w_1: Var,
    pub w_2: Var,
}

impl AttentionVars {
    /// `w_2 hbar_k` for every encoder state, as rows of a matrix.
    pub fn project_keys(&self, g: &mut Graph, encoder: Var) -> Var {
        g.matmul_t(encoder, self.w_2)
    }

    /// Context vector and weights for query `h`, given the encoder matrix
    /// (states as rows) and its projected keys.
    pub fn attend(&self, g: &mut Graph, h: Var, encoder: Var, keys: Var, t: f64) -> (Var, Var) {
        let q = g.matvec(self.w_1, h);
        let pre = g.add_row_broadcast(keys, q);
        let act = g.tanh(pre);
        let scores = g.matvec(act, self.v_a);
        let weights = g.softmax(scores, t);
        let context = g.mat_t_vec(encoder, weights);
        (context, weights)
    }
}

/// Attention on plain vectors: returns `(context, weights)`.
pub fn attention(
    h_t: &[f64],
    encoder_states: &[Vec<f64>],
    params: &AttentionParams,
    t: f64,
) -> Result<(Vec<f64>, Vec<f64>), NnError> {
    let hidden = h_t.len();
    params.check(hidden)?;
    if !(t > 0.0) {
        return Err(NnError::InvalidTemperature(t));
    }
    if encoder_states.is_empty() || encoder_states.iter().any(|s| s.len() != hidden) {
        return Err(NnError::ShapeMismatch(
            "encoder states must be non-empty and match the query width".into(),
        ));
    }
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let rows: Vec<Var> = encoder_states
        .iter()
        .map(|s| g.input(Tensor::vector(s.clone())))
        .collect();
    let enc = g.stack_rows(&rows);
    let keys = vars.project_keys(&mut g, enc);
    let h = g.input(Tensor::vector(h_t.to_vec()));
    let (ctx, w) = vars.attend(&mut g, h, enc, keys, t);
    Ok((g.value(ctx).data().to_vec(), g.value(w).data().to_vec()))
}

/// Dense layer `W x + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

param_set!(Linear { w, b });

impl Linear {
    pub fn init(rng: &mut SplitRng, out: usize, inp: usize) -> Self {
        Self {
            w: init_uniform(rng, &[out, inp], inp),
            b: init_uniform(rng, &[out], inp),
        }
    }

    pub fn zeros(out: usize, inp: usize) -> Self {
        Self {
            w: Tensor::zeros(&[out, inp]),
            b: Tensor::zeros(&[out]),
        }
    }

    pub fn bind(&self, g: &mut Graph) -> LinearVars {
        let v = self.bind_all(g);
        LinearVars { w: v[0], b: v[1] }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub w: Var,
    pub b: Var,
}

impl LinearVars {
    pub fn apply(&self, g: &mut Graph, x: Var) -> Var {
        let y = g.matvec(self.w, x);
        g.add(y, self.b)
    }
}
