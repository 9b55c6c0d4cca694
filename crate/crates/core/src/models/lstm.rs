//! LSTM with input, forget and output gates and no gate biases by default.

use ndarray::Array2;

use super::batch::StepInput;
use super::cell::{Cell, State, Step, StructuralTarget, Weights};
use super::gated::{self, CellValues};
use super::ops::*;
use crate::params::Layout;

pub(crate) struct LstmCell {
    hidden: usize,
    hi: usize,
    hh: usize,
    /// Input/recurrent weights of the ω, φ, ρ gates.
    gate_i: [usize; 3],
    gate_h: [usize; 3],
    oh: usize,
    /// `B_in, B_omega, B_phi, B_rho`.
    biases: Option<[usize; 4]>,
    bo: Option<usize>,
}

pub(crate) const GATES: [&str; 3] = ["omega", "phi", "rho"];

impl LstmCell {
    pub fn new(layout: &Layout, hidden: usize) -> Self {
        let gate = |suffix: &str| GATES.map(|g| layout.expect(&format!("W_{g}_{suffix}")));
        LstmCell {
            hidden,
            hi: layout.expect("W_hi"),
            hh: layout.expect("W_hh"),
            gate_i: gate("i"),
            gate_h: gate("h"),
            oh: layout.expect("W_oh"),
            biases: layout
                .index_of("B_in")
                .map(|_| ["B_in", "B_omega", "B_phi", "B_rho"].map(|n| layout.expect(n))),
            bo: layout.index_of("B_o"),
        }
    }
}

/// Rebuilds the cell values stored in a step's aux list.
pub(crate) fn values(step: &Step, offset: usize) -> CellValues {
    CellValues {
        h_in: step.aux[offset].clone(),
        omega: step.aux[offset + 1].clone(),
        phi: step.aux[offset + 2].clone(),
        rho: step.aux[offset + 3].clone(),
        state: step.state.0[1].clone(),
        out: step.state.0[0].clone(),
    }
}

pub(crate) fn into_step(vals: CellValues, mut aux: Vec<Array2<f64>>, logits: Array2<f64>) -> Step {
    aux.extend([vals.h_in, vals.omega, vals.phi, vals.rho]);
    Step {
        state: State(vec![vals.out, vals.state]),
        logits,
        aux,
    }
}

impl Cell for LstmCell {
    fn state_rows(&self) -> Vec<usize> {
        vec![self.hidden, self.hidden]
    }

    fn aux_names(&self) -> Vec<String> {
        ["h_in", "omega", "phi", "rho"].map(String::from).to_vec()
    }

    fn step(&self, w: &Weights, prev: &State, x: &StepInput) -> Step {
        let hp = &prev.0[0];
        let pre = |wi: usize, wh: usize, b: Option<usize>| {
            let mut a = in_mul(&w[wi], x);
            mul_acc(&mut a, &w[wh], hp);
            if let Some(b) = b {
                add_bias(&mut a, &w[b]);
            }
            a
        };
        let b = |k: usize| self.biases.map(|bs| bs[k]);
        let h_in = pre(self.hi, self.hh, b(0));
        let [gw, gf, gr] = [0, 1, 2].map(|k| pre(self.gate_i[k], self.gate_h[k], b(k + 1)));
        let vals = gated::forward(h_in, gw, gf, gr, &prev.0[1]);
        let mut z = w[self.oh].dot(&vals.out);
        if let Some(bo) = self.bo {
            add_bias(&mut z, &w[bo]);
        }
        into_step(vals, Vec::new(), z)
    }

    fn r_step(
        &self,
        w: &Weights,
        v: &Weights,
        prev: &State,
        rprev: &State,
        x: &StepInput,
        step: &Step,
    ) -> (State, Array2<f64>) {
        let hp = &prev.0[0];
        let rhp = &rprev.0[0];
        let r_pre = |wi: usize, wh: usize, b: Option<usize>| {
            let mut a = in_mul(&v[wi], x);
            mul_acc(&mut a, &v[wh], hp);
            mul_acc(&mut a, &w[wh], rhp);
            if let Some(b) = b {
                add_bias(&mut a, &v[b]);
            }
            a
        };
        let b = |k: usize| self.biases.map(|bs| bs[k]);
        let r_hin = r_pre(self.hi, self.hh, b(0));
        let [rw, rf, rr] = [0, 1, 2].map(|k| r_pre(self.gate_i[k], self.gate_h[k], b(k + 1)));
        let vals = values(step, 0);
        let (rh, rc) = gated::r_forward(&vals, &prev.0[1], &r_hin, rw, rf, rr, &rprev.0[1]);
        let mut rz = v[self.oh].dot(&vals.out);
        mul_acc(&mut rz, &w[self.oh], &rh);
        if let Some(bo) = self.bo {
            add_bias(&mut rz, &v[bo]);
        }
        (State(vec![rh, rc]), rz)
    }

    fn back_step(
        &self,
        w: &Weights,
        g: &mut [Array2<f64>],
        prev: &State,
        x: &StepInput,
        step: &Step,
        dz: &Array2<f64>,
        carry: &mut State,
    ) {
        let vals = values(step, 0);
        let hp = &prev.0[0];
        outer_acc(&mut g[self.oh], dz, &vals.out);
        if let Some(bo) = self.bo {
            bias_grad(&mut g[bo], dz);
        }
        let mut d_out = std::mem::take(&mut carry.0[0]);
        tmul_acc(&mut d_out, &w[self.oh], dz);
        let d_state = std::mem::take(&mut carry.0[1]);
        let grads = gated::backward(&vals, &prev.0[1], d_out, d_state);
        let pre_grads = [&grads.h_in, &grads.omega, &grads.phi, &grads.rho];
        let wi = [self.hi, self.gate_i[0], self.gate_i[1], self.gate_i[2]];
        let wh = [self.hh, self.gate_h[0], self.gate_h[1], self.gate_h[2]];
        let mut d_hp = Array2::zeros(hp.raw_dim());
        for k in 0..4 {
            in_grad(&mut g[wi[k]], pre_grads[k], x);
            outer_acc(&mut g[wh[k]], pre_grads[k], hp);
            if let Some(bs) = self.biases {
                bias_grad(&mut g[bs[k]], pre_grads[k]);
            }
            tmul_acc(&mut d_hp, &w[wh[k]], pre_grads[k]);
        }
        carry.0[0] = d_hp;
        carry.0[1] = grads.prev_state;
    }

    fn damped_parts(&self, target: StructuralTarget) -> Vec<usize> {
        match target {
            StructuralTarget::HiddenOutput => vec![0],
            StructuralTarget::CellState => vec![1],
        }
    }
}
