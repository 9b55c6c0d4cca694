//! Multiplicative LSTM: the memory cell of [`super::lstm`], with every
//! recurrent input routed through the mRNN intermediate
//! `M(t) = (W_mh·H_out(t−1)) ⊙ (W_mi·I(t))`.

use ndarray::Array2;

use super::batch::StepInput;
use super::cell::{Cell, State, Step, StructuralTarget, Weights};
use super::gated;
use super::lstm::{into_step, values, GATES};
use super::ops::*;
use crate::params::Layout;

pub(crate) struct MlstmCell {
    hidden: usize,
    hi: usize,
    hm: usize,
    gate_i: [usize; 3],
    gate_m: [usize; 3],
    mi: usize,
    mh: usize,
    oh: usize,
    biases: Option<[usize; 4]>,
    bo: Option<usize>,
}

const CHI: usize = 0;
const XI: usize = 1;
const M: usize = 2;
const CELL: usize = 3;

impl MlstmCell {
    pub fn new(layout: &Layout, hidden: usize) -> Self {
        let gate = |suffix: &str| GATES.map(|g| layout.expect(&format!("W_{g}_{suffix}")));
        MlstmCell {
            hidden,
            hi: layout.expect("W_hi"),
            hm: layout.expect("W_hm"),
            gate_i: gate("i"),
            gate_m: gate("m"),
            mi: layout.expect("W_mi"),
            mh: layout.expect("W_mh"),
            oh: layout.expect("W_oh"),
            biases: layout
                .index_of("B_in")
                .map(|_| ["B_in", "B_omega", "B_phi", "B_rho"].map(|n| layout.expect(n))),
            bo: layout.index_of("B_o"),
        }
    }

    fn wi(&self) -> [usize; 4] {
        [self.hi, self.gate_i[0], self.gate_i[1], self.gate_i[2]]
    }

    fn wm(&self) -> [usize; 4] {
        [self.hm, self.gate_m[0], self.gate_m[1], self.gate_m[2]]
    }
}

impl Cell for MlstmCell {
    fn state_rows(&self) -> Vec<usize> {
        vec![self.hidden, self.hidden]
    }

    fn aux_names(&self) -> Vec<String> {
        ["chi", "xi", "m", "h_in", "omega", "phi", "rho"]
            .map(String::from)
            .to_vec()
    }

    fn step(&self, w: &Weights, prev: &State, x: &StepInput) -> Step {
        let chi = in_mul(&w[self.mi], x);
        let xi = w[self.mh].dot(&prev.0[0]);
        let m = hadamard(&chi, &xi);
        let (wi, wm) = (self.wi(), self.wm());
        let [h_in, gw, gf, gr] = [0, 1, 2, 3].map(|k| {
            let mut a = in_mul(&w[wi[k]], x);
            mul_acc(&mut a, &w[wm[k]], &m);
            if let Some(bs) = self.biases {
                add_bias(&mut a, &w[bs[k]]);
            }
            a
        });
        let vals = gated::forward(h_in, gw, gf, gr, &prev.0[1]);
        let mut z = w[self.oh].dot(&vals.out);
        if let Some(bo) = self.bo {
            add_bias(&mut z, &w[bo]);
        }
        into_step(vals, vec![chi, xi, m], z)
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
        let (chi, xi, m) = (&step.aux[CHI], &step.aux[XI], &step.aux[M]);
        let rchi = in_mul(&v[self.mi], x);
        let mut rxi = v[self.mh].dot(&prev.0[0]);
        mul_acc(&mut rxi, &w[self.mh], &rprev.0[0]);
        let rm = hadamard(&rchi, xi) + hadamard(chi, &rxi);
        let (wi, wm) = (self.wi(), self.wm());
        let [r_hin, rw, rf, rr] = [0, 1, 2, 3].map(|k| {
            let mut a = in_mul(&v[wi[k]], x);
            mul_acc(&mut a, &v[wm[k]], m);
            mul_acc(&mut a, &w[wm[k]], &rm);
            if let Some(bs) = self.biases {
                add_bias(&mut a, &v[bs[k]]);
            }
            a
        });
        let vals = values(step, CELL);
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
        let (chi, xi, m) = (&step.aux[CHI], &step.aux[XI], &step.aux[M]);
        let vals = values(step, CELL);
        outer_acc(&mut g[self.oh], dz, &vals.out);
        if let Some(bo) = self.bo {
            bias_grad(&mut g[bo], dz);
        }
        let mut d_out = std::mem::take(&mut carry.0[0]);
        tmul_acc(&mut d_out, &w[self.oh], dz);
        let d_state = std::mem::take(&mut carry.0[1]);
        let grads = gated::backward(&vals, &prev.0[1], d_out, d_state);
        let pre_grads = [&grads.h_in, &grads.omega, &grads.phi, &grads.rho];
        let (wi, wm) = (self.wi(), self.wm());
        let mut dm = Array2::zeros(m.raw_dim());
        for k in 0..4 {
            in_grad(&mut g[wi[k]], pre_grads[k], x);
            outer_acc(&mut g[wm[k]], pre_grads[k], m);
            if let Some(bs) = self.biases {
                bias_grad(&mut g[bs[k]], pre_grads[k]);
            }
            tmul_acc(&mut dm, &w[wm[k]], pre_grads[k]);
        }
        let dchi = hadamard(&dm, xi);
        let dxi = hadamard(&dm, chi);
        in_grad(&mut g[self.mi], &dchi, x);
        outer_acc(&mut g[self.mh], &dxi, &prev.0[0]);
        carry.0[0] = tmul(&w[self.mh], &dxi);
        carry.0[1] = grads.prev_state;
    }

    fn damped_parts(&self, target: StructuralTarget) -> Vec<usize> {
        match target {
            StructuralTarget::HiddenOutput => vec![0],
            StructuralTarget::CellState => vec![1],
        }
    }
}
