//! Standard tanh RNN: `H(t) = tanh(B_h + W_hi·I(t) + W_hh·H(t−1))`,
//! `O(t) = softmax(W_oh·H(t))`.

use ndarray::Array2;

use super::batch::StepInput;
use super::cell::{Cell, State, Step, StructuralTarget, Weights};
use super::ops::*;
use crate::params::Layout;

pub(crate) struct RnnCell {
    hidden: usize,
    hi: usize,
    hh: usize,
    oh: usize,
    bh: usize,
    bo: Option<usize>,
}

impl RnnCell {
    pub fn new(layout: &Layout, hidden: usize) -> Self {
        RnnCell {
            hidden,
            hi: layout.expect("W_hi"),
            hh: layout.expect("W_hh"),
            oh: layout.expect("W_oh"),
            bh: layout.expect("B_h"),
            bo: layout.index_of("B_o"),
        }
    }
}

impl Cell for RnnCell {
    fn state_rows(&self) -> Vec<usize> {
        vec![self.hidden]
    }

    fn aux_names(&self) -> Vec<String> {
        Vec::new()
    }

    fn step(&self, w: &Weights, prev: &State, x: &StepInput) -> Step {
        let mut a = in_mul(&w[self.hi], x);
        mul_acc(&mut a, &w[self.hh], &prev.0[0]);
        add_bias(&mut a, &w[self.bh]);
        let h = a.mapv_into(f64::tanh);
        let mut z = w[self.oh].dot(&h);
        if let Some(bo) = self.bo {
            add_bias(&mut z, &w[bo]);
        }
        Step {
            state: State(vec![h]),
            logits: z,
            aux: Vec::new(),
        }
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
        let h = &step.state.0[0];
        let mut ra = in_mul(&v[self.hi], x);
        mul_acc(&mut ra, &v[self.hh], &prev.0[0]);
        mul_acc(&mut ra, &w[self.hh], &rprev.0[0]);
        add_bias(&mut ra, &v[self.bh]);
        tanh_back(&mut ra, h);
        let mut rz = v[self.oh].dot(h);
        mul_acc(&mut rz, &w[self.oh], &ra);
        if let Some(bo) = self.bo {
            add_bias(&mut rz, &v[bo]);
        }
        (State(vec![ra]), rz)
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
        let h = &step.state.0[0];
        outer_acc(&mut g[self.oh], dz, h);
        if let Some(bo) = self.bo {
            bias_grad(&mut g[bo], dz);
        }
        let mut da = std::mem::take(&mut carry.0[0]);
        tmul_acc(&mut da, &w[self.oh], dz);
        tanh_back(&mut da, h);
        bias_grad(&mut g[self.bh], &da);
        in_grad(&mut g[self.hi], &da, x);
        outer_acc(&mut g[self.hh], &da, &prev.0[0]);
        carry.0[0] = tmul(&w[self.hh], &da);
    }

    fn damped_parts(&self, _: StructuralTarget) -> Vec<usize> {
        vec![0]
    }
}
