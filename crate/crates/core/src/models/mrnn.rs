//! Multiplicative RNN. The recurrent matrix is factored through an
//! input-dependent diagonal: `M(t) = (W_mi·I(t)) ⊙ (W_mh·H(t−1))`,
//! `H(t) = tanh(B_h + W_hi·I(t) + W_hm·M(t))`.

use ndarray::Array2;

use super::batch::StepInput;
use super::cell::{Cell, State, Step, StructuralTarget, Weights};
use super::ops::*;
use crate::params::Layout;

pub(crate) struct MrnnCell {
    hidden: usize,
    hi: usize,
    mi: usize,
    mh: usize,
    hm: usize,
    oh: usize,
    bh: usize,
    bo: Option<usize>,
}

// aux layout
const CHI: usize = 0;
const XI: usize = 1;
const M: usize = 2;

impl MrnnCell {
    pub fn new(layout: &Layout, hidden: usize) -> Self {
        MrnnCell {
            hidden,
            hi: layout.expect("W_hi"),
            mi: layout.expect("W_mi"),
            mh: layout.expect("W_mh"),
            hm: layout.expect("W_hm"),
            oh: layout.expect("W_oh"),
            bh: layout.expect("B_h"),
            bo: layout.index_of("B_o"),
        }
    }
}

impl Cell for MrnnCell {
    fn state_rows(&self) -> Vec<usize> {
        vec![self.hidden]
    }

    fn aux_names(&self) -> Vec<String> {
        vec!["chi".into(), "xi".into(), "m".into()]
    }

    fn step(&self, w: &Weights, prev: &State, x: &StepInput) -> Step {
        let chi = in_mul(&w[self.mi], x);
        let xi = w[self.mh].dot(&prev.0[0]);
        let m = hadamard(&chi, &xi);
        let mut a = in_mul(&w[self.hi], x);
        mul_acc(&mut a, &w[self.hm], &m);
        add_bias(&mut a, &w[self.bh]);
        let h = a.mapv_into(f64::tanh);
        let mut z = w[self.oh].dot(&h);
        if let Some(bo) = self.bo {
            add_bias(&mut z, &w[bo]);
        }
        Step {
            state: State(vec![h]),
            logits: z,
            aux: vec![chi, xi, m],
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
        let (chi, xi, m) = (&step.aux[CHI], &step.aux[XI], &step.aux[M]);
        let rchi = in_mul(&v[self.mi], x);
        let mut rxi = v[self.mh].dot(&prev.0[0]);
        mul_acc(&mut rxi, &w[self.mh], &rprev.0[0]);
        let rm = hadamard(&rchi, xi) + hadamard(chi, &rxi);
        let mut ra = in_mul(&v[self.hi], x);
        mul_acc(&mut ra, &v[self.hm], m);
        mul_acc(&mut ra, &w[self.hm], &rm);
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
        let (chi, xi, m) = (&step.aux[CHI], &step.aux[XI], &step.aux[M]);
        outer_acc(&mut g[self.oh], dz, h);
        if let Some(bo) = self.bo {
            bias_grad(&mut g[bo], dz);
        }
        let mut da = std::mem::take(&mut carry.0[0]);
        tmul_acc(&mut da, &w[self.oh], dz);
        tanh_back(&mut da, h);
        bias_grad(&mut g[self.bh], &da);
        in_grad(&mut g[self.hi], &da, x);
        outer_acc(&mut g[self.hm], &da, m);
        let dm = tmul(&w[self.hm], &da);
        let dchi = hadamard(&dm, xi);
        let dxi = hadamard(&dm, chi);
        in_grad(&mut g[self.mi], &dchi, x);
        outer_acc(&mut g[self.mh], &dxi, &prev.0[0]);
        carry.0[0] = tmul(&w[self.mh], &dxi);
    }

    fn damped_parts(&self, _: StructuralTarget) -> Vec<usize> {
        vec![0]
    }
}
