//! Stacked mRNN with direct input and output connections on every layer:
//!
//! ```text
//! M_l(t) = (W_mli·I(t)) ⊙ (W_mlh·H_l(t−1))
//! H_l(t) = tanh(B_hl + W_hli·I(t) + W_hlm·M_l(t) + W_hlh·H_{l−1}(t))
//! O(t)   = softmax(Σ_l W_olh·H_l(t))
//! ```

use ndarray::Array2;

use super::batch::StepInput;
use super::cell::{Cell, State, Step, StructuralTarget, Weights};
use super::ops::*;
use crate::params::Layout;

struct Layer {
    hidden: usize,
    mi: usize,
    mh: usize,
    hi: usize,
    hm: usize,
    /// Connection from the layer below; absent on the first layer.
    hh: Option<usize>,
    oh: usize,
    bh: usize,
}

pub(crate) struct StackedCell {
    layers: Vec<Layer>,
    bo: Option<usize>,
}

impl StackedCell {
    pub fn new(layout: &Layout, hidden_sizes: &[usize]) -> Self {
        let layers = hidden_sizes
            .iter()
            .enumerate()
            .map(|(l, &hidden)| {
                let l1 = l + 1;
                Layer {
                    hidden,
                    mi: layout.expect(&format!("W_m{l1}i")),
                    mh: layout.expect(&format!("W_m{l1}h")),
                    hi: layout.expect(&format!("W_h{l1}i")),
                    hm: layout.expect(&format!("W_h{l1}m")),
                    hh: layout.index_of(&format!("W_h{l1}h")),
                    oh: layout.expect(&format!("W_o{l1}h")),
                    bh: layout.expect(&format!("B_h{l1}")),
                }
            })
            .collect();
        StackedCell {
            layers,
            bo: layout.index_of("B_o"),
        }
    }
}

impl Cell for StackedCell {
    fn state_rows(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.hidden).collect()
    }

    fn aux_names(&self) -> Vec<String> {
        (1..=self.layers.len())
            .flat_map(|l| [format!("chi{l}"), format!("xi{l}"), format!("m{l}")])
            .collect()
    }

    fn step(&self, w: &Weights, prev: &State, x: &StepInput) -> Step {
        let mut states: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        let mut aux = Vec::with_capacity(3 * self.layers.len());
        let mut z: Option<Array2<f64>> = None;
        for (l, layer) in self.layers.iter().enumerate() {
            let chi = in_mul(&w[layer.mi], x);
            let xi = w[layer.mh].dot(&prev.0[l]);
            let m = hadamard(&chi, &xi);
            let mut a = in_mul(&w[layer.hi], x);
            mul_acc(&mut a, &w[layer.hm], &m);
            if let Some(hh) = layer.hh {
                mul_acc(&mut a, &w[hh], &states[l - 1]);
            }
            add_bias(&mut a, &w[layer.bh]);
            let h = a.mapv_into(f64::tanh);
            match &mut z {
                Some(z) => mul_acc(z, &w[layer.oh], &h),
                None => z = Some(w[layer.oh].dot(&h)),
            }
            aux.extend([chi, xi, m]);
            states.push(h);
        }
        let mut z = z.expect("at least one layer");
        if let Some(bo) = self.bo {
            add_bias(&mut z, &w[bo]);
        }
        Step {
            state: State(states),
            logits: z,
            aux,
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
        let mut rstates: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        let mut rz: Option<Array2<f64>> = None;
        for (l, layer) in self.layers.iter().enumerate() {
            let h = &step.state.0[l];
            let (chi, xi, m) = (&step.aux[3 * l], &step.aux[3 * l + 1], &step.aux[3 * l + 2]);
            let rchi = in_mul(&v[layer.mi], x);
            let mut rxi = v[layer.mh].dot(&prev.0[l]);
            mul_acc(&mut rxi, &w[layer.mh], &rprev.0[l]);
            let rm = hadamard(&rchi, xi) + hadamard(chi, &rxi);
            let mut ra = in_mul(&v[layer.hi], x);
            mul_acc(&mut ra, &v[layer.hm], m);
            mul_acc(&mut ra, &w[layer.hm], &rm);
            if let Some(hh) = layer.hh {
                mul_acc(&mut ra, &v[hh], &step.state.0[l - 1]);
                mul_acc(&mut ra, &w[hh], &rstates[l - 1]);
            }
            add_bias(&mut ra, &v[layer.bh]);
            tanh_back(&mut ra, h);
            let out = rz.get_or_insert_with(|| Array2::zeros((w[layer.oh].nrows(), h.ncols())));
            mul_acc(out, &v[layer.oh], h);
            mul_acc(out, &w[layer.oh], &ra);
            rstates.push(ra);
        }
        let mut rz = rz.expect("at least one layer");
        if let Some(bo) = self.bo {
            add_bias(&mut rz, &v[bo]);
        }
        (State(rstates), rz)
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
        if let Some(bo) = self.bo {
            bias_grad(&mut g[bo], dz);
        }
        // ∂E/∂H_l(t) contributed by layer l+1 at the same timestep.
        let mut from_above: Option<Array2<f64>> = None;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let h = &step.state.0[l];
            let (chi, xi, m) = (&step.aux[3 * l], &step.aux[3 * l + 1], &step.aux[3 * l + 2]);
            outer_acc(&mut g[layer.oh], dz, h);
            let mut da = std::mem::take(&mut carry.0[l]);
            tmul_acc(&mut da, &w[layer.oh], dz);
            if let Some(above) = from_above.take() {
                da += &above;
            }
            tanh_back(&mut da, h);
            bias_grad(&mut g[layer.bh], &da);
            in_grad(&mut g[layer.hi], &da, x);
            outer_acc(&mut g[layer.hm], &da, m);
            if let Some(hh) = layer.hh {
                outer_acc(&mut g[hh], &da, &step.state.0[l - 1]);
                from_above = Some(tmul(&w[hh], &da));
            }
            let dm = tmul(&w[layer.hm], &da);
            let dchi = hadamard(&dm, xi);
            let dxi = hadamard(&dm, chi);
            in_grad(&mut g[layer.mi], &dchi, x);
            outer_acc(&mut g[layer.mh], &dxi, &prev.0[l]);
            carry.0[l] = tmul(&w[layer.mh], &dxi);
        }
    }

    fn damped_parts(&self, _: StructuralTarget) -> Vec<usize> {
        (0..self.layers.len()).collect()
    }
}
