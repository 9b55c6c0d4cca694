//! Memory-cell arithmetic shared by the LSTM and multiplicative LSTM.
//!
//! ```text
//! H_state(t) = φ(t) ⊙ H_state(t−1) + ω(t) ⊙ H_in(t)
//! H_out(t)   = tanh(H_state(t) ⊙ ρ(t))
//! ```
//!
//! `H_in` is not squashed, and the output gate sits inside the tanh.

use ndarray::{Array2, Zip};

use super::ops::{sigmoid, sigmoid_back, tanh_back};

/// Post-activation quantities of one cell update.
pub(crate) struct CellValues {
    pub h_in: Array2<f64>,
    pub omega: Array2<f64>,
    pub phi: Array2<f64>,
    pub rho: Array2<f64>,
    pub state: Array2<f64>,
    pub out: Array2<f64>,
}

/// `φ ⊙ prev + ω ⊙ h_in`.
pub fn cell_state(prev: &Array2<f64>, omega: &Array2<f64>, phi: &Array2<f64>, h_in: &Array2<f64>) -> Array2<f64> {
    let mut c = phi * prev;
    Zip::from(&mut c).and(omega).and(h_in).for_each(|c, &w, &x| *c += w * x);
    c
}

/// Squashes gate pre-activations and updates the cell.
pub(crate) fn forward(
    h_in: Array2<f64>,
    omega_pre: Array2<f64>,
    phi_pre: Array2<f64>,
    rho_pre: Array2<f64>,
    prev_state: &Array2<f64>,
) -> CellValues {
    let omega = omega_pre.mapv_into(sigmoid);
    let phi = phi_pre.mapv_into(sigmoid);
    let rho = rho_pre.mapv_into(sigmoid);
    let state = cell_state(prev_state, &omega, &phi, &h_in);
    let out = (&state * &rho).mapv_into(f64::tanh);
    CellValues {
        h_in,
        omega,
        phi,
        rho,
        state,
        out,
    }
}

/// Derivatives with respect to the cell's pre-activations.
pub(crate) struct CellGrads {
    pub h_in: Array2<f64>,
    pub omega: Array2<f64>,
    pub phi: Array2<f64>,
    pub rho: Array2<f64>,
    /// ∂E/∂H_state(t−1).
    pub prev_state: Array2<f64>,
}

/// Back-propagates through the cell. `d_out` is ∂E/∂H_out(t) and `d_state`
/// the ∂E/∂H_state(t) arriving from later timesteps.
pub(crate) fn backward(
    vals: &CellValues,
    prev_state: &Array2<f64>,
    mut d_out: Array2<f64>,
    d_state: Array2<f64>,
) -> CellGrads {
    tanh_back(&mut d_out, &vals.out);
    let d_zeta = d_out;
    let mut d_rho = &d_zeta * &vals.state;
    sigmoid_back(&mut d_rho, &vals.rho);
    let mut dc = d_state;
    Zip::from(&mut dc)
        .and(&d_zeta)
        .and(&vals.rho)
        .for_each(|dc, &dz, &r| *dc += dz * r);
    let mut d_phi = prev_state * &dc;
    sigmoid_back(&mut d_phi, &vals.phi);
    let mut d_omega = &vals.h_in * &dc;
    sigmoid_back(&mut d_omega, &vals.omega);
    let d_hin = &vals.omega * &dc;
    let prev = &vals.phi * &dc;
    CellGrads {
        h_in: d_hin,
        omega: d_omega,
        phi: d_phi,
        rho: d_rho,
        prev_state: prev,
    }
}

/// R-forward through the cell. Gate arguments are directional derivatives of
/// the gate pre-activations. Returns `(R(H_out), R(H_state))`.
pub(crate) fn r_forward(
    vals: &CellValues,
    prev_state: &Array2<f64>,
    r_hin: &Array2<f64>,
    mut r_omega: Array2<f64>,
    mut r_phi: Array2<f64>,
    mut r_rho: Array2<f64>,
    r_prev_state: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    sigmoid_back(&mut r_omega, &vals.omega);
    sigmoid_back(&mut r_phi, &vals.phi);
    sigmoid_back(&mut r_rho, &vals.rho);
    let mut rc = &vals.h_in * &r_omega;
    Zip::from(&mut rc)
        .and(r_hin)
        .and(&vals.omega)
        .and(&r_phi)
        .and(prev_state)
        .for_each(|rc, &rx, &w, &rf, &cp| *rc += rx * w + rf * cp);
    Zip::from(&mut rc)
        .and(&vals.phi)
        .and(r_prev_state)
        .for_each(|rc, &f, &rcp| *rc += f * rcp);
    let mut rzeta = &rc * &vals.rho;
    Zip::from(&mut rzeta)
        .and(&vals.state)
        .and(&r_rho)
        .for_each(|rz, &c, &rr| *rz += c * rr);
    tanh_back(&mut rzeta, &vals.out);
    (rzeta, rc)
}
