//! Small dense kernels shared by the cells. Matrices hold one column per
//! sequence.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, Zip};

use super::batch::StepInput;

/// `W · I(t)`. Symbol inputs are one-hot, so the product is a column gather.
pub fn in_mul(w: &ArrayView2<f64>, x: &StepInput) -> Array2<f64> {
    match x {
        StepInput::Symbols(ids) => {
            let mut out = Array2::zeros((w.nrows(), ids.len()));
            for (j, &id) in ids.iter().enumerate() {
                out.column_mut(j).assign(&w.column(id as usize));
            }
            out
        }
        StepInput::Dense(xm) => w.dot(xm),
    }
}

/// `g += d · I(t)ᵀ`.
pub fn in_grad(g: &mut Array2<f64>, d: &Array2<f64>, x: &StepInput) {
    match x {
        StepInput::Symbols(ids) => {
            for (j, &id) in ids.iter().enumerate() {
                g.column_mut(id as usize).scaled_add(1.0, &d.column(j));
            }
        }
        StepInput::Dense(xm) => general_mat_mul(1.0, d, &xm.t(), 1.0, g),
    }
}

/// `out += W · a`.
pub fn mul_acc(out: &mut Array2<f64>, w: &ArrayView2<f64>, a: &Array2<f64>) {
    general_mat_mul(1.0, w, a, 1.0, out);
}

/// `out += Wᵀ · a`.
pub fn tmul_acc(out: &mut Array2<f64>, w: &ArrayView2<f64>, a: &Array2<f64>) {
    general_mat_mul(1.0, &w.t(), a, 1.0, out);
}

/// `Wᵀ · a`.
pub fn tmul(w: &ArrayView2<f64>, a: &Array2<f64>) -> Array2<f64> {
    w.t().dot(a)
}

/// `g += d · aᵀ`.
pub fn outer_acc(g: &mut Array2<f64>, d: &Array2<f64>, a: &Array2<f64>) {
    general_mat_mul(1.0, d, &a.t(), 1.0, g);
}

/// Adds a `rows × 1` bias column to every column of `out`.
pub fn add_bias(out: &mut Array2<f64>, b: &ArrayView2<f64>) {
    *out += b;
}

/// `g[:, 0] += Σ_j d[:, j]`.
pub fn bias_grad(g: &mut Array2<f64>, d: &Array2<f64>) {
    for (gi, row) in g.column_mut(0).iter_mut().zip(d.rows()) {
        *gi += row.sum();
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `a ⊙ b`.
pub fn hadamard(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    a * b
}

/// `d ⊙ (1 − y²)` for `y = tanh(·)`, in place on `d`.
pub fn tanh_back(d: &mut Array2<f64>, y: &Array2<f64>) {
    Zip::from(d).and(y).for_each(|d, &y| *d *= 1.0 - y * y);
}

/// `d ⊙ y ⊙ (1 − y)` for `y = sigmoid(·)`, in place on `d`.
pub fn sigmoid_back(d: &mut Array2<f64>, y: &Array2<f64>) {
    Zip::from(d).and(y).for_each(|d, &y| *d *= y * (1.0 - y));
}
