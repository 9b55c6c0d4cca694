//! Brute-force oracles: finite differences, dense Gauss–Newton matrices, a
//! dense direct solver and a loop-per-element forward pass. None of them
//! touch the analytic derivative code they are used to check.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;

use crate::config::{Architecture, OutputMode};
use crate::error::{Error, Result};
use crate::models::{Batch, EvalOptions, Inputs, Model, StructuralTarget};
use crate::parallel;

/// Largest parameter count [`fd_gradient`] accepts.
pub const FD_GRADIENT_LIMIT: usize = 5000;
/// Largest parameter count [`dense_gauss_newton`] accepts.
pub const DENSE_CURVATURE_LIMIT: usize = 500;
/// Largest dimension [`cg_direct_solve`] accepts.
pub const DIRECT_SOLVE_LIMIT: usize = 500;
/// Floor of the relative-error denominator.
pub const RELATIVE_FLOOR: f64 = 1e-8;

/// `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_FLOOR)
}

/// `‖a − b‖ / max(‖b‖, 1e-8)`.
pub fn relative_norm_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(RELATIVE_FLOOR)
}

/// Outcome of comparing an analytic quantity with its oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub quantity: String,
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
    /// Coordinate with the largest relative error.
    pub worst_index: usize,
    pub tolerance: f64,
    pub passed: bool,
}

impl OracleReport {
    /// Componentwise comparison of `analytic` against `oracle`.
    pub fn compare(quantity: impl Into<String>, analytic: &[f64], oracle: &[f64], tolerance: f64) -> Self {
        assert_eq!(analytic.len(), oracle.len(), "compared vectors differ in length");
        let mut max = 0.0;
        let mut worst = 0;
        let mut sum = 0.0;
        for (i, (&a, &b)) in analytic.iter().zip(oracle).enumerate() {
            let e = relative_error(a, b);
            sum += e;
            // NaN compares false; make it the worst coordinate.
            if e > max || e.is_nan() {
                max = e;
                worst = i;
            }
        }
        let mean = if analytic.is_empty() {
            0.0
        } else {
            sum / analytic.len() as f64
        };
        OracleReport {
            quantity: quantity.into(),
            max_rel_error: max,
            mean_rel_error: mean,
            worst_index: worst,
            tolerance,
            passed: max < tolerance,
        }
    }

    /// Tab-separated: quantity, max, mean, worst index, tolerance, PASS/FAIL.
    pub fn tsv(&self) -> String {
        format!(
            "{}\t{:.3e}\t{:.3e}\t{}\t{:.1e}\t{}",
            self.quantity,
            self.max_rel_error,
            self.mean_rel_error,
            self.worst_index,
            self.tolerance,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

impl OracleReport {
    /// Summary of per-probe errors (e.g. relative norm errors of matrix-vector
    /// products); `worst_index` is the probe number.
    pub fn from_errors(quantity: impl Into<String>, errors: &[f64], tolerance: f64) -> Self {
        let mut max = 0.0;
        let mut worst = 0;
        for (i, &e) in errors.iter().enumerate() {
            if e > max || e.is_nan() {
                max = e;
                worst = i;
            }
        }
        let mean = if errors.is_empty() {
            0.0
        } else {
            errors.iter().sum::<f64>() / errors.len() as f64
        };
        OracleReport {
            quantity: quantity.into(),
            max_rel_error: max,
            mean_rel_error: mean,
            worst_index: worst,
            tolerance,
            passed: max < tolerance,
        }
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<28} max rel err {:.3e} (coord {}), mean {:.3e}, tol {:.1e}: {}",
            self.quantity,
            self.max_rel_error,
            self.worst_index,
            self.mean_rel_error,
            self.tolerance,
            if self.passed { "pass" } else { "FAIL" }
        )
    }
}

fn guard(what: &str, got: usize, limit: usize) -> Result<()> {
    if got > limit {
        return Err(Error::CostGuard(format!(
            "{what} needs {got} parameters but is limited to {limit}; shrink hidden sizes or vocabulary"
        )));
    }
    Ok(())
}

/// Central differences of `f` at `x`, one coordinate per work item.
pub fn central_differences<F>(x: &[f64], h: f64, f: F) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync + Send,
{
    if !(h > 0.0) {
        return Err(Error::config("finite-difference step must be positive"));
    }
    parallel::try_map_indexed(x.len(), |i| {
        let mut probe = x.to_vec();
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        Ok((up - down) / (2.0 * h))
    })
}

/// Finite-difference gradient of the mean batch loss.
pub fn fd_gradient(model: &Model, theta: &[f64], batch: &Batch, h: f64) -> Result<Vec<f64>> {
    guard("fd_gradient", theta.len(), FD_GRADIENT_LIMIT)?;
    central_differences(theta, h, |t| model.loss(t, batch, EvalOptions::default()))
}

/// Row-major matrix of finite-difference derivatives of `f(θ)` (length
/// `m`) with respect to every coordinate of `θ`: `m × |θ|`.
fn fd_jacobian<F>(theta: &[f64], h: f64, f: F) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync + Send,
{
    let cols = parallel::try_map_indexed(theta.len(), |i| {
        let mut probe = theta.to_vec();
        probe[i] = theta[i] + h;
        let up = f(&probe)?;
        probe[i] = theta[i] - h;
        let down = f(&probe)?;
        Ok::<_, Error>(
            up.iter()
                .zip(&down)
                .map(|(u, d)| (u - d) / (2.0 * h))
                .collect::<Vec<_>>(),
        )
    })?;
    let rows = cols.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows, theta.len(), |r, c| cols[c][r]))
}

fn stacked(mats: impl Iterator<Item = Array2<f64>>) -> Vec<f64> {
    mats.flat_map(|m| m.into_iter()).collect()
}

/// Finite-difference Jacobian of every logit `z(t)` (timestep-major, then
/// row-major within a timestep) with respect to `θ`.
pub fn fd_output_jacobian(model: &Model, theta: &[f64], batch: &Batch, h: f64) -> Result<DMatrix<f64>> {
    fd_jacobian(theta, h, |t| {
        let fwd = model.forward(t, batch, EvalOptions::default())?;
        Ok(stacked(fwd.cache.steps.into_iter().map(|s| s.logits)))
    })
}

/// Finite-difference Jacobian of the network outputs `O(t)` (probabilities
/// for softmax models).
pub fn fd_probability_jacobian(model: &Model, theta: &[f64], batch: &Batch, h: f64) -> Result<DMatrix<f64>> {
    fd_jacobian(theta, h, |t| {
        let fwd = model.forward(t, batch, EvalOptions::default())?;
        Ok(stacked(fwd.cache.outputs.into_iter()))
    })
}

/// Finite-difference Jacobian of the damped recurrent state parts.
pub fn fd_hidden_jacobian(
    model: &Model,
    theta: &[f64],
    batch: &Batch,
    target: StructuralTarget,
    h: f64,
) -> Result<DMatrix<f64>> {
    let parts = model.damped_parts(target);
    fd_jacobian(theta, h, |t| {
        let fwd = model.forward(t, batch, EvalOptions::default())?;
        Ok(stacked(
            fwd.cache
                .steps
                .into_iter()
                .flat_map(|s| parts.iter().map(move |&p| s.state.0[p].clone())),
        ))
    })
}

/// Dense `JᵀHσJ/N + μ·J_hᵀJ_h/N + λI`, with both Jacobians taken by central
/// differences and `Hσ` assembled explicitly per target column.
#[allow(clippy::too_many_arguments)]
pub fn dense_gauss_newton(
    model: &Model,
    theta: &[f64],
    batch: &Batch,
    mu: f64,
    lambda: f64,
    target: StructuralTarget,
    h: f64,
) -> Result<DMatrix<f64>> {
    let p = theta.len();
    guard("dense_gauss_newton", p, DENSE_CURVATURE_LIMIT)?;
    let count = batch.target_count().max(1) as f64;
    let o = model.config().output_width();
    let n = batch.sequences;
    let j = fd_output_jacobian(model, theta, batch, h)?;
    let fwd = model.forward(theta, batch, EvalOptions::default())?;
    let mut g = DMatrix::<f64>::zeros(p, p);
    for t in 0..batch.steps {
        if !batch.has_target(t) {
            continue;
        }
        let probs = &fwd.cache.outputs[t];
        for col in 0..n {
            let hs = match model.config().output_mode {
                OutputMode::SoftmaxXent => DMatrix::from_fn(o, o, |a, b| {
                    let pa = probs[[a, col]];
                    let d = if a == b { pa } else { 0.0 };
                    d - pa * probs[[b, col]]
                }),
                OutputMode::LinearMse => DMatrix::identity(o, o),
            };
            // Logit (a, col) of step t sits at row t·o·n + a·n + col.
            let rows: Vec<usize> = (0..o).map(|a| t * o * n + a * n + col).collect();
            let jt = j.select_rows(&rows);
            g += jt.transpose() * hs * jt;
        }
    }
    g /= count;
    if mu != 0.0 {
        let jh = fd_hidden_jacobian(model, theta, batch, target, h)?;
        g += (jh.transpose() * jh) * (mu / count);
    }
    for i in 0..p {
        g[(i, i)] += lambda;
    }
    Ok(g)
}

/// Solves `A·x = −b` by Cholesky factorization.
pub fn cg_direct_solve(a: &DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    if a.nrows() != a.ncols() || a.nrows() != b.len() {
        return Err(Error::Dimension {
            context: "direct solve",
            expected: a.nrows(),
            got: b.len(),
        });
    }
    if a.nrows() > DIRECT_SOLVE_LIMIT {
        return Err(Error::CostGuard(format!(
            "direct solve of dimension {} exceeds {DIRECT_SOLVE_LIMIT}",
            a.nrows()
        )));
    }
    let chol = a
        .clone()
        .cholesky()
        .ok_or(Error::Factorization("matrix is not symmetric positive definite"))?;
    let rhs = -DVector::from_column_slice(b);
    Ok(chol.solve(&rhs).iter().copied().collect())
}

/// Applies a dense matrix to a vector.
pub fn dense_apply(a: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (a * DVector::from_column_slice(v)).iter().copied().collect()
}

/// Loop-per-element forward pass returning the logits `z(t)` for every
/// architecture, written without the matrix kernels of the models module.
pub fn reference_logits(model: &Model, theta: &[f64], batch: &Batch) -> Result<Vec<Array2<f64>>> {
    batch.validate(model.config())?;
    model.layout().check_len("reference parameters", theta.len())?;
    let r = Reference { model, theta };
    let config = model.config();
    let o = config.output_width();
    let mut out = vec![Array2::zeros((o, batch.sequences)); batch.steps];
    for j in 0..batch.sequences {
        let xs: Vec<Vec<f64>> = (0..batch.steps).map(|t| r.input(batch, t, j)).collect();
        let zs = match config.architecture {
            Architecture::Rnn => r.rnn(&xs),
            Architecture::Mrnn => r.mrnn(&xs),
            Architecture::Lstm | Architecture::Mlstm => r.lstm(&xs),
            Architecture::StackedMrnn => r.stacked(&xs),
        };
        for (t, z) in zs.into_iter().enumerate() {
            for a in 0..o {
                out[t][[a, j]] = z[a];
            }
        }
    }
    Ok(out)
}

struct Reference<'a> {
    model: &'a Model,
    theta: &'a [f64],
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Reference<'_> {
    fn input(&self, batch: &Batch, t: usize, j: usize) -> Vec<f64> {
        let v = self.model.config().vocab_size;
        match &batch.inputs {
            Inputs::Symbols(ids) => {
                let mut x = vec![0.0; v];
                x[ids[t * batch.sequences + j] as usize] = 1.0;
                x
            }
            Inputs::Dense(m) => (0..v).map(|i| m[t][[i, j]]).collect(),
        }
    }

    /// `W·x` for block `name`, or zeros of `rows` when the block is absent.
    fn apply(&self, name: &str, x: &[f64]) -> Vec<f64> {
        let b = self
            .model
            .layout()
            .block(name)
            .unwrap_or_else(|| panic!("reference evaluator needs block `{name}`"));
        assert_eq!(b.cols, x.len(), "shape of {name}");
        let w = &self.theta[b.range()];
        let mut y = vec![0.0; b.rows];
        for (r, yr) in y.iter_mut().enumerate() {
            for (c, xc) in x.iter().enumerate() {
                *yr += w[r * b.cols + c] * xc;
            }
        }
        y
    }

    fn bias(&self, name: &str, rows: usize) -> Vec<f64> {
        match self.model.layout().block(name) {
            Some(b) => self.theta[b.range()].to_vec(),
            None => vec![0.0; rows],
        }
    }

    fn output(&self, hs: &[(&str, &[f64])]) -> Vec<f64> {
        let o = self.model.config().output_width();
        let mut z = self.bias("B_o", o);
        for (name, h) in hs {
            for (zi, v) in z.iter_mut().zip(self.apply(name, h)) {
                *zi += v;
            }
        }
        z
    }

    fn rnn(&self, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let h = self.model.config().hidden();
        let mut hp = vec![0.0; h];
        let bh = self.bias("B_h", h);
        xs.iter()
            .map(|x| {
                let a = self.apply("W_hi", x);
                let r = self.apply("W_hh", &hp);
                hp = (0..h).map(|i| (a[i] + r[i] + bh[i]).tanh()).collect();
                self.output(&[("W_oh", &hp)])
            })
            .collect()
    }

    fn mrnn(&self, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let h = self.model.config().hidden();
        let mut hp = vec![0.0; h];
        let bh = self.bias("B_h", h);
        xs.iter()
            .map(|x| {
                let chi = self.apply("W_mi", x);
                let xi = self.apply("W_mh", &hp);
                let m: Vec<f64> = chi.iter().zip(&xi).map(|(a, b)| a * b).collect();
                let a = self.apply("W_hi", x);
                let b = self.apply("W_hm", &m);
                hp = (0..h).map(|i| (a[i] + b[i] + bh[i]).tanh()).collect();
                self.output(&[("W_oh", &hp)])
            })
            .collect()
    }

    /// LSTM and mLSTM share the cell; they differ in what drives the gates.
    fn lstm(&self, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let multiplicative = self.model.config().architecture == Architecture::Mlstm;
        let h = self.model.config().hidden();
        let mut out = vec![0.0; h];
        let mut state = vec![0.0; h];
        let biases = ["B_in", "B_omega", "B_phi", "B_rho"].map(|b| self.bias(b, h));
        xs.iter()
            .map(|x| {
                let pre = |wi: &str, wr: &str, k: usize, rec: &[f64]| -> Vec<f64> {
                    let a = self.apply(wi, x);
                    let b = self.apply(wr, rec);
                    (0..h).map(|i| a[i] + b[i] + biases[k][i]).collect()
                };
                let (names, rec): ([(&str, &str); 4], Vec<f64>) = if multiplicative {
                    let chi = self.apply("W_mi", x);
                    let xi = self.apply("W_mh", &out);
                    let m = chi.iter().zip(&xi).map(|(a, b)| a * b).collect();
                    (
                        [
                            ("W_hi", "W_hm"),
                            ("W_omega_i", "W_omega_m"),
                            ("W_phi_i", "W_phi_m"),
                            ("W_rho_i", "W_rho_m"),
                        ],
                        m,
                    )
                } else {
                    (
                        [
                            ("W_hi", "W_hh"),
                            ("W_omega_i", "W_omega_h"),
                            ("W_phi_i", "W_phi_h"),
                            ("W_rho_i", "W_rho_h"),
                        ],
                        out.clone(),
                    )
                };
                let h_in = pre(names[0].0, names[0].1, 0, &rec);
                let omega: Vec<f64> = pre(names[1].0, names[1].1, 1, &rec).into_iter().map(sigmoid).collect();
                let phi: Vec<f64> = pre(names[2].0, names[2].1, 2, &rec).into_iter().map(sigmoid).collect();
                let rho: Vec<f64> = pre(names[3].0, names[3].1, 3, &rec).into_iter().map(sigmoid).collect();
                for i in 0..h {
                    state[i] = omega[i] * h_in[i] + state[i] * phi[i];
                    out[i] = (state[i] * rho[i]).tanh();
                }
                self.output(&[("W_oh", &out)])
            })
            .collect()
    }

    fn stacked(&self, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let sizes = self.model.config().hidden_sizes.clone();
        let mut hs: Vec<Vec<f64>> = sizes.iter().map(|&s| vec![0.0; s]).collect();
        xs.iter()
            .map(|x| {
                for l in 0..sizes.len() {
                    let l1 = l + 1;
                    let chi = self.apply(&format!("W_m{l1}i"), x);
                    let xi = self.apply(&format!("W_m{l1}h"), &hs[l]);
                    let m: Vec<f64> = chi.iter().zip(&xi).map(|(a, b)| a * b).collect();
                    let mut a = self.apply(&format!("W_h{l1}i"), x);
                    let b = self.apply(&format!("W_h{l1}m"), &m);
                    let bias = self.bias(&format!("B_h{l1}"), sizes[l]);
                    let below = if l > 0 {
                        self.apply(&format!("W_h{l1}h"), &hs[l - 1])
                    } else {
                        vec![0.0; sizes[l]]
                    };
                    for i in 0..sizes[l] {
                        a[i] = (a[i] + b[i] + bias[i] + below[i]).tanh();
                    }
                    hs[l] = a;
                }
                let names: Vec<String> = (1..=sizes.len()).map(|l| format!("W_o{l}h")).collect();
                let pairs: Vec<(&str, &[f64])> =
                    names.iter().zip(&hs).map(|(n, h)| (n.as_str(), h.as_slice())).collect();
                self.output(&pairs)
            })
            .collect()
    }
}

/// Settings for [`check_model`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    /// Central-difference step.
    pub h: f64,
    pub tolerance: f64,
    /// Random directions for the curvature comparisons.
    pub probes: usize,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            h: 1e-5,
            tolerance: 1e-4,
            probes: 10,
            seed: 0,
        }
    }
}

/// Runs every oracle that fits the model's size at `theta` on `batch`:
/// the gradient against central differences, and, within the dense limit,
/// `G·v` and `G_s·v` (structural target `target`) against dense matrices on
/// random probes. Curvature errors are relative norm errors per probe.
pub fn check_model(
    model: &Model,
    theta: &[f64],
    batch: &Batch,
    target: StructuralTarget,
    opts: CheckOptions,
) -> Result<Vec<OracleReport>> {
    let name = format!(
        "{}/{}",
        model.config().architecture,
        model.config().output_mode.as_str()
    );
    let (g, _) = model.gradient(theta, batch, EvalOptions::default())?;
    let fd = fd_gradient(model, theta, batch, opts.h)?;
    let mut reports = vec![OracleReport::compare(
        format!("{name}/gradient"),
        &g,
        &fd,
        opts.tolerance,
    )];
    if theta.len() > DENSE_CURVATURE_LIMIT {
        return Ok(reports);
    }
    let count = batch.target_count().max(1) as f64;
    let gn = dense_gauss_newton(model, theta, batch, 0.0, 0.0, target, opts.h)?;
    let jh = fd_hidden_jacobian(model, theta, batch, target, opts.h)?;
    let gs = (jh.transpose() * jh) / count;
    let ctx = crate::models::CurvatureContext::new(model, theta, batch, 0.0, 0.0, 1)?.with_structural_target(target);
    let mut rng = crate::rng::Rng::new(opts.seed, 29);
    let (mut gv_err, mut gs_err) = (Vec::new(), Vec::new());
    for _ in 0..opts.probes {
        let v: Vec<f64> = (0..theta.len()).map(|_| rng.normal()).collect();
        gv_err.push(relative_norm_error(&ctx.gv_product(&v)?, &dense_apply(&gn, &v)));
        gs_err.push(relative_norm_error(&ctx.structural_gsv(&v)?, &dense_apply(&gs, &v)));
    }
    reports.push(OracleReport::from_errors(format!("{name}/gv"), &gv_err, opts.tolerance));
    reports.push(OracleReport::from_errors(
        format!("{name}/gsv"),
        &gs_err,
        opts.tolerance,
    ));
    Ok(reports)
}
