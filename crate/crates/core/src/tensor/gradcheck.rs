use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Settings for a central finite-difference gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub tolerance: f64,
    /// Check at most this many entries per tensor (sampled without
    /// replacement); `None` checks all of them.
    pub max_entries_per_tensor: Option<usize>,
    /// Relative error is `|a − n| / max(|a|, |n|, denom_floor)`.
    pub denom_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            tolerance: 1e-5,
            max_entries_per_tensor: None,
            denom_floor: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Flat index of the entry with the largest error.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.max_rel_error < self.tolerance)
    }

    pub fn failures(&self) -> impl Iterator<Item = &TensorCheck> {
        self.tensors
            .iter()
            .filter(|t| !(t.max_rel_error < self.tolerance))
    }

    pub fn max_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for t in &self.tensors {
            let mark = if t.max_rel_error < self.tolerance { "ok  " } else { "FAIL" };
            writeln!(
                f,
                "{mark} {:<24} checked={:<5} max_rel={:.3e} at [{}] analytic={:.6e} numeric={:.6e}",
                t.name, t.checked, t.max_rel_error, t.worst_index, t.analytic, t.numeric
            )?;
        }
        Ok(())
    }
}

fn eval<F>(f: &F, store: &ParamStore) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(Error::Shape(format!("grad_check function must return a scalar, got {:?}", v.shape())));
    }
    Ok(v.data()[0])
}

/// Analytic gradients of `f` at `point` via one forward/backward pass.
pub fn analytic_gradients<F>(f: &F, point: &ParamStore) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut store = point.clone();
    store.zero_grads();
    let mut tape = Tape::new();
    let out = f(&mut tape, &store)?;
    tape.backward(out, &mut store)?;
    Ok(store
        .iter()
        .map(|p| p.tensor.grad.clone().unwrap_or_else(|| vec![0.0; p.tensor.len()]))
        .collect())
}

/// Compares supplied gradients (one vector per parameter, store order)
/// against central differences with step `1e-6·max(1, |x|)`.
pub fn compare_gradients<F>(
    f: &F,
    point: &ParamStore,
    analytic: &[Vec<f64>],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    for (pid, grad) in analytic.iter().enumerate() {
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "tensor `{}` entry {i}: analytic gradient {}",
                point.by_id(pid).name,
                grad[i]
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = point.clone();
    work.clear_state();
    let base = eval(f, &work)?;
    if !base.is_finite() {
        return Err(Error::NonFinite(format!("function value {base} at the check point")));
    }
    let mut tensors = Vec::with_capacity(point.len());
    for (pid, grad) in analytic.iter().enumerate() {
        let name = point.by_id(pid).name.clone();
        let n = point.by_id(pid).tensor.len();
        if grad.len() != n {
            return Err(Error::Shape(format!(
                "analytic gradient for `{name}` has {} entries, expected {n}",
                grad.len()
            )));
        }
        let entries: Vec<usize> = match opts.max_entries_per_tensor {
            Some(m) if m < n => {
                let mut v = sample(&mut rng, n, m).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        let mut check = TensorCheck {
            name: name.clone(),
            checked: entries.len(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in entries {
            let x0 = point.by_id(pid).tensor.data()[i];
            let h = 1e-6 * x0.abs().max(1.0);
            work.by_id_mut(pid).tensor.data_mut()[i] = x0 + h;
            let fp = eval(f, &work)?;
            work.by_id_mut(pid).tensor.data_mut()[i] = x0 - h;
            let fm = eval(f, &work)?;
            work.by_id_mut(pid).tensor.data_mut()[i] = x0;
            let numeric = (fp - fm) / (2.0 * h);
            let a = grad[i];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::NonFinite(format!(
                    "tensor `{name}` entry {i}: analytic {a}, numeric {numeric}"
                )));
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.denom_floor);
            if rel > check.max_rel_error || check.checked == 0 {
                check.max_rel_error = rel;
                check.worst_index = i;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        tensors.push(check);
    }
    Ok(GradCheckReport {
        tolerance: opts.tolerance,
        tensors,
    })
}

/// Finite-difference check of the tape's gradients for every parameter in
/// `point`. `f` must build a deterministic scalar on the given tape.
pub fn grad_check<F>(f: F, point: &ParamStore, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let analytic = analytic_gradients(&f, point)?;
    compare_gradients(&f, point, &analytic, opts)
}
