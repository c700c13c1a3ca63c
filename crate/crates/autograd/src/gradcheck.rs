//! Central finite-difference verification of reverse-mode gradients.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{Binder, ParamStore};
use crate::real::Real;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// At most this many elements per parameter are probed (evenly spaced).
    pub max_per_param: usize,
    /// Absolute denominator floor for the relative error.
    pub floor: f64,
    /// Additional floor as a fraction of the tensor's largest gradient;
    /// keeps single-precision roundoff on near-zero entries from dominating.
    pub rel_floor: f64,
}

impl GradCheckOptions {
    pub fn f64() -> Self {
        GradCheckOptions {
            step: 1e-5,
            max_per_param: 64,
            floor: 1e-6,
            rel_floor: 0.0,
        }
    }

    pub fn f32() -> Self {
        GradCheckOptions {
            step: 1e-2,
            max_per_param: 32,
            floor: 1e-3,
            rel_floor: 0.05,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        !self.params.is_empty() && self.params.iter().all(|p| p.max_rel_error < self.tolerance)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().fold(0.0, |m, p| m.max(p.max_rel_error))
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for p in &self.params {
            writeln!(f, "{:<40} n={:<4} max_rel={:.3e}", p.name, p.checked, p.max_rel_error)?;
        }
        write!(
            f,
            "{} (tolerance {:.1e})",
            if self.passed() { "pass" } else { "FAIL" },
            self.tolerance
        )
    }
}

/// Compare analytic gradients of `loss_fn` against central differences for
/// every parameter in `store`.
pub fn grad_check<S, F>(store: &ParamStore<S>, loss_fn: F, tolerance: f64, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    S: Real,
    F: Fn(&mut Graph<S>, &mut Binder<S>) -> Result<Var>,
{
    let eval = |store: &ParamStore<S>| -> Result<f64> {
        let mut g = Graph::new();
        let mut b = Binder::new(store, false);
        let loss = loss_fn(&mut g, &mut b)?;
        Ok(g.value(loss).item().as_f64())
    };

    let mut g = Graph::new();
    let mut binder = Binder::new(store, true);
    let loss = loss_fn(&mut g, &mut binder)?;
    let mut grads = g.backward(loss)?;
    let analytic = binder.gradients(&mut grads);

    let mut probe = store.clone();
    let mut params = Vec::new();
    let names: Vec<String> = store.names().cloned().collect();
    for name in names {
        let n = store.get(&name)?.numel();
        let picks: Vec<usize> = if n <= opts.max_per_param {
            (0..n).collect()
        } else {
            (0..opts.max_per_param).map(|i| i * n / opts.max_per_param).collect()
        };
        let scale = analytic.get(&name)?.max_abs().as_f64();
        let floor = opts.floor.max(opts.rel_floor * scale);
        let mut worst = 0.0f64;
        for &idx in &picks {
            let orig = store.get(&name)?.data()[idx];
            probe.get_mut(&name)?.data_mut()[idx] = orig + S::c(opts.step);
            let up = eval(&probe)?;
            probe.get_mut(&name)?.data_mut()[idx] = orig - S::c(opts.step);
            let down = eval(&probe)?;
            probe.get_mut(&name)?.data_mut()[idx] = orig;
            // the realized step, not the nominal one, matters in low precision
            let h = (orig + S::c(opts.step)).as_f64() - (orig - S::c(opts.step)).as_f64();
            let numeric = (up - down) / h;
            let a = analytic.get(&name)?.data()[idx].as_f64();
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
        }
        params.push(ParamCheck {
            name,
            checked: picks.len(),
            max_rel_error: worst,
        });
    }
    Ok(GradCheckReport { tolerance, params })
}
