use crate::graph::{Graph, Var};
use crate::params::ParamSet;
use crate::tensor::Result;

/// Denominator floor for relative errors on near-zero gradients.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error per parameter tensor, in registration order.
    pub per_param: Vec<(String, f64)>,
    pub max_rel_error: f64,
    pub checked: usize,
}

impl GradCheckReport {
    /// Largest error over parameters whose name starts with `prefix`.
    pub fn max_for(&self, prefix: &str) -> f64 {
        self.per_param
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, e)| *e)
            .fold(0.0, f64::max)
    }
}

pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Compares analytic gradients of the scalar built by `f` against central
/// differences with step `h_rel * max(1, |theta|)`. At most `max_per_param`
/// evenly spaced entries of each tensor are probed.
pub fn grad_check<F>(
    params: &ParamSet<f64>,
    f: F,
    h_rel: f64,
    max_per_param: usize,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let eval = |ps: &ParamSet<f64>| -> Result<f64> {
        let mut g = Graph::new(ps);
        let out = f(&mut g)?;
        Ok(g.value(out).data[0])
    };
    let analytic = {
        let mut g = Graph::new(params);
        let out = f(&mut g)?;
        g.backward(out)
    };
    let mut probe = params.clone();
    let mut per_param = Vec::new();
    let mut checked = 0;
    for (pi, e) in params.entries.iter().enumerate() {
        let n = e.value.len();
        let count = n.min(max_per_param.max(1));
        let mut worst: f64 = 0.0;
        for s in 0..count {
            let j = s * n / count;
            let theta = e.value.data[j];
            let h = h_rel * theta.abs().max(1.0);
            probe.entries[pi].value.data[j] = theta + h;
            let up = eval(&probe)?;
            probe.entries[pi].value.data[j] = theta - h;
            let down = eval(&probe)?;
            probe.entries[pi].value.data[j] = theta;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.grads[pi].as_ref().map_or(0.0, |g| g[j]);
            worst = worst.max(rel_error(a, numeric));
            checked += 1;
        }
        per_param.push((e.name.clone(), worst));
    }
    let max_rel_error = per_param.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_param,
        max_rel_error,
        checked,
    })
}
