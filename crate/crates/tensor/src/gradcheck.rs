//! Central finite-difference checks of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::Tensor;
use crate::var::Var;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Half-width of the central difference.
    pub eps: f64,
    /// Coordinates probed per variable; all of them if the variable is smaller.
    pub coords_per_var: usize,
    /// Coordinates whose gradient is below this fraction of the largest
    /// gradient magnitude are compared on that scale instead of their own.
    pub rel_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-6,
            coords_per_var: 16,
            rel_floor: 1e-3,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst per-coordinate relative error.
    pub max_rel_err: f64,
    /// Relative error of the derivative along one random direction through
    /// every variable at once.
    pub directional_rel_err: f64,
    pub coords_checked: usize,
    /// `(variable, index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn worst_err(&self) -> f64 {
        self.max_rel_err.max(self.directional_rel_err)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.worst_err() < tol
    }
}

/// Compares the tape gradient of `f` with respect to each leaf in `vars`
/// against central differences. `f` must rebuild its graph from the current
/// leaf values on every call. A non-scalar output is contracted with a fixed
/// random tensor first.
pub fn check_gradients<F>(vars: &[Var<f64>], f: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn() -> Result<Var<f64>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let first = f()?;
    let weights = (first.numel() > 1).then(|| Var::constant(Tensor::randn(&first.shape(), &mut rng)));
    let scalar = |out: Var<f64>| -> Result<Var<f64>> {
        match &weights {
            Some(w) => out.mul(w)?.sum_all(),
            None => Ok(out),
        }
    };
    let eval = || -> Result<f64> { scalar(f()?)?.value().item() };

    for v in vars {
        v.zero_grad();
    }
    scalar(first)?.backward()?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|v| match v.grad() {
            Some(g) => g.to_f64_vec(),
            None => vec![0.0; v.numel()],
        })
        .collect();
    let scale = analytic.iter().flatten().fold(0.0f64, |m, g| m.max(g.abs()));
    let floor = (opts.rel_floor * scale).max(1e-12);

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        directional_rel_err: 0.0,
        coords_checked: 0,
        worst: None,
    };
    for (vi, v) in vars.iter().enumerate() {
        let n = v.numel();
        let idx: Vec<usize> = if n <= opts.coords_per_var {
            (0..n).collect()
        } else {
            let mut s = sample(&mut rng, n, opts.coords_per_var).into_vec();
            s.sort_unstable();
            s
        };
        for i in idx {
            let orig = v.value().data()[i];
            v.update_value(|t| t.data_mut()[i] = orig + opts.eps);
            let plus = eval()?;
            v.update_value(|t| t.data_mut()[i] = orig - opts.eps);
            let minus = eval()?;
            v.update_value(|t| t.data_mut()[i] = orig);
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = analytic[vi][i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            report.coords_checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst = Some((vi, i, a, numeric));
            }
        }
    }

    let dirs: Vec<Tensor<f64>> = vars.iter().map(|v| Tensor::randn(&v.shape(), &mut rng)).collect();
    let originals: Vec<Tensor<f64>> = vars.iter().map(|v| v.value().clone()).collect();
    let shift = |sign: f64| {
        for ((v, d), o) in vars.iter().zip(&dirs).zip(&originals) {
            v.update_value(|t| {
                for ((x, &dv), &ov) in t.data_mut().iter_mut().zip(d.data()).zip(o.data()) {
                    *x = ov + sign * opts.eps * dv;
                }
            });
        }
    };
    shift(1.0);
    let plus = eval();
    shift(-1.0);
    let minus = eval();
    for (v, o) in vars.iter().zip(&originals) {
        v.update_value(|t| *t = o.clone());
    }
    let numeric = (plus? - minus?) / (2.0 * opts.eps);
    let a: f64 = analytic
        .iter()
        .zip(&dirs)
        .map(|(g, d)| g.iter().zip(d.data()).map(|(x, y)| x * y).sum::<f64>())
        .sum();
    report.directional_rel_err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_wrong_gradient() {
        let x = Var::parameter(Tensor::from_f64(&[0.3, -1.2], &[2]).unwrap());
        let ok = check_gradients(&[x.clone()], || x.square().sum_all(), GradCheckOptions::default()).unwrap();
        assert!(ok.passes(1e-6), "{ok:?}");
        // backward reports d/dx = 1 for a function whose derivative is 2x
        let bad = check_gradients(
            &[x.clone()],
            || {
                let v = x.value().map(|a| a * a);
                Ok(Var::from_op(v, "bad_square", &[&x], |ctx| Ok(vec![Some(ctx.grad().map(|g| g))])).sum_all()?)
            },
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(!bad.passes(1e-2), "{bad:?}");
    }
}
