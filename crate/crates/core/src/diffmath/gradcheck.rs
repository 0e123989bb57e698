use crate::diffmath::{Graph, Matrix};
use crate::error::{Error, Result};

/// Floor on the denominator of the relative error.
pub const DEFAULT_EPS_ABS: f64 = 1e-6;

/// Analytic vs. central-difference agreement for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGradError {
    pub name: String,
    pub max_rel_error: f64,
    /// Entries compared.
    pub checked: usize,
    /// Entries skipped because a ±step perturbation crosses a kink.
    pub excluded: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub step: f64,
    pub eps_abs: f64,
    pub params: Vec<ParamGradError>,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().fold(0.0, |m, p| m.max(p.max_rel_error))
    }

    pub fn excluded(&self) -> usize {
        self.params.iter().map(|p| p.excluded).sum()
    }

    pub fn checked(&self) -> usize {
        self.params.iter().map(|p| p.checked).sum()
    }
}

/// `|a - n| / max(|a|, |n|, eps_abs)`.
pub fn relative_error(analytic: f64, numeric: f64, eps_abs: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(eps_abs)
}

/// Default for [`GradCheck::apex_ratio`].
pub const DEFAULT_APEX_RATIO: f64 = 100.0;

/// Central-difference gradient checker.
///
/// An entry is excluded when the perturbation changes which side of a kink
/// any ReLU, hinge, max-pool or zero distance sits on, or when it moves some
/// pairwise distance by more than `1 / apex_ratio` of that distance's
/// smallest value: such a pair sits near the apex of the distance cone,
/// where central differences are dominated by curvature.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub step: f64,
    pub eps_abs: f64,
    pub apex_ratio: f64,
}

fn near_apex(base: &[Matrix], plus: &[Matrix], minus: &[Matrix], ratio: f64) -> bool {
    base.iter().zip(plus).zip(minus).any(|((b, p), m)| {
        b.data()
            .iter()
            .zip(p.data())
            .zip(m.data())
            .any(|((&d0, &dp), &dm)| {
                let moved = (dp - d0).abs().max((dm - d0).abs());
                moved > 0.0 && d0.min(dp).min(dm) < ratio * moved
            })
    })
}

impl GradCheck {
    pub fn new(step: f64) -> Self {
        GradCheck {
            step,
            eps_abs: DEFAULT_EPS_ABS,
            apex_ratio: DEFAULT_APEX_RATIO,
        }
    }

    /// Compares backward gradients against central differences for every
    /// trainable entry. Parameter values and accumulated gradients are left
    /// as they were found.
    pub fn run(&self, graph: &mut Graph) -> Result<GradReport> {
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "gradient-check step must be positive, got {}",
                self.step
            )));
        }
        let params = graph.params().to_vec();
        let saved: Vec<Option<Matrix>> = params.iter().map(|&p| graph.grad(p).cloned()).collect();

        graph.forward()?;
        graph.zero_grad();
        graph.backward()?;
        let analytic: Vec<Matrix> = params
            .iter()
            .map(|&p| {
                graph.grad(p).cloned().unwrap_or_else(|| {
                    let (r, c) = graph.value(p).expect("leaf").shape();
                    Matrix::zeros(r, c)
                })
            })
            .collect();
        let base_sig = graph.kink_signature();
        let base_dist = graph.distance_values();

        let mut report = GradReport {
            step: self.step,
            eps_abs: self.eps_abs,
            params: Vec::with_capacity(params.len()),
        };
        for (pi, &p) in params.iter().enumerate() {
            let mut entry = ParamGradError {
                name: graph.name(p).unwrap_or("").to_string(),
                max_rel_error: 0.0,
                checked: 0,
                excluded: 0,
            };
            let n = graph.value(p).expect("leaf").len();
            for k in 0..n {
                let orig = graph.value(p).expect("leaf").data()[k];

                graph.leaf_value_mut(p).data_mut()[k] = orig + self.step;
                let plus = graph.forward()?.get(0, 0);
                let sig_plus = graph.kink_signature();
                let dist_plus = graph.distance_values();

                graph.leaf_value_mut(p).data_mut()[k] = orig - self.step;
                let minus = graph.forward()?.get(0, 0);
                let sig_minus = graph.kink_signature();
                let dist_minus = graph.distance_values();

                graph.leaf_value_mut(p).data_mut()[k] = orig;

                if sig_plus != base_sig
                    || sig_minus != base_sig
                    || near_apex(&base_dist, &dist_plus, &dist_minus, self.apex_ratio)
                {
                    entry.excluded += 1;
                    continue;
                }
                let numeric = (plus - minus) / (2.0 * self.step);
                let err = relative_error(analytic[pi].data()[k], numeric, self.eps_abs);
                entry.max_rel_error = entry.max_rel_error.max(err);
                entry.checked += 1;
            }
            report.params.push(entry);
        }

        graph.forward()?;
        graph.zero_grad();
        for (&p, g) in params.iter().zip(saved) {
            if let Some(g) = g {
                graph.restore_grad(p, g);
            }
        }
        Ok(report)
    }
}

/// [`GradCheck`] with the default absolute floor.
pub fn check_gradients(graph: &mut Graph, step: f64) -> Result<GradReport> {
    GradCheck::new(step).run(graph)
}
