use serde::{Deserialize, Serialize};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-4;
/// Relative errors are measured against `max(|analytic|, |numeric|, REL_FLOOR)`.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    /// Coordinates left out because the probe crossed a non-differentiable point.
    pub skipped: usize,
    pub tol: f64,
    pub passed: bool,
}

/// Compares `analytic` against central finite differences of `loss` around `params`.
///
/// `coords` restricts the comparison to a subset of coordinates (all when `None`).
pub fn grad_check<F>(
    name: &str,
    params: &[f64],
    analytic: &[f64],
    mut loss: F,
    tol: f64,
    coords: Option<&[usize]>,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..params.len()).collect();
            &all
        }
    };
    let mut probe = params.to_vec();
    let mut max_rel_error = 0.0f64;
    let mut worst_index = 0;
    for &i in coords {
        let orig = probe[i];
        probe[i] = orig + FD_STEP;
        let up = loss(&probe);
        probe[i] = orig - FD_STEP;
        let down = loss(&probe);
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        if rel > max_rel_error || !rel.is_finite() {
            max_rel_error = rel;
            worst_index = i;
        }
    }
    GradCheckReport {
        name: name.to_string(),
        checked: coords.len(),
        max_rel_error,
        worst_index,
        skipped: 0,
        tol,
        passed: max_rel_error < tol,
    }
}

/// [`grad_check`] for piecewise-smooth losses.
///
/// `loss` also returns an activation-pattern signature. A coordinate whose `±FD_STEP` probes
/// land on a different pattern than the base point straddles a kink, where the central
/// difference is not an estimate of the gradient; such coordinates are skipped and counted.
pub fn grad_check_piecewise<F>(
    name: &str,
    params: &[f64],
    analytic: &[f64],
    mut loss: F,
    tol: f64,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> (f64, u64),
{
    let (_, base) = loss(params);
    let mut probe = params.to_vec();
    let mut max_rel_error = 0.0f64;
    let mut worst_index = 0;
    let mut skipped = 0;
    for i in 0..params.len() {
        let orig = probe[i];
        probe[i] = orig + FD_STEP;
        let (up, sig_up) = loss(&probe);
        probe[i] = orig - FD_STEP;
        let (down, sig_down) = loss(&probe);
        probe[i] = orig;
        if sig_up != base || sig_down != base {
            skipped += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * FD_STEP);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        if rel > max_rel_error || !rel.is_finite() {
            max_rel_error = rel;
            worst_index = i;
        }
    }
    GradCheckReport {
        name: name.to_string(),
        checked: params.len() - skipped,
        max_rel_error,
        worst_index,
        skipped,
        tol,
        passed: max_rel_error < tol,
    }
}
