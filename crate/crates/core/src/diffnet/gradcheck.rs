use super::NetParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub epsilon: f64,
    /// Lower bound of the relative-error denominator, so that gradients that
    /// are zero up to rounding do not blow up the ratio.
    pub floor: f64,
    /// Refuse to check networks larger than this.
    pub max_params: usize,
    /// Relative disagreement between central differences at `h` and `h / 10`
    /// above which `h` is taken to straddle a ReLU or max-pool kink; the step
    /// is then divided by 10, at most `refinements` times.
    pub kink_gap: f64,
    pub refinements: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { epsilon: 1e-5, floor: 1e-6, max_params: 10_000, kink_gap: 1e-3, refinements: 2 }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Tensor name and offset of the worst scalar.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric derivative at the worst scalar.
    pub worst_values: (f64, f64),
    pub checked: usize,
    /// Scalars whose step had to be refined around a kink.
    pub refined: usize,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` against central differences of `loss` around
/// `params`, scalar by scalar.
pub fn grad_check<F>(params: &NetParams, analytic: &NetParams, opts: GradCheckOptions, mut loss: F) -> Result<GradCheckReport>
where
    F: FnMut(&NetParams) -> Result<f64>,
{
    let n = params.len();
    if n > opts.max_params {
        return Err(Error::invalid(format!("{n} parameters exceed the gradient-check limit {}", opts.max_params)));
    }
    if analytic.len() != n {
        return Err(Error::shape("analytic gradient does not match parameters"));
    }
    let base = params.flat();
    let grad = analytic.flat();
    let mut probe = params.clone();
    let mut report = GradCheckReport { max_rel_err: 0.0, worst: None, worst_values: (0.0, 0.0), checked: 0, refined: 0 };
    let center = loss(params)?;
    for i in 0..n {
        let mut central = |h: f64| -> Result<f64> {
            probe.set_flat(i, base[i] + h);
            let plus = loss(&probe)?;
            probe.set_flat(i, base[i] - h);
            let minus = loss(&probe)?;
            probe.set_flat(i, base[i]);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(i));
            }
            Ok((plus - minus) / (2.0 * h))
        };
        let mut h = opts.epsilon;
        let mut numeric = central(h)?;
        for attempt in 0..=opts.refinements {
            let finer = central(h / 10.0)?;
            // Allow a hundred ulps of the loss per step of rounding noise.
            let rounding = 100.0 * f64::EPSILON * center.abs() / (h / 10.0);
            if (numeric - finer).abs() <= opts.kink_gap * numeric.abs().max(finer.abs()).max(opts.floor) + rounding {
                break;
            }
            if attempt == 0 {
                report.refined += 1;
            }
            if attempt == opts.refinements {
                break;
            }
            h /= 10.0;
            numeric = finer;
        }
        let err = relative_error(grad[i], numeric, opts.floor);
        if err > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = err;
            report.worst = params.locate(i).map(|(name, off)| (name.to_string(), off));
            report.worst_values = (grad[i], numeric);
        }
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::NetConfig;

    #[test]
    fn kink_inside_the_step_is_stepped_over() {
        let params = NetParams::init_kaiming(&NetConfig::tiny(), 3);
        let base = params.flat();
        // |θ0 - k| with the kink 3e-6 above θ0, plus a smooth quadratic.
        let kink = base[0] + 3e-6;
        let loss = |p: &NetParams| {
            let f = p.flat();
            Ok((f[0] - kink).abs() + f.iter().map(|v| v * v).sum::<f64>())
        };
        let mut analytic = params.zeros_like();
        for (i, v) in base.iter().enumerate() {
            analytic.set_flat(i, 2.0 * v - if i == 0 { 1.0 } else { 0.0 });
        }
        let plain = GradCheckOptions { refinements: 0, max_params: usize::MAX, ..Default::default() };
        let coarse = grad_check(&params, &analytic, plain, loss).unwrap();
        assert!(coarse.max_rel_err > 0.1);
        let opts = GradCheckOptions { max_params: usize::MAX, ..Default::default() };
        let report = grad_check(&params, &analytic, opts, loss).unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
        assert_eq!(report.refined, 1);
    }
}
