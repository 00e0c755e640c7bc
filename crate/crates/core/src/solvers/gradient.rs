use crate::covstats::ModelContext;
use crate::error::Result;
use crate::linalg::{CMat, HpdFactor};

/// `max(x, 0)`.
pub fn project_nonnegative(x: f64) -> f64 {
    x.max(0.0)
}

/// Objective value and its gradient with respect to `a`.
///
/// Per antenna, with `r = y_m - mean_m` and `q = Sigma_m^{-1} r`:
/// `d[k] += w (s^H Sigma^{-1} s - |s^H q|^2) - 2 Re(conj(e) s^H q)`.
pub fn objective_and_gradient(y: &CMat, a: &[f64], model: &ModelContext) -> Result<(f64, Vec<f64>)> {
    model.check_inputs(y, a)?;
    let k = model.devices();
    let mut grad = vec![0.0; k];
    let mut value = 0.0;
    for m in 0..model.antennas() {
        let factor = HpdFactor::new(&model.covariance_ym(m, a))?;
        let r = y.column(m) - model.mean_ym(m, a);
        let q = factor.solve_vec(&r);
        value += factor.log_det() + r.dotc(&q).re;
        let p = factor.solve(&model.s);
        for (kk, g) in grad.iter_mut().enumerate() {
            let s_k = model.s.column(kk);
            let p_k = p.column(kk);
            let quad = s_k.dotc(&p_k).re;
            // s^H Sigma^{-1} r = (Sigma^{-1} s)^H r
            let sq = p_k.dotc(&r);
            let w = model.cov_weight(m, kk);
            let e = model.mean_coef(m, kk);
            *g += w * (quad - sq.norm_sqr()) - 2.0 * (e.conj() * sq).re;
        }
    }
    Ok((value, grad))
}

/// Gradient of [`ModelContext::nll`] with respect to `a`.
pub fn gradient(y: &CMat, a: &[f64], model: &ModelContext) -> Result<Vec<f64>> {
    objective_and_gradient(y, a, model).map(|(_, g)| g)
}
