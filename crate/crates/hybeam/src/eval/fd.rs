use crate::transceiver::HybridBeamformers;
use crate::{Error, Result, C64};

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` per coordinate.
pub fn finite_diff_gradient(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument("perturbation must be positive".into()));
    }
    let mut point = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        point[i] = x[i] + h;
        let up = f(&point);
        point[i] = x[i] - h;
        let down = f(&point);
        point[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss at coordinate {i}")));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Real coordinates of a state: `Re/Im` of every `P_k`, `W_k` entry
/// (column-major), then `theta_U_k`, then `theta_F`.
pub fn pack_state(bf: &HybridBeamformers) -> Vec<f64> {
    let mut out = Vec::new();
    for m in bf.digital_tx.iter().chain(&bf.digital_rx) {
        for x in m.iter() {
            out.push(x.re);
            out.push(x.im);
        }
    }
    for m in &bf.analog_rx_phase {
        out.extend(m.iter());
    }
    out.extend(bf.analog_tx_phase.iter());
    out
}

/// Inverse of [`pack_state`] using `template` for the shapes.
pub fn unpack_state(template: &HybridBeamformers, x: &[f64]) -> HybridBeamformers {
    let mut out = template.clone();
    let mut it = x.iter().cloned();
    for m in out.digital_tx.iter_mut().chain(out.digital_rx.iter_mut()) {
        for v in m.iter_mut() {
            let re = it.next().unwrap();
            let im = it.next().unwrap();
            *v = C64::new(re, im);
        }
    }
    for m in out.analog_rx_phase.iter_mut() {
        for v in m.iter_mut() {
            *v = it.next().unwrap();
        }
    }
    for v in out.analog_tx_phase.iter_mut() {
        *v = it.next().unwrap();
    }
    out
}
