//! Shape-based distance.

use crate::error::{Error, Result};
use crate::features::{shift_order, shifted_dot, znorm};
use crate::model::VitalChannel;

/// Shape-based distance between two equal-length series.
///
/// Both inputs are z-normed, then
/// `1 - max_w Σ_t x_t·y_{t-w} / (‖x‖·‖y‖)` over shifts `w` in
/// `[-(T-1), T-1]` with zero padding. Returns the distance (in `[0, 2]`)
/// and the maximizing shift, preferring the smallest `|w|` and negative
/// shifts on ties. A constant input has correlation 0 everywhere.
pub fn sbd(x: &[f64], y: &[f64]) -> Result<(f64, i64)> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!(
            "series lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::InvalidParameter("series must have at least 2 points".into()));
    }
    let zx = znorm(x);
    let zy = znorm(y);
    let norm = (dot(&zx, &zx) * dot(&zy, &zy)).sqrt();
    let mut best = (f64::NEG_INFINITY, 0i64);
    for w in shift_order(x.len()) {
        let v = if norm > 0.0 {
            shifted_dot(&zx, &zy, w) / norm
        } else {
            0.0
        };
        if v > best.0 {
            best = (v, w);
        }
    }
    Ok(((1.0 - best.0).clamp(0.0, 2.0), best.1))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const STACK_LAGS: usize = 63;

/// Multivariate SBD of two z-normed channel-major grids with a shift shared
/// by all channels: `1 - max_w mean_c NCC_c(w)`. Channels with zero norm
/// contribute correlation 0.
pub fn multivariate_sbd(x: &[f64], y: &[f64], hours: usize) -> (f64, i64) {
    unit_sbd(&unit_channels(x, hours), &unit_channels(y, hours), hours)
}

/// Scales every channel of a grid to unit norm; zero channels stay zero.
pub(crate) fn unit_channels(g: &[f64], hours: usize) -> Vec<f64> {
    let mut out = g.to_vec();
    for c in out.chunks_mut(hours) {
        let n = dot(c, c).sqrt();
        if n > 0.0 {
            c.iter_mut().for_each(|v| *v /= n);
        } else {
            c.fill(0.0);
        }
    }
    out
}

/// [`multivariate_sbd`] of grids already passed through [`unit_channels`].
pub(crate) fn unit_sbd(x: &[f64], y: &[f64], hours: usize) -> (f64, i64) {
    // cc[w + hours - 1] = Σ_c NCC_c(w)
    let width = 2 * hours - 1;
    let mut stack = [0.0; STACK_LAGS];
    let mut heap = Vec::new();
    let cc = if width <= STACK_LAGS {
        &mut stack[..width]
    } else {
        heap.resize(width, 0.0);
        &mut heap[..]
    };
    for (xc, yc) in x.chunks(hours).zip(y.chunks(hours)) {
        for (t, xv) in xc.iter().enumerate() {
            // w = t - u
            let row = &mut cc[t..t + hours];
            for (r, yv) in row.iter_mut().rev().zip(yc) {
                *r += xv * yv;
            }
        }
    }
    let ncc = |w: i64| cc[(w + hours as i64 - 1) as usize] / VitalChannel::COUNT as f64;
    // same visiting order as `shift_order`
    let mut best = (ncc(0), 0i64);
    for s in 1..hours as i64 {
        for w in [-s, s] {
            let v = ncc(w);
            if v > best.0 {
                best = (v, w);
            }
        }
    }
    ((1.0 - best.0).clamp(0.0, 2.0), best.1)
}
