#![allow(dead_code)]

use coopcache::aae::{AaeModel, LayerGroup};
use coopcache::nn::MlpNetwork;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Largest relative error between `analytic` and central differences of `f`
/// around `params`.
pub fn max_fd_error(params: &[f64], analytic: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> f64 {
    assert_eq!(params.len(), analytic.len());
    let mut p = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..p.len() {
        p[i] = params[i] + h;
        let up = f(&p);
        p[i] = params[i] - h;
        let down = f(&p);
        p[i] = params[i];
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * h)));
    }
    worst
}

/// Gradient implied by one SGD step of size `lr` on `net`.
pub fn step_gradient(before: &MlpNetwork, after: &MlpNetwork, lr: f64) -> Vec<f64> {
    before
        .flat_params()
        .iter()
        .zip(after.flat_params())
        .map(|(b, a)| (b - a) / lr)
        .collect()
}

/// Checks an AAE step against its loss for every layer group the step moves.
/// Returns the worst relative error.
pub fn aae_step_error(
    model: &AaeModel,
    groups: &[LayerGroup],
    loss: impl Fn(&AaeModel) -> f64,
    step: impl Fn(&mut AaeModel, f64),
) -> f64 {
    let lr = 1e-3;
    let mut stepped = model.clone();
    step(&mut stepped, lr);
    let mut worst = 0.0f64;
    for &g in groups {
        let analytic = step_gradient(model.network(g), stepped.network(g), lr);
        let params = model.network(g).flat_params();
        let err = max_fd_error(&params, &analytic, 1e-5, |p| {
            let mut m = model.clone();
            m.network_mut(g).set_flat_params(p).unwrap();
            loss(&m)
        });
        worst = worst.max(err);
    }
    for g in LayerGroup::ALL {
        if !groups.contains(&g) {
            assert_eq!(model.network(g), stepped.network(g), "{} moved", g.name());
        }
    }
    worst
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}
