//! Finite-difference gradient oracle.

use super::graph::{Graph, Var};
use super::param::ParamSet;
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute terms; central
/// differences cannot resolve them below the rounding noise of the loss.
const FLOOR: f64 = 1e-6;

/// Worst relative error `|g − ĝ| / max(|g|, |ĝ|, 1e-6)` between reverse-mode
/// gradients and central differences over every learnable scalar.
pub fn grad_check<F>(loss_fn: F, params: &mut ParamSet<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &ParamSet<f64>) -> Result<Var>,
{
    let eval = |ps: &ParamSet<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let loss = loss_fn(&mut g, ps)?;
        let v = g.value(loss).data()[0];
        if !v.is_finite() {
            return Err(Error::Oracle(format!("non-finite loss {v}")));
        }
        Ok(v)
    };

    params.zero_grad();
    let mut g = Graph::new();
    let loss = loss_fn(&mut g, params)?;
    if !g.value(loss).data()[0].is_finite() {
        return Err(Error::Oracle("non-finite loss".into()));
    }
    let grads = g.backward(loss)?;
    g.accumulate(&grads, params)?;
    drop(g);

    let mut worst: f64 = 0.0;
    for pi in 0..params.len() {
        let id = super::param::ParamId(pi);
        if !params.get(id).learnable {
            continue;
        }
        for i in 0..params.get(id).value.len() {
            let orig = params.get(id).value.data()[i];
            params.get_mut(id).value.data_mut()[i] = orig + eps;
            let up = eval(params)?;
            params.get_mut(id).value.data_mut()[i] = orig - eps;
            let down = eval(params)?;
            params.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = params.get(id).grad.data()[i];
            let denom = analytic.abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkern::Tensor;
    use rand::{Rng, SeedableRng};

    #[test]
    fn quadratic_is_exact() {
        let mut ps = ParamSet::new();
        let id = ps.add("p", Tensor::new(&[4], vec![0.3, -1.2, 2.0, 0.01]).unwrap());
        let err = grad_check(
            |g, ps| {
                let p = g.param(ps, id);
                let sq = g.mul(p, p)?;
                let s = g.sum(sq)?;
                g.scale(s, 0.5)
            },
            &mut ps,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn gelu_at_random_points() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParamSet::new();
        let id = ps.add("x", Tensor::from_fn(&[16], |_| rng.gen_range(-3.0..3.0)));
        let w = Tensor::from_fn(&[16], |_| rng.gen_range(-1.0..1.0));
        let err = grad_check(
            |g, ps| {
                let x = g.param(ps, id);
                let y = g.gelu(x)?;
                let wv = g.constant(w.clone());
                let m = g.mul(y, wv)?;
                g.sum(m)
            },
            &mut ps,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }
}
