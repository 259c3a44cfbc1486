//! Training objectives: plain MSE regression of the next snapshot and the
//! flow-matching velocity loss with its linear-interpolant forward process.
//! MSE is the elementwise mean of squared differences throughout.

use crate::model::{Conditioning, FieldTransformer};
use crate::params::ParamBinding;
use crate::tensor::{Graph, Result, Scalar, Tensor, Var};

/// Supervised objective: `mse(model(u_in, c), u_out)`.
pub fn loss_supervised<T: Scalar>(
    g: &mut Graph<T>,
    model: &FieldTransformer<T>,
    bind: &mut ParamBinding,
    u_in: &Tensor<T>,
    cond: &Conditioning,
    u_out: &Tensor<T>,
) -> Result<Var> {
    let pred = model.forward_on(g, bind, u_in, None, cond)?;
    let target = g.constant(u_out.clone())?;
    g.mse(pred, target)
}

/// Forward process sample: `x_t = t * u_out + (1 - (1 - sigma_min) t) * eps`.
pub fn flow_sample<T: Scalar>(
    u_out: &Tensor<T>,
    t: f64,
    eps: &Tensor<T>,
    sigma_min: f64,
) -> Result<Tensor<T>> {
    debug_assert!((0.0..=1.0).contains(&t));
    let a = T::from_f64(t);
    // algebraically 1 - (1 - sigma) t, arranged so both endpoints are exact
    let b = T::from_f64((1.0 - t) + sigma_min * t);
    let data = u_out
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&u, &e)| a * u + b * e)
        .collect();
    Tensor::new(u_out.shape().to_vec(), data)
}

/// Flow-matching objective: regress the constant conditional velocity
/// `u_out - (1 - sigma_min) eps` from `(u_in, x_t, t)`. The conditioning must
/// already carry `diffusion_time = Some(t)`.
#[allow(clippy::too_many_arguments)]
pub fn loss_flow_matching<T: Scalar>(
    g: &mut Graph<T>,
    model: &FieldTransformer<T>,
    bind: &mut ParamBinding,
    u_in: &Tensor<T>,
    cond: &Conditioning,
    u_out: &Tensor<T>,
    eps: &Tensor<T>,
    sigma_min: f64,
) -> Result<Var> {
    let t = cond
        .diffusion_time
        .expect("flow-matching loss needs diffusion_time in the conditioning");
    let x_t = flow_sample(u_out, t, eps, sigma_min)?;
    let pred = model.forward_on(g, bind, u_in, Some(&x_t), cond)?;
    let c = T::from_f64(1.0 - sigma_min);
    let velocity: Vec<T> = u_out
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&u, &e)| u - c * e)
        .collect();
    let target = g.constant(Tensor::new(u_out.shape().to_vec(), velocity)?)?;
    g.mse(pred, target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ChannelMode, ModelConfig};
    use crate::tensor::gradcheck;

    fn rand_t(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
        let mut rng = gradcheck::rng(seed);
        let n = shape.iter().product();
        Tensor::new(shape, gradcheck::random_vec(&mut rng, n)).unwrap()
    }

    #[test]
    fn flow_sample_endpoints() {
        let u = rand_t(vec![1, 1, 4, 4], 1);
        let eps = rand_t(vec![1, 1, 4, 4], 2);
        let sigma = 1e-4;
        // t = 0: x_0 = eps exactly
        let x0 = flow_sample(&u, 0.0, &eps, sigma).unwrap();
        assert_eq!(x0.data(), eps.data());
        // t = 1: x_1 = u_out + sigma_min * eps exactly
        let x1 = flow_sample(&u, 1.0, &eps, sigma).unwrap();
        for ((a, &uu), &e) in x1.data().iter().zip(u.data()).zip(eps.data()) {
            assert_eq!(*a, uu + sigma * e);
        }
        // t = 0.5: coefficient on eps is 0.50005
        let xh = flow_sample(&u, 0.5, &eps, sigma).unwrap();
        for ((a, &uu), &e) in xh.data().iter().zip(u.data()).zip(eps.data()) {
            assert!((*a - (0.5 * uu + 0.50005 * e)).abs() < 1e-15);
        }
    }

    #[test]
    fn supervised_loss_zero_on_match_and_target_power_at_init() {
        let model = FieldTransformer::<f64>::build(ModelConfig::test(), 3).unwrap();
        let u_in = rand_t(vec![1, 1, 32, 32], 4);
        let u_out = rand_t(vec![1, 1, 32, 32], 5);
        let cond = Conditioning {
            pde_class: Some(0),
            channel_types: vec![],
            diffusion_time: None,
            periodic: (true, true),
        };
        // fresh model predicts exactly zero, so the loss is mean(u_out^2)
        let mut g = Graph::new();
        let mut bind = ParamBinding::new(&model.store);
        let loss = loss_supervised(&mut g, &model, &mut bind, &u_in, &cond, &u_out).unwrap();
        let expect: f64 =
            u_out.data().iter().map(|v| v * v).sum::<f64>() / u_out.numel() as f64;
        assert!((g.value(loss).item() - expect).abs() < 1e-12);

        // prediction == target -> 0: zero model against a zero target
        let zeros = Tensor::zeros(vec![1, 1, 32, 32]);
        let mut g = Graph::new();
        let mut bind = ParamBinding::new(&model.store);
        let loss = loss_supervised(&mut g, &model, &mut bind, &u_in, &cond, &zeros).unwrap();
        assert_eq!(g.value(loss).item(), 0.0);
    }

    #[test]
    fn flow_matching_loss_is_noise_power_for_zero_model_zero_target() {
        // u_out = 0, sigma_min = 0: target velocity is -eps, a zero-output
        // model scores the per-element mean of eps^2
        let mut cfg = ModelConfig::test();
        cfg.diffusion = true;
        cfg.mode = ChannelMode::Mc;
        let model = FieldTransformer::<f64>::build(cfg, 6).unwrap();
        let u_in = rand_t(vec![1, 1, 32, 32], 7);
        let u_out = Tensor::zeros(vec![1, 1, 32, 32]);
        let eps = rand_t(vec![1, 1, 32, 32], 8);
        let cond = Conditioning {
            pde_class: Some(0),
            channel_types: vec![],
            diffusion_time: Some(0.3),
            periodic: (true, true),
        };
        let mut g = Graph::new();
        let mut bind = ParamBinding::new(&model.store);
        let loss =
            loss_flow_matching(&mut g, &model, &mut bind, &u_in, &cond, &u_out, &eps, 0.0)
                .unwrap();
        let expect: f64 = eps.data().iter().map(|v| v * v).sum::<f64>() / eps.numel() as f64;
        assert!((g.value(loss).item() - expect).abs() < 1e-12);
    }

    #[test]
    fn supervised_loss_gradient_matches_finite_differences() {
        let mut model = FieldTransformer::<f64>::build(ModelConfig::test(), 9).unwrap();
        // make the network non-trivial
        {
            let mut rng = gradcheck::rng(10);
            for (_, p) in model.store.iter_mut() {
                for v in p.value.data_mut() {
                    *v += 0.05 * rand::Rng::gen_range(&mut rng, -1.0..1.0);
                }
            }
        }
        let u_in = rand_t(vec![1, 2, 16, 16], 11);
        let u_out = rand_t(vec![1, 2, 16, 16], 12);
        let cond = Conditioning {
            pde_class: Some(1),
            channel_types: vec![],
            diffusion_time: None,
            periodic: (true, true),
        };
        let id = model.store.id_of("stage1.block0.mlp.fc1.weight").unwrap();

        let mut g = Graph::new();
        let mut bind = ParamBinding::new(&model.store);
        let loss = loss_supervised(&mut g, &model, &mut bind, &u_in, &cond, &u_out).unwrap();
        g.backward(loss).unwrap();
        let analytic = bind.grads(&g)[id.0].clone().unwrap();

        let mut rng = gradcheck::rng(13);
        for e in gradcheck::probe_indices(&mut rng, analytic.numel(), 6) {
            let h = 1e-5;
            let orig = model.store.get(id).value.data()[e];
            let eval = |model: &FieldTransformer<f64>| {
                let mut g = Graph::new();
                let mut bind = ParamBinding::new(&model.store);
                let l = loss_supervised(&mut g, model, &mut bind, &u_in, &cond, &u_out).unwrap();
                g.value(l).item()
            };
            model.store.get_mut(id).value.data_mut()[e] = orig + h;
            let lp = eval(&model);
            model.store.get_mut(id).value.data_mut()[e] = orig - h;
            let lm = eval(&model);
            model.store.get_mut(id).value.data_mut()[e] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let err = gradcheck::rel_err(analytic.data()[e], numeric);
            assert!(err < 1e-3, "entry {e}: rel err {err}");
        }
    }
}
