use super::{Float, Graph, ParamId, ParamStore, Var};
use crate::error::{contract_err, Result};

/// Settings for [`grad_check`].
#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub epsilon: f64,
    /// Lower bound on the relative-error denominator, so that near-zero
    /// gradients are compared in absolute terms.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-4,
            floor: 1e-2,
        }
    }
}

/// Worst disagreement found by [`grad_check`].
#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares reverse-mode gradients with central differences
/// `(f(x+ε) − f(x−ε)) / 2ε` for every element of every trainable parameter.
///
/// `loss` rebuilds the forward pass from the store and returns the tape and its
/// scalar output. The store is perturbed in place during the check and restored
/// bit-exactly before returning; gradient slots are left untouched.
pub fn grad_check<F, L>(store: &mut ParamStore<F>, config: GradCheckConfig, mut loss: L) -> Result<GradCheckReport>
where
    F: Float,
    L: FnMut(&ParamStore<F>) -> Result<(Graph<F>, Var)>,
{
    if config.epsilon <= 0.0 {
        return Err(contract_err!("grad_check epsilon must be positive"));
    }
    let (graph, out) = loss(store)?;
    if graph.value(out).len() != 1 {
        return Err(contract_err!(
            "grad_check needs a scalar function, got shape {:?}",
            graph.value(out).shape()
        ));
    }
    let grads = graph.backward(out)?;
    let ids: Vec<ParamId> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| match grads.param(id) {
            Some(g) => g.to_f64_vec(),
            None => vec![0.0; store.value(id).len()],
        })
        .collect();
    drop(graph);

    let mut eval = |store: &ParamStore<F>| -> Result<f64> {
        let (g, v) = loss(store)?;
        Ok(g.value(v).item().as_f64())
    };
    let eps = F::of(config.epsilon);
    let mut report = GradCheckReport::default();
    for (id, an) in ids.iter().zip(&analytic) {
        for j in 0..an.len() {
            let original = store.value(*id).data()[j];
            store.value_mut(*id).data_mut()[j] = original + eps;
            let plus = eval(store);
            store.value_mut(*id).data_mut()[j] = original - eps;
            let minus = eval(store);
            store.value_mut(*id).data_mut()[j] = original;
            let (plus, minus) = (plus?, minus?);
            // the step actually taken after rounding to F
            let step = ((original + eps) - (original - eps)).as_f64();
            let numeric = (plus - minus) / step;
            let denom = an[j].abs().max(numeric.abs()).max(config.floor);
            let rel = (an[j] - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = rel;
                report.worst_param = store.get(*id).name.clone();
                report.worst_index = j;
                report.analytic = an[j];
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn quadratic_is_exact() {
        let mut store = ParamStore::<f64>::new();
        store
            .add("x", Tensor::from_f64([4], &[1.0, -2.0, 0.5, 3.0]).unwrap(), true)
            .unwrap();
        let before = store.value(ParamId(0)).clone();
        let report = grad_check(&mut store, GradCheckConfig::default(), |s| {
            let mut g = Graph::new();
            let x = g.param(s, ParamId(0));
            let sq = g.mul(x, x)?;
            let l = g.sum(sq)?;
            Ok((g, l))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");
        assert_eq!(store.value(ParamId(0)), &before);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let mut store = ParamStore::<f64>::new();
        store.add("x", Tensor::zeros([3]), true).unwrap();
        let r = grad_check(&mut store, GradCheckConfig::default(), |s| {
            let mut g = Graph::new();
            let x = g.param(s, ParamId(0));
            Ok((g, x))
        });
        assert!(matches!(r, Err(crate::Error::Contract(_))));
    }
}
