//! Central finite-difference checks of graph gradients.
//!
//! The checker only ever calls [`Graph::eval`], so it is independent of the
//! adjoint rules it validates.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Feed, Graph, NodeId, ParamStore, Tensor};
use crate::error::Result;

/// Gradient magnitudes below this are compared absolutely rather than relatively.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    /// Coordinates probed per parameter tensor; `None` probes all of them.
    pub coords_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            coords_per_param: None,
            seed: 0,
        }
    }
}

/// Worst disagreement found for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub probed: usize,
    pub max_rel_error: f64,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Central difference of the scalar at `loss` along one coordinate of `name`.
pub fn numeric_partial(
    graph: &Graph,
    loss: NodeId,
    params: &ParamStore,
    feed: &Feed<'_>,
    name: &str,
    coord: usize,
    epsilon: f64,
) -> Result<f64> {
    let mut probe = params.clone();
    let mut eval_at = |delta: f64| -> Result<f64> {
        let mut t: Tensor = params.get(name).cloned().expect("probed parameter exists");
        t.data_mut()[coord] += delta;
        probe.set_trainable(name, t)?;
        Ok(graph.eval(&probe, feed)?.get(loss).item())
    };
    let plus = eval_at(epsilon)?;
    let minus = eval_at(-epsilon)?;
    Ok((plus - minus) / (2.0 * epsilon))
}

/// Compares `analytic` gradients (name → tensor) against central
/// differences of the scalar node `loss`.
pub fn check_gradients(
    graph: &Graph,
    loss: NodeId,
    params: &ParamStore,
    feed: &Feed<'_>,
    analytic: &BTreeMap<String, Tensor>,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport::default();
    for (name, grad) in analytic {
        let n = grad.len();
        let coords: Vec<usize> = match cfg.coords_per_param {
            Some(k) if k < n => {
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        let mut check = ParamCheck {
            name: name.clone(),
            probed: coords.len(),
            max_rel_error: 0.0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        };
        for c in coords {
            let numeric = numeric_partial(graph, loss, params, feed, name, c, cfg.epsilon)?;
            let a = grad.data()[c];
            let err = relative_error(a, numeric);
            if err >= check.max_rel_error {
                check.max_rel_error = err;
                check.worst_analytic = a;
                check.worst_numeric = numeric;
            }
        }
        report.params.push(check);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Builds a scalar loss exercising one primitive; returns (graph, loss).
    fn primitive_case(op: usize, store: &mut ParamStore, seed: u64) -> (Graph, NodeId) {
        let mut g = Graph::new();
        store.insert("a", random_tensor(&[3, 4], seed), true).unwrap();
        store.insert("b", random_tensor(&[4, 3], seed + 1), true).unwrap();
        store.insert("r", random_tensor(&[1, 4], seed + 2), true).unwrap();
        let a = g.param("a", &[3, 4]).unwrap();
        let b = g.param("b", &[4, 3]).unwrap();
        let r = g.param("r", &[1, 4]).unwrap();
        // weights make every output coordinate matter
        let w = g.constant(random_tensor(&[3, 4], seed + 9));
        let out = match op {
            0 => {
                let m = g.matmul(a, b).unwrap();
                let t = g.transpose(m).unwrap();
                g.matmul(t, a).unwrap()
            }
            1 => g.add(a, r).unwrap(),
            2 => g.sub(r, a).unwrap(),
            3 => g.mul(a, r).unwrap(),
            4 => {
                let s = g.scale(a, -1.7);
                g.exp(s)
            }
            5 => {
                let e = g.exp(a);
                g.log(e)
            }
            6 => {
                let sq = g.mul(a, a).unwrap();
                let one = g.constant(Tensor::full(&[3, 4], 0.5));
                let p = g.add(sq, one).unwrap();
                g.log(p)
            }
            7 => g.relu(a),
            8 => g.l2_normalize(a).unwrap(),
            9 => g.layer_norm(a, 1e-5).unwrap(),
            10 => g.softmax(a).unwrap(),
            11 => {
                let s = g.sum(a, 1).unwrap();
                let m = g.mean(a, 0).unwrap();
                let s = g.reshape(s, &[3, 1]).unwrap();
                let m = g.reshape(m, &[1, 4]).unwrap();
                let x = g.mul(s, m).unwrap();
                g.add(x, a).unwrap()
            }
            12 => {
                let top = g.slice(a, 0, 0, 2).unwrap();
                let bottom = g.slice(a, 0, 1, 3).unwrap();
                let left = g.slice(a, 1, 1, 3).unwrap();
                let c0 = g.concat(&[top, r], 0).unwrap();
                let c1 = g.concat(&[left, a], 1).unwrap();
                let c1 = g.slice(c1, 1, 1, 5).unwrap();
                let c2 = g.concat(&[r, bottom], 0).unwrap();
                let p = g.mul(c0, c1).unwrap();
                g.add(p, c2).unwrap()
            }
            _ => unreachable!(),
        };
        let weighted = g.mul(out, w).unwrap_or_else(|_| {
            let flat = g.sum_all(out).unwrap();
            g.reshape(flat, &[1, 1]).unwrap()
        });
        let loss = g.sum_all(weighted).unwrap();
        (g, loss)
    }

    fn check_primitive(op: usize, seed: u64) -> GradCheckReport {
        let mut store = ParamStore::new();
        let (g, loss) = primitive_case(op, &mut store, seed);
        let feed = Feed::new();
        let vals = g.eval(&store, &feed).unwrap();
        let grads = g.backward(&vals, loss, &store).unwrap();
        check_gradients(&g, loss, &store, &feed, &grads, &GradCheckConfig::default()).unwrap()
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        for op in 0..13 {
            for seed in 0..3 {
                let report = check_primitive(op, seed * 17);
                assert!(report.max_rel_error() < 1e-4, "op {op}: {report:?}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn random_primitive_and_seed(op in 0usize..13, seed in 0u64..10_000) {
            let report = check_primitive(op, seed);
            prop_assert!(report.max_rel_error() < 1e-4, "op {} report {:?}", op, report);
        }
    }

    #[test]
    fn broadcast_column_gradient() {
        let mut store = ParamStore::new();
        store.insert("x", random_tensor(&[4, 3], 5), true).unwrap();
        store.insert("c", random_tensor(&[4, 1], 6), true).unwrap();
        let mut g = Graph::new();
        let x = g.param("x", &[4, 3]).unwrap();
        let c = g.param("c", &[4, 1]).unwrap();
        let y = g.mul(x, c).unwrap();
        let y = g.mul(y, y).unwrap();
        let loss = g.sum_all(y).unwrap();
        let feed = Feed::new();
        let vals = g.eval(&store, &feed).unwrap();
        let grads = g.backward(&vals, loss, &store).unwrap();
        let report =
            check_gradients(&g, loss, &store, &feed, &grads, &GradCheckConfig::default()).unwrap();
        assert!(report.max_rel_error() < 1e-6, "{report:?}");
        assert_eq!(report.params.len(), 2);
        assert_eq!(grads["c"].shape(), &vec![4, 1][..]);
    }
}
