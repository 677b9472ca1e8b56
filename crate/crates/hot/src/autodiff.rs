//! Reverse-mode differentiation over a dynamically recorded tape, the
//! parameter store it reads leaves from, checkpoint IO, and a central
//! finite-difference checker.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Scalar, Shape5, Tensor5};
use crate::{Error, Result};

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(pub(crate) usize);

/// Handle to a trainable parameter in a `ParamStore`.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ParamId(pub(crate) usize);

/// Handle to a non-trainable buffer (e.g. normalization running statistics).
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct BufId(pub(crate) usize);

/// A trainable tensor with its gradient buffer. `decay` marks whether weight
/// decay applies (convolution and linear weights yes, biases and
/// normalization scale/shift no).
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor5<T>,
    pub grad: Tensor5<T>,
    pub decay: bool,
}

struct BufferSlot<T> {
    name: String,
    value: Tensor5<T>,
}

/// Owner of all parameters and buffers of a model. Names are unique and
/// double as checkpoint file names.
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    buffers: Vec<BufferSlot<T>>,
    names: HashMap<String, ()>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> ParamStore<T> {
        ParamStore {
            params: Vec::new(),
            buffers: Vec::new(),
            names: HashMap::new(),
        }
    }

    pub fn add_param(&mut self, name: &str, value: Tensor5<T>, decay: bool) -> Result<ParamId> {
        if self.names.insert(name.to_string(), ()).is_some() {
            return Err(Error::Contract(format!("duplicate parameter name {name}")));
        }
        let grad = Tensor5::zeros(value.shape());
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad,
            decay,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor5<T>) -> Result<BufId> {
        if self.names.insert(name.to_string(), ()).is_some() {
            return Err(Error::Contract(format!("duplicate buffer name {name}")));
        }
        self.buffers.push(BufferSlot {
            name: name.to_string(),
            value,
        });
        Ok(BufId(self.buffers.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn param(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor5<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor5<T> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor5<T> {
        &self.params[id.0].grad
    }

    pub fn buffer(&self, id: BufId) -> &Tensor5<T> {
        &self.buffers[id.0].value
    }

    pub fn buffer_mut(&mut self, id: BufId) -> &mut Tensor5<T> {
        &mut self.buffers[id.0].value
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = Tensor5::zeros(p.value.shape());
        }
    }

    /// Total number of scalar parameters.
    pub fn param_scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Writes one HOT1 file per parameter and buffer plus a manifest listing
    /// the names in order.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut manifest = String::new();
        for p in &self.params {
            crate::tensor::write_hot1(&p.value, &dir.join(format!("{}.hot1", p.name)))?;
            manifest.push_str(&p.name);
            manifest.push('\n');
        }
        for b in &self.buffers {
            crate::tensor::write_hot1(&b.value, &dir.join(format!("{}.hot1", b.name)))?;
            manifest.push_str(&b.name);
            manifest.push('\n');
        }
        fs::write(dir.join("manifest.txt"), manifest)?;
        Ok(())
    }

    /// Loads values for every parameter and buffer by name. The manifest must
    /// cover exactly the names this store declares.
    pub fn load_checkpoint(&mut self, dir: &Path) -> Result<()> {
        let manifest_path = dir.join("manifest.txt");
        let manifest = fs::read_to_string(&manifest_path).map_err(|e| Error::Format {
            path: manifest_path.display().to_string(),
            msg: e.to_string(),
        })?;
        let listed: Vec<&str> = manifest.lines().filter(|l| !l.is_empty()).collect();
        let mut expected: Vec<&str> = self
            .params
            .iter()
            .map(|p| p.name.as_str())
            .chain(self.buffers.iter().map(|b| b.name.as_str()))
            .collect();
        let mut listed_sorted = listed.clone();
        listed_sorted.sort_unstable();
        expected.sort_unstable();
        if listed_sorted != expected {
            return Err(Error::Format {
                path: manifest_path.display().to_string(),
                msg: format!(
                    "checkpoint names do not match model ({} listed vs {} expected)",
                    listed.len(),
                    expected.len()
                ),
            });
        }
        for i in 0..self.params.len() {
            let path = dir.join(format!("{}.hot1", self.params[i].name));
            let value: Tensor5<T> = crate::tensor::read_hot1(&path)?;
            if value.shape() != self.params[i].value.shape() {
                return Err(Error::Shape(format!(
                    "checkpoint tensor {} has shape {} but model expects {}",
                    self.params[i].name,
                    value.shape(),
                    self.params[i].value.shape()
                )));
            }
            self.params[i].value = value;
        }
        for i in 0..self.buffers.len() {
            let path = dir.join(format!("{}.hot1", self.buffers[i].name));
            let value: Tensor5<T> = crate::tensor::read_hot1(&path)?;
            if value.shape() != self.buffers[i].value.shape() {
                return Err(Error::Shape(format!(
                    "checkpoint buffer {} has shape {} but model expects {}",
                    self.buffers[i].name,
                    value.shape(),
                    self.buffers[i].value.shape()
                )));
            }
            self.buffers[i].value = value;
        }
        Ok(())
    }
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Context handed to a backward rule: the output gradient, the node's own
/// value, and the parent values, in recording order.
pub struct BackCtx<'a, T> {
    pub grad: &'a Tensor5<T>,
    pub value: &'a Tensor5<T>,
    pub parents: Vec<&'a Tensor5<T>>,
}

type BackFn<T> = Box<dyn Fn(&BackCtx<'_, T>) -> Result<Vec<Tensor5<T>>>>;

struct Node<T> {
    value: Tensor5<T>,
    parents: Vec<usize>,
    backward: Option<BackFn<T>>,
    param: Option<ParamId>,
}

/// Append-only record of one forward pass. Inputs always precede outputs, so
/// a single reverse sweep visits nodes in reverse topological order.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Tape<T> {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor5<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape5 {
        self.nodes[v.0].value.shape()
    }

    /// Records a leaf with no gradient destination.
    pub fn constant(&mut self, value: Tensor5<T>) -> Var {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf whose gradient accumulates into the store after
    /// `backward`.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: store.value(id).clone(),
            parents: Vec::new(),
            backward: None,
            param: Some(id),
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an op application. `backward` receives the output gradient and
    /// must return one gradient tensor per parent, in order. Ops outside this
    /// module register themselves through this entry point.
    pub fn record(
        &mut self,
        value: Tensor5<T>,
        parents: Vec<Var>,
        backward: BackFn<T>,
    ) -> Var {
        self.nodes.push(Node {
            value,
            parents: parents.into_iter().map(|v| v.0).collect(),
            backward: Some(backward),
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    // Elementwise plumbing ops live here; structured ops live in `ops`.

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.record(
            value,
            vec![a, b],
            Box::new(|ctx| Ok(vec![ctx.grad.clone(), ctx.grad.clone()])),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).mul(self.value(b))?;
        Ok(self.record(
            value,
            vec![a, b],
            Box::new(|ctx| {
                Ok(vec![
                    ctx.grad.mul(ctx.parents[1])?,
                    ctx.grad.mul(ctx.parents[0])?,
                ])
            }),
        ))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let value = self.value(a).scale(k);
        self.record(
            value,
            vec![a],
            Box::new(move |ctx| Ok(vec![ctx.grad.scale(k)])),
        )
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Tensor5::scalar(self.value(a).sum());
        self.record(
            value,
            vec![a],
            Box::new(|ctx| {
                let g = ctx.grad.data()[0];
                Ok(vec![Tensor5::full(ctx.parents[0].shape(), g)])
            }),
        )
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let count = T::from_f64(self.value(a).numel() as f64);
        let value = Tensor5::scalar(self.value(a).sum() / count);
        self.record(
            value,
            vec![a],
            Box::new(move |ctx| {
                let g = ctx.grad.data()[0] / count;
                Ok(vec![Tensor5::full(ctx.parents[0].shape(), g)])
            }),
        )
    }

    /// Reverse sweep from a scalar loss. Parameter gradients are zeroed
    /// first, then each leaf's gradient is accumulated into the store.
    /// The tape itself is untouched; running backward twice gives identical
    /// results.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.backward_collect(loss)?;
        store.zero_grads();
        for (i, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if let (Some(id), Some(g)) = (node.param, grads[i].as_ref()) {
                store.params[id.0].grad.accumulate(g)?;
            }
        }
        Ok(())
    }

    /// Reverse sweep returning the gradient for every node (None where the
    /// loss does not depend on the node). Used by probes and tests that need
    /// input gradients.
    pub fn backward_collect(&self, loss: Var) -> Result<Vec<Option<Tensor5<T>>>> {
        let loss_shape = self.shape(loss);
        if loss_shape.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {loss_shape}"
            )));
        }
        let mut grads: Vec<Option<Tensor5<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor5::full(loss_shape, T::ONE));
        // Nodes are ids in creation order, so descending id is reverse
        // topological order; each node's gradient is complete before its
        // backward rule runs, and accumulation order is fixed by id.
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(back) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = grads[i].clone() else {
                continue;
            };
            let ctx = BackCtx {
                grad: &grad,
                value: &node.value,
                parents: node.parents.iter().map(|&p| &self.nodes[p].value).collect(),
            };
            let parent_grads = back(&ctx)?;
            if parent_grads.len() != node.parents.len() {
                return Err(Error::Contract(format!(
                    "backward rule for node {} returned {} gradients for {} parents",
                    i,
                    parent_grads.len(),
                    node.parents.len()
                )));
            }
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                match grads[p].as_mut() {
                    Some(acc) => acc.accumulate(&pg)?,
                    None => grads[p] = Some(pg),
                }
            }
        }
        Ok(grads)
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Settings for the finite-difference checker.
#[derive(Clone, Copy, Debug)]
pub struct GradcheckOpts {
    pub step: f64,
    pub tol: f64,
    /// Coordinates per parameter: all if the tensor has at most this many,
    /// otherwise this many sampled uniformly with a fixed seed.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradcheckOpts {
    fn default() -> Self {
        GradcheckOpts {
            step: 1e-5,
            tol: 1e-4,
            max_coords: 500,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked_coords: usize,
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub per_param: Vec<ParamCheck>,
    pub max_rel_err: f64,
    pub pass: bool,
}

impl GradcheckReport {
    pub fn worst(&self) -> Option<&ParamCheck> {
        self.per_param
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Compares analytic gradients against central finite differences
/// (f(x+h) - f(x-h)) / 2h for every parameter in the store. `build` must
/// construct the scalar loss on the given tape from current store values
/// (it gets a mutable store so model forwards with running statistics work;
/// it must not touch parameter values). f64 only: f32 differences are
/// dominated by rounding.
pub fn gradcheck<F>(
    store: &mut ParamStore<f64>,
    opts: GradcheckOpts,
    mut build: F,
) -> Result<GradcheckReport>
where
    F: FnMut(&mut Tape<f64>, &mut ParamStore<f64>) -> Result<Var>,
{
    // Analytic pass.
    let mut tape = Tape::new();
    let loss = build(&mut tape, store)?;
    tape.backward(loss, store)?;
    let analytic: Vec<Tensor5<f64>> = store.params.iter().map(|p| p.grad.clone()).collect();
    drop(tape);

    let mut eval = |store: &mut ParamStore<f64>, name: &str, coord: usize| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = build(&mut tape, store)?;
        let v = tape.value(loss).data()[0];
        if !v.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss evaluated to {v} while perturbing {name}[{coord}]"
            )));
        }
        Ok(v)
    };

    let mut per_param = Vec::new();
    let mut max_rel = 0.0f64;
    for idx in 0..store.params.len() {
        let numel = store.params[idx].value.numel();
        let name = store.params[idx].name.clone();
        let coords: Vec<usize> = if numel <= opts.max_coords {
            (0..numel).collect()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(
                crate::seeds::derive_indexed(opts.seed, crate::seeds::GRADCHECK, idx as u64),
            );
            let mut picked =
                rand::seq::index::sample(&mut rng, numel, opts.max_coords).into_vec();
            picked.sort_unstable();
            picked
        };
        let mut check = ParamCheck {
            name: name.clone(),
            max_rel_err: 0.0,
            worst_coord: 0,
            analytic: 0.0,
            numeric: 0.0,
            checked_coords: coords.len(),
        };
        for &coord in &coords {
            let original = store.params[idx].value.data()[coord];
            store.params[idx].value.data_mut()[coord] = original + opts.step;
            let plus = eval(store, &name, coord);
            store.params[idx].value.data_mut()[coord] = original - opts.step;
            let minus = eval(store, &name, coord);
            store.params[idx].value.data_mut()[coord] = original;
            let (plus, minus) = (plus?, minus?);
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic[idx].data()[coord];
            let e = rel_err(a, numeric);
            if e > check.max_rel_err {
                check.max_rel_err = e;
                check.worst_coord = coord;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        max_rel = max_rel.max(check.max_rel_err);
        per_param.push(check);
    }
    Ok(GradcheckReport {
        per_param,
        max_rel_err: max_rel,
        pass: max_rel <= opts.tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[f64]) -> (ParamStore<f64>, ParamId) {
        let mut store = ParamStore::new();
        let shape = Shape5::new(1, values.len(), 1, 1, 1);
        let id = store
            .add_param("p", Tensor5::from_vec(shape, values.to_vec()).unwrap(), true)
            .unwrap();
        (store, id)
    }

    #[test]
    fn sum_gradient_is_ones() {
        let (mut store, id) = store_with(&[1.0, -2.0, 3.0]);
        let mut tape = Tape::new();
        let p = tape.param(&store, id);
        let loss = tape.sum_all(p);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(id).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn quadratic_gradient_is_two_x() {
        let (mut store, id) = store_with(&[1.5, -0.25, 4.0]);
        let mut tape = Tape::new();
        let p = tape.param(&store, id);
        let sq = tape.mul(p, p).unwrap();
        let loss = tape.sum_all(sq);
        tape.backward(loss, &mut store).unwrap();
        let expect = store.value(id).scale(2.0);
        assert!(store.grad(id).max_abs_diff(&expect) <= 1e-12);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let (mut store, id) = store_with(&[1.0, 2.0]);
        let mut tape = Tape::new();
        let p = tape.param(&store, id);
        assert!(matches!(
            tape.backward(p, &mut store),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn backward_twice_identical() {
        let (mut store, id) = store_with(&[0.5, 0.25, -1.0, 2.0]);
        let mut tape = Tape::new();
        let p = tape.param(&store, id);
        let sq = tape.mul(p, p).unwrap();
        let loss = tape.mean_all(sq);
        tape.backward(loss, &mut store).unwrap();
        let first = store.grad(id).clone();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(id), &first);
    }

    #[test]
    fn reused_leaf_accumulates_once_per_use() {
        // loss = sum(p) + sum(p) -> grad 2.
        let (mut store, id) = store_with(&[3.0]);
        let mut tape = Tape::new();
        let p = tape.param(&store, id);
        let s1 = tape.sum_all(p);
        let s2 = tape.sum_all(p);
        let loss = tape.add(s1, s2).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(id).data(), &[2.0]);
    }

    #[test]
    fn gradcheck_sum_of_squares() {
        let (mut store, _) = store_with(&[1.0, -2.0, 0.5]);
        let report = gradcheck(&mut store, GradcheckOpts::default(), |tape, store| {
            let p = tape.param(store, ParamId(0));
            let sq = tape.mul(p, p)?;
            Ok(tape.sum_all(sq))
        })
        .unwrap();
        assert!(report.pass, "max rel err {}", report.max_rel_err);
        assert!(report.max_rel_err <= 1e-10);
    }

    #[test]
    fn gradcheck_detects_sign_flip() {
        let (mut store, _) = store_with(&[0.7, -1.3]);
        let report = gradcheck(&mut store, GradcheckOpts::default(), |tape, store| {
            let p = tape.param(store, ParamId(0));
            // Forward y = x*x with a deliberately sign-flipped backward rule.
            let value = tape.value(p).mul(tape.value(p))?;
            let bad = tape.record(
                value,
                vec![p],
                Box::new(|ctx| Ok(vec![ctx.grad.mul(ctx.parents[0])?.scale(-2.0)])),
            );
            Ok(tape.sum_all(bad))
        })
        .unwrap();
        assert!(!report.pass);
        assert!((report.max_rel_err - 2.0).abs() < 1e-3);
    }

    #[test]
    fn batch_gradient_linearity() {
        // Gradient of summed loss over a 2-batch equals the sum of the two
        // single-sample gradients.
        let shape1 = Shape5::new(1, 3, 1, 1, 1);
        let shape2 = Shape5::new(2, 3, 1, 1, 1);
        let xs = [vec![0.5, -1.0, 2.0], vec![1.5, 0.25, -0.75]];
        let weight = vec![0.3, -0.6, 0.9];

        let run = |x: Tensor5<f64>| {
            let mut store = ParamStore::new();
            let wid = store
                .add_param(
                    "w",
                    Tensor5::from_vec(Shape5::new(1, 3, 1, 1, 1), weight.clone()).unwrap(),
                    true,
                )
                .unwrap();
            let mut tape = Tape::new();
            let w = tape.param(&store, wid);
            let n = x.shape().n;
            let xv = tape.constant(x);
            // Broadcast the weight across the batch by explicit tiling.
            let tiled = {
                let mut data = Vec::new();
                for _ in 0..n {
                    data.extend_from_slice(&weight);
                }
                Tensor5::from_vec(Shape5::new(n, 3, 1, 1, 1), data).unwrap()
            };
            let wt = tape.record(
                tiled,
                vec![w],
                Box::new(move |ctx| {
                    let mut g = Tensor5::zeros(Shape5::new(1, 3, 1, 1, 1));
                    for b in 0..n {
                        for c in 0..3 {
                            let v = g.get(0, c, 0, 0, 0) + ctx.grad.get(b, c, 0, 0, 0);
                            g.set(0, c, 0, 0, 0, v);
                        }
                    }
                    Ok(vec![g])
                }),
            );
            let prod = tape.mul(wt, xv).unwrap();
            let sq = tape.mul(prod, prod).unwrap();
            let loss = tape.sum_all(sq);
            tape.backward(loss, &mut store).unwrap();
            store.grad(wid).clone()
        };

        let g1 = run(Tensor5::from_vec(shape1, xs[0].clone()).unwrap());
        let g2 = run(Tensor5::from_vec(shape1, xs[1].clone()).unwrap());
        let g12 = run(
            Tensor5::from_vec(shape2, xs.iter().flatten().copied().collect()).unwrap(),
        );
        let summed = g1.add(&g2).unwrap();
        assert!(g12.max_abs_diff(&summed) <= 1e-12);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = std::env::temp_dir().join("hot_ckpt_test");
        std::fs::remove_dir_all(&dir).ok();
        let mut store = ParamStore::<f64>::new();
        store
            .add_param(
                "layer.weight",
                Tensor5::from_vec(Shape5::new(2, 1, 1, 1, 2), vec![1.0, -2.0, 3.5, 0.25])
                    .unwrap(),
                true,
            )
            .unwrap();
        store
            .add_buffer("layer.running_mean", Tensor5::scalar(0.125))
            .unwrap();
        store.save_checkpoint(&dir).unwrap();

        let mut other = ParamStore::<f64>::new();
        other
            .add_param(
                "layer.weight",
                Tensor5::zeros(Shape5::new(2, 1, 1, 1, 2)),
                true,
            )
            .unwrap();
        other
            .add_buffer("layer.running_mean", Tensor5::scalar(0.0))
            .unwrap();
        other.load_checkpoint(&dir).unwrap();
        assert_eq!(other.value(ParamId(0)).data(), &[1.0, -2.0, 3.5, 0.25]);
        assert_eq!(other.buffer(BufId(0)).data(), &[0.125]);
        std::fs::remove_dir_all(&dir).ok();
    }
}
