//! Parameter storage and small network building blocks on the tape.
//!
//! Networks are described as shapes registered in a [`ParamStore`]; each
//! training step stages the current values onto a fresh tape as leaves and
//! reads gradients back by name after the backward sweep.

use std::collections::HashMap;

use rand::Rng;

use crate::diff::{Tape, TensorId};

#[derive(Clone, Debug)]
pub struct Param {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Ordered name -> tensor map. Iteration order is registration order, which
/// keeps checkpoints and optimizer sweeps deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    order: Vec<String>,
    map: HashMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, shape: &[usize], values: Vec<f64>) {
        assert_eq!(shape.iter().product::<usize>(), values.len(), "{name}: shape/value mismatch");
        let prev = self.map.insert(name.to_string(), Param { shape: shape.to_vec(), values });
        assert!(prev.is_none(), "duplicate parameter {name}");
        self.order.push(name.to_string());
    }

    pub fn names(&self) -> &[String] {
        &self.order
    }

    pub fn get(&self, name: &str) -> &Param {
        self.map.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Param {
        self.map.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    /// Swaps a parameter's contents, allowing the shape to change. Used when
    /// the gaussian count grows or shrinks between steps.
    pub fn replace(&mut self, name: &str, shape: &[usize], values: Vec<f64>) {
        assert_eq!(shape.iter().product::<usize>(), values.len(), "{name}: shape/value mismatch");
        let p = self.get_mut(name);
        p.shape = shape.to_vec();
        p.values = values;
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Puts every parameter on the tape as a gradient-tracked leaf.
    pub fn stage(&self, tape: &mut Tape) -> Staged {
        let mut ids = HashMap::new();
        for name in &self.order {
            let p = &self.map[name];
            ids.insert(name.clone(), tape.leaf(&p.shape, p.values.clone()));
        }
        Staged { ids }
    }
}

/// Tensor ids of staged parameters for one tape lifetime.
#[derive(Clone, Debug)]
pub struct Staged {
    ids: HashMap<String, TensorId>,
}

impl Staged {
    pub fn id(&self, name: &str) -> TensorId {
        *self.ids.get(name).unwrap_or_else(|| panic!("parameter {name} not staged"))
    }

    pub fn insert(&mut self, name: &str, id: TensorId) {
        self.ids.insert(name.to_string(), id);
    }
}

/// Standard normal via Box-Muller.
pub fn normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn he_init(rng: &mut impl Rng, fan_in: usize, count: usize) -> Vec<f64> {
    let std = (2.0 / fan_in as f64).sqrt();
    (0..count).map(|_| normal(rng) * std).collect()
}

/// Fully connected stack; ReLU between layers, linear output.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub prefix: String,
    pub dims: Vec<usize>,
}

impl Mlp {
    pub fn new(prefix: &str, dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least one layer");
        Mlp { prefix: prefix.to_string(), dims: dims.to_vec() }
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        for l in 0..self.dims.len() - 1 {
            let (din, dout) = (self.dims[l], self.dims[l + 1]);
            store.register(&format!("{}.w{l}", self.prefix), &[din, dout], he_init(rng, din, din * dout));
            store.register(&format!("{}.b{l}", self.prefix), &[dout], vec![0.0; dout]);
        }
    }

    /// x is (n, dims[0]); returns (n, dims.last()).
    pub fn forward(&self, tape: &mut Tape, staged: &Staged, x: TensorId) -> TensorId {
        let n = tape.shape(x)[0];
        let mut h = x;
        for l in 0..self.dims.len() - 1 {
            let w = staged.id(&format!("{}.w{l}", self.prefix));
            let b = staged.id(&format!("{}.b{l}", self.prefix));
            let z = tape.matmul(h, w);
            let bb = tape.broadcast_row(b, n);
            h = tape.add(z, bb);
            if l + 1 < self.dims.len() - 1 {
                h = tape.relu(h);
            }
        }
        h
    }
}

/// Compact UNet: 3x3 conv stem, `depth` pool/conv stages doubling channels,
/// transposed-conv decoder with skip concatenation, 1x1 linear head.
/// Spatial extent must be divisible by 2^depth.
#[derive(Clone, Debug)]
pub struct UNet {
    pub prefix: String,
    pub in_ch: usize,
    pub base: usize,
    pub depth: usize,
    pub out_ch: usize,
}

pub struct UNetOutput {
    pub head: TensorId,
    /// Deepest feature map, (base * 2^depth, H/2^depth, W/2^depth).
    pub bottleneck: TensorId,
}

impl UNet {
    pub fn new(prefix: &str, in_ch: usize, base: usize, depth: usize, out_ch: usize) -> Self {
        UNet { prefix: prefix.to_string(), in_ch, base, depth, out_ch }
    }

    pub fn bottleneck_ch(&self) -> usize {
        self.base << self.depth
    }

    pub fn register(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        fn conv<R: Rng>(store: &mut ParamStore, rng: &mut R, name: String, o: usize, c: usize, k: usize) {
            let fan = c * k * k;
            store.register(&format!("{name}.w"), &[o, c, k, k], he_init(rng, fan, o * fan));
            store.register(&format!("{name}.b"), &[o], vec![0.0; o]);
        }
        conv(store, rng, format!("{}.stem", self.prefix), self.base, self.in_ch, 3);
        for i in 1..=self.depth {
            let c = self.base << (i - 1);
            conv(store, rng, format!("{}.enc{i}", self.prefix), c * 2, c, 3);
        }
        for i in (1..=self.depth).rev() {
            let c = self.base << i;
            // transposed conv weight layout is (C_in, C_out, kh, kw)
            let fan = c * 4;
            store.register(
                &format!("{}.up{i}.w", self.prefix),
                &[c, c / 2, 2, 2],
                he_init(rng, fan, c * (c / 2) * 4),
            );
            store.register(&format!("{}.up{i}.b", self.prefix), &[c / 2], vec![0.0; c / 2]);
            conv(store, rng, format!("{}.dec{i}", self.prefix), c / 2, c, 3);
        }
        conv(store, rng, format!("{}.head", self.prefix), self.out_ch, self.base, 1);
    }

    pub fn forward(&self, tape: &mut Tape, staged: &Staged, x: TensorId) -> UNetOutput {
        let conv = |tape: &mut Tape, staged: &Staged, name: String, x: TensorId, pad: usize| {
            let w = staged.id(&format!("{name}.w"));
            let b = staged.id(&format!("{name}.b"));
            tape.conv2d(x, w, Some(b), 1, pad)
        };
        let s = tape.shape(x).to_vec();
        assert_eq!(s[0], self.in_ch, "{}: channel mismatch", self.prefix);
        assert!(
            s[1] % (1 << self.depth) == 0 && s[2] % (1 << self.depth) == 0,
            "{}: spatial extent must divide 2^depth",
            self.prefix
        );

        let mut skips = Vec::with_capacity(self.depth);
        let mut h = conv(tape, staged, format!("{}.stem", self.prefix), x, 1);
        h = tape.relu(h);
        for i in 1..=self.depth {
            skips.push(h);
            let pooled = tape.avg_pool2(h);
            h = conv(tape, staged, format!("{}.enc{i}", self.prefix), pooled, 1);
            h = tape.relu(h);
        }
        let bottleneck = h;
        for i in (1..=self.depth).rev() {
            let w = staged.id(&format!("{}.up{i}.w", self.prefix));
            let b = staged.id(&format!("{}.up{i}.b", self.prefix));
            let up = tape.conv_transpose2d(h, w, Some(b), 2, 0);
            let cat = tape.concat_ch(up, skips[i - 1]);
            h = conv(tape, staged, format!("{}.dec{i}", self.prefix), cat, 1);
            h = tape.relu(h);
        }
        let head = conv(tape, staged, format!("{}.head", self.prefix), h, 0);
        UNetOutput { head, bottleneck }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mlp_shapes_and_gradient_flow() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new("m", &[4, 8, 3]);
        mlp.register(&mut store, &mut rng);
        let mut tape = Tape::new();
        let staged = store.stage(&mut tape);
        let x = tape.constant(&[5, 4], (0..20).map(|i| i as f64 * 0.1).collect());
        let y = mlp.forward(&mut tape, &staged, x);
        assert_eq!(tape.shape(y), &[5, 3]);
        let loss = tape.sum(y);
        tape.backward(loss);
        let gw = tape.grad(staged.id("m.w0"));
        assert!(gw.iter().any(|v| v.abs() > 0.0));
    }

    #[test]
    fn unet_shapes_and_bottleneck() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = UNet::new("u", 3, 4, 2, 1);
        net.register(&mut store, &mut rng);
        let mut tape = Tape::new();
        let staged = store.stage(&mut tape);
        let x = tape.constant(&[3, 16, 16], vec![0.3; 3 * 256]);
        let out = net.forward(&mut tape, &staged, x);
        assert_eq!(tape.shape(out.head), &[1, 16, 16]);
        assert_eq!(tape.shape(out.bottleneck), &[16, 4, 4]);
        let loss = tape.sum(out.head);
        tape.backward(loss);
        assert!(tape.grad(staged.id("u.stem.w")).iter().any(|v| v.abs() > 0.0));
        assert!(tape.grad(staged.id("u.enc2.w")).iter().any(|v| v.abs() > 0.0));
    }

    #[test]
    fn duplicate_registration_rejected() {
        let mut store = ParamStore::new();
        store.register("a", &[1], vec![0.0]);
        let r = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            store.register("a", &[1], vec![0.0]);
        }));
        assert!(r.is_err());
    }
}
