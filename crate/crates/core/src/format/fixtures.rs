//! Small reference models with seeded weights.
//!
//! | fixture         | operators | tensors | constants | layers                                              |
//! |-----------------|-----------|---------|-----------|-----------------------------------------------------|
//! | `mlp`           | 6         | 13      | 6         | dense, relu, dense, relu6, dense, softmax           |
//! | `lenet`         | 7         | 14      | 6         | conv, maxpool, conv, maxpool, dense, dense, softmax |
//! | `branchy`       | 8         | 16      | 7         | two convs joined by add and concat, pool, reshape, dense, softmax |
//! | `depthwise_net` | 7         | 17      | 9         | conv, depthwise conv, pointwise conv, avgpool, reshape, dense, softmax |
//! | `pool_net`      | 9         | 18      | 8         | maxpool, conv, avgpool, conv, maxpool, flatten, dense, dense, softmax |
//!
//! Weights and biases are drawn uniformly from [-0.5, 0.5] with one ChaCha
//! stream per constant tensor, so every fixture is a pure function of
//! `(id, seed)`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    element_count, Activation, BuiltinKind, BuiltinOptions, ConcatOptions, ConvOptions, DType,
    DenseOptions, FormatError, ModelGraph, OperatorCode, OperatorEntry, OptionsKind, Padding,
    PoolOptions, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FixtureId {
    Mlp,
    Lenet,
    Branchy,
    DepthwiseNet,
    PoolNet,
}

/// Declared sizes of a fixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixtureCounts {
    pub operators: usize,
    pub tensors: usize,
    pub constants: usize,
}

impl FixtureId {
    pub const ALL: [FixtureId; 5] = [
        FixtureId::Mlp,
        FixtureId::Lenet,
        FixtureId::Branchy,
        FixtureId::DepthwiseNet,
        FixtureId::PoolNet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FixtureId::Mlp => "mlp",
            FixtureId::Lenet => "lenet",
            FixtureId::Branchy => "branchy",
            FixtureId::DepthwiseNet => "depthwise_net",
            FixtureId::PoolNet => "pool_net",
        }
    }

    pub fn counts(self) -> FixtureCounts {
        let (operators, tensors, constants) = match self {
            FixtureId::Mlp => (6, 13, 6),
            FixtureId::Lenet => (7, 14, 6),
            FixtureId::Branchy => (8, 16, 7),
            FixtureId::DepthwiseNet => (7, 17, 9),
            FixtureId::PoolNet => (9, 18, 8),
        };
        FixtureCounts {
            operators,
            tensors,
            constants,
        }
    }
}

impl fmt::Display for FixtureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FixtureId {
    type Err = FormatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| FormatError::UnknownFixture(s.to_string()))
    }
}

struct Builder {
    prefix: &'static str,
    seed: u64,
    graph: ModelGraph,
}

impl Builder {
    fn new(prefix: &'static str, seed: u64) -> Self {
        Self {
            prefix,
            seed,
            graph: ModelGraph::default(),
        }
    }

    fn activation(&mut self, name: &str, shape: &[u32]) -> u32 {
        self.graph.tensors.push(Tensor {
            name: format!("{}/{}", self.prefix, name),
            dtype: DType::F32,
            shape: shape.to_vec(),
            buffer_index: 0,
        });
        self.graph.tensors.len() as u32 - 1
    }

    fn constant(&mut self, name: &str, dtype: DType, shape: &[u32], data: Vec<u8>) -> u32 {
        debug_assert_eq!(data.len(), element_count(shape) * dtype.size());
        self.graph.buffers.push(data);
        self.graph.tensors.push(Tensor {
            name: format!("{}/{}", self.prefix, name),
            dtype,
            shape: shape.to_vec(),
            buffer_index: self.graph.buffers.len() as u32 - 1,
        });
        self.graph.tensors.len() as u32 - 1
    }

    /// Uniform [-0.5, 0.5] F32 constant from the stream of this buffer slot.
    fn weights(&mut self, name: &str, shape: &[u32]) -> u32 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.graph.buffers.len() as u64);
        let data = (0..element_count(shape))
            .flat_map(|_| rng.gen_range(-0.5f32..=0.5).to_le_bytes())
            .collect();
        self.constant(name, DType::F32, shape, data)
    }

    fn shape_const(&mut self, name: &str, target: &[i32]) -> u32 {
        let data = target.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.constant(name, DType::I32, &[target.len() as u32], data)
    }

    fn op(&mut self, kind: BuiltinKind, options: BuiltinOptions, inputs: &[u32], output: u32) -> u32 {
        let code = OperatorCode::builtin(kind);
        let opcode_index = match self.graph.opcodes.iter().position(|c| *c == code) {
            Some(i) => i,
            None => {
                self.graph.opcodes.push(code);
                self.graph.opcodes.len() - 1
            }
        } as u32;
        self.graph.operators.push(OperatorEntry {
            opcode_index,
            inputs: inputs.to_vec(),
            outputs: vec![output],
            options_kind: OptionsKind::Builtin,
            options: options.encode(),
        });
        output
    }

    fn input(&mut self, shape: &[u32]) -> u32 {
        let t = self.activation("input", shape);
        self.graph.graph_inputs.push(t);
        t
    }

    fn conv(
        &mut self,
        layer: &str,
        x: u32,
        weights: &[u32],
        bias: bool,
        options: ConvOptions,
        out_shape: &[u32],
    ) -> u32 {
        let w = self.weights(&format!("{layer}/weights"), weights);
        let mut inputs = vec![x, w];
        if bias {
            inputs.push(self.weights(&format!("{layer}/bias"), &[weights[0]]));
        }
        let y = self.activation(&format!("{layer}/Conv2D"), out_shape);
        self.op(BuiltinKind::Conv2D, BuiltinOptions::Conv(options), &inputs, y)
    }

    fn depthwise(&mut self, layer: &str, x: u32, weights: &[u32], options: ConvOptions, out_shape: &[u32]) -> u32 {
        let w = self.weights(&format!("{layer}/depthwise_weights"), weights);
        let b = self.weights(&format!("{layer}/bias"), &[weights[3]]);
        let y = self.activation(&format!("{layer}/DepthwiseConv2D"), out_shape);
        self.op(BuiltinKind::DepthwiseConv2D, BuiltinOptions::Conv(options), &[x, w, b], y)
    }

    fn dense(&mut self, layer: &str, x: u32, units: u32, in_features: u32, act: Activation) -> u32 {
        let w = self.weights(&format!("{layer}/kernel"), &[units, in_features]);
        let b = self.weights(&format!("{layer}/bias"), &[units]);
        let y = self.activation(&format!("{layer}/MatMul"), &[1, units]);
        let opts = BuiltinOptions::Dense(DenseOptions { activation: act });
        self.op(BuiltinKind::Dense, opts, &[x, w, b], y)
    }

    fn pool(&mut self, kind: BuiltinKind, layer: &str, x: u32, opts: PoolOptions, out_shape: &[u32]) -> u32 {
        let y = self.activation(&format!("{layer}/{}", kind.name()), out_shape);
        self.op(kind, BuiltinOptions::Pool(opts), &[x], y)
    }

    fn unary(&mut self, kind: BuiltinKind, layer: &str, x: u32, out_shape: &[u32]) -> u32 {
        let y = self.activation(&format!("{layer}/{}", kind.name()), out_shape);
        self.op(kind, BuiltinOptions::None, &[x], y)
    }

    fn reshape(&mut self, layer: &str, x: u32, target: &[i32]) -> u32 {
        let s = self.shape_const(&format!("{layer}/shape"), target);
        let out: Vec<u32> = target.iter().map(|&d| d as u32).collect();
        let y = self.activation(&format!("{layer}/Reshape"), &out);
        self.op(BuiltinKind::Reshape, BuiltinOptions::None, &[x, s], y)
    }

    fn finish(mut self, output: u32) -> ModelGraph {
        self.graph.graph_outputs.push(output);
        self.graph
    }
}

/// Builds one of the reference fixtures.
pub fn build_fixture(id: FixtureId, seed: u64) -> ModelGraph {
    use Activation as A;
    use BuiltinKind as K;
    let mut b = Builder::new(id.name(), seed);
    let out = match id {
        FixtureId::Mlp => {
            let x = b.input(&[1, 256]);
            let h = b.dense("fc1", x, 256, 256, A::None);
            let h = b.unary(K::Relu, "fc1", h, &[1, 256]);
            let h = b.dense("fc2", h, 128, 256, A::None);
            let h = b.unary(K::Relu6, "fc2", h, &[1, 128]);
            let h = b.dense("logits", h, 10, 128, A::None);
            b.unary(K::Softmax, "probs", h, &[1, 10])
        }
        FixtureId::Lenet => {
            let x = b.input(&[1, 28, 28, 1]);
            let valid_relu = ConvOptions::new(1, Padding::Valid, A::Relu);
            let h = b.conv("conv1", x, &[6, 5, 5, 1], false, valid_relu, &[1, 24, 24, 6]);
            let h = b.pool(K::MaxPool2D, "pool1", h, PoolOptions::new(2, 2, Padding::Valid), &[1, 12, 12, 6]);
            let h = b.conv("conv2", h, &[16, 5, 5, 6], false, valid_relu, &[1, 8, 8, 16]);
            let h = b.pool(K::MaxPool2D, "pool2", h, PoolOptions::new(2, 2, Padding::Valid), &[1, 4, 4, 16]);
            let h = b.dense("fc1", h, 64, 256, A::Relu);
            let h = b.dense("fc2", h, 10, 64, A::None);
            b.unary(K::Softmax, "probs", h, &[1, 10])
        }
        FixtureId::Branchy => {
            let x = b.input(&[1, 16, 16, 4]);
            let left = b.conv("left", x, &[8, 1, 1, 4], true, ConvOptions::new(1, Padding::Valid, A::Relu), &[1, 16, 16, 8]);
            let right = b.conv("right", x, &[8, 3, 3, 4], true, ConvOptions::new(1, Padding::Same, A::None), &[1, 16, 16, 8]);
            let sum = b.activation("merge/Add", &[1, 16, 16, 8]);
            let sum = b.op(K::Add, BuiltinOptions::None, &[left, right], sum);
            let cat = b.activation("merge/Concat", &[1, 16, 16, 16]);
            let cat = b.op(K::Concat, BuiltinOptions::Concat(ConcatOptions { axis: 3 }), &[sum, left], cat);
            let h = b.pool(K::MaxPool2D, "pool", cat, PoolOptions::new(2, 2, Padding::Valid), &[1, 8, 8, 16]);
            let h = b.reshape("flatten", h, &[1, 1024]);
            let h = b.dense("logits", h, 10, 1024, A::None);
            b.unary(K::Softmax, "probs", h, &[1, 10])
        }
        FixtureId::DepthwiseNet => {
            let x = b.input(&[1, 20, 20, 3]);
            let h = b.conv("stem", x, &[16, 3, 3, 3], true, ConvOptions::new(2, Padding::Same, A::Relu6), &[1, 10, 10, 16]);
            let h = b.depthwise("block/dw", h, &[1, 3, 3, 16], ConvOptions::new(1, Padding::Same, A::Relu), &[1, 10, 10, 16]);
            let h = b.conv("block/pw", h, &[32, 1, 1, 16], true, ConvOptions::new(1, Padding::Valid, A::Relu6), &[1, 10, 10, 32]);
            let h = b.pool(K::AvgPool2D, "gap", h, PoolOptions::new(10, 1, Padding::Valid), &[1, 1, 1, 32]);
            let h = b.reshape("squeeze", h, &[1, 32]);
            let h = b.dense("logits", h, 6, 32, A::None);
            b.unary(K::Softmax, "probs", h, &[1, 6])
        }
        FixtureId::PoolNet => {
            let x = b.input(&[1, 32, 32, 1]);
            let h = b.pool(K::MaxPool2D, "down", x, PoolOptions::new(2, 2, Padding::Valid), &[1, 16, 16, 1]);
            let h = b.conv("conv1", h, &[8, 3, 3, 1], true, ConvOptions::new(1, Padding::Same, A::Relu), &[1, 16, 16, 8]);
            let h = b.pool(K::AvgPool2D, "pool1", h, PoolOptions::new(2, 2, Padding::Valid), &[1, 8, 8, 8]);
            let h = b.conv("conv2", h, &[8, 3, 3, 8], true, ConvOptions::new(1, Padding::Same, A::Relu), &[1, 8, 8, 8]);
            let h = b.pool(K::MaxPool2D, "pool2", h, PoolOptions::new(2, 2, Padding::Valid), &[1, 4, 4, 8]);
            let h = b.unary(K::Flatten, "flatten", h, &[1, 128]);
            let h = b.dense("fc1", h, 8, 128, A::Relu);
            let h = b.dense("fc2", h, 4, 8, A::None);
            b.unary(K::Softmax, "probs", h, &[1, 4])
        }
    };
    b.finish(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(g: &ModelGraph) -> Vec<BuiltinKind> {
        g.operators.iter().map(|op| g.opcode_of(op).kind().unwrap()).collect()
    }

    #[test]
    fn deterministic() {
        for id in FixtureId::ALL {
            assert_eq!(build_fixture(id, 7), build_fixture(id, 7));
        }
        assert_ne!(build_fixture(FixtureId::Lenet, 7), build_fixture(FixtureId::Lenet, 8));
    }

    #[test]
    fn declared_counts() {
        for id in FixtureId::ALL {
            let g = build_fixture(id, 1);
            let c = id.counts();
            assert_eq!(g.operators.len(), c.operators, "{id}");
            assert_eq!(g.tensors.len(), c.tensors, "{id}");
            assert_eq!(g.constant_tensor_count(), c.constants, "{id}");
        }
    }

    #[test]
    fn lenet_layers() {
        let k = kinds(&build_fixture(FixtureId::Lenet, 7));
        let count = |x| k.iter().filter(|&&y| y == x).count();
        assert!(count(BuiltinKind::Conv2D) >= 2);
        assert!(count(BuiltinKind::MaxPool2D) + count(BuiltinKind::AvgPool2D) >= 1);
        assert!(count(BuiltinKind::Dense) >= 1);
        assert_eq!(*k.last().unwrap(), BuiltinKind::Softmax);
        // four weight tensors and two biases
        let g = build_fixture(FixtureId::Lenet, 7);
        let consts: Vec<&str> = g.tensors.iter().filter(|t| t.is_constant()).map(|t| t.name.as_str()).collect();
        assert_eq!(consts.iter().filter(|n| n.ends_with("bias")).count(), 2);
        assert_eq!(consts.len() - 2, 4);
    }

    #[test]
    fn branchy_add_has_two_producers() {
        let g = build_fixture(FixtureId::Branchy, 7);
        let producers = g.producers();
        let adds: Vec<_> = g
            .operators
            .iter()
            .filter(|op| g.opcode_of(op).kind() == Some(BuiltinKind::Add))
            .collect();
        assert_eq!(adds.len(), 1);
        let p: Vec<_> = adds[0].inputs.iter().map(|&t| producers[t as usize].unwrap()).collect();
        assert_eq!(p.len(), 2);
        assert_ne!(p[0], p[1]);
    }

    #[test]
    fn weights_in_range() {
        let g = build_fixture(FixtureId::Mlp, 11);
        for t in g.tensors.iter().filter(|t| t.dtype == DType::F32 && t.is_constant()) {
            for c in g.buffers[t.buffer_index as usize].chunks_exact(4) {
                let v = f32::from_le_bytes(c.try_into().unwrap());
                assert!((-0.5..=0.5).contains(&v));
            }
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!("depthwise_net".parse::<FixtureId>().unwrap(), FixtureId::DepthwiseNet);
        assert!(matches!("resnet".parse::<FixtureId>(), Err(FormatError::UnknownFixture(_))));
    }
}
