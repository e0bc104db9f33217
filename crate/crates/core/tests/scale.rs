//! Counts on a large synthetic dense network: 510 operators spread over 50
//! opcode entries, 1345 tensors of which 811 are constants.

use nnveil_core::format::{
    Activation, BuiltinKind, BuiltinOptions, DType, DenseOptions, OperatorCode, OperatorEntry, OptionsKind, Tensor,
};
use nnveil_core::interpreter::{random_inputs, Session};
use nnveil_core::obfuscate::{obfuscate, ObfuscationConfig, ShapeStrategy, Strategy};
use nnveil_core::{serialize_model, validate, ModelGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const KINDS: [BuiltinKind; 3] = [BuiltinKind::Dense, BuiltinKind::Add, BuiltinKind::Relu];
const WIDTH: u32 = 4;

struct Net {
    g: ModelGraph,
    rng: ChaCha8Rng,
    uses: usize,
}

impl Net {
    fn tensor(&mut self, shape: &[u32], data: Option<Vec<u8>>) -> u32 {
        let buffer_index = match data {
            Some(d) => {
                self.g.buffers.push(d);
                self.g.buffers.len() as u32 - 1
            }
            None => 0,
        };
        self.g.tensors.push(Tensor {
            name: format!("net/t{}", self.g.tensors.len()),
            dtype: DType::F32,
            shape: shape.to_vec(),
            buffer_index,
        });
        self.g.tensors.len() as u32 - 1
    }

    fn weights(&mut self, shape: &[u32]) -> u32 {
        let n: u32 = shape.iter().product();
        let data = (0..n).flat_map(|_| self.rng.gen_range(-0.5f32..0.5).to_le_bytes()).collect();
        self.tensor(shape, Some(data))
    }

    /// Rotates over the opcode entries of `kind`.
    fn opcode(&mut self, kind: BuiltinKind) -> u32 {
        let slots: Vec<usize> = (0..self.g.opcodes.len())
            .filter(|&i| self.g.opcodes[i].kind() == Some(kind))
            .collect();
        self.uses += 1;
        slots[self.uses % slots.len()] as u32
    }

    fn op(&mut self, kind: BuiltinKind, inputs: Vec<u32>, options: BuiltinOptions) -> u32 {
        let y = self.tensor(&[1, WIDTH], None);
        let opcode_index = self.opcode(kind);
        self.g.operators.push(OperatorEntry {
            opcode_index,
            inputs,
            outputs: vec![y],
            options_kind: OptionsKind::Builtin,
            options: options.encode(),
        });
        y
    }
}

fn synthetic() -> ModelGraph {
    let mut net = Net {
        g: ModelGraph::default(),
        rng: ChaCha8Rng::seed_from_u64(50),
        uses: 0,
    };
    net.g.opcodes = (0..50).map(|i| OperatorCode::builtin(KINDS[i % 3])).collect();
    let inputs: Vec<u32> = (0..24).map(|_| net.tensor(&[1, WIDTH], None)).collect();
    net.g.graph_inputs = inputs.clone();

    let dense = BuiltinOptions::Dense(DenseOptions {
        activation: Activation::None,
    });
    let mut x = inputs[0];
    let (mut n_dense, mut n_add, mut n_relu) = (0, 0, 0);
    for i in 0..510 {
        x = if i % 5 == 2 && n_add < 23 {
            n_add += 1;
            net.op(BuiltinKind::Add, vec![x, inputs[n_add]], BuiltinOptions::None)
        } else if i % 5 == 4 && n_relu < 81 {
            n_relu += 1;
            net.op(BuiltinKind::Relu, vec![x], BuiltinOptions::None)
        } else {
            n_dense += 1;
            let w = net.weights(&[WIDTH, WIDTH]);
            let mut ins = vec![x, w];
            if n_dense > 1 {
                ins.push(net.weights(&[WIDTH]));
            }
            net.op(BuiltinKind::Dense, ins, dense)
        };
    }
    net.g.graph_outputs = vec![x];
    assert_eq!((n_dense, n_add, n_relu), (406, 23, 81));
    net.g
}

#[test]
fn synthetic_counts() {
    let g = synthetic();
    assert!(validate(&g).is_empty());
    assert_eq!(g.opcodes.len(), 50);
    assert_eq!(g.operators.len(), 510);
    assert_eq!(g.tensors.len(), 1345);
    assert_eq!(g.constant_tensor_count(), 811);

    let cfg = ObfuscationConfig::with(3, &[Strategy::Rename, Strategy::Encapsulate], 0, 0);
    let ob = obfuscate(&g, &cfg).unwrap();
    assert_eq!(ob.model.opcodes.len(), 510);
    assert_eq!(ob.model.tensors.len(), 534);
    assert_eq!(ob.bundle.weight_bytes(), g.constant_bytes());
}

#[test]
fn synthetic_full_obfuscation_is_exact() {
    let g = synthetic();
    let ob = obfuscate(&g, &ObfuscationConfig::all(9, 30, 30, ShapeStrategy::AlignToLargest)).unwrap();
    assert_eq!(ob.model.operators.len(), 540);
    assert_eq!(ob.model.opcodes.len(), 540);
    assert!(serialize_model(&ob.model).unwrap().len() < serialize_model(&g).unwrap().len());
    let a = Session::new(&g, None).unwrap();
    let b = Session::new(&ob.model, Some(&ob.bundle)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let x = random_inputs(&g, &mut rng);
        let ya = a.infer(x.clone()).unwrap();
        let yb = b.infer(x).unwrap();
        assert!(ya[0].bit_eq(&yb[0]));
    }
}
