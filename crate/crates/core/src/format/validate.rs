use std::fmt;

use super::{element_count, BuiltinOptions, ModelGraph, OptionsKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    IndexOutOfRange,
    DuplicateOutput,
    Cycle,
    Other,
}

/// One broken invariant, located by a field path such as
/// `operators[3].inputs[1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Custom operator names are one upper-case ASCII letter followed by five
/// lower-case ones.
pub fn is_custom_name(s: &str) -> bool {
    let b = s.as_bytes();
    b.len() == 6 && b[0].is_ascii_uppercase() && b[1..].iter().all(u8::is_ascii_lowercase)
}

struct Collector(Vec<Violation>);

impl Collector {
    fn push(&mut self, kind: ViolationKind, path: impl Into<String>, message: impl Into<String>) {
        self.0.push(Violation {
            kind,
            path: path.into(),
            message: message.into(),
        });
    }

    fn index(&mut self, path: String, index: u32, len: usize) -> bool {
        if (index as usize) < len {
            return true;
        }
        self.push(
            ViolationKind::IndexOutOfRange,
            path,
            format!("index {index} out of range (len {len})"),
        );
        false
    }
}

/// Reports every violated invariant. An empty result means the graph can be
/// executed in stored order.
pub fn validate(graph: &ModelGraph) -> Vec<Violation> {
    let mut c = Collector(Vec::new());
    let n_tensors = graph.tensors.len();

    match graph.buffers.first() {
        None => c.push(ViolationKind::Other, "buffers", "reserved buffer 0 is missing"),
        Some(b) if !b.is_empty() => {
            c.push(ViolationKind::Other, "buffers[0]", "reserved buffer 0 must be empty")
        }
        _ => {}
    }

    for (i, code) in graph.opcodes.iter().enumerate() {
        let path = format!("opcodes[{i}]");
        if code.is_custom() {
            if code.custom_name.is_empty() {
                c.push(ViolationKind::Other, path, "custom opcode without a name");
            } else if !is_custom_name(&code.custom_name) {
                c.push(
                    ViolationKind::Other,
                    path,
                    format!("custom name {:?} is not of the form [A-Z][a-z]{{5}}", code.custom_name),
                );
            }
        } else if !code.custom_name.is_empty() {
            c.push(ViolationKind::Other, path, "builtin opcode carries a custom name");
        } else if code.kind().is_none() {
            c.push(
                ViolationKind::Other,
                path,
                format!("unknown builtin code {}", code.builtin_code),
            );
        }
    }

    for (i, t) in graph.tensors.iter().enumerate() {
        if let Some(j) = t.shape.iter().position(|&d| d == 0) {
            c.push(
                ViolationKind::Other,
                format!("tensors[{i}].shape[{j}]"),
                "dimension must be at least 1",
            );
        }
        if t.buffer_index != 0
            && c.index(format!("tensors[{i}].buffer_index"), t.buffer_index, graph.buffers.len())
        {
            let have = graph.buffers[t.buffer_index as usize].len();
            let want = element_count(&t.shape) * t.dtype.size();
            if have != want {
                c.push(
                    ViolationKind::Other,
                    format!("tensors[{i}].buffer_index"),
                    format!("buffer {} holds {have} bytes, shape needs {want}", t.buffer_index),
                );
            }
        }
    }

    for (k, &t) in graph.graph_inputs.iter().enumerate() {
        c.index(format!("graph_inputs[{k}]"), t, n_tensors);
    }

    let is_input: Vec<bool> = {
        let mut v = vec![false; n_tensors];
        for &t in &graph.graph_inputs {
            if let Some(s) = v.get_mut(t as usize) {
                *s = true;
            }
        }
        v
    };

    // First producer of each tensor.
    let mut producer: Vec<Option<usize>> = vec![None; n_tensors];
    for (i, op) in graph.operators.iter().enumerate() {
        let base = format!("operators[{i}]");
        if c.index(format!("{base}.opcode_index"), op.opcode_index, graph.opcodes.len()) {
            let code = &graph.opcodes[op.opcode_index as usize];
            match (code.is_custom(), op.options_kind) {
                (true, OptionsKind::Builtin) => c.push(
                    ViolationKind::Other,
                    format!("{base}.options_kind"),
                    "custom operator with builtin options",
                ),
                (false, OptionsKind::Custom) => c.push(
                    ViolationKind::Other,
                    format!("{base}.options_kind"),
                    "builtin operator with custom options",
                ),
                (false, OptionsKind::Builtin) => {
                    if let Some(kind) = code.kind() {
                        if let Err(e) = BuiltinOptions::decode(kind, &op.options) {
                            c.push(ViolationKind::Other, format!("{base}.options"), e.to_string());
                        }
                    }
                }
                (true, OptionsKind::Custom) => {}
            }
        }
        for (j, &t) in op.inputs.iter().enumerate() {
            c.index(format!("{base}.inputs[{j}]"), t, n_tensors);
        }
        if op.outputs.is_empty() {
            c.push(ViolationKind::Other, format!("{base}.outputs"), "operator has no outputs");
        }
        for (j, &t) in op.outputs.iter().enumerate() {
            let path = format!("{base}.outputs[{j}]");
            if !c.index(path.clone(), t, n_tensors) {
                continue;
            }
            let tu = t as usize;
            if graph.tensors[tu].is_constant() {
                c.push(ViolationKind::Other, path, format!("writes constant tensor {t}"));
            } else if is_input[tu] {
                c.push(ViolationKind::Other, path, format!("writes graph input {t}"));
            } else if let Some(prev) = producer[tu] {
                c.push(
                    ViolationKind::DuplicateOutput,
                    format!("operators[{prev}].outputs, {base}.outputs"),
                    format!("operators {prev} and {i} both write tensor {t}"),
                );
            } else {
                producer[tu] = Some(i);
            }
        }
    }

    // Data-flow order. Edges from a producer to any consumer; a back edge is
    // either a cycle or merely a misordering.
    let mut back_edges = Vec::new();
    for (i, op) in graph.operators.iter().enumerate() {
        for (j, &t) in op.inputs.iter().enumerate() {
            let Some(tensor) = graph.tensors.get(t as usize) else {
                continue;
            };
            if tensor.is_constant() || is_input[t as usize] {
                continue;
            }
            match producer[t as usize] {
                None => c.push(
                    ViolationKind::Other,
                    format!("operators[{i}].inputs[{j}]"),
                    format!("tensor {t} is never produced"),
                ),
                Some(p) if p >= i => back_edges.push((i, j, t, p)),
                Some(_) => {}
            }
        }
    }
    if !back_edges.is_empty() {
        if let Some(cycle) = find_cycle(graph, &producer) {
            c.push(
                ViolationKind::Cycle,
                "operators",
                format!("cycle through operators {cycle:?}"),
            );
        } else {
            for (i, j, t, p) in back_edges {
                c.push(
                    ViolationKind::Other,
                    format!("operators[{i}].inputs[{j}]"),
                    format!("tensor {t} is produced later by operator {p}"),
                );
            }
        }
    }

    for (k, &t) in graph.graph_outputs.iter().enumerate() {
        let path = format!("graph_outputs[{k}]");
        if c.index(path.clone(), t, n_tensors)
            && producer[t as usize].is_none()
            && !is_input[t as usize]
        {
            c.push(
                ViolationKind::Other,
                path,
                format!("tensor {t} is neither produced nor a graph input"),
            );
        }
    }

    c.0
}

/// Returns the operators on some data-flow cycle, if one exists.
fn find_cycle(graph: &ModelGraph, producer: &[Option<usize>]) -> Option<Vec<usize>> {
    let n = graph.operators.len();
    let mut succ = vec![Vec::new(); n];
    for (v, op) in graph.operators.iter().enumerate() {
        for &t in &op.inputs {
            if let Some(Some(u)) = producer.get(t as usize) {
                succ[*u].push(v);
            }
        }
    }
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state = vec![0u8; n];
    let mut stack: Vec<(usize, usize)> = Vec::new();
    let mut path: Vec<usize> = Vec::new();
    for start in 0..n {
        if state[start] != 0 {
            continue;
        }
        stack.push((start, 0));
        state[start] = 1;
        path.push(start);
        while let Some(top) = stack.last_mut() {
            let node = top.0;
            if let Some(&s) = succ[node].get(top.1) {
                top.1 += 1;
                match state[s] {
                    0 => {
                        state[s] = 1;
                        stack.push((s, 0));
                        path.push(s);
                    }
                    1 => {
                        let at = path.iter().position(|&p| p == s).unwrap();
                        return Some(path[at..].to_vec());
                    }
                    _ => {}
                }
            } else {
                state[node] = 2;
                stack.pop();
                path.pop();
            }
        }
    }
    None
}
