//! The torus `Z_m^d`, its integer encoding and the two jump-operator families.
//!
//! States are encoded little-endian mixed radix: coordinate 0 is the least
//! significant digit, so `index = sum_i coords[i] * m^i`. Axes are 0-based
//! throughout the crate.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Vocabulary size `m` and dimension `d` of the torus.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatticeSpec {
    m: usize,
    d: usize,
    size: usize,
    strides: Vec<usize>,
}

impl LatticeSpec {
    /// Rejects `m < 2`, `d < 1` and state counts that overflow `usize`.
    pub fn new(m: usize, d: usize) -> Result<Self> {
        if m < 2 {
            return invalid(format!("vocabulary size m = {m} must be >= 2"));
        }
        if d < 1 {
            return invalid(format!("dimension d = {d} must be >= 1"));
        }
        let mut strides = Vec::with_capacity(d);
        let mut size: usize = 1;
        for _ in 0..d {
            strides.push(size);
            size = match size.checked_mul(m) {
                Some(s) => s,
                None => return invalid(format!("m^d overflows for m = {m}, d = {d}")),
            };
        }
        Ok(Self { m, d, size, strides })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of states `m^d`.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    pub fn encode(&self, coords: &[usize]) -> Result<usize> {
        if coords.len() != self.d {
            return invalid(format!("expected {} coordinates, got {}", self.d, coords.len()));
        }
        let mut index = 0;
        for (axis, &c) in coords.iter().enumerate() {
            if c >= self.m {
                return invalid(format!("coordinate {c} on axis {axis} outside [0, {}]", self.m - 1));
            }
            index += c * self.strides[axis];
        }
        Ok(index)
    }

    /// Inverse of [`encode`](Self::encode). `index` must be below [`size`](Self::size).
    pub fn decode(&self, index: usize) -> Vec<usize> {
        debug_assert!(index < self.size);
        (0..self.d).map(|axis| self.coord(index, axis)).collect()
    }

    #[inline]
    pub fn coord(&self, index: usize, axis: usize) -> usize {
        (index / self.strides[axis]) % self.m
    }

    pub fn state(&self, index: usize) -> Result<State> {
        if index >= self.size {
            return invalid(format!("state index {index} outside [0, {})", self.size));
        }
        Ok(State { m: self.m, coords: self.decode(index), index })
    }

    pub fn state_from_coords(&self, coords: &[usize]) -> Result<State> {
        let index = self.encode(coords)?;
        Ok(State { m: self.m, coords: coords.to_vec(), index })
    }

    /// Hamming distance between two encoded states.
    pub fn hamming_index(&self, x: usize, y: usize) -> usize {
        (0..self.d).filter(|&axis| self.coord(x, axis) != self.coord(y, axis)).count()
    }

    /// Applies `op` to an encoded state.
    #[inline]
    pub fn apply_index(&self, index: usize, op: &JumpOp) -> usize {
        let axis = op.axis();
        let stride = self.strides[axis];
        let c = (index / stride) % self.m;
        let shifted = (c + op.shift(self.m)) % self.m;
        index - c * stride + shifted * stride
    }

    /// All operators of a family, in canonical (axis-major) order.
    pub fn jump_ops(&self, family: JumpFamily) -> Vec<JumpOp> {
        let mut ops = Vec::new();
        for axis in 0..self.d {
            match family {
                JumpFamily::Nearest => {
                    ops.push(JumpOp::Nearest { axis, forward: true });
                    ops.push(JumpOp::Nearest { axis, forward: false });
                }
                JumpFamily::Uniform => {
                    for shift in 1..self.m {
                        ops.push(JumpOp::Uniform { axis, shift });
                    }
                }
            }
        }
        ops
    }
}

/// A point of the torus, kept in both coordinate and index form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct State {
    m: usize,
    coords: Vec<usize>,
    index: usize,
}

impl State {
    pub fn coords(&self) -> &[usize] {
        &self.coords
    }

    pub fn index(&self) -> usize {
        self.index
    }
}

/// Number of coordinates in which `x` and `y` differ.
pub fn hamming(x: &State, y: &State) -> Result<usize> {
    if x.m != y.m || x.coords.len() != y.coords.len() {
        return invalid("hamming distance between states of different lattices");
    }
    Ok(x.coords.iter().zip(&y.coords).filter(|(a, b)| a != b).count())
}

/// Applies a jump operator to a state in coordinate form.
pub fn apply_jump(x: &State, op: &JumpOp, spec: &LatticeSpec) -> State {
    let index = spec.apply_index(x.index, op);
    let mut coords = x.coords.clone();
    let axis = op.axis();
    coords[axis] = (coords[axis] + op.shift(spec.m)) % spec.m;
    State { m: x.m, coords, index }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JumpFamily {
    /// `x -> x ± e_l (mod m)`, `2d` operators.
    Nearest,
    /// `x -> x + n e_l (mod m)` for `n = 1..m-1`, `d(m-1)` operators.
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum JumpOp {
    Nearest { axis: usize, forward: bool },
    Uniform { axis: usize, shift: usize },
}

impl JumpOp {
    pub fn axis(&self) -> usize {
        match *self {
            JumpOp::Nearest { axis, .. } | JumpOp::Uniform { axis, .. } => axis,
        }
    }

    pub fn family(&self) -> JumpFamily {
        match self {
            JumpOp::Nearest { .. } => JumpFamily::Nearest,
            JumpOp::Uniform { .. } => JumpFamily::Uniform,
        }
    }

    /// Additive shift on the operator's axis, in `[1, m-1]`.
    #[inline]
    pub fn shift(&self, m: usize) -> usize {
        match *self {
            JumpOp::Nearest { forward: true, .. } => 1,
            JumpOp::Nearest { forward: false, .. } => m - 1,
            JumpOp::Uniform { shift, .. } => shift,
        }
    }

    /// The operator undoing `self`, drawn from the same family.
    pub fn inverse(&self, m: usize) -> JumpOp {
        match *self {
            JumpOp::Nearest { axis, forward } => JumpOp::Nearest { axis, forward: !forward },
            JumpOp::Uniform { axis, shift } => JumpOp::Uniform { axis, shift: m - shift },
        }
    }

    /// Position in the canonical axis-major enumeration of the family.
    pub fn id(&self, m: usize) -> usize {
        match *self {
            JumpOp::Nearest { axis, forward } => 2 * axis + usize::from(!forward),
            JumpOp::Uniform { axis, shift } => axis * (m - 1) + (shift - 1),
        }
    }

    /// Family-specific parameter: `+1`/`-1` for nearest jumps, the shift for uniform ones.
    pub fn param(&self) -> i64 {
        match *self {
            JumpOp::Nearest { forward, .. } => {
                if forward {
                    1
                } else {
                    -1
                }
            }
            JumpOp::Uniform { shift, .. } => shift as i64,
        }
    }

    pub fn is_valid_for(&self, spec: &LatticeSpec) -> bool {
        match *self {
            JumpOp::Nearest { axis, .. } => axis < spec.d,
            JumpOp::Uniform { axis, shift } => axis < spec.d && (1..spec.m).contains(&shift),
        }
    }
}

/// Precomputed `op(x)` for every state and operator, plus the inverse-operator map.
#[derive(Clone, Debug)]
pub struct NeighborTable {
    ops: Vec<JumpOp>,
    targets: Vec<usize>,
    inverse: Vec<usize>,
}

impl NeighborTable {
    pub fn new(spec: &LatticeSpec, family: JumpFamily) -> Self {
        let ops = spec.jump_ops(family);
        let n = ops.len();
        let mut targets = vec![0; spec.size() * n];
        for x in 0..spec.size() {
            for (o, op) in ops.iter().enumerate() {
                targets[x * n + o] = spec.apply_index(x, op);
            }
        }
        let inverse = ops
            .iter()
            .map(|op| op.inverse(spec.m()).id(spec.m()))
            .collect();
        Self { ops, targets, inverse }
    }

    pub fn ops(&self) -> &[JumpOp] {
        &self.ops
    }

    pub fn n_ops(&self) -> usize {
        self.ops.len()
    }

    #[inline]
    pub fn target(&self, x: usize, op: usize) -> usize {
        self.targets[x * self.ops.len() + op]
    }

    /// Targets of all operators from `x`, in canonical order.
    pub fn row(&self, x: usize) -> &[usize] {
        let n = self.ops.len();
        &self.targets[x * n..(x + 1) * n]
    }

    pub fn inverse(&self, op: usize) -> usize {
        self.inverse[op]
    }
}
