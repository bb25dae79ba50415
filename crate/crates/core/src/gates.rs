//! The sixteen two-input Boolean operators and their continuous relaxation.
//!
//! Every operator is written as a linear combination of the basis
//! `(1, a, b, a*b)`. A soft gate holds a softmax distribution over the
//! operators; projecting that distribution through [`BASIS`] yields four
//! coefficients, so a soft gate costs the same as evaluating one polynomial
//! regardless of how many operators carry mass.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Number of distinct two-input Boolean functions.
pub const N_OPS: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GateError {
    #[error("non-finite gate score at index {index}: {value}")]
    NonFinite { index: usize, value: f64 },
    #[error("operator id {0} out of range 0..16")]
    BadId(u8),
    #[error("unknown operator mnemonic `{0}`")]
    UnknownMnemonic(String),
}

/// A two-input Boolean operator. The discriminant is the wire-format id and
/// follows the row order of [`BASIS`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum BoolOp {
    False = 0,
    And = 1,
    ANotB = 2,
    A = 3,
    NotAB = 4,
    B = 5,
    Xor = 6,
    Or = 7,
    Nor = 8,
    Xnor = 9,
    NotB = 10,
    BImpA = 11,
    NotA = 12,
    AImpB = 13,
    Nand = 14,
    True = 15,
}

impl BoolOp {
    pub const ALL: [BoolOp; N_OPS] = [
        BoolOp::False,
        BoolOp::And,
        BoolOp::ANotB,
        BoolOp::A,
        BoolOp::NotAB,
        BoolOp::B,
        BoolOp::Xor,
        BoolOp::Or,
        BoolOp::Nor,
        BoolOp::Xnor,
        BoolOp::NotB,
        BoolOp::BImpA,
        BoolOp::NotA,
        BoolOp::AImpB,
        BoolOp::Nand,
        BoolOp::True,
    ];

    const MNEMONICS: [&'static str; N_OPS] = [
        "FALSE", "AND", "ANOTB", "A", "NOTAB", "B", "XOR", "OR", "NOR", "XNOR", "NOTB", "BIMPA",
        "NOTA", "AIMPB", "NAND", "TRUE",
    ];

    #[inline]
    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Result<Self, GateError> {
        Self::ALL.get(id as usize).copied().ok_or(GateError::BadId(id))
    }

    pub fn mnemonic(self) -> &'static str {
        Self::MNEMONICS[self as usize]
    }

    /// Truth-table evaluation on single bits.
    #[inline]
    pub fn eval(self, a: bool, b: bool) -> bool {
        match self {
            BoolOp::False => false,
            BoolOp::And => a && b,
            BoolOp::ANotB => a && !b,
            BoolOp::A => a,
            BoolOp::NotAB => !a && b,
            BoolOp::B => b,
            BoolOp::Xor => a ^ b,
            BoolOp::Or => a || b,
            BoolOp::Nor => !(a || b),
            BoolOp::Xnor => !(a ^ b),
            BoolOp::NotB => !b,
            BoolOp::BImpA => a || !b,
            BoolOp::NotA => !a,
            BoolOp::AImpB => !a || b,
            BoolOp::Nand => !(a && b),
            BoolOp::True => true,
        }
    }

    /// Word-parallel evaluation: every bit position is an independent sample.
    #[inline(always)]
    pub fn eval_word(self, a: u64, b: u64) -> u64 {
        match self {
            BoolOp::False => 0,
            BoolOp::And => a & b,
            BoolOp::ANotB => a & !b,
            BoolOp::A => a,
            BoolOp::NotAB => !a & b,
            BoolOp::B => b,
            BoolOp::Xor => a ^ b,
            BoolOp::Or => a | b,
            BoolOp::Nor => !(a | b),
            BoolOp::Xnor => !(a ^ b),
            BoolOp::NotB => !b,
            BoolOp::BImpA => a | !b,
            BoolOp::NotA => !a,
            BoolOp::AImpB => !a | b,
            BoolOp::Nand => !(a & b),
            BoolOp::True => u64::MAX,
        }
    }

    /// True for the two constant operators, whose operands are ignored.
    pub fn is_constant(self) -> bool {
        matches!(self, BoolOp::False | BoolOp::True)
    }
}

impl fmt::Display for BoolOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

impl FromStr for BoolOp {
    type Err = GateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BoolOp::MNEMONICS
            .iter()
            .position(|m| *m == s)
            .map(|i| BoolOp::ALL[i])
            .ok_or_else(|| GateError::UnknownMnemonic(s.to_string()))
    }
}

/// Decomposition of each operator over the basis `(1, a, b, a*b)`, one row per
/// operator id.
pub const BASIS: [[i8; 4]; N_OPS] = [
    [0, 0, 0, 0],   // FALSE
    [0, 0, 0, 1],   // AND
    [0, 1, 0, -1],  // A AND NOT B
    [0, 1, 0, 0],   // A
    [0, 0, 1, -1],  // NOT A AND B
    [0, 0, 1, 0],   // B
    [0, 1, 1, -2],  // XOR
    [0, 1, 1, -1],  // OR
    [1, -1, -1, 1], // NOR
    [1, -1, -1, 2], // XNOR
    [1, 0, -1, 0],  // NOT B
    [1, 0, -1, 1],  // B => A
    [1, -1, 0, 0],  // NOT A
    [1, -1, 0, 1],  // A => B
    [1, 0, 0, -1],  // NAND
    [1, 0, 0, 0],   // TRUE
];

/// Learnable, unnormalized scores of one soft gate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateLogits(pub [f64; N_OPS]);

impl GateLogits {
    pub fn probabilities(&self) -> Result<[f64; N_OPS], GateError> {
        softmax16(&self.0)
    }

    /// Highest-scoring operator; ties go to the lowest id.
    pub fn mode(&self) -> BoolOp {
        BoolOp::ALL[argmax_lowest(&self.0)]
    }
}

/// Index of the maximum, preferring the lowest index among equal values.
pub(crate) fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Max-subtracted softmax over one gate's scores.
pub fn softmax16(scores: &[f64; N_OPS]) -> Result<[f64; N_OPS], GateError> {
    if let Some((index, &value)) = scores.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(GateError::NonFinite { index, value });
    }
    let mut out = *scores;
    softmax_in_place(&mut out);
    Ok(out)
}

/// Max-subtracted softmax over an arbitrary slice. Inputs are assumed finite.
pub fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in values.iter_mut() {
        *v *= inv;
    }
}

/// `c = pᵀ W`: the four polynomial coefficients of a soft gate.
pub fn project_coeffs(p: &[f64; N_OPS]) -> [f64; 4] {
    let mut c = [0.0; 4];
    for (pi, row) in p.iter().zip(BASIS.iter()) {
        for (ck, &w) in c.iter_mut().zip(row.iter()) {
            *ck += pi * w as f64;
        }
    }
    c
}

#[inline(always)]
pub fn soft_gate_forward(c: &[f64; 4], a: f64, b: f64) -> f64 {
    c[0] + c[1] * a + c[2] * b + c[3] * a * b
}

/// Gradients of one soft gate evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftGateGrad {
    pub a: f64,
    pub b: f64,
    pub coeffs: [f64; 4],
}

#[inline]
pub fn soft_gate_backward(c: &[f64; 4], a: f64, b: f64, upstream: f64) -> SoftGateGrad {
    SoftGateGrad {
        a: upstream * (c[1] + c[3] * b),
        b: upstream * (c[2] + c[3] * a),
        coeffs: [upstream, upstream * a, upstream * b, upstream * a * b],
    }
}

/// Chains a coefficient gradient back through `W` and the softmax Jacobian,
/// giving the gradient with respect to the raw gate scores.
pub fn coeff_grad_to_scores(p: &[f64; N_OPS], grad_c: &[f64; 4]) -> [f64; N_OPS] {
    let mut grad_p = [0.0; N_OPS];
    for (gp, row) in grad_p.iter_mut().zip(BASIS.iter()) {
        *gp = row
            .iter()
            .zip(grad_c.iter())
            .map(|(&w, g)| w as f64 * g)
            .sum();
    }
    let mean: f64 = p.iter().zip(grad_p.iter()).map(|(pi, g)| pi * g).sum();
    let mut out = [0.0; N_OPS];
    for i in 0..N_OPS {
        out[i] = p[i] * (grad_p[i] - mean);
    }
    out
}

/// Evaluates a soft gate directly from its scores.
pub fn soft_gate_from_scores(scores: &[f64; N_OPS], a: f64, b: f64) -> Result<f64, GateError> {
    Ok(soft_gate_forward(&project_coeffs(&softmax16(scores)?), a, b))
}

pub fn hard_gate_eval(op: BoolOp, a: bool, b: bool) -> bool {
    op.eval(a, b)
}

pub fn one_hot(op: BoolOp) -> [f64; N_OPS] {
    let mut p = [0.0; N_OPS];
    p[op as usize] = 1.0;
    p
}
