//! Semantic adaptor: projects `D`-dimensional text vectors into the model
//! space of dimension `d`.
//!
//! The mixture form computes `α = softmax(G e + b)` and returns
//! `Σ_i α_i A_i e`, every expert seeing the whole input vector. The linear
//! form is a single bias-free `d × D` map.

use crate::autodiff::{derive_seed, xavier_init, Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Adaptor {
    Moe {
        gate_w: ParamId,
        gate_b: ParamId,
        experts: Vec<ParamId>,
    },
    Linear {
        w: ParamId,
    },
}

impl Adaptor {
    /// Registers a mixture of `k` experts, or a single linear map when `k` is
    /// `None`, under names starting with `prefix`.
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        text_dim: usize,
        d: usize,
        k: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        match k {
            Some(0) => Err(Error::Config("moe.k must be at least 1".into())),
            Some(k) => {
                let gate_w = store.insert(
                    format!("{prefix}.gate.w"),
                    xavier_init(k, text_dim, derive_seed(seed, &format!("{prefix}.gate.w"))),
                );
                let gate_b = store.insert(format!("{prefix}.gate.b"), Tensor::zeros(1, k));
                let experts = (0..k)
                    .map(|i| {
                        let name = format!("{prefix}.expert{i}");
                        store.insert(name.clone(), xavier_init(d, text_dim, derive_seed(seed, &name)))
                    })
                    .collect();
                Ok(Adaptor::Moe {
                    gate_w,
                    gate_b,
                    experts,
                })
            }
            None => {
                let name = format!("{prefix}.linear");
                let w = store.insert(name.clone(), xavier_init(d, text_dim, derive_seed(seed, &name)));
                Ok(Adaptor::Linear { w })
            }
        }
    }

    /// Scalar parameter count for the given sizes.
    pub fn param_count(text_dim: usize, d: usize, k: Option<usize>) -> usize {
        match k {
            Some(k) => k * text_dim + k + k * d * text_dim,
            None => d * text_dim,
        }
    }

    pub fn experts(&self) -> usize {
        match self {
            Adaptor::Moe { experts, .. } => experts.len(),
            Adaptor::Linear { .. } => 1,
        }
    }

    /// Gate weights `α` for each row of `x` (`n × k`).
    pub fn gates(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Option<Var>> {
        match self {
            Adaptor::Moe { gate_w, gate_b, .. } => {
                let logits = tape.matmul_bt(x, p[*gate_w])?;
                let logits = tape.add_row(logits, p[*gate_b])?;
                Ok(Some(tape.softmax_rows(logits)?))
            }
            Adaptor::Linear { .. } => Ok(None),
        }
    }

    /// Adapts every row of `x` (`n × D`) to an `n × d` output.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        match self {
            Adaptor::Linear { w } => tape.matmul_bt(x, p[*w]),
            Adaptor::Moe { experts, .. } => {
                let alpha = self.gates(tape, p, x)?.expect("mixture has gates");
                let mut out: Option<Var> = None;
                for (i, e) in experts.iter().enumerate() {
                    let y = tape.matmul_bt(x, p[*e])?;
                    let a = tape.col(alpha, i)?;
                    let term = tape.mul_col(y, a)?;
                    out = Some(match out {
                        Some(acc) => tape.add(acc, term)?,
                        None => term,
                    });
                }
                Ok(out.expect("k >= 1"))
            }
        }
    }

    /// Adapts a batch of plain vectors without recording gradients.
    pub fn apply(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, &p, xv)?;
        Ok(tape.value(out).clone())
    }
}
