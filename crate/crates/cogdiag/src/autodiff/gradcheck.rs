//! Central finite-difference gradient checks.

use super::{Bound, ParamStore, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// Largest relative error `|a − n| / max(|a| + |n|, floor)`.
    pub max_rel_err: f64,
    /// Parameter name and flat element index of the largest error.
    pub worst: (String, usize),
    pub checked: usize,
}

/// Compares the tape gradient of the scalar `loss` with central differences
/// of step `h` for every element of every parameter in `store`.
///
/// `loss` is rebuilt on a fresh training tape for each perturbation, so any
/// randomness it uses (dropout masks) must be seeded inside the closure.
pub fn check_gradients<F>(store: &ParamStore, h: f64, floor: f64, loss: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::training();
        let p = store.bind(&mut tape, false);
        let l = loss(&mut tape, &p)?;
        Ok(tape.value(l).item())
    };
    let mut tape = Tape::training();
    let p = store.bind(&mut tape, true);
    let l = loss(&mut tape, &p)?;
    tape.backward(l)?;
    let grads = store.grads(&tape, &p);

    let mut work = store.clone();
    let mut out = GradCheck {
        max_rel_err: 0.0,
        worst: (String::new(), 0),
        checked: 0,
    };
    let names: Vec<String> = store.iter().map(|(n, _)| n.to_owned()).collect();
    for (k, name) in names.iter().enumerate() {
        let id = store.id(name).expect("name from the store");
        for i in 0..store.get(id).len() {
            let orig = work.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + h;
            let up = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig - h;
            let down = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads[k].as_ref().map_or(0.0, |g| g.data()[i]);
            if !numeric.is_finite() || !analytic.is_finite() {
                return Err(Error::Numeric {
                    op: "gradcheck",
                    node: k,
                });
            }
            let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(floor);
            if rel > out.max_rel_err {
                out.max_rel_err = rel;
                out.worst = (name.clone(), i);
            }
            out.checked += 1;
        }
    }
    Ok(out)
}
