//! Diagnosis head: fuses student and exercise representations and maps their
//! difference to a response probability.

use rand::Rng;

use crate::autodiff::{derive_seed, xavier_init, Bound, ParamId, ParamStore, Reduction, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Sums the available parts of a representation; a missing part is the zero
/// vector. At least one part must be present.
pub fn fuse(tape: &mut Tape, a: Option<Var>, b: Option<Var>) -> Result<Option<Var>> {
    match (a, b) {
        (Some(a), Some(b)) => Ok(Some(tape.add(a, b)?)),
        (a, b) => Ok(a.or(b)),
    }
}

/// `h_s = h_text + h_state`.
pub fn fuse_student(tape: &mut Tape, text: Option<Var>, state: Option<Var>) -> Result<Var> {
    fuse(tape, text, state)?.ok_or_else(|| Error::Usage("student representation has no parts".into()))
}

/// `h_q = h_text + E_q(q)`; with `id` absent (new-exercise mode) `h_q = h_text`.
pub fn fuse_exercise(tape: &mut Tape, text: Option<Var>, id: Option<Var>) -> Result<Option<Var>> {
    fuse(tape, text, id)
}

/// Fully connected prediction network over `h_s − h_q`: ReLU hidden layers
/// with dropout, then a linear output and a sigmoid.
#[derive(Clone, Debug)]
pub struct PredictHead {
    layers: Vec<(ParamId, ParamId)>,
    dropout: f64,
}

impl PredictHead {
    pub fn register(store: &mut ParamStore, d: usize, hidden: &[usize], dropout: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("dropout {dropout} outside [0, 1)")));
        }
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = d;
        for (i, &width) in hidden.iter().chain(std::iter::once(&1)).enumerate() {
            let name = format!("head.l{i}");
            let w = store.insert(
                format!("{name}.w"),
                xavier_init(width, fan_in, derive_seed(seed, &name)),
            );
            let b = store.insert(format!("{name}.b"), Tensor::zeros(1, width));
            layers.push((w, b));
            fan_in = width;
        }
        Ok(Self { layers, dropout })
    }

    pub fn param_count(d: usize, hidden: &[usize]) -> usize {
        let mut fan_in = d;
        let mut n = 0;
        for &w in hidden.iter().chain(std::iter::once(&1)) {
            n += w * fan_in + w;
            fan_in = w;
        }
        n
    }

    /// Logits for each row of `x` (`n × d` → `n × 1`).
    pub fn logits<R: Rng + ?Sized>(&self, tape: &mut Tape, p: &Bound, x: Var, rng: &mut R) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = tape.matmul_bt(h, p[w])?;
            h = tape.add_row(h, p[b])?;
            if i < last {
                h = tape.relu(h)?;
                h = tape.dropout(h, self.dropout, rng)?;
            }
        }
        Ok(h)
    }

    /// `ŷ = σ(F(h_s − h_q))`; `h_q = None` means the zero vector.
    pub fn predict<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        p: &Bound,
        h_s: Var,
        h_q: Option<Var>,
        rng: &mut R,
    ) -> Result<Var> {
        let x = match h_q {
            Some(q) => tape.sub(h_s, q)?,
            None => h_s,
        };
        let z = self.logits(tape, p, x, rng)?;
        tape.sigmoid(z)
    }
}

/// Cross-entropy of predictions against labels, summed unless `reduction`
/// says otherwise.
pub fn loss(tape: &mut Tape, pred: Var, labels: &[f64], reduction: Reduction) -> Result<Var> {
    tape.bce_loss(pred, labels, reduction)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::{bce, sigmoid};

    fn head(d: usize, seed: u64) -> (ParamStore, PredictHead) {
        let mut store = ParamStore::new();
        let h = PredictHead::register(&mut store, d, &[16, 8], 0.5, seed).unwrap();
        (store, h)
    }

    fn run(store: &ParamStore, h: &PredictHead, hs: &Tensor, hq: &Tensor, training: bool, seed: u64) -> Tensor {
        let mut tape = if training { Tape::training() } else { Tape::new() };
        let p = store.bind(&mut tape, false);
        let s = tape.constant(hs.clone());
        let q = tape.constant(hq.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = h.predict(&mut tape, &p, s, Some(q), &mut rng).unwrap();
        tape.value(y).clone()
    }

    fn randn(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        use rand::Rng;
        Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
    }

    /// Hand-rolled MLP over plain vectors.
    fn oracle(store: &ParamStore, x: &[f64]) -> f64 {
        let mut h = x.to_vec();
        for i in 0..3 {
            let w = store.by_name(&format!("head.l{i}.w")).unwrap();
            let b = store.by_name(&format!("head.l{i}.b")).unwrap();
            let mut out = vec![0.0; w.rows()];
            for r in 0..w.rows() {
                let mut s = b.get(0, r);
                for c in 0..w.cols() {
                    s += w.get(r, c) * h[c];
                }
                out[r] = if i < 2 { s.max(0.0) } else { s };
            }
            h = out;
        }
        sigmoid(h[0])
    }

    #[test]
    fn equal_inputs_with_zero_biases_give_one_half() {
        let (store, h) = head(5, 1);
        let v = Tensor::row_vector(&[0.3, -1.2, 0.5, 2.0, 0.0]);
        assert_eq!(run(&store, &h, &v, &v, false, 0).item(), 0.5);
    }

    #[test]
    fn eval_mode_is_repeatable_and_matches_the_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for case in 0..100 {
            let (mut store, h) = head(6, case);
            for t in store.tensors_mut() {
                *t = randn(t.rows(), t.cols(), &mut rng).map(|v| 0.5 * v);
            }
            let hs = randn(4, 6, &mut rng);
            let hq = randn(4, 6, &mut rng);
            let a = run(&store, &h, &hs, &hq, false, 1);
            let b = run(&store, &h, &hs, &hq, false, 2);
            assert_eq!(a, b);
            for r in 0..4 {
                let x: Vec<f64> = hs.row(r).iter().zip(hq.row(r)).map(|(s, q)| s - q).collect();
                assert!((a.get(r, 0) - oracle(&store, &x)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn only_the_difference_matters() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (store, h) = head(4, 3);
        let hs = randn(3, 4, &mut rng);
        let hq = randn(3, 4, &mut rng);
        let shift = randn(1, 4, &mut rng);
        let add = |t: &Tensor| {
            let mut o = t.clone();
            for r in 0..o.rows() {
                for (v, s) in o.row_mut(r).iter_mut().zip(shift.data()) {
                    *v += s;
                }
            }
            o
        };
        let a = run(&store, &h, &hs, &hq, false, 0);
        let b = run(&store, &h, &add(&hs), &add(&hq), false, 0);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn training_dropout_is_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (store, h) = head(8, 4);
        let hs = randn(10, 8, &mut rng);
        let hq = randn(10, 8, &mut rng);
        let a = run(&store, &h, &hs, &hq, true, 11);
        let b = run(&store, &h, &hs, &hq, true, 11);
        let c = run(&store, &h, &hs, &hq, false, 11);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn fusion_rules() {
        let mut tape = Tape::new();
        let t = tape.constant(Tensor::row_vector(&[1.0, 2.0]));
        let s = tape.constant(Tensor::row_vector(&[0.5, -1.0]));
        let both = fuse_student(&mut tape, Some(t), Some(s)).unwrap();
        assert_eq!(tape.value(both).data(), &[1.5, 1.0]);
        assert_eq!(fuse_student(&mut tape, Some(t), None).unwrap(), t);
        assert_eq!(fuse_student(&mut tape, None, Some(s)).unwrap(), s);
        assert!(fuse_student(&mut tape, None, None).is_err());
        assert_eq!(fuse_exercise(&mut tape, Some(t), None).unwrap(), Some(t));
        let zero = tape.constant(Tensor::zeros(1, 2));
        let z = fuse_exercise(&mut tape, Some(t), Some(zero)).unwrap().unwrap();
        assert_eq!(tape.value(z), tape.value(t));
        let short = tape.constant(Tensor::row_vector(&[1.0]));
        assert!(matches!(
            fuse_student(&mut tape, Some(t), Some(short)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn loss_sums_closed_forms() {
        let preds = [0.2, 0.9, 0.55];
        let labels = [0.0, 1.0, 1.0];
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::col_vector(&preds));
        let l = loss(&mut tape, p, &labels, Reduction::Sum).unwrap();
        let want: f64 = preds.iter().zip(&labels).map(|(&p, &r)| bce(p, r)).sum();
        assert!((tape.value(l).item() - want).abs() < 1e-12);
        let closed = -(0.8f64.ln() + 0.9f64.ln() + 0.55f64.ln());
        assert!((tape.value(l).item() - closed).abs() < 1e-12);
        let m = loss(&mut tape, p, &labels, Reduction::Mean).unwrap();
        assert!((tape.value(m).item() - closed / 3.0).abs() < 1e-12);
        let half = tape.constant(Tensor::scalar(0.5));
        let l = loss(&mut tape, half, &[1.0], Reduction::Sum).unwrap();
        assert!((tape.value(l).item() - std::f64::consts::LN_2).abs() < 1e-15);
        let sure = tape.constant(Tensor::scalar(1.0 - 1e-9));
        let l = loss(&mut tape, sure, &[1.0], Reduction::Sum).unwrap();
        assert!(tape.value(l).item() < 1e-6);
    }

    #[test]
    fn param_count_matches_registration() {
        let (store, _) = head(5, 0);
        assert_eq!(store.scalar_count(), PredictHead::param_count(5, &[16, 8]));
        assert_eq!(
            PredictHead::param_count(20, &[256, 128]),
            20 * 256 + 256 + 256 * 128 + 128 + 128 + 1
        );
    }
}
