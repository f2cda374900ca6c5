//! Relation-aware concept and exercise embeddings and the pooled student
//! knowledge state.
//!
//! Concepts attend separately over their prerequisite and correlative
//! neighbours; a scalar preference score per relation decides how the two
//! aggregates are mixed back into the base vector. Exercises attend over
//! their concepts. A student's state is a sigmoid layer over the mean of the
//! per-record vectors `[ẽq, mean ẽc, E_r(r)]`.

use std::sync::Arc;

use crate::autodiff::{derive_seed, xavier_init, Bound, ParamId, ParamStore, SparseMatrix, Tape, Tensor, Var};
use crate::config::{AttentionQuery, StateConfig};
use crate::data::RelationGraph;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
struct EdgeList {
    target: Arc<[usize]>,
    source: Arc<[usize]>,
}

impl EdgeList {
    fn from_adjacency(n: usize, neighbours: impl Fn(usize) -> Vec<usize>) -> Self {
        let (mut target, mut source) = (Vec::new(), Vec::new());
        for t in 0..n {
            for s in neighbours(t) {
                target.push(t);
                source.push(s);
            }
        }
        Self {
            target: target.into(),
            source: source.into(),
        }
    }

    fn is_empty(&self) -> bool {
        self.target.is_empty()
    }
}

/// Edge lists and pooling matrices derived once from a [`RelationGraph`].
#[derive(Clone, Debug)]
pub struct GraphStructure {
    n_concepts: usize,
    n_exercises: usize,
    pre: EdgeList,
    cor: EdgeList,
    qc: EdgeList,
    exercise_concepts: Vec<Vec<usize>>,
    /// `M × K`: row `q` averages the concepts of `q`.
    exercise_mean: Arc<SparseMatrix>,
    /// `K × K`: row `c` averages the prerequisite and correlative neighbours of `c`.
    neighbour_mean: Arc<SparseMatrix>,
}

impl GraphStructure {
    pub fn new(graph: &RelationGraph) -> Self {
        let k = graph.n_concepts();
        let pre = EdgeList::from_adjacency(k, |c| graph.prereq_neighbors(c).to_vec());
        let cor = EdgeList::from_adjacency(k, |c| graph.corr_neighbors(c).to_vec());
        let qc = EdgeList::from_adjacency(graph.n_exercises(), |q| graph.exercise_concepts(q).to_vec());
        let exercise_concepts = graph.all_exercise_concepts().to_vec();
        let neighbours: Vec<Vec<usize>> = (0..k)
            .map(|c| {
                let mut n: Vec<usize> = graph.prereq_neighbors(c).to_vec();
                n.extend_from_slice(graph.corr_neighbors(c));
                n.sort_unstable();
                n.dedup();
                n
            })
            .collect();
        Self {
            n_concepts: k,
            n_exercises: graph.n_exercises(),
            pre,
            cor,
            qc,
            exercise_mean: Arc::new(SparseMatrix::row_means(k, &exercise_concepts)),
            neighbour_mean: Arc::new(SparseMatrix::row_means(k, &neighbours)),
            exercise_concepts,
        }
    }

    pub fn n_concepts(&self) -> usize {
        self.n_concepts
    }

    pub fn n_exercises(&self) -> usize {
        self.n_exercises
    }

    pub fn exercise_concepts(&self, q: usize) -> &[usize] {
        &self.exercise_concepts[q]
    }

    pub fn exercise_mean(&self) -> &Arc<SparseMatrix> {
        &self.exercise_mean
    }
}

/// Response pooling weights for a set of students.
///
/// Row `s` of `exercise_weights` holds `count(q) / l` for every exercise `q`
/// in the history of length `l`; `concept_weights` is the same row pushed
/// through the per-exercise concept mean; `responses` holds the fractions of
/// incorrect and correct records. Rows are sorted by column, so the pooled
/// state does not depend on record order.
#[derive(Clone, Debug)]
pub struct StudentPool {
    exercise_weights: Arc<SparseMatrix>,
    concept_weights: Arc<SparseMatrix>,
    responses: Tensor,
    lengths: Vec<usize>,
}

impl StudentPool {
    /// One history of `(exercise, response)` records per student.
    pub fn new(histories: &[Vec<(usize, u8)>], structure: &GraphStructure) -> Self {
        let mut ex_rows = Vec::with_capacity(histories.len());
        let mut responses = Tensor::zeros(histories.len(), 2);
        for (s, h) in histories.iter().enumerate() {
            let w = 1.0 / h.len().max(1) as f64;
            ex_rows.push(h.iter().map(|&(q, _)| (q, w)).collect::<Vec<_>>());
            for &(_, r) in h {
                let cur = responses.get(s, r as usize);
                responses.set(s, r as usize, cur + w);
            }
        }
        let exercise_weights = SparseMatrix::from_rows(structure.n_exercises, &ex_rows);
        let concept_rows: Vec<Vec<(usize, f64)>> = (0..histories.len())
            .map(|s| {
                let mut row = Vec::new();
                for (q, wq) in exercise_weights.row_entries(s) {
                    row.extend(structure.exercise_mean.row_entries(q).map(|(c, wc)| (c, wq * wc)));
                }
                row
            })
            .collect();
        Self {
            concept_weights: Arc::new(SparseMatrix::from_rows(structure.n_concepts, &concept_rows)),
            exercise_weights: Arc::new(exercise_weights),
            responses,
            lengths: histories.iter().map(Vec::len).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn history_len(&self, s: usize) -> usize {
        self.lengths[s]
    }

    /// Pool restricted to the listed students, in the listed order.
    pub fn select(&self, rows: &[usize]) -> Self {
        let mut responses = Tensor::zeros(rows.len(), 2);
        for (i, &r) in rows.iter().enumerate() {
            responses.row_mut(i).copy_from_slice(self.responses.row(r));
        }
        Self {
            exercise_weights: Arc::new(self.exercise_weights.select_rows(rows)),
            concept_weights: Arc::new(self.concept_weights.select_rows(rows)),
            responses,
            lengths: rows.iter().map(|&r| self.lengths[r]).collect(),
        }
    }
}

/// Attention scorer for one relation: a shared projection `W` and a pair
/// scorer `a · [W x_t ⊕ W x_s] + b`.
#[derive(Clone, Debug)]
struct Scorer {
    w: ParamId,
    a_dst: ParamId,
    a_src: ParamId,
    a_b: ParamId,
}

impl Scorer {
    fn register(store: &mut ParamStore, name: &str, d: usize, seed: u64) -> Self {
        let w = store.insert(
            format!("{name}.w"),
            xavier_init(d, d, derive_seed(seed, &format!("{name}.w"))),
        );
        let a = xavier_init(1, 2 * d, derive_seed(seed, &format!("{name}.a")));
        let a_dst = store.insert(format!("{name}.a_dst"), Tensor::row_vector(&a.data()[..d]));
        let a_src = store.insert(format!("{name}.a_src"), Tensor::row_vector(&a.data()[d..]));
        let a_b = store.insert(format!("{name}.a_b"), Tensor::zeros(1, 1));
        Self { w, a_dst, a_src, a_b }
    }

    fn count(d: usize) -> usize {
        d * d + 2 * d + 1
    }

    /// Attention-weighted sum of projected sources per target. Returns the
    /// `n_tgt × d` aggregate and the per-edge weights (absent when there are
    /// no edges, in which case the aggregate is zero).
    fn attend(
        &self,
        tape: &mut Tape,
        p: &Bound,
        queries: Var,
        keys: Var,
        edges: &EdgeList,
        n_tgt: usize,
    ) -> Result<(Var, Option<Var>)> {
        let d = tape.value(keys).cols();
        if edges.is_empty() {
            return Ok((tape.constant(Tensor::zeros(n_tgt, d)), None));
        }
        let zk = tape.matmul_bt(keys, p[self.w])?;
        let zq = if queries == keys {
            zk
        } else {
            tape.matmul_bt(queries, p[self.w])?
        };
        let sq = tape.matmul_bt(zq, p[self.a_dst])?;
        let sk = tape.matmul_bt(zk, p[self.a_src])?;
        let lt = tape.gather_rows(sq, edges.target.clone())?;
        let ls = tape.gather_rows(sk, edges.source.clone())?;
        let logit = tape.add(lt, ls)?;
        let logit = tape.add_row(logit, p[self.a_b])?;
        let logit = tape.relu(logit)?;
        let alpha = tape.segment_softmax(logit, edges.target.clone(), n_tgt)?;
        let msgs = tape.gather_rows(zk, edges.source.clone())?;
        let msgs = tape.mul_col(msgs, alpha)?;
        let g = tape.scatter_add_rows(msgs, edges.target.clone(), n_tgt)?;
        Ok((g, Some(alpha)))
    }
}

#[derive(Clone, Debug)]
struct ConceptHead {
    pre: Scorer,
    cor: Scorer,
    pref_pre: (ParamId, ParamId),
    pref_cor: (ParamId, ParamId),
}

#[derive(Clone, Debug)]
enum ConceptLayer {
    Gat(Vec<ConceptHead>),
    Linear(ParamId),
}

#[derive(Clone, Debug)]
enum ExerciseLayer {
    Gat(Vec<Scorer>),
    Linear(ParamId),
}

/// Attention weights of the first head of the last concept layer and of the
/// exercise aggregation, for inspection.
#[derive(Clone, Debug, Default)]
pub struct AttentionTrace {
    /// Per prerequisite edge, in target-major order.
    pub pre_alpha: Option<Var>,
    pub cor_alpha: Option<Var>,
    /// `K × 2` relation preferences `[μ_pre, μ_cor]`.
    pub mu: Option<Var>,
    /// Per exercise–concept edge.
    pub rel_beta: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct GraphEncoder {
    pub(crate) concept_base: ParamId,
    pub(crate) exercise_base: ParamId,
    pub(crate) response_emb: ParamId,
    state_w: ParamId,
    state_b: ParamId,
    layers: Vec<ConceptLayer>,
    exercise: ExerciseLayer,
    query: AttentionQuery,
    d: usize,
}

impl GraphEncoder {
    /// Registers all encoder parameters. `concept_init` (`K × d`) replaces
    /// the Xavier initialisation of the base concept vectors.
    pub fn register(
        store: &mut ParamStore,
        cfg: &StateConfig,
        n_concepts: usize,
        n_exercises: usize,
        d: usize,
        seed: u64,
        concept_init: Option<Tensor>,
    ) -> Result<Self> {
        if cfg.heads == 0 || cfg.layers == 0 {
            return Err(Error::Config("state.heads and state.layers must be positive".into()));
        }
        let init = |name: &str, r: usize, c: usize| xavier_init(r, c, derive_seed(seed, name));
        let concept_base = match concept_init {
            Some(t) if t.shape() != [n_concepts, d] => {
                return Err(Error::Shape {
                    op: "concept_init",
                    detail: format!("{:?} vs [{n_concepts}, {d}]", t.shape()),
                })
            }
            Some(t) => store.insert("enc.concept", t),
            None => store.insert("enc.concept", init("enc.concept", n_concepts, d)),
        };
        let exercise_base = store.insert("enc.exercise", init("enc.exercise", n_exercises, d));
        let response_emb = store.insert("enc.response", init("enc.response", 2, d));
        let state_w = store.insert("enc.state.w", init("enc.state.w", d, 3 * d));
        let state_b = store.insert("enc.state.b", Tensor::zeros(1, d));
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            if cfg.gat {
                let heads = (0..cfg.heads)
                    .map(|h| {
                        let base = format!("enc.l{l}.h{h}");
                        let pref = |store: &mut ParamStore, rel: &str| {
                            let name = format!("{base}.pref_{rel}");
                            (
                                store.insert(format!("{name}.w"), init(&name, 1, d)),
                                store.insert(format!("{name}.b"), Tensor::zeros(1, 1)),
                            )
                        };
                        ConceptHead {
                            pre: Scorer::register(store, &format!("{base}.pre"), d, seed),
                            cor: Scorer::register(store, &format!("{base}.cor"), d, seed),
                            pref_pre: pref(store, "pre"),
                            pref_cor: pref(store, "cor"),
                        }
                    })
                    .collect();
                layers.push(ConceptLayer::Gat(heads));
            } else {
                let name = format!("enc.l{l}.linear");
                layers.push(ConceptLayer::Linear(store.insert(name.clone(), init(&name, d, d))));
            }
        }
        let exercise = if cfg.gat {
            ExerciseLayer::Gat(
                (0..cfg.heads)
                    .map(|h| Scorer::register(store, &format!("enc.rel.h{h}"), d, seed))
                    .collect(),
            )
        } else {
            ExerciseLayer::Linear(store.insert("enc.rel.linear", init("enc.rel.linear", d, d)))
        };
        Ok(Self {
            concept_base,
            exercise_base,
            response_emb,
            state_w,
            state_b,
            layers,
            exercise,
            query: cfg.query,
            d,
        })
    }

    /// Scalar parameter count of an encoder with this configuration.
    pub fn param_count(cfg: &StateConfig, n_concepts: usize, n_exercises: usize, d: usize) -> usize {
        let base = (n_concepts + n_exercises + 2) * d + 3 * d * d + d;
        let layers = if cfg.gat {
            cfg.layers * cfg.heads * (2 * Scorer::count(d) + 2 * (d + 1)) + cfg.heads * Scorer::count(d)
        } else {
            (cfg.layers + 1) * d * d
        };
        base + layers
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Relation-aware concept vectors `Ẽc` (`K × d`).
    pub fn concepts(&self, tape: &mut Tape, p: &Bound, g: &GraphStructure) -> Result<Var> {
        self.concepts_traced(tape, p, g, None)
    }

    fn concepts_traced(
        &self,
        tape: &mut Tape,
        p: &Bound,
        g: &GraphStructure,
        mut trace: Option<&mut AttentionTrace>,
    ) -> Result<Var> {
        let k = g.n_concepts;
        let mut e = p[self.concept_base];
        for layer in &self.layers {
            let agg = match layer {
                ConceptLayer::Linear(w) => {
                    let m = tape.spmm(g.neighbour_mean.clone(), e)?;
                    tape.matmul_bt(m, p[*w])?
                }
                ConceptLayer::Gat(heads) => {
                    let mut sum: Option<Var> = None;
                    for (h, head) in heads.iter().enumerate() {
                        let (g_pre, a_pre) = head.pre.attend(tape, p, e, e, &g.pre, k)?;
                        let (g_cor, a_cor) = head.cor.attend(tape, p, e, e, &g.cor, k)?;
                        let w_pre = preference(tape, p, g_pre, head.pref_pre)?;
                        let w_cor = preference(tape, p, g_cor, head.pref_cor)?;
                        let scores = tape.concat_cols(&[w_pre, w_cor])?;
                        let mu = tape.softmax_rows(scores)?;
                        let mu_pre = tape.col(mu, 0)?;
                        let mu_cor = tape.col(mu, 1)?;
                        let t_pre = tape.mul_col(g_pre, mu_pre)?;
                        let t_cor = tape.mul_col(g_cor, mu_cor)?;
                        let agg = tape.add(t_pre, t_cor)?;
                        if h == 0 {
                            if let Some(t) = trace.as_deref_mut() {
                                t.pre_alpha = a_pre;
                                t.cor_alpha = a_cor;
                                t.mu = Some(mu);
                            }
                        }
                        sum = Some(match sum {
                            Some(s) => tape.add(s, agg)?,
                            None => agg,
                        });
                    }
                    let sum = sum.expect("at least one head");
                    if heads.len() > 1 {
                        tape.scale(sum, 1.0 / heads.len() as f64)?
                    } else {
                        sum
                    }
                }
            };
            e = tape.add(e, agg)?;
        }
        Ok(e)
    }

    /// Relation-aware exercise vectors `Ẽq` (`M × d`), attending over base
    /// concept vectors.
    pub fn exercises(&self, tape: &mut Tape, p: &Bound, g: &GraphStructure) -> Result<Var> {
        self.exercises_traced(tape, p, g, None)
    }

    fn exercises_traced(
        &self,
        tape: &mut Tape,
        p: &Bound,
        g: &GraphStructure,
        trace: Option<&mut AttentionTrace>,
    ) -> Result<Var> {
        let ec = p[self.concept_base];
        let eq = p[self.exercise_base];
        let agg = match &self.exercise {
            ExerciseLayer::Linear(w) => {
                let m = tape.spmm(g.exercise_mean.clone(), ec)?;
                tape.matmul_bt(m, p[*w])?
            }
            ExerciseLayer::Gat(heads) => {
                let queries = match self.query {
                    AttentionQuery::ConceptMean => tape.spmm(g.exercise_mean.clone(), ec)?,
                    AttentionQuery::Exercise => eq,
                };
                let mut sum: Option<Var> = None;
                let mut first_beta = None;
                for (h, scorer) in heads.iter().enumerate() {
                    let (gr, beta) = scorer.attend(tape, p, queries, ec, &g.qc, g.n_exercises)?;
                    if h == 0 {
                        first_beta = beta;
                    }
                    sum = Some(match sum {
                        Some(s) => tape.add(s, gr)?,
                        None => gr,
                    });
                }
                if let Some(t) = trace {
                    t.rel_beta = first_beta;
                }
                let sum = sum.expect("at least one head");
                if heads.len() > 1 {
                    tape.scale(sum, 1.0 / heads.len() as f64)?
                } else {
                    sum
                }
            }
        };
        tape.add(agg, eq)
    }

    /// Both aggregations plus the attention weights of their first heads.
    pub fn encode_traced(&self, tape: &mut Tape, p: &Bound, g: &GraphStructure) -> Result<(Var, Var, AttentionTrace)> {
        let mut trace = AttentionTrace::default();
        let ec = self.concepts_traced(tape, p, g, Some(&mut trace))?;
        let eq = self.exercises_traced(tape, p, g, Some(&mut trace))?;
        Ok((ec, eq, trace))
    }

    /// Record vector `[ẽq ⊕ mean ẽc ⊕ E_r(r)]` (`1 × 3d`).
    pub fn record_repr(
        &self,
        tape: &mut Tape,
        p: &Bound,
        g: &GraphStructure,
        ec: Var,
        eq: Var,
        q: usize,
        r: u8,
    ) -> Result<Var> {
        if r > 1 {
            return Err(Error::Validation(format!("response {r} is not 0 or 1")));
        }
        let concepts = g
            .exercise_concepts
            .get(q)
            .ok_or_else(|| Error::Lookup(format!("exercise index {q}")))?;
        let xq = tape.gather_rows(eq, vec![q])?;
        let cs = tape.gather_rows(ec, concepts.clone())?;
        let xc = tape.mean_rows(cs)?;
        let xr = tape.gather_rows(p[self.response_emb], vec![r as usize])?;
        tape.concat_cols(&[xq, xc, xr])
    }

    /// Knowledge state for every student of `pool` (`S × d`).
    pub fn state(&self, tape: &mut Tape, p: &Bound, pool: &StudentPool, ec: Var, eq: Var) -> Result<Var> {
        let a = tape.spmm(pool.exercise_weights.clone(), eq)?;
        let b = tape.spmm(pool.concept_weights.clone(), ec)?;
        let fr = tape.constant(pool.responses.clone());
        let c = tape.matmul(fr, p[self.response_emb])?;
        let h = tape.concat_cols(&[a, b, c])?;
        let z = tape.matmul_bt(h, p[self.state_w])?;
        let z = tape.add_row(z, p[self.state_b])?;
        tape.sigmoid(z)
    }
}

fn preference(tape: &mut Tape, p: &Bound, g: Var, (w, b): (ParamId, ParamId)) -> Result<Var> {
    let s = tape.matmul_bt(g, p[w])?;
    let s = tape.add_row(s, p[b])?;
    tape.relu(s)
}
