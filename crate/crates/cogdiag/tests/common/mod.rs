//! Brute-force oracles and property checks shared by the integration tests
//! and the acceptance runner. Every `check_*` returns a one-line summary on
//! success and a description of the first violation otherwise.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::Arc;

use cogdiag::autodiff::{check_gradients, sigmoid, Bound, ParamStore, Reduction, SparseMatrix, Tape, Tensor, Var};
use cogdiag::config::{AttentionQuery, ConceptInit, ModelConfig, StateConfig};
use cogdiag::data::{InteractionLog, RelationGraph};
use cogdiag::embedding::{EmbeddingProvider, PseudoEmbedder, StudentHistoryKey};
use cogdiag::graph_encoder::{GraphEncoder, GraphStructure, StudentPool};
use cogdiag::head::PredictHead;
use cogdiag::metrics;
use cogdiag::model::{Model, ModelInputs};
use cogdiag::moe::Adaptor;
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

pub fn random(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn randomise(store: &mut ParamStore, rng: &mut impl Rng) {
    for t in store.tensors_mut() {
        for v in t.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
}

fn get(store: &ParamStore, name: &str) -> Tensor {
    store
        .by_name(name)
        .unwrap_or_else(|| panic!("no parameter {name}"))
        .clone()
}

fn matvec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|r| (0..w.cols()).map(|c| w.get(r, c) * x[c]).sum())
        .collect()
}

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = xs.iter().map(|x| (x - m).exp()).sum();
    xs.iter().map(|x| (x - m).exp() / z).collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn eval(store: &ParamStore, f: impl FnOnce(&mut Tape, &Bound) -> Var) -> Tensor {
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, false);
    let v = f(&mut tape, &p);
    tape.value(v).clone()
}

/// `Σ_i softmax(G e + b)_i · A_i e`, one coordinate at a time.
pub fn oracle_moe(store: &ParamStore, prefix: &str, k: usize, e: &[f64]) -> Vec<f64> {
    let g = get(store, &format!("{prefix}.gate.w"));
    let b = get(store, &format!("{prefix}.gate.b"));
    let logits: Vec<f64> = (0..k).map(|i| dotv(g.row(i), e) + b.get(0, i)).collect();
    let alpha = softmax(&logits);
    let experts: Vec<Tensor> = (0..k).map(|i| get(store, &format!("{prefix}.expert{i}"))).collect();
    let d = experts[0].rows();
    (0..d)
        .map(|j| (0..k).map(|i| alpha[i] * dotv(experts[i].row(j), e)).sum())
        .collect()
}

fn oracle_relation(store: &ParamStore, rel: &str, e: &Tensor, c: usize, nbrs: &[usize]) -> Vec<f64> {
    let w = get(store, &format!("enc.l0.h0.{rel}.w"));
    let a_dst = get(store, &format!("enc.l0.h0.{rel}.a_dst"));
    let a_src = get(store, &format!("enc.l0.h0.{rel}.a_src"));
    let a_b = get(store, &format!("enc.l0.h0.{rel}.a_b")).item();
    if nbrs.is_empty() {
        return vec![0.0; e.cols()];
    }
    let zc = matvec(&w, e.row(c));
    let logits: Vec<f64> = nbrs
        .iter()
        .map(|&n| (dotv(a_dst.row(0), &zc) + dotv(a_src.row(0), &matvec(&w, e.row(n))) + a_b).max(0.0))
        .collect();
    let alpha = softmax(&logits);
    let mut g = vec![0.0; e.cols()];
    for (i, &n) in nbrs.iter().enumerate() {
        for (gj, zj) in g.iter_mut().zip(matvec(&w, e.row(n))) {
            *gj += alpha[i] * zj;
        }
    }
    g
}

/// Attention-weighted prerequisite and correlate messages mixed by the
/// relation preferences, added to the base concept vector.
pub fn oracle_concept(store: &ParamStore, gr: &RelationGraph, c: usize) -> Vec<f64> {
    let e = get(store, "enc.concept");
    let g_pre = oracle_relation(store, "pre", &e, c, gr.prereq_neighbors(c));
    let g_cor = oracle_relation(store, "cor", &e, c, gr.corr_neighbors(c));
    let score = |g: &[f64], rel: &str| {
        let w = get(store, &format!("enc.l0.h0.pref_{rel}.w"));
        let b = get(store, &format!("enc.l0.h0.pref_{rel}.b")).item();
        (dotv(w.row(0), g) + b).max(0.0)
    };
    let mu = softmax(&[score(&g_pre, "pre"), score(&g_cor, "cor")]);
    (0..e.cols())
        .map(|j| e.get(c, j) + mu[0] * g_pre[j] + mu[1] * g_cor[j])
        .collect()
}

/// Exercise vector plus attention over its concepts, queried by the mean
/// base vector of those concepts.
pub fn oracle_exercise(store: &ParamStore, gr: &RelationGraph, q: usize) -> Vec<f64> {
    let e = get(store, "enc.concept");
    let eq = get(store, "enc.exercise");
    let w = get(store, "enc.rel.h0.w");
    let a_dst = get(store, "enc.rel.h0.a_dst");
    let a_src = get(store, "enc.rel.h0.a_src");
    let a_b = get(store, "enc.rel.h0.a_b").item();
    let cs = gr.exercise_concepts(q);
    let mut mean = vec![0.0; e.cols()];
    for &c in cs {
        for (m, v) in mean.iter_mut().zip(e.row(c)) {
            *m += v / cs.len() as f64;
        }
    }
    let zq = matvec(&w, &mean);
    let logits: Vec<f64> = cs
        .iter()
        .map(|&c| (dotv(a_dst.row(0), &zq) + dotv(a_src.row(0), &matvec(&w, e.row(c))) + a_b).max(0.0))
        .collect();
    let beta = softmax(&logits);
    let mut out = eq.row(q).to_vec();
    for (i, &c) in cs.iter().enumerate() {
        for (o, z) in out.iter_mut().zip(matvec(&w, e.row(c))) {
            *o += beta[i] * z;
        }
    }
    out
}

/// `σ(MLP(h_s − h_q))` with ReLU hidden layers, evaluated neuron by neuron.
pub fn oracle_predict(store: &ParamStore, layers: usize, hs: &[f64], hq: &[f64]) -> f64 {
    let mut h: Vec<f64> = hs.iter().zip(hq).map(|(a, b)| a - b).collect();
    for i in 0..layers {
        let w = get(store, &format!("head.l{i}.w"));
        let b = get(store, &format!("head.l{i}.b"));
        h = (0..w.rows()).map(|r| dotv(w.row(r), &h) + b.get(0, r)).collect();
        if i + 1 < layers {
            h.iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }
    sigmoid(h[0])
}

fn random_graph(rng: &mut ChaCha8Rng, k: usize, m: usize) -> RelationGraph {
    // Edges only go from lower to higher index, so the DAG is acyclic.
    let mut prereq = Vec::new();
    let mut corr = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            match rng.gen_range(0..10) {
                0..=2 => prereq.push((a, b)),
                3 => corr.push((a, b)),
                _ => {}
            }
        }
    }
    let qc = (0..m)
        .map(|_| {
            let n = rng.gen_range(1..=3);
            (0..n).map(|_| rng.gen_range(0..k)).collect::<BTreeSet<_>>()
        })
        .collect();
    RelationGraph::new(k, prereq, corr, qc).unwrap()
}

/// Adaptor, concept aggregation, exercise aggregation and prediction head
/// against the loop oracles on `cases` random instances each.
pub fn check_equation_oracles(cases: u64) -> Check {
    const TOL: f64 = 1e-12;
    let mut worst = [0.0f64; 4];
    for case in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + case);

        let (text_dim, d, k) = (rng.gen_range(1..12), rng.gen_range(1..6), rng.gen_range(1..5));
        let mut store = ParamStore::new();
        let a = Adaptor::register(&mut store, "t", text_dim, d, Some(k), case).map_err(|e| e.to_string())?;
        randomise(&mut store, &mut rng);
        let x = random(&mut rng, 3, text_dim);
        let got = a.apply(&store, &x).map_err(|e| e.to_string())?;
        for r in 0..3 {
            worst[0] = worst[0].max(max_diff(got.row(r), &oracle_moe(&store, "t", k, x.row(r))));
        }

        let (kc, m, d) = (rng.gen_range(2..9), rng.gen_range(1..7), rng.gen_range(1..6));
        let gr = random_graph(&mut rng, kc, m);
        let st = GraphStructure::new(&gr);
        let mut store = ParamStore::new();
        let enc = GraphEncoder::register(&mut store, &StateConfig::default(), kc, m, d, case, None)
            .map_err(|e| e.to_string())?;
        randomise(&mut store, &mut rng);
        let ec = eval(&store, |t, p| enc.concepts(t, p, &st).unwrap());
        let eq = eval(&store, |t, p| enc.exercises(t, p, &st).unwrap());
        for c in 0..kc {
            worst[1] = worst[1].max(max_diff(ec.row(c), &oracle_concept(&store, &gr, c)));
        }
        for q in 0..m {
            worst[2] = worst[2].max(max_diff(eq.row(q), &oracle_exercise(&store, &gr, q)));
        }

        let d = rng.gen_range(1..8);
        let hidden: Vec<usize> = (0..rng.gen_range(0..3)).map(|_| rng.gen_range(1..10)).collect();
        let mut store = ParamStore::new();
        let head = PredictHead::register(&mut store, d, &hidden, 0.5, case).map_err(|e| e.to_string())?;
        randomise(&mut store, &mut rng);
        let hs = random(&mut rng, 4, d);
        let hq = random(&mut rng, 4, d);
        let y = eval(&store, |t, p| {
            let a = t.constant(hs.clone());
            let b = t.constant(hq.clone());
            head.predict(t, p, a, Some(b), &mut ChaCha8Rng::seed_from_u64(0))
                .unwrap()
        });
        for r in 0..4 {
            let want = oracle_predict(&store, hidden.len() + 1, hs.row(r), hq.row(r));
            worst[3] = worst[3].max((y.get(r, 0) - want).abs());
        }
    }
    let names = ["moe_forward", "aggregate_concept", "aggregate_exercise", "predict"];
    for (n, w) in names.iter().zip(worst) {
        if !(w < TOL) {
            return Err(format!("{n}: max deviation {w:e} over {cases} instances"));
        }
    }
    Ok(format!(
        "{cases} instances each; max deviations {:.1e} / {:.1e} / {:.1e} / {:.1e}",
        worst[0], worst[1], worst[2], worst[3]
    ))
}

fn pair_count_auc(scores: &[f64], labels: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] == 1.0 && labels[j] == 0.0 {
                den += 1.0;
                num += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

/// AUC against O(n²) pair counting (exact), ACC and RMSE against direct
/// loops (within 1e−12).
pub fn check_metric_oracles(cases: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..cases {
        let n = rng.gen_range(2..120);
        // Coarse scores force plenty of ties.
        let coarse = rng.gen_bool(0.5);
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if coarse {
                    f64::from(rng.gen_range(0..5)) / 4.0
                } else {
                    rng.gen()
                }
            })
            .collect();
        let mut labels: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.gen_bool(0.4)))).collect();
        labels[0] = 1.0;
        labels[1] = 0.0;
        let auc = metrics::auc(&scores, &labels).map_err(|e| e.to_string())?;
        let want = pair_count_auc(&scores, &labels);
        if auc != want {
            return Err(format!("case {case}: auc {auc} vs pair count {want}"));
        }
        let acc = metrics::acc(&scores, &labels).map_err(|e| e.to_string())?;
        let acc_want = scores
            .iter()
            .zip(&labels)
            .filter(|(s, l)| (**s >= 0.5) == (**l == 1.0))
            .count() as f64
            / n as f64;
        let rmse = metrics::rmse(&scores, &labels).map_err(|e| e.to_string())?;
        let rmse_want = (scores.iter().zip(&labels).map(|(s, l)| (s - l).powi(2)).sum::<f64>() / n as f64).sqrt();
        if (acc - acc_want).abs() > 1e-12 || (rmse - rmse_want).abs() > 1e-12 {
            return Err(format!("case {case}: acc {acc}/{acc_want}, rmse {rmse}/{rmse_want}"));
        }
    }
    Ok(format!("{cases} random cases, auc exact, acc/rmse within 1e-12"))
}

/// A 5-concept, 8-exercise, 3-student log with a pseudo-embedding provider.
pub fn toy() -> (InteractionLog, RelationGraph, EmbeddingProvider) {
    let mut log = InteractionLog::new();
    let concepts = ["add", "sub", "mul", "div", "frac"];
    let qc: [&[usize]; 8] = [&[0], &[1], &[0, 2], &[2], &[3], &[2, 3], &[4], &[3, 4]];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for s in 0..3 {
        for q in 0..8 {
            if (s + q) % 3 == 2 && q > 0 {
                continue;
            }
            let names: Vec<&str> = qc[q].iter().map(|&c| concepts[c]).collect();
            log.push(&format!("s{s}"), &format!("q{q}"), &names, u8::from(rng.gen_bool(0.5)))
                .unwrap();
        }
    }
    let cid = |n: &str| log.concepts.get(n).unwrap();
    let mut qsets = vec![BTreeSet::new(); 8];
    for (q, cs) in qc.iter().enumerate() {
        let qi = log.exercises.get(&format!("q{q}")).unwrap();
        qsets[qi] = cs.iter().map(|&c| cid(concepts[c])).collect();
    }
    let graph = RelationGraph::new(
        5,
        [
            (cid("add"), cid("mul")),
            (cid("sub"), cid("div")),
            (cid("mul"), cid("div")),
            (cid("div"), cid("frac")),
        ],
        [(cid("add"), cid("sub")), (cid("mul"), cid("frac"))],
        qsets,
    )
    .unwrap();
    let provider = EmbeddingProvider::pseudo(PseudoEmbedder::new(12, 9));
    (log, graph, provider)
}

const H: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const FLOOR: f64 = 1e-6;

fn weighted_sum(tape: &mut Tape, x: Var) -> cogdiag::Result<Var> {
    let [r, c] = tape.value(x).shape();
    let w = tape.constant(random(&mut ChaCha8Rng::seed_from_u64(99), r, c));
    let y = tape.mul(x, w)?;
    tape.sum_all(y)
}

fn grad_case(
    name: &str,
    store: &ParamStore,
    f: impl Fn(&mut Tape, &[Var]) -> cogdiag::Result<Var>,
) -> Result<f64, String> {
    let ids: Vec<_> = store.iter().map(|(n, _)| store.id(n).unwrap()).collect();
    let r = check_gradients(store, H, FLOOR, |t, p| {
        let vars: Vec<Var> = ids.iter().map(|&i| p[i]).collect();
        let y = f(t, &vars)?;
        if t.value(y).shape() == [1, 1] {
            Ok(y)
        } else {
            weighted_sum(t, y)
        }
    })
    .map_err(|e| format!("{name}: {e}"))?;
    if r.max_rel_err < GRAD_TOL {
        Ok(r.max_rel_err)
    } else {
        Err(format!("{name}: rel err {:e} at {:?}", r.max_rel_err, r.worst))
    }
}

fn store(shapes: &[(usize, usize)], seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    for (i, &(r, c)) in shapes.iter().enumerate() {
        s.insert(format!("x{i}"), random(&mut rng, r, c));
    }
    s
}

/// Finite-difference check of every tape op.
pub fn check_op_gradients() -> Check {
    let mut worst = 0.0f64;
    let mut run = |name: &str, shapes: &[(usize, usize)], f: &dyn Fn(&mut Tape, &[Var]) -> cogdiag::Result<Var>| {
        worst = worst.max(grad_case(name, &store(shapes, name.len() as u64), f)?);
        Ok::<_, String>(())
    };
    run("matmul", &[(3, 4), (4, 2)], &|t, x| t.matmul(x[0], x[1]))?;
    run("matmul_bt", &[(3, 4), (5, 4)], &|t, x| t.matmul_bt(x[0], x[1]))?;
    run("add", &[(3, 4), (3, 4)], &|t, x| t.add(x[0], x[1]))?;
    run("sub", &[(3, 4), (3, 4)], &|t, x| t.sub(x[0], x[1]))?;
    run("mul", &[(3, 4), (3, 4)], &|t, x| t.mul(x[0], x[1]))?;
    run("add_row", &[(3, 4), (1, 4)], &|t, x| t.add_row(x[0], x[1]))?;
    run("mul_col", &[(3, 4), (3, 1)], &|t, x| t.mul_col(x[0], x[1]))?;
    run("scale", &[(3, 4)], &|t, x| t.scale(x[0], -1.7))?;
    run("concat_cols", &[(3, 4), (3, 1)], &|t, x| {
        t.concat_cols(&[x[1], x[0], x[1]])
    })?;
    run("col", &[(3, 4)], &|t, x| t.col(x[0], 2))?;
    run("gather_rows", &[(3, 4)], &|t, x| t.gather_rows(x[0], vec![2, 0, 2, 1]))?;
    run("scatter_add_rows", &[(3, 4)], &|t, x| {
        t.scatter_add_rows(x[0], vec![1, 1, 4], 5)
    })?;
    run("segment_softmax", &[(6, 1)], &|t, x| {
        t.segment_softmax(x[0], vec![0, 2, 0, 2, 2, 3], 4)
    })?;
    let sp = Arc::new(SparseMatrix::from_rows(
        3,
        &[vec![(0, 0.5), (2, 0.5)], vec![], vec![(1, 1.0)]],
    ));
    run("spmm", &[(3, 4)], &|t, x| t.spmm(sp.clone(), x[0]))?;
    run("mean_rows", &[(3, 4)], &|t, x| t.mean_rows(x[0]))?;
    run("sum_all", &[(3, 4)], &|t, x| t.sum_all(x[0]))?;
    run("relu", &[(3, 4)], &|t, x| t.relu(x[0]))?;
    run("sigmoid", &[(3, 4)], &|t, x| t.sigmoid(x[0]))?;
    run("softmax_rows", &[(3, 4)], &|t, x| t.softmax_rows(x[0]))?;
    run("dropout", &[(3, 4)], &|t, x| {
        t.dropout(x[0], 0.5, &mut ChaCha8Rng::seed_from_u64(11))
    })?;
    let labels = [1.0, 0.0, 0.0, 1.0, 1.0];
    for reduction in [Reduction::Sum, Reduction::Mean] {
        run("bce_loss", &[(5, 1)], &|t, x| {
            let q = t.sigmoid(x[0])?;
            t.bce_loss(q, &labels, reduction)
        })?;
    }
    Ok(format!("22 op cases, max rel err {worst:.1e}"))
}

/// Finite-difference check of the whole model on the toy graph under
/// several configurations.
pub fn check_model_gradients() -> Check {
    let (log, graph, provider) = toy();
    let all: Vec<usize> = (0..log.len()).collect();
    let inputs = ModelInputs::build(&log, &graph, &provider, &all).map_err(|e| e.to_string())?;
    let students: Vec<usize> = log.interactions().iter().map(|it| it.student).collect();
    let exercises: Vec<usize> = log.interactions().iter().map(|it| it.exercise).collect();
    let labels: Vec<f64> = log.interactions().iter().map(|it| f64::from(it.response)).collect();

    let base = || {
        let mut c = ModelConfig::default();
        c.head.hidden = vec![6, 4];
        c.moe.k = 2;
        c
    };
    let mut variants = vec![("full", base())];
    let mut deep = base();
    deep.state.heads = 2;
    deep.state.layers = 2;
    deep.state.query = AttentionQuery::Exercise;
    variants.push(("two heads, two layers", deep));
    let mut linear = base();
    linear.moe.enabled = false;
    linear.state.gat = false;
    variants.push(("linear adaptor and aggregation", linear));
    let mut ids = base();
    ids.ablation.llm = true;
    variants.push(("id tables", ids));
    let mut text_init = base();
    text_init.state.concept_init = ConceptInit::Text;
    variants.push(("text concept init", text_init));

    let mut worst = 0.0f64;
    let mut scalars = 0;
    for (name, cfg) in &variants {
        let mut model = Model::new(cfg, &inputs, 3).map_err(|e| e.to_string())?;
        // Zero-initialised biases put ReLU inputs exactly on the kink when a
        // dropout mask clears a whole layer; move every value off it.
        let mut jitter = ChaCha8Rng::seed_from_u64(17);
        for t in model.params_mut().tensors_mut() {
            for v in t.data_mut() {
                *v += jitter.gen_range(-0.05..0.05);
            }
        }
        let r = check_gradients(model.params(), H, FLOOR, |t, p| {
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            let y = model.forward(t, p, &inputs, &students, &exercises, &mut rng)?;
            t.bce_loss(y, &labels, Reduction::Sum)
        })
        .map_err(|e| format!("{name}: {e}"))?;
        if r.checked != model.params().scalar_count() || !(r.max_rel_err < GRAD_TOL) {
            return Err(format!("{name}: rel err {:e} at {:?}", r.max_rel_err, r.worst));
        }
        worst = worst.max(r.max_rel_err);
        scalars += r.checked;
    }
    Ok(format!(
        "{} configurations, {scalars} parameters, max rel err {worst:.1e}",
        variants.len()
    ))
}

/// Knowledge state and pseudo student vector of a 50-record history are
/// bit-identical under random permutations.
pub fn check_permutation_invariance(cases: u32) -> Check {
    let gr = {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        random_graph(&mut rng, 8, 12)
    };
    let st = GraphStructure::new(&gr);
    let mut store = ParamStore::new();
    let enc =
        GraphEncoder::register(&mut store, &StateConfig::default(), 8, 12, 6, 1, None).map_err(|e| e.to_string())?;
    randomise(&mut store, &mut ChaCha8Rng::seed_from_u64(6));
    let pseudo = PseudoEmbedder::new(64, 3);
    let state_of = |h: &[(usize, u8)]| {
        let pool = StudentPool::new(&[h.to_vec()], &st);
        eval(&store, |t, p| {
            let ec = enc.concepts(t, p, &st).unwrap();
            let eq = enc.exercises(t, p, &st).unwrap();
            enc.state(t, p, &pool, ec, eq).unwrap()
        })
    };
    let key_of = |h: &[(usize, u8)]| {
        let entries = h
            .iter()
            .flat_map(|&(q, r)| gr.exercise_concepts(q).iter().map(move |&c| (format!("k{c}"), r)))
            .collect();
        StudentHistoryKey::new(entries).unwrap()
    };
    let history = proptest::collection::vec((0..12usize, 0..=1u8), 50);
    let strategy = history.prop_flat_map(|h| (Just(h.clone()), Just(h).prop_shuffle()));
    let mut runner = TestRunner::new(PropConfig {
        cases,
        failure_persistence: None,
        ..PropConfig::default()
    });
    runner
        .run(&strategy, |(h, perm)| {
            let (a, b) = (state_of(&h), state_of(&perm));
            prop_assert!(
                a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()),
                "state differs"
            );
            let (u, v) = (pseudo.embed_history(&key_of(&h)), pseudo.embed_history(&key_of(&perm)));
            prop_assert!(
                u.iter().zip(&v).all(|(x, y)| x.to_bits() == y.to_bits()),
                "pseudo vector differs"
            );
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("{cases} random 50-record histories and permutations"))
}
