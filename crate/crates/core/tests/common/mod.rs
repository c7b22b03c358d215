//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use hgcl::contrast::{info_nce, total_objective, MixupPool, NegativePlan, ProjectionHead};
use hgcl::encoder::{aggregate_semantics, semantic_view_encode, Aggregator, AttentionHead, EncoderConfig, SemanticLayer};
use hgcl::hetgraph::{EdgeSet, GraphFile, HeteroGraph, Metapath, NodeTypeSpec, SemanticView};
use hgcl::pipeline::{ModelParams, RunConfig};
use hgcl::structure::CandidateIndex;
use hgcl::tensor::{Mask, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Entries in `[-1.1, -0.1] U [0.1, 1.1]`, keeping kinks out of finite-difference range.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.1..1.1);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn positive(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(0.2..2.0)).collect()).unwrap()
}

// ---- finite-difference gradient checking ------------------------------------

pub type Build = Box<dyn Fn(&mut Tape, &[Var]) -> hgcl::Result<Var>>;

pub struct GradCase {
    pub name: String,
    pub inputs: Vec<Tensor>,
    pub build: Build,
}

impl GradCase {
    pub fn new(name: &str, inputs: Vec<Tensor>, build: impl Fn(&mut Tape, &[Var]) -> hgcl::Result<Var> + 'static) -> Self {
        GradCase {
            name: name.into(),
            inputs,
            build: Box::new(build),
        }
    }
}

/// `sum(build(inputs) * weights)` evaluated with every input held constant.
fn reduced_value(case: &GradCase, inputs: &[Tensor], weights: &Tensor) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = (case.build)(&mut tape, &vars).unwrap();
    tape.value(out)
        .data()
        .iter()
        .zip(weights.data())
        .map(|(a, b)| a * b)
        .sum()
}

/// Largest relative error `||a - n|| / max(||a||, ||n||, 1e-8)` over the
/// inputs, comparing tape gradients with central differences (h = 1e-5).
pub fn grad_rel_error(case: &GradCase) -> f64 {
    let h = 1e-5;
    let mut tape = Tape::new();
    let vars: Vec<Var> = case.inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = (case.build)(&mut tape, &vars).unwrap();
    let shape = tape.value(out).shape().to_vec();
    let weights = random_tensor(&mut rng(0xfeed), &shape);
    let w = tape.constant(weights.clone());
    let prod = tape.mul(out, w).unwrap();
    let loss = tape.sum(prod).unwrap();
    tape.backward(loss).unwrap();

    let mut worst: f64 = 0.0;
    for (k, var) in vars.iter().enumerate() {
        let analytic = tape.grad_or_zeros(*var);
        let mut numeric = vec![0.0; analytic.len()];
        for (e, slot) in numeric.iter_mut().enumerate() {
            let mut plus = case.inputs.clone();
            plus[k].data_mut()[e] += h;
            let mut minus = case.inputs.clone();
            minus[k].data_mut()[e] -= h;
            *slot = (reduced_value(case, &plus, &weights) - reduced_value(case, &minus, &weights)) / (2.0 * h);
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.data().iter().zip(&numeric).map(|(a, b)| a - b).collect();
        let denom = norm(analytic.data()).max(norm(&numeric)).max(1e-8);
        worst = worst.max(norm(&diff) / denom);
    }
    worst
}

fn view_mask(n: usize, edges: &[(usize, usize)]) -> Arc<Mask> {
    SemanticView::from_edges("v", n, edges, true).unwrap().mask()
}

/// Every tape primitive plus the encoder layers, the single-anchor loss and
/// the full objective.
pub fn gradient_cases() -> Vec<GradCase> {
    let mut r = rng(42);
    let mut cases = vec![
        GradCase::new("matmul", vec![random_tensor(&mut r, &[3, 4]), random_tensor(&mut r, &[4, 2])], |t, v| {
            t.matmul(v[0], v[1])
        }),
        GradCase::new("transpose", vec![random_tensor(&mut r, &[3, 4])], |t, v| t.transpose(v[0])),
        GradCase::new("reshape", vec![random_tensor(&mut r, &[3, 4])], |t, v| t.reshape(v[0], &[2, 6])),
        GradCase::new("add_broadcast", vec![random_tensor(&mut r, &[3, 4]), random_tensor(&mut r, &[4])], |t, v| {
            t.add(v[0], v[1])
        }),
        GradCase::new("sub", vec![random_tensor(&mut r, &[3, 4]), random_tensor(&mut r, &[3, 4])], |t, v| {
            t.sub(v[0], v[1])
        }),
        GradCase::new("mul", vec![random_tensor(&mut r, &[3, 4]), random_tensor(&mut r, &[3, 4])], |t, v| {
            t.mul(v[0], v[1])
        }),
        GradCase::new("scale", vec![random_tensor(&mut r, &[3, 4])], |t, v| t.scale(v[0], -1.7)),
        GradCase::new("add_scalar", vec![random_tensor(&mut r, &[3, 4])], |t, v| t.add_scalar(v[0], 0.3)),
        GradCase::new("concat_last", vec![random_tensor(&mut r, &[3, 2]), random_tensor(&mut r, &[3, 3])], |t, v| {
            t.concat_last(&[v[0], v[1]])
        }),
        GradCase::new("concat_rows", vec![random_tensor(&mut r, &[2, 3]), random_tensor(&mut r, &[4, 3])], |t, v| {
            t.concat_rows(&[v[0], v[1]])
        }),
        GradCase::new("softmax", vec![random_tensor(&mut r, &[3, 5])], |t, v| t.softmax(v[0])),
        GradCase::new("masked_softmax", vec![random_tensor(&mut r, &[4, 4])], |t, v| {
            t.masked_softmax(v[0], &view_mask(4, &[(0, 1), (1, 2)]))
        }),
        GradCase::new("logsumexp", vec![random_tensor(&mut r, &[3, 5])], |t, v| t.logsumexp(v[0], None)),
        GradCase::new("logsumexp_masked", vec![random_tensor(&mut r, &[4, 4])], |t, v| {
            t.logsumexp(v[0], Some(&Arc::new(Mask::off_diagonal(4))))
        }),
        GradCase::new("elu", vec![away_from_zero(&mut r, &[3, 4])], |t, v| t.elu(v[0])),
        GradCase::new("relu", vec![away_from_zero(&mut r, &[3, 4])], |t, v| t.relu(v[0])),
        GradCase::new("leaky_relu", vec![away_from_zero(&mut r, &[3, 4])], |t, v| t.leaky_relu(v[0], 0.2)),
        GradCase::new("tanh", vec![random_tensor(&mut r, &[3, 4])], |t, v| t.tanh(v[0])),
        GradCase::new("exp", vec![random_tensor(&mut r, &[3, 4])], |t, v| t.exp(v[0])),
        GradCase::new("log", vec![positive(&mut r, &[3, 4])], |t, v| t.log(v[0])),
        GradCase::new("sum", vec![random_tensor(&mut r, &[3, 4])], |t, v| t.sum(v[0])),
        GradCase::new("mean", vec![random_tensor(&mut r, &[3, 4])], |t, v| t.mean(v[0])),
        GradCase::new("sum_last", vec![random_tensor(&mut r, &[3, 4])], |t, v| t.sum_last(v[0])),
        GradCase::new("normalize_rows", vec![away_from_zero(&mut r, &[3, 4])], |t, v| t.normalize_rows(v[0])),
        GradCase::new("gather_rows", vec![random_tensor(&mut r, &[4, 3])], |t, v| t.gather_rows(v[0], &[2, 0, 2, 3])),
        GradCase::new("mix_rows", vec![random_tensor(&mut r, &[4, 3])], |t, v| {
            t.mix_rows(v[0], &[(0, 1, 0.3), (2, 0, 0.9), (3, 3, 0.5)])
        }),
        GradCase::new("group_dot", vec![random_tensor(&mut r, &[3, 4]), random_tensor(&mut r, &[6, 4])], |t, v| {
            t.group_dot(v[0], v[1])
        }),
    ];

    // one semantic attention layer, two heads
    let (n, f, dh) = (5, 3, 2);
    let mask = view_mask(n, &[(0, 1), (1, 2), (2, 3), (0, 4), (1, 4)]);
    let mut inputs = vec![random_tensor(&mut r, &[n, f])];
    for _ in 0..2 {
        inputs.push(random_tensor(&mut r, &[f, dh]));
        inputs.push(random_tensor(&mut r, &[dh, 1]));
        inputs.push(random_tensor(&mut r, &[dh, 1]));
    }
    cases.push(GradCase::new("semantic_view_encode", inputs, move |t, v| {
        let layer = SemanticLayer {
            heads: v[1..]
                .chunks(3)
                .map(|c| AttentionHead {
                    weight: c[0],
                    attn_src: c[1],
                    attn_dst: c[2],
                })
                .collect(),
        };
        Ok(semantic_view_encode(t, v[0], &mask, &layer, 0.2)?.0)
    }));

    let (d, dm) = (4, 3);
    let inputs = vec![
        random_tensor(&mut r, &[n, d]),
        random_tensor(&mut r, &[n, d]),
        random_tensor(&mut r, &[n, d]),
        random_tensor(&mut r, &[d, dm]),
        random_tensor(&mut r, &[dm]),
        random_tensor(&mut r, &[dm, 1]),
    ];
    cases.push(GradCase::new("aggregate_semantics", inputs, |t, v| {
        let agg = Aggregator {
            weight: v[3],
            bias: v[4],
            query: v[5],
        };
        Ok(aggregate_semantics(t, &v[..3], &agg)?.0)
    }));

    let inputs = vec![
        random_tensor(&mut r, &[1, d]),
        random_tensor(&mut r, &[1, d]),
        random_tensor(&mut r, &[4, d]),
        random_tensor(&mut r, &[d, d]),
        random_tensor(&mut r, &[d]),
        random_tensor(&mut r, &[d, d]),
        random_tensor(&mut r, &[d]),
    ];
    cases.push(GradCase::new("info_nce", inputs, |t, v| {
        let head = ProjectionHead {
            w1: v[3],
            b1: v[4],
            w2: v[5],
            b2: v[6],
        };
        info_nce(t, v[0], v[1], v[2], 0.5, &head)
    }));

    cases.push(objective_case(&mut r));
    cases
}

/// The full objective over every model parameter on a 6-node, 2-view instance
/// with three synthesized negatives per anchor.
fn objective_case(r: &mut ChaCha8Rng) -> GradCase {
    let n = 6;
    let cfg = EncoderConfig {
        heads: 2,
        dim: 4,
        attn_dim: 3,
        slope: 0.2,
    };
    let features = random_tensor(r, &[n, 3]);
    let params = ModelParams::init(&cfg, 3, 2, 7).unwrap();
    let masks = vec![
        view_mask(n, &[(0, 1), (1, 2), (3, 4), (4, 5), (2, 3)]),
        view_mask(n, &[(0, 2), (2, 4), (1, 3), (3, 5), (0, 5)]),
    ];
    let cands: Vec<CandidateIndex> = (0..2)
        .map(|p| CandidateIndex::from_scores(n, 3, |a| (0..n).map(|j| ((j * 5 + a + p) % 4) as f64).collect()).unwrap())
        .collect();
    let plan = NegativePlan::sample(n, 2, 3, 1.0, MixupPool::Candidates, &cands, &mut rng(3)).unwrap();
    let template = params.clone();
    let inputs: Vec<Tensor> = params.named().into_iter().map(|(_, t)| t.clone()).collect();
    GradCase::new("total_objective", inputs, move |t, v| {
        let mut it = v.iter();
        let bound: ModelParams<Var> = template.map(&mut |_| *it.next().unwrap());
        let x = t.constant(features.clone());
        let out = bound.encoder.forward(t, x, &masks)?;
        total_objective(t, &out, &bound.head, &plan, 0.5)
    })
}

// ---- dense linear algebra ---------------------------------------------------

/// Gaussian elimination with partial pivoting; `a` is square, returns `a^{-1} b`.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

/// Personalized PageRank from `anchor` by solving `(I - (1-c) P^T) s = c e_v`.
pub fn dense_ppr(view: &SemanticView, c: f64, anchor: usize) -> Vec<f64> {
    let n = view.num_nodes();
    let mut a = vec![vec![0.0; n]; n];
    for (j, row) in a.iter_mut().enumerate() {
        row[j] = 1.0;
    }
    for i in 0..n {
        for &j in view.neighbors(i) {
            a[j][i] -= (1.0 - c) / view.degree(i) as f64;
        }
    }
    let mut b = vec![0.0; n];
    b[anchor] = c;
    solve(a, b)
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues ascending and matching eigenvectors as columns of `vecs[i][k]`.
pub fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[x][x].total_cmp(&a[y][y]));
    let vals = order.iter().map(|&i| a[i][i]).collect();
    let vecs = (0..n).map(|r| order.iter().map(|&i| v[r][i]).collect()).collect();
    (vals, vecs)
}

/// Dense `I - D^{-1/2} A D^{-1/2}` built independently of the library.
pub fn dense_laplacian(view: &SemanticView) -> Vec<Vec<f64>> {
    let n = view.num_nodes();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        let di = view.neighbors(i).len() as f64;
        if di > 0.0 {
            l[i][i] += 1.0;
        }
        for &j in view.neighbors(i) {
            let dj = view.neighbors(j).len() as f64;
            l[i][j] -= 1.0 / (di * dj).sqrt();
        }
    }
    l
}

pub fn random_view(rng: &mut ChaCha8Rng, n: usize, p: f64, self_loops: bool) -> SemanticView {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p) {
                edges.push((i, j));
            }
        }
    }
    SemanticView::from_edges("random", n, &edges, self_loops).unwrap()
}

// ---- metapath oracle ----------------------------------------------------------

/// A random author/paper/venue schema of at most 100 nodes with metapaths
/// A-P-A and A-P-V-P-A. Returns the graph and its biadjacency matrices
/// (A x P, P x V).
pub fn random_schema(rng: &mut ChaCha8Rng) -> (HeteroGraph, Vec<Vec<bool>>, Vec<Vec<bool>>) {
    let (na, np, nv) = (rng.gen_range(1..=40), rng.gen_range(1..=45), rng.gen_range(1..=15));
    let (pa, pv) = (rng.gen_range(0.0..0.15), rng.gen_range(0.0..0.3));
    let mut ap = vec![vec![false; np]; na];
    let mut pvm = vec![vec![false; nv]; np];
    let mut writes = Vec::new();
    let mut published = Vec::new();
    for (a, row) in ap.iter_mut().enumerate() {
        for (p, cell) in row.iter_mut().enumerate() {
            if rng.gen_bool(pa) {
                *cell = true;
                writes.push([a, p]);
            }
        }
    }
    for (p, row) in pvm.iter_mut().enumerate() {
        for (v, cell) in row.iter_mut().enumerate() {
            if rng.gen_bool(pv) {
                *cell = true;
                // stored venue -> paper to exercise backward traversal
                published.push([v, p]);
            }
        }
    }
    let mut features = BTreeMap::new();
    features.insert("A".to_string(), vec![vec![0.0]; na]);
    let file = GraphFile {
        node_types: vec![
            NodeTypeSpec {
                name: "A".into(),
                count: na,
                feature_dim: 1,
            },
            NodeTypeSpec {
                name: "P".into(),
                count: np,
                feature_dim: 0,
            },
            NodeTypeSpec {
                name: "V".into(),
                count: nv,
                feature_dim: 0,
            },
        ],
        anchor_type: "A".into(),
        features,
        edges: vec![
            EdgeSet {
                edge_type: "writes".into(),
                src_type: "A".into(),
                dst_type: "P".into(),
                pairs: writes,
            },
            EdgeSet {
                edge_type: "hosts".into(),
                src_type: "V".into(),
                dst_type: "P".into(),
                pairs: published,
            },
        ],
        labels: None,
        metapaths: vec![
            Metapath {
                name: "APA".into(),
                node_types: vec!["A".into(), "P".into(), "A".into()],
                edge_types: vec!["writes".into(), "writes".into()],
            },
            Metapath {
                name: "APVPA".into(),
                node_types: ["A", "P", "V", "P", "A"].iter().map(|s| s.to_string()).collect(),
                edge_types: ["writes", "hosts", "hosts", "writes"].iter().map(|s| s.to_string()).collect(),
            },
        ],
    };
    (HeteroGraph::from_file(file).unwrap(), ap, pvm)
}

pub fn bool_product(a: &[Vec<bool>], b: &[Vec<bool>]) -> Vec<Vec<bool>> {
    let inner = b.len();
    let cols = b.first().map_or(0, |r| r.len());
    a.iter()
        .map(|row| (0..cols).map(|j| (0..inner).any(|k| row[k] && b[k][j])).collect())
        .collect()
}

pub fn bool_transpose(a: &[Vec<bool>], cols: usize) -> Vec<Vec<bool>> {
    (0..cols).map(|j| a.iter().map(|row| row[j]).collect()).collect()
}

/// Boolean chain products for both metapaths, diagonal set.
pub fn metapath_oracles(ap: &[Vec<bool>], pv: &[Vec<bool>], np: usize, nv: usize) -> [Vec<Vec<bool>>; 2] {
    let pa = bool_transpose(ap, np);
    let vp = bool_transpose(pv, nv);
    let mut apa = bool_product(ap, &pa);
    let apv = bool_product(ap, pv);
    let apvp = bool_product(&apv, &vp);
    let mut apvpa = bool_product(&apvp, &pa);
    for (i, row) in apa.iter_mut().enumerate() {
        row[i] = true;
    }
    for (i, row) in apvpa.iter_mut().enumerate() {
        row[i] = true;
    }
    [apa, apvpa]
}

// ---- benchmark configuration ----------------------------------------------------

/// The planted-partition benchmark: 150 anchors, 3 classes, two metapaths,
/// p_in 0.2, p_out 0.02. Graph and model share the seed.
pub fn benchmark_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.synthetic.seed = seed;
    cfg.seed = seed;
    cfg.epochs = 100;
    cfg
}
