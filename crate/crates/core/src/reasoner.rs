//! Relation-aware graph encoding of the change knowledge graph. Node states
//! are initialized from text embeddings of entity names, refined by L layers
//! of relation-conditioned message passing (ReLU, self-loop plus per-relation
//! in-neighbor averages, edges directed head -> tail), and pooled by a
//! permutation-invariant readout into the graph prior vector.

use crate::adapters::TextEncoder;
use crate::config::{GraphEncoderKind, ReadoutKind, ReasonerConfig};
use crate::error::Result;
use crate::kg::ChangeKG;
use crate::nn::{xavier, Linear};
use crate::tensor::{ParamStore, Tensor};
use ndarray::Array2;

pub struct GraphReasoner {
    cfg: ReasonerConfig,
    /// Projection of text embeddings to the hidden width; `None` means the
    /// raw embeddings are used directly (requires matching widths).
    init_proj: Option<Linear>,
    /// `[layer][relation]` weights; GCN mode stores a single shared weight
    /// per layer at index 0.
    rel_weights: Vec<Vec<Tensor>>,
    self_weights: Vec<Tensor>,
    out_proj: Linear,
    attn_query: Option<Tensor>,
}

impl GraphReasoner {
    pub fn new(
        store: &mut ParamStore,
        cfg: &ReasonerConfig,
        n_relations: usize,
        text_dim: usize,
        seed: u64,
        project_init: bool,
    ) -> GraphReasoner {
        let d = cfg.hidden_dim;
        let init_proj = if project_init {
            Some(Linear::new(store, "reasoner.init", text_dim, d, seed))
        } else {
            assert_eq!(
                text_dim, d,
                "identity node init needs text_dim == hidden_dim"
            );
            None
        };
        let weights_per_layer = match cfg.encoder {
            GraphEncoderKind::Rgcn => n_relations.max(1),
            GraphEncoderKind::Gcn => 1,
        };
        let mut rel_weights = Vec::with_capacity(cfg.layers);
        let mut self_weights = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            rel_weights.push(
                (0..weights_per_layer)
                    .map(|r| xavier(store, &format!("reasoner.l{l}.rel{r}"), d, d, seed))
                    .collect(),
            );
            self_weights.push(xavier(store, &format!("reasoner.l{l}.self"), d, d, seed));
        }
        let out_proj = Linear::new(store, "reasoner.out", d, cfg.output_dim, seed);
        let attn_query = match cfg.readout {
            ReadoutKind::Attention => Some(xavier(store, "reasoner.readout.query", d, 1, seed)),
            ReadoutKind::Mean => None,
        };
        GraphReasoner {
            cfg: cfg.clone(),
            init_proj,
            rel_weights,
            self_weights,
            out_proj,
            attn_query,
        }
    }

    /// Self-loop weight matrix of one layer (for external oracles).
    pub fn layer_self_weight(&self, layer: usize) -> Array2<f64> {
        self.self_weights[layer].to_array()
    }

    /// Relation weight matrix of one layer (GCN mode shares index 0).
    pub fn layer_relation_weight(&self, layer: usize, relation: usize) -> Array2<f64> {
        match self.cfg.encoder {
            GraphEncoderKind::Rgcn => self.rel_weights[layer][relation].to_array(),
            GraphEncoderKind::Gcn => self.rel_weights[layer][0].to_array(),
        }
    }

    /// Initial node states: projected text embeddings of the entity names.
    pub fn init_nodes(&self, kg: &ChangeKG, text: &dyn TextEncoder) -> Result<Tensor> {
        let names = kg.entity_names();
        let emb = Tensor::constant(text.embed(&names)?);
        Ok(match &self.init_proj {
            Some(proj) => proj.forward(&emb),
            None => emb,
        })
    }

    /// Normalized in-neighbor aggregation matrix for one relation:
    /// `a[i][j] = 1 / c_{i,r}` when edge `j -> i` carries relation `r`.
    fn aggregation(&self, kg: &ChangeKG, relation: usize) -> Array2<f64> {
        let n = kg.n_entities();
        let mut counts = vec![0usize; n];
        for e in 0..kg.n_edges() {
            if kg.a_type[e] == relation {
                counts[kg.a_conn[1][e]] += 1;
            }
        }
        let mut a = Array2::zeros((n, n));
        for e in 0..kg.n_edges() {
            if kg.a_type[e] == relation {
                let (src, dst) = (kg.a_conn[0][e], kg.a_conn[1][e]);
                a[(dst, src)] += 1.0 / counts[dst] as f64;
            }
        }
        a
    }

    /// L rounds of relation-aware message passing.
    pub fn forward(&self, states: &Tensor, kg: &ChangeKG) -> Tensor {
        let mut h = states.clone();
        let aggs: Vec<Array2<f64>> = (0..kg.n_relations())
            .map(|r| self.aggregation(kg, r))
            .collect();
        for l in 0..self.cfg.layers {
            let mut acc = h.matmul(&self.self_weights[l]);
            for (r, agg) in aggs.iter().enumerate() {
                if agg.iter().all(|v| *v == 0.0) {
                    continue;
                }
                let w = match self.cfg.encoder {
                    GraphEncoderKind::Rgcn => &self.rel_weights[l][r],
                    GraphEncoderKind::Gcn => &self.rel_weights[l][0],
                };
                let messages = Tensor::constant(agg.clone()).matmul(&h).matmul(w);
                acc = acc.add(&messages);
            }
            h = acc.relu();
        }
        h
    }

    /// Pool node states into the graph prior `(1, output_dim)`.
    pub fn readout(&self, states: &Tensor) -> Tensor {
        let pooled = match (&self.cfg.readout, &self.attn_query) {
            (ReadoutKind::Mean, _) => states.mean_rows(),
            (ReadoutKind::Attention, Some(q)) => {
                let scores = states.matmul(q); // (n, 1)
                let weights = scores.t().softmax_rows(); // (1, n)
                weights.matmul(states)
            }
            (ReadoutKind::Attention, None) => unreachable!("attention readout without query"),
        };
        self.out_proj.forward(&pooled)
    }

    /// Full pass: init, message passing, readout.
    pub fn graph_prior(&self, kg: &ChangeKG, text: &dyn TextEncoder) -> Result<Tensor> {
        let states = self.init_nodes(kg, text)?;
        let refined = self.forward(&states, kg);
        Ok(self.readout(&refined))
    }
}

/// Explicit per-(node, relation, neighbor) evaluation of one message-passing
/// layer; the implementation must agree with this to machine precision.
pub fn rgcn_layer_oracle(
    h: &Array2<f64>,
    kg: &ChangeKG,
    self_w: &Array2<f64>,
    rel_w: &[Array2<f64>],
) -> Array2<f64> {
    let n = kg.n_entities();
    let d = h.ncols();
    let mut out = Array2::zeros((n, d));
    for i in 0..n {
        // self loop
        let mut acc = vec![0.0f64; d];
        for c in 0..d {
            for k in 0..d {
                acc[c] += h[(i, k)] * self_w[(k, c)];
            }
        }
        for r in 0..kg.n_relations() {
            let neighbors: Vec<usize> = (0..kg.n_edges())
                .filter(|&e| kg.a_type[e] == r && kg.a_conn[1][e] == i)
                .map(|e| kg.a_conn[0][e])
                .collect();
            if neighbors.is_empty() {
                continue;
            }
            let norm = 1.0 / neighbors.len() as f64;
            for &j in &neighbors {
                for c in 0..d {
                    let mut m = 0.0;
                    for k in 0..d {
                        m += h[(j, k)] * rel_w[r][(k, c)];
                    }
                    acc[c] += norm * m;
                }
            }
        }
        for c in 0..d {
            out[(i, c)] = acc[c].max(0.0);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::MockTextEncoder;
    use crate::config::ReasonerConfig;
    use crate::kg::{encode_graph, Triple};
    use crate::nn::seeded_rng;
    use rand::Rng;

    fn tiny_kg() -> ChangeKG {
        encode_graph(&[
            Triple::new("building", "appear-on", "bareland"),
            Triple::new("road", "built-along", "river"),
            Triple::new("building", "built-along", "river"),
        ])
        .unwrap()
    }

    fn reasoner_with(cfg: &ReasonerConfig, kg: &ChangeKG) -> (ParamStore, GraphReasoner) {
        let mut store = ParamStore::new();
        let r = GraphReasoner::new(&mut store, cfg, kg.n_relations(), 32, 11, true);
        (store, r)
    }

    #[test]
    fn init_nodes_shapes_and_identity_hook() {
        let kg = tiny_kg();
        let text = MockTextEncoder::new(16, 3);
        let mut cfg = ReasonerConfig::default();
        cfg.hidden_dim = 16;
        let mut store = ParamStore::new();
        let r = GraphReasoner::new(&mut store, &cfg, kg.n_relations(), 16, 11, false);
        let states = r.init_nodes(&kg, &text).unwrap();
        assert_eq!(states.shape(), (kg.n_entities(), 16));
        // identity hook: rows equal raw embed_text output
        let raw = text.embed(&kg.entity_names()).unwrap();
        assert_eq!(*states.data(), raw);
    }

    #[test]
    fn zero_edge_graph_is_self_loop_only() {
        let kg = encode_graph(&[Triple::new("a", "r", "b")]).unwrap();
        // strip the single edge to simulate an edgeless graph
        let mut kg = kg;
        kg.a_type.clear();
        kg.a_conn = [vec![], vec![]];
        let mut cfg = ReasonerConfig::default();
        cfg.layers = 1;
        cfg.hidden_dim = 4;
        let (_store, r) = reasoner_with(&cfg, &kg);
        let h0 = Tensor::constant(Array2::from_shape_fn((2, 4), |(i, j)| {
            (i * 4 + j) as f64 * 0.1 - 0.3
        }));
        let out = r.forward(&h0, &kg);
        let expect = h0.matmul(&r.self_weights[0]).relu();
        assert_eq!(*out.data(), *expect.data());
    }

    #[test]
    fn single_edge_hand_case() {
        // edge a -> b, self weight zero, relation weight identity, one layer:
        // h_b' = relu(h_a), h_a' = relu(0) = 0
        let kg = encode_graph(&[Triple::new("a", "r", "b")]).unwrap();
        let mut cfg = ReasonerConfig::default();
        cfg.layers = 1;
        cfg.hidden_dim = 3;
        let (_store, r) = reasoner_with(&cfg, &kg);
        r.self_weights[0].set_data(Array2::zeros((3, 3)));
        r.rel_weights[0][0].set_data(Array2::eye(3));
        let idx_a = kg.entity_names().iter().position(|n| n == "a").unwrap();
        let idx_b = kg.entity_names().iter().position(|n| n == "b").unwrap();
        let mut h0 = Array2::zeros((2, 3));
        h0[(idx_a, 0)] = 0.7;
        h0[(idx_a, 1)] = -0.2;
        h0[(idx_a, 2)] = 1.1;
        h0[(idx_b, 0)] = 5.0;
        let out = r.forward(&Tensor::constant(h0.clone()), &kg);
        let o = out.data();
        assert_eq!(o[(idx_b, 0)], 0.7);
        assert_eq!(o[(idx_b, 1)], 0.0, "negative input clipped by relu");
        assert_eq!(o[(idx_b, 2)], 1.1);
        for c in 0..3 {
            assert_eq!(o[(idx_a, 0 + c)], 0.0, "source node sees only the zero self-loop");
        }
    }

    #[test]
    fn matches_triple_loop_oracle_on_random_graphs() {
        let mut rng = seeded_rng(77, "rgcn-oracle");
        for case in 0..100 {
            let n_nodes = rng.gen_range(2..=8);
            let n_rel = rng.gen_range(1..=3);
            let n_edges = rng.gen_range(1..=12);
            let mut triples = Vec::new();
            for _ in 0..n_edges {
                let h = rng.gen_range(0..n_nodes);
                let t = rng.gen_range(0..n_nodes);
                let r = rng.gen_range(0..n_rel);
                triples.push(Triple::new(
                    format!("n{h}"),
                    format!("r{r}"),
                    format!("n{t}"),
                ));
            }
            let kg = encode_graph(&triples).unwrap();
            let d = 5;
            let mut cfg = ReasonerConfig::default();
            cfg.hidden_dim = d;
            cfg.layers = 2;
            let mut store = ParamStore::new();
            let reasoner =
                GraphReasoner::new(&mut store, &cfg, kg.n_relations(), 32, case as u64, true);
            let h0 = Array2::from_shape_fn((kg.n_entities(), d), |_| rng.gen_range(-1.0..1.0));

            let got = reasoner.forward(&Tensor::constant(h0.clone()), &kg);

            let mut expect = h0;
            for l in 0..2 {
                let rel_w: Vec<Array2<f64>> = (0..kg.n_relations())
                    .map(|r| reasoner.rel_weights[l][r].to_array())
                    .collect();
                expect = rgcn_layer_oracle(
                    &expect,
                    &kg,
                    &reasoner.self_weights[l].to_array(),
                    &rel_w,
                );
            }
            let max_diff = got
                .data()
                .iter()
                .zip(expect.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(max_diff < 1e-10, "case {case}: max diff {max_diff}");
        }
    }

    #[test]
    fn readout_mean_and_permutation_invariance() {
        let kg = tiny_kg();
        let mut cfg = ReasonerConfig::default();
        cfg.hidden_dim = 4;
        cfg.output_dim = 4;
        let (_store, r) = reasoner_with(&cfg, &kg);
        let h = Array2::from_shape_fn((kg.n_entities(), 4), |(i, j)| (i + j) as f64 * 0.25);
        // single-node readout is the projection of that node's state
        let single = Tensor::constant(h.slice(ndarray::s![0..1, ..]).to_owned());
        let f = r.readout(&single);
        let expect = r.out_proj.forward(&single);
        assert_eq!(*f.data(), *expect.data());
        // mean mode: hand-computed arithmetic mean
        let states = Tensor::constant(h.clone());
        let f_all = r.readout(&states);
        let mean = h.mean_axis(ndarray::Axis(0)).unwrap().insert_axis(ndarray::Axis(0));
        let expect_all = r.out_proj.forward(&Tensor::constant(mean));
        for (a, b) in f_all.data().iter().zip(expect_all.data().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        // permuting rows leaves mean readout bit-identical
        let perm = [2usize, 0, 1, 3];
        let hp = Array2::from_shape_fn(h.dim(), |(i, j)| h[(perm[i], j)]);
        let f_perm = r.readout(&Tensor::constant(hp));
        assert_eq!(*f_all.data(), *f_perm.data());
    }

    #[test]
    fn edge_direction_matters() {
        // a -> b vs b -> a with asymmetric relation weight
        let forward_kg = encode_graph(&[Triple::new("a", "r", "b")]).unwrap();
        let backward_kg = encode_graph(&[Triple::new("b", "r", "a")]).unwrap();
        let mut cfg = ReasonerConfig::default();
        cfg.layers = 1;
        cfg.hidden_dim = 2;
        let (_s1, r1) = reasoner_with(&cfg, &forward_kg);
        let h0 = Array2::from_shape_fn((2, 2), |(i, j)| ((i + 1) * (j + 2)) as f64 * 0.3);
        let out_f = r1.forward(&Tensor::constant(h0.clone()), &forward_kg);
        let out_b = r1.forward(&Tensor::constant(h0.clone()), &backward_kg);
        assert_ne!(*out_f.data(), *out_b.data());
    }

    #[test]
    fn gcn_mode_shares_weights() {
        let kg = tiny_kg();
        let mut cfg = ReasonerConfig::default();
        cfg.encoder = GraphEncoderKind::Gcn;
        let mut store = ParamStore::new();
        let r = GraphReasoner::new(&mut store, &cfg, kg.n_relations(), 32, 1, true);
        assert_eq!(r.rel_weights[0].len(), 1);
        let mut store2 = ParamStore::new();
        cfg.encoder = GraphEncoderKind::Rgcn;
        let r2 = GraphReasoner::new(&mut store2, &cfg, kg.n_relations(), 32, 1, true);
        assert_eq!(r2.rel_weights[0].len(), kg.n_relations());
        assert!(store2.num_scalars() > store.num_scalars());
    }
}
