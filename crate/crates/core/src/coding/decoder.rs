//! Flooding sum-product decoding.

use super::alist::ParityCheckMatrix;
use super::LLR_CLAMP;

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeOutput {
    pub bits: Vec<u8>,
    /// Posterior LLRs `ln P(0)/P(1)`, clamped.
    pub posterior: Vec<f64>,
    pub converged: bool,
    /// Message-passing iterations run (0 if the channel decisions already
    /// satisfied every check).
    pub iterations: usize,
}

/// Edge-indexed decoder graph, edges grouped by check.
#[derive(Clone, Debug)]
pub struct DecoderGraph {
    pub n: usize,
    check_start: Vec<usize>,
    edge_var: Vec<usize>,
    var_edges: Vec<Vec<usize>>,
}

impl DecoderGraph {
    pub fn new(h: &ParityCheckMatrix) -> Self {
        let mut check_start = Vec::with_capacity(h.m + 1);
        let mut edge_var = Vec::with_capacity(h.edges());
        let mut var_edges = vec![Vec::new(); h.n];
        check_start.push(0);
        for r in &h.rows {
            for &j in r {
                var_edges[j].push(edge_var.len());
                edge_var.push(j);
            }
            check_start.push(edge_var.len());
        }
        DecoderGraph { n: h.n, check_start, edge_var, var_edges }
    }

    fn checks(&self) -> usize {
        self.check_start.len() - 1
    }

    fn syndrome_ok(&self, bits: &[u8]) -> bool {
        (0..self.checks()).all(|c| {
            self.edge_var[self.check_start[c]..self.check_start[c + 1]]
                .iter()
                .fold(0u8, |a, &j| a ^ bits[j])
                == 0
        })
    }
}

#[inline]
fn clamp(x: f64) -> f64 {
    x.clamp(-LLR_CLAMP, LLR_CLAMP)
}

fn hard(l: &[f64]) -> Vec<u8> {
    l.iter().map(|&x| u8::from(x < 0.0)).collect()
}

pub fn bp_decode(llrs: &[f64], h: &ParityCheckMatrix, max_iters: usize) -> DecodeOutput {
    bp_decode_graph(llrs, &DecoderGraph::new(h), max_iters)
}

/// Sum-product decoding with the tanh rule; stops on a zero syndrome or
/// after `max_iters` iterations. All messages are clamped to ±50.
pub fn bp_decode_graph(llrs: &[f64], g: &DecoderGraph, max_iters: usize) -> DecodeOutput {
    assert_eq!(llrs.len(), g.n, "LLR count must equal code length");
    let chan: Vec<f64> = llrs.iter().map(|&x| clamp(x)).collect();
    let bits = hard(&chan);
    if g.syndrome_ok(&bits) {
        return DecodeOutput { bits, posterior: chan, converged: true, iterations: 0 };
    }
    let e = g.edge_var.len();
    let mut v2c: Vec<f64> = g.edge_var.iter().map(|&j| chan[j]).collect();
    let mut c2v = vec![0.0; e];
    let mut post = chan.clone();
    let mut t = Vec::new();
    let mut suffix = Vec::new();
    for it in 1..=max_iters {
        for c in 0..g.checks() {
            let (a, b) = (g.check_start[c], g.check_start[c + 1]);
            t.clear();
            t.extend(v2c[a..b].iter().map(|x| (0.5 * x).tanh()));
            // Exclusive products via suffix and running prefix.
            suffix.clear();
            suffix.resize(t.len() + 1, 1.0);
            for i in (0..t.len()).rev() {
                suffix[i] = suffix[i + 1] * t[i];
            }
            let mut prefix = 1.0;
            for (i, ti) in t.iter().enumerate() {
                let p = (prefix * suffix[i + 1]).clamp(-1.0 + 1e-15, 1.0 - 1e-15);
                c2v[a + i] = clamp(2.0 * p.atanh());
                prefix *= ti;
            }
        }
        for (j, edges) in g.var_edges.iter().enumerate() {
            let total = chan[j] + edges.iter().map(|&x| c2v[x]).sum::<f64>();
            post[j] = clamp(total);
            for &x in edges {
                v2c[x] = clamp(total - c2v[x]);
            }
        }
        let bits = hard(&post);
        if g.syndrome_ok(&bits) {
            return DecodeOutput { bits, posterior: post, converged: true, iterations: it };
        }
    }
    DecodeOutput { bits: hard(&post), posterior: post, converged: false, iterations: max_iters }
}
