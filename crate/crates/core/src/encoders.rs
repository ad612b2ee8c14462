//! Token-sequence encoder and distance-based geometry encoder. Both return
//! one `d`-wide row per atom of the hydrogen-expanded molecule.

use std::rc::Rc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::{Tensor, Var};
use crate::nn::{Linear, ParamId, ParamStore, Session};
use crate::smiles::{parse_bracket, Element, Molecule, MolGraph, Token, TokenKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncoderError {
    #[error("token {text:?} at {position} has no vocabulary entry")]
    UnknownTokenKind { text: String, position: usize },
    #[error("non-finite coordinate on atom {0}")]
    NonFiniteCoordinate(usize),
    #[error("{what}: expected {expected} rows, got {got}")]
    RowMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d: usize,
    /// Self-attention blocks in the token encoder.
    pub layers: usize,
    /// Message-passing rounds in the geometry encoder.
    pub rounds: usize,
    pub cutoff: f64,
    pub n_rbf: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d: 32,
            layers: 2,
            rounds: 3,
            cutoff: 5.0,
            n_rbf: 16,
        }
    }
}

const BOND_TEXTS: [&str; 6] = ["-", "=", "#", ":", "/", "\\"];
const AROMATIC: [Element; 6] = [Element::B, Element::C, Element::N, Element::O, Element::P, Element::S];

/// Vocabulary: 11 elements, 6 aromatic forms, 6 bond symbols, ring closure,
/// branch open, branch close, mask.
pub const VOCAB_SIZE: usize = 11 + 6 + 6 + 4;

/// Vocabulary id plus the (charge, explicit H) side features of a token.
pub fn token_id(t: &Token) -> Result<(usize, [f64; 2]), EncoderError> {
    let unknown = || EncoderError::UnknownTokenKind {
        text: t.text.clone(),
        position: t.position,
    };
    let atom_id = |e: Element, aromatic: bool| -> Option<usize> {
        if aromatic {
            AROMATIC.iter().position(|&a| a == e).map(|k| 11 + k)
        } else {
            Some(e.index())
        }
    };
    Ok(match t.kind {
        TokenKind::Atom => {
            let aromatic = t.text.chars().all(|c| c.is_ascii_lowercase());
            let sym = if aromatic { t.text.to_ascii_uppercase() } else { t.text.clone() };
            let e = Element::from_symbol(&sym).ok_or_else(unknown)?;
            (atom_id(e, aromatic).ok_or_else(unknown)?, [0.0, 0.0])
        }
        TokenKind::BracketAtom => {
            let b = parse_bracket(&t.text, t.position).map_err(|_| unknown())?;
            let id = atom_id(b.element, b.aromatic).ok_or_else(unknown)?;
            (id, [b.charge as f64, b.h_count as f64])
        }
        TokenKind::Bond => (17 + BOND_TEXTS.iter().position(|&b| b == t.text).ok_or_else(unknown)?, [0.0, 0.0]),
        TokenKind::RingClosure => (23, [0.0, 0.0]),
        TokenKind::BranchOpen => (24, [0.0, 0.0]),
        TokenKind::BranchClose => (25, [0.0, 0.0]),
        TokenKind::Mask => (26, [0.0, 0.0]),
    })
}

/// Standard sinusoidal position table, `n × d`.
pub fn positional_encoding(n: usize, d: usize) -> Tensor {
    Tensor::from_fn(n, d, |pos, i| {
        let k = (i / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * k / d as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

#[derive(Clone, Debug)]
struct AttentionBlock {
    q: ParamId,
    k: ParamId,
    v: ParamId,
    o: ParamId,
    ff1: Linear,
    ff2: Linear,
}

#[derive(Clone, Debug)]
pub struct TokenEncoder {
    pub d: usize,
    embed: ParamId,
    side: ParamId,
    hydrogen: ParamId,
    blocks: Vec<AttentionBlock>,
}

impl TokenEncoder {
    pub fn new(store: &mut ParamStore, cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.d;
        let embed = store.register_glorot("tok.embed", VOCAB_SIZE, d, 1.0, rng);
        let side = store.register_glorot("tok.side", 2, d, 0.5, rng);
        let hydrogen = store.register_glorot("tok.hydrogen", 1, d, 1.0, rng);
        let blocks = (0..cfg.layers)
            .map(|l| AttentionBlock {
                q: store.register_glorot(format!("tok.block{l}.q"), d, d, 1.0, rng),
                k: store.register_glorot(format!("tok.block{l}.k"), d, d, 1.0, rng),
                v: store.register_glorot(format!("tok.block{l}.v"), d, d, 1.0, rng),
                o: store.register_glorot(format!("tok.block{l}.o"), d, d, 0.5, rng),
                ff1: Linear::new(store, &format!("tok.block{l}.ff1"), d, d, rng),
                ff2: Linear::with_gain(store, &format!("tok.block{l}.ff2"), d, d, 0.5, rng),
            })
            .collect();
        Self {
            d,
            embed,
            side,
            hydrogen,
            blocks,
        }
    }

    /// Per-atom token embeddings `t`. `tokens` may be masked; `graph` is the
    /// parse of the unmasked string and supplies the token↔atom map.
    pub fn forward(
        &self,
        s: &mut Session,
        tokens: &[Token],
        graph: &MolGraph,
        mol: &Molecule,
    ) -> Result<Var, crate::Error> {
        if tokens.len() != graph.n_tokens {
            return Err(EncoderError::RowMismatch {
                what: "token sequence",
                expected: graph.n_tokens,
                got: tokens.len(),
            }
            .into());
        }
        let n_tok = tokens.len();
        let mut ids = Vec::with_capacity(n_tok);
        let mut side = Tensor::zeros(n_tok, 2);
        for (i, t) in tokens.iter().enumerate() {
            let (id, f) = token_id(t)?;
            ids.push(id);
            side.set(i, 0, f[0]);
            side.set(i, 1, f[1]);
        }
        let e = s.p(self.embed);
        let rows = s.gather_rows(e, Rc::new(ids))?;
        let side = s.constant(side);
        let w_side = s.p(self.side);
        let side = s.matmul(side, w_side)?;
        let pos = s.constant(positional_encoding(n_tok, self.d));
        let h = s.add(rows, side)?;
        let mut h = s.add(h, pos)?;
        let inv_sqrt_d = 1.0 / (self.d as f64).sqrt();
        for b in &self.blocks {
            let (wq, wk, wv, wo) = (s.p(b.q), s.p(b.k), s.p(b.v), s.p(b.o));
            let q = s.matmul(h, wq)?;
            let k = s.matmul(h, wk)?;
            let v = s.matmul(h, wv)?;
            let kt = s.transpose(k);
            let logits = s.matmul(q, kt)?;
            let logits = s.scale(logits, inv_sqrt_d);
            let att = s.row_softmax(logits);
            let ctx = s.matmul(att, v)?;
            let ctx = s.matmul(ctx, wo)?;
            h = s.add(h, ctx)?;
            let f = b.ff1.forward(s, h)?;
            let f = s.tanh(f);
            let f = b.ff2.forward(s, f)?;
            h = s.add(h, f)?;
        }
        // mean over each graph atom's tokens
        let n_graph = graph.atoms.len();
        let mut pool = Tensor::zeros(n_graph, n_tok);
        for (a, toks) in graph.atom_tokens.iter().enumerate() {
            for &t in toks {
                pool.set(a, t, 1.0 / toks.len() as f64);
            }
        }
        let pool = s.constant(pool);
        let per_atom = s.matmul(pool, h)?;
        if mol.len() == n_graph {
            return Ok(per_atom);
        }
        let src: Vec<usize> = (0..mol.len()).map(|i| mol.source_atom(i)).collect();
        let expanded = s.gather_rows(per_atom, Rc::new(src))?;
        let is_h = Tensor::from_fn(mol.len(), 1, |i, _| if mol.parent[i].is_some() { 1.0 } else { 0.0 });
        let is_h = s.constant(is_h);
        let wh = s.p(self.hydrogen);
        let shift = s.matmul(is_h, wh)?;
        Ok(s.add(expanded, shift)?)
    }
}

/// Pair geometry shared by every message-passing round.
#[derive(Clone, Debug)]
pub struct PairFeatures {
    pub src: Rc<Vec<usize>>,
    pub dst: Rc<Vec<usize>>,
    /// `pairs × n_rbf` Gaussian expansion of the distance.
    pub rbf: Tensor,
    /// `pairs × 1` cosine cutoff envelope.
    pub envelope: Tensor,
}

/// Directed pairs within the cutoff, ordered by (dst, src).
pub fn pair_features(coords: &[[f64; 3]], cfg: &EncoderConfig) -> Result<PairFeatures, EncoderError> {
    if let Some(i) = coords.iter().position(|c| c.iter().any(|x| !x.is_finite())) {
        return Err(EncoderError::NonFiniteCoordinate(i));
    }
    let n = coords.len();
    let spacing = cfg.cutoff / (cfg.n_rbf - 1) as f64;
    let gamma = 0.5 / (spacing * spacing);
    let (mut src, mut dst, mut rbf, mut env) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let r = crate::physics::dist2(&coords[i], &coords[j]).sqrt();
            if r >= cfg.cutoff {
                continue;
            }
            dst.push(i);
            src.push(j);
            for k in 0..cfg.n_rbf {
                let mu = k as f64 * spacing;
                rbf.push((-gamma * (r - mu).powi(2)).exp());
            }
            env.push(0.5 * ((std::f64::consts::PI * r / cfg.cutoff).cos() + 1.0));
        }
    }
    let p = src.len();
    Ok(PairFeatures {
        src: Rc::new(src),
        dst: Rc::new(dst),
        rbf: Tensor::from_vec(p, cfg.n_rbf, rbf).expect("rbf shape"),
        envelope: Tensor::from_vec(p, 1, env).expect("envelope shape"),
    })
}

#[derive(Clone, Debug)]
struct Round {
    filter1: Linear,
    filter2: Linear,
    inp: ParamId,
    out: Linear,
}

#[derive(Clone, Debug)]
pub struct GeomEncoder {
    pub d: usize,
    embed: ParamId,
    rounds: Vec<Round>,
    cfg: EncoderConfig,
}

impl GeomEncoder {
    pub fn new(store: &mut ParamStore, cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.d;
        let embed = store.register_glorot("geo.embed", Element::ALL.len(), d, 1.0, rng);
        let rounds = (0..cfg.rounds)
            .map(|m| Round {
                filter1: Linear::new(store, &format!("geo.round{m}.filter1"), cfg.n_rbf, d, rng),
                filter2: Linear::new(store, &format!("geo.round{m}.filter2"), d, d, rng),
                inp: store.register_glorot(format!("geo.round{m}.in"), d, d, 1.0, rng),
                out: Linear::with_gain(store, &format!("geo.round{m}.out"), d, d, 0.5, rng),
            })
            .collect();
        Self {
            d,
            embed,
            rounds,
            cfg: cfg.clone(),
        }
    }

    /// Per-atom geometric embeddings `v` from elements and coordinates (Å).
    pub fn forward(&self, s: &mut Session, elements: &[Element], coords: &[[f64; 3]]) -> Result<Var, crate::Error> {
        if elements.len() != coords.len() {
            return Err(EncoderError::RowMismatch {
                what: "coordinates",
                expected: elements.len(),
                got: coords.len(),
            }
            .into());
        }
        let pairs = pair_features(coords, &self.cfg)?;
        let n = elements.len();
        let e = s.p(self.embed);
        let ids: Vec<usize> = elements.iter().map(|e| e.index()).collect();
        let mut h = s.gather_rows(e, Rc::new(ids))?;
        let rbf = s.constant(pairs.rbf.clone());
        let env = s.constant(pairs.envelope.clone());
        for r in &self.rounds {
            let f = r.filter1.forward(s, rbf)?;
            let f = s.tanh(f);
            let f = r.filter2.forward(s, f)?;
            let f = s.mul(f, env)?;
            let w_in = s.p(r.inp);
            let x = s.matmul(h, w_in)?;
            let xj = s.gather_rows(x, pairs.src.clone())?;
            let msg = s.mul(xj, f)?;
            let agg = s.scatter_add_rows(msg, pairs.dst.clone(), n)?;
            let upd = r.out.forward(s, agg)?;
            let upd = s.tanh(upd);
            h = s.add(h, upd)?;
        }
        Ok(h)
    }
}

/// Elementwise sum of token and geometric embeddings.
pub fn fuse_modalities(s: &mut Session, t: Var, v: Var) -> Result<Var, crate::Error> {
    if s.shape(t) != s.shape(v) {
        return Err(crate::diff::DiffError::ShapeMismatch {
            op: "fuse_modalities",
            left: s.shape(t),
            right: s.shape(v),
        }
        .into());
    }
    Ok(s.add(t, v)?)
}
