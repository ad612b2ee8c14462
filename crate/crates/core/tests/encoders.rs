mod common;

use common::{linear_plain, max_diff, rigid_motion};
use molham::diff::Tensor;
use molham::encoders::{
    pair_features, positional_encoding, token_id, EncoderConfig, EncoderError, GeomEncoder, TokenEncoder, VOCAB_SIZE,
};
use molham::nn::{grad_check_params, Linear, ParamStore, Session, Trainable};
use molham::oracle::{embed_3d, EmbedConfig};
use molham::smiles::{mask_tokens, tokenize, Element, Parsed, TokenKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn encoders(cfg: &EncoderConfig, seed: u64) -> (ParamStore, TokenEncoder, GeomEncoder) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let tok = TokenEncoder::new(&mut store, cfg, &mut rng);
    let geo = GeomEncoder::new(&mut store, cfg, &mut rng);
    (store, tok, geo)
}

fn tokens_of(store: &ParamStore, tok: &TokenEncoder, p: &Parsed, tokens: &[molham::smiles::Token]) -> Tensor {
    let mut s = Session::new(store, Trainable::Nothing);
    let t = tok.forward(&mut s, tokens, &p.graph, &p.molecule).unwrap();
    s.value(t).clone()
}

fn geometry_of(store: &ParamStore, geo: &GeomEncoder, elements: &[Element], x: &[[f64; 3]]) -> Tensor {
    let mut s = Session::new(store, Trainable::Nothing);
    let v = geo.forward(&mut s, elements, x).unwrap();
    s.value(v).clone()
}

#[test]
fn vocabulary_covers_every_token_kind() {
    let mut toks = tokenize("[nH]1ccc(-C#N)c1/C=C\\[O-]").unwrap();
    toks.push(molham::smiles::Token {
        kind: TokenKind::Mask,
        text: molham::smiles::MASK_TEXT.into(),
        position: 0,
    });
    let mut seen = std::collections::HashSet::new();
    for t in &toks {
        let (id, _) = token_id(t).unwrap();
        assert!(id < VOCAB_SIZE);
        seen.insert(format!("{:?}", t.kind));
    }
    assert_eq!(seen.len(), 7);
    let bad = molham::smiles::Token {
        kind: TokenKind::Bond,
        text: "~".into(),
        position: 3,
    };
    assert!(matches!(token_id(&bad), Err(EncoderError::UnknownTokenKind { position: 3, .. })));
}

#[test]
fn token_encoder_shapes_and_determinism() {
    let cfg = EncoderConfig::default();
    let (store, tok, _) = encoders(&cfg, 1);
    let p = Parsed::new("C").unwrap();
    let t = tokens_of(&store, &tok, &p, &p.tokens);
    // methane: one carbon row plus four hydrogens
    assert_eq!(t.shape(), (5, cfg.d));
    for smi in ["CC(=O)Nc1ccc(O)cc1", "C1CC1", "[NH4+]"] {
        let p = Parsed::new(smi).unwrap();
        let a = tokens_of(&store, &tok, &p, &p.tokens);
        let b = tokens_of(&store, &tok, &p, &p.tokens);
        assert_eq!(a, b);
        assert_eq!(a.rows(), p.molecule.len());
        let all_masked = mask_tokens(&p.tokens, &p.fragments, &vec![false; p.fragments.len()]).unwrap();
        assert_eq!(tokens_of(&store, &tok, &p, &all_masked).shape(), a.shape());
    }
}

#[test]
fn zero_layers_isolate_unmasked_rows() {
    let p = Parsed::new("CCOCC").unwrap();
    assert_eq!(p.fragments.len(), 2);
    let masked = mask_tokens(&p.tokens, &p.fragments, &[true, false]).unwrap();
    let kept: Vec<usize> = (0..p.molecule.len()).filter(|&i| p.molecule.fragment_of[i] == 0).collect();

    let flat = EncoderConfig {
        layers: 0,
        ..EncoderConfig::default()
    };
    let (store, tok, _) = encoders(&flat, 2);
    let a = tokens_of(&store, &tok, &p, &p.tokens);
    let b = tokens_of(&store, &tok, &p, &masked);
    for &i in &kept {
        assert_eq!(a.row_slice(i), b.row_slice(i), "row {i}");
    }

    let (store, tok, _) = encoders(&EncoderConfig::default(), 2);
    let a = tokens_of(&store, &tok, &p, &p.tokens);
    let b = tokens_of(&store, &tok, &p, &masked);
    assert!(kept.iter().any(|&i| a.row_slice(i) != b.row_slice(i)));
}

#[test]
fn positional_table_values() {
    let pe = positional_encoding(3, 4);
    assert_eq!(pe.get(0, 0), 0.0);
    assert_eq!(pe.get(0, 1), 1.0);
    assert!((pe.get(2, 0) - 2f64.sin()).abs() < 1e-15);
    assert!((pe.get(2, 3) - (2.0 / 100.0f64).cos()).abs() < 1e-15);
}

#[test]
fn geometry_rigid_motion_invariance() {
    let cfg = EncoderConfig::default();
    let (store, _, geo) = encoders(&cfg, 3);
    let p = Parsed::new("CC(=O)Nc1ccc(O)cc1").unwrap();
    let x = embed_3d(&p.molecule, 9, &EmbedConfig::default()).unwrap();
    let base = geometry_of(&store, &geo, &p.molecule.elements, &x);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let y = rigid_motion(&x, &mut rng);
        let moved = geometry_of(&store, &geo, &p.molecule.elements, &y);
        assert!(max_diff(&base, &moved) < 1e-10);
    }
}

#[test]
fn geometry_relabeling_permutes_rows() {
    let (store, _, geo) = encoders(&EncoderConfig::default(), 5);
    let p = Parsed::new("OCC(N)C(=O)O").unwrap();
    let x = embed_3d(&p.molecule, 2, &EmbedConfig::default()).unwrap();
    let e = &p.molecule.elements;
    let base = geometry_of(&store, &geo, e, &x);
    let n = e.len();
    assert_ne!(n % 5, 0);
    let perm: Vec<usize> = (0..n).map(|i| (i * 5 + 3) % n).collect();
    let e2: Vec<Element> = perm.iter().map(|&i| e[i]).collect();
    let x2: Vec<[f64; 3]> = perm.iter().map(|&i| x[i]).collect();
    let moved = geometry_of(&store, &geo, &e2, &x2);
    for (k, &i) in perm.iter().enumerate() {
        for c in 0..base.cols() {
            assert!((moved.get(k, c) - base.get(i, c)).abs() < 1e-12);
        }
    }
}

#[test]
fn atoms_beyond_cutoff_see_nothing() {
    let (store, _, geo) = encoders(&EncoderConfig::default(), 6);
    let pair = geometry_of(&store, &geo, &[Element::C, Element::O], &[[0.0; 3], [6.0, 0.0, 0.0]]);
    let c = geometry_of(&store, &geo, &[Element::C], &[[1.0, 2.0, 3.0]]);
    let o = geometry_of(&store, &geo, &[Element::O], &[[0.0; 3]]);
    assert_eq!(pair.row_slice(0), c.row_slice(0));
    assert_eq!(pair.row_slice(1), o.row_slice(0));
}

#[test]
fn non_finite_coordinates_are_rejected() {
    let (store, _, geo) = encoders(&EncoderConfig::default(), 7);
    let mut s = Session::new(&store, Trainable::Nothing);
    let err = geo
        .forward(&mut s, &[Element::C, Element::H], &[[0.0; 3], [f64::NAN, 0.0, 0.0]])
        .unwrap_err();
    assert!(matches!(err, molham::Error::Encoder(EncoderError::NonFiniteCoordinate(1))));
    assert!(pair_features(&[[f64::INFINITY, 0.0, 0.0]], &EncoderConfig::default()).is_err());
}

fn lin(store: &ParamStore, name: &str) -> Linear {
    Linear {
        w: store.id_of(&format!("{name}.w")).unwrap(),
        b: store.id_of(&format!("{name}.b")).unwrap(),
    }
}

#[test]
fn water_matches_straight_line_message_passing() {
    let cfg = EncoderConfig::default();
    let (store, _, geo) = encoders(&cfg, 8);
    let p = Parsed::new("O").unwrap();
    let x = embed_3d(&p.molecule, 1, &EmbedConfig::default()).unwrap();
    let e = &p.molecule.elements;
    let got = geometry_of(&store, &geo, e, &x);

    let n = e.len();
    let emb = store.get(store.id_of("geo.embed").unwrap());
    let mut h = Tensor::from_fn(n, cfg.d, |i, c| emb.get(e[i].index(), c));
    let spacing = cfg.cutoff / (cfg.n_rbf - 1) as f64;
    for m in 0..cfg.rounds {
        let f1 = lin(&store, &format!("geo.round{m}.filter1"));
        let f2 = lin(&store, &format!("geo.round{m}.filter2"));
        let out = lin(&store, &format!("geo.round{m}.out"));
        let w_in = store.get(store.id_of(&format!("geo.round{m}.in")).unwrap());
        let xw = h.matmul(w_in).unwrap();
        let mut agg = Tensor::zeros(n, cfg.d);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let r = molham::physics::dist2(&x[i], &x[j]).sqrt();
                let rbf = Tensor::from_fn(1, cfg.n_rbf, |_, k| {
                    let mu = k as f64 * spacing;
                    (-(r - mu).powi(2) / (2.0 * spacing * spacing)).exp()
                });
                let env = 0.5 * ((std::f64::consts::PI * r / cfg.cutoff).cos() + 1.0);
                let filt = linear_plain(&store, &f2, &linear_plain(&store, &f1, &rbf).map(f64::tanh));
                for c in 0..cfg.d {
                    agg.set(i, c, agg.get(i, c) + xw.get(j, c) * filt.get(0, c) * env);
                }
            }
        }
        let upd = linear_plain(&store, &out, &agg).map(f64::tanh);
        h = h.add(&upd);
    }
    assert!(max_diff(&got, &h) < 1e-12);
}

#[test]
fn encoder_gradients_match_finite_differences() {
    let cfg = EncoderConfig {
        d: 8,
        ..EncoderConfig::default()
    };
    let (store, tok, geo) = encoders(&cfg, 9);
    let p = Parsed::new("CC(=O)N").unwrap();
    let x = embed_3d(&p.molecule, 3, &EmbedConfig::default()).unwrap();
    let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
    let worst = grad_check_params(&store, &ids, 3, 1e-5, |s| {
        let t = tok.forward(s, &p.tokens, &p.graph, &p.molecule)?;
        let v = geo.forward(s, &p.molecule.elements, &x)?;
        let tv = s.mul(t, v)?;
        let sq = s.square(tv);
        Ok(s.mean(sq))
    })
    .unwrap();
    assert!(worst < 1e-4, "{worst}");
}
