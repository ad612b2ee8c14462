use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::AlignParams;
use crate::basis::BlockLayout;
use crate::compensation::{Disentangler, ParamGenerator, DEFAULT_SHEAR_PAIRS};
use crate::diff::{Tensor, Var};
use crate::encoders::{fuse_modalities, EncoderConfig, GeomEncoder, TokenEncoder};
use crate::hamiltonian::{predict, HamHead, HeadConfig};
use crate::nn::{ParamStore, Session, Trainable};
use crate::smiles::{Element, Parsed, Token};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
    pub shear_pairs: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            head: HeadConfig::default(),
            shear_pairs: DEFAULT_SHEAR_PAIRS,
        }
    }
}

/// Every trainable piece plus the parameter store they index into.
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub tok: TokenEncoder,
    pub geo: GeomEncoder,
    pub dis: Disentangler,
    pub gen: ParamGenerator,
    pub align: AlignParams,
    pub head: HamHead,
}

impl Model {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = cfg.encoder.d;
        let tok = TokenEncoder::new(&mut store, &cfg.encoder, &mut rng);
        let geo = GeomEncoder::new(&mut store, &cfg.encoder, &mut rng);
        let dis = Disentangler::new(&mut store, d, &mut rng);
        let gen = ParamGenerator::new(&mut store, d, cfg.shear_pairs, &mut rng);
        let align = AlignParams::new(&mut store, d, &mut rng);
        let head = HamHead::new(&mut store, d, &cfg.head, &mut rng);
        Self {
            cfg: cfg.clone(),
            store,
            tok,
            geo,
            dis,
            gen,
            align,
            head,
        }
    }

    /// Head input for one molecule: `t`, or `t + v` when coordinates are given.
    pub fn embed(
        &self,
        s: &mut Session,
        p: &Parsed,
        tokens: &[Token],
        coords: Option<&[[f64; 3]]>,
    ) -> Result<Var, crate::Error> {
        let t = self.tok.forward(s, tokens, &p.graph, &p.molecule)?;
        match coords {
            None => Ok(t),
            Some(x) => {
                let v = self.geo.forward(s, &p.molecule.elements, x)?;
                fuse_modalities(s, t, v)
            }
        }
    }

    /// Predicted Hamiltonian for a parsed molecule, without gradients.
    pub fn predict_h(&self, p: &Parsed, coords: Option<&[[f64; 3]]>) -> Result<Tensor, crate::Error> {
        let mut s = Session::new(&self.store, Trainable::Nothing);
        let emb = self.embed(&mut s, p, &p.tokens, coords)?;
        let layout = BlockLayout::new(&p.molecule.elements);
        let h = predict(&mut s, &self.head, emb, &layout)?;
        Ok(s.value(h).clone())
    }

    pub fn layout(elements: &[Element]) -> BlockLayout {
        BlockLayout::new(elements)
    }
}
