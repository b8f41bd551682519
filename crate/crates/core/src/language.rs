//! Vocabulary, word embeddings, the 2-layer bidirectional LSTM encoder, and
//! the cue-specific attention heads.
//!
//! Each cue (context single/pairwise, referent single/pairwise, generic)
//! owns an fc scorer that maps a token's 4H-dim BLSTM state to a scalar;
//! softmax over non-pad tokens gives the word attention, and the pooled
//! language feature is the attention-weighted sum of the word embeddings.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::Rng;

use crate::compute::graph::{Graph, Var};
use crate::compute::layers::{Linear, LstmParams};
use crate::compute::params::{xavier_matrix, ParamId, ParamKind, ParamStore};
use crate::compute::tensor::Tensor;
use crate::data::MAX_LEN;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub const PAD: u32 = 0;
    pub const UNK: u32 = 1;
    pub const START: u32 = 2;
    pub const STOP: u32 = 3;
    pub const RESERVED: [&'static str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

    /// Builds a vocabulary from token lists, keeping words that occur at
    /// least `min_count` times, in sorted order for determinism.
    pub fn from_corpus<'a, I>(token_lists: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for list in token_lists {
            for w in list {
                *counts.entry(w.as_str()).or_default() += 1;
            }
        }
        let kept: BTreeSet<&str> = counts
            .iter()
            .filter(|(w, &c)| c >= min_count && !Self::RESERVED.contains(w))
            .map(|(&w, _)| w)
            .collect();
        let mut words: Vec<String> = Self::RESERVED.iter().map(|s| s.to_string()).collect();
        words.extend(kept.into_iter().map(String::from));
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Vocabulary { words, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Out-of-vocabulary words map to the reserved unk id.
    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(Self::UNK)
    }

    pub fn word(&self, id: u32) -> &str {
        &self.words[id as usize]
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    /// Encodes to ids, truncating to [`MAX_LEN`] and padding with the pad id.
    pub fn encode_padded(&self, words: &[String]) -> Vec<u32> {
        let mut ids: Vec<u32> = words.iter().take(MAX_LEN).map(|w| self.id(w)).collect();
        ids.resize(MAX_LEN, Self::PAD);
        ids
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cue {
    C1,
    C2,
    R1,
    R2,
    G,
}

impl Cue {
    pub const ALL: [Cue; 5] = [Cue::C1, Cue::C2, Cue::R1, Cue::R2, Cue::G];

    pub fn name(&self) -> &'static str {
        match self {
            Cue::C1 => "c1",
            Cue::C2 => "c2",
            Cue::R1 => "r1",
            Cue::R2 => "r2",
            Cue::G => "g",
        }
    }
}

#[derive(Debug, Clone)]
pub struct LangParams {
    pub embed: ParamId,
    pub embed_dim: usize,
    pub hidden: usize,
    layer1_fwd: LstmParams,
    layer1_bwd: LstmParams,
    layer2_fwd: LstmParams,
    layer2_bwd: LstmParams,
    heads: Vec<(Cue, Linear)>,
}

impl LangParams {
    /// Registers the shared embedding matrix, the 2-layer BLSTM, and one
    /// scalar attention head per requested cue.
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        vocab_size: usize,
        embed_dim: usize,
        hidden: usize,
        cues: &[Cue],
        rng: &mut R,
    ) -> Result<Self> {
        let embed = store.register(
            &format!("{prefix}.embed.we"),
            xavier_matrix(vocab_size, embed_dim, rng),
            ParamKind::Weight,
            true,
        )?;
        let layer1_fwd =
            LstmParams::register(store, &format!("{prefix}.blstm.l1.fwd"), embed_dim, hidden, rng)?;
        let layer1_bwd =
            LstmParams::register(store, &format!("{prefix}.blstm.l1.bwd"), embed_dim, hidden, rng)?;
        let layer2_fwd = LstmParams::register(
            store,
            &format!("{prefix}.blstm.l2.fwd"),
            2 * hidden,
            hidden,
            rng,
        )?;
        let layer2_bwd = LstmParams::register(
            store,
            &format!("{prefix}.blstm.l2.bwd"),
            2 * hidden,
            hidden,
            rng,
        )?;
        let mut heads = Vec::with_capacity(cues.len());
        for cue in cues {
            let head = Linear::register(
                store,
                &format!("{prefix}.att.{}", cue.name()),
                1,
                4 * hidden,
                rng,
            )?;
            heads.push((*cue, head));
        }
        Ok(LangParams {
            embed,
            embed_dim,
            hidden,
            layer1_fwd,
            layer1_bwd,
            layer2_fwd,
            layer2_bwd,
            heads,
        })
    }

    fn head(&self, cue: Cue) -> &Linear {
        &self
            .heads
            .iter()
            .find(|(c, _)| *c == cue)
            .unwrap_or_else(|| panic!("cue {:?} not registered", cue))
            .1
    }

    pub fn hidden_dim(&self) -> usize {
        4 * self.hidden
    }
}

/// Looks up embedding rows for the non-pad prefix of a padded id sequence.
pub fn embed_tokens(g: &mut Graph, lp: &LangParams, token_ids: &[u32]) -> Result<Vec<Var>> {
    let len = token_ids
        .iter()
        .position(|&t| t == Vocabulary::PAD)
        .unwrap_or(token_ids.len());
    if len == 0 {
        return Err(Error::Invalid("expression with no non-pad tokens".into()));
    }
    let matrix = g.param(lp.embed);
    Ok(token_ids[..len]
        .iter()
        .map(|&t| g.row(matrix, t as usize))
        .collect())
}

/// Per-token 4H states: forward and backward runs of both layers,
/// concatenated.
pub fn blstm_encode(g: &mut Graph, lp: &LangParams, words: &[Var]) -> Result<Vec<Var>> {
    if words.is_empty() {
        return Err(Error::Invalid("encoder needs at least one token".into()));
    }
    let run =
        |g: &mut Graph, cell: &LstmParams, seq: &[Var], reverse: bool| -> Result<Vec<Var>> {
            let mut state = cell.zero_state(g);
            let mut out = vec![None; seq.len()];
            let order: Vec<usize> = if reverse {
                (0..seq.len()).rev().collect()
            } else {
                (0..seq.len()).collect()
            };
            for t in order {
                state = cell.step(g, seq[t], state)?;
                out[t] = Some(state.0);
            }
            Ok(out.into_iter().map(|v| v.unwrap()).collect())
        };

    let f1 = run(g, &lp.layer1_fwd, words, false)?;
    let b1 = run(g, &lp.layer1_bwd, words, true)?;
    let l1: Vec<Var> = f1
        .iter()
        .zip(b1.iter())
        .map(|(&f, &b)| g.concat(&[f, b]))
        .collect();
    let f2 = run(g, &lp.layer2_fwd, &l1, false)?;
    let b2 = run(g, &lp.layer2_bwd, &l1, true)?;
    Ok((0..words.len())
        .map(|t| g.concat(&[f1[t], b1[t], f2[t], b2[t]]))
        .collect())
}

/// One cue head: scalar score per token, softmax over the tokens, pooled
/// word-embedding feature. With `wo_alpha` the attention is forced uniform,
/// so the feature degrades to the mean embedding.
pub fn cue_attention(
    g: &mut Graph,
    lp: &LangParams,
    cue: Cue,
    hidden: &[Var],
    words: &[Var],
    wo_alpha: bool,
) -> Result<(Var, Var)> {
    if hidden.is_empty() {
        return Err(Error::Invalid("attention over an empty expression".into()));
    }
    let alpha = if wo_alpha {
        let n = hidden.len();
        g.input_vec(vec![1.0 / n as f64; n])
    } else {
        let head = lp.head(cue);
        let scores: Vec<Var> = hidden
            .iter()
            .map(|&h| head.apply(g, h))
            .collect::<Result<_>>()?;
        let stacked = g.concat(&scores);
        g.softmax(stacked, None)?
    };
    let y = g.lincomb(alpha, words);
    Ok((alpha, y))
}

/// All cue features for one expression.
pub struct Cues {
    pub len: usize,
    entries: Vec<(Cue, Var, Var)>,
}

impl Cues {
    pub fn y(&self, cue: Cue) -> Var {
        self.entries
            .iter()
            .find(|(c, _, _)| *c == cue)
            .unwrap_or_else(|| panic!("cue {:?} not built", cue))
            .2
    }

    pub fn alpha(&self, cue: Cue) -> Var {
        self.entries
            .iter()
            .find(|(c, _, _)| *c == cue)
            .unwrap_or_else(|| panic!("cue {:?} not built", cue))
            .1
    }

    pub fn cues(&self) -> impl Iterator<Item = Cue> + '_ {
        self.entries.iter().map(|(c, _, _)| *c)
    }
}

/// Runs embed → BLSTM → one attention head per registered cue.
pub fn build_cues(
    g: &mut Graph,
    lp: &LangParams,
    token_ids: &[u32],
    wo_alpha: bool,
) -> Result<(Cues, Vec<Var>)> {
    let words = embed_tokens(g, lp, token_ids)?;
    let hidden = blstm_encode(g, lp, &words)?;
    let mut entries = Vec::with_capacity(lp.heads.len());
    for (cue, _) in &lp.heads {
        let (alpha, y) = cue_attention(g, lp, *cue, &hidden, &words, wo_alpha)?;
        entries.push((*cue, alpha, y));
    }
    Ok((Cues { len: words.len(), entries }, words))
}

/// Overwrites embedding rows from a whitespace-separated text file of
/// `word v1 … vD` lines; words missing from the file keep their seeded
/// initialization.
pub fn load_pretrained_embeddings(
    store: &mut ParamStore,
    embed: ParamId,
    vocab: &Vocabulary,
    path: &Path,
) -> Result<usize> {
    let text = std::fs::read_to_string(path)?;
    let dim = store.get(embed).value.cols();
    let mut loaded = 0;
    let mut new_value = store.get(embed).value.clone();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = parts
            .next()
            .ok_or_else(|| Error::Parse(format!("line {}: empty", lineno + 1)))?;
        if !vocab.contains(word) {
            continue;
        }
        let values: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
            })
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(Error::Parse(format!(
                "line {}: {} values for embedding dim {dim}",
                lineno + 1,
                values.len()
            )));
        }
        let row = vocab.id(word) as usize;
        new_value.data_mut()[row * dim..(row + 1) * dim].copy_from_slice(&values);
        loaded += 1;
    }
    store.get_mut(embed).value = Tensor::new(new_value.shape().to_vec(), new_value.data().to_vec())?;
    Ok(loaded)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compute::gradcheck::grad_check;
    use crate::compute::rng::stream;

    fn toy_lang(vocab_size: usize) -> (ParamStore, LangParams) {
        let mut store = ParamStore::new();
        let mut rng = stream(5, "init", 0);
        let lp = LangParams::register(&mut store, "lang", vocab_size, 6, 4, &Cue::ALL, &mut rng)
            .unwrap();
        (store, lp)
    }

    fn pad(ids: &[u32]) -> Vec<u32> {
        let mut v = ids.to_vec();
        v.resize(MAX_LEN, Vocabulary::PAD);
        v
    }

    #[test]
    fn vocab_reserved_ids_distinct_and_unk_fallback() {
        let lists = [vec!["red".to_string(), "ball".to_string()]];
        let v = Vocabulary::from_corpus(lists.iter().map(|l| l.as_slice()), 1);
        assert_eq!(v.id("<pad>"), Vocabulary::PAD);
        assert_eq!(v.id("<unk>"), Vocabulary::UNK);
        assert_eq!(v.id("<s>"), Vocabulary::START);
        assert_eq!(v.id("</s>"), Vocabulary::STOP);
        assert_eq!(v.id("never-seen"), Vocabulary::UNK);
        assert!(v.id("red") > Vocabulary::STOP);
    }

    #[test]
    fn vocab_min_count_filters() {
        let lists = [
            vec!["a".to_string(), "a".to_string(), "b".to_string()],
            vec!["a".to_string()],
        ];
        let v = Vocabulary::from_corpus(lists.iter().map(|l| l.as_slice()), 3);
        assert!(v.contains("a"));
        assert!(!v.contains("b"));
    }

    #[test]
    fn identical_tokens_identical_rows() {
        let (store, lp) = toy_lang(10);
        let mut g = Graph::new(&store);
        let vars = embed_tokens(&mut g, &lp, &pad(&[5, 5, 6])).unwrap();
        assert_eq!(g.val(vars[0]), g.val(vars[1]));
        assert_ne!(g.val(vars[0]), g.val(vars[2]));
    }

    #[test]
    fn gradient_flows_only_into_looked_up_rows() {
        let (store, lp) = toy_lang(10);
        let mut g = Graph::new(&store);
        let vars = embed_tokens(&mut g, &lp, &pad(&[5, 6])).unwrap();
        let s = g.concat(&vars);
        let loss = g.sum(s);
        let grads = g.backward(loss).unwrap();
        let ge = grads.params.get(lp.embed).unwrap();
        let dim = lp.embed_dim;
        for row in 0..10 {
            let slice = &ge[row * dim..(row + 1) * dim];
            if row == 5 || row == 6 {
                assert!(slice.iter().any(|&v| v != 0.0));
            } else {
                assert!(slice.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn blstm_output_shape_for_all_lengths() {
        let (store, lp) = toy_lang(12);
        for t in 1..=MAX_LEN {
            let mut g = Graph::new(&store);
            let ids: Vec<u32> = (0..t as u32).map(|i| 4 + (i % 8)).collect();
            let words = embed_tokens(&mut g, &lp, &pad(&ids)).unwrap();
            let hidden = blstm_encode(&mut g, &lp, &words).unwrap();
            assert_eq!(hidden.len(), t);
            assert!(hidden.iter().all(|&h| g.len_of(h) == lp.hidden_dim()));
        }
    }

    #[test]
    fn zero_parameters_give_zero_states() {
        let (mut store, lp) = toy_lang(8);
        for (_, p) in store.iter_mut() {
            p.value.data_mut().fill(0.0);
        }
        let mut g = Graph::new(&store);
        let words = embed_tokens(&mut g, &lp, &pad(&[4, 5, 6])).unwrap();
        let hidden = blstm_encode(&mut g, &lp, &words).unwrap();
        for h in hidden {
            assert!(g.val(h).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn single_token_attention_is_one() {
        let (store, lp) = toy_lang(8);
        let mut g = Graph::new(&store);
        let (cues, words) = build_cues(&mut g, &lp, &pad(&[5]), false).unwrap();
        let alpha = g.val(cues.alpha(Cue::R1));
        assert_eq!(alpha, &[1.0]);
        assert_eq!(g.val(cues.y(Cue::R1)), g.val(words[0]));
    }

    #[test]
    fn identical_hidden_states_give_uniform_attention() {
        let (store, lp) = toy_lang(8);
        let mut g = Graph::new(&store);
        // Same token everywhere → identical embeddings; the BLSTM states
        // differ by position, so drive the head directly instead.
        let words = embed_tokens(&mut g, &lp, &pad(&[5, 5, 5])).unwrap();
        let h = g.input_vec(vec![0.3; lp.hidden_dim()]);
        let hidden = vec![h, h, h];
        let (alpha, y) = cue_attention(&mut g, &lp, Cue::C1, &hidden, &words, false).unwrap();
        for &a in g.val(alpha) {
            assert!((a - 1.0 / 3.0).abs() < 1e-12);
        }
        let mean: Vec<f64> = (0..lp.embed_dim)
            .map(|k| {
                words.iter().map(|&w| g.val(w)[k]).sum::<f64>() / 3.0
            })
            .collect();
        for (a, b) in g.val(y).iter().zip(mean.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn wo_alpha_forces_uniform_attention() {
        let (store, lp) = toy_lang(8);
        let mut g = Graph::new(&store);
        let (cues, _) = build_cues(&mut g, &lp, &pad(&[4, 5, 6, 7]), true).unwrap();
        for cue in Cue::ALL {
            for &a in g.val(cues.alpha(cue)) {
                assert!((a - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn five_alphas_sum_to_one_and_heads_differ() {
        let (store, lp) = toy_lang(10);
        let mut g = Graph::new(&store);
        let (cues, _) = build_cues(&mut g, &lp, &pad(&[4, 5, 6, 7]), false).unwrap();
        for cue in Cue::ALL {
            let a = g.val(cues.alpha(cue));
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(a.iter().all(|&v| v >= 0.0));
        }
        // Independent head parameters: c1 and g disagree on a generic input.
        let a1 = g.val(cues.alpha(Cue::C1)).to_vec();
        let a2 = g.val(cues.alpha(Cue::G)).to_vec();
        assert!(a1.iter().zip(&a2).any(|(p, q)| (p - q).abs() > 1e-12));
    }

    #[test]
    fn pooled_feature_stays_in_convex_hull() {
        let (store, lp) = toy_lang(10);
        let mut g = Graph::new(&store);
        let (cues, words) = build_cues(&mut g, &lp, &pad(&[4, 5, 6]), false).unwrap();
        let y = g.val(cues.y(Cue::C2));
        for k in 0..lp.embed_dim {
            let column: Vec<f64> = words.iter().map(|&w| g.val(w)[k]).collect();
            let lo = column.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(y[k] >= lo - 1e-12 && y[k] <= hi + 1e-12);
        }
    }

    #[test]
    fn encoder_gradcheck_on_four_tokens() {
        let (mut store, lp) = toy_lang(8);
        let ids = pad(&[4, 5, 6, 7]);
        let report = grad_check(&mut store, 1e-5, move |g| {
            let (cues, _) = build_cues(g, &lp, &ids, false)?;
            let mut total = g.scalar(0.0);
            for cue in Cue::ALL {
                let s = g.sum(cues.y(cue));
                total = g.add(total, s);
            }
            Ok(total)
        })
        .unwrap();
        assert!(report.max_rel_err() < 1e-4, "{}", report.max_rel_err());
    }

    #[test]
    fn pretrained_embedding_file_loads() {
        let (mut store, lp) = toy_lang(8);
        let lists = [vec!["red".to_string(), "ball".to_string()]];
        let vocab = Vocabulary::from_corpus(lists.iter().map(|l| l.as_slice()), 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vecs.txt");
        std::fs::write(&path, "red 1 2 3 4 5 6\nmissing 9 9 9 9 9 9\n").unwrap();
        let loaded = load_pretrained_embeddings(&mut store, lp.embed, &vocab, &path).unwrap();
        assert_eq!(loaded, 1);
        let row = vocab.id("red") as usize;
        let dim = lp.embed_dim;
        assert_eq!(
            &store.get(lp.embed).value.data()[row * dim..row * dim + 3],
            &[1.0, 2.0, 3.0]
        );
    }
}
