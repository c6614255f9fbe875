use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::attention::attend_row;
use super::config::DecodeConfig;
use super::grammar::ResponseGrammar;
use super::model::MotionLm;
use super::prompt::Prompt;
use super::serialize::{parse_ids, ParseMode, ParseOutcome};
use crate::error::{Error, Result};
use crate::numerics::{gelu, Graph};
use crate::skeleton::Task;

/// Keys and values of every layer for the positions fed so far.
#[derive(Debug, Clone)]
pub struct KvCache {
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    len: usize,
}

impl KvCache {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Output of one generation call.
#[derive(Debug, Clone)]
pub struct Generation {
    /// Generated ids, ending with the end marker unless the context ran out.
    pub ids: Vec<u32>,
    pub finished: bool,
}

impl MotionLm {
    pub fn new_cache(&self) -> KvCache {
        let layers = self.config().layers;
        KvCache {
            keys: vec![Vec::new(); layers],
            values: vec![Vec::new(); layers],
            len: 0,
        }
    }

    /// Runs `n` new embedding rows (without positions) through the stack and
    /// returns their final hidden states.
    fn extend(&self, cache: &mut KvCache, mut x: Vec<f64>) -> Result<Vec<f64>> {
        let c = self.config();
        let d = c.model_dim;
        let n = x.len() / d;
        if cache.len + n > c.context_length {
            return Err(Error::ContextOverflow {
                needed: cache.len + n,
                limit: c.context_length,
            });
        }
        let store = self.store();
        let pos = store.get(self.pos_emb).data();
        for (i, row) in x.chunks_mut(d).enumerate() {
            let p = &pos[(cache.len + i) * d..(cache.len + i + 1) * d];
            row.iter_mut().zip(p).for_each(|(a, b)| *a += b);
        }
        let heads = c.heads;
        let dh = d / heads;
        for (l, b) in self.blocks.iter().enumerate() {
            let h = b.ln1.apply(store, &x);
            let qkv = b.qkv.apply(store, &h, n);
            for row in qkv.chunks(3 * d) {
                cache.keys[l].extend_from_slice(&row[d..2 * d]);
                cache.values[l].extend_from_slice(&row[2 * d..]);
            }
            let mut attn = vec![0.0; n * d];
            for i in 0..n {
                let visible = cache.len + i + 1;
                attend_row(
                    &qkv[i * 3 * d..i * 3 * d + d],
                    &cache.keys[l][..visible * d],
                    &cache.values[l][..visible * d],
                    visible,
                    heads,
                    dh,
                    &mut attn[i * d..(i + 1) * d],
                );
            }
            let o = b.wo.apply(store, &attn, n);
            x.iter_mut().zip(&o).for_each(|(a, b)| *a += b);
            let h = b.ln2.apply(store, &x);
            let mut h = b.ff1.apply(store, &h, n);
            h.iter_mut().for_each(|v| *v = gelu(*v));
            let h = b.ff2.apply(store, &h, n);
            x.iter_mut().zip(&h).for_each(|(a, b)| *a += b);
        }
        cache.len += n;
        Ok(self.ln_f.apply(store, &x))
    }

    /// Feeds tokens and returns the next-token logits after the last one.
    pub fn feed(&self, cache: &mut KvCache, ids: &[u32]) -> Result<Vec<f64>> {
        let d = self.config().model_dim;
        let v = self.vocab().len();
        if ids.is_empty() {
            return Err(Error::invalid("nothing to feed"));
        }
        let table = self.store().get(self.tok_emb).data();
        let mut x = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id as usize >= v {
                return Err(Error::invalid(format!("token id {id} outside the vocabulary")));
            }
            x.extend_from_slice(&table[id as usize * d..(id as usize + 1) * d]);
        }
        let h = self.extend(cache, x)?;
        Ok(self.head.apply(self.store(), &h[h.len() - d..], 1))
    }

    /// Feeds the visual prefix of an estimation prompt.
    pub fn feed_visual(&self, cache: &mut KvCache, visual: &super::prompt::VisualPrompt) -> Result<()> {
        let mut g = Graph::new();
        let p = self.visual_prefix(&mut g, visual)?;
        self.extend(cache, g.value(p).data().to_vec())?;
        Ok(())
    }

    /// Positions a prompt occupies before the response.
    pub fn prompt_positions(&self, prompt: &Prompt) -> usize {
        let pg = self.config().pool_grid;
        prompt.ids.len() + prompt.visual.as_ref().map_or(0, |v| v.windows() * pg * pg)
    }

    /// Generates a response. Constrained decoding follows the response
    /// grammar and always yields a parseable answer of the expected length;
    /// otherwise decoding stops at the end marker or the context limit.
    pub fn generate(&self, prompt: &Prompt, cfg: &DecodeConfig) -> Result<Generation> {
        cfg.validate()?;
        let limit = self.config().context_length;
        let used = self.prompt_positions(prompt);
        let mut grammar = if cfg.constrained {
            let gr = ResponseGrammar::new(prompt.task, prompt.windows, self.vocab(), self.templates(), &prompt.layout)?;
            // The last token is emitted but never fed back.
            if used + gr.len() - 1 > limit {
                return Err(Error::ContextOverflow {
                    needed: used + gr.len() - 1,
                    limit,
                });
            }
            Some(gr)
        } else {
            None
        };
        if used >= limit {
            return Err(Error::ContextOverflow { needed: used + 1, limit });
        }
        let mut cache = self.new_cache();
        if let Some(v) = &prompt.visual {
            self.feed_visual(&mut cache, v)?;
        }
        let mut logits = self.feed(&mut cache, &prompt.ids)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let max_new = cfg.max_new_tokens.unwrap_or(usize::MAX);
        let eos = self.vocab().eos();
        let mut out = Vec::new();
        loop {
            let allowed = match &grammar {
                Some(g) => g.allowed(),
                None => 0..self.vocab().len() as u32,
            };
            let id = if allowed.len() == 1 {
                allowed.start
            } else {
                choose(&logits, allowed, cfg, &mut rng)
            };
            if let Some(g) = grammar.as_mut() {
                g.advance(id)?;
            }
            out.push(id);
            let done = match &grammar {
                Some(g) => g.is_complete(),
                None => id == eos,
            };
            if done {
                return Ok(Generation { ids: out, finished: true });
            }
            if cache.len() >= limit || out.len() >= max_new {
                return Ok(Generation { ids: out, finished: false });
            }
            logits = self.feed(&mut cache, &[id])?;
        }
    }

    /// Generates and parses a response into a token grid.
    pub fn generate_grid(&self, prompt: &Prompt, cfg: &DecodeConfig, mode: ParseMode) -> Result<(Generation, ParseOutcome)> {
        let gen = self.generate(prompt, cfg)?;
        let mut body: &[u32] = &gen.ids;
        // An estimation answer opens with the frame-count sentence.
        if prompt.task == Task::Pe {
            let preamble = self.vocab().encode(&format!("{}\n", self.templates().pe_preamble(prompt.windows)));
            body = body.strip_prefix(preamble.as_slice()).unwrap_or(body);
        }
        let body: Vec<u32> = body.iter().copied().filter(|&i| i != self.vocab().eos()).collect();
        let parsed = parse_ids(&body, self.vocab(), &prompt.layout, prompt.frame_rate_hz, mode)?;
        Ok((gen, parsed))
    }
}

/// Picks a token from `logits` restricted to `allowed`: greedy unless a
/// temperature is set, optionally limited to the `top_k` best.
fn choose(logits: &[f64], allowed: std::ops::Range<u32>, cfg: &DecodeConfig, rng: &mut ChaCha8Rng) -> u32 {
    let Some(t) = cfg.temperature else {
        let mut best = allowed.start;
        for id in allowed {
            if logits[id as usize] > logits[best as usize] {
                best = id;
            }
        }
        return best;
    };
    let mut cand: Vec<(u32, f64)> = allowed.map(|id| (id, logits[id as usize] / t)).collect();
    if let Some(k) = cfg.top_k {
        cand.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        cand.truncate(k);
    }
    let max = cand.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = cand.iter().map(|c| (c.1 - max).exp()).sum();
    let mut u = rng.random::<f64>() * total;
    for &(id, l) in &cand {
        u -= (l - max).exp();
        if u <= 0.0 {
            return id;
        }
    }
    cand.last().expect("non-empty candidate set").0
}
