use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::embed::{EmbedCache, LayoutEmbedding, LayoutIndex, TokenEmbedding};
use super::layers::{EncoderStack, Mode, StackCache};
use super::ops::Mat;
use super::params::{Grads, ParamStore};
use crate::error::{Error, Result};

/// One input sequence for a [`TokenEncoder`].
#[derive(Clone, Copy, Debug)]
pub struct EncoderInput<'a> {
    pub ids: &'a [usize],
    /// Explicit position ids; `None` means `0..len`.
    pub positions: Option<&'a [usize]>,
    /// Per-token layout buckets; ignored by encoders without layout tables.
    pub layout: Option<&'a [LayoutIndex]>,
    /// `false` marks padding.
    pub mask: &'a [bool],
}

/// Embedding layer plus encoder stack.
#[derive(Clone, Debug)]
pub struct TokenEncoder {
    pub embed: TokenEmbedding,
    pub stack: EncoderStack,
    pub vocab_size: usize,
    pub max_len: usize,
}

pub struct EncoderCache {
    embed: EmbedCache,
    stack: StackCache,
}

impl TokenEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &ModelConfig,
        n_layers: usize,
        with_layout: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let layout = with_layout.then(|| LayoutEmbedding::new(store, &format!("{name}.layout"), cfg.coord_buckets, cfg.d, rng));
        let embed = TokenEmbedding::new(store, &format!("{name}.embed"), cfg.vocab_size, cfg.max_seq_len, layout, cfg.d, rng);
        let stack = EncoderStack::new(store, name, n_layers, cfg.d, cfg.n_heads, cfg.ff_dim(), rng);
        TokenEncoder {
            embed,
            stack,
            vocab_size: cfg.vocab_size,
            max_len: cfg.max_seq_len,
        }
    }

    pub fn check(&self, input: &EncoderInput) -> Result<()> {
        let len = input.ids.len();
        if len > self.max_len {
            return Err(Error::SequenceTooLong { len, max: self.max_len });
        }
        if input.mask.len() != len {
            return Err(Error::Input("mask length differs from sequence length".into()));
        }
        if let Some(&bad) = input.ids.iter().find(|&&id| id >= self.vocab_size) {
            return Err(Error::Input(format!("token id {bad} outside vocabulary of {}", self.vocab_size)));
        }
        if let Some(pos) = input.positions {
            if pos.len() != len || pos.iter().any(|&p| p >= self.max_len) {
                return Err(Error::Input("position ids malformed".into()));
            }
        }
        if let Some(l) = input.layout {
            if l.len() != len {
                return Err(Error::Input("layout length differs from sequence length".into()));
            }
        }
        Ok(())
    }

    /// Hidden states `[len x d]`.
    pub fn forward(&self, p: &ParamStore, input: &EncoderInput, mode: &mut Mode) -> Result<(Mat, EncoderCache)> {
        self.check(input)?;
        let (x, embed) = self.embed.forward(p, input.ids, input.positions, input.layout, mode);
        let (h, stack) = self.stack.forward(p, x, input.mask, mode);
        Ok((h, EncoderCache { embed, stack }))
    }

    pub fn backward(&self, p: &ParamStore, cache: &EncoderCache, dh: &Mat, g: &mut Grads) {
        let dx = self.stack.backward(p, &cache.stack, dh, g);
        self.embed.backward(&cache.embed, &dx, g);
    }
}

/// Run an encoder once over a sequence; returns hidden states `[len x d]`.
pub fn encoder_forward(
    params: &ParamStore,
    encoder: &TokenEncoder,
    ids: &[usize],
    layout: Option<&[LayoutIndex]>,
    mask: &[bool],
    mode: &mut Mode,
) -> Result<Mat> {
    let input = EncoderInput {
        ids,
        positions: None,
        layout,
        mask,
    };
    encoder.forward(params, &input, mode).map(|(h, _)| h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BBox;
    use crate::nn::embed::quantize_bbox;
    use rand::{Rng, SeedableRng};

    fn setup(layers: usize) -> (ParamStore, TokenEncoder) {
        let cfg = ModelConfig {
            vocab_size: 20,
            max_seq_len: 16,
            coord_buckets: 16,
            n_layers: layers,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let enc = TokenEncoder::new(&mut store, "enc", &cfg, layers, true, &mut rng);
        (store, enc)
    }

    fn layout_for(n: usize, seed: u64) -> Vec<LayoutIndex> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let x = rng.gen_range(0.0..80.0);
                let y = rng.gen_range(0.0..80.0);
                quantize_bbox(&BBox::new(x, y, x + 10.0, y + 5.0), 100.0, 100.0, 16).0
            })
            .collect()
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let (mut store, enc) = setup(1);
        store.fill(0.0);
        let h = encoder_forward(&store, &enc, &[3], None, &[true], &mut Mode::Eval).unwrap();
        assert_eq!(h.data, vec![0.0; 32]);
    }

    #[test]
    fn padding_does_not_change_real_positions() {
        let (store, enc) = setup(2);
        let ids = [4, 9, 2, 7, 11];
        let lay = layout_for(8, 1);
        let short = encoder_forward(&store, &enc, &ids, Some(&lay[..5]), &[true; 5], &mut Mode::Eval).unwrap();
        let padded_ids = [4, 9, 2, 7, 11, 0, 0, 0];
        let mut mask = [true; 8];
        mask[5..].iter_mut().for_each(|m| *m = false);
        let long = encoder_forward(&store, &enc, &padded_ids, Some(&lay), &mask, &mut Mode::Eval).unwrap();
        for i in 0..5 {
            for c in 0..32 {
                assert!((short.row(i)[c] - long.row(i)[c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn permuting_tokens_with_positions_permutes_outputs() {
        let (store, enc) = setup(2);
        let ids = vec![4, 9, 2, 7];
        let lay = layout_for(4, 2);
        let pos = vec![0, 1, 2, 3];
        let run = |ids: &[usize], pos: &[usize], lay: &[LayoutIndex]| {
            let input = EncoderInput { ids, positions: Some(pos), layout: Some(lay), mask: &[true; 4] };
            enc.forward(&store, &input, &mut Mode::Eval).unwrap().0
        };
        let a = run(&ids, &pos, &lay);
        let (mut ids2, mut pos2, mut lay2) = (ids.clone(), pos.clone(), lay.clone());
        ids2.swap(1, 3);
        pos2.swap(1, 3);
        lay2.swap(1, 3);
        let b = run(&ids2, &pos2, &lay2);
        for (i, j) in [(0, 0), (1, 3), (2, 2), (3, 1)] {
            for c in 0..32 {
                assert!((a.row(i)[c] - b.row(j)[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eval_is_bit_identical_and_train_is_seeded() {
        let (store, enc) = setup(1);
        let ids = [1, 2, 3];
        let a = encoder_forward(&store, &enc, &ids, None, &[true; 3], &mut Mode::Eval).unwrap();
        let b = encoder_forward(&store, &enc, &ids, None, &[true; 3], &mut Mode::Eval).unwrap();
        assert_eq!(a, b);
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(1);
        let t1 = encoder_forward(&store, &enc, &ids, None, &[true; 3], &mut Mode::Train { rng: &mut r1, dropout: 0.5 }).unwrap();
        let t2 = encoder_forward(&store, &enc, &ids, None, &[true; 3], &mut Mode::Train { rng: &mut r2, dropout: 0.5 }).unwrap();
        assert_eq!(t1, t2);
        assert_ne!(t1, a);
    }

    #[test]
    fn overlong_input_is_rejected() {
        let (store, enc) = setup(1);
        let ids = vec![1; 17];
        let err = encoder_forward(&store, &enc, &ids, None, &[true; 17], &mut Mode::Eval).unwrap_err();
        assert!(matches!(err, Error::SequenceTooLong { len: 17, max: 16 }));
        assert!(encoder_forward(&store, &enc, &[25], None, &[true], &mut Mode::Eval).is_err());
    }
}
