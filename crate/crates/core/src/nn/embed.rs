//! Token, 1D position and 2D layout embeddings.

use rand_chacha::ChaCha8Rng;

use super::layers::Mode;
use super::ops::Mat;
use super::params::{Grads, Init, ParamStore, TensorId};
use crate::model::BBox;

/// Bucket indices of a box: `[x0, x1, width, y0, y1, height]`.
pub type LayoutIndex = [usize; 6];

/// Normalize a box by the page extent and quantize every coordinate into
/// `buckets` levels. Coordinates outside the page are clamped; the flag
/// reports whether that happened.
pub fn quantize_bbox(bbox: &BBox, width: f64, height: f64, buckets: usize) -> (LayoutIndex, bool) {
    let top = (buckets - 1) as f64;
    let mut clamped = false;
    let mut norm = |v: f64, extent: f64| {
        let r = if extent > 0.0 { v / extent } else { f64::NAN };
        if !(0.0..=1.0).contains(&r) {
            clamped = true;
            if r.is_nan() {
                return 0.0;
            }
            return r.clamp(0.0, 1.0);
        }
        r
    };
    let x0 = norm(bbox.x0, width);
    let x1 = norm(bbox.x1, width);
    let y0 = norm(bbox.y0, height);
    let y1 = norm(bbox.y1, height);
    let (x0, x1) = if x1 < x0 { (x1, x0) } else { (x0, x1) };
    let (y0, y1) = if y1 < y0 { (y1, y0) } else { (y0, y1) };
    let q = |v: f64| (v * top).round() as usize;
    ([q(x0), q(x1), q(x1 - x0), q(y0), q(y1), q(y1 - y0)], clamped)
}

/// The four 2D tables: `p(b) = Ex(x0) + Ex(x1) + Ew(w) + Ey(y0) + Ey(y1) + Eh(h)`.
#[derive(Clone, Debug)]
pub struct LayoutEmbedding {
    pub ex: TensorId,
    pub ey: TensorId,
    pub ew: TensorId,
    pub eh: TensorId,
    pub buckets: usize,
    pub d: usize,
}

impl LayoutEmbedding {
    pub fn new(store: &mut ParamStore, name: &str, buckets: usize, d: usize, rng: &mut ChaCha8Rng) -> Self {
        let init = Init::Normal(0.1);
        LayoutEmbedding {
            ex: store.add(format!("{name}.x"), &[buckets, d], init, rng),
            ey: store.add(format!("{name}.y"), &[buckets, d], init, rng),
            ew: store.add(format!("{name}.w"), &[buckets, d], init, rng),
            eh: store.add(format!("{name}.h"), &[buckets, d], init, rng),
            buckets,
            d,
        }
    }

    fn tables(&self) -> [TensorId; 6] {
        [self.ex, self.ex, self.ew, self.ey, self.ey, self.eh]
    }

    /// Add `p(b)` for the given bucket indices into `out`.
    pub fn add_into(&self, p: &ParamStore, idx: &LayoutIndex, out: &mut [f64]) {
        for (table, &i) in self.tables().iter().zip(idx) {
            let row = &p.get(*table)[i * self.d..(i + 1) * self.d];
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
    }

    pub fn backward_row(&self, idx: &LayoutIndex, dout: &[f64], g: &mut Grads) {
        for (table, &i) in self.tables().iter().zip(idx) {
            let row = &mut g.get_mut(*table)[i * self.d..(i + 1) * self.d];
            for (a, v) in row.iter_mut().zip(dout) {
                *a += v;
            }
        }
    }

    /// `p(b)` for one box within a `width` x `height` page, plus the clamp flag.
    pub fn embed(&self, p: &ParamStore, bbox: &BBox, width: f64, height: f64) -> (Vec<f64>, bool) {
        let (idx, clamped) = quantize_bbox(bbox, width, height, self.buckets);
        let mut out = vec![0.0; self.d];
        self.add_into(p, &idx, &mut out);
        (out, clamped)
    }
}

/// Token ids plus learned absolute positions, optionally plus layout.
#[derive(Clone, Debug)]
pub struct TokenEmbedding {
    pub tokens: TensorId,
    pub positions: TensorId,
    pub layout: Option<LayoutEmbedding>,
    pub d: usize,
    pub max_len: usize,
}

pub struct EmbedCache {
    ids: Vec<usize>,
    positions: Vec<usize>,
    layout: Option<Vec<LayoutIndex>>,
    drop: Option<Vec<f64>>,
}

impl TokenEmbedding {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        vocab: usize,
        max_len: usize,
        layout: Option<LayoutEmbedding>,
        d: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        TokenEmbedding {
            tokens: store.add(format!("{name}.tokens"), &[vocab, d], Init::Normal(0.5), rng),
            positions: store.add(format!("{name}.positions"), &[max_len, d], Init::Normal(0.1), rng),
            layout,
            d,
            max_len,
        }
    }

    /// `positions` defaults to `0..ids.len()`.
    pub fn forward(
        &self,
        p: &ParamStore,
        ids: &[usize],
        positions: Option<&[usize]>,
        layout: Option<&[LayoutIndex]>,
        mode: &mut Mode,
    ) -> (Mat, EmbedCache) {
        let d = self.d;
        let positions: Vec<usize> = match positions {
            Some(p) => p.to_vec(),
            None => (0..ids.len()).collect(),
        };
        let mut x = Mat::zeros(ids.len(), d);
        let tok = p.get(self.tokens);
        let pos = p.get(self.positions);
        for (r, &id) in ids.iter().enumerate() {
            let row = x.row_mut(r);
            for c in 0..d {
                row[c] = tok[id * d + c] + pos[positions[r] * d + c];
            }
        }
        let layout = match (&self.layout, layout) {
            (Some(le), Some(idx)) => {
                for (r, ix) in idx.iter().enumerate() {
                    le.add_into(p, ix, x.row_mut(r));
                }
                Some(idx.to_vec())
            }
            _ => None,
        };
        let drop = mode.dropout_mask(x.data.len());
        if let Some(m) = &drop {
            for (v, s) in x.data.iter_mut().zip(m) {
                *v *= s;
            }
        }
        (
            x,
            EmbedCache {
                ids: ids.to_vec(),
                positions,
                layout,
                drop,
            },
        )
    }

    pub fn backward(&self, c: &EmbedCache, dx: &Mat, g: &mut Grads) {
        let d = self.d;
        let mut dx = dx.clone();
        if let Some(m) = &c.drop {
            for (v, s) in dx.data.iter_mut().zip(m) {
                *v *= s;
            }
        }
        {
            let gt = g.get_mut(self.tokens);
            for (r, &id) in c.ids.iter().enumerate() {
                for (a, v) in gt[id * d..(id + 1) * d].iter_mut().zip(dx.row(r)) {
                    *a += v;
                }
            }
        }
        {
            let gp = g.get_mut(self.positions);
            for (r, &pos) in c.positions.iter().enumerate() {
                for (a, v) in gp[pos * d..(pos + 1) * d].iter_mut().zip(dx.row(r)) {
                    *a += v;
                }
            }
        }
        if let (Some(le), Some(idx)) = (&self.layout, &c.layout) {
            for (r, ix) in idx.iter().enumerate() {
                le.backward_row(ix, dx.row(r), g);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn full_page_hits_extreme_buckets() {
        let (idx, clamped) = quantize_bbox(&BBox::new(0.0, 0.0, 612.0, 792.0), 612.0, 792.0, 128);
        assert_eq!(idx, [0, 127, 127, 0, 127, 127]);
        assert!(!clamped);
    }

    #[test]
    fn overflow_is_clamped_and_flagged() {
        let (idx, clamped) = quantize_bbox(&BBox::new(10.0, 10.0, 700.0, 20.0), 612.0, 792.0, 128);
        assert!(clamped);
        assert_eq!(idx[1], 127);
    }

    #[test]
    fn full_page_embedding_sums_six_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let le = LayoutEmbedding::new(&mut store, "layout", 8, 3, &mut rng);
        let (v, _) = le.embed(&store, &BBox::new(0.0, 0.0, 10.0, 20.0), 10.0, 20.0);
        let row = |t: TensorId, i: usize| store.get(t)[i * 3..i * 3 + 3].to_vec();
        for c in 0..3 {
            let want = row(le.ex, 0)[c] + row(le.ex, 7)[c] + row(le.ew, 7)[c] + row(le.ey, 0)[c] + row(le.ey, 7)[c] + row(le.eh, 7)[c];
            assert!((v[c] - want).abs() < 1e-15);
        }
        let (w, _) = le.embed(&store, &BBox::new(0.0, 0.0, 10.0, 20.0), 10.0, 20.0);
        assert_eq!(v, w);
        store.fill(0.0);
        assert_eq!(le.embed(&store, &BBox::new(1.0, 2.0, 3.0, 4.0), 10.0, 20.0).0, vec![0.0; 3]);
    }
}
