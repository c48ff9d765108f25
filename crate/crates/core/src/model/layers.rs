//! The interaction and aggregation layers and the two baseline heads, written
//! against graph variables so they can be used with parameters or constants.

use crate::error::{Error, Result};
use crate::tensor::{Graph, Real, Var};

/// Interaction matrix `I = T · Hᵀ` (`c x n`): entry `(s, t)` is the dot product
/// of class `s` and word `t`.
pub fn interact<S: Real>(g: &mut Graph<'_, S>, words: Var, classes: Var) -> Result<Var> {
    let (hs, ts) = (g.shape(words).to_vec(), g.shape(classes).to_vec());
    if hs.len() != 2 || ts.len() != 2 || hs[1] != ts[1] {
        return Err(Error::shape("interact", &hs, &ts));
    }
    let words_t = g.transpose(words)?;
    g.matmul(classes, words_t)
}

/// Graph handles for the shared two-layer aggregation MLP.
#[derive(Clone, Copy, Debug)]
pub struct AggregationVars {
    /// `n x h`
    pub w1: Var,
    /// `1 x h`
    pub b: Var,
    /// `h x 1`
    pub w2: Var,
}

/// Maps each row of `I` to one logit with the same MLP:
/// `o_s = ReLU(I_s · W1 + b) · W2`. Returns a `1 x c` row.
pub fn aggregate<S: Real>(g: &mut Graph<'_, S>, interactions: Var, mlp: AggregationVars) -> Result<Var> {
    let c = g.shape(interactions)[0];
    let pre = g.matmul(interactions, mlp.w1)?;
    let pre = g.add(pre, mlp.b)?;
    let hidden = g.relu(pre);
    let logits = g.matmul(hidden, mlp.w2)?;
    g.reshape(logits, &[1, c])
}

/// Mean-pooled embeddings followed by a linear layer:
/// `p_s = mean_t(H_t) · W[:, s] + b_s`.
pub fn fasttext_forward<S: Real>(g: &mut Graph<'_, S>, ids: &[usize], embedding: Var, w: Var, b: Var) -> Result<Var> {
    let h = g.embedding_lookup(embedding, ids)?;
    let f = g.mean_rows(h)?;
    let z = g.matmul(f, w)?;
    g.add(z, b)
}

/// EXAM with the embedding encoder and the MLP replaced by an average over
/// the interaction columns: `p_s = mean_t(I[s, t]) + b_s`. With
/// `classes = Wᵀ` this equals [`fasttext_forward`].
pub fn exam_average_aggregation_forward<S: Real>(
    g: &mut Graph<'_, S>,
    ids: &[usize],
    embedding: Var,
    classes: Var,
    b: Var,
) -> Result<Var> {
    let h = g.embedding_lookup(embedding, ids)?;
    let i = interact(g, h, classes)?;
    let pooled = g.mean_axis(i, 1)?;
    let c = g.shape(pooled)[0];
    let row = g.reshape(pooled, &[1, c])?;
    g.add(row, b)
}

/// Encoder-only baseline head: element-wise max over positions, then a
/// linear layer.
pub fn encoder_only_forward<S: Real>(g: &mut Graph<'_, S>, words: Var, w: Var, b: Var) -> Result<Var> {
    let pooled = g.max_axis(words, 0)?;
    let z = g.matmul(pooled, w)?;
    g.add(z, b)
}
