//! Word-level encoders. Each maps a fixed-length id sequence to a matrix `H`
//! with one row per position.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, ParamSet, Real, Tensor, Var};

/// Bound of the uniform initialisation for embedding and context tables.
pub const EMBEDDING_INIT_BOUND: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Region,
    Gru,
    EmbedOnly,
}

/// `Standard` is the usual GRU cell. `AsPrinted` drops the reset gate and
/// computes the candidate state with the reset-gate matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GruVariant {
    #[default]
    Standard,
    AsPrinted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub update: ParamId,
    pub reset: ParamId,
    /// Absent for [`GruVariant::AsPrinted`].
    pub candidate: Option<ParamId>,
    pub input_dim: usize,
    pub hidden: usize,
}

impl GruParams {
    pub fn init<S: Real, R: Rng + ?Sized>(
        params: &mut ParamSet<S>,
        input_dim: usize,
        hidden: usize,
        variant: GruVariant,
        rng: &mut R,
    ) -> Self {
        let shape = [hidden + input_dim, hidden];
        let update = params.add("gru_update", Tensor::glorot(&shape, rng));
        let reset = params.add("gru_reset", Tensor::glorot(&shape, rng));
        let candidate = match variant {
            GruVariant::Standard => Some(params.add("gru_candidate", Tensor::glorot(&shape, rng))),
            GruVariant::AsPrinted => None,
        };
        Self {
            update,
            reset,
            candidate,
            input_dim,
            hidden,
        }
    }
}

/// Word embedding table `E` (`v x k`) plus per-word context weights `U`
/// (`v x (2s+1) x k`).
#[derive(Clone, Debug, PartialEq)]
pub struct RegionParams {
    pub embedding: ParamId,
    pub context: ParamId,
    pub radius: usize,
}

impl RegionParams {
    pub fn init<S: Real, R: Rng + ?Sized>(
        params: &mut ParamSet<S>,
        vocab_size: usize,
        dim: usize,
        radius: usize,
        rng: &mut R,
    ) -> Self {
        let embedding = params.add(
            "embedding",
            Tensor::uniform(&[vocab_size, dim], EMBEDDING_INIT_BOUND, rng),
        );
        let context = params.add(
            "region_context",
            Tensor::uniform(&[vocab_size, 2 * radius + 1, dim], EMBEDDING_INIT_BOUND, rng),
        );
        Self {
            embedding,
            context,
            radius,
        }
    }
}

/// H = E[ids].
pub fn embed_only<S: Real>(g: &mut Graph<'_, S>, ids: &[usize], embedding: ParamId) -> Result<Var> {
    let table = g.param(embedding);
    g.embedding_lookup(table, ids)
}

/// Region embedding: row `i` is the element-wise max, over the window
/// `[i - s, i + s]` clipped to the sequence, of `K[w_i, t] * e[w_{i+t}]`.
pub fn region_encode<S: Real>(g: &mut Graph<'_, S>, ids: &[usize], params: &RegionParams) -> Result<Var> {
    let table = g.param(params.embedding);
    let context = g.param(params.context);
    let embeds = g.embedding_lookup(table, ids)?;
    let weights = g.embedding_lookup(context, ids)?;
    g.region_max(weights, embeds, params.radius)
}

/// Runs the GRU over `ids` from a zero initial state; row `i` of the result is
/// the hidden state after step `i`.
pub fn gru_encode<S: Real>(g: &mut Graph<'_, S>, ids: &[usize], cell: &GruParams, embedding: ParamId) -> Result<Var> {
    let table = g.param(embedding);
    let embeds = g.embedding_lookup(table, ids)?;
    if g.shape(embeds)[1] != cell.input_dim {
        return Err(Error::shape(
            "gru_encode",
            g.shape(embeds),
            &[ids.len(), cell.input_dim],
        ));
    }
    let m_update = g.param(cell.update);
    let m_reset = g.param(cell.reset);
    let m_candidate = cell.candidate.map(|c| g.param(c));

    let mut h = g.constant(Tensor::zeros(&[1, cell.hidden]));
    let mut states = Vec::with_capacity(ids.len());
    for i in 0..ids.len() {
        let e = g.row(embeds, i)?;
        let x = g.concat_cols(h, e)?;
        let z_pre = g.matmul(x, m_update)?;
        let z = g.sigmoid(z_pre);
        let cand_pre = match m_candidate {
            Some(m_candidate) => {
                let r_pre = g.matmul(x, m_reset)?;
                let r = g.sigmoid(r_pre);
                let gated = g.mul(r, h)?;
                let x_gated = g.concat_cols(gated, e)?;
                g.matmul(x_gated, m_candidate)?
            }
            None => g.matmul(x, m_reset)?,
        };
        let cand = g.tanh(cand_pre);
        let keep = g.one_minus(z)?;
        let old = g.mul(keep, h)?;
        let new = g.mul(z, cand)?;
        h = g.add(old, new)?;
        states.push(h);
    }
    g.stack_rows(&states)
}

/// Encoder parameters bound to a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub enum Encoder {
    Region(RegionParams),
    Gru { embedding: ParamId, cell: GruParams },
    EmbedOnly { embedding: ParamId },
}

impl Encoder {
    #[allow(clippy::too_many_arguments)]
    pub fn init<S: Real, R: Rng + ?Sized>(
        kind: EncoderKind,
        params: &mut ParamSet<S>,
        vocab_size: usize,
        embed_dim: usize,
        radius: usize,
        gru_hidden: usize,
        variant: GruVariant,
        rng: &mut R,
    ) -> Self {
        match kind {
            EncoderKind::Region => Encoder::Region(RegionParams::init(params, vocab_size, embed_dim, radius, rng)),
            EncoderKind::Gru => {
                let embedding = params.add(
                    "embedding",
                    Tensor::uniform(&[vocab_size, embed_dim], EMBEDDING_INIT_BOUND, rng),
                );
                let cell = GruParams::init(params, embed_dim, gru_hidden, variant, rng);
                Encoder::Gru { embedding, cell }
            }
            EncoderKind::EmbedOnly => Encoder::EmbedOnly {
                embedding: params.add(
                    "embedding",
                    Tensor::uniform(&[vocab_size, embed_dim], EMBEDDING_INIT_BOUND, rng),
                ),
            },
        }
    }

    pub fn kind(&self) -> EncoderKind {
        match self {
            Encoder::Region(_) => EncoderKind::Region,
            Encoder::Gru { .. } => EncoderKind::Gru,
            Encoder::EmbedOnly { .. } => EncoderKind::EmbedOnly,
        }
    }

    pub fn embedding(&self) -> ParamId {
        match self {
            Encoder::Region(p) => p.embedding,
            Encoder::Gru { embedding, .. } | Encoder::EmbedOnly { embedding } => *embedding,
        }
    }

    pub fn encode<S: Real>(&self, g: &mut Graph<'_, S>, ids: &[usize]) -> Result<Var> {
        match self {
            Encoder::Region(p) => region_encode(g, ids, p),
            Encoder::Gru { embedding, cell } => gru_encode(g, ids, cell, *embedding),
            Encoder::EmbedOnly { embedding } => embed_only(g, ids, *embedding),
        }
    }
}
