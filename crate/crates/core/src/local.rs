//! Local interaction: collaborative and modality-specific propagation over
//! the normalized interaction graph, and their fusion.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use log::warn;

use crate::autodiff::{SparseMatrix, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{user_modality_init, InteractionGraph};

/// An item content channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Modality {
    Visual,
    Textual,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Visual, Modality::Textual];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Visual => "visual",
            Modality::Textual => "textual",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which modalities feed the model. `None` reduces the model to
/// collaborative filtering on ID embeddings alone.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum ModalitySet {
    #[default]
    Both,
    TextOnly,
    ImageOnly,
    None,
}

impl ModalitySet {
    pub fn modalities(self) -> &'static [Modality] {
        match self {
            ModalitySet::Both => &Modality::ALL,
            ModalitySet::TextOnly => &[Modality::Textual],
            ModalitySet::ImageOnly => &[Modality::Visual],
            ModalitySet::None => &[],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModalitySet::Both => "both",
            ModalitySet::TextOnly => "text",
            ModalitySet::ImageOnly => "image",
            ModalitySet::None => "none",
        }
    }
}

impl FromStr for ModalitySet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(ModalitySet::Both),
            "text" => Ok(ModalitySet::TextOnly),
            "image" => Ok(ModalitySet::ImageOnly),
            "none" => Ok(ModalitySet::None),
            other => Err(Error::Config(format!(
                "unknown modality set `{other}` (expected both, text, image or none)"
            ))),
        }
    }
}

/// Sizes of the local branch.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalConfig {
    /// ID embedding dimension `d`.
    pub embedding_dim: usize,
    /// Collaborative propagation depth `L`.
    pub layers: usize,
    /// Modality propagation layer `k` taken as the modality embedding.
    pub modality_layer: usize,
    pub modalities: ModalitySet,
}

impl Default for LocalConfig {
    fn default() -> Self {
        LocalConfig {
            embedding_dim: 64,
            layers: 2,
            modality_layer: 1,
            modalities: ModalitySet::Both,
        }
    }
}

impl LocalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(Error::Config("model.embedding_dim must be at least 1".into()));
        }
        if self.layers == 0 {
            return Err(Error::Config("model.layers must be at least 1".into()));
        }
        if self.modality_layer == 0 || self.modality_layer > self.layers {
            return Err(Error::Config(format!(
                "model.modality_layer must be in 1..={}, got {}",
                self.layers, self.modality_layer
            )));
        }
        Ok(())
    }
}

/// Applies `adj` repeatedly, returning `[x, adj·x, …, adjᵗ·x]`.
pub fn propagate(tape: &mut Tape, adj: &Arc<SparseMatrix>, x: Var, steps: usize) -> Result<Vec<Var>> {
    let mut layers = Vec::with_capacity(steps + 1);
    layers.push(x);
    for _ in 0..steps {
        let next = tape.sparse_matmul(adj, *layers.last().unwrap())?;
        layers.push(next);
    }
    Ok(layers)
}

/// Collaborative propagation of the ID embeddings: layers `E⁰ … Eᴸ`.
pub fn propagate_id(tape: &mut Tape, graph: &InteractionGraph, ids: Var, layers: usize) -> Result<Vec<Var>> {
    if layers == 0 {
        return Err(Error::InvalidArgument("propagation needs at least one layer".into()));
    }
    propagate(tape, graph.norm_adjacency(), ids, layers)
}

/// Arithmetic mean of same-shape layer outputs.
pub fn combine_layers(tape: &mut Tape, layers: &[Var]) -> Result<Var> {
    let (first, rest) = layers
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("combine_layers of no layers".into()))?;
    let mut total = *first;
    for &layer in rest {
        let (a, b) = (tape.shape(total), tape.shape(layer));
        if a != b {
            return Err(Error::shape("combine_layers", a, b));
        }
        total = tape.add(total, layer)?;
    }
    tape.scale(total, 1.0 / layers.len() as f64)
}

/// Maps raw item features (`q × d_m`) into the embedding space with `W_m`
/// (`d_m × d`). No bias and no nonlinearity.
pub fn project_modality(tape: &mut Tape, features: Var, projection: Var) -> Result<Var> {
    let (a, b) = (tape.shape(features), tape.shape(projection));
    if a.1 != b.0 {
        return Err(Error::shape("project_modality", a, b));
    }
    tape.matmul(features, projection)
}

/// Stacks neighbor-mean user rows above the projected item rows.
pub fn modality_input(tape: &mut Tape, graph: &InteractionGraph, projected_items: Var) -> Result<Var> {
    let users = user_modality_init(tape, graph, projected_items)?;
    tape.concat_rows(&[users, projected_items])
}

/// Propagates the stacked modality matrix `k` times. Returns layer `k`
/// together with every layer `0..=k`.
pub fn propagate_modality(
    tape: &mut Tape,
    graph: &InteractionGraph,
    stacked: Var,
    k: usize,
) -> Result<(Var, Vec<Var>)> {
    if k == 0 {
        return Err(Error::InvalidArgument("modality layer k must be at least 1".into()));
    }
    let (rows, _) = tape.shape(stacked);
    if rows != graph.n_nodes() {
        return Err(Error::shape(
            "propagate_modality",
            graph.norm_adjacency().shape(),
            tape.shape(stacked),
        ));
    }
    let layers = propagate(tape, graph.norm_adjacency(), stacked, k)?;
    Ok((layers[k], layers))
}

/// `E_loc = E_loc_id + Form(Σ_m E_loc_m)` with `Form` the row-wise L2
/// normalization.
pub fn fuse_local(tape: &mut Tape, collaborative: Var, modality: &[Var]) -> Result<Var> {
    let Some((&first, rest)) = modality.split_first() else {
        warn!("fuse_local: no modality embeddings, using collaborative embeddings only");
        return Ok(collaborative);
    };
    let mut total = first;
    for &m in rest {
        total = tape.add(total, m)?;
    }
    let (a, b) = (tape.shape(collaborative), tape.shape(total));
    if a != b {
        return Err(Error::shape("fuse_local", a, b));
    }
    let normalized = tape.row_l2_normalize(total)?;
    tape.add(collaborative, normalized)
}
