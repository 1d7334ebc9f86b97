//! Full forward pass: parameters, modality features and the wiring of the
//! local and global branches into final embeddings and loss terms.

use std::collections::BTreeMap;

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::global::{self, GlobalConfig};
use crate::graph::InteractionGraph;
use crate::local::{self, LocalConfig, Modality};
use crate::losses::{self, LayerCoefficients, LossComponents, LossWeights, TripleBatch};
use crate::trainer::xavier_init_with;

/// Architecture settings.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelConfig {
    pub local: LocalConfig,
    pub global: GlobalConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.local.validate()?;
        self.global.validate()
    }

    pub fn modalities(&self) -> &'static [Modality] {
        self.local.modalities.modalities()
    }
}

/// Precomputed item features per modality, each `q × d_m`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModalityFeatureBank {
    features: BTreeMap<Modality, Matrix>,
}

impl ModalityFeatureBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, modality: Modality, features: Matrix) -> Result<()> {
        if let Some(other) = self.features.values().next() {
            if other.rows() != features.rows() {
                return Err(Error::InvalidArgument(format!(
                    "{modality} features have {} rows, other modalities have {}",
                    features.rows(),
                    other.rows()
                )));
            }
        }
        self.features.insert(modality, features);
        Ok(())
    }

    pub fn get(&self, modality: Modality) -> Option<&Matrix> {
        self.features.get(&modality)
    }

    pub fn dim(&self, modality: Modality) -> Option<usize> {
        self.get(modality).map(Matrix::cols)
    }

    pub fn modalities(&self) -> impl Iterator<Item = Modality> + '_ {
        self.features.keys().copied()
    }
}

/// Names of one modality's tensors inside a [`ParameterSet`].
pub fn modality_param_names(m: Modality) -> [String; 6] {
    let n = m.name();
    [
        format!("{n}.projection"),
        format!("{n}.expand_weight"),
        format!("{n}.expand_bias"),
        format!("{n}.gate_weight"),
        format!("{n}.gate_bias"),
        format!("{n}.hyperedges"),
    ]
}

pub const ID_EMBEDDING: &str = "id_embedding";

/// All trainable tensors, keyed by name.
///
/// * `id_embedding`: `(p+q) × d`, users first.
/// * per modality `m`: `m.projection` (`d_m × d`), `m.expand_weight`
///   (`4d × d_m`), `m.expand_bias` (`1 × 4d`), `m.gate_weight` (`d × 4d`),
///   `m.gate_bias` (`1 × d`), `m.hyperedges` (`B × d`).
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet {
    tensors: BTreeMap<String, Matrix>,
}

impl ParameterSet {
    /// Xavier-uniform weights and zero biases, seeded.
    pub fn init(
        n_users: usize,
        n_items: usize,
        features: &ModalityFeatureBank,
        config: &ModelConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.local.embedding_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        tensors.insert(
            ID_EMBEDDING.to_string(),
            xavier_init_with(n_users + n_items, d, &mut rng),
        );
        for &m in config.modalities() {
            let dm = features
                .dim(m)
                .ok_or_else(|| Error::InvalidArgument(format!("no {m} features loaded")))?;
            let [proj, ew, eb, gw, gb, hyper] = modality_param_names(m);
            tensors.insert(proj, xavier_init_with(dm, d, &mut rng));
            tensors.insert(ew, xavier_init_with(4 * d, dm, &mut rng));
            tensors.insert(eb, Matrix::zeros(1, 4 * d));
            tensors.insert(gw, xavier_init_with(d, 4 * d, &mut rng));
            tensors.insert(gb, Matrix::zeros(1, d));
            tensors.insert(hyper, xavier_init_with(config.global.hyperedges, d, &mut rng));
        }
        Ok(ParameterSet { tensors })
    }

    pub fn from_tensors(tensors: BTreeMap<String, Matrix>) -> Self {
        ParameterSet { tensors }
    }

    pub fn tensors(&self) -> &BTreeMap<String, Matrix> {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut BTreeMap<String, Matrix> {
        &mut self.tensors
    }

    pub fn into_tensors(self) -> BTreeMap<String, Matrix> {
        self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.tensors.get(name)
    }

    /// Registers every tensor as a tape leaf.
    pub fn register(&self, tape: &mut Tape) -> Result<BTreeMap<String, Var>> {
        self.tensors
            .iter()
            .map(|(name, m)| Ok((name.clone(), tape.leaf(name.clone(), m.clone())?)))
            .collect()
    }
}

/// One modality's tensors on a tape.
#[derive(Clone, Copy, Debug)]
pub struct ModalityVars {
    pub modality: Modality,
    pub projection: Var,
    pub expand_weight: Var,
    pub expand_bias: Var,
    pub gate_weight: Var,
    pub gate_bias: Var,
    pub hyperedges: Var,
}

/// Typed view over registered parameters.
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub id_embedding: Var,
    pub modalities: Vec<ModalityVars>,
}

impl ParamVars {
    /// Picks the tensors for `modalities` out of a name → var map.
    pub fn from_map(vars: &BTreeMap<String, Var>, modalities: &[Modality]) -> Result<Self> {
        let get = |name: &str| {
            vars.get(name)
                .copied()
                .ok_or_else(|| Error::InvalidArgument(format!("missing parameter `{name}`")))
        };
        let modalities = modalities
            .iter()
            .map(|&m| {
                let [proj, ew, eb, gw, gb, hyper] = modality_param_names(m);
                Ok(ModalityVars {
                    modality: m,
                    projection: get(&proj)?,
                    expand_weight: get(&ew)?,
                    expand_bias: get(&eb)?,
                    gate_weight: get(&gw)?,
                    gate_bias: get(&gb)?,
                    hyperedges: get(&hyper)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(ParamVars {
            id_embedding: get(ID_EMBEDDING)?,
            modalities,
        })
    }

    pub fn all(&self) -> Vec<Var> {
        let mut out = vec![self.id_embedding];
        for m in &self.modalities {
            out.extend([
                m.projection,
                m.expand_weight,
                m.expand_bias,
                m.gate_weight,
                m.gate_bias,
                m.hyperedges,
            ]);
        }
        out
    }
}

/// Intermediate results of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    /// Final embeddings `E*`, `(p+q) × d`.
    pub embeddings: Var,
    /// Collaborative layers `E⁰ … Eᴸ`.
    pub id_layers: Vec<Var>,
    /// Modality propagation layers `0..=k`.
    pub modality_layers: Vec<(Modality, Vec<Var>)>,
    /// Stacked global embeddings per modality.
    pub global: Vec<(Modality, Var)>,
}

/// Runs the model. Passing `rng` selects training mode (dropout on).
pub fn forward(
    tape: &mut Tape,
    graph: &InteractionGraph,
    features: &ModalityFeatureBank,
    vars: &ParamVars,
    config: &ModelConfig,
    mut rng: Option<&mut dyn RngCore>,
) -> Result<ForwardPass> {
    let id_layers = local::propagate_id(tape, graph, vars.id_embedding, config.local.layers)?;
    let collaborative = local::combine_layers(tape, &id_layers)?;
    let items_id = tape.slice_rows(vars.id_embedding, graph.n_users(), graph.n_items())?;

    let mut modality_layers = Vec::new();
    let mut local_modal = Vec::new();
    let mut global = Vec::new();
    for mv in &vars.modalities {
        let raw = features
            .get(mv.modality)
            .ok_or_else(|| Error::InvalidArgument(format!("no {} features loaded", mv.modality)))?;
        if raw.rows() != graph.n_items() {
            return Err(Error::InvalidArgument(format!(
                "{} features have {} rows for {} items",
                mv.modality,
                raw.rows(),
                graph.n_items()
            )));
        }
        let raw = tape.constant(raw.clone());

        let projected = local::project_modality(tape, raw, mv.projection)?;
        let stacked = local::modality_input(tape, graph, projected)?;
        let (top, layers) =
            local::propagate_modality(tape, graph, stacked, config.local.modality_layer)?;
        local_modal.push(top);
        modality_layers.push((mv.modality, layers));

        let expanded = global::expand_features(tape, raw, mv.expand_weight, mv.expand_bias)?;
        let filtered = global::gate_filter(tape, items_id, expanded, mv.gate_weight, mv.gate_bias)?;
        let item_aff = global::item_hyperedges(tape, filtered, mv.hyperedges)?;
        let user_aff = global::user_hyperedges(tape, graph, item_aff)?;
        let (users, items) = global::hypergraph_propagate(
            tape,
            user_aff,
            item_aff,
            items_id,
            config.global.depth,
            config.global.dropout,
            rng.as_mut().map(|r| &mut **r as &mut dyn RngCore),
        )?;
        global.push((mv.modality, global::fuse_global(tape, users, items)?));
    }

    let local_emb = local::fuse_local(tape, collaborative, &local_modal)?;
    let global_vars: Vec<Var> = global.iter().map(|&(_, g)| g).collect();
    let embeddings = global::fuse_final(tape, local_emb, &global_vars, config.global.alpha)?;
    Ok(ForwardPass {
        embeddings,
        id_layers,
        modality_layers,
        global,
    })
}

/// Builds every loss term for `batch` on top of a forward pass.
///
/// The contrastive terms need both a visual and a textual branch; with fewer
/// modalities they are zero.
#[allow(clippy::too_many_arguments)]
pub fn loss_components(
    tape: &mut Tape,
    graph: &InteractionGraph,
    pass: &ForwardPass,
    vars: &ParamVars,
    batch: &TripleBatch,
    weights: &LossWeights,
    config: &ModelConfig,
    coefficients: Option<&LayerCoefficients>,
) -> Result<LossComponents> {
    let p = graph.n_users();
    let bpr = losses::bpr_loss(tape, pass.embeddings, batch, p, weights.lambda, &vars.all())?;

    let find = |m: Modality| pass.global.iter().find(|(k, _)| *k == m).map(|&(_, v)| v);
    let (contrastive_users, contrastive_items) =
        match (find(Modality::Visual), find(Modality::Textual)) {
            (Some(v), Some(t)) => {
                let tau = config.global.temperature;
                let q = graph.n_items();
                let (vu, tu) = (tape.slice_rows(v, 0, p)?, tape.slice_rows(t, 0, p)?);
                let (vi, ti) = (tape.slice_rows(v, p, q)?, tape.slice_rows(t, p, q)?);
                (
                    global::contrastive_loss(tape, vu, tu, tau)?,
                    global::contrastive_loss(tape, vi, ti, tau)?,
                )
            }
            _ => {
                let zero = tape.constant(Matrix::scalar(0.0));
                (zero, zero)
            }
        };

    let (users, items) = losses::split_blocks(tape, &pass.id_layers, p)?;
    let (ddr, ddr_mu) = losses::ddr_loss_with(tape, &users, &items, coefficients.map(|c| &c.ddr))?;
    let per_modality = pass
        .modality_layers
        .iter()
        .map(|(_, layers)| losses::split_blocks(tape, layers, p))
        .collect::<Result<Vec<_>>>()?;
    let (ddr_mm, ddr_mm_mu) =
        losses::ddr_mm_loss_with(tape, &per_modality, coefficients.map(|c| c.ddr_mm.as_slice()))?;

    Ok(LossComponents {
        bpr,
        contrastive_users,
        contrastive_items,
        ddr,
        ddr_mm,
        coefficients: LayerCoefficients {
            ddr: ddr_mu,
            ddr_mm: ddr_mm_mu,
        },
    })
}

/// Forward pass, loss terms and their weighted total in one call. Passing
/// `coefficients` fixes the DDR layer weights instead of deriving them.
#[allow(clippy::too_many_arguments)]
pub fn objective(
    tape: &mut Tape,
    graph: &InteractionGraph,
    features: &ModalityFeatureBank,
    vars: &ParamVars,
    batch: &TripleBatch,
    weights: &LossWeights,
    config: &ModelConfig,
    rng: Option<&mut dyn RngCore>,
    coefficients: Option<&LayerCoefficients>,
) -> Result<(Var, LossComponents)> {
    let pass = forward(tape, graph, features, vars, config, rng)?;
    let parts = loss_components(tape, graph, &pass, vars, batch, weights, config, coefficients)?;
    let total = losses::total_loss(tape, &parts, weights)?;
    Ok((total, parts))
}

/// Evaluation-mode final embeddings `E*` as a plain matrix.
pub fn embed(
    params: &ParameterSet,
    graph: &InteractionGraph,
    features: &ModalityFeatureBank,
    config: &ModelConfig,
) -> Result<Matrix> {
    let mut tape = Tape::new();
    let map = params.register(&mut tape)?;
    let vars = ParamVars::from_map(&map, config.modalities())?;
    let pass = forward(&mut tape, graph, features, &vars, config, None)?;
    Ok(tape.value(pass.embeddings).clone())
}
