//! The three networks (classifier, actor, critic) and their weights.
//!
//! Each network is an input linear layer, a stack of recurrent layers and a
//! final linear head. With [`Topology::Shared`] the input layer and the
//! recurrent stack are one trunk used by all three heads; with
//! [`Topology::Separate`] every network owns its trunk.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{DenseLayer, LstmStack, NodeId, ParameterStore, RecurrentState, Tape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Topology {
    Shared,
    Separate,
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Topology::Shared => "shared",
            Topology::Separate => "separate",
        })
    }
}

impl FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared" => Ok(Topology::Shared),
            "separate" => Ok(Topology::Separate),
            _ => Err(Error::invalid(format!("unknown topology {s:?} (shared|separate)"))),
        }
    }
}

/// Actor output: a categorical over `k` skip choices, or a log-normal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ActionSpace {
    Continuous,
    Discrete(usize),
}

impl ActionSpace {
    pub fn actor_outputs(self) -> usize {
        match self {
            ActionSpace::Continuous => 2,
            ActionSpace::Discrete(k) => k,
        }
    }
}

impl fmt::Display for ActionSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionSpace::Continuous => f.write_str("continuous"),
            ActionSpace::Discrete(k) => write!(f, "discrete:{k}"),
        }
    }
}

impl FromStr for ActionSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "continuous" {
            return Ok(ActionSpace::Continuous);
        }
        if s == "discrete" {
            return Ok(ActionSpace::Discrete(20));
        }
        if let Some(k) = s.strip_prefix("discrete:") {
            let k: usize = k
                .parse()
                .map_err(|_| Error::invalid(format!("bad action count in {s:?}")))?;
            if k < 1 {
                return Err(Error::invalid("discrete action space needs k >= 1"));
            }
            return Ok(ActionSpace::Discrete(k));
        }
        Err(Error::invalid(format!(
            "unknown action space {s:?} (continuous|discrete:k)"
        )))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub topology: Topology,
    pub action_space: ActionSpace,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 || self.layers == 0 {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        if self.action_space.actor_outputs() == 0 {
            return Err(Error::invalid("actor needs at least one output"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Classifier,
    Actor,
    Critic,
}

/// Which heads a forward step should evaluate. The classifier always runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeadSet {
    pub actor: bool,
    pub critic: bool,
}

impl HeadSet {
    pub const CLASSIFIER: HeadSet = HeadSet {
        actor: false,
        critic: false,
    };
    pub const DEPLOYMENT: HeadSet = HeadSet {
        actor: true,
        critic: false,
    };
    pub const TRAINING: HeadSet = HeadSet {
        actor: true,
        critic: true,
    };
}

#[derive(Clone, Debug, PartialEq)]
struct Trunk {
    input: DenseLayer,
    stack: LstmStack,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    store: ParameterStore,
    trunks: Vec<Trunk>,
    classifier: DenseLayer,
    actor: DenseLayer,
    critic: DenseLayer,
}

/// Numeric outputs of one forward step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub logit: f64,
    pub actor_raw: Option<Vec<f64>>,
    /// `(v_classification, v_sparsity)`.
    pub critic: Option<[f64; 2]>,
}

/// Recurrent state of every trunk for one flow.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub trunks: Vec<RecurrentState>,
}

/// Recurrent state held as tape nodes.
#[derive(Clone, Debug)]
pub struct TapeState {
    h: Vec<Vec<NodeId>>,
    c: Vec<Vec<NodeId>>,
}

#[derive(Clone, Copy, Debug)]
pub struct TapeOutput {
    pub logit: NodeId,
    pub actor_raw: Option<NodeId>,
    pub critic: Option<NodeId>,
}

impl Model {
    /// Fresh weights, uniform in `±1/√fan_in`, from a fixed seed.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let trunk_names: &[&str] = match config.topology {
            Topology::Shared => &["trunk"],
            Topology::Separate => &["classifier.trunk", "actor.trunk", "critic.trunk"],
        };
        let mut trunks = Vec::new();
        for name in trunk_names {
            let input = DenseLayer::new(
                &mut store,
                &format!("{name}.input"),
                config.input_dim,
                config.hidden,
                &mut rng,
            )?;
            let stack = LstmStack::new(
                &mut store,
                name,
                config.hidden,
                config.hidden,
                config.layers,
                &mut rng,
            )?;
            trunks.push(Trunk { input, stack });
        }
        let classifier = DenseLayer::new(&mut store, "classifier.head", config.hidden, 1, &mut rng)?;
        let actor = DenseLayer::new(
            &mut store,
            "actor.head",
            config.hidden,
            config.action_space.actor_outputs(),
            &mut rng,
        )?;
        let critic = DenseLayer::new(&mut store, "critic.head", config.hidden, 2, &mut rng)?;
        Ok(Model {
            config,
            store,
            trunks,
            classifier,
            actor,
            critic,
        })
    }

    /// Rebuild the layout for `config` and take weights from `store`, which
    /// must have exactly the same names and shapes in the same order.
    pub fn from_store(config: ModelConfig, store: ParameterStore) -> Result<Self> {
        let mut model = Model::new(config, 0)?;
        if model.store.len() != store.len() {
            return Err(Error::TopologyMismatch(format!(
                "expected {} parameter arrays, found {}",
                model.store.len(),
                store.len()
            )));
        }
        for (want, got) in model.store.iter().zip(store.iter()) {
            if want.name != got.name || want.rows != got.rows || want.cols != got.cols {
                return Err(Error::TopologyMismatch(format!(
                    "parameter {:?} ({}x{}) does not match expected {:?} ({}x{})",
                    got.name, got.rows, got.cols, want.name, want.rows, want.cols
                )));
            }
        }
        model.store = store;
        model.store.zero_grad();
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    fn trunk_index(&self, role: Role) -> usize {
        match self.config.topology {
            Topology::Shared => 0,
            Topology::Separate => match role {
                Role::Classifier => 0,
                Role::Actor => 1,
                Role::Critic => 2,
            },
        }
    }

    pub fn initial_state(&self) -> ModelState {
        ModelState {
            trunks: self.trunks.iter().map(|t| t.stack.zero_state()).collect(),
        }
    }

    fn needed_trunks(&self, heads: HeadSet) -> Vec<usize> {
        let mut out = vec![self.trunk_index(Role::Classifier)];
        for (on, role) in [(heads.actor, Role::Actor), (heads.critic, Role::Critic)] {
            let t = self.trunk_index(role);
            if on && !out.contains(&t) {
                out.push(t);
            }
        }
        out
    }

    /// Advance the trunks the requested heads depend on and evaluate them.
    pub fn step(&self, x: &[f64], state: &mut ModelState, heads: HeadSet) -> Result<StepOutput> {
        if x.len() != self.config.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.input_dim,
                got: x.len(),
            });
        }
        let hidden = self.config.hidden;
        let mut tops: Vec<Option<Vec<f64>>> = vec![None; self.trunks.len()];
        for t in self.needed_trunks(heads) {
            let trunk = &self.trunks[t];
            let mut projected = vec![0.0; hidden];
            trunk.input.forward_into(&self.store, x, &mut projected);
            tops[t] = Some(
                trunk
                    .stack
                    .step_in_place(&self.store, &projected, &mut state.trunks[t])?,
            );
        }
        let top = |role: Role| tops[self.trunk_index(role)].as_deref().expect("trunk evaluated");
        let mut logit = [0.0];
        self.classifier
            .forward_into(&self.store, top(Role::Classifier), &mut logit);
        let actor_raw = heads.actor.then(|| {
            let mut out = vec![0.0; self.actor.output];
            self.actor.forward_into(&self.store, top(Role::Actor), &mut out);
            out
        });
        let critic = heads.critic.then(|| {
            let mut out = [0.0; 2];
            self.critic.forward_into(&self.store, top(Role::Critic), &mut out);
            out
        });
        Ok(StepOutput {
            logit: logit[0],
            actor_raw,
            critic,
        })
    }

    pub fn tape_state(&self, tape: &mut Tape<'_>) -> TapeState {
        let mut h = Vec::new();
        let mut c = Vec::new();
        for _ in &self.trunks {
            h.push(
                (0..self.config.layers)
                    .map(|_| tape.input(vec![0.0; self.config.hidden]))
                    .collect(),
            );
            c.push(
                (0..self.config.layers)
                    .map(|_| tape.input(vec![0.0; self.config.hidden]))
                    .collect(),
            );
        }
        TapeState { h, c }
    }

    /// Recorded counterpart of [`Model::step`].
    pub fn step_tape(
        &self,
        tape: &mut Tape<'_>,
        x: &[f64],
        state: &mut TapeState,
        heads: HeadSet,
    ) -> Result<TapeOutput> {
        if x.len() != self.config.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.input_dim,
                got: x.len(),
            });
        }
        let xn = tape.input(x.to_vec());
        let mut tops: Vec<Option<NodeId>> = vec![None; self.trunks.len()];
        for t in self.needed_trunks(heads) {
            let trunk = &self.trunks[t];
            let mut cur = tape.dense(&trunk.input, xn)?;
            for (l, layer) in trunk.stack.layers.iter().enumerate() {
                let (h, c) = tape.lstm(layer, cur, state.h[t][l], state.c[t][l])?;
                state.h[t][l] = h;
                state.c[t][l] = c;
                cur = h;
            }
            tops[t] = Some(cur);
        }
        let top = |role: Role| tops[self.trunk_index(role)].expect("trunk evaluated");
        let logit = tape.dense(&self.classifier, top(Role::Classifier))?;
        let actor_raw = if heads.actor {
            Some(tape.dense(&self.actor, top(Role::Actor))?)
        } else {
            None
        };
        let critic = if heads.critic {
            Some(tape.dense(&self.critic, top(Role::Critic))?)
        } else {
            None
        };
        Ok(TapeOutput {
            logit,
            actor_raw,
            critic,
        })
    }
}
